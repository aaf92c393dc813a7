//! Brute-force reference model of the mappings cache and a random workload
//! driver that checks the real cache against it after every operation.
#![allow(dead_code)]

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use r2o_core::cache::{CacheConfig, MappingEntry, MappingsCache};
use r2o_core::{ContentLocator, MediaClass};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Row {
    pub pseudo: String,
    pub offsite: String,
    pub hits: u64,
    pub last: Option<u64>,
}

/// Linear scans over plain vectors; no indexes to get wrong.
#[derive(Debug, Default)]
pub struct ModelCache {
    n: usize,
    m: usize,
    clock: u64,
    frequent: Vec<Row>,
    recent: Vec<Row>,
}

impl ModelCache {
    pub fn new(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            ..Default::default()
        }
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    pub fn created(&mut self, mut row: Row) {
        let now = self.tick();
        if row.last.is_none() {
            row.last = Some(now);
        }
        self.frequent.retain(|r| r.pseudo != row.pseudo);
        self.frequent.push(row);
        while self.frequent.len() > self.n {
            let mut victim = 0;
            for (i, r) in self.frequent.iter().enumerate() {
                let v = &self.frequent[victim];
                if (r.hits, r.last, &r.pseudo) < (v.hits, v.last, &v.pseudo) {
                    victim = i;
                }
            }
            self.frequent.remove(victim);
        }
    }

    fn put_recent(&mut self, mut row: Row, hits: u64, now: u64) {
        row.hits = hits;
        row.last = Some(now);
        self.recent.retain(|r| r.pseudo != row.pseudo);
        self.recent.push(row);
        while self.recent.len() > self.m {
            let mut victim = 0;
            for (i, r) in self.recent.iter().enumerate() {
                if r.last < self.recent[victim].last {
                    victim = i;
                }
            }
            self.recent.remove(victim);
        }
    }

    pub fn resolved(&mut self, row: Row) {
        let now = self.tick();
        let previous = self.recent.iter().find(|r| r.pseudo == row.pseudo).map(|r| r.hits);
        let hits = previous.unwrap_or(row.hits) + 1;
        self.put_recent(row, hits, now);
    }

    pub fn imported(&mut self, row: Row) {
        let now = self.tick();
        let hits = self.recent.iter().find(|r| r.pseudo == row.pseudo).map_or(0, |r| r.hits);
        self.put_recent(row, hits, now);
    }

    pub fn lookup(&mut self, pseudo: &str) -> Option<String> {
        let in_f = self.frequent.iter().any(|r| r.pseudo == pseudo);
        let in_r = self.recent.iter().any(|r| r.pseudo == pseudo);
        if !in_f && !in_r {
            return None;
        }
        let now = self.tick();
        let mut found = None;
        for r in self.frequent.iter_mut().filter(|r| r.pseudo == pseudo) {
            r.hits += 1;
            r.last = Some(now);
            found = Some(r.offsite.clone());
        }
        for r in self.recent.iter_mut().filter(|r| r.pseudo == pseudo) {
            r.hits += 1;
            r.last = Some(now);
            found.get_or_insert(r.offsite.clone());
        }
        found
    }

    pub fn frequent(&self) -> Vec<Row> {
        let mut v = self.frequent.clone();
        v.sort();
        v
    }

    pub fn recent(&self) -> Vec<Row> {
        let mut v = self.recent.clone();
        v.sort();
        v
    }
}

fn rows(entries: Vec<MappingEntry>) -> Vec<Row> {
    let mut v: Vec<Row> = entries
        .into_iter()
        .map(|e| Row {
            pseudo: e.pseudo_locator.to_string(),
            offsite: e.offsite_locator.to_string(),
            hits: e.hit_count,
            last: e.last_used,
        })
        .collect();
    v.sort();
    v
}

fn pseudo(k: u32) -> String {
    format!("http://fp.example/fp/photos/{k}.png")
}

fn offsite(k: u32, version: u32) -> String {
    format!("http://offsite.example/v1/objects/{k:08x}{version:08x}")
}

fn entry(row: &Row) -> MappingEntry {
    MappingEntry::new(
        ContentLocator::parse(&row.pseudo).unwrap(),
        ContentLocator::parse(&row.offsite).unwrap(),
        MediaClass::Image,
    )
    .unwrap()
    .with_usage(row.hits, row.last)
}

/// Runs `ops` random operations with capacities drawn from `0..=max_cap`.
/// Returns a description of the first divergence, if any.
pub fn run_workload(seed: u64, ops: usize, max_cap: usize) -> Result<(), String> {
    let mut rng = StdRng::seed_from_u64(seed);
    let n = rng.gen_range(0..=max_cap);
    let m = rng.gen_range(0..=max_cap);
    let real = MappingsCache::new(CacheConfig {
        n_frequent: n,
        m_recent: m,
    });
    let mut model = ModelCache::new(n, m);
    let keys = (max_cap as u32 * 2).max(3);
    for step in 0..ops {
        let k = rng.gen_range(0..keys);
        let row = Row {
            pseudo: pseudo(k),
            offsite: offsite(k, rng.gen_range(0..3)),
            hits: 0,
            last: None,
        };
        let op = rng.gen_range(0..100);
        let what;
        if op < 25 {
            let hits = rng.gen_range(0..6);
            let last = if hits > 0 { Some(rng.gen_range(0..=model.clock)) } else { None };
            let row = Row { hits, last, ..row };
            what = format!("created {row:?}");
            real.record_created(entry(&row));
            model.created(row);
        } else if op < 50 {
            what = format!("resolved {row:?}");
            real.record_resolved(entry(&row));
            model.resolved(row);
        } else if op < 90 {
            what = format!("lookup {}", row.pseudo);
            let got = real.lookup(&ContentLocator::parse(&row.pseudo).unwrap()).map(|l| l.to_string());
            let want = model.lookup(&row.pseudo);
            if got != want {
                return Err(format!("seed {seed} step {step} {what}: got {got:?}, want {want:?}"));
            }
        } else {
            what = format!("import {row:?}");
            let blob = format!("r2o-map/1\n{}\t{}\timage\n", row.pseudo, row.offsite);
            let report = real.import_mappings(blob.as_bytes()).unwrap();
            if report.merged != 1 {
                return Err(format!("seed {seed} step {step}: import merged {}", report.merged));
            }
            model.imported(row);
        }
        let (f, r) = (rows(real.frequent_entries()), rows(real.recent_entries()));
        if f != model.frequent() || r != model.recent() {
            return Err(format!(
                "seed {seed} step {step} after {what} (N={n}, M={m}):\n real F={f:?}\nmodel F={:?}\n real R={r:?}\nmodel R={:?}",
                model.frequent(),
                model.recent()
            ));
        }
        if f.len() > n || r.len() > m {
            return Err(format!("seed {seed} step {step}: capacity exceeded"));
        }
    }
    Ok(())
}
