//! The indirection mappings cache: schema locator → off-site locator.
//!
//! Two segments with independent policies:
//! - *frequent* holds the N mappings this user created, evicting the lowest
//!   hit count (ties: least recent `last_used`, then smallest pseudo locator);
//! - *recent* holds the M mappings most recently resolved, evicting LRU.
//!
//! Timestamps come from a logical clock that ticks once per stamping
//! operation. Content bytes are never stored here.

use std::collections::{BTreeMap, HashMap};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::locator::{ContentLocator, MediaClass};

/// Header line of the mapping exchange format.
pub const MAP_HEADER: &str = "r2o-map/1";

/// Header line of the full-state snapshot format.
pub const STATE_HEADER: &str = "r2o-cache/1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CacheError {
    #[error("pseudo and off-site locators must differ")]
    SameLocator,
    #[error("unsupported mapping format header {0:?}")]
    UnsupportedVersion(String),
    #[error("malformed cache state at line {0}")]
    MalformedState(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingEntry {
    pub pseudo_locator: ContentLocator,
    pub offsite_locator: ContentLocator,
    pub media_class: MediaClass,
    pub hit_count: u64,
    pub last_used: Option<u64>,
}

impl MappingEntry {
    pub fn new(
        pseudo_locator: ContentLocator,
        offsite_locator: ContentLocator,
        media_class: MediaClass,
    ) -> Result<Self, CacheError> {
        if pseudo_locator == offsite_locator {
            return Err(CacheError::SameLocator);
        }
        Ok(Self {
            pseudo_locator,
            offsite_locator,
            media_class,
            hit_count: 0,
            last_used: None,
        })
    }

    /// Presets usage state, e.g. when replaying history.
    pub fn with_usage(mut self, hit_count: u64, last_used: Option<u64>) -> Self {
        self.hit_count = hit_count;
        self.last_used = last_used.or(if hit_count > 0 { Some(0) } else { None });
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CacheConfig {
    pub n_frequent: usize,
    pub m_recent: usize,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            n_frequent: 256,
            m_recent: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Selection {
    All,
    Frequent,
    Recent,
    ByPrefix(String),
}

impl std::str::FromStr for Selection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(Selection::All),
            "frequent" => Ok(Selection::Frequent),
            "recent" => Ok(Selection::Recent),
            _ => s
                .strip_prefix("prefix:")
                .map(|p| Selection::ByPrefix(p.to_owned()))
                .ok_or_else(|| format!("unknown selection {s:?} (all|frequent|recent|prefix:<p>)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ImportReport {
    pub merged: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheStats {
    pub frequent: usize,
    pub recent: usize,
    pub clock: u64,
}

#[derive(Debug, Default)]
struct Segments {
    clock: u64,
    frequent: HashMap<ContentLocator, MappingEntry>,
    recent: HashMap<ContentLocator, MappingEntry>,
    /// last_used → key, for LRU order of `recent`.
    recency: BTreeMap<u64, ContentLocator>,
}

impl Segments {
    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    fn touch_recent(&mut self, key: &ContentLocator, now: u64) {
        if let Some(e) = self.recent.get_mut(key) {
            if let Some(old) = e.last_used.replace(now) {
                self.recency.remove(&old);
            }
            self.recency.insert(now, key.clone());
        }
    }

    fn insert_recent(&mut self, mut entry: MappingEntry, now: u64, m: usize) {
        let key = entry.pseudo_locator.clone();
        if let Some(old) = self.recent.remove(&key).and_then(|e| e.last_used) {
            self.recency.remove(&old);
        }
        entry.last_used = Some(now);
        self.recency.insert(now, key.clone());
        self.recent.insert(key, entry);
        while self.recent.len() > m {
            let (_, victim) = self.recency.pop_first().expect("recency index tracks recent");
            self.recent.remove(&victim);
        }
    }

    fn evict_frequent(&mut self, n: usize) {
        while self.frequent.len() > n {
            let victim = self
                .frequent
                .values()
                .min_by(|a, b| {
                    a.hit_count
                        .cmp(&b.hit_count)
                        .then(a.last_used.cmp(&b.last_used))
                        .then(a.pseudo_locator.cmp(&b.pseudo_locator))
                })
                .map(|e| e.pseudo_locator.clone())
                .expect("non-empty segment");
            self.frequent.remove(&victim);
        }
    }
}

/// Thread-safe mappings cache; every operation is atomic.
#[derive(Debug)]
pub struct MappingsCache {
    config: CacheConfig,
    inner: Mutex<Segments>,
}

impl MappingsCache {
    pub fn new(config: CacheConfig) -> Self {
        Self {
            config,
            inner: Mutex::new(Segments::default()),
        }
    }

    pub fn config(&self) -> CacheConfig {
        self.config
    }

    /// A mapping created by this user's own upload.
    pub fn record_created(&self, mut entry: MappingEntry) {
        let mut s = self.inner.lock();
        if entry.last_used.is_none() {
            entry.last_used = Some(s.tick());
        } else {
            s.tick();
        }
        s.frequent.insert(entry.pseudo_locator.clone(), entry);
        s.evict_frequent(self.config.n_frequent);
    }

    /// A mapping learned by rendering someone's schema; counts as one use.
    pub fn record_resolved(&self, entry: MappingEntry) {
        let mut s = self.inner.lock();
        let now = s.tick();
        let hits = match s.recent.get(&entry.pseudo_locator) {
            Some(existing) => existing.hit_count + 1,
            None => entry.hit_count + 1,
        };
        let entry = MappingEntry {
            hit_count: hits,
            ..entry
        };
        s.insert_recent(entry, now, self.config.m_recent);
    }

    /// Looks up both segments; a hit bumps every copy's count and recency.
    pub fn lookup(&self, pseudo_locator: &ContentLocator) -> Option<ContentLocator> {
        let mut s = self.inner.lock();
        if !s.frequent.contains_key(pseudo_locator) && !s.recent.contains_key(pseudo_locator) {
            return None;
        }
        let now = s.tick();
        let mut found = None;
        if let Some(e) = s.frequent.get_mut(pseudo_locator) {
            e.hit_count += 1;
            e.last_used = Some(now);
            found = Some(e.offsite_locator.clone());
        }
        if let Some(e) = s.recent.get_mut(pseudo_locator) {
            e.hit_count += 1;
            found.get_or_insert_with(|| e.offsite_locator.clone());
        }
        s.touch_recent(pseudo_locator, now);
        found
    }

    pub fn frequent_entries(&self) -> Vec<MappingEntry> {
        let s = self.inner.lock();
        let mut v: Vec<_> = s.frequent.values().cloned().collect();
        v.sort_by(|a, b| a.pseudo_locator.cmp(&b.pseudo_locator));
        v
    }

    pub fn recent_entries(&self) -> Vec<MappingEntry> {
        let s = self.inner.lock();
        let mut v: Vec<_> = s.recent.values().cloned().collect();
        v.sort_by(|a, b| a.pseudo_locator.cmp(&b.pseudo_locator));
        v
    }

    pub fn stats(&self) -> CacheStats {
        let s = self.inner.lock();
        CacheStats {
            frequent: s.frequent.len(),
            recent: s.recent.len(),
            clock: s.clock,
        }
    }

    pub fn clear(&self) {
        let mut s = self.inner.lock();
        s.frequent.clear();
        s.recent.clear();
        s.recency.clear();
    }

    /// Serializes the selected mappings in `r2o-map/1` form, sorted by pseudo locator.
    pub fn export_mappings(&self, selection: &Selection) -> Vec<u8> {
        let s = self.inner.lock();
        let mut rows: BTreeMap<&ContentLocator, (&ContentLocator, MediaClass)> = BTreeMap::new();
        let include_frequent = !matches!(selection, Selection::Recent);
        let include_recent = !matches!(selection, Selection::Frequent);
        let prefix = match selection {
            Selection::ByPrefix(p) => Some(p.as_str()),
            _ => None,
        };
        let segments = [
            (include_frequent, &s.frequent),
            (include_recent, &s.recent),
        ];
        for (included, segment) in segments {
            if !included {
                continue;
            }
            for e in segment.values() {
                if prefix.is_none_or(|p| e.pseudo_locator.as_str().starts_with(p)) {
                    rows.entry(&e.pseudo_locator)
                        .or_insert((&e.offsite_locator, e.media_class));
                }
            }
        }
        let mut out = String::with_capacity(16 + rows.len() * 96);
        out.push_str(MAP_HEADER);
        out.push('\n');
        for (pseudo, (offsite, class)) in rows {
            out.push_str(pseudo.as_str());
            out.push('\t');
            out.push_str(offsite.as_str());
            out.push('\t');
            out.push_str(class.as_str());
            out.push('\n');
        }
        out.into_bytes()
    }

    /// Merges an `r2o-map/1` blob into the recent segment. New entries start at
    /// zero hits; entries already in the recent segment keep their count.
    pub fn import_mappings(&self, blob: &[u8]) -> Result<ImportReport, CacheError> {
        let text = String::from_utf8_lossy(blob);
        let mut lines = text.split('\n');
        let header = lines.next().unwrap_or_default();
        if header != MAP_HEADER {
            return Err(CacheError::UnsupportedVersion(header.chars().take(32).collect()));
        }
        let mut report = ImportReport::default();
        let mut s = self.inner.lock();
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let Some(entry) = parse_map_line(line) else {
                report.skipped += 1;
                continue;
            };
            let now = s.tick();
            let hits = s.recent.get(&entry.pseudo_locator).map_or(0, |e| e.hit_count);
            s.insert_recent(
                MappingEntry {
                    hit_count: hits,
                    ..entry
                },
                now,
                self.config.m_recent,
            );
            report.merged += 1;
        }
        Ok(report)
    }

    /// Both segments with counts and timestamps, for persisting between runs.
    pub fn save_state(&self) -> Vec<u8> {
        let s = self.inner.lock();
        let mut out = format!("{STATE_HEADER}\nclock\t{}\n", s.clock);
        for (tag, segment) in [("F", &s.frequent), ("R", &s.recent)] {
            let mut entries: Vec<_> = segment.values().collect();
            entries.sort_by(|a, b| a.pseudo_locator.cmp(&b.pseudo_locator));
            for e in entries {
                out.push_str(&format!(
                    "{tag}\t{}\t{}\t{}\t{}\t{}\n",
                    e.pseudo_locator,
                    e.offsite_locator,
                    e.media_class.as_str(),
                    e.hit_count,
                    e.last_used.map(|t| t.to_string()).unwrap_or_else(|| "-".into())
                ));
            }
        }
        out.into_bytes()
    }

    /// Replaces the contents with a [`save_state`](Self::save_state) snapshot,
    /// then applies this cache's capacity limits.
    pub fn load_state(&self, blob: &[u8]) -> Result<(), CacheError> {
        let text = String::from_utf8_lossy(blob);
        let mut lines = text.split('\n');
        let header = lines.next().unwrap_or_default();
        if header != STATE_HEADER {
            return Err(CacheError::UnsupportedVersion(header.chars().take(32).collect()));
        }
        let mut fresh = Segments::default();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let bad = CacheError::MalformedState(i + 2);
            let fields: Vec<&str> = line.split('\t').collect();
            match fields.as_slice() {
                ["clock", c] => fresh.clock = c.parse().map_err(|_| bad)?,
                [tag @ ("F" | "R"), pseudo, offsite, class, hits, last] => {
                    let entry = parse_map_line(&format!("{pseudo}\t{offsite}\t{class}")).ok_or(bad.clone())?;
                    let hits = hits.parse().map_err(|_| bad.clone())?;
                    let last_used = match *last {
                        "-" => None,
                        t => Some(t.parse().map_err(|_| bad.clone())?),
                    };
                    let entry = MappingEntry {
                        hit_count: hits,
                        last_used,
                        ..entry
                    };
                    fresh.clock = fresh.clock.max(last_used.unwrap_or(0));
                    if *tag == "F" {
                        fresh.frequent.insert(entry.pseudo_locator.clone(), entry);
                    } else {
                        let t = last_used.ok_or(bad)?;
                        if fresh.recency.insert(t, entry.pseudo_locator.clone()).is_some() {
                            return Err(CacheError::MalformedState(i + 2));
                        }
                        fresh.recent.insert(entry.pseudo_locator.clone(), entry);
                    }
                }
                _ => return Err(bad),
            }
        }
        fresh.evict_frequent(self.config.n_frequent);
        while fresh.recent.len() > self.config.m_recent {
            let (_, victim) = fresh.recency.pop_first().expect("recency index tracks recent");
            fresh.recent.remove(&victim);
        }
        *self.inner.lock() = fresh;
        Ok(())
    }
}

impl Default for MappingsCache {
    fn default() -> Self {
        Self::new(CacheConfig::default())
    }
}

fn parse_map_line(line: &str) -> Option<MappingEntry> {
    let mut fields = line.split('\t');
    let pseudo = ContentLocator::parse(fields.next()?).ok()?;
    let offsite = ContentLocator::parse(fields.next()?).ok()?;
    let class = fields.next()?.parse::<MediaClass>().ok()?;
    if fields.next().is_some() {
        return None;
    }
    MappingEntry::new(pseudo, offsite, class).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loc(s: &str) -> ContentLocator {
        ContentLocator::parse(&format!("http://fp.example/fp/photos/{s}.png")).unwrap()
    }

    fn off(s: &str) -> ContentLocator {
        ContentLocator::parse(&format!("http://offsite.example/v1/objects/{s}")).unwrap()
    }

    fn entry(s: &str) -> MappingEntry {
        MappingEntry::new(loc(s), off(s), MediaClass::Image).unwrap()
    }

    fn keys(v: Vec<MappingEntry>) -> Vec<String> {
        v.into_iter()
            .map(|e| e.pseudo_locator.path().trim_start_matches("/fp/photos/").trim_end_matches(".png").to_owned())
            .collect()
    }

    fn cache(n: usize, m: usize) -> MappingsCache {
        MappingsCache::new(CacheConfig {
            n_frequent: n,
            m_recent: m,
        })
    }

    #[test]
    fn frequent_evicts_lowest_count() {
        let c = cache(2, 0);
        c.record_created(entry("A").with_usage(5, Some(1)));
        c.record_created(entry("B").with_usage(3, Some(2)));
        c.record_created(entry("C").with_usage(1, Some(3)));
        assert_eq!(keys(c.frequent_entries()), ["A", "B"]);
    }

    #[test]
    fn frequent_zero_capacity() {
        let c = cache(0, 0);
        c.record_created(entry("A"));
        assert!(c.frequent_entries().is_empty());
        assert_eq!(c.lookup(&loc("A")), None);
    }

    #[test]
    fn frequent_tie_breaks_on_recency() {
        let c = cache(2, 0);
        c.record_created(entry("A").with_usage(3, Some(10)));
        c.record_created(entry("B").with_usage(3, Some(5)));
        c.record_created(entry("C").with_usage(4, Some(11)));
        assert_eq!(keys(c.frequent_entries()), ["A", "C"]);
    }

    #[test]
    fn frequent_tie_breaks_on_locator_last() {
        let c = cache(1, 0);
        c.record_created(entry("B").with_usage(2, Some(7)));
        c.record_created(entry("A").with_usage(2, Some(7)));
        assert_eq!(keys(c.frequent_entries()), ["B"]);
    }

    #[test]
    fn recent_is_lru() {
        let c = cache(0, 2);
        for k in ["A", "B", "C"] {
            c.record_resolved(entry(k));
        }
        assert_eq!(keys(c.recent_entries()), ["B", "C"]);

        let c = cache(0, 2);
        for k in ["A", "B", "A", "C"] {
            c.record_resolved(entry(k));
        }
        assert_eq!(keys(c.recent_entries()), ["A", "C"]);
    }

    #[test]
    fn repeated_resolution_counts_hits() {
        let c = cache(0, 1);
        for _ in 0..3 {
            c.record_resolved(entry("A"));
        }
        let e = c.recent_entries();
        assert_eq!(keys(e.clone()), ["A"]);
        assert_eq!(e[0].hit_count, 3);
    }

    #[test]
    fn lookup_hit_and_miss() {
        let c = cache(4, 4);
        assert_eq!(c.lookup(&loc("X")), None);
        let before = c.stats();
        assert_eq!(c.lookup(&loc("X")), None);
        assert_eq!(c.stats(), before);

        c.record_created(entry("P"));
        assert_eq!(c.lookup(&loc("P")), Some(off("P")));
        assert_eq!(c.frequent_entries()[0].hit_count, 1);
    }

    #[test]
    fn lookup_bumps_both_copies() {
        let c = cache(4, 4);
        c.record_created(entry("P"));
        c.record_resolved(entry("P"));
        assert_eq!(c.lookup(&loc("P")), Some(off("P")));
        assert_eq!(c.frequent_entries()[0].hit_count, 1);
        assert_eq!(c.recent_entries()[0].hit_count, 2);
        assert_eq!(c.frequent_entries()[0].last_used, c.recent_entries()[0].last_used);
    }

    #[test]
    fn lookup_refreshes_lru_position() {
        let c = cache(0, 2);
        c.record_resolved(entry("A"));
        c.record_resolved(entry("B"));
        c.lookup(&loc("A"));
        c.record_resolved(entry("C"));
        assert_eq!(keys(c.recent_entries()), ["A", "C"]);
    }

    #[test]
    fn export_format() {
        let c = cache(4, 4);
        assert_eq!(c.export_mappings(&Selection::All), b"r2o-map/1\n");
        c.record_created(entry("P"));
        assert_eq!(
            String::from_utf8(c.export_mappings(&Selection::All)).unwrap(),
            "r2o-map/1\nhttp://fp.example/fp/photos/P.png\thttp://offsite.example/v1/objects/P\timage\n"
        );
    }

    #[test]
    fn export_selection_and_order() {
        let c = cache(4, 4);
        c.record_created(entry("b"));
        c.record_resolved(entry("a"));
        c.record_resolved(entry("b"));
        let all = String::from_utf8(c.export_mappings(&Selection::All)).unwrap();
        assert_eq!(all.lines().count(), 3);
        assert!(all.lines().nth(1).unwrap().starts_with("http://fp.example/fp/photos/a.png"));
        let recent = String::from_utf8(c.export_mappings(&Selection::Recent)).unwrap();
        assert_eq!(recent.lines().count(), 3);
        let frequent = String::from_utf8(c.export_mappings(&Selection::Frequent)).unwrap();
        assert_eq!(frequent.lines().count(), 2);
        let prefix = c.export_mappings(&Selection::ByPrefix("http://fp.example/fp/photos/a".into()));
        assert_eq!(String::from_utf8(prefix).unwrap().lines().count(), 2);
    }

    #[test]
    fn import_counts_and_skips() {
        let c = cache(4, 8);
        let blob = "r2o-map/1\n\
            http://fp.example/1.png\thttp://o.example/1\timage\n\
            http://fp.example/2.png\thttp://o.example/2\ttext\n\
            http://fp.example/3.png\thttp://o.example/3\timage\n";
        assert_eq!(c.import_mappings(blob.as_bytes()), Ok(ImportReport { merged: 3, skipped: 0 }));
        assert!(c.recent_entries().iter().all(|e| e.hit_count == 0));

        let blob = "r2o-map/1\n\
            http://fp.example/1.png\thttp://o.example/1\timage\n\
            garbage line\n\
            http://fp.example/3.png\thttp://o.example/3\timage\n";
        let c = cache(4, 8);
        assert_eq!(c.import_mappings(blob.as_bytes()), Ok(ImportReport { merged: 2, skipped: 1 }));

        assert!(matches!(
            c.import_mappings(b"r2o-map/9\n"),
            Err(CacheError::UnsupportedVersion(_))
        ));
        assert!(matches!(c.import_mappings(b""), Err(CacheError::UnsupportedVersion(_))));
    }

    #[test]
    fn import_rejects_malformed_fields() {
        let c = cache(4, 8);
        let blob = "r2o-map/1\n\
            http://fp.example/1.png\thttp://o.example/1\tvideo\n\
            http://fp.example/1.png\thttp://fp.example/1.png\timage\n\
            http://fp.example/1.png\thttp://o.example/1\timage\textra\n\
            ftp://fp.example/1.png\thttp://o.example/1\timage\n";
        assert_eq!(c.import_mappings(blob.as_bytes()), Ok(ImportReport { merged: 0, skipped: 4 }));
    }

    #[test]
    fn export_import_round_trip() {
        let c = cache(8, 8);
        for k in ["x", "y", "z"] {
            c.record_created(entry(k));
        }
        c.record_resolved(entry("w"));
        let blob = c.export_mappings(&Selection::All);
        let fresh = cache(8, 8);
        assert_eq!(fresh.import_mappings(&blob).unwrap().merged, 4);
        for k in ["w", "x", "y", "z"] {
            assert_eq!(fresh.lookup(&loc(k)), Some(off(k)));
        }
        assert_eq!(fresh.export_mappings(&Selection::All), blob);
    }

    #[test]
    fn same_locator_entry_is_invalid() {
        assert_eq!(
            MappingEntry::new(loc("a"), loc("a"), MediaClass::Image),
            Err(CacheError::SameLocator)
        );
    }

    #[test]
    fn concurrent_use_keeps_capacity() {
        let c = std::sync::Arc::new(cache(8, 8));
        let handles: Vec<_> = (0..8)
            .map(|t| {
                let c = c.clone();
                std::thread::spawn(move || {
                    for i in 0..500 {
                        let k = format!("{}", (t * 31 + i) % 40);
                        match i % 3 {
                            0 => c.record_created(entry(&k)),
                            1 => c.record_resolved(entry(&k)),
                            _ => {
                                if let Some(o) = c.lookup(&loc(&k)) {
                                    assert_eq!(o, off(&k));
                                }
                            }
                        }
                        let s = c.stats();
                        assert!(s.frequent <= 8 && s.recent <= 8);
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
    }

    #[test]
    fn state_snapshot_round_trip() {
        let c = MappingsCache::new(CacheConfig { n_frequent: 2, m_recent: 2 });
        c.record_created(entry("a"));
        c.record_resolved(entry("b"));
        c.record_resolved(entry("c"));
        c.lookup(&loc("a"));
        let blob = c.save_state();
        let d = MappingsCache::new(CacheConfig { n_frequent: 2, m_recent: 2 });
        d.load_state(&blob).unwrap();
        assert_eq!(d.frequent_entries(), c.frequent_entries());
        assert_eq!(d.recent_entries(), c.recent_entries());
        assert_eq!(d.stats(), c.stats());
        assert_eq!(d.save_state(), blob);
        assert!(matches!(d.load_state(b"r2o-map/1\n"), Err(CacheError::UnsupportedVersion(_))));
        assert!(matches!(
            d.load_state(b"r2o-cache/1\nX\tbad\n"),
            Err(CacheError::MalformedState(2))
        ));
    }
}
