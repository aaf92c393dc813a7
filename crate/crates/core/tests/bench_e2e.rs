use r2o_core::bench::{bench_cache_saving, bench_end_to_end, E2eConfig};

fn config(f: u64, o: u64, warm: bool) -> E2eConfig {
    let mut cfg = E2eConfig::new(f, o, warm);
    cfg.iterations = 9;
    cfg
}

#[tokio::test]
async fn cold_median_composes_both_delays() {
    for (f, o) in [(0, 0), (11, 40), (60, 12), (30, 90)] {
        let r = bench_end_to_end(&config(f, o, false)).await.unwrap();
        let floor = (f + o) as f64;
        assert!(
            r.median >= floor && r.median <= floor + 30.0,
            "f={f} o={o}: median {:.1}",
            r.median
        );
    }
}

#[tokio::test]
async fn warm_median_ignores_first_party_delay() {
    let mut medians = Vec::new();
    for f in [11, 147, 434] {
        medians.push(bench_end_to_end(&config(f, 25, true)).await.unwrap().median);
    }
    let lo = medians.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = medians.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(hi - lo < 5.0, "{medians:?}");
}

#[tokio::test]
async fn cache_saving_covers_pseudo_fetch() {
    let saving = bench_cache_saving(&config(40, 20, false)).await.unwrap();
    // Cold pays the first-party photo delay plus a decode; warm pays neither.
    assert!(saving.saving_ms() >= 40.0, "{:.1}", saving.saving_ms());
    assert!(saving.saving_ms() <= 40.0 + 30.0, "{:.1}", saving.saving_ms());
    assert!(saving.warm.median >= 20.0);
}
