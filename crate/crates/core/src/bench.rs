//! Latency benchmarks: decode-time CDF, per-provider medians and end-to-end
//! page resolution, with CSV output.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, RngCore, SeedableRng};
use thiserror::Error;

use crate::cache::{CacheConfig, MappingsCache};
use crate::codec::{decode_qr, encode_qr, CodecError, IndirectionPayload, PseudoImage, QrConfig};
use crate::filter::FilterConfig;
use crate::firstparty::{serve_firstparty, FirstPartyApi, FirstPartyError};
use crate::locator::ContentLocator;
use crate::pipeline::{resolve_page, write_path, HttpFetcher, PipelineError, ReadContext, WriteContext};
use crate::rewriter::ReplacementMode;
use crate::store::{measure_store, serve_store, ContentItem, Provider, ProviderDescriptor, ProviderKind, StoreError};

/// Untimed iterations run before measuring.
pub const WARMUP_ITERATIONS: usize = 3;

/// Repetitions per symbol when a single decode is too short to time.
pub const DEFAULT_REPETITIONS: u32 = 1000;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("no samples")]
    NoSamples,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("benchmark check failed: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    FirstParty(#[from] FirstPartyError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub scenario: String,
    /// Milliseconds, in measurement order.
    pub samples: Vec<f64>,
    pub median: f64,
    pub mean: f64,
    pub p95: f64,
    /// `(ms, cumulative fraction)`, one point per sample.
    pub cdf_points: Vec<(f64, f64)>,
}

impl BenchReport {
    pub fn from_samples(scenario: impl Into<String>, samples: Vec<f64>) -> Result<Self, BenchError> {
        if samples.is_empty() || samples.iter().any(|s| !s.is_finite()) {
            return Err(BenchError::NoSamples);
        }
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        let mean = sorted.iter().sum::<f64>() / n as f64;
        // Nearest-rank percentile.
        let rank = (0.95 * n as f64).ceil() as usize;
        let p95 = sorted[rank.clamp(1, n) - 1];
        let cdf_points = sorted
            .iter()
            .enumerate()
            .map(|(i, &x)| (x, (i + 1) as f64 / n as f64))
            .collect();
        Ok(Self {
            scenario: scenario.into(),
            samples,
            median,
            mean,
            p95,
            cdf_points,
        })
    }

    pub fn min(&self) -> f64 {
        self.cdf_points[0].0
    }

    pub fn max(&self) -> f64 {
        self.cdf_points[self.cdf_points.len() - 1].0
    }

    pub fn summary(&self) -> String {
        format!(
            "{}: n={} median={:.3} ms mean={:.3} ms p95={:.3} ms max={:.3} ms",
            self.scenario,
            self.samples.len(),
            self.median,
            self.mean,
            self.p95,
            self.max()
        )
    }

    /// `scenario,sample_ms` rows.
    pub fn write_samples_csv<W: Write>(&self, w: W, header: bool) -> Result<(), BenchError> {
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        if header {
            out.write_record(["scenario", "sample_ms"])?;
        }
        for s in &self.samples {
            out.write_record([self.scenario.as_str(), &format!("{s:.6}")])?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// `scenario,ms,fraction` rows.
    pub fn write_cdf_csv<W: Write>(&self, w: W, header: bool) -> Result<(), BenchError> {
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        if header {
            out.write_record(["scenario", "ms", "fraction"])?;
        }
        for (x, f) in &self.cdf_points {
            out.write_record([self.scenario.as_str(), &format!("{x:.6}"), &format!("{f:.6}")])?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

/// Smallest observable step of the monotonic clock.
pub fn clock_granularity() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..64 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best
}

/// A random `http(s)` URL of `len` characters; never shorter than its 40-byte prefix allows.
pub fn random_url(rng: &mut impl RngCore, len: usize) -> String {
    const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789-_";
    let scheme = if rng.gen_bool(0.5) { "https" } else { "http" };
    let host_len = rng.gen_range(3..=12);
    let host: String = (0..host_len).map(|_| (b'a' + rng.gen_range(0..26)) as char).collect();
    let mut url = format!("{scheme}://{host}.example/v1/objects/");
    while url.len() < len {
        url.push(ALPHABET[rng.gen_range(0..ALPHABET.len())] as char);
    }
    url
}

#[derive(Debug, Clone)]
pub struct DecodeBenchConfig {
    pub count: usize,
    /// Repetitions used when a single decode is below clock resolution.
    pub repetitions: u32,
    pub seed: u64,
    pub qr: QrConfig,
}

impl Default for DecodeBenchConfig {
    fn default() -> Self {
        Self {
            count: 500,
            repetitions: DEFAULT_REPETITIONS,
            seed: 0,
            qr: QrConfig::default(),
        }
    }
}

/// Times `decode_qr` on `count` symbols encoding random URLs.
pub fn bench_decode(cfg: &DecodeBenchConfig) -> Result<BenchReport, BenchError> {
    if cfg.count == 0 {
        return Err(BenchError::InvalidArgument("count must be >= 1".into()));
    }
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let symbols: Vec<(ContentLocator, PseudoImage)> = (0..cfg.count)
        .map(|_| {
            let len = rng.gen_range(40..=200);
            let locator = ContentLocator::parse(&random_url(&mut rng, len)).expect("generated URL is valid");
            let image = encode_qr(&IndirectionPayload::image(locator.clone()), &cfg.qr)?;
            Ok((locator, image))
        })
        .collect::<Result<_, CodecError>>()?;

    for _ in 0..WARMUP_ITERATIONS {
        decode_qr(&symbols[0].1)?;
    }
    let granularity = clock_granularity();
    let mut samples = Vec::with_capacity(symbols.len());
    for (locator, image) in &symbols {
        let start = Instant::now();
        let payload = decode_qr(image)?;
        let single = start.elapsed();
        if payload.locator != *locator {
            return Err(BenchError::Mismatch(format!("decoded {} for {locator}", payload.locator)));
        }
        if single > granularity * 10 || cfg.repetitions <= 1 {
            samples.push(ms(single));
        } else {
            let start = Instant::now();
            for _ in 0..cfg.repetitions {
                decode_qr(image)?;
            }
            samples.push(ms(start.elapsed()) / f64::from(cfg.repetitions));
        }
    }
    BenchReport::from_samples(format!("decode {}px", symbols[0].1.width), samples)
}

#[derive(Debug, Clone)]
pub struct ProviderRow {
    pub name: String,
    pub preset_ms: Option<u64>,
    pub report: BenchReport,
}

impl ProviderRow {
    /// Whether the median lies in `[preset, preset + tolerance_ms]`.
    pub fn within(&self, tolerance_ms: f64) -> bool {
        match self.preset_ms {
            Some(p) => self.report.median >= p as f64 && self.report.median <= p as f64 + tolerance_ms,
            None => true,
        }
    }
}

/// Median fetch time per provider. Simulated providers are served over
/// loopback HTTP so every sample includes a real request.
pub async fn bench_providers(
    presets: &[ProviderDescriptor],
    item_size: usize,
    repetitions: usize,
    interval: Duration,
    seed: u64,
) -> Result<Vec<ProviderRow>, BenchError> {
    if presets.is_empty() {
        return Err(BenchError::InvalidArgument("no providers given".into()));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(presets.len());
    for d in presets {
        let samples = if d.kind == ProviderKind::Http {
            let provider = Provider::from_descriptor(d, seed)?;
            measure_store(&provider, item_size, repetitions, interval, &mut rng).await?
        } else {
            let backing = Provider::from_descriptor(d, rng.next_u64())?;
            let server = serve_store("127.0.0.1:0", backing).await?;
            let client = server.client_provider(&d.name);
            let samples = measure_store(&client, item_size, repetitions, interval, &mut rng).await;
            server.shutdown().await;
            samples?
        };
        rows.push(ProviderRow {
            name: d.name.clone(),
            preset_ms: d.simulated_latency_ms,
            report: BenchReport::from_samples(format!("provider {}", d.name), samples)?,
        });
    }
    Ok(rows)
}

/// A plain-text table of provider medians.
pub fn provider_table(rows: &[ProviderRow]) -> String {
    let mut out = format!("{:<16} {:>10} {:>12}\n", "provider", "preset ms", "median ms");
    for r in rows {
        let preset = r.preset_ms.map(|p| p.to_string()).unwrap_or_else(|| "-".into());
        out.push_str(&format!("{:<16} {:>10} {:>12.1}\n", r.name, preset, r.report.median));
    }
    out
}

#[derive(Debug, Clone)]
pub struct E2eConfig {
    pub firstparty_delay: Duration,
    pub offsite_delay: Duration,
    pub use_cache: bool,
    pub iterations: usize,
    pub parallelism: usize,
    pub seed: u64,
}

impl E2eConfig {
    pub fn new(firstparty_delay_ms: u64, offsite_delay_ms: u64, use_cache: bool) -> Self {
        Self {
            firstparty_delay: Duration::from_millis(firstparty_delay_ms),
            offsite_delay: Duration::from_millis(offsite_delay_ms),
            use_cache,
            iterations: 20,
            parallelism: crate::pipeline::DEFAULT_PARALLELISM,
            seed: 0,
        }
    }

    fn scenario(&self) -> String {
        format!(
            "e2e f={} o={} {}",
            self.firstparty_delay.as_millis(),
            self.offsite_delay.as_millis(),
            if self.use_cache { "warm" } else { "cold" }
        )
    }
}

/// A noisy grayscale PNG of roughly `side * side` bytes, standing in for a photo.
pub fn sample_photo(rng: &mut impl RngCore, side: u32) -> ContentItem {
    let mut pixels = vec![0u8; (side * side) as usize];
    rng.fill_bytes(&mut pixels);
    let image = PseudoImage {
        width: side,
        height: side,
        pixels,
        quiet_zone: 0,
        symbol_bounds: None,
    };
    ContentItem::new(image.to_png(), "image/png")
}

/// Writes one photo through the pipeline, then times `resolve_page` on its
/// album. Cold runs clear the reader's cache before every iteration.
pub async fn bench_end_to_end(cfg: &E2eConfig) -> Result<BenchReport, BenchError> {
    if cfg.iterations == 0 {
        return Err(BenchError::InvalidArgument("iterations must be >= 1".into()));
    }
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let fp_server = serve_firstparty("127.0.0.1:0", cfg.firstparty_delay).await?;
    let backing = Provider::from_descriptor(&ProviderDescriptor::memory("offsite", 0), rng.next_u64())?
        .with_latency(cfg.offsite_delay);
    let store_server = serve_store("127.0.0.1:0", backing).await?;

    let result = async {
        let fp = fp_server.client();
        let provider = store_server.client_provider("offsite");
        let qr = QrConfig::default();
        let filter = FilterConfig::default();
        let writer_cache = MappingsCache::new(CacheConfig::default());
        let album = fp.create_album("bench").await?;
        let ctx = WriteContext::new(&provider, &fp, &qr, &filter, &writer_cache);
        write_path(&ctx, sample_photo(&mut rng, 210), Some("bench"), &album).await?;

        let page = fp.album_page_url(&album);
        let reader_cache = MappingsCache::new(CacheConfig::default());
        let fetcher = HttpFetcher::new();
        let mut read = ReadContext::new(&filter, &reader_cache, &fetcher);
        read.parallelism = cfg.parallelism;
        let mut samples = Vec::with_capacity(cfg.iterations);
        for i in 0..WARMUP_ITERATIONS + cfg.iterations {
            if !cfg.use_cache {
                reader_cache.clear();
            }
            let start = Instant::now();
            let resolved = resolve_page(&read, &page, ReplacementMode::SrcSwap).await?;
            let elapsed = start.elapsed();
            if resolved.replaced() != 1 {
                return Err(BenchError::Mismatch(format!("{} elements replaced, expected 1", resolved.replaced())));
            }
            if i >= WARMUP_ITERATIONS {
                samples.push(ms(elapsed));
            }
        }
        BenchReport::from_samples(cfg.scenario(), samples)
    }
    .await;
    fp_server.shutdown().await;
    store_server.shutdown().await;
    result
}

#[derive(Debug, Clone)]
pub struct CacheSaving {
    pub cold: BenchReport,
    pub warm: BenchReport,
}

impl CacheSaving {
    pub fn saving_ms(&self) -> f64 {
        self.cold.median - self.warm.median
    }
}

/// Cold and warm runs of the same scenario.
pub async fn bench_cache_saving(cfg: &E2eConfig) -> Result<CacheSaving, BenchError> {
    let cold = bench_end_to_end(&E2eConfig {
        use_cache: false,
        ..cfg.clone()
    })
    .await?;
    let warm = bench_end_to_end(&E2eConfig {
        use_cache: true,
        ..cfg.clone()
    })
    .await?;
    Ok(CacheSaving { cold, warm })
}
