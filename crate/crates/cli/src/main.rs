mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use r2o_core::bench::{self, DecodeBenchConfig, E2eConfig};
use r2o_core::cache::{MappingsCache, Selection};
use r2o_core::codec::{
    decode_qr, encode_locator_qr, encode_text_indirection, pad_with_border, EcLevel, PseudoImage,
};
use r2o_core::firstparty::{serve_firstparty, AlbumId, FirstPartyApi, HttpFirstParty};
use r2o_core::pipeline::{resolve_page, write_path, HttpFetcher, ReadContext, WriteContext};
use r2o_core::rewriter::ReplacementMode;
use r2o_core::store::{serve_store, ContentItem, FsStore, MemoryStore, Provider, ProviderKind};

use config::Config;

#[derive(Debug, Parser)]
#[command(name = "r2o", version, about = "Host content off-site and leave QR schemata in its place")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "R2O_CONFIG")]
    config: Option<PathBuf>,
    /// Seed for object ids and generated benchmark data.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Bound on concurrent decodes while resolving.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    parallelism: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an object store speaking the v1 HTTP protocol.
    ServeStore(ServeStoreArgs),
    /// Run the simulated first-party service.
    ServeFirstparty(ServeFirstpartyArgs),
    /// Host an image off-site and post its QR schema to an album.
    Upload(UploadArgs),
    /// Fetch an album page and replace schemata with their content.
    Resolve(ResolveArgs),
    /// Print the locator held by a QR PNG.
    Decode(DecodeArgs),
    /// Write a QR PNG for a locator.
    Encode(EncodeArgs),
    /// Inspect or exchange the mappings cache.
    #[command(subcommand)]
    Cache(CacheCommand),
    /// Latency benchmarks.
    #[command(subcommand)]
    Bench(BenchCommand),
}

#[derive(Debug, Args)]
struct ServeStoreArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: String,
    /// Take latency (and storage root) from this configured provider.
    #[arg(long)]
    provider: Option<String>,
    #[arg(long)]
    latency_ms: Option<u64>,
    /// Persist objects under this directory instead of memory.
    #[arg(long)]
    root: Option<PathBuf>,
    #[arg(long)]
    max_payload: Option<usize>,
}

#[derive(Debug, Args)]
struct ServeFirstpartyArgs {
    #[arg(long, default_value = "127.0.0.1:8081")]
    bind: String,
    /// Delay before serving each photo.
    #[arg(long, default_value_t = 11)]
    delay_ms: u64,
    /// Also host an in-memory object store on this address.
    #[arg(long)]
    store_bind: Option<String>,
    #[arg(long, default_value_t = 0)]
    store_latency_ms: u64,
}

#[derive(Debug, Args)]
struct UploadArgs {
    /// PNG to host off-site.
    #[arg(long)]
    file: PathBuf,
    /// Configured provider that receives the original.
    #[arg(long)]
    provider: String,
    /// Existing album id.
    #[arg(long, required_unless_present = "new_album", conflicts_with = "new_album")]
    album: Option<String>,
    /// Create an album with this title and upload into it.
    #[arg(long)]
    new_album: Option<String>,
    /// Caption text; the marker is prepended.
    #[arg(long)]
    caption: Option<String>,
    /// First-party base URL (overrides `firstparty_url`).
    #[arg(long)]
    firstparty: Option<String>,
    /// Also post a comment linking to the off-site copy.
    #[arg(long)]
    preview_comment: bool,
    /// Pad the schema with a white border to WIDTHxHEIGHT.
    #[arg(long, value_parser = parse_dims)]
    pad: Option<(u32, u32)>,
    /// Mappings cache file to update.
    #[arg(long)]
    cache_file: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ResolveArgs {
    /// Album page URL.
    #[arg(long)]
    page: String,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Embed content as data URLs instead of linking to it.
    #[arg(long)]
    inline: bool,
    /// Mappings cache file to read and update.
    #[arg(long)]
    cache_file: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    file: PathBuf,
}

#[derive(Debug, Args)]
struct EncodeArgs {
    url: String,
    /// PNG output path; with `--text`, ignored.
    #[arg(long, required_unless_present = "text")]
    out: Option<PathBuf>,
    /// Print the `#r2o` text schema instead of writing a QR image.
    #[arg(long)]
    text: bool,
    /// Error correction level: L, M, Q or H.
    #[arg(long)]
    ec: Option<EcLevel>,
    /// Output edge length in pixels; 0 renders at `--scale` instead.
    #[arg(long)]
    size: Option<u32>,
    /// Pixels per module.
    #[arg(long)]
    scale: Option<u32>,
    /// Pad to WIDTHxHEIGHT with a white border.
    #[arg(long, value_parser = parse_dims)]
    pad: Option<(u32, u32)>,
}

#[derive(Debug, Subcommand)]
enum CacheCommand {
    /// Write selected mappings in the r2o-map exchange format.
    Export {
        #[arg(long)]
        cache_file: PathBuf,
        /// all, frequent, recent or prefix:<p>.
        #[arg(long, default_value = "all")]
        select: Selection,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge an r2o-map blob into the cache.
    Import {
        #[arg(long)]
        cache_file: PathBuf,
        blob: PathBuf,
    },
    /// Print segment sizes.
    Stats {
        #[arg(long)]
        cache_file: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum BenchCommand {
    /// Decode-time distribution over random symbols.
    Decode {
        #[arg(long, default_value_t = 500)]
        count: usize,
        #[arg(long, default_value_t = bench::DEFAULT_REPETITIONS)]
        repetitions: u32,
        #[command(flatten)]
        output: BenchOutput,
        /// Fail if the slowest decode exceeds this many ms.
        #[arg(long)]
        max_ms: Option<f64>,
    },
    /// Median fetch time per provider.
    Providers {
        /// Providers to measure; all configured ones when absent.
        #[arg(long = "provider")]
        providers: Vec<String>,
        #[arg(long, default_value_t = 44 * 1024)]
        size: usize,
        #[arg(long, default_value_t = 10)]
        repetitions: usize,
        #[arg(long, default_value_t = 0)]
        interval_ms: u64,
        #[command(flatten)]
        output: BenchOutput,
        /// Fail unless every median is within [preset, preset + tolerance].
        #[arg(long)]
        tolerance_ms: Option<f64>,
    },
    /// End-to-end page resolution latency.
    E2e {
        #[arg(long, default_value_t = 11)]
        firstparty_delay_ms: u64,
        #[arg(long, default_value_t = 147)]
        offsite_delay_ms: u64,
        /// Keep the cache between iterations.
        #[arg(long, conflicts_with = "compare")]
        warm: bool,
        /// Run cold and warm and report the difference.
        #[arg(long)]
        compare: bool,
        #[arg(long, default_value_t = 20)]
        iterations: usize,
        #[command(flatten)]
        output: BenchOutput,
        /// Fail if the median falls outside [min, max].
        #[arg(long)]
        expect_min_ms: Option<f64>,
        #[arg(long)]
        expect_max_ms: Option<f64>,
    },
}

#[derive(Debug, Args)]
struct BenchOutput {
    /// Write `scenario,sample_ms` rows here.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write `scenario,ms,fraction` rows here.
    #[arg(long)]
    cdf: Option<PathBuf>,
}

fn parse_dims(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WIDTHxHEIGHT")?;
    Ok((
        w.parse().map_err(|_| format!("bad width {w:?}"))?,
        h.parse().map_err(|_| format!("bad height {h:?}"))?,
    ))
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Operational(String),
}

type Outcome = Result<(), Failure>;

fn op(e: impl std::fmt::Display) -> Failure {
    Failure::Operational(e.to_string())
}

struct Env {
    config: Config,
    seed: u64,
    parallelism: usize,
}

fn load_env(cli: &Cli) -> Result<Env, Failure> {
    let config = match &cli.config {
        Some(p) => Config::load(p).map_err(Failure::Usage)?,
        None => Config::default(),
    };
    let seed = cli.seed.or(config.seed).unwrap_or(0);
    let parallelism = cli
        .parallelism
        .map(|p| p as usize)
        .or(config.parallelism)
        .unwrap_or(r2o_core::pipeline::DEFAULT_PARALLELISM);
    Ok(Env {
        config,
        seed,
        parallelism,
    })
}

fn media_type_of(bytes: &[u8]) -> &'static str {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        "image/png"
    } else if bytes.starts_with(&[0xff, 0xd8, 0xff]) {
        "image/jpeg"
    } else if bytes.starts_with(b"GIF8") {
        "image/gif"
    } else {
        "application/octet-stream"
    }
}

fn load_cache(env: &Env, path: Option<&Path>) -> Result<MappingsCache, Failure> {
    let cache = MappingsCache::new(env.config.cache);
    if let Some(p) = path.filter(|p| p.exists()) {
        let blob = std::fs::read(p).map_err(|e| op(format!("{}: {e}", p.display())))?;
        cache.load_state(&blob).map_err(|e| op(format!("{}: {e}", p.display())))?;
    }
    Ok(cache)
}

fn save_cache(cache: &MappingsCache, path: Option<&Path>) -> Outcome {
    if let Some(p) = path {
        std::fs::write(p, cache.save_state()).map_err(|e| op(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> Outcome {
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(|e| op(format!("{}: {e}", p.display()))),
        None => std::io::stdout().write_all(bytes).map_err(op),
    }
}

async fn wait_for_interrupt() {
    let _ = tokio::signal::ctrl_c().await;
}

async fn serve_store_cmd(env: &Env, a: &ServeStoreArgs) -> Outcome {
    let preset = match &a.provider {
        Some(name) => Some(
            env.config
                .provider(name)
                .ok_or_else(|| Failure::Usage(format!("unknown provider {name:?}")))?,
        ),
        None => None,
    };
    let latency = a
        .latency_ms
        .or(preset.as_ref().and_then(|d| d.simulated_latency_ms))
        .unwrap_or(0);
    let root = a.root.clone().or_else(|| {
        preset
            .as_ref()
            .filter(|d| d.kind == ProviderKind::Filesystem)
            .and_then(|d| d.root.clone())
    });
    let store: Arc<dyn r2o_core::store::ObjectStore> = match root {
        Some(r) => Arc::new(FsStore::open(r, env.seed).map_err(op)?),
        None => Arc::new(MemoryStore::seeded(env.seed)),
    };
    let mut backing = Provider::new("local", "http://local.invalid", store).with_latency(Duration::from_millis(latency));
    if let Some(limit) = a.max_payload {
        backing = backing.with_max_payload(limit);
    }
    let server = serve_store(&a.bind, backing).await.map_err(op)?;
    println!("store listening on {}", server.base_url());
    let _ = std::io::stdout().flush();
    wait_for_interrupt().await;
    server.shutdown().await;
    Ok(())
}

async fn serve_firstparty_cmd(env: &Env, a: &ServeFirstpartyArgs) -> Outcome {
    let server = serve_firstparty(&a.bind, Duration::from_millis(a.delay_ms))
        .await
        .map_err(op)?;
    println!("firstparty listening on {}", server.base_url());
    let store = match &a.store_bind {
        Some(bind) => {
            let backing = Provider::new("local", "http://local.invalid", Arc::new(MemoryStore::seeded(env.seed)))
                .with_latency(Duration::from_millis(a.store_latency_ms));
            let s = serve_store(bind, backing).await.map_err(op)?;
            println!("store listening on {}", s.base_url());
            Some(s)
        }
        None => None,
    };
    let _ = std::io::stdout().flush();
    wait_for_interrupt().await;
    server.shutdown().await;
    if let Some(s) = store {
        s.shutdown().await;
    }
    Ok(())
}

async fn upload_cmd(env: &Env, a: &UploadArgs) -> Outcome {
    let descriptor = env.config.provider(&a.provider).ok_or_else(|| {
        Failure::Usage(format!(
            "unknown provider {:?} (configured: {})",
            a.provider,
            env.config.provider_names().join(", ")
        ))
    })?;
    let fp_url = a
        .firstparty
        .clone()
        .or_else(|| env.config.firstparty_url.clone())
        .ok_or_else(|| Failure::Usage("no first party given (--firstparty or firstparty_url)".into()))?;
    let bytes = std::fs::read(&a.file).map_err(|e| op(format!("{}: {e}", a.file.display())))?;
    if descriptor.kind == ProviderKind::Memory {
        eprintln!("warning: provider {} keeps objects in this process only", descriptor.name);
    }
    let provider = Provider::from_descriptor(&descriptor, env.seed).map_err(op)?;
    let fp = HttpFirstParty::new(&fp_url);
    let album = match (&a.album, &a.new_album) {
        (Some(id), _) => AlbumId(id.clone()),
        (None, Some(title)) => fp.create_album(title).await.map_err(op)?,
        (None, None) => return Err(Failure::Usage("--album or --new-album is required".into())),
    };
    let cache = load_cache(env, a.cache_file.as_deref())?;
    let mut ctx = WriteContext::new(&provider, &fp, &env.config.qr, &env.config.filter, &cache);
    ctx.preview_comment = a.preview_comment;
    ctx.border_target = a.pad;
    let item = ContentItem::new(bytes.clone(), media_type_of(&bytes));
    let receipt = write_path(&ctx, item, a.caption.as_deref(), &album).await.map_err(op)?;
    save_cache(&cache, a.cache_file.as_deref())?;
    println!("offsite_locator={}", receipt.offsite_locator);
    println!("pseudo_locator={}", receipt.pseudo_locator);
    println!("photo_id={}", receipt.photo_id);
    println!("album_id={}", receipt.album_id);
    Ok(())
}

async fn resolve_cmd(env: &Env, a: &ResolveArgs) -> Outcome {
    let cache = load_cache(env, a.cache_file.as_deref())?;
    let fetcher = HttpFetcher::new();
    let mut ctx = ReadContext::new(&env.config.filter, &cache, &fetcher);
    ctx.parallelism = env.parallelism;
    let mode = if a.inline {
        ReplacementMode::Inline
    } else {
        ReplacementMode::SrcSwap
    };
    let page = resolve_page(&ctx, &a.page, mode).await.map_err(op)?;
    write_output(a.out.as_deref(), &page.html)?;
    save_cache(&cache, a.cache_file.as_deref())?;
    let failed: Vec<_> = page
        .resolutions
        .iter()
        .filter_map(|r| match &r.outcome {
            r2o_core::pipeline::Outcome::Failed(why) => Some(format!("{}: {why}", r.element.source_url)),
            _ => None,
        })
        .collect();
    eprintln!(
        "replaced {} of {} images ({} failed)",
        page.replaced(),
        page.resolutions.len(),
        failed.len()
    );
    for f in failed {
        eprintln!("  {f}");
    }
    Ok(())
}

fn decode_cmd(a: &DecodeArgs) -> Outcome {
    let bytes = std::fs::read(&a.file).map_err(|e| op(format!("{}: {e}", a.file.display())))?;
    let image = PseudoImage::from_png(&bytes).map_err(op)?;
    let payload = decode_qr(&image).map_err(op)?;
    println!("{}", payload.locator);
    for (k, v) in &payload.extra {
        println!("{k}={v}");
    }
    Ok(())
}

fn encode_cmd(env: &Env, a: &EncodeArgs) -> Outcome {
    if a.text {
        println!("{}", encode_text_indirection(&a.url).map_err(op)?);
        return Ok(());
    }
    let mut qr = env.config.qr;
    if let Some(ec) = a.ec {
        qr.ec_level = ec;
    }
    if let Some(size) = a.size {
        qr.target_size = (size > 0).then_some(size);
    }
    if let Some(scale) = a.scale {
        qr.module_scale = scale;
    }
    qr.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let mut image = encode_locator_qr(&a.url, &qr).map_err(op)?;
    if let Some((w, h)) = a.pad {
        image = pad_with_border(&image, w, h).map_err(op)?;
    }
    let out = a.out.as_deref().expect("clap requires --out without --text");
    std::fs::write(out, image.to_png()).map_err(|e| op(format!("{}: {e}", out.display())))?;
    eprintln!("wrote {}x{} symbol to {}", image.width, image.height, out.display());
    Ok(())
}

fn cache_cmd(env: &Env, c: &CacheCommand) -> Outcome {
    match c {
        CacheCommand::Export {
            cache_file,
            select,
            out,
        } => {
            let cache = load_cache(env, Some(cache_file))?;
            write_output(out.as_deref(), &cache.export_mappings(select))
        }
        CacheCommand::Import { cache_file, blob } => {
            let cache = load_cache(env, Some(cache_file))?;
            let bytes = std::fs::read(blob).map_err(|e| op(format!("{}: {e}", blob.display())))?;
            let report = cache.import_mappings(&bytes).map_err(op)?;
            save_cache(&cache, Some(cache_file))?;
            println!("merged={} skipped={}", report.merged, report.skipped);
            Ok(())
        }
        CacheCommand::Stats { cache_file } => {
            let cache = load_cache(env, Some(cache_file))?;
            let s = cache.stats();
            let cfg = cache.config();
            println!("frequent={}/{}", s.frequent, cfg.n_frequent);
            println!("recent={}/{}", s.recent, cfg.m_recent);
            Ok(())
        }
    }
}

fn write_report_files(reports: &[&bench::BenchReport], output: &BenchOutput) -> Outcome {
    let open = |p: &Path| std::fs::File::create(p).map_err(|e| op(format!("{}: {e}", p.display())));
    if let Some(p) = &output.csv {
        let mut f = open(p)?;
        for (i, r) in reports.iter().enumerate() {
            r.write_samples_csv(&mut f, i == 0).map_err(op)?;
        }
    }
    if let Some(p) = &output.cdf {
        let mut f = open(p)?;
        for (i, r) in reports.iter().enumerate() {
            r.write_cdf_csv(&mut f, i == 0).map_err(op)?;
        }
    }
    Ok(())
}

fn check_bounds(label: &str, value: f64, min: Option<f64>, max: Option<f64>) -> Outcome {
    let low = min.is_some_and(|m| value < m);
    let high = max.is_some_and(|m| value > m);
    if low || high {
        return Err(Failure::Operational(format!(
            "{label} {value:.1} ms outside [{}, {}]",
            min.map_or("-inf".into(), |m| m.to_string()),
            max.map_or("inf".into(), |m| m.to_string())
        )));
    }
    Ok(())
}

async fn bench_cmd(env: &Env, b: &BenchCommand) -> Outcome {
    match b {
        BenchCommand::Decode {
            count,
            repetitions,
            output,
            max_ms,
        } => {
            let cfg = DecodeBenchConfig {
                count: *count,
                repetitions: *repetitions,
                seed: env.seed,
                qr: env.config.qr,
            };
            let report = tokio::task::spawn_blocking(move || bench::bench_decode(&cfg))
                .await
                .map_err(op)?
                .map_err(op)?;
            println!("{}", report.summary());
            write_report_files(&[&report], output)?;
            check_bounds("max decode", report.max(), None, *max_ms)
        }
        BenchCommand::Providers {
            providers,
            size,
            repetitions,
            interval_ms,
            output,
            tolerance_ms,
        } => {
            let selected = if providers.is_empty() {
                env.config.providers()
            } else {
                providers
                    .iter()
                    .map(|n| {
                        env.config
                            .provider(n)
                            .ok_or_else(|| Failure::Usage(format!("unknown provider {n:?}")))
                    })
                    .collect::<Result<_, _>>()?
            };
            let rows = bench::bench_providers(
                &selected,
                *size,
                *repetitions,
                Duration::from_millis(*interval_ms),
                env.seed,
            )
            .await
            .map_err(op)?;
            print!("{}", bench::provider_table(&rows));
            let reports: Vec<_> = rows.iter().map(|r| &r.report).collect();
            write_report_files(&reports, output)?;
            if let Some(t) = tolerance_ms {
                let outside: Vec<_> = rows.iter().filter(|r| !r.within(*t)).map(|r| r.name.as_str()).collect();
                if !outside.is_empty() {
                    return Err(op(format!("medians outside tolerance: {}", outside.join(", "))));
                }
            }
            Ok(())
        }
        BenchCommand::E2e {
            firstparty_delay_ms,
            offsite_delay_ms,
            warm,
            compare,
            iterations,
            output,
            expect_min_ms,
            expect_max_ms,
        } => {
            let mut cfg = E2eConfig::new(*firstparty_delay_ms, *offsite_delay_ms, *warm);
            cfg.iterations = *iterations;
            cfg.parallelism = env.parallelism;
            cfg.seed = env.seed;
            if *compare {
                let s = bench::bench_cache_saving(&cfg).await.map_err(op)?;
                println!("{}", s.cold.summary());
                println!("{}", s.warm.summary());
                println!("cache saving: {:.1} ms", s.saving_ms());
                write_report_files(&[&s.cold, &s.warm], output)?;
                check_bounds("cold median", s.cold.median, *expect_min_ms, *expect_max_ms)
            } else {
                let r = bench::bench_end_to_end(&cfg).await.map_err(op)?;
                println!("{}", r.summary());
                write_report_files(&[&r], output)?;
                check_bounds("median", r.median, *expect_min_ms, *expect_max_ms)
            }
        }
    }
}

async fn run(cli: Cli) -> Outcome {
    let env = load_env(&cli)?;
    match &cli.command {
        Command::ServeStore(a) => serve_store_cmd(&env, a).await,
        Command::ServeFirstparty(a) => serve_firstparty_cmd(&env, a).await,
        Command::Upload(a) => upload_cmd(&env, a).await,
        Command::Resolve(a) => resolve_cmd(&env, a).await,
        Command::Decode(a) => decode_cmd(a),
        Command::Encode(a) => encode_cmd(&env, a),
        Command::Cache(c) => cache_cmd(&env, c),
        Command::Bench(b) => bench_cmd(&env, b).await,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code().clamp(0, 255) as u8);
        }
    };
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::from(1);
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Operational(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
