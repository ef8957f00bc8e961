//! `zng-sim`: trace generation, platform runs, parameter sweeps.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 1 runtime error.

mod manifest;
mod sweep;

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use zng_core::config::{PlatformConfig, PlatformKind};
use zng_core::engine::{run, run_with, summarize, ComparisonRow, MetricsReport, RunOptions};
use zng_core::error::{SimError, TraceError};
use zng_core::ftl::dbmt_footprint;
use zng_core::trace::{generate_trace, read_ratio, write_trace};

use manifest::{load_config, load_spec, RunManifest, TraceSource};

#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn usage(msg: impl Display) -> Self {
        Failure::Usage(anyhow::anyhow!("{msg}"))
    }

    pub fn from_sim(e: SimError) -> Self {
        match e {
            SimError::Config(_) | SimError::Trace(TraceError::Spec(_)) => Failure::Usage(e.into()),
            other => Failure::Runtime(other.into()),
        }
    }

    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

fn io(e: anyhow::Error) -> Failure {
    Failure::Runtime(e)
}

#[derive(Parser)]
#[command(name = "zng-sim", version, about = "Trace-driven simulator of GPU memory backed by Z-NAND flash")]
struct Cli {
    /// Upper bound on simulations run in parallel.
    #[arg(long, env = "ZNG_SIM_THREADS", global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct RunFlags {
    /// Simulator config (JSON); omitted fields keep the Table I defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trace file, or a generator spec ending in `.json`.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for generated traces.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated platform names.
    #[arg(long, value_delimiter = ',')]
    platforms: Option<Vec<String>>,
    /// Time-series bucket length in cycles.
    #[arg(long)]
    epoch: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a trace from a JSON spec and write it in binary form.
    TraceGen {
        /// Generator spec (JSON).
        spec: PathBuf,
        /// Trace file to write.
        #[arg(long)]
        out: PathBuf,
        /// Replaces the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Replay one trace on each platform and write one report per platform.
    Run {
        /// Run manifest (JSON); flags override its fields.
        manifest: Option<PathBuf>,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Replay one trace over a grid of knob values.
    Sweep {
        /// Run manifest (JSON); the platform list defaults to zng.
        manifest: Option<PathBuf>,
        /// JSON object mapping knob names to value lists.
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Extra axis as knob=v1,v2,... (repeatable).
        #[arg(long = "set")]
        set: Vec<String>,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Check a config (and optionally a manifest) without running anything.
    Validate {
        /// Simulator config (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run manifest to check, including its trace source.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Print the resolved config with every default filled in.
        #[arg(long)]
        print: bool,
    },
    /// Run flash platforms and dump their DBMT/LBMT state.
    DumpTables {
        /// Run manifest (JSON).
        manifest: Option<PathBuf>,
        #[command(flatten)]
        flags: RunFlags,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli
        .threads
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let result = match cli.command {
        Command::TraceGen { spec, out, seed } => trace_gen(&spec, &out, seed),
        Command::Run { manifest, flags } => resolve(manifest.as_deref(), flags, None).and_then(|m| run_cmd(&m, threads)),
        Command::Sweep { manifest, grid, set, flags } => {
            resolve(manifest.as_deref(), flags, Some("zng")).and_then(|m| sweep_cmd(&m, grid.as_deref(), &set, threads))
        }
        Command::Validate { config, manifest, print } => validate(config.as_deref(), manifest.as_deref(), print),
        Command::DumpTables { manifest, flags } => {
            resolve(manifest.as_deref(), flags, Some("zng")).and_then(|m| dump_tables(&m, threads))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Usage(e) | Failure::Runtime(e)) = &f;
            eprintln!("error: {e:#}");
            ExitCode::from(f.code())
        }
    }
}

/// Merges a manifest file with command-line overrides. `default_platform`
/// replaces the all-platforms default when neither source names platforms.
fn resolve(path: Option<&Path>, flags: RunFlags, default_platform: Option<&str>) -> Result<RunManifest, Failure> {
    let mut m = match path {
        Some(p) => RunManifest::load(p)?,
        None => {
            let out = flags.out.clone().ok_or_else(|| Failure::usage("--out is required without a manifest"))?;
            let mut m: RunManifest = serde_json::from_value(json!({ "out": out })).expect("minimal manifest");
            if let Some(p) = default_platform {
                m.platforms = vec![p.to_string()];
            }
            m
        }
    };
    if let Some(c) = flags.config {
        m.config = Some(c);
    }
    if let Some(t) = flags.trace {
        m.trace = Some(TraceSource::File(t));
    }
    if let Some(o) = flags.out {
        m.out = o;
    }
    if flags.seed.is_some() {
        m.seed = flags.seed;
    }
    if let Some(p) = flags.platforms {
        m.platforms = p;
    }
    if flags.epoch.is_some() {
        m.epoch = flags.epoch;
    }
    Ok(m)
}

/// Maps `f` over `items` on up to `threads` workers, keeping input order.
fn parallel_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                slots.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("no worker panicked").into_iter().map(|r| r.expect("every item mapped")).collect()
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display())).map_err(io)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display())).map_err(io)
}

fn trace_gen(spec_path: &Path, out: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let mut spec = load_spec(spec_path)?;
    if let Some(s) = seed {
        spec = spec.with_seed(s);
    }
    let trace = generate_trace(&spec).map_err(|e| Failure::Usage(e.into()))?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_trace(out, &trace).with_context(|| format!("writing {}", out.display())).map_err(io)?;
    let reads = trace.iter().filter(|r| r.is_read()).count();
    let mut apps: Vec<u8> = trace.iter().map(|r| r.app_id).collect();
    apps.sort_unstable();
    apps.dedup();
    let summary = json!({
        "out": out,
        "requests": trace.len(),
        "reads": reads,
        "writes": trace.len() - reads,
        "read_ratio": read_ratio(&trace),
        "apps": apps,
        "seed": spec.seed,
    });
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(())
}

fn run_cmd(m: &RunManifest, threads: usize) -> Result<(), Failure> {
    let kinds = m.platforms()?;
    let sim = m.sim_config()?;
    let trace = m.trace()?;
    let configs: Vec<PlatformConfig> = kinds.iter().map(|&k| PlatformConfig::new(k, sim.clone())).collect();
    for c in &configs {
        c.validate().map_err(Failure::from_sim)?;
    }
    create_dir(&m.out)?;
    let reports = parallel_map(&configs, threads, |c| run(c, &trace));
    let reports: Vec<MetricsReport> = reports
        .into_iter()
        .zip(&kinds)
        .map(|(r, k)| r.map_err(Failure::from_sim).map_err(|f| annotate(f, k.name())))
        .collect::<Result<_, _>>()?;
    for r in &reports {
        write(&m.out.join(format!("{}.json", r.platform)), r.to_json())?;
        write(&m.out.join(format!("{}.timeseries.csv", r.platform)), r.time_series.to_csv())?;
    }
    let rows = summarize(&reports);
    write_summary(&m.out.join("summary.csv"), &rows)?;
    write(&m.out.join("manifest.json"), serde_json::to_string_pretty(m).expect("manifest serializes"))?;
    print_summary(&rows, trace.len());
    Ok(())
}

fn annotate(f: Failure, platform: &str) -> Failure {
    match f {
        Failure::Usage(e) => Failure::Usage(e.context(format!("platform {platform}"))),
        Failure::Runtime(e) => Failure::Runtime(e.context(format!("platform {platform}"))),
    }
}

fn write_summary(path: &Path, rows: &[ComparisonRow]) -> Result<(), Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| io(e.into()))?;
    }
    write(path, w.into_inner().map_err(|e| io(anyhow::anyhow!("{e}")))?)
}

fn print_summary(rows: &[ComparisonRow], requests: usize) {
    let reference = rows.iter().find(|r| r.platform == "zng").or(rows.first()).map_or("zng", |r| r.platform.as_str());
    println!("{requests} requests; performance normalized to {reference} (higher is faster)");
    println!("{:<10} {:>16} {:>11} {:>12}", "platform", "completion_cyc", "normalized", "array_GB/s");
    for r in rows {
        println!(
            "{:<10} {:>16} {:>11.3} {:>12.2}",
            r.platform, r.completion_cycles, r.normalized_performance, r.array_bandwidth_gbps
        );
    }
}

fn sweep_cmd(m: &RunManifest, grid: Option<&Path>, set: &[String], threads: usize) -> Result<(), Failure> {
    let mut axes = match grid {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading grid {}", p.display())).map_err(Failure::Usage)?;
            sweep::parse_grid(&text)?
        }
        None => Vec::new(),
    };
    for s in set {
        axes.push(sweep::parse_set(s)?);
    }
    if axes.is_empty() {
        return Err(Failure::usage(format!("empty grid; give --grid or --set with one of: {}", sweep::KNOBS.join(", "))));
    }
    let kinds = m.platforms()?;
    let sim = m.sim_config()?;
    let points = sweep::points(&axes);
    let mut jobs = Vec::new();
    for (i, p) in points.iter().enumerate() {
        for &k in &kinds {
            jobs.push((i, k, sweep::configure(k, &sim, p)?));
        }
    }
    let trace = m.trace()?;
    create_dir(&m.out)?;
    let reports = parallel_map(&jobs, threads, |(_, _, cfg)| run(cfg, &trace));

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["point".to_string(), "platform".to_string()];
    header.extend(axes.iter().map(|a| a.knob.clone()));
    header.extend(
        [
            "completion_cycles",
            "mean_latency_cycles",
            "array_bandwidth_gbps",
            "array_reads",
            "write_redundancy",
            "l2_hit_rate",
            "prefetch_accuracy",
            "gc_events",
        ]
        .map(String::from),
    );
    w.write_record(&header).map_err(|e| io(e.into()))?;
    let mut best: Vec<(PlatformKind, usize, u64)> = Vec::new();
    for ((i, k, _), r) in jobs.iter().zip(reports) {
        let r = r.map_err(Failure::from_sim).map_err(|f| annotate(f, k.name()))?;
        let l2 = &r.l2;
        let hit_rate = if l2.hits + l2.misses == 0 { 0.0 } else { l2.hits as f64 / (l2.hits + l2.misses) as f64 };
        let mut row = vec![i.to_string(), k.name().to_string()];
        row.extend(points[*i].iter().map(|(_, v)| sweep::render(v)));
        row.extend([
            r.completion_cycles.to_string(),
            format!("{:.3}", r.mean_latency_cycles),
            format!("{:.4}", r.array.bandwidth_gbps),
            r.array.reads.to_string(),
            format!("{:.4}", r.write_redundancy),
            format!("{hit_rate:.4}"),
            format!("{:.4}", r.prefetch.accuracy),
            r.gc.len().to_string(),
        ]);
        w.write_record(&row).map_err(|e| io(e.into()))?;
        match best.iter_mut().find(|b| b.0 == *k) {
            Some(b) if r.completion_cycles < b.2 => *b = (*k, *i, r.completion_cycles),
            Some(_) => {}
            None => best.push((*k, *i, r.completion_cycles)),
        }
    }
    write(&m.out.join("sweep.csv"), w.into_inner().map_err(|e| io(anyhow::anyhow!("{e}")))?)?;
    write(&m.out.join("manifest.json"), serde_json::to_string_pretty(m).expect("manifest serializes"))?;
    println!("{} grid points x {} platforms", points.len(), kinds.len());
    for (k, i, cycles) in best {
        let knobs: Vec<String> = points[i].iter().map(|(n, v)| format!("{n}={}", sweep::render(v))).collect();
        println!("best {}: point {i} ({}) at {cycles} cycles", k.name(), knobs.join(", "));
    }
    Ok(())
}

fn validate(config: Option<&Path>, manifest: Option<&Path>, print: bool) -> Result<(), Failure> {
    let sim = match manifest {
        Some(p) => {
            let mut m = RunManifest::load(p)?;
            if config.is_some() {
                m.config = config.map(Path::to_path_buf);
            }
            for k in m.platforms()? {
                PlatformConfig::new(k, m.sim_config()?).validate().map_err(Failure::from_sim)?;
            }
            if let Some(TraceSource::File(t)) = &m.trace {
                if t.extension().is_some_and(|e| e == "json") {
                    load_spec(t)?;
                } else if !t.exists() {
                    return Err(Failure::usage(format!("trace file {} does not exist", t.display())));
                }
            }
            m.sim_config()?
        }
        None => load_config(config)?,
    };
    for k in PlatformKind::ALL {
        PlatformConfig::new(k, sim.clone()).validate().map_err(Failure::from_sim)?;
    }
    if print {
        println!("{}", serde_json::to_string_pretty(&sim).expect("config serializes"));
    } else {
        let g = &sim.geometry;
        println!(
            "ok: {} channels x {} packages x {} dies x {} planes, {} blocks x {} pages, {:.1} GiB",
            g.channels,
            g.packages_per_channel,
            g.dies,
            g.planes,
            g.blocks,
            g.pages,
            g.capacity_bytes() as f64 / (1u64 << 30) as f64
        );
    }
    Ok(())
}

fn dump_tables(m: &RunManifest, threads: usize) -> Result<(), Failure> {
    let kinds = m.platforms()?;
    if let Some(k) = kinds.iter().find(|k| !k.is_flash()) {
        return Err(Failure::usage(format!("{k} has no flash translation tables")));
    }
    let sim = m.sim_config()?;
    let trace = m.trace()?;
    create_dir(&m.out)?;
    let configs: Vec<PlatformConfig> = kinds.iter().map(|&k| PlatformConfig::new(k, sim.clone())).collect();
    let outs = parallel_map(&configs, threads, |c| run_with(c, &trace, RunOptions { dump_tables: true, ..Default::default() }));
    let footprint = dbmt_footprint(&sim.geometry);
    for (out, k) in outs.into_iter().zip(&kinds) {
        let out = out.map_err(Failure::from_sim).map_err(|f| annotate(f, k.name()))?;
        let doc = json!({ "platform": k.name(), "footprint": footprint, "tables": out.tables });
        write(&m.out.join(format!("{}.tables.json", k.name())), serde_json::to_string_pretty(&doc).expect("tables serialize"))?;
    }
    println!(
        "block table {} B, page table {} B (ratio {:.1}); tables for {} platform(s) in {}",
        footprint.dbmt_bytes,
        footprint.page_table_bytes,
        footprint.ratio,
        kinds.len(),
        m.out.display()
    );
    Ok(())
}
