use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fheprof_core::flamegraph::{ingest, parse_perf_script, render_svg, SvgOptions};
use fheprof_core::model::{aggregate_geomean, breakdown, compare_algorithms, CostKey};
use fheprof_core::orchestrator::{
    cost_table, execute_plan, generate_sweep, load_denoised, predict_from_store, report, validate_benchmark, EventSpec,
    ExecutionSummary, ReportKind, ResultStore, RowFilter, RunPlan, SweepSpec,
};
use fheprof_core::profiler::Profiler;
use fheprof_core::registry::{
    AbstractionLevel, ConfigOverrides, CryptoConfig, OpCountManifest, Registry, SecurityStandard,
};

#[derive(Parser)]
#[command(
    name = "fheprof",
    version,
    about = "Profile CKKS benchmarks and predict application cost"
)]
struct Cli {
    /// Results store directory.
    #[arg(long, global = true, default_value = "fheprof-results")]
    store: PathBuf,
    /// Benchmark registry directory (defaults to the built-in catalog).
    #[arg(long, global = true)]
    registry: Option<PathBuf>,
    /// Runner executable used for every benchmark.
    #[arg(long, global = true)]
    runner: Option<String>,
    /// Increase log verbosity.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect the benchmark registry.
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Plan or run a parameter sweep.
    #[command(subcommand)]
    Sweep(SweepCmd),
    /// Profile one benchmark.
    Profile(ProfileArgs),
    /// Record call stacks and render a flame graph.
    Flamegraph(FlameArgs),
    /// Predict cost from stored primitive measurements.
    Predict {
        /// Benchmark name or manifest file.
        target: String,
        /// Key, e.g. `n=16,l=10,batch=4096,sec=none,t=8`.
        #[arg(long)]
        at: String,
    },
    /// Compare predictions with stored measurements.
    Validate {
        #[arg(required = true)]
        benchmarks: Vec<String>,
    },
    /// Compare two algorithms by predicted cost.
    Compare {
        a: String,
        b: String,
        /// Key for `a` (and for `b` unless `--at-b` is given).
        #[arg(long)]
        at: String,
        #[arg(long)]
        at_b: Option<String>,
    },
    /// Summarize the store: overhead, prediction or series.
    Report {
        kind: ReportKind,
        /// Output directory for series files.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum BenchCmd {
    List {
        #[arg(long)]
        level: Option<AbstractionLevel>,
    },
    Show {
        name: String,
    },
}

#[derive(Subcommand)]
enum SweepCmd {
    /// Print the run plan for a sweep specification.
    Plan {
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execute a sweep specification or a saved plan (`.json`).
    Run { spec: PathBuf },
}

#[derive(Args)]
struct PointArgs {
    /// Configuration overrides, e.g. `n=14,l=5`.
    #[arg(long)]
    at: Option<String>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    threads: Vec<u32>,
    #[arg(long, default_value_t = fheprof_core::orchestrator::DEFAULT_RUNS_PER_POINT)]
    runs: u32,
    /// Fixed primitive repetition count instead of calibration.
    #[arg(long)]
    reps: Option<u64>,
}

#[derive(Args)]
struct ProfileArgs {
    benchmark: String,
    #[command(flatten)]
    point: PointArgs,
    /// Events to count: `default` or a comma-separated list.
    #[arg(long)]
    events: Option<String>,
    /// Hardware counters available at once.
    #[arg(long, default_value_t = fheprof_core::profiler::DEFAULT_COUNTER_BUDGET)]
    budget: usize,
    /// Also run the call-stack pass.
    #[arg(long)]
    stacks: bool,
}

#[derive(Args)]
struct FlameArgs {
    /// Benchmark to profile; omit with `--from`.
    benchmark: Option<String>,
    #[command(flatten)]
    point: PointArgs,
    /// Fold an existing `perf script` dump instead of profiling.
    #[arg(long)]
    from: Option<PathBuf>,
    /// Output prefix for `.folded` and `.svg` (with `--from`).
    #[arg(long, default_value = "flamegraph")]
    out: PathBuf,
}

fn load_registry(cli: &Cli) -> Result<Registry> {
    let reg = match &cli.registry {
        Some(dir) => Registry::from_dir(dir)?,
        None => Registry::builtin(),
    };
    Ok(match &cli.runner {
        Some(r) => reg.with_runner(r.clone()),
        None => reg,
    })
}

/// Parses `n=16,l=10,batch=4096,sec=none,t=8`.
fn parse_at(text: &str) -> Result<(ConfigOverrides, u32)> {
    let mut ov = ConfigOverrides::default();
    let mut threads = 1;
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .with_context(|| format!("expected key=value, got `{part}`"))?;
        let bad = || format!("bad value `{v}` for `{k}`");
        match k.trim() {
            "n" | "log2_ring_dim" => ov.log2_ring_dim = Some(v.parse().with_context(bad)?),
            "l" | "depth" => ov.depth = Some(v.parse().with_context(bad)?),
            "b" | "batch" | "batch_size" => ov.batch_size = Some(v.parse().with_context(bad)?),
            "sec" | "security" => {
                ov.security_standard = Some(v.parse::<SecurityStandard>().map_err(anyhow::Error::msg)?)
            }
            "t" | "threads" => threads = v.parse().with_context(bad)?,
            other => bail!("unknown key `{other}` (n, l, batch, sec, t)"),
        }
    }
    if threads < 1 {
        bail!("thread count must be at least 1");
    }
    Ok((ov, threads))
}

/// Resolves a prediction target to a manifest and cost key.
fn target_key(registry: &Registry, target: &str, at: &str) -> Result<(OpCountManifest, String, CostKey)> {
    let path = Path::new(target);
    if registry.get(target).is_err() && path.exists() {
        let manifest = OpCountManifest::load(path)?;
        registry.check_manifest(&manifest)?;
        let base = CryptoConfig::new(16, 10, 4096);
        let (ov, t) = parse_at(at)?;
        let config = ov.apply(base);
        config
            .validate()
            .map_err(|v| anyhow::anyhow!("invalid configuration {config}: {v:?}"))?;
        return Ok((manifest, format!("file:{}", path.display()), CostKey::new(config, t)));
    }
    let spec = registry.get(target)?;
    let manifest = registry.get_manifest(target)?.clone();
    let (ov, t) = parse_at(at)?;
    let resolved = registry.resolve_config(spec, &ov)?;
    for w in &resolved.warnings {
        eprintln!("warning: {w}");
    }
    Ok((manifest, "registry".into(), CostKey::new(resolved.config, t)))
}

fn point_spec(benchmark: &str, p: &PointArgs, registry: &Registry) -> Result<SweepSpec> {
    registry.get(benchmark)?;
    let mut sweep = SweepSpec::new([benchmark]);
    if let Some(at) = &p.at {
        let (ov, _) = parse_at(at)?;
        sweep.log2_ring_dims = ov.log2_ring_dim.map(|v| vec![v]);
        sweep.depths = ov.depth.map(|v| vec![v]);
        sweep.batch_sizes = ov.batch_size.map(|v| vec![v]);
        if let Some(s) = ov.security_standard {
            sweep.security_standards = vec![s];
        }
    }
    sweep.thread_counts = p.threads.clone();
    sweep.runs_per_point = p.runs;
    sweep.repetitions = p.reps;
    Ok(sweep)
}

fn run_plan(plan: &RunPlan, registry: &Registry, store: &Path) -> Result<ExecutionSummary> {
    for d in &plan.dropped {
        eprintln!("dropped {} at {}: {}", d.benchmark, d.requested, d.reason);
    }
    for w in &plan.warnings {
        eprintln!("warning: {w}");
    }
    let mut store = ResultStore::open(store)?;
    let profiler = Profiler::new();
    if !profiler.has_energy() {
        eprintln!("note: no package energy interface found; energy columns will be empty");
    }
    let summary = execute_plan(plan, registry, &profiler, &mut store)?;
    print!("{}", summary.render());
    Ok(summary)
}

fn print_points(store: &Path, plan: &RunPlan) -> Result<()> {
    let store = ResultStore::open_read_only(store)?;
    for (point, m, _) in load_denoised(&store, &RowFilter::default())? {
        if !plan.points.iter().any(|p| p.id() == point) {
            continue;
        }
        print!("{point}: ROI {:.6} s (setup {:.6} s)", m.roi_time, m.setup_time);
        if let Some(e) = m.roi_energy {
            print!(", {e:.3} J");
        }
        if let Some(p) = m.avg_power {
            print!(", {p:.2} W");
        }
        if let Some(ipc) = m.ipc {
            print!(", IPC {ipc:.3}");
        }
        if let Some(t) = m.per_call_time {
            print!(", {t:.6e} s/call over {} calls", m.calls);
        }
        println!();
    }
    Ok(())
}

fn exit_for(summary: &ExecutionSummary) -> ExitCode {
    if summary.failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let registry = load_registry(&cli)?;
    match &cli.command {
        Command::Bench(BenchCmd::List { level }) => {
            for s in registry.list(*level) {
                println!(
                    "{:<24} {:<15} {:<30} {}",
                    s.name,
                    s.level,
                    s.title,
                    s.default_config.label()
                );
            }
        }
        Command::Bench(BenchCmd::Show { name }) => {
            let s = registry.get(name)?;
            println!("name:        {}", s.name);
            println!("title:       {}", s.title);
            println!("level:       {}", s.level);
            println!("runner:      {}", s.runner);
            println!("defaults:    {}", s.default_config.label());
            if !s.description.is_empty() {
                println!("description: {}", s.description);
            }
            for (k, v) in &s.extra_params {
                println!("param:       {k} = {v}");
            }
            if let Some(m) = &s.manifest {
                println!("manifest:");
                for (p, c) in &m.counts {
                    println!("  {p:<24} {c}");
                }
            }
        }
        Command::Sweep(SweepCmd::Plan { spec, out }) => {
            let plan = generate_sweep(&SweepSpec::load(spec)?, &registry)?;
            for d in &plan.dropped {
                eprintln!("dropped {} at {}: {}", d.benchmark, d.requested, d.reason);
            }
            let json = plan.to_json();
            match out {
                Some(p) => std::fs::write(p, json).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{json}"),
            }
        }
        Command::Sweep(SweepCmd::Run { spec }) => {
            let plan = if spec.extension().is_some_and(|e| e == "json") {
                RunPlan::from_json(&std::fs::read_to_string(spec)?)?
            } else {
                generate_sweep(&SweepSpec::load(spec)?, &registry)?
            };
            let summary = run_plan(&plan, &registry, &cli.store)?;
            return Ok(exit_for(&summary));
        }
        Command::Profile(args) => {
            let mut sweep = point_spec(&args.benchmark, &args.point, &registry)?;
            sweep.events = args.events.as_ref().map(|e| EventSpec {
                names: if e == "default" {
                    Vec::new()
                } else {
                    e.split(',').map(|s| s.trim().to_string()).collect()
                },
                budget: args.budget,
            });
            sweep.record_stacks = args.stacks;
            let plan = generate_sweep(&sweep, &registry)?;
            let summary = run_plan(&plan, &registry, &cli.store)?;
            print_points(&cli.store, &plan)?;
            return Ok(exit_for(&summary));
        }
        Command::Flamegraph(args) => {
            if let Some(dump) = &args.from {
                let text = std::fs::read_to_string(dump).with_context(|| format!("reading {}", dump.display()))?;
                let profile = ingest(parse_perf_script(&text)?)?;
                let title = dump.display().to_string();
                let folded = args.out.with_extension("folded");
                let svg = args.out.with_extension("svg");
                std::fs::write(&folded, profile.to_folded_text())?;
                std::fs::write(&svg, render_svg(&profile, &title, &SvgOptions::default())?)?;
                for (f, share) in profile.top_functions(10)? {
                    println!("{:>6.2}%  {f}", 100.0 * share);
                }
                println!("wrote {} and {}", folded.display(), svg.display());
                return Ok(ExitCode::SUCCESS);
            }
            let Some(bench) = &args.benchmark else {
                bail!("give a benchmark to profile or --from <perf script dump>");
            };
            let mut sweep = point_spec(bench, &args.point, &registry)?;
            sweep.record_stacks = true;
            let plan = generate_sweep(&sweep, &registry)?;
            let summary = run_plan(&plan, &registry, &cli.store)?;
            println!("flame graphs under {}", cli.store.join("stacks").display());
            return Ok(exit_for(&summary));
        }
        Command::Predict { target, at } => {
            let (manifest, source, key) = target_key(&registry, target, at)?;
            let mut store = ResultStore::open(&cli.store)?;
            let (p, elapsed) = predict_from_store(&mut store, &registry, &manifest, &source, &key)?;
            println!("prediction for {} at {key} ({elapsed:.3e} s to evaluate)", p.benchmark);
            println!("  time    {:.6} s", p.total_time);
            match p.total_energy {
                Some(e) => println!("  energy  {e:.6} J"),
                None => println!("  energy  n/a (no energy costs at this key)"),
            }
            if p.total_time > 0.0 {
                for (prim, share) in breakdown(&p)? {
                    println!("  {:>7.2}%  {prim}", 100.0 * share);
                }
            }
        }
        Command::Validate { benchmarks } => {
            let mut store = ResultStore::open(&cli.store)?;
            let (mut time_errs, mut energy_errs) = (Vec::new(), Vec::new());
            for b in benchmarks {
                let (outcomes, gaps) = validate_benchmark(&mut store, &registry, b)?;
                for o in &outcomes {
                    print!(
                        "{} at {}: predicted {:.6} s, measured {:.6} s, error {:+.2}%",
                        o.benchmark,
                        o.key,
                        o.prediction.total_time,
                        o.measured_time,
                        100.0 * o.error.time
                    );
                    if let Some(e) = o.error.energy {
                        print!(", energy error {:+.2}%", 100.0 * e);
                        energy_errs.push(e);
                    }
                    if let Some((c, src)) = &o.cosine {
                        print!(", cosine {c:.4} ({src})");
                    }
                    println!();
                    time_errs.push(o.error.time);
                }
                for g in gaps {
                    println!("gap: {g}");
                }
            }
            if !time_errs.is_empty() {
                println!(
                    "geomean time error {:+.2}% over {} points (ratio geomean minus one)",
                    100.0 * aggregate_geomean(&time_errs)?,
                    time_errs.len()
                );
            }
            if !energy_errs.is_empty() {
                println!("geomean energy error {:+.2}%", 100.0 * aggregate_geomean(&energy_errs)?);
            }
        }
        Command::Compare { a, b, at, at_b } => {
            let (ma, _, ka) = target_key(&registry, a, at)?;
            let (mb, _, kb) = target_key(&registry, b, at_b.as_deref().unwrap_or(at))?;
            let store = ResultStore::open_read_only(&cli.store)?;
            let table = cost_table(&store, &registry)?;
            let c = compare_algorithms(&ma, &ka, &mb, &kb, &table)?;
            println!("{a} at {ka} vs {b} at {kb}");
            println!("  speedup of {b}: {:.2}×", c.speedup);
            match c.energy_ratio {
                Some(r) => println!("  energy ratio:  {r:.2}×"),
                None => println!("  energy ratio:  n/a"),
            }
        }
        Command::Report { kind, out } => {
            let store = ResultStore::open_read_only(&cli.store)?;
            print!("{}", report(&store, *kind, out.as_deref())?.render());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
