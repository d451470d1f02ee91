//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL line
//! per criterion and exits nonzero if any failed.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use fheprof_core::denoise::{denoise, derive};
use fheprof_core::flamegraph::{ingest, parse_perf_script, render_svg, SvgOptions};
use fheprof_core::model::{
    aggregate_geomean, breakdown, cosine_similarity, predict, CostEntry, CostKey, PrimitiveCostTable,
};
use fheprof_core::orchestrator::{
    execute_plan, fmt_percent, generate_sweep, report, validate_benchmark, EventSpec, ExecutionSummary, ReportKind,
    ResultStore, SweepSpec,
};
use fheprof_core::profiler::{
    aggregate_median, AttachedCounters, CounterBackend, MeasurementRecord, ProfileError, Profiler, ProfilingPass,
};
use fheprof_core::registry::{CryptoConfig, OpCountManifest, Registry};
use fheprof_core::runner::{RunPhase, MODEL_PARAM};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn synth_registry() -> Registry {
    Registry::builtin().with_runner(env!("CARGO_BIN_EXE_fheprof-synth"))
}

fn time_profiler() -> Profiler {
    Profiler::new().with_energy(None)
}

// 1. Manifest fidelity

fn manifest_fidelity() {
    let text = std::fs::read_to_string(fixture("op_counts.csv")).unwrap();
    let mut rows = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = rows.headers().unwrap().iter().map(str::to_string).collect();
    let benches = &header[1..];
    assert_eq!(benches.len(), 7);
    let registry = Registry::builtin();
    let primitives = registry.primitive_names();
    let mut seen = 0;
    for rec in rows.records() {
        let rec = rec.unwrap();
        let prim = &rec[0];
        assert!(primitives.contains(&prim), "{prim} is not a registered primitive");
        for (i, bench) in benches.iter().enumerate() {
            let want: u64 = rec[i + 1].parse().unwrap();
            let got = registry.get_manifest(bench).unwrap().count(prim);
            assert_eq!(got, want, "{bench} / {prim}");
            seen += 1;
        }
    }
    assert_eq!(seen, 14 * 7);
    assert_eq!(primitives.len(), 14);
    // nothing outside the table
    for bench in benches {
        for (p, &c) in &registry.get_manifest(bench).unwrap().counts {
            assert!(c == 0 || primitives.contains(&p.as_str()), "{bench} lists unknown {p}");
        }
    }
}

// 2. Additive-model oracle

fn random_case(rng: &mut ChaCha8Rng, prims: &[&str], key: &CostKey) -> (OpCountManifest, PrimitiveCostTable) {
    let mut table = PrimitiveCostTable::new();
    for p in prims {
        let time = 10f64.powf(rng.gen_range(-7.0..0.0));
        let energy = rng.gen_bool(0.8).then(|| time * rng.gen_range(5.0..150.0));
        table.insert(*key, *p, CostEntry { time, energy }).unwrap();
    }
    let mut m = OpCountManifest::new("random");
    for p in prims {
        if rng.gen_bool(0.6) {
            m.add(*p, rng.gen_range(0..10_000));
        }
    }
    (m, table)
}

fn brute_force(m: &OpCountManifest, table: &PrimitiveCostTable, key: &CostKey) -> (f64, Option<f64>) {
    let mut t = 0.0;
    let mut e = Some(0.0);
    for (p, &c) in &m.counts {
        if c == 0 {
            continue;
        }
        let entry = table.get(key, p).unwrap();
        t += c as f64 * entry.time;
        e = e.zip(entry.energy).map(|(acc, x)| acc + c as f64 * x);
    }
    (t, e)
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn additive_model_oracle() {
    let registry = Registry::builtin();
    let prims = registry.primitive_names();
    let key = CostKey::new(CryptoConfig::new(16, 10, 4096), 8);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for case in 0..1000 {
        let (m, table) = random_case(&mut rng, &prims, &key);
        let p = predict(&m, &table, &key).unwrap();
        let (bt, be) = brute_force(&m, &table, &key);
        assert!(
            rel_close(p.total_time, bt, 1e-12),
            "case {case}: {} vs {bt}",
            p.total_time
        );
        match (p.total_energy, be) {
            (Some(x), Some(y)) => assert!(rel_close(x, y, 1e-12), "case {case} energy"),
            (None, None) => {}
            other => panic!("case {case}: energy presence differs {other:?}"),
        }

        // homogeneity in counts and in costs
        let k = rng.gen_range(2..50u64);
        let pk = predict(&m.scaled(k), &table, &key).unwrap();
        assert!(
            rel_close(pk.total_time, k as f64 * p.total_time, 1e-12),
            "case {case}: count scaling"
        );
        let f = rng.gen_range(0.1..10.0);
        let pf = predict(&m, &table.scaled(f), &key).unwrap();
        assert!(
            rel_close(pf.total_time, f * p.total_time, 1e-12),
            "case {case}: cost scaling"
        );

        // additivity over manifests
        let (m2, _) = random_case(&mut rng, &prims, &key);
        let p2 = predict(&m2, &table, &key).unwrap();
        let sum = predict(&m.merged(&m2), &table, &key).unwrap();
        assert!(
            rel_close(sum.total_time, p.total_time + p2.total_time, 1e-12),
            "case {case}: additivity"
        );

        // the dominant primitive survives uniform scaling
        if p.total_time > 0.0 {
            let top = breakdown(&p).unwrap()[0].0.clone();
            assert_eq!(
                breakdown(&pk).unwrap()[0].0,
                top,
                "case {case}: argmax under count scaling"
            );
            assert_eq!(
                breakdown(&pf).unwrap()[0].0,
                top,
                "case {case}: argmax under cost scaling"
            );
        }
    }
}

// 3. End-to-end synthetic closure

fn closure_run(noise: f64) -> Vec<(String, f64)> {
    let dir = tempfile::tempdir().unwrap();
    let registry = synth_registry();
    let micro = ["matrix-mult-32", "logistic-function", "sign-eval"];
    let mut prims: Vec<String> = Vec::new();
    for b in micro {
        for (p, &c) in &registry.get_manifest(b).unwrap().counts {
            if c > 0 && !prims.contains(p) {
                prims.push(p.clone());
            }
        }
    }
    let model = serde_json::json!({ "base_costs": default_costs(), "noise": noise });
    let point = |benches: Vec<String>| {
        let mut s = SweepSpec::new(benches);
        s.log2_ring_dims = Some(vec![14]);
        s.depths = Some(vec![5]);
        s.extra_params.insert(MODEL_PARAM.into(), model.clone());
        s
    };
    let profiler = time_profiler();
    let mut store = ResultStore::open(dir.path()).unwrap();
    for spec in [point(prims), point(micro.iter().map(|s| s.to_string()).collect())] {
        let plan = generate_sweep(&spec, &registry).unwrap();
        let summary = execute_plan(&plan, &registry, &profiler, &mut store).unwrap();
        assert!(summary.failures.is_empty(), "{:?}", summary.failures);
    }
    let mut errors = Vec::new();
    for b in micro {
        let (outcomes, gaps) = validate_benchmark(&mut store, &registry, b).unwrap();
        assert!(gaps.is_empty(), "{gaps:?}");
        assert_eq!(outcomes.len(), 1);
        errors.push((b.to_string(), outcomes[0].error.time));
    }
    errors
}

fn default_costs() -> BTreeMap<String, f64> {
    fheprof_core::runner::SyntheticCostModel::default().base_costs
}

fn synthetic_closure() {
    let exact = closure_run(0.0);
    println!("    noise 0%: {}", show(&exact));
    for (b, e) in &exact {
        assert!(e.abs() <= 0.05, "{b}: signed error {:+.2}%", 100.0 * e);
    }
    let noisy = closure_run(0.02);
    let g = aggregate_geomean(&noisy.iter().map(|(_, e)| *e).collect::<Vec<_>>()).unwrap();
    println!("    noise 2%: {} geomean {:+.2}%", show(&noisy), 100.0 * g);
    assert!(g.abs() <= 0.05, "geomean {:+.2}%", 100.0 * g);
}

fn show(errors: &[(String, f64)]) -> String {
    errors
        .iter()
        .map(|(b, e)| format!("{b} {:+.2}%", 100.0 * e))
        .collect::<Vec<_>>()
        .join(", ")
}

// 4. Denoiser arithmetic

fn rec(phase: RunPhase, wall: f64, run: i64) -> MeasurementRecord {
    MeasurementRecord {
        benchmark: "matrix-mult-32".into(),
        phase,
        pass: ProfilingPass::Runtime,
        config: CryptoConfig::new(16, 10, 4096),
        thread_count: 8,
        repetitions: 1,
        wall_time: wall,
        energy: None,
        event_counts: BTreeMap::new(),
        run_index: run,
        timestamp: DateTime::<Utc>::from_timestamp(1_700_000_000 + run, 0).unwrap(),
        exit_status: 0,
        inner_roi_seconds: None,
        dynamic_counts: BTreeMap::new(),
    }
}

fn aggregated(phase: RunPhase, walls: &[f64]) -> MeasurementRecord {
    let runs: Vec<_> = walls
        .iter()
        .enumerate()
        .map(|(i, &w)| rec(phase, w, i as i64))
        .collect();
    aggregate_median(&runs).unwrap()
}

fn denoiser_arithmetic() {
    let full = aggregated(RunPhase::Full, &[10.23, 10.18, 10.20, 10.31, 10.19]);
    let setup = aggregated(RunPhase::Setup, &[0.05, 0.04, 0.04, 0.03, 0.06]);
    assert_eq!(full.wall_time, 10.20);
    assert_eq!(setup.wall_time, 0.04);
    let m = derive(denoise(&full, &setup).unwrap());
    assert_eq!(format!("{:.2}", m.roi_time), "10.16");
    assert_eq!(format!("{:.2}", m.setup_time), "0.04");
    assert_eq!(fmt_percent(m.setup_overhead_percent().unwrap()), "0.39%");
    assert!(m.warnings.is_empty());

    // setup longer than the full run: clamped, with a warning
    let clamped = denoise(&aggregated(RunPhase::Full, &[0.03]), &setup).unwrap();
    assert_eq!(clamped.roi_time, 0.0);
    assert!(
        clamped.warnings.iter().any(|w| w.contains("clamped")),
        "{:?}",
        clamped.warnings
    );
    assert_eq!(clamped.setup_overhead_percent(), None);
}

// 5. Aggregators

fn aggregators() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for case in 0..100 {
        let n = rng.gen_range(1..40);
        let errs: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.6..0.6)).collect();
        // product form, independent of the log-sum implementation
        let oracle = errs.iter().map(|e| (1.0 + e).powf(1.0 / n as f64)).product::<f64>() - 1.0;
        let got = aggregate_geomean(&errs).unwrap();
        assert!((got - oracle).abs() <= 1e-12, "case {case}: {got} vs {oracle}");

        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let unit = |v: &[f64]| {
            let norm = v.iter().fold(0.0f64, |acc, x| acc.hypot(*x));
            v.iter().map(|x| x / norm).collect::<Vec<_>>()
        };
        let (ua, ub) = (unit(&a), unit(&b));
        let oracle: f64 = ua.iter().zip(&ub).map(|(x, y)| x * y).sum();
        let got = cosine_similarity(&a, &b).unwrap();
        assert!((got - oracle).abs() <= 1e-12, "case {case}: cosine {got} vs {oracle}");
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() <= 1e-12);
    }
    let g = aggregate_geomean(&[0.21, 0.0]).unwrap();
    assert!((g - 0.10).abs() <= 1e-12, "{g}");
    assert_eq!(cosine_similarity(&[0.2, 0.5, 0.3], &[0.2, 0.5, 0.3]).unwrap(), 1.0);
}

// 6. Flamegraph

fn flamegraph() {
    let text = std::fs::read_to_string(fixture("perf_script.txt")).unwrap();
    let golden = std::fs::read_to_string(fixture("perf_script.folded")).unwrap();
    let samples = parse_perf_script(&text).unwrap();
    let sample_count = samples.len() as u64;
    let profile = ingest(samples).unwrap();
    assert_eq!(
        profile.to_folded_text(),
        golden,
        "folded output differs from golden file"
    );
    assert_eq!(profile.total_weight, sample_count);
    assert_eq!(profile.lines.values().sum::<u64>(), sample_count);

    let opts = SvgOptions::default();
    let svg = render_svg(&profile, "fixture", &opts).unwrap();
    let frame = Regex::new(
        r#"<g data-depth="(\d+)"><title>[^<]* \((\d+) samples, [^<]*</title><rect x="([0-9.]+)" y="[0-9.]+" width="([0-9.]+)""#,
    )
    .unwrap();
    struct Frame {
        depth: usize,
        weight: u64,
        x: f64,
        w: f64,
        child_w: f64,
        child_weight: u64,
    }
    let mut frames: Vec<Frame> = Vec::new();
    let mut open: Vec<usize> = Vec::new();
    let eps = 1e-3;
    for c in frame.captures_iter(&svg) {
        let f = Frame {
            depth: c[1].parse().unwrap(),
            weight: c[2].parse().unwrap(),
            x: c[3].parse().unwrap(),
            w: c[4].parse().unwrap(),
            child_w: 0.0,
            child_weight: 0,
        };
        while open.last().is_some_and(|&i| frames[i].depth >= f.depth) {
            open.pop();
        }
        if let Some(&parent) = open.last() {
            let p = &mut frames[parent];
            assert_eq!(p.depth + 1, f.depth);
            assert!(
                f.x + eps >= p.x && f.x + f.w <= p.x + p.w + eps,
                "child escapes its parent"
            );
            p.child_w += f.w;
            p.child_weight += f.weight;
        } else {
            assert_eq!(f.depth, 0);
        }
        open.push(frames.len());
        frames.push(f);
    }
    assert!(!frames.is_empty());
    for f in &frames {
        assert!(f.child_w <= f.w + eps, "children wider than parent");
        assert!(f.child_weight <= f.weight, "children heavier than parent");
    }
    let roots: Vec<&Frame> = frames.iter().filter(|f| f.depth == 0).collect();
    assert_eq!(roots.iter().map(|f| f.weight).sum::<u64>(), sample_count);
    assert!((roots.iter().map(|f| f.w).sum::<f64>() - opts.width).abs() <= eps);
    // leaves carry the folded weights exactly
    let leaf_weight: u64 = frames.iter().map(|f| f.weight - f.child_weight).sum();
    assert_eq!(leaf_weight, sample_count);
}

// 7. Report fidelity

fn report_fidelity() {
    let store = ResultStore::open_read_only(fixture("store-logreg")).unwrap();
    let rep = report(&store, ReportKind::Prediction, None).unwrap();
    print!("{}", indent(&rep.text));
    assert!(rep.gaps.is_empty(), "{:?}", rep.gaps);
    let cell = Regex::new(r"([0-9.]+)×").unwrap();
    let speedup: f64 = cell.captures(&rep.text).expect("speedup cell")[1].parse().unwrap();
    assert!((speedup - 422.0).abs() <= 0.1, "{speedup}");
    assert!(rep.text.contains("422.0×"));
    assert!(rep.text.contains("253.2"));
}

fn indent(s: &str) -> String {
    s.lines().map(|l| format!("    {l}\n")).collect()
}

// 8. Orchestrator determinism and resume

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().unwrap() != ".writer.lock" {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                );
            }
        }
    }
    out
}

#[derive(Clone, Copy)]
struct CountingCounters;

struct Fixed(Vec<String>);

impl AttachedCounters for Fixed {
    fn finish(self: Box<Self>) -> Result<BTreeMap<String, u64>, ProfileError> {
        Ok(self.0.into_iter().map(|e| (e, 1_000_000)).collect())
    }
}

impl CounterBackend for CountingCounters {
    fn attach(&self, _pid: i32, group: &[String]) -> Result<Box<dyn AttachedCounters>, ProfileError> {
        Ok(Box::new(Fixed(group.to_vec())))
    }
}

fn check_formula(summary: &ExecutionSummary, want: u64) {
    assert!(summary.failures.is_empty(), "{:?}", summary.failures);
    assert_eq!(summary.expected_measured_executions, want);
    assert_eq!(summary.measured_executions, want);
}

fn orchestrator_determinism() {
    let registry = synth_registry();
    let text = r#"
benchmarks = ["EvalSub", "EvalAdd"]
log2_ring_dims = [13]
depths = [3]
batch_sizes = [1024]
thread_counts = [2, 1]
runs_per_point = 5
repetitions = 200
"#;
    let a = generate_sweep(&SweepSpec::parse(text).unwrap(), &registry)
        .unwrap()
        .to_json();
    let b = generate_sweep(&SweepSpec::parse(text).unwrap(), &registry)
        .unwrap()
        .to_json();
    assert_eq!(a.as_bytes(), b.as_bytes(), "plan is not byte-identical");
    let plan = fheprof_core::orchestrator::RunPlan::from_json(&a).unwrap();
    assert_eq!(plan.points.len(), 4);
    assert_eq!(plan.expected_executions(), 4 * 5 * 2);

    let dir = tempfile::tempdir().unwrap();
    let profiler = time_profiler();
    let first = {
        let mut store = ResultStore::open(dir.path()).unwrap();
        execute_plan(&plan, &registry, &profiler, &mut store).unwrap()
    };
    check_formula(&first, 40);
    let before = snapshot(dir.path());
    let second = {
        let mut store = ResultStore::open(dir.path()).unwrap();
        execute_plan(&plan, &registry, &profiler, &mut store).unwrap()
    };
    assert!(second.all_cached());
    assert_eq!(second.total_executions(), 0);
    assert_eq!(snapshot(dir.path()), before, "second execution changed the store");

    // with four counter groups: 5 × (1 + 4) × 2 per point
    let mut spec = SweepSpec::parse(text).unwrap();
    spec.benchmarks = vec!["EvalAdd".into()];
    spec.thread_counts = vec![1];
    spec.events = Some(EventSpec {
        names: Vec::new(),
        budget: 4,
    });
    let plan = generate_sweep(&spec, &registry).unwrap();
    assert_eq!(plan.expected_executions(), 50);
    let dir = tempfile::tempdir().unwrap();
    let mut store = ResultStore::open(dir.path()).unwrap();
    let summary = execute_plan(
        &plan,
        &registry,
        &time_profiler().with_counters(CountingCounters),
        &mut store,
    )
    .unwrap();
    check_formula(&summary, 50);
}

fn main() {
    let criteria: [(&str, fn()); 8] = [
        ("manifest fidelity", manifest_fidelity),
        ("additive-model oracle", additive_model_oracle),
        ("end-to-end synthetic closure", synthetic_closure),
        ("denoiser arithmetic", denoiser_arithmetic),
        ("aggregators", aggregators),
        ("flamegraph", flamegraph),
        ("report fidelity", report_fidelity),
        ("orchestrator determinism and resume", orchestrator_determinism),
    ];
    // honour a substring filter like the default harness does
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if filter.as_ref().is_some_and(|s| !name.contains(s.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(()) => println!("criterion {} {name}: PASS ({secs:.2} s)", i + 1),
            Err(e) => {
                failed += 1;
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("criterion {} {name}: FAIL ({secs:.2} s): {msg}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
