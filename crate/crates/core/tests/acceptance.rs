//! Acceptance suite: one PASS/FAIL line per primary criterion.
//!
//! Run with `cargo test -p elqa --test acceptance -- --nocapture` to see the
//! lines. Every tolerance and budget is pinned below.

mod common;

use std::time::{Duration, Instant};

use elqa::embedder::loss_from_scores;
use elqa::eval::{run_ablations, sweep_csv, train_retriever, EvalConfig, EvalReport, Pipeline, RetrieverConfig, SweepParam};
use elqa::generator::{GeneratorBackend, LexicalConfig};
use elqa::synthetic::{generate, SyntheticConfig};
use elqa::NGramEncoder;

const LOSS_TOLERANCE: f64 = 1e-9;
const GRADIENT_ENCODERS: usize = 50;
const LOSS_BUDGET: Duration = Duration::from_secs(10);

const RETRIEVAL_INSTANCES: usize = 100;
const RETRIEVAL_BUDGET: Duration = Duration::from_secs(30);

const MCP_CASES: usize = 1_000;
const MCP_BUDGET: Duration = Duration::from_secs(10);

const CEILING_N: [usize; 3] = [1, 5, 10];

const RECALL_AT_5_FLOOR: f64 = 0.95;
/// Full-pipeline lexical-heuristic accuracy on the default benchmark,
/// recorded at first implementation before this suite existed.
const PREREGISTERED_ACCURACY: f64 = 0.9375;
const ACCURACY_BAND: f64 = 0.02;
const BENCHMARK_BUDGET: Duration = Duration::from_secs(300);

const SWEEP_N: std::ops::RangeInclusive<usize> = 1..=10;

struct Line {
    criterion: &'static str,
    pass: bool,
    detail: String,
}

fn line(criterion: &'static str, pass: bool, detail: String) -> Line {
    println!("{} {criterion}: {detail}", if pass { "PASS" } else { "FAIL" });
    Line { criterion, pass, detail }
}

fn loss_correctness() -> Line {
    let started = Instant::now();
    let mut problems = Vec::new();
    for tau in [0.01, 0.1, 1.0] {
        let l = loss_from_scores(0.3, &[0.3], tau).unwrap();
        if (l - std::f64::consts::LN_2).abs() > LOSS_TOLERANCE {
            problems.push(format!("symmetric case at tau {tau}: {l}"));
        }
    }
    for k in 1..=32 {
        let l = loss_from_scores(0.1, &vec![0.1; k], 0.01).unwrap();
        if (l - ((k + 1) as f64).ln()).abs() > LOSS_TOLERANCE {
            problems.push(format!("{k} uniform negatives: {l}"));
        }
    }
    let worst = match common::gradient_check(GRADIENT_ENCODERS, 2024) {
        Ok(w) => w,
        Err(e) => {
            problems.push(e);
            f64::NAN
        }
    };
    let elapsed = started.elapsed();
    if elapsed > LOSS_BUDGET {
        problems.push(format!("took {elapsed:?}"));
    }
    line(
        "loss correctness",
        problems.is_empty(),
        format!(
            "ln 2 and ln(k+1) within {LOSS_TOLERANCE:e}; {GRADIENT_ENCODERS} encoders, worst gradient rel. error {worst:.2e}; {:.2}s{}",
            elapsed.as_secs_f64(),
            problems.iter().map(|p| format!("; {p}")).collect::<String>()
        ),
    )
}

fn retrieval_exactness() -> Line {
    let started = Instant::now();
    let results = [
        ("top_n", common::check_top_n(RETRIEVAL_INSTANCES, 31)),
        ("mine_hard_negatives", common::check_mine_hard_negatives(RETRIEVAL_INSTANCES, 32)),
        ("datastore query", common::check_store_query(RETRIEVAL_INSTANCES, 33)),
    ];
    let elapsed = started.elapsed();
    let mut problems: Vec<String> = results
        .iter()
        .filter_map(|(name, r)| r.as_ref().err().map(|e| format!("{name}: {e}")))
        .collect();
    if elapsed > RETRIEVAL_BUDGET {
        problems.push(format!("took {elapsed:?}"));
    }
    line(
        "retrieval exactness",
        problems.is_empty(),
        format!(
            "3 x {RETRIEVAL_INSTANCES} instances (up to 10,000 rows) vs brute force; {:.2}s{}",
            elapsed.as_secs_f64(),
            problems.iter().map(|p| format!("; {p}")).collect::<String>()
        ),
    )
}

fn mcp_structure() -> Line {
    let started = Instant::now();
    let result = common::mcp_structural_suite(MCP_CASES, 41);
    let elapsed = started.elapsed();
    let (pass, detail) = match result {
        Ok(c) => (
            elapsed <= MCP_BUDGET,
            format!(
                "{MCP_CASES} cases: {} consistency, {} swaps, {} renders, {} enhanced prompts, {} leakage checks; {:.2}s",
                c.consistency,
                c.swaps,
                c.renders,
                c.enhanced,
                c.leakage,
                elapsed.as_secs_f64()
            ),
        ),
        Err(e) => (false, e),
    };
    line("MCP structural suite", pass, detail)
}

/// Everything a benchmark run produces that must be reproducible.
struct BenchmarkRun {
    pipeline: Pipeline<NGramEncoder>,
    test: Vec<elqa::Mention>,
    recall_at_5: f64,
    ablations: Vec<EvalReport>,
    sweep_csv: String,
    sweep: Vec<f64>,
    elapsed: Duration,
}

fn run_benchmark() -> BenchmarkRun {
    let started = Instant::now();
    let bench = generate(&SyntheticConfig::default());
    let trained = train_retriever(&bench.ontology, &bench.train, &RetrieverConfig::default()).unwrap();
    let pipeline = Pipeline::new(bench.ontology.clone(), trained.encoder, bench.train.clone()).unwrap();
    let cfg = EvalConfig::default();
    let store = pipeline.datastore(cfg.n_options, cfg.display).unwrap();
    let generator = GeneratorBackend::Lexical(LexicalConfig::default());
    let ablations = run_ablations(&bench.test, &pipeline.engine(Some(&store), &generator), &cfg, None).unwrap();
    let values: Vec<usize> = SWEEP_N.collect();
    let points = pipeline.sweep(SweepParam::N, &values, &bench.test, &generator, &cfg).unwrap();
    let recall_at_5 = pipeline.recall_at(&bench.test, 5).unwrap();
    BenchmarkRun {
        recall_at_5,
        ablations,
        sweep_csv: sweep_csv(SweepParam::N, &points),
        sweep: points.iter().map(|p| p.accuracy).collect(),
        test: bench.test,
        pipeline,
        elapsed: started.elapsed(),
    }
}

fn oracle_ceiling(run: &BenchmarkRun) -> Line {
    let oracle = GeneratorBackend::ScriptedOracle;
    let mut parts = Vec::new();
    let mut pass = true;
    for n in CEILING_N {
        let cfg = EvalConfig {
            n_options: n,
            ..EvalConfig::default()
        };
        let store = run.pipeline.datastore(n, cfg.display).unwrap();
        let report = elqa::eval::evaluate("oracle", &run.test, &run.pipeline.engine(Some(&store), &oracle), &cfg).unwrap();
        let recall = run.pipeline.recall_at(&run.test, n).unwrap();
        let exact = report.accuracy == recall && report.accuracy == report.gold_in_candidates_rate;
        pass &= exact;
        parts.push(format!("N={n}: accuracy {:.4} recall {:.4}", report.accuracy, recall));
    }
    line("oracle ceiling", pass, parts.join(", "))
}

fn synthetic_benchmark(run: &BenchmarkRun) -> Line {
    let acc = |label: &str| run.ablations.iter().find(|r| r.label == label).unwrap().accuracy;
    let (full, no_knn, random, names) = (acc("full"), acc("no-knn"), acc("random-neighbors"), acc("generate-names"));
    let checks = [
        (run.recall_at_5 >= RECALL_AT_5_FLOOR, format!("recall@5 {:.4} (>= {RECALL_AT_5_FLOOR})", run.recall_at_5)),
        (
            (full - PREREGISTERED_ACCURACY).abs() <= ACCURACY_BAND + 1e-12,
            format!("heuristic accuracy {full:.4} (pre-registered {PREREGISTERED_ACCURACY} +- {ACCURACY_BAND})"),
        ),
        (full >= no_knn, format!("full {full:.4} >= no-knn {no_knn:.4}")),
        (full >= random, format!("full >= random-neighbors {random:.4}")),
        (full > names, format!("symbol > generate-names {names:.4}")),
        (run.elapsed <= BENCHMARK_BUDGET, format!("{:.1}s", run.elapsed.as_secs_f64())),
    ];
    let pass = checks.iter().all(|(ok, _)| *ok);
    let detail = checks
        .iter()
        .map(|(ok, d)| if *ok { d.clone() } else { format!("[x] {d}") })
        .collect::<Vec<_>>()
        .join(", ");
    line("synthetic benchmark", pass, detail)
}

fn sweep_shape(run: &BenchmarkRun) -> Line {
    let curve = &run.sweep;
    let peak = curve.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (first, last) = (curve[0], curve[curve.len() - 1]);
    // Rises then falls: the best accuracy is strictly above both ends.
    let pass = peak > first && peak > last;
    let shown = SWEEP_N
        .zip(curve)
        .map(|(n, a)| format!("{n}:{a:.4}"))
        .collect::<Vec<_>>()
        .join(" ");
    line("sweep shape", pass, format!("accuracy by N {shown}"))
}

fn determinism(a: &BenchmarkRun, b: &BenchmarkRun) -> Line {
    let json = |r: &BenchmarkRun| r.ablations.iter().map(EvalReport::to_json).collect::<Vec<_>>().join("\n");
    let (ja, jb) = (json(a), json(b));
    let pass = ja == jb && a.sweep_csv == b.sweep_csv && a.pipeline.embedder == b.pipeline.embedder;
    line(
        "determinism",
        pass,
        format!(
            "two full runs (benchmark, training, datastore, 5 ablations, N sweep): {} report bytes, {}",
            ja.len(),
            if pass { "identical" } else { "differ" }
        ),
    )
}

#[test]
fn acceptance() {
    let mut lines = vec![loss_correctness(), retrieval_exactness(), mcp_structure()];
    let first = run_benchmark();
    lines.push(oracle_ceiling(&first));
    lines.push(synthetic_benchmark(&first));
    lines.push(sweep_shape(&first));
    let second = run_benchmark();
    lines.push(determinism(&first, &second));

    let failed: Vec<String> = lines
        .iter()
        .filter(|l| !l.pass)
        .map(|l| format!("{}: {}", l.criterion, l.detail))
        .collect();
    println!("{} of {} primary criteria pass", lines.len() - failed.len(), lines.len());
    assert!(failed.is_empty(), "failing criteria:\n{}", failed.join("\n"));
}
