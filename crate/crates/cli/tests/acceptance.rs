//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use artrec::dataset::{load_dir_catalog, load_stores};
use artrec::eval::{build_cases, ndcg_at_k, precision_at_k, recall_at_k};
use artrec::evf::{extract_evf, RgbImage};
use artrec::hybrid::{bpr_gradient, bpr_objective, train, TrainingInstance};
use artrec::synth::{generate, SynthConfig};
use artrec::{BprConfig, EvalOptions, EvalReport, HybridWeights, MethodSpec, Source};
use artrec_cli::{cmd_evaluate, cmd_synth, Format, RunArgs};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

// Brute-force metrics: explicit rank loops and set membership by linear scan.
fn oracle(ranked: &[u32], positives: &[u32], k: usize) -> (f64, f64, f64) {
    let mut hits = 0usize;
    let mut dcg = 0.0;
    for (pos, item) in ranked.iter().enumerate() {
        if pos >= k {
            break;
        }
        let mut relevant = false;
        for p in positives {
            if p == item {
                relevant = true;
            }
        }
        if relevant {
            hits += 1;
            dcg += 1.0 / ((pos + 2) as f64).ln() * std::f64::consts::LN_2;
        }
    }
    let mut idcg = 0.0;
    for pos in 0..positives.len().min(k) {
        idcg += 1.0 / ((pos + 2) as f64).ln() * std::f64::consts::LN_2;
    }
    (
        hits as f64 / k as f64,
        hits as f64 / positives.len() as f64,
        dcg / idcg,
    )
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let mut ranked: Vec<u32> = (0..100).collect();
        ranked.shuffle(&mut rng);
        let n_pos = rng.random_range(1..=5);
        let mut universe: Vec<u32> = (0..100).collect();
        universe.shuffle(&mut rng);
        let positives = &universe[..n_pos];
        for k in [5, 10] {
            let (p, r, n) = oracle(&ranked, positives, k);
            let got = [
                precision_at_k(&ranked, positives, k),
                recall_at_k(&ranked, positives, k).unwrap(),
                ndcg_at_k(&ranked, positives, k).unwrap(),
            ];
            for (g, o) in got.iter().zip([p, r, n]) {
                worst = worst.max((g - o).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    Outcome::new(
        worst <= 1e-12 && elapsed < Duration::from_secs(5),
        format!("max diff {worst:.2e}, {:.3}s", elapsed.as_secs_f64()),
    )
}

fn evf_analytic() -> Outcome {
    let mut failures = Vec::new();
    let gray = extract_evf(&RgbImage::filled(32, 32, [128, 128, 128]).unwrap())
        .unwrap()
        .to_array();
    let want = [128.0 / 255.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    if gray.iter().zip(want).any(|(g, w)| (g - w).abs() > 1e-9) {
        failures.push(format!("gray {gray:?}"));
    }

    let bw = RgbImage::from_fn(
        32,
        32,
        |x, _| if x < 16 { [0, 0, 0] } else { [255, 255, 255] },
    )
    .unwrap();
    let bw = extract_evf(&bw).unwrap();
    if (bw.entropy - 0.125).abs() > 1e-9 || (bw.rgb_contrast - 0.5).abs() > 1e-9 {
        failures.push(format!(
            "black/white entropy {} contrast {}",
            bw.entropy, bw.rgb_contrast
        ));
    }

    let red = extract_evf(&RgbImage::filled(16, 16, [255, 0, 0]).unwrap()).unwrap();
    if (red.colorfulness - 0.33541).abs() > 1e-4 {
        failures.push(format!("red colorfulness {}", red.colorfulness));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (w, h) = (rng.random_range(3..48), rng.random_range(3..48));
        let img = RgbImage::from_fn(w, h, |_, _| rng.random()).unwrap();
        let base = extract_evf(&img).unwrap().to_array();
        for flipped in [img.flip_horizontal(), img.flip_vertical()] {
            let f = extract_evf(&flipped).unwrap().to_array();
            for (a, b) in base.iter().zip(f) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    if worst > 1e-12 {
        failures.push(format!("flip diff {worst:.2e}"));
    }
    Outcome::new(
        failures.is_empty(),
        if failures.is_empty() {
            format!(
                "red colorfulness {:.5}, flip diff {worst:.2e}",
                red.colorfulness
            )
        } else {
            failures.join("; ")
        },
    )
}

fn single(delta: &[f64]) -> TrainingInstance {
    TrainingInstance {
        case: 0,
        s_pos: delta.to_vec(),
        s_neg: vec![0.0; delta.len()],
    }
}

fn bpr_gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let w: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let delta: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
        let lambda = rng.random_range(0.0..1.0);
        let inst = [single(&delta)];
        let analytic = bpr_gradient(&delta, &w, lambda);
        let mut err = 0.0;
        let mut scale = 0.0;
        for i in 0..3 {
            let mut up = w.clone();
            let mut down = w.clone();
            up[i] += h;
            down[i] -= h;
            let fd = (bpr_objective(&inst, &up, lambda) - bpr_objective(&inst, &down, lambda))
                / (2.0 * h);
            err += (fd - analytic[i]).powi(2);
            scale += analytic[i].powi(2);
        }
        worst = worst.max(err.sqrt() / scale.sqrt().max(1e-12));
    }
    Outcome::new(worst < 1e-6, format!("max relative error {worst:.2e}"))
}

fn bpr_learning_sanity() -> Outcome {
    let cfg = BprConfig {
        learning_rate: 0.05,
        regularization: 1e-4,
        epochs: 200,
        ..BprConfig::default()
    };
    // Sources are ordered Metadata, DNN, EVF; DNN carries the signal.
    let instances: Vec<TrainingInstance> = (0..50).map(|_| single(&[0.0, 1.0, 0.0])).collect();
    let trained = train(&instances, &cfg).unwrap();
    let w = trained.weights.as_vec();
    let dnn = trained.weights.get(Source::Dnn).unwrap();
    let largest = dnn > 0.0
        && [Source::Metadata, Source::Evf]
            .iter()
            .all(|&s| trained.weights.get(s).unwrap() < dnn);
    let first = trained.objective[0];
    let last = *trained.objective.last().unwrap();
    Outcome::new(
        largest && last > first,
        format!("w = {w:?}, objective {first:.4} -> {last:.4}"),
    )
}

struct Planted {
    report: EvalReport,
    elapsed: Duration,
    random_recall10: f64,
}

fn planted_run() -> Planted {
    let cfg = SynthConfig {
        n_users: 1400,
        n_items: 3500,
        n_clusters: 10,
        noise_sigma: 0.05,
        metadata_fidelity: 0.9,
        ..SynthConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    generate(&cfg).unwrap().write_dir(dir.path()).unwrap();
    let catalog = load_dir_catalog(dir.path()).unwrap();
    let stores = load_stores(dir.path(), &catalog, &Source::ALL).unwrap();

    let cases = build_cases(&catalog);
    let random_recall10 = cases
        .iter()
        .map(|c| 10.0_f64.min(c.pool.len() as f64) / c.pool.len() as f64)
        .sum::<f64>()
        / cases.len() as f64;

    let one_hot = |hot: Source| {
        HybridWeights::new(
            Source::ALL
                .iter()
                .map(|&s| (s, if s == hot { 1.0 } else { 0.0 })),
        )
        .unwrap()
    };
    let mut methods = MethodSpec::standard();
    methods.push(MethodSpec::fixed(
        "Fixed(Metadata)",
        one_hot(Source::Metadata),
    ));
    methods.push(MethodSpec::fixed("Fixed(DNN)", one_hot(Source::Dnn)));
    methods.push(MethodSpec::fixed("Fixed(EVF)", one_hot(Source::Evf)));

    let start = Instant::now();
    let report = artrec::evaluate(&catalog, &stores, &methods, &EvalOptions::default()).unwrap();
    Planted {
        report,
        elapsed: start.elapsed(),
        random_recall10,
    }
}

fn planted_recovery(p: &Planted) -> Outcome {
    let dnn = p.report.row("DNN").unwrap();
    let recall = p.report.recall(dnn, 10).unwrap();
    let ratio = recall / p.random_recall10;
    Outcome::new(
        ratio >= 5.0 && p.elapsed < Duration::from_secs(120),
        format!(
            "DNN rec@10 {recall:.4} vs random {:.5} (x{ratio:.1}), {} cases, {:.1}s for {} methods",
            p.random_recall10,
            dnn.cases,
            p.elapsed.as_secs_f64(),
            p.report.rows.len()
        ),
    )
}

fn hybrid_consistency(p: &Planted) -> Outcome {
    let mut worst = 0.0f64;
    for (fixed, single) in [
        ("Fixed(Metadata)", "Metadata"),
        ("Fixed(DNN)", "DNN"),
        ("Fixed(EVF)", "EVF"),
    ] {
        let a = p.report.row(fixed).unwrap();
        let b = p.report.row(single).unwrap();
        for (x, y) in a.metrics.iter().zip(&b.metrics) {
            worst = worst.max((x - y).abs());
        }
    }
    Outcome::new(
        worst <= 1e-12,
        format!("max diff over one-hot weights {worst:.2e}"),
    )
}

fn monotonicity(p: &Planted) -> Outcome {
    let bad: Vec<&str> = p
        .report
        .rows
        .iter()
        .filter(|r| {
            p.report.ndcg(r, 10) < p.report.ndcg(r, 5)
                || p.report.recall(r, 10) < p.report.recall(r, 5)
        })
        .map(|r| r.name.as_str())
        .collect();
    Outcome::new(
        bad.is_empty(),
        if bad.is_empty() {
            format!("{} rows ok", p.report.rows.len())
        } else {
            format!("violations: {}", bad.join(", "))
        },
    )
}

fn read_all(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            (name, std::fs::read(&path).unwrap())
        })
        .collect()
}

fn determinism() -> Outcome {
    let runs: Vec<BTreeMap<String, Vec<u8>>> = (0..2)
        .map(|_| {
            let root = tempfile::tempdir().unwrap();
            let data = root.path().join("data");
            cmd_synth(None, &data, Some(42)).unwrap();
            let report = root.path().join("report.csv");
            cmd_evaluate(
                &data,
                "all",
                "5,10",
                &report,
                Format::Csv,
                false,
                0,
                &RunArgs::default(),
            )
            .unwrap();
            let mut files = read_all(&data);
            files.insert("report.csv".into(), std::fs::read(&report).unwrap());
            files
        })
        .collect();
    let bytes: usize = runs[0].values().map(Vec::len).sum();
    Outcome::new(
        runs[0] == runs[1],
        format!("{} files, {bytes} bytes compared", runs[0].len()),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("metric oracle equivalence", metric_oracle()),
        ("EVF analytic suite", evf_analytic()),
        ("BPR gradient check", bpr_gradient_check()),
        ("BPR learning sanity", bpr_learning_sanity()),
    ];
    let planted = planted_run();
    results.push(("planted-structure recovery", planted_recovery(&planted)));
    results.push(("hybrid consistency", hybrid_consistency(&planted)));
    results.push(("monotonicity audit", monotonicity(&planted)));
    results.push(("determinism", determinism()));

    let mut failed = 0;
    for (name, outcome) in &results {
        let tag = if outcome.pass { "PASS" } else { "FAIL" };
        println!("{tag} {name}: {}", outcome.detail);
        failed += usize::from(!outcome.pass);
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
