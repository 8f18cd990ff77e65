//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use common::{qp_oracle, random_session, rel_err, ReferenceLoss};
use invariant_affect::correlation::{pearson, point_biserial, RepresentationMatrix};
use invariant_affect::corpus::build_pairs;
use invariant_affect::eval::{experiment_splits_prepared, lambda_sweep_prepared, ModelConfig, PreparedCorpus};
use invariant_affect::invariance::{count_signs, select_invariant};
use invariant_affect::ocsvm::{self, partition_representations, KernelChoice, Partition, SolverConfig};
use invariant_affect::preflearn::PreferenceObjective;
use invariant_affect::synth::{generate, score_detection, SynthSpec};
use invariant_affect::Kernel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const SEEDS: u64 = 20;
const LAMBDAS: [f64; 11] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
const DETECT_NU: f64 = 0.6;
const DETECT_GAMMA_PER_D: f64 = 0.3;

struct Outcome {
    pass: bool,
    detail: String,
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn reference_pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

fn c1_point_biserial() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let mut worst = 0.0f64;
    let mut mismatched = 0;
    for _ in 0..1000 {
        let n = r.random_range(2..200);
        let scale = 10f64.powi(r.random_range(-3..4));
        let x: Vec<f64> = (0..n).map(|_| scale * r.sample::<f64, _>(StandardNormal)).collect();
        let p = r.random_range(0.05..0.95);
        let y: Vec<u8> = (0..n).map(|_| u8::from(r.random_bool(p))).collect();
        let yf: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
        let pb = point_biserial(&x, &y).unwrap();
        let lib = pearson(&x, &yf).unwrap();
        let reference = reference_pearson(&x, &yf);
        match (pb, lib, reference) {
            (Some(a), Some(b), Some(c)) => worst = worst.max((a - b).abs()).max((a - c).abs()),
            (None, None, None) => {}
            _ => mismatched += 1,
        }
    }
    let elapsed = start.elapsed();
    Outcome {
        pass: worst <= 1e-10 && mismatched == 0 && elapsed < Duration::from_secs(5),
        detail: format!("max |diff| {worst:.2e} (tol 1e-10), undefined-case mismatches {mismatched}, {elapsed:.2?} (limit 5 s)"),
    }
}

fn c2_ocsvm() -> Outcome {
    let start = Instant::now();
    let mut r = rng(2);
    let mut worst = 0.0f64;
    let mut instances = 0;
    for n in 2..=20 {
        for rep in 0..6 {
            let d = r.random_range(1..=6);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..d.max(if rep % 3 == 2 { n + 1 } else { 1 })).map(|_| r.sample(StandardNormal)).collect())
                .collect();
            let nu = r.random_range(0.05..=1.0);
            let (kernel, q) = if rep % 3 == 2 {
                (Kernel::Linear, qp_oracle::linear_matrix(&rows))
            } else {
                let gamma = r.random_range(0.05..2.0);
                (Kernel::Rbf { gamma }, qp_oracle::rbf_matrix(&rows, gamma))
            };
            let model = ocsvm::train(&rows, nu, kernel, &SolverConfig::default()).unwrap();
            let expected = qp_oracle::training_decisions(&q, &qp_oracle::solve(&q, nu));
            for (x, e) in rows.iter().zip(&expected) {
                worst = worst.max((model.decision(x).unwrap() - e).abs());
            }
            instances += 1;
        }
    }
    let mut nu_ok = 0;
    for seed in 0..50u64 {
        let mut r = rng(200 + seed);
        let n = 100;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..2).map(|_| r.sample(StandardNormal)).collect()).collect();
        let nu = [0.1, 0.2, 0.3, 0.5, 0.8][seed as usize % 5];
        let model = ocsvm::train(&rows, nu, Kernel::Rbf { gamma: 0.5 }, &SolverConfig::default()).unwrap();
        let out = rows.iter().filter(|x| model.is_outlier(x).unwrap()).count() as f64 / n as f64;
        let sv = model.n_support() as f64 / n as f64;
        if out <= nu + 1.0 / n as f64 && sv >= nu - 1.0 / n as f64 {
            nu_ok += 1;
        }
    }
    let elapsed = start.elapsed();
    Outcome {
        pass: worst <= 1e-6 && nu_ok == 50 && elapsed < Duration::from_secs(60),
        detail: format!(
            "{instances} oracle instances (n = 2..20), max |decision diff| {worst:.2e} (tol 1e-6); nu-property {nu_ok}/50; {elapsed:.2?} (limit 60 s)"
        ),
    }
}

fn detect(prepared: &PreparedCorpus, d: usize) -> Partition {
    let rows = prepared
        .env_ids()
        .iter()
        .map(|e| prepared.signs(e).unwrap().expect("every synthetic environment has pairs").clone())
        .collect();
    let matrix = RepresentationMatrix { rows };
    partition_representations(
        &matrix,
        DETECT_NU,
        KernelChoice::Rbf {
            gamma: Some(DETECT_GAMMA_PER_D / d as f64),
        },
        &SolverConfig::default(),
    )
    .unwrap()
}

fn c3_outlier_recovery() -> Outcome {
    let start = Instant::now();
    let mut f1 = Vec::new();
    for seed in 0..SEEDS {
        let spec = SynthSpec {
            n_envs: 50,
            n_outliers: 16,
            d: 768,
            n_invariant: 150,
            flip_fraction: 0.6,
            noise_sd: 0.1,
            seed,
            ..SynthSpec::default()
        };
        let (corpus, truth) = generate(&spec).unwrap();
        let prepared = PreparedCorpus::for_config(&corpus, &ModelConfig::default()).unwrap();
        let partition = detect(&prepared, spec.d);
        f1.push(score_detection(&partition, &truth).unwrap().f1);
    }
    let mean = f1.iter().sum::<f64>() / f1.len() as f64;
    let min = f1.iter().copied().fold(f64::INFINITY, f64::min);
    let elapsed = start.elapsed();
    Outcome {
        pass: mean >= 0.9 && elapsed < Duration::from_secs(600),
        detail: format!(
            "mean F1 {mean:.3} over {SEEDS} seeds (min {min:.3}, need >= 0.9); nu {DETECT_NU}, rbf gamma {DETECT_GAMMA_PER_D}/d; {elapsed:.2?} (limit 600 s)"
        ),
    }
}

fn c4_subset_ordering() -> Outcome {
    let start = Instant::now();
    let (mut inl, mut all, mut out) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..SEEDS {
        let spec = SynthSpec {
            n_envs: 20,
            n_outliers: 6,
            sessions_per_env: 2,
            windows_per_session: 30,
            d: 32,
            n_invariant: 8,
            flip_fraction: 0.6,
            noise_sd: 0.1,
            spurious_scale: 0.5,
            seed,
        };
        let (corpus, _) = generate(&spec).unwrap();
        let cfg = ModelConfig::default();
        let prepared = PreparedCorpus::for_config(&corpus, &cfg).unwrap();
        let partition = detect(&prepared, spec.d);
        let splits = experiment_splits_prepared(&prepared, &partition, &cfg).unwrap();
        match (
            splits.inliers.mean_accuracy(),
            splits.all.mean_accuracy(),
            splits.outliers.mean_accuracy(),
        ) {
            (Some(i), Some(a), Some(o)) => {
                inl.push(i);
                all.push(a);
                out.push(o);
            }
            _ => {}
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let (i, a, o) = (mean(&inl), mean(&all), mean(&out));
    let computed = inl.len();
    Outcome {
        pass: computed == SEEDS as usize && i > a && a > o && i - o >= 0.10 && (0.45..=0.60).contains(&o),
        detail: format!(
            "inliers {i:.3} > all {a:.3} > outliers {o:.3}; gap {:.3} (need >= 0.10); outliers in [0.45, 0.60]; {computed}/{SEEDS} seeds computable; {:.2?}",
            i - o,
            start.elapsed()
        ),
    }
}

fn c5_lambda_monotonicity() -> Outcome {
    let mut violations = 0;
    let mut cases = 0;
    let mut check = |rows: &[Vec<i8>]| {
        let n = rows.len();
        let counts = count_signs(rows).unwrap();
        let mut prev: Option<Vec<usize>> = None;
        for &l in &LAMBDAS {
            let m = select_invariant(&counts, l, n).unwrap();
            if let Some(p) = &prev {
                if m.selected.len() > p.len() || !m.selected.iter().all(|i| p.contains(i)) {
                    violations += 1;
                }
            }
            prev = Some(m.selected);
        }
        let unanimous: Vec<usize> = (0..counts.d())
            .filter(|&i| rows.iter().all(|r| r[i] == 1) || rows.iter().all(|r| r[i] == -1))
            .collect();
        if prev.unwrap() != unanimous {
            violations += 1;
        }
        cases += 1;
    };
    let mut r = rng(5);
    for _ in 0..100 {
        let n = r.random_range(1..30);
        let d = r.random_range(1..60);
        let bias = r.random_range(0.0..1.0);
        let rows: Vec<Vec<i8>> = (0..n)
            .map(|_| {
                (0..d)
                    .map(|j| {
                        if j % 3 == 0 && r.random_bool(bias) {
                            1
                        } else {
                            r.random_range(-1..=1) as i8
                        }
                    })
                    .collect()
            })
            .collect();
        check(&rows);
    }
    for seed in 0..5 {
        let spec = SynthSpec {
            n_envs: 12,
            n_outliers: 3,
            sessions_per_env: 2,
            windows_per_session: 20,
            d: 30,
            n_invariant: 10,
            seed,
            ..SynthSpec::default()
        };
        let (corpus, _) = generate(&spec).unwrap();
        let prepared = PreparedCorpus::for_config(&corpus, &ModelConfig::default()).unwrap();
        let rows: Vec<Vec<i8>> = prepared
            .env_ids()
            .iter()
            .map(|e| prepared.signs(e).unwrap().unwrap().signs.clone())
            .collect();
        check(&rows);
    }
    Outcome {
        pass: violations == 0,
        detail: format!("{cases} sign matrices (100 random + 5 generated corpora) x 11-point grid, {violations} violations"),
    }
}

fn c6_invariant_benefit() -> Outcome {
    let start = Instant::now();
    let (mut base, mut best) = (Vec::new(), Vec::new());
    let mut best_lambdas = Vec::new();
    for seed in 0..SEEDS {
        let spec = SynthSpec {
            n_envs: 16,
            n_outliers: 4,
            sessions_per_env: 2,
            windows_per_session: 25,
            d: 192,
            n_invariant: 10,
            flip_fraction: 0.6,
            noise_sd: 0.1,
            spurious_scale: 0.7,
            seed,
        };
        let (corpus, _) = generate(&spec).unwrap();
        let cfg = ModelConfig::default();
        let prepared = PreparedCorpus::for_config(&corpus, &cfg).unwrap();
        let partition = detect(&prepared, spec.d);
        let table = lambda_sweep_prepared(&prepared, &partition, &LAMBDAS, &cfg).unwrap();
        let rows = table.subset_rows("inliers");
        if rows.is_empty() {
            continue;
        }
        base.push(rows[0].mean_accuracy);
        let top = rows
            .iter()
            .max_by(|a, b| a.mean_accuracy.total_cmp(&b.mean_accuracy))
            .unwrap();
        best.push(top.mean_accuracy);
        best_lambdas.push(top.lambda);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let gain = mean(&best) - mean(&base);
    Outcome {
        pass: base.len() == SEEDS as usize && gain >= 0.03,
        detail: format!(
            "inlier accuracy lambda=0 {:.3}, best swept {:.3}, gain {gain:.3} (need >= 0.03); mean best lambda {:.2}; {:.2?}",
            mean(&base),
            mean(&best),
            mean(&best_lambdas),
            start.elapsed()
        ),
    }
}

fn c7_gradient() -> Outcome {
    let mut r = rng(7);
    let mut worst = 0.0f64;
    let mut datasets = 0;
    while datasets < 50 {
        let d = r.random_range(1..8);
        let n = r.random_range(6..30);
        let s = random_session(&mut r, n, d);
        let ps = build_pairs(&s, r.random_range(0.0..0.3), r.random_bool(0.5)).unwrap();
        if ps.is_empty() {
            continue;
        }
        let reg = [0.0, 1e-4, 0.1][datasets % 3];
        let obj = PreferenceObjective::new(&[&ps], (0..d).collect(), true, reg).unwrap();
        let reference = ReferenceLoss::new(&[&ps], reg);
        for _ in 0..10 {
            let p: Vec<f64> = (0..obj.n_params()).map(|_| r.random_range(-3.0..3.0)).collect();
            let (_, g) = obj.value_and_gradient(&p);
            worst = worst.max(rel_err(&g, &reference.central_difference(&p, 1e-5), 1e-8));
        }
        datasets += 1;
    }
    Outcome {
        pass: worst <= 1e-5,
        detail: format!("50 datasets x 10 points, max relative error {worst:.2e} (tol 1e-5, step 1e-5)"),
    }
}

fn invaff(cwd: &Path, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_invaff"))
        .current_dir(cwd)
        .args(args)
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let text = std::fs::read(&p).unwrap();
                let kept: Vec<u8> = String::from_utf8_lossy(&text)
                    .lines()
                    .filter(|l| !l.trim_start().starts_with("\"generated_at\""))
                    .collect::<Vec<_>>()
                    .join("\n")
                    .into_bytes();
                files.insert(p.strip_prefix(dir).unwrap().to_path_buf(), kept);
            }
        }
    }
    files
}

fn c8_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let detect = ["--nu", "0.6", "--kernel", "linear"];
    let steps: Vec<Vec<&str>> = vec![
        vec!["synth", "--out", "corpus", "--seed", "42", "--n-envs", "12", "--n-outliers", "4", "--sessions-per-env", "2", "--windows-per-session", "20", "--d", "24", "--n-invariant", "8"],
        [&["detect", "--corpus", "corpus/manifest.json", "--out", "detect"][..], &detect].concat(),
        vec!["select", "--corpus", "corpus/manifest.json", "--partition", "detect/partition.json", "--out", "select"],
        vec!["train", "--corpus", "corpus/manifest.json", "--partition", "detect/partition.json", "--out", "train"],
        vec!["eval", "--corpus", "corpus/manifest.json", "--partition", "detect/partition.json", "--out", "eval", "--lambda", "0.5"],
        vec!["control", "--corpus", "corpus/manifest.json", "--partition", "detect/partition.json", "--out", "control", "--runs", "3", "--seed", "7"],
        [&["sweep", "--corpus", "corpus/manifest.json", "--out", "sweep", "--lambdas", "0:1:0.25"][..], &detect].concat(),
    ];
    let mut ok = true;
    for run in ["a", "b"] {
        let cwd = dir.path().join(run);
        std::fs::create_dir_all(&cwd).unwrap();
        for step in &steps {
            ok &= invaff(&cwd, step);
        }
    }
    let a = tree(&dir.path().join("a"));
    let b = tree(&dir.path().join("b"));
    let differing: Vec<String> = a
        .keys()
        .chain(b.keys())
        .filter(|k| a.get(*k) != b.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    Outcome {
        pass: ok && differing.is_empty() && a.len() > 20,
        detail: format!(
            "7-step pipeline run twice: {} files compared, {} differ beyond the timestamp line{}",
            a.len(),
            differing.len(),
            if ok { "" } else { "; a step failed" }
        ),
    }
}

fn c9_pairs() -> Outcome {
    let mut r = rng(9);
    let (mut unbalanced, mut increases, mut total) = (0, 0, 0);
    for _ in 0..200 {
        let n = r.random_range(2..40);
        let s = random_session(&mut r, n, 2);
        let mut prev = usize::MAX;
        for k in 0..=20 {
            let p_t = k as f64 * 0.05;
            let sym = build_pairs(&s, p_t, true).unwrap();
            let pos = sym.labels().iter().filter(|&&y| y == 1).count();
            if 2 * pos != sym.len() {
                unbalanced += 1;
            }
            let count = build_pairs(&s, p_t, false).unwrap().len();
            if count > prev {
                increases += 1;
            }
            prev = count;
            total += 1;
        }
    }
    Outcome {
        pass: unbalanced == 0 && increases == 0,
        detail: format!("200 sessions x 21 thresholds ({total} pair sets): {unbalanced} unbalanced, {increases} count increases"),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("point-biserial equals Pearson on binary labels", c1_point_biserial),
        ("one-class SVM matches QP oracle and nu-property", c2_ocsvm),
        ("outlier recovery on the 50 x 768 synthetic setting", c3_outlier_recovery),
        ("inliers > all > outliers ordering", c4_subset_ordering),
        ("lambda monotonicity and unanimity at lambda = 1", c5_lambda_monotonicity),
        ("invariant-feature benefit over lambda = 0", c6_invariant_benefit),
        ("logistic gradient vs central differences", c7_gradient),
        ("CLI determinism", c8_determinism),
        ("pair-construction contract", c9_pairs),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {} [{}] {}: {}",
            k + 1,
            if o.pass { "PASS" } else { "FAIL" },
            name,
            o.detail
        );
    }
    println!("acceptance: {}/9 passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
