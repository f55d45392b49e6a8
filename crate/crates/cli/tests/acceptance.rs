//! Acceptance suite. Runs every criterion at its stated tolerance, prints
//! one PASS/FAIL line each, and exits nonzero if any failed.

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use oracles::gradcheck::{first_order_error, second_order_error};
use oracles::{covariance, entropic_ot_newton, jacobi_eigen, t_p_value_quadrature};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use superot_core::data::{synth_branching, SynthConfig};
use superot_core::evalstats::{precision_recall, ttest_two_sample, LogisticConfig};
use superot_core::math::Tensor;
use superot_core::nets::{Method, TrainConfig, TrainData, Trainer};
use superot_core::pipeline::{de_over_runs, prepare, Dataset, EvalConfig, PreprocessConfig, Prepared};
use superot_core::preprocess::pca_fit;
use superot_core::sinkhorn::sinkhorn_solve;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(t0: Instant, limit: Duration) -> (bool, String) {
    let e = t0.elapsed();
    (e < limit, format!("{:.1}s of {:.0}s", e.as_secs_f64(), limit.as_secs_f64()))
}

fn autodiff() -> Outcome {
    let t0 = Instant::now();
    let first = (0..100).map(first_order_error).fold(0.0, f64::max);
    let second = (0..100).map(second_order_error).fold(0.0, f64::max);
    let (fast, time) = within(t0, Duration::from_secs(60));
    outcome(
        first <= 1e-4 && second <= 1e-4 && fast,
        format!("100 seeds, max rel err first {first:.2e}, second {second:.2e}; {time}"),
    )
}

fn sinkhorn() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst, mut marg) = (0.0f64, 0.0f64);
    for k in 0..20 {
        let (n, m) = (rng.random_range(1..=5), rng.random_range(1..=5));
        let c = Tensor::from_fn(n, m, |_, _| rng.random::<f64>());
        let mut marginal = |len: usize| {
            let w: Vec<f64> = (0..len).map(|_| 0.2 + rng.random::<f64>()).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|v| v / s).collect::<Vec<_>>()
        };
        let (a, b) = (marginal(n), marginal(m));
        let eps = [0.05, 0.1, 0.5][k % 3];
        let got = sinkhorn_solve(&c, &a, &b, eps, 1e-12, 100_000).expect("solver converges");
        worst = worst.max(got.gamma.max_abs_diff(&entropic_ot_newton(&c, &a, &b, eps)));
        marg = marg.max(got.marginal_error);
    }
    let (fast, time) = within(t0, Duration::from_secs(30));
    outcome(
        worst <= 1e-4 && marg <= 1e-8 && fast,
        format!("20 instances, max entry diff {worst:.2e}, max marginal violation {marg:.2e}; {time}"),
    )
}

fn t_tests() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for k in 0..50 {
        let (na, nb) = (rng.random_range(2..40), rng.random_range(2..40));
        let shift = rng.random_range(-3.0..3.0);
        let a: Vec<f64> = (0..na).map(|_| rng.random::<f64>() * 2.0).collect();
        let b: Vec<f64> = (0..nb).map(|_| shift + rng.random::<f64>() * 3.0).collect();
        let r = ttest_two_sample(&a, &b, k % 2 == 1).expect("valid samples");
        worst = worst.max((r.p - t_p_value_quadrature(r.t, r.df)).abs());
    }
    let same = [0.5, 1.25, -2.0, 4.0, 3.5];
    let r = ttest_two_sample(&same, &same, false).expect("valid samples");
    let exact = r.t == 0.0 && r.p == 1.0;
    outcome(worst <= 1e-9 && exact, format!("50 instances, max |p − quadrature| {worst:.2e}; identical samples t={}, p={}", r.t, r.p))
}

fn pca() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mix = Tensor::from_fn(8, 8, |_, _| rng.random::<f64>() - 0.5);
    let x = Tensor::from_fn(60, 8, |_, _| rng.random::<f64>() * 2.0 - 1.0).matmul(&mix).expect("shapes");

    let full = pca_fit(&x, 8).expect("fit");
    let round = full.inverse(&full.transform(&x).expect("transform")).expect("inverse").max_abs_diff(&x);

    let (vals, _) = jacobi_eigen(&covariance(&x));
    let mut recon = 0.0f64;
    let mut ortho = 0.0f64;
    for k in 1..8 {
        let m = pca_fit(&x, k).expect("fit");
        let trailing: f64 = vals[k..].iter().sum();
        recon = recon.max((m.reconstruction_error(&x).expect("error") - trailing).abs());
        let gram = Tensor::matmul_t(&m.components, &m.components, false, true).expect("shapes");
        ortho = ortho.max(gram.max_abs_diff(&Tensor::identity(k)));
    }
    outcome(
        round <= 1e-8 && recon <= 1e-8 && ortho <= 1e-8,
        format!("round trip at k=d {round:.2e}, reconstruction vs trailing eigenvalues {recon:.2e}, orthonormality {ortho:.2e}"),
    )
}

fn supervised_recovery() -> Outcome {
    let t0 = Instant::now();
    let (k, n, n_test) = (3, 256, 200);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = Tensor::from_fn(k, k, |i, j| f64::from(u8::from(i == j)) + 0.5 * (rng.random::<f64>() - 0.5));
    let b: Vec<f64> = (0..k).map(|_| rng.random::<f64>() - 0.5).collect();
    let mut sample = |m: usize| {
        let x = Tensor::from_fn(m, k, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let xa = x.matmul(&a).expect("shapes");
        let y = Tensor::from_fn(m, k, |i, j| xa.get(i, j) + b[j]);
        (x, y)
    };
    let (x, y) = sample(n);
    let (xt, yt) = sample(n_test);
    let data = TrainData::new(x, y, (0..n).map(|i| (i, i)).collect());
    // four minibatches of 64 per epoch
    let steps_per_epoch = n / 64;
    let epochs = 5000 / steps_per_epoch;
    let base = TrainConfig {
        hidden: 64,
        lr: 1e-3,
        max_epochs: epochs,
        n_pairs: n,
        convergence_tol: 0.0,
        ..TrainConfig::default()
    };
    let cfg = Method::Supervised.configure(&base);
    let mut t = Trainer::new(Method::Supervised, &cfg, k).expect("valid config");
    t.train(&data, |_| Ok(())).expect("trains");
    let pred = t.transport.apply(&xt, None).expect("apply");
    let mse = pred.data().iter().zip(yt.data()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / n_test as f64;
    let steps = t.epoch() * steps_per_epoch;
    let (fast, time) = within(t0, Duration::from_secs(120));
    outcome(mse <= 1e-3 && steps <= 5000 && fast, format!("held-out pairing loss {mse:.2e} after {steps} steps; {time}"))
}

/// Settings for the trend criteria on the default synthetic dataset.
fn trend_config() -> (PreprocessConfig, TrainConfig) {
    let pre = PreprocessConfig { k: 10, ..PreprocessConfig::default() };
    let train = TrainConfig { hidden: 64, lr: 1e-3, max_epochs: 300, ..TrainConfig::default() };
    (pre, train)
}

struct SeedRuns {
    prepared: Prepared,
    gan_ot: f64,
    super_ot: Vec<f64>,
    no_transport: f64,
    supervised: f64,
    large_transported: Tensor,
}

fn trend_runs(ds: &Dataset) -> (Vec<SeedRuns>, Vec<usize>, Duration) {
    let t0 = Instant::now();
    let (pre, base) = trend_config();
    let eval = EvalConfig::default();
    let mut out = Vec::new();
    let mut counts = Vec::new();
    for &seed in &eval.seeds {
        let p = prepare(ds, &pre, &eval.classifier, seed).expect("prepare");
        counts = eval.pair_counts_for(p.n_eligible());
        let gan_ot = p.run_learned(Method::GanOt, &base, 0).expect("gan-ot").evaluation.accuracy;
        let mut super_ot = Vec::new();
        let mut large_transported = Tensor::zeros(0, 0);
        for &n in &counts {
            let r = p.run_learned(Method::SuperOt, &base, n).expect("super-ot");
            super_ot.push(r.evaluation.accuracy);
            large_transported = r.evaluation.transported;
        }
        let off = TrainConfig { use_transport_cost: false, ..base.clone() };
        let no_transport = p.run_learned(Method::SuperOt, &off, *counts.last().unwrap()).expect("ablation").evaluation.accuracy;
        let supervised = p.run_learned(Method::Supervised, &base, 0).expect("supervised").evaluation.accuracy;
        out.push(SeedRuns { prepared: p, gan_ot, super_ot, no_transport, supervised, large_transported });
    }
    (out, counts, t0.elapsed())
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn ordering(runs: &[SeedRuns], counts: &[usize], elapsed: Duration) -> Outcome {
    let mut chain = vec![("GAN-OT".to_string(), mean(runs.iter().map(|r| r.gan_ot)))];
    for (i, n) in counts.iter().enumerate() {
        chain.push((format!("Super-OT({n})"), mean(runs.iter().map(|r| r.super_ot[i]))));
    }
    chain.push(("Supervised".to_string(), mean(runs.iter().map(|r| r.supervised))));
    let adjacent = chain.windows(2).all(|w| w[0].1 <= w[1].1 + 0.02);
    let spread = chain[chain.len() - 2].1 - chain[0].1;
    let fast = elapsed < Duration::from_secs(15 * 60);
    let listing: Vec<String> = chain.iter().map(|(n, a)| format!("{n} {a:.4}")).collect();
    outcome(
        adjacent && spread >= 0.03 && fast,
        format!("{}; spread {spread:.4}; {:.0}s of 900s", listing.join(" ≤ "), elapsed.as_secs_f64()),
    )
}

fn ablation(runs: &[SeedRuns]) -> Outcome {
    let wins = runs.iter().filter(|r| r.super_ot.last().unwrap() >= &r.no_transport).count();
    let pairs: Vec<String> =
        runs.iter().map(|r| format!("{:.4} vs {:.4}", r.super_ot.last().unwrap(), r.no_transport)).collect();
    outcome(wins >= 2, format!("with ≥ without in {wins} of {} seeds ({})", runs.len(), pairs.join(", ")))
}

fn de_sanity(ds: &Dataset, planted: &BTreeSet<String>, runs: &[SeedRuns]) -> Outcome {
    // oracle transport: a full basis makes the model space invertible, and
    // the transported sets are the real labeled day-4/6 populations
    let full = PreprocessConfig { k: ds.day46.n_genes(), ..PreprocessConfig::default() };
    let mut fixed = Vec::new();
    for seed in 0..3 {
        let mut p = prepare(ds, &full, &LogisticConfig::default(), seed).expect("prepare");
        let rows: Vec<usize> = (0..p.fates46.len()).filter(|&j| p.fates46[j].is_some()).collect();
        p.eval_labels = rows.iter().map(|&j| p.fates46[j].unwrap()).collect();
        let z = p.z46.select_rows(&rows);
        fixed.push((p, z));
    }
    let refs: Vec<(&Prepared, &Tensor)> = fixed.iter().map(|(p, z)| (p, z)).collect();
    let oracle = de_over_runs(ds, &refs, 1e-6, false).expect("oracle DE");
    let oracle_ok = oracle.precision == Some(1.0) && oracle.recall == Some(1.0);

    let refs: Vec<(&Prepared, &Tensor)> = runs.iter().map(|r| (&r.prepared, &r.large_transported)).collect();
    let report = de_over_runs(ds, &refs, 1e-6, false).expect("trained DE");
    let (_, planted_recall) = precision_recall(&report.predicted, planted);
    let recall = planted_recall.unwrap_or(0.0);
    outcome(
        oracle_ok && recall >= 0.6,
        format!(
            "oracle precision {:?} recall {:?}; Super-OT(large) planted recall {recall:.3} ({} of {} planted genes, {} predicted)",
            oracle.precision,
            oracle.recall,
            report.predicted.intersection(planted).count(),
            planted.len(),
            report.predicted.len()
        ),
    )
}

const SMALL: &str = r#"
[data.synth]
n_genes = 60
n_day2 = 120
n_day46 = 400
n_clones = 30

[preprocess]
k = 6

[train]
hidden = 16
max_epochs = 10
lr = 1e-3

[eval]
pair_counts = [5, 10]
seeds = [0, 1]
"#;

fn superot(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_superot"))
        .current_dir(dir)
        .env_remove("SUPEROT_OUT")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap_or_default()).unwrap_or(Value::Null)
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().expect("tempdir");
    let dir = tmp.path();
    std::fs::write(dir.join("small.toml"), SMALL).expect("write config");
    let c = ["--config", "small.toml"];
    let d = ["--config", "small.toml", "--data", "data"];
    let steps: Vec<(&str, Vec<&str>, Vec<&str>)> = vec![
        ("synth", c.to_vec(), vec!["synth"]),
        ("preprocess", d.to_vec(), vec!["preprocess"]),
        ("train", d.to_vec(), vec!["train", "super-ot", "--pairs", "10"]),
        ("sinkhorn", d.to_vec(), vec!["sinkhorn"]),
        ("eval", d.to_vec(), vec!["eval", "--identity"]),
        ("ablate", d.to_vec(), vec!["ablate"]),
    ];
    if let Err(e) = superot(dir, &["--config", "small.toml", "--out", "data", "synth"]) {
        return outcome(false, e);
    }
    let mut same = Vec::new();
    let mut differ = Vec::new();
    for (name, head, tail) in &steps {
        let mut digests = Vec::new();
        for rep in ["a", "b"] {
            let out = format!("{name}-{rep}");
            let mut args: Vec<String> = head.iter().map(|s| s.to_string()).collect();
            args.extend(["--out".to_string(), out.clone()]);
            args.extend(tail.iter().map(|s| s.to_string()));
            if *name == "eval" {
                args.extend([format!("train-{rep}"), format!("sinkhorn-{rep}")]);
            }
            let argv: Vec<&str> = args.iter().map(String::as_str).collect();
            if let Err(e) = superot(dir, &argv) {
                return outcome(false, e);
            }
            digests.push(manifest(&dir.join(&out))["outputs"].clone());
        }
        if digests[0] == digests[1] && digests[0].as_object().is_some_and(|o| !o.is_empty()) {
            same.push(*name);
        } else {
            differ.push(*name);
        }
    }
    outcome(
        differ.is_empty(),
        format!("identical output digests on re-run for {}; differing: {:?}", same.join(", "), differ),
    )
}

fn reference_preset() -> Outcome {
    let t0 = Instant::now();
    let tmp = tempfile::tempdir().expect("tempdir");
    let preset = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference.toml");
    let preset = preset.to_str().expect("utf-8 path");
    if let Err(e) = superot(tmp.path(), &["--config", preset, "--out", "ref", "train", "super-ot", "--epochs", "10"]) {
        return outcome(false, e);
    }
    let m = manifest(&tmp.path().join("ref"));
    let cfg = &m["config"];
    let exact = cfg["train"]["hidden"] == 1000
        && cfg["preprocess"]["k"] == 100
        && cfg["train"]["lambda_trans"] == 0.6
        && cfg["train"]["lr"] == 1e-4;
    let history = std::fs::read_to_string(tmp.path().join("ref/history.csv")).unwrap_or_default();
    let rows: Vec<&str> = history.lines().skip(1).collect();
    let finite = rows.iter().all(|r| r.split(',').all(|v| v.parse::<f64>().is_ok_and(f64::is_finite)));
    outcome(
        exact && rows.len() >= 10 && finite,
        format!(
            "hidden {} k {} λ1 {} lr {}; {} epochs, all losses finite: {finite}; {:.0}s",
            cfg["train"]["hidden"],
            cfg["preprocess"]["k"],
            cfg["train"]["lambda_trans"],
            cfg["train"]["lr"],
            rows.len(),
            t0.elapsed().as_secs_f64()
        ),
    )
}

fn report(n: usize, name: &str, o: &Outcome) {
    println!("criterion {n:>2} [{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
}

fn main() {
    // `cargo test -- --list` and filtered runs only need the target to exist
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut results = Vec::new();
    let mut run = |n: usize, name: &str, o: Outcome| {
        report(n, name, &o);
        results.push(o.pass);
    };
    run(1, "autodiff soundness", autodiff());
    run(2, "Sinkhorn correctness", sinkhorn());
    run(3, "t-test oracle", t_tests());
    run(4, "PCA exactness", pca());
    run(5, "supervised recovery", supervised_recovery());

    let synth = synth_branching(&SynthConfig::default()).expect("default dataset");
    let planted = synth.planted_de_genes.clone();
    let ds: Dataset = synth.into();
    let (runs, counts, elapsed) = trend_runs(&ds);
    run(6, "accuracy ordering", ordering(&runs, &counts, elapsed));
    run(7, "transport-cost ablation", ablation(&runs));
    run(8, "DE analysis", de_sanity(&ds, &planted, &runs));
    run(9, "determinism", determinism());
    run(10, "reference hyperparameters", reference_preset());

    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
