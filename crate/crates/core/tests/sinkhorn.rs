mod oracles;

use oracles::entropic_ot_newton;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use superot_core::data::{synth_branching, SynthConfig};
use superot_core::math::Tensor;
use superot_core::pipeline::{prepare, Dataset, PreprocessConfig};
use superot_core::sinkhorn::{sinkhorn_naive, sinkhorn_solve, uniform, SinkhornConfig};

fn instance(rng: &mut ChaCha8Rng) -> (Tensor, Vec<f64>, Vec<f64>) {
    let n = rng.random_range(1..=5);
    let m = rng.random_range(1..=5);
    let c = Tensor::from_fn(n, m, |_, _| rng.random::<f64>());
    let marg = |k: usize, rng: &mut ChaCha8Rng| {
        let w: Vec<f64> = (0..k).map(|_| 0.2 + rng.random::<f64>()).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect::<Vec<_>>()
    };
    let a = marg(n, rng);
    let b = marg(m, rng);
    (c, a, b)
}

#[test]
fn log_domain_matches_dual_newton_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for k in 0..12 {
        let (c, a, b) = instance(&mut rng);
        let eps = [0.05, 0.1, 0.5][k % 3];
        let got = sinkhorn_solve(&c, &a, &b, eps, 1e-12, 100_000).unwrap();
        let want = entropic_ot_newton(&c, &a, &b, eps);
        assert!(got.gamma.max_abs_diff(&want) <= 1e-4, "instance {k}");
        assert!(got.marginal_error <= 1e-8);
    }
}

#[test]
fn log_domain_agrees_with_plain_scaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let (c, a, b) = instance(&mut rng);
        let log = sinkhorn_solve(&c, &a, &b, 0.2, 1e-13, 100_000).unwrap();
        let naive = sinkhorn_naive(&c, &a, &b, 0.2, 1e-13, 100_000).unwrap();
        assert!(log.gamma.max_abs_diff(&naive.gamma) <= 1e-8);
    }
}

#[test]
fn transport_cost_does_not_increase_as_epsilon_shrinks() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let c = Tensor::from_fn(5, 4, |_, _| rng.random::<f64>());
        let (a, b) = (uniform(5), uniform(4));
        let costs: Vec<f64> = [1.0, 0.5, 0.1, 0.05]
            .iter()
            .map(|&e| sinkhorn_solve(&c, &a, &b, e, 1e-12, 100_000).unwrap().transport_cost(&c))
            .collect();
        for w in costs.windows(2) {
            assert!(w[1] <= w[0] + 1e-10, "{costs:?}");
        }
    }
}

#[test]
fn separated_fates_are_predicted_from_real_labels() {
    let cfg = SynthConfig { progenitor_drift: 0.0, neutrophil_expansion: 1.0, progenitor_shift: 0.0, ..Default::default() };
    let ds: Dataset = synth_branching(&cfg).unwrap().into();
    let p = prepare(&ds, &PreprocessConfig::default(), &Default::default(), 0).unwrap();
    let run = p.run_sinkhorn(&SinkhornConfig { epsilon_scale: 0.01, ..Default::default() }).unwrap();
    assert!(run.coupling.converged, "marginal error {}", run.coupling.marginal_error);
    assert!(run.real_accuracy >= 0.9, "{}", run.real_accuracy);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn permuting_targets_permutes_columns(seed in 0u64..1000, eps in 0.05f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, a, b) = instance(&mut rng);
        let m = b.len();
        let mut perm: Vec<usize> = (0..m).collect();
        perm.reverse();
        perm.rotate_left(seed as usize % m);
        let cp = Tensor::from_fn(c.rows(), m, |i, j| c.get(i, perm[j]));
        let bp: Vec<f64> = perm.iter().map(|&j| b[j]).collect();
        let g = sinkhorn_solve(&c, &a, &b, eps, 1e-12, 100_000).unwrap().gamma;
        let gp = sinkhorn_solve(&cp, &a, &bp, eps, 1e-12, 100_000).unwrap().gamma;
        let back = Tensor::from_fn(c.rows(), m, |i, j| g.get(i, perm[j]));
        prop_assert!(gp.max_abs_diff(&back) <= 1e-9);
    }

    #[test]
    fn marginals_hold_at_success(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, a, b) = instance(&mut rng);
        let out = sinkhorn_solve(&c, &a, &b, SinkhornConfig::default().resolve_epsilon(&c).max(1e-3), 1e-8, 10_000).unwrap();
        if out.converged {
            for (s, t) in out.row_sums().iter().zip(&a).chain(out.col_sums().iter().zip(&b)) {
                prop_assert!((s - t).abs() <= 1e-8);
            }
            prop_assert!((out.gamma.sum() - 1.0).abs() <= 1e-9);
        }
    }
}
