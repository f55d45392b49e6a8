//! Entropy-regularized optimal transport by iterative scaling, and fate
//! prediction from the resulting coupling.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Fate;
use crate::evalstats::LogisticModel;
use crate::math::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum SinkhornError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("solver failure: {0}; try a larger epsilon")]
    Numerical(String),
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    Euclidean,
    #[default]
    SqEuclidean,
}

/// Pairwise costs between the rows of `x` (`n×k`) and `y` (`m×k`).
pub fn cost_matrix(x: &Tensor, y: &Tensor, kind: CostKind) -> Result<Tensor, SinkhornError> {
    if x.cols() != y.cols() {
        return Err(SinkhornError::Contract(format!(
            "feature widths differ: {} vs {}",
            x.cols(),
            y.cols()
        )));
    }
    Ok(Tensor::from_fn(x.rows(), y.rows(), |i, j| {
        let sq: f64 = x.row_slice(i).iter().zip(y.row_slice(j)).map(|(a, b)| (a - b) * (a - b)).sum();
        match kind {
            CostKind::Euclidean => sq.sqrt(),
            CostKind::SqEuclidean => sq,
        }
    }))
}

/// Median entry of `c`.
pub fn median(c: &Tensor) -> f64 {
    let mut v = c.data().to_vec();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SinkhornConfig {
    /// absolute epsilon; when absent, `epsilon_scale · median(C)`
    pub epsilon: Option<f64>,
    pub epsilon_scale: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub cost: CostKind,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self { epsilon: None, epsilon_scale: 0.05, tol: 1e-8, max_iter: 10_000, cost: CostKind::SqEuclidean }
    }
}

impl SinkhornConfig {
    pub fn resolve_epsilon(&self, c: &Tensor) -> f64 {
        self.epsilon.unwrap_or_else(|| self.epsilon_scale * median(c))
    }
}

/// A transport plan with its marginals and solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub gamma: Tensor,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub epsilon: f64,
    pub iterations: usize,
    /// max absolute marginal violation at exit
    pub marginal_error: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CouplingSummary {
    pub epsilon: f64,
    pub iterations: usize,
    pub marginal_error: f64,
    pub converged: bool,
    pub n_source: usize,
    pub n_target: usize,
    pub total_mass: f64,
    pub transport_cost: Option<f64>,
}

impl Coupling {
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.gamma.rows()).map(|i| self.gamma.row_slice(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.gamma.cols()];
        for i in 0..self.gamma.rows() {
            for (o, v) in out.iter_mut().zip(self.gamma.row_slice(i)) {
                *o += v;
            }
        }
        out
    }

    /// `⟨γ, C⟩`
    pub fn transport_cost(&self, c: &Tensor) -> f64 {
        self.gamma.data().iter().zip(c.data()).map(|(g, c)| g * c).sum()
    }

    pub fn summary(&self, cost: Option<&Tensor>) -> CouplingSummary {
        CouplingSummary {
            epsilon: self.epsilon,
            iterations: self.iterations,
            marginal_error: self.marginal_error,
            converged: self.converged,
            n_source: self.gamma.rows(),
            n_target: self.gamma.cols(),
            total_mass: self.gamma.sum(),
            transport_cost: cost.map(|c| self.transport_cost(c)),
        }
    }
}

pub fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

fn check_inputs(c: &Tensor, a: &[f64], b: &[f64], epsilon: f64) -> Result<(), SinkhornError> {
    let bad = |m: String| Err(SinkhornError::Contract(m));
    if c.rows() != a.len() || c.cols() != b.len() {
        return bad(format!("cost {:?} vs marginals {} and {}", c.shape(), a.len(), b.len()));
    }
    if a.is_empty() || b.is_empty() {
        return bad("empty marginal".into());
    }
    for (name, m) in [("a", a), ("b", b)] {
        if m.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return bad(format!("marginal {name} must be strictly positive"));
        }
        let s: f64 = m.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return bad(format!("marginal {name} sums to {s}, not 1"));
        }
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return bad(format!("epsilon must be positive, got {epsilon}"));
    }
    if !c.is_finite() {
        return bad("cost matrix has non-finite entries".into());
    }
    Ok(())
}

fn log_sum_exp(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = vals.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + vals.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Log-domain Sinkhorn: alternating updates of the dual potentials `f`, `g`
/// with `γ_ij = exp((f_i + g_j − C_ij)/ε)`.
///
/// Stops when the row-marginal violation (columns are exact after each
/// sweep) drops below `tol`, or after `max_iter` sweeps.
pub fn sinkhorn_solve(
    c: &Tensor,
    a: &[f64],
    b: &[f64],
    epsilon: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Coupling, SinkhornError> {
    check_inputs(c, a, b, epsilon)?;
    let (n, m) = (a.len(), b.len());
    let log_a: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|v| v.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let ct = c.transpose();
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        for i in 0..n {
            let row = c.row_slice(i);
            let lse = log_sum_exp(g.iter().zip(row).map(|(gj, cij)| (gj - cij) / epsilon));
            f[i] = epsilon * (log_a[i] - lse);
        }
        for j in 0..m {
            let lse = log_sum_exp(f.iter().zip(ct.row_slice(j)).map(|(fi, cij)| (fi - cij) / epsilon));
            g[j] = epsilon * (log_b[j] - lse);
        }
        if f.iter().chain(&g).any(|v| !v.is_finite()) {
            return Err(SinkhornError::Numerical(format!("non-finite dual potential after {iterations} sweeps")));
        }
        if iterations % 10 == 0 || iterations == max_iter {
            if row_violation(c, &f, &g, a, epsilon) < tol {
                break;
            }
        }
    }
    let gamma = Tensor::from_fn(n, m, |i, j| ((f[i] + g[j] - c.get(i, j)) / epsilon).exp());
    finish(gamma, a, b, epsilon, iterations, tol)
}

fn row_violation(c: &Tensor, f: &[f64], g: &[f64], a: &[f64], epsilon: f64) -> f64 {
    (0..a.len())
        .map(|i| {
            let s: f64 = g.iter().zip(c.row_slice(i)).map(|(gj, cij)| ((f[i] + gj - cij) / epsilon).exp()).sum();
            (s - a[i]).abs()
        })
        .fold(0.0, f64::max)
}

fn finish(
    gamma: Tensor,
    a: &[f64],
    b: &[f64],
    epsilon: f64,
    iterations: usize,
    tol: f64,
) -> Result<Coupling, SinkhornError> {
    if !gamma.is_finite() {
        return Err(SinkhornError::Numerical("non-finite coupling".into()));
    }
    let mut out = Coupling {
        gamma,
        a: a.to_vec(),
        b: b.to_vec(),
        epsilon,
        iterations,
        marginal_error: 0.0,
        converged: false,
    };
    let rows = out.row_sums();
    let cols = out.col_sums();
    out.marginal_error = rows
        .iter()
        .zip(a)
        .chain(cols.iter().zip(b))
        .map(|(s, t)| (s - t).abs())
        .fold(0.0, f64::max);
    out.converged = out.marginal_error < tol;
    if out.gamma.sum() == 0.0 {
        return Err(SinkhornError::Numerical("coupling underflowed to zero".into()));
    }
    Ok(out)
}

/// Plain scaling iterations on `K = exp(−C/ε)`. Underflows for small `ε`.
pub fn sinkhorn_naive(
    c: &Tensor,
    a: &[f64],
    b: &[f64],
    epsilon: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Coupling, SinkhornError> {
    check_inputs(c, a, b, epsilon)?;
    let k = c.map(|v| (-v / epsilon).exp());
    if k.data().iter().any(|&v| v == 0.0) {
        return Err(SinkhornError::Numerical("kernel underflow".into()));
    }
    let (n, m) = (a.len(), b.len());
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; m];
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        for i in 0..n {
            let kv: f64 = k.row_slice(i).iter().zip(&v).map(|(x, y)| x * y).sum();
            u[i] = a[i] / kv;
        }
        for j in 0..m {
            let ku: f64 = (0..n).map(|i| k.get(i, j) * u[i]).sum();
            v[j] = b[j] / ku;
        }
        if u.iter().chain(&v).any(|x| !x.is_finite() || *x == 0.0) {
            return Err(SinkhornError::Numerical(format!("scaling vector degenerate after {iterations} sweeps")));
        }
        if iterations % 10 == 0 || iterations == max_iter {
            let err = (0..n)
                .map(|i| {
                    let s: f64 = k.row_slice(i).iter().zip(&v).map(|(x, y)| x * y).sum();
                    (u[i] * s - a[i]).abs()
                })
                .fold(0.0, f64::max);
            if err < tol {
                break;
            }
        }
    }
    let gamma = Tensor::from_fn(n, m, |i, j| u[i] * k.get(i, j) * v[j]);
    finish(gamma, a, b, epsilon, iterations, tol)
}

/// Where the per-target fate comes from when reading a coupling.
pub enum TargetFates<'a> {
    /// observed labels of the target cells
    Real(&'a [Fate]),
    /// labels predicted by a classifier from target features
    Predicted { features: &'a Tensor, classifier: Option<&'a LogisticModel> },
}

/// For each source row, the fate holding the larger share of its mass.
/// Exact ties go to monocyte.
pub fn coupling_fate_prediction(coupling: &Coupling, targets: TargetFates<'_>) -> Result<Vec<Fate>, SinkhornError> {
    let fates: Vec<Fate> = match targets {
        TargetFates::Real(f) => f.to_vec(),
        TargetFates::Predicted { features, classifier } => {
            let clf = classifier
                .ok_or_else(|| SinkhornError::Contract("predicted-label mode needs a fitted classifier".into()))?;
            clf.predict(features).map_err(|e| SinkhornError::Contract(e.to_string()))?
        }
    };
    if fates.len() != coupling.gamma.cols() {
        return Err(SinkhornError::Contract(format!(
            "{} target labels for {} target cells",
            fates.len(),
            coupling.gamma.cols()
        )));
    }
    Ok((0..coupling.gamma.rows())
        .map(|i| {
            let (mut mono, mut neu) = (0.0, 0.0);
            for (g, f) in coupling.gamma.row_slice(i).iter().zip(&fates) {
                match f {
                    Fate::Monocyte => mono += g,
                    Fate::Neutrophil => neu += g,
                }
            }
            if neu > mono {
                Fate::Neutrophil
            } else {
                Fate::Monocyte
            }
        })
        .collect())
}

/// Writes `day2_id,day46_id,mass` for every entry above `floor`.
pub fn write_coupling_csv(
    path: &Path,
    coupling: &Coupling,
    source_ids: &[String],
    target_ids: &[String],
    floor: f64,
) -> Result<(), SinkhornError> {
    if source_ids.len() != coupling.gamma.rows() || target_ids.len() != coupling.gamma.cols() {
        return Err(SinkhornError::Contract("id lists do not match the coupling".into()));
    }
    let io = |e: std::io::Error| SinkhornError::Io(format!("{}: {e}", path.display()));
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "day2_id,day46_id,mass").map_err(io)?;
    for (i, s) in source_ids.iter().enumerate() {
        for (j, t) in target_ids.iter().enumerate() {
            let g = coupling.gamma.get(i, j);
            if g > floor {
                writeln!(w, "{s},{t},{g}").map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_cost_has_zero_diagonal() {
        let x = Tensor::from_rows(&[[0.0, 1.0], [2.0, -1.0], [3.0, 3.0]]).unwrap();
        let c = cost_matrix(&x, &x, CostKind::Euclidean).unwrap();
        for i in 0..3 {
            assert_eq!(c.get(i, i), 0.0);
            for j in 0..3 {
                assert_eq!(c.get(i, j), c.get(j, i));
            }
        }
    }

    #[test]
    fn three_four_five_costs() {
        let x = Tensor::row(&[0.0, 0.0]);
        let y = Tensor::row(&[3.0, 4.0]);
        assert_eq!(cost_matrix(&x, &y, CostKind::Euclidean).unwrap().item().unwrap(), 5.0);
        assert_eq!(cost_matrix(&x, &y, CostKind::SqEuclidean).unwrap().item().unwrap(), 25.0);
        assert!(cost_matrix(&x, &Tensor::row(&[1.0]), CostKind::Euclidean).is_err());
    }

    #[test]
    fn single_cell_forced_coupling() {
        let c = Tensor::scalar(3.0);
        let p = sinkhorn_solve(&c, &[1.0], &[1.0], 0.1, 1e-12, 100).unwrap();
        assert!((p.gamma.item().unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_cost_gives_uniform_plan() {
        let c = Tensor::filled(3, 4, 2.0);
        let p = sinkhorn_solve(&c, &uniform(3), &uniform(4), 0.5, 1e-12, 1000).unwrap();
        for &g in p.gamma.data() {
            assert!((g - 1.0 / 12.0).abs() < 1e-14);
        }
        assert!(p.converged);
    }

    #[test]
    fn majority_and_ties() {
        let gamma = Tensor::from_rows(&[[0.35, 0.15], [0.25, 0.25]]).unwrap();
        let c = Coupling {
            gamma,
            a: vec![0.5, 0.5],
            b: vec![0.6, 0.4],
            epsilon: 1.0,
            iterations: 0,
            marginal_error: 0.0,
            converged: true,
        };
        let fates = [Fate::Neutrophil, Fate::Monocyte];
        let pred = coupling_fate_prediction(&c, TargetFates::Real(&fates)).unwrap();
        assert_eq!(pred, [Fate::Neutrophil, Fate::Monocyte]);
        let same = [Fate::Neutrophil, Fate::Neutrophil];
        let pred = coupling_fate_prediction(&c, TargetFates::Real(&same)).unwrap();
        assert_eq!(pred, [Fate::Neutrophil; 2]);
        let missing = TargetFates::Predicted { features: &Tensor::zeros(2, 1), classifier: None };
        assert!(matches!(coupling_fate_prediction(&c, missing), Err(SinkhornError::Contract(_))));
    }

    #[test]
    fn rejects_bad_marginals() {
        let c = Tensor::zeros(2, 2);
        assert!(sinkhorn_solve(&c, &[0.5, 0.6], &uniform(2), 1.0, 1e-9, 10).is_err());
        assert!(sinkhorn_solve(&c, &[1.0, 0.0], &uniform(2), 1.0, 1e-9, 10).is_err());
        assert!(sinkhorn_solve(&c, &uniform(2), &uniform(2), 0.0, 1e-9, 10).is_err());
    }

    #[test]
    fn median_of_entries() {
        assert_eq!(median(&Tensor::row(&[3.0, 1.0, 2.0])), 2.0);
        assert_eq!(median(&Tensor::row(&[4.0, 1.0, 2.0, 3.0])), 2.5);
    }
}
