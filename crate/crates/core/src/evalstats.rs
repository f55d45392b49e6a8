//! Fate classification accuracy, two-sample t-tests, differential expression
//! analysis and 2-D embedding export.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Fate;
use crate::math::{sigmoid, Tensor};
use crate::preprocess::{pca_fit, Preprocessor};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("io error: {0}")]
    Io(String),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> EvalError + '_ {
    move |e| EvalError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticConfig {
    /// L2 penalty on the weights (not the bias)
    pub l2: f64,
    /// initial step of the backtracking line search
    pub lr: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self { l2: 1e-2, lr: 1.0, max_iter: 5000, grad_tol: 1e-6 }
    }
}

/// Binary logistic model; the positive class is neutrophil.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub w: Vec<f64>,
    pub b: f64,
    pub iterations: usize,
    pub final_loss: f64,
    pub grad_norm: f64,
    pub l2: f64,
}

/// Mean cross-entropy plus `l2/2·‖w‖²`, and its gradient `(∇w, ∂b)`.
pub fn logistic_objective(x: &Tensor, y: &[bool], w: &[f64], b: f64, l2: f64) -> (f64, Vec<f64>, f64) {
    let n = x.rows() as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let row = x.row_slice(i);
        let z: f64 = row.iter().zip(w).map(|(a, c)| a * c).sum::<f64>() + b;
        // log(1 + e^z) − y·z, evaluated stably
        let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
        loss += softplus - if yi { z } else { 0.0 };
        let r = sigmoid(z) - if yi { 1.0 } else { 0.0 };
        for (g, a) in gw.iter_mut().zip(row) {
            *g += r * a;
        }
        gb += r;
    }
    loss /= n;
    gb /= n;
    for (g, wj) in gw.iter_mut().zip(w) {
        *g = *g / n + l2 * wj;
    }
    loss += 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();
    (loss, gw, gb)
}

/// Gradient descent with backtracking until `‖∇‖ < grad_tol` or `max_iter`.
pub fn fit_logistic(x: &Tensor, y: &[bool], cfg: &LogisticConfig) -> Result<LogisticModel, EvalError> {
    if x.rows() != y.len() {
        return Err(EvalError::Contract(format!("{} rows but {} labels", x.rows(), y.len())));
    }
    if x.rows() < 2 || y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
        return Err(EvalError::Contract("classifier needs both classes present".into()));
    }
    let d = x.cols();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let (mut loss, mut gw, mut gb) = logistic_objective(x, y, &w, b, cfg.l2);
    let mut step = cfg.lr;
    let mut iterations = 0;
    let norm = |gw: &[f64], gb: f64| (gw.iter().map(|v| v * v).sum::<f64>() + gb * gb).sqrt();
    while iterations < cfg.max_iter && norm(&gw, gb) >= cfg.grad_tol {
        iterations += 1;
        let g2 = norm(&gw, gb).powi(2);
        loop {
            let w_new: Vec<f64> = w.iter().zip(&gw).map(|(a, g)| a - step * g).collect();
            let b_new = b - step * gb;
            let (l_new, gw_new, gb_new) = logistic_objective(x, y, &w_new, b_new, cfg.l2);
            if l_new <= loss - 0.5 * step * g2 || step < 1e-12 {
                (w, b, loss, gw, gb) = (w_new, b_new, l_new, gw_new, gb_new);
                step = (step * 2.0).min(cfg.lr.max(1.0) * 1e3);
                break;
            }
            step *= 0.5;
        }
    }
    let grad_norm = norm(&gw, gb);
    Ok(LogisticModel { w, b, iterations, final_loss: loss, grad_norm, l2: cfg.l2 })
}

impl LogisticModel {
    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn predict_proba(&self, x: &Tensor) -> Result<Vec<f64>, EvalError> {
        if x.cols() != self.dim() {
            return Err(EvalError::Contract(format!(
                "classifier expects {} features, got {}",
                self.dim(),
                x.cols()
            )));
        }
        Ok((0..x.rows())
            .map(|i| {
                let z: f64 = x.row_slice(i).iter().zip(&self.w).map(|(a, c)| a * c).sum::<f64>() + self.b;
                sigmoid(z)
            })
            .collect())
    }

    /// Neutrophil when `p ≥ 0.5`.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<Fate>, EvalError> {
        Ok(self.predict_proba(x)?.into_iter().map(|p| Fate::from_binary(p >= 0.5)).collect())
    }
}

/// Row indices with the majority class subsampled (seeded) to the minority count.
pub fn balanced_indices(fates: &[Fate], seed: u64) -> Vec<usize> {
    let mut mono: Vec<usize> = (0..fates.len()).filter(|&i| fates[i] == Fate::Monocyte).collect();
    let mut neu: Vec<usize> = (0..fates.len()).filter(|&i| fates[i] == Fate::Neutrophil).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = mono.len().min(neu.len());
    mono.shuffle(&mut rng);
    neu.shuffle(&mut rng);
    let mut out: Vec<usize> = mono[..n].iter().chain(&neu[..n]).copied().collect();
    out.sort_unstable();
    out
}

/// Fits the fate classifier on real day-4/6 cells with balanced classes.
pub fn fit_fate_classifier(
    real: &Tensor,
    fates: &[Fate],
    cfg: &LogisticConfig,
    seed: u64,
) -> Result<LogisticModel, EvalError> {
    if real.rows() != fates.len() {
        return Err(EvalError::Contract("feature rows and fates differ in length".into()));
    }
    let idx = balanced_indices(fates, seed);
    let y: Vec<bool> = idx.iter().map(|&i| fates[i] == Fate::Neutrophil).collect();
    fit_logistic(&real.select_rows(&idx), &y, cfg)
}

/// Fraction of `predicted` that equals `assigned`.
pub fn label_accuracy(predicted: &[Fate], assigned: &[Fate]) -> Result<f64, EvalError> {
    if predicted.len() != assigned.len() {
        return Err(EvalError::Contract("prediction and label counts differ".into()));
    }
    if assigned.is_empty() {
        return Err(EvalError::Contract("empty evaluable test set".into()));
    }
    let hits = predicted.iter().zip(assigned).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / assigned.len() as f64)
}

/// Accuracy of the classifier's calls on transported cells against the
/// clone-majority labels.
pub fn fate_accuracy(transported: &Tensor, classifier: &LogisticModel, assigned: &[Fate]) -> Result<f64, EvalError> {
    label_accuracy(&classifier.predict(transported)?, assigned)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: f64,
    /// zero variance: `p` is set by convention
    pub degenerate: bool,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Two-sided p-value of a t statistic with `df` degrees of freedom,
/// `I_{df/(df+t²)}(df/2, 1/2)`.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    statrs::function::beta::beta_reg(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

/// Student's pooled-variance two-sample t-test, or Welch's with `welch`.
///
/// With zero variance the statistic is 0 and `p = 1` when the means agree,
/// otherwise infinite with `p = 0`.
pub fn ttest_two_sample(a: &[f64], b: &[f64], welch: bool) -> Result<TTest, EvalError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(EvalError::Contract(format!(
            "t-test needs at least 2 values per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (se2, df) = if welch {
        let (qa, qb) = (va / na, vb / nb);
        let se2 = qa + qb;
        let df = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
        (se2, df)
    } else {
        let df = na + nb - 2.0;
        let pooled = ((na - 1.0) * va + (nb - 1.0) * vb) / df;
        (pooled * (1.0 / na + 1.0 / nb), df)
    };
    let diff = ma - mb;
    if se2 == 0.0 {
        let df = if df.is_finite() { df } else { na + nb - 2.0 };
        return Ok(if diff == 0.0 {
            TTest { t: 0.0, p: 1.0, df, degenerate: true }
        } else {
            TTest { t: diff.signum() * f64::INFINITY, p: 0.0, df, degenerate: true }
        });
    }
    let t = diff / se2.sqrt();
    Ok(TTest { t, p: t_two_sided_p(t, df), df, degenerate: false })
}

/// Per-gene t-tests between the rows of `a` and `b` (gene space).
pub fn per_gene_tests(a: &Tensor, b: &Tensor, welch: bool) -> Result<Vec<TTest>, EvalError> {
    if a.cols() != b.cols() {
        return Err(EvalError::Contract("gene counts differ".into()));
    }
    let (at, bt) = (a.transpose(), b.transpose());
    (0..a.cols()).map(|g| ttest_two_sample(at.row_slice(g), bt.row_slice(g), welch)).collect()
}

/// Transported cells of one run, split by assigned fate, in model space,
/// with the preprocessing fitted for that run.
pub struct DeRun<'a> {
    pub mono: Tensor,
    pub neu: Tensor,
    pub preprocessor: &'a Preprocessor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneTest {
    pub gene_id: String,
    pub t: f64,
    pub p: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeReport {
    pub p_threshold: f64,
    pub n_runs: usize,
    pub per_run: Vec<Vec<GeneTest>>,
    pub run_sets: Vec<BTreeSet<String>>,
    /// genes significant in every run
    pub predicted: BTreeSet<String>,
    /// genes significant between the real populations
    pub truth: BTreeSet<String>,
    /// `None` when nothing was predicted
    pub precision: Option<f64>,
    /// `None` when the truth set is empty
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeSummary {
    pub p_threshold: f64,
    pub n_runs: usize,
    pub run_counts: Vec<usize>,
    pub n_predicted: usize,
    pub n_truth: usize,
    pub n_overlap: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

fn significant_set(gene_ids: &[String], tests: &[TTest], threshold: f64) -> (Vec<GeneTest>, BTreeSet<String>) {
    let rows: Vec<GeneTest> = gene_ids
        .iter()
        .zip(tests)
        .map(|(g, t)| GeneTest { gene_id: g.clone(), t: t.t, p: t.p, significant: t.p < threshold })
        .collect();
    let set = rows.iter().filter(|r| r.significant).map(|r| r.gene_id.clone()).collect();
    (rows, set)
}

/// Precision and recall of `predicted` against `truth`.
pub fn precision_recall(predicted: &BTreeSet<String>, truth: &BTreeSet<String>) -> (Option<f64>, Option<f64>) {
    let overlap = predicted.intersection(truth).count() as f64;
    let precision = (!predicted.is_empty()).then(|| overlap / predicted.len() as f64);
    let recall = (!truth.is_empty()).then(|| overlap / truth.len() as f64);
    (precision, recall)
}

/// Genes significant between transported fate groups in every run, scored
/// against the genes significant between the real populations.
pub fn de_analysis(
    runs: &[DeRun<'_>],
    real_mono: &Tensor,
    real_neu: &Tensor,
    gene_ids: &[String],
    p_threshold: f64,
    welch: bool,
) -> Result<DeReport, EvalError> {
    if runs.is_empty() {
        return Err(EvalError::Contract("differential expression needs at least one run".into()));
    }
    if real_mono.cols() != gene_ids.len() {
        return Err(EvalError::Contract("gene ids do not match the real data".into()));
    }
    let mut per_run = Vec::new();
    let mut run_sets = Vec::new();
    for (r, run) in runs.iter().enumerate() {
        let inv = |z: &Tensor| {
            run.preprocessor.inverse(z).map_err(|e| EvalError::Contract(format!("run {r}: {e}")))
        };
        let (mono, neu) = (inv(&run.mono)?, inv(&run.neu)?);
        if mono.cols() != gene_ids.len() {
            return Err(EvalError::Contract(format!("run {r}: preprocessing gene count mismatch")));
        }
        let tests = per_gene_tests(&mono, &neu, welch)?;
        let (rows, set) = significant_set(gene_ids, &tests, p_threshold);
        per_run.push(rows);
        run_sets.push(set);
    }
    let mut predicted = run_sets[0].clone();
    for s in &run_sets[1..] {
        predicted = predicted.intersection(s).cloned().collect();
    }
    let truth_tests = per_gene_tests(real_mono, real_neu, welch)?;
    let (_, truth) = significant_set(gene_ids, &truth_tests, p_threshold);
    let (precision, recall) = precision_recall(&predicted, &truth);
    Ok(DeReport { p_threshold, n_runs: runs.len(), per_run, run_sets, predicted, truth, precision, recall })
}

impl DeReport {
    pub fn summary(&self) -> DeSummary {
        DeSummary {
            p_threshold: self.p_threshold,
            n_runs: self.n_runs,
            run_counts: self.run_sets.iter().map(BTreeSet::len).collect(),
            n_predicted: self.predicted.len(),
            n_truth: self.truth.len(),
            n_overlap: self.predicted.intersection(&self.truth).count(),
            precision: self.precision,
            recall: self.recall,
        }
    }

    pub fn run_csv(&self, run: usize) -> String {
        let mut s = String::from("gene_id,t,p,significant\n");
        for g in &self.per_run[run] {
            let _ = writeln!(s, "{},{},{},{}", g.gene_id, g.t, g.p, g.significant);
        }
        s
    }

    /// Writes `de_run{r}.csv` per run and `de_summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>, EvalError> {
        let mut out = Vec::new();
        for r in 0..self.n_runs {
            let p = dir.join(format!("de_run{r}.csv"));
            std::fs::write(&p, self.run_csv(r)).map_err(io_err(&p))?;
            out.push(p);
        }
        let p = dir.join("de_summary.json");
        let json = serde_json::to_string_pretty(&self.summary()).expect("summary serializes");
        std::fs::write(&p, json).map_err(io_err(&p))?;
        out.push(p);
        Ok(out)
    }
}

/// Named point sets projected onto the first two principal axes of their union.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub points: Vec<(String, f64, f64)>,
}

const PALETTE: [&str; 8] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"];

pub fn export_embedding_2d(sets: &[(String, Tensor)]) -> Result<Embedding, EvalError> {
    let Some((_, first)) = sets.first() else {
        return Err(EvalError::Contract("no point sets".into()));
    };
    let d = first.cols();
    let mut union = Tensor::zeros(0, d);
    for (name, t) in sets {
        if t.cols() != d {
            return Err(EvalError::Contract(format!("set {name} has width {}, expected {d}", t.cols())));
        }
        union = union.vstack(t).expect("equal widths");
    }
    if union.rows() == 0 {
        return Err(EvalError::Contract("all point sets are empty".into()));
    }
    let k = 2.min(d).min(union.rows().saturating_sub(1));
    let coords = if k == 0 {
        Tensor::zeros(union.rows(), 2)
    } else {
        let pca = pca_fit(&union, k).map_err(|e| EvalError::Contract(e.to_string()))?;
        let z = pca.transform(&union).map_err(|e| EvalError::Contract(e.to_string()))?;
        Tensor::from_fn(union.rows(), 2, |i, j| if j < k { z.get(i, j) } else { 0.0 })
    };
    let mut points = Vec::with_capacity(union.rows());
    let mut row = 0;
    for (name, t) in sets {
        for _ in 0..t.rows() {
            points.push((name.clone(), coords.get(row, 0), coords.get(row, 1)));
            row += 1;
        }
    }
    Ok(Embedding { points })
}

impl Embedding {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("set,x,y\n");
        for (n, x, y) in &self.points {
            let _ = writeln!(s, "{n},{x},{y}");
        }
        s
    }

    pub fn to_svg(&self) -> String {
        let (w, h, pad) = (480.0, 480.0, 40.0);
        let xs = self.points.iter().map(|p| p.1);
        let ys = self.points.iter().map(|p| p.2);
        let (x0, x1) = (xs.clone().fold(f64::INFINITY, f64::min), xs.fold(f64::NEG_INFINITY, f64::max));
        let (y0, y1) = (ys.clone().fold(f64::INFINITY, f64::min), ys.fold(f64::NEG_INFINITY, f64::max));
        let sx = if x1 > x0 { (w - 2.0 * pad) / (x1 - x0) } else { 0.0 };
        let sy = if y1 > y0 { (h - 2.0 * pad) / (y1 - y0) } else { 0.0 };
        let mut names: Vec<&str> = Vec::new();
        for (n, _, _) in &self.points {
            if !names.contains(&n.as_str()) {
                names.push(n);
            }
        }
        let color = |n: &str| PALETTE[names.iter().position(|m| *m == n).unwrap_or(0) % PALETTE.len()];
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        );
        for (n, x, y) in &self.points {
            let cx = pad + (x - x0) * sx;
            let cy = h - pad - (y - y0) * sy;
            let _ = writeln!(s, "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"2.5\" fill=\"{}\" fill-opacity=\"0.7\"/>", color(n));
        }
        for (i, n) in names.iter().enumerate() {
            let y = 16.0 + 16.0 * i as f64;
            let _ = writeln!(
                s,
                "<rect x=\"8\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"22\" y=\"{}\" font-size=\"12\" font-family=\"sans-serif\">{n}</text>",
                y - 9.0,
                color(n),
                y
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub method: String,
    pub n_pairs: usize,
    pub seed: u64,
    pub accuracy: f64,
}

pub const ACCURACY_HEADER: &str = "method,n_pairs,seed,accuracy";

pub fn accuracy_csv(rows: &[AccuracyRow]) -> String {
    let mut s = format!("{ACCURACY_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.method, r.n_pairs, r.seed, r.accuracy);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_line_is_learned() {
        let x = Tensor::from_rows(&[[-2.0], [-1.0], [-0.5], [0.5], [1.0], [2.0]]).unwrap();
        let y = [false, false, false, true, true, true];
        let m = fit_logistic(&x, &y, &LogisticConfig::default()).unwrap();
        let pred = m.predict(&x).unwrap();
        let truth: Vec<Fate> = y.iter().map(|&v| Fate::from_binary(v)).collect();
        assert_eq!(label_accuracy(&pred, &truth).unwrap(), 1.0);
        assert!(m.grad_norm < 1e-6);
    }

    #[test]
    fn single_class_rejected() {
        let x = Tensor::zeros(3, 1);
        assert!(fit_logistic(&x, &[true; 3], &LogisticConfig::default()).is_err());
    }

    #[test]
    fn identical_samples() {
        let a = [1.0, 2.0, 4.0, 7.0];
        let r = ttest_two_sample(&a, &a, false).unwrap();
        assert_eq!(r.t, 0.0);
        assert!((r.p - 1.0).abs() < 1e-15);
    }

    #[test]
    fn extreme_separation() {
        let a = [1.0, 2.0, 3.0];
        let b = [101.0, 102.0, 103.0];
        assert!(ttest_two_sample(&a, &b, false).unwrap().p < 1e-6);
    }

    #[test]
    fn zero_variance_conventions() {
        let r = ttest_two_sample(&[2.0, 2.0], &[2.0, 2.0, 2.0], false).unwrap();
        assert!(r.degenerate && r.p == 1.0);
        let r = ttest_two_sample(&[2.0, 2.0], &[3.0, 3.0], true).unwrap();
        assert!(r.degenerate && r.p == 0.0 && r.t == f64::NEG_INFINITY);
    }

    #[test]
    fn swapping_groups_negates_t() {
        let a = [0.3, 1.2, -0.4, 2.2, 0.9];
        let b = [1.1, 2.5, 1.9, 3.0];
        for welch in [false, true] {
            let ab = ttest_two_sample(&a, &b, welch).unwrap();
            let ba = ttest_two_sample(&b, &a, welch).unwrap();
            assert_eq!(ab.t, -ba.t);
            assert_eq!(ab.p, ba.p);
        }
    }

    #[test]
    fn known_student_value() {
        // closed form at 4 degrees of freedom: p = 1 − x(3 − x²)/2 with x = |t|/√(t² + 4)
        let t: f64 = -3.0;
        let x = t.abs() / (t * t + 4.0).sqrt();
        let p = t_two_sided_p(t, 4.0);
        assert!((p - (1.0 - x * (3.0 - x * x) / 2.0)).abs() < 1e-14, "{p}");
    }

    #[test]
    fn balanced_subsample() {
        let f = [Fate::Monocyte, Fate::Monocyte, Fate::Monocyte, Fate::Neutrophil];
        let idx = balanced_indices(&f, 3);
        assert_eq!(idx.len(), 2);
        assert!(idx.contains(&3));
    }

    #[test]
    fn single_point_embeds_at_origin() {
        let e = export_embedding_2d(&[("a".into(), Tensor::row(&[3.0, 4.0, 5.0]))]).unwrap();
        assert_eq!(e.points, vec![("a".to_string(), 0.0, 0.0)]);
        assert_eq!(e.to_csv(), "set,x,y\na,0,0\n");
    }

    #[test]
    fn precision_recall_empty_prediction() {
        let truth: BTreeSet<String> = ["g1".to_string()].into();
        assert_eq!(precision_recall(&BTreeSet::new(), &truth), (None, Some(0.0)));
    }
}
