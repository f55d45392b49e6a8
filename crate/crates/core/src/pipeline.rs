//! End-to-end experiment steps shared by the command line and the test
//! suites: split, preprocess, pair, train, transport and score.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    assign_day2_labels, split_train_test, CloneMatrix, DataError, ExpressionMatrix, Fate, FateLabels,
    PairedDataset, PairingPool, Split, SynthDataset,
};
use crate::evalstats::{
    de_analysis, fit_fate_classifier, label_accuracy, DeReport, DeRun, EvalError, LogisticConfig, LogisticModel,
};
use crate::math::Tensor;
use crate::nets::{neutral_condition, Method, NetError, TrainConfig, TrainData, Trainer, TransportNet};
use crate::preprocess::{PreprocessError, Preprocessor};
use crate::sinkhorn::{
    cost_matrix, coupling_fate_prediction, sinkhorn_solve, uniform, Coupling, SinkhornConfig, SinkhornError,
    TargetFates,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Sinkhorn(#[from] SinkhornError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Raw inputs of one experiment.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub day2: ExpressionMatrix,
    pub day46: ExpressionMatrix,
    pub clones: CloneMatrix,
    pub day46_labels: FateLabels,
}

impl From<SynthDataset> for Dataset {
    fn from(s: SynthDataset) -> Self {
        Self { day2: s.day2, day46: s.day46, clones: s.clones, day46_labels: s.day46_labels }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// number of principal components
    pub k: usize,
    pub train_fraction: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { k: 10, train_fraction: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub p_threshold: f64,
    pub welch: bool,
    pub classifier: LogisticConfig,
    /// explicit small/medium/large pair counts; derived from the eligible
    /// cell count when absent
    pub pair_counts: Option<Vec<usize>>,
    pub seeds: Vec<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            p_threshold: 1e-6,
            welch: false,
            classifier: LogisticConfig::default(),
            pair_counts: None,
            seeds: vec![0, 1, 2],
        }
    }
}

/// Seed offset separating the day-4/6 split from the day-2 split.
const DAY46_SPLIT_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Everything fixed by one run seed before any method is trained.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub seed: u64,
    pub split2: Split,
    pub split46: Split,
    pub preprocessor: Preprocessor,
    /// all day-2 cells in model space
    pub z2: Tensor,
    /// all day-4/6 cells in model space
    pub z46: Tensor,
    /// clone-majority label per day-2 row
    pub assigned2: Vec<Option<Fate>>,
    pub fates46: Vec<Option<Fate>>,
    /// pairing candidates restricted to training rows
    pub pool: PairingPool,
    pub classifier: LogisticModel,
    /// day-4/6 rows the classifier was fitted on
    pub classifier_rows: Vec<usize>,
    /// labeled test day-2 rows
    pub eval_rows: Vec<usize>,
    pub eval_labels: Vec<Fate>,
}

pub fn prepare(
    ds: &Dataset,
    pre: &PreprocessConfig,
    classifier: &LogisticConfig,
    seed: u64,
) -> Result<Prepared, PipelineError> {
    let split2 = split_train_test(ds.day2.n_cells(), pre.train_fraction, seed)?;
    let split46 = split_train_test(ds.day46.n_cells(), pre.train_fraction, seed ^ DAY46_SPLIT_SALT)?;
    let train2 = ds.day2.subset(&split2.train);
    let train46 = ds.day46.subset(&split46.train);
    let preprocessor = Preprocessor::fit(&[&train2, &train46], pre.k)?;
    let z2 = preprocessor.transform(&ds.day2)?;
    let z46 = preprocessor.transform(&ds.day46)?;

    let labels2 = assign_day2_labels(&ds.day2, &ds.clones, &ds.day46_labels).labels;
    let assigned2: Vec<Option<Fate>> = ds.day2.cell_ids.iter().map(|id| labels2.get(id).copied()).collect();
    let fates46: Vec<Option<Fate>> = ds.day46.cell_ids.iter().map(|id| ds.day46_labels.get(id).copied()).collect();

    let pool = PairingPool::new(&ds.day2, &ds.day46, &ds.clones, &ds.day46_labels)
        .restrict(&split2.train, &split46.train);

    let classifier_rows: Vec<usize> = split46.train.iter().copied().filter(|&j| fates46[j].is_some()).collect();
    let clf_fates: Vec<Fate> = classifier_rows.iter().map(|&j| fates46[j].unwrap()).collect();
    let classifier = fit_fate_classifier(&z46.select_rows(&classifier_rows), &clf_fates, classifier, seed)?;

    let eval_rows: Vec<usize> = split2.test.iter().copied().filter(|&i| assigned2[i].is_some()).collect();
    let eval_labels = eval_rows.iter().map(|&i| assigned2[i].unwrap()).collect();
    Ok(Prepared {
        seed,
        split2,
        split46,
        preprocessor,
        z2,
        z46,
        assigned2,
        fates46,
        pool,
        classifier,
        classifier_rows,
        eval_rows,
        eval_labels,
    })
}

/// Reference pair counts and the eligible pool they were chosen for.
pub const REFERENCE_PAIR_COUNTS: [usize; 3] = [300, 600, 900];
pub const REFERENCE_ELIGIBLE: usize = 1527;

/// The reference counts when the pool is at least as large as the
/// reference pool, otherwise the same ratios of `n_eligible`.
pub fn default_pair_counts(n_eligible: usize) -> Vec<usize> {
    if n_eligible >= REFERENCE_ELIGIBLE {
        return REFERENCE_PAIR_COUNTS.to_vec();
    }
    REFERENCE_PAIR_COUNTS
        .iter()
        .map(|&c| (c as f64 * n_eligible as f64 / REFERENCE_ELIGIBLE as f64).round() as usize)
        .collect()
}

impl EvalConfig {
    pub fn pair_counts_for(&self, n_eligible: usize) -> Vec<usize> {
        self.pair_counts.clone().unwrap_or_else(|| default_pair_counts(n_eligible))
    }
}

/// Outcome of transporting the labeled test day-2 cells.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub transported: Tensor,
    pub predictions: Vec<Fate>,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct LearnedRun {
    pub trainer: Trainer,
    pub pairs: PairedDataset,
    pub evaluation: Evaluation,
}

impl Prepared {
    pub fn n_eligible(&self) -> usize {
        self.pool.n_eligible()
    }

    /// Labeled test day-2 cells in model space.
    pub fn eval_inputs(&self) -> Tensor {
        self.z2.select_rows(&self.eval_rows)
    }

    /// Training tensors for `cfg`; pairs are given in dataset row indices.
    pub fn train_data(&self, cfg: &TrainConfig, pairs: &[(usize, usize)]) -> TrainData {
        let rows2: Vec<usize> =
            self.split2.train.iter().copied().filter(|&i| !cfg.conditional || self.assigned2[i].is_some()).collect();
        let rows46: Vec<usize> =
            self.split46.train.iter().copied().filter(|&j| !cfg.conditional || self.fates46[j].is_some()).collect();
        let pos2: HashMap<usize, usize> = rows2.iter().enumerate().map(|(p, &i)| (i, p)).collect();
        let pos46: HashMap<usize, usize> = rows46.iter().enumerate().map(|(p, &j)| (j, p)).collect();
        let local: Vec<(usize, usize)> =
            pairs.iter().filter_map(|(i, j)| Some((*pos2.get(i)?, *pos46.get(j)?))).collect();
        let data = TrainData::new(self.z2.select_rows(&rows2), self.z46.select_rows(&rows46), local);
        if cfg.conditional {
            let f2 = rows2.iter().map(|&i| self.assigned2[i].unwrap()).collect();
            let f46 = rows46.iter().map(|&j| self.fates46[j].unwrap()).collect();
            data.with_fates(f2, f46)
        } else {
            data
        }
    }

    /// Classifies already transported test cells.
    pub fn score(&self, transported: Tensor) -> Result<Evaluation, PipelineError> {
        let predictions = self.classifier.predict(&transported)?;
        let accuracy = label_accuracy(&predictions, &self.eval_labels)?;
        Ok(Evaluation { transported, predictions, accuracy })
    }

    /// Transports the labeled test cells with `net`; conditional nets get
    /// the neutral class channel.
    pub fn evaluate_net(&self, net: &TransportNet) -> Result<Evaluation, PipelineError> {
        let x = self.eval_inputs();
        let cond = (net.cond_dim > 0).then(|| neutral_condition(x.rows()));
        let out = net.apply(&x, cond.as_ref()).map_err(NetError::from)?;
        self.score(out)
    }

    /// The untrained reference: every test cell stays where it is.
    pub fn evaluate_identity(&self) -> Result<Evaluation, PipelineError> {
        self.score(self.eval_inputs())
    }

    /// The training configuration and pairs for `method` at `n_pairs`
    /// (all eligible pairs for the supervised baseline, none for the
    /// unpaired ones). The run seed drives pairs and weights.
    pub fn learned_config(
        &self,
        method: Method,
        base: &TrainConfig,
        n_pairs: usize,
    ) -> Result<(TrainConfig, PairedDataset), PipelineError> {
        let mut cfg = method.configure(base);
        cfg.seed = self.seed;
        let n_pairs = match method {
            Method::Supervised => self.n_eligible(),
            Method::SuperOt => n_pairs,
            Method::Cgan | Method::GanOt => 0,
        };
        cfg.n_pairs = n_pairs;
        if n_pairs == 0 {
            cfg.use_supervised = false;
        }
        let pairs = self.pool.sample(n_pairs, self.seed)?;
        Ok((cfg, pairs))
    }

    pub fn run_learned(&self, method: Method, base: &TrainConfig, n_pairs: usize) -> Result<LearnedRun, PipelineError> {
        let (cfg, pairs) = self.learned_config(method, base, n_pairs)?;
        let data = self.train_data(&cfg, &pairs.pairs);
        let mut trainer = Trainer::new(method, &cfg, data.day2.cols())?;
        trainer.train(&data, |_| Ok(()))?;
        let evaluation = self.evaluate_net(&trainer.transport)?;
        Ok(LearnedRun { trainer, pairs, evaluation })
    }

    /// Entropic OT from the labeled test day-2 cells to every labeled
    /// day-4/6 cell. Returns the coupling and the predictions read with real
    /// and with classifier-predicted target labels.
    pub fn run_sinkhorn(&self, cfg: &SinkhornConfig) -> Result<SinkhornRun, PipelineError> {
        let targets: Vec<usize> = (0..self.fates46.len()).filter(|&j| self.fates46[j].is_some()).collect();
        let real: Vec<Fate> = targets.iter().map(|&j| self.fates46[j].unwrap()).collect();
        let src = self.eval_inputs();
        let dst = self.z46.select_rows(&targets);
        let c = cost_matrix(&src, &dst, cfg.cost)?;
        let eps = cfg.resolve_epsilon(&c);
        let coupling = sinkhorn_solve(&c, &uniform(src.rows()), &uniform(dst.rows()), eps, cfg.tol, cfg.max_iter)?;
        let real_pred = coupling_fate_prediction(&coupling, TargetFates::Real(&real))?;
        let predicted_pred = coupling_fate_prediction(
            &coupling,
            TargetFates::Predicted { features: &dst, classifier: Some(&self.classifier) },
        )?;
        Ok(SinkhornRun {
            real_accuracy: label_accuracy(&real_pred, &self.eval_labels)?,
            predicted_accuracy: label_accuracy(&predicted_pred, &self.eval_labels)?,
            real_predictions: real_pred,
            predicted_predictions: predicted_pred,
            target_rows: targets,
            transport_cost: coupling.transport_cost(&c),
            coupling,
        })
    }

    /// Transported test cells split by assigned fate.
    pub fn split_by_label(&self, transported: &Tensor) -> (Tensor, Tensor) {
        let idx = |f: Fate| -> Vec<usize> { (0..self.eval_labels.len()).filter(|&i| self.eval_labels[i] == f).collect() };
        (transported.select_rows(&idx(Fate::Monocyte)), transported.select_rows(&idx(Fate::Neutrophil)))
    }
}

#[derive(Debug, Clone)]
pub struct SinkhornRun {
    pub coupling: Coupling,
    /// day-4/6 rows the coupling's columns refer to
    pub target_rows: Vec<usize>,
    pub real_predictions: Vec<Fate>,
    pub predicted_predictions: Vec<Fate>,
    pub real_accuracy: f64,
    pub predicted_accuracy: f64,
    pub transport_cost: f64,
}

/// Labeled day-4/6 cells in gene space, split by fate.
pub fn real_gene_sets(ds: &Dataset, pre: &Preprocessor) -> Result<(Tensor, Tensor), PipelineError> {
    let genes = pre.gene_space(&ds.day46)?;
    let rows = |f: Fate| -> Vec<usize> {
        (0..ds.day46.n_cells()).filter(|&j| ds.day46_labels.get(&ds.day46.cell_ids[j]) == Some(&f)).collect()
    };
    Ok((genes.select_rows(&rows(Fate::Monocyte)), genes.select_rows(&rows(Fate::Neutrophil))))
}

/// Differential expression over several runs, each given as its prepared
/// state and its transported labeled test cells.
pub fn de_over_runs(
    ds: &Dataset,
    runs: &[(&Prepared, &Tensor)],
    p_threshold: f64,
    welch: bool,
) -> Result<DeReport, PipelineError> {
    let first = runs.first().ok_or_else(|| EvalError::Contract("no runs".into()))?;
    let de_runs: Vec<DeRun<'_>> = runs
        .iter()
        .map(|(p, t)| {
            let (mono, neu) = p.split_by_label(t);
            DeRun { mono, neu, preprocessor: &p.preprocessor }
        })
        .collect();
    let (real_mono, real_neu) = real_gene_sets(ds, &first.0.preprocessor)?;
    Ok(de_analysis(&de_runs, &real_mono, &real_neu, &ds.day46.gene_ids, p_threshold, welch)?)
}
