use std::collections::BTreeSet;

use superot_core::data::{synth_branching, Fate, SynthConfig};
use superot_core::evalstats::LogisticConfig;
use superot_core::nets::{Method, TrainConfig};
use superot_core::pipeline::{de_over_runs, default_pair_counts, prepare, real_gene_sets, Dataset, PreprocessConfig};

fn small() -> (Dataset, SynthConfig) {
    let cfg = SynthConfig { n_genes: 60, n_day2: 120, n_day46: 400, n_clones: 30, ..SynthConfig::default() };
    (synth_branching(&cfg).unwrap().into(), cfg)
}

fn pre() -> PreprocessConfig {
    PreprocessConfig { k: 6, ..PreprocessConfig::default() }
}

#[test]
fn classifier_sees_only_labeled_training_cells() {
    let (ds, _) = small();
    let p = prepare(&ds, &pre(), &LogisticConfig::default(), 3).unwrap();
    let train: BTreeSet<usize> = p.split46.train.iter().copied().collect();
    assert!(!p.classifier_rows.is_empty());
    for &j in &p.classifier_rows {
        assert!(train.contains(&j));
        assert!(p.fates46[j].is_some());
    }
    let test2: BTreeSet<usize> = p.split2.test.iter().copied().collect();
    assert!(p.eval_rows.iter().all(|i| test2.contains(i)));
    for (&i, &f) in p.eval_rows.iter().zip(&p.eval_labels) {
        assert_eq!(p.assigned2[i], Some(f));
    }
}

#[test]
fn pairs_come_from_training_rows_only() {
    let (ds, _) = small();
    let p = prepare(&ds, &pre(), &LogisticConfig::default(), 4).unwrap();
    let pairs = p.pool.sample(p.n_eligible(), 4).unwrap();
    let tr2: BTreeSet<usize> = p.split2.train.iter().copied().collect();
    let tr46: BTreeSet<usize> = p.split46.train.iter().copied().collect();
    for &(i, j) in &pairs.pairs {
        assert!(tr2.contains(&i) && tr46.contains(&j));
        assert_eq!(p.assigned2[i], p.fates46[j]);
    }
}

#[test]
fn learned_runs_are_reproducible() {
    let (ds, _) = small();
    let p = prepare(&ds, &pre(), &LogisticConfig::default(), 5).unwrap();
    let base = TrainConfig { hidden: 16, max_epochs: 5, lr: 1e-3, ..TrainConfig::default() };
    let a = p.run_learned(Method::SuperOt, &base, 10).unwrap();
    let b = p.run_learned(Method::SuperOt, &base, 10).unwrap();
    assert_eq!(a.trainer, b.trainer);
    assert_eq!(a.evaluation.accuracy, b.evaluation.accuracy);
    assert_eq!(a.pairs.len(), 10);
    let g = p.run_learned(Method::GanOt, &base, 10).unwrap();
    assert!(g.pairs.is_empty() && !g.trainer.cfg.use_supervised);
}

#[test]
fn oracle_transport_recovers_the_real_de_set() {
    let (ds, _) = small();
    // a full basis makes the inverse projection exact
    let full = PreprocessConfig { k: ds.day46.n_genes(), ..pre() };
    let runs: Vec<_> = (0..3).map(|s| prepare(&ds, &full, &LogisticConfig::default(), s).unwrap()).collect();
    let (mono, neu) = real_gene_sets(&ds, &runs[0].preprocessor).unwrap();
    assert!(mono.rows() > 0 && neu.rows() > 0);
    let mut oracle = Vec::new();
    for p in &runs {
        let mut labels = Vec::new();
        let mut rows = Vec::new();
        for j in 0..p.fates46.len() {
            if let Some(f) = p.fates46[j] {
                labels.push(f);
                rows.push(j);
            }
        }
        oracle.push((p.z46.select_rows(&rows), labels));
    }
    // run the DE route with eval labels replaced by the real ones
    let mut fixed = Vec::new();
    for (p, (z, labels)) in runs.iter().zip(&oracle) {
        let mut q = p.clone();
        q.eval_labels = labels.clone();
        q.preprocessor = runs[0].preprocessor.clone();
        fixed.push((q, z.clone()));
    }
    let refs: Vec<_> = fixed.iter().map(|(q, z)| (q, z)).collect();
    let report = de_over_runs(&ds, &refs, 1e-6, false).unwrap();
    assert!(!report.truth.is_empty());
    assert_eq!(report.precision, Some(1.0));
    assert_eq!(report.recall, Some(1.0));
    assert!(labels_cover_both(&oracle[0].1));
}

fn labels_cover_both(l: &[Fate]) -> bool {
    l.contains(&Fate::Monocyte) && l.contains(&Fate::Neutrophil)
}

#[test]
fn pair_counts_scale_below_the_reference_pool() {
    assert_eq!(default_pair_counts(2000), vec![300, 600, 900]);
    assert_eq!(default_pair_counts(1527), vec![300, 600, 900]);
    assert_eq!(default_pair_counts(320), vec![63, 126, 189]);
    assert_eq!(default_pair_counts(0), vec![0, 0, 0]);
}
