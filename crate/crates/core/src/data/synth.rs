//! Synthetic branching differentiation.
//!
//! Gene space holds two fate centroids, Monocyte at `base + δ/2` and
//! Neutrophil at `base − δ/2`, where `δ` is nonzero only on the planted DE
//! genes and has norm `fate_distance`. Each clone gets a progenitor centre
//! `base + commitment·a·δ/2 + Σ z_l·u_l` with `a ~ N(progenitor_shift, 1)`,
//! `z_l ~ N(0, progenitor_spread²)` and unit directions `u_l ⟂ δ`. The clone
//! takes the fate of its nearest centroid with probability `fate_bias`.
//! Day-2 cells scatter around their clone's centre, day-4/6 cells around
//! their clone's fate centroid, both with isotropic noise truncated at zero.
//!
//! Day-2 cells are further shifted by `progenitor_drift·δ/2` after the fate
//! is drawn, so position alone misleads a classifier fitted on day-4/6 cells.
//! Day-4/6 cells beyond the first two per clone go to clones with weight 1
//! for Monocyte clones and `neutrophil_expansion` for Neutrophil clones.
//! Unequal expansion, or `fate_bias < 1` with a positive `progenitor_shift`,
//! makes the day-4/6 fate proportions differ from the day-2 proportions of
//! nearest fates, so a mass-preserving transport places the fate boundary
//! away from the bisector that clone pairs reveal.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, weighted::WeightedIndex};
use serde::{Deserialize, Serialize};

use super::{CloneMatrix, DataError, ExpressionMatrix, Fate, FateLabels, Timepoint};
use crate::math::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_genes: usize,
    /// latent progenitor dimensions: the fate axis plus `n − 1` orthogonal ones
    pub n_pca_informative: usize,
    pub n_day2: usize,
    pub n_day46: usize,
    pub n_clones: usize,
    pub de_gene_fraction: f64,
    pub noise_scale: f64,
    pub fate_bias: f64,
    /// distance between the two fate centroids
    pub fate_distance: f64,
    /// mean of the progenitor fate-axis coordinate, in units of its spread
    pub progenitor_shift: f64,
    /// fraction of the half-distance to a centroid that progenitors cover per unit of `a`
    pub commitment: f64,
    pub progenitor_spread: f64,
    /// shift of every progenitor along the fate axis, applied after fates are drawn
    pub progenitor_drift: f64,
    /// day-4/6 sampling weight of Neutrophil clones relative to Monocyte clones
    pub neutrophil_expansion: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_genes: 200,
            n_pca_informative: 4,
            n_day2: 400,
            n_day46: 2000,
            n_clones: 100,
            de_gene_fraction: 0.1,
            noise_scale: 0.2,
            fate_bias: 1.0,
            fate_distance: 3.0,
            progenitor_shift: 1.0,
            commitment: 1.0,
            progenitor_spread: 0.5,
            progenitor_drift: 0.5,
            neutrophil_expansion: 2.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn n_de_genes(&self) -> usize {
        (self.n_genes as f64 * self.de_gene_fraction).round() as usize
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Config(m));
        if self.n_clones == 0 {
            return bad("n_clones must be positive".into());
        }
        if self.n_day2 < 2 * self.n_clones || self.n_day46 < 2 * self.n_clones {
            return bad(format!(
                "need at least 2 cells per clone at each timepoint: n_day2={}, n_day46={}, n_clones={}",
                self.n_day2, self.n_day46, self.n_clones
            ));
        }
        if !(self.de_gene_fraction > 0.0 && self.de_gene_fraction < 1.0) {
            return bad(format!("de_gene_fraction {} outside (0, 1)", self.de_gene_fraction));
        }
        if self.n_de_genes() == 0 {
            return bad("de_gene_fraction selects no genes".into());
        }
        if self.n_pca_informative == 0 || self.n_pca_informative > self.n_genes {
            return bad(format!(
                "n_pca_informative {} must be in 1..={}",
                self.n_pca_informative, self.n_genes
            ));
        }
        if !(0.0..=1.0).contains(&self.fate_bias) {
            return bad(format!("fate_bias {} outside [0, 1]", self.fate_bias));
        }
        for (name, v) in [
            ("noise_scale", self.noise_scale),
            ("fate_distance", self.fate_distance),
            ("commitment", self.commitment),
            ("progenitor_spread", self.progenitor_spread),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        if !(self.neutrophil_expansion > 0.0 && self.neutrophil_expansion.is_finite()) {
            return bad(format!("neutrophil_expansion must be finite and positive, got {}", self.neutrophil_expansion));
        }
        if !self.progenitor_shift.is_finite() || !self.progenitor_drift.is_finite() {
            return bad("progenitor_shift and progenitor_drift must be finite".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub day2: ExpressionMatrix,
    pub day46: ExpressionMatrix,
    pub clones: CloneMatrix,
    /// fate of every day-4/6 cell
    pub day46_labels: FateLabels,
    /// planted fate of every day-2 cell's clone
    pub day2_planted: FateLabels,
    pub planted_de_genes: BTreeSet<String>,
    pub mono_centroid: Vec<f64>,
    pub neu_centroid: Vec<f64>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Clone index for each of `n` cells: two per clone, the rest drawn with
/// the given clone weights, shuffled.
fn clone_assignment(n: usize, weights: &[f64], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut out: Vec<usize> = (0..weights.len()).flat_map(|k| [k, k]).collect();
    let pick = WeightedIndex::new(weights).expect("positive weights");
    while out.len() < n {
        out.push(pick.sample(rng));
    }
    out.shuffle(rng);
    out
}

pub fn synth_branching(cfg: &SynthConfig) -> Result<SynthDataset, DataError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.n_genes;

    let base: Vec<f64> = (0..d).map(|_| rng.random_range(1.0..3.0)).collect();

    let mut genes: Vec<usize> = (0..d).collect();
    genes.shuffle(&mut rng);
    let mut de: Vec<usize> = genes[..cfg.n_de_genes()].to_vec();
    de.sort_unstable();

    let mut delta = vec![0.0; d];
    for &g in &de {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        delta[g] = sign * rng.random_range(0.5..1.0);
    }
    let norm = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
    delta.iter_mut().for_each(|v| *v *= cfg.fate_distance / norm);
    let half = |s: f64| -> Vec<f64> { base.iter().zip(&delta).map(|(b, dl)| b + s * dl / 2.0).collect() };
    let mono = half(1.0);
    let neu = half(-1.0);

    // unit directions orthogonal to δ and to each other
    let delta_unit: Vec<f64> = if cfg.fate_distance > 0.0 {
        delta.iter().map(|v| v / cfg.fate_distance).collect()
    } else {
        vec![0.0; d]
    };
    let mut basis = vec![delta_unit];
    let mut dirs = Vec::new();
    while dirs.len() + 1 < cfg.n_pca_informative {
        let mut v: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= n);
        basis.push(v.clone());
        dirs.push(v);
    }

    let mut centers = Vec::with_capacity(cfg.n_clones);
    let mut clone_fate = Vec::with_capacity(cfg.n_clones);
    for _ in 0..cfg.n_clones {
        let a = cfg.progenitor_shift + normal(&mut rng);
        let mut c: Vec<f64> = base
            .iter()
            .zip(&delta)
            .map(|(b, dl)| b + cfg.commitment * a * dl / 2.0)
            .collect();
        for u in &dirs {
            let z = cfg.progenitor_spread * normal(&mut rng);
            c.iter_mut().zip(u).for_each(|(x, y)| *x += z * y);
        }
        let nearest = if dist2(&c, &mono) <= dist2(&c, &neu) { Fate::Monocyte } else { Fate::Neutrophil };
        let fate = if rng.random::<f64>() < cfg.fate_bias { nearest } else { nearest.other() };
        c.iter_mut().zip(&delta).for_each(|(x, dl)| *x += cfg.progenitor_drift * dl / 2.0);
        centers.push(c);
        clone_fate.push(fate);
    }

    let clone_ids: Vec<String> = (0..cfg.n_clones).map(|k| format!("clone{k:04}")).collect();
    let gene_ids: Vec<String> = (0..d).map(|g| format!("g{g:04}")).collect();
    let mut memberships = Vec::with_capacity(cfg.n_day2 + cfg.n_day46);

    let assign2 = clone_assignment(cfg.n_day2, &vec![1.0; cfg.n_clones], &mut rng);
    let mut day2_vals = Vec::with_capacity(cfg.n_day2 * d);
    let mut day2_ids = Vec::with_capacity(cfg.n_day2);
    let mut day2_planted = FateLabels::new();
    for (i, &k) in assign2.iter().enumerate() {
        let id = format!("d2_{i:05}");
        for &m in &centers[k] {
            day2_vals.push((m + cfg.noise_scale * normal(&mut rng)).max(0.0));
        }
        memberships.push((id.clone(), clone_ids[k].clone()));
        day2_planted.insert(id.clone(), clone_fate[k]);
        day2_ids.push(id);
    }

    let expansion: Vec<f64> = clone_fate
        .iter()
        .map(|f| if *f == Fate::Neutrophil { cfg.neutrophil_expansion } else { 1.0 })
        .collect();
    let assign46 = clone_assignment(cfg.n_day46, &expansion, &mut rng);
    let mut day46_vals = Vec::with_capacity(cfg.n_day46 * d);
    let mut day46_ids = Vec::with_capacity(cfg.n_day46);
    let mut day46_labels = FateLabels::new();
    for (i, &k) in assign46.iter().enumerate() {
        let id = format!("d46_{i:05}");
        let centroid = match clone_fate[k] {
            Fate::Monocyte => &mono,
            Fate::Neutrophil => &neu,
        };
        for &m in centroid {
            day46_vals.push((m + cfg.noise_scale * normal(&mut rng)).max(0.0));
        }
        memberships.push((id.clone(), clone_ids[k].clone()));
        day46_labels.insert(id.clone(), clone_fate[k]);
        day46_ids.push(id);
    }

    let day2 = ExpressionMatrix::new(
        Tensor::new(cfg.n_day2, d, day2_vals).expect("sized"),
        day2_ids,
        gene_ids.clone(),
        Timepoint::Day2,
    )?;
    let day46 = ExpressionMatrix::new(
        Tensor::new(cfg.n_day46, d, day46_vals).expect("sized"),
        day46_ids,
        gene_ids.clone(),
        Timepoint::Day4_6,
    )?;
    // keep clone IDs in index order even if a clone's first member comes late
    let mut clones = CloneMatrix::from_memberships(memberships)?;
    let order: Vec<usize> = {
        let mut o: Vec<usize> = (0..clones.n_clones()).collect();
        o.sort_by(|&a, &b| clones.clone_ids[a].cmp(&clones.clone_ids[b]));
        o
    };
    let mut remap = vec![0; order.len()];
    for (new, &old) in order.iter().enumerate() {
        remap[old] = new;
    }
    clones.clone_ids = order.iter().map(|&o| clones.clone_ids[o].clone()).collect();
    clones.entries.iter_mut().for_each(|e| e.1 = remap[e.1]);

    Ok(SynthDataset {
        day2,
        day46,
        clones,
        day46_labels,
        day2_planted,
        planted_de_genes: de.iter().map(|&g| gene_ids[g].clone()).collect(),
        mono_centroid: mono,
        neu_centroid: neu,
    })
}
