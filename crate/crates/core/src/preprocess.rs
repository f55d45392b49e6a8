//! Expression preprocessing: total-count row normalization, per-gene L2
//! scaling and PCA with an exact inverse.
//!
//! The order is fixed: rows are L1-normalized, genes are divided by their
//! L2 norm over the training cells, then PCA is fit on the training cells.
//! Test cells reuse the training scale vector and PCA model.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::ExpressionMatrix;
use crate::math::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("cells with zero total counts: {}", .0.join(", "))]
    DegenerateCells(Vec<String>),
    #[error("negative expression value {value} at cell {cell}, gene {gene}")]
    Negative { cell: String, gene: String, value: f64 },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("pca file {path}: {msg}")]
    Format { path: String, msg: String },
    #[error("io error: {0}")]
    Io(String),
}

/// Divides every row by its sum.
pub fn l1_normalize_rows(x: &ExpressionMatrix) -> Result<ExpressionMatrix, PreprocessError> {
    check_nonnegative(x)?;
    let mut values = x.values.clone();
    let mut zero = Vec::new();
    for i in 0..values.rows() {
        let row = values.row_slice_mut(i);
        let s: f64 = row.iter().sum();
        if s <= 0.0 {
            zero.push(x.cell_ids[i].clone());
            continue;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    if !zero.is_empty() {
        return Err(PreprocessError::DegenerateCells(zero));
    }
    Ok(ExpressionMatrix { values, ..x.clone() })
}

fn check_nonnegative(x: &ExpressionMatrix) -> Result<(), PreprocessError> {
    for i in 0..x.n_cells() {
        for (j, &v) in x.values.row_slice(i).iter().enumerate() {
            if v < 0.0 {
                return Err(PreprocessError::Negative {
                    cell: x.cell_ids[i].clone(),
                    gene: x.gene_ids[j].clone(),
                    value: v,
                });
            }
        }
    }
    Ok(())
}

/// Per-gene divisors from [`scale_genes_unit`].
#[derive(Debug, Clone, PartialEq)]
pub struct GeneScale {
    /// column L2 norms; zero for all-zero genes
    pub norms: Vec<f64>,
    /// genes that were all zero and left unscaled
    pub zero_genes: Vec<String>,
}

impl GeneScale {
    /// Applies the stored divisors to another matrix over the same genes.
    pub fn apply(&self, x: &ExpressionMatrix) -> Result<ExpressionMatrix, PreprocessError> {
        if x.n_genes() != self.norms.len() {
            return Err(PreprocessError::Contract(format!(
                "scale vector has {} genes, matrix has {}",
                self.norms.len(),
                x.n_genes()
            )));
        }
        let mut values = x.values.clone();
        for i in 0..values.rows() {
            for (v, &n) in values.row_slice_mut(i).iter_mut().zip(&self.norms) {
                if n > 0.0 {
                    *v /= n;
                }
            }
        }
        Ok(ExpressionMatrix { values, ..x.clone() })
    }
}

/// Divides each gene column by its L2 norm. Nonnegative input lands in `[0, 1]`.
pub fn scale_genes_unit(
    x: &ExpressionMatrix,
) -> Result<(ExpressionMatrix, GeneScale), PreprocessError> {
    check_nonnegative(x)?;
    let d = x.n_genes();
    let mut sq = vec![0.0; d];
    for i in 0..x.n_cells() {
        for (s, v) in sq.iter_mut().zip(x.values.row_slice(i)) {
            *s += v * v;
        }
    }
    let norms: Vec<f64> = sq.iter().map(|s| s.sqrt()).collect();
    let zero_genes = norms
        .iter()
        .enumerate()
        .filter(|(_, &n)| n == 0.0)
        .map(|(j, _)| x.gene_ids[j].clone())
        .collect();
    let scale = GeneScale { norms, zero_genes };
    let scaled = scale.apply(x)?;
    Ok((scaled, scale))
}

const PCA_MAGIC: &[u8; 4] = b"LPCA";
const PCA_VERSION: u8 = 1;

/// Mean vector plus an orthonormal `k×d` basis of principal axes.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    pub components: Tensor,
    /// variance along each component, non-increasing
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.rows()
    }

    pub fn d(&self) -> usize {
        self.components.cols()
    }

    /// `(x − mean)·componentsᵀ`
    pub fn transform(&self, x: &Tensor) -> Result<Tensor, PreprocessError> {
        if x.cols() != self.d() {
            return Err(PreprocessError::Contract(format!(
                "pca expects {} features, got {}",
                self.d(),
                x.cols()
            )));
        }
        let mut centered = x.clone();
        for i in 0..centered.rows() {
            centered.row_slice_mut(i).iter_mut().zip(&self.mean).for_each(|(v, m)| *v -= m);
        }
        Ok(Tensor::matmul_t(&centered, &self.components, false, true).expect("dims checked"))
    }

    /// `z·components + mean`
    pub fn inverse(&self, z: &Tensor) -> Result<Tensor, PreprocessError> {
        if z.cols() != self.k() {
            return Err(PreprocessError::Contract(format!(
                "pca inverse expects {} coordinates, got {}",
                self.k(),
                z.cols()
            )));
        }
        let mut out = z.matmul(&self.components).expect("dims checked");
        for i in 0..out.rows() {
            out.row_slice_mut(i).iter_mut().zip(&self.mean).for_each(|(v, m)| *v += m);
        }
        Ok(out)
    }

    /// `Σ‖x_c − x_c·VᵀV‖² / (n − 1)` over the rows of `x`.
    pub fn reconstruction_error(&self, x: &Tensor) -> Result<f64, PreprocessError> {
        let back = self.inverse(&self.transform(x)?)?;
        let sse: f64 = x.data().iter().zip(back.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(sse / (x.rows().max(2) - 1) as f64)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(22 + 8 * (self.d() * (self.k() + 1) + self.k()));
        out.extend_from_slice(PCA_MAGIC);
        out.push(PCA_VERSION);
        out.extend_from_slice(&(self.k() as u64).to_le_bytes());
        out.extend_from_slice(&(self.d() as u64).to_le_bytes());
        for v in self.mean.iter().chain(self.components.data()).chain(&self.explained_variance) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &str) -> Result<Self, PreprocessError> {
        let err = |msg: &str| PreprocessError::Format { path: path.into(), msg: msg.into() };
        if bytes.len() < 21 || &bytes[..4] != PCA_MAGIC {
            return Err(err("bad magic"));
        }
        if bytes[4] != PCA_VERSION {
            return Err(err("unsupported version"));
        }
        let k = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
        let d = u64::from_le_bytes(bytes[13..21].try_into().unwrap()) as usize;
        let n_vals = d + k * d + k;
        if bytes.len() != 21 + 8 * n_vals {
            return Err(err("length does not match header"));
        }
        let vals: Vec<f64> = bytes[21..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(PcaModel {
            mean: vals[..d].to_vec(),
            components: Tensor::new(k, d, vals[d..d + k * d].to_vec()).expect("sized"),
            explained_variance: vals[d + k * d..].to_vec(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), PreprocessError> {
        fs::write(path, self.to_bytes()).map_err(|e| PreprocessError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PreprocessError> {
        let bytes = fs::read(path).map_err(|e| PreprocessError::Io(e.to_string()))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }

    /// Hex SHA-256 of the serialized model.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

/// Fits a `k`-component PCA on the rows of `x`.
///
/// Eigendecomposes the `d×d` covariance when `d ≤ n`, otherwise the `n×n`
/// Gram matrix. Each component is flipped so its largest-magnitude
/// coordinate is positive.
pub fn pca_fit(x: &Tensor, k: usize) -> Result<PcaModel, PreprocessError> {
    let (n, d) = (x.rows(), x.cols());
    if n < 2 {
        return Err(PreprocessError::Contract(format!("pca needs at least 2 rows, got {n}")));
    }
    if k == 0 || k > n.min(d) {
        return Err(PreprocessError::Contract(format!(
            "k = {k} must be in 1..={} for {n}x{d} data",
            n.min(d)
        )));
    }
    let mean = x.column_means().into_data();
    let centered = DMatrix::from_fn(n, d, |i, j| x.get(i, j) - mean[j]);
    let denom = (n - 1) as f64;

    let mut pairs: Vec<(f64, Vec<f64>)> = if d <= n {
        let cov = (centered.transpose() * &centered) / denom;
        let eig = SymmetricEigen::new(cov);
        (0..d)
            .map(|c| (eig.eigenvalues[c], eig.eigenvectors.column(c).iter().copied().collect()))
            .collect()
    } else {
        let gram = (&centered * centered.transpose()) / denom;
        let eig = SymmetricEigen::new(gram);
        (0..n)
            .map(|c| {
                let lambda = eig.eigenvalues[c];
                let w = eig.eigenvectors.column(c);
                let mut v: Vec<f64> = (0..d).map(|j| centered.column(j).dot(&w)).collect();
                let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                if norm > 0.0 {
                    v.iter_mut().for_each(|a| *a /= norm);
                }
                (lambda, v)
            })
            .collect()
    };
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs.truncate(k);

    let mut components = Vec::with_capacity(k * d);
    let mut explained_variance = Vec::with_capacity(k);
    for (lambda, mut v) in pairs {
        let lead = v.iter().copied().fold(0.0f64, |m, a| if a.abs() > m.abs() { a } else { m });
        if lead < 0.0 {
            v.iter_mut().for_each(|a| *a = -*a);
        }
        components.extend(v);
        explained_variance.push(lambda.max(0.0));
    }
    Ok(PcaModel {
        mean,
        components: Tensor::new(k, d, components).expect("sized"),
        explained_variance,
    })
}

const PRE_MAGIC: &[u8; 4] = b"LPRE";
const PRE_VERSION: u8 = 1;

/// Scale vector and PCA fit on training cells, applied to any split.
///
/// Scores are multiplied by `score_scale`, chosen so that the training
/// cells have unit variance per component on average.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessor {
    pub scale: GeneScale,
    pub pca: PcaModel,
    pub score_scale: f64,
}

/// `1/√(mean variance)` of the fitted components, or 1 for a degenerate fit.
pub fn unit_score_scale(pca: &PcaModel) -> f64 {
    let k = pca.explained_variance.len().max(1) as f64;
    let mean = pca.explained_variance.iter().sum::<f64>() / k;
    if mean > 0.0 && mean.is_finite() {
        1.0 / mean.sqrt()
    } else {
        1.0
    }
}

impl Preprocessor {
    /// Fits on the union of the training matrices (same genes, raw counts).
    pub fn fit(train: &[&ExpressionMatrix], k: usize) -> Result<Self, PreprocessError> {
        let first = train
            .first()
            .ok_or_else(|| PreprocessError::Contract("no training matrices".into()))?;
        let mut stacked = l1_normalize_rows(first)?;
        for m in &train[1..] {
            if m.gene_ids != first.gene_ids {
                return Err(PreprocessError::Contract("training matrices disagree on genes".into()));
            }
            let norm = l1_normalize_rows(m)?;
            stacked.values = stacked.values.vstack(&norm.values).expect("same width");
            stacked.cell_ids.extend(norm.cell_ids);
        }
        let (scaled, scale) = scale_genes_unit(&stacked)?;
        let pca = pca_fit(&scaled.values, k)?;
        let score_scale = unit_score_scale(&pca);
        Ok(Self { scale, pca, score_scale })
    }

    /// Row-normalized and gene-scaled values, before projection.
    pub fn gene_space(&self, x: &ExpressionMatrix) -> Result<Tensor, PreprocessError> {
        Ok(self.scale.apply(&l1_normalize_rows(x)?)?.values)
    }

    pub fn transform(&self, x: &ExpressionMatrix) -> Result<Tensor, PreprocessError> {
        let c = self.score_scale;
        Ok(self.pca.transform(&self.gene_space(x)?)?.map(|v| v * c))
    }

    /// Maps model-space coordinates back to gene space.
    pub fn inverse(&self, z: &Tensor) -> Result<Tensor, PreprocessError> {
        let c = self.score_scale;
        self.pca.inverse(&z.map(|v| v / c))
    }

    /// `LPRE`, a version byte, a `u64` header length, a JSON header with the
    /// gene scale and score scale, then the PCA model bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::json!({
            "score_scale": self.score_scale,
            "norms": self.scale.norms,
            "zero_genes": self.scale.zero_genes,
        });
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(PRE_MAGIC);
        out.push(PRE_VERSION);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&self.pca.to_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &str) -> Result<Self, PreprocessError> {
        let err = |msg: &str| PreprocessError::Format { path: path.into(), msg: msg.into() };
        if bytes.len() < 13 || &bytes[..4] != PRE_MAGIC {
            return Err(err("bad magic"));
        }
        if bytes[4] != PRE_VERSION {
            return Err(err("unsupported version"));
        }
        let len = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
        let json = bytes.get(13..13 + len).ok_or_else(|| err("header truncated"))?;
        #[derive(serde::Deserialize)]
        struct Header {
            score_scale: f64,
            norms: Vec<f64>,
            zero_genes: Vec<String>,
        }
        let h: Header = serde_json::from_slice(json).map_err(|e| err(&format!("header: {e}")))?;
        let pca = PcaModel::from_bytes(&bytes[13 + len..], path)?;
        if pca.d() != h.norms.len() {
            return Err(err("gene scale and PCA disagree on dimension"));
        }
        Ok(Self { scale: GeneScale { norms: h.norms, zero_genes: h.zero_genes }, pca, score_scale: h.score_scale })
    }

    pub fn save(&self, path: &Path) -> Result<(), PreprocessError> {
        fs::write(path, self.to_bytes()).map_err(|e| PreprocessError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PreprocessError> {
        let bytes = fs::read(path).map_err(|e| PreprocessError::Io(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }

    /// Hex SHA-256 of the serialized preprocessor.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}
