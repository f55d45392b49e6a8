//! Versioned binary checkpoints.
//!
//! Layout: magic `LOTC`, a `u32` version, a `u64` header length, a JSON
//! header, then every tensor as little-endian `f64` in header order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{DiscriminatorNet, Linear, TransportNet};
use super::train::{EpochRecord, Method, TrainConfig, Trainer};
use super::NetError;
use crate::math::{Adam, RunningStats, Tensor};

const MAGIC: &[u8; 4] = b"LOTC";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    method: Method,
    cfg: TrainConfig,
    converged: bool,
    history: Vec<EpochRecord>,
    /// caller-supplied context such as the PCA digest
    meta: BTreeMap<String, String>,
    transport_layers: usize,
    transport_cond_dim: usize,
    disc_layers: Option<usize>,
    adam_t_step: u64,
    adam_d_step: Option<u64>,
    shapes: Vec<[usize; 2]>,
}

/// A trainer snapshot plus free-form metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub trainer: Trainer,
    pub meta: BTreeMap<String, String>,
}

fn disc_tensors(d: &DiscriminatorNet) -> Vec<&Tensor> {
    let mut out = d.params();
    out.extend(d.running.iter().flat_map(|r| [&r.mean, &r.var]));
    out
}

fn adam_tensors(a: &Adam) -> impl Iterator<Item = &Tensor> {
    a.m.iter().chain(&a.v)
}

struct Reader<'a> {
    shapes: std::slice::Iter<'a, [usize; 2]>,
    data: &'a [u8],
}

impl Reader<'_> {
    fn next(&mut self) -> Result<Tensor, NetError> {
        let [r, c] = *self.shapes.next().ok_or_else(|| NetError::Format("checkpoint tensor list too short".into()))?;
        let n = r * c * 8;
        if self.data.len() < n {
            return Err(NetError::Format("checkpoint payload truncated".into()));
        }
        let (head, rest) = self.data.split_at(n);
        self.data = rest;
        let vals = head.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        Ok(Tensor::new(r, c, vals)?)
    }

    fn take(&mut self, n: usize) -> Result<Vec<Tensor>, NetError> {
        (0..n).map(|_| self.next()).collect()
    }

    fn linears(&mut self, n: usize) -> Result<Vec<Linear>, NetError> {
        (0..n).map(|_| Ok(Linear { w: self.next()?, b: self.next()? })).collect()
    }

    fn adam(&mut self, like: &[&Tensor], step: u64, cfg: &TrainConfig) -> Result<Adam, NetError> {
        let m = self.take(like.len())?;
        let v = self.take(like.len())?;
        for (t, p) in m.iter().chain(&v).zip(like.iter().chain(like)) {
            if t.shape() != p.shape() {
                return Err(NetError::Format("optimizer state shape mismatch".into()));
            }
        }
        let config = crate::math::AdamConfig { lr: cfg.lr, ..Default::default() };
        Ok(Adam { config, step, m, v })
    }
}

impl Checkpoint {
    pub fn new(trainer: Trainer) -> Self {
        Self { trainer, meta: BTreeMap::new() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let t = &self.trainer;
        let mut tensors: Vec<&Tensor> = t.transport.params();
        if let Some(d) = &t.disc {
            tensors.extend(disc_tensors(d));
        }
        tensors.extend(adam_tensors(&t.opt_t));
        if let Some(o) = &t.opt_d {
            tensors.extend(adam_tensors(o));
        }
        let header = Header {
            method: t.method,
            cfg: t.cfg.clone(),
            converged: t.converged,
            history: t.history.clone(),
            meta: self.meta.clone(),
            transport_layers: t.transport.layers.len(),
            transport_cond_dim: t.transport.cond_dim,
            disc_layers: t.disc.as_ref().map(|d| d.layers.len()),
            adam_t_step: t.opt_t.step,
            adam_d_step: t.opt_d.as_ref().map(|o| o.step),
            shapes: tensors.iter().map(|x| x.shape()).collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for x in tensors {
            for v in x.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NetError> {
        let bad = |m: &str| NetError::Format(m.into());
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(NetError::Format(format!("unsupported checkpoint version {version}")));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let json = bytes.get(16..16 + len).ok_or_else(|| bad("header truncated"))?;
        let h: Header = serde_json::from_slice(json).map_err(|e| NetError::Format(format!("header: {e}")))?;
        let mut r = Reader { shapes: h.shapes.iter(), data: &bytes[16 + len..] };

        let transport = TransportNet::from_layers(r.linears(h.transport_layers)?, h.transport_cond_dim)?;
        let disc = match h.disc_layers {
            Some(n) => {
                let layers = r.linears(n)?;
                let mut gamma = Vec::new();
                let mut beta = Vec::new();
                for _ in 0..n - 1 {
                    gamma.push(r.next()?);
                    beta.push(r.next()?);
                }
                let running = (0..n - 1)
                    .map(|_| Ok(RunningStats { mean: r.next()?, var: r.next()? }))
                    .collect::<Result<Vec<_>, NetError>>()?;
                Some(DiscriminatorNet::from_parts(layers, gamma, beta, running)?)
            }
            None => None,
        };
        let opt_t = r.adam(&transport.params(), h.adam_t_step, &h.cfg)?;
        let opt_d = match (&disc, h.adam_d_step) {
            (Some(d), Some(step)) => Some(r.adam(&d.params(), step, &h.cfg)?),
            (None, None) => None,
            _ => return Err(bad("discriminator and its optimizer disagree")),
        };
        if r.shapes.next().is_some() || !r.data.is_empty() {
            return Err(bad("trailing checkpoint data"));
        }
        let trainer = Trainer {
            method: h.method,
            cfg: h.cfg,
            transport,
            disc,
            opt_t,
            opt_d,
            history: h.history,
            converged: h.converged,
        };
        Ok(Self { trainer, meta: h.meta })
    }

    pub fn save(&self, path: &Path) -> Result<(), NetError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| NetError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, NetError> {
        let bytes = std::fs::read(path).map_err(|e| NetError::Io(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}
