use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::math::{batchnorm, MathError, RunningStats, Tape, Tensor, Var};

/// Epsilon inside the discriminator's batch normalization.
pub const BN_EPS: f64 = 1e-5;

/// Affine layer `x·w + b` with `w: in×out`, `b: 1×out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    /// Uniform `±1/√fan_in` initialization for weights and bias.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = Tensor::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..bound));
        let b = Tensor::from_fn(1, fan_out, |_, _| rng.random_range(-bound..bound));
        Self { w, b }
    }

    pub fn fan_in(&self) -> usize {
        self.w.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.w.cols()
    }
}

fn affine(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var, MathError> {
    let xw = tape.matmul(x, w)?;
    tape.add(xw, b)
}

fn bind_tensors<'a>(
    tape: &mut Tape,
    tensors: impl IntoIterator<Item = &'a Tensor>,
    trainable: bool,
) -> Vec<Var> {
    tensors.into_iter().map(|t| tape.leaf(t.clone(), trainable)).collect()
}

/// Four affine layers with ReLU between them, mapping `k (+ cond) → k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportNet {
    pub layers: Vec<Linear>,
    /// width of the class channel appended to the input, 0 if unconditional
    pub cond_dim: usize,
}

impl TransportNet {
    pub fn new(k: usize, hidden: usize, cond_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let dims = [k + cond_dim, hidden, hidden, hidden, k];
        let layers = dims.windows(2).map(|d| Linear::init(d[0], d[1], rng)).collect();
        Self { layers, cond_dim }
    }

    pub fn from_layers(layers: Vec<Linear>, cond_dim: usize) -> Result<Self, MathError> {
        check_chain(&layers)?;
        let k = layers.last().map_or(0, Linear::fan_out);
        if layers[0].fan_in() != k + cond_dim {
            return Err(MathError::Shape(format!(
                "transport input width {} is not {k} + {cond_dim}",
                layers[0].fan_in()
            )));
        }
        Ok(Self { layers, cond_dim })
    }

    /// Output (= PCA) dimension.
    pub fn dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::fan_out)
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].fan_out()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.b]).collect()
    }

    /// Places the parameters on `tape`, in [`params`](Self::params) order.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        bind_tensors(tape, self.params(), trainable)
    }

    /// `T(x)` for a batch whose columns already include any class channel.
    pub fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var, MathError> {
        let n = self.layers.len();
        let mut h = x;
        for i in 0..n {
            h = affine(tape, h, params[2 * i], params[2 * i + 1])?;
            if i + 1 < n {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Inference on plain tensors. `cond` must be given exactly when the net is conditional.
    pub fn apply(&self, x: &Tensor, cond: Option<&Tensor>) -> Result<Tensor, MathError> {
        let input = match (cond, self.cond_dim) {
            (None, 0) => x.clone(),
            (Some(c), d) if d > 0 && c.cols() == d => x.hstack(c)?,
            _ => {
                return Err(MathError::Shape(format!(
                    "transport expects a class channel of width {}",
                    self.cond_dim
                )))
            }
        };
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, false);
        let x = tape.constant(input);
        let out = self.forward(&mut tape, &params, x)?;
        Ok(tape.value(out).clone())
    }
}

fn check_chain(layers: &[Linear]) -> Result<(), MathError> {
    if layers.is_empty() {
        return Err(MathError::Shape("network without layers".into()));
    }
    for (i, pair) in layers.windows(2).enumerate() {
        if pair[0].fan_out() != pair[1].fan_in() {
            return Err(MathError::Shape(format!(
                "layer {i} outputs {} but layer {} takes {}",
                pair[0].fan_out(),
                i + 1,
                pair[1].fan_in()
            )));
        }
    }
    for l in layers {
        if l.b.shape() != [1, l.fan_out()] {
            return Err(MathError::Shape(format!("bias shape {:?} for width {}", l.b.shape(), l.fan_out())));
        }
    }
    Ok(())
}

/// Whether batch normalization uses batch or running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Batch statistics from a training-mode forward pass, one per normalized layer.
pub type BatchStats = Vec<(Tensor, Tensor)>;

/// Four affine layers; batchnorm and ReLU between them; sigmoid output.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorNet {
    pub layers: Vec<Linear>,
    pub gamma: Vec<Tensor>,
    pub beta: Vec<Tensor>,
    pub running: Vec<RunningStats>,
}

impl DiscriminatorNet {
    pub fn new(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let dims = [input, hidden, hidden, hidden, 1];
        let layers: Vec<Linear> = dims.windows(2).map(|d| Linear::init(d[0], d[1], rng)).collect();
        let n_bn = layers.len() - 1;
        Self {
            layers,
            gamma: vec![Tensor::ones(1, hidden); n_bn],
            beta: vec![Tensor::zeros(1, hidden); n_bn],
            running: vec![RunningStats::new(hidden); n_bn],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect();
        out.extend(self.gamma.iter().zip(&self.beta).flat_map(|(g, b)| [g, b]));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.b]).collect();
        out.extend(self.gamma.iter_mut().zip(self.beta.iter_mut()).flat_map(|(g, b)| [g, b]));
        out
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        bind_tensors(tape, self.params(), trainable)
    }

    /// Probabilities `b×1` for the batch `x`. Running statistics are not
    /// touched; fold the returned batch statistics in with
    /// [`update_running`](Self::update_running).
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &[Var],
        x: Var,
        mode: BnMode,
    ) -> Result<(Var, BatchStats), MathError> {
        let n = self.layers.len();
        let bn_base = 2 * n;
        let mut stats = Vec::new();
        let mut h = x;
        for i in 0..n {
            h = affine(tape, h, params[2 * i], params[2 * i + 1])?;
            if i + 1 < n {
                let (gamma, beta) = (params[bn_base + 2 * i], params[bn_base + 2 * i + 1]);
                h = match mode {
                    BnMode::Train => {
                        let bn = batchnorm(tape, h, gamma, beta, BN_EPS)?;
                        stats.push((bn.batch_mean, bn.batch_var));
                        bn.out
                    }
                    BnMode::Eval => self.running[i].apply(tape, h, gamma, beta, BN_EPS)?,
                };
                h = tape.relu(h)?;
            }
        }
        Ok((tape.sigmoid(h)?, stats))
    }

    pub fn update_running(&mut self, stats: &BatchStats) {
        for (r, (m, v)) in self.running.iter_mut().zip(stats) {
            r.update(m, v);
        }
    }

    /// Inference-mode probabilities.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor, MathError> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, false);
        let x = tape.constant(x.clone());
        let (p, _) = self.forward(&mut tape, &params, x, BnMode::Eval)?;
        Ok(tape.value(p).clone())
    }

    pub fn from_parts(
        layers: Vec<Linear>,
        gamma: Vec<Tensor>,
        beta: Vec<Tensor>,
        running: Vec<RunningStats>,
    ) -> Result<Self, MathError> {
        check_chain(&layers)?;
        let n_bn = layers.len() - 1;
        if layers.last().map(Linear::fan_out) != Some(1) {
            return Err(MathError::Shape("discriminator must end in one unit".into()));
        }
        if gamma.len() != n_bn || beta.len() != n_bn || running.len() != n_bn {
            return Err(MathError::Shape("batchnorm parameter count mismatch".into()));
        }
        for i in 0..n_bn {
            let h = [1, layers[i].fan_out()];
            if gamma[i].shape() != h
                || beta[i].shape() != h
                || running[i].mean.shape() != h
                || running[i].var.shape() != h
            {
                return Err(MathError::Shape(format!("batchnorm {i} shape mismatch")));
            }
        }
        Ok(Self { layers, gamma, beta, running })
    }
}
