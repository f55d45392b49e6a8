use super::{MathError, Tape, Tensor, Var};

/// Momentum for the running mean/variance updates.
pub const BN_MOMENTUM: f64 = 0.1;

pub struct BatchNormOutput {
    pub out: Var,
    pub batch_mean: Tensor,
    /// unbiased batch variance, the quantity folded into running statistics
    pub batch_var: Tensor,
}

/// Training-mode batch normalization of `x` (`b×h`) with affine `gamma`, `beta` (`1×h`).
///
/// Composed from tape primitives so it supports double backprop.
pub fn batchnorm(
    tape: &mut Tape,
    x: Var,
    gamma: Var,
    beta: Var,
    eps: f64,
) -> Result<BatchNormOutput, MathError> {
    let [b, h] = tape.value(x).shape();
    if b < 2 {
        return Err(MathError::BatchSize(b));
    }
    let inv_b = 1.0 / b as f64;
    let sum = tape.sum_rows(x)?;
    let mean = tape.scale(sum, inv_b)?;
    let centered = tape.sub(x, mean)?;
    let sq = tape.square(centered)?;
    let sq_sum = tape.sum_rows(sq)?;
    let var = tape.scale(sq_sum, inv_b)?;
    let var_eps = tape.add_const(var, eps)?;
    let std = tape.sqrt(var_eps)?;
    let inv_std = tape.recip(std)?;
    let normed = tape.mul(centered, inv_std)?;
    let scaled = tape.mul(normed, gamma)?;
    let out = tape.add(scaled, beta)?;

    let batch_mean = tape.value(mean).clone();
    let unbiased = b as f64 / (b - 1) as f64;
    let batch_var = tape.value(var).map(|v| v * unbiased);
    debug_assert_eq!(batch_var.cols(), h);
    Ok(BatchNormOutput { out, batch_mean, batch_var })
}

/// Running statistics used in inference mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Tensor,
    pub var: Tensor,
}

impl RunningStats {
    pub fn new(h: usize) -> Self {
        Self { mean: Tensor::zeros(1, h), var: Tensor::ones(1, h) }
    }

    pub fn update(&mut self, batch_mean: &Tensor, batch_var: &Tensor) {
        let m = BN_MOMENTUM;
        for (r, b) in self.mean.data_mut().iter_mut().zip(batch_mean.data()) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, b) in self.var.data_mut().iter_mut().zip(batch_var.data()) {
            *r = (1.0 - m) * *r + m * b;
        }
    }

    /// Inference-mode normalization with the running statistics.
    pub fn apply(
        &self,
        tape: &mut Tape,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<Var, MathError> {
        let inv_std = self.var.map(|v| 1.0 / (v + eps).sqrt());
        let mean = tape.constant(self.mean.clone());
        let inv_std = tape.constant(inv_std);
        let centered = tape.sub(x, mean)?;
        let normed = tape.mul(centered, inv_std)?;
        let scaled = tape.mul(normed, gamma)?;
        tape.add(scaled, beta)
    }
}
