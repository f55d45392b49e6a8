use rand::Rng;

use super::NetError;
use crate::math::{MathError, Tape, Tensor, Var};

/// Probability clamp applied before every logarithm in the GAN losses.
pub const PROB_EPS: f64 = 1e-7;

fn check_same_shape(tape: &Tape, a: Var, b: Var, what: &str) -> Result<(), NetError> {
    let (sa, sb) = (tape.value(a).shape(), tape.value(b).shape());
    if sa != sb {
        return Err(NetError::Contract(format!("{what}: shapes {sa:?} and {sb:?} differ")));
    }
    Ok(())
}

/// Mean Euclidean distance between each cell and its transported image.
pub fn loss_trans(tape: &mut Tape, x: Var, t_x: Var) -> Result<Var, NetError> {
    check_same_shape(tape, x, t_x, "transport cost")?;
    let diff = tape.sub(x, t_x)?;
    let norms = tape.row_norms(diff)?;
    Ok(tape.mean(norms)?)
}

fn mean_log_clamped(tape: &mut Tape, p: Var) -> Result<Var, MathError> {
    let c = tape.clamp(p, PROB_EPS, 1.0 - PROB_EPS)?;
    let l = tape.log(c)?;
    tape.mean(l)
}

/// `−mean log d_real − mean log(1 − d_fake)`.
pub fn disc_loss(tape: &mut Tape, d_real: Var, d_fake: Var) -> Result<Var, NetError> {
    let real = mean_log_clamped(tape, d_real)?;
    let one_minus = tape.scale(d_fake, -1.0)?;
    let one_minus = tape.add_const(one_minus, 1.0)?;
    let fake = mean_log_clamped(tape, one_minus)?;
    let s = tape.add(real, fake)?;
    Ok(tape.neg(s)?)
}

/// Non-saturating generator loss `−mean log d_fake`.
pub fn gen_loss(tape: &mut Tape, d_fake: Var) -> Result<Var, NetError> {
    let l = mean_log_clamped(tape, d_fake)?;
    Ok(tape.neg(l)?)
}

/// `(disc_loss, gen_loss)` on the same discriminator outputs.
pub fn loss_gan(tape: &mut Tape, d_real: Var, d_fake: Var) -> Result<(Var, Var), NetError> {
    Ok((disc_loss(tape, d_real, d_fake)?, gen_loss(tape, d_fake)?))
}

/// Mean squared Euclidean distance between transported cells and their partners.
pub fn loss_super(tape: &mut Tape, t_x: Var, partner: Var) -> Result<Var, NetError> {
    check_same_shape(tape, t_x, partner, "supervised loss")?;
    if tape.value(t_x).rows() == 0 {
        return Err(NetError::Contract("supervised loss on an empty pair batch".into()));
    }
    let diff = tape.sub(t_x, partner)?;
    let sq = tape.square(diff)?;
    let per_pair = tape.sum_cols(sq)?;
    Ok(tape.mean(per_pair)?)
}

/// `mean (‖∇ D(x̂)‖ − 1)²` over interpolates `x̂ = u·real + (1 − u)·fake`,
/// one `u ~ U(0, 1)` per row.
///
/// `critic` evaluates the discriminator on a batch and returns `b×1`
/// outputs. The result stays differentiable with respect to whatever
/// parameters `critic` places on the tape.
pub fn gradient_penalty<R: Rng>(
    tape: &mut Tape,
    critic: &mut dyn FnMut(&mut Tape, Var) -> Result<Var, MathError>,
    real: &Tensor,
    fake: &Tensor,
    rng: &mut R,
) -> Result<Var, NetError> {
    if real.shape() != fake.shape() {
        return Err(NetError::Contract(format!(
            "gradient penalty: real {:?} and fake {:?} batches differ",
            real.shape(),
            fake.shape()
        )));
    }
    let mut mixed = fake.clone();
    for i in 0..real.rows() {
        let u: f64 = rng.random();
        for (m, &r) in mixed.row_slice_mut(i).iter_mut().zip(real.row_slice(i)) {
            *m = u * r + (1.0 - u) * *m;
        }
    }
    let x_hat = tape.param(mixed);
    let out = critic(tape, x_hat)?;
    let total = tape.sum(out)?;
    let g = match tape.grad(total, &[x_hat], true)?[0] {
        Some(g) => g,
        None => tape.constant(Tensor::zeros(real.rows(), real.cols())),
    };
    let norms = tape.row_norms(g)?;
    let centered = tape.add_const(norms, -1.0)?;
    let sq = tape.square(centered)?;
    Ok(tape.mean(sq)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar(tape: &Tape, v: Var) -> f64 {
        tape.item(v).unwrap()
    }

    #[test]
    fn identity_transport_costs_nothing() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_rows(&[[1.0, 2.0], [3.0, -1.0]]).unwrap());
        let l = loss_trans(&mut t, x, x).unwrap();
        assert_eq!(scalar(&t, l), 0.0);
    }

    #[test]
    fn three_four_five() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::row(&[0.0, 0.0]));
        let y = t.constant(Tensor::row(&[3.0, 4.0]));
        let l = loss_trans(&mut t, x, y).unwrap();
        assert_eq!(scalar(&t, l), 5.0);
    }

    #[test]
    fn symmetric_equilibrium() {
        let mut t = Tape::new();
        let half = t.constant(Tensor::filled(4, 1, 0.5));
        let (d, g) = loss_gan(&mut t, half, half).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((scalar(&t, d) - 2.0 * ln2).abs() < 1e-15);
        assert!((scalar(&t, g) - ln2).abs() < 1e-15);
    }

    #[test]
    fn confident_fakes_drive_generator_loss_to_zero() {
        let mut t = Tape::new();
        let p = t.constant(Tensor::filled(3, 1, 1.0 - 1e-9));
        let g = gen_loss(&mut t, p).unwrap();
        let v = scalar(&t, g);
        assert!(v > 0.0 && v < 1e-6);
    }

    #[test]
    fn clamp_keeps_losses_finite() {
        let mut t = Tape::new();
        let zero = t.constant(Tensor::zeros(2, 1));
        let one = t.constant(Tensor::ones(2, 1));
        let (d, g) = loss_gan(&mut t, zero, one).unwrap();
        assert!(scalar(&t, d).is_finite() && scalar(&t, g).is_finite());
    }

    #[test]
    fn super_loss_by_hand() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::row(&[2.0, 3.0]));
        let b = t.constant(Tensor::row(&[1.0, 2.0]));
        let l = loss_super(&mut t, a, b).unwrap();
        assert_eq!(scalar(&t, l), 2.0);
        let l0 = loss_super(&mut t, a, a).unwrap();
        assert_eq!(scalar(&t, l0), 0.0);
    }

    #[test]
    fn super_loss_rejects_empty_batch() {
        let mut t = Tape::new();
        let e = t.constant(Tensor::zeros(0, 2));
        assert!(matches!(loss_super(&mut t, e, e), Err(NetError::Contract(_))));
    }

    #[test]
    fn constant_critic_penalty_is_one() {
        let mut t = Tape::new();
        let w = t.param(Tensor::zeros(3, 1));
        let mut critic = |tape: &mut Tape, x: Var| -> Result<Var, MathError> {
            let z = tape.matmul(x, w)?;
            tape.sigmoid(z)
        };
        let real = Tensor::from_fn(4, 3, |i, j| (i + j) as f64);
        let fake = Tensor::zeros(4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = gradient_penalty(&mut t, &mut critic, &real, &fake, &mut rng).unwrap();
        assert_eq!(scalar(&t, p), 1.0);
    }

    #[test]
    fn shape_mismatch_is_a_contract_error() {
        let mut t = Tape::new();
        let mut critic = |tape: &mut Tape, x: Var| tape.sigmoid(x);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = gradient_penalty(&mut t, &mut critic, &Tensor::zeros(2, 1), &Tensor::zeros(3, 1), &mut rng);
        assert!(matches!(r, Err(NetError::Contract(_))));
    }
}
