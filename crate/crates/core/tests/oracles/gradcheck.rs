//! Random computation graphs checked against finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use superot_core::math::{batchnorm, MathError, Tape, Tensor, Var};
use superot_core::nets::gradient_penalty;

use super::{fd_gradient, rel_error};

pub const FD_STEP: f64 = 1e-5;

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Tensor {
    Tensor::from_fn(r, c, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0))
}

/// The scalar graphs exercised per seed. Each takes its inputs as tape
/// leaves and returns the loss node.
type Graph = fn(&mut Tape, &[Var]) -> Result<Var, MathError>;

fn g_bn_sigmoid_log(t: &mut Tape, v: &[Var]) -> Result<Var, MathError> {
    // x, w, bias, gamma, beta, head
    let xw = t.matmul(v[0], v[1])?;
    let pre = t.add(xw, v[2])?;
    let act = t.relu(pre)?;
    let bn = batchnorm(t, act, v[3], v[4], 1e-5)?.out;
    let logit = t.matmul(bn, v[5])?;
    let p = t.sigmoid(logit)?;
    let lp = t.log(p)?;
    t.mean(lp)
}

fn g_norms(t: &mut Tape, v: &[Var]) -> Result<Var, MathError> {
    // x, w, target
    let xw = t.matmul(v[0], v[1])?;
    let diff = t.sub(xw, v[2])?;
    let n = t.row_norms(diff)?;
    let sq = t.square(diff)?;
    let s = t.sum_cols(sq)?;
    let both = t.add(n, s)?;
    t.mean(both)
}

fn g_misc(t: &mut Tape, v: &[Var]) -> Result<Var, MathError> {
    // x, y with y kept positive by the generator
    let cat = t.concat_cols(v[0], v[1])?;
    let tt = t.matmul_t(cat, cat, false, true)?;
    let sl = t.slice_cols(v[1], 0, 1)?;
    let r = t.recip(sl)?;
    let sq = t.sqrt(sl)?;
    let prod = t.mul(r, sq)?;
    let neg = t.neg(prod)?;
    let s1 = t.sum(tt)?;
    let s2 = t.sum(neg)?;
    let sc = t.scale(s1, 0.1)?;
    t.add(sc, s2)
}

fn eval(graph: Graph, inputs: &[Tensor]) -> f64 {
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| t.param(x.clone())).collect();
    let out = graph(&mut t, &vars).expect("graph builds");
    t.item(out).unwrap()
}

fn check(graph: Graph, inputs: &[Tensor]) -> f64 {
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| t.param(x.clone())).collect();
    let out = graph(&mut t, &vars).expect("graph builds");
    let grads = t.grad(out, &vars, false).unwrap();
    let fd = fd_gradient(inputs, FD_STEP, |xs| eval(graph, xs));
    grads
        .iter()
        .zip(&vars)
        .zip(&fd)
        .map(|((g, v), f)| {
            let g = g.map(|g| t.value(g).clone()).unwrap_or_else(|| Tensor::zeros(t.value(*v).rows(), t.value(*v).cols()));
            rel_error(&g, f, 1e-6)
        })
        .fold(0.0, f64::max)
}

/// Largest relative error between reverse-mode and finite-difference
/// gradients over every first-order graph for this seed.
pub fn first_order_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = rng.random_range(3..7);
    let d = rng.random_range(2..5);
    let h = rng.random_range(2..5);
    let x = random(&mut rng, b, d, 1.0);
    let bn_inputs = vec![
        x.clone(),
        random(&mut rng, d, h, 1.0),
        random(&mut rng, 1, h, 0.5),
        Tensor::from_fn(1, h, |_, _| 0.5 + rng.random::<f64>()),
        random(&mut rng, 1, h, 0.5),
        random(&mut rng, h, 1, 1.0),
    ];
    let norm_inputs = vec![x.clone(), random(&mut rng, d, h, 1.0), random(&mut rng, b, h, 1.0)];
    let misc_inputs = vec![x, Tensor::from_fn(b, 2, |_, _| 0.5 + rng.random::<f64>())];
    [
        check(g_bn_sigmoid_log, &bn_inputs),
        check(g_norms, &norm_inputs),
        check(g_misc, &misc_inputs),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

/// Critic `sigmoid(bn(relu(x·W1 + b1))·W2 + b2)` on the tape.
fn critic(t: &mut Tape, p: &[Var], x: Var) -> Result<Var, MathError> {
    let h = t.matmul(x, p[0])?;
    let h = t.add(h, p[1])?;
    let h = t.relu(h)?;
    let h = batchnorm(t, h, p[2], p[3], 1e-5)?.out;
    let o = t.matmul(h, p[4])?;
    let o = t.add(o, p[5])?;
    t.sigmoid(o)
}

fn penalty(params: &[Tensor], real: &Tensor, fake: &Tensor, mix_seed: u64) -> (Tape, Var, Vec<Var>) {
    let mut t = Tape::new();
    let vars: Vec<Var> = params.iter().map(|x| t.param(x.clone())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed);
    let gp = gradient_penalty(&mut t, &mut |tape: &mut Tape, x| critic(tape, &vars, x), real, fake, &mut rng).unwrap();
    (t, gp, vars)
}

/// Relative error between double-backprop gradient-penalty parameter
/// gradients and finite differences of the penalty, which itself is built
/// from first-order input gradients.
pub fn second_order_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let b = rng.random_range(3..6);
    let d = rng.random_range(2..4);
    let h = rng.random_range(2..5);
    let real = random(&mut rng, b, d, 1.5);
    let fake = random(&mut rng, b, d, 1.5);
    let params = vec![
        random(&mut rng, d, h, 1.5),
        random(&mut rng, 1, h, 0.5),
        Tensor::from_fn(1, h, |_, _| 0.5 + rng.random::<f64>()),
        random(&mut rng, 1, h, 0.5),
        random(&mut rng, h, 1, 2.0),
        random(&mut rng, 1, 1, 0.5),
    ];
    let (mut t, gp, vars) = penalty(&params, &real, &fake, seed);
    let grads = t.grad(gp, &vars, false).unwrap();
    let fd = fd_gradient(&params, FD_STEP, |ps| {
        let (t, gp, _) = penalty(ps, &real, &fake, seed);
        t.item(gp).unwrap()
    });
    grads
        .iter()
        .zip(&params)
        .zip(&fd)
        .map(|((g, p), f)| {
            let g = g.map(|g| t.value(g).clone()).unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols()));
            rel_error(&g, f, 1e-6)
        })
        .fold(0.0, f64::max)
}
