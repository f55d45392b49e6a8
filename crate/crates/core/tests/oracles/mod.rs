//! Independent reference implementations used by the integration and
//! acceptance suites. None of these call into the code they check.
#![allow(dead_code)]

pub mod gradcheck;

use nalgebra::{DMatrix, DVector};
use superot_core::math::Tensor;

/// Central finite-difference gradient of `f` with respect to every entry of
/// every input tensor.
pub fn fd_gradient(inputs: &[Tensor], h: f64, mut f: impl FnMut(&[Tensor]) -> f64) -> Vec<Tensor> {
    let mut out = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for t in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[t].rows(), inputs[t].cols());
        for e in 0..inputs[t].len() {
            let orig = work[t].data()[e];
            work[t].data_mut()[e] = orig + h;
            let up = f(&work);
            work[t].data_mut()[e] = orig - h;
            let down = f(&work);
            work[t].data_mut()[e] = orig;
            g.data_mut()[e] = (up - down) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

/// `max|a − b| / max(max|a|, max|b|, floor)`.
pub fn rel_error(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    let scale = a.data().iter().chain(b.data()).fold(floor, |m, v| m.max(v.abs()));
    a.max_abs_diff(b) / scale
}

/// Eigenvalues (descending) and matching eigenvectors (columns) of a
/// symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i][j] * m[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j][j].partial_cmp(&m[i][i]).unwrap());
    let vals = order.iter().map(|&i| m[i][i]).collect();
    let vecs = order.iter().map(|&i| (0..n).map(|k| v[k][i]).collect()).collect();
    (vals, vecs)
}

/// Sample covariance (divided by `n − 1`) of the rows of `x`.
pub fn covariance(x: &Tensor) -> Vec<Vec<f64>> {
    let (n, d) = (x.rows(), x.cols());
    let mean: Vec<f64> = (0..d).map(|j| (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64).collect();
    (0..d)
        .map(|a| {
            (0..d)
                .map(|b| (0..n).map(|i| (x.get(i, a) - mean[a]) * (x.get(i, b) - mean[b])).sum::<f64>() / (n - 1) as f64)
                .collect()
        })
        .collect()
}

fn gauss_kronrod(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    const XK: [f64; 8] = [
        0.991_455_371_120_812_6,
        0.949_107_912_342_758_5,
        0.864_864_423_359_769_1,
        0.741_531_185_599_394_4,
        0.586_087_235_467_691_1,
        0.405_845_151_377_397_2,
        0.207_784_955_007_898_5,
        0.0,
    ];
    const WK: [f64; 8] = [
        0.022_935_322_010_529_22,
        0.063_092_092_629_978_55,
        0.104_790_010_322_250_2,
        0.140_653_259_715_525_9,
        0.169_004_726_639_267_9,
        0.190_350_578_064_785_4,
        0.204_432_940_075_298_9,
        0.209_482_141_084_728_0,
    ];
    const WG: [f64; 4] = [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let x = h * XK[i];
        let s = f(c - x) + f(c + x);
        k += WK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive 15-point Gauss–Kronrod quadrature of `f` over `[a, b]`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (v, err) = gauss_kronrod(f, a, b);
        if err <= tol || depth > 50 || (b - a).abs() < 1e-15 {
            return v;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, tol / 2.0, depth + 1) + rec(f, m, b, tol / 2.0, depth + 1)
    }
    rec(f, a, b, tol, 0)
}

/// Two-sided Student-t p-value by quadrature.
///
/// With `s = √ν·tan θ` the density becomes proportional to `cos^{ν−1} θ` on
/// `(−π/2, π/2)`, so `p = ∫_{θ₀}^{π/2} cos^{ν−1} / ∫_0^{π/2} cos^{ν−1}` with
/// `θ₀ = atan(|t|/√ν)`.
pub fn t_p_value_quadrature(t: f64, df: f64) -> f64 {
    let w = move |th: f64| th.cos().max(0.0).powf(df - 1.0);
    let half_pi = std::f64::consts::FRAC_PI_2;
    let theta0 = (t.abs() / df.sqrt()).atan();
    let total = integrate(&w, 0.0, half_pi, 1e-15);
    let tail = integrate(&w, theta0, half_pi, 1e-15);
    (tail / total).min(1.0)
}

/// Sample mean and unbiased variance.
pub fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0))
}

/// Entropic OT coupling `exp((f_i + g_j − C_ij)/ε)` from damped Newton ascent
/// on the dual with `g_m` pinned to zero.
pub fn entropic_ot_newton(c: &Tensor, a: &[f64], b: &[f64], eps: f64) -> Tensor {
    let (n, m) = (a.len(), b.len());
    let dim = n + m - 1;
    let plan = |x: &DVector<f64>| -> DMatrix<f64> {
        DMatrix::from_fn(n, m, |i, j| {
            let g = if j < m - 1 { x[n + j] } else { 0.0 };
            ((x[i] + g - c.get(i, j)) / eps).exp()
        })
    };
    let dual = |x: &DVector<f64>| -> f64 {
        let p = plan(x);
        let lin: f64 = (0..n).map(|i| x[i] * a[i]).sum::<f64>() + (0..m - 1).map(|j| x[n + j] * b[j]).sum::<f64>();
        lin - eps * p.sum()
    };
    // start from the potentials of the independent coupling
    let mut x = DVector::from_fn(dim, |k, _| if k < n { eps * a[k].ln() + c.row_slice(k).iter().cloned().fold(f64::INFINITY, f64::min) } else { 0.0 });
    for _ in 0..500 {
        let p = plan(&x);
        let mut grad = DVector::zeros(dim);
        for i in 0..n {
            grad[i] = a[i] - p.row(i).sum();
        }
        for j in 0..m - 1 {
            grad[n + j] = b[j] - p.column(j).sum();
        }
        if grad.amax() < 1e-15 {
            break;
        }
        let mut hess = DMatrix::zeros(dim, dim);
        for i in 0..n {
            hess[(i, i)] = p.row(i).sum() / eps;
        }
        for j in 0..m - 1 {
            hess[(n + j, n + j)] = p.column(j).sum() / eps;
            for i in 0..n {
                hess[(i, n + j)] = p[(i, j)] / eps;
                hess[(n + j, i)] = p[(i, j)] / eps;
            }
        }
        let step = hess.lu().solve(&grad).expect("dual Hessian is nonsingular");
        let base = dual(&x);
        let slope = grad.dot(&step);
        let mut t = 1.0;
        loop {
            let trial = &x + &step * t;
            if dual(&trial) >= base + 1e-4 * t * slope || t < 1e-12 {
                x = trial;
                break;
            }
            t *= 0.5;
        }
    }
    let p = plan(&x);
    Tensor::from_fn(n, m, |i, j| p[(i, j)])
}
