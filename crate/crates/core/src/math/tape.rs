//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Every operation appends a node to the [`Tape`]. Vector-Jacobian products
//! are themselves expressed as tape operations, so a backward pass run with
//! `create_graph = true` leaves a differentiable graph of the gradients
//! behind it. That is what the discriminator's gradient penalty needs:
//! differentiate `‖∇ₓ D(x)‖` with respect to the discriminator weights.
//!
//! With `create_graph = false` the gradient nodes are recorded as constants
//! and nothing downstream of them is differentiable.

use super::{MathError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Recip(Var),
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    Square(Var),
    Sqrt(Var),
    /// `1/x`, with 0 where `x == 0`
    SafeRecip(Var),
    Clamp { a: Var, lo: f64, hi: f64 },
    SumAll(Var),
    /// column sums: `r×c → 1×c`
    SumRows(Var),
    /// row sums: `r×c → r×1`
    SumCols(Var),
    Expand(Var),
    SliceCols { a: Var, start: usize },
    PadCols { a: Var, start: usize },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddConst(..) => "add_const",
            Op::Recip(..) => "recip",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Log(..) => "log",
            Op::Square(..) => "square",
            Op::Sqrt(..) => "sqrt",
            Op::SafeRecip(..) => "safe_recip",
            Op::Clamp { .. } => "clamp",
            Op::SumAll(..) => "sum",
            Op::SumRows(..) => "sum_rows",
            Op::SumCols(..) => "sum_cols",
            Op::Expand(..) => "expand",
            Op::SliceCols { .. } => "slice_cols",
            Op::PadCols { .. } => "pad_cols",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only computation record. Node inputs always precede the node.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    /// while set, new nodes are recorded as constants
    frozen: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Scalar value of a `1×1` node.
    pub fn item(&self, v: Var) -> Result<f64, MathError> {
        self.value(v).item()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var, MathError> {
        if !value.is_finite() {
            return Err(MathError::NonFinite(op.name()));
        }
        let requires_grad = !self.frozen && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, MathError> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a)·op(b)` where `ta`/`tb` transpose the operand.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var, MathError> {
        let out = Tensor::matmul_t(self.value(a), self.value(b), ta, tb)?;
        self.push(out, Op::MatMul { a, b, ta, tb }, &[a, b])
    }

    /// Broadcasts a `1×c`, `r×1` or `1×1` node up to `rows×cols`.
    pub fn expand(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, MathError> {
        let [r, c] = self.shape(a);
        if r == rows && c == cols {
            return Ok(a);
        }
        if (r != 1 && r != rows) || (c != 1 && c != cols) {
            return Err(MathError::Shape(format!("cannot broadcast {r}x{c} to {rows}x{cols}")));
        }
        let src = self.value(a);
        let out = Tensor::from_fn(rows, cols, |i, j| {
            src.get(if r == 1 { 0 } else { i }, if c == 1 { 0 } else { j })
        });
        self.push(out, Op::Expand(a), &[a])
    }

    fn broadcast_pair(&mut self, a: Var, b: Var) -> Result<(Var, Var), MathError> {
        let [ra, ca] = self.shape(a);
        let [rb, cb] = self.shape(b);
        if ra == rb && ca == cb {
            return Ok((a, b));
        }
        let rows = ra.max(rb);
        let cols = ca.max(cb);
        Ok((self.expand(a, rows, cols)?, self.expand(b, rows, cols)?))
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.rows(), ta.cols(), data).expect("zip of equal shapes")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, MathError> {
        let (a, b) = self.broadcast_pair(a, b)?;
        let out = self.zip(a, b, |x, y| x + y);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, MathError> {
        let (a, b) = self.broadcast_pair(a, b)?;
        let out = self.zip(a, b, |x, y| x - y);
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, MathError> {
        let (a, b) = self.broadcast_pair(a, b)?;
        let out = self.zip(a, b, |x, y| x * y);
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, MathError> {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, MathError> {
        self.scale(a, -1.0)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Result<Var, MathError> {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::AddConst(a), &[a])
    }

    pub fn recip(&mut self, a: Var) -> Result<Var, MathError> {
        if self.value(a).data().iter().any(|&x| x == 0.0) {
            return Err(MathError::Domain("reciprocal of zero".into()));
        }
        let out = self.value(a).map(|x| 1.0 / x);
        self.push(out, Op::Recip(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, MathError> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, MathError> {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var, MathError> {
        if let Some(x) = self.value(a).data().iter().find(|&&x| x <= 0.0) {
            return Err(MathError::Domain(format!("log of non-positive value {x}")));
        }
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var, MathError> {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a), &[a])
    }

    /// Square root. At zero the gradient is taken as 0.
    pub fn sqrt(&mut self, a: Var) -> Result<Var, MathError> {
        if let Some(x) = self.value(a).data().iter().find(|&&x| x < 0.0) {
            return Err(MathError::Domain(format!("sqrt of negative value {x}")));
        }
        let out = self.value(a).map(f64::sqrt);
        self.push(out, Op::Sqrt(a), &[a])
    }

    fn safe_recip(&mut self, a: Var) -> Result<Var, MathError> {
        let out = self.value(a).map(|x| if x == 0.0 { 0.0 } else { 1.0 / x });
        self.push(out, Op::SafeRecip(a), &[a])
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var, MathError> {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(out, Op::Clamp { a, lo, hi }, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, MathError> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::SumAll(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, MathError> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(MathError::Shape("mean of empty tensor".into()));
        }
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Column sums, `r×c → 1×c`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var, MathError> {
        let t = self.value(a);
        let mut out = vec![0.0; t.cols()];
        for i in 0..t.rows() {
            for (o, v) in out.iter_mut().zip(t.row_slice(i)) {
                *o += v;
            }
        }
        self.push(Tensor::row(&out), Op::SumRows(a), &[a])
    }

    /// Row sums, `r×c → r×1`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var, MathError> {
        let t = self.value(a);
        let out: Vec<f64> = (0..t.rows()).map(|i| t.row_slice(i).iter().sum()).collect();
        let n = out.len();
        self.push(Tensor::new(n, 1, out)?, Op::SumCols(a), &[a])
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, MathError> {
        let t = self.value(a);
        if start > end || end > t.cols() {
            return Err(MathError::Shape(format!(
                "column slice {start}..{end} of {} columns",
                t.cols()
            )));
        }
        let out = Tensor::from_fn(t.rows(), end - start, |i, j| t.get(i, start + j));
        self.push(out, Op::SliceCols { a, start }, &[a])
    }

    /// Embeds `a` at column offset `start` of a zero tensor with `total` columns.
    pub fn pad_cols(&mut self, a: Var, start: usize, total: usize) -> Result<Var, MathError> {
        let t = self.value(a);
        if start + t.cols() > total {
            return Err(MathError::Shape(format!(
                "cannot pad {} columns at {start} into {total}",
                t.cols()
            )));
        }
        let mut out = Tensor::zeros(t.rows(), total);
        for i in 0..t.rows() {
            out.row_slice_mut(i)[start..start + t.cols()].copy_from_slice(t.row_slice(i));
        }
        self.push(out, Op::PadCols { a, start }, &[a])
    }

    /// Concatenates the columns of two nodes with equal row counts.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, MathError> {
        let [ra, ca] = self.shape(a);
        let [rb, cb] = self.shape(b);
        if ra != rb {
            return Err(MathError::Shape(format!("concat of {ra}x{ca} and {rb}x{cb}")));
        }
        let pa = self.pad_cols(a, 0, ca + cb)?;
        let pb = self.pad_cols(b, ca, ca + cb)?;
        self.add(pa, pb)
    }

    /// Euclidean norm of each row, `r×c → r×1`.
    pub fn row_norms(&mut self, a: Var) -> Result<Var, MathError> {
        let sq = self.square(a)?;
        let s = self.sum_cols(sq)?;
        self.sqrt(s)
    }

    /// Gradients of the scalar `loss` with respect to every `wrt` node.
    ///
    /// Returns `None` for nodes the loss does not depend on. With
    /// `create_graph` the returned gradients are differentiable nodes.
    pub fn grad(
        &mut self,
        loss: Var,
        wrt: &[Var],
        create_graph: bool,
    ) -> Result<Vec<Option<Var>>, MathError> {
        let [r, c] = self.shape(loss);
        if r != 1 || c != 1 {
            return Err(MathError::NotScalar(r, c));
        }
        let end = loss.0 + 1;
        // nodes downstream of some wrt node and carrying gradient
        let mut reach = vec![false; end];
        for w in wrt {
            if w.0 < end {
                reach[w.0] = true;
            }
        }
        for i in 0..end {
            if reach[i] || !self.nodes[i].requires_grad {
                continue;
            }
            reach[i] = self.inputs(i).iter().any(|v| reach[v.0]);
        }

        let was_frozen = self.frozen;
        self.frozen = !create_graph;
        let result = self.backprop(loss, end, &reach);
        self.frozen = was_frozen;
        let grads = result?;
        Ok(wrt.iter().map(|w| grads.get(w.0).copied().flatten()).collect())
    }

    /// Gradients for every leaf that requires grad, first order only.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, MathError> {
        let leaves: Vec<Var> = (0..=loss.0)
            .filter(|&i| matches!(self.nodes[i].op, Op::Leaf) && self.nodes[i].requires_grad)
            .map(Var)
            .collect();
        let grads = self.grad(loss, &leaves, false)?;
        let mut out = Gradients { entries: Vec::with_capacity(leaves.len()) };
        for (leaf, g) in leaves.into_iter().zip(grads) {
            let value = match g {
                Some(g) => self.value(g).clone(),
                None => {
                    let [r, c] = self.shape(leaf);
                    Tensor::zeros(r, c)
                }
            };
            out.entries.push((leaf, value));
        }
        Ok(out)
    }

    fn inputs(&self, i: usize) -> Vec<Var> {
        match self.nodes[i].op {
            Op::Leaf => vec![],
            Op::MatMul { a, b, .. } | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::Scale(a, _)
            | Op::AddConst(a)
            | Op::Recip(a)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Log(a)
            | Op::Square(a)
            | Op::Sqrt(a)
            | Op::SafeRecip(a)
            | Op::Clamp { a, .. }
            | Op::SumAll(a)
            | Op::SumRows(a)
            | Op::SumCols(a)
            | Op::Expand(a)
            | Op::SliceCols { a, .. }
            | Op::PadCols { a, .. } => vec![a],
        }
    }

    fn backprop(
        &mut self,
        loss: Var,
        end: usize,
        reach: &[bool],
    ) -> Result<Vec<Option<Var>>, MathError> {
        let mut grads: Vec<Option<Var>> = vec![None; end];
        if !reach[loss.0] {
            return Ok(grads);
        }
        let seed = self.constant(Tensor::scalar(1.0));
        grads[loss.0] = Some(seed);

        for i in (0..end).rev() {
            let Some(g) = grads[i] else { continue };
            if !reach[i] {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let contributions = self.vjp(&op, Var(i), g, reach)?;
            for (input, gi) in contributions {
                grads[input.0] = Some(match grads[input.0] {
                    Some(prev) => self.add(prev, gi)?,
                    None => gi,
                });
            }
        }
        Ok(grads)
    }

    /// Undo a broadcast by summing over expanded axes.
    fn reduce_to(&mut self, g: Var, target: [usize; 2]) -> Result<Var, MathError> {
        let [r, c] = self.shape(g);
        let mut g = g;
        if target[0] == 1 && r != 1 {
            g = self.sum_rows(g)?;
        }
        if target[1] == 1 && c != 1 {
            g = self.sum_cols(g)?;
        }
        Ok(g)
    }

    fn vjp(
        &mut self,
        op: &Op,
        out: Var,
        g: Var,
        reach: &[bool],
    ) -> Result<Vec<(Var, Var)>, MathError> {
        let wants = |v: &Var| reach[v.0];
        let mut res = Vec::with_capacity(2);
        match *op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                if wants(&a) {
                    let ga = if ta {
                        self.matmul_t(b, g, tb, true)?
                    } else {
                        self.matmul_t(g, b, false, !tb)?
                    };
                    res.push((a, ga));
                }
                if wants(&b) {
                    let gb = if tb {
                        self.matmul_t(g, a, true, ta)?
                    } else {
                        self.matmul_t(a, g, !ta, false)?
                    };
                    res.push((b, gb));
                }
            }
            Op::Add(a, b) => {
                if wants(&a) {
                    res.push((a, g));
                }
                if wants(&b) {
                    res.push((b, g));
                }
            }
            Op::Sub(a, b) => {
                if wants(&a) {
                    res.push((a, g));
                }
                if wants(&b) {
                    let n = self.neg(g)?;
                    res.push((b, n));
                }
            }
            Op::Mul(a, b) => {
                if wants(&a) {
                    let ga = self.mul(g, b)?;
                    res.push((a, ga));
                }
                if wants(&b) {
                    let gb = self.mul(g, a)?;
                    res.push((b, gb));
                }
            }
            Op::Scale(a, c) => {
                let ga = self.scale(g, c)?;
                res.push((a, ga));
            }
            Op::AddConst(a) => res.push((a, g)),
            Op::Recip(a) => {
                // d(1/x) = -1/x² = -(out)²
                let sq = self.square(out)?;
                let t = self.mul(g, sq)?;
                let ga = self.neg(t)?;
                res.push((a, ga));
            }
            Op::Relu(a) => {
                let mask = self.value(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                let mask = self.constant(mask);
                let ga = self.mul(g, mask)?;
                res.push((a, ga));
            }
            Op::Sigmoid(a) => {
                let neg = self.neg(out)?;
                let one_minus = self.add_const(neg, 1.0)?;
                let d = self.mul(out, one_minus)?;
                let ga = self.mul(g, d)?;
                res.push((a, ga));
            }
            Op::Log(a) => {
                let r = self.recip(a)?;
                let ga = self.mul(g, r)?;
                res.push((a, ga));
            }
            Op::Square(a) => {
                let two_a = self.scale(a, 2.0)?;
                let ga = self.mul(g, two_a)?;
                res.push((a, ga));
            }
            Op::Sqrt(a) => {
                let r = self.safe_recip(out)?;
                let half = self.scale(r, 0.5)?;
                let ga = self.mul(g, half)?;
                res.push((a, ga));
            }
            Op::SafeRecip(a) => {
                let sq = self.square(out)?;
                let t = self.mul(g, sq)?;
                let ga = self.neg(t)?;
                res.push((a, ga));
            }
            Op::Clamp { a, lo, hi } => {
                let mask = self.value(a).map(|x| if x >= lo && x <= hi { 1.0 } else { 0.0 });
                let mask = self.constant(mask);
                let ga = self.mul(g, mask)?;
                res.push((a, ga));
            }
            Op::SumAll(a) => {
                let [r, c] = self.shape(a);
                let ga = self.expand(g, r, c)?;
                res.push((a, ga));
            }
            Op::SumRows(a) | Op::SumCols(a) => {
                let [r, c] = self.shape(a);
                let ga = self.expand(g, r, c)?;
                res.push((a, ga));
            }
            Op::Expand(a) => {
                let target = self.shape(a);
                let ga = self.reduce_to(g, target)?;
                res.push((a, ga));
            }
            Op::SliceCols { a, start } => {
                let total = self.shape(a)[1];
                let ga = self.pad_cols(g, start, total)?;
                res.push((a, ga));
            }
            Op::PadCols { a, start } => {
                let width = self.shape(a)[1];
                let ga = self.slice_cols(g, start, start + width)?;
                res.push((a, ga));
            }
        }
        Ok(res)
    }
}

/// Leaf gradients returned by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    entries: Vec<(Var, Tensor)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.entries.iter().find(|(k, _)| *k == v).map(|(_, t)| t)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
