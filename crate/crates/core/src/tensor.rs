//! Dense row-major `f64` tensors and a reverse-mode tape.
//!
//! Operations are recorded on a [`Tape`] in execution order, so the node
//! list is already a topological order and backward is a single reverse
//! sweep. Every recorded op checks its output for non-finite values.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl Tensor {
    /// Builds a tensor, rejecting zero extents, length mismatches and
    /// non-finite entries.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Contract(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::dim("Tensor::new", &shape, &[data.len()]));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("Tensor::new".into()));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Contract("ragged rows".into()));
        }
        Tensor::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![data.len()], data)
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Tensor::new(vec![1], vec![value])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "zero extent in {shape:?}");
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// `n × n` identity.
    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access for optimizers. Callers are responsible for keeping
    /// values finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Rows of a 2-D tensor; the leading extent otherwise.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Trailing extent.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Copies the given rows of a 2-D tensor into a new tensor.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Tensor> {
        if self.shape.len() != 2 {
            return Err(Error::Contract("select_rows needs a matrix".into()));
        }
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= self.rows() {
                return Err(Error::Index {
                    op: "select_rows",
                    index: i as i64,
                    bound: self.rows(),
                });
            }
            data.extend_from_slice(self.row(i));
        }
        Tensor::new(vec![idx.len(), c], data)
    }

    fn check_finite(self, op: &str) -> Result<Tensor> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(self)
        } else {
            Err(Error::Numeric(op.to_string()))
        }
    }
}

fn as_matrix(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape.as_slice() {
        [m, n] => Ok((*m, *n)),
        _ => Err(Error::dim(op, &t.shape, &[])),
    }
}

/// `C = A·B` on raw row-major buffers (i-k-j loop order).
fn gemm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let out = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aik = a[i * k + p];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in out.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    c
}

/// `C = A·Bᵀ` with `A: m×n`, `B: k×n`.
fn gemm_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            c[i * k + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    c
}

/// `C = Aᵀ·B` with `A: m×k`, `B: m×n`.
fn gemm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for r in 0..m {
        let brow = &b[r * n..(r + 1) * n];
        for p in 0..k {
            let arp = a[r * k + p];
            if arp == 0.0 {
                continue;
            }
            let out = &mut c[p * n..(p + 1) * n];
            for (o, &bv) in out.iter_mut().zip(brow) {
                *o += arp * bv;
            }
        }
    }
    c
}

/// Plain (untracked) matrix product.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = as_matrix(a, "matmul")?;
    let (k2, n) = as_matrix(b, "matmul")?;
    if k != k2 {
        return Err(Error::dim("matmul", &a.shape, &b.shape));
    }
    Tensor {
        shape: vec![m, n],
        data: gemm(&a.data, &b.data, m, k, n),
    }
    .check_finite("matmul")
}

/// Overflow-safe `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic sigmoid, the derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary elementwise operation kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable operation defined outside this module.
///
/// `backward` receives the input values, the forward output and the
/// upstream gradient, and returns one gradient per input (same shapes).
pub trait CustomOp {
    fn name(&self) -> &'static str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor>;
}

enum Op {
    Param,
    Constant,
    MatMul(Var, Var),
    Binary {
        a: Var,
        b: Var,
        kind: Elementwise,
        // b is a bias row broadcast over the rows of a
        broadcast: bool,
    },
    Relu(Var),
    Softplus(Var),
    LogSoftmax(Var),
    Nll {
        input: Var,
        labels: Vec<usize>,
    },
    Sum(Var),
    Scale(Var, f64),
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients for every parameter leaf of a tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a parameter leaf; `None` for constants and
    /// intermediate nodes.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

/// Single-owner record of executed operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Clears all recorded nodes so the tape can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.consumed = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if self.consumed {
            return Err(Error::State(
                "tape already consumed by backward; reset it first".into(),
            ));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Param)
    }

    /// Leaf excluded from differentiation (data, noise, masks).
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Constant)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = matmul(self.value(a), self.value(b))?;
        self.push(out, Op::MatMul(a, b))
    }

    /// Elementwise `a ∘ b`. `b` may also be a bias row (`[n]` or `[1, n]`)
    /// broadcast across the rows of an `m × n` matrix `a`.
    pub fn elementwise(&mut self, a: Var, b: Var, kind: Elementwise) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let broadcast = if av.shape == bv.shape {
            false
        } else if av.shape.len() == 2
            && bv.len() == av.cols()
            && (bv.shape.len() == 1 || (bv.shape.len() == 2 && bv.shape[0] == 1))
        {
            true
        } else {
            return Err(Error::dim("elementwise", &av.shape, &bv.shape));
        };
        let f = match kind {
            Elementwise::Add => |x: f64, y: f64| x + y,
            Elementwise::Sub => |x: f64, y: f64| x - y,
            Elementwise::Mul => |x: f64, y: f64| x * y,
        };
        let data: Vec<f64> = if broadcast {
            let n = bv.len();
            av.data
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, bv.data[i % n]))
                .collect()
        } else {
            av.data.iter().zip(&bv.data).map(|(&x, &y)| f(x, y)).collect()
        };
        let out = Tensor {
            shape: av.shape.clone(),
            data,
        }
        .check_finite("elementwise")?;
        self.push(
            out,
            Op::Binary {
                a,
                b,
                kind,
                broadcast,
            },
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Elementwise::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Elementwise::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Elementwise::Mul)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(out, Op::Relu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(softplus).check_finite("softplus")?;
        self.push(out, Op::Softplus(a))
    }

    /// Rowwise log-softmax of an `m × K` matrix with max subtraction.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (m, k) = as_matrix(av, "log_softmax")?;
        if k < 2 {
            return Err(Error::Contract(format!(
                "log_softmax needs at least 2 classes, got {k}"
            )));
        }
        let mut data = Vec::with_capacity(m * k);
        for i in 0..m {
            let row = av.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            data.extend(row.iter().map(|&x| x - lse));
        }
        let out = Tensor {
            shape: vec![m, k],
            data,
        }
        .check_finite("log_softmax")?;
        self.push(out, Op::LogSoftmax(a))
    }

    /// Mean negative log-likelihood of `labels` under rowwise log-probs.
    pub fn nll(&mut self, log_probs: Var, labels: &[usize]) -> Result<Var> {
        let lp = self.value(log_probs);
        let (m, k) = as_matrix(lp, "nll")?;
        if labels.len() != m {
            return Err(Error::dim("nll", &lp.shape, &[labels.len()]));
        }
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            if y >= k {
                return Err(Error::Index {
                    op: "nll",
                    index: y as i64,
                    bound: k,
                });
            }
            total -= lp.data[i * k + y];
        }
        let out = Tensor::scalar(total / m as f64).map_err(|_| Error::Numeric("nll".into()))?;
        self.push(
            out,
            Op::Nll {
                input: log_probs,
                labels: labels.to_vec(),
            },
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum()).map_err(|_| Error::Numeric("sum".into()))?;
        self.push(out, Op::Sum(a))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * factor).check_finite("scale")?;
        self.push(out, Op::Scale(a, factor))
    }

    pub fn custom(&mut self, inputs: &[Var], op: Box<dyn CustomOp>) -> Result<Var> {
        let values: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
        let out = op.forward(&values)?.check_finite(op.name())?;
        self.push(
            out,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
        )
    }

    /// Reverse sweep from a scalar root. Consumes the tape: a second call
    /// without [`Tape::reset`] is a state error.
    pub fn backward(&mut self, root: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::State("backward already ran on this tape".into()));
        }
        if root.0 >= self.nodes.len() {
            return Err(Error::State(format!("unknown node {}", root.0)));
        }
        if !self.nodes[root.0].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.nodes[root.0].value.shape
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(&self.nodes[root.0].value.shape, 1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Param => {
                    grads[i] = Some(g);
                }
                Op::Constant => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let (m, k) = (av.shape[0], av.shape[1]);
                    let n = bv.shape[1];
                    let da = gemm_nt(&g.data, &bv.data, m, n, k);
                    let db = gemm_tn(&av.data, &g.data, m, k, n);
                    accumulate(&mut grads, *a, &av.shape, da);
                    accumulate(&mut grads, *b, &bv.shape, db);
                }
                Op::Binary {
                    a,
                    b,
                    kind,
                    broadcast,
                } => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let n = bv.len();
                    let (da, db_full): (Vec<f64>, Vec<f64>) = match kind {
                        Elementwise::Add => (g.data.clone(), g.data.clone()),
                        Elementwise::Sub => (g.data.clone(), g.data.iter().map(|x| -x).collect()),
                        Elementwise::Mul => {
                            let da = g
                                .data
                                .iter()
                                .enumerate()
                                .map(|(j, gv)| gv * bv.data[if *broadcast { j % n } else { j }])
                                .collect();
                            let db = g.data.iter().zip(&av.data).map(|(gv, x)| gv * x).collect();
                            (da, db)
                        }
                    };
                    let db = if *broadcast {
                        let mut acc = vec![0.0; n];
                        for (j, v) in db_full.iter().enumerate() {
                            acc[j % n] += v;
                        }
                        acc
                    } else {
                        db_full
                    };
                    accumulate(&mut grads, *a, &av.shape, da);
                    accumulate(&mut grads, *b, &bv.shape, db);
                }
                Op::Relu(a) => {
                    let av = &self.nodes[a.0].value;
                    let da = g
                        .data
                        .iter()
                        .zip(&av.data)
                        .map(|(gv, &x)| if x > 0.0 { *gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *a, &av.shape, da);
                }
                Op::Softplus(a) => {
                    let av = &self.nodes[a.0].value;
                    let da = g
                        .data
                        .iter()
                        .zip(&av.data)
                        .map(|(gv, &x)| gv * sigmoid(x))
                        .collect();
                    accumulate(&mut grads, *a, &av.shape, da);
                }
                Op::LogSoftmax(a) => {
                    let out = &node.value;
                    let (m, k) = (out.shape[0], out.shape[1]);
                    let mut da = vec![0.0; m * k];
                    for r in 0..m {
                        let gs: f64 = g.data[r * k..(r + 1) * k].iter().sum();
                        for c in 0..k {
                            let j = r * k + c;
                            da[j] = g.data[j] - out.data[j].exp() * gs;
                        }
                    }
                    accumulate(&mut grads, *a, &[m, k], da);
                }
                Op::Nll { input, labels } => {
                    let lp = &self.nodes[input.0].value;
                    let (m, k) = (lp.shape[0], lp.shape[1]);
                    let scale = -g.data[0] / m as f64;
                    let mut da = vec![0.0; m * k];
                    for (r, &y) in labels.iter().enumerate() {
                        da[r * k + y] = scale;
                    }
                    accumulate(&mut grads, *input, &[m, k], da);
                }
                Op::Sum(a) => {
                    let shape = self.nodes[a.0].value.shape.clone();
                    let n = self.nodes[a.0].value.len();
                    accumulate(&mut grads, *a, &shape, vec![g.data[0]; n]);
                }
                Op::Scale(a, factor) => {
                    let shape = self.nodes[a.0].value.shape.clone();
                    let da = g.data.iter().map(|v| v * factor).collect();
                    accumulate(&mut grads, *a, &shape, da);
                }
                Op::Custom { inputs, op } => {
                    let values: Vec<&Tensor> =
                        inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                    let input_grads = op.backward(&values, &node.value, &g);
                    debug_assert_eq!(input_grads.len(), inputs.len());
                    for (v, gi) in inputs.iter().zip(input_grads) {
                        let shape = self.nodes[v.0].value.shape.clone();
                        accumulate(&mut grads, *v, &shape, gi.data);
                    }
                }
            }
        }

        // Parameters the root never reached still get a zero gradient.
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Param) {
                if grads[i].is_none() {
                    grads[i] = Some(Tensor::zeros(&node.value.shape));
                }
            } else {
                grads[i] = None;
            }
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.data.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric(format!("gradient of node {i}")));
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, shape: &[usize], delta: Vec<f64>) {
    match &mut grads[var.0] {
        Some(existing) => {
            for (e, d) in existing.data.iter_mut().zip(delta) {
                *e += d;
            }
        }
        slot @ None => {
            *slot = Some(Tensor {
                shape: shape.to_vec(),
                data: delta,
            });
        }
    }
}
