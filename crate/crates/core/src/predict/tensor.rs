//! Dense-matrix autodiff micro-kernel.
//!
//! A flat tape of matrix nodes built in topological order; `backward`
//! walks it in reverse accumulating reverse-mode gradients. Just the ops
//! the trajectory encoder needs — matmul, broadcast bias, GeLU, row
//! softmax, layer norm, softplus, and elementwise arithmetic — over
//! `nalgebra::DMatrix<f64>`.

use nalgebra::DMatrix;

/// Handle to one node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// a · b
    MatMul(NodeId, NodeId),
    /// a · bᵀ
    MatMulNt(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// Matrix plus a 1×D row broadcast over all rows.
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    SliceCols { x: NodeId, start: usize, len: usize },
    ConcatCols(Vec<NodeId>),
    Gelu(NodeId),
    SoftmaxRows(NodeId),
    /// Row-wise layer norm with learnable 1×D scale and shift.
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId },
    Softplus(NodeId),
    Square(NodeId),
    /// Sum of all entries, a 1×1 node.
    SumAll(NodeId),
}

struct Node {
    value: DMatrix<f64>,
    grad: DMatrix<f64>,
    op: Op,
}

const LN_EPS: f64 = 1e-5;

/// Computation tape. Build forward by pushing ops, then call
/// [`Graph::backward`] once on the scalar loss node.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn leaf(&mut self, value: DMatrix<f64>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &DMatrix<f64> {
        &self.nodes[id.0].value
    }

    /// Gradient of the node last passed to `backward` w.r.t. this node.
    pub fn grad(&self, id: NodeId) -> &DMatrix<f64> {
        &self.nodes[id.0].grad
    }

    fn push(&mut self, value: DMatrix<f64>, op: Op) -> NodeId {
        let grad = DMatrix::zeros(value.nrows(), value.ncols());
        self.nodes.push(Node { value, grad, op });
        NodeId(self.nodes.len() - 1)
    }

    fn val(&self, id: NodeId) -> &DMatrix<f64> {
        &self.nodes[id.0].value
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.val(a).ncols(), self.val(b).nrows(), "matmul shape");
        let v = self.val(a) * self.val(b);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.val(a).ncols(), self.val(b).ncols(), "matmul_nt shape");
        let v = self.val(a) * self.val(b).transpose();
        self.push(v, Op::MatMulNt(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.val(a).shape(), self.val(b).shape(), "add shape");
        let v = self.val(a) + self.val(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.val(a).shape(), self.val(b).shape(), "sub shape");
        let v = self.val(a) - self.val(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        assert_eq!(self.val(row).nrows(), 1, "bias must be a row vector");
        assert_eq!(self.val(a).ncols(), self.val(row).ncols(), "add_row shape");
        let mut v = self.val(a).clone();
        for r in 0..v.nrows() {
            for c in 0..v.ncols() {
                v[(r, c)] += self.val(row)[(0, c)];
            }
        }
        self.push(v, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let v = self.val(a) * factor;
        self.push(v, Op::Scale(a, factor))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        assert!(start + len <= self.val(x).ncols(), "slice_cols range");
        let v = self.val(x).columns(start, len).into_owned();
        self.push(v, Op::SliceCols { x, start, len })
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.val(parts[0]).nrows();
        let total: usize = parts.iter().map(|&p| self.val(p).ncols()).sum();
        let mut v = DMatrix::zeros(rows, total);
        let mut at = 0;
        for &p in parts {
            let part = self.val(p);
            assert_eq!(part.nrows(), rows, "concat_cols row count");
            v.columns_mut(at, part.ncols()).copy_from(part);
            at += part.ncols();
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = self.val(a).map(gelu_value);
        self.push(v, Op::Gelu(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let x = self.val(a);
        let mut v = x.clone();
        for mut row in v.row_iter_mut() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for e in row.iter_mut() {
                *e = (*e - max).exp();
                sum += *e;
            }
            for e in row.iter_mut() {
                *e /= sum;
            }
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let d = self.val(x).ncols();
        assert_eq!(self.val(gamma).shape(), (1, d), "layer_norm gamma shape");
        assert_eq!(self.val(beta).shape(), (1, d), "layer_norm beta shape");
        let xv = self.val(x);
        let mut v = xv.clone();
        for r in 0..xv.nrows() {
            let (mean, var) = row_moments(xv, r);
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for c in 0..d {
                let xhat = (xv[(r, c)] - mean) * inv;
                v[(r, c)] = xhat * self.val(gamma)[(0, c)] + self.val(beta)[(0, c)];
            }
        }
        self.push(v, Op::LayerNorm { x, gamma, beta })
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.val(a).map(softplus_value);
        self.push(v, Op::Softplus(a))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.val(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = DMatrix::from_element(1, 1, self.val(a).sum());
        self.push(v, Op::SumAll(a))
    }

    /// Accumulates d(node)/d(every node) into the tape, seeding `node`
    /// (which must be 1×1) with gradient 1.
    pub fn backward(&mut self, node: NodeId) {
        assert_eq!(self.nodes[node.0].value.shape(), (1, 1), "backward needs a scalar");
        for n in &mut self.nodes {
            n.grad.fill(0.0);
        }
        self.nodes[node.0].grad[(0, 0)] = 1.0;

        for i in (0..=node.0).rev() {
            let op = self.nodes[i].op.clone();
            let g = self.nodes[i].grad.clone();
            if g.iter().all(|&e| e == 0.0) {
                continue;
            }
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = &g * self.val(b).transpose();
                    let db = self.val(a).transpose() * &g;
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::MatMulNt(a, b) => {
                    let da = &g * self.val(b);
                    let db = g.transpose() * self.val(a);
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::Add(a, b) => {
                    self.accumulate(a, &g);
                    self.accumulate(b, &g);
                }
                Op::Sub(a, b) => {
                    self.accumulate(a, &g);
                    let neg = -&g;
                    self.accumulate(b, &neg);
                }
                Op::AddRow(a, row) => {
                    self.accumulate(a, &g);
                    let mut dr = DMatrix::zeros(1, g.ncols());
                    for r in 0..g.nrows() {
                        for c in 0..g.ncols() {
                            dr[(0, c)] += g[(r, c)];
                        }
                    }
                    self.accumulate(row, &dr);
                }
                Op::Scale(a, factor) => {
                    let da = &g * factor;
                    self.accumulate(a, &da);
                }
                Op::SliceCols { x, start, len } => {
                    let mut dx = DMatrix::zeros(self.val(x).nrows(), self.val(x).ncols());
                    dx.columns_mut(start, len).copy_from(&g);
                    self.accumulate(x, &dx);
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for &p in &parts {
                        let w = self.val(p).ncols();
                        let dp = g.columns(at, w).into_owned();
                        self.accumulate(p, &dp);
                        at += w;
                    }
                }
                Op::Gelu(a) => {
                    let da = self.val(a).zip_map(&g, |x, gi| gelu_derivative(x) * gi);
                    self.accumulate(a, &da);
                }
                Op::SoftmaxRows(a) => {
                    let y = self.nodes[i].value.clone();
                    let mut da = DMatrix::zeros(y.nrows(), y.ncols());
                    for r in 0..y.nrows() {
                        let dot: f64 = (0..y.ncols()).map(|c| g[(r, c)] * y[(r, c)]).sum();
                        for c in 0..y.ncols() {
                            da[(r, c)] = y[(r, c)] * (g[(r, c)] - dot);
                        }
                    }
                    self.accumulate(a, &da);
                }
                Op::LayerNorm { x, gamma, beta } => {
                    let xv = self.val(x).clone();
                    let gv = self.val(gamma).clone();
                    let d = xv.ncols();
                    let mut dx = DMatrix::zeros(xv.nrows(), d);
                    let mut dgamma = DMatrix::zeros(1, d);
                    let mut dbeta = DMatrix::zeros(1, d);
                    for r in 0..xv.nrows() {
                        let (mean, var) = row_moments(&xv, r);
                        let inv = 1.0 / (var + LN_EPS).sqrt();
                        let xhat: Vec<f64> =
                            (0..d).map(|c| (xv[(r, c)] - mean) * inv).collect();
                        let dxhat: Vec<f64> =
                            (0..d).map(|c| g[(r, c)] * gv[(0, c)]).collect();
                        let mean_dxhat: f64 = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dxhat_xhat: f64 =
                            dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for c in 0..d {
                            dgamma[(0, c)] += g[(r, c)] * xhat[c];
                            dbeta[(0, c)] += g[(r, c)];
                            dx[(r, c)] =
                                inv * (dxhat[c] - mean_dxhat - xhat[c] * mean_dxhat_xhat);
                        }
                    }
                    self.accumulate(x, &dx);
                    self.accumulate(gamma, &dgamma);
                    self.accumulate(beta, &dbeta);
                }
                Op::Softplus(a) => {
                    let da = self.val(a).zip_map(&g, |x, gi| sigmoid(x) * gi);
                    self.accumulate(a, &da);
                }
                Op::Square(a) => {
                    let da = self.val(a).zip_map(&g, |x, gi| 2.0 * x * gi);
                    self.accumulate(a, &da);
                }
                Op::SumAll(a) => {
                    let da = DMatrix::from_element(
                        self.val(a).nrows(),
                        self.val(a).ncols(),
                        g[(0, 0)],
                    );
                    self.accumulate(a, &da);
                }
            }
        }
    }

    fn accumulate(&mut self, id: NodeId, delta: &DMatrix<f64>) {
        self.nodes[id.0].grad += delta;
    }
}

fn row_moments(m: &DMatrix<f64>, r: usize) -> (f64, f64) {
    let d = m.ncols() as f64;
    let mean = m.row(r).sum() / d;
    let var = m.row(r).iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / d;
    (mean, var)
}

/// GeLU, tanh approximation.
fn gelu_value(x: f64) -> f64 {
    0.5 * x * (1.0 + inner_tanh(x).tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    let t = inner_tanh(x).tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x)
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044715;

fn inner_tanh(x: f64) -> f64 {
    SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)
}

/// Numerically stable ln(1 + eˣ).
fn softplus_value(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
