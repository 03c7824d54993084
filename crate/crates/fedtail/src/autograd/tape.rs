//! Reverse-mode computation tape over matrix-valued nodes.
//!
//! A `Tape` records primitive operations in append order during the forward
//! pass and replays them in reverse to accumulate gradients with respect to
//! the underlying `ParamVector`. Nodes hold row-major matrices; matrix
//! multiplication is plain loops with a fixed summation order, so two runs on
//! identical inputs produce bit-identical values and gradients.

use ndarray::Array2;

use super::param::{Gradient, ParamVector};
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    /// Leaf: a named slice of the parameter vector, viewed as rows x cols.
    Param { offset: usize },
    /// Leaf: constant data (batch features, fixed matrices).
    Const,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// Elementwise product.
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    /// (N x m) + (1 x m), bias broadcast over rows.
    AddRow(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Relu(NodeId),
    Log(NodeId),
    Exp(NodeId),
    /// Sum of all entries, scalar result.
    Sum(NodeId),
    /// Sum of the elementwise product, scalar result.
    Dot(NodeId, NodeId),
    /// Column means: (N x m) -> (1 x m).
    MeanRows(NodeId),
    /// Row-wise softmax with max subtraction.
    SoftmaxRows(NodeId),
    /// Row-wise log-softmax with max subtraction.
    LogSoftmaxRows(NodeId),
    /// -(1/N) * sum_i a[i, labels[i]], scalar result (cross-entropy picker).
    PickNegMean(NodeId, Vec<usize>),
    /// Identity forward; backward multiplies the incoming gradient by -lambda.
    GradReverse(NodeId, f64),
}

struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
}

/// A single forward pass recorded against one parameter snapshot.
pub struct Tape<'p> {
    params: &'p ParamVector,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamVector) -> Tape<'p> {
        Tape {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &ParamVector {
        self.params
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Vec<f64>) -> NodeId {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            op,
            rows,
            cols,
            value,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let n = &self.nodes[id.0];
        assert!(
            n.rows == 1 && n.cols == 1,
            "scalar() on a {}x{} node",
            n.rows,
            n.cols
        );
        n.value[0]
    }

    /// The named parameter range as a rows x cols leaf.
    pub fn param(&mut self, name: &str, rows: usize, cols: usize) -> NodeId {
        let (offset, len) = self
            .params
            .layout()
            .range(name)
            .unwrap_or_else(|| panic!("unknown parameter range {name:?}"));
        assert_eq!(
            len,
            rows * cols,
            "range {name:?} has {len} entries, requested {rows}x{cols}"
        );
        let value = self.params.values()[offset..offset + len].to_vec();
        self.push(Op::Param { offset }, rows, cols, value)
    }

    /// The whole parameter vector as a 1 x n leaf.
    pub fn param_all(&mut self) -> NodeId {
        let n = self.params.len();
        let value = self.params.values().to_vec();
        self.push(Op::Param { offset: 0 }, 1, n, value)
    }

    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> NodeId {
        assert_eq!(data.len(), rows * cols);
        self.push(Op::Const, rows, cols, data)
    }

    pub fn constant_matrix(&mut self, m: &Array2<f64>) -> NodeId {
        let (r, c) = (m.nrows(), m.ncols());
        let data: Vec<f64> = m.iter().copied().collect();
        self.push(Op::Const, r, c, data)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (r, c) = self.same_shape(a, b, "add");
        let v: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        self.push(Op::Add(a, b), r, c, v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (r, c) = self.same_shape(a, b, "sub");
        let v: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x - y)
            .collect();
        self.push(Op::Sub(a, b), r, c, v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (r, c) = self.same_shape(a, b, "mul");
        let v: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .collect();
        self.push(Op::Mul(a, b), r, c, v)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let (r, k) = self.shape(a);
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x * c).collect();
        self.push(Op::Scale(a, c), r, k, v)
    }

    /// Adds a 1 x m bias row to every row of an N x m matrix.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let (br, bc) = self.shape(bias);
        assert!(
            br == 1 && bc == c,
            "add_row: {r}x{c} with bias {br}x{bc}"
        );
        let mut v = self.nodes[a.0].value.clone();
        for i in 0..r {
            for j in 0..c {
                v[i * c + j] += self.nodes[bias.0].value[j];
            }
        }
        self.push(Op::AddRow(a, bias), r, c, v)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert_eq!(ac, br, "matmul: {ar}x{ac} by {br}x{bc}");
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let mut v = vec![0.0; ar * bc];
        for i in 0..ar {
            for k in 0..ac {
                let aik = av[i * ac + k];
                if aik == 0.0 {
                    continue;
                }
                for j in 0..bc {
                    v[i * bc + j] += aik * bv[k * bc + j];
                }
            }
        }
        self.push(Op::MatMul(a, b), ar, bc, v)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x.max(0.0)).collect();
        self.push(Op::Relu(a), r, c, v)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x.ln()).collect();
        self.push(Op::Log(a), r, c, v)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x.exp()).collect();
        self.push(Op::Exp(a), r, c, v)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let mut acc = 0.0;
        for x in &self.nodes[a.0].value {
            acc += x;
        }
        self.push(Op::Sum(a), 1, 1, vec![acc])
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.same_shape(a, b, "dot");
        let mut acc = 0.0;
        for (x, y) in self.nodes[a.0].value.iter().zip(&self.nodes[b.0].value) {
            acc += x * y;
        }
        self.push(Op::Dot(a, b), 1, 1, vec![acc])
    }

    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        assert!(r >= 1, "mean_rows on empty matrix");
        let av = &self.nodes[a.0].value;
        let mut v = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                v[j] += av[i * c + j];
            }
        }
        let inv = 1.0 / r as f64;
        for x in &mut v {
            *x *= inv;
        }
        self.push(Op::MeanRows(a), 1, c, v)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let v = softmax_values(&self.nodes[a.0].value, r, c, false);
        self.push(Op::SoftmaxRows(a), r, c, v)
    }

    pub fn log_softmax_rows(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let v = softmax_values(&self.nodes[a.0].value, r, c, true);
        self.push(Op::LogSoftmaxRows(a), r, c, v)
    }

    /// Cross-entropy picker: `-(1/N) * sum_i a[i, labels[i]]`.
    pub fn pick_neg_mean(&mut self, a: NodeId, labels: &[usize]) -> NodeId {
        let (r, c) = self.shape(a);
        assert_eq!(labels.len(), r, "pick_neg_mean: {} labels for {r} rows", labels.len());
        let av = &self.nodes[a.0].value;
        let mut acc = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            assert!(y < c, "label {y} out of range for {c} columns");
            acc += av[i * c + y];
        }
        let value = -acc / r as f64;
        self.push(Op::PickNegMean(a, labels.to_vec()), 1, 1, vec![value])
    }

    /// Gradient reversal: identity forward, backward scaled by -lambda.
    pub fn grad_reverse(&mut self, a: NodeId, lambda: f64) -> NodeId {
        let (r, c) = self.shape(a);
        let v = self.nodes[a.0].value.clone();
        self.push(Op::GradReverse(a, lambda), r, c, v)
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> (usize, usize) {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert!(
            ar == br && ac == bc,
            "{what}: shape mismatch {ar}x{ac} vs {br}x{bc}"
        );
        (ar, ac)
    }

    /// Reverse sweep from a scalar loss node; returns d loss / d params.
    pub fn backward(&self, loss: NodeId) -> Result<Gradient> {
        let n = &self.nodes[loss.0];
        assert!(
            n.rows == 1 && n.cols == 1,
            "backward from a {}x{} node; losses must be scalar",
            n.rows,
            n.cols
        );
        let mut grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.rows * n.cols])
            .collect();
        grads[loss.0][0] = 1.0;

        let mut out = vec![0.0; self.params.len()];

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if grads[idx].iter().all(|g| *g == 0.0) {
                // Nothing flowed here; skip. Param leaves still contribute zero.
                if !matches!(node.op, Op::Param { .. }) {
                    continue;
                }
            }
            match &node.op {
                Op::Param { offset } => {
                    let g = &grads[idx];
                    for (k, gv) in g.iter().enumerate() {
                        out[offset + k] += gv;
                    }
                }
                Op::Const => {}
                Op::Add(a, b) => {
                    let g = std::mem::take(&mut grads[idx]);
                    add_into(&mut grads[a.0], &g, 1.0);
                    add_into(&mut grads[b.0], &g, 1.0);
                }
                Op::Sub(a, b) => {
                    let g = std::mem::take(&mut grads[idx]);
                    add_into(&mut grads[a.0], &g, 1.0);
                    add_into(&mut grads[b.0], &g, -1.0);
                }
                Op::Mul(a, b) => {
                    let g = std::mem::take(&mut grads[idx]);
                    for (k, gv) in g.iter().enumerate() {
                        grads[a.0][k] += gv * self.nodes[b.0].value[k];
                    }
                    for (k, gv) in g.iter().enumerate() {
                        grads[b.0][k] += gv * self.nodes[a.0].value[k];
                    }
                }
                Op::Scale(a, c) => {
                    let g = std::mem::take(&mut grads[idx]);
                    add_into(&mut grads[a.0], &g, *c);
                }
                Op::AddRow(a, bias) => {
                    let g = std::mem::take(&mut grads[idx]);
                    let (r, c) = (node.rows, node.cols);
                    add_into(&mut grads[a.0], &g, 1.0);
                    for i in 0..r {
                        for j in 0..c {
                            grads[bias.0][j] += g[i * c + j];
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let g = std::mem::take(&mut grads[idx]);
                    let (ar, ac) = (self.nodes[a.0].rows, self.nodes[a.0].cols);
                    let bc = self.nodes[b.0].cols;
                    // dA += g . B^T
                    for i in 0..ar {
                        for k in 0..ac {
                            let mut acc = 0.0;
                            for j in 0..bc {
                                acc += g[i * bc + j] * self.nodes[b.0].value[k * bc + j];
                            }
                            grads[a.0][i * ac + k] += acc;
                        }
                    }
                    // dB += A^T . g
                    for k in 0..ac {
                        for j in 0..bc {
                            let mut acc = 0.0;
                            for i in 0..ar {
                                acc += self.nodes[a.0].value[i * ac + k] * g[i * bc + j];
                            }
                            grads[b.0][k * bc + j] += acc;
                        }
                    }
                }
                Op::Relu(a) => {
                    let g = std::mem::take(&mut grads[idx]);
                    for (k, gv) in g.iter().enumerate() {
                        if self.nodes[a.0].value[k] > 0.0 {
                            grads[a.0][k] += gv;
                        }
                    }
                }
                Op::Log(a) => {
                    let g = std::mem::take(&mut grads[idx]);
                    for (k, gv) in g.iter().enumerate() {
                        grads[a.0][k] += gv / self.nodes[a.0].value[k];
                    }
                }
                Op::Exp(a) => {
                    let g = std::mem::take(&mut grads[idx]);
                    for (k, gv) in g.iter().enumerate() {
                        grads[a.0][k] += gv * node.value[k];
                    }
                }
                Op::Sum(a) => {
                    let g = grads[idx][0];
                    for x in &mut grads[a.0] {
                        *x += g;
                    }
                }
                Op::Dot(a, b) => {
                    let g = grads[idx][0];
                    for (k, x) in self.nodes[b.0].value.iter().enumerate() {
                        grads[a.0][k] += g * x;
                    }
                    for (k, x) in self.nodes[a.0].value.iter().enumerate() {
                        grads[b.0][k] += g * x;
                    }
                }
                Op::MeanRows(a) => {
                    let g = std::mem::take(&mut grads[idx]);
                    let (r, c) = (self.nodes[a.0].rows, self.nodes[a.0].cols);
                    let inv = 1.0 / r as f64;
                    for i in 0..r {
                        for j in 0..c {
                            grads[a.0][i * c + j] += g[j] * inv;
                        }
                    }
                }
                Op::SoftmaxRows(a) => {
                    // dx = y * (dy - <dy, y>_row)
                    let g = std::mem::take(&mut grads[idx]);
                    let (r, c) = (node.rows, node.cols);
                    for i in 0..r {
                        let row = &node.value[i * c..(i + 1) * c];
                        let grow = &g[i * c..(i + 1) * c];
                        let mut inner = 0.0;
                        for j in 0..c {
                            inner += grow[j] * row[j];
                        }
                        for j in 0..c {
                            grads[a.0][i * c + j] += row[j] * (grow[j] - inner);
                        }
                    }
                }
                Op::LogSoftmaxRows(a) => {
                    // dx = dy - softmax(x) * sum_row(dy)
                    let g = std::mem::take(&mut grads[idx]);
                    let (r, c) = (node.rows, node.cols);
                    for i in 0..r {
                        let row = &node.value[i * c..(i + 1) * c];
                        let grow = &g[i * c..(i + 1) * c];
                        let mut gsum = 0.0;
                        for gj in grow {
                            gsum += gj;
                        }
                        for j in 0..c {
                            grads[a.0][i * c + j] += grow[j] - row[j].exp() * gsum;
                        }
                    }
                }
                Op::PickNegMean(a, labels) => {
                    let g = grads[idx][0];
                    let c = self.nodes[a.0].cols;
                    let inv = 1.0 / labels.len() as f64;
                    for (i, &y) in labels.iter().enumerate() {
                        grads[a.0][i * c + y] -= g * inv;
                    }
                }
                Op::GradReverse(a, lambda) => {
                    let g = std::mem::take(&mut grads[idx]);
                    add_into(&mut grads[a.0], &g, -lambda);
                }
            }
        }

        let grad = Gradient::new(self.params.layout().clone(), out)?;
        if !grad.is_finite() {
            return Err(Error::NonFiniteGradient {
                context: "tape backward".to_string(),
            });
        }
        Ok(grad)
    }
}

fn add_into(dst: &mut [f64], src: &[f64], alpha: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

fn softmax_values(x: &[f64], rows: usize, cols: usize, log: bool) -> Vec<f64> {
    let mut v = vec![0.0; rows * cols];
    for i in 0..rows {
        let row = &x[i * cols..(i + 1) * cols];
        let mut m = f64::NEG_INFINITY;
        for r in row {
            if *r > m {
                m = *r;
            }
        }
        let mut z = 0.0;
        for r in row {
            z += (r - m).exp();
        }
        let out = &mut v[i * cols..(i + 1) * cols];
        if log {
            let lz = z.ln();
            for (o, r) in out.iter_mut().zip(row) {
                *o = r - m - lz;
            }
        } else {
            for (o, r) in out.iter_mut().zip(row) {
                *o = (r - m).exp() / z;
            }
        }
    }
    v
}
