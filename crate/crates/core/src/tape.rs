//! Dynamic-tape reverse-mode automatic differentiation.
//!
//! A fresh tape is built on every forward pass: each primitive appends a
//! node holding its forward value, so node inputs always reference
//! earlier nodes and the graph is acyclic by construction. `backward`
//! runs one reverse sweep from a scalar output and accumulates the
//! gradient of every node, leaves included.
//!
//! The primitive set is deliberately small and auditable: elementwise
//! arithmetic, the four matrix products, row/scalar broadcasts (bias-add
//! and scalar-multiply only), reductions, a stable log-sum-exp, masked
//! row softmax, 1-D convolution and pairwise rotation.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

/// Attention mask: `true` marks an excluded (query, key) pair.
///
/// Rendered as the conventional 0/∞ matrix by [`Mask::to_matrix`], where
/// ∞ marks exclusion.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    n: usize,
    masked: Vec<bool>,
}

impl Mask {
    pub fn none(n: usize) -> Mask {
        Mask {
            n,
            masked: vec![false; n * n],
        }
    }

    /// Causal convention: entry (i, j) is masked iff j >= i, so position i
    /// attends to strictly earlier positions only.
    pub fn causal(n: usize) -> Mask {
        let mut m = Mask::none(n);
        for i in 0..n {
            for j in 0..n {
                if j >= i {
                    m.set(i, j, true);
                }
            }
        }
        m
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn is_masked(&self, i: usize, j: usize) -> bool {
        self.masked[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, masked: bool) {
        self.masked[i * self.n + j] = masked;
    }

    pub fn to_matrix(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| {
                (0..self.n)
                    .map(|j| if self.is_masked(i, j) { f64::INFINITY } else { 0.0 })
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// a*x + b with constant coefficients; only `a` matters on the way back.
    Affine { x: NodeId, a: f64 },
    AddScalar { x: NodeId, s: NodeId },
    MulScalar { x: NodeId, s: NodeId },
    DivScalar { x: NodeId, s: NodeId },
    Matvec { w: NodeId, x: NodeId },
    MatvecT { w: NodeId, x: NodeId },
    Matmul { a: NodeId, b: NodeId },
    MatmulNT { a: NodeId, b: NodeId },
    Transpose(NodeId),
    AddRow { x: NodeId, v: NodeId },
    SubRow { x: NodeId, v: NodeId },
    MulRow { x: NodeId, v: NodeId },
    DivRow { x: NodeId, v: NodeId },
    ColMean(NodeId),
    Row { x: NodeId, i: usize },
    StackRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    Concat(Vec<NodeId>),
    Index { x: NodeId, i: usize },
    Sum(NodeId),
    Mean(NodeId),
    Dot(NodeId, NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Sqrt(NodeId),
    LogSumExp(NodeId),
    /// The saved softmax output already has zeros at masked entries, so
    /// the backward rule needs no mask.
    MaskedSoftmaxRows { x: NodeId },
    RotatePairs { x: NodeId, angles: Vec<f64> },
    Conv1d { x: NodeId, f: NodeId },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradient of the swept scalar with respect to every node.
pub struct GradMap {
    grads: Vec<Option<Tensor>>,
}

impl GradMap {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// Leaves bound to named parameters, for writing gradients back.
    param_bindings: Vec<(NodeId, String)>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn scalar_value(&self, id: NodeId) -> Result<f64> {
        self.value(id).scalar_value()
    }

    pub fn param_bindings(&self) -> &[(NodeId, String)] {
        &self.param_bindings
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        id
    }

    fn push_checked(&mut self, op_name: &'static str, op: Op, shape: Vec<usize>, data: Vec<f64>) -> Result<NodeId> {
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("{op_name} output element {i}")));
        }
        Ok(self.push(op, Tensor::from_parts(shape, data)))
    }

    /// Leaf holding input data; its gradient is available after backward.
    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Leaf, t)
    }

    /// Leaf holding a value treated as constant (same mechanics as input;
    /// the name records intent).
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Leaf, t)
    }

    pub fn scalar(&mut self, v: f64) -> Result<NodeId> {
        Ok(self.input(Tensor::scalar(v)?))
    }

    /// Leaf bound to a named parameter; `write_grads` later adds its
    /// gradient to the store entry.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<NodeId> {
        let t = store.value(name)?.clone();
        let id = self.push(Op::Leaf, t);
        self.param_bindings.push((id, name.to_string()));
        Ok(id)
    }

    fn binary_same_shape(&mut self, name: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if !self.value(a).same_shape(self.value(b)) {
            return Err(Error::shape(
                name,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        self.push_checked("add", Op::Add(a, b), self.value(a).shape().to_vec(), data)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("sub", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        self.push_checked("sub", Op::Sub(a, b), self.value(a).shape().to_vec(), data)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        self.push_checked("mul", Op::Mul(a, b), self.value(a).shape().to_vec(), data)
    }

    /// a*x + b elementwise with constant a, b.
    pub fn affine(&mut self, x: NodeId, a: f64, b: f64) -> Result<NodeId> {
        let data = self.value(x).data().iter().map(|v| a * v + b).collect();
        let _ = b;
        self.push_checked("affine", Op::Affine { x, a }, self.value(x).shape().to_vec(), data)
    }

    pub fn neg(&mut self, x: NodeId) -> Result<NodeId> {
        self.affine(x, -1.0, 0.0)
    }

    pub fn add_scalar(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let sv = self.scalar_value(s)?;
        let data = self.value(x).data().iter().map(|v| v + sv).collect();
        self.push_checked("add_scalar", Op::AddScalar { x, s }, self.value(x).shape().to_vec(), data)
    }

    pub fn mul_scalar(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let sv = self.scalar_value(s)?;
        let data = self.value(x).data().iter().map(|v| v * sv).collect();
        self.push_checked("mul_scalar", Op::MulScalar { x, s }, self.value(x).shape().to_vec(), data)
    }

    pub fn div_scalar(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let sv = self.scalar_value(s)?;
        let data = self.value(x).data().iter().map(|v| v / sv).collect();
        self.push_checked("div_scalar", Op::DivScalar { x, s }, self.value(x).shape().to_vec(), data)
    }

    fn expect_rank(&self, name: &'static str, x: NodeId, rank: usize) -> Result<()> {
        if self.value(x).rank() != rank {
            return Err(Error::shape(name, format!("expected rank {rank}, got {:?}", self.value(x).shape())));
        }
        Ok(())
    }

    /// W x for W: (r, c), x: (c,).
    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        self.expect_rank("matvec", w, 2)?;
        self.expect_rank("matvec", x, 1)?;
        let (r, c) = (self.value(w).rows(), self.value(w).cols());
        if self.value(x).shape()[0] != c {
            return Err(Error::shape("matvec", format!("W {r}x{c} . x {:?}", self.value(x).shape())));
        }
        let mut data = vec![0.0; r];
        for i in 0..r {
            data[i] = crate::linalg::dot(self.value(w).row_slice(i), self.value(x).data());
        }
        self.push_checked("matvec", Op::Matvec { w, x }, vec![r], data)
    }

    /// Wᵀ x for W: (r, c), x: (r,).
    pub fn matvec_t(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        self.expect_rank("matvec_t", w, 2)?;
        self.expect_rank("matvec_t", x, 1)?;
        let (r, c) = (self.value(w).rows(), self.value(w).cols());
        if self.value(x).shape()[0] != r {
            return Err(Error::shape("matvec_t", format!("Wᵀ {c}x{r} . x {:?}", self.value(x).shape())));
        }
        let mut data = vec![0.0; c];
        for i in 0..r {
            let xi = self.value(x).data()[i];
            for j in 0..c {
                data[j] += self.value(w).at2(i, j) * xi;
            }
        }
        self.push_checked("matvec_t", Op::MatvecT { w, x }, vec![c], data)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.expect_rank("matmul", a, 2)?;
        self.expect_rank("matmul", b, 2)?;
        let (n, k) = (self.value(a).rows(), self.value(a).cols());
        let (k2, m) = (self.value(b).rows(), self.value(b).cols());
        if k != k2 {
            return Err(Error::shape("matmul", format!("{n}x{k} . {k2}x{m}")));
        }
        let mut data = vec![0.0; n * m];
        for i in 0..n {
            for l in 0..k {
                let ail = self.value(a).at2(i, l);
                for j in 0..m {
                    data[i * m + j] += ail * self.value(b).at2(l, j);
                }
            }
        }
        self.push_checked("matmul", Op::Matmul { a, b }, vec![n, m], data)
    }

    /// A Bᵀ.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.expect_rank("matmul_nt", a, 2)?;
        self.expect_rank("matmul_nt", b, 2)?;
        let (n, k) = (self.value(a).rows(), self.value(a).cols());
        let (m, k2) = (self.value(b).rows(), self.value(b).cols());
        if k != k2 {
            return Err(Error::shape("matmul_nt", format!("{n}x{k} . ({m}x{k2})ᵀ")));
        }
        let mut data = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                data[i * m + j] = crate::linalg::dot(self.value(a).row_slice(i), self.value(b).row_slice(j));
            }
        }
        self.push_checked("matmul_nt", Op::MatmulNT { a, b }, vec![n, m], data)
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        self.expect_rank("transpose", x, 2)?;
        let (r, c) = (self.value(x).rows(), self.value(x).cols());
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.value(x).at2(i, j);
            }
        }
        self.push_checked("transpose", Op::Transpose(x), vec![c, r], data)
    }

    fn row_broadcast(&mut self, name: &'static str, x: NodeId, v: NodeId) -> Result<(usize, usize)> {
        self.expect_rank(name, x, 2)?;
        self.expect_rank(name, v, 1)?;
        let (r, c) = (self.value(x).rows(), self.value(x).cols());
        if self.value(v).shape()[0] != c {
            return Err(Error::shape(name, format!("matrix {r}x{c}, row vector {:?}", self.value(v).shape())));
        }
        Ok((r, c))
    }

    pub fn add_row(&mut self, x: NodeId, v: NodeId) -> Result<NodeId> {
        let (r, c) = self.row_broadcast("add_row", x, v)?;
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(self.value(x).at2(i, j) + self.value(v).data()[j]);
            }
        }
        self.push_checked("add_row", Op::AddRow { x, v }, vec![r, c], data)
    }

    pub fn sub_row(&mut self, x: NodeId, v: NodeId) -> Result<NodeId> {
        let (r, c) = self.row_broadcast("sub_row", x, v)?;
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(self.value(x).at2(i, j) - self.value(v).data()[j]);
            }
        }
        self.push_checked("sub_row", Op::SubRow { x, v }, vec![r, c], data)
    }

    pub fn mul_row(&mut self, x: NodeId, v: NodeId) -> Result<NodeId> {
        let (r, c) = self.row_broadcast("mul_row", x, v)?;
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(self.value(x).at2(i, j) * self.value(v).data()[j]);
            }
        }
        self.push_checked("mul_row", Op::MulRow { x, v }, vec![r, c], data)
    }

    pub fn div_row(&mut self, x: NodeId, v: NodeId) -> Result<NodeId> {
        let (r, c) = self.row_broadcast("div_row", x, v)?;
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(self.value(x).at2(i, j) / self.value(v).data()[j]);
            }
        }
        self.push_checked("div_row", Op::DivRow { x, v }, vec![r, c], data)
    }

    /// Per-column mean of a matrix.
    pub fn col_mean(&mut self, x: NodeId) -> Result<NodeId> {
        self.expect_rank("col_mean", x, 2)?;
        let (r, c) = (self.value(x).rows(), self.value(x).cols());
        let mut data = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                data[j] += self.value(x).at2(i, j);
            }
        }
        data.iter_mut().for_each(|v| *v /= r as f64);
        self.push_checked("col_mean", Op::ColMean(x), vec![c], data)
    }

    pub fn row(&mut self, x: NodeId, i: usize) -> Result<NodeId> {
        self.expect_rank("row", x, 2)?;
        if i >= self.value(x).rows() {
            return Err(Error::shape("row", format!("row {i} of {}", self.value(x).rows())));
        }
        let data = self.value(x).row_slice(i).to_vec();
        let c = self.value(x).cols();
        self.push_checked("row", Op::Row { x, i }, vec![c], data)
    }

    pub fn stack_rows(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        if rows.is_empty() {
            return Err(Error::shape("stack_rows", "no rows"));
        }
        let c = self.value(rows[0]).numel();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            self.expect_rank("stack_rows", r, 1)?;
            if self.value(r).numel() != c {
                return Err(Error::shape("stack_rows", "row length mismatch"));
            }
            data.extend_from_slice(self.value(r).data());
        }
        self.push_checked("stack_rows", Op::StackRows(rows.to_vec()), vec![rows.len(), c], data)
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::shape("concat_cols", "no parts"));
        }
        let r = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            self.expect_rank("concat_cols", p, 2)?;
            if self.value(p).rows() != r {
                return Err(Error::shape("concat_cols", "row count mismatch"));
            }
            total += self.value(p).cols();
        }
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        self.push_checked("concat_cols", Op::ConcatCols(parts.to_vec()), vec![r, total], data)
    }

    /// Concatenate scalars and vectors into one vector.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "no parts"));
        }
        let mut data = Vec::new();
        for &p in parts {
            if self.value(p).rank() > 1 {
                return Err(Error::shape("concat", "parts must be scalars or vectors"));
            }
            data.extend_from_slice(self.value(p).data());
        }
        let n = data.len();
        self.push_checked("concat", Op::Concat(parts.to_vec()), vec![n], data)
    }

    /// Single element of a vector, as a scalar node.
    pub fn index(&mut self, x: NodeId, i: usize) -> Result<NodeId> {
        self.expect_rank("index", x, 1)?;
        if i >= self.value(x).numel() {
            return Err(Error::shape("index", format!("index {i} of {}", self.value(x).numel())));
        }
        let v = self.value(x).data()[i];
        self.push_checked("index", Op::Index { x, i }, vec![], vec![v])
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s: f64 = self.value(x).data().iter().sum();
        self.push_checked("sum", Op::Sum(x), vec![], vec![s])
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.value(x).numel() as f64;
        let s: f64 = self.value(x).data().iter().sum::<f64>() / n;
        self.push_checked("mean", Op::Mean(x), vec![], vec![s])
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("dot", a, b)?;
        let s = crate::linalg::dot(self.value(a).data(), self.value(b).data());
        self.push_checked("dot", Op::Dot(a, b), vec![], vec![s])
    }

    /// Squared Euclidean norm as a scalar node.
    pub fn norm_sq(&mut self, x: NodeId) -> Result<NodeId> {
        self.dot(x, x)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let data = self.value(x).data().iter().map(|v| v.max(0.0)).collect();
        self.push_checked("relu", Op::Relu(x), self.value(x).shape().to_vec(), data)
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let data = self.value(x).data().iter().map(|v| v.tanh()).collect();
        self.push_checked("tanh", Op::Tanh(x), self.value(x).shape().to_vec(), data)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let data = self.value(x).data().iter().map(|&v| stable_sigmoid(v)).collect();
        self.push_checked("sigmoid", Op::Sigmoid(x), self.value(x).shape().to_vec(), data)
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        let data = self.value(x).data().iter().map(|v| v.exp()).collect();
        self.push_checked("exp", Op::Exp(x), self.value(x).shape().to_vec(), data)
    }

    pub fn sqrt(&mut self, x: NodeId) -> Result<NodeId> {
        let data = self.value(x).data().iter().map(|v| v.sqrt()).collect();
        self.push_checked("sqrt", Op::Sqrt(x), self.value(x).shape().to_vec(), data)
    }

    /// log Σ exp(x_i) over a vector, computed with max subtraction.
    pub fn log_sum_exp(&mut self, x: NodeId) -> Result<NodeId> {
        self.expect_rank("log_sum_exp", x, 1)?;
        let v = log_sum_exp(self.value(x).data());
        self.push_checked("log_sum_exp", Op::LogSumExp(x), vec![], vec![v])
    }

    /// Row-wise softmax over unmasked entries; masked entries get
    /// probability exactly zero. Errors if any row is fully masked.
    pub fn masked_softmax_rows(&mut self, x: NodeId, mask: &Mask) -> Result<NodeId> {
        self.expect_rank("masked_softmax_rows", x, 2)?;
        let (r, c) = (self.value(x).rows(), self.value(x).cols());
        if r != c || r != mask.size() {
            return Err(Error::shape(
                "masked_softmax_rows",
                format!("scores {r}x{c}, mask {0}x{0}", mask.size()),
            ));
        }
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let mut mx = f64::NEG_INFINITY;
            for j in 0..c {
                if !mask.is_masked(i, j) {
                    mx = mx.max(self.value(x).at2(i, j));
                }
            }
            if mx == f64::NEG_INFINITY {
                return Err(Error::FullyMaskedRow { row: i });
            }
            let mut denom = 0.0;
            for j in 0..c {
                if !mask.is_masked(i, j) {
                    let e = (self.value(x).at2(i, j) - mx).exp();
                    data[i * c + j] = e;
                    denom += e;
                }
            }
            for j in 0..c {
                data[i * c + j] /= denom;
            }
        }
        self.push_checked(
            "masked_softmax_rows",
            Op::MaskedSoftmaxRows { x },
            vec![r, c],
            data,
        )
    }

    /// Rotate consecutive element pairs by the given constant angles
    /// (one per pair). Vector length must be even.
    pub fn rotate_pairs(&mut self, x: NodeId, angles: &[f64]) -> Result<NodeId> {
        self.expect_rank("rotate_pairs", x, 1)?;
        let n = self.value(x).numel();
        if n % 2 != 0 || angles.len() != n / 2 {
            return Err(Error::shape("rotate_pairs", format!("len {n}, {} angles", angles.len())));
        }
        let mut data = vec![0.0; n];
        for (k, &th) in angles.iter().enumerate() {
            let (c, s) = (th.cos(), th.sin());
            let a = self.value(x).data()[2 * k];
            let b = self.value(x).data()[2 * k + 1];
            data[2 * k] = c * a - s * b;
            data[2 * k + 1] = s * a + c * b;
        }
        self.push_checked(
            "rotate_pairs",
            Op::RotatePairs { x, angles: angles.to_vec() },
            vec![n],
            data,
        )
    }

    /// 1-D correlation with zero padding and same-length output.
    /// x: (T, d) sequence, f: (d, K, 2M+1) filter bank; output (T, K).
    pub fn conv1d(&mut self, x: NodeId, f: NodeId) -> Result<NodeId> {
        self.expect_rank("conv1d", x, 2)?;
        if self.value(f).rank() != 3 {
            return Err(Error::shape("conv1d", format!("filters rank {:?}", self.value(f).shape())));
        }
        let (t_len, d) = (self.value(x).rows(), self.value(x).cols());
        let fs = self.value(f).shape().to_vec();
        let (fd, k, w) = (fs[0], fs[1], fs[2]);
        if fd != d {
            return Err(Error::shape("conv1d", format!("input channels {d}, filter channels {fd}")));
        }
        if w % 2 == 0 {
            return Err(Error::shape("conv1d", format!("filter length {w} must be odd")));
        }
        let m = (w - 1) / 2;
        let mut data = vec![0.0; t_len * k];
        for t in 0..t_len {
            for kk in 0..k {
                let mut acc = 0.0;
                for off in 0..w {
                    let src = t as isize + off as isize - m as isize;
                    if src < 0 || src >= t_len as isize {
                        continue;
                    }
                    for ch in 0..d {
                        acc += self.value(x).at2(src as usize, ch) * self.value(f).at3(ch, kk, off);
                    }
                }
                data[t * k + kk] = acc;
            }
        }
        self.push_checked("conv1d", Op::Conv1d { x, f }, vec![t_len, k], data)
    }

    /// Reverse sweep from a scalar output. Returns the gradient of the
    /// output with respect to every node (leaves included).
    pub fn backward(&self, output: NodeId) -> Result<GradMap> {
        if !self.value(output).is_scalar() && self.value(output).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                self.value(output).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::from_parts(
            self.value(output).shape().to_vec(),
            vec![1.0],
        ));
        for id in (0..=output.0).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(GradMap { grads })
    }

    fn add_grad(&self, grads: &mut [Option<Tensor>], target: NodeId, delta: Tensor) {
        match &mut grads[target.0] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                    *e += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn zeros_like(&self, id: NodeId) -> Tensor {
        Tensor::from_parts(self.value(id).shape().to_vec(), vec![0.0; self.value(id).numel()])
    }

    #[allow(clippy::too_many_lines)]
    fn accumulate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let gd = g.data();
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.add_grad(grads, *a, g.clone());
                self.add_grad(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.add_grad(grads, *a, g.clone());
                let mut d = self.zeros_like(*b);
                for (o, &gi) in d.data_mut().iter_mut().zip(gd) {
                    *o = -gi;
                }
                self.add_grad(grads, *b, d);
            }
            Op::Mul(a, b) => {
                let mut da = self.zeros_like(*a);
                for ((o, &gi), &bv) in da.data_mut().iter_mut().zip(gd).zip(self.value(*b).data()) {
                    *o = gi * bv;
                }
                self.add_grad(grads, *a, da);
                let mut db = self.zeros_like(*b);
                for ((o, &gi), &av) in db.data_mut().iter_mut().zip(gd).zip(self.value(*a).data()) {
                    *o = gi * av;
                }
                self.add_grad(grads, *b, db);
            }
            Op::Affine { x, a, .. } => {
                let mut d = self.zeros_like(*x);
                for (o, &gi) in d.data_mut().iter_mut().zip(gd) {
                    *o = a * gi;
                }
                self.add_grad(grads, *x, d);
            }
            Op::AddScalar { x, s } => {
                self.add_grad(grads, *x, g.clone());
                let total: f64 = gd.iter().sum();
                self.add_grad(grads, *s, Tensor::from_parts(vec![], vec![total]));
            }
            Op::MulScalar { x, s } => {
                let sv = self.value(*s).data()[0];
                let mut dx = self.zeros_like(*x);
                for (o, &gi) in dx.data_mut().iter_mut().zip(gd) {
                    *o = sv * gi;
                }
                self.add_grad(grads, *x, dx);
                let ds: f64 = gd.iter().zip(self.value(*x).data()).map(|(&gi, &xv)| gi * xv).sum();
                self.add_grad(grads, *s, Tensor::from_parts(vec![], vec![ds]));
            }
            Op::DivScalar { x, s } => {
                let sv = self.value(*s).data()[0];
                let mut dx = self.zeros_like(*x);
                for (o, &gi) in dx.data_mut().iter_mut().zip(gd) {
                    *o = gi / sv;
                }
                self.add_grad(grads, *x, dx);
                let ds: f64 = gd
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&gi, &xv)| -gi * xv / (sv * sv))
                    .sum();
                self.add_grad(grads, *s, Tensor::from_parts(vec![], vec![ds]));
            }
            Op::Matvec { w, x } => {
                let (r, c) = (self.value(*w).rows(), self.value(*w).cols());
                let mut dw = self.zeros_like(*w);
                for i in 0..r {
                    for j in 0..c {
                        dw.data_mut()[i * c + j] = gd[i] * self.value(*x).data()[j];
                    }
                }
                self.add_grad(grads, *w, dw);
                let mut dx = self.zeros_like(*x);
                for i in 0..r {
                    for j in 0..c {
                        dx.data_mut()[j] += self.value(*w).at2(i, j) * gd[i];
                    }
                }
                self.add_grad(grads, *x, dx);
            }
            Op::MatvecT { w, x } => {
                let (r, c) = (self.value(*w).rows(), self.value(*w).cols());
                let mut dw = self.zeros_like(*w);
                for i in 0..r {
                    for j in 0..c {
                        dw.data_mut()[i * c + j] = self.value(*x).data()[i] * gd[j];
                    }
                }
                self.add_grad(grads, *w, dw);
                let mut dx = self.zeros_like(*x);
                for i in 0..r {
                    for j in 0..c {
                        dx.data_mut()[i] += self.value(*w).at2(i, j) * gd[j];
                    }
                }
                self.add_grad(grads, *x, dx);
            }
            Op::Matmul { a, b } => {
                let (n, k) = (self.value(*a).rows(), self.value(*a).cols());
                let m = self.value(*b).cols();
                let mut da = self.zeros_like(*a);
                for i in 0..n {
                    for l in 0..k {
                        let mut s = 0.0;
                        for j in 0..m {
                            s += gd[i * m + j] * self.value(*b).at2(l, j);
                        }
                        da.data_mut()[i * k + l] = s;
                    }
                }
                self.add_grad(grads, *a, da);
                let mut db = self.zeros_like(*b);
                for l in 0..k {
                    for j in 0..m {
                        let mut s = 0.0;
                        for i in 0..n {
                            s += self.value(*a).at2(i, l) * gd[i * m + j];
                        }
                        db.data_mut()[l * m + j] = s;
                    }
                }
                self.add_grad(grads, *b, db);
            }
            Op::MatmulNT { a, b } => {
                // Y = A Bᵀ: dA = G B, dB = Gᵀ A.
                let (n, k) = (self.value(*a).rows(), self.value(*a).cols());
                let m = self.value(*b).rows();
                let mut da = self.zeros_like(*a);
                for i in 0..n {
                    for l in 0..k {
                        let mut s = 0.0;
                        for j in 0..m {
                            s += gd[i * m + j] * self.value(*b).at2(j, l);
                        }
                        da.data_mut()[i * k + l] = s;
                    }
                }
                self.add_grad(grads, *a, da);
                let mut db = self.zeros_like(*b);
                for j in 0..m {
                    for l in 0..k {
                        let mut s = 0.0;
                        for i in 0..n {
                            s += gd[i * m + j] * self.value(*a).at2(i, l);
                        }
                        db.data_mut()[j * k + l] = s;
                    }
                }
                self.add_grad(grads, *b, db);
            }
            Op::Transpose(x) => {
                let (r, c) = (self.value(*x).rows(), self.value(*x).cols());
                let mut dx = self.zeros_like(*x);
                for i in 0..r {
                    for j in 0..c {
                        dx.data_mut()[i * c + j] = gd[j * r + i];
                    }
                }
                self.add_grad(grads, *x, dx);
            }
            Op::AddRow { x, v } | Op::SubRow { x, v } => {
                let sign = if matches!(self.nodes[id].op, Op::AddRow { .. }) {
                    1.0
                } else {
                    -1.0
                };
                self.add_grad(grads, *x, g.clone());
                let (r, c) = (self.value(*x).rows(), self.value(*x).cols());
                let mut dv = self.zeros_like(*v);
                for i in 0..r {
                    for j in 0..c {
                        dv.data_mut()[j] += sign * gd[i * c + j];
                    }
                }
                self.add_grad(grads, *v, dv);
            }
            Op::MulRow { x, v } => {
                let (r, c) = (self.value(*x).rows(), self.value(*x).cols());
                let mut dx = self.zeros_like(*x);
                let mut dv = self.zeros_like(*v);
                for i in 0..r {
                    for j in 0..c {
                        dx.data_mut()[i * c + j] = gd[i * c + j] * self.value(*v).data()[j];
                        dv.data_mut()[j] += gd[i * c + j] * self.value(*x).at2(i, j);
                    }
                }
                self.add_grad(grads, *x, dx);
                self.add_grad(grads, *v, dv);
            }
            Op::DivRow { x, v } => {
                let (r, c) = (self.value(*x).rows(), self.value(*x).cols());
                let mut dx = self.zeros_like(*x);
                let mut dv = self.zeros_like(*v);
                for i in 0..r {
                    for j in 0..c {
                        let vj = self.value(*v).data()[j];
                        dx.data_mut()[i * c + j] = gd[i * c + j] / vj;
                        dv.data_mut()[j] -= gd[i * c + j] * self.value(*x).at2(i, j) / (vj * vj);
                    }
                }
                self.add_grad(grads, *x, dx);
                self.add_grad(grads, *v, dv);
            }
            Op::ColMean(x) => {
                let (r, c) = (self.value(*x).rows(), self.value(*x).cols());
                let mut dx = self.zeros_like(*x);
                for i in 0..r {
                    for j in 0..c {
                        dx.data_mut()[i * c + j] = gd[j] / r as f64;
                    }
                }
                self.add_grad(grads, *x, dx);
            }
            Op::Row { x, i } => {
                let c = self.value(*x).cols();
                let mut dx = self.zeros_like(*x);
                dx.data_mut()[i * c..(i + 1) * c].copy_from_slice(gd);
                self.add_grad(grads, *x, dx);
            }
            Op::StackRows(rows) => {
                let c = self.value(rows[0]).numel();
                for (k, &r) in rows.iter().enumerate() {
                    let d = Tensor::from_parts(vec![c], gd[k * c..(k + 1) * c].to_vec());
                    self.add_grad(grads, r, d);
                }
            }
            Op::ConcatCols(parts) => {
                let r = self.value(parts[0]).rows();
                let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    let mut dp = self.zeros_like(p);
                    for i in 0..r {
                        for j in 0..pc {
                            dp.data_mut()[i * pc + j] = gd[i * total + offset + j];
                        }
                    }
                    self.add_grad(grads, p, dp);
                    offset += pc;
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    let d = Tensor::from_parts(self.value(p).shape().to_vec(), gd[offset..offset + n].to_vec());
                    self.add_grad(grads, p, d);
                    offset += n;
                }
            }
            Op::Index { x, i } => {
                let mut dx = self.zeros_like(*x);
                dx.data_mut()[*i] = gd[0];
                self.add_grad(grads, *x, dx);
            }
            Op::Sum(x) => {
                let mut dx = self.zeros_like(*x);
                dx.data_mut().iter_mut().for_each(|o| *o = gd[0]);
                self.add_grad(grads, *x, dx);
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel() as f64;
                let mut dx = self.zeros_like(*x);
                dx.data_mut().iter_mut().for_each(|o| *o = gd[0] / n);
                self.add_grad(grads, *x, dx);
            }
            Op::Dot(a, b) => {
                let mut da = self.zeros_like(*a);
                for (o, &bv) in da.data_mut().iter_mut().zip(self.value(*b).data()) {
                    *o = gd[0] * bv;
                }
                self.add_grad(grads, *a, da);
                let mut db = self.zeros_like(*b);
                for (o, &av) in db.data_mut().iter_mut().zip(self.value(*a).data()) {
                    *o = gd[0] * av;
                }
                self.add_grad(grads, *b, db);
            }
            Op::Relu(x) => {
                let mut dx = self.zeros_like(*x);
                for ((o, &gi), &xv) in dx.data_mut().iter_mut().zip(gd).zip(self.value(*x).data()) {
                    *o = if xv > 0.0 { gi } else { 0.0 };
                }
                self.add_grad(grads, *x, dx);
            }
            Op::Tanh(x) => {
                let out = self.value(NodeId(id)).data();
                let mut dx = self.zeros_like(*x);
                for ((o, &gi), &y) in dx.data_mut().iter_mut().zip(gd).zip(out) {
                    *o = gi * (1.0 - y * y);
                }
                self.add_grad(grads, *x, dx);
            }
            Op::Sigmoid(x) => {
                let out = self.value(NodeId(id)).data();
                let mut dx = self.zeros_like(*x);
                for ((o, &gi), &y) in dx.data_mut().iter_mut().zip(gd).zip(out) {
                    *o = gi * y * (1.0 - y);
                }
                self.add_grad(grads, *x, dx);
            }
            Op::Exp(x) => {
                let out = self.value(NodeId(id)).data();
                let mut dx = self.zeros_like(*x);
                for ((o, &gi), &y) in dx.data_mut().iter_mut().zip(gd).zip(out) {
                    *o = gi * y;
                }
                self.add_grad(grads, *x, dx);
            }
            Op::Sqrt(x) => {
                let out = self.value(NodeId(id)).data();
                let mut dx = self.zeros_like(*x);
                for ((o, &gi), &y) in dx.data_mut().iter_mut().zip(gd).zip(out) {
                    *o = gi / (2.0 * y);
                }
                self.add_grad(grads, *x, dx);
            }
            Op::LogSumExp(x) => {
                // d lse / dx_i = softmax(x)_i = exp(x_i - lse).
                let lse = self.value(NodeId(id)).data()[0];
                let mut dx = self.zeros_like(*x);
                for (o, &xv) in dx.data_mut().iter_mut().zip(self.value(*x).data()) {
                    *o = gd[0] * (xv - lse).exp();
                }
                self.add_grad(grads, *x, dx);
            }
            Op::MaskedSoftmaxRows { x } => {
                let p = self.value(NodeId(id));
                let (r, c) = (p.rows(), p.cols());
                let mut dx = self.zeros_like(*x);
                for i in 0..r {
                    let mut inner = 0.0;
                    for k in 0..c {
                        inner += gd[i * c + k] * p.at2(i, k);
                    }
                    for j in 0..c {
                        dx.data_mut()[i * c + j] = p.at2(i, j) * (gd[i * c + j] - inner);
                    }
                }
                self.add_grad(grads, *x, dx);
            }
            Op::RotatePairs { x, angles } => {
                // Inverse rotation of the upstream gradient.
                let mut dx = self.zeros_like(*x);
                for (k, &th) in angles.iter().enumerate() {
                    let (c, s) = (th.cos(), th.sin());
                    let ga = gd[2 * k];
                    let gb = gd[2 * k + 1];
                    dx.data_mut()[2 * k] = c * ga + s * gb;
                    dx.data_mut()[2 * k + 1] = -s * ga + c * gb;
                }
                self.add_grad(grads, *x, dx);
            }
            Op::Conv1d { x, f } => {
                let (t_len, d) = (self.value(*x).rows(), self.value(*x).cols());
                let fs = self.value(*f).shape();
                let (k, w) = (fs[1], fs[2]);
                let m = (w - 1) / 2;
                let mut dx = self.zeros_like(*x);
                let mut df = self.zeros_like(*f);
                for t in 0..t_len {
                    for kk in 0..k {
                        let go = gd[t * k + kk];
                        if go == 0.0 {
                            continue;
                        }
                        for off in 0..w {
                            let src = t as isize + off as isize - m as isize;
                            if src < 0 || src >= t_len as isize {
                                continue;
                            }
                            let src = src as usize;
                            for ch in 0..d {
                                dx.data_mut()[src * d + ch] += go * self.value(*f).at3(ch, kk, off);
                                df.data_mut()[(ch * k + kk) * w + off] += go * self.value(*x).at2(src, ch);
                            }
                        }
                    }
                }
                self.add_grad(grads, *x, dx);
                self.add_grad(grads, *f, df);
            }
        }
        Ok(())
    }

    /// Add the parameter-leaf gradients from a backward sweep into the
    /// store's gradient slots.
    pub fn write_grads(&self, grads: &GradMap, store: &mut ParamStore) -> Result<()> {
        for (id, name) in &self.param_bindings {
            if let Some(g) = grads.get(*id) {
                store.add_grad(name, g)?;
            }
        }
        Ok(())
    }
}

pub(crate) fn stable_sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// Stable log Σ exp over a slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let mx = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    mx + xs.iter().map(|v| (v - mx).exp()).sum::<f64>().ln()
}

/// Evaluate a tape-building program against a parameter store, returning
/// the output value together with the tape and output node for replay
/// and backward sweeps.
pub fn forward<F>(f: F, store: &ParamStore) -> Result<(Tensor, Tape, NodeId)>
where
    F: FnOnce(&mut Tape, &ParamStore) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    Ok((tape.value(out).clone(), tape, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn identity_program_returns_input() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::vector(vec![1.0, 2.0]).unwrap());
        assert_eq!(tape.value(x).data(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_weights_relu_gives_zero() {
        // σ(Uᵀx + c) with U = 0, c = 0.
        let mut tape = Tape::new();
        let u = tape.input(Tensor::matrix(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap());
        let x = tape.input(Tensor::vector(vec![1.0, -2.0]).unwrap());
        let c = tape.input(Tensor::vector(vec![0.0, 0.0]).unwrap());
        let pre = tape.matvec_t(u, x).unwrap();
        let pre = tape.add(pre, c).unwrap();
        let h = tape.relu(pre).unwrap();
        assert_eq!(tape.value(h).data(), &[0.0, 0.0]);
    }

    #[test]
    fn identity_derivative_is_one() {
        let mut tape = Tape::new();
        let x = tape.scalar(3.0).unwrap();
        let grads = tape.backward(x).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0]);
    }

    #[test]
    fn product_rule() {
        let mut tape = Tape::new();
        let x = tape.scalar(2.0).unwrap();
        let y = tape.scalar(3.0).unwrap();
        let z = tape.mul(x, y).unwrap();
        let grads = tape.backward(z).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[3.0]);
        assert_eq!(grads.get(y).unwrap().data(), &[2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::vector(vec![1.0, 2.0]).unwrap());
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn shape_mismatch_names_offending_op() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let b = tape.input(Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap());
        match tape.add(a, b) {
            Err(Error::ShapeMismatch { op, .. }) => assert_eq!(op, "add"),
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn masked_softmax_rows_sum_to_one_and_error_on_full_mask() {
        let mut tape = Tape::new();
        let s = tape.input(Tensor::matrix(&[vec![0.3, -1.0], vec![2.0, 0.5]]).unwrap());
        let mut mask = Mask::none(2);
        mask.set(0, 1, true);
        let p = tape.masked_softmax_rows(s, &mask).unwrap();
        assert_eq!(tape.value(p).at2(0, 0), 1.0);
        assert_eq!(tape.value(p).at2(0, 1), 0.0);
        let row1: f64 = tape.value(p).row_slice(1).iter().sum();
        assert!((row1 - 1.0).abs() < 1e-12);

        let mut full = Mask::none(2);
        full.set(0, 0, true);
        full.set(0, 1, true);
        let mut tape = Tape::new();
        let s = tape.input(Tensor::matrix(&[vec![0.3, -1.0], vec![2.0, 0.5]]).unwrap());
        assert!(matches!(
            tape.masked_softmax_rows(s, &full),
            Err(Error::FullyMaskedRow { row: 0 })
        ));
    }

    #[test]
    fn log_sum_exp_is_stable() {
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2.0_f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn overflow_is_reported_not_propagated() {
        let mut tape = Tape::new();
        let x = tape.scalar(1000.0).unwrap();
        assert!(matches!(tape.exp(x), Err(Error::NonFinite { .. })));
    }
}
