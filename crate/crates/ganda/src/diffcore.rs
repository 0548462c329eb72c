//! Reverse-mode differentiable arrays and a momentum SGD optimizer.
//!
//! The graph is define-by-run: every forward op allocates a fresh node that
//! records its parents and enough state to push gradients backward. Nodes are
//! reference-counted, so dropping the loss root frees the whole graph while
//! leaf parameters (which hold no parents) survive across steps.
//!
//! All arithmetic is f64. Any op that produces a NaN or infinity returns an
//! error instead of propagating the poison.

use std::cell::RefCell;
use std::collections::HashSet;
use std::rc::Rc;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("{op}: shape mismatch: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: produced non-finite values")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("backward already ran on this root; rebuild the graph first")]
    DoubleBackward,
    #[error("parameter is missing its gradient (no backward pass reached it)")]
    MissingGrad,
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}

pub type Result<T> = std::result::Result<T, DiffError>;

/// Operation recorded on a node, holding whatever the backward pass needs.
enum Op {
    Leaf,
    MatMul,
    Add,
    Sub,
    /// Row-broadcast add: (n x d) + (d).
    AddRow,
    MulScalar(f64),
    Relu,
    /// Row-wise softmax over the last axis.
    Softmax,
    /// Row-wise log-softmax over the last axis.
    LogSoftmax,
    Mean,
    SumSquares,
    /// Column-wise concatenation of two matrices with equal row counts.
    ConcatCols,
    /// Per-row flattened outer product: (n x d) ⊗ (n x c) -> n x (d*c).
    OuterRows,
    /// Identity forward, gradient scaled by -lambda backward.
    GradReverse(f64),
    /// Negative log-likelihood from log-probabilities, averaged over rows.
    Nll { labels: Vec<usize> },
    /// Binary cross-entropy from logits against fixed 0/1 targets, averaged.
    BceWithLogits { targets: Vec<f64> },
}

struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
    parents: Vec<DiffArray>,
    backward_done: bool,
}

/// Dense real array participating in reverse-mode differentiation.
#[derive(Clone)]
pub struct DiffArray(Rc<RefCell<Node>>);

impl std::fmt::Debug for DiffArray {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let n = self.0.borrow();
        f.debug_struct("DiffArray")
            .field("shape", &n.shape)
            .field("requires_grad", &n.requires_grad)
            .finish_non_exhaustive()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn all_finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}

impl DiffArray {
    fn new_node(
        op_name: &'static str,
        shape: Vec<usize>,
        values: Vec<f64>,
        requires_grad: bool,
        op: Op,
        parents: Vec<DiffArray>,
    ) -> Result<Self> {
        if !all_finite(&values) {
            return Err(DiffError::NonFinite { op: op_name });
        }
        debug_assert_eq!(numel(&shape), values.len());
        Ok(DiffArray(Rc::new(RefCell::new(Node {
            shape,
            values,
            grad: None,
            requires_grad,
            op,
            parents,
            backward_done: false,
        }))))
    }

    /// Leaf that receives gradients (a trainable parameter).
    pub fn param(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if numel(&shape) != values.len() {
            return Err(DiffError::Invalid {
                op: "param",
                msg: format!("shape {:?} needs {} values, got {}", shape, numel(&shape), values.len()),
            });
        }
        Self::new_node("param", shape, values, true, Op::Leaf, vec![])
    }

    /// Leaf that does not receive gradients (inputs, fixed targets).
    pub fn constant(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if numel(&shape) != values.len() {
            return Err(DiffError::Invalid {
                op: "constant",
                msg: format!("shape {:?} needs {} values, got {}", shape, numel(&shape), values.len()),
            });
        }
        Self::new_node("constant", shape, values, false, Op::Leaf, vec![])
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.borrow().shape.clone()
    }

    pub fn values(&self) -> Vec<f64> {
        self.0.borrow().values.clone()
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.borrow().grad.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.borrow().requires_grad
    }

    /// Value of a scalar (shape [] or [1]) node.
    pub fn scalar(&self) -> f64 {
        let n = self.0.borrow();
        debug_assert!(n.values.len() == 1, "scalar() on shape {:?}", n.shape);
        n.values[0]
    }

    pub fn clear_grad(&self) {
        self.0.borrow_mut().grad = None;
    }

    /// Overwrite leaf values in place (optimizer update path).
    fn set_values(&self, values: Vec<f64>) {
        self.0.borrow_mut().values = values;
    }

    /// Replace leaf values, e.g. when loading saved parameters. Clears any
    /// stale gradient.
    pub fn load_values(&self, values: Vec<f64>) -> Result<()> {
        if values.len() != self.0.borrow().values.len() {
            return Err(DiffError::Invalid {
                op: "load_values",
                msg: format!("expected {} values, got {}", self.0.borrow().values.len(), values.len()),
            });
        }
        if !all_finite(&values) {
            return Err(DiffError::NonFinite { op: "load_values" });
        }
        let mut n = self.0.borrow_mut();
        n.values = values;
        n.grad = None;
        Ok(())
    }

    fn child_requires(parents: &[&DiffArray]) -> bool {
        parents.iter().any(|p| p.0.borrow().requires_grad)
    }

    // ----- forward ops -----

    pub fn matmul(&self, rhs: &DiffArray) -> Result<DiffArray> {
        let (ls, rs) = (self.shape(), rhs.shape());
        if ls.len() != 2 || rs.len() != 2 || ls[1] != rs[0] {
            return Err(DiffError::ShapeMismatch { op: "matmul", lhs: ls, rhs: rs });
        }
        let (n, k, m) = (ls[0], ls[1], rs[1]);
        let a = self.0.borrow();
        let b = rhs.0.borrow();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for p in 0..k {
                let av = a.values[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &b.values[p * m..(p + 1) * m];
                let orow = &mut out[i * m..(i + 1) * m];
                for j in 0..m {
                    orow[j] += av * brow[j];
                }
            }
        }
        drop(a);
        drop(b);
        let rg = Self::child_requires(&[self, rhs]);
        Self::new_node("matmul", vec![n, m], out, rg, Op::MatMul, vec![self.clone(), rhs.clone()])
    }

    pub fn add(&self, rhs: &DiffArray) -> Result<DiffArray> {
        let (ls, rs) = (self.shape(), rhs.shape());
        if ls != rs {
            return Err(DiffError::ShapeMismatch { op: "add", lhs: ls, rhs: rs });
        }
        let out: Vec<f64> = self
            .0
            .borrow()
            .values
            .iter()
            .zip(rhs.0.borrow().values.iter())
            .map(|(a, b)| a + b)
            .collect();
        let rg = Self::child_requires(&[self, rhs]);
        Self::new_node("add", ls, out, rg, Op::Add, vec![self.clone(), rhs.clone()])
    }

    pub fn sub(&self, rhs: &DiffArray) -> Result<DiffArray> {
        let (ls, rs) = (self.shape(), rhs.shape());
        if ls != rs {
            return Err(DiffError::ShapeMismatch { op: "sub", lhs: ls, rhs: rs });
        }
        let out: Vec<f64> = self
            .0
            .borrow()
            .values
            .iter()
            .zip(rhs.0.borrow().values.iter())
            .map(|(a, b)| a - b)
            .collect();
        let rg = Self::child_requires(&[self, rhs]);
        Self::new_node("sub", ls, out, rg, Op::Sub, vec![self.clone(), rhs.clone()])
    }

    /// Add a length-d bias row to every row of an n x d matrix.
    pub fn add_row(&self, bias: &DiffArray) -> Result<DiffArray> {
        let (ls, bs) = (self.shape(), bias.shape());
        if ls.len() != 2 || bs != vec![ls[1]] {
            return Err(DiffError::ShapeMismatch { op: "add_row", lhs: ls, rhs: bs });
        }
        let (n, d) = (ls[0], ls[1]);
        let a = self.0.borrow();
        let b = bias.0.borrow();
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..d {
                out[i * d + j] = a.values[i * d + j] + b.values[j];
            }
        }
        drop(a);
        drop(b);
        let rg = Self::child_requires(&[self, bias]);
        Self::new_node("add_row", ls, out, rg, Op::AddRow, vec![self.clone(), bias.clone()])
    }

    pub fn mul_scalar(&self, s: f64) -> Result<DiffArray> {
        let out: Vec<f64> = self.0.borrow().values.iter().map(|v| v * s).collect();
        let rg = self.requires_grad();
        Self::new_node("mul_scalar", self.shape(), out, rg, Op::MulScalar(s), vec![self.clone()])
    }

    pub fn relu(&self) -> Result<DiffArray> {
        let out: Vec<f64> = self.0.borrow().values.iter().map(|v| v.max(0.0)).collect();
        let rg = self.requires_grad();
        Self::new_node("relu", self.shape(), out, rg, Op::Relu, vec![self.clone()])
    }

    fn rowwise(&self, op_name: &'static str) -> Result<(usize, usize)> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(DiffError::Invalid {
                op: op_name,
                msg: format!("expected a 2-D array, got shape {:?}", s),
            });
        }
        Ok((s[0], s[1]))
    }

    pub fn softmax(&self) -> Result<DiffArray> {
        let (n, c) = self.rowwise("softmax")?;
        let a = self.0.borrow();
        let mut out = vec![0.0; n * c];
        for i in 0..n {
            let row = &a.values[i * c..(i + 1) * c];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..c {
                let e = (row[j] - mx).exp();
                out[i * c + j] = e;
                z += e;
            }
            for j in 0..c {
                out[i * c + j] /= z;
            }
        }
        drop(a);
        let rg = self.requires_grad();
        Self::new_node("softmax", vec![n, c], out, rg, Op::Softmax, vec![self.clone()])
    }

    pub fn log_softmax(&self) -> Result<DiffArray> {
        let (n, c) = self.rowwise("log_softmax")?;
        let a = self.0.borrow();
        let mut out = vec![0.0; n * c];
        for i in 0..n {
            let row = &a.values[i * c..(i + 1) * c];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln() + mx;
            for j in 0..c {
                out[i * c + j] = row[j] - lse;
            }
        }
        drop(a);
        let rg = self.requires_grad();
        Self::new_node("log_softmax", vec![n, c], out, rg, Op::LogSoftmax, vec![self.clone()])
    }

    /// Mean over all elements, producing a scalar of shape [1].
    pub fn mean(&self) -> Result<DiffArray> {
        let vals = &self.0.borrow().values;
        if vals.is_empty() {
            return Err(DiffError::Invalid { op: "mean", msg: "empty array".into() });
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let rg = self.requires_grad();
        Self::new_node("mean", vec![1], vec![m], rg, Op::Mean, vec![self.clone()])
    }

    /// Sum of squared elements, producing a scalar of shape [1].
    pub fn sum_squares(&self) -> Result<DiffArray> {
        let s: f64 = self.0.borrow().values.iter().map(|v| v * v).sum();
        let rg = self.requires_grad();
        Self::new_node("sum_squares", vec![1], vec![s], rg, Op::SumSquares, vec![self.clone()])
    }

    /// Concatenate two matrices with equal row counts along the column axis.
    pub fn concat_cols(&self, rhs: &DiffArray) -> Result<DiffArray> {
        let (ls, rs) = (self.shape(), rhs.shape());
        if ls.len() != 2 || rs.len() != 2 || ls[0] != rs[0] {
            return Err(DiffError::ShapeMismatch { op: "concat", lhs: ls, rhs: rs });
        }
        let (n, d1, d2) = (ls[0], ls[1], rs[1]);
        let a = self.0.borrow();
        let b = rhs.0.borrow();
        let mut out = Vec::with_capacity(n * (d1 + d2));
        for i in 0..n {
            out.extend_from_slice(&a.values[i * d1..(i + 1) * d1]);
            out.extend_from_slice(&b.values[i * d2..(i + 1) * d2]);
        }
        drop(a);
        drop(b);
        let rg = Self::child_requires(&[self, rhs]);
        Self::new_node("concat", vec![n, d1 + d2], out, rg, Op::ConcatCols, vec![self.clone(), rhs.clone()])
    }

    /// Per-row flattened outer product: out[i, a*c + b] = lhs[i,a] * rhs[i,b].
    pub fn outer_rows(&self, rhs: &DiffArray) -> Result<DiffArray> {
        let (ls, rs) = (self.shape(), rhs.shape());
        if ls.len() != 2 || rs.len() != 2 || ls[0] != rs[0] {
            return Err(DiffError::ShapeMismatch { op: "outer_rows", lhs: ls, rhs: rs });
        }
        let (n, d, c) = (ls[0], ls[1], rs[1]);
        let a = self.0.borrow();
        let b = rhs.0.borrow();
        let mut out = vec![0.0; n * d * c];
        for i in 0..n {
            for p in 0..d {
                let av = a.values[i * d + p];
                for q in 0..c {
                    out[i * d * c + p * c + q] = av * b.values[i * c + q];
                }
            }
        }
        drop(a);
        drop(b);
        let rg = Self::child_requires(&[self, rhs]);
        Self::new_node("outer_rows", vec![n, d * c], out, rg, Op::OuterRows, vec![self.clone(), rhs.clone()])
    }

    /// Identity in the forward pass; backward multiplies the gradient by -lambda.
    pub fn grad_reverse(&self, lambda: f64) -> Result<DiffArray> {
        let out = self.0.borrow().values.clone();
        let rg = self.requires_grad();
        Self::new_node("grad_reverse", self.shape(), out, rg, Op::GradReverse(lambda), vec![self.clone()])
    }

    /// Mean negative log-likelihood; `self` holds row-wise log-probabilities.
    pub fn nll(&self, labels: &[usize]) -> Result<DiffArray> {
        let (n, c) = self.rowwise("nll")?;
        if labels.len() != n {
            return Err(DiffError::Invalid {
                op: "nll",
                msg: format!("{} rows but {} labels", n, labels.len()),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(DiffError::Invalid {
                op: "nll",
                msg: format!("label {} out of range for {} classes", bad, c),
            });
        }
        let a = self.0.borrow();
        let loss = -labels
            .iter()
            .enumerate()
            .map(|(i, &y)| a.values[i * c + y])
            .sum::<f64>()
            / n as f64;
        drop(a);
        let rg = self.requires_grad();
        Self::new_node("nll", vec![1], vec![loss], rg, Op::Nll { labels: labels.to_vec() }, vec![self.clone()])
    }

    /// Mean binary cross-entropy from logits against fixed 0/1 targets,
    /// computed in the numerically stable softplus form.
    pub fn bce_with_logits(&self, targets: &[f64]) -> Result<DiffArray> {
        let vals = self.values();
        if vals.len() != targets.len() {
            return Err(DiffError::Invalid {
                op: "bce_with_logits",
                msg: format!("{} logits but {} targets", vals.len(), targets.len()),
            });
        }
        if vals.is_empty() {
            return Err(DiffError::Invalid { op: "bce_with_logits", msg: "empty batch".into() });
        }
        let loss = vals
            .iter()
            .zip(targets.iter())
            .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
            .sum::<f64>()
            / vals.len() as f64;
        let rg = self.requires_grad();
        Self::new_node(
            "bce_with_logits",
            vec![1],
            vec![loss],
            rg,
            Op::BceWithLogits { targets: targets.to_vec() },
            vec![self.clone()],
        )
    }

    // ----- backward -----

    /// Propagate d(root)/d(node) into every reachable node with
    /// `requires_grad`, accumulating additively into existing grads.
    pub fn backward(&self) -> Result<()> {
        {
            let mut root = self.0.borrow_mut();
            if root.values.len() != 1 {
                return Err(DiffError::NonScalarRoot(root.shape.clone()));
            }
            if root.backward_done {
                return Err(DiffError::DoubleBackward);
            }
            root.backward_done = true;
        }

        // Iterative post-order DFS; reverse gives a valid topological order.
        let mut order: Vec<DiffArray> = Vec::new();
        let mut seen: HashSet<*const RefCell<Node>> = HashSet::new();
        let mut stack: Vec<(DiffArray, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            let key = Rc::as_ptr(&node.0);
            if expanded {
                order.push(node);
                continue;
            }
            if !seen.insert(key) {
                continue;
            }
            stack.push((node.clone(), true));
            for p in node.0.borrow().parents.iter() {
                if !seen.contains(&Rc::as_ptr(&p.0)) && p.0.borrow().requires_grad {
                    stack.push((p.clone(), false));
                }
            }
        }

        self.0.borrow_mut().grad = Some(vec![1.0]);

        for node in order.iter().rev() {
            let (grad, parents) = {
                let n = node.0.borrow();
                match &n.grad {
                    Some(g) => (g.clone(), n.parents.clone()),
                    None => continue,
                }
            };
            let contributions = node.parent_grads(&grad)?;
            for (parent, contrib) in parents.iter().zip(contributions) {
                let mut p = parent.0.borrow_mut();
                if !p.requires_grad {
                    continue;
                }
                match &mut p.grad {
                    Some(g) => {
                        for (gi, ci) in g.iter_mut().zip(contrib.iter()) {
                            *gi += ci;
                        }
                    }
                    None => p.grad = Some(contrib),
                }
            }
        }
        Ok(())
    }

    /// Gradient contribution to each parent given this node's gradient.
    fn parent_grads(&self, grad: &[f64]) -> Result<Vec<Vec<f64>>> {
        let n = self.0.borrow();
        let out = match &n.op {
            Op::Leaf => vec![],
            Op::MatMul => {
                let a = n.parents[0].0.borrow();
                let b = n.parents[1].0.borrow();
                let (rows, inner) = (a.shape[0], a.shape[1]);
                let cols = b.shape[1];
                // dA = G * B^T
                let mut da = vec![0.0; rows * inner];
                for i in 0..rows {
                    for p in 0..inner {
                        let mut s = 0.0;
                        for j in 0..cols {
                            s += grad[i * cols + j] * b.values[p * cols + j];
                        }
                        da[i * inner + p] = s;
                    }
                }
                // dB = A^T * G
                let mut db = vec![0.0; inner * cols];
                for p in 0..inner {
                    for i in 0..rows {
                        let av = a.values[i * inner + p];
                        if av == 0.0 {
                            continue;
                        }
                        for j in 0..cols {
                            db[p * cols + j] += av * grad[i * cols + j];
                        }
                    }
                }
                vec![da, db]
            }
            Op::Add => vec![grad.to_vec(), grad.to_vec()],
            Op::Sub => vec![grad.to_vec(), grad.iter().map(|g| -g).collect()],
            Op::AddRow => {
                let d = n.shape[1];
                let rows = n.shape[0];
                let mut db = vec![0.0; d];
                for i in 0..rows {
                    for j in 0..d {
                        db[j] += grad[i * d + j];
                    }
                }
                vec![grad.to_vec(), db]
            }
            Op::MulScalar(s) => vec![grad.iter().map(|g| g * s).collect()],
            Op::Relu => {
                let x = n.parents[0].0.borrow();
                // subgradient at 0 is 0
                vec![grad.iter().zip(x.values.iter()).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect()]
            }
            Op::Softmax => {
                let (rows, c) = (n.shape[0], n.shape[1]);
                let mut dx = vec![0.0; rows * c];
                for i in 0..rows {
                    let y = &n.values[i * c..(i + 1) * c];
                    let g = &grad[i * c..(i + 1) * c];
                    let dot: f64 = y.iter().zip(g.iter()).map(|(yi, gi)| yi * gi).sum();
                    for j in 0..c {
                        dx[i * c + j] = y[j] * (g[j] - dot);
                    }
                }
                vec![dx]
            }
            Op::LogSoftmax => {
                let (rows, c) = (n.shape[0], n.shape[1]);
                let mut dx = vec![0.0; rows * c];
                for i in 0..rows {
                    let logp = &n.values[i * c..(i + 1) * c];
                    let g = &grad[i * c..(i + 1) * c];
                    let gsum: f64 = g.iter().sum();
                    for j in 0..c {
                        dx[i * c + j] = g[j] - logp[j].exp() * gsum;
                    }
                }
                vec![dx]
            }
            Op::Mean => {
                let x = n.parents[0].0.borrow();
                let scale = grad[0] / x.values.len() as f64;
                vec![vec![scale; x.values.len()]]
            }
            Op::SumSquares => {
                let x = n.parents[0].0.borrow();
                vec![x.values.iter().map(|v| 2.0 * v * grad[0]).collect()]
            }
            Op::ConcatCols => {
                let a = n.parents[0].0.borrow();
                let b = n.parents[1].0.borrow();
                let (rows, d1, d2) = (a.shape[0], a.shape[1], b.shape[1]);
                let mut da = vec![0.0; rows * d1];
                let mut db = vec![0.0; rows * d2];
                for i in 0..rows {
                    da[i * d1..(i + 1) * d1].copy_from_slice(&grad[i * (d1 + d2)..i * (d1 + d2) + d1]);
                    db[i * d2..(i + 1) * d2]
                        .copy_from_slice(&grad[i * (d1 + d2) + d1..(i + 1) * (d1 + d2)]);
                }
                vec![da, db]
            }
            Op::OuterRows => {
                let a = n.parents[0].0.borrow();
                let b = n.parents[1].0.borrow();
                let (rows, d, c) = (a.shape[0], a.shape[1], b.shape[1]);
                let mut da = vec![0.0; rows * d];
                let mut db = vec![0.0; rows * c];
                for i in 0..rows {
                    for p in 0..d {
                        let mut s = 0.0;
                        for q in 0..c {
                            s += grad[i * d * c + p * c + q] * b.values[i * c + q];
                        }
                        da[i * d + p] = s;
                    }
                    for q in 0..c {
                        let mut s = 0.0;
                        for p in 0..d {
                            s += grad[i * d * c + p * c + q] * a.values[i * d + p];
                        }
                        db[i * c + q] = s;
                    }
                }
                vec![da, db]
            }
            Op::GradReverse(lambda) => vec![grad.iter().map(|g| -lambda * g).collect()],
            Op::Nll { labels } => {
                let rows = labels.len();
                let c = n.parents[0].0.borrow().shape[1];
                let mut dx = vec![0.0; rows * c];
                let scale = -grad[0] / rows as f64;
                for (i, &y) in labels.iter().enumerate() {
                    dx[i * c + y] = scale;
                }
                vec![dx]
            }
            Op::BceWithLogits { targets } => {
                let x = n.parents[0].0.borrow();
                let m = targets.len() as f64;
                vec![x
                    .values
                    .iter()
                    .zip(targets.iter())
                    .map(|(&xi, &t)| {
                        let sig = 1.0 / (1.0 + (-xi).exp());
                        (sig - t) * grad[0] / m
                    })
                    .collect()]
            }
        };
        Ok(out)
    }
}

/// Momentum SGD with decoupled weight decay.
pub struct SgdState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl SgdState {
    pub fn new(learning_rate: f64, momentum: f64, weight_decay: f64, params: &[DiffArray]) -> Self {
        let velocity = params.iter().map(|p| vec![0.0; p.values().len()]).collect();
        SgdState { learning_rate, momentum, weight_decay, velocity }
    }

    /// v <- momentum*v + grad + wd*param; param <- param - lr*v; grads cleared.
    pub fn step(&mut self, params: &[DiffArray]) -> Result<()> {
        assert_eq!(params.len(), self.velocity.len(), "parameter set changed size");
        for (param, vel) in params.iter().zip(self.velocity.iter_mut()) {
            let grad = param.grad().ok_or(DiffError::MissingGrad)?;
            let mut vals = param.values();
            for i in 0..vals.len() {
                vel[i] = self.momentum * vel[i] + grad[i] + self.weight_decay * vals[i];
                vals[i] -= self.learning_rate * vel[i];
            }
            if !all_finite(&vals) {
                return Err(DiffError::NonFinite { op: "sgd_step" });
            }
            param.set_values(vals);
            param.clear_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(shape: &[usize], v: &[f64]) -> DiffArray {
        DiffArray::constant(shape.to_vec(), v.to_vec()).unwrap()
    }

    fn p(shape: &[usize], v: &[f64]) -> DiffArray {
        DiffArray::param(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_hand_case() {
        let a = c(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = c(&[2, 1], &[1.0, 1.0]);
        assert_eq!(a.matmul(&b).unwrap().values(), vec![3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_shapes() {
        let a = c(&[2, 3], &[0.0; 6]);
        let b = c(&[2, 2], &[0.0; 4]);
        let err = a.matmul(&b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn relu_values() {
        let x = c(&[3], &[-1.0, 0.0, 2.0]);
        assert_eq!(x.relu().unwrap().values(), vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn log_softmax_symmetry() {
        let x = c(&[1, 2], &[0.0, 0.0]);
        let ls = x.log_softmax().unwrap().values();
        let expect = -(2.0f64).ln();
        assert!((ls[0] - expect).abs() < 1e-15 && (ls[1] - expect).abs() < 1e-15);
    }

    #[test]
    fn backward_sum_squares() {
        let x = p(&[1], &[3.0]);
        let loss = x.sum_squares().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn backward_mean_relu() {
        let x = p(&[2], &[-1.0, 2.0]);
        let loss = x.relu().unwrap().mean().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.5]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let x = p(&[2], &[1.0, 2.0]);
        let y = x.relu().unwrap();
        assert!(matches!(y.backward(), Err(DiffError::NonScalarRoot(_))));
    }

    #[test]
    fn backward_rejects_second_pass() {
        let x = p(&[1], &[2.0]);
        let loss = x.sum_squares().unwrap();
        loss.backward().unwrap();
        assert!(matches!(loss.backward(), Err(DiffError::DoubleBackward)));
    }

    #[test]
    fn grad_accumulates_across_roots() {
        let x = p(&[1], &[3.0]);
        x.sum_squares().unwrap().backward().unwrap();
        x.sum_squares().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![12.0]);
    }

    #[test]
    fn backward_linearity() {
        // grad of a*L1 + b*L2 == a*grad(L1) + b*grad(L2)
        let vals = [0.3, -1.2, 2.5];
        let x = p(&[3], &vals);
        let l1 = x.sum_squares().unwrap();
        let l2 = x.relu().unwrap().mean().unwrap();
        let combined = l1.mul_scalar(2.0).unwrap().add(&l2.mul_scalar(-0.5).unwrap()).unwrap();
        combined.backward().unwrap();
        let got = x.grad().unwrap();

        let x1 = p(&[3], &vals);
        x1.sum_squares().unwrap().backward().unwrap();
        let g1 = x1.grad().unwrap();
        let x2 = p(&[3], &vals);
        x2.relu().unwrap().mean().unwrap().backward().unwrap();
        let g2 = x2.grad().unwrap();
        for i in 0..3 {
            assert!((got[i] - (2.0 * g1[i] - 0.5 * g2[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn grad_reverse_negates_and_scales() {
        let x = p(&[2], &[1.0, -2.0]);
        let loss = x.grad_reverse(0.7).unwrap().sum_squares().unwrap();
        loss.backward().unwrap();
        let g = x.grad().unwrap();
        assert!((g[0] - (-0.7 * 2.0)).abs() < 1e-15);
        assert!((g[1] - (-0.7 * -4.0)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_is_an_error() {
        let x = c(&[1], &[1e308]);
        assert!(matches!(x.mul_scalar(10.0), Err(DiffError::NonFinite { .. })));
    }

    #[test]
    fn sgd_plain_step() {
        let w = p(&[1], &[1.0]);
        w.sum_squares().unwrap().mul_scalar(0.5).unwrap().backward().unwrap();
        // grad = 1.0
        let mut sgd = SgdState::new(0.1, 0.0, 0.0, &[w.clone()]);
        sgd.step(&[w.clone()]).unwrap();
        assert!((w.values()[0] - 0.9).abs() < 1e-15);
        assert!(w.grad().is_none());
    }

    #[test]
    fn sgd_decay_only() {
        let w = p(&[1], &[1.0]);
        // zero grad via a loss that does not touch w's value
        w.mul_scalar(0.0).unwrap().sum_squares().unwrap().backward().unwrap();
        let mut sgd = SgdState::new(0.1, 0.0, 0.5, &[w.clone()]);
        sgd.step(&[w.clone()]).unwrap();
        assert!((w.values()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn sgd_momentum_two_steps() {
        // constant grad 1, momentum 0.9: param after two steps = 1 - 0.1 - 0.19 = 0.71
        let w = p(&[1], &[1.0]);
        let mut sgd = SgdState::new(0.1, 0.9, 0.0, &[w.clone()]);
        for _ in 0..2 {
            // loss = w, so dloss/dw = 1 regardless of w's value
            w.mean().unwrap().backward().unwrap();
            sgd.step(&[w.clone()]).unwrap();
        }
        assert!((w.values()[0] - 0.71).abs() < 1e-12);
    }

    #[test]
    fn sgd_missing_grad_errors() {
        let w = p(&[1], &[1.0]);
        let mut sgd = SgdState::new(0.1, 0.0, 0.0, &[w.clone()]);
        assert!(matches!(sgd.step(&[w]), Err(DiffError::MissingGrad)));
    }

    #[test]
    fn outer_rows_one_hot() {
        // f = e2 (D=4), y = e1 (C=3) -> one-hot at flat index 2*3+1 = 7
        let f = c(&[1, 4], &[0.0, 0.0, 1.0, 0.0]);
        let y = c(&[1, 3], &[0.0, 1.0, 0.0]);
        let o = f.outer_rows(&y).unwrap();
        assert_eq!(o.shape(), vec![1, 12]);
        let v = o.values();
        for (i, x) in v.iter().enumerate() {
            assert_eq!(*x, if i == 7 { 1.0 } else { 0.0 });
        }
    }
}
