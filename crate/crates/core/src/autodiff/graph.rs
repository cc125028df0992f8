//! Dynamic reverse-mode tape.
//!
//! A [`Graph`] is rebuilt for every forward pass. Nodes are appended in
//! evaluation order, so the node vector is already a topological order and
//! [`Graph::backward`] walks it in reverse.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Handle to a node inside one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// m×n plus a 1×n row vector.
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    grad: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Single-threaded computation graph.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

fn softmax_row(src: &[f64], dst: &mut [f64]) {
    let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = (s - max).exp();
        total += *d;
    }
    for d in dst.iter_mut() {
        *d /= total;
    }
}

fn softmax_rows_value(x: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(x.rows(), x.cols());
    let cols = x.cols();
    for r in 0..x.rows() {
        softmax_row(x.row_slice(r), &mut out.data_mut()[r * cols..(r + 1) * cols]);
    }
    out
}

fn log_softmax_rows_value(x: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(x.rows(), x.cols());
    let cols = x.cols();
    for r in 0..x.rows() {
        let row = x.row_slice(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for (c, &v) in row.iter().enumerate() {
            out.data_mut()[r * cols + c] = v - lse;
        }
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let grad = Tensor::zeros(value.rows(), value.cols());
        self.nodes.push(Node {
            value,
            grad,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].grad
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Clears every accumulated gradient.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad.data_mut().fill(0.0);
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.derived(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        Ok(self.derived(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
        let value = Tensor::new(va.rows(), va.cols(), data)?;
        Ok(self.derived(value, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(va.rows(), va.cols(), data)?;
        Ok(self.derived(value, Op::Mul(a, b), &[a, b]))
    }

    /// Adds the 1×n row `bias` to every row of the m×n `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(bias));
        if vb.rows() != 1 || vb.cols() != va.cols() {
            return Err(Error::Dimension {
                op: "add_row",
                left: va.shape(),
                right: vb.shape(),
            });
        }
        let mut value = va.clone();
        let cols = va.cols();
        for (i, x) in value.data_mut().iter_mut().enumerate() {
            *x += vb.data()[i % cols];
        }
        Ok(self.derived(value, Op::AddRow(a, bias), &[a, bias]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        self.derived(value, Op::Scale(a, factor), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, offset: f64) -> Var {
        let value = self.value(a).map(|x| x + offset);
        self.derived(value, Op::AddScalar(a), &[a])
    }

    /// Horizontal concatenation; all parts need the same row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat_cols of zero nodes"))?;
        let rows = self.value(*first).rows();
        for p in parts {
            let shape = self.value(*p).shape();
            if shape.0 != rows {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    left: self.value(*first).shape(),
                    right: shape,
                });
            }
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut value = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            let src = self.value(*p);
            let width = src.cols();
            for r in 0..rows {
                value.data_mut()[r * cols + offset..r * cols + offset + width]
                    .copy_from_slice(src.row_slice(r));
            }
            offset += width;
        }
        Ok(self.derived(value, Op::Concat(parts.to_vec()), parts))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let va = self.value(a);
        if start >= end || end > va.cols() {
            return Err(Error::Dimension {
                op: "slice_cols",
                left: va.shape(),
                right: (start, end),
            });
        }
        let width = end - start;
        let mut value = Tensor::zeros(va.rows(), width);
        for r in 0..va.rows() {
            value.data_mut()[r * width..(r + 1) * width]
                .copy_from_slice(&va.row_slice(r)[start..end]);
        }
        Ok(self.derived(value, Op::SliceCols(a, start), &[a]))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.derived(value, Op::Tanh(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.derived(value, Op::Exp(a), &[a])
    }

    /// Natural log; every input entry must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if let Some(bad) = va.data().iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        let value = va.map(f64::ln);
        Ok(self.derived(value, Op::Log(a), &[a]))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows_value(self.value(a));
        self.derived(value, Op::SoftmaxRows(a), &[a])
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let value = log_softmax_rows_value(self.value(a));
        self.derived(value, Op::LogSoftmaxRows(a), &[a])
    }

    /// Sum of all entries, as a 1×1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.derived(value, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.is_empty() {
            return Err(Error::contract("mean of an empty tensor"));
        }
        let value = Tensor::scalar(va.sum() / va.len() as f64);
        Ok(self.derived(value, Op::Mean(a), &[a]))
    }

    /// Accumulates d(root)/d(node) into every requires-grad node reachable
    /// from `root`. Calling it twice without [`Graph::zero_grad`] doubles
    /// the stored gradients.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let shape = self.value(root).shape();
        if shape != (1, 1) {
            return Err(Error::contract(format!(
                "backward needs a 1x1 root, got {}x{}",
                shape.0, shape.1
            )));
        }
        let mut adjoints: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        adjoints[root.0] = Some(Tensor::scalar(1.0));

        for i in (0..=root.0).rev() {
            let Some(upstream) = adjoints[i].take() else {
                continue;
            };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &upstream, &mut adjoints)?;
            self.nodes[i].grad.add_assign(&upstream);
        }
        Ok(())
    }

    fn propagate(
        &self,
        index: usize,
        upstream: &Tensor,
        adjoints: &mut [Option<Tensor>],
    ) -> Result<()> {
        let node = &self.nodes[index];
        let send = |target: Var, contribution: Tensor, adjoints: &mut [Option<Tensor>]| {
            if !self.nodes[target.0].requires_grad {
                return;
            }
            match &mut adjoints[target.0] {
                Some(acc) => acc.add_assign(&contribution),
                slot => *slot = Some(contribution),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    send(*a, upstream.matmul(&vb.transpose())?, adjoints);
                }
                if self.requires_grad(*b) {
                    send(*b, va.transpose().matmul(upstream)?, adjoints);
                }
            }
            Op::Add(a, b) => {
                send(*a, upstream.clone(), adjoints);
                send(*b, upstream.clone(), adjoints);
            }
            Op::Sub(a, b) => {
                send(*a, upstream.clone(), adjoints);
                send(*b, upstream.map(|g| -g), adjoints);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let da = zip_with(upstream, vb, |g, y| g * y);
                let db = zip_with(upstream, va, |g, x| g * x);
                send(*a, da, adjoints);
                send(*b, db, adjoints);
            }
            Op::AddRow(a, bias) => {
                send(*a, upstream.clone(), adjoints);
                let cols = upstream.cols();
                let mut db = Tensor::zeros(1, cols);
                for (i, g) in upstream.data().iter().enumerate() {
                    db.data_mut()[i % cols] += g;
                }
                send(*bias, db, adjoints);
            }
            Op::Scale(a, factor) => send(*a, upstream.map(|g| g * factor), adjoints),
            Op::AddScalar(a) => send(*a, upstream.clone(), adjoints),
            Op::Concat(parts) => {
                let cols = upstream.cols();
                let mut offset = 0;
                for p in parts {
                    let width = self.value(*p).cols();
                    let mut part = Tensor::zeros(upstream.rows(), width);
                    for r in 0..upstream.rows() {
                        part.data_mut()[r * width..(r + 1) * width].copy_from_slice(
                            &upstream.data()[r * cols + offset..r * cols + offset + width],
                        );
                    }
                    offset += width;
                    send(*p, part, adjoints);
                }
            }
            Op::SliceCols(a, start) => {
                let src = self.value(*a);
                let width = upstream.cols();
                let mut da = Tensor::zeros(src.rows(), src.cols());
                for r in 0..src.rows() {
                    let row = &mut da.data_mut()[r * src.cols()..(r + 1) * src.cols()];
                    row[*start..start + width].copy_from_slice(upstream.row_slice(r));
                }
                send(*a, da, adjoints);
            }
            Op::Tanh(a) => {
                let da = zip_with(upstream, &node.value, |g, y| g * (1.0 - y * y));
                send(*a, da, adjoints);
            }
            Op::Exp(a) => {
                let da = zip_with(upstream, &node.value, |g, y| g * y);
                send(*a, da, adjoints);
            }
            Op::Log(a) => {
                let da = zip_with(upstream, self.value(*a), |g, x| g / x);
                send(*a, da, adjoints);
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let cols = y.cols();
                let mut da = Tensor::zeros(y.rows(), cols);
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row_slice(r), upstream.row_slice(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(p, g)| p * g).sum();
                    for c in 0..cols {
                        da.data_mut()[r * cols + c] = yr[c] * (gr[c] - dot);
                    }
                }
                send(*a, da, adjoints);
            }
            Op::LogSoftmaxRows(a) => {
                let probs = softmax_rows_value(self.value(*a));
                let cols = probs.cols();
                let mut da = Tensor::zeros(probs.rows(), cols);
                for r in 0..probs.rows() {
                    let (pr, gr) = (probs.row_slice(r), upstream.row_slice(r));
                    let total: f64 = gr.iter().sum();
                    for c in 0..cols {
                        da.data_mut()[r * cols + c] = gr[c] - pr[c] * total;
                    }
                }
                send(*a, da, adjoints);
            }
            Op::Sum(a) => {
                let g = upstream.data()[0];
                let (r, c) = self.value(*a).shape();
                send(*a, Tensor::filled(r, c, g), adjoints);
            }
            Op::Mean(a) => {
                let src = self.value(*a);
                let g = upstream.data()[0] / src.len() as f64;
                send(*a, Tensor::filled(src.rows(), src.cols(), g), adjoints);
            }
        }
        Ok(())
    }
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("shapes checked at construction")
}
