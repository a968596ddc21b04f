//! Tape of recorded operations and their adjoints.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and the backward pass is a single reverse sweep.

use super::Tensor;
use crate::error::{Error, Result};

/// Degenerate-row threshold for the Gram-Schmidt node.
pub const GRAM_SCHMIDT_TOL: f64 = 1e-10;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Relu(Var),
    Sqrt(Var),
    Recip(Var),
    Sum(Var),
    Dot(Var, Var),
    ScaleBy(Var, Var),
    AddBias(Var, Var),
    Rows {
        src: Var,
        start: usize,
    },
    Stack(Vec<Var>),
    CosineSim {
        u: Var,
        v: Var,
        eps: f64,
    },
    SoftmaxCe {
        logits: Var,
        targets: Vec<usize>,
    },
    L1(Var, Var),
    Mse(Var, Var),
    GramSchmidt {
        src: Var,
        // lower-triangular L with src = L·Q, row-major m×m
        lower: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Sqrt(_) => "sqrt",
            Op::Recip(_) => "recip",
            Op::Sum(_) => "sum",
            Op::Dot(..) => "dot",
            Op::ScaleBy(..) => "scale_by",
            Op::AddBias(..) => "add_bias",
            Op::Rows { .. } => "rows",
            Op::Stack(_) => "stack",
            Op::CosineSim { .. } => "cosine_sim",
            Op::SoftmaxCe { .. } => "softmax_cross_entropy",
            Op::L1(..) => "l1_distance",
            Op::Mse(..) => "mse",
            Op::GramSchmidt { .. } => "gram_schmidt",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    value: Vec<f64>,
    requires_grad: bool,
}

/// A single-use computation graph. Build it forward, call
/// [`backward`](Graph::backward) on a scalar, then read leaf gradients.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    // accumulated gradients of requires-grad leaves, indexed by node
    leaf_grads: Vec<Option<Vec<f64>>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>) -> Result<Var> {
        let id = self.nodes.len();
        if value.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                node: id,
                op: op.name(),
            });
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::Stack(vs) => vs.iter().any(|v| self.node(*v).requires_grad),
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Dot(a, b)
            | Op::ScaleBy(a, b)
            | Op::AddBias(a, b)
            | Op::L1(a, b)
            | Op::Mse(a, b)
            | Op::CosineSim { u: a, v: b, .. } => {
                self.node(*a).requires_grad || self.node(*b).requires_grad
            }
            Op::Scale(a, _)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Sqrt(a)
            | Op::Recip(a)
            | Op::Sum(a)
            | Op::Rows { src: a, .. }
            | Op::SoftmaxCe { logits: a, .. }
            | Op::GramSchmidt { src: a, .. } => self.node(*a).requires_grad,
        };
        self.nodes.push(Node {
            op,
            shape,
            value,
            requires_grad,
        });
        Ok(Var(id))
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    // ---- leaves ----------------------------------------------------------

    /// Copies a tensor into the graph. Trainable iff the tensor is.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node {
            op: Op::Leaf,
            shape: t.shape().to_vec(),
            value: t.data().to_vec(),
            requires_grad: t.requires_grad(),
        });
        Var(id)
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.leaf(&t))
    }

    pub fn scalar_constant(&mut self, value: f64) -> Var {
        self.leaf(&Tensor::scalar(value))
    }

    /// Copies the current value of `v` into a fresh non-trainable leaf.
    pub fn detach(&mut self, v: Var) -> Var {
        let n = self.node(v).clone();
        self.nodes.push(Node {
            op: Op::Leaf,
            shape: n.shape,
            value: n.value,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    // ---- accessors -------------------------------------------------------

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape is consistent")
    }

    /// Accumulated gradient of a trainable leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.clear();
    }

    // ---- elementwise -----------------------------------------------------

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::dim(op, sa, sb));
        }
        Ok(())
    }

    fn zip_with(&mut self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(op.name(), a, b)?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(op, shape, value)
    }

    fn map(&mut self, op: Op, a: Var, f: impl Fn(f64) -> f64) -> Result<Var> {
        let value = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(op, shape, value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map(Op::Scale(a, c), a, |x| c * x)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map(Op::Tanh(a), a, f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(Op::Relu(a), a, |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.map(Op::Sqrt(a), a, f64::sqrt)
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        self.map(Op::Recip(a), a, f64::recip)
    }

    // ---- reductions and products -----------------------------------------

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().sum();
        self.push(Op::Sum(a), Vec::new(), vec![s])
    }

    /// Sum of many scalars (or equal-shape tensors, summed entrywise).
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::Contract("add_all of no terms".into()))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    /// Inner product of two equal-shape tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("dot", a, b)?;
        let d = dot(self.value(a), self.value(b));
        self.push(Op::Dot(a, b), Vec::new(), vec![d])
    }

    /// `s · a` with `s` a scalar node.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.node(s).value.len() != 1 {
            return Err(Error::dim("scale_by", &[1], self.shape(s)));
        }
        let c = self.scalar(s);
        self.map(Op::ScaleBy(a, s), a, |x| c * x)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let value = matmul_raw(self.value(a), self.value(b), m, k, n);
        self.push(Op::MatMul(a, b), vec![m, n], value)
    }

    /// Adds the vector `b[n]` to every row of `x[m×n]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sx.len() != 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(Error::dim("add_bias", sx, sb));
        }
        let n = sx[1];
        let bias = self.value(b);
        let value = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bias[i % n])
            .collect();
        let shape = sx.to_vec();
        self.push(Op::AddBias(x, b), shape, value)
    }

    // ---- structural ------------------------------------------------------

    /// Rows `start..end` of a matrix, as a matrix.
    pub fn rows(&mut self, src: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(src);
        if s.len() != 2 {
            return Err(Error::dim("rows", s, &[start, end]));
        }
        if start >= end || end > s[0] {
            return Err(Error::Index {
                op: "rows",
                index: end,
                size: s[0],
            });
        }
        let c = s[1];
        let value = self.value(src)[start * c..end * c].to_vec();
        self.push(Op::Rows { src, start }, vec![end - start, c], value)
    }

    /// Row `i` of a matrix, as a vector.
    pub fn row(&mut self, src: Var, i: usize) -> Result<Var> {
        let r = self.rows(src, i, i + 1)?;
        let n = self.nodes.len() - 1;
        let c = self.nodes[n].shape[1];
        self.nodes[n].shape = vec![c];
        Ok(r)
    }

    /// Stacks equal-shape nodes along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("stack of no parts".into()))?;
        let inner = self.shape(first).to_vec();
        let mut value = Vec::with_capacity(parts.len() * self.value(first).len());
        for &p in parts {
            if self.shape(p) != inner.as_slice() {
                return Err(Error::dim("stack", &inner, self.shape(p)));
            }
            value.extend_from_slice(self.value(p));
        }
        let mut shape = vec![parts.len()];
        shape.extend(inner);
        self.push(Op::Stack(parts.to_vec()), shape, value)
    }

    // ---- losses and fused ops --------------------------------------------

    /// `u·v / max(‖u‖‖v‖, eps)`.
    pub fn cosine_sim(&mut self, u: Var, v: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::Range {
                what: "cosine eps",
                value: eps,
                expected: "> 0",
            });
        }
        self.same_shape("cosine_sim", u, v)?;
        let (a, b) = (self.value(u), self.value(v));
        let denom = (norm(a) * norm(b)).max(eps);
        let c = dot(a, b) / denom;
        self.push(Op::CosineSim { u, v, eps }, Vec::new(), vec![c])
    }

    /// `-log softmax(logits)[target]` for a logit vector.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 1 {
            return Err(Error::dim("softmax_cross_entropy", s, &[]));
        }
        self.softmax_ce_impl(logits, vec![target], s[0])
    }

    /// Mean cross-entropy over the rows of `logits[B×C]`.
    pub fn softmax_cross_entropy_rows(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != targets.len() {
            return Err(Error::dim(
                "softmax_cross_entropy_rows",
                s,
                &[targets.len()],
            ));
        }
        self.softmax_ce_impl(logits, targets.to_vec(), s[1])
    }

    fn softmax_ce_impl(&mut self, logits: Var, targets: Vec<usize>, classes: usize) -> Result<Var> {
        if let Some(&t) = targets.iter().find(|&&t| t >= classes) {
            return Err(Error::Index {
                op: "softmax_cross_entropy",
                index: t,
                size: classes,
            });
        }
        let z = self.value(logits);
        let total: f64 = targets
            .iter()
            .enumerate()
            .map(|(r, &t)| {
                let row = &z[r * classes..(r + 1) * classes];
                log_sum_exp(row) - row[t]
            })
            .sum();
        let loss = total / targets.len() as f64;
        self.push(Op::SoftmaxCe { logits, targets }, Vec::new(), vec![loss])
    }

    /// `Σ |a − b|`.
    pub fn l1_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("l1_distance", a, b)?;
        let d = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| (x - y).abs())
            .sum();
        self.push(Op::L1(a, b), Vec::new(), vec![d])
    }

    /// Mean of squared differences.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mse", a, b)?;
        let n = self.value(a).len() as f64;
        let d = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n;
        self.push(Op::Mse(a, b), Vec::new(), vec![d])
    }

    /// Modified Gram-Schmidt over the rows of `src[m×n]`, processed in row
    /// order. Differentiable; see [`gram_schmidt_rows`] for the forward.
    pub fn gram_schmidt(&mut self, src: Var) -> Result<Var> {
        let s = self.shape(src).to_vec();
        if s.len() != 2 || s[0] > s[1] {
            return Err(Error::dim("gram_schmidt", &s, &[]));
        }
        let (q, lower) = gram_schmidt_rows(self.value(src), s[0], s[1])?;
        self.push(Op::GramSchmidt { src, lower }, s, q)
    }

    // ---- backward --------------------------------------------------------

    /// Accumulates d(root)/d(leaf) into every trainable leaf reachable from
    /// `root`. Calling it again without [`zero_grad`](Graph::zero_grad) adds.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.node(root).value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(vec![1.0]);
        if self.leaf_grads.len() < self.nodes.len() {
            self.leaf_grads.resize(self.nodes.len(), None);
        }

        for id in (0..=root.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    node: id,
                    op: node.op.name(),
                });
            }
            if matches!(node.op, Op::Leaf) {
                match &mut self.leaf_grads[id] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            } else {
                self.propagate(&self.nodes[id].op, id, &g, &mut adj);
            }
        }
        Ok(())
    }

    fn propagate(&self, op: &Op, id: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let out = &self.nodes[id].value;
        let val = |v: Var| self.nodes[v.0].value.as_slice();
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        // lazily-allocated adjoint accumulation
        let mut send = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = adj[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };

        match op {
            Op::Leaf => unreachable!(),
            Op::Add(a, b) => {
                send(*a, &mut |s| axpy(s, 1.0, g));
                send(*b, &mut |s| axpy(s, 1.0, g));
            }
            Op::Sub(a, b) => {
                send(*a, &mut |s| axpy(s, 1.0, g));
                send(*b, &mut |s| axpy(s, -1.0, g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                send(*a, &mut |s| {
                    s.iter_mut()
                        .zip(g.iter().zip(vb))
                        .for_each(|(s, (g, y))| *s += g * y)
                });
                send(*b, &mut |s| {
                    s.iter_mut()
                        .zip(g.iter().zip(va))
                        .for_each(|(s, (g, x))| *s += g * x)
                });
            }
            Op::Scale(a, c) => send(*a, &mut |s| axpy(s, *c, g)),
            Op::Tanh(a) => send(*a, &mut |s| {
                s.iter_mut()
                    .zip(g.iter().zip(out))
                    .for_each(|(s, (g, y))| *s += g * (1.0 - y * y))
            }),
            Op::Relu(a) => {
                let x = val(*a);
                send(*a, &mut |s| {
                    s.iter_mut()
                        .zip(g.iter().zip(x))
                        .for_each(|(s, (g, x))| {
                            if *x > 0.0 {
                                *s += g
                            }
                        })
                })
            }
            Op::Sqrt(a) => send(*a, &mut |s| {
                s.iter_mut()
                    .zip(g.iter().zip(out))
                    .for_each(|(s, (g, y))| *s += g / (2.0 * y))
            }),
            Op::Recip(a) => send(*a, &mut |s| {
                s.iter_mut()
                    .zip(g.iter().zip(out))
                    .for_each(|(s, (g, y))| *s -= g * y * y)
            }),
            Op::Sum(a) => send(*a, &mut |s| s.iter_mut().for_each(|s| *s += g[0])),
            Op::Dot(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                send(*a, &mut |s| axpy(s, g[0], vb));
                send(*b, &mut |s| axpy(s, g[0], va));
            }
            Op::ScaleBy(a, c) => {
                let (va, vc) = (val(*a), val(*c)[0]);
                send(*a, &mut |s| axpy(s, vc, g));
                send(*c, &mut |s| s[0] += dot(g, va));
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (va, vb) = (val(*a), val(*b));
                if wants(*a) {
                    // dA = G·Bᵀ
                    send(*a, &mut |s| {
                        for i in 0..m {
                            let gi = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                s[i * k + p] += dot(gi, &vb[p * n..(p + 1) * n]);
                            }
                        }
                    });
                }
                if wants(*b) {
                    // dB = Aᵀ·G
                    send(*b, &mut |s| {
                        for i in 0..m {
                            let gi = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                axpy(&mut s[p * n..(p + 1) * n], va[i * k + p], gi);
                            }
                        }
                    });
                }
            }
            Op::AddBias(x, b) => {
                let n = self.nodes[b.0].value.len();
                send(*x, &mut |s| axpy(s, 1.0, g));
                send(*b, &mut |s| {
                    for row in g.chunks(n) {
                        axpy(s, 1.0, row);
                    }
                });
            }
            Op::Rows { src, start, .. } => {
                let c = *self.nodes[src.0].shape.last().unwrap();
                send(*src, &mut |s| axpy(&mut s[start * c..start * c + g.len()], 1.0, g));
            }
            Op::Stack(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.nodes[p.0].value.len();
                    send(*p, &mut |s| axpy(s, 1.0, &g[offset..offset + len]));
                    offset += len;
                }
            }
            Op::CosineSim { u, v, eps } => {
                let (a, b) = (val(*u), val(*v));
                let (na, nb) = (norm(a), norm(b));
                let prod = na * nb;
                let c = out[0];
                if prod > *eps {
                    send(*u, &mut |s| {
                        s.iter_mut().zip(a.iter().zip(b)).for_each(|(s, (x, y))| {
                            *s += g[0] * (y / prod - c * x / (na * na))
                        })
                    });
                    send(*v, &mut |s| {
                        s.iter_mut().zip(a.iter().zip(b)).for_each(|(s, (x, y))| {
                            *s += g[0] * (x / prod - c * y / (nb * nb))
                        })
                    });
                } else {
                    send(*u, &mut |s| axpy(s, g[0] / eps, b));
                    send(*v, &mut |s| axpy(s, g[0] / eps, a));
                }
            }
            Op::SoftmaxCe { logits, targets } => {
                let z = val(*logits);
                let classes = z.len() / targets.len();
                let w = g[0] / targets.len() as f64;
                send(*logits, &mut |s| {
                    for (r, &t) in targets.iter().enumerate() {
                        let row = &z[r * classes..(r + 1) * classes];
                        let lse = log_sum_exp(row);
                        let srow = &mut s[r * classes..(r + 1) * classes];
                        for (j, (s, z)) in srow.iter_mut().zip(row).enumerate() {
                            let p = (z - lse).exp();
                            *s += w * (p - if j == t { 1.0 } else { 0.0 });
                        }
                    }
                });
            }
            Op::L1(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let sign: Vec<f64> = va
                    .iter()
                    .zip(vb)
                    .map(|(x, y)| match x.partial_cmp(y) {
                        Some(std::cmp::Ordering::Greater) => g[0],
                        Some(std::cmp::Ordering::Less) => -g[0],
                        _ => 0.0,
                    })
                    .collect();
                send(*a, &mut |s| axpy(s, 1.0, &sign));
                send(*b, &mut |s| axpy(s, -1.0, &sign));
            }
            Op::Mse(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let k = 2.0 * g[0] / va.len() as f64;
                let diff: Vec<f64> = va.iter().zip(vb).map(|(x, y)| k * (x - y)).collect();
                send(*a, &mut |s| axpy(s, 1.0, &diff));
                send(*b, &mut |s| axpy(s, -1.0, &diff));
            }
            Op::GramSchmidt { src, lower } => {
                let shape = &self.nodes[id].shape;
                let (m, n) = (shape[0], shape[1]);
                let grad = gram_schmidt_backward(out, lower, g, m, n);
                send(*src, &mut |s| axpy(s, 1.0, &grad));
            }
        }
    }
}

// ---- numeric kernels ------------------------------------------------------

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += alpha * x);
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip != 0.0 {
                axpy(orow, aip, &b[p * n..(p + 1) * n]);
            }
        }
    }
    out
}

/// Modified Gram-Schmidt on the rows of `a[m×n]`.
///
/// Returns `(Q, L)` with `Q` row-orthonormal and `L` lower triangular such
/// that `a = L·Q`. Fails if any residual norm falls below
/// [`GRAM_SCHMIDT_TOL`].
pub fn gram_schmidt_rows(a: &[f64], m: usize, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut q = a.to_vec();
    let mut lower = vec![0.0; m * m];
    for i in 0..m {
        let (done, rest) = q.split_at_mut(i * n);
        let v = &mut rest[..n];
        for j in 0..i {
            let qj = &done[j * n..(j + 1) * n];
            let r = dot(qj, v);
            axpy(v, -r, qj);
            lower[i * m + j] = r;
        }
        let nv = norm(v);
        if !(nv >= GRAM_SCHMIDT_TOL) {
            return Err(Error::DegenerateBasis { row: i, norm: nv });
        }
        v.iter_mut().for_each(|x| *x /= nv);
        lower[i * m + i] = nv;
    }
    Ok((q, lower))
}

/// Adjoint of the row Gram-Schmidt map `A = L·Q ↦ Q`:
/// `Ā = L⁻ᵀ (Q̄ + sym(M)·Q)`, `M = −Q̄·Qᵀ`, where `sym` mirrors the lower
/// triangle (diagonal included) onto the upper one.
fn gram_schmidt_backward(q: &[f64], lower: &[f64], gq: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut mm = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..=i {
            mm[i * m + j] = -dot(&gq[i * n..(i + 1) * n], &q[j * n..(j + 1) * n]);
        }
    }
    // X = Q̄ + sym(M)·Q
    let mut x = gq.to_vec();
    for i in 0..m {
        for j in 0..m {
            let c = if j <= i { mm[i * m + j] } else { mm[j * m + i] };
            axpy(&mut x[i * n..(i + 1) * n], c, &q[j * n..(j + 1) * n]);
        }
    }
    // Solve Lᵀ·Y = X by back substitution (Lᵀ upper triangular).
    for i in (0..m).rev() {
        for k in i + 1..m {
            let l = lower[k * m + i];
            let (head, tail) = x.split_at_mut(k * n);
            axpy(&mut head[i * n..(i + 1) * n], -l, &tail[..n]);
        }
        let d = lower[i * m + i];
        x[i * n..(i + 1) * n].iter_mut().for_each(|v| *v /= d);
    }
    x
}
