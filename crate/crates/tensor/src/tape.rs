//! Define-by-run reverse-mode tape.
//!
//! Every operation appends a node holding its forward value and enough saved
//! state to compute input gradients. Nodes are appended in execution order, so
//! walking them backwards from the loss is a reverse topological traversal.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention;
use crate::error::{Result, TensorError};
use crate::loss;
use crate::params::{ParamId, ParamStore};
use crate::scalar::{gemm, MatView, Scalar};
use crate::tensor::{split_axis, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LAYER_NORM_EPS: f64 = 1e-5;

pub(crate) enum Op<T> {
    Leaf,
    Param,
    MatMul {
        a: usize,
        b: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    AddBroadcast {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Scale {
        a: usize,
        factor: T,
    },
    Relu {
        a: usize,
    },
    Reshape {
        a: usize,
    },
    Concat {
        parts: Vec<usize>,
        axis: usize,
    },
    Mean {
        a: usize,
        axis: usize,
    },
    Sum {
        a: usize,
    },
    Lookup {
        table: usize,
        ids: Vec<usize>,
    },
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Dropout {
        a: usize,
        mask: Vec<T>,
    },
    Softmax {
        a: usize,
        axis: usize,
    },
    LogSoftmax {
        a: usize,
        axis: usize,
    },
    Attention {
        q: usize,
        k: usize,
        v: usize,
        heads: usize,
        probs: Vec<T>,
    },
    CrossEntropy {
        logits: usize,
        dlogits: Vec<T>,
    },
    Bce {
        logits: usize,
        dlogits: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation; single-threaded, one per forward/backward pass.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
    rng: ChaCha8Rng,
}

/// Per-node gradients produced by [`Tape::gradients`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new(0)
    }
}

impl<T: Scalar> Tape<T> {
    /// `seed` drives dropout masks only.
    pub fn new(seed: u64) -> Self {
        Tape {
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, idx: usize) -> bool {
        self.nodes[idx].requires_grad
    }

    /// Records a constant input. No gradient flows into it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a constant input that still receives a gradient (see [`Tape::gradients`]).
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Brings a parameter onto the tape. Repeated calls return the same handle.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let var = self.push(store.value(id).clone(), Op::Param, true);
        self.param_vars.insert(id, var);
        var
    }

    /// `a[..., k] @ b[k, n] -> [..., n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.is_empty() || sb.len() != 2 || *sa.last().unwrap() != sb[0] {
            return Err(TensorError::shape("matmul", sa, sb));
        }
        let (k, n) = (sb[0], sb[1]);
        let m = self.value(a).len() / k.max(1);
        let mut out_shape = sa.to_vec();
        *out_shape.last_mut().unwrap() = n;
        let mut out = vec![T::zero(); m * n];
        gemm(
            T::one(),
            self.value(a).data(),
            MatView::row_major(0, m, k),
            self.value(b).data(),
            MatView::row_major(0, k, n),
            T::zero(),
            &mut out,
            MatView::row_major(0, m, n),
        );
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(
            Tensor::new(out_shape, out)?,
            Op::MatMul { a: a.0, b: b.0 },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::shape("add", self.shape(a), self.shape(b)));
        }
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let rg = self.rg(a.0) || self.rg(b.0);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::Add { a: a.0, b: b.0 }, rg))
    }

    /// Adds `b` to every trailing block of `a`; `b`'s shape must be a suffix of `a`'s.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(TensorError::shape("add_broadcast", sa, sb));
        }
        let bd = self.value(b).data();
        let block = bd.len().max(1);
        let data: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bd[i % block])
            .collect();
        let rg = self.rg(a.0) || self.rg(b.0);
        let shape = sa.to_vec();
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::AddBroadcast { a: a.0, b: b.0 },
            rg,
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::shape("mul", self.shape(a), self.shape(b)));
        }
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let rg = self.rg(a.0) || self.rg(b.0);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul { a: a.0, b: b.0 }, rg))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let data = self.value(a).data().iter().map(|&x| x * factor).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a.0);
        self.push(
            Tensor::new(shape, data).expect("same shape"),
            Op::Scale { a: a.0, factor },
            rg,
        )
    }

    /// `x @ w + bias`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_broadcast(y, bias)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| x.max(T::zero()))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a.0);
        self.push(
            Tensor::new(shape, data).expect("same shape"),
            Op::Relu { a: a.0 },
            rg,
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(a.0);
        Ok(self.push(value, Op::Reshape { a: a.0 }, rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::invalid("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::invalid(
                "concat",
                format!("axis {axis} out of range for {base:?}"),
            ));
        }
        let mut axis_total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(TensorError::shape("concat", &base, s));
            }
            axis_total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = axis_total;
        let (outer, _, inner) = split_axis(&out_shape, axis);
        let mut out = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for p in parts {
                let v = self.value(*p);
                let chunk = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = parts.iter().any(|p| self.rg(p.0));
        let op = Op::Concat {
            parts: parts.iter().map(|p| p.0).collect(),
            axis,
        };
        Ok(self.push(Tensor::new(out_shape, out)?, op, rg))
    }

    /// Mean over `axis`, which is removed from the shape.
    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || s[axis] == 0 {
            return Err(TensorError::invalid(
                "mean",
                format!("bad axis {axis} for {s:?}"),
            ));
        }
        let (outer, len, inner) = split_axis(&s, axis);
        let x = self.value(a).data();
        let inv = T::one() / T::from_usize(len).unwrap();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let src = &x[(o * len + j) * inner..(o * len + j + 1) * inner];
                for (d, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        let mut out_shape = s;
        out_shape.remove(axis);
        let rg = self.rg(a.0);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::Mean { a: a.0, axis }, rg))
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().copied().sum();
        let rg = self.rg(a.0);
        self.push(Tensor::scalar(total), Op::Sum { a: a.0 }, rg)
    }

    /// Gathers rows of `table` (`[n, ...]`) by `ids`; output shape is `prefix ++ table.shape[1..]`.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize], prefix: &[usize]) -> Result<Var> {
        let ts = self.shape(table).to_vec();
        if ts.is_empty() || prefix.iter().product::<usize>() != ids.len() {
            return Err(TensorError::shape("embedding_lookup", &ts, prefix));
        }
        let rows = ts[0];
        let row_len: usize = ts[1..].iter().product();
        if let Some(bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(TensorError::invalid(
                "embedding_lookup",
                format!("id {bad} out of range for table of {rows} rows"),
            ));
        }
        let t = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * row_len);
        for &i in ids {
            out.extend_from_slice(&t[i * row_len..(i + 1) * row_len]);
        }
        let mut out_shape = prefix.to_vec();
        out_shape.extend_from_slice(&ts[1..]);
        let rg = self.rg(table.0);
        let op = Op::Lookup {
            table: table.0,
            ids: ids.to_vec(),
        };
        Ok(self.push(Tensor::new(out_shape, out)?, op, rg))
    }

    /// Normalises over the last dimension, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let d = self.value(x).last_dim();
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(TensorError::shape(
                "layer_norm",
                self.shape(x),
                self.shape(gamma),
            ));
        }
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let rows = xs.len() / d.max(1);
        let inv_d = T::one() / T::from_usize(d).unwrap();
        let eps = T::from_f64_lossy(LAYER_NORM_EPS);
        let mut xhat = vec![T::zero(); xs.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xs.len()];
        for r in 0..rows {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(x.0) || self.rg(gamma.0) || self.rg(beta.0);
        let shape = self.shape(x).to_vec();
        let op = Op::LayerNorm {
            x: x.0,
            gamma: gamma.0,
            beta: beta.0,
            xhat,
            rstd,
        };
        Ok(self.push(Tensor::new(shape, out)?, op, rg))
    }

    /// Inverted dropout. Identity when `train` is false or `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64, train: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::invalid(
                "dropout",
                format!("p = {p} not in [0, 1)"),
            ));
        }
        if !train || p == 0.0 {
            return Ok(a);
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - p));
        let n = self.value(a).len();
        let mask: Vec<T> = (0..n)
            .map(|_| {
                if self.rng.gen::<f64>() < p {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let data = zip_map(self.value(a).data(), &mask, |x, m| x * m);
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a.0);
        Ok(self.push(Tensor::new(shape, data)?, Op::Dropout { a: a.0, mask }, rg))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() {
            return Err(TensorError::invalid(
                "softmax",
                format!("axis {axis} out of range for {s:?}"),
            ));
        }
        let out = softmax_along(self.value(a).data(), &s, axis, false);
        let rg = self.rg(a.0);
        Ok(self.push(Tensor::new(s, out)?, Op::Softmax { a: a.0, axis }, rg))
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() {
            return Err(TensorError::invalid(
                "log_softmax",
                format!("axis {axis} out of range for {s:?}"),
            ));
        }
        let out = softmax_along(self.value(a).data(), &s, axis, true);
        let rg = self.rg(a.0);
        Ok(self.push(Tensor::new(s, out)?, Op::LogSoftmax { a: a.0, axis }, rg))
    }

    /// Scaled dot-product attention over already-projected `q`, `k`, `v`
    /// (each `[batch, len, d]`), split into `heads` heads of width `d / heads`.
    ///
    /// `key_mask` (`[batch, len]`, `true` = attend) adds a large negative
    /// score to ignored keys.
    pub fn multi_head_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        key_mask: Option<&[bool]>,
        heads: usize,
    ) -> Result<Var> {
        let s = self.shape(q).to_vec();
        if s.len() != 3 || self.shape(k) != s.as_slice() || self.shape(v) != s.as_slice() {
            return Err(TensorError::shape(
                "multi_head_attention",
                &s,
                self.shape(k),
            ));
        }
        let (b, l, d) = (s[0], s[1], s[2]);
        if heads == 0 || d % heads != 0 {
            return Err(TensorError::invalid(
                "multi_head_attention",
                format!("width {d} not divisible by {heads} heads"),
            ));
        }
        if let Some(m) = key_mask {
            if m.len() != b * l {
                return Err(TensorError::shape(
                    "multi_head_attention",
                    &[b, l],
                    &[m.len()],
                ));
            }
        }
        let dims = attention::Dims {
            batch: b,
            len: l,
            width: d,
            heads,
        };
        let (out, probs) = attention::forward(
            dims,
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            key_mask,
        );
        let rg = self.rg(q.0) || self.rg(k.0) || self.rg(v.0);
        let op = Op::Attention {
            q: q.0,
            k: k.0,
            v: v.0,
            heads,
            probs,
        };
        Ok(self.push(Tensor::new(s, out)?, op, rg))
    }

    /// Mean cross entropy of `logits` (`[n, c]`) against class `targets`.
    ///
    /// With smoothing `eps` the target distribution is `(1 - eps)` on the true
    /// class plus `eps / c` everywhere. `class_weights` scale each class term;
    /// the sum is normalised by the total weight of the true classes.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        label_smoothing: f64,
        class_weights: Option<&[T]>,
    ) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != targets.len() {
            return Err(TensorError::shape("cross_entropy", &s, &[targets.len()]));
        }
        let (value, dlogits) = loss::cross_entropy(
            self.value(logits).data(),
            s[1],
            targets,
            label_smoothing,
            class_weights,
        )?;
        let rg = self.rg(logits.0);
        Ok(self.push(
            Tensor::scalar(value),
            Op::CrossEntropy {
                logits: logits.0,
                dlogits,
            },
            rg,
        ))
    }

    /// Weighted sum of per-element binary cross entropies with logits.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T], weights: &[T]) -> Result<Var> {
        let n = self.value(logits).len();
        if targets.len() != n || weights.len() != n {
            return Err(TensorError::shape(
                "bce_with_logits",
                self.shape(logits),
                &[targets.len()],
            ));
        }
        let (value, dlogits) = loss::bce_with_logits(self.value(logits).data(), targets, weights);
        let rg = self.rg(logits.0);
        Ok(self.push(
            Tensor::scalar(value),
            Op::Bce {
                logits: logits.0,
                dlogits,
            },
            rg,
        ))
    }

    /// Runs the backward pass from scalar `loss` and returns every node's gradient.
    pub fn gradients(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::Backward(format!(
                "loss must be a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.backward_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Backward pass from `loss`, accumulating parameter gradients into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (&id, &var) in &self.param_vars {
            if let Some(g) = grads.get(var) {
                store.grad_mut(id).add_assign(g);
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], idx: usize, g: Tensor<T>) {
        if !self.nodes[idx].requires_grad {
            return;
        }
        match &mut grads[idx] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backward_node(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[idx];
        let gd = g.data();
        let like = |i: usize, data: Vec<T>| {
            Tensor::new(self.nodes[i].value.shape().to_vec(), data).expect("gradient shape")
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul { a, b } => {
                let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (k, n) = (vb.shape()[0], vb.shape()[1]);
                let m = va.len() / k.max(1);
                if self.rg(*a) {
                    let mut da = vec![T::zero(); m * k];
                    gemm(
                        T::one(),
                        gd,
                        MatView::row_major(0, m, n),
                        vb.data(),
                        MatView::row_major(0, k, n).t(),
                        T::zero(),
                        &mut da,
                        MatView::row_major(0, m, k),
                    );
                    self.accumulate(grads, *a, like(*a, da));
                }
                if self.rg(*b) {
                    let mut db = vec![T::zero(); k * n];
                    gemm(
                        T::one(),
                        va.data(),
                        MatView::row_major(0, m, k).t(),
                        gd,
                        MatView::row_major(0, m, n),
                        T::zero(),
                        &mut db,
                        MatView::row_major(0, k, n),
                    );
                    self.accumulate(grads, *b, like(*b, db));
                }
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddBroadcast { a, b } => {
                self.accumulate(grads, *a, g.clone());
                if self.rg(*b) {
                    let block = self.nodes[*b].value.len().max(1);
                    let mut db = vec![T::zero(); block];
                    for (i, &v) in gd.iter().enumerate() {
                        db[i % block] += v;
                    }
                    self.accumulate(grads, *b, like(*b, db));
                }
            }
            Op::Mul { a, b } => {
                let (va, vb) = (self.nodes[*a].value.data(), self.nodes[*b].value.data());
                if self.rg(*a) {
                    self.accumulate(grads, *a, like(*a, zip_map(gd, vb, |g, y| g * y)));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, like(*b, zip_map(gd, va, |g, x| g * x)));
                }
            }
            Op::Scale { a, factor } => {
                let f = *factor;
                self.accumulate(grads, *a, like(*a, gd.iter().map(|&v| v * f).collect()));
            }
            Op::Relu { a } => {
                let x = self.nodes[*a].value.data();
                let da = zip_map(gd, x, |g, x| if x > T::zero() { g } else { T::zero() });
                self.accumulate(grads, *a, like(*a, da));
            }
            Op::Reshape { a } => {
                self.accumulate(grads, *a, like(*a, gd.to_vec()));
            }
            Op::Concat { parts, axis } => {
                let (outer, _, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                let mut pieces: Vec<Vec<T>> = parts
                    .iter()
                    .map(|&p| Vec::with_capacity(self.nodes[p].value.len()))
                    .collect();
                for _ in 0..outer {
                    for (pi, &p) in parts.iter().enumerate() {
                        let chunk = self.nodes[p].value.shape()[*axis] * inner;
                        pieces[pi].extend_from_slice(&gd[offset..offset + chunk]);
                        offset += chunk;
                    }
                }
                for (piece, &p) in pieces.into_iter().zip(parts) {
                    self.accumulate(grads, p, like(p, piece));
                }
            }
            Op::Mean { a, axis } => {
                let s = self.nodes[*a].value.shape();
                let (outer, len, inner) = split_axis(s, *axis);
                let inv = T::one() / T::from_usize(len).unwrap();
                let mut da = vec![T::zero(); outer * len * inner];
                for o in 0..outer {
                    for j in 0..len {
                        for i in 0..inner {
                            da[(o * len + j) * inner + i] = gd[o * inner + i] * inv;
                        }
                    }
                }
                self.accumulate(grads, *a, like(*a, da));
            }
            Op::Sum { a } => {
                let n = self.nodes[*a].value.len();
                self.accumulate(grads, *a, like(*a, vec![gd[0]; n]));
            }
            Op::Lookup { table, ids } => {
                let t = &self.nodes[*table].value;
                let row_len: usize = t.shape()[1..].iter().product();
                let mut dt = vec![T::zero(); t.len()];
                for (pos, &i) in ids.iter().enumerate() {
                    let src = &gd[pos * row_len..(pos + 1) * row_len];
                    for (d, &v) in dt[i * row_len..(i + 1) * row_len].iter_mut().zip(src) {
                        *d += v;
                    }
                }
                self.accumulate(grads, *table, like(*table, dt));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gm = self.nodes[*gamma].value.data();
                let d = gm.len();
                let rows = rstd.len();
                if self.rg(*gamma) || self.rg(*beta) {
                    let mut dg = vec![T::zero(); d];
                    let mut db = vec![T::zero(); d];
                    for r in 0..rows {
                        for j in 0..d {
                            dg[j] += gd[r * d + j] * xhat[r * d + j];
                            db[j] += gd[r * d + j];
                        }
                    }
                    self.accumulate(grads, *gamma, like(*gamma, dg));
                    self.accumulate(grads, *beta, like(*beta, db));
                }
                if self.rg(*x) {
                    let inv_d = T::one() / T::from_usize(d).unwrap();
                    let mut dx = vec![T::zero(); rows * d];
                    for r in 0..rows {
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for j in 0..d {
                            let dh = gd[r * d + j] * gm[j];
                            mean_dh += dh;
                            mean_dh_h += dh * xhat[r * d + j];
                        }
                        mean_dh *= inv_d;
                        mean_dh_h *= inv_d;
                        for j in 0..d {
                            let dh = gd[r * d + j] * gm[j];
                            dx[r * d + j] = rstd[r] * (dh - mean_dh - xhat[r * d + j] * mean_dh_h);
                        }
                    }
                    self.accumulate(grads, *x, like(*x, dx));
                }
            }
            Op::Dropout { a, mask } => {
                self.accumulate(grads, *a, like(*a, zip_map(gd, mask, |g, m| g * m)));
            }
            Op::Softmax { a, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = split_axis(node.value.shape(), *axis);
                let mut da = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * len + j) * inner + i;
                        let dot: T = (0..len).map(|j| gd[at(j)] * y[at(j)]).sum();
                        for j in 0..len {
                            da[at(j)] = y[at(j)] * (gd[at(j)] - dot);
                        }
                    }
                }
                self.accumulate(grads, *a, like(*a, da));
            }
            Op::LogSoftmax { a, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = split_axis(node.value.shape(), *axis);
                let mut da = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * len + j) * inner + i;
                        let total: T = (0..len).map(|j| gd[at(j)]).sum();
                        for j in 0..len {
                            da[at(j)] = gd[at(j)] - y[at(j)].exp() * total;
                        }
                    }
                }
                self.accumulate(grads, *a, like(*a, da));
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            } => {
                let s = node.value.shape();
                let dims = attention::Dims {
                    batch: s[0],
                    len: s[1],
                    width: s[2],
                    heads: *heads,
                };
                let (dq, dk, dv) = attention::backward(
                    dims,
                    self.nodes[*q].value.data(),
                    self.nodes[*k].value.data(),
                    self.nodes[*v].value.data(),
                    probs,
                    gd,
                );
                self.accumulate(grads, *q, like(*q, dq));
                self.accumulate(grads, *k, like(*k, dk));
                self.accumulate(grads, *v, like(*v, dv));
            }
            Op::CrossEntropy { logits, dlogits } | Op::Bce { logits, dlogits } => {
                let up = gd[0];
                self.accumulate(
                    grads,
                    *logits,
                    like(*logits, dlogits.iter().map(|&d| d * up).collect()),
                );
            }
        }
    }
}

fn zip_map<T: Scalar>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn softmax_along<T: Scalar>(x: &[T], shape: &[usize], axis: usize, log: bool) -> Vec<T> {
    let (outer, len, inner) = split_axis(shape, axis);
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let max = (0..len).map(|j| x[at(j)]).fold(T::neg_infinity(), T::max);
            let total: T = (0..len).map(|j| (x[at(j)] - max).exp()).sum();
            let log_total = total.ln();
            for j in 0..len {
                let shifted = x[at(j)] - max;
                out[at(j)] = if log {
                    shifted - log_total
                } else {
                    shifted.exp() / total
                };
            }
        }
    }
    out
}
