//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every op applied to its variables. Values are computed
//! eagerly; [`Graph::backward`] replays the tape in reverse. Parameters enter
//! through [`Graph::param`] and are deduplicated so their gradients accumulate.

use std::collections::HashMap;

use crate::error::{shape_err, Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{self, check_finite, conv_weight_dims, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
enum Unary {
    Relu,
    Sigmoid,
    Softplus,
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    BiasCols(Var, Var),
    BiasRows(Var, Var),
    Conv1d(Var, Var, usize),
    Unary(Var, Unary),
    PairMeanCols(Var),
    Transpose(Var),
    SoftmaxRows(Var),
    LayerNormRows(Var, Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MeanRows(Var),
    L2NormRows(Var),
    Sum(Var),
    SmoothMse(SmoothMse),
    HardMse { pred: Var, target: Vec<f64>, valid: Vec<bool> },
    CrossEntropy { logits: Var, labels: Vec<usize> },
    Triplet { emb: Var, picks: Vec<TripletPick> },
}

#[derive(Debug)]
struct SmoothMse {
    m_hat: Var,
    sigma_hat: Var,
    m_star: Vec<f64>,
    valid: Vec<bool>,
    lo: f64,
    hi: f64,
}

#[derive(Debug, Clone, Copy)]
struct TripletPick {
    anchor: usize,
    pos: usize,
    neg: usize,
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
}

pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
    params: HashMap<ParamId, Var>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward pass, indexed by variable.
pub struct Grads<S> {
    grads: Vec<Option<Vec<S>>>,
    params: Vec<(ParamId, Var)>,
}

impl<S: Scalar> Grads<S> {
    pub fn wrt(&self, v: Var) -> Option<&[S]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the parameter gradients into `store`'s gradient slots.
    pub fn accumulate_into(&self, store: &mut ParamStore<S>) {
        for &(pid, var) in &self.params {
            let Some(g) = self.wrt(var) else { continue };
            let p = store.get_mut(pid);
            match &mut p.grad {
                Some(existing) => {
                    for (e, &v) in existing.data_mut().iter_mut().zip(g) {
                        *e += v;
                    }
                }
                None => {
                    p.grad = Some(Tensor::new(p.value.shape().to_vec(), g.to_vec()).expect("param shape"));
                }
            }
        }
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, name: &'static str) -> Result<Var> {
        let value = check_finite(value, name)?;
        let needs_grad = match &op {
            Op::Leaf => false,
            _ => self.parents(&op).iter().any(|p| self.nodes[p.0].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn parents(&self, op: &Op<S>) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Mul(a, b) | Op::BiasCols(a, b) | Op::BiasRows(a, b) => {
                vec![*a, *b]
            }
            Op::Conv1d(a, b, _) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Unary(a, _)
            | Op::PairMeanCols(a)
            | Op::Transpose(a)
            | Op::SoftmaxRows(a)
            | Op::MeanRows(a)
            | Op::L2NormRows(a)
            | Op::Sum(a) => vec![*a],
            Op::LayerNormRows(x, g, b) => vec![*x, *g, *b],
            Op::ConcatCols(vs) | Op::ConcatRows(vs) => vs.clone(),
            Op::SmoothMse(s) => vec![s.m_hat, s.sigma_hat],
            Op::HardMse { pred, .. } => vec![*pred],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::Triplet { emb, .. } => vec![*emb],
        }
    }

    /// A constant input. Its gradient is still reported when `requires_grad` is set.
    pub fn input(&mut self, value: Tensor<S>, requires_grad: bool) -> Result<Var> {
        let value = check_finite(value, "input")?;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: store.value(id).clone(),
            op: Op::Leaf,
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.value(v).dims2(op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("add", format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p + q).collect();
        let out = Tensor::from_parts(x.shape().to_vec(), data);
        self.push(out, Op::Add(a, b), "add")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("mul", format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p * q).collect();
        let out = Tensor::from_parts(x.shape().to_vec(), data);
        self.push(out, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, c: S) -> Result<Var> {
        let x = self.value(a);
        let out = Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|&v| v * c).collect());
        self.push(out, Op::Scale(a, c), "scale")
    }

    /// `x[c,t] + b[c]` for `x: C×T`, `b` of length C.
    pub fn bias_cols(&mut self, x: Var, b: Var) -> Result<Var> {
        let (r, c) = self.dims2(x, "bias_cols")?;
        if self.value(b).len() != r {
            return Err(shape_err("bias_cols", format!("bias length {} for {r} rows", self.value(b).len())));
        }
        let mut data = self.value(x).data().to_vec();
        let bias = self.value(b).data();
        for (row, &bv) in data.chunks_mut(c).zip(bias) {
            row.iter_mut().for_each(|v| *v += bv);
        }
        self.push(Tensor::from_parts(vec![r, c], data), Op::BiasCols(x, b), "bias_cols")
    }

    /// `x[t,d] + b[d]` for `x: T×D`, `b` of length D.
    pub fn bias_rows(&mut self, x: Var, b: Var) -> Result<Var> {
        let (r, c) = self.dims2(x, "bias_rows")?;
        if self.value(b).len() != c {
            return Err(shape_err("bias_rows", format!("bias length {} for {c} columns", self.value(b).len())));
        }
        let mut data = self.value(x).data().to_vec();
        let bias = self.value(b).data();
        for row in data.chunks_mut(c) {
            row.iter_mut().zip(bias).for_each(|(v, &bv)| *v += bv);
        }
        self.push(Tensor::from_parts(vec![r, c], data), Op::BiasRows(x, b), "bias_rows")
    }

    pub fn conv1d(&mut self, x: Var, w: Var, dilation: usize) -> Result<Var> {
        let out = tensor::conv1d_dilated(self.value(x), self.value(w), dilation)?;
        self.push(out, Op::Conv1d(x, w, dilation), "conv1d_dilated")
    }

    fn unary(&mut self, a: Var, kind: Unary, name: &'static str) -> Result<Var> {
        let x = self.value(a);
        let f = |v: S| -> S {
            match kind {
                Unary::Relu => v.max(S::zero()),
                Unary::Sigmoid => sigmoid(v),
                Unary::Softplus => softplus(v),
            }
        };
        let out = Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect());
        self.push(out, Op::Unary(a, kind), name)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Relu, "relu")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Sigmoid, "sigmoid")
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Softplus, "softplus")
    }

    /// Averages adjacent columns: `C×T -> C×(T-1)`.
    pub fn pair_mean_cols(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims2(a, "pair_mean_cols")?;
        if c < 2 {
            return Err(shape_err("pair_mean_cols", "need at least two columns"));
        }
        let half = S::of(0.5);
        let x = self.value(a).data();
        let mut data = Vec::with_capacity(r * (c - 1));
        for row in x.chunks(c) {
            data.extend(row.windows(2).map(|w| (w[0] + w[1]) * half));
        }
        self.push(Tensor::from_parts(vec![r, c - 1], data), Op::PairMeanCols(a), "pair_mean_cols")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        self.push(out, Op::Transpose(a), "transpose")
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let out = tensor::softmax_rows(self.value(a))?;
        self.push(out, Op::SoftmaxRows(a), "softmax_rows")
    }

    /// Per-row layer normalization with learned gain and offset of length D.
    pub fn layer_norm_rows(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims2(x, "layer_norm_rows")?;
        if self.value(gain).len() != c || self.value(bias).len() != c {
            return Err(shape_err("layer_norm_rows", "gain/bias length must equal row width"));
        }
        let xs = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut data = Vec::with_capacity(r * c);
        for row in xs.chunks(c) {
            let (mean, inv) = row_stats(row);
            for ((&v, &gv), &bv) in row.iter().zip(g).zip(b) {
                data.push(S::of((v.as_f64() - mean) * inv) * gv + bv);
            }
        }
        self.push(Tensor::from_parts(vec![r, c], data), Op::LayerNormRows(x, gain, bias), "layer_norm_rows")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| shape_err("concat_cols", "no inputs"))?;
        let (r, _) = self.dims2(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.dims2(p, "concat_cols")?;
            if pr != r {
                return Err(shape_err("concat_cols", "row counts differ"));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        self.push(Tensor::from_parts(vec![r, total], data), Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| shape_err("concat_rows", "no inputs"))?;
        let (_, c) = self.dims2(first, "concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (pr, pc) = self.dims2(p, "concat_rows")?;
            if pc != c {
                return Err(shape_err("concat_rows", "column counts differ"));
            }
            rows += pr;
            data.extend_from_slice(self.value(p).data());
        }
        self.push(Tensor::from_parts(vec![rows, c], data), Op::ConcatRows(parts.to_vec()), "concat_rows")
    }

    /// Column means: `T×D -> 1×D`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims2(a, "mean_rows")?;
        let x = self.value(a).data();
        let mut acc = vec![0.0f64; c];
        for row in x.chunks(c) {
            for (s, &v) in acc.iter_mut().zip(row) {
                *s += v.as_f64();
            }
        }
        let data = acc.into_iter().map(|s| S::of(s / r as f64)).collect();
        self.push(Tensor::from_parts(vec![1, c], data), Op::MeanRows(a), "mean_rows")
    }

    /// Scales each row to unit Euclidean norm. A zero row is an error.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims2(a, "l2_normalize_rows")?;
        let x = self.value(a).data();
        let mut data = Vec::with_capacity(r * c);
        for row in x.chunks(c) {
            let norm = row_norm(row);
            if !(norm > 1e-12) {
                return Err(Error::Degenerate("cannot normalize a zero-norm vector".into()));
            }
            data.extend(row.iter().map(|&v| S::of(v.as_f64() / norm)));
        }
        self.push(Tensor::from_parts(vec![r, c], data), Op::L2NormRows(a), "l2_normalize_rows")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).data().iter().map(|v| v.as_f64()).sum();
        self.push(Tensor::scalar(S::of(s)), Op::Sum(a), "sum")
    }

    /// Squared error against Gaussian-smoothed switch labels with per-switch
    /// widths taken from `sigma_hat` clamped to `[lo, hi]`.
    ///
    /// Only boundaries with `valid[t]` contribute residuals.
    pub fn smooth_mse(
        &mut self,
        m_hat: Var,
        sigma_hat: Var,
        m_star: &[f64],
        valid: &[bool],
        lo: f64,
        hi: f64,
    ) -> Result<Var> {
        let n = self.value(m_hat).len();
        if self.value(sigma_hat).len() != n || m_star.len() != n || valid.len() != n {
            return Err(shape_err("smooth_mse", "m_hat, sigma_hat, m_star and mask lengths differ"));
        }
        let sigma: Vec<f64> = self.value(sigma_hat).data().iter().map(|s| s.as_f64()).collect();
        let labels = smooth_labels_f64(m_star, &sigma, lo, hi);
        let m = self.value(m_hat).data();
        let loss: f64 = (0..n)
            .filter(|&t| valid[t])
            .map(|t| (m[t].as_f64() - labels[t]).powi(2))
            .sum();
        let op = Op::SmoothMse(SmoothMse {
            m_hat,
            sigma_hat,
            m_star: m_star.to_vec(),
            valid: valid.to_vec(),
            lo,
            hi,
        });
        self.push(Tensor::scalar(S::of(loss)), op, "smooth_mse")
    }

    /// Plain squared error against a fixed target over `valid` positions.
    pub fn hard_mse(&mut self, pred: Var, target: &[f64], valid: &[bool]) -> Result<Var> {
        let p = self.value(pred).data();
        if p.len() != target.len() || valid.len() != target.len() {
            return Err(shape_err("hard_mse", "lengths differ"));
        }
        let loss: f64 = (0..p.len())
            .filter(|&t| valid[t])
            .map(|t| (p[t].as_f64() - target[t]).powi(2))
            .sum();
        let op = Op::HardMse {
            pred,
            target: target.to_vec(),
            valid: valid.to_vec(),
        };
        self.push(Tensor::scalar(S::of(loss)), op, "hard_mse")
    }

    /// Summed softmax cross-entropy of `logits: N×C` against class labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, c) = self.dims2(logits, "cross_entropy")?;
        if labels.len() != n || labels.iter().any(|&l| l >= c) {
            return Err(shape_err("cross_entropy", "label count or range mismatch"));
        }
        let x = self.value(logits).data();
        let mut loss = 0.0;
        for (row, &l) in x.chunks(c).zip(labels) {
            loss += log_sum_exp(row) - row[l].as_f64();
        }
        let op = Op::CrossEntropy {
            logits,
            labels: labels.to_vec(),
        };
        self.push(Tensor::scalar(S::of(loss)), op, "cross_entropy")
    }

    /// Batch-hard triplet loss over the rows of `emb`: for each anchor the
    /// farthest same-label row and the nearest other-label row, hinged at `margin`.
    pub fn batch_hard_triplet(&mut self, emb: Var, labels: &[usize], margin: f64) -> Result<Var> {
        let (n, c) = self.dims2(emb, "batch_hard_triplet")?;
        if labels.len() != n {
            return Err(shape_err("batch_hard_triplet", "label count mismatch"));
        }
        let first = labels[0];
        if labels.iter().all(|&l| l == first) {
            return Err(Error::InvalidArgument(
                "triplet loss needs at least two identities in the batch".into(),
            ));
        }
        let x = self.value(emb).data();
        let dist = |i: usize, j: usize| row_dist(&x[i * c..(i + 1) * c], &x[j * c..(j + 1) * c]);
        let mut loss = 0.0;
        let mut picks = Vec::new();
        for a in 0..n {
            let mut pos: Option<(usize, f64)> = None;
            let mut neg: Option<(usize, f64)> = None;
            for j in 0..n {
                if j == a {
                    continue;
                }
                let d = dist(a, j);
                if labels[j] == labels[a] {
                    if pos.is_none_or(|(_, pd)| d > pd) {
                        pos = Some((j, d));
                    }
                } else if neg.is_none_or(|(_, nd)| d < nd) {
                    neg = Some((j, d));
                }
            }
            if let (Some((p, dp)), Some((q, dn))) = (pos, neg) {
                let h = dp - dn + margin;
                if h > 0.0 {
                    loss += h;
                    picks.push(TripletPick { anchor: a, pos: p, neg: q });
                }
            }
        }
        self.push(Tensor::scalar(S::of(loss)), Op::Triplet { emb, picks }, "batch_hard_triplet")
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads<S>> {
        if self.value(loss).len() != 1 {
            return Err(shape_err("backward", "loss must be a single value"));
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![S::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.backward_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut params: Vec<(ParamId, Var)> = self.params.iter().map(|(&p, &v)| (p, v)).collect();
        params.sort();
        Ok(Grads { grads, params })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<S>>], v: Var) -> Option<&'g mut [S]> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![S::zero(); n]).as_mut_slice())
    }

    fn backward_node(&self, node: &Node<S>, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2("matmul").expect("matrix");
                let n = self.value(*b).cols();
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.acc(grads, *a) {
                    tensor::gemm_nt(g, bv, m, n, k, ga);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    tensor::gemm_tn(av, g, m, k, n, gb);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gv) = self.acc(grads, v) {
                        gv.iter_mut().zip(g).for_each(|(o, &x)| *o += x);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.acc(grads, *a) {
                    for ((o, &x), &w) in ga.iter_mut().zip(g).zip(bv) {
                        *o += x * w;
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for ((o, &x), &w) in gb.iter_mut().zip(g).zip(av) {
                        *o += x * w;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(o, &x)| *o += x * *c);
                }
            }
            Op::BiasCols(x, b) => {
                let c = y.cols();
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(o, &v)| *o += v);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for (o, row) in gb.iter_mut().zip(g.chunks(c)) {
                        *o += S::of(row.iter().map(|v| v.as_f64()).sum());
                    }
                }
            }
            Op::BiasRows(x, b) => {
                let c = y.cols();
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(o, &v)| *o += v);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    let mut s = vec![0.0f64; c];
                    for row in g.chunks(c) {
                        s.iter_mut().zip(row).for_each(|(a, v)| *a += v.as_f64());
                    }
                    gb.iter_mut().zip(s).for_each(|(o, v)| *o += S::of(v));
                }
            }
            Op::Conv1d(x, w, d) => {
                let (c_in, t) = self.value(*x).dims2("conv").expect("matrix");
                let (c_out, _) = conv_weight_dims(self.value(*w)).expect("kernel");
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                if let Some(gx) = self.acc(grads, *x) {
                    tensor::conv_backward(xv, wv, g, c_in, c_out, t, *d, Some(gx), None);
                }
                if let Some(gw) = self.acc(grads, *w) {
                    tensor::conv_backward(xv, wv, g, c_in, c_out, t, *d, None, Some(gw));
                }
            }
            Op::Unary(a, kind) => {
                let xv = self.value(*a).data();
                if let Some(ga) = self.acc(grads, *a) {
                    for (((o, &gy), &xi), &yi) in ga.iter_mut().zip(g).zip(xv).zip(y.data()) {
                        let d = match kind {
                            Unary::Relu => {
                                if xi > S::zero() {
                                    S::one()
                                } else {
                                    S::zero()
                                }
                            }
                            Unary::Sigmoid => yi * (S::one() - yi),
                            Unary::Softplus => sigmoid(xi),
                        };
                        *o += gy * d;
                    }
                }
            }
            Op::PairMeanCols(a) => {
                let c = self.value(*a).cols();
                let half = S::of(0.5);
                if let Some(ga) = self.acc(grads, *a) {
                    for (grow, gyrow) in ga.chunks_mut(c).zip(g.chunks(c - 1)) {
                        for (t, &gy) in gyrow.iter().enumerate() {
                            grow[t] += gy * half;
                            grow[t + 1] += gy * half;
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (y.rows(), y.cols());
                if let Some(ga) = self.acc(grads, *a) {
                    // y is r×c, a is c×r
                    for i in 0..r {
                        for j in 0..c {
                            ga[j * r + i] += g[i * c + j];
                        }
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let c = y.cols();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((grow, gyrow), yrow) in ga.chunks_mut(c).zip(g.chunks(c)).zip(y.data().chunks(c)) {
                        let dot: f64 = gyrow.iter().zip(yrow).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
                        let dot = S::of(dot);
                        for ((o, &gy), &yi) in grow.iter_mut().zip(gyrow).zip(yrow) {
                            *o += yi * (gy - dot);
                        }
                    }
                }
            }
            Op::LayerNormRows(x, gain, bias) => {
                let c = y.cols();
                let xv = self.value(*x).data();
                let gv = self.value(*gain).data();
                if let Some(gb) = self.acc(grads, *bias) {
                    for row in g.chunks(c) {
                        gb.iter_mut().zip(row).for_each(|(o, &v)| *o += v);
                    }
                }
                if let Some(gg) = self.acc(grads, *gain) {
                    for (row, gyrow) in xv.chunks(c).zip(g.chunks(c)) {
                        let (mean, inv) = row_stats(row);
                        for ((o, &xi), &gy) in gg.iter_mut().zip(row).zip(gyrow) {
                            *o += gy * S::of((xi.as_f64() - mean) * inv);
                        }
                    }
                }
                if let Some(gx) = self.acc(grads, *x) {
                    for ((grow, row), gyrow) in gx.chunks_mut(c).zip(xv.chunks(c)).zip(g.chunks(c)) {
                        let (mean, inv) = row_stats(row);
                        let xhat: Vec<f64> = row.iter().map(|v| (v.as_f64() - mean) * inv).collect();
                        let gxhat: Vec<f64> = gyrow.iter().zip(gv).map(|(a, b)| a.as_f64() * b.as_f64()).collect();
                        let m1 = gxhat.iter().sum::<f64>() / c as f64;
                        let m2 = gxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        for (k, o) in grow.iter_mut().enumerate() {
                            *o += S::of(inv * (gxhat[k] - m1 - xhat[k] * m2));
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = y.cols();
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if let Some(gp) = self.acc(grads, p) {
                        for (i, grow) in gp.chunks_mut(w).enumerate() {
                            let src = &g[i * total + off..i * total + off + w];
                            grow.iter_mut().zip(src).for_each(|(o, &v)| *o += v);
                        }
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if let Some(gp) = self.acc(grads, p) {
                        gp.iter_mut().zip(&g[off..off + n]).for_each(|(o, &v)| *o += v);
                    }
                    off += n;
                }
            }
            Op::MeanRows(a) => {
                let (r, c) = (self.value(*a).rows(), self.value(*a).cols());
                let inv = S::of(1.0 / r as f64);
                if let Some(ga) = self.acc(grads, *a) {
                    for grow in ga.chunks_mut(c) {
                        grow.iter_mut().zip(g).for_each(|(o, &v)| *o += v * inv);
                    }
                }
            }
            Op::L2NormRows(a) => {
                let c = y.cols();
                let xv = self.value(*a).data();
                if let Some(ga) = self.acc(grads, *a) {
                    for (((grow, row), yrow), gyrow) in
                        ga.chunks_mut(c).zip(xv.chunks(c)).zip(y.data().chunks(c)).zip(g.chunks(c))
                    {
                        let norm = row_norm(row);
                        let dot: f64 = yrow.iter().zip(gyrow).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
                        for ((o, &yi), &gy) in grow.iter_mut().zip(yrow).zip(gyrow) {
                            *o += S::of((gy.as_f64() - yi.as_f64() * dot) / norm);
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().for_each(|o| *o += g[0]);
                }
            }
            Op::SmoothMse(s) => self.backward_smooth_mse(s, g[0].as_f64(), grads),
            Op::HardMse { pred, target, valid } => {
                let p = self.value(*pred).data();
                if let Some(gp) = self.acc(grads, *pred) {
                    let scale = g[0].as_f64();
                    for t in 0..p.len() {
                        if valid[t] {
                            gp[t] += S::of(2.0 * (p[t].as_f64() - target[t]) * scale);
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, labels } => {
                let c = self.value(*logits).cols();
                let xv = self.value(*logits).data();
                if let Some(gl) = self.acc(grads, *logits) {
                    let scale = g[0].as_f64();
                    for ((grow, row), &l) in gl.chunks_mut(c).zip(xv.chunks(c)).zip(labels) {
                        let lse = log_sum_exp(row);
                        for (k, (o, &v)) in grow.iter_mut().zip(row).enumerate() {
                            let p = (v.as_f64() - lse).exp();
                            let target = if k == l { 1.0 } else { 0.0 };
                            *o += S::of((p - target) * scale);
                        }
                    }
                }
            }
            Op::Triplet { emb, picks } => {
                let c = self.value(*emb).cols();
                let xv = self.value(*emb).data();
                if let Some(ge) = self.acc(grads, *emb) {
                    let scale = g[0].as_f64();
                    let row = |i: usize| &xv[i * c..(i + 1) * c];
                    for pk in picks {
                        let (a, p, n) = (row(pk.anchor), row(pk.pos), row(pk.neg));
                        let dp = row_dist(a, p);
                        let dn = row_dist(a, n);
                        for k in 0..c {
                            let mut da = 0.0;
                            if dp > 0.0 {
                                let u = (a[k].as_f64() - p[k].as_f64()) / dp;
                                da += u;
                                ge[pk.pos * c + k] -= S::of(u * scale);
                            }
                            if dn > 0.0 {
                                let u = (a[k].as_f64() - n[k].as_f64()) / dn;
                                da -= u;
                                ge[pk.neg * c + k] += S::of(u * scale);
                            }
                            ge[pk.anchor * c + k] += S::of(da * scale);
                        }
                    }
                }
            }
        }
    }

    fn backward_smooth_mse(&self, s: &SmoothMse, scale: f64, grads: &mut [Option<Vec<S>>]) {
        let m = self.value(s.m_hat).data();
        let n = m.len();
        let sigma_raw: Vec<f64> = self.value(s.sigma_hat).data().iter().map(|v| v.as_f64()).collect();
        let sigma: Vec<f64> = sigma_raw.iter().map(|&v| v.min(s.hi).max(s.lo)).collect();
        let sums = kernel_sums(&s.m_star, &sigma);
        // residual r_t = m_t - min(sum_t, 1)
        let resid: Vec<f64> = (0..n)
            .map(|t| if s.valid[t] { m[t].as_f64() - sums[t].min(1.0) } else { 0.0 })
            .collect();
        if let Some(gm) = self.acc(grads, s.m_hat) {
            for t in 0..n {
                gm[t] += S::of(2.0 * resid[t] * scale);
            }
        }
        if let Some(gs) = self.acc(grads, s.sigma_hat) {
            for tau in 0..n {
                if s.m_star[tau] == 0.0 || !(sigma_raw[tau] > s.lo && sigma_raw[tau] < s.hi) {
                    continue;
                }
                let sig = sigma[tau];
                let mut acc = 0.0;
                for t in 0..n {
                    if !s.valid[t] || sums[t] >= 1.0 {
                        continue;
                    }
                    let d2 = ((tau as f64) - (t as f64)).powi(2);
                    let k = (-d2 / (sig * sig)).exp();
                    // d label_t / d sigma = m*_tau * k * 2 d² / sigma³
                    let dlabel = s.m_star[tau] * k * 2.0 * d2 / (sig * sig * sig);
                    acc += -2.0 * resid[t] * dlabel;
                }
                gs[tau] += S::of(acc * scale);
            }
        }
    }
}

fn kernel_sums(m_star: &[f64], sigma: &[f64]) -> Vec<f64> {
    let n = m_star.len();
    let mut sums = vec![0.0; n];
    for tau in 0..n {
        if m_star[tau] == 0.0 {
            continue;
        }
        let s2 = sigma[tau] * sigma[tau];
        for (t, out) in sums.iter_mut().enumerate() {
            let d = tau as f64 - t as f64;
            *out += m_star[tau] * (-(d * d) / s2).exp();
        }
    }
    sums
}

/// `min(Σ_τ m*_τ exp(-(τ-t)²/σ̃_τ²), 1)` with `σ̃ = clamp(sigma, lo, hi)`.
pub(crate) fn smooth_labels_f64(m_star: &[f64], sigma: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let clamped: Vec<f64> = sigma.iter().map(|&s| s.min(hi).max(lo)).collect();
    kernel_sums(m_star, &clamped).into_iter().map(|v| v.min(1.0)).collect()
}

#[inline]
fn sigmoid<S: Scalar>(v: S) -> S {
    if v >= S::zero() {
        S::one() / (S::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::one() + e)
    }
}

#[inline]
fn softplus<S: Scalar>(v: S) -> S {
    v.max(S::zero()) + (-v.abs()).exp().ln_1p()
}

fn row_stats<S: Scalar>(row: &[S]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let var = row.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n;
    (mean, 1.0 / (var + LN_EPS).sqrt())
}

fn row_norm<S: Scalar>(row: &[S]) -> f64 {
    row.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt()
}

fn row_dist<S: Scalar>(a: &[S], b: &[S]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn log_sum_exp<S: Scalar>(row: &[S]) -> f64 {
    let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln()
}
