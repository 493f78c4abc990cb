//! Tape-based reverse-mode automatic differentiation.
//!
//! Nodes are appended in evaluation order, so every input of node `i` has an
//! index `< i` and a single reverse sweep over the tape is a valid backward
//! pass. Parameter leaves are looked up in a [`ParamStore`] and their
//! gradients are accumulated back into it by [`Graph::backward`].

use super::params::{ParamId, ParamStore};
use super::tensor::{matmul_at_acc, matmul_bt_acc, Mat};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
struct AttentionNode {
    q: Var,
    k: Var,
    v: Var,
    batch: usize,
    heads: usize,
    causal: bool,
    /// Softmax weights, laid out `[b][h][t_q][t_k]`.
    probs: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Cols(Var, usize),
    ConcatCols(Vec<Var>),
    Rows(Var, usize),
    ConcatRows(Vec<Var>),
    Attention(Box<AttentionNode>),
    ConvTime {
        x: Var,
        kernel: Var,
        batch: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    MseLoss(Var, Var),
    KlLoss {
        mu: Var,
        log_var: Var,
    },
    VelocityLoss {
        x: Var,
        batch: usize,
        frames: usize,
    },
}

struct Node {
    value: Mat,
    op: Op,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

fn check_same(a: &Mat, b: &Mat, what: &str) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::dim(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )))
    }
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

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf; receives no gradient.
    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Input)
    }

    /// Parameter leaf. Repeated calls for the same id return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let idx = id.index();
        if idx >= self.param_vars.len() {
            self.param_vars.resize(idx + 1, None);
        }
        if let Some(v) = self.param_vars[idx] {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id));
        self.param_vars[idx] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same(self.value(a), self.value(b), "add")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds the `1 x C` row vector `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(Error::dim(format!(
                "add_row: {:?} cannot broadcast onto {:?}",
                rv.shape(),
                av.shape()
            )));
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(rv.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same(self.value(a), self.value(b), "sub")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same(self.value(a), self.value(b), "mul")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    /// Columns `start..start + width` of `a`.
    pub fn cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let av = self.value(a);
        if start + width > av.cols() {
            return Err(Error::dim(format!(
                "cols {start}..{} out of {}",
                start + width,
                av.cols()
            )));
        }
        let out = Mat::from_fn(av.rows(), width, |r, c| av.get(r, start + c));
        Ok(self.push(out, Op::Cols(a, start)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::dim("concat_cols: row counts differ"));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let pv = self.value(p);
                out.row_mut(r)[off..off + pv.cols()].copy_from_slice(pv.row(r));
                off += pv.cols();
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Rows `start..start + count` of `a`.
    pub fn rows(&mut self, a: Var, start: usize, count: usize) -> Result<Var> {
        let av = self.value(a);
        if start + count > av.rows() {
            return Err(Error::dim(format!(
                "rows {start}..{} out of {}",
                start + count,
                av.rows()
            )));
        }
        let c = av.cols();
        let out = Mat::from_vec(count, c, av.data()[start * c..(start + count) * c].to_vec())?;
        Ok(self.push(out, Op::Rows(a, start)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        if parts.iter().any(|&p| self.value(p).cols() != cols) {
            return Err(Error::dim("concat_rows: column counts differ"));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rows = data.len() / cols.max(1);
        let out = Mat::from_vec(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    /// Multi-head scaled dot-product attention over already-projected
    /// queries `(T_q*B) x d`, keys and values `(T_k*B) x d`.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        heads: usize,
        causal: bool,
    ) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.cols();
        if heads == 0 || d % heads != 0 {
            return Err(Error::dim(format!("width {d} not divisible by {heads} heads")));
        }
        if kv.cols() != d || vv.cols() != d || !kv.same_shape(vv) {
            return Err(Error::dim("attention: query/key/value widths differ"));
        }
        if batch == 0 || qv.rows() % batch != 0 || kv.rows() % batch != 0 {
            return Err(Error::dim("attention: rows not a multiple of batch"));
        }
        let tq = qv.rows() / batch;
        let tk = kv.rows() / batch;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = vec![0.0; batch * heads * tq * tk];
        let mut out = Mat::zeros(qv.rows(), d);
        let mut scores = vec![0.0; tk];
        for b in 0..batch {
            for h in 0..heads {
                let c0 = h * dh;
                for t in 0..tq {
                    let qrow = &qv.row(t * batch + b)[c0..c0 + dh];
                    let limit = if causal { (t + 1).min(tk) } else { tk };
                    let mut max = f64::NEG_INFINITY;
                    for (s, sc) in scores.iter_mut().enumerate().take(limit) {
                        let krow = &kv.row(s * batch + b)[c0..c0 + dh];
                        let dot: f64 = qrow.iter().zip(krow).map(|(x, y)| x * y).sum();
                        *sc = dot * scale;
                        max = max.max(*sc);
                    }
                    let base = ((b * heads + h) * tq + t) * tk;
                    let mut z = 0.0;
                    for s in 0..limit {
                        let e = (scores[s] - max).exp();
                        probs[base + s] = e;
                        z += e;
                    }
                    for s in 0..limit {
                        probs[base + s] /= z;
                    }
                    let orow = &mut out.row_mut(t * batch + b)[c0..c0 + dh];
                    for s in 0..limit {
                        let p = probs[base + s];
                        let vrow = &vv.row(s * batch + b)[c0..c0 + dh];
                        for (o, x) in orow.iter_mut().zip(vrow) {
                            *o += p * x;
                        }
                    }
                }
            }
        }
        let node = AttentionNode {
            q,
            k,
            v,
            batch,
            heads,
            causal,
            probs,
        };
        Ok(self.push(out, Op::Attention(Box::new(node))))
    }

    /// Attention weights of an attention node as `[b][h]` matrices of shape `T_q x T_k`.
    pub fn attention_weights(&self, node: Var) -> Option<Vec<Vec<Mat>>> {
        let Op::Attention(a) = &self.nodes[node.0].op else {
            return None;
        };
        let tq = self.value(a.q).rows() / a.batch;
        let tk = self.value(a.k).rows() / a.batch;
        let mut out = Vec::with_capacity(a.batch);
        for b in 0..a.batch {
            let mut per_head = Vec::with_capacity(a.heads);
            for h in 0..a.heads {
                let base = (b * a.heads + h) * tq * tk;
                per_head.push(
                    Mat::from_vec(tq, tk, a.probs[base..base + tq * tk].to_vec())
                        .expect("attention probs sized at construction"),
                );
            }
            out.push(per_head);
        }
        Some(out)
    }

    /// Per-channel convolution along time with edge replication.
    ///
    /// `x` is `(T*B) x C`; `kernel` is `C x k` (one filter per channel) or
    /// `1 x k` (shared), `k` odd. Output keeps the input shape.
    pub fn conv_time(&mut self, x: Var, kernel: Var, batch: usize) -> Result<Var> {
        let (xv, kv) = (self.value(x), self.value(kernel));
        let k = kv.cols();
        if k % 2 == 0 {
            return Err(Error::arg(format!("convolution kernel width {k} must be odd")));
        }
        if kv.rows() != 1 && kv.rows() != xv.cols() {
            return Err(Error::dim(format!(
                "kernel has {} rows for {} channels",
                kv.rows(),
                xv.cols()
            )));
        }
        if batch == 0 || xv.rows() % batch != 0 {
            return Err(Error::dim("conv_time: rows not a multiple of batch"));
        }
        let t_len = xv.rows() / batch;
        let half = (k / 2) as isize;
        let shared = kv.rows() == 1;
        let mut out = Mat::zeros(xv.rows(), xv.cols());
        for t in 0..t_len {
            for j in 0..k {
                let src = (t as isize + j as isize - half).clamp(0, t_len as isize - 1) as usize;
                for b in 0..batch {
                    let xin = xv.row(src * batch + b);
                    let o = out.row_mut(t * batch + b);
                    for c in 0..o.len() {
                        let w = kv.get(if shared { 0 } else { c }, j);
                        o[c] += w * xin[c];
                    }
                }
            }
        }
        Ok(self.push(out, Op::ConvTime { x, kernel, batch }))
    }

    /// Row-wise layer normalization with learnable `1 x C` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let c = xv.cols();
        if gv.shape() != (1, c) || bv.shape() != (1, c) {
            return Err(Error::dim("layer_norm: gain/bias must be 1 x C"));
        }
        let mut xhat = Mat::zeros(xv.rows(), c);
        let mut inv_std = Vec::with_capacity(xv.rows());
        let mut out = Mat::zeros(xv.rows(), c);
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for j in 0..c {
                let xh = (row[j] - mean) * is;
                xhat.set(r, j, xh);
                out.set(r, j, xh * gv.get(0, j) + bv.get(0, j));
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// Mean of squared differences, as a `1 x 1` node.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        check_same(p, t, "mse_loss")?;
        let n = p.len().max(1) as f64;
        let s: f64 = p.data().iter().zip(t.data()).map(|(a, b)| (a - b).powi(2)).sum();
        Ok(self.push(Mat::scalar(s / n), Op::MseLoss(pred, target)))
    }

    /// Closed-form KL divergence to N(0, I), summed over columns and averaged over rows.
    pub fn kl_loss(&mut self, mu: Var, log_var: Var) -> Result<Var> {
        let value = kl_divergence(self.value(mu), self.value(log_var))?;
        Ok(self.push(Mat::scalar(value), Op::KlLoss { mu, log_var }))
    }

    /// Mean L2 norm of the velocity change `v[t+frames] - v[t]` with `v[t] = x[t+1] - x[t]`.
    pub fn velocity_loss(&mut self, x: Var, batch: usize, frames: usize) -> Result<Var> {
        let value = velocity_penalty(self.value(x), batch, frames)?;
        Ok(self.push(Mat::scalar(value), Op::VelocityLoss { x, batch, frames }))
    }

    /// Runs the backward sweep from a `1 x 1` node and adds parameter
    /// gradients into `store`. Returns gradients of every node that has one.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::dim("backward needs a scalar loss"));
        }
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.backprop_node(node, &g, &mut grads, store);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(
        &self,
        node: &Node,
        g: &Mat,
        grads: &mut [Option<Mat>],
        store: &mut ParamStore,
    ) {
        match &node.op {
            Op::Input => {}
            Op::Param(id) => store.grad_mut(*id).add_scaled(g, 1.0),
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                matmul_bt_acc(g, bv, self.slot(grads, *a));
                matmul_at_acc(av, g, self.slot(grads, *b));
            }
            Op::Add(a, b) => {
                self.slot(grads, *a).add_scaled(g, 1.0);
                self.slot(grads, *b).add_scaled(g, 1.0);
            }
            Op::AddRow(a, row) => {
                self.slot(grads, *a).add_scaled(g, 1.0);
                let gr = self.slot(grads, *row);
                for r in 0..g.rows() {
                    for (o, x) in gr.data_mut().iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
            }
            Op::Sub(a, b) => {
                self.slot(grads, *a).add_scaled(g, 1.0);
                self.slot(grads, *b).add_scaled(g, -1.0);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let ga = g.zip_map(bv, |x, y| x * y);
                let gb = g.zip_map(av, |x, y| x * y);
                self.slot(grads, *a).add_scaled(&ga, 1.0);
                self.slot(grads, *b).add_scaled(&gb, 1.0);
            }
            Op::Scale(a, s) => self.slot(grads, *a).add_scaled(g, *s),
            Op::Sigmoid(a) => {
                let d = g.zip_map(&node.value, |gi, y| gi * y * (1.0 - y));
                self.slot(grads, *a).add_scaled(&d, 1.0);
            }
            Op::Tanh(a) => {
                let d = g.zip_map(&node.value, |gi, y| gi * (1.0 - y * y));
                self.slot(grads, *a).add_scaled(&d, 1.0);
            }
            Op::Relu(a) => {
                let d = g.zip_map(self.value(*a), |gi, x| if x > 0.0 { gi } else { 0.0 });
                self.slot(grads, *a).add_scaled(&d, 1.0);
            }
            Op::Exp(a) => {
                let d = g.zip_map(&node.value, |gi, y| gi * y);
                self.slot(grads, *a).add_scaled(&d, 1.0);
            }
            Op::Cols(a, start) => {
                let ga = self.slot(grads, *a);
                for r in 0..g.rows() {
                    let dst = &mut ga.row_mut(r)[*start..*start + g.cols()];
                    for (o, x) in dst.iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let gp = self.slot(grads, p);
                    for r in 0..g.rows() {
                        for (o, x) in gp.row_mut(r).iter_mut().zip(&g.row(r)[off..off + w]) {
                            *o += x;
                        }
                    }
                    off += w;
                }
            }
            Op::Rows(a, start) => {
                let ga = self.slot(grads, *a);
                let c = g.cols();
                let dst = &mut ga.data_mut()[start * c..(start + g.rows()) * c];
                for (o, x) in dst.iter_mut().zip(g.data()) {
                    *o += x;
                }
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).rows();
                    let gp = self.slot(grads, p);
                    for (o, x) in gp.data_mut().iter_mut().zip(&g.data()[off * c..(off + n) * c]) {
                        *o += x;
                    }
                    off += n;
                }
            }
            Op::Attention(a) => self.backprop_attention(a, g, grads),
            Op::ConvTime { x, kernel, batch } => {
                let (xv, kv) = (self.value(*x), self.value(*kernel));
                let k = kv.cols();
                let half = (k / 2) as isize;
                let t_len = xv.rows() / batch;
                let shared = kv.rows() == 1;
                let mut gx = Mat::zeros(xv.rows(), xv.cols());
                let mut gk = Mat::zeros(kv.rows(), k);
                for t in 0..t_len {
                    for j in 0..k {
                        let src =
                            (t as isize + j as isize - half).clamp(0, t_len as isize - 1) as usize;
                        for b in 0..*batch {
                            let go = g.row(t * batch + b);
                            let xin = xv.row(src * batch + b);
                            for c in 0..go.len() {
                                let kr = if shared { 0 } else { c };
                                gk.data_mut()[kr * k + j] += go[c] * xin[c];
                                gx.data_mut()[(src * batch + b) * xv.cols() + c] +=
                                    go[c] * kv.get(kr, j);
                            }
                        }
                    }
                }
                self.slot(grads, *x).add_scaled(&gx, 1.0);
                self.slot(grads, *kernel).add_scaled(&gk, 1.0);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gain);
                let c = xhat.cols();
                let mut gx = Mat::zeros(xhat.rows(), c);
                let mut ggain = Mat::zeros(1, c);
                let mut gbias = Mat::zeros(1, c);
                for r in 0..xhat.rows() {
                    let go = g.row(r);
                    let xh = xhat.row(r);
                    let mut sum_d = 0.0;
                    let mut sum_dx = 0.0;
                    for j in 0..c {
                        ggain.data_mut()[j] += go[j] * xh[j];
                        gbias.data_mut()[j] += go[j];
                        let d = go[j] * gv.get(0, j);
                        sum_d += d;
                        sum_dx += d * xh[j];
                    }
                    let n = c as f64;
                    for j in 0..c {
                        let d = go[j] * gv.get(0, j);
                        gx.set(r, j, inv_std[r] * (d - sum_d / n - xh[j] * sum_dx / n));
                    }
                }
                self.slot(grads, *x).add_scaled(&gx, 1.0);
                self.slot(grads, *gain).add_scaled(&ggain, 1.0);
                self.slot(grads, *bias).add_scaled(&gbias, 1.0);
            }
            Op::MseLoss(p, t) => {
                let (pv, tv) = (self.value(*p), self.value(*t));
                let s = 2.0 * g.item() / pv.len().max(1) as f64;
                let d = pv.zip_map(tv, |a, b| (a - b) * s);
                self.slot(grads, *p).add_scaled(&d, 1.0);
                self.slot(grads, *t).add_scaled(&d, -1.0);
            }
            Op::KlLoss { mu, log_var } => {
                let (mv, lv) = (self.value(*mu), self.value(*log_var));
                let s = g.item() / mv.rows().max(1) as f64;
                let gm = mv.map(|m| m * s);
                let gl = lv.map(|l| 0.5 * (l.exp() - 1.0) * s);
                self.slot(grads, *mu).add_scaled(&gm, 1.0);
                self.slot(grads, *log_var).add_scaled(&gl, 1.0);
            }
            Op::VelocityLoss { x, batch, frames } => {
                let xv = self.value(*x);
                let d = velocity_penalty_grad(xv, *batch, *frames, g.item());
                self.slot(grads, *x).add_scaled(&d, 1.0);
            }
        }
    }

    fn backprop_attention(&self, a: &AttentionNode, g: &Mat, grads: &mut [Option<Mat>]) {
        let (qv, kv, vv) = (self.value(a.q), self.value(a.k), self.value(a.v));
        let batch = a.batch;
        let d = qv.cols();
        let dh = d / a.heads;
        let tq = qv.rows() / batch;
        let tk = kv.rows() / batch;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut gq = Mat::zeros(qv.rows(), d);
        let mut gk = Mat::zeros(kv.rows(), d);
        let mut gv = Mat::zeros(vv.rows(), d);
        let mut dp = vec![0.0; tk];
        for b in 0..batch {
            for h in 0..a.heads {
                let c0 = h * dh;
                for t in 0..tq {
                    let limit = if a.causal { (t + 1).min(tk) } else { tk };
                    let base = ((b * a.heads + h) * tq + t) * tk;
                    let go = &g.row(t * batch + b)[c0..c0 + dh];
                    let mut weighted = 0.0;
                    for s in 0..limit {
                        let p = a.probs[base + s];
                        let vrow = &vv.row(s * batch + b)[c0..c0 + dh];
                        dp[s] = go.iter().zip(vrow).map(|(x, y)| x * y).sum();
                        weighted += p * dp[s];
                        let gvrow = &mut gv.row_mut(s * batch + b)[c0..c0 + dh];
                        for (o, x) in gvrow.iter_mut().zip(go) {
                            *o += p * x;
                        }
                    }
                    for s in 0..limit {
                        let ds = a.probs[base + s] * (dp[s] - weighted) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let qi = t * batch + b;
                        let ki = s * batch + b;
                        for j in 0..dh {
                            let qj = qv.get(qi, c0 + j);
                            let kj = kv.get(ki, c0 + j);
                            gq.data_mut()[qi * d + c0 + j] += ds * kj;
                            gk.data_mut()[ki * d + c0 + j] += ds * qj;
                        }
                    }
                }
            }
        }
        self.slot(grads, a.q).add_scaled(&gq, 1.0);
        self.slot(grads, a.k).add_scaled(&gk, 1.0);
        self.slot(grads, a.v).add_scaled(&gv, 1.0);
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Mat>], v: Var) -> &'g mut Mat {
        let value = &self.nodes[v.0].value;
        grads[v.0].get_or_insert_with(|| Mat::zeros(value.rows(), value.cols()))
    }
}

/// Gradients from one backward sweep, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `0.5 * sum(mu^2 + exp(log_var) - log_var - 1)` per row, averaged over rows.
pub fn kl_divergence(mu: &Mat, log_var: &Mat) -> Result<f64> {
    check_same(mu, log_var, "kl_loss")?;
    let total: f64 = mu
        .data()
        .iter()
        .zip(log_var.data())
        .map(|(m, l)| m * m + l.exp() - l - 1.0)
        .sum();
    Ok(0.5 * total / mu.rows().max(1) as f64)
}

fn velocity_check(x: &Mat, batch: usize, frames: usize) -> Result<usize> {
    if batch == 0 || x.rows() % batch != 0 {
        return Err(Error::dim("velocity_loss: rows not a multiple of batch"));
    }
    if frames == 0 {
        return Err(Error::arg("velocity_loss: frames must be >= 1"));
    }
    let t_len = x.rows() / batch;
    if t_len < frames + 2 {
        return Err(Error::arg(format!(
            "velocity_loss needs at least {} frames, got {t_len}",
            frames + 2
        )));
    }
    Ok(t_len)
}

fn velocity_delta(x: &Mat, batch: usize, frames: usize, t: usize, b: usize, out: &mut [f64]) {
    let r = |s: usize| x.row(s * batch + b);
    let (a0, a1, a2, a3) = (r(t), r(t + 1), r(t + frames), r(t + frames + 1));
    for (c, o) in out.iter_mut().enumerate() {
        *o = (a3[c] - a2[c]) - (a1[c] - a0[c]);
    }
}

pub(crate) fn velocity_penalty(x: &Mat, batch: usize, frames: usize) -> Result<f64> {
    let t_len = velocity_check(x, batch, frames)?;
    let steps = t_len - 1 - frames;
    let mut delta = vec![0.0; x.cols()];
    let mut total = 0.0;
    for b in 0..batch {
        for t in 0..steps {
            velocity_delta(x, batch, frames, t, b, &mut delta);
            total += delta.iter().map(|d| d * d).sum::<f64>().sqrt();
        }
    }
    Ok(total / (steps * batch) as f64)
}

fn velocity_penalty_grad(x: &Mat, batch: usize, frames: usize, upstream: f64) -> Mat {
    let t_len = x.rows() / batch;
    let steps = t_len - 1 - frames;
    let s = upstream / (steps * batch) as f64;
    let mut out = Mat::zeros(x.rows(), x.cols());
    let mut delta = vec![0.0; x.cols()];
    for b in 0..batch {
        for t in 0..steps {
            velocity_delta(x, batch, frames, t, b, &mut delta);
            let norm = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            for (c, d) in delta.iter().enumerate() {
                let u = s * d / norm;
                let cols = x.cols();
                let data = out.data_mut();
                data[((t + frames + 1) * batch + b) * cols + c] += u;
                data[((t + frames) * batch + b) * cols + c] -= u;
                data[((t + 1) * batch + b) * cols + c] -= u;
                data[(t * batch + b) * cols + c] += u;
            }
        }
    }
    out
}
