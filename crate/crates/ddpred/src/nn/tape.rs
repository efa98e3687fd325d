//! Tape-based reverse-mode differentiation over [`Mat`] values.

use super::Mat;
use crate::{Error, Result};

pub type NodeId = usize;

const GELU_C: f64 = 0.044715;

enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// Broadcast a `d x 1` bias over every column of a `d x t` matrix.
    AddBiasCol(NodeId, NodeId),
    Scale(NodeId, f64),
    Transpose(NodeId),
    /// Row-wise softmax; `causal` masks entries with col > row before softmax.
    SoftmaxRows { input: NodeId },
    Relu(NodeId),
    Gelu(NodeId),
    /// Per-column layer normalization with learned gain/offset vectors.
    LayerNormCols { input: NodeId, gamma: NodeId, beta: NodeId },
    SliceRows { input: NodeId, start: usize },
    ConcatRows(Vec<NodeId>),
    Reshape(NodeId),
    /// Mean squared error against a constant target.
    MseLoss { pred: NodeId, target: Mat },
}

struct Node {
    op: Op,
    value: Mat,
}

/// Records a forward computation and differentiates it in reverse.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Option<Vec<Mat>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grads: None }
    }

    fn push(&mut self, op: Op, value: Mat) -> NodeId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        &self.nodes[id].value
    }

    /// Gradient of the last `backward` loss w.r.t. node `id`.
    pub fn grad(&self, id: NodeId) -> Result<&Mat> {
        self.grads
            .as_ref()
            .map(|g| &g[id])
            .ok_or_else(|| Error::Train("gradient requested before backward".into()))
    }

    pub fn leaf(&mut self, value: Mat) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ma, mb) = (&self.nodes[a].value, &self.nodes[b].value);
        if ma.cols() != mb.rows() {
            return Err(Error::Shape(format!(
                "matmul {}x{} * {}x{}",
                ma.rows(),
                ma.cols(),
                mb.rows(),
                mb.cols()
            )));
        }
        let v = ma.matmul(mb);
        Ok(self.push(Op::MatMul(a, b), v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ma, mb) = (&self.nodes[a].value, &self.nodes[b].value);
        if !ma.same_shape(mb) {
            return Err(Error::Shape("add: operand shapes differ".into()));
        }
        let mut v = ma.clone();
        v.add_assign(mb);
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn add_bias_col(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (ma, mb) = (&self.nodes[a].value, &self.nodes[bias].value);
        if mb.cols() != 1 || mb.rows() != ma.rows() {
            return Err(Error::Shape("add_bias_col: bias must be d x 1".into()));
        }
        let mut v = ma.clone();
        for r in 0..v.rows() {
            let b = mb.get(r, 0);
            for x in v.row_mut(r) {
                *x += b;
            }
        }
        Ok(self.push(Op::AddBiasCol(a, bias), v))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let mut v = self.nodes[a].value.clone();
        v.scale_assign(s);
        self.push(Op::Scale(a, s), v)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.transposed();
        self.push(Op::Transpose(a), v)
    }

    pub fn softmax_rows(&mut self, a: NodeId, causal: bool) -> Result<NodeId> {
        let m = &self.nodes[a].value;
        if causal && m.rows() != m.cols() {
            return Err(Error::Shape("causal softmax needs a square matrix".into()));
        }
        let mut v = m.clone();
        for r in 0..v.rows() {
            let cols = v.cols();
            let lim = if causal { r + 1 } else { cols };
            let row = v.row_mut(r);
            // max-subtraction for overflow safety
            let mx = row[..lim].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row[..lim].iter_mut() {
                *x = (*x - mx).exp();
                sum += *x;
            }
            for x in row[..lim].iter_mut() {
                *x /= sum;
            }
            for x in row[lim..].iter_mut() {
                *x = 0.0;
            }
        }
        Ok(self.push(Op::SoftmaxRows { input: a }, v))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let mut v = self.nodes[a].value.clone();
        for x in v.data_mut() {
            if *x < 0.0 {
                *x = 0.0;
            }
        }
        self.push(Op::Relu(a), v)
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let mut v = self.nodes[a].value.clone();
        for x in v.data_mut() {
            *x = gelu(*x);
        }
        self.push(Op::Gelu(a), v)
    }

    pub fn layer_norm_cols(&mut self, a: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let (m, g, b) = (
            &self.nodes[a].value,
            &self.nodes[gamma].value,
            &self.nodes[beta].value,
        );
        let d = m.rows();
        if g.rows() != d || g.cols() != 1 || b.rows() != d || b.cols() != 1 {
            return Err(Error::Shape("layer_norm: gamma/beta must be d x 1".into()));
        }
        let mut v = Mat::zeros(d, m.cols());
        for c in 0..m.cols() {
            let (mean, inv_std) = col_stats(m, c);
            for r in 0..d {
                let xhat = (m.get(r, c) - mean) * inv_std;
                v.set(r, c, xhat * g.get(r, 0) + b.get(r, 0));
            }
        }
        Ok(self.push(Op::LayerNormCols { input: a, gamma, beta }, v))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let m = &self.nodes[a].value;
        if start + len > m.rows() {
            return Err(Error::Shape("slice_rows out of range".into()));
        }
        let mut v = Mat::zeros(len, m.cols());
        for r in 0..len {
            v.row_mut(r).copy_from_slice(m.row(start + r));
        }
        Ok(self.push(Op::SliceRows { input: a, start }, v))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Shape("concat_rows: empty input".into()));
        }
        let cols = self.nodes[parts[0]].value.cols();
        let rows: usize = parts.iter().map(|&p| self.nodes[p].value.rows()).sum();
        let mut v = Mat::zeros(rows, cols);
        let mut at = 0;
        for &p in parts {
            let m = &self.nodes[p].value;
            if m.cols() != cols {
                return Err(Error::Shape("concat_rows: column counts differ".into()));
            }
            for r in 0..m.rows() {
                v.row_mut(at + r).copy_from_slice(m.row(r));
            }
            at += m.rows();
        }
        Ok(self.push(Op::ConcatRows(parts.to_vec()), v))
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let v = self.nodes[a].value.reshaped(rows, cols)?;
        Ok(self.push(Op::Reshape(a), v))
    }

    pub fn mse_loss(&mut self, pred: NodeId, target: &Mat) -> Result<NodeId> {
        let p = &self.nodes[pred].value;
        if !p.same_shape(target) {
            return Err(Error::Shape("mse_loss: prediction/target shapes differ".into()));
        }
        let n = p.len() as f64;
        let sum: f64 = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(self.push(
            Op::MseLoss { pred, target: target.clone() },
            Mat::scalar(sum / n),
        ))
    }

    /// Reverse pass from a scalar loss node.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let lv = &self.nodes[loss].value;
        if lv.rows() != 1 || lv.cols() != 1 {
            return Err(Error::Shape("backward: loss must be 1x1".into()));
        }
        let mut grads: Vec<Mat> = self
            .nodes
            .iter()
            .map(|n| Mat::zeros(n.value.rows(), n.value.cols()))
            .collect();
        grads[loss].set(0, 0, 1.0);

        for id in (0..=loss).rev() {
            let g = grads[id].clone();
            if g.data().iter().all(|&x| x == 0.0) {
                continue;
            }
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let (va, vb) = (self.nodes[a].value.clone(), self.nodes[b].value.clone());
                    g.matmul_nt_acc(&vb, &mut grads[a]);
                    va.matmul_tn_acc(&g, &mut grads[b]);
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    grads[a].add_assign(&g);
                    grads[b].add_assign(&g);
                }
                Op::AddBiasCol(a, bias) => {
                    let (a, bias) = (*a, *bias);
                    grads[a].add_assign(&g);
                    for r in 0..g.rows() {
                        let s: f64 = g.row(r).iter().sum();
                        let cur = grads[bias].get(r, 0);
                        grads[bias].set(r, 0, cur + s);
                    }
                }
                Op::Scale(a, s) => {
                    let (a, s) = (*a, *s);
                    let mut gg = g.clone();
                    gg.scale_assign(s);
                    grads[a].add_assign(&gg);
                }
                Op::Transpose(a) => {
                    let a = *a;
                    grads[a].add_assign(&g.transposed());
                }
                Op::SoftmaxRows { input, .. } => {
                    let a = *input;
                    let y = self.nodes[id].value.clone();
                    let mut gg = Mat::zeros(g.rows(), g.cols());
                    for r in 0..g.rows() {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(d, v)| d * v).sum();
                        for c in 0..g.cols() {
                            gg.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                    grads[a].add_assign(&gg);
                }
                Op::Relu(a) => {
                    let a = *a;
                    let x = self.nodes[a].value.clone();
                    let mut gg = g.clone();
                    for (gd, &xv) in gg.data_mut().iter_mut().zip(x.data()) {
                        if xv <= 0.0 {
                            *gd = 0.0;
                        }
                    }
                    grads[a].add_assign(&gg);
                }
                Op::Gelu(a) => {
                    let a = *a;
                    let x = self.nodes[a].value.clone();
                    let mut gg = g.clone();
                    for (gd, &xv) in gg.data_mut().iter_mut().zip(x.data()) {
                        *gd *= gelu_prime(xv);
                    }
                    grads[a].add_assign(&gg);
                }
                Op::LayerNormCols { input, gamma, beta } => {
                    let (a, gamma, beta) = (*input, *gamma, *beta);
                    let x = self.nodes[a].value.clone();
                    let gm = self.nodes[gamma].value.clone();
                    let d = x.rows();
                    let mut gx = Mat::zeros(d, x.cols());
                    let mut ggamma = Mat::zeros(d, 1);
                    let mut gbeta = Mat::zeros(d, 1);
                    for c in 0..x.cols() {
                        let (mean, inv_std) = col_stats(&x, c);
                        let mut mean_dh = 0.0;
                        let mut mean_dh_xhat = 0.0;
                        let mut xhat = vec![0.0; d];
                        let mut dh = vec![0.0; d];
                        for r in 0..d {
                            xhat[r] = (x.get(r, c) - mean) * inv_std;
                            dh[r] = g.get(r, c) * gm.get(r, 0);
                            mean_dh += dh[r];
                            mean_dh_xhat += dh[r] * xhat[r];
                        }
                        mean_dh /= d as f64;
                        mean_dh_xhat /= d as f64;
                        for r in 0..d {
                            gx.set(r, c, (dh[r] - mean_dh - xhat[r] * mean_dh_xhat) * inv_std);
                            ggamma.set(r, 0, ggamma.get(r, 0) + g.get(r, c) * xhat[r]);
                            gbeta.set(r, 0, gbeta.get(r, 0) + g.get(r, c));
                        }
                    }
                    grads[a].add_assign(&gx);
                    grads[gamma].add_assign(&ggamma);
                    grads[beta].add_assign(&gbeta);
                }
                Op::SliceRows { input, start } => {
                    let (a, start) = (*input, *start);
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            let cur = grads[a].get(start + r, c);
                            grads[a].set(start + r, c, cur + g.get(r, c));
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let parts = parts.clone();
                    let mut at = 0;
                    for p in parts {
                        let rows = self.nodes[p].value.rows();
                        for r in 0..rows {
                            for c in 0..g.cols() {
                                let cur = grads[p].get(r, c);
                                grads[p].set(r, c, cur + g.get(at + r, c));
                            }
                        }
                        at += rows;
                    }
                }
                Op::Reshape(a) => {
                    let a = *a;
                    let (r, c) = (grads[a].rows(), grads[a].cols());
                    let gg = g.reshaped(r, c).expect("reshape grad");
                    grads[a].add_assign(&gg);
                }
                Op::MseLoss { pred, target } => {
                    let (pred, target) = (*pred, target.clone());
                    let scale = 2.0 * g.get(0, 0) / target.len() as f64;
                    let pv = self.nodes[pred].value.clone();
                    for r in 0..pv.rows() {
                        for c in 0..pv.cols() {
                            let cur = grads[pred].get(r, c);
                            grads[pred]
                                .set(r, c, cur + scale * (pv.get(r, c) - target.get(r, c)));
                        }
                    }
                }
            }
        }
        self.grads = Some(grads);
        Ok(())
    }
}

fn col_stats(m: &Mat, c: usize) -> (f64, f64) {
    const EPS: f64 = 1e-5;
    let d = m.rows() as f64;
    let mut mean = 0.0;
    for r in 0..m.rows() {
        mean += m.get(r, c);
    }
    mean /= d;
    let mut var = 0.0;
    for r in 0..m.rows() {
        let dv = m.get(r, c) - mean;
        var += dv * dv;
    }
    var /= d;
    (mean, 1.0 / (var + EPS).sqrt())
}

fn gelu(x: f64) -> f64 {
    let u = (2.0 / std::f64::consts::PI).sqrt() * (x + GELU_C * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_prime(x: f64) -> f64 {
    let k = (2.0 / std::f64::consts::PI).sqrt();
    let u = k * (x + GELU_C * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * k * (1.0 + 3.0 * GELU_C * x * x)
}
