//! Tape-based reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records every primitive as it is evaluated. Nodes are appended
//! in evaluation order, so the tape is already topologically sorted and
//! [`Tape::backward`] is a single reverse sweep.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        src: Var,
        start: usize,
    },
    SumRows(Var),
    SumAll(Var),
    GatherRows {
        table: Var,
        rows: Vec<usize>,
    },
    Bce {
        probs: Var,
        targets: Vec<f64>,
        eps: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Differentiation trace for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
}

fn dims(t: &Tensor) -> (usize, usize) {
    t.dims2().expect("tape values are matrices")
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn shape2(&self, v: Var) -> (usize, usize) {
        dims(&self.nodes[v.0].value)
    }

    /// Records an input tensor. Leaves receive gradients like any other node.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        value.dims2()?;
        Ok(self.push(value, Op::Leaf))
    }

    /// Records a parameter; repeated requests for the same id share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if id.0 >= self.param_nodes.len() {
            self.param_nodes.resize(id.0 + 1, None);
        }
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param);
        self.param_nodes[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape2(a);
        let (k2, n) = self.shape2(b);
        if k != k2 {
            return Err(Error::shape(format!("matmul {m}x{k} by {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b)))
    }

    /// `a * b^T`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape2(a);
        let (n, k2) = self.shape2(b);
        if k != k2 {
            return Err(Error::shape(format!("matmul {m}x{k} by ({n}x{k2})^T")));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMulNT(a, b)))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let src = self.value(a);
        let mut out = src.clone();
        out.data_mut().iter_mut().for_each(|v| *v = f(*v));
        out
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.shape2(a);
        if self.shape2(row) != (1, n) {
            return Err(Error::shape(format!(
                "row broadcast of {:?} onto {m}x{n}",
                self.value(row).shape()
            )));
        }
        let mut out = self.value(a).clone();
        let r = self.value(row).data();
        for chunk in out.data_mut().chunks_mut(n) {
            for (o, b) in chunk.iter_mut().zip(r) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "hadamard")?;
        let mut out = self.value(a).clone();
        for (o, y) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= y;
        }
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.map(a, |v| v * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.map(a, |v| v + c);
        self.push(out, Op::AddScalar(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.map(a, sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.map(a, f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.map(a, |v| if v > 0.0 { v } else { 0.0 });
        self.push(out, Op::Relu(a))
    }

    /// Row-wise softmax. `mask[i * cols + j] == true` excludes position `j`
    /// from row `i`; excluded positions get weight exactly zero.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (m, n) = self.shape2(a);
        if let Some(mask) = mask {
            if mask.len() != m * n {
                return Err(Error::shape(format!(
                    "mask of {} entries for {m}x{n} logits",
                    mask.len()
                )));
            }
        }
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let allowed = |j: usize| mask.map_or(true, |mk| !mk[i * n + j]);
            let mut max = f64::NEG_INFINITY;
            for j in 0..n {
                if allowed(j) && src[i * n + j] > max {
                    max = src[i * n + j];
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(Error::contract(format!("attention row {i} has every key masked")));
            }
            let mut total = 0.0;
            for j in 0..n {
                if allowed(j) {
                    let e = (src[i * n + j] - max).exp();
                    out[i * n + j] = e;
                    total += e;
                }
            }
            for v in &mut out[i * n..(i + 1) * n] {
                *v /= total;
            }
        }
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::Softmax(a)))
    }

    /// Normalizes each row to zero mean and unit variance (with `eps` added
    /// to the variance), then applies `gain` and `bias` (both `1 x n`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.shape2(x);
        if self.shape2(gain) != (1, n) || self.shape2(bias) != (1, n) {
            return Err(Error::shape(format!("layer norm affine parameters must be 1x{n}")));
        }
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut normed = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..n {
                let h = (row[j] - mean) * inv;
                normed[i * n + j] = h;
                out[i * n + j] = g[j] * h + b[j];
            }
        }
        Ok(self.push(
            Tensor::matrix(m, n, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
        ))
    }

    /// Concatenates along the feature (column) axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::shape("concat of zero tensors"))?;
        let m = self.shape2(first).0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.shape2(p);
            if r != m {
                return Err(Error::shape(format!("concat rows {r} vs {m}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(Tensor::matrix(m, total, out)?, Op::ConcatCols(parts.to_vec())))
    }

    /// Columns `start..start + len` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.shape2(a);
        if len == 0 || start + len > n {
            return Err(Error::shape(format!("column slice {start}..{} of width {n}", start + len)));
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&src[i * n + start..i * n + start + len]);
        }
        Ok(self.push(Tensor::matrix(m, len, out)?, Op::SliceCols { src: a, start }))
    }

    /// Sums over rows (strictly top to bottom), giving a `1 x n` row.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.shape2(a);
        let src = self.value(a).data();
        let mut out = vec![0.0; n];
        for i in 0..m {
            for (o, v) in out.iter_mut().zip(&src[i * n..(i + 1) * n]) {
                *o += v;
            }
        }
        self.push(Tensor::row(out).expect("n > 0"), Op::SumRows(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    /// Selects rows of `table` in the given order.
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = self.shape2(table);
        if rows.is_empty() {
            return Err(Error::contract("gather of zero rows"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return Err(Error::contract(format!("row {bad} out of range for table with {m} rows")));
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            out.extend_from_slice(&src[r * n..(r + 1) * n]);
        }
        Ok(self.push(
            Tensor::matrix(rows.len(), n, out)?,
            Op::GatherRows {
                table,
                rows: rows.to_vec(),
            },
        ))
    }

    /// Summed binary cross entropy with probabilities clipped to `[eps, 1 - eps]`.
    pub fn bce_sum(&mut self, probs: Var, targets: &[f64], eps: f64) -> Result<Var> {
        let p = self.value(probs).data();
        if p.len() != targets.len() {
            return Err(Error::shape(format!(
                "{} probabilities vs {} targets",
                p.len(),
                targets.len()
            )));
        }
        if let Some(bad) = targets.iter().find(|&&t| t != 0.0 && t != 1.0) {
            return Err(Error::contract(format!("target {bad} is not binary")));
        }
        let mut loss = 0.0;
        for (&y, &m) in p.iter().zip(targets) {
            let c = y.clamp(eps, 1.0 - eps);
            loss -= m * c.ln() + (1.0 - m) * (1.0 - c).ln();
        }
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                probs,
                targets: targets.to_vec(),
                eps,
            },
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let params = self
            .param_nodes
            .iter()
            .enumerate()
            .filter_map(|(pid, v)| v.map(|v| (ParamId(pid), v)))
            .collect();
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape2(*a);
                let n = self.shape2(*b).1;
                let mut ga = vec![0.0; m * k];
                gemm_nt(gd, self.value(*b).data(), &mut ga, m, n, k);
                accumulate(grads, *a, &ga, self.value(*a));
                let mut gb = vec![0.0; k * n];
                gemm_tn(self.value(*a).data(), gd, &mut gb, m, k, n);
                accumulate(grads, *b, &gb, self.value(*b));
            }
            Op::MatMulNT(a, b) => {
                // out = a b^T, a: m x k, b: n x k
                let (m, k) = self.shape2(*a);
                let n = self.shape2(*b).0;
                let mut ga = vec![0.0; m * k];
                gemm_nn(gd, self.value(*b).data(), &mut ga, m, n, k);
                accumulate(grads, *a, &ga, self.value(*a));
                let mut gb = vec![0.0; n * k];
                gemm_tn(gd, self.value(*a).data(), &mut gb, m, n, k);
                accumulate(grads, *b, &gb, self.value(*b));
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, gd, self.value(*a));
                accumulate(grads, *b, gd, self.value(*b));
            }
            Op::AddRow(a, row) => {
                accumulate(grads, *a, gd, self.value(*a));
                let n = self.shape2(*row).1;
                let mut gr = vec![0.0; n];
                for chunk in gd.chunks(n) {
                    for (o, v) in gr.iter_mut().zip(chunk) {
                        *o += v;
                    }
                }
                accumulate(grads, *row, &gr, self.value(*row));
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let ga: Vec<f64> = gd.iter().zip(bv).map(|(g, y)| g * y).collect();
                let gb: Vec<f64> = gd.iter().zip(av).map(|(g, x)| g * x).collect();
                accumulate(grads, *a, &ga, self.value(*a));
                accumulate(grads, *b, &gb, self.value(*b));
            }
            Op::Scale(a, c) => {
                let ga: Vec<f64> = gd.iter().map(|g| g * c).collect();
                accumulate(grads, *a, &ga, self.value(*a));
            }
            Op::AddScalar(a) => accumulate(grads, *a, gd, self.value(*a)),
            Op::Sigmoid(a) => {
                let y = node.value.data();
                let ga: Vec<f64> = gd.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                accumulate(grads, *a, &ga, self.value(*a));
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                let ga: Vec<f64> = gd.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                accumulate(grads, *a, &ga, self.value(*a));
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let ga: Vec<f64> = gd
                    .iter()
                    .zip(x)
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect();
                accumulate(grads, *a, &ga, self.value(*a));
            }
            Op::Softmax(a) => {
                let (m, n) = dims(&node.value);
                let p = node.value.data();
                let mut ga = vec![0.0; m * n];
                for i in 0..m {
                    let pr = &p[i * n..(i + 1) * n];
                    let gr = &gd[i * n..(i + 1) * n];
                    let dot: f64 = pr.iter().zip(gr).map(|(p, g)| p * g).sum();
                    for j in 0..n {
                        ga[i * n + j] = pr[j] * (gr[j] - dot);
                    }
                }
                accumulate(grads, *a, &ga, self.value(*a));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            } => {
                let (m, n) = dims(&node.value);
                let gv = self.value(*gain).data();
                let mut gx = vec![0.0; m * n];
                let mut gg = vec![0.0; n];
                let mut gb = vec![0.0; n];
                for i in 0..m {
                    let h = &normed[i * n..(i + 1) * n];
                    let gr = &gd[i * n..(i + 1) * n];
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for j in 0..n {
                        let dh = gr[j] * gv[j];
                        mean_dh += dh;
                        mean_dh_h += dh * h[j];
                        gg[j] += gr[j] * h[j];
                        gb[j] += gr[j];
                    }
                    mean_dh /= n as f64;
                    mean_dh_h /= n as f64;
                    for j in 0..n {
                        let dh = gr[j] * gv[j];
                        gx[i * n + j] = inv_std[i] * (dh - mean_dh - h[j] * mean_dh_h);
                    }
                }
                accumulate(grads, *x, &gx, self.value(*x));
                accumulate(grads, *gain, &gg, self.value(*gain));
                accumulate(grads, *bias, &gb, self.value(*bias));
            }
            Op::ConcatCols(parts) => {
                let (m, total) = dims(&node.value);
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape2(p).1;
                    let mut gp = Vec::with_capacity(m * w);
                    for i in 0..m {
                        gp.extend_from_slice(&gd[i * total + offset..i * total + offset + w]);
                    }
                    accumulate(grads, p, &gp, self.value(p));
                    offset += w;
                }
            }
            Op::SliceCols { src, start } => {
                let (m, n) = self.shape2(*src);
                let len = dims(&node.value).1;
                let mut gs = vec![0.0; m * n];
                for i in 0..m {
                    gs[i * n + start..i * n + start + len].copy_from_slice(&gd[i * len..(i + 1) * len]);
                }
                accumulate(grads, *src, &gs, self.value(*src));
            }
            Op::SumRows(a) => {
                let (m, _) = self.shape2(*a);
                let ga = gd.repeat(m);
                accumulate(grads, *a, &ga, self.value(*a));
            }
            Op::SumAll(a) => {
                let ga = vec![gd[0]; self.value(*a).len()];
                accumulate(grads, *a, &ga, self.value(*a));
            }
            Op::GatherRows { table, rows } => {
                let (m, n) = self.shape2(*table);
                let mut gt = vec![0.0; m * n];
                for (k, &r) in rows.iter().enumerate() {
                    for j in 0..n {
                        gt[r * n + j] += gd[k * n + j];
                    }
                }
                accumulate(grads, *table, &gt, self.value(*table));
            }
            Op::Bce {
                probs,
                targets,
                eps,
            } => {
                let p = self.value(*probs).data();
                let ga: Vec<f64> = p
                    .iter()
                    .zip(targets)
                    .map(|(&y, &m)| {
                        if y < *eps || y > 1.0 - *eps {
                            0.0
                        } else {
                            gd[0] * (-m / y + (1.0 - m) / (1.0 - y))
                        }
                    })
                    .collect();
                accumulate(grads, *probs, &ga, self.value(*probs));
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: &[f64], like: &Tensor) {
    match &mut grads[v.0] {
        Some(t) => {
            for (a, b) in t.data_mut().iter_mut().zip(g) {
                *a += b;
            }
        }
        slot @ None => {
            let mut t = Tensor::zeros_like(like);
            t.data_mut().copy_from_slice(g);
            *slot = Some(t);
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zero if `v` did not
    /// contribute to the loss.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        self.grads
            .get(v.0)
            .and_then(Option::as_ref)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros_like(tape.value(v)))
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, v)| self.grads.get(v.0).and_then(Option::as_ref))
    }

    /// One slot per parameter of `store`; `None` where the parameter was
    /// not reached by the loss.
    pub fn into_param_grads(mut self, store: &ParamStore) -> Vec<Option<Tensor>> {
        let mut out: Vec<Option<Tensor>> = vec![None; store.len()];
        for (pid, v) in &self.params {
            if let Some(g) = self.grads.get_mut(v.0).and_then(Option::take) {
                out[pid.0] = Some(g);
            }
        }
        out
    }
}
