//! Attention, row-wise feed-forward and normalization building blocks.

use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Variance floor used by every layer norm in the model.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Scaled dot-product attention `softmax(Q K^T / sqrt(d_k)) V`.
///
/// `mask` is row-major `n_q x n_k`; `true` marks a disallowed key.
pub fn attention(tape: &mut Tape, q: Var, k: Var, v: Var, mask: Option<&[bool]>) -> Result<Var> {
    let (_, dq) = tape.value(q).dims2()?;
    let (nk, dk) = tape.value(k).dims2()?;
    let (nv, _) = tape.value(v).dims2()?;
    if dq != dk {
        return Err(Error::shape(format!("query width {dq} vs key width {dk}")));
    }
    if nk != nv {
        return Err(Error::shape(format!("{nk} keys vs {nv} values")));
    }
    let logits = tape.matmul_nt(q, k)?;
    let scaled = tape.scale(logits, 1.0 / (dk as f64).sqrt());
    let weights = tape.softmax_rows(scaled, mask)?;
    tape.matmul(weights, v)
}

/// Multi-head attention over already-recorded projection matrices.
///
/// Each head `i` attends with columns `i*d/h .. (i+1)*d/h` of the projected
/// queries, keys and values, which is the same as giving every head its own
/// `d x d/h` projection. Head outputs are concatenated and mapped through `wo`.
#[allow(clippy::too_many_arguments)]
pub fn multi_head_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    wq: Var,
    wk: Var,
    wv: Var,
    wo: Var,
    mask: Option<&[bool]>,
) -> Result<Var> {
    let width = tape.value(wq).cols();
    if heads == 0 || width % heads != 0 {
        return Err(Error::config(format!("{heads} heads do not divide width {width}")));
    }
    let qp = tape.matmul(q, wq)?;
    let kp = tape.matmul(k, wk)?;
    let vp = tape.matmul(v, wv)?;
    let concat = if heads == 1 {
        attention(tape, qp, kp, vp, mask)?
    } else {
        let dh = width / heads;
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = tape.slice_cols(qp, h * dh, dh)?;
            let kh = tape.slice_cols(kp, h * dh, dh)?;
            let vh = tape.slice_cols(vp, h * dh, dh)?;
            outs.push(attention(tape, qh, kh, vh, mask)?);
        }
        tape.concat_cols(&outs)?
    };
    tape.matmul(concat, wo)
}

/// Projection matrices for one multi-head attention layer.
#[derive(Clone, Copy, Debug)]
pub struct MhaWeights {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub heads: usize,
}

impl MhaWeights {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        width: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        check_heads(width, heads)?;
        Ok(Self {
            wq: store.add_uniform(format!("{prefix}.wq"), width, width, width, rng),
            wk: store.add_uniform(format!("{prefix}.wk"), width, width, width, rng),
            wv: store.add_uniform(format!("{prefix}.wv"), width, width, width, rng),
            wo: store.add_uniform(format!("{prefix}.wo"), width, width, width, rng),
            heads,
        })
    }

    /// All four projections set to the identity.
    pub fn identity(store: &mut ParamStore, prefix: &str, width: usize, heads: usize) -> Result<Self> {
        check_heads(width, heads)?;
        Ok(Self {
            wq: store.add(format!("{prefix}.wq"), Tensor::identity(width)),
            wk: store.add(format!("{prefix}.wk"), Tensor::identity(width)),
            wv: store.add(format!("{prefix}.wv"), Tensor::identity(width)),
            wo: store.add(format!("{prefix}.wo"), Tensor::identity(width)),
            heads,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        q: Var,
        k: Var,
        v: Var,
        mask: Option<&[bool]>,
    ) -> Result<Var> {
        let wq = tape.param(store, self.wq);
        let wk = tape.param(store, self.wk);
        let wv = tape.param(store, self.wv);
        let wo = tape.param(store, self.wo);
        multi_head_attention(tape, q, k, v, self.heads, wq, wk, wv, wo, mask)
    }
}

fn check_heads(width: usize, heads: usize) -> Result<()> {
    if heads == 0 || width % heads != 0 {
        Err(Error::config(format!("{heads} heads do not divide width {width}")))
    } else {
        Ok(())
    }
}

/// Affine map `X W + b` with `b` broadcast over rows.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w: store.add_uniform(format!("{prefix}.w"), fan_in, fan_out, fan_in, rng),
            b: store.add_zeros(format!("{prefix}.b"), 1, fan_out),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let xw = tape.matmul(x, w)?;
        tape.add_row(xw, b)
    }
}

/// `Relu(X W + b)`, applied to each row independently.
pub fn row_ffn(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    let pre = tape.add_row(xw, b)?;
    Ok(tape.relu(pre))
}

/// Row-wise feed-forward layer parameters.
#[derive(Clone, Copy, Debug)]
pub struct RowFfn(pub Linear);

impl RowFfn {
    pub fn new(store: &mut ParamStore, prefix: &str, width: usize, rng: &mut ChaCha8Rng) -> Self {
        Self(Linear::new(store, prefix, width, width, rng))
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.0.w);
        let b = tape.param(store, self.0.b);
        row_ffn(tape, x, w, b)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, width: usize) -> Self {
        Self {
            gain: store.add_full(format!("{prefix}.gain"), 1, width, 1.0),
            bias: store.add_zeros(format!("{prefix}.bias"), 1, width),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        tape.layer_norm(x, g, b, LAYER_NORM_EPS)
    }
}

/// One-hidden-layer perceptron `W2 relu(W1 x + b1) + b2`.
#[derive(Clone, Copy, Debug)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, prefix: &str, width: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            hidden: Linear::new(store, &format!("{prefix}.hidden"), width, width, rng),
            out: Linear::new(store, &format!("{prefix}.out"), width, width, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, store, x)?;
        let h = tape.relu(h);
        self.out.forward(tape, store, h)
    }
}
