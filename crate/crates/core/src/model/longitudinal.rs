//! Inter-visit encoder: a recurrent attention block carrying a set of
//! state vectors across visits, plus the GRU used by the ablation.

use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Linear, MhaWeights, Mlp};
use crate::params::{ParamId, ParamStore};

/// Affine maps of one gate.
#[derive(Clone, Copy, Debug)]
pub struct GateParams {
    pub forget: Linear,
    pub input: Linear,
    pub update: Linear,
}

impl GateParams {
    pub fn new(store: &mut ParamStore, prefix: &str, width: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            forget: Linear::new(store, &format!("{prefix}.f"), width, width, rng),
            input: Linear::new(store, &format!("{prefix}.i"), width, width, rng),
            update: Linear::new(store, &format!("{prefix}.z"), width, width, rng),
        }
    }
}

/// `x * f + z * i` with `f = sigmoid(y W_f + b_f + 1)`,
/// `i = sigmoid(y W_i + b_i - 1)` and `z = tanh(y W_z + b_z)`.
pub fn gate(tape: &mut Tape, store: &ParamStore, x: Var, y: Var, params: &GateParams) -> Result<Var> {
    if tape.value(x).shape() != tape.value(y).shape() {
        return Err(Error::shape(format!(
                "gate operands {:?} vs {:?}",
                tape.value(x).shape(),
                tape.value(y).shape()
        )));
    }
    let f = params.forget.forward(tape, store, y)?;
    let f = tape.add_scalar(f, 1.0);
    let f = tape.sigmoid(f);
    let i = params.input.forward(tape, store, y)?;
    let i = tape.add_scalar(i, -1.0);
    let i = tape.sigmoid(i);
    let z = params.update.forward(tape, store, y)?;
    let z = tape.tanh(z);
    let kept = tape.mul(x, f)?;
    let fresh = tape.mul(z, i)?;
    tape.add(kept, fresh)
}

/// Parameters of the recurrent attention block.
#[derive(Clone, Debug)]
pub struct RabParams {
    /// Learned initial state `C_1`, `S x d`.
    pub initial_state: ParamId,
    pub state_self: MhaWeights,
    pub state_cross: MhaWeights,
    pub token_self: MhaWeights,
    pub token_cross: MhaWeights,
    pub state_proj: Linear,
    pub token_proj: Linear,
    pub gate1: GateParams,
    pub gate2: GateParams,
    pub state_mlp: Mlp,
    pub token_mlp: Mlp,
}

impl RabParams {
    pub fn new(
        store: &mut ParamStore,
        width: usize,
        state_vectors: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if state_vectors == 0 {
            return Err(Error::config("at least one state vector is required"));
        }
        Ok(Self {
            initial_state: store.add_zeros("rab.c1", state_vectors, width),
            state_self: MhaWeights::new(store, "rab.att_cc", width, heads, rng)?,
            state_cross: MhaWeights::new(store, "rab.att_cv", width, heads, rng)?,
            token_self: MhaWeights::new(store, "rab.att_vv", width, heads, rng)?,
            token_cross: MhaWeights::new(store, "rab.att_vc", width, heads, rng)?,
            state_proj: Linear::new(store, "rab.proj_c", 2 * width, width, rng),
            token_proj: Linear::new(store, "rab.proj_v", 2 * width, width, rng),
            gate1: GateParams::new(store, "rab.g1", width, rng),
            gate2: GateParams::new(store, "rab.g2", width, rng),
            state_mlp: Mlp::new(store, "rab.mlp_c", width, rng),
            token_mlp: Mlp::new(store, "rab.mlp_v", width, rng),
        })
    }

    pub fn width(&self, store: &ParamStore) -> usize {
        store.get(self.initial_state).cols()
    }
}

/// One recurrence step: returns the next state and the updated visit token.
pub fn rab_step(
    tape: &mut Tape,
    store: &ParamStore,
    params: &RabParams,
    state: Var,
    token: Var,
) -> Result<(Var, Var)> {
    let width = params.width(store);
    let (sr, sc) = tape.value(state).dims2()?;
    let (tr, tc) = tape.value(token).dims2()?;
    if sc != width || tc != width || tr != 1 || sr != store.get(params.initial_state).rows() {
        return Err(Error::shape(format!(
            "state {sr}x{sc} and token {tr}x{tc} for block width {width}"
        )));
    }

    let cc = params.state_self.forward(tape, store, state, state, state, None)?;
    let cv = params.state_cross.forward(tape, store, state, token, token, None)?;
    let joined = tape.concat_cols(&[cc, cv])?;
    let state_mix = params.state_proj.forward(tape, store, joined)?;
    let g1 = gate(tape, store, state_mix, state, &params.gate1)?;
    let m = params.state_mlp.forward(tape, store, g1)?;
    let next_state = gate(tape, store, m, g1, &params.gate2)?;

    let vv = params.token_self.forward(tape, store, token, token, token, None)?;
    let vc = params.token_cross.forward(tape, store, token, state, state, None)?;
    let joined = tape.concat_cols(&[vv, vc])?;
    let token_mix = params.token_proj.forward(tape, store, joined)?;
    let residual = tape.add(token_mix, token)?;
    let m = params.token_mlp.forward(tape, store, residual)?;
    let updated = tape.add(m, residual)?;
    Ok((next_state, updated))
}

/// GRU over visit tokens, used when the recurrent attention block is ablated.
#[derive(Clone, Copy, Debug)]
pub struct GruParams {
    pub reset_x: Linear,
    pub reset_h: ParamId,
    pub update_x: Linear,
    pub update_h: ParamId,
    pub cand_x: Linear,
    pub cand_h: ParamId,
}

impl GruParams {
    pub fn new(store: &mut ParamStore, width: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            reset_x: Linear::new(store, "gru.r_x", width, width, rng),
            reset_h: store.add_uniform("gru.r_h", width, width, width, rng),
            update_x: Linear::new(store, "gru.z_x", width, width, rng),
            update_h: store.add_uniform("gru.z_h", width, width, width, rng),
            cand_x: Linear::new(store, "gru.n_x", width, width, rng),
            cand_h: store.add_uniform("gru.n_h", width, width, width, rng),
        }
    }

    fn step(&self, tape: &mut Tape, store: &ParamStore, h: Var, x: Var) -> Result<Var> {
        let rh = tape.param(store, self.reset_h);
        let zh = tape.param(store, self.update_h);
        let nh = tape.param(store, self.cand_h);
        let r = self.reset_x.forward(tape, store, x)?;
        let hr = tape.matmul(h, rh)?;
        let r = tape.add(r, hr)?;
        let r = tape.sigmoid(r);
        let z = self.update_x.forward(tape, store, x)?;
        let hz = tape.matmul(h, zh)?;
        let z = tape.add(z, hz)?;
        let z = tape.sigmoid(z);
        let n = self.cand_x.forward(tape, store, x)?;
        let hn = tape.matmul(h, nh)?;
        let hn = tape.mul(r, hn)?;
        let n = tape.add(n, hn)?;
        let n = tape.tanh(n);
        // h' = n + z * (h - n)
        let neg_n = tape.scale(n, -1.0);
        let diff = tape.add(h, neg_n)?;
        let keep = tape.mul(z, diff)?;
        tape.add(n, keep)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LongitudinalKind {
    #[default]
    RecurrentAttention,
    Gru,
}

#[derive(Clone, Debug)]
pub enum LongitudinalEncoder {
    RecurrentAttention(Box<RabParams>),
    Gru(GruParams),
}

impl LongitudinalEncoder {
    pub fn new(
        store: &mut ParamStore,
        kind: LongitudinalKind,
        width: usize,
        state_vectors: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(match kind {
            LongitudinalKind::RecurrentAttention => {
                LongitudinalEncoder::RecurrentAttention(Box::new(RabParams::new(store, width, state_vectors, heads, rng)?))
            }
            LongitudinalKind::Gru => LongitudinalEncoder::Gru(GruParams::new(store, width, rng)),
        })
    }

    /// Folds the encoder over visit tokens in temporal order. Output `t`
    /// depends on tokens `1..=t` only.
    pub fn encode_sequence(&self, tape: &mut Tape, store: &ParamStore, tokens: &[Var]) -> Result<Vec<Var>> {
        if tokens.is_empty() {
            return Err(Error::contract("cannot encode an empty visit sequence"));
        }
        let mut out = Vec::with_capacity(tokens.len());
        match self {
            LongitudinalEncoder::RecurrentAttention(params) => {
                let mut state = tape.param(store, params.initial_state);
                for &token in tokens {
                    let (next, updated) = rab_step(tape, store, params, state, token)?;
                    out.push(updated);
                    state = next;
                }
            }
            LongitudinalEncoder::Gru(params) => {
                let width = tape.value(tokens[0]).cols();
                let mut h = tape.leaf(crate::tensor::Tensor::zeros(1, width))?;
                for &token in tokens {
                    h = params.step(tape, store, h, token)?;
                    out.push(h);
                }
            }
        }
        Ok(out)
    }
}
