//! Intra-visit encoder: code embeddings, two stacked induced set attention
//! blocks per event type, and the summed visit-level representation.

use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::data::Visit;
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, MhaWeights, RowFfn};
use crate::params::{ParamId, ParamStore};

/// Embedding tables `E_d`, `E_p`, `E_m`. The medication table has one
/// extra row (index `medications`) used as the padding input.
#[derive(Clone, Copy, Debug)]
pub struct EmbeddingTables {
    pub diagnoses: ParamId,
    pub procedures: ParamId,
    pub medications: ParamId,
    pub padding_row: usize,
}

impl EmbeddingTables {
    pub fn new(
        store: &mut ParamStore,
        sizes: [usize; 3],
        dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let [d, p, m] = sizes;
        Self {
            diagnoses: store.add_uniform("embed.diagnoses", d, dim, dim, rng),
            procedures: store.add_uniform("embed.procedures", p, dim, dim, rng),
            medications: store.add_uniform("embed.medications", m + 1, dim, dim, rng),
            padding_row: m,
        }
    }
}

/// Medication input of a visit: the previous visit's medications, or the
/// padding row when there is no (non-empty) previous visit.
#[derive(Clone, Copy, Debug)]
pub enum MedicationInput<'a> {
    Padding,
    Previous(&'a [usize]),
}

impl<'a> MedicationInput<'a> {
    pub fn for_visit(visits: &'a [Visit], t: usize) -> Self {
        match t.checked_sub(1).map(|p| visits[p].medications.as_slice()) {
            Some(meds) if !meds.is_empty() => MedicationInput::Previous(meds),
            _ => MedicationInput::Padding,
        }
    }
}

/// Code-level embedding matrices of one visit.
#[derive(Clone, Copy, Debug)]
pub struct CodeEmbeddings {
    pub diagnoses: Var,
    pub procedures: Var,
    pub medications: Var,
}

pub fn embed_codes(
    tape: &mut Tape,
    store: &ParamStore,
    tables: &EmbeddingTables,
    visit: &Visit,
    previous: MedicationInput<'_>,
) -> Result<CodeEmbeddings> {
    let ed = tape.param(store, tables.diagnoses);
    let ep = tape.param(store, tables.procedures);
    let em = tape.param(store, tables.medications);
    let med_rows: Vec<usize> = match previous {
        MedicationInput::Padding => vec![tables.padding_row],
        MedicationInput::Previous(meds) => {
            if let Some(&bad) = meds.iter().find(|&&m| m >= tables.padding_row) {
                return Err(Error::contract(format!("medication {bad} is not a real medication")));
            }
            let mut rows = meds.to_vec();
            rows.sort_unstable();
            rows.dedup();
            rows
        }
    };
    Ok(CodeEmbeddings {
        diagnoses: tape.gather_rows(ed, &visit.diagnoses)?,
        procedures: tape.gather_rows(ep, &visit.procedures)?,
        medications: tape.gather_rows(em, &med_rows)?,
    })
}

/// Induced set attention block.
#[derive(Clone, Debug)]
pub struct IsabBlock {
    pub inducing: ParamId,
    pub attend_inducing: MhaWeights,
    pub attend_set: MhaWeights,
    pub ffn_inducing: RowFfn,
    pub ffn_set: RowFfn,
    pub norms: [LayerNorm; 4],
}

impl IsabBlock {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        width: usize,
        inducing_points: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if inducing_points == 0 {
            return Err(Error::config("at least one inducing point is required"));
        }
        Ok(Self {
            inducing: store.add_uniform(format!("{prefix}.inducing"), inducing_points, width, width, rng),
            attend_inducing: MhaWeights::new(store, &format!("{prefix}.mha_i"), width, heads, rng)?,
            attend_set: MhaWeights::new(store, &format!("{prefix}.mha_x"), width, heads, rng)?,
            ffn_inducing: RowFfn::new(store, &format!("{prefix}.rff_z"), width, rng),
            ffn_set: RowFfn::new(store, &format!("{prefix}.rff_h"), width, rng),
            norms: [0, 1, 2, 3].map(|i| LayerNorm::new(store, &format!("{prefix}.ln{i}"), width)),
        })
    }

    /// `m x d -> m x d`, equivariant in the rows of `x`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let width = store.get(self.inducing).cols();
        let xw = tape.value(x).cols();
        if xw != width {
            return Err(Error::shape(format!("set of width {xw} into block of width {width}")));
        }
        let inducing = tape.param(store, self.inducing);
        let a = self.attend_inducing.forward(tape, store, inducing, x, x, None)?;
        let z = tape.add(inducing, a)?;
        let z = self.norms[0].forward(tape, store, z)?;
        let f = self.ffn_inducing.forward(tape, store, z)?;
        let y = tape.add(z, f)?;
        let y = self.norms[1].forward(tape, store, y)?;
        let b = self.attend_set.forward(tape, store, x, y, y, None)?;
        let h = tape.add(x, b)?;
        let h = self.norms[2].forward(tape, store, h)?;
        let f = self.ffn_set.forward(tape, store, h)?;
        let out = tape.add(h, f)?;
        self.norms[3].forward(tape, store, out)
    }
}

/// Plain self-attention block used by the self-attention ablation.
#[derive(Clone, Debug)]
pub struct SabBlock {
    pub attend: MhaWeights,
    pub ffn: RowFfn,
    pub norms: [LayerNorm; 2],
}

impl SabBlock {
    pub fn new(store: &mut ParamStore, prefix: &str, width: usize, heads: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            attend: MhaWeights::new(store, &format!("{prefix}.mha"), width, heads, rng)?,
            ffn: RowFfn::new(store, &format!("{prefix}.rff"), width, rng),
            norms: [0, 1].map(|i| LayerNorm::new(store, &format!("{prefix}.ln{i}"), width)),
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let a = self.attend.forward(tape, store, x, x, x, None)?;
        let h = tape.add(x, a)?;
        let h = self.norms[0].forward(tape, store, h)?;
        let f = self.ffn.forward(tape, store, h)?;
        let out = tape.add(h, f)?;
        self.norms[1].forward(tape, store, out)
    }
}

/// Which intra-visit encoder the model uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SetEncoderKind {
    /// Two stacked induced set attention blocks.
    #[default]
    Isab,
    /// Two stacked plain self-attention blocks.
    SelfAttention,
    /// No set encoder: embeddings are summed directly.
    None,
}

/// Set encoder for one event type.
#[derive(Clone, Debug)]
pub enum SetEncoder {
    Isab(Box<[IsabBlock; 2]>),
    SelfAttention(Box<[SabBlock; 2]>),
    Identity,
}

impl SetEncoder {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        kind: SetEncoderKind,
        width: usize,
        inducing_points: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(match kind {
            SetEncoderKind::Isab => SetEncoder::Isab(Box::new([
                IsabBlock::new(store, &format!("{prefix}.isab0"), width, inducing_points, heads, rng)?,
                IsabBlock::new(store, &format!("{prefix}.isab1"), width, inducing_points, heads, rng)?,
            ])),
            SetEncoderKind::SelfAttention => SetEncoder::SelfAttention(Box::new([
                SabBlock::new(store, &format!("{prefix}.sab0"), width, heads, rng)?,
                SabBlock::new(store, &format!("{prefix}.sab1"), width, heads, rng)?,
            ])),
            SetEncoderKind::None => SetEncoder::Identity,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        match self {
            SetEncoder::Isab(blocks) => {
                let h = blocks[0].forward(tape, store, x)?;
                blocks[1].forward(tape, store, h)
            }
            SetEncoder::SelfAttention(blocks) => {
                let h = blocks[0].forward(tape, store, x)?;
                blocks[1].forward(tape, store, h)
            }
            SetEncoder::Identity => Ok(x),
        }
    }
}

/// Encoded code matrices `S_d`, `S_p`, `S_m` of one visit.
#[derive(Clone, Copy, Debug)]
pub struct EncodedSets {
    pub diagnoses: Var,
    pub procedures: Var,
    pub medications: Var,
}

pub fn set_encode(
    tape: &mut Tape,
    store: &ParamStore,
    codes: &CodeEmbeddings,
    encoders: &[SetEncoder; 3],
) -> Result<EncodedSets> {
    Ok(EncodedSets {
        diagnoses: encoders[0].forward(tape, store, codes.diagnoses)?,
        procedures: encoders[1].forward(tape, store, codes.procedures)?,
        medications: encoders[2].forward(tape, store, codes.medications)?,
    })
}

/// Sums each encoded matrix over its code axis and concatenates the three
/// sums into one `1 x 3*dim` row.
pub fn visit_representation(tape: &mut Tape, sets: &EncodedSets) -> Result<Var> {
    let d = tape.sum_rows(sets.diagnoses);
    let p = tape.sum_rows(sets.procedures);
    let m = tape.sum_rows(sets.medications);
    tape.concat_cols(&[d, p, m])
}

/// Embedding tables plus the three set encoders.
#[derive(Clone, Debug)]
pub struct VisitEncoder {
    pub tables: EmbeddingTables,
    pub encoders: [SetEncoder; 3],
}

impl VisitEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        sizes: [usize; 3],
        kind: SetEncoderKind,
        dim: usize,
        inducing_points: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let tables = EmbeddingTables::new(store, sizes, dim, rng);
        let encoders = [
            SetEncoder::new(store, "se_d", kind, dim, inducing_points, heads, rng)?,
            SetEncoder::new(store, "se_p", kind, dim, inducing_points, heads, rng)?,
            SetEncoder::new(store, "se_m", kind, dim, inducing_points, heads, rng)?,
        ];
        Ok(Self { tables, encoders })
    }

    /// Visit token `V^(t)` for `visit` given its medication input.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        visit: &Visit,
        previous: MedicationInput<'_>,
    ) -> Result<Var> {
        let codes = embed_codes(tape, store, &self.tables, visit, previous)?;
        let sets = set_encode(tape, store, &codes, &self.encoders)?;
        visit_representation(tape, &sets)
    }
}
