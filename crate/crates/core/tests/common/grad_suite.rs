use medrec::autograd::{Tape, Var};
use medrec::config::RunConfig;
use medrec::data::{DdiMatrix, PatientRecord, Visit};
use medrec::model::longitudinal::{gate, rab_step, GateParams, LongitudinalEncoder, LongitudinalKind, RabParams};
use medrec::model::objective::{bce_loss, ddi_loss, predict_probabilities, DdiSign, PredictionHead};
use medrec::model::set_encoder::{IsabBlock, MedicationInput, SabBlock, SetEncoderKind, VisitEncoder};
use medrec::model::{Model, ModelConfig, VocabSizes};
use medrec::nn::{attention, LayerNorm, MhaWeights, Mlp, RowFfn};
use medrec::params::{ParamId, ParamStore};
use medrec::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_gradients, rand_tensor, GradReport};

/// Weighted sum with fixed, position-dependent weights.
fn reduce(tape: &mut Tape, out: Var) -> Var {
    let (r, c) = tape.value(out).dims2().unwrap();
    let w = Tensor::matrix(r, c, (0..r * c).map(|k| (k as f64 * 0.7 + 0.3).sin()).collect()).unwrap();
    let w = tape.leaf(w).unwrap();
    let prod = tape.mul(out, w).unwrap();
    tape.sum_all(prod)
}

fn p(tape: &mut Tape, s: &ParamStore, i: usize) -> Var {
    tape.param(s, ParamId(i))
}

fn store_of(rng: &mut ChaCha8Rng, shapes: &[(usize, usize)]) -> ParamStore {
    let mut s = ParamStore::new();
    for (i, &(r, c)) in shapes.iter().enumerate() {
        s.add(format!("x{i}"), rand_tensor(rng, r, c, 1.0));
    }
    s
}

/// Toy sizes: dim 8, 4 inducing points, 2 state vectors, |D| 6, |P| 4, |M| 5.
pub fn toy_model(config: ModelConfig) -> (Model, PatientRecord, DdiMatrix) {
    let vocab = VocabSizes {
        diagnoses: 6,
        procedures: 4,
        medications: 5,
    };
    let model = Model::new(config, vocab, 11).unwrap();
    let patient = PatientRecord::new(
        "toy",
        vec![
            Visit::new(vec![0, 3, 5], vec![1, 2], vec![0, 2, 4]).unwrap(),
            Visit::new(vec![1, 3], vec![0], vec![1, 2]).unwrap(),
        ],
    )
    .unwrap();
    let ddi = DdiMatrix::from_unordered_pairs(5, &[(0, 1), (2, 4), (1, 3)]).unwrap();
    (model, patient, ddi)
}

pub fn toy_config() -> ModelConfig {
    ModelConfig {
        dim: 8,
        inducing_points: 4,
        heads: 2,
        state_vectors: 2,
        ..ModelConfig::default()
    }
}

fn full_loss(name: &str, config: ModelConfig) -> GradReport {
    let (model, patient, ddi) = toy_model(config);
    let alpha = RunConfig::default().alpha;
    check_gradients(name, &model.params.clone(), move |tape, s| {
        let mut m = model.clone();
        m.params = s.clone();
        m.patient_loss(tape, &patient, Some(&ddi), alpha, DdiSign::Penalty).unwrap().total
    })
}

pub fn primitives() -> Vec<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut out = Vec::new();
    macro_rules! case {
        ($name:expr, $shapes:expr, |$t:ident, $s:ident| $body:expr) => {{
            let store = store_of(&mut rng, &$shapes);
            out.push(check_gradients($name, &store, |$t: &mut Tape, $s: &ParamStore| {
                let y = $body;
                reduce($t, y)
            }));
        }};
    }
    case!("matmul", [(3, 4), (4, 2)], |t, s| {
        let (a, b) = (p(t, s, 0), p(t, s, 1));
        t.matmul(a, b).unwrap()
    });
    case!("matmul_nt", [(3, 4), (2, 4)], |t, s| {
        let (a, b) = (p(t, s, 0), p(t, s, 1));
        t.matmul_nt(a, b).unwrap()
    });
    case!("add", [(3, 4), (3, 4)], |t, s| {
        let (a, b) = (p(t, s, 0), p(t, s, 1));
        t.add(a, b).unwrap()
    });
    case!("add_row", [(3, 4), (1, 4)], |t, s| {
        let (a, b) = (p(t, s, 0), p(t, s, 1));
        t.add_row(a, b).unwrap()
    });
    case!("mul", [(3, 4), (3, 4)], |t, s| {
        let (a, b) = (p(t, s, 0), p(t, s, 1));
        t.mul(a, b).unwrap()
    });
    case!("mul_shared", [(3, 4)], |t, s| {
        let a = p(t, s, 0);
        t.mul(a, a).unwrap()
    });
    case!("scale", [(3, 4)], |t, s| {
        let a = p(t, s, 0);
        t.scale(a, -2.5)
    });
    case!("add_scalar", [(3, 4)], |t, s| {
        let a = p(t, s, 0);
        let b = t.add_scalar(a, 0.75);
        t.mul(b, b).unwrap()
    });
    case!("sigmoid", [(3, 4)], |t, s| {
        let a = p(t, s, 0);
        t.sigmoid(a)
    });
    case!("tanh", [(3, 4)], |t, s| {
        let a = p(t, s, 0);
        t.tanh(a)
    });
    {
        // keep inputs away from the kink
        let mut store = store_of(&mut rng, &[(3, 4)]);
        for x in store.get_mut(ParamId(0)).data_mut() {
            *x += 0.05 * x.signum();
        }
        out.push(check_gradients("relu", &store, |t, s| {
            let a = p(t, s, 0);
            let y = t.relu(a);
            reduce(t, y)
        }));
    }
    case!("softmax", [(3, 5)], |t, s| {
        let a = p(t, s, 0);
        t.softmax_rows(a, None).unwrap()
    });
    case!("softmax_masked", [(3, 5)], |t, s| {
        let a = p(t, s, 0);
        let mask: Vec<bool> = (0..15).map(|k| k % 4 == 1).collect();
        t.softmax_rows(a, Some(&mask)).unwrap()
    });
    case!("layer_norm", [(3, 5), (1, 5), (1, 5)], |t, s| {
        let (x, g, b) = (p(t, s, 0), p(t, s, 1), p(t, s, 2));
        t.layer_norm(x, g, b, 1e-5).unwrap()
    });
    case!("concat_cols", [(3, 2), (3, 3)], |t, s| {
        let (a, b) = (p(t, s, 0), p(t, s, 1));
        t.concat_cols(&[a, b, a]).unwrap()
    });
    case!("slice_cols", [(3, 5)], |t, s| {
        let a = p(t, s, 0);
        t.slice_cols(a, 1, 3).unwrap()
    });
    case!("sum_rows", [(3, 5)], |t, s| {
        let a = p(t, s, 0);
        t.sum_rows(a)
    });
    case!("sum_all", [(3, 5)], |t, s| {
        let a = p(t, s, 0);
        let b = t.mul(a, a).unwrap();
        t.sum_all(b)
    });
    case!("gather_rows", [(5, 3)], |t, s| {
        let a = p(t, s, 0);
        t.gather_rows(a, &[4, 0, 4, 2]).unwrap()
    });
    {
        let mut store = ParamStore::new();
        store.add("p", Tensor::row(vec![0.2, 0.7, 0.45, 0.9, 0.05]).unwrap());
        out.push(check_gradients("bce_sum", &store, |t, s| {
            let a = p(t, s, 0);
            t.bce_sum(a, &[1.0, 0.0, 1.0, 1.0, 0.0], 1e-12).unwrap()
        }));
    }
    out
}

pub fn blocks() -> Vec<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut out = Vec::new();

    let store = store_of(&mut rng, &[(2, 4), (3, 4), (3, 4)]);
    out.push(check_gradients("attention", &store, |t, s| {
        let (q, k, v) = (p(t, s, 0), p(t, s, 1), p(t, s, 2));
        let y = attention(t, q, k, v, None).unwrap();
        reduce(t, y)
    }));
    out.push(check_gradients("attention_masked", &store, |t, s| {
        let (q, k, v) = (p(t, s, 0), p(t, s, 1), p(t, s, 2));
        let mask = [false, true, false, false, false, true];
        let y = attention(t, q, k, v, Some(&mask)).unwrap();
        reduce(t, y)
    }));

    let mut store = store_of(&mut rng, &[(2, 8), (3, 8)]);
    let mha = MhaWeights::new(&mut store, "mha", 8, 2, &mut rng).unwrap();
    out.push(check_gradients("multi_head_attention", &store, |t, s| {
        let (q, kv) = (p(t, s, 0), p(t, s, 1));
        let y = mha.forward(t, s, q, kv, kv, None).unwrap();
        reduce(t, y)
    }));

    let mut store = store_of(&mut rng, &[(3, 8)]);
    let ffn = RowFfn::new(&mut store, "ffn", 8, &mut rng);
    let mlp = Mlp::new(&mut store, "mlp", 8, &mut rng);
    let ln = LayerNorm::new(&mut store, "ln", 8);
    for k in 0..8 {
        store.get_mut(ln.gain).data_mut()[k] = 1.0 + 0.1 * k as f64;
    }
    out.push(check_gradients("ffn_mlp_layer_norm", &store, |t, s| {
        let x = p(t, s, 0);
        let a = ffn.forward(t, s, x).unwrap();
        let b = mlp.forward(t, s, a).unwrap();
        let y = ln.forward(t, s, b).unwrap();
        reduce(t, y)
    }));

    let mut store = store_of(&mut rng, &[(3, 8)]);
    let isab = IsabBlock::new(&mut store, "isab", 8, 4, 2, &mut rng).unwrap();
    out.push(check_gradients("isab_block", &store, |t, s| {
        let x = p(t, s, 0);
        let y = isab.forward(t, s, x).unwrap();
        reduce(t, y)
    }));

    let mut store = store_of(&mut rng, &[(3, 8)]);
    let sab = SabBlock::new(&mut store, "sab", 8, 2, &mut rng).unwrap();
    out.push(check_gradients("sab_block", &store, |t, s| {
        let x = p(t, s, 0);
        let y = sab.forward(t, s, x).unwrap();
        reduce(t, y)
    }));

    let visits = [
        Visit::new(vec![0, 3], vec![1], vec![2, 4]).unwrap(),
        Visit::new(vec![5, 1, 2], vec![0, 3], vec![1]).unwrap(),
    ];
    for (name, kind) in [
        ("visit_encoder_isab", SetEncoderKind::Isab),
        ("visit_encoder_sab", SetEncoderKind::SelfAttention),
        ("visit_encoder_sum", SetEncoderKind::None),
    ] {
        let mut store = ParamStore::new();
        let enc = VisitEncoder::new(&mut store, [6, 4, 5], kind, 8, 4, 2, &mut rng).unwrap();
        out.push(check_gradients(name, &store, |t, s| {
            let y = enc.forward(t, s, &visits[1], MedicationInput::for_visit(&visits, 1)).unwrap();
            reduce(t, y)
        }));
    }

    let mut store = store_of(&mut rng, &[(2, 6), (2, 6)]);
    let g = GateParams::new(&mut store, "gate", 6, &mut rng);
    for id in [g.forget.b, g.input.b, g.update.b] {
        let noise = rand_tensor(&mut rng, 1, 6, 0.5);
        store.set(id, noise).unwrap();
    }
    out.push(check_gradients("gate", &store, |t, s| {
        let (x, y) = (p(t, s, 0), p(t, s, 1));
        let z = gate(t, s, x, y, &g).unwrap();
        reduce(t, z)
    }));

    let mut store = ParamStore::new();
    let rab = RabParams::new(&mut store, 24, 2, 1, &mut rng).unwrap();
    store.set(rab.initial_state, rand_tensor(&mut rng, 2, 24, 1.0)).unwrap();
    let token = store.add("token", rand_tensor(&mut rng, 1, 24, 1.0));
    out.push(check_gradients("recurrent_attention_step", &store, |t, s| {
        let c = t.param(s, rab.initial_state);
        let v = t.param(s, token);
        let (next, updated) = rab_step(t, s, &rab, c, v).unwrap();
        let a = reduce(t, next);
        let b = reduce(t, updated);
        t.add(a, b).unwrap()
    }));

    for (name, kind) in [
        ("recurrent_sequence", LongitudinalKind::RecurrentAttention),
        ("gru_sequence", LongitudinalKind::Gru),
    ] {
        let mut store = ParamStore::new();
        let enc = LongitudinalEncoder::new(&mut store, kind, 12, 2, 1, &mut rng).unwrap();
        let tokens = [
            store.add("v1", rand_tensor(&mut rng, 1, 12, 1.0)),
            store.add("v2", rand_tensor(&mut rng, 1, 12, 1.0)),
        ];
        out.push(check_gradients(name, &store, |t, s| {
            let vs: Vec<Var> = tokens.iter().map(|&id| t.param(s, id)).collect();
            let outs = enc.encode_sequence(t, s, &vs).unwrap();
            let a = reduce(t, outs[0]);
            let b = reduce(t, outs[1]);
            t.add(a, b).unwrap()
        }));
    }

    let mut store = store_of(&mut rng, &[(1, 24), (1, 24)]);
    let head = PredictionHead::new(&mut store, 24, 5, &mut rng);
    let ddi = DdiMatrix::from_unordered_pairs(5, &[(0, 1), (3, 4)]).unwrap();
    out.push(check_gradients("head_bce_ddi", &store, |t, s| {
        let probs = [p(t, s, 0), p(t, s, 1)]
            .map(|v| predict_probabilities(t, s, &head, v).unwrap());
        let bce = bce_loss(t, &probs, &[vec![1.0, 0.0, 0.0, 1.0, 1.0], vec![0.0, 1.0, 0.0, 0.0, 1.0]]).unwrap();
        let adj = t.leaf(ddi.to_tensor()).unwrap();
        let d = ddi_loss(t, &probs, adj, DdiSign::Penalty).unwrap();
        let d = t.scale(d, 0.3);
        t.add(bce, d).unwrap()
    }));
    out
}

pub fn full_losses() -> Vec<GradReport> {
    let base = toy_config();
    vec![
        full_loss("full_loss", base.clone()),
        full_loss(
            "full_loss_sab_gru",
            ModelConfig {
                set_encoder: SetEncoderKind::SelfAttention,
                longitudinal: LongitudinalKind::Gru,
                ..base
            },
        ),
    ]
}

pub fn all() -> Vec<GradReport> {
    let mut v = primitives();
    v.extend(blocks());
    v.extend(full_losses());
    v
}
