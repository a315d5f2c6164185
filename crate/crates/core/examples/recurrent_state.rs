//! Runs the recurrent attention block over a sequence of visit tokens and
//! shows that output `t` only depends on tokens up to `t`.
//!
//!     cargo run --example recurrent_state

use medrec::autograd::Tape;
use medrec::model::longitudinal::{LongitudinalEncoder, LongitudinalKind};
use medrec::params::ParamStore;
use medrec::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn main() -> medrec::Result<()> {
    let width = 24;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    let enc = LongitudinalEncoder::new(&mut store, LongitudinalKind::RecurrentAttention, width, 4, 1, &mut rng)?;
    let tokens: Vec<Tensor> = (0..5)
        .map(|_| Tensor::row((0..width).map(|_| rng.gen_range(-1.0..1.0)).collect()))
        .collect::<Result<_, _>>()?;

    let run = |tokens: &[Tensor]| -> medrec::Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let vars = tokens.iter().map(|t| tape.leaf(t.clone())).collect::<Result<Vec<_>, _>>()?;
        let out = enc.encode_sequence(&mut tape, &store, &vars)?;
        Ok(out.iter().map(|&v| tape.value(v).data().to_vec()).collect())
    };

    let base = run(&tokens)?;
    let mut altered = tokens.clone();
    altered[3] = Tensor::row(vec![5.0; width])?;
    let changed = run(&altered)?;
    println!("visit  |updated|  changed after editing visit 4");
    for t in 0..base.len() {
        println!("{:>5}  {:>9.4}  {}", t + 1, norm(&base[t]), base[t] != changed[t]);
    }
    Ok(())
}
