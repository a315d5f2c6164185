//! Encodes one visit into its `3 * dim` token and shows that the token does
//! not depend on the order codes are listed in.
//!
//!     cargo run --example set_encoder

use medrec::autograd::Tape;
use medrec::data::Visit;
use medrec::model::set_encoder::{MedicationInput, SetEncoderKind, VisitEncoder};
use medrec::params::ParamStore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> medrec::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let enc = VisitEncoder::new(&mut store, [60, 40, 30], SetEncoderKind::Isab, 32, 8, 2, &mut rng)?;
    println!("visit encoder: {} tensors, {} scalars", store.len(), store.scalar_count());

    let a = Visit::new(vec![3, 17, 42], vec![5, 9], vec![1, 7])?;
    let b = Visit::new(vec![42, 3, 17], vec![9, 5], vec![7, 1])?;
    let history = [a.clone(), b.clone()];

    let mut tape = Tape::new();
    let first = enc.forward(&mut tape, &store, &a, MedicationInput::Padding)?;
    let shuffled = enc.forward(&mut tape, &store, &b, MedicationInput::Padding)?;
    let later = enc.forward(&mut tape, &store, &b, MedicationInput::for_visit(&history, 1))?;

    let dim = 32;
    let (x, y, z) = (tape.value(first).data(), tape.value(shuffled).data(), tape.value(later).data());
    println!("token width: {}", x.len());
    println!("largest change under code permutation: {:.2e}", max_diff(x, y));
    println!("diagnosis block change with medication history: {:.2e}", max_diff(&x[..dim], &z[..dim]));
    println!("medication block change with medication history: {:.2e}", max_diff(&x[2 * dim..], &z[2 * dim..]));
    Ok(())
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
