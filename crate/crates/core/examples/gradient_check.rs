//! Compares reverse-mode gradients with central differences for one induced
//! set attention block.
//!
//!     cargo run --example gradient_check

use medrec::autograd::Tape;
use medrec::model::set_encoder::IsabBlock;
use medrec::params::{ParamId, ParamStore};
use medrec::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn loss(block: &IsabBlock, store: &ParamStore, x: ParamId) -> (Tape, medrec::autograd::Var) {
    let mut tape = Tape::new();
    let input = tape.param(store, x);
    let y = block.forward(&mut tape, store, input).unwrap();
    let sq = tape.mul(y, y).unwrap();
    let l = tape.sum_all(sq);
    (tape, l)
}

fn main() -> medrec::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let block = IsabBlock::new(&mut store, "isab", 8, 4, 2, &mut rng)?;
    let x = store.add(
        "x",
        Tensor::matrix(5, 8, (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect())?,
    );

    let (tape, l) = loss(&block, &store, x);
    let grads = tape.backward(l)?.into_param_grads(&store);
    let h = 1e-5;
    println!("{:<24} {:>8} {:>12}", "parameter", "scalars", "max |a-n|");
    for id in store.ids() {
        let mut worst: f64 = 0.0;
        for k in 0..store.get(id).len() {
            let mut s = store.clone();
            s.get_mut(id).data_mut()[k] += h;
            let (t, up) = loss(&block, &s, x);
            let up = t.value(up).item()?;
            s.get_mut(id).data_mut()[k] -= 2.0 * h;
            let (t, down) = loss(&block, &s, x);
            let down = t.value(down).item()?;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads[id.0].as_ref().map_or(0.0, |g| g.data()[k]);
            worst = worst.max((analytic - numeric).abs());
        }
        println!("{:<24} {:>8} {:>12.2e}", store.name(id), store.get(id).len(), worst);
    }
    Ok(())
}
