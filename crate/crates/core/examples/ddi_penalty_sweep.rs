//! Trains with several interaction penalty weights on a cohort with a dense
//! interaction graph and reports accuracy against the interaction rate.
//!
//!     cargo run --release --example ddi_penalty_sweep

use medrec::config::RunConfig;
use medrec::data::{split_dataset, SynthConfig};
use medrec::metrics::{evaluate, predict_dataset};
use medrec::train::{train, Outputs};

fn main() -> medrec::Result<()> {
    let data = SynthConfig {
        ddi_density: 0.3,
        ..SynthConfig::default()
    }
    .generate()?;
    let base = RunConfig {
        epochs: 8,
        ..RunConfig::desk()
    };
    let split = split_dataset(&data.patients, base.split, base.seed)?;
    let (tr, va, te) = (data.select(&split.train), data.select(&split.validation), data.select(&split.test));
    println!("{:>6}  {:>7}  {:>8}  {:>6}", "alpha", "jaccard", "ddi rate", "drugs");
    for alpha in [0.0, 0.01, 0.05, 0.1, 0.5] {
        let cfg = RunConfig { alpha, ..base.clone() };
        let out = train(&cfg, &data.vocab, &data.ddi, &tr, &va, Outputs::default())?;
        let preds = predict_dataset(&out.model, &te)?;
        let m = evaluate(&preds.iter().collect::<Vec<_>>(), &data.ddi);
        println!("{alpha:>6}  {:>7.4}  {:>8.4}  {:>6.2}", m.jaccard, m.ddi_rate, m.avg_drugs);
    }
    Ok(())
}
