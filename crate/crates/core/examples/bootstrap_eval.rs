//! Bootstrap evaluation of a prediction dump, with the per-visit breakdown.
//!
//!     cargo run --example bootstrap_eval

use medrec::data::SynthConfig;
use medrec::metrics::{bootstrap_evaluate, predict_dataset, visit_index_breakdown};
use medrec::model::{Model, ModelConfig, VocabSizes};

fn main() -> medrec::Result<()> {
    let data = SynthConfig {
        patients: 200,
        ..SynthConfig::default()
    }
    .generate()?;
    // an untrained model is enough to exercise the protocol
    let model = Model::new(ModelConfig::desk(), VocabSizes::of(&data.vocab), 1)?;
    let preds = predict_dataset(&model, &data.patients)?;

    for fraction in [0.8, 1.0] {
        let r = bootstrap_evaluate(&preds, &data.ddi, 10, fraction, 2023)?;
        println!(
            "fraction {fraction}: jaccard {:.4} +- {:.4}  f1 {:.4} +- {:.4}  prauc {:.4} +- {:.4}",
            r.jaccard_mean, r.jaccard_std, r.f1_mean, r.f1_std, r.prauc_mean, r.prauc_std
        );
    }
    println!("\nvisit  patients  jaccard  prauc");
    for b in visit_index_breakdown(&preds, &data.ddi) {
        println!("{:>5}  {:>8}  {:>7.4}  {:>5.4}", b.visit_index, b.patients, b.jaccard, b.prauc);
    }
    Ok(())
}
