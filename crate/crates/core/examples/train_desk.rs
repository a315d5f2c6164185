//! Trains the desk-sized model on a synthetic cohort and evaluates it on
//! the held-out split.
//!
//!     cargo run --release --example train_desk -- 10

use medrec::config::RunConfig;
use medrec::data::{split_dataset, SynthConfig};
use medrec::metrics::{bootstrap_evaluate, predict_dataset};
use medrec::train::{train, Outputs};

fn main() -> medrec::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let data = SynthConfig::default().generate()?;
    let cfg = RunConfig {
        epochs,
        ..RunConfig::desk()
    };
    let split = split_dataset(&data.patients, cfg.split, cfg.seed)?;
    let (tr, va, te) = (data.select(&split.train), data.select(&split.validation), data.select(&split.test));
    println!("{} train / {} validation / {} test patients", tr.len(), va.len(), te.len());

    let out = train(&cfg, &data.vocab, &data.ddi, &tr, &va, Outputs::default())?;
    for e in &out.epochs {
        println!(
            "epoch {:>3}  loss {:>8.3}  val jaccard {:.4}",
            e.epoch,
            e.mean_loss,
            e.validation_jaccard.unwrap_or(f64::NAN)
        );
    }
    let preds = predict_dataset(&out.model, &te)?;
    let r = bootstrap_evaluate(&preds, &data.ddi, 10, 0.8, cfg.seed)?;
    println!(
        "test  jaccard {:.4} +- {:.4}  f1 {:.4}  prauc {:.4}  ddi {:.4}  drugs {:.2}",
        r.jaccard_mean, r.jaccard_std, r.f1_mean, r.prauc_mean, r.ddi_rate_mean, r.avg_drugs_mean
    );
    Ok(())
}
