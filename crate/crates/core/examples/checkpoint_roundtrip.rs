//! Trains briefly, saves a checkpoint, reloads it and predicts for a new
//! patient whose first visit uses the padding medication input.
//!
//!     cargo run --example checkpoint_roundtrip

use medrec::checkpoint::Checkpoint;
use medrec::config::RunConfig;
use medrec::data::{PatientRecord, SynthConfig, Visit};
use medrec::model::objective::infer_medications;
use medrec::train::{train, Outputs};

fn main() -> medrec::Result<()> {
    let data = SynthConfig {
        patients: 80,
        ..SynthConfig::default()
    }
    .generate()?;
    let cfg = RunConfig {
        epochs: 3,
        ..RunConfig::desk()
    };
    let dir = std::env::temp_dir().join("medrec-example");
    std::fs::create_dir_all(&dir).map_err(|e| medrec::Error::Io { path: dir.clone(), source: e })?;
    let path = dir.join("checkpoint.json");
    train(&cfg, &data.vocab, &data.ddi, &data.patients, &[], Outputs { checkpoint: Some(&path) })?;

    let ck = Checkpoint::load(&path)?;
    let model = ck.model()?;
    println!("loaded {} (epoch {}, {} scalars)", path.display(), ck.epoch, model.params.scalar_count());

    let patient = PatientRecord::new("new", vec![Visit::new(vec![2, 11], vec![4], vec![])?])?;
    let probs = model.predict(&patient)?;
    let picked: Vec<&str> = infer_medications(&probs[0])
        .into_iter()
        .map(|i| ck.vocabulary.codes(medrec::data::CodeKind::Medication)[i].as_str())
        .collect();
    println!("recommended: {picked:?}");
    Ok(())
}
