//! Generates a synthetic cohort with planted diagnosis-to-medication rules,
//! writes it to disk and prints the summary and overlap tables.
//!
//!     cargo run --example synthetic_dataset -- /tmp/medrec-data

use medrec::data::{dataset_stats, load_dataset, synth_generate, DatasetSummary, SynthConfig};

fn main() -> medrec::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "target/medrec-synth".into());
    let cfg = SynthConfig {
        patients: 300,
        ..SynthConfig::default()
    };
    synth_generate(&cfg, &dir)?;
    let ds = load_dataset(&dir)?;
    let s = DatasetSummary::of(&ds);
    println!("{dir}: {} patients, {} visits", s.patients, s.visits);
    println!("avg/max visits {:.2}/{}  avg meds {:.2}  ddi pairs {}", s.avg_visits, s.max_visits, s.avg_medications, s.ddi_pairs);

    let rules = cfg.resolved_rules()?;
    for (d, meds) in rules.images.iter().take(5) {
        println!("rule {} -> {:?}", ds.vocab.codes(medrec::data::CodeKind::Diagnosis)[*d], meds);
    }

    let stats = dataset_stats(&ds.patients)?;
    println!("\nvisit  window  overlap  jaccard");
    for w in stats.windows.iter().filter(|w| w.visit_index <= 4) {
        let win = w.window.map_or("all".to_string(), |n| n.to_string());
        println!("{:>5}  {:>6}  {:>7.3}  {:>7.3}", w.visit_index, win, w.overlap_rate, w.jaccard);
    }
    Ok(())
}
