//! Command-line front end. The `medrec` binary only calls [`run`].

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{Ablations, RunConfig};
use crate::data::{
    dataset_stats, load_dataset, load_patients, save_dataset, split_dataset, write_atomic, Dataset, DatasetSplit,
    DatasetSummary, PatientRecord, SynthConfig,
};
use crate::error::{Error, Result};
use crate::metrics::{bootstrap_evaluate, dump_text, predict_dataset, visit_index_breakdown, write_dump};
use crate::model::{DdiSign, VocabSizes};
use crate::optim::MomentMode;
use crate::train::{train, trace_file_name, write_trace, Outputs};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const SPLIT_FILE: &str = "split.json";
pub const EPOCHS_FILE: &str = "epochs.json";

#[derive(Parser, Debug)]
#[command(name = "medrec", version, about = "Longitudinal medication recommendation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint plus loss trace.
    Train(TrainArgs),
    /// Bootstrap evaluation of a checkpoint on one split.
    Eval(EvalArgs),
    /// Write per-visit predictions for a patient file.
    Predict(PredictArgs),
    /// Dataset summary and medication overlap tables.
    Stats(StatsArgs),
    /// Describe a checkpoint.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with generator settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub patients: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub ddi_density: Option<f64>,
    /// Drop co-prescribed interacting medications from the ground truth.
    #[arg(long)]
    pub ddi_avoiding: bool,
    /// Replace the contents of a non-empty output directory.
    #[arg(long)]
    pub overwrite: bool,
}

/// Overrides applied on top of the preset and the config file.
#[derive(Args, Debug, Default)]
pub struct RunOverrides {
    /// `desk` or `default`.
    #[arg(long)]
    pub preset: Option<String>,
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub inducing_points: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub state_vectors: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub max_iterations: Option<u64>,
    #[arg(long, value_parser = ["standard", "literal"])]
    pub moment_mode: Option<String>,
    #[arg(long, value_parser = ["penalty", "literal"])]
    pub ddi_sign: Option<String>,
    #[arg(long)]
    pub reversed_curriculum: bool,
    #[arg(long)]
    pub no_ise: bool,
    #[arg(long)]
    pub no_ile: bool,
    #[arg(long)]
    pub no_aclm: bool,
    #[arg(long)]
    pub no_ddi_loss: bool,
    #[arg(long)]
    pub sab_variant: bool,
}

impl RunOverrides {
    /// preset, then file, then flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let base = RunConfig::preset(self.preset.as_deref().unwrap_or("default"))?;
        let mut c = match &self.config {
            Some(path) => RunConfig::from_toml_file(path, &base)?,
            None => base,
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag { c.$field = v; })*
            };
        }
        set!(dim => dim, inducing_points => inducing_points, heads => heads, state_vectors => state_vectors,
             lr => learning_rate, epochs => epochs, seed => seed, alpha => alpha, patience => patience);
        if let Some(v) = self.max_iterations {
            c.max_iterations = Some(v);
        }
        if let Some(m) = &self.moment_mode {
            c.moment_mode = if m == "literal" { MomentMode::Literal } else { MomentMode::Standard };
        }
        if let Some(s) = &self.ddi_sign {
            c.ddi_sign = if s == "literal" { DdiSign::Literal } else { DdiSign::Penalty };
        }
        c.reversed_curriculum |= self.reversed_curriculum;
        let a: &mut Ablations = &mut c.ablations;
        a.no_ise |= self.no_ise;
        a.no_ile |= self.no_ile;
        a.no_aclm |= self.no_aclm;
        a.no_ddi_loss |= self.no_ddi_loss;
        a.sab_variant |= self.sab_variant;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory for the checkpoint, split and loss trace.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub run: RunOverrides,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
    Test,
    All,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory; defaults to the one recorded in the checkpoint.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitName,
    #[arg(long, default_value_t = 10)]
    pub rounds: usize,
    #[arg(long, default_value_t = 0.8)]
    pub fraction: f64,
    /// Sampling seed; defaults to the training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Add metrics for visits 1 through 5.
    #[arg(long)]
    pub by_visit: bool,
    /// Also write the report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the per-visit prediction dump.
    #[arg(long)]
    pub dump: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Patient file in `patients.jsonl` format; medications may be empty.
    #[arg(long)]
    pub patients: PathBuf,
    /// Dump file to write; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Print JSON instead of tables.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// List every parameter tensor.
    #[arg(long)]
    pub params: bool,
}

/// Parses `std::env::args`, runs the command and returns the exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    match execute(cli.command, &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Predict(a) => cmd_predict(&a, out),
        Command::Stats(a) => cmd_stats(&a, out),
        Command::Inspect(a) => cmd_inspect(&a, out),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

fn summary_table(s: &DatasetSummary) -> String {
    format!(
        "patients            {}\n\
         visits              {}\n\
         diagnosis codes     {}\n\
         procedure codes     {}\n\
         medication codes    {}\n\
         avg. / max. visits  {:.4} / {}\n\
         avg. / max. diag.   {:.4} / {}\n\
         avg. / max. proc.   {:.4} / {}\n\
         avg. / max. meds    {:.4} / {}\n\
         interacting pairs   {}\n",
        s.patients,
        s.visits,
        s.diagnosis_vocab,
        s.procedure_vocab,
        s.medication_vocab,
        s.avg_visits,
        s.max_visits,
        s.avg_diagnoses,
        s.max_diagnoses,
        s.avg_procedures,
        s.max_procedures,
        s.avg_medications,
        s.max_medications,
        s.ddi_pairs
    )
}

fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            toml::from_str::<SynthConfig>(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?
        }
        None => SynthConfig::default(),
    };
    if let Some(n) = a.patients {
        cfg.patients = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(d) = a.ddi_density {
        cfg.ddi_density = d;
    }
    cfg.ddi_avoiding |= a.ddi_avoiding;
    if a.out.is_dir() {
        let non_empty = fs::read_dir(&a.out).map_err(|e| Error::io(&a.out, e))?.next().is_some();
        if non_empty && !a.overwrite {
            return Err(Error::config(format!(
                "{} is not empty; pass --overwrite to replace it",
                a.out.display()
            )));
        }
    }
    let ds = cfg.generate()?;
    save_dataset(&a.out, &ds)?;
    emit(out, &summary_table(&DatasetSummary::of(&ds)))
}

fn load_split(ds: &Dataset, config: &RunConfig) -> Result<DatasetSplit> {
    split_dataset(&ds.patients, config.split, config.seed)
}

fn select(ds: &Dataset, split: &DatasetSplit, which: SplitName) -> Vec<PatientRecord> {
    match which {
        SplitName::Train => ds.select(&split.train),
        SplitName::Validation => ds.select(&split.validation),
        SplitName::Test => ds.select(&split.test),
        SplitName::All => ds.patients.clone(),
    }
}

fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut config = a.run.resolve()?;
    if let Some(d) = &a.data {
        config.dataset = Some(d.clone());
    }
    let data_dir = config
        .dataset
        .clone()
        .ok_or_else(|| Error::config("no dataset: pass --data or set `dataset` in the config file"))?;
    let ds = load_dataset(&data_dir)?;
    let split = load_split(&ds, &config)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let split_json = serde_json::to_string_pretty(&split).expect("split serializes");
    write_atomic(&a.out.join(SPLIT_FILE), split_json.as_bytes())?;

    let train_set = ds.select(&split.train);
    let validation = ds.select(&split.validation);
    let ckpt = a.out.join(CHECKPOINT_FILE);
    let outcome = train(
        &config,
        &ds.vocab,
        &ds.ddi,
        &train_set,
        &validation,
        Outputs {
            checkpoint: Some(&ckpt),
        },
    )?;
    let trace_path = a.out.join(trace_file_name(&config));
    write_trace(&trace_path, &outcome.trace)?;
    let epochs = serde_json::to_string_pretty(&outcome.epochs).expect("epochs serialize");
    write_atomic(&a.out.join(EPOCHS_FILE), epochs.as_bytes())?;
    let mut text = format!(
        "variant     {}\nsteps       {}\nepochs run  {}\nbest epoch  {}\n",
        config.ablations.tag(),
        outcome.trace.len(),
        outcome.epochs.len(),
        outcome.best_epoch
    );
    if let Some(j) = outcome.best_validation_jaccard {
        text.push_str(&format!("val jaccard {j:.4}\n"));
    }
    text.push_str(&format!("checkpoint  {}\ntrace       {}\n", ckpt.display(), trace_path.display()));
    emit(out, &text)
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let data_dir = a
        .data
        .clone()
        .or_else(|| ck.config.dataset.clone())
        .ok_or_else(|| Error::config("no dataset: pass --data"))?;
    let ds = load_dataset(&data_dir)?;
    ck.check_vocab(VocabSizes::of(&ds.vocab))?;
    let model = ck.model()?;
    let split = load_split(&ds, &ck.config)?;
    let patients = select(&ds, &split, a.split);
    if patients.is_empty() {
        return Err(Error::config(format!("the {:?} split is empty", a.split)));
    }
    let preds = predict_dataset(&model, &patients)?;
    if let Some(path) = &a.dump {
        write_dump(path, &preds)?;
    }
    let mut report = bootstrap_evaluate(&preds, &ds.ddi, a.rounds, a.fraction, a.seed.unwrap_or(ck.config.seed))?;
    if a.by_visit {
        report.by_visit_index = Some(visit_index_breakdown(&preds, &ds.ddi));
    }
    let mut echo = ck.config.echo();
    echo["split"] = serde_json::to_value(a.split).expect("split name");
    report.config = echo;
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    if let Some(path) = &a.out {
        write_atomic(path, text.as_bytes())?;
    }
    emit(out, &text)
}

fn cmd_predict(a: &PredictArgs, out: &mut dyn Write) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let model = ck.model()?;
    let patients = load_patients(&a.patients, &ck.vocabulary, false)?;
    let preds = predict_dataset(&model, &patients)?;
    match &a.out {
        Some(path) => {
            write_dump(path, &preds)?;
            emit(out, &format!("{} patients written to {}\n", preds.len(), path.display()))
        }
        None => emit(out, &dump_text(&preds)),
    }
}

fn cmd_stats(a: &StatsArgs, out: &mut dyn Write) -> Result<()> {
    let ds = load_dataset(&a.data)?;
    let summary = DatasetSummary::of(&ds);
    let stats = dataset_stats(&ds.patients)?;
    if a.json {
        let v = serde_json::json!({ "summary": summary, "stats": stats });
        return emit(out, &(serde_json::to_string_pretty(&v).expect("stats serialize") + "\n"));
    }
    let mut text = summary_table(&summary);
    text.push_str("\nvisits  patients\n");
    for (k, n) in &stats.visit_count_histogram {
        text.push_str(&format!("{k:>6}  {n}\n"));
    }
    text.push_str("\nvisit  history jaccard  count\n");
    for h in &stats.history_jaccard {
        text.push_str(&format!("{:>5}  {:>15.4}  {}\n", h.visit_index, h.mean, h.count));
    }
    text.push_str("\nvisit  window  overlap   jaccard  count\n");
    for w in &stats.windows {
        let window = w.window.map_or("all".to_owned(), |n| n.to_string());
        text.push_str(&format!(
            "{:>5}  {:>6}  {:>7.4}  {:>8.4}  {}\n",
            w.visit_index, window, w.overlap_rate, w.jaccard, w.count
        ));
    }
    emit(out, &text)
}

fn cmd_inspect(a: &InspectArgs, out: &mut dyn Write) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let mut text = format!(
        "format       {}\nvariant      {}\nepoch        {}\nsteps        {}\nvocab        {} diagnoses, {} procedures, {} medications\nparameters   {} tensors, {} scalars\n",
        ck.version,
        ck.config.ablations.tag(),
        ck.epoch,
        ck.optimizer.step,
        ck.vocab.diagnoses,
        ck.vocab.procedures,
        ck.vocab.medications,
        ck.params.len(),
        ck.params.scalar_count()
    );
    if let Some(j) = ck.validation_jaccard {
        text.push_str(&format!("val jaccard  {j:.4}\n"));
    }
    text.push_str("config\n");
    text.push_str(&serde_json::to_string_pretty(&ck.config.echo()).expect("config serializes"));
    text.push('\n');
    if a.params {
        for e in ck.params.entries() {
            text.push_str(&format!("{:<28} {:?}\n", e.name, e.tensor.shape()));
        }
    }
    emit(out, &text)
}
