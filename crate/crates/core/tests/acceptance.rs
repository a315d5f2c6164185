//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use clap::Parser;
use medrec::autograd::Tape;
use medrec::cli::{execute, Cli};
use medrec::config::RunConfig;
use medrec::data::{split_dataset, to_multihot, Dataset, PatientRecord, SynthConfig, Visit};
use medrec::metrics::{self, bootstrap_evaluate, predict_dataset, visit_index_breakdown, PatientPrediction, VisitPrediction};
use medrec::model::set_encoder::MedicationInput;
use medrec::model::{Model, VocabSizes};
use medrec::optim::{adam_step, effective_lr, CurriculumContext, MomentMode, OptimizerState, Schedule};
use medrec::params::{ParamId, ParamStore};
use medrec::tensor::Tensor;
use medrec::train::{mean_jaccard, mean_loss, train, Outputs, TrainOutcome};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit: Duration, elapsed: Duration) -> Result<(), String> {
    if elapsed > limit {
        Err(format!("took {elapsed:.1?}, limit {limit:?}"))
    } else {
        Ok(())
    }
}

fn desk_vocab() -> VocabSizes {
    let s = SynthConfig::default();
    VocabSizes {
        diagnoses: s.diagnoses,
        procedures: s.procedures,
        medications: s.medications,
    }
}

fn gradient_suite() -> Outcome {
    let t = Instant::now();
    let reports = common::grad_suite::all();
    within(Duration::from_secs(120), t.elapsed())?;
    let worst = reports
        .iter()
        .max_by(|a, b| a.max_rel.total_cmp(&b.max_rel))
        .unwrap();
    let scalars: usize = reports.iter().map(|r| r.checked).sum();
    check(
        worst.max_rel < common::GRAD_TOL && reports.iter().all(|r| r.checked > 0),
        format!(
            "{} checks, {scalars} scalars, worst {:.2e} ({}) < {:e}",
            reports.len(),
            worst.max_rel,
            worst.name,
            common::GRAD_TOL
        ),
    )
}

fn permutation_invariance() -> Outcome {
    let t = Instant::now();
    let v = desk_vocab();
    let model = Model::new(RunConfig::desk().model(), v, 5).unwrap();
    let sizes = [v.diagnoses, v.procedures, v.medications];
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut bad = 0;
    for _ in 0..200 {
        let visit = common::random_visit(&mut rng, sizes, 8, 0);
        let previous = common::random_visit(&mut rng, sizes, 8, 1).medications;
        let token = |d: &[usize], p: &[usize], prev: &[usize]| {
            let shuffled = Visit::new(d.to_vec(), p.to_vec(), visit.medications.clone()).unwrap();
            let mut tape = Tape::new();
            let out = model
                .encoder
                .forward(&mut tape, &model.params, &shuffled, MedicationInput::Previous(prev))
                .unwrap();
            tape.value(out).data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        };
        let reference = token(&visit.diagnoses, &visit.procedures, &previous);
        let (mut d, mut p, mut m) = (visit.diagnoses.clone(), visit.procedures.clone(), previous.clone());
        d.shuffle(&mut rng);
        p.shuffle(&mut rng);
        m.shuffle(&mut rng);
        if token(&d, &p, &m) != reference {
            bad += 1;
        }
    }
    within(Duration::from_secs(30), t.elapsed())?;
    check(bad == 0, format!("200 visits, {bad} tokens changed under code permutation"))
}

fn causality() -> Outcome {
    let t = Instant::now();
    let v = desk_vocab();
    let model = Model::new(RunConfig::desk().model(), v, 6).unwrap();
    let sizes = [v.diagnoses, v.procedures, v.medications];
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (mut leaks, mut prefix_breaks, mut probes) = (0, 0, 0);
    for i in 0..100 {
        let p = common::random_patient(&mut rng, &format!("c{i}"), sizes, 6);
        let full = model.predict(&p).unwrap();
        for cut in 1..p.visit_count() {
            probes += 1;
            let prefix = PatientRecord::new(p.id.clone(), p.visits[..cut].to_vec()).unwrap();
            if model.predict(&prefix).unwrap()[..] != full[..cut] {
                prefix_breaks += 1;
            }
            let mut changed = p.clone();
            changed.visits[cut] = common::random_visit(&mut rng, sizes, 6, 1);
            if model.predict(&changed).unwrap()[..cut] != full[..cut] {
                leaks += 1;
            }
        }
    }
    within(Duration::from_secs(60), t.elapsed())?;
    check(
        leaks == 0 && prefix_breaks == 0 && probes > 0,
        format!("100 patients, {probes} cut points, {leaks} leaks, {prefix_breaks} prefix mismatches"),
    )
}

fn metric_oracles() -> Outcome {
    let t = Instant::now();
    let gap = common::metric_oracle_gap(1000, 2024);
    within(Duration::from_secs(60), t.elapsed())?;
    check(gap < 1e-12, format!("1000 instances, largest gap {gap:.1e}"))
}

fn curriculum_schedule() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (mut mismatches, mut clamped) = (0, 0);
    for _ in 0..10_000 {
        let gamma: f64 = rng.gen_range(1e-6..1.0);
        let horizon: u64 = rng.gen_range(1..100_000);
        let i: u64 = rng.gen_range(0..horizon + horizon / 4 + 1);
        let l: u64 = rng.gen_range(1..100);
        let got = effective_lr(gamma, i, l, horizon).unwrap();
        let closed = gamma * (1.0 - (i as f64 + l as f64) / horizon as f64);
        let expected = if closed < 0.0 { 0.0 } else { closed };
        if i + l > horizon {
            clamped += 1;
            if got != 0.0 {
                mismatches += 1;
            }
        }
        if got.to_bits() != expected.to_bits() && !(got == 0.0 && expected == 0.0) {
            mismatches += 1;
        }
    }
    let zero_horizon = effective_lr(1e-3, 0, 1, 0).is_err();
    within(Duration::from_secs(5), t.elapsed())?;
    check(
        mismatches == 0 && clamped > 0 && zero_horizon,
        format!("10000 tuples, {clamped} past the horizon, {mismatches} mismatches"),
    )
}

fn optimizer() -> Outcome {
    let t = Instant::now();
    let mut store = ParamStore::new();
    store.add("theta", Tensor::scalar(0.0));
    let mut st = OptimizerState::new(&store, 1e-3, 50, MomentMode::Literal, Schedule::Curriculum).unwrap();
    let ctx = CurriculumContext { iteration: 0, visits: 1 };
    let rate = adam_step(&mut store, &[Some(Tensor::scalar(1.0))], &mut st, ctx).unwrap();
    let (mu, eta) = (st.first[0].data()[0], st.second[0].data()[0]);
    let theta = store.get(ParamId(0)).data()[0];
    let first_ok = mu == 1.0 && eta == 1.0 && theta == -rate / (1.0 + 1e-8);

    let mut store = ParamStore::new();
    store.add("theta", Tensor::scalar(1.0));
    let mut st = OptimizerState::new(&store, 1e-2, 1000, MomentMode::Standard, Schedule::Constant).unwrap();
    let mut reached = None;
    for step in 1..=1000u64 {
        let th = store.get(ParamId(0)).data()[0];
        // f(theta) = theta^2 / 2
        let g = Some(Tensor::scalar(th));
        let ctx = CurriculumContext { iteration: step - 1, visits: 1 };
        adam_step(&mut store, &[g], &mut st, ctx).unwrap();
        if reached.is_none() && store.get(ParamId(0)).data()[0].abs() < 1e-3 {
            reached = Some(step);
        }
    }
    let last = store.get(ParamId(0)).data()[0];
    within(Duration::from_secs(5), t.elapsed())?;
    check(
        first_ok && reached.is_some(),
        format!(
            "literal step mu={mu} eta={eta} dtheta={theta:.3e}; quadratic |theta|<1e-3 at step {reached:?}, |theta| after 1000 = {:.1e}",
            last.abs()
        ),
    )
}

fn fit(cfg: &RunConfig, data: &Dataset, train_set: &[PatientRecord], validation: &[PatientRecord]) -> TrainOutcome {
    train(cfg, &data.vocab, &data.ddi, train_set, validation, Outputs::default()).unwrap()
}

fn overfit() -> Outcome {
    let t = Instant::now();
    let data = SynthConfig {
        patients: 200,
        ..SynthConfig::default()
    }
    .generate()
    .unwrap();
    let cfg = RunConfig {
        epochs: 100,
        ..RunConfig::desk()
    };
    let initial = Model::new(cfg.model(), VocabSizes::of(&data.vocab), cfg.seed).unwrap();
    let before = mean_loss(&initial, &data.patients, &data.ddi, &cfg).unwrap();
    let out = fit(&cfg, &data, &data.patients, &[]);
    let after = mean_loss(&out.model, &data.patients, &data.ddi, &cfg).unwrap();
    let jaccard = mean_jaccard(&out.model, &data.patients).unwrap();
    let elapsed = t.elapsed();
    within(Duration::from_secs(600), elapsed)?;
    check(
        jaccard >= 0.95 && after < 0.1 * before,
        format!(
            "train jaccard {jaccard:.4} (>= 0.95), loss {before:.3} -> {after:.3} (ratio {:.4} < 0.1), {elapsed:.0?}",
            after / before
        ),
    )
}

fn prevalence_baseline(train_set: &[PatientRecord], test: &[PatientRecord], width: usize) -> f64 {
    let mut counts = vec![0.0; width];
    let mut visits = 0.0;
    for v in train_set.iter().flat_map(|p| &p.visits) {
        visits += 1.0;
        for (c, x) in to_multihot(&v.medications, width).unwrap().into_iter().enumerate() {
            counts[c] += x;
        }
    }
    let fixed: Vec<usize> = (0..width).filter(|&c| counts[c] / visits > 0.5).collect();
    let dump: Vec<PatientPrediction> = test
        .iter()
        .map(|p| PatientPrediction {
            id: p.id.clone(),
            visits: p
                .visits
                .iter()
                .map(|v| VisitPrediction {
                    probabilities: vec![0.0; width],
                    predicted: fixed.clone(),
                    truth: v.medications.clone(),
                })
                .collect(),
        })
        .collect();
    let refs: Vec<_> = dump.iter().collect();
    metrics::evaluate(&refs, &medrec::data::DdiMatrix::empty(width)).jaccard
}

fn split3(data: &Dataset, seed: u64) -> [Vec<PatientRecord>; 3] {
    let s = split_dataset(&data.patients, [4, 1, 1], seed).unwrap();
    [data.select(&s.train), data.select(&s.validation), data.select(&s.test)]
}

fn generalization() -> Outcome {
    let t = Instant::now();
    let mut margins = Vec::new();
    let mut parts = Vec::new();
    for seed in [2023u64, 2024, 2025] {
        let data = SynthConfig {
            seed,
            ..SynthConfig::default()
        }
        .generate()
        .unwrap();
        let [tr, va, te] = split3(&data, seed);
        let cfg = RunConfig {
            epochs: 15,
            seed,
            ..RunConfig::desk()
        };
        let out = fit(&cfg, &data, &tr, &va);
        let model_j = mean_jaccard(&out.model, &te).unwrap();
        let base_j = prevalence_baseline(&tr, &te, data.vocab.medication_count());
        margins.push(model_j - base_j);
        parts.push(format!("seed {seed}: {model_j:.3} vs {base_j:.3}"));
    }
    let elapsed = t.elapsed();
    within(Duration::from_secs(1800), elapsed)?;
    let mean = margins.iter().sum::<f64>() / margins.len() as f64;
    check(
        mean >= 0.05,
        format!("mean margin {mean:.3} (>= 0.05); {}; {elapsed:.0?}", parts.join(", ")),
    )
}

fn ddi_control() -> Outcome {
    let t = Instant::now();
    let mut parts = Vec::new();
    let mut all_lower = true;
    for seed in [11u64, 12, 13] {
        let data = SynthConfig {
            seed,
            ddi_density: 0.3,
            ..SynthConfig::default()
        }
        .generate()
        .unwrap();
        let [tr, va, te] = split3(&data, seed);
        let mut rates = [0.0; 2];
        for (k, alpha) in [0.0, 0.5].into_iter().enumerate() {
            let cfg = RunConfig {
                epochs: 10,
                seed,
                alpha,
                ..RunConfig::desk()
            };
            let out = fit(&cfg, &data, &tr, &va);
            let preds = predict_dataset(&out.model, &te).unwrap();
            let refs: Vec<_> = preds.iter().collect();
            rates[k] = metrics::evaluate(&refs, &data.ddi).ddi_rate;
        }
        all_lower &= rates[1] < rates[0];
        parts.push(format!("seed {seed}: {:.3} -> {:.3}", rates[0], rates[1]));
    }
    let elapsed = t.elapsed();
    within(Duration::from_secs(1800), elapsed)?;
    check(
        all_lower,
        format!("test DDI rate alpha 0 -> 0.5 ({}); {elapsed:.0?}", parts.join(", ")),
    )
}

fn protocol() -> Outcome {
    let data = SynthConfig {
        patients: 300,
        ..SynthConfig::default()
    }
    .generate()
    .unwrap();
    let [tr, va, te] = split3(&data, 7);
    let cfg = RunConfig {
        epochs: 3,
        ..RunConfig::desk()
    };
    let out = fit(&cfg, &data, &tr, &va);
    let preds = predict_dataset(&out.model, &te).unwrap();
    let sampled = bootstrap_evaluate(&preds, &data.ddi, 10, 0.8, 1).unwrap();
    let json = serde_json::to_value(&sampled).unwrap();
    let keys_ok = ["jaccard", "f1", "prauc", "ddi_rate", "avg_drugs"].iter().all(|k| {
        json[format!("{k}_mean")].as_f64().is_some_and(f64::is_finite)
            && json[format!("{k}_std")].as_f64().is_some_and(|s| s.is_finite() && s >= 0.0)
    });
    let expected = (0.8 * te.len() as f64).floor() as usize;
    let rounds_ok = sampled.per_round.len() == 10 && sampled.per_round.iter().all(|r| r.patients == expected);
    let full = bootstrap_evaluate(&preds, &data.ddi, 10, 1.0, 1).unwrap();
    let stds = [full.jaccard_std, full.f1_std, full.prauc_std, full.ddi_rate_std, full.avg_drugs_std];
    let buckets = visit_index_breakdown(&preds, &data.ddi);
    let bucket_ids: Vec<usize> = buckets.iter().map(|b| b.visit_index).collect();
    check(
        keys_ok && rounds_ok && stds.iter().all(|&s| s == 0.0) && bucket_ids == [1, 2, 3, 4, 5],
        format!(
            "10 rounds x {expected}/{} patients, jaccard {:.4} +- {:.4}; fraction 1.0 stds {stds:?}; buckets {bucket_ids:?}",
            te.len(),
            sampled.jaccard_mean,
            sampled.jaccard_std
        ),
    )
}

fn run_cli(args: &[&str]) -> Result<String, String> {
    let cli = Cli::try_parse_from(std::iter::once("medrec").chain(args.iter().copied())).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    execute(cli.command, &mut out).map_err(|e| format!("{args:?}: {e}"))?;
    Ok(String::from_utf8(out).unwrap())
}

fn first_last_epoch_loss(trace: &std::path::Path) -> (f64, f64) {
    let text = std::fs::read_to_string(trace).unwrap();
    let rows: Vec<(usize, f64)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect();
    let mean_of = |e: usize| {
        let v: Vec<f64> = rows.iter().filter(|r| r.0 == e).map(|r| r.1).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    (mean_of(rows[0].0), mean_of(rows.last().unwrap().0))
}

fn ablations() -> Outcome {
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-ablations");
    let _ = std::fs::remove_dir_all(&root);
    let data = root.join("data");
    let data_s = data.to_str().unwrap();
    run_cli(&["synth", "--out", data_s, "--patients", "120"])?;
    let mut parts = Vec::new();
    let mut traces = Vec::new();
    for flag in ["", "--no-ise", "--no-ile", "--no-aclm", "--no-ddi-loss", "--sab-variant"] {
        let name = if flag.is_empty() { "full" } else { &flag[2..] };
        let out = root.join(name);
        let out_s = out.to_str().unwrap();
        let mut args = vec!["train", "--data", data_s, "--out", out_s, "--preset", "desk", "--epochs", "5"];
        if !flag.is_empty() {
            args.push(flag);
        }
        run_cli(&args)?;
        let ck = out.join("checkpoint.json");
        let report = run_cli(&["eval", "--checkpoint", ck.to_str().unwrap(), "--data", data_s])?;
        let v: serde_json::Value = serde_json::from_str(&report).map_err(|e| e.to_string())?;
        let trace = out.join(format!("loss_trace.{name}.csv"));
        if !trace.is_file() {
            return Err(format!("missing {}", trace.display()));
        }
        let (first, last) = first_last_epoch_loss(&trace);
        traces.push((name, first, last));
        parts.push(format!("{name} jaccard {:.3}", v["jaccard_mean"].as_f64().unwrap_or(f64::NAN)));
    }
    let curves: Vec<String> = traces
        .iter()
        .filter(|(n, ..)| *n == "full" || *n == "no-aclm")
        .map(|(n, a, b)| format!("{n} epoch-mean loss {a:.2} -> {b:.2}"))
        .collect();
    Ok(format!("{}; {}; traces under {}", parts.join(", "), curves.join(", "), root.display()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("gradient suite", gradient_suite),
        ("permutation invariance", permutation_invariance),
        ("causality", causality),
        ("metric oracle equivalence", metric_oracles),
        ("curriculum schedule", curriculum_schedule),
        ("optimizer", optimizer),
        ("overfit", overfit),
        ("generalization", generalization),
        ("ddi control", ddi_control),
        ("protocol fidelity", protocol),
        ("ablation harness", ablations),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n:>2} PASS  {name} [{secs:.1}s]: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name} [{secs:.1}s]: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("acceptance: {failed} criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
