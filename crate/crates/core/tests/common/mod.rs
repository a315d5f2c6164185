#![allow(dead_code)]

use std::collections::HashSet;

use medrec::autograd::{Tape, Var};
use medrec::data::{DdiMatrix, PatientRecord, Visit};
use medrec::metrics::PatientPrediction;
use medrec::params::{ParamId, ParamStore};
use medrec::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub mod grad_suite;

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so that gradients near zero
/// are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-4;
pub const GRAD_TOL: f64 = 1e-5;

pub fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub name: String,
    pub checked: usize,
    pub max_rel: f64,
}

/// Compares reverse-mode gradients of `f` against central differences for
/// every scalar of every parameter in `store`.
pub fn check_gradients(name: &str, store: &ParamStore, f: impl Fn(&mut Tape, &ParamStore) -> Var) -> GradReport {
    let mut tape = Tape::new();
    let loss = f(&mut tape, store);
    let grads = tape.backward(loss).unwrap().into_param_grads(store);
    let mut work = store.clone();
    let eval = |s: &ParamStore| {
        let mut t = Tape::new();
        let l = f(&mut t, s);
        t.value(l).item().unwrap()
    };
    let mut max_rel: f64 = 0.0;
    let mut checked = 0;
    for (i, g) in grads.iter().enumerate() {
        let id = ParamId(i);
        for k in 0..store.get(id).len() {
            let orig = store.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = orig + FD_STEP;
            let up = eval(&work);
            work.get_mut(id).data_mut()[k] = orig - FD_STEP;
            let down = eval(&work);
            work.get_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let analytic = g.as_ref().map_or(0.0, |g| g.data()[k]);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
            max_rel = max_rel.max(rel);
            checked += 1;
        }
    }
    GradReport {
        name: name.to_owned(),
        checked,
        max_rel,
    }
}

/// Random visit over the given vocabulary sizes; medications may be empty
/// when `min_meds == 0`.
pub fn random_visit(rng: &mut ChaCha8Rng, sizes: [usize; 3], max_codes: usize, min_meds: usize) -> Visit {
    let mut pick = |n: usize, lo: usize| {
        let k = rng.gen_range(lo..=max_codes.min(n));
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(rng);
        all.truncate(k);
        all
    };
    let d = pick(sizes[0], 1);
    let p = pick(sizes[1], 1);
    let m = pick(sizes[2], min_meds);
    Visit::new(d, p, m).unwrap()
}

pub fn random_patient(rng: &mut ChaCha8Rng, id: &str, sizes: [usize; 3], max_visits: usize) -> PatientRecord {
    let t = rng.gen_range(1..=max_visits);
    let visits = (0..t).map(|_| random_visit(rng, sizes, 5, 1)).collect();
    PatientRecord::new(id, visits).unwrap()
}

// ---- brute-force metric oracles ----

pub fn naive_jaccard(truth: &[usize], pred: &[usize]) -> f64 {
    let a: HashSet<_> = truth.iter().collect();
    let b: HashSet<_> = pred.iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

pub fn naive_f1(truth: &[usize], pred: &[usize]) -> f64 {
    let hits = pred.iter().filter(|p| truth.contains(p)).count() as f64;
    let p = match (pred.len(), truth.len()) {
        (0, 0) => 1.0,
        (0, _) => 0.0,
        (n, _) => hits / n as f64,
    };
    let r = match (truth.len(), pred.len()) {
        (0, 0) => 1.0,
        (0, _) => 0.0,
        (n, _) => hits / n as f64,
    };
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Area under the step precision-recall curve, evaluated at every cut of
/// the ranked list.
pub fn naive_ap(scores: &[f64], truth: &[usize]) -> Option<f64> {
    if truth.is_empty() {
        return None;
    }
    let n = scores.len();
    let mut ranked: Vec<usize> = Vec::new();
    let mut left: Vec<usize> = (0..n).collect();
    while !left.is_empty() {
        let mut best = 0;
        for k in 1..left.len() {
            let (a, b) = (left[k], left[best]);
            if scores[a] > scores[b] || (scores[a] == scores[b] && a < b) {
                best = k;
            }
        }
        ranked.push(left.remove(best));
    }
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for cut in 1..=n {
        let top = &ranked[..cut];
        let hits = top.iter().filter(|c| truth.contains(c)).count() as f64;
        let precision = hits / cut as f64;
        let recall = hits / truth.len() as f64;
        area += precision * (recall - prev_recall);
        prev_recall = recall;
    }
    Some(area)
}

pub fn naive_ddi_rate(pred: &[usize], ddi: &DdiMatrix, width: usize) -> f64 {
    let mut pairs = 0;
    let mut bad = 0;
    for i in 0..width {
        for j in i + 1..width {
            if pred.contains(&i) && pred.contains(&j) {
                pairs += 1;
                if ddi.interacts(i, j) && ddi.interacts(j, i) {
                    bad += 1;
                }
            }
        }
    }
    if pairs == 0 {
        0.0
    } else {
        bad as f64 / pairs as f64
    }
}

pub struct NaiveMetrics {
    pub jaccard: f64,
    pub f1: f64,
    pub prauc: Option<f64>,
    pub ddi_rate: f64,
}

pub fn naive_patient(p: &PatientPrediction, ddi: &DdiMatrix, width: usize) -> NaiveMetrics {
    let t = p.visits.len() as f64;
    let mut j = 0.0;
    let mut f = 0.0;
    let mut d = 0.0;
    let mut aps = Vec::new();
    for v in &p.visits {
        j += naive_jaccard(&v.truth, &v.predicted);
        f += naive_f1(&v.truth, &v.predicted);
        d += naive_ddi_rate(&v.predicted, ddi, width);
        if let Some(ap) = naive_ap(&v.probabilities, &v.truth) {
            aps.push(ap);
        }
    }
    NaiveMetrics {
        jaccard: j / t,
        f1: f / t,
        prauc: (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64),
        ddi_rate: d / t,
    }
}

/// Random prediction dump for one patient. Scores are drawn from a small
/// grid so ties are common.
pub fn random_prediction(rng: &mut ChaCha8Rng, id: &str, width: usize, max_visits: usize) -> PatientPrediction {
    use medrec::metrics::VisitPrediction;
    let visits = (0..rng.gen_range(1..=max_visits))
        .map(|_| {
            let probabilities: Vec<f64> = (0..width).map(|_| rng.gen_range(0..8) as f64 / 8.0).collect();
            let predicted = (0..width).filter(|&c| probabilities[c] > 0.5).collect();
            let truth = (0..width).filter(|_| rng.gen_bool(0.3)).collect();
            VisitPrediction {
                probabilities,
                predicted,
                truth,
            }
        })
        .collect();
    PatientPrediction {
        id: id.to_owned(),
        visits,
    }
}

pub fn random_ddi(rng: &mut ChaCha8Rng, width: usize, density: f64) -> DdiMatrix {
    let mut pairs = Vec::new();
    for i in 0..width {
        for j in i + 1..width {
            if rng.gen_bool(density) {
                pairs.push((i, j));
            }
        }
    }
    DdiMatrix::from_unordered_pairs(width, &pairs).unwrap()
}

/// Largest absolute gap between library metrics and the brute-force
/// oracles over `instances` random patients.
pub fn metric_oracle_gap(instances: usize, seed: u64) -> f64 {
    use medrec::metrics;
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let width = rng.gen_range(1..=12);
        let p = random_prediction(&mut rng, &format!("p{i}"), width, 5);
        let density = rng.gen_range(0.0..0.6);
        let ddi = random_ddi(&mut rng, width, density);
        let naive = naive_patient(&p, &ddi, width);
        let lib_prauc = metrics::prauc(&p);
        assert_eq!(lib_prauc.is_some(), naive.prauc.is_some(), "instance {i}: prauc defined");
        let gaps = [
            (metrics::jaccard(&p) - naive.jaccard).abs(),
            (metrics::f1(&p) - naive.f1).abs(),
            (metrics::ddi_rate(&p, &ddi) - naive.ddi_rate).abs(),
            lib_prauc.zip(naive.prauc).map_or(0.0, |(a, b)| (a - b).abs()),
        ];
        for g in gaps {
            worst = worst.max(g);
        }
    }
    worst
}
