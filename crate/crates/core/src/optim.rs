//! Adam with a curriculum-scaled step size.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// `gamma * (1 - (iteration + visits) / max_iterations)`, clamped below at 0.
pub fn effective_lr(gamma: f64, iteration: u64, visits: u64, max_iterations: u64) -> Result<f64> {
    if max_iterations == 0 {
        return Err(Error::config("maximum iteration count must be at least 1"));
    }
    let raw = gamma * (1.0 - (iteration as f64 + visits as f64) / max_iterations as f64);
    Ok(raw.max(0.0))
}

/// How the first and second moments are normalised.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentMode {
    /// Divide by `1 - beta^t` (textbook bias correction).
    #[default]
    Standard,
    /// Divide the stored moments by the constants `1 - beta1` and
    /// `1 - beta2` every step.
    Literal,
}

/// How the step size depends on the patient's visit count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// Longer patients and later steps get smaller rates.
    #[default]
    Curriculum,
    /// Visit count is mirrored, so shorter patients get smaller rates.
    Reversed,
    /// Constant base rate.
    Constant,
}

/// Position of the current step in training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CurriculumContext {
    /// Completed optimizer steps.
    pub iteration: u64,
    /// Visit count of the current patient.
    pub visits: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub gamma: f64,
    pub max_iterations: u64,
    pub mode: MomentMode,
    pub schedule: Schedule,
    /// Longest visit count in the training set; used by [`Schedule::Reversed`].
    pub longest: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
    /// Completed steps.
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ParamStore, gamma: f64, max_iterations: u64, mode: MomentMode, schedule: Schedule) -> Result<Self> {
        if max_iterations == 0 {
            return Err(Error::config("maximum iteration count must be at least 1"));
        }
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::config(format!("learning rate must be finite and non-negative, got {gamma}")));
        }
        let zeros: Vec<Tensor> = params.entries().iter().map(|e| Tensor::zeros_like(&e.tensor)).collect();
        Ok(Self {
            gamma,
            max_iterations,
            mode,
            schedule,
            longest: 1,
            beta1: BETA1,
            beta2: BETA2,
            epsilon: EPSILON,
            first: zeros.clone(),
            second: zeros,
            step: 0,
        })
    }

    /// Step size for `ctx` under the configured schedule.
    pub fn rate(&self, ctx: CurriculumContext) -> Result<f64> {
        if ctx.visits == 0 {
            return Err(Error::contract("visit count must be at least 1"));
        }
        match self.schedule {
            Schedule::Curriculum => effective_lr(self.gamma, ctx.iteration, ctx.visits, self.max_iterations),
            Schedule::Reversed => {
                let mirrored = (self.longest + 1).saturating_sub(ctx.visits).max(1);
                effective_lr(self.gamma, ctx.iteration, mirrored, self.max_iterations)
            }
            Schedule::Constant => Ok(self.gamma),
        }
    }

    /// Applies one update with step size `rate`.
    /// `grads[i]` of `None` is treated as a zero gradient.
    pub fn apply(&mut self, params: &mut ParamStore, grads: &[Option<Tensor>], rate: f64) -> Result<()> {
        if grads.len() != params.len() || self.first.len() != params.len() {
            return Err(Error::contract(format!(
                "{} parameters, {} gradients, {} moment slots",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        let t = self.step + 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let exponent = t.min(i32::MAX as u64) as i32;
        let (c1, c2) = match self.mode {
            MomentMode::Standard => (1.0 - b1.powi(exponent), 1.0 - b2.powi(exponent)),
            MomentMode::Literal => (1.0 - b1, 1.0 - b2),
        };
        for (i, id) in params.ids().enumerate() {
            self.update_slot(params, i, id, grads[i].as_ref(), b1, b2, c1, c2, eps, rate)?;
        }
        self.step = t;
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn update_slot(
        &mut self,
        params: &mut ParamStore,
        i: usize,
        id: crate::params::ParamId,
        grad: Option<&Tensor>,
        b1: f64,
        b2: f64,
        c1: f64,
        c2: f64,
        eps: f64,
        rate: f64,
    ) -> Result<()> {
        let theta = params.get_mut(id);
        let (m, v) = (&mut self.first[i], &mut self.second[i]);
        if m.shape() != theta.shape() || v.shape() != theta.shape() {
            return Err(Error::contract(format!("moment shape mismatch for parameter {i}")));
        }
        if let Some(g) = grad {
            if g.shape() != theta.shape() {
                return Err(Error::contract(format!(
                    "gradient shape {:?} for parameter of shape {:?}",
                    g.shape(),
                    theta.shape()
                )));
            }
        }
        let literal = self.mode == MomentMode::Literal;
        let skip = rate == 0.0;
        let m = m.data_mut();
        let v = v.data_mut();
        let th = theta.data_mut();
        for k in 0..th.len() {
            let gk = grad.map_or(0.0, |g| g.data()[k]);
            let mk = b1 * m[k] + (1.0 - b1) * gk;
            let vk = b2 * v[k] + (1.0 - b2) * gk * gk;
            let (mhat, vhat) = if literal {
                m[k] = mk / c1;
                v[k] = vk / c2;
                (m[k], v[k])
            } else {
                m[k] = mk;
                v[k] = vk;
                (mk / c1, vk / c2)
            };
            if !skip {
                th[k] -= rate * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// One full optimizer step: computes the rate for `ctx`, updates
/// parameters and moments, and returns the rate used.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &[Option<Tensor>],
    state: &mut OptimizerState,
    ctx: CurriculumContext,
) -> Result<f64> {
    let rate = state.rate(ctx)?;
    state.apply(params, grads, rate)?;
    Ok(rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("theta", Tensor::scalar(v));
        s
    }

    #[test]
    fn schedule_examples() {
        assert!((effective_lr(1e-3, 0, 1, 50).unwrap() - 9.8e-4).abs() < 1e-18);
        assert_eq!(effective_lr(1e-3, 47, 3, 50).unwrap(), 0.0);
        assert_eq!(effective_lr(1e-3, 49, 3, 50).unwrap(), 0.0);
        assert!(effective_lr(1e-3, 0, 1, 0).is_err());
    }

    #[test]
    fn literal_first_step() {
        let mut p = scalar_store(0.0);
        let mut st = OptimizerState::new(&p, 1e-3, 50, MomentMode::Literal, Schedule::Curriculum).unwrap();
        let ctx = CurriculumContext { iteration: 0, visits: 1 };
        let rate = adam_step(&mut p, &[Some(Tensor::scalar(1.0))], &mut st, ctx).unwrap();
        assert_eq!(st.first[0].data()[0], 1.0);
        assert!((st.second[0].data()[0] - 1.0).abs() < 1e-15);
        let expect = -rate / (1.0 + 1e-8);
        assert!((p.get(crate::params::ParamId(0)).data()[0] - expect).abs() < 1e-18);
    }

    #[test]
    fn zero_gradient_keeps_params() {
        for mode in [MomentMode::Standard, MomentMode::Literal] {
            let mut p = scalar_store(0.3);
            let mut st = OptimizerState::new(&p, 1e-2, 100, mode, Schedule::Curriculum).unwrap();
            let ctx = CurriculumContext { iteration: 0, visits: 1 };
            adam_step(&mut p, &[Some(Tensor::scalar(0.0))], &mut st, ctx).unwrap();
            adam_step(&mut p, &[None], &mut st, ctx).unwrap();
            assert_eq!(p.get(crate::params::ParamId(0)).data()[0], 0.3);
        }
    }

    #[test]
    fn zero_rate_updates_moments_only() {
        let mut p = scalar_store(0.7);
        let mut st = OptimizerState::new(&p, 1e-2, 10, MomentMode::Standard, Schedule::Curriculum).unwrap();
        let ctx = CurriculumContext { iteration: 9, visits: 5 };
        adam_step(&mut p, &[Some(Tensor::scalar(2.0))], &mut st, ctx).unwrap();
        assert_eq!(p.get(crate::params::ParamId(0)).data()[0].to_bits(), 0.7f64.to_bits());
        assert!(st.first[0].data()[0] != 0.0);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = scalar_store(0.0);
        let mut st = OptimizerState::new(&p, 1e-2, 10, MomentMode::Standard, Schedule::Constant).unwrap();
        let bad = Some(Tensor::zeros(2, 2));
        let ctx = CurriculumContext { iteration: 0, visits: 1 };
        assert!(adam_step(&mut p, &[bad], &mut st, ctx).is_err());
        assert!(adam_step(&mut p, &[], &mut st, ctx).is_err());
    }

    #[test]
    fn reversed_and_constant() {
        let p = scalar_store(0.0);
        let mut st = OptimizerState::new(&p, 1.0, 100, MomentMode::Standard, Schedule::Reversed).unwrap();
        st.longest = 10;
        let short = st.rate(CurriculumContext { iteration: 0, visits: 1 }).unwrap();
        let long = st.rate(CurriculumContext { iteration: 0, visits: 10 }).unwrap();
        assert!(short < long);
        st.schedule = Schedule::Constant;
        assert_eq!(st.rate(CurriculumContext { iteration: 99, visits: 10 }).unwrap(), 1.0);
        st.schedule = Schedule::Curriculum;
        let short = st.rate(CurriculumContext { iteration: 0, visits: 1 }).unwrap();
        let long = st.rate(CurriculumContext { iteration: 0, visits: 10 }).unwrap();
        assert!(short > long);
    }
}
