//! Run configuration: a TOML file, a preset, and command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DdiSign, LongitudinalKind, ModelConfig, SetEncoderKind, DEFAULT_ALPHA, THRESHOLD};
use crate::optim::{MomentMode, Schedule};

/// Architecture ablations and their command-line names.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    /// Sum raw code embeddings instead of running the set encoder.
    pub no_ise: bool,
    /// Replace the recurrent attention block with a GRU.
    pub no_ile: bool,
    /// Constant learning rate.
    pub no_aclm: bool,
    /// Drop the interaction penalty.
    pub no_ddi_loss: bool,
    /// Plain self-attention blocks in the set encoder.
    pub sab_variant: bool,
}

impl Ablations {
    pub const NAMES: [&'static str; 5] = ["no-ise", "no-ile", "no-aclm", "no-ddi-loss", "sab-variant"];

    pub fn enable(&mut self, name: &str) -> Result<()> {
        match name {
            "no-ise" => self.no_ise = true,
            "no-ile" => self.no_ile = true,
            "no-aclm" => self.no_aclm = true,
            "no-ddi-loss" => self.no_ddi_loss = true,
            "sab-variant" => self.sab_variant = true,
            other => return Err(Error::config(format!("unknown ablation {other:?}"))),
        }
        Ok(())
    }

    /// Enabled names joined with `+`, or `full`.
    pub fn tag(&self) -> String {
        let on = [self.no_ise, self.no_ile, self.no_aclm, self.no_ddi_loss, self.sab_variant];
        let names: Vec<&str> = Self::NAMES.iter().zip(on).filter(|(_, b)| *b).map(|(n, _)| *n).collect();
        if names.is_empty() {
            "full".to_owned()
        } else {
            names.join("+")
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub dim: usize,
    pub inducing_points: usize,
    pub heads: usize,
    pub state_vectors: usize,
    pub recurrent_heads: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub alpha: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Train, validation and test proportions.
    pub split: [u32; 3],
    /// Overrides `epochs * training patients` as the schedule horizon.
    pub max_iterations: Option<u64>,
    pub moment_mode: MomentMode,
    pub ddi_sign: DdiSign,
    /// Mirror visit counts in the schedule so shorter patients get the
    /// smaller rate.
    pub reversed_curriculum: bool,
    pub ablations: Ablations,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            dataset: None,
            dim: m.dim,
            inducing_points: m.inducing_points,
            heads: m.heads,
            state_vectors: m.state_vectors,
            recurrent_heads: m.recurrent_heads,
            learning_rate: 1e-3,
            epochs: 50,
            seed: 2023,
            alpha: DEFAULT_ALPHA,
            patience: 10,
            split: [4, 1, 1],
            max_iterations: None,
            moment_mode: MomentMode::Standard,
            ddi_sign: DdiSign::Penalty,
            reversed_curriculum: false,
            ablations: Ablations::default(),
        }
    }
}

impl RunConfig {
    /// Laptop-sized model, otherwise the defaults.
    pub fn desk() -> Self {
        let m = ModelConfig::desk();
        Self {
            dim: m.dim,
            inducing_points: m.inducing_points,
            heads: m.heads,
            state_vectors: m.state_vectors,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "default" => Ok(Self::default()),
            other => Err(Error::config(format!("unknown preset {other:?} (expected desk or default)"))),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    /// Reads a TOML file; fields missing from the file take values from `base`.
    pub fn from_toml_file(path: &Path, base: &RunConfig) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut table = toml::Table::try_from(base).map_err(|e| Error::config(e.to_string()))?;
        let over: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config(format!("{}: {e}", path.display())))?;
        for (k, v) in over {
            if k == "ablations" {
                if let (Some(toml::Value::Table(dst)), toml::Value::Table(src)) = (table.get_mut("ablations"), &v) {
                    dst.extend(src.clone());
                    continue;
                }
            }
            table.insert(k, v);
        }
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model(&self) -> ModelConfig {
        let a = &self.ablations;
        ModelConfig {
            dim: self.dim,
            inducing_points: self.inducing_points,
            heads: self.heads,
            state_vectors: self.state_vectors,
            recurrent_heads: self.recurrent_heads,
            set_encoder: if a.no_ise {
                SetEncoderKind::None
            } else if a.sab_variant {
                SetEncoderKind::SelfAttention
            } else {
                SetEncoderKind::Isab
            },
            longitudinal: if a.no_ile {
                LongitudinalKind::Gru
            } else {
                LongitudinalKind::RecurrentAttention
            },
        }
    }

    /// Penalty weight after ablations.
    pub fn effective_alpha(&self) -> f64 {
        if self.ablations.no_ddi_loss {
            0.0
        } else {
            self.alpha
        }
    }

    pub fn schedule(&self) -> Schedule {
        if self.ablations.no_aclm {
            Schedule::Constant
        } else if self.reversed_curriculum {
            Schedule::Reversed
        } else {
            Schedule::Curriculum
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        if self.ablations.no_ise && self.ablations.sab_variant {
            return Err(Error::config("no-ise and sab-variant both replace the set encoder; pick one"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning_rate must be finite and non-negative, got {}", self.learning_rate)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::config(format!("alpha must be finite and non-negative, got {}", self.alpha)));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.split[0] == 0 {
            return Err(Error::config("the training proportion must be positive"));
        }
        if self.max_iterations == Some(0) {
            return Err(Error::config("max_iterations must be at least 1"));
        }
        Ok(())
    }

    /// The configuration as JSON, with the fixed threshold added.
    pub fn echo(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v["threshold"] = serde_json::json!(THRESHOLD);
        v["variant"] = serde_json::json!(self.ablations.tag());
        v
    }
}
