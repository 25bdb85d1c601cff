//! TOML documents for models and experiments, plus the bundled presets.
//!
//! Matrices are stored row-major:
//!
//! ```toml
//! [plant]
//! dim = 1
//! A = [0.9]
//! Q = [1.0]
//! ```
//!
//! Output models add `outputs`, `C` (`outputs x dim`) and `R`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::etse::TriggerConfig;
use crate::kalman::{OutputModel, DEFAULT_BURN_IN};
use crate::linalg;
use crate::linsys::{ContinuousLinearModel, DiscreteLinearModel, Validation};
use crate::triggers::{BufferPolicy, TriggerKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    #[serde(rename = "Q")]
    pub q: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<usize>,
    #[serde(rename = "C", default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<f64>>,
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<f64>>,
    /// Accept a positive semidefinite `Q`.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

impl ModelConfig {
    pub fn scalar(a: f64, q: f64) -> Self {
        Self {
            dim: 1,
            a: vec![a],
            q: vec![q],
            outputs: None,
            c: None,
            r: None,
            degenerate: q == 0.0,
        }
    }

    pub fn discrete(&self) -> Result<DiscreteLinearModel> {
        let a = linalg::from_row_major(self.dim, self.dim, &self.a)?;
        let q = linalg::from_row_major(self.dim, self.dim, &self.q)?;
        let validation = if self.degenerate {
            Validation::Degenerate
        } else {
            Validation::Strict
        };
        DiscreteLinearModel::with_validation(a, q, validation)
    }

    pub fn output(&self) -> Result<OutputModel> {
        let (Some(c), Some(r)) = (&self.c, &self.r) else {
            return Err(Error::Config("output model needs C and R".into()));
        };
        let outputs = self
            .outputs
            .unwrap_or_else(|| if self.dim == 0 { 0 } else { c.len() / self.dim });
        OutputModel::new(
            linalg::from_row_major(self.dim, self.dim, &self.a)?,
            linalg::from_row_major(outputs, self.dim, c)?,
            linalg::from_row_major(self.dim, self.dim, &self.q)?,
            linalg::from_row_major(outputs, outputs, r)?,
        )
    }

    pub fn from_discrete(model: &DiscreteLinearModel) -> Self {
        Self {
            dim: model.dim(),
            a: linalg::to_row_major(model.transition()),
            q: linalg::to_row_major(model.noise_cov()),
            outputs: None,
            c: None,
            r: None,
            degenerate: model.validation() != Validation::Strict,
        }
    }

    pub fn from_output(model: &OutputModel) -> Self {
        Self {
            dim: model.dim(),
            a: linalg::to_row_major(model.a()),
            q: linalg::to_row_major(model.q()),
            outputs: Some(model.outputs()),
            c: Some(linalg::to_row_major(model.c())),
            r: Some(linalg::to_row_major(model.r())),
            degenerate: false,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuousModelConfig {
    pub dim: usize,
    pub drift: Vec<f64>,
    pub diffusion: Vec<f64>,
    #[serde(default)]
    pub degenerate: bool,
}

impl ContinuousModelConfig {
    pub fn build(&self) -> Result<ContinuousLinearModel> {
        let validation = if self.degenerate {
            Validation::Degenerate
        } else {
            Validation::Strict
        };
        ContinuousLinearModel::with_validation(
            linalg::from_row_major(self.dim, self.dim, &self.drift)?,
            linalg::from_row_major(self.dim, self.dim, &self.diffusion)?,
            validation,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    FullState,
    Kalman,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearningMode {
    /// Replace the model by the true plant parameters.
    #[default]
    Oracle,
    /// Run a full-rate learning episode and fit `(A, Q)` by least squares.
    LeastSquares,
}

fn default_seed() -> u64 {
    1
}

fn default_steps() -> u64 {
    100_000
}

fn default_episode_length() -> usize {
    10_000
}

fn default_burn_in() -> u64 {
    DEFAULT_BURN_IN
}

fn default_surrogate_m() -> usize {
    1_000_000
}

fn default_delta() -> f64 {
    TriggerConfig::default().delta
}

fn default_tau_max() -> u64 {
    TriggerConfig::default().tau_max
}

fn default_n() -> usize {
    TriggerConfig::default().n
}

fn default_m() -> usize {
    TriggerConfig::default().m
}

fn default_alpha() -> f64 {
    TriggerConfig::default().alpha
}

fn default_trigger() -> TriggerKind {
    TriggerKind::ApproxMean
}

/// One closed-loop experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Upper bound on simulated steps.
    #[serde(default = "default_steps")]
    pub steps: u64,
    /// Stop after this many buffer evaluations.
    #[serde(default)]
    pub max_evaluations: Option<usize>,
    #[serde(default = "default_trigger")]
    pub trigger: TriggerKind,
    #[serde(default)]
    pub buffer_policy: BufferPolicy,
    #[serde(default)]
    pub learning: LearningMode,
    #[serde(default = "default_episode_length")]
    pub episode_length: usize,
    /// Kalman mode: steps at full communication before stopping times count.
    #[serde(default = "default_burn_in")]
    pub burn_in: u64,
    /// Known `E[τ]` of the initial model for the exact mean trigger.
    #[serde(default)]
    pub expected_tau: Option<f64>,
    /// Monte Carlo size of the surrogate for `E[τ]` or `F` when the exact
    /// triggers have no closed form.
    #[serde(default = "default_surrogate_m")]
    pub surrogate_m: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_tau_max")]
    pub tau_max: u64,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub plant: ModelConfig,
    pub model: ModelConfig,
}

impl ExperimentConfig {
    pub fn trigger_config(&self) -> TriggerConfig {
        TriggerConfig {
            delta: self.delta,
            tau_max: self.tau_max,
            n: self.n,
            m: self.m,
            alpha: self.alpha,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_value(parse_toml(text)?)
    }

    pub fn from_value(value: toml::Value) -> Result<Self> {
        let cfg: Self = value.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks that every referenced model builds and satisfies its invariants.
    pub fn validate(&self) -> Result<()> {
        let wrap = |what: &str, e: Error| Error::Config(format!("{what}: {e}"));
        self.trigger_config().validate().map_err(|e| wrap("trigger config", e))?;
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        match self.mode {
            Mode::FullState => {
                let plant = self.plant.discrete().map_err(|e| wrap("plant", e))?;
                let model = self.model.discrete().map_err(|e| wrap("model", e))?;
                if plant.dim() != model.dim() {
                    return Err(Error::Config("plant and model dimensions differ".into()));
                }
            }
            Mode::Kalman => {
                let plant = self.plant.output().map_err(|e| wrap("plant", e))?;
                let model = self.model.output().map_err(|e| wrap("model", e))?;
                if plant.dim() != model.dim() || plant.outputs() != model.outputs() {
                    return Err(Error::Config("plant and model dimensions differ".into()));
                }
                if self.learning == LearningMode::LeastSquares {
                    return Err(Error::Config(
                        "least-squares learning is only available in full_state mode".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

pub fn parse_toml(text: &str) -> Result<toml::Value> {
    text.parse::<toml::Table>()
        .map(toml::Value::Table)
        .map_err(|e| Error::Config(e.to_string()))
}

/// Applies a `key=value` override to a parsed document. Dotted keys address
/// nested tables (`plant.A=[0.8]`); the value is parsed as a TOML value and
/// falls back to a string.
pub fn apply_override(doc: &mut toml::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let value = parse_toml(&format!("v = {raw}"))
        .ok()
        .and_then(|v| v.get("v").cloned())
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.trim().split('.').collect();
    for part in &parts[..parts.len() - 1] {
        node = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{key}: not a table")))?
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    node.as_table_mut()
        .ok_or_else(|| Error::Config(format!("{key}: not a table")))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Bundled scenarios, by name.
pub const PRESETS: &[(&str, &str)] = &[
    ("detection", include_str!("../presets/detection.toml")),
    ("matched", include_str!("../presets/matched.toml")),
    ("counterexample", include_str!("../presets/counterexample.toml")),
    ("least_squares", include_str!("../presets/least_squares.toml")),
    ("kalman", include_str!("../presets/kalman.toml")),
];

pub fn preset_text(name: &str) -> Result<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| {
            let known: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            Error::Config(format!("unknown preset {name:?}; known: {}", known.join(", ")))
        })
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    ExperimentConfig::from_toml(preset_text(name)?)
}
