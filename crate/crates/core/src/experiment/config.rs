//! TOML experiment configuration.
//!
//! Sections are `[architecture]`, `[smoothing]`, `[dynamics]`, `[data]`,
//! `[sweep]` and `[output]`, plus a top-level `kind`. Every key has a
//! default; unknown keys are rejected. Validation messages name the
//! regularity assumption they enforce (`R1` data support, `R4` clamp and
//! initialisation, `R5` smoothing parameters).

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backprop::LossSpec;
use crate::dataset::{DataSpec, TargetRule};
use crate::dynamics::RunConfig;
use crate::error::{Error, Result};
use crate::forward::{Activation, Architecture};
use crate::quant::{ClipVariant, SmoothingParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    #[default]
    Verify,
    Train,
    SweepEps,
    SweepWidth,
    Gradcheck,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Verify => "verify",
            ExperimentKind::Train => "train",
            ExperimentKind::SweepEps => "sweep-eps",
            ExperimentKind::SweepWidth => "sweep-width",
            ExperimentKind::Gradcheck => "gradcheck",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchitectureSection {
    pub input_dim: usize,
    /// Output width of every layer; the last entry is the network output.
    pub widths: Vec<usize>,
    pub activation: Activation,
    /// Optional cross-check against `widths.len()`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
}

impl Default for ArchitectureSection {
    fn default() -> Self {
        ArchitectureSection {
            input_dim: 4,
            widths: vec![16, 1],
            activation: Activation::Tanh,
            depth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoothingSection {
    pub epsilon: f64,
    pub bits: u32,
    pub delta: f64,
    pub clip: ClipVariant,
}

impl Default for SmoothingSection {
    fn default() -> Self {
        SmoothingSection {
            epsilon: 0.1,
            bits: 1,
            delta: 0.5,
            clip: ClipVariant::Verbatim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsSection {
    pub eta: f64,
    pub horizon: f64,
    /// Initialisation scale M.
    pub init_scale: f64,
    /// Clamp radius M⋆.
    pub clamp: f64,
    pub seed: u64,
    pub stride: usize,
}

impl Default for DynamicsSection {
    fn default() -> Self {
        DynamicsSection {
            eta: 0.01,
            horizon: 1.0,
            init_scale: 0.5,
            clamp: 1.0,
            seed: 0,
            stride: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub samples: usize,
    /// Support bound R.
    pub support: f64,
    pub target: TargetRule,
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            samples: 64,
            support: 1.0,
            target: TargetRule::Teacher,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Non-increasing grid for `sweep-eps`.
    pub epsilons: Vec<f64>,
    /// Non-decreasing hidden widths for `sweep-width`.
    pub widths: Vec<usize>,
    /// Comparison times; `{0, T/4, T/2, 3T/4, T}` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    /// Grid for `gradcheck`.
    pub gradcheck_epsilons: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            epsilons: (0..6).map(|k| 0.5f64.powi(k)).collect(),
            widths: vec![8, 16, 32, 64],
            times: None,
            gradcheck_epsilons: vec![1.0, 0.3, 0.05, 0.001],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
    /// Human label; the run id is `<name>-<first 12 hex digits of the hash>`.
    pub name: String,
    /// Write every recorded snapshot of `train` runs.
    pub snapshots: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: "out".into(),
            name: "run".into(),
            snapshots: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub architecture: ArchitectureSection,
    pub smoothing: SmoothingSection,
    pub dynamics: DynamicsSection,
    pub data: DataSection,
    pub sweep: SweepSection,
    pub output: OutputSection,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::ConfigInvalid(msg.into())
}

fn check_epsilon(eps: f64, what: &str) -> Result<()> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(invalid(format!("R5: {what} must lie in (0,1], got {eps}")));
    }
    Ok(())
}

/// 1-based line and column of a byte offset.
fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text.as_bytes()[..offset];
    let line = before.iter().filter(|&&b| b == b'\n').count() + 1;
    let line_start = before.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
    let column = String::from_utf8_lossy(&before[line_start..]).chars().count() + 1;
    (line, column)
}

impl ExperimentConfig {
    /// Checks every constraint the run relies on.
    pub fn validate(&self) -> Result<()> {
        let a = &self.architecture;
        if a.input_dim == 0 {
            return Err(invalid("architecture: input_dim must be positive"));
        }
        if a.widths.is_empty() || a.widths.contains(&0) {
            return Err(invalid(
                "architecture: widths must be a non-empty list of positive integers",
            ));
        }
        if let Some(d) = a.depth {
            if d != a.widths.len() {
                return Err(invalid(format!(
                    "architecture: depth = {d} but widths lists {} layers",
                    a.widths.len()
                )));
            }
        }

        let s = &self.smoothing;
        check_epsilon(s.epsilon, "epsilon")?;
        if !(1..=63).contains(&s.bits) {
            return Err(invalid(format!("R5: bits must lie in 1..=63, got {}", s.bits)));
        }
        if !(s.delta > 0.0 && s.delta < 1.0) {
            return Err(invalid(format!("R5: delta must lie in (0,1), got {}", s.delta)));
        }

        let d = &self.dynamics;
        if !(d.eta > 0.0 && d.eta.is_finite()) {
            return Err(invalid(format!(
                "dynamics: eta must be positive and finite, got {}",
                d.eta
            )));
        }
        if !(d.horizon >= 0.0 && d.horizon.is_finite()) {
            return Err(invalid(format!(
                "dynamics: horizon must be finite and non-negative, got {}",
                d.horizon
            )));
        }
        if !(d.clamp > 0.0 && d.clamp.is_finite()) {
            return Err(invalid(format!(
                "R4: clamp M* must be positive and finite, got {}",
                d.clamp
            )));
        }
        if !(d.init_scale >= 0.0 && d.init_scale <= d.clamp) {
            return Err(invalid(format!(
                "R4: init_scale M must satisfy 0 <= M <= M*, got M = {} and M* = {}",
                d.init_scale, d.clamp
            )));
        }
        if d.stride == 0 {
            return Err(invalid("dynamics: stride must be positive"));
        }

        let data = &self.data;
        if !(data.support >= 0.0 && data.support.is_finite()) {
            return Err(invalid(format!(
                "R1: support bound must be finite and non-negative, got {}",
                data.support
            )));
        }
        if data.samples == 0 {
            return Err(invalid("R1: data needs at least one sample"));
        }

        let sw = &self.sweep;
        for &e in sw.epsilons.iter().chain(&sw.gradcheck_epsilons) {
            check_epsilon(e, "sweep epsilon")?;
        }
        if sw.epsilons.windows(2).any(|w| w[1] > w[0]) {
            return Err(invalid("sweep: epsilons must be non-increasing"));
        }
        if sw.widths.contains(&0) || sw.widths.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("sweep: widths must be positive and non-decreasing"));
        }
        if let Some(times) = &sw.times {
            if let Some(t) = times.iter().find(|t| !(**t >= 0.0 && **t <= d.horizon)) {
                return Err(invalid(format!("sweep: comparison time {t} outside [0, horizon]")));
            }
        }

        let name = &self.output.name;
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '.') {
            return Err(invalid(format!(
                "output: name must be non-empty and use only [A-Za-z0-9.-], got {name:?}"
            )));
        }
        Ok(())
    }

    /// Sorted-key TOML rendering of the full config, defaults included.
    pub fn canonical_text(&self) -> String {
        let value = toml::Value::try_from(self).expect("config is representable as TOML");
        toml::to_string(&value).expect("TOML values serialize")
    }

    /// SHA-256 of [`Self::canonical_text`], lowercase hex.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn run_id(&self) -> String {
        format!("{}-{}", self.output.name, &self.hash()[..12])
    }

    pub fn architecture(&self) -> Result<Architecture> {
        let a = &self.architecture;
        Architecture::uniform(a.input_dim, a.widths.clone(), a.activation)
    }

    pub fn smoothing(&self) -> Result<SmoothingParams> {
        let s = &self.smoothing;
        Ok(SmoothingParams::new(s.epsilon, s.bits, s.delta)?.with_clip(s.clip))
    }

    pub fn run_config(&self) -> RunConfig {
        let d = &self.dynamics;
        RunConfig {
            eta: d.eta,
            horizon: d.horizon,
            clamp: d.clamp,
            init_scale: d.init_scale,
            seed: d.seed,
            stride: d.stride,
        }
    }

    pub fn data_spec(&self) -> DataSpec {
        DataSpec {
            samples: self.data.samples,
            support: self.data.support,
            target: self.data.target,
            seed: self.data.seed,
        }
    }

    pub fn loss(&self) -> LossSpec {
        LossSpec::squared(self.data.support, *self.architecture.widths.last().unwrap_or(&1))
    }

    pub fn comparison_times(&self) -> Vec<f64> {
        match &self.sweep.times {
            Some(t) => t.clone(),
            None => crate::meanfield::SweepBase::default_times(self.dynamics.horizon),
        }
    }
}

/// Parses and validates config text.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_column(text, s.start));
        Error::ConfigParse {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}
