//! Experiment configuration files.
//!
//! A config is a TOML document with a `schema_version`, an experiment
//! `kind`, a global `seed` and the sections that kind reads. Unknown keys
//! are rejected. Loading fills documented defaults; the resolved config is
//! what every report echoes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cdp_core::diffusion::{NetArch, ScheduleSpec, TrainOpts};
use cdp_core::guidance::GuidanceConfig;
use cdp_core::selection::{Criterion, LogisticFitOpts};
use cdp_core::self_training::SelfTrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    SimulateGaussian,
    TrainDiffusion,
    Sample,
    GuidedSample,
    Select,
    Evaluate,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::SimulateGaussian => "simulate-gaussian",
            Self::TrainDiffusion => "train-diffusion",
            Self::Sample => "sample",
            Self::GuidedSample => "guided-sample",
            Self::Select => "select",
            Self::Evaluate => "evaluate",
        }
    }
}

/// Two classes in `dim` dimensions, `N(-mean * 1, sigma^2 I)` for class 0
/// and `N(+mean * 1, sigma^2 I)` for class 1, equally likely.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub dim: usize,
    pub mean: f64,
    pub sigma: f64,
    pub count: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { dim: 2, mean: 1.0, sigma: 1.0, count: 5000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetSection {
    pub hidden: Vec<usize>,
    pub time_features: usize,
    /// Train on class labels; samplers then assign classes round-robin.
    pub conditional: bool,
}

impl Default for NetSection {
    fn default() -> Self {
        let standard = NetArch::standard(2, 1, 0);
        Self { hidden: standard.hidden, time_features: standard.time_features, conditional: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    Ddpm,
    Ddim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    pub checkpoint: PathBuf,
    #[serde(default = "default_sampler")]
    pub sampler: SamplerKind,
    /// Length of the quadratic step subsequence; all steps when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default)]
    pub eta: f64,
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    /// Chains guided together in one lockstep batch.
    #[serde(default = "default_group")]
    pub group: usize,
}

fn default_sampler() -> SamplerKind {
    SamplerKind::Ddim
}
fn default_chains() -> usize {
    1000
}
fn default_init_scale() -> f64 {
    1.0
}
fn default_group() -> usize {
    100
}

/// Picks `lambda` from the score/guidance norm ratio on the first group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSection {
    pub ratio: f64,
}

/// A randomly initialized two-layer embedding used as the feature map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSection {
    pub hidden: usize,
    pub output: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionSection {
    pub samples: PathBuf,
    pub criterion: Criterion,
    pub k: usize,
    /// Perturbation radius for `robust-gradient-norm`.
    #[serde(default)]
    pub robust_eps: f64,
    #[serde(default)]
    pub fit: LogisticFitOpts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    pub samples: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub kind: ExperimentKind,
    /// Overrides every nested seed except the embedding's.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaussian: Option<SelfTrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub net: Option<NetSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainOpts>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guidance: Option<GuidanceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluate: Option<EvaluateSection>,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind,
            seed: 0,
            out: None,
            gaussian: None,
            data: None,
            net: None,
            schedule: None,
            train: None,
            sampling: None,
            guidance: None,
            calibration: None,
            embedding: None,
            selection: None,
            evaluate: None,
        }
    }

    /// Fills the defaulted sections the kind reads and copies the global
    /// seed into nested seeds.
    pub fn resolve(mut self) -> Self {
        match self.kind {
            ExperimentKind::TrainDiffusion => {
                self.data.get_or_insert_with(DataSection::default);
                self.net.get_or_insert_with(NetSection::default);
                self.schedule.get_or_insert_with(ScheduleSpec::default);
                self.train.get_or_insert_with(TrainOpts::default);
            }
            ExperimentKind::GuidedSample => {
                self.guidance.get_or_insert_with(GuidanceConfig::default);
            }
            ExperimentKind::Select | ExperimentKind::Evaluate => {
                self.data.get_or_insert_with(DataSection::default);
            }
            _ => {}
        }
        let seed = self.seed;
        if let Some(g) = self.gaussian.as_mut() {
            g.seed = seed;
        }
        if let Some(t) = self.train.as_mut() {
            t.seed = seed;
        }
        self
    }

    /// Every violated constraint, empty when the config is runnable.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            out.push(format!(
                "schema_version: expected {SCHEMA_VERSION}, found {}",
                self.schema_version
            ));
        }
        if self.seed > i64::MAX as u64 {
            out.push(format!("seed: must not exceed {}, found {}", i64::MAX, self.seed));
        }
        let mut require = |present: bool, section: &str| {
            if !present {
                out.push(format!("{section}: section is required for kind {}", self.kind.name()));
            }
        };
        match self.kind {
            ExperimentKind::SimulateGaussian => require(self.gaussian.is_some(), "gaussian"),
            ExperimentKind::TrainDiffusion => {
                require(self.data.is_some(), "data");
                require(self.schedule.is_some(), "schedule");
            }
            ExperimentKind::Sample => require(self.sampling.is_some(), "sampling"),
            ExperimentKind::GuidedSample => {
                require(self.sampling.is_some(), "sampling");
                require(self.guidance.is_some(), "guidance");
            }
            ExperimentKind::Select => require(self.selection.is_some(), "selection"),
            ExperimentKind::Evaluate => require(self.evaluate.is_some(), "evaluate"),
        }

        if let Some(g) = &self.gaussian {
            out.extend(g.violations().into_iter().map(|v| format!("gaussian: {v}")));
        }
        if let Some(d) = &self.data {
            if d.dim == 0 {
                out.push("data.dim: must be positive".into());
            }
            if d.count < 2 {
                out.push(format!("data.count: need at least 2, found {}", d.count));
            }
            if !(d.mean > 0.0 && d.mean.is_finite()) {
                out.push(format!("data.mean: must be positive, found {}", d.mean));
            }
            if !(d.sigma >= 0.0 && d.sigma.is_finite()) {
                out.push(format!("data.sigma: must be nonnegative, found {}", d.sigma));
            }
        }
        if let Some(n) = &self.net {
            if n.hidden.is_empty() || n.hidden.contains(&0) {
                out.push("net.hidden: need at least one layer, all widths positive".into());
            }
            if n.time_features % 2 != 0 {
                out.push(format!("net.time_features: must be even, found {}", n.time_features));
            }
        }
        if let Some(s) = &self.schedule {
            if let Err(e) = cdp_core::diffusion::build_schedule(*s) {
                out.push(format!("schedule: {e}"));
            }
        }
        if let Some(t) = &self.train {
            if let Err(e) = t.validate() {
                out.push(format!("train: {e}"));
            }
        }
        if let Some(s) = &self.sampling {
            if s.chains == 0 {
                out.push("sampling.chains: must be positive".into());
            }
            if !(0.0..=1.0).contains(&s.eta) {
                out.push(format!("sampling.eta: must lie in [0, 1], found {}", s.eta));
            }
            if s.sampler == SamplerKind::Ddpm && (s.steps.is_some() || s.eta != 0.0) {
                out.push("sampling: steps and eta apply to the ddim sampler only".into());
            }
            if s.steps == Some(0) {
                out.push("sampling.steps: must be positive".into());
            }
            if !(s.init_scale > 0.0 && s.init_scale.is_finite()) {
                out.push(format!("sampling.init_scale: must be positive, found {}", s.init_scale));
            }
            if self.kind == ExperimentKind::GuidedSample {
                if s.group < 2 {
                    out.push(format!("sampling.group: guided batches need at least 2 chains, found {}", s.group));
                }
                if s.sampler == SamplerKind::Ddpm {
                    out.push("sampling.sampler: guided sampling uses the ddim update".into());
                }
            }
        }
        if let Some(g) = &self.guidance {
            out.extend(g.violations().into_iter().map(|v| format!("guidance: {v}")));
            if let Some(s) = &self.sampling {
                if s.eta != g.eta {
                    out.push(format!("guidance.eta ({}) differs from sampling.eta ({})", g.eta, s.eta));
                }
            }
        }
        if let Some(c) = &self.calibration {
            if !(c.ratio > 0.0 && c.ratio.is_finite()) {
                out.push(format!("calibration.ratio: must be positive, found {}", c.ratio));
            }
        }
        if let Some(e) = &self.embedding {
            if e.hidden == 0 || e.output == 0 {
                out.push("embedding: hidden and output widths must be positive".into());
            }
        }
        if let Some(s) = &self.selection {
            if s.k == 0 {
                out.push("selection.k: must be positive".into());
            }
            if !(s.robust_eps >= 0.0 && s.robust_eps.is_finite()) {
                out.push(format!("selection.robust_eps: must be nonnegative, found {}", s.robust_eps));
            }
            if s.robust_eps != 0.0 && s.criterion != Criterion::RobustGradientNorm {
                out.push("selection.robust_eps: only used by robust-gradient-norm".into());
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(v))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs serialize to TOML")
    }
}

/// 1-based line and column of a byte offset.
fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Parses, resolves and validates a config document. `origin` names the
/// source in error messages.
pub fn parse_config(text: &str, origin: &str) -> Result<ExperimentConfig, ConfigError> {
    let de = toml::Deserializer::parse(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_column(text, s.start));
        ConfigError::Parse { path: origin.into(), line, column, message: e.message().to_string() }
    })?;
    let raw: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        let inner = e.into_inner();
        let mut message = inner.message().to_string();
        if let Some(span) = inner.span() {
            let (line, column) = line_column(text, span.start);
            let _ = write!(message, " (line {line}, column {column})");
        }
        ConfigError::Schema { path: origin.into(), key, message }
    })?;
    let cfg = raw.resolve();
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, crate::error::RunError> {
    let text = std::fs::read_to_string(path).map_err(|e| crate::error::RunError::io(path, e))?;
    Ok(parse_config(&text, &path.display().to_string())?)
}
