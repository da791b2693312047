use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::regularizer::RegularizerConfig;
use crate::aggregator::AggregationVariant;
use crate::data::ShiftConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::uncertainty::Criterion;

/// How target images are weighted between epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    KlVariance,
    Entropy,
    Uniform,
}

impl SamplerKind {
    pub fn criterion(self) -> Option<Criterion> {
        match self {
            SamplerKind::KlVariance => Some(Criterion::KlVariance),
            SamplerKind::Entropy => Some(Criterion::Entropy),
            SamplerKind::Uniform => None,
        }
    }
}

fn default_epochs() -> usize {
    10
}
fn default_iters() -> usize {
    50
}
fn default_batch() -> usize {
    2
}
fn default_lr0() -> f64 {
    0.5
}
fn default_warmup() -> usize {
    3
}
fn default_sampler() -> SamplerKind {
    SamplerKind::KlVariance
}
fn default_aggregation() -> AggregationVariant {
    AggregationVariant::RunningMean
}
fn default_temperature() -> f64 {
    1.0
}
fn default_lastk() -> usize {
    5
}

/// Full experiment description, read from a single JSON document.
///
/// Every field has a default, so `{}` is a valid config. Unknown fields are
/// rejected. `output_dir` is never echoed into reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Number of epochs (snapshots).
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Iterations per epoch.
    #[serde(default = "default_iters")]
    pub iters_per_epoch: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr0")]
    pub lr0: f64,
    /// Source-only epochs of `iters_per_epoch` iterations run before epoch 1.
    #[serde(default = "default_warmup")]
    pub warmup_epochs: usize,
    #[serde(default = "default_sampler")]
    pub sampler: SamplerKind,
    #[serde(default = "default_aggregation")]
    pub aggregation: AggregationVariant,
    /// Softmax temperature applied to raw scores before normalization.
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub shift: ShiftConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
    /// Window for the last-k trajectory statistics.
    #[serde(default = "default_lastk")]
    pub lastk: usize,
    #[serde(default)]
    pub regularizer: RegularizerConfig,
    /// Random horizontal flips of source images.
    #[serde(default)]
    pub hflip: bool,
    /// Restrict reported mIoU to these classes.
    #[serde(default)]
    pub miou_classes: Option<Vec<usize>>,
    /// Write `distribution.csv` with every epoch's sampling weights.
    #[serde(default)]
    pub dump_distribution: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config uses defaults")
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Canonical single-line JSON of every field except `output_dir`.
    pub fn echo(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn total_iterations(&self) -> usize {
        (self.warmup_epochs + self.epochs) * self.iters_per_epoch
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.iters_per_epoch == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs, iters_per_epoch and batch_size must be >= 1".into()));
        }
        if !(self.lr0 > 0.0) || !self.lr0.is_finite() {
            return Err(Error::Config(format!("lr0 {} must be > 0", self.lr0)));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config(format!("temperature {} must be > 0", self.temperature)));
        }
        if self.lastk == 0 {
            return Err(Error::Config("lastk must be >= 1".into()));
        }
        self.aggregation
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.regularizer.validate()?;
        self.model.validate()?;
        self.shift.validate()?;
        let m = &self.model;
        let s = &self.shift;
        if (m.height, m.width, m.features, m.classes) != (s.height, s.width, s.features, s.classes) {
            return Err(Error::Config(format!(
                "model expects {}x{}x{} with {} classes but data is {}x{}x{} with {} classes",
                m.height, m.width, m.features, m.classes, s.height, s.width, s.features, s.classes
            )));
        }
        if let Some(classes) = &self.miou_classes {
            if classes.is_empty() || classes.iter().any(|&c| c >= m.classes) {
                return Err(Error::Config("miou_classes must list valid class indices".into()));
            }
        }
        Ok(())
    }
}

/// Named sampler/aggregation combinations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Uniform sampling, raw student.
    Baseline,
    /// Adaptive sampling, raw student.
    SamplerOnly,
    /// Uniform sampling, running-mean aggregate.
    AggregationOnly,
    /// Prediction-variance sampling with running-mean aggregate.
    Full,
    /// Entropy sampling with running-mean aggregate.
    FullEntropy,
    Momentum09,
    Momentum05,
    Ema,
    OracleAlpha,
}

impl Variant {
    /// The five rows of the ablation table.
    pub const ABLATION: [Variant; 5] = [
        Variant::Baseline,
        Variant::SamplerOnly,
        Variant::AggregationOnly,
        Variant::Full,
        Variant::FullEntropy,
    ];

    pub const ALL: [Variant; 9] = [
        Variant::Baseline,
        Variant::SamplerOnly,
        Variant::AggregationOnly,
        Variant::Full,
        Variant::FullEntropy,
        Variant::Momentum09,
        Variant::Momentum05,
        Variant::Ema,
        Variant::OracleAlpha,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::SamplerOnly => "sampler-only",
            Variant::AggregationOnly => "aggregation-only",
            Variant::Full => "full",
            Variant::FullEntropy => "full-entropy",
            Variant::Momentum09 => "momentum-0.9",
            Variant::Momentum05 => "momentum-0.5",
            Variant::Ema => "ema",
            Variant::OracleAlpha => "oracle-alpha",
        }
    }

    pub fn from_name(name: &str) -> Result<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == name)
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::Config(format!("unknown variant '{name}', expected one of {}", names.join(", ")))
            })
    }

    pub fn settings(self) -> (SamplerKind, AggregationVariant) {
        use AggregationVariant as A;
        use SamplerKind as S;
        match self {
            Variant::Baseline => (S::Uniform, A::None),
            Variant::SamplerOnly => (S::KlVariance, A::None),
            Variant::AggregationOnly => (S::Uniform, A::RunningMean),
            Variant::Full => (S::KlVariance, A::RunningMean),
            Variant::FullEntropy => (S::Entropy, A::RunningMean),
            Variant::Momentum09 => (S::KlVariance, A::Momentum { momentum: 0.9 }),
            Variant::Momentum05 => (S::KlVariance, A::Momentum { momentum: 0.5 }),
            Variant::Ema => (S::KlVariance, A::Ema { decay: 0.99 }),
            Variant::OracleAlpha => (S::KlVariance, A::OracleAlpha),
        }
    }

    pub fn apply(self, cfg: &mut ExperimentConfig) {
        let (sampler, aggregation) = self.settings();
        cfg.sampler = sampler;
        cfg.aggregation = aggregation;
    }

    /// The named variant matching `cfg`, if any.
    pub fn of(cfg: &ExperimentConfig) -> Option<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.settings() == (cfg.sampler, cfg.aggregation))
    }
}

pub fn variant_label(cfg: &ExperimentConfig) -> &'static str {
    Variant::of(cfg).map_or("custom", Variant::name)
}
