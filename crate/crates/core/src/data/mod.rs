//! Synthetic source/target domain pairs and segmentation metrics.

mod export;
mod generate;
mod metrics;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Image, LabelMap};

pub use export::{export_domain_pair, import_domain_pair, Manifest};
pub use generate::generate_domain_pair;
pub use metrics::{confusion, trajectory_stats, ConfusionMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Geometry {
    /// Nearest-centre (Voronoi) regions.
    Blobs,
    Stripes,
    Checker,
}

fn default_noise() -> f64 {
    0.5
}
fn default_shift() -> Vec<f64> {
    vec![0.75, 0.0, 0.0]
}
fn default_contrast() -> f64 {
    0.5
}
fn default_classes() -> usize {
    4
}
fn default_side() -> usize {
    16
}
fn default_features() -> usize {
    3
}
fn default_count() -> usize {
    64
}
fn default_geometry() -> Geometry {
    Geometry::Blobs
}

/// Generator settings for a synthetic domain pair.
///
/// Source pixels are `signature[label] + noise`; target pixels are
/// `contrast * signature[label] + feature_mean_shift + noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftConfig {
    #[serde(default = "default_shift")]
    pub feature_mean_shift: Vec<f64>,
    #[serde(default = "default_noise")]
    pub feature_noise_std: f64,
    #[serde(default = "default_contrast")]
    pub contrast: f64,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_geometry")]
    pub geometry: Geometry,
    #[serde(default = "default_side")]
    pub height: usize,
    #[serde(default = "default_side")]
    pub width: usize,
    #[serde(default = "default_features")]
    pub features: usize,
    #[serde(default = "default_count")]
    pub source_count: usize,
    #[serde(default = "default_count")]
    pub target_count: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        ShiftConfig {
            feature_mean_shift: default_shift(),
            feature_noise_std: default_noise(),
            contrast: default_contrast(),
            classes: default_classes(),
            geometry: default_geometry(),
            height: default_side(),
            width: default_side(),
            features: default_features(),
            source_count: default_count(),
            target_count: default_count(),
            seed: 0,
        }
    }
}

impl ShiftConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.feature_noise_std >= 0.0) || !self.feature_noise_std.is_finite() {
            return Err(Error::Config(format!(
                "feature_noise_std {} must be >= 0",
                self.feature_noise_std
            )));
        }
        if self.classes < 2 {
            return Err(Error::Config("at least two classes are required".into()));
        }
        if self.height == 0 || self.width == 0 || self.features == 0 {
            return Err(Error::Config("image dimensions must be at least 1".into()));
        }
        if self.source_count == 0 || self.target_count == 0 {
            return Err(Error::Config("source and target sets must be non-empty".into()));
        }
        if self.feature_mean_shift.len() != self.features {
            return Err(Error::Config(format!(
                "feature_mean_shift has {} entries for {} channels",
                self.feature_mean_shift.len(),
                self.features
            )));
        }
        if self.feature_mean_shift.iter().any(|v| !v.is_finite()) || !self.contrast.is_finite() {
            return Err(Error::Config("shift parameters must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelledImage {
    pub image: Image,
    pub labels: LabelMap,
}

/// Labelled source images, unlabeled target images and the held-out target
/// labels used only for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainPair {
    source: Vec<LabelledImage>,
    target_images: Vec<Image>,
    target_labels: Vec<LabelMap>,
    classes: usize,
    signatures: Option<Vec<Vec<f64>>>,
    generator: Option<ShiftConfig>,
}

impl DomainPair {
    pub fn new(
        source: Vec<LabelledImage>,
        target_images: Vec<Image>,
        target_labels: Vec<LabelMap>,
        classes: usize,
    ) -> Result<Self> {
        if target_images.len() != target_labels.len() {
            return Err(Error::shape("target images and held-out labels differ in count"));
        }
        if source.is_empty() || target_images.is_empty() {
            return Err(Error::domain("domain pair needs source and target images"));
        }
        let reference = &source[0].image;
        let dims = (reference.height(), reference.width(), reference.features());
        let all_images = source
            .iter()
            .map(|s| &s.image)
            .chain(target_images.iter());
        for img in all_images {
            if (img.height(), img.width(), img.features()) != dims {
                return Err(Error::shape("images in a domain pair must share dimensions"));
            }
        }
        let all_labels = source.iter().map(|s| &s.labels).chain(target_labels.iter());
        for labels in all_labels {
            if (labels.height(), labels.width()) != (dims.0, dims.1) {
                return Err(Error::shape("label map does not match image size"));
            }
            labels.check_classes(classes)?;
        }
        Ok(DomainPair {
            source,
            target_images,
            target_labels,
            classes,
            signatures: None,
            generator: None,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Per-class noise-free feature signature used by the generator, if known.
    pub fn class_signatures(&self) -> Option<&[Vec<f64>]> {
        self.signatures.as_deref()
    }

    pub fn generator(&self) -> Option<&ShiftConfig> {
        self.generator.as_ref()
    }

    /// Read surface for training code. It has no accessor for target labels.
    pub fn training_view(&self) -> TrainingView<'_> {
        TrainingView { pair: self }
    }

    pub fn evaluation_view(&self) -> EvaluationView<'_> {
        EvaluationView { pair: self }
    }
}

/// What a trainer may read: labelled source data and unlabeled target images.
///
/// Target labels are not reachable from here:
///
/// ```compile_fail
/// # fn f(view: adastudent::data::TrainingView<'_>) {
/// let _ = view.target_labels();
/// # }
/// ```
#[derive(Debug, Clone, Copy)]
pub struct TrainingView<'a> {
    pair: &'a DomainPair,
}

impl<'a> TrainingView<'a> {
    pub fn source(&self) -> &'a [LabelledImage] {
        &self.pair.source
    }

    pub fn target_images(&self) -> &'a [Image] {
        &self.pair.target_images
    }

    pub fn classes(&self) -> usize {
        self.pair.classes
    }
}

/// Evaluation surface, including the held-out target labels.
#[derive(Debug, Clone, Copy)]
pub struct EvaluationView<'a> {
    pair: &'a DomainPair,
}

impl<'a> EvaluationView<'a> {
    pub fn source(&self) -> &'a [LabelledImage] {
        &self.pair.source
    }

    pub fn target_images(&self) -> &'a [Image] {
        &self.pair.target_images
    }

    pub fn target_labels(&self) -> &'a [LabelMap] {
        &self.pair.target_labels
    }

    pub fn classes(&self) -> usize {
        self.pair.classes
    }
}
