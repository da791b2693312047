//! Toy two-headed per-pixel segmentation model.
//!
//! The trunk has two stages. Stage 1 reads an `aux_radius` window of input
//! features, stage 2 reads a `primary_radius` window of stage-1 features. The
//! auxiliary head classifies stage-1 features and the primary head classifies
//! stage-2 features, so the two heads see different receptive contexts.

mod io;
mod net;
mod schedule;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::check_simplex;

pub use io::{
    read_params, read_snapshot, read_snapshot_file, write_params, write_snapshot, write_snapshot_file, Role,
    SnapshotFile,
};
pub use net::{fuse_predictions, source_loss, HeadOutputs, Mode, ParamLayout, SegModel};
pub(crate) use net::sgd_update;
pub use schedule::poly_lr;

/// `H x W x F` grid of real features, stored row-major with features innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    features: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, features: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || features == 0 {
            return Err(Error::domain("image dimensions must be at least 1"));
        }
        if data.len() != height * width * features {
            return Err(Error::shape(format!(
                "image data has {} values, expected {height}x{width}x{features}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image feature".into()));
        }
        Ok(Image {
            height,
            width,
            features,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let start = (y * self.width + x) * self.features;
        &self.data[start..start + self.features]
    }

    /// Mirror along the vertical axis.
    pub fn flipped(&self) -> Image {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                data.extend_from_slice(self.pixel(y, x));
            }
        }
        Image { data, ..*self }
    }
}

/// `H x W` grid of class indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    data: Vec<u32>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "label map has {} entries, expected {height}x{width}",
                data.len()
            )));
        }
        Ok(LabelMap {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn check_classes(&self, classes: usize) -> Result<()> {
        match self.data.iter().find(|&&l| l as usize >= classes) {
            Some(&l) => Err(Error::Index {
                index: l as usize,
                bound: classes,
            }),
            None => Ok(()),
        }
    }

    pub fn flipped(&self) -> LabelMap {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks(self.width) {
            data.extend(row.iter().rev());
        }
        LabelMap { data, ..*self }
    }
}

/// Per-pixel class distributions, `H x W x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    height: usize,
    width: usize,
    classes: usize,
    data: Vec<f64>,
}

impl ProbMap {
    pub fn new(height: usize, width: usize, classes: usize, data: Vec<f64>) -> Result<Self> {
        if classes < 2 {
            return Err(Error::domain("probability maps need at least two classes"));
        }
        if data.len() != height * width * classes {
            return Err(Error::shape(format!(
                "prob map has {} values, expected {height}x{width}x{classes}",
                data.len()
            )));
        }
        for (i, px) in data.chunks(classes).enumerate() {
            check_simplex(px, 1e-9).map_err(|e| Error::domain(format!("pixel {i}: {e}")))?;
        }
        Ok(ProbMap {
            height,
            width,
            classes,
            data,
        })
    }

    pub(crate) fn from_raw(height: usize, width: usize, classes: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width * classes);
        ProbMap {
            height,
            width,
            classes,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.data[index * self.classes..(index + 1) * self.classes]
    }

    pub fn iter_pixels(&self) -> std::slice::Chunks<'_, f64> {
        self.data.chunks(self.classes)
    }

    pub fn same_shape(&self, other: &ProbMap) -> bool {
        self.height == other.height && self.width == other.width && self.classes == other.classes
    }

    /// Hard prediction: first class reaching the per-pixel maximum.
    pub fn argmax(&self) -> LabelMap {
        let data = self
            .iter_pixels()
            .map(|px| {
                let mut best = 0;
                for (c, &p) in px.iter().enumerate() {
                    if p > px[best] {
                        best = c;
                    }
                }
                best as u32
            })
            .collect();
        LabelMap {
            height: self.height,
            width: self.width,
            data,
        }
    }
}

/// Flat model parameters in the order given by [`ParamLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {i} is {}", values[i])));
        }
        Ok(ParamVector(values))
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

fn default_height() -> usize {
    16
}
fn default_width() -> usize {
    16
}
fn default_features() -> usize {
    3
}
fn default_classes() -> usize {
    4
}
fn default_trunk_width() -> usize {
    8
}
fn default_dropout() -> f64 {
    0.2
}
fn default_aux_weight() -> f64 {
    0.5
}
fn default_primary_radius() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_height")]
    pub height: usize,
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_features")]
    pub features: usize,
    #[serde(default = "default_classes")]
    pub classes: usize,
    /// Width of the stage-1 trunk features read by the auxiliary head.
    #[serde(default = "default_trunk_width")]
    pub stage1_width: usize,
    /// Width of the stage-2 trunk features read by the primary head.
    #[serde(default = "default_trunk_width")]
    pub stage2_width: usize,
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
    #[serde(default = "default_aux_weight")]
    pub aux_loss_weight: f64,
    #[serde(default)]
    pub aux_radius: usize,
    #[serde(default = "default_primary_radius")]
    pub primary_radius: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            height: default_height(),
            width: default_width(),
            features: default_features(),
            classes: default_classes(),
            stage1_width: default_trunk_width(),
            stage2_width: default_trunk_width(),
            dropout_rate: default_dropout(),
            aux_loss_weight: default_aux_weight(),
            aux_radius: 0,
            primary_radius: default_primary_radius(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.height,
            self.width,
            self.features,
            self.stage1_width,
            self.stage2_width,
        ];
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("model dimensions must be at least 1".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config("model needs at least two classes".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} not in [0, 1)",
                self.dropout_rate
            )));
        }
        if !(self.aux_loss_weight >= 0.0) || !self.aux_loss_weight.is_finite() {
            return Err(Error::Config(format!(
                "aux_loss_weight {} must be >= 0",
                self.aux_loss_weight
            )));
        }
        if self.aux_radius >= self.primary_radius {
            return Err(Error::Config(format!(
                "aux_radius {} must be smaller than primary_radius {}",
                self.aux_radius, self.primary_radius
            )));
        }
        Ok(())
    }
}
