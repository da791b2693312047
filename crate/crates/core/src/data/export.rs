//! Directory format for domain pairs.
//!
//! ```text
//! <dir>/manifest.json        dims, counts, seed, generator config echo
//! <dir>/source_images.f64    source_count x H x W x F little-endian f64
//! <dir>/source_labels.u32    source_count x H x W little-endian u32
//! <dir>/target_images.f64    target_count x H x W x F little-endian f64
//! <dir>/target_labels.u32    target_count x H x W little-endian u32
//! ```
//!
//! External datasets can be ingested by writing the same files; the
//! `generator` and `class_signatures` manifest fields are optional.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DomainPair, LabelledImage, ShiftConfig};
use crate::error::{Error, Result};
use crate::model::{Image, LabelMap};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub height: usize,
    pub width: usize,
    pub features: usize,
    pub classes: usize,
    pub source_count: usize,
    pub target_count: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub generator: Option<ShiftConfig>,
    #[serde(default)]
    pub class_signatures: Option<Vec<Vec<f64>>>,
}

const SOURCE_IMAGES: &str = "source_images.f64";
const SOURCE_LABELS: &str = "source_labels.u32";
const TARGET_IMAGES: &str = "target_images.f64";
const TARGET_LABELS: &str = "target_labels.u32";

fn f64_bytes<'a>(images: impl Iterator<Item = &'a Image>) -> Vec<u8> {
    images
        .flat_map(|img| img.data().iter().flat_map(|v| v.to_le_bytes()))
        .collect()
}

fn u32_bytes<'a>(labels: impl Iterator<Item = &'a LabelMap>) -> Vec<u8> {
    labels
        .flat_map(|l| l.data().iter().flat_map(|v| v.to_le_bytes()))
        .collect()
}

pub fn export_domain_pair(pair: &DomainPair, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let view = pair.evaluation_view();
    let first = &view.source()[0].image;
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        height: first.height(),
        width: first.width(),
        features: first.features(),
        classes: pair.classes(),
        source_count: view.source().len(),
        target_count: view.target_images().len(),
        seed: pair.generator().map(|g| g.seed),
        generator: pair.generator().cloned(),
        class_signatures: pair.class_signatures().map(|s| s.to_vec()),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(dir.join("manifest.json"), json)?;
    fs::write(dir.join(SOURCE_IMAGES), f64_bytes(view.source().iter().map(|s| &s.image)))?;
    fs::write(dir.join(SOURCE_LABELS), u32_bytes(view.source().iter().map(|s| &s.labels)))?;
    fs::write(dir.join(TARGET_IMAGES), f64_bytes(view.target_images().iter()))?;
    fs::write(dir.join(TARGET_LABELS), u32_bytes(view.target_labels().iter()))?;
    Ok(manifest)
}

fn read_array(dir: &Path, name: &str, expected_values: usize, width: usize) -> Result<Vec<u8>> {
    let bytes = fs::read(dir.join(name))?;
    if bytes.len() != expected_values * width {
        return Err(Error::shape(format!(
            "{name} holds {} bytes, manifest implies {}",
            bytes.len(),
            expected_values * width
        )));
    }
    Ok(bytes)
}

fn images(bytes: &[u8], m: &Manifest, count: usize) -> Result<Vec<Image>> {
    let per = m.height * m.width * m.features;
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    (0..count)
        .map(|i| Image::new(m.height, m.width, m.features, values[i * per..(i + 1) * per].to_vec()))
        .collect()
}

fn labels(bytes: &[u8], m: &Manifest, count: usize) -> Result<Vec<LabelMap>> {
    let per = m.height * m.width;
    let values: Vec<u32> = bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    (0..count)
        .map(|i| LabelMap::new(m.height, m.width, values[i * per..(i + 1) * per].to_vec()))
        .collect()
}

pub fn import_domain_pair(dir: &Path) -> Result<DomainPair> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Config(format!("manifest: {e}")))?;
    if m.version != MANIFEST_VERSION {
        return Err(Error::Config(format!("unsupported manifest version {}", m.version)));
    }
    let px = m.height * m.width;
    let src_img = read_array(dir, SOURCE_IMAGES, m.source_count * px * m.features, 8)?;
    let src_lab = read_array(dir, SOURCE_LABELS, m.source_count * px, 4)?;
    let tgt_img = read_array(dir, TARGET_IMAGES, m.target_count * px * m.features, 8)?;
    let tgt_lab = read_array(dir, TARGET_LABELS, m.target_count * px, 4)?;

    let source = images(&src_img, &m, m.source_count)?
        .into_iter()
        .zip(labels(&src_lab, &m, m.source_count)?)
        .map(|(image, labels)| LabelledImage { image, labels })
        .collect();
    let mut pair = DomainPair::new(
        source,
        images(&tgt_img, &m, m.target_count)?,
        labels(&tgt_lab, &m, m.target_count)?,
        m.classes,
    )?;
    pair.signatures = m.class_signatures;
    pair.generator = m.generator;
    Ok(pair)
}
