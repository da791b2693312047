use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DomainPair, Geometry, LabelledImage, ShiftConfig};
use crate::error::Result;
use crate::model::{Image, LabelMap};
use crate::rng::{stream, Stream};

fn blob_labels(rng: &mut ChaCha8Rng, cfg: &ShiftConfig) -> Vec<u32> {
    let centres: Vec<(f64, f64, u32)> = (0..cfg.classes + 2)
        .map(|i| {
            let y = rng.gen_range(0.0..cfg.height as f64);
            let x = rng.gen_range(0.0..cfg.width as f64);
            let class = if i < cfg.classes {
                i as u32
            } else {
                rng.gen_range(0..cfg.classes as u32)
            };
            (y, x, class)
        })
        .collect();
    let mut labels = Vec::with_capacity(cfg.height * cfg.width);
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            let nearest = centres
                .iter()
                .map(|&(cy, cx, c)| ((cy - py).powi(2) + (cx - px).powi(2), c))
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, c)| c)
                .unwrap_or(0);
            labels.push(nearest);
        }
    }
    labels
}

fn stripe_labels(rng: &mut ChaCha8Rng, cfg: &ShiftConfig) -> Vec<u32> {
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let period: f64 = rng.gen_range(2.0..6.0);
    let offset: f64 = rng.gen_range(0.0..period * cfg.classes as f64);
    let (s, c) = angle.sin_cos();
    let mut labels = Vec::with_capacity(cfg.height * cfg.width);
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            let t = (x as f64 * c + y as f64 * s + offset) / period;
            labels.push((t.floor() as i64).rem_euclid(cfg.classes as i64) as u32);
        }
    }
    labels
}

fn checker_labels(rng: &mut ChaCha8Rng, cfg: &ShiftConfig) -> Vec<u32> {
    let cell = rng.gen_range(2..=5usize);
    let (oy, ox) = (rng.gen_range(0..cell), rng.gen_range(0..cell));
    let rows = (cfg.height + oy) / cell + 1;
    let cols = (cfg.width + ox) / cell + 1;
    let table: Vec<u32> = (0..rows * cols)
        .map(|_| rng.gen_range(0..cfg.classes as u32))
        .collect();
    let mut labels = Vec::with_capacity(cfg.height * cfg.width);
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            labels.push(table[((y + oy) / cell) * cols + (x + ox) / cell]);
        }
    }
    labels
}

fn label_map(rng: &mut ChaCha8Rng, cfg: &ShiftConfig) -> Vec<u32> {
    match cfg.geometry {
        Geometry::Blobs => blob_labels(rng, cfg),
        Geometry::Stripes => stripe_labels(rng, cfg),
        Geometry::Checker => checker_labels(rng, cfg),
    }
}

fn render(
    labels: &[u32],
    signatures: &[Vec<f64>],
    scale: f64,
    shift: &[f64],
    noise: &mut impl FnMut() -> f64,
) -> Vec<f64> {
    let mut data = Vec::with_capacity(labels.len() * shift.len());
    for &l in labels {
        for (sig, s) in signatures[l as usize].iter().zip(shift) {
            data.push(scale * sig + s + noise());
        }
    }
    data
}

/// Deterministic in `cfg` (including `cfg.seed`). Labels and class signatures
/// come from the data stream, pixel noise from the shift-noise stream.
pub fn generate_domain_pair(cfg: &ShiftConfig) -> Result<DomainPair> {
    cfg.validate()?;
    let mut data_rng = stream(cfg.seed, Stream::Data);
    let mut noise_rng = stream(cfg.seed, Stream::ShiftNoise);

    let signatures: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|_| (0..cfg.features).map(|_| data_rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let source_labels: Vec<Vec<u32>> = (0..cfg.source_count).map(|_| label_map(&mut data_rng, cfg)).collect();
    let target_labels: Vec<Vec<u32>> = (0..cfg.target_count).map(|_| label_map(&mut data_rng, cfg)).collect();

    let std = cfg.feature_noise_std;
    let normal = Normal::new(0.0, if std > 0.0 { std } else { 1.0 }).expect("finite std");
    let mut noise = || if std > 0.0 { normal.sample(&mut noise_rng) } else { 0.0 };

    let no_shift = vec![0.0; cfg.features];
    let (h, w, f) = (cfg.height, cfg.width, cfg.features);
    let mut source = Vec::with_capacity(cfg.source_count);
    for labels in source_labels {
        let image = Image::new(h, w, f, render(&labels, &signatures, 1.0, &no_shift, &mut noise))?;
        source.push(LabelledImage {
            image,
            labels: LabelMap::new(h, w, labels)?,
        });
    }
    let mut target_images = Vec::with_capacity(cfg.target_count);
    let mut target_maps = Vec::with_capacity(cfg.target_count);
    for labels in target_labels {
        let data = render(&labels, &signatures, cfg.contrast, &cfg.feature_mean_shift, &mut noise);
        target_images.push(Image::new(h, w, f, data)?);
        target_maps.push(LabelMap::new(h, w, labels)?);
    }

    let mut pair = DomainPair::new(source, target_images, target_maps, cfg.classes)?;
    pair.signatures = Some(signatures);
    pair.generator = Some(cfg.clone());
    Ok(pair)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let cfg = ShiftConfig {
            source_count: 5,
            target_count: 4,
            ..ShiftConfig::default()
        };
        assert_eq!(generate_domain_pair(&cfg).unwrap(), generate_domain_pair(&cfg).unwrap());
        let other = ShiftConfig { seed: 1, ..cfg.clone() };
        assert_ne!(generate_domain_pair(&cfg).unwrap(), generate_domain_pair(&other).unwrap());
    }

    #[test]
    fn zero_shift_zero_noise_domains_coincide() {
        for geometry in [Geometry::Blobs, Geometry::Stripes, Geometry::Checker] {
            let cfg = ShiftConfig {
                feature_mean_shift: vec![0.0; 3],
                feature_noise_std: 0.0,
                contrast: 1.0,
                geometry,
                source_count: 6,
                target_count: 6,
                ..ShiftConfig::default()
            };
            let pair = generate_domain_pair(&cfg).unwrap();
            let view = pair.evaluation_view();
            let sigs = pair.class_signatures().unwrap();
            for (img, labels) in view.target_images().iter().zip(view.target_labels()) {
                for (i, &l) in labels.data().iter().enumerate() {
                    assert_eq!(&img.data()[i * 3..i * 3 + 3], sigs[l as usize].as_slice());
                }
            }
            for s in view.source() {
                for (i, &l) in s.labels.data().iter().enumerate() {
                    assert_eq!(&s.image.data()[i * 3..i * 3 + 3], sigs[l as usize].as_slice());
                }
            }
        }
    }

    #[test]
    fn target_mean_shift_is_recovered() {
        let shift = vec![0.8, -0.3, 0.0];
        let noise = 0.5;
        let cfg = ShiftConfig {
            feature_mean_shift: shift.clone(),
            feature_noise_std: noise,
            contrast: 1.0,
            source_count: 16,
            target_count: 16,
            ..ShiftConfig::default()
        };
        let pair = generate_domain_pair(&cfg).unwrap();
        let view = pair.evaluation_view();
        let sigs = pair.class_signatures().unwrap();
        let mut sums = vec![0.0; 3];
        let mut pixels = 0usize;
        for (img, labels) in view.target_images().iter().zip(view.target_labels()) {
            for (i, &l) in labels.data().iter().enumerate() {
                for k in 0..3 {
                    sums[k] += img.data()[i * 3 + k] - sigs[l as usize][k];
                }
                pixels += 1;
            }
        }
        let tol = 3.0 * noise / (pixels as f64).sqrt();
        for k in 0..3 {
            let mean = sums[k] / pixels as f64;
            assert!((mean - shift[k]).abs() <= tol, "channel {k}: {mean} vs {}", shift[k]);
        }
    }

    #[test]
    fn every_geometry_uses_valid_classes() {
        for geometry in [Geometry::Blobs, Geometry::Stripes, Geometry::Checker] {
            let cfg = ShiftConfig {
                geometry,
                classes: 5,
                source_count: 8,
                target_count: 8,
                height: 9,
                width: 13,
                ..ShiftConfig::default()
            };
            let pair = generate_domain_pair(&cfg).unwrap();
            let mut seen = [false; 5];
            for s in pair.evaluation_view().source() {
                s.labels.check_classes(5).unwrap();
                s.labels.data().iter().for_each(|&l| seen[l as usize] = true);
            }
            assert!(seen.iter().filter(|&&s| s).count() >= 2);
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let cfg = ShiftConfig {
            feature_mean_shift: vec![0.0; 2],
            ..ShiftConfig::default()
        };
        assert!(generate_domain_pair(&cfg).is_err());
        let cfg = ShiftConfig {
            feature_noise_std: -1.0,
            ..ShiftConfig::default()
        };
        assert!(generate_domain_pair(&cfg).is_err());
    }
}
