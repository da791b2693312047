//! Per-image hardness scores for unlabeled target images.
//!
//! The prediction-variance score of an image is the mean over pixels of
//! `KL(primary || aux)`; the entropy score is the mean over pixels of the
//! primary head's entropy. Scores are turned into a distribution over the
//! dataset with a softmax.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Image, Mode, ParamVector, ProbMap, SegModel};
use crate::numerics::{entropy_slice, kl_slice, softmax_into};
use crate::pool::Workers;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Criterion {
    KlVariance,
    Entropy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
    pub criterion: Criterion,
}

impl ScoreVector {
    pub fn mean(&self) -> f64 {
        if self.scores.is_empty() {
            return 0.0;
        }
        self.scores.iter().sum::<f64>() / self.scores.len() as f64
    }
}

pub fn kl_variance_image(primary: &ProbMap, aux: &ProbMap) -> Result<f64> {
    if !primary.same_shape(aux) {
        return Err(Error::shape("primary and auxiliary maps differ in shape"));
    }
    let total: f64 = primary
        .iter_pixels()
        .zip(aux.iter_pixels())
        .map(|(p, q)| kl_slice(p, q))
        .sum();
    Ok(total / primary.pixels() as f64)
}

pub fn entropy_image(primary: &ProbMap) -> f64 {
    let total: f64 = primary.iter_pixels().map(entropy_slice).sum();
    total / primary.pixels() as f64
}

/// Eval-mode score of one image under `criterion`.
pub fn score_image(model: &SegModel, params: &ParamVector, image: &Image, criterion: Criterion) -> Result<f64> {
    let (primary, aux) = model.forward(params, image, Mode::Eval)?;
    match criterion {
        Criterion::KlVariance => kl_variance_image(&primary, &aux),
        Criterion::Entropy => Ok(entropy_image(&primary)),
    }
}

/// One score per target image, in input order.
pub fn score_dataset(
    model: &SegModel,
    params: &ParamVector,
    targets: &[Image],
    criterion: Criterion,
    workers: &Workers,
) -> Result<ScoreVector> {
    if targets.is_empty() {
        return Err(Error::domain("no target images to score"));
    }
    let slots = workers.map(targets.len(), |i| score_image(model, params, &targets[i], criterion));
    let scores = slots
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            r.map_err(|e| Error::Scoring {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreVector { scores, criterion })
}

/// Softmax over the raw scores.
pub fn normalize_scores(scores: &ScoreVector) -> Result<Vec<f64>> {
    normalize_scores_with_temperature(scores, 1.0)
}

/// Softmax over `score / temperature`.
pub fn normalize_scores_with_temperature(scores: &ScoreVector, temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::domain(format!("softmax temperature {temperature}")));
    }
    if scores.scores.is_empty() {
        return Err(Error::domain("cannot normalize an empty score vector"));
    }
    if let Some(i) = scores.scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score {i} is {}", scores.scores[i])));
    }
    let scaled: Vec<f64> = scores.scores.iter().map(|s| s / temperature).collect();
    let mut out = vec![0.0; scaled.len()];
    softmax_into(&scaled, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> ProbMap {
        let mut data = Vec::new();
        for _ in 0..h * w {
            let raw: Vec<f64> = (0..c).map(|_| rng.gen_range(0.0..1.0f64).powi(3)).collect();
            let s: f64 = raw.iter().sum::<f64>() + 1e-300;
            data.extend(raw.iter().map(|v| v / s));
        }
        ProbMap::new(h, w, c, data).unwrap()
    }

    fn uniform_pixels(h: usize, w: usize, px: &[f64]) -> ProbMap {
        ProbMap::new(h, w, px.len(), px.repeat(h * w)).unwrap()
    }

    fn sv(scores: Vec<f64>) -> ScoreVector {
        ScoreVector {
            scores,
            criterion: Criterion::KlVariance,
        }
    }

    #[test]
    fn kl_variance_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_map(&mut rng, 3, 4, 5);
        assert_eq!(kl_variance_image(&m, &m).unwrap(), 0.0);

        let p = uniform_pixels(2, 3, &[0.5, 0.5]);
        let q = uniform_pixels(2, 3, &[0.25, 0.75]);
        assert_abs_diff_eq!(kl_variance_image(&p, &q).unwrap(), 0.14384103622589045, epsilon = 1e-12);

        let r = uniform_pixels(2, 2, &[0.5, 0.5]);
        assert!(matches!(kl_variance_image(&p, &r), Err(Error::Shape(_))));
    }

    #[test]
    fn kl_variance_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let (h, w, c) = (rng.gen_range(1..6), rng.gen_range(1..6), rng.gen_range(2..6));
            let p = random_map(&mut rng, h, w, c);
            let q = random_map(&mut rng, h, w, c);
            let mut total = 0.0;
            for i in 0..h * w {
                for k in 0..c {
                    let pk = p.data()[i * c + k];
                    if pk > 0.0 {
                        total += pk * (pk / q.data()[i * c + k].max(1e-12)).ln();
                    }
                }
            }
            let oracle = total / (h * w) as f64;
            assert_abs_diff_eq!(kl_variance_image(&p, &q).unwrap(), oracle, epsilon = 1e-10);
        }
    }

    #[test]
    fn entropy_examples() {
        let onehot = uniform_pixels(2, 2, &[0.0, 1.0, 0.0]);
        assert_eq!(entropy_image(&onehot), 0.0);
        let uniform = uniform_pixels(3, 3, &[0.25; 4]);
        assert_abs_diff_eq!(entropy_image(&uniform), 4f64.ln(), epsilon = 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_map(&mut rng, 4, 3, 3);
        let mut total = 0.0;
        for &v in m.data() {
            if v > 0.0 {
                total -= v * v.max(1e-12).ln();
            }
        }
        assert_abs_diff_eq!(entropy_image(&m), total / 12.0, epsilon = 1e-10);
    }

    fn tiny_model() -> SegModel {
        SegModel::new(ModelConfig {
            height: 4,
            width: 4,
            features: 2,
            classes: 3,
            stage1_width: 3,
            stage2_width: 3,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    fn random_images(n: usize, seed: u64) -> Vec<Image> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Image::new(4, 4, 2, (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap())
            .collect()
    }

    #[test]
    fn score_dataset_matches_per_image_calls() {
        let model = tiny_model();
        let params = model.init_params(4);
        let images = random_images(8, 5);
        for workers in [Workers::serial(), Workers::new(3)] {
            let sv = score_dataset(&model, &params, &images, Criterion::KlVariance, &workers).unwrap();
            assert_eq!(sv.scores.len(), 8);
            for (img, s) in images.iter().zip(&sv.scores) {
                let (p, a) = model.forward(&params, img, Mode::Eval).unwrap();
                assert_eq!(*s, kl_variance_image(&p, &a).unwrap());
            }
        }
        let single = score_dataset(&model, &params, &images[..1], Criterion::Entropy, &Workers::serial()).unwrap();
        let (p, _) = model.forward(&params, &images[0], Mode::Eval).unwrap();
        assert_eq!(single.scores, vec![entropy_image(&p)]);
    }

    #[test]
    fn identical_heads_score_zero() {
        // Zero head weights and equal biases make both heads constant and equal.
        let model = tiny_model();
        let l = model.layout().clone();
        let mut values = model.init_params(1).into_inner();
        for r in [l.aux_weights.clone(), l.primary_weights.clone(), l.aux_bias.clone(), l.primary_bias.clone()] {
            values[r].fill(0.0);
        }
        let params = ParamVector::new(values).unwrap();
        let sv = score_dataset(&model, &params, &random_images(5, 6), Criterion::KlVariance, &Workers::serial())
            .unwrap();
        assert!(sv.scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn score_dataset_reports_failing_index() {
        let model = tiny_model();
        let params = model.init_params(4);
        let mut images = random_images(3, 1);
        images[2] = Image::new(2, 2, 2, vec![0.0; 8]).unwrap();
        let err = score_dataset(&model, &params, &images, Criterion::KlVariance, &Workers::serial()).unwrap_err();
        assert!(matches!(err, Error::Scoring { index: 2, .. }));
        assert!(score_dataset(&model, &params, &[], Criterion::KlVariance, &Workers::serial()).is_err());
    }

    #[test]
    fn score_dataset_is_permutation_equivariant() {
        let model = tiny_model();
        let params = model.init_params(8);
        let images = random_images(6, 9);
        let perm = [3, 0, 5, 1, 4, 2];
        let shuffled: Vec<Image> = perm.iter().map(|&i| images[i].clone()).collect();
        let a = score_dataset(&model, &params, &images, Criterion::KlVariance, &Workers::serial()).unwrap();
        let b = score_dataset(&model, &params, &shuffled, Criterion::KlVariance, &Workers::serial()).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(b.scores[k], a.scores[i]);
        }
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_scores(&sv(vec![0.7; 4])).unwrap(), vec![0.25; 4]);
        let n = normalize_scores(&sv(vec![0.0, 3f64.ln()])).unwrap();
        assert_abs_diff_eq!(n[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(n[1], 0.75, epsilon = 1e-15);
        assert_eq!(normalize_scores(&sv(vec![0.0; 3])).unwrap(), vec![1.0 / 3.0; 3]);
        assert!(normalize_scores_with_temperature(&sv(vec![1.0]), 0.0).is_err());
        assert!(normalize_scores(&sv(vec![])).is_err());
    }

    #[test]
    fn more_divergent_image_gains_mass() {
        let base = uniform_pixels(2, 2, &[0.5, 0.5]);
        let mild = uniform_pixels(2, 2, &[0.4, 0.6]);
        let strong = uniform_pixels(2, 2, &[0.1, 0.9]);
        let others = [0.01, 0.02, 0.005];
        let mut before = others.to_vec();
        before.insert(0, kl_variance_image(&base, &mild).unwrap());
        let mut after = others.to_vec();
        after.insert(0, kl_variance_image(&base, &strong).unwrap());
        let nb = normalize_scores(&sv(before)).unwrap();
        let na = normalize_scores(&sv(after)).unwrap();
        assert!(na[0] >= nb[0]);
    }

    proptest! {
        #[test]
        fn normalized_scores_form_a_distribution(scores in prop::collection::vec(0.0f64..20.0, 1..64)) {
            let n = normalize_scores(&sv(scores.clone())).unwrap();
            prop_assert!((n.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(n.iter().all(|&v| v > 0.0));
            for i in 0..scores.len() {
                for j in 0..scores.len() {
                    if scores[i] > scores[j] {
                        prop_assert!(n[i] >= n[j]);
                    }
                }
            }
        }
    }
}
