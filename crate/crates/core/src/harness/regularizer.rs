//! Target-domain regularization hook.
//!
//! The training objective of every iteration is the source loss plus
//! `R(target batch, θ)`. The default `R` is zero; adversarial or
//! pseudo-label terms plug in through [`Regularizer`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Image, Mode, ParamVector, SegModel};
use crate::numerics::PROB_EPS;

pub trait Regularizer {
    /// Loss contribution and its gradient (length `model.param_count()`).
    fn evaluate(&self, model: &SegModel, params: &ParamVector, targets: &[&Image]) -> Result<(f64, Vec<f64>)>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoRegularizer;

impl Regularizer for NoRegularizer {
    fn evaluate(&self, model: &SegModel, _: &ParamVector, _: &[&Image]) -> Result<(f64, Vec<f64>)> {
        Ok((0.0, vec![0.0; model.param_count()]))
    }
}

/// `weight` times the mean per-pixel entropy of the primary head on the
/// target batch, evaluated without dropout.
#[derive(Debug, Clone, Copy)]
pub struct EntropyMinimization {
    pub weight: f64,
}

impl Regularizer for EntropyMinimization {
    fn evaluate(&self, model: &SegModel, params: &ParamVector, targets: &[&Image]) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; model.param_count()];
        if targets.is_empty() {
            return Ok((0.0, grad));
        }
        let c = model.config().classes;
        let scale = self.weight / targets.len() as f64;
        let mut total = 0.0;
        for image in targets {
            let npix = image.pixels() as f64;
            total += model.head_gradient(params, image, Mode::Eval, &mut grad, |out, dp, _| {
                let mut h_sum = 0.0;
                for (i, px) in out.primary.iter_pixels().enumerate() {
                    let logs: Vec<f64> = px.iter().map(|p| p.max(PROB_EPS).ln()).collect();
                    let h: f64 = -px.iter().zip(&logs).map(|(p, l)| p * l).sum::<f64>();
                    h_sum += h;
                    // dH/dz_k = -p_k (ln p_k + H)
                    for k in 0..c {
                        dp[i * c + k] = -scale * px[k] * (logs[k] + h) / npix;
                    }
                }
                scale * h_sum / npix
            })?;
        }
        Ok((total, grad))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RegularizerConfig {
    #[default]
    None,
    EntropyMin {
        weight: f64,
    },
}

impl RegularizerConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RegularizerConfig::EntropyMin { weight } if !(weight >= 0.0) || !weight.is_finite() => {
                Err(Error::Config(format!("regularizer weight {weight} must be >= 0")))
            }
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Box<dyn Regularizer> {
        match *self {
            RegularizerConfig::None => Box::new(NoRegularizer),
            RegularizerConfig::EntropyMin { weight } => Box::new(EntropyMinimization { weight }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::numerics::finite_difference_gradient;
    use crate::uncertainty::entropy_image;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn entropy_gradient_matches_finite_differences() {
        let cfg = ModelConfig {
            height: 3,
            width: 4,
            features: 2,
            classes: 3,
            stage1_width: 3,
            stage2_width: 4,
            ..ModelConfig::default()
        };
        let model = SegModel::new(cfg).unwrap();
        let params = model.init_params(21);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let images: Vec<Image> = (0..2)
            .map(|_| Image::new(3, 4, 2, (0..24).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap())
            .collect();
        let refs: Vec<&Image> = images.iter().collect();
        let reg = EntropyMinimization { weight: 0.7 };
        let (loss, grad) = reg.evaluate(&model, &params, &refs).unwrap();

        let objective = |x: &[f64]| {
            let pv = ParamVector::new(x.to_vec()).unwrap();
            let mut total = 0.0;
            for img in &images {
                let (p, _) = model.forward(&pv, img, Mode::Eval).unwrap();
                total += entropy_image(&p);
            }
            0.7 * total / images.len() as f64
        };
        assert!((objective(params.as_slice()) - loss).abs() < 1e-12);
        let fd = finite_difference_gradient(objective, params.as_slice(), 1e-5).unwrap();
        for (i, (g, f)) in grad.iter().zip(&fd).enumerate() {
            let rel = (g - f).abs() / f.abs().max(g.abs()).max(1e-6);
            assert!(rel < 1e-4, "coord {i}: {g} vs {f}");
        }
    }

    #[test]
    fn no_regularizer_is_zero() {
        let model = SegModel::new(ModelConfig::default()).unwrap();
        let (loss, grad) = NoRegularizer.evaluate(&model, &model.init_params(0), &[]).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grad.len(), model.param_count());
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn config_parses() {
        let r: RegularizerConfig = serde_json::from_str(r#"{"kind":"entropy-min","weight":0.1}"#).unwrap();
        assert_eq!(r, RegularizerConfig::EntropyMin { weight: 0.1 });
        assert!(RegularizerConfig::EntropyMin { weight: -1.0 }.validate().is_err());
    }
}
