//! Adaptive sampling distribution over target images.
//!
//! `D_1` is uniform. After every epoch the distribution is averaged with the
//! normalized hardness scores, `D_{t+1}(j) = (D_t(j) + s_j) / 2`, so images on
//! which the model is unsure are drawn more often in the next epoch.

use std::io::Write;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::entropy_slice;

/// Tolerance on the sum of a normalized score vector handed to [`SampleDistribution::update`].
pub const SCORE_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleDistribution {
    weights: Vec<f64>,
    epoch: usize,
}

impl SampleDistribution {
    pub fn init_uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("sampling distribution over zero images"));
        }
        Ok(SampleDistribution {
            weights: vec![1.0 / n as f64; n],
            epoch: 1,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn entropy(&self) -> f64 {
        entropy_slice(&self.weights)
    }

    /// Average with a normalized score vector and renormalize by the exact sum.
    pub fn update(&self, normalized_scores: &[f64]) -> Result<Self> {
        if normalized_scores.len() != self.weights.len() {
            return Err(Error::shape(format!(
                "{} scores for {} images",
                normalized_scores.len(),
                self.weights.len()
            )));
        }
        if normalized_scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Contract("scores must be finite and non-negative".into()));
        }
        let sum: f64 = normalized_scores.iter().sum();
        if (sum - 1.0).abs() > SCORE_SUM_TOL {
            return Err(Error::Contract(format!("normalized scores sum to {sum}")));
        }
        let mut weights: Vec<f64> = self
            .weights
            .iter()
            .zip(normalized_scores)
            .map(|(d, s)| 0.5 * (d + s))
            .collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        debug_assert!(weights.iter().all(|&w| w > 0.0));
        Ok(SampleDistribution {
            weights,
            epoch: self.epoch + 1,
        })
    }

    /// Prefix sums for inverse-CDF drawing; build once per epoch.
    pub fn cdf(&self) -> Cdf {
        let mut acc = 0.0;
        let cumulative = self
            .weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Cdf { cumulative }
    }

    /// `count` i.i.d. draws with replacement.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<usize> {
        self.cdf().draw(rng, count)
    }

    /// Append `epoch,index,weight` rows.
    pub fn write_csv_rows<W: Write>(&self, w: &mut W) -> Result<()> {
        for (j, weight) in self.weights.iter().enumerate() {
            writeln!(w, "{},{},{}", self.epoch, j, weight)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Cdf {
    cumulative: Vec<f64>,
}

impl Cdf {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().expect("non-empty distribution");
        let u = rng.gen::<f64>() * total;
        let idx = self.cumulative.partition_point(|&c| c <= u);
        idx.min(self.cumulative.len() - 1)
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<usize> {
        (0..count).map(|_| self.sample(rng)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dist(weights: Vec<f64>) -> SampleDistribution {
        SampleDistribution { weights, epoch: 1 }
    }

    #[test]
    fn uniform_examples() {
        assert_eq!(SampleDistribution::init_uniform(4).unwrap().weights(), &[0.25; 4]);
        assert_eq!(SampleDistribution::init_uniform(1).unwrap().weights(), &[1.0]);
        let d = SampleDistribution::init_uniform(2975).unwrap();
        assert!(d.weights().iter().all(|&w| w == 1.0 / 2975.0));
        assert_eq!(d.epoch(), 1);
        assert!(SampleDistribution::init_uniform(0).is_err());
    }

    #[test]
    fn update_examples() {
        let d = dist(vec![0.25, 0.75]).update(&[0.15, 0.85]).unwrap();
        assert_abs_diff_eq!(d.weights()[0], 0.20, epsilon = 1e-15);
        assert_abs_diff_eq!(d.weights()[1], 0.80, epsilon = 1e-15);
        assert_eq!(d.epoch(), 2);

        let u = SampleDistribution::init_uniform(5).unwrap();
        let next = u.update(&[0.2; 5]).unwrap();
        for w in next.weights() {
            assert_abs_diff_eq!(*w, 0.2, epsilon = 1e-15);
        }

        assert!(matches!(u.update(&[0.5, 0.5]), Err(Error::Shape(_))));
        assert!(matches!(u.update(&[0.3; 5]), Err(Error::Contract(_))));
    }

    #[test]
    fn draw_examples() {
        let eps = 1e-12;
        let d = dist(vec![1.0 - 2.0 * eps, eps, eps]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(d.draw(&mut rng, 1000).iter().all(|&i| i == 0));

        let d = dist(vec![0.2, 0.8]);
        let a = d.draw(&mut ChaCha8Rng::seed_from_u64(5), 50);
        let b = d.draw(&mut ChaCha8Rng::seed_from_u64(5), 50);
        assert_eq!(a, b);

        let draws = d.draw(&mut ChaCha8Rng::seed_from_u64(9), 100_000);
        let freq = draws.iter().filter(|&&i| i == 1).count() as f64 / 100_000.0;
        assert!((freq - 0.8).abs() <= 0.01, "frequency {freq}");
    }

    #[test]
    fn csv_rows() {
        let mut buf = Vec::new();
        dist(vec![0.25, 0.75]).write_csv_rows(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "1,0,0.25\n1,1,0.75\n");
    }

    fn normalized(raw: &[f64]) -> Vec<f64> {
        let s: f64 = raw.iter().sum();
        raw.iter().map(|v| v / s).collect()
    }

    proptest! {
        #[test]
        fn draws_stay_in_range(raw in prop::collection::vec(0.001f64..1.0, 1..50), seed in any::<u64>()) {
            let d = dist(normalized(&raw));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            prop_assert!(d.draw(&mut rng, 200).iter().all(|&i| i < raw.len()));
        }

        #[test]
        fn repeated_updates_match_closed_form(raw in prop::collection::vec(0.0f64..1.0, 2..64), k in 1usize..60) {
            let mut raw = raw;
            raw[0] += 0.01;
            let s = normalized(&raw);
            let n = s.len();
            let mut d = SampleDistribution::init_uniform(n).unwrap();
            for _ in 0..k {
                d = d.update(&s).unwrap();
            }
            let decay = 0.5f64.powi(k as i32);
            for j in 0..n {
                let closed = decay / n as f64 + (1.0 - decay) * s[j];
                prop_assert!((d.weights()[j] - closed).abs() <= 1e-9);
            }
        }
    }
}
