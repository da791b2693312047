//! Parameter-space aggregation of per-epoch student snapshots.
//!
//! The default is the online running mean `Θ_t = ((t-1) Θ_{t-1} + θ_t) / t`
//! with `Θ_1 = θ_1`, which keeps a single averaged model instead of every
//! snapshot. Momentum and EMA variants and an error-weighted combination are
//! kept for comparison.
//!
//! The error-weighted path combines *parameters* with AdaBoost-style weights.
//! Classic boosting combines *predictions*; this is only a parameter-space
//! analog and needs target labels, so it is a labelled-oracle baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ParamVector, Role, SnapshotFile};

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub params: ParamVector,
    pub epoch: usize,
}

impl Snapshot {
    pub fn new(params: ParamVector, epoch: usize) -> Result<Self> {
        if epoch == 0 {
            return Err(Error::Contract("snapshot epochs start at 1".into()));
        }
        Ok(Snapshot { params, epoch })
    }

    pub fn to_file(&self) -> SnapshotFile {
        SnapshotFile {
            role: Role::Student,
            index: self.epoch as u64,
            params: self.params.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateState {
    mean_params: ParamVector,
    count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AggregationVariant {
    /// No aggregation: the reported aggregate is the latest student.
    None,
    RunningMean,
    Momentum { momentum: f64 },
    /// Per-iteration exponential moving average.
    Ema { decay: f64 },
    /// Snapshots weighted by `adaboost_alpha` of their measured target error.
    OracleAlpha,
}

impl AggregationVariant {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AggregationVariant::Momentum { momentum: v } | AggregationVariant::Ema { decay: v } => {
                check_unit_interval(v, "aggregation coefficient")
            }
            _ => Ok(()),
        }
    }
}

fn check_unit_interval(v: f64, what: &str) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("{what} {v} not in (0, 1)")))
    }
}

fn check_len(state: &ParamVector, other: &ParamVector) -> Result<()> {
    if state.len() != other.len() {
        return Err(Error::shape(format!(
            "snapshot has {} parameters, aggregate has {}",
            other.len(),
            state.len()
        )));
    }
    Ok(())
}

fn blend(mean: &ParamVector, keep: f64, params: &ParamVector, take: f64) -> ParamVector {
    ParamVector::from_raw(
        mean.as_slice()
            .iter()
            .zip(params.as_slice())
            .map(|(m, p)| keep * m + take * p)
            .collect(),
    )
}

impl AggregateState {
    /// `Θ_1 = θ_1`.
    pub fn init(first: &Snapshot) -> Result<Self> {
        if first.epoch != 1 {
            return Err(Error::Contract(format!(
                "aggregate must start from the epoch-1 snapshot, got epoch {}",
                first.epoch
            )));
        }
        Ok(AggregateState {
            mean_params: first.params.clone(),
            count: 1,
        })
    }

    /// Start a state from arbitrary parameters, e.g. the first EMA input.
    pub fn from_params(params: ParamVector) -> Self {
        AggregateState {
            mean_params: params,
            count: 1,
        }
    }

    pub fn mean_params(&self) -> &ParamVector {
        &self.mean_params
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn update_running_mean(&self, snap: &Snapshot) -> Result<Self> {
        let t = self.count + 1;
        if snap.epoch != t {
            return Err(Error::Contract(format!(
                "expected snapshot of epoch {t}, got epoch {}",
                snap.epoch
            )));
        }
        check_len(&self.mean_params, &snap.params)?;
        let tf = t as f64;
        let values = self
            .mean_params
            .as_slice()
            .iter()
            .zip(snap.params.as_slice())
            .map(|(m, p)| ((tf - 1.0) * m + p) / tf)
            .collect();
        Ok(AggregateState {
            mean_params: ParamVector::from_raw(values),
            count: t,
        })
    }

    /// `Θ ← m Θ + (1-m) θ`.
    pub fn update_momentum(&self, snap: &Snapshot, momentum: f64) -> Result<Self> {
        check_unit_interval(momentum, "momentum")?;
        check_len(&self.mean_params, &snap.params)?;
        Ok(AggregateState {
            mean_params: blend(&self.mean_params, momentum, &snap.params, 1.0 - momentum),
            count: self.count + 1,
        })
    }

    /// `Θ ← d Θ + (1-d) θ`, meant to be called every iteration.
    pub fn update_ema(&self, params: &ParamVector, decay: f64) -> Result<Self> {
        check_unit_interval(decay, "ema decay")?;
        check_len(&self.mean_params, params)?;
        Ok(AggregateState {
            mean_params: blend(&self.mean_params, decay, params, 1.0 - decay),
            count: self.count + 1,
        })
    }

    pub fn to_file(&self) -> SnapshotFile {
        SnapshotFile {
            role: Role::Aggregate,
            index: self.count as u64,
            params: self.mean_params.clone(),
        }
    }

    pub fn from_file(file: SnapshotFile) -> Result<Self> {
        if file.role != Role::Aggregate {
            return Err(Error::CorruptSnapshot("file does not hold an aggregate".into()));
        }
        if file.index == 0 {
            return Err(Error::CorruptSnapshot("aggregate with zero snapshots".into()));
        }
        Ok(AggregateState {
            mean_params: file.params,
            count: file.index as usize,
        })
    }
}

/// `½ ln((1-e)/e)` for a weak learner with error rate `e`.
pub fn adaboost_alpha(error: f64) -> Result<f64> {
    if !(error > 0.0 && error < 1.0) {
        return Err(Error::domain(format!("error rate {error} not in (0, 1)")));
    }
    Ok(0.5 * ((1.0 - error) / error).ln())
}

/// [`adaboost_alpha`] of a measured error rate clamped to `[1e-6, 1 - 1e-6]`.
pub fn adaboost_alpha_measured(error: f64) -> Result<f64> {
    if !error.is_finite() {
        return Err(Error::NonFinite(format!("error rate {error}")));
    }
    adaboost_alpha(error.clamp(1e-6, 1.0 - 1e-6))
}

/// `Σ α_i θ_i` with the weights normalized to sum to one first.
pub fn weighted_combine(snapshots: &[&ParamVector], alphas: &[f64]) -> Result<ParamVector> {
    if snapshots.len() != alphas.len() {
        return Err(Error::shape(format!(
            "{} snapshots but {} weights",
            snapshots.len(),
            alphas.len()
        )));
    }
    let first = snapshots
        .first()
        .ok_or_else(|| Error::domain("nothing to combine"))?;
    for s in snapshots {
        check_len(first, s)?;
    }
    let total: f64 = alphas.iter().sum();
    if !total.is_finite() || total.abs() < f64::EPSILON {
        return Err(Error::domain(format!("weights sum to {total}")));
    }
    let mut out = vec![0.0; first.len()];
    for (s, a) in snapshots.iter().zip(alphas) {
        let w = a / total;
        for (o, p) in out.iter_mut().zip(s.as_slice()) {
            *o += w * p;
        }
    }
    Ok(ParamVector::from_raw(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn snap(v: &[f64], epoch: usize) -> Snapshot {
        Snapshot::new(pv(v), epoch).unwrap()
    }

    #[test]
    fn init_examples() {
        let s = AggregateState::init(&snap(&[1.0, 2.0, 3.0], 1)).unwrap();
        assert_eq!(s.mean_params().as_slice(), &[1.0, 2.0, 3.0]);
        assert_eq!(s.count(), 1);
        assert!(matches!(AggregateState::init(&snap(&[1.0], 2)), Err(Error::Contract(_))));
        assert!(Snapshot::new(pv(&[1.0]), 0).is_err());
    }

    #[test]
    fn file_round_trip_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut state = AggregateState::init(&snap(&v, 1)).unwrap();
        state = state.update_running_mean(&snap(&v.iter().map(|x| x * 3.0).collect::<Vec<_>>(), 2)).unwrap();
        let mut buf = Vec::new();
        crate::model::write_snapshot(&mut buf, &state.to_file()).unwrap();
        let back = AggregateState::from_file(crate::model::read_snapshot(&mut &buf[..]).unwrap()).unwrap();
        assert_eq!(back, state);
        assert!(AggregateState::from_file(snap(&v, 1).to_file()).is_err());
    }

    #[test]
    fn running_mean_examples() {
        let s = AggregateState::init(&snap(&[1.0], 1)).unwrap();
        let s2 = s.update_running_mean(&snap(&[3.0], 2)).unwrap();
        assert_eq!(s2.mean_params().as_slice(), &[2.0]);
        assert_eq!(s2.count(), 2);

        let mut c = AggregateState::init(&snap(&[0.7, -1.1], 1)).unwrap();
        for t in 2..20 {
            c = c.update_running_mean(&snap(&[0.7, -1.1], t)).unwrap();
            assert_abs_diff_eq!(c.mean_params().as_slice()[0], 0.7, epsilon = 1e-15);
            assert_abs_diff_eq!(c.mean_params().as_slice()[1], -1.1, epsilon = 1e-15);
        }

        assert!(matches!(s.update_running_mean(&snap(&[3.0], 3)), Err(Error::Contract(_))));
        assert!(matches!(s.update_running_mean(&snap(&[3.0, 1.0], 2)), Err(Error::Shape(_))));
    }

    #[test]
    fn running_mean_tracks_batch_mean_at_every_prefix() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = 40;
        let snaps: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..p).map(|_| rng.gen_range(-5.0..5.0)).collect())
            .collect();
        let mut state = AggregateState::init(&snap(&snaps[0], 1)).unwrap();
        for t in 1..=snaps.len() {
            if t > 1 {
                state = state.update_running_mean(&snap(&snaps[t - 1], t)).unwrap();
            }
            for k in 0..p {
                let batch: f64 = snaps[..t].iter().map(|s| s[k]).sum::<f64>() / t as f64;
                let got = state.mean_params().as_slice()[k];
                assert!((got - batch).abs() <= 1e-12 * batch.abs().max(1.0));
            }
        }
    }

    #[test]
    fn momentum_examples() {
        let s = AggregateState::init(&snap(&[1.0], 1)).unwrap();
        let m = s.update_momentum(&snap(&[0.0], 2), 0.9).unwrap();
        assert_abs_diff_eq!(m.mean_params().as_slice()[0], 0.9, epsilon = 1e-15);
        let fixed = s.update_momentum(&snap(&[1.0], 2), 0.5).unwrap();
        assert_eq!(fixed.mean_params().as_slice(), &[1.0]);
        assert!(s.update_momentum(&snap(&[1.0], 2), 1.0).is_err());
        assert!(s.update_momentum(&snap(&[1.0], 2), 0.0).is_err());

        // Gap to a repeated target shrinks by exactly m per step.
        let mut state = AggregateState::init(&snap(&[5.0], 1)).unwrap();
        let mut gap = 5.0 - 2.0;
        for t in 2..30 {
            state = state.update_momentum(&snap(&[2.0], t), 0.9).unwrap();
            gap *= 0.9;
            assert_abs_diff_eq!(state.mean_params().as_slice()[0] - 2.0, gap, epsilon = 1e-12);
        }
    }

    #[test]
    fn ema_examples() {
        let s = AggregateState::from_params(pv(&[0.0]));
        let e = s.update_ema(&pv(&[1.0]), 0.99).unwrap();
        assert_abs_diff_eq!(e.mean_params().as_slice()[0], 0.01, epsilon = 1e-15);

        let c = AggregateState::from_params(pv(&[0.3]));
        assert_eq!(c.update_ema(&pv(&[0.3]), 0.99).unwrap().mean_params().as_slice(), &[0.3]);

        // 0.99^k < 1e-6 first holds at k = 1375.
        let mut state = AggregateState::from_params(pv(&[0.0]));
        for _ in 0..1400 {
            state = state.update_ema(&pv(&[1.0]), 0.99).unwrap();
        }
        assert!((state.mean_params().as_slice()[0] - 1.0).abs() < 1e-6);
        assert!(s.update_ema(&pv(&[1.0]), 1.5).is_err());
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(adaboost_alpha(0.5).unwrap(), 0.0);
        assert_abs_diff_eq!(adaboost_alpha(0.1).unwrap(), 3f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(adaboost_alpha(0.9).unwrap(), -(3f64.ln()), epsilon = 1e-12);
        assert!(adaboost_alpha(0.0).is_err());
        assert!(adaboost_alpha(1.0).is_err());
        assert!(adaboost_alpha_measured(0.0).unwrap().is_finite());
    }

    #[test]
    fn weighted_combine_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let snaps: Vec<ParamVector> = (0..5)
            .map(|_| pv(&(0..8).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<_>>()))
            .collect();
        let refs: Vec<&ParamVector> = snaps.iter().collect();

        let mut state = AggregateState::init(&Snapshot::new(snaps[0].clone(), 1).unwrap()).unwrap();
        for (t, s) in snaps.iter().enumerate().skip(1) {
            state = state.update_running_mean(&Snapshot::new(s.clone(), t + 1).unwrap()).unwrap();
        }
        let uniform = weighted_combine(&refs, &[0.2; 5]).unwrap();
        for (a, b) in uniform.as_slice().iter().zip(state.mean_params().as_slice()) {
            assert!((a - b).abs() <= 1e-12);
        }

        let pick = weighted_combine(&refs, &[0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(pick, snaps[2]);

        let alphas: Vec<f64> = (0..5).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = alphas.iter().sum();
        let combined = weighted_combine(&refs, &alphas).unwrap();
        for k in 0..8 {
            let mut oracle = 0.0;
            for i in 0..5 {
                oracle += alphas[i] / total * snaps[i].as_slice()[k];
            }
            assert_abs_diff_eq!(combined.as_slice()[k], oracle, epsilon = 1e-12);
        }

        assert!(matches!(weighted_combine(&refs, &[1.0]), Err(Error::Shape(_))));
        assert!(weighted_combine(&refs, &[0.0; 5]).is_err());
    }

    #[test]
    fn variant_config_parses() {
        let v: AggregationVariant = serde_json::from_str(r#"{"kind":"momentum","momentum":0.9}"#).unwrap();
        assert_eq!(v, AggregationVariant::Momentum { momentum: 0.9 });
        let v: AggregationVariant = serde_json::from_str(r#"{"kind":"running-mean"}"#).unwrap();
        assert_eq!(v, AggregationVariant::RunningMean);
        assert!(AggregationVariant::Ema { decay: 1.2 }.validate().is_err());
    }
}
