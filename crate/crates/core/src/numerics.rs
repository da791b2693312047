//! Numerical primitives shared by the model, the scorers and the sampler.
//!
//! Everything accumulates in `f64`. Probabilities entering a logarithm or a
//! division are clamped to at least [`PROB_EPS`].

use crate::error::{Error, Result};

/// Lower clamp for probabilities used inside `ln` and divisions.
pub const PROB_EPS: f64 = 1e-12;

const SIMPLEX_TOL: f64 = 1e-9;

/// A categorical distribution over `C` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_simplex(&values, SIMPLEX_TOL)?;
        Ok(ProbVector(values))
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
}

/// Unconstrained pre-softmax activations.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("logit {i} is {}", values[i])));
        }
        Ok(LogitVector(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn check_simplex(values: &[f64], tol: f64) -> Result<()> {
    if values.is_empty() {
        return Err(Error::domain("empty probability vector"));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::domain(format!(
            "probability entry {i} is {}",
            values[i]
        )));
    }
    let sum: f64 = values.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(Error::domain(format!("probabilities sum to {sum}")));
    }
    Ok(())
}

/// Max-subtracted softmax of `logits` written into `out`.
pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    debug_assert_eq!(logits.len(), out.len());
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// `ln Σ exp(z)` computed around the maximum.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    max + sum.ln()
}

pub fn softmax(logits: &LogitVector) -> Result<ProbVector> {
    let z = logits.as_slice();
    if z.len() < 2 {
        return Err(Error::domain("softmax needs at least two classes"));
    }
    let mut out = vec![0.0; z.len()];
    softmax_into(z, &mut out);
    Ok(ProbVector(out))
}

fn check_label(label: usize, classes: usize) -> Result<()> {
    if label >= classes {
        return Err(Error::Index {
            index: label,
            bound: classes,
        });
    }
    Ok(())
}

/// `-ln(max(pred[label], eps))`.
pub fn cross_entropy(pred: &ProbVector, label: usize) -> Result<f64> {
    check_label(label, pred.len())?;
    Ok(cross_entropy_slice(pred.as_slice(), label))
}

#[inline]
pub(crate) fn cross_entropy_slice(pred: &[f64], label: usize) -> f64 {
    let p = pred[label];
    if p >= 1.0 {
        0.0
    } else {
        -p.max(PROB_EPS).ln()
    }
}

/// Cross-entropy through the fused log-softmax, used by the training loss.
pub fn cross_entropy_from_logits(logits: &LogitVector, label: usize) -> Result<f64> {
    let z = logits.as_slice();
    check_label(label, z.len())?;
    Ok(log_sum_exp(z) - z[label])
}

/// `Σ p ln(p/q)` with `0 ln 0 = 0` and `q` clamped to `PROB_EPS`.
pub fn kl_pointwise(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape(format!(
            "kl between {} and {} classes",
            p.len(),
            q.len()
        )));
    }
    Ok(kl_slice(p.as_slice(), q.as_slice()))
}

#[inline]
pub(crate) fn kl_slice(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&pc, &qc) in p.iter().zip(q) {
        if pc == 0.0 || pc == qc {
            continue;
        }
        acc += pc * (pc / qc.max(PROB_EPS)).ln();
    }
    acc.max(0.0)
}

/// Shannon entropy `-Σ p ln p` with clamping inside the log.
#[inline]
pub fn entropy_slice(p: &[f64]) -> f64 {
    let h: f64 = p
        .iter()
        .filter(|&&pc| pc > 0.0)
        .map(|&pc| -pc * pc.max(PROB_EPS).ln())
        .sum();
    h.max(0.0)
}

/// Central-difference gradient of `f` at `at`.
pub fn finite_difference_gradient<F>(mut f: F, at: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(eps > 0.0) {
        return Err(Error::domain(format!("finite-difference step {eps}")));
    }
    let mut x = at.to_vec();
    let mut grad = Vec::with_capacity(at.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let up = f(&x);
        x[i] = orig - eps;
        let down = f(&x);
        x[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective evaluated to {up} / {down} at coordinate {i}"
            )));
        }
        grad.push((up - down) / (2.0 * eps));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    fn lv(v: &[f64]) -> LogitVector {
        LogitVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&lv(&[0.0, 0.0])).unwrap().as_slice(), &[0.5, 0.5]);
        for p in softmax(&lv(&[5.0, 5.0, 5.0])).unwrap().as_slice() {
            assert_abs_diff_eq!(*p, 1.0 / 3.0, epsilon = 1e-15);
        }
        let p = softmax(&lv(&[0.0, 3f64.ln()])).unwrap();
        assert_abs_diff_eq!(p.as_slice()[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(p.as_slice()[1], 0.75, epsilon = 1e-15);
    }

    #[test]
    fn softmax_rejects_bad_input() {
        assert!(LogitVector::new(vec![0.0, f64::NAN]).is_err());
        assert!(LogitVector::new(vec![f64::INFINITY, 0.0]).is_err());
        assert!(softmax(&lv(&[1.0])).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&pv(&[1.0, 0.0]), 0).unwrap(), 0.0);
        assert_abs_diff_eq!(
            cross_entropy(&pv(&[0.5, 0.5]), 1).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-12
        );
        // -ln 0.2
        assert_abs_diff_eq!(
            cross_entropy(&pv(&[0.2, 0.3, 0.5]), 0).unwrap(),
            1.6094379124341003,
            epsilon = 1e-6
        );
        assert!(matches!(
            cross_entropy(&pv(&[0.5, 0.5]), 2),
            Err(Error::Index { index: 2, bound: 2 })
        ));
        // clamped rather than infinite
        assert_abs_diff_eq!(
            cross_entropy(&pv(&[1.0, 0.0]), 1).unwrap(),
            -PROB_EPS.ln(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_pointwise(&pv(&[0.3, 0.7]), &pv(&[0.3, 0.7])).unwrap(), 0.0);
        // 0.5 ln 2 + 0.5 ln(2/3)
        assert_abs_diff_eq!(
            kl_pointwise(&pv(&[0.5, 0.5]), &pv(&[0.25, 0.75])).unwrap(),
            0.14384103622589045,
            epsilon = 1e-6
        );
        assert_abs_diff_eq!(
            kl_pointwise(&pv(&[1.0, 0.0]), &pv(&[0.5, 0.5])).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-6
        );
        assert!(matches!(
            kl_pointwise(&pv(&[1.0, 0.0]), &pv(&[0.2, 0.3, 0.5])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn finite_difference_examples() {
        let g = finite_difference_gradient(|x| x[0] * x[0], &[3.0], 1e-5).unwrap();
        assert_abs_diff_eq!(g[0], 6.0, epsilon = 1e-8);

        let g = finite_difference_gradient(|_| 4.2, &[1.0, -2.0, 0.5], 1e-5).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));

        let err = finite_difference_gradient(|x| x[0].ln(), &[0.0], 1e-5);
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert!(finite_difference_gradient(|x| x[0], &[0.0], 0.0).is_err());
    }

    fn logits_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-30.0f64..30.0, 2..12)
    }

    fn prob_strategy(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, len).prop_map(|mut v| {
            v[0] += 1e-3;
            let s: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= s);
            v
        })
    }

    proptest! {
        #[test]
        fn softmax_is_on_simplex(z in logits_strategy()) {
            let p = softmax(&lv(&z)).unwrap();
            prop_assert!(check_simplex(p.as_slice(), 1e-9).is_ok());
        }

        #[test]
        fn softmax_shift_invariant(z in logits_strategy(), c in -50.0f64..50.0) {
            let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
            let a = softmax(&lv(&z)).unwrap();
            let b = softmax(&lv(&shifted)).unwrap();
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn kl_non_negative((p, q) in (2usize..8).prop_flat_map(|c| (prob_strategy(c), prob_strategy(c)))) {
            let p = pv(&p);
            let q = pv(&q);
            prop_assert!(kl_pointwise(&p, &q).unwrap() >= 0.0);
            prop_assert_eq!(kl_pointwise(&p, &p).unwrap(), 0.0);
        }

        #[test]
        fn composed_and_fused_cross_entropy_agree(z in prop::collection::vec(-10.0f64..10.0, 2..10), pick in 0usize..100) {
            let label = pick % z.len();
            let composed = cross_entropy(&softmax(&lv(&z)).unwrap(), label).unwrap();
            let fused = cross_entropy_from_logits(&lv(&z), label).unwrap();
            prop_assert!((composed - fused).abs() <= 1e-9);
        }

        #[test]
        fn finite_difference_matches_quadratic(
            (a, x) in (1usize..10).prop_flat_map(|n| (
                prop::collection::vec(0.1f64..5.0, n),
                prop::collection::vec(-3.0f64..3.0, n),
            ))
        ) {
            let coeffs = a.clone();
            let f = move |v: &[f64]| v.iter().zip(&coeffs).map(|(x, a)| a * x * x).sum::<f64>();
            let g = finite_difference_gradient(f, &x, 1e-5).unwrap();
            for i in 0..x.len() {
                let exact = 2.0 * a[i] * x[i];
                let rel = (g[i] - exact).abs() / exact.abs().max(1.0);
                prop_assert!(rel < 1e-6, "coord {} fd {} exact {}", i, g[i], exact);
            }
        }
    }
}
