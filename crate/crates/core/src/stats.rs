//! Small statistics helpers shared by the experiments.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("need at least {need} samples per group, got {got}")]
    TooFewSamples { need: usize, got: usize },
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Unbiased sample variance.
pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}

/// Welch's two-sample t statistic, positive when `a` has the larger mean.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    let got = a.len().min(b.len());
    if got < 2 {
        return Err(StatsError::TooFewSamples { need: 2, got });
    }
    let diff = mean(a) - mean(b);
    let se2 = variance(a) / a.len() as f64 + variance(b) / b.len() as f64;
    if se2 == 0.0 {
        return Ok(if diff == 0.0 { 0.0 } else { diff.signum() * f64::INFINITY });
    }
    Ok(diff / se2.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Slope divided by its standard error.
    pub slope_t: f64,
}

/// Ordinary least squares of `y` on `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let se = if n > 2.0 && sxx > 0.0 { (sse / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    let slope_t = if se > 0.0 {
        slope / se
    } else if slope == 0.0 {
        0.0
    } else {
        slope.signum() * f64::INFINITY
    };
    LinearFit { slope, intercept, r2, slope_t }
}

/// Pearson correlation; zero when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Subtract the mean and divide by the population standard deviation. A
/// constant vector maps to zeros.
pub fn zscore(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let m = mean(v);
    let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
    if sd == 0.0 {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - m) / sd).collect()
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn identical_groups_give_zero() {
        assert_eq!(welch_t(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(welch_t(&[5.0, 5.0], &[5.0, 5.0]).unwrap(), 0.0);
    }

    #[test]
    fn too_few_samples() {
        assert_eq!(welch_t(&[1.0], &[1.0, 2.0]), Err(StatsError::TooFewSamples { need: 2, got: 1 }));
    }

    #[test]
    fn textbook_formula_on_seeded_normals() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let a: Vec<f64> = (0..200).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let b: Vec<f64> = (0..200).map(|_| 1.0 + rng.sample::<f64, _>(StandardNormal)).collect();
        // Independent oracle: the textbook formula spelled out.
        let m = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let s2 = |v: &[f64]| {
            let mu = m(v);
            v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (v.len() - 1) as f64
        };
        let oracle = (m(&b) - m(&a)) / (s2(&a) / 200.0 + s2(&b) / 200.0).sqrt();
        let t = welch_t(&b, &a).unwrap();
        assert!((t - oracle).abs() < 1e-9);
        assert!((t - 10.0).abs() < 2.5, "{t}");
    }

    #[test]
    fn exact_line_fits_perfectly() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let f = linear_fit(&x, &y);
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &y) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zscore_of_constant_is_zero() {
        assert_eq!(zscore(&[3.0, 3.0, 3.0]), vec![0.0; 3]);
    }

    proptest! {
        #[test]
        fn welch_antisymmetric_and_affine_invariant(
            a in proptest::collection::vec(-100.0f64..100.0, 2..20),
            b in proptest::collection::vec(-100.0f64..100.0, 2..20),
            k in 0.1f64..10.0,
            c in -50.0f64..50.0,
        ) {
            let t = welch_t(&a, &b).unwrap();
            prop_assume!(t.is_finite());
            let back = welch_t(&b, &a).unwrap();
            prop_assert!((t + back).abs() < 1e-9 * (1.0 + t.abs()));
            let sa: Vec<f64> = a.iter().map(|x| k * x + c).collect();
            let sb: Vec<f64> = b.iter().map(|x| k * x + c).collect();
            prop_assert!((welch_t(&sa, &sb).unwrap() - t).abs() < 1e-6 * (1.0 + t.abs()));
        }

        #[test]
        fn zscore_is_affine_invariant(v in proptest::collection::vec(-100.0f64..100.0, 2..30), k in 0.1f64..10.0, c in -50.0f64..50.0) {
            let w: Vec<f64> = v.iter().map(|x| k * x + c).collect();
            for (p, q) in zscore(&v).iter().zip(zscore(&w)) {
                prop_assert!((p - q).abs() < 1e-6);
            }
        }
    }
}
