//! Linear one-vs-rest SVM trained by stochastic subgradient descent on the
//! hinge loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ClassifierError {
    #[error("all feature vectors are identical")]
    ClassifierDegenerate,
    #[error("need at least {need} classes, got {got}")]
    TooFewClasses { need: usize, got: usize },
    #[error("feature vectors have inconsistent lengths")]
    RaggedFeatures,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub epochs: usize,
    pub lr: f64,
    pub c: f64,
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams { epochs: 200, lr: 0.01, c: 1.0, seed: 0 }
    }
}

/// Per-feature min-max scaling fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl MinMax {
    pub fn fit(x: &[Vec<f64>]) -> Result<Self, ClassifierError> {
        let d = x.first().map_or(0, |r| r.len());
        if x.iter().any(|r| r.len() != d) {
            return Err(ClassifierError::RaggedFeatures);
        }
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for r in x {
            for (j, &v) in r.iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        if lo.iter().zip(&hi).all(|(l, h)| h <= l) {
            return Err(ClassifierError::ClassifierDegenerate);
        }
        Ok(MinMax { lo, hi })
    }

    /// Constant features map to 0; test values may fall outside [0, 1].
    pub fn apply(&self, r: &[f64]) -> Vec<f64> {
        r.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&v, (&l, &h))| if h > l { (v - l) / (h - l) } else { 0.0 })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub classes: Vec<u32>,
    /// One weight vector per class, bias last.
    pub weights: Vec<Vec<f64>>,
    pub scaler: MinMax,
}

impl LinearSvm {
    pub fn train(x: &[Vec<f64>], y: &[u32], p: &SvmParams) -> Result<Self, ClassifierError> {
        assert_eq!(x.len(), y.len());
        let scaler = MinMax::fit(x)?;
        let xs: Vec<Vec<f64>> = x.iter().map(|r| scaler.apply(r)).collect();
        let mut classes = y.to_vec();
        classes.sort_unstable();
        classes.dedup();
        if classes.len() < 2 {
            return Err(ClassifierError::TooFewClasses { need: 2, got: classes.len() });
        }
        let n = xs.len();
        let d = scaler.lo.len();
        // Objective per class: |w|^2 / 2 + C * sum of hinge losses; the
        // regulariser is spread evenly across the n per-sample steps.
        let lambda = 1.0 / n as f64;
        let mut weights = Vec::with_capacity(classes.len());
        for (ci, &c) in classes.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ (ci as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let mut w = vec![0.0; d + 1];
            let mut order: Vec<usize> = (0..n).collect();
            for _ in 0..p.epochs {
                order.shuffle(&mut rng);
                for &i in &order {
                    let t = if y[i] == c { 1.0 } else { -1.0 };
                    let m = t * dot(&w, &xs[i]);
                    for wj in &mut w[..d] {
                        *wj -= p.lr * lambda * *wj;
                    }
                    if m < 1.0 {
                        for (wj, &xj) in w[..d].iter_mut().zip(&xs[i]) {
                            *wj += p.lr * p.c * t * xj;
                        }
                        w[d] += p.lr * p.c * t;
                    }
                }
            }
            weights.push(w);
        }
        Ok(LinearSvm { classes, weights, scaler })
    }

    pub fn scores(&self, r: &[f64]) -> Vec<f64> {
        let x = self.scaler.apply(r);
        self.weights.iter().map(|w| dot(w, &x)).collect()
    }

    pub fn predict(&self, r: &[f64]) -> u32 {
        let s = self.scores(r);
        let best = (0..s.len()).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap_or(0);
        self.classes[best]
    }
}

/// `w[..d] . x + w[d]`.
fn dot(w: &[f64], x: &[f64]) -> f64 {
    let d = x.len();
    w[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[d]
}
