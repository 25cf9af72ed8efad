//! Access latencies, noise and the three-way hit classifier.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Logical clock rate.
pub const TICKS_PER_SEC: u64 = 3_000_000_000;
pub const TICKS_PER_MS: u64 = TICKS_PER_SEC / 1000;

pub fn ms_to_ticks(ms: f64) -> u64 {
    (ms * TICKS_PER_MS as f64).round() as u64
}

pub fn ticks_to_ms(t: u64) -> f64 {
    t as f64 / TICKS_PER_MS as f64
}

/// The level that serviced an access.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    L1,
    L2,
    Slc,
    GpuCache,
    Mem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HitClass {
    LocalHit,
    SlcHit,
    Miss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyModel {
    pub l1_hit: u32,
    pub l2_hit: u32,
    pub gpu_hit: u32,
    pub slc_hit: u32,
    pub mem: u32,
    pub noise_sigma: f64,
    pub local_threshold: u32,
    pub slc_threshold: u32,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel {
            l1_hit: 12,
            l2_hit: 60,
            gpu_hit: 60,
            slc_hit: 220,
            mem: 430,
            noise_sigma: 8.0,
            local_threshold: 160,
            slc_threshold: 300,
        }
    }
}

impl LatencyModel {
    pub fn noiseless() -> Self {
        LatencyModel { noise_sigma: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        let ordered = self.l1_hit < self.l2_hit
            && self.l2_hit < self.local_threshold
            && self.local_threshold < self.slc_hit
            && self.slc_hit < self.slc_threshold
            && self.slc_threshold < self.mem;
        if !ordered {
            return Err("latencies must satisfy l1 < l2 < local threshold < slc < slc threshold < mem".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err("noise_sigma must be finite and non-negative".into());
        }
        Ok(())
    }

    pub fn base(&self, level: Level) -> u32 {
        match level {
            Level::L1 => self.l1_hit,
            Level::L2 => self.l2_hit,
            Level::GpuCache => self.gpu_hit,
            Level::Slc => self.slc_hit,
            Level::Mem => self.mem,
        }
    }

    /// Base latency plus Gaussian noise truncated at three sigma.
    #[inline]
    pub fn draw<R: Rng>(&self, level: Level, rng: &mut R) -> u32 {
        let base = self.base(level);
        if self.noise_sigma == 0.0 {
            return base;
        }
        let z = loop {
            let z: f64 = rng.sample(StandardNormal);
            if z.abs() <= 3.0 {
                break z;
            }
        };
        (base as f64 + z * self.noise_sigma).round().max(1.0) as u32
    }

    pub fn classify(&self, t: u32) -> HitClass {
        if t < self.local_threshold {
            HitClass::LocalHit
        } else if t < self.slc_threshold {
            HitClass::SlcHit
        } else {
            HitClass::Miss
        }
    }
}

/// Free-function form of [`LatencyModel::classify`].
pub fn classify_latency(m: &LatencyModel, t: u32) -> HitClass {
    m.classify(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn classify_examples() {
        let m = LatencyModel::default();
        assert_eq!(classify_latency(&m, 12), HitClass::LocalHit);
        assert_eq!(classify_latency(&m, 220), HitClass::SlcHit);
        assert_eq!(classify_latency(&m, 430), HitClass::Miss);
        assert_eq!(classify_latency(&m, 160), HitClass::SlcHit);
        assert_eq!(classify_latency(&m, 300), HitClass::Miss);
    }

    #[test]
    fn noiseless_draws_are_exact() {
        let m = LatencyModel::noiseless();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(m.draw(Level::Slc, &mut rng), 220);
        assert_eq!(m.draw(Level::Mem, &mut rng), 430);
    }

    #[test]
    fn noise_is_truncated() {
        let m = LatencyModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20_000 {
            let t = m.draw(Level::Slc, &mut rng);
            assert!((196..=244).contains(&t));
        }
    }

    #[test]
    fn validation_rejects_misordered() {
        assert!(LatencyModel::default().validate().is_ok());
        let bad = LatencyModel { slc_hit: 100, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
