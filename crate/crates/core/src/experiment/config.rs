//! Experiment configuration: one flat TOML table. Fields left out take the
//! named experiment's defaults when the config is resolved.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{find, ExperimentError};
use crate::attacks::frame::PeakMode;
use crate::attacks::pixel::PixelMode;
use crate::attacks::ChannelKind;
use crate::hierarchy::{HierarchyConfig, SlcPolicy};
use crate::latency::LatencyModel;
use crate::mitigation::{MaskKind, MaskScheme};
use crate::probe::Pattern;
use crate::victims::{NoiseSpec, Placement};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub seed: Option<u64>,
    /// Every cache capacity is divided by this power of two.
    pub scale: Option<u64>,
    pub slc_policy: Option<SlcPolicy>,
    /// Standard deviation of the access latency noise, in ticks.
    pub latency_sigma: Option<f64>,
    pub channel: Option<ChannelKind>,
    pub placement: Option<Placement>,
    pub pattern: Option<Pattern>,
    pub duration_ms: Option<f64>,
    pub period_ms: Option<f64>,
    pub noise: Option<NoiseSpec>,
    /// Masking loop running alongside a benchmark.
    pub mask: Option<MaskScheme>,
    /// Independent repetitions, each with its own seed.
    pub repetitions: Option<usize>,
    /// Sweep points; their unit depends on the experiment.
    pub sizes: Option<Vec<f64>>,
    pub mask_kinds: Option<Vec<MaskKind>>,
    pub sites: Option<u32>,
    pub traces_per_site: Option<usize>,
    pub site_id: Option<u32>,
    pub pixel_mode: Option<PixelMode>,
    /// Fixed content to display; random content when absent.
    pub digits: Option<String>,
    pub digit_count: Option<usize>,
    pub narrow_height: Option<usize>,
    pub trials: Option<usize>,
    /// Measurements averaged per window position when watching frames.
    pub frame_repeats: Option<usize>,
    pub peak_mode: Option<PeakMode>,
    /// Not part of the config hash.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
}

macro_rules! fill {
    ($self:ident, $d:ident; $($f:ident),*) => {
        $( if $self.$f.is_none() { $self.$f = $d.$f.clone(); } )*
    };
}

impl ExperimentConfig {
    pub fn named(experiment: &str) -> Self {
        ExperimentConfig { experiment: experiment.to_string(), ..Default::default() }
    }

    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    /// Fill unset fields from the experiment's defaults and validate.
    pub fn resolve(&self) -> Result<Self, ExperimentError> {
        let info = find(&self.experiment)?;
        let d = (info.defaults)();
        let mut c = self.clone();
        fill!(c, d; seed, scale, slc_policy, latency_sigma, channel, placement, pattern, duration_ms, period_ms, noise,
              mask, repetitions, sizes, mask_kinds, sites, traces_per_site, site_id, pixel_mode, digits,
              digit_count, narrow_height, trials, frame_repeats,
              peak_mode);
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if let Some(s) = self.scale {
            if !s.is_power_of_two() || s > 64 {
                return bad(format!("scale must be a power of two up to 64, got {s}"));
            }
        }
        if self.latency_sigma.is_some_and(|s| !(s >= 0.0)) {
            return bad("latency_sigma must be non-negative".into());
        }
        for (name, v) in [("duration_ms", self.duration_ms), ("period_ms", self.period_ms)] {
            if v.is_some_and(|v| !(v > 0.0)) {
                return bad(format!("{name} must be positive"));
            }
        }
        if let (Some(d), Some(p)) = (self.duration_ms, self.period_ms) {
            if p > d {
                return bad("period_ms exceeds duration_ms".into());
            }
        }
        if let Some(n) = self.noise {
            if !(n.rate_per_ms >= 0.0 && n.mean_lines >= 0.0) {
                return bad("noise rate and size must be non-negative".into());
            }
        }
        if let Some(m) = &self.mask {
            m.validate().map_err(ExperimentError::Config)?;
        }
        for (name, v) in [("repetitions", self.repetitions), ("trials", self.trials), ("traces_per_site", self.traces_per_site)] {
            if v == Some(0) {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.sites.is_some_and(|s| s < 2) {
            return bad("sites must be at least 2".into());
        }
        if let Some(d) = &self.digits {
            if d.is_empty() || !d.bytes().all(|b| b.is_ascii_digit()) {
                return bad(format!("digits must be a non-empty string of 0-9, got {d:?}"));
            }
        }
        if self.digit_count.is_some_and(|n| !(1..=3).contains(&n)) {
            return bad("digit_count must be 1, 2 or 3".into());
        }
        if self.sizes.as_ref().is_some_and(|s| s.iter().any(|x| !(*x >= 0.0))) {
            return bad("sizes must be non-negative".into());
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, without the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn hierarchy(&self) -> HierarchyConfig {
        let mut h = HierarchyConfig::scaled(self.scale.unwrap_or(1));
        h.slc_cpu_policy = self.slc_policy.unwrap_or_default();
        if let Some(s) = self.latency_sigma {
            h.latency = LatencyModel { noise_sigma: s, ..h.latency };
        }
        h
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_field_is_a_config_error() {
        let e = ExperimentConfig::from_toml("experiment = \"latency\"\nbogus = 1\n").unwrap_err();
        assert!(matches!(e, ExperimentError::Config(ref m) if m.contains("bogus")), "{e}");
    }

    #[test]
    fn unknown_experiment_is_a_config_error() {
        assert!(matches!(ExperimentConfig::named("nope").resolve(), Err(ExperimentError::Config(_))));
    }

    #[test]
    fn resolve_fills_defaults_and_keeps_overrides() {
        let c = ExperimentConfig::from_toml("experiment = \"benchmark\"\nseed = 7\n").unwrap().resolve().unwrap();
        assert_eq!(c.seed, Some(7));
        assert_eq!(c.duration_ms, Some(20_000.0));
        assert_eq!(c.period_ms, Some(50.0));
    }

    #[test]
    fn hash_ignores_out_dir_only() {
        let a = ExperimentConfig::named("latency").resolve().unwrap();
        let b = ExperimentConfig { out_dir: Some("x".into()), ..a.clone() };
        let c = ExperimentConfig { seed: Some(99), ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn bad_values_are_rejected() {
        for t in ["scale = 3", "period_ms = 0", "digits = \"3a\"", "digit_count = 4", "repetitions = 0"] {
            let c = ExperimentConfig::from_toml(&format!("experiment = \"benchmark\"\n{t}\n")).unwrap();
            assert!(c.resolve().is_err(), "{t}");
        }
    }
}
