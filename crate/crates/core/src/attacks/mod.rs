//! Occupancy channels and the attacks built on them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cache::Agent;
use crate::hierarchy::{splitmix, Hierarchy, HierarchyConfig};
use crate::latency::{ms_to_ticks, HitClass};
use crate::mem::{MemError, Region, LINE_SIZE};
use crate::probe::{profile, profile_with, Pattern, ProbeBuffer, SLC_PROBE_LINES, SLC_PROBE_STRIDE};
use crate::sched::{Activity, Schedule};
use crate::stats::{linear_fit, mean, welch_t, LinearFit, StatsError};
use crate::victims::{victim_load, Arena, BackgroundNoise, LoadSchedule, NoiseSpec, Placement};

pub mod fingerprint;
pub mod frame;
pub mod pixel;
pub mod snoop;
pub mod svm;

/// The spy always runs on the P-cluster.
pub const SPY: Agent = Agent::PCluster;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    /// Stride 128, sized to the L2.
    L2Occupancy,
    /// Stride 128, 300,000 lines at full scale.
    TotalOccupancy,
    /// Stride 8192, 80,000 lines at full scale.
    SlcOccupancy,
}

pub const TOTAL_CHANNEL_LINES: usize = 300_000;

impl ChannelKind {
    pub fn stride(self) -> u64 {
        match self {
            ChannelKind::SlcOccupancy => SLC_PROBE_STRIDE,
            _ => LINE_SIZE,
        }
    }

    pub fn lines(self, cfg: &HierarchyConfig) -> usize {
        match self {
            ChannelKind::L2Occupancy => cfg.p_l2.lines(),
            ChannelKind::TotalOccupancy => cfg.scale_lines(TOTAL_CHANNEL_LINES as f64),
            ChannelKind::SlcOccupancy => cfg.scale_lines(SLC_PROBE_LINES as f64),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ChannelKind::L2Occupancy => "l2",
            ChannelKind::TotalOccupancy => "total",
            ChannelKind::SlcOccupancy => "slc",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Channel {
    pub kind: ChannelKind,
    pub period: u64,
    pub probe: ProbeBuffer,
    warmed: bool,
}

impl Channel {
    pub fn new(h: &mut Hierarchy, kind: ChannelKind, period_ms: f64) -> Result<Self, MemError> {
        let probe = ProbeBuffer::alloc(h, kind.stride(), kind.lines(h.config()), Region::Direct)?;
        Ok(Channel { kind, period: ms_to_ticks(period_ms), probe, warmed: false })
    }

    /// Two alternated passes to bring the buffer to steady state.
    pub fn warm(&mut self, h: &mut Hierarchy) {
        for _ in 0..2 {
            profile(h, &mut self.probe, SPY, Pattern::Alternated);
        }
        self.warmed = true;
    }

    /// First sampling boundary strictly after `t`.
    pub fn next_boundary(&self, t: u64) -> u64 {
        (t / self.period + 1) * self.period
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub kind: ChannelKind,
    pub period: u64,
    pub start: u64,
    /// Profile time per sample, clipped to the period.
    pub samples: Vec<f64>,
    pub misses: Vec<u64>,
    pub saturated: Vec<bool>,
}

/// Profile once per period from `start` on while scheduled activities run.
pub fn collect_trace(h: &mut Hierarchy, ch: &mut Channel, sched: &mut Schedule, start: u64, n_samples: usize) -> Trace {
    if !ch.warmed {
        ch.warm(h);
    }
    let mut t = Trace {
        kind: ch.kind,
        period: ch.period,
        start,
        samples: Vec::with_capacity(n_samples),
        misses: Vec::with_capacity(n_samples),
        saturated: Vec::with_capacity(n_samples),
    };
    for k in 0..n_samples as u64 {
        sched.advance_to(h, start + k * ch.period);
        let p = profile_with(h, sched, &mut ch.probe, SPY, Pattern::Alternated, false);
        let sat = p.total_time > ch.period;
        t.samples.push(p.total_time.min(ch.period) as f64);
        t.misses.push(p.counts.misses);
        t.saturated.push(sat);
    }
    t
}

/// Background noise on the E-cluster with its own arena, or nothing.
pub fn noise_activity(h: &mut Hierarchy, spec: NoiseSpec, start: u64, seed: u64) -> Result<Option<Box<dyn Activity>>, MemError> {
    if spec.is_off() {
        return Ok(None);
    }
    let arena = Arena::new(h)?;
    let scale = h.config().scale_divisor();
    Ok(BackgroundNoise::new(spec, Agent::ECluster, scale, start, seed, arena).map(|n| Box::new(n) as Box<dyn Activity>))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopeResult {
    pub kind: ChannelKind,
    pub placement: Placement,
    /// `(victim lines, mean profile time)` per load level.
    pub means: Vec<(u64, f64)>,
    /// Fit over the per-level means.
    pub mean_fit: LinearFit,
    /// Fit over every raw sample.
    pub raw_fit: LinearFit,
}

/// Spy profile time against the number of lines a victim loads between
/// profiles.
pub fn channel_scope(h: &Hierarchy, kind: ChannelKind, placement: Placement, loads: &[u64], reps: usize) -> Result<ScopeResult, MemError> {
    let mut h = h.clone();
    let mut ch = Channel::new(&mut h, kind, 50.0)?;
    let mut arena = Arena::new(&mut h)?;
    ch.warm(&mut h);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut sums = vec![0.0; loads.len()];
    for _ in 0..reps {
        for (i, &v) in loads.iter().enumerate() {
            victim_load(&mut h, &mut arena, placement, v);
            let p = profile(&mut h, &mut ch.probe, SPY, Pattern::Alternated);
            xs.push(v as f64);
            ys.push(p.total_time as f64);
            sums[i] += p.total_time as f64;
        }
    }
    let means: Vec<(u64, f64)> = loads.iter().zip(&sums).map(|(&v, s)| (v, s / reps as f64)).collect();
    let mx: Vec<f64> = means.iter().map(|m| m.0 as f64).collect();
    let my: Vec<f64> = means.iter().map(|m| m.1).collect();
    Ok(ScopeResult { kind, placement, means, mean_fit: linear_fit(&mx, &my), raw_fit: linear_fit(&xs, &ys) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub channel: ChannelKind,
    pub placement: Placement,
    pub duration_ms: f64,
    pub period_ms: f64,
    /// Image size in full-scale lines.
    pub image_lines: f64,
    pub noise: NoiseSpec,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            channel: ChannelKind::SlcOccupancy,
            placement: Placement::Gpu,
            duration_ms: 20_000.0,
            period_ms: 50.0,
            image_lines: 16_384.0,
            noise: NoiseSpec::default(),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub trace: Trace,
    pub bits: Vec<bool>,
    pub t_score: f64,
}

/// The victim flips a coin each interval and loads an image on heads; the
/// spy's samples are split by the coin and compared.
pub fn rendering_benchmark(h: &Hierarchy, cfg: &BenchmarkConfig) -> Result<BenchmarkResult, MemError> {
    rendering_benchmark_with(h, cfg, |_, _, _| Ok(Vec::new()))
}

/// [`rendering_benchmark`] with extra activities built once the sampling
/// start and period are known (used for masking).
pub fn rendering_benchmark_with<F>(h: &Hierarchy, cfg: &BenchmarkConfig, extra: F) -> Result<BenchmarkResult, MemError>
where
    F: FnOnce(&mut Hierarchy, u64, u64) -> Result<Vec<Box<dyn Activity>>, MemError>,
{
    let mut h = h.clone();
    let mut ch = Channel::new(&mut h, cfg.channel, cfg.period_ms)?;
    let n = (cfg.duration_ms / cfg.period_ms).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(cfg.seed ^ 0xbe7c));
    let bits: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    let image = h.config().scale_lines(cfg.image_lines) as u64;
    let arena = Arena::new(&mut h)?;
    ch.warm(&mut h);
    let t0 = ch.next_boundary(h.now());
    let p = ch.period;
    let events = bits.iter().enumerate().filter(|(_, &b)| b).map(|(k, _)| (t0 + k as u64 * p + p / 2, image)).collect();
    let mut sched = Schedule::new();
    sched.push(Box::new(LoadSchedule::new(cfg.placement, events, arena)));
    if let Some(a) = noise_activity(&mut h, cfg.noise, t0, cfg.seed)? {
        sched.push(a);
    }
    for a in extra(&mut h, t0, p)? {
        sched.push(a);
    }
    let trace = collect_trace(&mut h, &mut ch, &mut sched, t0, n + 1);
    // Sample k + 1 follows the victim's interval k.
    let (mut ones, mut zeros) = (Vec::new(), Vec::new());
    for (k, &b) in bits.iter().enumerate() {
        if b { &mut ones } else { &mut zeros }.push(trace.samples[k + 1]);
    }
    let t_score = match welch_t(&ones, &zeros) {
        Ok(t) => t,
        Err(StatsError::TooFewSamples { .. }) => 0.0,
    };
    Ok(BenchmarkResult { trace, bits, t_score })
}

/// Misses counted by timing, as the spy sees them.
pub fn timed_misses(h: &Hierarchy, lat: &[u32]) -> u64 {
    lat.iter().filter(|&&t| h.classify(t) == HitClass::Miss).count() as u64
}

/// Mean of a slice of u64 as f64.
pub fn mean_u64(v: &[u64]) -> f64 {
    mean(&v.iter().map(|&x| x as f64).collect::<Vec<_>>())
}
