//! Cache masking: a defender loop that keeps walking a buffer so victim
//! activity no longer shows in the spy's occupancy measurements.

use serde::{Deserialize, Serialize};

use crate::attacks::{rendering_benchmark_with, BenchmarkConfig, ChannelKind};
use crate::cache::Agent;
use crate::hierarchy::Hierarchy;
use crate::latency::{ms_to_ticks, TICKS_PER_MS};
use crate::mem::{MemError, Region, LINE_SIZE};
use crate::probe::SLC_PROBE_STRIDE;
use crate::sched::{Activity, Schedule};
use crate::stats::mean;

pub const MB: u64 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    /// One buffer at stride 128, walked over and over.
    L2SingleBuffer,
    /// Stride 128, moved to fresh physical pages before every walk.
    L2NewBufferPerIter,
    /// Stride 8192: the walk stays within 1/64 of the L2 sets and spills
    /// straight into the SLC.
    SlcMask,
}

impl MaskKind {
    pub const ALL: [MaskKind; 3] = [MaskKind::L2SingleBuffer, MaskKind::L2NewBufferPerIter, MaskKind::SlcMask];

    pub fn stride(self) -> u64 {
        match self {
            MaskKind::SlcMask => SLC_PROBE_STRIDE,
            _ => LINE_SIZE,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MaskKind::L2SingleBuffer => "l2_single_buffer",
            MaskKind::L2NewBufferPerIter => "l2_new_buffer_per_iter",
            MaskKind::SlcMask => "slc_mask",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskScheme {
    pub kind: MaskKind,
    /// Bytes the walk touches at full scale (lines times 128), whatever the
    /// stride. Scaled down with the hierarchy.
    pub buffer_size: u64,
    pub stride: u64,
    /// Time between walks; `None` means half the spy's sampling period.
    pub period_ms: Option<f64>,
}

impl MaskScheme {
    pub fn new(kind: MaskKind, buffer_size: u64) -> Self {
        MaskScheme { kind, buffer_size, stride: kind.stride(), period_ms: None }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.buffer_size == 0 {
            return Err("mask buffer_size must be positive".into());
        }
        if self.stride != self.kind.stride() {
            return Err(format!("{} needs stride {}, got {}", self.kind.name(), self.kind.stride(), self.stride));
        }
        if self.period_ms.is_some_and(|p| !(p > 0.0)) {
            return Err("mask period must be positive".into());
        }
        Ok(())
    }

    /// Lines per walk in the given hierarchy, at least one.
    pub fn lines(&self, h: &Hierarchy) -> u64 {
        (h.config().scale_lines((self.buffer_size / LINE_SIZE) as f64) as u64).max(1)
    }
}

/// The masking loop as a scheduled agent on the spy's cluster.
pub struct MaskWalker {
    scheme: MaskScheme,
    base: u64,
    lines: u64,
    next: u64,
    period: u64,
    end: Option<u64>,
    pub touches: u64,
    pub walks: u64,
}

impl MaskWalker {
    pub fn new(h: &mut Hierarchy, scheme: MaskScheme, first: u64, period: u64, end: Option<u64>) -> Result<Self, MemError> {
        let lines = scheme.lines(h);
        let base = h.alloc(lines * scheme.stride, 1 << 20, Region::Scattered)?;
        Ok(MaskWalker { scheme, base, lines, next: first, period: period.max(1), end, touches: 0, walks: 0 })
    }

    /// Walk once and return the number of lines touched.
    pub fn walk(&mut self, h: &mut Hierarchy) -> u64 {
        if self.scheme.kind == MaskKind::L2NewBufferPerIter {
            h.remap(self.base, self.lines * self.scheme.stride).expect("mask range is mapped");
        }
        for i in 0..self.lines {
            h.access_virt(Agent::PCluster, self.base + i * self.scheme.stride, false);
        }
        self.touches += self.lines;
        self.walks += 1;
        self.lines
    }
}

impl Activity for MaskWalker {
    fn next_at(&self) -> Option<u64> {
        match self.end {
            Some(e) if self.next >= e => None,
            _ => Some(self.next),
        }
    }

    fn fire(&mut self, h: &mut Hierarchy) {
        self.walk(h);
        self.next += self.period;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskStats {
    pub walks: u64,
    pub touches: u64,
}

/// Run the masking loop alone for `duration_ms` of simulated time.
pub fn run_masking(h: &mut Hierarchy, m: &MaskScheme, duration_ms: f64) -> Result<MaskStats, MemError> {
    let period = ms_to_ticks(m.period_ms.unwrap_or(25.0));
    let start = h.now();
    let end = start + ms_to_ticks(duration_ms);
    let walker = MaskWalker::new(h, *m, start, period, Some(end))?;
    let mut sched = Schedule::new();
    sched.push(Box::new(walker));
    sched.advance_to(h, end);
    let n = (end - start).div_ceil(period);
    Ok(MaskStats { walks: n, touches: n * m.lines(h) })
}

/// Rendering benchmark with an optional masking loop. Walks start a quarter
/// period in and repeat every half period unless the scheme says otherwise,
/// so every sampling interval contains a walk before and after the victim.
pub fn masked_benchmark(h: &Hierarchy, cfg: &BenchmarkConfig, mask: Option<&MaskScheme>) -> Result<(f64, f64), MemError> {
    let mut overhead = 0.0;
    let r = rendering_benchmark_with(h, cfg, |h, t0, p| {
        let Some(m) = mask else { return Ok(Vec::new()) };
        let period = m.period_ms.map_or(p / 2, ms_to_ticks);
        let w = MaskWalker::new(h, *m, t0 + p / 4, period, None)?;
        overhead = w.lines as f64 * TICKS_PER_MS as f64 * 1000.0 / period as f64;
        Ok(vec![Box::new(w) as Box<dyn Activity>])
    })?;
    Ok((r.t_score, overhead))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    /// `None` for the unmitigated baseline.
    pub scheme: Option<MaskKind>,
    /// Full-scale buffer size in bytes; zero for the baseline.
    pub size: u64,
    pub channel: ChannelKind,
    pub t_scores: Vec<f64>,
    pub t_mean: f64,
    /// Masking line touches per simulated second.
    pub overhead: f64,
}

impl GridPoint {
    pub fn csv_header() -> &'static str {
        "scheme,size_bytes,channel,t,overhead"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.4},{:.1}",
            self.scheme.map_or("none", MaskKind::name),
            self.size,
            self.channel.name(),
            self.t_mean,
            self.overhead
        )
    }
}

/// Benchmark t-scores for every (scheme, size, channel), averaged over
/// `seeds`, plus an unmitigated baseline per channel. `base` supplies the
/// placement, duration and noise.
pub fn evaluate_mitigation(
    h: &Hierarchy,
    schemes: &[MaskKind],
    channels: &[ChannelKind],
    sizes: &[u64],
    base: &BenchmarkConfig,
    seeds: &[u64],
) -> Result<Vec<GridPoint>, MemError> {
    let mut out = Vec::new();
    for &channel in channels {
        let point = |mask: Option<MaskScheme>| -> Result<GridPoint, MemError> {
            let mut t_scores = Vec::with_capacity(seeds.len());
            let mut overhead = 0.0;
            for &seed in seeds {
                let cfg = BenchmarkConfig { channel, seed, ..base.clone() };
                let (t, o) = masked_benchmark(h, &cfg, mask.as_ref())?;
                t_scores.push(t);
                overhead = o;
            }
            Ok(GridPoint {
                scheme: mask.map(|m| m.kind),
                size: mask.map_or(0, |m| m.buffer_size),
                channel,
                t_mean: mean(&t_scores),
                t_scores,
                overhead,
            })
        };
        out.push(point(None)?);
        for &kind in schemes {
            for &size in sizes {
                out.push(point(Some(MaskScheme::new(kind, size)))?);
            }
        }
    }
    Ok(out)
}

/// Smallest size at which the mean t-score drops below `t_crit`, if any.
pub fn threshold(grid: &[GridPoint], kind: MaskKind, channel: ChannelKind, t_crit: f64) -> Option<u64> {
    grid.iter()
        .filter(|p| p.scheme == Some(kind) && p.channel == channel && p.t_mean < t_crit)
        .map(|p| p.size)
        .min()
}
