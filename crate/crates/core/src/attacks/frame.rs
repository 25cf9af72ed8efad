//! Frame monitoring with dual Prime&Reload.
//!
//! Buffer A is primed, then buffer B one window later, and both are reloaded
//! together. GPU traffic after B's prime evicts lines of both buffers alike,
//! so the difference in reload misses counts evictions inside the window.
//! Sliding the window across repeated identical frames traces the frame's
//! traffic, and its 28 peaks are the flash points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{noise_activity, SPY};
use crate::hierarchy::{splitmix, Hierarchy};
use crate::latency::HitClass;
use crate::mem::{MemError, Region, LINE_SIZE};
use crate::probe::{profile_with, Pattern, ProbeBuffer};
use crate::sched::Schedule;
use crate::stats::pearson;
use crate::victims::{Arena, CompressionModel, FrameRenderer, FrameSchedule, NoiseSpec, BANDS};

#[derive(Debug, Error)]
pub enum FlashError {
    #[error("expected {BANDS} flash points, found {found}")]
    FlashExtractionError { found: usize },
    #[error(transparent)]
    Mem(#[from] MemError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeakMode {
    /// Local maxima at least a band slot apart.
    LocalMax,
    /// Read the smoothed differential at the known epoch offsets.
    FixedOffsets,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameProbeConfig {
    pub stride: u64,
    /// Lines per buffer beyond what the L2 holds at this stride; these are
    /// left in the SLC after a prime. Not rescaled with the hierarchy: the
    /// limit is how many lines a prime can touch well inside one window.
    pub slc_lines: usize,
    /// Cap on `slc_lines` as a share of the SLC, for small hierarchies.
    pub max_slc_share: f64,
    /// Observation window as a fraction of the frame period.
    pub window_frac: f64,
    pub positions: usize,
    /// Measurements averaged per window position.
    pub repeats: usize,
    pub peak_mode: PeakMode,
    /// Frames of discarded measurements before recording.
    pub warmup_frames: usize,
    /// Flash values average the differential over this many positions on
    /// either side of the peak.
    pub value_halfwidth: usize,
}

impl Default for FrameProbeConfig {
    fn default() -> Self {
        FrameProbeConfig {
            stride: 8192,
            slc_lines: 2600,
            max_slc_share: 0.25,
            window_frac: 1.0 / 40.0,
            positions: 400,
            repeats: 1,
            peak_mode: PeakMode::LocalMax,
            warmup_frames: 4,
            value_halfwidth: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlashVector {
    /// One value per epoch, in frame order.
    pub values: Vec<f64>,
    /// Window position of each value.
    pub positions: Vec<usize>,
    /// Mean miss differential per window position; zero where nothing was
    /// measured.
    pub differential: Vec<f64>,
    /// Lightly smoothed differential used for peak picking.
    pub smoothed: Vec<f64>,
}

struct Pair {
    a: ProbeBuffer,
    b: ProbeBuffer,
    /// When the last measurement finished.
    last: u64,
}

/// Lines of a stride-`stride` buffer that the P-cluster L2 can hold.
pub fn l2_reach(h: &Hierarchy, stride: u64) -> usize {
    let l2 = &h.config().p_l2;
    let step = (stride / LINE_SIZE).max(1) as usize;
    (l2.lines() / step).max(l2.ways)
}

impl Pair {
    fn alloc(h: &mut Hierarchy, cfg: &FrameProbeConfig) -> Result<Self, MemError> {
        let cap = (cfg.max_slc_share * h.config().slc.lines() as f64) as usize;
        let n = l2_reach(h, cfg.stride) + cfg.slc_lines.min(cap);
        Ok(Pair {
            a: ProbeBuffer::alloc(h, cfg.stride, n, Region::Direct)?,
            b: ProbeBuffer::alloc(h, cfg.stride, n, Region::Direct)?,
            last: 0,
        })
    }

    fn lead(&self, x: u64, prime_est: u64) -> u64 {
        if x.saturating_sub(self.last) > 2 * LEAD * prime_est {
            LONG_LEAD
        } else {
            LEAD
        }
    }

    /// Reload both buffers line by line, returning each one's misses.
    fn reload(&self, h: &mut Hierarchy, sched: &mut Schedule) -> (u64, u64) {
        let (mut ma, mut mb) = (0, 0);
        for i in 0..self.a.n_lines {
            sched.run_due(h);
            let x = h.access_virt(SPY, self.a.line_vaddr(i), true);
            ma += (h.classify(x.latency) == HitClass::Miss) as u64;
            sched.run_due(h);
            let y = h.access_virt(SPY, self.b.line_vaddr(i), true);
            mb += (h.classify(y.latency) == HitClass::Miss) as u64;
        }
        (ma, mb)
    }
}

/// One dual Prime&Reload with A's prime ending near `x`. Returns the miss
/// differential and the A prime duration.
///
/// Both buffers are walked first, alternately, until a round misses almost
/// nothing. After a gap most of their lines are gone, and refilling them
/// evicts lines of the other buffer; settling that before the timed prime
/// keeps it out of the differential.
fn measure_at(h: &mut Hierarchy, sched: &mut Schedule, p: &mut Pair, x: u64, w: u64, prime_est: u64) -> (f64, u64) {
    let lead = p.lead(x, prime_est);
    sched.advance_to(h, x.saturating_sub(lead * prime_est).max(h.now()));
    let settled = (p.a.n_lines as u64 / 100).max(2);
    loop {
        let mb = profile_with(h, sched, &mut p.b, SPY, Pattern::Sequential, false).counts.misses;
        let ma = profile_with(h, sched, &mut p.a, SPY, Pattern::Sequential, false).counts.misses;
        if ma + mb <= settled || h.now() + 3 * prime_est > x {
            break;
        }
    }
    sched.advance_to(h, x.saturating_sub(prime_est).max(h.now()));
    let t = h.now();
    profile_with(h, sched, &mut p.a, SPY, Pattern::Sequential, false);
    let p1 = h.now();
    let prime_a = p1 - t;
    sched.advance_to(h, (p1 + w).saturating_sub(prime_a).max(h.now()));
    profile_with(h, sched, &mut p.b, SPY, Pattern::Sequential, false);
    let (ma, mb) = p.reload(h, sched);
    p.last = h.now();
    (ma as f64 - mb as f64, prime_a)
}

/// Lead time of a measurement before its window, in prime durations.
const LEAD: u64 = 4;
/// Lead after an idle gap, leaving room for several settling rounds.
const LONG_LEAD: u64 = 10;

/// Slide the observation window across the frame. The caller's schedule
/// must render the same frame every period from the next Vsync on.
pub fn measure_frame(h: &mut Hierarchy, sched: &mut Schedule, frame: &FrameSchedule, cfg: &FrameProbeConfig) -> Result<FlashVector, FlashError> {
    let mut pair = Pair::alloc(h, cfg)?;
    let period = frame.period();
    let n = cfg.positions;
    let step = period / n as u64;
    let w = (cfg.window_frac * period as f64) as u64;
    // One untimed round trip to learn the prime cost and settle the buffers.
    let t = h.now();
    profile_with(h, sched, &mut pair.a, SPY, Pattern::Sequential, false);
    let mut prime_est = h.now() - t;
    profile_with(h, sched, &mut pair.b, SPY, Pattern::Sequential, false);
    pair.reload(h, sched);
    // A measurement spans the A prime, the window, the B prime overlap and
    // the reload; pack as many as fit into each frame.
    // The response to an epoch peaks with the epoch mid-window.
    let top = (w / 2 / step) as usize;
    let fixed: Vec<usize> = frame.offsets.iter().map(|&o| ((o / step) as usize + n - top) % n).collect();
    let wanted: Vec<usize> = match cfg.peak_mode {
        PeakMode::LocalMax => (0..n).collect(),
        PeakMode::FixedOffsets => {
            let k = cfg.value_halfwidth as isize;
            let mut v: Vec<usize> =
                fixed.iter().flat_map(|&i| (-k..=k).map(move |d| (i as isize + d).rem_euclid(n as isize) as usize)).collect();
            v.sort_unstable();
            v.dedup();
            v
        }
    };
    let mut sum = vec![0.0; n];
    let mut pending: Vec<usize> = (0..cfg.repeats).flat_map(|_| wanted.iter().copied()).collect();
    pending.sort_unstable();
    let mut vsync = frame.next_vsync(h.now());
    for _ in 0..cfg.warmup_frames {
        let mut i = 0;
        while i < n {
            let x = vsync + i as u64 * step;
            if x >= h.now() + pair.lead(x, prime_est) * prime_est {
                let (_, pa) = measure_at(h, sched, &mut pair, x, w, prime_est);
                prime_est = (prime_est * 3 + pa) / 4;
            }
            i += 1;
        }
        vsync = frame.next_vsync(h.now());
    }
    while !pending.is_empty() {
        let mut rest = Vec::with_capacity(pending.len());
        for &i in &pending {
            let x = vsync + i as u64 * step;
            if x >= h.now() + pair.lead(x, prime_est) * prime_est {
                let (d, pa) = measure_at(h, sched, &mut pair, x, w, prime_est);
                sum[i] += d;
                prime_est = (prime_est * 3 + pa) / 4;
            } else {
                rest.push(i);
            }
        }
        pending = rest;
        vsync += period;
        if vsync < h.now() {
            vsync = frame.next_vsync(h.now());
        }
    }
    let differential: Vec<f64> = sum.iter().map(|s| s / cfg.repeats as f64).collect();
    let smoothed = circular_mean(&differential, 1);
    let positions: Vec<usize> = match cfg.peak_mode {
        PeakMode::FixedOffsets => fixed,
        PeakMode::LocalMax => {
            let p = pick_peaks(&smoothed, 0.75 * n as f64 / BANDS as f64);
            if p.len() != BANDS {
                return Err(FlashError::FlashExtractionError { found: p.len() });
            }
            p
        }
    };
    let wide = circular_mean(&differential, cfg.value_halfwidth);
    let values = positions.iter().map(|&i| wide[i]).collect();
    Ok(FlashVector { values, positions, differential, smoothed })
}

/// Mean over `[i - k, i + k]`, wrapping around the frame.
pub fn circular_mean(v: &[f64], k: usize) -> Vec<f64> {
    let n = v.len() as isize;
    let k = k as isize;
    (0..n).map(|i| (-k..=k).map(|d| v[(i + d).rem_euclid(n) as usize]).sum::<f64>() / (2 * k + 1) as f64).collect()
}

/// Local maxima over a +-2 neighbourhood, kept greedily from the highest
/// down while at least `min_sep` apart. Returned in frame order.
pub fn pick_peaks(s: &[f64], min_sep: f64) -> Vec<usize> {
    let n = s.len();
    let dist = |a: usize, b: usize| {
        let d = a.abs_diff(b);
        d.min(n - d) as f64
    };
    let mut cand = local_maxima(s, 4.0);
    cand.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for c in cand {
        if kept.iter().all(|&k| dist(k, c) >= min_sep) {
            kept.push(c);
        }
    }
    kept.sort_unstable();
    kept
}

/// Render `epoch_traffic` every frame on a clone of `h`, with background
/// noise, and measure it.
pub fn observe_frames(
    h: &Hierarchy,
    epoch_traffic: &[u64],
    frame: &FrameSchedule,
    cfg: &FrameProbeConfig,
    noise: NoiseSpec,
    seed: u64,
) -> Result<FlashVector, FlashError> {
    let mut h = h.clone();
    h.reseed(seed);
    let mut arena = Arena::new(&mut h)?;
    // A running system keeps the SLC full; without this, fills land in
    // invalid ways and evict nothing.
    let fill = 2 * h.config().slc.lines() as u64;
    arena.load(&mut h, crate::cache::Agent::Gpu, fill);
    let v0 = frame.next_vsync(h.now());
    let mut sched = Schedule::new();
    sched.push(Box::new(FrameRenderer::new(epoch_traffic.to_vec(), frame.clone(), arena, v0, None, splitmix(seed ^ 0xf7a3e))));
    if let Some(a) = noise_activity(&mut h, noise, v0, seed)? {
        sched.push(a);
    }
    measure_frame(&mut h, &mut sched, frame, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFidelity {
    /// GPU lines per epoch.
    pub truth: Vec<u64>,
    pub flash: FlashVector,
    /// Pearson r between flash values and truth, first epoch left out.
    pub r: f64,
}

/// Measure a frame whose bands have random content and compare the flash
/// values with the traffic actually rendered.
pub fn frame_fidelity(h: &Hierarchy, frame: &FrameSchedule, cfg: &FrameProbeConfig, noise: NoiseSpec, seed: u64) -> Result<FrameFidelity, FlashError> {
    let model = CompressionModel::scaled(h.config());
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ 0xf1de));
    let bands: Vec<u64> = (0..BANDS).map(|_| model.traffic(rng.random_range(0.0..1.0))).collect();
    let truth = model.epoch_traffic_from(&bands);
    let flash = observe_frames(h, &truth, frame, cfg, noise, seed)?;
    let t: Vec<f64> = truth[1..].iter().map(|&x| x as f64).collect();
    let r = pearson(&flash.values[1..], &t);
    Ok(FrameFidelity { truth, flash, r })
}

/// Indices that hold the maximum of the circular neighbourhood of half-width
/// `sep / 2`; the first index wins ties.
pub fn local_maxima(s: &[f64], sep: f64) -> Vec<usize> {
    let n = s.len() as isize;
    let half = (sep / 2.0).floor() as isize;
    (0..n)
        .filter(|&i| {
            (-half..=half).filter(|&d| d != 0).all(|d| {
                let j = (i + d).rem_euclid(n);
                let (a, b) = (s[i as usize], s[j as usize]);
                a > b || (a == b && (j > i || d > 0 && j < i))
            })
        })
        .map(|i| i as usize)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::HierarchyConfig;

    #[test]
    fn local_maxima_on_a_comb() {
        let mut s = vec![0.0; 100];
        for k in 0..10 {
            s[k * 10 + 3] = 5.0 + k as f64;
            s[k * 10 + 4] = 1.0;
        }
        assert_eq!(local_maxima(&s, 10.0), (0..10).map(|k| k * 10 + 3).collect::<Vec<_>>());
    }

    #[test]
    fn plateau_gives_one_peak() {
        let s = vec![0.0, 2.0, 2.0, 2.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(local_maxima(&s, 4.0), vec![1]);
    }

    #[test]
    fn circular_mean_wraps() {
        let v = [3.0, 0.0, 0.0, 0.0];
        assert_eq!(circular_mean(&v, 1), vec![1.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn pick_peaks_reports_too_few() {
        let mut s = vec![0.0; 400];
        for k in 0..20 {
            s[k * 20 + 5] = 10.0;
        }
        assert_eq!(pick_peaks(&s, 10.0).len(), 20);
    }

    fn uniform(h: &Hierarchy, lines: u64) -> FlashVector {
        let c = crate::victims::CompressionModel::scaled(h.config());
        let traffic = c.epoch_traffic_from(&vec![lines; BANDS]);
        let cfg = FrameProbeConfig { peak_mode: PeakMode::FixedOffsets, ..Default::default() };
        observe_frames(h, &traffic, &FrameSchedule::default(), &cfg, NoiseSpec::OFF, 0).unwrap()
    }

    #[test]
    fn uniform_frame_reads_flat_and_scales_with_traffic() {
        let h = Hierarchy::new(HierarchyConfig::scaled(16), 1);
        let c = crate::victims::CompressionModel::scaled(h.config());
        let lo = uniform(&h, c.traffic(0.0));
        let hi = uniform(&h, c.traffic(1.0));
        let rest = |f: &FlashVector| f.values[1..].to_vec();
        let (m_lo, m_hi) = (crate::stats::mean(&rest(&lo)), crate::stats::mean(&rest(&hi)));
        assert!(m_hi > 3.0 * m_lo, "{m_lo} {m_hi}");
        for v in rest(&hi) {
            assert!((v - m_hi).abs() < 0.25 * m_hi, "{v} vs {m_hi}");
        }
        // The first epoch carries the extra per-frame work.
        assert!(hi.values[0] > 1.2 * m_hi);
    }
}
