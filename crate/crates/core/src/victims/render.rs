//! GPU frame rendering with content-dependent traffic, and the SVG-filter
//! pixel workload.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::screen::{Screen, BANDS};
use super::Arena;
use crate::cache::Agent;
use crate::hierarchy::{Hierarchy, HierarchyConfig};
use crate::latency::TICKS_PER_SEC;
use crate::sched::Activity;

/// GPU traffic per band as a function of how many channel values are zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressionModel {
    /// Lines per band for an all-zero band.
    pub t_min: f64,
    /// Lines per band when no channel value is zero.
    pub t_max: f64,
    /// Multiplier on the first epoch of every frame.
    pub first_epoch_factor: f64,
}

impl Default for CompressionModel {
    fn default() -> Self {
        CompressionModel { t_min: 400.0, t_max: 2400.0, first_epoch_factor: 1.5 }
    }
}

impl CompressionModel {
    /// Defaults rescaled to a smaller hierarchy.
    pub fn scaled(cfg: &HierarchyConfig) -> Self {
        let d = cfg.scale_divisor();
        let m = Self::default();
        CompressionModel { t_min: m.t_min / d, t_max: m.t_max / d, ..m }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.t_min >= 0.0 && self.t_min <= self.t_max && self.first_epoch_factor >= 1.0) {
            return Err("compression model needs 0 ≤ t_min ≤ t_max and first_epoch_factor ≥ 1".into());
        }
        Ok(())
    }

    /// Unrounded traffic for a band with the given nonzero-channel fraction.
    pub fn traffic_f(&self, nonzero_fraction: f64) -> f64 {
        self.t_min + (self.t_max - self.t_min) * nonzero_fraction.clamp(0.0, 1.0)
    }

    pub fn traffic(&self, nonzero_fraction: f64) -> u64 {
        self.traffic_f(nonzero_fraction).round() as u64
    }

    pub fn band_traffic(&self, s: &Screen) -> Vec<u64> {
        s.nonzero_channel_fractions().into_iter().map(|f| self.traffic(f)).collect()
    }

    /// Lines the GPU touches in each epoch, first-epoch overhead included.
    pub fn epoch_traffic(&self, s: &Screen) -> Vec<u64> {
        self.epoch_traffic_from(&self.band_traffic(s))
    }

    pub fn epoch_traffic_from(&self, bands: &[u64]) -> Vec<u64> {
        let mut v = bands.to_vec();
        if let Some(first) = v.first_mut() {
            *first = (*first as f64 * self.first_epoch_factor).round() as u64;
        }
        v
    }
}

/// Vsync-paced frame timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameSchedule {
    pub fps: f64,
    /// Epoch start times relative to Vsync, in ticks.
    pub offsets: Vec<u64>,
    /// Each frame is shifted by a uniform draw in `[-jitter, jitter]` ticks.
    pub jitter_ticks: u64,
}

impl Default for FrameSchedule {
    fn default() -> Self {
        Self::evenly_spaced(60.0)
    }
}

impl FrameSchedule {
    /// Epochs centred in 28 equal slices of the frame.
    pub fn evenly_spaced(fps: f64) -> Self {
        let period = (TICKS_PER_SEC as f64 / fps).round() as u64;
        let offsets = (0..BANDS).map(|e| ((e as f64 + 0.5) * period as f64 / BANDS as f64) as u64).collect();
        FrameSchedule { fps, offsets, jitter_ticks: 0 }
    }

    pub fn period(&self) -> u64 {
        (TICKS_PER_SEC as f64 / self.fps).round() as u64
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.fps > 0.0) {
            return Err("fps must be positive".into());
        }
        if self.offsets.len() != BANDS {
            return Err(format!("need {BANDS} epoch offsets, got {}", self.offsets.len()));
        }
        if self.offsets.windows(2).any(|w| w[0] >= w[1]) {
            return Err("epoch offsets must be strictly increasing".into());
        }
        if self.offsets.last().is_some_and(|&o| o + self.jitter_ticks >= self.period())
            || self.offsets[0] < self.jitter_ticks
        {
            return Err("epoch offsets (with jitter) must lie within one frame".into());
        }
        Ok(())
    }

    /// First Vsync at or after `t`.
    pub fn next_vsync(&self, t: u64) -> u64 {
        t.div_ceil(self.period()) * self.period()
    }
}

/// Renders a fixed frame over and over: at each epoch offset the GPU touches
/// that epoch's traffic in fresh lines.
pub struct FrameRenderer {
    traffic: Vec<u64>,
    sched: FrameSchedule,
    arena: Arena,
    frame_start: u64,
    shift: i64,
    epoch: usize,
    frames_left: Option<u64>,
    rng: ChaCha8Rng,
}

impl FrameRenderer {
    /// `traffic` is per epoch; frames start at the Vsync `first_vsync`.
    pub fn new(traffic: Vec<u64>, sched: FrameSchedule, arena: Arena, first_vsync: u64, frames: Option<u64>, seed: u64) -> Self {
        assert_eq!(traffic.len(), sched.offsets.len());
        let mut r = FrameRenderer {
            traffic,
            sched,
            arena,
            frame_start: first_vsync,
            shift: 0,
            epoch: 0,
            frames_left: frames,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        r.draw_shift();
        r
    }

    fn draw_shift(&mut self) {
        let j = self.sched.jitter_ticks as i64;
        self.shift = if j > 0 { self.rng.random_range(-j..=j) } else { 0 };
    }

    pub fn set_traffic(&mut self, traffic: Vec<u64>) {
        assert_eq!(traffic.len(), self.traffic.len());
        self.traffic = traffic;
    }

}

impl Activity for FrameRenderer {
    fn next_at(&self) -> Option<u64> {
        if self.frames_left == Some(0) {
            return None;
        }
        Some((self.frame_start + self.sched.offsets[self.epoch]).saturating_add_signed(self.shift))
    }

    fn fire(&mut self, h: &mut Hierarchy) {
        self.arena.load(h, Agent::Gpu, self.traffic[self.epoch]);
        self.epoch += 1;
        if self.epoch == self.traffic.len() {
            self.epoch = 0;
            self.frame_start += self.sched.period();
            if let Some(n) = &mut self.frames_left {
                *n -= 1;
            }
            self.draw_shift();
        }
    }
}

/// Render one frame of `s` starting at the current Vsync and leave the clock
/// at the next one.
pub fn render_frame(h: &mut Hierarchy, arena: &mut Arena, s: &Screen, c: &CompressionModel, sched: &FrameSchedule) {
    let start = sched.next_vsync(h.now());
    for (off, n) in sched.offsets.iter().zip(c.epoch_traffic(s)) {
        h.advance_to(start + off);
        arena.load(h, Agent::Gpu, n);
    }
    h.advance_to(start + sched.period());
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelColor {
    Black,
    White,
}

/// An SVG filter over one pixel: every frame the GPU works through a buffer
/// whose size depends on the pixel's color.
pub struct SvgWorkload {
    pub color: PixelColor,
    pub w_black: u64,
    pub w_white: u64,
    pub period: u64,
    pub offset: u64,
    arena: Arena,
    next: u64,
}

/// Full-scale workload sizes in lines.
pub const W_BLACK: f64 = 20_000.0;
pub const W_WHITE: f64 = 40_000.0;

impl SvgWorkload {
    /// Workload firing `offset` ticks after each Vsync from `first_vsync` on.
    pub fn new(cfg: &HierarchyConfig, color: PixelColor, sched: &FrameSchedule, offset: u64, first_vsync: u64, arena: Arena) -> Self {
        SvgWorkload {
            color,
            w_black: cfg.scale_lines(W_BLACK) as u64,
            w_white: cfg.scale_lines(W_WHITE) as u64,
            period: sched.period(),
            offset,
            arena,
            next: first_vsync + offset,
        }
    }

    pub fn lines(&self) -> u64 {
        match self.color {
            PixelColor::Black => self.w_black,
            PixelColor::White => self.w_white,
        }
    }
}

impl Activity for SvgWorkload {
    fn next_at(&self) -> Option<u64> {
        Some(self.next)
    }

    fn fire(&mut self, h: &mut Hierarchy) {
        let n = self.lines();
        self.arena.load(h, Agent::Gpu, n);
        self.next += self.period;
    }
}
