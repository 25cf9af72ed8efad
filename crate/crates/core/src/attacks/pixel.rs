//! Pixel stealing: the color of one pixel changes how much memory an SVG
//! filter over it touches each frame, and the spy reads that off the SLC.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{noise_activity, Channel, ChannelKind, SPY};
use crate::hierarchy::{splitmix, Hierarchy};
use crate::mem::MemError;
use crate::probe::{profile_with, sweep_count, Pattern};
use crate::sched::Schedule;
use crate::stats::mean;
use crate::victims::{Arena, FrameSchedule, NoiseSpec, PixelColor, Screen, SvgWorkload};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelMode {
    /// Time one profile per frame.
    HitTiming,
    /// Count whole sweeps inside a window, as with a coarse timer.
    SweepCounting,
}

#[derive(Debug, Error)]
pub enum PixelError {
    #[error("steal_pixel called before calibration")]
    CalibrationRequired,
    #[error(transparent)]
    Mem(#[from] MemError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PixelConfig {
    pub mode: PixelMode,
    pub fps: f64,
    /// Frames per HitTiming trial.
    pub frames: usize,
    pub sweep_window_ms: f64,
    /// Labeled frames per color used to fit the decision threshold.
    pub calibration_frames: usize,
    /// Workload start within the frame, as a fraction of the period.
    pub workload_phase: f64,
    pub noise: NoiseSpec,
    pub seed: u64,
}

impl Default for PixelConfig {
    fn default() -> Self {
        PixelConfig {
            mode: PixelMode::HitTiming,
            fps: 60.0,
            frames: 120,
            sweep_window_ms: 100.0,
            calibration_frames: 50,
            workload_phase: 0.5,
            noise: NoiseSpec::default(),
            seed: 1,
        }
    }
}

/// Per-frame class means; decisions go to the nearer one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub black: f64,
    pub white: f64,
}

impl Calibration {
    pub fn threshold(&self) -> f64 {
        (self.black + self.white) / 2.0
    }

    pub fn decide(&self, x: f64) -> PixelColor {
        if (x - self.white).abs() < (x - self.black).abs() {
            PixelColor::White
        } else {
            PixelColor::Black
        }
    }
}

pub struct PixelStealer {
    cfg: PixelConfig,
    base: Hierarchy,
    ch: Channel,
    frame: FrameSchedule,
    calibration: Option<Calibration>,
}

impl PixelStealer {
    pub fn new(h: &Hierarchy, cfg: PixelConfig) -> Result<Self, MemError> {
        let mut base = h.clone();
        let frame = FrameSchedule::evenly_spaced(cfg.fps);
        let mut ch = Channel::new(&mut base, ChannelKind::SlcOccupancy, 1000.0 / cfg.fps)?;
        ch.warm(&mut base);
        Ok(PixelStealer { cfg, base, ch, frame, calibration: None })
    }

    pub fn config(&self) -> &PixelConfig {
        &self.cfg
    }

    pub fn calibration(&self) -> Option<Calibration> {
        self.calibration
    }

    /// Victim workload and background noise for one run, with the clock at
    /// the first Vsync.
    fn setup(&self, color: PixelColor, seed: u64) -> Result<(Hierarchy, Channel, Schedule), MemError> {
        let mut h = self.base.clone();
        h.reseed(seed);
        let ch = self.ch.clone();
        let period = self.frame.period();
        let v0 = self.frame.next_vsync(h.now());
        let arena = Arena::new(&mut h)?;
        let offset = (self.cfg.workload_phase * period as f64) as u64;
        let mut sched = Schedule::new();
        sched.push(Box::new(SvgWorkload::new(h.config(), color, &self.frame, offset, v0, arena)));
        if let Some(a) = noise_activity(&mut h, self.cfg.noise, v0, seed)? {
            sched.push(a);
        }
        sched.advance_to(&mut h, v0);
        Ok((h, ch, sched))
    }

    /// Profile time at each of `frames` Vsyncs; the profile at Vsync k + 1
    /// sees frame k's workload.
    fn frame_times(&self, color: PixelColor, frames: usize, seed: u64) -> Result<Vec<f64>, MemError> {
        let (mut h, mut ch, mut sched) = self.setup(color, seed)?;
        let period = self.frame.period();
        let v0 = h.now();
        let mut out = Vec::with_capacity(frames);
        for k in 1..=frames as u64 {
            sched.advance_to(&mut h, v0 + k * period);
            let p = profile_with(&mut h, &mut sched, &mut ch.probe, SPY, Pattern::Alternated, false);
            out.push(p.total_time as f64);
        }
        Ok(out)
    }

    /// Sweeps per frame over one window.
    fn sweep_rate(&self, color: PixelColor, seed: u64) -> Result<f64, MemError> {
        let (mut h, mut ch, mut sched) = self.setup(color, seed)?;
        let n = sweep_count(&mut h, &mut sched, &mut ch.probe, SPY, self.cfg.sweep_window_ms);
        Ok(n as f64 / self.window_frames())
    }

    fn window_frames(&self) -> f64 {
        self.cfg.sweep_window_ms * self.cfg.fps / 1000.0
    }

    /// Fit class means on `calibration_frames` labeled frames per color. For
    /// sweep counting that is as many whole windows as those frames fill.
    pub fn calibrate(&mut self) -> Result<Calibration, MemError> {
        let n = self.cfg.calibration_frames;
        let s = splitmix(self.cfg.seed ^ 0xca1b);
        let per_color = |c: PixelColor, s: u64| -> Result<f64, MemError> {
            match self.cfg.mode {
                PixelMode::HitTiming => Ok(mean(&self.frame_times(c, n, s)?)),
                PixelMode::SweepCounting => {
                    let windows = (n as f64 / self.window_frames()).ceil().max(1.0) as u64;
                    let r: Result<Vec<f64>, _> = (0..windows).map(|i| self.sweep_rate(c, splitmix(s ^ i))).collect();
                    Ok(mean(&r?))
                }
            }
        };
        let c = Calibration { black: per_color(PixelColor::Black, s)?, white: per_color(PixelColor::White, s ^ 1)? };
        self.calibration = Some(c);
        Ok(c)
    }

    /// Aggregate per-frame measurement of one trial.
    pub fn measure(&self, color: PixelColor, trial_seed: u64) -> Result<f64, MemError> {
        match self.cfg.mode {
            PixelMode::HitTiming => Ok(mean(&self.frame_times(color, self.cfg.frames, trial_seed)?)),
            PixelMode::SweepCounting => self.sweep_rate(color, trial_seed),
        }
    }

    /// Guess the color of a pixel rendered as `color` in one trial.
    pub fn steal_pixel(&self, color: PixelColor, trial_seed: u64) -> Result<PixelColor, PixelError> {
        let c = self.calibration.ok_or(PixelError::CalibrationRequired)?;
        Ok(c.decide(self.measure(color, trial_seed)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionResult {
    pub width: usize,
    pub height: usize,
    pub guessed: Vec<PixelColor>,
    pub errors: Vec<bool>,
}

impl RegionResult {
    pub fn accuracy(&self) -> f64 {
        1.0 - self.errors.iter().filter(|&&e| e).count() as f64 / self.errors.len().max(1) as f64
    }

    pub fn to_screen(&self) -> Screen {
        let mut s = Screen::new(self.width, self.height, crate::victims::screen::BLACK);
        for (i, c) in self.guessed.iter().enumerate() {
            if *c == PixelColor::White {
                s.set(i % self.width, i / self.width, crate::victims::screen::WHITE);
            }
        }
        s
    }
}

/// Steal every pixel of a binary image; a pixel is white if any channel is
/// nonzero.
pub fn steal_region(st: &PixelStealer, img: &Screen) -> Result<RegionResult, PixelError> {
    let mut guessed = Vec::with_capacity(img.width * img.height);
    let mut errors = Vec::with_capacity(img.width * img.height);
    for y in 0..img.height {
        for x in 0..img.width {
            let truth = if img.get(x, y) == [0, 0, 0] { PixelColor::Black } else { PixelColor::White };
            let seed = splitmix(st.cfg.seed ^ splitmix(((y as u64) << 32) | x as u64));
            let g = st.steal_pixel(truth, seed)?;
            guessed.push(g);
            errors.push(g != truth);
        }
    }
    Ok(RegionResult { width: img.width, height: img.height, guessed, errors })
}

/// A black-and-white image with independently random pixels.
pub fn random_binary_image(width: usize, height: usize, seed: u64) -> Screen {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ 0x1a6e));
    let mut s = Screen::new(width, height, crate::victims::screen::BLACK);
    for y in 0..height {
        for x in 0..width {
            if rng.random_bool(0.5) {
                s.set(x, y, crate::victims::screen::WHITE);
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::HierarchyConfig;
    use crate::latency::LatencyModel;
    use crate::victims::screen::{BLACK, WHITE};

    fn noiseless() -> Hierarchy {
        let mut cfg = HierarchyConfig::scaled(64);
        cfg.latency = LatencyModel::noiseless();
        Hierarchy::new(cfg, 2)
    }

    fn quiet(mode: PixelMode) -> PixelConfig {
        PixelConfig { mode, frames: 10, calibration_frames: 10, sweep_window_ms: 50.0, noise: NoiseSpec::OFF, ..Default::default() }
    }

    #[test]
    fn uncalibrated_is_an_error() {
        let st = PixelStealer::new(&noiseless(), quiet(PixelMode::HitTiming)).unwrap();
        assert!(matches!(st.steal_pixel(PixelColor::White, 1), Err(PixelError::CalibrationRequired)));
    }

    #[test]
    fn noiseless_hit_timing_is_exact() {
        let mut st = PixelStealer::new(&noiseless(), quiet(PixelMode::HitTiming)).unwrap();
        let c = st.calibrate().unwrap();
        assert!(c.white > c.black, "{c:?}");
        assert_eq!(st.steal_pixel(PixelColor::White, 7).unwrap(), PixelColor::White);
        assert_eq!(st.steal_pixel(PixelColor::Black, 7).unwrap(), PixelColor::Black);
    }

    #[test]
    fn white_costs_sweeps() {
        let mut st = PixelStealer::new(&noiseless(), quiet(PixelMode::SweepCounting)).unwrap();
        let c = st.calibrate().unwrap();
        assert!(c.white < c.black, "{c:?}");
    }

    #[test]
    fn region_all_black_and_single_white() {
        let mut st = PixelStealer::new(&noiseless(), quiet(PixelMode::HitTiming)).unwrap();
        st.calibrate().unwrap();
        let r = steal_region(&st, &Screen::new(3, 3, BLACK)).unwrap();
        assert!(r.guessed.iter().all(|&c| c == PixelColor::Black));
        let r = steal_region(&st, &Screen::new(1, 1, WHITE)).unwrap();
        assert_eq!(r.guessed, vec![PixelColor::White]);
        assert_eq!(r.accuracy(), 1.0);
    }
}
