//! Everything the spy observes: buffer loaders, the GPU renderer, pixel
//! workloads, synthetic websites, background noise and screen rasterizers.

use serde::{Deserialize, Serialize};

use crate::cache::Agent;
use crate::hierarchy::Hierarchy;
use crate::mem::{MemError, Region, LINE_SIZE};
use crate::sched::Activity;

pub mod raster;
pub mod render;
pub mod screen;
pub mod sites;

pub use raster::{decode_itf_raster, itf_elements, rasterize_digits, rasterize_itf, EncodeError};
pub use render::{render_frame, CompressionModel, FrameRenderer, FrameSchedule, PixelColor, SvgWorkload};
pub use screen::{Screen, BANDS, BAND_ROWS, SCREEN_H, SCREEN_W};
pub use sites::{BackgroundNoise, NoiseSpec, SiteActivity, SyntheticSite, VisitJitter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    SameClusterCpu,
    OtherClusterCpu,
    Gpu,
}

impl Placement {
    pub const ALL: [Placement; 3] = [Placement::SameClusterCpu, Placement::OtherClusterCpu, Placement::Gpu];

    /// The spy runs on the P-cluster, so "same" means P and "other" means E.
    pub fn agent(self) -> Agent {
        match self {
            Placement::SameClusterCpu => Agent::PCluster,
            Placement::OtherClusterCpu => Agent::ECluster,
            Placement::Gpu => Agent::Gpu,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Placement::SameClusterCpu => "same_cluster_cpu",
            Placement::OtherClusterCpu => "other_cluster_cpu",
            Placement::Gpu => "gpu",
        }
    }
}

/// A ring of lines large enough that a line is long gone from every cache
/// by the time the ring wraps back to it.
#[derive(Debug, Clone)]
pub struct Arena {
    base: u64,
    lines: u64,
    cursor: u64,
}

impl Arena {
    pub fn new(h: &mut Hierarchy) -> Result<Self, MemError> {
        let c = h.config();
        let cached = c.slc.capacity() + c.p_l2.capacity() + c.e_l2.capacity() + c.gpu.capacity();
        Self::with_bytes(h, 8 * cached)
    }

    pub fn with_bytes(h: &mut Hierarchy, bytes: u64) -> Result<Self, MemError> {
        let bytes = bytes.max(LINE_SIZE).next_multiple_of(LINE_SIZE);
        let base = h.alloc(bytes, 1 << 20, Region::Direct)?;
        Ok(Arena { base, lines: bytes / LINE_SIZE, cursor: 0 })
    }

    #[inline]
    pub fn next_line(&mut self) -> u64 {
        let v = self.base + self.cursor * LINE_SIZE;
        self.cursor = (self.cursor + 1) % self.lines;
        v
    }

    /// The placed agent touches `n` fresh lines without advancing the clock.
    pub fn load(&mut self, h: &mut Hierarchy, agent: Agent, n: u64) {
        for _ in 0..n {
            let v = self.next_line();
            h.access_virt(agent, v, false);
        }
    }
}

/// Touch `n_lines` fresh lines from the placed agent.
pub fn victim_load(h: &mut Hierarchy, arena: &mut Arena, placement: Placement, n_lines: u64) {
    arena.load(h, placement.agent(), n_lines);
}

/// Loads a list of `(time, lines)` events in order.
pub struct LoadSchedule {
    pub placement: Placement,
    pub events: Vec<(u64, u64)>,
    pub arena: Arena,
    next: usize,
}

impl LoadSchedule {
    pub fn new(placement: Placement, mut events: Vec<(u64, u64)>, arena: Arena) -> Self {
        events.sort_by_key(|e| e.0);
        LoadSchedule { placement, events, arena, next: 0 }
    }
}

impl Activity for LoadSchedule {
    fn next_at(&self) -> Option<u64> {
        self.events.get(self.next).map(|e| e.0)
    }

    fn fire(&mut self, h: &mut Hierarchy) {
        let (_, n) = self.events[self.next];
        self.next += 1;
        victim_load(h, &mut self.arena, self.placement, n);
    }
}
