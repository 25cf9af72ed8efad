//! Synthetic websites and background system noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::{Arena, LoadSchedule, Placement};
use crate::cache::Agent;
use crate::hierarchy::{splitmix, Hierarchy};
use crate::latency::TICKS_PER_MS;
use crate::sched::Activity;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Burst {
    pub start_ms: u64,
    pub dur_ms: u64,
    pub lines_per_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Periodic {
    pub period_ms: u64,
    pub phase_ms: u64,
    pub lines: u64,
}

/// A website reduced to a deterministic memory-activity schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSite {
    pub site_id: u32,
    pub seed: u64,
    /// Activity starts with the first burst; nothing happens before it.
    pub first_ms: u64,
    /// Steady script/layout activity once loading has started.
    pub base_lines_per_ms: u64,
    pub bursts: Vec<Burst>,
    pub periodic: Vec<Periodic>,
}

impl SyntheticSite {
    /// Draw a site's schedule over `duration_ms`. Line counts are full-scale
    /// figures divided by `scale`.
    pub fn generate(site_id: u32, seed: u64, duration_ms: u64, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(0x5173 + site_id as u64)));
        let d = duration_ms.max(20);
        let lines = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| (rng.random_range(lo..hi) / scale).round() as u64;
        let first_ms = rng.random_range(0..d / 10 + 1);
        let base_lines_per_ms = lines(&mut rng, 20.0, 400.0);
        let mut bursts: Vec<Burst> = (0..rng.random_range(3..9))
            .map(|_| Burst {
                start_ms: rng.random_range(first_ms..d),
                dur_ms: rng.random_range(d / 50 + 1..d / 5 + 2),
                lines_per_ms: lines(&mut rng, 200.0, 3000.0),
            })
            .collect();
        bursts.push(Burst { start_ms: first_ms, dur_ms: rng.random_range(d / 50 + 1..d / 8 + 2), lines_per_ms: lines(&mut rng, 500.0, 3000.0) });
        bursts.sort_by_key(|b| b.start_ms);
        let periodic = (0..rng.random_range(1..3))
            .map(|_| {
                let period_ms = rng.random_range(d / 40 + 2..d / 4 + 3);
                Periodic { period_ms, phase_ms: rng.random_range(0..period_ms), lines: lines(&mut rng, 1000.0, 8000.0) }
            })
            .collect();
        SyntheticSite { site_id, seed, first_ms, base_lines_per_ms, bursts, periodic }
    }

    /// Lines the site loads during millisecond `t`.
    pub fn site_activity(&self, t: u64) -> u64 {
        if t < self.first_ms {
            return 0;
        }
        let mut n = self.base_lines_per_ms;
        for b in &self.bursts {
            if t >= b.start_ms && t < b.start_ms + b.dur_ms {
                n += b.lines_per_ms;
            }
        }
        for p in &self.periodic {
            if (t - self.first_ms) % p.period_ms == p.phase_ms {
                n += p.lines;
            }
        }
        n
    }
}

/// One visit to a site: the schedule with a per-visit time shift and
/// intensity scale, as loading never repeats exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisitJitter {
    pub max_shift_ms: u64,
    pub max_scale_dev: f64,
}

impl Default for VisitJitter {
    fn default() -> Self {
        VisitJitter { max_shift_ms: 40, max_scale_dev: 0.2 }
    }
}

pub struct SiteActivity;

impl SiteActivity {
    /// Load events for one visit starting at tick `start`, over `duration_ms`.
    pub fn visit(
        site: &SyntheticSite,
        jitter: VisitJitter,
        visit_seed: u64,
        placement: Placement,
        start: u64,
        duration_ms: u64,
        arena: Arena,
    ) -> LoadSchedule {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(visit_seed ^ 0x7153));
        let shift = rng.random_range(0..=jitter.max_shift_ms);
        let scale = 1.0 + rng.random_range(-jitter.max_scale_dev..=jitter.max_scale_dev);
        let events = (0..duration_ms)
            .filter_map(|t| {
                let n = t.checked_sub(shift).map_or(0, |u| site.site_activity(u));
                let n = (n as f64 * scale).round() as u64;
                (n > 0).then_some((start + t * TICKS_PER_MS, n))
            })
            .collect();
        LoadSchedule::new(placement, events, arena)
    }
}

/// Other processes: bursts of fresh lines at exponential inter-arrival
/// times with exponential sizes.
pub struct BackgroundNoise {
    agent: Agent,
    mean_gap: f64,
    mean_lines: f64,
    next: u64,
    rng: ChaCha8Rng,
    arena: Arena,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Bursts per simulated millisecond; zero disables noise.
    pub rate_per_ms: f64,
    /// Mean burst size in full-scale lines.
    pub mean_lines: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec { rate_per_ms: 2.0, mean_lines: 300.0 }
    }
}

impl NoiseSpec {
    pub const OFF: NoiseSpec = NoiseSpec { rate_per_ms: 0.0, mean_lines: 0.0 };

    pub fn is_off(&self) -> bool {
        self.rate_per_ms <= 0.0 || self.mean_lines <= 0.0
    }
}

impl BackgroundNoise {
    /// `None` when the spec is off. Sizes are divided by `scale`.
    pub fn new(spec: NoiseSpec, agent: Agent, scale: f64, start: u64, seed: u64, arena: Arena) -> Option<Self> {
        if spec.is_off() {
            return None;
        }
        let mut n = BackgroundNoise {
            agent,
            mean_gap: TICKS_PER_MS as f64 / spec.rate_per_ms,
            mean_lines: spec.mean_lines / scale,
            next: start,
            rng: ChaCha8Rng::seed_from_u64(splitmix(seed ^ 0xb9)),
            arena,
        };
        n.next = start + n.gap();
        Some(n)
    }

    fn gap(&mut self) -> u64 {
        Exp::new(1.0 / self.mean_gap).expect("positive rate").sample(&mut self.rng).round() as u64 + 1
    }
}

impl Activity for BackgroundNoise {
    fn next_at(&self) -> Option<u64> {
        Some(self.next)
    }

    fn fire(&mut self, h: &mut Hierarchy) {
        let n = Exp::new(1.0 / self.mean_lines).expect("positive size").sample(&mut self.rng).round() as u64;
        self.arena.load(h, self.agent, n);
        self.next += self.gap();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nothing_before_first_burst() {
        for id in 0..20 {
            let s = SyntheticSite::generate(id, 1, 2000, 1.0);
            for t in 0..s.first_ms {
                assert_eq!(s.site_activity(t), 0);
            }
            assert!(s.site_activity(s.first_ms) > 0);
        }
    }

    #[test]
    fn deterministic_per_site_and_seed() {
        let a = SyntheticSite::generate(3, 9, 2000, 1.0);
        assert_eq!(a, SyntheticSite::generate(3, 9, 2000, 1.0));
        assert_ne!(a, SyntheticSite::generate(3, 10, 2000, 1.0));
    }

    #[test]
    fn distinct_sites_differ_on_most_ticks() {
        for id in 0..19 {
            let a = SyntheticSite::generate(id, 5, 2000, 1.0);
            let b = SyntheticSite::generate(id + 1, 5, 2000, 1.0);
            let differ = (0..2000).filter(|&t| a.site_activity(t) != b.site_activity(t)).count();
            assert!(differ >= 1000, "sites {id},{}: {differ}", id + 1);
        }
    }
}
