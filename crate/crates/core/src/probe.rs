//! Spy buffers, profiling passes and sweep counting.

use serde::{Deserialize, Serialize};

use crate::cache::Agent;
use crate::hierarchy::Hierarchy;
use crate::latency::{HitClass, TICKS_PER_MS};
use crate::mem::{MemError, Region, LINE_SIZE};
use crate::sched::Schedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    Sequential,
    /// Flip direction on every pass so an over-full set keeps the lines the
    /// previous pass touched last instead of evicting them.
    Alternated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrderState {
    NextSequential,
    NextReversed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeBuffer {
    pub base_vaddr: u64,
    pub stride: u64,
    pub n_lines: usize,
    pub order_state: OrderState,
}

impl ProbeBuffer {
    /// Allocate a buffer in the simulated address space.
    pub fn alloc(h: &mut Hierarchy, stride: u64, n_lines: usize, region: Region) -> Result<Self, MemError> {
        assert!(stride % LINE_SIZE == 0 && stride > 0, "stride must be a multiple of the line size");
        let bytes = stride * n_lines.max(1) as u64;
        let base = h.alloc(bytes, 1 << 20, region)?;
        Ok(Self::at(base, stride, n_lines))
    }

    pub fn at(base_vaddr: u64, stride: u64, n_lines: usize) -> Self {
        ProbeBuffer { base_vaddr, stride, n_lines, order_state: OrderState::NextSequential }
    }

    #[inline]
    pub fn line_vaddr(&self, i: usize) -> u64 {
        self.base_vaddr + i as u64 * self.stride
    }

    /// Lines `[start, start + n)` as a separate buffer sharing this layout.
    pub fn slice(&self, start: usize, n: usize) -> Self {
        assert!(start + n <= self.n_lines);
        Self::at(self.line_vaddr(start), self.stride, n)
    }

    pub fn span_bytes(&self) -> u64 {
        self.stride * self.n_lines as u64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitCounts {
    pub local_hits: u64,
    pub slc_hits: u64,
    pub misses: u64,
}

impl HitCounts {
    pub fn total(&self) -> u64 {
        self.local_hits + self.slc_hits + self.misses
    }

    fn add(&mut self, c: HitClass) {
        match c {
            HitClass::LocalHit => self.local_hits += 1,
            HitClass::SlcHit => self.slc_hits += 1,
            HitClass::Miss => self.misses += 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profile {
    pub total_time: u64,
    pub counts: HitCounts,
    pub per_access: Option<Vec<u32>>,
}

impl Profile {
    pub fn csv_header() -> &'static str {
        "time,local_hits,slc_hits,misses,total_time"
    }

    pub fn csv_row(&self, time: u64) -> String {
        format!(
            "{time},{},{},{},{}",
            self.counts.local_hits, self.counts.slc_hits, self.counts.misses, self.total_time
        )
    }
}

/// One timed pass over the buffer with no other agents running.
pub fn profile(h: &mut Hierarchy, b: &mut ProbeBuffer, agent: Agent, pattern: Pattern) -> Profile {
    profile_with(h, &mut Schedule::new(), b, agent, pattern, false)
}

/// One timed pass; scheduled activities fire as the clock passes them.
pub fn profile_with(
    h: &mut Hierarchy,
    sched: &mut Schedule,
    b: &mut ProbeBuffer,
    agent: Agent,
    pattern: Pattern,
    record: bool,
) -> Profile {
    let reversed = pattern == Pattern::Alternated && b.order_state == OrderState::NextReversed;
    if pattern == Pattern::Alternated {
        b.order_state = match b.order_state {
            OrderState::NextSequential => OrderState::NextReversed,
            OrderState::NextReversed => OrderState::NextSequential,
        };
    }
    let mut p = Profile {
        per_access: record.then(|| Vec::with_capacity(b.n_lines)),
        ..Default::default()
    };
    let n = b.n_lines;
    for k in 0..n {
        let i = if reversed { n - 1 - k } else { k };
        sched.run_due(h);
        let a = h.access_virt(agent, b.line_vaddr(i), true);
        p.total_time += a.latency as u64;
        p.counts.add(h.classify(a.latency));
        if let Some(v) = &mut p.per_access {
            v.push(a.latency);
        }
    }
    p
}

/// Count complete alternated traversals that finish inside a window. The
/// window start is read from a 1 ms timer, so it is quantized down to a
/// millisecond boundary.
pub fn sweep_count(h: &mut Hierarchy, sched: &mut Schedule, b: &mut ProbeBuffer, agent: Agent, window_ms: f64) -> u64 {
    if window_ms <= 0.0 || b.n_lines == 0 {
        return 0;
    }
    let start = h.now() / TICKS_PER_MS * TICKS_PER_MS;
    let end = start + (window_ms * TICKS_PER_MS as f64).round() as u64;
    let mut count = 0;
    while h.now() < end {
        profile_with(h, sched, b, agent, Pattern::Alternated, false);
        if h.now() <= end {
            count += 1;
        }
    }
    count
}

pub const SLC_PROBE_STRIDE: u64 = 8192;
pub const SLC_PROBE_LINES: usize = 80_000;

/// The stride-8192 SLC probe, sized for the hierarchy's scale.
pub fn build_slc_probe(h: &mut Hierarchy) -> Result<ProbeBuffer, MemError> {
    let n = h.config().scale_lines(SLC_PROBE_LINES as f64);
    ProbeBuffer::alloc(h, SLC_PROBE_STRIDE, n, Region::Direct)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::HierarchyConfig;
    use crate::latency::LatencyModel;
    use crate::mem::{IndexFn, PhysAddr};
    use crate::sched::Activity;
    use std::collections::HashSet;

    fn quiet(div: u64) -> Hierarchy {
        let mut cfg = HierarchyConfig::scaled(div);
        cfg.latency = LatencyModel::noiseless();
        Hierarchy::new(cfg, 4)
    }

    #[test]
    fn small_buffer_is_all_local() {
        let mut h = quiet(1);
        let mut b = ProbeBuffer::alloc(&mut h, 128, 1000, Region::Direct).unwrap();
        profile(&mut h, &mut b, Agent::PCluster, Pattern::Alternated);
        let p = profile(&mut h, &mut b, Agent::PCluster, Pattern::Alternated);
        assert_eq!(p.counts, HitCounts { local_hits: 1000, slc_hits: 0, misses: 0 });
    }

    #[test]
    fn total_time_is_sum_of_latencies() {
        let mut h = Hierarchy::new(HierarchyConfig::scaled(16), 4);
        let mut b = ProbeBuffer::alloc(&mut h, 128, 9000, Region::Direct).unwrap();
        for _ in 0..3 {
            let t0 = h.now();
            let p = profile_with(&mut h, &mut Schedule::new(), &mut b, Agent::PCluster, Pattern::Alternated, true);
            let lat = p.per_access.as_ref().unwrap();
            assert_eq!(p.total_time, lat.iter().map(|&x| x as u64).sum::<u64>());
            assert_eq!(h.now() - t0, p.total_time);
            assert_eq!(p.counts.total(), 9000);
        }
    }

    #[test]
    fn alternation_flips_order() {
        let mut h = quiet(16);
        let mut b = ProbeBuffer::alloc(&mut h, 128, 10, Region::Direct).unwrap();
        assert_eq!(b.order_state, OrderState::NextSequential);
        profile(&mut h, &mut b, Agent::PCluster, Pattern::Alternated);
        assert_eq!(b.order_state, OrderState::NextReversed);
        profile(&mut h, &mut b, Agent::PCluster, Pattern::Sequential);
        assert_eq!(b.order_state, OrderState::NextReversed);
    }

    #[test]
    fn sweep_count_closed_form() {
        let mut h = quiet(1);
        let mut b = ProbeBuffer::alloc(&mut h, 128, 1000, Region::Direct).unwrap();
        profile(&mut h, &mut b, Agent::PCluster, Pattern::Alternated);
        let mut s = Schedule::new();
        assert_eq!(sweep_count(&mut h, &mut s, &mut b, Agent::PCluster, 0.0), 0);
        // 1000 lines fit in L1: every access is an L1 hit.
        h.advance_to(h.now().div_ceil(TICKS_PER_MS) * TICKS_PER_MS);
        let w = 2.0;
        let c = sweep_count(&mut h, &mut s, &mut b, Agent::PCluster, w);
        let expect = (w * TICKS_PER_MS as f64 / (1000.0 * 12.0)).floor() as i64;
        assert!((c as i64 - expect).abs() <= 1, "{c} vs {expect}");
    }

    #[test]
    fn sweep_count_l2_resident() {
        let mut h = quiet(1);
        // Far larger than L1, well inside L2: every access is an L2 hit.
        let n = 16_384;
        let mut b = ProbeBuffer::alloc(&mut h, 128, n, Region::Direct).unwrap();
        for _ in 0..2 {
            profile(&mut h, &mut b, Agent::PCluster, Pattern::Alternated);
        }
        h.advance_to(h.now().div_ceil(TICKS_PER_MS) * TICKS_PER_MS);
        let w = 5.0;
        let c = sweep_count(&mut h, &mut Schedule::new(), &mut b, Agent::PCluster, w);
        let expect = (w * TICKS_PER_MS as f64 / (n as f64 * 60.0)).floor() as i64;
        assert!((c as i64 - expect).abs() <= 1, "{c} vs {expect}");
    }

    struct Evictor {
        at: u64,
        period: u64,
        base: u64,
        next: u64,
    }

    impl Activity for Evictor {
        fn next_at(&self) -> Option<u64> {
            Some(self.at)
        }
        fn fire(&mut self, h: &mut Hierarchy) {
            for _ in 0..6000 {
                h.access_virt(Agent::PCluster, self.base + self.next * 128, false);
                self.next += 1;
            }
            self.at += self.period;
        }
    }

    #[test]
    fn victim_lowers_sweep_count() {
        let mut h = quiet(16);
        let n = 3000;
        let mut b = ProbeBuffer::alloc(&mut h, 128, n, Region::Direct).unwrap();
        let arena = h.alloc(1 << 30, 1 << 20, Region::Direct).unwrap();
        for _ in 0..2 {
            profile(&mut h, &mut b, Agent::PCluster, Pattern::Alternated);
        }
        let mut g = h.clone();
        let mut gb = b.clone();
        let quiet_count = sweep_count(&mut h, &mut Schedule::new(), &mut b, Agent::PCluster, 20.0);
        let mut s = Schedule::new();
        s.push(Box::new(Evictor { at: g.now(), period: TICKS_PER_MS, base: arena, next: 0 }));
        let busy = sweep_count(&mut g, &mut s, &mut gb, Agent::PCluster, 20.0);
        assert!(busy < quiet_count, "{busy} vs {quiet_count}");
    }

    #[test]
    fn slc_probe_defaults() {
        let mut h = Hierarchy::new(HierarchyConfig::m1(), 0);
        let b = build_slc_probe(&mut h).unwrap();
        assert_eq!((b.n_lines, b.stride), (80_000, 8192));
        let mut l2 = HashSet::new();
        let mut slc = HashSet::new();
        let l2f = IndexFn::l2_style(8192);
        let slcf = IndexFn::slc_style(4096);
        for i in 0..b.n_lines {
            let p = h.translate(b.line_vaddr(i)).unwrap();
            l2.insert(l2f.set_index(p));
            slc.insert(slcf.set_index(p));
        }
        // 128 sets × 12 ways × 128 B = 192 KB of L2.
        assert_eq!(l2.len() * 12 * 128, 192 * 1024);
        assert_eq!(slc.len(), 4096);
        let _ = PhysAddr(0);
    }

    /// Brute force on a one-set L2: with alternated passes, the first lines
    /// touched in pass k are the last inserted in pass k-1.
    #[test]
    fn alternated_pass_starts_with_latest_lines() {
        let mut cfg = HierarchyConfig::scaled(64);
        cfg.latency = LatencyModel::noiseless();
        cfg.p_l2.index_fn = IndexFn::plain(cfg.p_l2.sets);
        let mut h = Hierarchy::new(cfg, 0);
        let sets = h.config().p_l2.sets as u64;
        let ways = h.config().p_l2.ways;
        // A stride of one L2 way keeps every line in one set.
        let mut b = ProbeBuffer::alloc(&mut h, sets * 128, ways + 4, Region::Direct).unwrap();
        let first = h.translate(b.line_vaddr(0)).unwrap();
        let set = h.l2(Agent::PCluster).set_of(first);
        for i in 0..b.n_lines {
            let p = h.translate(b.line_vaddr(i)).unwrap();
            assert_eq!(h.l2(Agent::PCluster).set_of(p), set);
        }
        for _ in 0..6 {
            let before = h.l2(Agent::PCluster).recency_order(set);
            let reversed = b.order_state == OrderState::NextReversed;
            let p = profile_with(&mut h, &mut Schedule::new(), &mut b, Agent::PCluster, Pattern::Alternated, true);
            let lat = p.per_access.unwrap();
            let first_k: Vec<u64> = (0..ways)
                .map(|k| if reversed { b.n_lines - 1 - k } else { k })
                .map(|i| h.translate(b.line_vaddr(i)).unwrap().0)
                .collect();
            if before.len() == ways {
                let newest: HashSet<u64> = before.iter().map(|p| p.0).collect();
                assert!(first_k.iter().all(|a| newest.contains(a)));
                assert!(lat[..ways].iter().all(|&t| t < 160));
            }
        }
    }
}
