//! The wired cache hierarchy: two CPU clusters, the GPU cache, the SLC and
//! memory, plus the logical clock.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cache::{Agent, CacheLevelConfig, CacheState, Replacement};
use crate::latency::{HitClass, LatencyModel, Level};
use crate::mem::{AddressSpace, IndexFn, MapMode, MemError, PhysAddr, Region, DEFAULT_PAGE_SIZE};

const KB: u64 = 1 << 10;
const MB: u64 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SlcPolicy {
    #[default]
    Exclusive,
    NonInclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyConfig {
    pub p_l1: CacheLevelConfig,
    pub p_l2: CacheLevelConfig,
    pub e_l1: CacheLevelConfig,
    pub e_l2: CacheLevelConfig,
    pub gpu: CacheLevelConfig,
    pub slc: CacheLevelConfig,
    pub slc_cpu_policy: SlcPolicy,
    pub latency: LatencyModel,
    pub memory_bytes: u64,
    pub page_size: u64,
    pub page_mapping: MapMode,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        Self::m1()
    }
}

impl HierarchyConfig {
    /// Full-size geometry.
    pub fn m1() -> Self {
        Self::with_divisor(1)
    }

    /// Every capacity divided by `div` (a power of two), index functions
    /// rebuilt for the smaller set counts. Used for desk-scale runs of the
    /// statistics-heavy attacks.
    pub fn scaled(div: u64) -> Self {
        Self::with_divisor(div)
    }

    fn with_divisor(div: u64) -> Self {
        assert!(div.is_power_of_two() && div <= 64);
        let slc_seed = 0x51c;
        HierarchyConfig {
            p_l1: CacheLevelConfig::new("p_l1", 128 * KB / div, 8, IndexFn::plain, Replacement::Lru),
            p_l2: CacheLevelConfig::new("p_l2", 12 * MB / div, 12, IndexFn::l2_style, Replacement::Lru),
            e_l1: CacheLevelConfig::new("e_l1", 128 * KB / div, 8, IndexFn::plain, Replacement::Lru),
            e_l2: CacheLevelConfig::new("e_l2", 4 * MB / div, 16, IndexFn::plain, Replacement::Lru),
            gpu: CacheLevelConfig::new("gpu", MB / div, 8, IndexFn::plain, Replacement::Lru),
            slc: CacheLevelConfig::new(
                "slc",
                8 * MB / div,
                16,
                IndexFn::slc_style,
                Replacement::PseudoRandom { seed: slc_seed },
            ),
            slc_cpu_policy: SlcPolicy::Exclusive,
            latency: LatencyModel::default(),
            memory_bytes: 16 << 30,
            page_size: DEFAULT_PAGE_SIZE,
            page_mapping: MapMode::Identity,
        }
    }

    /// Ratio of the full-size SLC to this SLC; paper-scale line counts are
    /// divided by it.
    pub fn scale_divisor(&self) -> f64 {
        65536.0 / self.slc.lines() as f64
    }

    /// Scale a full-size line count to this geometry.
    pub fn scale_lines(&self, full: f64) -> usize {
        (full / self.scale_divisor()).round() as usize
    }

    pub fn validate(&self) -> Result<(), String> {
        for c in [&self.p_l1, &self.p_l2, &self.e_l1, &self.e_l2, &self.gpu, &self.slc] {
            c.validate()?;
        }
        self.latency.validate()?;
        if !self.page_size.is_power_of_two() || self.page_size < 4096 {
            return Err("page_size must be a power of two ≥ 4096".into());
        }
        if self.memory_bytes < 256 * MB || self.memory_bytes % (2 * self.page_size) != 0 {
            return Err("memory_bytes must be ≥ 256 MB and a multiple of two pages".into());
        }
        if self.memory_bytes >> 7 >= u32::MAX as u64 {
            return Err("memory_bytes too large for 32-bit line tags".into());
        }
        if self.p_l1.lines() > self.p_l2.lines() || self.e_l1.lines() > self.e_l2.lines() {
            return Err("an L1 must not exceed its L2".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelStats {
    pub accesses: u64,
    pub hits: u64,
    pub misses: u64,
    pub fills: u64,
    pub evictions: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchyStats {
    pub p_l1: LevelStats,
    pub p_l2: LevelStats,
    pub e_l1: LevelStats,
    pub e_l2: LevelStats,
    pub gpu: LevelStats,
    pub slc: LevelStats,
    pub mem_fills: u64,
}

impl HierarchyStats {
    fn l1_mut(&mut self, c: usize) -> &mut LevelStats {
        if c == 0 {
            &mut self.p_l1
        } else {
            &mut self.e_l1
        }
    }

    fn l2_mut(&mut self, c: usize) -> &mut LevelStats {
        if c == 0 {
            &mut self.p_l2
        } else {
            &mut self.e_l2
        }
    }
}

/// Result of one access.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Access {
    pub level: Level,
    pub latency: u32,
}

#[derive(Debug, Clone)]
struct Cluster {
    l1: CacheState,
    l2: CacheState,
}

#[derive(Debug, Clone)]
pub struct Hierarchy {
    cfg: HierarchyConfig,
    clusters: [Cluster; 2],
    gpu: CacheState,
    slc: CacheState,
    now: u64,
    stats: HierarchyStats,
    space: AddressSpace,
    noise: ChaCha8Rng,
}

/// Spill an L2 victim into the SLC (victim fill).
#[inline]
fn spill(
    slc: &mut CacheState,
    gpu: &mut CacheState,
    other_l2: &CacheState,
    stats: &mut HierarchyStats,
    v: PhysAddr,
    owner: Agent,
) {
    // The other cluster still holds the line, or a non-inclusive SLC kept it.
    if other_l2.contains(v) {
        return;
    }
    let (base, present) = slc.lookup(v);
    if present.is_some() {
        return;
    }
    stats.slc.fills += 1;
    if let Some((w, wo)) = slc.insert_at(base, v, owner) {
        stats.slc.evictions += 1;
        if wo == Agent::Gpu {
            gpu.invalidate(w);
        }
    }
}

impl Hierarchy {
    pub fn new(cfg: HierarchyConfig, seed: u64) -> Self {
        cfg.validate().expect("invalid hierarchy config");
        let mix = splitmix(seed);
        let mk = |c: &CacheLevelConfig, k: u64| CacheState::new(c.clone(), splitmix(mix ^ k));
        Hierarchy {
            clusters: [
                Cluster { l1: mk(&cfg.p_l1, 1), l2: mk(&cfg.p_l2, 2) },
                Cluster { l1: mk(&cfg.e_l1, 3), l2: mk(&cfg.e_l2, 4) },
            ],
            gpu: mk(&cfg.gpu, 5),
            slc: mk(&cfg.slc, 6),
            now: 0,
            stats: HierarchyStats::default(),
            space: AddressSpace::new(cfg.memory_bytes, cfg.page_size, cfg.page_mapping, splitmix(mix ^ 7)),
            noise: ChaCha8Rng::seed_from_u64(splitmix(mix ^ 8)),
            cfg,
        }
    }

    /// Fork the random streams (latency noise, random replacement) of a
    /// cloned hierarchy so that clones diverge. Cache contents, clock and
    /// page mappings are kept.
    pub fn reseed(&mut self, seed: u64) {
        let mix = splitmix(seed ^ 0x7e5e_ed00);
        for (k, c) in self.clusters.iter_mut().enumerate() {
            c.l1.reseed(splitmix(mix ^ (2 * k as u64 + 1)));
            c.l2.reseed(splitmix(mix ^ (2 * k as u64 + 2)));
        }
        self.gpu.reseed(splitmix(mix ^ 5));
        self.slc.reseed(splitmix(mix ^ 6));
        self.noise = ChaCha8Rng::seed_from_u64(splitmix(mix ^ 8));
    }

    pub fn config(&self) -> &HierarchyConfig {
        &self.cfg
    }

    pub fn latency(&self) -> &LatencyModel {
        &self.cfg.latency
    }

    pub fn set_noise_sigma(&mut self, sigma: f64) {
        self.cfg.latency.noise_sigma = sigma;
    }

    pub fn slc(&self) -> &CacheState {
        &self.slc
    }

    pub fn gpu_cache(&self) -> &CacheState {
        &self.gpu
    }

    pub fn l1(&self, a: Agent) -> &CacheState {
        &self.clusters[a.cluster_index().expect("CPU agent")].l1
    }

    pub fn l2(&self, a: Agent) -> &CacheState {
        &self.clusters[a.cluster_index().expect("CPU agent")].l2
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn advance(&mut self, dt: u64) {
        self.now += dt;
    }

    /// Move the clock forward to `t`; never backwards.
    pub fn advance_to(&mut self, t: u64) {
        self.now = self.now.max(t);
    }

    pub fn snapshot_stats(&self) -> HierarchyStats {
        self.stats
    }

    pub fn reset_stats(&mut self) {
        self.stats = HierarchyStats::default();
    }

    pub fn alloc(&mut self, bytes: u64, align: u64, region: Region) -> Result<u64, MemError> {
        self.space.alloc(bytes, align, region)
    }

    pub fn remap(&mut self, vaddr: u64, len: u64) -> Result<(), MemError> {
        self.space.remap(vaddr, len)
    }

    #[inline]
    pub fn translate(&mut self, vaddr: u64) -> Result<PhysAddr, MemError> {
        self.space.translate(vaddr)
    }

    pub fn classify(&self, t: u32) -> HitClass {
        self.cfg.latency.classify(t)
    }

    /// Access a virtual address. Buffers come from [`Hierarchy::alloc`], so
    /// a translation fault is a caller bug.
    #[inline]
    pub fn access_virt(&mut self, agent: Agent, vaddr: u64, advance_clock: bool) -> Access {
        let p = self.space.translate(vaddr).expect("access outside simulated memory");
        self.access(agent, p, advance_clock)
    }

    #[inline]
    pub fn access(&mut self, agent: Agent, p: PhysAddr, advance_clock: bool) -> Access {
        let level = match agent.cluster_index() {
            Some(c) => self.cpu_access(c, agent, p),
            None => self.gpu_access(p),
        };
        let latency = self.cfg.latency.draw(level, &mut self.noise);
        if advance_clock {
            self.now += latency as u64;
        }
        Access { level, latency }
    }

    fn cpu_access(&mut self, c: usize, agent: Agent, p: PhysAddr) -> Level {
        let Hierarchy { clusters, gpu, slc, stats, cfg, .. } = self;
        let (first, second) = clusters.split_at_mut(1);
        let (me, other) = if c == 0 { (&mut first[0], &second[0]) } else { (&mut second[0], &first[0]) };

        stats.l1_mut(c).accesses += 1;
        let (l1_base, l1_slot) = me.l1.lookup(p);
        if let Some(s) = l1_slot {
            me.l1.touch(s);
            if let Some(s2) = me.l2.find(p) {
                me.l2.touch(s2);
            }
            stats.l1_mut(c).hits += 1;
            return Level::L1;
        }
        stats.l1_mut(c).misses += 1;

        stats.l2_mut(c).accesses += 1;
        let (l2_base, l2_slot) = me.l2.lookup(p);
        let level = if let Some(s) = l2_slot {
            me.l2.touch(s);
            stats.l2_mut(c).hits += 1;
            Level::L2
        } else {
            stats.l2_mut(c).misses += 1;
            stats.slc.accesses += 1;
            let from_slc = match cfg.slc_cpu_policy {
                SlcPolicy::Exclusive => match slc.invalidate(p) {
                    Some(owner) => {
                        if owner == Agent::Gpu {
                            gpu.invalidate(p);
                        }
                        true
                    }
                    None => false,
                },
                SlcPolicy::NonInclusive => slc.contains(p),
            };
            let level = if from_slc {
                stats.slc.hits += 1;
                Level::Slc
            } else {
                stats.slc.misses += 1;
                stats.mem_fills += 1;
                Level::Mem
            };
            stats.l2_mut(c).fills += 1;
            if let Some((v, vo)) = me.l2.insert_at(l2_base, p, agent) {
                stats.l2_mut(c).evictions += 1;
                me.l1.invalidate(v);
                spill(slc, gpu, &other.l2, stats, v, vo);
            }
            level
        };
        stats.l1_mut(c).fills += 1;
        if me.l1.insert_at(l1_base, p, agent).is_some() {
            stats.l1_mut(c).evictions += 1;
        }
        level
    }

    fn gpu_access(&mut self, p: PhysAddr) -> Level {
        let Hierarchy { clusters, gpu, slc, stats, .. } = self;
        stats.gpu.accesses += 1;
        if let Some(s) = gpu.find(p) {
            gpu.touch(s);
            stats.gpu.hits += 1;
            return Level::GpuCache;
        }
        stats.gpu.misses += 1;
        stats.slc.accesses += 1;
        let level = if let Some(s) = slc.find(p) {
            slc.touch(s);
            slc.set_owner(s, Agent::Gpu);
            stats.slc.hits += 1;
            Level::Slc
        } else {
            stats.slc.misses += 1;
            stats.mem_fills += 1;
            // Keep exclusivity if a CPU cluster happens to hold the line.
            for cl in clusters.iter_mut() {
                if cl.l2.invalidate(p).is_some() {
                    cl.l1.invalidate(p);
                }
            }
            stats.slc.fills += 1;
            if let Some((w, wo)) = slc.insert(p, Agent::Gpu) {
                stats.slc.evictions += 1;
                if wo == Agent::Gpu {
                    gpu.invalidate(w);
                }
            }
            Level::Mem
        };
        stats.gpu.fills += 1;
        if gpu.insert(p, Agent::Gpu).is_some() {
            stats.gpu.evictions += 1;
        }
        level
    }

    /// Exhaustive check of the inclusion properties.
    pub fn check_invariants(&self) -> Result<(), String> {
        for (i, cl) in self.clusters.iter().enumerate() {
            for (p, _) in cl.l1.lines() {
                if !cl.l2.contains(p) {
                    return Err(format!("cluster {i}: L1 line {:#x} missing from L2", p.0));
                }
            }
            if self.cfg.slc_cpu_policy == SlcPolicy::Exclusive {
                for (p, _) in cl.l2.lines() {
                    if self.slc.contains(p) {
                        return Err(format!("cluster {i}: line {:#x} in both L2 and SLC", p.0));
                    }
                }
            }
        }
        for (p, _) in self.gpu.lines() {
            if !self.slc.contains(p) {
                return Err(format!("GPU line {:#x} missing from SLC", p.0));
            }
        }
        Ok(())
    }

    pub fn slc_contains(&self, p: PhysAddr) -> bool {
        self.slc.contains(p)
    }
}

/// SplitMix64 finalizer, used to derive independent sub-seeds.
pub fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mem::LINE_SIZE;
    use proptest::prelude::*;

    fn quiet() -> Hierarchy {
        let mut cfg = HierarchyConfig::m1();
        cfg.latency = LatencyModel::noiseless();
        Hierarchy::new(cfg, 1)
    }

    /// Lines that all map to P-L2 set of `p` but to distinct SLC sets.
    fn l2_conflicts(h: &Hierarchy, p: PhysAddr, n: usize) -> Vec<PhysAddr> {
        let set = h.l2(Agent::PCluster).set_of(p);
        let mut out = Vec::new();
        let mut a = p.0 + LINE_SIZE;
        while out.len() < n {
            let q = PhysAddr(a);
            if h.l2(Agent::PCluster).set_of(q) == set {
                out.push(q);
            }
            a += LINE_SIZE;
        }
        out
    }

    #[test]
    fn fresh_access_goes_to_memory() {
        let mut h = quiet();
        assert_eq!(h.snapshot_stats(), HierarchyStats::default());
        let a = h.access(Agent::PCluster, PhysAddr(1 << 24), true);
        assert_eq!(a, Access { level: Level::Mem, latency: 430 });
        assert_eq!(h.now(), 430);
        let s = h.snapshot_stats();
        assert_eq!((s.p_l1.misses, s.p_l2.misses, s.slc.misses, s.mem_fills), (1, 1, 1, 1));
        assert_eq!(h.access(Agent::PCluster, PhysAddr(1 << 24), false).level, Level::L1);
        h.reset_stats();
        assert_eq!(h.snapshot_stats(), HierarchyStats::default());
    }

    #[test]
    fn l2_victim_fills_slc() {
        let mut h = quiet();
        let p = PhysAddr(1 << 24);
        let mut lines = vec![p];
        lines.extend(l2_conflicts(&h, p, 12));
        for &q in &lines {
            h.access(Agent::PCluster, q, true);
        }
        let s = h.snapshot_stats();
        assert_eq!(s.p_l2.evictions, 1);
        assert_eq!(s.slc.fills, 1);
        assert!(h.slc_contains(p));
        // Re-access comes from the SLC and leaves it (exclusive).
        let a = h.access(Agent::PCluster, p, true);
        assert_eq!(a.level, Level::Slc);
        assert_eq!(a.latency, 220);
        assert!(!h.slc_contains(p));
        h.check_invariants().unwrap();
    }

    #[test]
    fn non_inclusive_keeps_slc_copy() {
        let mut cfg = HierarchyConfig::m1();
        cfg.latency = LatencyModel::noiseless();
        cfg.slc_cpu_policy = SlcPolicy::NonInclusive;
        let mut h = Hierarchy::new(cfg, 1);
        let p = PhysAddr(1 << 24);
        h.access(Agent::PCluster, p, true);
        for q in l2_conflicts(&h, p, 12) {
            h.access(Agent::PCluster, q, true);
        }
        assert_eq!(h.access(Agent::PCluster, p, true).level, Level::Slc);
        assert!(h.slc_contains(p));
    }

    #[test]
    fn gpu_line_is_slc_hit_for_cpu() {
        let mut h = quiet();
        let p = PhysAddr(3 << 24);
        assert_eq!(h.access(Agent::Gpu, p, false).level, Level::Mem);
        assert!(h.slc_contains(p) && h.gpu_cache().contains(p));
        assert_eq!(h.access(Agent::Gpu, p, false).level, Level::GpuCache);
        let a = h.access(Agent::PCluster, p, true);
        assert_eq!((a.level, a.latency), (Level::Slc, 220));
        // Taking the line out of the SLC also drops the GPU copy.
        assert!(!h.gpu_cache().contains(p));
        h.check_invariants().unwrap();
    }

    #[test]
    fn gpu_fills_are_inclusive() {
        let mut h = quiet();
        for k in 0..10_000u64 {
            h.access(Agent::Gpu, PhysAddr((1 << 28) + k * LINE_SIZE), false);
        }
        assert_eq!(h.slc().count_owned(Agent::Gpu), 10_000);
        assert_eq!(h.now(), 0);
        h.check_invariants().unwrap();
    }

    #[test]
    fn other_cluster_spills_reach_slc() {
        let mut h = quiet();
        let n = h.config().e_l2.lines() as u64 + 5000;
        for k in 0..n {
            h.access(Agent::ECluster, PhysAddr((1 << 29) + k * LINE_SIZE), false);
        }
        assert_eq!(h.snapshot_stats().slc.fills, 5000);
        assert_eq!(h.slc().count_owned(Agent::ECluster), 5000);
    }

    #[test]
    fn determinism() {
        let run = || {
            let mut h = Hierarchy::new(HierarchyConfig::scaled(16), 9);
            for k in 0..200_000u64 {
                let agent = [Agent::PCluster, Agent::ECluster, Agent::Gpu][(k % 3) as usize];
                h.access(agent, PhysAddr(((k * 7919) % 100_000) * LINE_SIZE), true);
            }
            (h.snapshot_stats(), h.now(), h.slc().lines().collect::<Vec<_>>())
        };
        assert_eq!(run(), run());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn inclusion_invariants_hold(ops in proptest::collection::vec((0u8..3, 0u64..6000), 1..3000),
                                     non_inclusive in any::<bool>()) {
            let mut cfg = HierarchyConfig::scaled(64);
            if non_inclusive {
                cfg.slc_cpu_policy = SlcPolicy::NonInclusive;
            }
            let mut h = Hierarchy::new(cfg, 3);
            for (i, (a, l)) in ops.into_iter().enumerate() {
                let agent = [Agent::PCluster, Agent::ECluster, Agent::Gpu][a as usize];
                h.access(agent, PhysAddr(l * LINE_SIZE), true);
                if i % 97 == 0 {
                    prop_assert!(h.check_invariants().is_ok(), "{:?}", h.check_invariants());
                }
            }
            prop_assert!(h.check_invariants().is_ok(), "{:?}", h.check_invariants());
        }
    }
}
