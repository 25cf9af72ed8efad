//! One set-associative cache level.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mem::{xor_fold, IndexFn, IndexKind, PhysAddr, LINE_SHIFT, LINE_SIZE};

/// The agent that brought a line into a cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agent {
    /// Performance cluster.
    PCluster,
    /// Efficiency cluster.
    ECluster,
    Gpu,
}

impl Agent {
    pub fn cluster_index(self) -> Option<usize> {
        match self {
            Agent::PCluster => Some(0),
            Agent::ECluster => Some(1),
            Agent::Gpu => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy")]
pub enum Replacement {
    Lru,
    PseudoRandom { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheLevelConfig {
    pub name: String,
    pub sets: usize,
    pub ways: usize,
    pub line_size: u64,
    pub index_fn: IndexFn,
    pub replacement: Replacement,
}

impl CacheLevelConfig {
    pub fn new(name: &str, capacity: u64, ways: usize, index: fn(usize) -> IndexFn, replacement: Replacement) -> Self {
        let sets = (capacity / LINE_SIZE) as usize / ways;
        CacheLevelConfig {
            name: name.to_string(),
            sets,
            ways,
            line_size: LINE_SIZE,
            index_fn: index(sets),
            replacement,
        }
    }

    pub fn lines(&self) -> usize {
        self.sets * self.ways
    }

    pub fn capacity(&self) -> u64 {
        self.lines() as u64 * self.line_size
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.line_size != LINE_SIZE {
            return Err(format!("{}: line size must be {LINE_SIZE}", self.name));
        }
        if self.ways == 0 || self.ways > 64 {
            return Err(format!("{}: ways must be in 1..=64", self.name));
        }
        if !self.sets.is_power_of_two() {
            return Err(format!("{}: set count must be a power of two", self.name));
        }
        self.index_fn.validate().map_err(|e| format!("{}: {e}", self.name))?;
        if self.index_fn.sets() != self.sets {
            return Err(format!(
                "{}: index function yields {} sets, geometry has {}",
                self.name,
                self.index_fn.sets(),
                self.sets
            ));
        }
        Ok(())
    }
}

const INVALID: u32 = u32::MAX;

/// Index of `t` in a set's tags. Compares four ways at a time without
/// branching inside a group.
#[inline]
fn scan(set: &[u32], t: u32) -> Option<usize> {
    let mut chunks = set.chunks_exact(4);
    let mut i = 0;
    for c in &mut chunks {
        let m = (c[0] == t) as u32 | ((c[1] == t) as u32) << 1 | ((c[2] == t) as u32) << 2 | ((c[3] == t) as u32) << 3;
        if m != 0 {
            return Some(i + m.trailing_zeros() as usize);
        }
        i += 4;
    }
    chunks.remainder().iter().position(|&x| x == t).map(|w| i + w)
}

/// [`IndexFn`] with its masks precomputed; same results, fewer branches.
#[derive(Debug, Clone)]
struct FastIndex {
    kind: IndexKind,
    lo: u32,
    direct_w: u32,
    direct_mask: u64,
    xor_bits: u32,
    xor_mask: u64,
}

impl FastIndex {
    fn new(f: &IndexFn) -> Self {
        let direct_w = f.direct_hi + 1 - f.direct_lo;
        FastIndex {
            kind: f.kind,
            lo: f.direct_lo,
            direct_w,
            direct_mask: (1u64 << direct_w) - 1,
            xor_bits: f.xor_bits,
            xor_mask: (1u64 << f.xor_bits) - 1,
        }
    }

    #[inline]
    fn set_index(&self, p: PhysAddr) -> usize {
        let a = p.0;
        let direct = (a >> self.lo) & self.direct_mask;
        let idx = match self.kind {
            IndexKind::PlainLowBits => direct,
            IndexKind::SlcStyle => direct ^ (((a >> LINE_SHIFT) & self.xor_mask) << (self.direct_w - self.xor_bits)),
            IndexKind::L2Style => {
                let above = self.lo + self.direct_w;
                let top = (a >> above) & self.xor_mask;
                let fold = xor_fold(a >> (above + self.xor_bits), self.xor_bits);
                direct | ((top ^ fold) << self.direct_w)
            }
        };
        idx as usize
    }
}

/// Live contents of one cache level, stored way-major per set.
#[derive(Debug, Clone)]
pub struct CacheState {
    cfg: CacheLevelConfig,
    index: FastIndex,
    tags: Vec<u32>,
    stamps: Vec<u64>,
    owners: Vec<Agent>,
    tick: u64,
    random: Option<ChaCha8Rng>,
}

impl CacheState {
    pub fn new(cfg: CacheLevelConfig, seed_mix: u64) -> Self {
        let n = cfg.lines();
        let random = match cfg.replacement {
            Replacement::Lru => None,
            Replacement::PseudoRandom { seed } => Some(ChaCha8Rng::seed_from_u64(seed ^ seed_mix)),
        };
        CacheState {
            index: FastIndex::new(&cfg.index_fn),
            cfg,
            tags: vec![INVALID; n],
            stamps: vec![0; n],
            owners: vec![Agent::PCluster; n],
            tick: 0,
            random,
        }
    }

    pub fn config(&self) -> &CacheLevelConfig {
        &self.cfg
    }

    /// Restart the replacement stream, keeping the contents.
    pub fn reseed(&mut self, seed_mix: u64) {
        if let Replacement::PseudoRandom { seed } = self.cfg.replacement {
            self.random = Some(ChaCha8Rng::seed_from_u64(seed ^ seed_mix));
        }
    }

    #[inline]
    pub fn set_of(&self, p: PhysAddr) -> usize {
        self.index.set_index(p)
    }

    #[inline]
    fn tag(p: PhysAddr) -> u32 {
        let line = p.line();
        debug_assert!(line < INVALID as u64);
        line as u32
    }

    /// Slot of `p` if valid.
    #[inline]
    pub fn find(&self, p: PhysAddr) -> Option<usize> {
        let base = self.set_of(p) * self.cfg.ways;
        scan(&self.tags[base..base + self.cfg.ways], Self::tag(p)).map(|w| base + w)
    }

    #[inline]
    pub fn contains(&self, p: PhysAddr) -> bool {
        self.find(p).is_some()
    }

    /// Mark a slot most recently used.
    #[inline]
    pub fn touch(&mut self, slot: usize) {
        self.tick += 1;
        self.stamps[slot] = self.tick;
    }

    #[inline]
    pub fn owner(&self, slot: usize) -> Agent {
        self.owners[slot]
    }

    #[inline]
    pub fn set_owner(&mut self, slot: usize, a: Agent) {
        self.owners[slot] = a;
    }

    /// First slot of the set holding `p`, and the slot of `p` if valid.
    #[inline]
    pub fn lookup(&self, p: PhysAddr) -> (usize, Option<usize>) {
        let base = self.set_of(p) * self.cfg.ways;
        (base, scan(&self.tags[base..base + self.cfg.ways], Self::tag(p)).map(|w| base + w))
    }

    /// Insert a line that is not present. Returns the evicted line and its owner.
    #[inline]
    pub fn insert(&mut self, p: PhysAddr, owner: Agent) -> Option<(PhysAddr, Agent)> {
        let base = self.set_of(p) * self.cfg.ways;
        self.insert_at(base, p, owner)
    }

    /// [`CacheState::insert`] with the set already known from [`CacheState::lookup`].
    #[inline]
    pub fn insert_at(&mut self, base: usize, p: PhysAddr, owner: Agent) -> Option<(PhysAddr, Agent)> {
        let ways = self.cfg.ways;
        let slot = match &mut self.random {
            Some(rng) => match scan(&self.tags[base..base + ways], INVALID) {
                Some(w) => base + w,
                None => base + rng.random_range(0..ways),
            },
            None => {
                // Invalid slots carry stamp 0, so the oldest slot is an
                // invalid one whenever the set has room.
                let stamps = &self.stamps[base..base + ways];
                let mut best = 0;
                for i in 1..ways {
                    if stamps[i] < stamps[best] {
                        best = i;
                    }
                }
                base + best
            }
        };
        let old = self.tags[slot];
        let evicted = (old != INVALID).then(|| (PhysAddr::from_line(old as u64), self.owners[slot]));
        self.tags[slot] = Self::tag(p);
        self.owners[slot] = owner;
        self.touch(slot);
        evicted
    }

    /// Invalidate `p`, returning its owner if it was present.
    #[inline]
    pub fn invalidate(&mut self, p: PhysAddr) -> Option<Agent> {
        let slot = self.find(p)?;
        self.tags[slot] = INVALID;
        self.stamps[slot] = 0;
        Some(self.owners[slot])
    }

    pub fn flush(&mut self) {
        self.tags.fill(INVALID);
        self.stamps.fill(0);
    }

    pub fn valid_count(&self) -> usize {
        self.tags.iter().filter(|&&t| t != INVALID).count()
    }

    pub fn count_owned(&self, a: Agent) -> usize {
        self.tags.iter().zip(&self.owners).filter(|(&t, &o)| t != INVALID && o == a).count()
    }

    /// All valid lines with their owners.
    pub fn lines(&self) -> impl Iterator<Item = (PhysAddr, Agent)> + '_ {
        self.tags
            .iter()
            .zip(&self.owners)
            .filter(|(&t, _)| t != INVALID)
            .map(|(&t, &o)| (PhysAddr::from_line(t as u64), o))
    }

    /// Lines of one set ordered from least to most recently used.
    pub fn recency_order(&self, set: usize) -> Vec<PhysAddr> {
        let base = set * self.cfg.ways;
        let mut v: Vec<(u64, u32)> = (base..base + self.cfg.ways)
            .filter(|&s| self.tags[s] != INVALID)
            .map(|s| (self.stamps[s], self.tags[s]))
            .collect();
        v.sort_unstable();
        v.into_iter().map(|(_, t)| PhysAddr::from_line(t as u64)).collect()
    }
}
