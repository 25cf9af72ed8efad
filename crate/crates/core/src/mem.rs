//! Physical addresses, page mapping and set-index functions.

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const LINE_SIZE: u64 = 128;
pub const LINE_SHIFT: u32 = 7;
pub const DEFAULT_PAGE_SIZE: u64 = 16384;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MemError {
    #[error("address fault at virtual address {0:#x}")]
    AddressFault(u64),
    #[error("physical memory exhausted")]
    OutOfMemory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PhysAddr(pub u64);

impl PhysAddr {
    /// Line number (address without the 7 offset bits).
    #[inline]
    pub fn line(self) -> u64 {
        self.0 >> LINE_SHIFT
    }

    #[inline]
    pub fn from_line(line: u64) -> Self {
        PhysAddr(line << LINE_SHIFT)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IndexKind {
    L2Style,
    SlcStyle,
    PlainLowBits,
}

/// A set-index function.
///
/// `L2Style`: bits `[direct_hi:direct_lo]` form the low index bits and the
/// next `xor_bits` address bits, XORed with a fold of everything above them,
/// form the top bits.
///
/// `SlcStyle`: bits `[direct_hi:direct_lo]` form the index. When `xor_bits`
/// is non-zero, that many line-number bits just above the line offset are
/// XORed into the top of the index; with `xor_bits = 0` the index is the
/// plain bit range.
///
/// `PlainLowBits`: bits `[direct_hi:direct_lo]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexFn {
    pub kind: IndexKind,
    pub direct_lo: u32,
    pub direct_hi: u32,
    pub xor_bits: u32,
}

#[inline]
fn mask(bits: u32) -> u64 {
    if bits >= 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}

/// XOR of consecutive `k`-bit groups of `x`; bit `i` of the result is the
/// parity of the bits of `x` at positions congruent to `i` mod `k`.
#[inline]
pub fn xor_fold(mut x: u64, k: u32) -> u64 {
    if k == 0 {
        return 0;
    }
    let m = mask(k);
    if k.is_power_of_two() && k < 64 {
        // Fold halves together; the chunk boundaries line up for these widths.
        let mut w = 32;
        while w >= k {
            x ^= x >> w;
            w /= 2;
        }
        return x & m;
    }
    let mut r = 0;
    while x != 0 {
        r ^= x & m;
        x >>= k;
    }
    r
}

impl IndexFn {
    pub fn l2_style(sets: usize) -> Self {
        let w = log2_exact(sets);
        let xor_bits = 2.min(w);
        IndexFn {
            kind: IndexKind::L2Style,
            direct_lo: LINE_SHIFT,
            direct_hi: LINE_SHIFT + (w - xor_bits) - 1,
            xor_bits,
        }
    }

    pub fn slc_style(sets: usize) -> Self {
        let w = log2_exact(sets);
        IndexFn {
            kind: IndexKind::SlcStyle,
            direct_lo: 13,
            direct_hi: 13 + w - 1,
            xor_bits: 6.min(w),
        }
    }

    /// The unhashed `[24:13]`-style range, without the low-bit fold.
    pub fn slc_plain(sets: usize) -> Self {
        IndexFn { xor_bits: 0, ..Self::slc_style(sets) }
    }

    pub fn plain(sets: usize) -> Self {
        let w = log2_exact(sets);
        IndexFn {
            kind: IndexKind::PlainLowBits,
            direct_lo: LINE_SHIFT,
            direct_hi: LINE_SHIFT + w - 1,
            xor_bits: 0,
        }
    }

    /// Number of index bits produced.
    pub fn width(&self) -> u32 {
        let direct = self.direct_hi + 1 - self.direct_lo;
        match self.kind {
            IndexKind::L2Style => direct + self.xor_bits,
            _ => direct,
        }
    }

    pub fn sets(&self) -> usize {
        1usize << self.width()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.direct_hi < self.direct_lo {
            return Err(format!("direct_hi {} < direct_lo {}", self.direct_hi, self.direct_lo));
        }
        if self.direct_lo < LINE_SHIFT {
            return Err("index bits overlap the line offset".into());
        }
        match self.kind {
            IndexKind::SlcStyle => {
                if self.direct_lo < 13 {
                    return Err("SLC-style index must exclude the lowest 13 bits".into());
                }
                if self.xor_bits > self.width() || self.xor_bits > self.direct_lo - LINE_SHIFT {
                    return Err("SLC-style fold wider than the index".into());
                }
            }
            IndexKind::PlainLowBits if self.xor_bits != 0 => {
                return Err("plain index takes no xor bits".into());
            }
            _ => {}
        }
        if self.width() > 30 {
            return Err("index too wide".into());
        }
        Ok(())
    }

    #[inline]
    pub fn set_index(&self, p: PhysAddr) -> usize {
        let a = p.0;
        let direct_w = self.direct_hi + 1 - self.direct_lo;
        let direct = (a >> self.direct_lo) & mask(direct_w);
        let idx = match self.kind {
            IndexKind::PlainLowBits => direct,
            IndexKind::L2Style => {
                let above = self.direct_hi + 1;
                let top = (a >> above) & mask(self.xor_bits);
                let fold = xor_fold(a >> (above + self.xor_bits), self.xor_bits);
                direct | ((top ^ fold) << direct_w)
            }
            IndexKind::SlcStyle => {
                if self.xor_bits == 0 {
                    direct
                } else {
                    let low = (a >> LINE_SHIFT) & mask(self.xor_bits);
                    direct ^ (low << (direct_w - self.xor_bits))
                }
            }
        };
        idx as usize
    }
}

pub fn log2_exact(n: usize) -> u32 {
    assert!(n.is_power_of_two(), "{n} is not a power of two");
    n.trailing_zeros()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum MapMode {
    Identity,
    OnDemand,
    Randomized { seed: u64 },
}

/// Virtual to physical page mapping over a window of physical pages.
#[derive(Debug, Clone)]
pub struct PageMap {
    pub page_size: u64,
    mode: MapMode,
    strict: bool,
    phys_base_page: u64,
    phys_pages: u64,
    table: HashMap<u64, u64>,
    used: HashSet<u64>,
    next_free: u64,
    rng: ChaCha8Rng,
}

impl PageMap {
    pub fn new(mode: MapMode, page_size: u64, phys_base: u64, phys_size: u64) -> Self {
        assert!(page_size.is_power_of_two() && page_size >= LINE_SIZE);
        let seed = match mode {
            MapMode::Randomized { seed } => seed,
            _ => 0,
        };
        PageMap {
            page_size,
            mode,
            strict: false,
            phys_base_page: phys_base / page_size,
            phys_pages: phys_size / page_size,
            table: HashMap::new(),
            used: HashSet::new(),
            next_free: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn identity(phys_size: u64) -> Self {
        Self::new(MapMode::Identity, DEFAULT_PAGE_SIZE, 0, phys_size)
    }

    /// In strict mode untranslated pages fault instead of being allocated.
    pub fn set_strict(&mut self, strict: bool) {
        self.strict = strict;
    }

    pub fn mode(&self) -> MapMode {
        self.mode
    }

    pub fn mapped_pages(&self) -> usize {
        self.table.len()
    }

    fn alloc_page(&mut self) -> Result<u64, MemError> {
        if self.used.len() as u64 >= self.phys_pages {
            return Err(MemError::OutOfMemory);
        }
        let page = match self.mode {
            MapMode::Identity => unreachable!(),
            MapMode::OnDemand => {
                while self.used.contains(&self.next_free) {
                    self.next_free += 1;
                }
                let p = self.next_free;
                self.next_free += 1;
                p
            }
            MapMode::Randomized { .. } => loop {
                let p = self.rng.random_range(0..self.phys_pages);
                if !self.used.contains(&p) {
                    break p;
                }
            },
        };
        self.used.insert(page);
        Ok(self.phys_base_page + page)
    }

    /// Map a virtual page ahead of use (needed in strict mode).
    pub fn map_page(&mut self, vpn: u64) -> Result<u64, MemError> {
        if let Some(&p) = self.table.get(&vpn) {
            return Ok(p);
        }
        let p = self.alloc_page()?;
        self.table.insert(vpn, p);
        Ok(p)
    }

    pub fn map_range(&mut self, vaddr: u64, len: u64) -> Result<(), MemError> {
        if self.mode == MapMode::Identity || len == 0 {
            return Ok(());
        }
        let first = vaddr / self.page_size;
        let last = (vaddr + len - 1) / self.page_size;
        for vpn in first..=last {
            self.map_page(vpn)?;
        }
        Ok(())
    }

    /// Drop the mapping of a virtual range and release its physical pages.
    pub fn unmap_range(&mut self, vaddr: u64, len: u64) {
        if self.mode == MapMode::Identity || len == 0 {
            return;
        }
        let first = vaddr / self.page_size;
        let last = (vaddr + len - 1) / self.page_size;
        for vpn in first..=last {
            if let Some(p) = self.table.remove(&vpn) {
                self.used.remove(&(p - self.phys_base_page));
            }
        }
    }

    #[inline]
    pub fn translate(&mut self, vaddr: u64) -> Result<PhysAddr, MemError> {
        if self.mode == MapMode::Identity {
            let shift = self.page_size.trailing_zeros();
            let page = vaddr >> shift;
            if page >= self.phys_pages {
                return Err(MemError::AddressFault(vaddr));
            }
            return Ok(PhysAddr(((self.phys_base_page + page) << shift) | (vaddr & (self.page_size - 1))));
        }
        let vpn = vaddr >> self.page_size.trailing_zeros();
        let off = vaddr & (self.page_size - 1);
        let ppn = match self.table.get(&vpn) {
            Some(&p) => p,
            None if self.strict => return Err(MemError::AddressFault(vaddr)),
            None => self.map_page(vpn)?,
        };
        Ok(PhysAddr(ppn * self.page_size + off))
    }
}

/// Which part of the address space an allocation lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    /// Mapped by the primary page map (identity by default).
    Direct,
    /// Mapped to randomly chosen physical pages, like an ordinary heap
    /// allocation on a long-running system.
    Scattered,
}

/// Virtual address space of the simulated machine: a bump allocator over two
/// regions that split physical memory in half.
#[derive(Debug, Clone)]
pub struct AddressSpace {
    direct: PageMap,
    scattered: PageMap,
    split: u64,
    top: u64,
    next_direct: u64,
    next_scattered: u64,
}

impl AddressSpace {
    pub fn new(mem_size: u64, page_size: u64, mode: MapMode, scatter_seed: u64) -> Self {
        let split = mem_size / 2;
        AddressSpace {
            direct: PageMap::new(mode, page_size, 0, split),
            scattered: PageMap::new(MapMode::Randomized { seed: scatter_seed }, page_size, split, mem_size - split),
            split,
            top: mem_size,
            // Keep page 0 free so no buffer starts at address zero.
            next_direct: 1 << 20,
            next_scattered: split,
        }
    }

    pub fn page_size(&self) -> u64 {
        self.direct.page_size
    }

    /// Reserve `bytes` of virtual space aligned to `align`.
    pub fn alloc(&mut self, bytes: u64, align: u64, region: Region) -> Result<u64, MemError> {
        let align = align.max(LINE_SIZE);
        let (next, limit) = match region {
            Region::Direct => (&mut self.next_direct, self.split),
            Region::Scattered => (&mut self.next_scattered, self.top),
        };
        let base = next.div_ceil(align) * align;
        let end = base.checked_add(bytes.max(1)).ok_or(MemError::OutOfMemory)?;
        if end > limit {
            return Err(MemError::OutOfMemory);
        }
        *next = end;
        Ok(base)
    }

    /// Point a scattered range at fresh physical pages.
    pub fn remap(&mut self, vaddr: u64, len: u64) -> Result<(), MemError> {
        if vaddr >= self.split {
            self.scattered.unmap_range(vaddr, len);
            self.scattered.map_range(vaddr, len)
        } else {
            Ok(())
        }
    }

    #[inline]
    pub fn translate(&mut self, vaddr: u64) -> Result<PhysAddr, MemError> {
        if vaddr < self.split {
            self.direct.translate(vaddr)
        } else if vaddr < self.top {
            self.scattered.translate(vaddr)
        } else {
            Err(MemError::AddressFault(vaddr))
        }
    }
}
