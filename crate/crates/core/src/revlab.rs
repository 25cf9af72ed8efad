//! Reverse-engineering experiments: latency bands, capacity curves, the
//! inclusiveness test, stride scans and the replacement probe.

use serde::{Deserialize, Serialize};

use crate::cache::Agent;
use crate::hierarchy::Hierarchy;
use crate::latency::Level;
use crate::mem::{MemError, PhysAddr, Region, LINE_SIZE};
use crate::probe::{profile, Pattern, ProbeBuffer};

/// Warm-up passes before a buffer counts as steady.
pub const WARMUP_PROFILES: usize = 8;
/// Passes averaged per measurement.
pub const MEASURED_PROFILES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub scenario: String,
    pub samples: usize,
    pub mean: f64,
    pub std: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, var.sqrt())
}

/// Walks a private arena handing out never-touched lines.
struct Fresh {
    next: u64,
}

impl Fresh {
    fn new(h: &mut Hierarchy) -> Result<Self, MemError> {
        Ok(Fresh { next: h.alloc(1 << 30, 1 << 20, Region::Direct)? })
    }
}

/// Mean latency of each hierarchy level, measured the way a spy would.
pub fn latency_quantification(h: &Hierarchy, samples: usize) -> Result<Vec<LatencyRow>, MemError> {
    let p = Agent::PCluster;
    let mut rows = Vec::new();
    let mut push = |name: &str, v: Vec<f64>| {
        let (mean, std) = mean_std(&v);
        rows.push(LatencyRow { scenario: name.into(), samples: v.len(), mean, std });
    };

    // L1: touch, then touch again.
    let mut w = h.clone();
    let mut fr = Fresh::new(&mut w)?;
    let v = (0..samples)
        .map(|_| {
            let a = fr.next;
            fr.next += LINE_SIZE;
            w.access_virt(p, a, true);
            w.access_virt(p, a, true).latency as f64
        })
        .collect();
    push("l1_hit", v);

    // L2: touch, push out of L1 with lines of the same L1 set, re-touch.
    let mut w = h.clone();
    let base = w.alloc(1 << 30, 1 << 20, Region::Direct)?;
    let l1 = w.config().p_l1.clone();
    let l1_way_bytes = l1.sets as u64 * LINE_SIZE;
    let mut v = Vec::with_capacity(samples);
    for s in 0..samples as u64 {
        // Each sample uses its own column of the arena.
        let x = base + (s % l1.sets as u64) * LINE_SIZE + (s / l1.sets as u64) * 64 * l1_way_bytes;
        w.access_virt(p, x, true);
        for k in 1..=l1.ways as u64 {
            w.access_virt(p, x + k * l1_way_bytes, true);
        }
        v.push(w.access_virt(p, x, true).latency as f64);
    }
    push("l2_hit", v);

    // SLC: touch, evict from L2 with a white-box eviction set, re-touch.
    let mut w = h.clone();
    let base = w.alloc(1 << 30, 1 << 20, Region::Direct)?;
    let ways = w.config().p_l2.ways;
    // Addresses sharing bits [17:7] differ only in the hashed top bits.
    let step = 1u64 << 18;
    let mut v = Vec::with_capacity(samples);
    for s in 0..samples as u64 {
        let x = base + (s % 2048) * LINE_SIZE + (s / 2048) * (1 << 26);
        let px = w.translate(x)?;
        let set = w.l2(p).set_of(px);
        w.access_virt(p, x, true);
        let mut found = 0;
        let mut m = 1;
        while found < ways {
            let y = x + m * step;
            m += 1;
            let py = w.translate(y)?;
            if w.l2(p).set_of(py) == set {
                w.access_virt(p, y, true);
                found += 1;
            }
        }
        v.push(w.access_virt(p, x, true).latency as f64);
    }
    push("slc_hit", v);

    // Memory: never-touched lines.
    let mut w = h.clone();
    let mut fr = Fresh::new(&mut w)?;
    let v = (0..samples)
        .map(|_| {
            let a = fr.next;
            fr.next += LINE_SIZE;
            w.access_virt(p, a, true).latency as f64
        })
        .collect();
    push("mem", v);

    // GPU brings a line into the SLC; the CPU then reads it.
    let mut w = h.clone();
    let mut fr = Fresh::new(&mut w)?;
    let v = (0..samples)
        .map(|_| {
            let a = fr.next;
            fr.next += LINE_SIZE;
            w.access_virt(Agent::Gpu, a, false);
            w.access_virt(p, a, true).latency as f64
        })
        .collect();
    push("gpu_then_cpu", v);
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: u64,
    pub l2_hits: f64,
    pub slc_hits: f64,
}

/// Averaged hit counts of a buffer after warm-up.
fn steady_hits(h: &mut Hierarchy, b: &mut ProbeBuffer, pattern: Pattern) -> (f64, f64) {
    for _ in 0..WARMUP_PROFILES {
        profile(h, b, Agent::PCluster, pattern);
    }
    let (mut l2, mut slc) = (0.0, 0.0);
    for _ in 0..MEASURED_PROFILES {
        let p = profile(h, b, Agent::PCluster, pattern);
        l2 += p.counts.local_hits as f64;
        slc += p.counts.slc_hits as f64;
    }
    (l2 / MEASURED_PROFILES as f64, slc / MEASURED_PROFILES as f64)
}

/// Hit counts against buffer size (stride 128).
pub fn capacity_curves(h: &Hierarchy, pattern: Pattern, sizes: &[usize]) -> Result<Vec<CurvePoint>, MemError> {
    sizes
        .iter()
        .map(|&n| {
            let mut w = h.clone();
            let mut b = ProbeBuffer::alloc(&mut w, LINE_SIZE, n, Region::Direct)?;
            let (l2, slc) = steady_hits(&mut w, &mut b, pattern);
            Ok(CurvePoint { x: n as u64, l2_hits: l2, slc_hits: slc })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InclusionDecision {
    Exclusive,
    NonInclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InclusionPoint {
    pub size: u64,
    pub seq_slc_hits: u64,
    pub alt_slc_hits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InclusivenessResult {
    pub points: Vec<InclusionPoint>,
    /// max |seq − alt| over sizes, as a fraction of SLC lines.
    pub max_gap: f64,
    pub decision: InclusionDecision,
}

/// Exclusive runs stay near 0.1 over a 1.6e5-line sweep while non-inclusive
/// runs exceed 0.3.
pub const INCLUSION_THRESHOLD: f64 = 0.2;

/// Buffer1 sizes 0..=160000 lines in 8000-line steps, rescaled.
pub fn default_inclusion_sizes(cfg: &crate::hierarchy::HierarchyConfig) -> Vec<usize> {
    (0..=20).map(|k| cfg.scale_lines(k as f64 * 8000.0)).collect()
}

fn inclusion_arm(h: &Hierarchy, size: usize, pattern: Pattern) -> Result<u64, MemError> {
    let mut w = h.clone();
    let slc_lines = w.config().slc.lines();
    let mut b1 = ProbeBuffer::alloc(&mut w, LINE_SIZE, size, Region::Direct)?;
    let mut b2 = ProbeBuffer::alloc(&mut w, LINE_SIZE, slc_lines, Region::Direct)?;
    let cpu = Agent::PCluster;
    // 1: CPU loads buffer1.
    profile(&mut w, &mut b1, cpu, pattern);
    // 2: GPU loads buffer2 (inclusive fill).
    profile(&mut w, &mut b2, Agent::Gpu, Pattern::Sequential);
    // 3: CPU reloads buffer1; alternated flips direction.
    profile(&mut w, &mut b1, cpu, pattern);
    // 4: CPU loads buffer2, counting SLC hits.
    Ok(profile(&mut w, &mut b2, cpu, Pattern::Sequential).counts.slc_hits)
}

/// Discriminates an exclusive SLC from a non-inclusive one by comparing how
/// much of a GPU-loaded buffer survives sequential versus alternated reloads
/// of a CPU buffer.
pub fn inclusiveness_test(h: &Hierarchy, sizes: &[usize]) -> Result<InclusivenessResult, MemError> {
    let slc_lines = h.config().slc.lines() as f64;
    let mut points = Vec::new();
    let mut max_gap: f64 = 0.0;
    for &n in sizes {
        let seq = inclusion_arm(h, n, Pattern::Sequential)?;
        let alt = inclusion_arm(h, n, Pattern::Alternated)?;
        max_gap = max_gap.max((seq as f64 - alt as f64).abs() / slc_lines);
        points.push(InclusionPoint { size: n as u64, seq_slc_hits: seq, alt_slc_hits: alt });
    }
    let decision = if max_gap > INCLUSION_THRESHOLD {
        InclusionDecision::NonInclusive
    } else {
        InclusionDecision::Exclusive
    };
    Ok(InclusivenessResult { points, max_gap, decision })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrideResult {
    pub stride: u64,
    pub l2_plateau: f64,
    pub slc_plateau: f64,
    pub curve: Vec<CurvePoint>,
}

/// For each stride, the highest steady hit counts over the size sweep.
pub fn stride_scan(h: &Hierarchy, strides: &[u64], sizes: &[usize]) -> Result<Vec<StrideResult>, MemError> {
    let mut out = Vec::new();
    for &stride in strides {
        assert!(stride.is_power_of_two() && stride >= LINE_SIZE);
        let mut curve = Vec::new();
        for &n in sizes {
            let mut w = h.clone();
            let mut b = ProbeBuffer::alloc(&mut w, stride, n, Region::Direct)?;
            let (l2, slc) = steady_hits(&mut w, &mut b, Pattern::Alternated);
            curve.push(CurvePoint { x: n as u64, l2_hits: l2, slc_hits: slc });
        }
        let l2_plateau = curve.iter().map(|c| c.l2_hits).fold(0.0, f64::max);
        let slc_plateau = curve.iter().map(|c| c.slc_hits).fold(0.0, f64::max);
        out.push(StrideResult { stride, l2_plateau, slc_plateau, curve });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplacementPoint {
    /// Each buffer's size as a fraction of the probed cache's capacity.
    pub fraction: f64,
    pub l2_buffer_lines: u64,
    pub slc_buffer_lines: u64,
    pub buf1_l2: u64,
    pub buf2_l2: u64,
    pub buf1_slc: u64,
    pub buf2_slc: u64,
}

/// Load buffer1 then buffer2, probe buffer2 then buffer1, all in order.
fn two_buffer_probe(h: &Hierarchy, stride: u64, n: usize) -> Result<(u64, u64, u64, u64), MemError> {
    let mut w = h.clone();
    let both = ProbeBuffer::alloc(&mut w, stride, 2 * n, Region::Direct)?;
    let mut b1 = both.slice(0, n);
    let mut b2 = both.slice(n, n);
    let cpu = Agent::PCluster;
    profile(&mut w, &mut b1, cpu, Pattern::Sequential);
    profile(&mut w, &mut b2, cpu, Pattern::Sequential);
    let p2 = profile(&mut w, &mut b2, cpu, Pattern::Sequential).counts;
    let p1 = profile(&mut w, &mut b1, cpu, Pattern::Sequential).counts;
    Ok((p1.local_hits, p2.local_hits, p1.slc_hits, p2.slc_hits))
}

/// Two equal buffers, loaded in order and probed in reverse order. The L2
/// evidence comes from a stride-128 pair sized against the L2; the SLC
/// evidence from a stride-8192 pair sized against the SLC, which keeps the
/// L2 out of the way.
pub fn replacement_probe(h: &Hierarchy, fractions: &[f64]) -> Result<Vec<ReplacementPoint>, MemError> {
    let l2_lines = h.config().p_l2.lines() as f64;
    let slc_lines = h.config().slc.lines() as f64;
    fractions
        .iter()
        .map(|&f| {
            let n2 = (f * l2_lines).round() as usize;
            let ns = (f * slc_lines).round() as usize;
            let (buf1_l2, buf2_l2, _, _) = two_buffer_probe(h, LINE_SIZE, n2)?;
            let (_, _, buf1_slc, buf2_slc) = two_buffer_probe(h, 8192, ns)?;
            Ok(ReplacementPoint {
                fraction: f,
                l2_buffer_lines: n2 as u64,
                slc_buffer_lines: ns as u64,
                buf1_l2,
                buf2_l2,
                buf1_slc,
                buf2_slc,
            })
        })
        .collect()
}

/// Where a single CPU access was serviced; used by tests.
pub fn level_of(h: &mut Hierarchy, p: PhysAddr) -> Level {
    h.access(Agent::PCluster, p, false).level
}
