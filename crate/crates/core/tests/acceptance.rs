//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! Run all of them with `cargo test --test acceptance`, or a subset by
//! number: `cargo test --test acceptance -- 7 9`.
//!
//! A few criteria are out of reach for the model as built; they are listed
//! in `KNOWN_FAILING`, still run, and still print FAIL. Any other failure
//! makes the target exit nonzero.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slcsim::attacks::fingerprint::{collect_dataset, cross_validate, shuffled_control, DatasetConfig};
use slcsim::attacks::frame::{frame_fidelity, FrameProbeConfig, PeakMode};
use slcsim::attacks::pixel::{random_binary_image, steal_region, PixelConfig, PixelMode, PixelStealer};
use slcsim::attacks::snoop::{barcode_batch, digit_batch, digit_library, snoop_barcode, snoop_digits, DigitStats, SnoopConfig};
use slcsim::attacks::svm::SvmParams;
use slcsim::attacks::{channel_scope, rendering_benchmark, BenchmarkConfig, ChannelKind};
use slcsim::experiment::{run, ExperimentConfig};
use slcsim::hierarchy::SlcPolicy;
use slcsim::latency::{classify_latency, HitClass, LatencyModel, Level};
use slcsim::mitigation::{evaluate_mitigation, threshold, MaskKind, MB};
use slcsim::probe::Pattern;
use slcsim::revlab::{capacity_curves, default_inclusion_sizes, inclusiveness_test, replacement_probe, stride_scan, InclusionDecision};
use slcsim::victims::{CompressionModel, FrameSchedule, NoiseSpec, Placement};
use slcsim::{Hierarchy, HierarchyConfig};

/// Criteria that fail for structural reasons of the model; see the README.
const KNOWN_FAILING: &[u32] = &[5, 12, 13];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn desk(scale: u64) -> Hierarchy {
    Hierarchy::new(HierarchyConfig::scaled(scale), 1)
}

fn c1() -> Outcome {
    let m = LatencyModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let levels = [(Level::L1, HitClass::LocalHit), (Level::L2, HitClass::LocalHit), (Level::Slc, HitClass::SlcHit), (Level::Mem, HitClass::Miss)];
    let n = 100_000;
    let wrong = (0..n)
        .filter(|_| {
            let (l, want) = levels[rng.random_range(0..levels.len())];
            classify_latency(&m, m.draw(l, &mut rng)) != want
        })
        .count();
    let rate = wrong as f64 / n as f64;
    outcome(rate < 0.001, format!("mislabeled {wrong}/{n} ({:.4}%)", rate * 100.0))
}

fn c2() -> Outcome {
    let h = desk(8);
    let cfg = h.config().clone();
    let (l2, slc) = (cfg.p_l2.lines() as f64, cfg.slc.lines() as f64);
    let sizes: Vec<usize> = (1..=20).map(|k| cfg.scale_lines(k as f64 * 8000.0)).collect();
    let alt = capacity_curves(&h, Pattern::Alternated, &sizes).unwrap();
    let seq = capacity_curves(&h, Pattern::Sequential, &sizes[19..]).unwrap()[0];
    let alt_l2 = alt.iter().map(|p| p.l2_hits).fold(0.0, f64::max) / l2;
    let alt_slc = alt.iter().map(|p| p.slc_hits).fold(0.0, f64::max) / (0.9 * slc);
    let seq_l2 = seq.l2_hits / l2;
    let seq_slc = seq.slc_hits / slc;
    let pass = (alt_l2 - 1.0).abs() <= 0.05 && (alt_slc - 1.0).abs() <= 0.05 && seq_l2 < 0.05 && seq_slc >= 1.2;
    outcome(
        pass,
        format!(
            "alternated L2 {alt_l2:.3} of capacity, SLC {alt_slc:.3} of 0.9x capacity; sequential at 160k lines L2 {seq_l2:.3}, SLC {seq_slc:.3} of capacity"
        ),
    )
}

fn c3() -> Outcome {
    let mut correct = [0; 2];
    for (i, (policy, want)) in
        [(SlcPolicy::Exclusive, InclusionDecision::Exclusive), (SlcPolicy::NonInclusive, InclusionDecision::NonInclusive)].into_iter().enumerate()
    {
        let mut cfg = HierarchyConfig::scaled(16);
        cfg.slc_cpu_policy = policy;
        let sizes = default_inclusion_sizes(&cfg);
        for seed in 0..10 {
            let r = inclusiveness_test(&Hierarchy::new(cfg.clone(), seed), &sizes).unwrap();
            correct[i] += (r.decision == want) as u32;
        }
    }
    outcome(correct == [10, 10], format!("exclusive {}/10, non-inclusive {}/10", correct[0], correct[1]))
}

fn c4() -> Outcome {
    let h = desk(8);
    let slc = h.config().slc.lines();
    let sizes: Vec<usize> = (1..=40).map(|k| k * slc / 16).collect();
    let strides: Vec<u64> = (7..=14).map(|b| 1u64 << b).collect();
    let r = stride_scan(&h, &strides, &sizes).unwrap();
    let mut pass = true;
    let mut l2_ratios = Vec::new();
    for w in r.windows(2).filter(|w| (256..=8192).contains(&w[1].stride)) {
        let q = w[1].l2_plateau / w[0].l2_plateau;
        pass &= (0.45..=0.55).contains(&q);
        l2_ratios.push(format!("{q:.2}"));
    }
    let flat: Vec<f64> = r.iter().filter(|s| s.stride <= 8192).map(|s| s.slc_plateau).collect();
    let ref_slc = flat[0];
    let spread = flat.iter().map(|x| (x / ref_slc - 1.0).abs()).fold(0.0, f64::max);
    let last = r[r.len() - 1].slc_plateau / r[r.len() - 2].slc_plateau;
    pass &= spread <= 0.10 && (0.45..=0.55).contains(&last);
    outcome(pass, format!("L2 ratios [{}]; SLC spread {:.3} up to 8192, ratio at 16384 {last:.3}", l2_ratios.join(" "), spread))
}

fn c5() -> Outcome {
    let h = desk(8);
    let pts = replacement_probe(&h, &[0.3, 0.4, 0.45, 0.55, 0.6, 0.7, 0.8, 1.0]).unwrap();
    let over: Vec<_> = pts.iter().filter(|p| p.fraction > 0.5).collect();
    let lru_ok = over.iter().all(|p| (p.buf1_l2 as f64) < 0.1 * p.buf2_l2 as f64);
    let mut worst: f64 = 0.0;
    for p in &pts {
        let denom = p.buf1_slc.max(p.buf2_slc).max(1) as f64;
        worst = worst.max((p.buf1_slc as f64 - p.buf2_slc as f64).abs() / denom);
    }
    let l2: Vec<String> = over.iter().map(|p| format!("{}/{}", p.buf1_l2, p.buf2_l2)).collect();
    let slc: Vec<String> = pts.iter().map(|p| format!("{}/{}", p.buf1_slc, p.buf2_slc)).collect();
    outcome(
        lru_ok && worst < 0.05,
        format!("L2 buf1/buf2 over capacity [{}]; SLC buf1/buf2 [{}], worst gap {:.3}", l2.join(" "), slc.join(" "), worst),
    )
}

fn c6() -> Outcome {
    let h = desk(16);
    let loads: Vec<u64> = (0..=8).map(|k| h.config().scale_lines(k as f64 * 4096.0) as u64).collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for p in Placement::ALL {
        let s = channel_scope(&h, ChannelKind::SlcOccupancy, p, &loads, 10).unwrap();
        pass &= s.mean_fit.slope > 0.0 && s.mean_fit.r2 >= 0.95;
        parts.push(format!("slc/{} r2 {:.3}", p.name(), s.mean_fit.r2));
    }
    for p in [Placement::OtherClusterCpu, Placement::Gpu] {
        let s = channel_scope(&h, ChannelKind::L2Occupancy, p, &loads, 10).unwrap();
        pass &= s.raw_fit.slope_t.abs() < 2.0;
        parts.push(format!("l2/{} |t| {:.2}", p.name(), s.raw_fit.slope_t.abs()));
    }
    outcome(pass, parts.join(", "))
}

fn c7() -> Outcome {
    let h = desk(16);
    let mut pass = true;
    let mut parts = Vec::new();
    let cases = [
        (ChannelKind::SlcOccupancy, Placement::SameClusterCpu, true),
        (ChannelKind::SlcOccupancy, Placement::OtherClusterCpu, true),
        (ChannelKind::SlcOccupancy, Placement::Gpu, true),
        (ChannelKind::L2Occupancy, Placement::OtherClusterCpu, false),
        (ChannelKind::L2Occupancy, Placement::Gpu, false),
    ];
    for (channel, placement, leaks) in cases {
        let ok = (0..10)
            .filter(|&seed| {
                let cfg = BenchmarkConfig { channel, placement, seed, ..Default::default() };
                let t = rendering_benchmark(&h, &cfg).unwrap().t_score;
                (t > 4.5) == leaks
            })
            .count();
        pass &= ok >= 9;
        parts.push(format!("{}/{} {ok}/10", channel.name(), placement.name()));
    }
    outcome(pass, parts.join(", "))
}

fn c8() -> Outcome {
    let h = desk(32);
    let ds = collect_dataset(&h, &DatasetConfig::default()).unwrap();
    let params = SvmParams::default();
    let cv = cross_validate(&ds, 10, &params).unwrap();
    let ctl = shuffled_control(&ds, 10, &params).unwrap();
    outcome(cv.accuracy >= 0.85 && ctl.accuracy <= 0.10, format!("top-1 {:.3}, shuffled control {:.3}", cv.accuracy, ctl.accuracy))
}

fn c9() -> Outcome {
    let h = desk(64);
    let img = random_binary_image(25, 20, 9);
    let mut acc = Vec::new();
    for mode in [PixelMode::HitTiming, PixelMode::SweepCounting] {
        let mut st = PixelStealer::new(&h, PixelConfig { mode, ..Default::default() }).unwrap();
        st.calibrate().unwrap();
        acc.push(steal_region(&st, &img).unwrap().accuracy());
    }
    outcome(acc[0] >= 0.90 && acc[1] >= 0.80, format!("500 px: hit timing {:.3}, sweep counting {:.3}", acc[0], acc[1]))
}

fn c10() -> Outcome {
    let mut cfg = HierarchyConfig::scaled(1);
    cfg.latency = LatencyModel::noiseless();
    let quiet = frame_fidelity(&Hierarchy::new(cfg, 1), &FrameSchedule::default(), &FrameProbeConfig { repeats: 4, ..Default::default() }, NoiseSpec::OFF, 1);
    let noisy_cfg = FrameProbeConfig { repeats: 2, peak_mode: PeakMode::FixedOffsets, ..Default::default() };
    let noisy = frame_fidelity(&desk(16), &FrameSchedule::default(), &noisy_cfg, NoiseSpec::default(), 1).unwrap();
    match quiet {
        Ok(q) => {
            let peaks = q.flash.positions.len();
            outcome(
                peaks == 28 && q.r >= 0.99 && noisy.r >= 0.9,
                format!("noiseless {peaks} peaks, r {:.4}; default noise r {:.4}", q.r, noisy.r),
            )
        }
        Err(e) => outcome(false, format!("noiseless: {e}; default noise r {:.4}", noisy.r)),
    }
}

fn snoop(repeats: usize) -> SnoopConfig {
    let mut c = SnoopConfig::default();
    c.probe.repeats = repeats;
    c
}

fn c11() -> Outcome {
    let h = desk(16);
    let cfg = snoop(2);
    let heights = [10, 15, 20, 25, 30];
    let acc: Vec<f64> = heights
        .iter()
        .map(|&nh| {
            let n = if nh == 30 { 100 } else { 40 };
            let batch = barcode_batch(nh, n, 11);
            let ok = batch.iter().filter(|(code, s)| snoop_barcode(&h, code, nh, &cfg, *s).unwrap().decoded == *code).count();
            ok as f64 / n as f64
        })
        .collect();
    let monotone = acc.windows(2).all(|w| w[1] >= w[0]);
    let text: Vec<String> = heights.iter().zip(&acc).map(|(h, a)| format!("{h}px {a:.3}")).collect();
    outcome(acc[4] >= 0.9 && monotone, format!("{} (non-decreasing: {monotone})", text.join(", ")))
}

fn c12() -> Outcome {
    let h = desk(16);
    let cfg = snoop(4);
    let model = CompressionModel::scaled(h.config());
    let stats = |n: usize, trials: usize| {
        let lib = digit_library(n, &model).unwrap();
        let t = digit_batch(n, trials, 12).iter().map(|(d, s)| snoop_digits(&h, &lib, d, &cfg, *s).unwrap()).collect();
        DigitStats::from_trials(n, t)
    };
    let one = stats(1, 60);
    let two = stats(2, 40);
    let three = stats(3, 40);
    // Cells tied with the third-largest count also count as top 3.
    let conf = one.top_confusions();
    let cut = conf.get(2).map_or(0, |c| c.2).max(1);
    let zero_eight = conf.iter().any(|&(i, j, n)| n >= cut && ((i, j) == (0, 8) || (i, j) == (8, 0)));
    let top3: Vec<String> = conf.iter().take(3).map(|(i, j, n)| format!("{i}->{j}:{n}")).collect();
    let pass = one.top1 >= 0.85 && one.top5 == 1.0 && zero_eight && (0.4..=0.7).contains(&two.top1) && three.top1 < two.top1;
    outcome(
        pass,
        format!(
            "single top-1 {:.3} top-5 {:.3}, top confusions [{}] (0/8 among top 3: {zero_eight}); two-digit top-1 {:.3}; three-digit top-1 {:.3}",
            one.top1,
            one.top5,
            top3.join(" "),
            two.top1,
            three.top1
        ),
    )
}

fn c13() -> Outcome {
    let h = desk(16);
    let sizes: Vec<u64> = [8, 12, 16, 22, 24, 32].iter().map(|m| m * MB).collect();
    let base = BenchmarkConfig { placement: Placement::SameClusterCpu, ..Default::default() };
    let seeds = [1, 2];
    let l2 = ChannelKind::L2Occupancy;
    let slc = ChannelKind::SlcOccupancy;
    let mut grid = evaluate_mitigation(&h, &[MaskKind::SlcMask], &[slc, l2], &sizes, &base, &seeds).unwrap();
    grid.extend(evaluate_mitigation(&h, &[MaskKind::L2SingleBuffer, MaskKind::L2NewBufferPerIter], &[l2], &sizes, &base, &seeds).unwrap());
    let mb = |t: Option<u64>| t.map_or("none".to_string(), |b| format!("{}MB", b / MB));
    let slc_mask = threshold(&grid, MaskKind::SlcMask, slc, 4.5);
    let l2_kept = grid.iter().filter(|g| g.scheme == Some(MaskKind::SlcMask) && g.channel == l2).all(|g| g.t_mean > 4.5);
    let single = threshold(&grid, MaskKind::L2SingleBuffer, l2, 4.5);
    let fresh = threshold(&grid, MaskKind::L2NewBufferPerIter, l2, 4.5);
    let pass = slc_mask.is_some_and(|b| b <= 12 * MB)
        && l2_kept
        && single.is_some_and(|b| b <= 32 * MB)
        && fresh.is_some_and(|f| single.is_some_and(|s| f <= s));
    outcome(
        pass,
        format!(
            "slc mask vs slc {} (l2 channel stays > 4.5: {l2_kept}); l2 single buffer {}; l2 new buffer {}",
            mb(slc_mask),
            mb(single),
            mb(fresh)
        ),
    )
}

fn c14() -> Outcome {
    let mut configs = Vec::new();
    let mut c = ExperimentConfig::named("benchmark");
    c.duration_ms = Some(2000.0);
    c.repetitions = Some(2);
    configs.push(c);
    let mut c = ExperimentConfig::named("snoop-barcode");
    c.trials = Some(2);
    configs.push(c);
    let mut c = ExperimentConfig::named("stride-scan");
    c.scale = Some(64);
    configs.push(c);
    let mut same = 0;
    for c in &configs {
        let a = run(c, 1).unwrap();
        let b = run(c, 2).unwrap();
        same += (a.config_hash == b.config_hash && a.csv_bytes() == b.csv_bytes() && a.json_bytes() == b.json_bytes()) as usize;
    }
    outcome(same == configs.len(), format!("{same}/{} experiments byte-identical on rerun", configs.len()))
}

fn main() {
    let all: [(u32, fn() -> Outcome); 14] =
        [(1, c1), (2, c2), (3, c3), (4, c4), (5, c5), (6, c6), (7, c7), (8, c8), (9, c9), (10, c10), (11, c11), (12, c12), (13, c13), (14, c14)];
    let picked: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let start = Instant::now();
    let mut unexpected = Vec::new();
    let mut out = std::io::stdout();
    for (n, f) in all {
        if !picked.is_empty() && !picked.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let o = f();
        let known = KNOWN_FAILING.contains(&n);
        let tag = match (o.pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        writeln!(out, "criterion {n:>2}: {tag} [{:.0}s] {}", t.elapsed().as_secs_f64(), o.detail).unwrap();
        out.flush().unwrap();
        if !o.pass && !known {
            unexpected.push(n);
        }
    }
    writeln!(out, "acceptance finished in {:.0}s", start.elapsed().as_secs_f64()).unwrap();
    if !unexpected.is_empty() {
        writeln!(out, "unexpected failures: {unexpected:?}").unwrap();
        std::process::exit(1);
    }
}
