//! Named experiments: resolve a config, run it, and produce artifacts whose
//! bytes depend only on the resolved config.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::attacks::fingerprint::{collect_dataset, cross_validate, shuffled_control, DatasetConfig};
use crate::attacks::frame::{frame_fidelity, FlashError, FrameProbeConfig, PeakMode};
use crate::attacks::pixel::{random_binary_image, steal_region, PixelConfig, PixelError, PixelMode, PixelStealer};
use crate::attacks::snoop::{barcode_batch, digit_batch, digit_library, snoop_barcode, snoop_digits, DigitStats, SnoopConfig, SnoopError};
use crate::attacks::svm::{ClassifierError, SvmParams};
use crate::attacks::{channel_scope, collect_trace, noise_activity, BenchmarkConfig, Channel, ChannelKind};
use crate::hierarchy::{splitmix, Hierarchy, SlcPolicy};
use crate::mem::MemError;
use crate::mitigation::{masked_benchmark, MaskKind, MaskScheme, MB};
use crate::probe::Pattern;
use crate::revlab::{
    capacity_curves, default_inclusion_sizes, inclusiveness_test, latency_quantification, replacement_probe, stride_scan,
    InclusionDecision,
};
use crate::sched::Schedule;
use crate::victims::{Arena, CompressionModel, FrameSchedule, NoiseSpec, Placement, SiteActivity, SyntheticSite, VisitJitter};

mod config;
mod plotdata;

pub use config::ExperimentConfig;
pub use plotdata::emit_plotdata;

#[derive(Debug, Error)]
pub enum ExperimentError {
    /// Bad or unknown configuration; exit status 2.
    #[error("config error: {0}")]
    Config(String),
    /// The experiment ran and failed; exit status 1.
    #[error("{kind}: {message}")]
    Runtime { kind: String, message: String },
}

impl ExperimentError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            ExperimentError::Runtime { .. } => 1,
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            ExperimentError::Config(m) => json!({ "error": "ConfigError", "message": m }),
            ExperimentError::Runtime { kind, message } => json!({ "error": kind, "message": message }),
        }
    }

    fn runtime(kind: &str, e: impl std::fmt::Display) -> Self {
        ExperimentError::Runtime { kind: kind.to_string(), message: e.to_string() }
    }
}

impl From<MemError> for ExperimentError {
    fn from(e: MemError) -> Self {
        Self::runtime("MemError", e)
    }
}

impl From<FlashError> for ExperimentError {
    fn from(e: FlashError) -> Self {
        match e {
            FlashError::FlashExtractionError { .. } => Self::runtime("FlashExtractionError", e),
            FlashError::Mem(m) => m.into(),
        }
    }
}

impl From<PixelError> for ExperimentError {
    fn from(e: PixelError) -> Self {
        match e {
            PixelError::CalibrationRequired => Self::runtime("CalibrationRequired", e),
            PixelError::Mem(m) => m.into(),
        }
    }
}

impl From<SnoopError> for ExperimentError {
    fn from(e: SnoopError) -> Self {
        match e {
            SnoopError::Flash(f) => f.into(),
            SnoopError::Encode(x) => Self::runtime("EncodeError", x),
        }
    }
}

impl From<ClassifierError> for ExperimentError {
    fn from(e: ClassifierError) -> Self {
        let kind = match e {
            ClassifierError::ClassifierDegenerate => "ClassifierDegenerate",
            _ => "ClassifierError",
        };
        Self::runtime(kind, e)
    }
}

/// How an artifact reshapes into `(series, x, y)` rows.
#[derive(Debug, Clone, Copy)]
pub enum PlotSpec {
    /// One series per listed column.
    Columns { x: &'static str, ys: &'static [&'static str] },
    /// One series per distinct value of the group columns.
    Grouped { group: &'static [&'static str], x: &'static str, y: &'static str },
}

pub struct ExperimentInfo {
    pub name: &'static str,
    pub about: &'static str,
    pub defaults: fn() -> ExperimentConfig,
    pub plot: PlotSpec,
    run: fn(&ExperimentConfig, usize) -> Result<Output, ExperimentError>,
}

struct Output {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
    summary: Value,
}

fn defaults(scale: u64, f: impl FnOnce(&mut ExperimentConfig)) -> ExperimentConfig {
    let mut c = ExperimentConfig { seed: Some(1), scale: Some(scale), slc_policy: Some(SlcPolicy::Exclusive), latency_sigma: Some(8.0), ..Default::default() };
    f(&mut c);
    c
}

pub const EXPERIMENTS: &[ExperimentInfo] = &[
    ExperimentInfo {
        name: "latency",
        about: "mean and spread of the access latency of each level",
        defaults: || defaults(1, |c| c.trials = Some(10_000)),
        plot: PlotSpec::Columns { x: "scenario", ys: &["mean", "std"] },
        run: run_latency,
    },
    ExperimentInfo {
        name: "capacity-curves",
        about: "L2 and SLC hits against buffer size (sizes in full-scale lines)",
        defaults: || {
            defaults(1, |c| {
                c.pattern = Some(Pattern::Alternated);
                c.sizes = Some((1..=20).map(|k| k as f64 * 8000.0).collect());
            })
        },
        plot: PlotSpec::Columns { x: "lines", ys: &["l2_hits", "slc_hits"] },
        run: run_capacity,
    },
    ExperimentInfo {
        name: "inclusiveness",
        about: "exclusive or non-inclusive SLC, decided from sequential and alternated reloads",
        defaults: || defaults(16, |c| c.repetitions = Some(1)),
        plot: PlotSpec::Grouped { group: &["seed"], x: "size", y: "gap" },
        run: run_inclusiveness,
    },
    ExperimentInfo {
        name: "stride-scan",
        about: "hit plateaus for strides 128 to 16384 (sizes as multiples of the SLC)",
        defaults: || defaults(8, |c| c.sizes = Some((1..=40).map(|k| k as f64 / 16.0).collect())),
        plot: PlotSpec::Grouped { group: &["stride"], x: "lines", y: "slc_hits" },
        run: run_stride,
    },
    ExperimentInfo {
        name: "replacement-probe",
        about: "two buffers loaded in order and probed in reverse (sizes as fractions of each cache)",
        defaults: || defaults(8, |c| c.sizes = Some(vec![0.2, 0.3, 0.4, 0.45, 0.5, 0.55, 0.6, 0.7, 0.8, 1.0])),
        plot: PlotSpec::Columns { x: "fraction", ys: &["buf1_l2", "buf2_l2", "buf1_slc", "buf2_slc"] },
        run: run_replacement,
    },
    ExperimentInfo {
        name: "channel-scope",
        about: "spy profile time against victim lines for each placement (sizes in full-scale lines)",
        defaults: || {
            defaults(16, |c| {
                c.channel = Some(ChannelKind::SlcOccupancy);
                c.sizes = Some((0..=8).map(|k| k as f64 * 4096.0).collect());
                c.trials = Some(10);
            })
        },
        plot: PlotSpec::Grouped { group: &["placement"], x: "lines", y: "mean_time" },
        run: run_scope,
    },
    ExperimentInfo {
        name: "benchmark",
        about: "victim loads an image on random bits; Welch t of the spy's samples",
        defaults: || {
            defaults(16, |c| {
                let b = BenchmarkConfig::default();
                c.channel = Some(b.channel);
                c.placement = Some(b.placement);
                c.duration_ms = Some(b.duration_ms);
                c.period_ms = Some(b.period_ms);
                c.noise = Some(b.noise);
                c.repetitions = Some(1);
            })
        },
        plot: PlotSpec::Grouped { group: &["seed"], x: "sample", y: "time" },
        run: run_benchmark,
    },
    ExperimentInfo {
        name: "collect-trace",
        about: "one occupancy trace of a synthetic website visit",
        defaults: || {
            defaults(32, |c| {
                c.channel = Some(ChannelKind::SlcOccupancy);
                c.placement = Some(Placement::Gpu);
                c.duration_ms = Some(2000.0);
                c.period_ms = Some(20.0);
                c.noise = Some(NoiseSpec::default());
                c.site_id = Some(0);
            })
        },
        plot: PlotSpec::Columns { x: "sample", ys: &["time", "misses"] },
        run: run_collect_trace,
    },
    ExperimentInfo {
        name: "fingerprint",
        about: "website fingerprinting with a linear SVM under 10-fold cross-validation",
        defaults: || {
            defaults(32, |c| {
                let d = DatasetConfig::default();
                c.channel = Some(d.channel);
                c.placement = Some(d.placement);
                c.sites = Some(d.sites);
                c.traces_per_site = Some(d.traces_per_site);
                c.duration_ms = Some(d.duration_ms as f64);
                c.period_ms = Some(d.period_ms);
                c.noise = Some(d.noise);
            })
        },
        plot: PlotSpec::Grouped { group: &["true_site"], x: "predicted_site", y: "count" },
        run: run_fingerprint,
    },
    ExperimentInfo {
        name: "pixel-steal",
        about: "guess black or white pixels of a random image from SVG filter traffic",
        defaults: || {
            defaults(64, |c| {
                c.pixel_mode = Some(PixelMode::HitTiming);
                c.trials = Some(100);
                c.noise = Some(NoiseSpec::default());
            })
        },
        plot: PlotSpec::Grouped { group: &["truth"], x: "pixel", y: "correct" },
        run: run_pixel,
    },
    ExperimentInfo {
        name: "frame-monitor",
        about: "flash points of one frame of random content against the rendered traffic",
        defaults: || {
            defaults(16, |c| {
                c.noise = Some(NoiseSpec::default());
                c.frame_repeats = Some(2);
                c.peak_mode = Some(PeakMode::FixedOffsets);
            })
        },
        plot: PlotSpec::Columns { x: "epoch", ys: &["truth", "value"] },
        run: run_frame,
    },
    ExperimentInfo {
        name: "snoop-barcode",
        about: "read ITF barcodes off the screen (given digits, or random codes)",
        defaults: || {
            defaults(16, |c| {
                c.noise = Some(NoiseSpec::default());
                c.narrow_height = Some(30);
                c.trials = Some(20);
                c.frame_repeats = Some(2);
            })
        },
        plot: PlotSpec::Grouped { group: &["narrow_height"], x: "trial", y: "correct" },
        run: run_barcode,
    },
    ExperimentInfo {
        name: "snoop-digits",
        about: "recognize white digits on black, order-free (given digits, or random ones)",
        defaults: || {
            defaults(16, |c| {
                c.noise = Some(NoiseSpec::default());
                c.digit_count = Some(1);
                c.trials = Some(20);
                c.frame_repeats = Some(4);
            })
        },
        plot: PlotSpec::Grouped { group: &["class"], x: "trial", y: "rank" },
        run: run_digits,
    },
    ExperimentInfo {
        name: "mitigation-grid",
        about: "benchmark t-scores under each masking scheme and size (sizes in MB)",
        defaults: || {
            defaults(16, |c| {
                c.placement = Some(Placement::SameClusterCpu);
                c.duration_ms = Some(20_000.0);
                c.period_ms = Some(50.0);
                c.noise = Some(NoiseSpec::default());
                c.sizes = Some(vec![8.0, 12.0, 16.0, 22.0, 24.0, 32.0, 40.0]);
                c.mask_kinds = Some(MaskKind::ALL.to_vec());
                c.repetitions = Some(2);
            })
        },
        plot: PlotSpec::Grouped { group: &["scheme", "channel"], x: "size_bytes", y: "t" },
        run: run_mitigation,
    },
];

pub fn find(name: &str) -> Result<&'static ExperimentInfo, ExperimentError> {
    EXPERIMENTS.iter().find(|e| e.name == name).ok_or_else(|| {
        let names: Vec<&str> = EXPERIMENTS.iter().map(|e| e.name).collect();
        ExperimentError::Config(format!("unknown experiment {name:?}; expected one of {}", names.join(", ")))
    })
}

/// Result of one run: a CSV table and a JSON summary, both stamped with the
/// config hash.
#[derive(Debug, Clone)]
pub struct Artifact {
    pub experiment: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub summary: Value,
}

impl Artifact {
    pub fn csv_bytes(&self) -> Vec<u8> {
        let mut out = format!("# experiment={} config_hash={}\n", self.experiment, self.config_hash).into_bytes();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        out.extend(w.into_inner().expect("in-memory flush"));
        out
    }

    pub fn json_bytes(&self) -> Vec<u8> {
        let mut config = serde_json::to_value(&self.config).expect("config serializes");
        if let Some(m) = config.as_object_mut() {
            m.remove("out_dir");
        }
        let v = json!({
            "experiment": self.experiment,
            "config_hash": self.config_hash,
            "config": config,
            "summary": self.summary,
        });
        let mut b = serde_json::to_vec_pretty(&v).expect("summary serializes");
        b.push(b'\n');
        b
    }

    pub fn file_stem(&self) -> String {
        format!("{}-{}", self.experiment, &self.config_hash[..12])
    }

    /// Write `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path) -> std::io::Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let csv = dir.join(format!("{}.csv", self.file_stem()));
        let js = dir.join(format!("{}.json", self.file_stem()));
        std::fs::write(&csv, self.csv_bytes())?;
        std::fs::write(&js, self.json_bytes())?;
        Ok((csv, js))
    }
}

/// Resolve and run. `jobs` spreads independent seeds and sweep points over
/// threads; the output does not depend on it.
pub fn run(cfg: &ExperimentConfig, jobs: usize) -> Result<Artifact, ExperimentError> {
    let cfg = cfg.resolve()?;
    let info = find(&cfg.experiment)?;
    let out = (info.run)(&cfg, jobs.max(1))?;
    Ok(Artifact {
        experiment: cfg.experiment.clone(),
        config_hash: cfg.hash(),
        header: out.header.iter().map(|s| s.to_string()).collect(),
        rows: out.rows,
        summary: out.summary,
        config: cfg,
    })
}

/// Map over `items` on up to `jobs` threads, keeping input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(f).collect();
    }
    let mut out: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let f = &f;
        let workers: Vec<_> = (0..jobs)
            .map(|j| s.spawn(move || items.iter().enumerate().skip(j).step_by(jobs).map(|(i, t)| (i, f(t))).collect::<Vec<_>>()))
            .collect();
        for w in workers {
            for (i, r) in w.join().expect("worker panicked") {
                out[i] = Some(r);
            }
        }
    });
    out.into_iter().map(|r| r.expect("every item mapped")).collect()
}

fn collect_all<R, E>(v: Vec<Result<R, E>>) -> Result<Vec<R>, ExperimentError>
where
    ExperimentError: From<E>,
{
    v.into_iter().map(|r| r.map_err(ExperimentError::from)).collect()
}

fn hierarchy(c: &ExperimentConfig) -> Hierarchy {
    Hierarchy::new(c.hierarchy(), c.seed())
}

/// Seed of repetition `k`.
fn rep_seed(c: &ExperimentConfig, k: usize) -> u64 {
    c.seed().wrapping_add(k as u64)
}

fn f(x: f64) -> String {
    format!("{x}")
}

fn s(x: impl ToString) -> String {
    x.to_string()
}

fn name_of<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

fn run_latency(c: &ExperimentConfig, _jobs: usize) -> Result<Output, ExperimentError> {
    let rows = latency_quantification(&hierarchy(c), c.trials.unwrap_or(10_000))?;
    Ok(Output {
        header: vec!["scenario", "samples", "mean", "std"],
        rows: rows.iter().map(|r| vec![r.scenario.clone(), s(r.samples), f(r.mean), f(r.std)]).collect(),
        summary: json!({ "rows": rows }),
    })
}

fn scaled_sizes(h: &Hierarchy, sizes: &[f64]) -> Vec<usize> {
    sizes.iter().map(|&x| h.config().scale_lines(x)).collect()
}

fn run_capacity(c: &ExperimentConfig, jobs: usize) -> Result<Output, ExperimentError> {
    let h = hierarchy(c);
    let sizes = scaled_sizes(&h, c.sizes.as_deref().unwrap_or_default());
    let pattern = c.pattern.unwrap_or(Pattern::Alternated);
    let pts = collect_all(par_map(&sizes, jobs, |&n| capacity_curves(&h, pattern, &[n]).map(|v| v[0])))?;
    Ok(Output {
        header: vec!["lines", "l2_hits", "slc_hits"],
        rows: pts.iter().map(|p| vec![s(p.x), f(p.l2_hits), f(p.slc_hits)]).collect(),
        summary: json!({
            "pattern": name_of(&pattern),
            "l2_lines": h.config().p_l2.lines(),
            "slc_lines": h.config().slc.lines(),
            "max_l2_hits": pts.iter().map(|p| p.l2_hits).fold(0.0, f64::max),
            "max_slc_hits": pts.iter().map(|p| p.slc_hits).fold(0.0, f64::max),
        }),
    })
}

fn run_inclusiveness(c: &ExperimentConfig, jobs: usize) -> Result<Output, ExperimentError> {
    let cfg = c.hierarchy();
    let sizes = match &c.sizes {
        Some(v) => v.iter().map(|&x| cfg.scale_lines(x)).collect(),
        None => default_inclusion_sizes(&cfg),
    };
    let reps: Vec<usize> = (0..c.repetitions.unwrap_or(1)).collect();
    let results = collect_all(par_map(&reps, jobs, |&k| inclusiveness_test(&Hierarchy::new(cfg.clone(), rep_seed(c, k)), &sizes)))?;
    let slc = cfg.slc.lines() as f64;
    let mut rows = Vec::new();
    for (k, r) in results.iter().enumerate() {
        for p in &r.points {
            let gap = (p.seq_slc_hits as f64 - p.alt_slc_hits as f64) / slc;
            rows.push(vec![s(rep_seed(c, k)), s(p.size), s(p.seq_slc_hits), s(p.alt_slc_hits), f(gap)]);
        }
    }
    let exclusive = results.iter().filter(|r| r.decision == InclusionDecision::Exclusive).count();
    let decision = if 2 * exclusive >= results.len() { InclusionDecision::Exclusive } else { InclusionDecision::NonInclusive };
    Ok(Output {
        header: vec!["seed", "size", "seq_slc_hits", "alt_slc_hits", "gap"],
        rows,
        summary: json!({
            "decision": decision,
            "decisions": results.iter().map(|r| r.decision).collect::<Vec<_>>(),
            "max_gaps": results.iter().map(|r| r.max_gap).collect::<Vec<_>>(),
            "threshold": crate::revlab::INCLUSION_THRESHOLD,
        }),
    })
}

pub const SCAN_STRIDES: [u64; 8] = [128, 256, 512, 1024, 2048, 4096, 8192, 16384];

fn run_stride(c: &ExperimentConfig, jobs: usize) -> Result<Output, ExperimentError> {
    let h = hierarchy(c);
    let slc = h.config().slc.lines() as f64;
    let sizes: Vec<usize> = c.sizes.as_deref().unwrap_or_default().iter().map(|&x| (x * slc).round() as usize).collect();
    let res = collect_all(par_map(&SCAN_STRIDES, jobs, |&st| stride_scan(&h, &[st], &sizes).map(|mut v| v.remove(0))))?;
    let mut rows = Vec::new();
    for r in &res {
        for p in &r.curve {
            rows.push(vec![s(r.stride), s(p.x), f(p.l2_hits), f(p.slc_hits)]);
        }
    }
    let plateaus: Vec<Value> =
        res.iter().map(|r| json!({ "stride": r.stride, "l2_plateau": r.l2_plateau, "slc_plateau": r.slc_plateau })).collect();
    Ok(Output { header: vec!["stride", "lines", "l2_hits", "slc_hits"], rows, summary: json!({ "plateaus": plateaus }) })
}

fn run_replacement(c: &ExperimentConfig, jobs: usize) -> Result<Output, ExperimentError> {
    let h = hierarchy(c);
    let fr = c.sizes.clone().unwrap_or_default();
    let pts = collect_all(par_map(&fr, jobs, |&x| replacement_probe(&h, &[x]).map(|mut v| v.remove(0))))?;
    Ok(Output {
        header: vec!["fraction", "l2_buffer_lines", "slc_buffer_lines", "buf1_l2", "buf2_l2", "buf1_slc", "buf2_slc"],
        rows: pts
            .iter()
            .map(|p| {
                vec![f(p.fraction), s(p.l2_buffer_lines), s(p.slc_buffer_lines), s(p.buf1_l2), s(p.buf2_l2), s(p.buf1_slc), s(p.buf2_slc)]
            })
            .collect(),
        summary: json!({ "points": pts }),
    })
}

fn run_scope(c: &ExperimentConfig, jobs: usize) -> Result<Output, ExperimentError> {
    let h = hierarchy(c);
    let kind = c.channel.unwrap_or(ChannelKind::SlcOccupancy);
    let loads: Vec<u64> = scaled_sizes(&h, c.sizes.as_deref().unwrap_or_default()).into_iter().map(|n| n as u64).collect();
    let reps = c.trials.unwrap_or(10);
    let res = collect_all(par_map(&Placement::ALL, jobs, |&p| channel_scope(&h, kind, p, &loads, reps)))?;
    let mut rows = Vec::new();
    for r in &res {
        for (v, m) in &r.means {
            rows.push(vec![r.placement.name().to_string(), s(v), f(*m)]);
        }
    }
    let fits: Vec<Value> = res
        .iter()
        .map(|r| json!({ "placement": r.placement, "slope": r.mean_fit.slope, "r2": r.mean_fit.r2, "raw_slope_t": r.raw_fit.slope_t }))
        .collect();
    Ok(Output { header: vec!["placement", "lines", "mean_time"], rows, summary: json!({ "channel": kind, "fits": fits }) })
}

fn benchmark_config(c: &ExperimentConfig, seed: u64) -> BenchmarkConfig {
    let d = BenchmarkConfig::default();
    BenchmarkConfig {
        channel: c.channel.unwrap_or(d.channel),
        placement: c.placement.unwrap_or(d.placement),
        duration_ms: c.duration_ms.unwrap_or(d.duration_ms),
        period_ms: c.period_ms.unwrap_or(d.period_ms),
        image_lines: d.image_lines,
        noise: c.noise.unwrap_or(d.noise),
        seed,
    }
}

fn run_benchmark(c: &ExperimentConfig, jobs: usize) -> Result<Output, ExperimentError> {
    let h = hierarchy(c);
    let reps: Vec<usize> = (0..c.repetitions.unwrap_or(1)).collect();
    let res = collect_all(par_map(&reps, jobs, |&k| {
        let cfg = benchmark_config(c, rep_seed(c, k));
        crate::attacks::rendering_benchmark_with(&h, &cfg, |h, t0, p| {
            let Some(m) = c.mask else { return Ok(Vec::new()) };
            let period = m.period_ms.map_or(p / 2, crate::latency::ms_to_ticks);
            let w = crate::mitigation::MaskWalker::new(h, m, t0 + p / 4, period, None)?;
            Ok(vec![Box::new(w) as Box<dyn crate::sched::Activity>])
        })
    }))?;
    let mut rows = Vec::new();
    for (k, r) in res.iter().enumerate() {
        for (i, b) in r.bits.iter().enumerate() {
            rows.push(vec![s(rep_seed(c, k)), s(i), s(*b as u8), f(r.trace.samples[i + 1])]);
        }
    }
    let t: Vec<f64> = res.iter().map(|r| r.t_score).collect();
    Ok(Output {
        header: vec!["seed", "sample", "bit", "time"],
        rows,
        summary: json!({ "t_scores": t, "significant": t.iter().filter(|&&x| x > 4.5).count(), "repetitions": t.len() }),
    })
}

fn run_collect_trace(c: &ExperimentConfig, _jobs: usize) -> Result<Output, ExperimentError> {
    let mut h = hierarchy(c);
    let kind = c.channel.unwrap_or(ChannelKind::SlcOccupancy);
    let period = c.period_ms.unwrap_or(20.0);
    let duration = c.duration_ms.unwrap_or(2000.0);
    let mut ch = Channel::new(&mut h, kind, period)?;
    ch.warm(&mut h);
    let start = ch.next_boundary(h.now());
    let scale = h.config().scale_divisor();
    let site = SyntheticSite::generate(c.site_id.unwrap_or(0), c.seed(), duration as u64, scale);
    let arena = Arena::new(&mut h)?;
    let visit = SiteActivity::visit(&site, VisitJitter::default(), c.seed(), c.placement.unwrap_or(Placement::Gpu), start, duration as u64, arena);
    let mut sched = Schedule::new();
    sched.push(Box::new(visit));
    if let Some(a) = noise_activity(&mut h, c.noise.unwrap_or_default(), start, c.seed())? {
        sched.push(a);
    }
    let n = (duration / period).round() as usize;
    let t = collect_trace(&mut h, &mut ch, &mut sched, start, n);
    Ok(Output {
        header: vec!["sample", "time", "misses", "saturated"],
        rows: (0..n).map(|i| vec![s(i), f(t.samples[i]), s(t.misses[i]), s(t.saturated[i] as u8)]).collect(),
        summary: json!({ "channel": kind, "site_id": site.site_id, "samples": n }),
    })
}

fn run_fingerprint(c: &ExperimentConfig, _jobs: usize) -> Result<Output, ExperimentError> {
    let h = hierarchy(c);
    let d = DatasetConfig::default();
    let cfg = DatasetConfig {
        channel: c.channel.unwrap_or(d.channel),
        placement: c.placement.unwrap_or(d.placement),
        sites: c.sites.unwrap_or(d.sites),
        traces_per_site: c.traces_per_site.unwrap_or(d.traces_per_site),
        duration_ms: c.duration_ms.map_or(d.duration_ms, |x| x as u64),
        period_ms: c.period_ms.unwrap_or(d.period_ms),
        noise: c.noise.unwrap_or(d.noise),
        jitter: d.jitter,
        seed: c.seed(),
    };
    let ds = collect_dataset(&h, &cfg)?;
    let params = SvmParams { seed: c.seed(), ..SvmParams::default() };
    let cv = cross_validate(&ds, 10, &params)?;
    let ctl = shuffled_control(&ds, 10, &params)?;
    let mut rows = Vec::new();
    for (i, row) in cv.confusion.iter().enumerate() {
        for (j, n) in row.iter().enumerate() {
            rows.push(vec![s(cv.classes[i]), s(cv.classes[j]), s(n)]);
        }
    }
    Ok(Output {
        header: vec!["true_site", "predicted_site", "count"],
        rows,
        summary: json!({ "accuracy": cv.accuracy, "shuffled_accuracy": ctl.accuracy, "sites": cfg.sites, "traces_per_site": cfg.traces_per_site }),
    })
}

fn run_pixel(c: &ExperimentConfig, _jobs: usize) -> Result<Output, ExperimentError> {
    let h = hierarchy(c);
    let cfg = PixelConfig { mode: c.pixel_mode.unwrap_or(PixelMode::HitTiming), noise: c.noise.unwrap_or_default(), seed: c.seed(), ..Default::default() };
    let n = c.trials.unwrap_or(100);
    let width = n.min(25);
    let img = random_binary_image(width, n.div_ceil(width), c.seed());
    let mut st = PixelStealer::new(&h, cfg)?;
    let cal = st.calibrate()?;
    let r = steal_region(&st, &img)?;
    let truth = |i: usize| if img.get(i % width, i / width) == [0, 0, 0] { "black" } else { "white" };
    Ok(Output {
        header: vec!["pixel", "truth", "guess", "correct"],
        rows: (0..r.guessed.len()).map(|i| vec![s(i), s(truth(i)), name_of(&r.guessed[i]), s(!r.errors[i] as u8)]).collect(),
        summary: json!({ "mode": cfg_mode(c), "accuracy": r.accuracy(), "pixels": r.guessed.len(), "calibration": cal }),
    })
}

fn cfg_mode(c: &ExperimentConfig) -> String {
    name_of(&c.pixel_mode.unwrap_or(PixelMode::HitTiming))
}

fn probe_config(c: &ExperimentConfig) -> FrameProbeConfig {
    FrameProbeConfig {
        repeats: c.frame_repeats.unwrap_or(2),
        peak_mode: c.peak_mode.unwrap_or(PeakMode::FixedOffsets),
        ..Default::default()
    }
}

fn snoop_config(c: &ExperimentConfig) -> SnoopConfig {
    SnoopConfig { probe: probe_config(c), noise: c.noise.unwrap_or_default(), ..Default::default() }
}

fn run_frame(c: &ExperimentConfig, _jobs: usize) -> Result<Output, ExperimentError> {
    let h = hierarchy(c);
    let fr = frame_fidelity(&h, &FrameSchedule::default(), &probe_config(c), c.noise.unwrap_or_default(), c.seed())?;
    Ok(Output {
        header: vec!["epoch", "truth", "value", "position"],
        rows: (0..fr.truth.len())
            .map(|e| vec![s(e), s(fr.truth[e]), f(fr.flash.values[e]), s(fr.flash.positions[e])])
            .collect(),
        summary: json!({ "pearson_r": fr.r, "peaks": fr.flash.positions.len(), "differential": fr.flash.differential }),
    })
}

fn run_barcode(c: &ExperimentConfig, jobs: usize) -> Result<Output, ExperimentError> {
    let h = hierarchy(c);
    let cfg = snoop_config(c);
    let nh = c.narrow_height.unwrap_or(30);
    let batch = match &c.digits {
        Some(d) => vec![(d.clone(), splitmix(c.seed()))],
        None => barcode_batch(nh, c.trials.unwrap_or(20), c.seed()),
    };
    let res = collect_all(par_map(&batch, jobs, |(code, sd)| snoop_barcode(&h, code, nh, &cfg, *sd)))?;
    let ok = res.iter().filter(|t| t.code == t.decoded).count();
    let mut summary = json!({ "narrow_height": nh, "accuracy": ok as f64 / res.len() as f64, "trials": res.len() });
    if c.digits.is_some() {
        summary["top1"] = json!(res[0].decoded);
    }
    Ok(Output {
        header: vec!["narrow_height", "trial", "code", "decoded", "correct"],
        rows: res.iter().enumerate().map(|(i, t)| vec![s(nh), s(i), t.code.clone(), t.decoded.clone(), s((t.code == t.decoded) as u8)]).collect(),
        summary,
    })
}

fn run_digits(c: &ExperimentConfig, jobs: usize) -> Result<Output, ExperimentError> {
    let h = hierarchy(c);
    let cfg = snoop_config(c);
    let batch = match &c.digits {
        Some(d) => vec![(d.clone(), splitmix(c.seed()))],
        None => digit_batch(c.digit_count.unwrap_or(1), c.trials.unwrap_or(20), c.seed()),
    };
    let n = batch[0].0.len();
    let lib = digit_library(n, &CompressionModel::scaled(h.config())).map_err(SnoopError::from)?;
    let res = collect_all(par_map(&batch, jobs, |(d, sd)| snoop_digits(&h, &lib, d, &cfg, *sd)))?;
    let st = DigitStats::from_trials(n, res);
    let mut summary = json!({ "digit_count": n, "top1": st.top1, "top5": st.top5, "top10": st.top10, "trials": st.trials.len() });
    if n == 1 {
        summary["confusion"] = json!(st.confusion());
    }
    if c.digits.is_some() {
        summary["guess"] = json!(st.trials[0].guess);
    }
    Ok(Output {
        header: vec!["trial", "digits", "class", "guess", "rank"],
        rows: st.trials.iter().enumerate().map(|(i, t)| vec![s(i), t.digits.clone(), t.class.clone(), t.guess.clone(), s(t.rank)]).collect(),
        summary,
    })
}

fn run_mitigation(c: &ExperimentConfig, jobs: usize) -> Result<Output, ExperimentError> {
    let h = hierarchy(c);
    let kinds = c.mask_kinds.clone().unwrap_or_else(|| MaskKind::ALL.to_vec());
    let sizes: Vec<u64> = c.sizes.as_deref().unwrap_or_default().iter().map(|&m| (m * MB as f64).round() as u64).collect();
    let channels = [ChannelKind::L2Occupancy, ChannelKind::SlcOccupancy];
    let reps = c.repetitions.unwrap_or(1);
    let mut points: Vec<(ChannelKind, Option<MaskScheme>)> = Vec::new();
    for &ch in &channels {
        points.push((ch, None));
        for &k in &kinds {
            for &sz in &sizes {
                points.push((ch, Some(MaskScheme::new(k, sz))));
            }
        }
    }
    let work: Vec<(usize, usize)> = (0..points.len()).flat_map(|p| (0..reps).map(move |r| (p, r))).collect();
    let res = collect_all(par_map(&work, jobs, |&(p, r)| {
        let (ch, mask) = points[p];
        let cfg = BenchmarkConfig { channel: ch, ..benchmark_config(c, rep_seed(c, r)) };
        masked_benchmark(&h, &cfg, mask.as_ref())
    }))?;
    let mut grid = Vec::new();
    for (p, (ch, mask)) in points.iter().enumerate() {
        let ts: Vec<f64> = (0..reps).map(|r| res[p * reps + r].0).collect();
        let overhead = res[p * reps].1;
        grid.push(crate::mitigation::GridPoint {
            scheme: mask.map(|m| m.kind),
            size: mask.map_or(0, |m| m.buffer_size),
            channel: *ch,
            t_mean: crate::stats::mean(&ts),
            t_scores: ts,
            overhead,
        });
    }
    let thresholds: Vec<Value> = kinds
        .iter()
        .flat_map(|&k| channels.iter().map(move |&ch| (k, ch)))
        .map(|(k, ch)| json!({ "scheme": k, "channel": ch, "threshold_bytes": crate::mitigation::threshold(&grid, k, ch, 4.5) }))
        .collect();
    Ok(Output {
        header: vec!["scheme", "size_bytes", "channel", "t", "overhead"],
        rows: grid.iter().map(|g| g.csv_row().split(',').map(str::to_string).collect()).collect(),
        summary: json!({ "thresholds": thresholds, "grid": grid }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_experiment_resolves_with_defaults() {
        for e in EXPERIMENTS {
            let c = ExperimentConfig::named(e.name).resolve().unwrap();
            assert_eq!(c.experiment, e.name);
            assert!(c.scale.is_some() && c.seed.is_some());
        }
    }

    #[test]
    fn par_map_keeps_order() {
        let v: Vec<u64> = (0..37).collect();
        assert_eq!(par_map(&v, 4, |x| x * x), v.iter().map(|x| x * x).collect::<Vec<_>>());
    }

    #[test]
    fn latency_run_is_byte_identical() {
        let mut c = ExperimentConfig::named("latency");
        c.trials = Some(200);
        let a = run(&c, 1).unwrap();
        let b = run(&c, 1).unwrap();
        assert_eq!(a.csv_bytes(), b.csv_bytes());
        assert_eq!(a.json_bytes(), b.json_bytes());
        let text = String::from_utf8(a.csv_bytes()).unwrap();
        assert!(text.starts_with(&format!("# experiment=latency config_hash={}\n", a.config_hash)));
    }

    #[test]
    fn capacity_run_does_not_depend_on_jobs() {
        let mut c = ExperimentConfig::named("capacity-curves");
        c.scale = Some(16);
        c.sizes = Some(vec![8000.0, 64000.0, 120000.0]);
        assert_eq!(run(&c, 1).unwrap().csv_bytes(), run(&c, 3).unwrap().csv_bytes());
    }

    #[test]
    fn runtime_errors_carry_their_kind() {
        let e: ExperimentError = FlashError::FlashExtractionError { found: 3 }.into();
        assert_eq!(e.exit_code(), 1);
        assert_eq!(e.to_json()["error"], "FlashExtractionError");
        assert_eq!(ExperimentError::Config("x".into()).exit_code(), 2);
    }
}
