use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use slcsim::attacks::ChannelKind;
use slcsim::experiment::{emit_plotdata, run, ExperimentConfig, ExperimentError, EXPERIMENTS};
use slcsim::hierarchy::SlcPolicy;
use slcsim::probe::Pattern;
use slcsim::victims::Placement;

#[derive(Parser)]
#[command(name = "slcsim", version, about = "Cache hierarchy simulator and SLC side-channel lab")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment and write its CSV and JSON artifacts.
    Run(RunArgs),
    /// Turn an artifact CSV into long-format series,x,y rows.
    EmitPlotdata {
        artifact: PathBuf,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the available experiments.
    ListExperiments,
    /// Parse and resolve a config file without running it.
    ValidateConfig { file: PathBuf },
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    experiment: Option<String>,
    /// TOML config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scale: Option<u64>,
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
    #[arg(long, value_enum)]
    pattern: Option<PatternArg>,
    #[arg(long, value_enum)]
    channel: Option<ChannelArg>,
    #[arg(long, value_enum)]
    placement: Option<PlacementArg>,
    #[arg(long)]
    digits: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    /// Defaults to $SLCSIM_OUT_DIR, then the current directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Exclusive,
    NonInclusive,
}

#[derive(Clone, Copy, ValueEnum)]
enum PatternArg {
    Sequential,
    Alternated,
}

#[derive(Clone, Copy, ValueEnum)]
enum ChannelArg {
    L2,
    Slc,
    Total,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlacementArg {
    SameCluster,
    OtherCluster,
    Gpu,
}

fn config_error(m: impl ToString) -> ExperimentError {
    ExperimentError::Config(m.to_string())
}

fn read_config(path: &Path) -> Result<ExperimentConfig, ExperimentError> {
    let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    ExperimentConfig::from_toml(&text)
}

fn run_cmd(a: RunArgs) -> Result<(), ExperimentError> {
    let mut c = match &a.config {
        Some(p) => read_config(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(e) = a.experiment {
        c.experiment = e;
    }
    if c.experiment.is_empty() {
        return Err(config_error("no experiment given; use --experiment or a config file"));
    }
    c.seed = a.seed.or(c.seed);
    c.scale = a.scale.or(c.scale);
    c.trials = a.trials.or(c.trials);
    c.digits = a.digits.or(c.digits);
    if let Some(p) = a.policy {
        c.slc_policy = Some(match p {
            PolicyArg::Exclusive => SlcPolicy::Exclusive,
            PolicyArg::NonInclusive => SlcPolicy::NonInclusive,
        });
    }
    if let Some(p) = a.pattern {
        c.pattern = Some(match p {
            PatternArg::Sequential => Pattern::Sequential,
            PatternArg::Alternated => Pattern::Alternated,
        });
    }
    if let Some(ch) = a.channel {
        c.channel = Some(match ch {
            ChannelArg::L2 => ChannelKind::L2Occupancy,
            ChannelArg::Slc => ChannelKind::SlcOccupancy,
            ChannelArg::Total => ChannelKind::TotalOccupancy,
        });
    }
    if let Some(p) = a.placement {
        c.placement = Some(match p {
            PlacementArg::SameCluster => Placement::SameClusterCpu,
            PlacementArg::OtherCluster => Placement::OtherClusterCpu,
            PlacementArg::Gpu => Placement::Gpu,
        });
    }
    let dir = a
        .out_dir
        .or_else(|| c.out_dir.as_ref().map(PathBuf::from))
        .or_else(|| std::env::var_os("SLCSIM_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let art = run(&c, a.jobs)?;
    let (csv, js) = art.write(&dir).map_err(|e| ExperimentError::Runtime { kind: "IoError".into(), message: e.to_string() })?;
    println!("{}", csv.display());
    println!("{}", js.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.cmd {
        Cmd::Run(a) => run_cmd(a),
        Cmd::EmitPlotdata { artifact, out } => std::fs::read_to_string(&artifact)
            .map_err(|e| config_error(format!("{}: {e}", artifact.display())))
            .and_then(|t| emit_plotdata(&t))
            .and_then(|p| match out {
                Some(o) => std::fs::write(&o, p).map_err(|e| config_error(format!("{}: {e}", o.display()))),
                None => {
                    print!("{p}");
                    Ok(())
                }
            }),
        Cmd::ListExperiments => {
            for e in EXPERIMENTS {
                println!("{:<18} {}", e.name, e.about);
            }
            Ok(())
        }
        Cmd::ValidateConfig { file } => read_config(&file).and_then(|c| c.resolve()).map(|c| {
            println!("{}", json!({ "experiment": c.experiment, "config_hash": c.hash() }));
        }),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
