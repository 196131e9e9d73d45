//! Command-line front end. Flags override the configuration file; every run
//! writes its artifacts and a `run.json` reproducibility record into one
//! run directory.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::error::{PipelineError, Result};
use crate::stages::{self, load_cohort, load_model, RunContext, MODEL};

/// Environment variable naming the output root when `--out` is absent.
pub const OUT_ENV: &str = "NC2C_OUT";

#[derive(Debug, Parser)]
#[command(name = "nc2c", version, about = "Non-contrast to contrast CT synthesis pipeline")]
pub struct Cli {
    /// TOML configuration file; flags win over its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run directory. Without it runs go to `$NC2C_OUT/<run-id>/` (or the
    /// configured output root, or `runs/`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Threads used inside a stage.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Suppress progress messages.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Serialize, Default)]
pub struct DataArg {
    /// Bundle directory holding a manifest.csv.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize, Default)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Augmentation ratio.
    #[arg(long)]
    pub ratio: Option<usize>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Generate a synthetic paired cohort.
    Phantom {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Convert DICOM series and mask bundles into bundles.
    Ingest {
        /// Directory of `<id>/{nc,cta}/` DICOM series with `<id>/inner` and
        /// `<id>/outer` mask bundles.
        #[arg(long)]
        input: PathBuf,
        /// Seed of the train/test split.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Reorient contrast series and masks onto the non-contrast grid.
    Register {
        #[command(flatten)]
        data: DataArg,
    },
    /// Region statistics, histograms and the ring negative control.
    Analyze {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        patients: Option<usize>,
        #[arg(long)]
        slices: Option<usize>,
    },
    /// Write the augmented training set.
    Augment {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        ratio: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the cycleGAN on the augmented training split.
    Train {
        #[command(flatten)]
        data: DataArg,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Synthesise contrast volumes for the test split.
    Infer {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Metrics, meshes and panels for the test split.
    Evaluate {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Summary tables, loss curves and a Markdown digest.
    Report {
        /// Output directory of a train run.
        #[arg(long)]
        train: PathBuf,
        /// Output directory of an evaluate run.
        #[arg(long)]
        eval: PathBuf,
    },
    /// Every enabled stage, in order.
    Pipeline {
        #[command(flatten)]
        data: DataArg,
        /// Cohort size.
        #[arg(long)]
        n: Option<usize>,
        #[command(flatten)]
        train: TrainArgs,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Phantom { .. } => "phantom",
            Command::Ingest { .. } => "ingest",
            Command::Register { .. } => "register",
            Command::Analyze { .. } => "analyze",
            Command::Augment { .. } => "augment",
            Command::Train { .. } => "train",
            Command::Infer { .. } => "infer",
            Command::Evaluate { .. } => "evaluate",
            Command::Report { .. } => "report",
            Command::Pipeline { .. } => "pipeline",
        }
    }

    fn apply(&self, c: &mut PipelineConfig) {
        let set_data = |c: &mut PipelineConfig, d: &DataArg| {
            if let Some(p) = &d.data {
                c.data = Some(p.clone());
            }
        };
        let set_train = |c: &mut PipelineConfig, t: &TrainArgs| {
            if let Some(v) = t.epochs {
                c.train.epochs = v;
            }
            if let Some(v) = t.lr {
                c.train.lr = v;
            }
            if let Some(v) = t.seed {
                c.train.seed = v;
            }
            if let Some(v) = t.ratio {
                c.augment.ratio = v;
            }
        };
        match self {
            Command::Phantom { n, seed } => {
                if let Some(v) = n {
                    c.phantom.n = *v;
                }
                if let Some(v) = seed {
                    c.phantom.seed = *v;
                }
            }
            Command::Ingest { seed, .. } => {
                if let Some(v) = seed {
                    c.phantom.seed = *v;
                }
            }
            Command::Register { data } | Command::Infer { data, .. } | Command::Evaluate { data, .. } => {
                set_data(c, data)
            }
            Command::Analyze { data, patients, slices } => {
                set_data(c, data);
                if let Some(v) = patients {
                    c.analysis.patients = *v;
                }
                if let Some(v) = slices {
                    c.analysis.slices = *v;
                }
            }
            Command::Augment { data, ratio, seed } => {
                set_data(c, data);
                if let Some(v) = ratio {
                    c.augment.ratio = *v;
                }
                if let Some(v) = seed {
                    c.augment.seed = *v;
                }
            }
            Command::Train { data, train } => {
                set_data(c, data);
                set_train(c, train);
            }
            Command::Pipeline { data, n, train } => {
                set_data(c, data);
                if let Some(v) = n {
                    c.phantom.n = *v;
                }
                set_train(c, train);
                if data.data.is_some() {
                    c.stages.phantom = false;
                }
            }
            Command::Report { .. } => {}
        }
    }
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::Validation(format!("{what} {} does not exist", path.display())))
    }
}

/// Reproducibility record written as `run.json`.
#[derive(Debug, Serialize)]
pub struct RunRecord<'a> {
    pub command: &'a str,
    pub run_id: &'a str,
    pub config_hash: String,
    pub config: &'a PipelineConfig,
    pub seeds: Seeds,
    pub versions: Versions,
    pub arguments: &'a Command,
}

#[derive(Debug, Serialize)]
pub struct Seeds {
    pub phantom: u64,
    pub augment: u64,
    pub train: u64,
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub nc2c: &'static str,
    pub checkpoint_format: u32,
}

/// `<command>-<12 hex>` from the configuration hash and the command's
/// own arguments, so identical invocations share a directory.
pub fn run_id(command: &Command, config: &PipelineConfig) -> String {
    let mut h = Sha256::new();
    h.update(config.hash());
    h.update(serde_json::to_vec(command).expect("arguments serialise"));
    let hex: String = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
    format!("{}-{}", command.name(), &hex[..12])
}

/// Explicit `--out` names the run directory; otherwise the run goes under
/// the output root (`$NC2C_OUT`, then the configured root, then `runs`).
pub fn run_dir(out: Option<&Path>, env_root: Option<PathBuf>, config: &PipelineConfig, id: &str) -> PathBuf {
    match out {
        Some(p) => p.to_path_buf(),
        None => env_root.or_else(|| config.out.clone()).unwrap_or_else(|| PathBuf::from("runs")).join(id),
    }
}

fn data_dir(config: &PipelineConfig) -> Result<PathBuf> {
    config
        .data
        .clone()
        .ok_or_else(|| PipelineError::Validation("no bundle directory: pass --data or set `data`".into()))
}

/// Parses `cli` against the environment and runs it.
pub fn execute(cli: Cli) -> Result<PathBuf> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(w) = cli.workers {
        config.workers = w;
    }
    cli.command.apply(&mut config);
    config.validate()?;
    match &cli.command {
        Command::Ingest { input, .. } => require(input, "input directory")?,
        Command::Infer { checkpoint, .. } | Command::Evaluate { checkpoint, .. } => require(checkpoint, "checkpoint")?,
        Command::Train { train, .. } | Command::Pipeline { train, .. } => {
            if let Some(r) = &train.resume {
                require(r, "checkpoint")?;
            }
        }
        Command::Report { train, eval } => {
            require(train, "train directory")?;
            require(eval, "evaluation directory")?;
        }
        _ => {}
    }
    let id = run_id(&cli.command, &config);
    let env_root = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
    let dir = run_dir(cli.out.as_deref(), env_root, &config, &id);
    std::fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
    let record = RunRecord {
        command: cli.command.name(),
        run_id: &id,
        config_hash: config.hash(),
        config: &config,
        seeds: Seeds { phantom: config.phantom.seed, augment: config.augment.seed, train: config.train.seed },
        versions: Versions { nc2c: env!("CARGO_PKG_VERSION"), checkpoint_format: nc2c_gan::checkpoint::FORMAT_VERSION },
        arguments: &cli.command,
    };
    let path = dir.join("run.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&record)?).map_err(|e| PipelineError::io(&path, e))?;
    let path = dir.join("config.toml");
    std::fs::write(&path, config.to_toml()).map_err(|e| PipelineError::io(&path, e))?;

    let ctx = RunContext { config, quiet: cli.quiet };
    let c = &ctx.config;
    match &cli.command {
        Command::Phantom { .. } => {
            stages::phantom(&ctx, &dir)?;
        }
        Command::Ingest { input, .. } => {
            stages::ingest(&ctx, input, &dir)?;
        }
        Command::Register { .. } => {
            stages::register(&ctx, &data_dir(c)?, &dir)?;
        }
        Command::Analyze { .. } => {
            stages::analyze(&ctx, &load_cohort(&ctx, &data_dir(c)?)?, &dir)?;
        }
        Command::Augment { .. } => {
            stages::augment(&ctx, &load_cohort(&ctx, &data_dir(c)?)?, &dir)?;
        }
        Command::Train { train, .. } => {
            let members = load_cohort(&ctx, &data_dir(c)?)?;
            stages::train(&ctx, &members, &dir, train.resume.as_deref())?;
            ctx.log(format!("model written to {}", dir.join(MODEL).display()));
        }
        Command::Infer { checkpoint, .. } => {
            let state = load_model(checkpoint)?;
            stages::infer(&ctx, &state, &load_cohort(&ctx, &data_dir(c)?)?, &dir)?;
        }
        Command::Evaluate { checkpoint, .. } => {
            let state = load_model(checkpoint)?;
            stages::evaluate(&ctx, &state, &load_cohort(&ctx, &data_dir(c)?)?, &dir)?;
        }
        Command::Report { train, eval } => {
            stages::report(&ctx, train, eval, &dir)?;
        }
        Command::Pipeline { train, .. } => {
            stages::pipeline(&ctx, &dir, train.resume.as_deref())?;
        }
    }
    Ok(dir)
}

/// Entry point: 0 on success or help, 1 on usage and validation errors,
/// 2 on runtime errors.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match execute(cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
