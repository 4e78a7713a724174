//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sparkle_core::calibrate::{BasisKind, CalibrationConfig};
use sparkle_core::io;
use sparkle_core::reconstruct::ShiftSearchConfig;

use crate::commands::{self, analyze::Analysis, parse_range, parse_shape};
use crate::config::ExperimentConfig;
use crate::error::{at_path, CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "sparkle",
    version,
    about = "Simulate, calibrate and invert light transport through glittery surfaces"
)]
pub struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Overrides the configuration's seed (applied before hashing).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "SPARKLE_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a starter configuration.
    InitConfig {
        /// Tiny scene for quick trials.
        #[arg(long)]
        small: bool,
        /// Destination; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render probe captures, test images and the exact matrix for a configured scene.
    Simulate {
        #[arg(long, default_value = "sim")]
        out_dir: PathBuf,
    },
    /// Merge an exposure stack into a radiance image.
    Hdr {
        /// JSON with `exposures: [{time, path}]` and an optional `window`.
        #[arg(long)]
        stack: PathBuf,
        /// Dark frame(s) to average and subtract.
        #[arg(long, num_args = 1..)]
        background: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the transfer matrix from probe captures.
    Calibrate(CalibrateCmd),
    /// Recover a lightmap from a sensor image.
    Reconstruct(ReconstructCmd),
    /// Matrix diagnostics and parameter sweeps.
    Analyze {
        #[arg(value_enum)]
        analysis: AnalysisKind,
        /// Use this matrix instead of the simulated one (overlap, spectrum).
        #[arg(long, requires = "screen")]
        matrix: Option<PathBuf>,
        /// Lightmap shape `WxH[xC]` of `--matrix`.
        #[arg(long)]
        screen: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate, calibrate and reconstruct in memory; writes report.json.
    Pipeline {
        #[arg(long, default_value = "run")]
        out_dir: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct CalibrateCmd {
    /// Manifest written by `simulate` (or by a capture session).
    #[arg(long)]
    pub responses: PathBuf,
    /// Probe families to use.
    #[arg(long, value_delimiter = ',', default_value = "impulse,dct,random")]
    pub bases: Vec<BasisName>,
    /// Number of random probes (default: all in the manifest).
    #[arg(long)]
    pub k: Option<usize>,
    /// Fraction of brightest pixels kept per impulse.
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Weight of the DCT and random terms: `auto` (1/N) or a number.
    #[arg(long)]
    pub lambda: Option<String>,
    /// Estimate every sensor row instead of the bright mask.
    #[arg(long)]
    pub no_mask: bool,
    #[arg(long, num_args = 1..)]
    pub background: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReconstructCmd {
    #[arg(long)]
    pub matrix: PathBuf,
    /// Lightmap shape `WxH[xC]`; a square gray screen is assumed if omitted.
    #[arg(long)]
    pub screen: Option<String>,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, num_args = 1..)]
    pub background: Vec<PathBuf>,
    /// Solve with x >= 0.
    #[arg(long)]
    pub nonneg: bool,
    /// Search compensating shifts `min,max,step` (sensor pixels).
    #[arg(long)]
    pub shift_search: Option<String>,
    /// Search a square grid instead of horizontal shifts only.
    #[arg(long, requires = "shift_search")]
    pub two_d: bool,
    /// 8-bit preview of the result.
    #[arg(long)]
    pub preview: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BasisName {
    Impulse,
    Dct,
    Random,
}

impl From<BasisName> for BasisKind {
    fn from(b: BasisName) -> Self {
        match b {
            BasisName::Impulse => BasisKind::Impulse,
            BasisName::Dct => BasisKind::Dct,
            BasisName::Random => BasisKind::Random,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnalysisKind {
    Overlap,
    Spectrum,
    NoiseSweep,
    BasisSweep,
    TestNoise,
    Misalignment,
}

impl From<AnalysisKind> for Analysis {
    fn from(a: AnalysisKind) -> Self {
        match a {
            AnalysisKind::Overlap => Analysis::Overlap,
            AnalysisKind::Spectrum => Analysis::Spectrum,
            AnalysisKind::NoiseSweep => Analysis::NoiseSweep,
            AnalysisKind::BasisSweep => Analysis::BasisSweep,
            AnalysisKind::TestNoise => Analysis::TestNoise,
            AnalysisKind::Misalignment => Analysis::Misalignment,
        }
    }
}

impl Cli {
    fn load_config(&self) -> CliResult<ExperimentConfig> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| CliError::Config("this command needs --config".into()))?;
        let mut cfg = ExperimentConfig::load(path)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("serialisable"));
}

pub fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        // a second initialisation (e.g. in tests) keeps the existing pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match &cli.command {
        Command::InitConfig { small, out } => {
            let mut cfg = ExperimentConfig::starter(*small);
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            match out {
                Some(p) => crate::manifest::write_json(p, &cfg)?,
                None => print_json(&cfg),
            }
        }
        Command::Simulate { out_dir } => {
            let cfg = cli.load_config()?;
            let m = commands::simulate::run(&cfg, out_dir)?;
            log::info!("config hash {}", m.config_hash);
        }
        Command::Hdr {
            stack,
            background,
            out,
        } => {
            let bg = commands::calibrate::load_background(background)?;
            print_json(&commands::hdr::run(stack, bg.as_ref(), out)?);
        }
        Command::Calibrate(c) => {
            let defaults = match &cli.config {
                Some(_) => cli.load_config()?.calibration.core(),
                None => CalibrationConfig::default(),
            };
            let lambda = match c.lambda.as_deref() {
                None => defaults.lambda,
                Some("auto") => None,
                Some(v) => Some(v.parse::<f64>().ok().filter(|l| *l > 0.0).ok_or_else(|| {
                    CliError::Config(format!(
                        "--lambda `{v}`: expected `auto` or a positive number"
                    ))
                })?),
            };
            let args = commands::calibrate::CalibrateArgs {
                families: c.bases.iter().map(|&b| b.into()).collect(),
                k: c.k,
                config: CalibrationConfig {
                    lambda,
                    fraction: c.fraction.unwrap_or(defaults.fraction),
                    ..defaults
                },
                use_mask: !c.no_mask,
                background: commands::calibrate::load_background(&c.background)?.map(|b| b.image),
            };
            let a = commands::calibrate::run(&c.responses, &args, &c.out)?;
            print_json(
                &serde_json::json!({ "rows": a.rows(), "cols": a.cols(), "masked": a.mask.is_some() }),
            );
        }
        Command::Reconstruct(c) => {
            let shape = c.screen.as_deref().map(parse_shape).transpose()?;
            let a = at_path(io::load_matrix(&c.matrix, shape), &c.matrix)?;
            let shift_search = match &c.shift_search {
                Some(s) => {
                    let (min, max, step) = parse_range(s)?;
                    Some(if c.two_d {
                        ShiftSearchConfig::square(min, max, step)?
                    } else {
                        ShiftSearchConfig::horizontal(min, max, step)?
                    })
                }
                None => None,
            };
            let bg = commands::calibrate::load_background(&c.background)?;
            let args = commands::reconstruct::ReconstructArgs {
                nonnegative: c.nonneg,
                shift_search,
                preview: c.preview.clone(),
            };
            print_json(&commands::reconstruct::run(
                &a,
                &c.image,
                bg.as_ref(),
                &args,
                &c.out,
            )?);
        }
        Command::Analyze {
            analysis,
            matrix,
            screen,
            out,
        } => {
            let cfg = cli.load_config()?;
            let a = match matrix {
                Some(p) => {
                    let shape = screen.as_deref().map(parse_shape).transpose()?;
                    Some(at_path(io::load_matrix(p, shape), p)?)
                }
                None => None,
            };
            print_json(&commands::analyze::run(
                (*analysis).into(),
                &cfg,
                a.as_ref(),
                out,
            )?);
        }
        Command::Pipeline { out_dir } => {
            let cfg = cli.load_config()?;
            print_json(&commands::pipeline::run(&cfg, out_dir)?);
        }
    }
    Ok(())
}
