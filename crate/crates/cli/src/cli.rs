use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ic2vqa::eval::{Aggregate, ProtocolOptions, SweepAxis};

use crate::commands::{cmd_attack, cmd_evaluate, cmd_prepare, cmd_report, ReportKind};
use crate::config::{CampaignConfig, Overrides, DEFAULT_MAX_FRAMES, DEFAULT_SCALE};
use crate::layout::Layout;
use crate::OUTPUT_ROOT_ENV;

#[derive(Debug, Parser)]
#[command(name = "ic2vqa", version, about = "Cross-modal adversarial campaigns against video quality metrics")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Campaign configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for grid cells (default: available cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Campaign output directory.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Summarize incomplete grids over the slices that are present.
    #[arg(long, global = true)]
    pub allow_partial: bool,
    #[arg(long, global = true)]
    pub max_frames: Option<usize>,
    /// Target frame height; taller clips are downscaled (0 keeps the size).
    #[arg(long, global = true)]
    pub scale: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Trim and downscale a dataset directory into Y4M clips.
    Prepare {
        /// Directory of .y4m files and frame directories (default: the
        /// config's dataset.dir).
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Frame file glob inside frame directories.
        #[arg(long, default_value = "*.png")]
        pattern: String,
    },
    /// Run every configured attack over the ε × I grid.
    Attack,
    /// Correlate attacked scores with the decreasing reference.
    Evaluate {
        #[arg(long, value_enum, default_value_t = AxisArg::Epsilon)]
        axis: AxisArg,
        #[arg(long, value_enum, default_value_t = AggregateArg::Mean)]
        aggregate: AggregateArg,
    },
    /// Emit report data files and plots.
    Report {
        #[arg(long, value_enum)]
        kind: KindArg,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AxisArg {
    Epsilon,
    Iterations,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AggregateArg {
    Mean,
    Median,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Table,
    Curves,
    Heatmap,
}

impl GlobalArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            workers: self.workers,
            output: self.output.clone(),
            max_frames: self.max_frames,
            scale: self.scale,
        }
    }

    fn config(&self) -> Result<Option<CampaignConfig>> {
        match &self.config {
            Some(path) => Ok(Some(CampaignConfig::load(path, &self.overrides())?)),
            None => Ok(None),
        }
    }

    /// The campaign directory from `--output` or the configuration.
    fn output_dir(&self) -> Result<PathBuf> {
        if let Some(cfg) = self.config()? {
            return Ok(cfg.output);
        }
        match &self.output {
            Some(out) => Ok(match std::env::var_os(OUTPUT_ROOT_ENV) {
                Some(root) if out.is_relative() => PathBuf::from(root).join(out),
                _ => out.clone(),
            }),
            None => bail!("pass --config or --output to locate the campaign"),
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Prepare { dataset, pattern } => {
            let cfg = g.config()?;
            let dataset = match (dataset, cfg.as_ref().and_then(|c| c.dataset.dir.clone())) {
                (Some(d), _) | (None, Some(d)) => d,
                (None, None) => bail!("pass --dataset or set dataset.dir in the configuration"),
            };
            let (max_frames, scale) = match &cfg {
                Some(c) => (c.dataset.max_frames, c.dataset.scale),
                None => (g.max_frames.unwrap_or(DEFAULT_MAX_FRAMES), g.scale.unwrap_or(DEFAULT_SCALE)),
            };
            let layout = Layout::new(g.output_dir()?);
            cmd_prepare(&dataset, &pattern, max_frames, scale, &layout.prepared_dir())?;
        }
        Command::Attack => {
            let Some(cfg) = g.config()? else {
                bail!("attack needs --config");
            };
            cmd_attack(&cfg)?;
        }
        Command::Evaluate { axis, aggregate } => {
            let opts = ProtocolOptions {
                axis: match axis {
                    AxisArg::Epsilon => SweepAxis::Epsilon,
                    AxisArg::Iterations => SweepAxis::Iterations,
                },
                aggregate: match aggregate {
                    AggregateArg::Mean => Aggregate::Mean,
                    AggregateArg::Median => Aggregate::Median,
                },
                allow_partial: g.allow_partial,
            };
            cmd_evaluate(&g.output_dir()?, opts)?;
        }
        Command::Report { kind } => {
            let kind = match kind {
                KindArg::Table => ReportKind::Table,
                KindArg::Curves => ReportKind::Curves,
                KindArg::Heatmap => ReportKind::Heatmap,
            };
            for path in cmd_report(&g.output_dir()?, kind, g.allow_partial)? {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}
