//! `tilestream` command-line frontend.
//!
//! Settings are layered: built-in defaults, then the `--config` file
//! (flat `key=value` lines), then `--set key=value` pairs, then dedicated
//! flags.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tilestream::pipeline::{self, BandwidthChoice, RunConfig};
use tilestream::rdmodel::ModelFamily;
use tilestream::{Error, ErrorKind};

const EXIT_USAGE: u8 = 2;

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Parse => 3,
        ErrorKind::Validation => 4,
        ErrorKind::Infeasible => 5,
        ErrorKind::Io => 6,
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "tilestream",
    version,
    about = "Navigation-aware tile rate allocation experiments"
)]
struct Cli {
    /// Flat key=value settings file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed for synthetic generation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory receiving output files.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Extra key=value setting; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    settings: Vec<String>,
    /// Evaluate GOPs one at a time instead of in parallel.
    #[arg(long, global = true)]
    serial: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic trace, R-D parameters and sample points.
    Gen(GenArgs),
    /// Build per-GOP heat maps from one or more traces.
    Heatmap(HeatmapArgs),
    /// Fit R-D models to sample points.
    Fit(FitArgs),
    /// Allocate rates per GOP for a heat map and R-D parameters.
    Optimize(OptimizeArgs),
    /// Replay a trace against the proposed and baseline systems.
    Simulate(SimulateArgs),
    /// Sweep bandwidth and compare the three systems.
    Sweep(SweepArgs),
}

#[derive(Args, Debug, Default)]
struct GridArgs {
    /// Tile grid as COLSxROWS.
    #[arg(long)]
    grid: Option<String>,
    /// Frames per GOP.
    #[arg(long)]
    gop: Option<usize>,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[command(flatten)]
    grid: GridArgs,
    /// Number of trace frames.
    #[arg(long)]
    frames: Option<usize>,
    /// Log-normal noise applied to sample points.
    #[arg(long)]
    sample_noise: Option<f64>,
}

#[derive(Args, Debug)]
struct HeatmapArgs {
    #[command(flatten)]
    grid: GridArgs,
    /// Trace CSV files; heat maps are averaged across them.
    #[arg(long = "trace", required = true, num_args = 1..)]
    traces: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Sample-point CSV.
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    qp_rate_family: Option<ModelFamily>,
    #[arg(long)]
    rd_family: Option<ModelFamily>,
}

#[derive(Args, Debug)]
struct BandwidthArgs {
    /// Constant per-GOP bandwidth in kbps.
    #[arg(long, conflicts_with = "match_monolithic_qp")]
    bandwidth: Option<f64>,
    /// Match the per-GOP rate of a uniform encoding at this QP.
    #[arg(long)]
    match_monolithic_qp: Option<i32>,
}

impl BandwidthArgs {
    fn choice(&self, cfg: &RunConfig) -> BandwidthChoice {
        match (self.bandwidth, self.match_monolithic_qp) {
            (Some(c), _) => BandwidthChoice::Constant(c),
            (None, Some(qp)) => BandwidthChoice::MatchMonolithic(qp),
            (None, None) => BandwidthChoice::MatchMonolithic(cfg.monolithic_qp),
        }
    }
}

#[derive(Args, Debug)]
struct OptimizeArgs {
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long)]
    heatmap: PathBuf,
    /// R-D parameter JSON.
    #[arg(long)]
    rd: PathBuf,
    #[command(flatten)]
    bandwidth: BandwidthArgs,
    /// Skip tiles whose likelihood is at or below the skip threshold.
    #[arg(long)]
    skip: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    rd: PathBuf,
    /// Heat maps for the proposed system; derived from the trace if absent.
    #[arg(long)]
    heatmap: Option<PathBuf>,
    #[command(flatten)]
    bandwidth: BandwidthArgs,
    #[arg(long)]
    skip: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    rd: PathBuf,
    #[arg(long)]
    heatmap: Option<PathBuf>,
    /// Comma-separated bandwidths in kbps; ten points are derived if absent.
    #[arg(long, value_delimiter = ',')]
    bandwidths: Vec<f64>,
    #[arg(long)]
    skip: bool,
}

fn apply_grid(cfg: &mut RunConfig, grid: &GridArgs) -> Result<(), Error> {
    if let Some(g) = &grid.grid {
        cfg.apply("grid", g)?;
    }
    if let Some(g) = grid.gop {
        cfg.gop_size = g;
    }
    Ok(())
}

fn build_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
        cfg.apply_file_contents(&text).map_err(|e| e.in_file(path))?;
    }
    for s in &cli.settings {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::validation(format!("--set expects KEY=VALUE, got `{s}`")))?;
        cfg.apply(k, v)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.serial {
        cfg.parallel = false;
    }
    match &cli.command {
        Command::Gen(a) => {
            apply_grid(&mut cfg, &a.grid)?;
            if let Some(f) = a.frames {
                cfg.frames = f;
            }
            if let Some(n) = a.sample_noise {
                cfg.sample_noise = n;
            }
        }
        Command::Heatmap(a) => apply_grid(&mut cfg, &a.grid)?,
        Command::Fit(a) => {
            if let Some(f) = a.qp_rate_family {
                cfg.qp_rate_family = f;
            }
            if let Some(f) = a.rd_family {
                cfg.rate_distortion_family = f;
            }
        }
        Command::Optimize(a) => {
            apply_grid(&mut cfg, &a.grid)?;
            cfg.skip_enabled |= a.skip;
        }
        Command::Simulate(a) => {
            apply_grid(&mut cfg, &a.grid)?;
            cfg.skip_enabled |= a.skip;
        }
        Command::Sweep(a) => {
            apply_grid(&mut cfg, &a.grid)?;
            cfg.skip_enabled |= a.skip;
            if !a.bandwidths.is_empty() {
                cfg.bandwidths = a.bandwidths.clone();
            }
        }
    }
    Ok(cfg)
}

fn report(paths: &[&Path]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    let cfg = build_config(cli)?;
    let out = cli.out_dir.as_path();
    match &cli.command {
        Command::Gen(_) => {
            let o = pipeline::cmd_gen(&cfg, out)?;
            report(&[&o.trace, &o.rd_params, &o.samples]);
        }
        Command::Heatmap(a) => {
            let o = pipeline::cmd_heatmap(&cfg, &a.traces, out)?;
            report(&[&o.heatmap, &o.average]);
            println!("{} GOPs", o.gops);
        }
        Command::Fit(a) => {
            let o = pipeline::cmd_fit(&cfg, &a.samples, out)?;
            report(&[&o.rd_params, &o.quality, &o.points]);
            println!("{} records fitted, {} flagged", o.records, o.flagged.len());
            for (gop, tile, why) in &o.flagged {
                eprintln!("warning: GOP {gop} tile {tile}: {why}");
            }
        }
        Command::Optimize(a) => {
            let o = pipeline::cmd_optimize(&cfg, &a.heatmap, &a.rd, a.bandwidth.choice(&cfg), out)?;
            report(&[&o.allocation, &o.summary]);
        }
        Command::Simulate(a) => {
            let o = pipeline::cmd_simulate(
                &cfg,
                &a.trace,
                &a.rd,
                a.heatmap.as_deref(),
                a.bandwidth.choice(&cfg),
                out,
            )?;
            let mut paths: Vec<&Path> = o.reports.iter().map(PathBuf::as_path).collect();
            paths.extend([o.allocations.as_path(), o.summary.as_path(), o.quality.as_path()]);
            report(&paths);
            for r in &o.runs {
                println!(
                    "{}: mean PSNR {:.3} dB, stddev {:.3} dB",
                    r.system.label(),
                    r.report.overall_mean_db,
                    r.report.overall_stddev_db
                );
            }
        }
        Command::Sweep(a) => {
            let o = pipeline::cmd_sweep(&cfg, &a.trace, &a.rd, a.heatmap.as_deref(), out)?;
            report(&[&o.sweep, &o.allocations, &o.summary_path]);
            println!("{}", o.summary.line());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
