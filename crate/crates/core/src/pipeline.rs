//! Batch experiment pipeline behind the command-line frontend.
//!
//! Each `cmd_*` function reads its inputs, runs one stage and writes its
//! artifacts into an output directory, returning the paths it wrote.
//! Outputs are sorted before writing so parallel and serial runs produce
//! byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{monolithic_allocation, monolithic_rate};
use crate::error::{Error, Result};
use crate::evaluation::{
    bandwidth_sweep, rate_savings, Bandwidth, EvalOptions, RateMode, Scenario, SweepPoint, System, SystemRun,
};
use crate::geometry::{TileGrid, ViewportSpec};
use crate::io;
use crate::navigation::{
    aggregate_traces, parse_trace_with, trace_heatmaps, video_average_heatmap, write_trace, GopStructure, HeatMap,
    Trace,
};
use crate::optimizer::{
    solve_sequence, AllocationOptions, AllocationResult, DEFAULT_QP_SET, DEFAULT_SKIP_PENALTY_MSE,
    DEFAULT_SKIP_THRESHOLD,
};
use crate::rdmodel::{distortion_from_rate, fit_qp_rate, fit_rate_distortion, rate_from_qp, ModelFamily, TileCurves};
use crate::synthgen::{synth_rd_params, synth_samples, synth_trace, SampleRow, SynthConfig};

pub const TRACE_FILE: &str = "trace.csv";
pub const RD_PARAMS_FILE: &str = "rd_params.json";
pub const SAMPLES_FILE: &str = "rd_samples.csv";
pub const HEATMAP_FILE: &str = "heatmap.csv";
pub const HEATMAP_AVERAGE_FILE: &str = "heatmap_average.csv";
pub const FIT_FILE: &str = "rd_fit.json";
pub const FIT_QUALITY_FILE: &str = "fit_quality.csv";
pub const FIT_POINTS_FILE: &str = "fit_points.csv";
pub const ALLOCATION_FILE: &str = "allocation.csv";
pub const ALLOCATION_SUMMARY_FILE: &str = "allocation_summary.json";
pub const SIM_ALLOCATION_FILE: &str = "system_allocations.csv";
pub const SIM_SUMMARY_FILE: &str = "system_allocation_summary.json";
pub const QUALITY_SUMMARY_FILE: &str = "quality_summary.json";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_ALLOCATION_FILE: &str = "sweep_allocations.csv";
pub const SWEEP_SUMMARY_FILE: &str = "sweep_summary.json";

pub fn report_file(system: System) -> String {
    format!("report_{}.csv", system.label())
}

/// Run-wide settings. Defaults reproduce the reference experiment setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub cols: usize,
    pub rows: usize,
    pub hfov_deg: f64,
    pub vfov_deg: f64,
    pub sample_grid: usize,
    pub gop_size: usize,
    pub fps: f64,
    pub qp_set: Vec<i32>,
    pub monolithic_qp_set: Vec<i32>,
    /// Uniform QP whose per-GOP rate sets the bandwidth in `simulate`.
    pub monolithic_qp: i32,
    pub qp_min: i32,
    pub qp_max: i32,
    pub qp_rate_family: ModelFamily,
    pub rate_distortion_family: ModelFamily,
    pub skip_enabled: bool,
    pub skip_threshold: f64,
    pub skip_penalty_mse: f64,
    /// Sweep bandwidths in kbps; empty picks ten points spanning the
    /// feasible range.
    pub bandwidths: Vec<f64>,
    pub seed: u64,
    pub frames: usize,
    pub sample_noise: f64,
    pub speed_window: usize,
    pub rate_mode: RateMode,
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            cols: 6,
            rows: 4,
            hfov_deg: ViewportSpec::DEFAULT_HFOV_DEG,
            vfov_deg: ViewportSpec::DEFAULT_VFOV_DEG,
            sample_grid: ViewportSpec::DEFAULT_SAMPLE_GRID,
            gop_size: GopStructure::DEFAULT_GOP_SIZE,
            fps: Trace::DEFAULT_FPS,
            qp_set: DEFAULT_QP_SET.to_vec(),
            monolithic_qp_set: crate::baselines::DEFAULT_MONOLITHIC_QP_SET.to_vec(),
            monolithic_qp: 36,
            qp_min: 22,
            qp_max: 42,
            qp_rate_family: ModelFamily::Exponential,
            rate_distortion_family: ModelFamily::PowerLaw,
            skip_enabled: false,
            skip_threshold: DEFAULT_SKIP_THRESHOLD,
            skip_penalty_mse: DEFAULT_SKIP_PENALTY_MSE,
            bandwidths: Vec::new(),
            seed: SynthConfig::reference().seed,
            frames: 1920,
            sample_noise: 0.0,
            speed_window: 1,
            rate_mode: RateMode::Continuous,
            parallel: true,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::validation(format!("invalid value `{value}` for `{key}`")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(Error::validation(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

impl RunConfig {
    /// Sets one `key=value` setting. Keys use the field names, with `-`
    /// accepted in place of `_`.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        match key.as_str() {
            "cols" => self.cols = parse_value(&key, value)?,
            "rows" => self.rows = parse_value(&key, value)?,
            "grid" => {
                let (c, r) = value
                    .split_once(['x', 'X'])
                    .ok_or_else(|| Error::validation(format!("grid must look like 6x4, got `{value}`")))?;
                self.cols = parse_value(&key, c)?;
                self.rows = parse_value(&key, r)?;
            }
            "hfov" | "hfov_deg" => self.hfov_deg = parse_value(&key, value)?,
            "vfov" | "vfov_deg" => self.vfov_deg = parse_value(&key, value)?,
            "sample_grid" => self.sample_grid = parse_value(&key, value)?,
            "gop" | "gop_size" => self.gop_size = parse_value(&key, value)?,
            "fps" => self.fps = parse_value(&key, value)?,
            "qp_set" => self.qp_set = parse_list(&key, value)?,
            "monolithic_qp_set" => self.monolithic_qp_set = parse_list(&key, value)?,
            "monolithic_qp" => self.monolithic_qp = parse_value(&key, value)?,
            "qp_min" => self.qp_min = parse_value(&key, value)?,
            "qp_max" => self.qp_max = parse_value(&key, value)?,
            "qp_rate_family" => self.qp_rate_family = value.trim().parse()?,
            "rate_distortion_family" | "rd_family" => self.rate_distortion_family = value.trim().parse()?,
            "skip" | "skip_enabled" => self.skip_enabled = parse_bool(&key, value)?,
            "skip_threshold" => self.skip_threshold = parse_value(&key, value)?,
            "skip_penalty_mse" => self.skip_penalty_mse = parse_value(&key, value)?,
            "bandwidths" | "bandwidth" => self.bandwidths = parse_list(&key, value)?,
            "seed" => self.seed = parse_value(&key, value)?,
            "frames" => self.frames = parse_value(&key, value)?,
            "sample_noise" => self.sample_noise = parse_value(&key, value)?,
            "speed_window" => self.speed_window = parse_value(&key, value)?,
            "rate_mode" => self.rate_mode = value.trim().parse()?,
            "parallel" => self.parallel = parse_bool(&key, value)?,
            _ => return Err(Error::validation(format!("unknown setting `{key}`"))),
        }
        Ok(())
    }

    /// Reads a flat `key=value` file; blank lines and `#` comments are
    /// ignored.
    pub fn apply_file_contents(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(n as u64 + 1, format!("expected key=value, got `{line}`")))?;
            self.apply(key, value).map_err(|e| match e {
                Error::Validation(msg) => Error::parse(n as u64 + 1, msg),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TileGrid> {
        TileGrid::new(self.cols, self.rows)
    }

    pub fn viewport(&self) -> Result<ViewportSpec> {
        ViewportSpec::new(self.hfov_deg, self.vfov_deg, self.sample_grid)
    }

    pub fn allocation_options(&self) -> AllocationOptions {
        AllocationOptions {
            qp_min: self.qp_min,
            qp_max: self.qp_max,
            qp_set: self.qp_set.clone(),
            skip_enabled: self.skip_enabled,
            skip_threshold: self.skip_threshold,
            skip_penalty_mse: self.skip_penalty_mse,
        }
    }

    pub fn synth_config(&self) -> Result<SynthConfig> {
        Ok(SynthConfig {
            seed: self.seed,
            n_frames: self.frames,
            fps: self.fps,
            grid: self.grid()?,
            gop_size: self.gop_size,
            qp_rate_family: self.qp_rate_family,
            rate_distortion_family: self.rate_distortion_family,
            sample_noise: self.sample_noise,
            ..SynthConfig::reference()
        })
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions::new(self.rate_mode, self.skip_penalty_mse)
    }
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::from(e).in_file(dir))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::from(e).in_file(&path))?;
    Ok(path)
}

pub fn load_trace(path: &Path, cfg: &RunConfig) -> Result<Trace> {
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    parse_trace_with(&read_file(path)?, cfg.fps, id).map_err(|e| e.in_file(path))
}

pub fn load_curves(path: &Path) -> Result<Vec<Vec<TileCurves>>> {
    io::parse_rd_records(&read_file(path)?)
        .and_then(|r| io::curves_from_records(&r))
        .map_err(|e| e.in_file(path))
}

pub fn load_heatmaps(path: &Path) -> Result<Vec<HeatMap>> {
    io::parse_heatmaps(&read_file(path)?).map_err(|e| e.in_file(path))
}

#[derive(Debug, Clone)]
pub struct GenOutputs {
    pub trace: PathBuf,
    pub rd_params: PathBuf,
    pub samples: PathBuf,
}

/// Synthetic trace, ground-truth R-D parameters and the sample points they
/// imply at the tile QP ladder.
pub fn cmd_gen(cfg: &RunConfig, out_dir: &Path) -> Result<GenOutputs> {
    let synth = cfg.synth_config()?;
    let trace = synth_trace(&synth)?;
    let curves = synth_rd_params(&synth)?;
    let samples = synth_samples(&synth, &curves, &cfg.qp_set);
    Ok(GenOutputs {
        trace: write_file(out_dir, TRACE_FILE, &write_trace(&trace))?,
        rd_params: write_file(
            out_dir,
            RD_PARAMS_FILE,
            &io::write_rd_records(&io::records_from_curves(&curves))?,
        )?,
        samples: write_file(out_dir, SAMPLES_FILE, &io::write_samples(&samples)?)?,
    })
}

fn gop_structure_for(cfg: &RunConfig, gops: Option<usize>, traces: &[Trace]) -> Result<GopStructure> {
    let total = match gops {
        Some(g) => g * cfg.gop_size,
        None => traces.iter().map(Trace::frame_span).max().unwrap_or(0),
    };
    GopStructure::new(cfg.gop_size, total)
}

/// Per-GOP heat maps aggregated over one or more traces.
pub fn heatmaps_for(cfg: &RunConfig, traces: &[Trace], gop: GopStructure) -> Result<Vec<HeatMap>> {
    let (spec, grid) = (cfg.viewport()?, cfg.grid()?);
    let per_trace = traces
        .iter()
        .map(|t| trace_heatmaps(t, spec, grid, gop))
        .collect::<Result<Vec<_>>>()?;
    aggregate_traces(&per_trace)
}

#[derive(Debug, Clone)]
pub struct HeatmapOutputs {
    pub heatmap: PathBuf,
    pub average: PathBuf,
    pub gops: usize,
}

pub fn cmd_heatmap(cfg: &RunConfig, traces: &[PathBuf], out_dir: &Path) -> Result<HeatmapOutputs> {
    if traces.is_empty() {
        return Err(Error::validation("no trace files given"));
    }
    let loaded = traces.iter().map(|p| load_trace(p, cfg)).collect::<Result<Vec<_>>>()?;
    let gop = gop_structure_for(cfg, None, &loaded)?;
    let maps = heatmaps_for(cfg, &loaded, gop)?;
    let average = video_average_heatmap(&maps)?;
    Ok(HeatmapOutputs {
        heatmap: write_file(out_dir, HEATMAP_FILE, &io::write_heatmaps(&maps)?)?,
        average: write_file(out_dir, HEATMAP_AVERAGE_FILE, &io::write_average_heatmap(&average)?)?,
        gops: maps.len(),
    })
}

#[derive(Debug, Clone)]
pub struct FitOutputs {
    pub rd_params: PathBuf,
    pub quality: PathBuf,
    pub points: PathBuf,
    pub records: usize,
    /// `(gop, tile, reason)` of every failed fit.
    pub flagged: Vec<(usize, usize, String)>,
}

pub fn cmd_fit(cfg: &RunConfig, samples_path: &Path, out_dir: &Path) -> Result<FitOutputs> {
    let rows = io::parse_samples(&read_file(samples_path)?).map_err(|e| e.in_file(samples_path))?;
    let mut groups: BTreeMap<(usize, usize), Vec<SampleRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.gop, r.tile)).or_default().push(r);
    }

    let mut records = Vec::new();
    let mut quality = Vec::new();
    let mut points = Vec::new();
    let mut flagged = Vec::new();
    for (&(gop, tile), rows) in &groups {
        let pts: Vec<_> = rows.iter().map(SampleRow::point).collect();
        let qr = fit_qp_rate(&pts, cfg.qp_rate_family);
        let rd = fit_rate_distortion(&pts, cfg.rate_distortion_family);
        let row = |model: &str, family, scale, shape, report: Option<crate::rdmodel::FitReport>, status: String| {
            io::FitQualityRow {
                gop,
                tile,
                model: model.to_string(),
                family,
                scale,
                shape,
                rmse_log: report.map(|r| r.rmse_log),
                r2_log: report.map(|r| r.r2_log),
                n_points: pts.len(),
                status,
            }
        };
        quality.push(match &qr {
            Ok((c, rep)) => row("qp_rate", Some(c.family), Some(c.a), Some(c.b), Some(*rep), "ok".into()),
            Err(e) => row("qp_rate", Some(cfg.qp_rate_family), None, None, None, e.to_string()),
        });
        quality.push(match &rd {
            Ok((c, rep)) => row(
                "rate_distortion",
                Some(c.family),
                Some(c.c),
                Some(c.d),
                Some(*rep),
                "ok".into(),
            ),
            Err(e) => row(
                "rate_distortion",
                Some(cfg.rate_distortion_family),
                None,
                None,
                None,
                e.to_string(),
            ),
        });
        for p in &pts {
            points.push(io::FitPointRow {
                gop,
                tile,
                qp: p.qp,
                rate_kbps: p.rate_kbps,
                mse: p.mse,
                rate_model_kbps: qr.as_ref().ok().map(|(c, _)| rate_from_qp(c, p.qp as f64)),
                mse_model: rd
                    .as_ref()
                    .ok()
                    .and_then(|(c, _)| distortion_from_rate(c, p.rate_kbps).ok()),
            });
        }
        match (qr, rd) {
            (Ok((qp_rate, fit)), Ok((rate_distortion, rd_fit))) => {
                let mut rec = io::RdRecord::new(
                    gop,
                    tile,
                    TileCurves {
                        qp_rate,
                        rate_distortion,
                    },
                );
                rec.fit = Some(fit);
                rec.rd_fit = Some(rd_fit);
                records.push(rec);
            }
            (a, b) => {
                let reason = [a.err(), b.err()]
                    .into_iter()
                    .flatten()
                    .map(|e| e.to_string())
                    .collect::<Vec<_>>()
                    .join("; ");
                flagged.push((gop, tile, reason));
            }
        }
    }

    Ok(FitOutputs {
        rd_params: write_file(out_dir, FIT_FILE, &io::write_rd_records(&records)?)?,
        quality: write_file(out_dir, FIT_QUALITY_FILE, &io::write_fit_quality(&quality)?)?,
        points: write_file(out_dir, FIT_POINTS_FILE, &io::write_fit_points(&points)?)?,
        records: records.len(),
        flagged,
    })
}

/// How the per-GOP bandwidth is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthChoice {
    Constant(f64),
    /// Per-GOP rate of a uniform encoding at this QP.
    MatchMonolithic(i32),
}

impl BandwidthChoice {
    fn to_bandwidth(self) -> Bandwidth {
        match self {
            BandwidthChoice::Constant(c) => Bandwidth::Constant(c),
            BandwidthChoice::MatchMonolithic(qp) => Bandwidth::MatchMonolithic(qp),
        }
    }
}

fn check_alignment(heatmaps: &[HeatMap], curves: &[Vec<TileCurves>], grid: TileGrid) -> Result<()> {
    if heatmaps.len() != curves.len() {
        return Err(Error::validation(format!(
            "{} heat-map GOPs but {} R-D GOPs",
            heatmaps.len(),
            curves.len()
        )));
    }
    let tiles = grid.tile_count();
    if heatmaps.iter().any(|h| h.tile_count() != tiles) || curves.iter().any(|c| c.len() != tiles) {
        return Err(Error::validation(format!(
            "inputs do not match the {}x{} grid",
            grid.cols(),
            grid.rows()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct OptimizeOutputs {
    pub allocation: PathBuf,
    pub summary: PathBuf,
    pub allocations: Vec<AllocationResult>,
}

pub fn cmd_optimize(
    cfg: &RunConfig,
    heatmap_path: &Path,
    rd_path: &Path,
    bandwidth: BandwidthChoice,
    out_dir: &Path,
) -> Result<OptimizeOutputs> {
    let heatmaps = load_heatmaps(heatmap_path)?;
    let curves = load_curves(rd_path)?;
    check_alignment(&heatmaps, &curves, cfg.grid()?)?;
    let per_gop: Vec<f64> = match bandwidth {
        BandwidthChoice::Constant(c) => vec![c; curves.len()],
        BandwidthChoice::MatchMonolithic(qp) => curves.iter().map(|c| monolithic_rate(c, qp as f64)).collect(),
    };
    let allocations = solve_sequence(&heatmaps, &curves, &per_gop, &cfg.allocation_options(), cfg.parallel)?;
    Ok(OptimizeOutputs {
        allocation: write_file(out_dir, ALLOCATION_FILE, &io::write_allocations(&allocations)?)?,
        summary: write_file(
            out_dir,
            ALLOCATION_SUMMARY_FILE,
            &io::write_summaries(&io::summaries(None, &allocations))?,
        )?,
        allocations,
    })
}

/// Scenario built from a trace and R-D parameters. Heat maps come from the
/// given file, or from the trace itself when absent.
pub fn build_scenario(
    cfg: &RunConfig,
    trace: Trace,
    curves: Vec<Vec<TileCurves>>,
    heatmaps: Option<Vec<HeatMap>>,
) -> Result<Scenario> {
    let grid = cfg.grid()?;
    let gop = gop_structure_for(cfg, Some(curves.len()), &[])?;
    if let Some(s) = trace.samples.iter().find(|s| s.frame_index >= gop.total_frames()) {
        return Err(Error::validation(format!(
            "trace frame {} lies beyond the {} frames covered by the R-D parameters",
            s.frame_index,
            gop.total_frames()
        )));
    }
    let heatmaps = match heatmaps {
        Some(h) => h,
        None => heatmaps_for(cfg, std::slice::from_ref(&trace), gop)?,
    };
    check_alignment(&heatmaps, &curves, grid)?;
    let scenario = Scenario {
        trace,
        grid,
        viewport: cfg.viewport()?,
        gop,
        heatmaps,
        curves,
        options: cfg.allocation_options(),
        speed_window: cfg.speed_window,
        eval: cfg.eval_options(),
        parallel: cfg.parallel,
    };
    scenario.validate()?;
    Ok(scenario)
}

pub fn load_scenario(cfg: &RunConfig, trace: &Path, rd: &Path, heatmap: Option<&Path>) -> Result<Scenario> {
    let heatmaps = heatmap.map(load_heatmaps).transpose()?;
    build_scenario(cfg, load_trace(trace, cfg)?, load_curves(rd)?, heatmaps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualitySummary {
    pub system: String,
    pub mean_psnr_db: f64,
    pub stddev_db: f64,
    pub per_gop_mean_db: Vec<Option<f64>>,
    pub mean_expected_distortion: f64,
    pub total_rate_kbps: f64,
}

#[derive(Debug, Clone)]
pub struct SimulateOutputs {
    pub reports: Vec<PathBuf>,
    pub allocations: PathBuf,
    pub summary: PathBuf,
    pub quality: PathBuf,
    pub runs: Vec<SystemRun>,
}

/// Runs the three systems at a common per-GOP bandwidth and replays the
/// trace through each.
pub fn simulate_scenario(scenario: &Scenario, bandwidth: BandwidthChoice) -> Result<Vec<SystemRun>> {
    let prepared = scenario.prepare()?;
    let bandwidth = bandwidth.to_bandwidth();
    System::ALL
        .into_iter()
        .map(|s| scenario.run(&prepared, s, &bandwidth))
        .collect()
}

pub fn cmd_simulate(
    cfg: &RunConfig,
    trace: &Path,
    rd: &Path,
    heatmap: Option<&Path>,
    bandwidth: BandwidthChoice,
    out_dir: &Path,
) -> Result<SimulateOutputs> {
    let scenario = load_scenario(cfg, trace, rd, heatmap)?;
    let runs = simulate_scenario(&scenario, bandwidth)?;

    let mut reports = Vec::new();
    for run in &runs {
        reports.push(write_file(
            out_dir,
            &report_file(run.system),
            &io::write_report(&run.report)?,
        )?);
    }
    let pairs: Vec<(System, &[AllocationResult])> = runs.iter().map(|r| (r.system, r.allocations.as_slice())).collect();
    let allocations = write_file(out_dir, SIM_ALLOCATION_FILE, &io::write_system_allocations(&pairs)?)?;
    let summaries: Vec<io::AllocationSummary> = runs
        .iter()
        .flat_map(|r| io::summaries(Some(r.system), &r.allocations))
        .collect();
    let summary = write_file(out_dir, SIM_SUMMARY_FILE, &io::write_summaries(&summaries)?)?;
    let quality_rows: Vec<QualitySummary> = runs
        .iter()
        .map(|r| QualitySummary {
            system: r.system.label().to_string(),
            mean_psnr_db: r.report.overall_mean_db,
            stddev_db: r.report.overall_stddev_db,
            per_gop_mean_db: r.report.per_gop_mean_db.clone(),
            mean_expected_distortion: r.allocations.iter().map(|a| a.expected_distortion).sum::<f64>()
                / r.allocations.len().max(1) as f64,
            total_rate_kbps: r.allocations.iter().map(|a| a.total_rate_kbps).sum(),
        })
        .collect();
    let mut text = serde_json::to_string_pretty(&quality_rows)?;
    text.push('\n');
    let quality = write_file(out_dir, QUALITY_SUMMARY_FILE, &text)?;
    Ok(SimulateOutputs {
        reports,
        allocations,
        summary,
        quality,
        runs,
    })
}

/// Ten geometrically spaced constant bandwidths from the smallest value
/// feasible in every GOP up to just past the point where every tile fits at
/// `qp_min` in every GOP.
pub fn default_bandwidths(cfg: &RunConfig, curves: &[Vec<TileCurves>]) -> Vec<f64> {
    let low = curves
        .iter()
        .map(|c| monolithic_rate(c, cfg.qp_max as f64))
        .fold(0.0, f64::max);
    let high = curves
        .iter()
        .map(|c| monolithic_rate(c, cfg.qp_min as f64))
        .fold(0.0, f64::max)
        * 1.05;
    let points = 10;
    (0..points)
        .map(|i| low * (high / low).powf(i as f64 / (points - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavingsPoint {
    pub bandwidth_kbps: f64,
    pub reference_psnr_db: f64,
    pub savings_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub reference: String,
    pub candidate: String,
    pub points: Vec<SavingsPoint>,
    /// Savings at the middle reachable reference point.
    pub savings_percent: Option<f64>,
    pub savings_bandwidth_kbps: Option<f64>,
}

impl SweepSummary {
    pub fn line(&self) -> String {
        match (self.savings_percent, self.savings_bandwidth_kbps) {
            (Some(s), Some(c)) => format!(
                "rate savings {} vs {}: {s:.2}% at reference bandwidth {c:.3} kbps",
                self.candidate, self.reference
            ),
            _ => format!(
                "rate savings {} vs {}: not reached within sweep",
                self.candidate, self.reference
            ),
        }
    }
}

pub fn savings_summary(points: &[SweepPoint], reference: System, candidate: System) -> SweepSummary {
    let curve: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.system == candidate && !p.infeasible)
        .map(|p| (p.bandwidth_kbps, p.mean_psnr_db))
        .collect();
    let per_point: Vec<SavingsPoint> = points
        .iter()
        .filter(|p| p.system == reference && !p.infeasible)
        .map(|p| SavingsPoint {
            bandwidth_kbps: p.bandwidth_kbps,
            reference_psnr_db: p.mean_psnr_db,
            savings_percent: rate_savings(p.bandwidth_kbps, p.mean_psnr_db, &curve).ok(),
        })
        .collect();
    let reachable: Vec<&SavingsPoint> = per_point.iter().filter(|p| p.savings_percent.is_some()).collect();
    let middle = reachable.get(reachable.len() / 2).copied();
    SweepSummary {
        reference: reference.label().to_string(),
        candidate: candidate.label().to_string(),
        savings_percent: middle.and_then(|p| p.savings_percent),
        savings_bandwidth_kbps: middle.map(|p| p.bandwidth_kbps),
        points: per_point,
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutputs {
    pub sweep: PathBuf,
    pub allocations: PathBuf,
    pub summary_path: PathBuf,
    pub points: Vec<SweepPoint>,
    pub summary: SweepSummary,
}

pub fn cmd_sweep(
    cfg: &RunConfig,
    trace: &Path,
    rd: &Path,
    heatmap: Option<&Path>,
    out_dir: &Path,
) -> Result<SweepOutputs> {
    let scenario = load_scenario(cfg, trace, rd, heatmap)?;
    let mut bandwidths = if cfg.bandwidths.is_empty() {
        default_bandwidths(cfg, &scenario.curves)
    } else {
        cfg.bandwidths.clone()
    };
    bandwidths.sort_by(f64::total_cmp);
    let outcome = bandwidth_sweep(&scenario, &bandwidths)?;
    let summary = savings_summary(&outcome.points, System::Monolithic, System::Proposed);
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    Ok(SweepOutputs {
        sweep: write_file(out_dir, SWEEP_FILE, &io::write_sweep(&outcome.points)?)?,
        allocations: write_file(
            out_dir,
            SWEEP_ALLOCATION_FILE,
            &io::write_sweep_allocations(&outcome.proposed)?,
        )?,
        summary_path: write_file(out_dir, SWEEP_SUMMARY_FILE, &text)?,
        points: outcome.points,
        summary,
    })
}

/// Monolithic allocations at a ladder QP for every GOP.
pub fn monolithic_sequence(
    heatmaps: &[HeatMap],
    curves: &[Vec<TileCurves>],
    qp: i32,
    skip_penalty_mse: f64,
) -> Result<Vec<AllocationResult>> {
    heatmaps
        .iter()
        .zip(curves)
        .enumerate()
        .map(|(g, (h, c))| monolithic_allocation(&h.likelihoods, c, qp, skip_penalty_mse).map_err(|e| e.in_gop(g)))
        .collect()
}
