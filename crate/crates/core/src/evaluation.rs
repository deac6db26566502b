//! Viewport quality of an allocation replayed against a head-movement trace,
//! plus bandwidth sweeps across the three streaming systems.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    monolithic_allocation, monolithic_at_bandwidth, monolithic_rate, predict_viewport, predicted_coverage,
    speed_based_allocation,
};
use crate::error::{Error, Result};
use crate::geometry::{FootprintWeights, TileGrid, ViewportSpec};
use crate::navigation::{frame_weights, GopStructure, HeatMap, Trace};
use crate::optimizer::{solve_allocation, AllocationOptions, AllocationProblem, AllocationResult};
use crate::rdmodel::{distortion_from_rate, TileCurves};

/// Peak value of 8-bit luminance samples.
pub const PEAK: f64 = 255.0;

pub fn psnr_from_mse(mse: f64) -> Result<f64> {
    if !(mse > 0.0) {
        return Err(Error::Domain(format!("PSNR undefined for MSE {mse}")));
    }
    Ok(10.0 * (PEAK * PEAK / mse).log10())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewportMse {
    pub mse: f64,
    /// Every tile the viewport touches was skipped.
    pub fully_skipped: bool,
}

/// Footprint-weighted tile MSE; skipped tiles contribute `penalty_mse`.
pub fn viewport_mse(
    weights: &FootprintWeights,
    tile_mse: &[f64],
    skipped: &[bool],
    penalty_mse: f64,
) -> Result<ViewportMse> {
    if weights.len() != tile_mse.len() || weights.len() != skipped.len() {
        return Err(Error::validation(format!(
            "misaligned viewport inputs: {} weights, {} MSEs, {} skip flags",
            weights.len(),
            tile_mse.len(),
            skipped.len()
        )));
    }
    let mut mse = 0.0;
    let mut visible = false;
    for ((&w, &m), &s) in weights.weights.iter().zip(tile_mse).zip(skipped) {
        if s {
            mse += w * penalty_mse;
        } else {
            mse += w * m;
            visible |= w > 0.0;
        }
    }
    Ok(ViewportMse {
        mse,
        fully_skipped: !visible,
    })
}

/// Which rates of an allocation are replayed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RateMode {
    /// Rates from the continuous relaxation.
    #[default]
    Continuous,
    /// Rates after snapping to the QP ladder.
    Quantized,
}

impl FromStr for RateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "continuous" => Ok(RateMode::Continuous),
            "quantized" => Ok(RateMode::Quantized),
            _ => Err(Error::validation(format!("unknown rate mode `{s}`"))),
        }
    }
}

/// Measured MSE per `(gop, tile, qp)`, overriding the model for quantized
/// replays.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeasuredMse {
    entries: HashMap<(usize, usize, i32), f64>,
}

impl MeasuredMse {
    pub fn insert(&mut self, gop: usize, tile: usize, qp: i32, mse: f64) {
        self.entries.insert((gop, tile, qp), mse);
    }

    pub fn get(&self, gop: usize, tile: usize, qp: i32) -> Option<f64> {
        self.entries.get(&(gop, tile, qp)).copied()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub rate_mode: RateMode,
    pub skip_penalty_mse: f64,
    pub measured: Option<MeasuredMse>,
}

impl EvalOptions {
    pub fn new(rate_mode: RateMode, skip_penalty_mse: f64) -> Self {
        EvalOptions {
            rate_mode,
            skip_penalty_mse,
            measured: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameQuality {
    pub frame: usize,
    pub time_s: f64,
    pub viewport_mse: f64,
    pub psnr_db: f64,
    pub fully_skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub system: String,
    pub frames: Vec<FrameQuality>,
    /// `None` for GOPs the trace never visits.
    pub per_gop_mean_db: Vec<Option<f64>>,
    pub overall_mean_db: f64,
    pub overall_stddev_db: f64,
}

impl QualityReport {
    pub fn per_frame_psnr_db(&self) -> impl Iterator<Item = f64> + '_ {
        self.frames.iter().map(|f| f.psnr_db)
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-tile MSE and skip flags of one GOP's allocation.
fn tile_distortions(
    gop: usize,
    allocation: &AllocationResult,
    curves: &[TileCurves],
    options: &EvalOptions,
) -> Result<(Vec<f64>, Vec<bool>)> {
    let n = curves.len();
    if allocation.rates_kbps.len() != n {
        return Err(Error::validation(format!(
            "GOP {gop}: allocation covers {} tiles, curves {n}",
            allocation.rates_kbps.len()
        )));
    }
    let mut mse = Vec::with_capacity(n);
    let mut skipped = Vec::with_capacity(n);
    for (i, curve) in curves.iter().enumerate() {
        let (rate, qp) = match options.rate_mode {
            RateMode::Continuous => (allocation.qps_real[i].map(|_| allocation.rates_kbps[i]), None),
            RateMode::Quantized => {
                let qp = allocation.quantized.qps.get(i).copied().flatten();
                (qp.map(|_| allocation.quantized.rates_kbps[i]), qp)
            }
        };
        match rate {
            None => {
                mse.push(0.0);
                skipped.push(true);
            }
            Some(rate) => {
                let measured = qp.and_then(|q| options.measured.as_ref()?.get(gop, i, q));
                mse.push(match measured {
                    Some(m) => m,
                    None => distortion_from_rate(&curve.rate_distortion, rate)?,
                });
                skipped.push(false);
            }
        }
    }
    Ok((mse, skipped))
}

/// Replays a trace against per-GOP allocations using precomputed frame
/// footprints (one per trace sample).
pub fn evaluate_with_weights(
    system: &str,
    trace: &Trace,
    weights: &[FootprintWeights],
    allocations: &[AllocationResult],
    curves_per_gop: &[Vec<TileCurves>],
    gop: GopStructure,
    options: &EvalOptions,
) -> Result<QualityReport> {
    if allocations.len() != gop.gop_count() || curves_per_gop.len() != gop.gop_count() {
        return Err(Error::validation(format!(
            "{} allocations and {} curve sets for {} GOPs",
            allocations.len(),
            curves_per_gop.len(),
            gop.gop_count()
        )));
    }
    if weights.len() != trace.len() {
        return Err(Error::validation("frame weights do not match trace length"));
    }
    let tiles: Vec<(Vec<f64>, Vec<bool>)> = allocations
        .iter()
        .zip(curves_per_gop)
        .enumerate()
        .map(|(g, (a, c))| tile_distortions(g, a, c, options).map_err(|e| e.in_gop(g)))
        .collect::<Result<_>>()?;

    let mut frames = Vec::with_capacity(trace.len());
    let mut per_gop: Vec<Vec<f64>> = vec![Vec::new(); gop.gop_count()];
    for (sample, w) in trace.samples.iter().zip(weights) {
        let g = gop.gop_of_frame(sample.frame_index);
        let (mse, skipped) = tiles.get(g).ok_or_else(|| {
            Error::validation(format!(
                "frame {} falls in GOP {g}, beyond the {} allocated GOPs",
                sample.frame_index,
                gop.gop_count()
            ))
        })?;
        let vm = viewport_mse(w, mse, skipped, options.skip_penalty_mse)?;
        let psnr_db = psnr_from_mse(vm.mse)?;
        per_gop[g].push(psnr_db);
        frames.push(FrameQuality {
            frame: sample.frame_index,
            time_s: sample.time_s,
            viewport_mse: vm.mse,
            psnr_db,
            fully_skipped: vm.fully_skipped,
        });
    }
    let all: Vec<f64> = frames.iter().map(|f| f.psnr_db).collect();
    let (overall_mean_db, overall_stddev_db) = mean_std(&all);
    Ok(QualityReport {
        system: system.to_string(),
        frames,
        per_gop_mean_db: per_gop.iter().map(|v| (!v.is_empty()).then(|| mean_std(v).0)).collect(),
        overall_mean_db,
        overall_stddev_db,
    })
}

/// Replays a trace against per-GOP allocations, computing footprints from
/// the trace orientations.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_session(
    system: &str,
    trace: &Trace,
    allocations: &[AllocationResult],
    curves_per_gop: &[Vec<TileCurves>],
    spec: ViewportSpec,
    grid: TileGrid,
    gop: GopStructure,
    options: &EvalOptions,
) -> Result<QualityReport> {
    let weights = frame_weights(trace, spec, grid);
    evaluate_with_weights(system, trace, &weights, allocations, curves_per_gop, gop, options)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum System {
    Proposed,
    Monolithic,
    Speed,
}

impl System {
    pub const ALL: [System; 3] = [System::Proposed, System::Monolithic, System::Speed];

    pub fn label(&self) -> &'static str {
        match self {
            System::Proposed => "proposed",
            System::Monolithic => "monolithic",
            System::Speed => "speed",
        }
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for System {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        System::ALL
            .into_iter()
            .find(|sys| sys.label() == s)
            .ok_or_else(|| Error::validation(format!("unknown system `{s}`")))
    }
}

/// Everything needed to run the three systems on one video/trace pair.
#[derive(Debug, Clone)]
pub struct Scenario {
    /// Ground-truth trace replayed for quality measurement.
    pub trace: Trace,
    pub grid: TileGrid,
    pub viewport: ViewportSpec,
    pub gop: GopStructure,
    /// Navigation likelihoods the proposed allocator optimizes against.
    pub heatmaps: Vec<HeatMap>,
    pub curves: Vec<Vec<TileCurves>>,
    pub options: AllocationOptions,
    pub speed_window: usize,
    pub eval: EvalOptions,
    pub parallel: bool,
}

/// Bandwidth-independent per-scenario state.
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    pub frame_weights: Vec<FootprintWeights>,
    /// Mean predicted footprint per GOP for the speed-based system.
    pub speed_coverage: Vec<Vec<f64>>,
}

/// Per-GOP bandwidth constraint.
#[derive(Debug, Clone, PartialEq)]
pub enum Bandwidth {
    PerGop(Vec<f64>),
    Constant(f64),
    /// Rate of a uniform encoding at this QP, GOP by GOP.
    MatchMonolithic(i32),
}

#[derive(Debug, Clone)]
pub struct SystemRun {
    pub system: System,
    pub bandwidth_kbps: Vec<f64>,
    pub allocations: Vec<AllocationResult>,
    pub report: QualityReport,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let gops = self.gop.gop_count();
        if self.heatmaps.len() != gops || self.curves.len() != gops {
            return Err(Error::validation(format!(
                "scenario has {} heat maps and {} curve sets for {gops} GOPs",
                self.heatmaps.len(),
                self.curves.len()
            )));
        }
        let tiles = self.grid.tile_count();
        if self.heatmaps.iter().any(|h| h.tile_count() != tiles) || self.curves.iter().any(|c| c.len() != tiles) {
            return Err(Error::validation(format!(
                "scenario inputs do not match the {tiles}-tile grid"
            )));
        }
        self.options.validate()
    }

    pub fn prepare(&self) -> Result<PreparedScenario> {
        self.validate()?;
        let frame_weights = frame_weights(&self.trace, self.viewport, self.grid);
        let horizon = (self.gop.gop_size_frames() - 1) as f64 / self.trace.fps;
        let coverage_of = |g: usize| {
            let start = self.gop.gop_start(g);
            let end = self.trace.samples.partition_point(|s| s.frame_index <= start);
            let predicted = predict_viewport(&self.trace.samples[..end], self.trace.fps, horizon, self.speed_window);
            predicted_coverage(&predicted, self.viewport, self.grid)
        };
        let gops = 0..self.gop.gop_count();
        let speed_coverage = if self.parallel {
            gops.into_par_iter().map(coverage_of).collect()
        } else {
            gops.map(coverage_of).collect()
        };
        Ok(PreparedScenario {
            frame_weights,
            speed_coverage,
        })
    }

    pub fn resolve_bandwidth(&self, bandwidth: &Bandwidth) -> Result<Vec<f64>> {
        let gops = self.gop.gop_count();
        match bandwidth {
            Bandwidth::PerGop(v) if v.len() == gops => Ok(v.clone()),
            Bandwidth::PerGop(v) => Err(Error::validation(format!(
                "{} bandwidth values for {gops} GOPs",
                v.len()
            ))),
            Bandwidth::Constant(c) => Ok(vec![*c; gops]),
            Bandwidth::MatchMonolithic(qp) => Ok(self.curves.iter().map(|c| monolithic_rate(c, *qp as f64)).collect()),
        }
    }

    fn allocate_gop(
        &self,
        prepared: &PreparedScenario,
        system: System,
        g: usize,
        bandwidth: f64,
        monolithic_qp: Option<i32>,
    ) -> Result<AllocationResult> {
        let p = &self.heatmaps[g].likelihoods;
        let curves = &self.curves[g];
        let penalty = self.options.skip_penalty_mse;
        match system {
            System::Proposed => solve_allocation(&AllocationProblem::new(
                p.clone(),
                curves.clone(),
                bandwidth,
                self.options.clone(),
            )?),
            System::Monolithic => match monolithic_qp {
                Some(qp) => monolithic_allocation(p, curves, qp, penalty),
                None => {
                    monolithic_at_bandwidth(p, curves, bandwidth, self.options.qp_min, self.options.qp_max, penalty)
                }
            },
            System::Speed => speed_based_allocation(
                &prepared.speed_coverage[g],
                p,
                curves,
                bandwidth,
                &self.options.qp_set,
                penalty,
            ),
        }
    }

    /// Allocates every GOP for one system and replays the trace.
    pub fn run(&self, prepared: &PreparedScenario, system: System, bandwidth: &Bandwidth) -> Result<SystemRun> {
        let bandwidth_kbps = self.resolve_bandwidth(bandwidth)?;
        let monolithic_qp = match bandwidth {
            Bandwidth::MatchMonolithic(qp) => Some(*qp),
            _ => None,
        };
        let alloc = |g: usize| {
            self.allocate_gop(prepared, system, g, bandwidth_kbps[g], monolithic_qp)
                .map_err(|e| e.in_gop(g))
        };
        let gops = 0..self.gop.gop_count();
        let allocations: Vec<AllocationResult> = if self.parallel {
            gops.into_par_iter().map(alloc).collect::<Result<_>>()?
        } else {
            gops.map(alloc).collect::<Result<_>>()?
        };
        let report = evaluate_with_weights(
            system.label(),
            &self.trace,
            &prepared.frame_weights,
            &allocations,
            &self.curves,
            self.gop,
            &self.eval,
        )?;
        Ok(SystemRun {
            system,
            bandwidth_kbps,
            allocations,
            report,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub bandwidth_kbps: f64,
    pub system: System,
    pub mean_psnr_db: f64,
    pub stddev_db: f64,
    pub infeasible: bool,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    /// Ordered by bandwidth, then system.
    pub points: Vec<SweepPoint>,
    /// Proposed allocations per swept bandwidth (`None` when infeasible).
    pub proposed: Vec<(f64, Option<Vec<AllocationResult>>)>,
}

/// Runs all three systems at each constant bandwidth.
pub fn bandwidth_sweep(scenario: &Scenario, bandwidths_kbps: &[f64]) -> Result<SweepOutcome> {
    if bandwidths_kbps.iter().any(|c| !(*c > 0.0)) {
        return Err(Error::validation("sweep bandwidths must be positive"));
    }
    if bandwidths_kbps.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::validation("sweep bandwidths must be sorted ascending"));
    }
    let prepared = scenario.prepare()?;
    let tasks: Vec<(f64, System)> = bandwidths_kbps
        .iter()
        .flat_map(|&c| System::ALL.into_iter().map(move |s| (c, s)))
        .collect();
    let run_one = |&(c, system): &(f64, System)| -> Result<(SweepPoint, Option<Vec<AllocationResult>>)> {
        match scenario.run(&prepared, system, &Bandwidth::Constant(c)) {
            Ok(run) => Ok((
                SweepPoint {
                    bandwidth_kbps: c,
                    system,
                    mean_psnr_db: run.report.overall_mean_db,
                    stddev_db: run.report.overall_stddev_db,
                    infeasible: false,
                },
                Some(run.allocations),
            )),
            Err(e) if e.kind() == crate::error::ErrorKind::Infeasible => Ok((
                SweepPoint {
                    bandwidth_kbps: c,
                    system,
                    mean_psnr_db: f64::NAN,
                    stddev_db: f64::NAN,
                    infeasible: true,
                },
                None,
            )),
            Err(e) => Err(e),
        }
    };
    let results: Vec<_> = if scenario.parallel {
        tasks.par_iter().map(run_one).collect::<Result<_>>()?
    } else {
        tasks.iter().map(run_one).collect::<Result<_>>()?
    };
    let mut points = Vec::with_capacity(results.len());
    let mut proposed = Vec::new();
    for (point, allocations) in results {
        if point.system == System::Proposed {
            proposed.push((point.bandwidth_kbps, allocations));
        }
        points.push(point);
    }
    Ok(SweepOutcome { points, proposed })
}

/// Percentage of bandwidth saved by the candidate at equal quality:
/// `(1 − C_candidate / C_reference)·100`, where `C_candidate` is the
/// smallest swept bandwidth at which the candidate reaches the reference's
/// mean PSNR.
pub fn rate_savings(reference_bandwidth_kbps: f64, reference_psnr_db: f64, candidate: &[(f64, f64)]) -> Result<f64> {
    if !(reference_bandwidth_kbps > 0.0) {
        return Err(Error::validation("reference bandwidth must be positive"));
    }
    let mut sorted: Vec<(f64, f64)> = candidate.iter().copied().filter(|(_, q)| q.is_finite()).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Equal-quality ties count as reaching the reference.
    let tolerance = 1e-9;
    match sorted.iter().find(|(_, q)| *q >= reference_psnr_db - tolerance) {
        Some(&(c, _)) => Ok((1.0 - c / reference_bandwidth_kbps) * 100.0),
        None => {
            let best = sorted.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
            Err(Error::validation(format!(
                "candidate never reaches the reference quality {reference_psnr_db:.4} dB (best {best:.4} dB)"
            )))
        }
    }
}
