//! CSV and JSON file formats.
//!
//! Floats are written in shortest round-trip form, so every file parses back
//! to the identical values. Optional numeric fields are left empty.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{QualityReport, SweepPoint, System};
use crate::navigation::HeatMap;
use crate::optimizer::AllocationResult;
use crate::rdmodel::{FitReport, ModelFamily, QpRateCurve, RateDistortionCurve, TileCurves};
use crate::synthgen::SampleRow;

pub const HEATMAP_HEADER: &str = "gop,tile,likelihood";
pub const SAMPLE_HEADER: &str = "gop,tile,qp,rate_kbps,mse";
pub const ALLOCATION_HEADER: &str = "gop,tile,likelihood,rate_kbps,qp_real,qp_quantized,skipped";
pub const REPORT_HEADER: &str = "frame,time_s,system,viewport_mse,psnr_db";
pub const SWEEP_HEADER: &str = "bandwidth_kbps,system,mean_psnr_db,stddev_db,infeasible";

fn write_rows<T: Serialize>(rows: impl IntoIterator<Item = T>, header_if_empty: &str) -> Result<String> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let mut any = false;
    for row in rows {
        writer.serialize(row).map_err(|e| Error::validation(e.to_string()))?;
        any = true;
    }
    let bytes = writer.into_inner().map_err(|e| Error::validation(e.to_string()))?;
    if !any {
        return Ok(format!("{header_if_empty}\n"));
    }
    String::from_utf8(bytes).map_err(|e| Error::validation(e.to_string()))
}

fn read_rows<T: DeserializeOwned>(text: &str, header: &str) -> Result<Vec<T>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let found = reader.headers().map_err(|e| Error::parse(1, e.to_string()))?;
    if found.iter().map(str::trim).collect::<Vec<_>>().join(",") != header {
        return Err(Error::parse(1, format!("expected header `{header}`")));
    }
    reader
        .deserialize()
        .map(|row| {
            row.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                Error::parse(line, e.to_string())
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct HeatMapRow {
    gop: usize,
    tile: usize,
    likelihood: f64,
}

pub fn write_heatmaps(maps: &[HeatMap]) -> Result<String> {
    let mut sorted: Vec<&HeatMap> = maps.iter().collect();
    sorted.sort_by_key(|m| m.gop_index);
    write_rows(
        sorted.into_iter().flat_map(|m| {
            m.likelihoods
                .iter()
                .enumerate()
                .map(move |(tile, &likelihood)| HeatMapRow {
                    gop: m.gop_index,
                    tile,
                    likelihood,
                })
        }),
        HEATMAP_HEADER,
    )
}

/// Parses heat-map rows; every GOP must list the same contiguous tile range.
pub fn parse_heatmaps(text: &str) -> Result<Vec<HeatMap>> {
    let rows: Vec<HeatMapRow> = read_rows(text, HEATMAP_HEADER)?;
    let gops = rows.iter().map(|r| r.gop + 1).max().unwrap_or(0);
    let tiles = rows.iter().map(|r| r.tile + 1).max().unwrap_or(0);
    let mut grid = vec![vec![None; tiles]; gops];
    for r in &rows {
        if !(r.likelihood >= 0.0 && r.likelihood.is_finite()) {
            return Err(Error::validation(format!(
                "GOP {} tile {}: invalid likelihood",
                r.gop, r.tile
            )));
        }
        if grid[r.gop][r.tile].replace(r.likelihood).is_some() {
            return Err(Error::validation(format!(
                "duplicate heat-map row for GOP {} tile {}",
                r.gop, r.tile
            )));
        }
    }
    grid.into_iter()
        .enumerate()
        .map(|(g, row)| {
            let likelihoods = row
                .into_iter()
                .enumerate()
                .map(|(t, v)| v.ok_or_else(|| Error::validation(format!("heat map missing GOP {g} tile {t}"))))
                .collect::<Result<Vec<f64>>>()?;
            Ok(HeatMap {
                gop_index: g,
                likelihoods,
                frames_covered: 0,
                empty: false,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct AverageRow {
    tile: usize,
    likelihood: f64,
}

pub fn write_average_heatmap(map: &HeatMap) -> Result<String> {
    write_rows(
        map.likelihoods
            .iter()
            .enumerate()
            .map(|(tile, &likelihood)| AverageRow { tile, likelihood }),
        "tile,likelihood",
    )
}

pub fn write_samples(rows: &[SampleRow]) -> Result<String> {
    write_rows(rows.iter(), SAMPLE_HEADER)
}

pub fn parse_samples(text: &str) -> Result<Vec<SampleRow>> {
    read_rows(text, SAMPLE_HEADER)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpRateParams {
    pub family: ModelFamily,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateDistortionParams {
    pub family: ModelFamily,
    pub c: f64,
    pub d: f64,
}

/// One entry of the R-D parameter file. `fit` describes the QP→rate fit and
/// `rd_fit` the rate→distortion fit; both are null for synthesized
/// parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdRecord {
    pub gop: usize,
    pub tile: usize,
    pub qp_rate: QpRateParams,
    pub rate_distortion: RateDistortionParams,
    pub fit: Option<FitReport>,
    #[serde(default)]
    pub rd_fit: Option<FitReport>,
}

impl RdRecord {
    pub fn new(gop: usize, tile: usize, curves: TileCurves) -> Self {
        RdRecord {
            gop,
            tile,
            qp_rate: QpRateParams {
                family: curves.qp_rate.family,
                a: curves.qp_rate.a,
                b: curves.qp_rate.b,
            },
            rate_distortion: RateDistortionParams {
                family: curves.rate_distortion.family,
                c: curves.rate_distortion.c,
                d: curves.rate_distortion.d,
            },
            fit: None,
            rd_fit: None,
        }
    }

    pub fn curves(&self) -> Result<TileCurves> {
        Ok(TileCurves {
            qp_rate: QpRateCurve::new(self.qp_rate.family, self.qp_rate.a, self.qp_rate.b)?,
            rate_distortion: RateDistortionCurve::new(
                self.rate_distortion.family,
                self.rate_distortion.c,
                self.rate_distortion.d,
            )?,
        })
    }
}

pub fn records_from_curves(curves: &[Vec<TileCurves>]) -> Vec<RdRecord> {
    curves
        .iter()
        .enumerate()
        .flat_map(|(g, tiles)| tiles.iter().enumerate().map(move |(t, &c)| RdRecord::new(g, t, c)))
        .collect()
}

pub fn write_rd_records(records: &[RdRecord]) -> Result<String> {
    let mut sorted = records.to_vec();
    sorted.sort_by_key(|r| (r.gop, r.tile));
    let mut text = serde_json::to_string_pretty(&sorted)?;
    text.push('\n');
    Ok(text)
}

pub fn parse_rd_records(text: &str) -> Result<Vec<RdRecord>> {
    Ok(serde_json::from_str(text)?)
}

/// Arranges records into `[gop][tile]`, requiring full coverage.
pub fn curves_from_records(records: &[RdRecord]) -> Result<Vec<Vec<TileCurves>>> {
    let gops = records.iter().map(|r| r.gop + 1).max().unwrap_or(0);
    let tiles = records.iter().map(|r| r.tile + 1).max().unwrap_or(0);
    let mut grid = vec![vec![None; tiles]; gops];
    for r in records {
        let curves = r
            .curves()
            .map_err(|e| Error::validation(format!("GOP {} tile {}: {e}", r.gop, r.tile)))?;
        if grid[r.gop][r.tile].replace(curves).is_some() {
            return Err(Error::validation(format!(
                "duplicate R-D record for GOP {} tile {}",
                r.gop, r.tile
            )));
        }
    }
    grid.into_iter()
        .enumerate()
        .map(|(g, row)| {
            row.into_iter()
                .enumerate()
                .map(|(t, c)| c.ok_or_else(|| Error::validation(format!("no R-D record for GOP {g} tile {t}"))))
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocationRow {
    pub gop: usize,
    pub tile: usize,
    pub likelihood: f64,
    pub rate_kbps: f64,
    pub qp_real: Option<f64>,
    pub qp_quantized: Option<i32>,
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemAllocationRow {
    pub system: String,
    pub gop: usize,
    pub tile: usize,
    pub likelihood: f64,
    pub rate_kbps: f64,
    pub qp_real: Option<f64>,
    pub qp_quantized: Option<i32>,
    pub skipped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepAllocationRow {
    pub bandwidth_kbps: f64,
    pub gop: usize,
    pub tile: usize,
    pub likelihood: f64,
    pub rate_kbps: f64,
    pub qp_real: Option<f64>,
    pub qp_quantized: Option<i32>,
    pub skipped: bool,
}

pub fn allocation_rows(allocations: &[AllocationResult]) -> Vec<AllocationRow> {
    allocations
        .iter()
        .enumerate()
        .flat_map(|(gop, a)| {
            (0..a.rates_kbps.len()).map(move |tile| AllocationRow {
                gop,
                tile,
                likelihood: a.likelihoods[tile],
                rate_kbps: a.rates_kbps[tile],
                qp_real: a.qps_real[tile],
                qp_quantized: a.qps_quantized.get(tile).copied().flatten(),
                skipped: a.is_skipped(tile),
            })
        })
        .collect()
}

pub fn write_allocations(allocations: &[AllocationResult]) -> Result<String> {
    write_rows(allocation_rows(allocations), ALLOCATION_HEADER)
}

pub fn parse_allocations(text: &str) -> Result<Vec<AllocationRow>> {
    read_rows(text, ALLOCATION_HEADER)
}

pub fn write_system_allocations(runs: &[(System, &[AllocationResult])]) -> Result<String> {
    let rows = runs.iter().flat_map(|(system, allocations)| {
        allocation_rows(allocations)
            .into_iter()
            .map(move |r| SystemAllocationRow {
                system: system.label().to_string(),
                gop: r.gop,
                tile: r.tile,
                likelihood: r.likelihood,
                rate_kbps: r.rate_kbps,
                qp_real: r.qp_real,
                qp_quantized: r.qp_quantized,
                skipped: r.skipped,
            })
    });
    write_rows(rows, &format!("system,{ALLOCATION_HEADER}"))
}

pub fn parse_system_allocations(text: &str) -> Result<Vec<SystemAllocationRow>> {
    read_rows(text, &format!("system,{ALLOCATION_HEADER}"))
}

pub fn write_sweep_allocations(per_bandwidth: &[(f64, Option<Vec<AllocationResult>>)]) -> Result<String> {
    let rows = per_bandwidth.iter().flat_map(|(c, allocations)| {
        allocation_rows(allocations.as_deref().unwrap_or_default())
            .into_iter()
            .map(move |r| SweepAllocationRow {
                bandwidth_kbps: *c,
                gop: r.gop,
                tile: r.tile,
                likelihood: r.likelihood,
                rate_kbps: r.rate_kbps,
                qp_real: r.qp_real,
                qp_quantized: r.qp_quantized,
                skipped: r.skipped,
            })
    });
    write_rows(rows, &format!("bandwidth_kbps,{ALLOCATION_HEADER}"))
}

pub fn parse_sweep_allocations(text: &str) -> Result<Vec<SweepAllocationRow>> {
    read_rows(text, &format!("bandwidth_kbps,{ALLOCATION_HEADER}"))
}

/// Per-GOP entry of the allocation summary JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationSummary {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    pub gop: usize,
    pub lambda: f64,
    pub expected_distortion: f64,
    pub total_rate_kbps: f64,
    pub bandwidth_kbps: f64,
}

pub fn summaries(system: Option<System>, allocations: &[AllocationResult]) -> Vec<AllocationSummary> {
    allocations
        .iter()
        .enumerate()
        .map(|(gop, a)| AllocationSummary {
            system: system.map(|s| s.label().to_string()),
            gop,
            lambda: a.lambda,
            expected_distortion: a.expected_distortion,
            total_rate_kbps: a.total_rate_kbps,
            bandwidth_kbps: a.bandwidth_kbps,
        })
        .collect()
}

pub fn write_summaries(entries: &[AllocationSummary]) -> Result<String> {
    let mut text = serde_json::to_string_pretty(entries)?;
    text.push('\n');
    Ok(text)
}

pub fn parse_summaries(text: &str) -> Result<Vec<AllocationSummary>> {
    Ok(serde_json::from_str(text)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub frame: usize,
    pub time_s: f64,
    pub system: String,
    pub viewport_mse: f64,
    pub psnr_db: f64,
}

pub fn write_report(report: &QualityReport) -> Result<String> {
    write_rows(
        report.frames.iter().map(|f| ReportRow {
            frame: f.frame,
            time_s: f.time_s,
            system: report.system.clone(),
            viewport_mse: f.viewport_mse,
            psnr_db: f.psnr_db,
        }),
        REPORT_HEADER,
    )
}

pub fn parse_report(text: &str) -> Result<Vec<ReportRow>> {
    read_rows(text, REPORT_HEADER)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub bandwidth_kbps: f64,
    pub system: String,
    pub mean_psnr_db: f64,
    pub stddev_db: f64,
    pub infeasible: bool,
}

pub fn write_sweep(points: &[SweepPoint]) -> Result<String> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| {
        a.bandwidth_kbps
            .total_cmp(&b.bandwidth_kbps)
            .then(a.system.cmp(&b.system))
    });
    write_rows(
        sorted.iter().map(|p| SweepRow {
            bandwidth_kbps: p.bandwidth_kbps,
            system: p.system.label().to_string(),
            mean_psnr_db: p.mean_psnr_db,
            stddev_db: p.stddev_db,
            infeasible: p.infeasible,
        }),
        SWEEP_HEADER,
    )
}

pub fn parse_sweep(text: &str) -> Result<Vec<SweepRow>> {
    read_rows(text, SWEEP_HEADER)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitQualityRow {
    pub gop: usize,
    pub tile: usize,
    pub model: String,
    pub family: Option<ModelFamily>,
    pub scale: Option<f64>,
    pub shape: Option<f64>,
    pub rmse_log: Option<f64>,
    pub r2_log: Option<f64>,
    pub n_points: usize,
    pub status: String,
}

pub fn write_fit_quality(rows: &[FitQualityRow]) -> Result<String> {
    write_rows(
        rows.iter(),
        "gop,tile,model,family,scale,shape,rmse_log,r2_log,n_points,status",
    )
}

pub fn parse_fit_quality(text: &str) -> Result<Vec<FitQualityRow>> {
    read_rows(
        text,
        "gop,tile,model,family,scale,shape,rmse_log,r2_log,n_points,status",
    )
}

/// Measured point next to the fitted model's prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitPointRow {
    pub gop: usize,
    pub tile: usize,
    pub qp: i32,
    pub rate_kbps: f64,
    pub mse: f64,
    pub rate_model_kbps: Option<f64>,
    pub mse_model: Option<f64>,
}

pub fn write_fit_points(rows: &[FitPointRow]) -> Result<String> {
    write_rows(rows.iter(), "gop,tile,qp,rate_kbps,mse,rate_model_kbps,mse_model")
}

pub fn parse_fit_points(text: &str) -> Result<Vec<FitPointRow>> {
    read_rows(text, "gop,tile,qp,rate_kbps,mse,rate_model_kbps,mse_model")
}
