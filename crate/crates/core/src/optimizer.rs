//! Per-GOP rate allocation across tiles.
//!
//! Each GOP solves
//!
//! ```text
//! minimize    Σ_i p_i · D_i(R_i)
//! subject to  Σ_i R_i ≤ C
//!             R_i(QP_max) ≤ R_i ≤ R_i(QP_min)
//! ```
//!
//! The problem is separable and convex, so the KKT conditions reduce to a
//! single multiplier `λ ≥ 0`: every tile strictly inside its box satisfies
//! `p_i·|D_i'(R_i)| = λ`, tiles whose marginal is too small sit at the lower
//! bound and tiles whose marginal is too large at the upper bound. The
//! per-tile response `R_i(λ)` has a closed form for both distortion families
//! and is non-increasing in `λ`, so `λ` is found by bisection on the total
//! rate.
//!
//! Continuous rates are mapped back to QP through the inverse rate model and
//! then snapped to a discrete QP ladder without ever exceeding a tile's
//! continuous allocation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::navigation::HeatMap;
use crate::rdmodel::{distortion_from_rate, marginal_distortion, qp_from_rate, rate_from_qp, ModelFamily, TileCurves};

pub const DEFAULT_QP_SET: [i32; 5] = [22, 27, 32, 37, 42];
pub const DEFAULT_SKIP_THRESHOLD: f64 = 1e-4;
/// MSE charged for a tile that is displayed but was never sent.
pub const DEFAULT_SKIP_PENALTY_MSE: f64 = 255.0 * 255.0 / 2.0;

const MAX_BISECTION_STEPS: usize = 200;
const RATE_GAP_TOLERANCE: f64 = 1e-6;

/// Settings shared by every GOP of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationOptions {
    pub qp_min: i32,
    pub qp_max: i32,
    /// Ladder that continuous QPs are snapped to, ascending.
    pub qp_set: Vec<i32>,
    pub skip_enabled: bool,
    pub skip_threshold: f64,
    pub skip_penalty_mse: f64,
}

impl Default for AllocationOptions {
    fn default() -> Self {
        AllocationOptions {
            qp_min: 22,
            qp_max: 42,
            qp_set: DEFAULT_QP_SET.to_vec(),
            skip_enabled: false,
            skip_threshold: DEFAULT_SKIP_THRESHOLD,
            skip_penalty_mse: DEFAULT_SKIP_PENALTY_MSE,
        }
    }
}

impl AllocationOptions {
    pub fn validate(&self) -> Result<()> {
        if self.qp_min >= self.qp_max {
            return Err(Error::validation(format!(
                "qp_min ({}) must be below qp_max ({})",
                self.qp_min, self.qp_max
            )));
        }
        if self.qp_set.is_empty() || self.qp_set.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::validation("QP set must be non-empty and strictly ascending"));
        }
        if !(self.skip_threshold >= 0.0) {
            return Err(Error::validation("skip threshold must be non-negative"));
        }
        if !(self.skip_penalty_mse > 0.0) {
            return Err(Error::validation("skip penalty MSE must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationProblem {
    pub likelihoods: Vec<f64>,
    pub curves: Vec<TileCurves>,
    pub bandwidth_kbps: f64,
    pub options: AllocationOptions,
}

impl AllocationProblem {
    pub fn new(
        likelihoods: Vec<f64>,
        curves: Vec<TileCurves>,
        bandwidth_kbps: f64,
        options: AllocationOptions,
    ) -> Result<Self> {
        let problem = AllocationProblem {
            likelihoods,
            curves,
            bandwidth_kbps,
            options,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn from_heatmap(
        heatmap: &HeatMap,
        curves: Vec<TileCurves>,
        bandwidth_kbps: f64,
        options: AllocationOptions,
    ) -> Result<Self> {
        AllocationProblem::new(heatmap.likelihoods.clone(), curves, bandwidth_kbps, options)
    }

    pub fn validate(&self) -> Result<()> {
        self.options.validate()?;
        if self.likelihoods.len() != self.curves.len() {
            return Err(Error::validation(format!(
                "{} likelihoods for {} tile curves",
                self.likelihoods.len(),
                self.curves.len()
            )));
        }
        if self.curves.is_empty() {
            return Err(Error::validation("allocation problem has no tiles"));
        }
        if !(self.bandwidth_kbps > 0.0 && self.bandwidth_kbps.is_finite()) {
            return Err(Error::validation(format!(
                "bandwidth must be positive, got {}",
                self.bandwidth_kbps
            )));
        }
        if let Some(p) = self.likelihoods.iter().find(|p| !(**p >= 0.0 && p.is_finite())) {
            return Err(Error::validation(format!("invalid likelihood {p}")));
        }
        for (i, c) in self.curves.iter().enumerate() {
            c.validate().map_err(|e| Error::validation(format!("tile {i}: {e}")))?;
        }
        Ok(())
    }

    pub fn tile_count(&self) -> usize {
        self.curves.len()
    }

    /// `[R_i(QP_max), R_i(QP_min)]`.
    pub fn rate_bounds(&self, tile: usize) -> (f64, f64) {
        let q = &self.curves[tile].qp_rate;
        (
            rate_from_qp(q, self.options.qp_max as f64),
            rate_from_qp(q, self.options.qp_min as f64),
        )
    }

    fn below_threshold(&self, tile: usize) -> bool {
        self.options.skip_enabled && self.likelihoods[tile] <= self.options.skip_threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FeasibilityStatus {
    /// Even the lowest-rate encoding of every tile exceeds the bandwidth.
    Infeasible { deficit_kbps: f64 },
    /// The bandwidth constraint binds.
    Active,
    /// Every tile fits at its highest rate.
    Slack,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub min_demand_kbps: f64,
    pub max_demand_kbps: f64,
    pub bandwidth_kbps: f64,
    pub status: FeasibilityStatus,
}

/// Compares the bandwidth against the total rate range of the tiles that
/// survive skip filtering.
pub fn check_feasibility(problem: &AllocationProblem) -> FeasibilityReport {
    let (mut min_demand, mut max_demand) = (0.0, 0.0);
    for i in (0..problem.tile_count()).filter(|&i| !problem.below_threshold(i)) {
        let (lo, hi) = problem.rate_bounds(i);
        min_demand += lo;
        max_demand += hi;
    }
    let c = problem.bandwidth_kbps;
    let status = if min_demand > c {
        FeasibilityStatus::Infeasible {
            deficit_kbps: min_demand - c,
        }
    } else if max_demand <= c {
        FeasibilityStatus::Slack
    } else {
        FeasibilityStatus::Active
    };
    FeasibilityReport {
        min_demand_kbps: min_demand,
        max_demand_kbps: max_demand,
        bandwidth_kbps: c,
        status,
    }
}

/// Allocation snapped to a discrete QP ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedAllocation {
    /// `None` marks a skipped tile.
    pub qps: Vec<Option<i32>>,
    pub rates_kbps: Vec<f64>,
    pub total_rate_kbps: f64,
    pub expected_distortion: f64,
    /// Continuous total minus quantized total; never redistributed.
    pub slack_kbps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    pub likelihoods: Vec<f64>,
    pub rates_kbps: Vec<f64>,
    /// Continuous QP from inverting the rate model; `None` for skipped tiles.
    pub qps_real: Vec<Option<f64>>,
    pub qps_quantized: Vec<Option<i32>>,
    pub lambda: f64,
    pub expected_distortion: f64,
    pub total_rate_kbps: f64,
    pub bandwidth_kbps: f64,
    /// Every tile that received no rate, ascending.
    pub skipped: Vec<usize>,
    /// Tiles dropped, in drop order, to restore feasibility.
    pub dropped_for_feasibility: Vec<usize>,
    pub quantized: QuantizedAllocation,
}

impl AllocationResult {
    pub fn is_skipped(&self, tile: usize) -> bool {
        self.qps_real[tile].is_none()
    }
}

/// Expected distortion of a rate vector; tiles with `None` rate are charged
/// the skip penalty.
pub fn expected_distortion(
    likelihoods: &[f64],
    curves: &[TileCurves],
    rates: impl IntoIterator<Item = Option<f64>>,
    skip_penalty_mse: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for ((p, c), r) in likelihoods.iter().zip(curves).zip(rates) {
        total += p * match r {
            Some(r) => distortion_from_rate(&c.rate_distortion, r)?,
            None => skip_penalty_mse,
        };
    }
    Ok(total)
}

/// Tile state used by the water-filling solver.
struct ActiveTile {
    index: usize,
    weight: f64,
    lo: f64,
    hi: f64,
    curves: TileCurves,
}

impl ActiveTile {
    /// `p·|D'(R)|`.
    fn weighted_marginal(&self, rate: f64) -> f64 {
        self.weight * marginal_distortion(&self.curves.rate_distortion, rate).map_or(f64::INFINITY, f64::abs)
    }

    /// Rate solving `p·|D'(R)| = λ`, clipped to the box.
    fn response(&self, lambda: f64) -> f64 {
        if lambda <= 0.0 {
            return self.hi;
        }
        if self.weight <= 0.0 {
            return self.lo;
        }
        let rd = &self.curves.rate_distortion;
        let unclipped = match rd.family {
            ModelFamily::PowerLaw => (lambda / (self.weight * rd.c * rd.d.abs())).powf(1.0 / (rd.d - 1.0)),
            ModelFamily::Exponential => (self.weight * rd.c * rd.d / lambda).ln() / rd.d,
        };
        if unclipped.is_nan() {
            return self.lo;
        }
        unclipped.clamp(self.lo, self.hi)
    }
}

fn total_response(tiles: &[ActiveTile], lambda: f64) -> f64 {
    tiles.iter().map(|t| t.response(lambda)).sum()
}

/// Finds `λ` such that the clipped responses sum to `target`, returning the
/// multiplier on the feasible side (total ≤ target).
fn bisect_lambda(tiles: &[ActiveTile], target: f64) -> f64 {
    let positive = tiles.iter().filter(|t| t.weight > 0.0);
    let mut low = positive
        .clone()
        .map(|t| t.weighted_marginal(t.hi))
        .fold(f64::INFINITY, f64::min);
    let mut high = positive.map(|t| t.weighted_marginal(t.lo)).fold(0.0, f64::max);
    if !(low.is_finite() && low > 0.0) {
        low = f64::MIN_POSITIVE;
    }
    if !(high.is_finite() && high > low) {
        high = low * 2.0;
    }
    while total_response(tiles, low) < target && low > f64::MIN_POSITIVE {
        low /= 2.0;
    }
    while total_response(tiles, high) > target && high < f64::MAX / 4.0 {
        high *= 2.0;
    }

    let tolerance = RATE_GAP_TOLERANCE * target;
    for _ in 0..MAX_BISECTION_STEPS {
        let mid = (low * high).sqrt();
        if !(mid > low && mid < high) {
            break;
        }
        let total = total_response(tiles, mid);
        if total > target {
            low = mid;
        } else {
            high = mid;
            if target - total <= tolerance {
                break;
            }
        }
    }
    high
}

/// Solves one GOP's allocation by λ-bisection water-filling.
pub fn solve_allocation(problem: &AllocationProblem) -> Result<AllocationResult> {
    problem.validate()?;
    let n = problem.tile_count();
    let c = problem.bandwidth_kbps;

    let mut active: Vec<ActiveTile> = (0..n)
        .filter(|&i| !problem.below_threshold(i))
        .map(|i| {
            let (lo, hi) = problem.rate_bounds(i);
            ActiveTile {
                index: i,
                weight: problem.likelihoods[i],
                lo,
                hi,
                curves: problem.curves[i],
            }
        })
        .collect();

    let mut dropped = Vec::new();
    let mut min_demand: f64 = active.iter().map(|t| t.lo).sum();
    if min_demand > c {
        if !problem.options.skip_enabled {
            return Err(Error::Infeasible {
                deficit_kbps: min_demand - c,
            });
        }
        let mut order: Vec<usize> = (0..active.len()).collect();
        order.sort_by(|&a, &b| {
            active[a]
                .weight
                .total_cmp(&active[b].weight)
                .then(active[a].index.cmp(&active[b].index))
        });
        let mut removed = vec![false; active.len()];
        for k in order {
            if min_demand <= c {
                break;
            }
            removed[k] = true;
            min_demand -= active[k].lo;
            dropped.push(active[k].index);
        }
        let mut flags = removed.into_iter();
        active.retain(|_| !flags.next().unwrap_or(false));
    }

    // A zero likelihood vector leaves the objective flat; split evenly.
    if !active.is_empty() && active.iter().all(|t| t.weight <= 0.0) {
        active.iter_mut().for_each(|t| t.weight = 1.0);
    }

    let max_demand: f64 = active.iter().map(|t| t.hi).sum();
    let lambda = if max_demand <= c || active.is_empty() {
        0.0
    } else {
        bisect_lambda(&active, c)
    };

    let mut rates: Vec<Option<f64>> = vec![None; n];
    for t in &active {
        rates[t.index] = Some(t.response(lambda));
    }

    let qps_real: Vec<Option<f64>> = rates
        .iter()
        .zip(&problem.curves)
        .map(|(r, curve)| r.map(|r| qp_from_rate(&curve.qp_rate, r)).transpose())
        .collect::<Result<_>>()?;
    let expected = expected_distortion(
        &problem.likelihoods,
        &problem.curves,
        rates.iter().copied(),
        problem.options.skip_penalty_mse,
    )?;
    let rates_kbps: Vec<f64> = rates.iter().map(|r| r.unwrap_or(0.0)).collect();
    let total_rate_kbps = rates_kbps.iter().sum();
    let skipped = (0..n).filter(|&i| rates[i].is_none()).collect();

    let mut result = AllocationResult {
        likelihoods: problem.likelihoods.clone(),
        rates_kbps,
        qps_real,
        qps_quantized: Vec::new(),
        lambda,
        expected_distortion: expected,
        total_rate_kbps,
        bandwidth_kbps: c,
        skipped,
        dropped_for_feasibility: dropped,
        quantized: QuantizedAllocation {
            qps: Vec::new(),
            rates_kbps: Vec::new(),
            total_rate_kbps: 0.0,
            expected_distortion: 0.0,
            slack_kbps: 0.0,
        },
    };
    let quantized = quantize_to_qp(
        &result,
        &problem.curves,
        &problem.options.qp_set,
        problem.options.skip_penalty_mse,
    )?;
    result.qps_quantized = quantized.qps.clone();
    result.quantized = quantized;
    Ok(result)
}

/// Picks, per tile, the ladder QP whose rate is closest to the continuous
/// allocation without exceeding it; the highest QP when none fits.
pub fn quantize_to_qp(
    result: &AllocationResult,
    curves: &[TileCurves],
    qp_set: &[i32],
    skip_penalty_mse: f64,
) -> Result<QuantizedAllocation> {
    let highest = *qp_set
        .iter()
        .max()
        .ok_or_else(|| Error::validation("QP set is empty"))?;
    let qps: Vec<Option<i32>> = result
        .rates_kbps
        .iter()
        .zip(curves)
        .enumerate()
        .map(|(i, (&target, curve))| {
            if result.is_skipped(i) {
                return None;
            }
            // Tolerate round-off when the target sits exactly on a rung.
            let budget = target * (1.0 + 1e-12);
            let best = qp_set
                .iter()
                .map(|&qp| (qp, rate_from_qp(&curve.qp_rate, qp as f64)))
                .filter(|&(_, r)| r <= budget)
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .map_or(highest, |(qp, _)| qp);
            Some(best)
        })
        .collect();
    let rates: Vec<Option<f64>> = qps
        .iter()
        .zip(curves)
        .map(|(q, c)| q.map(|q| rate_from_qp(&c.qp_rate, q as f64)))
        .collect();
    let expected = expected_distortion(&result.likelihoods, curves, rates.iter().copied(), skip_penalty_mse)?;
    let rates_kbps: Vec<f64> = rates.iter().map(|r| r.unwrap_or(0.0)).collect();
    let total: f64 = rates_kbps.iter().sum();
    Ok(QuantizedAllocation {
        qps,
        rates_kbps,
        total_rate_kbps: total,
        expected_distortion: expected,
        slack_kbps: result.total_rate_kbps - total,
    })
}

/// Solves every GOP independently. Parallel and serial evaluation give
/// identical results.
pub fn solve_sequence(
    heatmaps: &[HeatMap],
    curves_per_gop: &[Vec<TileCurves>],
    bandwidth_per_gop: &[f64],
    options: &AllocationOptions,
    parallel: bool,
) -> Result<Vec<AllocationResult>> {
    if heatmaps.len() != curves_per_gop.len() || heatmaps.len() != bandwidth_per_gop.len() {
        return Err(Error::validation(format!(
            "misaligned inputs: {} heat maps, {} curve sets, {} bandwidths",
            heatmaps.len(),
            curves_per_gop.len(),
            bandwidth_per_gop.len()
        )));
    }
    let solve = |g: usize| -> Result<AllocationResult> {
        let problem = AllocationProblem::from_heatmap(
            &heatmaps[g],
            curves_per_gop[g].clone(),
            bandwidth_per_gop[g],
            options.clone(),
        )
        .map_err(|e| e.in_gop(g))?;
        solve_allocation(&problem).map_err(|e| e.in_gop(g))
    };
    if parallel {
        (0..heatmaps.len()).into_par_iter().map(solve).collect()
    } else {
        (0..heatmaps.len()).map(solve).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rdmodel::{QpRateCurve, RateDistortionCurve};

    /// Curve whose rate bounds at QP 42 / 22 are exactly `lo` / `hi`.
    fn curves_with_bounds(lo: f64, hi: f64, rd: RateDistortionCurve) -> TileCurves {
        let b = (hi / lo).ln() / 20.0;
        let a = hi * (22.0 * b).exp();
        TileCurves {
            qp_rate: QpRateCurve::new(ModelFamily::Exponential, a, b).unwrap(),
            rate_distortion: rd,
        }
    }

    fn power(c: f64, d: f64) -> RateDistortionCurve {
        RateDistortionCurve::new(ModelFamily::PowerLaw, c, d).unwrap()
    }

    #[test]
    fn symmetric_tiles_split_evenly() {
        let tc = curves_with_bounds(10.0, 10000.0, power(200.0, -0.8));
        let p = AllocationProblem::new(vec![0.5, 0.5], vec![tc, tc], 1000.0, AllocationOptions::default()).unwrap();
        let r = solve_allocation(&p).unwrap();
        assert!((r.rates_kbps[0] - 500.0).abs() < 1e-3, "{:?}", r.rates_kbps);
        assert!((r.rates_kbps[1] - 500.0).abs() < 1e-3);
        assert!(r.total_rate_kbps <= 1000.0 * (1.0 + 1e-6));
        assert!(r.lambda > 0.0);
    }

    #[test]
    fn slack_bandwidth_gives_upper_bounds() {
        let tc = curves_with_bounds(50.0, 400.0, power(300.0, -0.9));
        let p = AllocationProblem::new(vec![1.0], vec![tc], 1000.0, AllocationOptions::default()).unwrap();
        let r = solve_allocation(&p).unwrap();
        assert_eq!(r.lambda, 0.0);
        assert!((r.rates_kbps[0] - 400.0).abs() < 1e-9);
        assert_eq!(r.qps_quantized, vec![Some(22)]);
        assert!(matches!(check_feasibility(&p).status, FeasibilityStatus::Slack));
    }

    #[test]
    fn infeasible_reports_deficit() {
        let tc = curves_with_bounds(100.0, 400.0, power(300.0, -0.9));
        let p = AllocationProblem::new(vec![0.5, 0.5], vec![tc, tc], 150.0, AllocationOptions::default()).unwrap();
        match solve_allocation(&p) {
            Err(Error::Infeasible { deficit_kbps }) => assert!((deficit_kbps - 50.0).abs() < 1e-9),
            other => panic!("expected infeasible, got {other:?}"),
        }
        match check_feasibility(&p).status {
            FeasibilityStatus::Infeasible { deficit_kbps } => assert!((deficit_kbps - 50.0).abs() < 1e-9),
            s => panic!("{s:?}"),
        }
    }

    #[test]
    fn feasibility_sums_match_direct_summation() {
        let tcs = [
            curves_with_bounds(10.0, 100.0, power(100.0, -0.7)),
            curves_with_bounds(20.0, 300.0, power(100.0, -0.7)),
            curves_with_bounds(5.0, 50.0, power(100.0, -0.7)),
        ];
        let p = AllocationProblem::new(vec![0.2, 0.3, 0.5], tcs.to_vec(), 200.0, AllocationOptions::default()).unwrap();
        let rep = check_feasibility(&p);
        assert!((rep.min_demand_kbps - 35.0).abs() < 1e-9);
        assert!((rep.max_demand_kbps - 450.0).abs() < 1e-9);
        assert_eq!(rep.status, FeasibilityStatus::Active);
    }

    #[test]
    fn skip_drops_low_likelihood_tiles() {
        let tc = curves_with_bounds(100.0, 400.0, power(300.0, -0.9));
        let options = AllocationOptions {
            skip_enabled: true,
            ..AllocationOptions::default()
        };
        let p = AllocationProblem::new(vec![0.7, 0.29995, 0.00005], vec![tc; 3], 450.0, options.clone()).unwrap();
        let r = solve_allocation(&p).unwrap();
        assert_eq!(r.skipped, vec![2]);
        assert_eq!(r.rates_kbps[2], 0.0);
        assert_eq!(r.qps_quantized[2], None);
        assert!(r.dropped_for_feasibility.is_empty());

        // Not enough for both remaining floors: the less likely one goes.
        let p = AllocationProblem::new(vec![0.7, 0.29995, 0.00005], vec![tc; 3], 150.0, options).unwrap();
        let r = solve_allocation(&p).unwrap();
        assert_eq!(r.dropped_for_feasibility, vec![1]);
        assert_eq!(r.skipped, vec![1, 2]);
        assert!((r.rates_kbps[0] - 150.0).abs() < 1e-3);
    }

    #[test]
    fn zero_likelihood_tile_sits_at_floor() {
        let tc = curves_with_bounds(10.0, 1000.0, power(300.0, -0.9));
        let p = AllocationProblem::new(vec![1.0, 0.0], vec![tc, tc], 500.0, AllocationOptions::default()).unwrap();
        let r = solve_allocation(&p).unwrap();
        assert!((r.rates_kbps[1] - 10.0).abs() < 1e-9);
        assert!((r.rates_kbps[0] - 490.0).abs() < 1e-3);
    }

    #[test]
    fn quantization_rules() {
        let qr = QpRateCurve::new(ModelFamily::Exponential, 1000.0, 0.1).unwrap();
        let tc = TileCurves {
            qp_rate: qr,
            rate_distortion: power(200.0, -0.8),
        };
        let mk = |rate: f64| AllocationResult {
            likelihoods: vec![1.0],
            rates_kbps: vec![rate],
            qps_real: vec![Some(qp_from_rate(&qr, rate).unwrap())],
            qps_quantized: vec![],
            lambda: 0.0,
            expected_distortion: 0.0,
            total_rate_kbps: rate,
            bandwidth_kbps: rate,
            skipped: vec![],
            dropped_for_feasibility: vec![],
            quantized: QuantizedAllocation {
                qps: vec![],
                rates_kbps: vec![],
                total_rate_kbps: 0.0,
                expected_distortion: 0.0,
                slack_kbps: 0.0,
            },
        };
        let set = DEFAULT_QP_SET;
        let at32 = rate_from_qp(&qr, 32.0);
        let q = quantize_to_qp(&mk(at32), &[tc], &set, DEFAULT_SKIP_PENALTY_MSE).unwrap();
        assert_eq!(q.qps, vec![Some(32)]);
        assert!(q.slack_kbps.abs() < 1e-12);

        let below42 = rate_from_qp(&qr, 42.0) * 0.5;
        let q = quantize_to_qp(&mk(below42), &[tc], &set, DEFAULT_SKIP_PENALTY_MSE).unwrap();
        assert_eq!(q.qps, vec![Some(42)]);

        // Rates at 27 and 32 are 67.2055 and 40.7622 kbps; the midpoint
        // 53.9838 only admits QP 32 without overshooting.
        let mid = 0.5 * (rate_from_qp(&qr, 27.0) + at32);
        let q = quantize_to_qp(&mk(mid), &[tc], &set, DEFAULT_SKIP_PENALTY_MSE).unwrap();
        assert_eq!(q.qps, vec![Some(32)]);
        assert!((q.rates_kbps[0] - 40.762_203_978_366_21).abs() < 1e-9);
        assert!(q.slack_kbps > 0.0);
    }

    #[test]
    fn sequence_serial_matches_parallel() {
        let tc = curves_with_bounds(10.0, 1000.0, power(300.0, -0.9));
        let maps: Vec<HeatMap> = (0..8)
            .map(|g| HeatMap {
                gop_index: g,
                likelihoods: vec![0.1 * (g % 3) as f64 + 0.2, 0.8 - 0.1 * (g % 3) as f64],
                frames_covered: 32,
                empty: false,
            })
            .collect();
        let curves = vec![vec![tc, tc]; 8];
        let bw: Vec<f64> = (0..8).map(|g| 300.0 + 50.0 * g as f64).collect();
        let opts = AllocationOptions::default();
        let serial = solve_sequence(&maps, &curves, &bw, &opts, false).unwrap();
        let parallel = solve_sequence(&maps, &curves, &bw, &opts, true).unwrap();
        assert_eq!(serial, parallel);
        assert_eq!(serial.len(), 8);

        let err = solve_sequence(&maps, &curves, &[1.0; 8], &opts, false).unwrap_err();
        assert!(matches!(err, Error::Gop { gop: 0, .. }), "{err}");
    }
}
