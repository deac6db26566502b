//! Reference allocators: uniform-QP monolithic streaming and a
//! speed-based viewport predictor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    viewport_footprint, wrap_degrees, wrapped_delta, yaw_pitch_to_sphere, SphereDirection, TileGrid, ViewportSpec,
};
use crate::navigation::TraceSample;
use crate::optimizer::{expected_distortion, AllocationResult, QuantizedAllocation};
use crate::rdmodel::{rate_from_qp, TileCurves};

pub const DEFAULT_MONOLITHIC_QP_SET: [i32; 5] = [32, 34, 36, 39, 42];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonolithicConfig {
    pub qp: i32,
}

impl Default for MonolithicConfig {
    fn default() -> Self {
        MonolithicConfig { qp: 36 }
    }
}

/// Builds a result from a per-tile QP assignment (`None` = skipped).
fn discrete_result(
    likelihoods: &[f64],
    curves: &[TileCurves],
    qps: Vec<Option<f64>>,
    bandwidth_kbps: f64,
    skip_penalty_mse: f64,
    dropped: Vec<usize>,
) -> Result<AllocationResult> {
    if likelihoods.len() != curves.len() {
        return Err(Error::validation(format!(
            "{} likelihoods for {} tile curves",
            likelihoods.len(),
            curves.len()
        )));
    }
    let rates: Vec<Option<f64>> = qps
        .iter()
        .zip(curves)
        .map(|(q, c)| q.map(|q| rate_from_qp(&c.qp_rate, q)))
        .collect();
    let expected = expected_distortion(likelihoods, curves, rates.iter().copied(), skip_penalty_mse)?;
    let rates_kbps: Vec<f64> = rates.iter().map(|r| r.unwrap_or(0.0)).collect();
    let total: f64 = rates_kbps.iter().sum();
    let integral: Vec<Option<i32>> = qps
        .iter()
        .map(|q| q.filter(|q| q.fract() == 0.0).map(|q| q as i32))
        .collect();
    let integral_qps = integral.iter().zip(&qps).all(|(i, q)| i.is_some() == q.is_some());
    let quantized_qps = if integral_qps { integral } else { vec![None; qps.len()] };
    Ok(AllocationResult {
        likelihoods: likelihoods.to_vec(),
        rates_kbps: rates_kbps.clone(),
        qps_real: qps.clone(),
        qps_quantized: quantized_qps.clone(),
        lambda: 0.0,
        expected_distortion: expected,
        total_rate_kbps: total,
        bandwidth_kbps,
        skipped: (0..qps.len()).filter(|&i| qps[i].is_none()).collect(),
        dropped_for_feasibility: dropped,
        quantized: QuantizedAllocation {
            qps: quantized_qps,
            rates_kbps,
            total_rate_kbps: total,
            expected_distortion: expected,
            slack_kbps: 0.0,
        },
    })
}

/// Every tile at the same QP. The resulting total rate is the bandwidth the
/// other systems are given at a matched operating point.
pub fn monolithic_allocation(
    likelihoods: &[f64],
    curves: &[TileCurves],
    qp: i32,
    skip_penalty_mse: f64,
) -> Result<AllocationResult> {
    let total: f64 = curves.iter().map(|c| rate_from_qp(&c.qp_rate, qp as f64)).sum();
    discrete_result(
        likelihoods,
        curves,
        vec![Some(qp as f64); curves.len()],
        total,
        skip_penalty_mse,
        Vec::new(),
    )
}

/// Total rate of a uniform-QP encoding.
pub fn monolithic_rate(curves: &[TileCurves], qp: f64) -> f64 {
    curves.iter().map(|c| rate_from_qp(&c.qp_rate, qp)).sum()
}

/// Uniform encoding at the lowest (continuous) QP in `[qp_min, qp_max]`
/// whose total rate fits the bandwidth.
pub fn monolithic_at_bandwidth(
    likelihoods: &[f64],
    curves: &[TileCurves],
    bandwidth_kbps: f64,
    qp_min: i32,
    qp_max: i32,
    skip_penalty_mse: f64,
) -> Result<AllocationResult> {
    let (lo_q, hi_q) = (qp_min as f64, qp_max as f64);
    let min_demand = monolithic_rate(curves, hi_q);
    if min_demand > bandwidth_kbps {
        return Err(Error::Infeasible {
            deficit_kbps: min_demand - bandwidth_kbps,
        });
    }
    let qp = if monolithic_rate(curves, lo_q) <= bandwidth_kbps {
        lo_q
    } else {
        // Total rate falls with QP; keep `high` on the feasible side.
        let (mut low, mut high) = (lo_q, hi_q);
        for _ in 0..200 {
            let mid = 0.5 * (low + high);
            if !(mid > low && mid < high) {
                break;
            }
            if monolithic_rate(curves, mid) > bandwidth_kbps {
                low = mid;
            } else {
                high = mid;
            }
        }
        high
    };
    let mut result = discrete_result(
        likelihoods,
        curves,
        vec![Some(qp); curves.len()],
        bandwidth_kbps,
        skip_penalty_mse,
        Vec::new(),
    )?;
    result.bandwidth_kbps = bandwidth_kbps;
    Ok(result)
}

/// Position and angular velocity (deg/s) at the end of a trace prefix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedPredictorState {
    pub last_yaw: f64,
    pub last_pitch: f64,
    pub yaw_velocity: f64,
    pub pitch_velocity: f64,
}

impl SpeedPredictorState {
    /// Estimates velocity over the last `window` steps of the prefix. With a
    /// single sample the velocity is zero.
    pub fn estimate(prefix: &[TraceSample], fps: f64, window: usize) -> Option<Self> {
        let last = prefix.last()?;
        let window = window.max(1).min(prefix.len() - 1);
        let (mut yaw_velocity, mut pitch_velocity) = (0.0, 0.0);
        if window > 0 {
            let from = &prefix[prefix.len() - 1 - window..];
            let mut yaw_shift = 0.0;
            for pair in from.windows(2) {
                yaw_shift += wrapped_delta(pair[0].yaw_deg, pair[1].yaw_deg);
            }
            let first = from[0];
            let mut dt = last.time_s - first.time_s;
            if !(dt > 0.0) {
                dt = (last.frame_index - first.frame_index) as f64 / fps;
            }
            yaw_velocity = yaw_shift / dt;
            pitch_velocity = (last.pitch_deg - first.pitch_deg) / dt;
        }
        Some(SpeedPredictorState {
            last_yaw: last.yaw_deg,
            last_pitch: last.pitch_deg,
            yaw_velocity,
            pitch_velocity,
        })
    }

    /// Orientation `t` seconds after the last sample.
    pub fn extrapolate(&self, t: f64) -> SphereDirection {
        let yaw = wrap_degrees(self.last_yaw + self.yaw_velocity * t);
        let pitch = (self.last_pitch + self.pitch_velocity * t).clamp(-90.0, 90.0);
        yaw_pitch_to_sphere(yaw, pitch)
    }
}

/// Constant-velocity viewport prediction at every frame instant from `t = 0`
/// through `horizon_s`. An empty prefix yields no predictions; a single
/// sample is held in place.
pub fn predict_viewport(prefix: &[TraceSample], fps: f64, horizon_s: f64, window: usize) -> Vec<SphereDirection> {
    let Some(state) = SpeedPredictorState::estimate(prefix, fps, window) else {
        return Vec::new();
    };
    let steps = (horizon_s * fps).round().max(0.0) as usize;
    (0..=steps).map(|k| state.extrapolate(k as f64 / fps)).collect()
}

/// Mean footprint over a set of predicted orientations.
pub fn predicted_coverage(predicted: &[SphereDirection], spec: ViewportSpec, grid: TileGrid) -> Vec<f64> {
    let mut acc = vec![0.0; grid.tile_count()];
    for &dir in predicted {
        for (a, w) in acc.iter_mut().zip(viewport_footprint(dir, spec, grid).weights) {
            *a += w;
        }
    }
    if !predicted.is_empty() {
        acc.iter_mut().for_each(|a| *a /= predicted.len() as f64);
    }
    acc
}

/// Best (lowest) ladder QP whose uniform rate over `tiles` fits `budget`.
fn best_uniform_qp(tiles: &[usize], curves: &[TileCurves], ladder: &[i32], budget: f64) -> Option<i32> {
    ladder
        .iter()
        .copied()
        .find(|&qp| uniform_rate(tiles, curves, qp) <= budget)
}

fn uniform_rate(tiles: &[usize], curves: &[TileCurves], qp: i32) -> f64 {
    tiles.iter().map(|&i| rate_from_qp(&curves[i].qp_rate, qp as f64)).sum()
}

/// Speed-based split: tiles touched by any predicted viewport get the best
/// uniform quality that still leaves room for the rest at the worst ladder
/// QP; the remainder is spent on the other tiles at the best uniform QP that
/// fits, or they are skipped.
///
/// `coverage` is the mean predicted footprint per tile (see
/// [`predicted_coverage`]); tiles with nonzero coverage are in view. If the
/// in-view set alone cannot fit at the worst QP, its lowest-coverage tiles
/// are dropped until it does.
pub fn speed_based_allocation(
    coverage: &[f64],
    likelihoods: &[f64],
    curves: &[TileCurves],
    bandwidth_kbps: f64,
    qp_set: &[i32],
    skip_penalty_mse: f64,
) -> Result<AllocationResult> {
    let n = curves.len();
    if coverage.len() != n {
        return Err(Error::validation("coverage vector does not match tile count"));
    }
    let mut ladder = qp_set.to_vec();
    ladder.sort_unstable();
    ladder.dedup();
    let worst = *ladder.last().ok_or_else(|| Error::validation("QP set is empty"))?;

    let mut in_view: Vec<usize> = (0..n).filter(|&i| coverage[i] > 0.0).collect();
    let out_view: Vec<usize> = (0..n).filter(|&i| coverage[i] <= 0.0).collect();
    let mut qps: Vec<Option<f64>> = vec![None; n];

    let mut dropped = Vec::new();
    if uniform_rate(&in_view, curves, worst) > bandwidth_kbps {
        // Keep the most covered tiles; ties broken by tile index.
        in_view.sort_by(|&a, &b| coverage[b].total_cmp(&coverage[a]).then(a.cmp(&b)));
        while !in_view.is_empty() && uniform_rate(&in_view, curves, worst) > bandwidth_kbps {
            dropped.push(in_view.pop().unwrap_or_default());
        }
        in_view.sort_unstable();
    }

    let out_floor = uniform_rate(&out_view, curves, worst);
    let in_qp = best_uniform_qp(&in_view, curves, &ladder, bandwidth_kbps - out_floor)
        .or_else(|| best_uniform_qp(&in_view, curves, &ladder, bandwidth_kbps));
    let mut spent = 0.0;
    if let Some(qp) = in_qp {
        for &i in &in_view {
            qps[i] = Some(qp as f64);
        }
        spent = uniform_rate(&in_view, curves, qp);
    }
    if let Some(qp) = best_uniform_qp(&out_view, curves, &ladder, bandwidth_kbps - spent) {
        for &i in &out_view {
            qps[i] = Some(qp as f64);
        }
    }

    discrete_result(likelihoods, curves, qps, bandwidth_kbps, skip_penalty_mse, dropped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rdmodel::{ModelFamily, QpRateCurve, RateDistortionCurve};

    fn tc(a: f64) -> TileCurves {
        TileCurves {
            qp_rate: QpRateCurve::new(ModelFamily::Exponential, a, 0.12).unwrap(),
            rate_distortion: RateDistortionCurve::new(ModelFamily::PowerLaw, 4000.0, -0.9).unwrap(),
        }
    }

    fn sample(frame: usize, yaw: f64, pitch: f64) -> TraceSample {
        TraceSample {
            frame_index: frame,
            time_s: frame as f64 / 30.0,
            yaw_deg: yaw,
            pitch_deg: pitch,
        }
    }

    #[test]
    fn monolithic_uniform_curves_uniform_rates() {
        let curves = vec![tc(20000.0); 4];
        let r = monolithic_allocation(&[0.25; 4], &curves, 36, 1.0).unwrap();
        assert!(r.rates_kbps.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(r.qps_quantized, vec![Some(36); 4]);
        assert_eq!(r.total_rate_kbps, r.bandwidth_kbps);
    }

    #[test]
    fn monolithic_at_bandwidth_matches_integer_qp() {
        let curves: Vec<_> = (0..6).map(|i| tc(10000.0 + 3000.0 * i as f64)).collect();
        let c = monolithic_rate(&curves, 36.0);
        let r = monolithic_at_bandwidth(&[1.0 / 6.0; 6], &curves, c, 22, 42, 1.0).unwrap();
        assert!((r.qps_real[0].unwrap() - 36.0).abs() < 1e-9);
        assert!(r.total_rate_kbps <= c);
        let r = monolithic_at_bandwidth(&[1.0 / 6.0; 6], &curves, 1e12, 22, 42, 1.0).unwrap();
        assert_eq!(r.qps_real[0], Some(22.0));
        assert!(monolithic_at_bandwidth(&[1.0 / 6.0; 6], &curves, 1.0, 22, 42, 1.0).is_err());
    }

    #[test]
    fn zero_velocity_holds_position() {
        let prefix = [sample(0, 40.0, 10.0), sample(1, 40.0, 10.0)];
        let pred = predict_viewport(&prefix, 30.0, 1.0, 1);
        assert_eq!(pred.len(), 31);
        assert!(pred.iter().all(|d| *d == yaw_pitch_to_sphere(40.0, 10.0)));
    }

    #[test]
    fn constant_velocity_extrapolates_linearly() {
        // 3 degrees per frame at 30 fps = 90 deg/s.
        let prefix = [sample(0, 0.0, 0.0), sample(1, 3.0, 0.0)];
        let pred = predict_viewport(&prefix, 30.0, 1.0, 1);
        let last = pred.last().unwrap();
        assert!((last.azimuth_deg() - 93.0).abs() < 1e-9, "{last:?}");
        for (k, d) in pred.iter().enumerate() {
            let expected = 3.0 + 90.0 * k as f64 / 30.0;
            assert!((d.azimuth_deg() - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn extrapolation_wraps_yaw_and_clamps_pitch() {
        let prefix = [sample(0, 350.0, 80.0), sample(1, 355.0, 85.0)];
        let pred = predict_viewport(&prefix, 30.0, 1.0, 1);
        let last = pred.last().unwrap();
        assert!((last.azimuth_deg() - wrap_degrees(355.0 + 150.0)).abs() < 1e-9);
        assert_eq!(last.polar_deg(), 0.0);
        // Crossing the 0/360 seam uses the short way round.
        let prefix = [sample(0, 359.0, 0.0), sample(1, 1.0, 0.0)];
        let s = SpeedPredictorState::estimate(&prefix, 30.0, 1).unwrap();
        assert!((s.yaw_velocity - 60.0).abs() < 1e-9);
    }

    #[test]
    fn averaging_window() {
        let prefix = [sample(0, 0.0, 0.0), sample(1, 1.0, 0.0), sample(2, 5.0, 0.0)];
        let s1 = SpeedPredictorState::estimate(&prefix, 30.0, 1).unwrap();
        let s2 = SpeedPredictorState::estimate(&prefix, 30.0, 2).unwrap();
        assert!((s1.yaw_velocity - 120.0).abs() < 1e-9);
        assert!((s2.yaw_velocity - 75.0).abs() < 1e-9);
    }

    #[test]
    fn short_prefixes() {
        assert!(predict_viewport(&[], 30.0, 1.0, 1).is_empty());
        let pred = predict_viewport(&[sample(0, 10.0, -5.0)], 30.0, 0.5, 1);
        assert_eq!(pred.len(), 16);
        assert!(pred.iter().all(|d| *d == yaw_pitch_to_sphere(10.0, -5.0)));
    }

    #[test]
    fn all_in_view_ample_bandwidth_is_monolithic_best() {
        let curves: Vec<_> = (0..4).map(|i| tc(10000.0 * (i + 1) as f64)).collect();
        let p = [0.25; 4];
        let r = speed_based_allocation(&[0.25; 4], &p, &curves, 1e9, &[22, 27, 32, 37, 42], 1.0).unwrap();
        let m = monolithic_allocation(&p, &curves, 22, 1.0).unwrap();
        assert_eq!(r.rates_kbps, m.rates_kbps);
    }

    #[test]
    fn empty_prediction_is_uniform_affordable() {
        let curves = vec![tc(20000.0); 4];
        let c = monolithic_rate(&curves, 32.0) * 1.01;
        let r = speed_based_allocation(&[0.0; 4], &[0.25; 4], &curves, c, &[22, 27, 32, 37, 42], 1.0).unwrap();
        assert_eq!(r.qps_quantized, vec![Some(32); 4]);
    }

    #[test]
    fn tight_budget_trims_lowest_coverage() {
        let curves = vec![tc(20000.0); 4];
        let worst = rate_from_qp(&curves[0].qp_rate, 42.0);
        let cov = [0.5, 0.3, 0.2, 0.0];
        let r = speed_based_allocation(&cov, &[0.25; 4], &curves, 2.5 * worst, &[22, 27, 32, 37, 42], 1.0).unwrap();
        assert_eq!(r.dropped_for_feasibility, vec![2]);
        assert_eq!(r.skipped, vec![2, 3]);
        assert!(r.total_rate_kbps <= 2.5 * worst);
    }
}
