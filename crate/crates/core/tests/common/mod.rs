//! Shared fixtures and brute-force oracles for integration tests.
#![allow(dead_code)]

use tilestream::evaluation::Scenario;
use tilestream::optimizer::{AllocationOptions, AllocationProblem, AllocationResult};
use tilestream::pipeline::{build_scenario, RunConfig};
use tilestream::rdmodel::{
    distortion_from_rate, marginal_distortion, rate_from_qp, ModelFamily, QpRateCurve, RateDistortionCurve, TileCurves,
};
use tilestream::synthgen::{synth_rd_params, synth_trace, Range, SynthRng};

pub const GRID_STEPS: usize = 2000;
pub const BUDGET_UNITS: usize = 20000;

/// Random allocation instance with 3-5 tiles and a bandwidth strictly
/// between the total lower and upper rate bounds.
pub fn random_instance(rng: &mut SynthRng, rd_family: ModelFamily) -> AllocationProblem {
    let n = 3 + (rng.uniform() * 3.0) as usize;
    let qp_min = 18 + (rng.uniform() * 8.0) as i32;
    let qp_max = 36 + (rng.uniform() * 10.0) as i32;
    let options = AllocationOptions {
        qp_min,
        qp_max,
        qp_set: (qp_min..=qp_max).step_by(5).collect(),
        ..AllocationOptions::default()
    };
    let mut curves = Vec::with_capacity(n);
    for _ in 0..n {
        let qp_rate = if rng.uniform() < 0.5 {
            let b = rng.log_uniform(Range::new(0.09, 0.18));
            let a = rng.log_uniform(Range::new(500.0, 8000.0)) * (b * 32.0).exp();
            QpRateCurve::new(ModelFamily::Exponential, a, b).unwrap()
        } else {
            let b = -rng.log_uniform(Range::new(1.5, 4.0));
            let a = rng.log_uniform(Range::new(500.0, 8000.0)) * 32f64.powf(-b);
            QpRateCurve::new(ModelFamily::PowerLaw, a, b).unwrap()
        };
        let r_top = rate_from_qp(&qp_rate, qp_min as f64);
        let rate_distortion = match rd_family {
            ModelFamily::PowerLaw => RateDistortionCurve::new(
                rd_family,
                rng.log_uniform(Range::new(1000.0, 50000.0)),
                -rng.log_uniform(Range::new(0.3, 1.2)),
            ),
            ModelFamily::Exponential => RateDistortionCurve::new(
                rd_family,
                rng.log_uniform(Range::new(20.0, 400.0)),
                rng.log_uniform(Range::new(0.5, 5.0)) / r_top,
            ),
        }
        .unwrap();
        curves.push(TileCurves {
            qp_rate,
            rate_distortion,
        });
    }
    let raw: Vec<f64> = (0..n).map(|_| 0.02 + rng.uniform()).collect();
    let total: f64 = raw.iter().sum();
    let likelihoods = raw.iter().map(|p| p / total).collect();

    let probe = AllocationProblem::new(likelihoods, curves, 1.0, options).unwrap();
    let (lo, hi): (f64, f64) = (0..n)
        .map(|i| probe.rate_bounds(i))
        .fold((0.0, 0.0), |(a, b), (l, u)| (a + l, b + u));
    let bandwidth = lo + (0.05 + 0.9 * rng.uniform()) * (hi - lo);
    AllocationProblem {
        bandwidth_kbps: bandwidth,
        ..probe
    }
}

/// Expected distortion of a rate vector.
pub fn objective(problem: &AllocationProblem, rates: &[f64]) -> f64 {
    problem
        .likelihoods
        .iter()
        .zip(&problem.curves)
        .zip(rates)
        .map(|((p, c), r)| p * distortion_from_rate(&c.rate_distortion, *r).unwrap())
        .sum()
}

/// Grid-search optimum: tile `i` may take any of `GRID_STEPS + 1` evenly
/// spaced rates on its own `[lower_i, upper_i]`. The best combination within
/// budget is found by dynamic programming over budget units of
/// `(C - sum(lower)) / BUDGET_UNITS`, charging each grid rate the units of
/// its excess rounded up. The result is the objective of a feasible point,
/// so it bounds the true optimum from above.
pub fn grid_search_optimum(problem: &AllocationProblem) -> f64 {
    let n = problem.tile_count();
    let bounds: Vec<(f64, f64)> = (0..n).map(|i| problem.rate_bounds(i)).collect();
    let slack = problem.bandwidth_kbps - bounds.iter().map(|b| b.0).sum::<f64>();
    assert!(slack > 0.0, "oracle expects a feasible, non-trivial budget");
    let unit = slack / BUDGET_UNITS as f64;

    // cost[i][u]: best weighted distortion of tile i using at most u units.
    let cost: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let (lo, hi) = bounds[i];
            let mut table = vec![f64::INFINITY; BUDGET_UNITS + 1];
            for k in 0..=GRID_STEPS {
                let r = lo + (hi - lo) * k as f64 / GRID_STEPS as f64;
                let u = ((r - lo) / unit).ceil() as usize;
                if u > BUDGET_UNITS {
                    break;
                }
                let d = problem.likelihoods[i] * distortion_from_rate(&problem.curves[i].rate_distortion, r).unwrap();
                table[u] = table[u].min(d);
            }
            for u in 1..=BUDGET_UNITS {
                table[u] = table[u].min(table[u - 1]);
            }
            table
        })
        .collect();

    // Breakpoints of each tile table, for a sparse min-plus convolution.
    let steps: Vec<Vec<(usize, f64)>> = cost
        .iter()
        .map(|t| {
            (0..=BUDGET_UNITS)
                .filter(|&u| u == 0 || t[u] < t[u - 1])
                .map(|u| (u, t[u]))
                .collect()
        })
        .collect();

    let mut best = cost[0].clone();
    for tile_steps in &steps[1..n - 1] {
        let mut next = vec![f64::INFINITY; BUDGET_UNITS + 1];
        for (j, slot) in next.iter_mut().enumerate() {
            for &(u, c) in tile_steps.iter().take_while(|(u, _)| *u <= j) {
                let v = best[j - u] + c;
                if v < *slot {
                    *slot = v;
                }
            }
        }
        best = next;
    }
    steps[n - 1]
        .iter()
        .map(|&(u, c)| best[BUDGET_UNITS - u] + c)
        .fold(f64::INFINITY, f64::min)
}

/// Checks the optimality conditions of a continuous solution: equal
/// weighted marginal distortion among interior tiles, bound-tile
/// inequalities against lambda, and a binding budget when lambda > 0.
pub fn kkt_violation(problem: &AllocationProblem, result: &AllocationResult, rel_tol: f64) -> Option<String> {
    let lambda = result.lambda;
    let mut interior = Vec::new();
    for i in 0..problem.tile_count() {
        let (lo, hi) = problem.rate_bounds(i);
        let r = result.rates_kbps[i];
        if r < lo * (1.0 - 1e-12) || r > hi * (1.0 + 1e-12) {
            return Some(format!("tile {i} rate {r} outside [{lo}, {hi}]"));
        }
        let m = problem.likelihoods[i]
            * marginal_distortion(&problem.curves[i].rate_distortion, r)
                .unwrap()
                .abs();
        let at_lo = (r - lo).abs() <= 1e-9 * lo;
        let at_hi = (r - hi).abs() <= 1e-9 * hi;
        if at_hi {
            if m < lambda * (1.0 - rel_tol) {
                return Some(format!("tile {i} at upper bound with marginal {m} < lambda {lambda}"));
            }
        } else if at_lo {
            if m > lambda * (1.0 + rel_tol) {
                return Some(format!("tile {i} at lower bound with marginal {m} > lambda {lambda}"));
            }
        } else {
            interior.push(m);
        }
    }
    if let (Some(min), Some(max)) = (
        interior.iter().copied().reduce(f64::min),
        interior.iter().copied().reduce(f64::max),
    ) {
        if max - min > rel_tol * max {
            return Some(format!("interior marginals spread {min}..{max}"));
        }
        if (max - lambda).abs() > rel_tol * max {
            return Some(format!("interior marginal {max} differs from lambda {lambda}"));
        }
    }
    let c = problem.bandwidth_kbps;
    if result.total_rate_kbps > c * (1.0 + 1e-12) {
        return Some(format!("total {} exceeds budget {c}", result.total_rate_kbps));
    }
    if lambda > 0.0 && (c - result.total_rate_kbps) > 1e-6 * c {
        return Some(format!(
            "lambda {lambda} > 0 but budget slack {}",
            c - result.total_rate_kbps
        ));
    }
    None
}

/// Shipped seed-fixed reference scenario with heat maps from its own trace.
pub fn reference_scenario(cfg: &RunConfig) -> Scenario {
    let synth = cfg.synth_config().unwrap();
    let trace = synth_trace(&synth).unwrap();
    let curves = synth_rd_params(&synth).unwrap();
    build_scenario(cfg, trace, curves, None).unwrap()
}

/// Small scenario for fast tests.
pub fn small_config(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        frames: 192,
        sample_grid: 16,
        ..RunConfig::default()
    }
}

pub fn seeded(seed: u64) -> SynthRng {
    SynthRng::new(seed, 0)
}
