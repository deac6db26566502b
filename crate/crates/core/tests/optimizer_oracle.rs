mod common;

use tilestream::baselines::{monolithic_at_bandwidth, predicted_coverage, speed_based_allocation};
use tilestream::geometry::{SphereDirection, TileGrid, ViewportSpec};
use tilestream::optimizer::{quantize_to_qp, solve_allocation, AllocationOptions, AllocationProblem};
use tilestream::rdmodel::{rate_from_qp, ModelFamily, QpRateCurve, RateDistortionCurve, TileCurves};
use tilestream::synthgen::SynthRng;

fn four_tile_problem() -> AllocationProblem {
    let rd = [(200.0, -0.8), (500.0, -0.6), (1200.0, -0.9), (80.0, -0.5)];
    let curves = rd
        .iter()
        .map(|&(c, d)| TileCurves {
            qp_rate: QpRateCurve::new(ModelFamily::Exponential, 40000.0, 0.14).unwrap(),
            rate_distortion: RateDistortionCurve::new(ModelFamily::PowerLaw, c, d).unwrap(),
        })
        .collect();
    AllocationProblem::new(vec![0.4, 0.3, 0.2, 0.1], curves, 2050.0, AllocationOptions::default()).unwrap()
}

#[test]
fn four_tile_instance_matches_grid_search() {
    let p = four_tile_problem();
    let got = solve_allocation(&p).unwrap();
    for i in 0..4 {
        let (lo, hi) = p.rate_bounds(i);
        assert!(
            got.rates_kbps[i] > lo && got.rates_kbps[i] < hi,
            "tile {i} sits on a bound"
        );
    }
    let ours = common::objective(&p, &got.rates_kbps);
    let oracle = common::grid_search_optimum(&p);
    assert!(ours <= oracle + 1e-9, "{ours} vs {oracle}");
    assert!((oracle - ours) / oracle < 1e-3);
    assert!(common::kkt_violation(&p, &got, 1e-6).is_none());
}

#[test]
fn random_instances_match_grid_search_and_kkt() {
    let mut rng = SynthRng::new(99, 0);
    for i in 0..12 {
        let family = if i % 2 == 0 {
            ModelFamily::Exponential
        } else {
            ModelFamily::PowerLaw
        };
        let p = common::random_instance(&mut rng, family);
        let got = solve_allocation(&p).unwrap();
        let ours = common::objective(&p, &got.rates_kbps);
        let oracle = common::grid_search_optimum(&p);
        assert!(
            ours <= oracle + 1e-9 && (oracle - ours) / oracle < 1e-3,
            "instance {i}: {ours} vs {oracle}"
        );
        if let Some(v) = common::kkt_violation(&p, &got, 1e-6) {
            panic!("instance {i}: {v}");
        }
    }
}

#[test]
fn more_bandwidth_never_lowers_any_tile_rate() {
    let mut rng = SynthRng::new(5, 0);
    let base = common::random_instance(&mut rng, ModelFamily::PowerLaw);
    let n = base.tile_count();
    let (lo, hi) = (0..n)
        .map(|i| base.rate_bounds(i))
        .fold((0.0, 0.0), |(a, b), (l, u)| (a + l, b + u));
    let mut prev: Option<(Vec<f64>, f64)> = None;
    for k in 0..=20 {
        let c = lo * 1.001 + (hi * 1.1 - lo) * k as f64 / 20.0;
        let got = solve_allocation(&AllocationProblem {
            bandwidth_kbps: c,
            ..base.clone()
        })
        .unwrap();
        if let Some((rates, obj)) = &prev {
            for (i, (now, before)) in got.rates_kbps.iter().zip(rates).enumerate() {
                assert!(*now >= before * (1.0 - 1e-6), "tile {i} rate fell at C={c}");
            }
            assert!(got.expected_distortion <= obj * (1.0 + 1e-9));
        }
        prev = Some((got.rates_kbps.clone(), got.expected_distortion));
    }
}

#[test]
fn scaling_likelihoods_leaves_rates_unchanged() {
    let p = four_tile_problem();
    let a = solve_allocation(&p).unwrap();
    let scaled = AllocationProblem {
        likelihoods: p.likelihoods.iter().map(|x| x * 7.5).collect(),
        ..p.clone()
    };
    let b = solve_allocation(&scaled).unwrap();
    for (x, y) in a.rates_kbps.iter().zip(&b.rates_kbps) {
        assert!((x - y).abs() < 1e-6 * p.bandwidth_kbps);
    }
    assert!((b.lambda / a.lambda - 7.5).abs() < 1e-4);
}

#[test]
fn quantized_rates_never_exceed_continuous() {
    let mut rng = SynthRng::new(6, 0);
    for _ in 0..20 {
        let p = common::random_instance(&mut rng, ModelFamily::PowerLaw);
        let got = solve_allocation(&p).unwrap();
        let q = quantize_to_qp(&got, &p.curves, &p.options.qp_set, p.options.skip_penalty_mse).unwrap();
        let top = *p.options.qp_set.last().unwrap();
        for i in 0..p.tile_count() {
            let qp = q.qps[i].unwrap();
            let fits = q.rates_kbps[i] <= got.rates_kbps[i] * (1.0 + 1e-12);
            assert!(fits || qp == top, "tile {i} quantized above its budget");
        }
        assert!(q.total_rate_kbps <= got.total_rate_kbps * (1.0 + 1e-12) || q.qps.contains(&Some(top)));
    }
}

#[test]
fn quantization_examples() {
    let curve = QpRateCurve::new(ModelFamily::Exponential, 40000.0, 0.14).unwrap();
    let tiles = vec![
        TileCurves {
            qp_rate: curve,
            rate_distortion: RateDistortionCurve::new(ModelFamily::PowerLaw, 200.0, -0.8).unwrap(),
        };
        3
    ];
    let mut result = solve_allocation(
        &AllocationProblem::new(vec![1.0 / 3.0; 3], tiles.clone(), 1e6, AllocationOptions::default()).unwrap(),
    )
    .unwrap();
    let r27 = rate_from_qp(&curve, 27.0);
    let r32 = rate_from_qp(&curve, 32.0);
    result.rates_kbps = vec![r32, (r27 + r32) / 2.0, rate_from_qp(&curve, 42.0) * 0.5];
    let q = quantize_to_qp(&result, &tiles, &[22, 27, 32, 37, 42], 1.0).unwrap();
    assert_eq!(q.qps, vec![Some(32), Some(32), Some(42)]);
}

#[test]
fn proposed_beats_both_baselines_on_its_objective() {
    let mut rng = SynthRng::new(8, 0);
    let grid = TileGrid::new(3, 2).unwrap();
    let spec = ViewportSpec::default().with_sample_grid(16).unwrap();
    for trial in 0..20 {
        let mut p = common::random_instance(&mut rng, ModelFamily::PowerLaw);
        // Widen to six tiles by repeating the instance.
        p.curves = p.curves.iter().cycle().take(6).copied().collect();
        let raw: Vec<f64> = (0..6).map(|_| rng.uniform() + 0.01).collect();
        let sum: f64 = raw.iter().sum();
        p.likelihoods = raw.iter().map(|x| x / sum).collect();
        let (lo, hi) = (0..6)
            .map(|i| p.rate_bounds(i))
            .fold((0.0, 0.0), |(a, b), (l, u)| (a + l, b + u));
        p.bandwidth_kbps = lo + rng.uniform() * (hi - lo);

        let ours = solve_allocation(&p).unwrap();
        let penalty = p.options.skip_penalty_mse;
        let mono = monolithic_at_bandwidth(
            &p.likelihoods,
            &p.curves,
            p.bandwidth_kbps,
            p.options.qp_min,
            p.options.qp_max,
            penalty,
        )
        .unwrap();
        let cover = predicted_coverage(&[SphereDirection::new(rng.uniform() * 360.0, 90.0)], spec, grid);
        let speed = speed_based_allocation(
            &cover,
            &p.likelihoods,
            &p.curves,
            p.bandwidth_kbps,
            &p.options.qp_set,
            penalty,
        )
        .unwrap();
        for other in [&mono, &speed] {
            assert!(
                other.total_rate_kbps <= p.bandwidth_kbps * (1.0 + 1e-6),
                "trial {trial}: baseline over budget"
            );
            assert!(
                ours.expected_distortion <= other.expected_distortion * (1.0 + 1e-9),
                "trial {trial}"
            );
        }
    }
}
