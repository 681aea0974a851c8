use std::f64::consts::PI;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rvlab_core::solver::{
    gauss_bonnet_check, renormalized_area, solve_minimal, BoundaryCurve, DilatedMetric, MetricJet,
    MinimalProblem, SolverError, SolverOptions, Strategy,
};

fn opts(n_cheb: usize, n_fourier: usize) -> SolverOptions {
    SolverOptions {
        n_cheb,
        n_fourier,
        ..Default::default()
    }
}

fn omega2() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.2, -0.4])
}

/// `ω₀ = Id` with a nonzero gradient at the origin, plus `ω₂`.
fn tilted_jet() -> MetricJet {
    let g = [
        DMatrix::from_row_slice(2, 2, &[0.6, 0.2, 0.2, -0.3]),
        DMatrix::from_row_slice(2, 2, &[0.1, 0.4, 0.4, 0.5]),
    ];
    MetricJet::empty(2)
        .with_gradient_term(0, &DMatrix::identity(2, 2), &g)
        .with_term(2, &omega2())
}

fn problem(jet: &MetricJet, delta: f64, curve: BoundaryCurve) -> MinimalProblem {
    MinimalProblem {
        metric: DilatedMetric::new(jet, &[0.0, 0.0], delta, &DMatrix::identity(2, 2)).unwrap(),
        curve,
    }
}

fn slope(a: (f64, f64), b: (f64, f64)) -> f64 {
    (b.1.ln() - a.1.ln()) / (b.0.ln() - a.0.ln())
}

fn area_of(curve: BoundaryCurve, o: &SolverOptions) -> f64 {
    let hyp = DilatedMetric::hyperbolic(2);
    let s = solve_minimal(
        &MinimalProblem {
            metric: hyp.clone(),
            curve,
        },
        o,
    )
    .unwrap();
    renormalized_area(&s, &hyp, f64::INFINITY).unwrap().value
}

#[test]
fn contraction_factor_is_linear_in_delta() {
    let o = SolverOptions {
        strategy: Strategy::FixedPoint,
        measure_contraction: true,
        ..opts(15, 16)
    };
    let k: Vec<(f64, f64)> = [0.02, 0.04, 0.08]
        .iter()
        .map(|&d| {
            let s =
                solve_minimal(&problem(&tilted_jet(), d, BoundaryCurve::circle(1.0)), &o).unwrap();
            assert!(s.max_mean_curvature < 1e-8);
            (d, s.contraction.unwrap())
        })
        .collect();
    for w in k.windows(2) {
        let p = slope(w[0], w[1]);
        assert!((p - 1.0).abs() < 0.15, "slope {p} from {k:?}");
    }
}

#[test]
fn deformation_is_quadratic_without_gradients() {
    let jet = MetricJet::hyperbolic(2).with_term(2, &omega2());
    let size: Vec<(f64, f64)> = [0.05, 0.1, 0.2]
        .iter()
        .map(|&d| {
            let s = solve_minimal(&problem(&jet, d, BoundaryCurve::circle(1.0)), &opts(15, 16))
                .unwrap();
            assert!(s.max_mean_curvature < 1e-8);
            (d, s.w.amax())
        })
        .collect();
    for w in size.windows(2) {
        let p = slope(w[0], w[1]);
        assert!((p - 2.0).abs() < 0.1, "slope {p} from {size:?}");
    }
    // at δ = 0 the circle bounds the hemisphere itself
    let s = solve_minimal(
        &problem(&jet, 0.0, BoundaryCurve::circle(1.0)),
        &opts(15, 16),
    )
    .unwrap();
    assert!(s.w.amax() < 1e-12);
}

#[test]
fn odd_coefficients_vanish_for_even_metrics() {
    let even = MetricJet::hyperbolic(2).with_term(2, &omega2());
    for (jet, delta) in [(&even, 0.2), (&tilted_jet(), 0.08)] {
        let s = solve_minimal(
            &problem(
                jet,
                delta,
                BoundaryCurve::perturbed_circle(&[(2, 0.05, 0.0)]),
            ),
            &opts(23, 24),
        )
        .unwrap();
        let (odd, size) = s.odd_coefficient_ratio();
        assert!(
            size > 1e-4 && odd < 1e-4 * size,
            "odd {odd:e} vs size {size:e}"
        );
    }
}

#[test]
fn oversized_dilation_does_not_contract() {
    let jet = MetricJet::hyperbolic(2)
        .with_term(2, &DMatrix::from_row_slice(2, 2, &[8.0, 0.0, 0.0, -8.0]));
    let o = SolverOptions {
        strategy: Strategy::FixedPoint,
        ..opts(15, 16)
    };
    let r = solve_minimal(&problem(&jet, 0.6, BoundaryCurve::circle(1.0)), &o);
    assert!(matches!(r, Err(SolverError::NoConvergence { .. })), "{r:?}");
}

#[test]
fn perturbed_circles_stay_below_the_ceiling() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let hyp = DilatedMetric::hyperbolic(2);
    for _ in 0..20 {
        let modes: Vec<(u32, f64, f64)> = (2..=4)
            .map(|j| {
                (
                    j,
                    rng.random_range(-0.05..0.05) / j as f64,
                    rng.random_range(-0.05..0.05) / j as f64,
                )
            })
            .collect();
        let s = solve_minimal(
            &MinimalProblem {
                metric: hyp.clone(),
                curve: BoundaryCurve::perturbed_circle(&modes),
            },
            &opts(23, 32),
        )
        .unwrap();
        let gb = gauss_bonnet_check(&s, &hyp).unwrap();
        assert!(gb.lhs <= -2.0 * PI + 1e-4, "{modes:?}: {}", gb.lhs);
        assert!(gb.defect.abs() < 5e-3, "{modes:?}: {gb:?}");
    }
}

#[test]
fn areas_survive_grid_refinement() {
    let circle = |o: &SolverOptions| area_of(BoundaryCurve::circle(1.0), o);
    assert!((circle(&opts(15, 16)) - circle(&opts(31, 32))).abs() < 1e-5);
    let ellipse = |o: &SolverOptions| area_of(BoundaryCurve::ellipse(1.3, 1.0), o);
    assert!((ellipse(&opts(23, 32)) - ellipse(&opts(47, 64))).abs() < 1e-5);
}

#[test]
fn translated_and_scaled_circles_are_geodesic() {
    // translations and dilations of the half-space are isometries of H³
    let o = opts(15, 16);
    for r in [0.5, 2.0] {
        assert!((area_of(BoundaryCurve::circle(r), &o) + 2.0 * PI).abs() < 1e-6);
    }
    let shifted = BoundaryCurve::new("shifted", |t| [0.2 + t.cos(), -0.1 + t.sin()]);
    assert!((area_of(shifted, &opts(23, 24)) + 2.0 * PI).abs() < 1e-5);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    #[test]
    fn area_ignores_the_parameterization(eps in -0.3f64..0.3, phase in 0.0f64..6.0) {
        let o = opts(19, 24);
        let base = BoundaryCurve::ellipse(1.25, 1.0);
        let moved = base.reparameterized(move |t| t + eps * (t + phase).sin());
        prop_assert!((area_of(base, &o) - area_of(moved, &o)).abs() < 1e-6);
    }
}
