//! Renormalized area of solved surfaces and the Gauss–Bonnet cross-check.
//!
//! With `c = cos ρ`, the area form is `Φ sin ρ / c² dρ ds` where
//! `Φ = e^{−2w} √det(F^*ḡ) / sin ρ` is smooth up to the boundary (`ḡ = x²g`).
//! Writing `G(c) = ∫Φ ds = G₀ + G₁c + O(c²)`, the Riesz finite part of
//! `∫ x^z dA` with `x = e^w c` is
//!
//! `∫₀¹ (G − G₀ − G₁c)/c² dc + FP∫₀¹(G₀c^{z−2} + G₁c^{z−1}) dc + ∫(w₀Φ₁ + w₁Φ₀) ds`,
//!
//! the last term coming from `e^{zw} = 1 + zw + …` against the simple pole.

use nalgebra::{DMatrix, Matrix2};
use std::f64::consts::PI;

use super::geometry::{inner, LocalGeometry};
use super::metric::{Compactified, DilatedMetric};
use super::{GraphSurface, SolverError};
use crate::phg::FloatSeries;
use crate::quad::gauss_legendre_on;
use crate::riesz::{rv_from_density, rv_truncation_fit, TruncationFit};

#[derive(Debug, Clone)]
pub struct AreaReport {
    /// Riesz finite part.
    pub value: f64,
    /// Coefficient of the simple pole: the `log δ` coefficient under dilation.
    pub simple_pole: f64,
    /// Leading divergence `∫Φ₀ ds` (the boundary length in `ω̂₀`).
    pub divergence: f64,
    pub spectral_tail: f64,
}

/// `Φ` on rows `0..=M` and the `w` jets used by the boundary correction.
fn density(surface: &GraphSurface, metric: &DilatedMetric) -> DMatrix<f64> {
    let grid = surface.grid();
    let m = grid.interior_rows();
    let jets = surface.jets();
    DMatrix::from_fn(m + 1, grid.ns, |i, k| {
        let (jet, _) = surface.embedding_at(&jets, i, k);
        let gbar = metric.compact_point(jet.f.as_slice()).g;
        let h = Matrix2::from_fn(|a, b| inner(&gbar, &jet.fa[a], &jet.fa[b]));
        h.determinant().sqrt() * (-2.0 * jets[0][i][k][0]).exp() / grid.rho[i].sin()
    })
}

/// Full doubled column of an even function of `ρ` given on rows `0..=M`.
fn even_column(n: usize, half: &[f64]) -> Vec<f64> {
    (0..=n)
        .map(|i| if i < half.len() { half[i] } else { half[n - i] })
        .collect()
}

/// Riesz-regularized area `FP_{z=0} ∫ x^z dA`.
pub fn renormalized_area(
    surface: &GraphSurface,
    metric: &DilatedMetric,
    resolution_limit: f64,
) -> Result<AreaReport, SolverError> {
    let tail = surface.spectral_tail();
    if tail > resolution_limit {
        return Err(SolverError::Resolution {
            tail,
            limit: resolution_limit,
        });
    }
    let grid = surface.grid();
    let m = grid.interior_rows();
    let phi = density(surface, metric);
    let rows: Vec<f64> = (0..=m)
        .map(|i| grid.integrate_s(phi.row(i).iter().copied().collect::<Vec<_>>().as_slice()))
        .collect();
    let (d1, d2) = grid.boundary_rho_derivatives(&even_column(grid.n, &rows));
    let (g0, g1, g2) = (rows[0], -d1, 0.5 * d2);

    let remainder: Vec<f64> = (0..=m)
        .map(|i| {
            if i == 0 {
                g2
            } else {
                let c = grid.rho[i].cos();
                (rows[i] - g0 - g1 * c) / (c * c)
            }
        })
        .collect();
    let smooth = grid.integrate_sine(&remainder);

    let singular = FloatSeries::scalar(-2, 0, &[(-2, 0, g0), (-1, 0, g1)])?;
    let fp = rv_from_density(&singular, 1.0)?;

    // ∫ (w₀Φ₁ + w₁Φ₀) ds
    let phi_full = grid.extend(&phi);
    let w_full = grid.extend(&surface.w);
    let corr: Vec<f64> = (0..grid.ns)
        .map(|k| {
            let (dphi, _) = grid.boundary_rho_derivatives(&grid.full_column(&phi_full, k));
            let (dw, _) = grid.boundary_rho_derivatives(&grid.full_column(&w_full, k));
            surface.w[(0, k)] * (-dphi) + (-dw) * phi[(0, k)]
        })
        .collect();
    let value = smooth + fp.value + grid.integrate_s(&corr);
    Ok(AreaReport {
        value,
        simple_pole: fp.simple_pole,
        divergence: g0,
        spectral_tail: tail,
    })
}

/// `Vol(Y ∩ {x > ε})` for each `ε`.
pub fn truncated_volumes(
    surface: &GraphSurface,
    metric: &DilatedMetric,
    eps: &[f64],
) -> Vec<(f64, f64)> {
    let grid = surface.grid();
    let n = grid.n;
    let phi = density(surface, metric);
    let phi_full = grid.extend(&phi);
    let w_full = grid.extend(&surface.w);
    let columns: Vec<(Vec<f64>, Vec<f64>, f64, f64)> = (0..grid.ns)
        .map(|k| {
            let pc = grid.full_column(&phi_full, k);
            let wc = grid.full_column(&w_full, k);
            let (d1, d2) = grid.boundary_rho_derivatives(&pc);
            let (p0, p1) = (pc[0], -d1);
            // smooth remainder (Φ − Φ₀ − Φ₁c)/c², with its boundary limit
            let rem: Vec<f64> = (0..=n)
                .map(|i| {
                    if i == 0 || i == n {
                        0.5 * d2
                    } else {
                        let c = grid.rho[i].cos();
                        (pc[i] - p0 - p1 * c) / (c * c)
                    }
                })
                .collect();
            (rem, wc, p0, p1)
        })
        .collect();
    let quad = gauss_legendre_on(48, 0.0, 1.0);
    eps.iter()
        .map(|&e| {
            let per_col: Vec<f64> = columns
                .iter()
                .map(|(rem, wc, p0, p1)| {
                    // ρ_ε solves e^{w} cos ρ = ε by bisection
                    let f = |rho: f64| grid.interpolate(wc, rho).exp() * rho.cos() - e;
                    let (mut lo, mut hi) = (0.0, PI / 2.0);
                    for _ in 0..80 {
                        let mid = 0.5 * (lo + hi);
                        if f(mid) > 0.0 {
                            lo = mid
                        } else {
                            hi = mid
                        }
                    }
                    let cut = 0.5 * (lo + hi);
                    let smooth: f64 = quad
                        .iter()
                        .map(|&(t, wq)| {
                            let rho = t * cut;
                            wq * cut * grid.interpolate(rem, rho) * rho.sin()
                        })
                        .sum();
                    let c = cut.cos();
                    smooth + p0 * (1.0 / c - 1.0) - p1 * c.ln()
                })
                .collect();
            (e, grid.integrate_s(&per_col))
        })
        .collect()
}

/// Renormalized area by fitting the `ε`-expansion of truncated volumes.
pub fn renormalized_area_truncation(
    surface: &GraphSurface,
    metric: &DilatedMetric,
    eps: &[f64],
) -> Result<TruncationFit, SolverError> {
    Ok(rv_truncation_fit(
        &truncated_volumes(surface, metric, eps),
        2,
    )?)
}

/// Both sides of the Gauss–Bonnet identity `A = −2πχ − ½∫|Â|²` for a disk
/// in a conformally flat ambient.
#[derive(Debug, Clone)]
pub struct GaussBonnet {
    pub lhs: f64,
    pub rhs: f64,
    /// `∫|Â|² dA` (conformally invariant, evaluated in `ḡ`).
    pub tracefree_energy: f64,
    pub defect: f64,
}

pub fn gauss_bonnet_check(
    surface: &GraphSurface,
    metric: &DilatedMetric,
) -> Result<GaussBonnet, SolverError> {
    if surface.n != 2 {
        return Err(SolverError::Unsupported(
            "Gauss–Bonnet check needs a hypersurface in a 3-dimensional ambient".into(),
        ));
    }
    let grid = surface.grid();
    let m = grid.interior_rows();
    let jets = surface.jets();
    let compact = Compactified(metric);
    let q = DMatrix::from_fn(m + 1, grid.ns, |i, k| {
        let (jet, radial) = surface.embedding_at(&jets, i, k);
        let geom = LocalGeometry::new(&compact, &jet);
        let nu = geom.unit_normal(&jet.fa, &radial);
        geom.tracefree_norm2(&nu) * geom.area_element() / grid.rho[i].sin()
    });
    let rows: Vec<f64> = (0..=m)
        .map(|i| grid.integrate_s(q.row(i).iter().copied().collect::<Vec<_>>().as_slice()))
        .collect();
    let energy = grid.integrate_sine(&rows);
    let lhs = renormalized_area(surface, metric, f64::INFINITY)?.value;
    let rhs = -2.0 * PI - 0.5 * energy;
    Ok(GaussBonnet {
        lhs,
        rhs,
        tracefree_energy: energy,
        defect: lhs - rhs,
    })
}
