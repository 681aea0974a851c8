//! Minimal surfaces asymptotic to a boundary curve in an asymptotically
//! hyperbolic half-space, and their renormalized areas.
//!
//! The surface is a radial log-graph over the unit hemisphere,
//! `F(ρ, s) = e^{w(ρ,s)}(cos ρ, sin ρ cos s, sin ρ sin s) + Σ_α z_α(ρ, s) e_α`,
//! with `ρ = π/2` on the boundary. For codimension one there is no `z`. The
//! fields are discretized on [`grid::SpectralGrid`] and the equation
//! `H⃗ = 0` is solved by Newton's method or by the fixed-point iteration
//! `u ↦ u − J₀⁻¹ R(u)` with the Jacobian `J₀` of the unperturbed problem.

pub mod area;
pub mod curve;
pub mod geometry;
pub mod grid;
pub mod metric;

use nalgebra::{DMatrix, DVector};
use std::sync::Arc;
use thiserror::Error;

pub use area::{gauss_bonnet_check, renormalized_area, AreaReport, GaussBonnet};
pub use curve::BoundaryCurve;
pub use geometry::{LocalGeometry, SurfaceJet};
pub use grid::SpectralGrid;
pub use metric::{Ambient, DilatedMetric, MetricJet, MetricPoint, OmegaTerm};

use geometry::inner;
use grid::{FieldJet, JET_LEN};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid metric jet: {0}")]
    InvalidJet(String),
    #[error("dilation δ = {delta} leaves the chart (need 100·δ < validity radius {radius})")]
    ChartOverflow { delta: f64, radius: f64 },
    #[error("boundary curve: {0}")]
    Curve(String),
    #[error("no convergence after {iterations} iterations (|H| = {residual:.3e}, contraction ≈ {contraction:.3})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        contraction: f64,
    },
    #[error("Jacobian is singular: the base surface is degenerate")]
    Degenerate,
    #[error("grid under-resolves the surface (spectral tail {tail:.3e} > {limit:.1e})")]
    Resolution { tail: f64, limit: f64 },
    #[error("{0}")]
    Unsupported(String),
    #[error(transparent)]
    Riesz(#[from] crate::riesz::RieszError),
    #[error(transparent)]
    Series(#[from] crate::phg::PhgError),
}

/// Iteration used by [`solve_minimal`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Newton's method with a fresh Jacobian every step.
    Newton,
    /// `u ↦ u − J₀⁻¹R(u)` with `J₀` frozen at the unperturbed problem.
    FixedPoint,
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Chebyshev degree in `r` (odd).
    pub n_cheb: usize,
    /// Fourier points in `s` (even).
    pub n_fourier: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub strategy: Strategy,
    /// Also measure the Lipschitz factor of the fixed-point map at the solution.
    pub measure_contraction: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            n_cheb: 23,
            n_fourier: 24,
            tol: 1e-10,
            max_iter: 60,
            strategy: Strategy::Newton,
            measure_contraction: false,
        }
    }
}

/// Grid together with the linear maps from nodal unknowns to jet components.
#[derive(Debug)]
pub struct Discretization {
    pub grid: SpectralGrid,
    /// `ops[c][(point, unknown)]`: component `c` of the jet at interior point
    /// `point` per unit value at interior node `unknown`.
    ops: Vec<DMatrix<f64>>,
}

impl Discretization {
    pub fn new(n_cheb: usize, n_fourier: usize) -> Self {
        let grid = SpectralGrid::new(n_cheb, n_fourier);
        let m = grid.interior_rows();
        let ns = grid.ns;
        let np = m * ns;
        let mut ops = vec![DMatrix::zeros(np, np); JET_LEN];
        let mut half = DMatrix::zeros(m + 1, ns);
        for u in 0..np {
            let (i, k) = (u / ns + 1, u % ns);
            half[(i, k)] = 1.0;
            let jets = grid.jets(&grid.extend(&half));
            half[(i, k)] = 0.0;
            for p in 0..np {
                let jet = jets[p / ns + 1][p % ns];
                for (c, op) in ops.iter_mut().enumerate() {
                    op[(p, u)] = jet[c];
                }
            }
        }
        Discretization { grid, ops }
    }

    pub fn points(&self) -> usize {
        self.grid.interior_rows() * self.grid.ns
    }
}

/// A converged (or candidate) surface on the grid.
#[derive(Debug, Clone)]
pub struct GraphSurface {
    pub disc: Arc<Discretization>,
    /// Boundary dimension of the ambient chart.
    pub n: usize,
    /// `w` on rows `0..=M` (row 0 is the boundary).
    pub w: DMatrix<f64>,
    /// Normal displacements `z_α` for `α = 3..=n`.
    pub z: Vec<DMatrix<f64>>,
    pub iterations: usize,
    pub max_mean_curvature: f64,
    /// Lipschitz factor of the fixed-point map at the solution, when measured.
    pub contraction: Option<f64>,
    /// Observed ratios of successive update norms.
    pub step_ratios: Vec<f64>,
}

/// The Dirichlet problem: a metric in blown-up coordinates and a boundary curve
/// in the `(ŷ₁, ŷ₂)` plane.
#[derive(Debug, Clone)]
pub struct MinimalProblem {
    pub metric: DilatedMetric,
    pub curve: BoundaryCurve,
}

fn embedding_jet(n: usize, rho: f64, s: f64, fields: &[FieldJet]) -> (SurfaceJet, DVector<f64>) {
    let d = n + 1;
    let (sr, cr, ss, cs) = (rho.sin(), rho.cos(), s.sin(), s.cos());
    let vec3 = |a: f64, b: f64, c: f64| {
        let mut v = DVector::zeros(d);
        v[0] = a;
        v[1] = b;
        v[2] = c;
        v
    };
    let p = vec3(cr, sr * cs, sr * ss);
    let p_r = vec3(-sr, cr * cs, cr * ss);
    let p_s = vec3(0.0, -sr * ss, sr * cs);
    let p_rs = vec3(0.0, -cr * ss, cr * cs);
    let p_ss = vec3(0.0, -sr * cs, -sr * ss);
    let [w, wr, ws, wrr, wrs, wss] = fields[0];
    let e = w.exp();
    let mut f = &p * e;
    let mut fr = (&p * wr + &p_r) * e;
    let mut fs = (&p * ws + &p_s) * e;
    let mut frr = (&p * (wrr + wr * wr) + &p_r * (2.0 * wr) - &p) * e;
    let mut frs = (&p * (wrs + wr * ws) + &p_s * wr + &p_r * ws + &p_rs) * e;
    let mut fss = (&p * (wss + ws * ws) + &p_s * (2.0 * ws) + &p_ss) * e;
    for (alpha, zj) in fields[1..].iter().enumerate() {
        let idx = 3 + alpha;
        f[idx] += zj[0];
        fr[idx] += zj[1];
        fs[idx] += zj[2];
        frr[idx] += zj[3];
        frs[idx] += zj[4];
        fss[idx] += zj[5];
    }
    let radial = &p * e;
    (
        SurfaceJet {
            f,
            fa: [fr, fs],
            fab: [[frr, frs.clone()], [frs, fss]],
        },
        radial,
    )
}

/// Residuals `x·g(H⃗, ∂_wF)`, `x·g(H⃗, e_α)` and the scalar mean curvature.
fn point_residual(
    amb: &dyn Ambient,
    n: usize,
    rho: f64,
    s: f64,
    fields: &[FieldJet],
) -> (Vec<f64>, f64) {
    let (jet, radial) = embedding_jet(n, rho, s, fields);
    let geom = LocalGeometry::new(amb, &jet);
    let x = jet.f[0];
    let g = &geom.metric.g;
    let mut out = vec![x * inner(g, &geom.mean, &radial)];
    for alpha in 0..n - 2 {
        let mut e = DVector::zeros(n + 1);
        e[3 + alpha] = 1.0;
        out.push(x * inner(g, &geom.mean, &e));
    }
    let h = if n == 2 {
        let nu = geom.unit_normal(&jet.fa, &radial);
        inner(g, &geom.mean, &nu)
    } else {
        inner(g, &geom.mean, &geom.mean).sqrt()
    };
    (out, h)
}

impl GraphSurface {
    pub fn grid(&self) -> &SpectralGrid {
        &self.disc.grid
    }

    fn fields(&self) -> Vec<&DMatrix<f64>> {
        std::iter::once(&self.w).chain(self.z.iter()).collect()
    }

    /// Field jets `[field][row][col]` on rows `0..=M`.
    pub fn jets(&self) -> Vec<Vec<Vec<FieldJet>>> {
        let grid = self.grid();
        self.fields()
            .into_iter()
            .map(|f| grid.jets(&grid.extend(f)))
            .collect()
    }

    /// Embedding jet and radial direction at node `(i, k)`.
    pub fn embedding_at(
        &self,
        jets: &[Vec<Vec<FieldJet>>],
        i: usize,
        k: usize,
    ) -> (SurfaceJet, DVector<f64>) {
        let grid = self.grid();
        let fj: Vec<FieldJet> = jets.iter().map(|f| f[i][k]).collect();
        embedding_jet(self.n, grid.rho[i], grid.s[k], &fj)
    }

    /// The hemisphere `w = 0` over the unit circle.
    pub fn hemisphere(disc: Arc<Discretization>, n: usize) -> Self {
        let m = disc.grid.interior_rows();
        let ns = disc.grid.ns;
        GraphSurface {
            disc,
            n,
            w: DMatrix::zeros(m + 1, ns),
            z: vec![DMatrix::zeros(m + 1, ns); n - 2],
            iterations: 0,
            max_mean_curvature: 0.0,
            contraction: None,
            step_ratios: Vec::new(),
        }
    }

    /// A surface given by an explicit `w(ρ, s)` (no normal displacement).
    pub fn from_radial(disc: Arc<Discretization>, n: usize, w: impl Fn(f64, f64) -> f64) -> Self {
        let mut surf = Self::hemisphere(disc, n);
        let grid = &surf.disc.grid;
        let m = grid.interior_rows();
        surf.w = DMatrix::from_fn(m + 1, grid.ns, |i, k| w(grid.rho[i], grid.s[k]));
        surf
    }

    /// Spectral tail of the fields: the resolution diagnostic.
    pub fn spectral_tail(&self) -> f64 {
        let grid = self.grid();
        self.fields()
            .into_iter()
            .map(|f| grid.spectral_tail(&grid.extend(f)))
            .fold(0.0, f64::max)
    }

    /// Coefficients `w_j(s)`, `j = 0..=3`, of `w = Σ w_j c^j` in `c = cos ρ`
    /// at the boundary, for every column.
    pub fn boundary_expansion(&self) -> Vec<[f64; 4]> {
        let grid = self.grid();
        let full = grid.extend(&self.w);
        (0..grid.ns)
            .map(|k| {
                let col = grid.full_column(&full, k);
                let [d1, d2, d3] = grid.boundary_rho_derivatives3(&col);
                // ρ = π/2 − θ, c = sin θ
                let (a1, a2, a3) = (-d1, d2 / 2.0, -d3 / 6.0);
                [col[0], a1, a2, a3 + a1 / 6.0]
            })
            .collect()
    }

    /// Largest odd coefficient `|w₁|` below the surface dimension, relative to
    /// the size of the interior deformation.
    pub fn odd_coefficient_ratio(&self) -> (f64, f64) {
        let coeffs = self.boundary_expansion();
        let odd = coeffs.iter().map(|c| c[1].abs()).fold(0.0, f64::max);
        let m = self.grid().interior_rows();
        let size = (0..=m)
            .flat_map(|i| (0..self.grid().ns).map(move |k| (i, k)))
            .map(|(i, k)| (self.w[(i, k)] - self.w[(0, k)]).abs())
            .fold(0.0, f64::max);
        (odd, size)
    }

    /// CSV rows `s,rho,x,w` on rows `0..=M`.
    pub fn to_csv(&self) -> String {
        let grid = self.grid();
        let mut out = String::from("s,rho,x,w\n");
        for i in 0..=grid.interior_rows() {
            for k in 0..grid.ns {
                let w = self.w[(i, k)];
                out.push_str(&format!(
                    "{:.12},{:.12},{:.12e},{:.12e}\n",
                    grid.s[k],
                    grid.rho[i],
                    w.exp() * grid.rho[i].cos(),
                    w
                ));
            }
        }
        out
    }

    /// Boundary expansion coefficients as JSON.
    pub fn expansion_json(&self) -> serde_json::Value {
        let grid = self.grid();
        let coeffs = self.boundary_expansion();
        serde_json::json!({
            "s": grid.s,
            "w0": coeffs.iter().map(|c| c[0]).collect::<Vec<_>>(),
            "w1": coeffs.iter().map(|c| c[1]).collect::<Vec<_>>(),
            "w2": coeffs.iter().map(|c| c[2]).collect::<Vec<_>>(),
            "w3": coeffs.iter().map(|c| c[3]).collect::<Vec<_>>(),
            "max_mean_curvature": self.max_mean_curvature,
            "iterations": self.iterations,
            "contraction": self.contraction,
        })
    }
}

/// Scalar mean curvature on the interior rows `1..=M`: `g(H⃗, ν)` for
/// hypersurfaces (ν the normal on the side of `∂_w F`), `|H⃗|` otherwise.
pub fn mean_curvature(surface: &GraphSurface, amb: &dyn Ambient) -> DMatrix<f64> {
    let grid = surface.grid();
    let m = grid.interior_rows();
    let jets = surface.jets();
    DMatrix::from_fn(m, grid.ns, |i, k| {
        let fj: Vec<FieldJet> = jets.iter().map(|f| f[i + 1][k]).collect();
        point_residual(amb, surface.n, grid.rho[i + 1], grid.s[k], &fj).1
    })
}

/// The metric linearization of the mean curvature of a hypersurface in the
/// direction `ġ`, on the interior rows.
pub fn l2_operator(
    direction: &dyn Ambient,
    surface: &GraphSurface,
    amb: &dyn Ambient,
) -> Result<DMatrix<f64>, SolverError> {
    if surface.n != 2 {
        return Err(SolverError::Unsupported(
            "metric linearization is implemented for hypersurfaces".into(),
        ));
    }
    let grid = surface.grid();
    let m = grid.interior_rows();
    let jets = surface.jets();
    Ok(DMatrix::from_fn(m, grid.ns, |i, k| {
        let (jet, radial) = surface.embedding_at(&jets, i + 1, k);
        let geom = LocalGeometry::new(amb, &jet);
        let nu = geom.unit_normal(&jet.fa, &radial);
        let dot = direction.point(jet.f.as_slice());
        geom.metric_linearization(&jet.fa, &nu, &dot)
    }))
}

struct Assembly<'a> {
    disc: &'a Discretization,
    amb: &'a dyn Ambient,
    n: usize,
    boundary: Vec<f64>,
}

impl Assembly<'_> {
    fn fields(&self) -> usize {
        self.n - 1
    }

    fn unknowns(&self) -> usize {
        self.fields() * self.disc.points()
    }

    fn surface(&self, u: &DVector<f64>, template: &GraphSurface) -> GraphSurface {
        let grid = &self.disc.grid;
        let (m, ns) = (grid.interior_rows(), grid.ns);
        let np = m * ns;
        let mut surf = template.clone();
        for (f, field) in std::iter::once(&mut surf.w)
            .chain(surf.z.iter_mut())
            .enumerate()
        {
            for p in 0..np {
                field[(p / ns + 1, p % ns)] = u[f * np + p];
            }
        }
        for k in 0..ns {
            surf.w[(0, k)] = self.boundary[k];
            for z in surf.z.iter_mut() {
                z[(0, k)] = 0.0;
            }
        }
        surf
    }

    fn pack(&self, surf: &GraphSurface) -> DVector<f64> {
        let grid = &self.disc.grid;
        let ns = grid.ns;
        let np = self.disc.points();
        let mut u = DVector::zeros(self.unknowns());
        for (f, field) in std::iter::once(&surf.w).chain(surf.z.iter()).enumerate() {
            for p in 0..np {
                u[f * np + p] = field[(p / ns + 1, p % ns)];
            }
        }
        u
    }

    /// Residual vector and max |H|.
    fn residual(&self, surf: &GraphSurface) -> (DVector<f64>, f64) {
        let grid = &self.disc.grid;
        let ns = grid.ns;
        let np = self.disc.points();
        let jets = surf.jets();
        let mut r = DVector::zeros(self.unknowns());
        let mut hmax: f64 = 0.0;
        for p in 0..np {
            let (i, k) = (p / ns + 1, p % ns);
            let fj: Vec<FieldJet> = jets.iter().map(|f| f[i][k]).collect();
            let (res, h) = point_residual(self.amb, self.n, grid.rho[i], grid.s[k], &fj);
            for (e, v) in res.iter().enumerate() {
                r[e * np + p] = *v;
            }
            hmax = hmax.max(h.abs());
        }
        (r, hmax)
    }

    /// Jacobian by the chain rule through pointwise jet sensitivities.
    fn jacobian(&self, surf: &GraphSurface) -> DMatrix<f64> {
        let grid = &self.disc.grid;
        let ns = grid.ns;
        let np = self.disc.points();
        let nf = self.fields();
        let jets = surf.jets();
        let mut jac = DMatrix::zeros(nf * np, nf * np);
        let h = 1e-6;
        for p in 0..np {
            let (i, k) = (p / ns + 1, p % ns);
            let base: Vec<FieldJet> = jets.iter().map(|f| f[i][k]).collect();
            for f in 0..nf {
                for c in 0..JET_LEN {
                    let mut plus = base.clone();
                    let mut minus = base.clone();
                    plus[f][c] += h;
                    minus[f][c] -= h;
                    let (rp, _) = point_residual(self.amb, self.n, grid.rho[i], grid.s[k], &plus);
                    let (rm, _) = point_residual(self.amb, self.n, grid.rho[i], grid.s[k], &minus);
                    let op = &self.disc.ops[c];
                    for e in 0..nf {
                        let sens = (rp[e] - rm[e]) / (2.0 * h);
                        if sens == 0.0 {
                            continue;
                        }
                        for u in 0..np {
                            jac[(e * np + p, f * np + u)] += sens * op[(p, u)];
                        }
                    }
                }
            }
        }
        jac
    }
}

/// Smooth extension of boundary values `b(s)` into the disk:
/// `Σ b̂_j sin^{|j|}ρ e^{ijs}`.
fn harmonic_extension(grid: &SpectralGrid, boundary: &[f64]) -> DMatrix<f64> {
    let ns = grid.ns;
    let m = grid.interior_rows();
    let mut out = DMatrix::zeros(m + 1, ns);
    for j in 0..=ns / 2 {
        let (mut a, mut b) = (0.0, 0.0);
        for (k, v) in boundary.iter().enumerate() {
            a += v * (j as f64 * grid.s[k]).cos();
            b += v * (j as f64 * grid.s[k]).sin();
        }
        let norm = if j == 0 || j == ns / 2 {
            1.0 / ns as f64
        } else {
            2.0 / ns as f64
        };
        for i in 0..=m {
            let radial = grid.rho[i].sin().powi(j as i32);
            for k in 0..ns {
                out[(i, k)] += norm
                    * radial
                    * (a * (j as f64 * grid.s[k]).cos() + b * (j as f64 * grid.s[k]).sin());
            }
        }
    }
    out
}

/// Solves for the minimal surface of `problem` on the given discretization,
/// starting from `initial` when supplied.
pub fn solve_minimal_on(
    problem: &MinimalProblem,
    disc: Arc<Discretization>,
    opts: &SolverOptions,
    initial: Option<&GraphSurface>,
) -> Result<GraphSurface, SolverError> {
    let n = problem.metric.n;
    if n < 2 {
        return Err(SolverError::Unsupported(
            "boundary dimension must be at least 2".into(),
        ));
    }
    let grid = &disc.grid;
    let boundary = problem.curve.log_radius(&grid.s)?;
    let asm = Assembly {
        disc: &disc,
        amb: &problem.metric,
        n,
        boundary: boundary.clone(),
    };

    let mut surf = match initial {
        Some(s) => asm.surface(&asm.pack(s), s),
        None => {
            let mut s = GraphSurface::hemisphere(disc.clone(), n);
            s.w = harmonic_extension(grid, &boundary);
            s
        }
    };

    // frozen Jacobian of the unperturbed problem
    let frozen = match opts.strategy {
        Strategy::FixedPoint => {
            let base = problem.metric.at_delta(0.0);
            let asm0 = Assembly {
                disc: &disc,
                amb: &base,
                n,
                boundary: boundary.clone(),
            };
            let mut start = GraphSurface::hemisphere(disc.clone(), n);
            start.w = harmonic_extension(grid, &boundary);
            Some(asm0.jacobian(&start).lu())
        }
        Strategy::Newton => None,
    };

    let mut u = asm.pack(&surf);
    let mut prev_step: Option<f64> = None;
    let mut ratios = Vec::new();
    let mut growth = 0;
    let (mut res, mut hmax) = asm.residual(&surf);
    for it in 0..=opts.max_iter {
        if !hmax.is_finite() {
            return Err(SolverError::NoConvergence {
                iterations: it,
                residual: hmax,
                contraction: f64::INFINITY,
            });
        }
        surf.max_mean_curvature = hmax;
        surf.iterations = it;
        if hmax < opts.tol {
            surf.step_ratios = ratios;
            if opts.measure_contraction {
                surf.contraction = Some(contraction_factor(problem, &surf)?);
            }
            return Ok(surf);
        }
        if it == opts.max_iter {
            break;
        }
        match &frozen {
            Some(lu) => {
                let step = lu.solve(&res).ok_or(SolverError::Degenerate)?;
                let size = step.amax();
                if let Some(prev) = prev_step {
                    let ratio = size / prev;
                    ratios.push(ratio);
                    growth = if ratio >= 1.0 { growth + 1 } else { 0 };
                    if growth >= 3 || size > 10.0 {
                        return Err(SolverError::NoConvergence {
                            iterations: it,
                            residual: hmax,
                            contraction: ratio,
                        });
                    }
                }
                prev_step = Some(size);
                u -= step;
                surf = asm.surface(&u, &surf);
                (res, hmax) = asm.residual(&surf);
            }
            None => {
                // damped Newton: halve the step until the residual decreases
                let step = asm
                    .jacobian(&surf)
                    .lu()
                    .solve(&res)
                    .ok_or(SolverError::Degenerate)?;
                let size = step.amax();
                if let Some(prev) = prev_step {
                    ratios.push(size / prev);
                }
                prev_step = Some(size);
                let mut lambda = 1.0;
                loop {
                    let trial_u = &u - &step * lambda;
                    let trial = asm.surface(&trial_u, &surf);
                    let (trial_res, trial_h) = asm.residual(&trial);
                    if trial_h.is_finite() && trial_h < hmax {
                        u = trial_u;
                        surf = trial;
                        (res, hmax) = (trial_res, trial_h);
                        break;
                    }
                    lambda *= 0.5;
                    if lambda < 1.0 / 1024.0 {
                        return Err(SolverError::NoConvergence {
                            iterations: it,
                            residual: hmax,
                            contraction: size,
                        });
                    }
                }
            }
        }
    }
    Err(SolverError::NoConvergence {
        iterations: opts.max_iter,
        residual: surf.max_mean_curvature,
        contraction: ratios.last().copied().unwrap_or(f64::NAN),
    })
}

/// [`solve_minimal_on`] with a fresh discretization from the options.
pub fn solve_minimal(
    problem: &MinimalProblem,
    opts: &SolverOptions,
) -> Result<GraphSurface, SolverError> {
    let disc = Arc::new(Discretization::new(opts.n_cheb, opts.n_fourier));
    solve_minimal_on(problem, disc, opts, None)
}

/// Operator 2-norm of `I − J₀⁻¹J(u*)`: the Lipschitz factor of the
/// fixed-point map at the solution.
pub fn contraction_factor(
    problem: &MinimalProblem,
    surface: &GraphSurface,
) -> Result<f64, SolverError> {
    let disc = surface.disc.clone();
    let n = problem.metric.n;
    let boundary = problem.curve.log_radius(&disc.grid.s)?;
    let base = problem.metric.at_delta(0.0);
    let asm0 = Assembly {
        disc: &disc,
        amb: &base,
        n,
        boundary: boundary.clone(),
    };
    let mut start = GraphSurface::hemisphere(disc.clone(), n);
    start.w = harmonic_extension(&disc.grid, &boundary);
    let j0 = asm0.jacobian(&start);
    let asm = Assembly {
        disc: &disc,
        amb: &problem.metric,
        n,
        boundary,
    };
    let j = asm.jacobian(surface);
    let lu = j0.lu();
    let jinv_j = lu.solve(&j).ok_or(SolverError::Degenerate)?;
    let k = DMatrix::identity(j.nrows(), j.ncols()) - jinv_j;
    Ok(spectral_norm(&k))
}

/// Largest singular value by power iteration on `KᵀK`.
fn spectral_norm(k: &DMatrix<f64>) -> f64 {
    let mut v = DVector::from_fn(k.ncols(), |i, _| 1.0 + (i as f64 * 0.37).sin());
    v /= v.norm();
    let mut sigma = 0.0;
    for _ in 0..200 {
        let kv = k * &v;
        let ktkv = k.transpose() * &kv;
        let nrm = ktkv.norm();
        if nrm == 0.0 {
            return 0.0;
        }
        let next = kv.norm();
        v = ktkv / nrm;
        if (next - sigma).abs() <= 1e-10 * next {
            return next;
        }
        sigma = next;
    }
    sigma
}

/// Radial function of the cap of the sphere with centre `(−ηR, 0)` and radius
/// `R` (the shifted hemisphere), in the hemisphere's polar coordinates.
pub fn shifted_hemisphere_w(radius: f64, eta: f64) -> impl Fn(f64, f64) -> f64 {
    move |rho: f64, _s: f64| {
        let c = rho.cos();
        let t = -eta * radius * c
            + (eta * eta * radius * radius * c * c + radius * radius * (1.0 - eta * eta)).sqrt();
        t.ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::metric::Perturbed;

    fn disc() -> Arc<Discretization> {
        Arc::new(Discretization::new(15, 16))
    }

    #[test]
    fn hemisphere_is_minimal() {
        let d = disc();
        let hyp = DilatedMetric::hyperbolic(2);
        let s = GraphSurface::hemisphere(d.clone(), 2);
        assert!(mean_curvature(&s, &hyp).amax() < 1e-12);
        let hyp3 = DilatedMetric::hyperbolic(3);
        let s3 = GraphSurface::hemisphere(d, 3);
        assert!(mean_curvature(&s3, &hyp3).amax() < 1e-12);
    }

    #[test]
    fn shifted_hemisphere_has_constant_mean_curvature() {
        let d = disc();
        let hyp = DilatedMetric::hyperbolic(2);
        let eta = 0.3;
        let s = GraphSurface::from_radial(d, 2, shifted_hemisphere_w(1.0, eta));
        let h = mean_curvature(&s, &hyp);
        // unnormalized trace: H = 2η
        assert!(
            h.iter().all(|v| (v - 2.0 * eta).abs() < 1e-7),
            "{}",
            h.max()
        );
    }

    #[test]
    fn metric_linearization_matches_finite_differences() {
        let d = disc();
        let hyp = DilatedMetric::hyperbolic(2);
        let surf = GraphSurface::hemisphere(d, 2);
        let w2 = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, -0.5]);
        let grad = [
            DMatrix::from_row_slice(2, 2, &[0.2, 0.1, 0.1, 0.0]),
            DMatrix::from_row_slice(2, 2, &[0.0, 0.4, 0.4, 0.3]),
        ];
        let dir_jet = MetricJet::empty(2).with_term(2, &w2).with_gradient_term(
            0,
            &DMatrix::zeros(2, 2),
            &grad,
        );
        let dir = DilatedMetric::direction(&dir_jet, &[0.0, 0.0], 1.0, &DMatrix::identity(2, 2));
        let formula = l2_operator(&dir, &surf, &hyp).unwrap();
        let fd = |eps: f64| {
            let pert = Perturbed {
                base: &hyp,
                direction: &dir,
                eps,
            };
            (mean_curvature(&surf, &pert) - mean_curvature(&surf, &hyp)) / eps
        };
        let e4 = (fd(1e-4) - &formula).amax();
        let e5 = (fd(1e-5) - &formula).amax();
        assert!(e5 < 1e-4, "{e4} {e5}");
        assert!(
            e4 / e5 > 5.0 && e4 / e5 < 15.0,
            "Richardson ratio {}",
            e4 / e5
        );
        // conformal direction ġ = g
        let conf = l2_operator(&hyp, &surf, &hyp).unwrap();
        let pert = |eps: f64| Perturbed {
            base: &hyp,
            direction: &hyp,
            eps,
        };
        let fdc = (mean_curvature(&surf, &pert(1e-6)) - mean_curvature(&surf, &pert(-1e-6))) / 2e-6;
        assert!((fdc - conf).amax() < 1e-5);
    }

    #[test]
    fn newton_recovers_hemisphere_and_solves_ellipse() {
        let opts = SolverOptions {
            n_cheb: 15,
            n_fourier: 16,
            ..Default::default()
        };
        let circle = MinimalProblem {
            metric: DilatedMetric::hyperbolic(2),
            curve: BoundaryCurve::circle(1.0),
        };
        let s = solve_minimal(&circle, &opts).unwrap();
        assert!(s.w.amax() < 1e-12 && s.iterations == 0);
        let ellipse = MinimalProblem {
            metric: DilatedMetric::hyperbolic(2),
            curve: BoundaryCurve::ellipse(1.2, 1.0),
        };
        let s = solve_minimal(&ellipse, &opts).unwrap();
        assert!(s.max_mean_curvature < 1e-10);
        assert!(s.iterations < 10);
    }
}
