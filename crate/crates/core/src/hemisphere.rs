//! The geodesic hemisphere `HS^m = {x² + |y|² = 1}` in the half-space model:
//! induced metric, area density, the radial Jacobi equation and its explicit
//! `k = 2` solution, and the sphere integrals that enter coefficient recovery.

use nalgebra::DMatrix;
use num_traits::{One, ToPrimitive, Zero};
use std::f64::consts::PI;
use thiserror::Error;

use crate::hypgeom::{c2_constant, jacobi_numerator, terminating_2f1, TerminatingHyp};
use crate::phg::{rat, ExactSeries, Rational};
use crate::quad::{sphere_integrate, sphere_integrate_rqmc, sphere_volume};
use crate::riesz::fp_series_integral_exact;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HemisphereError {
    #[error("x = {0} is outside (0, 1)")]
    Domain(f64),
    #[error("matrix is not symmetric (defect {0:.3e})")]
    Asymmetric(f64),
    #[error("matrix has dimension {got}, expected {want}")]
    Dimension { got: usize, want: usize },
    #[error("integrity check failed: {0}")]
    Integrity(String),
}

/// Polar chart `(x, θ) ↦ (x, √(1−x²) F(θ))` of `HS^m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HemisphereChart {
    pub m: usize,
}

impl HemisphereChart {
    pub fn new(m: usize) -> Self {
        assert!(m >= 2, "surface dimension must be at least 2");
        HemisphereChart { m }
    }

    /// Embedding in half-space coordinates `(x, y₁, …, y_m)`.
    pub fn embed(&self, x: f64, angles: &[f64]) -> Vec<f64> {
        assert_eq!(angles.len(), self.m - 1);
        let r = (1.0 - x * x).sqrt();
        let mut p = vec![x];
        p.extend(crate::quad::sphere_point(angles).into_iter().map(|v| r * v));
        p
    }

    pub fn h_xx(&self, x: f64) -> f64 {
        1.0 / ((1.0 - x * x) * x * x)
    }

    /// Factor multiplying the round metric of `S^{m−1}` in the angular block.
    pub fn angular_scale(&self, x: f64) -> f64 {
        (1.0 - x * x) / (x * x)
    }

    /// Induced hyperbolic metric in the chart, by differentiating the embedding.
    pub fn induced_metric_numeric(&self, x: f64, angles: &[f64], h: f64) -> DMatrix<f64> {
        let d = self.m;
        let mut tangents: Vec<Vec<f64>> = Vec::with_capacity(d);
        let shifted = |dx: f64, j: Option<usize>, s: f64| {
            let mut a = angles.to_vec();
            if let Some(j) = j {
                a[j] += s;
            }
            self.embed(x + dx, &a)
        };
        let diff = |p: Vec<f64>, q: Vec<f64>| {
            p.iter()
                .zip(&q)
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect::<Vec<_>>()
        };
        tangents.push(diff(shifted(h, None, 0.0), shifted(-h, None, 0.0)));
        for j in 0..d - 1 {
            tangents.push(diff(shifted(0.0, Some(j), h), shifted(0.0, Some(j), -h)));
        }
        DMatrix::from_fn(d, d, |a, b| {
            tangents[a]
                .iter()
                .zip(&tangents[b])
                .map(|(u, v)| u * v)
                .sum::<f64>()
                / (x * x)
        })
    }
}

/// Area density of `HS^m`: `(1−x²)^{(m−2)/2} / x^m`, multiplying `dx dA_{S^{m−1}}`.
pub fn hs_area_density(m: usize, x: f64) -> Result<f64, HemisphereError> {
    if !(x > 0.0 && x <= 1.0) {
        return Err(HemisphereError::Domain(x));
    }
    Ok((1.0 - x * x).powf((m as f64 - 2.0) / 2.0) / x.powi(m as i32))
}

/// Radial function with its first two derivatives at a point.
pub type RadialJet = (f64, f64, f64);

/// `L(B) − k(m+k−2) x²/(1−x²) B` where
/// `L = (x∂)² − (m−1)x∂ − m − 2x³∂ − x⁴∂²` is the radial part of `Δ_Y − m`.
pub fn jacobi_radial_residual(
    m: usize,
    k_mode: usize,
    b: &dyn Fn(f64) -> RadialJet,
    x: f64,
) -> f64 {
    let (v, d1, d2) = b(x);
    let m = m as f64;
    let k = k_mode as f64;
    let x_dx_sq = x * x * d2 + x * d1;
    let l = x_dx_sq - (m - 1.0) * x * d1 - m * v - 2.0 * x.powi(3) * d1 - x.powi(4) * d2;
    l - k * (m + k - 2.0) * x * x / (1.0 - x * x) * v
}

fn poly_derivative(p: &[Rational]) -> Vec<Rational> {
    if p.len() <= 1 {
        return vec![Rational::zero()];
    }
    p.iter()
        .enumerate()
        .skip(1)
        .map(|(i, c)| c.clone() * rat(i as i64, 1))
        .collect()
}

fn poly_from_series(s: &ExactSeries) -> Vec<Rational> {
    let deg = s.terms().map(|(k, _, _)| k).max().unwrap_or(0) as usize;
    let mut p = vec![Rational::zero(); deg + 1];
    for (k, _, c) in s.terms() {
        p[k as usize] = c.as_scalar().unwrap().clone();
    }
    p
}

fn poly_to_series(p: &[Rational], trunc: i64) -> ExactSeries {
    let terms: Vec<(i64, u32, Rational)> = p
        .iter()
        .enumerate()
        .map(|(i, c)| (i as i64, 0, c.clone()))
        .collect();
    ExactSeries::scalar(0, trunc, &terms).unwrap()
}

fn poly_eval(p: &[Rational], x: f64) -> f64 {
    p.iter()
        .rev()
        .fold(0.0, |acc, c| acc * x + c.to_f64().unwrap())
}

/// Divides `p` by `(1 − x)`; returns `None` if the division is not exact.
fn divide_one_minus_x(p: &[Rational]) -> Option<Vec<Rational>> {
    // p(x) = (1 − x) q(x): q_i = Σ_{j ≤ i} p_j
    let mut q = Vec::with_capacity(p.len().saturating_sub(1));
    let mut acc = Rational::zero();
    for c in &p[..p.len() - 1] {
        acc += c.clone();
        q.push(acc.clone());
    }
    acc += p[p.len() - 1].clone();
    acc.is_zero().then_some(q)
}

/// The `k = 2` Jacobi field on `HS^{2m*}`:
/// `B̄(x) = [₂F₁(−m*, −1/2−m*; 1/2−m*; x²) + c₂ x^{2m*+1}] / (1−x²)^{m*}`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobiField {
    pub m_star: u32,
    pub hypergeometric: TerminatingHyp,
    pub c2: Rational,
    /// Numerator polynomial, coefficient of `x^i` at index `i`.
    pub numerator: Vec<Rational>,
    /// Cancelled form `B̄ = reduced / (1+x)^{m*}` with `reduced = N/(1−x)^{m*}`.
    pub reduced: Vec<Rational>,
}

impl JacobiField {
    fn reduced_parts(&self) -> (Vec<Rational>, Vec<Rational>) {
        let mut den = vec![Rational::one()];
        for _ in 0..self.m_star {
            let mut next = vec![Rational::zero(); den.len() + 1];
            for (i, c) in den.iter().enumerate() {
                next[i] += c.clone();
                next[i + 1] += c.clone();
            }
            den = next;
        }
        (self.reduced.clone(), den)
    }

    /// `(B̄, B̄', B̄'')` in floating point, from the cancelled rational form.
    pub fn eval(&self, x: f64) -> RadialJet {
        let (num, den) = self.reduced_parts();
        let (n0, n1, n2) = {
            let d1 = poly_derivative(&num);
            let d2 = poly_derivative(&d1);
            (poly_eval(&num, x), poly_eval(&d1, x), poly_eval(&d2, x))
        };
        let (q0, q1, q2) = {
            let d1 = poly_derivative(&den);
            let d2 = poly_derivative(&d1);
            (poly_eval(&den, x), poly_eval(&d1, x), poly_eval(&d2, x))
        };
        let v = n0 / q0;
        let d1 = (n1 - v * q1) / q0;
        let d2 = (n2 - 2.0 * d1 * q1 - v * q2) / q0;
        (v, d1, d2)
    }

    /// Exact value at a rational point `x ≠ ±1`.
    pub fn eval_exact(&self, x: &Rational) -> Rational {
        let n = self
            .numerator
            .iter()
            .rev()
            .fold(Rational::zero(), |acc, c| acc * x.clone() + c.clone());
        let one_minus = Rational::one() - x.clone() * x.clone();
        let mut d = Rational::one();
        for _ in 0..self.m_star {
            d *= one_minus.clone();
        }
        n / d
    }

    /// Value at `x = 1` from the cancelled form.
    pub fn value_at_one(&self) -> Rational {
        let (num, den) = self.reduced_parts();
        let n: Rational = num.iter().cloned().fold(Rational::zero(), |a, b| a + b);
        let d: Rational = den.iter().cloned().fold(Rational::zero(), |a, b| a + b);
        n / d
    }

    /// Polynomial obtained by clearing denominators in
    /// `(x − x³)B̄'' − 2m*B̄' − 4m*x/(1−x²) B̄`; identically zero for a solution.
    pub fn ode_numerator(&self) -> ExactSeries {
        let m = i64::from(self.m_star);
        let trunc = self.numerator.len() as i64 + 8;
        let s = |p: &[Rational]| poly_to_series(p, trunc);
        let mono = |k: i64, c: Rational| ExactSeries::scalar(0, trunc, &[(k, 0, c)]).unwrap();
        let n0 = s(&self.numerator);
        let n1 = s(&poly_derivative(&self.numerator));
        let n2 = s(&poly_derivative(&poly_derivative(&self.numerator)));
        let one_minus = mono(0, rat(1, 1)).add(&mono(2, rat(-1, 1))).unwrap();
        let x = mono(1, rat(1, 1));
        let mf = |c: i64| rat(c, 1);
        // x N'' (1−x²)² + 4m x² N' (1−x²) + 2m x N (1−x²) + 4m(m+1) x³ N
        //   − 2m N' (1−x²) − 4m² x N − 4m x N
        let terms = [
            x.mul(&n2)
                .unwrap()
                .mul(&one_minus)
                .unwrap()
                .mul(&one_minus)
                .unwrap(),
            mono(2, mf(4 * m))
                .mul(&n1)
                .unwrap()
                .mul(&one_minus)
                .unwrap(),
            mono(1, mf(2 * m))
                .mul(&n0)
                .unwrap()
                .mul(&one_minus)
                .unwrap(),
            mono(3, mf(4 * m * (m + 1))).mul(&n0).unwrap(),
            mono(0, mf(-2 * m))
                .mul(&n1)
                .unwrap()
                .mul(&one_minus)
                .unwrap(),
            mono(1, mf(-4 * m * m - 4 * m)).mul(&n0).unwrap(),
        ];
        terms
            .iter()
            .skip(1)
            .fold(terms[0].clone(), |acc, t| acc.add(t).unwrap())
    }

    /// Numerical residual of `(x − x³)B̄'' − 2m*B̄' − 4m*x/(1−x²) B̄`.
    pub fn ode_residual(&self, x: f64) -> f64 {
        let (v, d1, d2) = self.eval(x);
        let m = f64::from(self.m_star);
        (x - x.powi(3)) * d2 - 2.0 * m * d1 - 4.0 * m * x / (1.0 - x * x) * v
    }

    /// The radial factor `B = B̄/x` with derivatives.
    pub fn radial(&self, x: f64) -> RadialJet {
        let (v, d1, d2) = self.eval(x);
        (
            v / x,
            d1 / x - v / (x * x),
            d2 / x - 2.0 * d1 / (x * x) + 2.0 * v / x.powi(3),
        )
    }
}

/// Builds the `k = 2` Jacobi field and verifies the ODE exactly.
pub fn jacobi_field_b2(m_star: u32) -> Result<JacobiField, HemisphereError> {
    let hyp = terminating_2f1(m_star);
    let numerator = poly_from_series(&jacobi_numerator(m_star));
    let mut reduced = numerator.clone();
    for _ in 0..m_star {
        reduced = divide_one_minus_x(&reduced).ok_or_else(|| {
            HemisphereError::Integrity("numerator does not vanish to order m* at x = 1".into())
        })?;
    }
    let field = JacobiField {
        m_star,
        hypergeometric: hyp,
        c2: c2_constant(m_star),
        numerator,
        reduced,
    };
    if field.ode_numerator().terms().next().is_some() {
        return Err(HemisphereError::Integrity(format!(
            "B̄ for m* = {m_star} does not solve the radial ODE"
        )));
    }
    if field.value_at_one() != Rational::zero() || field.numerator[0] != Rational::one() {
        return Err(HemisphereError::Integrity(
            "boundary normalization B̄(0) = 1, B̄(1) = 0 fails".into(),
        ));
    }
    Ok(field)
}

/// `cos²φ − sin²φ/(m−1)`, the `k = 2` zonal harmonic on `S^{m−1}`.
pub fn sphere_f2(m: usize, phi: f64) -> f64 {
    phi.cos().powi(2) - phi.sin().powi(2) / (m as f64 - 1.0)
}

/// The same harmonic at a point `y ∈ R^m`, extended with degree 0.
pub fn sphere_f2_cartesian(y: &[f64]) -> f64 {
    let r2: f64 = y.iter().map(|v| v * v).sum();
    let rest: f64 = y[1..].iter().map(|v| v * v).sum();
    (y[0] * y[0] - rest / (y.len() as f64 - 1.0)) / r2
}

/// Spherical Laplacian of a function on `S^{m−1}` at a unit vector `y`,
/// via the Euclidean finite-difference Laplacian of its degree-0 extension.
pub fn sphere_laplacian_fd(f: &dyn Fn(&[f64]) -> f64, y: &[f64], h: f64) -> f64 {
    let f0 = f(y);
    let mut acc = 0.0;
    let mut p = y.to_vec();
    for i in 0..y.len() {
        p[i] = y[i] + h;
        let fp = f(&p);
        p[i] = y[i] - h;
        let fm = f(&p);
        p[i] = y[i];
        acc += (fp - 2.0 * f0 + fm) / (h * h);
    }
    acc
}

/// `J_Y(f₂ B̄/x)` at `(x, y)` on `HS^{2m*}` with the spherical part done by
/// finite differences: `f₂ L(B) + B x²/(1−x²) Δ_S f₂`.
pub fn jacobi_composite_residual(field: &JacobiField, x: f64, y: &[f64]) -> f64 {
    let m = 2 * field.m_star as usize;
    let b = field.radial(x);
    let l_b = jacobi_radial_residual(m, 0, &|t| field.radial(t), x);
    let lap = sphere_laplacian_fd(&sphere_f2_cartesian, y, 1e-4);
    sphere_f2_cartesian(y) * l_b + b.0 * x * x / (1.0 - x * x) * lap
}

/// Closed-form sphere integrals of the `f₂`-weighted metric perturbation.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularIntegrals {
    /// `∫ f₂ ω(F, F) dA` over `S^{2m*−1}`.
    pub i1: f64,
    /// `∫ f₂ (tr ω − ω(F, F)) dA`.
    pub i2: f64,
    /// `(2/(2m*−1)) ∫₀^π cos²φ sin^{2m*}φ dφ`.
    pub c_coeff: f64,
    /// `Vol(S^{2m*−2})`.
    pub tau: f64,
    /// `Vol(S^{2m*−2})/(2m*−1)`, so that `∫_{S^{2m*−2}} ω(G,G) = ρ tr ω`.
    pub rho: f64,
}

/// `∫₀^π sin^{n}φ dφ`.
pub fn sine_power_integral(n: u32) -> f64 {
    match n {
        0 => PI,
        1 => 2.0,
        _ => (n as f64 - 1.0) / n as f64 * sine_power_integral(n - 2),
    }
}

fn check_symmetric(omega: &DMatrix<f64>, dim: usize) -> Result<(), HemisphereError> {
    if omega.nrows() != dim || omega.ncols() != dim {
        return Err(HemisphereError::Dimension {
            got: omega.nrows(),
            want: dim,
        });
    }
    let defect = (omega - omega.transpose()).abs().max();
    if defect > 1e-12 * (1.0 + omega.abs().max()) {
        return Err(HemisphereError::Asymmetric(defect));
    }
    Ok(())
}

pub fn angular_integrals(
    m_star: u32,
    omega: &DMatrix<f64>,
) -> Result<AngularIntegrals, HemisphereError> {
    let n = 2 * m_star as usize;
    check_symmetric(omega, n)?;
    let s = sine_power_integral(2 * m_star);
    let s2 = sine_power_integral(2 * m_star + 2);
    let c_coeff = 2.0 / (2.0 * f64::from(m_star) - 1.0) * (s - s2);
    let tau = sphere_volume(n - 2);
    let rho = tau / (n as f64 - 1.0);
    let rest: f64 = (1..n).map(|j| omega[(j, j)]).sum();
    let i1 = c_coeff * (tau * omega[(0, 0)] - rho * rest);
    Ok(AngularIntegrals {
        i1,
        i2: -i1,
        c_coeff,
        tau,
        rho,
    })
}

/// The two angular integrals by tensor-product quadrature on `S^{2m*−1}`.
pub fn angular_integrals_quadrature(m_star: u32, omega: &DMatrix<f64>, nodes: usize) -> (f64, f64) {
    let d = 2 * m_star as usize - 1;
    let tr = omega.trace();
    let quad = |f: &dyn Fn(&[f64]) -> f64| sphere_integrate(d, nodes, f);
    let q = |y: &[f64]| quadratic_form(omega, y);
    (
        quad(&|y| sphere_f2_cartesian(y) * q(y)),
        quad(&|y| sphere_f2_cartesian(y) * (tr - q(y))),
    )
}

/// The two angular integrals by randomized quasi-Monte Carlo; returns
/// `((I₁, err), (I₂, err))`. Each sample is averaged over coordinate
/// reflections `y_i ↦ s_i y_i` whose sign columns are pairwise orthogonal
/// (rows of a Sylvester–Hadamard matrix); they preserve the measure and cancel
/// the off-diagonal part of `ω` before it can add variance.
pub fn angular_integrals_rqmc(
    m_star: u32,
    omega: &DMatrix<f64>,
    points: usize,
    seed: u64,
) -> ((f64, f64), (f64, f64)) {
    let n = 2 * m_star as usize;
    let tr = omega.trace();
    let reflected = |g: &dyn Fn(&[f64]) -> f64, y: &[f64]| {
        let mut z = y.to_vec();
        let mut acc = 0.0;
        let rows = (n + 1).next_power_of_two();
        for r in 0..rows {
            for (i, zi) in z.iter_mut().enumerate() {
                *zi = if (r & (i + 1)).count_ones() % 2 == 1 {
                    -y[i]
                } else {
                    y[i]
                };
            }
            acc += g(&z);
        }
        acc / rows as f64
    };
    let first = |y: &[f64]| sphere_f2_cartesian(y) * quadratic_form(omega, y);
    let second = |y: &[f64]| sphere_f2_cartesian(y) * (tr - quadratic_form(omega, y));
    let a = sphere_integrate_rqmc(n - 1, points, 8, seed, &|y| reflected(&first, y));
    let b = sphere_integrate_rqmc(n - 1, points, 8, seed ^ 0x9e37, &|y| reflected(&second, y));
    (a, b)
}

fn quadratic_form(omega: &DMatrix<f64>, y: &[f64]) -> f64 {
    let n = y.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += omega[(i, j)] * y[i] * y[j];
        }
    }
    s
}

/// Constants in `d^k A/dδ^k |₀ = (k!/2) · total · tr ω_k` for the round sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceConstants {
    /// `∫_{S^{2m*−1}} y₁² dA`: the angular weight of `ω(F, F)`.
    pub c1: f64,
    /// `(2m*−1) c₁`: the angular weight of `tr_S ω`.
    pub c2: f64,
    /// `FP ∫₀¹ x^{k+2−2m*} (1−x²)^{m*−1} dx`.
    pub i1: Rational,
    /// `FP ∫₀¹ x^{k−2m*} (1−x²)^{m*−1} dx`.
    pub i2: Rational,
    pub total: f64,
    /// `c₁ = c1_rational · π^{m*}`.
    pub c1_rational: Rational,
}

fn one_minus_x2_power(n: u32, trunc: i64) -> ExactSeries {
    let base = ExactSeries::scalar(0, trunc, &[(0, 0, rat(1, 1)), (2, 0, rat(-1, 1))]).unwrap();
    (0..n).fold(
        ExactSeries::scalar(0, trunc, &[(0, 0, rat(1, 1))]).unwrap(),
        |acc, _| acc.mul(&base).unwrap(),
    )
}

fn fp_radial(shift: i64, m_star: u32) -> Result<Rational, HemisphereError> {
    let poly = one_minus_x2_power(m_star - 1, 2 * i64::from(m_star) + 2);
    let fp = fp_series_integral_exact(&poly, shift, 0)
        .map_err(|e| HemisphereError::Integrity(e.to_string()))?;
    if fp.pole_order != 0 {
        return Err(HemisphereError::Integrity(format!(
            "x^{shift} ladder hits the pole; k must be even or ≥ 2m*"
        )));
    }
    Ok(fp.value)
}

pub fn trace_recovery_constants(m_star: u32, k: u32) -> Result<TraceConstants, HemisphereError> {
    let (mi, ki) = (i64::from(m_star), i64::from(k));
    let i1 = fp_radial(ki + 2 - 2 * mi, m_star)?;
    let i2 = fp_radial(ki - 2 * mi, m_star)?;
    // c₁ = Vol(S^{2m−1})/(2m) = π^m / m!
    let c1_rational = Rational::one() / (1..=mi).fold(Rational::one(), |a, i| a * rat(i, 1));
    let c1 = c1_rational.to_f64().unwrap() * PI.powi(m_star as i32);
    let c2 = (2.0 * m_star as f64 - 1.0) * c1;
    let total = c1 * i1.to_f64().unwrap() + c2 * i2.to_f64().unwrap();
    if total == 0.0 || i1.is_zero() {
        return Err(HemisphereError::Integrity(format!(
            "trace constant vanishes for k = {k}, m* = {m_star}"
        )));
    }
    Ok(TraceConstants {
        c1,
        c2,
        i1,
        i2,
        total,
        c1_rational,
    })
}

/// `I₂/I₁` for the trace integrals as they are evaluated: `(k+1)/(k+1−2m*)`.
pub fn trace_ratio(m_star: u32, k: u32) -> Rational {
    rat(i64::from(k) + 1, i64::from(k) + 1 - 2 * i64::from(m_star))
}

/// The ratio `(k+3)/(2m*+k−3)` as it is commonly displayed for the trace constants.
/// It does not match the integrals for any `m* ≥ 1`; kept so the discrepancy
/// can be reported.
pub fn displayed_trace_ratio(m_star: u32, k: u32) -> Rational {
    rat(i64::from(k) + 3, 2 * i64::from(m_star) + i64::from(k) - 3)
}

/// `c₁` written as a sphere integral, for cross-checking by quadrature.
pub fn c1_by_quadrature(m_star: u32, nodes: usize) -> f64 {
    sphere_integrate(2 * m_star as usize - 1, nodes, &|y| y[0] * y[0])
}

/// Largest `|h_{x θ_j}|` relative to the diagonal scale; zero for the exact chart.
pub fn chart_orthogonality_defect(m: usize, x: f64, angles: &[f64]) -> f64 {
    let h = HemisphereChart::new(m).induced_metric_numeric(x, angles, 1e-6);
    (1..m)
        .map(|j| h[(0, j)].abs() / (h[(0, 0)] * h[(j, j)]).sqrt())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn area_density_examples() {
        assert_eq!(hs_area_density(2, 0.5).unwrap(), 4.0);
        assert!((hs_area_density(4, 0.5).unwrap() - 12.0).abs() < 1e-14);
        assert_eq!(hs_area_density(2, 1.0).unwrap(), 1.0);
        assert!(hs_area_density(2, 0.0).is_err());
        assert!(hs_area_density(3, 1.5).is_err());
    }

    #[test]
    fn density_matches_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for m in 2..=4 {
            let chart = HemisphereChart::new(m);
            for _ in 0..5 {
                let x = rng.random_range(0.1..0.9);
                let angles: Vec<f64> = (0..m - 1)
                    .map(|j| {
                        if j + 2 == m {
                            rng.random_range(0.0..6.0)
                        } else {
                            rng.random_range(0.3..2.8)
                        }
                    })
                    .collect();
                let h = chart.induced_metric_numeric(x, &angles, 1e-6);
                // round-metric determinant of the angle chart
                let round: f64 = (0..m - 2)
                    .map(|j| angles[j].sin().powi(2 * (m - 2 - j) as i32))
                    .product();
                let want = hs_area_density(m, x).unwrap();
                assert!(((h.determinant() / round).sqrt() - want).abs() < 1e-6 * want);
                assert!((h[(0, 0)] - chart.h_xx(x)).abs() < 1e-7 * chart.h_xx(x));
                assert!(chart_orthogonality_defect(m, x, &angles) < 1e-8);
                if m == 2 {
                    assert!(
                        (h[(1, 1)] - chart.angular_scale(x)).abs() < 1e-7 * chart.angular_scale(x)
                    );
                }
            }
        }
    }

    #[test]
    fn radial_residual_examples() {
        let closed_form = |x: f64| {
            // B̄ = (1−x)(2x+1)/(1+x), B = B̄/x
            let f = |t: f64| (1.0 - t) * (2.0 * t + 1.0) / ((1.0 + t) * t);
            let h = 1e-4;
            (
                f(x),
                (f(x + h) - f(x - h)) / (2.0 * h),
                (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h),
            )
        };
        for x in [0.3, 0.5, 0.8] {
            assert!(jacobi_radial_residual(2, 2, &closed_form, x).abs() < 1e-4);
        }
        let inv = |x: f64| (1.0 / x, -1.0 / (x * x), 2.0 / x.powi(3));
        assert!(jacobi_radial_residual(2, 2, &inv, 0.5).abs() > 0.1);
        assert_eq!(jacobi_radial_residual(2, 2, &|_| (0.0, 0.0, 0.0), 0.4), 0.0);
    }

    #[test]
    fn b2_closed_form_m1() {
        let f = jacobi_field_b2(1).unwrap();
        // (1 − 3x² + 2x³)/(1 − x²) = (1−x)(2x+1)/(1+x): compare at rational points
        for (p, q) in [(1, 3), (1, 2), (3, 4), (2, 7)] {
            let x = rat(p, q);
            let want = (Rational::one() - x.clone()) * (rat(2, 1) * x.clone() + Rational::one())
                / (Rational::one() + x.clone());
            assert_eq!(f.eval_exact(&x), want);
        }
        assert_eq!(
            f.numerator,
            vec![rat(1, 1), rat(0, 1), rat(-3, 1), rat(2, 1)]
        );
        assert_eq!(f.eval(0.0).0, 1.0);
        assert_eq!(f.value_at_one(), rat(0, 1));
    }

    #[test]
    fn b2_solves_ode() {
        for m in 1..=4 {
            let f = jacobi_field_b2(m).unwrap();
            assert!(f.ode_numerator().terms().next().is_none());
            for i in 1..=100 {
                let x = i as f64 / 101.0;
                assert!(
                    f.ode_residual(x).abs() < 1e-10,
                    "m*={m} x={x}: {}",
                    f.ode_residual(x)
                );
                // the same field in the unreduced Jacobi form
                let r = jacobi_radial_residual(2 * m as usize, 2, &|t| f.radial(t), x);
                assert!(
                    r.abs() < 1e-8 * (1.0 + f.radial(x).0.abs() / (x * x)),
                    "m*={m} x={x}: {r}"
                );
            }
        }
    }

    #[test]
    fn f2_examples() {
        assert_eq!(sphere_f2(2, 0.0), 1.0);
        assert!((sphere_f2(2, PI / 2.0) + 1.0).abs() < 1e-15);
        for m in 2..=5 {
            let mean = sphere_integrate(m - 1, 24, &sphere_f2_cartesian);
            assert!(mean.abs() < 1e-10, "m={m}: {mean}");
        }
    }

    #[test]
    fn f2_is_an_eigenfunction() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for m in 2..=6 {
            for _ in 0..5 {
                let mut y: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
                let n = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                y.iter_mut().for_each(|v| *v /= n);
                let lap = sphere_laplacian_fd(&sphere_f2_cartesian, &y, 1e-4);
                let f = sphere_f2_cartesian(&y);
                assert!((lap + 2.0 * m as f64 * f).abs() < 1e-5, "m={m}");
            }
        }
    }

    #[test]
    fn composite_jacobi_residual_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for m in 1..=2u32 {
            let field = jacobi_field_b2(m).unwrap();
            let n = 2 * m as usize;
            for _ in 0..20 {
                let x = rng.random_range(0.05..0.95);
                let mut y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let r = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                y.iter_mut().for_each(|v| *v /= r);
                let res = jacobi_composite_residual(&field, x, &y);
                let scale = field.radial(x).0.abs() * x * x / (1.0 - x * x);
                assert!(res.abs() < 1e-6 * (1.0 + scale), "{res}");
            }
        }
    }

    #[test]
    fn angular_examples() {
        let w = DMatrix::from_row_slice(2, 2, &[0.7, 0.0, 0.0, -0.2]);
        let a = angular_integrals(1, &w).unwrap();
        assert!((a.i1 - PI / 2.0 * (0.7 + 0.2)).abs() < 1e-14);
        assert!((a.c_coeff - PI / 4.0).abs() < 1e-15);
        assert!(
            angular_integrals(1, &DMatrix::identity(2, 2))
                .unwrap()
                .i1
                .abs()
                < 1e-15
        );
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.1, 1.0]);
        assert!(matches!(
            angular_integrals(1, &asym),
            Err(HemisphereError::Asymmetric(_))
        ));
        // quadrature oracle for ∫cos2φ cos²φ dφ = π/2
        let q = sphere_integrate(1, 8, &|y| (y[0] * y[0] - y[1] * y[1]) * y[0] * y[0]);
        assert!((q - PI / 2.0).abs() < 1e-14);
    }

    #[test]
    fn angular_closed_forms_match_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for m in 1..=2u32 {
            let n = 2 * m as usize;
            let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let w = &b + b.transpose();
            let a = angular_integrals(m, &w).unwrap();
            let (q1, q2) = angular_integrals_quadrature(m, &w, 24);
            assert!(
                (a.i1 - q1).abs() < 1e-10 && (a.i2 - q2).abs() < 1e-10,
                "m*={m}"
            );
            assert!((q1 + q2).abs() < 1e-10);
        }
    }

    #[test]
    fn angular_closed_forms_match_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let b = DMatrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
        let w = &b + b.transpose();
        let a = angular_integrals(3, &w).unwrap();
        let ((m1, e1), (m2, e2)) = angular_integrals_rqmc(3, &w, 1 << 15, 5);
        assert!(
            (m1 - a.i1).abs() < 5e-3 && (m2 - a.i2).abs() < 5e-3,
            "{m1} ± {e1} vs {}, {m2} ± {e2} vs {}",
            a.i1,
            a.i2
        );
        // reflections leave a diagonal ω untouched and must not bias it
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            2.0, -1.0, 0.5, 0.0, 1.0, 3.0,
        ]));
        let a = angular_integrals(3, &d).unwrap();
        let ((m1, _), _) = angular_integrals_rqmc(3, &d, 1 << 15, 6);
        assert!((m1 - a.i1).abs() < 5e-3, "{m1} vs {}", a.i1);
    }

    #[test]
    fn trace_constants_example() {
        let t = trace_recovery_constants(1, 2).unwrap();
        assert!((t.c1 - PI).abs() < 1e-15 && (t.c2 - PI).abs() < 1e-15);
        assert_eq!((t.i1.clone(), t.i2.clone()), (rat(1, 3), rat(1, 1)));
        assert!((t.total - 4.0 * PI / 3.0).abs() < 1e-14);
        for m in 1..=2 {
            assert!((t_c1(m) - c1_by_quadrature(m, 24)).abs() < 1e-10);
        }
        for m in 1..=4 {
            for k in 2..=10 {
                if k % 2 == 0 || k >= 2 * m {
                    let t = trace_recovery_constants(m, k).unwrap();
                    assert!(t.total != 0.0);
                    assert_eq!(
                        t.i2.clone() / t.i1.clone(),
                        trace_ratio(m, k),
                        "k={k} m*={m}"
                    );
                }
            }
        }
    }

    fn t_c1(m: u32) -> f64 {
        trace_recovery_constants(m, 2 * m).unwrap().c1
    }

    #[test]
    fn displayed_trace_ratio_never_matches() {
        for m in 1..=3 {
            for k in [2, 4, 6] {
                assert_ne!(displayed_trace_ratio(m, k), trace_ratio(m, k));
            }
        }
    }

    proptest! {
        #[test]
        fn angular_identity(m in 1u32..=2, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 2 * m as usize;
            let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-2.0..2.0));
            let w = &b + b.transpose();
            let a = angular_integrals(m, &w).unwrap();
            prop_assert_eq!(a.i1, -a.i2);
            let lambda = rng.random_range(-3.0..3.0);
            let iso = angular_integrals(m, &(DMatrix::identity(n, n) * lambda)).unwrap();
            prop_assert!(iso.i1.abs() < 1e-12);
        }
    }
}
