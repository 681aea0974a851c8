//! Riesz finite parts `FP_{z=0} z^p ∫ x^{z+a} log^ℓ(x) b(x) dx` and the
//! ε-truncation route to renormalized volumes.
//!
//! Everything reduces to the primitive `G(u) = η^u / u` with `u = z + a + 1`:
//! the integral of `x^{z+a} log^ℓ x` over `(0, η)` is `G^{(ℓ)}(u)`. When
//! `a ≠ −1` this is holomorphic at `z = 0`; when `a = −1` its Laurent series is
//!
//! ```text
//! (−1)^ℓ ℓ! z^{−ℓ−1} + Σ_{j≥0} (log η)^{j+ℓ+1} / ((j+ℓ+1) j!) · z^j
//! ```
//!
//! so the pole is a single term and the finite part is read off directly.

use nalgebra::{DMatrix, DVector};
use num_traits::{One, Zero};
use thiserror::Error;

use crate::phg::{LogSeries, PhgError, Rational, Scalar, Shape};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RieszError {
    #[error(transparent)]
    Series(#[from] PhgError),
    #[error("splitting radius η = {0} must lie in (0, 1]")]
    Eta(f64),
    #[error("z^p prefactor must have p ∈ {{0, 1}}, got {0}")]
    Prefactor(u32),
    #[error("need at least {need} distinct ε samples in (0, 1), got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("ε-fit is ill-conditioned (condition {condition:.3e}); spread samples over roughly [{lo:.3e}, {hi:.3e}]")]
    Conditioning { condition: f64, lo: f64, hi: f64 },
}

/// Regularized value with its pole coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct FinitePart<T> {
    pub value: T,
    /// Coefficient of `1/z`.
    pub simple_pole: T,
    /// Coefficient of `1/z²`.
    pub double_pole: T,
    /// Highest pole order encountered (0 when the integral is holomorphic).
    pub pole_order: u32,
    pub eta: f64,
}

impl<T: Scalar> FinitePart<T> {
    fn zero(eta: f64) -> Self {
        FinitePart {
            value: T::zero(),
            simple_pole: T::zero(),
            double_pole: T::zero(),
            pole_order: 0,
            eta,
        }
    }

    fn accumulate(&mut self, other: &FinitePart<T>, weight: &T) {
        self.value = self.value.clone() + other.value.clone() * weight.clone();
        self.simple_pole = self.simple_pole.clone() + other.simple_pole.clone() * weight.clone();
        self.double_pole = self.double_pole.clone() + other.double_pole.clone() * weight.clone();
        if !weight.is_zero() {
            self.pole_order = self.pole_order.max(other.pole_order);
        }
    }

    /// True when a simple pole survives: the odd-dimensional anomaly.
    pub fn has_anomaly(&self) -> bool {
        !self.simple_pole.is_zero()
    }

    pub fn to_f64(&self) -> FinitePart<f64> {
        FinitePart {
            value: self.value.to_f64_lossy(),
            simple_pole: self.simple_pole.to_f64_lossy(),
            double_pole: self.double_pole.to_f64_lossy(),
            pole_order: self.pole_order,
            eta: self.eta,
        }
    }
}

fn factorial<T: Scalar>(n: u32) -> T {
    (1..=n).fold(T::one(), |acc, i| acc * T::from_u32(i).unwrap())
}

fn powi<T: Scalar>(x: &T, n: i64) -> T {
    let base = if n < 0 {
        T::one() / x.clone()
    } else {
        x.clone()
    };
    (0..n.unsigned_abs()).fold(T::one(), |acc, _| acc * base.clone())
}

fn binom<T: Scalar>(n: u32, k: u32) -> T {
    factorial::<T>(n) / (factorial::<T>(k) * factorial::<T>(n - k))
}

fn check_prefactor(p: u32) -> Result<(), RieszError> {
    if p > 1 {
        Err(RieszError::Prefactor(p))
    } else {
        Ok(())
    }
}

/// Shared kernel: `eta` and `log_eta` are passed separately so the exact path
/// can use `η = 1, log η = 0` without transcendental values.
fn monomial_kernel<T: Scalar>(
    a: i64,
    l: u32,
    p: u32,
    eta: &T,
    log_eta: &T,
    eta_f: f64,
) -> FinitePart<T> {
    let mut fp = FinitePart::zero(eta_f);
    if a != -1 {
        if p == 0 {
            // d^ℓ/du^ℓ (η^u / u) at u = a + 1
            let u = T::from_i64(a + 1).unwrap();
            let eta_u = powi(eta, a + 1);
            let mut acc = T::zero();
            for j in 0..=l {
                let sign = if j % 2 == 0 {
                    T::one()
                } else {
                    T::zero() - T::one()
                };
                acc = acc
                    + binom::<T>(l, j)
                        * powi(log_eta, i64::from(l - j))
                        * eta_u.clone()
                        * sign
                        * factorial::<T>(j)
                        / powi(&u, i64::from(j) + 1);
            }
            fp.value = acc;
        }
        return fp;
    }
    let order = l + 1 - p;
    let residue = factorial::<T>(l)
        * if l % 2 == 0 {
            T::one()
        } else {
            T::zero() - T::one()
        };
    fp.pole_order = order;
    match order {
        0 => fp.value = residue,
        1 => fp.simple_pole = residue,
        2 => fp.double_pole = residue,
        _ => {}
    }
    if p == 0 {
        fp.value = powi(log_eta, i64::from(l) + 1) / T::from_u32(l + 1).unwrap();
    }
    fp
}

/// `FP_{z=0} z^p ∫₀^η x^{z+a} log^ℓ(x) dx` in floating point.
pub fn fp_monomial(a: i64, l: u32, p: u32, eta: f64) -> Result<FinitePart<f64>, RieszError> {
    check_prefactor(p)?;
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(RieszError::Eta(eta));
    }
    Ok(monomial_kernel(a, l, p, &eta, &eta.ln(), eta))
}

/// Exact version of [`fp_monomial`] on the unit interval (`η = 1`).
pub fn fp_monomial_exact(a: i64, l: u32, p: u32) -> Result<FinitePart<Rational>, RieszError> {
    check_prefactor(p)?;
    Ok(monomial_kernel(
        a,
        l,
        p,
        &Rational::one(),
        &Rational::zero(),
        1.0,
    ))
}

/// `∫_η^1 x^a log^ℓ(x) dx`, the holomorphic remainder of a split integral.
fn tail_integral(a: i64, l: u32, eta: f64) -> f64 {
    let le = eta.ln();
    if a == -1 {
        return -le.powi(l as i32 + 1) / f64::from(l + 1);
    }
    let at_one = monomial_kernel::<f64>(a, l, 0, &1.0, &0.0, 1.0).value;
    let at_eta = monomial_kernel::<f64>(a, l, 0, &eta, &le, eta).value;
    at_one - at_eta
}

fn ladder_check<T: Scalar>(b: &LogSeries<T>, a_shift: i64) -> Result<(), RieszError> {
    if b.shape() != Shape::Scalar {
        return Err(PhgError::Dimension(Shape::Scalar, b.shape()).into());
    }
    let ladder = -1 - a_shift;
    if ladder > b.truncation_order() {
        return Err(PhgError::Unknown {
            k: ladder,
            trunc: b.truncation_order(),
        }
        .into());
    }
    Ok(())
}

/// `FP_{z=0} z^p ∫₀¹ x^{z+a_shift} b(x) dx`, termwise and exact.
pub fn fp_series_integral_exact(
    b: &LogSeries<Rational>,
    a_shift: i64,
    p: u32,
) -> Result<FinitePart<Rational>, RieszError> {
    ladder_check(b, a_shift)?;
    let mut out = FinitePart::zero(1.0);
    for (k, l, c) in b.terms() {
        let c = c.as_scalar().expect("scalar series");
        out.accumulate(&fp_monomial_exact(k + a_shift, l, p)?, c);
    }
    Ok(out)
}

/// `FP_{z=0} z^p ∫₀¹ x^{z+a_shift} b(x) dx`, splitting the interval at `η`.
///
/// The value does not depend on `η`; varying it is a consistency check on
/// the primitive table.
pub fn fp_series_integral<T: Scalar>(
    b: &LogSeries<T>,
    a_shift: i64,
    p: u32,
    eta: f64,
) -> Result<FinitePart<f64>, RieszError> {
    ladder_check(b, a_shift)?;
    check_prefactor(p)?;
    let mut out = FinitePart::zero(eta);
    for (k, l, c) in b.terms() {
        let c = c.as_scalar().expect("scalar series").to_f64_lossy();
        let a = k + a_shift;
        out.accumulate(&fp_monomial(a, l, p, eta)?, &c);
        if p == 0 {
            out.value += c * tail_integral(a, l, eta);
        }
    }
    Ok(out)
}

/// Renormalized volume of a surface whose area form is
/// `boundary_measure · density(x) dx`.
///
/// A surviving simple pole (odd-dimensional anomaly) is reported on the
/// returned value rather than subtracted.
pub fn rv_from_density<T: Scalar>(
    density: &LogSeries<T>,
    boundary_measure: f64,
) -> Result<FinitePart<f64>, RieszError> {
    let fp = fp_series_integral(density, 0, 0, 1.0)?;
    Ok(FinitePart {
        value: fp.value * boundary_measure,
        simple_pole: fp.simple_pole * boundary_measure,
        double_pole: fp.double_pole * boundary_measure,
        pole_order: fp.pole_order,
        eta: fp.eta,
    })
}

/// Outcome of the ε-truncation fit.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncationFit {
    /// Fitted constant term: the renormalized volume.
    pub constant: f64,
    /// Fitted divergent coefficients, most singular first.
    pub divergent: Vec<f64>,
    /// Root-mean-square residual of the least-squares fit.
    pub residual: f64,
    pub condition: f64,
}

/// Maximum condition number accepted by [`rv_truncation_fit`].
pub const MAX_FIT_CONDITION: f64 = 1e12;

/// Fits `Vol(x > ε) ≈ Σ a_j ε^{-j} + V + Σ b_i ε^i` and returns `V`.
///
/// For even `m` the divergent ladder is `ε^{1−m}, ε^{3−m}, …, ε^{−1}`; for odd
/// `m` all negative powers down to `ε^{1−m}` plus `log(1/ε)` are used.
pub fn rv_truncation_fit(samples: &[(f64, f64)], m: usize) -> Result<TruncationFit, RieszError> {
    let mut eps: Vec<f64> = samples
        .iter()
        .map(|s| s.0)
        .filter(|&e| e > 0.0 && e < 1.0)
        .collect();
    eps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eps.dedup();
    let need = m / 2 + 2;
    if eps.len() != samples.len() || samples.len() < need {
        return Err(RieszError::TooFewSamples {
            need,
            got: eps.len(),
        });
    }

    let mut powers: Vec<i32> = if m % 2 == 0 {
        (0..m / 2).map(|i| 1 - m as i32 + 2 * i as i32).collect()
    } else {
        (1..m as i32).map(|j| -(m as i32) + j).collect()
    };
    let divergent = powers.len() + usize::from(m % 2 == 1);
    powers.push(0);
    let const_col = powers.len() - 1;
    let spare = samples.len().saturating_sub(divergent + 1);
    let positive = spare.saturating_sub(1).clamp(usize::from(spare > 0), 3);
    powers.extend(1..=positive as i32);

    let ncol = powers.len() + usize::from(m % 2 == 1);
    let n = samples.len();
    let mut a = DMatrix::<f64>::zeros(n, ncol);
    let rhs = DVector::from_iterator(n, samples.iter().map(|s| s.1));
    for (i, &(e, _)) in samples.iter().enumerate() {
        for (j, &pw) in powers.iter().enumerate() {
            a[(i, j)] = e.powi(pw);
        }
        if m % 2 == 1 {
            a[(i, ncol - 1)] = (1.0 / e).ln();
        }
    }
    let scales: Vec<f64> = (0..ncol).map(|j| a.column(j).norm()).collect();
    for (j, s) in scales.iter().enumerate() {
        a.column_mut(j).scale_mut(1.0 / s);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = smax / smin;
    if !condition.is_finite() || condition > MAX_FIT_CONDITION {
        let (lo, hi) = (eps[0], *eps.last().unwrap());
        return Err(RieszError::Conditioning {
            condition,
            lo: lo.max(hi / 20.0),
            hi,
        });
    }
    let x = svd.solve(&rhs, 0.0).expect("svd carries U and V");
    let fitted = &a * &x;
    let residual = ((&fitted - &rhs).norm_squared() / n as f64).sqrt();
    let coef: Vec<f64> = x.iter().zip(&scales).map(|(c, s)| c / s).collect();
    let mut div: Vec<f64> = coef[..const_col].to_vec();
    if m % 2 == 1 {
        div.push(coef[ncol - 1]);
    }
    Ok(TruncationFit {
        constant: coef[const_col],
        divergent: div,
        residual,
        condition,
    })
}
