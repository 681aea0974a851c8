//! Exact hypergeometric kernel: Pochhammer symbols, half-integer Gamma values,
//! the terminating polynomial `₂F₁(−m, −1/2−m; 1/2−m; x²)`, the Jacobi-field
//! constant `c₂`, and the finite-part constants `I_{k,m}`.
//!
//! Every hypergeometric series used here terminates, so all evaluation is
//! finite summation over exact rationals.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

use crate::phg::{rat, ExactSeries, Rational};
use crate::riesz::fp_series_integral_exact;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HypError {
    #[error("Gamma has a pole at {0}")]
    GammaPole(Rational),
    #[error("unsupported parameters: {0}")]
    Unsupported(String),
    #[error("integrity check failed: {0}")]
    Integrity(String),
}

/// Rising factorial `(a)_n = a (a+1) ⋯ (a+n−1)`.
pub fn pochhammer(a: &Rational, n: u32) -> Rational {
    let mut acc = Rational::one();
    let mut t = a.clone();
    for _ in 0..n {
        acc *= t.clone();
        t += Rational::one();
    }
    acc
}

fn factorial(n: u64) -> BigInt {
    (1..=n).fold(BigInt::one(), |acc, i| acc * BigInt::from(i))
}

/// `Γ((2q+1)/2)`, stored as the rational multiple of `√π`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HalfIntGamma {
    pub q: i64,
}

impl HalfIntGamma {
    pub fn new(q: i64) -> Self {
        HalfIntGamma { q }
    }

    /// The argument `q + 1/2`.
    pub fn argument(&self) -> Rational {
        rat(2 * self.q + 1, 2)
    }

    /// Rational part `Γ(q + 1/2)/√π`.
    pub fn coefficient(&self) -> Rational {
        let n = self.q.unsigned_abs();
        if self.q >= 0 {
            // (2n)! / (4^n n!)
            Rational::new(
                factorial(2 * n),
                BigInt::from(4).pow(n as u32) * factorial(n),
            )
        } else {
            // (−4)^n n! / (2n)!
            Rational::new(
                BigInt::from(-4).pow(n as u32) * factorial(n),
                factorial(2 * n),
            )
        }
    }

    pub fn value(&self) -> f64 {
        self.coefficient().to_f64().unwrap() * std::f64::consts::PI.sqrt()
    }
}

/// `Γ(z)` for integer or half-integer `z`, as `rational · π^{sqrt_pi_power/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaValue {
    pub rational: Rational,
    pub sqrt_pi_power: i32,
}

impl GammaValue {
    pub fn of(z: &Rational) -> Result<Self, HypError> {
        if z.is_integer() {
            if !z.is_positive() {
                return Err(HypError::GammaPole(z.clone()));
            }
            let n = z
                .to_integer()
                .to_u64()
                .ok_or_else(|| HypError::Unsupported(format!("Γ({z}) too large")))?;
            return Ok(GammaValue {
                rational: Rational::from_integer(factorial(n - 1)),
                sqrt_pi_power: 0,
            });
        }
        let twice = z.clone() * rat(2, 1);
        if !twice.is_integer() {
            return Err(HypError::Unsupported(format!(
                "Γ({z}) is not a half-integer Gamma value"
            )));
        }
        let q = (twice.to_integer() - BigInt::one()).div_floor(&BigInt::from(2));
        let q = q
            .to_i64()
            .ok_or_else(|| HypError::Unsupported(format!("Γ({z}) too large")))?;
        Ok(GammaValue {
            rational: HalfIntGamma::new(q).coefficient(),
            sqrt_pi_power: 1,
        })
    }

    fn mul(&self, o: &Self) -> Self {
        GammaValue {
            rational: self.rational.clone() * o.rational.clone(),
            sqrt_pi_power: self.sqrt_pi_power + o.sqrt_pi_power,
        }
    }

    fn div(&self, o: &Self) -> Self {
        GammaValue {
            rational: self.rational.clone() / o.rational.clone(),
            sqrt_pi_power: self.sqrt_pi_power - o.sqrt_pi_power,
        }
    }
}

/// `Γ(num)/Γ(den)` for half-integer arguments, which must be a pure rational.
pub fn gamma_ratio(num: &Rational, den: &Rational) -> Result<Rational, HypError> {
    let v = GammaValue::of(num)?.div(&GammaValue::of(den)?);
    if v.sqrt_pi_power != 0 {
        return Err(HypError::Unsupported(format!(
            "Γ({num})/Γ({den}) keeps a factor of √π"
        )));
    }
    Ok(v.rational)
}

fn nonpositive_integer(a: &Rational) -> Option<u32> {
    if a.is_integer() && !a.is_positive() {
        a.to_integer().abs().to_u32()
    } else {
        None
    }
}

/// Terms `(a)_j (b)_j / ((c)_j j!)` of a terminating series, or an error if
/// the denominator vanishes before termination.
fn terminating_terms(
    a: &Rational,
    b: &Rational,
    c: &Rational,
    n: u32,
) -> Result<Vec<Rational>, HypError> {
    let mut out = Vec::with_capacity(n as usize + 1);
    let mut term = Rational::one();
    out.push(term.clone());
    for j in 0..n {
        let jr = Rational::from_integer(BigInt::from(j));
        let den = (c.clone() + jr.clone()) * (jr.clone() + Rational::one());
        if den.is_zero() {
            return Err(HypError::GammaPole(c.clone() + jr));
        }
        term = term * (a.clone() + jr.clone()) * (b.clone() + jr) / den;
        out.push(term.clone());
    }
    Ok(out)
}

/// `₂F₁(a, b; c; 1)`.
///
/// Terminating series are summed directly; otherwise Gauss's formula
/// `Γ(c)Γ(c−a−b)/(Γ(c−a)Γ(c−b))` is used, which must be free of `√π`.
pub fn gauss_value_at_one(a: &Rational, b: &Rational, c: &Rational) -> Result<Rational, HypError> {
    let n = nonpositive_integer(a).or_else(|| nonpositive_integer(b));
    if let Some(n) = n {
        return Ok(terminating_terms(a, b, c, n)?
            .into_iter()
            .fold(Rational::zero(), |s, t| s + t));
    }
    let s = c.clone() - a.clone() - b.clone();
    if !s.is_positive() {
        return Err(HypError::Unsupported(format!(
            "non-terminating series with c − a − b = {s} ≤ 0"
        )));
    }
    let num = GammaValue::of(c)?.mul(&GammaValue::of(&s)?);
    let den =
        GammaValue::of(&(c.clone() - a.clone()))?.mul(&GammaValue::of(&(c.clone() - b.clone()))?);
    let v = num.div(&den);
    if v.sqrt_pi_power != 0 {
        return Err(HypError::Unsupported("√π factors do not cancel".into()));
    }
    Ok(v.rational)
}

/// The polynomial `₂F₁(−m, −1/2−m; 1/2−m; x²)` of degree `2m` in `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminatingHyp {
    pub m_star: u32,
    /// Coefficient of `x^i` at index `i`.
    pub coeffs: Vec<Rational>,
}

impl TerminatingHyp {
    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .rev()
            .fold(0.0, |acc, c| acc * x + c.to_f64().unwrap())
    }

    pub fn eval_exact(&self, x: &Rational) -> Rational {
        self.coeffs
            .iter()
            .rev()
            .fold(Rational::zero(), |acc, c| acc * x.clone() + c.clone())
    }

    /// Same polynomial as a series in `x` (exact, fully known).
    pub fn to_series(&self, trunc: i64) -> ExactSeries {
        let terms: Vec<(i64, u32, Rational)> = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| (i as i64, 0, c.clone()))
            .collect();
        ExactSeries::scalar(0, trunc.max(self.degree() as i64), &terms)
            .expect("degree within truncation")
    }
}

fn hyp_params(m: u32) -> (Rational, Rational, Rational) {
    let m = i64::from(m);
    (rat(-m, 1), rat(-2 * m - 1, 2), rat(1 - 2 * m, 2))
}

pub fn terminating_2f1(m_star: u32) -> TerminatingHyp {
    assert!(m_star >= 1, "m_star must be at least 1");
    let (a, b, c) = hyp_params(m_star);
    let terms = terminating_terms(&a, &b, &c, m_star).expect("(1/2 − m)_j never vanishes");
    let mut coeffs = vec![Rational::zero(); 2 * m_star as usize + 1];
    for (j, t) in terms.into_iter().enumerate() {
        coeffs[2 * j] = t;
    }
    TerminatingHyp { m_star, coeffs }
}

/// `c₂ = −₂F₁(−m, −1/2−m; 1/2−m; 1) = −m! Γ(1/2−m)/Γ(1/2)`, the coefficient that
/// forces the Jacobi field to vanish at `x = 1`.
pub fn c2_constant(m_star: u32) -> Rational {
    let (a, b, c) = hyp_params(m_star);
    let by_sum = -gauss_value_at_one(&a, &b, &c).expect("terminating");
    let by_gamma = -Rational::from_integer(factorial(u64::from(m_star)))
        * gamma_ratio(&rat(1 - 2 * i64::from(m_star), 2), &rat(1, 2)).expect("half-integer ratio");
    assert_eq!(
        by_sum, by_gamma,
        "Gauss summation disagrees with the Gamma formula"
    );
    by_sum
}

/// The numerator polynomial `₂F₁(…; x²) + c₂ x^{2m+1}` as an exact series.
pub fn jacobi_numerator(m_star: u32) -> ExactSeries {
    let deg = 2 * i64::from(m_star) + 1;
    let mut s = terminating_2f1(m_star).to_series(deg);
    s.insert(deg, 0, crate::phg::Coeff::Scalar(c2_constant(m_star)))
        .expect("within truncation");
    s
}

fn termwise_i_km(k: u32, m: u32) -> Result<Rational, HypError> {
    let shift = 2 * i64::from(k) - 2 * i64::from(m);
    let fp = fp_series_integral_exact(&jacobi_numerator(m), shift, 0)
        .map_err(|e| HypError::Integrity(e.to_string()))?;
    if fp.pole_order != 0 {
        return Err(HypError::Integrity(format!(
            "unexpected pole in I_{{{k},{m}}}"
        )));
    }
    Ok(fp.value)
}

/// The two Gauss values `₂F₁(−m, a; a+1; 1)`, `₂F₁(−m, α; α+1; 1)` with
/// `a = −m−1/2` and `α = k−m+1/2`, into which the `₃F₂` splits.
fn gauss_pair(k: u32, m: u32) -> Result<(Rational, Rational), HypError> {
    let (mi, ki) = (i64::from(m), i64::from(k));
    let a = rat(-2 * mi - 1, 2);
    let alpha = rat(2 * (ki - mi) + 1, 2);
    let minus_m = rat(-mi, 1);
    let one = Rational::one();
    Ok((
        gauss_value_at_one(&minus_m, &a, &(a.clone() + one.clone()))?,
        gauss_value_at_one(&minus_m, &alpha, &(alpha.clone() + one))?,
    ))
}

fn reduced_i_km(k: u32, m: u32) -> Result<Rational, HypError> {
    let (mi, ki) = (i64::from(m), i64::from(k));
    let a = rat(-2 * mi - 1, 2);
    let alpha = rat(2 * (ki - mi) + 1, 2);
    let (fa, falpha) = gauss_pair(k, m)?;
    // ₃F₂(−m, a, α; a+1, α+1; 1) = [α F_a − a F_α]/(k+1)
    let f32 = (alpha.clone() * fa - a * falpha) / rat(ki + 1, 1);
    let polynomial_part = f32 / rat(2 * (ki - mi) + 1, 1);
    Ok(polynomial_part + c2_constant(m) / rat(2 * ki + 2, 1))
}

/// `I_{k,m} = FP_{z=0} ∫₀¹ x^{z+2k−2m} [₂F₁(…; x²) + c₂ x^{2m+1}] dx`.
///
/// Computed termwise through the finite-part engine and through the reduction
/// to two Gauss sums; the routes must agree exactly. The common closed form is
/// `(2m+1) m! Γ(k−m+3/2) / (2 (2k−2m+1)(k+1) Γ(k+3/2))`.
pub fn i_km(k: u32, m_star: u32) -> Result<Rational, HypError> {
    let direct = termwise_i_km(k, m_star)?;
    let reduced = reduced_i_km(k, m_star)?;
    if direct != reduced {
        return Err(HypError::Integrity(format!(
            "I_{{{k},{m_star}}}: termwise {direct} vs reduced {reduced}"
        )));
    }
    if direct.is_zero() {
        return Err(HypError::Integrity(format!("I_{{{k},{m_star}}} vanishes")));
    }
    Ok(direct)
}

/// Product form of `I_{k,m}` (see [`i_km`]).
pub fn i_km_closed_form(k: u32, m_star: u32) -> Rational {
    let (ki, mi) = (i64::from(k), i64::from(m_star));
    let h =
        gamma_ratio(&rat(2 * (ki - mi) + 3, 2), &rat(2 * ki + 3, 2)).expect("half-integer ratio");
    rat(2 * mi + 1, 1) * Rational::from_integer(factorial(u64::from(m_star))) * h
        / rat(2 * (2 * ki - 2 * mi + 1) * (ki + 1), 1)
}

/// The two summands of the bracket `Γ(1/2−m)/Γ(1/2)·2(k−m) + (2m+1)Γ(k−m+3/2)/Γ(k+3/2)`
/// as it is usually displayed for `2 I (k+1)/m!`. It agrees with the true
/// value only when `k = m`, but is nonzero for every `k, m`.
pub fn displayed_bracket_terms(k: u32, m_star: u32) -> (Rational, Rational) {
    let (ki, mi) = (i64::from(k), i64::from(m_star));
    let g = gamma_ratio(&rat(1 - 2 * mi, 2), &rat(1, 2)).expect("half-integer ratio");
    let h =
        gamma_ratio(&rat(2 * (ki - mi) + 3, 2), &rat(2 * ki + 3, 2)).expect("half-integer ratio");
    (g * rat(2 * (ki - mi), 1), rat(2 * mi + 1, 1) * h)
}

/// Checks the partial-fraction identity used to split the `₃F₂` at index `ℓ`;
/// returns `(lhs, rhs)`.
pub fn partial_fraction_terms(k: u32, m_star: u32, l: u32) -> (Rational, Rational) {
    let (ki, mi) = (i64::from(k), i64::from(m_star));
    let a = rat(-2 * mi - 1, 2);
    let alpha = rat(2 * (ki - mi) + 1, 2);
    let one = Rational::one();
    let lhs = pochhammer(&a, l) * pochhammer(&alpha, l)
        / (pochhammer(&(a.clone() + one.clone()), l) * pochhammer(&(alpha.clone() + one), l));
    let lr = rat(i64::from(l), 1);
    let rhs = a.clone() * alpha.clone() / rat(ki + 1, 1)
        * (Rational::one() / (a + lr.clone()) - Rational::one() / (alpha + lr));
    (lhs, rhs)
}

/// 2-adic witness that the two bracket summands cannot cancel.
#[derive(Debug, Clone, PartialEq)]
pub struct ParityCertificate {
    pub k: u32,
    pub m_star: u32,
    /// `k − m = 2^r L` with `L` odd; `None` when `k = m`.
    pub r: Option<u32>,
    pub l_odd: Option<i64>,
    /// `2(k−m)Γ(1/2−m)/Γ(1/2) = 2^{m+1+r} Q₁`.
    pub first: Rational,
    /// `(2m+1)Γ(k−m+3/2)/Γ(k+3/2) = 2^m Q₂`.
    pub second: Rational,
    pub q1: Option<Rational>,
    pub q2: Rational,
    /// Valuations of the summands; the certificate holds when they differ.
    pub first_valuation: Option<i64>,
    pub second_valuation: i64,
    pub valid: bool,
}

fn two_adic_valuation(x: &Rational) -> Option<i64> {
    if x.is_zero() {
        return None;
    }
    let v = |n: &BigInt| n.trailing_zeros().map(|t| t as i64).unwrap_or(0);
    Some(v(x.numer()) - v(x.denom()))
}

fn odd_part(x: &Rational, v: i64) -> Rational {
    let p = Rational::from_integer(BigInt::from(2).pow(v.unsigned_abs() as u32));
    if v >= 0 {
        x.clone() / p
    } else {
        x.clone() * p
    }
}

pub fn nonvanishing_certificate(k: u32, m_star: u32) -> ParityCertificate {
    let (first, second) = displayed_bracket_terms(k, m_star);
    let diff = i64::from(k) - i64::from(m_star);
    let (r, l_odd) = if diff == 0 {
        (None, None)
    } else {
        let r = diff.unsigned_abs().trailing_zeros();
        (Some(r), Some(diff >> r))
    };
    let fv = two_adic_valuation(&first);
    let sv = two_adic_valuation(&second).expect("Gamma ratio of half-integers is nonzero");
    let q1 = fv.map(|v| odd_part(&first, v));
    let q2 = odd_part(&second, sv);
    let expected_first = r.map(|r| i64::from(m_star) + 1 + i64::from(r));
    let valid = sv == i64::from(m_star) && fv == expected_first && fv != Some(sv);
    ParityCertificate {
        k,
        m_star,
        r,
        l_odd,
        first,
        second,
        q1,
        q2,
        first_valuation: fv,
        second_valuation: sv,
        valid,
    }
}
