//! Truncated polyhomogeneous expansions `Σ a_{kℓ} x^k log(x)^ℓ`.
//!
//! A [`LogSeries`] is a sparse map keyed by `(k, ℓ)` together with an explicit
//! truncation order `M`: coefficients with `k > M` are unknown, which is not
//! the same thing as zero. Arithmetic propagates `M` pessimistically so that
//! every retained coefficient is exact.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Num, One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhgError {
    #[error("coefficient shape mismatch: {0} vs {1}")]
    Dimension(Shape, Shape),
    #[error("unsupported operation: {0}")]
    Unsupported(&'static str),
    #[error("evaluation point x = {0} is outside (0, radius]")]
    Domain(f64),
    #[error("coefficient of x^{k} is unknown (truncation order {trunc})")]
    Unknown { k: i64, trunc: i64 },
    #[error("term x^{k} lies below k_min = {k_min}")]
    BelowMin { k: i64, k_min: i64 },
    #[error("malformed series: {0}")]
    Parse(String),
}

/// Numeric field usable as a coefficient: exact rationals or `f64`.
pub trait Scalar:
    Clone + fmt::Debug + PartialEq + Num + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Scalar for T where
    T: Clone + fmt::Debug + PartialEq + Num + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
}

pub type Rational = BigRational;

/// Shorthand for an exact rational `p/q`.
pub fn rat(p: i64, q: i64) -> Rational {
    Rational::new(BigInt::from(p), BigInt::from(q))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Scalar,
    Matrix(usize),
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Scalar => write!(f, "scalar"),
            Shape::Matrix(d) => write!(f, "{d}x{d} matrix"),
        }
    }
}

/// Symmetric `d×d` matrix stored densely (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct SymMat<T> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> SymMat<T> {
    pub fn zeros(dim: usize) -> Self {
        SymMat {
            dim,
            data: vec![T::zero(); dim * dim],
        }
    }

    /// Builds from rows; the input must be square and symmetric.
    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self, PhgError> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(PhgError::Parse("matrix coefficient is not square".into()));
        }
        let data: Vec<T> = rows.into_iter().flatten().collect();
        let m = SymMat { dim, data };
        for i in 0..dim {
            for j in 0..i {
                if m.get(i, j) != m.get(j, i) {
                    return Err(PhgError::Parse(
                        "matrix coefficient is not symmetric".into(),
                    ));
                }
            }
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> &T {
        &self.data[i * self.dim + j]
    }

    pub fn rows(&self) -> Vec<Vec<T>> {
        self.data.chunks(self.dim).map(|r| r.to_vec()).collect()
    }

    fn zip(&self, other: &Self, f: impl Fn(&T, &T) -> T) -> Self {
        SymMat {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(a, b))
                .collect(),
        }
    }

    fn map(&self, f: impl Fn(&T) -> T) -> Self {
        SymMat {
            dim: self.dim,
            data: self.data.iter().map(f).collect(),
        }
    }
}

/// A single coefficient `a_{kℓ}`.
#[derive(Debug, Clone, PartialEq)]
pub enum Coeff<T> {
    Scalar(T),
    Matrix(SymMat<T>),
}

impl<T: Scalar> Coeff<T> {
    pub fn zero(shape: Shape) -> Self {
        match shape {
            Shape::Scalar => Coeff::Scalar(T::zero()),
            Shape::Matrix(d) => Coeff::Matrix(SymMat::zeros(d)),
        }
    }

    pub fn shape(&self) -> Shape {
        match self {
            Coeff::Scalar(_) => Shape::Scalar,
            Coeff::Matrix(m) => Shape::Matrix(m.dim),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Coeff::Scalar(s) => s.is_zero(),
            Coeff::Matrix(m) => m.data.iter().all(Zero::is_zero),
        }
    }

    pub fn as_scalar(&self) -> Option<&T> {
        match self {
            Coeff::Scalar(s) => Some(s),
            Coeff::Matrix(_) => None,
        }
    }

    pub fn as_matrix(&self) -> Option<&SymMat<T>> {
        match self {
            Coeff::Matrix(m) => Some(m),
            Coeff::Scalar(_) => None,
        }
    }

    fn add(&self, other: &Self) -> Self {
        match (self, other) {
            (Coeff::Scalar(a), Coeff::Scalar(b)) => Coeff::Scalar(a.clone() + b.clone()),
            (Coeff::Matrix(a), Coeff::Matrix(b)) => {
                Coeff::Matrix(a.zip(b, |x, y| x.clone() + y.clone()))
            }
            _ => unreachable!("shapes are checked by the caller"),
        }
    }

    pub fn scale(&self, s: &T) -> Self {
        match self {
            Coeff::Scalar(a) => Coeff::Scalar(a.clone() * s.clone()),
            Coeff::Matrix(m) => Coeff::Matrix(m.map(|x| x.clone() * s.clone())),
        }
    }

    fn mul(&self, other: &Self) -> Result<Self, PhgError> {
        match (self, other) {
            (Coeff::Scalar(a), b) => Ok(b.scale(a)),
            (a, Coeff::Scalar(b)) => Ok(a.scale(b)),
            _ => Err(PhgError::Unsupported("matrix × matrix product of series")),
        }
    }

    pub fn to_f64(&self) -> Coeff<f64> {
        match self {
            Coeff::Scalar(a) => Coeff::Scalar(a.to_f64_lossy()),
            Coeff::Matrix(m) => Coeff::Matrix(SymMat {
                dim: m.dim,
                data: m.data.iter().map(Scalar::to_f64_lossy).collect(),
            }),
        }
    }
}

/// Truncated expansion `Σ_{k_min ≤ k ≤ M} Σ_ℓ a_{kℓ} x^k log(x)^ℓ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogSeries<T> {
    shape: Shape,
    k_min: i64,
    trunc: i64,
    terms: BTreeMap<(i64, u32), Coeff<T>>,
}

pub type ExactSeries = LogSeries<Rational>;
pub type FloatSeries = LogSeries<f64>;

impl<T: Scalar> LogSeries<T> {
    /// The zero series known exactly on `k_min ≤ k ≤ trunc`.
    pub fn zero(shape: Shape, k_min: i64, trunc: i64) -> Self {
        LogSeries {
            shape,
            k_min,
            trunc,
            terms: BTreeMap::new(),
        }
    }

    /// Scalar series from `(k, ℓ, c)` triples.
    pub fn scalar(k_min: i64, trunc: i64, terms: &[(i64, u32, T)]) -> Result<Self, PhgError> {
        let mut s = Self::zero(Shape::Scalar, k_min, trunc);
        for (k, l, c) in terms {
            s.insert(*k, *l, Coeff::Scalar(c.clone()))?;
        }
        Ok(s)
    }

    /// Adds `c x^k log^ℓ x` to the series.
    pub fn insert(&mut self, k: i64, l: u32, c: Coeff<T>) -> Result<(), PhgError> {
        if c.shape() != self.shape {
            return Err(PhgError::Dimension(self.shape, c.shape()));
        }
        if k > self.trunc {
            return Err(PhgError::Unknown {
                k,
                trunc: self.trunc,
            });
        }
        if k < self.k_min {
            return Err(PhgError::BelowMin {
                k,
                k_min: self.k_min,
            });
        }
        let entry = self
            .terms
            .entry((k, l))
            .or_insert_with(|| Coeff::zero(c.shape()));
        *entry = entry.add(&c);
        if entry.is_zero() {
            self.terms.remove(&(k, l));
        }
        Ok(())
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn k_min(&self) -> i64 {
        self.k_min
    }

    pub fn truncation_order(&self) -> i64 {
        self.trunc
    }

    /// Nonzero terms in `(k, ℓ)` order.
    pub fn terms(&self) -> impl Iterator<Item = (i64, u32, &Coeff<T>)> {
        self.terms.iter().map(|(&(k, l), c)| (k, l, c))
    }

    /// Highest log power with a nonzero coefficient.
    pub fn max_log_power(&self) -> u32 {
        self.terms.keys().map(|&(_, l)| l).max().unwrap_or(0)
    }

    /// Coefficient of `x^k log^ℓ x`; asking above the truncation order is an error.
    pub fn coefficient(&self, k: i64, l: u32) -> Result<Coeff<T>, PhgError> {
        if k > self.trunc {
            return Err(PhgError::Unknown {
                k,
                trunc: self.trunc,
            });
        }
        Ok(self
            .terms
            .get(&(k, l))
            .cloned()
            .unwrap_or_else(|| Coeff::zero(self.shape)))
    }

    /// Scalar coefficient shortcut.
    pub fn scalar_coefficient(&self, k: i64, l: u32) -> Result<T, PhgError> {
        match self.coefficient(k, l)? {
            Coeff::Scalar(s) => Ok(s),
            Coeff::Matrix(_) => Err(PhgError::Dimension(Shape::Scalar, self.shape)),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self, PhgError> {
        if self.shape != other.shape {
            return Err(PhgError::Dimension(self.shape, other.shape));
        }
        let trunc = self.trunc.min(other.trunc);
        let mut out = Self::zero(self.shape, self.k_min.min(other.k_min), trunc);
        for (k, l, c) in self.terms().chain(other.terms()) {
            if k <= trunc {
                out.insert(k, l, c.clone())?;
            }
        }
        Ok(out)
    }

    pub fn neg(&self) -> Self {
        self.scale(&(T::zero() - T::one()))
    }

    pub fn sub(&self, other: &Self) -> Result<Self, PhgError> {
        self.add(&other.neg())
    }

    pub fn scale(&self, s: &T) -> Self {
        let mut out = Self::zero(self.shape, self.k_min, self.trunc);
        for (k, l, c) in self.terms() {
            let v = c.scale(s);
            if !v.is_zero() {
                out.terms.insert((k, l), v);
            }
        }
        out
    }

    /// Cauchy product; the result is known up to `min(a.M + b.k_min, b.M + a.k_min)`.
    pub fn mul(&self, other: &Self) -> Result<Self, PhgError> {
        let shape = match (self.shape, other.shape) {
            (Shape::Scalar, s) | (s, Shape::Scalar) => s,
            _ => return Err(PhgError::Unsupported("matrix × matrix product of series")),
        };
        let trunc = (self.trunc + other.k_min).min(other.trunc + self.k_min);
        let mut out = Self::zero(shape, self.k_min + other.k_min, trunc);
        for (ka, la, ca) in self.terms() {
            for (kb, lb, cb) in other.terms() {
                if ka + kb <= trunc {
                    out.insert(ka + kb, la + lb, ca.mul(cb)?)?;
                }
            }
        }
        Ok(out)
    }

    pub fn to_f64(&self) -> FloatSeries {
        LogSeries {
            shape: self.shape,
            k_min: self.k_min,
            trunc: self.trunc,
            terms: self
                .terms
                .iter()
                .map(|(key, c)| (*key, c.to_f64()))
                .collect(),
        }
    }

    /// Partial sum at `x ∈ (0, radius]`; the truncation error is `O(x^{M+1} log^L x)`.
    pub fn eval(&self, x: f64) -> Result<Coeff<f64>, PhgError> {
        if !(x > 0.0) || !x.is_finite() {
            return Err(PhgError::Domain(x));
        }
        let lx = x.ln();
        let mut acc = Coeff::<f64>::zero(self.shape);
        for (k, l, c) in self.terms() {
            let w = x.powi(k as i32) * lx.powi(l as i32);
            acc = acc.add(&c.to_f64().scale(&w));
        }
        Ok(acc)
    }

    /// Like [`eval`](Self::eval) but rejects points beyond `radius`.
    pub fn eval_within(&self, x: f64, radius: f64) -> Result<Coeff<f64>, PhgError> {
        if x > radius {
            return Err(PhgError::Domain(x));
        }
        self.eval(x)
    }

    /// Scalar evaluation shortcut.
    pub fn eval_scalar(&self, x: f64) -> Result<f64, PhgError> {
        match self.eval(x)? {
            Coeff::Scalar(v) => Ok(v),
            Coeff::Matrix(_) => Err(PhgError::Dimension(Shape::Scalar, self.shape)),
        }
    }
}

impl FloatSeries {
    /// Substitutes `x = δ·x̃` and re-expands `[log δ + log x̃]^ℓ` binomially.
    pub fn dilate(&self, delta: f64) -> Result<FloatSeries, PhgError> {
        if !(delta > 0.0) {
            return Err(PhgError::Domain(delta));
        }
        let ld = delta.ln();
        let mut out = Self::zero(self.shape, self.k_min, self.trunc);
        for (k, l, c) in self.terms() {
            let dk = delta.powi(k as i32);
            for j in 0..=l {
                let w = binomial(l, j) * ld.powi((l - j) as i32) * dk;
                if w != 0.0 {
                    out.insert(k, j, c.scale(&w))?;
                }
            }
        }
        Ok(out)
    }
}

/// Binomial coefficient as `f64`.
pub fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1))
}

// ---------------------------------------------------------------------------
// JSON representation: {"k_min": int, "trunc": int, "terms": [{"k","l","c"}]}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum CoeffJson {
    Text(String),
    Number(f64),
    Matrix(Vec<Vec<CoeffJson>>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TermJson {
    k: i64,
    l: u32,
    c: CoeffJson,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SeriesJson {
    k_min: i64,
    trunc: i64,
    terms: Vec<TermJson>,
}

/// Coefficient types with a textual JSON form.
pub trait JsonScalar: Scalar {
    fn to_json(&self) -> serde_json::Value;
    fn parse_json(text: &str) -> Result<Self, PhgError>;
}

impl JsonScalar for Rational {
    fn to_json(&self) -> serde_json::Value {
        serde_json::Value::String(self.to_string())
    }
    fn parse_json(text: &str) -> Result<Self, PhgError> {
        Rational::from_str(text.trim())
            .map_err(|_| PhgError::Parse(format!("bad rational {text:?}")))
    }
}

impl JsonScalar for f64 {
    fn to_json(&self) -> serde_json::Value {
        serde_json::json!(self)
    }
    fn parse_json(text: &str) -> Result<Self, PhgError> {
        if let Ok(v) = text.trim().parse::<f64>() {
            return Ok(v);
        }
        Rational::parse_json(text).map(|r| r.to_f64_lossy())
    }
}

fn scalar_from_json<T: JsonScalar>(c: &CoeffJson) -> Result<T, PhgError> {
    match c {
        CoeffJson::Text(s) => T::parse_json(s),
        CoeffJson::Number(v) => T::parse_json(&v.to_string()),
        CoeffJson::Matrix(_) => Err(PhgError::Parse("nested matrix entry".into())),
    }
}

impl<T: JsonScalar> LogSeries<T> {
    pub fn to_json(&self) -> serde_json::Value {
        let terms: Vec<serde_json::Value> = self
            .terms()
            .map(|(k, l, c)| {
                let c = match c {
                    Coeff::Scalar(s) => s.to_json(),
                    Coeff::Matrix(m) => serde_json::Value::Array(
                        m.rows()
                            .iter()
                            .map(|r| {
                                serde_json::Value::Array(
                                    r.iter().map(JsonScalar::to_json).collect(),
                                )
                            })
                            .collect(),
                    ),
                };
                serde_json::json!({"k": k, "l": l, "c": c})
            })
            .collect();
        serde_json::json!({"k_min": self.k_min, "trunc": self.trunc, "terms": terms})
    }

    pub fn to_json_string(&self) -> String {
        self.to_json().to_string()
    }

    pub fn from_json_str(text: &str) -> Result<Self, PhgError> {
        let raw: SeriesJson =
            serde_json::from_str(text).map_err(|e| PhgError::Parse(e.to_string()))?;
        let mut coeffs = Vec::with_capacity(raw.terms.len());
        for t in &raw.terms {
            let c = match &t.c {
                CoeffJson::Matrix(rows) => {
                    let rows = rows
                        .iter()
                        .map(|r| {
                            r.iter()
                                .map(scalar_from_json::<T>)
                                .collect::<Result<Vec<_>, _>>()
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    Coeff::Matrix(SymMat::from_rows(rows)?)
                }
                other => Coeff::Scalar(scalar_from_json::<T>(other)?),
            };
            coeffs.push((t.k, t.l, c));
        }
        let shape = coeffs
            .first()
            .map(|(_, _, c)| c.shape())
            .unwrap_or(Shape::Scalar);
        let mut s = Self::zero(shape, raw.k_min, raw.trunc);
        for (k, l, c) in coeffs {
            s.insert(k, l, c)?;
        }
        Ok(s)
    }
}

impl<T: Scalar + fmt::Display> fmt::Display for LogSeries<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (k, l, c) in self.terms() {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            match c {
                Coeff::Scalar(s) => write!(f, "({s})")?,
                Coeff::Matrix(m) => write!(f, "[{}x{}]", m.dim, m.dim)?,
            }
            write!(f, "x^{k}")?;
            if l > 0 {
                write!(f, "·log^{l}x")?;
            }
        }
        if first {
            write!(f, "0")?;
        }
        write!(f, " + O(x^{})", self.trunc + 1)
    }
}

impl<T: Scalar> Default for LogSeries<T> {
    fn default() -> Self {
        Self::zero(Shape::Scalar, 0, 0)
    }
}

/// `Rational::one()` re-exported for callers that avoid importing num-traits.
pub fn one() -> Rational {
    Rational::one()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(terms: &[(i64, u32, i64)], trunc: i64) -> ExactSeries {
        let k_min = terms.iter().map(|t| t.0).min().unwrap_or(0).min(0);
        let t: Vec<_> = terms.iter().map(|&(k, l, c)| (k, l, rat(c, 1))).collect();
        ExactSeries::scalar(k_min, trunc, &t).unwrap()
    }

    #[test]
    fn add_cancels() {
        let a = s(&[(1, 0, 1), (2, 1, 1)], 4);
        let b = s(&[(0, 0, 1), (1, 0, -1)], 4);
        assert_eq!(a.add(&b).unwrap(), s(&[(0, 0, 1), (2, 1, 1)], 4));
    }

    #[test]
    fn add_identity_and_scaling() {
        let a = s(&[(1, 0, 3), (2, 2, -1)], 5);
        let zero = ExactSeries::zero(Shape::Scalar, 0, 5);
        assert_eq!(a.add(&zero).unwrap(), a);
        let inv = ExactSeries::scalar(-1, 3, &[(-1, 0, rat(1, 1))]).unwrap();
        let two = ExactSeries::scalar(-1, 3, &[(-1, 0, rat(2, 1))]).unwrap();
        assert_eq!(inv.add(&inv).unwrap(), two);
    }

    #[test]
    fn add_takes_min_truncation() {
        let a = s(&[(0, 0, 1), (3, 0, 1)], 3);
        let b = s(&[(0, 0, 1)], 2);
        let c = a.add(&b).unwrap();
        assert_eq!(c.truncation_order(), 2);
        assert!(c.coefficient(3, 0).is_err());
    }

    #[test]
    fn add_shape_mismatch() {
        let a = s(&[(0, 0, 1)], 2);
        let mut b = ExactSeries::zero(Shape::Matrix(2), 0, 2);
        b.insert(
            0,
            0,
            Coeff::Matrix(
                SymMat::from_rows(vec![vec![rat(1, 1), rat(0, 1)], vec![rat(0, 1), rat(1, 1)]])
                    .unwrap(),
            ),
        )
        .unwrap();
        assert!(matches!(a.add(&b), Err(PhgError::Dimension(..))));
    }

    #[test]
    fn products() {
        let p = s(&[(0, 0, 1), (1, 0, 1)], 4)
            .mul(&s(&[(0, 0, 1), (1, 0, -1)], 4))
            .unwrap();
        assert_eq!(p, s(&[(0, 0, 1), (2, 0, -1)], 4));
        let q = s(&[(1, 1, 1)], 4).mul(&s(&[(1, 1, 1)], 4)).unwrap();
        assert_eq!(q.scalar_coefficient(2, 2).unwrap(), rat(1, 1));
        let inv = ExactSeries::scalar(-1, 4, &[(-1, 0, rat(1, 1))]).unwrap();
        let cube = ExactSeries::scalar(0, 4, &[(3, 0, rat(1, 1))]).unwrap();
        let r = inv.mul(&cube).unwrap();
        assert_eq!(r.scalar_coefficient(2, 0).unwrap(), rat(1, 1));
        // honest truncation: min(4 + 0, 4 - 1)
        assert_eq!(r.truncation_order(), 3);
    }

    #[test]
    fn matrix_products() {
        let m = SymMat::from_rows(vec![vec![rat(1, 1), rat(2, 1)], vec![rat(2, 1), rat(3, 1)]])
            .unwrap();
        let mut a = ExactSeries::zero(Shape::Matrix(2), 0, 3);
        a.insert(2, 0, Coeff::Matrix(m.clone())).unwrap();
        let x = s(&[(1, 0, 2)], 3);
        let p = x.mul(&a).unwrap();
        assert_eq!(
            p.coefficient(3, 0).unwrap(),
            Coeff::Matrix(m.map(|v| v.clone() * rat(2, 1)))
        );
        assert!(matches!(a.mul(&a), Err(PhgError::Unsupported(_))));
    }

    #[test]
    fn dilate_examples() {
        let d = 0.37_f64;
        let a = FloatSeries::scalar(0, 4, &[(2, 1, 1.0)])
            .unwrap()
            .dilate(d)
            .unwrap();
        assert!((a.scalar_coefficient(2, 1).unwrap() - d * d).abs() < 1e-15);
        assert!((a.scalar_coefficient(2, 0).unwrap() - d * d * d.ln()).abs() < 1e-15);
        let b = FloatSeries::scalar(0, 4, &[(2, 0, 1.0)]).unwrap();
        assert_eq!(b.dilate(1.0).unwrap(), b);
        let c = FloatSeries::scalar(0, 4, &[(3, 2, 1.0)])
            .unwrap()
            .dilate(d)
            .unwrap();
        let d3 = d.powi(3);
        assert!((c.scalar_coefficient(3, 2).unwrap() - d3).abs() < 1e-15);
        assert!((c.scalar_coefficient(3, 1).unwrap() - 2.0 * d3 * d.ln()).abs() < 1e-15);
        assert!((c.scalar_coefficient(3, 0).unwrap() - d3 * d.ln().powi(2)).abs() < 1e-15);
    }

    #[test]
    fn eval_examples() {
        assert_eq!(s(&[(0, 0, 1), (1, 0, 1)], 2).eval_scalar(0.5).unwrap(), 1.5);
        let inv = ExactSeries::scalar(-1, 2, &[(-1, 0, rat(1, 1))]).unwrap();
        assert_eq!(inv.eval_scalar(0.25).unwrap(), 4.0);
        assert_eq!(s(&[(1, 1, 1)], 2).eval_scalar(1.0).unwrap(), 0.0);
        assert!(matches!(inv.eval(0.0), Err(PhgError::Domain(_))));
        assert!(matches!(inv.eval(-1.0), Err(PhgError::Domain(_))));
    }

    #[test]
    fn coefficient_examples() {
        let a = s(&[(0, 0, 1), (2, 0, 3)], 3);
        assert_eq!(a.scalar_coefficient(2, 0).unwrap(), rat(3, 1));
        assert_eq!(a.scalar_coefficient(1, 0).unwrap(), rat(0, 1));
        assert_eq!(
            s(&[(2, 1, 1)], 3).scalar_coefficient(2, 1).unwrap(),
            rat(1, 1)
        );
        assert!(matches!(
            a.coefficient(4, 0),
            Err(PhgError::Unknown { k: 4, trunc: 3 })
        ));
    }

    #[test]
    fn insert_above_truncation_is_rejected() {
        let mut a = ExactSeries::zero(Shape::Scalar, 0, 2);
        assert!(a.insert(3, 0, Coeff::Scalar(rat(1, 1))).is_err());
    }

    #[test]
    fn json_round_trip() {
        let a = ExactSeries::scalar(-2, 3, &[(-2, 0, rat(2, 1)), (1, 1, rat(-3, 7))]).unwrap();
        let text = a.to_json_string();
        assert!(text.contains("\"-3/7\""));
        assert_eq!(ExactSeries::from_json_str(&text).unwrap(), a);
        let m = r#"{"k_min":0,"trunc":2,"terms":[{"k":2,"l":0,"c":[["1","1/2"],["1/2","0"]]}]}"#;
        let b = ExactSeries::from_json_str(m).unwrap();
        assert_eq!(b.shape(), Shape::Matrix(2));
        assert!(ExactSeries::from_json_str(
            r#"{"k_min":0,"trunc":2,"terms":[{"k":2,"l":0,"c":[["1","2"],["0","0"]]}]}"#
        )
        .is_err());
    }

    fn arb_series(trunc: i64) -> impl Strategy<Value = ExactSeries> {
        prop::collection::vec((-1i64..=trunc, 0u32..3, -6i64..6, 1i64..5), 0..6).prop_map(
            move |ts| {
                let mut a = ExactSeries::zero(Shape::Scalar, -1, trunc);
                for (k, l, p, q) in ts {
                    a.insert(k, l, Coeff::Scalar(rat(p, q))).unwrap();
                }
                a
            },
        )
    }

    fn agree_to(a: &ExactSeries, b: &ExactSeries, order: i64) -> bool {
        let keys: std::collections::BTreeSet<(i64, u32)> = a
            .terms()
            .chain(b.terms())
            .map(|(k, l, _)| (k, l))
            .filter(|&(k, _)| k <= order)
            .collect();
        keys.into_iter()
            .all(|(k, l)| a.coefficient(k, l).unwrap() == b.coefficient(k, l).unwrap())
    }

    proptest! {
        #[test]
        fn ring_axioms(a in arb_series(4), b in arb_series(4), c in arb_series(4)) {
            prop_assert_eq!(a.add(&b).unwrap(), b.add(&a).unwrap());
            prop_assert_eq!(a.add(&b).unwrap().add(&c).unwrap(), a.add(&b.add(&c).unwrap()).unwrap());
            let ab = a.mul(&b).unwrap();
            prop_assert!(agree_to(&ab, &b.mul(&a).unwrap(), ab.truncation_order()));
            let l = a.mul(&b).unwrap().mul(&c).unwrap();
            let r = a.mul(&b.mul(&c).unwrap()).unwrap();
            let order = l.truncation_order().min(r.truncation_order());
            prop_assert!(agree_to(&l, &r, order));
            let d1 = a.mul(&b.add(&c).unwrap()).unwrap();
            let d2 = a.mul(&b).unwrap().add(&a.mul(&c).unwrap()).unwrap();
            let order = d1.truncation_order().min(d2.truncation_order());
            prop_assert!(agree_to(&d1, &d2, order));
        }

        #[test]
        fn dilation_composes(a in arb_series(4), d1 in 0.1f64..2.0, d2 in 0.1f64..2.0) {
            let f = a.to_f64();
            let lhs = f.dilate(d1).unwrap().dilate(d2).unwrap();
            let rhs = f.dilate(d1 * d2).unwrap();
            for (k, l, c) in lhs.terms().chain(rhs.terms()) {
                let _ = c;
                let x = lhs.scalar_coefficient(k, l).unwrap();
                let y = rhs.scalar_coefficient(k, l).unwrap();
                prop_assert!((x - y).abs() < 1e-9 * (1.0 + x.abs()));
            }
        }

        #[test]
        fn dilation_matches_evaluation(a in arb_series(4), d in 0.1f64..2.0, x in 0.05f64..1.0) {
            let f = a.to_f64();
            let lhs = f.dilate(d).unwrap().eval_scalar(x).unwrap();
            let rhs = f.eval_scalar(d * x).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + rhs.abs()));
        }
    }
}
