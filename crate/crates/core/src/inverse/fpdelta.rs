//! Finite parts of `δ`-derivatives, `FP_{δ→0⁺} log(δ)^{−a} d^b/dδ^b f(δ)`.
//!
//! After differentiating and dividing by `log(δ)^a`, every term `δ^j log(δ)^p`
//! with `j < 0`, or with `j = 0` and `p > 0`, is divergent and removed; terms
//! with `j > 0` or `p < 0` vanish in the limit. On a single monomial
//! `δ^c log(δ)^d` this gives `b!` when `c = b, d = a`, and `0` when `c ≠ b` or
//! `d < a`. For `c = b, d > a` the derivative also carries a constant term
//! (for instance `d³/dδ³ δ³ log δ = 6 log δ + 11`), which is kept.
//!
//! The numerical path fits samples with the ladder `δ^j log(δ)^p` by least
//! squares and applies the symbolic rule to the fitted ladder. Fitting is
//! linear, so the whole procedure is a fixed weight vector on the samples.

use nalgebra::DMatrix;
use num_traits::{ToPrimitive, Zero};
use serde::Serialize;
use std::collections::BTreeMap;

use super::InverseError;
use crate::phg::{rat, Rational};

/// Outcome of the exact rule on a finite sum of `c · δ^j log(δ)^p`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolicFp {
    pub value: Rational,
    /// Some divergent term was removed.
    pub divergent: bool,
    /// Some term had `j = b` and `p > a`; its constant remainder is included in `value`.
    pub higher_log: bool,
}

/// `d^b/dδ^b` of `Σ c δ^j log(δ)^p`, exactly.
pub fn differentiate(terms: &[(Rational, i64, u32)], b: u32) -> BTreeMap<(i64, u32), Rational> {
    let mut cur: BTreeMap<(i64, u32), Rational> = BTreeMap::new();
    for (c, j, p) in terms {
        *cur.entry((*j, *p)).or_insert_with(Rational::zero) += c.clone();
    }
    for _ in 0..b {
        let mut next: BTreeMap<(i64, u32), Rational> = BTreeMap::new();
        for ((j, p), c) in &cur {
            if *j != 0 {
                *next.entry((j - 1, *p)).or_insert_with(Rational::zero) += c * rat(*j, 1);
            }
            if *p > 0 {
                *next.entry((j - 1, p - 1)).or_insert_with(Rational::zero) +=
                    c * rat(i64::from(*p), 1);
            }
        }
        cur = next.into_iter().filter(|(_, c)| !c.is_zero()).collect();
    }
    cur
}

pub fn fp_delta_symbolic(terms: &[(Rational, i64, u32)], b: u32, a: u32) -> SymbolicFp {
    let derived = differentiate(terms, b);
    let mut value = Rational::zero();
    let mut divergent = false;
    for ((j, p), c) in &derived {
        let q = i64::from(*p) - i64::from(a);
        if *j < 0 || (*j == 0 && q > 0) {
            divergent = true;
        } else if *j == 0 && q == 0 {
            value += c.clone();
        }
    }
    let higher_log = terms
        .iter()
        .any(|(c, j, p)| !c.is_zero() && *j == i64::from(b) && *p > a);
    SymbolicFp {
        value,
        divergent,
        higher_log,
    }
}

/// The family of terms `δ^j log(δ)^p` that the samples are assumed to follow.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Ladder {
    pub terms: Vec<(i32, u32)>,
}

impl Ladder {
    /// All `δ^j log(δ)^p` with `min_power ≤ j ≤ max_power`, `p ≤ max_log`.
    pub fn new(min_power: i32, max_power: i32, max_log: u32) -> Self {
        Ladder {
            terms: (min_power..=max_power)
                .flat_map(|j| (0..=max_log).map(move |p| (j, p)))
                .collect(),
        }
    }

    /// Exactly the given terms, sorted and without repeats.
    pub fn from_terms(terms: impl IntoIterator<Item = (i32, u32)>) -> Self {
        let mut terms: Vec<(i32, u32)> = terms.into_iter().collect();
        terms.sort_unstable();
        terms.dedup();
        Ladder { terms }
    }

    /// The terms of `δ^c log(δ)^d` and its lower logs, together with the
    /// target family `δ^b log(δ)^p` for `p ≤ max(a, d)`. Including the target
    /// family means an absent target term is measured as zero, not assumed.
    pub fn for_monomial(c: i32, d: u32, b: u32, a: u32) -> Self {
        Ladder::from_terms(
            (0..=d)
                .map(|p| (c, p))
                .chain((0..=a.max(d)).map(|p| (b as i32, p))),
        )
    }

    /// The expansion of an area difference that starts at `δ^k`: powers
    /// `k..=k+guard`, with up to `log_low` logs below `δ^{2k}` and up to
    /// `log_high` logs from `δ^{2k}` on, where products of two order-`k`
    /// terms first appear.
    pub fn for_order(k: i32, guard: i32, log_low: u32, log_high: u32) -> Self {
        Ladder {
            terms: (k..=k + guard)
                .flat_map(|j| {
                    let top = if j < 2 * k { log_low } else { log_high };
                    (0..=top).map(move |p| (j, p))
                })
                .collect(),
        }
    }

    pub fn basis(&self) -> &[(i32, u32)] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

fn basis_value(j: i32, p: u32, d: f64) -> f64 {
    d.powi(j) * d.ln().powi(p as i32)
}

/// Weights `w` with `Σ wᵢ f(δᵢ) = FP_{δ→0⁺} log(δ)^{−a} d^b f/dδ^b` for every
/// `f` in the span of the ladder.
#[derive(Debug, Clone, Serialize)]
pub struct DerivativeStencil {
    pub order: u32,
    pub log_power: u32,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub ladder: Ladder,
    /// Condition number of the column-scaled fit.
    pub condition: f64,
    /// Weights applied to the fitted coefficients of divergent ladder terms.
    #[serde(skip)]
    divergence_weights: Vec<Vec<f64>>,
}

/// Largest accepted condition number of the ladder fit.
pub const MAX_STENCIL_CONDITION: f64 = 1e13;

impl DerivativeStencil {
    pub fn new(
        order: u32,
        log_power: u32,
        nodes: &[f64],
        ladder: &Ladder,
    ) -> Result<Self, InverseError> {
        let basis = ladder.basis().to_vec();
        if nodes.iter().any(|&d| !(d > 0.0 && d < 1.0)) {
            return Err(InverseError::Stencil("δ nodes must lie in (0, 1)".into()));
        }
        if nodes.len() < basis.len() + 1 || nodes.len() < order as usize + 2 {
            return Err(InverseError::Stencil(format!(
                "{} nodes cannot resolve a ladder of {} terms at order {order}",
                nodes.len(),
                basis.len()
            )));
        }
        let n = nodes.len();
        let mut a = DMatrix::from_fn(n, basis.len(), |i, c| {
            basis_value(basis[c].0, basis[c].1, nodes[i])
        });
        let scales: Vec<f64> = (0..basis.len()).map(|c| a.column(c).norm()).collect();
        for (c, s) in scales.iter().enumerate() {
            a.column_mut(c).scale_mut(1.0 / s);
        }
        let svd = a.svd(true, true);
        let condition = svd.singular_values.max() / svd.singular_values.min();
        if !condition.is_finite() || condition > MAX_STENCIL_CONDITION {
            return Err(InverseError::Stencil(format!(
                "ladder fit is ill-conditioned ({condition:.2e})"
            )));
        }
        let pinv = svd
            .pseudo_inverse(0.0)
            .map_err(|e| InverseError::Stencil(e.to_string()))?;
        // rows of `coef` map samples to the unscaled ladder coefficients
        let coef = DMatrix::from_fn(basis.len(), n, |c, i| pinv[(c, i)] / scales[c]);
        let fp: Vec<f64> = basis
            .iter()
            .map(|&(j, p)| {
                fp_delta_symbolic(&[(rat(1, 1), i64::from(j), p)], order, log_power)
                    .value
                    .to_f64()
                    .unwrap()
            })
            .collect();
        let weights: Vec<f64> = (0..n)
            .map(|i| (0..basis.len()).map(|c| fp[c] * coef[(c, i)]).sum())
            .collect();
        let divergence_weights = basis
            .iter()
            .enumerate()
            .filter(|(_, &(j, p))| {
                fp_delta_symbolic(&[(rat(1, 1), i64::from(j), p)], order, log_power).divergent
            })
            .map(|(c, _)| (0..n).map(|i| coef[(c, i)] * scales[c]).collect())
            .collect();
        Ok(DerivativeStencil {
            order,
            log_power,
            nodes: nodes.to_vec(),
            weights,
            ladder: ladder.clone(),
            condition,
            divergence_weights,
        })
    }

    pub fn apply(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// Largest divergent ladder component present in the samples, measured in
    /// units of the sampled values.
    pub fn divergence(&self, values: &[f64]) -> f64 {
        self.divergence_weights
            .iter()
            .map(|w| w.iter().zip(values).map(|(a, b)| a * b).sum::<f64>().abs())
            .fold(0.0, f64::max)
    }
}

/// Numerical finite-part derivative with its error estimate.
#[derive(Debug, Clone, Serialize)]
pub struct FpEstimate {
    pub value: f64,
    /// Difference to the estimate from the smaller-`δ` sub-stencil.
    pub error: f64,
    pub divergent: bool,
    pub stencil: DerivativeStencil,
}

/// Relative size below which a fitted divergent component counts as noise.
pub const DIVERGENCE_FLOOR: f64 = 1e-7;

/// `FP_{δ→0⁺} log(δ)^{−a} d^b/dδ^b` from samples `(δᵢ, f(δᵢ))`.
///
/// The error estimate compares the full stencil with one that drops the
/// largest quarter of the nodes; a difference above `tol` is an error.
pub fn fp_delta_extract(
    samples: &[(f64, f64)],
    b: u32,
    a: u32,
    ladder: &Ladder,
    tol: f64,
) -> Result<FpEstimate, InverseError> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|x, y| x.0.total_cmp(&y.0));
    let nodes: Vec<f64> = sorted.iter().map(|s| s.0).collect();
    let values: Vec<f64> = sorted.iter().map(|s| s.1).collect();
    if nodes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(InverseError::Stencil("δ nodes must be distinct".into()));
    }
    let stencil = DerivativeStencil::new(b, a, &nodes, ladder)?;
    let value = stencil.apply(&values);
    let keep = nodes.len() - nodes.len() / 4;
    let error = if keep > ladder.len() && keep < nodes.len() {
        let sub = DerivativeStencil::new(b, a, &nodes[..keep], ladder)?;
        (sub.apply(&values[..keep]) - value).abs()
    } else {
        0.0
    };
    if !(error <= tol) {
        return Err(InverseError::Stencil(format!("δ-extrapolation does not settle: estimates differ by {error:.3e} (tolerance {tol:.1e})")));
    }
    let scale = values
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let divergent = stencil.divergence(&values) > DIVERGENCE_FLOOR * scale;
    Ok(FpEstimate {
        value,
        error,
        divergent,
        stencil,
    })
}

/// [`fp_delta_extract`] with each candidate ladder on the same samples,
/// keeping the estimate with the smallest error. Candidates usually differ in
/// how many powers beyond the target they fit: too few leave truncation
/// error, too many amplify noise.
pub fn fp_delta_select(
    samples: &[(f64, f64)],
    b: u32,
    a: u32,
    ladders: &[Ladder],
    tol: f64,
) -> Result<FpEstimate, InverseError> {
    let mut best: Option<FpEstimate> = None;
    let mut last_err = None;
    for ladder in ladders {
        match fp_delta_extract(samples, b, a, ladder, f64::INFINITY) {
            Ok(est) if best.as_ref().map_or(true, |b| est.error < b.error) => best = Some(est),
            Ok(_) => {}
            Err(e) => last_err = Some(e),
        }
    }
    match best {
        Some(est) if est.error <= tol => Ok(est),
        Some(est) => Err(InverseError::Stencil(format!(
            "δ-extrapolation does not settle: estimates differ by {:.3e} (tolerance {tol:.1e})",
            est.error
        ))),
        None => {
            Err(last_err.unwrap_or_else(|| InverseError::Stencil("no candidate ladder".into())))
        }
    }
}

/// `count` nodes in geometric progression from `largest` down to `smallest`.
pub fn geometric_nodes(largest: f64, smallest: f64, count: usize) -> Vec<f64> {
    let ratio = (smallest / largest).powf(1.0 / (count.max(2) - 1) as f64);
    (0..count).map(|i| largest * ratio.powi(i as i32)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn monomial(c: i64, d: u32) -> Vec<(Rational, i64, u32)> {
        vec![(rat(1, 1), c, d)]
    }

    fn factorial(b: u32) -> i64 {
        (1..=i64::from(b)).product()
    }

    #[test]
    fn case_table() {
        for c in 0..=4i64 {
            for d in 0..=2u32 {
                for b in 0..=4u32 {
                    for a in 0..=2u32 {
                        let fp = fp_delta_symbolic(&monomial(c, d), b, a);
                        if c == i64::from(b) && d == a {
                            assert_eq!(fp.value, rat(factorial(b), 1));
                        } else if c != i64::from(b) || d < a {
                            assert!(fp.value.is_zero(), "c={c} d={d} b={b} a={a}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn documented_examples() {
        assert_eq!(fp_delta_symbolic(&monomial(2, 0), 2, 0).value, rat(2, 1));
        assert_eq!(fp_delta_symbolic(&monomial(3, 1), 3, 1).value, rat(6, 1));
        // δ² + δ³ log δ: the third derivative is 6 log δ + 11
        let mixed = vec![(rat(1, 1), 2, 0), (rat(1, 1), 3, 1)];
        let fp = fp_delta_symbolic(&mixed, 3, 0);
        assert!(fp.divergent && fp.higher_log);
        assert_eq!(fp.value, rat(11, 1));
        let derived = differentiate(&mixed, 3);
        assert_eq!(derived.get(&(0, 1)), Some(&rat(6, 1)));
    }

    #[test]
    fn stencil_reproduces_polynomials() {
        let nodes = geometric_nodes(0.5, 0.05, 12);
        for b in 0..=3u32 {
            let st =
                DerivativeStencil::new(b, 0, &nodes, &Ladder::new(0, b as i32 + 3, 0)).unwrap();
            for deg in 0..=(b + 3) {
                let vals: Vec<f64> = nodes.iter().map(|d| d.powi(deg as i32)).collect();
                let expect = if deg == b { factorial(b) as f64 } else { 0.0 };
                assert!((st.apply(&vals) - expect).abs() < 1e-8, "b={b} deg={deg}");
            }
        }
    }

    #[test]
    fn stencil_matches_table() {
        let nodes = geometric_nodes(0.6, 0.02, 24);
        for c in 0..=4i32 {
            for d in 0..=2u32 {
                let samples: Vec<(f64, f64)> =
                    nodes.iter().map(|&x| (x, basis_value(c, d, x))).collect();
                for b in 0..=4u32 {
                    for a in 0..=2u32 {
                        let ladder = Ladder::for_monomial(c, d, b, a);
                        let est = fp_delta_extract(&samples, b, a, &ladder, 1e-6).unwrap();
                        let exact = fp_delta_symbolic(&monomial(i64::from(c), d), b, a)
                            .value
                            .to_f64()
                            .unwrap();
                        assert!(
                            (est.value - exact).abs() < 1e-6,
                            "c={c} d={d} b={b} a={a}: {}",
                            est.value
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn selection_prefers_the_settled_ladder() {
        // δ² + δ⁵: a ladder stopping at δ⁴ leaves a truncation error that the
        // longer candidate removes
        let nodes = geometric_nodes(0.3, 0.03, 12);
        let samples: Vec<(f64, f64)> = nodes.iter().map(|&x| (x, x * x + x.powi(5))).collect();
        let short = Ladder::new(2, 4, 0);
        let long = Ladder::new(2, 5, 0);
        let est = fp_delta_select(&samples, 2, 0, &[short.clone(), long.clone()], 1e-8).unwrap();
        assert_eq!(est.stencil.ladder, long);
        assert!((est.value - 2.0).abs() < 1e-9);
        assert!(fp_delta_select(&samples, 2, 0, &[short], 1e-8).is_err());
    }

    #[test]
    fn flags_divergence_and_rejects_bad_nodes() {
        let nodes = geometric_nodes(0.5, 0.05, 16);
        let samples: Vec<(f64, f64)> = nodes
            .iter()
            .map(|&x| (x, x * x + x.powi(3) * x.ln()))
            .collect();
        let ladder = Ladder::from_terms([(2, 0), (3, 0), (3, 1)]);
        let est = fp_delta_extract(&samples, 3, 0, &ladder, 1e-6).unwrap();
        assert!(est.divergent);
        assert!((est.value - 11.0).abs() < 1e-6, "{}", est.value);
        let clean: Vec<(f64, f64)> = nodes.iter().map(|&x| (x, x * x)).collect();
        assert!(
            !fp_delta_extract(&clean, 2, 0, &ladder, 1e-6)
                .unwrap()
                .divergent
        );
        assert!(DerivativeStencil::new(2, 0, &[0.1, 0.2], &Ladder::new(0, 3, 0)).is_err());
        // the full rectangle of powers and logs cannot be told apart in double precision
        assert!(DerivativeStencil::new(
            4,
            0,
            &geometric_nodes(0.6, 0.02, 32),
            &Ladder::new(0, 6, 2)
        )
        .is_err());
        assert!(DerivativeStencil::new(
            2,
            0,
            &[0.1, 1.5, 0.3, 0.4, 0.5, 0.6],
            &Ladder::new(0, 3, 0)
        )
        .is_err());
    }
}
