//! Recovery of a metric's boundary expansion from renormalized areas.
//!
//! An [`AreaOracle`] answers "what is the renormalized area of the minimal
//! surface bounded by this curve, dilated by `δ` about `p`". From such answers
//! the routines here detect a conformal frame for `ω₀(p)` and then recover
//! `ω_k(p)` and the log coefficients `ω_{kℓ}(p)` order by order. Each order is
//! read off the `δ`-expansion of `D(δ) = A(δ) − A_known(δ)`, where `A_known`
//! re-runs the same pipeline on the part of the jet recovered so far, so that
//! every lower-order contribution and most discretization error cancel.

pub mod fpdelta;
pub mod oracle;
pub mod recover;

use nalgebra::DMatrix;
use thiserror::Error;

pub use fpdelta::{
    fp_delta_extract, fp_delta_select, fp_delta_symbolic, geometric_nodes, DerivativeStencil,
    FpEstimate, Ladder, SymbolicFp,
};
pub use oracle::{default_threads, parallel_map, AreaAnswer, AreaOracle, AreaQuery};
pub use recover::{
    calibrate_constants, detect_conformal_frame, recover_component, recover_expansion,
    recover_log_coefficient, recover_trace, BoundaryMetric, Calibration, ComponentEstimate,
    FrameReport, OrderReport, PlaneMeasurement, PlaneSearch, RecoveryConfig, RecoveryFailure,
    RecoveryReport, StageDiagnostic, TraceEstimate,
};

use crate::phg::{Coeff, FloatSeries, Shape, SymMat};
use crate::solver::{MetricJet, OmegaTerm, SolverError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InverseError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("δ-stencil: {0}")]
    Stencil(String),
    #[error("constant check failed: {0}")]
    Integrity(String),
    #[error("degenerate recovery: {0}")]
    Degenerate(String),
    #[error("invalid request: {0}")]
    Invalid(String),
}

impl From<crate::phg::PhgError> for InverseError {
    fn from(e: crate::phg::PhgError) -> Self {
        InverseError::Solver(SolverError::Series(e))
    }
}

fn matrix_of(c: &Coeff<f64>, n: usize) -> DMatrix<f64> {
    match c {
        Coeff::Matrix(m) => DMatrix::from_fn(n, n, |i, j| *m.get(i, j)),
        Coeff::Scalar(v) => DMatrix::identity(n, n) * *v,
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Series of the `i`-th gradient component of every term of the jet.
fn gradient_series(jet: &MetricJet, i: usize) -> FloatSeries {
    let trunc = jet.max_order() as i64 + 1;
    let mut s = FloatSeries::zero(Shape::Matrix(jet.n), 0, trunc);
    for t in jet.terms() {
        if let Some(g) = &t.gradient {
            let m = SymMat::from_rows(g[i].clone()).expect("validated symmetric");
            s.insert(t.k as i64, t.l, Coeff::Matrix(m))
                .expect("order within truncation");
        }
    }
    s
}

/// The jet of `g_δ = F_δ^* g` in the coordinates `(x̃, ỹ)` centred at `p`,
/// where `F_δ(x̃, ỹ) = (δx̃, p + δỹ)`. At `δ = 0` this is the constant model
/// `(dx̃² + ω₀(p))/x̃²`.
pub fn dilate_metric(jet: &MetricJet, p: &[f64], delta: f64) -> Result<MetricJet, InverseError> {
    jet.validate(p)?;
    if !(delta >= 0.0) || delta * 100.0 >= jet.validity_radius {
        return Err(SolverError::ChartOverflow {
            delta,
            radius: jet.validity_radius,
        }
        .into());
    }
    let n = jet.n;
    let mut out = MetricJet::empty(n).with_even_order(jet.even_order);
    out.validity_radius = if delta > 0.0 {
        jet.validity_radius / delta
    } else {
        f64::INFINITY
    };
    if delta == 0.0 {
        return Ok(out.with_term(0, &jet.coefficient(0, 0, p)));
    }
    let values = jet.matrix_series(p).dilate(delta)?;
    let grads: Vec<FloatSeries> = (0..n)
        .map(|i| gradient_series(jet, i).dilate(delta))
        .collect::<Result<_, _>>()?;
    let mut keys: Vec<(i64, u32)> = values.terms().map(|(k, l, _)| (k, l)).collect();
    for g in &grads {
        keys.extend(g.terms().map(|(k, l, _)| (k, l)));
    }
    keys.sort();
    keys.dedup();
    for (k, l) in keys {
        let value = matrix_of(&values.coefficient(k, l)?, n);
        let gradient: Vec<DMatrix<f64>> = grads
            .iter()
            .map(|g| Ok(matrix_of(&g.coefficient(k, l)?, n) * delta))
            .collect::<Result<_, InverseError>>()?;
        let has_gradient = gradient.iter().any(|g| g.amax() != 0.0);
        let term = OmegaTerm {
            k: k as u32,
            l,
            value: rows(&value),
            gradient: has_gradient.then(|| gradient.iter().map(rows).collect()),
        };
        if l == 0 {
            out.omega.push(term);
        } else {
            out.omega_log.push(term);
        }
    }
    Ok(out)
}
