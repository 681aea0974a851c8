//! Frame detection and order-by-order recovery of `ω_k(p)` and `ω_{kℓ}(p)`.
//!
//! Every stage queries round and perturbed unit circles at a geometric ladder
//! of dilations `δ`, in the true metric and in the model built from what has
//! been recovered so far, and applies [`fp_delta_extract`] to the difference.
//! In a frame where `ω̂₀(p) = Id`, with `p_k = FP log(δ)^{−ℓ} d^k/dδ^k`:
//!
//! * the round circle gives `p_k D = (k!/2) · total · tr ω̂_{kℓ}` on the plane;
//! * the `cos 2s` boundary perturbation gives `C · (ω̂₁₁ − ω̂₂₂)` for its
//!   `t`-derivative, with `C` calibrated on a planted `diag(1, 0)`;
//! * the `sin 2s` perturbation (the same mode rotated by 45°) gives `2C · ω̂₁₂`.

use nalgebra::{DMatrix, DVector};
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::fpdelta::{fp_delta_select, geometric_nodes, FpEstimate, Ladder};
use super::oracle::{AreaOracle, AreaQuery};
use super::InverseError;
use crate::hemisphere::trace_recovery_constants;
use crate::hypgeom::i_km;
use crate::solver::{BoundaryCurve, MetricJet};

/// Tunable parameters of the recovery pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoveryConfig {
    pub m_star: u32,
    /// Largest and smallest dilation of the `δ` ladder.
    pub delta_max: f64,
    pub delta_min: f64,
    /// Nodes beyond the number of ladder terms.
    pub extra_nodes: usize,
    /// Most powers beyond `δ^k` fitted at order `k`; every count up to it is
    /// tried and the best settled estimate kept.
    pub guard: i32,
    /// Amplitude `t` of the boundary perturbations `log r = t cos 2s`.
    pub perturbation: f64,
    /// Highest log power looked for at orders `k ≥ 2m*`.
    pub max_log_power: u32,
    /// Per-order override of `max_log_power`: entry `k` applies at order `k`.
    pub log_powers: Vec<u32>,
    /// Lowest power of `δ` fitted and discarded below the target order. By
    /// default `2m*` when `ω₀` is given, and `0` when it is detected: a
    /// detected `ω₀` is slightly off, which leaves a constant in the
    /// `t`-derivatives of the area difference.
    pub lowest_power: Option<u32>,
    /// Allowed disagreement between the full and the reduced `δ`-stencil.
    pub stencil_tol: f64,
    /// Largest accepted error estimate of a recovered entry.
    pub error_budget: f64,
    /// Target for `|A + 2π|` in each plane search.
    pub frame_tol: f64,
    /// Largest `|A + 2π|` accepted over all planes of the detected frame.
    pub frame_accept: f64,
    /// Finite-difference step in frame detection.
    pub frame_step: f64,
    pub frame_max_iter: usize,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        RecoveryConfig {
            m_star: 1,
            delta_max: 0.2,
            delta_min: 0.02,
            extra_nodes: 4,
            guard: 3,
            perturbation: 0.02,
            max_log_power: 0,
            log_powers: Vec::new(),
            lowest_power: None,
            stencil_tol: 5e-2,
            error_budget: 5e-2,
            frame_tol: 1e-10,
            frame_accept: 1e-4,
            frame_step: 2e-3,
            frame_max_iter: 40,
        }
    }
}

impl RecoveryConfig {
    pub fn validate(&self) -> Result<(), InverseError> {
        let ok = self.m_star >= 1
            && self.delta_max > self.delta_min
            && self.delta_min > 0.0
            && self.delta_max < 1.0
            && self.guard >= 0
            && self.perturbation > 0.0
            && self.stencil_tol > 0.0
            && self.error_budget > 0.0
            && self.frame_tol > 0.0
            && self.frame_accept > 0.0
            && self.frame_step > 0.0;
        if ok {
            Ok(())
        } else {
            Err(InverseError::Invalid(format!(
                "recovery configuration out of range: {self:?}"
            )))
        }
    }

    /// Candidate ladders for order `k` at log level `a`, one per number of
    /// powers fitted beyond `k`, up to `guard`. Powers below `k` reach the area
    /// difference only through the error of earlier stages, and log levels
    /// above `a` at order `k` only through the error of the levels already
    /// recovered; both are fitted and dropped as divergent terms.
    fn ladders(&self, k: u32, a: u32) -> Vec<Ladder> {
        (0..=self.guard)
            .map(|g| {
                let lower = (self.lowest_power.unwrap_or(2 * self.m_star)..k)
                    .flat_map(|j| (0..=self.logs_at(j)).map(move |p| (j as i32, p)));
                let own = Ladder::for_order(k as i32, g, a, a + self.logs_at(k));
                let residual = (a + 1..=self.logs_at(k)).map(|p| (k as i32, p));
                Ladder::from_terms(lower.chain(own.terms).chain(residual))
            })
            .collect()
    }

    fn logs_at(&self, k: u32) -> u32 {
        if k >= 2 * self.m_star {
            self.log_powers
                .get(k as usize)
                .copied()
                .unwrap_or(self.max_log_power)
        } else {
            0
        }
    }

    /// Strictly decreasing `δ` nodes for the largest of the candidate ladders.
    pub fn nodes(&self, ladders: &[Ladder]) -> Vec<f64> {
        let len = ladders.iter().map(Ladder::len).max().unwrap_or(0);
        let count = len + self.extra_nodes.max(len / 3 + 2);
        geometric_nodes(self.delta_max, self.delta_min, count)
    }
}

fn check_supported(oracle: &AreaOracle, cfg: &RecoveryConfig) -> Result<(), InverseError> {
    cfg.validate()?;
    if cfg.m_star != 1 {
        return Err(InverseError::Invalid(format!(
            "the area oracle solves for surfaces (m* = 1); m* = {} needs higher-dimensional minimal submanifolds",
            cfg.m_star
        )));
    }
    if oracle.n() < 2 {
        return Err(InverseError::Invalid(
            "boundary dimension must be at least 2".into(),
        ));
    }
    Ok(())
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(f64::from).product()
}

/// `(k!/2) · total`: the factor between `FP d^k/dδ^k D` and the trace.
fn trace_factor(m_star: u32, k: u32) -> Result<f64, InverseError> {
    let tc =
        trace_recovery_constants(m_star, k).map_err(|e| InverseError::Integrity(e.to_string()))?;
    Ok(0.5 * factorial(k) * tc.total)
}

fn circle_modes(t: f64) -> [BoundaryCurve; 5] {
    [
        BoundaryCurve::circle(1.0),
        BoundaryCurve::perturbed_circle(&[(2, t, 0.0)]),
        BoundaryCurve::perturbed_circle(&[(2, -t, 0.0)]),
        BoundaryCurve::perturbed_circle(&[(2, 0.0, t)]),
        BoundaryCurve::perturbed_circle(&[(2, 0.0, -t)]),
    ]
}

/// Finite-part measurements in one coordinate plane.
#[derive(Debug, Clone, Serialize)]
pub struct PlaneMeasurement {
    /// Columns of the query frame spanning the plane.
    pub plane: (usize, usize),
    /// From the round circle.
    pub trace: FpEstimate,
    /// `t`-derivatives for the `cos 2s` and `sin 2s` perturbations.
    pub difference: Option<FpEstimate>,
    pub rotated: Option<FpEstimate>,
}

/// Runs the round and perturbed circles in every frame and extracts the
/// finite parts of `d^k/dδ^k` at log level `a`.
#[allow(clippy::too_many_arguments)]
fn measure(
    oracle: &AreaOracle,
    model: &AreaOracle,
    frames: &[(DMatrix<f64>, (usize, usize))],
    k: u32,
    a: u32,
    ladders: &[Ladder],
    cfg: &RecoveryConfig,
    components: bool,
) -> Result<Vec<PlaneMeasurement>, InverseError> {
    let nodes = cfg.nodes(ladders);
    let t = cfg.perturbation;
    let modes = circle_modes(t);
    let curves: &[BoundaryCurve] = if components { &modes } else { &modes[..1] };
    let mut queries = Vec::new();
    for (frame, _) in frames {
        for &delta in &nodes {
            for c in curves {
                queries.push(AreaQuery {
                    curve: c.clone(),
                    frame: frame.clone(),
                    delta,
                });
            }
        }
    }
    let truth = oracle.answer_all(&queries)?;
    let known = model.answer_all(&queries)?;
    let diff: Vec<f64> = truth
        .iter()
        .zip(&known)
        .map(|(x, y)| x.area - y.area)
        .collect();
    let per_frame = nodes.len() * curves.len();
    frames
        .iter()
        .enumerate()
        .map(|(f, (_, plane))| {
            let block = &diff[f * per_frame..(f + 1) * per_frame];
            let at = |i: usize, c: usize| block[i * curves.len() + c];
            let series = |g: &dyn Fn(usize) -> f64| -> Vec<(f64, f64)> {
                nodes.iter().enumerate().map(|(i, &d)| (d, g(i))).collect()
            };
            let trace = fp_delta_select(&series(&|i| at(i, 0)), k, a, ladders, cfg.stencil_tol)?;
            let (difference, rotated) = if components {
                let d = fp_delta_select(
                    &series(&|i| (at(i, 1) - at(i, 2)) / (2.0 * t)),
                    k,
                    a,
                    ladders,
                    cfg.stencil_tol,
                )?;
                let r = fp_delta_select(
                    &series(&|i| (at(i, 3) - at(i, 4)) / (2.0 * t)),
                    k,
                    a,
                    ladders,
                    cfg.stencil_tol,
                )?;
                (Some(d), Some(r))
            } else {
                (None, None)
            };
            Ok(PlaneMeasurement {
                plane: *plane,
                trace,
                difference,
                rotated,
            })
        })
        .collect()
}

/// Frames `base · P` whose first two columns are `base`'s columns `i` and `j`.
fn plane_frames(base: &DMatrix<f64>) -> Vec<(DMatrix<f64>, (usize, usize))> {
    let n = base.ncols();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let mut order = vec![i, j];
            order.extend((0..n).filter(|&c| c != i && c != j));
            let frame = DMatrix::from_fn(n, n, |r, c| base[(r, order[c])]);
            out.push((frame, (i, j)));
        }
    }
    out
}

/// Trace of `ω̂_{kℓ}` over the `(ŷ₁, ŷ₂)` plane of `frame`, with its error.
#[derive(Debug, Clone, Serialize)]
pub struct TraceEstimate {
    pub value: f64,
    pub error: f64,
    pub fp: FpEstimate,
}

/// Recovers the trace of `ω_k` (log level `ℓ`) on the `(ŷ₁, ŷ₂)` plane of
/// `frame`, given a model jet that already carries all lower orders and all
/// higher log levels at order `k`. The frame must make `ω̂₀(p)` the identity.
pub fn recover_trace(
    oracle: &AreaOracle,
    known: &MetricJet,
    frame: &DMatrix<f64>,
    k: u32,
    l: u32,
    cfg: &RecoveryConfig,
) -> Result<TraceEstimate, InverseError> {
    check_supported(oracle, cfg)?;
    let model = oracle.model(known.clone())?;
    let ladders = cfg.ladders(k, l);
    let m = measure(
        oracle,
        &model,
        &[(frame.clone(), (0, 1))],
        k,
        l,
        &ladders,
        cfg,
        false,
    )?;
    let factor = trace_factor(cfg.m_star, k)?;
    let fp = m.into_iter().next().expect("one frame").trace;
    Ok(TraceEstimate {
        value: fp.value / factor,
        error: fp.error / factor.abs(),
        fp,
    })
}

/// Empirical anisotropy constant `C(k, m*)`.
#[derive(Debug, Clone, Serialize)]
pub struct Calibration {
    pub k: u32,
    pub m_star: u32,
    pub constant: f64,
    pub error: f64,
    /// The hemisphere integral `I_{k,m*}` whose nonvanishing guarantees `C ≠ 0`.
    pub i_km: f64,
    pub sign_consistent: bool,
    /// Trace recovered from the calibration run (should be 1).
    pub trace_check: f64,
}

/// Smallest accepted `|C|`.
pub const MIN_CALIBRATION: f64 = 1e-6;

/// Measures `C(k, m*)` by planting `ω_k = amplitude · diag(1, 0)` over
/// hyperbolic space on the oracle's grid and solver settings.
pub fn calibrate_constants(
    oracle: &AreaOracle,
    k: u32,
    amplitude: f64,
    cfg: &RecoveryConfig,
) -> Result<Calibration, InverseError> {
    check_supported(oracle, cfg)?;
    let m_star = cfg.m_star;
    let ikm = i_km(k, m_star)
        .map_err(|e| InverseError::Integrity(e.to_string()))?
        .to_f64()
        .unwrap_or(f64::NAN);
    if !(ikm != 0.0) {
        return Err(InverseError::Integrity(format!(
            "I_({k},{m_star}) vanishes"
        )));
    }
    let n = oracle.n();
    let mut planted = DMatrix::zeros(n, n);
    planted[(0, 0)] = amplitude;
    let target = oracle.model(MetricJet::hyperbolic(n).with_term(k, &planted))?;
    let model = oracle.model(MetricJet::hyperbolic(n))?;
    // the planted jet has neither lower orders nor log terms
    let ladders: Vec<Ladder> = (0..=cfg.guard)
        .map(|g| Ladder::for_order(k as i32, g, 0, 0))
        .collect();
    let m = measure(
        &target,
        &model,
        &[(DMatrix::identity(n, n), (0, 1))],
        k,
        0,
        &ladders,
        cfg,
        true,
    )?;
    let m = &m[0];
    let d = m.difference.as_ref().expect("components measured");
    let constant = d.value / amplitude;
    let trace_check = m.trace.value / (trace_factor(m_star, k)? * amplitude);
    if !(constant.abs() > MIN_CALIBRATION) {
        return Err(InverseError::Integrity(format!(
            "anisotropy constant C({k},{m_star}) = {constant:.3e} is indistinguishable from 0"
        )));
    }
    let sign_consistent = constant.signum() == ikm.signum();
    if !sign_consistent {
        return Err(InverseError::Integrity(format!(
            "C({k},{m_star}) = {constant:.6} has the opposite sign to I = {ikm:.6}"
        )));
    }
    Ok(Calibration {
        k,
        m_star,
        constant,
        error: d.error / amplitude.abs(),
        i_km: ikm,
        sign_consistent,
        trace_check,
    })
}

/// A recovered symmetric matrix in original coordinates with per-entry error
/// estimates, and the measurements behind it.
#[derive(Debug, Clone)]
pub struct ComponentEstimate {
    pub matrix: DMatrix<f64>,
    pub error: DMatrix<f64>,
    pub planes: Vec<PlaneMeasurement>,
}

/// Recovers `ω_{kℓ}(p)` (`ℓ = 0` for the plain coefficient) in full.
///
/// `frame` must satisfy `frameᵀ ω₀(p) frame = Id`; `known` carries every
/// lower order and every log level above `ℓ` at order `k`. For `n = 2` the
/// plane trace and the two anisotropies determine the matrix; for `n ≥ 3` the
/// diagonal comes from the traces over all coordinate planes, by least squares
/// on the pair-incidence system, and the off-diagonal entries from the rotated
/// perturbation in each plane.
pub fn recover_component(
    oracle: &AreaOracle,
    known: &MetricJet,
    frame: &DMatrix<f64>,
    k: u32,
    l: u32,
    calibration: &Calibration,
    cfg: &RecoveryConfig,
) -> Result<ComponentEstimate, InverseError> {
    check_supported(oracle, cfg)?;
    let n = oracle.n();
    if calibration.k != k {
        return Err(InverseError::Invalid(format!(
            "calibration is for order {}, not {k}",
            calibration.k
        )));
    }
    let model = oracle.model(known.clone())?;
    let ladders = cfg.ladders(k, l);
    let frames = plane_frames(frame);
    let planes = measure(oracle, &model, &frames, k, l, &ladders, cfg, true)?;
    let factor = trace_factor(cfg.m_star, k)?;
    let c = calibration.constant;
    let mut hat = DMatrix::zeros(n, n);
    let mut err = DMatrix::zeros(n, n);
    let rel_c = calibration.error / c.abs();
    for pm in &planes {
        let (i, j) = pm.plane;
        let r = pm.rotated.as_ref().expect("components measured");
        let v = r.value / (2.0 * c);
        hat[(i, j)] = v;
        hat[(j, i)] = v;
        let e = r.error / (2.0 * c.abs()) + v.abs() * rel_c;
        err[(i, j)] = e;
        err[(j, i)] = e;
    }
    if n == 2 {
        let pm = &planes[0];
        let d = pm.difference.as_ref().expect("components measured");
        let tr = pm.trace.value / factor;
        let dd = d.value / c;
        hat[(0, 0)] = 0.5 * (tr + dd);
        hat[(1, 1)] = 0.5 * (tr - dd);
        let e = 0.5 * (pm.trace.error / factor.abs() + d.error / c.abs() + dd.abs() * rel_c);
        err[(0, 0)] = e;
        err[(1, 1)] = e;
    } else {
        let rows = planes.len();
        let inc = DMatrix::from_fn(rows, n, |r, q| {
            if planes[r].plane.0 == q || planes[r].plane.1 == q {
                1.0
            } else {
                0.0
            }
        });
        let traces = DVector::from_iterator(rows, planes.iter().map(|pm| pm.trace.value / factor));
        let trace_err = planes
            .iter()
            .map(|pm| pm.trace.error / factor.abs())
            .fold(0.0, f64::max);
        let svd = inc.svd(true, true);
        let diag = svd
            .solve(&traces, 1e-12)
            .map_err(|e| InverseError::Degenerate(e.to_string()))?;
        for q in 0..n {
            hat[(q, q)] = diag[q];
            err[(q, q)] = trace_err;
        }
    }
    let inv = frame
        .clone()
        .try_inverse()
        .ok_or_else(|| InverseError::Degenerate("singular frame".into()))?;
    let matrix = inv.transpose() * &hat * &inv;
    let scale = inv.norm() * inv.norm();
    let error = err.map(|e| e * scale);
    Ok(ComponentEstimate {
        matrix,
        error,
        planes,
    })
}

/// [`recover_component`] at a log level `ℓ ≥ 1`.
pub fn recover_log_coefficient(
    oracle: &AreaOracle,
    known: &MetricJet,
    frame: &DMatrix<f64>,
    k: u32,
    l: u32,
    calibration: &Calibration,
    cfg: &RecoveryConfig,
) -> Result<ComponentEstimate, InverseError> {
    if l == 0 {
        return Err(InverseError::Invalid("log level must be at least 1".into()));
    }
    if k < 2 * cfg.m_star {
        return Err(InverseError::Invalid(format!(
            "log terms start at order 2m* = {}",
            2 * cfg.m_star
        )));
    }
    recover_component(oracle, known, frame, k, l, calibration, cfg)
}

/// Result of the search for a frame in which the limit area hits `−2π`.
#[derive(Debug, Clone, Serialize)]
pub struct FrameReport {
    /// Columns are the detected frame vectors; `Lᵀω₀(p)L ∝ Id`.
    pub frame: Vec<Vec<f64>>,
    /// Largest `|A_limit + 2π|` over the coordinate planes at the end.
    pub residual: f64,
    pub planes: Vec<PlaneSearch>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PlaneSearch {
    pub plane: (usize, usize),
    /// Shear and stretch `ŷ_j ← α ŷ_i + β ŷ_j` applied to the second vector.
    pub alpha: f64,
    pub beta: f64,
    pub limit_area: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

impl FrameReport {
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.frame.len();
        DMatrix::from_fn(n, n, |i, j| self.frame[i][j])
    }
}

/// `δ → 0` area over the unit circle in the plane of the first two columns.
fn limit_area(oracle: &AreaOracle, frames: &[DMatrix<f64>]) -> Result<Vec<f64>, InverseError> {
    let q: Vec<AreaQuery> = frames
        .iter()
        .map(|f| AreaQuery {
            curve: BoundaryCurve::circle(1.0),
            frame: f.clone(),
            delta: 0.0,
        })
        .collect();
    Ok(oracle.answer_all(&q)?.into_iter().map(|a| a.area).collect())
}

/// Makes columns `i`, `j` of `frame` conformally orthonormal by replacing
/// column `j` with `α vᵢ + β vⱼ`, minimizing `−2π − A_limit ≥ 0` over
/// `(α, log β)` by Newton's method on finite differences.
fn search_plane(
    oracle: &AreaOracle,
    frame: &DMatrix<f64>,
    i: usize,
    j: usize,
    cfg: &RecoveryConfig,
) -> Result<(DMatrix<f64>, PlaneSearch), InverseError> {
    let n = frame.ncols();
    // the updated frame, in its own column order
    let build = |alpha: f64, b: f64| -> DMatrix<f64> {
        let mut out = frame.clone();
        let vj = frame.column(j) * b.exp() + frame.column(i) * alpha;
        out.set_column(j, &vj);
        out
    };
    // the same frame with columns i, j moved to the front for the query
    let lead = |f: &DMatrix<f64>| -> DMatrix<f64> {
        let mut order = vec![i, j];
        order.extend((0..n).filter(|&c| c != i && c != j));
        DMatrix::from_fn(n, n, |r, c| f[(r, order[c])])
    };
    let objective = |pts: &[(f64, f64)]| -> Result<Vec<f64>, InverseError> {
        let frames: Vec<DMatrix<f64>> = pts.iter().map(|&(a, b)| lead(&build(a, b))).collect();
        Ok(limit_area(oracle, &frames)?
            .into_iter()
            .map(|area| -2.0 * PI - area)
            .collect())
    };
    let h = cfg.frame_step;
    let (mut x, mut y) = (0.0, 0.0);
    let mut f0 = objective(&[(x, y)])?[0];
    let mut evaluations = 1;
    let mut iterations = 0;
    while f0.abs() > cfg.frame_tol && iterations < cfg.frame_max_iter {
        iterations += 1;
        let v = objective(&[
            (x + h, y),
            (x - h, y),
            (x, y + h),
            (x, y - h),
            (x + h, y + h),
        ])?;
        evaluations += 5;
        let g = [(v[0] - v[1]) / (2.0 * h), (v[2] - v[3]) / (2.0 * h)];
        let hxx = (v[0] - 2.0 * f0 + v[1]) / (h * h);
        let hyy = (v[2] - 2.0 * f0 + v[3]) / (h * h);
        let hxy = (v[4] - v[0] - v[2] + f0) / (h * h);
        let det = hxx * hyy - hxy * hxy;
        let (mut dx, mut dy) = if hxx > 0.0 && det > 0.0 {
            (
                -(hyy * g[0] - hxy * g[1]) / det,
                -(hxx * g[1] - hxy * g[0]) / det,
            )
        } else {
            let s = 0.1 / (g[0].hypot(g[1]) + 1e-300);
            (-g[0] * s, -g[1] * s)
        };
        // cap the step so intermediate ellipses stay moderate
        let len = dx.hypot(dy);
        if len > 0.5 {
            dx *= 0.5 / len;
            dy *= 0.5 / len;
        }
        let mut accepted = false;
        for _ in 0..8 {
            let f1 = objective(&[(x + dx, y + dy)])?[0];
            evaluations += 1;
            if f1 < f0 {
                x += dx;
                y += dy;
                f0 = f1;
                accepted = true;
                break;
            }
            dx *= 0.5;
            dy *= 0.5;
        }
        if !accepted || dx.hypot(dy) < 1e-9 {
            break;
        }
    }
    let out = build(x, y);
    Ok((
        out,
        PlaneSearch {
            plane: (i, j),
            alpha: x,
            beta: y.exp(),
            limit_area: -2.0 * PI - f0,
            iterations,
            evaluations,
        },
    ))
}

/// Detects a frame `L` with `Lᵀω₀(p)L ∝ Id` from limit areas alone, starting
/// from `start`. In two dimensions one plane search suffices; in higher
/// dimensions the planes `(0,1), (0,2), …, (n−2,n−1)` are swept in order, each
/// search changing only the later vector, which keeps earlier pairs
/// orthonormal. The scale `λ` is not observable; `L` is returned with
/// `|det L| = 1`.
pub fn detect_conformal_frame(
    oracle: &AreaOracle,
    start: &DMatrix<f64>,
    cfg: &RecoveryConfig,
) -> Result<FrameReport, InverseError> {
    cfg.validate()?;
    let n = oracle.n();
    if start.nrows() != n || start.ncols() != n {
        return Err(InverseError::Invalid("starting frame must be n×n".into()));
    }
    let mut frame = start.clone();
    let mut planes = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let (next, report) = search_plane(oracle, &frame, i, j, cfg)?;
            frame = next;
            planes.push(report);
        }
    }
    let det = frame.determinant();
    if !(det.abs() > 0.0) {
        return Err(InverseError::Degenerate(
            "detected frame is singular".into(),
        ));
    }
    let frame = &frame / det.abs().powf(1.0 / n as f64);
    // one closing pass: the limit area of each plane in the final frame
    let check: Vec<DMatrix<f64>> = plane_frames(&frame).into_iter().map(|(f, _)| f).collect();
    let residual = limit_area(oracle, &check)?
        .into_iter()
        .map(|a| (a + 2.0 * PI).abs())
        .fold(0.0, f64::max);
    if !(residual < cfg.frame_accept) {
        return Err(InverseError::Degenerate(format!(
            "limit area misses −2π by {residual:.3e} after the frame search"
        )));
    }
    let rows = (0..n)
        .map(|r| (0..n).map(|c| frame[(r, c)]).collect())
        .collect();
    Ok(FrameReport {
        frame: rows,
        residual,
        planes,
    })
}

/// One recovered coefficient `ω_{kℓ}(p)`.
#[derive(Debug, Clone, Serialize)]
pub struct OrderReport {
    pub k: u32,
    pub l: u32,
    pub recovered: Vec<Vec<f64>>,
    /// Error estimate per entry from the stencil comparisons.
    pub estimated_error: Vec<Vec<f64>>,
    /// How the entry was obtained.
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abs_error: Option<Vec<Vec<f64>>>,
    /// `|recovered − truth|` divided by the largest truth entry (or by 1 when
    /// the truth vanishes).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rel_error: Option<Vec<Vec<f64>>>,
    pub diagnostics: Vec<StageDiagnostic>,
}

/// Summary of one finite-part extraction.
#[derive(Debug, Clone, Serialize)]
pub struct StageDiagnostic {
    pub plane: (usize, usize),
    pub quantity: String,
    pub value: f64,
    pub error: f64,
    pub divergent: bool,
    pub condition: f64,
    pub nodes: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecoveryFailure {
    pub order: u32,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecoveryReport {
    pub n: usize,
    pub m_star: u32,
    pub max_order: u32,
    pub point: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frame_detection: Option<FrameReport>,
    /// Frame with `frameᵀω₀(p)frame = Id` used by all later stages.
    pub frame: Vec<Vec<f64>>,
    pub calibrations: Vec<Calibration>,
    pub orders: Vec<OrderReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<RecoveryFailure>,
    pub queries: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_abs_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_rel_error: Option<f64>,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn from_rows(r: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(r.len(), r.len(), |i, j| r[i][j])
}

fn diagnostics(planes: &[PlaneMeasurement]) -> Vec<StageDiagnostic> {
    let mut out = Vec::new();
    for pm in planes {
        let mut push = |name: &str, fp: &FpEstimate| {
            out.push(StageDiagnostic {
                plane: pm.plane,
                quantity: name.into(),
                value: fp.value,
                error: fp.error,
                divergent: fp.divergent,
                condition: fp.stencil.condition,
                nodes: fp.stencil.nodes.clone(),
            })
        };
        push("trace", &pm.trace);
        if let Some(d) = &pm.difference {
            push("cos2s", d);
        }
        if let Some(r) = &pm.rotated {
            push("sin2s", r);
        }
    }
    out
}

impl RecoveryReport {
    /// Fills truth and error fields from the planted jet. Order 0 is compared
    /// as a conformal class (both sides scaled to unit determinant before the
    /// errors are taken).
    ///
    /// When `ω₀` was detected, the recovered expansion belongs to the
    /// representative `ω₀/μ`, that is to the defining function `x' = x/√μ`.
    /// The truth is moved to the same defining function before comparing:
    /// `ω'(x') = ω(√μ x')/μ`, so `ω'_{kℓ} = μ^{k/2−1} Σ_{ℓ'≥ℓ} C(ℓ', ℓ)(½ log μ)^{ℓ'−ℓ} ω_{kℓ'}`.
    pub fn score(&mut self, truth: &MetricJet) {
        let p = self.point.clone();
        let n = self.n;
        let mu = match (&self.frame_detection, self.orders.first()) {
            (Some(_), Some(o0)) => (truth.coefficient(0, 0, &p).determinant()
                / from_rows(&o0.recovered).determinant())
            .powf(1.0 / n as f64),
            _ => 1.0,
        };
        let half_log = 0.5 * mu.ln();
        let moved = |k: u32, l: u32| -> DMatrix<f64> {
            let mut acc = DMatrix::zeros(n, n);
            let mut binom = 1.0;
            for lp in l..=truth.max_log_power(k).max(l) {
                if lp > l {
                    binom *= f64::from(lp) / f64::from(lp - l);
                }
                acc += truth.coefficient(k, lp, &p) * (binom * half_log.powi((lp - l) as i32));
            }
            acc * mu.powf(f64::from(k) / 2.0 - 1.0)
        };
        let mut max_abs: f64 = 0.0;
        let mut max_rel: f64 = 0.0;
        for o in &mut self.orders {
            let mut t = if o.k == 0 {
                truth.coefficient(0, o.l, &p)
            } else {
                moved(o.k, o.l)
            };
            o.truth = Some(to_rows(&t));
            let mut r = from_rows(&o.recovered);
            if o.k == 0 && o.l == 0 {
                let unit = |m: &DMatrix<f64>| m / m.determinant().abs().powf(1.0 / n as f64);
                t = unit(&t);
                r = unit(&r);
            }
            let abs = (&r - &t).abs();
            let denom = if t.amax() > 0.0 { t.amax() } else { 1.0 };
            let rel = &abs / denom;
            if o.k > 0 {
                max_abs = max_abs.max(abs.amax());
                max_rel = max_rel.max(rel.amax());
            }
            o.abs_error = Some(to_rows(&abs));
            o.rel_error = Some(to_rows(&rel));
        }
        self.max_abs_error = Some(max_abs);
        self.max_rel_error = Some(max_rel);
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// How `ω₀` enters the recovery.
#[derive(Debug, Clone)]
pub enum BoundaryMetric {
    /// The boundary metric is known: a jet carrying the order-0 field.
    Known(MetricJet),
    /// Only the conformal class at `p` is wanted; it is detected from limit
    /// areas and the unit-determinant representative is used, constant in `y`.
    Detect,
}

/// The full induction: `ω₀` (given or detected), then for `k = 2, …, max_order`
/// the log levels `ℓ = L, …, 1` and finally `ω_k` itself, each level added to
/// the model before the next. Odd orders below `2m*` vanish by parity and are
/// reported as zero without queries. Stage failures and error estimates above
/// the budget end the induction with a partial report.
pub fn recover_expansion(
    oracle: &AreaOracle,
    boundary: &BoundaryMetric,
    max_order: u32,
    cfg: &RecoveryConfig,
) -> Result<RecoveryReport, InverseError> {
    check_supported(oracle, cfg)?;
    let n = oracle.n();
    let p = oracle.point().to_vec();
    let start_queries = oracle.queries();
    let (mut known, frame, detection) = match boundary {
        BoundaryMetric::Known(jet) => {
            let base = jet.truncated_below(1);
            let w0 = base.coefficient(0, 0, &p);
            let chol = w0
                .cholesky()
                .ok_or_else(|| InverseError::Invalid("ω₀(p) is not positive definite".into()))?;
            let frame = chol
                .l()
                .transpose()
                .try_inverse()
                .ok_or_else(|| InverseError::Degenerate("singular ω₀".into()))?;
            (base, frame, None)
        }
        BoundaryMetric::Detect => {
            let report = detect_conformal_frame(oracle, &DMatrix::identity(n, n), cfg)?;
            let frame = report.matrix();
            let inv = frame
                .clone()
                .try_inverse()
                .ok_or_else(|| InverseError::Degenerate("singular frame".into()))?;
            let w0 = inv.transpose() * &inv;
            let mut jet = MetricJet::empty(n).with_term(0, &w0);
            jet.validity_radius = f64::INFINITY;
            (jet, frame, Some(report))
        }
    };
    let mut report = RecoveryReport {
        n,
        m_star: cfg.m_star,
        max_order,
        point: p.clone(),
        frame_detection: detection,
        frame: to_rows(&frame),
        calibrations: Vec::new(),
        orders: vec![OrderReport {
            k: 0,
            l: 0,
            recovered: to_rows(&known.coefficient(0, 0, &p)),
            estimated_error: to_rows(&DMatrix::zeros(n, n)),
            method: if matches!(boundary, BoundaryMetric::Known(_)) {
                "given".into()
            } else {
                "detected conformal class".into()
            },
            truth: None,
            abs_error: None,
            rel_error: None,
            diagnostics: Vec::new(),
        }],
        failure: None,
        queries: 0,
        max_abs_error: None,
        max_rel_error: None,
    };
    let mut cfg = cfg.clone();
    if cfg.lowest_power.is_none() && matches!(boundary, BoundaryMetric::Detect) {
        cfg.lowest_power = Some(0);
    }
    let cfg = &cfg;
    let truncation = oracle.truncation();
    for k in 1..=max_order {
        if k % 2 == 1 && k < 2 * cfg.m_star {
            report.orders.push(OrderReport {
                k,
                l: 0,
                recovered: to_rows(&DMatrix::zeros(n, n)),
                estimated_error: to_rows(&DMatrix::zeros(n, n)),
                method: "zero by parity".into(),
                truth: None,
                abs_error: None,
                rel_error: None,
                diagnostics: Vec::new(),
            });
            continue;
        }
        if let Some(t) = truncation {
            if k > t {
                report.failure = Some(RecoveryFailure {
                    order: k,
                    message: format!(
                        "order {k} lies beyond the oracle's expansion (known through order {t})"
                    ),
                });
                break;
            }
        }
        if let Err(e) = recover_order(oracle, &mut known, &frame, k, cfg, &mut report) {
            report.failure = Some(RecoveryFailure {
                order: k,
                message: e.to_string(),
            });
            break;
        }
    }
    report.queries = oracle.queries() - start_queries;
    Ok(report)
}

/// Calibrates order `k`, then recovers its log levels from the top down and
/// the plain coefficient last, extending the model after each level.
fn recover_order(
    oracle: &AreaOracle,
    known: &mut MetricJet,
    frame: &DMatrix<f64>,
    k: u32,
    cfg: &RecoveryConfig,
    report: &mut RecoveryReport,
) -> Result<(), InverseError> {
    let cal = calibrate_constants(oracle, k, 1.0, cfg)?;
    report.calibrations.push(cal.clone());
    let n = oracle.n();
    for l in (0..=cfg.logs_at(k)).rev() {
        let est = recover_component(oracle, known, frame, k, l, &cal, cfg)?;
        let worst = est.error.amax();
        report.orders.push(OrderReport {
            k,
            l,
            recovered: to_rows(&est.matrix),
            estimated_error: to_rows(&est.error),
            method: if n == 2 {
                "trace + anisotropy".into()
            } else {
                "plane traces + rotated anisotropy".into()
            },
            truth: None,
            abs_error: None,
            rel_error: None,
            diagnostics: diagnostics(&est.planes),
        });
        if worst > cfg.error_budget {
            return Err(InverseError::Stencil(format!(
                "ω_({k},{l}) error estimate {worst:.3e} exceeds the budget {:.1e}",
                cfg.error_budget
            )));
        }
        *known = if l == 0 {
            known.clone().with_term(k, &est.matrix)
        } else {
            known.clone().with_log_term(k, l, &est.matrix)
        };
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::SolverOptions;

    fn opts() -> SolverOptions {
        SolverOptions {
            n_cheb: 15,
            n_fourier: 16,
            ..Default::default()
        }
    }

    fn m2(v: [f64; 4]) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &v)
    }

    fn oracle(jet: MetricJet) -> AreaOracle {
        let n = jet.n;
        AreaOracle::new(jet, &vec![0.0; n], opts()).unwrap()
    }

    fn flat(n: usize) -> DMatrix<f64> {
        DMatrix::identity(n, n)
    }

    #[test]
    fn trace_of_planted_terms() {
        let cfg = RecoveryConfig::default();
        let known = MetricJet::hyperbolic(2);
        let tr = |w: DMatrix<f64>| {
            recover_trace(
                &oracle(MetricJet::hyperbolic(2).with_term(2, &w)),
                &known,
                &flat(2),
                2,
                0,
                &cfg,
            )
            .unwrap()
            .value
        };
        assert!((tr(m2([1.0, 0.0, 0.0, 0.0])) - 1.0).abs() < 1e-3);
        assert!(tr(DMatrix::zeros(2, 2)).abs() < 1e-9);
        let lambda = 0.35;
        assert!((tr(flat(2) * lambda) - 2.0 * lambda).abs() < 1e-3);
    }

    #[test]
    fn trace_is_additive() {
        let cfg = RecoveryConfig::default();
        let known = MetricJet::hyperbolic(2);
        let (a, b) = (m2([0.3, 0.1, 0.1, 0.0]), m2([0.0, -0.2, -0.2, 0.5]));
        let tr = |w: &DMatrix<f64>| {
            recover_trace(
                &oracle(MetricJet::hyperbolic(2).with_term(2, w)),
                &known,
                &flat(2),
                2,
                0,
                &cfg,
            )
            .unwrap()
            .value
        };
        assert!((tr(&(&a + &b)) - tr(&a) - tr(&b)).abs() < 1e-3);
    }

    #[test]
    fn calibration_is_nonzero_linear_and_grid_stable() {
        let cfg = RecoveryConfig::default();
        let o = oracle(MetricJet::hyperbolic(2));
        let c1 = calibrate_constants(&o, 2, 1.0, &cfg).unwrap();
        assert!(c1.sign_consistent && c1.constant.abs() > MIN_CALIBRATION);
        assert!((c1.trace_check - 1.0).abs() < 1e-3);
        let c_half = calibrate_constants(&o, 2, 0.5, &cfg).unwrap();
        assert!((c_half.constant - c1.constant).abs() < 1e-3 * c1.constant.abs());
        let fine = AreaOracle::new(
            MetricJet::hyperbolic(2),
            &[0.0, 0.0],
            SolverOptions {
                n_cheb: 19,
                n_fourier: 20,
                ..Default::default()
            },
        )
        .unwrap();
        let c2 = calibrate_constants(&fine, 2, 1.0, &cfg).unwrap();
        assert!((c2.constant - c1.constant).abs() < 1e-2 * c1.constant.abs());
    }

    #[test]
    fn components_of_planted_terms() {
        let cfg = RecoveryConfig::default();
        let cal = calibrate_constants(&oracle(MetricJet::hyperbolic(2)), 2, 1.0, &cfg).unwrap();
        let known = MetricJet::hyperbolic(2);
        for (w, tol) in [
            (m2([1.0, 0.0, 0.0, 0.0]), 1e-2),
            (m2([0.2, 0.3, 0.3, -0.1]), 2e-2),
            (DMatrix::zeros(2, 2), 1e-9),
        ] {
            let est = recover_component(
                &oracle(MetricJet::hyperbolic(2).with_term(2, &w)),
                &known,
                &flat(2),
                2,
                0,
                &cal,
                &cfg,
            )
            .unwrap();
            assert!((&est.matrix - &w).amax() < tol, "{} vs {w}", est.matrix);
        }
    }

    #[test]
    fn log_coefficients_by_downward_induction() {
        let one = m2([0.2, -0.1, -0.1, 0.3]);
        let two = m2([-0.1, 0.05, 0.05, 0.15]);
        let plain = m2([0.4, 0.3, 0.3, -0.2]);
        let cases = [
            (
                MetricJet::hyperbolic(2)
                    .with_term(2, &plain)
                    .with_log_term(2, 1, &one),
                1,
            ),
            (
                MetricJet::hyperbolic(2)
                    .with_term(2, &plain)
                    .with_log_term(2, 1, &one)
                    .with_log_term(2, 2, &two),
                2,
            ),
            (MetricJet::hyperbolic(2).with_term(2, &plain), 1),
        ];
        for (jet, levels) in cases {
            let cfg = RecoveryConfig {
                log_powers: vec![0, 0, levels],
                ..Default::default()
            };
            let jet = jet.with_truncation(2);
            let mut report = recover_expansion(
                &oracle(jet.clone()),
                &BoundaryMetric::Known(MetricJet::hyperbolic(2)),
                2,
                &cfg,
            )
            .unwrap();
            assert!(report.failure.is_none(), "{:?}", report.failure);
            assert_eq!(
                report.orders.iter().filter(|o| o.k == 2).count(),
                levels as usize + 1
            );
            report.score(&jet);
            for o in report.orders.iter().filter(|o| o.k == 2) {
                let err = from_rows(o.abs_error.as_ref().unwrap()).amax();
                assert!(err < 1e-2, "ω_(2,{}) off by {err}", o.l);
            }
        }
        let cfg = RecoveryConfig::default();
        let o = oracle(MetricJet::hyperbolic(2));
        let cal = calibrate_constants(&o, 2, 1.0, &cfg).unwrap();
        assert!(
            recover_log_coefficient(&o, &MetricJet::hyperbolic(2), &flat(2), 2, 0, &cal, &cfg)
                .is_err()
        );
    }

    fn gram_defect(w0: &DMatrix<f64>, frame: &DMatrix<f64>) -> f64 {
        let g = frame.transpose() * w0 * frame;
        let n = g.nrows();
        (&g / (g.trace() / n as f64) - DMatrix::identity(n, n)).amax()
    }

    #[test]
    fn frame_detection_in_two_dimensions() {
        let cfg = RecoveryConfig::default();
        for w0 in [flat(2), m2([4.0, 0.0, 0.0, 1.0]), m2([1.0, 0.5, 0.5, 1.0])] {
            let o = oracle(
                MetricJet::hyperbolic(2)
                    .truncated_below(0)
                    .with_term(0, &w0),
            );
            let report = detect_conformal_frame(&o, &flat(2), &cfg).unwrap();
            let frame = report.matrix();
            assert!(report.residual < 1e-4);
            assert!(gram_defect(&w0, &frame) < 1e-3, "{w0}");
            assert!((frame.determinant().abs() - 1.0).abs() < 1e-12);
            // running again from the detected frame changes nothing
            let again = detect_conformal_frame(&o, &frame, &cfg).unwrap();
            let step = frame.clone().try_inverse().unwrap() * again.matrix();
            assert!((step - flat(2)).amax() < 1e-3);
        }
    }

    #[test]
    fn frame_detection_in_three_dimensions() {
        let w0 = DMatrix::from_row_slice(3, 3, &[1.5, 0.2, -0.1, 0.2, 1.0, 0.3, -0.1, 0.3, 0.8]);
        let o = oracle(
            MetricJet::hyperbolic(3)
                .truncated_below(0)
                .with_term(0, &w0),
        );
        let report = detect_conformal_frame(&o, &flat(3), &RecoveryConfig::default()).unwrap();
        assert!(report.residual < 1e-4);
        assert_eq!(report.planes.len(), 3);
        assert!(gram_defect(&w0, &report.matrix()) < 1e-3);
    }

    #[test]
    fn diagonal_from_pairwise_traces_in_three_dimensions() {
        let w2 = DMatrix::from_diagonal(&DVector::from_vec(vec![0.3, -0.2, 0.5]));
        let jet = MetricJet::hyperbolic(3)
            .with_term(2, &w2)
            .with_truncation(2);
        let mut report = recover_expansion(
            &oracle(jet.clone()),
            &BoundaryMetric::Known(MetricJet::hyperbolic(3)),
            2,
            &RecoveryConfig::default(),
        )
        .unwrap();
        assert!(report.failure.is_none());
        report.score(&jet);
        assert!(
            report.max_abs_error.unwrap() < 1e-2,
            "{:?}",
            report.orders.last().unwrap().recovered
        );
    }

    #[test]
    fn hyperbolic_space_has_no_higher_terms() {
        let jet = MetricJet::hyperbolic(2).with_truncation(3);
        let report = recover_expansion(
            &oracle(jet),
            &BoundaryMetric::Known(MetricJet::hyperbolic(2)),
            3,
            &RecoveryConfig::default(),
        )
        .unwrap();
        assert!(report.failure.is_none());
        for o in report.orders.iter().filter(|o| o.k > 0) {
            assert!(from_rows(&o.recovered).amax() < 1e-6, "order {}", o.k);
        }
        assert_eq!(report.orders[1].method, "zero by parity");
    }

    #[test]
    fn recovery_stops_past_the_known_expansion() {
        let jet = MetricJet::hyperbolic(2)
            .with_term(2, &m2([0.1, 0.0, 0.0, 0.2]))
            .with_truncation(2);
        let report = recover_expansion(
            &oracle(jet),
            &BoundaryMetric::Known(MetricJet::hyperbolic(2)),
            3,
            &RecoveryConfig::default(),
        )
        .unwrap();
        assert_eq!(report.failure.as_ref().map(|f| f.order), Some(3));
        assert!(report.orders.iter().any(|o| o.k == 2));
        let json: serde_json::Value = serde_json::from_str(&report.to_json_string()).unwrap();
        assert_eq!(json["failure"]["order"], 3);
    }

    #[test]
    fn detected_class_scores_against_the_same_representative() {
        // ω₀ with determinant ≠ 1: orders k ≠ 2 pick up μ^{k/2−1}
        let w0 = m2([2.0, 0.3, 0.3, 1.0]);
        let w3 = m2([0.2, 0.1, 0.1, -0.1]);
        let jet = MetricJet::hyperbolic(2)
            .truncated_below(0)
            .with_term(0, &w0)
            .with_term(3, &w3)
            .with_truncation(3);
        let mut report = recover_expansion(
            &oracle(jet.clone()),
            &BoundaryMetric::Detect,
            3,
            &RecoveryConfig::default(),
        )
        .unwrap();
        assert!(report.failure.is_none(), "{:?}", report.failure);
        report.score(&jet);
        let mu = w0.determinant().sqrt();
        let o3 = report.orders.iter().find(|o| o.k == 3).unwrap();
        assert!((from_rows(o3.truth.as_ref().unwrap()) - &w3 * mu.sqrt()).amax() < 1e-12);
        assert!(report.max_rel_error.unwrap() < 5e-2);
    }

    #[test]
    fn unsupported_settings_are_rejected() {
        let o = oracle(MetricJet::hyperbolic(2));
        let cfg = RecoveryConfig {
            m_star: 2,
            ..Default::default()
        };
        assert!(matches!(
            recover_trace(&o, &MetricJet::hyperbolic(2), &flat(2), 2, 0, &cfg),
            Err(InverseError::Invalid(_))
        ));
        let bad = RecoveryConfig {
            delta_min: 0.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
