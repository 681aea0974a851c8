//! Boundary jets of asymptotically hyperbolic metrics `g = (dx² + ω(y, x))/x²`
//! and their blow-ups at a boundary point.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::SolverError;
use crate::phg::{Coeff, FloatSeries, Shape, SymMat};

/// `ω_k` (or `ω_{kℓ}`) as a first-order Taylor field `value + Σ yᵢ gradient[i]`
/// about the chart origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaTerm {
    pub k: u32,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub l: u32,
    pub value: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradient: Option<Vec<Vec<Vec<f64>>>>,
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

/// Polyhomogeneous boundary jet `ω(y, x) = Σ x^k ω_k(y) + Σ x^k log^ℓ(x) ω_{kℓ}(y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricJet {
    pub n: usize,
    pub even_order: u32,
    pub validity_radius: f64,
    pub omega: Vec<OmegaTerm>,
    #[serde(default)]
    pub omega_log: Vec<OmegaTerm>,
    /// Order through which the expansion is known; `None` means the listed
    /// terms are the whole expansion.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<u32>,
}

impl MetricJet {
    /// Hyperbolic space: `ω = Id`.
    pub fn hyperbolic(n: usize) -> Self {
        MetricJet {
            n,
            even_order: 2,
            validity_radius: 100.0,
            omega: vec![OmegaTerm {
                k: 0,
                l: 0,
                value: identity_rows(n),
                gradient: None,
            }],
            omega_log: Vec::new(),
            truncation: None,
        }
    }

    /// A jet with no `ω₀`: used for tensor directions rather than metrics.
    pub fn empty(n: usize) -> Self {
        MetricJet {
            n,
            even_order: 2,
            validity_radius: 100.0,
            omega: Vec::new(),
            omega_log: Vec::new(),
            truncation: None,
        }
    }

    pub fn with_term(mut self, k: u32, value: &DMatrix<f64>) -> Self {
        self.add_term(k, 0, value, None);
        self
    }

    pub fn with_gradient_term(
        mut self,
        k: u32,
        value: &DMatrix<f64>,
        gradient: &[DMatrix<f64>],
    ) -> Self {
        self.add_term(k, 0, value, Some(gradient));
        self
    }

    pub fn with_log_term(mut self, k: u32, l: u32, value: &DMatrix<f64>) -> Self {
        self.add_term(k, l, value, None);
        self
    }

    pub fn with_truncation(mut self, order: u32) -> Self {
        self.truncation = Some(order);
        self
    }

    pub fn with_even_order(mut self, even_order: u32) -> Self {
        self.even_order = even_order;
        self
    }

    /// Adds `x^k log^ℓ(x)` times the given field, merging with an existing term.
    pub fn add_term(
        &mut self,
        k: u32,
        l: u32,
        value: &DMatrix<f64>,
        gradient: Option<&[DMatrix<f64>]>,
    ) {
        let list = if l == 0 {
            &mut self.omega
        } else {
            &mut self.omega_log
        };
        let grad_rows = gradient.map(|g| g.iter().map(to_rows).collect::<Vec<_>>());
        if let Some(t) = list.iter_mut().find(|t| t.k == k && t.l == l) {
            add_rows(&mut t.value, &to_rows(value));
            if let Some(g) = grad_rows {
                match &mut t.gradient {
                    Some(existing) => existing
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(a, b)| add_rows(a, b)),
                    None => t.gradient = Some(g),
                }
            }
        } else {
            list.push(OmegaTerm {
                k,
                l,
                value: to_rows(value),
                gradient: grad_rows,
            });
            list.sort_by_key(|t| (t.k, t.l));
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = &OmegaTerm> {
        self.omega.iter().chain(&self.omega_log)
    }

    /// `ω_k` (or `ω_{kℓ}`) at the chart point `y`; zero when absent.
    pub fn coefficient(&self, k: u32, l: u32, y: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n, self.n);
        for t in self.terms().filter(|t| t.k == k && t.l == l) {
            out += field_at(t, self.n, y);
        }
        out
    }

    /// Largest power of `x` carried by the jet.
    pub fn max_order(&self) -> u32 {
        self.terms().map(|t| t.k).max().unwrap_or(0)
    }

    pub fn max_log_power(&self, k: u32) -> u32 {
        self.omega_log
            .iter()
            .filter(|t| t.k == k)
            .map(|t| t.l)
            .max()
            .unwrap_or(0)
    }

    /// Keeps only terms of order `< k` (the known part during recovery).
    pub fn truncated_below(&self, k: u32) -> Self {
        let mut out = self.clone();
        out.omega.retain(|t| t.k < k);
        out.omega_log.retain(|t| t.k < k);
        out
    }

    /// Checks shapes, symmetry, partial evenness and positivity of `ω₀` at `p`.
    pub fn validate(&self, p: &[f64]) -> Result<(), SolverError> {
        let bad = |msg: String| Err(SolverError::InvalidJet(msg));
        if self.n < 2 {
            return bad(format!("boundary dimension {} < 2", self.n));
        }
        if !(self.validity_radius > 0.0) {
            return bad("validity radius must be positive".into());
        }
        for t in self.terms() {
            if t.value.len() != self.n || t.value.iter().any(|r| r.len() != self.n) {
                return bad(format!(
                    "term (k={}, l={}) is not {}×{}",
                    t.k, t.l, self.n, self.n
                ));
            }
            let v = rows_to_matrix(&t.value);
            if (&v - v.transpose()).amax() > 1e-12 {
                return bad(format!("term (k={}, l={}) is not symmetric", t.k, t.l));
            }
            if let Some(g) = &t.gradient {
                if g.len() != self.n {
                    return bad(format!(
                        "gradient of term (k={}, l={}) needs {} components",
                        t.k, t.l, self.n
                    ));
                }
                for gi in g {
                    if gi.len() != self.n || gi.iter().any(|r| r.len() != self.n) {
                        return bad(format!(
                            "gradient of term (k={}, l={}) has wrong shape",
                            t.k, t.l
                        ));
                    }
                }
            }
            if t.k % 2 == 1 && t.k < self.even_order && t.l == 0 && v.amax() > 0.0 {
                return bad(format!(
                    "odd coefficient ω_{} below even order {}",
                    t.k, self.even_order
                ));
            }
        }
        if let Some(t) = self
            .omega_log
            .iter()
            .find(|t| t.k < self.even_order || t.l == 0)
        {
            return bad(format!(
                "log term (k={}, l={}) below even order {}",
                t.k, t.l, self.even_order
            ));
        }
        if p.len() != self.n {
            return bad(format!(
                "boundary point has {} coordinates, expected {}",
                p.len(),
                self.n
            ));
        }
        let w0 = self.coefficient(0, 0, p);
        if w0.clone().cholesky().is_none() {
            return bad("ω₀ is not positive definite at the base point".into());
        }
        Ok(())
    }

    /// Entry `(i, j)` of the jet at `y` as a scalar log series in `x`.
    pub fn entry_series(&self, i: usize, j: usize, y: &[f64]) -> FloatSeries {
        let trunc = self.max_order() as i64 + 1;
        let mut s = FloatSeries::zero(Shape::Scalar, 0, trunc);
        for t in self.terms() {
            let v = field_at(t, self.n, y)[(i, j)];
            if v != 0.0 {
                s.insert(t.k as i64, t.l, Coeff::Scalar(v))
                    .expect("order within truncation");
            }
        }
        s
    }

    /// Matrix-valued log series of `ω(y, ·)`.
    pub fn matrix_series(&self, y: &[f64]) -> FloatSeries {
        let trunc = self.max_order() as i64 + 1;
        let mut s = FloatSeries::zero(Shape::Matrix(self.n), 0, trunc);
        for t in self.terms() {
            let v = field_at(t, self.n, y);
            let rows = (0..self.n)
                .map(|i| (0..self.n).map(|j| v[(i, j)]).collect())
                .collect();
            let m = SymMat::from_rows(rows).expect("validated symmetric");
            s.insert(t.k as i64, t.l, Coeff::Matrix(m))
                .expect("order within truncation");
        }
        s
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("jet serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self, SolverError> {
        serde_json::from_str(text).map_err(|e| SolverError::InvalidJet(e.to_string()))
    }
}

fn identity_rows(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

pub(crate) fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let c = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(n, c, |i, j| rows[i][j])
}

fn add_rows(a: &mut [Vec<f64>], b: &[Vec<f64>]) {
    for (ra, rb) in a.iter_mut().zip(b) {
        for (x, y) in ra.iter_mut().zip(rb) {
            *x += y;
        }
    }
}

fn field_at(t: &OmegaTerm, n: usize, y: &[f64]) -> DMatrix<f64> {
    let mut v = rows_to_matrix(&t.value);
    if let Some(g) = &t.gradient {
        for (yi, gi) in y.iter().zip(g) {
            if *yi != 0.0 {
                v += rows_to_matrix(gi) * *yi;
            }
        }
    }
    debug_assert_eq!(v.nrows(), n);
    v
}

/// Metric (or symmetric tensor) and its coordinate partials at a point.
#[derive(Debug, Clone)]
pub struct MetricPoint {
    pub g: DMatrix<f64>,
    /// `dg[i] = ∂_i g`.
    pub dg: Vec<DMatrix<f64>>,
}

/// A symmetric 2-tensor field on half-space coordinates `(x, y₁, …, y_n)`.
pub trait Ambient {
    fn dim(&self) -> usize;
    fn point(&self, p: &[f64]) -> MetricPoint;
}

/// Christoffel symbols `Γ[k][(i, j)]` and the inverse metric.
pub fn christoffel(mp: &MetricPoint) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
    let d = mp.g.nrows();
    let ginv = mp.g.clone().try_inverse().expect("metric is invertible");
    // lowered symbols Γ_{l,ij} = ½(∂_i g_jl + ∂_j g_il − ∂_l g_ij)
    let mut lowered = vec![DMatrix::zeros(d, d); d];
    for (l, low) in lowered.iter_mut().enumerate() {
        for i in 0..d {
            for j in i..d {
                let v = 0.5 * (mp.dg[i][(j, l)] + mp.dg[j][(i, l)] - mp.dg[l][(i, j)]);
                low[(i, j)] = v;
                low[(j, i)] = v;
            }
        }
    }
    let mut gamma = vec![DMatrix::zeros(d, d); d];
    for (k, gk) in gamma.iter_mut().enumerate() {
        for (l, low) in lowered.iter().enumerate() {
            let c = ginv[(k, l)];
            if c != 0.0 {
                *gk += low * c;
            }
        }
    }
    (ginv, gamma)
}

#[derive(Debug, Clone)]
struct CompiledTerm {
    k: u32,
    l: u32,
    value: DMatrix<f64>,
    gradient: Vec<DMatrix<f64>>,
}

/// The metric `F_δ^* g` in blown-up coordinates `(x̃, ŷ)` about `p`, with the
/// boundary coordinates further changed by a linear frame `M`:
/// `y = p + δ M ŷ`, `x = δ x̃`, and `ω̂ = Mᵀ ω M`.
///
/// With `tensor_only` the `dx²` block is dropped, giving the direction
/// `ω̂/x̃²` rather than a metric.
#[derive(Debug, Clone)]
pub struct DilatedMetric {
    pub n: usize,
    pub p: Vec<f64>,
    pub delta: f64,
    pub frame: DMatrix<f64>,
    terms: Vec<CompiledTerm>,
    tensor_only: bool,
}

impl DilatedMetric {
    /// Validated blow-up of a metric jet; `δ = 0` gives the limit model.
    pub fn new(
        jet: &MetricJet,
        p: &[f64],
        delta: f64,
        frame: &DMatrix<f64>,
    ) -> Result<Self, SolverError> {
        jet.validate(p)?;
        if !(delta >= 0.0) || delta * 100.0 >= jet.validity_radius {
            return Err(SolverError::ChartOverflow {
                delta,
                radius: jet.validity_radius,
            });
        }
        if frame.nrows() != jet.n || frame.ncols() != jet.n || frame.determinant().abs() < 1e-14 {
            return Err(SolverError::InvalidJet(
                "frame must be an invertible n×n matrix".into(),
            ));
        }
        Ok(Self::build(jet, p, delta, frame, false))
    }

    /// Unvalidated tensor direction `ω̇/x²` built from a jet of perturbations.
    pub fn direction(jet: &MetricJet, p: &[f64], delta: f64, frame: &DMatrix<f64>) -> Self {
        Self::build(jet, p, delta, frame, true)
    }

    /// Standard hyperbolic space `H^{n+1}`.
    pub fn hyperbolic(n: usize) -> Self {
        Self::build(
            &MetricJet::hyperbolic(n),
            &vec![0.0; n],
            0.0,
            &DMatrix::identity(n, n),
            false,
        )
    }

    fn build(
        jet: &MetricJet,
        p: &[f64],
        delta: f64,
        frame: &DMatrix<f64>,
        tensor_only: bool,
    ) -> Self {
        let n = jet.n;
        let terms = jet
            .terms()
            .map(|t| CompiledTerm {
                k: t.k,
                l: t.l,
                value: rows_to_matrix(&t.value),
                gradient: match &t.gradient {
                    Some(g) => g.iter().map(|gi| rows_to_matrix(gi)).collect(),
                    None => Vec::new(),
                },
            })
            .collect();
        DilatedMetric {
            n,
            p: p.to_vec(),
            delta,
            frame: frame.clone(),
            terms,
            tensor_only,
        }
    }

    /// The same jet and frame at another dilation.
    pub fn at_delta(&self, delta: f64) -> Self {
        DilatedMetric {
            delta,
            ..self.clone()
        }
    }

    /// `(ω̂, ∂_x̃ ω̂, ∂_ŷ ω̂)` at `(x̃, ŷ)`.
    pub fn omega(&self, xt: f64, yh: &[f64]) -> (DMatrix<f64>, DMatrix<f64>, Vec<DMatrix<f64>>) {
        let n = self.n;
        let d = self.delta;
        let y: Vec<f64> = (0..n)
            .map(|i| self.p[i] + d * (0..n).map(|j| self.frame[(i, j)] * yh[j]).sum::<f64>())
            .collect();
        let x = d * xt;
        let mut w = DMatrix::zeros(n, n);
        let mut wx = DMatrix::zeros(n, n);
        let mut wy = vec![DMatrix::zeros(n, n); n];
        for t in &self.terms {
            // radial factor x^k log^ℓ x and its x-derivative
            let (f, fx) = if t.k == 0 && t.l == 0 {
                (1.0, 0.0)
            } else if x <= 0.0 {
                (0.0, 0.0)
            } else {
                let lx = x.ln();
                let f = x.powi(t.k as i32) * lx.powi(t.l as i32);
                let mut fx = t.k as f64 * x.powi(t.k as i32 - 1) * lx.powi(t.l as i32);
                if t.l > 0 {
                    fx += t.l as f64 * x.powi(t.k as i32 - 1) * lx.powi(t.l as i32 - 1);
                }
                (f, fx)
            };
            if f == 0.0 && fx == 0.0 {
                continue;
            }
            let mut field = t.value.clone();
            for (yi, gi) in y.iter().zip(&t.gradient) {
                field += gi * *yi;
            }
            w += &field * f;
            wx += &field * fx;
            for (i, gi) in t.gradient.iter().enumerate() {
                wy[i] += gi * f;
            }
        }
        let mt = self.frame.transpose();
        let w_hat = &mt * w * &self.frame;
        let wx_hat = &mt * wx * &self.frame * d;
        let wy_hat: Vec<DMatrix<f64>> = (0..n)
            .map(|a| {
                let mut acc = DMatrix::zeros(n, n);
                for (j, wyj) in wy.iter().enumerate() {
                    let c = self.frame[(j, a)];
                    if c != 0.0 {
                        acc += wyj * c;
                    }
                }
                &mt * acc * &self.frame * d
            })
            .collect();
        (w_hat, wx_hat, wy_hat)
    }

    /// The compactified metric `ḡ = dx̃² + ω̂` (or `ω̂` alone for directions).
    pub fn compact_point(&self, p: &[f64]) -> MetricPoint {
        let n = self.n;
        let (w, wx, wy) = self.omega(p[0], &p[1..]);
        let embed = |m: &DMatrix<f64>, dx: f64| {
            let mut out = DMatrix::zeros(n + 1, n + 1);
            out[(0, 0)] = dx;
            out.view_mut((1, 1), (n, n)).copy_from(m);
            out
        };
        let g = embed(&w, if self.tensor_only { 0.0 } else { 1.0 });
        let mut dg = vec![embed(&wx, 0.0)];
        dg.extend(wy.iter().map(|m| embed(m, 0.0)));
        MetricPoint { g, dg }
    }
}

impl Ambient for DilatedMetric {
    fn dim(&self) -> usize {
        self.n + 1
    }

    fn point(&self, p: &[f64]) -> MetricPoint {
        let c = self.compact_point(p);
        let x = p[0];
        let inv2 = 1.0 / (x * x);
        let g = &c.g * inv2;
        let mut dg: Vec<DMatrix<f64>> = c.dg.iter().map(|m| m * inv2).collect();
        dg[0] -= &g * (2.0 / x);
        MetricPoint { g, dg }
    }
}

/// `ḡ = x² g` as an ambient metric in its own right.
pub struct Compactified<'a>(pub &'a DilatedMetric);

impl Ambient for Compactified<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn point(&self, p: &[f64]) -> MetricPoint {
        self.0.compact_point(p)
    }
}

/// `g + ε ġ`.
pub struct Perturbed<'a> {
    pub base: &'a dyn Ambient,
    pub direction: &'a dyn Ambient,
    pub eps: f64,
}

impl Ambient for Perturbed<'_> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn point(&self, p: &[f64]) -> MetricPoint {
        let a = self.base.point(p);
        let b = self.direction.point(p);
        MetricPoint {
            g: a.g + b.g * self.eps,
            dg: a
                .dg
                .iter()
                .zip(&b.dg)
                .map(|(x, y)| x + y * self.eps)
                .collect(),
        }
    }
}
