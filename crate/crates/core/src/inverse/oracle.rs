//! Renormalized areas of minimal surfaces in a planted metric, as a black box.

use nalgebra::DMatrix;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use super::InverseError;
use crate::solver::{
    renormalized_area, solve_minimal_on, BoundaryCurve, DilatedMetric, Discretization, MetricJet,
    MinimalProblem, SolverOptions,
};

/// One area measurement: the curve lives in the `(ŷ₁, ŷ₂)` plane of the chart
/// `y = p + δ·frame·ŷ`, `x = δx̃`.
#[derive(Debug, Clone)]
pub struct AreaQuery {
    pub curve: BoundaryCurve,
    pub frame: DMatrix<f64>,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AreaAnswer {
    /// Renormalized area of the minimal surface over the dilated curve.
    pub area: f64,
    /// Coefficient `B` of `log δ` in the pulled-back area.
    pub log_coefficient: f64,
    pub spectral_tail: f64,
}

/// Area oracle for a hidden metric jet at a boundary point.
pub struct AreaOracle {
    jet: MetricJet,
    p: Vec<f64>,
    opts: SolverOptions,
    disc: Arc<Discretization>,
    resolution_limit: f64,
    threads: usize,
    queries: AtomicUsize,
}

impl std::fmt::Debug for AreaOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "AreaOracle(n = {}, queries = {})",
            self.jet.n,
            self.queries()
        )
    }
}

/// Largest accepted spectral tail of a solved surface.
pub const DEFAULT_RESOLUTION_LIMIT: f64 = 1e-3;

impl AreaOracle {
    pub fn new(jet: MetricJet, p: &[f64], opts: SolverOptions) -> Result<Self, InverseError> {
        jet.validate(p)?;
        let disc = Arc::new(Discretization::new(opts.n_cheb, opts.n_fourier));
        Ok(AreaOracle {
            jet,
            p: p.to_vec(),
            opts,
            disc,
            resolution_limit: DEFAULT_RESOLUTION_LIMIT,
            threads: default_threads(),
            queries: AtomicUsize::new(0),
        })
    }

    /// An oracle for another jet that shares this one's point, grid and settings.
    /// Recovery uses it to evaluate the already-known part of the expansion.
    pub fn model(&self, jet: MetricJet) -> Result<Self, InverseError> {
        jet.validate(&self.p)?;
        Ok(AreaOracle {
            jet,
            p: self.p.clone(),
            opts: self.opts.clone(),
            disc: self.disc.clone(),
            resolution_limit: self.resolution_limit,
            threads: self.threads,
            queries: AtomicUsize::new(0),
        })
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = threads.max(1);
        self
    }

    pub fn with_resolution_limit(mut self, limit: f64) -> Self {
        self.resolution_limit = limit;
        self
    }

    pub fn n(&self) -> usize {
        self.jet.n
    }

    pub fn point(&self) -> &[f64] {
        &self.p
    }

    pub fn options(&self) -> &SolverOptions {
        &self.opts
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    /// Order through which the hidden expansion is specified, if finite.
    pub fn truncation(&self) -> Option<u32> {
        self.jet.truncation
    }

    /// Number of queries answered so far.
    pub fn queries(&self) -> usize {
        self.queries.load(Ordering::Relaxed)
    }

    /// Renormalized area over `curve` in the standard frame.
    pub fn query(&self, curve: &BoundaryCurve, delta: f64) -> Result<f64, InverseError> {
        let frame = DMatrix::identity(self.jet.n, self.jet.n);
        Ok(self
            .answer(&AreaQuery {
                curve: curve.clone(),
                frame,
                delta,
            })?
            .area)
    }

    /// The query is solved in rescaled coordinates, where the frame is divided
    /// by `c` and `δ` multiplied by it, with `c²` the conformal scale of `ω₀(p)`
    /// on the query plane. The curve and the surface are unchanged, but the
    /// limit surface becomes a round hemisphere, which the spectral grid
    /// resolves far better than a stretched cap. In the rescaled chart the
    /// defining function is `x̃/c`, which shifts the Riesz finite part by
    /// `B log c`. The pole `B` of a surface only sees the first-order term of
    /// the metric, so without one it vanishes identically, its measured value
    /// is discretization noise, and no shift is applied.
    pub fn answer(&self, q: &AreaQuery) -> Result<AreaAnswer, InverseError> {
        self.queries.fetch_add(1, Ordering::Relaxed);
        let c = self.plane_scale(&q.frame);
        let metric = DilatedMetric::new(&self.jet, &self.p, q.delta * c, &(&q.frame / c))?;
        let problem = MinimalProblem {
            metric,
            curve: q.curve.clone(),
        };
        let surface = solve_minimal_on(&problem, self.disc.clone(), &self.opts, None)?;
        let report = renormalized_area(&surface, &problem.metric, self.resolution_limit)?;
        let shift = if self.jet.terms().any(|t| t.k == 1) {
            report.simple_pole * c.ln()
        } else {
            0.0
        };
        Ok(AreaAnswer {
            area: report.value + shift,
            log_coefficient: report.simple_pole,
            spectral_tail: report.spectral_tail,
        })
    }

    /// `det(Pᵀω₀(p)P)^{1/4}` for the first two columns `P` of the frame.
    fn plane_scale(&self, frame: &DMatrix<f64>) -> f64 {
        let plane = frame.columns(0, 2);
        let gram = plane.transpose() * self.jet.coefficient(0, 0, &self.p) * plane;
        let det = gram.determinant();
        if det > 0.0 {
            det.powf(0.25)
        } else {
            1.0
        }
    }

    /// Answers independent queries on up to `threads` workers, in order.
    pub fn answer_all(&self, queries: &[AreaQuery]) -> Result<Vec<AreaAnswer>, InverseError> {
        parallel_map(queries, self.threads, |q| self.answer(q))
            .into_iter()
            .collect()
    }
}

/// Worker count from `RVLAB_THREADS`, else the available parallelism.
pub fn default_threads() -> usize {
    std::env::var("RVLAB_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

/// Order-preserving map over a slice with scoped worker threads.
pub fn parallel_map<T: Sync, R: Send>(
    items: &[T],
    threads: usize,
    f: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    let results = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                results.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|r| r.expect("every item mapped"))
        .collect()
}
