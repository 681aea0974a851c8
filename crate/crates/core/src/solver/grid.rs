//! Doubled polar collocation grid over the hemisphere.
//!
//! A field `f(ρ, s)` on `ρ ∈ [0, π/2]`, `s ∈ S¹` is extended to `ρ ∈ [−π/2, π/2]`
//! through `f(−ρ, s) = f(ρ, s + π)`, which is smooth whenever `f` is smooth on
//! the disk. Chebyshev points in `r = 2ρ/π` with an odd degree avoid the pole,
//! and the trapezoid rule is spectral in `s`. Only rows with `r > 0` carry
//! unknowns; row `0` is the boundary `ρ = π/2`.

use nalgebra::DMatrix;
use std::f64::consts::PI;

use crate::quad::gauss_legendre_on;

/// The six second-order jet components of a field at a grid point.
pub const JET_LEN: usize = 6;

/// `(f, f_ρ, f_s, f_ρρ, f_ρs, f_ss)`.
pub type FieldJet = [f64; JET_LEN];

#[derive(Debug, Clone)]
pub struct SpectralGrid {
    /// Chebyshev degree (odd); there are `n + 1` nodes in `r`.
    pub n: usize,
    /// Fourier points (even).
    pub ns: usize,
    pub r: Vec<f64>,
    pub rho: Vec<f64>,
    pub s: Vec<f64>,
    d_rho: DMatrix<f64>,
    d_rho2: DMatrix<f64>,
    d_s_t: DMatrix<f64>,
    d_ss_t: DMatrix<f64>,
    bary: Vec<f64>,
    /// `∫₀^{π/2} ℓ_i(ρ) sin ρ dρ` for every node `i` of the doubled grid.
    sine_weights: Vec<f64>,
}

impl SpectralGrid {
    pub fn new(n: usize, ns: usize) -> Self {
        assert!(n % 2 == 1 && n >= 5, "Chebyshev degree must be odd and ≥ 5");
        assert!(ns % 2 == 0 && ns >= 8, "Fourier size must be even and ≥ 8");
        let r: Vec<f64> = (0..=n).map(|i| (PI * i as f64 / n as f64).cos()).collect();
        let rho: Vec<f64> = r.iter().map(|v| v * PI / 2.0).collect();
        let s: Vec<f64> = (0..ns).map(|k| 2.0 * PI * k as f64 / ns as f64).collect();

        let d_r = cheb_matrix(&r);
        let d_rho = d_r * (2.0 / PI);
        let d_rho2 = &d_rho * &d_rho;
        let (d_s, d_ss) = fourier_matrices(ns);

        let bary: Vec<f64> = (0..=n)
            .map(|i| {
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                if i == 0 || i == n {
                    0.5 * sign
                } else {
                    sign
                }
            })
            .collect();
        let mut grid = SpectralGrid {
            n,
            ns,
            r,
            rho,
            s,
            d_rho,
            d_rho2,
            d_s_t: d_s.transpose(),
            d_ss_t: d_ss.transpose(),
            bary,
            sine_weights: Vec::new(),
        };
        let mut weights = vec![0.0; n + 1];
        for (rho_q, w_q) in gauss_legendre_on(2 * n + 40, 0.0, PI / 2.0) {
            let basis = grid.lagrange_basis(2.0 * rho_q / PI);
            for (wi, li) in weights.iter_mut().zip(&basis) {
                *wi += w_q * rho_q.sin() * li;
            }
        }
        grid.sine_weights = weights;
        grid
    }

    /// Number of rows with unknowns (`r > 0`, excluding the boundary).
    pub fn interior_rows(&self) -> usize {
        (self.n - 1) / 2
    }

    /// Row index of the mirror node `−r_i`.
    pub fn mirror_row(&self, i: usize) -> usize {
        self.n - i
    }

    pub fn mirror_col(&self, k: usize) -> usize {
        (k + self.ns / 2) % self.ns
    }

    /// Extends values given on rows `0..=M` to the whole doubled grid.
    pub fn extend(&self, half: &DMatrix<f64>) -> DMatrix<f64> {
        let m = self.interior_rows();
        assert_eq!(half.nrows(), m + 1);
        assert_eq!(half.ncols(), self.ns);
        let mut full = DMatrix::zeros(self.n + 1, self.ns);
        for i in 0..=m {
            for k in 0..self.ns {
                full[(i, k)] = half[(i, k)];
                full[(self.mirror_row(i), self.mirror_col(k))] = half[(i, k)];
            }
        }
        full
    }

    /// Jets of a field at every node of rows `0..=M`, from its doubled extension.
    pub fn jets(&self, full: &DMatrix<f64>) -> Vec<Vec<FieldJet>> {
        let f_r = &self.d_rho * full;
        let f_rr = &self.d_rho2 * full;
        let f_s = full * &self.d_s_t;
        let f_ss = full * &self.d_ss_t;
        let f_rs = &f_r * &self.d_s_t;
        (0..=self.interior_rows())
            .map(|i| {
                (0..self.ns)
                    .map(|k| {
                        [
                            full[(i, k)],
                            f_r[(i, k)],
                            f_s[(i, k)],
                            f_rr[(i, k)],
                            f_rs[(i, k)],
                            f_ss[(i, k)],
                        ]
                    })
                    .collect()
            })
            .collect()
    }

    /// `∂_ρ` and `∂²_ρ` of an even function of `ρ` at the boundary node.
    pub fn boundary_rho_derivatives(&self, column: &[f64]) -> (f64, f64) {
        let d1: f64 = (0..=self.n).map(|j| self.d_rho[(0, j)] * column[j]).sum();
        let d2: f64 = (0..=self.n).map(|j| self.d_rho2[(0, j)] * column[j]).sum();
        (d1, d2)
    }

    /// First three `ρ`-derivatives at the boundary node of a full column.
    pub fn boundary_rho_derivatives3(&self, column: &[f64]) -> [f64; 3] {
        let (d1, d2) = self.boundary_rho_derivatives(column);
        let d3: f64 = {
            let tmp: Vec<f64> = (0..=self.n)
                .map(|i| (0..=self.n).map(|j| self.d_rho2[(i, j)] * column[j]).sum())
                .collect();
            (0..=self.n).map(|j| self.d_rho[(0, j)] * tmp[j]).sum()
        };
        [d1, d2, d3]
    }

    /// Full doubled column through `s_k`: entries at negative `r` come from `s_k + π`.
    pub fn full_column(&self, full: &DMatrix<f64>, k: usize) -> Vec<f64> {
        (0..=self.n).map(|i| full[(i, k)]).collect()
    }

    /// Barycentric Lagrange basis at `r ∈ [−1, 1]`.
    pub fn lagrange_basis(&self, r: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n + 1];
        if let Some(i) = self.r.iter().position(|&ri| (r - ri).abs() < 1e-15) {
            out[i] = 1.0;
            return out;
        }
        let mut denom = 0.0;
        for i in 0..=self.n {
            let t = self.bary[i] / (r - self.r[i]);
            out[i] = t;
            denom += t;
        }
        out.iter_mut().for_each(|v| *v /= denom);
        out
    }

    /// Interpolates a full column at polar angle `ρ`.
    pub fn interpolate(&self, column: &[f64], rho: f64) -> f64 {
        self.lagrange_basis(2.0 * rho / PI)
            .iter()
            .zip(column)
            .map(|(a, b)| a * b)
            .sum()
    }

    /// `∫₀^{π/2} f(ρ) sin ρ dρ` for an even `f` given on rows `0..=M`.
    pub fn integrate_sine(&self, half: &[f64]) -> f64 {
        let m = self.interior_rows();
        assert_eq!(half.len(), m + 1);
        (0..=self.n)
            .map(|i| {
                let src = if i <= m { i } else { self.mirror_row(i) };
                self.sine_weights[i] * half[src]
            })
            .sum()
    }

    /// Trapezoid rule over `s`.
    pub fn integrate_s(&self, values: &[f64]) -> f64 {
        2.0 * PI / self.ns as f64 * values.iter().sum::<f64>()
    }

    /// Largest Chebyshev coefficient among the top four degrees of each column
    /// of a doubled field: a spectral resolution diagnostic.
    pub fn spectral_tail(&self, full: &DMatrix<f64>) -> f64 {
        let n = self.n;
        let mut tail: f64 = 0.0;
        for k in 0..self.ns {
            for deg in n.saturating_sub(3)..=n {
                let mut a = 0.0;
                for i in 0..=n {
                    let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                    a += w * full[(i, k)] * (PI * (i * deg) as f64 / n as f64).cos();
                }
                let scale = if deg == n {
                    1.0 / n as f64
                } else {
                    2.0 / n as f64
                };
                tail = tail.max((a * scale).abs());
            }
        }
        tail
    }
}

/// Chebyshev differentiation matrix on the nodes `r`.
fn cheb_matrix(r: &[f64]) -> DMatrix<f64> {
    let n = r.len() - 1;
    let c = |i: usize| {
        let base = if i == 0 || i == n { 2.0 } else { 1.0 };
        if i % 2 == 0 {
            base
        } else {
            -base
        }
    };
    let mut d = DMatrix::zeros(n + 1, n + 1);
    for i in 0..=n {
        let mut row = 0.0;
        for j in 0..=n {
            if i != j {
                d[(i, j)] = c(i) / c(j) / (r[i] - r[j]);
                row += d[(i, j)];
            }
        }
        d[(i, i)] = -row;
    }
    d
}

/// Periodic first and second differentiation matrices on `ns` equispaced points.
fn fourier_matrices(ns: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let h = 2.0 * PI / ns as f64;
    let mut d1 = DMatrix::zeros(ns, ns);
    let mut d2 = DMatrix::zeros(ns, ns);
    for j in 0..ns {
        for k in 0..ns {
            if j == k {
                d2[(j, k)] = -PI * PI / (3.0 * h * h) - 1.0 / 6.0;
                continue;
            }
            let diff = j as f64 - k as f64;
            let sign = if (j + ns - k) % 2 == 0 { 1.0 } else { -1.0 };
            d1[(j, k)] = 0.5 * sign / (diff * h / 2.0).tan();
            d2[(j, k)] = -0.5 * sign / (diff * h / 2.0).sin().powi(2);
        }
    }
    (d1, d2)
}
