//! Pointwise extrinsic geometry of a parameterized surface in an ambient metric.

use nalgebra::{DMatrix, DVector, Matrix2};

use super::metric::{christoffel, Ambient, MetricPoint};

/// Position and first and second partials of a 2-parameter surface.
#[derive(Debug, Clone)]
pub struct SurfaceJet {
    pub f: DVector<f64>,
    pub fa: [DVector<f64>; 2],
    /// `fab[a][b] = ∂_a∂_b F` (symmetric).
    pub fab: [[DVector<f64>; 2]; 2],
}

#[derive(Debug, Clone)]
pub struct LocalGeometry {
    pub metric: MetricPoint,
    pub ginv: DMatrix<f64>,
    pub gamma: Vec<DMatrix<f64>>,
    /// Induced metric `h_ab`.
    pub h: Matrix2<f64>,
    pub hinv: Matrix2<f64>,
    /// Vector-valued second fundamental form `(∇_a ∂_b F)^⊥`.
    pub second: [[DVector<f64>; 2]; 2],
    /// Mean curvature vector `h^{ab}(∇_a ∂_b F)^⊥` (unnormalized trace).
    pub mean: DVector<f64>,
}

pub fn inner(g: &DMatrix<f64>, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a.transpose() * g * b)[(0, 0)]
}

impl LocalGeometry {
    pub fn new(amb: &dyn Ambient, jet: &SurfaceJet) -> Self {
        let metric = amb.point(jet.f.as_slice());
        let (ginv, gamma) = christoffel(&metric);
        let g = &metric.g;
        let h = Matrix2::from_fn(|a, b| inner(g, &jet.fa[a], &jet.fa[b]));
        let hinv = h.try_inverse().expect("immersion is nondegenerate");
        let d = g.nrows();
        let cov = |a: usize, b: usize| {
            let mut v = jet.fab[a][b].clone();
            for k in 0..d {
                v[k] += (jet.fa[a].transpose() * &gamma[k] * &jet.fa[b])[(0, 0)];
            }
            v
        };
        let covs = [[cov(0, 0), cov(0, 1)], [cov(1, 0), cov(1, 1)]];
        let mut geom = LocalGeometry {
            metric,
            ginv,
            gamma,
            h,
            hinv,
            second: [
                [DVector::zeros(d), DVector::zeros(d)],
                [DVector::zeros(d), DVector::zeros(d)],
            ],
            mean: DVector::zeros(d),
        };
        for a in 0..2 {
            for b in a..2 {
                let v = geom.normal_part(&jet.fa, &covs[a][b]);
                geom.second[a][b] = v.clone();
                geom.second[b][a] = v;
            }
        }
        let mut mean = DVector::zeros(d);
        for a in 0..2 {
            for b in 0..2 {
                mean += &geom.second[a][b] * geom.hinv[(a, b)];
            }
        }
        geom.mean = mean;
        geom
    }

    /// `v − F_a h^{ab} g(F_b, v)`.
    pub fn normal_part(&self, fa: &[DVector<f64>; 2], v: &DVector<f64>) -> DVector<f64> {
        let g = &self.metric.g;
        let c = [inner(g, &fa[0], v), inner(g, &fa[1], v)];
        let mut out = v.clone();
        for a in 0..2 {
            let coef = self.hinv[(a, 0)] * c[0] + self.hinv[(a, 1)] * c[1];
            out -= &fa[a] * coef;
        }
        out
    }

    /// Unit normal obtained by projecting and normalizing `reference`.
    pub fn unit_normal(&self, fa: &[DVector<f64>; 2], reference: &DVector<f64>) -> DVector<f64> {
        let v = self.normal_part(fa, reference);
        let norm = inner(&self.metric.g, &v, &v).sqrt();
        v / norm
    }

    /// Scalar second fundamental form `A_ab = g(II_ab, ν)`.
    pub fn scalar_second(&self, nu: &DVector<f64>) -> Matrix2<f64> {
        Matrix2::from_fn(|a, b| inner(&self.metric.g, &self.second[a][b], nu))
    }

    pub fn area_element(&self) -> f64 {
        self.h.determinant().sqrt()
    }

    /// `|Â|²` of a hypersurface with unit normal `ν`.
    pub fn tracefree_norm2(&self, nu: &DVector<f64>) -> f64 {
        let a = self.scalar_second(nu);
        let mixed = self.hinv * a;
        let full = (mixed * mixed).trace();
        let h = mixed.trace();
        full - h * h / 2.0
    }

    /// Linearization of the scalar mean curvature `g(H⃗, ν)` in the metric,
    /// in the direction of the symmetric tensor `ġ` (value and partials):
    ///
    /// `−⟨ġ, A⟩ + ½ H ġ(ν, ν) + h^{ab}(∇_a ġ)(∂_b F, ν) − ½ h^{ab}(∇_ν ġ)(∂_a F, ∂_b F)`.
    pub fn metric_linearization(
        &self,
        fa: &[DVector<f64>; 2],
        nu: &DVector<f64>,
        dot: &MetricPoint,
    ) -> f64 {
        let d = nu.len();
        let gd = &dot.g;
        // (∇_X ġ)(Y, Z)
        let cov = |x: &DVector<f64>, y: &DVector<f64>, z: &DVector<f64>| {
            let mut s = 0.0;
            for i in 0..d {
                if x[i] == 0.0 {
                    continue;
                }
                let mut t = inner(&dot.dg[i], y, z);
                for l in 0..d {
                    let gy: f64 = (0..d).map(|j| self.gamma[l][(i, j)] * y[j]).sum();
                    let gz: f64 = (0..d).map(|j| self.gamma[l][(i, j)] * z[j]).sum();
                    let el = DVector::from_fn(d, |r, _| if r == l { 1.0 } else { 0.0 });
                    t -= gy * inner(gd, &el, z) + gz * inner(gd, y, &el);
                }
                s += x[i] * t;
            }
            s
        };
        let a = self.scalar_second(nu);
        let hmean = (self.hinv * a).trace();
        let mut out = 0.5 * hmean * inner(gd, nu, nu);
        for p in 0..2 {
            for q in 0..2 {
                let hpq = self.hinv[(p, q)];
                // ġ^{ab} A_ab with indices raised by h
                let mut raised = 0.0;
                for r in 0..2 {
                    for s in 0..2 {
                        raised += self.hinv[(p, r)] * self.hinv[(q, s)] * inner(gd, &fa[r], &fa[s]);
                    }
                }
                out -= raised * a[(p, q)];
                out += hpq * cov(&fa[p], &fa[q], nu);
                out -= 0.5 * hpq * cov(nu, &fa[p], &fa[q]);
            }
        }
        out
    }
}
