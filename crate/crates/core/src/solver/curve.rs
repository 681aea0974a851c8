//! Closed boundary curves in the `(ŷ₁, ŷ₂)` plane.

use nalgebra::DMatrix;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use super::SolverError;

type Param = Arc<dyn Fn(f64) -> [f64; 2] + Send + Sync>;

/// A closed curve `t ↦ γ(t)`, `t ∈ [0, 2π)`, star-shaped about the origin.
#[derive(Clone)]
pub struct BoundaryCurve {
    label: String,
    param: Param,
}

impl fmt::Debug for BoundaryCurve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BoundaryCurve({})", self.label)
    }
}

const SAMPLES: usize = 1024;

impl BoundaryCurve {
    pub fn new(
        label: impl Into<String>,
        param: impl Fn(f64) -> [f64; 2] + Send + Sync + 'static,
    ) -> Self {
        BoundaryCurve {
            label: label.into(),
            param: Arc::new(param),
        }
    }

    pub fn circle(radius: f64) -> Self {
        Self::new(format!("circle(r={radius})"), move |t| {
            [radius * t.cos(), radius * t.sin()]
        })
    }

    pub fn ellipse(a: f64, b: f64) -> Self {
        Self::new(format!("ellipse({a},{b})"), move |t| {
            [a * t.cos(), b * t.sin()]
        })
    }

    /// `r(θ) = exp(Σ a_j cos(jθ) + b_j sin(jθ))` for modes `(j, a_j, b_j)`.
    pub fn perturbed_circle(modes: &[(u32, f64, f64)]) -> Self {
        let modes = modes.to_vec();
        Self::new(format!("perturbed_circle({modes:?})"), move |t| {
            let lr: f64 = modes
                .iter()
                .map(|&(j, a, b)| a * (j as f64 * t).cos() + b * (j as f64 * t).sin())
                .sum();
            let r = lr.exp();
            [r * t.cos(), r * t.sin()]
        })
    }

    /// Image under a linear map of the plane.
    pub fn transformed(&self, map: &DMatrix<f64>) -> Self {
        assert_eq!((map.nrows(), map.ncols()), (2, 2));
        let inner = self.param.clone();
        let (a, b, c, d) = (map[(0, 0)], map[(0, 1)], map[(1, 0)], map[(1, 1)]);
        Self::new(format!("{}∘linear", self.label), move |t| {
            let [u, v] = inner(t);
            [a * u + b * v, c * u + d * v]
        })
    }

    /// Same curve traversed through a reparameterization `σ` of the circle.
    pub fn reparameterized(&self, sigma: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        let inner = self.param.clone();
        Self::new(format!("{}∘σ", self.label), move |t| inner(sigma(t)))
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, t: f64) -> [f64; 2] {
        (self.param)(t)
    }

    pub fn samples(&self, count: usize) -> Vec<[f64; 2]> {
        (0..count)
            .map(|i| self.eval(2.0 * PI * i as f64 / count as f64))
            .collect()
    }

    pub fn diameter(&self) -> f64 {
        let pts = self.samples(256);
        let mut d: f64 = 0.0;
        for a in &pts {
            for b in &pts {
                d = d.max(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
            }
        }
        d
    }

    /// Unwrapped polar angle along the samples; errors unless it winds once
    /// monotonically (star-shaped, hence embedded, about the origin).
    fn angle_table(&self) -> Result<(Vec<f64>, Vec<f64>, f64), SolverError> {
        let ts: Vec<f64> = (0..=SAMPLES)
            .map(|i| 2.0 * PI * i as f64 / SAMPLES as f64)
            .collect();
        let mut angles = Vec::with_capacity(ts.len());
        let mut prev: Option<f64> = None;
        for &t in &ts {
            let [u, v] = self.eval(t);
            if u.hypot(v) < 1e-12 {
                return Err(SolverError::Curve(format!(
                    "{} passes through the origin",
                    self.label
                )));
            }
            let mut a = v.atan2(u);
            if let Some(p) = prev {
                while a - p > PI {
                    a -= 2.0 * PI;
                }
                while a - p < -PI {
                    a += 2.0 * PI;
                }
            }
            angles.push(a);
            prev = Some(a);
        }
        let winding = (angles[SAMPLES] - angles[0]) / (2.0 * PI);
        let orientation = winding.signum();
        if (winding.abs() - 1.0).abs() > 1e-6 {
            return Err(SolverError::Curve(format!(
                "{} does not wind once about the origin",
                self.label
            )));
        }
        if angles
            .windows(2)
            .any(|w| (w[1] - w[0]) * orientation <= 0.0)
        {
            return Err(SolverError::Curve(format!(
                "{} is not star-shaped about the origin",
                self.label
            )));
        }
        Ok((ts, angles, orientation))
    }

    /// Checks embeddedness on the sample set.
    pub fn check(&self) -> Result<(), SolverError> {
        self.angle_table().map(|_| ())
    }

    /// `log r(θ)` at the requested polar angles, with `r` the distance from the
    /// origin to the curve along the ray at angle `θ`.
    pub fn log_radius(&self, thetas: &[f64]) -> Result<Vec<f64>, SolverError> {
        let (ts, angles, orientation) = self.angle_table()?;
        let a0 = angles[0];
        let unwrapped_angle = |t: f64, near: f64| {
            let [u, v] = self.eval(t);
            let mut a = v.atan2(u);
            while a - near > PI {
                a -= 2.0 * PI;
            }
            while a - near < -PI {
                a += 2.0 * PI;
            }
            a
        };
        thetas
            .iter()
            .map(|&theta| {
                // target angle inside the sampled sweep
                let sweep = 2.0 * PI * orientation;
                let mut target = theta;
                while (target - a0) * orientation < 0.0 {
                    target += sweep;
                }
                while (target - a0) * orientation >= 2.0 * PI {
                    target -= sweep;
                }
                let idx = angles.windows(2).position(|w| {
                    (target - w[0]) * orientation >= 0.0 && (w[1] - target) * orientation >= 0.0
                });
                let idx = idx.ok_or_else(|| SolverError::Curve("angle lookup failed".into()))?;
                let (mut lo, mut hi) = (ts[idx], ts[idx + 1]);
                let (mut alo, mut ahi) = (angles[idx], angles[idx + 1]);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    let guess = alo + (ahi - alo) * 0.5;
                    let am = unwrapped_angle(mid, guess);
                    if (am - target) * orientation < 0.0 {
                        lo = mid;
                        alo = am;
                    } else {
                        hi = mid;
                        ahi = am;
                    }
                    if hi - lo < 1e-16 {
                        break;
                    }
                }
                let [u, v] = self.eval(0.5 * (lo + hi));
                Ok(u.hypot(v).ln())
            })
            .collect()
    }
}
