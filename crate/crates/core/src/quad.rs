//! Quadrature helpers: Gauss–Legendre rules, tensor-product rules on spheres,
//! and a randomized quasi-Monte Carlo sampler for higher-dimensional spheres.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on `[-1, 1]` (Newton on `P_n`).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    // (P_n(z), P_n'(z)) by the three-term recurrence
    let legendre = |z: f64| {
        let (mut p0, mut p1) = (1.0, z);
        for k in 2..=n {
            let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
            p0 = p1;
            p1 = p2;
        }
        (p1, n as f64 * (z * p1 - p0) / (z * z - 1.0))
    };
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(z);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(z);
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(n);
    let (h, c) = ((b - a) / 2.0, (a + b) / 2.0);
    x.iter()
        .zip(&w)
        .map(|(xi, wi)| (c + h * xi, h * wi))
        .collect()
}

/// Point of `S^d ⊂ R^{d+1}` in hyperspherical angles `(φ₁, …, φ_d)`.
pub fn sphere_point(angles: &[f64]) -> Vec<f64> {
    let d = angles.len();
    let mut y = vec![0.0; d + 1];
    let mut s = 1.0;
    for (j, &a) in angles.iter().enumerate() {
        y[j] = s * a.cos();
        s *= a.sin();
    }
    y[d] = s;
    y
}

/// Tensor-product rule for `∫_{S^d} f dA`: Gauss–Legendre in the polar angles
/// (weight `sin^{d−j} φ_j`) and the trapezoid rule in the azimuth.
pub fn sphere_integrate(d: usize, n: usize, f: &dyn Fn(&[f64]) -> f64) -> f64 {
    assert!(d >= 1);
    let polar = gauss_legendre_on(n, 0.0, PI);
    let nz = 2 * n;
    let mut total = 0.0;
    let mut carry = 0.0;
    let mut angles = vec![0.0; d];
    let mut idx = vec![0usize; d - 1];
    loop {
        let mut w = 1.0;
        for (j, &i) in idx.iter().enumerate() {
            let (phi, wi) = polar[i];
            angles[j] = phi;
            w *= wi * phi.sin().powi((d - 1 - j) as i32);
        }
        let mut ring = 0.0;
        for a in 0..nz {
            angles[d - 1] = 2.0 * PI * a as f64 / nz as f64;
            ring += f(&sphere_point(&angles));
        }
        // Neumaier summation keeps the many-node rules at round-off level
        let term = w * (2.0 * PI / nz as f64) * ring;
        let t = total + term;
        carry += if total.abs() >= term.abs() {
            (total - t) + term
        } else {
            (term - t) + total
        };
        total = t;
        // odometer over the polar indices
        let mut j = 0;
        while j < idx.len() {
            idx[j] += 1;
            if idx[j] < n {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
        if j == idx.len() {
            break;
        }
    }
    total + carry
}

/// Volume of the unit sphere `S^d`.
pub fn sphere_volume(d: usize) -> f64 {
    // Vol(S^d) = 2π Vol(S^{d−2})/(d−1), Vol(S⁰) = 2, Vol(S¹) = 2π
    match d {
        0 => 2.0,
        1 => 2.0 * PI,
        _ => 2.0 * PI * sphere_volume(d - 2) / (d as f64 - 1.0),
    }
}

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut r = 0.0;
    let step = inv;
    while i > 0 {
        r += (i % base) as f64 * inv;
        i /= base;
        inv *= step;
    }
    r
}

/// Maps a point of `[0,1)^{2m−1}` to `S^{2m−1} ⊂ ℂ^m`, measure-preservingly:
/// the moduli `|z_j|²` are uniform on the simplex and the phases uniform.
/// Unlike a Gaussian transform the map is smooth, which is what makes
/// low-discrepancy points pay off.
fn odd_sphere_point(u: &[f64], out: &mut [f64]) {
    let m = out.len() / 2;
    let (weights, phases) = u.split_at(m - 1);
    let mut rest = 1.0;
    for j in 0..m {
        let t = if j + 1 < m {
            let keep = weights[j].powf(1.0 / (m - 1 - j) as f64);
            let t = rest * (1.0 - keep);
            rest *= keep;
            t
        } else {
            rest
        };
        let (s, c) = (2.0 * PI * phases[j]).sin_cos();
        out[2 * j] = t.sqrt() * c;
        out[2 * j + 1] = t.sqrt() * s;
    }
}

/// Maps a point of `[0,1)^{2⌈(d+1)/2⌉}` to `S^d` through Gaussians (Box–Muller)
/// and normalization.
fn gaussian_sphere_point(u: &[f64], out: &mut [f64]) {
    let dim = out.len();
    let mut y = vec![0.0; u.len()];
    for (j, g) in y.chunks_mut(2).enumerate() {
        let r = (-2.0 * u[2 * j].max(1e-300).ln()).sqrt();
        let (s, c) = (2.0 * PI * u[2 * j + 1]).sin_cos();
        g[0] = r * c;
        g[1] = r * s;
    }
    let norm = y[..dim].iter().map(|v| v * v).sum::<f64>().sqrt();
    for (o, v) in out.iter_mut().zip(&y) {
        *o = v / norm;
    }
}

/// Randomized quasi-Monte Carlo estimate of `∫_{S^d} f dA`: a Halton sequence
/// with a random Cranley–Patterson shift per replicate, mapped to the sphere
/// by complex coordinates for odd `d` and by Gaussians otherwise. Returns
/// `(mean over shifts, standard error)`.
pub fn sphere_integrate_rqmc(
    d: usize,
    points: usize,
    shifts: usize,
    seed: u64,
    f: &dyn Fn(&[f64]) -> f64,
) -> (f64, f64) {
    let dim = d + 1;
    let odd = d % 2 == 1;
    let uniforms = if odd { d } else { dim.div_ceil(2) * 2 };
    assert!(uniforms <= PRIMES.len());
    let map: fn(&[f64], &mut [f64]) = if odd {
        odd_sphere_point
    } else {
        gaussian_sphere_point
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vol = sphere_volume(d);
    let mut estimates = Vec::with_capacity(shifts);
    let mut u = vec![0.0; uniforms];
    let mut p = vec![0.0; dim];
    for _ in 0..shifts {
        let shift: Vec<f64> = (0..uniforms).map(|_| rng.random::<f64>()).collect();
        let mut acc = 0.0;
        for i in 1..=points as u64 {
            for (j, v) in u.iter_mut().enumerate() {
                *v = (radical_inverse(i, PRIMES[j]) + shift[j]).fract();
            }
            map(&u, &mut p);
            acc += f(&p);
        }
        estimates.push(vol * acc / points as f64);
    }
    let mean = estimates.iter().sum::<f64>() / shifts as f64;
    let var =
        estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (shifts.max(2) - 1) as f64;
    (mean, (var / shifts as f64).sqrt())
}
