//! Oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Legendre polynomial `P_m(z)` and its derivative.
fn legendre(m: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    for k in 2..=m {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    (p1, m as f64 * (z * p1 - p0) / (z * z - 1.0))
}

/// Gauss–Legendre nodes and weights on [-1, 1] by Newton iteration on P_m.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        for _ in 0..50 {
            let (p, dp) = legendre(m, z);
            z -= p / dp;
        }
        let (_, dp) = legendre(m, z);
        x[i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

fn square(g: &(Vec<f64>, Vec<f64>), x0: f64, x1: f64, y0: f64, y1: f64, f: &impl Fn(f64, f64) -> f64) -> f64 {
    let (hx, hy) = (0.5 * (x1 - x0), 0.5 * (y1 - y0));
    let mut acc = 0.0;
    for (xi, wi) in g.0.iter().zip(&g.1) {
        for (yj, wj) in g.0.iter().zip(&g.1) {
            acc += wi * wj * f(x0 + hx * (xi + 1.0), y0 + hy * (yj + 1.0));
        }
    }
    acc * hx * hy
}

fn line(g: &(Vec<f64>, Vec<f64>), x0: f64, x1: f64, f: &impl Fn(f64) -> f64) -> f64 {
    let hx = 0.5 * (x1 - x0);
    g.0.iter().zip(&g.1).map(|(x, w)| w * f(x0 + hx * (x + 1.0))).sum::<f64>() * hx
}

/// Brute-force `½ ∬_{ℝ×ℝ} (ū(x) − ū(y))² / |x − y|^{1+2θ}` for the
/// piecewise-linear interpolant of `values` on `n` interior nodes of
/// `(a, b)`, extended by zero. Same-cell blocks are integrated in closed
/// form, blocks sharing a node by geometric grading towards that node, and
/// the exterior tail by grading towards the endpoints.
pub fn gagliardo_quadrature(a: f64, b: f64, values: &[f64], theta: f64) -> f64 {
    let n = values.len();
    let h = (b - a) / (n + 1) as f64;
    let g = gauss_legendre(12);
    let mut nodal = vec![0.0];
    nodal.extend_from_slice(values);
    nodal.push(0.0);
    let xs: Vec<f64> = (0..=n + 1).map(|i| a + i as f64 * h).collect();
    let f = |x: f64| -> f64 {
        let c = (((x - a) / h).floor() as usize).min(n);
        let t = (x - xs[c]) / h;
        nodal[c] * (1.0 - t) + nodal[c + 1] * t
    };
    let e = 1.0 + 2.0 * theta;
    let cells = n + 1;
    let mut total = 0.0;
    for c in 0..cells {
        let s = (nodal[c + 1] - nodal[c]) / h;
        total += 0.5 * s * s * 2.0 * h.powf(3.0 - 2.0 * theta) / ((2.0 - 2.0 * theta) * (3.0 - 2.0 * theta));
        for d in c + 1..cells {
            if d == c + 1 {
                // x = p − α, y = p + β around the shared node p.
                let p = xs[d];
                let k = |al: f64, be: f64| {
                    let diff = f(p - al) - f(p + be);
                    diff * diff / (al + be).powf(e)
                };
                let mut l = h;
                for _ in 0..60 {
                    let m = 0.5 * l;
                    total += square(&g, m, l, 0.0, m, &k) + square(&g, 0.0, m, m, l, &k) + square(&g, m, l, m, l, &k);
                    l = m;
                }
            } else {
                let k = |x: f64, y: f64| {
                    let diff = f(x) - f(y);
                    diff * diff / (y - x).powf(e)
                };
                total += square(&g, xs[c], xs[c + 1], xs[d], xs[d + 1], &k);
            }
        }
    }
    let kappa = |x: f64| ((x - a).powf(-2.0 * theta) + (b - x).powf(-2.0 * theta)) / (2.0 * theta);
    let tail = |x: f64| f(x) * f(x) * kappa(x);
    for c in 1..cells - 1 {
        total += line(&g, xs[c], xs[c + 1], &tail);
    }
    // Boundary cells in the distance r to the endpoint, graded towards it.
    let len = b - a;
    let k2 = |r: f64| (r.powf(-2.0 * theta) + (len - r).powf(-2.0 * theta)) / (2.0 * theta);
    let (s_left, s_right) = (nodal[1] / h, nodal[n] / h);
    let left = |r: f64| (s_left * r).powi(2) * k2(r);
    let right = |r: f64| (s_right * r).powi(2) * k2(r);
    let mut l = h;
    for _ in 0..60 {
        let m = 0.5 * l;
        total += line(&g, m, l, &left) + line(&g, m, l, &right);
        l = m;
    }
    total
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform random values in [lo, hi).
pub fn random_values(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect()
}
