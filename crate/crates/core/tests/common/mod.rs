//! Test-side oracles. Nothing here calls the crate's solvers.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use panel_qpe::PanelData;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Y = a_i + slope * X + noise, X uniform on [-1, 1], d = 1.
pub fn random_panel(n: usize, t: usize, slope: f64, seed: u64) -> PanelData {
    let mut r = rng(seed);
    let mut x = Vec::with_capacity(n * t);
    let mut y = Vec::with_capacity(n * t);
    for _ in 0..n {
        let a: f64 = r.random_range(-2.0..2.0);
        for _ in 0..t {
            let xv: f64 = r.random_range(-1.0..1.0);
            // sum of uniforms: continuous, no ties
            let e: f64 = r.random_range(-1.0..1.0) + r.random_range(-1.0..1.0);
            x.push(xv);
            y.push(a + slope * xv + (1.0 + 0.5 * xv.abs()) * e);
        }
    }
    PanelData::from_dense(n, t, 1, y, x).unwrap()
}

pub fn epan(u: f64) -> f64 {
    if u.abs() <= 1.0 {
        0.75 * (1.0 - u * u)
    } else {
        0.0
    }
}

fn rho(u: f64, tau: f64) -> f64 {
    if u > 0.0 {
        tau * u
    } else {
        (tau - 1.0) * u
    }
}

/// Local observations of a d = 1 panel: per unit `(y, z = X - x, w)`.
pub fn local_obs(p: &PanelData, x0: f64, h: f64) -> Vec<Vec<(f64, f64, f64)>> {
    (0..p.n_units())
        .map(|i| {
            (0..p.n_periods())
                .filter_map(|t| {
                    let z = p.x(i, t)[0] - x0;
                    let w = epan(z / h);
                    (w > 0.0).then_some((p.y(i, t), z, w))
                })
                .collect()
        })
        .collect()
}

/// Objective minimised over every intercept candidate: brute force over the
/// breakpoints `y - z beta` of each unit (a minimiser of a weighted check
/// loss is always one of them).
pub fn profiled_bruteforce(obs: &[Vec<(f64, f64, f64)>], beta: f64, tau: f64) -> f64 {
    let mut total = 0.0;
    for unit in obs {
        if unit.is_empty() {
            continue;
        }
        let mut best = f64::INFINITY;
        for &(yc, zc, _) in unit {
            let eta = yc - zc * beta;
            let v: f64 = unit.iter().map(|&(y, z, w)| w * rho(y - eta - z * beta, tau)).sum();
            best = best.min(v);
        }
        total += best;
    }
    total
}

/// Grid over beta at resolution 1e-3 on [lo, hi] with exact brute-force
/// profiling of every intercept, then golden-section polish of the convex
/// profiled function around the best grid point.
pub fn llqr_oracle(obs: &[Vec<(f64, f64, f64)>], tau: f64, lo: f64, hi: f64) -> f64 {
    let steps = ((hi - lo) / 1e-3).round() as usize;
    let (mut best_b, mut best_v) = (lo, f64::INFINITY);
    for k in 0..=steps {
        let b = lo + k as f64 * 1e-3;
        let v = profiled_bruteforce(obs, b, tau);
        if v < best_v {
            best_v = v;
            best_b = b;
        }
    }
    let (mut a, mut c) = (best_b - 1e-3, best_b + 1e-3);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let m1 = c - phi * (c - a);
        let m2 = a + phi * (c - a);
        if profiled_bruteforce(obs, m1, tau) <= profiled_bruteforce(obs, m2, tau) {
            c = m2;
        } else {
            a = m1;
        }
    }
    0.5 * (a + c)
}

/// g(v) = 105/64 (1 - 5v^2 + 7v^4 - 3v^6) on [-1, 1].
pub fn g4(v: f64) -> f64 {
    if v.abs() > 1.0 {
        return 0.0;
    }
    let v2 = v * v;
    105.0 / 64.0 * (1.0 - 5.0 * v2 + 7.0 * v2 * v2 - 3.0 * v2 * v2 * v2)
}

pub fn g4_prime(v: f64) -> f64 {
    if v.abs() > 1.0 {
        return 0.0;
    }
    105.0 / 64.0 * (-10.0 * v + 28.0 * v.powi(3) - 18.0 * v.powi(5))
}

/// G(v) = 1 - int_{-1}^v g.
pub fn big_g4(v: f64) -> f64 {
    if v <= -1.0 {
        return 1.0;
    }
    if v >= 1.0 {
        return 0.0;
    }
    let anti = v - 5.0 * v.powi(3) / 3.0 + 7.0 * v.powi(5) / 5.0 - 3.0 * v.powi(7) / 7.0;
    1.0 - 105.0 / 64.0 * (anti + 32.0 / 105.0)
}

/// Smoothed objective in (eta_1..eta_m, beta) with its dense gradient and Hessian.
pub fn smoothed_dense(
    obs: &[Vec<(f64, f64, f64)>],
    theta: &[f64],
    tau: f64,
    b: f64,
) -> (f64, DVector<f64>, DMatrix<f64>) {
    let m = obs.len();
    let beta = theta[m];
    let mut f = 0.0;
    let mut g = DVector::zeros(m + 1);
    let mut hm = DMatrix::zeros(m + 1, m + 1);
    for (i, unit) in obs.iter().enumerate() {
        for &(y, z, w) in unit {
            let u = y - theta[i] - z * beta;
            let s = u / b;
            f += w * (tau - big_g4(s)) * u;
            let d1 = tau - big_g4(s) + g4(s) * s;
            let d2 = (2.0 * g4(s) + g4_prime(s) * s) / b;
            g[i] -= w * d1;
            g[m] -= w * d1 * z;
            hm[(i, i)] += w * d2;
            hm[(i, m)] += w * d2 * z;
            hm[(m, i)] += w * d2 * z;
            hm[(m, m)] += w * d2 * z * z;
        }
    }
    (f, g, hm)
}

/// Dense Newton on the smoothed objective from `start`; indefinite Hessians
/// are replaced by their absolute-eigenvalue version. Returns (eta.., beta).
pub fn llsqr_dense_oracle(obs: &[Vec<(f64, f64, f64)>], start: Vec<f64>, tau: f64, b: f64) -> Vec<f64> {
    let n = start.len();
    let mut th = DVector::from_vec(start);
    for _ in 0..500 {
        let (f, g, mut hm) = smoothed_dense(obs, th.as_slice(), tau, b);
        if g.amax() < 1e-11 * (1.0 + f.abs()) {
            break;
        }
        for i in 0..n - 1 {
            hm[(i, i)] += 1e-10 * (1.0 + hm[(i, i)].abs());
        }
        let eig = SymmetricEigen::new(hm);
        let top = eig.eigenvalues.amax();
        let mut step = DVector::zeros(n);
        for k in 0..n {
            let lam = eig.eigenvalues[k].abs().max(1e-8 * top);
            let v = eig.eigenvectors.column(k);
            step -= v * (v.dot(&g) / lam);
        }
        let slope = g.dot(&step);
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..80 {
            let trial = &th + &step * t;
            let (ft, _, _) = smoothed_dense(obs, trial.as_slice(), tau, b);
            if ft <= f + 1e-4 * t * slope && ft < f {
                th = trial;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    th.iter().copied().collect()
}

/// Central difference of a scalar function along coordinate `k`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, at: &[f64], k: usize, step: f64) -> f64 {
    let mut a = at.to_vec();
    let mut b = at.to_vec();
    a[k] += step;
    b[k] -= step;
    (f(&a) - f(&b)) / (2.0 * step)
}

/// Composite Simpson rule with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + k as f64 * h);
    }
    s * h / 3.0
}
