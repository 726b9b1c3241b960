//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use chrono::NaiveDate;
use hops::features::{HourlyRecord, Timestamp};
use hops::numerics::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal via Box–Muller.
pub fn normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| normal(rng))
}

pub fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

pub struct JacobiSvd {
    /// Descending.
    pub sigma: Vec<f64>,
    /// Right singular vectors, one `Vec` per column (only when rows ≥ cols).
    pub v: Vec<Vec<f64>>,
    /// Left singular vectors for nonzero `sigma`, one `Vec` per column.
    pub u: Vec<Vec<f64>>,
}

/// One-sided (Hestenes) Jacobi SVD. Wide inputs are transposed, in which
/// case only `sigma` is meaningful.
pub fn jacobi_svd(a: &Matrix) -> JacobiSvd {
    let a = if a.rows() < a.cols() { a.transpose() } else { a.clone() };
    let (m, n) = (a.rows(), a.cols());
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| f64::from(u8::from(i == j))).collect())
        .collect();
    for _sweep in 0..200 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha: f64 = cols[p].iter().map(|x| x * x).sum();
                let beta: f64 = cols[q].iter().map(|x| x * x).sum();
                let gamma: f64 = cols[p].iter().zip(&cols[q]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for vecs in [&mut cols, &mut v] {
                    let (left, right) = vecs.split_at_mut(q);
                    for (x, y) in left[p].iter_mut().zip(right[0].iter_mut()) {
                        let (xp, yq) = (*x, *y);
                        *x = c * xp - s * yq;
                        *y = s * xp + c * yq;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = cols.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());
    let sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let u = order
        .iter()
        .filter(|&&j| norms[j] > 0.0)
        .map(|&j| cols[j].iter().map(|x| x / norms[j]).collect())
        .collect();
    let v = order.iter().map(|&j| v[j].clone()).collect();
    let _ = m;
    JacobiSvd { sigma, v, u }
}

/// Minimum-norm least squares through the Jacobi SVD, cutoff `1e-10·σ₁`.
pub fn pinv_solve(a: &Matrix, y: &[f64]) -> Vec<f64> {
    assert!(a.rows() >= a.cols(), "oracle expects a tall matrix");
    let svd = jacobi_svd(a);
    let cutoff = 1e-10 * svd.sigma[0];
    let mut w = vec![0.0; a.cols()];
    for (j, &s) in svd.sigma.iter().enumerate() {
        if s <= cutoff {
            break;
        }
        let coef: f64 = svd.u[j].iter().zip(y).map(|(u, t)| u * t).sum::<f64>() / s;
        for (wi, vi) in w.iter_mut().zip(&svd.v[j]) {
            *wi += coef * vi;
        }
    }
    w
}

/// Every multiset of `0..n` with size `0..=d`, as sorted index lists.
pub fn monomial_indices(n: usize, d: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, left: usize, from: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        out.push(cur.clone());
        if left == 0 {
            return;
        }
        for i in from..n {
            cur.push(i);
            rec(n, left - 1, i, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, d, 0, &mut Vec::new(), &mut out);
    out
}

/// Design with one column per monomial of degree `≤ d`.
pub fn monomial_design(x: &Matrix, d: usize) -> Matrix {
    let idx = monomial_indices(x.cols(), d);
    Matrix::from_fn(x.rows(), idx.len(), |i, j| idx[j].iter().map(|&c| x.get(i, c)).product())
}

/// `Σ over all multi-indices of W[idx]·Π v[idx]` for a dense order-`order`
/// tensor with side `k`.
pub fn brute_force_form(tensor: &[f64], k: usize, order: usize, v: &[f64]) -> f64 {
    let mut total = 0.0;
    for (flat, w) in tensor.iter().enumerate() {
        let mut rem = flat;
        let mut prod = 1.0;
        for _ in 0..order {
            prod *= v[rem % k];
            rem /= k;
        }
        total += w * prod;
    }
    total
}

pub fn relative_deviation(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / norm.max(f64::MIN_POSITIVE)
}

pub fn ts(y: i32, m: u32, d: u32, hour_ending: u32) -> Timestamp {
    Timestamp::from_hour_ending(NaiveDate::from_ymd_opt(y, m, d).unwrap(), hour_ending).unwrap()
}

/// Seeded hourly weather and load with seasonal, daily and temperature
/// structure. Loads stay well above zero.
pub fn synthetic_records(zone: &str, start: Timestamp, hours: usize, seed: u64) -> Vec<HourlyRecord> {
    let mut r = rng(seed);
    let mut t = start;
    let mut temp_noise = 0.0;
    (0..hours)
        .map(|i| {
            let day = i as f64 / 24.0;
            temp_noise = 0.8 * temp_noise + 2.0 * normal(&mut r);
            let temp = 50.0
                + 25.0 * (std::f64::consts::TAU * (day - 110.0) / 365.25).sin()
                + 8.0 * (std::f64::consts::TAU * (f64::from(t.hour()) - 9.0) / 24.0).sin()
                + temp_noise;
            let spread = 4.0 + 6.0 * r.gen::<f64>();
            let weekday_effect = if t.weekday() >= 5 { -120.0 } else { 0.0 };
            let hour_shape = 150.0 * (std::f64::consts::TAU * (f64::from(t.hour()) - 13.0) / 24.0).cos();
            let load = 2000.0 + 0.9 * (temp - 62.0).powi(2) + hour_shape + weekday_effect + 20.0 * normal(&mut r);
            let rec = HourlyRecord {
                timestamp: t,
                load: Some(load),
                drybulb: Some(temp),
                dewpoint: Some(temp - spread),
                zone: zone.to_string(),
            };
            t = t.next_hour();
            rec
        })
        .collect()
}
