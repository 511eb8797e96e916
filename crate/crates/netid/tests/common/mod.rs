//! Oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use netid::linalg;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;

pub fn gauss(n: usize, m: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, m, |_, _| rng.sample(StandardNormal))
}

pub fn random_sym(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    linalg::sym(&gauss(n, n, rng))
}

/// Haar orthogonal from the QR of a Gaussian matrix with sign-fixed R.
pub fn orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let qr = gauss(n, n, rng).qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Cayley transform of a small skew matrix: an orthogonal matrix near I.
pub fn near_identity(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = gauss(n, n, rng) * scale;
    let k = &g - g.transpose();
    let i = DMatrix::<f64>::identity(n, n);
    (&i - &k).try_inverse().unwrap() * (&i + &k)
}

pub fn eig_desc(s: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = s.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

pub fn compose(v: &DMatrix<f64>, d: &[f64]) -> DMatrix<f64> {
    v * DMatrix::from_diagonal(&DVector::from_row_slice(d)) * v.transpose()
}

/// Draws 10⁴ members of a spectral set, half around the projection `p` and
/// half globally. Returns the first one closer to `s` than `p` (slack 1e-9).
pub fn closer_candidate(
    s: &DMatrix<f64>,
    p: &DMatrix<f64>,
    rng: &mut ChaCha8Rng,
    mut spectrum: impl FnMut(&mut ChaCha8Rng) -> Vec<f64>,
) -> Option<String> {
    let n = s.nrows();
    let best = (s - p).norm();
    let pe = p.clone().symmetric_eigen();
    let p_vals: Vec<f64> = pe.eigenvalues.iter().copied().collect();
    for k in 0..10_000 {
        let x = if k % 2 == 0 {
            compose(&orthogonal(n, rng), &spectrum(rng))
        } else {
            let scale = 10f64.powf(rng.random_range(-6.0..-1.0));
            compose(&(&pe.eigenvectors * near_identity(n, scale, rng)), &p_vals)
        };
        let d = (s - &x).norm();
        if d + 1e-9 < best {
            return Some(format!("candidate {k} at {d} beats the projection at {best}"));
        }
    }
    None
}

pub fn random_spectrum(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

#[derive(Deserialize)]
pub struct QpCase {
    pub n: usize,
    pub s: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
}

impl QpCase {
    pub fn input(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.s[i][j])
    }

    pub fn solution(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.p[i][j])
    }
}

/// Minimizers of ‖L(w) − S‖_F over w ≥ 0 from an interior-point solver with
/// an active-set polish (see `data/gen_laplacian_qp.py`).
pub fn laplacian_qp_cases() -> Vec<QpCase> {
    serde_json::from_str(include_str!("../data/laplacian_qp.json")).unwrap()
}

/// Enumerates injective maps in lexicographic order; keeps the first minimizer.
pub fn brute_force_assignment(c: &DMatrix<f64>) -> (Vec<usize>, f64) {
    fn rec(c: &DMatrix<f64>, cur: &mut Vec<usize>, used: &mut [bool], acc: f64, best: &mut (Vec<usize>, f64)) {
        let i = cur.len();
        if i == c.nrows() {
            if acc < best.1 - 1e-9 {
                *best = (cur.clone(), acc);
            }
            return;
        }
        for j in 0..c.ncols() {
            if !used[j] {
                used[j] = true;
                cur.push(j);
                rec(c, cur, used, acc + c[(i, j)], best);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut best = (vec![], f64::INFINITY);
    rec(c, &mut Vec::with_capacity(c.nrows()), &mut vec![false; c.ncols()], 0.0, &mut best);
    best
}

/// Minimum of Σ (full[j_i] − known[i])² over increasing index subsets.
pub fn ordered_brute(full: &[f64], known: &[f64]) -> f64 {
    let n = full.len();
    let m = known.len();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != m {
            continue;
        }
        let idx: Vec<usize> = (0..n).filter(|j| mask >> j & 1 == 1).collect();
        let s: f64 = idx.iter().zip(known).map(|(&j, k)| (full[j] - k).powi(2)).sum();
        best = best.min(s);
    }
    best
}

pub fn sorted_desc(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Symmetric matrix with a Haar eigenbasis and eigenvalues drawn by `vals`.
pub fn with_spectrum(n: usize, vals: impl Fn(&mut ChaCha8Rng) -> f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let q = orthogonal(n, rng);
    let d: Vec<f64> = (0..n).map(|_| vals(rng)).collect();
    linalg::sym(&compose(&q, &d))
}

/// Laplacian of an Erdős–Rényi graph with edge probability ½ and weights in [0.1, 2).
pub fn weighted_laplacian(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(0.5) {
                let w = rng.random_range(0.1..2.0);
                l[(i, j)] = -w;
                l[(j, i)] = -w;
                l[(i, i)] += w;
                l[(j, j)] += w;
            }
        }
    }
    l
}
