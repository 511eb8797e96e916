//! Rectangular min-cost assignment and the ordered eigenvalue matching built on it.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Column chosen for each row.
    pub columns: Vec<usize>,
    pub total_cost: f64,
}

struct Solved {
    cols: Vec<usize>,
    cost: f64,
    u: Vec<f64>,
    v: Vec<f64>,
}

/// Shortest augmenting path Hungarian method for m ≤ n. Unmatched columns act
/// like zero-cost dummy rows.
fn hungarian(cost: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> Solved {
    let m = rows.len();
    let n = cols.len();
    let c = |i: usize, j: usize| cost[(rows[i - 1], cols[j - 1])];
    let mut u = vec![0.0; m + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=m {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = c(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0usize; m];
    for j in 1..=n {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    let total = (0..m).map(|i| cost[(rows[i], cols[out[i]])]).sum();
    Solved {
        cols: out,
        cost: total,
        u: u[1..].to_vec(),
        v: v[1..].to_vec(),
    }
}

/// Minimum-cost injective row→column map. Among minimizers the
/// lexicographically smallest column sequence is returned.
pub fn solve_assignment(cost: &DMatrix<f64>) -> Result<Assignment> {
    let (m, n) = cost.shape();
    if m > n {
        return Err(Error::Invalid(format!("assignment needs m <= n, got {m}x{n}")));
    }
    if cost.iter().any(|x| !x.is_finite()) {
        return Err(Error::Invalid("cost matrix has non-finite entries".into()));
    }
    if m == 0 {
        return Ok(Assignment { columns: vec![], total_cost: 0.0 });
    }
    let scale = cost.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let tol = 1e-12 * (1.0 + scale * m as f64);

    let mut rows: Vec<usize> = (0..m).collect();
    let mut avail: Vec<usize> = (0..n).collect();
    let mut sol = hungarian(cost, &rows, &avail);
    let mut fixed: Vec<usize> = Vec::with_capacity(m);
    let mut prefix_cost = 0.0;

    for i in 0..m {
        // sol refers to rows[..] over avail[..]; row i is rows[0].
        let current = avail[sol.cols[0]];
        let best = sol.cost;
        let mut cands: Vec<usize> = (0..avail.len())
            .filter(|&k| avail[k] < current && cost[(i, avail[k])] - sol.u[0] - sol.v[k] <= tol)
            .collect();
        cands.sort_by_key(|&k| avail[k]);
        let mut chosen: Option<(usize, Solved)> = None;
        for k in cands {
            let j = avail[k];
            let rest: Vec<usize> = avail.iter().copied().filter(|&c| c != j).collect();
            let sub = hungarian(cost, &rows[1..], &rest);
            if cost[(i, j)] + sub.cost <= best + tol {
                chosen = Some((j, sub));
                break;
            }
        }
        let (j, next) = match chosen {
            Some((j, sub)) => (j, sub),
            None => {
                let k0 = sol.cols[0];
                let cols: Vec<usize> = sol.cols[1..].iter().map(|&k| if k > k0 { k - 1 } else { k }).collect();
                let mut v = sol.v.clone();
                v.remove(k0);
                let sub_cost = sol.cost - cost[(i, current)];
                (current, Solved { cols, cost: sub_cost, u: sol.u[1..].to_vec(), v })
            }
        };
        prefix_cost += cost[(i, j)];
        fixed.push(j);
        rows.remove(0);
        avail.retain(|&c| c != j);
        sol = next;
    }
    let total = fixed.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum::<f64>();
    debug_assert!((total - prefix_cost).abs() <= 1e-9 * (1.0 + total.abs()));
    Ok(Assignment { columns: fixed, total_cost: total })
}

/// Ordered matching of `known` (length m) into `full` (length N), both sorted
/// non-increasing, minimizing Σ (full[σᵢ] − known[i])² with σ strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderedMatch {
    pub sigma: Vec<usize>,
    pub cost: f64,
    /// True when the assignment was not ordered and the DP solve was used.
    pub used_fallback: bool,
}

pub fn match_eigenvalues(full: &[f64], known: &[f64]) -> Result<OrderedMatch> {
    let n = full.len();
    let m = known.len();
    if m > n {
        return Err(Error::Invalid(format!("{m} known eigenvalues but only {n} available")));
    }
    if full.iter().chain(known).any(|x| !x.is_finite()) {
        return Err(Error::Invalid("eigenvalues must be finite".into()));
    }
    let cost = DMatrix::from_fn(m, n, |i, j| (full[j] - known[i]).powi(2));
    let a = solve_assignment(&cost)?;
    if a.columns.windows(2).all(|w| w[0] < w[1]) {
        return Ok(OrderedMatch { sigma: a.columns, cost: a.total_cost, used_fallback: false });
    }
    let (sigma, c) = ordered_dp(&cost);
    Ok(OrderedMatch { sigma, cost: c, used_fallback: true })
}

/// Best strictly increasing selection of columns, one per row, by DP.
pub fn ordered_dp(cost: &DMatrix<f64>) -> (Vec<usize>, f64) {
    let (m, n) = cost.shape();
    if m == 0 {
        return (vec![], 0.0);
    }
    // dp[i][j]: best cost placing rows 0..=i with row i at a column ≤ j.
    let mut dp = vec![vec![f64::INFINITY; n]; m];
    let mut take = vec![vec![false; n]; m];
    for i in 0..m {
        for j in i..n {
            let prev = if i == 0 { 0.0 } else { dp[i - 1][j - 1] };
            let here = prev + cost[(i, j)];
            let skip = if j > i { dp[i][j - 1] } else { f64::INFINITY };
            if here <= skip {
                dp[i][j] = here;
                take[i][j] = true;
            } else {
                dp[i][j] = skip;
            }
        }
    }
    let mut sigma = vec![0; m];
    let mut j = n - 1;
    for i in (0..m).rev() {
        while !take[i][j] {
            j -= 1;
        }
        sigma[i] = j;
        j = j.wrapping_sub(1);
    }
    (sigma, dp[m - 1][n - 1])
}
