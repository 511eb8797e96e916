//! Graph shift operators, generators and spectral utilities.

use std::cmp::Ordering;
use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Adjacency,
    CombinatorialLaplacian,
    NormalizedLaplacian,
    Nonnegative,
    Generic,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Adjacency => "adjacency",
            Family::CombinatorialLaplacian => "combinatorial_laplacian",
            Family::NormalizedLaplacian => "normalized_laplacian",
            Family::Nonnegative => "nonnegative",
            Family::Generic => "generic",
        }
    }

    pub fn parse(s: &str) -> Result<Family> {
        Ok(match s {
            "adjacency" => Family::Adjacency,
            "combinatorial_laplacian" | "laplacian" => Family::CombinatorialLaplacian,
            "normalized_laplacian" => Family::NormalizedLaplacian,
            "nonnegative" => Family::Nonnegative,
            "generic" => Family::Generic,
            other => return Err(Error::Invalid(format!("unknown graph family '{other}'"))),
        })
    }
}

/// Symmetric matrix representation of an undirected graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphShift {
    matrix: DMatrix<f64>,
    family: Family,
}

impl GraphShift {
    /// Validates the family invariants.
    pub fn new(matrix: DMatrix<f64>, family: Family) -> Result<GraphShift> {
        if !matrix.is_square() {
            return Err(Error::Dimension(format!(
                "graph matrix must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::Invalid("graph matrix has non-finite entries".into()));
        }
        let n = matrix.nrows();
        let scale = matrix.amax().max(1.0);
        for i in 0..n {
            for j in (i + 1)..n {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::Invalid(format!("matrix not symmetric at ({i},{j})")));
                }
            }
        }
        match family {
            Family::Adjacency => {
                if (0..n).any(|i| matrix[(i, i)] != 0.0) {
                    return Err(Error::Invalid("adjacency must have zero diagonal".into()));
                }
                if matrix.iter().any(|&x| x < 0.0) {
                    return Err(Error::Invalid("adjacency must be nonnegative".into()));
                }
            }
            Family::CombinatorialLaplacian => {
                for i in 0..n {
                    if matrix.row(i).sum().abs() > 1e-10 * scale {
                        return Err(Error::Invalid(format!("laplacian row {i} does not sum to 0")));
                    }
                    if (0..n).any(|j| j != i && matrix[(i, j)] > 0.0) {
                        return Err(Error::Invalid(format!(
                            "laplacian row {i} has a positive off-diagonal entry"
                        )));
                    }
                }
            }
            Family::NormalizedLaplacian => {
                if (0..n).any(|i| (matrix[(i, i)] - 1.0).abs() > 1e-10) {
                    return Err(Error::Invalid("normalized laplacian needs unit diagonal".into()));
                }
            }
            Family::Nonnegative => {
                if matrix.iter().any(|&x| x < 0.0) {
                    return Err(Error::Invalid("matrix has negative entries".into()));
                }
            }
            Family::Generic => {}
        }
        Ok(GraphShift { matrix, family })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    /// Undirected edges (i < j) whose weight magnitude exceeds `threshold`.
    pub fn edges(&self, threshold: f64) -> Vec<(usize, usize)> {
        support(&self.matrix, threshold)
    }
}

/// Off-diagonal support of a symmetric matrix as sorted pairs i < j.
pub fn support(m: &DMatrix<f64>, threshold: f64) -> Vec<(usize, usize)> {
    let n = m.nrows();
    let mut out = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if m[(i, j)].abs() >= threshold {
                out.push((i, j));
            }
        }
    }
    out
}

/// Connectivity of the graph formed by `edges` on `n` nodes.
pub fn is_connected(n: usize, edges: &[(usize, usize)]) -> bool {
    if n == 0 {
        return true;
    }
    let mut adj = vec![Vec::new(); n];
    for &(i, j) in edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Non-increasing.
    pub values: DVector<f64>,
    /// Orthonormal eigenvectors as columns, aligned with `values`.
    pub basis: DMatrix<f64>,
}

const RETRY_BUDGET: usize = 200;

/// Simple d-regular graph from the pairing model with rejection.
pub fn random_regular(n: usize, d: usize, seed: u64) -> Result<GraphShift> {
    if d >= n {
        return Err(Error::Infeasible(format!("degree {d} must be below node count {n}")));
    }
    if (n * d) % 2 == 1 {
        return Err(Error::Infeasible(format!("n*d = {} is odd", n * d)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat_n(v, d)).collect();
    'retry: for _ in 0..RETRY_BUDGET {
        points.shuffle(&mut rng);
        let mut seen = HashSet::with_capacity(n * d / 2);
        for pair in points.chunks_exact(2) {
            let (a, b) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
            if a == b || !seen.insert((a, b)) {
                continue 'retry;
            }
        }
        let mut m = DMatrix::zeros(n, n);
        for (a, b) in seen {
            m[(a, b)] = 1.0;
            m[(b, a)] = 1.0;
        }
        return GraphShift::new(m, Family::Adjacency);
    }
    Err(Error::RetryBudget(RETRY_BUDGET))
}

/// Unit-weight adjacency from an edge list.
pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<GraphShift> {
    let mut m = DMatrix::zeros(n, n);
    for &(a, b) in edges {
        if a >= n || b >= n {
            return Err(Error::Invalid(format!("edge ({a},{b}) out of range for {n} nodes")));
        }
        if a == b {
            return Err(Error::Invalid(format!("self-loop at node {a}")));
        }
        m[(a, b)] = 1.0;
        m[(b, a)] = 1.0;
    }
    GraphShift::new(m, Family::Adjacency)
}

/// Parses "u v" lines (0-based, '#' comments). Returns the node count
/// (largest index + 1) and the edges.
pub fn parse_edge_list(text: &str) -> Result<(usize, Vec<(usize, usize)>)> {
    let mut edges = Vec::new();
    let mut n = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let parse = |tok: Option<&str>| -> Result<usize> {
            tok.ok_or_else(|| Error::Invalid(format!("line {}: expected two indices", lineno + 1)))?
                .parse::<usize>()
                .map_err(|e| Error::Invalid(format!("line {}: {e}", lineno + 1)))
        };
        let a = parse(it.next())?;
        let b = parse(it.next())?;
        if it.next().is_some() {
            return Err(Error::Invalid(format!("line {}: trailing tokens", lineno + 1)));
        }
        n = n.max(a + 1).max(b + 1);
        edges.push((a, b));
    }
    Ok((n, edges))
}

pub fn karate() -> GraphShift {
    bundled(include_str!("../data/karate.edges"))
}

/// The two non-isomorphic 8-node trees sharing the adjacency polynomial t⁸ − 7t⁶ + 9t⁴.
pub fn cospectral_trees() -> (GraphShift, GraphShift) {
    (
        bundled(include_str!("../data/tree_a.edges")),
        bundled(include_str!("../data/tree_b.edges")),
    )
}

fn bundled(text: &str) -> GraphShift {
    let (n, e) = parse_edge_list(text).expect("bundled edge list parses");
    from_edges(n, &e).expect("bundled edge list is a simple graph")
}

/// L = diag(A·1) − A.
pub fn to_laplacian(g: &GraphShift) -> Result<GraphShift> {
    if g.family() != Family::Adjacency {
        return Err(Error::Invalid(format!(
            "to_laplacian expects an adjacency matrix, got {}",
            g.family().name()
        )));
    }
    let a = g.matrix();
    let deg = a.column_sum();
    let l = DMatrix::from_diagonal(&deg) - a;
    GraphShift::new(l, Family::CombinatorialLaplacian)
}

/// Symmetric eigendecomposition with a deterministic basis: values
/// non-increasing, each eigenvector's first significant entry positive, and
/// columns inside a tied block ordered lexicographically.
pub fn eig_sym(m: &DMatrix<f64>) -> Result<Spectrum> {
    if !m.is_square() {
        return Err(Error::Dimension("eig_sym needs a square matrix".into()));
    }
    if linalg::asymmetry(m) > 1e-10 {
        return Err(Error::Invalid("eig_sym needs a symmetric matrix".into()));
    }
    let n = m.nrows();
    let (values, mut basis) = linalg::eigh_sorted(m);
    for j in 0..n {
        let col = basis.column(j);
        let big = col.amax();
        if let Some(first) = col.iter().find(|x| x.abs() > 1e-8 * big) {
            if *first < 0.0 {
                basis.column_mut(j).neg_mut();
            }
        }
    }
    let scale = values.amax().max(1.0);
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && (values[end - 1] - values[end]).abs() <= 1e-10 * scale {
            end += 1;
        }
        if end - start > 1 {
            let mut cols: Vec<DVector<f64>> = (start..end).map(|j| basis.column(j).into_owned()).collect();
            cols.sort_by(|a, b| lex_desc(a, b));
            for (k, c) in cols.iter().enumerate() {
                basis.set_column(start + k, c);
            }
        }
        start = end;
    }
    Ok(Spectrum { values, basis })
}

fn lex_desc(a: &DVector<f64>, b: &DVector<f64>) -> Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        if (x - y).abs() > 1e-12 {
            return y.total_cmp(x);
        }
    }
    Ordering::Equal
}

/// Monic characteristic polynomial, highest degree first (Faddeev–LeVerrier).
/// Coefficients are rounded to integers when every entry of `m` is an integer.
pub fn char_poly(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if !m.is_square() {
        return Err(Error::Dimension("char_poly needs a square matrix".into()));
    }
    let n = m.nrows();
    let mut coeffs = vec![0.0; n + 1];
    coeffs[0] = 1.0;
    let mut mk = DMatrix::<f64>::zeros(n, n);
    let id = DMatrix::<f64>::identity(n, n);
    for k in 1..=n {
        mk = m * &mk + &id * coeffs[k - 1];
        coeffs[k] = -(m * &mk).trace() / k as f64;
    }
    if m.iter().all(|x| x.fract() == 0.0) {
        for c in coeffs.iter_mut() {
            *c = c.round();
            if *c == 0.0 {
                *c = 0.0;
            }
        }
    }
    Ok(coeffs)
}

/// Sorted eigenvalues agree entrywise within `tol`.
pub fn is_cospectral(g1: &GraphShift, g2: &GraphShift, tol: f64) -> Result<bool> {
    if g1.n() != g2.n() {
        return Err(Error::Dimension(format!(
            "graphs have {} and {} nodes",
            g1.n(),
            g2.n()
        )));
    }
    let a = eig_sym(g1.matrix())?.values;
    let b = eig_sym(g2.matrix())?.values;
    Ok(a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() <= tol))
}
