//! Structured inverse eigenvalue problem solved by alternating projections.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dynamics::ScalarMap;
use crate::error::{Error, Result};
use crate::graph;
use crate::linalg;
use crate::matching;
use crate::recovery::principal_log;

// ---------------------------------------------------------------------------
// spectral sets

/// Prescribed spectrum: full (`lambda.len() == n`) or partial, with optional
/// uncertainty radius, spectral cap and per-eigenvalue bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralTarget {
    pub n: usize,
    /// Non-increasing.
    pub lambda: Vec<f64>,
    pub epsilon: f64,
    pub rho: f64,
    pub bounds: Option<(Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    Exact,
    Ball,
    Partial,
    Box,
}

fn sorted_desc(v: &[f64]) -> Vec<f64> {
    let mut v = v.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

impl SpectralTarget {
    pub fn exact(lambda: &[f64]) -> Result<Self> {
        Self::new(lambda.len(), lambda, 0.0, f64::INFINITY, None)
    }

    pub fn ball(lambda: &[f64], epsilon: f64) -> Result<Self> {
        Self::new(lambda.len(), lambda, epsilon, f64::INFINITY, None)
    }

    pub fn partial(n: usize, lambda_m: &[f64], epsilon: f64, rho: f64) -> Result<Self> {
        Self::new(n, lambda_m, epsilon, rho, None)
    }

    pub fn boxed(lambda: &[f64], a: &[f64], b: &[f64]) -> Result<Self> {
        Self::new(lambda.len(), lambda, 0.0, f64::INFINITY, Some((a.to_vec(), b.to_vec())))
    }

    pub fn new(n: usize, lambda: &[f64], epsilon: f64, rho: f64, bounds: Option<(Vec<f64>, Vec<f64>)>) -> Result<Self> {
        if lambda.iter().any(|x| !x.is_finite()) {
            return Err(Error::Invalid("target eigenvalues must be finite".into()));
        }
        if lambda.len() > n {
            return Err(Error::Invalid(format!("{} target eigenvalues for an {n}-node graph", lambda.len())));
        }
        if !(epsilon >= 0.0) {
            return Err(Error::Invalid(format!("epsilon must be nonnegative, got {epsilon}")));
        }
        let lambda = sorted_desc(lambda);
        if lambda.len() < n {
            let top = lambda.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if !(rho >= top) {
                return Err(Error::Invalid(format!("rho = {rho} is below the largest known |eigenvalue| {top}")));
            }
        }
        if let Some((a, b)) = &bounds {
            if lambda.len() != n || a.len() != n || b.len() != n {
                return Err(Error::Invalid("bounds need a full spectrum and n entries each".into()));
            }
            if a.iter().zip(b).any(|(x, y)| !(x <= y)) {
                return Err(Error::Invalid("bounds must satisfy a_i <= b_i".into()));
            }
        }
        Ok(SpectralTarget { n, lambda, epsilon, rho, bounds })
    }

    pub fn kind(&self) -> TargetKind {
        if self.bounds.is_some() {
            TargetKind::Box
        } else if self.lambda.len() < self.n {
            TargetKind::Partial
        } else if self.epsilon > 0.0 {
            TargetKind::Ball
        } else {
            TargetKind::Exact
        }
    }

    /// New eigenvalues for a matrix with sorted eigenvalues `w`, in the same
    /// positions. The flag reports whether the spectrum had to be clipped to ρ.
    pub fn values(&self, w: &DVector<f64>) -> Result<(DVector<f64>, bool)> {
        if w.len() != self.n {
            return Err(Error::Dimension(format!("matrix of size {} for a target of size {}", w.len(), self.n)));
        }
        let lam = &self.lambda;
        Ok(match self.kind() {
            TargetKind::Exact => (DVector::from_row_slice(lam), false),
            TargetKind::Ball => {
                let e = self.epsilon;
                (DVector::from_fn(self.n, |i, _| lam[i] + (w[i] - lam[i]).clamp(-e, e)), false)
            }
            TargetKind::Box => {
                let (a, b) = self.bounds.as_ref().unwrap();
                (DVector::from_fn(self.n, |i, _| lam[i] + (w[i] - lam[i]).max(a[i]).min(b[i])), false)
            }
            TargetKind::Partial => {
                let rho = self.rho;
                let clipped = w.iter().any(|x| x.abs() > rho);
                let mut d = w.map(|x| x.clamp(-rho, rho));
                let full: Vec<f64> = d.iter().copied().collect();
                let m = matching::match_eigenvalues(&full, lam)?;
                let e = self.epsilon;
                for (i, &j) in m.sigma.iter().enumerate() {
                    d[j] = lam[i] + (full[j] - lam[i]).clamp(-e, e);
                }
                (d, clipped)
            }
        })
    }

    /// Frobenius-nearest point of the spectral set.
    pub fn project(&self, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let sp = spectrum(s)?;
        let (d, _) = self.values(&sp.values)?;
        Ok(linalg::from_spectrum(&sp.basis, &d))
    }
}

fn spectrum(s: &DMatrix<f64>) -> Result<graph::Spectrum> {
    if !s.is_square() {
        return Err(Error::Dimension(format!("expected a square matrix, got {:?}", s.shape())));
    }
    if linalg::asymmetry(s) > 1e-10 {
        return Err(Error::Invalid("spectral projection needs a symmetric matrix".into()));
    }
    graph::eig_sym(&linalg::sym(s))
}

pub fn project_m(s: &DMatrix<f64>, lambda_o: &[f64]) -> Result<DMatrix<f64>> {
    SpectralTarget::exact(lambda_o)?.project(s)
}

pub fn project_m_eps(s: &DMatrix<f64>, lambda_o: &[f64], epsilon: f64) -> Result<DMatrix<f64>> {
    SpectralTarget::ball(lambda_o, epsilon)?.project(s)
}

pub fn project_m_eps_m(s: &DMatrix<f64>, lambda_m: &[f64], epsilon: f64, rho: f64) -> Result<DMatrix<f64>> {
    if lambda_m.len() > s.nrows() {
        return Err(Error::Invalid(format!("m = {} exceeds N = {}", lambda_m.len(), s.nrows())));
    }
    let t = SpectralTarget::new(s.nrows(), lambda_m, epsilon, rho, None)?;
    if lambda_m.len() == s.nrows() {
        // the partial rule with m = N: matching, clamp and ρ-clipping
        let sp = spectrum(s)?;
        let w = &sp.values;
        let full: Vec<f64> = w.iter().map(|x| x.clamp(-rho, rho)).collect();
        let m = matching::match_eigenvalues(&full, &t.lambda)?;
        let mut d = DVector::from_vec(full.clone());
        for (i, &j) in m.sigma.iter().enumerate() {
            d[j] = t.lambda[i] + (full[j] - t.lambda[i]).clamp(-epsilon, epsilon);
        }
        return Ok(linalg::from_spectrum(&sp.basis, &d));
    }
    t.project(s)
}

pub fn project_m_ab(s: &DMatrix<f64>, lambda_o: &[f64], a: &[f64], b: &[f64]) -> Result<DMatrix<f64>> {
    SpectralTarget::boxed(lambda_o, a, b)?.project(s)
}

// ---------------------------------------------------------------------------
// structural sets

pub type CustomProjection = Arc<dyn Fn(&DMatrix<f64>) -> DMatrix<f64> + Send + Sync>;

#[derive(Clone)]
pub enum SetKind {
    /// Symmetric, zero row sums, off-diagonal ≤ 0.
    LaplacianCvx,
    /// Symmetric, entrywise ≥ 0.
    Nonnegative,
    /// Symmetric, zero diagonal, entrywise ≥ 0.
    AdjacencySym,
    /// Caller-supplied projection onto a closed convex set.
    Custom(CustomProjection),
}

impl fmt::Debug for SetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SetKind::LaplacianCvx => "LaplacianCvx",
            SetKind::Nonnegative => "Nonnegative",
            SetKind::AdjacencySym => "AdjacencySym",
            SetKind::Custom(_) => "Custom",
        })
    }
}

/// Data tying a candidate state graph to an identified transformed system.
#[derive(Debug, Clone)]
pub struct ConsistencyData {
    pub c: DMatrix<f64>,
    /// Output map of the transformed realization.
    pub c_t: DMatrix<f64>,
    pub a_t: DMatrix<f64>,
    pub b_t: Option<DMatrix<f64>>,
    pub tau: f64,
    pub fx_map: ScalarMap,
}

impl ConsistencyData {
    /// f_x⁻¹ of the transformed generator, i.e. T·S·T⁻¹ for the true S.
    pub fn transformed_graph(&self) -> Result<DMatrix<f64>> {
        let f = principal_log(&self.a_t)? / self.tau;
        self.fx_map.apply_inverse(&f)
    }

    fn check(&self) -> Result<usize> {
        let n = self.a_t.nrows();
        let l = self.c.nrows();
        if !self.a_t.is_square() || self.c.shape() != (l, n) || self.c_t.shape() != (l, n) {
            return Err(Error::Dimension("consistency data shapes disagree".into()));
        }
        if let Some(b) = &self.b_t {
            if b.shape() != (n, n) {
                return Err(Error::Dimension("B_T must be N x N".into()));
            }
        }
        if !(self.tau > 0.0) {
            return Err(Error::Invalid("tau must be positive".into()));
        }
        Ok(n)
    }

    /// Linear constraints on vec(T) (column-major): C_T·T = C and, when B_T is
    /// known, B_T·Tᵀ = T·B_Tᵀ.
    fn t_system(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.a_t.nrows();
        let l = self.c.nrows();
        let idx = |r: usize, c: usize| r + c * n;
        let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
        for i in 0..l {
            for j in 0..n {
                let coefs = (0..n).map(|k| (idx(k, j), self.c_t[(i, k)])).collect();
                rows.push((coefs, self.c[(i, j)]));
            }
        }
        if let Some(b) = &self.b_t {
            for i in 0..n {
                for j in i + 1..n {
                    let mut coefs = Vec::with_capacity(2 * n);
                    for k in 0..n {
                        coefs.push((idx(j, k), b[(i, k)]));
                        coefs.push((idx(i, k), -b[(j, k)]));
                    }
                    rows.push((coefs, 0.0));
                }
            }
        }
        let mut e = DMatrix::zeros(rows.len(), n * n);
        let mut f = DVector::zeros(rows.len());
        for (r, (coefs, rhs)) in rows.into_iter().enumerate() {
            for (c, v) in coefs {
                e[(r, c)] += v;
            }
            f[r] = rhs;
        }
        (e, f)
    }
}

/// Affine set {s0 + basis·z} in vec(S) coordinates, basis orthonormal.
#[derive(Debug, Clone)]
struct AffineSet {
    s0: DVector<f64>,
    basis: DMatrix<f64>,
    n: usize,
}

impl AffineSet {
    fn from_constraints(e: &DMatrix<f64>, f: &DVector<f64>, n: usize) -> (Self, f64) {
        let pinv = linalg::pinv(e, 1e-10);
        let s0 = &pinv * f;
        let resid = (e * &s0 - f).norm();
        let basis = linalg::null_space(e, 1e-10);
        (AffineSet { s0, basis, n }, resid)
    }

    fn project(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        let v = DVector::from_column_slice(s.as_slice());
        let d = &v - &self.s0;
        let z = self.basis.tr_mul(&d);
        let out = &self.s0 + &self.basis * z;
        DMatrix::from_column_slice(self.n, self.n, out.as_slice())
    }
}

#[derive(Debug, Clone)]
struct ConsistencyCache {
    data: ConsistencyData,
    affine: AffineSet,
    feasible: bool,
}

/// A structural set, optionally intersected with consistency constraints.
#[derive(Debug, Clone)]
pub struct StructuralSet {
    pub kind: SetKind,
    cons: Option<ConsistencyCache>,
}

const DYKSTRA_TOL: f64 = 1e-10;
const DYKSTRA_SWEEPS: usize = 5000;

impl StructuralSet {
    pub fn new(kind: SetKind) -> Self {
        StructuralSet { kind, cons: None }
    }

    pub fn laplacian() -> Self {
        Self::new(SetKind::LaplacianCvx)
    }

    pub fn nonnegative() -> Self {
        Self::new(SetKind::Nonnegative)
    }

    pub fn adjacency() -> Self {
        Self::new(SetKind::AdjacencySym)
    }

    /// Adds the consistency constraints: C·S = C_T·G·T for some T with
    /// C_T·T = C (and B_T·Tᵀ = T·B_Tᵀ when B_T is given).
    pub fn with_consistency(kind: SetKind, data: ConsistencyData) -> Result<Self> {
        if matches!(kind, SetKind::Custom(_)) {
            return Err(Error::Invalid("consistency constraints need a built-in set".into()));
        }
        let n = data.check()?;
        let l = data.c.nrows();
        let g = data.transformed_graph()?;
        let h = &data.c_t * &g;
        let (et, ft) = data.t_system();
        let t0 = linalg::pinv(&et, 1e-10) * &ft;
        let z = linalg::null_space(&et, 1e-10);
        // vec(H·T) = (I ⊗ H)·vec(T)
        let kron_h = |v: &DVector<f64>| -> DVector<f64> {
            let t = DMatrix::from_column_slice(n, n, v.as_slice());
            DVector::from_column_slice((&h * t).as_slice())
        };
        let h0 = kron_h(&t0);
        let mut m = DMatrix::zeros(l * n, z.ncols());
        for k in 0..z.ncols() {
            m.set_column(k, &kron_h(&z.column(k).into_owned()));
        }
        let qm = if m.ncols() > 0 { linalg::orth(&m, 1e-10) } else { DMatrix::zeros(l * n, 0) };
        let proj_perp = DMatrix::<f64>::identity(l * n, l * n) - &qm * qm.transpose();

        let idx = |r: usize, c: usize| r + c * n;
        let mut rows: Vec<DVector<f64>> = Vec::new();
        let mut rhs: Vec<f64> = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let mut r = DVector::zeros(n * n);
                r[idx(i, j)] = 1.0;
                r[idx(j, i)] = -1.0;
                rows.push(r);
                rhs.push(0.0);
            }
        }
        match kind {
            SetKind::LaplacianCvx => {
                for i in 0..n {
                    let mut r = DVector::zeros(n * n);
                    for j in 0..n {
                        r[idx(i, j)] = 1.0;
                    }
                    rows.push(r);
                    rhs.push(0.0);
                }
            }
            SetKind::AdjacencySym => {
                for i in 0..n {
                    let mut r = DVector::zeros(n * n);
                    r[idx(i, i)] = 1.0;
                    rows.push(r);
                    rhs.push(0.0);
                }
            }
            _ => {}
        }
        // P⊥·(vec(C·S) − h0) = 0, vec(C·S) = (I ⊗ C)·vec(S)
        let mut kron_c = DMatrix::zeros(l * n, n * n);
        for col in 0..n {
            kron_c.view_mut((col * l, col * n), (l, n)).copy_from(&data.c);
        }
        let pc = &proj_perp * kron_c;
        let ph = &proj_perp * h0;
        for r in 0..l * n {
            rows.push(pc.row(r).transpose());
            rhs.push(ph[r]);
        }
        let mut e = DMatrix::zeros(rows.len(), n * n);
        for (k, r) in rows.iter().enumerate() {
            e.set_row(k, &r.transpose());
        }
        let f = DVector::from_vec(rhs);
        let (affine, resid) = AffineSet::from_constraints(&e, &f, n);
        let feasible = resid <= 1e-8 * f.norm().max(1.0);
        Ok(StructuralSet {
            kind,
            cons: Some(ConsistencyCache { data, affine, feasible }),
        })
    }

    pub fn consistency(&self) -> Option<&ConsistencyData> {
        self.cons.as_ref().map(|c| &c.data)
    }

    /// False when the affine consistency constraints had no exact solution
    /// and their least-squares set is used instead.
    pub fn consistency_feasible(&self) -> bool {
        self.cons.as_ref().is_none_or(|c| c.feasible)
    }

    /// Frobenius projection onto the set.
    pub fn project(&self, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if !s.is_square() {
            return Err(Error::Dimension(format!("expected a square matrix, got {:?}", s.shape())));
        }
        if let Some(c) = &self.cons {
            if c.affine.n != s.nrows() {
                return Err(Error::Dimension("matrix size differs from the consistency data".into()));
            }
            let cone: fn(&DMatrix<f64>) -> DMatrix<f64> = match self.kind {
                SetKind::LaplacianCvx => clamp_offdiag_nonpos,
                _ => clamp_nonneg,
            };
            return dykstra(s, |x| linalg::sym(&c.affine.project(x)), cone);
        }
        Ok(match &self.kind {
            SetKind::Nonnegative => clamp_nonneg(&linalg::sym(s)),
            SetKind::AdjacencySym => {
                let mut p = clamp_nonneg(&linalg::sym(s));
                p.fill_diagonal(0.0);
                p
            }
            SetKind::LaplacianCvx => project_laplacian(s)?,
            SetKind::Custom(f) => f(s),
        })
    }

    /// ‖S − P_S(S)‖_F
    pub fn distance(&self, s: &DMatrix<f64>) -> Result<f64> {
        Ok((s - self.project(s)?).norm())
    }
}

fn clamp_nonneg(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.map(|v| v.max(0.0))
}

fn clamp_offdiag_nonpos(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut y = x.clone();
    let n = y.nrows();
    for j in 0..n {
        for i in 0..n {
            if i != j && y[(i, j)] > 0.0 {
                y[(i, j)] = 0.0;
            }
        }
    }
    y
}

/// Projection onto symmetric matrices with zero row sums.
fn project_zero_rowsum(x: &DMatrix<f64>) -> DMatrix<f64> {
    let s = linalg::sym(x);
    let n = s.nrows() as f64;
    let r = s.column_sum();
    let total = r.sum();
    DMatrix::from_fn(s.nrows(), s.ncols(), |i, j| s[(i, j)] - (r[i] + r[j]) / n + total / (n * n))
}

/// Dykstra's method for an affine set A and a convex cone K; only the cone
/// needs a correction term.
fn dykstra(
    s: &DMatrix<f64>,
    pa: impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
    pk: impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let mut x = pa(s);
    let mut p = DMatrix::zeros(s.nrows(), s.ncols());
    let mut change = f64::INFINITY;
    for _ in 0..DYKSTRA_SWEEPS {
        let xp = &x + &p;
        let y = pk(&xp);
        p = xp - &y;
        let xn = pa(&y);
        change = (&xn - &x).norm();
        x = xn;
        if change <= DYKSTRA_TOL {
            return Ok(x);
        }
    }
    Err(Error::NoConvergence {
        iterations: DYKSTRA_SWEEPS,
        last: change,
    })
}

/// Edge-weight form of the Laplacian projection: minimize ‖L(w) − S‖_F over
/// w ≥ 0 with L(w) = Σ w_e (e_i − e_j)(e_i − e_j)ᵀ. Solves the equality
/// system on a guessed support and accepts the result only if the KKT
/// conditions hold.
struct EdgeQp<'a> {
    s: &'a DMatrix<f64>,
    n: usize,
    pairs: Vec<(usize, usize)>,
    scale: f64,
}

impl<'a> EdgeQp<'a> {
    fn new(s: &'a DMatrix<f64>) -> Self {
        let n = s.nrows();
        let pairs = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        EdgeQp { s, n, pairs, scale: s.norm().max(1.0) }
    }

    fn laplacian(&self, w: &[f64]) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            let v = w[k];
            if v != 0.0 {
                l[(i, j)] -= v;
                l[(j, i)] -= v;
                l[(i, i)] += v;
                l[(j, j)] += v;
            }
        }
        l
    }

    /// (2I + UᵀU) w = r on the support, U the unsigned incidence matrix.
    fn solve(&self, active: &[bool]) -> Option<Vec<f64>> {
        let n = self.n;
        let s = self.s;
        let mut r = vec![0.0; self.pairs.len()];
        let mut q = DMatrix::<f64>::identity(n, n) * 2.0;
        let mut ur = DVector::<f64>::zeros(n);
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            if active[k] {
                r[k] = s[(i, i)] + s[(j, j)] - 2.0 * s[(i, j)];
                q[(i, i)] += 1.0;
                q[(j, j)] += 1.0;
                q[(i, j)] += 1.0;
                q[(j, i)] += 1.0;
                ur[i] += r[k];
                ur[j] += r[k];
            }
        }
        let y = q.cholesky()?.solve(&ur);
        let mut w = vec![0.0; self.pairs.len()];
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            if active[k] {
                w[k] = 0.5 * (r[k] - y[i] - y[j]);
            }
        }
        Some(w)
    }

    /// Primal-dual active set iterations from `active`. Returns L(w) when the
    /// KKT conditions are met.
    fn pdas(&self, mut active: Vec<bool>, max_iter: usize) -> Option<DMatrix<f64>> {
        let tol_w = 1e-14 * self.scale;
        let tol_g = 1e-12 * self.scale;
        for _ in 0..max_iter {
            let w = self.solve(&active)?;
            let l = self.laplacian(&w);
            let res = &l - self.s;
            let mut ok = true;
            let mut next = active.clone();
            for (k, &(i, j)) in self.pairs.iter().enumerate() {
                if active[k] {
                    if w[k] < -tol_w {
                        ok = false;
                        next[k] = false;
                    }
                } else {
                    let g = res[(i, i)] + res[(j, j)] - 2.0 * res[(i, j)];
                    if g < -tol_g {
                        ok = false;
                        next[k] = true;
                    }
                }
            }
            if ok {
                let w: Vec<f64> = w.into_iter().map(|v| v.max(0.0)).collect();
                return Some(self.laplacian(&w));
            }
            if next == active {
                return None;
            }
            active = next;
        }
        None
    }

    fn support_of(&self, x: &DMatrix<f64>) -> Vec<bool> {
        self.pairs.iter().map(|&(i, j)| x[(i, j)] < 0.0).collect()
    }
}

fn project_laplacian(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let ssym = linalg::sym(s);
    let qp = EdgeQp::new(&ssym);
    let mut x = project_zero_rowsum(&ssym);
    if let Some(l) = qp.pdas(qp.support_of(&x), 8) {
        return Ok(l);
    }
    let mut p = DMatrix::zeros(x.nrows(), x.ncols());
    let mut y = x.clone();
    let mut next_try = 16;
    let mut change = f64::INFINITY;
    for sweep in 1..=DYKSTRA_SWEEPS {
        let xp = &x + &p;
        y = clamp_offdiag_nonpos(&xp);
        p = xp - &y;
        let xn = project_zero_rowsum(&y);
        change = (&xn - &x).norm();
        x = xn;
        if change <= DYKSTRA_TOL {
            break;
        }
        if sweep == next_try {
            if let Some(l) = qp.pdas(qp.support_of(&y), 8) {
                return Ok(l);
            }
            next_try *= 2;
        }
    }
    if let Some(l) = qp.pdas(qp.support_of(&y), 20) {
        return Ok(l);
    }
    if change <= DYKSTRA_TOL {
        Ok(x)
    } else {
        Err(Error::NoConvergence {
            iterations: DYKSTRA_SWEEPS,
            last: change,
        })
    }
}

/// Convenience wrapper matching the other projections.
pub fn project_s(s: &DMatrix<f64>, set: &StructuralSet) -> Result<DMatrix<f64>> {
    set.project(s)
}

// ---------------------------------------------------------------------------
// consistency checks

#[derive(Debug, Clone)]
pub struct ConsistencyReport {
    pub t: DMatrix<f64>,
    /// ‖[C_T; C_T·G]·T − [C; C·S]‖_F
    pub residual: f64,
    /// ‖B_T·Tᵀ − T·B_Tᵀ‖_F when B_T is known.
    pub symmetry_residual: Option<f64>,
    pub underdetermined: bool,
}

pub fn check_consistency(s: &DMatrix<f64>, cons: &ConsistencyData) -> Result<ConsistencyReport> {
    let n = cons.check()?;
    if s.shape() != (n, n) {
        return Err(Error::Dimension("candidate size differs from the consistency data".into()));
    }
    let g = cons.transformed_graph()?;
    let l = cons.c.nrows();
    let mut lhs = DMatrix::zeros(2 * l, n);
    lhs.rows_mut(0, l).copy_from(&cons.c_t);
    lhs.rows_mut(l, l).copy_from(&(&cons.c_t * &g));
    let mut rhs = DMatrix::zeros(2 * l, n);
    rhs.rows_mut(0, l).copy_from(&cons.c);
    rhs.rows_mut(l, l).copy_from(&(&cons.c * s));
    let t = linalg::lstsq(&lhs, &rhs);
    let residual = (&lhs * &t - &rhs).norm();
    let symmetry_residual = cons
        .b_t
        .as_ref()
        .map(|b| (b * t.transpose() - &t * b.transpose()).norm());
    Ok(ConsistencyReport {
        underdetermined: linalg::rank(&lhs, 1e-10) < n,
        t,
        residual,
        symmetry_residual,
    })
}

/// T̂ from C_T·T = C, B_T·Tᵀ = T·B_Tᵀ and T·S = G·T jointly in least squares.
pub fn estimate_transform(s: &DMatrix<f64>, cons: &ConsistencyData) -> Result<DMatrix<f64>> {
    let n = cons.check()?;
    if s.shape() != (n, n) {
        return Err(Error::Dimension("candidate size differs from the consistency data".into()));
    }
    let g = cons.transformed_graph()?;
    let (et, ft) = cons.t_system();
    let ssym = linalg::sym(s);
    // vec(T·S − G·T) = (Sᵀ ⊗ I − I ⊗ G)·vec(T)
    let mut sim = DMatrix::zeros(n * n, n * n);
    for a in 0..n {
        for b in 0..n {
            let v = ssym[(b, a)];
            if v != 0.0 {
                for i in 0..n {
                    sim[(a * n + i, b * n + i)] += v;
                }
            }
        }
    }
    for c in 0..n {
        let mut blk = sim.view_mut((c * n, c * n), (n, n));
        blk -= &g;
    }
    let rows = et.nrows() + n * n;
    let mut e = DMatrix::zeros(rows, n * n);
    e.rows_mut(0, et.nrows()).copy_from(&et);
    e.rows_mut(et.nrows(), n * n).copy_from(&sim);
    let mut f = DVector::zeros(rows);
    f.rows_mut(0, ft.len()).copy_from(&ft);
    let t = linalg::lstsq(&e, &DMatrix::from_column_slice(rows, 1, f.as_slice()));
    Ok(DMatrix::from_column_slice(n, n, t.as_slice()))
}

/// Symmetric matrix with the spectrum of the transformed graph G whose
/// eigenbasis is fixed by the consistency data.
///
/// Write T = V·D·Qᵀ with V an eigenbasis of G, D block diagonal over its
/// eigenspaces and Q orthogonal. Then C_T·V·P·Vᵀ·C_Tᵀ = C·Cᵀ is linear in
/// P = D·Dᵀ, and requiring B = T⁻¹·B_T to be symmetric positive definite makes
/// Qᵀ the orthogonal polar factor of P^{-1/2}·V⁻¹·B_T. Needs B_T, a real
/// spectrum for G and enough observed outputs for P to be determined.
pub fn consistent_start(cons: &ConsistencyData) -> Result<DMatrix<f64>> {
    let n = cons.check()?;
    let b_t = cons.b_t.as_ref().ok_or_else(|| Error::Invalid("B_T is required".into()))?;
    let g = cons.transformed_graph()?;
    let ev = g.clone().complex_eigenvalues();
    let scale = g.norm().max(1.0);
    if ev.iter().any(|z| z.im.abs() > 1e-8 * scale) {
        return Err(Error::Numerical("transformed graph has complex eigenvalues".into()));
    }
    let lam = sorted_desc(&ev.iter().map(|z| z.re).collect::<Vec<_>>());

    // eigenspaces as [start, end) runs of the sorted spectrum
    let mut groups = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && lam[end - 1] - lam[end] <= 1e-6 * scale {
            end += 1;
        }
        groups.push((start, end));
        start = end;
    }
    let mut v = DMatrix::zeros(n, n);
    for &(s, e) in &groups {
        let mean = lam[s..e].iter().sum::<f64>() / (e - s) as f64;
        let sv = linalg::svd(&(&g - DMatrix::<f64>::identity(n, n) * mean));
        for (k, col) in (s..e).enumerate() {
            v.set_column(col, &sv.v_t.row(n - (e - s) + k).transpose());
        }
    }

    let ctv = &cons.c_t * &v;
    let l = cons.c.nrows();
    let cc = &cons.c * cons.c.transpose();
    let pairs: Vec<(usize, usize)> = (0..l).flat_map(|i| (i..l).map(move |j| (i, j))).collect();
    let unknowns: Vec<(usize, usize)> =
        groups.iter().flat_map(|&(s, e)| (s..e).flat_map(move |a| (a..e).map(move |b| (a, b)))).collect();
    let gram = DMatrix::from_fn(pairs.len(), unknowns.len(), |r, u| {
        let ((i, j), (a, b)) = (pairs[r], unknowns[u]);
        if a == b {
            ctv[(i, a)] * ctv[(j, a)]
        } else {
            ctv[(i, a)] * ctv[(j, b)] + ctv[(i, b)] * ctv[(j, a)]
        }
    });
    if linalg::rank(&gram, 1e-10) < unknowns.len() {
        return Err(Error::Invalid(format!(
            "{l} observed outputs do not determine the transform scaling of {n} modes"
        )));
    }
    let rhs = DMatrix::from_fn(pairs.len(), 1, |r, _| cc[(pairs[r].0, pairs[r].1)]);
    let sol = linalg::lstsq(&gram, &rhs);
    let mut p = DMatrix::zeros(n, n);
    for (u, &(a, b)) in unknowns.iter().enumerate() {
        p[(a, b)] = sol[u];
        p[(b, a)] = sol[u];
    }
    let (pw, _) = linalg::eigh_sorted(&p);
    if pw.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::Numerical("transform scaling is not positive definite".into()));
    }
    let k = v
        .lu()
        .solve(b_t)
        .ok_or_else(|| Error::Numerical("eigenvectors of the transformed graph are singular".into()))?;
    let m = linalg::sym_fn(&p, |x| 1.0 / x.sqrt()) * k;
    let sv = linalg::svd(&m);
    let q_t = &sv.u * &sv.v_t;
    Ok(linalg::sym(&(q_t.transpose() * DMatrix::from_diagonal(&DVector::from_vec(lam)) * &q_t)))
}

// ---------------------------------------------------------------------------
// alternating projections

#[derive(Debug, Clone)]
pub struct ApOptions {
    pub feas_tol: f64,
    pub escape_budget: usize,
    pub seed: u64,
    pub keep_iterates: bool,
}

impl Default for ApOptions {
    fn default() -> Self {
        ApOptions {
            feas_tol: 1e-6,
            escape_budget: 10,
            seed: 0,
            keep_iterates: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ApRun {
    pub iterates: Option<Vec<DMatrix<f64>>>,
    /// ‖S_k − P_S(S_k)‖_F per iteration.
    pub proj_residual: Vec<f64>,
    /// ‖S_k − S_{k+1}‖_F per iteration.
    pub step_delta: Vec<f64>,
    pub fixed_point_escapes: usize,
    pub converged: bool,
    /// Last spectral-side iterate.
    pub final_matrix: DMatrix<f64>,
    /// P_S(final_matrix), the structural-side counterpart.
    pub final_projected: DMatrix<f64>,
    pub final_residual: f64,
    pub iterations: usize,
}

/// Repeated-eigenvalue blocks [start, end) of a sorted spectrum.
fn repeated_blocks(w: &DVector<f64>, tol: f64) -> Vec<(usize, usize)> {
    let n = w.len();
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && (w[end - 1] - w[end]).abs() <= tol {
            end += 1;
        }
        if end - start > 1 {
            out.push((start, end));
        }
        start = end;
    }
    out
}

fn block_tol(w: &DVector<f64>) -> f64 {
    1e-9 * w.amax().max(1.0)
}

/// True when S is reproduced (within `tol`) by some eigenbasis choice of the
/// spectral projection of P_S(S).
pub fn detect_fixed_point_tol(s: &DMatrix<f64>, set: &StructuralSet, target: &SpectralTarget, tol: f64) -> Result<bool> {
    let p = set.project(s)?;
    let sp = spectrum(&linalg::sym(&p))?;
    let (vals, _) = target.values(&sp.values)?;
    let m = sp.basis.transpose() * linalg::sym(s) * &sp.basis;
    let n = s.nrows();
    let blocks = repeated_blocks(&sp.values, block_tol(&sp.values));
    let mut block_of = (0..n).collect::<Vec<usize>>();
    for &(a, b) in &blocks {
        for k in a..b {
            block_of[k] = a;
        }
    }
    let mut err2 = 0.0;
    for j in 0..n {
        for i in 0..n {
            if block_of[i] != block_of[j] {
                err2 += m[(i, j)].powi(2);
            }
        }
    }
    for i in 0..n {
        if !blocks.iter().any(|&(a, b)| a <= i && i < b) {
            err2 += (m[(i, i)] - vals[i]).powi(2);
        }
    }
    for &(a, b) in &blocks {
        let sub = m.view((a, a), (b - a, b - a)).into_owned();
        let (ev, _) = linalg::eigh_sorted(&sub);
        let mut want: Vec<f64> = (a..b).map(|k| vals[k]).collect();
        want.sort_by(|x, y| y.total_cmp(x));
        for (x, y) in ev.iter().zip(want) {
            err2 += (x - y).powi(2);
        }
    }
    Ok(err2.sqrt() <= tol)
}

pub fn detect_fixed_point(s: &DMatrix<f64>, set: &StructuralSet, target: &SpectralTarget) -> Result<bool> {
    detect_fixed_point_tol(s, set, target, 1e-10 * s.norm().max(1.0))
}

/// Spectral projection with the eigenbasis rotated at random inside each
/// repeated-eigenvalue block. Returns None when there is no such block.
fn escape_projection(p: &DMatrix<f64>, target: &SpectralTarget, rng: &mut ChaCha8Rng) -> Result<Option<DMatrix<f64>>> {
    let sp = spectrum(&linalg::sym(p))?;
    let blocks = repeated_blocks(&sp.values, block_tol(&sp.values));
    if blocks.is_empty() {
        return Ok(None);
    }
    let mut q = sp.basis.clone();
    for (a, b) in blocks {
        let r = linalg::haar_orthogonal(b - a, rng);
        let cols = sp.basis.columns(a, b - a) * r;
        q.columns_mut(a, b - a).copy_from(&cols);
    }
    let (d, _) = target.values(&sp.values)?;
    Ok(Some(linalg::from_spectrum(&q, &d)))
}

pub fn ap_solve(
    target: &SpectralTarget,
    set: &StructuralSet,
    s0: &DMatrix<f64>,
    max_iter: usize,
    tol_step: f64,
    opts: &ApOptions,
) -> Result<ApRun> {
    if s0.shape() != (target.n, target.n) {
        return Err(Error::Dimension(format!("start is {:?}, target needs {}", s0.shape(), target.n)));
    }
    if !(tol_step > 0.0) {
        return Err(Error::Invalid("tol_step must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut s = linalg::sym(s0);
    let start_proj = target.project(&s)?;
    if (&start_proj - &s).norm() > 1e-9 * s.norm().max(1.0) {
        s = start_proj;
    }
    let mut iterates = opts.keep_iterates.then(|| vec![s.clone()]);
    let mut proj_residual = Vec::new();
    let mut step_delta = Vec::new();
    let mut escapes = 0;
    let mut escape_next = false;
    let mut p = set.project(&s)?;
    for _ in 0..max_iter {
        let res = (&s - &p).norm();
        if let Some(&prev) = proj_residual.last() {
            if res > prev + 1e-10 * f64::max(1.0, proj_residual[0]) {
                return Err(Error::Invariant(format!(
                    "projection residual increased from {prev:.6e} to {res:.6e}"
                )));
            }
        }
        proj_residual.push(res);
        let next = if escape_next {
            escape_next = false;
            match escape_projection(&p, target, &mut rng)? {
                Some(m) => m,
                None => target.project(&p)?,
            }
        } else {
            target.project(&p)?
        };
        let delta = (&s - &next).norm();
        step_delta.push(delta);
        s = next;
        if let Some(v) = iterates.as_mut() {
            v.push(s.clone());
        }
        p = set.project(&s)?;
        if delta <= tol_step {
            let r = (&s - &p).norm();
            if r <= opts.feas_tol || escapes >= opts.escape_budget {
                break;
            }
            let tol = (1e-10 * s.norm().max(1.0)).max(10.0 * delta);
            let sp = spectrum(&linalg::sym(&p))?;
            let degenerate = !repeated_blocks(&sp.values, block_tol(&sp.values)).is_empty();
            if degenerate && detect_fixed_point_tol(&s, set, target, tol)? {
                escapes += 1;
                escape_next = true;
            } else {
                break;
            }
        }
    }
    let final_residual = (&s - &p).norm();
    Ok(ApRun {
        iterates,
        iterations: proj_residual.len(),
        proj_residual,
        step_delta,
        fixed_point_escapes: escapes,
        converged: final_residual <= opts.feas_tol,
        final_matrix: s,
        final_projected: p,
        final_residual,
    })
}

/// Q₀·diag(λ)·Q₀ᵀ with a seeded Haar-random Q₀; unknown eigenvalues are drawn
/// uniformly between the smallest and largest known ones.
pub fn random_start(target: &SpectralTarget, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = linalg::haar_orthogonal(target.n, &mut rng);
    let lo = target.lambda.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = target.lambda.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut d = target.lambda.clone();
    while d.len() < target.n {
        d.push(if lo < hi { rng.random_range(lo..hi) } else { lo.min(0.0) });
    }
    let d = sorted_desc(&d);
    linalg::from_spectrum(&q, &DVector::from_vec(d))
}

/// diag of the known eigenvalues padded with zeros, sorted non-increasing.
pub fn diagonal_start(target: &SpectralTarget) -> DMatrix<f64> {
    let mut d = target.lambda.clone();
    d.resize(target.n, 0.0);
    DMatrix::from_diagonal(&DVector::from_vec(sorted_desc(&d)))
}

/// Independent runs from random starts, one per seed, in parallel.
pub fn ap_multistart(
    target: &SpectralTarget,
    set: &StructuralSet,
    seeds: &[u64],
    max_iter: usize,
    tol_step: f64,
    opts: &ApOptions,
) -> Vec<Result<ApRun>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let s0 = random_start(target, seed);
            let o = ApOptions { seed, ..opts.clone() };
            ap_solve(target, set, &s0, max_iter, tol_step, &o)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Rate {
    Linear { r: f64, r_squared: f64 },
    NotLinear { slope: f64 },
}

/// Least-squares slope of log step_delta over the last half of the run.
pub fn estimate_linear_rate(run: &ApRun) -> Result<Rate> {
    let k = run.step_delta.len();
    let pts: Vec<(f64, f64)> = (k / 2..k)
        .filter(|&i| run.step_delta[i] > 0.0 && run.step_delta[i].is_finite())
        .map(|i| (i as f64, run.step_delta[i].ln()))
        .collect();
    if pts.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "rate estimate needs at least 4 positive deltas in the second half, got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    if !(slope < -1e-12) {
        return Ok(Rate::NotLinear { slope });
    }
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok(Rate::Linear { r: slope.exp(), r_squared })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(v))
    }

    #[test]
    fn spectral_examples() {
        assert!((project_m(&diag(&[5.0, 1.0]), &[2.0, 0.0]).unwrap() - diag(&[2.0, 0.0])).norm() < 1e-14);
        let p = project_m_eps(&diag(&[2.0, 0.0]), &[1.2, 0.0], 0.5).unwrap();
        assert!((p[(0, 0)] - 1.7).abs() < 1e-14);
        let p = project_m_eps_m(&diag(&[5.0, 3.0, 1.0]), &[2.9], 0.0, 10.0).unwrap();
        assert!((p - diag(&[5.0, 2.9, 1.0])).norm() < 1e-14);
        let p = project_m_eps_m(&diag(&[5.0, -7.0]), &[], 0.0, 4.0).unwrap();
        assert!((p - diag(&[4.0, -4.0])).norm() < 1e-14);
        let p = project_m_ab(&diag(&[-1.0, 2.0]), &[0.0, 0.0], &[0.0, 0.0], &[f64::INFINITY, f64::INFINITY]).unwrap();
        assert!((p - diag(&[0.0, 2.0])).norm() < 1e-14);
    }

    #[test]
    fn structural_examples() {
        let l = DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]);
        assert!((StructuralSet::laplacian().project(&l).unwrap() - &l).norm() < 1e-14);
        let p = StructuralSet::nonnegative().project(&-DMatrix::<f64>::identity(3, 3)).unwrap();
        assert_eq!(p, DMatrix::zeros(3, 3));
        let p = StructuralSet::adjacency().project(&DMatrix::from_element(2, 2, 1.0)).unwrap();
        assert_eq!(p, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
    }

    #[test]
    fn laplacian_projection_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.random_range(2..10);
            let s = linalg::sym(&DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)));
            let p = project_laplacian(&s).unwrap();
            assert!(p.column_sum().amax() < 1e-12);
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        assert!(p[(i, j)] <= 1e-14);
                    }
                }
            }
            // projection of the projection is itself
            assert!((project_laplacian(&p).unwrap() - &p).norm() < 1e-9);
        }
    }

    #[test]
    fn rate_examples() {
        let run = |d: Vec<f64>| ApRun {
            iterates: None,
            proj_residual: vec![0.0; d.len()],
            iterations: d.len(),
            step_delta: d,
            fixed_point_escapes: 0,
            converged: true,
            final_matrix: DMatrix::zeros(1, 1),
            final_projected: DMatrix::zeros(1, 1),
            final_residual: 0.0,
        };
        match estimate_linear_rate(&run((0..30).map(|k| 0.5f64.powi(k)).collect())).unwrap() {
            Rate::Linear { r, .. } => assert!((r - 0.5).abs() < 1e-6),
            other => panic!("{other:?}"),
        }
        assert!(matches!(estimate_linear_rate(&run(vec![0.1; 20])).unwrap(), Rate::NotLinear { .. }));
        assert!(estimate_linear_rate(&run(vec![0.1; 3])).is_err());
    }

    #[test]
    fn feasible_start_stops_at_once() {
        let l = DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]);
        let t = SpectralTarget::exact(&[3.0, 1.0, 0.0]).unwrap();
        let run = ap_solve(&t, &StructuralSet::laplacian(), &l, 100, 1e-6, &ApOptions::default()).unwrap();
        assert_eq!(run.iterations, 1);
        assert!(run.converged);
        assert!(run.proj_residual[0] < 1e-12);
    }

    #[test]
    fn negative_trace_is_infeasible() {
        let t = SpectralTarget::exact(&[1.0, -2.0, -3.0]).unwrap();
        let s0 = random_start(&t, 1);
        let run = ap_solve(&t, &StructuralSet::laplacian(), &s0, 500, 1e-9, &ApOptions::default()).unwrap();
        assert!(!run.converged);
        assert!(run.final_residual > 1.0);
    }
}
