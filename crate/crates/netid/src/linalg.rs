//! Dense helpers shared by the identification and projection code.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Relative asymmetry ‖M − Mᵀ‖_F / max(1, ‖M‖_F).
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    (m - m.transpose()).norm() / m.norm().max(1.0)
}

pub fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn rel_err(a: &DMatrix<f64>, truth: &DMatrix<f64>) -> f64 {
    let d = (a - truth).norm();
    let t = truth.norm();
    if t == 0.0 {
        d
    } else {
        d / t
    }
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted non-increasing.
pub fn eigh_sorted(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let e = sym(m).symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| e.eigenvalues[b].total_cmp(&e.eigenvalues[a]));
    let vals = DVector::from_iterator(n, idx.iter().map(|&i| e.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (k, &i) in idx.iter().enumerate() {
        vecs.set_column(k, &e.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Q·diag(d)·Qᵀ, symmetrized.
pub fn from_spectrum(q: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let mut qd = q.clone();
    for (j, mut col) in qd.column_iter_mut().enumerate() {
        col *= d[j];
    }
    sym(&(qd * q.transpose()))
}

/// Apply a scalar function to a symmetric matrix through its eigenvalues.
pub fn sym_fn(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let (vals, q) = eigh_sorted(m);
    from_spectrum(&q, &vals.map(f))
}

/// Thin SVD, singular values non-increasing.
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

impl Svd {
    fn from_nalgebra(m: DMatrix<f64>) -> Self {
        let svd = m.svd(true, true);
        Svd {
            u: svd.u.unwrap(),
            s: svd.singular_values,
            v_t: svd.v_t.unwrap(),
        }
    }

    fn recompose_err(&self, m: &DMatrix<f64>) -> f64 {
        let mut us = self.u.clone();
        for (j, mut col) in us.column_iter_mut().enumerate() {
            col *= self.s[j];
        }
        (us * &self.v_t - m).norm()
    }

    fn transposed(self) -> Self {
        Svd {
            u: self.v_t.transpose(),
            s: self.s,
            v_t: self.u.transpose(),
        }
    }
}

/// SVD with a reconstruction check. nalgebra's bidiagonal QR occasionally
/// returns inaccurate singular vectors for tall matrices with clustered
/// singular values, so on failure the transpose and a QR-reduced form are
/// tried as well.
pub fn svd(m: &DMatrix<f64>) -> Svd {
    let tol = 1e-11 * m.norm().max(f64::MIN_POSITIVE) * ((m.nrows() + m.ncols()) as f64).sqrt();
    let direct = Svd::from_nalgebra(m.clone());
    if direct.recompose_err(m) <= tol {
        return direct;
    }
    let tr = Svd::from_nalgebra(m.transpose()).transposed();
    if tr.recompose_err(m) <= tol {
        return tr;
    }
    let reduced = if m.nrows() >= m.ncols() {
        let qr = m.clone().qr();
        let (q, r) = qr.unpack();
        let inner = Svd::from_nalgebra(r);
        Svd { u: q * inner.u, ..inner }
    } else {
        let qr = m.transpose().qr();
        let (q, r) = qr.unpack();
        let inner = Svd::from_nalgebra(r);
        Svd { u: q * inner.u, ..inner }.transposed()
    };
    [direct, tr, reduced]
        .into_iter()
        .min_by(|a, b| a.recompose_err(m).total_cmp(&b.recompose_err(m)))
        .unwrap()
}

/// Moore–Penrose pseudo-inverse with relative cutoff `rcond`.
pub fn pinv(m: &DMatrix<f64>, rcond: f64) -> DMatrix<f64> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return DMatrix::zeros(c, r);
    }
    let svd = svd(m);
    let cut = rcond * svd.s.max();
    let mut out = DMatrix::zeros(c, r);
    for (k, &s) in svd.s.iter().enumerate() {
        if s > cut && s > 0.0 {
            out += (svd.v_t.row(k).transpose() / s) * svd.u.column(k).transpose();
        }
    }
    out
}

/// Numerical rank with relative cutoff.
pub fn rank(m: &DMatrix<f64>, rcond: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let s = m.clone().singular_values();
    let cut = rcond * s.max();
    s.iter().filter(|&&x| x > cut && x > 0.0).count()
}

/// Minimum-norm least-squares solution of A·X = B via SVD.
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    pinv(a, 1e-13 * (a.nrows().max(a.ncols()) as f64)) * b
}

/// Orthonormal basis for the column space.
pub fn orth(m: &DMatrix<f64>, rcond: f64) -> DMatrix<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let svd = svd(m);
    let smax = svd.s.max();
    let keep: Vec<usize> = (0..svd.s.len()).filter(|&k| svd.s[k] > rcond * smax).collect();
    DMatrix::from_fn(m.nrows(), keep.len(), |i, j| svd.u[(i, keep[j])])
}

/// Orthonormal basis of the null space, columns of the returned matrix.
pub fn null_space(m: &DMatrix<f64>, rcond: f64) -> DMatrix<f64> {
    let (r, c) = m.shape();
    if r == 0 {
        return DMatrix::identity(c, c);
    }
    // pad to at least square so the SVD returns a full V
    let mut padded = DMatrix::zeros(r.max(c), c);
    padded.view_mut((0, 0), (r, c)).copy_from(m);
    let svd = svd(&padded);
    let smax = svd.s.max();
    let keep: Vec<usize> = (0..c).filter(|&k| smax == 0.0 || svd.s[k] <= rcond * smax).collect();
    DMatrix::from_fn(c, keep.len(), |i, j| svd.v_t[(keep[j], i)])
}

/// Largest principal angle (radians) between the column spaces of `a` and `b`.
/// Uses the sine form so small angles stay accurate.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let qa = orth(a, 1e-12);
    let qb = orth(b, 1e-12);
    if qa.ncols() != qb.ncols() {
        return std::f64::consts::FRAC_PI_2;
    }
    let resid = &qa - &qb * (qb.transpose() * &qa);
    let s = resid.singular_values().max();
    s.clamp(0.0, 1.0).asin()
}

/// Haar-distributed random orthogonal matrix.
pub fn haar_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            let mut col = q.column_mut(j);
            col *= -1.0;
        }
    }
    q
}

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

fn pade_low(a: &DMatrix<f64>, b: &[f64]) -> DMatrix<f64> {
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let mut pow = id.clone();
    let mut u = DMatrix::zeros(n, n);
    let mut v = DMatrix::zeros(n, n);
    for k in (0..b.len()).step_by(2) {
        v += &pow * b[k];
        if k + 1 < b.len() {
            u += &pow * b[k + 1];
        }
        pow = &pow * &a2;
    }
    let u = a * u;
    pade_solve(&u, &v)
}

fn pade_solve(u: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    let p = v + u;
    let q = v - u;
    q.lu().solve(&p).unwrap_or_else(|| DMatrix::from_element(u.nrows(), u.ncols(), f64::NAN))
}

/// Matrix exponential by scaling and squaring with Padé approximants.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    if n == 0 {
        return a.clone();
    }
    let nrm = norm1(a);
    let thetas = [
        (1.495585217958292e-2, &PADE3[..]),
        (2.539398330063230e-1, &PADE5[..]),
        (9.504178996162932e-1, &PADE7[..]),
        (2.097847961257068e0, &PADE9[..]),
    ];
    for (theta, b) in thetas {
        if nrm <= theta {
            return pade_low(a, b);
        }
    }
    let theta13 = 5.371920351148152;
    let s = if nrm > theta13 {
        (nrm / theta13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let a = a / 2f64.powi(s);
    let b = &PADE13;
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_in = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &id * b[1];
    let u = &a * u_in;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &id * b[0];
    let mut r = pade_solve(&u, &v);
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// ∫₀^τ e^{Ft} dt for a general square F, via the augmented exponential.
pub fn expm_integral(f: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    let n = f.nrows();
    let mut aug = DMatrix::zeros(2 * n, 2 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(&(f * tau));
    aug.view_mut((0, n), (n, n)).fill_with_identity();
    let mut blk = aug.view_mut((0, n), (n, n));
    blk *= tau;
    let e = expm(&aug);
    e.view((0, n), (n, n)).into_owned()
}

/// Principal square root by the product form of the Denman–Beavers iteration
/// with determinant scaling.
pub fn sqrtm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let mut m = a.clone();
    let mut y = a.clone();
    for _ in 0..100 {
        let minv = m
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("singular iterate in square root".into()))?;
        let dist = (&m - &id).norm();
        let mu = if dist > 1e-2 {
            let det = m.determinant().abs();
            if det > 0.0 && det.is_finite() {
                det.powf(-1.0 / (2.0 * n as f64))
            } else {
                1.0
            }
        } else {
            1.0
        };
        let mu2 = mu * mu;
        y = &y * (&id + &minv / mu2) * (0.5 * mu);
        m = (&id + (&m * mu2 + &minv / mu2) * 0.5) * 0.5;
        if (&m - &id).norm() <= 1e-15 * (n as f64).sqrt() * 10.0 {
            return Ok(y);
        }
    }
    if (&m - &id).norm() < 1e-10 {
        Ok(y)
    } else {
        Err(Error::NoConvergence {
            iterations: 100,
            last: (&m - &id).norm(),
        })
    }
}

// Gauss–Legendre nodes/weights on [-1, 1], 10 points.
const GL_X: [f64; 5] = [
    0.148_874_338_981_631_2,
    0.433_395_394_129_247_2,
    0.679_409_568_299_024_4,
    0.865_063_366_688_984_5,
    0.973_906_528_517_171_7,
];
const GL_W: [f64; 5] = [
    0.295_524_224_714_752_9,
    0.269_266_719_309_996_4,
    0.219_086_362_515_982_0,
    0.149_451_349_150_580_6,
    0.066_671_344_308_688_1,
];

/// log(I + E) = ∫₀¹ E (I + tE)⁻¹ dt, valid for ‖E‖ well below 1.
fn log1p_quad(e: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = e.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let mut out = DMatrix::zeros(n, n);
    for k in 0..5 {
        for sign in [-1.0, 1.0] {
            let t = 0.5 * (1.0 + sign * GL_X[k]);
            let w = 0.5 * GL_W[k];
            let m = &id + e * t;
            let sol = m
                .lu()
                .solve(e)
                .ok_or_else(|| Error::Numerical("singular matrix in log quadrature".into()))?;
            out += sol * w;
        }
    }
    Ok(out)
}

/// Principal logarithm of a general real matrix by inverse scaling and squaring.
/// The caller is responsible for checking the spectrum.
pub fn logm_general(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let mut x = a.clone();
    let mut k: i32 = 0;
    while norm1(&(&x - &id)) > 0.25 {
        x = sqrtm(&x)?;
        k += 1;
        if k > 64 {
            return Err(Error::NoConvergence {
                iterations: k as usize,
                last: norm1(&(&x - &id)),
            });
        }
    }
    let l = log1p_quad(&(&x - &id))?;
    Ok(l * 2f64.powi(k))
}

/// Cholesky solve of a symmetric positive definite system; falls back to
/// the pseudo-inverse if the factorization fails.
pub fn spd_solve(g: &DMatrix<f64>, rhs: &DMatrix<f64>) -> DMatrix<f64> {
    match g.clone().cholesky() {
        Some(ch) => ch.solve(rhs),
        None => pinv(g, 1e-14) * rhs,
    }
}
