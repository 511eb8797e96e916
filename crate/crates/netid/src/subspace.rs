//! Subspace identification of (A, B, x0) from input/output records.

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::linalg;

/// Block-Hankel matrices of outputs (αL×T) and inputs (αM×T).
#[derive(Debug, Clone)]
pub struct HankelBlocks {
    pub y: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub alpha: usize,
    pub t: usize,
    pub l: usize,
    pub n: usize,
}

/// Stacks columns m(t), …, m(t+α−1) for t = 0..Q−α.
pub fn hankel(m: &DMatrix<f64>, alpha: usize) -> DMatrix<f64> {
    let (d, q) = m.shape();
    let t = q + 1 - alpha;
    let mut h = DMatrix::zeros(alpha * d, t);
    for i in 0..alpha {
        h.view_mut((i * d, 0), (d, t)).copy_from(&m.columns(i, t));
    }
    h
}

fn check_depth(alpha: usize, n_states: usize, q: usize) -> Result<()> {
    if alpha <= n_states {
        return Err(Error::Invalid(format!(
            "block depth alpha = {alpha} must exceed the state dimension {n_states} for observability"
        )));
    }
    if q < alpha + n_states {
        return Err(Error::InsufficientData(format!(
            "trajectory has {q} samples, need at least alpha + N = {}",
            alpha + n_states
        )));
    }
    Ok(())
}

pub fn build_hankel(traj: &Trajectory, alpha: usize, n_states: usize) -> Result<HankelBlocks> {
    check_depth(alpha, n_states, traj.len())?;
    let y = hankel(&traj.outputs, alpha);
    let u = hankel(&traj.inputs, alpha);
    Ok(HankelBlocks {
        t: y.ncols(),
        y,
        u,
        alpha,
        l: traj.outputs.nrows(),
        n: n_states,
    })
}

#[derive(Debug, Clone)]
pub struct Projected {
    /// Y·Π⊥
    pub y: DMatrix<f64>,
    pub input_rank: usize,
}

/// Removes the row space of U from Y using a thin QR of Uᵀ.
pub fn project_out_inputs(h: &HankelBlocks) -> Result<Projected> {
    let rows = h.u.nrows();
    if rows > h.t {
        return Err(Error::NotExciting { rank: h.t, expected: rows });
    }
    let qr = h.u.transpose().qr();
    let r = qr.r();
    let sv = r.singular_values();
    let smax = sv.max();
    let rank = sv.iter().filter(|&&s| s > 1e-8 * smax && s > 0.0).count();
    if rank < rows {
        return Err(Error::NotExciting { rank, expected: rows });
    }
    let q = qr.q();
    let yq = &h.y * &q;
    let y = &h.y - yq * q.transpose();
    Ok(Projected { y, input_rank: rank })
}

/// Left singular basis and singular values of a wide matrix through a thin QR
/// of its transpose.
fn left_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let (r, c) = m.shape();
    if c > r {
        let rt = m.transpose().qr().r().transpose();
        let svd = linalg::svd(&rt);
        (svd.u, svd.s)
    } else {
        let svd = linalg::svd(m);
        (svd.u, svd.s)
    }
}

#[derive(Debug, Clone)]
pub struct SpanEstimate {
    pub w: DMatrix<f64>,
    /// All singular values, non-increasing.
    pub singular_values: DVector<f64>,
    /// σ_N / σ_{N+1} (infinite when σ_{N+1} = 0 or absent).
    pub rank_gap: f64,
}

pub fn estimate_observability_span(yp: &DMatrix<f64>, n_states: usize) -> Result<SpanEstimate> {
    let max = yp.nrows().min(yp.ncols());
    if n_states == 0 || n_states > max {
        return Err(Error::Invalid(format!(
            "state dimension {n_states} must be between 1 and min(rows, cols) = {max}"
        )));
    }
    let (u, s) = left_svd(yp);
    let s1 = s[0];
    let sn = s[n_states - 1];
    if !(sn >= 1e-10 * s1) || s1 == 0.0 {
        return Err(Error::RankDeficient(format!(
            "singular value {n_states} is {sn:.3e} against a largest of {s1:.3e}"
        )));
    }
    let rank_gap = if n_states < s.len() && s[n_states] > 0.0 {
        sn / s[n_states]
    } else {
        f64::INFINITY
    };
    Ok(SpanEstimate {
        w: u.columns(0, n_states).into_owned(),
        singular_values: s,
        rank_gap,
    })
}

/// T̂ from the first output block of W. When C lacks full column rank the
/// representative (JW)†C + (I − (JW)†JW) is returned and the flag is set.
pub fn estimate_t(w: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    let l = c.nrows();
    let n = w.ncols();
    if c.ncols() != n || w.nrows() < l {
        return Err(Error::Dimension(format!("W is {:?} but C is {:?}", w.shape(), c.shape())));
    }
    let jw = w.rows(0, l).into_owned();
    let p = linalg::pinv(&jw, 1e-12);
    let non_unique = linalg::rank(c, 1e-10) < n;
    let mut t = &p * c;
    if non_unique {
        t += DMatrix::<f64>::identity(n, n) - &p * &jw;
    }
    Ok((t, non_unique))
}

/// Least-squares solution of the shift relation J_u·W·T̂·A = J_l·W·T̂.
pub fn estimate_a(w: &DMatrix<f64>, t_hat: &DMatrix<f64>, l: usize) -> Result<DMatrix<f64>> {
    let o = w * t_hat;
    let rows = o.nrows();
    if rows < 2 * l {
        return Err(Error::Dimension("W needs at least two output blocks".into()));
    }
    let up = o.rows(0, rows - l).into_owned();
    let lo = o.rows(l, rows - l).into_owned();
    let n = o.ncols();
    if linalg::rank(&up, 1e-12) < n {
        return Err(Error::RankDeficient(
            "shifted observability estimate lost rank; increase alpha or the record length".into(),
        ));
    }
    Ok(linalg::lstsq(&up, &lo))
}

#[derive(Debug, Clone)]
pub struct BX0Fit {
    pub b: DMatrix<f64>,
    pub x0: DVector<f64>,
    /// (1/Q) Σ ‖y(k) − ŷ(k)‖²
    pub residual: f64,
}

/// Streams the regressor rows Φ_k = C·Z_k where x(k) = Z_k·θ and
/// θ = [x0; vec(B)]; calls `f(k, Φ_k, y(k) − D u(k))`.
fn stream_regressor(
    traj: &Trajectory,
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
    mut f: impl FnMut(usize, &DMatrix<f64>, &DVector<f64>),
) {
    let n = a.nrows();
    let m = traj.inputs.nrows();
    let p = n + n * m;
    let mut z = DMatrix::<f64>::zeros(n, p);
    for i in 0..n {
        z[(i, i)] = 1.0;
    }
    let mut zn = DMatrix::<f64>::zeros(n, p);
    let mut phi = DMatrix::<f64>::zeros(c.nrows(), p);
    for k in 0..traj.len() {
        let u = traj.inputs.column(k);
        phi.gemm(1.0, c, &z, 0.0);
        let r = traj.outputs.column(k) - d * u;
        f(k, &phi, &r);
        zn.gemm(1.0, a, &z, 0.0);
        for col in 0..m {
            let uc = u[col];
            for i in 0..n {
                zn[(i, n + col * n + i)] += uc;
            }
        }
        std::mem::swap(&mut z, &mut zn);
    }
}

/// Joint least-squares fit of B and x(0) given Â, C, D.
pub fn estimate_b_x0(traj: &Trajectory, a: &DMatrix<f64>, c: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<BX0Fit> {
    let n = a.nrows();
    let m = traj.inputs.nrows();
    let l = c.nrows();
    let q = traj.len();
    let p = n + n * m;
    if c.ncols() != n || d.shape() != (l, m) || traj.outputs.nrows() != l {
        return Err(Error::Dimension("A, C, D and the trajectory disagree".into()));
    }
    if q * l < p {
        return Err(Error::InsufficientData(format!(
            "{p} unknowns need at least {} samples with {l} outputs, got {q}",
            p.div_ceil(l)
        )));
    }

    const BATCH: usize = 64;
    let mut g = DMatrix::<f64>::zeros(p, p);
    let mut h = DVector::<f64>::zeros(p);
    let mut blk = DMatrix::<f64>::zeros(BATCH * l, p);
    let mut filled = 0;
    let flush = |blk: &DMatrix<f64>, rows: usize, g: &mut DMatrix<f64>| {
        let v = blk.rows(0, rows);
        g.gemm_tr(1.0, &v, &v, 1.0);
    };
    stream_regressor(traj, a, c, d, |_, phi, r| {
        blk.view_mut((filled * l, 0), (l, p)).copy_from(phi);
        h.gemv_tr(1.0, phi, r, 1.0);
        filled += 1;
        if filled == BATCH {
            flush(&blk, BATCH * l, &mut g);
            filled = 0;
        }
    });
    if filled > 0 {
        flush(&blk, filled * l, &mut g);
    }

    // column equilibration
    let scale = DVector::from_iterator(p, (0..p).map(|i| {
        let v = g[(i, i)];
        if v > 0.0 {
            1.0 / v.sqrt()
        } else {
            1.0
        }
    }));
    let gs = DMatrix::from_fn(p, p, |i, j| g[(i, j)] * scale[i] * scale[j]);
    let chol = gs.clone().cholesky().ok_or_else(|| {
        Error::RankDeficient("regressor for B and x(0) is rank deficient; inputs not exciting enough".into())
    })?;
    let solve = |rhs: &DVector<f64>| -> DVector<f64> { chol.solve(&rhs.component_mul(&scale)).component_mul(&scale) };
    let mut theta = solve(&h);

    // refinement with residuals recomputed from the data
    for _ in 0..2 {
        let mut corr = DVector::<f64>::zeros(p);
        stream_regressor(traj, a, c, d, |_, phi, r| {
            let e = r - phi * &theta;
            corr.gemv_tr(1.0, phi, &e, 1.0);
        });
        theta += solve(&corr);
    }

    let mut sse = 0.0;
    stream_regressor(traj, a, c, d, |_, phi, r| {
        sse += (r - phi * &theta).norm_squared();
    });
    let x0 = theta.rows(0, n).into_owned();
    let b = DMatrix::from_column_slice(n, m, &theta.as_slice()[n..]);
    Ok(BX0Fit {
        b,
        x0,
        residual: sse / q as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// Input-orthogonal projection of the output Hankel matrix.
    Projection,
    /// Past inputs and outputs as instruments; β is the past depth.
    InstrumentalVariables { beta: usize },
}

#[derive(Debug, Clone)]
pub struct SubspaceEstimate {
    pub w: DMatrix<f64>,
    /// Leading N singular values.
    pub singular_values: DVector<f64>,
    pub t_hat: DMatrix<f64>,
    pub a_hat: DMatrix<f64>,
    pub b_hat: Option<DMatrix<f64>>,
    pub x0_hat: Option<DVector<f64>>,
    pub rank_gap: f64,
    pub non_unique: bool,
    pub shift_residual: f64,
    pub b_residual: Option<f64>,
}

impl SubspaceEstimate {
    pub fn to_json(&self) -> Value {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
        };
        json!({
            "singular_values": self.singular_values.as_slice(),
            "T_hat": rows(&self.t_hat),
            "A_hat": rows(&self.a_hat),
            "B_hat": self.b_hat.as_ref().map(rows),
            "x0_hat": self.x0_hat.as_ref().map(|x| x.as_slice().to_vec()),
            "diagnostics": {
                "rank_gap": if self.rank_gap.is_finite() { json!(self.rank_gap) } else { json!(null) },
                "non_unique": self.non_unique,
                "shift_residual": self.shift_residual,
                "b_residual": self.b_residual,
            }
        })
    }
}

/// Gram blocks Σ_t m(t+i)·m(t+j)ᵀ of the depth-α block-Hankel matrix, for
/// block rows i ≥ `from` only. Returned as ((α−from)·d) × (α·d).
fn hankel_gram_rows(m: &DMatrix<f64>, alpha: usize, from: usize) -> DMatrix<f64> {
    let (d, q) = m.shape();
    let t = q + 1 - alpha;
    let mut g = DMatrix::<f64>::zeros((alpha - from) * d, alpha * d);
    let head = m.columns(0, t);
    for delta in -(alpha as isize - 1)..(alpha as isize) {
        let (mut i, mut j) = if delta >= 0 { (0usize, delta as usize) } else { ((-delta) as usize, 0usize) };
        // base block at (i, j) with one index zero
        let mut blk = if delta >= 0 {
            &head * m.columns(j, t).transpose()
        } else {
            m.columns(i, t) * head.transpose()
        };
        loop {
            if i >= from {
                g.view_mut(((i - from) * d, j * d), (d, d)).copy_from(&blk);
            }
            if i + 1 >= alpha || j + 1 >= alpha {
                break;
            }
            let a1 = m.column(i + t);
            let b1 = m.column(j + t);
            let a0 = m.column(i);
            let b0 = m.column(j);
            blk.ger(1.0, &a1, &b1, 1.0);
            blk.ger(-1.0, &a0, &b0, 1.0);
            i += 1;
            j += 1;
        }
    }
    g
}

/// Instrumental-variable estimate of the observability span.
/// W has γ·L rows with γ = α − β.
pub fn iv_span(traj: &Trajectory, alpha: usize, beta: usize, n_states: usize) -> Result<SpanEstimate> {
    if beta == 0 || beta >= alpha {
        return Err(Error::Invalid(format!("need 1 <= beta < alpha, got beta = {beta}, alpha = {alpha}")));
    }
    let gamma = alpha - beta;
    check_depth(gamma, n_states, traj.len().saturating_sub(beta))?;
    let mi = traj.inputs.nrows();
    let l = traj.outputs.nrows();
    let d = mi + l;
    let mut z = DMatrix::<f64>::zeros(d, traj.len());
    z.rows_mut(0, mi).copy_from(&traj.inputs);
    z.rows_mut(mi, l).copy_from(&traj.outputs);
    let t = traj.len() + 1 - alpha;
    let g = hankel_gram_rows(&z, alpha, beta);

    let u2: Vec<usize> = (0..gamma).flat_map(|b| (0..mi).map(move |k| b * d + k)).collect();
    let y2: Vec<usize> = (0..gamma).flat_map(|b| (0..l).map(move |k| b * d + mi + k)).collect();
    let u2c: Vec<usize> = u2.iter().map(|&r| r + beta * d).collect();
    let z1c: Vec<usize> = (0..beta)
        .flat_map(|b| (0..mi).map(move |k| b * d + k))
        .chain((0..beta).flat_map(|b| (0..l).map(move |k| b * d + mi + k)))
        .collect();
    let pick = |rows: &[usize], cols: &[usize]| DMatrix::from_fn(rows.len(), cols.len(), |i, j| g[(rows[i], cols[j])]);
    let guu = pick(&u2, &u2c);
    let gyu = pick(&y2, &u2c);
    let gyz = pick(&y2, &z1c);
    let guz = pick(&u2, &z1c);
    let chol = guu.cholesky().ok_or_else(|| {
        let rank = linalg::rank(&pick(&u2, &u2c), 1e-12);
        Error::NotExciting { rank, expected: u2.len() }
    })?;
    let g1 = (gyz - gyu * chol.solve(&guz)) / t as f64;
    estimate_observability_span(&g1, n_states)
}

/// Full pipeline from a trajectory to (T̂, Â) and optionally (B̂, x̂0).
pub fn identify(
    traj: &Trajectory,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
    alpha: usize,
    n_states: usize,
    method: Method,
    with_b: bool,
) -> Result<SubspaceEstimate> {
    let l = c.nrows();
    if traj.outputs.nrows() != l || c.ncols() != n_states {
        return Err(Error::Dimension(format!(
            "C is {:?}, trajectory has {} outputs, N = {n_states}",
            c.shape(),
            traj.outputs.nrows()
        )));
    }
    let span = match method {
        Method::Projection => {
            let h = build_hankel(traj, alpha, n_states)?;
            let p = project_out_inputs(&h)?;
            estimate_observability_span(&p.y, n_states)?
        }
        Method::InstrumentalVariables { beta } => iv_span(traj, alpha, beta, n_states)?,
    };
    let (t_hat, non_unique) = estimate_t(&span.w, c)?;
    let a_hat = estimate_a(&span.w, &t_hat, l)?;
    let o = &span.w * &t_hat;
    let rows = o.nrows();
    let shift_residual = (o.rows(0, rows - l) * &a_hat - o.rows(l, rows - l)).norm();
    let (b_hat, x0_hat, b_residual) = if with_b {
        let fit = estimate_b_x0(traj, &a_hat, c, d)?;
        (Some(fit.b), Some(fit.x0), Some(fit.residual))
    } else {
        (None, None, None)
    };
    Ok(SubspaceEstimate {
        singular_values: span.singular_values.rows(0, n_states).into_owned(),
        w: span.w,
        t_hat,
        a_hat,
        b_hat,
        x0_hat,
        rank_gap: span.rank_gap,
        non_unique,
        shift_residual,
        b_residual,
    })
}

/// Extended observability matrix [C; CA; …; CA^{α−1}].
pub fn observability(a: &DMatrix<f64>, c: &DMatrix<f64>, alpha: usize) -> DMatrix<f64> {
    let l = c.nrows();
    let n = a.nrows();
    let mut o = DMatrix::zeros(alpha * l, n);
    let mut blk = c.clone();
    for i in 0..alpha {
        o.view_mut((i * l, 0), (l, n)).copy_from(&blk);
        blk = &blk * a;
    }
    o
}
