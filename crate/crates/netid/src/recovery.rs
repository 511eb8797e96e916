//! Continuous-time recovery from discrete estimates via the principal logarithm.

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use crate::dynamics::{phi, ScalarMap, StateSpace};
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone)]
pub struct ContinuousEstimate {
    pub fx_hat: DMatrix<f64>,
    pub fu_hat: DMatrix<f64>,
    pub tau: f64,
    /// Graph eigenvalues after the inverse scalar map, non-increasing.
    pub lambda_x: DVector<f64>,
    /// ‖exp(f̂_x τ) − Â‖_F / ‖Â‖_F for the Â that was logged.
    pub roundtrip: f64,
    pub used_fallback: bool,
    pub warnings: Vec<String>,
}

impl ContinuousEstimate {
    pub fn to_json(&self) -> Value {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
        };
        json!({
            "tau": self.tau,
            "fx_hat": rows(&self.fx_hat),
            "fu_hat": rows(&self.fu_hat),
            "lambda_x": self.lambda_x.as_slice(),
            "roundtrip": self.roundtrip,
            "used_fallback": self.used_fallback,
            "warnings": self.warnings,
        })
    }
}

/// Principal matrix logarithm. Symmetric input (within 1e-8) goes through the
/// eigendecomposition, anything else through inverse scaling and squaring.
pub fn principal_log(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::Dimension(format!("logarithm of a {:?} matrix", a.shape())));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::Invalid("matrix has non-finite entries".into()));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok(a.clone());
    }
    if linalg::asymmetry(a) <= 1e-8 {
        let (vals, q) = linalg::eigh_sorted(&linalg::sym(a));
        for &l in vals.iter() {
            if l.abs() < 1e-14 || l < 0.0 {
                return Err(Error::LogUndefined(format!("{l:e}")));
            }
        }
        return Ok(linalg::from_spectrum(&q, &vals.map(f64::ln)));
    }
    let eig = a.clone().complex_eigenvalues();
    for z in eig.iter() {
        let r = z.norm();
        if r < 1e-14 || (z.re < 0.0 && z.im.abs() <= 1e-14 * r.max(1.0)) {
            return Err(Error::LogUndefined(format!("{} + {}i", z.re, z.im)));
        }
    }
    linalg::logm_general(a)
}

/// Recovers f_x(S_x) and f_u(S_u) from (Â, B̂). With `undirected` the
/// estimate Â is symmetrized first.
pub fn recover_continuous(ss: &StateSpace, fx_map: ScalarMap, undirected: bool) -> Result<ContinuousEstimate> {
    let n = ss.n();
    let tau = ss.tau;
    let a = if undirected { linalg::sym(&ss.a) } else { ss.a.clone() };
    let fx = principal_log(&a)? / tau;
    let symmetric = linalg::asymmetry(&fx) <= 1e-8;
    let mut warnings = Vec::new();

    let a_minus_i = &a - DMatrix::<f64>::identity(n, n);
    let sv = a_minus_i.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };

    let (fu, used_fallback) = if cond <= 1e12 {
        let rhs = &fx * &ss.b;
        let fu = a_minus_i
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("A - I could not be factored".into()))?;
        (fu, false)
    } else {
        warnings.push(format!(
            "A - I is near-singular (condition {cond:.3e}); using the spectral form"
        ));
        let fu = if symmetric {
            let (vals, q) = linalg::eigh_sorted(&linalg::sym(&fx));
            let inv = linalg::from_spectrum(&q, &vals.map(|l| 1.0 / phi(l, tau)));
            inv * &ss.b
        } else {
            linalg::lstsq(&linalg::expm_integral(&fx, tau), &ss.b)
        };
        (fu, true)
    };

    let eig: Vec<f64> = if symmetric {
        linalg::eigh_sorted(&linalg::sym(&fx)).0.iter().copied().collect()
    } else {
        let ev = fx.clone().complex_eigenvalues();
        let im = ev.iter().fold(0.0f64, |m, z| m.max(z.im.abs()));
        if im > 1e-8 {
            warnings.push(format!("f_x estimate has complex eigenvalues (max |imag| {im:.3e}); real parts used"));
        }
        ev.iter().map(|z| z.re).collect()
    };
    let lambda_x = DVector::from_vec(invert_scalar_map(fx_map, &eig)?);

    let roundtrip = linalg::rel_err(&linalg::expm(&(&fx * tau)), &a);
    if !(roundtrip <= 1e-6) {
        return Err(Error::Invariant(format!("logarithm round trip error {roundtrip:.3e}")));
    }
    Ok(ContinuousEstimate {
        fx_hat: fx,
        fu_hat: fu,
        tau,
        lambda_x,
        roundtrip,
        used_fallback,
        warnings,
    })
}

/// Entrywise inverse of a scalar map, sorted non-increasing.
pub fn invert_scalar_map(map: ScalarMap, values: &[f64]) -> Result<Vec<f64>> {
    let mut out = values.iter().map(|&v| map.inverse(v)).collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| b.total_cmp(a));
    Ok(out)
}
