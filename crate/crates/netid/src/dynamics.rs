//! First-order graph dynamics: continuous model, exact discretization and
//! noisy discrete-time simulation.

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Bijective scalar maps used for f_x and f_u.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarMap {
    /// z ↦ −z
    NegIdentity,
    /// z ↦ z
    Identity,
    /// z ↦ a·z + b
    Affine { a: f64, b: f64 },
}

impl ScalarMap {
    pub fn eval(&self, z: f64) -> f64 {
        match *self {
            ScalarMap::NegIdentity => -z,
            ScalarMap::Identity => z,
            ScalarMap::Affine { a, b } => a * z + b,
        }
    }

    pub fn inverse(&self, y: f64) -> Result<f64> {
        match *self {
            ScalarMap::NegIdentity => Ok(-y),
            ScalarMap::Identity => Ok(y),
            ScalarMap::Affine { a, b } => {
                if a == 0.0 || !a.is_finite() {
                    Err(Error::Invalid("affine map with a = 0 is not bijective".into()))
                } else {
                    Ok((y - b) / a)
                }
            }
        }
    }

    /// The map applied to a symmetric matrix (all supported maps are affine).
    pub fn apply(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        let n = s.nrows();
        match *self {
            ScalarMap::NegIdentity => -s,
            ScalarMap::Identity => s.clone(),
            ScalarMap::Affine { a, b } => s * a + DMatrix::identity(n, n) * b,
        }
    }

    /// Matrix inverse map: S with f(S) = F.
    pub fn apply_inverse(&self, f: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = f.nrows();
        match *self {
            ScalarMap::NegIdentity => Ok(-f),
            ScalarMap::Identity => Ok(f.clone()),
            ScalarMap::Affine { a, b } => {
                if a == 0.0 || !a.is_finite() {
                    Err(Error::Invalid("affine map with a = 0 is not bijective".into()))
                } else {
                    Ok((f - DMatrix::identity(n, n) * b) / a)
                }
            }
        }
    }

    pub fn name(&self) -> String {
        match *self {
            ScalarMap::NegIdentity => "neg_identity".into(),
            ScalarMap::Identity => "identity".into(),
            ScalarMap::Affine { a, b } => format!("affine(a={a}, b={b})"),
        }
    }
}

/// Continuous-time model ẋ = f_x(S_x)x + f_u(S_u)u, y = Cx + Du.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousModel {
    pub fx: DMatrix<f64>,
    pub fu: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub fx_map: ScalarMap,
    pub fu_map: ScalarMap,
}

impl ContinuousModel {
    pub fn new(
        fx: DMatrix<f64>,
        fu: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        fx_map: ScalarMap,
        fu_map: ScalarMap,
    ) -> Result<Self> {
        let n = fx.nrows();
        if !fx.is_square() || fu.shape() != (n, n) {
            return Err(Error::Dimension(format!(
                "f_x must be NxN and f_u NxN (got {:?}, {:?})",
                fx.shape(),
                fu.shape()
            )));
        }
        if c.ncols() != n || d.shape() != (c.nrows(), n) {
            return Err(Error::Dimension(format!(
                "C must be LxN and D LxN (got {:?}, {:?})",
                c.shape(),
                d.shape()
            )));
        }
        if linalg::asymmetry(&fx) > 1e-10 {
            return Err(Error::Invalid("f_x(S_x) must be symmetric".into()));
        }
        Ok(ContinuousModel { fx, fu, c, d, fx_map, fu_map })
    }

    /// Builds the model from graph shift operators and scalar maps.
    pub fn from_graphs(
        sx: &DMatrix<f64>,
        su: &DMatrix<f64>,
        fx_map: ScalarMap,
        fu_map: ScalarMap,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self> {
        Self::new(fx_map.apply(sx), fu_map.apply(su), c, d, fx_map, fu_map)
    }

    pub fn n(&self) -> usize {
        self.fx.nrows()
    }
}

/// Discrete-time quadruple with its sampling period.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub tau: f64,
}

impl StateSpace {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>, tau: f64) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || b.nrows() != n || c.ncols() != n || d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::Dimension(format!(
                "inconsistent state-space shapes A{:?} B{:?} C{:?} D{:?}",
                a.shape(),
                b.shape(),
                c.shape(),
                d.shape()
            )));
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::Invalid(format!("sampling period must be positive, got {tau}")));
        }
        Ok(StateSpace { a, b, c, d, tau })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }
}

/// Sampled record of a run. Time runs along columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// N×Q
    pub inputs: DMatrix<f64>,
    /// L×Q
    pub outputs: DMatrix<f64>,
    /// N×(Q+1), including x(0)
    pub states: Option<DMatrix<f64>>,
    pub tau: f64,
    pub noise_state_var: f64,
    pub noise_obs_var: f64,
    pub seed: Option<u64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// (e^{λτ} − 1)/λ with the limit τ at λ = 0.
pub fn phi(lambda: f64, tau: f64) -> f64 {
    let x = lambda * tau;
    if x == 0.0 {
        tau
    } else {
        x.exp_m1() / lambda
    }
}

/// Exact zero-order-hold discretization of a model with symmetric f_x.
pub fn discretize(cm: &ContinuousModel, tau: f64) -> Result<StateSpace> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Invalid(format!("sampling period must be positive, got {tau}")));
    }
    if linalg::asymmetry(&cm.fx) > 1e-10 {
        return Err(Error::Invalid("f_x(S_x) must be symmetric".into()));
    }
    let (vals, q) = linalg::eigh_sorted(&cm.fx);
    let a = linalg::from_spectrum(&q, &vals.map(|l| (l * tau).exp()));
    let integral = linalg::from_spectrum(&q, &vals.map(|l| phi(l, tau)));
    let b = integral * &cm.fu;
    StateSpace::new(a, b, cm.c.clone(), cm.d.clone(), tau)
}

/// i.i.d. standard normal inputs, N×Q.
pub fn gaussian_input(n: usize, q: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, q, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Runs x(k+1) = Ax + Bu + w, y = Cx + Du + v.
pub fn simulate(
    ss: &StateSpace,
    x0: &DVector<f64>,
    inputs: &DMatrix<f64>,
    noise_state_var: f64,
    noise_obs_var: f64,
    seed: u64,
    keep_states: bool,
) -> Result<Trajectory> {
    let n = ss.n();
    let l = ss.outputs();
    if x0.len() != n || inputs.nrows() != ss.inputs() {
        return Err(Error::Dimension(format!(
            "x0 has {} entries and inputs {} rows, system needs {} and {}",
            x0.len(),
            inputs.nrows(),
            n,
            ss.inputs()
        )));
    }
    if !(noise_state_var >= 0.0) || !(noise_obs_var >= 0.0) {
        return Err(Error::Invalid("noise variances must be nonnegative".into()));
    }
    if inputs.iter().any(|x| !x.is_finite()) || x0.iter().any(|x| !x.is_finite()) {
        return Err(Error::Invalid("inputs contain NaN or Inf".into()));
    }
    let q = inputs.ncols();
    let sw = noise_state_var.sqrt();
    let sv = noise_obs_var.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut outputs = DMatrix::zeros(l, q);
    let mut states = if keep_states { Some(DMatrix::zeros(n, q + 1)) } else { None };
    let mut x = x0.clone();
    let mut next = DVector::zeros(n);
    let mut y = DVector::zeros(l);
    for k in 0..q {
        let u = inputs.column(k);
        if let Some(s) = states.as_mut() {
            s.set_column(k, &x);
        }
        y.gemv(1.0, &ss.c, &x, 0.0);
        y.gemv(1.0, &ss.d, &u, 1.0);
        if sv > 0.0 {
            for v in y.iter_mut() {
                *v += sv * rng.sample::<f64, _>(StandardNormal);
            }
        }
        outputs.set_column(k, &y);
        next.gemv(1.0, &ss.a, &x, 0.0);
        next.gemv(1.0, &ss.b, &u, 1.0);
        if sw > 0.0 {
            for v in next.iter_mut() {
                *v += sw * rng.sample::<f64, _>(StandardNormal);
            }
        }
        std::mem::swap(&mut x, &mut next);
        if !(x.norm() <= 1e12) {
            return Err(Error::Overflow(k + 1));
        }
    }
    if let Some(s) = states.as_mut() {
        s.set_column(q, &x);
    }
    Ok(Trajectory {
        inputs: inputs.clone(),
        outputs,
        states,
        tau: ss.tau,
        noise_state_var,
        noise_obs_var,
        seed: Some(seed),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogDomainReport {
    pub ok: bool,
    /// Offending eigenvalues with the reason.
    pub violations: Vec<(f64, String)>,
}

/// Checks e^{f(z)} ∉ ℝ⁻ and f(z) finite for every eigenvalue z.
pub fn check_log_domain(f: impl Fn(f64) -> Complex<f64>, eigenvalues: &[f64]) -> LogDomainReport {
    let mut violations = Vec::new();
    for &z in eigenvalues {
        let w = f(z);
        if !w.re.is_finite() || !w.im.is_finite() {
            violations.push((z, format!("f({z}) is not finite")));
            continue;
        }
        let mag = w.re.exp();
        let (s, c) = w.im.sin_cos();
        if mag == 0.0 {
            violations.push((z, format!("exp(f({z})) underflows to 0")));
        } else if s.abs() <= 1e-12 && c < 0.0 {
            violations.push((z, format!("exp(f({z})) lies on the negative real axis")));
        }
    }
    LogDomainReport {
        ok: violations.is_empty(),
        violations,
    }
}

impl ScalarMap {
    pub fn check_log_domain(&self, eigenvalues: &[f64]) -> LogDomainReport {
        check_log_domain(|z| Complex::new(self.eval(z), 0.0), eigenvalues)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(v))
    }

    fn model(fx: DMatrix<f64>, fu: DMatrix<f64>) -> ContinuousModel {
        let n = fx.nrows();
        ContinuousModel::new(
            fx,
            fu,
            DMatrix::identity(n, n),
            DMatrix::zeros(n, n),
            ScalarMap::NegIdentity,
            ScalarMap::Identity,
        )
        .unwrap()
    }

    #[test]
    fn zero_generator_limit() {
        let ss = discretize(&model(DMatrix::zeros(2, 2), DMatrix::identity(2, 2)), 0.5).unwrap();
        assert_eq!(ss.a, DMatrix::identity(2, 2));
        assert!((ss.b.clone() - DMatrix::identity(2, 2) * 0.5).norm() < 1e-15);
    }

    #[test]
    fn diagonal_generator_integral() {
        let ss = discretize(&model(diag(&[-1.0, -2.0]), DMatrix::identity(2, 2)), 1.0).unwrap();
        assert!((ss.b[(0, 0)] - (1.0 - (-1f64).exp())).abs() < 1e-15);
        assert!((ss.b[(1, 1)] - (1.0 - (-2f64).exp()) / 2.0).abs() < 1e-15);
        assert!(ss.b[(0, 1)].abs() < 1e-16);
    }

    #[test]
    fn p3_laplacian_spectrum_of_a() {
        let l = DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]);
        let ss = discretize(&model(-l, DMatrix::identity(3, 3)), 1e-3).unwrap();
        let (v, _) = linalg::eigh_sorted(&ss.a);
        let expect = [0.0f64, -1e-3, -3e-3].map(f64::exp);
        for (x, y) in v.iter().zip(expect) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn discretize_rejects_bad_tau() {
        assert!(discretize(&model(diag(&[-1.0]), diag(&[1.0])), 0.0).is_err());
    }

    #[test]
    fn simulate_trivial_cases() {
        let ss = StateSpace::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            1.0,
        )
        .unwrap();
        let x0 = DVector::from_vec(vec![1.0, 0.0]);
        let t = simulate(&ss, &x0, &DMatrix::zeros(2, 5), 0.0, 0.0, 0, true).unwrap();
        for k in 0..5 {
            assert_eq!(t.outputs.column(k), x0);
        }
        assert_eq!(t.states.as_ref().unwrap().ncols(), 6);

        let half = StateSpace { a: DMatrix::identity(2, 2) * 0.5, ..ss };
        let t = simulate(&half, &DVector::from_element(2, 1.0), &DMatrix::zeros(2, 4), 0.0, 0.0, 0, true).unwrap();
        let s = t.states.unwrap();
        for k in 0..5 {
            assert_eq!(s[(0, k)], 0.5f64.powi(k as i32));
        }
    }

    #[test]
    fn simulate_rejects_nan_and_detects_overflow() {
        let ss = StateSpace::new(
            DMatrix::identity(1, 1) * 1e3,
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::zeros(1, 1),
            1.0,
        )
        .unwrap();
        let mut u = DMatrix::zeros(1, 3);
        u[(0, 1)] = f64::NAN;
        assert!(matches!(
            simulate(&ss, &DVector::zeros(1), &u, 0.0, 0.0, 0, false),
            Err(Error::Invalid(_))
        ));
        let r = simulate(&ss, &DVector::from_element(1, 1.0), &DMatrix::zeros(1, 10), 0.0, 0.0, 0, false);
        assert!(matches!(r, Err(Error::Overflow(5))));
    }

    #[test]
    fn gaussian_input_is_deterministic() {
        assert_eq!(gaussian_input(3, 10, 4), gaussian_input(3, 10, 4));
        assert_ne!(gaussian_input(3, 10, 4), gaussian_input(3, 10, 5));
    }

    #[test]
    fn log_domain_cases() {
        assert!(ScalarMap::NegIdentity.check_log_domain(&[0.0, 1.0, 3.0]).ok);
        let r = check_log_domain(|z| if z > 1.0 { Complex::new(f64::NEG_INFINITY, 0.0) } else { Complex::new(-z, 0.0) }, &[0.0, 2.0]);
        assert!(!r.ok);
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].0, 2.0);
        let r = check_log_domain(|_| Complex::new(0.0, std::f64::consts::PI), &[1.0]);
        assert!(!r.ok);
    }

    #[test]
    fn scalar_map_inverse() {
        let m = ScalarMap::Affine { a: -1.0, b: -1.0 };
        assert_eq!(m.inverse(-2.0).unwrap(), 1.0);
        assert!(ScalarMap::Affine { a: 0.0, b: 1.0 }.inverse(1.0).is_err());
    }
}
