//! Desk-scale experiment runners. Each writes `config.json`, `metrics.json`
//! and CSV series into one output directory and returns the metrics.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::dynamics::{discretize, gaussian_input, simulate, ContinuousModel, ScalarMap, StateSpace};
use crate::error::{Error, Result};
use crate::graph::{self, Family};
use crate::inverse::{self, ApOptions, ApRun, ConsistencyData, SetKind, SpectralTarget, StructuralSet};
use crate::io;
use crate::linalg;
use crate::recovery::{principal_log, recover_continuous};
use crate::subspace::{identify, Method};

pub const OUTPUT_ROOT_ENV: &str = "NETID_OUTPUT_ROOT";

/// Edges with weight magnitude below this are dropped when reading off a graph.
pub const EDGE_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    ModelValidation,
    IvKarate,
    ApConvergence,
    PartialObs,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 4] = [
        ExperimentKind::ModelValidation,
        ExperimentKind::IvKarate,
        ExperimentKind::ApConvergence,
        ExperimentKind::PartialObs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::ModelValidation => "model_validation",
            ExperimentKind::IvKarate => "iv_karate",
            ExperimentKind::ApConvergence => "ap_convergence",
            ExperimentKind::PartialObs => "partial_obs",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown experiment '{s}' (expected one of model_validation, iv_karate, ap_convergence, partial_obs)")))
    }

    fn description(self) -> &'static str {
        match self {
            ExperimentKind::ModelValidation => {
                "noise-free diffusion on two random regular graphs, full observation: subspace identification and logarithm recovery"
            }
            ExperimentKind::IvKarate => "noisy diffusion on the Zachary karate club graph: instrumental variables vs covariance baseline",
            ExperimentKind::ApConvergence => {
                "alternating projections on a random regular graph with half of the Laplacian spectrum known"
            }
            ExperimentKind::PartialObs => {
                "half of the nodes observed: transformed realization, consistent alternating projections and held-out prediction"
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetName {
    LaplacianCvx,
    Nonnegative,
    AdjacencySym,
}

impl SetName {
    pub fn kind(self) -> SetKind {
        match self {
            SetName::LaplacianCvx => SetKind::LaplacianCvx,
            SetName::Nonnegative => SetKind::Nonnegative,
            SetName::AdjacencySym => SetKind::AdjacencySym,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub n: usize,
    pub d: usize,
    pub tau: f64,
    pub samples: usize,
    pub noise_state_var: f64,
    pub noise_obs_var: f64,
    /// Block rows of the data Hankel matrix.
    pub alpha: usize,
    /// Past block rows used as instruments; 0 selects the projection method.
    pub beta: usize,
    pub epsilon: f64,
    /// Number of known eigenvalues.
    pub m: usize,
    pub rho: f64,
    pub seed: u64,
    pub set_kind: SetName,
    pub max_iter: usize,
    pub tol_step: f64,
    /// Random starts in addition to the diagonal one.
    pub starts: usize,
    pub zero_input: bool,
    pub full_observation: bool,
    pub output_dir: Option<PathBuf>,
}

/// Where each config field came from: "default" or "override".
pub type Provenance = BTreeMap<String, String>;

impl ExperimentConfig {
    pub fn defaults(kind: ExperimentKind) -> Self {
        let base = ExperimentConfig {
            experiment: kind,
            n: 20,
            d: 3,
            tau: 1e-3,
            samples: 5000,
            noise_state_var: 0.0,
            noise_obs_var: 0.0,
            alpha: 21,
            beta: 0,
            epsilon: 0.0,
            m: 20,
            rho: 20.0,
            seed: 1,
            set_kind: SetName::LaplacianCvx,
            max_iter: 2000,
            tol_step: 1e-6,
            starts: 5,
            zero_input: false,
            full_observation: true,
            output_dir: None,
        };
        match kind {
            ExperimentKind::ModelValidation => base,
            ExperimentKind::IvKarate => {
                let n = 34;
                let alpha = 2 * n + 2;
                ExperimentConfig {
                    n,
                    d: 0,
                    samples: 20 * n * alpha,
                    noise_state_var: 1e-3,
                    noise_obs_var: 1e-3,
                    alpha,
                    beta: alpha / 2,
                    m: n,
                    rho: n as f64,
                    ..base
                }
            }
            ExperimentKind::ApConvergence => ExperimentConfig {
                n: 30,
                m: 15,
                rho: 30.0,
                alpha: 31,
                ..base
            },
            ExperimentKind::PartialObs => ExperimentConfig {
                n: 14,
                tau: 1.0,
                samples: 2000,
                alpha: 15,
                m: 14,
                rho: 14.0,
                max_iter: 30,
                full_observation: false,
                ..base
            },
        }
    }

    /// Overrides that lift model validation to N = 50 with Q = N³ samples.
    pub fn full_scale_overrides() -> Map<String, Value> {
        let n = 50usize;
        let mut m = Map::new();
        m.insert("n".into(), json!(n));
        m.insert("samples".into(), json!(n * n * n));
        m.insert("alpha".into(), json!(n + 1));
        m.insert("m".into(), json!(n));
        m.insert("rho".into(), json!(n as f64));
        m
    }

    /// Defaults for `kind` with the given fields replaced.
    pub fn with_overrides(kind: ExperimentKind, overrides: &Map<String, Value>) -> Result<(Self, Provenance)> {
        let mut v = serde_json::to_value(Self::defaults(kind))?;
        let obj = v.as_object_mut().expect("config serializes to an object");
        let mut prov: Provenance = obj.keys().map(|k| (k.clone(), "default".to_string())).collect();
        for (k, val) in overrides {
            if !obj.contains_key(k) {
                return Err(Error::Invalid(format!("unknown config field '{k}'")));
            }
            if k == "experiment" && val != &obj[k] {
                return Err(Error::Invalid(format!(
                    "config file is for experiment {val}, but {} was requested",
                    kind.name()
                )));
            }
            obj.insert(k.clone(), val.clone());
            prov.insert(k.clone(), "override".to_string());
        }
        let cfg: ExperimentConfig = serde_json::from_value(v)?;
        cfg.validate()?;
        Ok((cfg, prov))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Invalid(msg));
        if self.n < 2 {
            return bad(format!("n = {} is too small; use at least 2 nodes", self.n));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau = {} must be a positive sampling period", self.tau));
        }
        for (name, v) in [("noise_state_var", self.noise_state_var), ("noise_obs_var", self.noise_obs_var)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be a nonnegative variance"));
            }
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon = {} must be nonnegative", self.epsilon));
        }
        if !(self.rho > 0.0) {
            return bad(format!("rho = {} must be positive", self.rho));
        }
        if !(self.tol_step > 0.0) {
            return bad(format!("tol_step = {} must be positive", self.tol_step));
        }
        if self.experiment == ExperimentKind::ApConvergence && (self.m == 0 || self.m > self.n) {
            return bad(format!("m = {} known eigenvalues must be between 1 and n = {}", self.m, self.n));
        }
        let identifies = matches!(
            self.experiment,
            ExperimentKind::ModelValidation | ExperimentKind::IvKarate | ExperimentKind::PartialObs
        );
        if identifies {
            if self.alpha <= self.n {
                return bad(format!(
                    "alpha = {} must exceed the state dimension n = {}; try alpha = {}",
                    self.alpha,
                    self.n,
                    self.n + 1
                ));
            }
            if self.beta >= self.alpha {
                return bad(format!("beta = {} must be below alpha = {}", self.beta, self.alpha));
            }
            if self.beta > 0 && self.alpha - self.beta <= self.n {
                return bad(format!(
                    "alpha - beta = {} must exceed n = {} for the instrumental-variable split",
                    self.alpha - self.beta,
                    self.n
                ));
            }
            if self.samples < 2 * self.alpha + self.n {
                return bad(format!(
                    "samples = {} is too short for alpha = {}; use at least {}",
                    self.samples,
                    self.alpha,
                    2 * self.alpha + self.n
                ));
            }
        }
        if self.experiment == ExperimentKind::IvKarate {
            if self.n != 34 {
                return bad(format!("the karate graph has 34 nodes, got n = {}", self.n));
            }
        } else if self.d == 0 || self.d >= self.n || self.n * self.d % 2 == 1 {
            return bad(format!(
                "no simple {}-regular graph on {} nodes (need 0 < d < n and n·d even)",
                self.d, self.n
            ));
        }
        Ok(())
    }

    /// `output_dir` if set, else `$NETID_OUTPUT_ROOT/<name>`, else `runs/<name>`.
    pub fn resolve_output_dir(&self) -> PathBuf {
        if let Some(d) = &self.output_dir {
            return d.clone();
        }
        let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
        root.join(self.experiment.name())
    }
}

fn write_config(dir: &Path, cfg: &ExperimentConfig, prov: &Provenance) -> Result<()> {
    fs::create_dir_all(dir)?;
    io::write_json(
        &dir.join("config.json"),
        &json!({
            "experiment": cfg.experiment.name(),
            "description": cfg.experiment.description(),
            "config": cfg,
            "provenance": prov,
        }),
    )
}

fn finish<T: Serialize>(dir: &Path, report: &T) -> Result<Value> {
    let v = serde_json::to_value(report)?;
    io::write_json(&dir.join("metrics.json"), &v)?;
    Ok(v)
}

/// Runs the configured experiment into `dir` and returns its metrics.
pub fn run(cfg: &ExperimentConfig, prov: &Provenance, dir: &Path) -> Result<Value> {
    cfg.validate()?;
    write_config(dir, cfg, prov)?;
    match cfg.experiment {
        ExperimentKind::ModelValidation => finish(dir, &run_model_validation(cfg, dir)?),
        ExperimentKind::IvKarate => finish(dir, &run_iv_karate(cfg, dir)?),
        ExperimentKind::ApConvergence => finish(dir, &run_ap_convergence(cfg, dir)?),
        ExperimentKind::PartialObs => finish(dir, &run_partial_obs(cfg, dir)?),
    }
}

fn desc(v: &DVector<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = v.iter().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

fn eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    desc(&linalg::eigh_sorted(&linalg::sym(m)).0)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len().max(1) as f64
}

/// ‖λ̂ − λ‖∞ / ‖λ‖∞
fn rel_eig_err(est: &[f64], truth: &[f64]) -> f64 {
    max_abs_diff(est, truth) / truth.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupportComparison {
    pub exact: bool,
    pub true_edges: usize,
    pub estimated_edges: usize,
    pub missing: usize,
    pub spurious: usize,
}

fn compare_support(est: &DMatrix<f64>, truth: &DMatrix<f64>) -> SupportComparison {
    let e: std::collections::BTreeSet<_> = graph::support(est, EDGE_THRESHOLD).into_iter().collect();
    let t: std::collections::BTreeSet<_> = graph::support(truth, EDGE_THRESHOLD).into_iter().collect();
    SupportComparison {
        exact: e == t,
        true_edges: t.len(),
        estimated_edges: e.len(),
        missing: t.difference(&e).count(),
        spurious: e.difference(&t).count(),
    }
}

/// Mean over the reference eigenvectors of the best |cosine| with any
/// eigenvector of `m`. 1 means the eigenbases coincide up to sign.
fn eigenbasis_alignment(m: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    let (_, q) = linalg::eigh_sorted(&linalg::sym(reference));
    let (_, v) = linalg::eigh_sorted(&linalg::sym(m));
    let g = q.transpose() * v;
    (0..g.nrows()).map(|i| g.row(i).amax()).sum::<f64>() / g.nrows() as f64
}

fn sample_covariance(y: &DMatrix<f64>) -> DMatrix<f64> {
    let q = y.ncols() as f64;
    let mean = y.column_mean();
    let mut c = y.clone();
    for mut col in c.column_iter_mut() {
        col -= &mean;
    }
    &c * c.transpose() / (q - 1.0).max(1.0)
}

fn laplacian(n: usize, d: usize, seed: u64) -> Result<DMatrix<f64>> {
    Ok(graph::to_laplacian(&graph::random_regular(n, d, seed)?)?.into_matrix())
}

fn method(cfg: &ExperimentConfig) -> Method {
    if cfg.beta == 0 {
        Method::Projection
    } else {
        Method::InstrumentalVariables { beta: cfg.beta }
    }
}

fn inputs(cfg: &ExperimentConfig, seed: u64) -> DMatrix<f64> {
    if cfg.zero_input {
        DMatrix::zeros(cfg.n, cfg.samples)
    } else {
        gaussian_input(cfg.n, cfg.samples, seed)
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ModelValidationReport {
    pub state_eig_rel_err: f64,
    pub state_support: SupportComparison,
    pub input_eig_rel_err: f64,
    pub input_support: SupportComparison,
    pub state_rel_err: f64,
    pub input_rel_err: f64,
    pub estimate_alignment: f64,
    pub covariance_alignment: f64,
    pub rank_gap: f64,
    pub log_roundtrip: f64,
    pub used_fallback: bool,
    pub warnings: Vec<String>,
}

/// f_x(L_x) = −L_x, f_u(L_u) = −(L_u + I), C = I, D = 0.
pub fn run_model_validation(cfg: &ExperimentConfig, dir: &Path) -> Result<ModelValidationReport> {
    let n = cfg.n;
    let lx = laplacian(n, cfg.d, cfg.seed)?;
    let lu = laplacian(n, cfg.d, cfg.seed.wrapping_add(1))?;
    let fu_map = ScalarMap::Affine { a: -1.0, b: -1.0 };
    let c = DMatrix::<f64>::identity(n, n);
    let d = DMatrix::<f64>::zeros(n, n);
    let cm = ContinuousModel::from_graphs(&lx, &lu, ScalarMap::NegIdentity, fu_map, c.clone(), d.clone())?;
    let ss = discretize(&cm, cfg.tau)?;
    let u = inputs(cfg, cfg.seed.wrapping_add(2));
    let traj = simulate(&ss, &DVector::zeros(n), &u, cfg.noise_state_var, cfg.noise_obs_var, cfg.seed.wrapping_add(3), false)?;
    let est = identify(&traj, &c, &d, cfg.alpha, n, method(cfg), true)?;
    let b_hat = est.b_hat.clone().expect("B requested");
    let ss_hat = StateSpace::new(est.a_hat.clone(), b_hat, c, d, cfg.tau)?;
    let rec = recover_continuous(&ss_hat, ScalarMap::NegIdentity, true)?;

    let lx_hat = linalg::sym(&-&rec.fx_hat);
    let lu_hat = linalg::sym(&fu_map.apply_inverse(&rec.fu_hat)?);
    let tx = eigenvalues(&lx);
    let ex: Vec<f64> = rec.lambda_x.iter().copied().collect();
    let tu = eigenvalues(&lu);
    let eu = eigenvalues(&lu_hat);
    let idx: Vec<f64> = (0..n).map(|i| i as f64).collect();
    io::write_columns(&dir.join("state_eigenvalues.csv"), &["index", "true", "estimated"], &[idx.clone(), tx.clone(), ex.clone()])?;
    io::write_columns(&dir.join("input_eigenvalues.csv"), &["index", "true", "estimated"], &[idx, tu.clone(), eu.clone()])?;
    io::write_matrix_json(&dir.join("state_graph_true.json"), &lx, Family::CombinatorialLaplacian)?;
    io::write_matrix_json(&dir.join("state_graph_estimated.json"), &lx_hat, Family::Generic)?;
    io::write_matrix_json(&dir.join("input_graph_estimated.json"), &lu_hat, Family::Generic)?;

    Ok(ModelValidationReport {
        state_eig_rel_err: rel_eig_err(&ex, &tx),
        state_support: compare_support(&lx_hat, &lx),
        input_eig_rel_err: rel_eig_err(&eu, &tu),
        input_support: compare_support(&lu_hat, &lu),
        state_rel_err: linalg::rel_err(&lx_hat, &lx),
        input_rel_err: linalg::rel_err(&lu_hat, &lu),
        estimate_alignment: eigenbasis_alignment(&lx_hat, &lx),
        covariance_alignment: eigenbasis_alignment(&sample_covariance(&traj.outputs), &lx),
        rank_gap: est.rank_gap,
        log_roundtrip: rec.roundtrip,
        used_fallback: rec.used_fallback,
        warnings: rec.warnings,
    })
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct KarateReport {
    pub iv_eig_mae: f64,
    pub iv_eig_max_err: f64,
    pub covariance_eig_mae: f64,
    pub iv_connected: bool,
    pub iv_edges: usize,
    pub covariance_connected: bool,
    pub covariance_edges: usize,
    pub iv_alignment: f64,
    pub covariance_alignment: f64,
    pub rank_gap: f64,
    pub method: String,
}

/// A = e^{−τL} with f_u = −(L + I), C = I, noisy states and outputs. Only A is
/// estimated; the covariance baseline takes the pseudo-inverse of the sample
/// output covariance as its graph.
pub fn run_iv_karate(cfg: &ExperimentConfig, dir: &Path) -> Result<KarateReport> {
    let l = graph::to_laplacian(&graph::karate())?.into_matrix();
    let n = l.nrows();
    let c = DMatrix::<f64>::identity(n, n);
    let d = DMatrix::<f64>::zeros(n, n);
    let cm = ContinuousModel::from_graphs(
        &l,
        &l,
        ScalarMap::NegIdentity,
        ScalarMap::Affine { a: -1.0, b: -1.0 },
        c.clone(),
        d.clone(),
    )?;
    let ss = discretize(&cm, cfg.tau)?;
    let u = inputs(cfg, cfg.seed.wrapping_add(2));
    let traj = simulate(&ss, &DVector::zeros(n), &u, cfg.noise_state_var, cfg.noise_obs_var, cfg.seed.wrapping_add(3), false)?;
    let est = identify(&traj, &c, &d, cfg.alpha, n, method(cfg), false)?;
    let l_iv = linalg::sym(&(-principal_log(&linalg::sym(&est.a_hat))? / cfg.tau));
    let l_cov = linalg::pinv(&sample_covariance(&traj.outputs), 1e-12);

    let truth = eigenvalues(&l);
    let iv = eigenvalues(&l_iv);
    let cov = eigenvalues(&l_cov);
    let idx: Vec<f64> = (0..n).map(|i| i as f64).collect();
    io::write_columns(
        &dir.join("eigenvalues.csv"),
        &["index", "true", "iv", "covariance"],
        &[idx, truth.clone(), iv.clone(), cov.clone()],
    )?;
    io::write_matrix_json(&dir.join("graph_iv.json"), &l_iv, Family::Generic)?;
    io::write_matrix_json(&dir.join("graph_covariance.json"), &l_cov, Family::Generic)?;
    let iv_edges = graph::support(&l_iv, EDGE_THRESHOLD);
    let cov_edges = graph::support(&l_cov, EDGE_THRESHOLD);
    Ok(KarateReport {
        iv_eig_mae: mean_abs_diff(&iv, &truth),
        iv_eig_max_err: max_abs_diff(&iv, &truth),
        covariance_eig_mae: mean_abs_diff(&cov, &truth),
        iv_connected: graph::is_connected(n, &iv_edges),
        iv_edges: iv_edges.len(),
        covariance_connected: graph::is_connected(n, &cov_edges),
        covariance_edges: cov_edges.len(),
        iv_alignment: eigenbasis_alignment(&l_iv, &l),
        covariance_alignment: eigenbasis_alignment(&l_cov, &l),
        rank_gap: est.rank_gap,
        method: match method(cfg) {
            Method::Projection => "projection".into(),
            Method::InstrumentalVariables { beta } => format!("instrumental_variables(beta={beta})"),
        },
    })
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ApRunSummary {
    pub variant: String,
    pub start: String,
    pub iterations: usize,
    pub monotone: bool,
    pub final_step_delta: f64,
    pub reached_tol: bool,
    pub final_residual: f64,
    pub converged: bool,
    pub fixed_point_escapes: usize,
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ApConvergenceReport {
    pub runs: Vec<ApRunSummary>,
    pub all_monotone: bool,
    pub all_reached_tol: bool,
}

/// Residual sequence non-increasing up to `1e-12·max(1, r₀)`.
pub fn is_monotone(res: &[f64]) -> bool {
    let slack = 1e-12 * res.first().copied().unwrap_or(0.0).max(1.0);
    res.windows(2).all(|w| w[1] <= w[0] + slack)
}

fn summarize(variant: &str, start: &str, run: &ApRun, tol: f64) -> ApRunSummary {
    let last = run.step_delta.last().copied().unwrap_or(f64::INFINITY);
    ApRunSummary {
        variant: variant.to_string(),
        start: start.to_string(),
        iterations: run.iterations,
        monotone: is_monotone(&run.proj_residual),
        final_step_delta: last,
        reached_tol: last <= tol,
        final_residual: run.final_residual,
        converged: run.converged,
        fixed_point_escapes: run.fixed_point_escapes,
        rate: match inverse::estimate_linear_rate(run) {
            Ok(inverse::Rate::Linear { r, .. }) => Some(r),
            _ => None,
        },
    }
}

/// Main case: the top `m` Laplacian eigenvalues with the configured set.
/// Supplementary cases: the full Laplacian spectrum, exact and with ε = 0.1,
/// against the nonnegative set.
pub fn run_ap_convergence(cfg: &ExperimentConfig, dir: &Path) -> Result<ApConvergenceReport> {
    let n = cfg.n;
    let g = graph::random_regular(n, cfg.d, cfg.seed)?;
    let l = graph::to_laplacian(&g)?.into_matrix();
    let lam = eigenvalues(&l);
    let variants = vec![
        (
            "main",
            SpectralTarget::partial(n, &lam[..cfg.m], cfg.epsilon, cfg.rho)?,
            StructuralSet::new(cfg.set_kind.kind()),
        ),
        ("nonneg_exact", SpectralTarget::exact(&lam)?, StructuralSet::nonnegative()),
        ("nonneg_eps", SpectralTarget::ball(&lam, 0.1)?, StructuralSet::nonnegative()),
    ];
    let seeds: Vec<u64> = (1..=cfg.starts as u64).map(|k| cfg.seed.wrapping_mul(1000).wrapping_add(k)).collect();
    let opts = ApOptions { seed: cfg.seed, ..ApOptions::default() };
    let mut runs = Vec::new();
    for (name, target, set) in &variants {
        let diag = inverse::diagonal_start(target);
        let mut all: Vec<(String, Result<ApRun>)> =
            vec![("diagonal".to_string(), inverse::ap_solve(target, set, &diag, cfg.max_iter, cfg.tol_step, &opts))];
        let randoms = inverse::ap_multistart(target, set, &seeds, cfg.max_iter, cfg.tol_step, &opts);
        all.extend(seeds.iter().map(|s| format!("random_{s}")).zip(randoms));
        for (start, run) in all {
            let run = run?;
            io::write_ap_run(dir, &format!("{name}_{start}"), &run)?;
            runs.push(summarize(name, &start, &run, cfg.tol_step));
        }
    }
    Ok(ApConvergenceReport {
        all_monotone: runs.iter().all(|r| r.monotone),
        all_reached_tol: runs.iter().all(|r| r.reached_tol),
        runs,
    })
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct PartialObsReport {
    pub observed: usize,
    pub fitness: Vec<f64>,
    pub min_fitness: f64,
    pub input_eig_max_err: f64,
    pub state_eig_max_err: f64,
    pub transformed_eig_max_err: f64,
    pub state_support: SupportComparison,
    pub input_support: SupportComparison,
    pub mode_offdiag_ratio: f64,
    pub ap_residual: f64,
    pub ap_iterations: usize,
    pub best_start: String,
    /// Smallest per-channel fitness on the identification data, used to pick the start.
    pub training_fitness: f64,
    pub consistency_feasible: bool,
    pub non_unique: bool,
}

struct Realized {
    sx: DMatrix<f64>,
    lu_hat: DMatrix<f64>,
    ss: StateSpace,
}

/// Graph pair and state-space model implied by an S-side iterate:
/// B̂ = T̂⁻¹·B_T and Â = e^{−τŜ}.
fn realize(p: &DMatrix<f64>, cons: &ConsistencyData, c: &DMatrix<f64>, tau: f64) -> Result<Realized> {
    let n = p.nrows();
    let sx = linalg::sym(p);
    let t_hat = inverse::estimate_transform(&sx, cons)?;
    let b_t = cons.b_t.as_ref().ok_or_else(|| Error::Invalid("B_T is required".into()))?;
    let b_hat = t_hat
        .lu()
        .solve(b_t)
        .ok_or_else(|| Error::Numerical("estimated transform is singular".into()))?;
    let b_hat = linalg::sym(&b_hat);
    let lu_hat = &b_hat - DMatrix::<f64>::identity(n, n);
    let a_hat = linalg::sym_fn(&sx, |x| (-tau * x).exp());
    let ss = StateSpace::new(a_hat, b_hat, c.clone(), DMatrix::zeros(c.nrows(), n), tau)?;
    Ok(Realized { sx, lu_hat, ss })
}

/// 100·(1 − ‖y − ŷ‖₂/‖y − ȳ‖₂) per output channel.
pub fn nrmse_fitness(y: &DMatrix<f64>, y_hat: &DMatrix<f64>) -> Vec<f64> {
    (0..y.nrows())
        .map(|i| {
            let r = y.row(i);
            let mean = r.mean();
            let den = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>().sqrt();
            let num = (r - y_hat.row(i)).norm();
            100.0 * (1.0 - num / den)
        })
        .collect()
}

/// A = e^{−τL_x}, B = L_u + I, C selects the even-indexed nodes (all nodes with
/// `full_observation`). Runs `starts` random starts plus the start fixed by
/// the consistency data (when it exists) and keeps the one whose reconstructed
/// model best reproduces the identification data; its S-side iterate P_S(S_k)
/// is reported.
pub fn run_partial_obs(cfg: &ExperimentConfig, dir: &Path) -> Result<PartialObsReport> {
    let n = cfg.n;
    let lx = laplacian(n, cfg.d, cfg.seed)?;
    let lu = laplacian(n, cfg.d, cfg.seed.wrapping_add(1))?;
    let rows: Vec<usize> = if cfg.full_observation { (0..n).collect() } else { (0..n).step_by(2).collect() };
    let c = DMatrix::from_fn(rows.len(), n, |i, j| if rows[i] == j { 1.0 } else { 0.0 });
    let d = DMatrix::zeros(rows.len(), n);
    let a = linalg::sym_fn(&lx, |x| (-cfg.tau * x).exp());
    let b = &lu + DMatrix::<f64>::identity(n, n);
    let ss = StateSpace::new(a, b.clone(), c.clone(), d.clone(), cfg.tau)?;
    let u = inputs(cfg, cfg.seed.wrapping_add(2));
    let traj = simulate(&ss, &DVector::zeros(n), &u, cfg.noise_state_var, cfg.noise_obs_var, cfg.seed.wrapping_add(3), false)?;
    let est = identify(&traj, &c, &d, cfg.alpha, n, method(cfg), true)?;

    let cons = ConsistencyData {
        c: c.clone(),
        c_t: &est.w.rows(0, c.nrows()) * &est.t_hat,
        a_t: est.a_hat.clone(),
        b_t: est.b_hat.clone(),
        tau: cfg.tau,
        fx_map: ScalarMap::NegIdentity,
    };
    let g = cons.transformed_graph()?;
    let spec: Vec<f64> = {
        let ev = g.clone().complex_eigenvalues();
        let mut v: Vec<f64> = ev.iter().map(|z| z.re).collect();
        v.sort_by(|x, y| y.total_cmp(x));
        v
    };
    let truth_x = eigenvalues(&lx);
    let target = SpectralTarget::exact(&spec)?;
    let set = StructuralSet::with_consistency(cfg.set_kind.kind(), cons.clone())?;
    let seeds: Vec<u64> = (1..=cfg.starts.max(1) as u64).map(|k| cfg.seed.wrapping_mul(1000).wrapping_add(k)).collect();
    let opts = ApOptions { seed: cfg.seed, ..ApOptions::default() };
    let mut runs: Vec<(String, Result<ApRun>)> = seeds
        .iter()
        .map(|s| format!("random_{s}"))
        .zip(inverse::ap_multistart(&target, &set, &seeds, cfg.max_iter, cfg.tol_step, &opts))
        .collect();
    if let Ok(s0) = inverse::consistent_start(&cons) {
        runs.push(("consistent".into(), inverse::ap_solve(&target, &set, &s0, cfg.max_iter, cfg.tol_step, &opts)));
    }
    let mut best: Option<(f64, String, ApRun, Realized)> = None;
    for (name, run) in runs {
        let run = run?;
        io::write_ap_run(dir, &format!("ap_{name}"), &run)?;
        let Ok(r) = realize(&run.final_projected, &cons, &c, cfg.tau) else { continue };
        let y_fit = simulate(&r.ss, &DVector::zeros(n), &traj.inputs, 0.0, 0.0, 0, false)?.outputs;
        let score = nrmse_fitness(&traj.outputs, &y_fit).into_iter().fold(f64::INFINITY, f64::min);
        if best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, name, run, r));
        }
    }
    let (training_fitness, best_start, run, Realized { sx, lu_hat, ss: ss_hat }) =
        best.ok_or_else(|| Error::Numerical("no start gave an invertible transform".into()))?;
    let fresh = gaussian_input(n, 2000, cfg.seed.wrapping_add(99));
    let y = simulate(&ss, &DVector::zeros(n), &fresh, 0.0, 0.0, 0, false)?.outputs;
    let y_hat = simulate(&ss_hat, &DVector::zeros(n), &fresh, 0.0, 0.0, 0, false)?.outputs;
    let fitness = nrmse_fitness(&y, &y_hat);

    let (_, q_hat) = linalg::eigh_sorted(&sx);
    let modes = (q_hat.transpose() * &lx * &q_hat).map(f64::abs);
    let off = {
        let mut m = modes.clone();
        m.fill_diagonal(0.0);
        m.norm() / modes.norm()
    };
    io::write_matrix_csv(&dir.join("mode_projection.csv"), &modes)?;
    io::write_columns(
        &dir.join("fitness.csv"),
        &["channel", "node", "fitness"],
        &[(0..rows.len()).map(|i| i as f64).collect(), rows.iter().map(|&r| r as f64).collect(), fitness.clone()],
    )?;
    let idx: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let sx_eig = eigenvalues(&sx);
    let lu_eig = eigenvalues(&lu_hat);
    let truth_u = eigenvalues(&lu);
    io::write_columns(
        &dir.join("eigenvalues.csv"),
        &["index", "state_true", "state_estimated", "input_true", "input_estimated"],
        &[idx, truth_x.clone(), sx_eig.clone(), truth_u.clone(), lu_eig.clone()],
    )?;
    io::write_matrix_json(&dir.join("state_graph_estimated.json"), &sx, Family::Generic)?;
    io::write_matrix_json(&dir.join("input_graph_estimated.json"), &lu_hat, Family::Generic)?;

    Ok(PartialObsReport {
        observed: rows.len(),
        min_fitness: fitness.iter().copied().fold(f64::INFINITY, f64::min),
        fitness,
        input_eig_max_err: max_abs_diff(&lu_eig, &truth_u),
        state_eig_max_err: max_abs_diff(&sx_eig, &truth_x),
        transformed_eig_max_err: max_abs_diff(&spec, &truth_x),
        state_support: compare_support(&sx, &lx),
        input_support: compare_support(&lu_hat, &lu),
        mode_offdiag_ratio: off,
        ap_residual: run.final_residual,
        ap_iterations: run.iterations,
        best_start,
        training_fitness,
        consistency_feasible: set.consistency_feasible(),
        non_unique: est.non_unique,
    })
}
