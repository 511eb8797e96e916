use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde_json::{json, Map, Value};

use netid::dynamics::{discretize, gaussian_input, simulate, ContinuousModel, ScalarMap};
use netid::experiments::{self, ExperimentConfig, ExperimentKind, SetName};
use netid::graph::{self, Family};
use netid::inverse::{self, ApOptions, SpectralTarget, StructuralSet};
use netid::recovery::recover_continuous;
use netid::subspace::{identify, Method};
use netid::{io, Error, Result};

#[derive(Parser)]
#[command(name = "netid", version, about = "Network topology identification from input/output data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate graph diffusion driven by a Gaussian input
    Simulate(SimulateArgs),
    /// Identify (A, B) from a trajectory and recover the continuous-time generators
    Identify(IdentifyArgs),
    /// Build a matrix with a prescribed spectrum inside a structural set
    Reconstruct(ReconstructArgs),
    /// Run one of the bundled experiments
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Observe {
    All,
    Half,
}

#[derive(Args)]
struct SimulateArgs {
    /// State graph as a matrix JSON file; a random regular Laplacian otherwise
    #[arg(long)]
    sx: Option<PathBuf>,
    /// Input graph as a matrix JSON file; a random regular Laplacian otherwise
    #[arg(long)]
    su: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    d: usize,
    #[arg(long, default_value_t = 1e-3)]
    tau: f64,
    #[arg(long, default_value_t = 5000)]
    samples: usize,
    #[arg(long, default_value_t = 0.0)]
    noise_state_var: f64,
    #[arg(long, default_value_t = 0.0)]
    noise_obs_var: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value = "all")]
    observe: Observe,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IdentifyArgs {
    /// Trajectory CSV (k, u_1..u_N, y_1..y_L)
    #[arg(long)]
    trajectory: PathBuf,
    /// JSON sidecar; defaults to the trajectory path with a .json extension
    #[arg(long)]
    sidecar: Option<PathBuf>,
    /// Output matrix C as CSV; identity when omitted
    #[arg(long)]
    c: Option<PathBuf>,
    /// State dimension; defaults to the column count of C
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    alpha: Option<usize>,
    /// Past depth for instrumental variables; 0 uses the projection method
    #[arg(long, default_value_t = 0)]
    beta: usize,
    /// Also estimate B and x(0)
    #[arg(long)]
    with_b: bool,
    /// Symmetrize the estimate before taking the logarithm
    #[arg(long)]
    undirected: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SetArg {
    LaplacianCvx,
    Nonnegative,
    AdjacencySym,
}

impl SetArg {
    fn set(self) -> StructuralSet {
        match self {
            SetArg::LaplacianCvx => StructuralSet::laplacian(),
            SetArg::Nonnegative => StructuralSet::nonnegative(),
            SetArg::AdjacencySym => StructuralSet::adjacency(),
        }
    }
}

#[derive(Args)]
struct ReconstructArgs {
    /// Known eigenvalues, comma separated
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "from_matrix")]
    eigenvalues: Option<Vec<f64>>,
    /// Take the known eigenvalues from this matrix JSON file
    #[arg(long)]
    from_matrix: Option<PathBuf>,
    /// Keep only the m largest eigenvalues
    #[arg(long)]
    m: Option<usize>,
    /// Matrix size; defaults to the number of eigenvalues given
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    /// Bound on the unknown eigenvalues; defaults to n
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long = "set", value_enum, default_value = "laplacian-cvx")]
    set_kind: SetArg,
    #[arg(long, default_value_t = 2000)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol_step: f64,
    /// Random starts in addition to the diagonal one
    #[arg(long, default_value_t = 5)]
    starts: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(value_parser = ["model_validation", "iv_karate", "ap_convergence", "partial_obs"])]
    name: String,
    /// JSON file with config fields; command-line flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model validation at N = 50 with N³ samples
    #[arg(long)]
    full_scale: bool,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    noise_state_var: Option<f64>,
    #[arg(long)]
    noise_obs_var: Option<f64>,
    #[arg(long)]
    alpha: Option<usize>,
    #[arg(long)]
    beta: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    set_kind: Option<SetArg>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tol_step: Option<f64>,
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    zero_input: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    full_observation: Option<bool>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl ExperimentArgs {
    fn overrides(&self) -> Result<Map<String, Value>> {
        let mut m = Map::new();
        if self.full_scale {
            if self.name != "model_validation" {
                return Err(Error::Invalid("--full-scale applies to model_validation only".into()));
            }
            m.extend(ExperimentConfig::full_scale_overrides());
        }
        if let Some(path) = &self.config {
            let v: Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
            match v {
                Value::Object(o) => m.extend(o),
                _ => return Err(Error::Invalid(format!("{} must hold a JSON object", path.display()))),
            }
        }
        let set_kind = self.set_kind.map(|s| match s {
            SetArg::LaplacianCvx => SetName::LaplacianCvx,
            SetArg::Nonnegative => SetName::Nonnegative,
            SetArg::AdjacencySym => SetName::AdjacencySym,
        });
        let flags = [
            ("n", self.n.map(|v| json!(v))),
            ("d", self.d.map(|v| json!(v))),
            ("tau", self.tau.map(|v| json!(v))),
            ("samples", self.samples.map(|v| json!(v))),
            ("noise_state_var", self.noise_state_var.map(|v| json!(v))),
            ("noise_obs_var", self.noise_obs_var.map(|v| json!(v))),
            ("alpha", self.alpha.map(|v| json!(v))),
            ("beta", self.beta.map(|v| json!(v))),
            ("epsilon", self.epsilon.map(|v| json!(v))),
            ("m", self.m.map(|v| json!(v))),
            ("rho", self.rho.map(|v| json!(v))),
            ("seed", self.seed.map(|v| json!(v))),
            ("set_kind", set_kind.map(|v| json!(v))),
            ("max_iter", self.max_iter.map(|v| json!(v))),
            ("tol_step", self.tol_step.map(|v| json!(v))),
            ("starts", self.starts.map(|v| json!(v))),
            ("zero_input", self.zero_input.map(|v| json!(v))),
            ("full_observation", self.full_observation.map(|v| json!(v))),
            ("output_dir", self.output_dir.as_ref().map(|v| json!(v))),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        }
        Ok(m)
    }
}

fn half_selector(n: usize) -> DMatrix<f64> {
    let l = n.div_ceil(2);
    DMatrix::from_fn(l, n, |i, j| if j == 2 * i { 1.0 } else { 0.0 })
}

fn load_graph(path: &Option<PathBuf>, n: usize, d: usize, seed: u64) -> Result<DMatrix<f64>> {
    match path {
        Some(p) => Ok(io::read_matrix_json(p)?.0),
        None => Ok(graph::to_laplacian(&graph::random_regular(n, d, seed)?)?.into_matrix()),
    }
}

fn cmd_simulate(a: &SimulateArgs) -> Result<Value> {
    let sx = load_graph(&a.sx, a.n, a.d, a.seed)?;
    let su = load_graph(&a.su, a.n, a.d, a.seed + 1)?;
    let n = sx.nrows();
    let c = match a.observe {
        Observe::All => DMatrix::identity(n, n),
        Observe::Half => half_selector(n),
    };
    let d = DMatrix::zeros(c.nrows(), n);
    let cm = ContinuousModel::from_graphs(
        &sx,
        &su,
        ScalarMap::NegIdentity,
        ScalarMap::Affine { a: -1.0, b: -1.0 },
        c.clone(),
        d,
    )?;
    let ss = discretize(&cm, a.tau)?;
    let u = gaussian_input(n, a.samples, a.seed);
    let traj = simulate(&ss, &DVector::zeros(n), &u, a.noise_state_var, a.noise_obs_var, a.seed, false)?;
    std::fs::create_dir_all(&a.out)?;
    io::write_trajectory(&a.out.join("trajectory.csv"), &a.out.join("trajectory.json"), &traj)?;
    io::write_matrix_json(&a.out.join("sx.json"), &sx, Family::Generic)?;
    io::write_matrix_json(&a.out.join("su.json"), &su, Family::Generic)?;
    io::write_matrix_csv(&a.out.join("a.csv"), &ss.a)?;
    io::write_matrix_csv(&a.out.join("b.csv"), &ss.b)?;
    io::write_matrix_csv(&a.out.join("c.csv"), &c)?;
    Ok(json!({"n": n, "outputs": c.nrows(), "samples": a.samples, "out": a.out}))
}

fn cmd_identify(a: &IdentifyArgs) -> Result<Value> {
    let sidecar = a.sidecar.clone().unwrap_or_else(|| a.trajectory.with_extension("json"));
    let traj = io::read_trajectory(&a.trajectory, &sidecar)?;
    let l = traj.outputs.nrows();
    let c = match &a.c {
        Some(p) => io::read_matrix_csv(p)?,
        None => DMatrix::identity(l, l),
    };
    let n = a.n.unwrap_or(c.ncols());
    let alpha = a.alpha.unwrap_or(n + 1);
    let method = if a.beta == 0 { Method::Projection } else { Method::InstrumentalVariables { beta: a.beta } };
    let d = DMatrix::zeros(l, traj.inputs.nrows());
    let est = identify(&traj, &c, &d, alpha, n, method, a.with_b)?;
    std::fs::create_dir_all(&a.out)?;
    io::write_matrix_csv(&a.out.join("a_hat.csv"), &est.a_hat)?;
    io::write_matrix_csv(&a.out.join("t_hat.csv"), &est.t_hat)?;
    if let Some(b) = &est.b_hat {
        io::write_matrix_csv(&a.out.join("b_hat.csv"), b)?;
    }
    let mut report = json!({"identification": est.to_json()});
    // the continuous-time generators are only meaningful in the original coordinates
    if !est.non_unique {
        if let Some(b) = &est.b_hat {
            let ss = netid::dynamics::StateSpace::new(est.a_hat.clone(), b.clone(), c.clone(), d.clone(), traj.tau)?;
            let ce = recover_continuous(&ss, ScalarMap::NegIdentity, a.undirected)?;
            io::write_matrix_csv(&a.out.join("fx_hat.csv"), &ce.fx_hat)?;
            io::write_matrix_csv(&a.out.join("fu_hat.csv"), &ce.fu_hat)?;
            report["continuous"] = ce.to_json();
        }
    }
    io::write_json(&a.out.join("identify.json"), &report)?;
    Ok(json!({"non_unique": est.non_unique, "rank_gap": est.rank_gap, "out": a.out}))
}

fn cmd_reconstruct(a: &ReconstructArgs) -> Result<Value> {
    let mut vals = match (&a.eigenvalues, &a.from_matrix) {
        (Some(v), None) => v.clone(),
        (None, Some(p)) => graph::eig_sym(&io::read_matrix_json(p)?.0)?.values.iter().copied().collect(),
        _ => return Err(Error::Invalid("give exactly one of --eigenvalues and --from-matrix".into())),
    };
    if vals.is_empty() || vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("eigenvalues must be finite and nonempty".into()));
    }
    vals.sort_by(|x, y| y.total_cmp(x));
    let n = a.n.unwrap_or(vals.len());
    if let Some(m) = a.m {
        if m == 0 || m > vals.len() {
            return Err(Error::Invalid(format!("m = {m} must be between 1 and {}", vals.len())));
        }
        vals.truncate(m);
    }
    let rho = a.rho.unwrap_or(n as f64);
    let target = SpectralTarget::partial(n, &vals, a.epsilon, rho)?;
    let set = a.set_kind.set();
    let opts = ApOptions { seed: a.seed, ..ApOptions::default() };
    let seeds: Vec<u64> = (1..=a.starts as u64).map(|k| a.seed.wrapping_mul(1000).wrapping_add(k)).collect();
    let mut runs = vec![(
        "diagonal".to_string(),
        inverse::ap_solve(&target, &set, &inverse::diagonal_start(&target), a.max_iter, a.tol_step, &opts)?,
    )];
    for (s, r) in seeds.iter().zip(inverse::ap_multistart(&target, &set, &seeds, a.max_iter, a.tol_step, &opts)) {
        runs.push((format!("random_{s}"), r?));
    }
    std::fs::create_dir_all(&a.out)?;
    let mut summaries = Vec::new();
    for (name, run) in &runs {
        io::write_ap_run(&a.out, name, run)?;
        let mut s = io::ap_summary(run);
        s["start"] = json!(name);
        summaries.push(s);
    }
    let (best_name, best) = runs
        .iter()
        .min_by(|x, y| x.1.final_residual.total_cmp(&y.1.final_residual))
        .expect("at least the diagonal start ran");
    io::write_matrix_json(&a.out.join("best.json"), &best.final_projected, Family::Generic)?;
    let report = json!({"best_start": best_name, "best_residual": best.final_residual, "runs": summaries});
    io::write_json(&a.out.join("summary.json"), &report)?;
    Ok(json!({"best_start": best_name, "best_residual": best.final_residual, "out": a.out}))
}

fn cmd_experiment(a: &ExperimentArgs) -> Result<Value> {
    let kind = ExperimentKind::parse(&a.name)?;
    let (cfg, prov) = ExperimentConfig::with_overrides(kind, &a.overrides()?)?;
    let dir = cfg.resolve_output_dir();
    let metrics = experiments::run(&cfg, &prov, &dir)?;
    Ok(json!({"experiment": kind.name(), "out": dir, "metrics": metrics}))
}

fn exit_code(e: &Error) -> u8 {
    if e.is_validation() || matches!(e, Error::Io(_)) {
        2
    } else {
        3
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Identify(a) => cmd_identify(a),
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Experiment(a) => cmd_experiment(a),
    };
    match result {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).unwrap_or_else(|_| v.to_string()));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
