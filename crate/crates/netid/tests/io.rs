use nalgebra::{DMatrix, DVector};
use netid::dynamics::{gaussian_input, simulate, StateSpace};
use netid::graph::Family;
use netid::inverse::{ap_solve, ApOptions, SpectralTarget, StructuralSet};
use netid::io::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

#[test]
fn matrix_json_layout() {
    let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
    let dir = tmp();
    let p = dir.path().join("m.json");
    write_matrix_json(&p, &m, Family::Generic).unwrap();
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
    assert_eq!(v["n"], 2);
    assert_eq!(v["family"], "generic");
    assert_eq!(v["data"], serde_json::json!([1.0, 2.0, 3.0, 4.0]));
    let (back, fam) = read_matrix_json(&p).unwrap();
    assert_eq!(back, m);
    assert_eq!(fam, Family::Generic);
}

#[test]
fn matrix_file_checks_length() {
    let f = MatrixFile { n: 3, family: Family::Generic, data: vec![0.0; 4] };
    assert!(f.matrix().is_err());
    assert!(MatrixFile::new(&DMatrix::zeros(2, 3), Family::Generic).is_err());
}

#[test]
fn matrix_csv_skips_comments() {
    let dir = tmp();
    let p = dir.path().join("m.csv");
    std::fs::write(&p, "# weights\n1,2\n3,4.5\n").unwrap();
    assert_eq!(read_matrix_csv(&p).unwrap(), DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.5]));
    std::fs::write(&p, "1,x\n").unwrap();
    assert!(read_matrix_csv(&p).is_err());
}

#[test]
fn trajectory_round_trip() {
    let n = 3;
    let ss = StateSpace::new(
        DMatrix::identity(n, n) * 0.5,
        DMatrix::identity(n, n),
        DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]),
        DMatrix::zeros(2, n),
        0.25,
    )
    .unwrap();
    let t = simulate(&ss, &DVector::zeros(n), &gaussian_input(n, 50, 1), 0.1, 0.2, 17, false).unwrap();
    let dir = tmp();
    let (c, s) = (dir.path().join("t.csv"), dir.path().join("t.json"));
    write_trajectory(&c, &s, &t).unwrap();
    let header = std::fs::read_to_string(&c).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "k,u_1,u_2,u_3,y_1,y_2");
    let back = read_trajectory(&c, &s).unwrap();
    assert_eq!(back.inputs, t.inputs);
    assert_eq!(back.outputs, t.outputs);
    assert_eq!((back.tau, back.noise_state_var, back.noise_obs_var, back.seed), (0.25, 0.1, 0.2, Some(17)));
}

#[test]
fn ap_outputs() {
    let l = netid::graph::to_laplacian(&netid::graph::random_regular(8, 3, 2).unwrap())
        .unwrap()
        .into_matrix();
    let vals: Vec<f64> = l.symmetric_eigenvalues().iter().copied().collect();
    let target = SpectralTarget::exact(&vals).unwrap();
    let s0 = DMatrix::from_diagonal(&DVector::from_vec(vals));
    let run = ap_solve(&target, &StructuralSet::laplacian(), &s0, 500, 1e-6, &ApOptions::default()).unwrap();
    let dir = tmp();
    write_ap_run(dir.path(), "run", &run).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("run.csv")).unwrap();
    assert!(csv.starts_with("iteration,proj_residual,step_delta\n"));
    assert_eq!(csv.lines().count(), run.proj_residual.len() + 1);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("run.json")).unwrap()).unwrap();
    assert_eq!(summary["iterations"], run.iterations);
    let (m, _) = read_matrix_json(&dir.path().join("run_matrix.json")).unwrap();
    assert_eq!(m, run.final_matrix);
}

#[test]
fn write_columns_checks_lengths() {
    let dir = tmp();
    let p = dir.path().join("c.csv");
    assert!(write_columns(&p, &["a", "b"], &[vec![1.0], vec![1.0, 2.0]]).is_err());
    write_columns(&p, &["a", "b"], &[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
    assert_eq!(std::fs::read_to_string(&p).unwrap(), "a,b\n1,3\n2,4\n");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn matrices_round_trip_exactly(r in 1usize..8, c in 1usize..8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::<f64>::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal) * 10f64.powi(rng.random_range(-8..8)));
        let dir = tmp();
        let p = dir.path().join("m.csv");
        write_matrix_csv(&p, &m).unwrap();
        prop_assert_eq!(read_matrix_csv(&p).unwrap(), m.clone());
        if r == c {
            let j = dir.path().join("m.json");
            write_matrix_json(&j, &m, Family::Generic).unwrap();
            prop_assert_eq!(read_matrix_json(&j).unwrap().0, m);
        }
    }
}
