use nalgebra::{DMatrix, DVector};
use netid::dynamics::*;
use netid::graph;
use netid::linalg;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Symmetric generator with eigenvalues in [lo, hi].
fn random_generator(n: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let q = linalg::haar_orthogonal(n, rng);
    let d = DVector::from_fn(n, |_, _| rng.random_range(lo..=hi));
    linalg::from_spectrum(&q, &d)
}

fn model(fx: DMatrix<f64>, fu: DMatrix<f64>) -> ContinuousModel {
    let n = fx.nrows();
    ContinuousModel::new(
        fx,
        fu,
        DMatrix::identity(n, n),
        DMatrix::zeros(n, n),
        ScalarMap::Identity,
        ScalarMap::Identity,
    )
    .unwrap()
}

fn simpson_integral(fx: &DMatrix<f64>, tau: f64, panels: usize) -> DMatrix<f64> {
    // e^{F t} at the grid is a power of one step, so the quadrature nodes are cheap
    let h = tau / panels as f64;
    let half = linalg::expm(&(fx * (h / 2.0)));
    let n = fx.nrows();
    let mut acc = DMatrix::<f64>::identity(n, n);
    let mut e = DMatrix::<f64>::identity(n, n);
    for k in 1..=2 * panels {
        e = &e * &half;
        let w = if k == 2 * panels {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += &e * w;
    }
    acc * (h / 6.0)
}

#[test]
fn b_matches_simpson_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let n = rng.random_range(2..=8);
        let fx = random_generator(n, -4.0, 1.0, &mut rng);
        let fu = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
        let tau = rng.random_range(0.05..1.0);
        let ss = discretize(&model(fx.clone(), fu.clone()), tau).unwrap();
        let quad = simpson_integral(&fx, tau, 10_000) * &fu;
        assert!(linalg::rel_err(&ss.b, &quad) <= 1e-7, "{}", linalg::rel_err(&ss.b, &quad));
    }
}

#[test]
fn laplacian_generator_examples() {
    let g = graph::random_regular(10, 3, 4).unwrap();
    let l = graph::to_laplacian(&g).unwrap().into_matrix();
    let cm = ContinuousModel::from_graphs(
        &l,
        &l,
        ScalarMap::NegIdentity,
        ScalarMap::Affine { a: -1.0, b: -1.0 },
        DMatrix::identity(10, 10),
        DMatrix::zeros(10, 10),
    )
    .unwrap();
    assert!((&cm.fu + &l + DMatrix::<f64>::identity(10, 10)).norm() < 1e-15);
    let ss = discretize(&cm, 1e-3).unwrap();
    let (lv, lq) = linalg::eigh_sorted(&l);
    let (av, _) = linalg::eigh_sorted(&ss.a);
    // e^{−τλ} reverses the order
    for (k, a) in av.iter().enumerate() {
        assert!((a - (-1e-3 * lv[lv.len() - 1 - k]).exp()).abs() < 1e-12);
    }
    let shared = lq.transpose() * &ss.a * &lq;
    assert!((&shared - DMatrix::from_diagonal(&shared.diagonal())).norm() < 1e-12);
}

#[test]
fn karate_pure_noise_channel_variance() {
    let l = graph::to_laplacian(&graph::karate()).unwrap().into_matrix();
    let n = l.nrows();
    let a = linalg::sym_fn(&l, |x| (-1e-3 * x).exp());
    let ss = StateSpace::new(a, DMatrix::zeros(n, n), DMatrix::identity(n, n), DMatrix::zeros(n, n), 1e-3).unwrap();
    let u = DMatrix::zeros(n, 20_000);
    // no state noise and x0 = 0: outputs are the observation noise alone
    let t = simulate(&ss, &DVector::zeros(n), &u, 0.0, 1e-3, 11, false).unwrap();
    let var = t.outputs.map(|x| x * x).mean();
    assert!((var - 1e-3).abs() < 0.03e-3, "{var}");
}

#[test]
fn gaussian_input_moments() {
    let u = gaussian_input(100, 10_000, 42);
    let mean = u.mean();
    let var = u.map(|x| (x - mean).powi(2)).mean();
    assert!(mean.abs() < 0.01);
    assert!((var - 1.0).abs() < 0.02);
    assert_eq!(u, gaussian_input(100, 10_000, 42));
    assert_ne!(u, gaussian_input(100, 10_000, 43));
}

#[test]
fn noisy_simulation_is_seeded() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 5;
    let fx = random_generator(n, -2.0, -0.1, &mut rng);
    let ss = discretize(&model(fx, DMatrix::identity(n, n)), 0.1).unwrap();
    let u = gaussian_input(n, 300, 1);
    let x0 = DVector::from_element(n, 1.0);
    let a = simulate(&ss, &x0, &u, 1e-2, 1e-2, 9, true).unwrap();
    let b = simulate(&ss, &x0, &u, 1e-2, 1e-2, 9, true).unwrap();
    let c = simulate(&ss, &x0, &u, 1e-2, 1e-2, 10, true).unwrap();
    assert_eq!(a.outputs, b.outputs);
    assert_ne!(a.outputs, c.outputs);
    assert_eq!(a.states.as_ref().unwrap().ncols(), 301);
    assert!(simulate(&ss, &x0, &u, -1.0, 0.0, 0, false).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn semigroup(n in 1usize..10, tau in 1e-3f64..0.5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fx = random_generator(n, -5.0, 2.0, &mut rng);
        let fu = DMatrix::<f64>::identity(n, n);
        let cm = model(fx.clone(), fu);
        let a1 = discretize(&cm, tau).unwrap().a;
        let a2 = discretize(&cm, 2.0 * tau).unwrap().a;
        prop_assert!((&a2 - &a1 * &a1).norm() <= 1e-9 * a2.norm());
        let (fv, _) = linalg::eigh_sorted(&fx);
        let (av, _) = linalg::eigh_sorted(&a1);
        for (x, y) in fv.iter().zip(av.iter()) {
            prop_assert!(((x * tau).exp() - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn resimulation_is_bit_identical(n in 1usize..8, q in 1usize..200, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fx = random_generator(n, -3.0, 0.0, &mut rng);
        let fu = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
        let ss = discretize(&model(fx, fu), 0.2).unwrap();
        let x0 = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
        let u = gaussian_input(n, q, seed);
        let first = simulate(&ss, &x0, &u, 0.0, 0.0, 0, true).unwrap();
        let states = first.states.clone().unwrap();
        let again = simulate(&ss, &states.column(0).into_owned(), &first.inputs, 0.0, 0.0, 0, true).unwrap();
        prop_assert_eq!(&first.outputs, &again.outputs);
        prop_assert_eq!(first.states, again.states);
    }
}
