use etl_core::linalg::from_row_major;
use etl_core::linsys::{simulate_discrete, ContinuousLinearModel, DiscreteLinearModel};
use etl_core::rng::seeded;
use etl_core::{Matrix, Vector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

fn variance(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for x in xs {
        n += 1.0;
        let d = x - mean;
        mean += d / n;
        m2 += d * (x - mean);
    }
    m2 / (n - 1.0)
}

#[test]
fn ar1_stationary_variance() {
    let model = DiscreteLinearModel::scalar(0.9, 1.0).unwrap();
    let traj = simulate_discrete(&model, &Vector::zeros(1), 1_000_000 + 1000, &mut seeded(11)).unwrap();
    let v = variance(traj.states[1000..].iter().map(|s| s[0]));
    let expected = 1.0 / (1.0 - 0.81);
    assert!((v / expected - 1.0).abs() < 0.02, "{v} vs {expected}");
}

#[test]
fn stationary_cov_solves_lyapunov() {
    let a = from_row_major(2, 2, &[0.5, 0.2, -0.1, 0.7]).unwrap();
    let q = from_row_major(2, 2, &[1.0, 0.3, 0.3, 2.0]).unwrap();
    let model = DiscreteLinearModel::new(a.clone(), q.clone()).unwrap();
    let p = model.stationary_cov();
    let residual = &a * &p * a.transpose() + &q - &p;
    assert!(residual.amax() < 1e-10);
}

#[test]
fn ou_stationary_variance_under_euler_maruyama() {
    let model = ContinuousLinearModel::scalar(-1.0, 2f64.sqrt()).unwrap();
    let h = 1e-3;
    let mut rng = seeded(3);
    let mut x = Vector::zeros(1);
    for _ in 0..10_000 {
        x = model.step_euler_maruyama(&x, h, &mut rng).unwrap();
    }
    let steps = 40_000_000usize;
    let v = variance((0..steps).map(|_| {
        x = model.step_euler_maruyama(&x, h, &mut rng).unwrap();
        x[0]
    }));
    assert!((v - 1.0).abs() < 0.02, "{v}");
}

/// One-step covariance of `discretize` against many fine Euler-Maruyama
/// rollouts from the origin, coded independently of the library sampler.
#[test]
fn discretization_matches_fine_rollouts() {
    let drift = from_row_major(2, 2, &[-1.0, 0.5, -0.3, -2.0]).unwrap();
    let diffusion = from_row_major(2, 2, &[1.0, 0.3, 0.3, 0.8]).unwrap();
    let model = ContinuousLinearModel::new(drift.clone(), diffusion.clone()).unwrap();
    let h: f64 = 0.01;
    let inner: f64 = 1e-4;
    let micro = (h / inner).round() as usize;
    let d = model.discretize(h).unwrap();

    let rollouts = 1_000_000;
    let mut rng = ChaCha20Rng::seed_from_u64(99);
    let (a11, a12, a21, a22) = (drift[(0, 0)], drift[(0, 1)], drift[(1, 0)], drift[(1, 1)]);
    let (c11, c12, c22) = (diffusion[(0, 0)], diffusion[(0, 1)], diffusion[(1, 1)]);
    let sq = inner.sqrt();
    let mut acc = [0.0f64; 3];
    for _ in 0..rollouts {
        let (mut x, mut y) = (0.0f64, 0.0f64);
        for _ in 0..micro {
            let e1: f64 = StandardNormal.sample(&mut rng);
            let e2: f64 = StandardNormal.sample(&mut rng);
            let nx = x + (a11 * x + a12 * y) * inner + (c11 * e1 + c12 * e2) * sq;
            let ny = y + (a21 * x + a22 * y) * inner + (c12 * e1 + c22 * e2) * sq;
            x = nx;
            y = ny;
        }
        acc[0] += x * x;
        acc[1] += x * y;
        acc[2] += y * y;
    }
    let emp = [acc[0], acc[1], acc[2]].map(|s| s / rollouts as f64);
    let q = d.noise_cov();
    assert!((emp[0] / q[(0, 0)] - 1.0).abs() < 0.01, "{emp:?} vs {q}");
    assert!((emp[2] / q[(1, 1)] - 1.0).abs() < 0.01, "{emp:?} vs {q}");
    let scale = (q[(0, 0)] * q[(1, 1)]).sqrt();
    assert!((emp[1] - q[(0, 1)]).abs() / scale < 0.01, "{emp:?} vs {q}");
}

#[test]
fn simulation_is_bit_reproducible() {
    let model = DiscreteLinearModel::new(
        from_row_major(2, 2, &[0.5, 0.1, 0.0, 0.3]).unwrap(),
        Matrix::identity(2, 2),
    )
    .unwrap();
    let x0 = Vector::from_vec(vec![1.0, -1.0]);
    let a = simulate_discrete(&model, &x0, 500, &mut seeded(8)).unwrap();
    let b = simulate_discrete(&model, &x0, 500, &mut seeded(8)).unwrap();
    assert_eq!(a, b);
}

fn stable_drift() -> impl Strategy<Value = (Matrix, Matrix)> {
    (
        prop::collection::vec(-1.0f64..1.0, 4),
        prop::collection::vec(-1.0f64..1.0, 1),
        prop::collection::vec(0.2f64..1.5, 2),
        -1.0f64..1.0,
    )
        .prop_map(|(b, s, diag, off)| {
            let b = from_row_major(2, 2, &b).unwrap();
            let skew = from_row_major(2, 2, &[0.0, s[0], -s[0], 0.0]).unwrap();
            let drift = -(&b * b.transpose() + Matrix::identity(2, 2) * 0.1) + skew;
            let l = from_row_major(2, 2, &[diag[0], 0.0, off, diag[1]]).unwrap();
            let diffusion = &l * l.transpose();
            (drift, diffusion)
        })
}

proptest! {
    #![proptest_config(ProptestConfig {
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn discretization_composes((drift, diffusion) in stable_drift(), h1 in 0.01f64..1.0, h2 in 0.01f64..1.0) {
        let model = ContinuousLinearModel::new(drift, diffusion).unwrap();
        let d1 = model.discretize(h1).unwrap();
        let d2 = model.discretize(h2).unwrap();
        let d12 = model.discretize(h1 + h2).unwrap();
        let a = d2.transition() * d1.transition();
        let q = d2.transition() * d1.noise_cov() * d2.transition().transpose() + d2.noise_cov();
        prop_assert!((a - d12.transition()).amax() < 1e-10);
        prop_assert!((q - d12.noise_cov()).amax() < 1e-10);
    }

    #[test]
    fn noiseless_step_is_exact(a in prop::collection::vec(-0.45f64..0.45, 4), x in prop::collection::vec(-10.0f64..10.0, 2)) {
        let a = from_row_major(2, 2, &a).unwrap();
        let model = DiscreteLinearModel::new_degenerate(a.clone(), Matrix::zeros(2, 2)).unwrap();
        let x = Vector::from_vec(x);
        let next = model.step_discrete(&x, &mut seeded(0)).unwrap();
        prop_assert_eq!(next, &a * &x);
    }
}
