use etl_core::linsys::DiscreteLinearModel;
use etl_core::stopping::{sample_stopping_times, FnCdf};
use etl_core::triggers::{
    approx_mean_trigger, dkw_bound, exact_cdf_trigger, hoeffding_bound, kappa_approx_mean, kappa_exact_cdf,
    kappa_exact_mean, kappa_ks, ks_trigger, one_sample_sup_distance, two_sample_ks_statistic,
};
use proptest::prelude::*;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

/// `|F_n(t) − G_m(t)|` maximized over an evenly spaced grid.
fn grid_ks(a: &[f64], b: &[f64], lo: f64, hi: f64, points: usize) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j) = (0, 0);
    let mut sup = 0.0f64;
    for k in 0..points {
        let t = lo + (hi - lo) * k as f64 / (points - 1) as f64;
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        sup = sup.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    sup
}

proptest! {
    #![proptest_config(config(256))]

    #[test]
    fn kappas_decrease_in_sample_sizes(alpha in 0.001f64..0.999, n in 1usize..100_000, m in 1usize..100_000, tau in 1.0f64..1000.0) {
        prop_assert!(kappa_exact_mean(alpha, n + 1, tau).unwrap() < kappa_exact_mean(alpha, n, tau).unwrap());
        prop_assert!(kappa_exact_cdf(alpha, n + 1).unwrap() < kappa_exact_cdf(alpha, n).unwrap());
        prop_assert!(kappa_approx_mean(alpha, n + 1, m, tau).unwrap() < kappa_approx_mean(alpha, n, m, tau).unwrap());
        prop_assert!(kappa_approx_mean(alpha, n, m + 1, tau).unwrap() < kappa_approx_mean(alpha, n, m, tau).unwrap());
        prop_assert!(kappa_ks(alpha, n + 1, m).unwrap() < kappa_ks(alpha, n, m).unwrap());
        prop_assert!(kappa_ks(alpha, n, m + 1).unwrap() < kappa_ks(alpha, n, m).unwrap());
    }

    #[test]
    fn kappas_grow_as_alpha_shrinks(alpha in 0.002f64..0.999, n in 1usize..100_000, m in 1usize..100_000) {
        let lower = alpha * 0.5;
        prop_assert!(kappa_exact_mean(lower, n, 100.0).unwrap() > kappa_exact_mean(alpha, n, 100.0).unwrap());
        prop_assert!(kappa_exact_cdf(lower, n).unwrap() > kappa_exact_cdf(alpha, n).unwrap());
        prop_assert!(kappa_approx_mean(lower, n, m, 100.0).unwrap() > kappa_approx_mean(alpha, n, m, 100.0).unwrap());
        prop_assert!(kappa_ks(lower, n, m).unwrap() > kappa_ks(alpha, n, m).unwrap());
    }

    #[test]
    fn approx_radius_dominates_exact(alpha in 0.001f64..0.999, n in 1usize..100_000, m in 1usize..100_000, tau in 1.0f64..1000.0) {
        prop_assert!(kappa_approx_mean(alpha, n, m, tau).unwrap() > kappa_exact_mean(alpha, n, tau).unwrap());
        prop_assert!(kappa_ks(alpha, n, m).unwrap() > kappa_exact_cdf(alpha, n).unwrap());
        let ratio = kappa_exact_mean(alpha, n, tau).unwrap() / kappa_exact_cdf(alpha, n).unwrap();
        prop_assert!((ratio / tau - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bounds_invert_radii(alpha in 0.001f64..0.999, n in 1usize..100_000, tau in 1.0f64..1000.0) {
        let k = kappa_exact_mean(alpha, n, tau).unwrap();
        prop_assert!((hoeffding_bound(k, n, tau) / alpha - 1.0).abs() < 1e-12);
        let k = kappa_exact_cdf(alpha, n).unwrap();
        prop_assert!((dkw_bound(k, n) / alpha - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn ks_matches_dense_grid(
        a in prop::collection::vec(1u32..=100, 1..400),
        b in prop::collection::vec(1u32..=100, 1..400),
    ) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        let exact = two_sample_ks_statistic(&a, &b).unwrap();
        let grid = grid_ks(&a, &b, 0.0, 101.0, 1_000_000);
        prop_assert!((exact - grid).abs() < 1e-12, "{} vs {}", exact, grid);
    }

    #[test]
    fn verdicts_ignore_buffer_order(
        a in prop::collection::vec(1u32..=100, 2..300),
        b in prop::collection::vec(1u32..=100, 1..300),
        shift in 1usize..1000,
    ) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        let mut p = a.clone();
        p.rotate_left(shift % a.len());
        p.reverse();
        let f = FnCdf(|t: f64| (t / 100.0).clamp(0.0, 1.0));
        prop_assert_eq!(ks_trigger(&a, &b, 0.05).unwrap(), ks_trigger(&p, &b, 0.05).unwrap());
        let x = approx_mean_trigger(&a, &b, 0.05, 100.0).unwrap();
        let y = approx_mean_trigger(&p, &b, 0.05, 100.0).unwrap();
        prop_assert!((x.statistic - y.statistic).abs() < 1e-9 && x.fired == y.fired);
        prop_assert_eq!(exact_cdf_trigger(&a, &f, 0.05).unwrap(), exact_cdf_trigger(&p, &f, 0.05).unwrap());
    }

    /// The sample triggers only see ordered values: continuous-time samples
    /// `k·h` give the same KS verdict as their step counts.
    #[test]
    fn ks_invariant_under_time_scaling(
        a in prop::collection::vec(1u32..=100, 1..300),
        b in prop::collection::vec(1u32..=100, 1..300),
        h in 1e-4f64..1.0,
    ) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        let ah: Vec<f64> = a.iter().map(|v| v * h).collect();
        let bh: Vec<f64> = b.iter().map(|v| v * h).collect();
        prop_assert_eq!(ks_trigger(&a, &b, 0.05).unwrap(), ks_trigger(&ah, &bh, 0.05).unwrap());
    }

    #[test]
    fn one_sample_sup_against_dense_grid(a in prop::collection::vec(0.0f64..2.0, 1..200)) {
        let uniform = FnCdf(|t: f64| (t / 2.0).clamp(0.0, 1.0));
        let exact = one_sample_sup_distance(&a, &uniform).unwrap();
        let mut sorted = a.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mut grid = 0.0f64;
        let mut i = 0;
        for k in 0..=200_000 {
            let t = 2.0 * k as f64 / 200_000.0;
            while i < sorted.len() && sorted[i] <= t {
                i += 1;
            }
            grid = grid.max((i as f64 / n - t / 2.0).abs());
        }
        // The grid can only miss part of a gap narrower than its spacing.
        prop_assert!(grid <= exact + 1e-12);
        prop_assert!(exact - grid <= 1e-5 + 1e-12, "{} vs {}", exact, grid);
    }
}

#[test]
fn ks_trigger_rarely_fires_on_same_distribution() {
    let model = DiscreteLinearModel::scalar(0.9, 1.0).unwrap();
    let trials = 1000;
    let fires = (0..trials)
        .filter(|&t| {
            let buf = sample_stopping_times(&model, 3.0, 100, 300, 2 * t).unwrap();
            let mc = sample_stopping_times(&model, 3.0, 100, 2000, 2 * t + 1).unwrap();
            ks_trigger(buf.values(), mc.values(), 0.05).unwrap().fired
        })
        .count();
    let bound = 0.05 + 3.0 * (0.05f64 * 0.95 / trials as f64).sqrt();
    assert!((fires as f64 / trials as f64) <= bound, "{fires}");
}
