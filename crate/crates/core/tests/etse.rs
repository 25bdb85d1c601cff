use etl_core::etse::{collect_gaps, intercomm_times, run_etse, EtseLoop, TriggerConfig};
use etl_core::linsys::DiscreteLinearModel;
use etl_core::rng::{seeded, stream};
use etl_core::stopping::sample_stopping_times;
use etl_core::triggers::{kappa_ks, two_sample_ks_statistic};
use etl_core::Vector;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

fn scalar(a: f64, q: f64) -> DiscreteLinearModel {
    DiscreteLinearModel::scalar(a, q).unwrap()
}

/// Straight-line scalar sender/receiver loop, sharing nothing with the
/// library beyond the parameters.
fn reference_gaps(a: f64, a_hat: f64, sigma: f64, delta: f64, tau_max: u64, count: usize, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).unwrap();
    let (mut x, mut xp) = (0.0f64, 0.0f64);
    let mut since = 0u64;
    let mut gaps = Vec::with_capacity(count);
    while gaps.len() < count {
        x = a * x + noise.sample(&mut rng);
        xp *= a_hat;
        since += 1;
        if (x - xp).abs() >= delta || since == tau_max {
            gaps.push(since);
            xp = x;
            since = 0;
        }
    }
    gaps
}

#[test]
fn mean_gap_matches_reference_simulator() {
    let cfg = TriggerConfig::default();
    let mut sim = EtseLoop::new(scalar(0.9, 1.0), scalar(0.8, 1.0), &cfg).unwrap();
    let ours = collect_gaps(&mut sim, 20_000, &mut seeded(4)).mean().unwrap();
    let gaps = reference_gaps(0.9, 0.8, 1.0, 3.0, 100, 20_000, 77);
    let theirs = gaps.iter().sum::<u64>() as f64 / gaps.len() as f64;
    assert!((ours / theirs - 1.0).abs() < 0.05, "{ours} vs {theirs}");
}

#[test]
fn error_stays_below_threshold_between_events() {
    let cfg = TriggerConfig::default();
    let run = run_etse(&scalar(0.9, 1.0), &scalar(0.9, 1.0), &cfg, 50_000, &mut seeded(2)).unwrap();
    let events: std::collections::HashSet<u64> = run.log.event_steps.iter().copied().collect();
    for (k, (x, p)) in run.states.states.iter().zip(&run.predictions.states).enumerate() {
        let err = (x - p).norm();
        if events.contains(&(k as u64)) {
            assert_eq!(err, 0.0);
        } else {
            assert!(err < 3.0, "step {k}: {err}");
        }
    }
}

#[test]
fn gaps_are_bounded_and_censoring_consistent() {
    let cfg = TriggerConfig {
        tau_max: 20,
        ..TriggerConfig::default()
    };
    let run = run_etse(&scalar(0.9, 1.0), &scalar(0.5, 1.0), &cfg, 100_000, &mut seeded(6)).unwrap();
    let sample = intercomm_times(&run.log).unwrap();
    assert!(sample.censored().iter().any(|&c| c));
    for (&v, &c) in sample.values().iter().zip(sample.censored()) {
        assert!((1.0..=20.0).contains(&v));
        if c {
            assert_eq!(v, 20.0);
        }
    }
    assert_eq!(sample.len(), run.log.len());
}

#[test]
fn noiseless_matched_loop_only_forced_events() {
    let cfg = TriggerConfig::default();
    let plant = DiscreteLinearModel::new_degenerate(
        etl_core::Matrix::from_element(1, 1, 0.9),
        etl_core::Matrix::zeros(1, 1),
    )
    .unwrap();
    let mut sim = EtseLoop::with_initial_state(plant, scalar(0.9, 1.0), &cfg, Vector::from_element(1, 5.0)).unwrap();
    let mut rng = seeded(0);
    let events: Vec<_> = (0..1000).filter_map(|_| sim.step(&mut rng)).collect();
    assert_eq!(events.len(), 10);
    assert!(events.iter().all(|e| e.gap == 100 && e.censored));
}

fn lag1_autocorrelation(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    let cov: f64 = xs.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
    cov / var
}

#[test]
fn gaps_are_uncorrelated() {
    let cfg = TriggerConfig::default();
    for (a, q, seed) in [(0.9, 1.0, 1), (0.8, 1.0, 2), (0.5, 2.89, 3)] {
        let model = scalar(a, q);
        let mut sim = EtseLoop::new(model.clone(), model, &cfg).unwrap();
        let gaps = collect_gaps(&mut sim, 20_000, &mut seeded(seed));
        let r = lag1_autocorrelation(gaps.values());
        assert!(r.abs() < 3.0 / (gaps.len() as f64).sqrt(), "a={a}: {r}");
    }
}

/// With a wrong model the prediction error carries `(A − Â)x`, and `x` is
/// not reset at events, so consecutive gaps share the plant's slow state.
#[test]
fn mismatched_gaps_are_correlated() {
    let cfg = TriggerConfig::default();
    let mut sim = EtseLoop::new(scalar(0.9, 1.0), scalar(0.5, 1.0), &cfg).unwrap();
    let gaps = collect_gaps(&mut sim, 20_000, &mut seeded(3));
    assert!(lag1_autocorrelation(gaps.values()) > 3.0 / (20_000f64).sqrt());
}

#[test]
fn matched_gaps_follow_monte_carlo_distribution() {
    let cfg = TriggerConfig::default();
    let model = scalar(0.9, 1.0);
    let mut sim = EtseLoop::new(model.clone(), model.clone(), &cfg).unwrap();
    let gaps = collect_gaps(&mut sim, 10_000, &mut stream(5, 0));
    let mc = sample_stopping_times(&model, 3.0, 100, 10_000, 6).unwrap();
    let d = two_sample_ks_statistic(gaps.values(), mc.values()).unwrap();
    assert!(d < kappa_ks(0.01, 10_000, 10_000).unwrap(), "{d}");
}

#[test]
fn two_dimensional_loop_uses_euclidean_norm() {
    let a = etl_core::linalg::from_row_major(2, 2, &[0.9, 0.05, 0.0, 0.7]).unwrap();
    let plant = DiscreteLinearModel::new(a.clone(), etl_core::Matrix::identity(2, 2)).unwrap();
    let cfg = TriggerConfig::default();
    let run = run_etse(&plant, &plant, &cfg, 20_000, &mut seeded(9)).unwrap();
    let triggered: std::collections::HashSet<u64> = run
        .log
        .event_steps
        .iter()
        .zip(&run.log.censored)
        .filter(|(_, &c)| !c)
        .map(|(&s, _)| s)
        .collect();
    // Pre-reset error at each step, rebuilt from the previous prediction.
    for k in 1..run.states.len() {
        let pre = &a * &run.predictions.states[k - 1];
        let err = (&run.states.states[k] - pre).norm();
        assert_eq!(err >= 3.0, triggered.contains(&(k as u64)), "step {k}");
    }
}
