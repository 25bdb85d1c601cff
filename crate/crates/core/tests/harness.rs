use etl_core::config::{apply_override, parse_toml, preset, preset_text, ExperimentConfig, ModelConfig};
use etl_core::harness::{reproduce, run_experiment, sample_tau, EventRecord, FigureId};

fn cfg_with(name: &str, overrides: &[String]) -> ExperimentConfig {
    let mut doc = parse_toml(preset_text(name).unwrap()).unwrap();
    for o in overrides {
        apply_override(&mut doc, o).unwrap();
    }
    ExperimentConfig::from_value(doc).unwrap()
}

#[test]
fn matched_model_rarely_fires() {
    let out = run_experiment(&preset("matched").unwrap()).unwrap();
    let c = out.counts;
    let e = c.evaluations as f64;
    assert!(e > 100.0);
    let bound = 0.05 * e + 3.0 * (e * 0.05 * 0.95).sqrt();
    assert!((c.fires as f64) <= bound, "{} fires in {e}", c.fires);
    assert_eq!(c.model_updates, c.fires);
    assert_eq!(c.state_trigger_events + c.forced_events, c.receiver_resets);
    assert!(out.events.is_well_formed());
}

#[test]
fn kalman_update_increases_communication() {
    let out = run_experiment(&preset("kalman").unwrap()).unwrap();
    let verdicts: Vec<_> = out.events.verdicts().collect();
    assert!(verdicts[0].fired);
    assert!(out.counts.model_updates >= 1);
    let pre = out.segments[0].mean_gap().unwrap();
    let post = out.segments[1].mean_gap().unwrap();
    assert!(post < pre, "{pre} -> {post}");
}

#[test]
fn learned_model_stops_triggers() {
    let seeds = 20u64;
    let mut quiet = 0;
    for seed in 0..seeds {
        let cfg = cfg_with(
            "least_squares",
            &[format!("seed={seed}"), "max_evaluations=6".into()],
        );
        let out = run_experiment(&cfg).unwrap();
        let verdicts: Vec<_> = out.events.verdicts().collect();
        assert!(verdicts[0].fired, "seed {seed}");
        assert!(out.counts.learning_transmissions >= 100_000);
        if verdicts[1..].iter().all(|v| !v.fired) {
            quiet += 1;
        }
    }
    assert!(quiet as f64 >= 0.95 * seeds as f64, "{quiet}/{seeds}");
}

#[test]
fn updates_follow_fired_verdicts() {
    let out = run_experiment(&preset("detection").unwrap()).unwrap();
    let records = &out.events.records;
    for (i, r) in records.iter().enumerate() {
        if let EventRecord::ModelUpdate { step, .. } = r {
            let fired_before = records[..i]
                .iter()
                .rev()
                .find_map(|r| match r {
                    EventRecord::Evaluation { verdict, .. } => Some(verdict.fired),
                    _ => None,
                })
                .unwrap();
            assert!(fired_before, "update at {step} without a fired verdict");
        }
    }
    let steps: Vec<u64> = records.iter().map(EventRecord::step).collect();
    assert!(steps.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn experiment_bit_reproducible_and_seed_sensitive() {
    let cfg = cfg_with("detection", &["max_evaluations=3".into()]);
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a.events, b.events);
    assert_eq!(a.bundle().unwrap().files, b.bundle().unwrap().files);
    let c = run_experiment(&cfg_with("detection", &["max_evaluations=3".into(), "seed=2".into()])).unwrap();
    assert_ne!(a.events, c.events);
}

#[test]
fn sample_tau_seeds_agree_within_clt() {
    let model = ModelConfig::scalar(0.8, 1.0);
    let a = sample_tau(&model, 3.0, 100, 100_000, 1).unwrap();
    let b = sample_tau(&model, 3.0, 100, 100_000, 2).unwrap();
    let se = a.standard_error.hypot(b.standard_error);
    assert!((a.mean - b.mean).abs() < 3.0 * se);
    assert!((a.mean - 28.6).abs() < 0.5);
}

#[test]
fn every_figure_has_manifest() {
    for fig in [FigureId::Fig2, FigureId::Fig5, FigureId::Fig7] {
        let b = reproduce(fig, 3).unwrap();
        let manifest = b.get("manifest.csv").unwrap();
        assert!(manifest.starts_with("key,value"), "{fig:?}");
        assert!(manifest.contains("seed,3"), "{fig:?}");
    }
}

#[test]
fn fig5_matched_model_does_not_fire() {
    let b = reproduce(FigureId::Fig5, 1).unwrap();
    let m = b.get("manifest.csv").unwrap();
    assert!(m.contains("approx_mean_fired,false"));
}

#[test]
fn fig7_detects_inaccurate_model() {
    let b = reproduce(FigureId::Fig7, 1).unwrap();
    let m = b.get("manifest.csv").unwrap();
    assert!(m.contains("inaccurate_ks_fired,true"), "{m}");
    assert!(m.contains("exact_ks_fired,false"), "{m}");
}
