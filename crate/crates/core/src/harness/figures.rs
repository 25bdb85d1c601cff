//! Data series behind the numerical-example figures. Each bundle carries a
//! `manifest.csv` with the parameters, seed, radii and verdicts.

use std::str::FromStr;

use crate::config::preset;
use crate::error::{Error, Result};
use crate::etse::{collect_gaps, write_trajectories_csv, EtseLoop, TriggerConfig};
use crate::kalman::{self, collect_kf_gaps, run_etse_kf, KfEtseLoop, OutputModel};
use crate::linalg::Matrix;
use crate::linsys::DiscreteLinearModel;
use crate::rng::{self, derive_seed};
use crate::stopping::{self, StoppingSample};
use crate::triggers::{self, TriggerVerdict};

use super::output::{table, to_csv_string, CsvBundle, Manifest};
use super::run_experiment;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigureId {
    Fig2,
    Fig3,
    Fig4,
    Fig5,
    Fig6,
    Fig7,
    Fig8,
}

impl FigureId {
    pub const ALL: [FigureId; 7] = [
        FigureId::Fig2,
        FigureId::Fig3,
        FigureId::Fig4,
        FigureId::Fig5,
        FigureId::Fig6,
        FigureId::Fig7,
        FigureId::Fig8,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FigureId::Fig2 => "fig2",
            FigureId::Fig3 => "fig3",
            FigureId::Fig4 => "fig4",
            FigureId::Fig5 => "fig5",
            FigureId::Fig6 => "fig6",
            FigureId::Fig7 => "fig7",
            FigureId::Fig8 => "fig8",
        }
    }
}

impl FromStr for FigureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FigureId::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown figure id {s:?}")))
    }
}

/// Both sample-based triggers on one pair of samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub empirical_mean: f64,
    pub model_mean: f64,
    pub approx_mean: TriggerVerdict,
    pub ks: TriggerVerdict,
}

pub fn compare_samples(
    empirical: &StoppingSample,
    model: &StoppingSample,
    alpha: f64,
    tau_max: f64,
) -> Result<Comparison> {
    Ok(Comparison {
        empirical_mean: empirical.mean()?,
        model_mean: model.mean()?,
        approx_mean: triggers::approx_mean_trigger(empirical.values(), model.values(), alpha, tau_max)?,
        ks: triggers::ks_trigger(empirical.values(), model.values(), alpha)?,
    })
}

fn record_comparison(m: &mut Manifest, prefix: &str, c: &Comparison) {
    m.set(format!("{prefix}empirical_mean"), c.empirical_mean)
        .set(format!("{prefix}model_mean"), c.model_mean)
        .set(format!("{prefix}approx_mean_statistic"), c.approx_mean.statistic)
        .set(format!("{prefix}kappa_approx_mean"), c.approx_mean.kappa)
        .set(format!("{prefix}approx_mean_fired"), c.approx_mean.fired)
        .set(format!("{prefix}ks_statistic"), c.ks.statistic)
        .set(format!("{prefix}kappa_ks"), c.ks.kappa)
        .set(format!("{prefix}ks_fired"), c.ks.fired)
        .set(format!("{prefix}fired"), c.approx_mean.fired || c.ks.fired);
}

/// `t, F_model, F_empirical, lower, upper` at every point of the merged support.
fn cdf_table(empirical: &StoppingSample, model: &StoppingSample, kappa: f64) -> Result<String> {
    let fe = empirical.cdf()?;
    let fm = model.cdf()?;
    let mut support: Vec<f64> = fe.support().into_iter().chain(fm.support()).collect();
    support.sort_by(f64::total_cmp);
    support.dedup();
    table(
        &["t", "F_model", "F_empirical", "lower", "upper"],
        support.into_iter().map(|t| {
            let f = fm.eval(t);
            vec![
                t.to_string(),
                f.to_string(),
                fe.eval(t).to_string(),
                (f - kappa).max(0.0).to_string(),
                (f + kappa).min(1.0).to_string(),
            ]
        }),
    )
}

fn scalar(a: f64, q: f64) -> Result<DiscreteLinearModel> {
    DiscreteLinearModel::scalar(a, q)
}

/// Observed gaps of `plant` predicted with `model`, against Monte Carlo
/// stopping times of `model`.
fn distribution_figure(
    plant: &DiscreteLinearModel,
    model: &DiscreteLinearModel,
    cfg: &TriggerConfig,
    seed: u64,
) -> Result<CsvBundle> {
    let mut sim = EtseLoop::new(plant.clone(), model.clone(), cfg)?;
    let empirical = collect_gaps(&mut sim, cfg.n, &mut rng::stream(derive_seed(seed, 1), 0));
    let mc = stopping::sample_stopping_times(model, cfg.delta, cfg.tau_max, cfg.m, derive_seed(seed, 2))?;
    let cmp = compare_samples(&empirical, &mc, cfg.alpha, cfg.tau_max as f64)?;

    let mut b = CsvBundle::default();
    b.add("cdf.csv", cdf_table(&empirical, &mc, cmp.ks.kappa)?);
    b.add("empirical_tau.csv", to_csv_string(|w| empirical.write_csv(w))?);
    b.add(
        "means.csv",
        table(
            &["series", "mean", "lower", "upper"],
            [
                vec![
                    "model".into(),
                    cmp.model_mean.to_string(),
                    (cmp.model_mean - cmp.approx_mean.kappa).to_string(),
                    (cmp.model_mean + cmp.approx_mean.kappa).to_string(),
                ],
                vec![
                    "empirical".into(),
                    cmp.empirical_mean.to_string(),
                    String::new(),
                    String::new(),
                ],
            ],
        )?,
    );
    let mut m = Manifest::new();
    m.set("seed", seed)
        .set("plant_A", plant.transition()[(0, 0)])
        .set("plant_Q", plant.noise_cov()[(0, 0)])
        .set("model_A", model.transition()[(0, 0)])
        .set("model_Q", model.noise_cov()[(0, 0)])
        .set("delta", cfg.delta)
        .set("tau_max", cfg.tau_max)
        .set("n", cfg.n)
        .set("m", cfg.m)
        .set("alpha", cfg.alpha);
    record_comparison(&mut m, "", &cmp);
    b.add("manifest.csv", m.to_csv()?);
    Ok(b)
}

fn fig2(seed: u64) -> Result<CsvBundle> {
    let cfg = TriggerConfig::default();
    let plant = scalar(0.9, 1.0)?;
    let model = scalar(0.8, 1.0)?;
    let mut sim = EtseLoop::new(plant, model, &cfg)?;
    let mut rng = rng::stream(derive_seed(seed, 1), 0);
    let mut rows = vec![vec!["0".into(), "0".into(), "0".into(), "0".into(), "0".into()]];
    let mut events = Vec::new();
    while events.len() < 10 {
        let pre_reset = sim.model().predict(&sim.state().prediction);
        let ev = sim.step(&mut rng);
        let st = sim.state();
        rows.push(vec![
            sim.step_index().to_string(),
            st.true_state[0].to_string(),
            st.prediction[0].to_string(),
            (&st.true_state - &pre_reset).norm().to_string(),
            u8::from(ev.is_some()).to_string(),
        ]);
        events.extend(ev);
    }
    let mut b = CsvBundle::default();
    b.add(
        "trajectory.csv",
        table(&["step", "x", "x_pred", "error_before_reset", "event_flag"], rows)?,
    );
    b.add(
        "events.csv",
        table(
            &["index", "step", "gap", "censored"],
            events.iter().enumerate().map(|(i, e)| {
                vec![
                    (i + 1).to_string(),
                    e.step.to_string(),
                    e.gap.to_string(),
                    u8::from(e.censored).to_string(),
                ]
            }),
        )?,
    );
    let mut m = Manifest::new();
    m.set("seed", seed)
        .set("plant", "A=0.9 Q=1")
        .set("model", "A=0.8 Q=1")
        .set("delta", cfg.delta)
        .set("tau_max", cfg.tau_max)
        .set("events", events.len());
    b.add("manifest.csv", m.to_csv()?);
    Ok(b)
}

fn fig3(seed: u64) -> Result<CsvBundle> {
    let mut cfg = preset("detection")?;
    cfg.seed = seed;
    run_experiment(&cfg)?.bundle()
}

fn kalman_cfg() -> TriggerConfig {
    TriggerConfig {
        delta: 1.0,
        tau_max: 100,
        n: 5000,
        m: 5000,
        alpha: 0.05,
    }
}

fn fig7(seed: u64) -> Result<CsvBundle> {
    let cfg = kalman_cfg();
    let plant = OutputModel::pendulum(0.1, 0.1)?;
    let mut b = CsvBundle::default();
    let mut m = Manifest::new();
    m.set("seed", seed)
        .set("delta", cfg.delta)
        .set("tau_max", cfg.tau_max)
        .set("n", cfg.n)
        .set("m", cfg.m)
        .set("alpha", cfg.alpha)
        .set("burn_in", kalman::DEFAULT_BURN_IN)
        .set("plant_R", 0.1);
    let mut stats = Vec::new();
    for (label, r_model) in [("inaccurate", 0.5), ("exact", 0.1)] {
        let model = plant.with_r(Matrix::identity(2, 2) * r_model)?;
        let mut sim = KfEtseLoop::new(plant.clone(), model.clone(), &cfg, kalman::DEFAULT_BURN_IN)?;
        let label_seed = derive_seed(seed, (r_model * 1000.0) as u64);
        let empirical = collect_kf_gaps(&mut sim, cfg.n, &mut rng::stream(label_seed, 0));
        let mc = kalman::sample_stopping_times_kf(
            &model,
            cfg.delta,
            cfg.tau_max,
            cfg.m,
            derive_seed(label_seed, 2),
        )?;
        let cmp = compare_samples(&empirical, &mc, cfg.alpha, cfg.tau_max as f64)?;
        b.add(format!("cdf_{label}.csv"), cdf_table(&empirical, &mc, cmp.ks.kappa)?);
        for v in [cmp.approx_mean, cmp.ks] {
            stats.push(vec![
                label.to_string(),
                r_model.to_string(),
                v.kind.to_string(),
                v.statistic.to_string(),
                v.kappa.to_string(),
                u8::from(v.fired).to_string(),
                cmp.empirical_mean.to_string(),
                cmp.model_mean.to_string(),
            ]);
        }
        m.set(format!("{label}_model_R"), r_model);
        record_comparison(&mut m, &format!("{label}_"), &cmp);
    }
    b.add(
        "statistics.csv",
        table(
            &[
                "model",
                "model_R",
                "kind",
                "statistic",
                "kappa",
                "fired",
                "empirical_mean",
                "model_mean",
            ],
            stats,
        )?,
    );
    b.add("manifest.csv", m.to_csv()?);
    Ok(b)
}

/// Model measurement-noise levels for the tracking comparison.
pub const FIG8_MODEL_R: [f64; 3] = [0.1, 0.5, 10.0];
const FIG8_STEPS: usize = 150;

fn fig8(seed: u64) -> Result<CsvBundle> {
    let cfg = kalman_cfg();
    let plant = OutputModel::pendulum(0.1, 0.1)?;
    let mut b = CsvBundle::default();
    let mut m = Manifest::new();
    m.set("seed", seed)
        .set("steps", FIG8_STEPS)
        .set("delta", cfg.delta)
        .set("tau_max", cfg.tau_max);
    for r_model in FIG8_MODEL_R {
        let model = plant.with_r(Matrix::identity(2, 2) * r_model)?;
        // Same noise realization for every model quality.
        let mut rng = rng::stream(derive_seed(seed, 8), 0);
        let run = run_etse_kf(&plant, &model, &cfg, FIG8_STEPS, 0, &mut rng)?;
        b.add(
            format!("tracking_r{r_model}.csv"),
            to_csv_string(|w| {
                write_trajectories_csv(
                    w,
                    &[
                        ("x", &run.states),
                        ("xhat", &run.estimates),
                        ("xcheck", &run.predictions),
                    ],
                    &run.log,
                )
            })?,
        );
        m.set(format!("events_r{r_model}"), run.log.len());
    }
    b.add("manifest.csv", m.to_csv()?);
    Ok(b)
}

/// Data series for one figure.
pub fn reproduce(figure: FigureId, seed: u64) -> Result<CsvBundle> {
    let full = TriggerConfig::default();
    match figure {
        FigureId::Fig2 => fig2(seed),
        FigureId::Fig3 => fig3(seed),
        FigureId::Fig4 => distribution_figure(&scalar(0.9, 1.0)?, &scalar(0.8, 1.0)?, &full, seed),
        FigureId::Fig5 => distribution_figure(&scalar(0.9, 1.0)?, &scalar(0.9, 1.0)?, &full, seed),
        FigureId::Fig6 => {
            let cfg = TriggerConfig {
                n: 10_000,
                m: 10_000,
                ..full
            };
            distribution_figure(&scalar(0.9, 1.0)?, &scalar(0.5, 1.7 * 1.7)?, &cfg, seed)
        }
        FigureId::Fig7 => fig7(seed),
        FigureId::Fig8 => fig8(seed),
    }
}
