//! Closed-loop event-triggered learning experiments.
//!
//! The loop: the plant runs under the state trigger; each inter-communication
//! time enters the learning-trigger buffer; a full buffer is tested against
//! the model-based reference; a fired trigger runs learning, pushes the new
//! model to the predictor, regenerates the reference and clears the buffer.

mod figures;
mod output;

use rand::Rng;

pub use figures::{compare_samples, reproduce, Comparison, FigureId};
pub use output::{CsvBundle, Manifest};

use crate::config::{ExperimentConfig, LearningMode, Mode, ModelConfig};
use crate::error::{Error, Result};
use crate::etse::{CommEvent, EtseLoop};
use crate::kalman::{self, KfEtseLoop, OutputModel};
use crate::linsys::DiscreteLinearModel;
use crate::rng::{self, derive_seed};
use crate::stopping::{self, EmpiricalCdf, StoppingSample};
use crate::sysid;
use crate::triggers::{self, Reference, TriggerBuffer, TriggerKind, TriggerVerdict};

const SIM_LABEL: u64 = 1;
const REFERENCE_LABEL: u64 = 1000;
const LEARNING_LABEL: u64 = 2000;
const MAX_EPISODE_ATTEMPTS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub enum EventRecord {
    Communication {
        step: u64,
        gap: u64,
        censored: bool,
    },
    Evaluation {
        step: u64,
        model_version: usize,
        verdict: TriggerVerdict,
    },
    ModelUpdate {
        step: u64,
        model_version: usize,
        learning_transmissions: usize,
        reference_mean: f64,
    },
}

impl EventRecord {
    pub fn step(&self) -> u64 {
        match self {
            EventRecord::Communication { step, .. }
            | EventRecord::Evaluation { step, .. }
            | EventRecord::ModelUpdate { step, .. } => *step,
        }
    }
}

/// Ordered record of everything that happened in one experiment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventStream {
    pub records: Vec<EventRecord>,
}

impl EventStream {
    pub fn verdicts(&self) -> impl Iterator<Item = &TriggerVerdict> {
        self.records.iter().filter_map(|r| match r {
            EventRecord::Evaluation { verdict, .. } => Some(verdict),
            _ => None,
        })
    }

    pub fn model_updates(&self) -> usize {
        self.records
            .iter()
            .filter(|r| matches!(r, EventRecord::ModelUpdate { .. }))
            .count()
    }

    /// Step indices are nondecreasing and every model update directly follows
    /// a fired evaluation.
    pub fn is_well_formed(&self) -> bool {
        let ordered = self.records.windows(2).all(|w| w[0].step() <= w[1].step());
        let updates_justified = self.records.iter().enumerate().all(|(i, r)| match r {
            EventRecord::ModelUpdate { .. } => matches!(
                i.checked_sub(1).map(|j| &self.records[j]),
                Some(EventRecord::Evaluation { verdict, .. }) if verdict.fired
            ),
            _ => true,
        });
        ordered && updates_justified
    }

    pub fn to_csv(&self) -> Result<String> {
        let header = [
            "step",
            "record",
            "gap",
            "censored",
            "kind",
            "statistic",
            "kappa",
            "fired",
            "buffer_size",
            "mc_size",
            "alpha",
            "model_version",
            "learning_transmissions",
            "reference_mean",
        ];
        let rows = self.records.iter().map(|r| {
            let mut row = vec![String::new(); header.len()];
            row[0] = r.step().to_string();
            match r {
                EventRecord::Communication { gap, censored, .. } => {
                    row[1] = "communication".into();
                    row[2] = gap.to_string();
                    row[3] = u8::from(*censored).to_string();
                }
                EventRecord::Evaluation {
                    model_version,
                    verdict,
                    ..
                } => {
                    row[1] = "evaluation".into();
                    row[4] = verdict.kind.to_string();
                    row[5] = verdict.statistic.to_string();
                    row[6] = verdict.kappa.to_string();
                    row[7] = u8::from(verdict.fired).to_string();
                    row[8] = verdict.buffer_size.to_string();
                    row[9] = verdict.mc_size.to_string();
                    row[10] = verdict.alpha.to_string();
                    row[11] = model_version.to_string();
                }
                EventRecord::ModelUpdate {
                    model_version,
                    learning_transmissions,
                    reference_mean,
                    ..
                } => {
                    row[1] = "model_update".into();
                    row[11] = model_version.to_string();
                    row[12] = learning_transmissions.to_string();
                    row[13] = reference_mean.to_string();
                }
            }
            row
        });
        output::table(&header, rows)
    }
}

/// Buffer mean against the model-based band after each communication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunningMeanPoint {
    pub step: u64,
    pub buffer_len: usize,
    pub buffer_mean: f64,
    pub reference_mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub model_version: usize,
}

/// Communication statistics while one model version was in use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub model_version: usize,
    pub start_step: u64,
    pub gaps: usize,
    pub gap_sum: f64,
    pub reference_mean: f64,
}

impl Segment {
    pub fn mean_gap(&self) -> Option<f64> {
        (self.gaps > 0).then(|| self.gap_sum / self.gaps as f64)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CommCounts {
    pub state_trigger_events: usize,
    pub forced_events: usize,
    pub receiver_resets: usize,
    pub evaluations: usize,
    pub fires: usize,
    pub model_updates: usize,
    /// States sent during learning episodes.
    pub learning_transmissions: usize,
    /// Matrix entries sent when pushing new models (`A` and `Q`).
    pub model_values_sent: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub events: EventStream,
    pub running_mean: Vec<RunningMeanPoint>,
    pub segments: Vec<Segment>,
    pub counts: CommCounts,
    pub final_model: ModelConfig,
    pub steps_run: u64,
}

impl ExperimentOutcome {
    pub fn manifest(&self) -> Manifest {
        let cfg = &self.config;
        let c = &self.counts;
        let mut m = Manifest::new();
        m.set("name", &cfg.name)
            .set("mode", format!("{:?}", cfg.mode))
            .set("seed", cfg.seed)
            .set("steps_run", self.steps_run)
            .set("trigger", cfg.trigger)
            .set("buffer_policy", format!("{:?}", cfg.buffer_policy))
            .set("learning", format!("{:?}", cfg.learning))
            .set("delta", cfg.delta)
            .set("tau_max", cfg.tau_max)
            .set("n", cfg.n)
            .set("m", cfg.m)
            .set("alpha", cfg.alpha)
            .set("state_trigger_events", c.state_trigger_events)
            .set("forced_events", c.forced_events)
            .set("receiver_resets", c.receiver_resets)
            .set("evaluations", c.evaluations)
            .set("fires", c.fires)
            .set("model_updates", c.model_updates)
            .set("learning_transmissions", c.learning_transmissions)
            .set("model_values_sent", c.model_values_sent);
        for (i, v) in self.events.verdicts().enumerate() {
            m.set(format!("verdict_{i}"), format!(
                "{} statistic={} kappa={} fired={}",
                v.kind, v.statistic, v.kappa, v.fired
            ));
        }
        for s in &self.segments {
            m.set(
                format!("segment_{}_mean_gap", s.model_version),
                s.mean_gap().map_or("nan".into(), |g| g.to_string()),
            );
            m.set(format!("segment_{}_reference_mean", s.model_version), s.reference_mean);
        }
        m.set(
            "final_model",
            self.final_model
                .to_toml()
                .unwrap_or_default()
                .replace('\n', "; "),
        );
        m
    }

    pub fn bundle(&self) -> Result<CsvBundle> {
        let mut b = CsvBundle::default();
        b.add("events.csv", self.events.to_csv()?);
        b.add(
            "running_mean.csv",
            output::table(
                &[
                    "step",
                    "buffer_len",
                    "buffer_mean",
                    "reference_mean",
                    "lower",
                    "upper",
                    "model_version",
                ],
                self.running_mean.iter().map(|p| {
                    vec![
                        p.step.to_string(),
                        p.buffer_len.to_string(),
                        p.buffer_mean.to_string(),
                        p.reference_mean.to_string(),
                        p.lower.to_string(),
                        p.upper.to_string(),
                        p.model_version.to_string(),
                    ]
                }),
            )?,
        );
        b.add(
            "segments.csv",
            output::table(
                &["model_version", "start_step", "gaps", "mean_gap", "reference_mean"],
                self.segments.iter().map(|s| {
                    vec![
                        s.model_version.to_string(),
                        s.start_step.to_string(),
                        s.gaps.to_string(),
                        s.mean_gap().map_or("nan".into(), |g| g.to_string()),
                        s.reference_mean.to_string(),
                    ]
                }),
            )?,
        );
        b.add("manifest.csv", self.manifest().to_csv()?);
        Ok(b)
    }
}

enum Simulator {
    Full(EtseLoop),
    Kalman(KfEtseLoop),
}

impl Simulator {
    fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Option<CommEvent> {
        match self {
            Simulator::Full(s) => s.step(rng),
            Simulator::Kalman(s) => s.step(rng),
        }
    }

    fn step_index(&self) -> u64 {
        match self {
            Simulator::Full(s) => s.step_index(),
            Simulator::Kalman(s) => s.step_index(),
        }
    }
}

#[derive(Clone)]
enum PlantModel {
    Full(DiscreteLinearModel),
    Kalman(OutputModel),
}

impl PlantModel {
    fn dim(&self) -> usize {
        match self {
            PlantModel::Full(m) => m.dim(),
            PlantModel::Kalman(m) => m.dim(),
        }
    }

    fn sample(&self, cfg: &ExperimentConfig, m: usize, seed: u64) -> Result<StoppingSample> {
        match self {
            PlantModel::Full(model) => {
                stopping::sample_stopping_times(model, cfg.delta, cfg.tau_max, m, seed)
            }
            PlantModel::Kalman(model) => {
                kalman::sample_stopping_times_kf(model, cfg.delta, cfg.tau_max, m, seed)
            }
        }
    }

    fn to_config(&self) -> ModelConfig {
        match self {
            PlantModel::Full(m) => ModelConfig::from_discrete(m),
            PlantModel::Kalman(m) => ModelConfig::from_output(m),
        }
    }
}

/// Model-induced quantities the buffer is tested against.
struct ReferenceData {
    sample: Option<StoppingSample>,
    expected: Option<f64>,
    cdf: Option<EmpiricalCdf>,
    mean: f64,
    band: f64,
}

impl ReferenceData {
    fn build(cfg: &ExperimentConfig, model: &PlantModel, version: usize) -> Result<Self> {
        let seed = derive_seed(cfg.seed, REFERENCE_LABEL + version as u64);
        let tau_max = cfg.tau_max as f64;
        match cfg.trigger {
            TriggerKind::ApproxMean | TriggerKind::TwoSampleKs => {
                let sample = model.sample(cfg, cfg.m, seed)?;
                let mean = sample.mean()?;
                Ok(Self {
                    band: triggers::kappa_approx_mean(cfg.alpha, cfg.n, cfg.m, tau_max)?,
                    sample: Some(sample),
                    expected: None,
                    cdf: None,
                    mean,
                })
            }
            TriggerKind::ExactMean => {
                let expected = match (version, cfg.expected_tau) {
                    (0, Some(e)) => e,
                    _ => model.sample(cfg, cfg.surrogate_m, seed)?.mean()?,
                };
                Ok(Self {
                    band: triggers::kappa_exact_mean(cfg.alpha, cfg.n, tau_max)?,
                    sample: None,
                    expected: Some(expected),
                    cdf: None,
                    mean: expected,
                })
            }
            TriggerKind::ExactCdf => {
                let surrogate = model.sample(cfg, cfg.surrogate_m, seed)?;
                Ok(Self {
                    band: triggers::kappa_exact_mean(cfg.alpha, cfg.n, tau_max)?,
                    mean: surrogate.mean()?,
                    cdf: Some(surrogate.cdf()?),
                    sample: None,
                    expected: None,
                })
            }
        }
    }

    fn reference(&self) -> Reference<'_> {
        if let Some(s) = &self.sample {
            Reference::Sample(s)
        } else if let Some(e) = self.expected {
            Reference::Expected(e)
        } else {
            Reference::Distribution(self.cdf.as_ref().expect("reference has a cdf"))
        }
    }
}

/// Runs the configured experiment to completion.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let trigger_cfg = cfg.trigger_config();
    let (plant, mut model, mut sim) = match cfg.mode {
        Mode::FullState => {
            let plant = cfg.plant.discrete()?;
            let model = cfg.model.discrete()?;
            let sim = EtseLoop::new(plant.clone(), model.clone(), &trigger_cfg)?;
            (PlantModel::Full(plant), PlantModel::Full(model), Simulator::Full(sim))
        }
        Mode::Kalman => {
            let plant = cfg.plant.output()?;
            let model = cfg.model.output()?;
            let sim = KfEtseLoop::new(plant.clone(), model.clone(), &trigger_cfg, cfg.burn_in)?;
            (PlantModel::Kalman(plant), PlantModel::Kalman(model), Simulator::Kalman(sim))
        }
    };

    let mut sim_rng = rng::stream(derive_seed(cfg.seed, SIM_LABEL), 0);
    let mut version = 0usize;
    let mut reference = ReferenceData::build(cfg, &model, version)?;
    let mut buffer = TriggerBuffer::new(cfg.n, cfg.buffer_policy)?;
    let mut events = EventStream::default();
    let mut running_mean = Vec::new();
    let mut counts = CommCounts::default();
    let mut segments = vec![Segment {
        model_version: 0,
        start_step: 0,
        gaps: 0,
        gap_sum: 0.0,
        reference_mean: reference.mean,
    }];

    while sim.step_index() < cfg.steps {
        let Some(ev) = sim.step(&mut sim_rng) else {
            continue;
        };
        counts.receiver_resets += 1;
        if ev.censored {
            counts.forced_events += 1;
        } else {
            counts.state_trigger_events += 1;
        }
        events.records.push(EventRecord::Communication {
            step: ev.step,
            gap: ev.gap,
            censored: ev.censored,
        });
        let seg = segments.last_mut().expect("at least one segment");
        seg.gaps += 1;
        seg.gap_sum += ev.gap as f64;

        let ready = buffer.push(ev.gap as f64);
        running_mean.push(RunningMeanPoint {
            step: ev.step,
            buffer_len: buffer.len(),
            buffer_mean: buffer.mean().unwrap_or(f64::NAN),
            reference_mean: reference.mean,
            lower: reference.mean - reference.band,
            upper: reference.mean + reference.band,
            model_version: version,
        });
        if !ready {
            continue;
        }

        let verdict = buffer.evaluate(
            cfg.trigger,
            reference.reference(),
            cfg.m,
            cfg.alpha,
            cfg.tau_max as f64,
        )?;
        counts.evaluations += 1;
        events.records.push(EventRecord::Evaluation {
            step: ev.step,
            model_version: version,
            verdict,
        });

        if verdict.fired {
            counts.fires += 1;
            let (learned, transmissions) = learn(cfg, &plant, &sim, version)?;
            version += 1;
            match (&mut sim, &learned) {
                (Simulator::Full(s), PlantModel::Full(m)) => s.set_model(m.clone())?,
                (Simulator::Kalman(s), PlantModel::Kalman(m)) => s.set_model(m.clone())?,
                _ => unreachable!("learning preserves the model kind"),
            }
            model = learned;
            reference = ReferenceData::build(cfg, &model, version)?;
            buffer.clear();
            counts.model_updates += 1;
            counts.learning_transmissions += transmissions;
            counts.model_values_sent += 2 * model.dim() * model.dim();
            events.records.push(EventRecord::ModelUpdate {
                step: ev.step,
                model_version: version,
                learning_transmissions: transmissions,
                reference_mean: reference.mean,
            });
            segments.push(Segment {
                model_version: version,
                start_step: ev.step,
                gaps: 0,
                gap_sum: 0.0,
                reference_mean: reference.mean,
            });
        }

        if cfg.max_evaluations.is_some_and(|max| counts.evaluations >= max) {
            break;
        }
    }

    Ok(ExperimentOutcome {
        config: cfg.clone(),
        events,
        running_mean,
        segments,
        counts,
        final_model: model.to_config(),
        steps_run: sim.step_index(),
    })
}

fn learn(
    cfg: &ExperimentConfig,
    plant: &PlantModel,
    sim: &Simulator,
    version: usize,
) -> Result<(PlantModel, usize)> {
    match (cfg.learning, plant, sim) {
        (LearningMode::Oracle, _, _) => Ok((plant.clone(), 0)),
        (LearningMode::LeastSquares, PlantModel::Full(p), Simulator::Full(s)) => {
            let mut rng = rng::stream(derive_seed(cfg.seed, LEARNING_LABEL + version as u64), 0);
            let mut length = cfg.episode_length;
            let mut sent = 0;
            let mut last_err = None;
            for _ in 0..MAX_EPISODE_ATTEMPTS {
                let data = sysid::learning_episode(p, &s.state().true_state, length, &mut rng)?;
                sent += length;
                match sysid::identify_discrete(&data) {
                    Ok(m) => return Ok((PlantModel::Full(m), sent)),
                    Err(e @ (Error::Unstable(_) | Error::RankDeficient)) => {
                        last_err = Some(e);
                        length *= 2;
                    }
                    Err(e) => return Err(e),
                }
            }
            Err(last_err.expect("at least one attempt"))
        }
        _ => Err(Error::Config(
            "least-squares learning is only available in full_state mode".into(),
        )),
    }
}

/// Summary of a standalone stopping-time sample.
#[derive(Debug, Clone)]
pub struct TauSummary {
    pub sample: StoppingSample,
    pub mean: f64,
    pub std_dev: f64,
    pub standard_error: f64,
    pub censored_fraction: f64,
    pub cdf: EmpiricalCdf,
}

impl TauSummary {
    pub fn from_sample(sample: StoppingSample) -> Result<Self> {
        Ok(Self {
            mean: sample.mean()?,
            std_dev: sample.std_dev()?,
            standard_error: sample.standard_error()?,
            censored_fraction: sample.censored_fraction(),
            cdf: sample.cdf()?,
            sample,
        })
    }

    pub fn manifest(&self) -> Manifest {
        let mut m = Manifest::new();
        m.set("m", self.sample.len())
            .set("mean", self.mean)
            .set("std_dev", self.std_dev)
            .set("standard_error", self.standard_error)
            .set("censored_fraction", self.censored_fraction);
        m
    }
}

/// Monte Carlo stopping times of a model document. Documents with `C` and `R`
/// are sampled through the Kalman innovation form.
pub fn sample_tau(
    model: &ModelConfig,
    delta: f64,
    tau_max: u64,
    m: usize,
    seed: u64,
) -> Result<TauSummary> {
    let sample = if model.c.is_some() {
        kalman::sample_stopping_times_kf(&model.output()?, delta, tau_max, m, seed)?
    } else {
        stopping::sample_stopping_times(&model.discrete()?, delta, tau_max, m, seed)?
    };
    TauSummary::from_sample(sample)
}
