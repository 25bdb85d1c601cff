//! Event-triggered state estimation: the sender runs the plant, the receiver
//! runs open-loop model predictions, and a communication resets the
//! prediction whenever the prediction error reaches `δ` (or the `τ_max` cap
//! forces one).

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::linsys::{DiscreteLinearModel, Trajectory};
use crate::stopping::{StoppingSample, TimeMode};

/// State-trigger threshold plus learning-trigger sizes and confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerConfig {
    pub delta: f64,
    pub tau_max: u64,
    /// Empirical buffer size.
    pub n: usize,
    /// Monte Carlo sample count.
    pub m: usize,
    pub alpha: f64,
}

impl TriggerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "delta must be positive, got {}",
                self.delta
            )));
        }
        if self.tau_max < 1 {
            return Err(Error::InvalidParameter("tau_max must be at least 1".into()));
        }
        if self.n < 1 || self.m < 1 {
            return Err(Error::InvalidParameter("n and m must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

impl Default for TriggerConfig {
    fn default() -> Self {
        Self {
            delta: 3.0,
            tau_max: 100,
            n: 300,
            m: 100_000,
            alpha: 0.05,
        }
    }
}

/// `‖x − x̌‖₂ ≥ δ`.
pub fn state_trigger(x: &Vector, x_pred: &Vector, delta: f64) -> Result<bool> {
    if x.len() != x_pred.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: x_pred.len(),
        });
    }
    Ok((x - x_pred).norm() >= delta)
}

/// Communication instants. Gaps are measured from `origin`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommunicationLog {
    pub origin: u64,
    pub event_steps: Vec<u64>,
    /// `true` where the event was forced by the `τ_max` cap.
    pub censored: Vec<bool>,
}

impl CommunicationLog {
    pub fn with_origin(origin: u64) -> Self {
        Self {
            origin,
            ..Self::default()
        }
    }

    pub fn push(&mut self, step: u64, censored: bool) {
        debug_assert!(self.event_steps.last().map_or(step > self.origin, |&l| step > l));
        self.event_steps.push(step);
        self.censored.push(censored);
    }

    pub fn len(&self) -> usize {
        self.event_steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.event_steps.is_empty()
    }

    pub fn forced_count(&self) -> usize {
        self.censored.iter().filter(|&&c| c).count()
    }

    pub fn gaps(&self) -> impl Iterator<Item = u64> + '_ {
        std::iter::once(self.origin)
            .chain(self.event_steps.iter().copied())
            .zip(self.event_steps.iter().copied())
            .map(|(prev, next)| next - prev)
    }
}

/// Successive event gaps with censoring flags carried over.
pub fn intercomm_times(log: &CommunicationLog) -> Result<StoppingSample> {
    if log.is_empty() {
        return Err(Error::EmptySample);
    }
    StoppingSample::new(
        log.gaps().map(|g| g as f64).collect(),
        log.censored.clone(),
        TimeMode::Discrete,
    )
}

/// A communication instant produced by one loop step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CommEvent {
    pub step: u64,
    pub gap: u64,
    pub censored: bool,
}

/// Sender state `x`, receiver prediction `x̌`, and the time since the last
/// communication.
#[derive(Debug, Clone, PartialEq)]
pub struct EtseState {
    pub true_state: Vector,
    pub prediction: Vector,
    pub steps_since_comm: u64,
}

/// Step-by-step full-state ETSE loop.
#[derive(Debug, Clone)]
pub struct EtseLoop {
    plant: DiscreteLinearModel,
    model: DiscreteLinearModel,
    delta: f64,
    tau_max: u64,
    step: u64,
    state: EtseState,
    next: Vector,
    xi: Vector,
}

impl EtseLoop {
    /// Starts with `x(0) = x̌(0) = 0`.
    pub fn new(plant: DiscreteLinearModel, model: DiscreteLinearModel, cfg: &TriggerConfig) -> Result<Self> {
        let x0 = Vector::zeros(plant.dim());
        Self::with_initial_state(plant, model, cfg, x0)
    }

    pub fn with_initial_state(
        plant: DiscreteLinearModel,
        model: DiscreteLinearModel,
        cfg: &TriggerConfig,
        x0: Vector,
    ) -> Result<Self> {
        cfg.validate()?;
        if plant.dim() != model.dim() {
            return Err(Error::DimensionMismatch {
                expected: plant.dim(),
                got: model.dim(),
            });
        }
        plant.check_dim(&x0)?;
        let dim = plant.dim();
        Ok(Self {
            plant,
            model,
            delta: cfg.delta,
            tau_max: cfg.tau_max,
            step: 0,
            state: EtseState {
                prediction: x0.clone(),
                true_state: x0,
                steps_since_comm: 0,
            },
            next: Vector::zeros(dim),
            xi: Vector::zeros(dim),
        })
    }

    pub fn state(&self) -> &EtseState {
        &self.state
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn model(&self) -> &DiscreteLinearModel {
        &self.model
    }

    pub fn plant(&self) -> &DiscreteLinearModel {
        &self.plant
    }

    /// Replaces the receiver's prediction model.
    pub fn set_model(&mut self, model: DiscreteLinearModel) -> Result<()> {
        if model.dim() != self.plant.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.plant.dim(),
                got: model.dim(),
            });
        }
        self.model = model;
        Ok(())
    }

    /// Current prediction error `x − x̌`.
    pub fn error(&self) -> Vector {
        &self.state.true_state - &self.state.prediction
    }

    /// Advances one step: plant update, prediction update, trigger check and
    /// reset on communication.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Option<CommEvent> {
        self.step += 1;
        let s = &mut self.state;
        self.plant.step_into(&s.true_state, &mut self.next, &mut self.xi, rng);
        std::mem::swap(&mut s.true_state, &mut self.next);
        self.next.gemv(1.0, self.model.transition(), &s.prediction, 0.0);
        std::mem::swap(&mut s.prediction, &mut self.next);
        s.steps_since_comm += 1;

        let fired = (&s.true_state - &s.prediction).norm_squared() >= self.delta * self.delta;
        if fired || s.steps_since_comm >= self.tau_max {
            let event = CommEvent {
                step: self.step,
                gap: s.steps_since_comm,
                censored: !fired,
            };
            s.prediction.copy_from(&s.true_state);
            s.steps_since_comm = 0;
            Some(event)
        } else {
            None
        }
    }
}

/// Output of [`run_etse`]: sender states, receiver predictions (both after any
/// reset at that step, from step 0) and the communication log.
#[derive(Debug, Clone, PartialEq)]
pub struct EtseRun {
    pub states: Trajectory,
    pub predictions: Trajectory,
    pub log: CommunicationLog,
}

pub fn run_etse<R: Rng + ?Sized>(
    plant: &DiscreteLinearModel,
    model: &DiscreteLinearModel,
    cfg: &TriggerConfig,
    steps: usize,
    rng: &mut R,
) -> Result<EtseRun> {
    if steps < 1 {
        return Err(Error::InvalidParameter("steps must be at least 1".into()));
    }
    let mut etse = EtseLoop::new(plant.clone(), model.clone(), cfg)?;
    let mut states = Trajectory::with_capacity(steps + 1);
    let mut predictions = Trajectory::with_capacity(steps + 1);
    let mut log = CommunicationLog::default();
    states.push(0.0, etse.state.true_state.clone());
    predictions.push(0.0, etse.state.prediction.clone());
    for _ in 0..steps {
        if let Some(ev) = etse.step(rng) {
            log.push(ev.step, ev.censored);
        }
        let t = etse.step as f64;
        states.push(t, etse.state.true_state.clone());
        predictions.push(t, etse.state.prediction.clone());
    }
    Ok(EtseRun {
        states,
        predictions,
        log,
    })
}

/// Collects `count` consecutive gaps from a running loop.
pub fn collect_gaps<R: Rng + ?Sized>(etse: &mut EtseLoop, count: usize, rng: &mut R) -> StoppingSample {
    let mut sample = StoppingSample::empty(TimeMode::Discrete);
    while sample.len() < count {
        if let Some(ev) = etse.step(rng) {
            sample.push(ev.gap as f64, ev.censored);
        }
    }
    sample
}

/// Writes `step, <name>0.., <name>1.., …, event_flag` rows for trajectories
/// sharing one time grid.
pub fn write_trajectories_csv<W: Write>(
    writer: W,
    series: &[(&str, &Trajectory)],
    log: &CommunicationLog,
) -> Result<()> {
    let Some((_, first)) = series.first() else {
        return Err(Error::InvalidParameter("no trajectories to write".into()));
    };
    if series.iter().any(|(_, t)| t.len() != first.len()) {
        return Err(Error::InvalidParameter("trajectories differ in length".into()));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["step".to_string()];
    for (name, traj) in series {
        let dim = traj.states.first().map_or(0, |s| s.len());
        header.extend((0..dim).map(|i| format!("{name}{i}")));
    }
    header.push("event_flag".into());
    w.write_record(&header)?;

    let mut events = log.event_steps.iter().peekable();
    for (row, &t) in first.times.iter().enumerate() {
        let step = t as u64;
        let mut record = vec![step.to_string()];
        for (_, traj) in series {
            record.extend(traj.states[row].iter().map(|v| v.to_string()));
        }
        while events.next_if(|&&e| e < step).is_some() {}
        let flag = events.next_if(|&&e| e == step).is_some();
        record.push(u8::from(flag).to_string());
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::from_row_major;
    use crate::rng::seeded;

    fn v(x: &[f64]) -> Vector {
        Vector::from_vec(x.to_vec())
    }

    #[test]
    fn state_trigger_cases() {
        assert!(!state_trigger(&v(&[0.0, 0.0]), &v(&[0.0, 0.0]), 3.0).unwrap());
        assert!(state_trigger(&v(&[3.0, 0.0]), &v(&[0.0, 0.0]), 3.0).unwrap());
        assert!(!state_trigger(&v(&[1.0, 1.0]), &v(&[0.0, 0.0]), 1.5).unwrap());
        assert!(state_trigger(&v(&[1.0]), &v(&[0.0, 0.0]), 1.0).is_err());
    }

    #[test]
    fn config_validation() {
        let ok = TriggerConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            TriggerConfig { delta: 0.0, ..ok },
            TriggerConfig { tau_max: 0, ..ok },
            TriggerConfig { alpha: 1.0, ..ok },
            TriggerConfig { alpha: 0.0, ..ok },
            TriggerConfig { n: 0, ..ok },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn intercomm_gap_arithmetic() {
        let log = CommunicationLog {
            origin: 0,
            event_steps: vec![5, 12, 14],
            censored: vec![false; 3],
        };
        let s = intercomm_times(&log).unwrap();
        assert_eq!(s.values(), &[5.0, 7.0, 2.0]);

        let capped = CommunicationLog {
            origin: 0,
            event_steps: vec![100],
            censored: vec![true],
        };
        let s = intercomm_times(&capped).unwrap();
        assert_eq!(s.values(), &[100.0]);
        assert_eq!(s.censored(), &[true]);

        assert!(intercomm_times(&CommunicationLog::default()).is_err());
    }

    #[test]
    fn noiseless_match_only_forced_events() {
        let plant = DiscreteLinearModel::new_degenerate(
            from_row_major(1, 1, &[0.9]).unwrap(),
            from_row_major(1, 1, &[0.0]).unwrap(),
        )
        .unwrap();
        let model = DiscreteLinearModel::scalar(0.9, 1.0).unwrap();
        let cfg = TriggerConfig {
            tau_max: 50,
            ..TriggerConfig::default()
        };
        let short = run_etse(&plant, &model, &cfg, 49, &mut seeded(1)).unwrap();
        assert!(short.log.is_empty());
        let long = run_etse(&plant, &model, &cfg, 500, &mut seeded(1)).unwrap();
        let gaps = intercomm_times(&long.log).unwrap();
        assert_eq!(gaps.len(), 10);
        assert!(gaps.values().iter().all(|&g| g == 50.0));
        assert!(gaps.censored().iter().all(|&c| c));
    }

    #[test]
    fn error_bounded_between_events_and_zero_after() {
        let plant = DiscreteLinearModel::scalar(0.9, 1.0).unwrap();
        let model = DiscreteLinearModel::scalar(0.8, 1.0).unwrap();
        let cfg = TriggerConfig::default();
        let run = run_etse(&plant, &model, &cfg, 20_000, &mut seeded(4)).unwrap();
        let events: std::collections::HashSet<u64> = run.log.event_steps.iter().copied().collect();
        for (i, t) in run.states.times.iter().enumerate() {
            let err = (&run.states.states[i] - &run.predictions.states[i]).norm();
            if events.contains(&(*t as u64)) {
                assert_eq!(err, 0.0);
            } else {
                assert!(err < cfg.delta);
            }
        }
        let gaps = intercomm_times(&run.log).unwrap();
        assert!(gaps.values().iter().all(|&g| (1.0..=100.0).contains(&g)));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let a = DiscreteLinearModel::scalar(0.9, 1.0).unwrap();
        let b = DiscreteLinearModel::new(
            nalgebra::DMatrix::identity(2, 2) * 0.5,
            nalgebra::DMatrix::identity(2, 2),
        )
        .unwrap();
        assert!(run_etse(&a, &b, &TriggerConfig::default(), 10, &mut seeded(0)).is_err());
    }

    #[test]
    fn trajectory_csv_has_event_flags() {
        let plant = DiscreteLinearModel::scalar(0.9, 1.0).unwrap();
        let run = run_etse(&plant, &plant, &TriggerConfig::default(), 200, &mut seeded(2)).unwrap();
        let mut buf = Vec::new();
        write_trajectories_csv(
            &mut buf,
            &[("x", &run.states), ("x_pred", &run.predictions)],
            &run.log,
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "step,x0,x_pred0,event_flag");
        let flagged = lines.filter(|l| l.ends_with(",1")).count();
        assert_eq!(flagged, run.log.len());
    }
}
