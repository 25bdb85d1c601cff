//! Stopping-time (inter-communication time) samples: Monte Carlo sampling of
//! the prediction-error process, empirical means and empirical CDFs.
//!
//! Monte Carlo work is cut into fixed-size blocks, and block `b` draws from
//! stream `b` of the root seed. The result depends only on the seed and the
//! sample count, never on how many workers ran the blocks.

use std::io::{Read, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::linsys::{ContinuousLinearModel, DiscreteLinearModel};
use crate::rng;

/// Samples per seeded block.
pub const BLOCK_SIZE: usize = 2048;

/// Environment variable overriding the Monte Carlo worker count.
pub const WORKERS_ENV: &str = "ETL_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeMode {
    Discrete,
    Continuous,
}

/// Stopping times with parallel censoring flags (`true` when forced by the cap).
#[derive(Debug, Clone, PartialEq)]
pub struct StoppingSample {
    values: Vec<f64>,
    censored: Vec<bool>,
    time_mode: TimeMode,
}

impl StoppingSample {
    pub fn new(values: Vec<f64>, censored: Vec<bool>, time_mode: TimeMode) -> Result<Self> {
        if values.len() != censored.len() {
            return Err(Error::DimensionMismatch {
                expected: values.len(),
                got: censored.len(),
            });
        }
        let min = match time_mode {
            TimeMode::Discrete => 1.0,
            TimeMode::Continuous => f64::MIN_POSITIVE,
        };
        if let Some(bad) = values.iter().find(|&&v| !(v >= min && v.is_finite())) {
            return Err(Error::InvalidParameter(format!("invalid stopping time {bad}")));
        }
        Ok(Self {
            values,
            censored,
            time_mode,
        })
    }

    /// Uncensored discrete sample.
    pub fn discrete(values: Vec<f64>) -> Result<Self> {
        let censored = vec![false; values.len()];
        Self::new(values, censored, TimeMode::Discrete)
    }

    pub fn empty(time_mode: TimeMode) -> Self {
        Self {
            values: Vec::new(),
            censored: Vec::new(),
            time_mode,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn censored(&self) -> &[bool] {
        &self.censored
    }

    pub fn time_mode(&self) -> TimeMode {
        self.time_mode
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn push(&mut self, value: f64, censored: bool) {
        self.values.push(value);
        self.censored.push(censored);
    }

    pub fn extend_from(&mut self, other: &StoppingSample) {
        self.values.extend_from_slice(&other.values);
        self.censored.extend_from_slice(&other.censored);
    }

    pub fn censored_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.censored.iter().filter(|&&c| c).count() as f64 / self.len() as f64
    }

    pub fn mean(&self) -> Result<f64> {
        empirical_mean(self)
    }

    /// Unbiased sample standard deviation (0 for a single value).
    pub fn std_dev(&self) -> Result<f64> {
        let mean = self.mean()?;
        let n = self.len();
        if n < 2 {
            return Ok(0.0);
        }
        let ss: f64 = self.values.iter().map(|v| (v - mean).powi(2)).sum();
        Ok((ss / (n - 1) as f64).sqrt())
    }

    pub fn standard_error(&self) -> Result<f64> {
        Ok(self.std_dev()? / (self.len() as f64).sqrt())
    }

    pub fn cdf(&self) -> Result<EmpiricalCdf> {
        empirical_cdf(self)
    }

    /// Writes `tau,censored` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["tau", "censored"])?;
        for (v, c) in self.values.iter().zip(&self.censored) {
            w.write_record([v.to_string(), u8::from(*c).to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format written by [`StoppingSample::write_csv`]. A missing
    /// censoring column means uncensored.
    pub fn read_csv<R: Read>(reader: R, time_mode: TimeMode) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut values = Vec::new();
        let mut censored = Vec::new();
        for record in r.records() {
            let record = record?;
            let v: f64 = parse_field(record.get(0), "tau")?;
            let c = match record.get(1) {
                None | Some("") => false,
                Some(s) => matches!(s.trim(), "1" | "true"),
            };
            values.push(v);
            censored.push(c);
        }
        Self::new(values, censored, time_mode)
    }
}

fn parse_field(field: Option<&str>, name: &str) -> Result<f64> {
    field
        .ok_or_else(|| Error::Config(format!("missing column {name}")))?
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("bad {name} value: {e}")))
}

/// Arithmetic mean; censored values enter at the cap.
pub fn empirical_mean(sample: &StoppingSample) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(sample.values.iter().sum::<f64>() / sample.len() as f64)
}

/// A cumulative distribution function with access to left limits, so that
/// atoms (integer stopping times) are handled exactly.
pub trait Cdf {
    /// `F(t) = P(τ ≤ t)`.
    fn cdf(&self, t: f64) -> f64;

    /// `F(t-) = P(τ < t)`. Defaults to `F(t)` for continuous distributions.
    fn cdf_left(&self, t: f64) -> f64 {
        self.cdf(t)
    }
}

/// Wraps a closure `t -> F(t)` of a continuous distribution.
pub struct FnCdf<F>(pub F);

impl<F: Fn(f64) -> f64> Cdf for FnCdf<F> {
    fn cdf(&self, t: f64) -> f64 {
        (self.0)(t)
    }
}

/// Right-continuous step function `F_n(t) = #{τᵢ ≤ t} / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySample);
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidParameter("NaN in sample".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { sorted })
    }

    pub fn sorted_values(&self) -> &[f64] {
        &self.sorted
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Number of values `≤ t`.
    pub fn count_le(&self, t: f64) -> usize {
        self.sorted.partition_point(|&v| v <= t)
    }

    pub fn count_lt(&self, t: f64) -> usize {
        self.sorted.partition_point(|&v| v < t)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.count_le(t) as f64 / self.len() as f64
    }

    /// Distinct support points in increasing order.
    pub fn support(&self) -> Vec<f64> {
        let mut s = self.sorted.clone();
        s.dedup();
        s
    }

    /// `(t, F(t))` at every distinct support point.
    pub fn steps(&self) -> Vec<(f64, f64)> {
        self.support().into_iter().map(|t| (t, self.eval(t))).collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "F"])?;
        for (t, f) in self.steps() {
            w.write_record([t.to_string(), f.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

impl Cdf for EmpiricalCdf {
    fn cdf(&self, t: f64) -> f64 {
        self.eval(t)
    }

    fn cdf_left(&self, t: f64) -> f64 {
        self.count_lt(t) as f64 / self.len() as f64
    }
}

pub fn empirical_cdf(sample: &StoppingSample) -> Result<EmpiricalCdf> {
    EmpiricalCdf::from_values(&sample.values)
}

/// The prediction-error process `z(k+1) = A z(k) + G ξ(k)`, `ξ ~ N(0, I)`,
/// restarted from `z = 0` after every exit from the `δ`-ball.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorProcess {
    transition: Matrix,
    noise_factor: Matrix,
}

impl ErrorProcess {
    /// `noise_factor` is `dim x r`; the noise covariance is `G Gᵀ`.
    pub fn new(transition: Matrix, noise_factor: Matrix) -> Result<Self> {
        if !transition.is_square() || transition.nrows() == 0 {
            return Err(Error::InvalidParameter(
                "transition must be a nonempty square matrix".into(),
            ));
        }
        if noise_factor.nrows() != transition.nrows() || noise_factor.ncols() == 0 {
            return Err(Error::DimensionMismatch {
                expected: transition.nrows(),
                got: noise_factor.nrows(),
            });
        }
        Ok(Self {
            transition,
            noise_factor,
        })
    }

    pub fn from_model(model: &DiscreteLinearModel) -> Self {
        Self {
            transition: model.transition().clone(),
            noise_factor: model.noise_factor().clone(),
        }
    }

    /// Euler-Maruyama chain of `dZ = 𝒜 Z dt + 𝒞 dW` at step `h`.
    pub fn euler_maruyama(model: &ContinuousLinearModel, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "step size must be positive, got {h}"
            )));
        }
        let n = model.dim();
        Self::new(
            Matrix::identity(n, n) + model.drift() * h,
            model.diffusion() * h.sqrt(),
        )
    }

    pub fn dim(&self) -> usize {
        self.transition.nrows()
    }

    /// First step `k ≥ 1` with `‖z(k)‖₂ ≥ δ`, or `(cap, true)` if none up to `cap`.
    pub fn first_exit<R: Rng + ?Sized>(
        &self,
        delta: f64,
        cap: u64,
        rng: &mut R,
        scratch: &mut Scratch,
    ) -> (u64, bool) {
        if self.dim() == 1 && self.noise_factor.ncols() == 1 {
            return self.first_exit_scalar(delta, cap, rng);
        }
        let delta_sq = delta * delta;
        scratch.z.fill(0.0);
        for k in 1..=cap {
            rng::fill_standard_normal(rng, &mut scratch.xi);
            scratch.next.gemv(1.0, &self.transition, &scratch.z, 0.0);
            scratch.next.gemv(1.0, &self.noise_factor, &scratch.xi, 1.0);
            std::mem::swap(&mut scratch.z, &mut scratch.next);
            if scratch.z.norm_squared() >= delta_sq {
                return (k, false);
            }
        }
        (cap, true)
    }

    fn first_exit_scalar<R: Rng + ?Sized>(&self, delta: f64, cap: u64, rng: &mut R) -> (u64, bool) {
        let a = self.transition[(0, 0)];
        let g = self.noise_factor[(0, 0)];
        let mut z = 0.0f64;
        for k in 1..=cap {
            z = a * z + g * rng::standard_normal(rng);
            if z.abs() >= delta {
                return (k, false);
            }
        }
        (cap, true)
    }

    pub fn scratch(&self) -> Scratch {
        Scratch {
            z: Vector::zeros(self.dim()),
            next: Vector::zeros(self.dim()),
            xi: Vector::zeros(self.noise_factor.ncols()),
        }
    }

    /// `m` independent exit times, reproducible for a given `seed`.
    pub fn sample(
        &self,
        delta: f64,
        cap: u64,
        m: usize,
        seed: u64,
        workers: Workers,
    ) -> Result<(Vec<u64>, Vec<bool>)> {
        if m == 0 {
            return Err(Error::InvalidParameter("sample count must be at least 1".into()));
        }
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::InvalidParameter(format!("invalid threshold {delta}")));
        }
        if cap == 0 {
            return Err(Error::InvalidParameter("cap must be at least 1".into()));
        }
        let blocks = m.div_ceil(BLOCK_SIZE);
        let run_block = |b: usize| {
            let len = BLOCK_SIZE.min(m - b * BLOCK_SIZE);
            let mut rng = rng::stream(seed, b as u64);
            let mut scratch = self.scratch();
            (0..len)
                .map(|_| self.first_exit(delta, cap, &mut rng, &mut scratch))
                .collect::<Vec<_>>()
        };
        let per_block: Vec<Vec<(u64, bool)>> = workers.install(|| {
            if workers.is_sequential() {
                (0..blocks).map(run_block).collect()
            } else {
                (0..blocks).into_par_iter().map(run_block).collect()
            }
        })?;
        Ok(per_block.into_iter().flatten().unzip())
    }
}

pub struct Scratch {
    z: Vector,
    next: Vector,
    xi: Vector,
}

/// Worker count for Monte Carlo sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Workers {
    /// `ETL_WORKERS` if set, otherwise rayon's global pool.
    #[default]
    Auto,
    Threads(usize),
}

impl Workers {
    fn resolved(self) -> Option<usize> {
        match self {
            Workers::Threads(n) => Some(n.max(1)),
            Workers::Auto => std::env::var(WORKERS_ENV)
                .ok()
                .and_then(|v| v.trim().parse::<usize>().ok())
                .map(|n| n.max(1)),
        }
    }

    fn is_sequential(self) -> bool {
        self.resolved() == Some(1)
    }

    fn install<T: Send>(self, f: impl FnOnce() -> T + Send) -> Result<T> {
        match self.resolved() {
            None | Some(1) => Ok(f()),
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
                Ok(pool.install(f))
            }
        }
    }
}

/// Monte Carlo stopping times of the error process `z(k+1) = Â z(k) + ε̂(k)`.
pub fn sample_stopping_times(
    model: &DiscreteLinearModel,
    delta: f64,
    tau_max: u64,
    m: usize,
    seed: u64,
) -> Result<StoppingSample> {
    sample_stopping_times_with(model, delta, tau_max, m, seed, Workers::Auto)
}

pub fn sample_stopping_times_with(
    model: &DiscreteLinearModel,
    delta: f64,
    tau_max: u64,
    m: usize,
    seed: u64,
    workers: Workers,
) -> Result<StoppingSample> {
    sample_process(&ErrorProcess::from_model(model), delta, tau_max, m, seed, workers)
}

pub(crate) fn sample_process(
    process: &ErrorProcess,
    delta: f64,
    tau_max: u64,
    m: usize,
    seed: u64,
    workers: Workers,
) -> Result<StoppingSample> {
    let (steps, censored) = process.sample(delta, tau_max, m, seed, workers)?;
    Ok(StoppingSample {
        values: steps.into_iter().map(|k| k as f64).collect(),
        censored,
        time_mode: TimeMode::Discrete,
    })
}

/// Exit times of the Euler-Maruyama chain at step `h`, reported as `k·h` and
/// censored at `horizon`.
pub fn sample_stopping_times_continuous(
    model: &ContinuousLinearModel,
    delta: f64,
    horizon: f64,
    h: f64,
    m: usize,
    seed: u64,
    workers: Workers,
) -> Result<StoppingSample> {
    let process = ErrorProcess::euler_maruyama(model, h)?;
    if !(horizon >= h && horizon.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "horizon {horizon} must be at least one step {h}"
        )));
    }
    let cap = (horizon / h).round() as u64;
    let (steps, censored) = process.sample(delta, cap, m, seed, workers)?;
    Ok(StoppingSample {
        values: steps.into_iter().map(|k| k as f64 * h).collect(),
        censored,
        time_mode: TimeMode::Continuous,
    })
}
