//! Output measurements: steady-state Kalman filtering at the sender, open-loop
//! prediction at the receiver, and stopping-time sampling through the
//! innovation form `x̂(k+1) = A x̂(k) + K I(k)`, `I(k) ~ N(0, S)`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::etse::{CommEvent, CommunicationLog, TriggerConfig};
use crate::linalg::{self, Matrix, Vector};
use crate::linsys::Trajectory;
use crate::rng;
use crate::stopping::{self, ErrorProcess, StoppingSample, Workers};

pub const DEFAULT_DARE_TOL: f64 = 1e-12;
pub const DEFAULT_DARE_MAX_ITER: usize = 100_000;
pub const DEFAULT_BURN_IN: u64 = 1000;

/// `x(k+1) = A x(k) + ε(k)`, `y(k) = C x(k) + ν(k)`, `ε ~ N(0, Q)`, `ν ~ N(0, R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputModel {
    a: Matrix,
    c: Matrix,
    q: Matrix,
    r: Matrix,
    q_factor: Matrix,
    r_factor: Matrix,
}

impl OutputModel {
    pub fn new(a: Matrix, c: Matrix, q: Matrix, r: Matrix) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(Error::InvalidParameter("A must be a nonempty square matrix".into()));
        }
        if c.ncols() != n || c.nrows() == 0 {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: c.ncols(),
            });
        }
        let p = c.nrows();
        if q.shape() != (n, n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: q.nrows(),
            });
        }
        if r.shape() != (p, p) {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: r.nrows(),
            });
        }
        let rho = linalg::spectral_radius(&a);
        if rho >= 1.0 {
            return Err(Error::Unstable(rho));
        }
        let q_factor = linalg::cholesky_lower(&q, "process noise Q")?;
        let r_factor = linalg::cholesky_lower(&r, "measurement noise R")?;
        let mut obs = Matrix::zeros(n * p, n);
        let mut row = c.clone();
        for i in 0..n {
            obs.view_mut((i * p, 0), (p, n)).copy_from(&row);
            row = &row * &a;
        }
        let rank = linalg::rank(&obs, 1e-10);
        if rank < n {
            return Err(Error::NotObservable { rank, dim: n });
        }
        Ok(Self {
            a,
            c,
            q,
            r,
            q_factor,
            r_factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn c(&self) -> &Matrix {
        &self.c
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn r(&self) -> &Matrix {
        &self.r
    }

    /// Copy with a different measurement-noise covariance.
    pub fn with_r(&self, r: Matrix) -> Result<Self> {
        Self::new(self.a.clone(), self.c.clone(), self.q.clone(), r)
    }

    /// Linearized closed-loop inverted pendulum (four states, two outputs)
    /// with `Q = q·I₄` and `R = r·I₂`.
    pub fn pendulum(q: f64, r: f64) -> Result<Self> {
        #[rustfmt::skip]
        let a = linalg::from_row_major(4, 4, &[
            1.000, 0.010, -0.005,  0.000,
            0.017, 1.027, -0.301, -0.061,
            0.000, 0.000,  0.997,  0.009,
            0.046, 0.067, -0.507,  0.850,
        ])?;
        #[rustfmt::skip]
        let c = linalg::from_row_major(2, 4, &[
            1.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 1.0, 0.0,
        ])?;
        Self::new(a, c, Matrix::identity(4, 4) * q, Matrix::identity(2, 2) * r)
    }

    pub fn scalar(a: f64, c: f64, q: f64, r: f64) -> Result<Self> {
        let s = |v| Matrix::from_element(1, 1, v);
        Self::new(s(a), s(c), s(q), s(r))
    }
}

/// Steady-state filter: gain `K`, predicted error covariance `P` and
/// innovation covariance `S = C P Cᵀ + R`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateFilter {
    pub gain: Matrix,
    pub error_cov: Matrix,
    pub innovation_cov: Matrix,
    pub iterations: usize,
}

fn riccati_map(model: &OutputModel, p: &Matrix) -> Result<Matrix> {
    let a = &model.a;
    let c = &model.c;
    let s = c * p * c.transpose() + &model.r;
    let s_inv = s.try_inverse().ok_or(Error::Singular("innovation covariance S"))?;
    let apc = a * p * c.transpose();
    Ok(linalg::symmetrize(
        &(a * p * a.transpose() + &model.q - &apc * s_inv * apc.transpose()),
    ))
}

/// Max-abs difference between `P` and its image under the Riccati map.
pub fn riccati_residual(model: &OutputModel, p: &Matrix) -> Result<f64> {
    Ok((riccati_map(model, p)? - p).amax())
}

/// Fixed-point iteration of the Riccati recursion from `P₀ = Q`.
pub fn solve_dare(model: &OutputModel, tol: f64, max_iter: usize) -> Result<SteadyStateFilter> {
    let mut p = model.q.clone();
    for it in 1..=max_iter {
        let next = riccati_map(model, &p)?;
        let diff = (&next - &p).amax();
        p = next;
        if diff < tol {
            return filter_from_cov(model, p, it);
        }
    }
    Err(Error::NoConvergence(max_iter))
}

fn filter_from_cov(model: &OutputModel, p: Matrix, iterations: usize) -> Result<SteadyStateFilter> {
    let s = linalg::symmetrize(&(&model.c * &p * model.c.transpose() + &model.r));
    let s_inv = s
        .clone()
        .try_inverse()
        .ok_or(Error::Singular("innovation covariance S"))?;
    let gain = &p * model.c.transpose() * s_inv;
    Ok(SteadyStateFilter {
        gain,
        error_cov: p,
        innovation_cov: s,
        iterations,
    })
}

impl SteadyStateFilter {
    pub fn for_model(model: &OutputModel) -> Result<Self> {
        solve_dare(model, DEFAULT_DARE_TOL, DEFAULT_DARE_MAX_ITER)
    }

    /// Noise factor `K chol(S)` of the innovation-driven estimate dynamics.
    pub fn innovation_noise_factor(&self) -> Result<Matrix> {
        let l = linalg::psd_factor(&self.innovation_cov, "innovation covariance S")?;
        Ok(&self.gain * l)
    }
}

/// `x̂(k+1) = Â x̂(k) + K (y(k+1) − Ĉ Â x̂(k))`.
pub fn kf_step(
    filter: &SteadyStateFilter,
    model: &OutputModel,
    xhat: &Vector,
    y_next: &Vector,
) -> Result<Vector> {
    if xhat.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: xhat.len(),
        });
    }
    if y_next.len() != model.outputs() || filter.gain.shape() != (model.dim(), model.outputs()) {
        return Err(Error::DimensionMismatch {
            expected: model.outputs(),
            got: y_next.len(),
        });
    }
    let prior = &model.a * xhat;
    let innovation = y_next - &model.c * &prior;
    Ok(prior + &filter.gain * innovation)
}

/// Plant, sender-side filter and receiver-side prediction, stepped together.
#[derive(Debug, Clone)]
pub struct KfEtseLoop {
    plant: OutputModel,
    model: OutputModel,
    filter: SteadyStateFilter,
    delta: f64,
    tau_max: u64,
    burn_in: u64,
    step: u64,
    x: Vector,
    xhat: Vector,
    xcheck: Vector,
    steps_since_comm: u64,
    last_innovation: Vector,
}

impl KfEtseLoop {
    /// Starts at `x = x̂ = x̌ = 0`. During the first `burn_in` steps the receiver
    /// is kept in sync every step and no events are reported.
    pub fn new(plant: OutputModel, model: OutputModel, cfg: &TriggerConfig, burn_in: u64) -> Result<Self> {
        cfg.validate()?;
        if plant.dim() != model.dim() || plant.outputs() != model.outputs() {
            return Err(Error::DimensionMismatch {
                expected: plant.dim(),
                got: model.dim(),
            });
        }
        let filter = SteadyStateFilter::for_model(&model)?;
        let n = plant.dim();
        let p = plant.outputs();
        Ok(Self {
            plant,
            model,
            filter,
            delta: cfg.delta,
            tau_max: cfg.tau_max,
            burn_in,
            step: 0,
            x: Vector::zeros(n),
            xhat: Vector::zeros(n),
            xcheck: Vector::zeros(n),
            steps_since_comm: 0,
            last_innovation: Vector::zeros(p),
        })
    }

    pub fn filter(&self) -> &SteadyStateFilter {
        &self.filter
    }

    pub fn model(&self) -> &OutputModel {
        &self.model
    }

    pub fn plant(&self) -> &OutputModel {
        &self.plant
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn burn_in(&self) -> u64 {
        self.burn_in
    }

    pub fn true_state(&self) -> &Vector {
        &self.x
    }

    pub fn estimate(&self) -> &Vector {
        &self.xhat
    }

    pub fn prediction(&self) -> &Vector {
        &self.xcheck
    }

    /// Innovation `y(k) − Ĉ Â x̂(k−1)` of the latest step.
    pub fn last_innovation(&self) -> &Vector {
        &self.last_innovation
    }

    /// Swaps in a new model; the sender's gain is recomputed from it.
    pub fn set_model(&mut self, model: OutputModel) -> Result<()> {
        if model.dim() != self.plant.dim() || model.outputs() != self.plant.outputs() {
            return Err(Error::DimensionMismatch {
                expected: self.plant.dim(),
                got: model.dim(),
            });
        }
        self.filter = SteadyStateFilter::for_model(&model)?;
        self.model = model;
        Ok(())
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Option<CommEvent> {
        self.step += 1;
        let n = self.plant.dim();
        let p = self.plant.outputs();
        let mut eps = Vector::zeros(n);
        let mut nu = Vector::zeros(p);
        rng::fill_standard_normal(rng, &mut eps);
        rng::fill_standard_normal(rng, &mut nu);
        self.x = &self.plant.a * &self.x + &self.plant.q_factor * eps;
        let y = &self.plant.c * &self.x + &self.plant.r_factor * nu;

        let prior = &self.model.a * &self.xhat;
        self.last_innovation = y - &self.model.c * &prior;
        self.xhat = prior + &self.filter.gain * &self.last_innovation;
        self.xcheck = &self.model.a * &self.xcheck;
        self.steps_since_comm += 1;

        if self.step <= self.burn_in {
            self.xcheck.copy_from(&self.xhat);
            self.steps_since_comm = 0;
            return None;
        }
        let fired = (&self.xhat - &self.xcheck).norm_squared() >= self.delta * self.delta;
        if fired || self.steps_since_comm >= self.tau_max {
            let event = CommEvent {
                step: self.step,
                gap: self.steps_since_comm,
                censored: !fired,
            };
            self.xcheck.copy_from(&self.xhat);
            self.steps_since_comm = 0;
            Some(event)
        } else {
            None
        }
    }
}

/// Output of [`run_etse_kf`]. The log's origin is the end of the burn-in.
#[derive(Debug, Clone, PartialEq)]
pub struct KfEtseRun {
    pub states: Trajectory,
    pub estimates: Trajectory,
    pub predictions: Trajectory,
    pub log: CommunicationLog,
}

pub fn run_etse_kf<R: Rng + ?Sized>(
    plant: &OutputModel,
    model: &OutputModel,
    cfg: &TriggerConfig,
    steps: usize,
    burn_in: u64,
    rng: &mut R,
) -> Result<KfEtseRun> {
    if steps < 1 {
        return Err(Error::InvalidParameter("steps must be at least 1".into()));
    }
    let mut sim = KfEtseLoop::new(plant.clone(), model.clone(), cfg, burn_in)?;
    let mut states = Trajectory::with_capacity(steps + 1);
    let mut estimates = Trajectory::with_capacity(steps + 1);
    let mut predictions = Trajectory::with_capacity(steps + 1);
    let mut log = CommunicationLog::with_origin(burn_in);
    states.push(0.0, sim.x.clone());
    estimates.push(0.0, sim.xhat.clone());
    predictions.push(0.0, sim.xcheck.clone());
    for _ in 0..steps {
        if let Some(ev) = sim.step(rng) {
            log.push(ev.step, ev.censored);
        }
        let t = sim.step as f64;
        states.push(t, sim.x.clone());
        estimates.push(t, sim.xhat.clone());
        predictions.push(t, sim.xcheck.clone());
    }
    Ok(KfEtseRun {
        states,
        estimates,
        predictions,
        log,
    })
}

/// `count` consecutive post-burn-in gaps from a running co-simulation.
pub fn collect_kf_gaps<R: Rng + ?Sized>(sim: &mut KfEtseLoop, count: usize, rng: &mut R) -> StoppingSample {
    let mut sample = StoppingSample::empty(stopping::TimeMode::Discrete);
    while sample.len() < count {
        if let Some(ev) = sim.step(rng) {
            sample.push(ev.gap as f64, ev.censored);
        }
    }
    sample
}

/// Model-based stopping times of `z(k+1) = Â z(k) + K̂ Î(k)`, `Î ~ N(0, Ŝ)`.
pub fn sample_stopping_times_kf(
    model: &OutputModel,
    delta: f64,
    tau_max: u64,
    m: usize,
    seed: u64,
) -> Result<StoppingSample> {
    sample_stopping_times_kf_with(model, delta, tau_max, m, seed, Workers::Auto)
}

pub fn sample_stopping_times_kf_with(
    model: &OutputModel,
    delta: f64,
    tau_max: u64,
    m: usize,
    seed: u64,
    workers: Workers,
) -> Result<StoppingSample> {
    let filter = SteadyStateFilter::for_model(model)?;
    let process = ErrorProcess::new(model.a.clone(), filter.innovation_noise_factor()?)?;
    stopping::sample_process(&process, delta, tau_max, m, seed, workers)
}
