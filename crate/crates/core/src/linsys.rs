//! Linear Gaussian systems in continuous time (Ornstein-Uhlenbeck processes)
//! and discrete time, with trajectory simulation and exact discretization.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::rng;

/// How strictly a model's invariants are enforced at construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Validation {
    /// Stable dynamics and positive definite noise.
    Strict,
    /// Stable dynamics, positive semidefinite noise (e.g. `Q = 0`).
    Degenerate,
    /// Shape checks only. Used for trivial cases such as `A = I`.
    Unchecked,
}

/// `x(k+1) = A x(k) + ε(k)`, `ε(k) ~ N(0, Q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLinearModel {
    transition: Matrix,
    noise_cov: Matrix,
    noise_factor: Matrix,
    validation: Validation,
}

impl DiscreteLinearModel {
    pub fn new(transition: Matrix, noise_cov: Matrix) -> Result<Self> {
        Self::with_validation(transition, noise_cov, Validation::Strict)
    }

    /// Allows a positive semidefinite (possibly zero) noise covariance.
    pub fn new_degenerate(transition: Matrix, noise_cov: Matrix) -> Result<Self> {
        Self::with_validation(transition, noise_cov, Validation::Degenerate)
    }

    pub fn with_validation(
        transition: Matrix,
        noise_cov: Matrix,
        validation: Validation,
    ) -> Result<Self> {
        let dim = transition.nrows();
        if dim == 0 || !transition.is_square() {
            return Err(Error::InvalidParameter(
                "transition must be a nonempty square matrix".into(),
            ));
        }
        if noise_cov.shape() != (dim, dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: noise_cov.nrows(),
            });
        }
        if validation != Validation::Unchecked {
            let rho = linalg::spectral_radius(&transition);
            if rho >= 1.0 {
                return Err(Error::Unstable(rho));
            }
        }
        let noise_factor = match validation {
            Validation::Strict => linalg::cholesky_lower(&noise_cov, "noise covariance Q")?,
            _ => linalg::psd_factor(&noise_cov, "noise covariance Q")?,
        };
        Ok(Self {
            transition,
            noise_cov,
            noise_factor,
            validation,
        })
    }

    /// Scalar model `x(k+1) = a x(k) + ε`, `ε ~ N(0, q)`.
    pub fn scalar(a: f64, q: f64) -> Result<Self> {
        Self::new(DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, q))
    }

    pub fn dim(&self) -> usize {
        self.transition.nrows()
    }

    pub fn transition(&self) -> &Matrix {
        &self.transition
    }

    pub fn noise_cov(&self) -> &Matrix {
        &self.noise_cov
    }

    /// Cached factor `L` with `L Lᵀ = Q`.
    pub fn noise_factor(&self) -> &Matrix {
        &self.noise_factor
    }

    pub fn validation(&self) -> Validation {
        self.validation
    }

    /// One step `A x + ε`.
    pub fn step_discrete<R: Rng + ?Sized>(&self, state: &Vector, rng: &mut R) -> Result<Vector> {
        self.check_dim(state)?;
        let mut out = Vector::zeros(self.dim());
        let mut xi = Vector::zeros(self.dim());
        self.step_into(state, &mut out, &mut xi, rng);
        Ok(out)
    }

    /// Allocation-free step; `xi` is scratch space of length `dim`.
    pub(crate) fn step_into<R: Rng + ?Sized>(
        &self,
        state: &Vector,
        out: &mut Vector,
        xi: &mut Vector,
        rng: &mut R,
    ) {
        rng::fill_standard_normal(rng, xi);
        out.gemv(1.0, &self.transition, state, 0.0);
        out.gemv(1.0, &self.noise_factor, xi, 1.0);
    }

    /// Noise-free prediction `A x`.
    pub fn predict(&self, state: &Vector) -> Vector {
        &self.transition * state
    }

    pub(crate) fn check_dim(&self, state: &Vector) -> Result<()> {
        if state.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: state.len(),
            });
        }
        Ok(())
    }

    /// Stationary covariance `P = A P Aᵀ + Q`, by doubling iteration.
    pub fn stationary_cov(&self) -> Matrix {
        let mut p = self.noise_cov.clone();
        let mut a = self.transition.clone();
        for _ in 0..64 {
            let next = &p + &a * &p * a.transpose();
            a = &a * &a;
            let done = (&next - &p).amax() <= 1e-15 * next.amax().max(1.0);
            p = next;
            if done {
                break;
            }
        }
        p
    }
}

/// `dX = 𝒜 X dt + 𝒞 dW`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousLinearModel {
    drift: Matrix,
    diffusion: Matrix,
    validation: Validation,
}

impl ContinuousLinearModel {
    pub fn new(drift: Matrix, diffusion: Matrix) -> Result<Self> {
        Self::with_validation(drift, diffusion, Validation::Strict)
    }

    pub fn with_validation(drift: Matrix, diffusion: Matrix, validation: Validation) -> Result<Self> {
        let dim = drift.nrows();
        if dim == 0 || !drift.is_square() {
            return Err(Error::InvalidParameter(
                "drift must be a nonempty square matrix".into(),
            ));
        }
        if diffusion.shape() != (dim, dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: diffusion.nrows(),
            });
        }
        if validation != Validation::Unchecked {
            let abscissa = linalg::spectral_abscissa(&drift);
            if abscissa >= 0.0 {
                return Err(Error::UnstableDrift(abscissa));
            }
        }
        match validation {
            Validation::Strict => {
                linalg::cholesky_lower(&diffusion, "diffusion")?;
            }
            Validation::Degenerate => {
                linalg::psd_factor(&diffusion, "diffusion")?;
            }
            Validation::Unchecked => {}
        }
        Ok(Self {
            drift,
            diffusion,
            validation,
        })
    }

    pub fn scalar(drift: f64, diffusion: f64) -> Result<Self> {
        Self::new(
            DMatrix::from_element(1, 1, drift),
            DMatrix::from_element(1, 1, diffusion),
        )
    }

    pub fn dim(&self) -> usize {
        self.drift.nrows()
    }

    pub fn drift(&self) -> &Matrix {
        &self.drift
    }

    pub fn diffusion(&self) -> &Matrix {
        &self.diffusion
    }

    pub fn validation(&self) -> Validation {
        self.validation
    }

    /// Euler-Maruyama step `x + 𝒜 x h + 𝒞 √h ξ`.
    pub fn step_euler_maruyama<R: Rng + ?Sized>(
        &self,
        state: &Vector,
        h: f64,
        rng: &mut R,
    ) -> Result<Vector> {
        check_step(h)?;
        if state.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: state.len(),
            });
        }
        let mut xi = Vector::zeros(self.dim());
        rng::fill_standard_normal(rng, &mut xi);
        let mut out = state.clone();
        out.gemv(h, &self.drift, state, 1.0);
        out.gemv(h.sqrt(), &self.diffusion, &xi, 1.0);
        Ok(out)
    }

    /// Exact zero-order discretization over a step `h` (Van Loan).
    ///
    /// `A = exp(𝒜h)` and `Q = ∫₀ʰ exp(𝒜s) 𝒞𝒞ᵀ exp(𝒜ᵀs) ds`, both read off the
    /// exponential of the block matrix `[[-𝒜, 𝒞𝒞ᵀ], [0, 𝒜ᵀ]] h`.
    pub fn discretize(&self, h: f64) -> Result<DiscreteLinearModel> {
        check_step(h)?;
        let n = self.dim();
        let mut block = Matrix::zeros(2 * n, 2 * n);
        block.view_mut((0, 0), (n, n)).copy_from(&(-&self.drift));
        block
            .view_mut((0, n), (n, n))
            .copy_from(&(&self.diffusion * self.diffusion.transpose()));
        block.view_mut((n, n), (n, n)).copy_from(&self.drift.transpose());
        let e = (block * h).exp();
        let transition = e.view((n, n), (n, n)).transpose();
        let noise_cov = linalg::symmetrize(&(&transition * e.view((0, n), (n, n))));
        DiscreteLinearModel::with_validation(transition, noise_cov, self.validation)
    }
}

fn check_step(h: f64) -> Result<()> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "step size must be positive, got {h}"
        )));
    }
    Ok(())
}

/// Sampled path. Discrete trajectories store integer steps as `f64`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
}

impl Trajectory {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            times: Vec::with_capacity(n),
            states: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, t: f64, state: Vector) {
        debug_assert!(self.times.last().is_none_or(|&last| t > last));
        self.times.push(t);
        self.states.push(state);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Component `i` of every state.
    pub fn component(&self, i: usize) -> Vec<f64> {
        self.states.iter().map(|s| s[i]).collect()
    }
}

/// Rolls out `steps` transitions from `x0`; the result holds `steps + 1` states.
pub fn simulate_discrete<R: Rng + ?Sized>(
    model: &DiscreteLinearModel,
    x0: &Vector,
    steps: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    model.check_dim(x0)?;
    let mut traj = Trajectory::with_capacity(steps + 1);
    let mut x = x0.clone();
    let mut next = Vector::zeros(model.dim());
    let mut xi = Vector::zeros(model.dim());
    traj.push(0.0, x.clone());
    for k in 1..=steps {
        model.step_into(&x, &mut next, &mut xi, rng);
        std::mem::swap(&mut x, &mut next);
        traj.push(k as f64, x.clone());
    }
    Ok(traj)
}

/// Euler-Maruyama rollout with fixed step `h`.
pub fn simulate_continuous<R: Rng + ?Sized>(
    model: &ContinuousLinearModel,
    x0: &Vector,
    h: f64,
    steps: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    let mut traj = Trajectory::with_capacity(steps + 1);
    let mut x = x0.clone();
    traj.push(0.0, x.clone());
    for k in 1..=steps {
        x = model.step_euler_maruyama(&x, h, rng)?;
        traj.push(k as f64 * h, x.clone());
    }
    Ok(traj)
}
