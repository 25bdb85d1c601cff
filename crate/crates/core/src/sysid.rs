//! Least-squares identification of `(A, Q)` from full-rate state data.

use std::io::{Read, Write};

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::linsys::{simulate_discrete, DiscreteLinearModel, Validation};

/// States `x(0..=N)` recorded at every step.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningDataset {
    states: Vec<Vector>,
}

impl LearningDataset {
    /// Smallest number of transitions accepted for a `dim`-state system.
    pub fn min_transitions(dim: usize) -> usize {
        dim * (dim + 1)
    }

    pub fn new(states: Vec<Vector>) -> Result<Self> {
        let dim = states.first().map_or(0, |s| s.len());
        if dim == 0 {
            return Err(Error::InvalidParameter("dataset has no states".into()));
        }
        if let Some(bad) = states.iter().find(|s| s.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        let transitions = states.len() - 1;
        if transitions < Self::min_transitions(dim) {
            return Err(Error::InvalidParameter(format!(
                "{transitions} transitions is below the minimum {} for dimension {dim}",
                Self::min_transitions(dim)
            )));
        }
        Ok(Self { states })
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn states(&self) -> &[Vector] {
        &self.states
    }

    pub fn transitions(&self) -> usize {
        self.states.len() - 1
    }

    /// `step, x0, x1, …` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["step".to_string()];
        header.extend((0..self.dim()).map(|i| format!("x{i}")));
        w.write_record(&header)?;
        for (k, s) in self.states.iter().enumerate() {
            let mut rec = vec![k.to_string()];
            rec.extend(s.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `step, x0, …` rows; the step column is ignored beyond ordering.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut states = Vec::new();
        for record in r.records() {
            let record = record?;
            let values = record
                .iter()
                .skip(1)
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Config(format!("bad dataset value {f:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            states.push(Vector::from_vec(values));
        }
        Self::new(states)
    }
}

/// `Â = (Σ x(k+1)x(k)ᵀ)(Σ x(k)x(k)ᵀ)⁻¹`, `Q̂` = residual covariance.
///
/// Estimates with spectral radius `≥ 1` are rejected.
pub fn identify_discrete(data: &LearningDataset) -> Result<DiscreteLinearModel> {
    let n = data.dim();
    let mut sxx = Matrix::zeros(n, n);
    let mut syx = Matrix::zeros(n, n);
    for w in data.states.windows(2) {
        sxx.ger(1.0, &w[0], &w[0], 1.0);
        syx.ger(1.0, &w[1], &w[0], 1.0);
    }
    if linalg::rank(&sxx, 1e-12) < n {
        return Err(Error::RankDeficient);
    }
    let sxx_inv = sxx.try_inverse().ok_or(Error::RankDeficient)?;
    let a = syx * sxx_inv;
    let rho = linalg::spectral_radius(&a);
    if rho >= 1.0 {
        return Err(Error::Unstable(rho));
    }

    let count = data.transitions() as f64;
    let mut q = Matrix::zeros(n, n);
    for w in data.states.windows(2) {
        let r = &w[1] - &a * &w[0];
        q.ger(1.0 / count, &r, &r, 1.0);
    }
    let q = linalg::symmetrize(&q);
    let validation = if q.clone().cholesky().is_some() {
        Validation::Strict
    } else {
        Validation::Degenerate
    };
    DiscreteLinearModel::with_validation(a, q, validation)
}

/// Runs the plant with every state transmitted for `episode_length` steps,
/// starting from `x0`.
pub fn learning_episode<R: Rng + ?Sized>(
    plant: &DiscreteLinearModel,
    x0: &Vector,
    episode_length: usize,
    rng: &mut R,
) -> Result<LearningDataset> {
    let min = LearningDataset::min_transitions(plant.dim());
    if episode_length < min {
        return Err(Error::InvalidParameter(format!(
            "episode length {episode_length} is below the minimum {min}"
        )));
    }
    let traj = simulate_discrete(plant, x0, episode_length, rng)?;
    LearningDataset::new(traj.states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn exact_fit_on_noiseless_data() {
        let states: Vec<Vector> = (0..20)
            .map(|k| Vector::from_vec(vec![0.9f64.powi(k)]))
            .collect();
        let model = identify_discrete(&LearningDataset::new(states).unwrap()).unwrap();
        assert!((model.transition()[(0, 0)] - 0.9).abs() < 1e-12);
        assert!(model.noise_cov()[(0, 0)].abs() < 1e-20);
    }

    #[test]
    fn constant_zero_data_is_rank_deficient() {
        let states = vec![Vector::zeros(1); 50];
        let data = LearningDataset::new(states).unwrap();
        assert!(matches!(identify_discrete(&data), Err(Error::RankDeficient)));
    }

    #[test]
    fn short_episodes_rejected() {
        let plant = DiscreteLinearModel::scalar(0.9, 1.0).unwrap();
        assert!(learning_episode(&plant, &Vector::zeros(1), 1, &mut seeded(0)).is_err());
        assert!(LearningDataset::new(vec![Vector::zeros(2); 3]).is_err());
    }

    #[test]
    fn unstable_estimate_rejected() {
        let states: Vec<Vector> = (0..20)
            .map(|k| Vector::from_vec(vec![1.1f64.powi(k)]))
            .collect();
        let data = LearningDataset::new(states).unwrap();
        assert!(matches!(identify_discrete(&data), Err(Error::Unstable(_))));
    }

    #[test]
    fn csv_roundtrip() {
        let plant = DiscreteLinearModel::scalar(0.9, 1.0).unwrap();
        let data = learning_episode(&plant, &Vector::zeros(1), 30, &mut seeded(5)).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let back = LearningDataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.transitions(), 30);
        for (a, b) in data.states().iter().zip(back.states()) {
            assert!((a - b).amax() < 1e-12);
        }
    }
}
