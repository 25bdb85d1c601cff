//! Learning triggers: statistical tests that compare observed stopping times
//! against model-induced ones and decide whether to relearn the model.
//!
//! Mean-based triggers use Hoeffding radii and fire on `statistic ≥ κ`;
//! distribution-based triggers use DKW / two-sample KS radii and fire on
//! `statistic > κ`. With a correct model each trigger fires with probability
//! at most `α`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stopping::{Cdf, EmpiricalCdf, StoppingSample};

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

fn check_count(name: &str, n: usize) -> Result<()> {
    if n >= 1 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be at least 1")))
    }
}

fn check_tau_max(tau_max: f64) -> Result<()> {
    if tau_max > 0.0 && tau_max.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("tau_max must be positive, got {tau_max}")))
    }
}

/// Hoeffding radius for `n` samples bounded by `τ_max`: `τ_max √(ln(2/α) / 2n)`.
pub fn kappa_exact_mean(alpha: f64, n: usize, tau_max: f64) -> Result<f64> {
    check_tau_max(tau_max)?;
    Ok(tau_max * kappa_exact_cdf(alpha, n)?)
}

/// Two-sample Hoeffding radius: `τ_max √((n+m)/(2nm) · ln(2/α))`.
pub fn kappa_approx_mean(alpha: f64, n: usize, m: usize, tau_max: f64) -> Result<f64> {
    check_tau_max(tau_max)?;
    Ok(tau_max * kappa_ks(alpha, n, m)?)
}

/// DKW radius: `√(ln(2/α) / 2n)`.
pub fn kappa_exact_cdf(alpha: f64, n: usize) -> Result<f64> {
    check_alpha(alpha)?;
    check_count("n", n)?;
    Ok(((2.0 / alpha).ln() / (2.0 * n as f64)).sqrt())
}

/// Two-sample KS radius: `√((n+m)/(2nm) · ln(2/α))`.
pub fn kappa_ks(alpha: f64, n: usize, m: usize) -> Result<f64> {
    check_alpha(alpha)?;
    check_count("n", n)?;
    check_count("m", m)?;
    let (n, m) = (n as f64, m as f64);
    Ok(((n + m) / (2.0 * n * m) * (2.0 / alpha).ln()).sqrt())
}

/// Hoeffding tail bound `2 exp(−2nκ²/τ_max²)`.
pub fn hoeffding_bound(kappa: f64, n: usize, tau_max: f64) -> f64 {
    2.0 * (-2.0 * n as f64 * kappa * kappa / (tau_max * tau_max)).exp()
}

/// Two-sample Hoeffding bound `2 exp(−2nmκ²/((n+m) τ_max²))`.
pub fn hoeffding_two_sample_bound(kappa: f64, n: usize, m: usize, tau_max: f64) -> f64 {
    let (n, m) = (n as f64, m as f64);
    2.0 * (-2.0 * n * m * kappa * kappa / ((n + m) * tau_max * tau_max)).exp()
}

/// DKW bound `2 exp(−2nκ²)`.
pub fn dkw_bound(kappa: f64, n: usize) -> f64 {
    2.0 * (-2.0 * n as f64 * kappa * kappa).exp()
}

/// Two-sample DKW-type bound `2 exp(−2nmκ²/(n+m))`.
pub fn ks_two_sample_bound(kappa: f64, n: usize, m: usize) -> f64 {
    let (n, m) = (n as f64, m as f64);
    2.0 * (-2.0 * n * m * kappa * kappa / (n + m)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerKind {
    ExactMean,
    ApproxMean,
    ExactCdf,
    TwoSampleKs,
}

impl TriggerKind {
    pub const ALL: [TriggerKind; 4] = [
        TriggerKind::ExactMean,
        TriggerKind::ApproxMean,
        TriggerKind::ExactCdf,
        TriggerKind::TwoSampleKs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TriggerKind::ExactMean => "exact_mean",
            TriggerKind::ApproxMean => "approx_mean",
            TriggerKind::ExactCdf => "exact_cdf",
            TriggerKind::TwoSampleKs => "two_sample_ks",
        }
    }

    /// Mean triggers fire on `≥`, CDF triggers on strict `>`.
    pub fn fires(self, statistic: f64, kappa: f64) -> bool {
        match self {
            TriggerKind::ExactMean | TriggerKind::ApproxMean => statistic >= kappa,
            TriggerKind::ExactCdf | TriggerKind::TwoSampleKs => statistic > kappa,
        }
    }
}

impl std::fmt::Display for TriggerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TriggerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TriggerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown trigger kind {s:?}")))
    }
}

/// Outcome of one learning-trigger evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerVerdict {
    pub kind: TriggerKind,
    pub fired: bool,
    pub statistic: f64,
    pub kappa: f64,
    pub buffer_size: usize,
    /// Size of the model-based sample; 0 for the exact triggers.
    pub mc_size: usize,
    pub alpha: f64,
}

fn mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// `|mean(τ) − E[τ]| ≥ κ_exact`, with `E[τ]` supplied by the caller.
pub fn exact_mean_trigger(
    buffer: &[f64],
    expected_tau: f64,
    alpha: f64,
    tau_max: f64,
) -> Result<TriggerVerdict> {
    let statistic = (mean(buffer)? - expected_tau).abs();
    let kappa = kappa_exact_mean(alpha, buffer.len(), tau_max)?;
    Ok(TriggerVerdict {
        kind: TriggerKind::ExactMean,
        fired: TriggerKind::ExactMean.fires(statistic, kappa),
        statistic,
        kappa,
        buffer_size: buffer.len(),
        mc_size: 0,
        alpha,
    })
}

/// `|mean(τ) − mean(τ̂)| ≥ κ_approx`.
pub fn approx_mean_trigger(
    buffer: &[f64],
    mc_sample: &[f64],
    alpha: f64,
    tau_max: f64,
) -> Result<TriggerVerdict> {
    let statistic = (mean(buffer)? - mean(mc_sample)?).abs();
    let kappa = kappa_approx_mean(alpha, buffer.len(), mc_sample.len(), tau_max)?;
    Ok(TriggerVerdict {
        kind: TriggerKind::ApproxMean,
        fired: TriggerKind::ApproxMean.fires(statistic, kappa),
        statistic,
        kappa,
        buffer_size: buffer.len(),
        mc_size: mc_sample.len(),
        alpha,
    })
}

/// `sup_t |F(t) − F_n(t)|` for a model CDF `F`.
///
/// Between support points `F_n` is constant and `F` nondecreasing, so the
/// supremum is attained at a support point `v` either at `F(v)` against
/// `F_n(v)` or at the left limit `F(v−)` against `F_n(v−)`.
pub fn one_sample_sup_distance<F: Cdf + ?Sized>(sample: &[f64], model: &F) -> Result<f64> {
    let ecdf = EmpiricalCdf::from_values(sample)?;
    let n = ecdf.len() as f64;
    let sorted = ecdf.sorted_values();
    let mut sup = 0.0f64;
    let mut prev_f = 0.0f64;
    let mut below = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i];
        let mut j = i;
        while j < sorted.len() && sorted[j] == v {
            j += 1;
        }
        let f = model.cdf(v);
        let f_left = model.cdf_left(v);
        if !(0.0..=1.0).contains(&f) || !(0.0..=1.0).contains(&f_left) {
            return Err(Error::InvalidCdf(format!("value outside [0, 1] at t = {v}")));
        }
        if f_left > f + 1e-12 || f_left + 1e-12 < prev_f {
            return Err(Error::InvalidCdf(format!("not nondecreasing at t = {v}")));
        }
        sup = sup
            .max((f_left - below as f64 / n).abs())
            .max((f - j as f64 / n).abs());
        prev_f = f;
        below = j;
        i = j;
    }
    Ok(sup)
}

/// `sup_t |F_n(t) − G_m(t)|` over the merged support, evaluating both
/// empirical CDFs after all values tied at each support point.
pub fn two_sample_ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut sup = 0.0f64;
    while i < a.len() || j < b.len() {
        let t = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        sup = sup.max((i as f64 / n - j as f64 / m).abs());
    }
    Ok(sup)
}

/// `sup_t |F(t) − F_n(t)| > κ_exact`.
pub fn exact_cdf_trigger<F: Cdf + ?Sized>(buffer: &[f64], model_cdf: &F, alpha: f64) -> Result<TriggerVerdict> {
    let statistic = one_sample_sup_distance(buffer, model_cdf)?;
    let kappa = kappa_exact_cdf(alpha, buffer.len())?;
    Ok(TriggerVerdict {
        kind: TriggerKind::ExactCdf,
        fired: TriggerKind::ExactCdf.fires(statistic, kappa),
        statistic,
        kappa,
        buffer_size: buffer.len(),
        mc_size: 0,
        alpha,
    })
}

/// `sup_t |F̂_m(t) − F_n(t)| > κ_approx` (two-sample Kolmogorov-Smirnov).
pub fn ks_trigger(buffer: &[f64], mc_sample: &[f64], alpha: f64) -> Result<TriggerVerdict> {
    let statistic = two_sample_ks_statistic(buffer, mc_sample)?;
    let kappa = kappa_ks(alpha, buffer.len(), mc_sample.len())?;
    Ok(TriggerVerdict {
        kind: TriggerKind::TwoSampleKs,
        fired: TriggerKind::TwoSampleKs.fires(statistic, kappa),
        statistic,
        kappa,
        buffer_size: buffer.len(),
        mc_size: mc_sample.len(),
        alpha,
    })
}

/// What a learning trigger compares the buffer against.
pub enum Reference<'a> {
    /// Model-based Monte Carlo sample (approx mean and KS triggers).
    Sample(&'a StoppingSample),
    /// Known expected stopping time (exact mean trigger).
    Expected(f64),
    /// Known stopping-time CDF (exact CDF trigger).
    Distribution(&'a dyn Cdf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferPolicy {
    /// Evaluate once the buffer is full, then start over.
    #[default]
    FillThenEvaluate,
    /// Evaluate on every new entry once full, dropping the oldest. Overlapping
    /// windows are not independent, so the `α` guarantee does not carry over
    /// across evaluations.
    SlidingWindow,
}

/// Stopping-time buffer of capacity `n` feeding a learning trigger.
#[derive(Debug, Clone)]
pub struct TriggerBuffer {
    capacity: usize,
    policy: BufferPolicy,
    entries: std::collections::VecDeque<f64>,
}

impl TriggerBuffer {
    pub fn new(capacity: usize, policy: BufferPolicy) -> Result<Self> {
        check_count("buffer capacity", capacity)?;
        Ok(Self {
            capacity,
            policy,
            entries: std::collections::VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn policy(&self) -> BufferPolicy {
        self.policy
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() == self.capacity
    }

    /// Adds an entry; returns `true` when the buffer is ready for evaluation.
    pub fn push(&mut self, tau: f64) -> bool {
        if self.is_full() {
            match self.policy {
                BufferPolicy::SlidingWindow => {
                    self.entries.pop_front();
                }
                // A full fill-then-evaluate buffer that was not cleared after
                // evaluation starts a fresh block.
                BufferPolicy::FillThenEvaluate => self.entries.clear(),
            }
        }
        self.entries.push_back(tau);
        self.is_full()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn entries(&self) -> Vec<f64> {
        self.entries.iter().copied().collect()
    }

    pub fn mean(&self) -> Option<f64> {
        (!self.is_empty()).then(|| self.entries.iter().sum::<f64>() / self.len() as f64)
    }

    /// Runs `kind` against `reference`. Requires a full buffer and, for
    /// sample references, a sample of the declared size `m`.
    pub fn evaluate(
        &mut self,
        kind: TriggerKind,
        reference: Reference<'_>,
        m: usize,
        alpha: f64,
        tau_max: f64,
    ) -> Result<TriggerVerdict> {
        if !self.is_full() {
            return Err(Error::UnderfullBuffer {
                len: self.len(),
                capacity: self.capacity,
            });
        }
        let buffer = self.entries();
        let verdict = match (kind, reference) {
            (TriggerKind::ExactMean, Reference::Expected(e)) => {
                exact_mean_trigger(&buffer, e, alpha, tau_max)?
            }
            (TriggerKind::ExactCdf, Reference::Distribution(cdf)) => {
                exact_cdf_trigger(&buffer, cdf, alpha)?
            }
            (TriggerKind::ApproxMean | TriggerKind::TwoSampleKs, Reference::Sample(s)) => {
                if s.len() != m {
                    return Err(Error::SizeMismatch {
                        declared: m,
                        got: s.len(),
                    });
                }
                if kind == TriggerKind::ApproxMean {
                    approx_mean_trigger(&buffer, s.values(), alpha, tau_max)?
                } else {
                    ks_trigger(&buffer, s.values(), alpha)?
                }
            }
            (kind, _) => {
                return Err(Error::InvalidParameter(format!(
                    "reference does not match trigger kind {kind}"
                )))
            }
        };
        if verdict.fired || self.policy == BufferPolicy::FillThenEvaluate {
            self.clear();
        }
        Ok(verdict)
    }
}
