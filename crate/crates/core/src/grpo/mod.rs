//! Multi-task GRPO mathematics.
//!
//! Curriculum weights `p_t ∝ (1 − s_t)^α` over tasks with validation
//! accuracy `s_t`, group-standardized advantages, the clipped importance
//! ratio surrogate with a KL penalty toward a reference policy, a softmax
//! toy policy with an analytic gradient of that objective, and a bandit-style
//! multi-task training simulator.

mod objective;
mod sim;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use objective::{
    grpo_step, surrogate_objective, token_term, Response, RolloutGroup, SurrogateReport, TokenTerm, ToyPolicy,
};
pub use sim::{
    simulate_training, worst_task_accuracy, write_trajectory, SimScenario, SimTask, TrajectoryRecord,
};

#[derive(Debug, Error)]
pub enum GrpoError {
    #[error("every task has accuracy 1 and alpha > 0, so all weights are zero")]
    DegenerateMixture,
    #[error("invalid task mixture: {0}")]
    InvalidMixture(String),
    #[error("a group needs at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("group {group} response {response}: token and log-probability counts differ")]
    MissingLogProb { group: usize, response: usize },
    #[error("q is zero at index {0} where p is positive")]
    SupportViolation(usize),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("token {token} outside a vocabulary of {vocab}")]
    TokenOutOfVocab { token: usize, vocab: usize },
    #[error("context {context} outside a policy with {contexts} contexts")]
    ContextOutOfRange { context: usize, contexts: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{path}: {message}")]
    Io { path: std::path::PathBuf, message: String },
}

/// Tasks with their post-SFT validation accuracies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMixture {
    pub tasks: Vec<String>,
    pub s: Vec<f64>,
    pub alpha: f64,
}

impl TaskMixture {
    pub fn new(tasks: Vec<String>, s: Vec<f64>, alpha: f64) -> Result<TaskMixture, GrpoError> {
        let m = TaskMixture { tasks, s, alpha };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), GrpoError> {
        if self.tasks.is_empty() {
            return Err(GrpoError::InvalidMixture("no tasks".into()));
        }
        if self.tasks.len() != self.s.len() {
            return Err(GrpoError::InvalidMixture(format!(
                "{} tasks but {} accuracies",
                self.tasks.len(),
                self.s.len()
            )));
        }
        if let Some(bad) = self.s.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(GrpoError::InvalidMixture(format!("accuracy {bad} outside [0, 1]")));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(GrpoError::InvalidMixture(format!("alpha {} must be finite and >= 0", self.alpha)));
        }
        Ok(())
    }
}

/// Sampling probability per task, `(1 − s_t)^α / Σ (1 − s_t')^α`.
/// `α = 0` is exactly uniform, including tasks at accuracy 1.
pub fn sampling_weights(mixture: &TaskMixture) -> Result<Vec<f64>, GrpoError> {
    mixture.validate()?;
    let n = mixture.s.len();
    if mixture.alpha == 0.0 {
        return Ok(vec![1.0 / n as f64; n]);
    }
    let raw: Vec<f64> = mixture.s.iter().map(|s| (1.0 - s).powf(mixture.alpha)).collect();
    let total: f64 = raw.iter().sum();
    if total == 0.0 {
        return Err(GrpoError::DegenerateMixture);
    }
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Index of a task drawn according to `weights`.
pub fn sample_task<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Result<usize, GrpoError> {
    let dist = WeightedIndex::new(weights).map_err(|e| GrpoError::InvalidMixture(e.to_string()))?;
    Ok(dist.sample(rng))
}

/// How the KL penalty is computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlEstimator {
    /// Exact categorical KL of the context distributions (toy policies only).
    #[default]
    Exact,
    /// Per-token `ratio − log ratio − 1` with `ratio = π_ref / π_θ`, summed
    /// with the same weights as the surrogate.
    PerToken,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrpoConfig {
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub advantage_epsilon: f64,
    pub group_size: usize,
    /// Divide each response's token sum by its length.
    pub length_normalize: bool,
    pub kl_estimator: KlEstimator,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            clip_epsilon: 0.2,
            kl_beta: 0.01,
            advantage_epsilon: 1e-8,
            group_size: 5,
            length_normalize: false,
            kl_estimator: KlEstimator::Exact,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(GrpoError::InvalidConfig(format!("clip_epsilon {} not in (0, 1)", self.clip_epsilon)));
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            return Err(GrpoError::InvalidConfig(format!("kl_beta {} must be >= 0", self.kl_beta)));
        }
        if self.advantage_epsilon.is_nan() || self.advantage_epsilon < 0.0 {
            return Err(GrpoError::InvalidConfig("advantage_epsilon must be >= 0".into()));
        }
        if self.group_size < 2 {
            return Err(GrpoError::GroupTooSmall(self.group_size));
        }
        Ok(())
    }
}

/// `(r − mean) / (std + ε)` with the population standard deviation; a group
/// of equal rewards gets all-zero advantages.
pub fn group_advantages(rewards: &[f64], cfg: &GrpoConfig) -> Result<Vec<f64>, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall(rewards.len()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    if rewards.iter().all(|r| *r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(rewards.iter().map(|r| (r - mean) / (std + cfg.advantage_epsilon)).collect())
}

/// `Σ p log(p / q)`; terms with `p = 0` contribute nothing.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64, GrpoError> {
    if p.len() != q.len() {
        return Err(GrpoError::LengthMismatch(format!("p has {} entries, q has {}", p.len(), q.len())));
    }
    let mut kl = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(GrpoError::SupportViolation(i));
            }
            kl += pi * (pi / qi).ln();
        }
    }
    Ok(kl.max(0.0))
}
