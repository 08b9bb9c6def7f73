//! Synthetic multi-task training: each task is one context of a toy policy,
//! a response is `response_len` tokens, and its reward is the fraction of
//! tokens equal to the task's correct token (token 0). A task's accuracy is
//! the exact probability of emitting the correct token.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::objective::{grpo_step, Response, RolloutGroup, ToyPolicy};
use super::{kl_divergence, sample_task, sampling_weights, GrpoConfig, GrpoError, TaskMixture};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimTask {
    pub id: String,
    /// Starting accuracy, also used as the task's `s_t`. Must lie in (0, 1).
    pub initial_accuracy: f64,
}

/// A simulator scenario, loadable from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimScenario {
    pub tasks: Vec<SimTask>,
    pub alpha: f64,
    pub steps: usize,
    pub questions_per_step: usize,
    pub learning_rate: f64,
    /// Optimizer steps per rollout batch; later epochs can hit the clip.
    pub inner_epochs: usize,
    pub vocab_size: usize,
    pub response_len: usize,
    pub seed: u64,
    /// Re-measure `s_t` every this many steps. Off by default.
    pub refresh_interval: Option<usize>,
    pub grpo: GrpoConfig,
}

impl Default for SimScenario {
    fn default() -> Self {
        SimScenario {
            tasks: Vec::new(),
            alpha: 1.0,
            steps: 30,
            questions_per_step: 4,
            learning_rate: 0.5,
            inner_epochs: 1,
            vocab_size: 8,
            response_len: 1,
            seed: 0,
            refresh_interval: None,
            grpo: GrpoConfig::default(),
        }
    }
}

impl SimScenario {
    pub fn single_task(initial_accuracy: f64) -> SimScenario {
        SimScenario {
            tasks: vec![SimTask {
                id: "task".into(),
                initial_accuracy,
            }],
            ..Default::default()
        }
    }

    pub fn two_task(strong: f64, weak: f64) -> SimScenario {
        SimScenario {
            tasks: vec![
                SimTask {
                    id: "strong".into(),
                    initial_accuracy: strong,
                },
                SimTask {
                    id: "weak".into(),
                    initial_accuracy: weak,
                },
            ],
            ..Default::default()
        }
    }

    pub fn load(path: &Path) -> Result<SimScenario, GrpoError> {
        let text = std::fs::read_to_string(path).map_err(|e| GrpoError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        toml::from_str(&text).map_err(|e| GrpoError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn mixture(&self) -> Result<TaskMixture, GrpoError> {
        TaskMixture::new(
            self.tasks.iter().map(|t| t.id.clone()).collect(),
            self.tasks.iter().map(|t| t.initial_accuracy).collect(),
            self.alpha,
        )
    }

    fn validate(&self) -> Result<(), GrpoError> {
        self.grpo.validate()?;
        self.mixture()?;
        if let Some(t) = self.tasks.iter().find(|t| !(t.initial_accuracy > 0.0 && t.initial_accuracy < 1.0)) {
            return Err(GrpoError::InvalidConfig(format!(
                "task {} initial accuracy must lie in (0, 1)",
                t.id
            )));
        }
        if self.vocab_size < 2 || self.response_len == 0 || self.questions_per_step == 0 || self.inner_epochs == 0 {
            return Err(GrpoError::InvalidConfig(
                "vocab_size >= 2, response_len, questions_per_step and inner_epochs >= 1 required".into(),
            ));
        }
        if self.refresh_interval == Some(0) {
            return Err(GrpoError::InvalidConfig("refresh_interval must be >= 1".into()));
        }
        Ok(())
    }

    /// Policy whose context `t` emits token 0 with probability
    /// `initial_accuracy` and the rest uniformly.
    pub fn initial_policy(&self) -> Result<ToyPolicy, GrpoError> {
        let v = self.vocab_size;
        let mut theta = vec![0.0; self.tasks.len() * v];
        for (c, t) in self.tasks.iter().enumerate() {
            let s = t.initial_accuracy;
            theta[c * v] = (s * (v - 1) as f64 / (1.0 - s)).ln();
        }
        ToyPolicy::from_params(self.tasks.len(), v, theta)
    }
}

/// One line of the trajectory file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub task_id: String,
    pub drawn_count: usize,
    /// `None` when the task was not drawn this step.
    pub mean_reward: Option<f64>,
    pub accuracy_estimate: f64,
    pub clip_fraction: f64,
    pub kl: f64,
}

fn rollout(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    task: usize,
    question: String,
    seed: u64,
    sc: &SimScenario,
) -> Result<RolloutGroup, GrpoError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lp = policy.log_probs(task);
    let lr = reference.log_probs(task);
    let mut responses = Vec::with_capacity(sc.grpo.group_size);
    let mut rewards = Vec::with_capacity(sc.grpo.group_size);
    for _ in 0..sc.grpo.group_size {
        let tokens: Vec<usize> = (0..sc.response_len).map(|_| policy.sample(task, &mut rng)).collect();
        rewards.push(tokens.iter().filter(|&&t| t == 0).count() as f64 / tokens.len() as f64);
        responses.push(Response {
            logp_theta: tokens.iter().map(|&t| lp[t]).collect(),
            logp_old: tokens.iter().map(|&t| lp[t]).collect(),
            logp_ref: tokens.iter().map(|&t| lr[t]).collect(),
            tokens,
        });
    }
    RolloutGroup::new(question, task, responses, rewards, &sc.grpo)
}

/// Runs the scenario. Step 0 records the initial state; steps `1..=steps`
/// record the state after each update. Reproducible per `scenario.seed`.
pub fn simulate_training(scenario: &SimScenario) -> Result<Vec<TrajectoryRecord>, GrpoError> {
    scenario.validate()?;
    let reference = scenario.initial_policy()?;
    let mut policy = reference.clone();
    let mut mixture = scenario.mixture()?;
    let mut weights = sampling_weights(&mixture)?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let n_tasks = scenario.tasks.len();

    let snapshot = |policy: &ToyPolicy, step: usize, drawn: &[usize], rewards: &[f64], clip: f64| {
        (0..n_tasks)
            .map(|t| {
                let p = policy.probs(t);
                TrajectoryRecord {
                    step,
                    task_id: scenario.tasks[t].id.clone(),
                    drawn_count: drawn[t],
                    mean_reward: (drawn[t] > 0).then(|| rewards[t] / drawn[t] as f64),
                    accuracy_estimate: p[0],
                    clip_fraction: clip,
                    kl: kl_divergence(&p, &reference.probs(t)).expect("softmax has full support"),
                }
            })
            .collect::<Vec<_>>()
    };
    let mut out = snapshot(&policy, 0, &vec![0; n_tasks], &vec![0.0; n_tasks], 0.0);

    for step in 1..=scenario.steps {
        if let Some(k) = scenario.refresh_interval {
            if step > 1 && (step - 1) % k == 0 {
                mixture.s = (0..n_tasks).map(|t| policy.probs(t)[0]).collect();
                weights = sampling_weights(&mixture)?;
            }
        }
        let draws: Vec<(usize, u64)> = (0..scenario.questions_per_step)
            .map(|_| Ok((sample_task(&weights, &mut rng)?, rng.random::<u64>())))
            .collect::<Result<_, GrpoError>>()?;
        let groups: Vec<RolloutGroup> = draws
            .par_iter()
            .enumerate()
            .map(|(q, &(task, seed))| rollout(&policy, &reference, task, format!("s{step}q{q}"), seed, scenario))
            .collect::<Result<_, _>>()?;

        let mut drawn = vec![0usize; n_tasks];
        let mut reward_sum = vec![0.0; n_tasks];
        for g in &groups {
            drawn[g.context] += 1;
            reward_sum[g.context] += g.rewards.iter().sum::<f64>() / g.rewards.len() as f64;
        }
        let mut clip = 0.0;
        for _ in 0..scenario.inner_epochs {
            clip = policy.evaluate(&groups, &reference, &scenario.grpo)?.clip_fraction;
            policy = grpo_step(&policy, &reference, &groups, &scenario.grpo, scenario.learning_rate)?;
        }
        out.extend(snapshot(&policy, step, &drawn, &reward_sum, clip));
    }
    Ok(out)
}

/// Lowest task accuracy at the last recorded step.
pub fn worst_task_accuracy(trajectory: &[TrajectoryRecord]) -> Option<f64> {
    let last = trajectory.iter().map(|r| r.step).max()?;
    trajectory
        .iter()
        .filter(|r| r.step == last)
        .map(|r| r.accuracy_estimate)
        .min_by(f64::total_cmp)
}

pub fn write_trajectory(path: &Path, trajectory: &[TrajectoryRecord]) -> Result<(), GrpoError> {
    let mut text = String::new();
    for r in trajectory {
        text.push_str(&serde_json::to_string(r).expect("record serializes"));
        text.push('\n');
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| GrpoError::Io {
            path: dir.to_path_buf(),
            message: e.to_string(),
        })?;
    }
    std::fs::write(path, text).map_err(|e| GrpoError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
