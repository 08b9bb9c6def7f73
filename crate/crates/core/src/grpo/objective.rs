//! The clipped surrogate with KL penalty, and a softmax toy policy with its
//! analytic gradient.
//!
//! For groups `g = 1..n` of `G` responses each,
//! `J = (1/n) Σ_g [ (1/G) Σ_i w_i Σ_t min(ρ A_i, clip(ρ, 1−ε, 1+ε) A_i) − β KL_g ]`
//! with `ρ = π_θ(o_{i,t}|q) / π_old(o_{i,t}|q)` and `w_i = 1` (or `1/|o_i|`
//! when length normalization is on).

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{group_advantages, kl_divergence, GrpoConfig, GrpoError, KlEstimator};

/// One sampled response with per-token log-probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub tokens: Vec<usize>,
    /// Under the policy being optimized. Recomputed by [`ToyPolicy`].
    pub logp_theta: Vec<f64>,
    pub logp_old: Vec<f64>,
    pub logp_ref: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub question_id: String,
    /// Policy context the question maps to.
    pub context: usize,
    pub responses: Vec<Response>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl RolloutGroup {
    /// Builds a group and computes its advantages from `rewards`.
    pub fn new(
        question_id: impl Into<String>,
        context: usize,
        responses: Vec<Response>,
        rewards: Vec<f64>,
        cfg: &GrpoConfig,
    ) -> Result<RolloutGroup, GrpoError> {
        if responses.len() != rewards.len() {
            return Err(GrpoError::LengthMismatch(format!(
                "{} responses, {} rewards",
                responses.len(),
                rewards.len()
            )));
        }
        let advantages = group_advantages(&rewards, cfg)?;
        Ok(RolloutGroup {
            question_id: question_id.into(),
            context,
            responses,
            rewards,
            advantages,
        })
    }
}

/// One `min(ρA, clip(ρ)A)` term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenTerm {
    pub group: usize,
    pub response: usize,
    pub position: usize,
    pub ratio: f64,
    pub advantage: f64,
    pub value: f64,
    /// The clipped branch is strictly smaller, so the term is flat in θ.
    pub clipped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateReport {
    /// `surrogate − β · kl`.
    pub objective: f64,
    pub surrogate: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    pub terms: Vec<TokenTerm>,
}

/// `(min(ρA, clip(ρ)A), clipped)`.
pub fn token_term(ratio: f64, advantage: f64, epsilon: f64) -> (f64, bool) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
    if clipped < unclipped {
        (clipped, true)
    } else {
        (unclipped, false)
    }
}

fn response_weight(r: &Response, cfg: &GrpoConfig) -> f64 {
    match (cfg.length_normalize, r.tokens.len()) {
        (_, 0) => 0.0,
        (true, n) => 1.0 / n as f64,
        (false, _) => 1.0,
    }
}

/// Per-token KL estimate `ratio − ln ratio − 1` with `ratio = π_ref / π_θ`.
fn k3(logp_theta: f64, logp_ref: f64) -> f64 {
    let d = logp_ref - logp_theta;
    d.exp() - d - 1.0
}

fn check_group(gi: usize, g: &RolloutGroup, need_theta: bool) -> Result<(), GrpoError> {
    if g.responses.len() != g.advantages.len() {
        return Err(GrpoError::LengthMismatch(format!(
            "group {gi}: {} responses, {} advantages",
            g.responses.len(),
            g.advantages.len()
        )));
    }
    for (ri, r) in g.responses.iter().enumerate() {
        let n = r.tokens.len();
        if r.logp_old.len() != n || r.logp_ref.len() != n || (need_theta && r.logp_theta.len() != n) {
            return Err(GrpoError::MissingLogProb { group: gi, response: ri });
        }
    }
    Ok(())
}

/// Shared evaluation over groups; `theta(g, i, t)` gives `log π_θ` and
/// `exact_kl(g)` the per-group exact KL when available.
fn evaluate(
    groups: &[RolloutGroup],
    cfg: &GrpoConfig,
    theta: &dyn Fn(usize, usize, usize) -> f64,
    exact_kl: Option<&dyn Fn(&RolloutGroup) -> Result<f64, GrpoError>>,
) -> Result<SurrogateReport, GrpoError> {
    if groups.is_empty() {
        return Err(GrpoError::EmptyBatch);
    }
    let mut terms = Vec::new();
    let (mut surrogate, mut kl) = (0.0, 0.0);
    for (gi, g) in groups.iter().enumerate() {
        let big_g = g.responses.len().max(1) as f64;
        let (mut s_g, mut kl_g) = (0.0, 0.0);
        for (ri, r) in g.responses.iter().enumerate() {
            let w = response_weight(r, cfg);
            let a = g.advantages[ri];
            for t in 0..r.tokens.len() {
                let lp = theta(gi, ri, t);
                let ratio = (lp - r.logp_old[t]).exp();
                let (value, clipped) = token_term(ratio, a, cfg.clip_epsilon);
                s_g += w * value;
                if exact_kl.is_none() {
                    kl_g += w * k3(lp, r.logp_ref[t]);
                }
                terms.push(TokenTerm {
                    group: gi,
                    response: ri,
                    position: t,
                    ratio,
                    advantage: a,
                    value,
                    clipped,
                });
            }
        }
        surrogate += s_g / big_g;
        kl += match exact_kl {
            Some(f) => f(g)?,
            None => kl_g / big_g,
        };
    }
    let n = groups.len() as f64;
    let (surrogate, kl) = (surrogate / n, kl / n);
    let clip_fraction = if terms.is_empty() {
        0.0
    } else {
        terms.iter().filter(|t| t.clipped).count() as f64 / terms.len() as f64
    };
    Ok(SurrogateReport {
        objective: surrogate - cfg.kl_beta * kl,
        surrogate,
        kl,
        clip_fraction,
        terms,
    })
}

/// The objective from stored log-probabilities. The KL term always uses the
/// per-token estimator since no full distributions are available.
pub fn surrogate_objective(groups: &[RolloutGroup], cfg: &GrpoConfig) -> Result<SurrogateReport, GrpoError> {
    cfg.validate()?;
    for (gi, g) in groups.iter().enumerate() {
        check_group(gi, g, true)?;
    }
    evaluate(groups, cfg, &|g, i, t| groups[g].responses[i].logp_theta[t], None)
}

/// A categorical policy per context: `π(v | c) = softmax(θ_c)_v`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    contexts: usize,
    vocab: usize,
    theta: Vec<f64>,
}

impl ToyPolicy {
    /// Uniform policy.
    pub fn new(contexts: usize, vocab: usize) -> ToyPolicy {
        ToyPolicy {
            contexts,
            vocab,
            theta: vec![0.0; contexts * vocab],
        }
    }

    /// Row-major `contexts × vocab` logits.
    pub fn from_params(contexts: usize, vocab: usize, theta: Vec<f64>) -> Result<ToyPolicy, GrpoError> {
        if contexts == 0 || vocab == 0 || theta.len() != contexts * vocab {
            return Err(GrpoError::LengthMismatch(format!(
                "{} parameters for {contexts} contexts x {vocab} tokens",
                theta.len()
            )));
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(GrpoError::InvalidConfig("non-finite logit".into()));
        }
        Ok(ToyPolicy { contexts, vocab, theta })
    }

    pub fn contexts(&self) -> usize {
        self.contexts
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn params(&self) -> &[f64] {
        &self.theta
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    fn row(&self, c: usize) -> &[f64] {
        &self.theta[c * self.vocab..(c + 1) * self.vocab]
    }

    pub fn log_probs(&self, c: usize) -> Vec<f64> {
        let row = self.row(c);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        row.iter().map(|x| x - lse).collect()
    }

    pub fn probs(&self, c: usize) -> Vec<f64> {
        self.log_probs(c).into_iter().map(f64::exp).collect()
    }

    pub fn log_prob(&self, c: usize, token: usize) -> Result<f64, GrpoError> {
        self.check(c, token)?;
        Ok(self.log_probs(c)[token])
    }

    pub fn sample<R: Rng + ?Sized>(&self, c: usize, rng: &mut R) -> usize {
        WeightedIndex::new(self.probs(c)).expect("softmax weights are positive").sample(rng)
    }

    fn check(&self, c: usize, token: usize) -> Result<(), GrpoError> {
        if c >= self.contexts {
            return Err(GrpoError::ContextOutOfRange {
                context: c,
                contexts: self.contexts,
            });
        }
        if token >= self.vocab {
            return Err(GrpoError::TokenOutOfVocab { token, vocab: self.vocab });
        }
        Ok(())
    }

    fn check_groups(&self, groups: &[RolloutGroup], reference: &ToyPolicy, cfg: &GrpoConfig) -> Result<(), GrpoError> {
        cfg.validate()?;
        if reference.contexts != self.contexts || reference.vocab != self.vocab {
            return Err(GrpoError::LengthMismatch("reference policy has a different shape".into()));
        }
        for (gi, g) in groups.iter().enumerate() {
            check_group(gi, g, false)?;
            for r in &g.responses {
                for &tok in &r.tokens {
                    self.check(g.context, tok)?;
                }
            }
        }
        Ok(())
    }

    /// The objective with `log π_θ` recomputed from this policy.
    pub fn evaluate(
        &self,
        groups: &[RolloutGroup],
        reference: &ToyPolicy,
        cfg: &GrpoConfig,
    ) -> Result<SurrogateReport, GrpoError> {
        self.check_groups(groups, reference, cfg)?;
        let logp: Vec<Vec<f64>> = (0..self.contexts).map(|c| self.log_probs(c)).collect();
        let theta = |g: usize, i: usize, t: usize| logp[groups[g].context][groups[g].responses[i].tokens[t]];
        match cfg.kl_estimator {
            KlEstimator::PerToken => evaluate(groups, cfg, &theta, None),
            KlEstimator::Exact => {
                let kl = |g: &RolloutGroup| kl_divergence(&self.probs(g.context), &reference.probs(g.context));
                evaluate(groups, cfg, &theta, Some(&kl))
            }
        }
    }

    /// Analytic `∂J/∂θ`, laid out like [`ToyPolicy::params`].
    pub fn gradient(&self, groups: &[RolloutGroup], reference: &ToyPolicy, cfg: &GrpoConfig) -> Result<Vec<f64>, GrpoError> {
        self.check_groups(groups, reference, cfg)?;
        if groups.is_empty() {
            return Err(GrpoError::EmptyBatch);
        }
        let v = self.vocab;
        let n = groups.len() as f64;
        let mut grad = vec![0.0; self.theta.len()];
        for g in groups {
            let c = g.context;
            let logp = self.log_probs(c);
            let p: Vec<f64> = logp.iter().map(|x| x.exp()).collect();
            let big_g = g.responses.len().max(1) as f64;
            let row = &mut grad[c * v..(c + 1) * v];
            // Coefficient on ∇ log π_θ(tok | c) = e_tok − p, per token.
            for (ri, r) in g.responses.iter().enumerate() {
                let w = response_weight(r, cfg) / big_g / n;
                let a = g.advantages[ri];
                for (t, &tok) in r.tokens.iter().enumerate() {
                    let ratio = (logp[tok] - r.logp_old[t]).exp();
                    let mut coef = 0.0;
                    if !token_term(ratio, a, cfg.clip_epsilon).1 {
                        coef += a * ratio;
                    }
                    if cfg.kl_estimator == KlEstimator::PerToken {
                        coef -= cfg.kl_beta * (1.0 - (r.logp_ref[t] - logp[tok]).exp());
                    }
                    let coef = coef * w;
                    for (k, g_k) in row.iter_mut().enumerate() {
                        *g_k += coef * (if k == tok { 1.0 } else { 0.0 } - p[k]);
                    }
                }
            }
            if cfg.kl_estimator == KlEstimator::Exact {
                let q = reference.probs(c);
                let log_ratio: Vec<f64> = logp.iter().zip(&q).map(|(lp, q)| lp - q.ln()).collect();
                let kl: f64 = p.iter().zip(&log_ratio).map(|(p, l)| p * l).sum();
                for k in 0..v {
                    row[k] -= cfg.kl_beta / n * p[k] * (log_ratio[k] - kl);
                }
            }
        }
        Ok(grad)
    }
}

/// One gradient-ascent step `θ ← θ + lr · ∇J`.
pub fn grpo_step(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    groups: &[RolloutGroup],
    cfg: &GrpoConfig,
    learning_rate: f64,
) -> Result<ToyPolicy, GrpoError> {
    let grad = policy.gradient(groups, reference, cfg)?;
    let mut next = policy.clone();
    for (x, g) in next.theta.iter_mut().zip(grad) {
        *x += learning_rate * g;
    }
    Ok(next)
}
