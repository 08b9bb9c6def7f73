//! Random toy-policy configurations for the gradient checks, paired with
//! the plain description the oracle evaluates.

use protochem::grpo::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::grpo_oracle::{Group, Setup};

/// Configurations with a ratio this close to a clip edge are skipped, since
/// the objective has a kink there and finite differences are meaningless.
pub const KINK_MARGIN: f64 = 1e-3;

pub struct Config {
    pub policy: ToyPolicy,
    pub reference: ToyPolicy,
    pub groups: Vec<RolloutGroup>,
    pub cfg: GrpoConfig,
    pub oracle: Setup,
}

pub fn random_config(rng: &mut ChaCha8Rng) -> Config {
    let contexts = rng.random_range(1..=3);
    let vocab = rng.random_range(2..=5);
    let logits = |scale: f64, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..contexts * vocab).map(|_| rng.random_range(-scale..scale)).collect()
    };
    let old = logits(1.5, rng);
    let reference = logits(1.5, rng);
    let theta: Vec<f64> = old.iter().map(|x| x + rng.random_range(-0.4..0.4)).collect();
    let cfg = GrpoConfig {
        clip_epsilon: rng.random_range(0.1..0.3),
        kl_beta: rng.random_range(0.0..0.5),
        length_normalize: rng.random_bool(0.5),
        kl_estimator: if rng.random_bool(0.5) { KlEstimator::Exact } else { KlEstimator::PerToken },
        ..Default::default()
    };
    let old_p = ToyPolicy::from_params(contexts, vocab, old).unwrap();
    let ref_p = ToyPolicy::from_params(contexts, vocab, reference.clone()).unwrap();
    let mut groups = Vec::new();
    let mut plain = Vec::new();
    for gi in 0..rng.random_range(1..=3) {
        let c = rng.random_range(0..contexts);
        let g = rng.random_range(2..=5);
        let seqs: Vec<Vec<usize>> =
            (0..g).map(|_| (0..rng.random_range(1..=4)).map(|_| rng.random_range(0..vocab)).collect()).collect();
        let rewards: Vec<f64> = (0..g).map(|_| rng.random_range(0.0..1.0)).collect();
        let lo = old_p.log_probs(c);
        let lr = ref_p.log_probs(c);
        let responses = seqs
            .iter()
            .map(|s| Response {
                tokens: s.clone(),
                logp_theta: vec![],
                logp_old: s.iter().map(|&t| lo[t]).collect(),
                logp_ref: s.iter().map(|&t| lr[t]).collect(),
            })
            .collect();
        let group = RolloutGroup::new(format!("g{gi}"), c, responses, rewards, &cfg).unwrap();
        plain.push(Group {
            context: c,
            logp_old: seqs.iter().map(|s| s.iter().map(|&t| lo[t]).collect()).collect(),
            seqs,
            adv: group.advantages.clone(),
        });
        groups.push(group);
    }
    Config {
        policy: ToyPolicy::from_params(contexts, vocab, theta).unwrap(),
        reference: ref_p,
        oracle: Setup {
            vocab,
            eps: cfg.clip_epsilon,
            beta: cfg.kl_beta,
            length_normalize: cfg.length_normalize,
            exact_kl: cfg.kl_estimator == KlEstimator::Exact,
            reference,
            groups: plain,
        },
        groups,
        cfg,
    }
}

pub fn near_kink(c: &Config) -> bool {
    let r = c.policy.evaluate(&c.groups, &c.reference, &c.cfg).unwrap();
    r.terms
        .iter()
        .any(|t| (t.ratio - (1.0 - c.cfg.clip_epsilon)).abs() < KINK_MARGIN || (t.ratio - (1.0 + c.cfg.clip_epsilon)).abs() < KINK_MARGIN)
}
