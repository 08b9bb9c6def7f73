//! Naive re-derivation of the GRPO objective for a softmax toy policy.

/// One group in plain form: context, token sequences, advantages,
/// old-policy log-probabilities per token.
pub struct Group {
    pub context: usize,
    pub seqs: Vec<Vec<usize>>,
    pub adv: Vec<f64>,
    pub logp_old: Vec<Vec<f64>>,
}

pub struct Setup {
    pub vocab: usize,
    pub eps: f64,
    pub beta: f64,
    pub length_normalize: bool,
    /// true: exact categorical KL; false: per-token r − ln r − 1, r = π_ref/π_θ.
    pub exact_kl: bool,
    pub reference: Vec<f64>,
    pub groups: Vec<Group>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = logits.iter().map(|x| x.exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// `min(ρA, clip(ρ, 1−ε, 1+ε)A)` written out case by case.
pub fn clipped_term(ratio: f64, a: f64, eps: f64) -> f64 {
    let lo = 1.0 - eps;
    let hi = 1.0 + eps;
    let c = if ratio < lo {
        lo
    } else if ratio > hi {
        hi
    } else {
        ratio
    };
    let x = ratio * a;
    let y = c * a;
    if x < y {
        x
    } else {
        y
    }
}

pub fn objective(theta: &[f64], s: &Setup) -> f64 {
    let v = s.vocab;
    let mut total = 0.0;
    for g in &s.groups {
        let p = softmax(&theta[g.context * v..(g.context + 1) * v]);
        let q = softmax(&s.reference[g.context * v..(g.context + 1) * v]);
        let big_g = g.seqs.len() as f64;
        let mut surr = 0.0;
        let mut kl_tok = 0.0;
        for (i, seq) in g.seqs.iter().enumerate() {
            let w = if s.length_normalize { 1.0 / seq.len() as f64 } else { 1.0 };
            for (t, &tok) in seq.iter().enumerate() {
                let ratio = p[tok] / g.logp_old[i][t].exp();
                surr += w * clipped_term(ratio, g.adv[i], s.eps);
                let r = q[tok] / p[tok];
                kl_tok += w * (r - r.ln() - 1.0);
            }
        }
        let kl = if s.exact_kl {
            p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum::<f64>()
        } else {
            kl_tok / big_g
        };
        total += surr / big_g - s.beta * kl;
    }
    total / s.groups.len() as f64
}

/// Central finite-difference gradient of [`objective`].
pub fn fd_gradient(theta: &[f64], s: &Setup, h: f64) -> Vec<f64> {
    (0..theta.len())
        .map(|k| {
            let mut a = theta.to_vec();
            let mut b = theta.to_vec();
            a[k] += h;
            b[k] -= h;
            (objective(&a, s) - objective(&b, s)) / (2.0 * h)
        })
        .collect()
}
