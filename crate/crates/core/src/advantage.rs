//! Group-relative advantages and the clipped policy-gradient objective.

use serde::{Deserialize, Serialize};
use std::str::FromStr;

use crate::distill::softmax;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdvantageMode {
    /// `(r - mean) / max(std, sigma_eps)` with the population std.
    #[serde(rename = "STD_NORM")]
    StdNorm,
    /// `r - mean`, no std division.
    #[serde(rename = "UNBIASED")]
    Unbiased,
}

impl FromStr for AdvantageMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "std_norm" => Ok(AdvantageMode::StdNorm),
            "unbiased" => Ok(AdvantageMode::Unbiased),
            other => Err(Error::Config(format!("unknown advantage mode: {other}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdvantageResult {
    pub advantages: Vec<f64>,
    pub group_mean: f64,
    pub group_std: f64,
    pub mode: AdvantageMode,
}

/// Group-relative advantages for one rollout group.
pub fn group_advantage(
    rewards: &[f64],
    mode: AdvantageMode,
    sigma_eps: f64,
) -> Result<AdvantageResult> {
    if rewards.len() < 2 {
        return Err(Error::Input(format!(
            "group advantage needs at least 2 rewards, got {}",
            rewards.len()
        )));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let advantages = match mode {
        AdvantageMode::StdNorm => {
            let denom = std.max(sigma_eps);
            rewards.iter().map(|r| (r - mean) / denom).collect()
        }
        AdvantageMode::Unbiased => rewards.iter().map(|r| r - mean).collect(),
    };
    Ok(AdvantageResult {
        advantages,
        group_mean: mean,
        group_std: std,
        mode,
    })
}

fn check_grpo_shapes(
    new_logprobs: &[Vec<f64>],
    old_logprobs: &[Vec<f64>],
    advantages: &[f64],
    eps_low: f64,
    eps_high: f64,
) -> Result<()> {
    if eps_low <= 0.0 || eps_high <= 0.0 {
        return Err(Error::Config(format!(
            "clip bounds must be positive, got eps_low {eps_low}, eps_high {eps_high}"
        )));
    }
    if new_logprobs.len() != old_logprobs.len() || new_logprobs.len() != advantages.len() {
        return Err(Error::Input(format!(
            "rollout count mismatch: {} new, {} old, {} advantages",
            new_logprobs.len(),
            old_logprobs.len(),
            advantages.len()
        )));
    }
    if new_logprobs.is_empty() {
        return Err(Error::Input("empty rollout group".into()));
    }
    for (i, (n, o)) in new_logprobs.iter().zip(old_logprobs.iter()).enumerate() {
        if n.len() != o.len() {
            return Err(Error::Input(format!(
                "rollout {i}: token count mismatch {} vs {}",
                n.len(),
                o.len()
            )));
        }
        if n.is_empty() {
            return Err(Error::Input(format!("rollout {i} has no tokens")));
        }
    }
    Ok(())
}

/// Clipped surrogate loss over one rollout group:
/// `-(1/G) sum_i (1/|y_i|) sum_t min(rho*A_i, clip(rho, 1-eps_low, 1+eps_high)*A_i)`
/// with `rho = exp(new - old)`.
pub fn grpo_loss(
    new_logprobs: &[Vec<f64>],
    old_logprobs: &[Vec<f64>],
    advantages: &[f64],
    eps_low: f64,
    eps_high: f64,
) -> Result<f64> {
    let (loss, _) = grpo_loss_grad(new_logprobs, old_logprobs, advantages, eps_low, eps_high)?;
    Ok(loss)
}

/// Loss plus gradient with respect to `new_logprobs`. Gradient flows only
/// through `new_logprobs`; old log-probs and advantages are constants.
pub fn grpo_loss_grad(
    new_logprobs: &[Vec<f64>],
    old_logprobs: &[Vec<f64>],
    advantages: &[f64],
    eps_low: f64,
    eps_high: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    check_grpo_shapes(new_logprobs, old_logprobs, advantages, eps_low, eps_high)?;
    let g = new_logprobs.len() as f64;
    let lo = 1.0 - eps_low;
    let hi = 1.0 + eps_high;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(new_logprobs.len());
    for ((news, olds), &a) in new_logprobs.iter().zip(old_logprobs.iter()).zip(advantages) {
        let t_len = news.len() as f64;
        let scale = -1.0 / (g * t_len);
        let mut grad = vec![0.0; news.len()];
        for (t, (&nl, &ol)) in news.iter().zip(olds.iter()).enumerate() {
            let rho = (nl - ol).exp();
            let unclipped = rho * a;
            let clipped = rho.clamp(lo, hi) * a;
            if unclipped <= clipped {
                loss += scale * unclipped;
                grad[t] = scale * rho * a;
            } else {
                loss += scale * clipped;
                // The clip branch is active only when rho sits outside the
                // clamp interval, where its derivative is zero.
                grad[t] = 0.0;
            }
        }
        grads.push(grad);
    }
    Ok((loss, grads))
}

/// GRPO loss and gradient computed from raw student logits: the per-token
/// log-prob of the sampled token is `log_softmax(logits_t)[y_t]`. Returns the
/// gradient with respect to every logit (row-major `T x vocab` per rollout).
pub fn grpo_loss_from_logits(
    logits: &[Vec<f64>],
    token_ids: &[Vec<u32>],
    old_logprobs: &[Vec<f64>],
    advantages: &[f64],
    vocab: usize,
    eps_low: f64,
    eps_high: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if logits.len() != token_ids.len() {
        return Err(Error::Input(format!(
            "rollout count mismatch: {} logit blocks, {} token sequences",
            logits.len(),
            token_ids.len()
        )));
    }
    let mut new_logprobs = Vec::with_capacity(logits.len());
    let mut probs_cache: Vec<Vec<Vec<f64>>> = Vec::with_capacity(logits.len());
    for (block, ids) in logits.iter().zip(token_ids.iter()) {
        if block.len() != ids.len() * vocab {
            return Err(Error::Input(format!(
                "logit block has {} values, expected {} tokens x {} vocab",
                block.len(),
                ids.len(),
                vocab
            )));
        }
        let mut nl = Vec::with_capacity(ids.len());
        let mut rows = Vec::with_capacity(ids.len());
        for (t, &id) in ids.iter().enumerate() {
            let row = &block[t * vocab..(t + 1) * vocab];
            let p = softmax(row);
            nl.push(p[id as usize].max(1e-300).ln());
            rows.push(p);
        }
        new_logprobs.push(nl);
        probs_cache.push(rows);
    }
    let (loss, dnl) = grpo_loss_grad(&new_logprobs, old_logprobs, advantages, eps_low, eps_high)?;

    // Chain rule through log-softmax: d nl / d logit_j = 1[j = y] - p_j.
    let mut dlogits = Vec::with_capacity(logits.len());
    for ((gnl, ids), rows) in dnl.iter().zip(token_ids.iter()).zip(probs_cache.iter()) {
        let mut block = vec![0.0; ids.len() * vocab];
        for (t, (&g, &id)) in gnl.iter().zip(ids.iter()).enumerate() {
            if g == 0.0 {
                continue;
            }
            let p = &rows[t];
            let out = &mut block[t * vocab..(t + 1) * vocab];
            for j in 0..vocab {
                out[j] = -g * p[j];
            }
            out[id as usize] += g;
        }
        dlogits.push(block);
    }
    Ok((loss, dlogits))
}
