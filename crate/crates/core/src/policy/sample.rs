//! Rollout sampling and next-token distribution extraction.
//!
//! Conditioning layout is always `[bos] context [sep] response...`: the
//! student's context is the problem prompt, the teacher's context is the
//! rendered teacher prompt. Sampled responses keep their terminating `<eos>`
//! as a real token (it contributes an empty byte span), so losses also cover
//! the decision to stop.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tasks::{verify, Problem};

use super::model::{KvCache, PolicyModel};
use super::tokenizer::{Tokenizer, BOS, EOS, SEP};
use crate::distill::TokenDistribution;

#[derive(Debug, Clone)]
pub struct Rollout {
    pub problem_id: String,
    pub token_ids: Vec<u32>,
    pub text: String,
    /// Byte span of each token inside `text`; specials cover an empty span.
    pub offsets: Vec<(usize, usize)>,
    /// Log-probability of each token under the sampling policy.
    pub sample_logprobs: Vec<f64>,
    pub reward: u8,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Builds a rollout directly from text, for tests and offline tooling.
    /// Token ids and offsets come from encoding the text; log-probs are zero.
    pub fn synthetic(tokenizer: &Tokenizer, problem_id: &str, text: &str, reward: u8) -> Rollout {
        let (ids, offsets) = tokenizer.encode(text);
        let n = ids.len();
        Rollout {
            problem_id: problem_id.to_string(),
            token_ids: ids,
            text: text.to_string(),
            offsets,
            sample_logprobs: vec![0.0; n],
            reward,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RolloutGroup {
    pub problem_id: String,
    pub rollouts: Vec<Rollout>,
    /// Indices into `rollouts` with reward 1, in order.
    pub correct: Vec<usize>,
    /// Indices into `rollouts` with reward 0, in order.
    pub wrong: Vec<usize>,
}

impl RolloutGroup {
    pub fn from_rollouts(problem_id: String, rollouts: Vec<Rollout>) -> Self {
        let mut correct = Vec::new();
        let mut wrong = Vec::new();
        for (i, r) in rollouts.iter().enumerate() {
            if r.reward == 1 {
                correct.push(i);
            } else {
                wrong.push(i);
            }
        }
        RolloutGroup {
            problem_id,
            rollouts,
            correct,
            wrong,
        }
    }

    pub fn size(&self) -> usize {
        self.rollouts.len()
    }
}

/// `[bos] context [sep]` conditioning prefix.
pub fn conditioning_ids(tokenizer: &Tokenizer, context_text: &str) -> Vec<u32> {
    let (ctx, _) = tokenizer.encode(context_text);
    let mut ids = Vec::with_capacity(ctx.len() + 2);
    ids.push(BOS);
    ids.extend_from_slice(&ctx);
    ids.push(SEP);
    ids
}

fn tempered_probs(logits: &[f32], temperature: f64) -> Vec<f64> {
    let mut max = f64::NEG_INFINITY;
    for &l in logits {
        let l = l as f64 / temperature;
        if l > max {
            max = l;
        }
    }
    let mut probs: Vec<f64> = logits
        .iter()
        .map(|&l| ((l as f64 / temperature) - max).exp())
        .collect();
    let sum: f64 = probs.iter().sum();
    for p in probs.iter_mut() {
        *p /= sum;
    }
    probs
}

/// Samples one response continuation and returns (token_ids, logprobs).
fn sample_continuation(
    model: &PolicyModel,
    prompt_kv: &KvCache,
    last_logits: &[f32],
    temperature: f64,
    max_len: usize,
    rng: &mut Rng,
) -> Result<(Vec<u32>, Vec<f64>)> {
    let mut kv = prompt_kv.clone();
    let mut logits = last_logits.to_vec();
    let mut ids = Vec::new();
    let mut logprobs = Vec::new();
    for _ in 0..max_len {
        let probs = tempered_probs(&logits, temperature);
        let next = rng.categorical(&probs) as u32;
        ids.push(next);
        logprobs.push(probs[next as usize].max(1e-300).ln());
        if next == EOS {
            break;
        }
        if kv.len() + 1 > model.cfg.max_seq_len {
            break;
        }
        logits = model.decode_step(&mut kv, next)?;
    }
    Ok((ids, logprobs))
}

/// Samples `g` rollouts for one problem, verifies each, and partitions the
/// group into correct and wrong sets.
pub fn sample_rollouts(
    model: &PolicyModel,
    tokenizer: &Tokenizer,
    problem: &Problem,
    g: usize,
    temperature: f64,
    max_len: usize,
    seed: u64,
) -> Result<RolloutGroup> {
    if g < 2 {
        return Err(Error::Input(format!("group size must be >= 2, got {g}")));
    }
    if temperature <= 0.0 {
        return Err(Error::Config(format!(
            "sampling temperature must be > 0, got {temperature}"
        )));
    }
    if max_len == 0 {
        return Err(Error::Input("max_len must be >= 1".into()));
    }
    let prompt = conditioning_ids(tokenizer, &problem.prompt);
    let (prompt_kv, last_logits) = model.prefill(&prompt)?;

    let mut rollouts = Vec::with_capacity(g);
    for g_idx in 0..g {
        let mut rng = Rng::derive(seed, "rollout", &[g_idx as u64]);
        let (ids, logprobs) =
            sample_continuation(model, &prompt_kv, &last_logits, temperature, max_len, &mut rng)?;
        let (text, offsets) = tokenizer.decode_with_offsets(&ids);
        let reward = verify(problem, &text).reward;
        rollouts.push(Rollout {
            problem_id: problem.id.clone(),
            token_ids: ids,
            text,
            offsets,
            sample_logprobs: logprobs,
            reward,
        });
    }
    Ok(RolloutGroup::from_rollouts(problem.id.clone(), rollouts))
}

/// Samples a single response text (evaluation path).
pub fn sample_response(
    model: &PolicyModel,
    tokenizer: &Tokenizer,
    problem: &Problem,
    temperature: f64,
    max_len: usize,
    seed: u64,
) -> Result<String> {
    let prompt = conditioning_ids(tokenizer, &problem.prompt);
    let (kv, last_logits) = model.prefill(&prompt)?;
    let mut rng = Rng::derive(seed, "response", &[]);
    let (ids, _) = sample_continuation(model, &kv, &last_logits, temperature, max_len, &mut rng)?;
    Ok(tokenizer.decode(&ids))
}

/// Greedy decode used by the model-based reflector.
pub fn greedy_generate(
    model: &PolicyModel,
    tokenizer: &Tokenizer,
    prompt_text: &str,
    max_new: usize,
) -> Result<String> {
    let prompt = conditioning_ids(tokenizer, prompt_text);
    let (mut kv, mut logits) = model.prefill(&prompt)?;
    let mut ids = Vec::new();
    for _ in 0..max_new {
        let mut best = 0usize;
        let mut best_v = f32::NEG_INFINITY;
        for (i, &l) in logits.iter().enumerate() {
            if l > best_v {
                best_v = l;
                best = i;
            }
        }
        let next = best as u32;
        ids.push(next);
        if next == EOS || kv.len() + 1 > model.cfg.max_seq_len {
            break;
        }
        logits = model.decode_step(&mut kv, next)?;
    }
    Ok(tokenizer.decode(&ids))
}

/// One full-vocabulary next-token distribution per rollout position,
/// conditioned on `context_text` followed by the rollout prefix.
pub fn next_token_distributions(
    model: &PolicyModel,
    tokenizer: &Tokenizer,
    context_text: &str,
    rollout: &Rollout,
) -> Result<Vec<TokenDistribution>> {
    let logits = response_logits(model, tokenizer, context_text, rollout)?;
    Ok(logits
        .into_iter()
        .map(|row| TokenDistribution::from_logits(&row))
        .collect())
}

/// Raw f64 logits at each response position (training path).
pub fn response_logits(
    model: &PolicyModel,
    tokenizer: &Tokenizer,
    context_text: &str,
    rollout: &Rollout,
) -> Result<Vec<Vec<f64>>> {
    let (ids, cond_len) = full_ids(tokenizer, context_text, rollout);
    let (logits, _) = model.forward(&ids, false)?;
    Ok(extract_response_rows(&logits, model.cfg.vocab_size, cond_len, rollout.len()))
}

/// Conditioning ids plus rollout ids; returns (ids, conditioning length).
pub fn full_ids(tokenizer: &Tokenizer, context_text: &str, rollout: &Rollout) -> (Vec<u32>, usize) {
    let mut ids = conditioning_ids(tokenizer, context_text);
    let cond_len = ids.len();
    ids.extend_from_slice(&rollout.token_ids);
    (ids, cond_len)
}

pub fn extract_response_rows(
    logits: &[f32],
    vocab: usize,
    cond_len: usize,
    t_len: usize,
) -> Vec<Vec<f64>> {
    // Position cond_len - 1 predicts the first response token.
    (0..t_len)
        .map(|t| {
            let row = &logits[(cond_len - 1 + t) * vocab..(cond_len + t) * vocab];
            row.iter().map(|&x| x as f64).collect()
        })
        .collect()
}
