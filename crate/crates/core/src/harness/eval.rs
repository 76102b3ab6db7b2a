//! mean@k evaluation: sample k responses per problem, verify each, average.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::policy::{sample_response, PolicyModel, Tokenizer};
use crate::rng::Rng;
use crate::tasks::{verify, Problem};

/// Mean over problems of the mean verifier reward over `k` samples.
pub fn evaluate(
    model: &PolicyModel,
    tokenizer: &Tokenizer,
    problems: &[Problem],
    k: usize,
    temperature: f64,
    max_new_tokens: usize,
    seed: u64,
) -> Result<f64> {
    if problems.is_empty() {
        return Err(Error::Input("evaluate needs at least one problem".into()));
    }
    if k < 1 {
        return Err(Error::Input("evaluate needs k >= 1".into()));
    }
    let per_problem: Vec<f64> = problems
        .par_iter()
        .enumerate()
        .map(|(p_idx, problem)| {
            let mut hits = 0usize;
            for s_idx in 0..k {
                let sample_seed = {
                    let mut r = Rng::derive(seed, "eval", &[p_idx as u64, s_idx as u64]);
                    r.next_u64()
                };
                let text =
                    sample_response(model, tokenizer, problem, temperature, max_new_tokens, sample_seed)?;
                hits += verify(problem, &text).reward as usize;
            }
            Ok(hits as f64 / k as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_problem.iter().sum::<f64>() / per_problem.len() as f64)
}
