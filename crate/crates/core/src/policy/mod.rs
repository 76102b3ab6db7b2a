//! The differentiable autoregressive policy: tokenizer, model, sampling,
//! and checkpointing.

pub mod checkpoint;
pub mod model;
pub mod sample;
pub mod tokenizer;

pub use checkpoint::{load_model, save_model};
pub use model::{ema_update, ForwardCache, KvCache, Layout, ModelConfig, PolicyModel, Role};
pub use sample::{
    conditioning_ids, extract_response_rows, full_ids, greedy_generate, next_token_distributions,
    response_logits, sample_response, sample_rollouts, Rollout, RolloutGroup,
};
pub use tokenizer::{Tokenizer, BOS, EOS, PAD, SEP, UNK};
