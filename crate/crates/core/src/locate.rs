//! Aligns error quotes back to token positions in a rollout, builds the
//! distillation masks, and computes localization metrics.
//!
//! Matching is two-stage: exact substring search first, then a
//! whitespace-collapsed case-folded search. A quote that cannot be matched
//! falls back to k = 0, which makes the downstream mask all-ones
//! (full-response distillation).

use serde::{Deserialize, Serialize};

use crate::distill::DistillationMask;
use crate::error::{Error, Result};
use crate::policy::Rollout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchKind {
    #[serde(rename = "EXACT")]
    Exact,
    #[serde(rename = "NORMALIZED")]
    Normalized,
    #[serde(rename = "NONE")]
    None,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocatedError {
    /// Token index where the matched quote begins; 0 when unmatched.
    pub k: usize,
    pub matched: bool,
    pub match_kind: MatchKind,
    /// Byte span of the match inside the rollout text.
    pub char_span: Option<(usize, usize)>,
}

impl LocatedError {
    pub fn unmatched() -> Self {
        LocatedError {
            k: 0,
            matched: false,
            match_kind: MatchKind::None,
            char_span: None,
        }
    }
}

/// Lowercases and collapses whitespace runs to single spaces, keeping a map
/// from each normalized character to the byte offset it came from.
fn normalize_with_map(text: &str) -> (String, Vec<usize>) {
    let mut out = String::with_capacity(text.len());
    let mut map = Vec::with_capacity(text.len());
    let mut in_space = false;
    for (pos, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if !in_space && !out.is_empty() {
                out.push(' ');
                map.push(pos);
            }
            in_space = true;
        } else {
            in_space = false;
            for lc in ch.to_lowercase() {
                out.push(lc);
                map.push(pos);
            }
        }
    }
    // Drop a trailing space.
    if out.ends_with(' ') {
        out.pop();
        map.pop();
    }
    (out, map)
}

/// Maps a byte position to the index of the token whose span contains it.
fn token_at(offsets: &[(usize, usize)], pos: usize) -> Option<usize> {
    offsets
        .iter()
        .position(|&(a, b)| a <= pos && pos < b && a < b)
}

/// Finds the first occurrence of the quote in the rollout text.
pub fn locate(quote: &str, rollout: &Rollout) -> Result<LocatedError> {
    locate_with_options(quote, rollout, true)
}

/// `normalized` disables the second matching stage when false
/// (strict exact-substring mode).
pub fn locate_with_options(
    quote: &str,
    rollout: &Rollout,
    normalized: bool,
) -> Result<LocatedError> {
    if quote.is_empty() {
        return Err(Error::Contract("locate requires a non-empty quote".into()));
    }

    if let Some(start) = rollout.text.find(quote) {
        if let Some(k) = token_at(&rollout.offsets, start) {
            return Ok(LocatedError {
                k,
                matched: true,
                match_kind: MatchKind::Exact,
                char_span: Some((start, start + quote.len())),
            });
        }
    }

    if normalized {
        let (norm_text, map) = normalize_with_map(&rollout.text);
        let (norm_quote, _) = normalize_with_map(quote);
        if !norm_quote.is_empty() {
            if let Some(norm_start) = norm_text.find(&norm_quote) {
                let start = map[norm_start];
                let end_norm = norm_start + norm_quote.len() - 1;
                let end = map[end_norm] + 1;
                if let Some(k) = token_at(&rollout.offsets, start) {
                    return Ok(LocatedError {
                        k,
                        matched: true,
                        match_kind: MatchKind::Normalized,
                        char_span: Some((start, end)),
                    });
                }
            }
        }
    }

    Ok(LocatedError::unmatched())
}

/// Builds the per-token mask for one rollout. Correct rollouts and unmatched
/// quotes distill the full response.
pub fn build_mask(
    located: &LocatedError,
    t_len: usize,
    rollout_correct: bool,
) -> Result<DistillationMask> {
    if t_len == 0 {
        return Err(Error::Input("mask length must be >= 1".into()));
    }
    if rollout_correct {
        return Ok(DistillationMask::all_ones(t_len));
    }
    if located.matched && located.k >= t_len {
        return Err(Error::Input(format!(
            "located token index {} lies past rollout end {}",
            located.k, t_len
        )));
    }
    Ok(DistillationMask::from_error_index(located.k, t_len))
}

/// Match rate and mean normalized error position over a batch of wrong-
/// rollout locations. The mean position is taken over matched items only and
/// is absent when nothing matched.
pub fn localization_metrics(items: &[(LocatedError, usize)]) -> Result<(f64, Option<f64>)> {
    if items.is_empty() {
        return Err(Error::Input("localization metrics need a non-empty batch".into()));
    }
    let mut matched = 0usize;
    let mut pos_sum = 0.0;
    for (loc, t_len) in items {
        if loc.matched {
            matched += 1;
            pos_sum += loc.k as f64 / (*t_len).max(1) as f64;
        }
    }
    let rate = matched as f64 / items.len() as f64;
    let mean_pos = if matched > 0 {
        Some(pos_sum / matched as f64)
    } else {
        None
    };
    Ok((rate, mean_pos))
}
