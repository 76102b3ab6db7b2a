//! Deterministic word/symbol tokenizer over the closed task grammar.
//!
//! Encoding is greedy longest-match over the vocabulary, with a one-character
//! `<unk>` fallback so encode is total. Most words carry their leading space
//! so that decoding is plain concatenation and every byte of in-grammar text
//! is covered by exactly one token span.

use serde::{Deserialize, Serialize};

pub const BOS: u32 = 0;
pub const EOS: u32 = 1;
pub const PAD: u32 = 2;
pub const SEP: u32 = 3;
pub const UNK: u32 = 4;

/// Vocabulary order is part of the checkpoint format; append only.
fn base_vocab() -> Vec<String> {
    let mut v: Vec<String> = ["<bos>", "<eos>", "<pad>", "<sep>", "<unk>"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for w in ["STEP", "ANSWER", "Compute", "Apply", "\n"] {
        v.push(w.to_string());
    }
    for w in [
        " (", " )", " +", " *", " =", " :", " mod", " reverse", " rotate", " swap",
    ] {
        v.push(w.to_string());
    }
    for d in 0..10 {
        v.push(format!(" {d}"));
    }
    for c in b'a'..=b'j' {
        v.push(format!(" {}", c as char));
    }
    for c in b'a'..=b'j' {
        v.push((c as char).to_string());
    }
    // Connective words used by teacher contexts and corrective ideas.
    for w in [
        "The",
        " The",
        " following",
        " is",
        " the",
        " key",
        " idea",
        " to",
        " solve",
        " question",
        "Correctly",
        " original",
        " .",
        " should",
        " equal",
        " final",
        " answer",
        " reasoning",
        " valid",
        " and",
        " not",
        " part",
        " of",
        " solution",
    ] {
        v.push(w.to_string());
    }
    v
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tokenizer {
    vocab: Vec<String>,
    /// Non-special token ids sorted by decreasing string length, for greedy
    /// longest-match encoding.
    #[serde(skip)]
    match_order: Vec<u32>,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Tokenizer::new()
    }
}

impl Tokenizer {
    pub fn new() -> Self {
        Tokenizer::from_vocab(base_vocab())
    }

    pub fn from_vocab(vocab: Vec<String>) -> Self {
        let mut match_order: Vec<u32> = (0..vocab.len() as u32)
            .filter(|&id| id > UNK)
            .collect();
        match_order.sort_by_key(|&id| std::cmp::Reverse(vocab[id as usize].len()));
        Tokenizer { vocab, match_order }
    }

    /// Rebuilds derived state after deserialization.
    pub fn rebuild(&mut self) {
        *self = Tokenizer::from_vocab(std::mem::take(&mut self.vocab));
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn token_str(&self, id: u32) -> &str {
        &self.vocab[id as usize]
    }

    pub fn is_special(&self, id: u32) -> bool {
        id <= UNK
    }

    /// Encodes text, returning token ids and the byte span each token covers.
    /// Spans are ordered, non-overlapping, and tile the whole input.
    pub fn encode(&self, text: &str) -> (Vec<u32>, Vec<(usize, usize)>) {
        let bytes = text.as_bytes();
        let mut ids = Vec::new();
        let mut spans = Vec::new();
        let mut pos = 0usize;
        'outer: while pos < bytes.len() {
            for &id in &self.match_order {
                let tok = self.vocab[id as usize].as_bytes();
                if bytes[pos..].starts_with(tok) {
                    ids.push(id);
                    spans.push((pos, pos + tok.len()));
                    pos += tok.len();
                    continue 'outer;
                }
            }
            // Unknown character: consume one char as <unk>.
            let ch_len = text[pos..].chars().next().map(char::len_utf8).unwrap_or(1);
            ids.push(UNK);
            spans.push((pos, pos + ch_len));
            pos += ch_len;
        }
        (ids, spans)
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        self.decode_with_offsets(ids).0
    }

    /// Decodes ids into text plus the byte span each token contributes.
    /// Special tokens contribute an empty span; `<unk>` decodes to `?`.
    pub fn decode_with_offsets(&self, ids: &[u32]) -> (String, Vec<(usize, usize)>) {
        let mut text = String::new();
        let mut spans = Vec::with_capacity(ids.len());
        for &id in ids {
            let start = text.len();
            match id {
                BOS | EOS | PAD | SEP => {}
                UNK => text.push('?'),
                _ => text.push_str(&self.vocab[id as usize]),
            }
            spans.push((start, text.len()));
        }
        (text, spans)
    }
}
