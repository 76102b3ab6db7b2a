//! Chained edits on short strings over the alphabet a-j.
//!
//! Edits: `reverse ( s )`, `rotate ( s )` (left rotation by one), and
//! `swap x y ( s )` (exchange all occurrences of two letters).

use super::{ProblemDraft, TraceStep};
use crate::rng::Rng;

const ALPHABET: &[u8] = b"abcdefghij";

fn apply_reverse(s: &str) -> String {
    s.chars().rev().collect()
}

fn apply_rotate(s: &str) -> String {
    let mut chars: Vec<char> = s.chars().collect();
    if chars.len() > 1 {
        chars.rotate_left(1);
    }
    chars.into_iter().collect()
}

fn apply_swap(s: &str, x: char, y: char) -> String {
    s.chars()
        .map(|c| {
            if c == x {
                y
            } else if c == y {
                x
            } else {
                c
            }
        })
        .collect()
}

pub(super) fn generate(rng: &mut Rng) -> ProblemDraft {
    let n_steps = rng.range_i64(3, 6) as usize;
    let len = rng.range_i64(3, 5) as usize;
    let base: String = (0..len)
        .map(|_| ALPHABET[rng.below(ALPHABET.len())] as char)
        .collect();

    let mut expr = base.clone();
    let mut value = base;
    let mut step_trace = Vec::with_capacity(n_steps + 1);
    for i in 1..=n_steps {
        let (op_text, next) = match rng.below(3) {
            0 => ("reverse".to_string(), apply_reverse(&value)),
            1 => ("rotate".to_string(), apply_rotate(&value)),
            _ => {
                let present: Vec<char> = value.chars().collect();
                let x = present[rng.below(present.len())];
                let mut y = ALPHABET[rng.below(ALPHABET.len())] as char;
                while y == x {
                    y = ALPHABET[rng.below(ALPHABET.len())] as char;
                }
                (format!("swap {x} {y}"), apply_swap(&value, x, y))
            }
        };
        step_trace.push(TraceStep {
            label: format!("STEP {i} : {op_text} ( {value} )"),
            expected_value: next.clone(),
        });
        expr = format!("{op_text} ( {expr} )");
        value = next;
    }
    step_trace.push(TraceStep {
        label: "ANSWER".to_string(),
        expected_value: value.clone(),
    });

    ProblemDraft {
        prompt: format!("Apply {expr}"),
        answer: value,
        step_trace,
    }
}
