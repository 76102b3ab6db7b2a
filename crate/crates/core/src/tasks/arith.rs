//! Nested modular arithmetic chains.
//!
//! A problem applies 3-6 rounds of `(value op operand) mod m` starting from a
//! single digit. The prompt carries the fully nested expression; each STEP
//! line restates one round, innermost first, so every intermediate value is a
//! single digit.

use super::{ProblemDraft, TraceStep};
use crate::rng::Rng;

pub(super) fn generate(rng: &mut Rng) -> ProblemDraft {
    let n_steps = rng.range_i64(3, 6) as usize;
    let start = rng.range_i64(0, 9);

    let mut expr = start.to_string();
    let mut value = start;
    let mut step_trace = Vec::with_capacity(n_steps + 1);
    for i in 1..=n_steps {
        let (op, operand) = if rng.next_f64() < 0.5 {
            ('+', rng.range_i64(1, 9))
        } else {
            ('*', rng.range_i64(2, 9))
        };
        let modulus = rng.range_i64(2, 9);
        let sub_expr = format!("( {expr} {op} {operand} ) mod {modulus}");
        let step_expr = format!("( {value} {op} {operand} ) mod {modulus}");
        value = match op {
            '+' => (value + operand).rem_euclid(modulus),
            _ => (value * operand).rem_euclid(modulus),
        };
        step_trace.push(TraceStep {
            label: format!("STEP {i} : {step_expr}"),
            expected_value: value.to_string(),
        });
        expr = sub_expr;
    }
    let answer = value.to_string();
    step_trace.push(TraceStep {
        label: "ANSWER".to_string(),
        expected_value: answer.clone(),
    });

    ProblemDraft {
        prompt: format!("Compute {expr}"),
        answer,
        step_trace,
    }
}
