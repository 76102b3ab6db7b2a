//! Synthetic, verifier-checkable multi-step reasoning tasks.
//!
//! Two families stand in for in-domain vs out-of-domain data: nested modular
//! arithmetic (`ArithChain`) and chained string edits (`StringTransform`).
//! Both render problems and solutions in one shared line grammar:
//!
//! ```text
//! STEP <i> : <expr> = <value>
//! ...
//! ANSWER : <value>
//! ```
//!
//! The verifier reads the final `ANSWER :` line; the oracle walks `STEP`
//! lines against the problem's step trace and quotes the first divergence.

mod arith;
mod strings;

use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::policy::Rollout;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskFamily {
    #[serde(rename = "ARITH_CHAIN")]
    ArithChain,
    #[serde(rename = "STRING_TRANSFORM")]
    StringTransform,
}

impl TaskFamily {
    pub fn all() -> [TaskFamily; 2] {
        [TaskFamily::ArithChain, TaskFamily::StringTransform]
    }

    pub fn slug(&self) -> &'static str {
        match self {
            TaskFamily::ArithChain => "arith_chain",
            TaskFamily::StringTransform => "string_transform",
        }
    }
}

impl fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for TaskFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "arith_chain" | "arith" => Ok(TaskFamily::ArithChain),
            "string_transform" | "string" => Ok(TaskFamily::StringTransform),
            other => Err(Error::Config(format!("unknown task family: {other}"))),
        }
    }
}

/// One labelled intermediate of the reference solution. The label carries the
/// full line prefix (everything before ` = `), so the canonical solution can
/// be re-rendered from the trace alone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub label: String,
    pub expected_value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub family: TaskFamily,
    pub prompt: String,
    pub answer: String,
    pub step_trace: Vec<TraceStep>,
    pub seed: u64,
}

impl Problem {
    /// Renders the reference solution in the response grammar. Verifying this
    /// text against the problem always yields reward 1.
    pub fn canonical_solution(&self) -> String {
        let mut out = String::new();
        for step in &self.step_trace {
            if step.label == "ANSWER" {
                out.push_str(&format!("ANSWER : {}", step.expected_value));
            } else {
                out.push_str(&format!("{} = {}\n", step.label, step.expected_value));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifierResult {
    pub reward: u8,
    pub extracted_answer: Option<String>,
}

/// Canonical answer form: all whitespace removed, case folded. Numeric
/// answers additionally compare as integers.
pub fn canonicalize_answer(s: &str) -> String {
    let folded: String = s
        .chars()
        .filter(|c| !c.is_whitespace())
        .flat_map(|c| c.to_lowercase())
        .collect();
    if let Ok(n) = folded.parse::<i64>() {
        return n.to_string();
    }
    folded
}

fn answers_match(expected: &str, got: &str) -> bool {
    canonicalize_answer(expected) == canonicalize_answer(got)
}

/// Generates `n` distinct problems. Pure function of `(family, seed, n)`.
pub fn generate_problems(family: TaskFamily, seed: u64, n: usize) -> Result<Vec<Problem>> {
    if n < 1 {
        return Err(Error::Config(format!(
            "generate_problems requires n >= 1, got {n}"
        )));
    }
    let mut seen: HashSet<String> = HashSet::new();
    let mut problems = Vec::with_capacity(n);
    for idx in 0..n {
        // Re-draw on prompt collisions so problems are distinct.
        let mut attempt = 0u64;
        loop {
            let sub_seed = mix_problem_seed(seed, idx as u64, attempt);
            let mut rng = Rng::derive(sub_seed, "problem", &[]);
            let draft = match family {
                TaskFamily::ArithChain => arith::generate(&mut rng),
                TaskFamily::StringTransform => strings::generate(&mut rng),
            };
            if seen.insert(draft.prompt.clone()) {
                problems.push(Problem {
                    id: format!("{}-{}-{:04}", family.slug(), seed, idx),
                    family,
                    prompt: draft.prompt,
                    answer: draft.answer,
                    step_trace: draft.step_trace,
                    seed: sub_seed,
                });
                break;
            }
            attempt += 1;
            if attempt > 10_000 {
                return Err(Error::Config(format!(
                    "could not draw {n} distinct {family} problems from seed {seed}"
                )));
            }
        }
    }
    Ok(problems)
}

fn mix_problem_seed(seed: u64, idx: u64, attempt: u64) -> u64 {
    seed ^ idx.wrapping_mul(0x9e3779b97f4a7c15) ^ attempt.wrapping_mul(0xd1b54a32d192ed03)
}

pub(crate) struct ProblemDraft {
    pub prompt: String,
    pub answer: String,
    pub step_trace: Vec<TraceStep>,
}

/// Checks a response against the problem's answer. Unparsable responses get
/// reward 0, never an error.
pub fn verify(problem: &Problem, response_text: &str) -> VerifierResult {
    let extracted = extract_answer(response_text);
    let reward = match &extracted {
        Some(got) if answers_match(&problem.answer, got) => 1,
        _ => 0,
    };
    VerifierResult {
        reward,
        extracted_answer: extracted,
    }
}

/// The answer region is the final non-empty line, which must read
/// `ANSWER : <value>`. Content after the answer line makes the response
/// unparsable, so a rewarded response is one that stopped at its answer.
fn extract_answer(text: &str) -> Option<String> {
    let last = text.lines().rev().find(|l| !l.trim().is_empty())?;
    let rest = last.trim_start().strip_prefix("ANSWER")?;
    let value = rest.trim_start().strip_prefix(':')?.trim();
    if value.is_empty() {
        return None;
    }
    Some(value.to_string())
}

/// A structured line parsed from a rollout: either `STEP <i> : ... = <value>`
/// or `ANSWER : <value>`. Holds the byte range of the verbatim line text.
struct ParsedLine {
    start: usize,
    end: usize,
    kind: LineKind,
    value: String,
}

enum LineKind {
    Step(usize),
    Answer,
}

fn parse_structured_lines(text: &str) -> Vec<ParsedLine> {
    let mut out = Vec::new();
    let mut offset = 0usize;
    for line in text.split('\n') {
        let start = offset;
        let end = offset + line.len();
        offset = end + 1;
        let trimmed = line.trim_start();
        if let Some(rest) = trimmed.strip_prefix("STEP") {
            let rest = rest.trim_start();
            let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
            if digits.is_empty() {
                continue;
            }
            let after = rest[digits.len()..].trim_start();
            if !after.starts_with(':') {
                continue;
            }
            if let Some(eq) = after.find('=') {
                let value = after[eq + 1..].trim();
                if value.is_empty() {
                    continue;
                }
                if let Ok(index) = digits.parse::<usize>() {
                    out.push(ParsedLine {
                        start,
                        end,
                        kind: LineKind::Step(index),
                        value: value.to_string(),
                    });
                }
            }
        } else if let Some(rest) = trimmed.strip_prefix("ANSWER") {
            let rest = rest.trim_start();
            if let Some(value) = rest.strip_prefix(':') {
                let value = value.trim();
                if !value.is_empty() {
                    out.push(ParsedLine {
                        start,
                        end,
                        kind: LineKind::Answer,
                        value: value.to_string(),
                    });
                }
            }
        }
    }
    out
}

/// Finds the first structured line of a wrong rollout whose value disagrees
/// with the expected intermediate, returning the verbatim line and a
/// templated corrective idea. Returns `None` when the rollout has no
/// structured lines (or no divergence is visible in them).
pub fn oracle_first_error(problem: &Problem, rollout: &Rollout) -> Result<Option<(String, String)>> {
    if rollout.reward != 0 {
        return Err(Error::Contract(
            "oracle_first_error called on a correct rollout".into(),
        ));
    }
    let lines = parse_structured_lines(&rollout.text);
    if lines.is_empty() {
        return Ok(None);
    }
    let n_steps = problem.step_trace.len().saturating_sub(1);
    for line in &lines {
        let expected = match line.kind {
            LineKind::Step(i) => {
                if i >= 1 && i <= n_steps {
                    Some(&problem.step_trace[i - 1])
                } else {
                    None
                }
            }
            LineKind::Answer => problem.step_trace.last(),
        };
        let agrees = match expected {
            Some(step) => answers_match(&step.expected_value, &line.value),
            // A step index outside the trace is itself a divergence.
            None => false,
        };
        if !agrees {
            let quote = rollout.text[line.start..line.end].to_string();
            let idea = match (&line.kind, expected) {
                (LineKind::Step(i), Some(step)) => format!(
                    "STEP {} should equal {} . The final answer is {} .",
                    i, step.expected_value, problem.answer
                ),
                (LineKind::Step(i), None) => format!(
                    "STEP {} is not part of the solution . The final answer is {} .",
                    i, problem.answer
                ),
                (LineKind::Answer, _) => {
                    format!("The final answer is {} .", problem.answer)
                }
            };
            return Ok(Some((quote, idea)));
        }
    }
    Ok(None)
}

/// Templated summary used as the teacher context payload for correct
/// rollouts when the oracle plays the reflector.
pub fn oracle_valid_summary(problem: &Problem) -> String {
    format!(
        "The reasoning is valid and the final answer is {} .",
        problem.answer
    )
}

/// A format-faithful but value-scrambled solution: the line grammar, step
/// chaining, and operand copying all match the reference solution, while
/// every computed value is replaced by a random one (consistently carried
/// into the next step). Supervised warmup on these texts teaches the
/// response format without teaching the task's answers.
pub struct ScrambledSolution {
    pub text: String,
    /// Scrambled value of each step, final entry doubling as the answer.
    pub values: Vec<String>,
}

impl ScrambledSolution {
    pub fn answer(&self) -> &str {
        self.values.last().map(String::as_str).unwrap_or("0")
    }

    /// A corrective idea naming one step's (scrambled) value plus the
    /// (scrambled) final answer, in the oracle reflector's wording.
    pub fn idea_for_step(&self, step_index: usize) -> String {
        format!(
            "STEP {} should equal {} . The final answer is {} .",
            step_index + 1,
            self.values[step_index],
            self.answer()
        )
    }
}

pub fn format_warmup_solution(problem: &Problem, rng: &mut Rng) -> ScrambledSolution {
    let mut out = String::new();
    let mut values = Vec::new();
    let mut prev: Option<String> = None;
    let n_steps = problem.step_trace.len().saturating_sub(1);
    for step in problem.step_trace.iter().take(n_steps) {
        let scrambled = match problem.family {
            TaskFamily::ArithChain => rng.range_i64(0, 9).to_string(),
            TaskFamily::StringTransform => {
                let len = step.expected_value.chars().count().max(1);
                (0..len)
                    .map(|_| (b'a' + rng.below(10) as u8) as char)
                    .collect()
            }
        };
        let label = match &prev {
            // Carry the previous scrambled value into this step's operand
            // slot, mirroring how real solutions chain intermediates.
            Some(prev_value) => replace_chained_operand(&step.label, problem.family, prev_value),
            None => step.label.clone(),
        };
        out.push_str(&format!("{label} = {scrambled}\n"));
        values.push(scrambled.clone());
        prev = Some(scrambled);
    }
    let final_value = prev.unwrap_or_else(|| "0".to_string());
    out.push_str(&format!("ANSWER : {final_value}"));
    ScrambledSolution { text: out, values }
}

/// Swaps the chained operand inside a step label for `prev`: the first token
/// after `(` for arithmetic, the parenthesised string for string transforms.
fn replace_chained_operand(label: &str, family: TaskFamily, prev: &str) -> String {
    let Some(open) = label.find('(') else {
        return label.to_string();
    };
    let inner = label[open + 1..].trim_start();
    match family {
        TaskFamily::ArithChain => {
            let Some(tok) = inner.split_whitespace().next() else {
                return label.to_string();
            };
            label.replacen(&format!("( {tok}"), &format!("( {prev}"), 1)
        }
        TaskFamily::StringTransform => {
            let Some(close) = inner.find(')') else {
                return label.to_string();
            };
            let s = inner[..close].trim();
            label.replacen(&format!("( {s} )"), &format!("( {prev} )"), 1)
        }
    }
}

/// Writes problems as JSON lines.
pub fn problems_to_jsonl(problems: &[Problem]) -> Result<String> {
    let mut out = String::new();
    for p in problems {
        out.push_str(&serde_json::to_string(p)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn problems_from_jsonl(data: &str) -> Result<Vec<Problem>> {
    data.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
