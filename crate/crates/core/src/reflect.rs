//! The self-reflection protocol: pairing wrong rollouts with the shortest
//! correct rollout, building reflection prompts, running a reflector (model
//! or oracle), parsing its tagged output, and rendering the teacher context.

use serde::{Deserialize, Serialize};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::policy::{conditioning_ids, greedy_generate, PolicyModel, Rollout, RolloutGroup, Tokenizer};
use crate::tasks::{oracle_first_error, oracle_valid_summary, Problem};

pub const SYSTEM_PROMPT: &str =
    "You are a careful tutor. Respond strictly in the required format and nothing else.";

const WRONG_USER_TEMPLATE: &str = "[Problem] {problem}\n\
[Correct Solution] {correct_rollout}\n\
[Incorrect Solution] {wrong_rollout}\n\
The correct final answer is {answer}.\n\
Diagnose the [Incorrect Solution] by responding strictly in the following format:\n\
<error_quote>\n\
(Extract the EXACT substring from the [Incorrect Solution] where the reasoning first goes wrong)\n\
</error_quote>\n\
<explanation>\n\
(Explain the exact mistake in the quote, how to fix it, and what the correct logic is)\n\
</explanation>";

const CORRECT_USER_TEMPLATE: &str = "[Problem] {problem}\n\
[Correct Solution] {correct_rollout}\n\
Explain why this reasoning is valid and why the final answer should be {answer}. \
Respond strictly in the following format:\n\
<explanation>\n\
(Your explanation of why the logic is correct)\n\
</explanation>";

const TEACHER_TEMPLATE: &str = "{prompt}\n\
The following is the key idea to solve the question :\n\
{key_idea}\n\
Correctly solve the original question .";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReflectionKind {
    #[serde(rename = "WRONG_ROLLOUT")]
    WrongRollout,
    #[serde(rename = "CORRECT_ROLLOUT")]
    CorrectRollout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    #[serde(rename = "MODEL")]
    Model,
    #[serde(rename = "ORACLE")]
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReflectorMode {
    #[serde(rename = "MODEL")]
    Model,
    #[serde(rename = "ORACLE")]
    Oracle,
}

impl FromStr for ReflectorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "model" => Ok(ReflectorMode::Model),
            "oracle" => Ok(ReflectorMode::Oracle),
            other => Err(Error::Config(format!("unknown reflector mode: {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reflection {
    pub key_idea: String,
    pub error_quote: Option<String>,
    pub source_rollout_id: String,
    pub kind: ReflectionKind,
    pub provenance: Provenance,
}

impl Reflection {
    fn new(
        key_idea: String,
        error_quote: Option<String>,
        source_rollout_id: String,
        kind: ReflectionKind,
        provenance: Provenance,
    ) -> Self {
        // Correct rollouts never carry an error quote.
        let error_quote = match kind {
            ReflectionKind::CorrectRollout => None,
            ReflectionKind::WrongRollout => error_quote,
        };
        Reflection {
            key_idea,
            error_quote,
            source_rollout_id,
            kind,
            provenance,
        }
    }
}

/// Rendered self-teacher prompt embedding the key corrective idea.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TeacherContext {
    pub text: String,
}

/// The correct rollout of minimal token length; ties break to the lowest
/// rollout index. Absent when the group has no correct rollout.
pub fn select_reference(group: &RolloutGroup) -> Option<&Rollout> {
    select_reference_index(group).map(|i| &group.rollouts[i])
}

pub fn select_reference_index(group: &RolloutGroup) -> Option<usize> {
    group
        .correct
        .iter()
        .copied()
        .min_by_key(|&i| (group.rollouts[i].len(), i))
}

pub fn build_wrong_prompt(
    problem: &Problem,
    y_star: &Rollout,
    y_minus: &Rollout,
) -> Result<String> {
    if y_star.reward != 1 {
        return Err(Error::Contract(
            "build_wrong_prompt requires a correct reference rollout".into(),
        ));
    }
    if y_minus.reward != 0 {
        return Err(Error::Contract(
            "build_wrong_prompt requires a wrong rollout".into(),
        ));
    }
    let user = WRONG_USER_TEMPLATE
        .replace("{problem}", &problem.prompt)
        .replace("{correct_rollout}", &y_star.text)
        .replace("{wrong_rollout}", &y_minus.text)
        .replace("{answer}", &problem.answer);
    Ok(format!("{SYSTEM_PROMPT}\n\n{user}"))
}

pub fn build_correct_prompt(problem: &Problem, y_plus: &Rollout) -> Result<String> {
    if y_plus.reward != 1 {
        return Err(Error::Contract(
            "build_correct_prompt requires a correct rollout".into(),
        ));
    }
    let user = CORRECT_USER_TEMPLATE
        .replace("{problem}", &problem.prompt)
        .replace("{correct_rollout}", &y_plus.text)
        .replace("{answer}", &problem.answer);
    Ok(format!("{SYSTEM_PROMPT}\n\n{user}"))
}

/// Renders the self-teacher prompt: the original problem prompt, the key
/// idea block, and the instruction to solve the original question. Never
/// embeds rollout text.
pub fn build_teacher_context(problem: &Problem, key_idea: &str) -> Result<TeacherContext> {
    if key_idea.trim().is_empty() {
        return Err(Error::Contract(
            "teacher context requires a non-empty key idea".into(),
        ));
    }
    let text = TEACHER_TEMPLATE
        .replace("{prompt}", &problem.prompt)
        .replace("{key_idea}", key_idea);
    Ok(TeacherContext { text })
}

fn extract_tag(raw: &str, tag: &str) -> std::result::Result<String, String> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let opens = raw.matches(open.as_str()).count();
    let closes = raw.matches(close.as_str()).count();
    if opens == 0 || closes == 0 {
        return Err(format!("missing <{tag}> pair"));
    }
    if opens > 1 || closes > 1 {
        return Err(format!("duplicated <{tag}> tags"));
    }
    let start = raw.find(open.as_str()).unwrap() + open.len();
    let end = raw.find(close.as_str()).unwrap();
    if end < start {
        return Err(format!("mis-ordered <{tag}> pair"));
    }
    let content = raw[start..end].trim();
    if content.is_empty() {
        return Err(format!("empty <{tag}> content"));
    }
    Ok(content.to_string())
}

/// Parses raw reflector output. Wrong-rollout reflections need both tags,
/// correct-rollout reflections only the explanation. Never panics on
/// arbitrary text: malformed input returns a parse failure carrying the raw
/// text.
pub fn parse_reflection(
    raw: &str,
    kind: ReflectionKind,
    source_rollout_id: &str,
) -> Result<Reflection> {
    let fail = |reason: String| Error::ReflectionParse {
        reason,
        raw: raw.to_string(),
    };
    let explanation = extract_tag(raw, "explanation").map_err(fail)?;
    let quote = match kind {
        ReflectionKind::WrongRollout => Some(extract_tag(raw, "error_quote").map_err(fail)?),
        ReflectionKind::CorrectRollout => None,
    };
    Ok(Reflection::new(
        explanation,
        quote,
        source_rollout_id.to_string(),
        kind,
        Provenance::Model,
    ))
}

#[derive(Debug, Clone, Copy)]
pub struct ReflectorBudgets {
    pub max_prompt_tokens: usize,
    pub max_output_tokens: usize,
}

impl Default for ReflectorBudgets {
    fn default() -> Self {
        ReflectorBudgets {
            max_prompt_tokens: 512,
            max_output_tokens: 256,
        }
    }
}

pub fn rollout_id(group: &RolloutGroup, idx: usize) -> String {
    format!("{}#{idx}", group.problem_id)
}

/// Runs the reflector over a whole group. Returns one entry per rollout, in
/// order; `None` marks a wrong rollout that cannot be reflected because the
/// group has no correct reference.
///
/// Model mode decodes greedily and degrades malformed outputs to
/// quote-absent reflections whose key idea is the raw reflector text.
pub fn run_reflector(
    mode: ReflectorMode,
    reflector: Option<&PolicyModel>,
    tokenizer: &Tokenizer,
    problem: &Problem,
    group: &RolloutGroup,
    budgets: &ReflectorBudgets,
) -> Result<Vec<Option<Reflection>>> {
    if mode == ReflectorMode::Model && reflector.is_none() {
        return Err(Error::Config(
            "model reflector mode requires a reflector model".into(),
        ));
    }
    let reference = select_reference(group);
    let mut out = Vec::with_capacity(group.size());
    for (idx, rollout) in group.rollouts.iter().enumerate() {
        let id = rollout_id(group, idx);
        if rollout.reward == 1 {
            let reflection = match mode {
                ReflectorMode::Oracle => Reflection::new(
                    oracle_valid_summary(problem),
                    None,
                    id,
                    ReflectionKind::CorrectRollout,
                    Provenance::Oracle,
                ),
                ReflectorMode::Model => {
                    let prompt = build_correct_prompt(problem, rollout)?;
                    model_reflect(
                        reflector.unwrap(),
                        tokenizer,
                        &prompt,
                        ReflectionKind::CorrectRollout,
                        &id,
                        budgets,
                    )?
                }
            };
            out.push(Some(reflection));
            continue;
        }
        let Some(reference) = reference else {
            out.push(None);
            continue;
        };
        let reflection = match mode {
            ReflectorMode::Oracle => match oracle_first_error(problem, rollout)? {
                Some((quote, idea)) => Reflection::new(
                    idea,
                    Some(quote),
                    id,
                    ReflectionKind::WrongRollout,
                    Provenance::Oracle,
                ),
                // No structured lines to quote: fall back to full-response
                // distillation with an answer-only idea.
                None => Reflection::new(
                    format!("The final answer is {} .", problem.answer),
                    None,
                    id,
                    ReflectionKind::WrongRollout,
                    Provenance::Oracle,
                ),
            },
            ReflectorMode::Model => {
                let prompt = build_wrong_prompt(problem, reference, rollout)?;
                model_reflect(
                    reflector.unwrap(),
                    tokenizer,
                    &prompt,
                    ReflectionKind::WrongRollout,
                    &id,
                    budgets,
                )?
            }
        };
        out.push(Some(reflection));
    }
    Ok(out)
}

fn model_reflect(
    reflector: &PolicyModel,
    tokenizer: &Tokenizer,
    prompt: &str,
    kind: ReflectionKind,
    source_rollout_id: &str,
    budgets: &ReflectorBudgets,
) -> Result<Reflection> {
    let prompt_len = conditioning_ids(tokenizer, prompt).len();
    let raw = if prompt_len > budgets.max_prompt_tokens
        || prompt_len + 1 > reflector.cfg.max_seq_len
    {
        // Over-budget prompts degrade the same way as malformed outputs.
        String::new()
    } else {
        greedy_generate(reflector, tokenizer, prompt, budgets.max_output_tokens)?
    };
    match parse_reflection(&raw, kind, source_rollout_id) {
        Ok(r) => Ok(r),
        Err(Error::ReflectionParse { raw, .. }) => {
            let key_idea = if raw.trim().is_empty() {
                "?".to_string()
            } else {
                raw
            };
            Ok(Reflection::new(
                key_idea,
                None,
                source_rollout_id.to_string(),
                kind,
                Provenance::Model,
            ))
        }
        Err(e) => Err(e),
    }
}

pub fn reflections_to_jsonl(reflections: &[Reflection]) -> Result<String> {
    let mut out = String::new();
    for r in reflections {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{sample_rollouts, ModelConfig, Role};
    use crate::tasks::{generate_problems, verify, TaskFamily};

    fn problem() -> Problem {
        generate_problems(TaskFamily::ArithChain, 7, 1).unwrap().remove(0)
    }

    fn rollout_with(text: &str, reward: u8) -> Rollout {
        Rollout::synthetic(&Tokenizer::new(), "p0", text, reward)
    }

    fn group_of(rollouts: Vec<Rollout>) -> RolloutGroup {
        RolloutGroup::from_rollouts("p0".into(), rollouts)
    }

    #[test]
    fn golden_wrong_prompt() {
        let p = Problem {
            id: "x".into(),
            family: TaskFamily::ArithChain,
            prompt: "Compute ( 1 + 1 ) mod 3".into(),
            answer: "2".into(),
            step_trace: vec![],
            seed: 0,
        };
        let star = rollout_with("STEP 1 : ( 1 + 1 ) mod 3 = 2\nANSWER : 2", 1);
        let minus = rollout_with("STEP 1 : ( 1 + 1 ) mod 3 = 0\nANSWER : 0", 0);
        let got = build_wrong_prompt(&p, &star, &minus).unwrap();
        let want = "You are a careful tutor. Respond strictly in the required format and nothing else.\n\n\
[Problem] Compute ( 1 + 1 ) mod 3\n\
[Correct Solution] STEP 1 : ( 1 + 1 ) mod 3 = 2\nANSWER : 2\n\
[Incorrect Solution] STEP 1 : ( 1 + 1 ) mod 3 = 0\nANSWER : 0\n\
The correct final answer is 2.\n\
Diagnose the [Incorrect Solution] by responding strictly in the following format:\n\
<error_quote>\n\
(Extract the EXACT substring from the [Incorrect Solution] where the reasoning first goes wrong)\n\
</error_quote>\n\
<explanation>\n\
(Explain the exact mistake in the quote, how to fix it, and what the correct logic is)\n\
</explanation>";
        assert_eq!(got, want);
    }

    #[test]
    fn golden_correct_prompt() {
        let p = Problem {
            id: "x".into(),
            family: TaskFamily::ArithChain,
            prompt: "Compute ( 1 + 1 ) mod 3".into(),
            answer: "2".into(),
            step_trace: vec![],
            seed: 0,
        };
        let plus = rollout_with("STEP 1 : ( 1 + 1 ) mod 3 = 2\nANSWER : 2", 1);
        let got = build_correct_prompt(&p, &plus).unwrap();
        let want = "You are a careful tutor. Respond strictly in the required format and nothing else.\n\n\
[Problem] Compute ( 1 + 1 ) mod 3\n\
[Correct Solution] STEP 1 : ( 1 + 1 ) mod 3 = 2\nANSWER : 2\n\
Explain why this reasoning is valid and why the final answer should be 2. \
Respond strictly in the following format:\n\
<explanation>\n\
(Your explanation of why the logic is correct)\n\
</explanation>";
        assert_eq!(got, want);
        assert!(got.contains("<explanation>"));
        assert!(!got.contains("<error_quote>"));
    }

    #[test]
    fn golden_teacher_context() {
        let p = Problem {
            id: "x".into(),
            family: TaskFamily::ArithChain,
            prompt: "Compute ( 1 + 1 ) mod 3".into(),
            answer: "2".into(),
            step_trace: vec![],
            seed: 0,
        };
        let ctx = build_teacher_context(&p, "STEP 1 should equal 2 . The final answer is 2 .")
            .unwrap();
        let want = "Compute ( 1 + 1 ) mod 3\n\
The following is the key idea to solve the question :\n\
STEP 1 should equal 2 . The final answer is 2 .\n\
Correctly solve the original question .";
        assert_eq!(ctx.text, want);

        // Two ideas for the same problem differ only in the key-idea block.
        let other = build_teacher_context(&p, "The final answer is 2 .").unwrap();
        assert!(other.text.starts_with("Compute ( 1 + 1 ) mod 3\n"));
        assert!(other.text.ends_with("Correctly solve the original question ."));
    }

    #[test]
    fn teacher_context_tokenizes_without_unknowns() {
        let p = problem();
        let ctx =
            build_teacher_context(&p, "STEP 2 should equal 4 . The final answer is 1 .").unwrap();
        let tok = Tokenizer::new();
        let (ids, _) = tok.encode(&ctx.text);
        assert!(ids.iter().all(|&id| id != crate::policy::UNK));
    }

    #[test]
    fn wrong_prompt_contract_checks() {
        let p = problem();
        let star = rollout_with("ANSWER : 0", 1);
        let minus = rollout_with("ANSWER : 9", 0);
        assert!(build_wrong_prompt(&p, &minus, &minus).is_err());
        assert!(build_wrong_prompt(&p, &star, &star).is_err());
        assert!(build_correct_prompt(&p, &minus).is_err());
    }

    #[test]
    fn empty_key_idea_is_contract_error() {
        let p = problem();
        assert!(matches!(
            build_teacher_context(&p, "  "),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn select_reference_prefers_shortest_then_lowest_index() {
        let mk = |n: usize, reward: u8| Rollout {
            problem_id: "p0".into(),
            token_ids: vec![9; n],
            text: String::new(),
            offsets: vec![(0, 0); n],
            sample_logprobs: vec![0.0; n],
            reward,
        };
        let g = group_of(vec![mk(12, 1), mk(9, 1), mk(15, 1), mk(4, 0)]);
        let r = select_reference(&g).unwrap();
        assert_eq!(r.len(), 9);

        let g = group_of(vec![mk(9, 1), mk(9, 1)]);
        assert_eq!(select_reference_index(&g), Some(0));

        let g = group_of(vec![mk(9, 0), mk(9, 0)]);
        assert!(select_reference(&g).is_none());
    }

    #[test]
    fn parse_reflection_fixtures() {
        let r = parse_reflection(
            "<error_quote>x = 3</error_quote><explanation>should be 2</explanation>",
            ReflectionKind::WrongRollout,
            "p0#1",
        )
        .unwrap();
        assert_eq!(r.error_quote.as_deref(), Some("x = 3"));
        assert_eq!(r.key_idea, "should be 2");
        assert_eq!(r.source_rollout_id, "p0#1");

        let r = parse_reflection(
            "<explanation>all steps check out</explanation>",
            ReflectionKind::CorrectRollout,
            "p0#0",
        )
        .unwrap();
        assert_eq!(r.error_quote, None);

        assert!(matches!(
            parse_reflection("no tags at all", ReflectionKind::WrongRollout, "p0#0"),
            Err(Error::ReflectionParse { .. })
        ));
        assert!(matches!(
            parse_reflection(
                "<explanation>a</explanation><explanation>b</explanation>",
                ReflectionKind::CorrectRollout,
                "p0#0"
            ),
            Err(Error::ReflectionParse { .. })
        ));
        assert!(matches!(
            parse_reflection(
                "<error_quote>q</error_quote><explanation></explanation>",
                ReflectionKind::WrongRollout,
                "p0#0"
            ),
            Err(Error::ReflectionParse { .. })
        ));
    }

    #[test]
    fn parse_reflection_never_panics_on_arbitrary_text() {
        for raw in [
            "",
            "<error_quote>",
            "</explanation><explanation>",
            "<error_quote><explanation></explanation></error_quote>",
            "🤖<explanation>ok</explanation>",
        ] {
            let _ = parse_reflection(raw, ReflectionKind::WrongRollout, "p#0");
            let _ = parse_reflection(raw, ReflectionKind::CorrectRollout, "p#0");
        }
    }

    fn oracle_group(problem: &Problem) -> RolloutGroup {
        // One correct (canonical) rollout, one wrong rollout with a broken
        // second step value and a matching broken final answer.
        let good_text = problem.canonical_solution();
        let good = rollout_with(&good_text, verify(problem, &good_text).reward);
        assert_eq!(good.reward, 1);
        let flip = |line: &str| {
            let sep = line.rfind(['=', ':']).unwrap();
            let value = line[sep + 1..].trim();
            let wrong = if value == "0" { "1" } else { "0" };
            format!("{} {wrong}", &line[..=sep])
        };
        let mut lines: Vec<String> = good_text.lines().map(str::to_string).collect();
        lines[1] = flip(&lines[1]);
        let last = lines.len() - 1;
        lines[last] = flip(&lines[last]);
        let bad_text = lines.join("\n");
        let bad = rollout_with(&bad_text, verify(problem, &bad_text).reward);
        assert_eq!(bad.reward, 0);
        group_of(vec![good, bad])
    }

    #[test]
    fn oracle_reflector_quotes_divergent_step() {
        let p = problem();
        let g = oracle_group(&p);
        let refs = run_reflector(
            ReflectorMode::Oracle,
            None,
            &Tokenizer::new(),
            &p,
            &g,
            &ReflectorBudgets::default(),
        )
        .unwrap();
        assert_eq!(refs.len(), 2);
        let correct = refs[0].as_ref().unwrap();
        assert_eq!(correct.kind, ReflectionKind::CorrectRollout);
        assert_eq!(correct.error_quote, None);

        let wrong_idx = g.wrong[0];
        let wrong = refs[wrong_idx].as_ref().unwrap();
        assert_eq!(wrong.kind, ReflectionKind::WrongRollout);
        let quote = wrong.error_quote.as_ref().unwrap();
        // Exact substring of the source rollout.
        assert!(g.rollouts[wrong_idx].text.contains(quote.as_str()));
        assert!(quote.starts_with("STEP 2"));
        // The idea names the correct value.
        assert!(wrong
            .key_idea
            .contains(&p.step_trace[1].expected_value.to_string()));
    }

    #[test]
    fn groups_without_reference_are_reflection_absent() {
        let p = problem();
        let bad = rollout_with("ANSWER : none", 0);
        let g = group_of(vec![bad.clone(), bad]);
        let refs = run_reflector(
            ReflectorMode::Oracle,
            None,
            &Tokenizer::new(),
            &p,
            &g,
            &ReflectorBudgets::default(),
        )
        .unwrap();
        assert!(refs.iter().all(Option::is_none));
    }

    #[test]
    fn model_reflector_degrades_gracefully() {
        let p = problem();
        let tok = Tokenizer::new();
        let cfg = ModelConfig {
            vocab_size: tok.vocab_size(),
            d_model: 16,
            n_layers: 1,
            n_heads: 2,
            max_seq_len: 1024,
        };
        let reflector = PolicyModel::new(cfg, Role::Reflector, 5).unwrap();
        let student = reflector.with_role(Role::Student);
        let mut g = sample_rollouts(&student, &tok, &p, 4, 1.0, 24, 3).unwrap();
        // Force a correct reference so wrong rollouts get reflected.
        let canon = p.canonical_solution();
        g.rollouts[0] = rollout_with(&canon, 1);
        let g = group_of(g.rollouts);
        let refs = run_reflector(
            ReflectorMode::Model,
            Some(&reflector),
            &tok,
            &p,
            &g,
            &ReflectorBudgets::default(),
        )
        .unwrap();
        assert_eq!(refs.len(), 4);
        // An untrained reflector cannot produce well-formed tags, so wrong
        // rollouts degrade to quote-absent reflections with non-empty ideas.
        for (i, r) in refs.iter().enumerate() {
            let r = r.as_ref().unwrap();
            assert!(!r.key_idea.trim().is_empty());
            if g.rollouts[i].reward == 0 {
                assert_eq!(r.kind, ReflectionKind::WrongRollout);
                assert_eq!(r.provenance, Provenance::Model);
            }
        }
    }

    #[test]
    fn reflection_cardinality_matches_group() {
        let p = problem();
        let canon = p.canonical_solution();
        let mut rollouts = Vec::new();
        for _ in 0..3 {
            rollouts.push(rollout_with(&canon, 1));
        }
        for _ in 0..5 {
            rollouts.push(rollout_with("ANSWER : none", 0));
        }
        let g = group_of(rollouts);
        let refs = run_reflector(
            ReflectorMode::Oracle,
            None,
            &Tokenizer::new(),
            &p,
            &g,
            &ReflectorBudgets::default(),
        )
        .unwrap();
        assert_eq!(refs.len(), 8);
        assert_eq!(refs.iter().filter(|r| r.is_some()).count(), 8);
        let wrong = refs
            .iter()
            .flatten()
            .filter(|r| r.kind == ReflectionKind::WrongRollout)
            .count();
        assert_eq!(wrong, 5);
    }

    #[test]
    fn teacher_context_never_embeds_reference_solution() {
        // Property over oracle reflections: the reference rollout's text does
        // not leak into any teacher context.
        for seed in 0..20u64 {
            let p = generate_problems(TaskFamily::ArithChain, seed, 1).unwrap().remove(0);
            let g = oracle_group(&p);
            let reference = select_reference(&g).unwrap().text.clone();
            let refs = run_reflector(
                ReflectorMode::Oracle,
                None,
                &Tokenizer::new(),
                &p,
                &g,
                &ReflectorBudgets::default(),
            )
            .unwrap();
            for r in refs.iter().flatten() {
                let ctx = build_teacher_context(&p, &r.key_idea).unwrap();
                assert!(!ctx.text.contains(&reference));
            }
        }
    }

    #[test]
    fn reflections_serialize_as_jsonl() {
        let r = Reflection::new(
            "idea".into(),
            Some("quote".into()),
            "p0#1".into(),
            ReflectionKind::WrongRollout,
            Provenance::Oracle,
        );
        let jsonl = reflections_to_jsonl(&[r.clone()]).unwrap();
        assert_eq!(jsonl.lines().count(), 1);
        let back: Reflection = serde_json::from_str(jsonl.lines().next().unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
