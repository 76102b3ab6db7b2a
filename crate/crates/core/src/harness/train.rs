//! The per-step trainer for GRPO, SDPO, and ROSD.
//!
//! A step samples G rollouts per problem, builds the method's per-rollout
//! supervision (advantages, teacher contexts, distillation masks), computes
//! gradients with a single student backward pass per rollout, and applies
//! one optimizer update. Problems are processed in parallel; gradient
//! reduction happens in problem order, so steps are bit-reproducible for a
//! fixed seed regardless of thread count.

use rayon::prelude::*;

use crate::advantage::{group_advantage, grpo_loss_from_logits, AdvantageResult};
use crate::distill::{
    masked_distill_grad_from_logits, softmax, topk_support, DistillationMask, TokenDistribution,
};
use crate::error::Result;
use crate::harness::{
    ContextSource, DistillNorm, LocalizationRecord, Method, OptimizerKind, StepMetrics,
    TeacherMode, TrainConfig,
};
use crate::locate::{build_mask, locate_with_options, localization_metrics, LocatedError};
use crate::policy::{
    ema_update, full_ids, sample_rollouts, PolicyModel, Role, RolloutGroup, Tokenizer,
};
use crate::reflect::{
    build_teacher_context, rollout_id, run_reflector, select_reference, ReflectorBudgets,
};
use crate::rng::Rng;
use crate::tasks::Problem;

/// One rollout's distillation assignment: which teacher context conditions
/// it and which positions the mask keeps.
#[derive(Debug, Clone)]
pub struct DistillItem {
    pub rollout_idx: usize,
    pub context_text: String,
    pub mask: DistillationMask,
}

struct PreparedProblem {
    group: RolloutGroup,
    advantage: Option<AdvantageResult>,
    items: Vec<DistillItem>,
    locations: Vec<(LocatedError, usize, String)>,
}

struct ProblemGrads {
    grads: Vec<f32>,
    grpo_loss: f64,
    grpo_usable: bool,
    distill_loss: f64,
    distill_count: usize,
}

pub struct BatchOutcome {
    pub grads: Vec<f32>,
    pub metrics: StepMetrics,
    pub localizations: Vec<LocalizationRecord>,
    pub usable: bool,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub tokenizer: Tokenizer,
    pub student: PolicyModel,
    pub teacher: PolicyModel,
    pub reflector: PolicyModel,
    pub adam_m: Vec<f32>,
    pub adam_v: Vec<f32>,
    pub adam_t: u64,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let tokenizer = Tokenizer::new();
        let model_cfg = cfg.model_config(tokenizer.vocab_size());
        let student = PolicyModel::new(model_cfg, Role::Student, derive(cfg.seed, "init"))?;
        let teacher = student.with_role(Role::Teacher);
        let reflector = student.with_role(Role::Reflector);
        let n = student.n_params();
        Ok(Trainer {
            cfg,
            tokenizer,
            student,
            teacher,
            reflector,
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            adam_t: 0,
        })
    }

    /// Supervised next-token warmup: the desk-scale stand-in for starting
    /// from a pretrained base model. Sequences are value-scrambled solutions
    /// (format without answers) in three conditioning patterns — the plain
    /// prompt the student sees, a teacher prompt carrying the full solution,
    /// and a teacher prompt carrying a key-idea block — so the base model can
    /// both produce the response grammar and copy values out of a context.
    /// The teacher and reflector snapshot the post-warmup weights and the
    /// optimizer state is reset, so the RL phase starts from a clean base.
    pub fn warmup(&mut self, train: &[Problem]) -> Result<()> {
        let vocab = self.student.cfg.vocab_size;
        for w in 1..=self.cfg.warmup_steps {
            let mut rng = Rng::derive(self.cfg.seed, "warmup-batch", &[w as u64]);
            let mut chosen: Vec<usize> = Vec::new();
            while chosen.len() < self.cfg.batch_size.min(train.len()) {
                let i = rng.below(train.len());
                if !chosen.contains(&i) {
                    chosen.push(i);
                }
            }
            let batches: Vec<(Vec<u32>, usize)> = chosen
                .iter()
                .enumerate()
                .map(|(slot, &i)| {
                    let problem = &train[i];
                    let mut srng = Rng::derive(
                        self.cfg.seed,
                        "warmup-scramble",
                        &[w as u64, i as u64],
                    );
                    // Pure repetition drill: a random token span followed by
                    // itself. Every target token rewards content-keyed
                    // copying, which the conditioned teacher patterns rely
                    // on at longer ranges.
                    if (w + slot) % 5 == 4 {
                        let vocab = self.student.cfg.vocab_size as u32;
                        let len = 8 + srng.below(32);
                        let span: Vec<u32> = (0..len)
                            .map(|_| {
                                let mut id = crate::policy::UNK + 1 + srng.below(
                                    (vocab - crate::policy::UNK - 1) as usize,
                                ) as u32;
                                if id == crate::policy::EOS {
                                    id = crate::policy::UNK + 1;
                                }
                                id
                            })
                            .collect();
                        let mut ids = vec![crate::policy::BOS];
                        ids.extend_from_slice(&span);
                        ids.push(crate::policy::SEP);
                        let cond_len = ids.len();
                        ids.extend_from_slice(&span);
                        ids.push(crate::policy::EOS);
                        return Ok((ids, cond_len));
                    }
                    let solution = crate::tasks::format_warmup_solution(problem, &mut srng);
                    let (context, response) = match (w + slot) % 4 {
                        // Teacher pattern: the full solution sits in the
                        // context block and the response restates it.
                        1 => (
                            build_teacher_context(problem, &solution.text)?.text,
                            solution.text.clone(),
                        ),
                        // Teacher pattern: a key-idea block names one step
                        // value and the final answer. Early steps dominate so
                        // the copy distance grows gradually.
                        2 => {
                            let n = solution.values.len().max(1);
                            let k = srng.below(n).min(srng.below(n));
                            (
                                build_teacher_context(problem, &solution.idea_for_step(k))?.text,
                                solution.text.clone(),
                            )
                        }
                        // Copy drill with graded distance: the idea names an
                        // answer that deliberately disagrees with the chained
                        // step values, and the response keeps a random number
                        // of step lines before the answer line. The stated
                        // answer can only come from the context.
                        3 => {
                            let stated = match problem.family {
                                crate::tasks::TaskFamily::ArithChain => {
                                    srng.range_i64(0, 9).to_string()
                                }
                                crate::tasks::TaskFamily::StringTransform => {
                                    let len = solution.answer().chars().count().max(1);
                                    (0..len)
                                        .map(|_| (b'a' + srng.below(10) as u8) as char)
                                        .collect()
                                }
                            };
                            let idea = format!("The final answer is {stated} .");
                            let keep = srng.below(solution.values.len() + 1);
                            let mut response = String::new();
                            for line in solution.text.lines().take(keep) {
                                response.push_str(line);
                                response.push('\n');
                            }
                            response.push_str(&format!("ANSWER : {stated}"));
                            (build_teacher_context(problem, &idea)?.text, response)
                        }
                        // Student pattern: the bare problem prompt.
                        _ => (problem.prompt.clone(), solution.text.clone()),
                    };
                    let mut ids = crate::policy::conditioning_ids(&self.tokenizer, &context);
                    let cond_len = ids.len();
                    let (sol_ids, _) = self.tokenizer.encode(&response);
                    ids.extend_from_slice(&sol_ids);
                    ids.push(crate::policy::EOS);
                    Ok((ids, cond_len))
                })
                .collect::<Result<Vec<_>>>()?;
            let total_targets: usize = batches.iter().map(|(ids, c)| ids.len() - c).sum();
            let scale = 1.0 / total_targets.max(1) as f32;
            let partials: Vec<Vec<f32>> = batches
                .par_iter()
                .map(|(ids, cond_len)| {
                    let mut grads = vec![0f32; self.student.n_params()];
                    let (logits, cache) = self.student.forward(ids, true)?;
                    let cache = cache.expect("cache requested");
                    let mut dlogits = vec![0f32; ids.len() * vocab];
                    for t in (cond_len - 1)..(ids.len() - 1) {
                        let target = ids[t + 1] as usize;
                        let row = &logits[t * vocab..(t + 1) * vocab];
                        let probs = softmax(&row.iter().map(|&x| x as f64).collect::<Vec<_>>());
                        let out = &mut dlogits[t * vocab..(t + 1) * vocab];
                        for j in 0..vocab {
                            out[j] = probs[j] as f32 * scale;
                        }
                        out[target] -= scale;
                    }
                    self.student.backward(&cache, &dlogits, &mut grads);
                    Ok(grads)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut grads = vec![0f32; self.student.n_params()];
            for p in &partials {
                for (g, s) in grads.iter_mut().zip(p.iter()) {
                    *g += s;
                }
            }
            let lr = self.cfg.warmup_lr;
            self.apply_update_with(&grads, OptimizerKind::Adam, lr);
        }
        self.teacher = self.student.with_role(Role::Teacher);
        self.reflector = self.student.with_role(Role::Reflector);
        self.adam_m.fill(0.0);
        self.adam_v.fill(0.0);
        self.adam_t = 0;
        Ok(())
    }

    /// Samples one group per problem with step-derived seeds.
    pub fn sample_batch(&self, problems: &[&Problem], step: usize) -> Result<Vec<RolloutGroup>> {
        problems
            .par_iter()
            .enumerate()
            .map(|(p_idx, problem)| {
                let seed = derive_idx(self.cfg.seed, "sample", &[step as u64, p_idx as u64]);
                sample_rollouts(
                    &self.student,
                    &self.tokenizer,
                    problem,
                    self.cfg.group_size,
                    self.cfg.temperature,
                    self.cfg.max_new_tokens,
                    seed,
                )
            })
            .collect()
    }

    /// Builds the method's distillation assignments for one sampled group.
    /// GRPO returns no items. SDPO distills every rollout against the
    /// reference context (skipping the group when no reference exists in
    /// GROUP mode). ROSD runs the reflector and localizes error quotes.
    pub fn build_distill_items(
        &self,
        problem: &Problem,
        group: &RolloutGroup,
        step: usize,
    ) -> Result<(Vec<DistillItem>, Vec<(LocatedError, usize, String)>)> {
        let mut items = Vec::new();
        let mut locations = Vec::new();
        match self.cfg.method {
            Method::Grpo => {}
            Method::Sdpo => {
                let payload = match self.cfg.context_source {
                    ContextSource::Group => match select_reference(group) {
                        Some(reference) => reference.text.clone(),
                        None => return Ok((items, locations)),
                    },
                    ContextSource::Oracle => problem.canonical_solution(),
                };
                if payload.trim().is_empty() {
                    return Ok((items, locations));
                }
                let context = build_teacher_context(problem, &payload)?.text;
                for (idx, rollout) in group.rollouts.iter().enumerate() {
                    items.push(DistillItem {
                        rollout_idx: idx,
                        context_text: context.clone(),
                        mask: DistillationMask::all_ones(rollout.len()),
                    });
                }
            }
            Method::Rosd => {
                let reflections = run_reflector(
                    self.cfg.reflector_mode,
                    Some(&self.reflector),
                    &self.tokenizer,
                    problem,
                    group,
                    &ReflectorBudgets::default(),
                )?;
                let _ = step;
                for (idx, reflection) in reflections.iter().enumerate() {
                    let Some(reflection) = reflection else {
                        continue;
                    };
                    let rollout = &group.rollouts[idx];
                    if rollout.is_empty() {
                        continue;
                    }
                    let context = build_teacher_context(problem, &reflection.key_idea)?.text;
                    let correct = rollout.reward == 1;
                    let mask = match (&reflection.error_quote, correct) {
                        (_, true) => DistillationMask::all_ones(rollout.len()),
                        (None, false) => DistillationMask::all_ones(rollout.len()),
                        (Some(quote), false) => {
                            let loc =
                                locate_with_options(quote, rollout, !self.cfg.strict_locate)?;
                            let mask = build_mask(&loc, rollout.len(), false)?;
                            locations.push((loc, rollout.len(), rollout_id(group, idx)));
                            mask
                        }
                    };
                    items.push(DistillItem {
                        rollout_idx: idx,
                        context_text: context,
                        mask,
                    });
                }
            }
        }
        Ok((items, locations))
    }

    fn needs_grpo(&self) -> bool {
        self.cfg.method == Method::Grpo || self.cfg.lambda_grpo > 0.0
    }

    fn needs_distill(&self) -> bool {
        self.cfg.method != Method::Grpo
    }

    /// Distillation loss and parameter gradient for explicit items, scaled by
    /// `weight`. Exposed so equivalence checks can force masks and contexts.
    pub fn distill_grads_on_items(
        &self,
        problem: &Problem,
        group: &RolloutGroup,
        items: &[DistillItem],
        weight: f64,
        grads: &mut [f32],
    ) -> Result<f64> {
        let mut total = 0.0;
        for item in items {
            let rollout = &group.rollouts[item.rollout_idx];
            let (ids, cond_len) = full_ids(&self.tokenizer, &problem.prompt, rollout);
            let (logits_f32, cache) = self.student.forward(&ids, true)?;
            let cache = cache.expect("cache requested");
            let vocab = self.student.cfg.vocab_size;
            let student_rows = crate::policy::extract_response_rows(
                &logits_f32,
                vocab,
                cond_len,
                rollout.len(),
            );
            let (loss, dlogits_rows) =
                self.distill_rollout(problem, rollout, &item.context_text, &item.mask, &student_rows)?;
            total += loss;
            if weight != 0.0 {
                let mut dlogits = vec![0f32; ids.len() * vocab];
                for (t, row) in dlogits_rows.iter().enumerate() {
                    let base = (cond_len - 1 + t) * vocab;
                    for (j, &g) in row.iter().enumerate() {
                        dlogits[base + j] = (g * weight) as f32;
                    }
                }
                self.student.backward(&cache, &dlogits, grads);
            }
        }
        Ok(total)
    }

    /// Per-rollout distillation: teacher forward under the item's context,
    /// top-k truncation on the teacher support, masked divergence, and the
    /// gradient scattered back over the full vocabulary.
    fn distill_rollout(
        &self,
        problem: &Problem,
        rollout: &crate::policy::Rollout,
        context_text: &str,
        mask: &DistillationMask,
        student_rows: &[Vec<f64>],
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        let _ = problem;
        let teacher_rows = crate::policy::response_logits(
            &self.teacher,
            &self.tokenizer,
            context_text,
            rollout,
        )?;
        let vocab = self.student.cfg.vocab_size;
        let t_len = rollout.len();
        let mut student_support_logits = Vec::with_capacity(t_len);
        let mut teacher_support_probs = Vec::with_capacity(t_len);
        let mut supports = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let teacher_dist = TokenDistribution::full(softmax(&teacher_rows[t]));
            let support = topk_support(&teacher_dist, self.cfg.top_k.min(vocab));
            let mut t_probs: Vec<f64> = support
                .iter()
                .map(|&tok| teacher_dist.probs[tok as usize])
                .collect();
            let t_sum: f64 = t_probs.iter().sum();
            for p in t_probs.iter_mut() {
                *p /= t_sum;
            }
            let s_logits: Vec<f64> = support
                .iter()
                .map(|&tok| student_rows[t][tok as usize])
                .collect();
            student_support_logits.push(s_logits);
            teacher_support_probs.push(t_probs);
            supports.push(support);
        }
        let out = masked_distill_grad_from_logits(
            &student_support_logits,
            &teacher_support_probs,
            Some(mask),
            self.cfg.divergence,
            self.cfg.alpha,
        )?;
        let unmasked = mask.weights.iter().filter(|&&w| w == 1).count().max(1);
        let norm = match self.cfg.distill_norm {
            DistillNorm::Sum => 1.0,
            DistillNorm::TokenMean => 1.0 / unmasked as f64,
        };
        let mut full_rows = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let mut row = vec![0.0f64; vocab];
            for (j, &tok) in supports[t].iter().enumerate() {
                row[tok as usize] = out.student_logit_grads[t][j] * norm;
            }
            full_rows.push(row);
        }
        Ok((out.loss * norm, full_rows))
    }

    /// Gradients plus metrics over pre-sampled groups, without updating.
    pub fn batch_gradients_on_groups(
        &self,
        problems: &[&Problem],
        groups: Vec<RolloutGroup>,
        step: usize,
    ) -> Result<BatchOutcome> {
        // Pass 1: supervision structure (reflections, masks, advantages).
        let prepared: Vec<PreparedProblem> = problems
            .par_iter()
            .zip(groups.into_par_iter())
            .map(|(problem, group)| {
                let advantage = if self.needs_grpo() {
                    let rewards: Vec<f64> =
                        group.rollouts.iter().map(|r| r.reward as f64).collect();
                    Some(group_advantage(
                        &rewards,
                        self.cfg.advantage_mode,
                        self.cfg.sigma_eps,
                    )?)
                } else {
                    None
                };
                let (items, locations) = if self.needs_distill() {
                    self.build_distill_items(problem, &group, step)?
                } else {
                    (Vec::new(), Vec::new())
                };
                Ok(PreparedProblem {
                    group,
                    advantage,
                    items,
                    locations,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let usable_groups = prepared
            .iter()
            .filter(|p| {
                p.advantage
                    .as_ref()
                    .is_some_and(|a| a.advantages.iter().any(|&x| x != 0.0))
            })
            .count();
        let distilled_rollouts: usize = prepared.iter().map(|p| p.items.len()).sum();

        let grpo_weight = if usable_groups > 0 {
            let lambda = if self.cfg.method == Method::Grpo {
                1.0
            } else {
                self.cfg.lambda_grpo
            };
            lambda / usable_groups as f64
        } else {
            0.0
        };
        let distill_weight = if distilled_rollouts > 0 {
            1.0 / distilled_rollouts as f64
        } else {
            0.0
        };

        // Pass 2: forward/backward per rollout.
        let results: Vec<ProblemGrads> = prepared
            .par_iter()
            .zip(problems.par_iter())
            .map(|(prep, problem)| {
                self.problem_gradients(problem, prep, grpo_weight, distill_weight)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut grads = vec![0f32; self.student.n_params()];
        let mut grpo_loss_sum = 0.0;
        let mut distill_loss_sum = 0.0;
        let mut distill_count = 0usize;
        let mut grpo_usable = 0usize;
        for r in &results {
            for (g, s) in grads.iter_mut().zip(r.grads.iter()) {
                *g += s;
            }
            grpo_loss_sum += r.grpo_loss;
            distill_loss_sum += r.distill_loss;
            distill_count += r.distill_count;
            grpo_usable += r.grpo_usable as usize;
        }

        let mut loss = 0.0;
        if self.needs_grpo() && grpo_usable > 0 {
            let lambda = if self.cfg.method == Method::Grpo {
                1.0
            } else {
                self.cfg.lambda_grpo
            };
            loss += lambda * grpo_loss_sum / grpo_usable as f64;
        }
        if distill_count > 0 {
            loss += distill_loss_sum / distill_count as f64;
        }

        let usable = (self.needs_grpo() && usable_groups > 0)
            || (self.needs_distill() && distilled_rollouts > 0);

        // Metrics.
        let mut n_correct = 0usize;
        let mut n_total = 0usize;
        let mut len_sum = 0usize;
        let mut loc_items = Vec::new();
        let mut localizations = Vec::new();
        for prep in &prepared {
            for r in &prep.group.rollouts {
                n_correct += r.reward as usize;
                n_total += 1;
                len_sum += r.len();
            }
            for (loc, t_len, id) in &prep.locations {
                loc_items.push((loc.clone(), *t_len));
                localizations.push(LocalizationRecord {
                    step,
                    rollout_id: id.clone(),
                    k: loc.k,
                    t: *t_len,
                    match_kind: loc.match_kind,
                });
            }
        }
        let (match_rate, mean_pos) = if loc_items.is_empty() {
            (None, None)
        } else {
            let (rate, pos) = localization_metrics(&loc_items)?;
            (Some(rate), pos)
        };
        let grad_norm = grads
            .iter()
            .map(|&g| g as f64 * g as f64)
            .sum::<f64>()
            .sqrt();
        let metrics = StepMetrics {
            step,
            rollout_accuracy: n_correct as f64 / n_total.max(1) as f64,
            loss,
            match_rate,
            mean_normalized_error_position: mean_pos,
            mean_response_length: len_sum as f64 / n_total.max(1) as f64,
            grad_norm,
            skipped_update: !usable,
            wall_time_ms: 0.0,
        };
        metrics.assert_finite()?;
        Ok(BatchOutcome {
            grads,
            metrics,
            localizations,
            usable,
        })
    }

    fn problem_gradients(
        &self,
        problem: &Problem,
        prep: &PreparedProblem,
        grpo_weight: f64,
        distill_weight: f64,
    ) -> Result<ProblemGrads> {
        let vocab = self.student.cfg.vocab_size;
        let mut grads = vec![0f32; self.student.n_params()];
        let mut grpo_loss = 0.0;
        let mut grpo_usable = false;

        if let Some(adv) = &prep.advantage {
            if adv.advantages.iter().any(|&a| a != 0.0) {
                grpo_usable = true;
                // Forward every rollout with caches, compute the group loss,
                // then backprop each rollout's logit gradient.
                let mut caches = Vec::with_capacity(prep.group.size());
                let mut blocks = Vec::with_capacity(prep.group.size());
                let mut ids_list = Vec::with_capacity(prep.group.size());
                let mut cond_lens = Vec::with_capacity(prep.group.size());
                let mut token_ids = Vec::with_capacity(prep.group.size());
                let mut old_logprobs = Vec::with_capacity(prep.group.size());
                for rollout in &prep.group.rollouts {
                    let (ids, cond_len) = full_ids(&self.tokenizer, &problem.prompt, rollout);
                    let (logits, cache) = self.student.forward(&ids, true)?;
                    let rows = crate::policy::extract_response_rows(
                        &logits,
                        vocab,
                        cond_len,
                        rollout.len(),
                    );
                    let mut block = Vec::with_capacity(rollout.len() * vocab);
                    for row in rows {
                        block.extend(row);
                    }
                    blocks.push(block);
                    caches.push(cache.expect("cache requested"));
                    ids_list.push(ids);
                    cond_lens.push(cond_len);
                    token_ids.push(rollout.token_ids.clone());
                    old_logprobs.push(rollout.sample_logprobs.clone());
                }
                let (loss, dblocks) = grpo_loss_from_logits(
                    &blocks,
                    &token_ids,
                    &old_logprobs,
                    &adv.advantages,
                    vocab,
                    self.cfg.eps_low,
                    self.cfg.eps_high,
                )?;
                grpo_loss = loss;
                if grpo_weight != 0.0 {
                    for (i, dblock) in dblocks.iter().enumerate() {
                        let t_len = token_ids[i].len();
                        let mut dlogits = vec![0f32; ids_list[i].len() * vocab];
                        let base = (cond_lens[i] - 1) * vocab;
                        for (j, &g) in dblock.iter().enumerate().take(t_len * vocab) {
                            dlogits[base + j] = (g * grpo_weight) as f32;
                        }
                        self.student.backward(&caches[i], &dlogits, &mut grads);
                    }
                }
            }
        }

        let distill_loss = if !prep.items.is_empty() {
            self.distill_grads_on_items(problem, &prep.group, &prep.items, distill_weight, &mut grads)?
        } else {
            0.0
        };

        Ok(ProblemGrads {
            grads,
            grpo_loss,
            grpo_usable,
            distill_loss,
            distill_count: prep.items.len(),
        })
    }

    /// Samples, computes gradients, and reports, without touching parameters.
    pub fn batch_gradients(&self, problems: &[&Problem], step: usize) -> Result<BatchOutcome> {
        let groups = self.sample_batch(problems, step)?;
        self.batch_gradients_on_groups(problems, groups, step)
    }

    /// One full training step: sample, grade, update, maintain the teacher.
    pub fn train_step(&mut self, problems: &[&Problem], step: usize) -> Result<BatchOutcome> {
        let mut outcome = self.batch_gradients(problems, step)?;
        if outcome.usable {
            clip_global_norm(&mut outcome.grads, self.cfg.grad_clip);
            self.apply_update(&outcome.grads);
        }
        if self.cfg.teacher_mode == TeacherMode::Ema {
            ema_update(&mut self.teacher, &self.student, self.cfg.ema_tau)?;
        }
        Ok(outcome)
    }

    pub fn apply_update(&mut self, grads: &[f32]) {
        self.apply_update_with(grads, self.cfg.optimizer, self.cfg.lr);
    }

    pub fn apply_update_with(&mut self, grads: &[f32], optimizer: OptimizerKind, lr: f64) {
        let lr = lr as f32;
        match optimizer {
            OptimizerKind::Sgd => {
                for (p, &g) in self.student.params.iter_mut().zip(grads.iter()) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                const B1: f32 = 0.9;
                const B2: f32 = 0.999;
                const EPS: f32 = 1e-8;
                self.adam_t += 1;
                let t = self.adam_t as i32;
                let c1 = 1.0 - B1.powi(t);
                let c2 = 1.0 - B2.powi(t);
                for i in 0..grads.len() {
                    let g = grads[i];
                    self.adam_m[i] = B1 * self.adam_m[i] + (1.0 - B1) * g;
                    self.adam_v[i] = B2 * self.adam_v[i] + (1.0 - B2) * g * g;
                    let m_hat = self.adam_m[i] / c1;
                    let v_hat = self.adam_v[i] / c2;
                    self.student.params[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
                }
            }
        }
    }
}

/// Scales the gradient so its global L2 norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut [f32], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grads.iter().map(|&g| g as f64 * g as f64).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = (max_norm / norm) as f32;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
}

pub(crate) fn derive(seed: u64, label: &str) -> u64 {
    derive_idx(seed, label, &[])
}

pub(crate) fn derive_idx(seed: u64, label: &str, idx: &[u64]) -> u64 {
    let mut rng = Rng::derive(seed, label, idx);
    rng.next_u64()
}
