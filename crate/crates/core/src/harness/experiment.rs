//! The experiment runner: full training loop with periodic in-domain and
//! out-of-domain evaluation, deterministic metrics logging, checkpointing,
//! and resumption from the last checkpoint.
//!
//! Run directory layout:
//!
//! ```text
//! <run>/config.snapshot        frozen config (JSON)
//! <run>/metrics.jsonl          step / eval / localization records
//! <run>/timings.jsonl          wall-clock per step (not reproducible)
//! <run>/reflections.jsonl      reflector outputs (when enabled)
//! <run>/checkpoints/step-<n>/  model.ckpt + trainer_state.bin
//! <run>/summary.json           final scores
//! ```
//!
//! `metrics.jsonl` contains no timestamps or paths: rerunning a config with
//! the same seed reproduces it byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::train::{derive, derive_idx, Trainer};
use crate::harness::{Method, MetricsRecord, TrainConfig};
use crate::policy::{load_model, save_model};
use crate::reflect::{run_reflector, ReflectorBudgets};
use crate::rng::Rng;
use crate::tasks::{generate_problems, Problem, TaskFamily};

const STATE_MAGIC: &[u8; 8] = b"ROSDSTAT";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub final_step: usize,
    pub train_family: TaskFamily,
    pub in_domain_max_mean_at_k: f64,
    pub in_domain_final_mean_at_k: f64,
    pub in_domain_last3_avg: f64,
    pub per_family_final: BTreeMap<String, f64>,
    pub per_family_last3_avg: BTreeMap<String, f64>,
}

struct RunPaths {
    dir: PathBuf,
    config: PathBuf,
    metrics: PathBuf,
    timings: PathBuf,
    reflections: PathBuf,
    checkpoints: PathBuf,
    summary: PathBuf,
}

impl RunPaths {
    fn new(dir: &Path) -> Self {
        RunPaths {
            dir: dir.to_path_buf(),
            config: dir.join("config.snapshot"),
            metrics: dir.join("metrics.jsonl"),
            timings: dir.join("timings.jsonl"),
            reflections: dir.join("reflections.jsonl"),
            checkpoints: dir.join("checkpoints"),
            summary: dir.join("summary.json"),
        }
    }

    fn checkpoint_dir(&self, step: usize) -> PathBuf {
        self.checkpoints.join(format!("step-{step}"))
    }
}

/// Generates the train pool and one eval set per family. In-domain eval
/// problems never collide with the train pool.
pub fn build_problem_sets(
    cfg: &TrainConfig,
) -> Result<(Vec<Problem>, Vec<(TaskFamily, Vec<Problem>)>)> {
    let train = generate_problems(
        cfg.train_family,
        derive(cfg.seed, "train-problems"),
        cfg.train_problems,
    )?;
    let train_prompts: std::collections::HashSet<&str> =
        train.iter().map(|p| p.prompt.as_str()).collect();
    let mut eval_sets = Vec::new();
    for (f_idx, &family) in cfg.eval_families.iter().enumerate() {
        let raw = generate_problems(
            family,
            derive_idx(cfg.seed, "eval-problems", &[f_idx as u64]),
            cfg.eval_problems + 64,
        )?;
        let kept: Vec<Problem> = raw
            .into_iter()
            .filter(|p| family != cfg.train_family || !train_prompts.contains(p.prompt.as_str()))
            .take(cfg.eval_problems)
            .collect();
        if kept.len() < cfg.eval_problems {
            return Err(Error::Config(format!(
                "could not build {} disjoint eval problems for {family}",
                cfg.eval_problems
            )));
        }
        eval_sets.push((family, kept));
    }
    Ok((train, eval_sets))
}

fn append_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut buf = String::new();
    for line in lines {
        buf.push_str(line);
        buf.push('\n');
    }
    f.write_all(buf.as_bytes())?;
    f.flush()?;
    Ok(())
}

fn save_trainer_state(path: &Path, trainer: &Trainer, step: usize) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(STATE_MAGIC);
    buf.extend_from_slice(&(step as u64).to_le_bytes());
    buf.extend_from_slice(&trainer.adam_t.to_le_bytes());
    buf.extend_from_slice(&(trainer.teacher.params.len() as u64).to_le_bytes());
    for v in &trainer.teacher.params {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in &trainer.reflector.params {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in &trainer.adam_m {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in &trainer.adam_v {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

fn load_trainer_state(path: &Path, trainer: &mut Trainer) -> Result<usize> {
    let raw = fs::read(path)?;
    if raw.len() < 32 || &raw[..8] != STATE_MAGIC {
        return Err(Error::Input(format!(
            "invalid trainer state: {}",
            path.display()
        )));
    }
    let step = u64::from_le_bytes(raw[8..16].try_into().unwrap()) as usize;
    let adam_t = u64::from_le_bytes(raw[16..24].try_into().unwrap());
    let n = u64::from_le_bytes(raw[24..32].try_into().unwrap()) as usize;
    if n != trainer.student.n_params() || raw.len() != 32 + 4 * 4 * n {
        return Err(Error::Input("trainer state size mismatch".into()));
    }
    let mut off = 32;
    let mut read_block = |out: &mut Vec<f32>| {
        out.clear();
        out.extend(
            raw[off..off + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
        );
        off += 4 * n;
    };
    let mut teacher = Vec::new();
    read_block(&mut teacher);
    trainer.teacher.params = teacher;
    let mut reflector = Vec::new();
    read_block(&mut reflector);
    trainer.reflector.params = reflector;
    read_block(&mut trainer.adam_m);
    read_block(&mut trainer.adam_v);
    trainer.adam_t = adam_t;
    Ok(step)
}

/// Finds the newest complete checkpoint at or below `max_step`.
fn latest_checkpoint(paths: &RunPaths, max_step: usize) -> Option<usize> {
    let entries = fs::read_dir(&paths.checkpoints).ok()?;
    let mut best = None;
    for entry in entries.flatten() {
        let name = entry.file_name();
        let name = name.to_string_lossy();
        let Some(step_str) = name.strip_prefix("step-") else {
            continue;
        };
        let Ok(step) = step_str.parse::<usize>() else {
            continue;
        };
        if step > max_step {
            continue;
        }
        let dir = paths.checkpoint_dir(step);
        if dir.join("model.ckpt").exists() && dir.join("trainer_state.bin").exists() {
            best = best.max(Some(step));
        }
    }
    best
}

/// Drops metric/timing records with step > `keep_step` (resume support).
fn truncate_jsonl(path: &Path, keep_step: usize) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let content = fs::read_to_string(path)?;
    let mut kept = String::new();
    for line in content.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(line)?;
        let step = v.get("step").and_then(|s| s.as_u64()).unwrap_or(0) as usize;
        if step <= keep_step {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    fs::write(path, kept)?;
    Ok(())
}

fn pick_batch<'a>(
    train: &'a [Problem],
    batch_size: usize,
    seed: u64,
    step: usize,
) -> Vec<&'a Problem> {
    let mut rng = Rng::derive(seed, "batch", &[step as u64]);
    let mut chosen: Vec<usize> = Vec::with_capacity(batch_size);
    while chosen.len() < batch_size.min(train.len()) {
        let i = rng.below(train.len());
        if !chosen.contains(&i) {
            chosen.push(i);
        }
    }
    chosen.into_iter().map(|i| &train[i]).collect()
}

fn eval_all(
    trainer: &Trainer,
    eval_sets: &[(TaskFamily, Vec<Problem>)],
    step: usize,
) -> Result<Vec<MetricsRecord>> {
    let cfg = &trainer.cfg;
    let mut records = Vec::new();
    for (f_idx, (family, problems)) in eval_sets.iter().enumerate() {
        let seed = derive_idx(cfg.seed, "eval-run", &[step as u64, f_idx as u64]);
        let score = super::evaluate(
            &trainer.student,
            &trainer.tokenizer,
            problems,
            cfg.eval_samples,
            cfg.temperature,
            cfg.max_new_tokens,
            seed,
        )?;
        records.push(MetricsRecord::Eval {
            step,
            family: *family,
            mean_at_k: score,
            k: cfg.eval_samples,
        });
    }
    Ok(records)
}

fn write_checkpoint(paths: &RunPaths, trainer: &Trainer, step: usize) -> Result<()> {
    let dir = paths.checkpoint_dir(step);
    fs::create_dir_all(&dir)?;
    save_model(&dir.join("model.ckpt"), &trainer.student, &trainer.tokenizer)?;
    save_trainer_state(&dir.join("trainer_state.bin"), trainer, step)?;
    Ok(())
}

/// Executes the configured run inside `out_dir`, resuming from the last
/// checkpoint when one exists. Returns the final summary.
pub fn run_experiment(cfg: &TrainConfig, out_dir: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    let paths = RunPaths::new(out_dir);
    fs::create_dir_all(&paths.dir)?;
    fs::create_dir_all(&paths.checkpoints)?;

    let snapshot = serde_json::to_string_pretty(cfg)?;
    if paths.config.exists() {
        let existing = fs::read_to_string(&paths.config)?;
        if existing != snapshot {
            return Err(Error::Config(format!(
                "run directory {} holds a different config",
                paths.dir.display()
            )));
        }
    } else {
        fs::write(&paths.config, &snapshot)?;
    }

    let (train, eval_sets) = build_problem_sets(cfg)?;
    let mut trainer = Trainer::new(cfg.clone())?;

    // Resume from the newest complete checkpoint, if any.
    let mut start_step = 0usize;
    if let Some(step) = latest_checkpoint(&paths, cfg.steps) {
        let ckpt = paths.checkpoint_dir(step);
        let (student, _) = load_model(&ckpt.join("model.ckpt"))?;
        trainer.student.params = student.params;
        let state_step = load_trainer_state(&ckpt.join("trainer_state.bin"), &mut trainer)?;
        if state_step != step {
            return Err(Error::Input(format!(
                "checkpoint step-{step} carries state for step {state_step}"
            )));
        }
        truncate_jsonl(&paths.metrics, step)?;
        truncate_jsonl(&paths.timings, step)?;
        if paths.reflections.exists() {
            truncate_jsonl(&paths.reflections, step)?;
        }
        start_step = step;
        eprintln!("resuming {} from step {step}", paths.dir.display());
    } else {
        // Fresh run: clear any partial logs, then build the base model.
        for p in [&paths.metrics, &paths.timings, &paths.reflections] {
            if p.exists() {
                fs::remove_file(p)?;
            }
        }
        if cfg.warmup_steps > 0 {
            trainer.warmup(&train)?;
            eprintln!("[{}] warmup done ({} steps)", cfg.method, cfg.warmup_steps);
        }
        let baseline = eval_all(&trainer, &eval_sets, 0)?;
        let lines: Vec<String> = baseline
            .iter()
            .map(|r| serde_json::to_string(r).map_err(Error::from))
            .collect::<Result<_>>()?;
        append_lines(&paths.metrics, &lines)?;
        for r in &baseline {
            if let MetricsRecord::Eval {
                family, mean_at_k, ..
            } = r
            {
                eprintln!("[{}] step 0 eval {family}: {mean_at_k:.4}", cfg.method);
            }
        }
    }

    for step in (start_step + 1)..=cfg.steps {
        let started = Instant::now();
        let batch = pick_batch(&train, cfg.batch_size, cfg.seed, step);
        let mut outcome = trainer.train_step(&batch, step)?;
        outcome.metrics.wall_time_ms = started.elapsed().as_secs_f64() * 1e3;

        if cfg.log_reflections && cfg.method == Method::Rosd {
            log_reflections(&paths, &trainer, &batch, step)?;
        }

        let mut lines = vec![serde_json::to_string(&MetricsRecord::Step(
            outcome.metrics.clone(),
        ))?];
        for loc in &outcome.localizations {
            lines.push(serde_json::to_string(&MetricsRecord::Localization(
                loc.clone(),
            ))?);
        }
        let is_eval_step = step % cfg.eval_every == 0 || step == cfg.steps;
        if is_eval_step {
            for rec in eval_all(&trainer, &eval_sets, step)? {
                if let MetricsRecord::Eval {
                    family, mean_at_k, ..
                } = &rec
                {
                    eprintln!(
                        "[{}] step {step} eval {family}: {mean_at_k:.4} (acc {:.3}, loss {:.4})",
                        cfg.method, outcome.metrics.rollout_accuracy, outcome.metrics.loss
                    );
                }
                lines.push(serde_json::to_string(&rec)?);
            }
        }
        append_lines(&paths.metrics, &lines)?;
        append_lines(
            &paths.timings,
            &[format!(
                "{{\"step\":{step},\"wall_time_ms\":{:.3}}}",
                outcome.metrics.wall_time_ms
            )],
        )?;

        if step % cfg.checkpoint_every == 0 || step == cfg.steps {
            write_checkpoint(&paths, &trainer, step)?;
        }
    }

    let summary = summarize(&paths, cfg)?;
    fs::write(&paths.summary, serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

/// Re-runs the reflector on this step's sampled groups purely for logging.
fn log_reflections(
    paths: &RunPaths,
    trainer: &Trainer,
    batch: &[&Problem],
    step: usize,
) -> Result<()> {
    let groups = trainer.sample_batch(batch, step)?;
    let mut lines = Vec::new();
    for (problem, group) in batch.iter().zip(groups.iter()) {
        let reflections = run_reflector(
            trainer.cfg.reflector_mode,
            Some(&trainer.reflector),
            &trainer.tokenizer,
            problem,
            group,
            &ReflectorBudgets::default(),
        )?;
        for r in reflections.iter().flatten() {
            let mut v = serde_json::to_value(r)?;
            v["step"] = serde_json::json!(step);
            lines.push(serde_json::to_string(&v)?);
        }
    }
    append_lines(&paths.reflections, &lines)
}

/// Reads the metrics log back and computes the summary scores.
fn summarize(paths_dir: &RunPaths, cfg: &TrainConfig) -> Result<RunSummary> {
    let records = read_metrics(&paths_dir.metrics)?;
    let mut per_family: BTreeMap<String, Vec<(usize, f64)>> = BTreeMap::new();
    let mut final_step = 0usize;
    for rec in &records {
        match rec {
            MetricsRecord::Eval {
                step,
                family,
                mean_at_k,
                ..
            } => {
                per_family
                    .entry(family.slug().to_string())
                    .or_default()
                    .push((*step, *mean_at_k));
            }
            MetricsRecord::Step(m) => final_step = final_step.max(m.step),
            MetricsRecord::Localization(_) => {}
        }
    }
    let train_slug = cfg.train_family.slug().to_string();
    let series = per_family.get(&train_slug).cloned().unwrap_or_default();
    let in_domain_max = series
        .iter()
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let last3 = |s: &[(usize, f64)]| {
        let tail: Vec<f64> = s.iter().rev().take(3).map(|(_, v)| *v).collect();
        if tail.is_empty() {
            0.0
        } else {
            tail.iter().sum::<f64>() / tail.len() as f64
        }
    };
    let mut per_family_final = BTreeMap::new();
    let mut per_family_last3 = BTreeMap::new();
    for (family, s) in &per_family {
        per_family_final.insert(family.clone(), s.last().map(|(_, v)| *v).unwrap_or(0.0));
        per_family_last3.insert(family.clone(), last3(s));
    }
    Ok(RunSummary {
        final_step,
        train_family: cfg.train_family,
        in_domain_max_mean_at_k: if in_domain_max.is_finite() {
            in_domain_max
        } else {
            0.0
        },
        in_domain_final_mean_at_k: *per_family_final.get(&train_slug).unwrap_or(&0.0),
        in_domain_last3_avg: *per_family_last3.get(&train_slug).unwrap_or(&0.0),
        per_family_final,
        per_family_last3_avg: per_family_last3,
    })
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let content = fs::read_to_string(path)?;
    content
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            method: Method::Grpo,
            group_size: 2,
            batch_size: 2,
            steps: 4,
            eval_every: 2,
            eval_samples: 1,
            max_new_tokens: 12,
            d_model: 16,
            n_heads: 2,
            n_layers: 1,
            context_len: 256,
            train_problems: 8,
            eval_problems: 4,
            checkpoint_every: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn run_writes_complete_run_directory() {
        let dir = tempdir().unwrap();
        let cfg = quick_cfg();
        let summary = run_experiment(&cfg, dir.path()).unwrap();
        assert_eq!(summary.final_step, 4);
        assert!(dir.path().join("config.snapshot").exists());
        assert!(dir.path().join("metrics.jsonl").exists());
        assert!(dir.path().join("summary.json").exists());
        assert!(dir.path().join("checkpoints/step-4/model.ckpt").exists());

        let records = read_metrics(&dir.path().join("metrics.jsonl")).unwrap();
        let steps: Vec<usize> = records
            .iter()
            .filter_map(|r| match r {
                MetricsRecord::Step(m) => Some(m.step),
                _ => None,
            })
            .collect();
        assert_eq!(steps, vec![1, 2, 3, 4]);
        // Baseline eval at step 0 plus evals at steps 2 and 4.
        let eval_steps: Vec<usize> = records
            .iter()
            .filter_map(|r| match r {
                MetricsRecord::Eval { step, .. } => Some(*step),
                _ => None,
            })
            .collect();
        assert!(eval_steps.contains(&0));
        assert!(eval_steps.contains(&4));
    }

    #[test]
    fn reruns_reproduce_metrics_byte_identically() {
        let cfg = quick_cfg();
        let a = tempdir().unwrap();
        let b = tempdir().unwrap();
        run_experiment(&cfg, a.path()).unwrap();
        run_experiment(&cfg, b.path()).unwrap();
        let ma = fs::read(a.path().join("metrics.jsonl")).unwrap();
        let mb = fs::read(b.path().join("metrics.jsonl")).unwrap();
        assert_eq!(ma, mb);
    }

    #[test]
    fn resume_from_checkpoint_matches_uninterrupted_run() {
        let cfg = quick_cfg();
        let full = tempdir().unwrap();
        run_experiment(&cfg, full.path()).unwrap();

        // Interrupted run: stop after step 2 by running a truncated config,
        // then resume with the full config.
        let partial = tempdir().unwrap();
        let mut short = cfg.clone();
        short.steps = 2;
        run_experiment(&short, partial.path()).unwrap();
        // Replace the snapshot with the full config so the resumed run
        // continues the same experiment.
        fs::write(
            partial.path().join("config.snapshot"),
            serde_json::to_string_pretty(&cfg).unwrap(),
        )
        .unwrap();
        run_experiment(&cfg, partial.path()).unwrap();

        let ma = fs::read_to_string(full.path().join("metrics.jsonl")).unwrap();
        let mb = fs::read_to_string(partial.path().join("metrics.jsonl")).unwrap();
        assert_eq!(ma, mb);
    }

    #[test]
    fn conflicting_config_is_rejected() {
        let dir = tempdir().unwrap();
        let cfg = quick_cfg();
        run_experiment(&cfg, dir.path()).unwrap();
        let mut other = cfg;
        other.seed = 999;
        assert!(matches!(
            run_experiment(&other, dir.path()),
            Err(Error::Config(_))
        ));
    }
}
