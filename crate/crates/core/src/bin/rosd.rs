//! Command-line entry points: `gen-data`, `train`, `eval`, `plot`.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use rosd_core::harness::{self, parse_kv_file, TrainConfig};
use rosd_core::policy::load_model;
use rosd_core::tasks::{generate_problems, problems_to_jsonl, TaskFamily};
use rosd_core::Error;

const USAGE: &str = "\
rosd - reflective on-policy self-distillation at desk scale

USAGE:
  rosd gen-data --family <arith_chain|string_transform> --seed <u64> --n <count> [--out <file>]
  rosd train    [--config <kv-file>] [--out-dir <dir>] [--<key> <value> ...]
  rosd eval     --checkpoint <model.ckpt> --family <family> [--n <count>] [--k <samples>]
                [--seed <u64>] [--temperature <t>] [--max-new-tokens <n>]
  rosd plot     --runs <dir,dir,...> --metrics <name,name,...> [--out <dir>]

`train` accepts every TrainConfig field as `--key value`; flags override the
config file. Try `rosd train --help-config` for the full key list.
";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(args: &[String]) -> rosd_core::Result<()> {
    let Some(cmd) = args.first() else {
        print!("{USAGE}");
        return Ok(());
    };
    let rest = &args[1..];
    match cmd.as_str() {
        "gen-data" => cmd_gen_data(rest),
        "train" => cmd_train(rest),
        "eval" => cmd_eval(rest),
        "plot" => cmd_plot(rest),
        "--help" | "-h" | "help" => {
            print!("{USAGE}");
            Ok(())
        }
        other => Err(Error::Config(format!(
            "unknown command `{other}`; see `rosd --help`"
        ))),
    }
}

/// Parses `--key value` pairs (bare `--flag` becomes `flag=true`).
fn parse_flags(args: &[String]) -> rosd_core::Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        let Some(key) = arg.strip_prefix("--") else {
            return Err(Error::Config(format!("unexpected argument `{arg}`")));
        };
        let key = key.replace('-', "_");
        if i + 1 < args.len() && !args[i + 1].starts_with("--") {
            out.insert(key, args[i + 1].clone());
            i += 2;
        } else {
            out.insert(key, "true".to_string());
            i += 1;
        }
    }
    Ok(out)
}

fn required<'a>(
    flags: &'a BTreeMap<String, String>,
    key: &str,
) -> rosd_core::Result<&'a String> {
    flags
        .get(key)
        .ok_or_else(|| Error::Config(format!("missing required flag --{key}")))
}

fn cmd_gen_data(args: &[String]) -> rosd_core::Result<()> {
    let flags = parse_flags(args)?;
    let family: TaskFamily = required(&flags, "family")?.parse()?;
    let seed: u64 = required(&flags, "seed")?
        .parse()
        .map_err(|_| Error::Config("--seed must be an unsigned integer".into()))?;
    let n: usize = required(&flags, "n")?
        .parse()
        .map_err(|_| Error::Config("--n must be a count".into()))?;
    let problems = generate_problems(family, seed, n)?;
    let jsonl = problems_to_jsonl(&problems)?;
    match flags.get("out") {
        Some(path) => {
            std::fs::write(path, jsonl)?;
            eprintln!("wrote {n} problems to {path}");
        }
        None => print!("{jsonl}"),
    }
    Ok(())
}

fn cmd_train(args: &[String]) -> rosd_core::Result<()> {
    let mut flags = parse_flags(args)?;
    if flags.remove("help_config").is_some() {
        let defaults = serde_json::to_string_pretty(&TrainConfig::default())?;
        println!("TrainConfig keys and defaults:\n{defaults}");
        return Ok(());
    }
    let mut cfg = TrainConfig::default();
    if let Some(path) = flags.remove("config") {
        let content = std::fs::read_to_string(&path)?;
        cfg.apply_kv(&parse_kv_file(&content)?)?;
    }
    let out_dir = flags
        .remove("out_dir")
        .unwrap_or_else(|| format!("runs/{}-seed{}", cfg.method, cfg.seed));
    cfg.apply_kv(&flags)?;
    cfg.validate()?;
    let out = PathBuf::from(&out_dir);
    let summary = harness::run_experiment(&cfg, &out)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    eprintln!("run complete: {}", out.display());
    Ok(())
}

fn cmd_eval(args: &[String]) -> rosd_core::Result<()> {
    let flags = parse_flags(args)?;
    let ckpt = PathBuf::from(required(&flags, "checkpoint")?);
    let family: TaskFamily = required(&flags, "family")?.parse()?;
    let n: usize = flags.get("n").map_or(Ok(32), |v| v.parse()).map_err(|_| {
        Error::Config("--n must be a count".into())
    })?;
    let k: usize = flags.get("k").map_or(Ok(8), |v| v.parse()).map_err(|_| {
        Error::Config("--k must be a count".into())
    })?;
    let seed: u64 = flags.get("seed").map_or(Ok(0), |v| v.parse()).map_err(|_| {
        Error::Config("--seed must be an unsigned integer".into())
    })?;
    let temperature: f64 = flags
        .get("temperature")
        .map_or(Ok(1.0), |v| v.parse())
        .map_err(|_| Error::Config("--temperature must be a number".into()))?;
    let max_new: usize = flags
        .get("max_new_tokens")
        .map_or(Ok(96), |v| v.parse())
        .map_err(|_| Error::Config("--max-new-tokens must be a count".into()))?;

    let (model, tokenizer) = load_model(&ckpt)?;
    let problems = generate_problems(family, seed ^ 0x5eed, n)?;
    let score = harness::evaluate(&model, &tokenizer, &problems, k, temperature, max_new, seed)?;
    println!(
        "{{\"family\":\"{family}\",\"n\":{n},\"k\":{k},\"mean_at_k\":{score}}}"
    );
    Ok(())
}

fn cmd_plot(args: &[String]) -> rosd_core::Result<()> {
    let flags = parse_flags(args)?;
    let runs: Vec<PathBuf> = required(&flags, "runs")?
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| PathBuf::from(s.trim()))
        .collect();
    let metrics: Vec<String> = required(&flags, "metrics")?
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().to_string())
        .collect();
    let out = PathBuf::from(flags.get("out").map(String::as_str).unwrap_or("plots"));
    let files = harness::plot(&runs, &metrics, &out)?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}
