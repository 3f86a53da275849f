//! Config resolution, training and evaluation.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use etdmpc::config::{preset, RunConfig};
use etdmpc::trainer::{discount_for_episode_length, evaluate_planner, RunOutput};
use etdmpc::worldmodel::checkpoint;
use serde::Serialize;

use crate::output::Staging;
use crate::ConfigArgs;

pub const DEFAULT_PRESET: &str = "efficienttdmpc-utd4";

/// Builds the run configuration from a file or a preset and applies the overrides.
pub fn resolve(args: &ConfigArgs, env: Option<&str>) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            RunConfig::from_json(&text).with_context(|| format!("loading {}", path.display()))?
        }
        None => {
            let name = args.preset.as_deref().unwrap_or(DEFAULT_PRESET);
            preset(name, env.unwrap_or(&args.env))?
        }
    };
    if !args.seeds.is_empty() {
        cfg.seeds = args.seeds.clone();
    }
    if let Some(steps) = args.steps {
        cfg.train.total_steps = steps;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Trains `seed` and writes its artifacts under `dir` inside the staging area.
pub fn train_seed(cfg: &RunConfig, seed: u64, out: &Staging, dir: &str) -> Result<RunOutput> {
    let mut trainer = cfg.trainer(seed)?;
    let result = trainer.run(|m, _| {
        eprintln!(
            "{dir}: step {:>7}  return {:>8.2} ± {:<7.2} updates {}",
            m.env_step, m.eval_return_mean, m.eval_return_std, m.updates
        );
    })?;
    out.write_csv(&format!("{dir}/metrics.csv"), &result.metrics)?;
    out.write_csv(&format!("{dir}/timing.csv"), &result.timing)?;
    checkpoint::save(
        &out.path(format!("{dir}/checkpoint.json"))?,
        &trainer.model,
        Some(&cfg.env),
    )?;
    trainer.buffer.save_snapshot(
        &out.path(format!("{dir}/replay.jsonl"))?,
        &trainer.spec,
        Some("checkpoint.json"),
    )?;
    Ok(result)
}

pub fn train(args: &ConfigArgs, out: &Path) -> Result<()> {
    let cfg = resolve(args, None)?;
    let staging = Staging::new(out)?;
    staging.write_text("resolved_config.json", &cfg.to_json())?;
    for &seed in &cfg.seeds {
        let r = train_seed(&cfg, seed, &staging, &format!("seed_{seed}"))?;
        if let Some(f) = r.final_return() {
            eprintln!("seed {seed}: final return {f:.2}");
        }
    }
    let dir = staging.commit()?;
    println!("{}", dir.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalRow {
    seed: u64,
    episode: usize,
    episode_return: f64,
}

pub fn evaluate(args: &ConfigArgs, checkpoint_path: &Path, episodes: usize, out: &Path) -> Result<()> {
    if episodes == 0 {
        bail!("--episodes must be positive");
    }
    let ck = checkpoint::load(checkpoint_path).with_context(|| format!("loading {}", checkpoint_path.display()))?;
    let mut cfg = resolve(args, ck.env.as_deref())?;
    cfg.model = ck.model.config.clone();
    cfg.validate()
        .context("checkpoint is incompatible with the configuration")?;
    let spec = cfg.env_spec()?;
    let mut planner = cfg.acting.clone();
    planner.gamma = discount_for_episode_length(spec.episode_length, cfg.train.gamma_min, cfg.train.gamma_max);
    let model = &ck.model;

    let staging = Staging::new(out)?;
    staging.write_text("resolved_config.json", &cfg.to_json())?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let returns = evaluate_planner(
            &spec,
            model,
            |_, obs| Ok(model.encode(obs)?.into_inner()),
            &planner,
            episodes,
            seed,
        )?;
        let mean = returns.iter().sum::<f64>() / returns.len() as f64;
        eprintln!("seed {seed}: mean return {mean:.2} over {episodes} episodes");
        rows.extend(returns.into_iter().enumerate().map(|(episode, r)| EvalRow {
            seed,
            episode,
            episode_return: r,
        }));
    }
    staging.write_csv("evaluation.csv", &rows)?;
    let dir = staging.commit()?;
    println!("{}", dir.display());
    Ok(())
}
