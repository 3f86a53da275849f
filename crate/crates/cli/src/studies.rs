//! Cross-scoring and learning-curve aggregation.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use etdmpc::analysis::crossscore::{replay_states, PlannerKind};
use etdmpc::analysis::{
    aggregate_curves, auc, benchmark_auc, cross_score_study, normalize_curve, read_metrics_curve, svg,
    task_mean_and_se, CrossScoreConfig, CurveStats, TaskCurve,
};
use etdmpc::replay::ReplayBuffer;
use etdmpc::trainer::discount_for_episode_length;
use etdmpc::worldmodel::{checkpoint, LatentModel};
use serde::Serialize;

use crate::output::Staging;

pub fn crossscore(
    checkpoint_path: &Path,
    snapshot: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    states: Option<usize>,
    out: &Path,
) -> Result<()> {
    let ck = checkpoint::load(checkpoint_path).with_context(|| format!("loading {}", checkpoint_path.display()))?;
    let (header, buffer) =
        ReplayBuffer::load_snapshot(snapshot).with_context(|| format!("loading {}", snapshot.display()))?;
    let spec = header.env;
    if let Some(env) = ck.env.as_deref() {
        if env != spec.name() {
            bail!("checkpoint was trained on {env} but the snapshot holds {}", spec.name());
        }
    }
    if ck.model.config.obs_dim != spec.obs_dim() || ck.model.config.action_dim != spec.action_dim() {
        bail!(
            "checkpoint dimensions do not match the snapshot environment {}",
            spec.name()
        );
    }
    let mut cfg: CrossScoreConfig = match config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => {
            let mut c = CrossScoreConfig::default();
            c.planner.gamma = discount_for_episode_length(spec.episode_length, 0.95, 0.995);
            c
        }
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = states {
        cfg.num_states = n;
    }

    let model = &ck.model;
    let encode = |obs: &[f64]| model.encode(obs).map(|z| z.into_inner());
    let study_states = replay_states(&buffer, cfg.num_states, cfg.seed, |t| {
        encode(&t.obs).expect("snapshot observations match the model")
    });
    // The exact rollout bootstraps with the model's mean value of the encoded final observation.
    let oracle_value = |s: &[f64]| -> f64 {
        let z = encode(&spec.observe(s)).expect("encodable observation");
        let zs = etdmpc::trainer::stack_obs(&[&z]);
        let n = model.num_values();
        (0..n).map(|j| model.values(j, &zs, false)[0]).sum::<f64>() / n as f64
    };
    let study = cross_score_study(&spec, model, &study_states, &oracle_value, &cfg)?;
    eprintln!(
        "{} states scored, {} skipped without simulator state",
        study.records.len() / 2,
        study.skipped
    );

    let staging = Staging::new(out)?;
    staging.write_json("resolved_config.json", &cfg)?;
    staging.write_csv("crossscore_records.csv", &study.records)?;
    staging.write_csv("crossscore_summary.csv", &study.summary)?;
    let groups: Vec<(String, Vec<(String, f64, f64)>)> = [PlannerKind::SingleHead, PlannerKind::Ensemble]
        .into_iter()
        .map(|p| {
            let bars = study
                .summary
                .iter()
                .filter(|r| r.planner == p)
                .map(|r| (r.estimator.clone(), r.mean_delta, r.se_delta))
                .collect();
            (format!("{} planner", p.name()), bars)
        })
        .collect();
    staging.write_text(
        "crossscore.svg",
        &svg::bar_plot("cross-scored advantage", "ΔR", &groups),
    )?;
    for r in &study.summary {
        println!(
            "{:<12} {:<12} {:>10.2} ± {:.2}",
            r.planner.name(),
            r.estimator,
            r.mean_delta,
            r.se_delta
        );
    }
    staging.commit()?;
    Ok(())
}

fn split_pair(s: &str, flag: &str) -> Result<(String, String)> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() && !v.is_empty() => Ok((k.to_string(), v.to_string())),
        _ => bail!("{flag} expects TASK=VALUE, got {s:?}"),
    }
}

#[derive(Serialize)]
struct AucRow {
    task_id: String,
    auc: f64,
}

pub fn aggregate(inputs: &[String], normalize: &[String], reference_auc: Option<f64>, out: &Path) -> Result<()> {
    let mut tasks: BTreeMap<String, Vec<Vec<(f64, f64)>>> = BTreeMap::new();
    for spec in inputs {
        let (task, path) = split_pair(spec, "--input")?;
        let path = PathBuf::from(path);
        let curve = read_metrics_curve(&path).with_context(|| format!("reading {}", path.display()))?;
        tasks.entry(task).or_default().push(curve);
    }
    let mut constants = BTreeMap::new();
    for spec in normalize {
        let (task, c) = split_pair(spec, "--normalize")?;
        let c: f64 = c.parse().with_context(|| format!("normalization constant {c:?}"))?;
        if !tasks.contains_key(&task) {
            bail!("--normalize names unknown task {task:?}");
        }
        constants.insert(task, c);
    }
    if !constants.is_empty() && constants.len() != tasks.len() {
        bail!("give a normalization constant for every task or for none");
    }

    let mut per_task: Vec<CurveStats> = Vec::new();
    for (task, seeds) in tasks {
        let stats = task_mean_and_se(&TaskCurve {
            task_id: task.clone(),
            seeds,
        })?;
        per_task.push(match constants.get(&task) {
            Some(&c) => normalize_curve(&stats, c)?,
            None => stats,
        });
    }
    let agg = aggregate_curves(&per_task, "aggregate")?;
    let mut aucs = per_task
        .iter()
        .map(|s| {
            Ok(AucRow {
                task_id: s.task_id.clone(),
                auc: auc(&s.steps, &s.mean)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let agg_auc = auc(&agg.steps, &agg.mean)?;
    aucs.push(AucRow {
        task_id: "aggregate".into(),
        auc: agg_auc,
    });
    if let Some(r) = reference_auc {
        aucs.push(AucRow {
            task_id: "aggregate_normalized".into(),
            auc: benchmark_auc(&[agg_auc], Some(r))?,
        });
    }

    let staging = Staging::new(out)?;
    let task_rows: Vec<_> = per_task.iter().flat_map(|s| s.rows()).collect();
    staging.write_csv("task_curves.csv", &task_rows)?;
    staging.write_csv("aggregate_curve.csv", &agg.rows())?;
    staging.write_csv("auc.csv", &aucs)?;
    let label = if constants.is_empty() {
        "return"
    } else {
        "normalized return"
    };
    let mut curves: Vec<&CurveStats> = per_task.iter().collect();
    if per_task.len() > 1 {
        curves.push(&agg);
    }
    staging.write_text("curves.svg", &svg::line_plot("learning curves", label, &curves))?;
    println!("aggregate final {:.4}, AUC {agg_auc:.4}", agg.final_mean());
    staging.commit()?;
    Ok(())
}
