//! Gradient checks, two-hot codec, replay semantics and aggregation fixtures.

use std::time::Instant;

use etdmpc::analysis::{
    aggregate_curves, auc, benchmark_auc, ci_band, normalize_curve, task_mean_and_se, CurveStats, TaskCurve,
};
use etdmpc::envs::{pendulum_spec, PerturbationScales, PerturbedModelEnsemble};
use etdmpc::planner::{ExpertPolicy, PlannerConfig};
use etdmpc::replay::{InsertMode, ReplayBuffer, Transition};
use etdmpc::tape::Var;
use etdmpc::trainer::{build_losses, Batch, LossInputs, LossWeights, RawTerms};
use etdmpc::worldmodel::{
    evaluate_loss, gradient, random_coordinates, Action, ModelConfig, ModelTape, Networks, TwoHotCodec,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

const C7_COORDS: usize = 64;
const C7_EPS: f64 = 1e-6;
const C7_REL_TOL: f64 = 1e-4;
/// Relative errors are taken against `max(|analytic|, |numeric|, C7_FLOOR)`.
const C7_FLOOR: f64 = 1e-6;
const C7_MAX_SECS: f64 = 30.0;
const C8_VALUES: usize = 10_000;
const C8_TOL: f64 = 1e-6;
const C10_CI: (f64, f64) = (0.804, 1.196);

const TERMS: [&str; 5] = ["consistency", "reward", "value", "policy_kl", "policy_entropy"];

struct GradFixture {
    config: ModelConfig,
    nets: Networks,
    batch: Batch,
    value_targets: Vec<Vec<f64>>,
    head_weights: Vec<Vec<f64>>,
    weights: LossWeights,
}

fn grad_fixture() -> GradFixture {
    let config = ModelConfig {
        obs_dim: 3,
        action_dim: 2,
        latent_dim: 8,
        hidden_dim: 12,
        encoder_dim: 12,
        simnorm_dim: 4,
        dynamics_heads: 2,
        value_heads: 2,
        codec: TwoHotCodec::new(21, -5.0, 5.0),
        ..ModelConfig::default()
    };
    let nets = Networks::init(&config, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (b, h) = (5, 3);
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let mat = |rows: usize, cols: usize, u: &mut dyn FnMut(f64, f64) -> f64, lo: f64, hi: f64| {
        Array2::from_shape_simple_fn((rows, cols), || u(lo, hi))
    };
    let batch = Batch {
        obs: (0..=h).map(|_| mat(b, 3, &mut u, -1.0, 1.0)).collect(),
        actions: (0..h).map(|_| mat(b, 2, &mut u, -1.0, 1.0)).collect(),
        rewards: (0..h).map(|_| (0..b).map(|_| u(-4.0, 4.0)).collect()).collect(),
        target_mean: (0..h).map(|_| mat(b, 2, &mut u, -0.9, 0.9)).collect(),
        target_std: (0..h).map(|_| mat(b, 2, &mut u, 0.1, 1.0)).collect(),
    };
    let value_targets = (0..h).map(|_| (0..b).map(|_| u(-4.0, 4.0)).collect()).collect();
    let head_weights = (0..2).map(|_| (0..b).map(|_| u(0.0, 3.0).floor()).collect()).collect();
    let weights = LossWeights {
        rho: 0.5,
        consistency: 1.0,
        reward: 1.0,
        value: 1.0,
        policy: 1.0,
        entropy: 0.5,
        consistency_stop_grad: false,
    };
    GradFixture {
        config,
        nets,
        batch,
        value_targets,
        head_weights,
        weights,
    }
}

fn term_builder<'f>(
    f: &'f GradFixture,
    term: &'static str,
) -> impl FnOnce(&mut ModelTape<'_>) -> Vec<(&'static str, Var)> + 'f {
    move |mt| {
        let inputs = LossInputs {
            batch: &f.batch,
            value_targets: &f.value_targets,
            head_row_weights: Some(&f.head_weights),
            codec: &f.config.codec,
        };
        let mut raw = RawTerms::default();
        build_losses(mt, &inputs, &f.weights, &mut raw)
            .into_iter()
            .filter(|(n, _)| *n == term)
            .collect()
    }
}

fn term_value(f: &GradFixture, nets: &Networks, term: &'static str) -> Result<f64, String> {
    evaluate_loss(nets, &f.config, term_builder(f, term))
        .map(|(loss, _)| loss)
        .map_err(|e| e.to_string())
}

fn perturbed(nets: &Networks, id: usize, k: usize, delta: f64) -> Networks {
    let mut n = nets.clone();
    let a = n.arrays_mut().nth(id).expect("array id");
    *a.iter_mut().nth(k).expect("flat index") += delta;
    n
}

pub fn c07_gradient_checks() -> Outcome {
    let t0 = Instant::now();
    let f = grad_fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for term in TERMS {
        let g = gradient(&f.nets, &f.config, term_builder(&f, term)).map_err(|e| e.to_string())?;
        if g.terms.len() != 1 {
            return Err(format!("{term}: loss term missing"));
        }
        let grads = g.grads;
        // Policy terms see detached encoder latents: encoder gradients must vanish and
        // finite differences run over the remaining parameters.
        let detached = if term.starts_with("policy") {
            f.nets.encoder_arrays()
        } else {
            0
        };
        if grads.arrays().take(detached).any(|a| a.iter().any(|&g| g != 0.0)) {
            return Err(format!("{term}: nonzero gradient on detached encoder parameters"));
        }
        let coords: Vec<(usize, usize)> = random_coordinates(&f.nets, 16 * C7_COORDS, &mut rng)
            .into_iter()
            .filter(|&(id, _)| id >= detached)
            .take(C7_COORDS)
            .collect();
        if coords.len() != C7_COORDS {
            return Err(format!("{term}: only {} coordinates drawn", coords.len()));
        }
        for (id, k) in coords {
            let analytic = *grads.arrays().nth(id).expect("id").iter().nth(k).expect("k");
            let lp = term_value(&f, &perturbed(&f.nets, id, k, C7_EPS), term)?;
            let lm = term_value(&f, &perturbed(&f.nets, id, k, -C7_EPS), term)?;
            let numeric = (lp - lm) / (2.0 * C7_EPS);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(C7_FLOOR);
            if rel >= C7_REL_TOL {
                return Err(format!(
                    "{term}: array {id} index {k}: analytic {analytic:e} numeric {numeric:e} rel {rel:e}"
                ));
            }
            worst = worst.max(rel);
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    if secs >= C7_MAX_SECS {
        return Err(format!("took {secs:.1}s, limit {C7_MAX_SECS}s"));
    }
    Ok(format!(
        "{} terms x {C7_COORDS} coordinates, worst relative error {worst:.1e}",
        TERMS.len()
    ))
}

pub fn c08_two_hot() -> Outcome {
    let codec = TwoHotCodec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..C8_VALUES {
        let v: f64 = rng.random_range(-10.0..=10.0);
        let err = (codec.decode(&codec.encode(v)) - v).abs();
        if err >= C8_TOL {
            return Err(format!("v = {v}: roundtrip error {err:e}"));
        }
        worst = worst.max(err);
    }
    for (v, expect) in [
        (-10.0, -10.0),
        (10.0, 10.0),
        (-25.0, -10.0),
        (40.0, 10.0),
        (codec.bin_value(37), codec.bin_value(37)),
    ] {
        let d = codec.decode(&codec.encode(v));
        if d != expect {
            return Err(format!("boundary {v}: decoded {d}, expected {expect}"));
        }
    }
    Ok(format!("{C8_VALUES} values, worst error {worst:.1e}; boundaries exact"))
}

fn step(ep: u64, k: usize, done: bool) -> Transition {
    Transition {
        obs: vec![ep as f64, k as f64],
        action: Action::new(vec![0.1 * k as f64]),
        reward: k as f64,
        done,
        policy_target: ExpertPolicy {
            mean: vec![0.0],
            std: vec![2.0],
        },
        episode_id: ep,
        step_index: k,
        target_version: 0,
        sim_state: Some(vec![0.3 * k as f64, 0.0]),
    }
}

pub fn c09_replay() -> Outcome {
    let episode = 5;
    // Per-step insertion: each transition is a valid start at the very next sampling call.
    let mut buf = ReplayBuffer::new(100, InsertMode::PerStep);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for k in 0..episode {
        buf.insert(step(0, k, k + 1 == episode));
        if buf.len() != k + 1 || !buf.is_valid_start(k, 1) {
            return Err(format!("per-step: transition {k} not sampleable after insertion"));
        }
        let only_new = buf.sample_starts(1, 1, &mut rng).map_err(|e| e.to_string())?;
        if k == 0 && only_new != vec![0] {
            return Err("per-step: first transition not sampled".into());
        }
    }
    // Per-episode insertion: nothing is sampleable until the episode closes.
    let mut buf = ReplayBuffer::new(100, InsertMode::PerEpisode);
    for k in 0..episode {
        buf.insert(step(0, k, k + 1 == episode));
        let expect = if k + 1 == episode { episode } else { 0 };
        if buf.len() != expect {
            return Err(format!(
                "per-episode: {} sampleable after step {k}, expected {expect}",
                buf.len()
            ));
        }
    }
    if buf.pending() != 0 {
        return Err("per-episode: staging not flushed".into());
    }
    // FIFO eviction.
    let mut buf = ReplayBuffer::new(4, InsertMode::PerStep);
    for k in 0..7 {
        buf.insert(step(0, k, false));
    }
    let kept: Vec<usize> = buf.iter().map(|t| t.step_index).collect();
    if kept != vec![3, 4, 5, 6] || buf.evicted() != 3 || buf.inserted() != 7 {
        return Err(format!("FIFO: kept {kept:?}, evicted {}", buf.evicted()));
    }
    // Reanalyze rewrites only policy targets and their version.
    let spec = pendulum_spec();
    let model = PerturbedModelEnsemble::new(spec, PerturbationScales::uniform(0.1), 2, 2, 3);
    let mut buf = ReplayBuffer::new(50, InsertMode::PerStep);
    for k in 0..10 {
        buf.insert(step(1, k, k == 9));
    }
    let before: Vec<Transition> = buf.iter().cloned().collect();
    let cfg = PlannerConfig {
        num_policy_trajectories: 0,
        ..PlannerConfig::reanalyze(0.0)
    };
    let report = buf.reanalyze_pass(&model, |t| t.sim_state.clone().expect("state"), &cfg, 4, &mut rng);
    if report.refreshed != 4 || report.failed != 0 {
        return Err(format!(
            "reanalyze refreshed {} failed {}",
            report.refreshed, report.failed
        ));
    }
    let mut changed = 0;
    for (a, b) in before.iter().zip(buf.iter()) {
        let mut masked = b.clone();
        masked.policy_target = a.policy_target.clone();
        masked.target_version = a.target_version;
        if &masked != a {
            return Err(format!(
                "reanalyze touched fields other than the policy target at step {}",
                a.step_index
            ));
        }
        if b.target_version == a.target_version + 1 {
            changed += 1;
        }
    }
    if changed != 4 {
        return Err(format!("{changed} targets versioned, expected 4"));
    }
    Ok("per-step immediate, per-episode delayed to episode end, FIFO exact, reanalyze targets only".into())
}

fn flat(task: &str, mean: f64, se: f64) -> CurveStats {
    CurveStats {
        task_id: task.into(),
        steps: vec![0.0, 1.0],
        mean: vec![mean, mean],
        se: vec![Some(se), Some(se)],
        count: 2,
    }
}

pub fn c10_aggregation() -> Outcome {
    let pair = TaskCurve {
        task_id: "t".into(),
        seeds: vec![vec![(0.0, 1.0), (1.0, 1.0)], vec![(0.0, 3.0), (1.0, 3.0)]],
    };
    let s = task_mean_and_se(&pair).map_err(|e| e.to_string())?;
    if (s.mean[0], s.se[0]) != (2.0, Some(1.0)) {
        return Err(format!("task mean/se {:?} {:?}, expected 2 and 1", s.mean[0], s.se[0]));
    }
    let (lo, hi) = ci_band(1.0, 0.1);
    if (lo - C10_CI.0).abs() > 1e-12 || (hi - C10_CI.1).abs() > 1e-12 {
        return Err(format!("CI [{lo}, {hi}], expected {C10_CI:?}"));
    }
    let n = normalize_curve(&flat("t", 800.0, 40.0), 400.0).map_err(|e| e.to_string())?;
    if (n.mean[0], n.se[0]) != (2.0, Some(0.1)) {
        return Err(format!("normalized {:?} {:?}", n.mean[0], n.se[0]));
    }
    let agg = aggregate_curves(&[flat("a", 1.0, 3.0), flat("b", 2.0, 4.0)], "all").map_err(|e| e.to_string())?;
    if agg.se[0] != Some(2.5) {
        return Err(format!("aggregate se {:?}, expected 2.5", agg.se[0]));
    }
    let a = auc(&[0.0, 1.0], &[0.0, 1.0]).map_err(|e| e.to_string())?;
    let avg = benchmark_auc(&[1.0, 3.0], None).map_err(|e| e.to_string())?;
    let norm = benchmark_auc(&[1.0, 3.0], Some(2.0)).map_err(|e| e.to_string())?;
    if (a, avg, norm) != (0.5, 2.0, 1.0) {
        return Err(format!("auc {a}, benchmark average {avg}, normalized {norm}"));
    }
    Ok("task se, CI 1.96, normalization, aggregate se, trapezoid and benchmark AUC exact".into())
}
