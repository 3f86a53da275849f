//! Replay buffer with per-step or per-episode insertion, segment sampling and
//! in-place reanalyze of stored policy targets.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::planner::{expert_policy, plan, ExpertPolicy, PlannerConfig};
use crate::worldmodel::{Action, LatentModel};

pub const SNAPSHOT_FORMAT: &str = "etdmpc-replay/v1";

/// Tries before rejection sampling falls back to enumerating valid starts.
const REJECTION_TRIES: usize = 64;

/// One environment step and the expert distribution stored for it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transition {
    /// Observation the action was chosen from.
    pub obs: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    /// This step ended the episode.
    pub done: bool,
    pub policy_target: ExpertPolicy,
    pub episode_id: u64,
    pub step_index: usize,
    /// 0 when written by the actor; incremented by every reanalyze refresh.
    pub target_version: u32,
    /// Simulator state behind `obs`, when the producer exposes it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_state: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsertMode {
    /// Visible to the sampler immediately.
    #[default]
    PerStep,
    /// Held back until its episode finishes.
    PerEpisode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    mode: InsertMode,
    items: VecDeque<Transition>,
    staging: Vec<Transition>,
    inserted: u64,
    evicted: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReanalyzeReport {
    pub refreshed: usize,
    pub failed: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, mode: InsertMode) -> Self {
        assert!(capacity >= 1, "replay capacity must be positive");
        Self {
            capacity,
            mode,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            staging: Vec::new(),
            inserted: 0,
            evicted: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn mode(&self) -> InsertMode {
        self.mode
    }

    /// Sampleable transitions.
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Transitions held back by per-episode insertion.
    pub fn pending(&self) -> usize {
        self.staging.len()
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn evicted(&self) -> u64 {
        self.evicted
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn insert(&mut self, t: Transition) {
        match self.mode {
            InsertMode::PerStep => self.push(t),
            InsertMode::PerEpisode => {
                let done = t.done;
                self.staging.push(t);
                if done {
                    for t in std::mem::take(&mut self.staging) {
                        self.push(t);
                    }
                }
            }
        }
    }

    fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
            self.evicted += 1;
        }
        self.items.push_back(t);
        self.inserted += 1;
    }

    /// `start..start+span` stays inside one episode with contiguous steps.
    pub fn is_valid_start(&self, start: usize, span: usize) -> bool {
        let end = start + span - 1;
        if span == 0 || end >= self.items.len() {
            return false;
        }
        let (a, b) = (&self.items[start], &self.items[end]);
        a.episode_id == b.episode_id && b.step_index == a.step_index + span - 1
    }

    /// Every valid start index for segments of length `span`.
    pub fn valid_starts(&self, span: usize) -> Vec<usize> {
        if span == 0 || span > self.items.len() {
            return Vec::new();
        }
        (0..=self.items.len() - span)
            .filter(|&s| self.is_valid_start(s, span))
            .collect()
    }

    /// `batch` start indices drawn uniformly (with replacement) over valid starts.
    pub fn sample_starts<R: Rng + ?Sized>(&self, batch: usize, span: usize, rng: &mut R) -> Result<Vec<usize>> {
        let insufficient = || {
            Error::InsufficientData(format!(
                "no segment of {span} consecutive steps within one episode among {} stored transitions",
                self.items.len()
            ))
        };
        if span == 0 || span > self.items.len() {
            return Err(insufficient());
        }
        let last = self.items.len() - span;
        let mut out = Vec::with_capacity(batch);
        let mut fallback: Option<Vec<usize>> = None;
        for _ in 0..batch {
            let mut pick = None;
            if fallback.is_none() {
                for _ in 0..REJECTION_TRIES {
                    let s = rng.random_range(0..=last);
                    if self.is_valid_start(s, span) {
                        pick = Some(s);
                        break;
                    }
                }
            }
            let s = match pick {
                Some(s) => s,
                None => {
                    let starts = fallback.get_or_insert_with(|| self.valid_starts(span));
                    if starts.is_empty() {
                        return Err(insufficient());
                    }
                    starts[rng.random_range(0..starts.len())]
                }
            };
            out.push(s);
        }
        Ok(out)
    }

    /// `batch` segments of `span` consecutive transitions from single episodes.
    pub fn sample_sequences<R: Rng + ?Sized>(
        &self,
        batch: usize,
        span: usize,
        rng: &mut R,
    ) -> Result<Vec<Vec<&Transition>>> {
        Ok(self
            .sample_starts(batch, span, rng)?
            .into_iter()
            .map(|s| self.items.range(s..s + span).collect())
            .collect())
    }

    /// Replans from `batch` distinct uniformly chosen stored states and overwrites their policy targets.
    pub fn reanalyze_pass<M, E, R>(
        &mut self,
        model: &M,
        encode: E,
        config: &PlannerConfig,
        batch: usize,
        rng: &mut R,
    ) -> ReanalyzeReport
    where
        M: LatentModel + ?Sized,
        E: Fn(&Transition) -> Vec<f64>,
        R: Rng + ?Sized,
    {
        let mut report = ReanalyzeReport::default();
        if self.items.is_empty() {
            return report;
        }
        let picks = index::sample(rng, self.items.len(), batch.min(self.items.len())).into_vec();
        for i in picks {
            let z = encode(&self.items[i]);
            match plan(&z, model, config, None, rng) {
                Ok(p) => {
                    let t = &mut self.items[i];
                    t.policy_target = expert_policy(&p);
                    t.target_version += 1;
                    report.refreshed += 1;
                }
                Err(_) => report.failed += 1,
            }
        }
        report
    }

    /// JSON-lines snapshot: a header line, then one transition per line.
    pub fn save_snapshot(&self, path: &Path, env: &EnvSpec, checkpoint: Option<&str>) -> Result<()> {
        let header = SnapshotHeader {
            format: SNAPSHOT_FORMAT.into(),
            env: env.clone(),
            checkpoint: checkpoint.map(str::to_owned),
            capacity: self.capacity,
            insert_mode: self.mode,
            len: self.items.len(),
        };
        let mut buf = Vec::new();
        serde_json::to_writer(&mut buf, &header)?;
        buf.push(b'\n');
        for t in &self.items {
            serde_json::to_writer(&mut buf, t)?;
            buf.push(b'\n');
        }
        crate::io::write_atomic(path, &buf)
    }

    pub fn load_snapshot(path: &Path) -> Result<(SnapshotHeader, Self)> {
        let mut lines = BufReader::new(std::fs::File::open(path)?).lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::Format(format!("{} is empty", path.display())))??;
        let header: SnapshotHeader = serde_json::from_str(&first)?;
        if header.format != SNAPSHOT_FORMAT {
            return Err(Error::Format(format!(
                "unsupported replay snapshot format {:?}",
                header.format
            )));
        }
        let mut buf = Self::new(header.capacity, header.insert_mode);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            buf.push(serde_json::from_str(&line)?);
        }
        if buf.len() != header.len {
            return Err(Error::Format(format!(
                "snapshot header announces {} transitions, found {}",
                header.len,
                buf.len()
            )));
        }
        buf.inserted = buf.items.len() as u64;
        Ok((header, buf))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotHeader {
    pub format: String,
    pub env: EnvSpec,
    /// Path of the model checkpoint the buffer was collected with.
    pub checkpoint: Option<String>,
    pub capacity: usize,
    pub insert_mode: InsertMode,
    pub len: usize,
}

/// Writes `lines` of JSON values, one per line; used for trace dumps.
pub fn write_json_lines<T: Serialize>(path: &Path, lines: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for l in lines {
        serde_json::to_writer(&mut buf, l)?;
        buf.write_all(b"\n")?;
    }
    crate::io::write_atomic(path, &buf)
}

#[cfg(test)]
pub(crate) fn scripted(episode: u64, step: usize, done: bool) -> Transition {
    Transition {
        obs: vec![episode as f64, step as f64],
        action: Action::new(vec![0.0]),
        reward: step as f64,
        done,
        policy_target: ExpertPolicy {
            mean: vec![0.0],
            std: vec![1.0],
        },
        episode_id: episode,
        step_index: step,
        target_version: 0,
        sim_state: None,
    }
}
