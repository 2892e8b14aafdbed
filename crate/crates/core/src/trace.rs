//! Rollout data model and the newline-delimited JSON trace format.
//!
//! A trace file holds one JSON object per rollout. An optional first line
//! carrying `schema_version` (and no `id`) is a provenance header.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Success,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    Id,
    Ood,
}

/// `B × H × D` sampled action chunks, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionBatch {
    batch: usize,
    horizon: usize,
    dim: usize,
    data: Vec<f64>,
}

impl ActionBatch {
    pub fn new(batch: usize, horizon: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if batch < 2 {
            return Err(Error::DimensionMismatch(format!(
                "action batch needs B >= 2, got {batch}"
            )));
        }
        if horizon == 0 || dim == 0 {
            return Err(Error::DimensionMismatch(format!(
                "action batch needs H, D >= 1, got H={horizon} D={dim}"
            )));
        }
        if data.len() != batch * horizon * dim {
            return Err(Error::DimensionMismatch(format!(
                "action data has {} values, expected {batch}x{horizon}x{dim}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("action value {v}")));
        }
        Ok(Self {
            batch,
            horizon,
            dim,
            data,
        })
    }

    /// Builds a batch from nested `[b][h][d]` arrays.
    pub fn from_nested(nested: &[Vec<Vec<f64>>]) -> Result<Self> {
        let batch = nested.len();
        let horizon = nested.first().map_or(0, Vec::len);
        let dim = nested
            .first()
            .and_then(|c| c.first())
            .map_or(0, Vec::len);
        let mut data = Vec::with_capacity(batch * horizon * dim);
        for (j, chunk) in nested.iter().enumerate() {
            if chunk.len() != horizon {
                return Err(Error::DimensionMismatch(format!(
                    "chunk {j} has H={}, expected {horizon}",
                    chunk.len()
                )));
            }
            for (i, a) in chunk.iter().enumerate() {
                if a.len() != dim {
                    return Err(Error::DimensionMismatch(format!(
                        "chunk {j} step {i} has D={}, expected {dim}",
                        a.len()
                    )));
                }
                data.extend_from_slice(a);
            }
        }
        Self::new(batch, horizon, dim, data)
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.batch)
            .map(|j| {
                (0..self.horizon)
                    .map(|i| self.action(j, i).to_vec())
                    .collect()
            })
            .collect()
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The `D`-vector predicted by chunk `j` for horizon step `i`.
    pub fn action(&self, j: usize, i: usize) -> &[f64] {
        let start = (j * self.horizon + i) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// All `B` actions for horizon step `i`, as a `B × D` row-major buffer.
    pub fn horizon_slice(&self, i: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.batch * self.dim);
        for j in 0..self.batch {
            out.extend_from_slice(self.action(j, i));
        }
        out
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }
}

/// One replanning instant: the encoded observation and the sampled chunks.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyStep {
    pub t: u64,
    pub embedding: Vec<f64>,
    pub actions: ActionBatch,
}

impl PolicyStep {
    pub fn new(t: u64, embedding: Vec<f64>, actions: ActionBatch) -> Result<Self> {
        if embedding.is_empty() {
            return Err(Error::DimensionMismatch("empty embedding".into()));
        }
        if let Some(v) = embedding.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding value {v} at t={t}")));
        }
        Ok(Self {
            t,
            embedding,
            actions,
        })
    }

    /// `(E, B, H, D)`
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (
            self.embedding.len(),
            self.actions.batch(),
            self.actions.horizon(),
            self.actions.dim(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub id: String,
    pub outcome: Outcome,
    pub distribution: Distribution,
    /// Execution stride between policy timesteps.
    pub stride: u64,
    /// Maximum episode length `T`.
    pub t_max: u64,
    pub steps: Vec<PolicyStep>,
}

impl Rollout {
    /// Checks ordering, stride and per-step dimension invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Error::InvalidRollout {
            id: self.id.clone(),
            msg,
        };
        if self.steps.is_empty() {
            return Err(bad("no steps".into()));
        }
        if self.stride == 0 {
            return Err(bad("stride h must be positive".into()));
        }
        let dims = self.steps[0].dims();
        for (n, step) in self.steps.iter().enumerate() {
            if step.dims() != dims {
                return Err(Error::DimensionMismatch(format!(
                    "rollout {:?} step {n}: (E,B,H,D)={:?}, first step had {:?}",
                    self.id,
                    step.dims(),
                    dims
                )));
            }
            if step.t % self.stride != 0 {
                return Err(bad(format!(
                    "step {n} t={} is not a multiple of h={}",
                    step.t, self.stride
                )));
            }
            if n > 0 && step.t != self.steps[n - 1].t + self.stride {
                return Err(bad(format!(
                    "step {n} t={} does not follow t={} with stride {}",
                    step.t,
                    self.steps[n - 1].t,
                    self.stride
                )));
            }
        }
        if self.episode_length() > self.t_max {
            return Err(bad(format!(
                "episode length {} exceeds T_max {}",
                self.episode_length(),
                self.t_max
            )));
        }
        Ok(())
    }

    /// Last policy timestep `T'`.
    pub fn episode_length(&self) -> u64 {
        self.steps.last().map_or(0, |s| s.t)
    }

    pub fn embed_dim(&self) -> usize {
        self.steps[0].embedding.len()
    }

    pub fn chunk_len(&self) -> usize {
        self.steps[0].actions.horizon()
    }

    pub fn action_dim(&self) -> usize {
        self.steps[0].actions.dim()
    }

    pub fn is_success_id(&self) -> bool {
        self.outcome == Outcome::Success && self.distribution == Distribution::Id
    }
}

/// Provenance header written as the first line of a trace file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema_version: u32,
    pub tool_version: String,
    pub provenance: String,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetMeta {
    pub embed_dim: usize,
    pub stride: u64,
    pub chunk_len: usize,
    pub action_dim: usize,
    /// Maximum episode length across the set.
    pub t_max: u64,
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutSet {
    pub rollouts: Vec<Rollout>,
    pub meta: SetMeta,
    pub header: Option<TraceHeader>,
}

impl RolloutSet {
    /// Validates every rollout and the set-level invariants, deriving metadata.
    pub fn new(rollouts: Vec<Rollout>, header: Option<TraceHeader>) -> Result<Self> {
        let first = rollouts.first().ok_or(Error::NoRollouts)?;
        first.validate()?;
        let meta = SetMeta {
            embed_dim: first.embed_dim(),
            stride: first.stride,
            chunk_len: first.chunk_len(),
            action_dim: first.action_dim(),
            t_max: rollouts.iter().map(|r| r.t_max).max().unwrap_or(0),
            provenance: header
                .as_ref()
                .map(|h| h.provenance.clone())
                .unwrap_or_default(),
        };
        let mut ids = HashSet::new();
        for r in &rollouts {
            r.validate()?;
            let got = (r.embed_dim(), r.stride, r.chunk_len(), r.action_dim());
            let want = (meta.embed_dim, meta.stride, meta.chunk_len, meta.action_dim);
            if got != want {
                return Err(Error::DimensionMismatch(format!(
                    "rollout {:?} has (E,h,H,D)={got:?}, set has {want:?}",
                    r.id
                )));
            }
            if !ids.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
        Ok(Self {
            rollouts,
            meta,
            header,
        })
    }

    /// A set with no rollouts; only producible programmatically.
    pub fn empty(meta: SetMeta, header: Option<TraceHeader>) -> Self {
        Self {
            rollouts: Vec::new(),
            meta,
            header,
        }
    }

    pub fn len(&self) -> usize {
        self.rollouts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rollouts.is_empty()
    }

    fn with_rollouts(&self, rollouts: Vec<Rollout>) -> Self {
        let mut meta = self.meta.clone();
        if let Some(t) = rollouts.iter().map(|r| r.t_max).max() {
            meta.t_max = t;
        }
        Self {
            rollouts,
            meta,
            header: self.header.clone(),
        }
    }

    /// Rollouts with the given labels, as a new set.
    pub fn filter(&self, outcome: Outcome, distribution: Distribution) -> Self {
        self.with_rollouts(
            self.rollouts
                .iter()
                .filter(|r| r.outcome == outcome && r.distribution == distribution)
                .cloned()
                .collect(),
        )
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.rollouts.iter().map(|r| r.id.as_str())
    }
}

#[derive(Serialize, Deserialize)]
struct StepRecord {
    t: u64,
    embedding: Vec<f64>,
    actions: Vec<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct RolloutRecord {
    id: String,
    outcome: Outcome,
    distribution: Distribution,
    h: u64,
    #[serde(rename = "T_max")]
    t_max: u64,
    steps: Vec<StepRecord>,
}

impl RolloutRecord {
    fn from_rollout(r: &Rollout) -> Self {
        Self {
            id: r.id.clone(),
            outcome: r.outcome,
            distribution: r.distribution,
            h: r.stride,
            t_max: r.t_max,
            steps: r
                .steps
                .iter()
                .map(|s| StepRecord {
                    t: s.t,
                    embedding: s.embedding.clone(),
                    actions: s.actions.to_nested(),
                })
                .collect(),
        }
    }

    fn into_rollout(self) -> Result<Rollout> {
        let steps = self
            .steps
            .into_iter()
            .map(|s| PolicyStep::new(s.t, s.embedding, ActionBatch::from_nested(&s.actions)?))
            .collect::<Result<Vec<_>>>()?;
        let r = Rollout {
            id: self.id,
            outcome: self.outcome,
            distribution: self.distribution,
            stride: self.h,
            t_max: self.t_max,
            steps,
        };
        r.validate()?;
        Ok(r)
    }
}

/// Parses a trace from text. Line numbers in errors are 1-based.
pub fn parse_rollouts(text: &str) -> Result<RolloutSet> {
    let mut header = None;
    let mut rollouts = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| Error::Malformed {
                line: line_no,
                msg: e.to_string(),
            })?;
        let is_header = value.get("schema_version").is_some() && value.get("id").is_none();
        if is_header {
            if header.is_some() || !rollouts.is_empty() {
                return Err(Error::Malformed {
                    line: line_no,
                    msg: "header must be the first record".into(),
                });
            }
            let h: TraceHeader = serde_json::from_value(value).map_err(|e| Error::Malformed {
                line: line_no,
                msg: e.to_string(),
            })?;
            if h.schema_version != TRACE_SCHEMA_VERSION {
                return Err(Error::SchemaVersion {
                    what: "trace",
                    expected: TRACE_SCHEMA_VERSION,
                    found: h.schema_version,
                });
            }
            header = Some(h);
            continue;
        }
        let rec: RolloutRecord = serde_json::from_value(value).map_err(|e| Error::Malformed {
            line: line_no,
            msg: e.to_string(),
        })?;
        let rollout = rec.into_rollout().map_err(|e| match e {
            Error::DimensionMismatch(msg) => Error::DimensionMismatch(format!("line {line_no}: {msg}")),
            Error::NonFinite(msg) => Error::NonFinite(format!("line {line_no}: {msg}")),
            other => Error::Malformed {
                line: line_no,
                msg: other.to_string(),
            },
        })?;
        rollouts.push(rollout);
    }
    RolloutSet::new(rollouts, header)
}

pub fn load_rollouts(path: impl AsRef<Path>) -> Result<RolloutSet> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    for line in BufReader::new(file).lines() {
        text.push_str(&line.map_err(|e| Error::io(path, e))?);
        text.push('\n');
    }
    parse_rollouts(&text)
}

/// Serializes a set to trace text; the exact inverse of [`parse_rollouts`].
pub fn to_trace_string(set: &RolloutSet) -> Result<String> {
    let mut out = Vec::new();
    write_trace(set, &mut out)?;
    String::from_utf8(out).map_err(|e| Error::Serde(e.to_string()))
}

fn write_trace(set: &RolloutSet, w: &mut impl Write) -> Result<()> {
    let ser = |e: serde_json::Error| Error::Serde(e.to_string());
    let io = |e: std::io::Error| Error::Serde(e.to_string());
    if let Some(h) = &set.header {
        serde_json::to_writer(&mut *w, h).map_err(ser)?;
        w.write_all(b"\n").map_err(io)?;
    }
    for r in &set.rollouts {
        serde_json::to_writer(&mut *w, &RolloutRecord::from_rollout(r)).map_err(ser)?;
        w.write_all(b"\n").map_err(io)?;
    }
    Ok(())
}

pub fn save_rollouts(set: &RolloutSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_trace(set, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Draws `m` successful ID rollouts for calibration; everything else is held out.
///
/// Both halves keep the original file order.
pub fn split_calibration(set: &RolloutSet, m: usize, seed: u64) -> Result<(RolloutSet, RolloutSet)> {
    let mut eligible: Vec<usize> = set
        .rollouts
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_success_id())
        .map(|(i, _)| i)
        .collect();
    if eligible.len() < m {
        return Err(Error::InsufficientCalibration {
            needed: m,
            available: eligible.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    eligible.shuffle(&mut rng);
    let mut chosen = vec![false; set.len()];
    for &i in &eligible[..m] {
        chosen[i] = true;
    }
    let (calib, held): (Vec<_>, Vec<_>) = set
        .rollouts
        .iter()
        .cloned()
        .zip(chosen)
        .partition(|(_, c)| *c);
    Ok((
        set.with_rollouts(calib.into_iter().map(|(r, _)| r).collect()),
        set.with_rollouts(held.into_iter().map(|(r, _)| r).collect()),
    ))
}
