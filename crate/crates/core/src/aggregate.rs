//! Sliding-window aggregation of per-step scores.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::ace::{ace_score, AceConfig};
use crate::error::{Error, Result};
use crate::rnd::{rnd_score_rows, RndModel};
use crate::trace::Rollout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Rnd,
    Ace,
    Custom,
}

/// Scores of one rollout, one value per policy timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    pub rollout_id: String,
    pub kind: ScoreKind,
    pub times: Vec<u64>,
    pub values: Vec<f64>,
    /// Window the values were summed over; `None` for raw per-step scores.
    pub window: Option<usize>,
}

impl ScoreSeries {
    /// Raw series with timesteps `0, stride, 2*stride, ...`.
    pub fn from_values(
        rollout_id: impl Into<String>,
        kind: ScoreKind,
        stride: u64,
        values: Vec<f64>,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidConfig("stride must be positive".into()));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::NonFinite(format!(
                "scores must be finite and nonnegative, got {v}"
            )));
        }
        let times = (0..values.len() as u64).map(|n| n * stride).collect();
        Ok(Self {
            rollout_id: rollout_id.into(),
            kind,
            times,
            values,
            window: None,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn stride(&self) -> Option<u64> {
        (self.times.len() >= 2).then(|| self.times[1] - self.times[0])
    }
}

/// Running sum over the last `w` pushed scores.
///
/// Keeps the window contents and re-adds them newest-first on each push, so
/// the result is exactly the naive window sum and is nondecreasing in `w`.
/// Cost per push is `O(w)`, constant in the rollout length.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowAccumulator {
    window: usize,
    recent: VecDeque<f64>,
    current: f64,
}

impl WindowAccumulator {
    pub fn new(window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::InvalidConfig("window must be >= 1".into()));
        }
        Ok(Self {
            window,
            recent: VecDeque::with_capacity(window),
            current: 0.0,
        })
    }

    pub fn push(&mut self, score: f64) -> f64 {
        if self.recent.len() == self.window {
            self.recent.pop_front();
        }
        self.recent.push_back(score);
        self.current = self.recent.iter().rev().fold(0.0, |acc, v| acc + v);
        self.current
    }

    /// Window sum after the last push (0 before any push).
    pub fn value(&self) -> f64 {
        self.current
    }

    pub fn window(&self) -> usize {
        self.window
    }
}

/// Sums each value with up to `w - 1` predecessors.
pub fn window_sum(raw: &ScoreSeries, w: usize) -> Result<ScoreSeries> {
    let mut acc = WindowAccumulator::new(w)?;
    Ok(ScoreSeries {
        rollout_id: raw.rollout_id.clone(),
        kind: raw.kind,
        times: raw.times.clone(),
        values: raw.values.iter().map(|&v| acc.push(v)).collect(),
        window: Some(w),
    })
}

/// Unwindowed per-step scores of a rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct RawScores {
    pub rnd: ScoreSeries,
    pub ace: ScoreSeries,
}

pub(crate) fn check_dims(r: &Rollout, rnd: &RndModel, ace: &AceConfig) -> Result<()> {
    if r.embed_dim() != rnd.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "rollout {:?} embedding dim {} vs RND input {}",
            r.id,
            r.embed_dim(),
            rnd.input_dim()
        )));
    }
    if r.action_dim() != ace.action_dim() {
        return Err(Error::DimensionMismatch(format!(
            "rollout {:?} action dim {} vs ACE config {}",
            r.id,
            r.action_dim(),
            ace.action_dim()
        )));
    }
    Ok(())
}

pub fn raw_scores(r: &Rollout, rnd: &RndModel, ace: &AceConfig) -> Result<RawScores> {
    check_dims(r, rnd, ace)?;
    let embeddings: Vec<&[f64]> = r.steps.iter().map(|s| s.embedding.as_slice()).collect();
    let obs = rnd_score_rows(rnd, &embeddings)?;
    let act = r
        .steps
        .iter()
        .map(|step| ace_score(ace, step))
        .collect::<Result<Vec<_>>>()?;
    let series = |kind, values| {
        let mut s = ScoreSeries::from_values(r.id.clone(), kind, r.stride, values)?;
        s.times = r.steps.iter().map(|st| st.t).collect();
        Ok::<_, Error>(s)
    };
    Ok(RawScores {
        rnd: series(ScoreKind::Rnd, obs)?,
        ace: series(ScoreKind::Ace, act)?,
    })
}

/// Windowed observation and action scores `(η_O, η_A)` of a rollout.
pub fn score_rollout(
    r: &Rollout,
    rnd: &RndModel,
    ace: &AceConfig,
    w_obs: usize,
    w_act: usize,
) -> Result<(ScoreSeries, ScoreSeries)> {
    let raw = raw_scores(r, rnd, ace)?;
    Ok((window_sum(&raw.rnd, w_obs)?, window_sum(&raw.ace, w_act)?))
}
