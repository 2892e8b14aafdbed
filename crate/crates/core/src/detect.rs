//! Per-timestep failure decisions and their logical combination.

use serde::{Deserialize, Serialize};

use crate::ace::{ace_score, AceConfig};
use crate::aggregate::{check_dims, score_rollout, ScoreSeries, WindowAccumulator};
use crate::calibrate::ThresholdProfile;
use crate::error::{Error, Result};
use crate::rnd::{rnd_score, RndModel};
use crate::trace::{PolicyStep, Rollout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombineMode {
    And,
    Or,
}

impl CombineMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "and" => Ok(Self::And),
            "or" => Ok(Self::Or),
            other => Err(Error::InvalidConfig(format!("unknown combine mode {other:?}"))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::And => "and",
            Self::Or => "or",
        }
    }

    fn apply(self, a: bool, b: bool) -> bool {
        match self {
            Self::And => a && b,
            Self::Or => a || b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub rollout_id: String,
    pub flagged: bool,
    /// Index into the series of the first alarm.
    pub detection_index: Option<usize>,
    /// Policy timestep `t*` of the first alarm.
    pub detection_time: Option<u64>,
    pub per_step: Vec<bool>,
    /// `t* / T` for flagged rollouts.
    pub normalized_dt: Option<f64>,
    /// Policy timestep of every entry in `per_step`.
    pub times: Vec<u64>,
    /// Maximum episode length `T` used for normalization.
    pub t_max: u64,
}

impl DetectionResult {
    fn from_decisions(rollout_id: String, per_step: Vec<bool>, times: &[u64], t_max: u64) -> Self {
        let detection_index = per_step.iter().position(|&d| d);
        let detection_time = detection_index.map(|n| times[n]);
        Self {
            rollout_id,
            flagged: detection_index.is_some(),
            detection_index,
            detection_time,
            per_step,
            normalized_dt: detection_time.map(|t| normalized(t, t_max)),
            times: times.to_vec(),
            t_max,
        }
    }
}

fn normalized(t: u64, t_max: u64) -> f64 {
    if t_max == 0 {
        0.0
    } else {
        (t as f64 / t_max as f64).min(1.0)
    }
}

/// Grid index of policy timestep `t` under `profile`.
fn profile_index(profile: &ThresholdProfile, t: u64, n: usize) -> usize {
    match &profile.grid {
        Some(g) => (t / g.stride) as usize,
        None => n,
    }
}

/// `eta(t) > gamma_t` at every step; ties do not fire.
pub fn threshold_decide(
    eta: &ScoreSeries,
    profile: &ThresholdProfile,
    t_max: u64,
) -> Result<DetectionResult> {
    let per_step = eta
        .values
        .iter()
        .zip(&eta.times)
        .enumerate()
        .map(|(n, (&v, &t))| {
            let idx = profile_index(profile, t, n);
            profile.gamma(idx).map(|g| v > g).ok_or_else(|| {
                Error::DimensionMismatch(format!(
                    "profile covers {} steps, series {:?} needs index {idx}",
                    profile.coverage().unwrap_or(0),
                    eta.rollout_id
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DetectionResult::from_decisions(
        eta.rollout_id.clone(),
        per_step,
        &eta.times,
        t_max,
    ))
}

/// Elementwise AND/OR of two detectors evaluated on the same rollout.
pub fn combine(
    obs: &DetectionResult,
    act: &DetectionResult,
    mode: CombineMode,
) -> Result<DetectionResult> {
    if obs.rollout_id != act.rollout_id || obs.per_step.len() != act.per_step.len() {
        return Err(Error::DimensionMismatch(format!(
            "cannot combine {:?} ({} steps) with {:?} ({} steps)",
            obs.rollout_id,
            obs.per_step.len(),
            act.rollout_id,
            act.per_step.len()
        )));
    }
    let per_step: Vec<bool> = obs
        .per_step
        .iter()
        .zip(&act.per_step)
        .map(|(&a, &b)| mode.apply(a, b))
        .collect();
    Ok(DetectionResult::from_decisions(
        obs.rollout_id.clone(),
        per_step,
        &obs.times,
        obs.t_max,
    ))
}

/// Full observation, action and combined detections for one rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutDetection {
    pub obs: DetectionResult,
    pub act: DetectionResult,
    pub combined: DetectionResult,
}

/// Read-only pieces a monitor needs: models, profiles and windows.
#[derive(Debug, Clone, Copy)]
pub struct MonitorSpec<'a> {
    pub rnd: &'a RndModel,
    pub ace: &'a AceConfig,
    pub obs_profile: &'a ThresholdProfile,
    pub act_profile: &'a ThresholdProfile,
    pub w_obs: usize,
    pub w_act: usize,
    pub mode: CombineMode,
}

/// Batch path: score the whole rollout, then threshold and combine.
pub fn detect_rollout(spec: &MonitorSpec<'_>, r: &Rollout) -> Result<RolloutDetection> {
    let (eta_o, eta_a) = score_rollout(r, spec.rnd, spec.ace, spec.w_obs, spec.w_act)?;
    let obs = threshold_decide(&eta_o, spec.obs_profile, r.t_max)?;
    let act = threshold_decide(&eta_a, spec.act_profile, r.t_max)?;
    let combined = combine(&obs, &act, spec.mode)?;
    Ok(RolloutDetection { obs, act, combined })
}

/// Outcome of feeding one policy step to a [`MonitorState`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDecision {
    pub t: u64,
    pub eta_obs: f64,
    pub eta_act: f64,
    pub obs_fires: bool,
    pub act_fires: bool,
    pub alarm: bool,
}

/// Streaming monitor for one rollout; owned by a single caller.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorState {
    obs: WindowAccumulator,
    act: WindowAccumulator,
    steps: usize,
    last: Option<StepDecision>,
    first_alarm: Option<u64>,
}

impl MonitorState {
    pub fn new(spec: &MonitorSpec<'_>) -> Result<Self> {
        Ok(Self {
            obs: WindowAccumulator::new(spec.w_obs)?,
            act: WindowAccumulator::new(spec.w_act)?,
            steps: 0,
            last: None,
            first_alarm: None,
        })
    }

    /// Scores `step`, updates both windows and returns the alarm decision.
    pub fn stream_step(&mut self, spec: &MonitorSpec<'_>, step: &PolicyStep) -> Result<StepDecision> {
        if step.embedding.len() != spec.rnd.input_dim() || step.actions.dim() != spec.ace.action_dim()
        {
            return Err(Error::DimensionMismatch(format!(
                "step at t={} has E={} D={}, monitor expects E={} D={}",
                step.t,
                step.embedding.len(),
                step.actions.dim(),
                spec.rnd.input_dim(),
                spec.ace.action_dim()
            )));
        }
        let s_obs = rnd_score(spec.rnd, &step.embedding)?;
        let s_act = ace_score(spec.ace, step)?;
        let n = self.steps;
        let gamma = |p: &ThresholdProfile| {
            let idx = profile_index(p, step.t, n);
            p.gamma(idx).ok_or_else(|| {
                Error::DimensionMismatch(format!(
                    "profile covers {} steps, stream needs index {idx}",
                    p.coverage().unwrap_or(0)
                ))
            })
        };
        let (g_obs, g_act) = (gamma(spec.obs_profile)?, gamma(spec.act_profile)?);
        let eta_obs = self.obs.push(s_obs);
        let eta_act = self.act.push(s_act);
        let obs_fires = eta_obs > g_obs;
        let act_fires = eta_act > g_act;
        let alarm = spec.mode.apply(obs_fires, act_fires);
        let decision = StepDecision {
            t: step.t,
            eta_obs,
            eta_act,
            obs_fires,
            act_fires,
            alarm,
        };
        self.steps += 1;
        self.last = Some(decision);
        if alarm && self.first_alarm.is_none() {
            self.first_alarm = Some(step.t);
        }
        Ok(decision)
    }

    /// Decision at the most recent step.
    pub fn decision(&self) -> Option<StepDecision> {
        self.last
    }

    pub fn first_alarm(&self) -> Option<u64> {
        self.first_alarm
    }

    pub fn steps_seen(&self) -> usize {
        self.steps
    }
}

/// Convenience: replay a rollout through a fresh [`MonitorState`].
pub fn stream_rollout(spec: &MonitorSpec<'_>, r: &Rollout) -> Result<Vec<StepDecision>> {
    check_dims(r, spec.rnd, spec.ace)?;
    let mut state = MonitorState::new(spec)?;
    r.steps
        .iter()
        .map(|s| state.stream_step(spec, s))
        .collect()
}
