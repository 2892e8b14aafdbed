//! Detection metrics and the calibration/window/quantile sweep.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::ace::AceConfig;
use crate::aggregate::{raw_scores, window_sum, RawScores, ScoreSeries};
use crate::calibrate::{calibrate, Grid, SchemeChoice};
use crate::detect::{combine, threshold_decide, CombineMode, DetectionResult};
use crate::error::{Error, Result};
use crate::par;
use crate::rnd::RndModel;
use crate::stamp::Stamp;
use crate::trace::{Outcome, RolloutSet};

/// Rates below this on either class mark the detection time as unreliable.
pub const DT_RELIABILITY_FLOOR: f64 = 0.4;

/// The default quantile grid `1 - delta ∈ {0.90, 0.91, ..., 0.99}`.
pub fn default_deltas() -> Vec<f64> {
    (1..=10).rev().map(|k| f64::from(k) / 100.0).collect()
}

/// Failed rollouts are positives, successful ones negatives.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub positives: usize,
    pub negatives: usize,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    /// `t_i / T` of every true positive.
    pub detection_fractions: Vec<f64>,
}

impl ConfusionCounts {
    pub fn record(&mut self, outcome: Outcome, result: &DetectionResult) {
        match (outcome, result.flagged) {
            (Outcome::Fail, true) => {
                self.positives += 1;
                self.tp += 1;
                self.detection_fractions
                    .push(result.normalized_dt.unwrap_or(0.0));
            }
            (Outcome::Fail, false) => {
                self.positives += 1;
                self.fn_ += 1;
            }
            (Outcome::Success, true) => {
                self.negatives += 1;
                self.fp += 1;
            }
            (Outcome::Success, false) => {
                self.negatives += 1;
                self.tn += 1;
            }
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.tp + self.fn_ == self.positives
            && self.fp + self.tn == self.negatives
            && self.detection_fractions.len() == self.tp
            && self
                .detection_fractions
                .iter()
                .all(|f| (0.0..=1.0).contains(f))
    }
}

/// Balanced metrics; a field is absent when its class is empty.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    pub acc: Option<f64>,
    pub twa: Option<f64>,
    /// Mean normalized detection time over true positives.
    pub dt: Option<f64>,
    pub dt_unreliable: bool,
}

impl Metrics {
    fn mark(mut self) -> Self {
        self.dt_unreliable = self.dt.is_some()
            && [self.tpr, self.tnr]
                .iter()
                .flatten()
                .any(|&r| r < DT_RELIABILITY_FLOOR);
        self
    }
}

pub fn metrics(c: &ConfusionCounts) -> Metrics {
    let ratio = |num: f64, den: usize| (den > 0).then(|| num / den as f64);
    let tpr = ratio(c.tp as f64, c.positives);
    let tnr = ratio(c.tn as f64, c.negatives);
    let early: f64 = c.detection_fractions.iter().map(|f| 1.0 - f).sum();
    let timely = ratio(early, c.positives);
    let both = |a: Option<f64>, b: Option<f64>| a.zip(b).map(|(a, b)| 0.5 * (a + b));
    let dt = (c.tp > 0).then(|| c.detection_fractions.iter().sum::<f64>() / c.tp as f64);
    Metrics {
        tpr,
        tnr,
        acc: both(tpr, tnr),
        twa: both(timely, tnr),
        dt,
        dt_unreliable: false,
    }
    .mark()
}

/// Mean of each field over the cells where it is present.
pub fn average_metrics(cells: &[Metrics]) -> Metrics {
    let mean = |f: fn(&Metrics) -> Option<f64>| {
        let v: Vec<f64> = cells.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    Metrics {
        tpr: mean(|m| m.tpr),
        tnr: mean(|m| m.tnr),
        acc: mean(|m| m.acc),
        twa: mean(|m| m.twa),
        dt: mean(|m| m.dt),
        dt_unreliable: false,
    }
    .mark()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub schemes: Vec<SchemeChoice>,
    /// Window sizes, used for both scores.
    pub windows: Vec<usize>,
    pub deltas: Vec<f64>,
    pub mode: CombineMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub scheme: SchemeChoice,
    pub window: usize,
    pub delta: f64,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AveragedCell {
    pub scheme: SchemeChoice,
    pub window: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub cells: Vec<Cell>,
    pub averaged: Vec<AveragedCell>,
    /// Index into `averaged` of the highest quantile-averaged TWA.
    pub best: Option<usize>,
    pub mode: CombineMode,
}

impl EvalReport {
    pub fn best_cell(&self) -> Option<&AveragedCell> {
        self.best.map(|i| &self.averaged[i])
    }
}

/// Windowed series of every rollout for a single window size.
fn windowed(raw: &[RawScores], w: usize) -> Result<(Vec<ScoreSeries>, Vec<ScoreSeries>)> {
    raw.iter()
        .map(|r| Ok((window_sum(&r.rnd, w)?, window_sum(&r.ace, w)?)))
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().unzip())
}

/// Raw per-step scores of every rollout in a set.
pub fn score_set(set: &RolloutSet, rnd: &RndModel, ace: &AceConfig) -> Result<Vec<RawScores>> {
    par::map(&set.rollouts, |r| raw_scores(r, rnd, ace))
        .into_iter()
        .collect()
}

/// Observation, action and combined decisions for one evaluation rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Decisions {
    pub obs: DetectionResult,
    pub act: DetectionResult,
    pub combined: DetectionResult,
}

fn grid_for(dataset: &RolloutSet, calib: &RolloutSet) -> Result<Grid> {
    Grid::new(dataset.meta.stride, dataset.meta.t_max.max(calib.meta.t_max))
}

struct Prepared {
    grid: Grid,
    calib_raw: Vec<RawScores>,
    test_raw: Vec<RawScores>,
}

fn prepare(
    dataset: &RolloutSet,
    calib: &RolloutSet,
    rnd: &RndModel,
    ace: &AceConfig,
) -> Result<Prepared> {
    if calib.is_empty() {
        return Err(Error::Empty("calibration set"));
    }
    if dataset.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    if calib.meta.stride != dataset.meta.stride {
        return Err(Error::DimensionMismatch(format!(
            "calibration stride {} vs evaluation stride {}",
            calib.meta.stride, dataset.meta.stride
        )));
    }
    Ok(Prepared {
        grid: grid_for(dataset, calib)?,
        calib_raw: score_set(calib, rnd, ace)?,
        test_raw: score_set(dataset, rnd, ace)?,
    })
}

/// Detection times are normalized by the dataset's maximum episode length.
fn decide_all(
    dataset: &RolloutSet,
    obs: &[ScoreSeries],
    act: &[ScoreSeries],
    obs_profile: &crate::calibrate::ThresholdProfile,
    act_profile: &crate::calibrate::ThresholdProfile,
    mode: CombineMode,
) -> Result<Vec<Decisions>> {
    let t_max = dataset.meta.t_max;
    obs.iter()
        .zip(act)
        .map(|(o, a)| {
            let obs = threshold_decide(o, obs_profile, t_max)?;
            let act = threshold_decide(a, act_profile, t_max)?;
            let combined = combine(&obs, &act, mode)?;
            Ok(Decisions { obs, act, combined })
        })
        .collect()
}

/// Calibrates on `calib` and runs detection on `dataset` for one grid cell.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_cell(
    dataset: &RolloutSet,
    calib: &RolloutSet,
    rnd: &RndModel,
    ace: &AceConfig,
    scheme: SchemeChoice,
    window: usize,
    delta: f64,
    mode: CombineMode,
) -> Result<Vec<Decisions>> {
    let prep = prepare(dataset, calib, rnd, ace)?;
    let (c_obs, c_act) = windowed(&prep.calib_raw, window)?;
    let (t_obs, t_act) = windowed(&prep.test_raw, window)?;
    let p_obs = calibrate(&c_obs, scheme, delta, prep.grid)?;
    let p_act = calibrate(&c_act, scheme, delta, prep.grid)?;
    decide_all(dataset, &t_obs, &t_act, &p_obs, &p_act, mode)
}

/// Evaluates every `(scheme, window, delta)` cell with tied windows.
///
/// Metrics are averaged over deltas per `(scheme, window)` first; the best
/// pair is the one with the highest averaged TWA.
pub fn sweep(
    dataset: &RolloutSet,
    calib: &RolloutSet,
    rnd: &RndModel,
    ace: &AceConfig,
    cfg: &SweepConfig,
) -> Result<EvalReport> {
    if cfg.schemes.is_empty() || cfg.windows.is_empty() || cfg.deltas.is_empty() {
        return Err(Error::Empty("sweep grid"));
    }
    if cfg.windows.contains(&0) {
        return Err(Error::InvalidConfig("windows must be >= 1".into()));
    }
    let prep = prepare(dataset, calib, rnd, ace)?;
    let pairs: Vec<(usize, SchemeChoice)> = cfg
        .windows
        .iter()
        .flat_map(|&w| cfg.schemes.iter().map(move |&s| (w, s)))
        .collect();
    let per_pair = par::map(&pairs, |&(w, scheme)| -> Result<Vec<Cell>> {
        let (c_obs, c_act) = windowed(&prep.calib_raw, w)?;
        let (t_obs, t_act) = windowed(&prep.test_raw, w)?;
        cfg.deltas
            .iter()
            .map(|&delta| {
                let p_obs = calibrate(&c_obs, scheme, delta, prep.grid)?;
                let p_act = calibrate(&c_act, scheme, delta, prep.grid)?;
                let decisions =
                    decide_all(dataset, &t_obs, &t_act, &p_obs, &p_act, cfg.mode)?;
                let mut counts = ConfusionCounts::default();
                for (r, d) in dataset.rollouts.iter().zip(&decisions) {
                    counts.record(r.outcome, &d.combined);
                }
                Ok(Cell {
                    scheme,
                    window: w,
                    delta,
                    metrics: metrics(&counts),
                    counts,
                })
            })
            .collect()
    });
    let mut cells = Vec::new();
    let mut averaged = Vec::new();
    for (&(w, scheme), group) in pairs.iter().zip(per_pair) {
        let group = group?;
        let m: Vec<Metrics> = group.iter().map(|c| c.metrics).collect();
        averaged.push(AveragedCell {
            scheme,
            window: w,
            metrics: average_metrics(&m),
        });
        cells.extend(group);
    }
    let best = averaged
        .iter()
        .enumerate()
        .filter_map(|(i, a)| a.metrics.twa.map(|t| (i, t)))
        .fold(None, |best: Option<(usize, f64)>, (i, t)| match best {
            Some((_, bt)) if bt >= t => best,
            _ => Some((i, t)),
        })
        .map(|(i, _)| i);
    Ok(EvalReport {
        cells,
        averaged,
        best,
        mode: cfg.mode,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV with `#` header lines; per-delta rows then `delta=mean` rows.
pub fn report_csv(report: &EvalReport, stamp: &Stamp) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# tool_version={}", stamp.tool_version);
    let _ = writeln!(out, "# config_hash={}", stamp.config_hash);
    let _ = writeln!(out, "# seed={}", stamp.seed);
    let _ = writeln!(out, "# mode={}", report.mode.label());
    let _ = writeln!(
        out,
        "# metrics are averaged over delta per (scheme, w) before selecting the best cell"
    );
    if let Some(b) = report.best_cell() {
        let _ = writeln!(out, "# best scheme={} w={}", b.scheme.label(), b.window);
    }
    out.push_str("scheme,w,delta,tpr,tnr,acc,twa,dt,dt_unreliable_flag\n");
    let mut row = |scheme: &str, w: usize, delta: String, m: &Metrics| {
        let _ = writeln!(
            out,
            "{scheme},{w},{delta},{},{},{},{},{},{}",
            opt(m.tpr),
            opt(m.tnr),
            opt(m.acc),
            opt(m.twa),
            opt(m.dt),
            u8::from(m.dt_unreliable)
        );
    };
    for c in &report.cells {
        row(c.scheme.label(), c.window, c.delta.to_string(), &c.metrics);
    }
    for a in &report.averaged {
        row(a.scheme.label(), a.window, "mean".into(), &a.metrics);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(p: usize, n: usize, tn: usize, fractions: &[f64]) -> ConfusionCounts {
        ConfusionCounts {
            positives: p,
            negatives: n,
            tp: fractions.len(),
            fp: n - tn,
            tn,
            fn_: p - fractions.len(),
            detection_fractions: fractions.to_vec(),
        }
    }

    #[test]
    fn worked_example() {
        let m = metrics(&counts(2, 2, 1, &[0.5]));
        assert_eq!(m.twa, Some(0.375));
        assert_eq!(m.acc, Some(0.5));
        assert_eq!(m.dt, Some(0.5));
        assert_eq!(m.tpr, Some(0.5));
        assert!(!m.dt_unreliable);
    }

    #[test]
    fn perfect_predictor() {
        let m = metrics(&counts(3, 4, 4, &[0.0, 0.0, 0.0]));
        assert_eq!((m.twa, m.acc, m.dt), (Some(1.0), Some(1.0), Some(0.0)));
    }

    #[test]
    fn flag_everything_at_start() {
        let m = metrics(&counts(3, 4, 0, &[0.0, 0.0, 0.0]));
        assert_eq!((m.tpr, m.tnr, m.acc, m.twa), (Some(1.0), Some(0.0), Some(0.5), Some(0.5)));
        assert!(m.dt_unreliable);
    }

    #[test]
    fn missing_class_leaves_balanced_fields_absent() {
        let m = metrics(&counts(0, 3, 3, &[]));
        assert_eq!(m.tpr, None);
        assert_eq!(m.tnr, Some(1.0));
        assert_eq!(m.acc, None);
        assert_eq!(m.twa, None);
        assert_eq!(m.dt, None);
    }

    #[test]
    fn marking_rule() {
        let m = metrics(&counts(10, 10, 3, &[0.2; 10]));
        assert!(m.dt_unreliable);
        let m = metrics(&counts(10, 10, 4, &[0.2; 10]));
        assert!(!m.dt_unreliable);
    }

    #[test]
    fn averaging_identical_cells_is_identity() {
        let m = metrics(&counts(4, 5, 3, &[0.25, 0.5]));
        let avg = average_metrics(&[m, m, m]);
        let close = |a: Option<f64>, b: Option<f64>| (a.unwrap() - b.unwrap()).abs() < 1e-15;
        assert!(close(avg.tpr, m.tpr) && close(avg.tnr, m.tnr) && close(avg.acc, m.acc));
        assert!(close(avg.twa, m.twa) && close(avg.dt, m.dt));
        assert_eq!(avg.dt_unreliable, m.dt_unreliable);
    }

    #[test]
    fn delta_grid() {
        let d = default_deltas();
        assert_eq!(d.len(), 10);
        assert_eq!(d[0], 0.1);
        assert_eq!(d[9], 0.01);
    }
}
