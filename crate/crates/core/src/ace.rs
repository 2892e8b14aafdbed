//! Action-chunk entropy: a dimension-wise binned entropy of the sampled
//! actions, summed over the prediction horizon.
//!
//! Cell sizes are fixed offline from the calibration action ranges
//! (`alpha * R_d`); at runtime the grid for each horizon step is anchored at
//! the per-batch minimum, so only the relative spread of the samples matters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{PolicyStep, RolloutSet};

/// Range floor for calibration dimensions that never move.
pub const RANGE_FLOOR: f64 = 1e-9;

pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AceConfig {
    /// Cell size factor in `(0, 1)`.
    pub alpha: f64,
    /// Per-dimension action range `R_d` seen during calibration.
    pub ranges: Vec<f64>,
    /// Dimensions whose range was replaced by [`RANGE_FLOOR`].
    #[serde(default)]
    pub floored: Vec<usize>,
}

impl AceConfig {
    pub fn new(alpha: f64, ranges: Vec<f64>) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie in (0,1), got {alpha}"
            )));
        }
        if ranges.is_empty() {
            return Err(Error::InvalidConfig("no action dimensions".into()));
        }
        if let Some(r) = ranges.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "action ranges must be positive, got {r}"
            )));
        }
        Ok(Self {
            alpha,
            ranges,
            floored: Vec::new(),
        })
    }

    pub fn action_dim(&self) -> usize {
        self.ranges.len()
    }

    /// Cell width in dimension `d`.
    pub fn cell_size(&self, d: usize) -> f64 {
        self.alpha * self.ranges[d]
    }
}

/// Per-dimension max-minus-min over every calibration action entry.
pub fn fit_ace_ranges(calib: &RolloutSet, alpha: f64) -> Result<AceConfig> {
    if calib.is_empty() {
        return Err(Error::Empty("calibration set"));
    }
    let dim = calib.meta.action_dim;
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for step in calib.rollouts.iter().flat_map(|r| &r.steps) {
        for a in step.actions.values().chunks_exact(dim) {
            for d in 0..dim {
                lo[d] = lo[d].min(a[d]);
                hi[d] = hi[d].max(a[d]);
            }
        }
    }
    let mut floored = Vec::new();
    let ranges = (0..dim)
        .map(|d| {
            let r = hi[d] - lo[d];
            if r > RANGE_FLOOR {
                r
            } else {
                floored.push(d);
                RANGE_FLOOR
            }
        })
        .collect();
    let mut cfg = AceConfig::new(alpha, ranges)?;
    cfg.floored = floored;
    Ok(cfg)
}

/// Binned entropy in bits of `B` actions given as a `B × D` row-major buffer.
///
/// Dimension `d` is split into `ceil((max - min) / (alpha R_d))` half-open bins
/// starting at the batch minimum; the maximum sample is clamped into the last
/// bin. Occupied cells are visited in lexicographic order of their index
/// tuples, so the result does not depend on sample order.
pub fn step_entropy(cfg: &AceConfig, actions: &[f64]) -> Result<f64> {
    let dim = cfg.action_dim();
    if actions.len() % dim != 0 {
        return Err(Error::DimensionMismatch(format!(
            "{} action values do not divide into D={dim}",
            actions.len()
        )));
    }
    let batch = actions.len() / dim;
    if batch < 2 {
        return Err(Error::DimensionMismatch(format!(
            "entropy needs B >= 2 samples, got {batch}"
        )));
    }
    if let Some(v) = actions.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("action value {v}")));
    }

    let mut cells = vec![0u64; actions.len()];
    for d in 0..dim {
        let column = actions.iter().skip(d).step_by(dim);
        let (min, max) = column.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        let width = cfg.cell_size(d);
        let bins = ((max - min) / width).ceil().max(1.0) as u64;
        for j in 0..batch {
            let k = ((actions[j * dim + d] - min) / width).floor() as u64;
            cells[j * dim + d] = k.min(bins - 1);
        }
    }

    let mut rows: Vec<&[u64]> = cells.chunks_exact(dim).collect();
    rows.sort_unstable();
    let n = batch as f64;
    let mut entropy = 0.0;
    let mut run = 1usize;
    for j in 1..=rows.len() {
        if j < rows.len() && rows[j] == rows[j - 1] {
            run += 1;
            continue;
        }
        let p = run as f64 / n;
        entropy -= p * p.log2();
        run = 1;
    }
    // A single occupied cell yields -1 * log2(1) = -0.0; report +0.0.
    Ok(if entropy > 0.0 { entropy } else { 0.0 })
}

/// Sum of [`step_entropy`] over the `H` horizon steps of a step's action batch.
pub fn ace_score(cfg: &AceConfig, step: &PolicyStep) -> Result<f64> {
    let actions = &step.actions;
    if actions.dim() != cfg.action_dim() {
        return Err(Error::DimensionMismatch(format!(
            "action dim {} vs config {}",
            actions.dim(),
            cfg.action_dim()
        )));
    }
    let mut total = 0.0;
    for i in 0..actions.horizon() {
        total += step_entropy(cfg, &actions.horizon_slice(i))?;
    }
    Ok(total)
}
