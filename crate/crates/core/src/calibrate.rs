//! Threshold profiles calibrated on score series of successful rollouts.
//!
//! Three schemes are offered:
//!
//! * **CP constant**: one scalar, the conformal quantile of per-rollout
//!   maximum scores. A fresh successful rollout exceeds it at any timestep
//!   with probability at most `delta`.
//! * **CP band**: a split-conformal one-sided band `mu(t) + k * s(t)` around
//!   the functional mean of half the calibration set, with the same bound.
//! * **Time-varying**: per-timestep Gaussian (`mu + z * sigma`) or empirical
//!   quantile thresholds. More sensitive, no finite-sample guarantee.
//!
//! Series shorter than the profile horizon are padded by holding their last
//! value.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ace::AceConfig;
use crate::aggregate::ScoreSeries;
use crate::error::{Error, Result};
use crate::stamp::Stamp;
use crate::stats::{ceil_rank, conformal_rank, kth_smallest_or_inf, normal_inv_cdf};

pub const PROFILE_SCHEMA_VERSION: u32 = 1;

/// Stride-aligned timesteps `0, stride, ..., <= t_max` covered by a profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub stride: u64,
    pub t_max: u64,
}

impl Grid {
    pub fn new(stride: u64, t_max: u64) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidConfig("grid stride must be positive".into()));
        }
        Ok(Self { stride, t_max })
    }

    /// Number of policy timesteps on the grid.
    pub fn len(&self) -> usize {
        (self.t_max / self.stride) as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    CpConstant,
    CpBand,
    TimeVarying,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeVaryingVariant {
    Gaussian,
    EmpiricalQuantile,
}

/// A scheme together with its scheme-specific options.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum SchemeChoice {
    Constant,
    Band { split_seed: u64 },
    TimeVarying { variant: TimeVaryingVariant },
}

impl SchemeChoice {
    /// Parses `constant`, `band` and `tvar` (Gaussian) / `tvar-quantile`.
    pub fn parse(name: &str, split_seed: u64) -> Result<Self> {
        match name {
            "constant" => Ok(Self::Constant),
            "band" => Ok(Self::Band { split_seed }),
            "tvar" | "tvar-gaussian" => Ok(Self::TimeVarying {
                variant: TimeVaryingVariant::Gaussian,
            }),
            "tvar-quantile" => Ok(Self::TimeVarying {
                variant: TimeVaryingVariant::EmpiricalQuantile,
            }),
            other => Err(Error::InvalidConfig(format!("unknown scheme {other:?}"))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Constant => "constant",
            Self::Band { .. } => "band",
            Self::TimeVarying {
                variant: TimeVaryingVariant::Gaussian,
            } => "tvar",
            Self::TimeVarying {
                variant: TimeVaryingVariant::EmpiricalQuantile,
            } => "tvar-quantile",
        }
    }
}

/// Modulation function `s(t)` of the CP band.
#[derive(Debug, Clone, PartialEq)]
pub enum Modulation {
    /// `s(t) = 1 / T` with `T` the grid's maximum episode length.
    InverseHorizon,
    /// One positive value per grid timestep.
    Custom(Vec<f64>),
}

impl Modulation {
    fn values(&self, grid: Grid) -> Result<Vec<f64>> {
        let values = match self {
            Modulation::InverseHorizon => vec![1.0 / grid.t_max.max(1) as f64; grid.len()],
            Modulation::Custom(v) => {
                if v.len() != grid.len() {
                    return Err(Error::InvalidConfig(format!(
                        "modulation has {} values, grid has {}",
                        v.len(),
                        grid.len()
                    )));
                }
                v.clone()
            }
        };
        if let Some(s) = values.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidConfig(format!(
                "modulation must be positive everywhere, got {s}"
            )));
        }
        Ok(values)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Thresholds {
    Constant(#[serde(with = "json_f64")] f64),
    PerStep(#[serde(with = "json_f64_vec")] Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CalibrationProvenance {
    pub calibration_ids: Vec<String>,
    pub split: String,
}

/// Maps each policy timestep to a threshold `gamma_t` for one `delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdProfile {
    pub scheme: Scheme,
    pub delta: f64,
    pub thresholds: Thresholds,
    /// Timestep grid of per-step thresholds; absent for constant profiles.
    pub grid: Option<Grid>,
    pub provenance: CalibrationProvenance,
}

impl ThresholdProfile {
    /// Threshold at grid index `n` (policy timestep `n * stride`).
    pub fn gamma(&self, n: usize) -> Option<f64> {
        match &self.thresholds {
            Thresholds::Constant(g) => Some(*g),
            Thresholds::PerStep(v) => v.get(n).copied(),
        }
    }

    /// Number of grid steps covered, `None` when unbounded.
    pub fn coverage(&self) -> Option<usize> {
        match &self.thresholds {
            Thresholds::Constant(_) => None,
            Thresholds::PerStep(v) => Some(v.len()),
        }
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "delta must lie in (0,1), got {delta}"
        )))
    }
}

fn provenance(series: &[ScoreSeries], split: impl Into<String>) -> CalibrationProvenance {
    CalibrationProvenance {
        calibration_ids: series.iter().map(|s| s.rollout_id.clone()).collect(),
        split: split.into(),
    }
}

/// Extends a series to cover `grid` by repeating its final value.
pub fn pad_series(series: &ScoreSeries, grid: Grid) -> Result<ScoreSeries> {
    let last = *series
        .values
        .last()
        .ok_or(Error::Empty("series to pad"))?;
    let len = grid.len();
    if series.len() > len {
        return Err(Error::DimensionMismatch(format!(
            "series {:?} has {} steps, beyond the horizon of {len}",
            series.rollout_id,
            series.len()
        )));
    }
    let mut out = series.clone();
    while out.values.len() < len {
        out.times.push(out.values.len() as u64 * grid.stride);
        out.values.push(last);
    }
    Ok(out)
}

fn padded_values(series: &[ScoreSeries], grid: Grid) -> Result<Vec<Vec<f64>>> {
    series
        .iter()
        .map(|s| {
            if let Some(stride) = s.stride() {
                if stride != grid.stride {
                    return Err(Error::DimensionMismatch(format!(
                        "series {:?} stride {stride} vs grid stride {}",
                        s.rollout_id, grid.stride
                    )));
                }
            }
            pad_series(s, grid).map(|p| p.values)
        })
        .collect()
}

/// The grid spanned by the longest series.
pub fn grid_of(series: &[ScoreSeries]) -> Result<Grid> {
    let longest = series
        .iter()
        .max_by_key(|s| s.len())
        .ok_or(Error::Empty("calibration series"))?;
    let stride = series.iter().find_map(ScoreSeries::stride).unwrap_or(1);
    Grid::new(stride, longest.times.last().copied().unwrap_or(0))
}

/// Conformal quantile of per-rollout maxima.
pub fn cp_constant(series: &[ScoreSeries], delta: f64) -> Result<ThresholdProfile> {
    check_delta(delta)?;
    if series.is_empty() {
        return Err(Error::Empty("calibration series"));
    }
    if series.iter().any(ScoreSeries::is_empty) {
        return Err(Error::Empty("calibration series values"));
    }
    let maxima: Vec<f64> = series.iter().map(ScoreSeries::max).collect();
    let gamma = kth_smallest_or_inf(&maxima, conformal_rank(maxima.len(), delta));
    Ok(ThresholdProfile {
        scheme: Scheme::CpConstant,
        delta,
        thresholds: Thresholds::Constant(gamma),
        grid: None,
        provenance: provenance(series, "all"),
    })
}

/// One-sided split-conformal band with a seeded half split.
///
/// `floor(M/2)` series estimate the mean, the rest size the band.
pub fn cp_band(
    series: &[ScoreSeries],
    delta: f64,
    grid: Grid,
    split_seed: u64,
    modulation: &Modulation,
) -> Result<ThresholdProfile> {
    if series.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "CP band needs at least 2 calibration series, got {}",
            series.len()
        )));
    }
    let mut order: Vec<usize> = (0..series.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(split_seed));
    let (mean_idx, band_idx) = order.split_at(series.len() / 2);
    let mut mean_idx = mean_idx.to_vec();
    let mut band_idx = band_idx.to_vec();
    mean_idx.sort_unstable();
    band_idx.sort_unstable();
    let pick = |idx: &[usize]| idx.iter().map(|&i| series[i].clone()).collect::<Vec<_>>();
    let mut profile =
        cp_band_with_split(&pick(&mean_idx), &pick(&band_idx), delta, grid, modulation)?;
    profile.provenance.calibration_ids = series.iter().map(|s| s.rollout_id.clone()).collect();
    profile.provenance.split = format!(
        "seed {split_seed}: {} mean / {} band",
        mean_idx.len(),
        band_idx.len()
    );
    Ok(profile)
}

/// CP band from an explicit split into mean-estimation and band-sizing sets.
pub fn cp_band_with_split(
    mean_set: &[ScoreSeries],
    band_set: &[ScoreSeries],
    delta: f64,
    grid: Grid,
    modulation: &Modulation,
) -> Result<ThresholdProfile> {
    check_delta(delta)?;
    if mean_set.is_empty() || band_set.is_empty() {
        return Err(Error::InvalidConfig(
            "CP band needs nonempty mean and band sets".into(),
        ));
    }
    let scale = modulation.values(grid)?;
    let mean = functional_mean(&padded_values(mean_set, grid)?, grid.len());
    let deviations: Vec<f64> = padded_values(band_set, grid)?
        .iter()
        .map(|eta| {
            eta.iter()
                .zip(&mean)
                .zip(&scale)
                .map(|((e, m), s)| ((e - m) / s).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let k = kth_smallest_or_inf(&deviations, conformal_rank(deviations.len(), delta));
    let gammas = mean
        .iter()
        .zip(&scale)
        .map(|(m, s)| if k.is_infinite() { f64::INFINITY } else { m + k * s })
        .collect();
    let mut ids: Vec<String> = mean_set.iter().map(|s| s.rollout_id.clone()).collect();
    ids.extend(band_set.iter().map(|s| s.rollout_id.clone()));
    Ok(ThresholdProfile {
        scheme: Scheme::CpBand,
        delta,
        thresholds: Thresholds::PerStep(gammas),
        grid: Some(grid),
        provenance: CalibrationProvenance {
            calibration_ids: ids,
            split: format!("explicit: {} mean / {} band", mean_set.len(), band_set.len()),
        },
    })
}

fn functional_mean(values: &[Vec<f64>], len: usize) -> Vec<f64> {
    let n = values.len() as f64;
    (0..len)
        .map(|t| values.iter().map(|v| v[t]).sum::<f64>() / n)
        .collect()
}

/// Per-timestep thresholds without a joint guarantee.
pub fn time_varying(
    series: &[ScoreSeries],
    delta: f64,
    grid: Grid,
    variant: TimeVaryingVariant,
) -> Result<ThresholdProfile> {
    check_delta(delta)?;
    if series.is_empty() {
        return Err(Error::Empty("calibration series"));
    }
    let values = padded_values(series, grid)?;
    let m = values.len();
    let gammas = match variant {
        TimeVaryingVariant::Gaussian => {
            if m < 2 {
                return Err(Error::InvalidConfig(
                    "Gaussian time-varying thresholds need at least 2 series".into(),
                ));
            }
            let z = normal_inv_cdf(1.0 - delta);
            let mean = functional_mean(&values, grid.len());
            mean.iter()
                .enumerate()
                .map(|(t, mu)| {
                    let ss: f64 = values.iter().map(|v| (v[t] - mu) * (v[t] - mu)).sum();
                    mu + z * (ss / (m - 1) as f64).sqrt()
                })
                .collect()
        }
        TimeVaryingVariant::EmpiricalQuantile => {
            let k = ceil_rank(m as f64 * (1.0 - delta)).clamp(1, m);
            (0..grid.len())
                .map(|t| {
                    let column: Vec<f64> = values.iter().map(|v| v[t]).collect();
                    kth_smallest_or_inf(&column, k)
                })
                .collect()
        }
    };
    Ok(ThresholdProfile {
        scheme: Scheme::TimeVarying,
        delta,
        thresholds: Thresholds::PerStep(gammas),
        grid: Some(grid),
        provenance: provenance(series, format!("all ({variant:?})")),
    })
}

/// Dispatches to the scheme named by `choice`.
pub fn calibrate(
    series: &[ScoreSeries],
    choice: SchemeChoice,
    delta: f64,
    grid: Grid,
) -> Result<ThresholdProfile> {
    match choice {
        SchemeChoice::Constant => cp_constant(series, delta),
        SchemeChoice::Band { split_seed } => {
            cp_band(series, delta, grid, split_seed, &Modulation::InverseHorizon)
        }
        SchemeChoice::TimeVarying { variant } => time_varying(series, delta, grid, variant),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileTarget {
    Obs,
    Act,
}

/// On-disk threshold profile with everything needed to score new rollouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileFile {
    pub schema_version: u32,
    pub stamp: Stamp,
    pub target: ProfileTarget,
    pub window: usize,
    pub choice: SchemeChoice,
    pub profile: ThresholdProfile,
    /// Binning config used for action scores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ace: Option<AceConfig>,
    /// Target-network checksum of the RND model behind observation scores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rnd_checksum: Option<String>,
}

impl ProfileFile {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))?;
        let found = value
            .get("schema_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Serde("profile lacks schema_version".into()))?;
        if found != u64::from(PROFILE_SCHEMA_VERSION) {
            return Err(Error::SchemaVersion {
                what: "threshold profile",
                expected: PROFILE_SCHEMA_VERSION,
                found: found as u32,
            });
        }
        serde_json::from_value(value).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// JSON has no infinities; encode them as the strings `"inf"` / `"-inf"`.
mod json_f64 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    pub(super) enum Repr {
        Num(f64),
        Text(String),
    }

    pub(super) fn to_repr(v: f64) -> Repr {
        if v == f64::INFINITY {
            Repr::Text("inf".into())
        } else if v == f64::NEG_INFINITY {
            Repr::Text("-inf".into())
        } else {
            Repr::Num(v)
        }
    }

    pub(super) fn from_repr<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(v) => Ok(v),
            Repr::Text(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Text(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Text(s) => Err(E::custom(format!("bad threshold {s:?}"))),
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        to_repr(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        from_repr(Repr::deserialize(d)?)
    }
}

mod json_f64_vec {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::json_f64::{from_repr, to_repr, Repr};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|x| to_repr(*x)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Repr>::deserialize(d)?
            .into_iter()
            .map(from_repr)
            .collect()
    }
}
