//! Run configuration shared by every CLI stage (TOML).
//!
//! ```toml
//! schema_version = 1
//! seed = 7
//! ace_alpha = 0.05
//! mode = "and"
//! schemes = ["constant", "band"]
//! deltas = [0.1, 0.05]
//! calibration_size = 50
//!
//! [windows]
//! obs = 5
//! act = 5
//! sweep = [1, 2, 5, 10]
//!
//! [scenario]      # synthetic generator, see `ScenarioConfig`
//! [counts]        # rollouts per label for `simulate`
//! [rnd]           # out_dim, width_scale, leaky_slope
//! [train]         # batch_size, epochs, lr, ...
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ace::DEFAULT_ALPHA;
use crate::calibrate::SchemeChoice;
use crate::detect::CombineMode;
use crate::error::{Error, Result};
use crate::eval::default_deltas;
use crate::rnd::{RndArch, TrainConfig};
use crate::stamp::{config_hash, derive_seed};
use crate::synth::{LabelCounts, ScenarioConfig};

pub const RUN_CONFIG_SCHEMA_VERSION: u32 = 1;

/// Environment variable that overrides the global seed.
pub const SEED_ENV: &str = "RMON_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub obs: usize,
    pub act: usize,
    /// Window sizes swept by `evaluate` (tied for both scores).
    pub sweep: Vec<usize>,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            obs: 5,
            act: 5,
            sweep: (1..=50).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub scenario: ScenarioConfig,
    pub counts: LabelCounts,
    pub rnd: RndArch,
    pub train: TrainConfig,
    pub ace_alpha: f64,
    pub windows: WindowConfig,
    pub deltas: Vec<f64>,
    pub schemes: Vec<String>,
    pub mode: CombineMode,
    /// Successful ID rollouts drawn for calibration by `simulate --calib-out`.
    pub calibration_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: RUN_CONFIG_SCHEMA_VERSION,
            seed: 0,
            scenario: ScenarioConfig::default(),
            counts: LabelCounts {
                success_id: 150,
                success_ood: 25,
                fail_id: 50,
                fail_ood: 25,
            },
            rnd: RndArch {
                width_scale: 0.125,
                ..RndArch::default()
            },
            train: TrainConfig::default(),
            ace_alpha: DEFAULT_ALPHA,
            windows: WindowConfig::default(),
            deltas: default_deltas(),
            schemes: vec!["constant".into(), "band".into(), "tvar".into()],
            mode: CombineMode::And,
            calibration_size: 50,
        }
    }
}

/// Per-stage seeds derived from the global one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSeeds {
    pub simulate: u64,
    pub split: u64,
    pub rnd_init: u64,
    pub train: u64,
    pub band_split: u64,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let value: toml::Value =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let found = value
            .get("schema_version")
            .and_then(toml::Value::as_integer)
            .ok_or_else(|| Error::InvalidConfig("config lacks schema_version".into()))?;
        if found != i64::from(RUN_CONFIG_SCHEMA_VERSION) {
            return Err(Error::SchemaVersion {
                what: "run config",
                expected: RUN_CONFIG_SCHEMA_VERSION,
                found: found as u32,
            });
        }
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.train.validate()?;
        if !(self.ace_alpha > 0.0 && self.ace_alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "ace_alpha must lie in (0,1), got {}",
                self.ace_alpha
            )));
        }
        if self.windows.obs == 0 || self.windows.act == 0 || self.windows.sweep.contains(&0) {
            return Err(Error::InvalidConfig("windows must be >= 1".into()));
        }
        if let Some(d) = self.deltas.iter().find(|d| !(**d > 0.0 && **d < 1.0)) {
            return Err(Error::InvalidConfig(format!("delta {d} outside (0,1)")));
        }
        for s in &self.schemes {
            SchemeChoice::parse(s, 0)?;
        }
        Ok(())
    }

    /// Replaces the seed with `RMON_SEED` when it is set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("{SEED_ENV}={v:?} is not a u64")))?;
        }
        Ok(())
    }

    pub fn seeds(&self) -> StageSeeds {
        StageSeeds {
            simulate: derive_seed(self.seed, 1),
            split: derive_seed(self.seed, 2),
            rnd_init: derive_seed(self.seed, 3),
            train: derive_seed(self.seed, 4),
            band_split: derive_seed(self.seed, 5),
        }
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }

    pub fn scheme_choices(&self) -> Result<Vec<SchemeChoice>> {
        let split = self.seeds().band_split;
        self.schemes
            .iter()
            .map(|s| SchemeChoice::parse(s, split))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_config_uses_defaults() {
        let cfg = RunConfig::from_toml("schema_version = 1\nseed = 9\n[scenario]\nt_max = 40\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.scenario.t_max, 40);
        assert_eq!(cfg.train.epochs, 250);
    }

    #[test]
    fn version_and_typos_rejected() {
        assert!(matches!(
            RunConfig::from_toml("schema_version = 2\n"),
            Err(Error::SchemaVersion { found: 2, .. })
        ));
        assert!(RunConfig::from_toml("seed = 1\n").is_err());
        assert!(RunConfig::from_toml("schema_version = 1\nsede = 1\n").is_err());
        assert!(RunConfig::from_toml("schema_version = 1\nschemes = [\"bogus\"]\n").is_err());
    }

    #[test]
    fn stage_seeds_follow_global_seed() {
        let a = RunConfig { seed: 1, ..RunConfig::default() };
        let b = RunConfig { seed: 2, ..RunConfig::default() };
        assert_ne!(a.seeds(), b.seeds());
        assert_eq!(a.seeds(), a.clone().seeds());
    }
}
