//! Synthetic rollouts from a multimodal stand-in policy.
//!
//! Embeddings of successful in-distribution rollouts are i.i.d. standard
//! Gaussian. Each action batch is a mixture over `n_modes` well-separated
//! modes placed along a nominal end-effector path. Failures start at
//! `failure_onset_fraction * T`: from there every embedding coordinate drifts
//! by `embed_drift` base standard deviations per policy step (random sign per
//! coordinate and rollout) and the within-mode spread is inflated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::stamp::{config_hash, derive_seed, Stamp};
use crate::trace::{
    ActionBatch, Distribution, Outcome, PolicyStep, Rollout, RolloutSet, SetMeta, TraceHeader,
    TRACE_SCHEMA_VERSION,
};

/// Total displacement of the nominal path over a full episode.
const PATH_LENGTH: f64 = 1.0;
/// Spread of the per-rollout start position.
const START_SPREAD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub embed_dim: usize,
    pub batch_size: usize,
    pub horizon: usize,
    pub action_dim: usize,
    pub stride: u64,
    pub t_max: u64,
    pub n_modes: usize,
    pub mode_separation: f64,
    pub base_noise: f64,
    /// Per-coordinate drift per policy step after onset, in base-std units.
    pub embed_drift: f64,
    pub entropy_inflation: f64,
    pub failure_onset_fraction: f64,
    /// Magnitude of the constant embedding offset of benign OOD successes.
    pub ood_offset: f64,
    /// Successful episodes end uniformly in `[fraction * T, T]`.
    pub min_success_length_fraction: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            batch_size: 32,
            horizon: 8,
            action_dim: 3,
            stride: 4,
            t_max: 100,
            n_modes: 2,
            mode_separation: 0.3,
            base_noise: 0.01,
            embed_drift: 0.5,
            entropy_inflation: 6.0,
            failure_onset_fraction: 0.5,
            ood_offset: 1.0,
            min_success_length_fraction: 1.0,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.embed_dim == 0 || self.horizon == 0 || self.action_dim == 0 {
            return bad("scenario dims must be positive".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if self.stride == 0 || self.t_max < self.stride {
            return bad(format!(
                "need 0 < stride <= t_max, got stride {} t_max {}",
                self.stride, self.t_max
            ));
        }
        if self.n_modes == 0 {
            return bad("n_modes must be >= 1".into());
        }
        if !(self.base_noise > 0.0) {
            return bad(format!("base_noise must be positive, got {}", self.base_noise));
        }
        if !(self.entropy_inflation >= 1.0) {
            return bad(format!(
                "entropy_inflation must be >= 1, got {}",
                self.entropy_inflation
            ));
        }
        for (name, v) in [
            ("failure_onset_fraction", self.failure_onset_fraction),
            ("min_success_length_fraction", self.min_success_length_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0,1], got {v}"));
            }
        }
        if !(self.mode_separation >= 0.0 && self.embed_drift >= 0.0 && self.ood_offset >= 0.0) {
            return bad("separation, drift and offset must be nonnegative".into());
        }
        Ok(())
    }

    /// Policy timestep at which failures begin.
    pub fn onset(&self) -> u64 {
        (self.failure_onset_fraction * self.t_max as f64).floor() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    SuccessId,
    SuccessOod,
    FailId,
    FailOod,
}

impl Label {
    pub const ALL: [Label; 4] = [
        Label::SuccessId,
        Label::SuccessOod,
        Label::FailId,
        Label::FailOod,
    ];

    pub fn outcome(self) -> Outcome {
        match self {
            Label::SuccessId | Label::SuccessOod => Outcome::Success,
            Label::FailId | Label::FailOod => Outcome::Fail,
        }
    }

    pub fn distribution(self) -> Distribution {
        match self {
            Label::SuccessId | Label::FailId => Distribution::Id,
            Label::SuccessOod | Label::FailOod => Distribution::Ood,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Label::SuccessId => "success_id",
            Label::SuccessOod => "success_ood",
            Label::FailId => "fail_id",
            Label::FailOod => "fail_ood",
        }
    }
}

/// Rollouts to generate per label.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelCounts {
    pub success_id: usize,
    pub success_ood: usize,
    pub fail_id: usize,
    pub fail_ood: usize,
}

impl LabelCounts {
    pub fn get(&self, label: Label) -> usize {
        match label {
            Label::SuccessId => self.success_id,
            Label::SuccessOod => self.success_ood,
            Label::FailId => self.fail_id,
            Label::FailOod => self.fail_ood,
        }
    }

    pub fn total(&self) -> usize {
        Label::ALL.iter().map(|&l| self.get(l)).sum()
    }
}

fn unit_vector(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Directions shared by every rollout of a scenario.
struct Geometry {
    ood_dir: Vec<f64>,
    path_dir: Vec<f64>,
    mode_centers: Vec<Vec<f64>>,
}

impl Geometry {
    fn new(cfg: &ScenarioConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x6E0));
        let ood_dir = unit_vector(&mut rng, cfg.embed_dim);
        let path_dir = unit_vector(&mut rng, cfg.action_dim);
        let mode_axis = unit_vector(&mut rng, cfg.action_dim);
        let mid = (cfg.n_modes as f64 - 1.0) / 2.0;
        let mode_centers = (0..cfg.n_modes)
            .map(|k| {
                let offset = cfg.mode_separation * (k as f64 - mid);
                mode_axis.iter().map(|a| a * offset).collect()
            })
            .collect();
        Self {
            ood_dir,
            path_dir,
            mode_centers,
        }
    }
}

fn rollout_from(
    cfg: &ScenarioConfig,
    geo: &Geometry,
    label: Label,
    seed: u64,
    id: String,
) -> Result<Rollout> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fails = label.outcome() == Outcome::Fail;
    let ood = label.distribution() == Distribution::Ood;

    let length = if fails || cfg.min_success_length_fraction >= 1.0 {
        cfg.t_max
    } else {
        let lo = (cfg.min_success_length_fraction * cfg.t_max as f64).floor();
        rng.random_range(lo..=cfg.t_max as f64).floor() as u64
    };
    let last = length / cfg.stride * cfg.stride;
    let onset = cfg.onset();
    let drift_sign: Vec<f64> = (0..cfg.embed_dim)
        .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    let start: Vec<f64> = (0..cfg.action_dim)
        .map(|_| START_SPREAD * rng.sample::<f64, _>(StandardNormal))
        .collect();

    let mut steps = Vec::new();
    for t in (0..=last).step_by(cfg.stride as usize) {
        let failing = fails && t >= onset;
        let drift = if failing {
            cfg.embed_drift * ((t - onset) / cfg.stride + 1) as f64
        } else {
            0.0
        };
        let embedding: Vec<f64> = (0..cfg.embed_dim)
            .map(|e| {
                let mut x: f64 = rng.sample(StandardNormal);
                if ood {
                    x += cfg.ood_offset * geo.ood_dir[e];
                }
                x + drift * drift_sign[e]
            })
            .collect();

        let spread = if failing {
            cfg.base_noise * cfg.entropy_inflation
        } else {
            cfg.base_noise
        };
        let mut data = Vec::with_capacity(cfg.batch_size * cfg.horizon * cfg.action_dim);
        for _ in 0..cfg.batch_size {
            let mode = &geo.mode_centers[rng.random_range(0..cfg.n_modes)];
            for i in 0..cfg.horizon {
                let progress = PATH_LENGTH * (t + i as u64) as f64 / cfg.t_max as f64;
                for d in 0..cfg.action_dim {
                    let noise: f64 = rng.sample(StandardNormal);
                    data.push(start[d] + progress * geo.path_dir[d] + mode[d] + spread * noise);
                }
            }
        }
        let actions = ActionBatch::new(cfg.batch_size, cfg.horizon, cfg.action_dim, data)?;
        steps.push(PolicyStep::new(t, embedding, actions)?);
    }
    Ok(Rollout {
        id,
        outcome: label.outcome(),
        distribution: label.distribution(),
        stride: cfg.stride,
        t_max: cfg.t_max,
        steps,
    })
}

/// One rollout; a pure function of `(cfg, label, seed)`.
pub fn generate_rollout(cfg: &ScenarioConfig, label: Label, seed: u64) -> Result<Rollout> {
    cfg.validate()?;
    let geo = Geometry::new(cfg);
    rollout_from(cfg, &geo, label, seed, format!("{}-{seed:016x}", label.tag()))
}

/// Rollouts for every label in `counts`, ids `<label>-<index>`.
pub fn generate_dataset(cfg: &ScenarioConfig, counts: &LabelCounts, seed: u64) -> Result<RolloutSet> {
    cfg.validate()?;
    let geo = Geometry::new(cfg);
    let jobs: Vec<(Label, usize, u64)> = Label::ALL
        .iter()
        .enumerate()
        .flat_map(|(li, &label)| {
            (0..counts.get(label)).map(move |i| {
                (label, i, derive_seed(seed, ((li as u64) << 32) | i as u64))
            })
        })
        .collect();
    let rollouts = par::map(&jobs, |&(label, i, s)| {
        rollout_from(cfg, &geo, label, s, format!("{}-{i:04}", label.tag()))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let header = TraceHeader {
        schema_version: TRACE_SCHEMA_VERSION,
        tool_version: Stamp::ad_hoc(seed).tool_version,
        provenance: format!(
            "synthetic scenario seed={} counts={}/{}/{}/{}",
            cfg.seed, counts.success_id, counts.success_ood, counts.fail_id, counts.fail_ood
        ),
        config_hash: config_hash(&(cfg, counts)),
        seed,
    };
    if rollouts.is_empty() {
        return Ok(RolloutSet::empty(
            SetMeta {
                embed_dim: cfg.embed_dim,
                stride: cfg.stride,
                chunk_len: cfg.horizon,
                action_dim: cfg.action_dim,
                t_max: cfg.t_max,
                provenance: header.provenance.clone(),
            },
            Some(header),
        ));
    }
    RolloutSet::new(rollouts, Some(header))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        ScenarioConfig {
            t_max: 20,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_rollout(&small(), Label::FailOod, 42).unwrap();
        let b = generate_rollout(&small(), Label::FailOod, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_rollout(&small(), Label::FailOod, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn labels_and_shape() {
        let cfg = small();
        let r = generate_rollout(&cfg, Label::SuccessOod, 1).unwrap();
        assert_eq!(r.outcome, Outcome::Success);
        assert_eq!(r.distribution, Distribution::Ood);
        assert_eq!(r.steps.len(), 6);
        assert_eq!(r.episode_length(), 20);
        assert_eq!(r.steps[0].dims(), (16, 32, 8, 3));
        r.validate().unwrap();
    }

    #[test]
    fn counts_are_honored() {
        let counts = LabelCounts {
            success_id: 3,
            ..LabelCounts::default()
        };
        let set = generate_dataset(&small(), &counts, 5).unwrap();
        assert_eq!(set.len(), 3);
        assert!(set.rollouts.iter().all(Rollout::is_success_id));

        let empty = generate_dataset(&small(), &LabelCounts::default(), 5).unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.meta.embed_dim, 16);

        let counts = LabelCounts {
            success_id: 10,
            fail_id: 5,
            ..LabelCounts::default()
        };
        let set = generate_dataset(&small(), &counts, 5).unwrap();
        assert_eq!(set.filter(Outcome::Success, Distribution::Id).len(), 10);
        assert_eq!(set.filter(Outcome::Fail, Distribution::Id).len(), 5);
    }

    #[test]
    fn success_lengths_vary_when_configured() {
        let cfg = ScenarioConfig {
            min_success_length_fraction: 0.5,
            ..small()
        };
        let counts = LabelCounts {
            success_id: 20,
            fail_id: 3,
            ..LabelCounts::default()
        };
        let set = generate_dataset(&cfg, &counts, 2).unwrap();
        let lengths: Vec<u64> = set.rollouts.iter().map(Rollout::episode_length).collect();
        assert!(lengths.iter().all(|&l| (8..=20).contains(&l)));
        assert!(lengths[..20].iter().any(|&l| l < 20));
        assert!(lengths[20..].iter().all(|&l| l == 20));
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = [
            ScenarioConfig { n_modes: 0, ..small() },
            ScenarioConfig { base_noise: 0.0, ..small() },
            ScenarioConfig { entropy_inflation: 0.5, ..small() },
            ScenarioConfig { batch_size: 1, ..small() },
            ScenarioConfig { failure_onset_fraction: 1.5, ..small() },
        ];
        for cfg in bad {
            assert!(generate_rollout(&cfg, Label::SuccessId, 0).is_err());
        }
    }
}
