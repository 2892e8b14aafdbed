//! Random network distillation over observation embeddings.
//!
//! A frozen, randomly initialized target network and a trainable predictor
//! map an embedding to an `m`-dimensional feature; the novelty score is the
//! Euclidean distance between the two outputs. The predictor is fitted on
//! successful in-distribution embeddings only, so the distance grows for
//! embeddings unlike the training data.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{accumulate, Activation, AdamW, AdamWParams, Dense, Mlp, MlpSpec};
use crate::par;
use crate::stamp::{derive_seed, Stamp};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// Hidden widths shared by both networks.
const TRUNK: [usize; 3] = [1024, 2048, 4096];
/// Extra predictor layers after the shared trunk.
const PREDICTOR_HEAD: [usize; 2] = [2048, 1024];
/// Rows per gradient shard; fixed so reductions do not depend on thread count.
const GRAD_SHARD: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RndArch {
    /// Output feature dimension `m`.
    pub out_dim: usize,
    /// Multiplier applied to every hidden width.
    pub width_scale: f64,
    pub leaky_slope: f64,
}

impl Default for RndArch {
    fn default() -> Self {
        Self {
            out_dim: 256,
            width_scale: 1.0,
            leaky_slope: 0.01,
        }
    }
}

impl RndArch {
    fn scaled(&self, w: usize) -> usize {
        ((w as f64 * self.width_scale).round() as usize).max(1)
    }

    pub fn target_spec(&self, input_dim: usize) -> Result<MlpSpec> {
        let mut widths = vec![input_dim];
        widths.extend(TRUNK.iter().map(|&w| self.scaled(w)));
        widths.push(self.out_dim);
        let leaky = Activation::LeakyRelu {
            slope: self.leaky_slope,
        };
        let mut acts = vec![leaky; TRUNK.len()];
        acts.push(Activation::Identity);
        MlpSpec::new(widths, acts)
    }

    pub fn predictor_spec(&self, input_dim: usize) -> Result<MlpSpec> {
        let mut widths = vec![input_dim];
        widths.extend(TRUNK.iter().chain(&PREDICTOR_HEAD).map(|&w| self.scaled(w)));
        widths.push(self.out_dim);
        let leaky = Activation::LeakyRelu {
            slope: self.leaky_slope,
        };
        let mut acts = vec![leaky; TRUNK.len()];
        acts.extend(std::iter::repeat_n(Activation::Relu, PREDICTOR_HEAD.len()));
        acts.push(Activation::Identity);
        MlpSpec::new(widths, acts)
    }

    fn validate(&self) -> Result<()> {
        if self.out_dim == 0 {
            return Err(Error::InvalidConfig("RND output dim must be >= 1".into()));
        }
        if !(self.width_scale > 0.0 && self.width_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "width_scale must be positive, got {}",
                self.width_scale
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub weight_decay: f64,
    pub eps: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            epochs: 250,
            lr: 1e-4,
            lr_schedule: LrSchedule::Cosine,
            weight_decay: 1e-5,
            eps: 1e-8,
            beta1: 0.9,
            beta2: 0.999,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("eps", self.eps),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("weight_decay must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidConfig(format!(
                "val_fraction must lie in [0,1), got {}",
                self.val_fraction
            )));
        }
        Ok(())
    }

    /// Learning rate for a 0-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                0.5 * self.lr * (1.0 + (PI * epoch as f64 / self.epochs.max(1) as f64).cos())
            }
        }
    }

    fn adamw(&self) -> AdamWParams {
        AdamWParams {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RndModel {
    pub target: Mlp,
    pub predictor: Mlp,
    pub arch: RndArch,
    pub seed: u64,
    pub trained: bool,
    /// Config of the last training call, if any.
    pub train_config: Option<TrainConfig>,
}

/// Full-size model with output dimension `m`.
pub fn init_rnd(input_dim: usize, m: usize, seed: u64) -> Result<RndModel> {
    init_rnd_with(
        input_dim,
        RndArch {
            out_dim: m,
            ..RndArch::default()
        },
        seed,
    )
}

pub fn init_rnd_with(input_dim: usize, arch: RndArch, seed: u64) -> Result<RndModel> {
    if input_dim == 0 {
        return Err(Error::InvalidConfig("embedding dim must be >= 1".into()));
    }
    arch.validate()?;
    Ok(RndModel {
        target: Mlp::init(arch.target_spec(input_dim)?, derive_seed(seed, 1)),
        predictor: Mlp::init(arch.predictor_spec(input_dim)?, derive_seed(seed, 2)),
        arch,
        seed,
        trained: false,
        train_config: None,
    })
}

impl RndModel {
    /// Pairs arbitrary networks, e.g. identical ones in tests.
    pub fn from_networks(target: Mlp, predictor: Mlp, seed: u64) -> Result<Self> {
        if target.input_dim() != predictor.input_dim()
            || target.output_dim() != predictor.output_dim()
        {
            return Err(Error::DimensionMismatch(format!(
                "target {}->{} vs predictor {}->{}",
                target.input_dim(),
                target.output_dim(),
                predictor.input_dim(),
                predictor.output_dim()
            )));
        }
        let arch = RndArch {
            out_dim: target.output_dim(),
            ..RndArch::default()
        };
        Ok(Self {
            target,
            predictor,
            arch,
            seed,
            trained: false,
            train_config: None,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.target.input_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.target.output_dim()
    }
}

/// `‖f(x) − g(x)‖₂` for a single embedding.
fn check_embedding(model: &RndModel, embedding: &[f64]) -> Result<()> {
    if embedding.len() != model.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "embedding has {} values, model expects {}",
            embedding.len(),
            model.input_dim()
        )));
    }
    if let Some(v) = embedding.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("embedding value {v}")));
    }
    Ok(())
}

fn distance(f: &[f64], g: &[f64]) -> f64 {
    f.iter()
        .zip(g)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// `‖f(x) − g(x)‖₂` for a single embedding.
pub fn rnd_score(model: &RndModel, embedding: &[f64]) -> Result<f64> {
    check_embedding(model, embedding)?;
    let f = model.predictor.forward_one(embedding);
    let g = model.target.forward_one(embedding);
    Ok(distance(&f, &g))
}

/// Scores of a contiguous group of embeddings, bit-identical to [`rnd_score`].
pub fn rnd_score_rows(model: &RndModel, embeddings: &[&[f64]]) -> Result<Vec<f64>> {
    for e in embeddings {
        check_embedding(model, e)?;
    }
    let f = model.predictor.forward_rows(embeddings);
    let g = model.target.forward_rows(embeddings);
    Ok(f.iter().zip(&g).map(|(a, b)| distance(a, b)).collect())
}

/// Scores many embeddings; identical to calling [`rnd_score`] on each.
pub fn rnd_score_batch(model: &RndModel, embeddings: &[Vec<f64>]) -> Result<Vec<f64>> {
    const CHUNK: usize = 64;
    let chunks: Vec<&[Vec<f64>]> = embeddings.chunks(CHUNK).collect();
    let mut out = Vec::with_capacity(embeddings.len());
    for scores in par::map(&chunks, |c| {
        let rows: Vec<&[f64]> = c.iter().map(Vec::as_slice).collect();
        rnd_score_rows(model, &rows)
    }) {
        out.extend(scores?);
    }
    Ok(out)
}

/// Mean distance over rows and its gradient w.r.t. the predictor parameters.
///
/// `targets` holds the frozen network's outputs for the same rows. Rows with
/// zero distance contribute a zero gradient.
pub fn distillation_loss_grad(
    predictor: &Mlp,
    inputs: ArrayView2<f64>,
    targets: ArrayView2<f64>,
) -> (f64, Vec<Dense>) {
    let n = inputs.nrows();
    let shards: Vec<(usize, usize)> = (0..n)
        .step_by(GRAD_SHARD)
        .map(|s| (s, (s + GRAD_SHARD).min(n)))
        .collect();
    let parts = par::map(&shards, |&(lo, hi)| {
        let x = inputs.slice(ndarray::s![lo..hi, ..]);
        let y = targets.slice(ndarray::s![lo..hi, ..]);
        let cache = predictor.forward_cached(x);
        let mut diff = cache.output(predictor) - &y;
        let mut loss = 0.0;
        for mut row in diff.axis_iter_mut(Axis(0)) {
            let norm = row.dot(&row).sqrt();
            loss += norm;
            if norm > 0.0 {
                row.mapv_inplace(|v| v / norm);
            } else {
                row.fill(0.0);
            }
        }
        (loss, predictor.backward(&cache, diff))
    });
    let mut iter = parts.into_iter();
    let (mut loss, mut grads) = iter.next().expect("at least one row");
    for (l, g) in iter {
        loss += l;
        accumulate(&mut grads, &g);
    }
    let scale = 1.0 / n as f64;
    for g in &mut grads {
        g.weight *= scale;
        g.bias *= scale;
    }
    (loss * scale, grads)
}

fn mean_distance(predictor: &Mlp, inputs: ArrayView2<f64>, targets: ArrayView2<f64>) -> f64 {
    let diff = predictor.forward(inputs) - &targets;
    let total: f64 = diff.rows().into_iter().map(|r| r.dot(&r).sqrt()).sum();
    total / inputs.nrows() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub train: f64,
    /// Absent when the validation split is empty.
    pub val: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Losses before the first update; absent when no training happened.
    pub initial: Option<EpochLoss>,
    pub epochs: Vec<EpochLoss>,
}

fn rows_to_array(rows: &[&Vec<f64>], dim: usize) -> Array2<f64> {
    let mut a = Array2::zeros((rows.len(), dim));
    for (mut dst, src) in a.rows_mut().into_iter().zip(rows) {
        dst.assign(&ndarray::ArrayView1::from(src.as_slice()));
    }
    a
}

/// Fits the predictor to the frozen target on `embeddings`.
///
/// Minibatch AdamW with a per-epoch learning-rate schedule. A seeded shuffle
/// picks the validation rows once and reorders the training rows each epoch.
pub fn train_rnd(
    model: &RndModel,
    embeddings: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<(RndModel, TrainHistory)> {
    cfg.validate()?;
    if embeddings.is_empty() {
        return Err(Error::Empty("training embeddings"));
    }
    let dim = model.input_dim();
    for e in embeddings {
        if e.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "embedding has {} values, model expects {dim}",
                e.len()
            )));
        }
        if e.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training embedding".into()));
        }
    }
    let mut out = model.clone();
    if cfg.epochs == 0 {
        return Ok((out, TrainHistory::default()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..embeddings.len()).collect();
    order.shuffle(&mut rng);
    let n = embeddings.len();
    let mut n_val = (n as f64 * cfg.val_fraction).round() as usize;
    if n_val >= n {
        n_val = n - 1;
    }
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();

    let gather = |idx: &[usize]| {
        let rows: Vec<&Vec<f64>> = idx.iter().map(|&i| &embeddings[i]).collect();
        rows_to_array(&rows, dim)
    };
    let val_x = gather(val_idx);
    let val_y = out.target.forward(val_x.view());
    let train_x_full = gather(&train_idx);
    let train_y_full = out.target.forward(train_x_full.view());
    // Row of each embedding inside the cached training arrays.
    let mut row_of = vec![usize::MAX; n];
    for (r, &i) in train_idx.iter().enumerate() {
        row_of[i] = r;
    }

    let eval = |predictor: &Mlp| EpochLoss {
        train: mean_distance(predictor, train_x_full.view(), train_y_full.view()),
        val: (n_val > 0).then(|| mean_distance(predictor, val_x.view(), val_y.view())),
    };

    let mut history = TrainHistory {
        initial: Some(eval(&out.predictor)),
        epochs: Vec::with_capacity(cfg.epochs),
    };
    let batch = cfg.batch_size.min(train_idx.len());
    let mut opt = AdamW::new(&out.predictor, cfg.adamw());
    let mut x = Array2::zeros((batch, dim));
    let mut y = Array2::zeros((batch, out.out_dim()));
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        train_idx.shuffle(&mut rng);
        for chunk in train_idx.chunks(batch) {
            if chunk.len() != x.nrows() {
                x = Array2::zeros((chunk.len(), dim));
                y = Array2::zeros((chunk.len(), out.out_dim()));
            }
            for (r, &i) in chunk.iter().enumerate() {
                let src = row_of[i];
                x.row_mut(r).assign(&train_x_full.row(src));
                y.row_mut(r).assign(&train_y_full.row(src));
            }
            let (_, grads) = distillation_loss_grad(&out.predictor, x.view(), y.view());
            opt.step(&mut out.predictor, &grads, lr);
        }
        history.epochs.push(eval(&out.predictor));
    }
    out.trained = true;
    out.train_config = Some(cfg.clone());
    Ok((out, history))
}

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    rows: usize,
    cols: usize,
    weight: String,
    bias: String,
}

#[derive(Serialize, Deserialize)]
struct NetRecord {
    spec: MlpSpec,
    layers: Vec<LayerRecord>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointRecord {
    schema_version: u32,
    kind: String,
    stamp: Stamp,
    seed: u64,
    arch: RndArch,
    trained: bool,
    train_config: Option<TrainConfig>,
    target_checksum: String,
    target: NetRecord,
    predictor: NetRecord,
}

fn encode_f64s<'a>(values: impl Iterator<Item = &'a f64>) -> String {
    let bytes: Vec<u8> = values.flat_map(|v| v.to_le_bytes()).collect();
    B64.encode(bytes)
}

fn decode_f64s(text: &str, expected: usize) -> Result<Vec<f64>> {
    let bytes = B64
        .decode(text)
        .map_err(|e| Error::Serde(format!("checkpoint weights: {e}")))?;
    if bytes.len() != expected * 8 {
        return Err(Error::Serde(format!(
            "checkpoint layer has {} bytes, expected {}",
            bytes.len(),
            expected * 8
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

impl NetRecord {
    fn from_mlp(mlp: &Mlp) -> Self {
        Self {
            spec: mlp.spec.clone(),
            layers: mlp
                .layers
                .iter()
                .map(|l| LayerRecord {
                    rows: l.weight.nrows(),
                    cols: l.weight.ncols(),
                    weight: encode_f64s(l.weight.iter()),
                    bias: encode_f64s(l.bias.iter()),
                })
                .collect(),
        }
    }

    fn into_mlp(self) -> Result<Mlp> {
        let spec = MlpSpec::new(self.spec.widths, self.spec.activations)?;
        if self.layers.len() != spec.widths.len() - 1 {
            return Err(Error::Serde("checkpoint layer count mismatch".into()));
        }
        let layers = self
            .layers
            .into_iter()
            .zip(spec.widths.windows(2))
            .map(|(l, w)| {
                if (l.rows, l.cols) != (w[0], w[1]) {
                    return Err(Error::Serde("checkpoint layer shape mismatch".into()));
                }
                let weight = Array2::from_shape_vec((l.rows, l.cols), decode_f64s(&l.weight, l.rows * l.cols)?)
                    .map_err(|e| Error::Serde(e.to_string()))?;
                let bias = Array1::from(decode_f64s(&l.bias, l.cols)?);
                Ok(Dense { weight, bias })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Mlp { spec, layers })
    }
}

/// Serializes a model to the versioned checkpoint format (weights bit-exact).
pub fn checkpoint_to_string(model: &RndModel, stamp: &Stamp) -> Result<String> {
    let record = CheckpointRecord {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        kind: "rnd_checkpoint".into(),
        stamp: stamp.clone(),
        seed: model.seed,
        arch: model.arch,
        trained: model.trained,
        train_config: model.train_config.clone(),
        target_checksum: model.target.checksum(),
        target: NetRecord::from_mlp(&model.target),
        predictor: NetRecord::from_mlp(&model.predictor),
    };
    serde_json::to_string(&record).map_err(|e| Error::Serde(e.to_string()))
}

pub fn checkpoint_from_str(text: &str) -> Result<(RndModel, Stamp)> {
    let version: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))?;
    let found = version
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::Serde("checkpoint lacks schema_version".into()))?;
    if found != u64::from(CHECKPOINT_SCHEMA_VERSION) {
        return Err(Error::SchemaVersion {
            what: "rnd checkpoint",
            expected: CHECKPOINT_SCHEMA_VERSION,
            found: found as u32,
        });
    }
    let record: CheckpointRecord =
        serde_json::from_value(version).map_err(|e| Error::Serde(e.to_string()))?;
    let target = record.target.into_mlp()?;
    if target.checksum() != record.target_checksum {
        return Err(Error::Serde("target network checksum mismatch".into()));
    }
    let mut model = RndModel::from_networks(target, record.predictor.into_mlp()?, record.seed)?;
    model.arch = record.arch;
    model.trained = record.trained;
    model.train_config = record.train_config;
    Ok((model, record.stamp))
}

pub fn save_checkpoint(model: &RndModel, stamp: &Stamp, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint_to_string(model, stamp)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(RndModel, Stamp)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_arch() -> RndArch {
        RndArch {
            out_dim: 8,
            width_scale: 1.0 / 128.0,
            leaky_slope: 0.01,
        }
    }

    #[test]
    fn architecture_matches_layout() {
        let arch = RndArch::default();
        let t = arch.target_spec(10).unwrap();
        assert_eq!(t.widths, vec![10, 1024, 2048, 4096, 256]);
        let p = arch.predictor_spec(10).unwrap();
        assert_eq!(p.widths, vec![10, 1024, 2048, 4096, 2048, 1024, 256]);
        assert_eq!(p.activations[3], Activation::Relu);
        assert_eq!(p.activations[4], Activation::Relu);
        assert_eq!(p.activations[5], Activation::Identity);
        assert!(matches!(t.activations[0], Activation::LeakyRelu { .. }));

        let small = RndArch {
            width_scale: 0.125,
            ..arch
        };
        assert_eq!(small.target_spec(4).unwrap().widths, vec![4, 128, 256, 512, 256]);
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let a = init_rnd_with(5, small_arch(), 3).unwrap();
        let b = init_rnd_with(5, small_arch(), 3).unwrap();
        let c = init_rnd_with(5, small_arch(), 4).unwrap();
        assert_eq!(a, b);
        let x = [0.3, -0.2, 1.0, 0.0, 0.5];
        assert_ne!(a.target.forward_one(&x), c.target.forward_one(&x));
    }

    #[test]
    fn degenerate_dims_are_valid() {
        let m = init_rnd_with(1, RndArch { out_dim: 1, ..small_arch() }, 0).unwrap();
        assert!(rnd_score(&m, &[0.7]).unwrap() >= 0.0);
        assert!(init_rnd(0, 4, 0).is_err());
        assert!(init_rnd(3, 0, 0).is_err());
    }

    #[test]
    fn identical_networks_score_zero() {
        let m = init_rnd_with(4, small_arch(), 9).unwrap();
        let twin = RndModel::from_networks(m.target.clone(), m.target.clone(), 9).unwrap();
        assert_eq!(rnd_score(&twin, &[1.0, 2.0, -3.0, 0.5]).unwrap(), 0.0);
    }

    #[test]
    fn stubbed_outputs_give_sqrt_two() {
        // One identity layer each; predictor emits [1,0], target [0,1] for x=[1].
        let spec = MlpSpec::new(vec![1, 2], vec![Activation::Identity]).unwrap();
        let net = |w: [f64; 2]| Mlp {
            spec: spec.clone(),
            layers: vec![Dense {
                weight: Array2::from_shape_vec((1, 2), w.to_vec()).unwrap(),
                bias: Array1::zeros(2),
            }],
        };
        let m = RndModel::from_networks(net([0.0, 1.0]), net([1.0, 0.0]), 0).unwrap();
        let s = rnd_score(&m, &[1.0]).unwrap();
        assert!((s - std::f64::consts::SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn score_rejects_bad_input() {
        let m = init_rnd_with(2, small_arch(), 0).unwrap();
        assert!(matches!(rnd_score(&m, &[1.0]), Err(Error::DimensionMismatch(_))));
        assert!(matches!(
            rnd_score(&m, &[1.0, f64::INFINITY]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn zero_epochs_is_identity() {
        let m = init_rnd_with(3, small_arch(), 1).unwrap();
        let data = vec![vec![0.0, 1.0, 2.0]; 4];
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (out, hist) = train_rnd(&m, &data, &cfg).unwrap();
        assert_eq!(out, m);
        assert!(hist.epochs.is_empty());
        assert!(train_rnd(&m, &[], &cfg).is_err());
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let cfg = TrainConfig {
            epochs: 10,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.lr_at(0), 1e-4);
        assert!((cfg.lr_at(5) - 0.5e-4).abs() < 1e-18);
        assert!(cfg.lr_at(9) < cfg.lr_at(8));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let m = init_rnd_with(3, small_arch(), 5).unwrap();
        let stamp = Stamp::ad_hoc(5);
        let text = checkpoint_to_string(&m, &stamp).unwrap();
        let (back, s) = checkpoint_from_str(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(s, stamp);
        assert_eq!(checkpoint_to_string(&back, &stamp).unwrap(), text);
    }

    #[test]
    fn checkpoint_rejects_other_versions() {
        let m = init_rnd_with(3, small_arch(), 5).unwrap();
        let text = checkpoint_to_string(&m, &Stamp::ad_hoc(0))
            .unwrap()
            .replacen("\"schema_version\":1", "\"schema_version\":2", 1);
        assert!(matches!(
            checkpoint_from_str(&text),
            Err(Error::SchemaVersion { found: 2, .. })
        ));
    }
}
