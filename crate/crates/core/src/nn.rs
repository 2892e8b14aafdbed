//! Dense feed-forward networks with hand-written backprop and AdamW.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu { slope: f64 },
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => {
                if pre > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Layer widths (input first, output last) and one activation per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidConfig("an MLP needs at least 2 widths".into()));
        }
        if widths.contains(&0) {
            return Err(Error::InvalidConfig("MLP widths must be positive".into()));
        }
        if activations.len() != widths.len() - 1 {
            return Err(Error::InvalidConfig(format!(
                "{} layers need {} activations, got {}",
                widths.len() - 1,
                widths.len() - 1,
                activations.len()
            )));
        }
        Ok(Self {
            widths,
            activations,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }
}

/// Weights are stored `in × out` so a row-vector input multiplies on the left.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Dense>,
}

/// Intermediate values kept from a forward pass for backprop.
pub struct ForwardCache {
    /// Layer inputs; `inputs[0]` is the network input.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation outputs of every layer.
    pre: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self, mlp: &Mlp) -> Array2<f64> {
        let last = self.pre.len() - 1;
        let act = mlp.spec.activations[last];
        self.pre[last].mapv(|x| act.apply(x))
    }
}

impl Mlp {
    /// Uniform fan-in initialization: every weight and bias of a layer with
    /// fan-in `k` is drawn from `U(-1/sqrt(k), 1/sqrt(k))`.
    pub fn init(spec: MlpSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .widths
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let weight = Array2::from_shape_simple_fn((w[0], w[1]), || {
                    rng.random_range(-bound..bound)
                });
                let bias = Array1::from_shape_simple_fn(w[1], || rng.random_range(-bound..bound));
                Dense { weight, bias }
            })
            .collect();
        Self { spec, layers }
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Single-input forward pass with a fixed accumulation order, so results
    /// do not depend on how inputs are batched.
    pub fn forward_one(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for (layer, act) in self.layers.iter().zip(&self.spec.activations) {
            let mut out = layer.bias.to_vec();
            let width = out.len();
            let weight = layer.weight.as_standard_layout();
            let weight = weight.as_slice().expect("standard layout is contiguous");
            for (xi, row) in cur.iter().zip(weight.chunks_exact(width)) {
                for (o, w) in out.iter_mut().zip(row) {
                    *o += xi * w;
                }
            }
            for o in &mut out {
                *o = act.apply(*o);
            }
            cur = out;
        }
        cur
    }

    /// Forward pass of several inputs, bit-identical to [`Mlp::forward_one`]
    /// on each. Rows are processed in small blocks so each weight row is
    /// loaded once per block.
    pub fn forward_rows(&self, xs: &[&[f64]]) -> Vec<Vec<f64>> {
        const BLOCK: usize = 8;
        let mut result = Vec::with_capacity(xs.len());
        for block in xs.chunks(BLOCK) {
            let mut cur: Vec<Vec<f64>> = block.iter().map(|x| x.to_vec()).collect();
            for (layer, act) in self.layers.iter().zip(&self.spec.activations) {
                let width = layer.bias.len();
                let weight = layer.weight.as_standard_layout();
                let weight = weight.as_slice().expect("standard layout is contiguous");
                let mut out: Vec<Vec<f64>> = vec![layer.bias.to_vec(); cur.len()];
                for (i, row) in weight.chunks_exact(width).enumerate() {
                    for (o, x) in out.iter_mut().zip(&cur) {
                        let xi = x[i];
                        for (ov, w) in o.iter_mut().zip(row) {
                            *ov += xi * w;
                        }
                    }
                }
                for o in &mut out {
                    for v in o.iter_mut() {
                        *v = act.apply(*v);
                    }
                }
                cur = out;
            }
            result.extend(cur);
        }
        result
    }

    /// Batched forward pass (rows are samples) that keeps what backprop needs.
    pub fn forward_cached(&self, x: ArrayView2<f64>) -> ForwardCache {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_owned();
        for (layer, act) in self.layers.iter().zip(&self.spec.activations) {
            let z = cur.dot(&layer.weight) + &layer.bias;
            let next = z.mapv(|v| act.apply(v));
            inputs.push(cur);
            pre.push(z);
            cur = next;
        }
        ForwardCache { inputs, pre }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut cur = x.to_owned();
        for (layer, act) in self.layers.iter().zip(&self.spec.activations) {
            cur = (cur.dot(&layer.weight) + &layer.bias).mapv(|v| act.apply(v));
        }
        cur
    }

    /// Parameter gradients given `d loss / d output`.
    pub fn backward(&self, cache: &ForwardCache, grad_out: Array2<f64>) -> Vec<Dense> {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = grad_out;
        for l in (0..self.layers.len()).rev() {
            let act = self.spec.activations[l];
            delta.zip_mut_with(&cache.pre[l], |g, &z| *g *= act.derivative(z));
            let weight = cache.inputs[l].t().dot(&delta);
            let bias = delta.sum_axis(Axis(0));
            if l > 0 {
                delta = delta.dot(&self.layers[l].weight.t());
            }
            grads.push(Dense { weight, bias });
        }
        grads.reverse();
        grads
    }

    /// SHA-256 over the little-endian bytes of every parameter.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for l in &self.layers {
            for v in l.weight.iter().chain(l.bias.iter()) {
                hasher.update(v.to_le_bytes());
            }
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Adds `src` into `dst` elementwise.
pub fn accumulate(dst: &mut [Dense], src: &[Dense]) {
    for (d, s) in dst.iter_mut().zip(src) {
        d.weight += &s.weight;
        d.bias += &s.bias;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

/// AdamW with decoupled weight decay applied to every parameter.
pub struct AdamW {
    params: AdamWParams,
    first: Vec<Dense>,
    second: Vec<Dense>,
    step: i32,
}

impl AdamW {
    pub fn new(mlp: &Mlp, params: AdamWParams) -> Self {
        let zeros = || {
            mlp.layers
                .iter()
                .map(|l| Dense {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect::<Vec<_>>()
        };
        Self {
            params,
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    pub fn step(&mut self, mlp: &mut Mlp, grads: &[Dense], lr: f64) {
        self.step += 1;
        let AdamWParams {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.params;
        let c1 = 1.0 - beta1.powi(self.step);
        let c2 = 1.0 - beta2.powi(self.step);
        let decay = 1.0 - lr * weight_decay;
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *p *= decay;
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (((layer, g), m), v) in mlp
            .layers
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            ndarray::Zip::from(&mut layer.weight)
                .and(&g.weight)
                .and(&mut m.weight)
                .and(&mut v.weight)
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut layer.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocked_rows_match_single_rows_bitwise() {
        let spec = MlpSpec::new(
            vec![3, 7, 5, 2],
            vec![
                Activation::LeakyRelu { slope: 0.01 },
                Activation::Relu,
                Activation::Identity,
            ],
        )
        .unwrap();
        let mlp = Mlp::init(spec, 4);
        let xs: Vec<Vec<f64>> = (0..19)
            .map(|i| vec![i as f64 * 0.37 - 3.0, (i as f64).sin(), 1.0 / (i as f64 + 1.0)])
            .collect();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let batched = mlp.forward_rows(&refs);
        for (x, y) in xs.iter().zip(&batched) {
            let single = mlp.forward_one(x);
            assert_eq!(
                single.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                y.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }
    use ndarray::array;

    fn tiny() -> Mlp {
        let spec = MlpSpec::new(
            vec![3, 4, 2],
            vec![Activation::LeakyRelu { slope: 0.01 }, Activation::Identity],
        )
        .unwrap();
        Mlp::init(spec, 11)
    }

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::new(vec![3], vec![]).is_err());
        assert!(MlpSpec::new(vec![3, 0], vec![Activation::Relu]).is_err());
        assert!(MlpSpec::new(vec![3, 2], vec![]).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = tiny();
        let b = tiny();
        assert_eq!(a, b);
        let bound = 1.0 / 3f64.sqrt();
        assert!(a.layers[0].weight.iter().all(|w| w.abs() <= bound));
        assert_eq!(a.num_params(), 3 * 4 + 4 + 4 * 2 + 2);
    }

    #[test]
    fn single_and_batched_forward_agree() {
        let m = tiny();
        let x = array![[0.5, -1.0, 2.0], [0.0, 0.1, -0.3]];
        let batched = m.forward(x.view());
        for (row, out) in x.rows().into_iter().zip(batched.rows()) {
            let one = m.forward_one(row.as_slice().unwrap());
            for (a, b) in one.iter().zip(out.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adamw_moves_against_gradient() {
        let mut m = tiny();
        let before = m.layers[0].weight[[0, 0]];
        let mut grads: Vec<Dense> = m
            .layers
            .iter()
            .map(|l| Dense {
                weight: Array2::zeros(l.weight.raw_dim()),
                bias: Array1::zeros(l.bias.raw_dim()),
            })
            .collect();
        grads[0].weight[[0, 0]] = 1.0;
        let mut opt = AdamW::new(&m, AdamWParams::default());
        opt.step(&mut m, &grads, 0.1);
        // First bias-corrected Adam step is lr * sign(g).
        let expected = before * (1.0 - 0.1 * 1e-5) - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((m.layers[0].weight[[0, 0]] - expected).abs() < 1e-12);
    }
}
