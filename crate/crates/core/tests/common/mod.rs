//! Brute-force oracles and fixtures shared by the integration tests.

#![allow(dead_code)]

use rollout_monitor::rnd::{init_rnd_with, train_rnd, RndArch, RndModel, TrainConfig};
use rollout_monitor::synth::{generate_dataset, LabelCounts, ScenarioConfig};

/// Joint-histogram entropy of `rows` (each a `D`-vector) with explicit cell maps.
///
/// Cells are found by a linear scan over the cells seen so far, then ordered
/// by a lexicographic insertion sort before `-Σ p log2 p` is accumulated.
pub fn entropy_oracle(alpha: f64, ranges: &[f64], rows: &[Vec<f64>]) -> f64 {
    let dim = ranges.len();
    let mut lo = vec![0.0; dim];
    let mut hi = vec![0.0; dim];
    for d in 0..dim {
        lo[d] = rows[0][d];
        hi[d] = rows[0][d];
        for row in rows {
            if row[d] < lo[d] {
                lo[d] = row[d];
            }
            if row[d] > hi[d] {
                hi[d] = row[d];
            }
        }
    }
    let mut cells: Vec<Vec<u64>> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for row in rows {
        let mut cell = Vec::with_capacity(dim);
        for d in 0..dim {
            let width = alpha * ranges[d];
            let mut n_bins = ((hi[d] - lo[d]) / width).ceil();
            if n_bins < 1.0 {
                n_bins = 1.0;
            }
            let k = ((row[d] - lo[d]) / width).floor();
            let k = if k >= n_bins { n_bins - 1.0 } else { k };
            cell.push(k as u64);
        }
        let mut found = false;
        for (c, n) in cells.iter().zip(counts.iter_mut()) {
            if *c == cell {
                *n += 1;
                found = true;
                break;
            }
        }
        if !found {
            cells.push(cell);
            counts.push(1);
        }
    }
    // Insertion sort on lexicographic order of the index tuples.
    for i in 1..cells.len() {
        let mut j = i;
        while j > 0 && lex_less(&cells[j], &cells[j - 1]) {
            cells.swap(j, j - 1);
            counts.swap(j, j - 1);
            j -= 1;
        }
    }
    let n = rows.len() as f64;
    let mut acc = 0.0;
    for &c in &counts {
        let p = c as f64 / n;
        acc -= p * p.log2();
    }
    if acc > 0.0 {
        acc
    } else {
        0.0
    }
}

fn lex_less(a: &[u64], b: &[u64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x != y {
            return x < y;
        }
    }
    false
}

/// Window sums by naive re-summation: `eta[n] = Σ_{k=max(0,n-w+1)..=n} s[k]`,
/// newest term first.
pub fn window_oracle(raw: &[f64], w: usize) -> Vec<f64> {
    (0..raw.len())
        .map(|n| {
            let first = (n + 1).saturating_sub(w);
            let mut acc = 0.0;
            let mut k = n + 1;
            while k > first {
                k -= 1;
                acc += raw[k];
            }
            acc
        })
        .collect()
}

pub fn success_embeddings(cfg: &ScenarioConfig, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let steps = (cfg.t_max / cfg.stride + 1) as usize;
    let counts = LabelCounts {
        success_id: n.div_ceil(steps),
        ..LabelCounts::default()
    };
    generate_dataset(cfg, &counts, seed)
        .expect("valid scenario")
        .rollouts
        .iter()
        .flat_map(|r| r.steps.iter().map(|s| s.embedding.clone()))
        .take(n)
        .collect()
}

/// Desk-scale RND (width 0.125) trained on `n` successful ID embeddings.
pub fn desk_rnd(cfg: &ScenarioConfig, n: usize, epochs: usize, seed: u64) -> RndModel {
    let embeddings = success_embeddings(cfg, n, seed);
    let arch = RndArch {
        width_scale: 0.125,
        ..RndArch::default()
    };
    let model = init_rnd_with(cfg.embed_dim, arch, seed ^ 0x5EED).expect("valid arch");
    let train = TrainConfig {
        epochs,
        lr: 1e-3,
        seed,
        ..TrainConfig::default()
    };
    train_rnd(&model, &embeddings, &train).expect("training runs").0
}

/// Tiny untrained RND for tests that only need some deterministic scorer.
pub fn tiny_rnd(embed_dim: usize, seed: u64) -> RndModel {
    let arch = RndArch {
        width_scale: 1.0 / 64.0,
        out_dim: 8,
        ..RndArch::default()
    };
    init_rnd_with(embed_dim, arch, seed).expect("valid arch")
}
