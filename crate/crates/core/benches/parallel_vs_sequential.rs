//! Data-parallel (`par::map`) versus sequential (`par::map_seq`) on the two
//! hot paths: per-rollout scoring and the window/scheme calibration sweep.
//! Without the `parallel` feature both arms run sequentially.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use rollout_monitor::ace::fit_ace_ranges;
use rollout_monitor::aggregate::{raw_scores, window_sum, RawScores, ScoreSeries};
use rollout_monitor::calibrate::{calibrate, grid_of, SchemeChoice, TimeVaryingVariant};
use rollout_monitor::par;
use rollout_monitor::rnd::{init_rnd_with, RndArch};
use rollout_monitor::synth::{generate_dataset, LabelCounts, ScenarioConfig};

fn fixture() -> (rollout_monitor::trace::RolloutSet, rollout_monitor::rnd::RndModel) {
    let cfg = ScenarioConfig::default();
    let counts = LabelCounts {
        success_id: 32,
        ..LabelCounts::default()
    };
    let set = generate_dataset(&cfg, &counts, 1).unwrap();
    let arch = RndArch {
        width_scale: 1.0 / 16.0,
        out_dim: 64,
        ..RndArch::default()
    };
    let rnd = init_rnd_with(cfg.embed_dim, arch, 2).unwrap();
    (set, rnd)
}

fn scoring(c: &mut Criterion) {
    let (set, rnd) = fixture();
    let ace = fit_ace_ranges(&set, 0.05).unwrap();
    let mut group = c.benchmark_group("score_rollouts");
    group.sample_size(10);
    group.bench_function("parallel", |b| {
        b.iter(|| par::map(&set.rollouts, |r| raw_scores(r, &rnd, &ace).unwrap()))
    });
    group.bench_function("sequential", |b| {
        b.iter(|| par::map_seq(&set.rollouts, |r| raw_scores(r, &rnd, &ace).unwrap()))
    });
    group.finish();
}

fn sweep_cells(raw: &[RawScores], cells: &[(usize, SchemeChoice)], parallel: bool) -> usize {
    let obs: Vec<&ScoreSeries> = raw.iter().map(|r| &r.rnd).collect();
    let grid = grid_of(&raw.iter().map(|r| r.rnd.clone()).collect::<Vec<_>>()).unwrap();
    let cell = |&(w, scheme): &(usize, SchemeChoice)| {
        let windowed: Vec<ScoreSeries> = obs.iter().map(|s| window_sum(s, w).unwrap()).collect();
        [0.05, 0.1, 0.2]
            .iter()
            .map(|&d| calibrate(&windowed, scheme, d, grid).unwrap())
            .count()
    };
    let counts = if parallel {
        par::map(cells, cell)
    } else {
        par::map_seq(cells, cell)
    };
    counts.into_iter().sum()
}

fn sweep(c: &mut Criterion) {
    let (set, rnd) = fixture();
    let ace = fit_ace_ranges(&set, 0.05).unwrap();
    let raw: Vec<RawScores> = set
        .rollouts
        .iter()
        .map(|r| raw_scores(r, &rnd, &ace).unwrap())
        .collect();
    let schemes = [
        SchemeChoice::Constant,
        SchemeChoice::Band { split_seed: 0 },
        SchemeChoice::TimeVarying {
            variant: TimeVaryingVariant::Gaussian,
        },
    ];
    let mut group = c.benchmark_group("calibration_sweep");
    for max_w in [10usize, 50] {
        let cells: Vec<(usize, SchemeChoice)> = (1..=max_w)
            .flat_map(|w| schemes.iter().map(move |&s| (w, s)))
            .collect();
        group.bench_with_input(BenchmarkId::new("parallel", max_w), &cells, |b, cells| {
            b.iter(|| sweep_cells(&raw, cells, true))
        });
        group.bench_with_input(BenchmarkId::new("sequential", max_w), &cells, |b, cells| {
            b.iter(|| sweep_cells(&raw, cells, false))
        });
    }
    group.finish();
}

criterion_group!(benches, scoring, sweep);
criterion_main!(benches);
