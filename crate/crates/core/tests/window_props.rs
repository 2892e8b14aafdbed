mod common;

use proptest::prelude::*;
use rollout_monitor::aggregate::{window_sum, ScoreKind, ScoreSeries, WindowAccumulator};

fn raw(values: Vec<f64>) -> ScoreSeries {
    ScoreSeries::from_values("r", ScoreKind::Custom, 4, values).unwrap()
}

fn scores() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..100.0, 1..80)
}

proptest! {
    #[test]
    fn equals_naive_resummation(values in scores(), w in 1usize..60) {
        let got = window_sum(&raw(values.clone()), w).unwrap();
        let want = common::window_oracle(&values, w);
        prop_assert_eq!(got.values, want);
        prop_assert_eq!(got.window, Some(w));
    }

    #[test]
    fn streaming_accumulator_matches_batch(values in scores(), w in 1usize..60) {
        let batch = window_sum(&raw(values.clone()), w).unwrap();
        let mut acc = WindowAccumulator::new(w).unwrap();
        let streamed: Vec<f64> = values.iter().map(|&v| acc.push(v)).collect();
        prop_assert_eq!(streamed, batch.values);
    }

    #[test]
    fn monotone_in_window(values in scores(), w in 1usize..60) {
        let small = window_sum(&raw(values.clone()), w).unwrap();
        let large = window_sum(&raw(values), w + 1).unwrap();
        for (a, b) in small.values.iter().zip(&large.values) {
            prop_assert!(a <= b);
        }
    }

    // A window only looks back, so later scores never change earlier sums.
    #[test]
    fn prefix_stable(values in scores(), extra in scores(), w in 1usize..60) {
        let head = window_sum(&raw(values.clone()), w).unwrap();
        let mut all = values.clone();
        all.extend(extra);
        let full = window_sum(&raw(all), w).unwrap();
        prop_assert_eq!(&full.values[..values.len()], &head.values[..]);
    }
}

#[test]
fn unit_window_is_identity() {
    let values = vec![0.5, 1.25, 3.0, 0.0];
    assert_eq!(window_sum(&raw(values.clone()), 1).unwrap().values, values);
}

#[test]
fn long_window_is_cumulative_sum() {
    let got = window_sum(&raw(vec![1.0, 2.0, 3.0, 4.0]), 50).unwrap();
    assert_eq!(got.values, vec![1.0, 3.0, 6.0, 10.0]);
    assert_eq!(got.times, vec![0, 4, 8, 12]);
}

#[test]
fn zero_window_is_rejected() {
    assert!(window_sum(&raw(vec![1.0]), 0).is_err());
    assert!(WindowAccumulator::new(0).is_err());
}
