mod common;

use proptest::prelude::*;
use rollout_monitor::aggregate::{ScoreKind, ScoreSeries};
use rollout_monitor::calibrate::{cp_constant, ThresholdProfile};
use rollout_monitor::detect::{combine, threshold_decide, CombineMode};
use rollout_monitor::eval::{average_metrics, metrics, ConfusionCounts};
use rollout_monitor::trace::Outcome;

fn profile(gamma: f64) -> ThresholdProfile {
    let s = ScoreSeries::from_values("c", ScoreKind::Custom, 1, vec![gamma]).unwrap();
    cp_constant(&[s], 0.5).unwrap()
}

fn eta(values: Vec<f64>) -> ScoreSeries {
    ScoreSeries::from_values("r", ScoreKind::Custom, 5, values).unwrap()
}

fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..30).prop_flat_map(|n| {
        (
            prop::collection::vec(0.0f64..4.0, n),
            prop::collection::vec(0.0f64..4.0, n),
        )
    })
}

proptest! {
    #[test]
    fn and_alarms_only_where_both_fire((o, a) in pair(), g_o in 0.0f64..4.0, g_a in 0.0f64..4.0) {
        let t_max = 5 * (o.len() as u64 - 1);
        let d_o = threshold_decide(&eta(o), &profile(g_o), t_max).unwrap();
        let d_a = threshold_decide(&eta(a), &profile(g_a), t_max).unwrap();
        let and = combine(&d_o, &d_a, CombineMode::And).unwrap();
        let or = combine(&d_o, &d_a, CombineMode::Or).unwrap();
        for n in 0..and.per_step.len() {
            prop_assert_eq!(and.per_step[n], d_o.per_step[n] && d_a.per_step[n]);
            prop_assert_eq!(or.per_step[n], d_o.per_step[n] || d_a.per_step[n]);
        }
        prop_assert!(!and.flagged || (d_o.flagged && d_a.flagged));
        prop_assert!(or.flagged == (d_o.flagged || d_a.flagged));
        if let (Some(ta), Some(to)) = (and.detection_time, or.detection_time) {
            prop_assert!(ta >= to);
        }
    }

    #[test]
    fn timeliness_never_exceeds_accuracy(
        outcomes in prop::collection::vec((any::<bool>(), any::<bool>(), 0.0f64..=1.0), 1..60),
    ) {
        let c = counts(&outcomes);
        prop_assert!(c.is_consistent());
        let m = metrics(&c);
        if let (Some(twa), Some(acc)) = (m.twa, m.acc) {
            prop_assert!(twa <= acc + 1e-12);
            prop_assert!((0.0..=1.0).contains(&twa));
        }
    }

    #[test]
    fn metrics_ignore_rollout_order(
        outcomes in prop::collection::vec((any::<bool>(), any::<bool>(), 0.0f64..=1.0), 1..60),
    ) {
        let mut rev = outcomes.clone();
        rev.reverse();
        let a = metrics(&counts(&outcomes));
        let b = metrics(&counts(&rev));
        prop_assert_eq!(a.tpr, b.tpr);
        prop_assert_eq!(a.tnr, b.tnr);
        prop_assert!(option_close(a.twa, b.twa));
        prop_assert!(option_close(a.dt, b.dt));
    }
}

fn option_close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() < 1e-12,
        (None, None) => true,
        _ => false,
    }
}

/// `(fails, flagged, t/T)` triples folded into confusion counts.
fn counts(outcomes: &[(bool, bool, f64)]) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for (i, &(fails, flagged, frac)) in outcomes.iter().enumerate() {
        let values = if flagged { vec![0.0, 2.0] } else { vec![0.0, 0.0] };
        let mut d = threshold_decide(&eta(values), &profile(1.0), 10).unwrap();
        d.rollout_id = format!("r{i}");
        if flagged {
            d.normalized_dt = Some(frac);
        }
        c.record(if fails { Outcome::Fail } else { Outcome::Success }, &d);
    }
    c
}

#[test]
fn ties_do_not_fire() {
    let d = threshold_decide(&eta(vec![1.0, 1.0, 1.5]), &profile(1.0), 10).unwrap();
    assert_eq!(d.per_step, vec![false, false, true]);
    assert_eq!(d.detection_time, Some(10));
    assert_eq!(d.normalized_dt, Some(1.0));
}

#[test]
fn worked_confusion_example() {
    // 4 failures: detected at 0.2 and 0.6, two missed; 2 successes, one false alarm.
    let c = counts(&[
        (true, true, 0.2),
        (true, true, 0.6),
        (true, false, 0.0),
        (true, false, 0.0),
        (false, true, 0.5),
        (false, false, 0.0),
    ]);
    let m = metrics(&c);
    assert_eq!(m.tpr, Some(0.5));
    assert_eq!(m.tnr, Some(0.5));
    assert_eq!(m.acc, Some(0.5));
    // TWA = 0.5 * ((0.8 + 0.4) / 4 + 0.5)
    assert!((m.twa.unwrap() - 0.4).abs() < 1e-12);
    assert!((m.dt.unwrap() - 0.4).abs() < 1e-12);
}

#[test]
fn empty_class_leaves_metric_absent() {
    let m = metrics(&counts(&[(false, false, 0.0)]));
    assert_eq!(m.tpr, None);
    assert_eq!(m.tnr, Some(1.0));
    assert_eq!(m.acc, None);
    let avg = average_metrics(&[m, metrics(&counts(&[(true, true, 0.5)]))]);
    assert_eq!(avg.tpr, Some(1.0));
    assert_eq!(avg.tnr, Some(1.0));
}

#[test]
fn mismatched_rollouts_do_not_combine() {
    let d_o = threshold_decide(&eta(vec![1.0, 2.0]), &profile(1.0), 5).unwrap();
    let d_a = threshold_decide(&eta(vec![1.0]), &profile(1.0), 5).unwrap();
    assert!(combine(&d_o, &d_a, CombineMode::And).is_err());
}
