use proptest::prelude::*;

use smartctx::estimate::{accuracy, fit_estimator, EstimatorSpec};
use smartctx::harness::{
    bins_sweep, duration_split_eval, loocv_report, mru_miss, per_user_kde, recency_lists, recency_miss,
    split_at_midpoint, static_top_miss, two_fold_eval, user_data,
};
use smartctx::discretize::BinningKind;
use smartctx::synth::{generate, SynthConfig};
use smartctx::trace::{build_vocabulary, ContextSnapshot, LabeledEvent, UsageEvent, UsageKind};
use smartctx::SourceId;

fn event(ts: u64, label: &str) -> LabeledEvent {
    LabeledEvent {
        context: ContextSnapshot {
            time_of_cycle: (ts % 2880) as f64,
            accel_log_power: (ts % 11) as f64,
            gps: None,
            cell_id: None,
            prior_usage: Default::default(),
        },
        outcome: UsageEvent {
            user_id: "u".into(),
            timestamp: ts,
            kind: UsageKind::Phone,
            label: label.into(),
        },
    }
}

fn labels_strategy() -> impl Strategy<Value = Vec<LabeledEvent>> {
    prop::collection::vec(0..6usize, 1..60)
        .prop_map(|ls| ls.into_iter().enumerate().map(|(i, l)| event(i as u64 * 60, &format!("n{l}"))).collect())
}

proptest! {
    #[test]
    fn recency_lists_follow_their_definition(events in labels_strategy(), r in 1usize..5) {
        let refs: Vec<&LabeledEvent> = events.iter().collect();
        let lists = recency_lists(&refs, r);
        for (i, list) in lists.iter().enumerate() {
            // Walk backwards collecting distinct labels.
            let mut want: Vec<String> = Vec::new();
            for e in events[..i].iter().rev() {
                if !want.contains(&e.outcome.label) {
                    want.push(e.outcome.label.clone());
                }
                if want.len() == r {
                    break;
                }
            }
            prop_assert_eq!(list, &want);
        }
        let misses = (0..events.len()).filter(|&i| !lists[i].contains(&events[i].outcome.label)).count();
        prop_assert!((recency_miss(&refs, r) - misses as f64 / events.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn mru_and_recency_agree(events in labels_strategy(), r in 1usize..5) {
        // A move-to-front cache of r slots holds the r most recent distinct labels.
        let refs: Vec<&LabeledEvent> = events.iter().collect();
        prop_assert!((mru_miss(&refs, r) - recency_miss(&refs, r)).abs() < 1e-12);
    }

    #[test]
    fn static_top_is_the_best_fixed_list(events in labels_strategy(), r in 1usize..4) {
        let refs: Vec<&LabeledEvent> = events.iter().collect();
        let got = static_top_miss(&refs, r);
        // Every fixed list of r labels does no better.
        let labels: Vec<String> = (0..6).map(|l| format!("n{l}")).collect();
        let mut best = 1.0f64;
        for mask in 0u32..64 {
            if mask.count_ones() as usize != r {
                continue;
            }
            let chosen: Vec<&String> = labels.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, l)| l).collect();
            let miss = events.iter().filter(|e| !chosen.contains(&&e.outcome.label)).count();
            best = best.min(miss as f64 / events.len() as f64);
        }
        prop_assert!((got - best).abs() < 1e-12);
    }

    #[test]
    fn midpoint_split_partitions_by_time(ts in prop::collection::btree_set(0u64..100_000, 2..50)) {
        let events: Vec<LabeledEvent> = ts.iter().map(|&t| event(t, "x")).collect();
        let refs: Vec<&LabeledEvent> = events.iter().collect();
        let first = *ts.iter().next().unwrap() as f64;
        let last = *ts.iter().last().unwrap() as f64;
        let mid = (first + last) / 2.0;
        let (a, b) = split_at_midpoint(&refs).unwrap();
        prop_assert_eq!(a.len() + b.len(), events.len());
        prop_assert!(a.iter().all(|e| e.outcome.timestamp as f64 <= mid));
        prop_assert!(b.iter().all(|e| e.outcome.timestamp as f64 > mid));
    }

    #[test]
    fn kde_integrates_to_about_one(values in prop::collection::vec(0.2..0.8f64, 1..30)) {
        let curve = per_user_kde(&values, 0.05).unwrap();
        prop_assert!((curve.integral() - 1.0).abs() < 1e-3);
        prop_assert!(curve.density.iter().all(|&d| d >= 0.0));
    }
}

#[test]
fn kde_of_one_value_peaks_there() {
    let curve = per_user_kde(&[0.42], 0.05).unwrap();
    assert!((curve.mode() - 0.42).abs() < 0.0051);
    let peak = 1.0 / (0.05 * (2.0 * std::f64::consts::PI).sqrt());
    assert!((curve.density.iter().copied().fold(0.0, f64::max) - peak).abs() < 0.01 * peak);
    assert!(per_user_kde(&[], 0.05).is_err());
    assert!(per_user_kde(&[0.5], 0.0).is_err());
}

#[test]
fn midpoint_split_rejects_empty_and_single_time() {
    assert!(split_at_midpoint(&[]).is_err());
    let e = [event(5, "a"), event(5, "b")];
    let refs: Vec<&LabeledEvent> = e.iter().collect();
    assert!(split_at_midpoint(&refs).is_err());
}

fn trace() -> smartctx::trace::Trace {
    let config = SynthConfig {
        seed: 3,
        n_users: 3,
        scale: 0.1,
        ..SynthConfig::default()
    };
    generate(&config).unwrap().0
}

#[test]
fn two_fold_trains_on_one_half_only() {
    let trace = trace();
    let spec = EstimatorSpec::all_sources(4);
    for u in user_data(&trace, UsageKind::Phone, 100).unwrap() {
        let all = u.all();
        let got = two_fold_eval(&all, &spec, false, 100, 2).unwrap();
        let (a, b) = split_at_midpoint(&all).unwrap();
        let oracle = |train: &[&LabeledEvent], test: &[&LabeledEvent]| {
            let vocab = build_vocabulary(train.iter().map(|e| &e.outcome), UsageKind::Phone, 100).unwrap();
            accuracy(&fit_estimator(&spec, train, &vocab).unwrap(), test, 2)
        };
        assert_eq!(got.forward, oracle(&a, &b));
        assert_eq!(got.backward, oracle(&b, &a));

        // Relabelling the test fold must not change what was learned.
        let mut shuffled: Vec<LabeledEvent> = b.iter().map(|e| (*e).clone()).collect();
        let n = shuffled.len();
        for i in 0..n {
            shuffled[i].outcome.label = b[(i + 1) % n].outcome.label.clone();
        }
        let vocab = build_vocabulary(a.iter().map(|e| &e.outcome), UsageKind::Phone, 100).unwrap();
        let est = fit_estimator(&spec, &a, &vocab).unwrap();
        let mut combined = a.clone();
        let shuffled_refs: Vec<&LabeledEvent> = shuffled.iter().collect();
        combined.extend(shuffled_refs.iter().copied());
        let again = two_fold_eval(&combined, &spec, false, 100, 2).unwrap();
        assert_eq!(again.forward, accuracy(&est, &shuffled_refs, 2));
    }
}

#[test]
fn loocv_report_covers_every_user() {
    let trace = trace();
    let spec = EstimatorSpec::all_sources(4);
    let report = loocv_report(&trace, UsageKind::App, &spec, 100, 1).unwrap();
    assert_eq!(report.per_user.len(), 3);
    for row in &report.per_user {
        assert!((0.0..=1.0).contains(&row.accuracy));
        assert!((0.0..1.0).contains(&row.dropped_fraction));
    }
    let r3 = loocv_report(&trace, UsageKind::App, &spec, 100, 3).unwrap();
    for (a, b) in report.per_user.iter().zip(&r3.per_user) {
        assert!(b.accuracy >= a.accuracy);
    }
}

#[test]
fn duration_windows_are_counted() {
    let trace = trace();
    let users = user_data(&trace, UsageKind::App, 100).unwrap();
    let all = users[0].all();
    let points = duration_split_eval(&all, &[1.0, 0.5, 0.25], &EstimatorSpec::all_sources(4), 100, 1).unwrap();
    assert_eq!(points.iter().map(|p| p.windows).collect::<Vec<_>>(), [1, 2, 4]);
    assert!(points.iter().all(|p| p.accuracy.is_some()));
    assert!(duration_split_eval(&all, &[0.0], &EstimatorSpec::all_sources(4), 100, 1).is_err());

    let two = [event(1, "a"), event(2, "b"), event(3, "a")];
    let refs: Vec<&LabeledEvent> = two.iter().collect();
    let p = duration_split_eval(&refs, &[0.25], &EstimatorSpec::new(vec![]), 100, 1).unwrap();
    assert_eq!((p[0].windows, p[0].skipped, p[0].accuracy), (4, 4, None));
}

#[test]
fn bins_sweep_flags_sparse_bins() {
    let trace = trace();
    let users = user_data(&trace, UsageKind::Phone, 100).unwrap();
    let u = &users[0];
    let all = u.all();
    let (kept, _) = u.kept();
    let points = bins_sweep(&all, &u.vocab, SourceId::Time, BinningKind::EqualWidth, &[1, 4, 1000], 1, 0).unwrap();
    for p in &points {
        assert!((p.samples_per_bin - kept.len() as f64 / p.bins as f64).abs() < 1e-12);
        assert_eq!(p.flagged, p.samples_per_bin < 10.0);
    }
    assert!(points.last().unwrap().flagged);
}
