use proptest::prelude::*;

use smartctx::discretize::{equal_width_bins, BinningKind};
use smartctx::estimate::{
    accuracy, build_table, combine, fit_estimator, map_estimate, select_depth, Distribution, EstimatorSpec,
    SourceSpec, Rule,
};
use smartctx::harness::loocv_in_place;
use smartctx::trace::{build_vocabulary, ContextSnapshot, LabeledEvent, UsageEvent, UsageKind};
use smartctx::SourceId;

fn event(i: usize, time: f64, accel: f64, cell: Option<&str>, label: &str) -> LabeledEvent {
    LabeledEvent {
        context: ContextSnapshot {
            time_of_cycle: time,
            accel_log_power: accel,
            gps: None,
            cell_id: cell.map(str::to_string),
            prior_usage: Default::default(),
        },
        outcome: UsageEvent {
            user_id: "u".into(),
            timestamp: i as u64,
            kind: UsageKind::App,
            label: label.to_string(),
        },
    }
}

fn events_strategy(max: usize) -> impl Strategy<Value = Vec<LabeledEvent>> {
    prop::collection::vec((0.0..2879.0f64, -2.0..9.0f64, 0..4usize, 0..5usize), 6..max).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (t, a, c, g))| event(i, t, a, Some(&format!("c{c}")), &format!("g{g}")))
            .collect()
    })
}

fn dist_strategy(k: usize) -> impl Strategy<Value = Distribution> {
    prop::collection::vec(0.01..1.0f64, k).prop_map(|w| {
        let s: f64 = w.iter().sum();
        Distribution(w.into_iter().map(|x| x / s).collect())
    })
}

fn spec() -> EstimatorSpec {
    EstimatorSpec::new(vec![
        SourceSpec::with(SourceId::Time, BinningKind::EqualWidth, 4),
        SourceSpec::new(SourceId::Movement, 3),
        SourceSpec::new(SourceId::Cell, 3),
    ])
}

proptest! {
    #[test]
    fn laplace_posteriors_are_distributions(events in events_strategy(80)) {
        let refs: Vec<&LabeledEvent> = events.iter().collect();
        let vocab = build_vocabulary(events.iter().map(|e| &e.outcome), UsageKind::App, 100).unwrap();
        let binning = equal_width_bins(SourceId::Time, &[0.0, 2880.0], 6).unwrap();
        let table = build_table(&refs, &binning, &vocab).unwrap();
        let k = vocab.len() as f64;
        for b in 0..table.bins() {
            let p = table.laplace_posterior(b);
            prop_assert!((p.0.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.0.iter().all(|&x| x > 0.0 && x < 1.0 + 1e-12));
            // Direct formula with counts tallied here.
            let priors = table.priors();
            let n = refs.iter().filter(|e| table.bin_of(e) == b).count() as f64;
            for g in 0..vocab.len() {
                let c = refs
                    .iter()
                    .filter(|e| table.bin_of(e) == b && vocab.id(&e.outcome.label) == Some(g))
                    .count() as f64;
                let expect = if n == 0.0 { priors.0[g] } else { (c + k * priors.0[g]) / (n + k) };
                prop_assert!((p.0[g] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn map_estimate_matches_sorting_oracle(d in dist_strategy(7), r in 1usize..9) {
        let set = map_estimate(&d, r);
        let mut ids: Vec<usize> = (0..d.len()).collect();
        ids.sort_by(|&a, &b| d.0[b].partial_cmp(&d.0[a]).unwrap().then(a.cmp(&b)));
        ids.truncate(r.min(d.len()));
        prop_assert_eq!(&set.outcomes, &ids);
        let mass: f64 = ids.iter().map(|&i| d.0[i]).sum();
        prop_assert!((set.mass - mass).abs() < 1e-12);
    }

    #[test]
    fn bayes_matches_product_formula(a in dist_strategy(4), b in dist_strategy(4), p in dist_strategy(4)) {
        let got = combine(&[&a, &b], &p, Rule::Bayes).unwrap();
        let w: Vec<f64> = (0..4).map(|i| a.0[i] * b.0[i] / p.0[i]).collect();
        let z: f64 = w.iter().sum();
        for (g, wi) in got.0.iter().zip(&w) {
            prop_assert!((g - wi / z).abs() < 1e-9);
        }
    }

    #[test]
    fn prior_input_is_neutral_under_bayes(a in dist_strategy(5), p in dist_strategy(5)) {
        let with = combine(&[&a, &p], &p, Rule::Bayes).unwrap();
        let without = combine(&[&a], &p, Rule::Bayes).unwrap();
        prop_assert!(with.total_variation(&without) < 1e-9);
    }

    #[test]
    fn max_and_mean_are_normalized(a in dist_strategy(5), b in dist_strategy(5)) {
        let p = Distribution::uniform(5);
        for rule in [Rule::Max, Rule::Mean] {
            let c = combine(&[&a, &b], &p, rule).unwrap();
            prop_assert!((c.0.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn loocv_restores_counts_and_matches_refit(events in events_strategy(40)) {
        let refs: Vec<&LabeledEvent> = events.iter().collect();
        let vocab = build_vocabulary(events.iter().map(|e| &e.outcome), UsageKind::App, 100).unwrap();
        let spec = spec();
        let binnings = spec.fit_binnings(&refs, &vocab).unwrap();
        let mut est = spec.build(&binnings, &refs, &vocab).unwrap();
        let before = est.clone();
        let acc = loocv_in_place(&mut est, &refs, 2);
        prop_assert_eq!(&est, &before);

        // Refit without each event on the same binnings and vocabulary.
        let mut hits = 0;
        for i in 0..refs.len() {
            let rest: Vec<&LabeledEvent> = refs.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, e)| *e).collect();
            let held = spec.build(&binnings, &rest, &vocab).unwrap();
            let id = vocab.id(&refs[i].outcome.label).unwrap();
            let post = held.posterior(&refs[i].context);
            hits += usize::from(map_estimate(&post, 2).contains(id));
        }
        prop_assert!((acc - hits as f64 / refs.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn accuracy_counts_hits(events in events_strategy(60), r in 1usize..4) {
        let refs: Vec<&LabeledEvent> = events.iter().collect();
        let vocab = build_vocabulary(events.iter().map(|e| &e.outcome), UsageKind::App, 100).unwrap();
        let est = fit_estimator(&spec(), &refs, &vocab).unwrap();
        let hits = refs
            .iter()
            .filter(|e| est.estimate(&e.context, r).contains(vocab.id(&e.outcome.label).unwrap()))
            .count();
        prop_assert!((accuracy(&est, &refs, r) - hits as f64 / refs.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn selected_depth_has_enough_samples(samples in prop::collection::vec(0u64..50, 1..5), min in 0u64..30) {
        let d = select_depth(&samples, min);
        prop_assert!(d >= 1 && d <= samples.len());
        if d > 1 || samples[0] > min {
            prop_assert!(samples[d - 1] > min);
        }
        prop_assert!(samples[d..].iter().all(|&s| s <= min));
    }
}

#[test]
fn full_response_set_is_always_right() {
    let events: Vec<LabeledEvent> = (0..30).map(|i| event(i, (i * 90) as f64, (i % 7) as f64, None, &format!("g{}", i % 4))).collect();
    let refs: Vec<&LabeledEvent> = events.iter().collect();
    let vocab = build_vocabulary(events.iter().map(|e| &e.outcome), UsageKind::App, 100).unwrap();
    let est = fit_estimator(&spec(), &refs, &vocab).unwrap();
    assert_eq!(accuracy(&est, &refs, vocab.len()), 1.0);
}

#[test]
fn priors_only_hits_the_modal_outcome() {
    let labels = ["a", "b", "a", "c", "a", "b"];
    let events: Vec<LabeledEvent> = labels.iter().enumerate().map(|(i, l)| event(i, 10.0 * i as f64, 0.0, None, l)).collect();
    let refs: Vec<&LabeledEvent> = events.iter().collect();
    let vocab = build_vocabulary(events.iter().map(|e| &e.outcome), UsageKind::App, 100).unwrap();
    let est = fit_estimator(&EstimatorSpec::new(vec![]), &refs, &vocab).unwrap();
    assert!((accuracy(&est, &refs, 1) - 0.5).abs() < 1e-12);
}

#[test]
fn estimator_json_round_trip() {
    let events: Vec<LabeledEvent> = (0..40).map(|i| event(i, (i * 70) as f64, (i % 5) as f64, Some("c1"), &format!("g{}", i % 3))).collect();
    let refs: Vec<&LabeledEvent> = events.iter().collect();
    let vocab = build_vocabulary(events.iter().map(|e| &e.outcome), UsageKind::App, 100).unwrap();
    let est = fit_estimator(&spec().with_supervised(true), &refs, &vocab).unwrap();
    let back = smartctx::estimate::CombinedEstimator::from_json(&est.to_json()).unwrap();
    assert_eq!(est, back);
}
