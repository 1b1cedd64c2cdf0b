use proptest::prelude::*;

use smartctx::estimate::{accuracy, fit_estimator, map_estimate, EstimatorSpec};
use smartctx::harness::{split_at_midpoint, user_data};
use smartctx::synth::{generate, zipf_pmf, GeneratorModel, IndependentDesign, SynthConfig};
use smartctx::trace::{Trace, UsageKind};

fn config(seed: u64) -> SynthConfig {
    SynthConfig {
        seed,
        n_users: 4,
        scale: 0.05,
        ..SynthConfig::default()
    }
}

proptest! {
    #[test]
    fn zipf_is_a_power_law(k in 1usize..200, s in 0.5..3.0f64) {
        let p = zipf_pmf(k, s);
        prop_assert_eq!(p.len(), k);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for r in 1..k {
            let ratio = p[0] / p[r];
            prop_assert!((ratio - ((r + 1) as f64).powf(s)).abs() < 1e-9 * ratio);
        }
    }
}

#[test]
fn generation_is_deterministic_per_seed() {
    let (a, ma) = generate(&config(5)).unwrap();
    let (b, mb) = generate(&config(5)).unwrap();
    let (c, _) = generate(&config(6)).unwrap();
    assert_eq!(a.to_jsonl(), b.to_jsonl());
    assert_eq!(ma, mb);
    assert_ne!(a.to_jsonl(), c.to_jsonl());
    assert_eq!(GeneratorModel::from_json(&ma.to_json()).unwrap(), ma);
}

#[test]
fn event_counts_follow_the_config() {
    let cfg = config(7);
    let (trace, _) = generate(&cfg).unwrap();
    assert_eq!(trace.users.len(), 4);
    for kind in UsageKind::ALL {
        for u in &trace.users {
            assert_eq!(u.events_of(kind).len(), cfg.events_of(kind));
        }
    }
    let doubled = SynthConfig { scale: 0.1, ..cfg.clone() };
    assert_eq!(doubled.events_of(UsageKind::App), 2 * cfg.events_of(UsageKind::App));
}

#[test]
fn trace_text_round_trips() {
    let (trace, _) = generate(&config(8)).unwrap();
    let text = trace.to_jsonl();
    let back = smartctx::trace::parse_trace_from(text.as_bytes()).unwrap();
    assert_eq!(back.to_jsonl(), text);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    trace.write(&path).unwrap();
    assert_eq!(Trace::read(&path).unwrap().to_jsonl(), text);
}

#[test]
fn invalid_configs_are_rejected() {
    for bad in [
        SynthConfig { lambda: 1.5, ..config(1) },
        SynthConfig { n_users: 0, ..config(1) },
        SynthConfig { scale: 0.0, ..config(1) },
        SynthConfig { time_segments: 2, ..config(1) },
        SynthConfig { epoch_weekday: 7, ..config(1) },
    ] {
        assert!(generate(&bad).is_err());
    }
}

#[test]
fn oracle_posterior_is_a_distribution_and_beats_a_fitted_estimator() {
    let (trace, model) = generate(&SynthConfig { scale: 0.1, ..config(9) }).unwrap();
    let (mut oracle_hits, mut fitted, mut n) = (0usize, 0.0, 0usize);
    for u in user_data(&trace, UsageKind::Phone, 1000).unwrap() {
        let user = model.user(&u.user).unwrap();
        let labels = &model.labels[UsageKind::Phone.index()];
        let all = u.all();
        let (train, test) = split_at_midpoint(&all).unwrap();
        for e in &test {
            let post = model.oracle_posterior(user, UsageKind::Phone, &e.context).unwrap();
            assert_eq!(post.len(), labels.len());
            assert!((post.0.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let top = map_estimate(&post, 3);
            let truth = labels.iter().position(|l| *l == e.outcome.label).unwrap();
            oracle_hits += usize::from(top.contains(truth));
        }
        let vocab = smartctx::trace::build_vocabulary(train.iter().map(|e| &e.outcome), UsageKind::Phone, 1000).unwrap();
        let est = fit_estimator(&EstimatorSpec::all_sources(6), &train, &vocab).unwrap();
        let in_vocab = test.iter().filter(|e| vocab.id(&e.outcome.label).is_some()).count();
        fitted += accuracy(&est, &test, 3) * in_vocab as f64;
        n += test.len();
    }
    let oracle = oracle_hits as f64 / n as f64;
    let fitted = fitted / n as f64;
    assert!(oracle + 0.03 >= fitted, "oracle {oracle}, fitted {fitted}");
}

#[test]
fn independent_design_posterior_matches_bayes_rule() {
    let d = IndependentDesign::random(4, 3, 1.0, 2).unwrap();
    let events = d.sample(20_000, 3);
    assert_eq!(events.len(), 20_000);
    // Empirical conditional frequency of each tuple against the exact posterior.
    let binnings = d.binnings();
    for t0 in 0..3 {
        for t1 in 0..3 {
            let mut counts = [0usize; 4];
            for e in &events {
                let bins: Vec<usize> = binnings.iter().map(|b| b.assign(b.source.read(&e.context))).collect();
                if bins == [t0, t1] {
                    let g: usize = e.outcome.label.trim_start_matches(|c: char| !c.is_ascii_digit()).parse().unwrap();
                    counts[g] += 1;
                }
            }
            let n: usize = counts.iter().sum();
            if n < 500 {
                continue;
            }
            let exact = d.exact_posterior(&[t0, t1]);
            for (c, e) in counts.iter().zip(&exact.0) {
                assert!((*c as f64 / n as f64 - e).abs() < 0.07, "tuple ({t0}, {t1})");
            }
        }
    }
}
