use proptest::prelude::*;

use smartctx::discretize::{
    categorical_topn_bins, equal_frequency_bins, equal_width_bins, kmeans, kmeans_bins, BinParams,
};
use smartctx::estimate::{fine_bin_count, supervised_bins};
use smartctx::trace::{build_vocabulary, ContextSnapshot, LabeledEvent, UsageEvent, UsageKind};
use smartctx::{RawValue, SourceId, SourceShape};

fn wcss(points: &[Vec<f64>], assignments: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..k {
        let members: Vec<&Vec<f64>> = points.iter().zip(assignments).filter(|(_, &a)| a == c).map(|(p, _)| p).collect();
        if members.is_empty() {
            continue;
        }
        let dim = members[0].len();
        let mean: Vec<f64> = (0..dim).map(|d| members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64).collect();
        total += members
            .iter()
            .map(|p| p.iter().zip(&mean).map(|(x, m)| (x - m).powi(2)).sum::<f64>())
            .sum::<f64>();
    }
    total
}

/// Lowest within-cluster sum of squares over every assignment to `k` clusters.
fn exhaustive_wcss(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let mut best = f64::INFINITY;
    let mut a = vec![0usize; n];
    loop {
        best = best.min(wcss(points, &a, k));
        let mut i = 0;
        while i < n {
            a[i] += 1;
            if a[i] < k {
                break;
            }
            a[i] = 0;
            i += 1;
        }
        if i == n {
            return best;
        }
    }
}

proptest! {
    #[test]
    fn equal_frequency_populations_differ_by_at_most_one(
        values in prop::collection::hash_set(-1_000_000i64..1_000_000, 2..300),
        n in 1usize..25,
    ) {
        let values: Vec<f64> = values.into_iter().map(|v| v as f64 / 100.0).collect();
        prop_assume!(n <= values.len());
        let b = equal_frequency_bins(SourceId::Movement, &values, n).unwrap();
        prop_assert_eq!(b.n_bins, n);
        let mut pops = vec![0usize; n];
        for &v in &values {
            pops[b.assign(RawValue::Scalar(v))] += 1;
        }
        prop_assert!(pops.iter().max().unwrap() - pops.iter().min().unwrap() <= 1);
    }

    #[test]
    fn equal_width_matches_arithmetic(lo in -50.0..0.0f64, width in 1.0..100.0f64, n in 1usize..20, x in 0.0..1.0f64) {
        let hi = lo + width;
        let b = equal_width_bins(SourceId::Movement, &[lo, hi], n).unwrap();
        let v = lo + x * width;
        let expect = (((v - lo) / width) * n as f64).floor() as usize;
        let got = b.assign(RawValue::Scalar(v));
        // Values within rounding of a boundary may land on either side.
        prop_assert!(got == expect.min(n - 1) || got + 1 == expect || got == expect + 1);
        prop_assert_eq!(b.assign(RawValue::Scalar(hi + 10.0)), n - 1);
        prop_assert_eq!(b.assign(RawValue::Scalar(lo - 10.0)), 0);
    }

    #[test]
    fn topn_keeps_the_most_frequent(counts in prop::collection::vec(1usize..20, 1..10), n in 1usize..8) {
        let mut labels = Vec::new();
        for (i, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                labels.push(format!("l{i}"));
            }
        }
        let b = categorical_topn_bins(SourceId::Cell, labels.iter().map(String::as_str), n).unwrap();
        let BinParams::Categories { labels: kept } = &b.params else { panic!("not categorical") };
        prop_assert_eq!(kept.len(), (n - 1).min(counts.len()));
        let min_kept = kept.iter().map(|l| counts[l[1..].parse::<usize>().unwrap()]).min().unwrap_or(usize::MAX);
        for (i, &c) in counts.iter().enumerate() {
            let l = format!("l{i}");
            if !kept.contains(&l) {
                prop_assert!(c <= min_kept);
                prop_assert_eq!(b.assign(RawValue::Label(&l)), b.other_bin());
            }
        }
        prop_assert_eq!(b.assign(RawValue::Missing), b.other_bin());
    }

    #[test]
    fn lloyd_ends_at_a_local_optimum(
        points in prop::collection::vec((0.0..10.0f64, 0.0..10.0f64), 3..40),
        k in 1usize..4,
    ) {
        let points: Vec<Vec<f64>> = points.into_iter().map(|(a, b)| vec![a, b]).collect();
        let fit = kmeans::lloyd(&points, k, 5).unwrap();
        let d2 = |p: &[f64], c: &[f64]| (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
        for (p, &a) in points.iter().zip(&fit.assignments) {
            let own = d2(p, &fit.centroids[a]);
            prop_assert!(fit.centroids.iter().all(|c| own <= d2(p, c) + 1e-9));
        }
        for (c, centroid) in fit.centroids.iter().enumerate() {
            let members: Vec<&Vec<f64>> = points.iter().zip(&fit.assignments).filter(|(_, &a)| a == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            for d in 0..2 {
                let m = members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64;
                prop_assert!((m - centroid[d]).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn well_separated_clouds_split_cleanly() {
    let mut pts = Vec::new();
    for i in 0..6 {
        pts.push((47.0 + 0.001 * i as f64, -122.0));
        pts.push((48.0 + 0.001 * i as f64, -121.0));
    }
    let b = kmeans_bins(SourceId::Gps, &pts, 2, 1).unwrap();
    let first = b.assign(RawValue::Point(47.0, -122.0));
    let second = b.assign(RawValue::Point(48.0, -121.0));
    assert_ne!(first, second);
    for (i, p) in pts.iter().enumerate() {
        let want = if i % 2 == 0 { first } else { second };
        assert_eq!(b.assign(RawValue::Point(p.0, p.1)), want);
    }
    let projected: Vec<Vec<f64>> = pts.iter().map(|p| vec![p.0, p.1]).collect();
    let BinParams::Centroids { assignments, .. } = &b.params else { panic!() };
    assert!((wcss(&projected, assignments, 2) - exhaustive_wcss(&projected, 2)).abs() < 1e-9);
}

#[test]
fn fine_bin_counts() {
    assert_eq!(fine_bin_count(SourceShape::Scalar, 3, 5), 30);
    assert_eq!(fine_bin_count(SourceShape::Categorical, 3, 5), 6);
    assert_eq!(fine_bin_count(SourceShape::Categorical, 3, 500), 30);
}

fn labeled(time: f64, label: &str) -> LabeledEvent {
    LabeledEvent {
        context: ContextSnapshot {
            time_of_cycle: time,
            accel_log_power: 0.0,
            gps: None,
            cell_id: None,
            prior_usage: Default::default(),
        },
        outcome: UsageEvent {
            user_id: "u".into(),
            timestamp: time as u64,
            kind: UsageKind::App,
            label: label.into(),
        },
    }
}

#[test]
fn supervised_groups_bins_with_matching_usage() {
    // Outcome alternates every tenth of the cycle.
    let events: Vec<LabeledEvent> = (0..400)
        .map(|i| {
            let t = i as f64 * 7.19;
            labeled(t, if ((t / 288.0) as usize).is_multiple_of(2) { "a" } else { "b" })
        })
        .collect();
    let refs: Vec<&LabeledEvent> = events.iter().collect();
    let vocab = build_vocabulary(events.iter().map(|e| &e.outcome), UsageKind::App, 100).unwrap();
    let fine = equal_width_bins(SourceId::Time, &[0.0, 2880.0], 20).unwrap();
    let sup = supervised_bins(&fine, &refs, &vocab, 2, 3).unwrap();
    assert_eq!(sup.n_bins, 2);
    let a = sup.assign(RawValue::Scalar(100.0));
    let b = sup.assign(RawValue::Scalar(400.0));
    assert_ne!(a, b);
    for e in &events {
        let want = if e.outcome.label == "a" { a } else { b };
        assert_eq!(sup.assign(RawValue::Scalar(e.context.time_of_cycle)), want);
    }
    assert_eq!(sup, supervised_bins(&fine, &refs, &vocab, 2, 3).unwrap());
}
