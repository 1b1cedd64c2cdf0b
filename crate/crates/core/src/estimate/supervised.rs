use super::table::build_table;
use crate::context::SourceShape;
use crate::discretize::{self, kmeans, Binning};
use crate::error::{Error, Result};
use crate::trace::{LabeledEvent, Vocabulary};

/// Number of fine bins fitted before supervised grouping into `n` bins:
/// `10 n` for continuous sources, at most the available categories (distinct
/// labels plus "other") for categorical ones.
pub fn fine_bin_count(shape: SourceShape, n: usize, distinct: usize) -> usize {
    match shape {
        SourceShape::Categorical => (distinct + 1).min(10 * n),
        _ => 10 * n,
    }
}

/// Groups the bins of `fine` into at most `n` bins by k-means over their
/// Laplace-corrected usage vectors, using `train` only.
///
/// Groups are numbered by first appearance over fine bins, so the result is
/// independent of the k-means cluster labelling. When fewer than `n` distinct
/// usage vectors exist, fewer groups are produced.
pub fn supervised_bins(
    fine: &Binning,
    train: &[&LabeledEvent],
    vocab: &Vocabulary,
    n: usize,
    seed: u64,
) -> Result<Binning> {
    let f = fine.effective_bins();
    if n == 0 {
        return Err(Error::invalid("bin count must be at least 1"));
    }
    if f < n {
        return Err(Error::TooFewDistinct {
            requested: n,
            distinct: f,
        });
    }
    let table = build_table(train, fine, vocab)?;
    let vectors: Vec<Vec<f64>> = (0..f).map(|b| table.laplace_posterior(b).0).collect();
    let clusters = n.min(kmeans::distinct_count(&vectors));
    let fit = kmeans::lloyd(&vectors, clusters, seed)?;
    let mut relabel = vec![usize::MAX; clusters];
    let mut next = 0;
    let groups: Vec<usize> = fit
        .assignments
        .iter()
        .map(|&c| {
            if relabel[c] == usize::MAX {
                relabel[c] = next;
                next += 1;
            }
            relabel[c]
        })
        .collect();
    Ok(discretize::supervised(fine.source, fine.clone(), groups, next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::{RawValue, SourceId};
    use crate::discretize::equal_width_bins;
    use crate::trace::{build_vocabulary, ContextSnapshot, UsageEvent, UsageKind};

    fn event(t: f64, label: &str) -> LabeledEvent {
        LabeledEvent {
            context: ContextSnapshot {
                time_of_cycle: t,
                accel_log_power: 0.0,
                gps: None,
                cell_id: None,
                prior_usage: Default::default(),
            },
            outcome: UsageEvent {
                user_id: "u".into(),
                timestamp: 0,
                kind: UsageKind::App,
                label: label.into(),
            },
        }
    }

    #[test]
    fn identical_vectors_merge() {
        // Four fine bins over [0, 4): bins 0 and 1 both say "a", 2 and 3 say "b".
        let evs: Vec<LabeledEvent> = (0..40)
            .map(|i| {
                let t = (i % 4) as f64 + 0.5;
                event(t, if t < 2.0 { "a" } else { "b" })
            })
            .collect();
        let refs: Vec<&LabeledEvent> = evs.iter().collect();
        let vocab = build_vocabulary(evs.iter().map(|e| &e.outcome), UsageKind::App, 100).unwrap();
        let fine = equal_width_bins(SourceId::Time, &[0.0, 4.0], 4).unwrap();
        let b = supervised_bins(&fine, &refs, &vocab, 2, 1).unwrap();
        let g: Vec<usize> = [0.5, 1.5, 2.5, 3.5]
            .iter()
            .map(|&t| b.assign(RawValue::Scalar(t)))
            .collect();
        assert_eq!(g, [0, 0, 1, 1]);
        // Asking for more groups than distinct vectors still yields two.
        let b4 = supervised_bins(&fine, &refs, &vocab, 4, 1).unwrap();
        assert_eq!(b4.n_bins, 2);
    }

    #[test]
    fn one_hot_vectors_identity() {
        let labels = ["a", "b", "c"];
        let evs: Vec<LabeledEvent> = (0..30).map(|i| event((i % 3) as f64 + 0.5, labels[i % 3])).collect();
        let refs: Vec<&LabeledEvent> = evs.iter().collect();
        let vocab = build_vocabulary(evs.iter().map(|e| &e.outcome), UsageKind::App, 100).unwrap();
        let fine = equal_width_bins(SourceId::Time, &[0.0, 3.0], 3).unwrap();
        let b = supervised_bins(&fine, &refs, &vocab, 3, 9).unwrap();
        assert_eq!(b.n_bins, 3);
        let g: Vec<usize> = [0.5, 1.5, 2.5].iter().map(|&t| b.assign(RawValue::Scalar(t))).collect();
        assert_eq!(g, [0, 1, 2]);
    }

    #[test]
    fn fewer_fine_bins_than_target_is_an_error() {
        let evs = [event(0.5, "a")];
        let refs: Vec<&LabeledEvent> = evs.iter().collect();
        let vocab = build_vocabulary(evs.iter().map(|e| &e.outcome), UsageKind::App, 100).unwrap();
        let fine = equal_width_bins(SourceId::Time, &[0.0, 2.0], 2).unwrap();
        assert!(supervised_bins(&fine, &refs, &vocab, 3, 0).is_err());
    }

    #[test]
    fn fine_counts() {
        assert_eq!(fine_bin_count(SourceShape::Scalar, 4, 0), 40);
        assert_eq!(fine_bin_count(SourceShape::Categorical, 4, 7), 8);
        assert_eq!(fine_bin_count(SourceShape::Categorical, 2, 70), 20);
    }
}
