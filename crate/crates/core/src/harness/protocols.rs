use serde::{Deserialize, Serialize};

use crate::context::SourceId;
use crate::discretize::BinningKind;
use crate::error::{Error, Result};
use crate::estimate::{accuracy, fit_estimator, map_estimate, CombinedEstimator, EstimatorSpec};
use crate::trace::{build_vocabulary, LabeledEvent, Vocabulary};

/// A bin count leaving fewer training samples per bin than this is flagged.
pub const MIN_SAMPLES_PER_BIN: f64 = 10.0;

/// Trace fractions of the duration protocol: one, three, six and twelve months.
pub const DURATION_FRACTIONS: [f64; 4] = [1.0 / 12.0, 3.0 / 12.0, 6.0 / 12.0, 1.0];

/// Leave-one-out hit rate of `estimator` over `events`, which must be exactly
/// the events it was trained on. Each event is removed from the counts,
/// estimated and restored, so the estimator ends bit-identical.
pub fn loocv_in_place(estimator: &mut CombinedEstimator, events: &[&LabeledEvent], r: usize) -> f64 {
    let mut hits = 0usize;
    let mut n = 0usize;
    for e in events {
        let Some(id) = estimator.vocab.id(&e.outcome.label) else {
            continue;
        };
        n += 1;
        let keys = estimator.keys(&e.context);
        estimator.adjust(&keys, id, -1);
        if map_estimate(&estimator.posterior_from_keys(&keys, None), r).contains(id) {
            hits += 1;
        }
        estimator.adjust(&keys, id, 1);
    }
    if n == 0 {
        0.0
    } else {
        hits as f64 / n as f64
    }
}

/// LOOCV accuracy with binnings fitted once on all of `events`.
/// Out-of-vocabulary events are ignored.
pub fn loocv_accuracy(events: &[&LabeledEvent], spec: &EstimatorSpec, vocab: &Vocabulary, r: usize) -> Result<f64> {
    if events.len() < 2 {
        return Err(Error::invalid("LOOCV needs at least two events"));
    }
    let mut est = fit_estimator(spec, events, vocab)?;
    Ok(loocv_in_place(&mut est, events, r))
}

/// Splits time-sorted events at the midpoint between the first and last
/// timestamps. Events at the midpoint go to the first fold.
pub fn split_at_midpoint<'a>(events: &[&'a LabeledEvent]) -> Result<(Vec<&'a LabeledEvent>, Vec<&'a LabeledEvent>)> {
    let (Some(first), Some(last)) = (events.first(), events.last()) else {
        return Err(Error::EmptyFold(0));
    };
    let sum = u128::from(first.outcome.timestamp) + u128::from(last.outcome.timestamp);
    let (a, b): (Vec<&LabeledEvent>, Vec<&LabeledEvent>) = events
        .iter()
        .copied()
        .partition(|e| 2 * u128::from(e.outcome.timestamp) <= sum);
    if a.is_empty() {
        return Err(Error::EmptyFold(0));
    }
    if b.is_empty() {
        return Err(Error::EmptyFold(1));
    }
    Ok((a, b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoFold {
    /// Train on the first half, test on the second.
    pub forward: f64,
    pub backward: f64,
    pub mean: f64,
}

fn train_test(train: &[&LabeledEvent], test: &[&LabeledEvent], spec: &EstimatorSpec, vocab_cap: usize, r: usize) -> Result<f64> {
    let kind = train[0].outcome.kind;
    let vocab = build_vocabulary(train.iter().map(|e| &e.outcome), kind, vocab_cap)?;
    let est = fit_estimator(spec, train, &vocab)?;
    Ok(accuracy(&est, test, r))
}

/// Two-fold cross-validation over a temporal split. All fitting, including
/// supervised binning and the vocabulary, uses the training fold only; test
/// events outside the training vocabulary are skipped.
pub fn two_fold_eval(
    events: &[&LabeledEvent],
    spec: &EstimatorSpec,
    supervised: bool,
    vocab_cap: usize,
    r: usize,
) -> Result<TwoFold> {
    let (a, b) = split_at_midpoint(events)?;
    let spec = spec.clone().with_supervised(supervised);
    let forward = train_test(&a, &b, &spec, vocab_cap, r)?;
    let backward = train_test(&b, &a, &spec, vocab_cap, r)?;
    Ok(TwoFold {
        forward,
        backward,
        mean: 0.5 * (forward + backward),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationPoint {
    pub fraction: f64,
    /// Mean LOOCV accuracy over the windows used; `None` when all were skipped.
    pub accuracy: Option<f64>,
    pub windows: usize,
    pub skipped: usize,
}

/// Splits events into `round(1 / fraction)` contiguous windows of equal event
/// count, runs LOOCV inside each (vocabulary and binnings from the window)
/// and averages the windows. Windows with fewer than two events, or that
/// cannot be fitted, are skipped.
pub fn duration_split_eval(
    events: &[&LabeledEvent],
    fractions: &[f64],
    spec: &EstimatorSpec,
    vocab_cap: usize,
    r: usize,
) -> Result<Vec<DurationPoint>> {
    let mut out = Vec::new();
    for &f in fractions {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::invalid(format!("fraction {f} outside (0, 1]")));
        }
        let w = (1.0 / f).round().max(1.0) as usize;
        let m = events.len();
        let mut accs = Vec::new();
        let mut skipped = 0;
        for i in 0..w {
            let window = &events[i * m / w..(i + 1) * m / w];
            if window.len() < 2 {
                log::warn!("duration split {f:.3}: window {i} has {} events, skipped", window.len());
                skipped += 1;
                continue;
            }
            let kind = window[0].outcome.kind;
            let run = build_vocabulary(window.iter().map(|e| &e.outcome), kind, vocab_cap).and_then(|vocab| {
                let (kept, _) = retain(window, &vocab);
                if kept.len() < 2 {
                    return Err(Error::invalid("window has fewer than two in-vocabulary events"));
                }
                loocv_accuracy(&kept, spec, &vocab, r)
            });
            match run {
                Ok(a) => accs.push(a),
                Err(e) => {
                    log::warn!("duration split {f:.3}: window {i} skipped: {e}");
                    skipped += 1;
                }
            }
        }
        out.push(DurationPoint {
            fraction: f,
            accuracy: (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64),
            windows: w,
            skipped,
        });
    }
    Ok(out)
}

fn retain<'a>(events: &[&'a LabeledEvent], vocab: &Vocabulary) -> (Vec<&'a LabeledEvent>, usize) {
    let kept: Vec<&LabeledEvent> = events.iter().copied().filter(|e| vocab.id(&e.outcome.label).is_some()).collect();
    let dropped = events.len() - kept.len();
    (kept, dropped)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinsPoint {
    pub bins: usize,
    pub accuracy: f64,
    pub samples_per_bin: f64,
    /// Fewer than ten samples per bin on average.
    pub flagged: bool,
}

/// LOOCV accuracy of a single-source estimator for each bin count. Bin counts
/// the data cannot support (e.g. more bins than distinct values) are skipped.
pub fn bins_sweep(
    events: &[&LabeledEvent],
    vocab: &Vocabulary,
    source: SourceId,
    discretizer: BinningKind,
    bin_counts: &[usize],
    r: usize,
    seed: u64,
) -> Result<Vec<BinsPoint>> {
    let (kept, _) = retain(events, vocab);
    if kept.len() < 2 {
        return Err(Error::invalid("bins sweep needs at least two in-vocabulary events"));
    }
    let mut out = Vec::new();
    for &n in bin_counts {
        let spec = EstimatorSpec::single(source, discretizer, n).with_seed(seed);
        match loocv_accuracy(&kept, &spec, vocab, r) {
            Ok(accuracy) => {
                let samples_per_bin = kept.len() as f64 / n as f64;
                out.push(BinsPoint {
                    bins: n,
                    accuracy,
                    samples_per_bin,
                    flagged: samples_per_bin < MIN_SAMPLES_PER_BIN,
                });
            }
            Err(e @ (Error::TooFewDistinct { .. } | Error::DegenerateRange(..))) => {
                log::warn!("bins sweep {source}: {n} bins skipped: {e}");
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
