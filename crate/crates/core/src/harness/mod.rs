//! Evaluation protocols: LOOCV, two-fold and duration splits, bins sweeps,
//! per-user KDE and the sample-application baselines.
//!
//! Per-user work runs in parallel; results are always merged in user order.

mod apps;
mod kde;
mod protocols;

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{build_vocabulary, LabeledEvent, Trace, UsageKind, Vocabulary};

pub use apps::{mru_miss, recency_lists, recency_miss, sample_app_eval, static_top_miss, MissRates, SampleApp};
pub use kde::{per_user_kde, KdeCurve, DEFAULT_BANDWIDTH, GRID_STEP};
pub use protocols::{
    bins_sweep, duration_split_eval, loocv_accuracy, loocv_in_place, split_at_midpoint, two_fold_eval, BinsPoint,
    DurationPoint, TwoFold, DURATION_FRACTIONS, MIN_SAMPLES_PER_BIN,
};

/// Accuracy of one user under one protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserAccuracy {
    pub user: String,
    pub events: usize,
    pub accuracy: f64,
    pub dropped_fraction: f64,
}

/// Per-user results of one protocol run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: String,
    pub kind: UsageKind,
    pub r: usize,
    pub per_user: Vec<UserAccuracy>,
}

impl EvalReport {
    /// Unweighted mean over users.
    pub fn mean_accuracy(&self) -> f64 {
        if self.per_user.is_empty() {
            return 0.0;
        }
        self.per_user.iter().map(|u| u.accuracy).sum::<f64>() / self.per_user.len() as f64
    }

    pub fn mean_dropped(&self) -> f64 {
        if self.per_user.is_empty() {
            return 0.0;
        }
        self.per_user.iter().map(|u| u.dropped_fraction).sum::<f64>() / self.per_user.len() as f64
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.per_user.iter().map(|u| u.accuracy).collect()
    }
}

/// One user's events of `kind`, their vocabulary and the dropped fraction.
pub struct UserData {
    pub user: String,
    pub events: Vec<LabeledEvent>,
    pub vocab: Vocabulary,
}

impl UserData {
    /// In-vocabulary events and the share dropped.
    pub fn kept(&self) -> (Vec<&LabeledEvent>, f64) {
        self.vocab.retain(&self.events)
    }

    pub fn all(&self) -> Vec<&LabeledEvent> {
        self.events.iter().collect()
    }
}

/// Splits a trace into per-user data for `kind`; users without events of
/// that kind are left out.
pub fn user_data(trace: &Trace, kind: UsageKind, vocab_cap: usize) -> Result<Vec<UserData>> {
    let mut out = Vec::new();
    for u in &trace.users {
        let events = u.events_of(kind);
        if events.is_empty() {
            continue;
        }
        let vocab = build_vocabulary(events.iter().map(|e| &e.outcome), kind, vocab_cap)?;
        out.push(UserData {
            user: u.user_id.clone(),
            events,
            vocab,
        });
    }
    Ok(out)
}

/// Runs `f` on every user in parallel and returns the results in user order.
pub fn per_user<T: Send>(users: &[UserData], f: impl Fn(&UserData) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    users.par_iter().map(f).collect()
}

/// LOOCV accuracy of every user with at least two in-vocabulary events.
pub fn loocv_report(
    trace: &Trace,
    kind: UsageKind,
    spec: &crate::estimate::EstimatorSpec,
    vocab_cap: usize,
    r: usize,
) -> Result<EvalReport> {
    let users = user_data(trace, kind, vocab_cap)?;
    let rows = per_user(&users, |u| {
        let (kept, dropped) = u.kept();
        if kept.len() < 2 {
            return Ok(None);
        }
        let accuracy = loocv_accuracy(&kept, spec, &u.vocab, r)?;
        Ok(Some(UserAccuracy {
            user: u.user.clone(),
            events: kept.len(),
            accuracy,
            dropped_fraction: dropped,
        }))
    })?;
    Ok(EvalReport {
        protocol: "loocv".into(),
        kind,
        r,
        per_user: rows.into_iter().flatten().collect(),
    })
}

/// `<protocol>_<source>_<r>.csv`
pub fn output_name(protocol: &str, source: &str, r: usize) -> String {
    format!("{protocol}_{source}_{r}.csv")
}

/// Writes rows as CSV with a one-line header.
pub fn write_csv<T: Serialize>(rows: &[T], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn read_csv<T: DeserializeOwned>(input: impl Read) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

pub fn write_csv_file<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(rows, std::io::BufWriter::new(file))
}
