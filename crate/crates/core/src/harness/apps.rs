use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::protocols::loocv_in_place;
use crate::error::{Error, Result};
use crate::context::SourceId;
use crate::estimate::{fit_estimator, EstimatorSpec, SourceSpec};
use crate::trace::{build_vocabulary, LabeledEvent, UsageKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleApp {
    Bookmarks,
    PhoneFavorites,
    Redial,
    Quicklaunch,
    Preload,
}

impl SampleApp {
    pub const ALL: [SampleApp; 5] = [
        SampleApp::Bookmarks,
        SampleApp::PhoneFavorites,
        SampleApp::Redial,
        SampleApp::Quicklaunch,
        SampleApp::Preload,
    ];

    pub fn kind(self) -> UsageKind {
        match self {
            SampleApp::Bookmarks => UsageKind::Web,
            SampleApp::PhoneFavorites | SampleApp::Redial => UsageKind::Phone,
            SampleApp::Quicklaunch | SampleApp::Preload => UsageKind::App,
        }
    }

    /// List size shown to the user.
    pub fn default_r(self) -> usize {
        match self {
            SampleApp::Bookmarks | SampleApp::PhoneFavorites => 10,
            SampleApp::Redial => 1,
            SampleApp::Quicklaunch => 4,
            SampleApp::Preload => 3,
        }
    }

    /// Location context plus the app's own usage history, `bins` bins each.
    pub fn default_spec(self, bins: usize) -> EstimatorSpec {
        EstimatorSpec::new(
            [SourceId::Gps, SourceId::Cell, SourceId::prior(self.kind())]
                .iter()
                .map(|&s| SourceSpec::new(s, bins))
                .collect(),
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SampleApp::Bookmarks => "bookmarks",
            SampleApp::PhoneFavorites => "phone_favorites",
            SampleApp::Redial => "redial",
            SampleApp::Quicklaunch => "quicklaunch",
            SampleApp::Preload => "preload",
        }
    }
}

impl fmt::Display for SampleApp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SampleApp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SampleApp::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown sample app {s:?}")))
    }
}

/// Per-event miss rates of a list of `r` candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissRates {
    pub app: SampleApp,
    pub r: usize,
    pub events: usize,
    pub context_aware: f64,
    /// Ideal static list: the `r` most frequent labels of the whole trace.
    pub static_top: f64,
    /// The `r` most recently used distinct labels.
    pub recency: f64,
    /// Move-to-front cache of size `r`.
    pub mru: f64,
}

/// Miss rate of the `r` most frequent labels of `events`, counted on the same
/// events.
pub fn static_top_miss(events: &[&LabeledEvent], r: usize) -> f64 {
    if events.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for e in events {
        *counts.entry(e.outcome.label.as_str()).or_default() += 1;
    }
    let mut c: Vec<(&str, u64)> = counts.into_iter().collect();
    c.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let covered: u64 = c.iter().take(r).map(|x| x.1).sum();
    1.0 - covered as f64 / events.len() as f64
}

/// The distinct-recency list in force before each event: up to `r` distinct
/// labels, most recent first. Duplicates collapse before truncation.
pub fn recency_lists(events: &[&LabeledEvent], r: usize) -> Vec<Vec<String>> {
    let mut list: Vec<String> = Vec::new();
    let mut out = Vec::with_capacity(events.len());
    for e in events {
        out.push(list.clone());
        let label = &e.outcome.label;
        list.retain(|l| l != label);
        list.insert(0, label.clone());
        list.truncate(r);
    }
    out
}

pub fn recency_miss(events: &[&LabeledEvent], r: usize) -> f64 {
    if events.is_empty() {
        return 0.0;
    }
    let misses = recency_lists(events, r)
        .iter()
        .zip(events)
        .filter(|(list, e)| !list.contains(&e.outcome.label))
        .count();
    misses as f64 / events.len() as f64
}

/// An `r`-slot cache: a hit when the label is cached; the label then moves to
/// the front and anything past `r` is evicted.
pub fn mru_miss(events: &[&LabeledEvent], r: usize) -> f64 {
    if events.is_empty() {
        return 0.0;
    }
    let mut cache: std::collections::VecDeque<&str> = std::collections::VecDeque::with_capacity(r + 1);
    let mut misses = 0usize;
    for e in events {
        let label = e.outcome.label.as_str();
        match cache.iter().position(|&c| c == label) {
            Some(i) => {
                cache.remove(i);
            }
            None => misses += 1,
        }
        cache.push_front(label);
        cache.truncate(r);
    }
    misses as f64 / events.len() as f64
}

/// Miss rates of one user's time-ordered events of the app's kind. The
/// context-aware list comes from LOOCV; events outside the vocabulary count
/// as misses for it.
pub fn sample_app_eval(
    events: &[&LabeledEvent],
    app: SampleApp,
    r: usize,
    spec: &EstimatorSpec,
    vocab_cap: usize,
) -> Result<MissRates> {
    let events: Vec<&LabeledEvent> = events.iter().copied().filter(|e| e.outcome.kind == app.kind()).collect();
    if events.len() < 2 {
        return Err(Error::invalid(format!("{app} needs at least two {} events", app.kind())));
    }
    let vocab = build_vocabulary(events.iter().map(|e| &e.outcome), app.kind(), vocab_cap)?;
    let kept: Vec<&LabeledEvent> = events.iter().copied().filter(|e| vocab.id(&e.outcome.label).is_some()).collect();
    let context_aware = if kept.len() < 2 {
        1.0
    } else {
        let mut est = fit_estimator(spec, &kept, &vocab)?;
        let acc = loocv_in_place(&mut est, &kept, r);
        1.0 - acc * kept.len() as f64 / events.len() as f64
    };
    Ok(MissRates {
        app,
        r,
        events: events.len(),
        context_aware,
        static_top: static_top_miss(&events, r),
        recency: recency_miss(&events, r),
        mru: mru_miss(&events, r),
    })
}
