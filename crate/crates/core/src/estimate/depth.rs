use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::table::{laplace, priors_from};
use super::Distribution;
use crate::context::{RawValue, SourceId};
use crate::discretize::Binning;
use crate::error::{Error, Result};
use crate::trace::{ContextSnapshot, LabeledEvent, UsageKind, Vocabulary};

/// Minimum training samples for a prior-usage tuple to be trusted.
pub const DEFAULT_MIN_SAMPLES: u64 = 10;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TupleCounts {
    pub counts: Vec<u64>,
    pub total: u64,
}

/// Outcome counts keyed by the tuple of the `depth` most recent binned
/// prior labels of one usage kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthTable {
    pub kind: UsageKind,
    pub depth: usize,
    #[serde(with = "tuple_map")]
    entries: BTreeMap<Vec<usize>, TupleCounts>,
    class_counts: Vec<u64>,
    total: u64,
}

impl DepthTable {
    fn new(kind: UsageKind, depth: usize, k: usize) -> DepthTable {
        DepthTable {
            kind,
            depth,
            entries: BTreeMap::new(),
            class_counts: vec![0; k],
            total: 0,
        }
    }

    pub fn samples(&self, tuple: &[usize]) -> u64 {
        self.entries.get(tuple).map_or(0, |e| e.total)
    }

    pub fn tuple_counts(&self, tuple: &[usize]) -> Option<&TupleCounts> {
        self.entries.get(tuple)
    }

    pub fn tuples(&self) -> impl Iterator<Item = (&Vec<usize>, &TupleCounts)> {
        self.entries.iter()
    }

    pub fn priors(&self) -> Distribution {
        priors_from(&self.class_counts, self.total)
    }

    pub fn laplace_posterior(&self, tuple: &[usize]) -> Distribution {
        let k = self.class_counts.len();
        match self.entries.get(tuple) {
            Some(e) => laplace(&e.counts, e.total, &self.priors()),
            None => laplace(&vec![0; k], 0, &self.priors()),
        }
    }

    fn adjust(&mut self, key: &[usize], outcome: usize, delta: i64) {
        let apply = |c: &mut u64| *c = c.checked_add_signed(delta).expect("count underflow");
        apply(&mut self.class_counts[outcome]);
        apply(&mut self.total);
        if key.len() < self.depth {
            return;
        }
        let k = self.class_counts.len();
        let entry = self.entries.entry(key[..self.depth].to_vec()).or_insert_with(|| TupleCounts {
            counts: vec![0; k],
            total: 0,
        });
        apply(&mut entry.counts[outcome]);
        apply(&mut entry.total);
        if entry.total == 0 {
            self.entries.remove(&key[..self.depth]);
        }
    }
}

/// Prior-usage classifier that picks, per event, the deepest tuple with more
/// than `min_samples` training observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoDepth {
    pub kind: UsageKind,
    pub binning: Binning,
    pub min_samples: u64,
    pub tables: Vec<DepthTable>,
}

impl AutoDepth {
    pub fn source(&self) -> SourceId {
        SourceId::prior(self.kind)
    }

    pub fn max_depth(&self) -> usize {
        self.tables.len()
    }

    /// Binned prior labels, most recent first, up to the maximum depth.
    pub fn key(&self, snapshot: &ContextSnapshot) -> Vec<usize> {
        snapshot
            .prior(self.kind)
            .iter()
            .take(self.max_depth())
            .map(|l| self.binning.assign(RawValue::Label(l)))
            .collect()
    }

    pub fn priors(&self) -> Distribution {
        self.tables[0].priors()
    }

    pub fn posterior_for_key(&self, key: &[usize]) -> Distribution {
        if key.is_empty() {
            return self.priors();
        }
        let counts: Vec<u64> = (1..=key.len()).map(|d| self.tables[d - 1].samples(&key[..d])).collect();
        let d = select_depth(&counts, self.min_samples);
        self.tables[d - 1].laplace_posterior(&key[..d])
    }

    pub fn adjust(&mut self, key: &[usize], outcome: usize, delta: i64) {
        for t in &mut self.tables {
            t.adjust(key, outcome, delta);
        }
    }
}

/// Largest depth `d` (1-based) with `samples_by_depth[d-1] > min_samples`;
/// depth 1 when none qualifies.
pub fn select_depth(samples_by_depth: &[u64], min_samples: u64) -> usize {
    (1..=samples_by_depth.len())
        .rev()
        .find(|&d| samples_by_depth[d - 1] > min_samples)
        .unwrap_or(1)
}

/// Builds depth tables 1..=max_depth. An event contributes to depth `d` only
/// when it has at least `d` prior labels of `kind`; every event contributes
/// to the class priors.
pub fn build_depth_tables(
    train: &[&LabeledEvent],
    kind: UsageKind,
    max_depth: usize,
    prior_binning: &Binning,
    vocab: &Vocabulary,
    min_samples: u64,
) -> Result<AutoDepth> {
    if max_depth == 0 {
        return Err(Error::invalid("max depth must be at least 1"));
    }
    let mut model = AutoDepth {
        kind,
        binning: prior_binning.clone(),
        min_samples,
        tables: (1..=max_depth).map(|d| DepthTable::new(kind, d, vocab.len())).collect(),
    };
    for e in train {
        let outcome = vocab
            .id(&e.outcome.label)
            .ok_or_else(|| Error::OutOfVocabulary(e.outcome.label.clone()))?;
        let key = model.key(&e.context);
        model.adjust(&key, outcome, 1);
    }
    Ok(model)
}

pub fn auto_depth_posterior(model: &AutoDepth, snapshot: &ContextSnapshot) -> Distribution {
    model.posterior_for_key(&model.key(snapshot))
}

mod tuple_map {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::TupleCounts;

    pub fn serialize<S: Serializer>(map: &BTreeMap<Vec<usize>, TupleCounts>, s: S) -> Result<S::Ok, S::Error> {
        let pairs: Vec<(&Vec<usize>, &TupleCounts)> = map.iter().collect();
        pairs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<Vec<usize>, TupleCounts>, D::Error> {
        let pairs: Vec<(Vec<usize>, TupleCounts)> = Vec::deserialize(d)?;
        Ok(pairs.into_iter().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::categorical_topn_bins;
    use crate::trace::{build_vocabulary, rebuild_prior_chains, UsageEvent};

    fn sequence(labels: &[&str]) -> Vec<LabeledEvent> {
        let mut evs: Vec<LabeledEvent> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| LabeledEvent {
                context: ContextSnapshot {
                    time_of_cycle: 0.0,
                    accel_log_power: 0.0,
                    gps: None,
                    cell_id: None,
                    prior_usage: Default::default(),
                },
                outcome: UsageEvent {
                    user_id: "u".into(),
                    timestamp: i as u64,
                    kind: UsageKind::Phone,
                    label: l.to_string(),
                },
            })
            .collect();
        rebuild_prior_chains(&mut evs, 5);
        evs
    }

    fn model(evs: &[LabeledEvent], depth: usize, min: u64) -> (AutoDepth, Vocabulary) {
        let refs: Vec<&LabeledEvent> = evs.iter().collect();
        let vocab = build_vocabulary(evs.iter().map(|e| &e.outcome), UsageKind::Phone, 100).unwrap();
        let binning = categorical_topn_bins(
            SourceId::PriorPhone,
            evs.iter().flat_map(|e| e.context.prior(UsageKind::Phone).first().map(String::as_str)),
            10,
        )
        .unwrap();
        (build_depth_tables(&refs, UsageKind::Phone, depth, &binning, &vocab, min).unwrap(), vocab)
    }

    #[test]
    fn select_depth_example() {
        assert_eq!(select_depth(&[200, 15, 4], 10), 2);
        assert_eq!(select_depth(&[200, 15, 4], u64::MAX), 1);
        assert_eq!(select_depth(&[3, 2], 10), 1);
        assert_eq!(select_depth(&[30, 20, 11], 10), 3);
    }

    #[test]
    fn alternating_sequence_depth_two() {
        let labels: Vec<&str> = (0..40).map(|i| if i % 2 == 0 { "a" } else { "b" }).collect();
        let evs = sequence(&labels);
        let (m, vocab) = model(&evs, 2, 0);
        let a = m.binning.assign(RawValue::Label("a"));
        let b = m.binning.assign(RawValue::Label("b"));
        // previous call b, the one before a: next is a.
        let t = m.tables[1].tuple_counts(&[b, a]).unwrap();
        let ia = vocab.id("a").unwrap();
        assert_eq!(t.counts[ia], t.total);
        assert!(t.total > 0);
    }

    #[test]
    fn tuple_counts_sum_to_events_minus_depth() {
        let labels: Vec<&str> = "abcabbcaabcbbacbca".split("").filter(|s| !s.is_empty()).collect();
        let evs = sequence(&labels);
        let (m, _) = model(&evs, 3, 10);
        for t in &m.tables {
            let sum: u64 = t.tuples().map(|(_, c)| c.total).sum();
            assert_eq!(sum, (evs.len() - t.depth) as u64);
        }
    }

    #[test]
    fn unseen_tuple_gives_priors() {
        let evs = sequence(&["a", "b", "a", "b"]);
        let (m, _) = model(&evs, 2, 10);
        let p = m.posterior_for_key(&[99, 98]);
        let priors = m.priors();
        for (x, y) in p.0.iter().zip(&priors.0) {
            assert!((x - y).abs() < 1e-15);
        }
        assert_eq!(m.posterior_for_key(&[]), priors);
    }

    #[test]
    fn adjust_round_trip_is_identity() {
        let evs = sequence(&["a", "b", "c", "a", "b"]);
        let (mut m, vocab) = model(&evs, 3, 10);
        let before = m.clone();
        let key = m.key(&evs[4].context);
        let outcome = vocab.id("b").unwrap();
        m.adjust(&key, outcome, -1);
        assert_ne!(m, before);
        m.adjust(&key, outcome, 1);
        assert_eq!(m, before);
    }

    #[test]
    fn json_round_trip() {
        let evs = sequence(&["a", "b", "c", "a", "b"]);
        let (m, _) = model(&evs, 2, 10);
        let back: AutoDepth = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
