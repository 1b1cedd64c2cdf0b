use serde::{Deserialize, Serialize};

use super::depth::AutoDepth;
use super::table::{priors_from, PosteriorTable};
use super::{combine, map_estimate, Distribution, ResponseSet, Rule};
use crate::context::SourceId;
use crate::error::{Error, Result};
use crate::trace::{ContextSnapshot, LabeledEvent, Vocabulary};

/// Where a snapshot falls in one classifier: a single bin for count tables,
/// the binned prior-label tuple for auto-depth.
pub type Key = Vec<usize>;

/// One per-source posterior estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Classifier {
    Table(PosteriorTable),
    AutoDepth(AutoDepth),
}

impl Classifier {
    pub fn source(&self) -> SourceId {
        match self {
            Classifier::Table(t) => t.source,
            Classifier::AutoDepth(a) => a.source(),
        }
    }

    pub fn key(&self, snapshot: &ContextSnapshot) -> Key {
        match self {
            Classifier::Table(t) => vec![t.binning.assign(t.binning.source.read(snapshot))],
            Classifier::AutoDepth(a) => a.key(snapshot),
        }
    }

    pub fn posterior(&self, key: &[usize], laplace: bool) -> Distribution {
        match self {
            Classifier::Table(t) if laplace => t.laplace_posterior(key[0]),
            Classifier::Table(t) => t.raw_posterior(key[0]),
            Classifier::AutoDepth(a) => a.posterior_for_key(key),
        }
    }

    pub fn adjust(&mut self, key: &[usize], outcome: usize, delta: i64) {
        match self {
            Classifier::Table(t) => t.adjust(key[0], outcome, delta),
            Classifier::AutoDepth(a) => a.adjust(key, outcome, delta),
        }
    }
}

/// Per-source classifiers sharing one vocabulary, merged by a combination rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedEstimator {
    pub vocab: Vocabulary,
    pub rule: Rule,
    /// Feed Laplace-corrected (rather than raw frequency) posteriors to the
    /// max and mean rules. Bayes always uses Laplace correction.
    pub laplace_inputs: bool,
    pub classifiers: Vec<Classifier>,
    class_counts: Vec<u64>,
    total: u64,
}

impl CombinedEstimator {
    /// `class_counts` are the outcome counts of the training events the
    /// classifiers were built from.
    pub fn new(
        vocab: Vocabulary,
        rule: Rule,
        classifiers: Vec<Classifier>,
        class_counts: Vec<u64>,
    ) -> Result<CombinedEstimator> {
        let k = vocab.len();
        if class_counts.len() != k {
            return Err(Error::invalid("class counts do not match the vocabulary"));
        }
        for c in &classifiers {
            let ck = match c {
                Classifier::Table(t) => t.k(),
                Classifier::AutoDepth(a) => a.priors().len(),
            };
            if ck != k {
                return Err(Error::invalid(format!("classifier for {} has {ck} outcomes, expected {k}", c.source())));
            }
        }
        let total = class_counts.iter().sum();
        Ok(CombinedEstimator {
            vocab,
            rule,
            laplace_inputs: true,
            classifiers,
            class_counts,
            total,
        })
    }

    /// Builds an estimator with the given classifiers' class counts taken
    /// from `train`.
    pub fn from_training(
        vocab: Vocabulary,
        rule: Rule,
        classifiers: Vec<Classifier>,
        train: &[&LabeledEvent],
    ) -> Result<CombinedEstimator> {
        let mut counts = vec![0u64; vocab.len()];
        for e in train {
            let id = vocab
                .id(&e.outcome.label)
                .ok_or_else(|| Error::OutOfVocabulary(e.outcome.label.clone()))?;
            counts[id] += 1;
        }
        CombinedEstimator::new(vocab, rule, classifiers, counts)
    }

    pub fn with_laplace_inputs(mut self, on: bool) -> Result<CombinedEstimator> {
        if !on && self.rule == Rule::Bayes {
            return Err(Error::invalid("the bayes rule needs Laplace-corrected inputs"));
        }
        self.laplace_inputs = on;
        Ok(self)
    }

    pub fn k(&self) -> usize {
        self.vocab.len()
    }

    pub fn priors(&self) -> Distribution {
        priors_from(&self.class_counts, self.total)
    }

    pub fn sources(&self) -> Vec<SourceId> {
        self.classifiers.iter().map(Classifier::source).collect()
    }

    pub fn has_source(&self, source: SourceId) -> bool {
        self.classifiers.iter().any(|c| c.source() == source)
    }

    pub fn keys(&self, snapshot: &ContextSnapshot) -> Vec<Key> {
        self.classifiers.iter().map(|c| c.key(snapshot)).collect()
    }

    /// Combined posterior over the classifiers selected by `active`
    /// (all when `None`), in classifier order.
    pub fn posterior_from_keys(&self, keys: &[Key], active: Option<&dyn Fn(SourceId) -> bool>) -> Distribution {
        let dists: Vec<Distribution> = self
            .classifiers
            .iter()
            .zip(keys)
            .filter(|(c, _)| active.is_none_or(|f| f(c.source())))
            .map(|(c, key)| c.posterior(key, self.laplace_inputs || self.rule == Rule::Bayes))
            .collect();
        let refs: Vec<&Distribution> = dists.iter().collect();
        combine(&refs, &self.priors(), self.rule).expect("Laplace-corrected posteriors are positive where priors are")
    }

    pub fn posterior(&self, snapshot: &ContextSnapshot) -> Distribution {
        self.posterior_from_keys(&self.keys(snapshot), None)
    }

    /// Posterior using only the classifiers whose source is in `sources`.
    pub fn posterior_with(&self, snapshot: &ContextSnapshot, sources: &[SourceId]) -> Distribution {
        self.posterior_from_keys(&self.keys(snapshot), Some(&|s| sources.contains(&s)))
    }

    pub fn estimate(&self, snapshot: &ContextSnapshot, r: usize) -> ResponseSet {
        map_estimate(&self.posterior(snapshot), r)
    }

    /// Adds `delta` (±1) observations of `outcome` at `keys` to every
    /// classifier and to the class priors.
    pub fn adjust(&mut self, keys: &[Key], outcome: usize, delta: i64) {
        for (c, key) in self.classifiers.iter_mut().zip(keys) {
            c.adjust(key, outcome, delta);
        }
        let apply = |c: &mut u64| *c = c.checked_add_signed(delta).expect("count underflow");
        apply(&mut self.class_counts[outcome]);
        apply(&mut self.total);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("estimator serializes")
    }

    pub fn from_json(s: &str) -> Result<CombinedEstimator> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Share of in-vocabulary test events whose outcome is in the top-`r`
/// response set. Out-of-vocabulary events are skipped; 0 when none remain.
pub fn accuracy(estimator: &CombinedEstimator, test: &[&LabeledEvent], r: usize) -> f64 {
    let mut hits = 0usize;
    let mut n = 0usize;
    for e in test {
        let Some(id) = estimator.vocab.id(&e.outcome.label) else {
            continue;
        };
        n += 1;
        if estimator.estimate(&e.context, r).contains(id) {
            hits += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        hits as f64 / n as f64
    }
}
