use serde::{Deserialize, Serialize};

use super::depth::{build_depth_tables, DEFAULT_MIN_SAMPLES};
use super::estimator::{Classifier, CombinedEstimator};
use super::supervised::{fine_bin_count, supervised_bins};
use super::table::build_table;
use super::Rule;
use crate::context::{SourceId, SourceShape};
use crate::discretize::{distinct_values, fit_source, Binning, BinningKind};
use crate::error::{Error, Result};
use crate::trace::{LabeledEvent, UsageKind, Vocabulary};

/// How one context source is discretized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub source: SourceId,
    pub discretizer: BinningKind,
    pub bins: usize,
}

impl SourceSpec {
    /// `bins` bins with the source's default discretizer.
    pub fn new(source: SourceId, bins: usize) -> SourceSpec {
        SourceSpec {
            source,
            discretizer: BinningKind::default_for(source),
            bins,
        }
    }

    pub fn with(source: SourceId, discretizer: BinningKind, bins: usize) -> SourceSpec {
        SourceSpec {
            source,
            discretizer,
            bins,
        }
    }
}

/// Replaces the depth-1 prior-usage classifier of `kind` with an auto-depth one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AutoDepthSpec {
    pub kind: UsageKind,
    pub max_depth: usize,
    pub prior_bins: usize,
    pub min_samples: u64,
}

impl AutoDepthSpec {
    pub fn new(kind: UsageKind, max_depth: usize, prior_bins: usize) -> AutoDepthSpec {
        AutoDepthSpec {
            kind,
            max_depth,
            prior_bins,
            min_samples: DEFAULT_MIN_SAMPLES,
        }
    }
}

/// Everything needed to fit a [`CombinedEstimator`] from training events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub sources: Vec<SourceSpec>,
    pub rule: Rule,
    /// Fit every source with supervised binning over `10 n` fine bins.
    pub supervised: bool,
    pub laplace_inputs: bool,
    pub auto_depth: Option<AutoDepthSpec>,
    pub seed: u64,
}

impl Default for EstimatorSpec {
    fn default() -> Self {
        EstimatorSpec::all_sources(10)
    }
}

impl EstimatorSpec {
    pub fn new(sources: Vec<SourceSpec>) -> EstimatorSpec {
        EstimatorSpec {
            sources,
            rule: Rule::Bayes,
            supervised: false,
            laplace_inputs: true,
            auto_depth: None,
            seed: 0,
        }
    }

    /// Every context source with its default discretizer and `bins` bins.
    pub fn all_sources(bins: usize) -> EstimatorSpec {
        EstimatorSpec::new(SourceId::ALL.iter().map(|&s| SourceSpec::new(s, bins)).collect())
    }

    pub fn single(source: SourceId, discretizer: BinningKind, bins: usize) -> EstimatorSpec {
        EstimatorSpec::new(vec![SourceSpec::with(source, discretizer, bins)])
    }

    pub fn with_rule(mut self, rule: Rule) -> Self {
        self.rule = rule;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_supervised(mut self, on: bool) -> Self {
        self.supervised = on;
        self
    }

    pub fn with_auto_depth(mut self, auto: Option<AutoDepthSpec>) -> Self {
        self.auto_depth = auto;
        self
    }

    fn auto_source(&self) -> Option<SourceId> {
        self.auto_depth.map(|a| SourceId::prior(a.kind))
    }

    /// Sources with their own count table, in classifier order.
    fn table_sources(&self) -> impl Iterator<Item = &SourceSpec> {
        let auto = self.auto_source();
        self.sources.iter().filter(move |s| Some(s.source) != auto)
    }

    /// Fits one binning per classifier: the table sources in order, then the
    /// prior-label binning of the auto-depth classifier when configured.
    pub fn fit_binnings(&self, train: &[&LabeledEvent], vocab: &Vocabulary) -> Result<Vec<Binning>> {
        let train = in_vocab(train, vocab)?;
        let mut out = Vec::new();
        for s in self.table_sources() {
            out.push(self.fit_one(s, &train, vocab)?);
        }
        if let Some(a) = self.auto_depth {
            out.push(fit_source(SourceId::prior(a.kind), BinningKind::CategoricalTopn, &train, a.prior_bins, self.seed)?);
        }
        Ok(out)
    }

    fn fit_one(&self, s: &SourceSpec, train: &[&LabeledEvent], vocab: &Vocabulary) -> Result<Binning> {
        let supervised = self.supervised || s.discretizer == BinningKind::Supervised;
        if !supervised {
            return fit_source(s.source, s.discretizer, train, s.bins, self.seed);
        }
        let base = match s.discretizer {
            BinningKind::Supervised => BinningKind::default_for(s.source),
            k => k,
        };
        let distinct = distinct_values(s.source, train);
        let mut fine_n = fine_bin_count(s.source.shape(), s.bins, distinct);
        if s.source.shape() != SourceShape::Categorical && fine_n > distinct {
            log::debug!("{}: {} fine bins exceed {distinct} distinct values, clamping", s.source, fine_n);
            fine_n = distinct.max(1);
        }
        let fine = fit_source(s.source, base, train, fine_n, self.seed)?;
        let n = s.bins.min(fine.effective_bins());
        if n < s.bins {
            log::debug!("{}: supervised bin count clamped from {} to {n}", s.source, s.bins);
        }
        supervised_bins(&fine, train, vocab, n, self.seed)
    }

    /// Tallies count tables over already-fitted binnings (see
    /// [`EstimatorSpec::fit_binnings`]).
    pub fn build(&self, binnings: &[Binning], train: &[&LabeledEvent], vocab: &Vocabulary) -> Result<CombinedEstimator> {
        let train = in_vocab(train, vocab)?;
        let n_tables = self.table_sources().count();
        if binnings.len() != n_tables + usize::from(self.auto_depth.is_some()) {
            return Err(Error::invalid("binnings do not match the estimator spec"));
        }
        let mut classifiers = Vec::with_capacity(binnings.len());
        for b in &binnings[..n_tables] {
            classifiers.push(Classifier::Table(build_table(&train, b, vocab)?));
        }
        if let Some(a) = self.auto_depth {
            let model = build_depth_tables(&train, a.kind, a.max_depth, &binnings[n_tables], vocab, a.min_samples)?;
            classifiers.push(Classifier::AutoDepth(model));
        }
        CombinedEstimator::from_training(vocab.clone(), self.rule, classifiers, &train)?
            .with_laplace_inputs(self.laplace_inputs)
    }
}

fn in_vocab<'a>(train: &[&'a LabeledEvent], vocab: &Vocabulary) -> Result<Vec<&'a LabeledEvent>> {
    let kept: Vec<&LabeledEvent> = train
        .iter()
        .copied()
        .filter(|e| vocab.id(&e.outcome.label).is_some())
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyTraining);
    }
    Ok(kept)
}

/// Fits binnings and count tables on `train`. Events whose outcome is not in
/// `vocab` are ignored.
pub fn fit_estimator(spec: &EstimatorSpec, train: &[&LabeledEvent], vocab: &Vocabulary) -> Result<CombinedEstimator> {
    let binnings = spec.fit_binnings(train, vocab)?;
    spec.build(&binnings, train, vocab)
}
