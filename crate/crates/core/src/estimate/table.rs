use serde::{Deserialize, Serialize};

use super::Distribution;
use crate::context::SourceId;
use crate::discretize::Binning;
use crate::error::{Error, Result};
use crate::trace::{LabeledEvent, Vocabulary};

/// Outcome counts per bin of one context source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorTable {
    /// Role of this table; usually equal to `binning.source`.
    pub source: SourceId,
    pub binning: Binning,
    k: usize,
    /// Row-major `bins x k`.
    counts: Vec<u64>,
    bin_totals: Vec<u64>,
    class_counts: Vec<u64>,
    total: u64,
}

impl PosteriorTable {
    pub fn empty(binning: Binning, k: usize) -> PosteriorTable {
        let bins = binning.effective_bins();
        PosteriorTable {
            source: binning.source,
            binning,
            k,
            counts: vec![0; bins * k],
            bin_totals: vec![0; bins],
            class_counts: vec![0; k],
            total: 0,
        }
    }

    /// Re-labels the table's role without changing how it reads snapshots.
    pub fn with_source(mut self, source: SourceId) -> PosteriorTable {
        self.source = source;
        self
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn bins(&self) -> usize {
        self.bin_totals.len()
    }

    pub fn count(&self, bin: usize, outcome: usize) -> u64 {
        self.counts[bin * self.k + outcome]
    }

    pub fn bin_total(&self, bin: usize) -> u64 {
        self.bin_totals[bin]
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn class_counts(&self) -> &[u64] {
        &self.class_counts
    }

    /// `P(g_i) = count(g_i) / total`; uniform for an empty table.
    pub fn priors(&self) -> Distribution {
        priors_from(&self.class_counts, self.total)
    }

    pub fn bin_of(&self, event: &LabeledEvent) -> usize {
        self.binning.assign(self.binning.source.read(&event.context))
    }

    /// Adds `delta` (±1) observations of `outcome` in `bin`.
    pub fn adjust(&mut self, bin: usize, outcome: usize, delta: i64) {
        let apply = |c: &mut u64| *c = c.checked_add_signed(delta).expect("count underflow");
        apply(&mut self.counts[bin * self.k + outcome]);
        apply(&mut self.bin_totals[bin]);
        apply(&mut self.class_counts[outcome]);
        apply(&mut self.total);
    }

    /// `P(g_i|x) = (count(g_i|x) + k P(g_i)) / (count(x) + k)`.
    pub fn laplace_posterior(&self, bin: usize) -> Distribution {
        laplace(&self.counts[bin * self.k..(bin + 1) * self.k], self.bin_totals[bin], &self.priors())
    }

    /// Plain conditional frequency; the priors when the bin is empty.
    pub fn raw_posterior(&self, bin: usize) -> Distribution {
        raw(&self.counts[bin * self.k..(bin + 1) * self.k], self.bin_totals[bin], &self.priors())
    }
}

pub(crate) fn priors_from(class_counts: &[u64], total: u64) -> Distribution {
    if total == 0 {
        return Distribution::uniform(class_counts.len());
    }
    Distribution(class_counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// An empty bin returns the priors exactly.
pub(crate) fn laplace(counts: &[u64], bin_total: u64, priors: &Distribution) -> Distribution {
    if bin_total == 0 {
        return priors.clone();
    }
    let m = counts.len() as f64;
    let denom = bin_total as f64 + m;
    Distribution(
        counts
            .iter()
            .zip(&priors.0)
            .map(|(&c, &p)| (c as f64 + m * p) / denom)
            .collect(),
    )
}

pub(crate) fn raw(counts: &[u64], bin_total: u64, priors: &Distribution) -> Distribution {
    if bin_total == 0 {
        return priors.clone();
    }
    Distribution(counts.iter().map(|&c| c as f64 / bin_total as f64).collect())
}

/// Tallies the training events into a table over `binning`.
pub fn build_table(events: &[&LabeledEvent], binning: &Binning, vocab: &Vocabulary) -> Result<PosteriorTable> {
    if events.is_empty() {
        return Err(Error::EmptyTraining);
    }
    let mut table = PosteriorTable::empty(binning.clone(), vocab.len());
    for e in events {
        let outcome = vocab
            .id(&e.outcome.label)
            .ok_or_else(|| Error::OutOfVocabulary(e.outcome.label.clone()))?;
        let bin = table.bin_of(e);
        table.adjust(bin, outcome, 1);
    }
    Ok(table)
}

pub fn laplace_posterior(table: &PosteriorTable, bin: usize) -> Distribution {
    table.laplace_posterior(bin)
}
