//! Posterior estimation: Laplace-corrected count tables, MAP response sets,
//! classifier combination, supervised binning and prior-usage auto-depth.

mod depth;
mod estimator;
mod spec;
mod supervised;
mod table;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use depth::{auto_depth_posterior, build_depth_tables, select_depth, AutoDepth, DepthTable, DEFAULT_MIN_SAMPLES};
pub use estimator::{accuracy, Classifier, CombinedEstimator, Key};
pub use spec::{fit_estimator, AutoDepthSpec, EstimatorSpec, SourceSpec};
pub use supervised::{fine_bin_count, supervised_bins};
pub use table::{build_table, laplace_posterior, PosteriorTable};

/// A probability distribution over outcome ids `0..k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution(pub Vec<f64>);

impl Distribution {
    pub fn uniform(k: usize) -> Distribution {
        Distribution(vec![1.0 / k as f64; k])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn total_variation(&self, other: &Distribution) -> f64 {
        0.5 * self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }

    /// Highest-probability outcome, lowest id on ties.
    pub fn argmax(&self) -> usize {
        map_estimate(self, 1).outcomes[0]
    }
}

/// The top-`r` outcomes and the posterior mass they carry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSet {
    pub outcomes: Vec<usize>,
    pub mass: f64,
}

impl ResponseSet {
    pub fn contains(&self, outcome: usize) -> bool {
        self.outcomes.contains(&outcome)
    }
}

/// MAP estimate with `r` responses: outcomes by descending probability,
/// lower id first on ties. `r` is clamped to `1..=k`.
pub fn map_estimate(dist: &Distribution, r: usize) -> ResponseSet {
    let k = dist.len();
    let r = r.clamp(1, k.max(1)).min(k);
    let mut ids: Vec<usize> = (0..k).collect();
    ids.sort_by(|&a, &b| dist.0[b].total_cmp(&dist.0[a]).then(a.cmp(&b)));
    ids.truncate(r);
    let mass = ids.iter().map(|&i| dist.0[i]).sum();
    ResponseSet { outcomes: ids, mass }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    #[default]
    Bayes,
    Max,
    Mean,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::Bayes => "bayes",
            Rule::Max => "max",
            Rule::Mean => "mean",
        })
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bayes" => Ok(Rule::Bayes),
            "max" => Ok(Rule::Max),
            "mean" => Ok(Rule::Mean),
            other => Err(Error::invalid(format!("unknown combination rule {other:?}"))),
        }
    }
}

/// Combines per-source posteriors into one distribution.
///
/// * `Bayes`: naive Bayes written on posteriors,
///   `P(g|x) ∝ P(g) · Π_n P(g|x_n) / P(g)`, evaluated in log space.
///   Outcomes with zero prior get zero mass.
/// * `Max`: `P(g|x) ∝ max_n P(g|x_n)`.
/// * `Mean`: arithmetic mean of the posteriors.
///
/// With no inputs the priors are returned.
pub fn combine(dists: &[&Distribution], priors: &Distribution, rule: Rule) -> Result<Distribution> {
    let k = priors.len();
    if dists.iter().any(|d| d.len() != k) {
        return Err(Error::invalid("distributions disagree on the outcome count"));
    }
    if dists.is_empty() {
        return Ok(priors.clone());
    }
    match rule {
        Rule::Bayes => {
            let mut logs = vec![f64::NEG_INFINITY; k];
            for (i, log) in logs.iter_mut().enumerate() {
                let p = priors.0[i];
                if p <= 0.0 {
                    continue;
                }
                let lp = p.ln();
                let mut acc = lp;
                for d in dists {
                    let q = d.0[i];
                    if q <= 0.0 {
                        return Err(Error::CorruptTable { outcome: i });
                    }
                    acc += q.ln() - lp;
                }
                *log = acc;
            }
            let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Ok(Distribution::uniform(k));
            }
            let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
            Ok(normalized(weights))
        }
        Rule::Max => {
            let weights = (0..k)
                .map(|i| dists.iter().map(|d| d.0[i]).fold(0.0, f64::max))
                .collect();
            Ok(normalized(weights))
        }
        Rule::Mean => {
            let n = dists.len() as f64;
            Ok(Distribution(
                (0..k)
                    .map(|i| dists.iter().map(|d| d.0[i]).sum::<f64>() / n)
                    .collect(),
            ))
        }
    }
}

fn normalized(weights: Vec<f64>) -> Distribution {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Distribution::uniform(weights.len());
    }
    Distribution(weights.into_iter().map(|w| w / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(v: &[f64]) -> Distribution {
        Distribution(v.to_vec())
    }

    #[test]
    fn map_estimate_examples() {
        let dist = d(&[0.5, 0.3, 0.2]);
        let r1 = map_estimate(&dist, 1);
        assert_eq!(r1.outcomes, [0]);
        assert_eq!(r1.mass, 0.5);
        let r2 = map_estimate(&dist, 2);
        assert_eq!(r2.outcomes, [0, 1]);
        assert!((r2.mass - 0.8).abs() < 1e-12);
        assert_eq!(map_estimate(&Distribution::uniform(4), 1).outcomes, [0]);
        assert_eq!(map_estimate(&d(&[0.2, 0.4, 0.4]), 2).outcomes, [1, 2]);
    }

    #[test]
    fn max_rule_worked_example() {
        // One classifier says A at 0.8, two say B at 0.7 and 0.6.
        let c1 = d(&[0.8, 0.2]);
        let c2 = d(&[0.3, 0.7]);
        let c3 = d(&[0.4, 0.6]);
        let out = combine(&[&c1, &c2, &c3], &d(&[0.5, 0.5]), Rule::Max).unwrap();
        assert_eq!(out.argmax(), 0);
        assert!((out.0[0] - 0.8 / 1.5).abs() < 1e-12);
    }

    #[test]
    fn bayes_uniform_prior_closed_form() {
        let a = d(&[0.8, 0.2]);
        let out = combine(&[&a, &a], &d(&[0.5, 0.5]), Rule::Bayes).unwrap();
        assert!((out.0[0] - 0.64 / 0.68).abs() < 1e-12);
        assert!((out.0[0] - 0.9412).abs() < 1e-4);
        assert!((out.0[1] - 0.0588).abs() < 1e-4);
    }

    #[test]
    fn mean_rule() {
        let out = combine(&[&d(&[0.6, 0.4]), &d(&[0.2, 0.8])], &d(&[0.5, 0.5]), Rule::Mean).unwrap();
        assert!((out.0[0] - 0.4).abs() < 1e-12);
        assert!((out.0[1] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn bayes_zero_posterior_is_corruption() {
        let err = combine(&[&d(&[1.0, 0.0])], &d(&[0.5, 0.5]), Rule::Bayes).unwrap_err();
        assert!(matches!(err, Error::CorruptTable { outcome: 1 }));
    }

    #[test]
    fn bayes_zero_prior_outcome_gets_nothing() {
        let out = combine(&[&d(&[0.7, 0.0, 0.3])], &d(&[0.5, 0.0, 0.5]), Rule::Bayes).unwrap();
        assert_eq!(out.0[1], 0.0);
        assert!((out.0[0] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn empty_inputs_give_priors() {
        let p = d(&[0.25, 0.75]);
        for rule in [Rule::Bayes, Rule::Max, Rule::Mean] {
            assert_eq!(combine(&[], &p, rule).unwrap(), p);
        }
    }
}
