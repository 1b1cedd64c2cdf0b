//! Cost-aware context selection.
//!
//! Free sources (time and prior usage) are always combined. Costly sensors
//! are ranked once by accuracy gain per joule and then read one by one, per
//! event, until the posterior mass of the response set reaches the target.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::context::SourceId;
use crate::error::{Error, Result};
use crate::estimate::{
    fit_estimator, map_estimate, CombinedEstimator, EstimatorSpec, Key, ResponseSet,
};
use crate::trace::{LabeledEvent, Vocabulary};

/// Expected energy, in joules, of reading each context source once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub costs: BTreeMap<SourceId, f64>,
}

impl Default for CostModel {
    fn default() -> Self {
        let costs = SourceId::ALL
            .iter()
            .map(|&s| {
                let c = match s {
                    SourceId::Movement => 1.65,
                    SourceId::Cell => 1.2,
                    SourceId::Gps => 175.0,
                    _ => 0.0,
                };
                (s, c)
            })
            .collect();
        CostModel { costs }
    }
}

impl CostModel {
    pub fn cost(&self, source: SourceId) -> f64 {
        self.costs.get(&source).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, source: SourceId, joules: f64) -> Result<()> {
        if !(joules >= 0.0) || !joules.is_finite() {
            return Err(Error::invalid(format!("cost of {source} must be a finite non-negative number")));
        }
        self.costs.insert(source, joules);
        Ok(())
    }

    pub fn is_costly(source: SourceId) -> bool {
        SourceId::COSTLY.contains(&source)
    }

    /// Costly sensors must carry a positive cost; a zero cost would make
    /// cost-effectiveness undefined.
    pub fn validate(&self) -> Result<()> {
        for s in SourceId::COSTLY {
            let c = self.cost(s);
            if c == 0.0 {
                return Err(Error::ZeroCostCostly(s));
            }
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::invalid(format!("cost of {s} must be a finite non-negative number")));
            }
        }
        Ok(())
    }
}

/// Costly sources in reading order, with what the greedy step measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextRanking {
    pub order: Vec<SourceId>,
    /// Accuracy gain of each source when it was picked.
    pub gains: Vec<f64>,
    /// Gain per joule of each source when it was picked.
    pub effectiveness: Vec<f64>,
    /// Validation accuracy of the free sources alone.
    pub free_accuracy: f64,
}

/// Greedy cost-effectiveness ordering of `costly`.
///
/// `gain(chosen, x)` is the increase of the objective from adding `x` to the
/// already chosen sources. Ties in effectiveness go to the cheaper source,
/// then to the lower source id.
pub fn rank_greedy(
    costly: &[SourceId],
    cost: impl Fn(SourceId) -> f64,
    mut gain: impl FnMut(&[SourceId], SourceId) -> f64,
) -> Result<(Vec<SourceId>, Vec<f64>, Vec<f64>)> {
    for &s in costly {
        if cost(s) == 0.0 {
            return Err(Error::ZeroCostCostly(s));
        }
    }
    let mut left: Vec<SourceId> = costly.to_vec();
    left.sort();
    let mut order = Vec::new();
    let mut gains = Vec::new();
    let mut eff = Vec::new();
    while !left.is_empty() {
        let mut best: Option<(usize, f64, f64)> = None;
        for (i, &x) in left.iter().enumerate() {
            let g = gain(&order, x);
            let e = g / cost(x);
            let better = match best {
                None => true,
                Some((j, _, be)) => e > be || (e == be && cost(x) < cost(left[j])),
            };
            if better {
                best = Some((i, g, e));
            }
        }
        let (i, g, e) = best.expect("non-empty");
        order.push(left.remove(i));
        gains.push(g);
        eff.push(e);
    }
    Ok((order, gains, eff))
}

/// Validation events with their per-classifier keys and outcome ids.
struct Prepared {
    keys: Vec<Vec<Key>>,
    outcomes: Vec<usize>,
}

fn prepare(estimator: &CombinedEstimator, validation: &[&LabeledEvent]) -> Prepared {
    let mut keys = Vec::new();
    let mut outcomes = Vec::new();
    for e in validation {
        if let Some(id) = estimator.vocab.id(&e.outcome.label) {
            keys.push(estimator.keys(&e.context));
            outcomes.push(id);
        }
    }
    Prepared { keys, outcomes }
}

fn subset_accuracy(estimator: &CombinedEstimator, data: &Prepared, costly: &[SourceId], r: usize) -> f64 {
    if data.outcomes.is_empty() {
        return 0.0;
    }
    let active = |s: SourceId| !CostModel::is_costly(s) || costly.contains(&s);
    let hits = data
        .keys
        .iter()
        .zip(&data.outcomes)
        .filter(|(k, &o)| map_estimate(&estimator.posterior_from_keys(k, Some(&active)), r).contains(o))
        .count();
    hits as f64 / data.outcomes.len() as f64
}

fn costly_sources(estimator: &CombinedEstimator) -> Vec<SourceId> {
    let mut s: Vec<SourceId> = estimator
        .sources()
        .into_iter()
        .filter(|&s| CostModel::is_costly(s))
        .collect();
    s.sort();
    s.dedup();
    s
}

/// Ranks the estimator's costly sources by validation accuracy gain per joule,
/// starting from the free sources.
pub fn rank_sources(
    estimator: &CombinedEstimator,
    validation: &[&LabeledEvent],
    costs: &CostModel,
    r: usize,
) -> Result<ContextRanking> {
    let data = prepare(estimator, validation);
    if data.outcomes.is_empty() {
        return Err(Error::EmptyTraining);
    }
    let costly = costly_sources(estimator);
    let mut cache: BTreeMap<Vec<SourceId>, f64> = BTreeMap::new();
    let mut acc = |set: Vec<SourceId>| -> f64 {
        let mut key = set;
        key.sort();
        *cache
            .entry(key.clone())
            .or_insert_with(|| subset_accuracy(estimator, &data, &key, r))
    };
    let free_accuracy = acc(Vec::new());
    let (order, gains, effectiveness) = rank_greedy(&costly, |s| costs.cost(s), |chosen, x| {
        let base = acc(chosen.to_vec());
        let mut with = chosen.to_vec();
        with.push(x);
        acc(with) - base
    })?;
    Ok(ContextRanking {
        order,
        gains,
        effectiveness,
        free_accuracy,
    })
}

/// Average accuracy gain of adding each costly source to baselines of the
/// free sources plus `j` other costly sources, for `j = 0, 1, ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmodularityReport {
    pub sources: Vec<SourceId>,
    /// `gains[i][j]`: source `i` added to free + `j` others, averaged over
    /// every choice of the others.
    pub gains: Vec<Vec<f64>>,
    pub tolerance: f64,
    /// Every row is non-increasing within the tolerance.
    pub pass: bool,
}

pub const SUBMODULARITY_TOLERANCE: f64 = 0.01;

fn subsets(items: &[SourceId], size: usize) -> Vec<Vec<SourceId>> {
    if size == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for (i, &x) in items.iter().enumerate() {
        for mut rest in subsets(&items[i + 1..], size - 1) {
            rest.insert(0, x);
            out.push(rest);
        }
    }
    out
}

pub fn check_submodularity(
    estimator: &CombinedEstimator,
    validation: &[&LabeledEvent],
    r: usize,
) -> Result<SubmodularityReport> {
    let costly = costly_sources(estimator);
    if costly.len() < 2 {
        return Err(Error::invalid("need at least two costly sources"));
    }
    let data = prepare(estimator, validation);
    if data.outcomes.is_empty() {
        return Err(Error::EmptyTraining);
    }
    let mut cache: BTreeMap<Vec<SourceId>, f64> = BTreeMap::new();
    let mut acc = |mut set: Vec<SourceId>| -> f64 {
        set.sort();
        *cache
            .entry(set.clone())
            .or_insert_with(|| subset_accuracy(estimator, &data, &set, r))
    };
    let mut gains = Vec::new();
    for &x in &costly {
        let others: Vec<SourceId> = costly.iter().copied().filter(|&s| s != x).collect();
        let row: Vec<f64> = (0..costly.len())
            .map(|j| {
                let bases = subsets(&others, j);
                let sum: f64 = bases
                    .iter()
                    .map(|b| {
                        let mut with = b.clone();
                        with.push(x);
                        acc(with) - acc(b.clone())
                    })
                    .sum();
                sum / bases.len() as f64
            })
            .collect();
        gains.push(row);
    }
    let pass = gains
        .iter()
        .all(|row| row.windows(2).all(|w| w[1] <= w[0] + SUBMODULARITY_TOLERANCE));
    Ok(SubmodularityReport {
        sources: costly,
        gains,
        tolerance: SUBMODULARITY_TOLERANCE,
        pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmartContextPolicy {
    pub estimator: CombinedEstimator,
    pub ranking: ContextRanking,
    pub costs: CostModel,
    pub r: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub response: ResponseSet,
    /// Posterior mass of the response set.
    pub estimated_accuracy: f64,
    /// Free sources first, then the costly sources read, in ranking order.
    pub sources_used: Vec<SourceId>,
    pub energy_spent: f64,
    pub target_met: bool,
}

impl EstimationResult {
    pub fn costly_used(&self) -> impl Iterator<Item = SourceId> + '_ {
        self.sources_used.iter().copied().filter(|&s| CostModel::is_costly(s))
    }
}

impl SmartContextPolicy {
    pub fn new(estimator: CombinedEstimator, ranking: ContextRanking, costs: CostModel, r: usize) -> Result<Self> {
        costs.validate()?;
        for s in &ranking.order {
            if !estimator.has_source(*s) {
                return Err(Error::invalid(format!("ranked source {s} has no table")));
            }
        }
        if r == 0 {
            return Err(Error::invalid("response count must be at least 1"));
        }
        Ok(SmartContextPolicy {
            estimator,
            ranking,
            costs,
            r,
        })
    }

    /// Ranks on a validation fold and keeps `estimator` for estimation.
    pub fn build(
        estimator: CombinedEstimator,
        validation: &[&LabeledEvent],
        costs: CostModel,
        r: usize,
    ) -> Result<Self> {
        costs.validate()?;
        let ranking = rank_sources(&estimator, validation, &costs, r)?;
        SmartContextPolicy::new(estimator, ranking, costs, r)
    }

    /// Fits a per-user policy from training events: the ranking estimator is
    /// trained on the second half of `train` and ranked on the first half;
    /// the returned policy estimates with an estimator fitted on all of
    /// `train`.
    pub fn train(
        spec: &EstimatorSpec,
        train: &[&LabeledEvent],
        vocab: &Vocabulary,
        costs: CostModel,
        r: usize,
    ) -> Result<Self> {
        costs.validate()?;
        let half = train.len() / 2;
        if half == 0 {
            return Err(Error::EmptyFold(0));
        }
        let (validation, rest) = train.split_at(half);
        let ranking_est = fit_estimator(spec, rest, vocab)?;
        let ranking = rank_sources(&ranking_est, validation, &costs, r)?;
        let estimator = fit_estimator(spec, train, vocab)?;
        SmartContextPolicy::new(estimator, ranking, costs, r)
    }

    /// Same policy with the costly sources read in `order` instead.
    pub fn with_order(&self, order: Vec<SourceId>) -> Self {
        let mut p = self.clone();
        p.ranking.order = order;
        p
    }

    /// Reads costly sources in ranking order until the response set's
    /// posterior mass reaches `target` or the sources run out.
    pub fn estimate_event(&self, snapshot: &crate::trace::ContextSnapshot, target: f64) -> EstimationResult {
        self.estimate_keys(&self.estimator.keys(snapshot), target)
    }

    fn estimate_keys(&self, keys: &[Key], target: f64) -> EstimationResult {
        let est = &self.estimator;
        let mut used: Vec<SourceId> = est
            .sources()
            .into_iter()
            .filter(|&s| !CostModel::is_costly(s))
            .collect();
        used.dedup();
        let mut read = 0;
        let mut energy = 0.0;
        let mut response = self.combine(keys, &[]);
        while response.mass < target && read < self.ranking.order.len() {
            let s = self.ranking.order[read];
            energy += self.costs.cost(s);
            used.push(s);
            read += 1;
            response = self.combine(keys, &self.ranking.order[..read]);
        }
        EstimationResult {
            estimated_accuracy: response.mass,
            target_met: response.mass >= target,
            response,
            sources_used: used,
            energy_spent: energy,
        }
    }

    fn combine(&self, keys: &[Key], costly: &[SourceId]) -> ResponseSet {
        let active = |s: SourceId| !CostModel::is_costly(s) || costly.contains(&s);
        map_estimate(&self.estimator.posterior_from_keys(keys, Some(&active)), self.r)
    }
}

pub fn estimate_event(
    policy: &SmartContextPolicy,
    snapshot: &crate::trace::ContextSnapshot,
    target: f64,
) -> EstimationResult {
    policy.estimate_event(snapshot, target)
}

/// One row of a target sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub target: f64,
    pub acc_hit_rate: f64,
    pub target_met_frac: f64,
    pub freq_accel: f64,
    pub freq_cell: f64,
    pub freq_gps: f64,
    pub mean_energy_j: f64,
}

/// A sweep row plus what is needed to judge calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepStats {
    pub row: SweepRow,
    /// Mean posterior mass of the returned response sets.
    pub mean_estimated_accuracy: f64,
    pub events: usize,
}

impl SweepStats {
    /// Mean estimated accuracy minus the realised hit rate.
    pub fn calibration_gap(&self) -> f64 {
        self.mean_estimated_accuracy - self.row.acc_hit_rate
    }
}

#[derive(Default, Clone)]
struct SweepAcc {
    events: usize,
    hits: usize,
    met: usize,
    accel: usize,
    cell: usize,
    gps: usize,
    energy: f64,
    mass: f64,
}

impl SweepAcc {
    fn add(&mut self, result: &EstimationResult, hit: bool) {
        self.events += 1;
        self.hits += usize::from(hit);
        self.met += usize::from(result.target_met);
        for s in result.costly_used() {
            match s {
                SourceId::Movement => self.accel += 1,
                SourceId::Cell => self.cell += 1,
                SourceId::Gps => self.gps += 1,
                _ => {}
            }
        }
        self.energy += result.energy_spent;
        self.mass += result.estimated_accuracy;
    }

    fn merge(&mut self, o: &SweepAcc) {
        self.events += o.events;
        self.hits += o.hits;
        self.met += o.met;
        self.accel += o.accel;
        self.cell += o.cell;
        self.gps += o.gps;
        self.energy += o.energy;
        self.mass += o.mass;
    }

    fn stats(&self, target: f64) -> SweepStats {
        let n = self.events.max(1) as f64;
        let row = SweepRow {
            target,
            acc_hit_rate: self.hits as f64 / n,
            target_met_frac: self.met as f64 / n,
            freq_accel: self.accel as f64 / n,
            freq_cell: self.cell as f64 / n,
            freq_gps: self.gps as f64 / n,
            mean_energy_j: self.energy / n,
        };
        SweepStats {
            row,
            mean_estimated_accuracy: self.mass / n,
            events: self.events,
        }
    }
}

fn sweep_accs(policy: &SmartContextPolicy, test: &[&LabeledEvent], targets: &[f64]) -> Vec<SweepAcc> {
    let mut accs = vec![SweepAcc::default(); targets.len()];
    for e in test {
        let Some(id) = policy.estimator.vocab.id(&e.outcome.label) else {
            continue;
        };
        let keys = policy.estimator.keys(&e.context);
        for (acc, &t) in accs.iter_mut().zip(targets) {
            let res = policy.estimate_keys(&keys, t);
            let hit = res.response.contains(id);
            acc.add(&res, hit);
        }
    }
    accs
}

/// Per-target statistics over the in-vocabulary test events.
pub fn sweep_targets(policy: &SmartContextPolicy, test: &[&LabeledEvent], targets: &[f64]) -> Result<Vec<SweepRow>> {
    Ok(sweep_pooled(&[(policy, test)], targets)?.into_iter().map(|s| s.row).collect())
}

/// Sweep pooled over several (policy, test events) pairs, e.g. one per user.
/// Every event weighs the same.
pub fn sweep_pooled(runs: &[(&SmartContextPolicy, &[&LabeledEvent])], targets: &[f64]) -> Result<Vec<SweepStats>> {
    if targets.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("targets must be sorted ascending"));
    }
    use rayon::prelude::*;
    let parts: Vec<Vec<SweepAcc>> = runs.par_iter().map(|(p, t)| sweep_accs(p, t, targets)).collect();
    let mut total = vec![SweepAcc::default(); targets.len()];
    for part in &parts {
        for (a, b) in total.iter_mut().zip(part) {
            a.merge(b);
        }
    }
    Ok(total.iter().zip(targets).map(|(a, &t)| a.stats(t)).collect())
}

pub fn write_sweep_csv(rows: &[SweepRow], out: impl Write) -> Result<()> {
    crate::harness::write_csv(rows, out)
}

pub fn read_sweep_csv(input: impl std::io::Read) -> Result<Vec<SweepRow>> {
    crate::harness::read_csv(input)
}

/// All orderings of `items`.
pub fn permutations(items: &[SourceId]) -> Vec<Vec<SourceId>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let x = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, x);
            out.push(p);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_effectiveness_example() {
        let gains: BTreeMap<SourceId, f64> =
            [(SourceId::Cell, 0.03), (SourceId::Movement, 0.02), (SourceId::Gps, 0.05)].into();
        let costs = CostModel::default();
        let (order, _, eff) = rank_greedy(&SourceId::COSTLY, |s| costs.cost(s), |_, x| gains[&x]).unwrap();
        assert_eq!(order, [SourceId::Cell, SourceId::Movement, SourceId::Gps]);
        assert!((eff[0] - 0.025).abs() < 1e-4);
        assert!((eff[1] - 0.0121).abs() < 1e-4);
        assert!((eff[2] - 0.000286).abs() < 1e-6);
    }

    #[test]
    fn equal_gains_order_by_cost() {
        let costs = CostModel::default();
        let (order, _, _) = rank_greedy(&SourceId::COSTLY, |s| costs.cost(s), |_, _| 0.01).unwrap();
        assert_eq!(order, [SourceId::Cell, SourceId::Movement, SourceId::Gps]);
    }

    #[test]
    fn zero_cost_costly_source_rejected() {
        let mut costs = CostModel::default();
        costs.set(SourceId::Cell, 0.0).unwrap();
        assert!(matches!(costs.validate(), Err(Error::ZeroCostCostly(SourceId::Cell))));
        let err = rank_greedy(&SourceId::COSTLY, |s| costs.cost(s), |_, _| 0.0).unwrap_err();
        assert!(matches!(err, Error::ZeroCostCostly(SourceId::Cell)));
    }

    #[test]
    fn subsets_and_permutations() {
        let items = [SourceId::Movement, SourceId::Gps, SourceId::Cell];
        assert_eq!(subsets(&items, 0).len(), 1);
        assert_eq!(subsets(&items, 2).len(), 3);
        assert_eq!(permutations(&items).len(), 6);
    }
}
