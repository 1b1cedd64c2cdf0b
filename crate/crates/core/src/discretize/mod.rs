//! Unsupervised binnings of context sources.
//!
//! Every fitted [`Binning`] is a total map from raw context values (including
//! missing readings) onto bin indices `0..effective_bins()`.

pub mod kmeans;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::context::{RawValue, SourceId, SourceShape};
use crate::error::{Error, Result};
use crate::trace::LabeledEvent;

pub use kmeans::{METERS_PER_DEGREE, MIN_CLUSTER_RADIUS_M};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinningKind {
    EqualWidth,
    EqualFreq,
    Kmeans,
    EqfreqKmeans,
    CategoricalTopn,
    Supervised,
}

impl BinningKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BinningKind::EqualWidth => "equal_width",
            BinningKind::EqualFreq => "equal_freq",
            BinningKind::Kmeans => "kmeans",
            BinningKind::EqfreqKmeans => "eqfreq_kmeans",
            BinningKind::CategoricalTopn => "categorical_topn",
            BinningKind::Supervised => "supervised",
        }
    }

    /// Whether this unsupervised kind applies to values of `shape`.
    pub fn fits(self, shape: SourceShape) -> bool {
        matches!(
            (self, shape),
            (BinningKind::EqualWidth | BinningKind::EqualFreq, SourceShape::Scalar)
                | (BinningKind::Kmeans | BinningKind::EqfreqKmeans, SourceShape::Point)
                | (BinningKind::CategoricalTopn, SourceShape::Categorical)
        )
    }

    /// The kind used when none is configured for a source.
    pub fn default_for(source: SourceId) -> BinningKind {
        match source.shape() {
            SourceShape::Scalar => BinningKind::EqualFreq,
            SourceShape::Point => BinningKind::Kmeans,
            SourceShape::Categorical => BinningKind::CategoricalTopn,
        }
    }
}

impl fmt::Display for BinningKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BinningKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "equal_width" => BinningKind::EqualWidth,
            "equal_freq" => BinningKind::EqualFreq,
            "kmeans" => BinningKind::Kmeans,
            "eqfreq_kmeans" => BinningKind::EqfreqKmeans,
            "categorical_topn" | "categorical" => BinningKind::CategoricalTopn,
            "supervised" => BinningKind::Supervised,
            other => return Err(Error::invalid(format!("unknown discretizer {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BinParams {
    /// Interior boundaries, strictly increasing; a value equal to a boundary
    /// belongs to the upper bin.
    Boundaries { edges: Vec<f64> },
    /// Centroids in (lat, lon * lon_scale) degrees. Clusters emptied by the
    /// equal-size relaxation have no centroid and receive no points.
    Centroids {
        centroids: Vec<Option<[f64; 2]>>,
        lon_scale: f64,
        assignments: Vec<usize>,
    },
    /// Bins `0..labels.len()` hold these labels; the last bin is "other".
    Categories { labels: Vec<String> },
    /// Raw value -> fine bin -> group.
    Supervised { fine: Box<Binning>, groups: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "BinningRepr", into = "BinningRepr")]
pub struct Binning {
    pub source: SourceId,
    pub kind: BinningKind,
    pub n_bins: usize,
    pub params: BinParams,
    /// Dedicated bin for missing readings, when the fitting sample had any.
    pub missing_bin: Option<usize>,
    label_index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct BinningRepr {
    source: SourceId,
    kind: BinningKind,
    n_bins: usize,
    params: BinParams,
    missing_bin: Option<usize>,
}

impl From<BinningRepr> for Binning {
    fn from(r: BinningRepr) -> Self {
        Binning::new(r.source, r.kind, r.n_bins, r.params, r.missing_bin)
    }
}

impl From<Binning> for BinningRepr {
    fn from(b: Binning) -> Self {
        BinningRepr {
            source: b.source,
            kind: b.kind,
            n_bins: b.n_bins,
            params: b.params,
            missing_bin: b.missing_bin,
        }
    }
}

impl Binning {
    fn new(
        source: SourceId,
        kind: BinningKind,
        n_bins: usize,
        params: BinParams,
        missing_bin: Option<usize>,
    ) -> Binning {
        let label_index = match &params {
            BinParams::Categories { labels } => labels
                .iter()
                .enumerate()
                .map(|(i, l)| (l.clone(), i))
                .collect(),
            _ => HashMap::new(),
        };
        Binning {
            source,
            kind,
            n_bins,
            params,
            missing_bin,
            label_index,
        }
    }

    /// Number of distinct indices [`Binning::assign`] can return.
    pub fn effective_bins(&self) -> usize {
        self.n_bins + usize::from(self.missing_bin.is_some())
    }

    /// Appends a dedicated bin for missing readings.
    pub fn with_missing_bin(mut self) -> Binning {
        if self.kind != BinningKind::CategoricalTopn
            && self.kind != BinningKind::Supervised
            && self.missing_bin.is_none()
        {
            self.missing_bin = Some(self.n_bins);
        }
        self
    }

    /// Bin index of `raw`. Never fails: out-of-range scalars clamp to the edge
    /// bins, unseen labels go to "other", and missing (or mismatched) values go
    /// to the missing bin, or bin 0 when there is none.
    pub fn assign(&self, raw: RawValue<'_>) -> usize {
        let fallback = self.missing_bin.unwrap_or(0);
        match (&self.params, raw) {
            (BinParams::Boundaries { edges }, RawValue::Scalar(x)) if !x.is_nan() => {
                edges.partition_point(|e| *e <= x)
            }
            (
                BinParams::Centroids {
                    centroids,
                    lon_scale,
                    ..
                },
                RawValue::Point(lat, lon),
            ) => {
                let p = [lat, lon * lon_scale];
                let mut best = fallback;
                let mut best_d = f64::INFINITY;
                for (i, c) in centroids.iter().enumerate() {
                    if let Some(c) = c {
                        let d = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
                        if d < best_d {
                            best = i;
                            best_d = d;
                        }
                    }
                }
                best
            }
            (BinParams::Categories { labels }, raw) => match raw {
                RawValue::Label(l) => self.label_index.get(l).copied().unwrap_or(labels.len()),
                _ => labels.len(),
            },
            (BinParams::Supervised { fine, groups }, raw) => groups[fine.assign(raw)],
            _ => fallback,
        }
    }

    pub fn other_bin(&self) -> usize {
        match &self.params {
            BinParams::Categories { labels } => labels.len(),
            _ => self.missing_bin.unwrap_or(0),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("binning serializes")
    }
}

/// `n` equal-width intervals spanning `[min, max]` of `values`.
pub fn equal_width_bins(source: SourceId, values: &[f64], n: usize) -> Result<Binning> {
    if n == 0 {
        return Err(Error::invalid("bin count must be at least 1"));
    }
    let (min, max) = finite_range(values)?;
    if n > 1 && min == max {
        return Err(Error::DegenerateRange(min, n));
    }
    let range = max - min;
    let edges = (1..n)
        .map(|i| min + range * (i as f64 / n as f64))
        .collect();
    Ok(Binning::new(
        source,
        BinningKind::EqualWidth,
        n,
        BinParams::Boundaries { edges },
        None,
    ))
}

/// Boundaries at empirical quantiles: boundary `i` sits midway between the
/// `q`-th and `(q+1)`-th order statistics, `q = floor(i * m / n)`.
/// Ties that make boundaries coincide collapse bins.
pub fn equal_frequency_bins(source: SourceId, values: &[f64], n: usize) -> Result<Binning> {
    if n == 0 {
        return Err(Error::invalid("bin count must be at least 1"));
    }
    finite_range(values)?;
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if n > distinct.len() {
        return Err(Error::TooFewDistinct {
            requested: n,
            distinct: distinct.len(),
        });
    }
    let m = sorted.len();
    let mut edges: Vec<f64> = Vec::with_capacity(n.saturating_sub(1));
    for i in 1..n {
        let q = i * m / n;
        let edge = 0.5 * (sorted[q - 1] + sorted[q]);
        if edges.last().is_some_and(|last| *last >= edge) {
            log::warn!("equal-frequency {source}: tied values collapse bin {i}");
            continue;
        }
        edges.push(edge);
    }
    let n_bins = edges.len() + 1;
    Ok(Binning::new(
        source,
        BinningKind::EqualFreq,
        n_bins,
        BinParams::Boundaries { edges },
        None,
    ))
}

fn finite_range(values: &[f64]) -> Result<(f64, f64)> {
    let mut it = values.iter().copied().filter(|v| v.is_finite());
    let first = it.next().ok_or(Error::EmptyTraining)?;
    Ok(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
}

/// Longitude scale for the equirectangular projection at the mean latitude.
fn lon_scale(points: &[(f64, f64)]) -> f64 {
    let mean_lat = points.iter().map(|p| p.0).sum::<f64>() / points.len() as f64;
    mean_lat.to_radians().cos()
}

fn project(points: &[(f64, f64)], scale: f64) -> Vec<Vec<f64>> {
    points.iter().map(|&(lat, lon)| vec![lat, lon * scale]).collect()
}

/// k-means on (lat, lon) under the equirectangular projection.
pub fn kmeans_bins(source: SourceId, points: &[(f64, f64)], k: usize, seed: u64) -> Result<Binning> {
    if points.is_empty() {
        return Err(Error::EmptyTraining);
    }
    let scale = lon_scale(points);
    let fit = kmeans::lloyd(&project(points, scale), k, seed)?;
    Ok(Binning::new(
        source,
        BinningKind::Kmeans,
        k,
        BinParams::Centroids {
            centroids: fit.centroids.iter().map(|c| Some([c[0], c[1]])).collect(),
            lon_scale: scale,
            assignments: fit.assignments,
        },
        None,
    ))
}

/// Equal-frequency k-means: peels clusters of `ceil(remaining / left)` points.
/// The size constraint is relaxed for coincident points and for peeled
/// clusters with a max point-to-mean radius under 5 meters.
pub fn eqfreq_kmeans_bins(
    source: SourceId,
    points: &[(f64, f64)],
    k: usize,
    seed: u64,
) -> Result<Binning> {
    if points.is_empty() {
        return Err(Error::EmptyTraining);
    }
    let scale = lon_scale(points);
    let fit = kmeans::equal_size_peel(
        &project(points, scale),
        k,
        seed,
        MIN_CLUSTER_RADIUS_M / METERS_PER_DEGREE,
    )?;
    if fit.relaxed {
        log::info!("eqfreq k-means on {source}: equal-size constraint relaxed");
    }
    Ok(Binning::new(
        source,
        BinningKind::EqfreqKmeans,
        k,
        BinParams::Centroids {
            centroids: fit.centroids.iter().map(|c| c.as_ref().map(|c| [c[0], c[1]])).collect(),
            lon_scale: scale,
            assignments: fit.assignments,
        },
        None,
    ))
}

/// The `n - 1` most frequent labels get their own bins; everything else,
/// including unseen and missing labels, lands in bin `n - 1`.
pub fn categorical_topn_bins<'a>(
    source: SourceId,
    labels: impl IntoIterator<Item = &'a str>,
    n: usize,
) -> Result<Binning> {
    if n == 0 {
        return Err(Error::invalid("bin count must be at least 1"));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(n - 1);
    let labels: Vec<String> = ranked.into_iter().map(|(l, _)| l.to_string()).collect();
    Ok(Binning::new(
        source,
        BinningKind::CategoricalTopn,
        labels.len() + 1,
        BinParams::Categories { labels },
        None,
    ))
}

pub(crate) fn supervised(source: SourceId, fine: Binning, groups: Vec<usize>, n_bins: usize) -> Binning {
    Binning::new(
        source,
        BinningKind::Supervised,
        n_bins,
        BinParams::Supervised {
            fine: Box::new(fine),
            groups,
        },
        None,
    )
}

/// Fits an unsupervised binning of `source` over the training events. For
/// gps, a dedicated missing bin is appended when some training events lack a
/// fix.
pub fn fit_source(
    source: SourceId,
    kind: BinningKind,
    events: &[&LabeledEvent],
    n: usize,
    seed: u64,
) -> Result<Binning> {
    if !kind.fits(source.shape()) {
        return Err(Error::invalid(format!("discretizer {kind} does not apply to {source}")));
    }
    if events.is_empty() {
        return Err(Error::EmptyTraining);
    }
    let raws = events.iter().map(|e| source.read(&e.context));
    match source.shape() {
        SourceShape::Scalar => {
            let values: Vec<f64> = raws
                .filter_map(|r| match r {
                    RawValue::Scalar(x) => Some(x),
                    _ => None,
                })
                .collect();
            match kind {
                BinningKind::EqualWidth => equal_width_bins(source, &values, n),
                _ => equal_frequency_bins(source, &values, n),
            }
        }
        SourceShape::Point => {
            let mut missing = false;
            let points: Vec<(f64, f64)> = raws
                .filter_map(|r| match r {
                    RawValue::Point(a, b) => Some((a, b)),
                    _ => {
                        missing = true;
                        None
                    }
                })
                .collect();
            let binning = match kind {
                BinningKind::Kmeans => kmeans_bins(source, &points, n, seed)?,
                _ => eqfreq_kmeans_bins(source, &points, n, seed)?,
            };
            Ok(if missing { binning.with_missing_bin() } else { binning })
        }
        SourceShape::Categorical => {
            let labels: Vec<&str> = raws
                .filter_map(|r| match r {
                    RawValue::Label(l) => Some(l),
                    _ => None,
                })
                .collect();
            categorical_topn_bins(source, labels, n)
        }
    }
}

/// Number of distinct raw values of `source` in the events (missing excluded).
pub fn distinct_values(source: SourceId, events: &[&LabeledEvent]) -> usize {
    let mut keys: Vec<String> = events
        .iter()
        .filter_map(|e| match source.read(&e.context) {
            RawValue::Scalar(x) => Some(format!("{:?}", x.to_bits())),
            RawValue::Point(a, b) => Some(format!("{:?}/{:?}", a.to_bits(), b.to_bits())),
            RawValue::Label(l) => Some(l.to_string()),
            RawValue::Missing => None,
        })
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}
