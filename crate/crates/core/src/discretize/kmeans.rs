//! Lloyd's k-means with farthest-point seeding, and the equal-size peeling
//! variant used for location.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 100;
pub const CONVERGENCE_TOL: f64 = 1e-9;
/// Meters per degree of latitude.
pub const METERS_PER_DEGREE: f64 = 111_320.0;
/// Peeled clusters tighter than this are not forced to the equal size.
pub const MIN_CLUSTER_RADIUS_M: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansFit {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub iterations: usize,
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lower index.
pub(crate) fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

pub(crate) fn distinct_count(points: &[Vec<f64>]) -> usize {
    let mut keys: Vec<Vec<u64>> = points
        .iter()
        .map(|p| p.iter().map(|x| (x + 0.0).to_bits()).collect())
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

fn mean(points: &[Vec<f64>], members: impl Iterator<Item = usize>) -> Option<Vec<f64>> {
    let dim = points.first()?.len();
    let mut acc = vec![0.0; dim];
    let mut n = 0usize;
    for i in members {
        for (a, x) in acc.iter_mut().zip(&points[i]) {
            *a += x;
        }
        n += 1;
    }
    if n == 0 {
        return None;
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    Some(acc)
}

/// Number of seeded k-means++ starts; the fit with the least weighted
/// inertia is kept.
pub const RESTARTS: usize = 8;

/// k-means++ seeding: each next centroid is drawn with probability
/// proportional to weight times squared distance to the nearest chosen one.
fn seed_centroids(points: &[Vec<f64>], weights: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let pick = |w: &[f64], rng: &mut ChaCha8Rng| -> usize {
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            return rng.gen_range(0..w.len());
        }
        let mut u = rng.gen::<f64>() * total;
        for (i, x) in w.iter().enumerate() {
            if u < *x {
                return i;
            }
            u -= x;
        }
        w.iter().rposition(|&x| x > 0.0).unwrap_or(0)
    };
    let first = pick(weights, rng);
    let mut centroids = vec![points[first].clone()];
    let mut min_d: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[first])).collect();
    while centroids.len() < k {
        let w: Vec<f64> = min_d.iter().zip(weights).map(|(d, w)| d * w).collect();
        let next = if w.iter().any(|&x| x > 0.0) {
            pick(&w, rng)
        } else {
            // every weighted point coincides with a centroid; take any distinct point
            min_d.iter().position(|&d| d > 0.0).unwrap_or(0)
        };
        let c = points[next].clone();
        for (d, p) in min_d.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn lloyd_from(points: &[Vec<f64>], weights: &[f64], mut centroids: Vec<Vec<f64>>) -> KmeansFit {
    let k = centroids.len();
    let dim = points[0].len();
    let mut assignments = vec![0; points.len()];
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        for (a, p) in assignments.iter_mut().zip(points) {
            *a = nearest(p, &centroids);
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut sizes = vec![0.0f64; k];
        for ((&a, p), &w) in assignments.iter().zip(points).zip(weights) {
            sizes[a] += w;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += w * x;
            }
        }
        let mut moved: f64 = 0.0;
        for ((centroid, mut sum), n) in centroids.iter_mut().zip(sums).zip(sizes) {
            // empty clusters keep their centroid
            if !(n > 0.0) {
                continue;
            }
            sum.iter_mut().for_each(|s| *s /= n);
            moved = moved.max(sq_dist(&sum, centroid).sqrt());
            *centroid = sum;
        }
        if moved < CONVERGENCE_TOL {
            break;
        }
    }
    for (a, p) in assignments.iter_mut().zip(points) {
        *a = nearest(p, &centroids);
    }
    KmeansFit {
        centroids,
        assignments,
        iterations,
    }
}

fn inertia(points: &[Vec<f64>], weights: &[f64], fit: &KmeansFit) -> f64 {
    points
        .iter()
        .zip(weights)
        .zip(&fit.assignments)
        .map(|((p, w), &a)| w * sq_dist(p, &fit.centroids[a]))
        .sum()
}

/// Lloyd's iteration from [`RESTARTS`] k-means++ starts, each run until no
/// centroid moves more than [`CONVERGENCE_TOL`] or [`MAX_ITERATIONS`] is
/// reached.
pub fn lloyd(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KmeansFit> {
    lloyd_weighted(points, &vec![1.0; points.len()], k, seed)
}

/// [`lloyd`] where each point counts with a non-negative weight.
pub fn lloyd_weighted(points: &[Vec<f64>], weights: &[f64], k: usize, seed: u64) -> Result<KmeansFit> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if weights.len() != points.len() || weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::invalid("weights must be finite, non-negative and one per point"));
    }
    let distinct = distinct_count(points);
    if distinct < k {
        return Err(Error::TooFewDistinct {
            requested: k,
            distinct,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, KmeansFit)> = None;
    for _ in 0..RESTARTS {
        let fit = lloyd_from(points, weights, seed_centroids(points, weights, k, &mut rng));
        let j = inertia(points, weights, &fit);
        if best.as_ref().is_none_or(|(b, _)| j < *b) {
            best = Some((j, fit));
        }
    }
    Ok(best.map(|(_, f)| f).expect("at least one restart"))
}

/// Result of equal-size peeling. Clusters emptied by relaxation have no centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct PeelFit {
    pub centroids: Vec<Option<Vec<f64>>>,
    pub assignments: Vec<usize>,
    pub relaxed: bool,
}

/// Equal-size clustering by repeated peeling: cluster the remaining points,
/// take the biggest cluster, give it the `ceil(remaining / clusters_left)`
/// points nearest its mean, and repeat on the rest.
///
/// The size constraint gives way when a peel would separate coincident points
/// or when the peeled cluster is tighter than `min_radius` (same units as the
/// points); all remaining points within that radius of the mean join it.
pub fn equal_size_peel(points: &[Vec<f64>], k: usize, seed: u64, min_radius: f64) -> Result<PeelFit> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if points.is_empty() {
        return Err(Error::TooFewDistinct {
            requested: k,
            distinct: 0,
        });
    }
    let mut assignments = vec![usize::MAX; points.len()];
    let mut centroids = Vec::with_capacity(k);
    let mut remaining: Vec<usize> = (0..points.len()).collect();
    let mut relaxed = false;
    for cluster in 0..k {
        let left = k - cluster;
        if remaining.is_empty() {
            centroids.push(None);
            continue;
        }
        if left == 1 {
            for &i in &remaining {
                assignments[i] = cluster;
            }
            centroids.push(mean(points, remaining.iter().copied()));
            remaining.clear();
            continue;
        }
        let subset: Vec<Vec<f64>> = remaining.iter().map(|&i| points[i].clone()).collect();
        let k_sub = left.min(distinct_count(&subset));
        let fit = lloyd(&subset, k_sub, seed.wrapping_add(cluster as u64))?;
        let mut sizes = vec![0usize; k_sub];
        for &a in &fit.assignments {
            sizes[a] += 1;
        }
        let biggest = (0..k_sub).fold(0, |b, c| if sizes[c] > sizes[b] { c } else { b });
        let center = &fit.centroids[biggest];
        let target = remaining.len().div_ceil(left);

        let mut order: Vec<usize> = (0..remaining.len()).collect();
        order.sort_by(|&a, &b| {
            sq_dist(&subset[a], center)
                .total_cmp(&sq_dist(&subset[b], center))
                .then(a.cmp(&b))
        });
        let mut taken = vec![false; remaining.len()];
        for &o in order.iter().take(target) {
            taken[o] = true;
        }
        // Coincident points stay together.
        let mut taken_keys: Vec<Vec<u64>> = (0..remaining.len())
            .filter(|&o| taken[o])
            .map(|o| subset[o].iter().map(|x| (x + 0.0).to_bits()).collect())
            .collect();
        taken_keys.sort_unstable();
        for o in 0..remaining.len() {
            let key: Vec<u64> = subset[o].iter().map(|x| (x + 0.0).to_bits()).collect();
            if !taken[o] && taken_keys.binary_search(&key).is_ok() {
                taken[o] = true;
                relaxed = true;
            }
        }
        let members: Vec<usize> = (0..remaining.len()).filter(|&o| taken[o]).collect();
        let m = mean(&subset, members.iter().copied()).expect("non-empty peel");
        let radius = members
            .iter()
            .map(|&o| sq_dist(&subset[o], &m).sqrt())
            .fold(0.0, f64::max);
        if radius < min_radius {
            for o in 0..remaining.len() {
                if !taken[o] && sq_dist(&subset[o], &m).sqrt() < min_radius {
                    taken[o] = true;
                    relaxed = true;
                }
            }
        }
        let members: Vec<usize> = (0..remaining.len()).filter(|&o| taken[o]).collect();
        for &o in &members {
            assignments[remaining[o]] = cluster;
        }
        centroids.push(mean(&subset, members.iter().copied()));
        remaining = (0..remaining.len())
            .filter(|&o| !taken[o])
            .map(|o| remaining[o])
            .collect();
    }
    Ok(PeelFit {
        centroids,
        assignments,
        relaxed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[(f64, f64)]) -> Vec<Vec<f64>> {
        v.iter().map(|&(a, b)| vec![a, b]).collect()
    }

    #[test]
    fn single_cluster_is_mean() {
        let p = pts(&[(0.0, 0.0), (2.0, 0.0), (4.0, 3.0)]);
        let fit = lloyd(&p, 1, 7).unwrap();
        assert!((fit.centroids[0][0] - 2.0).abs() < 1e-12);
        assert!((fit.centroids[0][1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_distinct() {
        let p = pts(&[(1.0, 1.0), (1.0, 1.0)]);
        assert!(matches!(lloyd(&p, 2, 0), Err(Error::TooFewDistinct { requested: 2, distinct: 1 })));
    }

    #[test]
    fn seeded_runs_identical() {
        let p: Vec<Vec<f64>> = (0..50).map(|i| vec![(i * 7 % 13) as f64, (i * 3 % 11) as f64]).collect();
        let a = lloyd(&p, 4, 99).unwrap();
        let b = lloyd(&p, 4, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn peel_sizes_ceil() {
        let p: Vec<Vec<f64>> = (0..10).map(|i| vec![(i * i) as f64 * 0.37, (i % 3) as f64]).collect();
        let fit = equal_size_peel(&p, 3, 5, 0.0).unwrap();
        let mut sizes = vec![0; 3];
        for a in fit.assignments {
            sizes[a] += 1;
        }
        assert_eq!(sizes, [4, 3, 3]);
        assert!(!fit.relaxed);
    }

    #[test]
    fn peel_identical_points_relaxes() {
        let p = pts(&[(1.0, 1.0); 6]);
        let fit = equal_size_peel(&p, 2, 0, 0.0).unwrap();
        assert!(fit.relaxed);
        assert!(fit.assignments.iter().all(|&a| a == 0));
        assert!(fit.centroids[1].is_none());
    }
}
