//! Two-cluster K-means (Lloyd iterations, k-means++ seeding, restarts).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::cluster_distance;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iter: usize,
    /// Lloyd stops once no center moves farther than this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iter: 300,
            tol: 1e-9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterSummary {
    /// Ordered by first coordinate, ties broken by the second.
    pub centers: [Vec<f64>; 2],
    /// `0` or `1` per input point, indexing `centers`.
    pub assignments: Vec<usize>,
    pub distance: f64,
    /// Within-cluster sum of squares.
    pub wcss: f64,
    /// Set when every input point coincides; both centers then equal that point.
    pub degenerate: bool,
}

impl ClusterSummary {
    pub fn cluster_sizes(&self) -> [usize; 2] {
        let ones = self.assignments.iter().filter(|&&a| a == 1).count();
        [self.assignments.len() - ones, ones]
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>; 2]) -> usize {
    usize::from(sq_dist(point, &centers[1]) < sq_dist(point, &centers[0]))
}

pub fn wcss(points: &[Vec<f64>], centers: &[Vec<f64>; 2], assignments: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| sq_dist(p, &centers[a]))
        .sum()
}

/// k-means++ for two centers: uniform first pick, second pick ∝ squared distance.
/// Returns `None` when every point equals the first pick.
fn seed_centers(points: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Option<[Vec<f64>; 2]> {
    let first = points[rng.gen_range(0..points.len())].clone();
    let weights: Vec<f64> = points.iter().map(|p| sq_dist(p, &first)).collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let mut target = rng.gen_range(0.0..total);
    let mut chosen = points.len() - 1;
    for (i, w) in weights.iter().enumerate() {
        if *w > 0.0 && target < *w {
            chosen = i;
            break;
        }
        target -= w;
    }
    // rounding could land on a zero-weight tail; walk back to a positive weight
    while weights[chosen] <= 0.0 {
        chosen -= 1;
    }
    Some([first, points[chosen].clone()])
}

/// One Lloyd run from `centers`. Returns final centers, assignments and the
/// WCSS after every assignment step.
pub fn lloyd(
    points: &[Vec<f64>],
    mut centers: [Vec<f64>; 2],
    max_iter: usize,
    tol: f64,
) -> ([Vec<f64>; 2], Vec<usize>, Vec<f64>) {
    let dim = points[0].len();
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
    let mut history = vec![wcss(points, &centers, &assignments)];
    for _ in 0..max_iter {
        let mut sums = [vec![0.0; dim], vec![0.0; dim]];
        let mut counts = [0usize; 2];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            sums[a].iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }
        let mut shift: f64 = 0.0;
        for c in 0..2 {
            // an emptied cluster keeps its previous center
            if counts[c] == 0 {
                continue;
            }
            let updated: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(sq_dist(&updated, &centers[c]).sqrt());
            centers[c] = updated;
        }
        assignments = points.iter().map(|p| nearest(p, &centers)).collect();
        history.push(wcss(points, &centers, &assignments));
        if shift < tol {
            break;
        }
    }
    (centers, assignments, history)
}

/// Hartigan single-point transfers: moves any point whose reassignment lowers
/// WCSS, updating both means incrementally, until no move helps. Lloyd fixed
/// points are not always local optima under single moves; this closes that gap.
fn refine_transfers(points: &[Vec<f64>], centers: &mut [Vec<f64>; 2], assignments: &mut [usize]) {
    let mut counts = [0usize; 2];
    for &a in assignments.iter() {
        counts[a] += 1;
    }
    if counts[0] == 0 || counts[1] == 0 {
        return;
    }
    // exact means of the current assignment
    for c in 0..2 {
        let mut mean = vec![0.0; points[0].len()];
        for (p, _) in points.iter().zip(assignments.iter()).filter(|(_, &a)| a == c) {
            mean.iter_mut().zip(p).for_each(|(m, x)| *m += x);
        }
        mean.iter_mut().for_each(|m| *m /= counts[c] as f64);
        centers[c] = mean;
    }
    let limit = 100 * points.len();
    for _ in 0..limit {
        let mut moved = false;
        for (i, p) in points.iter().enumerate() {
            let from = assignments[i];
            let to = 1 - from;
            if counts[from] <= 1 {
                continue;
            }
            let (nf, nt) = (counts[from] as f64, counts[to] as f64);
            let gain = nf / (nf - 1.0) * sq_dist(p, &centers[from]);
            let cost = nt / (nt + 1.0) * sq_dist(p, &centers[to]);
            if cost < gain * (1.0 - 1e-12) {
                for (m, x) in centers[from].iter_mut().zip(p) {
                    *m = (*m * nf - x) / (nf - 1.0);
                }
                for (m, x) in centers[to].iter_mut().zip(p) {
                    *m = (*m * nt + x) / (nt + 1.0);
                }
                counts[from] -= 1;
                counts[to] += 1;
                assignments[i] = to;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
}

/// Clusters `points` into two groups, keeping the restart with the lowest WCSS.
/// Each restart is a k-means++ seeding, Lloyd iterations, then single-point
/// transfer refinement.
pub fn kmeans2(points: &[Vec<f64>], cfg: &KMeansConfig) -> Result<ClusterSummary> {
    if points.is_empty() {
        return Err(Error::Precondition("k-means needs at least one point".into()));
    }
    let dim = points[0].len();
    if let Some(bad) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::Shape {
            expected: dim,
            actual: bad.len(),
        });
    }
    if cfg.restarts == 0 {
        return Err(Error::Config("k-means needs at least one restart".into()));
    }

    let mut best: Option<([Vec<f64>; 2], Vec<usize>, f64)> = None;
    for restart in 0..cfg.restarts {
        let mut rng = rng::rng_for(cfg.seed, &[rng::stream::KMEANS, restart as u64]);
        let Some(init) = seed_centers(points, &mut rng) else {
            return Ok(ClusterSummary {
                centers: [points[0].clone(), points[0].clone()],
                assignments: vec![0; points.len()],
                distance: 0.0,
                wcss: 0.0,
                degenerate: true,
            });
        };
        let (mut centers, mut assignments, _) = lloyd(points, init, cfg.max_iter, cfg.tol);
        refine_transfers(points, &mut centers, &mut assignments);
        let score = wcss(points, &centers, &assignments);
        if best.as_ref().is_none_or(|(_, _, s)| score < *s) {
            best = Some((centers, assignments, score));
        }
    }
    let (centers, mut assignments, score) = best.expect("at least one restart ran");

    let swap = centers[0][..].partial_cmp(&centers[1][..]) == Some(std::cmp::Ordering::Greater);
    let centers = if swap {
        assignments.iter_mut().for_each(|a| *a = 1 - *a);
        let [a, b] = centers;
        [b, a]
    } else {
        centers
    };
    let distance = cluster_distance(&centers[0], &centers[1])?;
    Ok(ClusterSummary {
        centers,
        assignments,
        distance,
        wcss: score,
        degenerate: false,
    })
}
