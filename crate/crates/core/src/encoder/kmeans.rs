//! Seeded Lloyd k-means with k-means++ seeding.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug)]
pub struct KMeansParams {
    pub max_iterations: usize,
    /// Stop once the largest center move, relative to the largest center
    /// norm, drops to this value.
    pub tolerance: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams {
            max_iterations: 100,
            tolerance: 1e-6,
        }
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Distinct points in order of first occurrence.
pub fn distinct(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for p in points {
        if !out.iter().any(|q| q == p) {
            out.push(p.clone());
        }
    }
    out
}

/// Clusters `points` into `k` groups and returns the centers.
///
/// When there are at most `k` distinct points they are returned as the
/// centers directly.
pub fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    params: KMeansParams,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    if points.is_empty() || k == 0 {
        return Vec::new();
    }
    let uniq = distinct(points);
    if uniq.len() <= k {
        return uniq;
    }

    let mut centers = plus_plus_init(points, k, rng);
    let dim = points[0].len();
    let mut assignment = vec![0usize; points.len()];
    for _ in 0..params.max_iterations {
        for (a, p) in assignment.iter_mut().zip(points) {
            *a = nearest(p, &centers).0;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut max_shift: f64 = 0.0;
        let mut max_norm: f64 = 0.0;
        for ((center, sum), &n) in centers.iter_mut().zip(&sums).zip(&counts) {
            max_norm = max_norm.max(center.iter().map(|v| v * v).sum::<f64>().sqrt());
            if n == 0 {
                // empty cluster keeps its previous center
                continue;
            }
            let next: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
            max_shift = max_shift.max(sq_dist(&next, center).sqrt());
            *center = next;
        }
        if max_shift <= params.tolerance * max_norm.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    centers
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.gen_range(0..points.len())].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = d2.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if *d > 0.0 && target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.gen_range(0..points.len())
        };
        centers.push(points[idx].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, centers.last().unwrap()));
        }
    }
    centers
}
