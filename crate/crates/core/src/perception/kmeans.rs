//! Seeded k-means with k-means++ initialization and Lloyd iterations.

use rand::Rng;

use crate::error::{invalid, Result};
use crate::rng::seeded_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans<const D: usize> {
    pub centroids: Vec<[f64; D]>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances after each assignment pass.
    pub objective_history: Vec<f64>,
    pub converged: bool,
}

impl<const D: usize> KMeans<D> {
    pub fn objective(&self) -> f64 {
        self.objective_history.last().copied().unwrap_or(0.0)
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centroids.len()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

#[inline]
pub fn squared_distance<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    let mut s = 0.0;
    for i in 0..D {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

/// Index of the nearest centroid; ties go to the lowest index.
#[inline]
pub fn nearest<const D: usize>(p: &[f64; D], centroids: &[[f64; D]]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_init<const D: usize>(points: &[[f64; D]], k: usize, seed: u64) -> Vec<[f64; D]> {
    let mut rng = seeded_rng(seed);
    let mut chosen = vec![rng.random_range(0..points.len())];
    let mut dist: Vec<f64> = points.iter().map(|p| squared_distance(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in dist.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if r < d {
                        break;
                    }
                    r -= d;
                }
            }
            pick.expect("positive total implies a positive weight")
        } else {
            // every point coincides with a chosen centroid
            (0..points.len()).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            dist[i] = dist[i].min(squared_distance(p, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i]).collect()
}

/// Clusters `points` into `k` groups. Empty clusters keep their previous centroid.
pub fn kmeans<const D: usize>(points: &[[f64; D]], k: usize, seed: u64, max_iter: usize) -> Result<KMeans<D>> {
    if k == 0 {
        return invalid("k must be at least 1");
    }
    if points.len() < k {
        return invalid(format!("k-means needs at least {k} points, got {}", points.len()));
    }
    if points.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
        return invalid("k-means input contains non-finite coordinates");
    }
    let mut centroids = plus_plus_init(points, k, seed);
    let mut assignments = vec![usize::MAX; points.len()];
    let mut history = Vec::new();
    let mut converged = false;
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        let mut objective = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest(p, &centroids);
            objective += d;
            if assignments[i] != j {
                assignments[i] = j;
                changed = true;
            }
        }
        history.push(objective);
        if !changed {
            converged = true;
            break;
        }
        let mut sums = vec![[0.0; D]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for d in 0..D {
                sums[a][d] += p[d];
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                for d in 0..D {
                    centroids[j][d] = sums[j][d] / counts[j] as f64;
                }
            }
        }
    }
    Ok(KMeans { centroids, assignments, objective_history: history, converged })
}
