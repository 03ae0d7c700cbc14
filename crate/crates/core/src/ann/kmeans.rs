use log::trace;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{l2_sq, record_training_run};
use crate::error::{Error, Result};

/// Relative distortion improvement below which Lloyd iterations stop.
const CONVERGENCE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansModel {
    pub dim: usize,
    /// Row-major `k x dim`.
    pub centroids: Vec<f32>,
    /// Mean squared distance of the training points to their centroid.
    pub distortion: f64,
    /// Distortion after every assignment step, starting with the seeding.
    pub trace: Vec<f64>,
}

impl KMeansModel {
    pub fn k(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn centroid(&self, i: usize) -> &[f32] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    pub fn assign(&self, point: &[f32]) -> (usize, f32) {
        nearest(&self.centroids, self.dim, point)
    }
}

/// Nearest row of `centroids`; ties go to the lower index.
pub(crate) fn nearest(centroids: &[f32], dim: usize, point: &[f32]) -> (usize, f32) {
    let mut best = (0, f32::INFINITY);
    for (i, c) in centroids.chunks_exact(dim).enumerate() {
        let d = l2_sq(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn assign_all(points: &[f32], dim: usize, centroids: &[f32]) -> Vec<(usize, f32)> {
    points
        .par_chunks_exact(dim)
        .map(|p| nearest(centroids, dim, p))
        .collect()
}

fn mean_distortion(assignment: &[(usize, f32)]) -> f64 {
    assignment.iter().map(|&(_, d)| d as f64).sum::<f64>() / assignment.len() as f64
}

/// k-means++ seeding followed by Lloyd iterations.
///
/// Stops after `max_iters` updates or once the relative distortion change
/// drops below 1e-6. Clusters left empty are reseeded to the points farthest
/// from their centroids. Deterministic for a given seed.
pub fn kmeans_fit(points: &[f32], dim: usize, k: usize, max_iters: usize, seed: u64) -> Result<KMeansModel> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(Error::invalid(format!(
            "point buffer of length {} is not a multiple of dim {dim}",
            points.len()
        )));
    }
    let n = points.len() / dim;
    if k == 0 {
        return Err(Error::invalid("k-means needs k >= 1"));
    }
    if n < k {
        return Err(Error::NotEnoughData { required: k, got: n });
    }
    record_training_run();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, dim, k, &mut rng);
    let mut assignment = assign_all(points, dim, &centroids);
    let mut distortion = mean_distortion(&assignment);
    let mut trace = vec![distortion];

    for iter in 0..max_iters {
        if distortion == 0.0 {
            break;
        }
        let updated = update_centroids(points, dim, k, &assignment, &centroids);
        let next_assignment = assign_all(points, dim, &updated);
        let next = mean_distortion(&next_assignment);
        if next > distortion {
            // only reachable through f32 rounding of the means
            break;
        }
        let converged = (distortion - next) <= CONVERGENCE_TOL * distortion;
        centroids = updated;
        assignment = next_assignment;
        distortion = next;
        trace.push(distortion);
        trace!("kmeans k={k} iter {iter}: distortion {distortion:.6e}");
        if converged {
            break;
        }
    }

    Ok(KMeansModel {
        dim,
        centroids,
        distortion,
        trace,
    })
}

fn plus_plus_init(points: &[f32], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = points.len() / dim;
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut chosen = vec![false; n];
    let mut centroids = Vec::with_capacity(k * dim);

    let first = rng.random_range(0..n);
    chosen[first] = true;
    centroids.extend_from_slice(row(first));
    let mut d2: Vec<f64> = points
        .par_chunks_exact(dim)
        .map(|p| l2_sq(p, row(first)) as f64)
        .collect();

    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave the walk short of `target`
            pick.unwrap_or_else(|| (0..n).rev().find(|&i| d2[i] > 0.0).expect("total > 0"))
        } else {
            (0..n).find(|&i| !chosen[i]).expect("n >= k")
        };
        chosen[next] = true;
        let c = row(next).to_vec();
        d2.par_iter_mut()
            .zip(points.par_chunks_exact(dim))
            .for_each(|(d, p)| *d = d.min(l2_sq(p, &c) as f64));
        centroids.extend_from_slice(&c);
    }
    centroids
}

fn update_centroids(
    points: &[f32],
    dim: usize,
    k: usize,
    assignment: &[(usize, f32)],
    previous: &[f32],
) -> Vec<f32> {
    let mut sums = vec![0f64; k * dim];
    let mut counts = vec![0usize; k];
    for (p, &(c, _)) in points.chunks_exact(dim).zip(assignment) {
        counts[c] += 1;
        for (s, &v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(p) {
            *s += v as f64;
        }
    }

    let mut out = previous.to_vec();
    let mut empty = Vec::new();
    for c in 0..k {
        if counts[c] == 0 {
            empty.push(c);
            continue;
        }
        let inv = 1.0 / counts[c] as f64;
        for (o, s) in out[c * dim..(c + 1) * dim].iter_mut().zip(&sums[c * dim..]) {
            *o = (s * inv) as f32;
        }
    }
    if !empty.is_empty() {
        let mut far: Vec<usize> = (0..assignment.len()).collect();
        far.sort_by(|&a, &b| assignment[b].1.total_cmp(&assignment[a].1).then(a.cmp(&b)));
        for (c, &p) in empty.iter().zip(&far) {
            out[c * dim..(c + 1) * dim].copy_from_slice(&points[p * dim..(p + 1) * dim]);
        }
    }
    out
}
