//! Spherical k-means over unit vectors, seeded k-means++ initialization.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embed::dot;
use crate::par::Execution;

pub const DEFAULT_MAX_ITERS: usize = 25;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Copy)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iters: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Row-major `k x dim`, each row unit length (or zero for a degenerate cluster).
    pub centroids: Vec<f32>,
    pub assignments: Vec<u32>,
    pub iterations: usize,
}

/// Index of the centroid with the highest dot product; ties go to the lower index.
pub fn nearest_centroid(centroids: &[f32], dim: usize, v: &[f32]) -> u32 {
    let mut best = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for (c, row) in centroids.chunks_exact(dim).enumerate() {
        let s = dot(row, v);
        if s > best_score {
            best = c;
            best_score = s;
        }
    }
    best as u32
}

fn normalize_in_place(row: &mut [f32]) {
    let norm = dot(row, row).sqrt();
    if norm > 0.0 {
        for x in row.iter_mut() {
            *x = (f64::from(*x) / norm) as f32;
        }
    }
}

/// Clusters `n = data.len() / dim` unit vectors.
///
/// Assignment runs through `exec`; centroid updates are a sequential reduction so the
/// result is bit-identical regardless of the execution strategy.
pub fn kmeans(data: &[f32], dim: usize, params: KMeansParams, exec: Execution) -> KMeansResult {
    let n = data.len() / dim;
    let k = params.k.clamp(1, n.max(1));
    if n == 0 {
        return KMeansResult {
            centroids: vec![0.0; k * dim],
            assignments: Vec::new(),
            iterations: 0,
        };
    }
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    // k-means++ with cosine distance 1 - dot.
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(row(first));
    let mut min_dist: Vec<f64> = (0..n).map(|i| (1.0 - dot(row(i), row(first))).max(0.0)).collect();
    for _ in 1..k {
        let next = match WeightedIndex::new(&min_dist) {
            Ok(w) => w.sample(&mut rng),
            // All remaining distances are zero: duplicates only.
            Err(_) => rng.gen_range(0..n),
        };
        centroids.extend_from_slice(row(next));
        for (i, d) in min_dist.iter_mut().enumerate() {
            *d = d.min((1.0 - dot(row(i), row(next))).max(0.0));
        }
    }

    let mut assignments = vec![u32::MAX; n];
    let mut iterations = 0;
    for _ in 0..params.max_iters.max(1) {
        iterations += 1;
        let next = exec.map_range(n, |i| nearest_centroid(&centroids, dim, row(i)));
        let changed = next != assignments;
        assignments = next;
        if !changed {
            break;
        }

        let mut sums = vec![0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &a) in assignments.iter().enumerate() {
            let a = a as usize;
            counts[a] += 1;
            for (s, &x) in sums[a * dim..(a + 1) * dim].iter_mut().zip(row(i)) {
                *s += f64::from(x);
            }
        }
        for c in 0..k {
            let dst = &mut centroids[c * dim..(c + 1) * dim];
            if counts[c] == 0 {
                // Empty cluster keeps its previous centroid.
                continue;
            }
            for (d, s) in dst.iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                *d = *s as f32;
            }
            normalize_in_place(dst);
        }
    }

    KMeansResult {
        centroids,
        assignments,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: &[f32]) -> Vec<f32> {
        let mut v = v.to_vec();
        normalize_in_place(&mut v);
        v
    }

    #[test]
    fn separates_obvious_clusters() {
        let mut data = Vec::new();
        for i in 0..20 {
            let eps = i as f32 * 0.001;
            data.extend(unit(&[1.0, eps, 0.0]));
            data.extend(unit(&[0.0, eps, 1.0]));
        }
        let r = kmeans(
            &data,
            3,
            KMeansParams {
                k: 2,
                max_iters: 25,
                seed: 7,
            },
            Execution::default(),
        );
        for pair in r.assignments.chunks(2) {
            assert_ne!(pair[0], pair[1]);
        }
        let first = r.assignments[0];
        assert!(r.assignments.iter().step_by(2).all(|&a| a == first));
    }

    #[test]
    fn execution_strategy_does_not_change_result() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dim = 16;
        let data: Vec<f32> = (0..300)
            .flat_map(|_| unit(&(0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f32>>()))
            .collect();
        let p = KMeansParams {
            k: 10,
            max_iters: 25,
            seed: 1,
        };
        let a = kmeans(&data, dim, p, Execution::Sequential);
        let b = kmeans(&data, dim, p, Execution::Parallel);
        assert_eq!(a, b);
    }

    #[test]
    fn k_is_clamped_to_n() {
        let data = unit(&[1.0, 0.0]);
        let r = kmeans(
            &data,
            2,
            KMeansParams {
                k: 5,
                max_iters: 3,
                seed: 0,
            },
            Execution::Sequential,
        );
        assert_eq!(r.centroids.len(), 2);
        assert_eq!(r.assignments, vec![0]);
    }
}
