//! Deterministic Lloyd k-means for codebook fitting.
//!
//! Initial centroids are k distinct points sampled with the portable RNG.
//! Assignment runs in parallel; centroid updates and the empty-cluster rule
//! run sequentially in index order so the result is independent of thread
//! count. An empty cluster is reseeded from the point currently farthest
//! from its assigned centroid (lowest index on ties); exact duplicate
//! centroids after the final iteration are reseeded the same way. When the
//! data has fewer distinct points than k, the remaining duplicates collapse
//! and fewer than k centroids come back, so the result is always a valid
//! codebook.

use crate::par;
use crate::rng::{rng_from_seed, sample_without_replacement};

/// Clusters `points` (n × dim, row-major) into up to `k` centroids.
///
/// Returns row-major centroids, all distinct. `k` is clamped to n, and the
/// output shrinks further if the data has fewer distinct points.
pub fn kmeans(points: &[f32], dim: usize, k: usize, iters: usize, seed: u64) -> Vec<f32> {
    assert!(dim > 0 && points.len() % dim == 0, "points must be rows of dim {dim}");
    let n = points.len() / dim;
    assert!(n > 0, "kmeans needs at least one point");
    let k = k.min(n);

    let mut rng = rng_from_seed(seed);
    let mut centroids = vec![0.0f32; k * dim];
    for (slot, ix) in sample_without_replacement(&mut rng, n, k).into_iter().enumerate() {
        centroids[slot * dim..(slot + 1) * dim].copy_from_slice(&points[ix * dim..(ix + 1) * dim]);
    }

    let mut assignment = vec![0usize; n];
    for _ in 0..iters {
        assign(points, dim, &centroids, &mut assignment);
        update(points, dim, k, &assignment, &mut centroids);
        reseed_empty(points, dim, k, &mut assignment, &mut centroids);
    }
    assign(points, dim, &centroids, &mut assignment);
    reseed_duplicates(points, dim, k, &mut assignment, &mut centroids);
    drop_duplicate_rows(&centroids, dim)
}

/// Keeps the first occurrence of each distinct row.
fn drop_duplicate_rows(centroids: &[f32], dim: usize) -> Vec<f32> {
    let k = centroids.len() / dim;
    let mut out = Vec::with_capacity(centroids.len());
    for c in 0..k {
        let row = &centroids[c * dim..(c + 1) * dim];
        let duplicate = out.chunks_exact(dim).any(|kept| kept == row);
        if !duplicate {
            out.extend_from_slice(row);
        }
    }
    out
}

fn assign(points: &[f32], dim: usize, centroids: &[f32], assignment: &mut [usize]) {
    let k = centroids.len() / dim;
    let next = par::map_indexed(assignment.len(), |i| {
        let p = &points[i * dim..(i + 1) * dim];
        let mut best = 0usize;
        let mut best_dist = f64::INFINITY;
        for c in 0..k {
            let row = &centroids[c * dim..(c + 1) * dim];
            let mut dist = 0.0f64;
            for (a, b) in p.iter().zip(row) {
                let d = (*a - *b) as f64;
                dist += d * d;
            }
            if dist < best_dist {
                best_dist = dist;
                best = c;
            }
        }
        best
    });
    assignment.copy_from_slice(&next);
}

fn update(points: &[f32], dim: usize, k: usize, assignment: &[usize], centroids: &mut [f32]) {
    let mut sums = vec![0.0f64; k * dim];
    let mut counts = vec![0u64; k];
    for (i, c) in assignment.iter().enumerate() {
        counts[*c] += 1;
        let p = &points[i * dim..(i + 1) * dim];
        let s = &mut sums[*c * dim..(*c + 1) * dim];
        for (acc, v) in s.iter_mut().zip(p) {
            *acc += *v as f64;
        }
    }
    for c in 0..k {
        if counts[c] == 0 {
            continue; // handled by reseed_empty
        }
        for d in 0..dim {
            centroids[c * dim + d] = (sums[c * dim + d] / counts[c] as f64) as f32;
        }
    }
}

fn point_distances(points: &[f32], dim: usize, centroids: &[f32], assignment: &[usize]) -> Vec<f64> {
    par::map_indexed(assignment.len(), |i| {
        let p = &points[i * dim..(i + 1) * dim];
        let row = &centroids[assignment[i] * dim..(assignment[i] + 1) * dim];
        p.iter()
            .zip(row)
            .map(|(a, b)| {
                let d = (*a - *b) as f64;
                d * d
            })
            .sum()
    })
}

fn reseed_empty(points: &[f32], dim: usize, k: usize, assignment: &mut [usize], centroids: &mut [f32]) {
    let mut counts = vec![0u64; k];
    for c in assignment.iter() {
        counts[*c] += 1;
    }
    if counts.iter().all(|c| *c > 0) {
        return;
    }
    let mut dists = point_distances(points, dim, centroids, assignment);
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let (far_ix, _) = dists
            .iter()
            .enumerate()
            .fold((0usize, -1.0f64), |acc, (i, d)| if *d > acc.1 { (i, *d) } else { acc });
        centroids[c * dim..(c + 1) * dim].copy_from_slice(&points[far_ix * dim..(far_ix + 1) * dim]);
        counts[assignment[far_ix]] -= 1;
        assignment[far_ix] = c;
        counts[c] = 1;
        dists[far_ix] = -2.0; // consumed
    }
}

fn reseed_duplicates(points: &[f32], dim: usize, k: usize, assignment: &mut [usize], centroids: &mut [f32]) {
    loop {
        let mut dup = None;
        'outer: for a in 0..k {
            for b in a + 1..k {
                if centroids[a * dim..(a + 1) * dim] == centroids[b * dim..(b + 1) * dim] {
                    dup = Some(b);
                    break 'outer;
                }
            }
        }
        let Some(b) = dup else { break };
        let dists = point_distances(points, dim, centroids, assignment);
        let (far_ix, far_d) = dists
            .iter()
            .enumerate()
            .fold((0usize, -1.0f64), |acc, (i, d)| if *d > acc.1 { (i, *d) } else { acc });
        if far_d <= 0.0 {
            // Fewer distinct points than centroids; nothing more to separate.
            break;
        }
        centroids[b * dim..(b + 1) * dim].copy_from_slice(&points[far_ix * dim..(far_ix + 1) * dim]);
        assignment[far_ix] = b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::sample_standard_normal;

    fn blob_points(seed: u64) -> Vec<f32> {
        // Three well-separated 2-d blobs.
        let mut rng = rng_from_seed(seed);
        let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let mut points = Vec::new();
        for (i, c) in centers.iter().cycle().take(90).enumerate() {
            let _ = i;
            points.push(c[0] as f32 + sample_standard_normal(&mut rng) as f32 * 0.3);
            points.push(c[1] as f32 + sample_standard_normal(&mut rng) as f32 * 0.3);
        }
        points
    }

    #[test]
    fn recovers_separated_blobs() {
        let points = blob_points(4);
        let centroids = kmeans(&points, 2, 3, 20, 7);
        let mut found = [false; 3];
        let truth = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        for c in 0..3 {
            for (ti, t) in truth.iter().enumerate() {
                let dx = centroids[c * 2] as f64 - t[0];
                let dy = centroids[c * 2 + 1] as f64 - t[1];
                if (dx * dx + dy * dy).sqrt() < 1.0 {
                    found[ti] = true;
                }
            }
        }
        assert!(found.iter().all(|f| *f), "centroids {centroids:?}");
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let points = blob_points(4);
        let a = kmeans(&points, 2, 5, 20, 31);
        let b = kmeans(&points, 2, 5, 20, 31);
        assert_eq!(a, b);
    }

    #[test]
    fn more_centroids_than_distinct_points_collapses() {
        let points = vec![1.0f32, 1.0, 1.0, 1.0, 2.0, 2.0];
        let centroids = kmeans(&points, 2, 5, 10, 3);
        assert_eq!(centroids.len() / 2, 2); // only two distinct points exist
    }

    #[test]
    fn duplicate_identical_points_yield_distinct_centroids() {
        let mut points = vec![0.5f32; 40]; // 20 identical 2-d points
        points.extend_from_slice(&[3.0, 3.0]);
        let centroids = kmeans(&points, 2, 4, 10, 3);
        assert_eq!(centroids.len() / 2, 2);
        assert_ne!(&centroids[0..2], &centroids[2..4]);
    }
}
