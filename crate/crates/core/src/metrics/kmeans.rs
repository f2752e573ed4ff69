//! Seeded k-means (k-means++ initialization, Lloyd iterations) for the
//! diversity metric.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

pub struct KMeans {
    pub centroids: Array2<f64>,
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

impl KMeans {
    pub fn fit(frames: &ArrayView2<'_, f64>, k: usize, seed: u64, max_iters: usize) -> Result<Self> {
        if k <= 1 {
            return Err(Error::Domain(format!("k must be at least 2, got {k}")));
        }
        let n = frames.nrows();
        if n < k {
            return Err(Error::Domain(format!(
                "need at least {k} frames to fit {k} clusters, got {n}"
            )));
        }
        let d = frames.ncols();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);

        // k-means++ seeding
        let mut centroids = Array2::zeros((k, d));
        let first = rng.gen_range(0..n);
        centroids.row_mut(0).assign(&frames.row(first));
        let mut dist_sq: Vec<f64> = (0..n)
            .map(|i| sq_dist(frames.row(i), centroids.row(0)))
            .collect();
        for c in 1..k {
            let total: f64 = dist_sq.iter().sum();
            let pick = if total > 0.0 {
                let mut target = rng.gen_range(0.0..total);
                let mut chosen = n - 1;
                for (i, &w) in dist_sq.iter().enumerate() {
                    if target < w {
                        chosen = i;
                        break;
                    }
                    target -= w;
                }
                chosen
            } else {
                rng.gen_range(0..n)
            };
            centroids.row_mut(c).assign(&frames.row(pick));
            for (i, best) in dist_sq.iter_mut().enumerate() {
                let dcur = sq_dist(frames.row(i), centroids.row(c));
                if dcur < *best {
                    *best = dcur;
                }
            }
        }

        let mut km = KMeans { centroids };
        let mut assignment = vec![0usize; n];
        for _ in 0..max_iters {
            let mut changed = false;
            for (i, slot) in assignment.iter_mut().enumerate() {
                let a = km.assign(frames.row(i));
                if a != *slot {
                    *slot = a;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            let mut sums = Array2::<f64>::zeros((k, d));
            let mut counts = vec![0usize; k];
            for i in 0..n {
                counts[assignment[i]] += 1;
                for j in 0..d {
                    sums[(assignment[i], j)] += frames[(i, j)];
                }
            }
            for c in 0..k {
                if counts[c] > 0 {
                    for j in 0..d {
                        km.centroids[(c, j)] = sums[(c, j)] / counts[c] as f64;
                    }
                }
                // empty clusters keep their centroid
            }
        }
        Ok(km)
    }

    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn assign(&self, frame: ArrayView1<'_, f64>) -> usize {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (c, centroid) in self.centroids.rows().into_iter().enumerate() {
            let d = sq_dist(frame, centroid);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        best
    }
}

/// Histogram entropy -sum p ln p of cluster assignments of one sequence.
pub fn cluster_entropy(km: &KMeans, sequence: &ArrayView2<'_, f64>) -> f64 {
    let mut counts = vec![0usize; km.k()];
    for row in sequence.rows() {
        counts[km.assign(row)] += 1;
    }
    let n = sequence.nrows() as f64;
    let entropy: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    // a single occupied cluster yields -0.0
    entropy.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Well-separated blobs around integer corners.
    fn blobs(centers: &[[f64; 2]], per: usize) -> Array2<f64> {
        let mut out = Array2::zeros((centers.len() * per, 2));
        for (c, center) in centers.iter().enumerate() {
            for i in 0..per {
                let jitter = (i as f64 * 0.017) % 0.05;
                out[(c * per + i, 0)] = center[0] + jitter;
                out[(c * per + i, 1)] = center[1] - jitter;
            }
        }
        out
    }

    #[test]
    fn recovers_separated_clusters() {
        let frames = blobs(&[[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]], 20);
        let km = KMeans::fit(&frames.view(), 3, 1, 100).unwrap();
        // every blob maps to a single cluster id, all distinct
        let ids: Vec<usize> = (0..3).map(|c| km.assign(frames.row(c * 20))).collect();
        assert_eq!(
            {
                let mut s = ids.clone();
                s.sort();
                s.dedup();
                s.len()
            },
            3
        );
        for c in 0..3 {
            for i in 0..20 {
                assert_eq!(km.assign(frames.row(c * 20 + i)), ids[c]);
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let frames = blobs(&[[0.0, 0.0], [5.0, 5.0]], 30);
        let a = KMeans::fit(&frames.view(), 2, 9, 100).unwrap();
        let b = KMeans::fit(&frames.view(), 2, 9, 100).unwrap();
        assert_eq!(a.centroids, b.centroids);
    }

    #[test]
    fn k_of_one_rejected() {
        let frames = blobs(&[[0.0, 0.0]], 10);
        assert!(KMeans::fit(&frames.view(), 1, 0, 10).is_err());
    }
}
