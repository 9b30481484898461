//! Seeded k-means for the surrogate pretraining targets.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::AvsepError;
use crate::Result;

/// Run k-means with k-means++ seeding for a fixed number of iterations.
/// Returns the centroids (k x dim) and per-row assignments.
pub fn kmeans(data: &Array2<f64>, k: usize, seed: u64, iters: usize) -> Result<(Array2<f64>, Vec<usize>)> {
    let n = data.nrows();
    let dim = data.ncols();
    if n < k {
        return Err(AvsepError::Corpus(format!(
            "{n} frames cannot support {k} clusters"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding.
    let mut centroids = Array2::zeros((k, dim));
    let first = rng.gen_range(0..n);
    centroids.row_mut(0).assign(&data.row(first));
    let mut dist2: Vec<f64> = (0..n).map(|i| row_dist2(data, i, &centroids, 0)).collect();
    for c in 1..k {
        let total: f64 = dist2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut idx = n - 1;
            for (i, d) in dist2.iter().enumerate() {
                if target < *d {
                    idx = i;
                    break;
                }
                target -= d;
            }
            idx
        } else {
            rng.gen_range(0..n)
        };
        centroids.row_mut(c).assign(&data.row(pick));
        for (i, d) in dist2.iter_mut().enumerate() {
            *d = d.min(row_dist2(data, i, &centroids, c));
        }
    }

    let mut assign = vec![0usize; n];
    for _ in 0..iters {
        // Assignment step.
        for (i, a) in assign.iter_mut().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d = row_dist2(data, i, &centroids, c);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            *a = best;
        }
        // Update step; empty clusters grab the point farthest from its centroid.
        let mut counts = vec![0usize; k];
        let mut sums = Array2::<f64>::zeros((k, dim));
        for (i, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            let mut row = sums.row_mut(a);
            row += &data.row(i);
        }
        for c in 0..k {
            if counts[c] > 0 {
                let mut row = centroids.row_mut(c);
                row.assign(&sums.row(c));
                row /= counts[c] as f64;
            } else {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = row_dist2(data, a, &centroids, assign[a]);
                        let db = row_dist2(data, b, &centroids, assign[b]);
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                centroids.row_mut(c).assign(&data.row(far));
            }
        }
    }
    // Final assignment against the last centroids.
    for (i, a) in assign.iter_mut().enumerate() {
        *a = nearest(data.row(i).to_slice().unwrap(), &centroids);
    }
    Ok((centroids, assign))
}

/// Index of the nearest centroid for one frame.
pub fn nearest(frame: &[f64], centroids: &Array2<f64>) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, row) in centroids.rows().into_iter().enumerate() {
        let d: f64 = row
            .iter()
            .zip(frame)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

fn row_dist2(data: &Array2<f64>, i: usize, centroids: &Array2<f64>, c: usize) -> f64 {
    data.row(i)
        .iter()
        .zip(centroids.row(c).iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_obvious_clusters() {
        // Two tight blobs far apart.
        let mut data = Array2::zeros((40, 2));
        for i in 0..20 {
            data[(i, 0)] = 10.0 + (i as f64) * 0.01;
            data[(i, 1)] = 10.0;
        }
        for i in 20..40 {
            data[(i, 0)] = -10.0 - (i as f64) * 0.01;
            data[(i, 1)] = -10.0;
        }
        let (_, assign) = kmeans(&data, 2, 1, 20).unwrap();
        let first = assign[0];
        assert!(assign[..20].iter().all(|&a| a == first));
        assert!(assign[20..].iter().all(|&a| a != first));
    }

    #[test]
    fn too_few_frames_is_rejected() {
        let data = Array2::zeros((3, 2));
        assert!(kmeans(&data, 5, 0, 5).is_err());
    }

    #[test]
    fn is_deterministic_per_seed() {
        let data = Array2::from_shape_fn((50, 3), |(i, j)| ((i * 7 + j * 13) % 17) as f64);
        let (c1, a1) = kmeans(&data, 4, 9, 15).unwrap();
        let (c2, a2) = kmeans(&data, 4, 9, 15).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(a1, a2);
    }
}
