//! Spherical k-means used to initialize the codebook.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tfcc::{argmax, norm, Codebook};

/// Lloyd iterations used when a caller does not choose.
pub const DEFAULT_KMEANS_ITERATIONS: usize = 20;

/// Result of a spherical k-means run.
#[derive(Clone, Debug)]
pub struct KMeans {
    /// `k × D` unit-length centroids.
    pub centroids: Array2<f64>,
    /// Cluster of every input sample.
    pub assignments: Vec<usize>,
}

fn normalized_rows(samples: ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut out = samples.to_owned();
    for (i, mut row) in out.outer_iter_mut().enumerate() {
        let n = norm(row.view());
        if !(n > 1e-12) || !n.is_finite() {
            return Err(Error::InvalidRecord {
                index: i,
                reason: "zero or non-finite sample".into(),
            });
        }
        row /= n;
    }
    Ok(out)
}

/// k-means++ seeding on the cosine distance `1 − cos`.
fn seed_centroids(units: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let m = units.nrows();
    let mut centroids = Array2::zeros((k, units.ncols()));
    let first = rng.random_range(0..m);
    centroids.row_mut(0).assign(&units.row(first));
    let mut best: Array1<f64> = units.dot(&units.row(first));
    for c in 1..k {
        let dist: Vec<f64> = best.iter().map(|&s| (1.0 - s).max(0.0)).collect();
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = m - 1;
            for (i, &d) in dist.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..m)
        };
        centroids.row_mut(c).assign(&units.row(pick));
        let sims = units.dot(&units.row(pick));
        best.zip_mut_with(&sims, |b, &s| *b = b.max(s));
    }
    centroids
}

fn assign(units: &Array2<f64>, centroids: &Array2<f64>) -> (Vec<usize>, Vec<f64>) {
    let sims = units.dot(&centroids.t());
    sims.outer_iter()
        .map(|row| {
            let d = argmax(row);
            (d, row[d])
        })
        .unzip()
}

/// Clusters `samples` (rows) into `k` groups under cosine similarity.
///
/// Deterministic for a given seed. Clusters that lose all members are
/// reseeded with the sample least similar to every current centroid.
pub fn spherical_kmeans(samples: ArrayView2<f64>, k: usize, iterations: usize, seed: u64) -> Result<KMeans> {
    let m = samples.nrows();
    if k == 0 {
        return Err(Error::Invalid("k must be at least 1".into()));
    }
    if m < k {
        return Err(Error::Invalid(format!("{m} samples are fewer than {k} clusters")));
    }
    let units = normalized_rows(samples)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(&units, k, &mut rng);
    let (mut labels, mut best) = assign(&units, &centroids);

    for _ in 0..iterations.max(1) {
        let mut sums = Array2::<f64>::zeros(centroids.raw_dim());
        let mut counts = vec![0usize; k];
        for (i, &c) in labels.iter().enumerate() {
            sums.row_mut(c).scaled_add(1.0, &units.row(i));
            counts[c] += 1;
        }
        let mut taken = vec![false; m];
        for c in 0..k {
            let n = norm(sums.row(c));
            if counts[c] > 0 && n > 1e-12 {
                centroids.row_mut(c).assign(&(&sums.row(c) / n));
            } else {
                let far = farthest_sample(&best, &taken);
                taken[far] = true;
                centroids.row_mut(c).assign(&units.row(far));
                best[far] = 1.0;
            }
        }
        let (next, next_best) = assign(&units, &centroids);
        let changed = next != labels;
        labels = next;
        best = next_best;
        if !changed && !has_empty(&labels, k) {
            break;
        }
    }

    // Guarantee every cluster owns at least one sample.
    while has_empty(&labels, k) {
        let mut counts = vec![0usize; k];
        for &c in &labels {
            counts[c] += 1;
        }
        let empty = counts.iter().position(|&n| n == 0).unwrap();
        // Steal the worst-fitting sample from a cluster with spare members.
        let donor = (0..m)
            .filter(|&i| counts[labels[i]] > 1)
            .min_by(|&a, &b| best[a].total_cmp(&best[b]).then(a.cmp(&b)))
            .expect("m >= k leaves a cluster with spare members");
        centroids.row_mut(empty).assign(&units.row(donor));
        labels[donor] = empty;
        best[donor] = 1.0;
    }
    Ok(KMeans {
        centroids,
        assignments: labels,
    })
}

fn farthest_sample(best: &[f64], taken: &[bool]) -> usize {
    let mut pick = 0;
    let mut low = f64::INFINITY;
    for (i, (&b, &t)) in best.iter().zip(taken).enumerate() {
        if !t && b < low {
            low = b;
            pick = i;
        }
    }
    pick
}

fn has_empty(labels: &[usize], k: usize) -> bool {
    let mut seen = vec![false; k];
    for &c in labels {
        seen[c] = true;
    }
    seen.iter().any(|s| !s)
}

/// Codebook whose entries are the spherical k-means centroids of `samples`.
pub fn kmeans_init(samples: ArrayView2<f64>, n_entries: usize, iterations: usize, seed: u64) -> Result<Codebook> {
    if n_entries < 2 {
        return Err(Error::Invalid(format!(
            "codebook needs at least 2 entries, got {n_entries}"
        )));
    }
    let km = spherical_kmeans(samples, n_entries, iterations, seed)?;
    Codebook::new(km.centroids)
}

/// Draws up to `max` distinct rows of `samples` without replacement, keeping
/// their original order.
pub fn subsample_rows(samples: ArrayView2<f64>, max: usize, seed: u64) -> Array2<f64> {
    if samples.nrows() <= max {
        return samples.to_owned();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, samples.nrows(), max).into_vec();
    idx.sort_unstable();
    samples.select(Axis(0), &idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn distinct_points_become_entries() {
        let samples = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.6, 0.8, 0.0]];
        let km = spherical_kmeans(samples.view(), 4, 10, 3).unwrap();
        let mut found = vec![false; 4];
        for c in km.centroids.outer_iter() {
            let i = (0..4)
                .find(|&i| (&samples.row(i) - &c).iter().all(|v| v.abs() < 1e-12))
                .expect("centroid is one of the samples");
            found[i] = true;
        }
        assert!(found.iter().all(|&f| f));
    }

    #[test]
    fn deterministic_per_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let samples = Array2::from_shape_fn((200, 6), |_| rng.random_range(-1.0..1.0));
        let a = spherical_kmeans(samples.view(), 7, 20, 11).unwrap();
        let b = spherical_kmeans(samples.view(), 7, 20, 11).unwrap();
        assert_eq!(a.centroids, b.centroids);
        assert_eq!(a.assignments, b.assignments);
    }

    #[test]
    fn never_empty_with_duplicates() {
        // Only two distinct directions but five clusters requested.
        let mut samples = Array2::zeros((10, 2));
        for i in 0..10 {
            samples[[i, i % 2]] = 1.0;
        }
        let km = spherical_kmeans(samples.view(), 5, 10, 0).unwrap();
        assert!(!has_empty(&km.assignments, 5));
    }

    #[test]
    fn errors() {
        let samples = array![[1.0, 0.0], [0.0, 1.0]];
        assert!(kmeans_init(samples.view(), 3, 5, 0).is_err());
        assert!(spherical_kmeans(array![[1.0, 0.0], [0.0, 0.0]].view(), 1, 5, 0).is_err());
    }

    #[test]
    fn subsample_keeps_order() {
        let samples = Array2::from_shape_fn((50, 1), |(i, _)| i as f64);
        let sub = subsample_rows(samples.view(), 10, 1);
        assert_eq!(sub.nrows(), 10);
        assert!(sub.column(0).windows(2).into_iter().all(|w| w[0] < w[1]));
    }
}
