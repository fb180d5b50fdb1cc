//! Seeded k-means (k-means++ seeding followed by Lloyd iterations).

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seed::SeedRng;
use crate::tape::sq_dist;

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering<T> {
    pub centroids: Vec<Vec<T>>,
    pub assignments: Vec<usize>,
}

fn nearest<T: Real>(point: &[T], centroids: &[Vec<T>]) -> (usize, T) {
    let mut best = (0, T::infinity());
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn seed_centroids<T: Real>(points: &[Vec<T>], k: usize, rng: &mut SeedRng) -> Vec<Vec<T>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].clone()];
    let mut dist: Vec<f64> = points
        .iter()
        .map(|p| sq_dist(p, &centroids[0]).approx())
        .collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in dist.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if target < d {
                        break;
                    }
                    target -= d;
                }
            }
            pick.expect("positive total implies a positive entry")
        } else {
            // only duplicates of existing centroids remain
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        centroids.push(points[pick].clone());
        let newest = centroids.last().expect("just pushed");
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, newest).approx());
        }
    }
    centroids
}

/// Clusters `points` into `k` groups. Empty clusters keep their centroid.
pub fn kmeans<T: Real>(
    points: &[Vec<T>],
    k: usize,
    iterations: usize,
    rng: &mut SeedRng,
) -> Result<Clustering<T>> {
    if k == 0 || k > points.len() {
        return Err(Error::InvalidInput(format!(
            "cannot form {k} clusters from {} points",
            points.len()
        )));
    }
    let dim = points[0].len();
    if let Some(bad) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::dims("k-means point", dim, bad.len()));
    }
    let mut centroids = seed_centroids(points, k, rng);
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    for _ in 0..iterations {
        let mut sums = vec![vec![T::zero(); dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, &v) in sums[a].iter_mut().zip(p) {
                *s = *s + v;
            }
        }
        for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
            if n > 0 {
                let n = T::from_usize(n).expect("count fits");
                *c = s.into_iter().map(|v| v / n).collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        if next == assignments {
            break;
        }
        assignments = next;
    }
    Ok(Clustering {
        centroids,
        assignments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::substream;

    #[test]
    fn separates_two_blobs() {
        let mut points = Vec::new();
        for i in 0..10 {
            let e = i as f64 * 0.01;
            points.push(vec![e, -e]);
            points.push(vec![10.0 + e, 10.0 - e]);
        }
        let c = kmeans(&points, 2, 25, &mut substream(1, "km")).unwrap();
        for pair in c.assignments.chunks(2) {
            assert_ne!(pair[0], pair[1]);
        }
        let first = c.assignments[0];
        assert!(c.assignments.iter().step_by(2).all(|&a| a == first));
    }

    #[test]
    fn k_equal_n_gives_singletons() {
        let points: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let c = kmeans(&points, 6, 25, &mut substream(3, "km")).unwrap();
        let mut sorted = c.centroids.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(sorted, points);
    }

    #[test]
    fn rejects_too_many_clusters() {
        let points = vec![vec![0.0f64]; 3];
        assert!(kmeans(&points, 4, 25, &mut substream(0, "km")).is_err());
    }
}
