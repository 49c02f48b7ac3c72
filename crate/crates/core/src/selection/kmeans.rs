//! Seeded k-means++ initialization and Lloyd iterations.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::KMeansConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    /// `k x d` cluster centers.
    pub centers: Array2<f64>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    /// Inertia after the initialization and after every Lloyd iteration.
    pub inertia_history: Vec<f64>,
    /// Row indices picked by the k-means++ initialization, in pick order.
    pub seeds: Vec<usize>,
}

pub(crate) fn squared_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Request("number of clusters must be positive".into()));
    }
    if k > n {
        return Err(Error::Request(format!("cannot form {k} clusters from {n} points")));
    }
    Ok(())
}

/// k-means++ seeding: the first center is uniform, every further center is
/// drawn with probability proportional to its squared distance from the
/// nearest chosen center. When every remaining point coincides with a chosen
/// center, the next pick is uniform over the points not yet chosen, so the
/// result is always `k` distinct rows.
pub fn kmeans_pp_seeds(points: &Array2<f64>, k: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    let n = points.nrows();
    check_k(n, k)?;
    let mut chosen = vec![false; n];
    let mut seeds = Vec::with_capacity(k);
    let first = rng.random_range(0..n);
    seeds.push(first);
    chosen[first] = true;
    let mut nearest: Vec<f64> = points.rows().into_iter().map(|p| squared_distance(p, points.row(first))).collect();

    while seeds.len() < k {
        let total: f64 = nearest.iter().zip(&chosen).filter(|(_, &c)| !c).map(|(d, _)| d).sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for i in 0..n {
                if chosen[i] || nearest[i] == 0.0 {
                    continue;
                }
                acc += nearest[i];
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total mass has a positive entry")
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        seeds.push(next);
        chosen[next] = true;
        for (i, p) in points.rows().into_iter().enumerate() {
            nearest[i] = nearest[i].min(squared_distance(p, points.row(next)));
        }
    }
    Ok(seeds)
}

/// Index of the closest center; the lowest index wins ties.
fn closest(point: ArrayView1<f64>, centers: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.rows().into_iter().enumerate() {
        let d = squared_distance(point, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign(points: &Array2<f64>, centers: &Array2<f64>) -> (Vec<usize>, f64) {
    let mut inertia = 0.0;
    let assignment = points
        .rows()
        .into_iter()
        .map(|p| {
            let (c, d) = closest(p, centers);
            inertia += d;
            c
        })
        .collect();
    (assignment, inertia)
}

fn single_run(points: &Array2<f64>, k: usize, max_iters: usize, rng: &mut ChaCha8Rng) -> Result<KMeansResult> {
    let seeds = kmeans_pp_seeds(points, k, rng)?;
    let mut centers = points.select(Axis(0), &seeds);
    let (mut assignment, mut inertia) = assign(points, &centers);
    let mut history = vec![inertia];
    for _ in 0..max_iters {
        let d = points.ncols();
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (p, &c) in points.rows().into_iter().zip(&assignment) {
            let mut row = sums.row_mut(c);
            row += &p;
            counts[c] += 1;
        }
        // An empty cluster keeps its previous center.
        for c in 0..k {
            if counts[c] > 0 {
                let mean: Array1<f64> = sums.row(c).mapv(|x| x / counts[c] as f64);
                centers.row_mut(c).assign(&mean);
            }
        }
        let (next, next_inertia) = assign(points, &centers);
        let converged = next == assignment;
        assignment = next;
        inertia = next_inertia;
        history.push(inertia);
        if converged {
            break;
        }
    }
    Ok(KMeansResult { centers, assignment, inertia, inertia_history: history, seeds })
}

/// Clusters the rows of `points` into `k` groups. With several restarts the
/// run with the lowest final inertia is kept (earliest run on ties).
pub fn kmeans_cluster(points: &Array2<f64>, k: usize, config: &KMeansConfig, seed: u64) -> Result<KMeansResult> {
    check_k(points.nrows(), k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..config.restarts.max(1) {
        let run = single_run(points, k, config.max_iters, &mut rng)?;
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// A uniform sample of `k` distinct rows; used where any subset will do.
pub(crate) fn uniform_subset(n: usize, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    sample(rng, n, k).into_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn blobs(seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((10, 2), |(i, _)| {
            let base = if i < 5 { 0.0 } else { 10.0 };
            base + rng.random::<f64>()
        })
    }

    /// Smallest within-cluster sum of squares over every split into two
    /// non-empty groups.
    fn brute_force_two_partition(points: &Array2<f64>) -> f64 {
        let n = points.nrows();
        let mut best = f64::INFINITY;
        for mask in 1..(1u32 << n) - 1 {
            let mut cost = 0.0;
            for side in [0, 1] {
                let idx: Vec<usize> = (0..n).filter(|&i| (mask >> i) & 1 == side).collect();
                let sub = points.select(Axis(0), &idx);
                let mean = sub.mean_axis(Axis(0)).unwrap();
                cost += sub.rows().into_iter().map(|r| squared_distance(r, mean.view())).sum::<f64>();
            }
            best = best.min(cost);
        }
        best
    }

    #[test]
    fn separates_two_blobs_optimally() {
        for seed in 0..10 {
            let points = blobs(seed);
            let result = kmeans_cluster(&points, 2, &KMeansConfig::default(), seed).unwrap();
            assert!(result.assignment[..5].iter().all(|&c| c == result.assignment[0]));
            assert!(result.assignment[5..].iter().all(|&c| c == result.assignment[5]));
            assert_ne!(result.assignment[0], result.assignment[5]);
            assert!((result.inertia - brute_force_two_partition(&points)).abs() < 1e-9);
        }
    }

    #[test]
    fn k_equal_n_has_zero_inertia() {
        let points = array![[0.0, 1.0], [2.0, 3.0], [5.0, -1.0]];
        let result = kmeans_cluster(&points, 3, &KMeansConfig::default(), 3).unwrap();
        assert_eq!(result.inertia, 0.0);
        let mut seeds = result.seeds.clone();
        seeds.sort();
        assert_eq!(seeds, vec![0, 1, 2]);
    }

    #[test]
    fn inertia_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let points = Array2::from_shape_fn((200, 3), |_| rng.random::<f64>());
        let result = kmeans_cluster(&points, 7, &KMeansConfig::default(), 1).unwrap();
        for w in result.inertia_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let points = blobs(4);
        let a = kmeans_cluster(&points, 3, &KMeansConfig::default(), 11).unwrap();
        let b = kmeans_cluster(&points, 3, &KMeansConfig::default(), 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identical_points_still_give_distinct_seeds() {
        let points = Array2::from_elem((6, 2), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut seeds = kmeans_pp_seeds(&points, 6, &mut rng).unwrap();
        seeds.sort();
        assert_eq!(seeds, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn too_many_clusters_is_a_request_error() {
        let points = Array2::zeros((2, 2));
        assert!(matches!(kmeans_cluster(&points, 3, &KMeansConfig::default(), 0), Err(Error::Request(_))));
    }
}
