use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::nn::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansOptions {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop once no centroid moves farther than this (L2).
    pub tol: f64,
    /// Independent k-means++ restarts; the lowest final inertia wins.
    pub n_init: usize,
}

impl KMeansOptions {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iters: 100,
            tol: 1e-6,
            n_init: 4,
        }
    }
}

/// Result of a k-means fit.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    /// One centroid per row (`k × d`).
    pub centroids: Matrix,
    pub assignments: Vec<usize>,
    pub k: usize,
    /// Sum of squared distances from each point to its centroid.
    pub inertia: f64,
    /// Inertia after every assignment step, starting with the initial one.
    pub inertia_trace: Vec<f64>,
}

impl ClusterModel {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &c in &self.assignments {
            sizes[c] += 1;
        }
        sizes
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Seeds centroids with k-means++.
fn init_plus_plus<R: Rng>(points: &Matrix, k: usize, rng: &mut R) -> Matrix {
    let n = points.rows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.iter_rows().map(|p| sq_dist(p, points.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    if target < d {
                        pick = Some(i);
                        break;
                    }
                    target -= d;
                }
            }
            // rounding can leave a sliver past the last candidate
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).expect("total > 0"))
        } else {
            // every point coincides with a chosen centroid
            rng.random_range(0..n)
        };
        chosen.push(next);
        for (i, p) in points.iter_rows().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, points.row(next)));
        }
    }
    points.select_rows(&chosen)
}

/// Nearest centroid of every point (smallest index on ties) and the total cost.
fn assign(points: &Matrix, centroids: &Matrix, out: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (i, p) in points.iter_rows().enumerate() {
        let (mut best, mut best_d) = (0, f64::INFINITY);
        for (j, c) in centroids.iter_rows().enumerate() {
            let d = sq_dist(p, c);
            if d < best_d {
                best = j;
                best_d = d;
            }
        }
        out[i] = best;
        inertia += best_d;
    }
    inertia
}

/// Moves each empty cluster's centroid onto the point farthest from its own
/// centroid, taking points only from clusters that keep at least one member.
fn repair_empty(points: &Matrix, centroids: &mut Matrix, assignments: &mut [usize]) -> bool {
    let k = centroids.rows();
    let mut sizes = vec![0usize; k];
    for &a in assignments.iter() {
        sizes[a] += 1;
    }
    let mut repaired = false;
    for empty in 0..k {
        if sizes[empty] > 0 {
            continue;
        }
        let mut far = None;
        let mut far_d = -1.0;
        for (i, p) in points.iter_rows().enumerate() {
            let a = assignments[i];
            if sizes[a] < 2 {
                continue;
            }
            let d = sq_dist(p, centroids.row(a));
            if d > far_d {
                far = Some(i);
                far_d = d;
            }
        }
        let Some(i) = far else { break };
        sizes[assignments[i]] -= 1;
        sizes[empty] += 1;
        assignments[i] = empty;
        centroids.row_mut(empty).copy_from_slice(points.row(i));
        repaired = true;
    }
    repaired
}

fn update_means(points: &Matrix, assignments: &[usize], centroids: &mut Matrix) {
    let mut sums = Matrix::zeros(centroids.rows(), centroids.cols());
    let mut counts = vec![0usize; centroids.rows()];
    for (p, &a) in points.iter_rows().zip(assignments) {
        counts[a] += 1;
        for (s, &x) in sums.row_mut(a).iter_mut().zip(p) {
            *s += x;
        }
    }
    for (j, &count) in counts.iter().enumerate() {
        if count > 0 {
            let row = centroids.row_mut(j);
            for (c, &s) in row.iter_mut().zip(sums.row(j)) {
                *c = s / count as f64;
            }
        }
    }
}

/// Lloyd's algorithm from seeded k-means++ starts, keeping the restart with
/// the lowest inertia (earliest restart on ties).
pub fn kmeans(points: &Matrix, options: KMeansOptions) -> Result<ClusterModel> {
    let KMeansOptions {
        k,
        seed,
        max_iters,
        tol,
        n_init,
    } = options;
    let n = points.rows();
    if k == 0 {
        return Err(invalid("k must be positive"));
    }
    if k > n {
        return Err(invalid(format!("k = {k} exceeds the {n} points")));
    }
    if max_iters == 0 {
        return Err(invalid("max_iters must be at least 1"));
    }
    if n_init == 0 {
        return Err(invalid("n_init must be at least 1"));
    }
    points.ensure_finite("clustering input")?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<ClusterModel> = None;
    for _ in 0..n_init {
        let fit = lloyd(points, k, max_iters, tol, &mut rng);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("n_init >= 1"))
}

fn lloyd<R: Rng>(points: &Matrix, k: usize, max_iters: usize, tol: f64, rng: &mut R) -> ClusterModel {
    let n = points.rows();
    let mut centroids = init_plus_plus(points, k, rng);
    let mut assignments = vec![0; n];
    let mut inertia = assign(points, &centroids, &mut assignments);
    let mut trace = vec![inertia];
    for _ in 0..max_iters {
        let previous = centroids.clone();
        update_means(points, &assignments, &mut centroids);
        repair_empty(points, &mut centroids, &mut assignments);
        let movement = previous
            .iter_rows()
            .zip(centroids.iter_rows())
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        inertia = assign(points, &centroids, &mut assignments);
        trace.push(inertia);
        if movement < tol {
            break;
        }
    }
    if repair_empty(points, &mut centroids, &mut assignments) {
        inertia = points
            .iter_rows()
            .zip(&assignments)
            .map(|(p, &a)| sq_dist(p, centroids.row(a)))
            .sum();
        trace.push(inertia);
    }
    ClusterModel {
        centroids,
        assignments,
        k,
        inertia,
        inertia_trace: trace,
    }
}
