//! Lloyd's k-means with deterministic k-means++ seeding.

use crate::measure::Measurable;
use crate::rng::SplitMix64;

use super::ImgError;

/// Cluster centers in feature space; assignment is by nearest Euclidean
/// distance with ties toward the lower index.
#[derive(Debug, Clone, PartialEq)]
pub struct Centroids {
    pub centers: Vec<Vec<f64>>,
}

impl Centroids {
    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn assign_one(&self, point: &[f64]) -> usize {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, c) in self.centers.iter().enumerate() {
            let d = dist_sq(point, c);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

impl Measurable for Centroids {
    fn size_bytes(&self) -> u64 {
        16 + self
            .centers
            .iter()
            .map(|c| 16 + c.len() as u64 * 8)
            .sum::<u64>()
    }
}

/// Per-run convergence data.
#[derive(Debug, Clone, PartialEq)]
pub struct KmeansReport {
    pub iterations: usize,
    /// Sum of squared distances to assigned centroids, once per iteration.
    pub objective: Vec<f64>,
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Deterministic k-means++ seeding: the first center is a seeded draw, each
/// following center is sampled proportional to squared distance from the
/// chosen set.
pub fn kmeans_plus_plus_init(
    points: &[Vec<f64>],
    k: usize,
    rng: &mut SplitMix64,
) -> Vec<Vec<f64>> {
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(points[rng.below(points.len() as u64) as usize].clone());
    let mut min_d: Vec<f64> = points.iter().map(|p| dist_sq(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = min_d.iter().sum();
        let idx = if total <= 0.0 {
            // All remaining points coincide with a center; any pick works.
            rng.below(points.len() as u64) as usize
        } else {
            let target = rng.f64() * total;
            let mut acc = 0.0;
            let mut chosen = points.len() - 1;
            for (i, d) in min_d.iter().enumerate() {
                acc += d;
                if acc >= target {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        centers.push(points[idx].clone());
        for (i, p) in points.iter().enumerate() {
            let d = dist_sq(p, centers.last().unwrap());
            if d < min_d[i] {
                min_d[i] = d;
            }
        }
    }
    centers
}

/// Lloyd iterations until the largest centroid movement drops below `tol`
/// or `max_iters` is reached. Empty clusters are re-seeded to the point
/// farthest from its assigned centroid.
pub fn kmeans_fit(
    points: &[Vec<f64>],
    k: usize,
    max_iters: usize,
    tol: f64,
    seed: u64,
) -> Result<(Centroids, KmeansReport), ImgError> {
    if k == 0 {
        return Err(ImgError::BadParam("k must be >= 1".into()));
    }
    if k > points.len() {
        return Err(ImgError::BadParam(format!(
            "k = {k} exceeds point count {}",
            points.len()
        )));
    }
    let mut rng = SplitMix64::new(seed);
    let mut centers = kmeans_plus_plus_init(points, k, &mut rng);
    let mut report = KmeansReport {
        iterations: 0,
        objective: Vec::new(),
    };
    for _ in 0..max_iters.max(1) {
        report.iterations += 1;
        // Assignment.
        let assignments: Vec<usize> = points
            .iter()
            .map(|p| Centroids { centers: centers.clone() }.assign_one(p))
            .collect();
        let objective: f64 = points
            .iter()
            .zip(&assignments)
            .map(|(p, &a)| dist_sq(p, &centers[a]))
            .sum();
        report.objective.push(objective);
        // Update.
        let dim = points[0].len();
        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut new_centers = Vec::with_capacity(k);
        for (c, (sum, count)) in sums.into_iter().zip(counts).enumerate() {
            if count == 0 {
                // Re-seed to the farthest point from its centroid.
                let far = points
                    .iter()
                    .enumerate()
                    .max_by(|(ia, a), (ib, b)| {
                        let da = dist_sq(a, &centers[assignments[*ia]]);
                        let db = dist_sq(b, &centers[assignments[*ib]]);
                        da.partial_cmp(&db).unwrap().then(ib.cmp(ia))
                    })
                    .map(|(_, p)| p.clone())
                    .unwrap_or_else(|| centers[c].clone());
                new_centers.push(far);
            } else {
                new_centers.push(sum.into_iter().map(|s| s / count as f64).collect());
            }
        }
        let movement = centers
            .iter()
            .zip(&new_centers)
            .map(|(a, b)| dist_sq(a, b).sqrt())
            .fold(0.0f64, f64::max);
        centers = new_centers;
        if movement < tol {
            break;
        }
    }
    Ok((Centroids { centers }, report))
}

/// Nearest-centroid labels for a point set.
pub fn kmeans_assign(points: &[Vec<f64>], centroids: &Centroids) -> Vec<usize> {
    points.iter().map(|p| centroids.assign_one(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(center: &[f64], n: usize, spread: f64, rng: &mut SplitMix64) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                center
                    .iter()
                    .map(|c| c + rng.range_f64(-spread, spread))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn two_blobs_recover_means() {
        let mut rng = SplitMix64::new(1);
        let mut pts = blob(&[0.0, 0.0], 40, 0.5, &mut rng);
        pts.extend(blob(&[10.0, 10.0], 40, 0.5, &mut rng));
        let (centroids, _) = kmeans_fit(&pts, 2, 50, 1e-9, 3).unwrap();
        let mut centers = centroids.centers.clone();
        centers.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        // Closed-form blob means sit within the spread.
        assert!(dist_sq(&centers[0], &[0.0, 0.0]).sqrt() < 0.5);
        assert!(dist_sq(&centers[1], &[10.0, 10.0]).sqrt() < 0.5);
    }

    #[test]
    fn k_one_gives_global_mean() {
        let pts = vec![vec![1.0, 1.0], vec![3.0, 5.0], vec![5.0, 0.0]];
        let (centroids, _) = kmeans_fit(&pts, 1, 20, 1e-12, 0).unwrap();
        assert!((centroids.centers[0][0] - 3.0).abs() < 1e-12);
        assert!((centroids.centers[0][1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn identical_points_converge_immediately() {
        let pts = vec![vec![2.0, 2.0]; 10];
        let (centroids, report) = kmeans_fit(&pts, 3, 20, 1e-9, 5).unwrap();
        assert_eq!(report.iterations, 1);
        for c in &centroids.centers {
            assert_eq!(c, &vec![2.0, 2.0]);
        }
    }

    #[test]
    fn objective_non_increasing() {
        let mut rng = SplitMix64::new(9);
        let mut pts = blob(&[0.0, 0.0, 0.0], 30, 2.0, &mut rng);
        pts.extend(blob(&[8.0, 1.0, -4.0], 30, 2.0, &mut rng));
        pts.extend(blob(&[-5.0, 9.0, 3.0], 30, 2.0, &mut rng));
        let (_, report) = kmeans_fit(&pts, 3, 40, 1e-12, 11).unwrap();
        for w in report.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "objective increased: {:?}", report.objective);
        }
    }

    #[test]
    fn bad_params_rejected() {
        let pts = vec![vec![0.0]; 3];
        assert!(kmeans_fit(&pts, 0, 10, 1e-9, 0).is_err());
        assert!(kmeans_fit(&pts, 4, 10, 1e-9, 0).is_err());
    }
}
