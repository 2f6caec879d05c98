//! Geometric primitives: normalization, one-hot encoding, squared distances
//! and brute-force k-nearest neighbors.

use std::cmp::Ordering;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::tensor::Mat;

/// Center at the origin and scale so the farthest point has norm 1.
/// A cloud whose points all coincide maps to the all-zero cloud.
pub fn normalize_unit_sphere(cloud: &PointCloud) -> Result<PointCloud> {
    let pts = cloud.points();
    if pts.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite coordinates"));
    }
    let n = pts.len() as f64;
    let mut c = [0.0; 3];
    for p in pts {
        for a in 0..3 {
            c[a] += p[a];
        }
    }
    for v in &mut c {
        *v /= n;
    }
    let centered: Vec<[f64; 3]> = pts
        .iter()
        .map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]])
        .collect();
    let max_norm = centered
        .iter()
        .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
        .fold(0.0, f64::max);
    let out = if max_norm > 0.0 {
        centered
            .iter()
            .map(|p| [p[0] / max_norm, p[1] / max_norm, p[2] / max_norm])
            .collect()
    } else {
        vec![[0.0; 3]; pts.len()]
    };
    cloud.with_points(out)
}

pub fn one_hot(label: usize, num_classes: usize) -> Result<Vec<f64>> {
    if label >= num_classes {
        return Err(Error::invalid(format!(
            "label {label} out of range for {num_classes} classes"
        )));
    }
    let mut v = vec![0.0; num_classes];
    v[label] = 1.0;
    Ok(v)
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Entry (i, j) is the squared Euclidean distance between row i of `a` and row j of `b`.
pub fn pairwise_sq_dist(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.cols() != b.cols() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            a.cols(),
            b.cols()
        )));
    }
    let mut out = Mat::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        let ra = a.row(i);
        for j in 0..b.rows() {
            out.set(i, j, sq_dist(ra, b.row(j)));
        }
    }
    Ok(out)
}

/// Order by (distance, index): ties go to the lowest index.
#[inline]
pub(crate) fn by_dist_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// The `k` nearest rows to row `center` (excluding `center` itself), closest first.
pub fn nearest_to(x: &Mat, center: usize, k: usize) -> Vec<usize> {
    let c = x.row(center);
    let mut cand: Vec<(f64, usize)> = (0..x.rows())
        .filter(|&j| j != center)
        .map(|j| (sq_dist(c, x.row(j)), j))
        .collect();
    let k = k.min(cand.len());
    if k == 0 {
        return Vec::new();
    }
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, by_dist_then_index);
        cand.truncate(k);
    }
    cand.sort_unstable_by(by_dist_then_index);
    cand.into_iter().map(|(_, j)| j).collect()
}

/// Neighbor lists of every row: `k` nearest other rows, lowest index on ties.
pub fn knn_graph(x: &Mat, k: usize) -> Result<Vec<Vec<usize>>> {
    if k >= x.rows() {
        return Err(Error::invalid(format!(
            "k_neighbors = {k} must be smaller than N = {}",
            x.rows()
        )));
    }
    Ok((0..x.rows()).map(|i| nearest_to(x, i, k)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn cloud(points: Vec<[f64; 3]>) -> PointCloud {
        PointCloud::unlabeled(points).unwrap()
    }

    fn random_cloud(n: usize, rng: &mut RngStream) -> PointCloud {
        cloud(
            (0..n)
                .map(|_| [rng.normal() * 3.0 + 1.0, rng.normal(), rng.normal() - 2.0])
                .collect(),
        )
    }

    fn centroid_and_max_norm(c: &PointCloud) -> (f64, f64) {
        let n = c.len() as f64;
        let mut m = [0.0; 3];
        let mut maxn: f64 = 0.0;
        for p in c.points() {
            for a in 0..3 {
                m[a] += p[a] / n;
            }
            maxn = maxn.max((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt());
        }
        ((m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt(), maxn)
    }

    #[test]
    fn normalize_symmetric_pair() {
        let out = normalize_unit_sphere(&cloud(vec![[2.0, 0.0, 0.0], [-2.0, 0.0, 0.0]])).unwrap();
        assert_eq!(out.points(), &[[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]);
    }

    #[test]
    fn normalize_single_point_is_zero() {
        let out = normalize_unit_sphere(&cloud(vec![[5.0, 5.0, 5.0]])).unwrap();
        assert_eq!(out.points(), &[[0.0, 0.0, 0.0]]);
    }

    #[test]
    fn normalize_random_cloud_properties() {
        let mut rng = RngStream::new(11);
        let out = normalize_unit_sphere(&random_cloud(32, &mut rng)).unwrap();
        let (c, m) = centroid_and_max_norm(&out);
        assert!(c <= 1e-12, "centroid norm {c}");
        assert!((m - 1.0).abs() <= 1e-12, "max norm {m}");
    }

    #[test]
    fn normalize_is_idempotent() {
        let mut rng = RngStream::new(12);
        for _ in 0..20 {
            let once = normalize_unit_sphere(&random_cloud(40, &mut rng)).unwrap();
            let twice = normalize_unit_sphere(&once).unwrap();
            for (a, b) in once.points().iter().zip(twice.points()) {
                for k in 0..3 {
                    assert!((a[k] - b[k]).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn one_hot_cases() {
        assert_eq!(one_hot(2, 4).unwrap(), vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(one_hot(0, 1).unwrap(), vec![1.0]);
        assert!(matches!(one_hot(3, 3), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn pairwise_small_case() {
        let a = Mat::from_vec(2, 1, vec![0.0, 3.0]).unwrap();
        let d = pairwise_sq_dist(&a, &a).unwrap();
        assert_eq!(d.data(), &[0.0, 9.0, 9.0, 0.0]);
    }

    #[test]
    fn pairwise_matches_double_loop() {
        let mut rng = RngStream::new(5);
        let mk = |rng: &mut RngStream| {
            Mat::from_vec(8, 4, (0..32).map(|_| rng.normal()).collect()).unwrap()
        };
        let a = mk(&mut rng);
        let b = mk(&mut rng);
        let d = pairwise_sq_dist(&a, &b).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let mut s = 0.0;
                for k in 0..4 {
                    let t = a.get(i, k) - b.get(j, k);
                    s += t * t;
                }
                assert!((d.get(i, j) - s).abs() <= 1e-12);
            }
        }
        let self_d = pairwise_sq_dist(&a, &a).unwrap();
        for i in 0..8 {
            assert_eq!(self_d.get(i, i), 0.0);
            for j in 0..8 {
                assert_eq!(self_d.get(i, j), self_d.get(j, i));
                assert!(self_d.get(i, j) >= 0.0);
            }
        }
    }

    #[test]
    fn pairwise_dimension_mismatch() {
        let a = Mat::zeros(2, 2);
        let b = Mat::zeros(2, 3);
        assert!(pairwise_sq_dist(&a, &b).is_err());
    }

    #[test]
    fn knn_collinear_lowest_index_tie() {
        let x = Mat::from_vec(3, 1, vec![0.0, 1.0, 2.0]).unwrap();
        let g = knn_graph(&x, 1).unwrap();
        assert_eq!(g, vec![vec![1], vec![0], vec![1]]);
        assert!(knn_graph(&x, 3).is_err());
    }
}
