//! Point cloud container and the index-level sampling kernels: farthest
//! point sampling, fixed-radius neighborhoods, exact k-nearest neighbors,
//! and inverse-distance interpolation weights.
//!
//! Everything here is exact f64 and deterministic: ties always resolve to
//! the lowest index, so equal inputs give equal index tables on every run.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(Error::argument(format!(
                    "non-finite coordinate in point {i}: {p:?}"
                )));
            }
        }
        Ok(PointCloud { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Row-major `[N, 3]` buffer of the coordinates.
    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }

    /// Rebuilds a cloud from a row-major `[N, 3]` buffer.
    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.len() % 3 != 0 {
            return Err(Error::dim(format!(
                "flat cloud buffer of length {} is not a multiple of 3",
                values.len()
            )));
        }
        PointCloud::new(values.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut points = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.points.len() {
                return Err(Error::Index { index: i, extent: self.points.len() });
            }
            points.push(self.points[i]);
        }
        Ok(PointCloud { points })
    }

    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for p in &self.points {
            for a in 0..3 {
                c[a] += p[a];
            }
        }
        let n = self.points.len().max(1) as f64;
        c.map(|v| v / n)
    }
}

#[inline]
pub fn sq_dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

fn require_points(cloud: &PointCloud, op: &str) -> Result<()> {
    if cloud.is_empty() {
        return Err(Error::argument(format!("{op} requires a non-empty cloud")));
    }
    Ok(())
}

/// Greedy farthest point sampling of `m` indices.
///
/// The walk starts at the lexicographically smallest coordinate triple and
/// repeatedly adds the point with the largest distance to the selected set.
/// Both the start and every max-distance tie resolve to the lowest index.
pub fn fps(cloud: &PointCloud, m: usize) -> Result<Vec<usize>> {
    require_points(cloud, "fps")?;
    let n = cloud.len();
    if m == 0 || m > n {
        return Err(Error::argument(format!(
            "fps sample count {m} outside 1..={n}"
        )));
    }
    let start = cloud
        .points
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.partial_cmp(b).expect("finite coordinates"))
        .map(|(i, _)| i)
        .expect("non-empty cloud");

    let mut selected = Vec::with_capacity(m);
    selected.push(start);
    let mut min_sq: Vec<f64> =
        cloud.points.iter().map(|&p| sq_dist(p, cloud.points[start])).collect();
    while selected.len() < m {
        let mut best = 0usize;
        let mut best_d = f64::NEG_INFINITY;
        for (i, &d) in min_sq.iter().enumerate() {
            if d > best_d {
                best_d = d;
                best = i;
            }
        }
        selected.push(best);
        let chosen = cloud.points[best];
        for (d, &p) in min_sq.iter_mut().zip(&cloud.points) {
            *d = d.min(sq_dist(p, chosen));
        }
    }
    Ok(selected)
}

/// Fixed-radius neighborhood table from `ball_query`.
///
/// `indices` is row-major `[centers x nsample]`; `counts[c]` is how many
/// cloud points actually fall inside the radius around center `c`, before
/// any padding (it may exceed `nsample`).
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborList {
    pub indices: Vec<usize>,
    pub counts: Vec<usize>,
    pub nsample: usize,
}

/// Collects up to `nsample` cloud points within `radius` of each center,
/// scanning in index order. Rows short of `nsample` are padded with the
/// first point found; a center with an empty ball gets its single nearest
/// point, replicated.
pub fn ball_query(
    cloud: &PointCloud,
    centers: &PointCloud,
    radius: f64,
    nsample: usize,
) -> Result<NeighborList> {
    require_points(cloud, "ball_query")?;
    if nsample == 0 {
        return Err(Error::argument("ball_query nsample must be positive"));
    }
    if !(radius > 0.0) {
        return Err(Error::argument(format!("ball_query radius {radius} must be positive")));
    }
    let r2 = radius * radius;
    let mut indices = Vec::with_capacity(centers.len() * nsample);
    let mut counts = Vec::with_capacity(centers.len());
    for &c in &centers.points {
        let row_start = indices.len();
        let mut count = 0usize;
        for (i, &p) in cloud.points.iter().enumerate() {
            if sq_dist(p, c) <= r2 {
                count += 1;
                if indices.len() - row_start < nsample {
                    indices.push(i);
                }
            }
        }
        if indices.len() == row_start {
            // Empty ball: fall back to the nearest point.
            let nearest = cloud
                .points
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    sq_dist(**a, c).partial_cmp(&sq_dist(**b, c)).expect("finite")
                })
                .map(|(i, _)| i)
                .expect("non-empty cloud");
            indices.push(nearest);
        }
        let first = indices[row_start];
        while indices.len() - row_start < nsample {
            indices.push(first);
        }
        counts.push(count);
    }
    Ok(NeighborList { indices, counts, nsample })
}

/// Exact k-nearest neighbors of each query among `cloud`, row-major
/// `[queries x k]`, each row sorted by ascending distance with distance
/// ties resolved to the lower index.
pub fn knn(cloud: &PointCloud, queries: &PointCloud, k: usize) -> Result<Vec<usize>> {
    require_points(cloud, "knn")?;
    if k == 0 || k > cloud.len() {
        return Err(Error::argument(format!(
            "knn neighbor count {k} outside 1..={}",
            cloud.len()
        )));
    }
    let mut out = Vec::with_capacity(queries.len() * k);
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(cloud.len());
    for &q in &queries.points {
        scratch.clear();
        scratch.extend(cloud.points.iter().enumerate().map(|(i, &p)| (sq_dist(p, q), i)));
        let cmp = |a: &(f64, usize), b: &(f64, usize)| {
            a.0.partial_cmp(&b.0).expect("finite").then(a.1.cmp(&b.1))
        };
        if k < scratch.len() {
            scratch.select_nth_unstable_by(k - 1, cmp);
        }
        scratch[..k].sort_unstable_by(cmp);
        out.extend(scratch[..k].iter().map(|&(_, i)| i));
    }
    Ok(out)
}

/// Interpolation stencil: for each fine point, its three nearest coarse
/// points and their normalized inverse-distance weights.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpWeights {
    pub indices: Vec<[usize; 3]>,
    pub weights: Vec<[f64; 3]>,
}

/// Weight floor: a query sitting exactly on a coarse point must not divide
/// by zero, and the floored weight then dominates the row as intended.
const MIN_INTERP_DIST: f64 = 1e-10;

/// Inverse-distance weights over the three nearest coarse points of every
/// fine point. Each weight row is nonnegative and sums to one.
pub fn interpolate_weights(coarse: &PointCloud, fine: &PointCloud) -> Result<InterpWeights> {
    if coarse.len() < 3 {
        return Err(Error::argument(format!(
            "interpolation needs at least 3 coarse points, got {}",
            coarse.len()
        )));
    }
    let table = knn(coarse, fine, 3)?;
    let mut indices = Vec::with_capacity(fine.len());
    let mut weights = Vec::with_capacity(fine.len());
    for (q, row) in table.chunks_exact(3).enumerate() {
        let idx = [row[0], row[1], row[2]];
        let mut w = [0.0; 3];
        let mut total = 0.0;
        for (j, &ci) in idx.iter().enumerate() {
            let d = sq_dist(coarse.points[ci], fine.points[q]).sqrt().max(MIN_INTERP_DIST);
            w[j] = 1.0 / d;
            total += w[j];
        }
        for wj in &mut w {
            *wj /= total;
        }
        indices.push(idx);
        weights.push(w);
    }
    Ok(InterpWeights { indices, weights })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_cloud() -> PointCloud {
        PointCloud::new(
            (0..5).map(|i| [i as f64, 0.0, 0.0]).collect(),
        )
        .unwrap()
    }

    #[test]
    fn cloud_rejects_non_finite() {
        assert!(PointCloud::new(vec![[0.0, f64::NAN, 0.0]]).is_err());
    }

    #[test]
    fn fps_on_collinear_points() {
        let cloud = line_cloud();
        assert_eq!(fps(&cloud, 3).unwrap(), vec![0, 4, 2]);
    }

    #[test]
    fn fps_full_sample_is_a_permutation() {
        let cloud = line_cloud();
        let mut idx = fps(&cloud, 5).unwrap();
        idx.sort_unstable();
        assert_eq!(idx, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn fps_starts_at_lexicographic_minimum() {
        let cloud = PointCloud::new(vec![
            [1.0, 0.0, 0.0],
            [0.0, 5.0, 0.0],
            [0.0, 2.0, 9.0],
        ])
        .unwrap();
        assert_eq!(fps(&cloud, 1).unwrap(), vec![2]);
    }

    #[test]
    fn fps_rejects_bad_counts() {
        let cloud = line_cloud();
        assert!(fps(&cloud, 0).is_err());
        assert!(fps(&cloud, 6).is_err());
    }

    #[test]
    fn ball_query_pads_with_first_found() {
        let cloud = PointCloud::new(vec![
            [0.1, 0.0, 0.0],
            [0.0, 0.2, 0.0],
            [0.0, 0.0, 0.3],
        ])
        .unwrap();
        let centers = PointCloud::new(vec![[0.0, 0.0, 0.0]]).unwrap();
        let nl = ball_query(&cloud, &centers, 0.25, 4).unwrap();
        assert_eq!(nl.indices, vec![0, 1, 0, 0]);
        assert_eq!(nl.counts, vec![2]);
    }

    #[test]
    fn ball_query_empty_ball_takes_nearest() {
        let cloud = PointCloud::new(vec![[5.0, 0.0, 0.0], [3.0, 0.0, 0.0]]).unwrap();
        let centers = PointCloud::new(vec![[0.0, 0.0, 0.0]]).unwrap();
        let nl = ball_query(&cloud, &centers, 0.5, 3).unwrap();
        assert_eq!(nl.indices, vec![1, 1, 1]);
        assert_eq!(nl.counts, vec![0]);
    }

    #[test]
    fn knn_sorts_by_distance_with_index_ties() {
        let cloud = PointCloud::new(vec![
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 2.0, 0.0],
        ])
        .unwrap();
        let queries = PointCloud::new(vec![[0.0, 0.0, 0.0]]).unwrap();
        // Points 0 and 1 tie at distance 1; the lower index comes first.
        assert_eq!(knn(&cloud, &queries, 3).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn knn_rejects_k_above_cloud_size() {
        let cloud = line_cloud();
        assert!(knn(&cloud, &cloud, 6).is_err());
    }

    #[test]
    fn interpolation_weights_sum_to_one() {
        let coarse = line_cloud();
        let fine = PointCloud::new(vec![[0.7, 0.3, 0.0], [3.1, -0.2, 0.1]]).unwrap();
        let iw = interpolate_weights(&coarse, &fine).unwrap();
        for w in &iw.weights {
            let sum: f64 = w.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(w.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn interpolation_on_a_coarse_point_is_a_delta() {
        let coarse = line_cloud();
        let fine = PointCloud::new(vec![[2.0, 0.0, 0.0]]).unwrap();
        let iw = interpolate_weights(&coarse, &fine).unwrap();
        assert_eq!(iw.indices[0][0], 2);
        assert!((iw.weights[0][0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn interpolation_needs_three_sources() {
        let coarse = PointCloud::new(vec![[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        let fine = PointCloud::new(vec![[0.5, 0.0, 0.0]]).unwrap();
        assert!(interpolate_weights(&coarse, &fine).is_err());
    }
}
