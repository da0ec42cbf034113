//! Sampling and grouping primitives for the point stream.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};

fn dist2(a: Point3, b: Point3) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Draws exactly `n` points: without replacement when the cloud is large
/// enough, otherwise i.i.d. with replacement.
pub fn random_sample(pc: &PointCloud, n: usize, seed: u64) -> Result<PointCloud> {
    if pc.is_empty() {
        return Err(Error::degenerate("cannot sample from an empty cloud"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = if pc.len() >= n {
        index::sample(&mut rng, pc.len(), n).into_vec()
    } else {
        (0..n).map(|_| rng.random_range(0..pc.len())).collect()
    };
    Ok(PointCloud::new(picks.into_iter().map(|i| pc.points[i]).collect()))
}

/// Farthest point sampling with a seeded first pick.
///
/// The seed selects a rank uniformly and the first sample is the point with
/// that rank in lexicographic coordinate order, so the choice depends on the
/// point set and not on storage order.
pub fn farthest_point_sample(pc: &PointCloud, n: usize, seed: u64) -> Result<Vec<usize>> {
    check_fps(pc, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rank = rng.random_range(0..pc.len());
    let mut order: Vec<usize> = (0..pc.len()).collect();
    order.sort_by(|&a, &b| {
        let (p, q) = (pc.points[a], pc.points[b]);
        p[0].total_cmp(&q[0])
            .then(p[1].total_cmp(&q[1]))
            .then(p[2].total_cmp(&q[2]))
            .then(a.cmp(&b))
    });
    farthest_point_sample_from(pc, n, order[rank])
}

/// Farthest point sampling from a fixed first index. Each further pick
/// maximises the distance to the already chosen set; ties go to the lowest
/// index.
pub fn farthest_point_sample_from(pc: &PointCloud, n: usize, first: usize) -> Result<Vec<usize>> {
    check_fps(pc, n)?;
    if first >= pc.len() {
        return Err(Error::invalid(format!("first index {first} out of {}", pc.len())));
    }
    let mut chosen = Vec::with_capacity(n);
    let mut nearest = vec![f64::INFINITY; pc.len()];
    let mut current = first;
    loop {
        chosen.push(current);
        if chosen.len() == n {
            break;
        }
        let c = pc.points[current];
        let mut best = 0;
        let mut best_d = f64::NEG_INFINITY;
        for (i, (p, d)) in pc.points.iter().zip(nearest.iter_mut()).enumerate() {
            *d = d.min(dist2(*p, c));
            if *d > best_d {
                best_d = *d;
                best = i;
            }
        }
        current = best;
    }
    Ok(chosen)
}

fn check_fps(pc: &PointCloud, n: usize) -> Result<()> {
    if n == 0 || n > pc.len() {
        return Err(Error::invalid(format!(
            "farthest point sampling needs 1 <= n <= {}, got {n}",
            pc.len()
        )));
    }
    Ok(())
}

/// Largest distance from any point to its nearest selected point.
pub fn covering_radius(pc: &PointCloud, selected: &[usize]) -> f64 {
    pc.points
        .iter()
        .map(|p| {
            selected
                .iter()
                .map(|&s| dist2(*p, pc.points[s]))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
        .sqrt()
}

/// Up to `k` indices within `radius` of `center`, nearest first (ties by
/// index), padded to exactly `k` by repeating the nearest. Empty when no
/// point qualifies.
pub fn ball_query(points: &[Point3], center: Point3, radius: f64, k: usize) -> Vec<usize> {
    let r2 = radius * radius;
    let mut hits: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let d = dist2(*p, center);
            (d <= r2).then_some((d, i))
        })
        .collect();
    if hits.is_empty() {
        return Vec::new();
    }
    hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    hits.truncate(k);
    let nearest = hits[0].1;
    let mut out: Vec<usize> = hits.into_iter().map(|(_, i)| i).collect();
    out.resize(k, nearest);
    out
}

/// Local neighbourhoods around centroids, `K` rows each.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedPoints {
    pub centroids: Vec<Point3>,
    pub k: usize,
    /// Feature channels carried alongside the three relative coordinates.
    pub channels: usize,
    /// Point index behind every row, `centroids.len() * k` entries.
    pub indices: Vec<usize>,
    /// Rows of `[dx, dy, dz, f_1 .. f_C]`, centroid-major.
    pub rows: Vec<f64>,
}

impl GroupedPoints {
    pub fn row_width(&self) -> usize {
        3 + self.channels
    }

    pub fn row(&self, group: usize, slot: usize) -> &[f64] {
        let w = self.row_width();
        let start = (group * self.k + slot) * w;
        &self.rows[start..start + w]
    }
}

/// Groups `k` neighbours around each centroid (a member of `pc`). `features`
/// holds `channels` values per point, row-major, and may be empty when
/// `channels == 0`.
pub fn ball_query_group(
    pc: &PointCloud,
    features: &[f64],
    channels: usize,
    centroid_indices: &[usize],
    radius: f64,
    k: usize,
) -> Result<GroupedPoints> {
    if radius.is_nan() || radius <= 0.0 || k == 0 {
        return Err(Error::invalid(format!(
            "ball query needs radius > 0 and k >= 1, got {radius} and {k}"
        )));
    }
    if features.len() != pc.len() * channels {
        return Err(Error::invalid(format!(
            "expected {} feature values, got {}",
            pc.len() * channels,
            features.len()
        )));
    }
    if let Some(bad) = centroid_indices.iter().find(|&&i| i >= pc.len()) {
        return Err(Error::invalid(format!("centroid index {bad} out of {}", pc.len())));
    }
    let w = 3 + channels;
    let mut indices = Vec::with_capacity(centroid_indices.len() * k);
    let mut rows = Vec::with_capacity(centroid_indices.len() * k * w);
    let mut centroids = Vec::with_capacity(centroid_indices.len());
    for &ci in centroid_indices {
        let c = pc.points[ci];
        centroids.push(c);
        let mut members = ball_query(&pc.points, c, radius, k);
        if members.is_empty() {
            members = vec![ci; k];
        }
        for &m in &members {
            let p = pc.points[m];
            rows.extend_from_slice(&[p[0] - c[0], p[1] - c[1], p[2] - c[2]]);
            rows.extend_from_slice(&features[m * channels..(m + 1) * channels]);
        }
        indices.extend(members);
    }
    Ok(GroupedPoints {
        centroids,
        k,
        channels,
        indices,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted(mut pts: Vec<Point3>) -> Vec<Point3> {
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pts
    }

    fn line_cloud(n: usize) -> PointCloud {
        PointCloud::new((0..n).map(|i| [i as f64 * 0.37, (i * i) as f64 * 0.01, 1.0]).collect())
    }

    #[test]
    fn full_draw_is_a_permutation() {
        let pc = line_cloud(9);
        let s = random_sample(&pc, 9, 3).unwrap();
        assert_eq!(sorted(s.points), sorted(pc.points.clone()));
    }

    #[test]
    fn short_cloud_sampled_with_replacement() {
        let pc = line_cloud(3);
        let s = random_sample(&pc, 5, 11).unwrap();
        assert_eq!(s.len(), 5);
        assert!(s.points.iter().all(|p| pc.points.contains(p)));
    }

    #[test]
    fn sampling_is_seeded() {
        let pc = line_cloud(50);
        assert_eq!(random_sample(&pc, 10, 5).unwrap(), random_sample(&pc, 10, 5).unwrap());
        assert!(matches!(
            random_sample(&PointCloud::default(), 3, 0),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn fps_picks_farthest() {
        let pc = PointCloud::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.4, 0.0, 0.0]]);
        assert_eq!(farthest_point_sample_from(&pc, 2, 0).unwrap(), vec![0, 1]);
    }

    #[test]
    fn fps_base_and_exhaustive_cases() {
        let pc = line_cloud(6);
        let one = farthest_point_sample(&pc, 1, 4).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one, farthest_point_sample(&pc, 1, 4).unwrap());
        let mut all = farthest_point_sample(&pc, 6, 4).unwrap();
        all.sort();
        assert_eq!(all, (0..6).collect::<Vec<_>>());
        assert!(farthest_point_sample(&pc, 7, 0).is_err());
        assert!(farthest_point_sample(&pc, 0, 0).is_err());
    }

    #[test]
    fn fps_ties_go_to_lowest_index() {
        // Points 1 and 2 are equidistant from point 0.
        let pc = PointCloud::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]);
        assert_eq!(farthest_point_sample_from(&pc, 2, 0).unwrap(), vec![0, 1]);
    }

    #[test]
    fn fps_first_pick_follows_the_point() {
        let pc = line_cloud(20);
        let picks = farthest_point_sample(&pc, 5, 77).unwrap();
        let mut rev = pc.clone();
        rev.points.reverse();
        let picks_rev = farthest_point_sample(&rev, 5, 77).unwrap();
        let a: Vec<Point3> = picks.iter().map(|&i| pc.points[i]).collect();
        let b: Vec<Point3> = picks_rev.iter().map(|&i| rev.points[i]).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_ball_repeats_centroid() {
        let pc = PointCloud::new(vec![[0.0; 3], [5.0, 0.0, 0.0]]);
        let g = ball_query_group(&pc, &[], 0, &[0], 0.5, 4).unwrap();
        assert_eq!(g.indices, vec![0; 4]);
        assert!(g.rows.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn fill_repeats_nearest_qualifier() {
        let pts = [[0.1, 0.0, 0.0], [0.5, 0.0, 0.0]];
        assert_eq!(ball_query(&pts, [0.0; 3], 0.2, 2), vec![0, 0]);
        assert!(ball_query(&pts, [9.0; 3], 0.2, 2).is_empty());
    }

    #[test]
    fn saturated_ball_holds_every_point_once() {
        let pc = line_cloud(5);
        let feats: Vec<f64> = (0..10).map(f64::from).collect();
        let g = ball_query_group(&pc, &feats, 2, &[2], 100.0, 5).unwrap();
        let mut idx = g.indices.clone();
        idx.sort();
        assert_eq!(idx, vec![0, 1, 2, 3, 4]);
        // Own entry first, at the origin, features copied unchanged.
        assert_eq!(g.row(0, 0), &[0.0, 0.0, 0.0, 4.0, 5.0]);
    }

    #[test]
    fn grouping_preconditions() {
        let pc = line_cloud(3);
        assert!(ball_query_group(&pc, &[], 0, &[0], 0.0, 2).is_err());
        assert!(ball_query_group(&pc, &[], 0, &[0], 1.0, 0).is_err());
        assert!(ball_query_group(&pc, &[], 0, &[3], 1.0, 2).is_err());
        assert!(ball_query_group(&pc, &[1.0], 1, &[0], 1.0, 2).is_err());
    }

    #[test]
    fn covering_radius_of_full_set_is_zero() {
        let pc = line_cloud(4);
        assert_eq!(covering_radius(&pc, &[0, 1, 2, 3]), 0.0);
    }
}
