//! Candidate filtering: screening, inlier-set growth, set similarity and
//! greedy deduplication.

use std::collections::{HashMap, VecDeque};

use nalgebra::{DMatrix, DVector};

use super::RegistrationParams;
use crate::correspond::{reprojection_error, Correspondence, CorrespondenceSet};
use crate::geometry::{overlap_ratio, raster_corners, Homography, Point};

/// Why a homography was screened out. Ordered as the rules are evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RejectReason {
    /// (a) too far from the best similarity fit of its seed points.
    SimilarityDeviation,
    /// (b) a singular value of the linear part is outside the scale range, or
    /// the linear part is a reflection.
    Scale,
    /// (c) covers nearly the same area as the reference image.
    NearIdentity,
    /// (d) a mapped diagonal is too short, or a corner maps behind the camera.
    ShortDiagonal,
    /// Screened in, but no seed correspondence is an inlier.
    EmptyInliers,
    /// Survived deduplication, but its mesh warp could not be built.
    MeshFailure,
}

impl RejectReason {
    pub fn code(&self) -> &'static str {
        match self {
            RejectReason::SimilarityDeviation => "a-similarity",
            RejectReason::Scale => "b-scale",
            RejectReason::NearIdentity => "c-near-identity",
            RejectReason::ShortDiagonal => "d-short-diagonal",
            RejectReason::EmptyInliers => "empty-inliers",
            RejectReason::MeshFailure => "mesh-failure",
        }
    }
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.code())
    }
}

/// Least-squares similarity `[a -b tx; b a ty]` mapping `p1` onto `p0`.
pub fn fit_similarity(pairs: &[Correspondence]) -> Option<[f64; 4]> {
    if pairs.len() < 2 {
        return None;
    }
    let mut a = DMatrix::<f64>::zeros(2 * pairs.len(), 4);
    let mut b = DVector::<f64>::zeros(2 * pairs.len());
    for (i, c) in pairs.iter().enumerate() {
        let (x, y) = (c.p1.x, c.p1.y);
        a.row_mut(2 * i).copy_from_slice(&[x, -y, 1.0, 0.0]);
        a.row_mut(2 * i + 1).copy_from_slice(&[y, x, 0.0, 1.0]);
        b[2 * i] = c.p0.x;
        b[2 * i + 1] = c.p0.y;
    }
    let sol = a.svd(true, true).solve(&b, 1e-12).ok()?;
    Some([sol[0], sol[1], sol[2], sol[3]])
}

fn apply_similarity(s: &[f64; 4], p: Point) -> Point {
    Point::new(
        s[0] * p.x - s[1] * p.y + s[2],
        s[1] * p.x + s[0] * p.y + s[3],
    )
}

/// Mean distance between `h` and the similarity fitted to `seeds`, over the
/// seed points of the candidate image.
pub fn similarity_deviation(h: &Homography, seeds: &[Correspondence]) -> f64 {
    let Some(s) = fit_similarity(seeds) else {
        return 0.0;
    };
    seeds
        .iter()
        .map(|c| match h.apply(c.p1) {
            Some(q) => q.dist(apply_similarity(&s, c.p1)),
            None => f64::INFINITY,
        })
        .sum::<f64>()
        / seeds.len() as f64
}

/// Applies the four screening rules in order and reports the first failure.
///
/// Rule (c) measures the intersection-over-union of the reference raster
/// and the candidate raster mapped into the reference frame.
pub fn screen(
    h: &Homography,
    seeds: &[Correspondence],
    candidate_dims: (usize, usize),
    reference_dims: (usize, usize),
    params: &RegistrationParams,
) -> Result<(), RejectReason> {
    if similarity_deviation(h, seeds) > params.similarity_deviation_max {
        return Err(RejectReason::SimilarityDeviation);
    }
    let (s_max, s_min) = h.linear_singular_values();
    let (lo, hi) = params.scale_range;
    let m = h.matrix();
    let mirrored = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)] <= 0.0;
    if mirrored || s_min < lo || s_max > hi {
        return Err(RejectReason::Scale);
    }
    let corners = raster_corners(candidate_dims.0, candidate_dims.1);
    if corners.iter().any(|&c| h.w(c) <= 0.0) {
        return Err(RejectReason::ShortDiagonal);
    }
    let mapped: Vec<Point> = corners
        .iter()
        .map(|&c| h.apply(c).expect("w > 0"))
        .collect();
    let reference = raster_corners(reference_dims.0, reference_dims.1);
    if overlap_ratio(&mapped, &reference) > params.overlap_identity_max {
        return Err(RejectReason::NearIdentity);
    }
    let diag = corners[0].dist(corners[2]);
    let min_diag = params.diagonal_min_fraction * diag;
    if mapped[0].dist(mapped[2]) < min_diag || mapped[1].dist(mapped[3]) < min_diag {
        return Err(RejectReason::ShortDiagonal);
    }
    Ok(())
}

/// Grows the inlier set of `h` from the seed correspondences.
///
/// Starts from the seeds whose reprojection error is below `threshold` and
/// repeatedly adds any below-threshold correspondence whose reference point
/// lies within `radius` of a member, until nothing changes. The result is
/// the union of proximity-connected components containing a seed inlier,
/// so it does not depend on iteration order. Returned sorted.
pub fn inlier_set(
    h: &Homography,
    set: &CorrespondenceSet,
    seeds: &[usize],
    threshold: f64,
    radius: f64,
) -> Vec<usize> {
    let n = set.len();
    let is_inlier: Vec<bool> = set
        .iter()
        .map(|c| reprojection_error(h, c) < threshold)
        .collect();
    let cell = radius.max(1e-6);
    let key = |p: Point| ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for i in (0..n).filter(|&i| is_inlier[i]) {
        grid.entry(key(set.get(i).p0)).or_default().push(i);
    }
    let mut member = vec![false; n];
    let mut queue = VecDeque::new();
    for &s in seeds {
        if s < n && is_inlier[s] && !member[s] {
            member[s] = true;
            queue.push_back(s);
        }
    }
    let r2 = radius * radius;
    while let Some(i) = queue.pop_front() {
        let p = set.get(i).p0;
        let (kx, ky) = key(p);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let Some(bucket) = grid.get(&(kx + dx, ky + dy)) else {
                    continue;
                };
                for &j in bucket {
                    if !member[j] && set.get(j).p0.dist2(p) <= r2 {
                        member[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    (0..n).filter(|&i| member[i]).collect()
}

/// Cosine similarity of the 0-1 indicator vectors of two sorted index sets.
pub fn similarity(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let (mut i, mut j, mut common) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
        }
    }
    common as f64 / ((a.len() as f64) * (b.len() as f64)).sqrt()
}

/// Greedy deduplication. Visits sets by decreasing size (ties by position)
/// and keeps one iff its similarity to every kept set is below `threshold`,
/// stopping after `max_kept`. Returns positions into `sets`, in keep order.
pub fn deduplicate(sets: &[&[usize]], threshold: f64, max_kept: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sets.len()).collect();
    order.sort_by(|&a, &b| sets[b].len().cmp(&sets[a].len()).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.len() >= max_kept {
            break;
        }
        if kept
            .iter()
            .all(|&k| similarity(sets[i], sets[k]) < threshold)
        {
            kept.push(i);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correspond::Source;

    fn params() -> RegistrationParams {
        RegistrationParams::default()
    }

    fn seeds_for(h: &Homography) -> Vec<Correspondence> {
        let pts = [
            (10.0, 10.0),
            (60.0, 15.0),
            (30.0, 70.0),
            (80.0, 80.0),
            (45.0, 40.0),
            (5.0, 90.0),
        ];
        pts.iter()
            .map(|&(x, y)| {
                let q = Point::new(x, y);
                Correspondence::new(h.apply(q).unwrap(), q)
            })
            .collect()
    }

    #[test]
    fn identity_is_rejected_as_near_identity() {
        let h = Homography::identity();
        assert_eq!(
            screen(&h, &seeds_for(&h), (200, 100), (200, 100), &params()),
            Err(RejectReason::NearIdentity)
        );
    }

    #[test]
    fn large_translation_passes_all_rules() {
        let h = Homography::translation(0.6 * 200.0, 0.0);
        let seeds = seeds_for(&h);
        assert!(similarity_deviation(&h, &seeds) < 1e-9);
        assert_eq!(h.linear_singular_values(), (1.0, 1.0));
        let overlap = overlap_ratio(
            &raster_corners(200, 100).map(|c| h.apply(c).unwrap()),
            &raster_corners(200, 100),
        );
        assert!((overlap - 79.0 / 319.0).abs() < 1e-9, "{overlap}");
        assert_eq!(
            screen(&h, &seeds, (200, 100), (200, 100), &params()),
            Ok(())
        );
    }

    #[test]
    fn tenfold_scale_is_rejected_by_scale_rule() {
        let h =
            Homography::from_rows([[10.0, 0.0, 0.0], [0.0, 10.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(h.linear_singular_values(), (10.0, 10.0));
        assert_eq!(
            screen(&h, &seeds_for(&h), (200, 100), (200, 100), &params()),
            Err(RejectReason::Scale)
        );
    }

    #[test]
    fn strong_perspective_fails_similarity_rule() {
        let h =
            Homography::from_rows([[1.0, 0.0, 300.0], [0.0, 1.0, 0.0], [0.004, 0.0, 1.0]]).unwrap();
        assert_eq!(
            screen(&h, &seeds_for(&h), (200, 100), (200, 100), &params()),
            Err(RejectReason::SimilarityDeviation)
        );
    }

    #[test]
    fn collapsing_diagonal_is_rejected() {
        // Anisotropic squash within the scale range, mapped far away.
        let h =
            Homography::from_rows([[0.55, 0.0, 500.0], [0.0, 0.55, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let mut p = params();
        p.diagonal_min_fraction = 0.6;
        assert_eq!(
            screen(&h, &seeds_for(&h), (200, 100), (200, 100), &p),
            Err(RejectReason::ShortDiagonal)
        );
    }

    fn set_from(points: &[(f64, f64)], shift: f64) -> CorrespondenceSet {
        CorrespondenceSet::new(
            points
                .iter()
                .map(|&(x, y)| Correspondence::new(Point::new(x + shift, y), Point::new(x, y))),
            Source::Synthetic,
        )
    }

    #[test]
    fn chained_inliers_are_all_collected() {
        let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64 * 4.0, 0.0)).collect();
        let set = set_from(&pts, 0.0);
        let d = inlier_set(&Homography::identity(), &set, &[0], 3.0, 5.0);
        assert_eq!(d, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn separated_clusters_stay_apart() {
        let mut pts: Vec<(f64, f64)> = (0..5).map(|i| (i as f64 * 2.0, 0.0)).collect();
        pts.extend((0..5).map(|i| (100.0 + i as f64 * 2.0, 0.0)));
        let set = set_from(&pts, 0.0);
        let d = inlier_set(&Homography::identity(), &set, &[1, 2], 3.0, 5.0);
        assert_eq!(d, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn seeds_above_threshold_give_empty_set() {
        let set = set_from(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)], 50.0);
        assert!(inlier_set(&Homography::identity(), &set, &[0, 1, 2], 3.0, 10.0).is_empty());
    }

    #[test]
    fn cosine_similarity_examples() {
        assert_eq!(similarity(&[1, 2, 3], &[1, 2, 3]), 1.0);
        assert_eq!(similarity(&[1, 2], &[3, 4]), 0.0);
        assert_eq!(similarity(&[1, 2, 3, 4], &[3, 4, 5, 6]), 0.5);
        assert_eq!(similarity(&[], &[1]), 0.0);
    }

    #[test]
    fn dedup_examples() {
        let a: Vec<usize> = vec![1, 2, 3];
        let sets: Vec<&[usize]> = vec![&a, &a];
        assert_eq!(deduplicate(&sets, 0.5, 6), vec![0]);

        let owned: Vec<Vec<usize>> = vec![
            (0..3).collect(),
            (10..15).collect(),
            (20..22).collect(),
            (30..34).collect(),
            (40..41).collect(),
        ];
        let sets: Vec<&[usize]> = owned.iter().map(|v| v.as_slice()).collect();
        assert_eq!(deduplicate(&sets, 0.5, 3), vec![1, 3, 0]);
        assert!(deduplicate(&[], 0.5, 3).is_empty());
    }

    proptest::proptest! {
        #[test]
        fn inlier_set_is_order_independent(
            pts in proptest::collection::vec((0.0f64..60.0, 0.0f64..60.0, proptest::bool::ANY), 1..40),
            seed_pick in 0usize..40,
            rotation in 0usize..40,
        ) {
            let mk = |order: &[usize]| {
                let items: Vec<Correspondence> = order.iter().map(|&i| {
                    let (x, y, good) = pts[i];
                    Correspondence::new(Point::new(x + if good { 0.5 } else { 20.0 }, y), Point::new(x, y))
                }).collect();
                CorrespondenceSet::new(items, Source::Synthetic)
            };
            let n = pts.len();
            let order: Vec<usize> = (0..n).collect();
            let mut permuted = order.clone();
            permuted.rotate_left(rotation % n);
            permuted.reverse();
            let seed = seed_pick % n;
            let a = inlier_set(&Homography::identity(), &mk(&order), &[seed], 3.0, 8.0);
            let pos = permuted.iter().position(|&i| i == seed).unwrap();
            let b = inlier_set(&Homography::identity(), &mk(&permuted), &[pos], 3.0, 8.0);
            let mut b_orig: Vec<usize> = b.iter().map(|&i| permuted[i]).collect();
            b_orig.sort();
            proptest::prop_assert_eq!(a, b_orig);
        }
    }
}
