//! Individual energy terms, evaluated directly from a [`StitchProblem`].

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{DuplicationEdge, StitchProblem};
use crate::geometry::Point;
use crate::image::{Plane, Rgb};

/// Unnormalized Gaussian, `G(0) = 1`.
pub fn gaussian(dist2: f64, sigma: f64) -> f64 {
    (-dist2 / (2.0 * sigma * sigma)).exp()
}

/// Integer offsets of the closed disk of radius `r`, row-major.
pub(crate) fn disk(r: usize) -> Vec<(i64, i64)> {
    let r = r as i64;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

fn color_dist(a: Rgb, b: Rgb) -> f64 {
    let d: f64 = (0..3).map(|k| (a[k] as f64 - b[k] as f64).powi(2)).sum();
    d.sqrt()
}

/// Mask penalty: the reference label pays where the reference is invalid;
/// any candidate label pays unless every candidate is valid.
pub fn mask_term(x: usize, y: usize, label: usize, problem: &StitchProblem) -> f64 {
    let lm = problem.params().lambda_mask;
    if label == 0 {
        if problem.source(0).is_valid(x, y) {
            0.0
        } else {
            lm
        }
    } else if (1..problem.labels()).all(|i| problem.source(i).is_valid(x, y)) {
        0.0
    } else {
        lm
    }
}

/// Σ G(‖p − q‖) over the inliers `q` within `3σ` of `p`.
pub fn motion_quality(p: Point, inliers: &[Point], sigma: f64) -> f64 {
    let cutoff = 9.0 * sigma * sigma;
    inliers
        .iter()
        .map(|&q| p.dist2(q))
        .filter(|&d2| d2 <= cutoff)
        .map(|d2| gaussian(d2, sigma))
        .sum()
}

/// [`motion_quality`] at every pixel, by splatting each inlier.
pub fn motion_quality_plane(width: usize, height: usize, inliers: &[Point], sigma: f64) -> Plane {
    let mut plane = Plane::zeros(width, height);
    let cutoff = 9.0 * sigma * sigma;
    let reach = (3.0 * sigma).ceil() as i64 + 1;
    for &q in inliers {
        let (cx, cy) = (q.x.round() as i64, q.y.round() as i64);
        for y in (cy - reach).max(0)..=(cy + reach).min(height as i64 - 1) {
            for x in (cx - reach).max(0)..=(cx + reach).min(width as i64 - 1) {
                let d2 = Point::new(x as f64, y as f64).dist2(q);
                if d2 <= cutoff {
                    let v = plane.get(x as usize, y as usize) + gaussian(d2, sigma);
                    plane.set(x as usize, y as usize, v);
                }
            }
        }
    }
    plane
}

/// Mean RGB distance between the reference and candidate `label` over the
/// patch around `(x, y)`, counting only pixels valid in both. Returns the
/// score and the number of pixels it averages (0 when none are valid, in
/// which case the score is 0).
pub fn color_quality(x: usize, y: usize, label: usize, problem: &StitchProblem) -> (f64, usize) {
    color_quality_with(
        x,
        y,
        problem.source(0),
        problem.source(label),
        &disk(problem.params().patch_radius),
    )
}

fn color_quality_with(
    x: usize,
    y: usize,
    reference: &crate::image::Image,
    candidate: &crate::image::Image,
    offsets: &[(i64, i64)],
) -> (f64, usize) {
    let (mut sum, mut count) = (0.0, 0usize);
    for &(dx, dy) in offsets {
        let (qx, qy) = (x as i64 + dx, y as i64 + dy);
        if !reference.in_bounds(qx, qy) {
            continue;
        }
        let (qx, qy) = (qx as usize, qy as usize);
        if reference.is_valid(qx, qy) && candidate.is_valid(qx, qy) {
            sum += color_dist(reference.get(qx, qy), candidate.get(qx, qy));
            count += 1;
        }
    }
    if count == 0 {
        (0.0, 0)
    } else {
        (sum / count as f64, count)
    }
}

/// Normalized warp scores `ê_i ∈ [-1, 1]` for every label; the plane of
/// label 0 is all zeros.
///
/// The raw score `e_i = -Q_m + λ_c·Q_c` is mapped affinely so its minimum
/// over the pixels valid in candidate `i` becomes -1 and its maximum 1
/// (all 0 if it is constant). Pixels where the candidate is invalid get 1.
/// The energy charges `λ_w·ê` to candidate labels.
pub fn warp_term(problem: &StitchProblem) -> Vec<Plane> {
    let (w, h) = problem.dims();
    let params = problem.params();
    let offsets = disk(params.patch_radius);
    let mut planes = vec![Plane::zeros(w, h)];
    for label in 1..problem.labels() {
        let qm = motion_quality_plane(w, h, problem.inliers(label), params.sigma_motion);
        let (reference, candidate) = (problem.source(0), problem.source(label));
        let raw: Vec<Option<f64>> = (0..h)
            .into_par_iter()
            .flat_map_iter(|y| {
                let qm = &qm;
                let offsets = &offsets;
                (0..w).map(move |x| {
                    candidate.is_valid(x, y).then(|| {
                        let (qc, _) = color_quality_with(x, y, reference, candidate, offsets);
                        -qm.get(x, y) + params.lambda_color * qc
                    })
                })
            })
            .collect();
        let (lo, hi) = raw
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let data = raw
            .iter()
            .map(|v| match v {
                None => 1.0,
                Some(_) if hi <= lo => 0.0,
                Some(e) => (2.0 * (e - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0),
            })
            .collect();
        planes.push(Plane::from_vec(w, h, data));
    }
    planes
}

/// Cost of the seam between 4-adjacent pixels `p` and `q` labelled `a` and
/// `b`: color mismatch of the two sources at both pixels, mean gradient
/// magnitude of the chosen sides, and a constant. Invalid pixels count as
/// black with zero gradient.
pub fn smoothness_term(
    p: (usize, usize),
    q: (usize, usize),
    a: usize,
    b: usize,
    problem: &StitchProblem,
) -> f64 {
    if a == b {
        return 0.0;
    }
    let params = problem.params();
    let color = |label: usize, (x, y): (usize, usize)| -> Rgb {
        let s = problem.source(label);
        if s.is_valid(x, y) {
            s.get(x, y)
        } else {
            [0.0; 3]
        }
    };
    let grad = |label: usize, (x, y): (usize, usize)| -> f64 {
        if problem.source(label).is_valid(x, y) {
            problem.gradient(label).get(x, y)
        } else {
            0.0
        }
    };
    let seam = color_dist(color(a, p), color(b, p)) + color_dist(color(a, q), color(b, q));
    params.lambda_seam * seam
        + params.lambda_edge * (grad(a, p) + grad(b, q)) / 2.0
        + params.lambda_potts
}

/// Duplication edges for every candidate: each pair `(p, q)` shifted by
/// every offset of the disk of radius `r_dup`, weighted by `λ_d·G(‖δ‖)`.
/// Off-canvas endpoints and self-loops are skipped; edges with the same
/// endpoints and label are merged by summing their weights. Sorted by
/// `(label, a, b)`.
pub fn build_duplication_edges(problem: &StitchProblem) -> Vec<DuplicationEdge> {
    let params = problem.params();
    let (w, h) = problem.dims();
    let offsets = disk(params.dup_radius);
    let mut merged: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
    for label in 1..problem.labels() {
        for pair in problem.pairs(label) {
            let (px, py) = (pair.p.x.round() as i64, pair.p.y.round() as i64);
            let (qx, qy) = (pair.q.x.round() as i64, pair.q.y.round() as i64);
            for &(dx, dy) in &offsets {
                let (ax, ay, bx, by) = (px + dx, py + dy, qx + dx, qy + dy);
                let inside = |x: i64, y: i64| x >= 0 && y >= 0 && x < w as i64 && y < h as i64;
                if !inside(ax, ay) || !inside(bx, by) {
                    continue;
                }
                let a = ay as usize * w + ax as usize;
                let b = by as usize * w + bx as usize;
                if a == b {
                    continue;
                }
                let weight =
                    params.lambda_dup * gaussian((dx * dx + dy * dy) as f64, params.sigma_dup);
                *merged.entry((label, a, b)).or_insert(0.0) += weight;
            }
        }
    }
    merged
        .into_iter()
        .map(|((label, a, b), weight)| DuplicationEdge {
            a,
            b,
            label,
            weight,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::{DuplicationPair, EnergyParams};
    use super::*;
    use crate::image::Image;

    fn problem_with(sources: Vec<Image>, params: EnergyParams) -> StitchProblem {
        let n = sources.len() - 1;
        StitchProblem::new(sources, vec![Vec::new(); n], vec![Vec::new(); n], params).unwrap()
    }

    #[test]
    fn mask_term_examples() {
        let full = Image::filled(3, 3, [10.0; 3]);
        let mut hole = full.clone();
        hole.invalidate(1, 1);
        let p = problem_with(
            vec![full.clone(), full.clone(), hole.clone()],
            EnergyParams::default(),
        );
        let lm = 1e4;
        for label in 0..3 {
            assert_eq!(mask_term(0, 0, label, &p), 0.0);
        }
        assert_eq!(mask_term(1, 1, 1, &p), lm);
        let q = problem_with(vec![hole, full], EnergyParams::default());
        assert_eq!(mask_term(1, 1, 0, &q), lm);
        assert_eq!(mask_term(1, 1, 1, &q), 0.0);
    }

    #[test]
    fn motion_quality_examples() {
        let p = Point::new(5.0, 5.0);
        assert_eq!(motion_quality(p, &[], 2.5), 0.0);
        assert_eq!(motion_quality(p, &[p], 2.5), 1.0);
        let at_sigma = motion_quality(p, &[Point::new(7.5, 5.0)], 2.5);
        assert!((at_sigma - (-0.5f64).exp()).abs() < 1e-12);
        assert!((at_sigma - 0.6065).abs() < 1e-4);
        assert_eq!(motion_quality(p, &[Point::new(20.0, 5.0)], 2.5), 0.0);
    }

    #[test]
    fn motion_plane_agrees_with_pointwise() {
        let inliers = [
            Point::new(3.2, 4.7),
            Point::new(6.0, 6.0),
            Point::new(15.5, 1.0),
        ];
        let plane = motion_quality_plane(20, 10, &inliers, 2.0);
        for y in 0..10 {
            for x in 0..20 {
                let direct = motion_quality(Point::new(x as f64, y as f64), &inliers, 2.0);
                assert!((plane.get(x, y) - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn color_quality_examples() {
        let a = crate::synth::textured_image(9, 9, 2);
        let p = problem_with(vec![a.clone(), a.clone()], EnergyParams::default());
        assert_eq!(color_quality(4, 4, 1, &p), (0.0, 29));

        let shifted = Image::from_fn(9, 9, |x, y| {
            let c = a.get(x, y);
            [c[0] + 3.0, c[1], c[2]]
        });
        let p = problem_with(vec![a.clone(), shifted], EnergyParams::default());
        let (q, n) = color_quality(4, 4, 1, &p);
        assert!((q - 3.0).abs() < 1e-9);
        assert_eq!(n, 29);

        let p = problem_with(vec![a, Image::empty(9, 9)], EnergyParams::default());
        assert_eq!(color_quality(4, 4, 1, &p), (0.0, 0));
    }

    #[test]
    fn warp_term_normalization() {
        let a = Image::filled(6, 4, [50.0; 3]);
        let p = problem_with(vec![a.clone(), a.clone()], EnergyParams::default());
        let planes = warp_term(&p);
        assert!(planes[1].data().iter().all(|&v| v == 0.0));
        assert!(planes[0].data().iter().all(|&v| v == 0.0));

        let p = StitchProblem::new(
            vec![a.clone(), a],
            vec![vec![Point::new(1.0, 1.0)]],
            vec![Vec::new()],
            EnergyParams::default(),
        )
        .unwrap();
        let planes = warp_term(&p);
        assert_eq!(planes[1].get(1, 1), -1.0);
        let max = planes[1]
            .data()
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(max, 1.0);
    }

    #[test]
    fn smoothness_examples() {
        let a = Image::filled(2, 1, [100.0; 3]);
        let b = Image::filled(2, 1, [110.0; 3]);
        let params = EnergyParams {
            lambda_seam: 1.0,
            lambda_edge: 0.0,
            lambda_potts: 0.0,
            ..Default::default()
        };
        let p = problem_with(vec![a.clone(), b], params.clone());
        let v = smoothness_term((0, 0), (1, 0), 0, 1, &p);
        assert!((v - 2.0 * 300f64.sqrt()).abs() < 1e-9);
        assert!((v - 34.641).abs() < 1e-3);
        assert_eq!(smoothness_term((0, 0), (1, 0), 1, 1, &p), 0.0);

        let same = problem_with(vec![a.clone(), a], params);
        assert_eq!(smoothness_term((0, 0), (1, 0), 0, 1, &same), 0.0);
    }

    fn dup_problem(r: usize, pairs: Vec<DuplicationPair>) -> StitchProblem {
        let img = Image::filled(20, 20, [1.0; 3]);
        let params = EnergyParams {
            dup_radius: r,
            lambda_dup: 500.0,
            ..Default::default()
        };
        StitchProblem::new(
            vec![img.clone(), img],
            vec![Vec::new()],
            vec![pairs],
            params,
        )
        .unwrap()
    }

    #[test]
    fn single_duplication_edge_at_zero_radius() {
        let pair = DuplicationPair {
            p: Point::new(3.0, 4.0),
            q: Point::new(12.0, 4.0),
        };
        let edges = build_duplication_edges(&dup_problem(0, vec![pair]));
        assert_eq!(
            edges,
            vec![DuplicationEdge {
                a: 4 * 20 + 3,
                b: 4 * 20 + 12,
                label: 1,
                weight: 500.0
            }]
        );
    }

    #[test]
    fn unit_radius_gives_five_edges() {
        let pair = DuplicationPair {
            p: Point::new(5.0, 5.0),
            q: Point::new(12.0, 8.0),
        };
        let edges = build_duplication_edges(&dup_problem(1, vec![pair]));
        assert_eq!(edges.len(), 5);
        let side = 500.0 * (-1.0 / (2.0 * 2.5 * 2.5f64)).exp();
        let mut weights: Vec<f64> = edges.iter().map(|e| e.weight).collect();
        weights.sort_by(|a, b| a.total_cmp(b));
        for w in &weights[..4] {
            assert!((w - side).abs() < 1e-9);
        }
        assert!((weights[4] - 500.0).abs() < 1e-9);
    }

    #[test]
    fn duplication_edges_skip_self_loops_and_off_canvas() {
        let same = DuplicationPair {
            p: Point::new(5.0, 5.0),
            q: Point::new(5.0, 5.0),
        };
        assert!(build_duplication_edges(&dup_problem(2, vec![same])).is_empty());
        let corner = DuplicationPair {
            p: Point::new(0.0, 0.0),
            q: Point::new(10.0, 0.0),
        };
        // Offsets with a negative component leave the canvas: 3 of the 5 remain.
        let edges = build_duplication_edges(&dup_problem(1, vec![corner]));
        assert_eq!(edges.len(), 3);
    }
}
