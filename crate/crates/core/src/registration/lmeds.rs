//! Normalized DLT and least-median-of-squares homography estimation.

use nalgebra::{DMatrix, Matrix3};
use rand::seq::index::sample;
use rand::Rng;

use crate::correspond::Correspondence;
use crate::error::{Result, StitchError};
use crate::geometry::{Homography, Point};

/// Number of random minimal samples drawn by [`estimate_homography_lmeds`].
pub const LMEDS_SAMPLES: usize = 256;

/// Maximum resampling attempts per minimal sample before giving up on it.
const RESAMPLE_ATTEMPTS: usize = 16;

/// Similarity normalizing a point set to zero mean and mean distance √2.
fn normalizer(points: impl Iterator<Item = Point> + Clone) -> Matrix3<f64> {
    let n = points.clone().count().max(1) as f64;
    let (sx, sy) = points
        .clone()
        .fold((0.0, 0.0), |(a, b), p| (a + p.x, b + p.y));
    let (cx, cy) = (sx / n, sy / n);
    let mean_dist = points
        .map(|p| ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    let s = if mean_dist > 1e-12 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

fn apply(m: &Matrix3<f64>, p: Point) -> Point {
    Point::new(
        m[(0, 0)] * p.x + m[(0, 1)] * p.y + m[(0, 2)],
        m[(1, 0)] * p.x + m[(1, 1)] * p.y + m[(1, 2)],
    )
}

/// Direct linear transform with Hartley normalization; maps `p1` onto `p0`.
pub fn fit_dlt(pairs: &[Correspondence]) -> Result<Homography> {
    if pairs.len() < 4 {
        return Err(StitchError::InsufficientData(format!(
            "{} pairs, need 4",
            pairs.len()
        )));
    }
    let t0 = normalizer(pairs.iter().map(|c| c.p0));
    let t1 = normalizer(pairs.iter().map(|c| c.p1));
    let rows = (2 * pairs.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, c) in pairs.iter().enumerate() {
        let q = apply(&t1, c.p1);
        let p = apply(&t0, c.p0);
        let r = 2 * i;
        a.row_mut(r)
            .copy_from_slice(&[-q.x, -q.y, -1.0, 0.0, 0.0, 0.0, p.x * q.x, p.x * q.y, p.x]);
        a.row_mut(r + 1).copy_from_slice(&[
            0.0,
            0.0,
            0.0,
            -q.x,
            -q.y,
            -1.0,
            p.y * q.x,
            p.y * q.y,
            p.y,
        ]);
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| StitchError::Degenerate("SVD did not converge".into()))?;
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("nine singular values");
    let h = v_t.row(k);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t0_inv = t0
        .try_inverse()
        .ok_or_else(|| StitchError::Degenerate("coincident reference points".into()))?;
    Homography::new(t0_inv * hn * t1)
}

fn collinear(a: Point, b: Point, c: Point) -> bool {
    let (u, v) = (b - a, c - a);
    let lu = (u.x * u.x + u.y * u.y).sqrt();
    let lv = (v.x * v.x + v.y * v.y).sqrt();
    if lu < 1e-9 || lv < 1e-9 {
        return true;
    }
    (u.x * v.y - u.y * v.x).abs() / (lu * lv) < 1e-4
}

/// True if any three of the four points (in either image) are collinear.
fn degenerate_sample(s: &[Correspondence; 4]) -> bool {
    const TRIPLES: [[usize; 3]; 4] = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];
    TRIPLES.iter().any(|t| {
        collinear(s[t[0]].p0, s[t[1]].p0, s[t[2]].p0)
            || collinear(s[t[0]].p1, s[t[1]].p1, s[t[2]].p1)
    })
}

fn median_sq_error(h: &Homography, pairs: &[Correspondence], scratch: &mut Vec<f64>) -> f64 {
    scratch.clear();
    scratch.extend(pairs.iter().map(|c| h.transfer_error(c.p1, c.p0).powi(2)));
    let mid = (scratch.len() - 1) / 2;
    *scratch.select_nth_unstable_by(mid, |a, b| a.total_cmp(b)).1
}

fn combinations4(n: usize) -> Vec<[usize; 4]> {
    let mut out = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                for d in c + 1..n {
                    out.push([a, b, c, d]);
                }
            }
        }
    }
    out
}

/// Least-median-of-squares homography (candidate → reference).
///
/// Draws [`LMEDS_SAMPLES`] random 4-point samples (every combination when
/// there are fewer), solves each by normalized DLT, keeps the hypothesis
/// with the smallest median squared reprojection error, then re-fits by DLT
/// on the pairs whose error is below `2.5·sqrt(median)`.
pub fn estimate_homography_lmeds(
    pairs: &[Correspondence],
    rng: &mut impl Rng,
) -> Result<Homography> {
    let n = pairs.len();
    if n < 4 {
        return Err(StitchError::InsufficientData(format!("{n} pairs, need 4")));
    }
    let exhaustive = n <= 10 || n_choose_4(n) <= LMEDS_SAMPLES as u128;
    let samples: Vec<[usize; 4]> = if exhaustive {
        combinations4(n)
    } else {
        Vec::new()
    };
    let draws = if exhaustive {
        samples.len()
    } else {
        LMEDS_SAMPLES
    };

    let mut scratch = Vec::with_capacity(n);
    let mut best: Option<(f64, Homography)> = None;
    for d in 0..draws {
        let attempts = if exhaustive { 1 } else { RESAMPLE_ATTEMPTS };
        for _ in 0..attempts {
            let idx: [usize; 4] = if exhaustive {
                samples[d]
            } else {
                let v = sample(rng, n, 4);
                [v.index(0), v.index(1), v.index(2), v.index(3)]
            };
            let s = idx.map(|i| pairs[i]);
            if degenerate_sample(&s) {
                continue;
            }
            if let Ok(h) = fit_dlt(&s) {
                let med = median_sq_error(&h, pairs, &mut scratch);
                if best.as_ref().is_none_or(|(m, _)| med < *m) {
                    best = Some((med, h));
                }
            }
            break;
        }
    }
    let (median, hypothesis) =
        best.ok_or_else(|| StitchError::Degenerate("every minimal sample was degenerate".into()))?;

    let threshold_sq = (6.25 * median).max(1e-12);
    let inliers: Vec<Correspondence> = pairs
        .iter()
        .filter(|c| hypothesis.transfer_error(c.p1, c.p0).powi(2) <= threshold_sq)
        .copied()
        .collect();
    if inliers.len() >= 4 {
        if let Ok(refit) = fit_dlt(&inliers) {
            return Ok(refit);
        }
    }
    Ok(hypothesis)
}

fn n_choose_4(n: usize) -> u128 {
    let n = n as u128;
    n * (n - 1) * (n - 2) * (n - 3) / 24
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pair(h: &Homography, x: f64, y: f64) -> Correspondence {
        let q = Point::new(x, y);
        Correspondence::new(h.apply(q).unwrap(), q)
    }

    #[test]
    fn identity_from_six_exact_pairs() {
        let id = Homography::identity();
        let pts = [
            (0.0, 0.0),
            (100.0, 3.0),
            (7.0, 80.0),
            (90.0, 95.0),
            (50.0, 20.0),
            (30.0, 60.0),
        ];
        let pairs: Vec<_> = pts.iter().map(|&(x, y)| pair(&id, x, y)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let h = estimate_homography_lmeds(&pairs, &mut rng).unwrap();
        assert!(h.approx_eq(&id, 1e-9), "{h:?}");
    }

    #[test]
    fn recovers_known_homography_despite_outliers() {
        let truth =
            Homography::from_rows([[0.95, 0.04, 21.0], [-0.03, 1.05, -7.0], [1e-4, -5e-5, 1.0]])
                .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut pairs: Vec<_> = (0..20)
            .map(|_| pair(&truth, rng.gen_range(0.0..300.0), rng.gen_range(0.0..200.0)))
            .collect();
        for _ in 0..8 {
            pairs.push(Correspondence::new(
                Point::new(rng.gen_range(0.0..300.0), rng.gen_range(0.0..200.0)),
                Point::new(rng.gen_range(0.0..300.0), rng.gen_range(0.0..200.0)),
            ));
        }
        let h = estimate_homography_lmeds(&pairs, &mut rng).unwrap();
        for c in &pairs[..20] {
            assert!(h.transfer_error(c.p1, c.p0) < 1e-3);
        }
    }

    #[test]
    fn three_pairs_is_insufficient() {
        let id = Homography::identity();
        let pairs: Vec<_> = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]
            .iter()
            .map(|&(x, y)| pair(&id, x, y))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            estimate_homography_lmeds(&pairs, &mut rng),
            Err(StitchError::InsufficientData(_))
        ));
    }

    #[test]
    fn all_collinear_is_degenerate() {
        let id = Homography::identity();
        let pairs: Vec<_> = (0..8)
            .map(|i| pair(&id, i as f64 * 10.0, i as f64 * 5.0))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            estimate_homography_lmeds(&pairs, &mut rng),
            Err(StitchError::Degenerate(_))
        ));
    }
}
