//! Harris corners matched by normalized cross-correlation.
//!
//! Deliberately simple: no scale or rotation invariance. Good enough for
//! synthetic scenes and mildly-transformed photographs.

use rayon::prelude::*;

use super::{Correspondence, CorrespondenceSet, Source};
use crate::error::{Result, StitchError};
use crate::geometry::Point;
use crate::image::{to_grayscale, Image, Plane};

#[derive(Clone, Debug, PartialEq)]
pub struct MatcherParams {
    pub harris_k: f64,
    pub nms_radius: usize,
    pub max_corners: usize,
    /// Side length of the square NCC patch (odd).
    pub patch_size: usize,
    pub min_ncc: f64,
    /// Matches below this count make the pipeline unable to proceed.
    pub min_matches: usize,
}

impl Default for MatcherParams {
    fn default() -> Self {
        MatcherParams {
            harris_k: 0.04,
            nms_radius: 5,
            max_corners: 2000,
            patch_size: 11,
            min_ncc: 0.8,
            min_matches: 8,
        }
    }
}

/// Corner responses below this fraction of the strongest response are ignored.
const RELATIVE_RESPONSE_FLOOR: f64 = 1e-3;

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

fn blur(p: &Plane, kernel: &[f64]) -> Plane {
    let (w, h) = (p.width(), p.height());
    let r = (kernel.len() / 2) as i64;
    let clampi = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let tmp = Plane::from_fn(w, h, |x, y| {
        kernel
            .iter()
            .enumerate()
            .map(|(k, c)| c * p.get(clampi(x as i64 + k as i64 - r, w), y))
            .sum()
    });
    Plane::from_fn(w, h, |x, y| {
        kernel
            .iter()
            .enumerate()
            .map(|(k, c)| c * tmp.get(x, clampi(y as i64 + k as i64 - r, h)))
            .sum()
    })
}

/// Harris corners on `img`, strongest first, at most `max_corners`. Only
/// positions whose whole `patch_size` window is valid are reported.
pub fn harris_corners(img: &Image, params: &MatcherParams) -> Vec<(usize, usize)> {
    let gray = to_grayscale(img);
    let (w, h) = (gray.width(), gray.height());
    let half = params.patch_size / 2;
    if w <= 2 * half + 2 || h <= 2 * half + 2 {
        return Vec::new();
    }
    let mut ixx = Plane::zeros(w, h);
    let mut iyy = Plane::zeros(w, h);
    let mut ixy = Plane::zeros(w, h);
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let gx = (gray.get(x + 1, y) - gray.get(x - 1, y)) / 2.0;
            let gy = (gray.get(x, y + 1) - gray.get(x, y - 1)) / 2.0;
            ixx.set(x, y, gx * gx);
            iyy.set(x, y, gy * gy);
            ixy.set(x, y, gx * gy);
        }
    }
    let kernel = gaussian_kernel(1.0);
    let (sxx, syy, sxy) = (
        blur(&ixx, &kernel),
        blur(&iyy, &kernel),
        blur(&ixy, &kernel),
    );
    let k = params.harris_k;
    let response = Plane::from_fn(w, h, |x, y| {
        let (a, b, c) = (sxx.get(x, y), syy.get(x, y), sxy.get(x, y));
        a * b - c * c - k * (a + b) * (a + b)
    });

    let margin = half + 1;
    let window_valid = |cx: usize, cy: usize| {
        (cy - half..=cy + half).all(|yy| (cx - half..=cx + half).all(|xx| img.is_valid(xx, yy)))
    };
    let max_r = response.data().iter().cloned().fold(0.0f64, f64::max);
    if max_r <= 0.0 {
        return Vec::new();
    }
    let floor = RELATIVE_RESPONSE_FLOOR * max_r;
    let rad = params.nms_radius as i64;
    let mut corners: Vec<(f64, usize, usize)> = Vec::new();
    for y in margin..h - margin {
        for x in margin..w - margin {
            let r = response.get(x, y);
            if r <= floor {
                continue;
            }
            // Strict maximum in the window; ties go to the earlier raster position.
            let mut is_max = true;
            'nms: for dy in -rad..=rad {
                for dx in -rad..=rad {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let nr = response.get(nx as usize, ny as usize);
                    let earlier = (ny, nx) < (y as i64, x as i64);
                    if nr > r || (nr == r && earlier) {
                        is_max = false;
                        break 'nms;
                    }
                }
            }
            if is_max && window_valid(x, y) {
                corners.push((r, x, y));
            }
        }
    }
    corners.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.2, a.1).cmp(&(b.2, b.1))));
    corners.truncate(params.max_corners);
    corners.into_iter().map(|(_, x, y)| (x, y)).collect()
}

/// Zero-mean, unit-norm patch; `None` for flat patches.
fn descriptor(gray: &Plane, x: usize, y: usize, half: usize) -> Option<Vec<f64>> {
    let mut v = Vec::with_capacity((2 * half + 1).pow(2));
    for yy in y - half..=y + half {
        for xx in x - half..=x + half {
            v.push(gray.get(xx, yy));
        }
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|a| *a -= mean);
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm < 1e-6 {
        return None;
    }
    v.iter_mut().for_each(|a| *a /= norm);
    Some(v)
}

fn best_partner(d: &[f64], others: &[Vec<f64>]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (j, o) in others.iter().enumerate() {
        let s: f64 = d.iter().zip(o).map(|(a, b)| a * b).sum();
        if best.is_none_or(|(_, bs)| s > bs) {
            best = Some((j, s));
        }
    }
    best
}

/// Harris + NCC fallback matcher. Keeps mutual best matches whose NCC is at
/// least `min_ncc`; the score of each match is its NCC.
pub fn detect_and_match(
    i0: &Image,
    i1: &Image,
    params: &MatcherParams,
) -> Result<CorrespondenceSet> {
    if i0.is_empty() || i1.is_empty() {
        return Err(StitchError::InsufficientData("empty input image".into()));
    }
    let half = params.patch_size / 2;
    let describe = |img: &Image| -> (Vec<(usize, usize)>, Vec<Vec<f64>>) {
        let gray = to_grayscale(img);
        harris_corners(img, params)
            .into_iter()
            .filter_map(|(x, y)| descriptor(&gray, x, y, half).map(|d| ((x, y), d)))
            .unzip()
    };
    let (pos0, desc0) = describe(i0);
    let (pos1, desc1) = describe(i1);

    let forward: Vec<Option<(usize, f64)>> =
        desc0.par_iter().map(|d| best_partner(d, &desc1)).collect();
    let backward: Vec<Option<(usize, f64)>> =
        desc1.par_iter().map(|d| best_partner(d, &desc0)).collect();

    let mut matches = Vec::new();
    for (i, f) in forward.iter().enumerate() {
        let Some((j, s)) = *f else { continue };
        if s < params.min_ncc {
            continue;
        }
        if backward[j].map(|(bi, _)| bi) == Some(i) {
            let (x0, y0) = pos0[i];
            let (x1, y1) = pos1[j];
            matches.push(Correspondence {
                p0: Point::new(x0 as f64, y0 as f64),
                p1: Point::new(x1 as f64, y1 as f64),
                score: s.min(1.0),
            });
        }
    }
    if matches.len() < params.min_matches {
        return Err(StitchError::InsufficientMatches {
            found: matches.len(),
            needed: params.min_matches,
        });
    }
    Ok(CorrespondenceSet::new(matches, Source::BuiltinMatcher))
}
