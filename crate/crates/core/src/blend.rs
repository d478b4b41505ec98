//! Gradient-domain (Poisson) blending of the seam composite.
//!
//! Pixels labeled 0 that are valid in the reference stay fixed to the
//! reference colors; every other valid pixel is re-solved so its gradients
//! follow the guidance field. Across a seam the guidance is the average of
//! the two sources' gradients, which spreads the color step smoothly.

use rayon::prelude::*;

use crate::error::{Result, StitchError};
use crate::image::{Image, Rgb};
use crate::seam::Labeling;
use crate::solver::{conjugate_gradient, CgStats};

pub const BLEND_TOLERANCE: f64 = 1e-6;
pub const BLEND_MAX_ITERATIONS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PixelRole {
    /// Not part of the panorama.
    Outside,
    /// Dirichlet boundary, fixed to the reference.
    Fixed,
    Free,
}

#[derive(Clone, Debug)]
pub struct BlendProblem {
    width: usize,
    height: usize,
    composite: Image,
    roles: Vec<PixelRole>,
    /// Guided `f(x+1, y) − f(x, y)`, per channel.
    gx: Vec<[f64; 3]>,
    /// Guided `f(x, y+1) − f(x, y)`, per channel.
    gy: Vec<[f64; 3]>,
}

/// Forward difference of `source` between pixels `p` and `q`, if both are
/// valid in it.
fn source_diff(source: &Image, p: usize, q: usize) -> Option<[f64; 3]> {
    let m = source.mask();
    if !(m[p] && m[q]) {
        return None;
    }
    let (a, b) = (source.pixels()[p], source.pixels()[q]);
    Some(std::array::from_fn(|c| b[c] as f64 - a[c] as f64))
}

fn guidance(labels: &[usize], sources: &[Image], p: usize, q: usize) -> [f64; 3] {
    let (a, b) = (labels[p], labels[q]);
    if a == b {
        return source_diff(&sources[a], p, q).unwrap_or([0.0; 3]);
    }
    match (
        source_diff(&sources[a], p, q),
        source_diff(&sources[b], p, q),
    ) {
        (Some(u), Some(v)) => std::array::from_fn(|c| (u[c] + v[c]) / 2.0),
        (Some(u), None) | (None, Some(u)) => u,
        (None, None) => [0.0; 3],
    }
}

/// Assembles the guidance field and the boundary from a labeled composite.
pub fn build_guidance(
    composite: &Image,
    labeling: &Labeling,
    sources: &[Image],
) -> Result<BlendProblem> {
    let (w, h) = composite.dims();
    if (labeling.width(), labeling.height()) != (w, h) {
        return Err(StitchError::InsufficientData(
            "label map does not match the composite".into(),
        ));
    }
    if sources.is_empty() || sources.iter().any(|s| s.dims() != (w, h)) {
        return Err(StitchError::InsufficientData(
            "sources must be non-empty and match the composite".into(),
        ));
    }
    let labels = labeling.as_slice();
    if let Some(&bad) = labels.iter().find(|&&l| l >= sources.len()) {
        return Err(StitchError::InsufficientData(format!(
            "label {bad} has no source"
        )));
    }
    if composite.valid_count() == 0 {
        return Err(StitchError::EmptyProblem(
            "composite has no valid pixels".into(),
        ));
    }
    let roles = (0..w * h)
        .map(|p| {
            if !composite.mask()[p] {
                PixelRole::Outside
            } else if labels[p] == 0 && sources[0].mask()[p] {
                PixelRole::Fixed
            } else {
                PixelRole::Free
            }
        })
        .collect();
    let gx = (0..w * h)
        .map(|p| {
            if p % w + 1 < w {
                guidance(labels, sources, p, p + 1)
            } else {
                [0.0; 3]
            }
        })
        .collect();
    let gy = (0..w * h)
        .map(|p| {
            if p / w + 1 < h {
                guidance(labels, sources, p, p + w)
            } else {
                [0.0; 3]
            }
        })
        .collect();
    Ok(BlendProblem {
        width: w,
        height: h,
        composite: composite.clone(),
        roles,
        gx,
        gy,
    })
}

impl BlendProblem {
    pub fn role(&self, x: usize, y: usize) -> PixelRole {
        self.roles[y * self.width + x]
    }

    pub fn gx(&self, x: usize, y: usize) -> [f64; 3] {
        self.gx[y * self.width + x]
    }

    pub fn gy(&self, x: usize, y: usize) -> [f64; 3] {
        self.gy[y * self.width + x]
    }

    pub fn free_count(&self) -> usize {
        self.roles.iter().filter(|&&r| r == PixelRole::Free).count()
    }

    pub fn fixed_count(&self) -> usize {
        self.roles
            .iter()
            .filter(|&&r| r == PixelRole::Fixed)
            .count()
    }

    /// In-domain 4-neighbors of `p` with the guided difference `f(p) − f(q)`.
    fn neighbors(&self, p: usize) -> impl Iterator<Item = (usize, [f64; 3])> + '_ {
        let (w, h) = (self.width, self.height);
        let (x, y) = (p % w, p / w);
        let neg = |g: [f64; 3]| g.map(|v| -v);
        let left = (x > 0).then(|| (p - 1, self.gx[p - 1]));
        let right = (x + 1 < w).then(|| (p + 1, neg(self.gx[p])));
        let up = (y > 0).then(|| (p - w, self.gy[p - w]));
        let down = (y + 1 < h).then(|| (p + w, neg(self.gy[p])));
        [left, right, up, down]
            .into_iter()
            .flatten()
            .filter(|&(q, _)| self.roles[q] != PixelRole::Outside)
    }

    /// Free pixels connected (through free pixels) to at least one fixed
    /// pixel. The rest have no boundary and are left as composited.
    fn anchored(&self) -> Vec<bool> {
        let mut anchored = vec![false; self.roles.len()];
        let mut seen = vec![false; self.roles.len()];
        let mut queue = std::collections::VecDeque::new();
        for p in 0..self.roles.len() {
            if self.roles[p] != PixelRole::Free || seen[p] {
                continue;
            }
            let mut component = vec![p];
            let mut touches_boundary = false;
            seen[p] = true;
            queue.push_back(p);
            while let Some(u) = queue.pop_front() {
                for (q, _) in self.neighbors(u) {
                    match self.roles[q] {
                        PixelRole::Fixed => touches_boundary = true,
                        PixelRole::Free if !seen[q] => {
                            seen[q] = true;
                            component.push(q);
                            queue.push_back(q);
                        }
                        _ => {}
                    }
                }
            }
            if touches_boundary {
                for q in component {
                    anchored[q] = true;
                }
            }
        }
        anchored
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlendStats {
    pub channels: [CgStats; 3],
    pub free_pixels: usize,
    pub fixed_pixels: usize,
    /// Free pixels in components without any boundary, passed through.
    pub unanchored_pixels: usize,
}

impl BlendStats {
    pub fn converged(&self) -> bool {
        self.channels.iter().all(|c| c.converged)
    }
}

#[derive(Clone, Debug)]
pub struct Blended {
    pub image: Image,
    pub stats: BlendStats,
}

/// Solves the Poisson equation per channel, warm-started from the
/// composite. Output values are clamped to `[0, 255]` only at the end.
pub fn solve_poisson(problem: &BlendProblem) -> Blended {
    let n = problem.roles.len();
    let anchored = problem.anchored();
    let unanchored_pixels = problem.free_count() - anchored.iter().filter(|&&a| a).count();
    if unanchored_pixels > 0 {
        log::warn!("{unanchored_pixels} free pixels have no boundary and are left unblended");
    }
    let unknowns: Vec<usize> = (0..n).filter(|&p| anchored[p]).collect();
    let mut slot = vec![usize::MAX; n];
    for (i, &p) in unknowns.iter().enumerate() {
        slot[p] = i;
    }
    let composite = &problem.composite;
    // The system matrix is shared by all channels: a diagonal of in-domain
    // neighbor counts and −1 for every unknown neighbor.
    let mut diag = vec![0.0; unknowns.len()];
    let mut starts = Vec::with_capacity(unknowns.len() + 1);
    let mut adjacent: Vec<u32> = Vec::with_capacity(4 * unknowns.len());
    starts.push(0);
    for (i, &p) in unknowns.iter().enumerate() {
        for (q, _) in problem.neighbors(p) {
            diag[i] += 1.0;
            if slot[q] != usize::MAX {
                adjacent.push(slot[q] as u32);
            }
        }
        starts.push(adjacent.len());
    }
    let apply = |v: &[f64], out: &mut [f64]| {
        for (i, o) in out.iter_mut().enumerate() {
            let mut s = diag[i] * v[i];
            for &j in &adjacent[starts[i]..starts[i + 1]] {
                s -= v[j as usize];
            }
            *o = s;
        }
    };
    let solve = |c: usize| -> (Vec<f64>, CgStats) {
        let value = |p: usize| composite.pixels()[p][c] as f64;
        let b: Vec<f64> = unknowns
            .iter()
            .map(|&p| {
                problem
                    .neighbors(p)
                    .map(|(q, g)| {
                        // Fixed neighbors and pass-through pixels are known.
                        g[c] + if slot[q] == usize::MAX { value(q) } else { 0.0 }
                    })
                    .sum()
            })
            .collect();
        let mut x: Vec<f64> = unknowns.iter().map(|&p| value(p)).collect();
        let stats = conjugate_gradient(apply, &b, &mut x, BLEND_TOLERANCE, BLEND_MAX_ITERATIONS);
        (x, stats)
    };
    let solved: Vec<(Vec<f64>, CgStats)> = (0..3).into_par_iter().map(solve).collect();
    for (c, (_, s)) in solved.iter().enumerate() {
        if !s.converged {
            log::warn!(
                "channel {c}: Poisson solve stopped at residual {:.3e} after {} iterations",
                s.relative_residual,
                s.iterations
            );
        }
    }
    let mut pixels: Vec<Rgb> = composite.pixels().to_vec();
    for (i, &p) in unknowns.iter().enumerate() {
        for c in 0..3 {
            pixels[p][c] = solved[c].0[i].clamp(0.0, 255.0) as f32;
        }
    }
    Blended {
        image: Image::from_parts(
            problem.width,
            problem.height,
            pixels,
            composite.mask().to_vec(),
        ),
        stats: BlendStats {
            channels: [solved[0].1, solved[1].1, solved[2].1],
            free_pixels: problem.free_count(),
            fixed_pixels: problem.fixed_count(),
            unanchored_pixels,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::textured_image;

    fn strip(w: usize, h: usize, cols: std::ops::Range<usize>, v: f32) -> Image {
        let mut img = Image::empty(w, h);
        for y in 0..h {
            for x in cols.clone() {
                img.set(x, y, [v; 3]);
            }
        }
        img
    }

    fn composite_of(labels: &Labeling, sources: &[Image]) -> Image {
        let (w, h) = sources[0].dims();
        let mut out = Image::empty(w, h);
        for y in 0..h {
            for x in 0..w {
                let s = &sources[labels.get(x, y)];
                if s.is_valid(x, y) {
                    out.set(x, y, s.get(x, y));
                }
            }
        }
        out
    }

    #[test]
    fn uniform_labeling_gives_source_gradients() {
        let img = textured_image(12, 9, 3);
        let labels = Labeling::uniform(12, 9, 0);
        let p = build_guidance(&img, &labels, std::slice::from_ref(&img)).unwrap();
        for y in 0..8 {
            for x in 0..11 {
                let (a, r, d) = (img.get(x, y), img.get(x + 1, y), img.get(x, y + 1));
                for c in 0..3 {
                    assert_eq!(p.gx(x, y)[c], r[c] as f64 - a[c] as f64);
                    assert_eq!(p.gy(x, y)[c], d[c] as f64 - a[c] as f64);
                }
            }
        }
    }

    #[test]
    fn seam_between_constant_sources_has_zero_guidance() {
        let (w, h) = (10, 4);
        let s0 = Image::filled(w, h, [10.0; 3]);
        let s1 = Image::filled(w, h, [20.0; 3]);
        let labels = Labeling::from_vec(w, h, (0..w * h).map(|p| (p % w >= 5) as usize).collect());
        let comp = composite_of(&labels, &[s0.clone(), s1.clone()]);
        let p = build_guidance(&comp, &labels, &[s0, s1]).unwrap();
        for y in 0..h {
            for x in 0..w - 1 {
                assert_eq!(p.gx(x, y), [0.0; 3]);
            }
        }
    }

    #[test]
    fn all_reference_labels_pass_through() {
        let img = textured_image(16, 12, 5);
        let labels = Labeling::uniform(16, 12, 0);
        let p = build_guidance(&img, &labels, &[img.clone(), img.clone()]).unwrap();
        assert_eq!(p.free_count(), 0);
        let out = solve_poisson(&p);
        assert_eq!(out.image.pixels(), img.pixels());
    }

    #[test]
    fn empty_composite_is_an_error() {
        let img = Image::empty(4, 4);
        let labels = Labeling::uniform(4, 4, 0);
        assert!(matches!(
            build_guidance(&img, &labels, std::slice::from_ref(&img)),
            Err(StitchError::EmptyProblem(_))
        ));
    }

    #[test]
    fn own_laplacian_reproduces_the_image() {
        let (w, h) = (40, 30);
        let img = textured_image(w, h, 11);
        let labels = Labeling::from_vec(
            w,
            h,
            (0..w * h)
                .map(|p| {
                    let (x, y) = (p % w, p / w);
                    (x > 0 && y > 0 && x + 1 < w && y + 1 < h) as usize
                })
                .collect(),
        );
        let p = build_guidance(&img, &labels, &[img.clone(), img.clone()]).unwrap();
        let out = solve_poisson(&p);
        assert!(out.stats.converged());
        for (a, b) in out.image.pixels().iter().zip(img.pixels()) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() < 0.5 / 255.0, "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn constant_regions_blend_without_a_step() {
        // Reference holds 10 on the left edge strip; the candidate, 20,
        // covers everything else. With zero guidance the only consistent
        // solution is the reference level everywhere.
        let (w, h) = (48, 12);
        let s0 = strip(w, h, 0..8, 10.0);
        let s1 = Image::filled(w, h, [20.0; 3]);
        let labels = Labeling::from_vec(w, h, (0..w * h).map(|p| (p % w >= 8) as usize).collect());
        let comp = composite_of(&labels, &[s0.clone(), s1.clone()]);
        let out = solve_poisson(&build_guidance(&comp, &labels, &[s0, s1]).unwrap());
        assert!(out.stats.converged());
        for y in 0..h {
            for x in 0..w - 1 {
                let d = (out.image.get(x + 1, y)[0] - out.image.get(x, y)[0]).abs();
                assert!(d < 2.0);
            }
            assert!((out.image.get(w - 1, y)[0] - 10.0).abs() < 1e-3);
        }
    }

    #[test]
    fn two_boundaries_give_a_linear_ramp() {
        // Fixed 10 on the left, fixed 20 on the right, a flat candidate in
        // between: the 1-D solution is the straight line between them.
        let (w, h) = (30, 6);
        let mut s0 = strip(w, h, 0..5, 10.0);
        for y in 0..h {
            for x in 25..30 {
                s0.set(x, y, [20.0; 3]);
            }
        }
        let s1 = Image::filled(w, h, [15.0; 3]);
        let labels = Labeling::from_vec(
            w,
            h,
            (0..w * h)
                .map(|p| (5..25).contains(&(p % w)) as usize)
                .collect(),
        );
        let comp = composite_of(&labels, &[s0.clone(), s1.clone()]);
        let out = solve_poisson(&build_guidance(&comp, &labels, &[s0, s1]).unwrap());
        for y in 0..h {
            for x in 5..25 {
                let expect = 10.0 + 10.0 * (x - 4) as f32 / 21.0;
                assert!((out.image.get(x, y)[1] - expect).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn island_without_boundary_is_untouched() {
        let (w, h) = (12, 6);
        let s0 = strip(w, h, 0..4, 50.0);
        let mut s1 = Image::filled(w, h, [90.0; 3]);
        for y in 0..h {
            s1.invalidate(6, y);
        }
        let labels = Labeling::from_vec(w, h, (0..w * h).map(|p| (p % w >= 4) as usize).collect());
        let comp = composite_of(&labels, &[s0.clone(), s1.clone()]);
        let out = solve_poisson(&build_guidance(&comp, &labels, &[s0, s1]).unwrap());
        assert_eq!(out.stats.unanchored_pixels, 5 * h);
        assert_eq!(out.image.get(9, 2), [90.0; 3]);
        assert!((out.image.get(5, 2)[0] - 50.0).abs() < 1e-3);
        assert!(!out.image.is_valid(6, 0));
    }
}
