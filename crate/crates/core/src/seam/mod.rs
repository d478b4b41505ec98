//! Seam finding: a multi-label MRF over canvas pixels choosing, per pixel,
//! the reference or one of the warped candidates, minimized by expansion
//! moves.

mod energy;
mod expansion;
mod maxflow;
mod terms;

pub use energy::{EnergyBreakdown, EnergyModel};
pub use expansion::{
    alpha_expansion, brute_force_minimize, expand_from, initial_labeling, Expansion, MoveRecord,
};
pub use maxflow::{Graph, Segment};
pub use terms::{
    build_duplication_edges, color_quality, gaussian, mask_term, motion_quality,
    motion_quality_plane, smoothness_term, warp_term,
};

use crate::error::{Result, StitchError};
use crate::geometry::Point;
use crate::image::{gradient_magnitude, to_grayscale, Image, Plane, Rgb, SENTINEL};

/// How expansion moves handle pairwise terms that a graph cut cannot
/// represent exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Truncation {
    /// Lower the keep/keep and switch/switch entries until the term is
    /// representable.
    Truncate,
    /// Raise the mixed entries instead, giving an upper bound that is exact
    /// at the current labeling.
    Majorize,
}

impl std::str::FromStr for Truncation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "truncate" => Ok(Truncation::Truncate),
            "majorize" => Ok(Truncation::Majorize),
            other => Err(format!(
                "unknown truncation policy '{other}' (truncate | majorize)"
            )),
        }
    }
}

impl std::fmt::Display for Truncation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Truncation::Truncate => "truncate",
            Truncation::Majorize => "majorize",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyParams {
    pub lambda_mask: f64,
    pub lambda_warp: f64,
    /// Weight of color quality against motion quality in the warp score.
    pub lambda_color: f64,
    pub lambda_seam: f64,
    pub lambda_edge: f64,
    pub lambda_potts: f64,
    pub lambda_dup: f64,
    /// Radius of the color-quality patch, px.
    pub patch_radius: usize,
    /// Radius of the offsets applied to duplication pairs, px.
    pub dup_radius: usize,
    pub sigma_motion: f64,
    pub sigma_dup: f64,
    pub truncation: Truncation,
}

impl Default for EnergyParams {
    fn default() -> Self {
        EnergyParams {
            lambda_mask: 1e4,
            lambda_warp: 100.0,
            lambda_color: 0.05,
            lambda_seam: 1.0,
            lambda_edge: 0.5,
            lambda_potts: 5.0,
            lambda_dup: 5000.0,
            patch_radius: 3,
            dup_radius: 5,
            sigma_motion: 2.5,
            sigma_dup: 2.5,
            truncation: Truncation::Truncate,
        }
    }
}

impl EnergyParams {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [
            ("lambda_m", self.lambda_mask),
            ("lambda_w", self.lambda_warp),
            ("lambda_c", self.lambda_color),
            ("lambda_s", self.lambda_seam),
            ("lambda_e", self.lambda_edge),
            ("lambda_potts", self.lambda_potts),
            ("lambda_d", self.lambda_dup),
        ];
        for (key, v) in lambdas {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(StitchError::config(
                    key,
                    None,
                    "must be a finite non-negative number",
                ));
            }
        }
        for (key, v) in [("sigma_m", self.sigma_motion), ("sigma_d", self.sigma_dup)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(StitchError::config(key, None, "must be positive"));
            }
        }
        Ok(())
    }
}

/// Pixel pair `(p, q)` of one candidate: `p` where a matched scene point
/// sits in the reference, `q` where the same point sits in the warped
/// candidate, both in canvas coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DuplicationPair {
    pub p: Point,
    pub q: Point,
}

/// Long-range pairwise term: costs `weight` iff pixel `a` takes label 0
/// and pixel `b` takes label `label`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DuplicationEdge {
    pub a: usize,
    pub b: usize,
    pub label: usize,
    pub weight: f64,
}

/// One multi-label seam-finding instance. Label 0 is the reference; label
/// `i ≥ 1` is the `i`-th warped candidate.
#[derive(Clone, Debug)]
pub struct StitchProblem {
    width: usize,
    height: usize,
    sources: Vec<Image>,
    gradients: Vec<Plane>,
    inliers: Vec<Vec<Point>>,
    pairs: Vec<Vec<DuplicationPair>>,
    params: EnergyParams,
}

impl StitchProblem {
    /// `sources[0]` is the reference placed on the canvas; `inliers[i]` and
    /// `pairs[i]` belong to `sources[i + 1]`.
    pub fn new(
        sources: Vec<Image>,
        inliers: Vec<Vec<Point>>,
        pairs: Vec<Vec<DuplicationPair>>,
        params: EnergyParams,
    ) -> Result<Self> {
        params.validate()?;
        if sources.len() < 2 {
            return Err(StitchError::InsufficientData(
                "seam finding needs at least one candidate".into(),
            ));
        }
        let (width, height) = sources[0].dims();
        if width == 0 || height == 0 {
            return Err(StitchError::InsufficientData("empty canvas".into()));
        }
        if sources.iter().any(|s| s.dims() != (width, height)) {
            return Err(StitchError::InsufficientData(
                "sources differ in size".into(),
            ));
        }
        let n = sources.len() - 1;
        if inliers.len() != n || pairs.len() != n {
            return Err(StitchError::InsufficientData(format!(
                "{n} candidates but {} inlier lists and {} pair lists",
                inliers.len(),
                pairs.len()
            )));
        }
        let on_canvas = |p: Point| {
            p.x >= 0.0 && p.y >= 0.0 && p.x <= (width - 1) as f64 && p.y <= (height - 1) as f64
        };
        let pairs = pairs
            .into_iter()
            .map(|list| {
                list.into_iter()
                    .filter(|d| on_canvas(d.p) && on_canvas(d.q))
                    .collect()
            })
            .collect();
        let gradients = sources
            .iter()
            .map(|s| gradient_magnitude(&to_grayscale(s)))
            .collect();
        Ok(StitchProblem {
            width,
            height,
            sources,
            gradients,
            inliers,
            pairs,
            params,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Number of labels, `N + 1`.
    pub fn labels(&self) -> usize {
        self.sources.len()
    }

    pub fn source(&self, label: usize) -> &Image {
        &self.sources[label]
    }

    pub fn sources(&self) -> &[Image] {
        &self.sources
    }

    /// Gradient magnitude of the luma of source `label`.
    pub fn gradient(&self, label: usize) -> &Plane {
        &self.gradients[label]
    }

    /// Canvas positions of the inliers of candidate `label ≥ 1`.
    pub fn inliers(&self, label: usize) -> &[Point] {
        &self.inliers[label - 1]
    }

    pub fn pairs(&self, label: usize) -> &[DuplicationPair] {
        &self.pairs[label - 1]
    }

    pub fn params(&self) -> &EnergyParams {
        &self.params
    }

    pub fn with_params(mut self, params: EnergyParams) -> Result<Self> {
        params.validate()?;
        self.params = params;
        Ok(self)
    }
}

/// Per-pixel label assignment over the canvas, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Labeling {
    width: usize,
    height: usize,
    labels: Vec<usize>,
}

impl Labeling {
    pub fn uniform(width: usize, height: usize, label: usize) -> Self {
        Labeling {
            width,
            height,
            labels: vec![label; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, labels: Vec<usize>) -> Self {
        assert_eq!(
            labels.len(),
            width * height,
            "label count does not match dimensions"
        );
        Labeling {
            width,
            height,
            labels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> usize {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, label: usize) {
        self.labels[y * self.width + x] = label;
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.labels
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [usize] {
        &mut self.labels
    }

    /// Number of pixels carrying each label `0..labels`.
    pub fn histogram(&self, labels: usize) -> Vec<usize> {
        let mut h = vec![0; labels];
        for &l in &self.labels {
            if l < labels {
                h[l] += 1;
            }
        }
        h
    }
}

/// Copies every pixel from the source its label selects; the output mask is
/// the chosen source's mask.
pub fn composite(labeling: &Labeling, problem: &StitchProblem) -> Image {
    let (w, h) = problem.dims();
    assert_eq!(
        (labeling.width, labeling.height),
        (w, h),
        "labeling does not match canvas"
    );
    let mut pixels: Vec<Rgb> = Vec::with_capacity(w * h);
    let mut mask = Vec::with_capacity(w * h);
    for (i, &l) in labeling.labels.iter().enumerate() {
        let s = &problem.sources[l];
        let valid = s.mask()[i];
        pixels.push(if valid { s.pixels()[i] } else { SENTINEL });
        mask.push(valid);
    }
    Image::from_parts(w, h, pixels, mask)
}
