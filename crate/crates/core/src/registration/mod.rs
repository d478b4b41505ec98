//! Multiple candidate registrations of the candidate image onto the
//! reference: locally seeded homography search, screening, inlier-set
//! deduplication, refinement and mesh warping.

mod filter;
mod lmeds;
mod mesh;
mod refine;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use filter::{
    deduplicate, fit_similarity, inlier_set, screen, similarity, similarity_deviation, RejectReason,
};
pub use lmeds::{estimate_homography_lmeds, fit_dlt, LMEDS_SAMPLES};
pub use mesh::{cpw_refine, warp_image, CpwOutcome, WarpMesh};
pub use refine::{refine_homography, smooth_inlier_objective, smooth_inlier_score};

use crate::correspond::{Correspondence, CorrespondenceSet};
use crate::error::{Result, StitchError};
use crate::geometry::{raster_corners, Homography, Point};
use crate::image::Image;

/// A distance given either in pixels or as a fraction of the image diagonal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Length {
    Pixels(f64),
    DiagonalFraction(f64),
}

impl Length {
    pub fn resolve(self, diagonal: f64) -> f64 {
        match self {
            Length::Pixels(v) => v,
            Length::DiagonalFraction(f) => f * diagonal,
        }
    }

    fn value(self) -> f64 {
        match self {
            Length::Pixels(v) | Length::DiagonalFraction(v) => v,
        }
    }
}

impl std::fmt::Display for Length {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Length::Pixels(v) => write!(f, "{v}"),
            // Rounded so that 0.15 prints as 15%, not 15.000000000000002%.
            Length::DiagonalFraction(v) => write!(f, "{}%", (v * 100.0 * 1e9).round() / 1e9),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegistrationParams {
    /// Seeded LMedS iterations.
    pub iterations: usize,
    /// Radius of the correspondence gather around each seed.
    pub seed_radius: Length,
    /// Inlier reprojection threshold, px.
    pub inlier_threshold: f64,
    /// Proximity radius for growing inlier sets.
    pub growth_radius: Length,
    /// Cosine similarity at or above which two inlier sets are duplicates.
    pub dedup_threshold: f64,
    pub max_homographies: usize,
    pub similarity_deviation_max: f64,
    pub scale_range: (f64, f64),
    pub overlap_identity_max: f64,
    pub diagonal_min_fraction: f64,
    pub min_seed_matches: usize,
    pub cpw_grid: usize,
    pub cpw_data_weight: f64,
    pub cpw_similarity_weight: f64,
    /// Weak pull of every mesh vertex towards its homography position.
    pub cpw_anchor_weight: f64,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        RegistrationParams {
            iterations: 500,
            seed_radius: Length::DiagonalFraction(0.15),
            inlier_threshold: 3.0,
            growth_radius: Length::DiagonalFraction(0.05),
            dedup_threshold: 0.5,
            max_homographies: 6,
            similarity_deviation_max: 10.0,
            scale_range: (0.5, 2.0),
            overlap_identity_max: 0.95,
            diagonal_min_fraction: 0.5,
            min_seed_matches: 6,
            cpw_grid: 16,
            cpw_data_weight: 1.0,
            cpw_similarity_weight: 0.05,
            cpw_anchor_weight: 1e-3,
        }
    }
}

impl RegistrationParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| Err(StitchError::config(key, None, reason));
        if self.iterations == 0 {
            return bad("ransac_iterations", "must be positive");
        }
        if !(self.seed_radius.value() > 0.0) {
            return bad("seed_radius", "must be positive");
        }
        if !(self.growth_radius.value() > 0.0) {
            return bad("growth_radius", "must be positive");
        }
        if !(self.inlier_threshold > 0.0) {
            return bad("inlier_threshold", "must be positive");
        }
        if !(self.dedup_threshold > 0.0 && self.dedup_threshold <= 1.0) {
            return bad("dedup_threshold", "must be in (0, 1]");
        }
        if self.max_homographies == 0 {
            return bad("max_homographies", "must be positive");
        }
        if !(self.similarity_deviation_max > 0.0) {
            return bad("similarity_deviation_max", "must be positive");
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && hi >= lo) {
            return bad("scale_min", "scale range must satisfy 0 < min <= max");
        }
        if !(self.overlap_identity_max > 0.0 && self.overlap_identity_max < 1.0) {
            return bad("overlap_identity_max", "must be in (0, 1)");
        }
        if !(self.diagonal_min_fraction > 0.0) {
            return bad("diagonal_min_fraction", "must be positive");
        }
        if self.min_seed_matches < 4 {
            return bad("min_seed_matches", "must be at least 4");
        }
        if self.cpw_grid == 0 {
            return bad("cpw_grid", "must be positive");
        }
        if !(self.cpw_data_weight > 0.0 && self.cpw_similarity_weight > 0.0) {
            return bad("cpw_data_weight", "mesh weights must be positive");
        }
        if !(self.cpw_anchor_weight >= 0.0) {
            return bad("cpw_anchor_weight", "must be non-negative");
        }
        Ok(())
    }
}

/// The stitching canvas: the union bounding box of the reference and every
/// warped candidate, with the reference's pixel (0, 0) at `offset`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Canvas {
    pub width: usize,
    pub height: usize,
    pub offset: (usize, usize),
}

/// Canvas extents are clamped to this many reference sizes around the
/// reference, so a wild homography cannot request a gigantic raster.
const CANVAS_MARGIN: f64 = 2.0;

impl Canvas {
    pub fn to_canvas(&self, p: Point) -> Point {
        Point::new(p.x + self.offset.0 as f64, p.y + self.offset.1 as f64)
    }

    pub fn to_reference(&self, c: Point) -> Point {
        Point::new(c.x - self.offset.0 as f64, c.y - self.offset.1 as f64)
    }

    /// Bounding box of the reference raster and every `h(candidate)`.
    pub fn enclosing(
        reference_dims: (usize, usize),
        candidate_dims: (usize, usize),
        homographies: &[Homography],
    ) -> Canvas {
        let (w0, h0) = (reference_dims.0 as f64, reference_dims.1 as f64);
        let mut pts: Vec<Point> = raster_corners(reference_dims.0, reference_dims.1).to_vec();
        for h in homographies {
            pts.extend(
                raster_corners(candidate_dims.0, candidate_dims.1)
                    .iter()
                    .filter_map(|&c| h.apply(c)),
            );
        }
        let fold = |f: fn(&Point) -> f64| {
            pts.iter()
                .map(f)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                })
        };
        let (x_lo, x_hi) = fold(|p| p.x);
        let (y_lo, y_hi) = fold(|p| p.y);
        let x_lo = x_lo.max(-CANVAS_MARGIN * w0).floor();
        let y_lo = y_lo.max(-CANVAS_MARGIN * h0).floor();
        let x_hi = x_hi.min((1.0 + CANVAS_MARGIN) * w0).ceil();
        let y_hi = y_hi.min((1.0 + CANVAS_MARGIN) * h0).ceil();
        Canvas {
            width: (x_hi - x_lo) as usize + 1,
            height: (y_hi - y_lo) as usize + 1,
            offset: ((-x_lo) as usize, (-y_lo) as usize),
        }
    }

    /// Places the reference image on the canvas.
    pub fn place_reference(&self, reference: &Image) -> Image {
        let (ox, oy) = (self.offset.0 as i64, self.offset.1 as i64);
        reference.crop(-ox, -oy, self.width, self.height)
    }
}

/// One seeded LMedS hypothesis.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedCandidate {
    pub iteration: usize,
    pub homography: Homography,
    pub seed_point: Point,
    /// Indices of the correspondences gathered around the seed.
    pub seed_indices: Vec<usize>,
}

/// Reference-image diagonal used to resolve relative radii.
pub fn image_diagonal((w, h): (usize, usize)) -> f64 {
    ((w * w + h * h) as f64).sqrt()
}

/// Locally seeded homography hypotheses.
///
/// Each iteration draws its own random stream from `rng_seed`, picks a
/// random correspondence's reference point as seed, gathers every
/// correspondence whose reference point is within `seed_radius` of it and,
/// when enough are gathered, fits a homography to them by LMedS. Iterations
/// run in parallel; the output is in iteration order and depends only on the
/// inputs.
pub fn generate_candidates(
    set: &CorrespondenceSet,
    params: &RegistrationParams,
    diagonal: f64,
    rng_seed: u64,
) -> Vec<GeneratedCandidate> {
    let n = set.len();
    if n < 4 {
        return Vec::new();
    }
    let r = params.seed_radius.resolve(diagonal);
    let r2 = r * r;
    (0..params.iterations)
        .into_par_iter()
        .filter_map(|iteration| {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            rng.set_stream(iteration as u64);
            let seed_point = set.get(rng.gen_range(0..n)).p0;
            let seed_indices: Vec<usize> = (0..n)
                .filter(|&i| set.get(i).p0.dist2(seed_point) <= r2)
                .collect();
            if seed_indices.len() < params.min_seed_matches {
                return None;
            }
            let pairs: Vec<Correspondence> = seed_indices.iter().map(|&i| *set.get(i)).collect();
            let homography = estimate_homography_lmeds(&pairs, &mut rng).ok()?;
            Some(GeneratedCandidate {
                iteration,
                homography,
                seed_point,
                seed_indices,
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct CandidateRegistration {
    /// Refined homography, candidate → reference.
    pub homography: Homography,
    /// The LMedS homography before refinement.
    pub initial_homography: Homography,
    /// Inliers of the refined homography, sorted indices into the set.
    pub inlier_indices: Vec<usize>,
    pub seed_point: Point,
    pub generation_index: usize,
    pub mesh: WarpMesh,
    /// Refined mesh was degenerate and the homography mesh is used instead.
    pub mesh_fell_back: bool,
    /// The candidate resampled onto the canvas.
    pub warped: Image,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RegistrationStats {
    pub iterations: usize,
    /// Iterations whose gather was too small (or whose LMedS fit failed).
    pub skipped: usize,
    pub generated: usize,
    /// Screened-out counts by reason, in rule order.
    pub rejected: Vec<(RejectReason, usize)>,
    pub duplicates: usize,
    pub kept: usize,
}

impl RegistrationStats {
    /// Every generated hypothesis is either rejected, a duplicate or kept.
    pub fn reconciles(&self) -> bool {
        self.generated == self.rejected_total() + self.duplicates + self.kept
            && self.iterations == self.generated + self.skipped
    }

    pub fn rejected_total(&self) -> usize {
        self.rejected.iter().map(|(_, n)| n).sum()
    }

    pub fn summary(&self) -> String {
        let reasons: Vec<String> = self
            .rejected
            .iter()
            .map(|(r, n)| format!("{r}={n}"))
            .collect();
        format!(
            "iterations={} skipped={} generated={} rejected[{}] duplicates={} kept={}",
            self.iterations,
            self.skipped,
            self.generated,
            reasons.join(" "),
            self.duplicates,
            self.kept
        )
    }
}

#[derive(Clone, Debug)]
pub struct Registrations {
    pub canvas: Canvas,
    pub candidates: Vec<CandidateRegistration>,
    pub stats: RegistrationStats,
}

const REJECT_ORDER: [RejectReason; 6] = [
    RejectReason::SimilarityDeviation,
    RejectReason::Scale,
    RejectReason::NearIdentity,
    RejectReason::ShortDiagonal,
    RejectReason::EmptyInliers,
    RejectReason::MeshFailure,
];

/// Full registration stage: hypotheses → screening → inlier sets →
/// deduplication → refinement → inlier sets again → mesh refinement →
/// warping onto the shared canvas.
pub fn build_registrations(
    reference: &Image,
    candidate: &Image,
    set: &CorrespondenceSet,
    params: &RegistrationParams,
    rng_seed: u64,
) -> Result<Registrations> {
    params.validate()?;
    let mut stats = RegistrationStats {
        iterations: params.iterations,
        rejected: REJECT_ORDER.iter().map(|&r| (r, 0)).collect(),
        ..Default::default()
    };
    if set.len() < 4 {
        return Err(StitchError::NoRegistration(format!(
            "{} correspondences, need at least 4",
            set.len()
        )));
    }
    let diagonal = image_diagonal(reference.dims());
    let growth = params.growth_radius.resolve(diagonal);
    let t = params.inlier_threshold;

    let generated = generate_candidates(set, params, diagonal, rng_seed);
    stats.generated = generated.len();
    stats.skipped = params.iterations - generated.len();

    let screened: Vec<std::result::Result<Vec<usize>, RejectReason>> = generated
        .par_iter()
        .map(|g| {
            let seeds: Vec<Correspondence> = g.seed_indices.iter().map(|&i| *set.get(i)).collect();
            screen(
                &g.homography,
                &seeds,
                candidate.dims(),
                reference.dims(),
                params,
            )?;
            let d = inlier_set(&g.homography, set, &g.seed_indices, t, growth);
            if d.is_empty() {
                Err(RejectReason::EmptyInliers)
            } else {
                Ok(d)
            }
        })
        .collect();
    let mut survivors: Vec<(&GeneratedCandidate, Vec<usize>)> = Vec::new();
    for (g, s) in generated.iter().zip(screened) {
        match s {
            Ok(d) => survivors.push((g, d)),
            Err(reason) => {
                if let Some(slot) = stats.rejected.iter_mut().find(|(r, _)| *r == reason) {
                    slot.1 += 1;
                }
            }
        }
    }
    let sets: Vec<&[usize]> = survivors.iter().map(|(_, d)| d.as_slice()).collect();
    let kept = deduplicate(&sets, params.dedup_threshold, params.max_homographies);
    stats.duplicates = survivors.len() - kept.len();
    if kept.is_empty() {
        return Err(StitchError::NoRegistration(stats.summary()));
    }

    let refined: Vec<(Homography, Vec<usize>)> = kept
        .par_iter()
        .map(|&k| {
            let (g, d) = &survivors[k];
            let h = refine_homography(&g.homography, set.as_slice(), t);
            debug_assert!(
                smooth_inlier_objective(&h, set.as_slice(), t)
                    >= smooth_inlier_objective(&g.homography, set.as_slice(), t)
            );
            let d2 = inlier_set(&h, set, d, t, growth);
            (h, if d2.is_empty() { d.clone() } else { d2 })
        })
        .collect();

    let hs: Vec<Homography> = refined.iter().map(|(h, _)| *h).collect();
    let canvas = Canvas::enclosing(reference.dims(), candidate.dims(), &hs);
    let dims = (canvas.width, canvas.height);

    let built: Vec<Option<CandidateRegistration>> = kept
        .par_iter()
        .zip(refined)
        .map(|(&k, (h, d))| {
            let g = survivors[k].0;
            let inliers: Vec<Correspondence> = d.iter().map(|&i| *set.get(i)).collect();
            let cpw = match cpw_refine(&h, &inliers, candidate.dims(), &canvas, params) {
                Ok(c) => c,
                Err(e) => {
                    log::warn!("dropping candidate from iteration {}: {e}", g.iteration);
                    return None;
                }
            };
            let warped = warp_image(candidate, &cpw.mesh, dims);
            Some(CandidateRegistration {
                homography: h,
                initial_homography: g.homography,
                inlier_indices: d,
                seed_point: g.seed_point,
                generation_index: g.iteration,
                mesh: cpw.mesh,
                mesh_fell_back: cpw.fell_back,
                warped,
            })
        })
        .collect();
    let failed = built.iter().filter(|b| b.is_none()).count();
    if let Some(slot) = stats
        .rejected
        .iter_mut()
        .find(|(r, _)| *r == RejectReason::MeshFailure)
    {
        slot.1 += failed;
    }
    let candidates: Vec<CandidateRegistration> = built.into_iter().flatten().collect();
    stats.kept = candidates.len();
    if candidates.is_empty() {
        return Err(StitchError::NoRegistration(stats.summary()));
    }
    log::info!("registration: {}", stats.summary());
    Ok(Registrations {
        canvas,
        candidates,
        stats,
    })
}
