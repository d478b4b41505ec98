//! Run configuration: a flat `key = value` file with `#` comments.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::correspond::MatcherParams;
use crate::error::{Result, StitchError};
use crate::eval::CropSide;
use crate::registration::{Length, RegistrationParams};
use crate::seam::{EnergyParams, Truncation};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub crop_px: usize,
    pub side: CropSide,
    /// Dataset name written into the report.
    pub dataset: String,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            crop_px: 50,
            side: CropSide::Right,
            dataset: "dataset".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub reference: Option<PathBuf>,
    pub candidate: Option<PathBuf>,
    /// Correspondence file; the built-in matcher runs when absent.
    pub correspondences: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub registration: RegistrationParams,
    pub energy: EnergyParams,
    pub matcher: MatcherParams,
    pub blend: bool,
    /// Crop-based evaluation, run after the main stitch when set.
    pub eval: Option<EvalSettings>,
    pub rng_seed: u64,
    /// Overrides for the artifact paths; default to the output directory.
    pub dump_labels: Option<PathBuf>,
    pub energy_log: Option<PathBuf>,
    pub dump_candidates: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            reference: None,
            candidate: None,
            correspondences: None,
            out_dir: PathBuf::from("out"),
            registration: RegistrationParams::default(),
            energy: EnergyParams::default(),
            matcher: MatcherParams::default(),
            blend: true,
            eval: None,
            rng_seed: 0,
            dump_labels: None,
            energy_log: None,
            dump_candidates: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, line: usize, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| StitchError::config(key, Some(line), format!("cannot parse `{value}`")))
}

fn parse_bool(key: &str, line: usize, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(StitchError::config(
            key,
            Some(line),
            format!("expected true or false, got `{value}`"),
        )),
    }
}

/// `12`, `12px` or `15%` (of the image diagonal).
fn parse_length(key: &str, line: usize, value: &str) -> Result<Length> {
    if let Some(pct) = value.strip_suffix('%') {
        let v: f64 = parse(key, line, pct.trim())?;
        Ok(Length::DiagonalFraction(v / 100.0))
    } else {
        let v: f64 = parse(key, line, value.strip_suffix("px").unwrap_or(value).trim())?;
        Ok(Length::Pixels(v))
    }
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let r = &mut self.registration;
        let e = &mut self.energy;
        let m = &mut self.matcher;
        match key {
            "reference" => self.reference = Some(PathBuf::from(value)),
            "candidate" => self.candidate = Some(PathBuf::from(value)),
            "correspondences" => self.correspondences = Some(PathBuf::from(value)),
            "out" => self.out_dir = PathBuf::from(value),
            "seed" => self.rng_seed = parse(key, line, value)?,
            "blend" => self.blend = parse_bool(key, line, value)?,
            "eval_crop" => {
                self.eval.get_or_insert_with(Default::default).crop_px = parse(key, line, value)?
            }
            "eval_side" => {
                self.eval.get_or_insert_with(Default::default).side = value
                    .parse()
                    .map_err(|reason: String| StitchError::config(key, Some(line), reason))?
            }
            "eval_dataset" => {
                self.eval.get_or_insert_with(Default::default).dataset = value.to_string()
            }

            "ransac_iterations" => r.iterations = parse(key, line, value)?,
            "seed_radius" => r.seed_radius = parse_length(key, line, value)?,
            "inlier_threshold" => r.inlier_threshold = parse(key, line, value)?,
            "growth_radius" => r.growth_radius = parse_length(key, line, value)?,
            "dedup_threshold" => r.dedup_threshold = parse(key, line, value)?,
            "max_homographies" => r.max_homographies = parse(key, line, value)?,
            "similarity_deviation_max" => r.similarity_deviation_max = parse(key, line, value)?,
            "scale_min" => r.scale_range.0 = parse(key, line, value)?,
            "scale_max" => r.scale_range.1 = parse(key, line, value)?,
            "overlap_identity_max" => r.overlap_identity_max = parse(key, line, value)?,
            "diagonal_min_fraction" => r.diagonal_min_fraction = parse(key, line, value)?,
            "min_seed_matches" => r.min_seed_matches = parse(key, line, value)?,
            "cpw_grid" => r.cpw_grid = parse(key, line, value)?,
            "cpw_data_weight" => r.cpw_data_weight = parse(key, line, value)?,
            "cpw_similarity_weight" => r.cpw_similarity_weight = parse(key, line, value)?,
            "cpw_anchor_weight" => r.cpw_anchor_weight = parse(key, line, value)?,

            "lambda_m" => e.lambda_mask = parse(key, line, value)?,
            "lambda_w" => e.lambda_warp = parse(key, line, value)?,
            "lambda_c" => e.lambda_color = parse(key, line, value)?,
            "lambda_s" => e.lambda_seam = parse(key, line, value)?,
            "lambda_e" => e.lambda_edge = parse(key, line, value)?,
            "lambda_potts" => e.lambda_potts = parse(key, line, value)?,
            "lambda_d" => e.lambda_dup = parse(key, line, value)?,
            "r_patch" => e.patch_radius = parse(key, line, value)?,
            "r_dup" => e.dup_radius = parse(key, line, value)?,
            "sigma_m" => e.sigma_motion = parse(key, line, value)?,
            "sigma_d" => e.sigma_dup = parse(key, line, value)?,
            "truncation" => {
                e.truncation = value.parse::<Truncation>().map_err(|_| {
                    StitchError::config(key, Some(line), format!("unknown policy `{value}`"))
                })?
            }

            "matcher_max_corners" => m.max_corners = parse(key, line, value)?,
            "matcher_min_ncc" => m.min_ncc = parse(key, line, value)?,
            "matcher_patch_size" => m.patch_size = parse(key, line, value)?,
            "matcher_min_matches" => m.min_matches = parse(key, line, value)?,
            _ => return Err(StitchError::config(key, Some(line), "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.registration.validate()?;
        self.energy.validate()?;
        if self.matcher.patch_size.is_multiple_of(2) || self.matcher.patch_size < 3 {
            return Err(StitchError::config(
                "matcher_patch_size",
                None,
                "must be odd and at least 3",
            ));
        }
        if !(self.matcher.min_ncc > -1.0 && self.matcher.min_ncc <= 1.0) {
            return Err(StitchError::config(
                "matcher_min_ncc",
                None,
                "must be in (-1, 1]",
            ));
        }
        if let Some(ev) = &self.eval {
            if ev.crop_px == 0 {
                return Err(StitchError::config("eval_crop", None, "must be positive"));
            }
        }
        Ok(())
    }
}

/// Parses configuration text on top of the defaults. Errors name the key
/// and the line it came from.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut lines: HashMap<String, usize> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(StitchError::config(
                content,
                Some(n),
                "expected `key = value`",
            ));
        };
        let (key, value) = (key.trim(), value.trim());
        cfg.set(key, value, n)?;
        lines.insert(key.to_string(), n);
    }
    cfg.validate().map_err(|e| match e {
        StitchError::Config {
            key,
            line: None,
            reason,
        } => {
            let line = lines.get(&key).copied();
            StitchError::Config { key, line, reason }
        }
        other => other,
    })?;
    Ok(cfg)
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| StitchError::io(path, e))?;
    parse_config_str(&text)
}

/// The shipped configuration: every default spelled out.
pub fn default_config_text() -> String {
    let r = RegistrationParams::default();
    let e = EnergyParams::default();
    let m = MatcherParams::default();
    format!(
        "# registration\n\
         ransac_iterations = {}\nseed_radius = {}\ninlier_threshold = {}\ngrowth_radius = {}\n\
         dedup_threshold = {}\nmax_homographies = {}\nsimilarity_deviation_max = {}\n\
         scale_min = {}\nscale_max = {}\noverlap_identity_max = {}\ndiagonal_min_fraction = {}\n\
         min_seed_matches = {}\ncpw_grid = {}\ncpw_data_weight = {}\ncpw_similarity_weight = {}\n\
         cpw_anchor_weight = {}\n\
         \n# seam energy\n\
         lambda_m = {}\nlambda_w = {}\nlambda_c = {}\nlambda_s = {}\nlambda_e = {}\n\
         lambda_potts = {}\nlambda_d = {}\nr_patch = {}\nr_dup = {}\nsigma_m = {}\nsigma_d = {}\n\
         truncation = {}\n\
         \n# fallback matcher\n\
         matcher_max_corners = {}\nmatcher_min_ncc = {}\nmatcher_patch_size = {}\nmatcher_min_matches = {}\n\
         \n# run\nseed = 0\nblend = true\n",
        r.iterations,
        r.seed_radius,
        r.inlier_threshold,
        r.growth_radius,
        r.dedup_threshold,
        r.max_homographies,
        r.similarity_deviation_max,
        r.scale_range.0,
        r.scale_range.1,
        r.overlap_identity_max,
        r.diagonal_min_fraction,
        r.min_seed_matches,
        r.cpw_grid,
        r.cpw_data_weight,
        r.cpw_similarity_weight,
        r.cpw_anchor_weight,
        e.lambda_mask,
        e.lambda_warp,
        e.lambda_color,
        e.lambda_seam,
        e.lambda_edge,
        e.lambda_potts,
        e.lambda_dup,
        e.patch_radius,
        e.dup_radius,
        e.sigma_motion,
        e.sigma_dup,
        e.truncation,
        m.max_corners,
        m.min_ncc,
        m.patch_size,
        m.min_matches,
    )
}
