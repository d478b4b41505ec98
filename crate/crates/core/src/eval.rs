//! Image quality metrics and the crop-based ground-truth protocol.
//!
//! Both metrics only look at pixels valid in both images. MS-SSIM runs on
//! luma; PSNR on RGB.

use std::fmt;
use std::str::FromStr;

use crate::error::{Result, StitchError};
use crate::image::{luma, Image};

const PEAK: f64 = 255.0;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
/// Smallest side MS-SSIM accepts at all.
pub const MS_SSIM_MIN_SIDE: usize = 16;

fn same_dims(a: &Image, b: &Image) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(StitchError::Eval(format!(
            "dimension mismatch: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB over the RGB channels of jointly valid
/// pixels; `f64::INFINITY` for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    same_dims(a, b)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..a.len() {
        if !(a.mask()[i] && b.mask()[i]) {
            continue;
        }
        let (pa, pb) = (a.pixels()[i], b.pixels()[i]);
        for c in 0..3 {
            sum += (pa[c] as f64 - pb[c] as f64).powi(2);
        }
        count += 3;
    }
    if count == 0 {
        return Err(StitchError::Eval("no jointly valid pixels".into()));
    }
    let mse = sum / count as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (PEAK * PEAK / mse).log10())
}

/// Luma plane with a validity mask.
#[derive(Clone)]
struct Masked {
    w: usize,
    h: usize,
    v: Vec<f64>,
    m: Vec<bool>,
}

impl Masked {
    fn downsample(&self) -> Masked {
        let (w, h) = (self.w / 2, self.h / 2);
        let mut v = vec![0.0; w * h];
        let mut m = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let idx = [
                    2 * y * self.w + 2 * x,
                    2 * y * self.w + 2 * x + 1,
                    (2 * y + 1) * self.w + 2 * x,
                    (2 * y + 1) * self.w + 2 * x + 1,
                ];
                v[y * w + x] = idx.iter().map(|&i| self.v[i]).sum::<f64>() / 4.0;
                m[y * w + x] = idx.iter().all(|&i| self.m[i]);
            }
        }
        Masked { w, h, v, m }
    }
}

fn gaussian_window() -> [f64; WINDOW] {
    let c = (WINDOW / 2) as f64;
    let mut k: [f64; WINDOW] = std::array::from_fn(|i| {
        (-(i as f64 - c).powi(2) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp()
    });
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable filtering in "valid" mode: the output has one value per window
/// lying fully inside the plane.
fn filter_valid(data: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * data[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean luminance and contrast-structure terms over the windows whose
/// every pixel is jointly valid; `None` if there is no such window.
fn ssim_terms(a: &Masked, b: &Masked) -> Option<(f64, f64)> {
    if a.w < WINDOW || a.h < WINDOW {
        return None;
    }
    let k = gaussian_window();
    let (w, h) = (a.w, a.h);
    let sq = |v: &[f64]| v.iter().map(|x| x * x).collect::<Vec<_>>();
    let ab: Vec<f64> = a.v.iter().zip(&b.v).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(&a.v, w, h, &k);
    let mu_b = filter_valid(&b.v, w, h, &k);
    let aa = filter_valid(&sq(&a.v), w, h, &k);
    let bb = filter_valid(&sq(&b.v), w, h, &k);
    let abf = filter_valid(&ab, w, h, &k);
    let invalid: Vec<f64> =
        a.m.iter()
            .zip(&b.m)
            .map(|(&x, &y)| if x && y { 0.0 } else { 1.0 })
            .collect();
    let bad = filter_valid(&invalid, w, h, &[1.0; WINDOW]);
    let (c1, c2) = ((K1 * PEAK).powi(2), (K2 * PEAK).powi(2));
    let (mut l_sum, mut cs_sum, mut count) = (0.0, 0.0, 0usize);
    for i in 0..mu_a.len() {
        if bad[i] > 0.5 {
            continue;
        }
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = abf[i] - ma * mb;
        l_sum += (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        cs_sum += (2.0 * cov + c2) / (va + vb + c2);
        count += 1;
    }
    (count > 0).then(|| (l_sum / count as f64, cs_sum / count as f64))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MsSsim {
    pub score: f64,
    /// Scales actually used (at most 5).
    pub scales: usize,
}

/// Number of dyadic scales an image with shorter side `side` supports.
pub fn ms_ssim_scales(side: usize) -> usize {
    (1..=MS_SSIM_WEIGHTS.len())
        .rev()
        .find(|&s| side >= WINDOW << (s - 1))
        .unwrap_or(1)
}

/// Multi-scale SSIM on luma with its scale count. Small images use fewer
/// scales, with the weights renormalized; negative terms clamp to zero.
pub fn ms_ssim_detailed(a: &Image, b: &Image) -> Result<MsSsim> {
    same_dims(a, b)?;
    let (w, h) = a.dims();
    if w.min(h) < MS_SSIM_MIN_SIDE {
        return Err(StitchError::Eval(format!(
            "image {w}x{h} is too small for MS-SSIM (min side {MS_SSIM_MIN_SIDE})"
        )));
    }
    let plane = |img: &Image| Masked {
        w,
        h,
        v: img.pixels().iter().map(|&c| luma(c)).collect(),
        m: img.mask().to_vec(),
    };
    let (mut pa, mut pb) = (plane(a), plane(b));
    let max_scales = ms_ssim_scales(w.min(h));
    let mut terms = Vec::with_capacity(max_scales);
    for s in 0..max_scales {
        if s > 0 {
            pa = pa.downsample();
            pb = pb.downsample();
        }
        match ssim_terms(&pa, &pb) {
            Some(t) => terms.push(t),
            None => break,
        }
    }
    if terms.is_empty() {
        return Err(StitchError::Eval("no fully valid comparison window".into()));
    }
    let scales = terms.len();
    let total: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
    let mut score = 1.0;
    for (j, &(l, cs)) in terms.iter().enumerate() {
        let weight = MS_SSIM_WEIGHTS[j] / total;
        let v = if j + 1 == scales { l * cs } else { cs };
        score *= v.clamp(0.0, 1.0).powf(weight);
    }
    Ok(MsSsim {
        score: score.clamp(0.0, 1.0),
        scales,
    })
}

pub fn ms_ssim(a: &Image, b: &Image) -> Result<f64> {
    ms_ssim_detailed(a, b).map(|m| m.score)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CropSide {
    Left,
    Right,
    Top,
    Bottom,
}

impl FromStr for CropSide {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "left" => Ok(CropSide::Left),
            "right" => Ok(CropSide::Right),
            "top" => Ok(CropSide::Top),
            "bottom" => Ok(CropSide::Bottom),
            other => Err(format!(
                "unknown side `{other}` (expected left, right, top or bottom)"
            )),
        }
    }
}

impl fmt::Display for CropSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CropSide::Left => "left",
            CropSide::Right => "right",
            CropSide::Top => "top",
            CropSide::Bottom => "bottom",
        })
    }
}

/// A reference split into the part handed to the stitcher and the
/// held-out band.
#[derive(Clone, Debug)]
pub struct CropSplit {
    pub kept: Image,
    /// Top-left of `kept` in the original reference.
    pub kept_origin: (usize, usize),
    pub band: Image,
    /// Top-left of `band` in the original reference.
    pub band_origin: (usize, usize),
}

pub fn crop_band(reference: &Image, crop_px: usize, side: CropSide) -> Result<CropSplit> {
    let (w, h) = reference.dims();
    let extent = match side {
        CropSide::Left | CropSide::Right => w,
        CropSide::Top | CropSide::Bottom => h,
    };
    if crop_px == 0 || crop_px >= extent {
        return Err(StitchError::config(
            "eval_crop",
            None,
            format!("crop of {crop_px} px must be in 1..{extent}"),
        ));
    }
    let (kept_origin, kept_dims, band_origin, band_dims) = match side {
        CropSide::Left => ((crop_px, 0), (w - crop_px, h), (0, 0), (crop_px, h)),
        CropSide::Right => ((0, 0), (w - crop_px, h), (w - crop_px, 0), (crop_px, h)),
        CropSide::Top => ((0, crop_px), (w, h - crop_px), (0, 0), (w, crop_px)),
        CropSide::Bottom => ((0, 0), (w, h - crop_px), (0, h - crop_px), (w, crop_px)),
    };
    let cut = |(x, y): (usize, usize), (cw, ch): (usize, usize)| {
        reference.crop(x as i64, y as i64, cw, ch)
    };
    Ok(CropSplit {
        kept: cut(kept_origin, kept_dims),
        kept_origin,
        band: cut(band_origin, band_dims),
        band_origin,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalRegion {
    GroundTruth,
    UncroppedReference,
}

impl fmt::Display for EvalRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalRegion::GroundTruth => "ground-truth-region",
            EvalRegion::UncroppedReference => "uncropped-reference",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    MsSsim,
    Psnr,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::MsSsim => "MS-SSIM",
            Metric::Psnr => "PSNR",
        })
    }
}

pub const FAILED_TO_STITCH: &str = "failed to stitch";

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub dataset: String,
    pub region: EvalRegion,
    pub metric: Metric,
    /// `None` when the score could not be computed; see `status`.
    pub score: Option<f64>,
    pub status: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn row(&self, region: EvalRegion, metric: Metric) -> Option<&EvalRow> {
        self.rows
            .iter()
            .find(|r| r.region == region && r.metric == metric)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("dataset,region,metric,score,status\n");
        for r in &self.rows {
            let score = match r.score {
                Some(v) if v.is_infinite() => "inf".to_string(),
                Some(v) => format!("{v:.6}"),
                None => String::new(),
            };
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                csv_field(&r.dataset),
                r.region,
                r.metric,
                score,
                csv_field(&r.status)
            ));
        }
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// What a stitcher hands back to the evaluation: the panorama and where
/// the (cropped) reference's pixel (0, 0) landed on it.
#[derive(Clone, Debug)]
pub struct StitchedImage {
    pub panorama: Image,
    pub reference_offset: (usize, usize),
}

/// Removes a `crop_px` band from one side of the reference, stitches the
/// rest with the candidate and scores the panorama against the held-out
/// band and against the whole original reference.
pub fn crop_eval(
    dataset: &str,
    reference: &Image,
    candidate: &Image,
    crop_px: usize,
    side: CropSide,
    stitch_fn: impl FnOnce(&Image, &Image) -> Result<StitchedImage>,
) -> Result<EvalReport> {
    let split = crop_band(reference, crop_px, side)?;
    let regions = [EvalRegion::GroundTruth, EvalRegion::UncroppedReference];
    let metrics = [Metric::MsSsim, Metric::Psnr];
    let row = |region, metric, score, status: String| EvalRow {
        dataset: dataset.to_string(),
        region,
        metric,
        score,
        status,
    };
    let stitched = match stitch_fn(&split.kept, candidate) {
        Ok(s) => s,
        Err(e) => {
            log::warn!("{dataset}: {e}");
            let rows = regions
                .iter()
                .flat_map(|&r| metrics.iter().map(move |&m| (r, m)))
                .map(|(r, m)| row(r, m, None, FAILED_TO_STITCH.to_string()))
                .collect();
            return Ok(EvalReport { rows });
        }
    };
    // Original reference pixel (0, 0) on the canvas.
    let origin = (
        stitched.reference_offset.0 as i64 - split.kept_origin.0 as i64,
        stitched.reference_offset.1 as i64 - split.kept_origin.1 as i64,
    );
    let mut rows = Vec::new();
    for region in regions {
        let (truth, (x0, y0)) = match region {
            EvalRegion::GroundTruth => (&split.band, split.band_origin),
            EvalRegion::UncroppedReference => (reference, (0, 0)),
        };
        let patch = stitched.panorama.crop(
            origin.0 + x0 as i64,
            origin.1 + y0 as i64,
            truth.width(),
            truth.height(),
        );
        for metric in metrics {
            let result = match metric {
                Metric::MsSsim => ms_ssim_detailed(&patch, truth).map(|m| {
                    let note = if m.scales < MS_SSIM_WEIGHTS.len() {
                        format!("ok ({} scales)", m.scales)
                    } else {
                        "ok".to_string()
                    };
                    (m.score, note)
                }),
                Metric::Psnr => psnr(&patch, truth).map(|v| (v, "ok".to_string())),
            };
            rows.push(match result {
                Ok((v, note)) => row(region, metric, Some(v), note),
                Err(e) => row(region, metric, None, e.to_string()),
            });
        }
    }
    Ok(EvalReport { rows })
}
