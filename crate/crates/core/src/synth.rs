//! Procedural test scenes with known motions.
//!
//! A scene is a stack of textured layers. Each layer owns a region of the
//! reference frame and moves by its own homography (candidate → reference).
//! Both inputs are rendered by evaluating the layer textures in reference
//! coordinates, so correspondences and motions are exact by construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::correspond::{Correspondence, CorrespondenceSet, Source};
use crate::error::{Result, StitchError};
use crate::geometry::{Homography, Point};
use crate::image::{Image, Rgb};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SceneKind {
    SinglePlane,
    TwoPlane,
    StripsTranslation,
    DuplicationTrap,
}

impl std::str::FromStr for SceneKind {
    type Err = StitchError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single-plane" => Ok(SceneKind::SinglePlane),
            "two-plane" => Ok(SceneKind::TwoPlane),
            "strips-translation" => Ok(SceneKind::StripsTranslation),
            "duplication-trap" => Ok(SceneKind::DuplicationTrap),
            other => Err(StitchError::config(
                "scene",
                None,
                format!("unknown scene type `{other}` (single-plane, two-plane, strips-translation, duplication-trap)"),
            )),
        }
    }
}

impl std::fmt::Display for SceneKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SceneKind::SinglePlane => "single-plane",
            SceneKind::TwoPlane => "two-plane",
            SceneKind::StripsTranslation => "strips-translation",
            SceneKind::DuplicationTrap => "duplication-trap",
        })
    }
}

#[derive(Clone, Debug)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub width: usize,
    pub height: usize,
    /// Overrides the motion of the single-plane scene.
    pub homography: Option<Homography>,
    /// Grid spacing (px, candidate frame) of sampled correspondences.
    pub corr_step: f64,
}

impl SceneSpec {
    pub fn new(kind: SceneKind) -> Self {
        SceneSpec {
            kind,
            width: 640,
            height: 480,
            homography: None,
            corr_step: 16.0,
        }
    }

    pub fn with_size(mut self, width: usize, height: usize) -> Self {
        self.width = width;
        self.height = height;
        self
    }

    pub fn with_homography(mut self, h: Homography) -> Self {
        self.homography = Some(h);
        self
    }

    pub fn with_corr_step(mut self, step: f64) -> Self {
        self.corr_step = step;
        self
    }
}

/// Region of the reference frame owned by a layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Region {
    Everywhere,
    /// Half-open row band `y0 <= y < y1`.
    Rows(f64, f64),
    /// Axis-aligned box `x0 <= x < x1, y0 <= y < y1`.
    Rect(f64, f64, f64, f64),
}

impl Region {
    pub fn contains(&self, p: Point) -> bool {
        match *self {
            Region::Everywhere => true,
            Region::Rows(y0, y1) => p.y >= y0 && p.y < y1,
            Region::Rect(x0, y0, x1, y1) => p.x >= x0 && p.x < x1 && p.y >= y0 && p.y < y1,
        }
    }
}

/// Infinite procedural texture: smooth value noise overlaid with
/// anti-aliased colored rectangles ("glyphs").
#[derive(Clone, Debug)]
pub struct Texture {
    seed: u64,
    cell: f64,
    density: f64,
    palette_bias: Rgb,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn hash3(seed: u64, a: i64, b: i64, salt: u64) -> u64 {
    splitmix(
        seed ^ splitmix(
            (a as u64).wrapping_mul(0x1000_0000_01B3) ^ splitmix((b as u64) ^ salt.rotate_left(17)),
        ),
    )
}

fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

impl Texture {
    pub fn new(seed: u64) -> Self {
        Texture {
            seed,
            cell: 22.0,
            density: 0.7,
            palette_bias: [0.0; 3],
        }
    }

    /// Dense, saturated, high-contrast variant used for small foreground objects.
    pub fn glyph(seed: u64) -> Self {
        Texture {
            seed,
            cell: 9.0,
            density: 0.95,
            palette_bias: [60.0, 40.0, -40.0],
        }
    }

    fn value_noise(&self, x: f64, y: f64, scale: f64, salt: u64) -> Rgb {
        let (gx, gy) = (x / scale, y / scale);
        let (ix, iy) = (gx.floor(), gy.floor());
        let (fx, fy) = (gx - ix, gy - iy);
        let s = |t: f64| t * t * (3.0 - 2.0 * t);
        let (sx, sy) = (s(fx), s(fy));
        let (ix, iy) = (ix as i64, iy as i64);
        let mut out = [0.0f32; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let v = |a: i64, b: i64| unit(hash3(self.seed, a, b, salt * 7 + c as u64));
            let top = v(ix, iy) * (1.0 - sx) + v(ix + 1, iy) * sx;
            let bot = v(ix, iy + 1) * (1.0 - sx) + v(ix + 1, iy + 1) * sx;
            *o = (top * (1.0 - sy) + bot * sy) as f32;
        }
        out
    }

    pub fn color(&self, x: f64, y: f64) -> Rgb {
        let coarse = self.value_noise(x, y, 41.0, 1);
        let fine = self.value_noise(x, y, 13.0, 2);
        let mut c = [0.0f64; 3];
        for k in 0..3 {
            c[k] = 40.0
                + 120.0 * coarse[k] as f64
                + 50.0 * fine[k] as f64
                + self.palette_bias[k] as f64;
        }
        // Rectangles from this cell and its neighbors may overlap (x, y).
        let (cx, cy) = (
            (x / self.cell).floor() as i64,
            (y / self.cell).floor() as i64,
        );
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (gx, gy) = (cx + dx, cy + dy);
                let h = hash3(self.seed, gx, gy, 99);
                if unit(h) > self.density {
                    continue;
                }
                let r = |salt: u64| unit(hash3(self.seed, gx, gy, 100 + salt));
                let w = self.cell * (0.25 + 0.6 * r(1));
                let hgt = self.cell * (0.25 + 0.6 * r(2));
                let x0 = gx as f64 * self.cell + r(3) * self.cell * 0.8;
                let y0 = gy as f64 * self.cell + r(4) * self.cell * 0.8;
                let cov = |v: f64, lo: f64, hi: f64| ((v - lo).min(hi - v) + 0.5).clamp(0.0, 1.0);
                let alpha = cov(x, x0, x0 + w) * cov(y, y0, y0 + hgt);
                if alpha <= 0.0 {
                    continue;
                }
                let dark = r(5) < 0.5;
                let col = [r(6), r(7), r(8)].map(|v| {
                    if dark {
                        10.0 + 50.0 * v
                    } else {
                        170.0 + 85.0 * v
                    }
                });
                for k in 0..3 {
                    c[k] = c[k] * (1.0 - alpha) + col[k] * alpha;
                }
            }
        }
        c.map(|v| v.clamp(0.0, 255.0) as f32)
    }
}

#[derive(Clone, Debug)]
pub struct Layer {
    /// Candidate → reference motion of this layer.
    pub homography: Homography,
    /// Part of the reference frame where this layer is the front-most surface.
    pub region: Region,
    pub texture: Texture,
    pub corr_step: f64,
}

#[derive(Clone, Debug)]
pub struct LayerTruth {
    pub homography: Homography,
    pub region: Region,
    /// Indices into [`SyntheticScene::correspondences`].
    pub correspondences: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub kind: SceneKind,
    pub reference: Image,
    pub candidate: Image,
    pub correspondences: CorrespondenceSet,
    pub layers: Vec<LayerTruth>,
}

impl SyntheticScene {
    /// Correspondences of one layer.
    pub fn layer_correspondences(&self, layer: usize) -> Vec<Correspondence> {
        self.layers[layer]
            .correspondences
            .iter()
            .map(|&i| *self.correspondences.get(i))
            .collect()
    }

    /// Text listing of the true motions, one row-major matrix per layer.
    pub fn truth_text(&self) -> String {
        let mut s = format!("# scene {}\n", self.kind);
        for (i, l) in self.layers.iter().enumerate() {
            let r = l.homography.to_rows();
            s.push_str(&format!(
                "layer {i} correspondences {} homography {} {} {} {} {} {} {} {} {}\n",
                l.correspondences.len(),
                r[0][0],
                r[0][1],
                r[0][2],
                r[1][0],
                r[1][1],
                r[1][2],
                r[2][0],
                r[2][1],
                r[2][2]
            ));
        }
        s
    }
}

fn layers_for(spec: &SceneSpec, seed: u64) -> Result<Vec<Layer>> {
    let (w, h) = (spec.width as f64, spec.height as f64);
    let tex = |salt: u64| Texture::new(splitmix(seed ^ salt));
    let step = spec.corr_step;
    let layers = match spec.kind {
        SceneKind::SinglePlane => {
            let hom = match spec.homography {
                Some(hm) => hm,
                None => Homography::from_rows([
                    [1.0, 0.015, 0.42 * w],
                    [-0.01, 1.0, 0.02 * h],
                    [2e-5, 0.0, 1.0],
                ])?,
            };
            vec![Layer {
                homography: hom,
                region: Region::Everywhere,
                texture: tex(1),
                corr_step: step,
            }]
        }
        SceneKind::TwoPlane => vec![
            Layer {
                homography: Homography::from_rows([
                    [1.0, 0.0, 0.4 * w],
                    [0.0, 1.0, 0.0],
                    [0.0, 0.0, 1.0],
                ])?,
                region: Region::Rows(f64::NEG_INFINITY, 0.5 * h),
                texture: tex(1),
                corr_step: step,
            },
            Layer {
                homography: Homography::from_rows([
                    [1.03, 0.0, 0.4 * w + 34.0],
                    [0.012, 1.0, 6.0],
                    [3e-5, 0.0, 1.0],
                ])?,
                region: Region::Everywhere,
                texture: tex(2),
                corr_step: step,
            },
        ],
        SceneKind::StripsTranslation => vec![
            Layer {
                homography: Homography::translation(0.4 * w, 0.0),
                region: Region::Rows(f64::NEG_INFINITY, 0.5 * h),
                texture: tex(1),
                corr_step: step,
            },
            Layer {
                homography: Homography::translation(0.4 * w + 40.0, 0.0),
                region: Region::Everywhere,
                texture: tex(2),
                corr_step: step,
            },
        ],
        SceneKind::DuplicationTrap => {
            // The glyph sits in the strip only the reference sees. In the
            // candidate it was carried far to the right, so the background
            // registration shows a second copy inside the overlap.
            let t = (0.4 * w).round();
            let shift = (0.47 * w).round();
            let gw = (0.0625 * w).round().max(8.0);
            let (gx0, gy0) = ((0.15 * w).round(), (0.5 * h - gw / 2.0).round());
            vec![
                Layer {
                    homography: Homography::translation(t - shift, 0.0),
                    region: Region::Rect(gx0, gy0, gx0 + gw, gy0 + gw),
                    texture: Texture::glyph(splitmix(seed ^ 3)),
                    corr_step: (step / 3.0).max(4.0),
                },
                Layer {
                    homography: Homography::translation(t, 0.0),
                    region: Region::Everywhere,
                    texture: tex(1),
                    corr_step: step,
                },
            ]
        }
    };
    Ok(layers)
}

fn owner_reference(layers: &[Layer], p: Point) -> usize {
    layers
        .iter()
        .position(|l| l.region.contains(p))
        .unwrap_or(layers.len() - 1)
}

fn owner_candidate(layers: &[Layer], c: Point) -> (usize, Point) {
    for (i, l) in layers.iter().enumerate() {
        if let Some(p) = l.homography.apply(c) {
            if l.region.contains(p) {
                return (i, p);
            }
        }
    }
    let last = layers.len() - 1;
    let p = layers[last].homography.apply(c).unwrap_or(c);
    (last, p)
}

/// Renders a scene of the requested kind. Deterministic in `seed`.
pub fn make_synthetic_scene(spec: &SceneSpec, seed: u64) -> Result<SyntheticScene> {
    if spec.width < 32 || spec.height < 32 {
        return Err(StitchError::config(
            "scene",
            None,
            "scene must be at least 32x32",
        ));
    }
    let layers = layers_for(spec, seed)?;
    let (w, h) = (spec.width, spec.height);

    let reference = Image::from_fn(w, h, |x, y| {
        let p = Point::new(x as f64, y as f64);
        layers[owner_reference(&layers, p)].texture.color(p.x, p.y)
    });
    let candidate = Image::from_fn(w, h, |x, y| {
        let (l, p) = owner_candidate(&layers, Point::new(x as f64, y as f64));
        layers[l].texture.color(p.x, p.y)
    });

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FF_EE00);
    let mut items = Vec::new();
    let mut per_layer = vec![Vec::new(); layers.len()];
    for (li, layer) in layers.iter().enumerate() {
        let step = layer.corr_step;
        let jitter = step / 3.0;
        let mut gy = step / 2.0;
        while gy < h as f64 {
            let mut gx = step / 2.0;
            while gx < w as f64 {
                let c = Point::new(
                    (gx + rng.gen_range(-jitter..=jitter)).clamp(0.0, w as f64 - 1.0),
                    (gy + rng.gen_range(-jitter..=jitter)).clamp(0.0, h as f64 - 1.0),
                );
                gx += step;
                let (owner, p) = owner_candidate(&layers, c);
                if owner != li {
                    continue;
                }
                if p.x < 0.0 || p.y < 0.0 || p.x > (w - 1) as f64 || p.y > (h - 1) as f64 {
                    continue;
                }
                if owner_reference(&layers, p) != li {
                    continue;
                }
                per_layer[li].push(items.len());
                items.push(Correspondence::new(p, c));
            }
            gy += step;
        }
    }
    let correspondences = CorrespondenceSet::new(items, Source::Synthetic);
    debug_assert_eq!(correspondences.duplicates_dropped(), 0);
    let truths = layers
        .iter()
        .zip(per_layer)
        .map(|(l, idx)| LayerTruth {
            homography: l.homography,
            region: l.region,
            correspondences: idx,
        })
        .collect();
    Ok(SyntheticScene {
        kind: spec.kind,
        reference,
        candidate,
        correspondences,
        layers: truths,
    })
}

/// A textured image with no motion, for matcher and metric tests.
pub fn textured_image(width: usize, height: usize, seed: u64) -> Image {
    let t = Texture::new(splitmix(seed));
    Image::from_fn(width, height, |x, y| t.color(x as f64, y as f64))
}
