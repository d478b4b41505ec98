//! Raster types shared by every stage: an RGB image with a validity mask and
//! a scalar plane, plus file I/O, luma conversion, gradients and sampling.
//!
//! Pixel values are kept in floating point on the 0..255 scale and are only
//! quantized when written to disk. Invalid pixels always hold the sentinel
//! color black; callers must consult the mask, never the sentinel.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::{ColorType, DynamicImage, ImageReader, RgbImage, RgbaImage};

use crate::error::{Result, StitchError};

pub type Rgb = [f32; 3];

pub const SENTINEL: Rgb = [0.0, 0.0, 0.0];

/// RGB raster with a per-pixel validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
    mask: Vec<bool>,
}

impl Image {
    /// An image with every pixel invalid.
    pub fn empty(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            pixels: vec![SENTINEL; width * height],
            mask: vec![false; width * height],
        }
    }

    /// A fully valid image of a single color.
    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        Image {
            width,
            height,
            pixels: vec![color; width * height],
            mask: vec![true; width * height],
        }
    }

    /// Builds a fully valid image from a per-pixel closure.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Rgb) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Image {
            width,
            height,
            pixels,
            mask: vec![true; width * height],
        }
    }

    /// Interleaved 8-bit RGB bytes, row-major; every pixel valid.
    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Self {
        assert_eq!(
            bytes.len(),
            width * height * 3,
            "byte count does not match dimensions"
        );
        let pixels = bytes
            .chunks_exact(3)
            .map(|c| [c[0] as f32, c[1] as f32, c[2] as f32])
            .collect();
        Image {
            width,
            height,
            pixels,
            mask: vec![true; width * height],
        }
    }

    /// Assembles an image from raw parts; masked-out pixels are reset to the sentinel.
    pub fn from_parts(width: usize, height: usize, mut pixels: Vec<Rgb>, mask: Vec<bool>) -> Self {
        assert_eq!(pixels.len(), width * height);
        assert_eq!(mask.len(), width * height);
        for (p, &m) in pixels.iter_mut().zip(&mask) {
            if !m {
                *p = SENTINEL;
            }
        }
        Image {
            width,
            height,
            pixels,
            mask,
        }
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

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }

    #[inline]
    pub fn in_bounds(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    /// Sets a pixel and marks it valid.
    pub fn set(&mut self, x: usize, y: usize, color: Rgb) {
        let i = self.index(x, y);
        self.pixels[i] = color;
        self.mask[i] = true;
    }

    /// Marks a pixel invalid and resets it to the sentinel.
    pub fn invalidate(&mut self, x: usize, y: usize) {
        let i = self.index(x, y);
        self.pixels[i] = SENTINEL;
        self.mask[i] = false;
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Copies the `w`×`h` window whose top-left corner is `(x0, y0)`.
    /// Parts of the window outside the image come back invalid.
    pub fn crop(&self, x0: i64, y0: i64, w: usize, h: usize) -> Image {
        let mut out = Image::empty(w, h);
        for y in 0..h {
            for x in 0..w {
                let sx = x0 + x as i64;
                let sy = y0 + y as i64;
                if self.in_bounds(sx, sy) && self.is_valid(sx as usize, sy as usize) {
                    out.set(x, y, self.get(sx as usize, sy as usize));
                }
            }
        }
        out
    }

    /// Pixel colors quantized to 8 bits (round half up, clamped to 0..255).
    pub fn to_rgb8(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.pixels.len() * 3);
        for (p, &m) in self.pixels.iter().zip(&self.mask) {
            let c = if m { *p } else { SENTINEL };
            out.extend(c.iter().map(|&v| quantize(v)));
        }
        out
    }
}

/// Round half up to the nearest 8-bit level.
#[inline]
pub fn quantize(v: f32) -> u8 {
    let v = if v.is_finite() { v } else { 0.0 };
    (v as f64 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Scalar raster (luma, gradient magnitude, scores).
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn zeros(width: usize, height: usize) -> Self {
        Plane {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane {
            width,
            height,
            data,
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height);
        Plane {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Reads a PNG (8-bit gray/RGB/RGBA) or binary PPM file. Every pixel of the
/// result is valid.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let decode_err = |reason: String| StitchError::Decode {
        path: path.to_path_buf(),
        reason,
    };
    let reader = ImageReader::open(path)
        .map_err(|e| decode_err(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| decode_err(e.to_string()))?;
    match reader.format() {
        Some(image::ImageFormat::Png) | Some(image::ImageFormat::Pnm) => {}
        other => return Err(decode_err(format!("unsupported format {other:?}"))),
    }
    let decoded = reader.decode().map_err(|e| decode_err(e.to_string()))?;
    let rgb = match decoded.color() {
        ColorType::L8 | ColorType::La8 | ColorType::Rgb8 | ColorType::Rgba8 => decoded.to_rgb8(),
        other => return Err(decode_err(format!("unsupported pixel type {other:?}"))),
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    if w == 0 || h == 0 {
        return Err(decode_err("zero-sized image".into()));
    }
    Ok(Image::from_rgb8(w, h, rgb.as_raw()))
}

/// Writes a PNG. Invalid pixels are written as the sentinel color; with
/// `with_alpha` the mask becomes the alpha channel (255 valid, 0 invalid).
pub fn save_image(img: &Image, path: impl AsRef<Path>, with_alpha: bool) -> Result<()> {
    let path = path.as_ref();
    if img.is_empty() {
        return Err(StitchError::Encode {
            path: path.to_path_buf(),
            reason: "image has no pixels".into(),
        });
    }
    let rgb = img.to_rgb8();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let dynamic = if with_alpha {
        let mut rgba = Vec::with_capacity(img.len() * 4);
        for (c, &m) in rgb.chunks_exact(3).zip(img.mask()) {
            rgba.extend_from_slice(c);
            rgba.push(if m { 255 } else { 0 });
        }
        DynamicImage::ImageRgba8(RgbaImage::from_raw(w, h, rgba).expect("buffer size"))
    } else {
        DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, rgb).expect("buffer size"))
    };
    let file = File::create(path).map_err(|e| StitchError::io(path, e))?;
    let mut writer = BufWriter::new(file);
    dynamic
        .write_to(&mut writer, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => StitchError::io(path, io),
            other => StitchError::Encode {
                path: path.to_path_buf(),
                reason: other.to_string(),
            },
        })
}

#[inline]
pub fn luma(c: Rgb) -> f64 {
    0.299 * c[0] as f64 + 0.587 * c[1] as f64 + 0.114 * c[2] as f64
}

/// Rec. 601 luma; masked pixels map to 0.
pub fn to_grayscale(img: &Image) -> Plane {
    let data = img
        .pixels()
        .iter()
        .zip(img.mask())
        .map(|(&c, &m)| if m { luma(c) } else { 0.0 })
        .collect();
    Plane::from_vec(img.width(), img.height(), data)
}

/// Central-difference gradient magnitude with replicated borders.
pub fn gradient_magnitude(p: &Plane) -> Plane {
    let (w, h) = (p.width(), p.height());
    Plane::from_fn(w, h, |x, y| {
        let xl = x.saturating_sub(1);
        let xr = (x + 1).min(w - 1);
        let yu = y.saturating_sub(1);
        let yd = (y + 1).min(h - 1);
        let gx = (p.get(xr, y) - p.get(xl, y)) / 2.0;
        let gy = (p.get(x, yd) - p.get(x, yu)) / 2.0;
        (gx * gx + gy * gy).sqrt()
    })
}

/// Fractional parts closer than this to an integer are treated as exact, so
/// that sampling on the integer grid never touches a zero-weight neighbor.
const SNAP: f64 = 1e-9;

/// Bilinear interpolation at real coordinates. The result is valid iff every
/// neighbor with nonzero weight is in bounds and valid.
pub fn bilinear_sample(img: &Image, x: f64, y: f64) -> (Rgb, bool) {
    if !x.is_finite() || !y.is_finite() {
        return (SENTINEL, false);
    }
    let snap = |v: f64| {
        let r = v.round();
        if (v - r).abs() < SNAP {
            r
        } else {
            v
        }
    };
    let (x, y) = (snap(x), snap(y));
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let taps = [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x0 + 1, y0, fx * (1.0 - fy)),
        (x0, y0 + 1, (1.0 - fx) * fy),
        (x0 + 1, y0 + 1, fx * fy),
    ];
    let mut acc = [0.0f64; 3];
    for &(tx, ty, wgt) in &taps {
        if wgt == 0.0 {
            continue;
        }
        if !img.in_bounds(tx, ty) || !img.is_valid(tx as usize, ty as usize) {
            return (SENTINEL, false);
        }
        let c = img.get(tx as usize, ty as usize);
        for k in 0..3 {
            acc[k] += wgt * c[k] as f64;
        }
    }
    ([acc[0] as f32, acc[1] as f32, acc[2] as f32], true)
}
