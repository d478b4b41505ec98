//! Planar points, projective maps and small polygon utilities.

use nalgebra::{Matrix2, Matrix3, Vector3};

use crate::error::{Result, StitchError};

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(self, o: Point) -> f64 {
        self.dist2(o).sqrt()
    }

    pub fn dist2(self, o: Point) -> f64 {
        let dx = self.x - o.x;
        let dy = self.y - o.y;
        dx * dx + dy * dy
    }
}

impl std::ops::Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl std::ops::Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

/// Returned by [`Homography::project`] when a point lands on the line at infinity.
pub const AT_INFINITY: f64 = 1e12;

const SINGULAR_DET: f64 = 1e-9;

/// A 3×3 projective map, always mapping candidate-image coordinates into
/// reference-image coordinates.
///
/// Stored in canonical form: bottom-right entry 1 when it is nonzero,
/// otherwise unit Frobenius norm with a positive leading entry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    pub fn identity() -> Self {
        Homography(Matrix3::identity())
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Homography(Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0))
    }

    /// Normalizes `m` and checks that it is nonsingular.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(StitchError::Degenerate("non-finite homography".into()));
        }
        let h = Homography(canonical(m));
        if h.0.determinant().abs() <= SINGULAR_DET {
            return Err(StitchError::Degenerate(format!(
                "singular homography (det {:.3e})",
                h.0.determinant()
            )));
        }
        Ok(h)
    }

    /// Row-major construction.
    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self> {
        Homography::new(Matrix3::from_row_slice(&rows.concat()))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn to_rows(&self) -> [[f64; 3]; 3] {
        let m = &self.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    /// Applies the map; `None` when the point lands at infinity.
    pub fn apply(&self, p: Point) -> Option<Point> {
        let v = self.0 * Vector3::new(p.x, p.y, 1.0);
        if v.z.abs() < 1e-12 {
            return None;
        }
        let q = Point::new(v.x / v.z, v.y / v.z);
        (q.x.is_finite() && q.y.is_finite()).then_some(q)
    }

    /// Homogeneous w-coordinate of the mapped point.
    pub fn w(&self, p: Point) -> f64 {
        self.0[(2, 0)] * p.x + self.0[(2, 1)] * p.y + self.0[(2, 2)]
    }

    /// ‖H·from − to‖, or [`AT_INFINITY`] for points mapped to infinity.
    pub fn transfer_error(&self, from: Point, to: Point) -> f64 {
        match self.apply(from) {
            Some(q) => q.dist(to),
            None => AT_INFINITY,
        }
    }

    pub fn inverse(&self) -> Homography {
        let inv = self.0.try_inverse().expect("nonsingular by construction");
        Homography(canonical(inv))
    }

    pub fn compose(&self, then: &Homography) -> Result<Homography> {
        Homography::new(then.0 * self.0)
    }

    pub fn determinant(&self) -> f64 {
        self.0.determinant()
    }

    /// Singular values of the upper-left 2×2 block (largest first).
    pub fn linear_singular_values(&self) -> (f64, f64) {
        let a = Matrix2::new(
            self.0[(0, 0)],
            self.0[(0, 1)],
            self.0[(1, 0)],
            self.0[(1, 1)],
        );
        let sv = a.singular_values();
        (sv[0].max(sv[1]), sv[0].min(sv[1]))
    }

    /// Largest entrywise difference to `other`.
    pub fn max_abs_diff(&self, other: &Homography) -> f64 {
        (self.0 - other.0).abs().max()
    }

    pub fn approx_eq(&self, other: &Homography, tol: f64) -> bool {
        self.max_abs_diff(other) <= tol
    }
}

fn canonical(m: Matrix3<f64>) -> Matrix3<f64> {
    let norm = m.norm();
    if norm == 0.0 {
        return m;
    }
    let br = m[(2, 2)];
    if br.abs() > 1e-12 * norm {
        return m / br;
    }
    let mut n = m / norm;
    if let Some(first) = n.iter().copied().find(|v| v.abs() > 1e-15) {
        if first < 0.0 {
            n = -n;
        }
    }
    n
}

/// Corners of a `w`×`h` raster at pixel centers, counter-clockwise in a
/// y-down frame: (0,0), (w-1,0), (w-1,h-1), (0,h-1).
pub fn raster_corners(w: usize, h: usize) -> [Point; 4] {
    let (xm, ym) = ((w as f64 - 1.0).max(0.0), (h as f64 - 1.0).max(0.0));
    [
        Point::new(0.0, 0.0),
        Point::new(xm, 0.0),
        Point::new(xm, ym),
        Point::new(0.0, ym),
    ]
}

/// Shoelace signed area.
pub fn signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    let mut s = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        s += a.x * b.y - b.x * a.y;
    }
    s / 2.0
}

/// Sutherland–Hodgman clipping of `subject` against a convex `clip` polygon.
/// Both polygons may have either orientation.
pub fn clip_polygon(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let orient = signed_area(clip).signum();
    if orient == 0.0 {
        return Vec::new();
    }
    let inside = |a: Point, b: Point, p: Point| {
        orient * ((b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)) >= 0.0
    };
    let intersect = |a: Point, b: Point, p: Point, q: Point| {
        let r = b - a;
        let s = q - p;
        let denom = r.x * s.y - r.y * s.x;
        if denom.abs() < 1e-300 {
            return p;
        }
        let t = (r.x * (a.y - p.y) - r.y * (a.x - p.x)) / denom;
        p + s * t
    };
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = inside(a, b, cur);
            let prev_in = inside(a, b, prev);
            if cur_in {
                if !prev_in {
                    output.push(intersect(a, b, prev, cur));
                }
                output.push(cur);
            } else if prev_in {
                output.push(intersect(a, b, prev, cur));
            }
        }
    }
    output
}

/// Intersection-over-union of polygon `a` and convex polygon `b`.
pub fn overlap_ratio(a: &[Point], b: &[Point]) -> f64 {
    let area_a = signed_area(a).abs();
    let area_b = signed_area(b).abs();
    let inter = signed_area(&clip_polygon(a, b)).abs();
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_form_is_scale_invariant() {
        let h =
            Homography::from_rows([[1.0, 0.1, 5.0], [0.0, 2.0, 3.0], [0.001, 0.0, 1.0]]).unwrap();
        let scaled = Homography::new(h.matrix() * -3.7).unwrap();
        assert!(h.approx_eq(&scaled, 1e-9));
        assert_eq!(h.matrix()[(2, 2)], 1.0);
    }

    #[test]
    fn zero_corner_uses_frobenius_norm() {
        let h = Homography::from_rows([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]).unwrap();
        assert!((h.matrix().norm() - 1.0).abs() < 1e-12);
        let neg = Homography::new(-h.matrix()).unwrap();
        assert!(h.approx_eq(&neg, 1e-12));
    }

    #[test]
    fn singular_matrix_rejected() {
        assert!(
            Homography::from_rows([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 0.0, 1.0]]).is_err()
        );
    }

    #[test]
    fn inverse_round_trip() {
        let h = Homography::from_rows([[1.1, 0.05, 12.0], [-0.03, 0.95, -4.0], [1e-4, -2e-4, 1.0]])
            .unwrap();
        let p = Point::new(37.0, 81.5);
        let q = h.apply(p).unwrap();
        let back = h.inverse().apply(q).unwrap();
        assert!(back.dist(p) < 1e-9);
    }

    #[test]
    fn iou_of_shifted_squares() {
        let a = [
            Point::new(0.0, 0.0),
            Point::new(10.0, 0.0),
            Point::new(10.0, 10.0),
            Point::new(0.0, 10.0),
        ];
        let b: Vec<Point> = a.iter().map(|p| *p + Point::new(5.0, 0.0)).collect();
        assert!((overlap_ratio(&a, &a) - 1.0).abs() < 1e-12);
        assert!((overlap_ratio(&a, &b) - 50.0 / 150.0).abs() < 1e-12);
        let far: Vec<Point> = a.iter().map(|p| *p + Point::new(50.0, 0.0)).collect();
        assert_eq!(overlap_ratio(&a, &far), 0.0);
    }
}
