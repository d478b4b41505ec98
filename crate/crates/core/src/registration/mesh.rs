//! Grid meshes over the stitching canvas, content-preserving refinement of
//! a homography into a mesh, and inverse warping through a mesh.

use rayon::prelude::*;

use super::{Canvas, RegistrationParams};
use crate::correspond::Correspondence;
use crate::error::{Result, StitchError};
use crate::geometry::{raster_corners, signed_area, Homography, Point};
use crate::image::{bilinear_sample, Image, Rgb, SENTINEL};
use crate::solver::{CgStats, SparseRows};

/// Regular grid of control vertices laid over a canvas rectangle. Each
/// vertex stores the candidate-image position it samples from; positions in
/// between are bilinearly interpolated.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpMesh {
    origin: Point,
    cell_w: f64,
    cell_h: f64,
    grid: usize,
    vertices: Vec<Point>,
}

const EDGE_TOLERANCE: f64 = 1e-9;

impl WarpMesh {
    /// Samples `map` at the vertices of a `grid`×`grid` mesh covering the
    /// canvas rectangle `[x0, x1]×[y0, y1]`.
    pub fn from_map(
        (x0, y0): (f64, f64),
        (x1, y1): (f64, f64),
        grid: usize,
        map: impl Fn(Point) -> Option<Point>,
    ) -> Option<Self> {
        let grid = grid.max(1);
        let cell_w = ((x1 - x0) / grid as f64).max(1e-6);
        let cell_h = ((y1 - y0) / grid as f64).max(1e-6);
        let origin = Point::new(x0, y0);
        let mut vertices = Vec::with_capacity((grid + 1) * (grid + 1));
        for j in 0..=grid {
            for i in 0..=grid {
                let c = Point::new(x0 + i as f64 * cell_w, y0 + j as f64 * cell_h);
                vertices.push(map(c)?);
            }
        }
        Some(WarpMesh {
            origin,
            cell_w,
            cell_h,
            grid,
            vertices,
        })
    }

    /// Mesh over the canvas footprint of `h(candidate)` whose vertices follow
    /// `h⁻¹` exactly.
    pub fn from_homography(
        h: &Homography,
        candidate_dims: (usize, usize),
        canvas: &Canvas,
        grid: usize,
    ) -> Result<Self> {
        let corners = raster_corners(candidate_dims.0, candidate_dims.1);
        let mapped: Vec<Point> = corners
            .iter()
            .map(|&c| h.apply(c).map(|p| canvas.to_canvas(p)))
            .collect::<Option<_>>()
            .ok_or_else(|| StitchError::Degenerate("candidate corner maps to infinity".into()))?;
        let clampx = |v: f64| v.clamp(0.0, (canvas.width - 1) as f64);
        let clampy = |v: f64| v.clamp(0.0, (canvas.height - 1) as f64);
        let x0 = clampx(
            mapped
                .iter()
                .map(|p| p.x)
                .fold(f64::INFINITY, f64::min)
                .floor(),
        );
        let x1 = clampx(
            mapped
                .iter()
                .map(|p| p.x)
                .fold(f64::NEG_INFINITY, f64::max)
                .ceil(),
        );
        let y0 = clampy(
            mapped
                .iter()
                .map(|p| p.y)
                .fold(f64::INFINITY, f64::min)
                .floor(),
        );
        let y1 = clampy(
            mapped
                .iter()
                .map(|p| p.y)
                .fold(f64::NEG_INFINITY, f64::max)
                .ceil(),
        );
        let inv = h.inverse();
        WarpMesh::from_map((x0, y0), (x1.max(x0 + 1.0), y1.max(y0 + 1.0)), grid, |c| {
            inv.apply(canvas.to_reference(c))
        })
        .ok_or_else(|| StitchError::Degenerate("mesh vertex maps to infinity".into()))
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    #[inline]
    fn vid(&self, i: usize, j: usize) -> usize {
        j * (self.grid + 1) + i
    }

    pub fn vertex(&self, i: usize, j: usize) -> Point {
        self.vertices[self.vid(i, j)]
    }

    /// Canvas position of vertex `(i, j)`.
    pub fn vertex_canvas(&self, i: usize, j: usize) -> Point {
        Point::new(
            self.origin.x + i as f64 * self.cell_w,
            self.origin.y + j as f64 * self.cell_h,
        )
    }

    /// Cell containing canvas point `c` and the bilinear weights of its
    /// vertices `(i,j), (i+1,j), (i,j+1), (i+1,j+1)`.
    pub fn locate(&self, c: Point) -> Option<([usize; 4], [f64; 4])> {
        let u = (c.x - self.origin.x) / self.cell_w;
        let v = (c.y - self.origin.y) / self.cell_h;
        let g = self.grid as f64;
        if !(u >= -EDGE_TOLERANCE
            && v >= -EDGE_TOLERANCE
            && u <= g + EDGE_TOLERANCE
            && v <= g + EDGE_TOLERANCE)
        {
            return None;
        }
        let i = (u.floor().max(0.0) as usize).min(self.grid - 1);
        let j = (v.floor().max(0.0) as usize).min(self.grid - 1);
        let fu = (u - i as f64).clamp(0.0, 1.0);
        let fv = (v - j as f64).clamp(0.0, 1.0);
        Some((
            [
                self.vid(i, j),
                self.vid(i + 1, j),
                self.vid(i, j + 1),
                self.vid(i + 1, j + 1),
            ],
            [
                (1.0 - fu) * (1.0 - fv),
                fu * (1.0 - fv),
                (1.0 - fu) * fv,
                fu * fv,
            ],
        ))
    }

    /// Candidate-image position sampled by canvas point `c`.
    pub fn map(&self, c: Point) -> Option<Point> {
        let (ids, w) = self.locate(c)?;
        let mut p = Point::default();
        for k in 0..4 {
            p = p + self.vertices[ids[k]] * w[k];
        }
        Some(p)
    }

    /// Canvas point whose mesh image is `target`, by fixed-point iteration
    /// corrected through `h` (the homography the mesh was built from).
    pub fn invert(&self, target: Point, h: &Homography, canvas: &Canvas) -> Option<Point> {
        let goal = canvas.to_canvas(h.apply(target)?);
        let mut c = goal;
        for _ in 0..8 {
            let here = canvas.to_canvas(h.apply(self.map(c)?)?);
            let step = goal - here;
            c = c + step;
            if step.x.abs() + step.y.abs() < 1e-6 {
                break;
            }
        }
        self.locate(c).map(|_| c)
    }

    /// Every quad has strictly positive signed area.
    pub fn is_valid(&self) -> bool {
        (0..self.grid).all(|j| {
            (0..self.grid).all(|i| {
                let quad = [
                    self.vertex(i, j),
                    self.vertex(i + 1, j),
                    self.vertex(i + 1, j + 1),
                    self.vertex(i, j + 1),
                ];
                signed_area(&quad) > 0.0
            })
        })
    }

    /// Largest vertex displacement relative to a mesh on the same grid.
    pub fn max_displacement(&self, other: &WarpMesh) -> f64 {
        self.vertices
            .iter()
            .zip(&other.vertices)
            .map(|(a, b)| a.dist(*b))
            .fold(0.0, f64::max)
    }

    fn with_vertices(&self, vertices: Vec<Point>) -> Self {
        WarpMesh {
            vertices,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug)]
pub struct CpwOutcome {
    pub mesh: WarpMesh,
    /// Mesh before refinement (exactly `h⁻¹` at the vertices).
    pub initial: WarpMesh,
    pub solver: CgStats,
    /// The refined mesh folded over and was discarded.
    pub fell_back: bool,
}

const CPW_TOLERANCE: f64 = 1e-8;
const CPW_MAX_ITERATIONS: usize = 20_000;

/// Content-preserving refinement of the mesh of `h`.
///
/// Solves a sparse linear least-squares problem for vertex displacements:
/// each inlier's reference position, interpolated through its cell, should
/// land on its candidate position (data term); each corner triangle of each
/// quad keeps the similarity coordinates it had in the initial mesh
/// (similarity term); and every vertex is weakly tied to its initial
/// position (anchor term). Solved by CG on the normal equations.
pub fn cpw_refine(
    h: &Homography,
    inliers: &[Correspondence],
    candidate_dims: (usize, usize),
    canvas: &Canvas,
    params: &RegistrationParams,
) -> Result<CpwOutcome> {
    let initial = WarpMesh::from_homography(h, candidate_dims, canvas, params.cpw_grid)?;
    let g = initial.grid;
    let nv = (g + 1) * (g + 1);
    let mut a = SparseRows::new(2 * nv);
    let mut rhs = Vec::new();

    let wd = params.cpw_data_weight.sqrt();
    for c in inliers {
        let Some((ids, w)) = initial.locate(canvas.to_canvas(c.p0)) else {
            continue;
        };
        let mut predicted = Point::default();
        for k in 0..4 {
            predicted = predicted + initial.vertices[ids[k]] * w[k];
        }
        a.push_row((0..4).map(|k| (2 * ids[k], wd * w[k])));
        rhs.push(wd * (c.p1.x - predicted.x));
        a.push_row((0..4).map(|k| (2 * ids[k] + 1, wd * w[k])));
        rhs.push(wd * (c.p1.y - predicted.y));
    }

    let ws = params.cpw_similarity_weight.sqrt();
    for j in 0..g {
        for i in 0..g {
            let quad = [
                initial.vid(i, j),
                initial.vid(i + 1, j),
                initial.vid(i + 1, j + 1),
                initial.vid(i, j + 1),
            ];
            for k in 0..4 {
                let (v1, v2, v3) = (quad[k], quad[(k + 1) % 4], quad[(k + 3) % 4]);
                let (p1, p2, p3) = (
                    initial.vertices[v1],
                    initial.vertices[v2],
                    initial.vertices[v3],
                );
                let d = p3 - p2;
                let e = p1 - p2;
                let dd = d.x * d.x + d.y * d.y;
                if dd < 1e-12 {
                    continue;
                }
                // p1 = p2 + u·d + v·R(d), R(x, y) = (y, -x)
                let u = (e.x * d.x + e.y * d.y) / dd;
                let v = (e.x * d.y - e.y * d.x) / dd;
                a.push_row([
                    (2 * v1, ws),
                    (2 * v2, ws * (u - 1.0)),
                    (2 * v3, -ws * u),
                    (2 * v2 + 1, ws * v),
                    (2 * v3 + 1, -ws * v),
                ]);
                rhs.push(0.0);
                a.push_row([
                    (2 * v1 + 1, ws),
                    (2 * v2 + 1, ws * (u - 1.0)),
                    (2 * v3 + 1, -ws * u),
                    (2 * v2, -ws * v),
                    (2 * v3, ws * v),
                ]);
                rhs.push(0.0);
            }
        }
    }

    let wa = params.cpw_anchor_weight.sqrt();
    if wa > 0.0 {
        for k in 0..2 * nv {
            a.push_row([(k, wa)]);
            rhs.push(0.0);
        }
    }

    let (delta, solver) = a.solve_least_squares(&rhs, CPW_TOLERANCE, CPW_MAX_ITERATIONS);
    let moved: Vec<Point> = initial
        .vertices
        .iter()
        .enumerate()
        .map(|(k, p)| Point::new(p.x + delta[2 * k], p.y + delta[2 * k + 1]))
        .collect();
    let mesh = initial.with_vertices(moved);
    if mesh.is_valid()
        && mesh
            .vertices
            .iter()
            .all(|p| p.x.is_finite() && p.y.is_finite())
    {
        Ok(CpwOutcome {
            mesh,
            initial,
            solver,
            fell_back: false,
        })
    } else {
        log::warn!("refined mesh is degenerate; keeping the homography mesh");
        Ok(CpwOutcome {
            mesh: initial.clone(),
            initial,
            solver,
            fell_back: true,
        })
    }
}

/// Inverse-warps `source` onto a `width`×`height` canvas through `mesh`.
/// Canvas pixels outside the mesh or sampling outside the valid source are
/// invalid.
pub fn warp_image(source: &Image, mesh: &WarpMesh, (width, height): (usize, usize)) -> Image {
    let rows: Vec<Vec<(Rgb, bool)>> = (0..height)
        .into_par_iter()
        .map(|y| {
            (0..width)
                .map(|x| match mesh.map(Point::new(x as f64, y as f64)) {
                    Some(s) => bilinear_sample(source, s.x, s.y),
                    None => (SENTINEL, false),
                })
                .collect()
        })
        .collect();
    let (pixels, mask): (Vec<Rgb>, Vec<bool>) = rows.into_iter().flatten().unzip();
    Image::from_parts(width, height, pixels, mask)
}
