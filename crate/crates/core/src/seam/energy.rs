//! Precomputed energy tables and fast evaluation of labelings.

use rayon::prelude::*;

use super::terms::{build_duplication_edges, mask_term, warp_term};
use super::{DuplicationEdge, Labeling, StitchProblem, Truncation};
use crate::image::Rgb;

/// Energy split into its four components.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnergyBreakdown {
    pub mask: f64,
    pub warp: f64,
    pub smooth: f64,
    pub dup: f64,
}

impl EnergyBreakdown {
    pub fn total(&self) -> f64 {
        self.mask + self.warp + self.smooth + self.dup
    }
}

impl std::fmt::Display for EnergyBreakdown {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:.6} {:.6} {:.6} {:.6} {:.6}",
            // Adding 0.0 turns -0.0 into 0.0.
            self.mask + 0.0,
            self.warp + 0.0,
            self.smooth + 0.0,
            self.dup + 0.0,
            self.total() + 0.0
        )
    }
}

/// The seam energy in table form: per-pixel unary costs for every label,
/// per-label colors and gradients for the seam terms, and the merged
/// duplication edges.
#[derive(Clone, Debug)]
pub struct EnergyModel {
    width: usize,
    height: usize,
    labels: usize,
    mask: Vec<f64>,
    warp: Vec<f64>,
    colors: Vec<Vec<Rgb>>,
    gradients: Vec<Vec<f64>>,
    lambda_seam: f64,
    lambda_edge: f64,
    lambda_potts: f64,
    dup: Vec<DuplicationEdge>,
    truncation: Truncation,
}

impl EnergyModel {
    pub fn from_problem(problem: &StitchProblem) -> Self {
        let (w, h) = problem.dims();
        let labels = problem.labels();
        let params = problem.params();
        let warp_planes = warp_term(problem);
        let mut mask = vec![0.0; w * h * labels];
        let mut warp = vec![0.0; w * h * labels];
        mask.par_chunks_mut(labels)
            .zip(warp.par_chunks_mut(labels))
            .enumerate()
            .for_each(|(p, (m, wp))| {
                let (x, y) = (p % w, p / w);
                for l in 0..labels {
                    m[l] = mask_term(x, y, l, problem);
                    wp[l] = if l == 0 {
                        0.0
                    } else {
                        params.lambda_warp * warp_planes[l].get(x, y)
                    };
                }
            });
        let colors = problem
            .sources()
            .iter()
            .map(|s| {
                s.pixels()
                    .iter()
                    .zip(s.mask())
                    .map(|(&c, &v)| if v { c } else { [0.0; 3] })
                    .collect()
            })
            .collect();
        let gradients = (0..labels)
            .map(|l| {
                let s = problem.source(l);
                problem
                    .gradient(l)
                    .data()
                    .iter()
                    .zip(s.mask())
                    .map(|(&g, &v)| if v { g } else { 0.0 })
                    .collect()
            })
            .collect();
        EnergyModel {
            width: w,
            height: h,
            labels,
            mask,
            warp,
            colors,
            gradients,
            lambda_seam: params.lambda_seam,
            lambda_edge: params.lambda_edge,
            lambda_potts: params.lambda_potts,
            dup: build_duplication_edges(problem),
            truncation: params.truncation,
        }
    }

    /// A model with explicit unary costs (`unary[p * labels + l]`, booked
    /// as mask energy) and no pairwise terms; add them with the `with_*`
    /// methods.
    pub fn from_unary(width: usize, height: usize, labels: usize, unary: Vec<f64>) -> Self {
        assert_eq!(unary.len(), width * height * labels);
        let n = width * height;
        EnergyModel {
            width,
            height,
            labels,
            mask: unary,
            warp: vec![0.0; n * labels],
            colors: vec![vec![[0.0; 3]; n]; labels],
            gradients: vec![vec![0.0; n]; labels],
            lambda_seam: 0.0,
            lambda_edge: 0.0,
            lambda_potts: 0.0,
            dup: Vec::new(),
            truncation: Truncation::Truncate,
        }
    }

    pub fn with_colors(mut self, colors: Vec<Vec<Rgb>>, lambda_seam: f64) -> Self {
        assert_eq!(colors.len(), self.labels);
        self.colors = colors;
        self.lambda_seam = lambda_seam;
        self
    }

    pub fn with_gradients(mut self, gradients: Vec<Vec<f64>>, lambda_edge: f64) -> Self {
        assert_eq!(gradients.len(), self.labels);
        self.gradients = gradients;
        self.lambda_edge = lambda_edge;
        self
    }

    pub fn with_potts(mut self, lambda_potts: f64) -> Self {
        self.lambda_potts = lambda_potts;
        self
    }

    pub fn with_duplication(mut self, edges: Vec<DuplicationEdge>) -> Self {
        self.dup = edges;
        self
    }

    pub fn with_truncation(mut self, truncation: Truncation) -> Self {
        self.truncation = truncation;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn truncation(&self) -> Truncation {
        self.truncation
    }

    pub fn duplication_edges(&self) -> &[DuplicationEdge] {
        &self.dup
    }

    #[inline]
    pub fn unary(&self, p: usize, label: usize) -> f64 {
        self.mask[p * self.labels + label] + self.warp[p * self.labels + label]
    }

    /// Seam cost between neighboring pixels `p` and `q` with labels `a`, `b`.
    #[inline]
    pub fn pairwise(&self, p: usize, q: usize, a: usize, b: usize) -> f64 {
        if a == b {
            return 0.0;
        }
        let mut v = self.lambda_potts;
        if self.lambda_seam != 0.0 {
            let (ca, cb) = (&self.colors[a], &self.colors[b]);
            v += self.lambda_seam * (dist(ca[p], cb[p]) + dist(ca[q], cb[q]));
        }
        if self.lambda_edge != 0.0 {
            v += self.lambda_edge * (self.gradients[a][p] + self.gradients[b][q]) / 2.0;
        }
        v
    }

    /// Unordered 4-neighbor pairs `(p, q)` with `q` right of or below `p`.
    pub(crate) fn neighbors(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (w, h) = (self.width, self.height);
        (0..h).flat_map(move |y| {
            (0..w).flat_map(move |x| {
                let p = y * w + x;
                let right = (x + 1 < w).then_some((p, p + 1));
                let down = (y + 1 < h).then_some((p, p + w));
                right.into_iter().chain(down)
            })
        })
    }

    pub fn total_energy(&self, labeling: &Labeling) -> EnergyBreakdown {
        assert_eq!(
            (labeling.width(), labeling.height()),
            (self.width, self.height)
        );
        let x = labeling.as_slice();
        let (w, h) = (self.width, self.height);
        let (mask, warp) = x.iter().enumerate().fold((0.0, 0.0), |(m, wp), (p, &l)| {
            (
                m + self.mask[p * self.labels + l],
                wp + self.warp[p * self.labels + l],
            )
        });
        let mut smooth = 0.0;
        for y in 0..h {
            for xx in 0..w {
                let p = y * w + xx;
                if xx + 1 < w {
                    smooth += self.pairwise(p, p + 1, x[p], x[p + 1]);
                }
                if y + 1 < h {
                    smooth += self.pairwise(p, p + w, x[p], x[p + w]);
                }
            }
        }
        let dup = self
            .dup
            .iter()
            .filter(|e| x[e.a] == 0 && x[e.b] == e.label)
            .map(|e| e.weight)
            .sum();
        EnergyBreakdown {
            mask,
            warp,
            smooth,
            dup,
        }
    }

    /// Number of duplication edges whose condition the labeling satisfies.
    pub fn satisfied_duplications(&self, labeling: &Labeling) -> usize {
        let x = labeling.as_slice();
        self.dup
            .iter()
            .filter(|e| x[e.a] == 0 && x[e.b] == e.label)
            .count()
    }
}

#[inline]
fn dist(a: Rgb, b: Rgb) -> f64 {
    let d0 = a[0] as f64 - b[0] as f64;
    let d1 = a[1] as f64 - b[1] as f64;
    let d2 = a[2] as f64 - b[2] as f64;
    (d0 * d0 + d1 * d1 + d2 * d2).sqrt()
}
