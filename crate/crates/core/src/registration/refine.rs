//! Homography refinement by maximizing a smoothed inlier count.

use nalgebra::{Matrix3, SMatrix, SVector};

use crate::correspond::Correspondence;
use crate::geometry::{Homography, Point, AT_INFINITY};

type Vec8 = SVector<f64, 8>;
type Mat8 = SMatrix<f64, 8, 8>;

const MAX_ITERATIONS: usize = 200;
const CONVERGENCE: f64 = 1e-9;
const JACOBIAN_STEP: f64 = 1e-6;
/// Lower bound on the error used in curvature weights, so exact inliers do
/// not produce infinite weights.
const ERROR_FLOOR: f64 = 1e-6;

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Smoothed inlier indicator: ≈1 for errors well below `threshold`, ≈0 far
/// above it, exactly 0.5 at the threshold.
pub fn smooth_inlier_score(error: f64, threshold: f64) -> f64 {
    sigmoid(threshold - error)
}

/// Σ S(e_i) over all correspondences: a smooth count of inliers of `h`.
pub fn smooth_inlier_objective(h: &Homography, pairs: &[Correspondence], threshold: f64) -> f64 {
    pairs
        .iter()
        .map(|c| smooth_inlier_score(h.transfer_error(c.p1, c.p0), threshold))
        .sum()
}

/// Hartley-style similarity used to condition the parameters.
fn conditioner(points: impl Iterator<Item = Point> + Clone) -> Matrix3<f64> {
    let n = points.clone().count().max(1) as f64;
    let (sx, sy) = points
        .clone()
        .fold((0.0, 0.0), |(a, b), p| (a + p.x, b + p.y));
    let (cx, cy) = (sx / n, sy / n);
    let spread = points
        .map(|p| (p.x - cx).abs().max((p.y - cy).abs()))
        .fold(0.0, f64::max);
    let s = if spread > 1e-9 { 1.0 / spread } else { 1.0 };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

/// Homography expressed as 8 free entries of a conditioned matrix whose
/// bottom-right entry is pinned to 1.
struct Parametrization {
    to_ref: Matrix3<f64>,
    from_cand: Matrix3<f64>,
}

impl Parametrization {
    fn new(pairs: &[Correspondence]) -> Self {
        let t0 = conditioner(pairs.iter().map(|c| c.p0));
        let t1 = conditioner(pairs.iter().map(|c| c.p1));
        Parametrization {
            to_ref: t0.try_inverse().expect("positive scale"),
            from_cand: t1,
        }
    }

    fn encode(&self, h: &Homography) -> Option<Vec8> {
        let t0 = self.to_ref.try_inverse()?;
        let t1_inv = self.from_cand.try_inverse()?;
        let m = t0 * h.matrix() * t1_inv;
        let br = m[(2, 2)];
        if br.abs() < 1e-12 {
            return None;
        }
        let m = m / br;
        Some(Vec8::from_iterator(m.transpose().iter().take(8).copied()))
    }

    fn decode_matrix(&self, theta: &Vec8) -> Matrix3<f64> {
        let m = Matrix3::new(
            theta[0], theta[1], theta[2], theta[3], theta[4], theta[5], theta[6], theta[7], 1.0,
        );
        self.to_ref * m * self.from_cand
    }

    fn decode(&self, theta: &Vec8) -> Option<Homography> {
        Homography::new(self.decode_matrix(theta)).ok()
    }
}

fn project(m: &Matrix3<f64>, p: Point) -> Option<Point> {
    let w = m[(2, 0)] * p.x + m[(2, 1)] * p.y + m[(2, 2)];
    if w.abs() < 1e-12 {
        return None;
    }
    Some(Point::new(
        (m[(0, 0)] * p.x + m[(0, 1)] * p.y + m[(0, 2)]) / w,
        (m[(1, 0)] * p.x + m[(1, 1)] * p.y + m[(1, 2)]) / w,
    ))
}

/// Locally maximizes [`smooth_inlier_objective`] starting from `h`.
///
/// Levenberg–Marquardt on the 8 free parameters with a central-difference
/// Jacobian of the per-pair residuals and an iteratively reweighted
/// curvature model. A step is taken only when it increases the objective by
/// at least 1e-9, so `f(result) >= f(h)` always holds; singular iterates are
/// never accepted.
pub fn refine_homography(h: &Homography, pairs: &[Correspondence], threshold: f64) -> Homography {
    if pairs.is_empty() {
        return *h;
    }
    let param = Parametrization::new(pairs);
    let Some(mut theta) = param.encode(h) else {
        return *h;
    };
    let mut current = *h;
    let mut f_cur = smooth_inlier_objective(&current, pairs, threshold);
    let mut damping = 1e-3;

    for _ in 0..MAX_ITERATIONS {
        let m = param.decode_matrix(&theta);
        let probes: Vec<(Matrix3<f64>, Matrix3<f64>)> = (0..8)
            .map(|k| {
                let mut tp = theta;
                let mut tm = theta;
                tp[k] += JACOBIAN_STEP;
                tm[k] -= JACOBIAN_STEP;
                (param.decode_matrix(&tp), param.decode_matrix(&tm))
            })
            .collect();
        let mut grad = Vec8::zeros();
        let mut curvature = Mat8::zeros();
        for c in pairs {
            let Some(q) = project(&m, c.p1) else { continue };
            let r = [q.x - c.p0.x, q.y - c.p0.y];
            let e = (r[0] * r[0] + r[1] * r[1]).sqrt();
            if e >= AT_INFINITY {
                continue;
            }
            let s = smooth_inlier_score(e, threshold);
            let slope = s * (1.0 - s);
            if slope < 1e-300 {
                continue;
            }
            let mut jac = SMatrix::<f64, 2, 8>::zeros();
            let mut ok = true;
            for (k, (mp, mm)) in probes.iter().enumerate() {
                match (project(mp, c.p1), project(mm, c.p1)) {
                    (Some(a), Some(b)) => {
                        jac[(0, k)] = (a.x - b.x) / (2.0 * JACOBIAN_STEP);
                        jac[(1, k)] = (a.y - b.y) / (2.0 * JACOBIAN_STEP);
                    }
                    _ => ok = false,
                }
            }
            if !ok {
                continue;
            }
            let rv = SVector::<f64, 2>::new(r[0], r[1]);
            let weight = slope / e.max(ERROR_FLOOR);
            // d(-f)/dθ = Σ slope · (Jᵀ r) / e
            if e > 0.0 {
                grad += jac.transpose() * rv * (slope / e);
            }
            curvature += jac.transpose() * jac * weight;
        }
        if grad.norm() == 0.0 {
            break;
        }

        let mut improved = false;
        let mut converged = false;
        while damping < 1e12 {
            let mut lhs = curvature;
            for k in 0..8 {
                lhs[(k, k)] += damping * curvature[(k, k)].max(1e-12);
            }
            let Some(step) = lhs.lu().solve(&(-grad)) else {
                damping *= 10.0;
                continue;
            };
            let trial = theta + step;
            if let Some(candidate) = param.decode(&trial) {
                let f_new = smooth_inlier_objective(&candidate, pairs, threshold);
                if f_new > f_cur {
                    if f_new - f_cur < CONVERGENCE {
                        converged = true;
                        break;
                    }
                    theta = trial;
                    current = candidate;
                    f_cur = f_new;
                    damping = (damping / 3.0).max(1e-9);
                    improved = true;
                    break;
                }
            }
            damping *= 4.0;
        }
        if converged || !improved {
            break;
        }
    }
    current
}
