//! Matrix-free conjugate gradient for symmetric positive (semi-)definite systems.

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgStats {
    pub iterations: usize,
    /// ‖b − A·x‖ / ‖b‖, recomputed from scratch after the last iteration.
    pub relative_residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A·x = b` starting from the contents of `x`.
///
/// `apply(v, out)` must write `A·v` into `out`. Iterates until the relative
/// residual drops to `tol` or `max_iter` is reached; `x` always holds the
/// best iterate seen.
pub fn conjugate_gradient(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> CgStats {
    let n = b.len();
    assert_eq!(x.len(), n);
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return CgStats {
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        };
    }
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let mut best = x.to_vec();
    let mut best_rr = rr;
    let mut iterations = 0;
    while iterations < max_iter && rr.sqrt() / b_norm > tol {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            break;
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        iterations += 1;
        if rr_new < best_rr {
            best_rr = rr_new;
            best.copy_from_slice(x);
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    if best_rr < rr {
        x.copy_from_slice(&best);
    }
    apply(x, &mut ax);
    let res = b
        .iter()
        .zip(&ax)
        .map(|(bi, ai)| (bi - ai).powi(2))
        .sum::<f64>()
        .sqrt()
        / b_norm;
    CgStats {
        iterations,
        relative_residual: res,
        converged: res <= tol,
    }
}

/// Row-compressed sparse matrix assembled row by row.
#[derive(Clone, Debug, Default)]
pub struct SparseRows {
    cols: usize,
    starts: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseRows {
    pub fn new(cols: usize) -> Self {
        SparseRows {
            cols,
            starts: vec![0],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn push_row(&mut self, entries: impl IntoIterator<Item = (usize, f64)>) {
        for (c, v) in entries {
            debug_assert!(c < self.cols);
            if v != 0.0 {
                self.indices.push(c);
                self.values.push(v);
            }
        }
        self.starts.push(self.indices.len());
    }

    pub fn rows(&self) -> usize {
        self.starts.len() - 1
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn mul(&self, x: &[f64], out: &mut [f64]) {
        for r in 0..self.rows() {
            let mut s = 0.0;
            for k in self.starts[r]..self.starts[r + 1] {
                s += self.values[k] * x[self.indices[k]];
            }
            out[r] = s;
        }
    }

    pub fn mul_transpose(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..self.rows() {
            let yr = y[r];
            if yr == 0.0 {
                continue;
            }
            for k in self.starts[r]..self.starts[r + 1] {
                out[self.indices[k]] += self.values[k] * yr;
            }
        }
    }

    /// Least-squares solution of `A·x ≈ rhs` by CG on the normal equations,
    /// starting from zero.
    pub fn solve_least_squares(
        &self,
        rhs: &[f64],
        tol: f64,
        max_iter: usize,
    ) -> (Vec<f64>, CgStats) {
        let mut atb = vec![0.0; self.cols];
        self.mul_transpose(rhs, &mut atb);
        let mut tmp = vec![0.0; self.rows()];
        let mut x = vec![0.0; self.cols];
        let stats = conjugate_gradient(
            |v, out| {
                self.mul(v, &mut tmp);
                self.mul_transpose(&tmp, out);
            },
            &atb,
            &mut x,
            tol,
            max_iter,
        );
        (x, stats)
    }
}
