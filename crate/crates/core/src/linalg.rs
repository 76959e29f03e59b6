//! Small dense helpers shared by the estimator modules.

use alloc::vec::Vec;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Largest equilibrated condition number accepted by [`SpdFactor`].
pub(crate) const MAX_CONDITION: f64 = 1e12;

/// Cholesky factor of a symmetric positive definite matrix, computed on the
/// diagonally equilibrated matrix `D A D` with `D = diag(a_ii^-1/2)`.
///
/// Equilibration leaves the solution unchanged but keeps the condition
/// estimate meaningful when blocks live on very different scales.
pub(crate) struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    scale: DVector<f64>,
    pub(crate) condition: f64,
}

impl SpdFactor {
    pub(crate) fn new(a: &DMatrix<f64>) -> Option<Self> {
        let n = a.nrows();
        if n == 0 {
            return Some(SpdFactor {
                chol: Cholesky::new(DMatrix::zeros(0, 0))?,
                scale: DVector::zeros(0),
                condition: 1.0,
            });
        }
        let mut scale = DVector::zeros(n);
        for i in 0..n {
            let d = a[(i, i)];
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            scale[i] = 1.0 / libm::sqrt(d);
        }
        let scaled = DMatrix::from_fn(n, n, |i, j| {
            // symmetrize while scaling: callers assemble P blockwise
            0.5 * (a[(i, j)] + a[(j, i)]) * scale[i] * scale[j]
        });
        let chol = Cholesky::new(scaled)?;
        let l = chol.l_dirty();
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for i in 0..n {
            let v = l[(i, i)];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let condition = if lo > 0.0 { (hi / lo) * (hi / lo) } else { f64::INFINITY };
        Some(SpdFactor { chol, scale, condition })
    }

    /// Factor and reject matrices whose equilibrated condition exceeds
    /// [`MAX_CONDITION`].
    pub(crate) fn new_checked(a: &DMatrix<f64>) -> Option<Self> {
        let f = Self::new(a)?;
        (f.condition <= MAX_CONDITION).then_some(f)
    }

    pub(crate) fn ln_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        let mut s = 0.0;
        for i in 0..self.scale.len() {
            s += 2.0 * libm::log(l[(i, i)]) - 2.0 * libm::log(self.scale[i]);
        }
        s
    }

    pub(crate) fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.component_mul(&self.scale);
        self.chol.solve_mut(&mut x);
        x.component_mul_assign(&self.scale);
        x
    }

    pub(crate) fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        for (i, mut row) in x.row_iter_mut().enumerate() {
            row *= self.scale[i];
        }
        self.chol.solve_mut(&mut x);
        for (i, mut row) in x.row_iter_mut().enumerate() {
            row *= self.scale[i];
        }
        x
    }

    pub(crate) fn inverse(&self) -> DMatrix<f64> {
        let n = self.scale.len();
        let inv = self.chol.inverse();
        let mut out = DMatrix::from_fn(n, n, |i, j| inv[(i, j)] * self.scale[i] * self.scale[j]);
        symmetrize(&mut out);
        out
    }
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
pub(crate) fn sym_eigen_desc(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Flip each column so that its entry of largest magnitude is positive.
/// Returns the applied signs.
pub(crate) fn normalize_signs(m: &mut DMatrix<f64>) -> Vec<f64> {
    let mut signs = Vec::with_capacity(m.ncols());
    for mut col in m.column_iter_mut() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for &v in col.iter() {
            if libm::fabs(v) > best {
                best = libm::fabs(v);
                sign = if v < 0.0 { -1.0 } else { 1.0 };
            }
        }
        if sign < 0.0 {
            col.neg_mut();
        }
        signs.push(sign);
    }
    signs
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if libm::fabs(self.sum) >= libm::fabs(x) {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

pub(crate) fn compensated_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = CompensatedSum::default();
    for (x, y) in a.iter().zip(b) {
        s.add(x * y);
    }
    s.value()
}

pub(crate) fn all_finite<'a>(values: impl IntoIterator<Item = &'a f64>) -> bool {
    values.into_iter().all(|v| v.is_finite())
}
