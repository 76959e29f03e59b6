//! One-pass reduction of the design to the inner products the likelihood
//! needs. Nothing stored here has a dimension that depends on `N`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, symmetrize};

const ROW_CHUNK: usize = 2048;

/// Borrowed view of the regression design: covariates (first column the
/// constant 1), per-covariate varying flags, eigenvectors with their
/// eigenvalues, and the response.
#[derive(Debug, Clone, Copy)]
pub struct SvcDesign<'a> {
    pub x: &'a DMatrix<f64>,
    pub svc_flags: &'a [bool],
    pub basis: &'a DMatrix<f64>,
    pub lambda: &'a [f64],
    pub y: &'a DVector<f64>,
}

impl<'a> SvcDesign<'a> {
    pub fn new(
        x: &'a DMatrix<f64>,
        svc_flags: &'a [bool],
        basis: &'a DMatrix<f64>,
        lambda: &'a [f64],
        y: &'a DVector<f64>,
    ) -> Result<Self> {
        let n = x.nrows();
        if y.len() != n || basis.nrows() != n {
            return Err(Error::DimensionMismatch("x, y and the basis must have N rows"));
        }
        if lambda.len() != basis.ncols() {
            return Err(Error::DimensionMismatch("one eigenvalue per basis column"));
        }
        if let Some(&bad) = lambda.iter().find(|&&l| !(l > 0.0)) {
            return Err(Error::NonPositiveEigenvalue(bad));
        }
        if svc_flags.len() != x.ncols() || x.ncols() == 0 {
            return Err(Error::DimensionMismatch("one varying flag per covariate"));
        }
        if x.column(0).iter().any(|&v| v != 1.0) {
            return Err(Error::InvalidConfig("the first covariate must be the constant 1"));
        }
        if !svc_flags[0] {
            return Err(Error::InvalidConfig("the intercept coefficient must vary"));
        }
        if !all_finite(x.iter()) {
            return Err(Error::NonFiniteInput("covariates"));
        }
        if !all_finite(y.iter()) {
            return Err(Error::NonFiniteInput("response"));
        }
        if !all_finite(basis.iter()) {
            return Err(Error::NonFiniteInput("basis"));
        }
        Ok(SvcDesign { x, svc_flags, basis, lambda, y })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    pub fn l(&self) -> usize {
        self.basis.ncols()
    }

    pub fn varying(&self) -> Vec<usize> {
        self.svc_flags.iter().enumerate().filter(|(_, &f)| f).map(|(i, _)| i).collect()
    }

    /// `x_k o E` for covariate `k`.
    pub fn scaled_basis(&self, k: usize) -> DMatrix<f64> {
        let mut e = self.basis.clone();
        for (i, mut row) in e.row_iter_mut().enumerate() {
            row *= self.x[(i, k)];
        }
        e
    }
}

/// Inner products of the compressed design.
///
/// Index `j` below runs over the *varying* coefficients, in covariate order;
/// `varying[j]` is the matching covariate column.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedMoments {
    pub n: usize,
    pub k: usize,
    pub l: usize,
    pub varying: Vec<usize>,
    /// Eigenvalues of the basis the moments were built from.
    pub lambda: Vec<f64>,
    /// `X'X`
    pub m00: DMatrix<f64>,
    /// `X'(x_j o E)`, `K x L` each
    pub m0k: Vec<DMatrix<f64>>,
    /// `(x_j o E)'(x_j' o E)`, row-major over `(j, j')`
    mkk: Vec<DMatrix<f64>>,
    /// `X'y`
    pub m0: DVector<f64>,
    /// `(x_j o E)'y`
    pub mk: Vec<DVector<f64>>,
    /// `y'y`
    pub myy: f64,
}

impl CompressedMoments {
    pub fn n_varying(&self) -> usize {
        self.varying.len()
    }

    pub fn mkk(&self, j: usize, j2: usize) -> &DMatrix<f64> {
        &self.mkk[j * self.varying.len() + j2]
    }

    /// Number of stored scalars.
    pub fn stored_len(&self) -> usize {
        self.m00.len()
            + self.m0k.iter().map(|m| m.len()).sum::<usize>()
            + self.mkk.iter().map(|m| m.len()).sum::<usize>()
            + self.m0.len()
            + self.mk.iter().map(|m| m.len()).sum::<usize>()
            + 1
    }

    /// Returns a copy with `y` rescaled by `c` (moments involving `y` scale
    /// linearly, `y'y` quadratically).
    pub fn with_scaled_response(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.m0 *= c;
        for m in &mut out.mk {
            *m *= c;
        }
        out.myy *= c * c;
        out
    }
}

/// Accumulate all moment blocks in row chunks of the stacked design
/// `W = [X, x_j o E ...]`, so only one chunk of `W` exists at a time.
pub fn compress(design: &SvcDesign<'_>) -> Result<CompressedMoments> {
    let (n, k, l) = (design.n(), design.k(), design.l());
    let varying = design.varying();
    let kv = varying.len();
    let width = k + kv * l;
    let mut gram = DMatrix::<f64>::zeros(width, width);
    let mut cross = DVector::<f64>::zeros(width);
    let mut myy = 0.0;

    let mut start = 0;
    while start < n {
        let rows = ROW_CHUNK.min(n - start);
        let mut w = DMatrix::<f64>::zeros(rows, width);
        w.columns_mut(0, k).copy_from(&design.x.rows(start, rows));
        for (j, &cov) in varying.iter().enumerate() {
            let mut block = w.columns_mut(k + j * l, l);
            block.copy_from(&design.basis.rows(start, rows));
            for i in 0..rows {
                let xi = design.x[(start + i, cov)];
                block.row_mut(i).scale_mut(xi);
            }
        }
        let y = design.y.rows(start, rows);
        gram += w.tr_mul(&w);
        cross += w.tr_mul(&y);
        myy += y.dot(&y);
        start += rows;
    }

    symmetrize(&mut gram);
    let m00 = gram.view((0, 0), (k, k)).into_owned();
    let m0k = (0..kv).map(|j| gram.view((0, k + j * l), (k, l)).into_owned()).collect();
    let mut mkk = Vec::with_capacity(kv * kv);
    for j in 0..kv {
        for j2 in 0..kv {
            mkk.push(gram.view((k + j * l, k + j2 * l), (l, l)).into_owned());
        }
    }
    let m0 = cross.rows(0, k).into_owned();
    let mk = (0..kv).map(|j| cross.rows(k + j * l, l).into_owned()).collect();
    Ok(CompressedMoments { n, k, l, varying, lambda: design.lambda.to_vec(), m00, m0k, mkk, m0, mk, myy })
}
