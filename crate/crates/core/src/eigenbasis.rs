//! Moran eigenvectors: the exact basis of the doubly-centered proximity
//! matrix, its Nyström approximation from k-means knots, and the Moran
//! coefficient itself.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{dist, proximity, CoordinateSet, DiagonalPolicy, KnotSet, ProximityMatrix};
use crate::linalg::{normalize_signs, sym_eigen_desc};

/// Largest number of eigenpairs kept for estimation.
pub const MAX_RANK: usize = 200;
/// Largest site count accepted by the dense exact decomposition.
pub const EXACT_SIZE_GUARD: usize = 5_000;
/// Largest knot count accepted by the Nyström construction.
pub const MAX_KNOTS: usize = 2_000;
/// An eigenvalue counts as positive when it exceeds this fraction of the largest.
pub const POSITIVE_TOL: f64 = 1e-8;

const ROW_CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    Exact,
    Nystrom,
}

/// Knot-side quantities needed to evaluate the Nyström basis at any site.
#[derive(Debug, Clone, PartialEq)]
pub struct NystromFactors {
    pub knots: KnotSet,
    /// Retained eigenvectors of the centered knot kernel (sign-aligned with
    /// the site basis), `L_knots x L`.
    pub knot_vectors: DMatrix<f64>,
    /// Matching knot eigenvalues.
    pub knot_lambda: Vec<f64>,
    /// Column means of the knot kernel with unit diagonal.
    row_correction: Vec<f64>,
    /// `knot_vectors * diag(1 / (knot_lambda + 1))`.
    projection: DMatrix<f64>,
}

/// Retained eigenpairs `(E, lambda)` of the Moran operator, descending.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasis {
    /// `N x L` eigenvectors, each column sign-normalized so that its entry of
    /// largest magnitude is positive.
    pub vectors: DMatrix<f64>,
    pub lambda: Vec<f64>,
    /// Kernel range `r`.
    pub range: f64,
    pub kind: BasisKind,
    pub nystrom: Option<NystromFactors>,
}

impl EigenBasis {
    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    pub fn n_sites(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn knots(&self) -> Option<&KnotSet> {
        self.nystrom.as_ref().map(|f| &f.knots)
    }
}

/// `H C H` with `H = I - 11'/N`.
fn double_center(c: &DMatrix<f64>) -> DMatrix<f64> {
    let n = c.nrows();
    let nf = n as f64;
    let row_means: Vec<f64> = c.row_iter().map(|r| r.sum() / nf).collect();
    let col_means: Vec<f64> = c.column_iter().map(|col| col.sum() / nf).collect();
    let grand = row_means.iter().sum::<f64>() / nf;
    DMatrix::from_fn(n, n, |i, j| c[(i, j)] - row_means[i] - col_means[j] + grand)
}

/// Eigenpairs of `H C H` on the complement of the constant vector, which
/// `H` annihilates. A Householder reflection maps `1 / sqrt(n)` to the first
/// axis, so the remaining `n - 1` pairs come from the trailing block.
fn centered_eigen(c: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = c.nrows();
    if n < 2 {
        return (Vec::new(), DMatrix::zeros(n, 0));
    }
    let mut w = DVector::from_element(n, 1.0 / libm::sqrt(n as f64));
    w[0] -= 1.0;
    let scale = 2.0 / w.norm_squared();
    // H C H with H = I - scale w w'
    let cw = c * &w;
    let wcw = w.dot(&cw);
    let reflected = DMatrix::from_fn(n, n, |i, j| {
        c[(i, j)] - scale * (w[i] * cw[j] + cw[i] * w[j]) + scale * scale * wcw * w[i] * w[j]
    });
    let (values, inner) = sym_eigen_desc(reflected.view((1, 1), (n - 1, n - 1)).into_owned());
    let mut vectors = DMatrix::zeros(n, n - 1);
    vectors.rows_mut(1, n - 1).copy_from(&inner);
    for mut col in vectors.column_iter_mut() {
        let t = scale * w.dot(&col);
        col.axpy(-t, &w, 1.0);
    }
    (values, vectors)
}

/// Number of leading eigenvalues that are positive under [`POSITIVE_TOL`],
/// capped at `cap`.
fn retained_count(values: &[f64], cap: usize) -> usize {
    let max = values.first().copied().unwrap_or(0.0);
    if !(max > 0.0) {
        return 0;
    }
    values.iter().take_while(|&&v| v > POSITIVE_TOL * max).count().min(cap)
}

/// Exact Moran eigenbasis, limited to [`EXACT_SIZE_GUARD`] sites.
pub fn exact_basis(coords: &CoordinateSet, r: f64) -> Result<EigenBasis> {
    exact_basis_with_guard(coords, r, EXACT_SIZE_GUARD)
}

pub fn exact_basis_with_guard(coords: &CoordinateSet, r: f64, guard: usize) -> Result<EigenBasis> {
    let n = coords.len();
    if n > guard {
        return Err(Error::SizeGuardExceeded { size: n, limit: guard });
    }
    let c = proximity(coords, coords, r, DiagonalPolicy::Zero)?;
    let (values, vectors) = sym_eigen_desc(double_center(&c.entries));
    let keep = retained_count(&values, MAX_RANK);
    if keep == 0 {
        return Err(Error::DegenerateKernel);
    }
    let mut e = vectors.columns(0, keep).into_owned();
    normalize_signs(&mut e);
    Ok(EigenBasis { vectors: e, lambda: values[..keep].to_vec(), range: r, kind: BasisKind::Exact, nystrom: None })
}

/// Nyström approximation of the Moran eigenbasis from `knots`, keeping at
/// most [`MAX_RANK`] positive eigenpairs.
pub fn nystrom_basis(coords: &CoordinateSet, knots: &KnotSet, r: f64) -> Result<EigenBasis> {
    nystrom_basis_with_cap(coords, knots, r, MAX_RANK)
}

/// As [`nystrom_basis`] with an explicit rank cap (the large-sample data
/// generator keeps every positive pair).
pub fn nystrom_basis_with_cap(coords: &CoordinateSet, knots: &KnotSet, r: f64, cap: usize) -> Result<EigenBasis> {
    let lk = knots.len();
    if lk == 0 {
        return Err(Error::InvalidKnotCount { requested: 0, available: coords.len() });
    }
    if lk > MAX_KNOTS {
        return Err(Error::SizeGuardExceeded { size: lk, limit: MAX_KNOTS });
    }
    let knot_coords = knots.coordinates();
    let c_l = proximity(&knot_coords, &knot_coords, r, DiagonalPolicy::Zero)?.entries;
    let (knot_values, knot_vectors) = centered_eigen(&c_l);

    let n = coords.len() as f64;
    let lkf = lk as f64;
    let approx_all: Vec<f64> = knot_values.iter().map(|&v| ((lkf + n) / lkf) * (v + 1.0) - 1.0).collect();
    let keep = retained_count(&approx_all, cap);
    if keep == 0 {
        return Err(Error::DegenerateKernel);
    }
    if let Some(&bad) = knot_values[..keep].iter().find(|&&v| !(v + 1.0 > 0.0)) {
        return Err(Error::SingularCorrection(bad));
    }
    let approx = approx_all[..keep].to_vec();

    let row_correction: Vec<f64> = (0..lk).map(|j| (c_l.column(j).sum() + 1.0) / lkf).collect();
    let mut knot_vectors = knot_vectors.columns(0, keep).into_owned();
    let mut projection = knot_vectors.clone();
    for (l, mut col) in projection.column_iter_mut().enumerate() {
        col /= knot_values[l] + 1.0;
    }
    let knot_lambda = knot_values[..keep].to_vec();

    let mut factors =
        NystromFactors { knots: knots.clone(), knot_vectors: knot_vectors.clone(), knot_lambda, row_correction, projection };
    let mut vectors = nystrom_rows(&factors, coords, r);
    let signs = normalize_signs(&mut vectors);
    // negation is exact, so flipping the projection reproduces the flipped rows bit for bit
    for (l, &s) in signs.iter().enumerate() {
        if s < 0.0 {
            factors.projection.column_mut(l).neg_mut();
            knot_vectors.column_mut(l).neg_mut();
        }
    }
    factors.knot_vectors = knot_vectors;

    Ok(EigenBasis {
        vectors,
        lambda: approx,
        range: r,
        kind: BasisKind::Nystrom,
        nystrom: Some(factors),
    })
}

/// `[C_NL - 1 (x) correction] * projection`, accumulated in row chunks so the
/// `N x L_knots` kernel is never held in full.
fn nystrom_rows(f: &NystromFactors, coords: &CoordinateSet, r: f64) -> DMatrix<f64> {
    let n = coords.len();
    let centers = &f.knots.centers;
    let lk = centers.len();
    let l = f.projection.ncols();
    let mut out = DMatrix::zeros(n, l);
    let pts = coords.points();
    let mut start = 0;
    while start < n {
        let rows = ROW_CHUNK.min(n - start);
        let block = DMatrix::from_fn(rows, lk, |i, j| libm::exp(-dist(pts[start + i], centers[j]) / r) - f.row_correction[j]);
        out.rows_mut(start, rows).copy_from(&(block * &f.projection));
        start += rows;
    }
    out
}

/// Evaluate a Nyström basis at new sites (same formula, new site-to-knot
/// kernel), restricted to the retained columns.
pub fn basis_at(basis: &EigenBasis, new_coords: &CoordinateSet) -> Result<DMatrix<f64>> {
    match (&basis.kind, &basis.nystrom) {
        (BasisKind::Nystrom, Some(f)) => Ok(nystrom_rows(f, new_coords, basis.range)),
        _ => Err(Error::MissingKnots),
    }
}

/// Moran coefficient of `y` under the square proximity matrix `c`.
pub fn moran_coefficient(y: &[f64], c: &ProximityMatrix) -> Result<f64> {
    let n = y.len();
    let m = &c.entries;
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::DimensionMismatch("proximity matrix must be N x N"));
    }
    let mean = y.iter().sum::<f64>() / n as f64;
    let z = DVector::from_iterator(n, y.iter().map(|v| v - mean));
    let ss = z.dot(&z);
    let scale = y.iter().map(|v| v * v).sum::<f64>();
    if !(ss > 1e-24 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::ConstantVector);
    }
    let total = m.sum();
    Ok((n as f64 / total) * z.dot(&(m * &z)) / ss)
}
