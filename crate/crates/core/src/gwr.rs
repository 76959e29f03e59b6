//! Geographically weighted regression with an exponential kernel, the
//! baseline the M-SVC estimator is compared against.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::dist;
use crate::linalg::SpdFactor;
use crate::model::SpatialDataset;

/// Largest sample handled; every bandwidth costs `O(N^2 K^2)`.
pub const GWR_SIZE_GUARD: usize = 20_000;

#[derive(Debug, Clone, PartialEq)]
pub struct GwrFit {
    pub bandwidth: f64,
    pub beta_surfaces: DMatrix<f64>,
    /// Mean squared leave-one-out prediction error at `bandwidth`.
    pub cv_score: f64,
}

/// Log-spaced candidate bandwidths scanned before golden-section refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthGrid {
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
    /// Golden-section iterations after the scan.
    pub refine_iters: usize,
}

impl BandwidthGrid {
    /// From 1/200 to 10 times the diagonal of the bounding box of the sites.
    pub fn for_dataset(dataset: &SpatialDataset) -> Self {
        let extent = extent(dataset);
        BandwidthGrid { lower: extent / 200.0, upper: 10.0 * extent, points: 20, refine_iters: 20 }
    }

    pub fn candidates(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.lower];
        }
        let (a, b) = (libm::log(self.lower), libm::log(self.upper));
        (0..self.points).map(|i| libm::exp(a + (b - a) * i as f64 / (self.points - 1) as f64)).collect()
    }

    fn validate(&self) -> Result<()> {
        if !(self.lower > 0.0 && self.upper >= self.lower && self.upper.is_finite()) || self.points == 0 {
            return Err(Error::InvalidConfig("bandwidth grid must be positive and ordered"));
        }
        Ok(())
    }
}

fn extent(dataset: &SpatialDataset) -> f64 {
    let pts = dataset.coords.points();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in pts {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let e = dist(lo, hi);
    if e > 0.0 {
        e
    } else {
        1.0
    }
}

fn check_size(dataset: &SpatialDataset) -> Result<()> {
    if dataset.n() > GWR_SIZE_GUARD {
        return Err(Error::SizeGuardExceeded { size: dataset.n(), limit: GWR_SIZE_GUARD });
    }
    if dataset.n() <= dataset.k() {
        return Err(Error::InsufficientData { n: dataset.n(), k: dataset.k() });
    }
    Ok(())
}

/// Local weighted least squares at site `i`, optionally without site `i`.
fn local_fit(dataset: &SpatialDataset, i: usize, bandwidth: f64, leave_out: bool) -> Result<DVector<f64>> {
    let (n, k) = (dataset.n(), dataset.k());
    let pts = dataset.coords.points();
    let x = &dataset.x;
    let mut a = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    let mut row = vec![0.0; k];
    for j in 0..n {
        if leave_out && j == i {
            continue;
        }
        let w = libm::exp(-dist(pts[i], pts[j]) / bandwidth);
        if w == 0.0 {
            continue;
        }
        for (c, r) in row.iter_mut().enumerate() {
            *r = x[(j, c)];
        }
        let wy = w * dataset.y[j];
        for c in 0..k {
            let wc = w * row[c];
            rhs[c] += row[c] * wy;
            for c2 in c..k {
                a[(c, c2)] += wc * row[c2];
            }
        }
    }
    for c in 0..k {
        for c2 in 0..c {
            a[(c, c2)] = a[(c2, c)];
        }
    }
    let factor = SpdFactor::new_checked(&a).ok_or(Error::LocalSingularity { site: i })?;
    Ok(factor.solve_vec(&rhs))
}

/// `beta(s_i) = (X' G_i X)^-1 X' G_i y` with `G_i = diag(exp(-d_ij / b))`.
pub fn gwr_fit_at(dataset: &SpatialDataset, bandwidth: f64) -> Result<DMatrix<f64>> {
    check_size(dataset)?;
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::InvalidConfig("bandwidth must be positive"));
    }
    let (n, k) = (dataset.n(), dataset.k());
    let mut beta = DMatrix::zeros(n, k);
    for i in 0..n {
        let b = local_fit(dataset, i, bandwidth, false)?;
        beta.row_mut(i).copy_from(&b.transpose());
    }
    Ok(beta)
}

/// Mean squared leave-one-out prediction error at `bandwidth`.
pub fn gwr_cv_score(dataset: &SpatialDataset, bandwidth: f64) -> Result<f64> {
    check_size(dataset)?;
    let n = dataset.n();
    let mut sum = 0.0;
    for i in 0..n {
        let b = local_fit(dataset, i, bandwidth, true)?;
        let pred = dataset.x.row(i).dot(&b.transpose());
        sum += (dataset.y[i] - pred) * (dataset.y[i] - pred);
    }
    Ok(sum / n as f64)
}

/// Scan the grid, refine around the best candidate by golden-section search
/// in `ln b`, and fit at the winner.
pub fn gwr_select_bandwidth(dataset: &SpatialDataset, grid: &BandwidthGrid) -> Result<GwrFit> {
    check_size(dataset)?;
    grid.validate()?;
    let score = |b: f64| gwr_cv_score(dataset, b).unwrap_or(f64::INFINITY);
    let candidates = grid.candidates();
    let scores: Vec<f64> = candidates.iter().map(|&b| score(b)).collect();
    let (best_idx, &best_score) = scores
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(Error::NoValidBandwidth)?;
    if !best_score.is_finite() {
        return Err(Error::NoValidBandwidth);
    }
    let mut best = (candidates[best_idx], best_score);

    if candidates.len() > 1 && grid.refine_iters > 0 {
        let lo = libm::log(candidates[best_idx.saturating_sub(1)]);
        let hi = libm::log(candidates[(best_idx + 1).min(candidates.len() - 1)]);
        let ratio = 0.5 * (libm::sqrt(5.0) - 1.0);
        let (mut a, mut b) = (lo, hi);
        let mut c = b - ratio * (b - a);
        let mut d = a + ratio * (b - a);
        let mut fc = score(libm::exp(c));
        let mut fd = score(libm::exp(d));
        for _ in 0..grid.refine_iters {
            for (x, f) in [(c, fc), (d, fd)] {
                if f < best.1 {
                    best = (libm::exp(x), f);
                }
            }
            if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - ratio * (b - a);
                fc = score(libm::exp(c));
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + ratio * (b - a);
                fd = score(libm::exp(d));
            }
        }
        for (x, f) in [(c, fc), (d, fd)] {
            if f < best.1 {
                best = (libm::exp(x), f);
            }
        }
    }

    let beta_surfaces = gwr_fit_at(dataset, best.0)?;
    Ok(GwrFit { bandwidth: best.0, beta_surfaces, cv_score: best.1 })
}
