//! End-to-end estimation: range and basis, compression, sequential fit and
//! coefficient surfaces.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::compression::{compress, SvcDesign};
use crate::eigenbasis::{exact_basis, nystrom_basis, EigenBasis, MAX_RANK};
use crate::error::{Error, Result};
use crate::geometry::{kmeans_knots, mst_max_edge, mst_max_edge_subsampled, CoordinateSet, MST_SUBSAMPLE_LIMIT};
use crate::likelihood::{v_diag, ShrinkageParams};
use crate::linalg::all_finite;
use crate::sequential::{fit_sequential, FitTrace, SequentialOptions};

/// Sites, response and covariates. Column 0 of `x` is the constant 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialDataset {
    pub coords: CoordinateSet,
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub svc_flags: Vec<bool>,
}

impl SpatialDataset {
    pub fn new(coords: CoordinateSet, x: DMatrix<f64>, y: DVector<f64>, svc_flags: Vec<bool>) -> Result<Self> {
        if x.nrows() != coords.len() || y.len() != coords.len() {
            return Err(Error::DimensionMismatch("coordinates, covariates and response must have N rows"));
        }
        if svc_flags.len() != x.ncols() || x.ncols() == 0 {
            return Err(Error::DimensionMismatch("one varying flag per covariate"));
        }
        if x.column(0).iter().any(|&v| v != 1.0) {
            return Err(Error::InvalidConfig("the first covariate must be the constant 1"));
        }
        if !all_finite(x.iter()) {
            return Err(Error::NonFiniteInput("covariates"));
        }
        if !all_finite(y.iter()) {
            return Err(Error::NonFiniteInput("response"));
        }
        Ok(SpatialDataset { coords, y, x, svc_flags })
    }

    /// All covariates varying, the default of the M-SVC model.
    pub fn all_varying(coords: CoordinateSet, x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let flags = alloc::vec![true; x.ncols()];
        Self::new(coords, x, y, flags)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisChoice {
    /// Exact when `N <= AUTO_EXACT_LIMIT`, Nyström otherwise.
    Auto,
    Exact,
    Nystrom,
}

pub const AUTO_EXACT_LIMIT: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Nyström knots; `min(200, N)` when unset.
    pub knot_count: Option<usize>,
    pub basis: BasisChoice,
    /// Kernel range; the longest minimum spanning tree edge when unset.
    pub range: Option<f64>,
    /// Compute the spanning tree on a random subsample when `N` exceeds
    /// [`MST_SUBSAMPLE_LIMIT`].
    pub subsample_mst: bool,
    pub seed: u64,
    /// Replaces the dataset's flags when set.
    pub svc_flags: Option<Vec<bool>>,
    pub initial_rho: f64,
    pub initial_alpha: f64,
    pub sequential: SequentialOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            knot_count: None,
            basis: BasisChoice::Auto,
            range: None,
            subsample_mst: false,
            seed: 0,
            svc_flags: None,
            initial_rho: 0.5,
            initial_alpha: 1.0,
            sequential: SequentialOptions::default(),
        }
    }
}

impl FitOptions {
    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.sequential.alpha_bounds;
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidConfig("alpha bounds must satisfy min <= max"));
        }
        let (lo, hi) = self.sequential.rho_bounds;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::InvalidConfig("rho bounds must satisfy 0 < min < max"));
        }
        if self.knot_count == Some(0) || self.sequential.max_sweeps == 0 || self.sequential.budget == 0 {
            return Err(Error::InvalidConfig("counts must be positive"));
        }
        if !(self.sequential.tol >= 0.0) {
            return Err(Error::InvalidConfig("tolerance must be nonnegative"));
        }
        if !(self.initial_rho > 0.0) || !self.initial_alpha.is_finite() {
            return Err(Error::InvalidConfig("initial rho must be positive"));
        }
        if let Some(r) = self.range {
            if !(r > 0.0) || !r.is_finite() {
                return Err(Error::NonPositiveRange(r));
            }
        }
        Ok(())
    }
}

/// Pipeline stages reported to the observer passed to [`fit_observed`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Range, knots and eigenbasis.
    Basis,
    Compress,
    /// Sequential likelihood maximization.
    Estimate,
    Reconstruct,
    Done,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvcFit {
    pub b_hat: DVector<f64>,
    /// Indexed like `params`, one per varying covariate.
    pub u_hat: Vec<DVector<f64>>,
    pub params: ShrinkageParams,
    pub svc_flags: Vec<bool>,
    pub sigma2_hat: f64,
    pub d_theta: f64,
    pub loglik: f64,
    pub basis: EigenBasis,
    /// `N x K` coefficient surfaces.
    pub beta_surfaces: DMatrix<f64>,
    pub trace: FitTrace,
}

impl SvcFit {
    /// Covariate indices of the varying coefficients.
    pub fn varying(&self) -> Vec<usize> {
        self.svc_flags.iter().enumerate().filter(|(_, &f)| f).map(|(i, _)| i).collect()
    }
}

pub fn fit(dataset: &SpatialDataset, options: &FitOptions) -> Result<SvcFit> {
    fit_observed(dataset, options, &mut |_| {})
}

/// [`fit`], calling `observer` as each stage starts and once at the end.
pub fn fit_observed(dataset: &SpatialDataset, options: &FitOptions, observer: &mut dyn FnMut(Stage)) -> Result<SvcFit> {
    options.validate()?;
    let (n, k) = (dataset.n(), dataset.k());
    if n <= k {
        return Err(Error::InsufficientData { n, k });
    }
    let flags = options.svc_flags.clone().unwrap_or_else(|| dataset.svc_flags.clone());
    if flags.len() != k {
        return Err(Error::DimensionMismatch("one varying flag per covariate"));
    }
    if !flags.iter().any(|&f| f) {
        return Err(Error::InvalidConfig("at least one coefficient must vary"));
    }

    observer(Stage::Basis);
    let basis = build_basis(&dataset.coords, options)?;

    observer(Stage::Compress);
    let design = SvcDesign::new(&dataset.x, &flags, &basis.vectors, &basis.lambda, &dataset.y)?;
    let moments = compress(&design)?;

    observer(Stage::Estimate);
    let init = ShrinkageParams::uniform(moments.n_varying(), options.initial_rho, options.initial_alpha);
    let (params, result, trace) = fit_sequential(&moments, &init, &options.sequential)?;

    observer(Stage::Reconstruct);
    let beta_surfaces = reconstruct_svc(&basis, &result.b_hat, &flags, &params, &result.u_hat)?;
    observer(Stage::Done);

    Ok(SvcFit {
        b_hat: result.b_hat,
        u_hat: result.u_hat,
        params,
        svc_flags: flags,
        sigma2_hat: result.sigma2_hat,
        d_theta: result.d_theta,
        loglik: result.loglik,
        basis,
        beta_surfaces,
        trace,
    })
}

/// Kernel range, knots and eigenbasis as configured.
pub fn build_basis(coords: &CoordinateSet, options: &FitOptions) -> Result<EigenBasis> {
    let n = coords.len();
    let r = match options.range {
        Some(r) => r,
        None if options.subsample_mst && n > MST_SUBSAMPLE_LIMIT => mst_max_edge_subsampled(coords, MST_SUBSAMPLE_LIMIT, options.seed)?,
        None => mst_max_edge(coords)?,
    };
    let exact = match options.basis {
        BasisChoice::Auto => n <= AUTO_EXACT_LIMIT,
        BasisChoice::Exact => true,
        BasisChoice::Nystrom => false,
    };
    if exact {
        exact_basis(coords, r)
    } else {
        let count = options.knot_count.unwrap_or(MAX_RANK.min(n));
        let knots = kmeans_knots(coords, count, options.seed)?;
        nystrom_basis(coords, &knots, r)
    }
}

/// `beta_k = b_k 1 + E diag(V_k) u_k` for varying `k`, `b_k 1` otherwise.
pub fn reconstruct_svc(
    basis: &EigenBasis,
    b_hat: &DVector<f64>,
    svc_flags: &[bool],
    params: &ShrinkageParams,
    u_hat: &[DVector<f64>],
) -> Result<DMatrix<f64>> {
    let (n, l, k) = (basis.n_sites(), basis.rank(), b_hat.len());
    let kv = svc_flags.iter().filter(|&&f| f).count();
    if svc_flags.len() != k || params.len() != kv || u_hat.len() != kv || u_hat.iter().any(|u| u.len() != l) {
        return Err(Error::DimensionMismatch("coefficients, flags and random effects disagree"));
    }
    let mut beta = DMatrix::zeros(n, k);
    let mut j = 0;
    for (c, &varying) in svc_flags.iter().enumerate() {
        let mut col = beta.column_mut(c);
        col.fill(b_hat[c]);
        if varying {
            if params.rho[j] > 0.0 {
                let v = v_diag(params.rho[j], params.alpha[j], &basis.lambda)?;
                let gamma = DVector::from_fn(l, |a, _| v[a] * u_hat[j][a]);
                col += &basis.vectors * gamma;
            }
            j += 1;
        }
    }
    Ok(beta)
}

/// `d(theta) / (N - K)` at the fitted parameters.
pub fn residual_variance(fit: &SvcFit) -> f64 {
    fit.sigma2_hat
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::compressed_restricted_loglik;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn dataset(n: usize, seed: u64, surface: impl Fn(f64, f64) -> f64) -> SpatialDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
        let pts: Vec<[f64; 2]> = (0..n).map(|_| [draw(), draw()]).collect();
        let x = DMatrix::from_fn(n, 2, |_, c| if c == 0 { 1.0 } else { draw() });
        let y = DVector::from_fn(n, |i, _| 1.0 + surface(pts[i][0], pts[i][1]) * x[(i, 1)] + 0.5 * draw());
        SpatialDataset::all_varying(CoordinateSet::new(pts).unwrap(), x, y).unwrap()
    }

    #[test]
    fn recovers_smooth_surface() {
        let d = dataset(300, 1, |a, b| 2.0 + a + 0.5 * b);
        let fit = fit(&d, &FitOptions::default()).unwrap();
        let truth: Vec<f64> = d.coords.points().iter().map(|p| 2.0 + p[0] + 0.5 * p[1]).collect();
        let est: Vec<f64> = fit.beta_surfaces.column(1).iter().copied().collect();
        let err = truth.iter().zip(&est).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 300.0;
        assert!(err.sqrt() < 0.35, "rmse {}", err.sqrt());
        assert_eq!(fit.basis.kind, crate::eigenbasis::BasisKind::Exact);
    }

    #[test]
    fn constant_coefficients_collapse_to_ols() {
        let mut d = dataset(200, 2, |_, _| 1.5);
        // remove every component of the noise the basis could explain
        let basis = build_basis(&d.coords, &FitOptions::default()).unwrap();
        let l = basis.rank();
        let z = DMatrix::from_fn(200, 2 + 2 * l, |i, c| match c {
            0 | 1 => d.x[(i, c)],
            c if c < 2 + l => basis.vectors[(i, c - 2)],
            c => d.x[(i, 1)] * basis.vectors[(i, c - 2 - l)],
        });
        let signal = &d.x * DVector::from_vec(vec![1.0, 1.5]);
        let noise = &d.y - &signal;
        let proj = &z * z.clone().pseudo_inverse(1e-10).unwrap();
        d.y = &signal + &noise - proj * &noise;

        let fit = fit(&d, &FitOptions::default()).unwrap();
        assert!(fit.params.rho.iter().all(|&r| r == 0.0));
        let qr = d.x.clone().qr();
        let ols = qr.r().solve_upper_triangular(&(qr.q().transpose() * &d.y)).unwrap();
        assert!((fit.b_hat.clone() - ols).abs().max() < 1e-4);
    }

    #[test]
    fn deterministic_and_self_consistent() {
        let d = dataset(150, 3, |a, _| a);
        let opts = FitOptions { basis: BasisChoice::Nystrom, knot_count: Some(60), seed: 9, ..Default::default() };
        let a = fit(&d, &opts).unwrap();
        let b = fit(&d, &opts).unwrap();
        assert_eq!(a, b);
        let flags = a.svc_flags.clone();
        let design = SvcDesign::new(&d.x, &flags, &a.basis.vectors, &a.basis.lambda, &d.y).unwrap();
        let check = compressed_restricted_loglik(&compress(&design).unwrap(), &a.params).unwrap();
        assert!((check.loglik - a.loglik).abs() <= 1e-10 * (1.0 + a.loglik.abs()));
        assert_eq!(residual_variance(&a), a.d_theta / 148.0);
    }

    #[test]
    fn surfaces_and_flags() {
        let d = dataset(120, 4, |a, b| a * b);
        let opts = FitOptions { svc_flags: Some(vec![true, false]), ..Default::default() };
        let fit = fit(&d, &opts).unwrap();
        assert!(fit.beta_surfaces.column(1).iter().all(|&v| v == fit.b_hat[1]));
        let mean = fit.beta_surfaces.column(0).mean();
        assert!((mean - fit.b_hat[0]).abs() < 1e-12 * (1.0 + fit.b_hat[0].abs()));
    }

    #[test]
    fn reconstruct_edge_cases() {
        let d = dataset(40, 5, |a, _| a);
        let basis = build_basis(&d.coords, &FitOptions::default()).unwrap();
        let l = basis.rank();
        let b = DVector::from_vec(vec![0.3, -2.0]);
        let flags = [true, true];
        let params = ShrinkageParams { rho: vec![1.0, 0.0], alpha: vec![1.0, 1.0] };
        let zero_u = vec![DVector::zeros(l); 2];
        let beta = reconstruct_svc(&basis, &b, &flags, &params, &zero_u).unwrap();
        assert!(beta.column(0).iter().all(|&v| v == 0.3));
        let u = vec![DVector::from_element(l, 1.0); 2];
        let beta = reconstruct_svc(&basis, &b, &flags, &params, &u).unwrap();
        assert!(beta.column(1).iter().all(|&v| v == -2.0));
        assert!((beta.column(0).mean() - 0.3).abs() < 1e-12);
        assert!(matches!(reconstruct_svc(&basis, &b, &[true], &params, &u), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn stages_reported_in_order() {
        let d = dataset(60, 6, |a, _| a);
        let mut seen = Vec::new();
        fit_observed(&d, &FitOptions::default(), &mut |s| seen.push(s)).unwrap();
        assert_eq!(seen, vec![Stage::Basis, Stage::Compress, Stage::Estimate, Stage::Reconstruct, Stage::Done]);
    }

    #[test]
    fn input_validation() {
        let d = dataset(2, 7, |a, _| a);
        assert_eq!(fit(&d, &FitOptions::default()), Err(Error::InsufficientData { n: 2, k: 2 }));
        let d = dataset(30, 8, |a, _| a);
        let opts = FitOptions { svc_flags: Some(vec![false, false]), ..Default::default() };
        assert!(matches!(fit(&d, &opts), Err(Error::InvalidConfig(_))));
        let opts = FitOptions { range: Some(-1.0), ..Default::default() };
        assert!(matches!(fit(&d, &opts), Err(Error::NonPositiveRange(_))));
        let bad_x = DMatrix::from_element(30, 2, 2.0);
        assert!(matches!(SpatialDataset::all_varying(d.coords.clone(), bad_x, d.y.clone()), Err(Error::InvalidConfig(_))));
    }
}
