//! Synthetic data generators and accuracy metrics for Monte Carlo studies.
//!
//! Both generators draw coordinates and covariates from standard normals,
//! set `x_1 = 1`, and add noise with variance `noise_share` times the sample
//! variance of the realized signal `sum_k x_k o beta_k`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::eigenbasis::{nystrom_basis_with_cap, EXACT_SIZE_GUARD, MAX_KNOTS};
use crate::error::{Error, Result};
use crate::geometry::{kmeans_knots, proximity, CoordinateSet, DiagonalPolicy};
use crate::model::SpatialDataset;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Generator {
    /// Coefficients are a row-standardized exponential moving average of
    /// white noise.
    Small {
        /// Zero the kernel diagonal before row standardization.
        zero_diagonal: bool,
    },
    /// Coefficients are drawn in a Nyström Moran eigenbasis with
    /// eigenvalue-power variances.
    Large { knot_count: usize },
}

pub const DEFAULT_GENERATOR_KNOTS: usize = MAX_KNOTS;
pub const LARGE_SCALE_ALPHA: f64 = 2.0;
pub const SMALL_SCALE_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub generator: Generator,
    /// Per-coefficient scale exponents for the large generator. When unset
    /// the first `ceil(K/2)` get [`LARGE_SCALE_ALPHA`], the rest
    /// [`SMALL_SCALE_ALPHA`].
    pub alphas: Option<Vec<f64>>,
    /// Noise variance over signal variance.
    pub noise_share: f64,
}

impl SimConfig {
    pub fn small(n: usize, k: usize, seed: u64) -> Self {
        SimConfig { n, k, seed, generator: Generator::Small { zero_diagonal: false }, alphas: None, noise_share: 0.3 }
    }

    pub fn large(n: usize, k: usize, seed: u64) -> Self {
        SimConfig {
            n,
            k,
            seed,
            generator: Generator::Large { knot_count: DEFAULT_GENERATOR_KNOTS },
            alphas: None,
            noise_share: 0.3,
        }
    }

    pub fn with_knots(mut self, knot_count: usize) -> Self {
        self.generator = Generator::Large { knot_count };
        self
    }

    /// Scale exponents used by the large generator.
    pub fn resolved_alphas(&self) -> Vec<f64> {
        self.alphas.clone().unwrap_or_else(|| default_alphas(self.k))
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n < self.k + 1 {
            return Err(Error::InsufficientData { n: self.n, k: self.k });
        }
        if !(self.noise_share >= 0.0) || !self.noise_share.is_finite() {
            return Err(Error::InvalidConfig("noise share must be nonnegative"));
        }
        if let Some(a) = &self.alphas {
            if a.len() != self.k || a.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig("one finite alpha per coefficient"));
            }
        }
        Ok(())
    }
}

pub fn default_alphas(k: usize) -> Vec<f64> {
    let large = k.div_ceil(2);
    (0..k).map(|c| if c < large { LARGE_SCALE_ALPHA } else { SMALL_SCALE_ALPHA }).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimInstance {
    pub dataset: SpatialDataset,
    /// `N x K`
    pub true_beta: DMatrix<f64>,
    pub true_sigma2: f64,
    /// `sum_k x_k o beta_k`
    pub signal: DVector<f64>,
    /// Scale exponents (large generator only).
    pub alphas: Option<Vec<f64>>,
    /// Eigenpairs used to draw the coefficients (large generator only).
    pub generator_rank: Option<usize>,
}

impl SimInstance {
    /// `1 - ||y - signal||^2 / ||y - mean(y)||^2`
    pub fn realized_r2(&self) -> f64 {
        let y = &self.dataset.y;
        let mean = y.mean();
        let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
        let ss_res = (y - &self.signal).norm_squared();
        1.0 - ss_res / ss_tot
    }
}

pub fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
}

struct Draws {
    rng: ChaCha8Rng,
}

impl Draws {
    fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }
}

fn coords_and_covariates(draws: &mut Draws, n: usize, k: usize) -> Result<(CoordinateSet, DMatrix<f64>)> {
    let pts: Vec<[f64; 2]> = (0..n).map(|_| [draws.normal(), draws.normal()]).collect();
    let mut x = DMatrix::zeros(n, k);
    for c in 1..k {
        for i in 0..n {
            x[(i, c)] = draws.normal();
        }
    }
    x.column_mut(0).fill(1.0);
    Ok((CoordinateSet::new(pts)?, x))
}

fn finish(
    draws: &mut Draws,
    coords: CoordinateSet,
    x: DMatrix<f64>,
    beta: DMatrix<f64>,
    noise_share: f64,
    alphas: Option<Vec<f64>>,
    generator_rank: Option<usize>,
) -> Result<SimInstance> {
    let n = x.nrows();
    let signal = DVector::from_fn(n, |i, _| x.row(i).dot(&beta.row(i)));
    let sigma2 = noise_share * sample_variance(signal.as_slice());
    let sd = libm::sqrt(sigma2);
    let y = DVector::from_fn(n, |i, _| signal[i] + sd * draws.normal());
    let dataset = SpatialDataset::all_varying(coords, x, y)?;
    Ok(SimInstance { dataset, true_beta: beta, true_sigma2: sigma2, signal, alphas, generator_rank })
}

/// Row-standardized `exp(-d)` kernel of the small generator.
pub fn moving_average_kernel(coords: &CoordinateSet, zero_diagonal: bool) -> Result<DMatrix<f64>> {
    let policy = if zero_diagonal { DiagonalPolicy::Zero } else { DiagonalPolicy::Kernel };
    let mut c = proximity(coords, coords, 1.0, policy)?.entries;
    for mut row in c.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    Ok(c)
}

/// `beta_k = 1 + C eps_k` with `C` the row-standardized `exp(-d)` kernel.
pub fn gen_small(config: &SimConfig) -> Result<SimInstance> {
    config.validate()?;
    let Generator::Small { zero_diagonal } = config.generator else {
        return Err(Error::InvalidConfig("configuration is not for the small generator"));
    };
    if config.n > EXACT_SIZE_GUARD {
        return Err(Error::SizeGuardExceeded { size: config.n, limit: EXACT_SIZE_GUARD });
    }
    let (n, k) = (config.n, config.k);
    let mut draws = Draws { rng: ChaCha8Rng::seed_from_u64(config.seed) };
    let (coords, x) = coords_and_covariates(&mut draws, n, k)?;
    let c = moving_average_kernel(&coords, zero_diagonal)?;
    let mut beta = DMatrix::from_element(n, k, 1.0);
    for col in 0..k {
        let eps = DVector::from_fn(n, |_, _| draws.normal());
        let smoothed = &c * eps;
        let mut target = beta.column_mut(col);
        target += smoothed;
    }
    finish(&mut draws, coords, x, beta, config.noise_share, None, None)
}

/// `beta_k = 1 + E gamma_k`, `gamma_k ~ N(0, Lambda^alpha_k)` in a Nyström
/// basis of the unit-range kernel keeping every positive eigenpair.
pub fn gen_large(config: &SimConfig) -> Result<SimInstance> {
    config.validate()?;
    let Generator::Large { knot_count } = config.generator else {
        return Err(Error::InvalidConfig("configuration is not for the large generator"));
    };
    if knot_count > MAX_KNOTS {
        return Err(Error::SizeGuardExceeded { size: knot_count, limit: MAX_KNOTS });
    }
    let (n, k) = (config.n, config.k);
    let alphas = config.resolved_alphas();
    let mut draws = Draws { rng: ChaCha8Rng::seed_from_u64(config.seed) };
    let (coords, x) = coords_and_covariates(&mut draws, n, k)?;
    let knots = kmeans_knots(&coords, knot_count.min(n), config.seed)?;
    let basis = nystrom_basis_with_cap(&coords, &knots, 1.0, MAX_KNOTS)?;
    let l = basis.rank();
    let mut beta = DMatrix::from_element(n, k, 1.0);
    for (col, &alpha) in alphas.iter().enumerate() {
        let gamma = DVector::from_fn(l, |a, _| libm::pow(basis.lambda[a], 0.5 * alpha) * draws.normal());
        let mut target = beta.column_mut(col);
        target += &basis.vectors * gamma;
    }
    finish(&mut draws, coords, x, beta, config.noise_share, Some(alphas), Some(l))
}

pub fn generate(config: &SimConfig) -> Result<SimInstance> {
    match config.generator {
        Generator::Small { .. } => gen_small(config),
        Generator::Large { .. } => gen_large(config),
    }
}

fn check_shapes(truth: &DMatrix<f64>, est: &DMatrix<f64>) -> Result<()> {
    if truth.shape() != est.shape() || truth.is_empty() {
        return Err(Error::ShapeMismatch);
    }
    Ok(())
}

/// Root mean squared error over all sites and replications (columns).
pub fn rmse(truth: &DMatrix<f64>, est: &DMatrix<f64>) -> Result<f64> {
    check_shapes(truth, est)?;
    let ss: f64 = truth.iter().zip(est.iter()).map(|(t, e)| (t - e) * (t - e)).sum();
    Ok(libm::sqrt(ss / truth.len() as f64))
}

/// Mean of `truth - est`.
pub fn bias(truth: &DMatrix<f64>, est: &DMatrix<f64>) -> Result<f64> {
    check_shapes(truth, est)?;
    Ok(truth.iter().zip(est.iter()).map(|(t, e)| t - e).sum::<f64>() / truth.len() as f64)
}

/// Pearson correlation pooled over all entries. Zero when either side is
/// constant.
pub fn corr(truth: &DMatrix<f64>, est: &DMatrix<f64>) -> Result<f64> {
    check_shapes(truth, est)?;
    let n = truth.len() as f64;
    let (mt, me) = (truth.sum() / n, est.sum() / n);
    let (mut stt, mut see, mut ste) = (0.0, 0.0, 0.0);
    for (t, e) in truth.iter().zip(est.iter()) {
        stt += (t - mt) * (t - mt);
        see += (e - me) * (e - me);
        ste += (t - mt) * (e - me);
    }
    if stt == 0.0 || see == 0.0 {
        return Ok(0.0);
    }
    Ok(ste / libm::sqrt(stt * see))
}

/// Convenience wrapper for single columns.
pub fn corr_slices(truth: &[f64], est: &[f64]) -> Result<f64> {
    corr(&DMatrix::from_column_slice(truth.len(), 1, truth), &DMatrix::from_column_slice(est.len(), 1, est))
}
