//! Restricted log-likelihood of the M-SVC mixed model.
//!
//! Two interchangeable forms are provided. [`direct_restricted_loglik`]
//! works from the full `N`-row design and is the reference; the production
//! path [`compressed_restricted_loglik`] only touches [`CompressedMoments`].
//! For coefficient `j` with eigenvalues `lambda`, the random-effect scaling is
//! `V_j = rho_j * diag(lambda^(alpha_j / 2))` where `rho_j = tau_j / sigma`.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::compression::{CompressedMoments, SvcDesign};
use crate::eigenbasis::EXACT_SIZE_GUARD;
use crate::error::{Error, Result};
use crate::linalg::{compensated_dot, CompensatedSum, SpdFactor};

/// Relative band below zero inside which a cancelled residual norm is
/// clamped to zero instead of reported.
pub const RESIDUAL_CLAMP: f64 = 1e-6;
/// `d(theta) <= PERFECT_FIT * y'y` is treated as a noiseless fit.
pub const PERFECT_FIT: f64 = 1e-12;

/// Per-varying-coefficient shrinkage parameters, indexed like
/// [`CompressedMoments::varying`]. `rho = 0` means the coefficient has
/// collapsed to a constant.
#[derive(Debug, Clone, PartialEq)]
pub struct ShrinkageParams {
    pub rho: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl ShrinkageParams {
    pub fn uniform(n_varying: usize, rho: f64, alpha: f64) -> Self {
        ShrinkageParams { rho: vec![rho; n_varying], alpha: vec![alpha; n_varying] }
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    pub fn with(&self, j: usize, rho: f64, alpha: f64) -> Self {
        let mut p = self.clone();
        p.rho[j] = rho;
        p.alpha[j] = alpha;
        p
    }

    fn check(&self, n_varying: usize) -> Result<()> {
        if self.rho.len() != n_varying || self.alpha.len() != n_varying {
            return Err(Error::DimensionMismatch("one (rho, alpha) pair per varying coefficient"));
        }
        if self.rho.iter().chain(&self.alpha).any(|v| !v.is_finite()) || self.rho.iter().any(|&r| r < 0.0) {
            return Err(Error::InvalidConfig("rho must be finite and nonnegative, alpha finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodResult {
    pub loglik: f64,
    pub b_hat: DVector<f64>,
    /// One entry per varying coefficient; zero when collapsed.
    pub u_hat: Vec<DVector<f64>>,
    /// `||e||^2 + sum_j ||u_j||^2`
    pub d_theta: f64,
    /// `||e||^2`
    pub residual_ss: f64,
    /// `d_theta / (N - K)`
    pub sigma2_hat: f64,
    pub ln_det_p: f64,
}

/// Diagonal of `V(theta) = rho * Lambda^(alpha / 2)`.
pub fn v_diag(rho: f64, alpha: f64, lambda: &[f64]) -> Result<Vec<f64>> {
    if let Some(&bad) = lambda.iter().find(|&&l| !(l > 0.0)) {
        return Err(Error::NonPositiveEigenvalue(bad));
    }
    if rho == 0.0 {
        return Ok(vec![0.0; lambda.len()]);
    }
    Ok(lambda.iter().map(|&l| rho * libm::pow(l, 0.5 * alpha)).collect())
}

/// Restricted log-likelihood from `ln|P|` and `d(theta)`.
pub(crate) fn restricted_loglik(ln_det_p: f64, d_theta: f64, n: usize, k: usize) -> f64 {
    let dof = (n - k) as f64;
    -0.5 * ln_det_p - 0.5 * dof * (1.0 + libm::log(2.0 * PI * d_theta / dof))
}

pub(crate) fn check_dims(n: usize, k: usize) -> Result<()> {
    if n <= k {
        return Err(Error::InsufficientData { n, k });
    }
    Ok(())
}

pub(crate) fn check_d_theta(d: f64, myy: f64) -> Result<f64> {
    if !(d > PERFECT_FIT * myy) || !(d > 0.0) {
        return Err(Error::PerfectFit);
    }
    Ok(d)
}

pub(crate) fn v_all(params: &ShrinkageParams, lambda: &[f64]) -> Result<Vec<Vec<f64>>> {
    (0..params.len()).map(|j| v_diag(params.rho[j], params.alpha[j], lambda)).collect()
}

/// Assemble `P` and the right-hand side `[m0; V_j m_j ...]` from the moments.
pub(crate) fn assemble_compressed(m: &CompressedMoments, v: &[Vec<f64>]) -> (DMatrix<f64>, DVector<f64>) {
    let all: Vec<usize> = (0..m.n_varying()).collect();
    assemble_subset(m, &all, v)
}

/// `P` and right-hand side restricted to the fixed effects and the random
/// effects of the varying coefficients listed in `active`; `v[i]` scales
/// `active[i]`.
pub(crate) fn assemble_subset(m: &CompressedMoments, active: &[usize], v: &[Vec<f64>]) -> (DMatrix<f64>, DVector<f64>) {
    let (k, l) = (m.k, m.l);
    let n = k + active.len() * l;
    let mut p = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    p.view_mut((0, 0), (k, k)).copy_from(&m.m00);
    rhs.rows_mut(0, k).copy_from(&m.m0);
    for (a, &j) in active.iter().enumerate() {
        let oj = k + a * l;
        let vj = &v[a];
        let block = DMatrix::from_fn(k, l, |r, c| m.m0k[j][(r, c)] * vj[c]);
        p.view_mut((0, oj), (k, l)).copy_from(&block);
        p.view_mut((oj, 0), (l, k)).copy_from(&block.transpose());
        for c in 0..l {
            rhs[oj + c] = vj[c] * m.mk[j][c];
        }
        for (a2, &j2) in active.iter().enumerate().skip(a) {
            let o2 = k + a2 * l;
            let v2 = &v[a2];
            let src = m.mkk(j, j2);
            let mut block = DMatrix::from_fn(l, l, |r, c| src[(r, c)] * (vj[r] * v2[c]));
            if a2 == a {
                for r in 0..l {
                    block[(r, r)] += 1.0;
                }
            } else {
                p.view_mut((o2, oj), (l, l)).copy_from(&block.transpose());
            }
            p.view_mut((oj, o2), (l, l)).copy_from(&block);
        }
    }
    (p, rhs)
}

pub(crate) fn split_solution(c: &DVector<f64>, k: usize, l: usize, kv: usize) -> (DVector<f64>, Vec<DVector<f64>>) {
    let b = c.rows(0, k).into_owned();
    let u = (0..kv).map(|j| c.rows(k + j * l, l).into_owned()).collect();
    (b, u)
}

/// Restricted log-likelihood from the compressed moments only.
///
/// `||e||^2` is evaluated as `m_yy - 2 c'r + c'P_0 c` with compensated
/// accumulation. Slightly negative results from cancellation are clamped to
/// zero; anything below `-RESIDUAL_CLAMP * m_yy` is an error.
pub fn compressed_restricted_loglik(moments: &CompressedMoments, params: &ShrinkageParams) -> Result<LikelihoodResult> {
    let (n, k, l, kv) = (moments.n, moments.k, moments.l, moments.n_varying());
    check_dims(n, k)?;
    params.check(kv)?;
    let v = v_all(params, &moments.lambda)?;
    let (p, rhs) = assemble_compressed(moments, &v);
    let factor = SpdFactor::new_checked(&p).ok_or(Error::SingularP)?;
    let c = factor.solve_vec(&rhs);

    // P_0 c: P c without the identity added on each random-effect block
    let mut p0c = &p * &c;
    for i in k..c.len() {
        p0c[i] -= c[i];
    }
    let mut acc = CompensatedSum::default();
    acc.add(moments.myy);
    acc.add(-2.0 * compensated_dot(c.as_slice(), rhs.as_slice()));
    acc.add(compensated_dot(c.as_slice(), p0c.as_slice()));
    let mut residual_ss = acc.value();
    if residual_ss < 0.0 {
        if residual_ss >= -RESIDUAL_CLAMP * moments.myy {
            residual_ss = 0.0;
        } else {
            return Err(Error::NegativeResidualNorm(residual_ss));
        }
    }

    let (b_hat, u_hat) = split_solution(&c, k, l, kv);
    let u_ss: f64 = u_hat.iter().map(|u| u.norm_squared()).sum();
    let d_theta = check_d_theta(residual_ss + u_ss, moments.myy)?;
    let ln_det_p = factor.ln_det();
    Ok(LikelihoodResult {
        loglik: restricted_loglik(ln_det_p, d_theta, n, k),
        b_hat,
        u_hat,
        d_theta,
        residual_ss,
        sigma2_hat: d_theta / (n - k) as f64,
        ln_det_p,
    })
}

/// Restricted log-likelihood assembled from the full `N`-row design.
///
/// Allocates `N x (K + K_v L)` temporaries, so it shares the exact-basis
/// size guard.
pub fn direct_restricted_loglik(design: &SvcDesign<'_>, params: &ShrinkageParams) -> Result<LikelihoodResult> {
    let (n, k, l) = (design.n(), design.k(), design.l());
    if n > EXACT_SIZE_GUARD {
        return Err(Error::SizeGuardExceeded { size: n, limit: EXACT_SIZE_GUARD });
    }
    check_dims(n, k)?;
    let varying = design.varying();
    let kv = varying.len();
    params.check(kv)?;
    let v = v_all(params, design.lambda)?;

    let width = k + kv * l;
    let mut z = DMatrix::zeros(n, width);
    z.columns_mut(0, k).copy_from(design.x);
    for (j, &cov) in varying.iter().enumerate() {
        let scaled = design.scaled_basis(cov);
        let mut block = z.columns_mut(k + j * l, l);
        for (c, &vc) in v[j].iter().enumerate() {
            block.column_mut(c).copy_from(&(scaled.column(c) * vc));
        }
    }
    let mut p = z.tr_mul(&z);
    for i in k..width {
        p[(i, i)] += 1.0;
    }
    let rhs = z.tr_mul(design.y);
    let factor = SpdFactor::new_checked(&p).ok_or(Error::SingularP)?;
    let c = factor.solve_vec(&rhs);
    let resid = design.y - &z * &c;
    let residual_ss = resid.norm_squared();
    let (b_hat, u_hat) = split_solution(&c, k, l, kv);
    let u_ss: f64 = u_hat.iter().map(|u| u.norm_squared()).sum();
    let d_theta = check_d_theta(residual_ss + u_ss, design.y.norm_squared())?;
    let ln_det_p = factor.ln_det();
    Ok(LikelihoodResult {
        loglik: restricted_loglik(ln_det_p, d_theta, n, k),
        b_hat,
        u_hat,
        d_theta,
        residual_ss,
        sigma2_hat: d_theta / (n - k) as f64,
        ln_det_p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compression::compress;
    use crate::compression::tests::random_fixture;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn v_diag_cases() {
        assert_eq!(v_diag(0.0, 1.3, &[2.0, 5.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(v_diag(1.0, 0.0, &[2.0, 5.0]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(v_diag(1.0, 2.0, &[4.0, 1.0]).unwrap(), vec![4.0, 1.0]);
        assert!(matches!(v_diag(1.0, 1.0, &[1.0, 0.0]), Err(Error::NonPositiveEigenvalue(_))));
    }

    fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> (DVector<f64>, f64) {
        let qr = x.clone().qr();
        let b = qr.r().solve_upper_triangular(&(qr.q().transpose() * y)).unwrap();
        let rss = (y - x * &b).norm_squared();
        (b, rss)
    }

    #[test]
    fn zero_rho_is_ols() {
        let f = random_fixture(50, 3, 6, vec![true, true, false], 11);
        let params = ShrinkageParams::uniform(2, 0.0, 1.0);
        let (b, rss) = ols(&f.x, &f.y);
        let xtx = f.x.tr_mul(&f.x);
        let expected = -0.5 * xtx.determinant().ln() - 0.5 * 47.0 * (1.0 + (2.0 * PI * rss / 47.0).ln());
        for r in [direct_restricted_loglik(&f.design(), &params).unwrap(), compressed_restricted_loglik(&compress(&f.design()).unwrap(), &params).unwrap()] {
            assert!((r.b_hat.clone() - &b).abs().max() < 1e-10);
            assert!(rel(r.d_theta, rss) < 1e-10);
            assert!(rel(r.loglik, expected) < 1e-10);
            assert!(r.u_hat.iter().all(|u| u.iter().all(|&v| v == 0.0)));
            assert!(rel(r.sigma2_hat, rss / 47.0) < 1e-12);
        }
    }

    #[test]
    fn noiseless_fit_is_rejected() {
        let mut f = random_fixture(20, 1, 3, vec![true], 12);
        f.y.fill(2.5);
        let params = ShrinkageParams::uniform(1, 0.0, 1.0);
        assert_eq!(direct_restricted_loglik(&f.design(), &params), Err(Error::PerfectFit));
        assert_eq!(compressed_restricted_loglik(&compress(&f.design()).unwrap(), &params), Err(Error::PerfectFit));
    }

    #[test]
    fn too_few_rows() {
        let f = random_fixture(3, 3, 2, vec![true, true, true], 13);
        let params = ShrinkageParams::uniform(3, 1.0, 1.0);
        assert_eq!(direct_restricted_loglik(&f.design(), &params), Err(Error::InsufficientData { n: 3, k: 3 }));
    }

    #[test]
    fn parameter_count_checked() {
        let f = random_fixture(20, 2, 3, vec![true, true], 14);
        let m = compress(&f.design()).unwrap();
        assert!(matches!(compressed_restricted_loglik(&m, &ShrinkageParams::uniform(1, 1.0, 1.0)), Err(Error::DimensionMismatch(_))));
        assert!(matches!(compressed_restricted_loglik(&m, &ShrinkageParams::uniform(2, -1.0, 1.0)), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn fixed_instance_cross_form() {
        let f = random_fixture(60, 2, 8, vec![true, true], 15);
        let params = ShrinkageParams { rho: vec![0.7, 1.9], alpha: vec![0.5, 2.5] };
        let d = direct_restricted_loglik(&f.design(), &params).unwrap();
        let c = compressed_restricted_loglik(&compress(&f.design()).unwrap(), &params).unwrap();
        assert!(rel(d.loglik, c.loglik) < 1e-8);
        assert!(rel(d.residual_ss, c.residual_ss) < 1e-8);
        assert!((d.b_hat - c.b_hat).abs().max() < 1e-8);
    }

    #[test]
    fn shrinks_toward_constant() {
        let f = random_fixture(60, 2, 8, vec![true, true], 16);
        let m = compress(&f.design()).unwrap();
        let mut last = f64::INFINITY;
        for rho in [1.0, 1e-1, 1e-2, 1e-3, 1e-5] {
            let r = compressed_restricted_loglik(&m, &ShrinkageParams { rho: vec![1.0, rho], alpha: vec![1.0, 1.0] }).unwrap();
            let n = r.u_hat[1].norm() * rho;
            assert!(n < last);
            last = n;
        }
        assert!(last < 1e-8);
    }

    #[test]
    fn system_matrix_is_symmetric() {
        let f = random_fixture(30, 3, 5, vec![true, true, true], 17);
        let m = compress(&f.design()).unwrap();
        let v: Vec<Vec<f64>> = (0..3).map(|j| v_diag(0.3 + j as f64, 1.0, &m.lambda).unwrap()).collect();
        let (p, _) = assemble_compressed(&m, &v);
        assert_eq!(p, p.transpose());
        assert!(SpdFactor::new(&p.view((3, 3), (15, 15)).into_owned()).is_some());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn direct_and_compressed_agree(
            seed in 0u64..10_000,
            n in 20usize..100,
            k in 1usize..5,
            l in 2usize..13,
            rho in proptest::collection::vec(0.0f64..5.0, 4),
            alpha in proptest::collection::vec(0.0f64..4.0, 4),
        ) {
            let flags: Vec<bool> = (0..k).map(|i| i == 0 || (seed >> i) & 1 == 1).collect();
            let f = random_fixture(n, k, l, flags, seed);
            let kv = f.flags.iter().filter(|&&b| b).count();
            let params = ShrinkageParams { rho: rho[..kv].to_vec(), alpha: alpha[..kv].to_vec() };
            let d = direct_restricted_loglik(&f.design(), &params).unwrap();
            let c = compressed_restricted_loglik(&compress(&f.design()).unwrap(), &params).unwrap();
            prop_assert!((d.loglik - c.loglik).abs() <= 1e-8 * (1.0 + d.loglik.abs()));
            prop_assert!((d.b_hat - c.b_hat).abs().max() < 1e-8);
            for (a, b) in d.u_hat.iter().zip(&c.u_hat) {
                prop_assert!((a - b).abs().max() < 1e-8);
            }
            // compressed residual norm against the explicit residual
            prop_assert!((d.residual_ss - c.residual_ss).abs() <= 1e-8 * (1.0 + d.residual_ss));
            prop_assert!((d.sigma2_hat - d.d_theta / (n - k) as f64).abs() < 1e-14 * d.d_theta);
        }
    }
}
