//! Coordinate ascent over the per-coefficient shrinkage parameters.
//!
//! For a target coefficient `t`, everything that does not depend on
//! `theta_t` is collected once in a [`PerKCache`]. Write the system matrix as
//!
//! ```text
//! P = [ P_f        B V_t           ]
//!     [ V_t B'     V_t M_tt V_t + I ]
//! ```
//!
//! where `P_f` covers the fixed effects and the other active random effects.
//! With `S = M_tt - B' P_f^-1 B` and `g = m_t - B' P_f^-1 r_f`,
//!
//! ```text
//! u_t    = (I + V_t S V_t)^-1 V_t g
//! ln|P|  = ln|P_f| + ln|I + V_t S V_t|
//! d      = d_f - (V_t u_t)' g
//! ```
//!
//! so one evaluation costs a single `L x L` factorization. The same form is
//! exact at `rho_t = 0`, where it reduces to the model without `u_t`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::compression::CompressedMoments;
use crate::error::{Error, Result};
use crate::likelihood::{
    assemble_subset, check_d_theta, check_dims, compressed_restricted_loglik, restricted_loglik, v_diag, LikelihoodResult,
    ShrinkageParams,
};
use crate::linalg::{compensated_dot, symmetrize, CompensatedSum, SpdFactor};
use crate::optim::{minimize, SimplexOptions};

/// Everything the target's likelihood needs that is independent of the
/// target's own parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PerKCache {
    pub target: usize,
    /// Other varying coefficients with nonzero `rho`, in order.
    pub others: Vec<usize>,
    /// `V` diagonals of `others`.
    pub other_scales: Vec<Vec<f64>>,
    /// `P_f^-1 B`
    pub coupling: DMatrix<f64>,
    /// `M_tt - B' P_f^-1 B`, symmetrized
    pub schur: DMatrix<f64>,
    /// `m_t - B' P_f^-1 r_f`
    pub reduced_moment: DVector<f64>,
    /// `P_f^-1 r_f`: fixed effects and other random effects with `u_t = 0`
    pub base_solution: DVector<f64>,
    /// `m_yy - r_f' P_f^-1 r_f`
    pub base_d: f64,
    /// `ln|P_f|`
    pub logdet_fixed: f64,
    pub m_fixed: DVector<f64>,
    pub m_target: DVector<f64>,
}

/// Blocks of the inverse of the unscaled system with the target's identity
/// contribution removed, ordered as (others, target).
#[derive(Debug, Clone, PartialEq)]
pub struct QInverseBlocks {
    pub others_others: DMatrix<f64>,
    pub others_target: DMatrix<f64>,
    pub target_others: DMatrix<f64>,
    pub target_target: DMatrix<f64>,
}

impl PerKCache {
    /// Blocks of `Q^-1` where `Q = [[M_ff + diag(0, V_o^-2)], M~], [M~', M_tt]]`.
    /// Only needed for inspection; evaluation never forms them.
    pub fn q_inverse_blocks(&self, moments: &CompressedMoments) -> Result<QInverseBlocks> {
        let (p_f, _) = assemble_subset(moments, &self.others, &self.other_scales);
        let p_inv = SpdFactor::new(&p_f).ok_or(Error::SingularBlock)?.inverse();
        let scale = self.fixed_scale(moments.k);
        let f = DMatrix::from_fn(self.coupling.nrows(), self.coupling.ncols(), |i, c| scale[i] * self.coupling[(i, c)]);
        let s_inv = SpdFactor::new(&self.schur).ok_or(Error::SingularBlock)?.inverse();
        let q11_inv = DMatrix::from_fn(p_inv.nrows(), p_inv.ncols(), |i, j| scale[i] * p_inv[(i, j)] * scale[j]);
        let others_target = -(&f * &s_inv);
        let mut others_others = q11_inv + &f * &s_inv * f.transpose();
        symmetrize(&mut others_others);
        Ok(QInverseBlocks {
            target_others: others_target.transpose(),
            others_target,
            others_others,
            target_target: s_inv,
        })
    }

    fn fixed_scale(&self, k: usize) -> Vec<f64> {
        let mut d = vec![1.0; k];
        for v in &self.other_scales {
            d.extend_from_slice(v);
        }
        d
    }
}

/// Build the cache for `target` (an index into the varying coefficients).
///
/// Other coefficients with `rho = 0` have collapsed to constants and are
/// left out of the system entirely.
pub fn build_cache(moments: &CompressedMoments, params: &ShrinkageParams, target: usize) -> Result<PerKCache> {
    let (k, l, kv) = (moments.k, moments.l, moments.n_varying());
    if params.rho.len() != kv || params.alpha.len() != kv || target >= kv {
        return Err(Error::DimensionMismatch("target and parameters must index varying coefficients"));
    }
    check_dims(moments.n, k)?;
    let others: Vec<usize> = (0..kv).filter(|&j| j != target && params.rho[j] > 0.0).collect();
    let other_scales = others
        .iter()
        .map(|&j| v_diag(params.rho[j], params.alpha[j], &moments.lambda))
        .collect::<Result<Vec<_>>>()?;

    let (p_f, r_f) = assemble_subset(moments, &others, &other_scales);
    let factor = SpdFactor::new_checked(&p_f).ok_or(Error::SingularBlock)?;

    let n_f = p_f.nrows();
    let mut b = DMatrix::zeros(n_f, l);
    b.view_mut((0, 0), (k, l)).copy_from(&moments.m0k[target]);
    for (a, &j) in others.iter().enumerate() {
        let v = &other_scales[a];
        let src = moments.mkk(j, target);
        b.view_mut((k + a * l, 0), (l, l)).copy_from(&DMatrix::from_fn(l, l, |r, c| v[r] * src[(r, c)]));
    }

    let coupling = factor.solve_mat(&b);
    let mut schur = moments.mkk(target, target) - b.tr_mul(&coupling);
    symmetrize(&mut schur);
    let base_solution = factor.solve_vec(&r_f);
    let m_target = moments.mk[target].clone();
    let reduced_moment = &m_target - b.tr_mul(&base_solution);
    let mut base = CompensatedSum::default();
    base.add(moments.myy);
    base.add(-compensated_dot(r_f.as_slice(), base_solution.as_slice()));

    let mut m_fixed: Vec<f64> = moments.m0.iter().copied().collect();
    for &j in &others {
        m_fixed.extend(moments.mk[j].iter());
    }

    Ok(PerKCache {
        target,
        others,
        other_scales,
        coupling,
        schur,
        reduced_moment,
        base_solution,
        base_d: base.value(),
        logdet_fixed: factor.ln_det(),
        m_fixed: DVector::from_vec(m_fixed),
        m_target,
    })
}

/// Restricted log-likelihood with the target's parameters replaced by
/// `theta = (rho, alpha)`, evaluated from the cache in `O(L^3)`.
pub fn fast_loglik(cache: &PerKCache, theta: (f64, f64), moments: &CompressedMoments, params: &ShrinkageParams) -> Result<LikelihoodResult> {
    let (k, l, kv) = (moments.k, moments.l, moments.n_varying());
    debug_assert!(cache.others.iter().all(|&j| params.rho[j] > 0.0));
    let (rho, alpha) = theta;
    if !(rho >= 0.0) || !rho.is_finite() || !alpha.is_finite() {
        return Err(Error::InvalidConfig("rho must be finite and nonnegative, alpha finite"));
    }
    let v = v_diag(rho, alpha, &moments.lambda)?;
    let s = &cache.schur;
    let inner = DMatrix::from_fn(l, l, |a, c| v[a] * s[(a, c)] * v[c] + if a == c { 1.0 } else { 0.0 });
    let factor = SpdFactor::new(&inner).ok_or(Error::SingularInnerMatrix)?;
    let vg = DVector::from_fn(l, |a, _| v[a] * cache.reduced_moment[a]);
    let u_t = factor.solve_vec(&vg);
    let vu = DVector::from_fn(l, |a, _| v[a] * u_t[a]);
    let c_f = &cache.base_solution - &cache.coupling * &vu;

    let mut d = CompensatedSum::default();
    d.add(cache.base_d);
    d.add(-compensated_dot(vu.as_slice(), cache.reduced_moment.as_slice()));
    let d_theta = check_d_theta(d.value(), moments.myy)?;

    let b_hat = c_f.rows(0, k).into_owned();
    let mut u_hat = vec![DVector::zeros(l); kv];
    for (a, &j) in cache.others.iter().enumerate() {
        u_hat[j] = c_f.rows(k + a * l, l).into_owned();
    }
    u_hat[cache.target] = u_t;
    let u_ss: f64 = u_hat.iter().map(|u| u.norm_squared()).sum();
    let residual_ss = (d_theta - u_ss).max(0.0);
    let ln_det_p = cache.logdet_fixed + factor.ln_det();
    Ok(LikelihoodResult {
        loglik: restricted_loglik(ln_det_p, d_theta, moments.n, k),
        b_hat,
        u_hat,
        d_theta,
        residual_ss,
        sigma2_hat: d_theta / (moments.n - k) as f64,
        ln_det_p,
    })
}

/// Settings of the coordinate ascent.
#[derive(Debug, Clone, PartialEq)]
pub struct SequentialOptions {
    pub alpha_bounds: (f64, f64),
    pub rho_bounds: (f64, f64),
    pub tol: f64,
    pub max_sweeps: usize,
    /// Likelihood evaluations per coordinate step.
    pub budget: usize,
    /// Visiting order of the varying coefficients; ascending when `None`.
    pub order: Option<Vec<usize>>,
}

impl Default for SequentialOptions {
    fn default() -> Self {
        SequentialOptions {
            alpha_bounds: (0.0, 4.0),
            rho_bounds: (1e-6, 1e6),
            tol: 1e-5,
            max_sweeps: 30,
            budget: 120,
            order: None,
        }
    }
}

/// Starting points of each coordinate step besides the incoming value, as
/// `(ln rho, alpha)`.
const FIXED_STARTS: [(f64, f64); 3] = [(-core::f64::consts::LN_10, 0.5), (0.0, 1.0), (0.0, 2.0)];

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub rho: f64,
    pub alpha: f64,
    pub loglik: f64,
    pub evals: usize,
}

/// Maximize the target's likelihood over `(rho, alpha)` within bounds.
///
/// Simplex searches in `(ln rho, alpha)` are started from the incoming value
/// and three fixed points, a sixth of the budget each; the best is refined
/// with the rest. If the optimum sits at the lower `rho` bound, `rho = 0` is
/// tried and kept when it is not worse. The incoming value is returned when
/// nothing beats it.
pub fn optimize_k(
    cache: &PerKCache,
    moments: &CompressedMoments,
    params: &ShrinkageParams,
    target: usize,
    budget: usize,
    opts: &SequentialOptions,
) -> StepResult {
    debug_assert_eq!(cache.target, target);
    let budget = budget.max(1);
    let (lo_rho, hi_rho) = (libm::log(opts.rho_bounds.0), libm::log(opts.rho_bounds.1));
    let lower = [lo_rho, opts.alpha_bounds.0];
    let upper = [hi_rho, opts.alpha_bounds.1];
    let eval = |rho: f64, alpha: f64| fast_loglik(cache, (rho, alpha), moments, params).map(|r| r.loglik).unwrap_or(f64::NEG_INFINITY);

    let (rho0, alpha0) = (params.rho[target], params.alpha[target]);
    let incoming = eval(rho0, alpha0);
    let mut evals = 1;
    let mut best = (rho0, alpha0, incoming);

    let clamp = |x: f64, lo: f64, hi: f64| x.clamp(lo, hi);
    let first = (clamp(libm::log(rho0.max(opts.rho_bounds.0)), lo_rho, hi_rho), clamp(alpha0, lower[1], upper[1]));
    let mut starts = vec![first];
    starts.extend(FIXED_STARTS.iter().copied().filter(|&s| s != first));

    let per_start = (budget / (starts.len() + 2)).max(1);
    let step = [1.0, 0.5];
    let search = |from: (f64, f64), max_evals: usize, evals: &mut usize| {
        let simplex = SimplexOptions { max_evals, f_tol: 1e-9, x_tol: 1e-6 };
        let m = minimize(|x| -eval(libm::exp(x[0]), x[1]), &[from.0, from.1], &step, &lower, &upper, &simplex);
        *evals += m.evals;
        (m.x[0], m.x[1], -m.value)
    };

    let mut found = (first.0, first.1, f64::NEG_INFINITY);
    for &s in &starts {
        let remaining = budget.saturating_sub(evals);
        if remaining == 0 {
            break;
        }
        let r = search(s, per_start.min(remaining), &mut evals);
        if r.2 > found.2 {
            found = r;
        }
    }
    let remaining = budget.saturating_sub(evals);
    if remaining > 0 && found.2 > f64::NEG_INFINITY {
        let r = search((found.0, found.1), remaining, &mut evals);
        if r.2 > found.2 {
            found = r;
        }
    }
    if found.2 > best.2 {
        best = (libm::exp(found.0), found.1, found.2);
    }

    if best.0 > 0.0 && best.0 <= opts.rho_bounds.0 * (1.0 + 1e-6) {
        let collapsed = eval(0.0, best.1);
        evals += 1;
        if collapsed >= best.2 {
            best = (0.0, best.1, collapsed);
        }
    }
    StepResult { rho: best.0, alpha: best.1, loglik: best.2, evals }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    MaxSweeps,
}

/// Record of a sequential fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitTrace {
    pub initial_loglik: f64,
    /// Log-likelihood after each completed sweep.
    pub sweep_loglik: Vec<f64>,
    /// Likelihood evaluations per coordinate step, one row per sweep, indexed
    /// by varying coefficient (zero for frozen coefficients).
    pub evals: Vec<Vec<usize>>,
    pub converged: bool,
    pub reason: StopReason,
}

impl FitTrace {
    pub fn sweeps(&self) -> usize {
        self.sweep_loglik.len()
    }
}

/// Coordinate ascent from `init` until the sweep-over-sweep gain drops below
/// `opts.tol` or `opts.max_sweeps` is reached. Coefficients whose `rho` is 0
/// are frozen as constants. The returned result is recomputed by
/// [`compressed_restricted_loglik`].
pub fn fit_sequential(
    moments: &CompressedMoments,
    init: &ShrinkageParams,
    opts: &SequentialOptions,
) -> Result<(ShrinkageParams, LikelihoodResult, FitTrace)> {
    if opts.max_sweeps == 0 {
        return Err(Error::InvalidConfig("max_sweeps must be at least 1"));
    }
    let kv = moments.n_varying();
    let order: Vec<usize> = match &opts.order {
        Some(o) => {
            if o.len() != kv || (0..kv).any(|j| !o.contains(&j)) {
                return Err(Error::InvalidConfig("sweep order must be a permutation of the varying coefficients"));
            }
            o.clone()
        }
        None => (0..kv).collect(),
    };
    let mut params = init.clone();
    let initial = compressed_restricted_loglik(moments, &params)?;
    let mut trace = FitTrace {
        initial_loglik: initial.loglik,
        sweep_loglik: Vec::new(),
        evals: Vec::new(),
        converged: false,
        reason: StopReason::MaxSweeps,
    };
    let mut previous = initial.loglik;
    for _ in 0..opts.max_sweeps {
        let mut current = previous;
        let mut counts = vec![0; kv];
        for &t in &order {
            if params.rho[t] == 0.0 {
                continue;
            }
            let cache = build_cache(moments, &params, t)?;
            let step = optimize_k(&cache, moments, &params, t, opts.budget, opts);
            counts[t] = step.evals;
            params.rho[t] = step.rho;
            params.alpha[t] = step.alpha;
            current = step.loglik;
        }
        trace.sweep_loglik.push(current);
        trace.evals.push(counts);
        let gain = current - previous;
        previous = current;
        if gain < opts.tol {
            trace.converged = true;
            trace.reason = StopReason::Converged;
            break;
        }
    }
    let result = compressed_restricted_loglik(moments, &params)?;
    Ok((params, result, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compression::compress;
    use crate::compression::tests::{random_fixture, Fixture};
    use crate::likelihood::{assemble_compressed, direct_restricted_loglik};
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / (1.0 + a.abs().max(b.abs()))
    }

    fn instance(seed: u64) -> (Fixture, CompressedMoments) {
        let f = random_fixture(80, 3, 7, vec![true, true, true], seed);
        let m = compress(&f.design()).unwrap();
        (f, m)
    }

    #[test]
    fn three_forms_agree() {
        let (f, m) = instance(21);
        let params = ShrinkageParams { rho: vec![0.8, 0.3, 2.0], alpha: vec![1.5, 0.2, 3.0] };
        for t in 0..3 {
            let cache = build_cache(&m, &params, t).unwrap();
            let theta = (0.6 + t as f64, 0.9);
            let full = params.with(t, theta.0, theta.1);
            let fast = fast_loglik(&cache, theta, &m, &params).unwrap();
            let comp = compressed_restricted_loglik(&m, &full).unwrap();
            let direct = direct_restricted_loglik(&f.design(), &full).unwrap();
            for other in [&comp, &direct] {
                assert!(rel(fast.loglik, other.loglik) < 1e-8);
                assert!(rel(fast.ln_det_p, other.ln_det_p) < 1e-8);
                assert!((fast.b_hat.clone() - &other.b_hat).abs().max() < 1e-8);
                for (a, b) in fast.u_hat.iter().zip(&other.u_hat) {
                    assert!((a - b).abs().max() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn collapsed_target_limit() {
        let (_, m) = instance(22);
        let params = ShrinkageParams { rho: vec![0.8, 0.3, 2.0], alpha: vec![1.5, 0.2, 3.0] };
        let cache = build_cache(&m, &params, 1).unwrap();
        let dropped = compressed_restricted_loglik(&m, &params.with(1, 0.0, 1.0)).unwrap();
        let tiny = fast_loglik(&cache, (1e-8, 1.0), &m, &params).unwrap();
        assert!(rel(tiny.loglik, dropped.loglik) < 1e-6);
        let zero = fast_loglik(&cache, (0.0, 1.0), &m, &params).unwrap();
        assert!(rel(zero.loglik, dropped.loglik) < 1e-10);
        assert!(zero.u_hat[1].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn collapsed_others_are_excluded() {
        let (f, m) = instance(23);
        let params = ShrinkageParams { rho: vec![0.8, 0.0, 2.0], alpha: vec![1.5, 1.0, 3.0] };
        let cache = build_cache(&m, &params, 0).unwrap();
        assert_eq!(cache.others, vec![2]);
        let fast = fast_loglik(&cache, (0.4, 2.0), &m, &params).unwrap();
        let direct = direct_restricted_loglik(&f.design(), &params.with(0, 0.4, 2.0)).unwrap();
        assert!(rel(fast.loglik, direct.loglik) < 1e-8);
    }

    #[test]
    fn single_varying_cache_is_fixed_effects_only() {
        let f = random_fixture(50, 2, 6, vec![true, false], 24);
        let m = compress(&f.design()).unwrap();
        let cache = build_cache(&m, &ShrinkageParams::uniform(1, 0.5, 1.0), 0).unwrap();
        assert!(cache.others.is_empty());
        assert!(rel(cache.logdet_fixed, m.m00.determinant().ln()) < 1e-12);
    }

    #[test]
    fn cache_ignores_target_parameters() {
        let (_, m) = instance(25);
        let params = ShrinkageParams { rho: vec![0.8, 0.3, 2.0], alpha: vec![1.5, 0.2, 3.0] };
        let a = build_cache(&m, &params, 2).unwrap();
        let b = build_cache(&m, &params.with(2, 40.0, 0.0), 2).unwrap();
        assert_eq!(a, b);
        let c = build_cache(&m, &params.with(0, 0.81, 1.5), 2).unwrap();
        assert_ne!(a, c);
    }

    /// Dense `Q` with the target's identity contribution removed, ordered
    /// (fixed, others, target).
    fn dense_q(m: &CompressedMoments, params: &ShrinkageParams, others: &[usize], target: usize) -> DMatrix<f64> {
        let (k, l) = (m.k, m.l);
        let blocks: Vec<usize> = others.iter().copied().chain([target]).collect();
        let n = k + blocks.len() * l;
        let mut q = DMatrix::zeros(n, n);
        q.view_mut((0, 0), (k, k)).copy_from(&m.m00);
        for (a, &j) in blocks.iter().enumerate() {
            q.view_mut((0, k + a * l), (k, l)).copy_from(&m.m0k[j]);
            q.view_mut((k + a * l, 0), (l, k)).copy_from(&m.m0k[j].transpose());
            for (b, &j2) in blocks.iter().enumerate() {
                q.view_mut((k + a * l, k + b * l), (l, l)).copy_from(m.mkk(j, j2));
            }
            if j != target {
                let v = v_diag(params.rho[j], params.alpha[j], &m.lambda).unwrap();
                for c in 0..l {
                    q[(k + a * l + c, k + a * l + c)] += 1.0 / (v[c] * v[c]);
                }
            }
        }
        q
    }

    #[test]
    fn inverse_blocks_match_dense_inverse() {
        let f = random_fixture(90, 2, 6, vec![true, true], 26);
        let m = compress(&f.design()).unwrap();
        let params = ShrinkageParams { rho: vec![1.3, 0.7], alpha: vec![1.0, 0.5] };
        let cache = build_cache(&m, &params, 1).unwrap();
        let blocks = cache.q_inverse_blocks(&m).unwrap();
        let inv = dense_q(&m, &params, &[0], 1).try_inverse().unwrap();
        let n_f = 2 + 6;
        let scale = inv.abs().max();
        assert!((inv.view((0, 0), (n_f, n_f)) - &blocks.others_others).abs().max() < 1e-10 * scale);
        assert!((inv.view((0, n_f), (n_f, 6)) - &blocks.others_target).abs().max() < 1e-10 * scale);
        assert!((inv.view((n_f, 0), (6, n_f)) - &blocks.target_others).abs().max() < 1e-10 * scale);
        assert!((inv.view((n_f, n_f), (6, 6)) - &blocks.target_target).abs().max() < 1e-10 * scale);
        assert_eq!(blocks.target_target, blocks.target_target.transpose());
    }

    #[test]
    fn solve_and_logdet_match_dense_p() {
        let (_, m) = instance(27);
        let params = ShrinkageParams { rho: vec![0.5, 1.1, 0.9], alpha: vec![2.0, 0.7, 1.3] };
        let cache = build_cache(&m, &params, 0).unwrap();
        let theta = (1.7, 0.4);
        let fast = fast_loglik(&cache, theta, &m, &params).unwrap();
        let full = params.with(0, theta.0, theta.1);
        let v: Vec<Vec<f64>> = (0..3).map(|j| v_diag(full.rho[j], full.alpha[j], &m.lambda).unwrap()).collect();
        let (p, r) = assemble_compressed(&m, &v);
        let c = p.clone().lu().solve(&r).unwrap();
        assert!((c.rows(0, 3) - &fast.b_hat).abs().max() < 1e-10);
        for j in 0..3 {
            assert!((c.rows(3 + 7 * j, 7) - &fast.u_hat[j]).abs().max() < 1e-10);
        }
        let logdet = p.cholesky().unwrap().l().diagonal().iter().map(|d| 2.0 * d.ln()).sum::<f64>();
        assert!(rel(logdet, fast.ln_det_p) < 1e-8);
    }

    #[test]
    fn optimize_never_worsens_and_is_idempotent() {
        let f = random_fixture(120, 1, 8, vec![true], 28);
        let m = compress(&f.design()).unwrap();
        let opts = SequentialOptions::default();
        let params = ShrinkageParams::uniform(1, 0.5, 1.0);
        let cache = build_cache(&m, &params, 0).unwrap();
        let incoming = fast_loglik(&cache, (0.5, 1.0), &m, &params).unwrap().loglik;
        let step = optimize_k(&cache, &m, &params, 0, 120, &opts);
        assert!(step.loglik >= incoming);
        assert!(step.evals <= 121);
        let again = optimize_k(&cache, &m, &params.with(0, step.rho, step.alpha), 0, 120, &opts);
        assert!((again.loglik - step.loglik).abs() < 1e-6);
        assert!(again.loglik >= step.loglik);
        let tiny = optimize_k(&cache, &m, &params, 0, 1, &opts);
        assert_eq!((tiny.rho, tiny.alpha), (0.5, 1.0));
    }

    #[test]
    fn response_without_signal_collapses() {
        let mut f = random_fixture(150, 2, 6, vec![true, true], 29);
        // strip every direction the model can explain from y
        let z = DMatrix::from_fn(150, 2 + 12, |i, c| match c {
            0 | 1 => f.x[(i, c)],
            c if c < 8 => f.e[(i, c - 2)],
            c => f.x[(i, 1)] * f.e[(i, c - 8)],
        });
        let proj = &z * z.clone().pseudo_inverse(1e-12).unwrap();
        f.y = &f.y - proj * &f.y;
        let m = compress(&f.design()).unwrap();
        let opts = SequentialOptions::default();
        let params = ShrinkageParams::uniform(2, 0.5, 1.0);
        let cache = build_cache(&m, &params, 1).unwrap();
        let step = optimize_k(&cache, &m, &params, 1, 120, &opts);
        assert_eq!(step.rho, 0.0);
    }

    #[test]
    fn sequential_fit_is_monotone_and_self_consistent() {
        let (_, m) = instance(30);
        let (params, result, trace) = fit_sequential(&m, &ShrinkageParams::uniform(3, 0.5, 1.0), &SequentialOptions::default()).unwrap();
        let mut last = trace.initial_loglik;
        for &ll in &trace.sweep_loglik {
            assert!(ll >= last - 1e-8);
            last = ll;
        }
        let check = compressed_restricted_loglik(&m, &params).unwrap();
        assert_eq!(check.loglik, result.loglik);
        assert!(rel(result.loglik, last) < 1e-9);
        assert!(trace.converged);
        assert!(params.alpha.iter().all(|a| (0.0..=4.0).contains(a)));
    }

    #[test]
    fn single_coordinate_converges_in_two_sweeps() {
        let f = random_fixture(100, 2, 8, vec![true, false], 31);
        let m = compress(&f.design()).unwrap();
        let opts = SequentialOptions::default();
        let (_, _, trace) = fit_sequential(&m, &ShrinkageParams::uniform(1, 0.5, 1.0), &opts).unwrap();
        assert!(trace.sweeps() <= 2);
        if trace.sweeps() == 2 {
            assert!(trace.sweep_loglik[1] - trace.sweep_loglik[0] < opts.tol);
        }
    }

    #[test]
    fn invalid_order_rejected() {
        let (_, m) = instance(32);
        let opts = SequentialOptions { order: Some(vec![0, 0, 1]), ..Default::default() };
        assert!(matches!(fit_sequential(&m, &ShrinkageParams::uniform(3, 0.5, 1.0), &opts), Err(Error::InvalidConfig(_))));
        let opts = SequentialOptions { order: Some(vec![2, 1, 0]), max_sweeps: 2, ..Default::default() };
        assert!(fit_sequential(&m, &ShrinkageParams::uniform(3, 0.5, 1.0), &opts).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn fast_path_matches_compressed(
            seed in 0u64..10_000,
            n in 30usize..100,
            k in 2usize..5,
            l in 4usize..11,
            rho in proptest::collection::vec(0.01f64..4.0, 4),
            alpha in proptest::collection::vec(0.0f64..4.0, 4),
            theta in (0.0f64..5.0, 0.0f64..4.0),
        ) {
            let f = random_fixture(n, k, l, vec![true; k], seed);
            let m = compress(&f.design()).unwrap();
            let params = ShrinkageParams { rho: rho[..k].to_vec(), alpha: alpha[..k].to_vec() };
            let t = (seed as usize) % k;
            let cache = build_cache(&m, &params, t).unwrap();
            let fast = fast_loglik(&cache, theta, &m, &params).unwrap();
            let comp = compressed_restricted_loglik(&m, &params.with(t, theta.0, theta.1)).unwrap();
            prop_assert!((fast.loglik - comp.loglik).abs() <= 1e-8 * (1.0 + comp.loglik.abs()));
            prop_assert!((fast.d_theta - comp.d_theta).abs() <= 1e-8 * (1.0 + comp.d_theta));
        }
    }
}
