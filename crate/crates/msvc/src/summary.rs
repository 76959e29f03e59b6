//! JSON summaries written next to the coefficient tables.

use msvc_core::{BasisKind, EigenBasis, GwrFit, SvcFit};
use serde::{Deserialize, Serialize};

use crate::experiment::StageTimes;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSummary {
    /// `exact` or `nystrom`
    pub kind: String,
    pub rank: usize,
    pub range: f64,
    pub knots: Option<usize>,
}

impl From<&EigenBasis> for BasisSummary {
    fn from(b: &EigenBasis) -> Self {
        BasisSummary {
            kind: match b.kind {
                BasisKind::Exact => "exact",
                BasisKind::Nystrom => "nystrom",
            }
            .to_owned(),
            rank: b.rank(),
            range: b.range,
            knots: b.knots().map(|k| k.len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub basis_s: f64,
    pub compress_s: f64,
    pub estimate_s: f64,
    pub total_s: f64,
}

impl From<StageTimes> for Timings {
    fn from(t: StageTimes) -> Self {
        Timings { basis_s: t.basis_s, compress_s: t.compress_s, estimate_s: t.estimate_s, total_s: t.total_s }
    }
}

/// Contents of `PREFIX.summary.json` after `msvc fit`. Per-covariate lists
/// follow `covariates`; `rho` and `alpha` are `null` for fixed coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub n: usize,
    pub k: usize,
    pub covariates: Vec<String>,
    pub svc: Vec<bool>,
    pub b_hat: Vec<f64>,
    pub rho: Vec<Option<f64>>,
    pub alpha: Vec<Option<f64>>,
    pub sigma2: f64,
    pub loglik: f64,
    pub sweeps: usize,
    pub converged: bool,
    pub basis: BasisSummary,
    pub timings: Timings,
}

impl FitSummary {
    pub fn new(fit: &SvcFit, covariates: Vec<String>, times: StageTimes) -> Self {
        let varying = fit.varying();
        let per = |vals: &[f64]| -> Vec<Option<f64>> {
            (0..fit.svc_flags.len()).map(|c| varying.iter().position(|&v| v == c).map(|j| vals[j])).collect()
        };
        FitSummary {
            n: fit.beta_surfaces.nrows(),
            k: fit.svc_flags.len(),
            covariates,
            svc: fit.svc_flags.clone(),
            b_hat: fit.b_hat.iter().copied().collect(),
            rho: per(&fit.params.rho),
            alpha: per(&fit.params.alpha),
            sigma2: fit.sigma2_hat,
            loglik: fit.loglik,
            sweeps: fit.trace.sweeps(),
            converged: fit.trace.converged,
            basis: BasisSummary::from(&fit.basis),
            timings: times.into(),
        }
    }
}

/// Contents of `PREFIX.summary.json` after `msvc gwr`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GwrSummary {
    pub n: usize,
    pub k: usize,
    pub covariates: Vec<String>,
    pub bandwidth: f64,
    /// Mean squared leave-one-out error.
    pub cv_score: f64,
    pub total_s: f64,
}

impl GwrSummary {
    pub fn new(fit: &GwrFit, covariates: Vec<String>, total_s: f64) -> Self {
        GwrSummary {
            n: fit.beta_surfaces.nrows(),
            k: fit.beta_surfaces.ncols(),
            covariates,
            bandwidth: fit.bandwidth,
            cv_score: fit.cv_score,
            total_s,
        }
    }
}
