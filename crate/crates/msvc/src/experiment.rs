//! Monte Carlo runner comparing M-SVC with GWR on simulated data.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use msvc_core::{
    bias, corr, fit_observed, generate, gwr_select_bandwidth, rmse, BandwidthGrid, FitOptions, Generator, SimConfig, SimInstance, Stage,
    SvcFit,
};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::io::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Msvc,
    Gwr,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Msvc => "msvc",
            Method::Gwr => "gwr",
        })
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "msvc" => Ok(Method::Msvc),
            "gwr" => Ok(Method::Gwr),
            other => Err(format!("unknown method `{other}` (expected msvc or gwr)")),
        }
    }
}

/// Wall time of each pipeline stage, in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimes {
    pub basis_s: f64,
    pub compress_s: f64,
    pub estimate_s: f64,
    pub total_s: f64,
}

/// Runs [`fit_observed`] and times its stages.
pub fn timed_fit(instance: &msvc_core::SpatialDataset, options: &FitOptions) -> msvc_core::Result<(SvcFit, StageTimes)> {
    let start = Instant::now();
    let mut marks: Vec<(Stage, Instant)> = Vec::with_capacity(5);
    let fit = fit_observed(instance, options, &mut |s| marks.push((s, Instant::now())))?;
    let at = |stage: Stage| marks.iter().find(|(s, _)| *s == stage).map(|(_, t)| *t).unwrap_or(start);
    let span = |a: Stage, b: Stage| at(b).saturating_duration_since(at(a)).as_secs_f64();
    let times = StageTimes {
        basis_s: span(Stage::Basis, Stage::Compress),
        compress_s: span(Stage::Compress, Stage::Estimate),
        estimate_s: span(Stage::Estimate, Stage::Reconstruct),
        total_s: start.elapsed().as_secs_f64(),
    };
    Ok((fit, times))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub methods: Vec<Method>,
    pub sizes: Vec<usize>,
    pub k: usize,
    pub reps: usize,
    pub seed: u64,
    pub generator: Generator,
    pub alphas: Option<Vec<f64>>,
    pub noise_share: f64,
    pub fit: FitOptions,
    pub threads: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            methods: vec![Method::Msvc, Method::Gwr],
            sizes: vec![1000],
            k: 2,
            reps: 20,
            seed: 0,
            generator: Generator::Large { knot_count: msvc_core::simulation::DEFAULT_GENERATOR_KNOTS },
            alphas: None,
            noise_share: 0.3,
            fit: FitOptions::default(),
            threads: 1,
        }
    }
}

impl ExperimentSpec {
    pub fn sim_config(&self, n: usize, rep: usize) -> SimConfig {
        SimConfig {
            n,
            k: self.k,
            seed: replication_seed(self.seed, n, rep),
            generator: self.generator,
            alphas: self.alphas.clone(),
            noise_share: self.noise_share,
        }
    }

    /// Column groups reported separately: one per distinct scale exponent for
    /// the large generator, a single `all` group otherwise.
    pub fn alpha_groups(&self) -> Vec<(String, Vec<usize>)> {
        match self.generator {
            Generator::Small { .. } => vec![("all".to_owned(), (0..self.k).collect())],
            Generator::Large { .. } => {
                let alphas = self.alphas.clone().unwrap_or_else(|| msvc_core::simulation::default_alphas(self.k));
                let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
                for (col, a) in alphas.iter().enumerate() {
                    let label = format!("{a}");
                    match groups.iter_mut().find(|(l, _)| *l == label) {
                        Some((_, cols)) => cols.push(col),
                        None => groups.push((label, vec![col])),
                    }
                }
                groups
            }
        }
    }
}

/// Seed of replication `rep` at sample size `n`.
pub fn replication_seed(base: u64, n: usize, rep: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add((n as u64) << 24).wrapping_add(rep as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub method: Method,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub rep: usize,
    pub alpha_group: String,
    pub rmse: f64,
    pub bias: f64,
    pub corr: f64,
    pub t_basis_s: f64,
    pub t_compress_s: f64,
    pub t_estimate_s: f64,
    pub t_total_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub method: Method,
    #[serde(rename = "N")]
    pub n: usize,
    pub rep: usize,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub failures: Vec<Failure>,
}

pub const REPORT_HEADER: [&str; 12] =
    ["method", "N", "K", "rep", "alpha_group", "rmse", "bias", "corr", "t_basis_s", "t_compress_s", "t_estimate_s", "t_total_s"];

impl Report {
    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut out = String::new();
        out.push_str(&REPORT_HEADER.join(","));
        out.push('\n');
        for r in &self.rows {
            let nums = [r.rmse, r.bias, r.corr, r.t_basis_s, r.t_compress_s, r.t_estimate_s, r.t_total_s].map(fmt_f64);
            out.push_str(&format!("{},{},{},{},{},{}\n", r.method, r.n, r.k, r.rep, r.alpha_group, nums.join(",")));
        }
        std::fs::write(path, out)
    }

    pub fn write_json(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).map_err(std::io::Error::other)?)
    }
}

fn columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    m.select_columns(cols)
}

fn run_method(method: Method, inst: &SimInstance, options: &FitOptions) -> msvc_core::Result<(DMatrix<f64>, StageTimes)> {
    match method {
        Method::Msvc => timed_fit(&inst.dataset, options).map(|(f, t)| (f.beta_surfaces, t)),
        Method::Gwr => {
            let start = Instant::now();
            let g = gwr_select_bandwidth(&inst.dataset, &BandwidthGrid::for_dataset(&inst.dataset))?;
            let secs = start.elapsed().as_secs_f64();
            Ok((g.beta_surfaces, StageTimes { estimate_s: secs, total_s: secs, ..StageTimes::default() }))
        }
    }
}

fn replication(spec: &ExperimentSpec, n: usize, rep: usize) -> (Vec<ReportRow>, Vec<Failure>) {
    let groups = spec.alpha_groups();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let row = |method, group: &str, metrics: (f64, f64, f64), t: StageTimes| ReportRow {
        method,
        n,
        k: spec.k,
        rep,
        alpha_group: group.to_owned(),
        rmse: metrics.0,
        bias: metrics.1,
        corr: metrics.2,
        t_basis_s: t.basis_s,
        t_compress_s: t.compress_s,
        t_estimate_s: t.estimate_s,
        t_total_s: t.total_s,
    };
    let nan = (f64::NAN, f64::NAN, f64::NAN);
    let instance = generate(&spec.sim_config(n, rep));
    for &method in &spec.methods {
        let outcome = instance.as_ref().map_err(Clone::clone).and_then(|inst| {
            let options = FitOptions { seed: replication_seed(spec.seed, n, rep), ..spec.fit.clone() };
            let (est, t) = run_method(method, inst, &options)?;
            let mut out = Vec::new();
            for (label, cols) in &groups {
                let (truth, est) = (columns(&inst.true_beta, cols), columns(&est, cols));
                out.push(row(method, label, (rmse(&truth, &est)?, bias(&truth, &est)?, corr(&truth, &est)?), t));
            }
            Ok(out)
        });
        match outcome {
            Ok(r) => rows.extend(r),
            Err(e) => {
                failures.push(Failure { method, n, rep, error: e.name().to_owned() });
                rows.extend(groups.iter().map(|(label, _)| row(method, label, nan, StageTimes::default())));
            }
        }
    }
    (rows, failures)
}

/// Runs every method on `reps` simulated instances per sample size.
///
/// Replications are spread over `spec.threads` workers; the report is sorted
/// by method, sample size, replication and group so it does not depend on
/// scheduling. Failed replications leave `NaN` rows and a [`Failure`] entry.
pub fn run_experiment(spec: &ExperimentSpec) -> Report {
    if spec.methods.is_empty() {
        return Report::default();
    }
    let tasks: Vec<(usize, usize)> = spec.sizes.iter().flat_map(|&n| (0..spec.reps).map(move |r| (n, r))).collect();
    let next = AtomicUsize::new(0);
    let report = Mutex::new(Report::default());
    std::thread::scope(|scope| {
        for _ in 0..spec.threads.max(1).min(tasks.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(n, rep)) = tasks.get(i) else { break };
                let (rows, failures) = replication(spec, n, rep);
                let mut report = report.lock().unwrap();
                report.rows.extend(rows);
                report.failures.extend(failures);
            });
        }
    });
    let mut report = report.into_inner().unwrap();
    let groups: Vec<String> = spec.alpha_groups().into_iter().map(|(l, _)| l).collect();
    let size_pos = |n: usize| spec.sizes.iter().position(|&s| s == n);
    let method_pos = |m: Method| spec.methods.iter().position(|&s| s == m);
    report
        .rows
        .sort_by_key(|r| (method_pos(r.method), size_pos(r.n), r.rep, groups.iter().position(|g| *g == r.alpha_group)));
    report.failures.sort_by_key(|f| (method_pos(f.method), size_pos(f.n), f.rep));
    report
}

/// Median of `values`, ignoring `NaN`.
pub fn median(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len().is_multiple_of(2) { 0.5 * (v[m - 1] + v[m]) } else { v[m] })
}
