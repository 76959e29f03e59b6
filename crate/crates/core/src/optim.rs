//! Box-constrained Nelder-Mead simplex search.
//!
//! Trial points are projected onto the box before evaluation. Non-finite
//! objective values are treated as `+inf`, so failed evaluations simply
//! repel the simplex.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexOptions {
    pub max_evals: usize,
    /// Stop once the spread of objective values over the simplex is below this.
    pub f_tol: f64,
    /// ...and every vertex lies within this distance of the best one.
    pub x_tol: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions { max_evals: 200, f_tol: 1e-9, x_tol: 1e-7 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, &lo), &hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(lo, hi);
    }
}

/// Minimize `f` over the box `[lower, upper]` starting from `x0`, with the
/// initial simplex spanned by `step` along each axis (flipped inward when it
/// would leave the box).
pub fn minimize<F>(mut f: F, x0: &[f64], step: &[f64], lower: &[f64], upper: &[f64], opts: &SimplexOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = x0.len();
    assert!(step.len() == dim && lower.len() == dim && upper.len() == dim);
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut start = x0.to_vec();
    project(&mut start, lower, upper);
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let v0 = eval(&start, &mut evals);
    simplex.push((start.clone(), v0));
    for i in 0..dim {
        if evals >= opts.max_evals {
            break;
        }
        let mut p = start.clone();
        p[i] = if p[i] + step[i] <= upper[i] { p[i] + step[i] } else { p[i] - step[i] };
        project(&mut p, lower, upper);
        let v = eval(&p, &mut evals);
        simplex.push((p, v));
    }
    if simplex.len() < dim + 1 {
        return best_of(simplex, evals, false);
    }

    let mut converged = false;
    while evals < opts.max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[dim].1);
        let spread = simplex.iter().skip(1).flat_map(|(p, _)| p.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs())).fold(0.0, f64::max);
        if (worst - best).abs() <= opts.f_tol && spread <= opts.x_tol {
            converged = true;
            break;
        }

        let mut centroid = vec![0.0; dim];
        for (p, _) in &simplex[..dim] {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / dim as f64;
            }
        }
        let along = |t: f64| {
            let mut p: Vec<f64> = centroid.iter().zip(&simplex[dim].0).map(|(c, w)| c + t * (c - w)).collect();
            project(&mut p, lower, upper);
            p
        };

        let reflected = along(1.0);
        let fr = eval(&reflected, &mut evals);
        if fr < simplex[0].1 {
            if evals >= opts.max_evals {
                simplex[dim] = (reflected, fr);
                break;
            }
            let expanded = along(2.0);
            let fe = eval(&expanded, &mut evals);
            simplex[dim] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
            continue;
        }
        if fr < simplex[dim - 1].1 {
            simplex[dim] = (reflected, fr);
            continue;
        }
        if evals >= opts.max_evals {
            break;
        }
        let (contracted, fc) = if fr < simplex[dim].1 {
            let p = along(0.5);
            let v = eval(&p, &mut evals);
            (p, v)
        } else {
            let p = along(-0.5);
            let v = eval(&p, &mut evals);
            (p, v)
        };
        if fc < simplex[dim].1.min(fr) {
            simplex[dim] = (contracted, fc);
            continue;
        }
        // shrink toward the best vertex
        let anchor = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            if evals >= opts.max_evals {
                break;
            }
            let mut p: Vec<f64> = anchor.iter().zip(&vertex.0).map(|(a, v)| a + 0.5 * (v - a)).collect();
            project(&mut p, lower, upper);
            let v = eval(&p, &mut evals);
            *vertex = (p, v);
        }
    }
    best_of(simplex, evals, converged)
}

fn best_of(simplex: Vec<(Vec<f64>, f64)>, evals: usize, converged: bool) -> Minimum {
    let (x, value) = simplex.into_iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    Minimum { x, value, evals, converged }
}
