//! Sample-site geometry: distances, the minimum-spanning-tree kernel range,
//! k-means knots and exponential proximity matrices.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Planar sample-site coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateSet {
    points: Vec<[f64; 2]>,
}

impl CoordinateSet {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::DimensionMismatch("coordinate set is empty"));
        }
        if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::NonFiniteInput("coordinates"));
        }
        Ok(CoordinateSet { points })
    }

    pub fn from_columns(px: &[f64], py: &[f64]) -> Result<Self> {
        if px.len() != py.len() {
            return Err(Error::DimensionMismatch("coordinate columns differ in length"));
        }
        Self::new(px.iter().zip(py).map(|(&x, &y)| [x, y]).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn subset(&self, indices: &[usize]) -> CoordinateSet {
        CoordinateSet { points: indices.iter().map(|&i| self.points[i]).collect() }
    }
}

#[inline]
pub(crate) fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    libm::sqrt(dx * dx + dy * dy)
}

#[inline]
fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Euclidean distance matrix, `|a| x |b|`.
pub fn pairwise_distances(a: &CoordinateSet, b: &CoordinateSet) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| dist(a.points[i], b.points[j]))
}

/// Longest edge of the Euclidean minimum spanning tree over all sites.
///
/// Dense Prim's algorithm, `O(N^2)` time and `O(N)` memory.
pub fn mst_max_edge(coords: &CoordinateSet) -> Result<f64> {
    let n = coords.len();
    if n < 2 {
        return Err(Error::DimensionMismatch("minimum spanning tree needs at least two sites"));
    }
    let pts = coords.points();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    in_tree[0] = true;
    for j in 1..n {
        best[j] = dist2(pts[0], pts[j]);
    }
    let mut max_edge2 = 0.0f64;
    for _ in 1..n {
        let mut next = usize::MAX;
        let mut next_d = f64::INFINITY;
        for j in 0..n {
            if !in_tree[j] && best[j] < next_d {
                next_d = best[j];
                next = j;
            }
        }
        in_tree[next] = true;
        max_edge2 = max_edge2.max(next_d);
        let p = pts[next];
        for j in 0..n {
            if !in_tree[j] {
                let d = dist2(p, pts[j]);
                if d < best[j] {
                    best[j] = d;
                }
            }
        }
    }
    let r = libm::sqrt(max_edge2);
    if r > 0.0 {
        Ok(r)
    } else {
        Err(Error::AllPointsCoincident)
    }
}

/// Site count above which [`mst_max_edge_subsampled`] switches to a subsample.
pub const MST_SUBSAMPLE_LIMIT: usize = 30_000;

/// Like [`mst_max_edge`], but for more than `limit` sites the tree is built over
/// a uniform random subsample of `limit` sites drawn with `seed`.
pub fn mst_max_edge_subsampled(coords: &CoordinateSet, limit: usize, seed: u64) -> Result<f64> {
    if coords.len() <= limit {
        return mst_max_edge(coords);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, coords.len(), limit).into_vec();
    picked.sort_unstable();
    mst_max_edge(&coords.subset(&picked))
}

/// k-means cluster centers used as Nyström knots.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotSet {
    pub centers: Vec<[f64; 2]>,
    /// Index of the nearest center for every sample site.
    pub assignment: Vec<usize>,
    /// Within-cluster sum of squares after each Lloyd iteration.
    pub wcss_history: Vec<f64>,
    pub converged: bool,
}

impl KnotSet {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn coordinates(&self) -> CoordinateSet {
        CoordinateSet { points: self.centers.clone() }
    }
}

pub const KMEANS_MAX_ITER: usize = 100;

/// Lloyd's k-means with k-means++ seeding.
///
/// Runs until no assignment changes or [`KMEANS_MAX_ITER`] iterations. An
/// empty cluster is re-seeded at the site farthest from its current center.
pub fn kmeans_knots(coords: &CoordinateSet, count: usize, seed: u64) -> Result<KnotSet> {
    let n = coords.len();
    if count < 1 || count > n {
        return Err(Error::InvalidKnotCount { requested: count, available: n });
    }
    let pts = coords.points();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut centers: Vec<[f64; 2]> = Vec::with_capacity(count);
    let mut chosen = vec![false; n];
    let first = rng.gen_range(0..n);
    centers.push(pts[first]);
    chosen[first] = true;
    let mut d2: Vec<f64> = pts.iter().map(|&p| dist2(p, pts[first])).collect();
    while centers.len() < count {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc >= target {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap_or(0))
        } else {
            // every remaining site duplicates a center already chosen
            chosen.iter().position(|c| !c).unwrap_or(0)
        };
        chosen[pick] = true;
        let c = pts[pick];
        centers.push(c);
        for (i, &p) in pts.iter().enumerate() {
            let d = dist2(p, c);
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }

    let nearest = |centers: &[[f64; 2]], p: [f64; 2]| -> (usize, f64) {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, &q) in centers.iter().enumerate() {
            let d = dist2(p, q);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        (best, best_d)
    };

    let mut assignment: Vec<usize> = pts.iter().map(|&p| nearest(&centers, p).0).collect();
    let mut wcss_history = Vec::new();
    let mut converged = false;
    for _ in 0..KMEANS_MAX_ITER {
        recenter(pts, &assignment, &mut centers);
        // re-seed empty clusters at the worst-served site
        let mut counts = vec![0usize; count];
        for &a in &assignment {
            counts[a] += 1;
        }
        for c in 0..count {
            if counts[c] == 0 {
                let far = (0..n)
                    .filter(|&i| counts[assignment[i]] > 1)
                    .max_by(|&i, &j| {
                        dist2(pts[i], centers[assignment[i]])
                            .total_cmp(&dist2(pts[j], centers[assignment[j]]))
                            .then(j.cmp(&i))
                    });
                if let Some(i) = far {
                    counts[assignment[i]] -= 1;
                    assignment[i] = c;
                    counts[c] = 1;
                    centers[c] = pts[i];
                }
            }
        }
        recenter(pts, &assignment, &mut centers);
        wcss_history.push(wcss(pts, &assignment, &centers));

        let mut changed = false;
        for (i, &p) in pts.iter().enumerate() {
            let (best, best_d) = nearest(&centers, p);
            // keep the current center on ties so the loop terminates
            if best != assignment[i] && best_d < dist2(p, centers[assignment[i]]) {
                assignment[i] = best;
                changed = true;
            }
        }
        if !changed {
            converged = true;
            break;
        }
    }
    recenter(pts, &assignment, &mut centers);
    Ok(KnotSet { centers, assignment, wcss_history, converged })
}

fn recenter(pts: &[[f64; 2]], assignment: &[usize], centers: &mut [[f64; 2]]) {
    let k = centers.len();
    let mut sums = vec![[0.0f64; 2]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in pts.iter().zip(assignment) {
        sums[a][0] += p[0];
        sums[a][1] += p[1];
        counts[a] += 1;
    }
    for c in 0..k {
        if counts[c] > 0 {
            centers[c] = [sums[c][0] / counts[c] as f64, sums[c][1] / counts[c] as f64];
        }
    }
}

fn wcss(pts: &[[f64; 2]], assignment: &[usize], centers: &[[f64; 2]]) -> f64 {
    pts.iter().zip(assignment).map(|(&p, &a)| dist2(p, centers[a])).sum()
}

/// What to put on the diagonal of a square proximity matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagonalPolicy {
    /// Zero diagonal, as required for the Moran coefficient.
    Zero,
    /// Keep the kernel value `exp(0) = 1`.
    Kernel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProximityMatrix {
    pub entries: DMatrix<f64>,
    pub diagonal_policy: DiagonalPolicy,
}

/// Exponential kernel `exp(-d / r)` between two site sets. The diagonal is
/// zeroed only when `policy` is [`DiagonalPolicy::Zero`] and `a == b`.
pub fn proximity(a: &CoordinateSet, b: &CoordinateSet, r: f64, policy: DiagonalPolicy) -> Result<ProximityMatrix> {
    if !(r > 0.0) {
        return Err(Error::NonPositiveRange(r));
    }
    let mut entries = DMatrix::from_fn(a.len(), b.len(), |i, j| libm::exp(-dist(a.points[i], b.points[j]) / r));
    if policy == DiagonalPolicy::Zero && a == b {
        entries.fill_diagonal(0.0);
    }
    Ok(ProximityMatrix { entries, diagonal_policy: policy })
}
