//! Distance kernels between span point clouds.
//!
//! The primary kernel is the entropically regularized Wasserstein distance
//! computed by [`sinkhorn`]; [`exact_w1`] is a minimum-cost-matching oracle
//! used to validate it and to score small clouds exactly. The remaining
//! kernels ([`mean_cosine_distance`], [`chamfer_distance`], [`mmd_rbf`]) are
//! cheaper set distances kept for ablation comparisons. All kernels take
//! uniform-mass clouds and accumulate in `f64`.

mod assignment;
mod pointset;
mod sinkhorn;

pub use assignment::{exact_w1, exact_w1_capped, DEFAULT_MATCHING_CAP};
pub use pointset::{chamfer_distance, mean_cosine_distance, median_heuristic_bandwidth, mmd_rbf};
pub use sinkhorn::{sinkhorn, SinkhornConfig, TransportResult};

pub(crate) use sinkhorn::{sinkhorn_from_cost, sinkhorn_sliced};

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ShearError};

/// Uniform empirical distribution over `n` points in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Array2<f64>,
}

impl PointCloud {
    /// Wrap an `n x d` matrix of points. Rejects empty clouds and
    /// non-finite coordinates.
    pub fn new(points: Array2<f64>) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(ShearError::Validation(format!(
                "point cloud must be non-empty, got {}x{}",
                points.nrows(),
                points.ncols()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(ShearError::Validation(
                "point cloud contains non-finite coordinates".into(),
            ));
        }
        Ok(Self { points })
    }

    /// Build from a flat row-major buffer.
    pub fn from_flat(data: Vec<f64>, n: usize, d: usize) -> Result<Self> {
        let points = Array2::from_shape_vec((n, d), data).map_err(|e| {
            ShearError::DimensionMismatch(format!("point buffer does not fit {n}x{d}: {e}"))
        })?;
        Self::new(points)
    }

    /// Build from per-point vectors (convenient in tests).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(ShearError::Validation("point cloud must be non-empty".into()));
        }
        let d = rows[0].len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(ShearError::DimensionMismatch(
                "points have inconsistent dimensions".into(),
            ));
        }
        let mut flat = Vec::with_capacity(rows.len() * d);
        for r in rows {
            flat.extend_from_slice(r);
        }
        Self::from_flat(flat, rows.len(), d)
    }

    /// Number of points.
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    /// Clouds are never empty.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Ambient dimension.
    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    /// View of point `i`.
    pub fn point(&self, i: usize) -> ArrayView1<'_, f64> {
        self.points.row(i)
    }

    /// Underlying `n x d` matrix.
    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    /// Arithmetic mean of the points.
    pub fn mean(&self) -> Array1<f64> {
        self.points.sum_axis(ndarray::Axis(0)) / self.len() as f64
    }
}

/// Which kernel scores a span pair. `ExactW1` is exact but capped in size,
/// so the CLI exposes only the first four; it remains available in-process
/// for tests and small-scale analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    Sinkhorn,
    CosineMean,
    Chamfer,
    Mmd,
    ExactW1,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let t = x - y;
        acc += t * t;
    }
    acc
}

pub(crate) fn euclid(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    match (a.as_slice(), b.as_slice()) {
        (Some(x), Some(y)) => sq_dist(x, y).sqrt(),
        _ => a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| {
                let t = x - y;
                t * t
            })
            .sum::<f64>()
            .sqrt(),
    }
}

/// Pairwise Euclidean distances between every row of `a` and every row of
/// `b`, via the norm expansion `‖x−y‖² = ‖x‖² + ‖y‖² − 2x·y` so the cross
/// terms come from one matrix product. Built for the span-weighting hot
/// path, where every span pair of two token sequences reuses slices of this
/// one grid; within float rounding (the expansion reorders the arithmetic)
/// entries agree with [`cost_matrix`]. Negative squared residue from
/// cancellation is clamped before the square root.
pub(crate) fn token_cost_grid(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    let a_sq: Vec<f64> = a.rows().into_iter().map(|r| r.dot(&r)).collect();
    let b_sq: Vec<f64> = b.rows().into_iter().map(|r| r.dot(&r)).collect();
    // Multiply into a preallocated row-major grid: `a.dot(&b.t())` is free
    // to return a column-major result (it does for single-column inputs),
    // and downstream slicing relies on contiguous rows.
    let mut grid = Array2::zeros((a.nrows(), b.nrows()));
    let bt = b.t();
    general_mat_mul(1.0, &a, &bt, 0.0, &mut grid);
    for (i, mut row) in grid.rows_mut().into_iter().enumerate() {
        for (j, entry) in row.iter_mut().enumerate() {
            *entry = (a_sq[i] + b_sq[j] - 2.0 * *entry).max(0.0).sqrt();
        }
    }
    grid
}

/// Pairwise Euclidean ground-cost matrix: entry `(i, j)` is the distance
/// from point `i` of `p` to point `j` of `q`. Distances are computed
/// coordinate-by-coordinate (no norm-expansion trick), so `cost_matrix(p, p)`
/// has an exactly zero diagonal and is exactly symmetric.
pub fn cost_matrix(p: &PointCloud, q: &PointCloud) -> Result<Array2<f64>> {
    if p.dim() != q.dim() {
        return Err(ShearError::DimensionMismatch(format!(
            "cost matrix between clouds of dim {} and {}",
            p.dim(),
            q.dim()
        )));
    }
    let mut cost = Array2::zeros((p.len(), q.len()));
    for i in 0..p.len() {
        let pi = p.point(i);
        for j in 0..q.len() {
            cost[[i, j]] = euclid(pi, q.point(j));
        }
    }
    Ok(cost)
}
