//! Cheaper point-set distances used as ablation alternatives to optimal
//! transport: cosine distance between cloud means, symmetrized Chamfer
//! distance, and RBF-kernel MMD.

use super::{euclid, PointCloud};
use crate::error::{Result, ShearError};

fn check_dims(p: &PointCloud, q: &PointCloud) -> Result<()> {
    if p.dim() != q.dim() {
        return Err(ShearError::DimensionMismatch(format!(
            "distance between clouds of dim {} and {}",
            p.dim(),
            q.dim()
        )));
    }
    Ok(())
}

/// `1 - cos(angle)` between the two cloud means; in `[0, 2]`.
pub fn mean_cosine_distance(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    check_dims(p, q)?;
    let mp = p.mean();
    let mq = q.mean();
    let np = mp.dot(&mp).sqrt();
    let nq = mq.dot(&mq).sqrt();
    if np == 0.0 || nq == 0.0 {
        return Err(ShearError::Degenerate(
            "cosine distance undefined for a zero mean vector".into(),
        ));
    }
    let cos = mp.dot(&mq) / (np * nq);
    Ok((1.0 - cos).clamp(0.0, 2.0))
}

fn directed_chamfer(p: &PointCloud, q: &PointCloud) -> f64 {
    let mut acc = 0.0;
    for i in 0..p.len() {
        let pi = p.point(i);
        let mut best = f64::INFINITY;
        for j in 0..q.len() {
            let d = euclid(pi, q.point(j));
            if d < best {
                best = d;
            }
        }
        acc += best;
    }
    acc / p.len() as f64
}

/// Symmetrized Chamfer distance: the two directed mean nearest-neighbor
/// distances, averaged.
pub fn chamfer_distance(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    check_dims(p, q)?;
    Ok((directed_chamfer(p, q) + directed_chamfer(q, p)) / 2.0)
}

/// Biased (V-statistic) MMD with an RBF kernel of the given bandwidth;
/// the square root is clamped at zero against negative rounding.
pub fn mmd_rbf(p: &PointCloud, q: &PointCloud, bandwidth: f64) -> Result<f64> {
    check_dims(p, q)?;
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(ShearError::Config(format!(
            "mmd bandwidth must be positive and finite, got {bandwidth}"
        )));
    }
    let denom = 2.0 * bandwidth * bandwidth;
    let kernel_sum = |x: &PointCloud, y: &PointCloud| -> f64 {
        let mut acc = 0.0;
        for i in 0..x.len() {
            let xi = x.point(i);
            for j in 0..y.len() {
                let d = euclid(xi, y.point(j));
                acc += (-d * d / denom).exp();
            }
        }
        acc
    };
    let n = p.len() as f64;
    let m = q.len() as f64;
    let mmd_sq =
        kernel_sum(p, p) / (n * n) + kernel_sum(q, q) / (m * m) - 2.0 * kernel_sum(p, q) / (n * m);
    Ok(mmd_sq.max(0.0).sqrt())
}

/// Median pairwise distance over the union of the two clouds (the usual
/// "median heuristic" bandwidth). Degenerate when all points coincide.
pub fn median_heuristic_bandwidth(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    check_dims(p, q)?;
    let union: Vec<_> = (0..p.len())
        .map(|i| p.point(i))
        .chain((0..q.len()).map(|j| q.point(j)))
        .collect();
    let mut dists = Vec::with_capacity(union.len() * (union.len() - 1) / 2);
    for i in 0..union.len() {
        for j in i + 1..union.len() {
            dists.push(euclid(union[i], union[j]));
        }
    }
    if dists.is_empty() {
        return Err(ShearError::Degenerate(
            "median bandwidth needs at least two points".into(),
        ));
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 1 {
        dists[mid]
    } else {
        (dists[mid - 1] + dists[mid]) / 2.0
    };
    if median == 0.0 {
        return Err(ShearError::Degenerate(
            "median pairwise distance is zero (all points coincide)".into(),
        ));
    }
    Ok(median)
}
