//! Exact 1-Wasserstein distance between uniform clouds, via minimum-cost
//! perfect matching.
//!
//! For uniform measures of equal size the optimal coupling is a permutation
//! (Birkhoff), so W1 reduces to an assignment problem, solved here with the
//! shortest-augmenting-path method with potentials in O(n^3). Unequal sizes
//! are replicated to lcm(n, m) points of equal mass first; a size cap keeps
//! the cubic solve inside test budgets.

use ndarray::Array2;

use super::{cost_matrix, PointCloud};
use crate::error::{Result, ShearError};

/// Largest lcm(n, m) the matching oracle accepts.
pub const DEFAULT_MATCHING_CAP: usize = 512;

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

/// Minimum-cost perfect matching on a square cost matrix. Returns the total
/// cost of the optimal assignment.
fn assignment_cost(cost: &Array2<f64>) -> f64 {
    let n = cost.nrows();
    debug_assert_eq!(n, cost.ncols());
    // Shortest augmenting path with potentials, 1-based with a virtual
    // column 0. `p[j]` is the row matched to column j.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            let row = cost.row(i0 - 1);
            for j in 1..=n {
                if !used[j] {
                    let cur = row[j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| cost[[p[j] - 1, j - 1]]).sum()
}

/// Exact W1 with the default replication cap.
pub fn exact_w1(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    exact_w1_capped(p, q, DEFAULT_MATCHING_CAP)
}

/// Exact W1 between two uniform clouds. Unequal sizes are handled by
/// replicating both clouds to lcm(n, m) points (mass-preserving); a
/// replicated size above `cap` is refused — use Sinkhorn for such pairs.
pub fn exact_w1_capped(p: &PointCloud, q: &PointCloud, cap: usize) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(ShearError::DimensionMismatch(format!(
            "exact W1 between clouds of dim {} and {}",
            p.dim(),
            q.dim()
        )));
    }
    let (n, m) = (p.len(), q.len());
    let size = lcm(n, m);
    if size > cap {
        return Err(ShearError::Capacity(format!(
            "matching needs lcm({n}, {m}) = {size} > cap {cap} points; use sinkhorn for this pair"
        )));
    }
    let base = cost_matrix(p, q)?;
    if size == n && size == m {
        return Ok(assignment_cost(&base) / size as f64);
    }
    // Replicated problem: point i of p appears size/n times, point j of q
    // size/m times; costs repeat accordingly, no need to copy coordinates.
    let (rep_p, rep_q) = (size / n, size / m);
    let big = Array2::from_shape_fn((size, size), |(i, j)| base[[i / rep_p, j / rep_q]]);
    Ok(assignment_cost(&big) / size as f64)
}
