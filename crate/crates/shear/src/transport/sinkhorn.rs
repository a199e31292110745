//! Entropically regularized optimal transport between uniform clouds.
//!
//! Solves `min_γ <γ, C> + ε·KL(γ || a ⊗ b)` over couplings of the two
//! uniform marginals by Sinkhorn scaling. When ε is moderate relative to the
//! costs, iterations run in the standard (multiplicative) domain; when
//! `max(C)/ε` is large — where the multiplicative kernel underflows and plain
//! iterations contract too slowly to be usable — the solver switches to
//! log-domain iterations on the dual potentials, annealed from a larger ε
//! down to the target (halving per stage, potentials carried across stages).
//! Annealing only warm-starts the final stage: the fixed point and the
//! convergence criterion are those of plain Sinkhorn at the target ε. The
//! returned plan is rounded onto the exact marginal polytope (row/col scaling
//! plus a rank-one correction), which keeps the reported primal objective a
//! true upper bound on the regularized optimum — and in particular never
//! below W1.

use ndarray::{Array1, Array2, ArrayView2};

use super::{cost_matrix, PointCloud};
use crate::error::{Result, ShearError};

/// Solver parameters. `epsilon` is in distance units; `marginal_tolerance`
/// bounds the L1 violation of both marginals at convergence.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub max_iterations: usize,
    pub marginal_tolerance: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: 4.5,
            max_iterations: 1000,
            marginal_tolerance: 1e-6,
        }
    }
}

impl SinkhornConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(ShearError::Config(format!(
                "sinkhorn epsilon must be positive and finite, got {}",
                self.epsilon
            )));
        }
        if !(self.marginal_tolerance > 0.0) {
            return Err(ShearError::Config(format!(
                "sinkhorn marginal tolerance must be positive, got {}",
                self.marginal_tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(ShearError::Config("sinkhorn max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Outcome of one regularized transport solve.
#[derive(Debug, Clone)]
pub struct TransportResult {
    /// Regularized primal objective at `plan`: `transport_cost + ε·KL`.
    pub value: f64,
    /// Coupling with uniform marginals `1/n` and `1/m`.
    pub plan: Array2<f64>,
    /// `<plan, cost>`.
    pub transport_cost: f64,
    /// Iterations spent, counted across domains and annealing stages.
    pub iterations_used: usize,
    /// Whether the marginal violation dropped below tolerance in time.
    pub converged: bool,
}

/// Absolute bound on scaling-vector magnitudes before the solver restarts
/// in the log domain.
const SCALE_LIMIT: f64 = 1e290;

/// Largest `max(C)/ε` handled by single-stage multiplicative scaling; above
/// it the annealed log-domain path is both safer and much faster.
const SINGLE_STAGE_RATIO: f64 = 30.0;

/// Marginal tolerance for the intermediate annealing stages (the final stage
/// runs at the configured tolerance).
const STAGE_TOLERANCE: f64 = 1e-7;

/// Iteration cap per intermediate annealing stage.
const STAGE_CAP: usize = 200;

struct Solve {
    plan: Array2<f64>,
    iterations: usize,
    converged: bool,
}

/// Entropic-OT distance between two uniform clouds.
pub fn sinkhorn(p: &PointCloud, q: &PointCloud, cfg: &SinkhornConfig) -> Result<TransportResult> {
    let cost = cost_matrix(p, q)?;
    sinkhorn_from_cost(&cost, cfg)
}

/// Same solver, starting from a precomputed ground-cost matrix (lets hot
/// paths reuse the matrix they already built).
pub(crate) fn sinkhorn_from_cost(
    cost: &Array2<f64>,
    cfg: &SinkhornConfig,
) -> Result<TransportResult> {
    cfg.validate()?;
    let (n, m) = (cost.nrows(), cost.ncols());
    let (a, b) = (1.0 / n as f64, 1.0 / m as f64);

    let max_cost = cost.iter().cloned().fold(0.0f64, f64::max);
    let solve = if max_cost / cfg.epsilon <= SINGLE_STAGE_RATIO {
        let kernel = cost.mapv(|c| (-c / cfg.epsilon).exp());
        match scaling_solve(kernel.view(), cfg, a, b) {
            Some(s) => s,
            None => log_anneal(cost, cfg, a, b),
        }
    } else {
        log_anneal(cost, cfg, a, b)
    };
    finish(solve, cost.view(), cfg, a, b)
}

/// One solve against slices of a cost/kernel pair shared across many
/// subproblems, as produced by [`token_cost_grid`]. Slices have contiguous
/// rows, which is all the solver needs. Returns `Ok(None)` when the slice
/// needs the annealed path instead (large cost/ε ratio or a numeric
/// bailout); callers then rerun via [`sinkhorn_from_cost`] on an owned copy
/// of the cost slice, which computes the identical kernel values.
pub(crate) fn sinkhorn_sliced(
    cost: ArrayView2<'_, f64>,
    kernel: ArrayView2<'_, f64>,
    cfg: &SinkhornConfig,
) -> Result<Option<TransportResult>> {
    cfg.validate()?;
    let (n, m) = (cost.nrows(), cost.ncols());
    let (a, b) = (1.0 / n as f64, 1.0 / m as f64);
    let max_cost = cost
        .rows()
        .into_iter()
        .map(|row| row.iter().cloned().fold(0.0f64, f64::max))
        .fold(0.0f64, f64::max);
    if max_cost / cfg.epsilon > SINGLE_STAGE_RATIO {
        return Ok(None);
    }
    match scaling_solve(kernel, cfg, a, b) {
        Some(s) => finish(s, cost, cfg, a, b).map(Some),
        None => Ok(None),
    }
}

/// Shared epilogue: rounds the plan onto the marginal polytope and
/// evaluates the regularized objective there.
fn finish(
    solve: Solve,
    cost: ArrayView2<'_, f64>,
    cfg: &SinkhornConfig,
    a: f64,
    b: f64,
) -> Result<TransportResult> {
    let plan = round_to_feasible(solve.plan, a, b);

    let mut transport_cost = 0.0;
    let mass_ref = a * b; // product-measure entry
    // Work on plain slices (plan is standard layout, cost rows are
    // contiguous): KL terms accumulate per column across rows, so the pass
    // is independent lanes and vectorizes, `ln` included. The `max` makes
    // the zero-entry case branch-free: a zero plan entry contributes
    // exactly 0 either way (and normal entries are unaffected).
    let m = plan.ncols();
    let mut kl_lanes = vec![0.0f64; m];
    let plan_flat = plan.as_slice().expect("rounded plan is standard layout");
    for (plan_row, cost_row) in plan_flat.chunks_exact(m).zip(cost.rows()) {
        let cost_row = cost_row.to_slice().expect("cost rows are contiguous");
        transport_cost += ndarray::aview1(plan_row).dot(&ndarray::aview1(cost_row));
        for (lane, &g) in kl_lanes.iter_mut().zip(plan_row.iter()) {
            *lane += g * (g.max(f64::MIN_POSITIVE) / mass_ref).ln();
        }
    }
    // The plan is a coupling of two probability measures, so KL >= 0; tiny
    // negative float residue is clamped rather than reported.
    let kl = ndarray::aview1(&kl_lanes).sum().max(0.0);
    let value = transport_cost + cfg.epsilon * kl;
    if !value.is_finite() {
        return Err(ShearError::Numerical(
            "sinkhorn objective is non-finite despite finite inputs".into(),
        ));
    }
    Ok(TransportResult {
        value,
        plan,
        transport_cost,
        iterations_used: solve.iterations,
        converged: solve.converged,
    })
}

/// Multiplicative-domain iterations on a precomputed kernel (owned or a
/// slice; rows must be contiguous, which both are). Returns `None` if the
/// kernel has underflowed entries or any quantity leaves the safe range
/// (caller falls back to the log domain).
fn scaling_solve(
    kernel: ArrayView2<'_, f64>,
    cfg: &SinkhornConfig,
    a: f64,
    b: f64,
) -> Option<Solve> {
    let (n, m) = (kernel.nrows(), kernel.ncols());
    // Rows of the kernel (owned or sliced from a grid) are contiguous; all
    // whole-matrix passes below run on the row slices so they vectorize.
    let rows = || {
        kernel
            .rows()
            .into_iter()
            .map(|row| row.to_slice().expect("kernel rows are contiguous"))
    };
    if rows().any(|row| row.iter().any(|&k| k <= 0.0)) {
        return None; // underflow: cost/epsilon beyond exp range
    }
    let mut u = Array1::from_elem(n, 1.0f64);
    let mut v = Array1::from_elem(m, 1.0f64);
    let mut ktu = Array1::from_elem(m, 0.0f64);
    // Column marginals are exact (to rounding) right after each v-update;
    // the row violation of the state from iteration `done` is measured at
    // the top of the next pass, reusing the K·v matvec the u-update needs
    // anyway. Two matvecs per iteration total: K·v row by row, Kᵀ·u by
    // accumulating column lanes across rows (no transposed copy needed).
    let mut col_violation = f64::INFINITY;
    let mut done = 0usize;
    loop {
        let kv: Array1<f64> = rows().map(|row| ndarray::aview1(row).dot(&v)).collect();
        if kv.iter().any(|&x| x <= 0.0 || !x.is_finite()) {
            return None;
        }
        if done > 0 {
            let row_violation: f64 = u
                .iter()
                .zip(kv.iter())
                .map(|(ui, kvi)| (ui * kvi - a).abs())
                .sum();
            if row_violation < cfg.marginal_tolerance && col_violation < cfg.marginal_tolerance {
                let plan = build_plan(kernel, &u, &v);
                return Some(Solve {
                    plan,
                    iterations: done,
                    converged: true,
                });
            }
        }
        if done == cfg.max_iterations {
            let plan = build_plan(kernel, &u, &v);
            return Some(Solve {
                plan,
                iterations: done,
                converged: false,
            });
        }
        u.zip_mut_with(&kv, |ui, &kvi| *ui = a / kvi);
        ktu.fill(0.0);
        let ktu_lanes = ktu.as_slice_mut().expect("ktu is contiguous");
        for (row, &ui) in rows().zip(u.iter()) {
            for (acc, &k) in ktu_lanes.iter_mut().zip(row.iter()) {
                *acc += k * ui;
            }
        }
        if ktu.iter().any(|&x| x <= 0.0 || !x.is_finite()) {
            return None;
        }
        v.zip_mut_with(&ktu, |vj, &ktuj| *vj = b / ktuj);
        if u.iter().chain(v.iter()).any(|&x| !(x.abs() < SCALE_LIMIT)) {
            return None;
        }
        col_violation = v
            .iter()
            .zip(ktu.iter())
            .map(|(vj, ktuj)| (vj * ktuj - b).abs())
            .sum();
        done += 1;
    }
}

fn build_plan(kernel: ArrayView2<'_, f64>, u: &Array1<f64>, v: &Array1<f64>) -> Array2<f64> {
    let (n, m) = (kernel.nrows(), kernel.ncols());
    let v = v.as_slice().expect("v is contiguous");
    let mut flat = Vec::with_capacity(n * m);
    for (row, &ui) in kernel.rows().into_iter().zip(u.iter()) {
        let row = row.to_slice().expect("kernel rows are contiguous");
        flat.extend(row.iter().zip(v).map(|(&k, &vj)| k * ui * vj));
    }
    Array2::from_shape_vec((n, m), flat).expect("plan dimensions match kernel")
}

/// Log-domain iterations on the dual potentials (f, g), annealed from a
/// larger ε down to the target (always the final stage); immune to under-
/// and overflow for any finite cost and positive epsilon. `converged` refers
/// to the target-ε stage only. The plan is built at the ε of the last stage
/// that iterated, so an exhausted budget cannot produce overflowing entries.
fn log_anneal(cost: &Array2<f64>, cfg: &SinkhornConfig, a: f64, b: f64) -> Solve {
    let (n, m) = (cost.nrows(), cost.ncols());
    let (ln_a, ln_b) = (a.ln(), b.ln());
    let max_cost = cost.iter().cloned().fold(0.0f64, f64::max);

    // Halve from a ratio plain iterations handle comfortably down to the
    // target ε. When the target is already in that range the schedule is a
    // single stage and this is plain log-domain Sinkhorn.
    let mut schedule = Vec::new();
    let mut eps = max_cost / 3.0;
    while eps > cfg.epsilon {
        schedule.push(eps);
        eps /= 2.0;
    }
    schedule.push(cfg.epsilon);

    let mut f = vec![0.0f64; n];
    let mut g = vec![0.0f64; m];
    let mut scratch = vec![0.0f64; n.max(m)];
    let mut used = 0usize;
    let mut converged = false;
    let mut plan_eps = schedule[0];

    'stages: for (si, &eps) in schedule.iter().enumerate() {
        let final_stage = si + 1 == schedule.len();
        let stage_tol = if final_stage {
            cfg.marginal_tolerance
        } else {
            STAGE_TOLERANCE.max(cfg.marginal_tolerance)
        };
        let stage_cap = if final_stage { usize::MAX } else { STAGE_CAP };
        if used >= cfg.max_iterations {
            break;
        }
        plan_eps = eps;
        let mut stage_iters = 0usize;
        loop {
            if used >= cfg.max_iterations || stage_iters >= stage_cap {
                continue 'stages;
            }
            for i in 0..n {
                let row = cost.row(i);
                for j in 0..m {
                    scratch[j] = (g[j] - row[j]) / eps;
                }
                f[i] = eps * (ln_a - log_sum_exp(&scratch[..m]));
            }
            for j in 0..m {
                for (i, s) in scratch.iter_mut().enumerate().take(n) {
                    *s = (f[i] - cost[[i, j]]) / eps;
                }
                g[j] = eps * (ln_b - log_sum_exp(&scratch[..n]));
            }
            used += 1;
            stage_iters += 1;
            // Violation pass: column sums are exact after the g-update,
            // rows drift.
            let mut row_violation = 0.0;
            let mut col_sums = vec![0.0f64; m];
            for i in 0..n {
                let row = cost.row(i);
                let mut row_sum = 0.0;
                for j in 0..m {
                    let entry = ((f[i] + g[j] - row[j]) / eps).exp();
                    row_sum += entry;
                    col_sums[j] += entry;
                }
                row_violation += (row_sum - a).abs();
            }
            let col_violation: f64 = col_sums.iter().map(|c| (c - b).abs()).sum();
            if row_violation < stage_tol && col_violation < stage_tol {
                if final_stage {
                    converged = true;
                }
                continue 'stages;
            }
        }
    }

    let plan = Array2::from_shape_fn((n, m), |(i, j)| {
        ((f[i] + g[j] - cost[[i, j]]) / plan_eps).exp()
    });
    Solve {
        plan,
        iterations: used,
        converged,
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Project a near-coupling onto the exact marginal polytope: shrink
/// overfull rows and columns, then distribute the missing mass as a
/// rank-one correction. Entries stay nonnegative; the result has row sums
/// exactly `a` and column sums exactly `b` up to float rounding. Column
/// sums and scalings run in row-major order (same element order, so the
/// same float results) to keep the whole projection cache-friendly.
fn round_to_feasible(mut plan: Array2<f64>, a: f64, b: f64) -> Array2<f64> {
    let (n, m) = (plan.nrows(), plan.ncols());
    for mut row in plan.rows_mut() {
        let sum: f64 = row.sum();
        if sum > a {
            let scale = a / sum;
            row.mapv_inplace(|x| x * scale);
        }
    }
    let mut col_sums = vec![0.0f64; m];
    for row in plan.rows() {
        for (s, &x) in col_sums.iter_mut().zip(row.iter()) {
            *s += x;
        }
    }
    let col_scale: Vec<f64> = col_sums
        .iter()
        .map(|&s| if s > b { b / s } else { 1.0 })
        .collect();
    let mut row_deficit = vec![0.0f64; n];
    let mut col_sums_after = vec![0.0f64; m];
    for (i, mut row) in plan.rows_mut().into_iter().enumerate() {
        let mut sum = 0.0;
        for ((x, &scale), s) in row
            .iter_mut()
            .zip(col_scale.iter())
            .zip(col_sums_after.iter_mut())
        {
            *x *= scale;
            sum += *x;
            *s += *x;
        }
        row_deficit[i] = (a - sum).max(0.0);
    }
    let col_deficit: Vec<f64> = col_sums_after.iter().map(|&s| (b - s).max(0.0)).collect();
    let total: f64 = row_deficit.iter().sum();
    if total > 0.0 {
        for (i, mut row) in plan.rows_mut().into_iter().enumerate() {
            if row_deficit[i] == 0.0 {
                continue;
            }
            for (x, &cd) in row.iter_mut().zip(col_deficit.iter()) {
                *x += row_deficit[i] * cd / total;
            }
        }
    }
    plan
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::exact_w1;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> PointCloud {
        let data: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-scale..scale)).collect();
        PointCloud::from_flat(data, n, d).unwrap()
    }

    fn cfg(epsilon: f64) -> SinkhornConfig {
        SinkhornConfig {
            epsilon,
            max_iterations: 20_000,
            marginal_tolerance: 1e-6,
        }
    }

    #[test]
    fn singleton_pair_is_exact() {
        let p = PointCloud::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let q = PointCloud::from_rows(&[vec![3.0, 4.0]]).unwrap();
        let r = sinkhorn(&p, &q, &SinkhornConfig::default()).unwrap();
        assert_eq!(r.transport_cost, 5.0);
        assert_eq!(r.value, 5.0); // unique coupling has zero KL
        assert_eq!(r.plan[[0, 0]], 1.0);
        assert!(r.converged);
    }

    #[test]
    fn identical_clouds_stay_inside_the_entropic_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let p = random_cloud(&mut rng, 4, 3, 1.0);
        let r = sinkhorn(&p, &p, &cfg(0.01)).unwrap();
        assert!(r.value >= 0.0);
        assert!(r.value <= 0.01 * (4.0f64).ln() + 1e-9, "value {}", r.value);
    }

    #[test]
    fn band_against_exact_oracle_across_epsilons() {
        // The band must hold whether or not the marginal tolerance was
        // reached: instances with near-tied optimal matchings have a slow
        // final Sinkhorn mode, but feasibility rounding keeps the reported
        // value a valid upper bound and the residual violation (~1e-6) is
        // orders of magnitude below the band's slack.
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let mut converged = 0usize;
        for &eps in &[0.05, 0.5, 4.5] {
            for _ in 0..25 {
                let n = rng.gen_range(1..=16);
                let d = rng.gen_range(1..=8);
                let p = random_cloud(&mut rng, n, d, 1.0);
                let q = random_cloud(&mut rng, n, d, 1.0);
                let w1 = exact_w1(&p, &q).unwrap();
                let r = sinkhorn(&p, &q, &cfg(eps)).unwrap();
                converged += usize::from(r.converged);
                let gap = r.value - w1;
                let band = eps * (n as f64).ln() + 1e-6;
                assert!(
                    (0.0..=band).contains(&gap),
                    "eps={eps} n={n}: gap {gap} outside [0, {band}]"
                );
            }
        }
        assert!(converged >= 70, "only {converged}/75 solves converged");
    }

    #[test]
    fn marginals_hold_after_rounding() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let p = random_cloud(&mut rng, 7, 4, 1.0);
        let q = random_cloud(&mut rng, 5, 4, 1.0);
        let r = sinkhorn(&p, &q, &SinkhornConfig::default()).unwrap();
        assert!(r.converged);
        for i in 0..7 {
            assert!((r.plan.row(i).sum() - 1.0 / 7.0).abs() < 1e-12);
        }
        for j in 0..5 {
            assert!((r.plan.column(j).sum() - 1.0 / 5.0).abs() < 1e-12);
        }
        assert!(r.plan.iter().all(|&g| g >= 0.0));
    }

    #[test]
    fn tiny_epsilon_with_large_costs_switches_to_log_domain() {
        // cost/epsilon ~ 2e4: exp(-2e4) underflows, the multiplicative path
        // must bail out and the log-domain path must still deliver the band.
        let p = PointCloud::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let q = PointCloud::from_rows(&[vec![100.0], vec![250.0]]).unwrap();
        let config = SinkhornConfig {
            epsilon: 0.01,
            max_iterations: 5000,
            marginal_tolerance: 1e-8,
        };
        let r = sinkhorn(&p, &q, &config).unwrap();
        assert!(r.converged);
        assert!(r.value.is_finite());
        let w1 = exact_w1(&p, &q).unwrap();
        assert!(r.value >= w1 - 1e-9);
        assert!(r.value <= w1 + 0.01 * (2.0f64).ln() + 1e-6);
    }

    #[test]
    fn non_convergence_is_reported_not_thrown() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let p = random_cloud(&mut rng, 8, 3, 1.0);
        let q = random_cloud(&mut rng, 8, 3, 1.0);
        let config = SinkhornConfig {
            epsilon: 0.05,
            max_iterations: 1,
            marginal_tolerance: 1e-12,
        };
        let r = sinkhorn(&p, &q, &config).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations_used, 1);
        assert!(r.value.is_finite());
        // rounding still repairs the marginals of the unconverged plan
        for i in 0..8 {
            assert!((r.plan.row(i).sum() - 1.0 / 8.0).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let p = PointCloud::from_rows(&[vec![0.0]]).unwrap();
        for bad in [
            SinkhornConfig {
                epsilon: 0.0,
                ..SinkhornConfig::default()
            },
            SinkhornConfig {
                marginal_tolerance: 0.0,
                ..SinkhornConfig::default()
            },
            SinkhornConfig {
                max_iterations: 0,
                ..SinkhornConfig::default()
            },
        ] {
            assert!(sinkhorn(&p, &p, &bad).is_err());
        }
    }

    #[test]
    fn value_is_permutation_invariant() {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let p = random_cloud(&mut rng, 9, 3, 1.0);
        let q = random_cloud(&mut rng, 6, 3, 1.0);
        let base = sinkhorn(&p, &q, &cfg(0.5)).unwrap().value;
        let mut order: Vec<usize> = (0..9).collect();
        order.shuffle(&mut rng);
        let rows: Vec<Vec<f64>> = order.iter().map(|&i| p.point(i).to_vec()).collect();
        let shuffled = PointCloud::from_rows(&rows).unwrap();
        let permuted = sinkhorn(&shuffled, &q, &cfg(0.5)).unwrap().value;
        assert!((base - permuted).abs() < 1e-9 * (1.0 + base));
    }
}
