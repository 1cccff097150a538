//! Entropic optimal transport between two sets of relative representations.
//!
//! Sinkhorn runs entirely in the log domain: the plan is never formed from
//! `exp(-C/eps)` directly, so eps as small as 1e-4 stays finite for costs of
//! order one. Marginals are uniform on both sides.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::RelativeRepresentation;

/// Default cap on cost entries computed in one block.
pub const DEFAULT_COST_BLOCK_ENTRIES: usize = 16_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    pub eps: f64,
    pub max_steps: usize,
    pub stop_error: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            max_steps: 1,
            stop_error: 1e-5,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(Error::InvalidConfig(format!("sinkhorn eps must be > 0, got {}", self.eps)));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidConfig("sinkhorn max_steps must be >= 1".into()));
        }
        if !(self.stop_error > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "sinkhorn stop_error must be > 0, got {}",
                self.stop_error
            )));
        }
        Ok(())
    }
}

/// Coupling between `P` target rows and `Nx` source columns.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub plan: Array2<f64>,
    pub eps: f64,
    pub iterations_run: usize,
    pub marginal_error: f64,
}

/// Squared Euclidean distances, `cost[i][j] = |tgt_i - src_j|²`.
pub fn cost_matrix(
    source: &RelativeRepresentation,
    target: &RelativeRepresentation,
) -> Result<Array2<f64>> {
    cost_matrix_blocked(
        source.values.view(),
        target.values.view(),
        DEFAULT_COST_BLOCK_ENTRIES,
    )
}

/// As [`cost_matrix`], filling the output in row blocks of at most
/// `block_entries` entries.
pub fn cost_matrix_blocked(
    source: ArrayView2<f64>,
    target: ArrayView2<f64>,
    block_entries: usize,
) -> Result<Array2<f64>> {
    if source.ncols() != target.ncols() {
        return Err(Error::DimMismatch {
            expected: source.ncols(),
            got: target.ncols(),
        });
    }
    let (p, nx) = (target.nrows(), source.nrows());
    let src_sq: Array1<f64> = source.map_axis(Axis(1), |r| r.dot(&r));
    let tgt_sq: Array1<f64> = target.map_axis(Axis(1), |r| r.dot(&r));
    let rows_per_block = (block_entries / nx.max(1)).max(1);
    let mut cost = Array2::zeros((p, nx));
    let mut start = 0;
    while start < p {
        let end = (start + rows_per_block).min(p);
        let cross = target.slice(s![start..end, ..]).dot(&source.t());
        let mut block = cost.slice_mut(s![start..end, ..]);
        for ((i, j), c) in block.indexed_iter_mut() {
            // cancellation can leave tiny negatives
            *c = (tgt_sq[start + i] + src_sq[j] - 2.0 * cross[[i, j]]).max(0.0);
        }
        start = end;
    }
    Ok(cost)
}

fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Log-domain Sinkhorn with uniform marginals.
///
/// One step updates the row potential then the column potential. The loop
/// stops after `max_steps` or once the row marginals are within
/// `stop_error` of uniform; a final row update makes row sums exact.
pub fn sinkhorn_plan(cost: ArrayView2<f64>, config: &SinkhornConfig) -> Result<TransportPlan> {
    config.validate()?;
    let (p, nx) = cost.dim();
    if p == 0 || nx == 0 {
        return Err(Error::Empty("cost matrix"));
    }
    if let Some(((i, j), _)) = cost.indexed_iter().find(|(_, c)| !c.is_finite()) {
        return Err(Error::NonFiniteCost(i, j));
    }
    let eps = config.eps;
    let log_a = -(p as f64).ln();
    let log_b = -(nx as f64).ln();
    // scaled potentials: f/eps and g/eps
    let scaled: Array2<f64> = cost.mapv(|c| -c / eps);
    let mut f = Array1::<f64>::zeros(p);
    let mut g = Array1::<f64>::zeros(nx);

    let update_rows = |f: &mut Array1<f64>, g: &Array1<f64>| {
        for (i, row) in scaled.axis_iter(Axis(0)).enumerate() {
            f[i] = log_a - logsumexp(row.iter().zip(g.iter()).map(|(k, gj)| k + gj));
        }
    };
    // column logsumexp, traversed row-major for cache locality
    let update_cols = |f: &Array1<f64>, g: &mut Array1<f64>| {
        let mut max = Array1::from_elem(nx, f64::NEG_INFINITY);
        for (row, fi) in scaled.axis_iter(Axis(0)).zip(f.iter()) {
            max.zip_mut_with(&row, |m, k| *m = m.max(k + fi));
        }
        let mut sum = Array1::<f64>::zeros(nx);
        for (row, fi) in scaled.axis_iter(Axis(0)).zip(f.iter()) {
            ndarray::Zip::from(&mut sum)
                .and(&row)
                .and(&max)
                .for_each(|s, k, m| *s += (k + fi - m).exp());
        }
        ndarray::Zip::from(g)
            .and(&max)
            .and(&sum)
            .for_each(|gj, m, s| *gj = log_b - (m + s.ln()));
    };
    let row_error = |f: &Array1<f64>, g: &Array1<f64>| {
        let target = 1.0 / p as f64;
        scaled
            .axis_iter(Axis(0))
            .enumerate()
            .map(|(i, row)| {
                let s: f64 = row.iter().zip(g.iter()).map(|(k, gj)| (k + f[i] + gj).exp()).sum();
                (s - target).abs()
            })
            .fold(0.0, f64::max)
    };

    let mut iterations_run = 0;
    for step in 0..config.max_steps {
        update_rows(&mut f, &g);
        update_cols(&f, &mut g);
        iterations_run += 1;
        if step + 1 < config.max_steps && row_error(&f, &g) < config.stop_error {
            break;
        }
    }
    update_rows(&mut f, &g);

    let mut plan = scaled;
    for ((i, j), v) in plan.indexed_iter_mut() {
        *v = (*v + f[i] + g[j]).exp();
    }
    if plan.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalOverflow);
    }
    let marginal_error = marginal_error(plan.view());
    Ok(TransportPlan {
        plan,
        eps,
        iterations_run,
        marginal_error,
    })
}

/// Max deviation of row and column sums from uniform marginals.
pub fn marginal_error(plan: ArrayView2<f64>) -> f64 {
    let (p, nx) = plan.dim();
    let rows = plan
        .sum_axis(Axis(1))
        .iter()
        .map(|s| (s - 1.0 / p as f64).abs())
        .fold(0.0, f64::max);
    let cols = plan
        .sum_axis(Axis(0))
        .iter()
        .map(|s| (s - 1.0 / nx as f64).abs())
        .fold(0.0, f64::max);
    rows.max(cols)
}

/// Per-row argmax of the plan: target index -> source index.
///
/// Ties go to the lowest source index. Several targets may map to the same source.
pub fn hard_correspondence(plan: &TransportPlan) -> Vec<usize> {
    plan.plan
        .axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn rel(values: Array2<f64>) -> RelativeRepresentation {
        RelativeRepresentation { values }
    }

    fn converged(eps: f64, steps: usize) -> SinkhornConfig {
        SinkhornConfig {
            eps,
            max_steps: steps,
            stop_error: 1e-12,
        }
    }

    #[test]
    fn cost_examples() {
        let a = rel(array![[1.0, 0.0], [0.0, 1.0]]);
        let c = cost_matrix(&a, &a).unwrap();
        assert_abs_diff_eq!(c, array![[0.0, 2.0], [2.0, 0.0]], epsilon = 1e-12);

        let src = rel(array![[0.5, 0.5, 0.0]]);
        let tgt = rel(array![[1.0, 0.0, 0.0]]);
        assert_abs_diff_eq!(cost_matrix(&src, &tgt).unwrap()[[0, 0]], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn cost_blocking_matches_single_block() {
        let src = array![[0.1, 0.2], [0.3, -0.4], [0.9, 0.0]];
        let tgt = array![[0.5, 0.5], [-0.2, 0.1], [0.0, 1.0], [0.3, 0.3]];
        let one = cost_matrix_blocked(src.view(), tgt.view(), usize::MAX).unwrap();
        let tiny = cost_matrix_blocked(src.view(), tgt.view(), 1).unwrap();
        assert_eq!(one, tiny);
    }

    #[test]
    fn cost_dim_mismatch() {
        let err = cost_matrix(&rel(array![[1.0, 0.0]]), &rel(array![[1.0]])).unwrap_err();
        assert!(matches!(err, Error::DimMismatch { .. }));
    }

    #[test]
    fn zero_cost_gives_uniform_plan() {
        for eps in [1e-4, 1.0, 10.0] {
            let cfg = SinkhornConfig { eps, ..Default::default() };
            let tp = sinkhorn_plan(Array2::zeros((2, 2)).view(), &cfg).unwrap();
            assert_abs_diff_eq!(tp.plan, Array2::from_elem((2, 2), 0.25), epsilon = 1e-12);
        }
    }

    #[test]
    fn small_eps_recovers_identity_matching() {
        let cost = array![[0.0, 1.0], [1.0, 0.0]];
        let tp = sinkhorn_plan(cost.view(), &converged(0.01, 200)).unwrap();
        assert_abs_diff_eq!(tp.plan, array![[0.5, 0.0], [0.0, 0.5]], epsilon = 1e-4);
        assert_eq!(hard_correspondence(&tp), vec![0, 1]);
    }

    #[test]
    fn large_eps_matches_closed_form() {
        // symmetric 2x2: diagonal/off-diagonal ratio is exp(1/eps), rows sum to 1/2
        let eps = 100.0;
        let ratio = (1.0_f64 / eps).exp();
        let diag = 0.5 * ratio / (1.0 + ratio);
        let expected = array![[diag, 0.5 - diag], [0.5 - diag, diag]];
        let cost = array![[0.0, 1.0], [1.0, 0.0]];
        let tp = sinkhorn_plan(cost.view(), &converged(eps, 200)).unwrap();
        assert_abs_diff_eq!(tp.plan, expected, epsilon = 1e-12);
        // 0.25125 on the diagonal: close to, but not within 1e-3 of, uniform
        assert_abs_diff_eq!(tp.plan, Array2::from_elem((2, 2), 0.25), epsilon = 1.5e-3);
    }

    #[test]
    fn default_single_step_has_exact_rows() {
        let cost = array![[0.3, 1.2, 0.7], [0.1, 0.0, 2.0]];
        let tp = sinkhorn_plan(cost.view(), &SinkhornConfig::default()).unwrap();
        assert_eq!(tp.iterations_run, 1);
        for s in tp.plan.sum_axis(Axis(1)) {
            assert_abs_diff_eq!(s, 0.5, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(tp.plan.sum(), 1.0, epsilon = 1e-6);
        assert!(tp.plan.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn rejects_non_finite_cost() {
        let cost = array![[0.0, f64::NAN]];
        let err = sinkhorn_plan(cost.view(), &SinkhornConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteCost(0, 1)));
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = SinkhornConfig { eps: 0.0, ..Default::default() };
        assert!(matches!(
            sinkhorn_plan(array![[0.0]].view(), &cfg),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn argmax_ties_and_identity() {
        let tp = TransportPlan {
            plan: array![[0.1, 0.1], [0.0, 0.2]],
            eps: 1.0,
            iterations_run: 0,
            marginal_error: 0.0,
        };
        assert_eq!(hard_correspondence(&tp), vec![0, 1]);
        let tp = TransportPlan {
            plan: array![[0.3, 0.01, 0.02], [0.0, 0.3, 0.03], [0.01, 0.0, 0.3]],
            ..tp
        };
        assert_eq!(hard_correspondence(&tp), vec![0, 1, 2]);
    }
}
