//! Anchor optimization.
//!
//! The target-side anchor matrix is learned so that the relative
//! representation of every target sample, taken w.r.t. the learned anchors,
//! matches the relative representation of its matched source sample. The
//! matching is re-estimated at every step with Sinkhorn. Anchors are kept on
//! the unit sphere by optimizing unconstrained rows `v` and exposing
//! `a = v / |v|`.

use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{
    debug_assert_unit_rows, relative_projection, AnchorSet, EmbeddingSpace, ParallelSeed,
    MIN_NORM,
};
use crate::transport::{cost_matrix_blocked, hard_correspondence, sinkhorn_plan, SinkhornConfig};

/// Learned anchor matrix, stored as raw rows and exposed row-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorEstimate {
    raw: Array2<f64>,
    seed_count: usize,
    pub frozen_seed: bool,
}

impl AnchorEstimate {
    pub fn from_raw(raw: Array2<f64>, seed_count: usize, frozen_seed: bool) -> Result<Self> {
        if seed_count > raw.nrows() {
            return Err(Error::SeedExceedsTotal {
                seed: seed_count,
                total: raw.nrows(),
            });
        }
        for (i, row) in raw.axis_iter(Axis(0)).enumerate() {
            if !(row.dot(&row).sqrt() >= MIN_NORM) {
                return Err(Error::ZeroNormRow(i));
            }
        }
        Ok(Self {
            raw,
            seed_count,
            frozen_seed,
        })
    }

    pub fn raw(&self) -> ArrayView2<'_, f64> {
        self.raw.view()
    }

    pub fn seed_count(&self) -> usize {
        self.seed_count
    }

    pub fn total(&self) -> usize {
        self.raw.nrows()
    }

    pub fn dim(&self) -> usize {
        self.raw.ncols()
    }

    /// Unit-norm anchor rows.
    pub fn exposed(&self) -> Array2<f64> {
        let mut out = self.raw.clone();
        for mut row in out.axis_iter_mut(Axis(0)) {
            let n = row.dot(&row).sqrt();
            row /= n;
        }
        out
    }

    /// Replaces rows whose norm collapsed below `1e-12` with fresh noise.
    /// Returns the number of rows replaced.
    pub fn reseed_collapsed<R: Rng>(&mut self, rng: &mut R) -> usize {
        let mut replaced = 0;
        for (i, mut row) in self.raw.axis_iter_mut(Axis(0)).enumerate() {
            if row.dot(&row).sqrt() < MIN_NORM {
                log::warn!("anchor row {i} collapsed to the origin; re-initializing");
                loop {
                    row.mapv_inplace(|_| rng.sample(StandardNormal));
                    let n = row.dot(&row).sqrt();
                    if n >= MIN_NORM {
                        row /= n;
                        break;
                    }
                }
                replaced += 1;
            }
        }
        replaced
    }
}

/// Seed rows followed by standard-normal rows, all rescaled to unit norm.
pub fn init_anchor_estimate(
    seed_embeddings: ArrayView2<f64>,
    total: usize,
    rng_seed: u64,
) -> Result<AnchorEstimate> {
    let (seed_count, dim) = seed_embeddings.dim();
    if dim == 0 {
        return Err(Error::Empty("anchor dimension"));
    }
    if seed_count > total {
        return Err(Error::SeedExceedsTotal {
            seed: seed_count,
            total,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut raw = Array2::<f64>::zeros((total, dim));
    raw.slice_mut(ndarray::s![..seed_count, ..])
        .assign(&seed_embeddings);
    for mut row in raw.axis_iter_mut(Axis(0)).skip(seed_count) {
        loop {
            row.mapv_inplace(|_| rng.sample(StandardNormal));
            let n = row.dot(&row).sqrt();
            if n >= MIN_NORM {
                row /= n;
                break;
            }
        }
    }
    AnchorEstimate::from_raw(raw, seed_count, false)
}

/// Mean squared error between `r_x_permuted` and `targets · Ãᵀ`, with its
/// gradient w.r.t. the raw anchor rows.
///
/// Per row, `dL/dv = (I - a aᵀ) dL/da / |v|`. Frozen seed rows get a zero gradient.
pub fn loss_and_gradient(
    r_x_permuted: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    estimate: &AnchorEstimate,
) -> Result<(f64, Array2<f64>)> {
    if targets.ncols() != estimate.dim() {
        return Err(Error::DimMismatch {
            expected: estimate.dim(),
            got: targets.ncols(),
        });
    }
    if r_x_permuted.dim() != (targets.nrows(), estimate.total()) {
        return Err(Error::DimMismatch {
            expected: targets.nrows() * estimate.total(),
            got: r_x_permuted.len(),
        });
    }
    let anchors = estimate.exposed();
    let mut diff = targets.dot(&anchors.t());
    diff -= &r_x_permuted;
    let count = diff.len() as f64;
    let mse = diff.iter().map(|d| d * d).sum::<f64>() / count;
    if !mse.is_finite() {
        return Err(Error::NonFiniteLoss);
    }

    // dL/dA = 2/(P·M) · diffᵀ · targets
    let mut grad = diff.t().dot(&targets);
    grad *= 2.0 / count;
    Zip::from(grad.rows_mut())
        .and(anchors.rows())
        .and(estimate.raw.rows())
        .for_each(|mut g, a, v| {
            let radial = g.dot(&a);
            let inv_norm = 1.0 / v.dot(&v).sqrt();
            Zip::from(&mut g)
                .and(&a)
                .for_each(|gi, &ai| *gi = (*gi - radial * ai) * inv_norm);
        });
    if estimate.frozen_seed {
        grad.slice_mut(ndarray::s![..estimate.seed_count, ..])
            .fill(0.0);
    }
    Ok((mse, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Array2<f64>,
    pub second_moment: Array2<f64>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(shape: (usize, usize)) -> Self {
        Self {
            first_moment: Array2::zeros(shape),
            second_moment: Array2::zeros(shape),
            step_count: 0,
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn update(
        &mut self,
        params: &mut Array2<f64>,
        grad: ArrayView2<f64>,
        learning_rate: f64,
        hp: &AdamParams,
    ) -> Result<()> {
        if params.dim() != grad.dim() || self.first_moment.dim() != grad.dim() {
            return Err(Error::DimMismatch {
                expected: params.len(),
                got: grad.len(),
            });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient);
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - hp.beta1.powi(t);
        let bc2 = 1.0 - hp.beta2.powi(t);
        Zip::from(params)
            .and(&mut self.first_moment)
            .and(&mut self.second_moment)
            .and(grad)
            .for_each(|p, m, v, &g| {
                *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
                *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= learning_rate * m_hat / (v_hat.sqrt() + hp.eps);
            });
        Ok(())
    }
}

/// Adam step on the raw rows of `estimate`.
pub fn adam_step(
    estimate: &mut AnchorEstimate,
    grad: ArrayView2<f64>,
    state: &mut AdamState,
    learning_rate: f64,
    hp: &AdamParams,
) -> Result<()> {
    state.update(&mut estimate.raw, grad, learning_rate, hp)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub total_anchors: usize,
    pub seed_anchors: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub adam: AdamParams,
    pub rng_seed: u64,
    pub sinkhorn: SinkhornConfig,
    /// Rows drawn from each space per step; `None` uses every row.
    pub subsample_per_step: Option<usize>,
    pub frozen_seed: bool,
    pub cost_block_entries: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::retrieval()
    }
}

impl OptimizerConfig {
    pub fn retrieval() -> Self {
        Self {
            total_anchors: 300,
            seed_anchors: 15,
            steps: 250,
            learning_rate: 0.02,
            adam: AdamParams::default(),
            rng_seed: 0,
            sinkhorn: SinkhornConfig::default(),
            subsample_per_step: Some(2000),
            frozen_seed: false,
            cost_block_entries: crate::transport::DEFAULT_COST_BLOCK_ENTRIES,
        }
    }

    pub fn stitching() -> Self {
        Self {
            steps: 125,
            learning_rate: 0.05,
            ..Self::retrieval()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed_anchors > self.total_anchors {
            return Err(Error::SeedExceedsTotal {
                seed: self.seed_anchors,
                total: self.total_anchors,
            });
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be > 0".into()));
        }
        if self.subsample_per_step == Some(0) {
            return Err(Error::InvalidConfig("subsample must be >= 1".into()));
        }
        self.sinkhorn.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub mse_loss: f64,
    pub marginal_error: f64,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub records: Vec<StepRecord>,
}

impl OptimizationTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn initial_loss(&self) -> Option<f64> {
        self.records.first().map(|r| r.mse_loss)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.mse_loss)
    }
}

#[derive(Debug, Clone)]
pub struct AnchorOptimization {
    pub estimate: AnchorEstimate,
    pub trace: OptimizationTrace,
    /// Source anchors in the row order of the estimate (seed first).
    pub anchors_x: AnchorSet,
}

/// Moves the source side of the seed to the front of `anchors_x`, keeping
/// the relative order of the remaining anchors.
pub fn seed_first(anchors_x: &AnchorSet, seed: &ParallelSeed) -> Result<AnchorSet> {
    let mut rest: Vec<usize> = anchors_x.indices.clone();
    for &s in &seed.x.indices {
        match rest.iter().position(|&i| i == s) {
            Some(p) => {
                rest.remove(p);
            }
            None => {
                return Err(Error::InvalidConfig(format!(
                    "seed anchor {s} is not among the source anchors"
                )))
            }
        }
    }
    let mut indices = seed.x.indices.clone();
    indices.extend(rest);
    Ok(AnchorSet {
        space_id: anchors_x.space_id.clone(),
        indices,
    })
}

pub fn optimize_anchors(
    space_x: &EmbeddingSpace,
    anchors_x: &AnchorSet,
    space_y: &EmbeddingSpace,
    seed: &ParallelSeed,
    config: &OptimizerConfig,
) -> Result<AnchorOptimization> {
    optimize_anchors_observed(space_x, anchors_x, space_y, seed, config, |_, _| {})
}

/// [`optimize_anchors`] with a callback invoked after every step.
pub fn optimize_anchors_observed<F>(
    space_x: &EmbeddingSpace,
    anchors_x: &AnchorSet,
    space_y: &EmbeddingSpace,
    seed: &ParallelSeed,
    config: &OptimizerConfig,
    mut observer: F,
) -> Result<AnchorOptimization>
where
    F: FnMut(&StepRecord, &AnchorEstimate),
{
    config.validate()?;
    if seed.is_empty() {
        return Err(Error::EmptySeed);
    }
    if anchors_x.len() != config.total_anchors {
        return Err(Error::InvalidConfig(format!(
            "expected {} source anchors, got {}",
            config.total_anchors,
            anchors_x.len()
        )));
    }
    if seed.len() != config.seed_anchors {
        return Err(Error::InvalidConfig(format!(
            "expected {} seed pairs, got {}",
            config.seed_anchors,
            seed.len()
        )));
    }
    let anchors_x = seed_first(anchors_x, seed)?;

    let r_x = anchors_x.project(space_x)?.values;
    let seed_y = seed.y.embeddings(space_y)?;
    let mut estimate = init_anchor_estimate(seed_y.view(), config.total_anchors, config.rng_seed)?;
    estimate.frozen_seed = config.frozen_seed;
    let mut adam = AdamState::new(estimate.raw.dim());
    // separate stream from initialization
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed ^ 0x9E37_79B9_7F4A_7C15);

    let mut trace = OptimizationTrace::default();
    let start = Instant::now();
    for step in 0..config.steps {
        let xs = draw_rows(&mut rng, space_x.len(), config.subsample_per_step);
        let ys = draw_rows(&mut rng, space_y.len(), config.subsample_per_step);
        let r_x_sub = r_x.select(Axis(0), &xs);
        let y_sub = space_y.select(&ys)?;

        let anchors = estimate.exposed();
        let r_y = relative_projection(y_sub.view(), anchors.view())?.values;
        let cost = cost_matrix_blocked(r_x_sub.view(), r_y.view(), config.cost_block_entries)?;
        let plan = sinkhorn_plan(cost.view(), &config.sinkhorn)?;
        let matched = hard_correspondence(&plan);
        let r_x_perm = r_x_sub.select(Axis(0), &matched);

        let (mse, grad) = loss_and_gradient(r_x_perm.view(), y_sub.view(), &estimate)?;
        adam_step(&mut estimate, grad.view(), &mut adam, config.learning_rate, &config.adam)?;
        estimate.reseed_collapsed(&mut rng);
        debug_assert_unit_rows(estimate.exposed().view());

        let record = StepRecord {
            step,
            mse_loss: mse,
            marginal_error: plan.marginal_error,
            wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        log::debug!("step {step}: mse {mse:.6e}");
        observer(&record, &estimate);
        trace.records.push(record);
    }
    Ok(AnchorOptimization {
        estimate,
        trace,
        anchors_x,
    })
}

fn draw_rows(rng: &mut ChaCha8Rng, n: usize, subsample: Option<usize>) -> Vec<usize> {
    match subsample {
        Some(k) if k < n => {
            let mut idx = sample(rng, n, k).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..n).collect(),
    }
}

/// Snaps every anchor row to its cosine-nearest row of `space_y`.
///
/// Returns the anchor set and the number of duplicated indices.
pub fn discretize_anchors(
    estimate: &AnchorEstimate,
    space_y: &EmbeddingSpace,
) -> Result<(AnchorSet, usize)> {
    if estimate.dim() != space_y.dim() {
        return Err(Error::DimMismatch {
            expected: space_y.dim(),
            got: estimate.dim(),
        });
    }
    let anchors = estimate.exposed();
    let sims = anchors.dot(&space_y.vectors().t());
    let indices: Vec<usize> = sims
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
        .collect();
    let mut uniq = indices.clone();
    uniq.sort_unstable();
    uniq.dedup();
    let collisions = indices.len() - uniq.len();
    Ok((AnchorSet::new(space_y, indices)?, collisions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn unit_space(rows: Array2<f64>) -> EmbeddingSpace {
        let keys = (0..rows.nrows()).map(|i| format!("k{i}")).collect();
        EmbeddingSpace::new("y", keys, rows).unwrap()
    }

    #[test]
    fn init_keeps_seed_rows() {
        let seed = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let est = init_anchor_estimate(seed.view(), 5, 3).unwrap();
        assert_eq!(est.raw().slice(ndarray::s![..2, ..]), seed);
        assert_eq!(est.total(), 5);
        for row in est.exposed().rows() {
            assert_abs_diff_eq!(row.dot(&row), 1.0, epsilon = 1e-12);
        }
        let again = init_anchor_estimate(seed.view(), 5, 3).unwrap();
        assert_eq!(est, again);
        let other = init_anchor_estimate(seed.view(), 5, 4).unwrap();
        assert_ne!(est, other);
    }

    #[test]
    fn init_all_seed_has_no_noise() {
        let seed = array![[1.0, 0.0], [0.0, 1.0]];
        let est = init_anchor_estimate(seed.view(), 2, 0).unwrap();
        assert_eq!(est.raw(), seed);
    }

    #[test]
    fn init_rejects_oversized_seed() {
        let seed = array![[1.0, 0.0], [0.0, 1.0]];
        assert!(matches!(
            init_anchor_estimate(seed.view(), 1, 0),
            Err(Error::SeedExceedsTotal { .. })
        ));
    }

    #[test]
    fn zero_loss_when_targets_match() {
        let est = init_anchor_estimate(array![[0.6, 0.8]].view(), 3, 1).unwrap();
        let targets = array![[1.0, 0.0], [0.0, 1.0]];
        let r = targets.dot(&est.exposed().t());
        let (mse, grad) = loss_and_gradient(r.view(), targets.view(), &est).unwrap();
        assert_eq!(mse, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn frozen_seed_rows_get_zero_gradient() {
        let mut est = init_anchor_estimate(array![[0.6, 0.8], [1.0, 0.0]].view(), 4, 1).unwrap();
        est.frozen_seed = true;
        let targets = array![[1.0, 0.0], [0.0, 1.0], [0.6, -0.8]];
        let r = Array2::from_elem((3, 4), 0.3);
        let (_, grad) = loss_and_gradient(r.view(), targets.view(), &est).unwrap();
        assert!(grad.slice(ndarray::s![..2, ..]).iter().all(|&g| g == 0.0));
        assert!(grad.slice(ndarray::s![2.., ..]).iter().any(|&g| g != 0.0));
    }

    #[test]
    fn gradient_is_tangent_to_sphere() {
        let est = init_anchor_estimate(Array2::zeros((0, 3)).view(), 4, 9).unwrap();
        let targets = array![[1.0, 0.0, 0.0], [0.0, 0.6, 0.8]];
        let r = Array2::from_elem((2, 4), -0.2);
        let (_, grad) = loss_and_gradient(r.view(), targets.view(), &est).unwrap();
        for (g, a) in grad.rows().into_iter().zip(est.exposed().rows()) {
            assert_abs_diff_eq!(g.dot(&a), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn adam_first_step_is_lr() {
        let mut p = array![[0.0]];
        let mut st = AdamState::new((1, 1));
        st.update(&mut p, array![[1.0]].view(), 0.1, &AdamParams::default())
            .unwrap();
        assert_abs_diff_eq!(p[[0, 0]], -0.1, epsilon = 1e-6);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = array![[0.5, -1.0]];
        let before = p.clone();
        let mut st = AdamState::new((1, 2));
        st.update(&mut p, Array2::zeros((1, 2)).view(), 0.1, &AdamParams::default())
            .unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn adam_rejects_nan() {
        let mut p = array![[0.5]];
        let mut st = AdamState::new((1, 1));
        assert!(matches!(
            st.update(&mut p, array![[f64::NAN]].view(), 0.1, &AdamParams::default()),
            Err(Error::NonFiniteGradient)
        ));
    }

    #[test]
    fn adam_is_deterministic() {
        let g = array![[0.3, -0.7], [1.5, 0.0]];
        let run = || {
            let mut p = array![[1.0, 2.0], [3.0, 4.0]];
            let mut st = AdamState::new((2, 2));
            for _ in 0..3 {
                st.update(&mut p, g.view(), 0.05, &AdamParams::default()).unwrap();
            }
            (p, st)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn discretize_exact_rows() {
        let space = unit_space(array![
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.6, 0.8, 0.0],
            [0.0, 0.6, 0.8],
            [0.8, 0.0, 0.6],
            [0.0, 0.8, 0.6],
            [0.6, 0.0, 0.8],
            [0.8, 0.6, 0.0],
            [-1.0, 0.0, 0.0],
        ]);
        let raw = space.select(&[5, 9, 2]).unwrap();
        let est = AnchorEstimate::from_raw(raw, 0, false).unwrap();
        let (set, collisions) = discretize_anchors(&est, &space).unwrap();
        assert_eq!(set.indices, vec![5, 9, 2]);
        assert_eq!(collisions, 0);
    }

    #[test]
    fn discretize_counts_collisions() {
        let space = unit_space(array![[1.0, 0.0], [0.0, 1.0]]);
        let est = AnchorEstimate::from_raw(array![[0.9, 0.1], [0.8, 0.3]], 0, false).unwrap();
        let (set, collisions) = discretize_anchors(&est, &space).unwrap();
        assert_eq!(set.indices, vec![0, 0]);
        assert_eq!(collisions, 1);
    }

    #[test]
    fn discretize_dim_mismatch() {
        let space = unit_space(array![[1.0, 0.0]]);
        let est = AnchorEstimate::from_raw(array![[1.0, 0.0, 0.0]], 0, false).unwrap();
        assert!(matches!(
            discretize_anchors(&est, &space),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn reseed_replaces_collapsed_rows() {
        let mut est = AnchorEstimate::from_raw(array![[1.0, 0.0], [0.0, 1.0]], 0, false).unwrap();
        est.raw.row_mut(1).fill(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(est.reseed_collapsed(&mut rng), 1);
        let r = est.raw.row(1);
        assert_abs_diff_eq!(r.dot(&r), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn seed_first_reorders() {
        let space = unit_space(Array2::eye(6));
        let ax = AnchorSet::new(&space, vec![4, 1, 3, 0]).unwrap();
        let seed = ParallelSeed::new(
            AnchorSet::new(&space, vec![3, 0]).unwrap(),
            AnchorSet::new(&space, vec![5, 2]).unwrap(),
        )
        .unwrap();
        assert_eq!(seed_first(&ax, &seed).unwrap().indices, vec![3, 0, 4, 1]);
    }
}
