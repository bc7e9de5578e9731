//! Cluster enhancement of statistic maps.
//!
//! The extent of the cluster containing a voxel is piecewise constant in the
//! threshold, changing only at the heights listed by the voxel's absorption
//! chain in the merge forest. Integrals over the threshold therefore reduce to
//! one closed-form term per chain link, accumulated from the roots downwards.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{build_forest, MergeForest};
use crate::volume::{rank_order, Adjacency, Mask, StatisticMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnhanceParams {
    /// Extent exponent `E`.
    pub extent_exponent: f64,
    /// Height exponent `H`.
    pub height_exponent: f64,
    /// Lower integration bound.
    pub h0: f64,
}

impl Default for EnhanceParams {
    fn default() -> Self {
        Self { extent_exponent: 0.5, height_exponent: 2.0, h0: 0.0 }
    }
}

impl EnhanceParams {
    pub fn new(extent_exponent: f64, height_exponent: f64, h0: f64) -> Result<Self> {
        let p = Self { extent_exponent, height_exponent, h0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("E", self.extent_exponent), ("H", self.height_exponent), ("h0", self.h0)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::parameter(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Uniform thresholds `tau_i = i * h_max / steps`, `i = 1..=steps`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscretizationScheme {
    pub steps: usize,
}

impl Default for DiscretizationScheme {
    fn default() -> Self {
        Self { steps: 100 }
    }
}

/// Weight on the height threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum HeightWeight {
    Power(f64),
    One,
    /// Point mass at the voxel's own height.
    DiracAtOwnHeight,
}

/// Weight on the cluster extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ExtentWeight {
    Power(f64),
    Identity,
    IndicatorPositive,
}

/// `T(v) = integral over h > h0 of g(e_v(h)) f(h) dh`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedStatistic {
    pub height: HeightWeight,
    pub extent: ExtentWeight,
}

impl GeneralizedStatistic {
    pub fn tfce(extent_exponent: f64, height_exponent: f64) -> Self {
        Self { height: HeightWeight::Power(height_exponent), extent: ExtentWeight::Power(extent_exponent) }
    }

    pub fn peak_height() -> Self {
        Self { height: HeightWeight::One, extent: ExtentWeight::IndicatorPositive }
    }

    pub fn cluster_extent() -> Self {
        Self { height: HeightWeight::DiracAtOwnHeight, extent: ExtentWeight::Identity }
    }

    pub fn cluster_mass() -> Self {
        Self { height: HeightWeight::One, extent: ExtentWeight::Identity }
    }
}

/// Enhanced scores per in-mask voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancedMap {
    mask: Arc<Mask>,
    scores: Vec<f64>,
}

impl EnhancedMap {
    pub fn new(mask: Arc<Mask>, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != mask.in_mask_count() {
            return Err(Error::structure(format!(
                "{} scores for a mask of {} voxels",
                scores.len(),
                mask.in_mask_count()
            )));
        }
        Ok(Self { mask, scores })
    }

    pub fn zeros(mask: Arc<Mask>) -> Self {
        let n = mask.in_mask_count();
        Self { mask, scores: vec![0.0; n] }
    }

    pub fn mask(&self) -> &Arc<Mask> {
        &self.mask
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn into_scores(self) -> Vec<f64> {
        self.scores
    }

    /// Largest score, 0 for an empty mask.
    pub fn max(&self) -> f64 {
        self.scores.iter().copied().fold(0.0, f64::max)
    }

    pub fn to_grid(&self) -> Vec<f64> {
        self.mask.scatter(&self.scores, 0.0)
    }
}

/// `x^e` with exact fast paths for the common small exponents.
#[inline]
pub(crate) fn pow(x: f64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else if e == 0.5 {
        x.sqrt()
    } else if e == 1.0 {
        x
    } else if e == 2.0 {
        x * x
    } else if e == 3.0 {
        x * x * x
    } else if e.fract() == 0.0 && e.abs() <= i32::MAX as f64 {
        x.powi(e as i32)
    } else {
        x.powf(e)
    }
}

thread_local! {
    static CHAIN_SCRATCH: std::cell::RefCell<Vec<f64>> = const { std::cell::RefCell::new(Vec::new()) };
}

/// Accumulate `scale * w(extent) * (F(h_r) - F(h_parent))` down every
/// absorption chain, where `F` is an antiderivative of the height weight,
/// and scatter the per-rank sums to voxels.
fn integrate_chains(
    forest: &MergeForest,
    antiderivative: impl Fn(f64) -> f64,
    scale: f64,
    extent_weight: impl Fn(f64) -> f64,
) -> EnhancedMap {
    let n = forest.len();
    let heights = forest.heights();
    let base = antiderivative(forest.h0());
    let absorbed = forest.absorbed_by_raw();
    let extents = forest.extents();
    let order = forest.order();
    let mut scores = vec![0.0; forest.mask().in_mask_count()];
    CHAIN_SCRATCH.with(|t| {
        let t = &mut *t.borrow_mut();
        t.clear();
        t.resize(n, 0.0);
        for r in (0..n).rev() {
            let w = scale * extent_weight(extents[r] as f64);
            let x = match absorbed[r] {
                u if u == u32::MAX => w * (antiderivative(heights[r]) - base),
                u => t[u as usize] + w * (antiderivative(heights[r]) - antiderivative(heights[u as usize])),
            };
            t[r] = x;
            scores[order[r] as usize] = x;
        }
    });
    EnhancedMap { mask: Arc::clone(forest.mask()), scores }
}

fn scatter_ranks(forest: &MergeForest, by_rank: &[f64]) -> EnhancedMap {
    let mut scores = vec![0.0; forest.mask().in_mask_count()];
    for (&v, &t) in forest.order().iter().zip(by_rank) {
        scores[v as usize] = t;
    }
    EnhancedMap { mask: Arc::clone(forest.mask()), scores }
}

fn check_h0(forest: &MergeForest, params: &EnhanceParams) -> Result<()> {
    params.validate()?;
    if forest.h0() != params.h0 {
        return Err(Error::parameter(format!(
            "forest was built with h0 = {}, enhancement requested h0 = {}",
            forest.h0(),
            params.h0
        )));
    }
    Ok(())
}

/// Exact TFCE scores for every voxel of the forest.
pub fn exact_tfce(forest: &MergeForest, params: &EnhanceParams) -> Result<EnhancedMap> {
    check_h0(forest, params)?;
    let (e, h1) = (params.extent_exponent, params.height_exponent + 1.0);
    Ok(integrate_chains(forest, |h| pow(h, h1), 1.0 / h1, |x| pow(x, e)))
}

/// Convenience wrapper: rank, build the forest and enhance in one call.
pub fn tfce_map(map: &StatisticMap, adjacency: &Adjacency, params: &EnhanceParams) -> Result<EnhancedMap> {
    params.validate()?;
    let forest = build_forest(&rank_order(map, params.h0)?, adjacency);
    exact_tfce(&forest, params)
}

/// Riemann-sum TFCE over uniform thresholds up to `h_max`, the conventional
/// fixed-step approximation. Thresholds at or below `h0` are skipped.
pub fn discretized_tfce(
    map: &StatisticMap,
    adjacency: &Adjacency,
    params: &EnhanceParams,
    scheme: &DiscretizationScheme,
) -> Result<EnhancedMap> {
    params.validate()?;
    if scheme.steps == 0 {
        return Err(Error::parameter("discretization needs at least one threshold"));
    }
    let h_max = map.h_max();
    if h_max <= 0.0 || h_max.is_nan() || h_max <= params.h0 {
        return Ok(EnhancedMap::zeros(Arc::clone(map.mask())));
    }
    let forest = build_forest(&rank_order(map, params.h0)?, adjacency);
    let ext_pow: Vec<f64> =
        forest.extents().iter().map(|&x| pow(x as f64, params.extent_exponent)).collect();
    let dt = h_max / scheme.steps as f64;
    let mut t = vec![0.0; forest.len()];
    let mut labels = Vec::new();
    for i in 1..=scheme.steps {
        let tau = if i == scheme.steps { h_max } else { i as f64 * dt };
        if tau <= params.h0 {
            continue;
        }
        let k = forest.count_at_or_above(tau);
        forest.root_labels(k, &mut labels);
        let w = pow(tau, params.height_exponent) * dt;
        for (acc, &root) in t[..k].iter_mut().zip(&labels) {
            *acc += ext_pow[root as usize] * w;
        }
    }
    Ok(scatter_ranks(&forest, &t))
}

/// Evaluate any member of the height/extent integral family on the forest.
pub fn generalized_statistic(forest: &MergeForest, stat: &GeneralizedStatistic) -> EnhancedMap {
    let g = |x: f64| match stat.extent {
        ExtentWeight::Power(e) => pow(x, e),
        ExtentWeight::Identity => x,
        ExtentWeight::IndicatorPositive => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
    };
    match stat.height {
        HeightWeight::Power(hexp) => {
            let h1 = hexp + 1.0;
            integrate_chains(forest, |h| pow(h, h1), 1.0 / h1, g)
        }
        HeightWeight::One => integrate_chains(forest, |h| h, 1.0, g),
        HeightWeight::DiracAtOwnHeight => {
            let by_rank: Vec<f64> = forest.extents().iter().map(|&x| g(x as f64)).collect();
            scatter_ranks(forest, &by_rank)
        }
    }
}
