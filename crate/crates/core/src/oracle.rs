//! Brute-force reference implementations.
//!
//! Nothing here touches the merge forest or the enhancement code: clusters
//! come from breadth-first flood fill, integrals from explicit quadrature or
//! per-level labeling, and p-values from full enumeration. Intended for tests
//! and small cross-checks only.

use std::collections::VecDeque;
use std::sync::Arc;

use crate::enhance::{EnhanceParams, EnhancedMap};
use crate::error::{Error, Result};
use crate::forest::{Cluster, ClusterTable, MassConvention};
use crate::inference::{PValueMap, SubjectData, T_CAP};
use crate::volume::{neighbors, Connectivity, Mask, StatisticMap};

/// Largest grid (in voxels) the quadrature oracle accepts.
pub const MAX_ORACLE_VOXELS: usize = 16 * 16 * 16;

/// Largest subject count for sign-flip enumeration.
pub const MAX_ENUMERATED_SUBJECTS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub riemann_steps: usize,
    /// Relative tolerance used when comparing against the oracle.
    pub tolerance: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { riemann_steps: 1_000_000, tolerance: 1e-4 }
    }
}

fn adjacency_lists(mask: &Mask, conn: Connectivity) -> Result<Vec<Vec<usize>>> {
    (0..mask.in_mask_count()).map(|v| neighbors(mask, conn, v)).collect()
}

/// Component label and size per voxel among `{v : values[v] >= threshold}`.
fn label(values: &[f64], adj: &[Vec<usize>], threshold: f64) -> (Vec<Option<usize>>, Vec<usize>) {
    let mut labels = vec![None; values.len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for seed in 0..values.len() {
        if labels[seed].is_some() || values[seed] < threshold {
            continue;
        }
        let id = sizes.len();
        let mut size = 0;
        labels[seed] = Some(id);
        queue.push_back(seed);
        while let Some(v) = queue.pop_front() {
            size += 1;
            for &w in &adj[v] {
                if labels[w].is_none() && values[w] >= threshold {
                    labels[w] = Some(id);
                    queue.push_back(w);
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Flood-fill clusters of `{v : h_v >= cdt}`, ordered by smallest member.
pub fn floodfill_clusters(
    map: &StatisticMap,
    conn: Connectivity,
    cdt: f64,
    convention: MassConvention,
) -> Result<ClusterTable> {
    let adj = adjacency_lists(map.mask(), conn)?;
    let (labels, sizes) = label(map.values(), &adj, cdt);
    let mut clusters: Vec<Cluster> = sizes
        .iter()
        .map(|&s| Cluster { root: usize::MAX, extent: s, mass: 0.0, members: Vec::with_capacity(s) })
        .collect();
    for (v, l) in labels.iter().enumerate() {
        if let Some(c) = l {
            let h = map.values()[v];
            clusters[*c].members.push(v);
            clusters[*c].mass += match convention {
                MassConvention::Sum => h,
                MassConvention::ExcessAboveThreshold => h - cdt,
            };
        }
    }
    // Seeds are visited in ascending order, so labels already follow the smallest member.
    Ok(ClusterTable { cdt, mass_convention: convention, clusters })
}

fn check_size(map: &StatisticMap) -> Result<()> {
    if map.mask().shape().voxel_count() > MAX_ORACLE_VOXELS {
        return Err(Error::Budget(format!(
            "oracle grids are limited to {MAX_ORACLE_VOXELS} voxels, got {}",
            map.mask().shape().voxel_count()
        )));
    }
    Ok(())
}

/// Midpoint-rule quadrature of the TFCE integral with `riemann_steps` uniform
/// steps on `(h0, h_max]`.
///
/// The cluster labeling is recomputed whenever a midpoint crosses a voxel
/// height; between crossings the per-step weights `m^H dh` are summed and
/// applied in one go.
pub fn riemann_tfce(
    map: &StatisticMap,
    conn: Connectivity,
    params: &EnhanceParams,
    cfg: &OracleConfig,
) -> Result<EnhancedMap> {
    check_size(map)?;
    if cfg.riemann_steps < 10 {
        return Err(Error::parameter("riemann_steps must be >= 10"));
    }
    let values = map.values();
    let mut out = vec![0.0; values.len()];
    let (h0, h_max) = (params.h0, map.h_max());
    if h_max.is_nan() || h_max <= h0 {
        return EnhancedMap::new(Arc::clone(map.mask()), out);
    }
    let adj = adjacency_lists(map.mask(), conn)?;
    let mut ascending: Vec<f64> = values.iter().copied().filter(|&h| h > h0).collect();
    ascending.sort_by(f64::total_cmp);

    let dh = (h_max - h0) / cfg.riemann_steps as f64;
    let (e, hexp) = (params.extent_exponent, params.height_exponent);
    let mut below = usize::MAX;
    let mut weight_sum = 0.0;
    let mut block_threshold = h0;
    let flush = |out: &mut Vec<f64>, threshold: f64, weight: f64| {
        if weight == 0.0 {
            return;
        }
        let (labels, sizes) = label(values, &adj, threshold);
        for (acc, l) in out.iter_mut().zip(&labels) {
            if let Some(c) = l {
                *acc += (sizes[*c] as f64).powf(e) * weight;
            }
        }
    };
    let mut p = 0;
    for k in 0..cfg.riemann_steps {
        let m = h0 + (k as f64 + 0.5) * dh;
        while p < ascending.len() && ascending[p] < m {
            p += 1;
        }
        if p != below {
            flush(&mut out, block_threshold, weight_sum);
            below = p;
            block_threshold = m;
            weight_sum = 0.0;
        }
        weight_sum += m.powf(hexp) * dh;
    }
    flush(&mut out, block_threshold, weight_sum);
    EnhancedMap::new(Arc::clone(map.mask()), out)
}

/// Exact TFCE by labeling the map at every distinct supra-`h0` height and
/// integrating the constant extent between consecutive heights in closed form.
pub fn brute_force_tfce(map: &StatisticMap, conn: Connectivity, params: &EnhanceParams) -> Result<EnhancedMap> {
    let values = map.values();
    let adj = adjacency_lists(map.mask(), conn)?;
    let mut levels: Vec<f64> = values.iter().copied().filter(|&h| h > params.h0).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let (e, h1) = (params.extent_exponent, params.height_exponent + 1.0);
    let mut out = vec![0.0; values.len()];
    let mut lower = params.h0;
    for &level in &levels {
        let (labels, sizes) = label(values, &adj, level);
        let span = (level.powf(h1) - lower.powf(h1)) / h1;
        for (acc, l) in out.iter_mut().zip(&labels) {
            if let Some(c) = l {
                *acc += (sizes[*c] as f64).powf(e) * span;
            }
        }
        lower = level;
    }
    EnhancedMap::new(Arc::clone(map.mask()), out)
}

fn direct_one_sample_t(data: &SubjectData, signs: &[f64]) -> Vec<f64> {
    let n = data.n_subjects();
    (0..data.n_voxels())
        .map(|v| {
            let xs: Vec<f64> = (0..n).map(|j| signs[j] * data.row(j)[v]).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
            if ss == 0.0 {
                return if mean == 0.0 { 0.0 } else { T_CAP.copysign(mean) };
            }
            let sd = (ss / (n as f64 - 1.0)).sqrt();
            (mean / (sd / (n as f64).sqrt())).clamp(-T_CAP, T_CAP)
        })
        .collect()
}

/// Exact positive-tail TFCE p-values over all `2^n` sign patterns.
///
/// `p_v = #{patterns s : max TFCE under s >= observed TFCE(v)} / 2^n`.
pub fn enumerate_sign_flips(data: &SubjectData, conn: Connectivity, params: &EnhanceParams) -> Result<PValueMap> {
    let n = data.n_subjects();
    if n > MAX_ENUMERATED_SUBJECTS {
        return Err(Error::Budget(format!(
            "sign-flip enumeration is limited to {MAX_ENUMERATED_SUBJECTS} subjects, got {n}"
        )));
    }
    let mask = Arc::clone(data.mask());
    let tfce_under = |pattern: usize| -> Result<Vec<f64>> {
        let signs: Vec<f64> = (0..n).map(|j| if pattern >> j & 1 == 1 { -1.0 } else { 1.0 }).collect();
        let stat = StatisticMap::new(Arc::clone(&mask), direct_one_sample_t(data, &signs))?;
        Ok(brute_force_tfce(&stat, conn, params)?.into_scores())
    };
    let observed = tfce_under(0)?;
    let mut counts = vec![0usize; observed.len()];
    for pattern in 0..1usize << n {
        let scores = if pattern == 0 { observed.clone() } else { tfce_under(pattern)? };
        let max = scores.iter().copied().fold(0.0, f64::max);
        for (c, &t) in counts.iter_mut().zip(&observed) {
            if max >= t {
                *c += 1;
            }
        }
    }
    let total = (1usize << n) as f64;
    PValueMap::new(mask, counts.into_iter().map(|c| c as f64 / total).collect())
}
