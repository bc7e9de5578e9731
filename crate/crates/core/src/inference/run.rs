use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::enhance::{discretized_tfce, exact_tfce, DiscretizationScheme, EnhanceParams, EnhancedMap};
use crate::error::{Error, Result};
use crate::forest::{build_forest, cluster_summaries, clusters_at_threshold, ClusterTable, MassConvention, MergeForest};
use crate::inference::plan::{Randomization, RandomizationPlan};
use crate::inference::stats::{check_labels, check_signs, one_sample_t_into, two_sample_t_into};
use crate::inference::SubjectData;
use crate::volume::{rank_order, Adjacency, Mask, StatisticMap};

/// A statistic whose mask-wide maximum is recorded per randomization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "statistic", rename_all = "kebab-case")]
pub enum StatisticKind {
    Tfce,
    ClusterExtent { cdt: f64 },
    ClusterMass { cdt: f64 },
}

impl StatisticKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Tfce => "tfce",
            Self::ClusterExtent { .. } => "cluster-extent",
            Self::ClusterMass { .. } => "cluster-mass",
        }
    }

    fn cdt(&self) -> Option<f64> {
        match *self {
            Self::Tfce => None,
            Self::ClusterExtent { cdt } | Self::ClusterMass { cdt } => Some(cdt),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tails {
    Positive,
    Negative,
    TwoSided,
}

impl Tails {
    fn signs(self) -> &'static [TailSign] {
        match self {
            Self::Positive => &[TailSign::Positive],
            Self::Negative => &[TailSign::Negative],
            Self::TwoSided => &[TailSign::Positive, TailSign::Negative],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailSign {
    Positive,
    Negative,
}

/// TFCE evaluation used inside the randomization loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Enhancement {
    Exact,
    /// Fixed-step baseline; the step is recomputed from each randomization's own maximum.
    Discretized(DiscretizationScheme),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceOptions {
    pub enhancement: Enhancement,
    pub mass_convention: MassConvention,
    /// Worker threads; 0 uses the global pool.
    pub workers: usize,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self { enhancement: Enhancement::Exact, mass_convention: MassConvention::Sum, workers: 0 }
    }
}

/// Per-randomization maxima of one statistic in one tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullDistribution {
    pub statistic: StatisticKind,
    pub tail: TailSign,
    /// Maximum under the identity randomization.
    pub observed_max: f64,
    /// Maxima for randomizations `1..=n_perm`.
    pub maxima: Vec<f64>,
}

impl NullDistribution {
    pub fn n_perm(&self) -> usize {
        self.maxima.len()
    }

    /// `(#{b >= 1 : max_b >= score} + 1) / (n_perm + 1)` for each score.
    pub fn p_values(&self, scores: &[f64]) -> Vec<f64> {
        let mut sorted = self.maxima.clone();
        sorted.sort_unstable_by(f64::total_cmp);
        let denom = (sorted.len() + 1) as f64;
        scores
            .iter()
            .map(|&s| {
                let below = sorted.partition_point(|&m| m < s);
                ((sorted.len() - below) + 1) as f64 / denom
            })
            .collect()
    }

    pub fn p_value(&self, score: f64) -> f64 {
        self.p_values(&[score])[0]
    }
}

/// Corrected p-value per in-mask voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct PValueMap {
    mask: Arc<Mask>,
    p: Vec<f64>,
}

impl PValueMap {
    pub fn new(mask: Arc<Mask>, p: Vec<f64>) -> Result<Self> {
        if p.len() != mask.in_mask_count() {
            return Err(Error::structure(format!("{} p-values for {} voxels", p.len(), mask.in_mask_count())));
        }
        if let Some(i) = p.iter().position(|&x| !(x > 0.0 && x <= 1.0)) {
            return Err(Error::structure(format!("p-value {} at voxel {i} outside (0, 1]", p[i])));
        }
        Ok(Self { mask, p })
    }

    pub fn mask(&self) -> &Arc<Mask> {
        &self.mask
    }

    pub fn values(&self) -> &[f64] {
        &self.p
    }

    pub fn to_grid(&self) -> Vec<f64> {
        self.mask.scatter(&self.p, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservedClusters {
    pub table: ClusterTable,
    /// Corrected p-value per table entry.
    pub p: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TailOutcome {
    pub tail: TailSign,
    /// Observed voxel scores: TFCE, or the containing cluster's extent/mass.
    pub scores: EnhancedMap,
    pub null: NullDistribution,
    pub clusters: Option<ObservedClusters>,
    pub p: PValueMap,
}

#[derive(Debug, Clone)]
pub struct StatisticOutcome {
    pub kind: StatisticKind,
    pub tails: Vec<TailOutcome>,
    /// Per-voxel p-values over the requested tails (`min(1, 2 min(p+, p-))` when two-sided).
    pub p: PValueMap,
}

#[derive(Debug, Clone)]
pub struct InferenceResult {
    /// Observed statistic map.
    pub statistic: StatisticMap,
    pub n_perm: usize,
    pub outcomes: Vec<StatisticOutcome>,
    pub warnings: Vec<String>,
}

impl InferenceResult {
    pub fn outcome(&self, name: &str) -> Option<&StatisticOutcome> {
        self.outcomes.iter().find(|o| o.kind.name() == name)
    }
}

/// Statistic map of the data under one randomization.
pub fn statistic_map(data: &SubjectData, randomization: &Randomization) -> Result<StatisticMap> {
    let (mut out, mut scratch) = (Vec::new(), Vec::new());
    match randomization {
        Randomization::Signs(s) => {
            check_signs(data, s)?;
            one_sample_t_into(data, s, &mut out, &mut scratch);
        }
        Randomization::Labels(l) => {
            check_labels(data, l)?;
            two_sample_t_into(data, l, &mut out, &mut scratch);
        }
    }
    StatisticMap::new(Arc::clone(data.mask()), out)
}

struct Context<'a> {
    adjacency: &'a Adjacency,
    params: &'a EnhanceParams,
    requested: &'a [StatisticKind],
    options: &'a InferenceOptions,
}

impl Context<'_> {
    fn forest(&self, map: &StatisticMap) -> Result<MergeForest> {
        Ok(build_forest(&rank_order(map, self.params.h0)?, self.adjacency))
    }

    fn tfce(&self, map: &StatisticMap, forest: &MergeForest) -> Result<EnhancedMap> {
        match self.options.enhancement {
            Enhancement::Exact => exact_tfce(forest, self.params),
            Enhancement::Discretized(scheme) => discretized_tfce(map, self.adjacency, self.params, &scheme),
        }
    }

    /// Mask-wide maximum of every requested statistic.
    fn maxima(&self, map: &StatisticMap) -> Result<Vec<f64>> {
        let forest = self.forest(map)?;
        let conv = self.options.mass_convention;
        self.requested
            .iter()
            .map(|kind| {
                Ok(match *kind {
                    StatisticKind::Tfce => self.tfce(map, &forest)?.max(),
                    StatisticKind::ClusterExtent { cdt } => cluster_summaries(&forest, cdt, conv)?
                        .iter()
                        .map(|c| c.extent as f64)
                        .fold(0.0, f64::max),
                    StatisticKind::ClusterMass { cdt } => cluster_summaries(&forest, cdt, conv)?
                        .iter()
                        .map(|c| c.mass)
                        .fold(0.0, f64::max),
                })
            })
            .collect()
    }

    /// Full observed outputs: voxel scores and cluster tables per statistic.
    fn observed(&self, map: &StatisticMap) -> Result<Vec<(EnhancedMap, Option<ClusterTable>)>> {
        let forest = self.forest(map)?;
        let mask = Arc::clone(map.mask());
        self.requested
            .iter()
            .map(|kind| match *kind {
                StatisticKind::Tfce => Ok((self.tfce(map, &forest)?, None)),
                StatisticKind::ClusterExtent { cdt } | StatisticKind::ClusterMass { cdt } => {
                    let table = clusters_at_threshold(&forest, cdt, self.options.mass_convention)?;
                    let mut scores = vec![0.0; mask.in_mask_count()];
                    for c in &table.clusters {
                        let s = cluster_score(kind, c.extent, c.mass);
                        for &m in &c.members {
                            scores[m] = s;
                        }
                    }
                    Ok((EnhancedMap::new(Arc::clone(&mask), scores)?, Some(table)))
                }
            })
            .collect()
    }
}

fn cluster_score(kind: &StatisticKind, extent: usize, mass: f64) -> f64 {
    match kind {
        StatisticKind::ClusterMass { .. } => mass,
        _ => extent as f64,
    }
}

fn tail_map(map: &StatisticMap, tail: TailSign) -> StatisticMap {
    match tail {
        TailSign::Positive => map.clone(),
        TailSign::Negative => map.negated(),
    }
}

/// Run the full randomization procedure.
///
/// For each randomization the statistic map is computed once per tail, one
/// merge forest is built from it, and every requested statistic is read from
/// that forest. Results are independent of `options.workers`.
pub fn run_inference(
    data: &SubjectData,
    adjacency: &Adjacency,
    params: &EnhanceParams,
    plan: &RandomizationPlan,
    requested: &[StatisticKind],
    tails: Tails,
    options: &InferenceOptions,
) -> Result<InferenceResult> {
    params.validate()?;
    if requested.is_empty() {
        return Err(Error::parameter("no statistics requested"));
    }
    for kind in requested {
        if let Some(cdt) = kind.cdt() {
            if !(cdt.is_finite() && cdt > 0.0 && cdt > params.h0) {
                return Err(Error::parameter(format!(
                    "{} threshold {cdt} must be positive and exceed h0 = {}",
                    kind.name(),
                    params.h0
                )));
            }
        }
    }
    if **adjacency.mask() != **data.mask() {
        return Err(Error::structure("adjacency and subject data use different masks"));
    }
    if let Enhancement::Discretized(s) = options.enhancement {
        if s.steps == 0 {
            return Err(Error::parameter("discretization needs at least one threshold"));
        }
    }

    let resolved = plan.resolve(data.n_subjects())?;
    let n_perm = resolved.n_perm();
    let ctx = Context { adjacency, params, requested, options };
    let signs = tails.signs();

    let observed_stat = statistic_map(data, resolved.get(0))?;
    let observed: Vec<Vec<(EnhancedMap, Option<ClusterTable>)>> =
        signs.iter().map(|&t| ctx.observed(&tail_map(&observed_stat, t))).collect::<Result<_>>()?;

    let null_rows = |b: usize| -> Result<Vec<f64>> {
        let stat = statistic_map(data, resolved.get(b))?;
        let mut row = Vec::with_capacity(signs.len() * requested.len());
        for &t in signs {
            row.extend(ctx.maxima(&tail_map(&stat, t))?);
        }
        Ok(row)
    };
    let rows: Vec<Vec<f64>> = if options.workers == 0 {
        (1..=n_perm).into_par_iter().map(null_rows).collect::<Result<_>>()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(options.workers)
            .build()
            .map_err(|e| Error::parameter(format!("cannot start worker pool: {e}")))?
            .install(|| (1..=n_perm).into_par_iter().map(null_rows).collect::<Result<_>>())?
    };

    let mut warnings = Vec::new();
    let mut outcomes = Vec::with_capacity(requested.len());
    let mask = Arc::clone(data.mask());
    for (s, kind) in requested.iter().enumerate() {
        let mut tail_outcomes = Vec::with_capacity(signs.len());
        for (ti, (&tail, obs)) in signs.iter().zip(observed.iter()).enumerate() {
            let (scores, table) = obs[s].clone();
            let column = ti * requested.len() + s;
            let null = NullDistribution {
                statistic: *kind,
                tail,
                observed_max: scores.max(),
                maxima: rows.iter().map(|r| r[column]).collect(),
            };
            let (p, clusters) = match table {
                None => (null.p_values(scores.scores()), None),
                Some(table) => {
                    if table.is_empty() && null.maxima.iter().all(|&m| m == 0.0) {
                        warnings.push(format!(
                            "{} ({:?} tail): cdt {} is at or above h_max in every randomization; cluster p-values are 1",
                            kind.name(),
                            tail,
                            table.cdt
                        ));
                    }
                    let cluster_scores: Vec<f64> =
                        table.clusters.iter().map(|c| cluster_score(kind, c.extent, c.mass)).collect();
                    let cp = null.p_values(&cluster_scores);
                    let mut voxel_p = vec![1.0; mask.in_mask_count()];
                    for (c, &pc) in table.clusters.iter().zip(&cp) {
                        for &m in &c.members {
                            voxel_p[m] = pc;
                        }
                    }
                    (voxel_p, Some(ObservedClusters { table, p: cp }))
                }
            };
            tail_outcomes.push(TailOutcome {
                tail,
                scores,
                null,
                clusters,
                p: PValueMap::new(Arc::clone(&mask), p)?,
            });
        }
        let combined = if tail_outcomes.len() == 1 {
            tail_outcomes[0].p.clone()
        } else {
            let (a, b) = (tail_outcomes[0].p.values(), tail_outcomes[1].p.values());
            let p = a.iter().zip(b).map(|(&x, &y)| (2.0 * x.min(y)).min(1.0)).collect();
            PValueMap::new(Arc::clone(&mask), p)?
        };
        outcomes.push(StatisticOutcome { kind: *kind, tails: tail_outcomes, p: combined });
    }

    Ok(InferenceResult { statistic: observed_stat, n_perm, outcomes, warnings })
}
