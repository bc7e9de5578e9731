//! Nonparametric max-statistic inference.
//!
//! Every randomization (the observed data first, then sign flips or label
//! permutations) yields a statistic map, one merge forest per tail, and from
//! that forest every requested enhanced or cluster statistic. The maximum of
//! each statistic over the mask forms its null distribution; corrected
//! p-values count the randomizations whose maximum reaches the observed score.

mod compare;
mod plan;
mod run;
mod stats;

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::volume::Mask;

pub use compare::{compare_pvalue_maps, log10_differences, ComparisonReport};
pub use plan::{RandomizationKind, RandomizationPlan, ResolvedPlan, Randomization, MAX_EXHAUSTIVE};
pub use run::{
    run_inference, statistic_map, Enhancement, InferenceOptions, InferenceResult, NullDistribution,
    ObservedClusters, PValueMap, StatisticKind, StatisticOutcome, TailOutcome, TailSign, Tails,
};
pub use stats::{one_sample_t, two_sample_t, T_CAP};

/// Per-subject maps over a shared mask, stored subject-major.
#[derive(Debug, Clone)]
pub struct SubjectData {
    mask: Arc<Mask>,
    n_subjects: usize,
    matrix: Vec<f64>,
}

impl SubjectData {
    /// `matrix` holds `n_subjects` rows of `in_mask_count` dense values each.
    pub fn new(mask: Arc<Mask>, n_subjects: usize, matrix: Vec<f64>) -> Result<Self> {
        if n_subjects < 2 {
            return Err(Error::structure(format!("need at least 2 subjects, got {n_subjects}")));
        }
        let n_vox = mask.in_mask_count();
        if matrix.len() != n_subjects * n_vox {
            return Err(Error::structure(format!(
                "subject matrix has {} entries, expected {n_subjects} x {n_vox}",
                matrix.len()
            )));
        }
        if let Some((i, &value)) = matrix.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { voxel: i % n_vox.max(1), value });
        }
        Ok(Self { mask, n_subjects, matrix })
    }

    pub fn from_rows(mask: Arc<Mask>, rows: &[Vec<f64>]) -> Result<Self> {
        let n_vox = mask.in_mask_count();
        if let Some(j) = rows.iter().position(|r| r.len() != n_vox) {
            return Err(Error::structure(format!(
                "subject {j} has {} values, mask has {n_vox}",
                rows[j].len()
            )));
        }
        let matrix = rows.concat();
        Self::new(mask, rows.len(), matrix)
    }

    pub fn mask(&self) -> &Arc<Mask> {
        &self.mask
    }

    pub fn n_subjects(&self) -> usize {
        self.n_subjects
    }

    pub fn n_voxels(&self) -> usize {
        self.mask.in_mask_count()
    }

    pub fn row(&self, subject: usize) -> &[f64] {
        let n = self.n_voxels();
        &self.matrix[subject * n..(subject + 1) * n]
    }
}
