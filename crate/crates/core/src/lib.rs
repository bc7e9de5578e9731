//! Exact threshold-free cluster enhancement (TFCE) and nonparametric
//! max-statistic inference.
//!
//! The TFCE integral of a voxel depends on the cluster containing it at every
//! threshold below its height. Sorting voxels by height and merging them with
//! a union-find structure yields a merge forest in which each voxel's chain of
//! absorbing nodes lists exactly the thresholds where its cluster grows, so the
//! integral can be evaluated in closed form for all voxels in one pass.
//!
//! ```
//! use std::sync::Arc;
//! use tfce_core::prelude::*;
//!
//! let mask = Arc::new(Mask::full(GridShape::new([2, 1, 1]).unwrap()));
//! let map = StatisticMap::new(mask.clone(), vec![2.0, 1.0]).unwrap();
//! let adjacency = Adjacency::new(mask, Connectivity::Edge2D).unwrap();
//! let forest = build_forest(&rank_order(&map, 0.0).unwrap(), &adjacency);
//! let tfce = exact_tfce(&forest, &EnhanceParams::default()).unwrap();
//! assert!((tfce.scores()[1] - 2f64.sqrt() / 3.0).abs() < 1e-12);
//! ```

pub mod enhance;
pub mod error;
pub mod fixtures;
pub mod forest;
pub mod inference;
pub mod oracle;
pub mod volume;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::enhance::{
        discretized_tfce, exact_tfce, generalized_statistic, tfce_map, DiscretizationScheme, EnhanceParams,
        EnhancedMap, ExtentWeight, GeneralizedStatistic, HeightWeight,
    };
    pub use crate::forest::{
        build_forest, cluster_summaries, clusters_at_threshold, Cluster, ClusterTable, MassConvention, MergeForest,
    };
    pub use crate::inference::{
        compare_pvalue_maps, one_sample_t, run_inference, two_sample_t, ComparisonReport, Enhancement,
        InferenceOptions, InferenceResult, NullDistribution, PValueMap, RandomizationKind, RandomizationPlan,
        StatisticKind, SubjectData, Tails,
    };
    pub use crate::volume::{neighbors, rank_order, Adjacency, Connectivity, GridShape, Mask, RankOrder, StatisticMap};
}
