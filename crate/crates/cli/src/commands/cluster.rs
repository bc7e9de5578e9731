use std::sync::Arc;

use anyhow::Result;
use serde::{Deserialize, Serialize};
use tfce_core::inference::TailSign;
use tfce_core::prelude::*;

use super::{write_grid, write_json};
use crate::cli::ClusterArgs;
use crate::load::load_map;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord {
    /// Numbered from 1 in order of each cluster's lowest voxel index.
    pub id: usize,
    pub extent: usize,
    pub mass: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    pub peak_value: f64,
    /// Grid coordinates `[x, y, z]` of the highest voxel.
    pub peak_voxel: [usize; 3],
    /// Unweighted mean of member coordinates.
    pub centroid: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub statistic: String,
    pub tail: TailSign,
    pub cdt: f64,
    pub mass_convention: MassConvention,
    pub clusters: Vec<ClusterRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub connectivity: u32,
    pub statistics: Vec<ClusterSet>,
}

/// `values` is the map the table was built from (already negated for the negative tail).
pub(crate) fn cluster_records(
    statistic: &str,
    tail: TailSign,
    table: &ClusterTable,
    p: Option<&[f64]>,
    values: &StatisticMap,
) -> ClusterSet {
    let mask = values.mask();
    let clusters = table
        .clusters
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let peak = c
                .members
                .iter()
                .copied()
                .max_by(|&a, &b| values.values()[a].total_cmp(&values.values()[b]).then(b.cmp(&a)))
                .expect("clusters are non-empty");
            let mut centroid = [0.0; 3];
            for &m in &c.members {
                for (acc, x) in centroid.iter_mut().zip(mask.coords(m)) {
                    *acc += x as f64;
                }
            }
            ClusterRecord {
                id: i + 1,
                extent: c.extent,
                mass: c.mass,
                p: p.map(|p| p[i]),
                peak_value: values.values()[peak],
                peak_voxel: mask.coords(peak),
                centroid: centroid.map(|s| s / c.extent as f64),
            }
        })
        .collect();
    ClusterSet {
        statistic: statistic.to_string(),
        tail,
        cdt: table.cdt,
        mass_convention: table.mass_convention,
        clusters,
    }
}

pub fn cluster(args: &ClusterArgs) -> Result<ClusterReport> {
    let (map, header) = load_map(&args.input, args.mask.as_deref())?;
    let (map, tail) = if args.negative { (map.negated(), TailSign::Negative) } else { (map, TailSign::Positive) };
    let adjacency = Adjacency::new(Arc::clone(map.mask()), args.conn)?;
    let forest = build_forest(&rank_order(&map, 0.0)?, &adjacency);
    let table = clusters_at_threshold(&forest, args.cdt, args.mass_convention.into())?;
    if let Some(path) = &args.labels {
        let mut dense = vec![0.0; map.values().len()];
        for (i, c) in table.clusters.iter().enumerate() {
            for &m in &c.members {
                dense[m] = (i + 1) as f64;
            }
        }
        let dims = map.mask().shape().dims();
        write_grid(Some(&header), &dims, map.mask().scatter(&dense, 0.0), path)?;
    }
    let report = ClusterReport {
        connectivity: args.conn.neighbor_count(),
        statistics: vec![cluster_records("clusters", tail, &table, None, &map)],
    };
    write_json(&report, args.out.as_deref())?;
    Ok(report)
}
