use std::hint::black_box;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};
use tfce_core::fixtures::Phantom;
use tfce_core::inference::{statistic_map, Randomization};
use tfce_core::prelude::*;

use super::write_json;
use crate::cli::BenchArgs;

/// Mean wall time per randomization, in seconds. Stages that a method does
/// not run are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTiming {
    pub method: String,
    pub total_s: f64,
    pub statistic_s: f64,
    pub forest_s: Option<f64>,
    pub tfce_s: f64,
    pub cluster_stats_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub dims: [usize; 3],
    pub voxels: usize,
    pub subjects: usize,
    pub n_perm: usize,
    pub connectivity: u32,
    pub cdt: f64,
    pub methods: Vec<MethodTiming>,
    /// Extra wall time of the cluster statistics, relative to TFCE alone,
    /// from the two end-to-end pipelines.
    pub cluster_overhead_pct: f64,
    /// The same ratio from the cluster stage timed inside the combined pipeline.
    pub cluster_stage_pct: f64,
}

#[derive(Default, Clone, Copy)]
struct Stages {
    statistic: f64,
    forest: f64,
    tfce: f64,
    clusters: f64,
}

impl Stages {
    fn total(&self) -> f64 {
        self.statistic + self.forest + self.tfce + self.clusters
    }

    fn add(&mut self, o: &Stages) {
        self.statistic += o.statistic;
        self.forest += o.forest;
        self.tfce += o.tfce;
        self.clusters += o.clusters;
    }

    fn scaled(&self, k: f64) -> Stages {
        Stages {
            statistic: self.statistic * k,
            forest: self.forest * k,
            tfce: self.tfce * k,
            clusters: self.clusters * k,
        }
    }
}

struct Pipeline<'a> {
    data: &'a SubjectData,
    adjacency: &'a Adjacency,
    params: EnhanceParams,
    cdt: f64,
}

impl Pipeline<'_> {
    /// One randomization: statistic map, forest, TFCE maximum and, when
    /// `with_clusters`, cluster extent and mass maxima from the same forest.
    fn exact(&self, r: &Randomization, with_clusters: bool) -> Result<Stages> {
        let mut s = Stages::default();
        let t = Instant::now();
        let stat = statistic_map(self.data, r)?;
        s.statistic = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let forest = build_forest(&rank_order(&stat, self.params.h0)?, self.adjacency);
        s.forest = t.elapsed().as_secs_f64();

        let t = Instant::now();
        black_box(exact_tfce(&forest, &self.params)?.max());
        s.tfce = t.elapsed().as_secs_f64();

        if with_clusters {
            let t = Instant::now();
            let table = cluster_summaries(&forest, self.cdt, MassConvention::Sum)?;
            let max_extent = table.iter().map(|c| c.extent).max().unwrap_or(0);
            let max_mass = table.iter().map(|c| c.mass).fold(0.0, f64::max);
            black_box((max_extent, max_mass));
            s.clusters = t.elapsed().as_secs_f64();
        }
        Ok(s)
    }

    fn discretized(&self, r: &Randomization, steps: usize) -> Result<Stages> {
        let mut s = Stages::default();
        let t = Instant::now();
        let stat = statistic_map(self.data, r)?;
        s.statistic = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let scheme = DiscretizationScheme { steps };
        black_box(discretized_tfce(&stat, self.adjacency, &self.params, &scheme)?.max());
        s.tfce = t.elapsed().as_secs_f64();
        Ok(s)
    }
}

fn timing(method: &str, s: &Stages, forest: bool, clusters: bool) -> MethodTiming {
    MethodTiming {
        method: method.into(),
        total_s: s.total(),
        statistic_s: s.statistic,
        forest_s: forest.then_some(s.forest),
        tfce_s: s.tfce,
        cluster_stats_s: clusters.then_some(s.clusters),
    }
}

fn ms(x: f64) -> String {
    format!("{:.2}", x * 1e3)
}

pub fn bench(args: &BenchArgs) -> Result<BenchReport> {
    if args.n_perm == 0 {
        bail!("--n-perm must be at least 1");
    }
    let phantom = Phantom::planted(args.dims, args.subjects, args.amplitude, args.dims[0] as f64 / 6.0, args.seed);
    let data = phantom.subject_data();
    let adjacency = Adjacency::new(Arc::clone(data.mask()), args.conn)?;
    let pipeline = Pipeline { data: &data, adjacency: &adjacency, params: EnhanceParams::default(), cdt: args.cdt };
    let plan = RandomizationPlan::sign_flip(args.n_perm, args.seed).resolve(data.n_subjects())?;

    // Warm caches and the allocator before timing.
    pipeline.exact(plan.get(0), true)?;

    let (mut unified, mut alone, mut disc) = (Stages::default(), Stages::default(), Stages::default());
    for b in 1..=args.n_perm {
        let r = plan.get(b);
        // Alternate the order so drift in machine load hits both pipelines alike.
        if b % 2 == 0 {
            unified.add(&pipeline.exact(r, true)?);
            alone.add(&pipeline.exact(r, false)?);
        } else {
            alone.add(&pipeline.exact(r, false)?);
            unified.add(&pipeline.exact(r, true)?);
        }
        if args.discretized > 0 {
            disc.add(&pipeline.discretized(r, args.discretized)?);
        }
    }
    let k = 1.0 / args.n_perm as f64;
    let (unified, alone, disc) = (unified.scaled(k), alone.scaled(k), disc.scaled(k));

    let mut methods = vec![
        timing("exact tfce + cluster extent + cluster mass", &unified, true, true),
        timing("exact tfce", &alone, true, false),
    ];
    if args.discretized > 0 {
        methods.push(timing(&format!("discretized tfce ({} steps)", args.discretized), &disc, false, false));
    }
    let report = BenchReport {
        dims: args.dims,
        voxels: data.n_voxels(),
        subjects: args.subjects,
        n_perm: args.n_perm,
        connectivity: args.conn.neighbor_count(),
        cdt: args.cdt,
        cluster_overhead_pct: 100.0 * (unified.total() - alone.total()) / alone.total(),
        cluster_stage_pct: 100.0 * unified.clusters / (unified.total() - unified.clusters),
        methods,
    };

    let [x, y, z] = args.dims;
    println!(
        "{x}x{y}x{z} grid, {} subjects, {}-connectivity, {} randomizations; ms per randomization",
        args.subjects,
        report.connectivity,
        args.n_perm
    );
    println!("{:<46} {:>9} {:>9} {:>9} {:>9} {:>14}", "method", "total", "statistic", "forest", "tfce", "cluster-stats");
    for m in &report.methods {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), ms);
        println!(
            "{:<46} {:>9} {:>9} {:>9} {:>9} {:>14}",
            m.method,
            ms(m.total_s),
            ms(m.statistic_s),
            opt(m.forest_s),
            ms(m.tfce_s),
            opt(m.cluster_stats_s)
        );
    }
    println!(
        "cluster statistics add {:.1}% end to end ({:.1}% from the stage timer)",
        report.cluster_overhead_pct, report.cluster_stage_pct
    );
    if let Some(path) = &args.json {
        write_json(&report, Some(path))?;
    }
    Ok(report)
}
