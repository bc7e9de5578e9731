//! One function per subcommand.

mod bench;
mod cluster;
mod compare;
mod infer;

use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};
use tfce_core::fixtures::Phantom;
use tfce_core::prelude::*;

pub use bench::{bench, BenchReport, MethodTiming};
pub use cluster::{cluster, ClusterRecord, ClusterReport};
pub use compare::{compare, CompareOutput};
pub use infer::{infer, run_config, NULL_CSV_HEADER};

use crate::cli::{Command, PhantomArgs, TfceArgs};
use crate::load::load_map;
use crate::nifti::{write_nifti, NiftiHeader, NiftiVolume};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Tfce(a) => tfce(&a),
        Command::Infer(a) => infer(&a).map(|_| ()),
        Command::Cluster(a) => cluster(&a).map(|_| ()),
        Command::Compare(a) => compare(&a).map(|_| ()),
        Command::Bench(a) => bench(&a).map(|_| ()),
        Command::Phantom(a) => phantom(&a),
    }
}

pub(crate) fn write_grid(template: Option<&NiftiHeader>, dims: &[usize], grid: Vec<f64>, path: &Path) -> Result<()> {
    write_nifti(&NiftiVolume::from_data(template, dims, grid), path)?;
    Ok(())
}

pub(crate) fn write_json<T: serde::Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

pub fn tfce(args: &TfceArgs) -> Result<()> {
    let (map, header) = load_map(&args.input, args.mask.as_deref())?;
    let map = if args.negative { map.negated() } else { map };
    let e = &args.enhance;
    let params = EnhanceParams::new(e.e, e.h, e.h0)?;
    let adjacency = Adjacency::new(Arc::clone(map.mask()), e.conn)?;
    let scores = match args.discretized {
        Some(steps) => discretized_tfce(&map, &adjacency, &params, &DiscretizationScheme { steps })?,
        None => tfce_map(&map, &adjacency, &params)?,
    };
    let dims = map.mask().shape().dims();
    write_grid(Some(&header), &dims, scores.to_grid(), &args.out)
}

pub fn phantom(args: &PhantomArgs) -> Result<()> {
    let p = Phantom {
        dims: args.dims,
        n_subjects: args.subjects,
        amplitude: args.amplitude,
        radius: args.radius,
        smooth: !args.white,
        seed: args.seed,
    };
    let data: Vec<f64> = p.volumes().into_iter().flatten().collect();
    let [x, y, z] = args.dims;
    write_grid(None, &[x, y, z, args.subjects], data, &args.out)
}
