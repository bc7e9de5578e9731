use std::fmt::Write as _;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use tfce_core::inference::log10_differences;
use tfce_core::prelude::*;

use super::write_json;
use crate::cli::CompareArgs;
use crate::load::read_mask;
use crate::nifti::read_nifti;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareOutput {
    #[serde(flatten)]
    pub report: ComparisonReport,
    /// Grid coordinates of `gain_voxels` and `loss_voxels`.
    pub gain_coords: Vec<[usize; 3]>,
    pub loss_coords: Vec<[usize; 3]>,
}

fn is_p(x: f64) -> bool {
    x > 0.0 && x <= 1.0
}

pub fn compare(args: &CompareArgs) -> Result<CompareOutput> {
    let a = read_nifti(&args.a)?;
    let b = read_nifti(&args.b)?;
    if a.shape() != b.shape() || a.volume_count() != 1 {
        bail!("p-value maps must be 3D with equal dims, got {:?} and {:?}", a.shape(), b.shape());
    }
    let shape = GridShape::with_voxel_sizes(a.grid_dims(), a.header.voxel_sizes())?;
    let mask = match &args.mask {
        Some(p) => read_mask(p, &shape)?,
        None => Mask::new(shape, a.data.iter().zip(&b.data).map(|(&x, &y)| is_p(x) && is_p(y)).collect())?,
    };
    let mask = Arc::new(mask);
    let (pa, pb) = (mask.gather(&a.data), mask.gather(&b.data));
    if let Some(v) = pa.iter().chain(&pb).position(|&p| !is_p(p)) {
        let v = v % pa.len().max(1);
        bail!("voxel {:?} inside the mask holds a value outside (0, 1]", mask.coords(v));
    }
    let pa = PValueMap::new(Arc::clone(&mask), pa)?;
    let pb = PValueMap::new(Arc::clone(&mask), pb)?;
    let report = compare_pvalue_maps(&pa, &pb, args.alpha)?;

    if let Some(path) = &args.scatter {
        let d = log10_differences(&pa, &pb)?;
        let mut csv = String::from("x,y,z,p_a,p_b,d\n");
        for (v, ((x, y), d)) in pa.values().iter().zip(pb.values()).zip(&d).enumerate() {
            let [i, j, k] = mask.coords(v);
            writeln!(csv, "{i},{j},{k},{x},{y},{d}").expect("writing to a String");
        }
        std::fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
    }

    let coords = |vs: &[usize]| vs.iter().map(|&v| mask.coords(v)).collect();
    let out = CompareOutput {
        gain_coords: coords(&report.gain_voxels),
        loss_coords: coords(&report.loss_voxels),
        report,
    };
    write_json(&out, args.out.as_deref())?;
    Ok(out)
}
