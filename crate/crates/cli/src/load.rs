//! Turning NIfTI files into masks, statistic maps and subject matrices.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use tfce_core::prelude::{GridShape, Mask, StatisticMap, SubjectData};

use crate::config::InputSource;
use crate::nifti::{read_nifti, NiftiHeader, NiftiVolume};

/// Subject data with the header of the first input, for writing outputs.
pub struct LoadedSubjects {
    pub data: SubjectData,
    pub template: NiftiHeader,
    pub dims: [usize; 3],
    /// Every file read, in order.
    pub files: Vec<PathBuf>,
}

fn shape_of(volume: &NiftiVolume) -> Result<GridShape> {
    Ok(GridShape::with_voxel_sizes(volume.grid_dims(), volume.header.voxel_sizes())?)
}

/// Paths listed one per line; relative entries resolve against the list's directory.
pub fn read_path_list(list: &Path) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(list).with_context(|| format!("reading subject list {}", list.display()))?;
    let base = list.parent().unwrap_or(Path::new("."));
    let paths: Vec<PathBuf> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| base.join(l))
        .collect();
    if paths.is_empty() {
        bail!("subject list {} names no files", list.display());
    }
    Ok(paths)
}

fn subject_grids(input: &InputSource) -> Result<(Vec<Vec<f64>>, NiftiVolume, Vec<PathBuf>)> {
    match input {
        InputSource::Stack(path) => {
            let v = read_nifti(path)?;
            if v.shape().len() < 4 {
                bail!("{}: expected a 4D subject stack, got dims {:?}", path.display(), v.shape());
            }
            let grids = (0..v.volume_count()).map(|i| v.volume(i).to_vec()).collect();
            Ok((grids, v, vec![path.clone()]))
        }
        InputSource::List(list) => {
            let paths = read_path_list(list)?;
            let mut grids = Vec::with_capacity(paths.len());
            let mut first: Option<NiftiVolume> = None;
            for p in &paths {
                let v = read_nifti(p)?;
                if v.volume_count() != 1 {
                    bail!("{}: expected a 3D map, got dims {:?}", p.display(), v.shape());
                }
                if let Some(f) = &first {
                    if f.grid_dims() != v.grid_dims() {
                        bail!("{}: grid {:?} differs from {:?}", p.display(), v.grid_dims(), f.grid_dims());
                    }
                }
                grids.push(v.data.clone());
                first.get_or_insert(v);
            }
            let mut files = vec![list.clone()];
            files.extend(paths);
            Ok((grids, first.expect("list is non-empty"), files))
        }
    }
}

/// Mask from a file (nonzero and finite voxels) after checking its grid.
pub fn read_mask(path: &Path, shape: &GridShape) -> Result<Mask> {
    let v = read_nifti(path)?;
    if v.grid_dims() != shape.dims() || v.volume_count() != 1 {
        bail!("{}: mask dims {:?} do not match data grid {:?}", path.display(), v.shape(), shape.dims());
    }
    Ok(Mask::new(shape.clone(), v.data.iter().map(|&x| x.is_finite() && x != 0.0).collect())?)
}

pub fn load_subjects(input: &InputSource, mask_path: Option<&Path>) -> Result<LoadedSubjects> {
    let (grids, first, mut files) = subject_grids(input)?;
    let shape = shape_of(&first)?;
    let mask = match mask_path {
        Some(p) => {
            files.push(p.to_path_buf());
            read_mask(p, &shape)?
        }
        None => {
            let keep = (0..shape.voxel_count())
                .map(|i| grids.iter().all(|g| g[i].is_finite() && g[i] != 0.0))
                .collect();
            Mask::new(shape.clone(), keep)?
        }
    };
    if mask.is_empty() {
        bail!("mask is empty: no voxel is finite and nonzero in every subject");
    }
    let mask = Arc::new(mask);
    let rows: Vec<Vec<f64>> = grids.iter().map(|g| mask.gather(g)).collect();
    let data = SubjectData::from_rows(Arc::clone(&mask), &rows).context("building the subject matrix")?;
    Ok(LoadedSubjects { data, template: first.header.clone(), dims: shape.dims(), files })
}

/// One 3D map restricted to a mask (default: every finite voxel).
pub fn load_map(path: &Path, mask_path: Option<&Path>) -> Result<(StatisticMap, NiftiHeader)> {
    let v = read_nifti(path)?;
    if v.volume_count() != 1 {
        bail!("{}: expected a 3D map, got dims {:?}", path.display(), v.shape());
    }
    let shape = shape_of(&v)?;
    let mask = match mask_path {
        Some(p) => read_mask(p, &shape)?,
        None => Mask::new(shape, v.data.iter().map(|x| x.is_finite()).collect())?,
    };
    let map = StatisticMap::from_grid(Arc::new(mask), &v.data)?;
    Ok((map, v.header))
}
