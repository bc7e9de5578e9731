//! Small hand-checkable inputs shared by tests, examples and the CLI.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::inference::SubjectData;
use crate::volume::{GridShape, Mask, StatisticMap};

/// The nine-voxel worked example, laid out row by row on a 3x3 grid:
///
/// ```text
/// A 12.5   B  4.1   C  7.3
/// D  2.1   E  2.9   F 10.2
/// G  9.8   H  3.5   I  1.2
/// ```
pub const WORKED_EXAMPLE_VALUES: [f64; 9] = [12.5, 4.1, 7.3, 2.1, 2.9, 10.2, 9.8, 3.5, 1.2];

pub fn worked_example_map() -> StatisticMap {
    let mask = Arc::new(Mask::full(GridShape::new([3, 3, 1]).expect("valid shape")));
    StatisticMap::new(mask, WORKED_EXAMPLE_VALUES.to_vec()).expect("finite values")
}

/// Random map on a full grid: about a fifth of the voxels are uniform on
/// `[-2, 0]`, the rest uniform on `[0.5, 4.5]`.
///
/// The gap between 0 and 0.5 keeps every cluster's extent constant near the
/// bottom of the integral, so quadrature error stays small relative to each
/// voxel's score.
pub fn random_map(dims: [usize; 3], seed: u64) -> StatisticMap {
    let mask = Arc::new(Mask::full(GridShape::new(dims).expect("valid shape")));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..mask.in_mask_count())
        .map(|_| {
            if rng.random_bool(0.2) {
                rng.random_range(-2.0..=0.0)
            } else {
                rng.random_range(0.5..4.5)
            }
        })
        .collect();
    StatisticMap::new(mask, values).expect("finite values")
}

/// Gaussian noise blurred with a 3x3x3 box (3x3 on 2D grids) and shifted so
/// that most voxels are positive. Neighboring heights are correlated, which
/// gives larger clusters than [`random_map`].
pub fn smooth_random_map(dims: [usize; 3], seed: u64) -> StatisticMap {
    let shape = GridShape::new(dims).expect("valid shape");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..shape.voxel_count()).map(|_| rng.sample(StandardNormal)).collect();
    let values = box_smooth(&shape, &noise).into_iter().map(|x| 2.0 + 3.0 * x).collect();
    StatisticMap::new(Arc::new(Mask::full(shape)), values).expect("finite values")
}

fn box_smooth(shape: &GridShape, grid: &[f64]) -> Vec<f64> {
    let [nx, ny, nz] = shape.dims();
    let dz: isize = if nz > 1 { 1 } else { 0 };
    let mut out = vec![0.0; grid.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let [x, y, z] = shape.coords(i);
        let (mut sum, mut count) = (0.0, 0usize);
        for oz in -dz..=dz {
            for oy in -1isize..=1 {
                for ox in -1isize..=1 {
                    let (px, py, pz) = (x as isize + ox, y as isize + oy, z as isize + oz);
                    if px < 0 || py < 0 || pz < 0 || px >= nx as isize || py >= ny as isize || pz >= nz as isize {
                        continue;
                    }
                    sum += grid[shape.linear([px as usize, py as usize, pz as usize])];
                    count += 1;
                }
            }
        }
        *o = sum / count as f64;
    }
    out
}

/// Synthetic group study: per-subject smoothed Gaussian noise plus an
/// optional spherical signal of the given amplitude.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub dims: [usize; 3],
    pub n_subjects: usize,
    /// Signal amplitude in noise standard deviations; 0 gives pure noise.
    pub amplitude: f64,
    /// Radius of the signal sphere in voxels, centred on the grid.
    pub radius: f64,
    pub smooth: bool,
    pub seed: u64,
}

impl Phantom {
    pub fn noise(dims: [usize; 3], n_subjects: usize, seed: u64) -> Self {
        Self { dims, n_subjects, amplitude: 0.0, radius: 0.0, smooth: false, seed }
    }

    pub fn planted(dims: [usize; 3], n_subjects: usize, amplitude: f64, radius: f64, seed: u64) -> Self {
        Self { dims, n_subjects, amplitude, radius, smooth: true, seed }
    }

    /// Subject-major volumes, one `Vec` per subject over the full grid.
    pub fn volumes(&self) -> Vec<Vec<f64>> {
        let shape = GridShape::new(self.dims).expect("valid shape");
        let centre = self.dims.map(|d| (d as f64 - 1.0) / 2.0);
        let signal: Vec<f64> = (0..shape.voxel_count())
            .map(|i| {
                let c = shape.coords(i);
                let r2: f64 = (0..3).map(|a| (c[a] as f64 - centre[a]).powi(2)).sum();
                if r2 <= self.radius * self.radius {
                    self.amplitude
                } else {
                    0.0
                }
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.n_subjects)
            .map(|_| {
                let noise: Vec<f64> = (0..shape.voxel_count()).map(|_| rng.sample(StandardNormal)).collect();
                let noise = if self.smooth { box_smooth(&shape, &noise) } else { noise };
                noise.iter().zip(&signal).map(|(n, s)| n + s).collect()
            })
            .collect()
    }

    pub fn subject_data(&self) -> SubjectData {
        let mask = Arc::new(Mask::full(GridShape::new(self.dims).expect("valid shape")));
        SubjectData::from_rows(mask, &self.volumes()).expect("valid phantom")
    }
}

#[cfg(test)]
pub(crate) fn worked_example() -> (StatisticMap, crate::forest::MergeForest) {
    use crate::volume::{rank_order, Adjacency, Connectivity};
    let map = worked_example_map();
    let adj = Adjacency::new(Arc::clone(map.mask()), Connectivity::Edge2D).unwrap();
    let forest = crate::forest::build_forest(&rank_order(&map, 0.0).unwrap(), &adj);
    (map, forest)
}
