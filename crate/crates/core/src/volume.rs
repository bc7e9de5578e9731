//! Masked 3D (and 2D) grids, voxel adjacency and rank ordering of statistic values.
//!
//! Grid voxels are addressed by a linear index `x + y*nx + z*nx*ny` (NIfTI
//! order). In-mask voxels additionally carry a dense index `0..in_mask_count`
//! assigned in ascending linear order; every per-voxel array in this crate is
//! indexed densely.

use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GridShape {
    dims: [usize; 3],
    voxel_sizes: [f64; 3],
}

impl GridShape {
    pub fn new(dims: [usize; 3]) -> Result<Self> {
        Self::with_voxel_sizes(dims, [1.0; 3])
    }

    pub fn with_voxel_sizes(dims: [usize; 3], voxel_sizes: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::structure(format!("grid dimensions must be >= 1, got {dims:?}")));
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::structure(format!("grid {dims:?} overflows the index range")))?;
        if voxel_sizes.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::structure(format!("voxel sizes must be positive, got {voxel_sizes:?}")));
        }
        Ok(Self { dims, voxel_sizes })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_sizes(&self) -> [f64; 3] {
        self.voxel_sizes
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_2d(&self) -> bool {
        self.dims[2] == 1
    }

    pub fn coords(&self, linear: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [linear % nx, (linear / nx) % ny, linear / (nx * ny)]
    }

    pub fn linear(&self, [x, y, z]: [usize; 3]) -> usize {
        let [nx, ny, _] = self.dims;
        x + y * nx + z * nx * ny
    }
}

/// Analysis mask with mutually inverse linear <-> dense index maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    shape: GridShape,
    membership: Vec<bool>,
    dense_to_linear: Vec<usize>,
    linear_to_dense: Vec<usize>,
}

const OUTSIDE: usize = usize::MAX;

impl Mask {
    pub fn new(shape: GridShape, membership: Vec<bool>) -> Result<Self> {
        if membership.len() != shape.voxel_count() {
            return Err(Error::structure(format!(
                "mask has {} entries, grid {:?} has {} voxels",
                membership.len(),
                shape.dims(),
                shape.voxel_count()
            )));
        }
        let mut dense_to_linear = Vec::new();
        let mut linear_to_dense = vec![OUTSIDE; membership.len()];
        for (linear, &inside) in membership.iter().enumerate() {
            if inside {
                linear_to_dense[linear] = dense_to_linear.len();
                dense_to_linear.push(linear);
            }
        }
        Ok(Self { shape, membership, dense_to_linear, linear_to_dense })
    }

    pub fn full(shape: GridShape) -> Self {
        let n = shape.voxel_count();
        Self::new(shape, vec![true; n]).expect("full mask matches its shape")
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn membership(&self) -> &[bool] {
        &self.membership
    }

    pub fn in_mask_count(&self) -> usize {
        self.dense_to_linear.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dense_to_linear.is_empty()
    }

    pub fn contains(&self, linear: usize) -> bool {
        self.membership.get(linear).copied().unwrap_or(false)
    }

    pub fn dense_index(&self, linear: usize) -> Option<usize> {
        match self.linear_to_dense.get(linear) {
            Some(&d) if d != OUTSIDE => Some(d),
            _ => None,
        }
    }

    pub fn linear_index(&self, dense: usize) -> usize {
        self.dense_to_linear[dense]
    }

    pub fn coords(&self, dense: usize) -> [usize; 3] {
        self.shape.coords(self.dense_to_linear[dense])
    }

    /// Scatter dense values into a full grid, filling out-of-mask voxels.
    pub fn scatter(&self, dense_values: &[f64], fill: f64) -> Vec<f64> {
        let mut grid = vec![fill; self.shape.voxel_count()];
        for (&linear, &v) in self.dense_to_linear.iter().zip(dense_values) {
            grid[linear] = v;
        }
        grid
    }

    /// Gather in-mask entries of a full-grid array into dense order.
    pub fn gather<T: Copy>(&self, grid: &[T]) -> Vec<T> {
        self.dense_to_linear.iter().map(|&l| grid[l]).collect()
    }
}

/// Voxel neighborhood definitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Connectivity {
    /// 2D edge neighbors (4).
    Edge2D,
    /// 2D edge + corner neighbors (8).
    Full2D,
    /// 3D face neighbors (6).
    Face,
    /// 3D face + edge neighbors (18).
    FaceEdge,
    /// 3D face + edge + vertex neighbors (26).
    Full,
}

impl Connectivity {
    pub const ALL: [Connectivity; 5] = [
        Connectivity::Edge2D,
        Connectivity::Full2D,
        Connectivity::Face,
        Connectivity::FaceEdge,
        Connectivity::Full,
    ];

    pub fn from_neighbor_count(n: u32) -> Option<Self> {
        match n {
            4 => Some(Self::Edge2D),
            8 => Some(Self::Full2D),
            6 => Some(Self::Face),
            18 => Some(Self::FaceEdge),
            26 => Some(Self::Full),
            _ => None,
        }
    }

    pub fn neighbor_count(self) -> u32 {
        match self {
            Self::Edge2D => 4,
            Self::Full2D => 8,
            Self::Face => 6,
            Self::FaceEdge => 18,
            Self::Full => 26,
        }
    }

    pub fn is_2d(self) -> bool {
        matches!(self, Self::Edge2D | Self::Full2D)
    }

    /// Offsets `(dx, dy, dz)` in ascending lexicographic order.
    pub fn offsets(self) -> Vec<[i64; 3]> {
        let zr: &[i64] = if self.is_2d() { &[0] } else { &[-1, 0, 1] };
        // Manhattan radius of allowed offsets.
        let max_l1 = match self {
            Self::Edge2D | Self::Face => 1,
            Self::Full2D | Self::FaceEdge => 2,
            Self::Full => 3,
        };
        let mut out = Vec::with_capacity(self.neighbor_count() as usize);
        for &dz in zr {
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let l1 = dx.abs() + dy.abs() + dz.abs();
                    if l1 != 0 && l1 <= max_l1 {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }

    pub fn check_shape(self, shape: &GridShape) -> Result<()> {
        if self.is_2d() && !shape.is_2d() {
            return Err(Error::structure(format!(
                "{}-connectivity requires a 2D grid (nz = 1), got {:?}",
                self.neighbor_count(),
                shape.dims()
            )));
        }
        Ok(())
    }
}

fn neighbors_with(mask: &Mask, offsets: &[[i64; 3]], dense: usize, out: &mut Vec<usize>) {
    let dims = mask.shape().dims();
    let c = mask.coords(dense);
    for off in offsets {
        let mut p = [0usize; 3];
        let mut inside = true;
        for a in 0..3 {
            let q = c[a] as i64 + off[a];
            if q < 0 || q >= dims[a] as i64 {
                inside = false;
                break;
            }
            p[a] = q as usize;
        }
        if inside {
            if let Some(d) = mask.dense_index(mask.shape().linear(p)) {
                out.push(d);
            }
        }
    }
    out.sort_unstable();
}

/// In-mask neighbors of a dense voxel, sorted ascending.
pub fn neighbors(mask: &Mask, conn: Connectivity, voxel: usize) -> Result<Vec<usize>> {
    conn.check_shape(mask.shape())?;
    if voxel >= mask.in_mask_count() {
        return Err(Error::structure(format!(
            "voxel {voxel} out of range for mask with {} voxels",
            mask.in_mask_count()
        )));
    }
    let mut out = Vec::new();
    neighbors_with(mask, &conn.offsets(), voxel, &mut out);
    Ok(out)
}

const NO_VOXEL: u32 = u32::MAX;

/// In-mask adjacency for one mask and connectivity, shared by every forest
/// construction.
///
/// Neighbors are generated from linear-index offsets rather than stored, so
/// the table stays a few bytes per voxel. Each voxel falls in one of 64
/// boundary cases (on the low/high face of each axis or not), and each case
/// has its own precomputed list of in-bounds offsets.
#[derive(Debug, Clone)]
pub struct Adjacency {
    mask: Arc<Mask>,
    conn: Connectivity,
    dims: [usize; 3],
    /// Linear-index delta of each connectivity offset.
    deltas: Vec<isize>,
    /// In-bounds offset indices for each boundary case.
    cases: Vec<Vec<u8>>,
    dense_of_linear: Vec<u32>,
    linear_of_dense: Vec<u32>,
    bricks: BrickLayout,
}

/// Grid storage in 64-voxel bricks (4x4x4, or 8x8x1 on a single slice) after
/// padding the grid with one empty voxel on every side.
///
/// A voxel's 3x3x3 neighborhood touches about seven cache lines of a 4-byte
/// per-voxel array instead of nine or more in row-major order, and every
/// neighbor of a grid voxel has a valid slot, so no bounds checks are needed.
/// The slot delta of each offset depends only on the position inside the
/// brick.
/// A 3x3x3 neighborhood spans at most two rows along y within a brick plane,
/// two bricks along x, and three planes.
pub(crate) const MAX_ROWS: usize = 12;

#[derive(Debug, Clone)]
struct BrickLayout {
    shift: [u32; 3],
    /// Bricks per axis.
    counts: [usize; 3],
    /// Padding voxels before the grid on each axis.
    pad: [usize; 3],
    offsets: usize,
    /// `deltas[local * offsets + k]`.
    deltas: Vec<i32>,
    /// Per local position, slot deltas to the start of every 16-slot row the
    /// neighborhood touches, padded with repeats to a fixed length.
    rows: Vec<[i32; MAX_ROWS]>,
    slot_of_dense: Vec<u32>,
}

impl BrickLayout {
    fn new(mask: &Mask, offsets: &[[i64; 3]]) -> Self {
        let dims = mask.shape().dims();
        let shift = if dims[2] == 1 { [3, 3, 0] } else { [2, 2, 2] };
        let pad: [usize; 3] = std::array::from_fn(|a| offsets.iter().any(|o| o[a] != 0) as usize);
        let counts = std::array::from_fn(|a| (dims[a] + 2 * pad[a]).div_ceil(1 << shift[a]));
        let mut layout = Self { shift, counts, pad, offsets: offsets.len(), deltas: Vec::new(), rows: Vec::new(), slot_of_dense: Vec::new() };
        // Deltas are the same in every brick; measure them in the second brick
        // along each padded axis so every neighbor has a slot.
        for local in 0..64usize {
            let within = [
                local & ((1 << shift[0]) - 1),
                (local >> shift[0]) & ((1 << shift[1]) - 1),
                local >> (shift[0] + shift[1]),
            ];
            let c: [i64; 3] = std::array::from_fn(|a| ((pad[a] << shift[a]) + within[a]) as i64 - pad[a] as i64);
            let base = layout.slot_signed(c);
            for off in offsets {
                let slot = layout.slot_signed([c[0] + off[0], c[1] + off[1], c[2] + off[2]]);
                layout.deltas.push((slot - base) as i32);
            }
            let mut rows: Vec<i64> = layout.deltas[local * offsets.len()..]
                .iter()
                .chain(&[0])
                .map(|&d| ((local as i64 + d as i64).div_euclid(16)) * 16 - local as i64)
                .collect();
            rows.sort_unstable();
            rows.dedup();
            debug_assert!(rows.len() <= MAX_ROWS);
            layout.rows.push(std::array::from_fn(|i| rows[i.min(rows.len() - 1)] as i32));
        }
        layout.slot_of_dense = (0..mask.in_mask_count()).map(|d| layout.slot(mask.coords(d)) as u32).collect();
        layout
    }

    /// Slot of grid coordinates, which may lie one voxel outside the grid.
    /// Measuring deltas also evaluates points up to a brick beyond it.
    fn slot_signed(&self, c: [i64; 3]) -> i64 {
        let p: [i64; 3] = std::array::from_fn(|a| c[a] + self.pad[a] as i64);
        let brick = (0..3).rev().fold(0, |acc, a| acc * self.counts[a] as i64 + (p[a] >> self.shift[a]));
        let low = |a: usize| p[a] & ((1 << self.shift[a]) - 1);
        let local = low(0) | low(1) << self.shift[0] | low(2) << (self.shift[0] + self.shift[1]);
        brick * 64 + local
    }

    fn slot(&self, c: [usize; 3]) -> usize {
        self.slot_signed(c.map(|x| x as i64)) as usize
    }

    fn len(&self) -> usize {
        self.counts.iter().product::<usize>() * 64
    }
}

impl Adjacency {
    pub fn new(mask: Arc<Mask>, conn: Connectivity) -> Result<Self> {
        conn.check_shape(mask.shape())?;
        if mask.shape().voxel_count() > i32::MAX as usize {
            return Err(Error::structure("grid too large for 31-bit voxel indices"));
        }
        let dims = mask.shape().dims();
        let stride = [1, dims[0] as isize, (dims[0] * dims[1]) as isize];
        let offsets = conn.offsets();
        let deltas = offsets.iter().map(|off| (0..3).map(|a| off[a] as isize * stride[a]).sum()).collect();
        let cases = (0..64u32)
            .map(|code| {
                (0..offsets.len() as u8)
                    .filter(|&k| {
                        let off = offsets[k as usize];
                        (0..3).all(|a| {
                            let low = code >> (2 * a) & 1 == 1;
                            let high = code >> (2 * a + 1) & 1 == 1;
                            !(off[a] < 0 && low || off[a] > 0 && high)
                        })
                    })
                    .collect()
            })
            .collect();
        let mut dense_of_linear = vec![NO_VOXEL; mask.shape().voxel_count()];
        let linear_of_dense: Vec<u32> = (0..mask.in_mask_count()).map(|d| mask.linear_index(d) as u32).collect();
        for (d, &l) in linear_of_dense.iter().enumerate() {
            dense_of_linear[l as usize] = d as u32;
        }
        let bricks = BrickLayout::new(&mask, &offsets);
        Ok(Self { mask, conn, dims, deltas, cases, dense_of_linear, linear_of_dense, bricks })
    }

    pub fn mask(&self) -> &Arc<Mask> {
        &self.mask
    }

    pub fn connectivity(&self) -> Connectivity {
        self.conn
    }

    #[inline]
    fn boundary_code(&self, linear: usize) -> usize {
        let [nx, ny, nz] = self.dims;
        let (x, rest) = (linear % nx, linear / nx);
        let (y, z) = (rest % ny, rest / ny);
        (x == 0) as usize
            | ((x + 1 == nx) as usize) << 1
            | ((y == 0) as usize) << 2
            | ((y + 1 == ny) as usize) << 3
            | ((z == 0) as usize) << 4
            | ((z + 1 == nz) as usize) << 5
    }

    /// Length of a per-slot array in the brick layout.
    pub(crate) fn slot_count(&self) -> usize {
        self.bricks.len()
    }

    #[inline]
    pub(crate) fn slot_of(&self, dense: usize) -> usize {
        self.bricks.slot_of_dense[dense] as usize
    }

    /// Slot deltas of every connectivity offset from `slot`, in offset order.
    #[inline]
    pub(crate) fn slot_deltas(&self, slot: usize) -> &[i32] {
        let k = self.bricks.offsets;
        let local = slot & 63;
        &self.bricks.deltas[local * k..local * k + k]
    }

    /// Slot deltas from `slot` to the start of each 16-slot row its
    /// neighborhood touches; some entries may repeat.
    #[inline]
    pub(crate) fn row_deltas(&self, slot: usize) -> &[i32; MAX_ROWS] {
        &self.bricks.rows[slot & 63]
    }

    /// Offset indices that stay inside the grid from `linear`.
    #[inline]
    fn in_bounds_offsets(&self, linear: usize) -> &[u8] {
        &self.cases[self.boundary_code(linear)]
    }

    /// In-mask neighbors of a dense voxel, in ascending order.
    #[inline]
    pub fn neighbors(&self, dense: usize) -> impl Iterator<Item = u32> + '_ {
        let linear = self.linear_of_dense[dense] as usize;
        self.in_bounds_offsets(linear).iter().filter_map(move |&k| {
            let w = self.dense_of_linear[linear.wrapping_add_signed(self.deltas[k as usize])];
            (w != NO_VOXEL).then_some(w)
        })
    }
}

/// Voxel-wise statistic values over the in-mask voxels of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StatisticMap {
    mask: Arc<Mask>,
    values: Vec<f64>,
    h_max: f64,
}

impl StatisticMap {
    /// `values` is indexed densely. Non-finite values are rejected.
    pub fn new(mask: Arc<Mask>, values: Vec<f64>) -> Result<Self> {
        if values.len() != mask.in_mask_count() {
            return Err(Error::structure(format!(
                "map has {} values, mask has {} voxels",
                values.len(),
                mask.in_mask_count()
            )));
        }
        if let Some((voxel, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { voxel, value });
        }
        let h_max = max_of(&values);
        Ok(Self { mask, values, h_max })
    }

    /// Build from a full-grid array, keeping only in-mask entries.
    pub fn from_grid(mask: Arc<Mask>, grid: &[f64]) -> Result<Self> {
        if grid.len() != mask.shape().voxel_count() {
            return Err(Error::structure(format!(
                "grid array has {} values, expected {}",
                grid.len(),
                mask.shape().voxel_count()
            )));
        }
        let values = mask.gather(grid);
        Self::new(mask, values)
    }

    pub fn mask(&self) -> &Arc<Mask> {
        &self.mask
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Maximum in-mask value; `-inf` for an empty mask.
    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    pub fn negated(&self) -> Self {
        let values: Vec<f64> = self.values.iter().map(|v| -v).collect();
        let h_max = max_of(&values);
        Self { mask: Arc::clone(&self.mask), values, h_max }
    }

    pub fn map_values(self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = self.values.into_iter().map(f).collect();
        Self::new(self.mask, values)
    }

    pub fn to_grid(&self, fill: f64) -> Vec<f64> {
        self.mask.scatter(&self.values, fill)
    }
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Supra-`h0` voxels sorted by non-increasing height.
#[derive(Debug, Clone, PartialEq)]
pub struct RankOrder {
    order: Arc<[u32]>,
    heights: Arc<[f64]>,
    h0: f64,
}

impl RankOrder {
    pub(crate) fn shared(&self) -> (Arc<[u32]>, Arc<[f64]>) {
        (Arc::clone(&self.order), Arc::clone(&self.heights))
    }

    /// Dense voxel index per rank (rank 0 is the highest voxel).
    pub fn order(&self) -> &[u32] {
        &self.order
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    pub fn h0(&self) -> f64 {
        self.h0
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// Rank the voxels with value strictly above `h0`. Ties go to the lower dense index.
pub fn rank_order(map: &StatisticMap, h0: f64) -> Result<RankOrder> {
    if !(h0.is_finite() && h0 >= 0.0) {
        return Err(Error::parameter(format!("h0 must be finite and >= 0, got {h0}")));
    }
    // Values above h0 >= 0 are positive, so their IEEE bit patterns sort like the
    // values themselves; complementing gives descending order.
    let values = map.values();
    let mut keyed: Vec<(u64, u32)> = values
        .iter()
        .enumerate()
        .filter(|(_, &h)| h > h0)
        .map(|(i, &h)| (!h.to_bits(), i as u32))
        .collect();
    keyed.sort_unstable();
    let heights = keyed.iter().map(|&(_, i)| values[i as usize]).collect();
    let order = keyed.iter().map(|&(_, i)| i).collect();
    Ok(RankOrder { order, heights, h0 })
}
