//! Merge forest over rank-ordered voxels.
//!
//! Voxels are visited from highest to lowest. Each visited voxel unions with
//! the sets of its already-visited neighbors; the newest voxel of every set is
//! that set's forest root. When a set is joined, its forest root records the
//! joining voxel in `absorbed_by`. Following `absorbed_by` from a voxel
//! therefore lists exactly the heights at which its cluster grows.
//!
//! Ranks are 0-based throughout (rank 0 is the highest voxel).

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Adjacency, Mask, RankOrder};

const NONE: u32 = u32::MAX;

/// Disjoint sets over grid voxels with union by size and path compression.
/// `link[x] >= 0` is the parent of `x`; a representative stores the negated
/// size of its set, and `top[rep]` the set's newest (lowest) rank.
struct DisjointSet<'a> {
    link: &'a mut [i32],
    top: &'a mut [u32],
}

impl DisjointSet<'_> {
    fn find(&mut self, x: u32) -> u32 {
        let mut root = x;
        while self.link[root as usize] >= 0 {
            root = self.link[root as usize] as u32;
        }
        let mut cur = x;
        while cur != root {
            let next = self.link[cur as usize] as u32;
            self.link[cur as usize] = root as i32;
            cur = next;
        }
        root
    }

    /// Merge two distinct representatives under forest root `top`; returns
    /// the new representative.
    fn union(&mut self, a: u32, b: u32, top: u32) -> u32 {
        let (la, lb) = (self.link[a as usize], self.link[b as usize]);
        let (big, small) = if la <= lb { (a, b) } else { (b, a) };
        self.link[small as usize] = big as i32;
        self.link[big as usize] = la + lb;
        self.top[big as usize] = top;
        big
    }
}

#[derive(Debug, Clone)]
pub struct MergeForest {
    mask: Arc<Mask>,
    h0: f64,
    order: Arc<[u32]>,
    heights: Arc<[f64]>,
    absorbed_by: Vec<u32>,
    extent: Vec<u32>,
    mass: Vec<f64>,
    rank_of: OnceLock<Vec<u32>>,
}

/// One-pass forest construction over `order`.
///
/// Equal heights form a tie group; every member's extent and mass count the
/// whole group (see [`subtree_totals`]).
pub fn build_forest(order: &RankOrder, adjacency: &Adjacency) -> MergeForest {
    let (absorbed_by, mut extent) = SCRATCH.with(|s| merge(&mut s.borrow_mut(), order, adjacency));
    let mass = subtree_totals(&absorbed_by, order.heights(), &mut extent);
    let (order_shared, heights) = order.shared();
    MergeForest {
        mask: Arc::clone(adjacency.mask()),
        h0: order.h0(),
        order: order_shared,
        heights,
        absorbed_by,
        extent,
        mass,
        rank_of: OnceLock::new(),
    }
}

/// Grid-sized working buffers, kept per thread so repeated builds (one per
/// randomization) do not fault in fresh pages every time.
#[derive(Default)]
struct Scratch {
    /// Brick-layout slot of each rank.
    slots: Vec<u32>,
    earlier: Vec<u32>,
    ranks: Vec<u32>,
    link: Vec<i32>,
}

thread_local! {
    static SCRATCH: std::cell::RefCell<Scratch> = std::cell::RefCell::default();
}

fn refill<T: Copy>(buf: &mut Vec<T>, len: usize, value: T) {
    buf.clear();
    buf.resize(len, value);
}

/// `len` elements of `buf` set to `value`, starting on a cache-line boundary
/// so each brick row shares one line.
fn refill_aligned<T: Copy>(buf: &mut Vec<T>, len: usize, value: T) -> &mut [T] {
    const LINE: usize = 64;
    let spare = LINE / std::mem::size_of::<T>();
    refill(buf, len + spare, value);
    let skip = buf.as_ptr().align_offset(LINE).min(spare);
    &mut buf[skip..skip + len]
}

/// Ranks ahead of the union-find pass whose neighborhoods are prefetched.
const PREFETCH_AHEAD: usize = 8;

#[inline(always)]
fn prefetch<T>(buf: &[T], i: usize) {
    #[cfg(target_arch = "x86_64")]
    if let Some(x) = buf.get(i) {
        use std::arch::x86_64::{_mm_prefetch, _MM_HINT_T0};
        // SAFETY: SSE is part of the x86_64 baseline and a prefetch never faults.
        unsafe { _mm_prefetch::<_MM_HINT_T0>((x as *const T).cast()) };
    }
    #[cfg(not(target_arch = "x86_64"))]
    let _ = (buf, i);
}

/// Union-find pass in rank order. Returns `absorbed_by` and the size of each
/// rank's set right after the rank joins it.
fn merge(scratch: &mut Scratch, order: &RankOrder, adjacency: &Adjacency) -> (Vec<u32>, Vec<u32>) {
    let Scratch { slots, earlier, ranks, link } = scratch;
    let n = order.len();
    // Work on brick-layout slots so neighbor lookups need no dense-index
    // translation or bounds checks; unranked slots keep rank NONE.
    slots.clear();
    slots.extend(order.order().iter().map(|&v| adjacency.slot_of(v as usize) as u32));
    let slot_count = adjacency.slot_count();
    let ranks = refill_aligned(ranks, slot_count, NONE);
    for (r, &l) in slots.iter().enumerate() {
        ranks[l as usize] = r as u32;
    }

    // Bit k of earlier[r] marks neighbor offset k as visited before rank r.
    // Computing this in storage order streams through memory instead of
    // probing neighborhoods in height order. Padding and out-of-mask slots
    // hold NONE, which never counts as earlier.
    refill(earlier, n, 0);
    for (l, &r) in ranks.iter().enumerate() {
        if r == NONE {
            continue;
        }
        let mut bits = 0u32;
        for (k, &d) in adjacency.slot_deltas(l).iter().enumerate() {
            bits |= ((ranks[l.wrapping_add_signed(d as isize)] < r) as u32) << k;
        }
        earlier[r as usize] = bits;
    }

    // Every singleton's newest rank is its own, which `ranks` already holds.
    let mut sets = DisjointSet { link: refill_aligned(link, slot_count, -1), top: ranks };
    let mut absorbed_by = vec![NONE; n];
    let mut size = vec![0u32; n];
    for (r, &v) in slots.iter().enumerate() {
        if let Some(&ahead) = slots.get(r + PREFETCH_AHEAD) {
            let s = ahead as usize;
            for &d in adjacency.row_deltas(s) {
                prefetch(sets.link, s.wrapping_add_signed(d as isize));
            }
        }
        let deltas = adjacency.slot_deltas(v as usize);
        let mut bits = earlier[r];
        // v has not been merged with anything yet, so it is its own root.
        let mut a = v;
        while bits != 0 {
            let k = bits.trailing_zeros();
            bits &= bits - 1;
            let b = sets.find((v as usize).wrapping_add_signed(deltas[k as usize] as isize) as u32);
            if a != b {
                absorbed_by[sets.top[b as usize] as usize] = r as u32;
                a = sets.union(a, b, r as u32);
            }
        }
        size[r] = -sets.link[a as usize] as u32;
    }
    (absorbed_by, size)
}

/// Extent and mass of each rank's cluster at its own height.
///
/// The set containing rank `r` right after `r` is merged is exactly the
/// subtree of `r` under `absorbed_by`. `size` arrives holding those subtree
/// sizes; masses are subtree sums of heights. Members of a tie group then take
/// the totals of their highest ancestor within the group, which accounts for
/// later members of the same height.
fn subtree_totals(absorbed_by: &[u32], heights: &[f64], size: &mut [u32]) -> Vec<f64> {
    let n = heights.len();
    let mut mass = heights.to_vec();
    for r in 0..n {
        let p = absorbed_by[r];
        if p != NONE {
            mass[p as usize] += mass[r];
        }
    }
    let mut group_end = n;
    for r in (0..n).rev() {
        if r + 1 < n && heights[r] != heights[r + 1] {
            group_end = r + 1;
        }
        let p = absorbed_by[r] as usize;
        if p < group_end {
            size[r] = size[p];
            mass[r] = mass[p];
        }
    }
    mass
}

impl MergeForest {
    pub fn mask(&self) -> &Arc<Mask> {
        &self.mask
    }

    pub fn h0(&self) -> f64 {
        self.h0
    }

    /// Number of ranked (supra-`h0`) voxels.
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    pub fn height(&self, rank: usize) -> f64 {
        self.heights[rank]
    }

    /// Dense voxel index at `rank`.
    pub fn voxel(&self, rank: usize) -> usize {
        self.order[rank] as usize
    }

    pub fn order(&self) -> &[u32] {
        &self.order
    }

    pub fn rank_of(&self, voxel: usize) -> Option<usize> {
        let rank_of = self.rank_of.get_or_init(|| {
            let mut rank_of = vec![NONE; self.mask.in_mask_count()];
            for (r, &v) in self.order.iter().enumerate() {
                rank_of[v as usize] = r as u32;
            }
            rank_of
        });
        match rank_of.get(voxel) {
            Some(&r) if r != NONE => Some(r as usize),
            _ => None,
        }
    }

    /// Rank of the node that absorbed this node's subtree, or `None` for a final root.
    pub fn absorbed_by(&self, rank: usize) -> Option<usize> {
        match self.absorbed_by[rank] {
            NONE => None,
            u => Some(u as usize),
        }
    }

    pub(crate) fn absorbed_by_raw(&self) -> &[u32] {
        &self.absorbed_by
    }

    /// Size of the cluster containing `rank` at threshold `height(rank)`.
    pub fn extent_at_own_height(&self, rank: usize) -> usize {
        self.extent[rank] as usize
    }

    pub(crate) fn extents(&self) -> &[u32] {
        &self.extent
    }

    /// Sum of heights over the cluster containing `rank` at threshold `height(rank)`.
    pub fn mass_at_own_height(&self, rank: usize) -> f64 {
        self.mass[rank]
    }

    pub fn roots(&self) -> Vec<usize> {
        (0..self.len()).filter(|&r| self.absorbed_by[r] == NONE).collect()
    }

    /// Forest edges as `(absorbing node, absorbed root)` pairs, sorted by
    /// absorbing node. This is the edge list a merge step emits, one edge per
    /// subtree it joins.
    pub fn merge_edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .absorbed_by
            .iter()
            .enumerate()
            .filter(|(_, &u)| u != NONE)
            .map(|(r, &u)| (u as usize, r))
            .collect();
        edges.sort_unstable();
        edges
    }

    /// `rank` followed by its chain of absorbing nodes up to the final root.
    pub fn phi_set(&self, rank: usize) -> Vec<usize> {
        let mut chain = vec![rank];
        let mut cur = rank;
        while let Some(u) = self.absorbed_by(cur) {
            chain.push(u);
            cur = u;
        }
        chain
    }

    /// Number of ranks with height `>= threshold`.
    pub fn count_at_or_above(&self, threshold: f64) -> usize {
        self.heights.partition_point(|&h| h >= threshold)
    }

    /// For ranks `0..k`, writes the rank of the cluster root at the threshold
    /// `height(k - 1)` (i.e. the component among the first `k` ranks).
    pub(crate) fn root_labels(&self, k: usize, labels: &mut Vec<u32>) {
        labels.clear();
        labels.resize(k, 0);
        for r in (0..k).rev() {
            let u = self.absorbed_by[r];
            labels[r] = if u == NONE || u as usize >= k { r as u32 } else { labels[u as usize] };
        }
    }
}

/// How cluster mass is accumulated over member voxels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MassConvention {
    /// Sum of raw statistic values.
    #[default]
    Sum,
    /// Sum of `value - cdt`.
    ExcessAboveThreshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// Forest rank of the cluster's root at the threshold.
    pub root: usize,
    pub extent: usize,
    pub mass: f64,
    /// Dense voxel indices, ascending.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterTable {
    pub cdt: f64,
    pub mass_convention: MassConvention,
    /// Ordered by smallest member index.
    pub clusters: Vec<Cluster>,
}

impl ClusterTable {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Cluster index per dense voxel (`None` outside every cluster).
    pub fn labels(&self, in_mask_count: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; in_mask_count];
        for (c, cl) in self.clusters.iter().enumerate() {
            for &m in &cl.members {
                out[m] = Some(c);
            }
        }
        out
    }
}

/// Per-cluster extent and mass without member lists.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterSummary {
    pub root: usize,
    pub extent: usize,
    pub mass: f64,
}

fn check_cdt(forest: &MergeForest, cdt: f64) -> Result<()> {
    if !(cdt.is_finite() && cdt > forest.h0) {
        return Err(Error::parameter(format!(
            "cluster-defining threshold {cdt} must be finite and exceed h0 = {}",
            forest.h0
        )));
    }
    Ok(())
}

/// Clusters among voxels with height `>= cdt`, read from the forest roots.
pub fn cluster_summaries(forest: &MergeForest, cdt: f64, convention: MassConvention) -> Result<Vec<ClusterSummary>> {
    check_cdt(forest, cdt)?;
    let k = forest.count_at_or_above(cdt);
    Ok((0..k)
        .filter(|&r| {
            let u = forest.absorbed_by[r];
            u == NONE || u as usize >= k
        })
        .map(|r| {
            let extent = forest.extent[r] as usize;
            let mass = match convention {
                MassConvention::Sum => forest.mass[r],
                MassConvention::ExcessAboveThreshold => forest.mass[r] - extent as f64 * cdt,
            };
            ClusterSummary { root: r, extent, mass }
        })
        .collect())
}

/// Supra-threshold clusters (closed: height `>= cdt`) with member lists.
pub fn clusters_at_threshold(forest: &MergeForest, cdt: f64, convention: MassConvention) -> Result<ClusterTable> {
    check_cdt(forest, cdt)?;
    let k = forest.count_at_or_above(cdt);
    let mut labels = Vec::new();
    forest.root_labels(k, &mut labels);

    let mut slot = vec![NONE; k];
    let mut clusters: Vec<Cluster> = Vec::new();
    for (r, &label) in labels.iter().enumerate().take(k) {
        let root = label as usize;
        if slot[root] == NONE {
            slot[root] = clusters.len() as u32;
            clusters.push(Cluster { root, extent: 0, mass: 0.0, members: Vec::new() });
        }
        let c = &mut clusters[slot[root] as usize];
        c.members.push(forest.voxel(r));
        c.mass += match convention {
            MassConvention::Sum => forest.heights[r],
            MassConvention::ExcessAboveThreshold => forest.heights[r] - cdt,
        };
    }
    for c in &mut clusters {
        c.members.sort_unstable();
        c.extent = c.members.len();
    }
    clusters.sort_by_key(|c| c.members[0]);
    Ok(ClusterTable { cdt, mass_convention: convention, clusters })
}
