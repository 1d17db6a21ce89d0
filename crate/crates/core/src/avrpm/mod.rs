//! Adaptive voxel-resolution partitioning.
//!
//! A cloud is cut into axis-aligned cubes of `block_edge` voxels. Each block
//! is either dense (kept at unit voxels) or sparse (2x2x2 cells merged into one
//! voxel). A small trained network predicts the class from a per-block
//! occupancy summary.

mod mask;

use rayon::prelude::*;
use rustc_hash::FxHashMap;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::sparse::{Coord, SparseTensor};

pub use mask::{
    avrpm_loss, block_summaries, classify, init_mask_params, mask_forward, mask_forward_on_tape, mask_loss_on_tape,
    train_avrpm, train_on_blocks, uniform_summary, AvrpmTrainConfig, AvrpmTrainReport, MaskPrediction, DEFAULT_ALPHA,
    SUMMARY_CELLS,
};

pub const DEFAULT_BLOCK_EDGE: i32 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DensityClass {
    Sparse,
    Dense,
}

impl DensityClass {
    pub fn to_byte(self) -> u8 {
        match self {
            Self::Sparse => 0,
            Self::Dense => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Self::Sparse),
            1 => Some(Self::Dense),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub origin: Coord,
    pub point_indices: Vec<usize>,
    pub class: Option<DensityClass>,
}

impl Block {
    /// Voxels per block edge: `edge` for dense blocks, `edge / 2` for sparse.
    pub fn resolution(&self, block_edge: i32) -> Option<i32> {
        self.class.map(|c| match c {
            DensityClass::Dense => block_edge,
            DensityClass::Sparse => block_edge / 2,
        })
    }

    pub fn len(&self) -> usize {
        self.point_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point_indices.is_empty()
    }
}

/// Non-empty blocks in lexicographic origin order.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub block_edge: i32,
    pub blocks: Vec<Block>,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn classes(&self) -> Option<Vec<DensityClass>> {
        self.blocks.iter().map(|b| b.class).collect()
    }

    pub fn with_classes(mut self, classes: &[DensityClass]) -> Result<Self> {
        if classes.len() != self.blocks.len() {
            return Err(Error::ShapeMismatch(format!("{} classes for {} blocks", classes.len(), self.blocks.len())));
        }
        for (b, c) in self.blocks.iter_mut().zip(classes) {
            b.class = Some(*c);
        }
        Ok(self)
    }

    /// Every block dense: plain unit voxelization.
    pub fn all_dense(self) -> Self {
        let n = self.blocks.len();
        self.with_classes(&vec![DensityClass::Dense; n]).expect("matching length")
    }

    /// Applies a transmitted block table, which must list exactly this
    /// partition's origins in order.
    pub fn apply_table(self, table: &[(Coord, DensityClass)]) -> Result<Self> {
        if table.len() != self.blocks.len() {
            return Err(Error::GeometryMismatch(format!(
                "block table has {} entries, geometry gives {} blocks",
                table.len(),
                self.blocks.len()
            )));
        }
        if let Some((b, (o, _))) = self.blocks.iter().zip(table).find(|(b, (o, _))| b.origin != *o) {
            return Err(Error::GeometryMismatch(format!("block {:?} in table, {:?} in geometry", o, b.origin)));
        }
        let classes: Vec<_> = table.iter().map(|(_, c)| *c).collect();
        self.with_classes(&classes)
    }

    pub fn table(&self) -> Result<Vec<(Coord, DensityClass)>> {
        self.blocks.iter().map(|b| b.class.map(|c| (b.origin, c)).ok_or(Error::UnsetClasses)).collect()
    }
}

pub fn validate_block_edge(block_edge: i32) -> Result<()> {
    if !(4..=128).contains(&block_edge) || block_edge.count_ones() != 1 {
        return Err(Error::InvalidConfig(format!("block edge {block_edge} must be a power of two in 4..=128")));
    }
    Ok(())
}

/// Cuts `pc` into cubes of edge `block_edge`; empty cubes are omitted.
pub fn partition_blocks(pc: &PointCloud, block_edge: i32) -> Result<Partition> {
    validate_block_edge(block_edge)?;
    let mut by_origin: FxHashMap<Coord, Vec<usize>> = FxHashMap::default();
    for (i, p) in pc.positions().iter().enumerate() {
        let origin = p.map(|c| c.div_euclid(block_edge) * block_edge);
        by_origin.entry(origin).or_default().push(i);
    }
    let mut blocks: Vec<Block> =
        by_origin.into_iter().map(|(origin, point_indices)| Block { origin, point_indices, class: None }).collect();
    blocks.sort_unstable_by_key(|b| b.origin);
    Ok(Partition { block_edge, blocks })
}

/// Linear-interpolation quantile of `values` (`q` in `[0, 1]`).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Ground-truth labels: dense iff the block's point count is at least the
/// `q` quantile of all block counts.
pub fn label_density(mut part: Partition, q: f64) -> Result<Partition> {
    if part.blocks.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let counts: Vec<f64> = part.blocks.iter().map(|b| b.len() as f64).collect();
    let threshold = quantile(&counts, q);
    for b in &mut part.blocks {
        b.class = Some(if b.len() as f64 >= threshold { DensityClass::Dense } else { DensityClass::Sparse });
    }
    Ok(part)
}

/// Per-point carrier voxels recorded by [`voxelize_adaptive`].
#[derive(Clone, Debug, PartialEq)]
pub struct DevoxMap {
    pub positions: Vec<Coord>,
    pub carriers: Vec<Coord>,
    pub bit_depth: u8,
}

/// Voxel coordinate carrying point `p` in a block of class `class`.
pub fn carrier_of(p: Coord, class: DensityClass) -> Coord {
    match class {
        DensityClass::Dense => p,
        DensityClass::Sparse => p.map(|c| c.div_euclid(2) * 2),
    }
}

/// Voxel lattice implied by geometry and block classes (no attributes).
pub fn voxel_coords(positions: &[Coord], part: &Partition) -> Result<Vec<Coord>> {
    let mut out: Vec<Coord> = Vec::with_capacity(positions.len());
    for b in &part.blocks {
        let class = b.class.ok_or(Error::UnsetClasses)?;
        out.extend(b.point_indices.iter().map(|&i| carrier_of(positions[i], class)));
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Dense blocks keep unit voxels; sparse blocks merge each 2x2x2 cell into
/// one voxel at the cell origin carrying the mean color. Features are YUV / 255.
pub fn voxelize_adaptive(pc: &PointCloud, part: &Partition) -> Result<(SparseTensor, DevoxMap)> {
    if pc.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let pos = pc.positions();
    let cols = pc.colors();
    let per_block: Vec<Vec<(Coord, [f64; 3])>> = part
        .blocks
        .par_iter()
        .map(|b| {
            let class = b.class.ok_or(Error::UnsetClasses)?;
            let mut cells: Vec<(Coord, usize)> =
                b.point_indices.iter().map(|&i| (carrier_of(pos[i], class), i)).collect();
            cells.sort_unstable();
            let mut out = Vec::new();
            let mut s = 0;
            while s < cells.len() {
                let mut e = s;
                while e < cells.len() && cells[e].0 == cells[s].0 {
                    e += 1;
                }
                let color = if e - s == 1 {
                    cols[cells[s].1]
                } else {
                    let mut sum = [0.0; 3];
                    for &(_, i) in &cells[s..e] {
                        for c in 0..3 {
                            sum[c] += cols[i][c];
                        }
                    }
                    sum.map(|v| v / (e - s) as f64)
                };
                out.push((cells[s].0, color));
                s = e;
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut voxels: Vec<(Coord, [f64; 3])> = per_block.into_iter().flatten().collect();
    voxels.sort_unstable_by_key(|v| v.0);
    let rows = voxels.into_iter().map(|(c, col)| (c, col.iter().map(|v| v / 255.0).collect())).collect();
    let tensor = SparseTensor::from_rows(rows, 1, 3)?;

    let mut carriers = vec![[0; 3]; pos.len()];
    for b in &part.blocks {
        let class = b.class.ok_or(Error::UnsetClasses)?;
        for &i in &b.point_indices {
            carriers[i] = carrier_of(pos[i], class);
        }
    }
    Ok((tensor, DevoxMap { positions: pos.to_vec(), carriers, bit_depth: pc.bit_depth() }))
}

/// Each original point takes the (YUV / 255) features of its carrier voxel.
pub fn devoxelize(recon: &SparseTensor, map: &DevoxMap) -> Result<PointCloud> {
    let colors = map
        .carriers
        .iter()
        .map(|c| {
            let row = recon.get(c).ok_or(Error::MissingVoxel(*c))?;
            Ok([row[0] * 255.0, row[1] * 255.0, row[2] * 255.0])
        })
        .collect::<Result<Vec<_>>>()?;
    PointCloud::new(map.positions.clone(), colors, map.bit_depth)
}
