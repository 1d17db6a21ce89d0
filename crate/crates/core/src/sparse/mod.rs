//! Coordinate-indexed sparse tensors and sparse / transposed-sparse 3D
//! convolution.
//!
//! A [`SparseTensor`] stores feature rows only at occupied lattice sites. The
//! lattice spacing (`stride`) doubles with every downsampling convolution, so
//! a coordinate at stride 8 stands for an 8x8x8 cell of the input lattice.
//! Coordinates are always kept in lexicographic order, which makes tensor
//! equality bit-comparable and every operation independent of insertion
//! order.

mod conv;
mod dense;
mod kernel_map;

pub use conv::{
    conv_backward_input, conv_backward_weight, conv_forward, sparse_conv, sparse_conv_transpose, transpose_channels,
};
pub use dense::{dense_conv_oracle, DenseGrid};
pub use kernel_map::{build_kernel_map, kernel_offsets, KernelMap};

use std::sync::Arc;

use rustc_hash::FxHashMap;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

/// Integer lattice coordinate `(x, y, z)`.
pub type Coord = [i32; 3];

/// Sorted, de-duplicated coordinates on a lattice of spacing `stride`, with
/// an O(1) coordinate-to-row index.
#[derive(Clone, Debug)]
pub struct CoordSet {
    coords: Vec<Coord>,
    index: FxHashMap<Coord, u32>,
    stride: i32,
}

impl PartialEq for CoordSet {
    fn eq(&self, other: &Self) -> bool {
        self.stride == other.stride && self.coords == other.coords
    }
}

impl Eq for CoordSet {}

impl CoordSet {
    /// Builds a set from arbitrary coordinates. Every coordinate must be a
    /// multiple of `stride`.
    pub fn new(coords: impl IntoIterator<Item = Coord>, stride: i32) -> Result<Self> {
        if stride <= 0 || stride.count_ones() != 1 {
            return Err(Error::StrideMismatch(format!("stride {stride} is not a power of two")));
        }
        let mut coords: Vec<Coord> = coords.into_iter().collect();
        if let Some(bad) = coords.iter().find(|c| c.iter().any(|v| v.rem_euclid(stride) != 0)) {
            return Err(Error::StrideMismatch(format!("{bad:?} is not on the stride-{stride} lattice")));
        }
        coords.sort_unstable();
        coords.dedup();
        Ok(Self::from_sorted(coords, stride))
    }

    fn from_sorted(coords: Vec<Coord>, stride: i32) -> Self {
        let index = coords.iter().enumerate().map(|(i, c)| (*c, i as u32)).collect();
        Self { coords, index, stride }
    }

    pub fn empty(stride: i32) -> Self {
        Self::from_sorted(Vec::new(), stride)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn stride(&self) -> i32 {
        self.stride
    }

    pub fn coords(&self) -> &[Coord] {
        &self.coords
    }

    pub fn row(&self, c: &Coord) -> Option<usize> {
        self.index.get(c).map(|&r| r as usize)
    }

    pub fn contains(&self, c: &Coord) -> bool {
        self.index.contains_key(c)
    }

    /// Unique `floor(c / (stride*factor)) * (stride*factor)` of every coordinate.
    pub fn downsample(&self, factor: i32) -> CoordSet {
        let s = self.stride * factor;
        let mut out: Vec<Coord> = self.coords.iter().map(|c| c.map(|v| v.div_euclid(s) * s)).collect();
        out.sort_unstable();
        out.dedup();
        Self::from_sorted(out, s)
    }

    /// The eight children of every coordinate on the lattice of half the
    /// stride. Used as candidate sites for occupancy prediction.
    pub fn children(&self) -> Result<CoordSet> {
        if self.stride < 2 {
            return Err(Error::StrideMismatch("stride-1 sets have no children".into()));
        }
        let h = self.stride / 2;
        let mut out = Vec::with_capacity(self.len() * 8);
        for c in &self.coords {
            for dx in [0, h] {
                for dy in [0, h] {
                    for dz in [0, h] {
                        out.push([c[0] + dx, c[1] + dy, c[2] + dz]);
                    }
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        Ok(Self::from_sorted(out, h))
    }

    /// Coordinates present in both sets, at this set's stride.
    pub fn intersection(&self, other: &CoordSet) -> CoordSet {
        let out: Vec<Coord> = self.coords.iter().copied().filter(|c| other.contains(c)).collect();
        Self::from_sorted(out, self.stride)
    }

    /// Every lattice site in the axis-aligned box `[lo, hi]` (inclusive).
    pub fn full_box(lo: Coord, hi: Coord, stride: i32) -> Result<CoordSet> {
        let mut out = Vec::new();
        let mut x = lo[0];
        while x <= hi[0] {
            let mut y = lo[1];
            while y <= hi[1] {
                let mut z = lo[2];
                while z <= hi[2] {
                    out.push([x, y, z]);
                    z += stride;
                }
                y += stride;
            }
            x += stride;
        }
        CoordSet::new(out, stride)
    }
}

/// A sparse feature map: one `channels`-wide row of features per coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseTensor {
    coords: Arc<CoordSet>,
    feats: Vec<f64>,
    channels: usize,
}

impl SparseTensor {
    pub fn new(coords: Arc<CoordSet>, feats: Vec<f64>, channels: usize) -> Result<Self> {
        if channels == 0 {
            return Err(Error::ShapeMismatch("tensor needs at least one channel".into()));
        }
        if feats.len() != coords.len() * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} feature values for {} coordinates x {} channels",
                feats.len(),
                coords.len(),
                channels
            )));
        }
        Ok(Self { coords, feats, channels })
    }

    /// Builds a tensor from unordered `(coordinate, row)` pairs.
    pub fn from_rows(rows: Vec<(Coord, Vec<f64>)>, stride: i32, channels: usize) -> Result<Self> {
        let mut rows = rows;
        rows.sort_by_key(|r| r.0);
        if rows.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::ShapeMismatch("duplicate coordinate in rows".into()));
        }
        let mut feats = Vec::with_capacity(rows.len() * channels);
        for (_, r) in &rows {
            if r.len() != channels {
                return Err(Error::ShapeMismatch(format!("row of {} values, expected {channels}", r.len())));
            }
            feats.extend_from_slice(r);
        }
        let coords = CoordSet::new(rows.into_iter().map(|(c, _)| c), stride)?;
        Self::new(Arc::new(coords), feats, channels)
    }

    /// Stride-1 tensor of a cloud's colors, YUV scaled to `[0, 1]`.
    pub fn from_point_cloud(pc: &PointCloud) -> Result<Self> {
        if pc.is_empty() {
            return Err(Error::EmptyCloud);
        }
        // Cloud positions are already unique and sorted.
        let coords = CoordSet::from_sorted(pc.positions().to_vec(), 1);
        let feats = pc.colors().iter().flat_map(|c| c.map(|v| v / 255.0)).collect();
        Self::new(Arc::new(coords), feats, 3)
    }

    /// Inverse of [`SparseTensor::from_point_cloud`] for 3-channel stride-1 tensors.
    pub fn to_point_cloud(&self, bit_depth: u8) -> Result<PointCloud> {
        if self.channels != 3 || self.stride() != 1 {
            return Err(Error::ShapeMismatch("need a 3-channel stride-1 tensor".into()));
        }
        let colors = self.feats.chunks_exact(3).map(|r| [r[0] * 255.0, r[1] * 255.0, r[2] * 255.0]).collect();
        PointCloud::new(self.coords.coords().to_vec(), colors, bit_depth)
    }

    pub fn coord_set(&self) -> &Arc<CoordSet> {
        &self.coords
    }

    pub fn coords(&self) -> &[Coord] {
        self.coords.coords()
    }

    pub fn feats(&self) -> &[f64] {
        &self.feats
    }

    pub fn into_feats(self) -> Vec<f64> {
        self.feats
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn stride(&self) -> i32 {
        self.coords.stride()
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.feats[i * self.channels..(i + 1) * self.channels]
    }

    /// Feature row at coordinate `c`, if occupied.
    pub fn get(&self, c: &Coord) -> Option<&[f64]> {
        self.coords.row(c).map(|i| self.row(i))
    }

    /// Keeps the rows whose coordinate is in `keep`.
    pub fn prune(&self, keep: &CoordSet) -> SparseTensor {
        let mut coords = Vec::new();
        let mut feats = Vec::new();
        for (i, c) in self.coords.coords().iter().enumerate() {
            if keep.contains(c) {
                coords.push(*c);
                feats.extend_from_slice(self.row(i));
            }
        }
        SparseTensor { coords: Arc::new(CoordSet::from_sorted(coords, self.stride())), feats, channels: self.channels }
    }

    /// Rows gathered at `target` coordinates; missing sites are zero.
    pub fn gather(&self, target: &Arc<CoordSet>) -> SparseTensor {
        let c = self.channels;
        let mut feats = vec![0.0; target.len() * c];
        for (j, coord) in target.coords().iter().enumerate() {
            if let Some(row) = self.get(coord) {
                feats[j * c..(j + 1) * c].copy_from_slice(row);
            }
        }
        SparseTensor { coords: Arc::clone(target), feats, channels: c }
    }
}

/// Free-function form of [`SparseTensor::prune`].
pub fn prune(input: &SparseTensor, keep: &CoordSet) -> SparseTensor {
    input.prune(keep)
}

/// Shape of one convolution layer. Weights are laid out
/// `[offset][in_channels][out_channels]` with offsets in the order of
/// [`kernel_offsets`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel_size: usize,
    pub stride: i32,
    pub in_channels: usize,
    pub out_channels: usize,
    pub transposed: bool,
}

impl ConvSpec {
    pub fn new(kernel_size: usize, stride: i32, in_channels: usize, out_channels: usize) -> Self {
        Self { kernel_size, stride, in_channels, out_channels, transposed: false }
    }

    pub fn transposed(kernel_size: usize, stride: i32, in_channels: usize, out_channels: usize) -> Self {
        Self { kernel_size, stride, in_channels, out_channels, transposed: true }
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel_size.pow(3)
    }

    pub fn weight_len(&self) -> usize {
        self.kernel_volume() * self.in_channels * self.out_channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::ShapeMismatch(format!("kernel size {} is not odd", self.kernel_size)));
        }
        if self.stride != 1 && self.stride != 2 {
            return Err(Error::StrideMismatch(format!("conv stride {} not in {{1, 2}}", self.stride)));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::ShapeMismatch("zero channels".into()));
        }
        Ok(())
    }
}
