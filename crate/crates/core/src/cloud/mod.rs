//! Point clouds with per-point YUV attributes: construction, PLY I/O and
//! synthetic data.

mod color;
mod ply;
mod synth;

pub use color::{rgb_to_yuv, rgb_to_yuv_unclamped, yuv_to_rgb};
pub use ply::{load_ply, read_ply, save_ply, write_ply};
pub use synth::{synth_generate, ShapeKind, SynthSpec, TextureKind};

use crate::error::{Error, Result};
use crate::sparse::Coord;

pub const DEFAULT_BIT_DEPTH: u8 = 8;
pub const MAX_BIT_DEPTH: u8 = 16;

/// Voxelized positions with YUV colors (each channel on the 0..255 scale).
///
/// Points are kept in canonical (lexicographic position) order and positions
/// are unique. Colors of duplicate input positions are averaged.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    positions: Vec<Coord>,
    colors: Vec<[f64; 3]>,
    bit_depth: u8,
}

impl PointCloud {
    /// Builds a cloud, validating coordinates and merging duplicates by mean.
    pub fn new(positions: Vec<Coord>, colors: Vec<[f64; 3]>, bit_depth: u8) -> Result<Self> {
        if positions.len() != colors.len() {
            return Err(Error::InvalidCloud(format!("{} positions but {} colors", positions.len(), colors.len())));
        }
        if bit_depth == 0 || bit_depth > MAX_BIT_DEPTH {
            return Err(Error::InvalidCloud(format!("bit depth {bit_depth} not in 1..=16")));
        }
        let limit = 1i64 << bit_depth;
        for p in &positions {
            if p.iter().any(|&c| c < 0 || i64::from(c) >= limit) {
                return Err(Error::InvalidCloud(format!("position {p:?} outside [0, 2^{bit_depth})")));
            }
        }

        // Sorting by (position, color bits) makes the merge independent of input order.
        let mut points: Vec<(Coord, [f64; 3])> = positions.into_iter().zip(colors).collect();
        points.sort_by(|a, b| {
            a.0.cmp(&b.0).then_with(|| {
                let ka = a.1.map(f64::to_bits);
                let kb = b.1.map(f64::to_bits);
                ka.cmp(&kb)
            })
        });

        let mut out_pos: Vec<Coord> = Vec::with_capacity(points.len());
        let mut out_col: Vec<[f64; 3]> = Vec::with_capacity(points.len());
        let mut i = 0;
        while i < points.len() {
            let pos = points[i].0;
            let mut j = i;
            let mut sum = [0.0f64; 3];
            while j < points.len() && points[j].0 == pos {
                for (s, v) in sum.iter_mut().zip(points[j].1) {
                    *s += v;
                }
                j += 1;
            }
            let n = (j - i) as f64;
            out_pos.push(pos);
            let same = points[i..j].iter().all(|p| p.1 == points[i].1);
            out_col.push(if same { points[i].1 } else { sum.map(|s| s / n) });
            i = j;
        }

        Ok(Self { positions: out_pos, colors: out_col, bit_depth })
    }

    /// A black cloud; used when only geometry matters.
    pub fn from_geometry(positions: Vec<Coord>, bit_depth: u8) -> Result<Self> {
        let n = positions.len();
        Self::new(positions, vec![[0.0, 128.0, 128.0]; n], bit_depth)
    }

    pub fn empty(bit_depth: u8) -> Self {
        Self { positions: Vec::new(), colors: Vec::new(), bit_depth }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Coord] {
        &self.positions
    }

    pub fn colors(&self) -> &[[f64; 3]] {
        &self.colors
    }

    pub fn bit_depth(&self) -> u8 {
        self.bit_depth
    }

    /// Replaces the colors, keeping geometry. Lengths must agree.
    pub fn with_colors(&self, colors: Vec<[f64; 3]>) -> Result<Self> {
        if colors.len() != self.positions.len() {
            return Err(Error::InvalidCloud(format!("{} colors for {} points", colors.len(), self.positions.len())));
        }
        Ok(Self { positions: self.positions.clone(), colors, bit_depth: self.bit_depth })
    }

    /// Mean YUV color over all points.
    pub fn mean_color(&self) -> [f64; 3] {
        let mut sum = [0.0; 3];
        for c in &self.colors {
            for k in 0..3 {
                sum[k] += c[k];
            }
        }
        let n = self.len().max(1) as f64;
        sum.map(|s| s / n)
    }
}

/// 64-bit FNV-1a over the sorted position triples, each coordinate as a
/// little-endian u32.
pub fn geometry_digest(positions: &[Coord]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut sorted = positions.to_vec();
    sorted.sort_unstable();
    let mut h = OFFSET;
    for p in &sorted {
        for c in p {
            for b in (*c as u32).to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(PRIME);
            }
        }
    }
    h
}
