//! Compressed stream layout (all numbers little-endian):
//!
//! `PCAB` | version u16 | lambda index u8 | flags u8 | geometry digest u64 |
//! bit depth u8 | block edge u8 | block count u32 | class bitmap |
//! latent count u32 | latent channels u8 | per channel: scale f32 |
//! body length u32 | body.
//!
//! The bitmap holds one bit per block in origin order, least significant bit
//! first, set for dense blocks; unused bits are zero. Block origins follow from
//! the geometry, so only the classes are sent. With `FLAG_NO_AVRPM` the count
//! is zero.

use crate::avrpm::DensityClass;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PCAB";
pub const STREAM_VERSION: u16 = 1;

/// Every block is dense (adaptive voxelization disabled).
pub const FLAG_NO_AVRPM: u8 = 1;
/// Latents live on the full bounding-box lattice instead of the occupied one.
pub const FLAG_DENSE_CONV: u8 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct Bitstream {
    pub version: u16,
    pub lambda_index: u8,
    pub flags: u8,
    pub digest: u64,
    pub bit_depth: u8,
    pub block_edge: u8,
    /// Block classes in origin order; empty with `FLAG_NO_AVRPM`.
    pub classes: Vec<DensityClass>,
    pub latent_count: u32,
    pub scales: Vec<f32>,
    pub body: Vec<u8>,
}

impl Bitstream {
    pub fn latent_channels(&self) -> usize {
        self.scales.len()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(32 + self.classes.len() / 8 + self.body.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.push(self.lambda_index);
        out.push(self.flags);
        out.extend_from_slice(&self.digest.to_le_bytes());
        out.push(self.bit_depth);
        out.push(self.block_edge);
        out.extend_from_slice(&(self.classes.len() as u32).to_le_bytes());
        for chunk in self.classes.chunks(8) {
            out.push(
                chunk.iter().enumerate().fold(0u8, |acc, (i, c)| acc | (u8::from(*c == DensityClass::Dense) << i)),
            );
        }
        out.extend_from_slice(&self.latent_count.to_le_bytes());
        let channels = u8::try_from(self.scales.len())
            .map_err(|_| Error::InvalidConfig(format!("{} latent channels", self.scales.len())))?;
        out.push(channels);
        for s in &self.scales {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out.extend_from_slice(&(self.body.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.body);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::CorruptStream("missing stream magic".into()));
        }
        let version = r.u16()?;
        if version != STREAM_VERSION {
            return Err(Error::VersionMismatch(format!("stream version {version}, expected {STREAM_VERSION}")));
        }
        let lambda_index = r.u8()?;
        let flags = r.u8()?;
        let digest = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let bit_depth = r.u8()?;
        let block_edge = r.u8()?;
        let n_blocks = r.u32()? as usize;
        let bitmap = r.take(n_blocks.div_ceil(8))?;
        let classes: Vec<DensityClass> = (0..n_blocks)
            .map(|i| if bitmap[i / 8] >> (i % 8) & 1 == 1 { DensityClass::Dense } else { DensityClass::Sparse })
            .collect();
        if !n_blocks.is_multiple_of(8) && bitmap[n_blocks / 8] >> (n_blocks % 8) != 0 {
            return Err(Error::CorruptStream("nonzero padding in the class bitmap".into()));
        }
        let latent_count = r.u32()?;
        let channels = r.u8()? as usize;
        if channels == 0 {
            return Err(Error::CorruptStream("zero latent channels".into()));
        }
        let mut scales = Vec::with_capacity(channels);
        for _ in 0..channels {
            let s = f32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
            if !s.is_finite() || s <= 0.0 {
                return Err(Error::CorruptStream(format!("invalid entropy scale {s}")));
            }
            scales.push(s);
        }
        let body_len = r.u32()? as usize;
        let body = r.take(body_len)?.to_vec();
        if r.remaining() != 0 {
            return Err(Error::CorruptStream(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self { version, lambda_index, flags, digest, bit_depth, block_edge, classes, latent_count, scales, body })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::CorruptStream("stream ends inside the header".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
