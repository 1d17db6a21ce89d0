//! Binary parameter checkpoints.
//!
//! Layout (little-endian): magic `PCGN`, version u16, parameter count u32, then
//! per parameter: id length u32, UTF-8 id, rank u32, dims u32 each, f32 values.

use std::io::{self, Read};
use std::path::Path;

use super::ParamStore;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PCGN";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn checkpoint_to_bytes(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + store.numel() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for p in store.iter() {
        out.extend_from_slice(&(p.id.len() as u32).to_le_bytes());
        out.extend_from_slice(p.id.as_bytes());
        out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
        for d in &p.shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in &p.value {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Parses a whole checkpoint; nothing is returned unless every byte is valid.
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<ParamStore> {
    let mut r = bytes;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::VersionMismatch("not a parameter checkpoint".into()));
    }
    let mut v = [0u8; 2];
    r.read_exact(&mut v)?;
    let version = u16::from_le_bytes(v);
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch(format!("checkpoint version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let count = read_u32(&mut r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        if len > r.len() {
            return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into());
        }
        let mut id = vec![0u8; len];
        r.read_exact(&mut id)?;
        let id = String::from_utf8(id).map_err(|_| Error::VersionMismatch("parameter id is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        if rank * 4 > r.len() {
            return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into());
        }
        let shape = (0..rank).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<io::Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        if n.saturating_mul(4) > r.len() {
            return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into());
        }
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            values.push(f64::from(f32::from_le_bytes(b)));
        }
        if store.contains(&id) {
            return Err(Error::ShapeMismatch(format!("duplicate parameter `{id}`")));
        }
        store.insert(id, shape, values)?;
    }
    if !r.is_empty() {
        return Err(Error::VersionMismatch(format!("{} trailing bytes", r.len())));
    }
    Ok(store)
}

pub fn save_checkpoint(store: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, checkpoint_to_bytes(store))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ParamStore> {
    checkpoint_from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn sample() -> ParamStore {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::new();
        s.insert_kaiming("enc.conv1.weight", vec![27, 3, 4], 81, &mut rng).unwrap();
        s.insert_zeros("enc.conv1.bias", vec![4]).unwrap();
        s.insert("scale", vec![2], vec![-0.0, f64::from(f32::MIN_POSITIVE)]).unwrap();
        s
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&s, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.hash(), s.hash());
        for (a, b) in back.iter().zip(s.iter()) {
            assert_eq!(a.shape, b.shape);
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value), bits(&b.value));
        }
    }

    #[test]
    fn every_truncation_fails() {
        let bytes = checkpoint_to_bytes(&sample());
        for cut in 0..bytes.len() {
            let r = checkpoint_from_bytes(&bytes[..cut]);
            assert!(matches!(r, Err(Error::Io(_)) | Err(Error::VersionMismatch(_))), "cut {cut}: {r:?}");
        }
    }

    #[test]
    fn wrong_version() {
        let mut bytes = checkpoint_to_bytes(&sample());
        bytes[4] = 9;
        assert!(matches!(checkpoint_from_bytes(&bytes), Err(Error::VersionMismatch(_))));
    }

    #[test]
    fn extra_layer_names_the_id() {
        let mut bigger = sample();
        bigger.insert_zeros("enc.conv2.bias", vec![4]).unwrap();
        let loaded = checkpoint_from_bytes(&checkpoint_to_bytes(&bigger)).unwrap();
        let mut model = sample();
        let err = model.load_matching(&loaded).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch(_)));
        assert!(err.to_string().contains("enc.conv2.bias"), "{err}");
    }
}
