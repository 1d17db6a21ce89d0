use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};

/// Rounds to the nearest f32. Parameters live in f64 for computation but are
/// kept f32-representable so checkpoints round-trip bit-exactly.
pub fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub id: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Parameter {
    pub fn numel(&self) -> usize {
        self.value.len()
    }
}

/// Named trainable parameters, iterated in id order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, shape: Vec<usize>, value: Vec<f64>) -> Result<()> {
        let id = id.into();
        let n: usize = shape.iter().product();
        if n != value.len() {
            return Err(Error::ShapeMismatch(format!("`{id}`: shape {shape:?} but {} values", value.len())));
        }
        let value: Vec<f64> = value.into_iter().map(round_f32).collect();
        self.params.insert(id.clone(), Parameter { id, shape, grad: vec![0.0; n], value });
        Ok(())
    }

    /// Kaiming-uniform (fan-in) initialization: `U(-b, b)`, `b = sqrt(6 / fan_in)`.
    pub fn insert_kaiming<R: Rng>(&mut self, id: &str, shape: Vec<usize>, fan_in: usize, rng: &mut R) -> Result<()> {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let value = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        self.insert(id, shape, value)
    }

    pub fn insert_zeros(&mut self, id: &str, shape: Vec<usize>) -> Result<()> {
        let n = shape.iter().product();
        self.insert(id, shape, vec![0.0; n])
    }

    pub fn get(&self, id: &str) -> Result<&Parameter> {
        self.params.get(id).ok_or_else(|| Error::ShapeMismatch(format!("no parameter `{id}`")))
    }

    pub fn get_mut(&mut self, id: &str) -> Result<&mut Parameter> {
        self.params.get_mut(id).ok_or_else(|| Error::ShapeMismatch(format!("no parameter `{id}`")))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.params.contains_key(id)
    }

    pub fn value(&self, id: &str) -> Result<&[f64]> {
        Ok(&self.get(id)?.value)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.values()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.values_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.params.values().map(Parameter::numel).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Sets every value to zero.
    pub fn zero_values(&mut self) {
        for p in self.params.values_mut() {
            p.value.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Parameters whose id starts with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        let params =
            self.params.iter().filter(|(k, _)| k.starts_with(prefix)).map(|(k, v)| (k.clone(), v.clone())).collect();
        ParamStore { params }
    }

    /// Copy with `prefix` prepended to every id.
    pub fn with_prefix(&self, prefix: &str) -> ParamStore {
        let params = self
            .params
            .values()
            .map(|p| {
                let id = format!("{prefix}{}", p.id);
                (id.clone(), Parameter { id, ..p.clone() })
            })
            .collect();
        ParamStore { params }
    }

    /// Parameters under `prefix`, with the prefix removed.
    pub fn strip_prefix(&self, prefix: &str) -> ParamStore {
        let params = self
            .params
            .values()
            .filter_map(|p| {
                let id = p.id.strip_prefix(prefix)?.to_string();
                Some((id.clone(), Parameter { id, ..p.clone() }))
            })
            .collect();
        ParamStore { params }
    }

    /// Adds every parameter of `other`; ids must not collide.
    pub fn merge(&mut self, other: &ParamStore) -> Result<()> {
        for (k, v) in &other.params {
            if self.params.contains_key(k) {
                return Err(Error::ShapeMismatch(format!("duplicate parameter `{k}` in merge")));
            }
            self.params.insert(k.clone(), v.clone());
        }
        Ok(())
    }

    /// Copies values from `other`, which must hold exactly the same ids and
    /// shapes. The first offending id is named in the error.
    pub fn load_matching(&mut self, other: &ParamStore) -> Result<()> {
        for (k, v) in &other.params {
            match self.params.get(k) {
                None => return Err(Error::ShapeMismatch(format!("unexpected parameter `{k}`"))),
                Some(p) if p.shape != v.shape => {
                    return Err(Error::ShapeMismatch(format!(
                        "parameter `{k}` has shape {:?}, expected {:?}",
                        v.shape, p.shape
                    )))
                }
                _ => {}
            }
        }
        if let Some(k) = self.params.keys().find(|k| !other.params.contains_key(*k)) {
            return Err(Error::ShapeMismatch(format!("missing parameter `{k}`")));
        }
        for (k, v) in &other.params {
            self.params.get_mut(k).expect("checked").value.clone_from(&v.value);
        }
        Ok(())
    }

    /// FNV-1a over ids, shapes and the f32 bits of every value.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for p in self.params.values() {
            eat(p.id.as_bytes());
            for d in &p.shape {
                eat(&(*d as u32).to_le_bytes());
            }
            for v in &p.value {
                eat(&(*v as f32).to_le_bytes());
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_are_f32_representable() {
        let mut s = ParamStore::new();
        s.insert("w", vec![1], vec![0.1]).unwrap();
        assert_eq!(s.value("w").unwrap()[0], 0.1f32 as f64);
    }

    #[test]
    fn shape_checks() {
        let mut s = ParamStore::new();
        assert!(s.insert("w", vec![2, 2], vec![0.0; 3]).is_err());
        s.insert("a", vec![2], vec![1.0, 2.0]).unwrap();
        let mut other = ParamStore::new();
        other.insert("a", vec![3], vec![0.0; 3]).unwrap();
        let err = s.load_matching(&other).unwrap_err().to_string();
        assert!(err.contains("`a`"), "{err}");
    }

    #[test]
    fn prefix_round_trip() {
        let mut s = ParamStore::new();
        s.insert("a.w", vec![1], vec![1.0]).unwrap();
        let p = s.with_prefix("m0.");
        assert!(p.contains("m0.a.w"));
        assert_eq!(p.strip_prefix("m0."), s);
        assert!(p.strip_prefix("m1.").is_empty());
    }

    #[test]
    fn hash_tracks_values() {
        let mut s = ParamStore::new();
        s.insert("a", vec![1], vec![1.0]).unwrap();
        let h = s.hash();
        s.get_mut("a").unwrap().value[0] = 2.0;
        assert_ne!(h, s.hash());
    }
}
