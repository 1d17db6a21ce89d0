//! Dense reference convolution, used only to check the sparse engine.

use super::{kernel_offsets, ConvSpec, Coord, SparseTensor};

/// Dense `[x][y][z][channel]` grid indexed in lattice units.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrid {
    pub dims: [usize; 3],
    pub channels: usize,
    pub data: Vec<f64>,
}

impl DenseGrid {
    pub fn zeros(dims: [usize; 3], channels: usize) -> Self {
        Self { dims, channels, data: vec![0.0; dims[0] * dims[1] * dims[2] * channels] }
    }

    fn offset(&self, p: [usize; 3]) -> usize {
        ((p[0] * self.dims[1] + p[1]) * self.dims[2] + p[2]) * self.channels
    }

    pub fn at(&self, p: [usize; 3]) -> &[f64] {
        let o = self.offset(p);
        &self.data[o..o + self.channels]
    }

    pub fn at_mut(&mut self, p: [usize; 3]) -> &mut [f64] {
        let o = self.offset(p);
        let c = self.channels;
        &mut self.data[o..o + c]
    }

    /// Scatters a sparse tensor onto a grid; lattice index `(c - origin) / stride`.
    pub fn from_sparse(t: &SparseTensor, origin: Coord, dims: [usize; 3]) -> Self {
        let mut g = Self::zeros(dims, t.channels());
        let s = t.stride();
        for (i, c) in t.coords().iter().enumerate() {
            let p = [0, 1, 2].map(|a| ((c[a] - origin[a]) / s) as usize);
            g.at_mut(p).copy_from_slice(t.row(i));
        }
        g
    }
}

/// Plain triple-loop convolution with zero padding. Output index `q` reads the
/// input around `q * stride`, so output dims are `ceil(dims / stride)`.
pub fn dense_conv_oracle(input: &DenseGrid, weights: &[f64], bias: &[f64], spec: &ConvSpec) -> DenseGrid {
    assert!(!spec.transposed, "oracle covers regular convolution only");
    assert_eq!(input.channels, spec.in_channels);
    assert_eq!(weights.len(), spec.weight_len());
    let s = spec.stride as usize;
    let dims = input.dims.map(|d| d.div_ceil(s));
    let mut out = DenseGrid::zeros(dims, spec.out_channels);
    let offsets = kernel_offsets(spec.kernel_size);
    let (ci_n, co_n) = (spec.in_channels, spec.out_channels);
    for qx in 0..dims[0] {
        for qy in 0..dims[1] {
            for qz in 0..dims[2] {
                let mut acc = bias.to_vec();
                for (k, d) in offsets.iter().enumerate() {
                    let p = [qx * s, qy * s, qz * s];
                    let src: Vec<i64> = (0..3).map(|a| p[a] as i64 + i64::from(d[a])).collect();
                    if (0..3).any(|a| src[a] < 0 || src[a] >= input.dims[a] as i64) {
                        continue;
                    }
                    let x = input.at([src[0] as usize, src[1] as usize, src[2] as usize]);
                    for ci in 0..ci_n {
                        for co in 0..co_n {
                            acc[co] += weights[(k * ci_n + ci) * co_n + co] * x[ci];
                        }
                    }
                }
                out.at_mut([qx, qy, qz]).copy_from_slice(&acc);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::{sparse_conv, CoordSet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn random_grid(rng: &mut ChaCha8Rng, n: usize, ch: usize) -> DenseGrid {
        let mut g = DenseGrid::zeros([n; 3], ch);
        for v in &mut g.data {
            *v = rng.gen_range(-1.0..1.0);
        }
        g
    }

    #[test]
    fn identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = random_grid(&mut rng, 5, 2);
        let spec = ConvSpec::new(3, 1, 2, 2);
        let mut w = vec![0.0; spec.weight_len()];
        w[13 * 4] = 1.0;
        w[13 * 4 + 3] = 1.0;
        assert_eq!(dense_conv_oracle(&g, &w, &[0.0, 0.0], &spec), g);
    }

    #[test]
    fn linear_without_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let g = random_grid(&mut rng, 4, 1);
        let spec = ConvSpec::new(3, 2, 1, 2);
        let w: Vec<f64> = (0..spec.weight_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut g2 = g.clone();
        g2.data.iter_mut().for_each(|v| *v *= 2.5);
        let a = dense_conv_oracle(&g, &w, &[0.0; 2], &spec);
        let b = dense_conv_oracle(&g2, &w, &[0.0; 2], &spec);
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((2.5 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn agrees_with_sparse_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let coords: Vec<Coord> = (0..60).map(|_| [0; 3].map(|_: i32| rng.gen_range(0..8))).collect();
        let set = Arc::new(CoordSet::new(coords, 1).unwrap());
        let feats = (0..set.len() * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = SparseTensor::new(set, feats, 2).unwrap();
        let spec = ConvSpec::new(5, 2, 2, 3);
        let w: Vec<f64> = (0..spec.weight_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bias = [0.1, -0.2, 0.3];
        let y = sparse_conv(&x, &w, &bias, &spec).unwrap();
        let dense = dense_conv_oracle(&DenseGrid::from_sparse(&x, [0; 3], [8; 3]), &w, &bias, &spec);
        for (i, c) in y.coords().iter().enumerate() {
            let d = dense.at(c.map(|v| (v / 2) as usize));
            for (a, b) in y.row(i).iter().zip(d) {
                assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
            }
        }
    }
}
