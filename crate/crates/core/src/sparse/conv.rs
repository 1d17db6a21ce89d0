use std::sync::Arc;

use rayon::prelude::*;

use super::{build_kernel_map, ConvSpec, CoordSet, KernelMap, SparseTensor};
use crate::error::{Error, Result};

// Rows are handed to rayon in chunks of this many; each row is still summed
// serially in offset order, so results do not depend on the thread count.
const ROW_CHUNK: usize = 64;

/// `out[o] = bias + sum over (k, i) of W[k]^T x[i]`, accumulated per output
/// row in kernel-offset order.
pub fn conv_forward(
    x: &[f64],
    in_ch: usize,
    weight: &[f64],
    bias: Option<&[f64]>,
    out_ch: usize,
    map: &KernelMap,
) -> Vec<f64> {
    debug_assert_eq!(x.len(), map.n_in() * in_ch);
    debug_assert_eq!(weight.len(), map.volume() * in_ch * out_ch);
    let mut out = vec![0.0; map.n_out() * out_ch];
    let wk_len = in_ch * out_ch;
    out.par_chunks_mut(out_ch * ROW_CHUNK).enumerate().for_each(|(chunk, rows)| {
        for (r, acc) in rows.chunks_exact_mut(out_ch).enumerate() {
            let o = chunk * ROW_CHUNK + r;
            if let Some(b) = bias {
                acc.copy_from_slice(b);
            }
            for &(k, i) in map.by_output(o) {
                let wk = &weight[k as usize * wk_len..(k as usize + 1) * wk_len];
                let xi = &x[i as usize * in_ch..(i as usize + 1) * in_ch];
                for (ci, &xv) in xi.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let wrow = &wk[ci * out_ch..(ci + 1) * out_ch];
                    for (a, &w) in acc.iter_mut().zip(wrow) {
                        *a += w * xv;
                    }
                }
            }
        }
    });
    out
}

/// Gradient with respect to the conv input: `gx[i] = sum over (k, o) of W[k] g[o]`.
pub fn conv_backward_input(grad_out: &[f64], in_ch: usize, weight: &[f64], out_ch: usize, map: &KernelMap) -> Vec<f64> {
    let mut gx = vec![0.0; map.n_in() * in_ch];
    let wk_len = in_ch * out_ch;
    gx.par_chunks_mut(in_ch * ROW_CHUNK).enumerate().for_each(|(chunk, rows)| {
        for (r, acc) in rows.chunks_exact_mut(in_ch).enumerate() {
            let i = chunk * ROW_CHUNK + r;
            for &(k, o) in map.by_input(i) {
                let wk = &weight[k as usize * wk_len..(k as usize + 1) * wk_len];
                let go = &grad_out[o as usize * out_ch..(o as usize + 1) * out_ch];
                for (ci, a) in acc.iter_mut().enumerate() {
                    let wrow = &wk[ci * out_ch..(ci + 1) * out_ch];
                    let mut s = 0.0;
                    for (&w, &g) in wrow.iter().zip(go) {
                        s += w * g;
                    }
                    *a += s;
                }
            }
        }
    });
    gx
}

/// Gradient with respect to the weights: `gW[k] = sum over pairs of x[i] g[o]^T`.
pub fn conv_backward_weight(x: &[f64], in_ch: usize, grad_out: &[f64], out_ch: usize, map: &KernelMap) -> Vec<f64> {
    let wk_len = in_ch * out_ch;
    let mut gw = vec![0.0; map.volume() * wk_len];
    gw.par_chunks_mut(wk_len).enumerate().for_each(|(k, gk)| {
        for &(i, o) in map.pairs(k) {
            let xi = &x[i as usize * in_ch..(i as usize + 1) * in_ch];
            let go = &grad_out[o as usize * out_ch..(o as usize + 1) * out_ch];
            for (ci, &xv) in xi.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let row = &mut gk[ci * out_ch..(ci + 1) * out_ch];
                for (a, &g) in row.iter_mut().zip(go) {
                    *a += xv * g;
                }
            }
        }
    });
    gw
}

/// Swaps the channel axes of a `[offset][a][b]` weight block to `[offset][b][a]`.
/// A transposed convolution with the swapped weights is the adjoint of the
/// regular convolution sharing its kernel map.
pub fn transpose_channels(weight: &[f64], volume: usize, a: usize, b: usize) -> Vec<f64> {
    let mut out = vec![0.0; weight.len()];
    for k in 0..volume {
        for i in 0..a {
            for j in 0..b {
                out[k * a * b + j * a + i] = weight[k * a * b + i * b + j];
            }
        }
    }
    out
}

fn check_weights(spec: &ConvSpec, input: &SparseTensor, weights: &[f64], bias: &[f64]) -> Result<()> {
    spec.validate()?;
    if input.channels() != spec.in_channels {
        return Err(Error::ShapeMismatch(format!(
            "input has {} channels, conv expects {}",
            input.channels(),
            spec.in_channels
        )));
    }
    if weights.len() != spec.weight_len() {
        return Err(Error::ShapeMismatch(format!(
            "weight block has {} values, expected {}",
            weights.len(),
            spec.weight_len()
        )));
    }
    if bias.len() != spec.out_channels {
        return Err(Error::ShapeMismatch(format!("bias has {} values, expected {}", bias.len(), spec.out_channels)));
    }
    Ok(())
}

/// Sparse convolution. Stride 1 keeps the input coordinates; stride 2 emits
/// the unique `floor(c / 2t) * 2t` of the input coordinates (`t` = input stride).
pub fn sparse_conv(input: &SparseTensor, weights: &[f64], bias: &[f64], spec: &ConvSpec) -> Result<SparseTensor> {
    if spec.transposed {
        return Err(Error::ShapeMismatch("sparse_conv called with a transposed spec".into()));
    }
    check_weights(spec, input, weights, bias)?;
    let out_coords = if spec.stride == 1 {
        Arc::clone(input.coord_set())
    } else {
        Arc::new(input.coord_set().downsample(spec.stride))
    };
    let map = build_kernel_map(input.coord_set(), &out_coords, spec)?;
    let feats = conv_forward(input.feats(), spec.in_channels, weights, Some(bias), spec.out_channels, &map);
    SparseTensor::new(out_coords, feats, spec.out_channels)
}

/// Transposed sparse convolution evaluated exactly on `target` (stride
/// `input.stride / spec.stride`).
pub fn sparse_conv_transpose(
    input: &SparseTensor,
    weights: &[f64],
    bias: &[f64],
    spec: &ConvSpec,
    target: &Arc<CoordSet>,
) -> Result<SparseTensor> {
    if !spec.transposed {
        return Err(Error::ShapeMismatch("sparse_conv_transpose needs a transposed spec".into()));
    }
    check_weights(spec, input, weights, bias)?;
    let map = build_kernel_map(input.coord_set(), target, spec)?;
    let feats = conv_forward(input.feats(), spec.in_channels, weights, Some(bias), spec.out_channels, &map);
    SparseTensor::new(Arc::clone(target), feats, spec.out_channels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::{kernel_offsets, Coord};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, n: usize, extent: i32, stride: i32, ch: usize) -> SparseTensor {
        let coords: Vec<Coord> = (0..n).map(|_| [0; 3].map(|_: i32| rng.gen_range(0..extent) * stride)).collect();
        let set = CoordSet::new(coords, stride).unwrap();
        let feats = (0..set.len() * ch).map(|_| rng.gen_range(-1.0..1.0)).collect();
        SparseTensor::new(Arc::new(set), feats, ch).unwrap()
    }

    fn identity_weights(k: usize, ch: usize) -> Vec<f64> {
        let vol = k * k * k;
        let center = vol / 2;
        let mut w = vec![0.0; vol * ch * ch];
        for c in 0..ch {
            w[center * ch * ch + c * ch + c] = 1.0;
        }
        w
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&mut rng, 30, 6, 1, 3);
        let spec = ConvSpec::new(3, 1, 3, 3);
        let y = sparse_conv(&x, &identity_weights(3, 3), &[0.0; 3], &spec).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn isolated_point_sees_only_center() {
        let x = SparseTensor::from_rows(vec![([5, 5, 5], vec![2.0])], 1, 1).unwrap();
        let spec = ConvSpec::new(3, 1, 1, 1);
        let y = sparse_conv(&x, &vec![1.0; 27], &[0.0], &spec).unwrap();
        assert_eq!(y.feats(), &[2.0]);
    }

    #[test]
    fn kernel_one_transpose_restricts_to_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor(&mut rng, 20, 5, 1, 2);
        let target = Arc::new(CoordSet::new(x.coords()[..7].iter().copied().chain([[40, 40, 40]]), 1).unwrap());
        let spec = ConvSpec::transposed(1, 1, 2, 2);
        let y = sparse_conv_transpose(&x, &identity_weights(1, 2), &[0.0; 2], &spec, &target).unwrap();
        assert_eq!(y.coord_set(), &target);
        for (j, c) in target.coords().iter().enumerate() {
            let expect = x.get(c).map(|r| r.to_vec()).unwrap_or(vec![0.0; 2]);
            assert_eq!(y.row(j), &expect[..]);
        }
    }

    #[test]
    fn unreachable_target_is_zero() {
        let x = SparseTensor::from_rows(vec![([0, 0, 0], vec![1.0])], 2, 1).unwrap();
        let target = Arc::new(CoordSet::new(vec![[31, 31, 31]], 1).unwrap());
        let spec = ConvSpec::transposed(3, 2, 1, 1);
        let y = sparse_conv_transpose(&x, &vec![1.0; 27], &[0.0], &spec, &target).unwrap();
        assert_eq!(y.feats(), &[0.0]);
    }

    #[test]
    fn shape_errors() {
        let x = SparseTensor::from_rows(vec![([0, 0, 0], vec![1.0])], 1, 1).unwrap();
        let spec = ConvSpec::new(3, 1, 1, 1);
        assert!(matches!(sparse_conv(&x, &[0.0; 26], &[0.0], &spec), Err(Error::ShapeMismatch(_))));
        assert!(matches!(sparse_conv(&x, &[0.0; 27], &[], &spec), Err(Error::ShapeMismatch(_))));
        let spec2 = ConvSpec::new(3, 1, 2, 1);
        assert!(matches!(sparse_conv(&x, &[0.0; 54], &[0.0], &spec2), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..10 {
            let (cin, cout) = (2, 3);
            let k = [3, 5][trial % 2];
            let stride = 1 + (trial % 2) as i32;
            let x = random_tensor(&mut rng, 40, 8, 1, cin);
            let coarse = Arc::new(x.coord_set().downsample(stride));
            let spec = ConvSpec::new(k, stride, cin, cout);
            let w: Vec<f64> = (0..spec.weight_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let cx = sparse_conv(&x, &w, &vec![0.0; cout], &spec).unwrap();
            let y: Vec<f64> = (0..coarse.len() * cout).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let yt = SparseTensor::new(Arc::clone(&coarse), y.clone(), cout).unwrap();
            let wt = transpose_channels(&w, spec.kernel_volume(), cin, cout);
            let tspec = ConvSpec::transposed(k, stride, cout, cin);
            let ty = sparse_conv_transpose(&yt, &wt, &vec![0.0; cin], &tspec, x.coord_set()).unwrap();
            let lhs: f64 = cx.feats().iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.feats().iter().zip(ty.feats()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn backward_kernels_match_explicit_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_tensor(&mut rng, 25, 5, 1, 2);
        let spec = ConvSpec::new(3, 1, 2, 3);
        let map = build_kernel_map(x.coord_set(), x.coord_set(), &spec).unwrap();
        let w: Vec<f64> = (0..spec.weight_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..x.len() * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let gx = conv_backward_input(&g, 2, &w, 3, &map);
        let gw = conv_backward_weight(x.feats(), 2, &g, 3, &map);
        let mut gx_ref = vec![0.0; gx.len()];
        let mut gw_ref = vec![0.0; gw.len()];
        for k in 0..kernel_offsets(3).len() {
            for &(i, o) in map.pairs(k) {
                let (i, o) = (i as usize, o as usize);
                for a in 0..2 {
                    for b in 0..3 {
                        gx_ref[i * 2 + a] += w[k * 6 + a * 3 + b] * g[o * 3 + b];
                        gw_ref[k * 6 + a * 3 + b] += x.feats()[i * 2 + a] * g[o * 3 + b];
                    }
                }
            }
        }
        for (a, b) in gx.iter().zip(&gx_ref).chain(gw.iter().zip(&gw_ref)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn output_independent_of_thread_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_tensor(&mut rng, 400, 12, 1, 4);
        let spec = ConvSpec::new(5, 2, 4, 6);
        let w: Vec<f64> = (0..spec.weight_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| sparse_conv(&x, &w, &[0.1; 6], &spec).unwrap())
        };
        let a = run(1);
        let b = run(3);
        assert_eq!(
            a.feats().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.feats().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
