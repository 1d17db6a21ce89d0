//! Small fixture suites behind `pcac selftest`: conv oracle, gradients,
//! entropy coder and BD metrics.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{range_decode, range_encode, rate_estimate, sample_laplace_symbols, EntropyModel};
use crate::error::Result;
use crate::metrics::{bd_psnr, bd_rate, RDCurve, RDPoint};
use crate::nn::gradcheck::{check_gradients, random_store};
use crate::sparse::{
    build_kernel_map, dense_conv_oracle, sparse_conv, sparse_conv_transpose, transpose_channels, ConvSpec, Coord,
    CoordSet, DenseGrid, SparseTensor,
};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn from(name: &'static str, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => Self { name, passed, detail },
            Err(e) => Self { name, passed: false, detail: format!("error: {e}") },
        }
    }
}

pub fn run_all() -> Vec<CheckResult> {
    vec![
        CheckResult::from("conv-oracle", conv_oracle(24, 1)),
        CheckResult::from("conv-adjoint", conv_adjoint(12, 2)),
        CheckResult::from("gradients", gradients(3)),
        CheckResult::from("entropy-coder", entropy_coder(4)),
        CheckResult::from("bd-metrics", bd_fixtures()),
    ]
}

pub fn random_sparse(rng: &mut ChaCha8Rng, n: usize, extent: i32, ch: usize) -> Result<SparseTensor> {
    let coords: Vec<Coord> = (0..n).map(|_| [0; 3].map(|_: i32| rng.gen_range(0..extent))).collect();
    let set = CoordSet::new(coords, 1)?;
    let feats = (0..set.len() * ch).map(|_| rng.gen_range(-1.0..1.0)).collect();
    SparseTensor::new(Arc::new(set), feats, ch)
}

/// Largest relative deviation between `sparse_conv` and the dense oracle,
/// read at the sparse output sites, for one random case.
pub fn conv_oracle_case(rng: &mut ChaCha8Rng, kernel: usize, stride: i32, extent: i32) -> Result<f64> {
    let (ci, co) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
    let n = rng.gen_range(1..=(extent * extent * extent / 4) as usize);
    let x = random_sparse(rng, n, extent, ci)?;
    let spec = ConvSpec::new(kernel, stride, ci, co);
    let w: Vec<f64> = (0..spec.weight_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..co).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y = sparse_conv(&x, &w, &b, &spec)?;
    let e = extent as usize;
    let dense = dense_conv_oracle(&DenseGrid::from_sparse(&x, [0; 3], [e; 3]), &w, &b, &spec);
    let mut worst = 0.0f64;
    for (r, c) in y.coords().iter().enumerate() {
        let q = c.map(|v| (v / stride) as usize);
        for (a, d) in y.row(r).iter().zip(dense.at(q)) {
            worst = worst.max((a - d).abs() / d.abs().max(1.0));
        }
    }
    Ok(worst)
}

/// Relative gap `|<Conv x, y> - <x, ConvT y>|` for one random case.
pub fn conv_adjoint_case(rng: &mut ChaCha8Rng, kernel: usize, stride: i32, extent: i32) -> Result<f64> {
    let (ci, co) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
    let n = rng.gen_range(1..=(extent * extent * extent / 4) as usize);
    let x = random_sparse(rng, n, extent, ci)?;
    let spec = ConvSpec::new(kernel, stride, ci, co);
    let w: Vec<f64> = (0..spec.weight_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let cx = sparse_conv(&x, &w, &vec![0.0; co], &spec)?;
    let y: Vec<f64> = (0..cx.len() * co).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let yt = SparseTensor::new(Arc::clone(cx.coord_set()), y.clone(), co)?;
    let wt = transpose_channels(&w, spec.kernel_volume(), ci, co);
    let ty =
        sparse_conv_transpose(&yt, &wt, &vec![0.0; ci], &ConvSpec::transposed(kernel, stride, co, ci), x.coord_set())?;
    let lhs: f64 = cx.feats().iter().zip(&y).map(|(a, b)| a * b).sum();
    let rhs: f64 = x.feats().iter().zip(ty.feats()).map(|(a, b)| a * b).sum();
    Ok((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-12))
}

fn conv_oracle(cases: usize, seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..cases {
        worst = worst.max(conv_oracle_case(&mut rng, [3, 5, 9][i % 3], 1 + (i / 3 % 2) as i32, 10)?);
    }
    Ok((worst <= 1e-5, format!("{cases} cases, worst relative error {worst:.2e}")))
}

fn conv_adjoint(cases: usize, seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..cases {
        worst = worst.max(conv_adjoint_case(&mut rng, [3, 5, 9][i % 3], 1 + (i % 2) as i32, 10)?);
    }
    Ok((worst <= 1e-6, format!("{cases} cases, worst relative gap {worst:.2e}")))
}

fn gradients(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_sparse(&mut rng, 30, 6, 2)?;
    let map = Arc::new(build_kernel_map(x.coord_set(), x.coord_set(), &ConvSpec::new(3, 1, 2, 2))?);
    let mut store = random_store(&[("w", vec![27, 2, 2]), ("b", vec![2]), ("s", vec![1, 2])], -0.5, 0.5, seed)?;
    let feats = x.feats().to_vec();
    let n = x.len();
    let targets: Vec<f64> = (0..n * 2).map(|_| rng.gen_range(0.0..1.0)).collect();
    let report = check_gradients(&mut store, 60, seed, false, 0, |s, t| {
        let xin = t.leaf(n, 2, feats.clone())?;
        let w = t.param(s, "w")?;
        let b = t.param(s, "b")?;
        let h = t.conv(xin, w, Some(b), map.clone(), 2, 2)?;
        let p = t.sigmoid(h);
        let l1 = t.bce(p, targets.clone())?;
        let z = t.scale(h, 3.0);
        let ls = t.param(s, "s")?;
        let bits = t.laplace_bits(z, ls)?;
        let bits = t.scale(bits, 0.01);
        t.add(l1, bits)
    })?;
    Ok((report.passed(), format!("{} entries, max abs error {:.2e}", report.checked, report.max_abs_err)))
}

fn entropy_coder(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scales = vec![0.3, 1.5, 6.0];
    let model = EntropyModel::new(scales.clone());
    let n = 30_000;
    let mut symbols = vec![0; n];
    for (c, &b) in scales.iter().enumerate() {
        for (k, v) in sample_laplace_symbols(&mut rng, b, n / 3).into_iter().enumerate() {
            symbols[k * 3 + c] = v;
        }
    }
    let bytes = range_encode(&symbols, &model)?;
    let back = range_decode(&bytes, n, &model)?;
    let ideal = rate_estimate(&symbols, &model);
    let coded = 8.0 * bytes.len() as f64;
    let ok = back == symbols && coded <= 1.02 * ideal + 64.0;
    Ok((ok, format!("{n} symbols, {coded} bits coded vs {ideal:.0} ideal")))
}

fn bd_fixtures() -> Result<(bool, String)> {
    let curve = |rates: [f64; 4], psnr: [f64; 4]| {
        RDCurve::new(
            (0..4)
                .map(|i| RDPoint {
                    lambda_index: i,
                    bpip: rates[i],
                    psnr_y: psnr[i],
                    psnr_u: psnr[i],
                    psnr_v: psnr[i],
                    psnr_yuv: psnr[i],
                })
                .collect(),
        )
    };
    let rates = [0.1, 0.25, 0.6, 1.5];
    let psnr = [27.0, 30.5, 33.0, 36.0];
    let a = curve(rates, psnr)?;
    let shifted = curve(rates, psnr.map(|p| p + 1.0))?;
    let doubled = curve(rates.map(|r| 2.0 * r), psnr)?;
    let same = bd_psnr(&a, &a, 0)?.abs().max(bd_rate(&a, &a, 0)?.abs());
    let gain = bd_psnr(&a, &shifted, 0)?;
    let rate = bd_rate(&a, &doubled, 0)?;
    let ok = same < 1e-9 && (gain - 1.0).abs() < 1e-6 && (rate - 100.0).abs() < 0.1;
    Ok((ok, format!("identical {same:.1e}, +1 dB gives {gain:.6}, 2x rate gives {rate:.4}%")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass() {
        for r in run_all() {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }
}
