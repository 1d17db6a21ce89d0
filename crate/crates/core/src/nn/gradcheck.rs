//! Central finite-difference gradient checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ParamStore, Tape, Var};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-4;
pub const FD_RTOL: f64 = 1e-3;
pub const FD_ATOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradMismatch {
    pub id: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_abs_err: f64,
    pub failures: Vec<GradMismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }
}

pub fn within_tolerance(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= FD_ATOL + FD_RTOL * analytic.abs().max(numeric.abs())
}

/// Compares back-propagated gradients of `loss` against central differences
/// on up to `samples` entries drawn from `store` (all entries if fewer).
///
/// `loss` is rebuilt from scratch for every evaluation on a tape created with
/// the same `training` flag and `tape_seed`, so dropout masks stay fixed.
/// Gradients in `store` are overwritten.
pub fn check_gradients<F>(
    store: &mut ParamStore,
    samples: usize,
    seed: u64,
    training: bool,
    tape_seed: u64,
    loss: F,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new(training, tape_seed);
        let l = loss(s, &mut t)?;
        Ok(t.scalar_value(l))
    };

    store.zero_grad();
    let mut tape = Tape::new(training, tape_seed);
    let l = loss(store, &mut tape)?;
    tape.backward(l, store)?;

    let entries: Vec<(String, usize)> =
        store.iter().flat_map(|p| (0..p.numel()).map(move |i| (p.id.clone(), i))).collect();
    let picks: Vec<usize> = if entries.len() <= samples {
        (0..entries.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::index::sample(&mut rng, entries.len(), samples).into_vec()
    };

    let mut report = GradCheckReport::default();
    for k in picks {
        let (id, i) = &entries[k];
        let (orig, analytic) = {
            let p = store.get(id)?;
            (p.value[*i], p.grad[*i])
        };
        store.get_mut(id)?.value[*i] = orig + FD_STEP;
        let up = eval(store)?;
        store.get_mut(id)?.value[*i] = orig - FD_STEP;
        let down = eval(store)?;
        store.get_mut(id)?.value[*i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        report.checked += 1;
        report.max_abs_err = report.max_abs_err.max((analytic - numeric).abs());
        if !within_tolerance(analytic, numeric) {
            report.failures.push(GradMismatch { id: id.clone(), index: *i, analytic, numeric });
        }
    }
    store.zero_grad();
    Ok(report)
}

/// Fills a store with one parameter of random values in `[lo, hi)`, handy for
/// checking primitives whose inputs are not model parameters.
pub fn random_store(entries: &[(&str, Vec<usize>)], lo: f64, hi: f64, seed: u64) -> Result<ParamStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    for (id, shape) in entries {
        let n = shape.iter().product();
        let v = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
        s.insert(*id, shape.clone(), v)?;
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::{build_kernel_map, ConvSpec, Coord, CoordSet};
    use std::sync::Arc;

    fn assert_passes(r: GradCheckReport) {
        assert!(r.passed(), "{} checked, failures: {:?}", r.checked, &r.failures[..r.failures.len().min(5)]);
    }

    #[test]
    fn smooth_elementwise_ops() {
        let mut s = random_store(&[("x", vec![6, 4]), ("y", vec![6, 4])], -2.0, 2.0, 1).unwrap();
        let r = check_gradients(&mut s, 100, 2, false, 0, |s, t| {
            let x = t.param(s, "x")?;
            let y = t.param(s, "y")?;
            let a = t.sigmoid(x);
            let b = t.scale(y, 0.7);
            let c = t.add(a, b)?;
            let d = t.slice_cols(c, 1, 2)?;
            let d = t.gather_rows(d, vec![5, 0, 0, 3, 2, 1])?;
            let e = t.segment_mean(d, vec![0, 2, 6])?;
            let f = t.mse(e, vec![0.1, 0.2, 0.3, 0.4], 3.0)?;
            let g = t.mean(c);
            t.add(f, g)
        })
        .unwrap();
        assert_passes(r);
    }

    #[test]
    fn relu_clamp_dropout() {
        // Values kept away from the kinks so finite differences never cross them.
        let mut s = random_store(&[("x", vec![10, 10])], 0.05, 0.95, 3).unwrap();
        for (i, v) in s.get_mut("x").unwrap().value.iter_mut().enumerate() {
            if i % 3 == 0 {
                *v -= 1.0;
            } else if i % 3 == 1 {
                *v += 1.0;
            }
        }
        let r = check_gradients(&mut s, 100, 4, true, 9, |s, t| {
            let x = t.param(s, "x")?;
            let a = t.relu(x);
            let b = t.clamp01(x);
            let c = t.dropout(b, 0.3);
            let d = t.add(a, c)?;
            let sq = t.mse(d, vec![0.25; 100], 1.0)?;
            Ok(sq)
        })
        .unwrap();
        assert_passes(r);
    }

    #[test]
    fn conv_and_linear() {
        let coords: Vec<Coord> = (0..30).map(|i| [i % 5, (i * 7) % 6, (i * 3) % 4]).collect();
        let fine = Arc::new(CoordSet::new(coords, 1).unwrap());
        let coarse = Arc::new(fine.downsample(2));
        let spec = ConvSpec::new(3, 2, 2, 3);
        let map = Arc::new(build_kernel_map(&fine, &coarse, &spec).unwrap());
        let tspec = ConvSpec::transposed(3, 2, 3, 2);
        let tmap = Arc::new(build_kernel_map(&coarse, &fine, &tspec).unwrap());
        let n = fine.len();
        let mut s = random_store(
            &[
                ("x", vec![n, 2]),
                ("w", vec![27, 2, 3]),
                ("b", vec![3]),
                ("wt", vec![27, 3, 2]),
                ("lw", vec![2, 1]),
                ("lb", vec![1]),
            ],
            -1.0,
            1.0,
            5,
        )
        .unwrap();
        let r = check_gradients(&mut s, 150, 6, false, 0, |s, t| {
            let x = t.param(s, "x")?;
            let w = t.param(s, "w")?;
            let b = t.param(s, "b")?;
            let y = t.conv(x, w, Some(b), map.clone(), 2, 3)?;
            let wt = t.param(s, "wt")?;
            let z = t.conv(y, wt, None, tmap.clone(), 3, 2)?;
            let lw = t.param(s, "lw")?;
            let lb = t.param(s, "lb")?;
            let o = t.linear(z, lw, Some(lb))?;
            t.mse(o, vec![0.5; n], 1.0)
        })
        .unwrap();
        assert_passes(r);
    }
}
