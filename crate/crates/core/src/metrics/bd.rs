//! Bjontegaard delta metrics from cubic least-squares fits.

use std::fmt::Write as _;

use super::RDCurve;
use crate::error::{Error, Result};

/// Least-squares cubic through `(x, y)`; coefficients in increasing power.
pub fn fit_cubic(x: &[f64], y: &[f64]) -> Result<[f64; 4]> {
    if x.len() < 4 || x.len() != y.len() {
        return Err(Error::InsufficientPoints(x.len().min(y.len())));
    }
    // Normal equations A^T A c = A^T y, solved with partial pivoting.
    let mut m = [[0.0f64; 5]; 4];
    for (&xi, &yi) in x.iter().zip(y) {
        let pw = [1.0, xi, xi * xi, xi * xi * xi];
        for r in 0..4 {
            for c in 0..4 {
                m[r][c] += pw[r] * pw[c];
            }
            m[r][4] += pw[r] * yi;
        }
    }
    for col in 0..4 {
        let piv = (col..4).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())).expect("rows");
        if m[piv][col].abs() < 1e-300 {
            return Err(Error::InvalidConfig("degenerate rate-distortion points".into()));
        }
        m.swap(col, piv);
        for r in 0..4 {
            if r != col {
                let pivot = m[col];
                let f = m[r][col] / pivot[col];
                for (v, p) in m[r].iter_mut().zip(pivot).skip(col) {
                    *v -= f * p;
                }
            }
        }
    }
    Ok([0, 1, 2, 3].map(|i| m[i][4] / m[i][i]))
}

/// Definite integral of a cubic over `[a, b]`.
pub fn polyint(c: &[f64; 4], a: f64, b: f64) -> f64 {
    let f = |x: f64| c[0] * x + c[1] * x * x / 2.0 + c[2] * x.powi(3) / 3.0 + c[3] * x.powi(4) / 4.0;
    f(b) - f(a)
}

fn overlap(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = min(a).max(min(b));
    let hi = max(a).min(max(b));
    if hi <= lo {
        return Err(Error::NoOverlap);
    }
    Ok((lo, hi))
}

fn check(c: &RDCurve) -> Result<()> {
    if c.len() < 4 {
        return Err(Error::InsufficientPoints(c.len()));
    }
    Ok(())
}

/// Mean PSNR gain (dB) of `test` over `reference` on channel `ch`
/// (0..=3 for Y, U, V, YUV), over the shared log-rate interval.
pub fn bd_psnr(reference: &RDCurve, test: &RDCurve, ch: usize) -> Result<f64> {
    check(reference)?;
    check(test)?;
    let (rx, tx) = (reference.log_rates(), test.log_rates());
    let pr = fit_cubic(&rx, &reference.psnrs(ch))?;
    let pt = fit_cubic(&tx, &test.psnrs(ch))?;
    let (lo, hi) = overlap(&rx, &tx)?;
    Ok((polyint(&pt, lo, hi) - polyint(&pr, lo, hi)) / (hi - lo))
}

/// Mean rate change (%) of `test` relative to `reference` at equal PSNR;
/// negative means `test` needs fewer bits.
pub fn bd_rate(reference: &RDCurve, test: &RDCurve, ch: usize) -> Result<f64> {
    check(reference)?;
    check(test)?;
    let (qr, qt) = (reference.psnrs(ch), test.psnrs(ch));
    let rr = fit_cubic(&qr, &reference.log_rates())?;
    let rt = fit_cubic(&qt, &test.log_rates())?;
    let (lo, hi) = overlap(&qr, &qt)?;
    let avg = (polyint(&rt, lo, hi) - polyint(&rr, lo, hi)) / (hi - lo);
    Ok(100.0 * (10f64.powf(avg) - 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BdRow {
    pub channel: &'static str,
    pub bd_rate: f64,
    pub bd_psnr: f64,
}

/// BD-rate and BD-PSNR for Y, U, V and YUV, plus a printable table.
pub fn bd_report(reference: &RDCurve, test: &RDCurve) -> Result<(Vec<BdRow>, String)> {
    let names = ["Y", "U", "V", "YUV"];
    let mut rows = Vec::with_capacity(4);
    for (ch, name) in names.iter().enumerate() {
        rows.push(BdRow {
            channel: name,
            bd_rate: bd_rate(reference, test, ch)?,
            bd_psnr: bd_psnr(reference, test, ch)?,
        });
    }
    let mut s = String::new();
    let _ = writeln!(s, "{:<8}{:>14}{:>16}", "channel", "BD-BR (%)", "BD-PSNR (dB)");
    for r in &rows {
        let _ = writeln!(s, "{:<8}{:>14.4}{:>16.4}", r.channel, r.bd_rate, r.bd_psnr);
    }
    Ok((rows, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::RDPoint;

    fn curve(rates: &[f64], psnr: &[f64]) -> RDCurve {
        RDCurve::new(
            rates
                .iter()
                .zip(psnr)
                .enumerate()
                .map(|(i, (&r, &p))| RDPoint {
                    lambda_index: i,
                    bpip: r,
                    psnr_y: p,
                    psnr_u: p + 3.0,
                    psnr_v: p + 4.0,
                    psnr_yuv: p + 1.0,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn cubic_fit_is_exact_on_cubics() {
        let x = [0.1, 0.7, 1.3, 2.0, 2.2];
        let y: Vec<f64> = x.iter().map(|v| 1.0 - 2.0 * v + 0.5 * v * v + 0.25 * v * v * v).collect();
        let c = fit_cubic(&x, &y).unwrap();
        for (a, b) in c.iter().zip([1.0, -2.0, 0.5, 0.25]) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_and_shifted() {
        let a = curve(&[0.1, 0.3, 0.8, 2.0], &[28.0, 31.0, 34.5, 37.0]);
        assert!(bd_psnr(&a, &a, 0).unwrap().abs() < 1e-9);
        assert!(bd_rate(&a, &a, 0).unwrap().abs() < 1e-9);
        let b = curve(&[0.1, 0.3, 0.8, 2.0], &[29.0, 32.0, 35.5, 38.0]);
        assert!((bd_psnr(&a, &b, 0).unwrap() - 1.0).abs() < 1e-6);
        assert!((bd_psnr(&b, &a, 0).unwrap() + 1.0).abs() < 1e-6);
        assert!(bd_rate(&a, &b, 0).unwrap() < 0.0);
        let c = curve(&[0.2, 0.6, 1.6, 4.0], &[28.0, 31.0, 34.5, 37.0]);
        assert!((bd_rate(&a, &c, 0).unwrap() - 100.0).abs() < 0.1);
    }

    #[test]
    fn errors() {
        let a = curve(&[0.1, 0.3, 0.8], &[28.0, 31.0, 34.5]);
        assert!(matches!(bd_psnr(&a, &a, 0), Err(Error::InsufficientPoints(3))));
        let lo = curve(&[0.1, 0.2, 0.3, 0.4], &[20.0, 21.0, 22.0, 23.0]);
        let hi = curve(&[1.0, 2.0, 3.0, 4.0], &[30.0, 31.0, 32.0, 33.0]);
        assert!(matches!(bd_psnr(&lo, &hi, 0), Err(Error::NoOverlap)));
    }

    #[test]
    fn report_has_four_rows() {
        let a = curve(&[0.1, 0.3, 0.8, 2.0], &[28.0, 31.0, 34.5, 37.0]);
        let (rows, text) = bd_report(&a, &a).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.bd_rate.abs() < 1e-9 && r.bd_psnr.abs() < 1e-9));
        assert!(text.contains("YUV"));
    }
}
