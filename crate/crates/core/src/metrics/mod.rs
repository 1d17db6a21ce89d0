//! PSNR, bits per input point and Bjontegaard deltas.

mod bd;

pub use bd::{bd_psnr, bd_rate, bd_report, fit_cubic, polyint, BdRow};

use std::fmt::Write as _;
use std::path::Path;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

/// PSNR reported for a zero-error channel.
pub const PSNR_CAP: f64 = 100.0;
const PEAK: f64 = 255.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Channel {
    Y,
    U,
    V,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Y, Channel::U, Channel::V];

    fn index(self) -> usize {
        self as usize
    }
}

fn check_geometry(a: &PointCloud, b: &PointCloud) -> Result<()> {
    if a.positions() != b.positions() {
        return Err(Error::GeometryMismatch(format!("{} vs {} points, positions differ", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(())
}

/// Mean squared error of one channel over matched points.
pub fn channel_mse(reference: &PointCloud, test: &PointCloud, ch: Channel) -> Result<f64> {
    check_geometry(reference, test)?;
    let i = ch.index();
    let sum: f64 = reference.colors().iter().zip(test.colors()).map(|(a, b)| (a[i] - b[i]).powi(2)).sum();
    Ok(sum / reference.len() as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (PEAK * PEAK / mse).log10()).min(PSNR_CAP)
    }
}

pub fn psnr(reference: &PointCloud, test: &PointCloud, ch: Channel) -> Result<f64> {
    Ok(psnr_from_mse(channel_mse(reference, test, ch)?))
}

/// `[Y, U, V, YUV]` where YUV weights the channel PSNRs 6:1:1.
pub fn psnr_all(reference: &PointCloud, test: &PointCloud) -> Result<[f64; 4]> {
    let y = psnr(reference, test, Channel::Y)?;
    let u = psnr(reference, test, Channel::U)?;
    let v = psnr(reference, test, Channel::V)?;
    Ok([y, u, v, (6.0 * y + u + v) / 8.0])
}

pub fn bpip(stream_bytes: usize, point_count: usize) -> Result<f64> {
    if point_count == 0 {
        return Err(Error::EmptyCloud);
    }
    Ok(8.0 * stream_bytes as f64 / point_count as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RDPoint {
    pub lambda_index: usize,
    pub bpip: f64,
    pub psnr_y: f64,
    pub psnr_u: f64,
    pub psnr_v: f64,
    pub psnr_yuv: f64,
}

impl RDPoint {
    pub fn psnr(&self, ch: usize) -> f64 {
        [self.psnr_y, self.psnr_u, self.psnr_v, self.psnr_yuv][ch]
    }
}

/// Rate-distortion points ordered by increasing rate.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RDCurve {
    pub points: Vec<RDPoint>,
}

impl RDCurve {
    /// Sorts by rate; rates must be positive and finite.
    pub fn new(mut points: Vec<RDPoint>) -> Result<Self> {
        if let Some(p) = points.iter().find(|p| !(p.bpip.is_finite() && p.bpip > 0.0)) {
            return Err(Error::InvalidConfig(format!("rate {} must be positive", p.bpip)));
        }
        points.sort_by(|a, b| a.bpip.total_cmp(&b.bpip));
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn log_rates(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.bpip.log10()).collect()
    }

    pub fn psnrs(&self, ch: usize) -> Vec<f64> {
        self.points.iter().map(|p| p.psnr(ch)).collect()
    }

    pub const CSV_HEADER: &'static str = "lambda_index,bpip,psnr_y,psnr_u,psnr_v,psnr_yuv";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for p in &self.points {
            let _ = writeln!(s, "{},{},{},{},{},{}", p.lambda_index, p.bpip, p.psnr_y, p.psnr_u, p.psnr_v, p.psnr_yuv);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == Self::CSV_HEADER => {}
            _ => return Err(Error::InvalidConfig(format!("RD curve CSV must start with `{}`", Self::CSV_HEADER))),
        }
        let mut points = Vec::new();
        for (n, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = || Error::InvalidConfig(format!("RD curve CSV row {}: `{line}`", n + 2));
            if f.len() != 6 {
                return Err(bad());
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
            points.push(RDPoint {
                lambda_index: f[0].parse().map_err(|_| bad())?,
                bpip: num(1)?,
                psnr_y: num(2)?,
                psnr_u: num(3)?,
                psnr_v: num(4)?,
                psnr_yuv: num(5)?,
            });
        }
        Self::new(points)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}
