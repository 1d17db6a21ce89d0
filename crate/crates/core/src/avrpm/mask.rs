//! Block density classifier: three 3x3x3 convolutions over a 4x4x4 occupancy
//! summary, global average, sigmoid. Output column 0 is the sparse mask,
//! column 1 the dense mask.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{label_density, partition_blocks, DensityClass, Partition};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::nn::{bce, Adam, ParamStore, Tape, Var};
use crate::sparse::{build_kernel_map, ConvSpec, CoordSet, KernelMap};

/// Summary cells per block axis.
pub const SUMMARY_CELLS: usize = 4;
const CELLS: usize = SUMMARY_CELLS * SUMMARY_CELLS * SUMMARY_CELLS;
// Gap between block grids on the shared lattice; > kernel radius keeps blocks independent.
const BLOCK_SPACING: i32 = SUMMARY_CELLS as i32 + 2;
const CHANNELS: [usize; 4] = [1, 8, 16, 2];

pub const DEFAULT_ALPHA: f64 = 0.3;

/// Occupancy counts on a 4x4x4 grid per block, normalized by the cell face
/// area so a flat surface crossing a cell scores about 1.
pub fn block_summaries(pc: &PointCloud, part: &Partition) -> Vec<[f64; CELLS]> {
    let cell = (part.block_edge / SUMMARY_CELLS as i32).max(1);
    let norm = f64::from(cell * cell);
    part.blocks
        .par_iter()
        .map(|b| {
            let mut grid = [0.0; CELLS];
            for &i in &b.point_indices {
                let p = pc.positions()[i];
                let l = [0, 1, 2].map(|a| ((p[a] - b.origin[a]) / cell) as usize);
                grid[(l[2] * SUMMARY_CELLS + l[1]) * SUMMARY_CELLS + l[0]] += 1.0;
            }
            grid.map(|v| v / norm)
        })
        .collect()
}

fn lattice(blocks: usize) -> Result<(Arc<CoordSet>, Arc<KernelMap>)> {
    let mut coords = Vec::with_capacity(blocks * CELLS);
    for b in 0..blocks {
        for z in 0..SUMMARY_CELLS as i32 {
            for y in 0..SUMMARY_CELLS as i32 {
                for x in 0..SUMMARY_CELLS as i32 {
                    coords.push([b as i32 * BLOCK_SPACING + x, y, z]);
                }
            }
        }
    }
    let set = Arc::new(CoordSet::new(coords, 1)?);
    let map = Arc::new(build_kernel_map(&set, &set, &ConvSpec::new(3, 1, 1, 1))?);
    Ok((set, map))
}

pub fn init_mask_params(seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    for l in 0..3 {
        let (ci, co) = (CHANNELS[l], CHANNELS[l + 1]);
        let id = format!("avrpm.conv{}", l + 1);
        s.insert_kaiming(&format!("{id}.weight"), vec![27, ci, co], 27 * ci, &mut rng).expect("valid shape");
        s.insert_zeros(&format!("{id}.bias"), vec![co]).expect("valid shape");
    }
    s
}

/// Records the classifier on `tape`; returns a `blocks x 2` probability node.
pub fn mask_forward_on_tape(
    tape: &mut Tape,
    store: &ParamStore,
    summaries: &[[f64; CELLS]],
    trainable: bool,
) -> Result<Var> {
    if summaries.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (set, map) = lattice(summaries.len())?;
    // Lattice order is block-major then (z, y, x), which is how summaries are laid out.
    let mut feats = vec![0.0; set.len()];
    for (r, c) in set.coords().iter().enumerate() {
        let b = (c[0] / BLOCK_SPACING) as usize;
        let x = (c[0] % BLOCK_SPACING) as usize;
        feats[r] = summaries[b][(c[2] as usize * SUMMARY_CELLS + c[1] as usize) * SUMMARY_CELLS + x];
    }
    let mut h = tape.leaf(set.len(), 1, feats)?;
    for l in 0..3 {
        let id = format!("avrpm.conv{}", l + 1);
        let (w, b) = if trainable {
            (tape.param(store, &format!("{id}.weight"))?, tape.param(store, &format!("{id}.bias"))?)
        } else {
            (tape.frozen_param(store, &format!("{id}.weight"))?, tape.frozen_param(store, &format!("{id}.bias"))?)
        };
        h = tape.conv(h, w, Some(b), map.clone(), CHANNELS[l], CHANNELS[l + 1])?;
        if l < 2 {
            h = tape.relu(h);
        }
    }
    let offsets = (0..=summaries.len()).map(|b| b * CELLS).collect();
    let pooled = tape.segment_mean(h, offsets)?;
    Ok(tape.sigmoid(pooled))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskPrediction {
    /// `[p_sparse, p_dense]` per block.
    pub probs: Vec<[f64; 2]>,
}

impl MaskPrediction {
    /// Argmax class per block; ties go to dense.
    pub fn classes(&self) -> Vec<DensityClass> {
        self.probs.iter().map(|p| if p[1] >= p[0] { DensityClass::Dense } else { DensityClass::Sparse }).collect()
    }

    pub fn accuracy(&self, labels: &[DensityClass]) -> f64 {
        let hits = self.classes().iter().zip(labels).filter(|(a, b)| a == b).count();
        hits as f64 / labels.len().max(1) as f64
    }
}

pub fn mask_forward(store: &ParamStore, summaries: &[[f64; CELLS]]) -> Result<MaskPrediction> {
    let mut tape = Tape::new(false, 0);
    let p = mask_forward_on_tape(&mut tape, store, summaries, false)?;
    Ok(MaskPrediction { probs: tape.value(p).chunks_exact(2).map(|c| [c[0], c[1]]).collect() })
}

fn mask_targets(labels: &[DensityClass]) -> (Vec<f64>, Vec<f64>) {
    let dense: Vec<f64> = labels.iter().map(|c| f64::from(u8::from(*c == DensityClass::Dense))).collect();
    let sparse = dense.iter().map(|d| 1.0 - d).collect();
    (sparse, dense)
}

/// `alpha * BCE(sparse mask) + (1 - alpha) * BCE(dense mask)`, each averaged
/// over blocks.
pub fn avrpm_loss(pred: &MaskPrediction, labels: &[DensityClass], alpha: f64) -> Result<f64> {
    if pred.probs.len() != labels.len() || labels.is_empty() {
        return Err(Error::AlignmentError(format!("{} predictions, {} labels", pred.probs.len(), labels.len())));
    }
    let (ys, yd) = mask_targets(labels);
    let n = labels.len() as f64;
    let ls: f64 = pred.probs.iter().zip(&ys).map(|(p, &y)| bce(y, p[0])).sum::<f64>() / n;
    let ld: f64 = pred.probs.iter().zip(&yd).map(|(p, &y)| bce(y, p[1])).sum::<f64>() / n;
    Ok(alpha * ls + (1.0 - alpha) * ld)
}

/// Differentiable form of [`avrpm_loss`] on a `blocks x 2` probability node.
pub fn mask_loss_on_tape(tape: &mut Tape, probs: Var, labels: &[DensityClass], alpha: f64) -> Result<Var> {
    let (ys, yd) = mask_targets(labels);
    let ps = tape.slice_cols(probs, 0, 1)?;
    let pd = tape.slice_cols(probs, 1, 1)?;
    let ls = tape.bce(ps, ys)?;
    let ld = tape.bce(pd, yd)?;
    let a = tape.scale(ls, alpha);
    let b = tape.scale(ld, 1.0 - alpha);
    tape.add(a, b)
}

/// Predicted classes for every block of `part`.
pub fn classify(pc: &PointCloud, part: Partition, store: &ParamStore) -> Result<Partition> {
    if part.is_empty() {
        return Ok(part);
    }
    let pred = mask_forward(store, &block_summaries(pc, &part))?;
    part.with_classes(&pred.classes())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AvrpmTrainConfig {
    pub block_edge: i32,
    pub quantile: f64,
    pub alpha: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for AvrpmTrainConfig {
    fn default() -> Self {
        Self { block_edge: 16, quantile: 0.5, alpha: DEFAULT_ALPHA, lr: 1e-2, epochs: 60, batch_size: 32, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AvrpmTrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub accuracy: f64,
    pub epoch_losses: Vec<f64>,
}

/// Trains on blocks of `dataset`, labeled per cloud by [`label_density`].
pub fn train_avrpm(dataset: &[PointCloud], cfg: &AvrpmTrainConfig) -> Result<(ParamStore, AvrpmTrainReport)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut summaries = Vec::new();
    let mut labels = Vec::new();
    for pc in dataset {
        let part = label_density(partition_blocks(pc, cfg.block_edge)?, cfg.quantile)?;
        summaries.extend(block_summaries(pc, &part));
        labels.extend(part.classes().ok_or(Error::UnsetClasses)?);
    }
    train_on_blocks(&summaries, &labels, cfg)
}

/// Trains on precomputed block summaries and labels.
pub fn train_on_blocks(
    summaries: &[[f64; CELLS]],
    labels: &[DensityClass],
    cfg: &AvrpmTrainConfig,
) -> Result<(ParamStore, AvrpmTrainReport)> {
    if summaries.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if summaries.len() != labels.len() {
        return Err(Error::AlignmentError(format!("{} blocks, {} labels", summaries.len(), labels.len())));
    }
    let mut store = init_mask_params(cfg.seed);
    let mut opt = Adam::new(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let initial_loss = avrpm_loss(&mask_forward(&store, summaries)?, labels, cfg.alpha)?;
    let mut order: Vec<usize> = (0..summaries.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let s: Vec<_> = chunk.iter().map(|&i| summaries[i]).collect();
            let l: Vec<_> = chunk.iter().map(|&i| labels[i]).collect();
            let mut tape = Tape::new(true, 0);
            let p = mask_forward_on_tape(&mut tape, &store, &s, true)?;
            let loss = mask_loss_on_tape(&mut tape, p, &l, cfg.alpha)?;
            total += tape.scalar_value(loss) * chunk.len() as f64;
            tape.backward(loss, &mut store)?;
            opt.step(&mut store);
        }
        epoch_losses.push(total / summaries.len() as f64);
    }
    let pred = mask_forward(&store, summaries)?;
    let final_loss = avrpm_loss(&pred, labels, cfg.alpha)?;
    let accuracy = pred.accuracy(labels);
    Ok((store, AvrpmTrainReport { initial_loss, final_loss, accuracy, epoch_losses }))
}

/// A block summary filled with `count` points spread over its cells, used by
/// tests and the self-check to build separable fixtures.
pub fn uniform_summary(count: usize, block_edge: i32) -> [f64; CELLS] {
    let cell = (block_edge / SUMMARY_CELLS as i32).max(1);
    let norm = f64::from(cell * cell);
    let mut grid = [0.0; CELLS];
    for k in 0..count {
        grid[(k * 37) % CELLS] += 1.0;
    }
    grid.map(|v| v / norm)
}
