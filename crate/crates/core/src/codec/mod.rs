//! Compression core: analysis network, quantizer, entropy coding, bitstream
//! and synthesis network.

mod bitstream;
mod entropy;
mod loss;
mod nets;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use bitstream::{Bitstream, FLAG_DENSE_CONV, FLAG_NO_AVRPM, STREAM_VERSION};
pub use entropy::{
    range_decode, range_encode, rate_estimate, sample_laplace_symbols, EntropyModel, FreqTable, LaplaceTable,
    RangeDecoder, RangeEncoder, ESCAPE_BITS, ESCAPE_OFFSET, TOTAL_BITS,
};
pub use loss::{
    adversarial_loss, focal_loss, focal_loss_on_tape, total_loss_on_tape, FocalLossConfig, LossBreakdown, LossWeights,
    ATTR_MSE_SCALE,
};
pub use nets::{
    discriminator_on_tape, encoder_on_tape, generator_on_tape, init_discriminator_params, init_generator_params,
    GeneratorOutput, ModelConfig, Pyramid, DISC_DROPOUT, ENCODER_KERNELS, GENERATOR_KERNELS, LATENT_STRIDE,
    MAX_DENSE_BOX, OCCUPANCY_KERNEL,
};

use crate::avrpm::{carrier_of, classify, partition_blocks, voxel_coords, voxelize_adaptive, DevoxMap, Partition};
use crate::cloud::{geometry_digest, PointCloud};
use crate::error::{Error, Result};
use crate::nn::{laplace_scale, ParamStore, Tape, Var};
use crate::sparse::{Coord, CoordSet, SparseTensor};

/// Quantized latents must lie in `[-LATENT_LIMIT, LATENT_LIMIT)`.
pub const LATENT_LIMIT: f64 = 32768.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuantMode {
    /// Round half to even.
    Infer,
    /// Rounded forward, identity backward.
    StraightThrough,
    /// Additive uniform noise in `[-1/2, 1/2)`.
    Noise,
    /// No quantization; the relaxed objective is smooth in the latents.
    Identity,
}

/// Rounds half to even; errors if any result leaves the coder's range.
pub fn quantize(values: &[f64]) -> Result<Vec<i32>> {
    values
        .iter()
        .map(|&v| {
            let q = v.round_ties_even();
            if !q.is_finite() || !(-LATENT_LIMIT..LATENT_LIMIT).contains(&q) {
                Err(Error::Overflow(v))
            } else {
                Ok(q as i32)
            }
        })
        .collect()
}

pub fn quantize_on_tape(tape: &mut Tape, x: Var, mode: QuantMode, seed: u64) -> Result<Var> {
    if let Some(&bad) = tape.value(x).iter().find(|v| !(-LATENT_LIMIT..LATENT_LIMIT).contains(&v.round_ties_even())) {
        return Err(Error::Overflow(bad));
    }
    match mode {
        QuantMode::Identity => Ok(x),
        QuantMode::Infer | QuantMode::StraightThrough => Ok(tape.round_ste(x)),
        QuantMode::Noise => {
            let (r, c) = tape.shape(x);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = (0..r * c).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let n = tape.leaf(r, c, noise)?;
            tape.add(x, n)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CodecOptions {
    pub block_edge: i32,
    pub lambda_index: u8,
    pub no_avrpm: bool,
    pub dense_conv: bool,
}

impl Default for CodecOptions {
    fn default() -> Self {
        Self { block_edge: crate::avrpm::DEFAULT_BLOCK_EDGE, lambda_index: 0, no_avrpm: false, dense_conv: false }
    }
}

/// A cloud with its partition, voxelization and network lattices.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub cloud: PointCloud,
    pub partition: Partition,
    pub voxels: SparseTensor,
    pub devox: DevoxMap,
    pub pyramid: Pyramid,
}

impl Prepared {
    pub fn new(pc: &PointCloud, avrpm: Option<&ParamStore>, opts: &CodecOptions) -> Result<Self> {
        if pc.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let part = partition_blocks(pc, opts.block_edge)?;
        let partition = match (opts.no_avrpm, avrpm) {
            (false, Some(params)) => classify(pc, part, params)?,
            _ => part.all_dense(),
        };
        let (voxels, devox) = voxelize_adaptive(pc, &partition)?;
        let pyramid = Pyramid::build(voxels.coord_set(), opts.dense_conv)?;
        Ok(Self { cloud: pc.clone(), partition, voxels, devox, pyramid })
    }

    /// Network input: voxel features laid onto the encoder lattice.
    pub fn input(&self) -> Vec<f64> {
        self.pyramid.scatter_input(self.voxels.feats(), 3)
    }
}

/// Per-stage wall time.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTimings {
    pub partition: Duration,
    pub network: Duration,
    pub entropy: Duration,
    pub total: Duration,
}

fn entropy_model(g: &ParamStore) -> Result<(EntropyModel, Vec<f32>)> {
    let scales: Vec<f32> = g.value("entropy.log_scale")?.iter().map(|&s| laplace_scale(s) as f32).collect();
    Ok((EntropyModel::from_f32(&scales), scales))
}

/// Compresses the attributes of `pc`.
pub fn encode(
    pc: &PointCloud,
    g: &ParamStore,
    avrpm: Option<&ParamStore>,
    opts: &CodecOptions,
) -> Result<(Bitstream, StageTimings)> {
    let start = Instant::now();
    let block_edge = u8::try_from(opts.block_edge)
        .map_err(|_| Error::InvalidConfig(format!("block edge {} does not fit the stream", opts.block_edge)))?;
    let prep = Prepared::new(pc, avrpm, opts)?;
    let t_partition = start.elapsed();

    let mut tape = Tape::new(false, 0);
    let x = tape.leaf(prep.pyramid.lattice[0].len(), 3, prep.input())?;
    let z = encoder_on_tape(&mut tape, g, x, &prep.pyramid, false)?;
    let symbols = quantize(tape.value(z))?;
    let t_network = start.elapsed() - t_partition;

    let (model, scales) = entropy_model(g)?;
    if model.channels() != tape.shape(z).1 {
        return Err(Error::ShapeMismatch("entropy model width differs from the latent width".into()));
    }
    let body = range_encode(&symbols, &model)?;
    let mut flags = 0;
    if opts.no_avrpm || avrpm.is_none() {
        flags |= FLAG_NO_AVRPM;
    }
    if opts.dense_conv {
        flags |= FLAG_DENSE_CONV;
    }
    let bs = Bitstream {
        version: STREAM_VERSION,
        lambda_index: opts.lambda_index,
        flags,
        digest: geometry_digest(pc.positions()),
        bit_depth: pc.bit_depth(),
        block_edge,
        classes: if flags & FLAG_NO_AVRPM != 0 {
            Vec::new()
        } else {
            prep.partition.classes().ok_or(Error::UnsetClasses)?
        },
        latent_count: prep.pyramid.latent_coords().len() as u32,
        scales,
        body,
    };
    let total = start.elapsed();
    Ok((
        bs,
        StageTimings { partition: t_partition, network: t_network, entropy: total - t_partition - t_network, total },
    ))
}

/// Reconstructs attributes for the lossless geometry `positions`.
pub fn decode(bs: &Bitstream, positions: &[Coord], g: &ParamStore) -> Result<(PointCloud, StageTimings)> {
    let start = Instant::now();
    if bs.version != STREAM_VERSION {
        return Err(Error::VersionMismatch(format!("stream version {}", bs.version)));
    }
    let geometry = PointCloud::from_geometry(positions.to_vec(), bs.bit_depth)?;
    let found = geometry_digest(geometry.positions());
    if found != bs.digest {
        return Err(Error::DigestMismatch { expected: bs.digest, found });
    }
    let part = partition_blocks(&geometry, i32::from(bs.block_edge))?;
    let part = if bs.flags & FLAG_NO_AVRPM != 0 {
        part.all_dense()
    } else if bs.classes.len() != part.blocks.len() {
        return Err(Error::GeometryMismatch(format!(
            "stream has {} block classes, geometry gives {} blocks",
            bs.classes.len(),
            part.blocks.len()
        )));
    } else {
        part.with_classes(&bs.classes)?
    };
    let voxels = CoordSet::new(voxel_coords(geometry.positions(), &part)?, 1)?;
    let pyramid = Pyramid::build(&voxels, bs.flags & FLAG_DENSE_CONV != 0)?;
    let t_partition = start.elapsed();

    let (model, _) = (EntropyModel::from_f32(&bs.scales), ());
    let cfg = ModelConfig::from_store(g)?;
    if cfg.latent != bs.latent_channels() {
        return Err(Error::ShapeMismatch(format!(
            "stream has {} latent channels, model has {}",
            bs.latent_channels(),
            cfg.latent
        )));
    }
    let n_lat = pyramid.latent_coords().len();
    if n_lat != bs.latent_count as usize {
        return Err(Error::CorruptStream(format!("{} latents in stream, geometry gives {n_lat}", bs.latent_count)));
    }
    let symbols = range_decode(&bs.body, n_lat * cfg.latent, &model)?;
    let t_entropy = start.elapsed() - t_partition;

    let mut tape = Tape::new(false, 0);
    let z = tape.leaf(n_lat, cfg.latent, symbols.iter().map(|&v| f64::from(v)).collect())?;
    let out = generator_on_tape(&mut tape, g, z, &pyramid, false)?;
    let recon = SparseTensor::new(pyramid.occupied[0].clone(), tape.value(out.recon).to_vec(), 3)?;
    let carriers = devox_carriers(geometry.positions(), &part)?;
    let devox = DevoxMap { positions: geometry.positions().to_vec(), carriers, bit_depth: bs.bit_depth };
    let pc = crate::avrpm::devoxelize(&recon, &devox)?;
    let total = start.elapsed();
    Ok((
        pc,
        StageTimings { partition: t_partition, network: total - t_partition - t_entropy, entropy: t_entropy, total },
    ))
}

fn devox_carriers(positions: &[Coord], part: &Partition) -> Result<Vec<Coord>> {
    let mut carriers = vec![[0; 3]; positions.len()];
    for b in &part.blocks {
        let class = b.class.ok_or(Error::UnsetClasses)?;
        for &i in &b.point_indices {
            carriers[i] = carrier_of(positions[i], class);
        }
    }
    Ok(carriers)
}

/// Bits per input point of an encoded stream.
pub fn stream_bpip(bytes: usize, points: usize) -> f64 {
    8.0 * bytes as f64 / points as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{synth_generate, ShapeKind, SynthSpec, TextureKind};

    fn cloud(n: usize) -> PointCloud {
        synth_generate(&SynthSpec { shape: ShapeKind::Sphere, point_count: n, texture: TextureKind::Gradient, seed: 3 })
            .unwrap()
    }

    const TINY: ModelConfig = ModelConfig { hidden: 4, latent: 3 };

    #[test]
    fn quantize_rounds_half_even() {
        assert_eq!(quantize(&[2.4, 2.5, 3.5, -2.5, -0.5]).unwrap(), vec![2, 2, 4, -2, 0]);
        assert!(matches!(quantize(&[32767.6]), Err(Error::Overflow(_))));
        assert_eq!(quantize(&[-32768.0]).unwrap(), vec![-32768]);
    }

    #[test]
    fn straight_through_gradient_is_ones() {
        let mut s = ParamStore::new();
        s.insert("x", vec![5], vec![0.2, 1.7, -3.4, 2.5, 9.9]).unwrap();
        let mut t = Tape::new(true, 0);
        let x = t.param(&s, "x").unwrap();
        let q = quantize_on_tape(&mut t, x, QuantMode::StraightThrough, 0).unwrap();
        let l = t.sum(q);
        t.backward(l, &mut s).unwrap();
        assert_eq!(s.get("x").unwrap().grad, vec![1.0; 5]);
    }

    #[test]
    fn round_trip_keeps_geometry_and_is_deterministic() {
        let pc = cloud(600);
        let g = init_generator_params(TINY, 1);
        for opts in [CodecOptions::default(), CodecOptions { dense_conv: false, no_avrpm: true, ..Default::default() }]
        {
            let (a, _) = encode(&pc, &g, None, &opts).unwrap();
            let (b, _) = encode(&pc, &g, None, &opts).unwrap();
            let bytes = a.to_bytes().unwrap();
            assert_eq!(bytes, b.to_bytes().unwrap());
            let parsed = Bitstream::from_bytes(&bytes).unwrap();
            let (r1, _) = decode(&parsed, pc.positions(), &g).unwrap();
            let (r2, _) = decode(&parsed, pc.positions(), &g).unwrap();
            assert_eq!(r1.positions(), pc.positions());
            assert_eq!(r1, r2);
        }
    }

    #[test]
    fn wrong_geometry_is_rejected() {
        let pc = cloud(300);
        let g = init_generator_params(TINY, 1);
        let (bs, _) = encode(&pc, &g, None, &CodecOptions::default()).unwrap();
        let mut pos = pc.positions().to_vec();
        pos.pop();
        assert!(matches!(decode(&bs, &pos, &g), Err(Error::DigestMismatch { .. })));
    }

    #[test]
    fn dense_conv_round_trip() {
        let pc = synth_generate(&SynthSpec {
            shape: ShapeKind::Plane,
            point_count: 150,
            texture: TextureKind::Checker,
            seed: 2,
        })
        .unwrap();
        let g = init_generator_params(TINY, 2);
        let opts = CodecOptions { dense_conv: true, ..Default::default() };
        let (bs, _) = encode(&pc, &g, None, &opts).unwrap();
        assert_ne!(bs.flags & FLAG_DENSE_CONV, 0);
        let (r, _) = decode(&bs, pc.positions(), &g).unwrap();
        assert_eq!(r.positions(), pc.positions());
    }
}
