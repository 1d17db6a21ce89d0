//! Encoder, generator and discriminator, plus the coordinate pyramid and
//! kernel maps they run on.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{ParamStore, Tape, Var};
use crate::sparse::{build_kernel_map, ConvSpec, Coord, CoordSet, KernelMap};

pub const ENCODER_KERNELS: [usize; 3] = [9, 5, 5];
pub const GENERATOR_KERNELS: [usize; 3] = [5, 5, 9];
pub const OCCUPANCY_KERNEL: usize = 3;
pub const DISC_DROPOUT: f64 = 0.3;
/// Latent stride: three stride-2 stages.
pub const LATENT_STRIDE: i32 = 8;
/// Largest full-box lattice (in unit voxels) accepted by the dense-conv path.
pub const MAX_DENSE_BOX: usize = 32 * 32 * 32;
/// Subtracted from YUV / 255 features before the encoder.
pub const INPUT_OFFSET: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub hidden: usize,
    pub latent: usize,
}

impl ModelConfig {
    pub const FULL: Self = Self { hidden: 128, latent: 8 };
    pub const DESK: Self = Self { hidden: 16, latent: 8 };

    /// Reads widths back from parameter shapes.
    pub fn from_store(store: &ParamStore) -> Result<Self> {
        let w3 = store.get("encoder.conv3.weight")?;
        match w3.shape[..] {
            [_, hidden, latent] if hidden > 0 && latent > 0 => Ok(Self { hidden, latent }),
            _ => Err(Error::ShapeMismatch(format!("encoder.conv3.weight has shape {:?}", w3.shape))),
        }
    }
}

/// He initialisation with a surface fan-in: on a 2-manifold only about `k^2`
/// of the `k^3` kernel offsets find an occupied neighbour.
fn conv_params(s: &mut ParamStore, id: &str, k: usize, ci: usize, co: usize, rng: &mut ChaCha8Rng) {
    let vol = k * k * k;
    s.insert_kaiming(&format!("{id}.weight"), vec![vol, ci, co], k * k * ci, rng).expect("valid shape");
    s.insert_zeros(&format!("{id}.bias"), vec![co]).expect("valid shape");
}

/// Encoder, generator and entropy-model parameters (the "G" store).
pub fn init_generator_params(cfg: ModelConfig, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let h = cfg.hidden;
    let enc_ch = [3, h, h, cfg.latent];
    for l in 0..3 {
        conv_params(&mut s, &format!("encoder.conv{}", l + 1), ENCODER_KERNELS[l], enc_ch[l], enc_ch[l + 1], &mut rng);
    }
    let gen_ch = [cfg.latent, h, h, 3];
    for l in 0..3 {
        let id = format!("generator.up{}", l + 1);
        conv_params(&mut s, &id, GENERATOR_KERNELS[l], gen_ch[l], gen_ch[l + 1], &mut rng);
        conv_params(&mut s, &format!("{id}.occ"), OCCUPANCY_KERNEL, gen_ch[l], 1, &mut rng);
    }
    // Start the reconstruction at mid-gray, inside the clamp range.
    s.get_mut("generator.up3.bias").expect("inserted").value = vec![0.5; 3];
    s.insert_zeros("entropy.log_scale", vec![cfg.latent]).expect("valid shape");
    s
}

pub fn init_discriminator_params(cfg: ModelConfig, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let h = cfg.hidden;
    let ch = [3, h, h, h];
    for l in 0..3 {
        conv_params(&mut s, &format!("disc.conv{}", l + 1), ENCODER_KERNELS[l], ch[l], ch[l + 1], &mut rng);
    }
    s.insert_kaiming("disc.dense.weight", vec![h, 1], h, &mut rng).expect("valid shape");
    s.insert_zeros("disc.dense.bias", vec![1]).expect("valid shape");
    s
}

/// Coordinate sets at strides 1, 2, 4, 8 and the kernel maps between them.
///
/// `occupied` holds the true geometry. `lattice` is where the codec networks
/// run: the occupied sets, or full bounding boxes in dense-conv mode.
/// `candidates[i]` are the children of the coarser lattice, the sites scored
/// by generator stage `i`'s occupancy head.
#[derive(Clone, Debug)]
pub struct Pyramid {
    pub dense: bool,
    pub occupied: [Arc<CoordSet>; 4],
    pub lattice: [Arc<CoordSet>; 4],
    pub candidates: [Arc<CoordSet>; 3],
    pub enc_maps: [Arc<KernelMap>; 3],
    pub gen_maps: [Arc<KernelMap>; 3],
    pub occ_maps: [Arc<KernelMap>; 3],
    pub disc_maps: [Arc<KernelMap>; 3],
    /// Row of each occupied unit voxel within `lattice[0]`.
    pub occupied_rows: Vec<usize>,
}

fn down_maps(sets: &[Arc<CoordSet>; 4]) -> Result<[Arc<KernelMap>; 3]> {
    let m = |l: usize| -> Result<Arc<KernelMap>> {
        Ok(Arc::new(build_kernel_map(&sets[l], &sets[l + 1], &ConvSpec::new(ENCODER_KERNELS[l], 2, 1, 1))?))
    };
    Ok([m(0)?, m(1)?, m(2)?])
}

fn dense_box(voxels: &CoordSet) -> Result<[Arc<CoordSet>; 4]> {
    let s = LATENT_STRIDE;
    let mut lo = [i32::MAX; 3];
    let mut hi = [i32::MIN; 3];
    for c in voxels.coords() {
        for a in 0..3 {
            lo[a] = lo[a].min(c[a].div_euclid(s) * s);
            hi[a] = hi[a].max(c[a].div_euclid(s) * s);
        }
    }
    let volume: usize = (0..3).map(|a| (hi[a] - lo[a] + s) as usize).product();
    if volume > MAX_DENSE_BOX {
        return Err(Error::InvalidConfig(format!(
            "dense-conv lattice of {volume} voxels exceeds the limit of {MAX_DENSE_BOX}"
        )));
    }
    let level = |stride: i32| -> Result<Arc<CoordSet>> {
        let top: Coord = hi.map(|h| h + s - stride);
        Ok(Arc::new(CoordSet::full_box(lo, top, stride)?))
    };
    Ok([level(1)?, level(2)?, level(4)?, level(8)?])
}

impl Pyramid {
    /// Builds every set and map for unit-stride `voxels`.
    pub fn build(voxels: &CoordSet, dense: bool) -> Result<Self> {
        if voxels.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if voxels.stride() != 1 {
            return Err(Error::StrideMismatch(format!("pyramid base has stride {}", voxels.stride())));
        }
        let o1 = Arc::new(voxels.clone());
        let o2 = Arc::new(o1.downsample(2));
        let o4 = Arc::new(o2.downsample(2));
        let o8 = Arc::new(o4.downsample(2));
        let occupied = [o1, o2, o4, o8];
        let lattice = if dense { dense_box(voxels)? } else { occupied.clone() };

        let enc_maps = down_maps(&lattice)?;
        let disc_maps = if dense { down_maps(&occupied)? } else { enc_maps.clone() };
        let mut candidates = Vec::with_capacity(3);
        let mut gen_maps = Vec::with_capacity(3);
        let mut occ_maps = Vec::with_capacity(3);
        for i in 0..3 {
            let (coarse, fine) = (&lattice[3 - i], &lattice[2 - i]);
            let cand = Arc::new(coarse.children()?);
            let spec = ConvSpec::transposed(GENERATOR_KERNELS[i], 2, 1, 1);
            gen_maps.push(Arc::new(build_kernel_map(coarse, fine, &spec)?));
            let ospec = ConvSpec::transposed(OCCUPANCY_KERNEL, 2, 1, 1);
            occ_maps.push(Arc::new(build_kernel_map(coarse, &cand, &ospec)?));
            candidates.push(cand);
        }
        let occupied_rows = occupied[0]
            .coords()
            .iter()
            .map(|c| lattice[0].row(c).ok_or(Error::MissingVoxel(*c)))
            .collect::<Result<_>>()?;
        Ok(Self {
            dense,
            occupied,
            lattice,
            candidates: candidates.try_into().expect("three stages"),
            enc_maps,
            gen_maps: gen_maps.try_into().expect("three stages"),
            occ_maps: occ_maps.try_into().expect("three stages"),
            disc_maps,
            occupied_rows,
        })
    }

    pub fn latent_coords(&self) -> &Arc<CoordSet> {
        &self.lattice[3]
    }

    /// Occupancy labels of `candidates[i]`: true where the site is occupied.
    pub fn occupancy_labels(&self, i: usize) -> Vec<bool> {
        let truth = &self.occupied[2 - i];
        self.candidates[i].coords().iter().map(|c| truth.contains(c)).collect()
    }

    /// Lays unit-voxel features (rows of `occupied[0]`) onto `lattice[0]`,
    /// centred by `INPUT_OFFSET`; empty sites in dense mode stay zero.
    pub fn scatter_input(&self, feats: &[f64], channels: usize) -> Vec<f64> {
        if !self.dense {
            return feats.iter().map(|v| v - INPUT_OFFSET).collect();
        }
        let mut out = vec![0.0; self.lattice[0].len() * channels];
        for (k, &r) in self.occupied_rows.iter().enumerate() {
            for c in 0..channels {
                out[r * channels + c] = feats[k * channels + c] - INPUT_OFFSET;
            }
        }
        out
    }
}

fn param(tape: &mut Tape, store: &ParamStore, id: &str, trainable: bool) -> Result<Var> {
    if trainable {
        tape.param(store, id)
    } else {
        tape.frozen_param(store, id)
    }
}

fn conv_layer(
    tape: &mut Tape,
    store: &ParamStore,
    id: &str,
    x: Var,
    map: &Arc<KernelMap>,
    trainable: bool,
) -> Result<Var> {
    let w_id = format!("{id}.weight");
    let shape = store.get(&w_id)?.shape.clone();
    let [vol, ci, co] = shape[..] else {
        return Err(Error::ShapeMismatch(format!("`{w_id}` has shape {shape:?}")));
    };
    if vol != map.volume() {
        return Err(Error::ShapeMismatch(format!("`{w_id}` has {vol} offsets, map has {}", map.volume())));
    }
    let w = param(tape, store, &w_id, trainable)?;
    let b = param(tape, store, &format!("{id}.bias"), trainable)?;
    tape.conv(x, w, Some(b), map.clone(), ci, co)
}

/// `x` is `lattice[0].len() x 3`; returns the unquantized latent,
/// `lattice[3].len() x latent`.
pub fn encoder_on_tape(tape: &mut Tape, store: &ParamStore, x: Var, pyr: &Pyramid, trainable: bool) -> Result<Var> {
    let mut h = x;
    for l in 0..3 {
        h = conv_layer(tape, store, &format!("encoder.conv{}", l + 1), h, &pyr.enc_maps[l], trainable)?;
        if l < 2 {
            h = tape.relu(h);
        }
    }
    Ok(h)
}

pub struct GeneratorOutput {
    /// Reconstructed YUV / 255 on the occupied unit voxels, clamped to [0, 1].
    pub recon: Var,
    /// Occupancy logits on `candidates[i]` for each stage.
    pub occupancy: [Var; 3],
}

pub fn generator_on_tape(
    tape: &mut Tape,
    store: &ParamStore,
    latent: Var,
    pyr: &Pyramid,
    trainable: bool,
) -> Result<GeneratorOutput> {
    let mut h = latent;
    let mut occ = Vec::with_capacity(3);
    for i in 0..3 {
        let id = format!("generator.up{}", i + 1);
        occ.push(conv_layer(tape, store, &format!("{id}.occ"), h, &pyr.occ_maps[i], trainable)?);
        h = conv_layer(tape, store, &id, h, &pyr.gen_maps[i], trainable)?;
        if i < 2 {
            h = tape.relu(h);
        }
    }
    if pyr.dense {
        h = tape.gather_rows(h, pyr.occupied_rows.clone())?;
    }
    let recon = tape.clamp01(h);
    Ok(GeneratorOutput { recon, occupancy: occ.try_into().map_err(|_| Error::ShapeMismatch("stages".into()))? })
}

/// `x` holds YUV / 255 on the occupied unit voxels; returns a 1x1 probability.
pub fn discriminator_on_tape(
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    pyr: &Pyramid,
    trainable: bool,
) -> Result<Var> {
    let mut h = x;
    for l in 0..3 {
        h = conv_layer(tape, store, &format!("disc.conv{}", l + 1), h, &pyr.disc_maps[l], trainable)?;
        h = tape.relu(h);
    }
    h = tape.dropout(h, DISC_DROPOUT);
    let rows = tape.shape(h).0;
    let pooled = tape.segment_mean(h, vec![0, rows])?;
    let w = param(tape, store, "disc.dense.weight", trainable)?;
    let b = param(tape, store, "disc.dense.bias", trainable)?;
    let logit = tape.linear(pooled, w, Some(b))?;
    Ok(tape.sigmoid(logit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_gradients;
    use rand::Rng;

    fn voxels(seed: u64, n: usize, span: i32) -> CoordSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CoordSet::new((0..n).map(|_| [0; 3].map(|_: i32| rng.gen_range(0..span))), 1).unwrap()
    }

    const TINY: ModelConfig = ModelConfig { hidden: 3, latent: 2 };

    #[test]
    fn latent_support_is_floor_projection() {
        let v = voxels(1, 200, 40);
        let pyr = Pyramid::build(&v, false).unwrap();
        let mut expect: Vec<Coord> = v.coords().iter().map(|c| c.map(|x| x.div_euclid(8) * 8)).collect();
        expect.sort_unstable();
        expect.dedup();
        assert_eq!(pyr.latent_coords().coords(), &expect[..]);
        assert_eq!(pyr.latent_coords().stride(), 8);
    }

    #[test]
    fn single_point_single_latent() {
        let v = CoordSet::new([[13, 22, 7]], 1).unwrap();
        let pyr = Pyramid::build(&v, false).unwrap();
        assert_eq!(pyr.latent_coords().coords(), &[[8, 16, 0]]);
    }

    #[test]
    fn zero_weights_zero_latent() {
        let v = voxels(2, 50, 20);
        let pyr = Pyramid::build(&v, false).unwrap();
        let mut s = init_generator_params(TINY, 0);
        s.zero_values();
        let mut t = Tape::new(false, 0);
        let x = t.leaf(v.len(), 3, vec![0.7; v.len() * 3]).unwrap();
        let z = encoder_on_tape(&mut t, &s, x, &pyr, false).unwrap();
        assert!(t.value(z).iter().all(|&v| v == 0.0));
        let g = generator_on_tape(&mut t, &s, z, &pyr, false).unwrap();
        assert_eq!(t.shape(g.recon), (v.len(), 3));
        assert!(t.value(g.recon).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn recon_support_is_geometry_in_both_modes() {
        let v = voxels(3, 80, 20);
        let s = init_generator_params(TINY, 1);
        for dense in [false, true] {
            let pyr = Pyramid::build(&v, dense).unwrap();
            let mut t = Tape::new(false, 0);
            let x = t.leaf(pyr.lattice[0].len(), 3, pyr.scatter_input(&vec![0.3; v.len() * 3], 3)).unwrap();
            let z = encoder_on_tape(&mut t, &s, x, &pyr, false).unwrap();
            let g = generator_on_tape(&mut t, &s, z, &pyr, false).unwrap();
            assert_eq!(t.shape(g.recon).0, v.len());
            for i in 0..3 {
                assert_eq!(t.shape(g.occupancy[i]).0, pyr.candidates[i].len());
                assert_eq!(pyr.occupancy_labels(i).iter().filter(|&&b| b).count(), pyr.occupied[2 - i].len());
            }
        }
    }

    #[test]
    fn dense_box_is_capped() {
        let v = CoordSet::new([[0, 0, 0], [100, 100, 100]], 1).unwrap();
        assert!(matches!(Pyramid::build(&v, true), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn discriminator_zero_params_half() {
        let v = voxels(4, 60, 16);
        let pyr = Pyramid::build(&v, false).unwrap();
        let mut d = init_discriminator_params(TINY, 0);
        d.zero_values();
        let mut t = Tape::new(false, 0);
        let x = t.leaf(v.len(), 3, vec![0.4; v.len() * 3]).unwrap();
        let p = discriminator_on_tape(&mut t, &d, x, &pyr, false).unwrap();
        assert_eq!(t.scalar_value(p), 0.5);
    }

    #[test]
    fn discriminator_gradients() {
        let v = voxels(5, 40, 12);
        let pyr = Pyramid::build(&v, false).unwrap();
        let mut d = init_discriminator_params(TINY, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..v.len() * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
        let r = check_gradients(&mut d, 120, 3, true, 11, |s, t| {
            let xv = t.leaf(v.len(), 3, x.clone())?;
            let p = discriminator_on_tape(t, s, xv, &pyr, true)?;
            t.bce(p, vec![1.0])
        })
        .unwrap();
        assert!(r.passed(), "{:?}", &r.failures[..r.failures.len().min(4)]);
    }

    #[test]
    fn config_from_store() {
        let s = init_generator_params(ModelConfig { hidden: 5, latent: 3 }, 0);
        assert_eq!(ModelConfig::from_store(&s).unwrap(), ModelConfig { hidden: 5, latent: 3 });
    }
}
