//! Alternating adversarial training, the rate sweep and evaluation.

mod config;

pub use config::TrainConfig;

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloud::PointCloud;
use crate::codec::{
    decode, discriminator_on_tape, encode, encoder_on_tape, focal_loss_on_tape, generator_on_tape,
    init_discriminator_params, init_generator_params, quantize_on_tape, total_loss_on_tape, Bitstream, CodecOptions,
    LossBreakdown, Prepared, Pyramid, ATTR_MSE_SCALE,
};
use crate::error::{Error, Result};
use crate::metrics::{bpip, psnr_all, RDCurve, RDPoint};
use crate::nn::{load_checkpoint, save_checkpoint, Adam, ParamStore, Tape, Var};

const DISC_SEED_SALT: u64 = 0xd15c;
const LAMBDA_ID: &str = "sweep.lambda";
const AUGMENT_MIN_GAIN: f64 = 0.5;

/// Mixes a seed with two counters (splitmix64 finalizer).
fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator (encoder, generator, entropy model) and discriminator weights
/// with their optimizers.
#[derive(Clone, Debug)]
pub struct GanState {
    pub g: ParamStore,
    pub d: ParamStore,
    g_opt: Adam,
    d_opt: Adam,
    step: u64,
}

impl GanState {
    pub fn new(cfg: &TrainConfig) -> Self {
        let g = init_generator_params(cfg.model, cfg.seed);
        let d = init_discriminator_params(cfg.model, cfg.seed ^ DISC_SEED_SALT);
        Self::from_parts(g, d, cfg)
    }

    /// Continues from existing weights with fresh optimizer state.
    pub fn from_parts(g: ParamStore, d: ParamStore, cfg: &TrainConfig) -> Self {
        Self { g, d, g_opt: Adam::new(cfg.lr), d_opt: Adam::new(cfg.disc_lr), step: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepReport {
    pub loss: LossBreakdown,
    /// Fraction of real and fake samples the discriminator got right; zero
    /// without a discriminator.
    pub d_acc: f64,
}

/// One sample for a discriminator update: a lattice with real and fake
/// unit-voxel features (YUV / 255).
pub struct DiscSample<'a> {
    pub pyramid: &'a Pyramid,
    pub real: &'a [f64],
    pub fake: &'a [f64],
}

/// One discriminator update on `samples`, generator untouched. Returns the
/// mean discriminator loss and its accuracy before the update.
pub fn discriminator_step(
    d: &mut ParamStore,
    opt: &mut Adam,
    samples: &[DiscSample<'_>],
    seed: u64,
) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let inv = 1.0 / samples.len() as f64;
    let (mut loss, mut correct) = (0.0, 0usize);
    for (k, s) in samples.iter().enumerate() {
        let mut tape = Tape::new(true, mix(seed, k as u64, 1));
        let rows = s.real.len() / 3;
        let real = tape.leaf(rows, 3, s.real.to_vec())?;
        let fake = tape.leaf(rows, 3, s.fake.to_vec())?;
        let d_real = discriminator_on_tape(&mut tape, d, real, s.pyramid, true)?;
        let d_fake = discriminator_on_tape(&mut tape, d, fake, s.pyramid, true)?;
        correct += usize::from(tape.scalar_value(d_real) > 0.5) + usize::from(tape.scalar_value(d_fake) < 0.5);
        let lr = tape.bce(d_real, vec![1.0])?;
        let lf = tape.bce(d_fake, vec![0.0])?;
        let l = tape.add(lr, lf)?;
        loss += tape.scalar_value(l) * inv;
        let l = tape.scale(l, inv);
        tape.backward(l, d)?;
    }
    opt.step(d);
    Ok((loss, correct as f64 / (2 * samples.len()) as f64))
}

/// Discriminator accuracy on `samples` in inference mode.
pub fn discriminator_accuracy(d: &ParamStore, samples: &[DiscSample<'_>]) -> Result<f64> {
    let mut correct = 0usize;
    for s in samples {
        let mut tape = Tape::new(false, 0);
        let rows = s.real.len() / 3;
        let real = tape.leaf(rows, 3, s.real.to_vec())?;
        let fake = tape.leaf(rows, 3, s.fake.to_vec())?;
        let d_real = discriminator_on_tape(&mut tape, d, real, s.pyramid, false)?;
        let d_fake = discriminator_on_tape(&mut tape, d, fake, s.pyramid, false)?;
        correct += usize::from(tape.scalar_value(d_real) > 0.5) + usize::from(tape.scalar_value(d_fake) < 0.5);
    }
    Ok(correct as f64 / (2 * samples.len().max(1)) as f64)
}

struct Forward {
    tape: Tape,
    recon: Var,
    l_dec: Var,
    attr_mse: Var,
    bits: Var,
}

/// Random per-channel affine color map `o + g * c` (or `o + g * (1 - c)`)
/// that keeps features in `[0, 1]`.
pub fn augment_colors(feats: &[f64], seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let maps: Vec<(f64, f64, bool)> = (0..3)
        .map(|_| {
            let g = rng.gen_range(AUGMENT_MIN_GAIN..=1.0);
            (g, rng.gen_range(0.0..=1.0 - g), rng.gen_bool(0.5))
        })
        .collect();
    feats
        .chunks_exact(3)
        .flat_map(|row| {
            (0..3).map(|c| {
                let (g, o, flip) = maps[c];
                let v = if flip { 1.0 - row[c] } else { row[c] };
                (o + g * v).clamp(0.0, 1.0)
            })
        })
        .collect()
}

fn generator_forward(p: &Prepared, target: &[f64], g: &ParamStore, cfg: &TrainConfig, seed: u64) -> Result<Forward> {
    let mut tape = Tape::new(true, seed);
    let x = tape.leaf(p.pyramid.lattice[0].len(), 3, p.pyramid.scatter_input(target, 3))?;
    let z = encoder_on_tape(&mut tape, g, x, &p.pyramid, true)?;
    let zq = quantize_on_tape(&mut tape, z, cfg.quant, mix(seed, 0, 2))?;
    let log_scale = if cfg.fixed_entropy {
        tape.frozen_param(g, "entropy.log_scale")?
    } else {
        tape.param(g, "entropy.log_scale")?
    };
    let bits = tape.laplace_bits(zq, log_scale)?;
    let out = generator_on_tape(&mut tape, g, zq, &p.pyramid, true)?;
    let labels: Vec<Vec<bool>> = (0..3).map(|i| p.pyramid.occupancy_labels(i)).collect();
    let l_dec = focal_loss_on_tape(&mut tape, &out.occupancy, &labels, &cfg.focal)?;
    let attr_mse = tape.mse(out.recon, target.to_vec(), ATTR_MSE_SCALE)?;
    Ok(Forward { tape, recon: out.recon, l_dec, attr_mse, bits })
}

/// One alternating update: the discriminator first (generator frozen), then
/// encoder, generator and entropy model (discriminator frozen). Gradients are
/// averaged over the batch.
pub fn train_step(batch: &[&Prepared], state: &mut GanState, cfg: &TrainConfig, lambda: f64) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let w = cfg.weights(lambda);
    let step_seed = mix(cfg.seed, state.step, 0);
    let targets: Vec<Vec<f64>> = batch
        .iter()
        .enumerate()
        .map(|(k, p)| {
            if cfg.augment {
                augment_colors(p.voxels.feats(), mix(step_seed, k as u64, 6))
            } else {
                p.voxels.feats().to_vec()
            }
        })
        .collect();
    let mut fwd = batch
        .iter()
        .zip(&targets)
        .enumerate()
        .map(|(k, (p, t))| generator_forward(p, t, &state.g, cfg, mix(step_seed, k as u64, 3)))
        .collect::<Result<Vec<_>>>()?;

    let (mut l_adv_disc, mut d_acc) = (0.0, 0.0);
    if cfg.discriminator {
        let fakes: Vec<Vec<f64>> = fwd.iter().map(|f| f.tape.value(f.recon).to_vec()).collect();
        let samples: Vec<DiscSample<'_>> = batch
            .iter()
            .zip(targets.iter().zip(&fakes))
            .map(|(p, (real, fake))| DiscSample { pyramid: &p.pyramid, real, fake })
            .collect();
        (l_adv_disc, d_acc) = discriminator_step(&mut state.d, &mut state.d_opt, &samples, mix(step_seed, 0, 4))?;
    }

    let inv = 1.0 / batch.len() as f64;
    let mut parts = Vec::with_capacity(batch.len());
    for (f, p) in fwd.iter_mut().zip(batch) {
        let tape = &mut f.tape;
        let gen_term = if cfg.discriminator {
            let d_fake = discriminator_on_tape(tape, &state.d, f.recon, &p.pyramid, false)?;
            Some(tape.bce(d_fake, vec![1.0])?)
        } else {
            None
        };
        let total = total_loss_on_tape(tape, &w, gen_term, f.l_dec, f.attr_mse, f.bits, p.cloud.len())?;
        let mut b = LossBreakdown::compose(
            &w,
            gen_term.map_or(0.0, |v| tape.scalar_value(v)),
            tape.scalar_value(f.l_dec),
            tape.scalar_value(f.attr_mse),
            tape.scalar_value(f.bits),
            p.cloud.len(),
        );
        b.l_adv_disc = l_adv_disc;
        parts.push(b);
        let scaled = tape.scale(total, inv);
        tape.backward(scaled, &mut state.g)?;
    }
    state.g_opt.step(&mut state.g);
    state.step += 1;
    Ok(StepReport { loss: LossBreakdown::mean(&parts), d_acc })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub lambda_index: usize,
    pub iteration: usize,
    pub report: StepReport,
    pub seconds: f64,
}

/// Append-only record of training steps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "iteration,L,D,R,L_adv,L_dec,attr_mse,d_acc,seconds,lambda_index";

    pub fn push(&mut self, row: LogRow) {
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let l = &r.report.loss;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{:.3},{}",
                r.iteration,
                l.total,
                l.distortion,
                l.rate,
                l.l_adv,
                l.l_dec,
                l.attr_mse,
                r.report.d_acc,
                r.seconds,
                r.lambda_index
            );
        }
        s
    }

    /// True if both logs hold the same steps and losses; wall time is ignored.
    pub fn same_losses(&self, other: &TrainLog) -> bool {
        self.rows.len() == other.rows.len()
            && self
                .rows
                .iter()
                .zip(&other.rows)
                .all(|(a, b)| a.lambda_index == b.lambda_index && a.iteration == b.iteration && a.report == b.report)
    }

    /// Rows for one rate point.
    pub fn for_lambda(&self, lambda_index: usize) -> impl Iterator<Item = &LogRow> {
        self.rows.iter().filter(move |r| r.lambda_index == lambda_index)
    }
}

/// Prepares every cloud once for training.
pub fn prepare_dataset(dataset: &[PointCloud], avrpm: Option<&ParamStore>, cfg: &TrainConfig) -> Result<Vec<Prepared>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let opts = CodecOptions {
        block_edge: cfg.block_edge,
        lambda_index: 0,
        no_avrpm: cfg.no_avrpm,
        dense_conv: cfg.dense_conv,
    };
    dataset.iter().map(|pc| Prepared::new(pc, avrpm, &opts)).collect()
}

/// Runs `iterations` steps at one rate point, sampling batches with
/// replacement.
pub fn train_lambda(
    data: &[Prepared],
    state: &mut GanState,
    cfg: &TrainConfig,
    lambda_index: usize,
    iterations: usize,
    log: &mut TrainLog,
) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let lambda = *cfg
        .lambda_values
        .get(lambda_index)
        .ok_or_else(|| Error::InvalidConfig(format!("no lambda with index {lambda_index}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, lambda_index as u64, 5));
    let start = Instant::now();
    for it in 0..iterations {
        let batch: Vec<&Prepared> = (0..cfg.batch_size).map(|_| &data[rng.gen_range(0..data.len())]).collect();
        let report = train_step(&batch, state, cfg, lambda)?;
        if it % 50 == 0 || it + 1 == iterations {
            log::info!(
                "lambda {lambda_index} iter {it}: L {:.4} R {:.4} mse {:.2} L_dec {:.4} d_acc {:.2}",
                report.loss.total,
                report.loss.rate,
                report.loss.attr_mse,
                report.loss.l_dec,
                report.d_acc
            );
        }
        log.push(LogRow { lambda_index, iteration: it, report, seconds: start.elapsed().as_secs_f64() });
    }
    Ok(())
}

/// Trained generators for every rate point plus the optional block classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub lambdas: Vec<f64>,
    pub generators: Vec<ParamStore>,
    pub avrpm: Option<ParamStore>,
}

impl ModelBundle {
    pub fn len(&self) -> usize {
        self.generators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }

    pub fn generator(&self, lambda_index: usize) -> Result<&ParamStore> {
        self.generators.get(lambda_index).ok_or_else(|| {
            Error::InvalidConfig(format!(
                "model has {} rate points, no lambda index {lambda_index}",
                self.generators.len()
            ))
        })
    }

    /// One flat store: `lambda{i}.*` per generator, `avrpm.*` and the lambda
    /// values under `sweep.lambda`.
    pub fn to_store(&self) -> Result<ParamStore> {
        let mut s = ParamStore::new();
        s.insert(LAMBDA_ID, vec![self.lambdas.len()], self.lambdas.clone())?;
        for (i, g) in self.generators.iter().enumerate() {
            s.merge(&g.with_prefix(&format!("lambda{i}.")))?;
        }
        if let Some(a) = &self.avrpm {
            s.merge(a)?;
        }
        Ok(s)
    }

    /// Accepts a bundle or a bare generator checkpoint (one rate point).
    pub fn from_store(s: &ParamStore) -> Result<Self> {
        let avrpm = Some(s.subset("avrpm.")).filter(|a| !a.is_empty());
        if !s.contains(LAMBDA_ID) {
            let mut g = ParamStore::new();
            for p in s.iter().filter(|p| !p.id.starts_with("avrpm.")) {
                g.insert(p.id.clone(), p.shape.clone(), p.value.clone())?;
            }
            if g.is_empty() {
                return Err(Error::InvalidConfig("checkpoint holds no generator".into()));
            }
            return Ok(Self { lambdas: vec![0.0], generators: vec![g], avrpm });
        }
        let lambdas = s.value(LAMBDA_ID)?.to_vec();
        let generators = (0..lambdas.len())
            .map(|i| {
                let g = s.strip_prefix(&format!("lambda{i}."));
                if g.is_empty() {
                    Err(Error::InvalidConfig(format!("checkpoint lacks generator for lambda index {i}")))
                } else {
                    Ok(g)
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self { lambdas, generators, avrpm })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_checkpoint(&self.to_store()?, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_store(&load_checkpoint(path)?)
    }
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub bundle: ModelBundle,
    pub discriminator: ParamStore,
    pub log: TrainLog,
}

/// Trains the first rate point from scratch and warm-starts each later one
/// from its predecessor.
pub fn train_rate_sweep(dataset: &[PointCloud], avrpm: Option<&ParamStore>, cfg: &TrainConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let data = prepare_dataset(dataset, avrpm, cfg)?;
    let mut state = GanState::new(cfg);
    let mut log = TrainLog::default();
    let mut generators = Vec::with_capacity(cfg.lambda_values.len());
    for i in 0..cfg.lambda_values.len() {
        if i > 0 {
            state = GanState::from_parts(state.g, state.d, cfg);
        }
        let iters = if i == 0 { cfg.iterations } else { cfg.warm_iterations };
        train_lambda(&data, &mut state, cfg, i, iters, &mut log)?;
        generators.push(state.g.clone());
    }
    let bundle = ModelBundle { lambdas: cfg.lambda_values.clone(), generators, avrpm: avrpm.cloned() };
    Ok(SweepResult { bundle, discriminator: state.d, log })
}

/// Encodes to bytes, parses them back, decodes and measures one cloud.
pub fn evaluate_cloud(
    pc: &PointCloud,
    g: &ParamStore,
    avrpm: Option<&ParamStore>,
    opts: &CodecOptions,
) -> Result<(RDPoint, PointCloud)> {
    let (bs, _) = encode(pc, g, avrpm, opts)?;
    let bytes = bs.to_bytes()?;
    let (recon, _) = decode(&Bitstream::from_bytes(&bytes)?, pc.positions(), g)?;
    let [psnr_y, psnr_u, psnr_v, psnr_yuv] = psnr_all(pc, &recon)?;
    let rate = bpip(bytes.len(), pc.len())?;
    let point = RDPoint { lambda_index: usize::from(opts.lambda_index), bpip: rate, psnr_y, psnr_u, psnr_v, psnr_yuv };
    Ok((point, recon))
}

/// One RD point per rate point: bpip and PSNRs averaged over `dataset`.
pub fn evaluate(bundle: &ModelBundle, dataset: &[PointCloud], opts: &CodecOptions) -> Result<RDCurve> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let avrpm = if opts.no_avrpm { None } else { bundle.avrpm.as_ref() };
    let n = dataset.len() as f64;
    let mut points = Vec::with_capacity(bundle.len());
    for (i, g) in bundle.generators.iter().enumerate() {
        let o = CodecOptions {
            lambda_index: u8::try_from(i).map_err(|_| Error::InvalidConfig("too many rate points".into()))?,
            ..*opts
        };
        let mut m = RDPoint { lambda_index: i, bpip: 0.0, psnr_y: 0.0, psnr_u: 0.0, psnr_v: 0.0, psnr_yuv: 0.0 };
        for pc in dataset {
            let (p, _) = evaluate_cloud(pc, g, avrpm, &o)?;
            m.bpip += p.bpip / n;
            m.psnr_y += p.psnr_y / n;
            m.psnr_u += p.psnr_u / n;
            m.psnr_v += p.psnr_v / n;
            m.psnr_yuv += p.psnr_yuv / n;
        }
        points.push(m);
    }
    RDCurve::new(points)
}

/// Every point takes the cloud's mean color.
pub fn mean_color_baseline(pc: &PointCloud) -> Result<PointCloud> {
    pc.with_colors(vec![pc.mean_color(); pc.len()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{synth_generate, ShapeKind, SynthSpec, TextureKind};

    fn cloud(shape: ShapeKind, texture: TextureKind, n: usize, seed: u64) -> PointCloud {
        synth_generate(&SynthSpec { shape, point_count: n, texture, seed }).unwrap()
    }

    const TINY: crate::codec::ModelConfig = crate::codec::ModelConfig { hidden: 4, latent: 2 };

    fn tiny_cfg() -> TrainConfig {
        let mut c = TrainConfig::desk();
        c.model = TINY;
        c.batch_size = 2;
        c.iterations = 3;
        c.warm_iterations = 2;
        c.lambda_values = vec![0.05, 0.01];
        c.lr = 1e-3;
        c
    }

    fn small_set() -> Vec<PointCloud> {
        vec![
            cloud(ShapeKind::Sphere, TextureKind::Gradient, 300, 1),
            cloud(ShapeKind::Plane, TextureKind::Checker, 300, 2),
        ]
    }

    #[test]
    fn step_is_deterministic() {
        let cfg = tiny_cfg();
        let data = prepare_dataset(&small_set(), None, &cfg).unwrap();
        let batch: Vec<&Prepared> = data.iter().collect();
        let run = || {
            let mut st = GanState::new(&cfg);
            let r: Vec<StepReport> = (0..2).map(|_| train_step(&batch, &mut st, &cfg, 0.05).unwrap()).collect();
            (r, st.g.hash(), st.d.hash())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn empty_inputs_rejected() {
        let cfg = tiny_cfg();
        let mut st = GanState::new(&cfg);
        assert!(matches!(train_step(&[], &mut st, &cfg, 0.1), Err(Error::EmptyBatch)));
        assert!(matches!(train_rate_sweep(&[], None, &cfg), Err(Error::EmptyDataset)));
    }

    #[test]
    fn logged_breakdowns_satisfy_identities() {
        let cfg = tiny_cfg();
        let res = train_rate_sweep(&small_set(), None, &cfg).unwrap();
        assert_eq!(res.log.rows.len(), 5);
        for r in &res.log.rows {
            assert!(r.report.loss.identity_error() < 1e-9);
            assert_eq!(r.report.loss.lambda, cfg.lambda_values[r.lambda_index]);
        }
        let csv = res.log.to_csv();
        assert!(csv.starts_with(TrainLog::CSV_HEADER));
        assert_eq!(csv.lines().count(), 6);
    }

    #[test]
    fn overfits_one_cloud_without_adversary() {
        let mut cfg = tiny_cfg();
        cfg.model.hidden = 8;
        cfg.discriminator = false;
        cfg.fixed_entropy = true;
        cfg.quant = crate::codec::QuantMode::Identity;
        cfg.batch_size = 1;
        cfg.lr = 1e-4;
        cfg.augment = false;
        let data = prepare_dataset(&[cloud(ShapeKind::Sphere, TextureKind::Gradient, 400, 5)], None, &cfg).unwrap();
        let mut st = GanState::new(&cfg);
        let losses: Vec<f64> =
            (0..50).map(|_| train_step(&[&data[0]], &mut st, &cfg, 0.05).unwrap().loss.total).collect();
        for w in losses.windows(2) {
            assert!(w[1] <= w[0], "loss rose from {} to {}", w[0], w[1]);
        }
        assert!(losses[49] < losses[0]);
    }

    #[test]
    fn discriminator_learns_with_generator_frozen() {
        let cfg = tiny_cfg();
        let data = prepare_dataset(&small_set(), None, &cfg).unwrap();
        let gray: Vec<Vec<f64>> = data.iter().map(|p| vec![0.5; p.voxels.feats().len()]).collect();
        let samples: Vec<DiscSample<'_>> = data
            .iter()
            .zip(&gray)
            .map(|(p, f)| DiscSample { pyramid: &p.pyramid, real: p.voxels.feats(), fake: f })
            .collect();
        let mut st = GanState::new(&cfg);
        let g_before = st.g.hash();
        let mut opt = Adam::new(1e-3);
        for s in 0..200 {
            discriminator_step(&mut st.d, &mut opt, &samples, s).unwrap();
        }
        assert!(discriminator_accuracy(&st.d, &samples).unwrap() > 0.9);
        assert_eq!(st.g.hash(), g_before);
    }

    #[test]
    fn adversary_off_leaves_generator_path_unchanged() {
        let mut with_d = tiny_cfg();
        with_d.phi_adv = 0.0;
        let mut without = with_d.clone();
        without.discriminator = false;
        let data = prepare_dataset(&small_set(), None, &with_d).unwrap();
        let batch: Vec<&Prepared> = data.iter().collect();
        let mut a = GanState::new(&with_d);
        let mut b = GanState::new(&without);
        let d0 = b.d.hash();
        train_step(&batch, &mut a, &with_d, 0.05).unwrap();
        train_step(&batch, &mut b, &without, 0.05).unwrap();
        assert_eq!(a.g.hash(), b.g.hash());
        assert_ne!(a.d.hash(), d0);
        assert_eq!(b.d.hash(), d0);
    }

    #[test]
    fn sweep_checkpoints_differ_and_round_trip() {
        let cfg = tiny_cfg();
        let res = train_rate_sweep(&small_set(), None, &cfg).unwrap();
        assert_eq!(res.bundle.len(), 2);
        assert_ne!(res.bundle.generators[0].hash(), res.bundle.generators[1].hash());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        res.bundle.save(&path).unwrap();
        let back = ModelBundle::load(&path).unwrap();
        assert_eq!(back.generators, res.bundle.generators);
        for (a, b) in back.lambdas.iter().zip(&res.bundle.lambdas) {
            assert_eq!(*a, f64::from(*b as f32));
        }

        let mut single = cfg.clone();
        single.lambda_values = vec![0.05];
        let one = train_rate_sweep(&small_set(), None, &single).unwrap();
        assert_eq!(one.bundle.len(), 1);
        assert_eq!(one.bundle.generators[0], res.bundle.generators[0]);
    }

    #[test]
    fn bare_generator_checkpoint_loads() {
        let g = crate::codec::init_generator_params(TINY, 3);
        let b = ModelBundle::from_store(&g).unwrap();
        assert_eq!(b.generators, vec![g]);
        assert!(b.avrpm.is_none());
        assert!(b.generator(1).is_err());
    }

    #[test]
    fn evaluate_matches_manual_pipeline() {
        let cfg = tiny_cfg();
        let set = small_set();
        let res = train_rate_sweep(&set, None, &cfg).unwrap();
        let opts = CodecOptions { no_avrpm: true, ..CodecOptions::default() };
        let curve = evaluate(&res.bundle, &set, &opts).unwrap();
        let mut manual = Vec::new();
        for (i, g) in res.bundle.generators.iter().enumerate() {
            let o = CodecOptions { lambda_index: i as u8, ..opts };
            let (mut rate, mut y) = (0.0, 0.0);
            for pc in &set {
                let (bs, _) = encode(pc, g, None, &o).unwrap();
                let bytes = bs.to_bytes().unwrap();
                let (rec, _) = decode(&bs, pc.positions(), g).unwrap();
                rate += 8.0 * bytes.len() as f64 / pc.len() as f64 / 2.0;
                y += crate::metrics::psnr(pc, &rec, crate::metrics::Channel::Y).unwrap() / 2.0;
            }
            manual.push((i, rate, y));
        }
        for p in &curve.points {
            let (_, rate, y) = manual[p.lambda_index];
            assert!((p.bpip - rate).abs() < 1e-12 && (p.psnr_y - y).abs() < 1e-12);
        }
        assert_eq!(curve, evaluate(&res.bundle, &set, &opts).unwrap());
    }

    #[test]
    fn baseline_is_flat() {
        let pc = cloud(ShapeKind::Cube, TextureKind::Noise, 200, 1);
        let b = mean_color_baseline(&pc).unwrap();
        assert_eq!(b.positions(), pc.positions());
        assert!(b.colors().iter().all(|c| *c == pc.mean_color()));
    }
}
