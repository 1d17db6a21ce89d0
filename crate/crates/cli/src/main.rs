use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pcac::avrpm::{train_avrpm, AvrpmTrainConfig, DEFAULT_BLOCK_EDGE};
use pcac::cloud::{load_ply, save_ply, synth_generate, PointCloud, ShapeKind, SynthSpec, TextureKind};
use pcac::codec::{decode, encode, Bitstream, CodecOptions, ModelConfig, StageTimings};
use pcac::metrics::{bd_report, RDCurve};
use pcac::nn::{load_checkpoint, save_checkpoint};
use pcac::training::{evaluate, train_rate_sweep, ModelBundle, TrainConfig};

/// Learned point-cloud attribute codec.
#[derive(Parser, Debug)]
#[command(name = "pcac", version)]
struct Cli {
    /// Worker threads for internal parallelism (outputs do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset of colored clouds as PLY files.
    Synth(SynthArgs),
    /// Train the block density classifier.
    TrainAvrpm(TrainAvrpmArgs),
    /// Train one model per rate point (warm-started sweep).
    Train(TrainArgs),
    /// Compress the attributes of one cloud.
    Encode(EncodeArgs),
    /// Reconstruct attributes from a stream and the lossless geometry.
    Decode(DecodeArgs),
    /// Write the rate-distortion curve of a model over a dataset as CSV.
    Eval(EvalArgs),
    /// Bjontegaard deltas between two RD curve CSVs.
    Bd(BdArgs),
    /// Run the built-in oracle fixtures.
    Selftest,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    count: usize,
    #[arg(long, default_value_t = 1500)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use this shape for every cloud instead of cycling sphere, cube, plane.
    #[arg(long)]
    shape: Option<ShapeKind>,
    /// Use this texture for every cloud instead of cycling.
    #[arg(long)]
    texture: Option<TextureKind>,
}

#[derive(Args, Debug)]
struct TrainAvrpmArgs {
    /// Directory of PLY files.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BLOCK_EDGE)]
    block_edge: i32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Directory of PLY files.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output model bundle.
    #[arg(long)]
    out: PathBuf,
    /// Flat key=value training config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Block classifier checkpoint from `train-avrpm`.
    #[arg(long)]
    avrpm: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    latent_channels: Option<usize>,
    #[arg(long)]
    block_edge: Option<i32>,
    /// Per-iteration loss log (CSV).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Drop the adversarial term and leave the discriminator untrained.
    #[arg(long)]
    no_discriminator: bool,
    /// Run the networks on the full bounding-box lattice.
    #[arg(long)]
    dense_conv: bool,
    /// Uniform unit voxelization (no block classifier).
    #[arg(long)]
    no_avrpm: bool,
}

#[derive(Args, Debug)]
struct CodecFlags {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BLOCK_EDGE)]
    block_edge: i32,
    #[arg(long)]
    dense_conv: bool,
    #[arg(long)]
    no_avrpm: bool,
}

#[derive(Args, Debug)]
struct EncodeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    lambda_index: u8,
    /// Must match the model's latent width when given.
    #[arg(long)]
    latent_channels: Option<usize>,
    #[command(flatten)]
    codec: CodecFlags,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    /// Compressed stream.
    #[arg(long = "in")]
    input: PathBuf,
    /// PLY holding the geometry the stream was encoded against.
    #[arg(long)]
    geometry: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Directory of PLY files.
    #[arg(long = "in")]
    input: PathBuf,
    /// RD curve CSV.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    codec: CodecFlags,
}

#[derive(Args, Debug)]
struct BdArgs {
    reference: PathBuf,
    test: PathBuf,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PCAC_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::TrainAvrpm(a) => train_avrpm_cmd(a),
        Command::Train(a) => train(a),
        Command::Encode(a) => encode_cmd(a),
        Command::Decode(a) => decode_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Bd(a) => bd(a),
        Command::Selftest => Ok(selftest()),
    }
}

fn synth(a: SynthArgs) -> Result<ExitCode> {
    if a.count == 0 {
        bail!("--count must be at least 1");
    }
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let shapes = [ShapeKind::Sphere, ShapeKind::Cube, ShapeKind::Plane];
    let textures = [TextureKind::Gradient, TextureKind::Checker, TextureKind::Noise];
    for i in 0..a.count {
        let spec = SynthSpec {
            shape: a.shape.unwrap_or(shapes[i % 3]),
            point_count: a.points,
            texture: a.texture.unwrap_or(textures[(i / 3) % 3]),
            seed: a.seed.wrapping_add(i as u64),
        };
        let pc = synth_generate(&spec)?;
        let path = a.out.join(format!("cloud_{i:03}.ply"));
        save_ply(&pc, &path).with_context(|| format!("writing {}", path.display()))?;
        println!("{}: {} {} points, {}", path.display(), spec.shape, pc.len(), spec.texture);
    }
    Ok(ExitCode::SUCCESS)
}

/// Every `.ply` under `dir`, sorted by name.
fn load_dir(dir: &Path) -> Result<Vec<PointCloud>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("ply")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .ply files in {}", dir.display());
    }
    paths.iter().map(|p| load_ply(p).with_context(|| format!("loading {}", p.display()))).collect()
}

fn train_avrpm_cmd(a: TrainAvrpmArgs) -> Result<ExitCode> {
    let data = load_dir(&a.input)?;
    let mut cfg = AvrpmTrainConfig { block_edge: a.block_edge, seed: a.seed, ..AvrpmTrainConfig::default() };
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    let (store, report) = train_avrpm(&data, &cfg)?;
    save_checkpoint(&store, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "block classifier: loss {:.4} -> {:.4}, training accuracy {:.3}",
        report.initial_loss, report.final_loss, report.accuracy
    );
    Ok(ExitCode::SUCCESS)
}

fn train(a: TrainArgs) -> Result<ExitCode> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => TrainConfig::desk(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.iterations {
        cfg.iterations = n;
        cfg.warm_iterations = n;
    }
    if let Some(c) = a.latent_channels {
        cfg.model.latent = c;
    }
    if let Some(e) = a.block_edge {
        cfg.block_edge = e;
    }
    cfg.discriminator &= !a.no_discriminator;
    cfg.dense_conv |= a.dense_conv;
    cfg.no_avrpm |= a.no_avrpm;
    cfg.validate()?;

    let data = load_dir(&a.input)?;
    let avrpm = match (&a.avrpm, cfg.no_avrpm) {
        (Some(p), false) => Some(load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?),
        _ => None,
    };
    let result = train_rate_sweep(&data, avrpm.as_ref(), &cfg)?;
    result.bundle.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(p) = &a.log {
        std::fs::write(p, result.log.to_csv()).with_context(|| format!("writing {}", p.display()))?;
    }
    for (i, l) in result.bundle.lambdas.iter().enumerate() {
        let last = result.log.for_lambda(i).last();
        let (loss, rate) = last.map_or((f64::NAN, f64::NAN), |r| (r.report.loss.total, r.report.loss.rate));
        println!("lambda[{i}] = {l}: final loss {loss:.4}, estimated rate {rate:.4} bpip");
    }
    Ok(ExitCode::SUCCESS)
}

fn print_timings(what: &str, t: &StageTimings) {
    println!(
        "{what}: partition {:.3} ms, network {:.3} ms, entropy {:.3} ms, total {:.3} ms",
        t.partition.as_secs_f64() * 1e3,
        t.network.as_secs_f64() * 1e3,
        t.entropy.as_secs_f64() * 1e3,
        t.total.as_secs_f64() * 1e3
    );
}

fn encode_cmd(a: EncodeArgs) -> Result<ExitCode> {
    let bundle = ModelBundle::load(&a.codec.model).with_context(|| format!("loading {}", a.codec.model.display()))?;
    let g = bundle.generator(usize::from(a.lambda_index))?;
    if let Some(c) = a.latent_channels {
        let model = ModelConfig::from_store(g)?;
        if model.latent != c {
            bail!("model has {} latent channels, --latent-channels asked for {c}", model.latent);
        }
    }
    let pc = load_ply(&a.input).with_context(|| format!("loading {}", a.input.display()))?;
    let opts = CodecOptions {
        block_edge: a.codec.block_edge,
        lambda_index: a.lambda_index,
        no_avrpm: a.codec.no_avrpm,
        dense_conv: a.codec.dense_conv,
    };
    let avrpm = if a.codec.no_avrpm { None } else { bundle.avrpm.as_ref() };
    let (bs, timings) = encode(&pc, g, avrpm, &opts)?;
    let bytes = bs.to_bytes()?;
    std::fs::write(&a.out, &bytes).with_context(|| format!("writing {}", a.out.display()))?;
    println!("{} points -> {} bytes ({:.4} bpip)", pc.len(), bytes.len(), 8.0 * bytes.len() as f64 / pc.len() as f64);
    print_timings("encode", &timings);
    Ok(ExitCode::SUCCESS)
}

fn decode_cmd(a: DecodeArgs) -> Result<ExitCode> {
    let bytes = std::fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let bs = Bitstream::from_bytes(&bytes)?;
    let bundle = ModelBundle::load(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let g = bundle.generator(usize::from(bs.lambda_index))?;
    let geometry = load_ply(&a.geometry).with_context(|| format!("loading {}", a.geometry.display()))?;
    let (pc, timings) = decode(&bs, geometry.positions(), g)?;
    save_ply(&pc, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!("decoded {} points", pc.len());
    print_timings("decode", &timings);
    Ok(ExitCode::SUCCESS)
}

fn eval(a: EvalArgs) -> Result<ExitCode> {
    let bundle = ModelBundle::load(&a.codec.model).with_context(|| format!("loading {}", a.codec.model.display()))?;
    let data = load_dir(&a.input)?;
    let opts = CodecOptions {
        block_edge: a.codec.block_edge,
        lambda_index: 0,
        no_avrpm: a.codec.no_avrpm,
        dense_conv: a.codec.dense_conv,
    };
    let curve = evaluate(&bundle, &data, &opts)?;
    let csv = curve.to_csv();
    std::fs::write(&a.out, &csv).with_context(|| format!("writing {}", a.out.display()))?;
    print!("{csv}");
    Ok(ExitCode::SUCCESS)
}

fn bd(a: BdArgs) -> Result<ExitCode> {
    let reference = RDCurve::load(&a.reference).with_context(|| format!("reading {}", a.reference.display()))?;
    let test = RDCurve::load(&a.test).with_context(|| format!("reading {}", a.test.display()))?;
    let (_, text) = bd_report(&reference, &test)?;
    print!("{text}");
    if let Some(p) = &a.out {
        std::fs::write(p, &text).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn selftest() -> ExitCode {
    let results = pcac::selftest::run_all();
    let mut ok = true;
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        ok &= r.passed;
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
