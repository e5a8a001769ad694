use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use brighten_core::crf::{estimate_crf, load_crf, save_crf, Crf, DEFAULT_LAMBDA_SMOOTH, DEFAULT_SAMPLES};
use brighten_core::edgefilter::{wgif_decompose, WgifParams, DEFAULT_LAMBDA, DEFAULT_RADIUS};
use brighten_core::imgcore::{load_image, save_png, to_float, to_u8, ImageF};
use brighten_core::meffuse::{build_weights, fuse, FusionConfig};
use brighten_core::mefssim::{mef_ssim, MefSsimConfig};
use brighten_core::pipeline::{brighten, PipelineConfig};
use brighten_core::residnet::load_weights;
use brighten_core::stack::{
    load_raw_float, load_stack, procedural_radiance, synth_stack, NoiseModel, Sidecar,
    SIDECAR_NAME,
};
use brighten_core::virtgen::{generate_virtual_detailed, VirtGenConfig};
use brighten_core::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_FORMAT: u8 = 4;
const EXIT_NUMERIC: u8 = 5;

/// Brighten dark 8-bit images with virtual exposures and exposure fusion.
///
/// Exit codes: 0 success, 2 usage, 3 io, 4 format/schema, 5 numeric.
#[derive(Parser)]
#[command(name = "brighten", version)]
struct Cli {
    /// Worker threads, 0 picks automatically.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Brighten one image.
    Brighten(BrightenArgs),
    /// Write a single virtual exposure.
    Virtual(VirtualArgs),
    /// Fuse an input with two virtual exposures.
    Fuse(FuseArgs),
    /// Score a fused image against an exposure stack.
    Mefssim(MefssimArgs),
    /// Split an image into base and detail layers.
    Decompose(DecomposeArgs),
    /// Camera response tools.
    #[command(subcommand)]
    Crf(CrfCommand),
    /// Exposure stack tools.
    #[command(subcommand)]
    Stack(StackCommand),
}

#[derive(Args)]
struct VirtArgs {
    /// Below this code a channel counts as under-exposed.
    #[arg(long, default_value_t = 5.0)]
    xi_low: f64,
    #[arg(long, default_value_t = 60.0)]
    xi_high: f64,
    #[arg(long, default_value_t = DEFAULT_RADIUS)]
    radius: usize,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
}

impl VirtArgs {
    fn wgif(&self) -> WgifParams {
        WgifParams {
            radius: self.radius,
            lambda: self.lambda,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Args)]
struct FusionArgs {
    /// Highlight-protection weight of the input.
    #[arg(long, value_enum, default_value = "on")]
    psi1: Toggle,
    /// Pyramid depth; defaults to the image size.
    #[arg(long)]
    levels: Option<usize>,
}

impl FusionArgs {
    fn config(&self) -> FusionConfig {
        FusionConfig {
            psi1_enabled: self.psi1 == Toggle::On,
            levels: self.levels,
            ..FusionConfig::default()
        }
    }
}

#[derive(Args)]
struct BrightenArgs {
    input: PathBuf,
    #[arg(long = "out", short, visible_alias = "output")]
    output: PathBuf,
    /// Camera response JSON.
    #[arg(long)]
    crf: PathBuf,
    #[arg(long)]
    weights_x4: Option<PathBuf>,
    #[arg(long)]
    weights_x16: Option<PathBuf>,
    /// Exposure ratios of the two virtual images.
    #[arg(long, value_delimiter = ',', default_values_t = [4.0, 16.0])]
    ratios: Vec<f64>,
    /// Skip residual enhancement even when weights are given.
    #[arg(long)]
    no_cnn: bool,
    /// Directory for virtual images, enhanced images and weight maps.
    #[arg(long)]
    emit_intermediates: Option<PathBuf>,
    #[command(flatten)]
    virt: VirtArgs,
    #[command(flatten)]
    fusion: FusionArgs,
}

#[derive(Args)]
struct VirtualArgs {
    input: PathBuf,
    #[arg(long = "out", short, visible_alias = "output")]
    output: PathBuf,
    #[arg(long)]
    crf: PathBuf,
    #[arg(long, default_value_t = 4.0)]
    ratio: f64,
    #[command(flatten)]
    virt: VirtArgs,
}

#[derive(Args)]
struct FuseArgs {
    /// Input, then the two virtual exposures.
    #[arg(long, num_args = 3, required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long = "out", short, visible_alias = "output")]
    output: PathBuf,
    #[command(flatten)]
    fusion: FusionArgs,
}

#[derive(Args)]
struct MefssimArgs {
    #[arg(long, num_args = 2.., required = true)]
    stack: Vec<PathBuf>,
    #[arg(long)]
    fused: PathBuf,
}

#[derive(Args)]
struct DecomposeArgs {
    input: PathBuf,
    #[arg(long)]
    base: PathBuf,
    /// Detail layer, written offset by 0.5.
    #[arg(long)]
    detail: PathBuf,
    #[arg(long, default_value_t = DEFAULT_RADIUS)]
    radius: usize,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
}

#[derive(Subcommand)]
enum CrfCommand {
    /// Recover a camera response from an exposure stack.
    Estimate {
        #[arg(num_args = 2.., required = true)]
        images: Vec<PathBuf>,
        /// Exposure sidecar; defaults to exposure.json beside the first image.
        #[arg(long)]
        sidecar: Option<PathBuf>,
        #[arg(long = "out", short, visible_alias = "output")]
        output: PathBuf,
        #[arg(long, default_value_t = DEFAULT_LAMBDA_SMOOTH)]
        smoothness: f64,
        #[arg(long, default_value_t = DEFAULT_SAMPLES)]
        samples: usize,
    },
}

#[derive(Subcommand)]
enum StackCommand {
    /// Render an exposure stack from a radiance map.
    Synth(SynthArgs),
    /// Check sizes and exposure metadata of a stack.
    Validate {
        #[arg(num_args = 1.., required = true)]
        images: Vec<PathBuf>,
        #[arg(long)]
        sidecar: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SynthArgs {
    /// LFX1 float radiance map.
    #[arg(long, required_unless_present = "procedural", conflicts_with = "procedural")]
    radiance: Option<PathBuf>,
    /// Generate a WIDTHxHEIGHT procedural scene instead.
    #[arg(long, value_parser = parse_size)]
    procedural: Option<(usize, usize)>,
    /// Response JSON; a gamma curve is used when absent.
    #[arg(long)]
    crf: Option<PathBuf>,
    #[arg(long, default_value_t = 2.2, conflicts_with = "crf")]
    gamma: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 4.0, 16.0])]
    ratios: Vec<f64>,
    /// Read noise sigma of the shortest exposure, linear units.
    #[arg(long, default_value_t = 0.0)]
    read_sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    shot_gain: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for z1.png, z2.png, ... and exposure.json.
    #[arg(long = "out", short, visible_alias = "output")]
    output: PathBuf,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s.split_once('x').ok_or("expected WIDTHxHEIGHT")?;
    let w = w.parse().map_err(|_| format!("bad width {w:?}"))?;
    let h = h.parse().map_err(|_| format!("bad height {h:?}"))?;
    if w == 0 || h == 0 {
        return Err("size must be positive".into());
    }
    Ok((w, h))
}

fn read(path: &Path) -> anyhow::Result<ImageF> {
    Ok(to_float(&load_image(path)?))
}

fn write(img: &ImageF, path: &Path) -> anyhow::Result<()> {
    save_png(&to_u8(img), path)?;
    Ok(())
}

fn sidecar_for(images: &[PathBuf], sidecar: Option<PathBuf>) -> PathBuf {
    sidecar.unwrap_or_else(|| {
        images[0]
            .parent()
            .unwrap_or(Path::new("."))
            .join(SIDECAR_NAME)
    })
}

fn cmd_brighten(args: BrightenArgs, verbose: bool) -> anyhow::Result<()> {
    let z1 = read(&args.input)?;
    let crf = load_crf(&args.crf)?;
    let mut nets = Vec::new();
    if !args.no_cnn {
        for path in [&args.weights_x4, &args.weights_x16] {
            nets.push(path.as_ref().map(load_weights).transpose()?);
        }
    }
    let cfg = PipelineConfig {
        virt: VirtGenConfig {
            xi_low: args.virt.xi_low,
            xi_high: args.virt.xi_high,
            ratios: args.ratios.clone(),
        },
        wgif: args.virt.wgif(),
        fusion: args.fusion.config(),
    };
    let out = brighten(&z1, &crf, &nets, &cfg)?;
    if verbose {
        for v in &out.virtuals {
            eprintln!(
                "ratio {}: gamma {:.4}{}",
                v.ratio,
                v.gamma,
                if v.gamma_fallback { " (fallback)" } else { "" }
            );
        }
    }
    write(&out.fused, &args.output)?;
    if let Some(dir) = &args.emit_intermediates {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (i, v) in out.virtuals.iter().enumerate() {
            write(&v.image, &dir.join(format!("z{}.png", i + 2)))?;
        }
        for (i, e) in out.enhanced.iter().enumerate() {
            if let Some(e) = e {
                write(e, &dir.join(format!("z{}_enhanced.png", i + 2)))?;
            }
        }
        for (i, w) in out.weights.maps.iter().enumerate() {
            write(w, &dir.join(format!("weight{}.png", i + 1)))?;
        }
    }
    Ok(())
}

fn cmd_virtual(args: VirtualArgs, verbose: bool) -> anyhow::Result<()> {
    let z1 = read(&args.input)?;
    let crf = load_crf(&args.crf)?;
    let cfg = VirtGenConfig {
        xi_low: args.virt.xi_low,
        xi_high: args.virt.xi_high,
        ratios: vec![args.ratio],
    };
    cfg.validate()?;
    let v = generate_virtual_detailed(&z1, &crf, args.ratio, &cfg, args.virt.wgif())?;
    if verbose {
        eprintln!("gamma {:.4}", v.gamma);
    }
    write(&v.image, &args.output)
}

fn cmd_fuse(args: FuseArgs) -> anyhow::Result<()> {
    let images = args
        .inputs
        .iter()
        .map(|p| read(p))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let cfg = args.fusion.config();
    let weights = build_weights(&images[0], &images[1], &images[2], &cfg)?;
    write(&fuse(&images, &weights, &cfg)?, &args.output)
}

fn cmd_mefssim(args: MefssimArgs) -> anyhow::Result<()> {
    let stack = args
        .stack
        .iter()
        .map(|p| read(p))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let fused = read(&args.fused)?;
    let score = mef_ssim(&stack, &fused, &MefSsimConfig::default())?;
    println!("mefssim={score:.4}");
    Ok(())
}

fn cmd_decompose(args: DecomposeArgs) -> anyhow::Result<()> {
    let img = read(&args.input)?;
    let bd = wgif_decompose(&img, args.radius, args.lambda)?;
    write(&bd.base, &args.base)?;
    write(&bd.detail.map(|v| v + 0.5), &args.detail)
}

fn cmd_crf(cmd: CrfCommand) -> anyhow::Result<()> {
    match cmd {
        CrfCommand::Estimate {
            images,
            sidecar,
            output,
            smoothness,
            samples,
        } => {
            let sidecar = Sidecar::load(sidecar_for(&images, sidecar))?;
            let stack = load_stack(&images, &sidecar)?;
            save_crf(&estimate_crf(&stack, smoothness, samples)?, &output)?;
            Ok(())
        }
    }
}

fn cmd_stack(cmd: StackCommand, verbose: bool) -> anyhow::Result<()> {
    match cmd {
        StackCommand::Synth(args) => {
            let radiance = match (&args.radiance, args.procedural) {
                (Some(path), _) => load_raw_float(path)?,
                (None, Some((w, h))) => procedural_radiance(w, h, args.seed),
                (None, None) => bail!(Error::InvalidArgument("no radiance source".into())),
            };
            let crf = match &args.crf {
                Some(path) => load_crf(path)?,
                None if args.gamma > 0.0 && args.gamma.is_finite() => Crf::gamma(args.gamma),
                None => bail!(Error::InvalidArgument(format!("bad gamma {}", args.gamma))),
            };
            let noise = (args.read_sigma > 0.0 || args.shot_gain > 0.0).then_some(NoiseModel {
                read_sigma: args.read_sigma,
                shot_gain: args.shot_gain,
                seed: args.seed,
            });
            let stack = synth_stack(&radiance, &crf, &args.ratios, noise)?;
            std::fs::create_dir_all(&args.output)
                .map_err(|e| Error::io(&args.output, e))?;
            for (i, img) in stack.images().iter().enumerate() {
                write(img, &args.output.join(format!("z{}.png", i + 1)))?;
            }
            Sidecar {
                exposure_times: args.ratios.clone(),
            }
            .save(args.output.join(SIDECAR_NAME))?;
            Ok(())
        }
        StackCommand::Validate { images, sidecar } => {
            let sidecar = Sidecar::load(sidecar_for(&images, sidecar))?;
            let stack = load_stack(&images, &sidecar)?;
            if verbose {
                let img = &stack.images()[0];
                eprintln!("{} images, {}x{}", stack.len(), img.width(), img.height());
            }
            println!("valid=true");
            Ok(())
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let Some(err) = err.chain().find_map(|e| e.downcast_ref::<Error>()) else {
        return if err.chain().any(|e| e.is::<std::io::Error>()) {
            EXIT_IO
        } else {
            1
        };
    };
    match err {
        Error::Io { .. } => EXIT_IO,
        Error::Format(_)
        | Error::Schema(_)
        | Error::Monotonicity { .. }
        | Error::ChannelMismatch { .. }
        | Error::DimensionMismatch(_)
        | Error::MagicMismatch(_)
        | Error::VersionUnsupported(_)
        | Error::ShapeChain(_) => EXIT_FORMAT,
        Error::SingularSystem(_) | Error::EmptyCase2 => EXIT_NUMERIC,
        Error::InvalidLevelCount { .. }
        | Error::WrongKind
        | Error::InvalidRadius(_)
        | Error::InvalidArgument(_)
        | Error::InsufficientImages { .. }
        | Error::TagMismatch { .. } => EXIT_USAGE,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .context("configuring thread pool")?;
    }
    match cli.command {
        Command::Brighten(args) => cmd_brighten(args, cli.verbose),
        Command::Virtual(args) => cmd_virtual(args, cli.verbose),
        Command::Fuse(args) => cmd_fuse(args),
        Command::Mefssim(args) => cmd_mefssim(args),
        Command::Decompose(args) => cmd_decompose(args),
        Command::Crf(cmd) => cmd_crf(cmd),
        Command::Stack(cmd) => cmd_stack(cmd, cli.verbose),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
