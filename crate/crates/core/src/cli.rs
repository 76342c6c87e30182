//! Command-line front end. Exit codes: 0 success, 1 verification failure,
//! 2 input error.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::blocks::{Ess2d, Ss2d};
use crate::error::{Error, Result};
use crate::geometry::color::{rgb_to_ycbcr_tensor, ycbcr_to_rgb_tensor};
use crate::geometry::resize::bicubic_resize_lf;
use crate::geometry::{geometry_ensemble, macpi_image, to_slice, Extents, LightField, SliceKind};
use crate::io::{read_any, write_lf_dir, write_png};
use crate::metrics::{aggregate, evaluate_scene, MetricReport};
use crate::net::{config_path, count_flops, count_params, LfMamba, NetworkConfig, Variant};
use crate::tensor::Tensor;
use crate::train::{synthetic_dataset, train, TrainConfig};
use crate::verify::{run, Suite};

pub const THREADS_ENV: &str = "LFMAMBA_THREADS";

#[derive(Debug, Parser)]
#[command(name = "lfmamba", version, about = "State-space light-field super-resolution")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Format {
    #[default]
    Text,
    /// One `key=value` line.
    Kv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the built-in property suites.
    Verify {
        #[arg(long, default_value = "all", value_parser = Suite::NAMES)]
        suite: String,
    },
    /// Parameter count, analytic FLOPs and forward wall time of a config.
    Bench {
        /// TOML network config; the default ×4 model when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "5,5,32,32")]
        input_extents: String,
        #[arg(long, default_value_t = 1)]
        runs: usize,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Train on synthetic light fields, optionally from an initial config.
    Train(TrainArgs),
    /// Spatial super-resolution of a light field.
    Sr {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        scale: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ensemble: bool,
        /// Ground truth for per-view PSNR/SSIM.
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Angular super-resolution of a light field.
    Asr {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the 2D slices of one kind as PNG images.
    Slice {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_parser = ["sai", "macpi", "epih", "epiv"])]
        view: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// PSNR and SSIM of `b` against `a` on the luma channel.
    Metrics {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub samples: usize,
    #[arg(long, default_value_t = 4)]
    pub val_samples: usize,
    /// HR patch as `U,V,H,W`.
    #[arg(long, default_value = "5,5,32,32")]
    pub patch: String,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    Failed,
}

impl Status {
    pub fn code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::Failed => 1,
        }
    }
}

pub const INPUT_ERROR: i32 = 2;

pub fn parse_extents(s: &str) -> Result<Extents> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::domain(format!("extents `{s}` are not four integers")))?;
    match parts[..] {
        [u, v, h, w] if parts.iter().all(|&x| x > 0) => Ok(Extents::new(u, v, h, w)),
        _ => Err(Error::domain(format!("extents `{s}` must be four positive integers U,V,H,W"))),
    }
}

/// Parses `args`, runs the command, and returns the process exit code.
pub fn main_with(args: impl IntoIterator<Item = String>, out: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => INPUT_ERROR,
            };
        }
    };
    configure_threads();
    match execute(cli.command, out) {
        Ok(status) => status.code(),
        Err(e) => {
            eprintln!("error: {e}");
            INPUT_ERROR
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("stdout", e)
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<Status> {
    match command {
        Command::Verify { suite } => verify(suite.parse()?, out),
        Command::Bench { config, input_extents, runs, format } => bench(config.as_deref(), &input_extents, runs, format, out),
        Command::Train(args) => train_cmd(args, out),
        Command::Sr { model, input, scale, out: dir, ensemble, gt, format } => {
            sr(&model, &input, scale, &dir, ensemble, gt.as_deref(), format, out)
        }
        Command::Asr { model, input, out: dir } => asr(&model, &input, &dir, out),
        Command::Slice { input, view, out: dir } => slice(&input, view.parse()?, &dir, out),
        Command::Metrics { a, b, format } => metrics(&a, &b, format, out),
    }
}

fn verify(suite: Suite, out: &mut dyn Write) -> Result<Status> {
    let checks = run(suite);
    let failed = checks.iter().filter(|c| !c.passed).count();
    for c in &checks {
        writeln!(out, "{c}").map_err(io_err)?;
    }
    writeln!(out, "{} passed, {failed} failed", checks.len() - failed).map_err(io_err)?;
    Ok(if failed == 0 { Status::Ok } else { Status::Failed })
}

fn load_config(path: Option<&Path>) -> Result<NetworkConfig> {
    match path {
        Some(p) => NetworkConfig::from_toml(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
        None => Ok(NetworkConfig::sr(4)),
    }
}

fn bench(config: Option<&Path>, extents: &str, runs: usize, format: Format, out: &mut dyn Write) -> Result<Status> {
    let cfg = load_config(config)?;
    cfg.validate()?;
    let e = parse_extents(extents)?;
    if [e.u, e.v] != cfg.angular {
        return Err(Error::domain(format!("input angular {}x{} does not match config {:?}", e.u, e.v, cfg.angular)));
    }
    let params = count_params(&cfg);
    let flops = count_flops(&cfg, e);
    let scan = cfg.block().scan_at(cfg.block().inner());
    let ratio = Ess2d::scan_params(scan) as f64 / Ss2d::scan_params(scan) as f64;
    let (model, store) = LfMamba::build::<f32>(cfg)?;
    let lf = LightField::<f32>::from_fn(e, 1, |i| ((i[2] * 7 + i[3] * 3 + i[0] + i[1]) % 17) as f32 / 16.0);
    let start = Instant::now();
    for _ in 0..runs.max(1) {
        model.infer(&store, &lf)?;
    }
    let secs = start.elapsed().as_secs_f64() / runs.max(1) as f64;
    match format {
        Format::Text => {
            writeln!(out, "params            {params} ({:.3}M)", params as f64 / 1e6).map_err(io_err)?;
            writeln!(out, "MACs              {} ({:.2}G)", flops.macs, flops.macs as f64 / 1e9).map_err(io_err)?;
            writeln!(out, "FLOPs (2 per MAC) {} ({:.2}G)", flops.flops, flops.flops as f64 / 1e9).map_err(io_err)?;
            writeln!(out, "forward           {secs:.3} s on {}x{}x{}x{}", e.u, e.v, e.h, e.w).map_err(io_err)?;
            writeln!(out, "ess2d/ss2d scan   {ratio}").map_err(io_err)?;
        }
        Format::Kv => {
            writeln!(out, "params={params} macs={} flops={} forward_s={secs:.6} scan_ratio={ratio}", flops.macs, flops.flops)
                .map_err(io_err)?;
        }
    }
    Ok(Status::Ok)
}

fn train_cmd(args: TrainArgs, out: &mut dyn Write) -> Result<Status> {
    let cfg = match &args.config {
        Some(_) => load_config(args.config.as_deref())?,
        None => NetworkConfig::sr(2),
    };
    cfg.validate()?;
    let patch = parse_extents(&args.patch)?;
    if [patch.u, patch.v] != cfg.angular || patch.h % cfg.scale != 0 || patch.w % cfg.scale != 0 {
        return Err(Error::domain(format!("patch {} does not fit config angular {:?} at scale {}", args.patch, cfg.angular, cfg.scale)));
    }
    let defaults = TrainConfig::default();
    let tc = TrainConfig {
        epochs: args.epochs.unwrap_or(defaults.epochs),
        lr0: args.lr.unwrap_or(defaults.lr0),
        batch: args.batch.unwrap_or(defaults.batch),
        seed: args.seed,
        ..defaults
    };
    let data = synthetic_dataset::<f32>(args.samples, patch, cfg.scale, args.seed)?;
    let val = synthetic_dataset::<f32>(args.val_samples, patch, cfg.scale, args.seed.wrapping_add(1 << 32))?;
    let (model, mut store) = LfMamba::build::<f32>(cfg)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let log_path = args.out.join("train.log");
    let mut log = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let report = train(&model, &mut store, &data, &val, &tc, &mut log, Some(&args.out))?;
    if let Some(v) = report.validation.last() {
        writeln!(out, "val psnr {:.3} dB (bicubic {:.3} dB) after {} steps", v.psnr, v.bicubic_psnr, report.steps).map_err(io_err)?;
    }
    writeln!(out, "checkpoint {}", args.out.join("last.lfmc").display()).map_err(io_err)?;
    Ok(Status::Ok)
}

/// Luma of a 1- or 3-channel field and, for colour input, its chroma.
fn split_luma(lf: &LightField<f32>) -> Result<(LightField<f32>, Option<LightField<f32>>)> {
    match lf.channels() {
        1 => Ok((lf.clone(), None)),
        3 => {
            let e = lf.extents();
            let ycc = rgb_to_ycbcr_tensor(&lf.tensor().reshape(&[e.views() * e.h, e.w, 3])?)?;
            let ycc = LightField::new(ycc.into_reshaped(&[e.u, e.v, e.h, e.w, 3])?)?;
            let y = LightField::from_fn(e, 1, |i| ycc.at(i[0], i[1], i[2], i[3], 0));
            Ok((y, Some(ycc)))
        }
        c => Err(Error::domain(format!("expected 1 or 3 channels, got {c}"))),
    }
}

/// Recombines a super-resolved luma with chroma bicubic-upsampled to match.
fn merge_luma(y: &LightField<f32>, ycc: &LightField<f32>) -> Result<LightField<f32>> {
    let (e, src) = (y.extents(), ycc.extents());
    let up = bicubic_resize_lf(ycc, e.h as f64 / src.h as f64)?;
    if up.extents() != e {
        return Err(Error::shape(format!("chroma {:?} vs luma {e:?}", up.extents())));
    }
    let merged =
        LightField::from_fn(e, 3, |i| if i[4] == 0 { y.at(i[0], i[1], i[2], i[3], 0) } else { up.at(i[0], i[1], i[2], i[3], i[4]) });
    let rgb = ycbcr_to_rgb_tensor(&merged.tensor().reshape(&[e.views() * e.h, e.w, 3])?)?;
    LightField::new(rgb.into_reshaped(&[e.u, e.v, e.h, e.w, 3])?)
}

fn report_metrics(report: &MetricReport, format: Format, out: &mut dyn Write) -> Result<()> {
    match format {
        Format::Text => {
            for (s, scene) in report.scenes.iter().enumerate() {
                for (k, (p, q)) in scene.per_view.iter().enumerate() {
                    writeln!(out, "scene {s} view {k:3}  psnr {p:.4}  ssim {q:.6}").map_err(io_err)?;
                }
            }
            writeln!(out, "mean psnr {:.4}  ssim {:.6}", report.psnr, report.ssim).map_err(io_err)
        }
        Format::Kv => writeln!(out, "psnr={:.6} ssim={:.6}", report.psnr, report.ssim).map_err(io_err),
    }
}

#[allow(clippy::too_many_arguments)]
fn sr(
    model: &Path,
    input: &Path,
    scale: usize,
    dir: &Path,
    ensemble: bool,
    gt: Option<&Path>,
    format: Format,
    out: &mut dyn Write,
) -> Result<Status> {
    let (net, store) = LfMamba::load::<f32>(model)?;
    if net.config.variant != Variant::Sr {
        return Err(Error::domain(format!("{} is not a spatial model", config_path(model).display())));
    }
    if net.config.scale != scale {
        return Err(Error::domain(format!("model scale is {} but --scale {scale}", net.config.scale)));
    }
    let lf = read_any::<f32>(input)?;
    let e = lf.extents();
    if [e.u, e.v] != net.config.angular {
        return Err(Error::domain(format!("input has {}x{} views, model expects {:?}", e.u, e.v, net.config.angular)));
    }
    let (y, chroma) = split_luma(&lf)?;
    let y_sr = if ensemble { geometry_ensemble(&y, |x| net.infer(&store, x))? } else { net.infer(&store, &y)? };
    let result = match &chroma {
        Some(ycc) => merge_luma(&y_sr, ycc)?,
        None => y_sr.clone(),
    };
    write_lf_dir(&result, dir, 16)?;
    writeln!(out, "wrote {}x{}x{}x{} to {}", e.u, e.v, result.extents().h, result.extents().w, dir.display()).map_err(io_err)?;
    if let Some(gt) = gt {
        let truth = split_luma(&read_any::<f32>(gt)?)?.0;
        report_metrics(&aggregate(vec![evaluate_scene(&y_sr, &truth)?]), format, out)?;
    }
    Ok(Status::Ok)
}

fn asr(model: &Path, input: &Path, dir: &Path, out: &mut dyn Write) -> Result<Status> {
    let (net, store) = LfMamba::load::<f32>(model)?;
    if net.config.variant != Variant::Asr {
        return Err(Error::domain(format!("{} is not an angular model", config_path(model).display())));
    }
    let lf = read_any::<f32>(input)?;
    let (y, chroma) = split_luma(&lf)?;
    let y_out = net.infer(&store, &y)?;
    let result = match chroma {
        // chroma of the nearest input view
        Some(ycc) => {
            let (src, dst) = (ycc.extents(), y_out.extents());
            let pick = |t: usize, n: usize| ((t as f64 + 0.5) * n as f64 / (if n == src.u { dst.u } else { dst.v }) as f64) as usize;
            let filled = LightField::from_fn(dst, 3, |i| {
                if i[4] == 0 {
                    y_out.at(i[0], i[1], i[2], i[3], 0)
                } else {
                    ycc.at(pick(i[0], src.u).min(src.u - 1), pick(i[1], src.v).min(src.v - 1), i[2], i[3], i[4])
                }
            });
            let rgb = ycbcr_to_rgb_tensor(&filled.tensor().reshape(&[dst.views() * dst.h, dst.w, 3])?)?;
            LightField::new(rgb.into_reshaped(&[dst.u, dst.v, dst.h, dst.w, 3])?)?
        }
        None => y_out,
    };
    write_lf_dir(&result, dir, 16)?;
    let e = result.extents();
    writeln!(out, "wrote {}x{}x{}x{} to {}", e.u, e.v, e.h, e.w, dir.display()).map_err(io_err)?;
    Ok(Status::Ok)
}

fn slice(input: &Path, kind: SliceKind, dir: &Path, out: &mut dyn Write) -> Result<Status> {
    let lf = read_any::<f32>(input)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let view = to_slice(&lf, kind);
    let [n, rows, cols] = kind.batch_dims(lf.extents());
    let c = lf.channels();
    for (k, chunk) in view.tensor.data().chunks(rows * cols * c).enumerate() {
        let img = Tensor::new(vec![rows, cols, c], chunk.to_vec())?;
        write_png(&img, dir.join(format!("{}_{k:05}.png", kind.name())))?;
    }
    if kind == SliceKind::MacPi {
        write_png(&macpi_image(&lf)?, dir.join("macpi_image.png"))?;
    }
    writeln!(out, "{n} {} slices of {rows}x{cols} in {}", kind.name(), dir.display()).map_err(io_err)?;
    Ok(Status::Ok)
}

fn metrics(a: &Path, b: &Path, format: Format, out: &mut dyn Write) -> Result<Status> {
    let truth = split_luma(&read_any::<f32>(a)?)?.0;
    let pred = split_luma(&read_any::<f32>(b)?)?.0;
    report_metrics(&aggregate(vec![evaluate_scene(&pred, &truth)?]), format, out)?;
    Ok(Status::Ok)
}
