//! `ribkit` command-line front end.
//!
//! Exit status: 0 on success, 2 when artifacts were written but some ribs
//! failed or were reported missing, 1 on fatal errors.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ribkit::centerline::{extract_all, save_centerlines};
use ribkit::diagnostics::Warning;
use ribkit::morphology::ccd;
use ribkit::nifti::{load_volume, save_volume};
use ribkit::phantom::{generate, PhantomSpec};
use ribkit::pipeline::{run_eval, run_pipeline, write_text, PipelineConfig};
use ribkit::pointcloud::{mask_to_points, write_point_table};
use ribkit::volume::threshold_hu;
use ribkit::{BinaryMask, LabelVolume, ValueKind, Volume};

#[derive(Parser)]
#[command(name = "ribkit", version, about = "Rib labeling and centerline extraction for CT volumes")]
struct Cli {
    #[command(flatten)]
    opts: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

/// Tunables shared by every subcommand. Precedence: built-in defaults, then
/// `--config`, then environment variables, then flags.
#[derive(Args)]
struct GlobalOpts {
    /// key=value pipeline config file (the format written to config.txt)
    #[arg(long, global = true, env = "RIBKIT_CONFIG")]
    config: Option<PathBuf>,
    /// Bone threshold in HU (inclusive)
    #[arg(long, global = true, env = "RIBKIT_HU", allow_negative_numbers = true)]
    hu: Option<f64>,
    /// Minimum component size kept by denoising, in voxels
    #[arg(long, global = true, env = "RIBKIT_MIN_CC")]
    min_cc: Option<usize>,
    /// `morphological` or `oracle:<labels.nii[.gz]>`
    #[arg(long, global = true, env = "RIBKIT_LABELER")]
    labeler: Option<String>,
    #[arg(long, global = true, env = "RIBKIT_PENALTY_SCALE")]
    penalty_scale: Option<f64>,
    #[arg(long, global = true, env = "RIBKIT_PENALTY_EXP")]
    penalty_exp: Option<f64>,
    /// Odd moving-average window for centerline smoothing
    #[arg(long, global = true, env = "RIBKIT_SMOOTH_WINDOW")]
    smooth_window: Option<usize>,
    /// Points per resampled centerline
    #[arg(long, global = true, env = "RIBKIT_RESAMPLE")]
    resample: Option<usize>,
    /// NLD tolerance in mm
    #[arg(long, global = true, env = "RIBKIT_TAU")]
    tau: Option<f64>,
    #[arg(long, global = true, env = "RIBKIT_SEED")]
    seed: Option<u64>,
    /// Worker threads (0 = all cores)
    #[arg(long, global = true, env = "RIBKIT_THREADS")]
    threads: Option<usize>,
    /// Output file or directory, depending on the subcommand
    #[arg(long, global = true, env = "RIBKIT_OUT")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// HU volume -> binary bone mask
    Threshold { input: PathBuf },
    /// Binary mask -> mask without small components
    Ccd { input: PathBuf },
    /// Binary mask -> rib label volume
    Label { input: PathBuf },
    /// Label volume -> centerlines (`.bin` output selects the binary form)
    Centerline { input: PathBuf },
    /// Full pipeline on an HU volume, writing all artifacts to --out
    Pipeline { input: PathBuf },
    /// Scores prediction case directories against reference ones
    Eval { pred_dir: PathBuf, gt_dir: PathBuf },
    /// Writes a synthetic phantom (volume, labels, centerlines) to --out
    Phantom {
        /// key=value phantom spec; defaults are used when omitted
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Binary mask or label volume -> point table
    Points {
        input: PathBuf,
        /// Center and scale points into the unit ball
        #[arg(long)]
        normalize: bool,
    },
}

impl GlobalOpts {
    fn pipeline_config(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            cfg.apply(&text)?;
        }
        if let Some(v) = self.hu {
            cfg.hu_threshold = v;
        }
        if let Some(v) = self.min_cc {
            cfg.ccd_min_voxels = v;
        }
        if let Some(v) = &self.labeler {
            cfg.labeler = v.parse()?;
        }
        if let Some(v) = self.penalty_scale {
            cfg.penalty_scale = v;
        }
        if let Some(v) = self.penalty_exp {
            cfg.penalty_exponent = v;
        }
        if let Some(v) = self.smooth_window {
            cfg.smooth_window = v;
        }
        if let Some(v) = self.resample {
            cfg.resample_n = v;
        }
        if let Some(v) = self.tau {
            cfg.tau_mm = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.threads {
            cfg.threads = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out(&self) -> Result<&Path> {
        match &self.out {
            Some(p) => Ok(p),
            None => bail!("--out is required"),
        }
    }
}

fn report_warnings(warnings: &[Warning]) -> u8 {
    for w in warnings {
        eprintln!("{w}");
    }
    if warnings.iter().any(Warning::is_partial_failure) {
        2
    } else {
        0
    }
}

fn load_mask(path: &Path) -> Result<BinaryMask> {
    let v = load_volume(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(BinaryMask::from_volume(&v)?)
}

fn load_labels(path: &Path) -> Result<LabelVolume> {
    let v = load_volume(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(LabelVolume::from_volume(&v)?)
}

fn run(cli: Cli) -> Result<u8> {
    let cfg = cli.opts.pipeline_config()?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build_global()
        .context("starting worker threads")?;

    match &cli.command {
        Command::Threshold { input } => {
            let v = load_volume(input).with_context(|| format!("loading {}", input.display()))?;
            let mask = threshold_hu(&v, cfg.hu_threshold)?;
            eprintln!("foreground_voxels={}", mask.count());
            save_volume(&Volume::from_mask(&mask), cli.opts.out()?)?;
            Ok(0)
        }
        Command::Ccd { input } => {
            let mask = ccd(&load_mask(input)?, cfg.ccd_min_voxels, None);
            eprintln!("kept_voxels={}", mask.count());
            save_volume(&Volume::from_mask(&mask), cli.opts.out()?)?;
            Ok(0)
        }
        Command::Label { input } => {
            let mask = load_mask(input)?;
            let outcome = cfg.build_labeler()?.label(&mask)?;
            save_volume(&Volume::from_labels(&outcome.labels), cli.opts.out()?)?;
            eprintln!("ribs_left={} ribs_right={}", outcome.left, outcome.right);
            Ok(report_warnings(&outcome.warnings))
        }
        Command::Centerline { input } => {
            let labels = load_labels(input)?;
            let set = extract_all(&labels, &cfg.centerline());
            save_centerlines(&set.lines, cli.opts.out()?)?;
            eprintln!("centerlines={}", set.lines.len());
            Ok(report_warnings(&set.warnings))
        }
        Command::Pipeline { input } => {
            let out_dir = cli.opts.out()?;
            let volume = load_volume(input).with_context(|| format!("loading {}", input.display()))?;
            let output = run_pipeline(&volume, &cfg)?;
            output.write(out_dir, &cfg)?;
            Ok(report_warnings(&output.warnings))
        }
        Command::Eval { pred_dir, gt_dir } => {
            let summary = run_eval(pred_dir, gt_dir, cfg.tau_mm)?;
            let out_dir = cli.opts.out()?;
            std::fs::create_dir_all(out_dir)
                .with_context(|| format!("creating {}", out_dir.display()))?;
            for (name, report) in &summary.cases {
                write_text(&out_dir.join(format!("{name}.metrics.txt")), &report.to_key_value())?;
                println!("== {name}");
                print!("{}", report.to_table());
            }
            let text = summary.to_key_value();
            write_text(&out_dir.join("summary.txt"), &text)?;
            print!("{text}");
            for name in &summary.skipped {
                eprintln!("WARN missing_counterpart case={name}");
            }
            Ok(0)
        }
        Command::Phantom { spec } => {
            let mut phantom_spec = match spec {
                Some(path) => PhantomSpec::parse(
                    &std::fs::read_to_string(path)
                        .with_context(|| format!("reading {}", path.display()))?,
                )?,
                None => PhantomSpec::default(),
            };
            if let Some(seed) = cli.opts.seed {
                phantom_spec.seed = seed;
            }
            let phantom = generate(&phantom_spec)?;
            let out_dir = cli.opts.out()?;
            std::fs::create_dir_all(out_dir)
                .with_context(|| format!("creating {}", out_dir.display()))?;
            save_volume(&phantom.volume, out_dir.join("volume.nii.gz"))?;
            save_volume(&Volume::from_labels(&phantom.labels), out_dir.join("labels.nii.gz"))?;
            save_centerlines(&phantom.centerlines, out_dir.join("centerlines.txt"))?;
            write_text(&out_dir.join("spec.txt"), &phantom_spec.to_config())?;
            eprintln!("ribs={}", phantom.centerlines.len());
            Ok(0)
        }
        Command::Points { input, normalize } => {
            let volume = load_volume(input).with_context(|| format!("loading {}", input.display()))?;
            let points = match volume.kind() {
                ValueKind::Label => {
                    let labels = LabelVolume::from_volume(&volume)?;
                    mask_to_points(&labels.foreground(), *normalize)?.with_labels_from(&labels)?
                }
                ValueKind::Binary => mask_to_points(&BinaryMask::from_volume(&volume)?, *normalize)?,
                ValueKind::Hu => bail!("points needs a binary mask or label volume, got HU values"),
            };
            let path = cli.opts.out()?;
            let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_point_table(&points, &mut BufWriter::new(file))
                .with_context(|| format!("writing {}", path.display()))?;
            eprintln!("points={}", points.len());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
