//! `saint`: phantoms, training, inference, evaluation and tiling analysis.

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use saint_core::ami::{fdm_table, feature_map, AmiParams};
use saint_core::container::Dtype;
use saint_core::pipeline::{
    build_dataset, evaluate, evaluate_experiment, saint_infer, train_saint, ExperimentConfig, MetricsReport, Region,
};
use saint_core::rfn::RfnParams;
use saint_core::tiling::{plan, stitch_report, tiled_infer};
use saint_core::volume::{export_csv, export_pgm, load_svol, phantom, save_svol, view_slice, Recipe, View};
use serde_json::json;
use thiserror::Error;

use manifest::Manifest;

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] saint_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            _ => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "saint", version, about = "Spacing-aware slice interpolation for anisotropic volumes")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
struct Global {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// TOML experiment config (read by `train`); flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file or directory. Relative paths resolve against SAINT_OUT_DIR when set.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for inference.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic volume.
    GenPhantom {
        #[arg(long, value_delimiter = ',', default_values_t = [48, 48, 48])]
        dims: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 1.0, 1.0])]
        spacing: Vec<f64>,
        /// `laminae[:period_mm]`, `ellipsoids[:count]` or `ramp`.
        #[arg(long, default_value = "laminae")]
        recipe: Recipe,
    },
    /// Train both stages on synthetic data and score the held-out volumes.
    Train {
        #[arg(long)]
        ami_steps: Option<usize>,
        #[arg(long)]
        rfn_steps: Option<usize>,
        #[arg(long)]
        ami_lr: Option<f64>,
        #[arg(long)]
        rfn_lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        train_rz: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        eval_rz: Option<Vec<usize>>,
    },
    /// Upsample a sparse volume along z by an integer factor.
    Infer {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        ami: PathBuf,
        #[arg(long)]
        rfn: PathBuf,
        #[arg(long)]
        rz: usize,
    },
    /// Score a prediction against ground truth, or, given models instead of
    /// a prediction, score SAINT and every baseline on the decimated truth.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        rz: usize,
        #[arg(long, conflicts_with_all = ["ami", "rfn"])]
        pred: Option<PathBuf>,
        #[arg(long, requires = "rfn")]
        ami: Option<PathBuf>,
        #[arg(long, requires = "ami")]
        rfn: Option<PathBuf>,
        /// Method label for `--pred` rows.
        #[arg(long, default_value = "pred")]
        method: String,
        #[arg(long, default_value_t = 32)]
        crop: usize,
    },
    /// Tabulate filter distance matrices for every synthesized offset.
    Fdm {
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long)]
        rz: usize,
        /// Row and (dense) column spacing in mm.
        #[arg(long, value_delimiter = ',')]
        spacing: Vec<f64>,
    },
    /// Compare tiled and monolithic feature extraction on one slice.
    Stitch {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        ami: PathBuf,
        #[arg(long, default_value = "sagittal")]
        view: View,
        #[arg(long)]
        index: Option<usize>,
        #[arg(long, default_value_t = 32)]
        core: usize,
        /// Per-side overlap; defaults to the feature chain's receptive-field radius.
        #[arg(long)]
        margin: Option<usize>,
    },
    /// Write one slice as a 16-bit PGM.
    ExportSlice {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "axial")]
        view: View,
        #[arg(long)]
        index: usize,
    },
}

impl Command {
    fn verb(&self) -> &'static str {
        match self {
            Command::GenPhantom { .. } => "gen-phantom",
            Command::Train { .. } => "train",
            Command::Infer { .. } => "infer",
            Command::Eval { .. } => "eval",
            Command::Fdm { .. } => "fdm",
            Command::Stitch { .. } => "stitch",
            Command::ExportSlice { .. } => "export-slice",
        }
    }

    fn default_out(&self) -> &'static str {
        match self {
            Command::GenPhantom { .. } => "phantom.svol",
            Command::Train { .. } => "train",
            Command::Infer { .. } => "infer.svol",
            Command::Eval { .. } => "metrics.csv",
            Command::Fdm { .. } => "fdm.csv",
            Command::Stitch { .. } => "stitch",
            Command::ExportSlice { .. } => "slice.pgm",
        }
    }
}

fn resolve_out(given: Option<&Path>, default: &str) -> PathBuf {
    let p = given.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(default));
    match std::env::var_os("SAINT_OUT_DIR") {
        Some(root) if p.is_relative() => PathBuf::from(root).join(p),
        _ => p,
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|e| CliError::Config {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn regions(crop: usize, dims: [usize; 3]) -> Vec<Region> {
    vec![Region::Full, Region::Central(crop.min(dims[0]).min(dims[1]))]
}

fn arity<T>(flag: &str, values: &[T], n: usize) -> Result<()> {
    if values.len() == n {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--{flag} takes {n} comma-separated values, got {}", values.len())))
    }
}

fn run(cli: Cli, argv: Vec<String>) -> Result<()> {
    let g = cli.global;
    if g.threads == 0 {
        return Err(CliError::Usage("--threads must be >= 1".into()));
    }
    if g.config.is_some() && !matches!(cli.command, Command::Train { .. }) {
        return Err(CliError::Usage(format!("`{}` does not read --config", cli.command.verb())));
    }
    let out = resolve_out(g.out.as_deref(), cli.command.default_out());
    let mut m = Manifest::new(cli.command.verb(), argv, g.seed, g.threads);

    match cli.command {
        Command::GenPhantom { dims, spacing, recipe } => {
            arity("dims", &dims, 3)?;
            arity("spacing", &spacing, 3)?;
            let v = phantom([dims[0], dims[1], dims[2]], [spacing[0], spacing[1], spacing[2]], g.seed, recipe)?;
            create_parent(&out)?;
            save_svol(&v, &out)?;
            m.effective = json!({ "dims": dims, "spacing_mm": spacing, "recipe": recipe });
            m.output(&out)?;
        }
        Command::Train {
            ami_steps,
            rfn_steps,
            ami_lr,
            rfn_lr,
            batch_size,
            train_rz,
            eval_rz,
        } => {
            let mut cfg = match &g.config {
                Some(p) => {
                    let cfg = load_config(p)?;
                    m.input("config", p)?;
                    cfg
                }
                None => ExperimentConfig::default(),
            };
            cfg.seed = g.seed;
            cfg.threads = g.threads;
            cfg.ami_steps = ami_steps.unwrap_or(cfg.ami_steps);
            cfg.rfn_steps = rfn_steps.unwrap_or(cfg.rfn_steps);
            cfg.ami_adam.lr = ami_lr.unwrap_or(cfg.ami_adam.lr);
            cfg.rfn_adam.lr = rfn_lr.unwrap_or(cfg.rfn_adam.lr);
            cfg.batch_size = batch_size.unwrap_or(cfg.batch_size);
            cfg.train_rz = train_rz.unwrap_or(cfg.train_rz);
            cfg.eval_rz = eval_rz.unwrap_or(cfg.eval_rz);
            cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;

            let data = build_dataset(&cfg)?;
            let model = train_saint(&cfg, &data, |row| {
                if row.step % 50 == 0 {
                    eprintln!("{} step {} r_z {} loss {:.5}", row.stage, row.step, row.r_z, row.loss);
                }
            })?;
            create_dir(&out)?;
            let (ami_path, rfn_path) = (out.join("model.ami"), out.join("model.rfn"));
            model.ami.save(&ami_path, Dtype::F64)?;
            model.rfn.save(&rfn_path, Dtype::F64)?;
            let log_path = out.join("training_log.csv");
            export_csv(&model.log_csv(), &log_path)?;
            let metrics_path = out.join("metrics.csv");
            let report =
                evaluate_experiment(&data.held_out, &cfg.eval_rz, &model.ami, &model.rfn, cfg.eval_crop, cfg.threads)?;
            export_csv(&report.to_csv(), &metrics_path)?;
            m.effective = serde_json::to_value(&cfg).expect("config serializes");
            for p in [&ami_path, &rfn_path, &log_path, &metrics_path] {
                m.output(p)?;
            }
        }
        Command::Infer { input, ami, rfn, rz } => {
            if rz == 0 {
                return Err(CliError::Usage("--rz must be >= 1".into()));
            }
            let sparse = load_svol(&input)?;
            let (a, r) = (AmiParams::load(&ami)?, RfnParams::load(&rfn)?);
            m.input("in", &input)?;
            m.input("ami", &ami)?;
            m.input("rfn", &rfn)?;
            let dense = saint_infer(&sparse, rz, &a, &r, g.threads)?;
            create_parent(&out)?;
            save_svol(&dense, &out)?;
            m.effective = json!({ "r_z": rz });
            m.output(&out)?;
        }
        Command::Eval {
            gt,
            rz,
            pred,
            ami,
            rfn,
            method,
            crop,
        } => {
            if rz == 0 || crop == 0 {
                return Err(CliError::Usage("--rz and --crop must be >= 1".into()));
            }
            let truth = load_svol(&gt)?;
            m.input("gt", &gt)?;
            let id = gt.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let report = match (pred, ami, rfn) {
                (Some(p), _, _) => {
                    let v = load_svol(&p)?;
                    m.input("pred", &p)?;
                    let mut rep = MetricsReport::default();
                    rep.extend(evaluate(&id, &method, &v, &truth, rz, &regions(crop, truth.dims()))?);
                    rep
                }
                (None, Some(a), Some(r)) => {
                    let (ap, rp) = (AmiParams::load(&a)?, RfnParams::load(&r)?);
                    m.input("ami", &a)?;
                    m.input("rfn", &r)?;
                    evaluate_experiment(&[(id, truth)], &[rz], &ap, &rp, crop, g.threads)?
                }
                _ => return Err(CliError::Usage("eval needs --pred or both --ami and --rfn".into())),
            };
            create_parent(&out)?;
            export_csv(&report.to_csv(), &out)?;
            m.effective = json!({ "r_z": rz, "crop": crop, "method": method });
            m.output(&out)?;
        }
        Command::Fdm { k, rz, spacing } => {
            arity("spacing", &spacing, 2)?;
            let table = fdm_table(k, spacing[0], spacing[1], rz)?;
            create_parent(&out)?;
            export_csv(&table, &out)?;
            m.effective = json!({ "k": k, "r_z": rz, "spacing_mm": spacing });
            m.output(&out)?;
        }
        Command::Stitch {
            input,
            ami,
            view,
            index,
            core,
            margin,
        } => {
            let v = load_svol(&input)?;
            let params = AmiParams::load(&ami)?;
            m.input("in", &input)?;
            m.input("ami", &ami)?;
            let axis = view.index_axis();
            let index = index.unwrap_or(v.dims()[axis] / 2);
            if index >= v.dims()[axis] {
                return Err(CliError::Usage(format!("--index {index} outside the {} stack", view.name())));
            }
            let img = view_slice(&v, view, index);
            let net = |s: &saint_core::volume::Slice| feature_map(s, &params);
            let band = params.config.feature_chain().margin()?;
            let margin = margin.unwrap_or(band);
            let tiles = plan(&[img.rows, img.cols], &[core, core], margin)?;
            let report = stitch_report(&tiled_infer(&img, net, &tiles)?, &net(&img)?, &tiles, band)?;
            create_dir(&out)?;
            let (csv, pgm) = (out.join("stitch.csv"), out.join("heatmap.pgm"));
            export_csv(&report.to_csv(), &csv)?;
            export_pgm(&report.heat_map(), &pgm)?;
            eprintln!(
                "margin {margin}: seam MAD {:.3e}, interior MAD {:.3e}, ratio {:.3}, max abs {:.3e}",
                report.seam_mad, report.interior_mad, report.ratio, report.max_abs
            );
            m.effective = json!({ "view": view.name(), "index": index, "core": core, "margin": margin, "band": band });
            m.output(&csv)?;
            m.output(&pgm)?;
        }
        Command::ExportSlice { input, view, index } => {
            let v = load_svol(&input)?;
            m.input("in", &input)?;
            if index >= v.dims()[view.index_axis()] {
                return Err(CliError::Usage(format!("--index {index} outside the {} stack", view.name())));
            }
            create_parent(&out)?;
            export_pgm(&view_slice(&v, view, index), &out)?;
            m.effective = json!({ "view": view.name(), "index": index });
            m.output(&out)?;
        }
    }
    m.write_beside(&out)
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli, argv[1..].to_vec()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
