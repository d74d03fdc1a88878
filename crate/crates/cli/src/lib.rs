//! Command-line front end for localization distillation experiments.
//!
//! Every subcommand reads an optional TOML config, applies flag and
//! environment overrides (`LOCDISTILL_SEED`, `LOCDISTILL_OUT`,
//! `LOCDISTILL_TAU`, `LOCDISTILL_NMS_THR`, `LOCDISTILL_EPOCHS`,
//! `LOCDISTILL_SIGMA`, `LOCDISTILL_CONFIG`; flags win over the environment),
//! writes its outputs under the output directory and returns an exit code.

pub mod config;
pub mod error;
pub mod experiment;

use std::ffi::OsString;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use locdistill::distill::{csv_rows, train_model, CSV_HEADER};
use locdistill::toydet::{write_dataset, ModelParams};

pub use config::{load_config, parse_config, save_config, ExperimentConfig, Role};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "locdistill",
    version,
    about = "Localization distillation experiments on synthetic scenes"
)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Overrides {
    /// TOML experiment config; missing keys take their defaults.
    #[arg(long, global = true, env = "LOCDISTILL_CONFIG")]
    config: Option<PathBuf>,
    /// Root seed of every derived seed.
    #[arg(long, global = true, env = "LOCDISTILL_SEED")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "LOCDISTILL_OUT")]
    out: Option<PathBuf>,
    /// Distillation temperature.
    #[arg(long, global = true, env = "LOCDISTILL_TAU")]
    tau: Option<f64>,
    /// NMS IoU threshold used for evaluation.
    #[arg(long = "nms-thr", global = true, env = "LOCDISTILL_NMS_THR")]
    nms_thr: Option<f64>,
    /// Training epochs for every model.
    #[arg(long, global = true, env = "LOCDISTILL_EPOCHS")]
    epochs: Option<usize>,
    /// Noise scale of ambiguous edges.
    #[arg(long, global = true, env = "LOCDISTILL_SIGMA")]
    sigma: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RoleArg {
    Teacher,
    Student,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the training and evaluation datasets.
    GenData,
    /// Train one model without a teacher.
    Train {
        #[arg(long, value_enum, default_value = "student")]
        model: RoleArg,
        /// Learning-rate override.
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Teacher, plain student and distilled student on one seed.
    Distill,
    /// One round of self-distillation of the student config.
    SelfLd,
    /// Every teacher-assistant path through the configured assistants.
    TaSweep,
    /// Distilled vs plain student across the configured temperatures.
    TempSweep,
    /// Redundant boxes surviving NMS on multi-view scenes.
    NmsDemo,
    /// Evaluate a parameter file on the evaluation split.
    Eval {
        #[arg(long)]
        params: PathBuf,
    },
}

fn resolve_config(o: &Overrides) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &o.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = &o.out {
        cfg.out = v.clone();
    }
    if let Some(v) = o.tau {
        cfg.distill.temperature = v;
    }
    if let Some(v) = o.nms_thr {
        cfg.nms_threshold = v;
    }
    if let Some(v) = o.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = o.sigma {
        cfg.data.sigma = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn params_file(dir: &Path, name: &str, params: &ModelParams) -> Result<(), CliError> {
    write(dir, name, &params.to_text())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = resolve_config(&cli.overrides)?;
    if let Command::Train { lr: Some(lr), .. } = cli.command {
        cfg.train.lr = lr;
        cfg.validate()?;
    }
    let out = cfg.out.clone();
    fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    write(&out, "config.toml", &config::config_to_string(&cfg))?;

    match cli.command {
        Command::GenData => {
            let data = experiment::datasets(&cfg)?;
            for (name, samples) in [("train.tsv", &data.train), ("eval.tsv", &data.eval)] {
                let mut buf = Vec::new();
                write_dataset(&mut buf, samples)?;
                fs::write(out.join(name), buf)?;
            }
            println!(
                "wrote {} training and {} evaluation samples",
                data.train.len(),
                data.eval.len()
            );
        }
        Command::Train { model, .. } => {
            let role = match model {
                RoleArg::Teacher => Role::Teacher,
                RoleArg::Student => Role::Student,
            };
            let mcfg = cfg.model(role);
            let data = experiment::datasets(&cfg)?;
            params_file(&out, "params_init.txt", &ModelParams::init(&mcfg)?)?;
            let dcfg = cfg.distill_config().without_teacher();
            let trained = train_model(&mcfg, &cfg.train_config(), &data.train, None, &dcfg)?;
            params_file(&out, "params.txt", &trained.params)?;
            let metrics =
                locdistill::toydet::evaluate_model(&trained.params, &data.eval, cfg.nms_threshold)?;
            let stage = locdistill::distill::StageRecord {
                name: "train".into(),
                hidden: mcfg.hidden.clone(),
                epoch_losses: trained.epoch_losses,
                metrics,
            };
            write(
                &out,
                "train.csv",
                &format!("{CSV_HEADER}\n{}", csv_rows(&stage)),
            )?;
            println!(
                "mean_iou {:.4} mean_ap {:.4}",
                stage.metrics.mean_iou, stage.metrics.mean_ap
            );
        }
        Command::Distill => {
            let cmp = experiment::ld_comparison(&cfg)?;
            params_file(&out, "teacher.txt", &cmp.teacher.0.params)?;
            params_file(&out, "baseline.txt", &cmp.baseline.0.params)?;
            params_file(&out, "student.txt", &cmp.distilled.0.params)?;
            let mut csv = format!("{}\n", experiment::METRICS_HEADER);
            let mut curves = format!("{CSV_HEADER}\n");
            for (name, (_, rec)) in [
                ("teacher", &cmp.teacher),
                ("baseline", &cmp.baseline),
                ("distilled", &cmp.distilled),
            ] {
                csv.push_str(&experiment::metrics_row(name, &rec.metrics));
                curves.push_str(&csv_rows(rec));
                println!(
                    "{name:<9} mean_iou {:.4} mean_ap {:.4}",
                    rec.metrics.mean_iou, rec.metrics.mean_ap
                );
            }
            write(&out, "distill.csv", &csv)?;
            write(&out, "curves.csv", &curves)?;
        }
        Command::SelfLd => {
            let r = experiment::self_ld(&cfg)?;
            let mut csv = format!("{}\n", experiment::METRICS_HEADER);
            csv.push_str(&experiment::metrics_row("plain", &r.plain.1.metrics));
            csv.push_str(&experiment::metrics_row("self_ld", &r.self_ld.1.metrics));
            write(&out, "self_ld.csv", &csv)?;
            params_file(&out, "self_ld.txt", &r.self_ld.0.params)?;
            println!(
                "mean_iou change {:+.4} (plain {:.4}, self-LD {:.4})",
                r.self_ld.1.metrics.mean_iou - r.plain.1.metrics.mean_iou,
                r.plain.1.metrics.mean_iou,
                r.self_ld.1.metrics.mean_iou
            );
        }
        Command::TaSweep => {
            let records = experiment::ta_sweep(&cfg)?;
            for (i, r) in records.iter().enumerate() {
                let dir = out.join(format!("path{i}"));
                fs::create_dir_all(&dir)?;
                write(&dir, "record.txt", &r.to_text())?;
                write(&dir, "curves.csv", &r.to_csv())?;
                let m = &r.final_stage().metrics;
                println!(
                    "{:<12} mean_iou {:.4} mean_ap {:.4}",
                    r.path, m.mean_iou, m.mean_ap
                );
            }
            write(&out, "ta_sweep.csv", &experiment::ta_summary_csv(&records))?;
        }
        Command::TempSweep => {
            let rows = experiment::temp_sweep(&cfg)?;
            for r in &rows {
                println!(
                    "tau {:>5}  LD mean_iou {:.4}  baseline {:.4}",
                    r.tau, r.ld.mean_iou, r.baseline.mean_iou
                );
            }
            write(&out, "temp_sweep.csv", &experiment::temp_sweep_csv(&rows))?;
        }
        Command::NmsDemo => {
            let rows = experiment::nms_demo(&cfg)?;
            for r in &rows {
                println!(
                    "{:<9} thr {:<4} boxes/object {:.2} mean_ap {:.4}",
                    r.model, r.nms_threshold, r.boxes_per_object, r.metrics.mean_ap
                );
            }
            write(&out, "nms_demo.csv", &experiment::nms_demo_csv(&rows))?;
        }
        Command::Eval { params } => {
            let file = fs::File::open(&params)
                .map_err(|e| CliError::Io(format!("{}: {e}", params.display())))?;
            let p = ModelParams::read_text(BufReader::new(file))?;
            let m = experiment::evaluate_params(&cfg, &p)?;
            let csv = format!(
                "{}\n{}",
                experiment::METRICS_HEADER,
                experiment::metrics_row("model", &m)
            );
            write(&out, "eval.csv", &csv)?;
            println!("mean_iou {:.4} mean_ap {:.4}", m.mean_iou, m.mean_ap);
        }
    }
    Ok(())
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code: 0 on success, 1 on a runtime error, 2 on a usage
/// error.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
