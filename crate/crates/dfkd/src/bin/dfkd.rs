//! Command-line front end: teacher pre-training, data-free distillation,
//! the 2-d demo, and post-run comparison reports.
//!
//! Exit codes are a stable contract: 0 success, 1 runtime failure,
//! 2 usage or configuration error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dfkd::config::{Overrides, TrainConfig};
use dfkd::data::{self, DatasetName, DatasetProbe};
use dfkd::distill::{self, Probe};
use dfkd::metrics;
use dfkd::toy2d::{self, DemoSettings};
use dfkd::types::DiscrepancyKind;
use dfkd::Error;

#[derive(Parser)]
#[command(
    name = "dfkd",
    about = "Data-free knowledge distillation with a synthetic replay bank",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a teacher classifier on a labeled dataset.
    TrainTeacher(TrainTeacherArgs),
    /// Distill a teacher into a fresh student using only synthetic samples.
    Distill(DistillArgs),
    /// Run the 2-d three-class demo and render per-epoch decision boundaries.
    Toy2d(Toy2dArgs),
    /// Compare finished runs: stability table plus accuracy plot.
    Report(ReportArgs),
}

#[derive(Args)]
struct TrainTeacherArgs {
    /// Dataset: mnist, fashion-mnist, svhn, cifar10 or cifar100.
    #[arg(long)]
    dataset: String,
    /// Classifier architecture, e.g. lenet5 or resnet34.
    #[arg(long)]
    arch: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Checkpoint path to write.
    #[arg(long)]
    out: PathBuf,
    /// Dataset root (defaults to $DFKD_DATA_DIR, then ./data).
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Args)]
struct DistillArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Teacher checkpoint produced by train-teacher.
    #[arg(long)]
    teacher: PathBuf,
    /// Run directory; reusing one resumes the run inside it.
    #[arg(long)]
    out: PathBuf,
    /// Disable the replay bank (capacity 0).
    #[arg(long)]
    no_bank: bool,
    /// Override the student-disagreement term: js, l1 or kld.
    #[arg(long)]
    discrepancy: Option<DiscrepancyKind>,
    /// Drop the teacher-matching terms from the generator objective.
    #[arg(long)]
    no_match: bool,
    /// Drop the student-disagreement term from the generator objective.
    #[arg(long)]
    no_discrepancy: bool,
    /// Dataset root for accuracy probes (defaults to $DFKD_DATA_DIR, ./data).
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Args)]
struct Toy2dArgs {
    /// Keep the replay bank on (the default).
    #[arg(long, overrides_with = "no_bank")]
    with_bank: bool,
    /// Run without the replay bank to watch a class get forgotten.
    #[arg(long)]
    no_bank: bool,
    #[arg(long, default_value_t = 40)]
    epochs: u64,
    #[arg(long, default_value_t = 3)]
    seed: u64,
    /// Output directory for boundary images and the recall table.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Two or more run directories (each holding a metrics.log).
    #[arg(long, num_args = 1.., required = true)]
    runs: Vec<PathBuf>,
    /// Output directory for the comparison table and plot.
    #[arg(long)]
    out: PathBuf,
    /// Fraction of final epochs used for the stability window.
    #[arg(long, default_value_t = 0.2)]
    tail: f64,
}

fn data_root(flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(data::default_root)
}

fn train_teacher(args: TrainTeacherArgs) -> Result<(), Error> {
    let name: DatasetName = args.dataset.parse()?;
    let accuracy = data::train_teacher(
        &data_root(args.data_dir),
        name,
        &args.arch,
        args.seed,
        &args.out,
    )?;
    println!("final test accuracy: {accuracy:.4}");
    Ok(())
}

fn distill(args: DistillArgs) -> Result<(), Error> {
    let cfg = TrainConfig::load(&args.config)?;
    let cfg = Overrides {
        no_bank: args.no_bank,
        discrepancy: args.discrepancy,
        no_match: args.no_match,
        no_discrepancy: args.no_discrepancy,
    }
    .apply(cfg)?;

    let mut probe: Option<Box<dyn Probe>> = match &cfg.probe_dataset {
        Some(name) => {
            let name: DatasetName = name.parse()?;
            Some(Box::new(DatasetProbe::new(
                &data_root(args.data_dir),
                name,
            )?))
        }
        None => None,
    };
    let reports = distill::run(&cfg, &args.teacher, &args.out, probe.as_deref_mut())?;
    if let Some(last) = reports.last() {
        match last.test_acc {
            Some(acc) => println!(
                "finished at epoch {} with student accuracy {acc:.4}",
                last.epoch
            ),
            None => println!("finished at epoch {}", last.epoch),
        }
    }
    Ok(())
}

fn toy2d(args: Toy2dArgs) -> Result<(), Error> {
    let settings = DemoSettings {
        seed: args.seed,
        epochs: args.epochs,
        with_bank: !args.no_bank,
        ..DemoSettings::default()
    };
    let report = toy2d::run_demo(&settings, &args.out)?;
    println!(
        "final per-class recalls: {:?} (min {:.2})",
        report.epochs.last().map(|e| e.recalls.clone()).unwrap_or_default(),
        report.final_min_recall()
    );
    Ok(())
}

fn report(args: ReportArgs) -> Result<(), Error> {
    let mut missing = Vec::new();
    let mut runs = Vec::new();
    for dir in &args.runs {
        let log = dir.join("metrics.log");
        if !log.is_file() {
            missing.push(log.display().to_string());
            continue;
        }
        let label = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        runs.push((label, metrics::parse_log(&log)?));
    }
    if !missing.is_empty() {
        return Err(Error::Invalid(format!(
            "missing run logs: {}",
            missing.join(", ")
        )));
    }
    let comparison = metrics::compare(&runs, args.tail, &args.out)?;
    println!("label\tepochs\tpeak\tfinal\ttail_std");
    for row in &comparison.rows {
        println!(
            "{}\t{}\t{:.4}\t{:.4}\t{:.5}",
            row.label, row.epochs, row.stats.peak, row.stats.final_value, row.stats.std
        );
    }
    println!(
        "wrote {} and {}",
        comparison.table_path.display(),
        comparison.plot_path.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::TrainTeacher(args) => train_teacher(args),
        Cmd::Distill(args) => distill(args),
        Cmd::Toy2d(args) => toy2d(args),
        Cmd::Report(args) => report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
