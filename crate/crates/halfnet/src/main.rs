//! Command-line experiment harness: train named models on MNIST-style
//! datasets, emit per-model report CSVs and per-seed learning curves, merge
//! reports into an aligned text table, and list parameter counts.
//!
//! Exit codes: 0 success, 1 usage or parse error, 2 missing data or other
//! environment problems.

use clap::{Args, Parser, Subcommand, ValueEnum};
use halfnet::data::{Dataset, Split};
use halfnet::train::{run_experiment, write_curve_csv, write_report_csv};
use halfnet::{Activation, ModelSpec, TrainConfig};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "halfnet", about = "Train and compare half-layer networks", disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train models and write report/curve CSVs.
    Run(RunArgs),
    /// Merge report CSVs into an aligned text table.
    Table(TableArgs),
    /// Print the trainable parameter count of each model.
    Counts(CountsArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetName {
    Mnist,
    Fashionmnist,
}

impl DatasetName {
    fn as_str(&self) -> &'static str {
        match self {
            DatasetName::Mnist => "mnist",
            DatasetName::Fashionmnist => "fashionmnist",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum HalfActivation {
    Relu,
    Sigmoid,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitMode {
    Calibrated,
    Constant,
}

#[derive(Args)]
struct RunArgs {
    /// Dataset directory name under the data root.
    #[arg(long, value_enum, default_value = "mnist")]
    dataset: DatasetName,
    /// Comma-separated model names, e.g. lp,mlp-32,rnd-1024-N.
    #[arg(long, required = true, value_delimiter = ',')]
    models: Vec<String>,
    /// Number of seeds per model (seeds 0..N).
    #[arg(long, default_value_t = 5)]
    seeds: usize,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().momentum)]
    momentum: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch: usize,
    /// Activation of the half-layer hidden units.
    #[arg(long, value_enum, default_value = "relu")]
    half_activation: HalfActivation,
    /// Scale/bias initialization for half layers.
    #[arg(long, value_enum, default_value = "calibrated")]
    init: InitMode,
    /// Output directory for report.csv and curve CSVs.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Directory containing <dataset>/ IDX files.
    #[arg(long, default_value = "data")]
    data_root: PathBuf,
}

#[derive(Args)]
struct TableArgs {
    /// Report CSV files to merge.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
}

#[derive(Args)]
struct CountsArgs {
    /// Model names to count.
    #[arg(required = true, value_delimiter = ',')]
    models: Vec<String>,
    /// Input feature count (pixels).
    #[arg(long, default_value_t = 784)]
    input_dim: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are successes, everything else is usage
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Table(args) => cmd_table(&args),
        Command::Counts(args) => cmd_counts(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError { message, code }) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}

struct CliError {
    message: String,
    code: u8,
}

fn usage_err(message: impl Into<String>) -> CliError {
    CliError { message: message.into(), code: 1 }
}

fn env_err(message: impl Into<String>) -> CliError {
    CliError { message: message.into(), code: 2 }
}

fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let mut specs = Vec::new();
    for name in &args.models {
        specs.push(ModelSpec::parse(name).map_err(|e| usage_err(e.to_string()))?);
    }
    if args.seeds == 0 {
        return Err(usage_err("--seeds must be at least 1"));
    }
    let config = TrainConfig {
        learning_rate: args.lr,
        momentum: args.momentum,
        batch_size: args.batch,
        epochs: args.epochs,
        seed: 0,
        half_activation: match args.half_activation {
            HalfActivation::Relu => Activation::Relu,
            HalfActivation::Sigmoid => Activation::Sigmoid,
        },
        calibrated_init: matches!(args.init, InitMode::Calibrated),
    };
    config.validate().map_err(|e| usage_err(e.to_string()))?;

    let name = args.dataset.as_str();
    let load = |split| {
        Dataset::load(&args.data_root, name, split).map_err(|e| {
            env_err(format!(
                "{e}\nfetch the dataset first: scripts/fetch_data.sh {name} {}",
                args.data_root.display()
            ))
        })
    };
    let train = load(Split::Train)?;
    let test = load(Split::Test)?;
    let dims = (train.images.shape()[1], train.images.shape()[2]);
    let train_x = train.flatten_for_dense().map_err(|e| env_err(e.to_string()))?;
    let test_x = test.flatten_for_dense().map_err(|e| env_err(e.to_string()))?;

    std::fs::create_dir_all(&args.out)
        .map_err(|e| env_err(format!("cannot create {}: {e}", args.out.display())))?;
    let mut reports = Vec::new();
    for spec in &specs {
        eprintln!("training {} on {name} ({} seeds, {} epochs)", spec.name(), args.seeds, config.epochs);
        let (report, _) = run_experiment(
            spec,
            &train_x,
            &train.labels,
            &test_x,
            &test.labels,
            Some(dims),
            args.seeds,
            &config,
        )
        .map_err(|e| env_err(e.to_string()))?;
        for run in &report.runs {
            let path = args.out.join(format!("curve-{}-seed{}.csv", report.model, run.seed));
            let f = File::create(&path)
                .map_err(|e| env_err(format!("cannot write {}: {e}", path.display())))?;
            write_curve_csv(BufWriter::new(f), run)
                .map_err(|e| env_err(format!("cannot write {}: {e}", path.display())))?;
        }
        eprintln!(
            "  {}: test {:.2}% +- {:.2}%",
            report.model,
            report.test_mean * 100.0,
            report.test_std * 100.0
        );
        reports.push(report);
    }
    let path = args.out.join("report.csv");
    let f = File::create(&path)
        .map_err(|e| env_err(format!("cannot write {}: {e}", path.display())))?;
    write_report_csv(BufWriter::new(f), &reports)
        .map_err(|e| env_err(format!("cannot write {}: {e}", path.display())))?;
    println!("{}", path.display());
    Ok(())
}

/// One parsed row of a report CSV, accuracies still in percent.
struct ReportRow {
    model: String,
    params: String,
    train_mean: f64,
    train_std: f64,
    test_mean: f64,
    test_std: f64,
}

fn parse_report_file(path: &Path) -> Result<Vec<ReportRow>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| env_err(format!("cannot read {}: {e}", path.display())))?;
    let bad = |line: usize, detail: &str| {
        usage_err(format!("{}:{}: {detail}", path.display(), line))
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == "model,params,train_mean,train_std,test_mean,test_std" => {}
        Some((i, h)) => return Err(bad(i + 1, &format!("unexpected header {h:?}"))),
        None => return Err(bad(1, "empty file")),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(bad(i + 1, &format!("expected 6 fields, got {}", fields.len())));
        }
        let num = |j: usize| -> Result<f64, CliError> {
            fields[j]
                .parse()
                .map_err(|_| bad(i + 1, &format!("field {} is not a number: {:?}", j + 1, fields[j])))
        };
        rows.push(ReportRow {
            model: fields[0].to_string(),
            params: fields[1].to_string(),
            train_mean: num(2)?,
            train_std: num(3)?,
            test_mean: num(4)?,
            test_std: num(5)?,
        });
    }
    Ok(rows)
}

fn cmd_table(args: &TableArgs) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for path in &args.reports {
        rows.extend(parse_report_file(path)?);
    }
    let mut out: Vec<[String; 4]> = vec![[
        "model".to_string(),
        "# parameters".to_string(),
        "train".to_string(),
        "test".to_string(),
    ]];
    for r in rows {
        out.push([
            r.model,
            r.params,
            format!("{:.2}, {:.2}", r.train_mean, r.train_std),
            format!("{:.2}, {:.2}", r.test_mean, r.test_std),
        ]);
    }
    let mut width = [0usize; 4];
    for row in &out {
        for (w, cell) in width.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    for row in &out {
        let line = format!(
            "{:<w0$}  {:>w1$}  {:>w2$}  {:>w3$}",
            row[0], row[1], row[2], row[3],
            w0 = width[0], w1 = width[1], w2 = width[2], w3 = width[3],
        );
        writeln!(w, "{}", line.trim_end()).map_err(|e| env_err(e.to_string()))?;
    }
    Ok(())
}

fn cmd_counts(args: &CountsArgs) -> Result<(), CliError> {
    let mut lines = Vec::new();
    for name in &args.models {
        let spec = ModelSpec::parse(name).map_err(|e| usage_err(e.to_string()))?;
        let count = spec
            .count_trainable(args.input_dim)
            .map_err(|e| usage_err(e.to_string()))?;
        lines.push((spec.name(), count));
    }
    let width = lines.iter().map(|(n, _)| n.len()).max().unwrap_or(0);
    for (name, count) in lines {
        println!("{name:<width$}  {count}");
    }
    Ok(())
}
