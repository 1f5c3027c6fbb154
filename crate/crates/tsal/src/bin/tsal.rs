use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use tsal::config::{ConfigError, Experiment, ExperimentConfig};
use tsal::exec::Rayon;
use tsal::harness::{self, HarnessError};
use tsal::{convert, io, report};
use tsal_core::synth::{default_profiles, series_catalog};

#[derive(Parser)]
#[command(name = "tsal", version, about = "Cross-domain time-series anomaly detection with transfer and active learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a catalog, check every series and print per-dataset statistics as JSON.
    ValidateData {
        #[arg(long)]
        data_root: PathBuf,
    },
    /// Extract built-in features and write one `<dataset>.csv` per dataset.
    Features {
        #[arg(long)]
        data_root: PathBuf,
        #[arg(long, default_value_t = tsal_core::features::DEFAULT_WINDOW)]
        window: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Cluster count x budget sweep.
    Exp1(RunArgs),
    /// Single-cluster budget sweep with per-point improvement rates.
    Exp2(RunArgs),
    /// Percentage budgets with the within-domain comparator.
    Exp3(RunArgs),
    /// Within-domain 5-fold baseline only.
    Baseline(RunArgs),
    /// Rebuild summary and plot files from an existing results directory.
    Report {
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic catalog of seasonal series with injected anomalies.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        datasets: usize,
        #[arg(long, default_value_t = 4)]
        series: usize,
        #[arg(long, default_value_t = 400)]
        length: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Convert public benchmark layouts into the catalog format.
    #[command(subcommand)]
    Convert(ConvertCommand),
}

#[derive(Subcommand)]
enum ConvertCommand {
    /// NAB: `<nab-root>/data/<category>/*.csv` plus a labels JSON file.
    Nab {
        #[arg(long)]
        nab_root: PathBuf,
        #[arg(long)]
        category: String,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        dataset_id: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Yahoo S5: one benchmark directory (A1..A4).
    Yahoo {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        dataset_id: String,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Every flag overrides the same key of the config file.
#[derive(Args, Default)]
struct RunArgs {
    /// Flat `key = value` file or JSON object.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data_root: Option<String>,
    /// Comma-separated target dataset ids.
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    exclude_targets: Option<String>,
    #[arg(long)]
    k_grid: Option<String>,
    #[arg(long)]
    budgets: Option<String>,
    #[arg(long)]
    pct_budgets: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    rounds: Option<String>,
    #[arg(long)]
    folds: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    window: Option<String>,
    #[arg(long)]
    features_from: Option<String>,
    #[arg(long)]
    coral_lambda: Option<String>,
    #[arg(long)]
    trees: Option<String>,
    #[arg(long)]
    threshold: Option<String>,
    /// `id:fraction` items, e.g. `iops:0.05`.
    #[arg(long)]
    source_sampling: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    jobs: Option<String>,
    /// `global` or `per_cluster`.
    #[arg(long)]
    budget_mode: Option<String>,
}

impl RunArgs {
    fn resolve(&self, experiment: Experiment) -> Result<ExperimentConfig, ConfigError> {
        let mut cfg = ExperimentConfig::for_experiment(experiment);
        if let Some(path) = &self.config {
            cfg.merge_file(path)?;
            cfg.experiment = experiment;
        }
        let overrides = [
            ("data_root", &self.data_root),
            ("targets", &self.target),
            ("exclude_targets", &self.exclude_targets),
            ("k_grid", &self.k_grid),
            ("budgets", &self.budgets),
            ("pct_budgets", &self.pct_budgets),
            ("alpha", &self.alpha),
            ("rounds", &self.rounds),
            ("folds", &self.folds),
            ("seed", &self.seed),
            ("window", &self.window),
            ("features_from", &self.features_from),
            ("coral_lambda", &self.coral_lambda),
            ("trees", &self.trees),
            ("threshold", &self.threshold),
            ("source_sampling", &self.source_sampling),
            ("out", &self.out),
            ("jobs", &self.jobs),
            ("budget_mode", &self.budget_mode),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn pool(jobs: usize) -> Result<Rayon, HarnessError> {
    Rayon::new(jobs).map_err(|e| HarnessError::Config(ConfigError::Invalid(format!("thread pool: {e}"))))
}

fn run_experiment(args: &RunArgs, experiment: Experiment) -> Result<(), HarnessError> {
    let cfg = args.resolve(experiment)?;
    let exec = pool(cfg.jobs)?;
    let datasets = harness::load_datasets(&cfg, &exec)?;
    let table = harness::run(&cfg, &datasets, &exec)?;
    let written = report::emit_report(&table, &cfg, &datasets, &cfg.out)?;
    for note in &table.notes {
        eprintln!("note: {note}");
    }
    info!("wrote {} files to {}", written.len(), cfg.out.display());
    Ok(())
}

fn rebuild_report(from: &PathBuf, out: Option<&PathBuf>) -> Result<(), HarnessError> {
    let mut cfg = ExperimentConfig::default();
    cfg.merge_file(&from.join("run_config.json"))?;
    let resolution = from.join("budget_resolution.csv");
    let rows = report::read_results(&from.join("results.csv"), resolution.exists().then_some(resolution.as_path()))?;
    if rows.is_empty() {
        return Err(HarnessError::EmptyResults);
    }
    let agg = tsal_core::evaluate::aggregate_folds(&rows).expect("non-empty");
    let mut files = report::plot_files(cfg.experiment, &agg);
    if cfg.experiment == Experiment::Exp2 {
        files.push(("rates.csv".into(), report::rates_csv(&agg)));
    }
    report::write_files(out.unwrap_or(from), &files)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::ValidateData { data_root } => {
            let catalog = io::load_catalog(&data_root, None)?;
            println!("{}", io::catalog_summary_json(&catalog));
        }
        Command::Features { data_root, window, out, jobs } => {
            let exec = pool(jobs)?;
            let catalog = io::load_catalog(&data_root, None)?;
            for (id, fm) in harness::extract_catalog(&catalog, window, &exec)? {
                io::write_features(&fm, &out.join(format!("{id}.csv")))?;
                info!("{id}: {} rows", fm.len());
            }
        }
        Command::Exp1(args) => run_experiment(&args, Experiment::Exp1)?,
        Command::Exp2(args) => run_experiment(&args, Experiment::Exp2)?,
        Command::Exp3(args) => run_experiment(&args, Experiment::Exp3)?,
        Command::Baseline(args) => run_experiment(&args, Experiment::Baseline)?,
        Command::Report { from, out } => rebuild_report(&from, out.as_ref())?,
        Command::Synth { out, datasets, series, length, seed } => {
            let mut profiles = default_profiles(datasets);
            for p in &mut profiles {
                p.n_series = series;
                p.length = length;
            }
            io::write_catalog(&series_catalog(&profiles, seed), &out)?;
        }
        Command::Convert(ConvertCommand::Nab { nab_root, category, labels, dataset_id, out }) => {
            let n = convert::convert_nab(&nab_root, &category, &labels, &dataset_id, &out)?;
            info!("converted {n} series");
        }
        Command::Convert(ConvertCommand::Yahoo { input, dataset_id, out }) => {
            let n = convert::convert_yahoo(&input, &dataset_id, &out)?;
            info!("converted {n} series");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
