use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use htcnn_core::harness::{
    cmd_build_cloud, cmd_metrics, cmd_run_experiment, cmd_split_data, cmd_train_shallow, metrics_from_report,
    ExperimentConfig,
};
use htcnn_core::metrics::write_metrics;
use htcnn_core::{Error, Result};

/// Hierarchical transfer CNN experiments: train shallow networks, seed a
/// cloud network's first layer with their filters, compare against a random
/// initialisation.
#[derive(Debug, Parser)]
#[command(name = "htcnn", version)]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    /// Output directory, overriding the configured one.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the m shallow networks of one seed.
    TrainShallow,
    /// Write an initial cloud checkpoint, random or seeded from shallow checkpoints.
    BuildCloud {
        /// Shallow checkpoints in slot order; none builds the random baseline.
        #[arg(long = "shallow")]
        shallow: Vec<PathBuf>,
    },
    /// Train baseline and transfer clouds for every seed and write the report.
    RunExperiment,
    /// Recompute metrics from paired learning-curve CSVs.
    Metrics {
        /// Report directory written by run-experiment.
        #[arg(long, conflicts_with_all = ["ht", "cc"])]
        report: Option<PathBuf>,
        /// Transfer-network curve, one per seed.
        #[arg(long)]
        ht: Vec<PathBuf>,
        /// Baseline curve, paired with --ht in order.
        #[arg(long)]
        cc: Vec<PathBuf>,
        /// Epoch window `start:end` for windowed AAG; repeatable.
        #[arg(long = "window", value_parser = parse_window)]
        windows: Vec<(f64, f64)>,
    },
    /// Write the stratified training subsets and their class-count table.
    SplitData,
}

fn parse_window(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("window {s:?} is not start:end"))?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("window {s:?}: {e}"));
    Ok((parse(a)?, parse(b)?))
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli.config.as_deref().ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed_override {
        cfg.experiment.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        cfg.experiment.output = out.clone();
    }
    Ok(cfg)
}

fn first_seed(cfg: &ExperimentConfig) -> Result<u64> {
    cfg.experiment.seeds.first().copied().ok_or_else(|| Error::Config("no seeds configured".into()))
}

fn print_rows(rows: &[htcnn_core::metrics::MetricRow]) -> Result<()> {
    write_metrics(rows, std::io::stdout().lock()).map_err(|e| Error::Data(format!("writing metrics: {e}")))
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::TrainShallow => {
            let cfg = load_config(cli)?;
            let seed = first_seed(&cfg)?;
            let out = cli.out.clone().unwrap_or_else(|| cfg.experiment.output.join(format!("shallow_seed_{seed}")));
            for path in cmd_train_shallow(&cfg, seed, &out)? {
                println!("{}", path.display());
            }
        }
        Command::BuildCloud { shallow } => {
            let cfg = load_config(cli)?;
            let seed = first_seed(&cfg)?;
            let name = if shallow.is_empty() { "ccnn_init.ckpt" } else { "htcnn_init.ckpt" };
            let path = cfg.experiment.output.join(name);
            cmd_build_cloud(&cfg, shallow, seed, &path)?;
            println!("{}", path.display());
        }
        Command::RunExperiment => {
            let cfg = load_config(cli)?;
            for report in cmd_run_experiment(&cfg)? {
                for (seed, e) in &report.failures {
                    eprintln!("seed {seed} failed: {e}");
                }
                println!("{}", report.dir.display());
            }
        }
        Command::Metrics { report, ht, cc, windows } => {
            let out = cli.out.as_deref().map(|d| d.join("metrics.csv"));
            if let Some(dir) = out.as_deref().and_then(Path::parent) {
                std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?;
            }
            let rows = match report {
                Some(dir) => metrics_from_report(dir, out.as_deref())?,
                None => {
                    if ht.len() != cc.len() {
                        return Err(Error::Config(format!("{} --ht curves but {} --cc curves", ht.len(), cc.len())));
                    }
                    let pairs: Vec<_> = ht.iter().cloned().zip(cc.iter().cloned()).collect();
                    cmd_metrics(&pairs, windows, out.as_deref())?
                }
            };
            print_rows(&rows)?;
        }
        Command::SplitData => {
            let cfg = load_config(cli)?;
            let out = cli.out.clone().unwrap_or_else(|| cfg.experiment.output.join("split"));
            print!("{}", cmd_split_data(&cfg, &out)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
