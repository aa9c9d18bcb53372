//! Experiment orchestration: the entry points behind each CLI subcommand.

mod config;
mod experiment;

pub use config::{mode_name, DatasetKind, ExperimentConfig, ExperimentSection, DATA_DIR_ENV, DEFAULT_M_VALUES};
pub use experiment::{
    derive_seed, load_raw, random_cloud, run_single, seed_dir, split_table, train_shallow_nets, transfer_cloud,
    ExperimentData, ExperimentReport, SeedResult, ShallowRun, CIFAR_CLASS_NAMES,
};

use std::fs;
use std::path::{Path, PathBuf};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::data::{stratified_split, write_cifar_records};
use crate::error::{Error, Result};
use crate::metrics::{report_rows, write_metrics_csv, MetricRow, PairedCurves};
use crate::model::ModelGraph;
use crate::train::LearningCurve;
use crate::zoo::Architecture;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Trains the `m` shallow networks for `seed`, writing `shallow_<j>.ckpt`
/// and `shallow_<j>.csv` into `out`.
pub fn cmd_train_shallow(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    create_dir(out)?;
    let data = ExperimentData::prepare(cfg, cfg.experiment.m)?;
    let runs = train_shallow_nets(cfg, &data, cfg.experiment.m, seed)?;
    let mut paths = Vec::with_capacity(runs.len());
    for (j, run) in runs.iter().enumerate() {
        let path = out.join(format!("shallow_{j}.ckpt"));
        save_checkpoint(&run.checkpoint, &path)?;
        run.curve.write_csv(&out.join(format!("shallow_{j}.csv")))?;
        paths.push(path);
    }
    Ok(paths)
}

/// Builds the initial cloud for `seed`: random when `shallow` is empty,
/// otherwise with the shallow first layers injected in the given order.
pub fn cmd_build_cloud(cfg: &ExperimentConfig, shallow: &[PathBuf], seed: u64, out: &Path) -> Result<ModelGraph> {
    cfg.validate()?;
    let model = if shallow.is_empty() {
        random_cloud(seed)?
    } else {
        cfg.check_m(shallow.len())?;
        let models = shallow
            .iter()
            .map(|p| {
                let ckpt = load_checkpoint(p)?;
                if !matches!(ckpt.arch, Architecture::ShallowCifar { .. }) {
                    return Err(Error::Structure(format!(
                        "{}: expected a shallow-cifar checkpoint, found {}",
                        p.display(),
                        ckpt.arch
                    )));
                }
                ckpt.to_model()
            })
            .collect::<Result<Vec<_>>>()?;
        transfer_cloud(seed, &models)?
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let cloud = cfg.cloud_train_config();
    let rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    save_checkpoint(&Checkpoint::initial(&model, cloud.learning_rate, cloud.momentum, &rng), out)?;
    Ok(model)
}

/// Runs the configured experiment; with an `m` sweep, one report per value
/// under `<output>/m<value>/`.
pub fn cmd_run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ExperimentReport>> {
    cfg.validate()?;
    let out = &cfg.experiment.output;
    if cfg.experiment.m_sweep.is_empty() {
        return Ok(vec![run_single(cfg, cfg.experiment.m, out)?]);
    }
    create_dir(out)?;
    cfg.save(&out.join("config.toml"))?;
    cfg.experiment.m_sweep.iter().map(|&m| run_single(cfg, m, &out.join(format!("m{m}")))).collect()
}

/// Metrics from `(htcnn.csv, ccnn.csv)` pairs, one pair per seed.
pub fn cmd_metrics(pairs: &[(PathBuf, PathBuf)], windows: &[(f64, f64)], out: Option<&Path>) -> Result<Vec<MetricRow>> {
    if pairs.is_empty() {
        return Err(Error::config("metrics need at least one curve pair"));
    }
    let paired = pairs
        .iter()
        .map(|(ht, cc)| PairedCurves::from_curves(&LearningCurve::read_csv(ht)?, &LearningCurve::read_csv(cc)?))
        .collect::<Result<Vec<_>>>()?;
    let rows = report_rows(&paired, windows)?;
    if let Some(path) = out {
        write_metrics_csv(&rows, path)?;
    }
    Ok(rows)
}

/// Recomputes `metrics.csv` of a finished report directory from its curves.
pub fn metrics_from_report(dir: &Path, out: Option<&Path>) -> Result<Vec<MetricRow>> {
    let cfg = ExperimentConfig::load(&dir.join("config.toml"))?;
    let pairs: Vec<_> = cfg
        .experiment
        .seeds
        .iter()
        .map(|&s| seed_dir(dir, s))
        .filter(|d| d.join("htcnn.csv").exists() && d.join("ccnn.csv").exists())
        .map(|d| (d.join("htcnn.csv"), d.join("ccnn.csv")))
        .collect();
    cmd_metrics(&pairs, &cfg.windows(), out)
}

/// Writes the `m + 1` stratified subsets of the training set as CIFAR-format
/// record files (`subset_<k>.bin`, pixels before mean subtraction) together
/// with `split_table.csv`.
pub fn cmd_split_data(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    cfg.validate()?;
    create_dir(out)?;
    let (train, _) = load_raw(cfg)?;
    let parts = stratified_split(&train, cfg.experiment.m + 1, cfg.experiment.split_seed)?;
    for (k, part) in parts.iter().enumerate() {
        write_cifar_records(part, &out.join(format!("subset_{}.bin", k + 1)))?;
    }
    let table = split_table(&parts);
    let path = out.join("split_table.csv");
    fs::write(&path, &table).map_err(|e| Error::io(&path, e))?;
    Ok(table)
}
