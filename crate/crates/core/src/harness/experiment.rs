use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{DatasetKind, ExperimentConfig};
use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::data::{
    load_cifar10, preprocess_mean_subtract, stratified_split, stratified_subset, synthetic_blobs, Dataset, SplitMode,
};
use crate::error::{Error, Result};
use crate::metrics::{report_rows, write_metrics_csv, MetricRow, PairedCurves};
use crate::model::ModelGraph;
use crate::train::{train, LearningCurve, TrainConfig};
use crate::transfer::{extract_first_layer, inject, make_partition_plan, FilterBank};
use crate::zoo::{build_cloud_cifar, build_shallow_cifar, init_random, CLOUD_CONV_FILTERS};

pub const CIFAR_CLASS_NAMES: [&str; 10] = [
    "airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck",
];

const ROLE_SHALLOW_INIT: u64 = 1;
const ROLE_SHALLOW_TRAIN: u64 = 2;
const ROLE_CLOUD_INIT: u64 = 3;
const ROLE_CLOUD_TRAIN: u64 = 4;

/// SplitMix64 finaliser over `(base, role, index)`: independent seeds for
/// every network and phase of one experiment seed.
pub fn derive_seed(base: u64, role: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(role.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(index.wrapping_mul(0x94D0_49BB_1331_11EB))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Training and test images before mean subtraction.
pub fn load_raw(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let e = &cfg.experiment;
    let (mut train_set, mut test_set) = match e.dataset {
        DatasetKind::Synthetic => synthetic_blobs(&cfg.synthetic)?,
        DatasetKind::Cifar10 => load_cifar10(&cfg.data_dir()?)?,
    };
    if e.train_subset > 0 && e.train_subset < train_set.len() {
        train_set = stratified_subset(&train_set, e.train_subset, e.split_seed)?;
    }
    if e.test_subset > 0 && e.test_subset < test_set.len() {
        test_set = stratified_subset(&test_set, e.test_subset, e.split_seed)?;
    }
    Ok((train_set, test_set))
}

/// Mean-subtracted data plus the per-network training assignment of the
/// experiment's split mode.
#[derive(Debug)]
pub struct ExperimentData {
    pub train: Dataset,
    pub test: Dataset,
    /// Data-locality subsets: index 0 trains the cloud, `j + 1` shallow `j`.
    pub subsets: Option<Vec<Dataset>>,
}

impl ExperimentData {
    pub fn prepare(cfg: &ExperimentConfig, m: usize) -> Result<Self> {
        let (train_raw, test_raw) = load_raw(cfg)?;
        let (train_set, test_set, _) = preprocess_mean_subtract(train_raw, test_raw)?;
        let subsets = match cfg.experiment.mode {
            SplitMode::IdenticalData => None,
            SplitMode::DataLocality => Some(stratified_split(&train_set, m + 1, cfg.experiment.split_seed)?),
        };
        Ok(Self { train: train_set, test: test_set, subsets })
    }

    pub fn cloud(&self) -> &Dataset {
        self.subsets.as_ref().map_or(&self.train, |s| &s[0])
    }

    pub fn shallow(&self, j: usize) -> &Dataset {
        self.subsets.as_ref().map_or(&self.train, |s| &s[j + 1])
    }
}

pub struct ShallowRun {
    pub model: ModelGraph,
    pub curve: LearningCurve,
    pub checkpoint: Checkpoint,
}

fn shallow_job(cfg: &ExperimentConfig, data: &ExperimentData, m: usize, seed: u64, j: usize) -> Result<ShallowRun> {
    let filters = CLOUD_CONV_FILTERS[0] / m;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, ROLE_SHALLOW_INIT, j as u64));
    let model = init_random(build_shallow_cifar(filters)?, &mut rng);
    let tc = TrainConfig { seed: derive_seed(seed, ROLE_SHALLOW_TRAIN, j as u64), ..cfg.shallow.clone() };
    let out = train(model, data.shallow(j), &data.test, &tc)?;
    Ok(ShallowRun { model: out.model, curve: out.curve, checkpoint: out.checkpoint })
}

/// Trains the `m` shallow networks of one seed; optionally on parallel threads.
pub fn train_shallow_nets(cfg: &ExperimentConfig, data: &ExperimentData, m: usize, seed: u64) -> Result<Vec<ShallowRun>> {
    cfg.check_m(m)?;
    if cfg.experiment.parallel_shallow {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..m).map(|j| s.spawn(move || shallow_job(cfg, data, m, seed, j))).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::Numeric("shallow training thread panicked".into()))))
                .collect()
        })
    } else {
        (0..m).map(|j| shallow_job(cfg, data, m, seed, j)).collect()
    }
}

/// The randomly initialised cloud of a seed; the baseline and the transfer
/// network share it everywhere except in the injected first layer.
pub fn random_cloud(seed: u64) -> Result<ModelGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, ROLE_CLOUD_INIT, 0));
    Ok(init_random(build_cloud_cifar()?, &mut rng))
}

/// Random cloud with the first layers of `shallow` injected side by side.
pub fn transfer_cloud(seed: u64, shallow: &[ModelGraph]) -> Result<ModelGraph> {
    let plan = make_partition_plan(CLOUD_CONV_FILTERS[0], shallow.len())?;
    let banks: Vec<FilterBank> = shallow
        .iter()
        .enumerate()
        .map(|(j, s)| extract_first_layer(s, format!("shallow{j}")))
        .collect::<Result<_>>()?;
    inject(&random_cloud(seed)?, &banks, &plan)
}

pub fn cloud_checkpoint(model: &ModelGraph, cfg: &TrainConfig, seed: u64) -> Checkpoint {
    let rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, ROLE_CLOUD_INIT, 0));
    Checkpoint::initial(model, cfg.learning_rate, cfg.momentum, &rng)
}

#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub ht: LearningCurve,
    pub cc: LearningCurve,
    pub shallow_seconds: f64,
    pub ht_seconds: f64,
    pub cc_seconds: f64,
}

fn run_seed(cfg: &ExperimentConfig, data: &ExperimentData, m: usize, seed: u64, dir: &Path) -> Result<SeedResult> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let started = Instant::now();
    let shallow = train_shallow_nets(cfg, data, m, seed)?;
    let shallow_seconds = started.elapsed().as_secs_f64();
    for (j, run) in shallow.iter().enumerate() {
        save_checkpoint(&run.checkpoint, &dir.join(format!("shallow_{j}.ckpt")))?;
        run.curve.write_csv(&dir.join(format!("shallow_{j}.csv")))?;
    }
    let models: Vec<ModelGraph> = shallow.into_iter().map(|r| r.model).collect();

    let cloud_cfg = TrainConfig { seed: derive_seed(seed, ROLE_CLOUD_TRAIN, 0), ..cfg.cloud_train_config() };
    let cc_init = random_cloud(seed)?;
    let ht_init = transfer_cloud(seed, &models)?;
    save_checkpoint(&cloud_checkpoint(&cc_init, &cloud_cfg, seed), &dir.join("ccnn_init.ckpt"))?;
    save_checkpoint(&cloud_checkpoint(&ht_init, &cloud_cfg, seed), &dir.join("htcnn_init.ckpt"))?;

    let mut curves = Vec::with_capacity(2);
    let mut seconds = Vec::with_capacity(2);
    for (name, init) in [("ccnn", cc_init), ("htcnn", ht_init)] {
        let t = Instant::now();
        let out = train(init, data.cloud(), &data.test, &cloud_cfg)?;
        seconds.push(t.elapsed().as_secs_f64());
        save_checkpoint(&out.checkpoint, &dir.join(format!("{name}_final.ckpt")))?;
        out.curve.write_csv(&dir.join(format!("{name}.csv")))?;
        curves.push(out.curve);
    }
    let ht = curves.pop().expect("two curves");
    let cc = curves.pop().expect("two curves");
    Ok(SeedResult { seed, ht, cc, shallow_seconds, ht_seconds: seconds[1], cc_seconds: seconds[0] })
}

pub fn seed_dir(report: &Path, seed: u64) -> PathBuf {
    report.join(format!("seed_{seed}"))
}

/// Outcome of one experiment directory.
#[derive(Debug)]
pub struct ExperimentReport {
    pub dir: PathBuf,
    pub seeds: Vec<SeedResult>,
    pub failures: Vec<(u64, Error)>,
    pub metrics: Vec<MetricRow>,
}

impl ExperimentReport {
    pub fn paired(&self) -> Result<Vec<PairedCurves>> {
        self.seeds.iter().map(|s| PairedCurves::from_curves(&s.ht, &s.cc)).collect()
    }
}

/// Runs every seed of a single-`m` experiment into `dir`.
pub fn run_single(cfg: &ExperimentConfig, m: usize, dir: &Path) -> Result<ExperimentReport> {
    cfg.check_m(m)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut snapshot = cfg.clone();
    snapshot.experiment.m = m;
    snapshot.experiment.m_sweep.clear();
    snapshot.experiment.output = dir.to_path_buf();
    snapshot.save(&dir.join("config.toml"))?;
    ExperimentConfig::paper_scale(cfg.experiment.mode, m, cfg.experiment.dropout)
        .save(&dir.join("paper_scale_config.toml"))?;

    let data = ExperimentData::prepare(cfg, m)?;
    let mut seeds = Vec::new();
    let mut failures = Vec::new();
    for &seed in &cfg.experiment.seeds {
        match run_seed(cfg, &data, m, seed, &seed_dir(dir, seed)) {
            Ok(r) => seeds.push(r),
            Err(e) => failures.push((seed, e)),
        }
    }
    write_failures(&failures, &dir.join("failures.csv"))?;
    if seeds.is_empty() {
        let (_, first) = failures.into_iter().next().expect("at least one seed configured");
        return Err(first);
    }
    let paired = seeds
        .iter()
        .map(|s| PairedCurves::from_curves(&s.ht, &s.cc))
        .collect::<Result<Vec<_>>>()?;
    let metrics = report_rows(&paired, &cfg.windows())?;
    write_metrics_csv(&metrics, &dir.join("metrics.csv"))?;
    write_plot_data(&seeds, &dir.join("plot.dat"))?;
    write_timing(&seeds, &dir.join("timing.csv"))?;
    Ok(ExperimentReport { dir: dir.to_path_buf(), seeds, failures, metrics })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_failures(failures: &[(u64, Error)], path: &Path) -> Result<()> {
    if failures.is_empty() {
        if path.exists() {
            fs::remove_file(path).map_err(|e| Error::io(path, e))?;
        }
        return Ok(());
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let row_err = |e: csv::Error| Error::data(format!("failures.csv: {e}"));
    w.write_record(["seed", "exit_code", "error"]).map_err(row_err)?;
    for (seed, e) in failures {
        w.write_record([seed.to_string(), e.exit_code().to_string(), e.to_string()]).map_err(row_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::data(format!("failures.csv: {e}")))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Gnuplot-style blocks, one per seed, separated by two blank lines:
/// `epoch iteration htcnn_accuracy ccnn_accuracy`.
fn write_plot_data(seeds: &[SeedResult], path: &Path) -> Result<()> {
    let mut out = String::new();
    for (i, s) in seeds.iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        let _ = writeln!(out, "# seed {}", s.seed);
        let _ = writeln!(out, "# epoch iteration htcnn_accuracy ccnn_accuracy");
        for (h, c) in s.ht.points.iter().zip(&s.cc.points) {
            let _ = writeln!(out, "{} {} {} {}", h.epoch, h.iteration, h.test_accuracy, c.test_accuracy);
        }
    }
    write_text(path, &out)
}

/// Wall-clock seconds per phase. Shallow training is reported apart from
/// the cloud runs so either accounting of the transfer cost can be read off.
fn write_timing(seeds: &[SeedResult], path: &Path) -> Result<()> {
    let mut out = String::from("seed,phase,wall_clock_s\n");
    for s in seeds {
        let _ = writeln!(out, "{},shallow,{}", s.seed, s.shallow_seconds);
        let _ = writeln!(out, "{},ccnn,{}", s.seed, s.cc_seconds);
        let _ = writeln!(out, "{},htcnn,{}", s.seed, s.ht_seconds);
    }
    write_text(path, &out)
}

/// Per-class counts of each subset, one row per subset.
pub fn split_table(subsets: &[Dataset]) -> String {
    let mut out = String::from("subset,size");
    for name in CIFAR_CLASS_NAMES {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (i, s) in subsets.iter().enumerate() {
        let _ = write!(out, "{},{}", i + 1, s.len());
        for c in s.class_counts() {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
    }
    out
}
