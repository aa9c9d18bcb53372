use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{SplitMode, SyntheticSpec};
use crate::error::{Error, Result};
use crate::train::TrainConfig;
use crate::zoo::CLOUD_CONV_FILTERS;

/// Environment variable naming the CIFAR-10 binary directory.
pub const DATA_DIR_ENV: &str = "HTCNN_DATA_DIR";
pub const DEFAULT_M_VALUES: [usize; 5] = [1, 2, 4, 8, 16];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Cifar10,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    pub mode: SplitMode,
    /// Number of shallow networks feeding the cloud's first layer.
    pub m: usize,
    /// When non-empty, run one experiment per value into `m<value>/`.
    pub m_sweep: Vec<usize>,
    /// Accept any `m` dividing the cloud's first-layer width, not just 1, 2, 4, 8, 16.
    pub allow_any_m: bool,
    pub dropout: bool,
    pub dropout_conv_keep: f32,
    pub dropout_fc_keep: f32,
    pub dataset: DatasetKind,
    /// CIFAR-10 directory; falls back to `$HTCNN_DATA_DIR`.
    pub data_dir: Option<PathBuf>,
    /// Stratified training subset size, 0 for the whole set.
    pub train_subset: usize,
    pub test_subset: usize,
    pub split_seed: u64,
    pub seeds: Vec<u64>,
    /// Epoch windows `[start, end]` for windowed AAG rows.
    pub windows: Vec<[f64; 2]>,
    /// Train the shallow networks of one seed on parallel threads.
    pub parallel_shallow: bool,
    pub output: PathBuf,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            name: "htcnn".into(),
            mode: SplitMode::IdenticalData,
            m: 4,
            m_sweep: Vec::new(),
            allow_any_m: false,
            dropout: false,
            dropout_conv_keep: 0.8,
            dropout_fc_keep: 0.5,
            dataset: DatasetKind::Synthetic,
            data_dir: None,
            train_subset: 0,
            test_subset: 0,
            split_seed: 0,
            seeds: vec![1],
            windows: Vec::new(),
            parallel_shallow: false,
            output: PathBuf::from("runs/htcnn"),
        }
    }
}

/// Everything needed to reproduce one experiment; stored in TOML
/// (`key = value` lines under `[section]` headers).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub synthetic: SyntheticSpec,
    pub shallow: TrainConfig,
    pub cloud: TrainConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        let ms: Vec<usize> = if e.m_sweep.is_empty() { vec![e.m] } else { e.m_sweep.clone() };
        for m in ms {
            self.check_m(m)?;
        }
        if e.seeds.is_empty() {
            return Err(Error::config("experiment.seeds must list at least one seed"));
        }
        for p in [e.dropout_conv_keep, e.dropout_fc_keep] {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::config(format!("dropout keep probability {p} outside (0, 1]")));
            }
        }
        for w in &e.windows {
            if w[0] > w[1] {
                return Err(Error::config(format!("window [{}, {}] is reversed", w[0], w[1])));
            }
        }
        self.shallow.validate().map_err(|e| Error::config(format!("[shallow] {e}")))?;
        self.cloud.validate().map_err(|e| Error::config(format!("[cloud] {e}")))?;
        Ok(())
    }

    pub fn check_m(&self, m: usize) -> Result<()> {
        let width = CLOUD_CONV_FILTERS[0];
        if m == 0 || !width.is_multiple_of(m) {
            return Err(Error::config(format!("m = {m} does not divide the {width} first-layer filters")));
        }
        if !self.experiment.allow_any_m && !DEFAULT_M_VALUES.contains(&m) {
            return Err(Error::config(format!(
                "m = {m} is not one of {DEFAULT_M_VALUES:?}; set allow_any_m = true to override"
            )));
        }
        Ok(())
    }

    /// Cloud training settings with the experiment's dropout switch applied.
    pub fn cloud_train_config(&self) -> TrainConfig {
        let (conv, fc) = if self.experiment.dropout {
            (self.experiment.dropout_conv_keep, self.experiment.dropout_fc_keep)
        } else {
            (1.0, 1.0)
        };
        TrainConfig { dropout_conv_keep: conv, dropout_fc_keep: fc, ..self.cloud.clone() }
    }

    pub fn windows(&self) -> Vec<(f64, f64)> {
        self.experiment.windows.iter().map(|w| (w[0], w[1])).collect()
    }

    pub fn data_dir(&self) -> Result<PathBuf> {
        if let Some(dir) = &self.experiment.data_dir {
            return Ok(dir.clone());
        }
        std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).ok_or_else(|| {
            Error::config(format!("CIFAR-10 needs experiment.data_dir or ${DATA_DIR_ENV}"))
        })
    }

    /// A CIFAR-10 replica of the full-scale study: 10,000-iteration shallow
    /// training, 200 epochs of 1,000 iterations for the cloud, nine seeds.
    pub fn paper_scale(mode: SplitMode, m: usize, dropout: bool) -> Self {
        Self {
            experiment: ExperimentSection {
                name: format!("cifar10-{}-m{m}", mode_name(mode)),
                mode,
                m,
                dropout,
                dataset: DatasetKind::Cifar10,
                seeds: (1..=9).collect(),
                windows: vec![[1.0, 60.0], [60.0, 140.0], [140.0, 200.0]],
                output: PathBuf::from(format!("runs/cifar10-{}-m{m}", mode_name(mode))),
                ..Default::default()
            },
            synthetic: SyntheticSpec::default(),
            shallow: TrainConfig::default(),
            cloud: TrainConfig { max_iterations: 200_000, ..Default::default() },
        }
    }
}

pub fn mode_name(mode: SplitMode) -> &'static str {
    match mode {
        SplitMode::IdenticalData => "identical-data",
        SplitMode::DataLocality => "data-locality",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            [experiment]
            mode = "data-locality"
            m = 8
            seeds = [3, 4]
            windows = [[1.0, 3.0]]

            [cloud]
            batch_size = 16
            max_iterations = 50
            eval_every = 10
            "#,
        )
        .unwrap();
        assert_eq!(cfg.experiment.mode, SplitMode::DataLocality);
        assert_eq!(cfg.experiment.m, 8);
        assert_eq!(cfg.cloud.batch_size, 16);
        assert_eq!(cfg.shallow.learning_rate, 0.01);
        assert_eq!(cfg.windows(), vec![(1.0, 3.0)]);
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_m_and_unknown_keys() {
        assert!(ExperimentConfig::from_toml("[experiment]\nm = 3\n").is_err());
        assert!(ExperimentConfig::from_toml("[experiment]\nm = 32\n").is_err());
        assert!(ExperimentConfig::from_toml("[experiment]\nm = 32\nallow_any_m = true\n").is_ok());
        assert!(ExperimentConfig::from_toml("[experiment]\nm = 5\nallow_any_m = true\n").is_err());
        assert!(ExperimentConfig::from_toml("[experiment]\nbogus = 1\n").is_err());
        assert!(ExperimentConfig::from_toml("[cloud]\neval_every = 0\n").is_err());
    }

    #[test]
    fn dropout_switch_controls_cloud_keep() {
        let mut cfg = ExperimentConfig::default();
        assert_eq!(cfg.cloud_train_config().dropout_conv_keep, 1.0);
        cfg.experiment.dropout = true;
        let c = cfg.cloud_train_config();
        assert_eq!((c.dropout_conv_keep, c.dropout_fc_keep), (0.8, 0.5));
    }

    #[test]
    fn paper_scale_replica() {
        let cfg = ExperimentConfig::paper_scale(SplitMode::IdenticalData, 4, false);
        cfg.validate().unwrap();
        assert_eq!(cfg.cloud.max_iterations / cfg.cloud.iterations_per_epoch, 200);
        assert_eq!((cfg.shallow.batch_size, cfg.shallow.max_iterations), (100, 10_000));
        assert_eq!(cfg.experiment.seeds.len(), 9);
    }
}
