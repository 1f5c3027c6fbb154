//! Experiment configuration: defaults, flat `key = value` files, JSON files,
//! and per-key overrides from the command line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tsal_core::activelearn::BudgetMode;
use tsal_core::forest::ForestParams;
use tsal_core::pipeline::PipelineConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    #[default]
    Exp1,
    Exp2,
    Exp3,
    Baseline,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Exp1 => "exp1",
            Experiment::Exp2 => "exp2",
            Experiment::Exp3 => "exp3",
            Experiment::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub data_root: Option<PathBuf>,
    /// Directory of `<dataset_id>.csv` feature files used instead of `data_root`.
    pub features_from: Option<PathBuf>,
    /// Target datasets; empty means every dataset found.
    pub targets: Vec<String>,
    /// Datasets never used as a target (matched case-insensitively).
    pub exclude_targets: Vec<String>,
    pub k_grid: Vec<usize>,
    pub budgets: Vec<usize>,
    pub pct_budgets: Vec<f64>,
    pub alpha: usize,
    pub rounds: usize,
    pub folds: usize,
    pub seed: u64,
    pub window: usize,
    pub coral_lambda: f64,
    pub trees: usize,
    pub threshold: f64,
    pub budget_mode: BudgetMode,
    /// Fraction kept when a dataset is on the source side (case-insensitive ids).
    pub source_sampling: BTreeMap<String, f64>,
    pub out: PathBuf,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::Exp1,
            data_root: None,
            features_from: None,
            targets: Vec::new(),
            exclude_targets: Vec::new(),
            k_grid: vec![1, 2, 3, 5, 10],
            budgets: vec![0, 10, 20, 40, 80, 160, 320, 640, 1280],
            pct_budgets: vec![20.0, 40.0, 80.0, 100.0],
            alpha: 10,
            rounds: 5,
            folds: 5,
            seed: 42,
            window: tsal_core::features::DEFAULT_WINDOW,
            coral_lambda: tsal_core::adapt::DEFAULT_LAMBDA,
            trees: tsal_core::forest::DEFAULT_TREES,
            threshold: tsal_core::forest::DEFAULT_THRESHOLD,
            budget_mode: BudgetMode::Global,
            source_sampling: BTreeMap::from([("iops".to_string(), 0.05)]),
            out: PathBuf::from("results"),
            jobs: 0,
        }
    }
}

fn bad(key: &str, value: &str, reason: impl ToString) -> ConfigError {
    ConfigError::BadValue { key: key.into(), value: value.into(), reason: reason.to_string() }
}

fn parse_one<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e: T::Err| bad(key, value, e))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse_one(key, s)).collect()
}

fn parse_strings(value: &str) -> Vec<String> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

impl ExperimentConfig {
    /// Defaults for one experiment. Experiment 2 pins `k = 1`; experiment 3
    /// leaves IOPS out of the targets.
    pub fn for_experiment(experiment: Experiment) -> Self {
        let mut c = Self { experiment, ..Self::default() };
        match experiment {
            Experiment::Exp2 => c.k_grid = vec![1],
            Experiment::Exp3 => {
                c.k_grid = vec![1];
                c.exclude_targets = vec!["iops".into()];
            }
            Experiment::Exp1 | Experiment::Baseline => {}
        }
        c
    }

    /// Applies one `key = value` setting. Keys use the CLI flag spelling with
    /// either dashes or underscores.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key_norm = key.trim().trim_start_matches("--").replace('-', "_");
        let v = value.trim();
        match key_norm.as_str() {
            "experiment" => {
                self.experiment = serde_json::from_value(serde_json::Value::String(v.to_lowercase()))
                    .map_err(|e| bad(key, v, e))?
            }
            "data_root" => self.data_root = Some(PathBuf::from(v)),
            "features_from" => self.features_from = Some(PathBuf::from(v)),
            "target" | "targets" => self.targets = parse_strings(v),
            "exclude_targets" => self.exclude_targets = parse_strings(v),
            "k_grid" => self.k_grid = parse_list(key, v)?,
            "budgets" => self.budgets = parse_list(key, v)?,
            "pct_budgets" => self.pct_budgets = parse_list(key, v)?,
            "alpha" => self.alpha = parse_one(key, v)?,
            "rounds" => self.rounds = parse_one(key, v)?,
            "folds" => self.folds = parse_one(key, v)?,
            "seed" => self.seed = parse_one(key, v)?,
            "window" => self.window = parse_one(key, v)?,
            "coral_lambda" => self.coral_lambda = parse_one(key, v)?,
            "trees" => self.trees = parse_one(key, v)?,
            "threshold" => self.threshold = parse_one(key, v)?,
            "budget_mode" => {
                self.budget_mode = match v.to_lowercase().replace('-', "_").as_str() {
                    "global" => BudgetMode::Global,
                    "per_cluster" => BudgetMode::PerCluster,
                    _ => return Err(bad(key, v, "expected `global` or `per_cluster`")),
                }
            }
            "source_sampling" => {
                let mut map = BTreeMap::new();
                for item in parse_strings(v) {
                    let (id, frac) = item.split_once(':').ok_or_else(|| bad(key, v, "expected `id:fraction` items"))?;
                    map.insert(id.trim().to_lowercase(), parse_one::<f64>(key, frac)?);
                }
                self.source_sampling = map;
            }
            "out" => self.out = PathBuf::from(v),
            "jobs" => self.jobs = parse_one(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Reads a config file: JSON when the extension is `.json` or the content
    /// starts with `{`, else flat `key = value` lines (`#` starts a comment).
    /// Keys absent from the file keep the values already in `self`.
    pub fn merge_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let is_json = path.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with('{');
        if is_json {
            let mut current = serde_json::to_value(&*self).expect("config serializes");
            let patch: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| ConfigError::Parse { path: path.into(), message: e.to_string() })?;
            let serde_json::Value::Object(patch) = patch else {
                return Err(ConfigError::Parse { path: path.into(), message: "expected a JSON object".into() });
            };
            let obj = current.as_object_mut().expect("struct serializes to an object");
            for (k, v) in patch {
                obj.insert(k, v);
            }
            *self = serde_json::from_value(current)
                .map_err(|e| ConfigError::Parse { path: path.into(), message: e.to_string() })?;
        } else {
            for (lineno, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                    path: path.into(),
                    message: format!("line {}: expected `key = value`", lineno + 1),
                })?;
                self.set(k, v)?;
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.data_root.is_none() && self.features_from.is_none() {
            return invalid("one of data_root or features_from is required");
        }
        if self.k_grid.is_empty() || self.k_grid.contains(&0) {
            return invalid("k_grid must list positive cluster counts");
        }
        if self.rounds == 0 {
            return invalid("rounds must be at least 1");
        }
        if self.folds < 2 {
            return invalid("folds must be at least 2");
        }
        if self.trees == 0 {
            return invalid("trees must be positive");
        }
        if self.window < tsal_core::features::MIN_WINDOW {
            return invalid("window must be at least 8");
        }
        if !(self.coral_lambda.is_finite() && self.coral_lambda >= 0.0) {
            return invalid("coral_lambda must be finite and non-negative");
        }
        if self.pct_budgets.iter().any(|&p| !(p > 0.0 && p <= 100.0)) {
            return invalid("pct_budgets must lie in (0, 100]");
        }
        if self.source_sampling.values().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return invalid("source_sampling fractions must lie in (0, 1]");
        }
        match self.experiment {
            Experiment::Exp1 | Experiment::Exp2 if self.budgets.is_empty() => invalid("budgets must not be empty"),
            Experiment::Exp3 if self.pct_budgets.is_empty() => invalid("pct_budgets must not be empty"),
            Experiment::Exp2 if self.k_grid != [1] => invalid("experiment 2 runs with k = 1 only"),
            _ => Ok(()),
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            n_folds: self.folds,
            coral_lambda: self.coral_lambda,
            forest: ForestParams { n_trees: self.trees, ..ForestParams::default() },
            alpha: self.alpha,
            rounds: self.rounds,
            budget_mode: self.budget_mode,
            threshold: self.threshold,
            seed: self.seed,
            ..PipelineConfig::default()
        }
    }

    /// Source fraction for a dataset id.
    pub fn sampling_for(&self, dataset_id: &str) -> f64 {
        self.source_sampling.get(&dataset_id.to_lowercase()).copied().unwrap_or(1.0)
    }

    pub fn is_excluded(&self, dataset_id: &str) -> bool {
        self.exclude_targets.iter().any(|e| e.eq_ignore_ascii_case(dataset_id))
    }
}
