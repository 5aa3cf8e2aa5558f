//! Run configuration: a TOML file, overridden field by field by flags.

use std::path::{Path, PathBuf};

use cfkit::evaluation::{Algorithm, ExperimentConfig, ModelParams, TuningConfig};
use cfkit::ingest::{FeaturesFormat, RatingsFormat};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    pub format: RatingsFormat,
    /// Label used in reports; defaults to the file's parent directory name.
    pub name: Option<String>,
    pub features: Option<PathBuf>,
    pub features_format: FeaturesFormat,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            path: PathBuf::new(),
            format: RatingsFormat::UData100k,
            name: None,
            features: None,
            features_format: FeaturesFormat::UItem100k,
        }
    }
}

impl DatasetConfig {
    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            self.path
                .parent()
                .and_then(Path::file_name)
                .or_else(|| self.path.file_stem())
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into())
        })
    }
}

/// Everything needed to reproduce a run from the dataset alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub algorithms: Vec<Algorithm>,
    /// Masked share of the training ratings; the retained share is `1 - sparsity`.
    pub sparsity: Vec<f64>,
    pub seeds: Vec<u64>,
    pub test_fraction: f64,
    pub warmup: bool,
    /// Worker threads; all available cores when absent.
    pub threads: Option<usize>,
    pub output: PathBuf,
    /// Partitioned ALS for `train` when set.
    pub partitions: Option<usize>,
    pub sync_rounds: Option<usize>,
    pub params: ModelParams,
    pub tuning: Option<TuningConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        RunConfig {
            dataset: DatasetConfig::default(),
            algorithms: e.algorithms,
            sparsity: e.retained.iter().map(|r| round6(1.0 - r)).collect(),
            seeds: e.seeds,
            test_fraction: e.test_fraction,
            warmup: e.warmup,
            threads: None,
            output: PathBuf::from("cfkit-out"),
            partitions: None,
            sync_rounds: None,
            params: e.params,
            tuning: None,
        }
    }
}

/// Keeps `1 - 0.8` printing as `0.2`.
fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes to TOML")
    }

    /// Field-level checks; the message names the offending key.
    pub fn validate(&self) -> Result<(), String> {
        if self.dataset.path.as_os_str().is_empty() {
            return Err("dataset.path: no ratings file given (use --data or set dataset.path)".into());
        }
        if self.algorithms.is_empty() {
            return Err("algorithms: at least one algorithm is required".into());
        }
        if self.seeds.is_empty() {
            return Err("seeds: at least one seed is required".into());
        }
        for &s in &self.sparsity {
            if !(0.0..1.0).contains(&s) {
                return Err(format!("sparsity: {s} is outside [0, 1)"));
            }
        }
        if self.threads == Some(0) {
            return Err("threads: must be >= 1".into());
        }
        if self.partitions == Some(0) {
            return Err("partitions: must be >= 1".into());
        }
        if self.sync_rounds == Some(0) {
            return Err("sync_rounds: must be >= 1".into());
        }
        self.experiment().validate().map_err(|e| format!("params: {e}"))
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            algorithms: self.algorithms.clone(),
            retained: self.sparsity.iter().map(|s| round6(1.0 - s)).collect(),
            seeds: self.seeds.clone(),
            test_fraction: self.test_fraction,
            params: self.params,
            tuning: self.tuning.clone(),
            warmup: self.warmup,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.dataset.path = "data/ml-100k/u.data".into();
        c.tuning = Some(TuningConfig::default());
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.sparsity, vec![0.2, 0.5, 0.8]);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c: RunConfig = toml::from_str(
            r#"
            algorithms = ["mf"]
            [dataset]
            path = "ratings.csv"
            format = "csv_latest"
            [params.mf]
            rank = 8
            "#,
        )
        .unwrap();
        assert_eq!(c.params.mf.rank, 8);
        assert_eq!(c.params.mf.lambda, ModelParams::default().mf.lambda);
        assert_eq!(c.dataset.format, RatingsFormat::CsvLatest);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(toml::from_str::<RunConfig>("colour = 3").is_err());
        let mut c = RunConfig::default();
        c.dataset.path = "x".into();
        c.sparsity = vec![1.0];
        assert!(c.validate().unwrap_err().starts_with("sparsity"));
        c.sparsity = vec![0.2];
        c.params.hybrid.alpha = 2.0;
        assert!(c.validate().unwrap_err().starts_with("params"));
    }

    #[test]
    fn label_defaults_to_directory() {
        let d = DatasetConfig {
            path: "data/ml-100k/u.data".into(),
            ..Default::default()
        };
        assert_eq!(d.label(), "ml-100k");
    }
}
