//! Declarative experiment description read from a TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};
use ssnll_core::data::ShiftSpec;
use ssnll_core::trainer::TrainConfig;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default = "TrainConfig::source_default", deserialize_with = "source_train_config")]
    pub source_train: TrainConfig,
    #[serde(default)]
    pub adapt_train: TrainConfig,
    /// Each entry reseeds data generation, model init, source training and
    /// adaptation; the per-section `seed` fields are overwritten.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Split ratios visited by `sweep`.
    #[serde(default)]
    pub sweep: Option<Vec<f64>>,
    pub output_dir: PathBuf,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// Written as exactly one of `[dataset.synthetic]`, `[dataset.idx]` or
/// `[dataset.csv]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetConfig {
    Synthetic(ShiftSpec),
    Idx(IdxConfig),
    Csv(CsvConfig),
}

/// Source and target digit sets in IDX format; the image tensors must agree
/// on the per-sample shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxConfig {
    pub source_images: PathBuf,
    pub source_labels: PathBuf,
    pub target_images: PathBuf,
    pub target_labels: PathBuf,
    /// Seeded random subset size per domain; all samples when absent.
    #[serde(default)]
    pub subsample: Option<usize>,
    #[serde(default = "default_digit_classes")]
    pub num_classes: usize,
}

fn default_digit_classes() -> usize {
    10
}

/// Files with header `feature_0..feature_{d-1},label`; label -1 marks an
/// unlabeled row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvConfig {
    pub source: PathBuf,
    pub target: PathBuf,
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden layer widths; each is followed by batch norm and ReLU.
    pub hidden: Vec<usize>,
    /// Skip source training and start from this checkpoint.
    pub source_checkpoint: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            source_checkpoint: None,
        }
    }
}

/// Missing keys fall back to the source-training defaults rather than the
/// adaptation defaults that `TrainConfig`'s own `Default` provides.
fn source_train_config<'de, D: Deserializer<'de>>(d: D) -> Result<TrainConfig, D::Error> {
    use serde::de::Error;
    let given = toml::Table::deserialize(d)?;
    let mut merged = toml::Table::try_from(TrainConfig::source_default()).map_err(D::Error::custom)?;
    merged.extend(given);
    merged.try_into().map_err(D::Error::custom)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads, parses and validates a config; relative paths inside it are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config = Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let Some(p) = &mut self.model.source_checkpoint {
            fix(p);
        }
        match &mut self.dataset {
            DatasetConfig::Synthetic(_) => {}
            DatasetConfig::Idx(idx) => {
                for p in [
                    &mut idx.source_images,
                    &mut idx.source_labels,
                    &mut idx.target_images,
                    &mut idx.target_labels,
                ] {
                    fix(p);
                }
            }
            DatasetConfig::Csv(c) => {
                fix(&mut c.source);
                fix(&mut c.target);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.seeds.is_empty() {
            return bad("`seeds` must list at least one seed".into());
        }
        if self.model.hidden.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        self.source_train
            .validate()
            .map_err(|e| CliError::Config(format!("[source_train] {e}")))?;
        self.adapt_train
            .validate_for_adaptation()
            .map_err(|e| CliError::Config(format!("[adapt_train] {e}")))?;
        if let Some(rs) = &self.sweep {
            if let Some(r) = rs.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
                return bad(format!("sweep ratio {r} must lie in (0, 1]"));
            }
        }
        match &self.dataset {
            DatasetConfig::Synthetic(spec) => spec
                .validate()
                .map_err(|e| CliError::Config(format!("[dataset] {e}")))?,
            DatasetConfig::Idx(idx) => {
                if idx.subsample == Some(0) || idx.num_classes == 0 {
                    return bad("[dataset] subsample and num_classes must be positive".into());
                }
                for p in [
                    &idx.source_images,
                    &idx.source_labels,
                    &idx.target_images,
                    &idx.target_labels,
                ] {
                    require_file(p)?;
                }
            }
            DatasetConfig::Csv(c) => {
                if c.num_classes == 0 {
                    return bad("[dataset] num_classes must be positive".into());
                }
                require_file(&c.source)?;
                require_file(&c.target)?;
            }
        }
        if let Some(p) = &self.model.source_checkpoint {
            require_file(p)?;
        }
        Ok(())
    }

    /// The split ratios for `sweep`, rejecting an absent or empty list.
    pub fn sweep_ratios(&self) -> Result<&[f64]> {
        match self.sweep.as_deref() {
            Some(rs) if !rs.is_empty() => Ok(rs),
            _ => Err(CliError::Config("`sweep` must list at least one split ratio".into())),
        }
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_synthetic_config_takes_defaults() {
        let c = ExperimentConfig::parse("output_dir = \"out\"\n[dataset.synthetic]\n").unwrap();
        assert_eq!(c.dataset, DatasetConfig::Synthetic(ShiftSpec::default()));
        assert_eq!(c.source_train, TrainConfig::source_default());
        assert_eq!(c.adapt_train, TrainConfig::default());
        assert_eq!(c.seeds, vec![0]);
        c.validate().unwrap();
    }

    #[test]
    fn partial_sections_merge_with_their_defaults() {
        let c = ExperimentConfig::parse(
            r#"
output_dir = "out"
seeds = [1, 2]
[dataset.synthetic]
shift_rotation_angle = 0.0
[source_train]
epochs = 3
[adapt_train]
split_ratio = 0.4
optimizer = { kind = "sgd", lr = 0.01, momentum = 0.9 }
[adapt_train.augment]
jitter_stddev = 0.0
"#,
        )
        .unwrap();
        let DatasetConfig::Synthetic(spec) = &c.dataset else {
            panic!()
        };
        assert_eq!(spec.shift_rotation_angle, 0.0);
        assert_eq!(spec.samples_per_class_target, 500);
        assert_eq!(
            c.source_train,
            TrainConfig {
                epochs: 3,
                ..TrainConfig::source_default()
            }
        );
        assert_eq!(c.adapt_train.split_ratio, 0.4);
        assert_eq!(c.adapt_train.augment.dropout_fraction, 0.05);
        assert_eq!(c.adapt_train.optimizer.lr(), 0.01);
    }

    #[test]
    fn diagnostics_name_the_line() {
        let err = ExperimentConfig::parse("output_dir = \"out\"\n[dataset.synthetic]\nradius = 3\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("radius"), "{msg}");
        let err = ExperimentConfig::parse("output_dir = \n").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let base = "output_dir = \"out\"\n[dataset.synthetic]\n";
        for extra in [
            "[adapt_train]\nbatch_size = 7\n",
            "[adapt_train]\nepochs = 0\n",
            "sweep = [0.0]\n",
        ] {
            let text = if extra.starts_with('[') {
                format!("{base}{extra}")
            } else {
                format!("{extra}{base}")
            };
            let c = ExperimentConfig::parse(&text).unwrap();
            assert!(matches!(c.validate(), Err(CliError::Config(_))), "{extra}");
        }
    }

    #[test]
    fn missing_files_are_io_errors() {
        let c = ExperimentConfig::parse(
            "output_dir = \"out\"\n[dataset.csv]\nsource = \"/nonexistent/a.csv\"\ntarget = \"/nonexistent/b.csv\"\nnum_classes = 2\n",
        )
        .unwrap();
        assert!(matches!(c.validate(), Err(CliError::Io { .. })));
    }

    #[test]
    fn resolved_config_round_trips_through_toml() {
        let c = ExperimentConfig::parse("output_dir = \"out\"\nsweep = [0.2, 1.0]\n[dataset.synthetic]\n").unwrap();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), c);
    }
}
