//! Run configuration: one TOML document describing the encoder, the
//! vocabulary build, the training regime, and every task with its dataset.
//!
//! Unknown keys are rejected, and validation failures name the offending
//! field. Relative dataset paths are resolved against the directory of the
//! config file itself, so a run directory can be checked in and launched
//! from anywhere.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::multitask::{DatasetBinding, SamplerKind, TaskRole, TaskSpec, TrainMode};

fn default_layernorm_eps() -> f64 {
    1e-5
}

fn default_dropout() -> f64 {
    0.1
}

fn default_min_frequency() -> usize {
    1
}

fn default_max_size() -> usize {
    30_000
}

fn default_epochs() -> usize {
    3
}

fn default_batch_size() -> usize {
    8
}

fn default_learning_rate() -> f32 {
    1e-5
}

fn default_train_fraction() -> f64 {
    0.8
}

fn default_sampler() -> SamplerKind {
    SamplerKind::Proportional
}

fn default_stratified() -> bool {
    true
}

fn default_text_column() -> String {
    "text".to_string()
}

fn default_label_column() -> String {
    "label".to_string()
}

/// Encoder geometry. The vocabulary size is not configured here — it comes
/// from the vocabulary built over the training texts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderBlock {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_layers: usize,
    pub max_seq_len: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_layernorm_eps")]
    pub layernorm_eps: f64,
}

impl EncoderBlock {
    pub fn to_encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            n_layers: self.n_layers,
            max_seq_len: self.max_seq_len,
            dropout_p: self.dropout,
            layernorm_eps: self.layernorm_eps,
        }
    }
}

/// Vocabulary build parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabBlock {
    #[serde(default = "default_min_frequency")]
    pub min_frequency: usize,
    /// Total size cap including the four reserved entries.
    #[serde(default = "default_max_size")]
    pub max_size: usize,
}

impl Default for VocabBlock {
    fn default() -> Self {
        VocabBlock { min_frequency: default_min_frequency(), max_size: default_max_size() }
    }
}

/// Training regime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingBlock {
    pub mode: TrainMode,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f32,
    /// Mandatory: every run is reproducible by construction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_sampler")]
    pub sampler: SamplerKind,
    #[serde(default = "default_stratified")]
    pub stratified: bool,
    /// Label used in reports; defaults to the uppercased mode ("STL"/"MTL").
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_label: Option<String>,
}

/// One task and where its rows live. Either `data` (split by
/// `training.train_fraction`) or both `train_data` and `val_data`
/// (pre-split) must be given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskBlock {
    pub name: String,
    pub role: TaskRole,
    pub label_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_data: Option<PathBuf>,
    #[serde(default = "default_text_column")]
    pub text_column: String,
    #[serde(default = "default_label_column")]
    pub label_column: String,
}

impl TaskBlock {
    /// The engine-level spec, with paths resolved against `base`.
    pub fn to_task_spec(&self, base: &Path) -> TaskSpec {
        let resolve = |p: &PathBuf| base.join(p).to_string_lossy().into_owned();
        let (train_path, val_path) = match (&self.data, &self.train_data, &self.val_data) {
            (Some(data), _, _) => (resolve(data), None),
            (None, Some(train), val) => (resolve(train), val.as_ref().map(resolve)),
            (None, None, _) => (String::new(), None),
        };
        TaskSpec {
            name: self.name.clone(),
            label_names: self.label_names.clone(),
            role: self.role,
            dataset: Some(DatasetBinding {
                train_path,
                val_path,
                text_column: self.text_column.clone(),
                label_column: self.label_column.clone(),
            }),
        }
    }
}

/// The whole run description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub encoder: EncoderBlock,
    #[serde(default)]
    pub vocab: VocabBlock,
    pub training: TrainingBlock,
    pub tasks: Vec<TaskBlock>,
}

impl RunConfig {
    /// Parse a TOML document. Syntax errors and unknown fields are
    /// validation failures.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("config emit: {e}")))
    }

    /// Structural validation; every failure names the field. Does not touch
    /// the filesystem — see [`RunConfig::validate_paths`].
    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, why: String| Error::Config(format!("{name}: {why}"));

        for (name, value) in [
            ("encoder.d_model", self.encoder.d_model),
            ("encoder.n_heads", self.encoder.n_heads),
            ("encoder.d_ff", self.encoder.d_ff),
            ("encoder.n_layers", self.encoder.n_layers),
        ] {
            if value == 0 {
                return Err(field(name, "must be positive".into()));
            }
        }
        if self.encoder.max_seq_len < 3 {
            return Err(field(
                "encoder.max_seq_len",
                "must be at least 3 (CLS + one token + SEP)".into(),
            ));
        }
        if self.encoder.d_model % self.encoder.n_heads != 0 {
            return Err(field(
                "encoder.n_heads",
                format!("must divide d_model={}", self.encoder.d_model),
            ));
        }
        if !(0.0..1.0).contains(&self.encoder.dropout) {
            return Err(field("encoder.dropout", "must lie in [0, 1)".into()));
        }
        if self.encoder.layernorm_eps <= 0.0 {
            return Err(field("encoder.layernorm_eps", "must be positive".into()));
        }

        if self.vocab.min_frequency == 0 {
            return Err(field("vocab.min_frequency", "must be at least 1".into()));
        }
        if self.vocab.max_size < 5 {
            return Err(field(
                "vocab.max_size",
                "must be at least 5 (four reserved entries plus one token)".into(),
            ));
        }

        if self.training.epochs == 0 {
            return Err(field("training.epochs", "must be at least 1".into()));
        }
        if self.training.batch_size == 0 {
            return Err(field("training.batch_size", "must be at least 1".into()));
        }
        if !(self.training.learning_rate > 0.0) {
            return Err(field("training.learning_rate", "must be positive".into()));
        }
        if self.training.seed.is_none() {
            return Err(field("training.seed", "is required".into()));
        }
        if !(self.training.train_fraction > 0.0 && self.training.train_fraction < 1.0) {
            return Err(field("training.train_fraction", "must lie strictly in (0, 1)".into()));
        }

        if self.tasks.is_empty() {
            return Err(field("tasks", "at least one task is required".into()));
        }
        let mut mains = Vec::new();
        for (i, task) in self.tasks.iter().enumerate() {
            let prefix = format!("tasks[{i}]");
            if task.name.is_empty() {
                return Err(field(&format!("{prefix}.name"), "must be non-empty".into()));
            }
            if self.tasks[..i].iter().any(|t| t.name == task.name) {
                return Err(field(
                    &format!("{prefix}.name"),
                    format!("duplicates task name {:?}", task.name),
                ));
            }
            if task.label_names.len() < 2 {
                return Err(field(
                    &format!("{prefix}.label_names"),
                    "needs at least two labels".into(),
                ));
            }
            for (j, label) in task.label_names.iter().enumerate() {
                if task.label_names[..j].contains(label) {
                    return Err(field(
                        &format!("{prefix}.label_names"),
                        format!("repeats label {label:?}"),
                    ));
                }
            }
            match (&task.data, &task.train_data, &task.val_data) {
                (Some(_), None, None) => {}
                (None, Some(_), Some(_)) => {}
                (Some(_), _, _) => {
                    return Err(field(
                        &format!("{prefix}.data"),
                        "cannot be combined with train_data/val_data".into(),
                    ));
                }
                (None, Some(_), None) => {
                    return Err(field(
                        &format!("{prefix}.val_data"),
                        "is required when train_data is given".into(),
                    ));
                }
                (None, None, _) => {
                    return Err(field(
                        &format!("{prefix}.data"),
                        "either data or train_data+val_data is required".into(),
                    ));
                }
            }
            if task.role == TaskRole::Main {
                mains.push(i);
            }
        }
        match mains.len() {
            1 => {}
            0 => {
                return Err(field("tasks", "exactly one task must have role \"main\"".into()));
            }
            _ => {
                return Err(field(
                    &format!("tasks[{}].role", mains[1]),
                    "a second \"main\" task is not allowed".into(),
                ));
            }
        }
        Ok(())
    }

    /// Check that every referenced dataset file exists, resolving relative
    /// paths against `base` (the config file's directory).
    pub fn validate_paths(&self, base: &Path) -> Result<()> {
        for (i, task) in self.tasks.iter().enumerate() {
            for (key, path) in [
                ("data", &task.data),
                ("train_data", &task.train_data),
                ("val_data", &task.val_data),
            ] {
                if let Some(path) = path {
                    let resolved = base.join(path);
                    if !resolved.is_file() {
                        return Err(Error::Config(format!(
                            "tasks[{i}].{key}: {} does not exist",
                            resolved.display()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Index of the single main task (call after [`RunConfig::validate`]).
    pub fn main_task_index(&self) -> usize {
        self.tasks
            .iter()
            .position(|t| t.role == TaskRole::Main)
            .expect("validated configs have a main task")
    }

    /// Report label: the explicit `training.model_label`, or the mode name.
    pub fn model_label(&self) -> String {
        self.training.model_label.clone().unwrap_or_else(|| {
            match self.training.mode {
                TrainMode::Stl => "STL",
                TrainMode::Mtl => "MTL",
            }
            .to_string()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_toml() -> String {
        r#"
            output_dir = "out"

            [encoder]
            d_model = 8
            n_heads = 2
            d_ff = 16
            n_layers = 1
            max_seq_len = 16

            [training]
            mode = "mtl"
            seed = 7

            [[tasks]]
            name = "HS"
            role = "main"
            label_names = ["hate", "none"]
            data = "hs.csv"

            [[tasks]]
            name = "EMO"
            role = "auxiliary"
            label_names = ["joy", "anger", "fear"]
            data = "emo.csv"
        "#
        .to_string()
    }

    #[test]
    fn parses_with_defaults() {
        let config = RunConfig::from_toml_str(&minimal_toml()).unwrap();
        config.validate().unwrap();
        assert_eq!(config.training.epochs, 3);
        assert_eq!(config.training.batch_size, 8);
        assert_eq!(config.training.learning_rate, 1e-5);
        assert_eq!(config.training.train_fraction, 0.8);
        assert_eq!(config.training.sampler, SamplerKind::Proportional);
        assert!(config.training.stratified);
        assert_eq!(config.vocab.min_frequency, 1);
        assert_eq!(config.encoder.dropout, 0.1);
        assert_eq!(config.tasks[0].text_column, "text");
        assert_eq!(config.tasks[0].label_column, "label");
        assert_eq!(config.main_task_index(), 0);
        assert_eq!(config.model_label(), "MTL");
    }

    #[test]
    fn round_trips_through_normalized_toml() {
        let config = RunConfig::from_toml_str(&minimal_toml()).unwrap();
        let emitted = config.to_toml_string().unwrap();
        let reparsed = RunConfig::from_toml_str(&emitted).unwrap();
        assert_eq!(reparsed, config);
    }

    #[test]
    fn missing_seed_names_the_field() {
        let toml = minimal_toml().replace("seed = 7", "");
        let config = RunConfig::from_toml_str(&toml).unwrap();
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("training.seed"), "{err}");
    }

    #[test]
    fn second_main_task_names_the_field() {
        let toml = minimal_toml().replace("role = \"auxiliary\"", "role = \"main\"");
        let config = RunConfig::from_toml_str(&toml).unwrap();
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("tasks[1].role"), "{err}");
    }

    #[test]
    fn no_main_task_is_rejected() {
        let toml = minimal_toml().replace("role = \"main\"", "role = \"auxiliary\"");
        let config = RunConfig::from_toml_str(&toml).unwrap();
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("main"), "{err}");
    }

    #[test]
    fn unknown_fields_are_parse_errors() {
        let toml = minimal_toml().replace("seed = 7", "seed = 7\nbatchsize = 4");
        let err = RunConfig::from_toml_str(&toml).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("batchsize"), "{err}");
    }

    #[test]
    fn conflicting_dataset_spellings_are_rejected() {
        let toml = minimal_toml().replace(
            "data = \"hs.csv\"",
            "data = \"hs.csv\"\ntrain_data = \"a.csv\"\nval_data = \"b.csv\"",
        );
        let config = RunConfig::from_toml_str(&toml).unwrap();
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("tasks[0].data"), "{err}");

        let toml = minimal_toml().replace("data = \"hs.csv\"", "train_data = \"a.csv\"");
        let config = RunConfig::from_toml_str(&toml).unwrap();
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("tasks[0].val_data"), "{err}");

        let toml = minimal_toml().replace("data = \"hs.csv\"\n", "");
        let config = RunConfig::from_toml_str(&toml).unwrap();
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("tasks[0].data"), "{err}");
    }

    #[test]
    fn numeric_bounds_are_checked() {
        let cases = [
            ("seed = 7", "seed = 7\ntrain_fraction = 1.0", "training.train_fraction"),
            ("seed = 7", "seed = 7\nepochs = 0", "training.epochs"),
            ("seed = 7", "seed = 7\nbatch_size = 0", "training.batch_size"),
            ("n_heads = 2", "n_heads = 3", "encoder.n_heads"),
            ("max_seq_len = 16", "max_seq_len = 2", "encoder.max_seq_len"),
        ];
        for (from, to, expect) in cases {
            let toml = minimal_toml().replace(from, to);
            let config = RunConfig::from_toml_str(&toml).unwrap();
            let err = config.validate().unwrap_err();
            assert!(err.to_string().contains(expect), "{expect}: {err}");
        }
    }

    #[test]
    fn task_spec_resolves_paths_against_base() {
        let config = RunConfig::from_toml_str(&minimal_toml()).unwrap();
        let spec = config.tasks[0].to_task_spec(Path::new("/runs/demo"));
        let binding = spec.dataset.unwrap();
        assert_eq!(binding.train_path, "/runs/demo/hs.csv");
        assert_eq!(binding.val_path, None);
        assert_eq!(binding.text_column, "text");
    }

    #[test]
    fn validate_paths_names_the_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let config = RunConfig::from_toml_str(&minimal_toml()).unwrap();
        let err = config.validate_paths(dir.path()).unwrap_err();
        assert!(err.to_string().contains("tasks[0].data"), "{err}");
        assert!(err.to_string().contains("hs.csv"), "{err}");

        std::fs::write(dir.path().join("hs.csv"), "text,label\n").unwrap();
        std::fs::write(dir.path().join("emo.csv"), "text,label\n").unwrap();
        config.validate_paths(dir.path()).unwrap();
    }
}
