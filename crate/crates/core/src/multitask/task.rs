//! Task descriptions and per-task classification heads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Whether a task drives model selection or only contributes shared
/// representations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskRole {
    Main,
    Auxiliary,
}

/// Where a task's rows come from and which CSV columns hold them. Purely
/// descriptive at the engine level; the runner resolves the paths.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetBinding {
    pub train_path: String,
    /// Held-out file when the corpus arrives pre-split; `None` means the
    /// runner splits `train_path` itself.
    pub val_path: Option<String>,
    pub text_column: String,
    pub label_column: String,
}

/// One learning task: a name, an ordered label set, a role, and (optionally)
/// the dataset it reads. `label_names[i]` is the name of class id `i`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub label_names: Vec<String>,
    pub role: TaskRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetBinding>,
}

impl TaskSpec {
    pub fn new(name: &str, label_names: &[&str], role: TaskRole) -> Self {
        TaskSpec {
            name: name.to_string(),
            label_names: label_names.iter().map(|s| s.to_string()).collect(),
            role,
            dataset: None,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Registry("task name must be non-empty".into()));
        }
        if self.label_names.len() < 2 {
            return Err(Error::Registry(format!(
                "task {:?} needs at least 2 label names, got {}",
                self.name,
                self.label_names.len()
            )));
        }
        for (i, a) in self.label_names.iter().enumerate() {
            if self.label_names[..i].contains(a) {
                return Err(Error::Registry(format!(
                    "task {:?} repeats label name {a:?}",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// Class id of a label name, if the task defines it.
    pub fn label_id(&self, name: &str) -> Option<usize> {
        self.label_names.iter().position(|l| l == name)
    }
}

/// The linear classifier of one task: `weight` is `[d_model, C]`, `bias` is
/// `[C]`. Owned by exactly one task; no other task's forward or backward
/// pass ever touches these tensors.
#[derive(Clone, Debug)]
pub struct TaskHead {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl TaskHead {
    pub fn named_parameters(&self, task: &str) -> Vec<(String, Tensor)> {
        vec![
            (format!("head.{task}.weight"), self.weight.clone()),
            (format!("head.{task}.bias"), self.bias.clone()),
        ]
    }
}
