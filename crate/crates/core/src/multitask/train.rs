//! The joint training loop, its STL baseline mode, and evaluation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::loader::{Batch, MultitaskLoader, SamplerKind};
use super::model::{argmax_lowest, MultitaskModel};
use super::task::{TaskRole, TaskSpec};
use crate::error::{Error, Result};
use crate::metrics::{scores, ClassScores, ConfusionMatrix, MetricSummary};
use crate::text::EncodedExample;

/// Multitask training over every dataset, or the single-task baseline that
/// touches only the main task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Stl,
    Mtl,
}

/// A task plus its encoded train/validation rows.
#[derive(Clone, Debug)]
pub struct TaskDataset {
    pub spec: TaskSpec,
    pub train: Vec<EncodedExample>,
    pub val: Vec<EncodedExample>,
}

/// Everything the loop needs besides the model and the data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub sampler: SamplerKind,
}

/// One task's record for one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub epoch: usize,
    pub task: String,
    pub train_loss: f64,
    pub val: MetricSummary,
}

/// Per-epoch, per-task training history. Serializes to JSON lines so long
/// runs can be tailed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub entries: Vec<TrainLogEntry>,
}

impl TrainLog {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for entry in &self.entries {
            out.push_str(&serde_json::to_string(entry).expect("log entries serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let entries = text
            .lines()
            .filter(|line| !line.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        Ok(TrainLog { entries })
    }

    /// Entries of one task, in epoch order.
    pub fn for_task(&self, task: &str) -> Vec<&TrainLogEntry> {
        self.entries.iter().filter(|e| e.task == task).collect()
    }
}

/// Copied-out parameter values: (name, shape, data) per tensor, in
/// checkpoint order.
pub type ParamSnapshot = Vec<(String, Vec<usize>, Vec<f32>)>;

/// The log plus the best-on-validation parameter snapshot of the run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: TrainLog,
    /// Parameters at the epoch where the main task's validation macro-F1
    /// peaked (ties keep the earlier epoch).
    pub best: ParamSnapshot,
    pub best_epoch: usize,
    pub best_f1: f64,
}

/// Evaluate one task in deterministic order: forward every row in eval mode,
/// take argmax predictions (ties toward the lower class id), and score the
/// confusion matrix.
pub fn evaluate(
    model: &MultitaskModel,
    task: &str,
    examples: &[EncodedExample],
    batch_size: usize,
) -> Result<(ConfusionMatrix, MetricSummary, Vec<ClassScores>)> {
    if batch_size == 0 {
        return Err(Error::Parameter("batch_size must be positive".into()));
    }
    let spec = model.task_spec(task)?.clone();
    if examples.is_empty() {
        return Err(Error::Evaluation(format!("no rows to evaluate for task {task:?}")));
    }
    let c = spec.num_classes();
    let mut truth = Vec::with_capacity(examples.len());
    let mut predicted = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch_size) {
        let rows: Vec<&EncodedExample> = chunk.iter().collect();
        let batch = Batch::from_examples(task, &rows)?;
        let probs = model.forward_task(&batch)?;
        let flat = probs.data();
        for (row, ex) in chunk.iter().enumerate() {
            truth.push(ex.label);
            predicted.push(argmax_lowest(&flat[row * c..(row + 1) * c]));
        }
    }
    let cm = ConfusionMatrix::from_pairs(&truth, &predicted, &spec.label_names)?;
    let (summary, per_class) = scores(&cm)?;
    Ok((cm, summary, per_class))
}

fn validate_inputs(
    model: &MultitaskModel,
    datasets: &[TaskDataset],
    settings: &TrainSettings,
) -> Result<usize> {
    if settings.epochs == 0 {
        return Err(Error::Config("epochs must be at least 1".into()));
    }
    if settings.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    if datasets.is_empty() {
        return Err(Error::Config("no task datasets given".into()));
    }
    let mut main_idx = None;
    for (i, ds) in datasets.iter().enumerate() {
        let registered = model.task_spec(&ds.spec.name)?;
        if registered.label_names != ds.spec.label_names {
            return Err(Error::Registry(format!(
                "task {:?} was registered with labels {:?} but its dataset uses {:?}",
                ds.spec.name, registered.label_names, ds.spec.label_names
            )));
        }
        if ds.spec.role == TaskRole::Main {
            if main_idx.is_some() {
                return Err(Error::Config(format!(
                    "more than one task has role \"main\" (second: {:?})",
                    ds.spec.name
                )));
            }
            main_idx = Some(i);
        }
    }
    let main_idx = main_idx
        .ok_or_else(|| Error::Config("exactly one task must have role \"main\"".into()))?;
    Ok(main_idx)
}

/// Run the training loop. MTL interleaves every dataset's batches through
/// the shared encoder; STL trains on the main task alone. Each epoch logs,
/// per trained task, the mean batch loss and the validation metrics; the
/// returned outcome carries the parameters from the epoch where the main
/// task's validation macro-F1 peaked.
///
/// Fully deterministic in `settings.seed`: one ChaCha8 stream drives the
/// example shuffles, the batch interleaving, and dropout, in that order
/// within each epoch.
pub fn train(
    model: &mut MultitaskModel,
    datasets: &[TaskDataset],
    settings: &TrainSettings,
) -> Result<TrainOutcome> {
    let main_idx = validate_inputs(model, datasets, settings)?;
    let main_name = datasets[main_idx].spec.name.clone();

    let trained: Vec<&TaskDataset> = match settings.mode {
        TrainMode::Stl => vec![&datasets[main_idx]],
        TrainMode::Mtl => datasets.iter().collect(),
    };
    for ds in &trained {
        if ds.val.is_empty() {
            return Err(Error::Config(format!(
                "task {:?} has no validation rows to select a checkpoint with",
                ds.spec.name
            )));
        }
    }

    let mut loader = MultitaskLoader::new(settings.batch_size, settings.sampler)?;
    for ds in &trained {
        loader.add_task(&ds.spec.name, ds.train.clone())?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut log = TrainLog::default();
    let mut best: Option<(ParamSnapshot, usize, f64)> = None;

    for epoch in 1..=settings.epochs {
        let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
        for batch in loader.epoch(&mut rng)? {
            let loss = model.joint_step(&batch, &mut rng)?;
            let slot = sums.entry(
                trained
                    .iter()
                    .find(|ds| ds.spec.name == batch.task)
                    .expect("loader tasks mirror datasets")
                    .spec
                    .name
                    .as_str(),
            );
            let (sum, count) = slot.or_insert((0.0, 0));
            *sum += f64::from(loss);
            *count += 1;
        }

        for ds in &trained {
            let (sum, count) = sums.get(ds.spec.name.as_str()).copied().unwrap_or((0.0, 0));
            let train_loss = if count == 0 { 0.0 } else { sum / count as f64 };
            let (_, summary, _) = evaluate(model, &ds.spec.name, &ds.val, settings.batch_size)?;
            if ds.spec.name == main_name
                && best.as_ref().map_or(true, |(_, _, f1)| summary.f1_macro > *f1)
            {
                best = Some((model.snapshot(), epoch, summary.f1_macro));
            }
            log.entries.push(TrainLogEntry {
                epoch,
                task: ds.spec.name.clone(),
                train_loss,
                val: summary,
            });
        }
    }

    let (best, best_epoch, best_f1) = best.expect("at least one epoch evaluated the main task");
    Ok(TrainOutcome { log, best, best_epoch, best_f1 })
}
