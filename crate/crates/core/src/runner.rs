//! Command implementations behind the CLI: configure-and-train, evaluate a
//! checkpoint, and compare report files.
//!
//! Artifact layout under the output directory (train):
//!   - `train_log.jsonl`          one JSON object per epoch per trained task
//!   - `model.ckpt` + sidecar     best-on-validation parameters
//!   - `<task>.report.json/.txt`  final evaluation of the saved model
//!   - `<task>.confusion.csv`     confusion matrix of that evaluation
//!   - `<task>.val.csv`           the preprocessed validation split, so the
//!                                reports can be reproduced with `eval`
//!   - `<task>.rejects.txt`       rows dropped during ingestion/cleaning

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::{comparison_report, EvalReport};
use crate::multitask::{
    evaluate, load_checkpoint, save_checkpoint, train, CheckpointMeta, MultitaskModel,
    TaskDataset, TaskSpec, TrainSettings,
};
use crate::text::{
    build_vocab, load_csv, split_train_val, CsvSchema, Example, Preprocessor, Vocabulary,
    EncodedExample,
};

/// Environment variable that overrides every command's output directory.
pub const OUTPUT_ENV: &str = "TEXTMTL_OUT";

/// Batch size used when chunking evaluation forwards; predictions are
/// row-independent, so any value yields identical metrics.
const EVAL_BATCH: usize = 8;

/// Where `train` put everything.
#[derive(Clone, Debug)]
pub struct TrainArtifacts {
    pub output_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub train_log: PathBuf,
    /// Per trained task: (task name, report JSON path).
    pub reports: Vec<(String, PathBuf)>,
}

/// Where `eval` put everything, plus the report itself.
#[derive(Clone, Debug)]
pub struct EvalArtifacts {
    pub report_json: PathBuf,
    pub report_text: PathBuf,
    pub confusion_csv: PathBuf,
    pub report: EvalReport,
}

/// Where `compare` put everything, plus the rendered table.
#[derive(Clone, Debug)]
pub struct CompareArtifacts {
    pub comparison_json: PathBuf,
    pub comparison_text: PathBuf,
    pub rendered: String,
}

fn file_slug(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

/// One task's rows while they move through cleaning and encoding.
struct TaskCorpus {
    spec: TaskSpec,
    train: Vec<Example>,
    val: Vec<Example>,
    reject_lines: Vec<String>,
}

fn load_task_corpus(
    block_index: usize,
    spec: &TaskSpec,
    config: &RunConfig,
) -> Result<TaskCorpus> {
    let binding = spec.dataset.as_ref().expect("config-built specs carry a binding");
    let schema = CsvSchema {
        text_column: binding.text_column.clone(),
        label_column: binding.label_column.clone(),
    };
    let mut reject_lines = Vec::new();
    let mut note_rejects = |path: &Path, rejects: &[crate::text::RejectedRow]| {
        for r in rejects {
            reject_lines.push(format!("{}: row {}: {}", path.display(), r.row, r.reason));
        }
    };

    let train_path = PathBuf::from(&binding.train_path);
    let outcome = load_csv(&train_path, &schema, &spec.label_names, &spec.name)?;
    note_rejects(&train_path, &outcome.rejects);

    let (train, val) = match &binding.val_path {
        Some(val_path) => {
            let val_path = PathBuf::from(val_path);
            let val_outcome = load_csv(&val_path, &schema, &spec.label_names, &spec.name)?;
            note_rejects(&val_path, &val_outcome.rejects);
            (outcome.examples, val_outcome.examples)
        }
        None => {
            let split_seed = config
                .training
                .seed
                .expect("validated config")
                .wrapping_add(101 + block_index as u64);
            split_train_val(
                &outcome.examples,
                config.training.train_fraction,
                split_seed,
                config.training.stratified,
            )?
        }
    };
    Ok(TaskCorpus { spec: spec.clone(), train, val, reject_lines })
}

/// Clean every text with `pre`, dropping (and recording) rows that
/// normalize to fewer than two tokens.
fn clean_examples(
    examples: &[Example],
    pre: &Preprocessor,
    side: &str,
    reject_lines: &mut Vec<String>,
) -> Vec<Example> {
    let mut kept = Vec::with_capacity(examples.len());
    for ex in examples {
        let clean = pre.preprocess(&ex.text);
        if clean.is_empty() {
            reject_lines.push(format!(
                "{side}: dropped {:?}: fewer than 2 tokens after preprocessing",
                ex.text
            ));
        } else {
            kept.push(Example { text: clean, label: ex.label, task: ex.task.clone() });
        }
    }
    kept
}

fn encode_examples(examples: &[Example], vocab: &Vocabulary, max_seq_len: usize) -> Result<Vec<EncodedExample>> {
    examples
        .iter()
        .map(|ex| {
            let enc = vocab.encode(&ex.text, max_seq_len)?;
            Ok(EncodedExample {
                ids: enc.ids,
                attention_mask: enc.attention_mask,
                label: ex.label,
                task: ex.task.clone(),
            })
        })
        .collect()
}

fn write_val_csv(path: &Path, examples: &[Example], spec: &TaskSpec) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["text", "label"])?;
    for ex in examples {
        writer.write_record([ex.text.as_str(), spec.label_names[ex.label].as_str()])?;
    }
    writer.flush()?;
    Ok(())
}

fn write_report_files(
    out_dir: &Path,
    report: &EvalReport,
    confusion_csv: &str,
) -> Result<(PathBuf, PathBuf, PathBuf)> {
    let slug = file_slug(&report.task);
    let json_path = out_dir.join(format!("{slug}.report.json"));
    let text_path = out_dir.join(format!("{slug}.report.txt"));
    let csv_path = out_dir.join(format!("{slug}.confusion.csv"));
    write_text(&json_path, &serde_json::to_string_pretty(report)?)?;
    write_text(&text_path, &report.to_text())?;
    write_text(&csv_path, confusion_csv)?;
    Ok((json_path, text_path, csv_path))
}

/// Run a full training job from a config file. `seed` and `epochs`
/// override the config when given; `output_override` (usually from
/// `TEXTMTL_OUT`) replaces the configured output directory.
pub fn cmd_train(
    config_path: &Path,
    seed: Option<u64>,
    epochs: Option<usize>,
    output_override: Option<&Path>,
) -> Result<TrainArtifacts> {
    let text = fs::read_to_string(config_path).map_err(|e| {
        Error::Config(format!("config {}: {e}", config_path.display()))
    })?;
    let mut config = RunConfig::from_toml_str(&text)?;
    if let Some(seed) = seed {
        config.training.seed = Some(seed);
    }
    if let Some(epochs) = epochs {
        config.training.epochs = epochs;
    }
    config.validate()?;
    let base = config_path.parent().unwrap_or_else(|| Path::new("."));
    config.validate_paths(base)?;

    let out_dir = match output_override {
        Some(dir) => dir.to_path_buf(),
        None => base.join(&config.output_dir),
    };
    fs::create_dir_all(&out_dir)?;

    let run_seed = config.training.seed.expect("validated config");

    // Ingest and split every task.
    let mut corpora = Vec::new();
    for (i, block) in config.tasks.iter().enumerate() {
        let spec = block.to_task_spec(base);
        corpora.push(load_task_corpus(i, &spec, &config)?);
    }

    // Cleaning pass 1, without a lexicon, over the training sides only:
    // its token set becomes the lexicon for hashtag segmentation and
    // elongation recovery in pass 2.
    let pass1 = Preprocessor::new();
    let mut lexicon: BTreeSet<String> = BTreeSet::new();
    for corpus in &corpora {
        for ex in &corpus.train {
            for token in pass1.preprocess(&ex.text).split_whitespace() {
                lexicon.insert(token.to_string());
            }
        }
    }
    let lexicon: Vec<String> = lexicon.into_iter().collect();
    let pre = Preprocessor::with_lexicon(lexicon.iter().cloned());

    // Cleaning pass 2 + vocabulary over the cleaned training texts.
    for corpus in &mut corpora {
        let mut rejects = std::mem::take(&mut corpus.reject_lines);
        corpus.train = clean_examples(&corpus.train, &pre, "train", &mut rejects);
        corpus.val = clean_examples(&corpus.val, &pre, "validation", &mut rejects);
        corpus.reject_lines = rejects;
        if corpus.train.is_empty() {
            return Err(Error::Data(format!(
                "task {:?} has no training rows left after cleaning",
                corpus.spec.name
            )));
        }
    }
    let vocab = build_vocab(
        corpora.iter().flat_map(|c| c.train.iter().map(|ex| ex.text.as_str())),
        config.vocab.min_frequency,
        config.vocab.max_size,
    )?;

    // Encode, build the model, register tasks.
    let encoder_config = config.encoder.to_encoder_config(vocab.len());
    let mut model =
        MultitaskModel::new(&encoder_config, config.training.learning_rate, run_seed)?;
    let mut datasets = Vec::new();
    for (i, corpus) in corpora.iter().enumerate() {
        model.register_task(&corpus.spec, run_seed.wrapping_add(1 + i as u64))?;
        datasets.push(TaskDataset {
            spec: corpus.spec.clone(),
            train: encode_examples(&corpus.train, &vocab, encoder_config.max_seq_len)?,
            val: encode_examples(&corpus.val, &vocab, encoder_config.max_seq_len)?,
        });
    }

    let settings = TrainSettings {
        mode: config.training.mode,
        epochs: config.training.epochs,
        batch_size: config.training.batch_size,
        seed: run_seed,
        sampler: config.training.sampler,
    };
    let outcome = train(&mut model, &datasets, &settings)?;

    // Persist artifacts: log, best checkpoint, per-task reports and splits.
    let train_log = out_dir.join("train_log.jsonl");
    write_text(&train_log, &outcome.log.to_jsonl())?;

    model.restore(&outcome.best)?;
    let checkpoint = out_dir.join("model.ckpt");
    let meta = CheckpointMeta::for_model(
        &model,
        &config.model_label(),
        Some(&vocab),
        Some(lexicon),
    );
    save_checkpoint(&model, &meta, &checkpoint)?;

    let trained: Vec<&TaskDataset> = match config.training.mode {
        crate::multitask::TrainMode::Stl => vec![&datasets[config.main_task_index()]],
        crate::multitask::TrainMode::Mtl => datasets.iter().collect(),
    };
    let mut reports = Vec::new();
    for ds in trained {
        let (cm, _, _) = evaluate(&model, &ds.spec.name, &ds.val, settings.batch_size)?;
        let report = EvalReport::build(&ds.spec.name, &config.model_label(), &cm)?;
        let (json_path, _, _) = write_report_files(&out_dir, &report, &cm.to_csv())?;
        reports.push((ds.spec.name.clone(), json_path));
    }
    for corpus in &corpora {
        let slug = file_slug(&corpus.spec.name);
        write_val_csv(&out_dir.join(format!("{slug}.val.csv")), &corpus.val, &corpus.spec)?;
        write_text(
            &out_dir.join(format!("{slug}.rejects.txt")),
            &corpus
                .reject_lines
                .iter()
                .map(|l| format!("{l}\n"))
                .collect::<String>(),
        )?;
    }

    Ok(TrainArtifacts { output_dir: out_dir, checkpoint, train_log, reports })
}

/// Evaluate a checkpoint's task head on a CSV of labeled texts.
pub fn cmd_eval(
    checkpoint: &Path,
    data: &Path,
    task: &str,
    output_override: Option<&Path>,
) -> Result<EvalArtifacts> {
    let bundle = load_checkpoint(checkpoint)?;
    let spec = match bundle.model.task_spec(task) {
        Ok(spec) => spec.clone(),
        Err(_) => {
            let known: Vec<&str> =
                bundle.model.task_specs().iter().map(|s| s.name.as_str()).collect();
            return Err(Error::Validation(format!(
                "task {task:?} is not in this checkpoint (it has {known:?})"
            )));
        }
    };
    let vocab = bundle
        .meta
        .vocab
        .as_ref()
        .ok_or_else(|| {
            Error::CorruptCheckpoint("checkpoint sidecar carries no vocabulary".into())
        })?
        .to_vocabulary()?;
    let pre = match &bundle.meta.lexicon {
        Some(words) => Preprocessor::with_lexicon(words.iter().cloned()),
        None => Preprocessor::new(),
    };

    let schema = match &spec.dataset {
        Some(binding) => CsvSchema {
            text_column: binding.text_column.clone(),
            label_column: binding.label_column.clone(),
        },
        None => CsvSchema { text_column: "text".into(), label_column: "label".into() },
    };
    let outcome = load_csv(data, &schema, &spec.label_names, task)?;
    if outcome.examples.is_empty() {
        let hint = outcome
            .rejects
            .first()
            .map(|r| format!(" (row {}: {})", r.row, r.reason))
            .unwrap_or_default();
        return Err(Error::Schema(format!(
            "{}: no usable rows — label mismatch against task {task:?} with labels {:?}{hint}",
            data.display(),
            spec.label_names
        )));
    }

    let mut dropped = 0usize;
    let mut cleaned = Vec::new();
    for ex in &outcome.examples {
        let clean = pre.preprocess(&ex.text);
        if clean.is_empty() {
            dropped += 1;
        } else {
            cleaned.push(Example { text: clean, label: ex.label, task: ex.task.clone() });
        }
    }
    if cleaned.is_empty() {
        return Err(Error::Evaluation(format!(
            "{}: every row normalized to fewer than 2 tokens",
            data.display()
        )));
    }
    let _ = dropped;

    let encoded = encode_examples(&cleaned, &vocab, bundle.model.config().max_seq_len)?;
    let (cm, _, _) = evaluate(&bundle.model, task, &encoded, EVAL_BATCH)?;
    let report = EvalReport::build(task, &bundle.meta.model_label, &cm)?;

    let out_dir = output_override.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out_dir)?;
    let (report_json, report_text, confusion_csv) =
        write_report_files(&out_dir, &report, &cm.to_csv())?;
    Ok(EvalArtifacts { report_json, report_text, confusion_csv, report })
}

/// Merge two or more report JSON files into one comparison document.
pub fn cmd_compare(paths: &[PathBuf], output_override: Option<&Path>) -> Result<CompareArtifacts> {
    if paths.len() < 2 {
        return Err(Error::Validation(format!(
            "compare needs at least two reports, got {}",
            paths.len()
        )));
    }
    let mut reports = Vec::new();
    for path in paths {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Validation(format!("report {}: {e}", path.display())))?;
        let report: EvalReport = serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("report {}: {e}", path.display())))?;
        reports.push(report);
    }
    let comparison = comparison_report(&reports)?;
    let rendered = comparison.to_text();

    let out_dir = output_override.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out_dir)?;
    let comparison_json = out_dir.join("comparison.json");
    let comparison_text = out_dir.join("comparison.txt");
    write_text(&comparison_json, &serde_json::to_string_pretty(&comparison)?)?;
    write_text(&comparison_text, &rendered)?;
    Ok(CompareArtifacts { comparison_json, comparison_text, rendered })
}
