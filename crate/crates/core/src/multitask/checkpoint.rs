//! Bit-exact model serialization.
//!
//! The tensor file is a fixed little-endian layout: the magic bytes, a
//! `u32` tensor count, then per tensor a `u16` name length, the UTF-8 name,
//! a `u8` rank, `rank` `u64` dims, and the raw `f32` values. Alongside it a
//! JSON sidecar (`<path>.meta.json`) records everything needed to rebuild
//! the model around those tensors: encoder geometry, task specs, and the
//! vocabulary/lexicon of the training run. Loading is strict — any
//! truncation, trailing bytes, or name/shape mismatch is rejected before a
//! single parameter is written.

use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::model::MultitaskModel;
use super::task::TaskSpec;
use super::train::ParamSnapshot;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::text::Vocabulary;

/// First eight bytes of every checkpoint.
pub const MAGIC: &[u8; 8] = b"MTLCKPT1";

fn default_model_label() -> String {
    "model".to_string()
}

/// Everything but the tensors: the sidecar content.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub encoder: EncoderConfig,
    pub learning_rate: f32,
    /// Label the training run reported under ("STL", "MTL", …).
    #[serde(default = "default_model_label")]
    pub model_label: String,
    pub tasks: Vec<TaskSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<VocabMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<Vec<String>>,
}

impl CheckpointMeta {
    /// Meta that matches `model` exactly; `vocab` and `lexicon` describe
    /// the preprocessing the model was trained with, when known.
    pub fn for_model(
        model: &MultitaskModel,
        model_label: &str,
        vocab: Option<&Vocabulary>,
        lexicon: Option<Vec<String>>,
    ) -> Self {
        CheckpointMeta {
            encoder: model.config().clone(),
            learning_rate: model.learning_rate(),
            model_label: model_label.to_string(),
            tasks: model.task_specs().to_vec(),
            vocab: vocab.map(VocabMeta::from_vocabulary),
            lexicon,
        }
    }
}

/// A vocabulary flattened for the sidecar: non-reserved tokens in id order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VocabMeta {
    pub tokens: Vec<String>,
    pub min_frequency: usize,
}

impl VocabMeta {
    pub fn from_vocabulary(vocab: &Vocabulary) -> Self {
        VocabMeta {
            tokens: vocab.non_reserved_tokens().to_vec(),
            min_frequency: vocab.min_frequency,
        }
    }

    pub fn to_vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::from_tokens(&self.tokens, self.min_frequency)
    }
}

/// A loaded checkpoint: the rebuilt model plus its sidecar.
#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub model: MultitaskModel,
    pub meta: CheckpointMeta,
}

/// Sidecar path `<path>.meta.json`.
pub fn meta_path_for(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

/// Serialize named tensors to `path` in the checkpoint layout.
pub fn write_tensor_records(path: &Path, records: &ParamSnapshot) -> Result<()> {
    let count = u32::try_from(records.len())
        .map_err(|_| Error::Parameter(format!("{} tensors exceed the u32 count", records.len())))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&count.to_le_bytes());
    for (name, shape, values) in records {
        let name_len = u16::try_from(name.len()).map_err(|_| {
            Error::Parameter(format!("tensor name of {} bytes exceeds the u16 field", name.len()))
        })?;
        let rank = u8::try_from(shape.len()).map_err(|_| {
            Error::Parameter(format!("tensor rank {} exceeds the u8 field", shape.len()))
        })?;
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::Parameter(format!(
                "tensor {name:?}: shape {shape:?} holds {numel} values, got {}",
                values.len()
            )));
        }
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &dim in shape {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for &v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

/// Strictly parse a checkpoint written by [`write_tensor_records`]. The
/// first malformed record aborts the parse with an error naming it.
pub fn read_tensor_records(path: &Path) -> Result<ParamSnapshot> {
    fn take<'a>(bytes: &'a [u8], cursor: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
        if bytes.len() - *cursor < n {
            return Err(Error::CorruptCheckpoint(format!(
                "{what}: file ends {n} byte(s) early at offset {cursor}"
            )));
        }
        let slice = &bytes[*cursor..*cursor + n];
        *cursor += n;
        Ok(slice)
    }

    let bytes = fs::read(path)?;
    let mut cursor = 0usize;

    let magic = take(&bytes, &mut cursor, 8, "header")?;
    if magic != MAGIC {
        return Err(Error::CorruptCheckpoint(format!(
            "header: magic {magic:?} is not {MAGIC:?}"
        )));
    }
    let count = u32::from_le_bytes(take(&bytes, &mut cursor, 4, "header")?.try_into().unwrap()) as usize;

    let mut records = Vec::with_capacity(count.min(4096));
    for i in 0..count {
        let record = format!("tensor record {i}");
        let name_len =
            u16::from_le_bytes(take(&bytes, &mut cursor, 2, &record)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(&bytes, &mut cursor, name_len, &record)?)
            .map_err(|_| Error::CorruptCheckpoint(format!("{record}: name is not UTF-8")))?
            .to_string();
        let record = format!("tensor record {i} ({name:?})");
        let rank = take(&bytes, &mut cursor, 1, &record)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let dim = u64::from_le_bytes(take(&bytes, &mut cursor, 8, &record)?.try_into().unwrap());
            shape.push(usize::try_from(dim).map_err(|_| {
                Error::CorruptCheckpoint(format!("{record}: dimension {dim} overflows"))
            })?);
        }
        let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or_else(
            || Error::CorruptCheckpoint(format!("{record}: shape {shape:?} overflows")),
        )?;
        let data_bytes = numel.checked_mul(4).ok_or_else(|| {
            Error::CorruptCheckpoint(format!("{record}: shape {shape:?} overflows"))
        })?;
        let raw = take(&bytes, &mut cursor, data_bytes, &record)?;
        let values = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        records.push((name, shape, values));
    }
    if cursor != bytes.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} trailing byte(s) after the last tensor record",
            bytes.len() - cursor
        )));
    }
    Ok(records)
}

/// Write the model's tensors to `path` and its sidecar to
/// `<path>.meta.json`.
pub fn save_checkpoint(model: &MultitaskModel, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    if meta.tasks != model.task_specs() {
        return Err(Error::Parameter(
            "checkpoint meta lists different tasks than the model".into(),
        ));
    }
    write_tensor_records(path, &model.snapshot())?;
    fs::write(meta_path_for(path), serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

/// Rebuild a model from `path` plus its sidecar. Nothing is returned unless
/// every tensor loads, so a failed load leaves no partial state behind.
pub fn load_checkpoint(path: &Path) -> Result<ModelBundle> {
    let meta_path = meta_path_for(path);
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| {
        Error::CorruptCheckpoint(format!("sidecar {}: {e}", meta_path.display()))
    })?;
    let meta: CheckpointMeta = serde_json::from_str(&meta_text).map_err(|e| {
        Error::CorruptCheckpoint(format!("sidecar {}: {e}", meta_path.display()))
    })?;

    let records = read_tensor_records(path)?;
    let mut model = MultitaskModel::new(&meta.encoder, meta.learning_rate, 0)?;
    for spec in &meta.tasks {
        model.register_task(spec, 0)?;
    }
    model.restore(&records)?;
    Ok(ModelBundle { model, meta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multitask::testutil::{rule_examples, toy_model};
    use crate::multitask::Batch;
    use crate::text::build_vocab;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn checkpoint_paths(dir: &tempfile::TempDir) -> PathBuf {
        dir.path().join("model.ckpt")
    }

    fn saved_toy(dir: &tempfile::TempDir) -> (MultitaskModel, PathBuf) {
        let mut model = toy_model(9);
        // A few steps so the tensors are not at init.
        let rows = rule_examples("HS", 2, 8, 33);
        let refs: Vec<_> = rows.iter().collect();
        let batch = Batch::from_examples("HS", &refs).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..3 {
            model.joint_step(&batch, &mut rng).unwrap();
        }
        let path = checkpoint_paths(dir);
        let meta = CheckpointMeta::for_model(&model, "MTL", None, None);
        save_checkpoint(&model, &meta, &path).unwrap();
        (model, path)
    }

    #[test]
    fn round_trip_is_bitwise_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (model, path) = saved_toy(&dir);
        let bundle = load_checkpoint(&path).unwrap();
        assert_eq!(bundle.model.snapshot(), model.snapshot());

        let rows = rule_examples("EMO", 3, 5, 44);
        let refs: Vec<_> = rows.iter().collect();
        let batch = Batch::from_examples("EMO", &refs).unwrap();
        let original = model.forward_task(&batch).unwrap().data();
        let reloaded = bundle.model.forward_task(&batch).unwrap().data();
        assert_eq!(original, reloaded, "forward outputs must match bitwise");
    }

    #[test]
    fn file_size_is_exactly_header_plus_records() {
        let dir = tempfile::tempdir().unwrap();
        let (model, path) = saved_toy(&dir);
        let expected: usize = 8
            + 4
            + model
                .snapshot()
                .iter()
                .map(|(name, shape, values)| 2 + name.len() + 1 + 8 * shape.len() + 4 * values.len())
                .sum::<usize>();
        assert_eq!(fs::metadata(&path).unwrap().len() as usize, expected);
    }

    #[test]
    fn magic_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (_, path) = saved_toy(&dir);
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path);
        assert!(matches!(err, Err(Error::CorruptCheckpoint(_))), "{err:?}");
    }

    #[test]
    fn every_truncation_point_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (_, path) = saved_toy(&dir);
        let bytes = fs::read(&path).unwrap();
        // Cutting anywhere (including mid-header and mid-record) must fail:
        // either the parse runs out of bytes or the tensor set mismatches.
        for cut in [0, 4, 8, 11, 13, 20, 60, bytes.len() / 2, bytes.len() - 5, bytes.len() - 1] {
            fs::write(&path, &bytes[..cut]).unwrap();
            let err = load_checkpoint(&path);
            assert!(
                matches!(err, Err(Error::CorruptCheckpoint(_))),
                "cut at {cut}: {err:?}"
            );
        }
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (_, path) = saved_toy(&dir);
        let mut bytes = fs::read(&path).unwrap();
        bytes.push(0);
        fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path);
        assert!(matches!(err, Err(Error::CorruptCheckpoint(_))), "{err:?}");
    }

    #[test]
    fn first_offending_record_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let (model, path) = saved_toy(&dir);
        // Truncate inside the second tensor's values.
        let snapshot = model.snapshot();
        let first_len = 2 + snapshot[0].0.len() + 1 + 8 * snapshot[0].1.len() + 4 * snapshot[0].2.len();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..8 + 4 + first_len + 10]).unwrap();
        match read_tensor_records(&path) {
            Err(Error::CorruptCheckpoint(msg)) => {
                assert!(msg.contains("tensor record 1"), "message was {msg:?}");
            }
            other => panic!("expected corrupt-checkpoint error, got {other:?}"),
        }
    }

    #[test]
    fn missing_or_mangled_sidecar_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (_, path) = saved_toy(&dir);
        let meta = meta_path_for(&path);
        let good = fs::read_to_string(&meta).unwrap();
        fs::write(&meta, "{not json").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::CorruptCheckpoint(_))));
        fs::remove_file(&meta).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::CorruptCheckpoint(_))));
        fs::write(&meta, good).unwrap();
        load_checkpoint(&path).unwrap();
    }

    #[test]
    fn shape_drift_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (model, path) = saved_toy(&dir);
        let mut snapshot = model.snapshot();
        // Swap two dims of the HS head weight; data length still matches.
        let pos = snapshot.iter().position(|(n, _, _)| n == "head.HS.weight").unwrap();
        snapshot[pos].1.swap(0, 1);
        write_tensor_records(&path, &snapshot).unwrap();
        let err = load_checkpoint(&path);
        assert!(matches!(err, Err(Error::CorruptCheckpoint(_))), "{err:?}");
    }

    #[test]
    fn meta_round_trips_vocab_and_lexicon() {
        let dir = tempfile::tempdir().unwrap();
        let mut model = toy_model(2);
        let rows = rule_examples("HS", 2, 4, 3);
        let refs: Vec<_> = rows.iter().collect();
        let batch = Batch::from_examples("HS", &refs).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        model.joint_step(&batch, &mut rng).unwrap();

        let vocab = build_vocab(["not racism here", "rain racism not"].iter().copied(), 1, 50)
            .unwrap();
        let meta = CheckpointMeta::for_model(
            &model,
            "STL",
            Some(&vocab),
            Some(vec!["not".into(), "racism".into()]),
        );
        let path = checkpoint_paths(&dir);
        save_checkpoint(&model, &meta, &path).unwrap();
        let bundle = load_checkpoint(&path).unwrap();
        assert_eq!(bundle.meta, meta);
        let rebuilt = bundle.meta.vocab.as_ref().unwrap().to_vocabulary().unwrap();
        assert_eq!(rebuilt.len(), vocab.len());
        assert_eq!(rebuilt.id("racism"), vocab.id("racism"));
    }

    #[test]
    fn stale_meta_cannot_be_saved() {
        let dir = tempfile::tempdir().unwrap();
        let model = toy_model(3);
        let mut meta = CheckpointMeta::for_model(&model, "MTL", None, None);
        meta.tasks.pop();
        let err = save_checkpoint(&model, &meta, &checkpoint_paths(&dir));
        assert!(matches!(err, Err(Error::Parameter(_))));
    }
}
