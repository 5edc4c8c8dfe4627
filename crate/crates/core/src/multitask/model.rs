//! The shared-encoder multitask model and its per-batch update step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

use super::loader::Batch;
use super::task::{TaskHead, TaskSpec};
use crate::encoder::{encode, init_encoder, pool_cls, EncoderConfig, EncoderState, INIT_STD};
use crate::error::{Error, Result};
use crate::tensor::{adam_step, real, AdamState, Tensor};
use crate::text::{Preprocessor, Vocabulary};

/// One encoder, any number of task heads. All tasks read and update the
/// same encoder tensors (hard parameter sharing); each head belongs to
/// exactly one task and is updated only by that task's batches.
#[derive(Clone, Debug)]
pub struct MultitaskModel {
    config: EncoderConfig,
    encoder: EncoderState,
    tasks: Vec<TaskSpec>,
    heads: Vec<TaskHead>,
    optimizer: BTreeMap<String, AdamState>,
    learning_rate: f32,
}

impl MultitaskModel {
    /// Initialize the shared encoder and an empty task registry.
    pub fn new(config: &EncoderConfig, learning_rate: f32, seed: u64) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::Parameter(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        let encoder = init_encoder(config, seed)?;
        let mut optimizer = BTreeMap::new();
        for (name, tensor) in encoder.named_parameters() {
            optimizer.insert(format!("encoder.{name}"), AdamState::new(tensor.numel(), learning_rate));
        }
        Ok(MultitaskModel {
            config: config.clone(),
            encoder,
            tasks: Vec::new(),
            heads: Vec::new(),
            optimizer,
            learning_rate,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn learning_rate(&self) -> f32 {
        self.learning_rate
    }

    /// The one shared encoder. Callers can audit hard sharing by comparing
    /// [`Tensor::ptr_id`]s of these parameters across tasks.
    pub fn encoder(&self) -> &EncoderState {
        &self.encoder
    }

    /// Registered specs, in registration order.
    pub fn task_specs(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn task_spec(&self, task: &str) -> Result<&TaskSpec> {
        self.tasks
            .iter()
            .find(|spec| spec.name == task)
            .ok_or_else(|| Error::Registry(format!("task {task:?} is not registered")))
    }

    pub fn head(&self, task: &str) -> Result<&TaskHead> {
        let idx = self
            .tasks
            .iter()
            .position(|spec| spec.name == task)
            .ok_or_else(|| Error::Registry(format!("task {task:?} is not registered")))?;
        Ok(&self.heads[idx])
    }

    /// Add a task: a fresh `Normal(0, 0.02)` weight matrix `[d_model, C]`,
    /// a zero bias, and optimizer slots for both.
    pub fn register_task(&mut self, spec: &TaskSpec, seed: u64) -> Result<()> {
        spec.validate()?;
        if self.tasks.iter().any(|existing| existing.name == spec.name) {
            return Err(Error::Registry(format!("task {:?} already registered", spec.name)));
        }
        let d = self.config.d_model;
        let c = spec.num_classes();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head = TaskHead {
            weight: Tensor::randn(&[d, c], real::<f32>(INIT_STD), &mut rng).requires_grad(),
            bias: Tensor::zeros(&[c]).requires_grad(),
        };
        for (name, tensor) in head.named_parameters(&spec.name) {
            self.optimizer.insert(name, AdamState::new(tensor.numel(), self.learning_rate));
        }
        self.tasks.push(spec.clone());
        self.heads.push(head);
        Ok(())
    }

    /// Every trainable parameter with its checkpoint name: the encoder under
    /// `encoder.`, then each head under `head.<task>.`, in registration
    /// order. Handles alias the live tensors.
    pub fn named_parameters(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .encoder
            .named_parameters()
            .into_iter()
            .map(|(name, t)| (format!("encoder.{name}"), t))
            .collect();
        for (spec, head) in self.tasks.iter().zip(&self.heads) {
            out.extend(head.named_parameters(&spec.name));
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_parameters().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Class probabilities `[B, C]` for a batch of encoded sequences.
    /// Training mode applies dropout (consuming `rng`); evaluation mode is
    /// deterministic.
    pub fn forward_probs<R: Rng + ?Sized>(
        &self,
        task: &str,
        ids: &[usize],
        mask: &[u8],
        batch: usize,
        training: bool,
        rng: &mut R,
    ) -> Result<Tensor> {
        let head = self.head(task)?;
        let hidden = encode(&self.encoder, &self.config, ids, mask, batch, training, rng)?;
        let pooled = pool_cls(&hidden)?;
        pooled.matmul(&head.weight)?.add_bias(&head.bias)?.softmax()
    }

    /// Evaluation-mode forward pass over one batch.
    pub fn forward_task(&self, batch: &Batch) -> Result<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(0); // never consumed without dropout
        self.forward_probs(&batch.task, &batch.ids, &batch.mask, batch.batch_size, false, &mut rng)
    }

    /// One training step on one task-pure batch: forward with dropout,
    /// cross-entropy, backward, then Adam on the encoder and the owning
    /// head only. Other heads are outside the graph and receive neither
    /// gradient nor update. Returns the batch loss.
    pub fn joint_step<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<f32> {
        let spec = self.task_spec(&batch.task)?;
        if batch.labels.len() != batch.batch_size {
            return Err(Error::Data(format!(
                "batch carries {} labels for {} rows",
                batch.labels.len(),
                batch.batch_size
            )));
        }
        if let Some(bad) = batch.labels.iter().find(|&&l| l >= spec.num_classes()) {
            return Err(Error::Label(format!(
                "label id {bad} outside task {:?} with {} classes",
                batch.task,
                spec.num_classes()
            )));
        }

        let stepped: Vec<(String, Tensor)> = self
            .encoder
            .named_parameters()
            .into_iter()
            .map(|(name, t)| (format!("encoder.{name}"), t))
            .chain(self.head(&batch.task)?.named_parameters(&batch.task))
            .collect();
        for (_, tensor) in &stepped {
            tensor.zero_grad();
        }

        let probs =
            self.forward_probs(&batch.task, &batch.ids, &batch.mask, batch.batch_size, true, rng)?;
        let loss = probs.cross_entropy(&batch.labels)?;
        let loss_value = loss.item()?;
        loss.backward()?;

        for (name, tensor) in &stepped {
            let state = self
                .optimizer
                .get_mut(name)
                .ok_or_else(|| Error::OptimizerState(format!("no optimizer slot for {name}")))?;
            adam_step(tensor, state)?;
        }
        Ok(loss_value)
    }

    /// Copy out every parameter (name, shape, values) in checkpoint order.
    pub fn snapshot(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        self.named_parameters()
            .into_iter()
            .map(|(name, t)| (name, t.shape(), t.data()))
            .collect()
    }

    /// Overwrite parameters from a snapshot. Every record must match a
    /// registered parameter in name and shape, and every parameter must be
    /// covered; any mismatch aborts with no parameter written.
    pub fn restore(&mut self, snapshot: &[(String, Vec<usize>, Vec<f32>)]) -> Result<()> {
        let params: BTreeMap<String, Tensor> = self.named_parameters().into_iter().collect();
        if snapshot.len() != params.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "{} tensors in checkpoint, model has {}",
                snapshot.len(),
                params.len()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (name, shape, values) in snapshot {
            let tensor = params.get(name).ok_or_else(|| {
                Error::CorruptCheckpoint(format!("tensor {name:?}: no such model parameter"))
            })?;
            if !seen.insert(name.clone()) {
                return Err(Error::CorruptCheckpoint(format!("tensor {name:?} appears twice")));
            }
            if tensor.shape() != *shape || tensor.numel() != values.len() {
                return Err(Error::CorruptCheckpoint(format!(
                    "tensor {name:?}: shape {shape:?} does not match model shape {:?}",
                    tensor.shape()
                )));
            }
        }
        for (name, _, values) in snapshot {
            params[name].set_data(values)?;
        }
        Ok(())
    }
}

/// Index of the largest probability; ties break toward the lowest class id.
pub(crate) fn argmax_lowest(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &p) in row.iter().enumerate().skip(1) {
        if p > row[best] {
            best = i;
        }
    }
    best
}

/// Outcome of classifying one text.
#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    /// The text normalized to fewer than two tokens; it is flagged instead
    /// of being silently classified.
    Rejected,
    Label { class_id: usize, label: String, probs: Vec<f32> },
}

/// Classify raw texts under one task: preprocess, encode against `vocab`,
/// run the shared model, and take the argmax (ties toward the lowest class
/// id). Texts that normalize to fewer than two tokens come back
/// [`Prediction::Rejected`].
pub fn predict_encoded(
    model: &MultitaskModel,
    task: &str,
    texts: &[String],
    preprocessor: &Preprocessor,
    vocab: &Vocabulary,
) -> Result<Vec<Prediction>> {
    let spec = model.task_spec(task)?.clone();
    let max_seq_len = model.config().max_seq_len;
    let mut out = vec![Prediction::Rejected; texts.len()];
    let mut kept: Vec<(usize, crate::text::EncodedText)> = Vec::new();
    for (i, text) in texts.iter().enumerate() {
        let clean = preprocessor.preprocess(text);
        if clean.is_empty() {
            continue;
        }
        kept.push((i, vocab.encode(&clean, max_seq_len)?));
    }
    for chunk in kept.chunks(32) {
        let mut ids = Vec::new();
        let mut mask = Vec::new();
        for (_, enc) in chunk {
            ids.extend_from_slice(&enc.ids);
            mask.extend_from_slice(&enc.attention_mask);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let probs = model.forward_probs(task, &ids, &mask, chunk.len(), false, &mut rng)?;
        let flat = probs.data();
        let c = spec.num_classes();
        for (row, (slot, _)) in chunk.iter().enumerate() {
            let row = &flat[row * c..(row + 1) * c];
            let class_id = argmax_lowest(row);
            out[*slot] = Prediction::Label {
                class_id,
                label: spec.label_names[class_id].clone(),
                probs: row.to_vec(),
            };
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multitask::task::TaskRole;
    use crate::text::EncodedExample;

    fn toy_config(vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            n_layers: 1,
            max_seq_len: 8,
            dropout_p: 0.0,
            layernorm_eps: 1e-5,
        }
    }

    fn toy_model() -> MultitaskModel {
        let mut model = MultitaskModel::new(&toy_config(12), 1e-3, 5).unwrap();
        model
            .register_task(&TaskSpec::new("HS", &["hate", "none"], TaskRole::Main), 6)
            .unwrap();
        model
            .register_task(
                &TaskSpec::new("EMO", &["joy", "anger", "fear", "sad"], TaskRole::Auxiliary),
                7,
            )
            .unwrap();
        model
    }

    fn toy_batch(task: &str, labels: &[usize]) -> Batch {
        let examples: Vec<EncodedExample> = labels
            .iter()
            .enumerate()
            .map(|(i, &label)| EncodedExample {
                ids: vec![2, 4 + (i % 7), 5, 3],
                attention_mask: vec![1, 1, 1, 1],
                label,
                task: task.to_string(),
            })
            .collect();
        let refs: Vec<&EncodedExample> = examples.iter().collect();
        Batch::from_examples(task, &refs).unwrap()
    }

    #[test]
    fn registration_grows_the_parameter_set_by_dc_plus_c() {
        let model = toy_model();
        let encoder_params = model.encoder().parameter_count();
        assert_eq!(
            model.parameter_count(),
            encoder_params + (8 * 2 + 2) + (8 * 4 + 4)
        );
        assert_eq!(model.head("HS").unwrap().weight.shape(), vec![8, 2]);
        assert_eq!(model.head("EMO").unwrap().weight.shape(), vec![8, 4]);
    }

    #[test]
    fn duplicate_registration_is_a_registry_error() {
        let mut model = toy_model();
        let again = TaskSpec::new("HS", &["hate", "none"], TaskRole::Main);
        assert!(matches!(model.register_task(&again, 9), Err(Error::Registry(_))));
    }

    #[test]
    fn unknown_task_is_a_registry_error() {
        let model = toy_model();
        let batch = toy_batch("OFF", &[0, 1]);
        assert!(matches!(model.forward_task(&batch), Err(Error::Registry(_))));
    }

    #[test]
    fn probabilities_are_rows_of_a_simplex() {
        let model = toy_model();
        let batch = toy_batch("EMO", &[0, 1, 2]);
        let probs = model.forward_task(&batch).unwrap();
        assert_eq!(probs.shape(), vec![3, 4]);
        let data = probs.data();
        for row in data.chunks(4) {
            let sum: f32 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6, "row sums to {sum}");
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn zeroed_head_predicts_uniformly() {
        let model = toy_model();
        let head = model.head("EMO").unwrap();
        head.weight.set_data(&vec![0.0; 8 * 4]).unwrap();
        head.bias.set_data(&vec![0.0; 4]).unwrap();
        let probs = model.forward_task(&toy_batch("EMO", &[0])).unwrap();
        for &p in &probs.data() {
            assert!((p - 0.25).abs() < 1e-6);
        }
    }

    #[test]
    fn step_on_one_task_leaves_other_heads_bitwise_unchanged() {
        let mut model = toy_model();
        let emo_w = model.head("EMO").unwrap().weight.data();
        let emo_b = model.head("EMO").unwrap().bias.data();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        model.joint_step(&toy_batch("HS", &[0, 1, 1]), &mut rng).unwrap();
        assert_eq!(model.head("EMO").unwrap().weight.data(), emo_w);
        assert_eq!(model.head("EMO").unwrap().bias.data(), emo_b);
    }

    #[test]
    fn every_task_step_moves_the_shared_encoder() {
        let mut model = toy_model();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for task in ["HS", "EMO"] {
            let before = model.encoder().token_embedding.data();
            model.joint_step(&toy_batch(task, &[0, 1]), &mut rng).unwrap();
            assert_ne!(model.encoder().token_embedding.data(), before, "task {task}");
        }
    }

    #[test]
    fn repeated_identical_batch_loss_descends() {
        // Adam makes fixed-size moves, so tiny transient rises (~1e-4)
        // around the ln 2 plateau are expected; what must hold is bounded
        // per-step backsliding and a strong overall descent.
        let mut model = toy_model();
        let batch = toy_batch("HS", &[0, 1, 0, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let first = model.joint_step(&batch, &mut rng).unwrap();
        let mut last = first;
        for step in 1..50 {
            let loss = model.joint_step(&batch, &mut rng).unwrap();
            assert!(loss <= last + 1e-3, "loss rose {last} -> {loss} at step {step}");
            last = loss;
        }
        assert!(last < first * 0.75, "loss barely moved: {first} -> {last}");
    }

    #[test]
    fn bad_labels_are_rejected_before_any_update() {
        let mut model = toy_model();
        let before = model.snapshot();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let err = model.joint_step(&toy_batch("HS", &[0, 2]), &mut rng);
        assert!(matches!(err, Err(Error::Label(_))));
        let after = model.snapshot();
        assert_eq!(before, after);
    }

    #[test]
    fn snapshot_restore_round_trips_bitwise() {
        let mut model = toy_model();
        let saved = model.snapshot();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        model.joint_step(&toy_batch("HS", &[1, 0]), &mut rng).unwrap();
        assert_ne!(model.snapshot(), saved);
        model.restore(&saved).unwrap();
        assert_eq!(model.snapshot(), saved);
    }

    #[test]
    fn restore_rejects_mismatches_without_partial_writes() {
        let mut model = toy_model();
        let good = model.snapshot();
        let mut wrong_shape = good.clone();
        wrong_shape[3].1 = vec![1, 1];
        assert!(matches!(model.restore(&wrong_shape), Err(Error::CorruptCheckpoint(_))));
        let mut wrong_name = good.clone();
        wrong_name[0].0 = "encoder.nonexistent".into();
        assert!(matches!(model.restore(&wrong_name), Err(Error::CorruptCheckpoint(_))));
        let mut short = good.clone();
        short.pop();
        assert!(matches!(model.restore(&short), Err(Error::CorruptCheckpoint(_))));
        assert_eq!(model.snapshot(), good, "failed restores must not write");
    }

    #[test]
    fn argmax_breaks_ties_toward_lowest_index() {
        assert_eq!(argmax_lowest(&[0.25, 0.25, 0.25, 0.25]), 0);
        assert_eq!(argmax_lowest(&[0.1, 0.45, 0.45]), 1);
        assert_eq!(argmax_lowest(&[0.2, 0.3, 0.5]), 2);
    }

    #[test]
    fn predict_rejects_texts_that_normalize_away() {
        let model = toy_model();
        let vocab = crate::text::build_vocab(
            ["good day sun", "bad day rain"].iter().copied(),
            1,
            100,
        )
        .unwrap();
        let pre = Preprocessor::new();
        let texts = vec!["good day".to_string(), "!!!".to_string(), "bad rain".to_string()];
        let preds = predict_encoded(&model, "HS", &texts, &pre, &vocab).unwrap();
        assert!(matches!(preds[0], Prediction::Label { .. }));
        assert_eq!(preds[1], Prediction::Rejected);
        assert!(matches!(preds[2], Prediction::Label { .. }));
        if let Prediction::Label { probs, .. } = &preds[0] {
            let sum: f32 = probs.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }
}
