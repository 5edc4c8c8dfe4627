//! Batch construction and the multitask interleaver.
//!
//! Every task keeps its own pool of encoded examples; an epoch shuffles each
//! pool, chunks it into task-pure batches, and interleaves the batches of
//! all tasks in a seeded random order. With [`SamplerKind::Proportional`]
//! the interleaving is a uniform shuffle of the batch multiset, so a task
//! with `k` batches occupies exactly `k` slots — every batch of every task
//! is visited exactly once per epoch.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::text::EncodedExample;

/// How epoch slots are assigned to tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Shuffle the multiset of all task batches; slot counts are
    /// proportional to per-task batch counts by construction.
    Proportional,
    /// Each slot picks uniformly among the tasks that still have unvisited
    /// batches, so small tasks surface earlier than their share. Epochs
    /// still visit every batch exactly once.
    Uniform,
}

/// One task-pure training batch in encoder-ready layout: `ids` and `mask`
/// are row-major `[batch_size * seq_len]`, `labels` has `batch_size`
/// entries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub task: String,
    pub ids: Vec<usize>,
    pub mask: Vec<u8>,
    pub labels: Vec<usize>,
    pub batch_size: usize,
    pub seq_len: usize,
}

impl Batch {
    /// Pack examples (all of one task, all of one sequence length) into a
    /// batch.
    pub fn from_examples(task: &str, examples: &[&EncodedExample]) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Data(format!("batch for task {task:?} has no examples")));
        }
        let seq_len = examples[0].ids.len();
        let mut ids = Vec::with_capacity(examples.len() * seq_len);
        let mut mask = Vec::with_capacity(examples.len() * seq_len);
        let mut labels = Vec::with_capacity(examples.len());
        for ex in examples {
            if ex.task != task {
                return Err(Error::Data(format!(
                    "example tagged {:?} cannot join a {task:?} batch",
                    ex.task
                )));
            }
            if ex.ids.len() != seq_len || ex.attention_mask.len() != seq_len {
                return Err(Error::Data(format!(
                    "task {task:?} mixes sequence lengths {seq_len} and {}",
                    ex.ids.len()
                )));
            }
            ids.extend_from_slice(&ex.ids);
            mask.extend_from_slice(&ex.attention_mask);
            labels.push(ex.label);
        }
        Ok(Batch {
            task: task.to_string(),
            ids,
            mask,
            labels,
            batch_size: examples.len(),
            seq_len,
        })
    }
}

/// Combines one example pool per task into a single stream of task-tagged
/// batches.
#[derive(Clone, Debug)]
pub struct MultitaskLoader {
    tasks: Vec<(String, Vec<EncodedExample>)>,
    batch_size: usize,
    sampler: SamplerKind,
}

impl MultitaskLoader {
    pub fn new(batch_size: usize, sampler: SamplerKind) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Parameter("batch_size must be positive".into()));
        }
        Ok(MultitaskLoader { tasks: Vec::new(), batch_size, sampler })
    }

    /// Register a task's example pool. Order of registration fixes the
    /// order in which the epoch shuffles consume randomness, so it is part
    /// of the deterministic contract.
    pub fn add_task(&mut self, name: &str, examples: Vec<EncodedExample>) -> Result<()> {
        if self.tasks.iter().any(|(existing, _)| existing == name) {
            return Err(Error::Registry(format!("task {name:?} already has a loader")));
        }
        if let Some(stray) = examples.iter().find(|ex| ex.task != name) {
            return Err(Error::Data(format!(
                "loader for {name:?} given an example tagged {:?}",
                stray.task
            )));
        }
        self.tasks.push((name.to_string(), examples));
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Number of batches each task contributes to one epoch, in
    /// registration order.
    pub fn batches_per_task(&self) -> Vec<(String, usize)> {
        self.tasks
            .iter()
            .map(|(name, examples)| (name.clone(), examples.len().div_ceil(self.batch_size)))
            .collect()
    }

    /// Produce one epoch: every batch of every task exactly once, in a
    /// seeded random interleaving.
    pub fn epoch<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<Batch>> {
        if self.tasks.iter().all(|(_, examples)| examples.is_empty()) {
            return Err(Error::Data("every task loader is empty".into()));
        }
        // Per-task: shuffle the example order, then chunk. Registration
        // order fixes RNG consumption.
        let mut queues: Vec<std::collections::VecDeque<Batch>> = Vec::new();
        for (name, examples) in &self.tasks {
            let mut order: Vec<usize> = (0..examples.len()).collect();
            order.shuffle(rng);
            let queue = order
                .chunks(self.batch_size)
                .map(|chunk| {
                    let rows: Vec<&EncodedExample> = chunk.iter().map(|&i| &examples[i]).collect();
                    Batch::from_examples(name, &rows)
                })
                .collect::<Result<_>>()?;
            queues.push(queue);
        }

        let mut tags: Vec<usize> = Vec::new();
        match self.sampler {
            SamplerKind::Proportional => {
                for (i, queue) in queues.iter().enumerate() {
                    tags.extend(std::iter::repeat(i).take(queue.len()));
                }
                tags.shuffle(rng);
            }
            SamplerKind::Uniform => {
                let mut remaining: Vec<usize> = queues.iter().map(|q| q.len()).collect();
                let mut alive: Vec<usize> =
                    (0..queues.len()).filter(|&i| remaining[i] > 0).collect();
                while !alive.is_empty() {
                    let pick = alive[rng.gen_range(0..alive.len())];
                    tags.push(pick);
                    remaining[pick] -= 1;
                    if remaining[pick] == 0 {
                        alive.retain(|&i| i != pick);
                    }
                }
            }
        }

        Ok(tags
            .into_iter()
            .map(|i| queues[i].pop_front().expect("tag counts match queue lengths"))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn example(task: &str, label: usize, fill: usize) -> EncodedExample {
        EncodedExample {
            ids: vec![2, fill, 3, 0],
            attention_mask: vec![1, 1, 1, 0],
            label,
            task: task.to_string(),
        }
    }

    fn pool(task: &str, n: usize) -> Vec<EncodedExample> {
        (0..n).map(|i| example(task, i % 2, 4 + i % 3)).collect()
    }

    fn two_task_loader(n_a: usize, n_b: usize, sampler: SamplerKind) -> MultitaskLoader {
        let mut loader = MultitaskLoader::new(2, sampler).unwrap();
        loader.add_task("A", pool("A", n_a)).unwrap();
        loader.add_task("B", pool("B", n_b)).unwrap();
        loader
    }

    #[test]
    fn epoch_is_the_exact_batch_multiset() {
        // 4 examples -> 2 batches of A; 12 -> 6 of B.
        let loader = two_task_loader(4, 12, SamplerKind::Proportional);
        assert_eq!(
            loader.batches_per_task(),
            vec![("A".to_string(), 2), ("B".to_string(), 6)]
        );
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let epoch = loader.epoch(&mut rng).unwrap();
            assert_eq!(epoch.len(), 8);
            let a = epoch.iter().filter(|b| b.task == "A").count();
            let b = epoch.iter().filter(|b| b.task == "B").count();
            assert_eq!((a, b), (2, 6));
        }
    }

    #[test]
    fn epoch_visits_every_example_exactly_once() {
        let loader = two_task_loader(5, 3, SamplerKind::Proportional);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let epoch = loader.epoch(&mut rng).unwrap();
        // 5 -> batches of 2+2+1, 3 -> 2+1.
        let rows: usize = epoch.iter().map(|b| b.batch_size).sum();
        assert_eq!(rows, 8);
        assert!(epoch.iter().all(|b| b.batch_size <= 2));
        assert!(epoch.iter().all(|b| b.ids.len() == b.batch_size * b.seq_len));
    }

    #[test]
    fn batches_are_task_pure_and_label_aligned() {
        let loader = two_task_loader(4, 2, SamplerKind::Proportional);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for batch in loader.epoch(&mut rng).unwrap() {
            assert_eq!(batch.labels.len(), batch.batch_size);
            assert_eq!(batch.seq_len, 4);
        }
    }

    #[test]
    fn single_task_degenerates_to_shuffled_batches() {
        let mut loader = MultitaskLoader::new(2, SamplerKind::Proportional).unwrap();
        loader.add_task("A", pool("A", 6)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let epoch = loader.epoch(&mut rng).unwrap();
        assert_eq!(epoch.len(), 3);
        assert!(epoch.iter().all(|b| b.task == "A"));
    }

    #[test]
    fn same_seed_same_epoch() {
        let loader = two_task_loader(6, 4, SamplerKind::Proportional);
        let mut r1 = ChaCha8Rng::seed_from_u64(42);
        let mut r2 = ChaCha8Rng::seed_from_u64(42);
        assert_eq!(loader.epoch(&mut r1).unwrap(), loader.epoch(&mut r2).unwrap());
    }

    #[test]
    fn uniform_sampler_still_visits_everything() {
        let loader = two_task_loader(2, 10, SamplerKind::Uniform);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let epoch = loader.epoch(&mut rng).unwrap();
        assert_eq!(epoch.len(), 6);
        assert_eq!(epoch.iter().filter(|b| b.task == "A").count(), 1);
        assert_eq!(epoch.iter().filter(|b| b.task == "B").count(), 5);
    }

    #[test]
    fn uniform_sampler_fronts_small_tasks_more_often() {
        // With {1, 3} batches, proportional puts A first 1/4 of the time,
        // uniform 1/2. Check both frequencies over seeded epochs.
        let prop = two_task_loader(1, 6, SamplerKind::Proportional);
        let unif = two_task_loader(1, 6, SamplerKind::Uniform);
        let mut first_a_prop = 0;
        let mut first_a_unif = 0;
        let trials = 4000;
        for seed in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            if prop.epoch(&mut rng).unwrap()[0].task == "A" {
                first_a_prop += 1;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            if unif.epoch(&mut rng).unwrap()[0].task == "A" {
                first_a_unif += 1;
            }
        }
        let f_prop = first_a_prop as f64 / trials as f64;
        let f_unif = first_a_unif as f64 / trials as f64;
        assert!((f_prop - 0.25).abs() < 0.03, "proportional first-A {f_prop}");
        assert!((f_unif - 0.5).abs() < 0.03, "uniform first-A {f_unif}");
    }

    #[test]
    fn empty_everything_is_a_data_error() {
        let mut loader = MultitaskLoader::new(4, SamplerKind::Proportional).unwrap();
        loader.add_task("A", Vec::new()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(loader.epoch(&mut rng), Err(Error::Data(_))));
    }

    #[test]
    fn one_empty_pool_is_fine_if_another_has_rows() {
        let mut loader = MultitaskLoader::new(4, SamplerKind::Proportional).unwrap();
        loader.add_task("A", Vec::new()).unwrap();
        loader.add_task("B", pool("B", 3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let epoch = loader.epoch(&mut rng).unwrap();
        assert_eq!(epoch.len(), 1);
        assert_eq!(epoch[0].task, "B");
    }

    #[test]
    fn rejects_duplicate_tasks_and_mislabeled_examples() {
        let mut loader = MultitaskLoader::new(2, SamplerKind::Proportional).unwrap();
        loader.add_task("A", pool("A", 2)).unwrap();
        assert!(matches!(loader.add_task("A", pool("A", 1)), Err(Error::Registry(_))));
        assert!(matches!(loader.add_task("B", pool("C", 1)), Err(Error::Data(_))));
        assert!(matches!(
            MultitaskLoader::new(0, SamplerKind::Proportional),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn mixed_sequence_lengths_are_rejected() {
        let mut long = example("A", 0, 4);
        long.ids.push(0);
        long.attention_mask.push(0);
        let short = example("A", 1, 5);
        let err = Batch::from_examples("A", &[&long, &short]);
        assert!(matches!(err, Err(Error::Data(_))));
    }
}
