//! Hard-parameter-sharing multitask engine: task registry with per-task
//! softmax heads over one shared encoder, the batch interleaver, the joint
//! training loop with an STL baseline mode, and bit-exact checkpointing.

mod checkpoint;
mod loader;
mod model;
mod task;
mod train;

pub use checkpoint::{
    load_checkpoint, read_tensor_records, save_checkpoint, write_tensor_records, CheckpointMeta,
    ModelBundle, VocabMeta, MAGIC,
};
pub use loader::{Batch, MultitaskLoader, SamplerKind};
pub use model::{predict_encoded, MultitaskModel, Prediction};
pub use task::{DatasetBinding, TaskHead, TaskRole, TaskSpec};
pub use train::{
    evaluate, train, ParamSnapshot, TaskDataset, TrainLog, TrainLogEntry, TrainMode, TrainOutcome,
    TrainSettings,
};
