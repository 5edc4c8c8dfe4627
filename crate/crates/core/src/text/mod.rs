//! Text ingestion and normalization: the tweet-cleaning pipeline,
//! vocabulary construction and id encoding, and CSV corpus loading with
//! deterministic train/validation splits.

mod dataset;
mod preprocess;
mod vocab;

pub use dataset::{load_csv, split_train_val, CsvSchema, Example, LoadOutcome, RejectedRow};
pub use preprocess::Preprocessor;
pub use vocab::{
    build_vocab, EncodedText, Vocabulary, CLS_ID, CLS_TOKEN, PAD_ID, PAD_TOKEN, SEP_ID, SEP_TOKEN,
    UNK_ID, UNK_TOKEN,
};

/// A token-id sequence plus attention mask and supervision, ready for the
/// encoder. `ids` has length `max_seq_len` exactly: CLS, the (possibly
/// truncated) token ids, SEP, then PAD; `mask[i] = 1` iff `ids[i]` is
/// non-PAD.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedExample {
    pub ids: Vec<usize>,
    pub attention_mask: Vec<u8>,
    pub label: usize,
    pub task: String,
}
