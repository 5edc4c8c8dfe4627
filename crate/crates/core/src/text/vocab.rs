//! Whitespace-token vocabulary and fixed-length id encoding.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const SEP_ID: usize = 3;

pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const CLS_TOKEN: &str = "[CLS]";
pub const SEP_TOKEN: &str = "[SEP]";

const RESERVED: [&str; 4] = [PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN];

/// An unlabeled encoded text: fixed-length ids plus the attention mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedText {
    pub ids: Vec<usize>,
    pub attention_mask: Vec<u8>,
}

/// Token/id bijection with the four reserved ids pinned at 0..=3.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
    pub min_frequency: usize,
}

impl Vocabulary {
    /// Rebuild a vocabulary from its non-reserved tokens in id order
    /// (id 4 first). Used when loading checkpoints.
    pub fn from_tokens(tokens: &[String], min_frequency: usize) -> Result<Self> {
        let mut id_to_token: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(tokens.iter().cloned());
        let mut token_to_id = HashMap::with_capacity(id_to_token.len());
        for (id, tok) in id_to_token.iter().enumerate() {
            if token_to_id.insert(tok.clone(), id).is_some() {
                return Err(Error::Ingestion(format!("duplicate vocabulary token {tok:?}")));
            }
        }
        Ok(Vocabulary { token_to_id, id_to_token, min_frequency })
    }

    /// Total size including the four reserved entries.
    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the reserved entries are always present
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    /// Non-reserved tokens in id order (id 4 first).
    pub fn non_reserved_tokens(&self) -> &[String] {
        &self.id_to_token[RESERVED.len()..]
    }

    /// Encode preprocessed text into `[CLS] tokens [SEP] pad...` of length
    /// exactly `max_seq_len`, truncating to `max_seq_len - 2` tokens and
    /// mapping out-of-vocabulary tokens to UNK.
    pub fn encode(&self, text: &str, max_seq_len: usize) -> Result<EncodedText> {
        if max_seq_len < 3 {
            return Err(Error::Config(format!(
                "max_seq_len must be at least 3 (CLS + token + SEP), got {max_seq_len}"
            )));
        }
        let mut ids = Vec::with_capacity(max_seq_len);
        ids.push(CLS_ID);
        for token in text.split_whitespace().take(max_seq_len - 2) {
            ids.push(self.id(token).unwrap_or(UNK_ID));
        }
        ids.push(SEP_ID);
        let used = ids.len();
        ids.resize(max_seq_len, PAD_ID);
        let mut attention_mask = vec![1u8; used];
        attention_mask.resize(max_seq_len, 0);
        Ok(EncodedText { ids, attention_mask })
    }
}

/// Build a vocabulary from preprocessed texts: tokens with frequency at
/// least `min_frequency`, most frequent first, ties broken lexicographically,
/// capped at `max_size` total entries (the reserved four included).
pub fn build_vocab<'a, I>(texts: I, min_frequency: usize, max_size: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts: HashMap<String, u64> = HashMap::new();
    let mut saw_text = false;
    for text in texts {
        saw_text = true;
        for token in text.split_whitespace() {
            *counts.entry(token.to_string()).or_insert(0) += 1;
        }
    }
    if !saw_text {
        return Err(Error::Ingestion("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut ranked: Vec<(String, u64)> =
        counts.into_iter().filter(|(_, c)| *c as usize >= min_frequency).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let budget = max_size.saturating_sub(RESERVED.len());
    let tokens: Vec<String> = ranked.into_iter().take(budget).map(|(t, _)| t).collect();
    Vocabulary::from_tokens(&tokens, min_frequency)
}
