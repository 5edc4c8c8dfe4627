//! A compact BERT-style sentence encoder.
//!
//! Token and learned absolute position embeddings feed `n_layers`
//! transformer blocks (multi-head scaled dot-product self-attention and a
//! GELU feed-forward, each wrapped in a post-layernorm residual), and the
//! hidden state at the reserved first (CLS) position serves as the sentence
//! representation. PAD positions are excluded from attention by adding
//! `-1e9` to their key scores before the softmax, which makes every output
//! at an unmasked position invariant to the ids stored in PAD slots.
//!
//! The encoder is generic over the tensor scalar so its gradients can be
//! verified with `f64` finite differences; production models use `f32`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{real, Real, Tensor};

/// Additive score for masked (PAD) key positions.
pub const MASK_SCORE: f64 = -1e9;

/// Standard deviation of the weight initialization.
pub const INIT_STD: f64 = 0.02;

/// Architecture hyperparameters of the shared encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_layers: usize,
    pub max_seq_len: usize,
    pub dropout_p: f64,
    pub layernorm_eps: f64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("n_layers", self.n_layers),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("encoder.{name} must be positive")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "encoder.d_model ({}) must be divisible by encoder.n_heads ({})",
                self.d_model, self.n_heads
            )));
        }
        if self.max_seq_len < 3 {
            return Err(Error::Config(format!(
                "encoder.max_seq_len must be at least 3, got {}",
                self.max_seq_len
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "encoder.dropout_p must be in [0, 1), got {}",
                self.dropout_p
            )));
        }
        if self.layernorm_eps <= 0.0 {
            return Err(Error::Config("encoder.layernorm_eps must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Projection weights of one attention sublayer.
#[derive(Clone, Debug)]
pub struct AttentionParams<T: Real = f32> {
    pub wq: Tensor<T>,
    pub bq: Tensor<T>,
    pub wk: Tensor<T>,
    pub bk: Tensor<T>,
    pub wv: Tensor<T>,
    pub bv: Tensor<T>,
    pub wo: Tensor<T>,
    pub bo: Tensor<T>,
}

/// Parameters of one transformer block.
#[derive(Clone, Debug)]
pub struct LayerParams<T: Real = f32> {
    pub attn: AttentionParams<T>,
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
    pub ln1_gamma: Tensor<T>,
    pub ln1_beta: Tensor<T>,
    pub ln2_gamma: Tensor<T>,
    pub ln2_beta: Tensor<T>,
}

/// All trainable tensors of the encoder. A multitask model owns exactly one
/// of these; every task head reads the same tensors (hard parameter
/// sharing), which callers can audit via [`Tensor::ptr_id`] on
/// [`EncoderState::named_parameters`].
#[derive(Clone, Debug)]
pub struct EncoderState<T: Real = f32> {
    pub token_embedding: Tensor<T>,
    pub position_embedding: Tensor<T>,
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Real> EncoderState<T> {
    /// Every parameter with its canonical name, in a fixed order. The
    /// returned handles alias the live parameters.
    pub fn named_parameters(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = vec![
            ("token_embedding".to_string(), self.token_embedding.clone()),
            ("position_embedding".to_string(), self.position_embedding.clone()),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            let attn = &layer.attn;
            let entries: [(&str, &Tensor<T>); 16] = [
                ("attn.wq", &attn.wq),
                ("attn.bq", &attn.bq),
                ("attn.wk", &attn.wk),
                ("attn.bk", &attn.bk),
                ("attn.wv", &attn.wv),
                ("attn.bv", &attn.bv),
                ("attn.wo", &attn.wo),
                ("attn.bo", &attn.bo),
                ("ffn.w1", &layer.w1),
                ("ffn.b1", &layer.b1),
                ("ffn.w2", &layer.w2),
                ("ffn.b2", &layer.b2),
                ("ln1.gamma", &layer.ln1_gamma),
                ("ln1.beta", &layer.ln1_beta),
                ("ln2.gamma", &layer.ln2_gamma),
                ("ln2.beta", &layer.ln2_beta),
            ];
            for (suffix, tensor) in entries {
                out.push((format!("layer.{i}.{suffix}"), (*tensor).clone()));
            }
        }
        out
    }

    /// Total number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.named_parameters().iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Initialize encoder parameters: weights from `Normal(0, 0.02)`, biases and
/// layernorm shifts zero, layernorm scales one. Deterministic in `seed`.
pub fn init_encoder<T: Real>(config: &EncoderConfig, seed: u64) -> Result<EncoderState<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = real::<T>(INIT_STD);
    let d = config.d_model;
    let mut weight = |shape: &[usize]| Tensor::randn(shape, std, &mut rng).requires_grad();
    let token_embedding = weight(&[config.vocab_size, d]);
    let position_embedding = weight(&[config.max_seq_len, d]);
    let mut layers = Vec::with_capacity(config.n_layers);
    for _ in 0..config.n_layers {
        let attn = AttentionParams {
            wq: weight(&[d, d]),
            bq: Tensor::zeros(&[d]).requires_grad(),
            wk: weight(&[d, d]),
            bk: Tensor::zeros(&[d]).requires_grad(),
            wv: weight(&[d, d]),
            bv: Tensor::zeros(&[d]).requires_grad(),
            wo: weight(&[d, d]),
            bo: Tensor::zeros(&[d]).requires_grad(),
        };
        layers.push(LayerParams {
            attn,
            w1: weight(&[d, config.d_ff]),
            b1: Tensor::zeros(&[config.d_ff]).requires_grad(),
            w2: weight(&[config.d_ff, d]),
            b2: Tensor::zeros(&[d]).requires_grad(),
            ln1_gamma: Tensor::full(&[d], T::one()).requires_grad(),
            ln1_beta: Tensor::zeros(&[d]).requires_grad(),
            ln2_gamma: Tensor::full(&[d], T::one()).requires_grad(),
            ln2_beta: Tensor::zeros(&[d]).requires_grad(),
        });
    }
    Ok(EncoderState { token_embedding, position_embedding, layers })
}

/// Multi-head scaled dot-product self-attention over `[B, S, d]` hidden
/// states. `mask` is the flat `B*S` attention mask; keys at positions with
/// `mask == 0` receive a `-1e9` score before the softmax, so they carry no
/// weight. Heads attend independently at scale `1/sqrt(d/h)` and their
/// outputs are concatenated and projected by `wo`.
pub fn self_attention<T: Real>(
    x: &Tensor<T>,
    mask: &[u8],
    params: &AttentionParams<T>,
    n_heads: usize,
) -> Result<Tensor<T>> {
    let shape = x.shape();
    let [b, s, d] = shape.as_slice() else {
        return Err(Error::Dimension(format!("self_attention needs [B, S, d], got {shape:?}")));
    };
    let (b, s, d) = (*b, *s, *d);
    if mask.len() != b * s {
        return Err(Error::Dimension(format!(
            "mask has {} entries for a {b}x{s} batch",
            mask.len()
        )));
    }
    let flat = x.reshape(&[b * s, d])?;
    let project = |w: &Tensor<T>, bias: &Tensor<T>| -> Result<Tensor<T>> {
        flat.matmul(w)?.add_bias(bias)?.reshape(&[b, s, d])?.split_heads(n_heads)
    };
    let q = project(&params.wq, &params.bq)?;
    let k = project(&params.wk, &params.bk)?;
    let v = project(&params.wv, &params.bv)?;
    let dh = d / n_heads;
    let scale = T::one() / real::<T>(dh as f64).sqrt();
    let scores = q.bmm(&k.transpose_last2()?)?.scale(scale);
    // Additive key mask, identical across heads and query positions.
    let neg = real::<T>(MASK_SCORE);
    let mut mask_data = vec![T::zero(); b * n_heads * s * s];
    for bi in 0..b {
        for j in 0..s {
            if mask[bi * s + j] == 0 {
                for h in 0..n_heads {
                    for i in 0..s {
                        mask_data[((bi * n_heads + h) * s + i) * s + j] = neg;
                    }
                }
            }
        }
    }
    let additive = Tensor::new(mask_data, &[b * n_heads, s, s])?;
    let weights = scores.add(&additive)?.softmax()?;
    let ctx = weights.bmm(&v)?.merge_heads(n_heads)?;
    ctx.reshape(&[b * s, d])?
        .matmul(&params.wo)?
        .add_bias(&params.bo)?
        .reshape(&[b, s, d])
}

/// Run the full encoder over a flat batch of `batch` id sequences (row-major
/// `batch * S` ids and mask). Dropout fires only when `training`. Returns
/// the `[B, S, d]` hidden states.
pub fn encode<T: Real, R: Rng + ?Sized>(
    state: &EncoderState<T>,
    config: &EncoderConfig,
    ids: &[usize],
    mask: &[u8],
    batch: usize,
    training: bool,
    rng: &mut R,
) -> Result<Tensor<T>> {
    if batch == 0 || ids.is_empty() || ids.len() % batch != 0 {
        return Err(Error::Index(format!(
            "{} ids do not form a whole batch of {batch} sequences",
            ids.len()
        )));
    }
    let s = ids.len() / batch;
    if s > config.max_seq_len {
        return Err(Error::Index(format!(
            "sequence length {s} exceeds max_seq_len {}",
            config.max_seq_len
        )));
    }
    if mask.len() != ids.len() {
        return Err(Error::Index(format!(
            "mask has {} entries for {} ids",
            mask.len(),
            ids.len()
        )));
    }
    if let Some(bad) = ids.iter().find(|&&id| id >= config.vocab_size) {
        return Err(Error::Index(format!(
            "token id {bad} outside vocabulary of {}",
            config.vocab_size
        )));
    }
    let d = config.d_model;
    let pos_ids: Vec<usize> = (0..batch).flat_map(|_| 0..s).collect();
    let tok = state.token_embedding.gather_rows(ids)?;
    let pos = state.position_embedding.gather_rows(&pos_ids)?;
    let p = config.dropout_p;
    let eps = real::<T>(config.layernorm_eps);
    let mut x = tok.add(&pos)?.dropout(p, training, rng)?.reshape(&[batch, s, d])?;
    for layer in &state.layers {
        let attn_out = self_attention(&x, mask, &layer.attn, config.n_heads)?
            .dropout(p, training, rng)?;
        x = x.add(&attn_out)?.layernorm(&layer.ln1_gamma, &layer.ln1_beta, eps)?;
        let ff = x
            .reshape(&[batch * s, d])?
            .matmul(&layer.w1)?
            .add_bias(&layer.b1)?
            .gelu()
            .matmul(&layer.w2)?
            .add_bias(&layer.b2)?
            .reshape(&[batch, s, d])?
            .dropout(p, training, rng)?;
        x = x.add(&ff)?.layernorm(&layer.ln2_gamma, &layer.ln2_beta, eps)?;
    }
    Ok(x)
}

/// Pool the CLS (first) position of every sequence: `[B, S, d] -> [B, d]`.
pub fn pool_cls<T: Real>(hidden: &Tensor<T>) -> Result<Tensor<T>> {
    hidden.pool_first()
}
