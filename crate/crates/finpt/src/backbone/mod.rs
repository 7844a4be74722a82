//! Backbone abstraction: tokenization, a desk-scale toy transformer in
//! encoder (bidirectional) and decoder (causal) variants, mask-aware
//! pooling, the classifier head, and checkpointing.
//!
//! The architecture determines the pooling rule: encoders average the
//! hidden states of all unmasked tokens, decoders take the last unmasked
//! token's hidden state. Pad positions never influence unmasked positions.

mod checkpoint;
mod model;
mod vocab;

pub use checkpoint::{Checkpoint, CheckpointParam};
pub use model::{Model, Param, ParamSet};
pub use vocab::{Vocab, EOS_ID, UNK_ID};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Backbone architecture; fixes the pooling strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Encoder,
    Decoder,
}

/// Which backbone parameters the trainer may update. The classifier head is
/// trainable under every policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainablePolicy {
    All,
    LastBlock,
}

/// Shape of the backbone plus the freezing policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub arch: Arch,
    pub hidden_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub vocab_size: usize,
    pub trainable_policy: TrainablePolicy,
}

impl BackboneSpec {
    /// Desk-scale defaults: d=32, 2 layers, 2 heads. The vocabulary size is
    /// filled in once a corpus vocabulary exists.
    pub fn toy(arch: Arch) -> Self {
        Self {
            arch,
            hidden_dim: 32,
            layers: 2,
            heads: 2,
            vocab_size: 0,
            trainable_policy: TrainablePolicy::All,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.layers == 0 || self.heads == 0 {
            return Err(Error::Backbone("hidden_dim, layers, and heads must be positive".into()));
        }
        if self.hidden_dim % self.heads != 0 {
            return Err(Error::Backbone(format!(
                "hidden_dim {} not divisible by heads {}",
                self.hidden_dim, self.heads
            )));
        }
        Ok(())
    }
}

/// A token-id sequence with its attention mask. Pads (mask 0) share the
/// end-of-sequence id and occur only as a contiguous suffix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedProfile {
    token_ids: Vec<u32>,
    mask: Vec<u8>,
}

impl TokenizedProfile {
    pub fn new(token_ids: Vec<u32>, mask: Vec<u8>) -> Result<Self> {
        if token_ids.is_empty() || token_ids.len() != mask.len() {
            return Err(Error::Tokenize(format!(
                "{} token ids for {} mask entries (need equal, non-zero lengths)",
                token_ids.len(),
                mask.len()
            )));
        }
        if mask.iter().any(|&m| m > 1) {
            return Err(Error::Tokenize("mask entries must be 0 or 1".into()));
        }
        let real = mask.iter().take_while(|&&m| m == 1).count();
        if real == 0 {
            return Err(Error::Tokenize("mask has no unmasked positions".into()));
        }
        if mask[real..].iter().any(|&m| m != 0) {
            return Err(Error::Tokenize("pad positions must form a contiguous suffix".into()));
        }
        Ok(Self { token_ids, mask })
    }

    pub fn token_ids(&self) -> &[u32] {
        &self.token_ids
    }

    pub fn mask(&self) -> &[u8] {
        &self.mask
    }

    /// Total length t, pads included.
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        false // invariant: at least one real token
    }

    /// Number of unmasked (real) tokens.
    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }

    /// Copy with `k` pad positions appended.
    pub fn with_extra_padding(&self, k: usize, pad_id: u32) -> Self {
        let mut token_ids = self.token_ids.clone();
        let mut mask = self.mask.clone();
        token_ids.extend(std::iter::repeat(pad_id).take(k));
        mask.extend(std::iter::repeat(0).take(k));
        Self { token_ids, mask }
    }
}

/// Hidden-state matrix (t×d, row-major) plus the pooled vector used for
/// classification.
#[derive(Debug, Clone)]
pub struct BackboneOutput {
    pub hidden: Vec<f64>,
    pub t: usize,
    pub d: usize,
    pub pooled: Vec<f64>,
}

impl BackboneOutput {
    pub fn hidden_row(&self, i: usize) -> &[f64] {
        &self.hidden[i * self.d..(i + 1) * self.d]
    }
}

/// Binary risk prediction. The label is 1 exactly when the positive-class
/// probability reaches the 0.5 threshold (ties map to 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub logits: [f64; 2],
    pub prob_positive: f64,
    pub label: u8,
}

/// Reduces a t×d hidden matrix to a d-vector: mean of unmasked rows for
/// encoders, the last unmasked row for decoders.
pub fn pool(hidden: &[f64], dim: usize, mask: &[u8], arch: Arch) -> Result<Vec<f64>> {
    if dim == 0 || hidden.len() != mask.len() * dim {
        return Err(Error::Backbone(format!(
            "pool: hidden has {} entries, expected {}x{}",
            hidden.len(),
            mask.len(),
            dim
        )));
    }
    let unmasked: Vec<usize> = mask
        .iter()
        .enumerate()
        .filter_map(|(i, &m)| (m == 1).then_some(i))
        .collect();
    if unmasked.is_empty() {
        return Err(Error::Backbone("pool: all-zero mask".into()));
    }
    match arch {
        Arch::Encoder => {
            let mut out = vec![0.0; dim];
            for &i in &unmasked {
                for (o, h) in out.iter_mut().zip(&hidden[i * dim..(i + 1) * dim]) {
                    *o += h;
                }
            }
            let inv = 1.0 / unmasked.len() as f64;
            for o in &mut out {
                *o *= inv;
            }
            Ok(out)
        }
        Arch::Decoder => {
            let last = *unmasked.last().unwrap();
            Ok(hidden[last * dim..(last + 1) * dim].to_vec())
        }
    }
}
