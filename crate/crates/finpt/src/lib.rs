//! End-to-end toolkit for financial-risk prediction over natural-language
//! customer profiles.
//!
//! The pipeline has three stages: render each table row into an instruction
//! string, turn the instruction into a profile paragraph (chat-completion
//! service or a deterministic fallback), then fine-tune a small transformer
//! backbone plus classifier head on the profile text with a cost-sensitive
//! weighted BCE loss. Datasets are imbalanced binary-risk tables (default,
//! fraud, churn) in the on-disk layout described in [`dataset`].

pub mod backbone;
pub mod chat;
pub mod dataset;
mod error;
pub mod eval;
pub mod loss;
pub mod profile;
pub mod prompts;
pub mod trainer;

pub use error::{Error, Result};
