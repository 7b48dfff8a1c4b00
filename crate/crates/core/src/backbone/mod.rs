//! Byte-level vocabulary, attention masks, tiny causal and bidirectional
//! transformers, and the CLS attention read-out.

mod mask;
mod pool;
mod transformer;
mod vocab;

pub use mask::AttentionMask;
pub use pool::{cls_attention_pool, AttentionPool, Pooled};
pub use transformer::{Direction, ForwardActivations, Transformer, TransformerConfig};
pub use vocab::{Placement, TokenId, Vocabulary, CLS, EOS, PAD};
