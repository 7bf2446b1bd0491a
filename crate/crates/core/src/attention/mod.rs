//! Transformer building blocks with hand-written backward passes.

mod block;
mod linear;
mod mha;
mod norm;

pub use block::{DecoderBlock, DecoderCache, Dropout, EncoderBlock, EncoderCache, Mlp, MlpCache};
pub use linear::Linear;
pub use mha::{attention, attention_backward, softmax_rows, MhaCache, MultiHeadAttention};
pub use norm::{LayerNorm, NormCache};
