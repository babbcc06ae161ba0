//! Minimal dense building blocks for the encoders, with manual backprop.

pub mod layers;
pub mod params;

pub use layers::{gelu, gelu_grad, EncoderBlock, EncoderStack, FeedForward, LayerNorm, Linear, SelfAttention, StackCache};
pub use params::{Init, ParamEntry, ParamLayout, TensorRef};
