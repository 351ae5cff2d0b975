//! Content prompt encoder with frozen base weights and low-rank adapters.

mod model;
mod prompt;

pub use model::{
    gelu, gelu_grad, sinusoidal_positions, BaseMode, Bias, EncoderConfig, EncoderGrads,
    EncoderModel, ForwardCache, HiddenState, ParamHandle, Weight,
};
pub use prompt::{build_prompt, PROMPT_PREFIX, PROMPT_SUFFIX};
