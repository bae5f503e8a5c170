//! Per-view neural plane field: encoding, MLP with manual backprop, Adam.

mod adam;
mod encoding;
mod mlp;

pub use adam::{adam_step, lr_schedule, AdamState, LR_END, LR_START};
pub use encoding::{positional_encode, EncodingConfig};
pub use mlp::{
    backward_batch, field_backward, field_forward, forward_batch, Layer, MlpParams, Tape,
    LEAKY_SLOPE, OUTPUTS,
};
