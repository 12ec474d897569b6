//! Joint encoder-decoder network with explicit forward and backward passes.

mod arch;
mod gradcheck;
mod model;
pub mod ops;
mod scalar;
mod tensor;

pub use arch::{ArchConfig, INPUT_CHANNELS, OUTPUT_CHANNELS};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use model::{
    image_tensor, input_tensor, logits_to_labels, tensor_to_image, Forward, ForwardCache, Gradients, Mode, Network,
    Param, ParamGroup, RunningStats, RUNNING_MOMENTUM,
};
pub use scalar::{matmul, Scalar};
pub use tensor::{concat_channels, split_channels, Tensor};
