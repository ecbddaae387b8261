//! Tensor-level layers with hand-derived gradients, losses and the Adam optimiser.

mod activation;
mod conv;
mod init;
mod loss;
mod params;
mod pool;

pub use activation::{relu, relu_backward, sigmoid, sigmoid_backward, sigmoid_scalar};
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads};
pub use init::{bias_init, fan_in, he_init, mix_seed};
pub use loss::{bce_backward, bce_logit_grad, bce_loss, dice_coefficient, dice_tensors, BCE_CLAMP};
pub(crate) use loss::{check_finite, dice_counts, dice_from_counts};
pub use params::{
    adam_step, count_parameters, Gradients, Param, ParamStore, ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
};
pub use pool::{maxpool2_backward, maxpool2_forward, upsample2_backward, upsample2_nearest, Pooled};
