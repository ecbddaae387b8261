//! The NABLA-N recurrent-convolutional segmentation network.

mod arch;
mod checkpoint;
mod nabla;
mod rcu;

pub use arch::{DecodeStream, NablaArchitecture};
pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, load_checkpoint_for, parse_checkpoint, save_checkpoint,
    EXTENSION, FORMAT_VERSION, MAGIC,
};
pub(crate) use checkpoint::sha256_hex;
pub use nabla::{
    build_network, check_store, decoder_prefix, encoder_prefix, expected_shapes, network_backprop,
    network_forward, Backprop, NablaNet, PROB_CEIL, PROB_FLOOR,
};
pub use rcu::{rcu_backward, rcu_forward, rcu_forward_train, RcuCache, RcuParams, RcuSpec};
