//! Fully-connected time-input networks, their exact time derivatives, reverse
//! gradients, Adam, and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod matrix;
pub mod mlp;
pub mod spec;

pub use adam::{adam_step, lr_at_epoch, OptimizerState};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use matrix::Matrix;
pub use mlp::{
    backward, elu, elu_derivative, forward, forward_batch, forward_batch_with_rates, forward_tape,
    forward_with_time_derivative, loss_gradient, Batch, Tape,
};
pub use spec::{he_init, he_init_stream, param_count, Activation, NetworkParams, NetworkSpec};
