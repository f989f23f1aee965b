//! Fully connected classifier with hand-written backpropagation, SGD with
//! momentum, a cosine learning-rate schedule and the mean-teacher copy.

pub mod checkpoint;
mod mlp;
mod optim;
mod teacher;

pub use mlp::{argmax_rows, loss_and_grads, softmax_rows, Layer, ModelParams, PROB_FLOOR};
pub use optim::{cosine_lr, sgd_step, OptimizerState, MOMENTUM};
pub use teacher::Teacher;
