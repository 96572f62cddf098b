//! Minimal feed-forward/convolutional network kernel: just enough layers,
//! losses and optimizer to train the desk-scale voice cascade, with
//! hand-derived reverse-mode gradients.

mod checkpoint;
mod loss;
mod model;
mod optim;
mod tensor;

pub use checkpoint::{FORMAT_VERSION, MAGIC};
pub use loss::{exp_triplet_loss, softmax, softmax_cross_entropy, TripletBatch, TripletGradients};
pub use model::{ForwardTrace, Gradients, Layer, Model, Param};
pub use optim::sgd_step;
pub use tensor::Tensor;
