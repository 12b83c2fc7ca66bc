//! Minimal hand-differentiated neural network substrate.

mod activation;
pub mod gradcheck;
mod layer;
pub mod loss;
mod network;
pub mod optim;
mod scalar;

pub use activation::{Activated, Activation};
pub use gradcheck::{gradient_check, loss_and_gradients, CheckLoss, GradCheckReport};
pub use layer::{BatchNorm, DenseLayer, LayerGrad, LayerSpec, LayerTrace, Mode};
pub use loss::{
    binary_cross_entropy_with_logits, cross_entropy, sigmoid, soft_target_loss, softmax, temperature_softmax,
    temperature_softmax_backward, CrossEntropy, SoftTargetLoss,
};
pub use network::{argmax, Classifier, ForwardTrace, Gradients, Network};
pub use optim::{Adam, LrSchedule, Optimizer, OptimizerState};
pub use scalar::Scalar;
