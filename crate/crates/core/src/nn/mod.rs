//! Minimal differentiable classifier: dense matrices, layers with manual
//! backpropagation, losses, optimizers and EMA weight averaging.

pub mod checkpoint;
mod ema;
mod layer;
mod loss;
mod matrix;
mod model;
mod optim;

pub use ema::ema_update;
pub use layer::{Affine, BatchNormState, Layer, BN_EPSILON, BN_MOMENTUM};
pub use loss::{blur, cross_entropy, PROB_FLOOR};
pub use matrix::{argmax, softmax_rows, Matrix};
pub use model::{Classifier, ForwardCache, ForwardOutput, GradientSet, LayerGrad, LossTarget, Mode};
pub use optim::{Adam, Optimizer, Sgd};
