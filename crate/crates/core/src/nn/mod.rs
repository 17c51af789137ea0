//! Minimal dense numerical core: layer kernels, reverse-mode gradients
//! and the Adam optimizer.

mod adam;
mod dense;
mod loss;

pub use adam::{adam_step, lr_schedule, AdamHyper, AdamState};
pub use dense::{Activation, DenseCache, DenseLayer, GradientTape, LayerGrads};
pub use loss::{mse_grad, mse_loss};
