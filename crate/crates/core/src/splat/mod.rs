//! Differentiable 3D Gaussian splatting.

pub mod densify;
pub mod model;
pub mod render;

pub use densify::{densify_and_prune, DensifyThresholds, GradientStats};
pub use model::{AdamSettings, Gaussian3D, GaussianModel, LearningRates};
pub use render::{
    render, render_backward, render_backward_with, render_with, render_with_gradient, Gradients, RenderOutput,
    RenderSettings,
};
