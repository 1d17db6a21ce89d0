//! Reverse-mode autodiff, parameters, optimizer and checkpoints.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod params;
mod tape;

pub use adam::Adam;
pub use checkpoint::{
    checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION,
};
pub use params::{round_f32, ParamStore, Parameter};
pub use tape::{bce, focal_term, laplace_bits, laplace_scale, sigmoid, Gradients, Tape, Var, MIN_SCALE, PROB_EPS};
