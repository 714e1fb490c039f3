//! Function approximation: dense networks with reverse-mode gradients, the
//! Adam optimizer, EMA target copies, checkpoints and gradient checks.

mod adam;
mod checkpoint;
mod gradcheck;
mod matrix;
mod mlp;
mod target;

pub use adam::Adam;
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use gradcheck::{finite_difference_check, GradCheckReport, GRAD_FLOOR};
pub use matrix::Matrix;
pub use mlp::{Activation, Gradients, Mlp, Tape};
pub use target::TargetNet;

/// Network shape shared by every approximator an agent builds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetShape {
    pub width: usize,
    pub depth: usize,
    pub activation: Activation,
}

impl Default for NetShape {
    fn default() -> Self {
        Self {
            width: 64,
            depth: 2,
            activation: Activation::Gelu,
        }
    }
}

impl NetShape {
    pub fn widths(&self, input: usize, output: usize) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.depth + 2);
        w.push(input);
        w.extend(std::iter::repeat_n(self.width, self.depth));
        w.push(output);
        w
    }
}
