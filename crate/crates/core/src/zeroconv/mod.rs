//! Zero-convolution control block at toy scale.
//!
//! A frozen [`NetBlock`] is paired with a trainable clone whose input is the
//! block input plus a 1x1-projected condition, and whose output is added back
//! through a second 1x1 projection. Both projections start at exactly zero,
//! so a fresh [`ControlNetBlock`] reproduces the frozen block bit for bit and
//! only the outer projection receives gradient on the first step.
//!
//! Everything is `f64` with hand-written reverse-mode gradients.

mod checkpoint;
mod controlnet;
mod layers;
mod tensor;
mod train;
pub mod verify;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use controlnet::{
    infer, init_controlnet, raster_to_condition, ControlNetBlock, ForwardCache, InputGrads,
};
pub use layers::{BlockCache, Conv2d, NetBlock, Nonlinearity, Param, ZeroConv};
pub use tensor::Tensor;
pub use train::{
    evaluate, make_toy_task, make_toy_task_with, mse, pearson, train_toy, LogRow, Sample,
    ToyTask, TrainConfig, TrainLog, TOY_CHANNELS, TOY_COND_CHANNELS, TOY_EVAL_SAMPLES, TOY_SIZE,
};

#[derive(Debug, Error)]
pub enum ZeroConvError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("locked parameters changed by step {step}")]
    LockedModified { step: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Block forward pass, `y = F(x)`.
pub fn block_forward(block: &NetBlock, x: &Tensor) -> Result<Tensor, ZeroConvError> {
    block.forward(x)
}

pub fn zero_conv_forward(z: &ZeroConv, x: &Tensor) -> Result<Tensor, ZeroConvError> {
    z.forward(x)
}

pub fn controlnet_forward(
    cb: &ControlNetBlock,
    x: &Tensor,
    c: &Tensor,
) -> Result<Tensor, ZeroConvError> {
    cb.forward(x, c)
}
