//! Minimal reverse-mode differentiable numeric core.
//!
//! Only the handful of ops the predicate-decoding pipeline needs are
//! provided: affine maps, feature concatenation, elementwise products, ReLU,
//! batch normalization, row gathers (embedding lookup), softmax
//! cross-entropy and weighted sums. All values are `f32`, every op checks
//! its output for NaN/Inf, and every reduction runs in a fixed order.

mod array;
pub mod kernels;
mod params;
mod tape;

pub use array::NumArray;
pub use params::{init_uniform, sgd_step, Bindings, ParamEntry, ParamId, ParamStore, Sgd};
pub use tape::{Tape, Var};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum NumError {
    #[error("{op}: dimension mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: index {index} out of range (bound {bound})")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BatchNormOptions {
    /// Weight of the current batch in the running-statistics update.
    pub momentum: f32,
    pub eps: f32,
}

impl Default for BatchNormOptions {
    fn default() -> Self {
        Self {
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

/// Standalone batch-norm layer state: learnable scale/shift plus running
/// statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub gamma: NumArray,
    pub beta: NumArray,
    pub running_mean: NumArray,
    pub running_var: NumArray,
    pub opts: BatchNormOptions,
}

impl BatchNormState {
    pub fn new(channels: usize, opts: BatchNormOptions) -> Self {
        Self {
            gamma: NumArray::full(&[channels], 1.0),
            beta: NumArray::zeros(&[channels]),
            running_mean: NumArray::zeros(&[channels]),
            running_var: NumArray::full(&[channels], 1.0),
            opts,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Applies the layer on `tape`, registering gamma and beta as leaves.
    /// Returns `(output, gamma, beta)`.
    pub fn forward(&mut self, tape: &mut Tape, x: Var, mode: BnMode) -> Result<(Var, Var, Var), NumError> {
        let gamma = tape.leaf(self.gamma.clone());
        let beta = tape.leaf(self.beta.clone());
        let out = tape.batchnorm(
            x,
            gamma,
            beta,
            &mut self.running_mean,
            &mut self.running_var,
            self.opts,
            mode,
        )?;
        Ok((out, gamma, beta))
    }
}
