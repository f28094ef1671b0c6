//! Synthetic S-N fatigue curves and LSTM forecasting of their high-cycle
//! tail, with transfer of a trained recurrent layer between load modes.
//!
//! Module map:
//!
//! * [`sncurve`]: curve evaluation, sampling, fitting, splits, scaling, CSV.
//! * [`nn`]: tensors, dense layers, loss, Adam, gradient checking.
//! * [`lstm`]: the LSTM cell with hand-derived backpropagation through time.
//! * [`models`]: LSTM regressor, DNN baseline, transfer surgery, checkpoints.
//! * [`pipeline`]: windowing, training, autoregressive rollout, experiment report.

pub mod checkpoint;
pub mod error;
pub mod kv;
pub mod lstm;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod sncurve;

pub use error::{Error, Result};
