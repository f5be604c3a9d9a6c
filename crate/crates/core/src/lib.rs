//! Multi-quantile precipitation nowcasting.
//!
//! One U-shaped, depthwise-separable convolutional backbone is trained under
//! three interchangeable objectives (squared error, absolute error, and a
//! weighted multi-quantile pinball loss) on radar-like precipitation
//! sequences, and evaluated with regression and thresholded event metrics.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense tensors and a reverse-mode gradient tape
//! - [`model`]: the encoder-decoder network and its parameters
//! - [`objectives`]: pinball, multi-quantile, MSE and MAE losses
//! - [`data`]: synthetic storm archives, the NWQ1 file format, windowing,
//!   filtering, chronological splitting and normalisation
//! - [`training`]: Adam, plateau scheduling, early stopping, best-of-n runs,
//!   quantile-weight grid search and NWQC checkpoints
//! - [`verification`]: MSE/MAE, confusion counts, CSI/POD/FAR/MCC, coverage
//! - [`cli`]: the `generate`/`train`/`gridsearch`/`evaluate`/`predict` driver

pub mod error;
pub mod data;
pub mod model;
pub mod objectives;
pub mod tensor;
pub mod training;
pub mod verification;
pub mod cli;

mod csvio;

pub use error::{Error, Result};
