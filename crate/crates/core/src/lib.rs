//! Image classification with trainable lifting wavelets.
//!
//! A trainable, exactly invertible 2D lifting-scheme wavelet transform used as
//! the feature extractor of an end-to-end image classifier.
//!
//! * [`tensor`]: dense tensors, reverse-mode differentiation, gradient checks,
//!   checkpoint files.
//! * [`lifting`]: predictor/updater networks, 1D lifting steps and the 2D
//!   decomposition level, with inverses.
//! * [`model`]: the full classifier and its parameter accounting.
//! * [`training`]: composite loss, SGD with momentum, schedules, train/eval loops.
//! * [`data`]: CIFAR and image-folder loaders, synthetic textures, augmentation.
//! * [`checks`]: gradient and reconstruction self-checks.
//! * [`cli`]: the `dawn` command-line front end.

pub mod checks;
pub mod cli;
pub mod data;
pub mod error;
pub mod lifting;
pub mod model;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Graph, ParamStore, Tensor, Var};
