//! TaNet: joint region localization and semantic segmentation on a
//! self-contained tensor core.
//!
//! The crate is organized around six subsystems:
//!
//! - [`tensor`]: dense tensors with reverse-mode automatic differentiation,
//!   the neural-network operation set, the Adam optimizer, and a
//!   finite-difference gradient checker.
//! - [`stn`]: the differentiable spatial transformer (constrained affine
//!   transforms, grid generation, bilinear sampling, inverse paste) plus the
//!   localization network and ground-truth transform derivation.
//! - [`lbp`]: local-binary-pattern encoded convolutional layers with frozen
//!   ternary filter banks and learnable combination weights.
//! - [`backbone`]: the three segmentation pathways (spatial, handcrafted,
//!   global), the fusion head, the coarse segmenter, and the full network.
//! - [`trainer`]: the staged training procedure (coarse pre-train, localizer
//!   pre-train, joint fine-tune), augmentation, and LR plateau scheduling.
//! - [`dataio`]: synthetic phantom dataset generation, PGM image I/O,
//!   checkpoints, bicubic resizing, segmentation metrics, and FPS benchmarks.

pub mod backbone;
pub mod checks;
pub mod dataio;
mod error;
pub mod lbp;
pub mod stn;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
