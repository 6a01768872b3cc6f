//! Local-global graph network for multi-channel EEG classification.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: `f64` tensors and a reverse-mode differentiation tape.
//! - [`montage`]: channel lists and their partition into local graphs.
//! - [`model`]: the network, its parameters and checkpoint format.
//! - [`train`]: optimizer, class balancing and nested cross-validation.
//! - [`data`]: trial files, preprocessing and synthetic data.
//! - [`interpret`]: gradient saliency maps.

pub mod tensor;
pub mod model;
mod binio;
pub mod seed;
pub mod train;
pub mod montage;
pub mod data;
pub mod interpret;
