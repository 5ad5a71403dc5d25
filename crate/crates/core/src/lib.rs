//! Hyperbolic (Lorentz-model) neural networks for cross-subject EEG
//! classification, with per-subject low-rank adapters.

pub mod autodiff;
mod binio;
pub mod data;
pub mod error;
pub mod geometry;
pub mod layers;
pub mod model;
pub mod training;

pub use error::{FormatError, LatteError, Result};
