//! Space-variant anisotropic Tikhonov regularization with jointly estimated
//! orientation and anisotropy fields, applied to image denoising and to
//! frequency-domain full waveform inversion in a wavefield-reconstruction
//! splitting.

pub mod cg;
pub mod denoise;
pub mod error;
pub mod fixtures;
pub mod fwi;
pub mod grid;
pub mod helmholtz;
pub mod io;
pub mod regularizer;
pub mod sparse;
pub mod synth;

pub use error::{CoreError, Result};
