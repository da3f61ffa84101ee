//! Complex time-frequency speech separation toolkit.
//!
//! - [`linalg`]: Hermitian solves, principal eigenvectors, weighted least squares
//! - [`stft`]: waveforms, spectrograms and the sqrt-Hann STFT pair
//! - [`model`]: grid-network forward inference and parameter/MAC accounting
//! - [`filters`]: multi-frame Wiener filter, convolutional beamformer, WPE
//! - [`objective`]: SI-SDR, the loss family, permutation-invariant assignment
//! - [`scene`]: synthetic multi-channel scenes and a stand-in first-stage estimator
//! - [`pipeline`]: estimator → filter → post-filter orchestration

pub mod error;
pub mod filters;
pub mod linalg;
pub mod model;
pub mod objective;
pub mod pipeline;
pub mod scene;
pub mod stft;
pub mod wav;

pub use error::{Error, Result};
