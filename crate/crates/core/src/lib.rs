//! Online change point detection with random Fourier feature MMD.
//!
//! A stream of `d`-dimensional observations is mapped through a random
//! Fourier feature approximation of a Gaussian kernel and summarized in a
//! dyadic window structure. Every insert tests each window boundary as a
//! candidate change point using the maximum mean discrepancy between the
//! feature means on either side, in `O(r log n)` time and memory.
//!
//! ```
//! use rffmmd::{Detector, DetectorConfig, KernelSpec, ThresholdPolicy};
//!
//! let kernel = KernelSpec::new(0.5, 1).unwrap();
//! let policy = ThresholdPolicy::FixedArl { gamma_run: 1000.0 };
//! let mut det = Detector::new(DetectorConfig::new(kernel, 100, 7, policy)).unwrap();
//! for t in 0..400 {
//!     let x = if t < 200 { (t % 7) as f64 / 7.0 } else { 5.0 };
//!     if det.insert(&[x]).unwrap().detected {
//!         break;
//!     }
//! }
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod cli;
pub mod detector;
pub mod error;
pub mod kernel;
pub mod mmd;
pub mod par;
pub mod seed;
pub mod streams;
pub mod threshold;

pub use detector::{
    Detector, DetectorConfig, Mode, ResetPolicy, SplitStat, SweepSummary, Verdict, WindowSummary,
};
pub use error::{Error, Result};
pub use kernel::{
    approx_kernel, feature_map, gaussian_kernel, h_function, median_heuristic, required_features,
    sample_frequencies, FeatureVector, KernelSpec, ShiftInvariantKernel, SpectralSample,
};
pub use mmd::{mmd_exact, mmd_exact_rff_kernel, mmd_rff, normalized_stat, MeanEmbedding};
pub use par::Execution;
pub use streams::{draw_stream, ChangeStreamSpec, DistributionSpec, Family, StreamSource};
pub use threshold::{
    calibrate_monte_carlo, estimate_sigma_tilde, threshold_arl, threshold_fa, threshold_scale_arl,
    threshold_scale_fa, Calibration, CalibrationConfig, ThresholdPolicy,
};
