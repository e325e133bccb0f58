//! Statistical postprocessing of ensemble weather forecasts.
//!
//! The crate turns a raw multi-member ensemble into calibrated univariate
//! predictive distributions and then restores the multivariate dependence
//! structure by ensemble copula coupling (ECC) or the Schaake shuffle.
//!
//! # Pipeline
//!
//! 1. **Univariate postprocessing** per margin ([`postprocess`]): ensemble
//!    BMA with normal or Bernoulli-gamma kernels, or nonhomogeneous
//!    regression (normal, truncated normal, extended logistic), fit over a
//!    rolling training window.
//! 2. **Quantization** ([`coupling::quantize_q`], [`coupling::quantize_r`],
//!    [`coupling::quantize_t`]): represent each predictive distribution by `M`
//!    discrete values.
//! 3. **Reordering** ([`coupling::ecc_reorder`], [`coupling::schaake_shuffle`]):
//!    arrange the quantized values by the rank structure of the raw ensemble
//!    or of a historical observation record.
//!
//! Forecasts are verified with the CRPS, the energy score, PIT and rank
//! histograms ([`verification`]). [`synthetic`] generates biased and
//! underdispersed ensembles with known truth, and [`workbench`] provides the
//! CSV/JSON interfaces and the end-to-end pipeline used by the `ecc` binary.

// Checks like `!(var > 0.0)` are written so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coupling;
pub mod distributions;
mod error;
pub mod optimize;
pub mod postprocess;
pub mod quadrature;
pub mod seeds;
pub mod stats;
pub mod synthetic;
pub mod verification;
pub mod workbench;

pub use error::{Error, Result};
