//! Time-periodic Preisach hysteresis models and their harmonic-domain
//! Norton equivalents.
//!
//! The crate covers the full path from open-circuit test waveforms to
//! frequency coupling matrices:
//!
//! - [`hps`]: harmonic phasor series transforms and coupling-matrix algebra,
//! - [`preisach`]: staircase memory and shape-function evaluation,
//! - [`fitting`]: model identification from symmetric major loops,
//! - [`linearize`]: analytic linearisation into (Y⁽¹⁾, Y⁽²⁾),
//! - [`bench`]: perturbation-sweep estimation of the same matrices,
//! - [`cli`]: configuration, file formats and the command pipeline.

// Index loops mirror the matrix notation, and `!(x > y)` comparisons are
// deliberate: they reject NaN along with out-of-range values.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord, clippy::manual_memcpy)]

pub mod bench;
pub mod cli;
pub mod error;
pub mod fitting;
pub mod hps;
pub mod jet;
pub mod linalg;
pub mod linearize;
pub mod preisach;
pub mod spline;

pub use error::{Error, Result};
