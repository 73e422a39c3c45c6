//! Modeling and second-moment stabilization of discrete-time linear random
//! dynamical systems.
//!
//! The crate is organized bottom-up:
//!
//! * [`system`] holds the random linear system `x+ = A(xi) x + B(xi) u`,
//!   `y = C(xi) x + D(xi) u` with affine coefficient maps, and its
//!   second-moment Gram matrix.
//! * [`enkf`] is a plain ensemble Kalman filter over a pluggable simulation
//!   model, plus the augmented state/parameter model.
//! * [`sdp`] is a small dense LMI engine (maximize the minimum eigenvalue of
//!   an affine symmetric matrix map).
//! * [`synthesis`] builds the Gram-factor LMI, bisects on the convergence
//!   rate and recovers a state feedback gain; it also analyzes fixed gains
//!   and provides a SISO pole-placement baseline.
//! * [`plantlab`] has plants, maximal-length-sequence excitation and the
//!   EnKF-driven identification of the parameter distribution.
//! * [`simulate`] runs the EnKF output-feedback loop and Monte Carlo
//!   evaluation.
//! * [`textfmt`] is the plain-text key/value format shared by all files, and
//!   [`files`] the concrete system, model, Gram and gain formats.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod enkf;
pub mod error;
pub mod files;
pub mod linalg;
pub mod plantlab;
pub mod rng;
pub mod scenario;
pub mod sdp;
pub mod simulate;
pub mod synthesis;
pub mod system;
pub mod textfmt;

pub use error::{Error, Result};

pub use nalgebra::{DMatrix, DVector};

pub use enkf::{Ensemble, EnkfConfig, OutputEnsemble, SimulationModel};
pub use plantlab::{IdentificationConfig, IdentificationResult, Plant};
pub use sdp::{AffineMatrixMap, SdpOptions, SdpResult};
pub use simulate::{Controller, ControllerConfig, MonteCarloStats, SimulationConfig, Trajectory};
pub use synthesis::{AnalysisResult, GramFactor, SynthesisOptions, SynthesisResult};
pub use system::{AffineCoefficients, DistributionModel, GramMatrix, RandomLinearSystem};
