//! Dual-energy X-ray tomography with two-material separation.
//!
//! The forward model maps two material images to low- and high-energy
//! sinograms. Reconstruction minimizes a data misfit plus a Tikhonov term
//! and an inner-product penalty that discourages both materials from
//! occupying the same pixel, subject to non-negativity, with a
//! preconditioned primal-dual interior point method. A smoothed
//! total-variation solver serves as the baseline.

pub mod config;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod ipm;
pub mod jtv;
pub mod model;
pub mod par;
pub mod phantoms;
pub mod pipeline;
pub mod projector;
pub mod simulate;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use geometry::{Geometry, Image, Sinogram};
pub use model::{AttenuationCoeffs, DualEnergyOperator, ImagePair, RegWeights, SinogramPair};
pub use par::Execution;
pub use projector::{ParallelBeamProjector, RayOperator};
