//! Boundary-control reconstruction of a 2-D acoustic wave speed from the
//! Neumann-to-Dirichlet map on the square [-1,1]².
//!
//! Pipeline: [`wave`] simulates the Neumann problem, [`nd`] assembles the
//! ND map on a coarse inversion grid from fine-grid solves, [`operators`]
//! builds J, R, Pt, K and B, [`recon`] solves the control problems and the
//! c⁻² system, [`experiment`] drives the presets.

pub mod error;
pub mod experiment;
pub mod export;
pub mod grid;
pub mod harmonic;
pub mod nd;
pub mod operators;
pub mod persist;
pub mod recon;
pub mod speed;
pub mod validation;
pub mod wave;

pub use error::{Error, Result};
pub use grid::{BoundaryIndexMap, BoundaryTrace, Grid, OperatorMatrix, Side, SpaceTag};
pub use speed::{SpeedField, SpeedPreset};
