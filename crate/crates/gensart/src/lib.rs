//! Generalized-SART tomographic reconstruction.
//!
//! Regularized Kaczmarz iterations for parallel- and divergent-beam
//! tomography, computed by closed-form projection-space updates: forward
//! project the reference object, solve a low-dimensional problem on the
//! detector, back-project the increment. Supports L², weighted-L², Sobolev
//! and L^q penalties combined with arbitrary scalar data fidelities
//! (Gaussian, Huber, Student's t, Poisson), plus Newton-Kaczmarz variants for
//! phase-contrast and polychromatic models, reference variational solvers and
//! a phantom/data simulator.

pub mod baselines;
pub mod cg;
pub mod config;
pub mod detgrad;
pub mod driver;
pub mod error;
pub mod experiment;
pub mod fidelity;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod phantom;
pub mod polyct;
pub mod projector;
pub mod schemes;
pub mod xpct;

pub use error::{GensartError, Result};
pub use geometry::{BeamMode, Detector, Geometry, ProjectionView, ViewKind};
pub use grid::{GridSpec, OmegaShape, VolumeGrid};
pub use projector::{masked_divide, Projector, ProjectorCounters, UnitProjections};
