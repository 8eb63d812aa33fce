//! Snapshot compressive spectral imaging: the coded-aperture forward model,
//! diffusion-prior reconstruction and evaluation metrics.

pub mod bands;
pub mod cassi;
pub mod commands;
pub mod config;
pub mod cube;
pub mod error;
pub mod io;
pub mod metrics;
pub mod prior;
pub mod schedule;
pub mod solver;
pub mod synthetic;

pub use bands::{BandPlan, BandTriple, PlanKind};
pub use cassi::CassiOperator;
pub use cube::{CodedMask, Field, Measurement, Plane, SpectralCube, TriImage};
pub use error::{Error, Result};
pub use prior::{OracleTruth, PriorKind, PriorRequest, ScorePrior};
pub use schedule::{DiffusionSchedule, SamplerParams};
pub use solver::{run_diffsci, run_pnp_baseline, Reconstruction, SolverConfig};
