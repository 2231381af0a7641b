//! Quadratic hedging of basket calls in a multi-asset Heston market.

pub mod bsde;
pub mod error;
pub mod harness;
pub mod hedge;
pub mod lrm;
pub mod market;
pub mod mc;
pub mod mvh;
pub mod nn;
pub mod pde;
pub mod riccati;

pub use bsde::{BsdeModel, BsdeProblem, BsdeRunResult, SolverConfig};
pub use error::{HedgeError, Result};
pub use harness::{run, ExperimentConfig, Method, RunReport};
pub use hedge::{mse_over_time, HedgeRun, MseOverTime};
pub use market::{simulate, validate, Claim, HestonParams, MarketCoeffs, Measure, PathBatch, ValidationReport};
pub use mc::{McEstimate, SampleStats};
pub use nn::{Adam, Checkpoint, LrSchedule, Mlp, TrainState};
pub use pde::{PdeConfig, PdeGrid, PdeMode};
pub use riccati::RiccatiCurves;
