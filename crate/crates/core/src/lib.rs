//! SIR epidemics in which infections happen at randomly sized social gatherings.
//!
//! The crate covers three views of the same model:
//!
//! * [`meanfield_ode`]: the deterministic system `s' = -μ s B(i)` with the
//!   nonlinear incidence [`incidence::incidence_b`], plus the classic SIR model;
//! * [`sir_process`]: the exact finite-population jump process, simulated with
//!   the generic [`jump_engine`];
//! * [`convergence`]: sweeps over the population size that measure how fast
//!   the scaled jump process approaches the ODE solution.

pub mod cli;
pub mod convergence;
pub mod error;
pub mod gatherings;
pub mod incidence;
pub mod jump_engine;
pub mod meanfield_ode;
pub mod sir_process;

pub use error::{Error, Result};
pub use gatherings::{GatheringDistribution, GatheringLaw};
pub use incidence::SirParams;
pub use meanfield_ode::{MacroState, Trajectory};
