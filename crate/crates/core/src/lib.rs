//! Spectral laboratory for the quantum potential, the deformed momentum and
//! kinetic operators, the nonlinear "classical" Schrödinger equation and the
//! Fisher-information action functionals on periodic configuration-space
//! grids.

pub mod checks;
pub mod error;
pub mod evolution;
pub mod functionals;
pub mod grid;
pub mod io;
pub mod mask;
pub mod operators;
pub mod par;
pub mod random;
pub mod runner;
pub mod scenario;
pub mod spectral;
pub mod wavefield;

pub use error::{DqmError, Result};
pub use evolution::{evolve_classical, evolve_linear, hj_characteristics, Mode, Trajectory};
pub use functionals::{action_density, fisher_information, weizsacker, xi_of_lambda, ActionBreakdown};
pub use grid::{integrate, integrate_complex, make_grid, ComplexField, Grid, GridSpec, HasGrid, RealField};
pub use scenario::{build_scenario, Scenario, ScenarioConfig};
pub use spectral::{gradient, laplacian};
pub use wavefield::{expectation, from_polar, normalize, to_polar, PhysicalParams, PolarField, WaveField};
