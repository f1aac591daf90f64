//! Stochastic primitive equations on the periodic box `[0,1)³` with fast
//! rotation: pseudo-spectral operators, the original, rescaled, auxiliary and
//! limit systems, their time integrators, and the ensemble statistics used to
//! study the large-rotation limit and mixing of the limit system.
//!
//! Velocities are stored as Fourier coefficients split into a barotropic
//! (vertical mean) and a baroclinic part, see [`State`].

pub mod config;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod experiments;
pub mod fft;
pub mod field;
pub mod grid;
pub mod integrator;
pub mod noise;
pub mod report;
pub mod rotation;
pub mod spectral;

pub use config::{ExperimentConfig, ExperimentKind, Overrides};
pub use dynamics::{rescale_state, Direction, Dynamics, GradientSign, State, SystemKind};
pub use ensemble::{
    empirical_martingale_covariance, mixing_rate_fit, moment_diagnostics, run_ensemble, wasserstein1, Ensemble,
    EnsembleSpec, FeatureMap, MixingFit, MomentReport, ObservePlan,
};
pub use error::{Error, Result};
pub use experiments::{run_experiment, Setup};
pub use field::{Parity, ScalarField, SpectralField, C64};
pub use grid::{Grid, OrbitKind};
pub use integrator::{
    simulate_equivalence_check, simulate_nudged_pair, simulate_pair_common_noise, simulate_path, EquivalenceMode,
    NormRecord, SchemeKind, Simulation, StepScheme, Stepper, Trajectory,
};
pub use noise::{martingale_covariance, limit_covariance, Mat2, NoiseSpec, RngStream};
pub use report::{emit_plots, write_artifacts, Artifacts, Report, Table};
