//! Frequency-domain differential correctors.

pub mod constellation;
pub mod periodic;
pub mod shooting;
pub mod target;

pub use constellation::{
    phase_drift, solve_constellation, write_drift_csv, ConstellationProblem, ConstellationSolution, DriftReport,
    FollowerOutcome, RelativePhase,
};
pub use periodic::{
    center_modes, correct_symmetric, eigenvalues, monodromy, seed_from_eigenstructure, CenterMode, PeriodicOrbit,
    SymmetricSetup,
};
pub use shooting::{
    linearize, run, solve_multi, solve_single, verify, write_log_csv, IterationRecord, ShootingProblem, ShootingSolution,
    SignalRecipe, SignalSpec, SolverOptions,
};
pub use target::{identify, FrequencyTarget, ModeSelector, Quantity, TargetReport};
