//! Kinetic uncertainty relations for a collectively decaying spin ensemble.
//!
//! The model is N spin-1/2 particles restricted to the symmetric (Dicke)
//! sector, driven coherently along x and decaying collectively:
//!
//! d rho/dt = -i [w Sx, rho] + (2k/N) (S- rho S+ - {S+ S-, rho}/2).
//!
//! The crate provides the mean-field dynamics and its fundamental matrix,
//! density-matrix and quantum-jump simulators, the exact and mean-field
//! activity bounds, and a harness that checks the resulting inequality chain.

pub mod activity;
pub mod dicke;
pub mod error;
pub mod harness;
pub mod io;
pub mod lindblad;
pub mod mean_field;
pub mod ode;
pub mod stats;
pub mod trajectories;

pub use activity::{
    b_mb, b_mb_ub, classical_activity_mf, compute_bounds, exact_activity, BoundForm,
    BoundsMetadata, BoundsReport, BoundsRequest, ExactActivity, ExactGrid, Quantities,
};
pub use dicke::{
    build_operators, magnetization, spin_coherent_state, CollectiveOperator, DensityMatrix,
    DickeSpace, QuantumState, SpinOperators, StateVector,
};
pub use error::{KurError, Result};
pub use harness::{
    check_inequality_chain, run_size_sweep, run_time_sweep, run_verification, ChainReport,
    ExperimentConfig, KurCell, KurRow, SizeSweep, SizeSweepConfig, TimeSweepConfig,
    VerificationCell, VerificationConfig,
};
pub use lindblad::{evolve_density, EvolutionLog, LiouvillianContext};
pub use mean_field::{
    fundamental_propagator, integrate_mean_field, Magnetization, MeanFieldTrajectory, ModelParams,
};
pub use trajectories::{run_ensemble, run_trajectory, EnsembleStats, TrajectoryRecord};
