//! Fixtures shared by the benchmarks.

use kur_core::{
    integrate_mean_field, spin_coherent_state, DensityMatrix, LiouvillianContext, Magnetization,
    MeanFieldTrajectory, ModelParams, StateVector,
};

pub fn params(n_spins: usize, tau: f64) -> ModelParams {
    ModelParams {
        omega: 1.5,
        kappa: 1.0,
        n_spins,
        tau,
        dt: 1e-3,
    }
}

pub fn context(n_spins: usize) -> LiouvillianContext {
    LiouvillianContext::new(params(n_spins, 1.0)).expect("valid parameters")
}

pub fn coherent(ctx: &LiouvillianContext) -> StateVector {
    spin_coherent_state(ctx.space(), 1.2, 0.4)
}

pub fn coherent_density(ctx: &LiouvillianContext) -> DensityMatrix {
    coherent(ctx).to_density()
}

pub fn mean_field(tau: f64) -> MeanFieldTrajectory {
    integrate_mean_field(Magnetization::from_angles(0.0, 0.0), &params(100, tau))
        .expect("mean-field integration")
}
