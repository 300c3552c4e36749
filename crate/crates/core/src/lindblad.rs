//! Exact master-equation propagation in the Dicke sector.
//!
//! The generator is
//!
//! ```text
//! L X = -i[w Sx, X] + (2k/N) (S- X S+ - {S+ S-, X}/2)
//! ```
//!
//! Every operator involved is tridiagonal or diagonal in the |j, m> basis, so
//! one application costs O(dim^2) instead of the O(dim^3) of dense products.
//! The dense form is kept for cross-checks.

use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::dicke::{
    build_operators, trace_of_product, CollectiveOperator, DensityMatrix, DickeSpace, QuantumState,
    SpinOperators, DENSITY_POSITIVITY_TOL, DENSITY_TRACE_TOL,
};
use crate::error::{KurError, Result};
use crate::io::CsvWriter;
use crate::mean_field::ModelParams;
use crate::ode::step_count;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Immutable operator cache for one (space, parameters) pair.
#[derive(Debug, Clone)]
pub struct LiouvillianContext {
    space: DickeSpace,
    params: ModelParams,
    ops: SpinOperators,
    lower: Vec<f64>,
    sp_sm_diag: Vec<f64>,
    h: DMatrix<Complex64>,
    h_eff: DMatrix<Complex64>,
    sp_sm: DMatrix<Complex64>,
}

impl LiouvillianContext {
    pub fn new(params: ModelParams) -> Result<Self> {
        params.validate()?;
        let space = DickeSpace::new(params.n_spins)?;
        let ops = build_operators(space);
        let sp_sm = ops.sp_sm().matrix().clone();
        let h = ops.sx.matrix() * Complex64::new(params.omega, 0.0);
        let h_eff = &h - &sp_sm * (I * (params.kappa / params.n_spins as f64));
        Ok(Self {
            space,
            params,
            lower: space.lowering_coefficients(),
            sp_sm_diag: space.sp_sm_diagonal(),
            ops,
            h,
            h_eff,
            sp_sm,
        })
    }

    pub fn space(&self) -> DickeSpace {
        self.space
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn operators(&self) -> &SpinOperators {
        &self.ops
    }

    /// Collective decay rate 2k/N.
    pub fn gamma(&self) -> f64 {
        2.0 * self.params.kappa / self.params.n_spins as f64
    }

    pub fn hamiltonian(&self) -> &DMatrix<Complex64> {
        &self.h
    }

    /// H - i(k/N) S+ S-.
    pub fn effective_hamiltonian(&self) -> &DMatrix<Complex64> {
        &self.h_eff
    }

    pub fn sp_sm(&self) -> &DMatrix<Complex64> {
        &self.sp_sm
    }

    pub fn lowering_coefficients(&self) -> &[f64] {
        &self.lower
    }

    pub fn sp_sm_diagonal(&self) -> &[f64] {
        &self.sp_sm_diag
    }

    pub fn hamiltonian_operator(&self) -> CollectiveOperator {
        CollectiveOperator::new(self.space, self.h.clone()).expect("dimension matches space")
    }

    /// Largest rate in the generator; a step size well below its inverse
    /// keeps the fourth-order propagator accurate.
    pub fn fastest_rate(&self) -> f64 {
        let spectral_width = self.params.omega.abs() * self.space.n_spins() as f64;
        let max_emission = self.sp_sm_diag.iter().copied().fold(0.0, f64::max);
        spectral_width + self.gamma() * max_emission
    }

    /// Step size with fastest_rate * dt = 0.1, capped at 0.01 / kappa.
    pub fn suggested_dt(&self) -> f64 {
        (0.1 / self.fastest_rate()).min(0.01 / self.params.kappa)
    }

    /// `out = L x` using the banded structure. `x` may be non-Hermitian.
    pub fn apply_into(&self, x: &DMatrix<Complex64>, out: &mut DMatrix<Complex64>) {
        let n = self.space.dim();
        debug_assert_eq!(x.nrows(), n);
        let half_w = 0.5 * self.params.omega;
        let gamma = self.gamma();
        let l = &self.lower;
        let d = &self.sp_sm_diag;
        let xs = x.as_slice();
        let os = out.as_mut_slice();
        let at = |r: usize, c: usize| xs[r + c * n];

        for b in 0..n {
            for a in 0..n {
                // [Sx, X] entry, scaled by w/2 below.
                let mut hx = Complex64::new(0.0, 0.0);
                if a > 0 {
                    hx += at(a - 1, b) * l[a - 1];
                }
                if a + 1 < n {
                    hx += at(a + 1, b) * l[a];
                }
                if b > 0 {
                    hx -= at(a, b - 1) * l[b - 1];
                }
                if b + 1 < n {
                    hx -= at(a, b + 1) * l[b];
                }
                let mut jump = Complex64::new(0.0, 0.0);
                if a > 0 && b > 0 {
                    jump = at(a - 1, b - 1) * (l[a - 1] * l[b - 1]);
                }
                let v = at(a, b);
                os[a + b * n] = -I * hx * half_w + (jump - v * (0.5 * (d[a] + d[b]))) * gamma;
            }
        }
    }

    pub fn apply(&self, x: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        self.apply_into(x, &mut out);
        out
    }

    /// Reference dense implementation of L.
    pub fn apply_dense(&self, x: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let sm = self.ops.sm.matrix();
        let sp = self.ops.sp.matrix();
        let comm = &self.h * x - x * &self.h;
        let diss = sm * x * sp - (&self.sp_sm * x + x * &self.sp_sm) * Complex64::new(0.5, 0.0);
        comm * (-I) + diss * Complex64::new(self.gamma(), 0.0)
    }

    /// Dense adjoint generator
    /// L^dag O = i[H, O] + (2k/N)(S+ O S- - {S+ S-, O}/2).
    pub fn adjoint_apply_dense(&self, o: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let sm = self.ops.sm.matrix();
        let sp = self.ops.sp.matrix();
        let comm = &self.h * o - o * &self.h;
        let diss = sp * o * sm - (&self.sp_sm * o + o * &self.sp_sm) * Complex64::new(0.5, 0.0);
        comm * I + diss * Complex64::new(self.gamma(), 0.0)
    }

    /// One step of x' = L x with the fourth-order Taylor polynomial of
    /// exp(h L), which coincides with classical RK4 for this linear,
    /// time-independent generator.
    pub fn step(&self, x: &mut DMatrix<Complex64>, h: f64, ws: &mut StepWorkspace) {
        ws.term.copy_from(x);
        for order in 1..=4 {
            self.apply_into(&ws.term, &mut ws.scratch);
            let factor = h / order as f64;
            ws.scratch.iter_mut().for_each(|z| *z *= factor);
            std::mem::swap(&mut ws.term, &mut ws.scratch);
            *x += &ws.term;
        }
    }
}

/// Reusable buffers for [`LiouvillianContext::step`].
pub struct StepWorkspace {
    term: DMatrix<Complex64>,
    scratch: DMatrix<Complex64>,
}

impl StepWorkspace {
    pub fn new(dim: usize) -> Self {
        Self {
            term: DMatrix::zeros(dim, dim),
            scratch: DMatrix::zeros(dim, dim),
        }
    }
}

/// L rho for a validated density matrix.
pub fn liouvillian_apply(
    ctx: &LiouvillianContext,
    rho: &DensityMatrix,
) -> Result<DMatrix<Complex64>> {
    ctx.space.check_dim(rho.space().dim())?;
    Ok(ctx.apply(rho.matrix()))
}

/// Jump rate (2k/N) Tr[S+ S- rho].
pub fn jump_rate(ctx: &LiouvillianContext, rho: &DensityMatrix) -> f64 {
    rate_of(ctx, rho.matrix())
}

fn rate_of(ctx: &LiouvillianContext, x: &DMatrix<Complex64>) -> f64 {
    let diag: f64 = ctx
        .sp_sm_diag
        .iter()
        .enumerate()
        .map(|(k, d)| d * x[(k, k)].re)
        .sum();
    ctx.gamma() * diag
}

/// Checkpointed record of a density-matrix evolution.
#[derive(Debug, Clone, Default)]
pub struct EvolutionLog {
    pub times: Vec<f64>,
    pub sx: Vec<f64>,
    pub sy: Vec<f64>,
    pub sz: Vec<f64>,
    pub jump_rate: Vec<f64>,
    /// Integral of the jump rate from 0 (mean number of jumps).
    pub activity: Vec<f64>,
    /// Step size actually used.
    pub dt: f64,
    pub snapshots: Option<Vec<DensityMatrix>>,
}

impl EvolutionLog {
    /// CSV with columns t, sx, sy, sz, jump_rate.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<W> {
        let mut w = CsvWriter::new(out, &["t", "sx", "sy", "sz", "jump_rate"])?;
        for k in 0..self.times.len() {
            w.values(&[
                self.times[k],
                self.sx[k],
                self.sy[k],
                self.sz[k],
                self.jump_rate[k],
            ])?;
        }
        w.finish()
    }
}

/// Maps checkpoint times onto step indices of a uniform grid with step `h`.
pub(crate) fn checkpoint_steps(
    checkpoints: &[f64],
    h: f64,
    total_steps: usize,
) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(checkpoints.len());
    for &c in checkpoints {
        let k = (c / h).round();
        if !(k >= 0.0) || k as usize > total_steps || (k * h - c).abs() > 1e-9 * h.max(1.0) {
            return Err(KurError::OffGrid { time: c });
        }
        let k = k as usize;
        if out.last().is_some_and(|&prev| k <= prev) {
            return Err(KurError::InvalidParameter(
                "checkpoints must be strictly increasing".into(),
            ));
        }
        out.push(k);
    }
    Ok(out)
}

/// Integrates rho' = L rho from `rho0` over [0, tau] with step `dt`,
/// recording observables at `checkpoints` (which must be multiples of the
/// step). Trace and positivity are verified at every checkpoint.
pub fn evolve_density(
    ctx: &LiouvillianContext,
    rho0: &DensityMatrix,
    tau: f64,
    dt: f64,
    checkpoints: &[f64],
    keep_snapshots: bool,
) -> Result<EvolutionLog> {
    ctx.space.check_dim(rho0.space().dim())?;
    if !(dt > 0.0) {
        return Err(KurError::InvalidParameter("dt must be positive".into()));
    }
    let steps = step_count(tau, dt);
    let h = if steps == 0 { dt } else { tau / steps as f64 };
    let marks = checkpoint_steps(checkpoints, h, steps)?;
    let last = marks.last().copied().unwrap_or(0);

    let mut log = EvolutionLog {
        dt: h,
        snapshots: keep_snapshots.then(Vec::new),
        ..Default::default()
    };
    let ops = &ctx.ops;
    let mut x = rho0.matrix().clone();
    let mut ws = StepWorkspace::new(ctx.space.dim());
    let mut next = 0;
    let mut activity = 0.0;
    let mut rate_prev = rate_of(ctx, &x);

    for k in 0..=last {
        if k > 0 {
            ctx.step(&mut x, h, &mut ws);
            let rate = rate_of(ctx, &x);
            activity += 0.5 * h * (rate + rate_prev);
            rate_prev = rate;
        }
        if next < marks.len() && marks[next] == k {
            let t = k as f64 * h;
            let rho = DensityMatrix::from_evolved(ctx.space, x.clone());
            let trace = rho.trace();
            if (trace - 1.0).abs() > DENSITY_TRACE_TOL {
                return Err(KurError::TraceDrift { time: t, trace });
            }
            let min_eig = rho.min_eigenvalue();
            if min_eig < -DENSITY_POSITIVITY_TOL {
                return Err(KurError::Positivity {
                    time: t,
                    min_eigenvalue: min_eig,
                });
            }
            log.times.push(t);
            log.sx.push(rho.expect_matrix(ops.sx.matrix()).re);
            log.sy.push(rho.expect_matrix(ops.sy.matrix()).re);
            log.sz.push(rho.expect_matrix(ops.sz.matrix()).re);
            log.jump_rate.push(rate_prev);
            log.activity.push(activity);
            if let Some(snaps) = log.snapshots.as_mut() {
                snaps.push(rho);
            }
            next += 1;
        }
    }
    Ok(log)
}

/// Samples f(u) = Tr[probe e^{L u}(rho H_eff^dag)] at u = 0, stride*dt,
/// 2*stride*dt, ..., u_max.
///
/// By trace duality this equals Tr[H_eff^dag (e^{L^dag u} probe) rho], the
/// inner correlation of the exact dynamical activity when probe = H.
pub fn dual_evolve_trace(
    ctx: &LiouvillianContext,
    rho_s2: &DensityMatrix,
    u_max: f64,
    dt: f64,
    stride: usize,
    probe: &DMatrix<Complex64>,
) -> Result<Vec<(f64, Complex64)>> {
    ctx.space.check_dim(rho_s2.space().dim())?;
    if stride == 0 || !(dt > 0.0) {
        return Err(KurError::InvalidParameter(
            "dt and stride must be positive".into(),
        ));
    }
    let coarse = dt * stride as f64;
    let samples = (u_max / coarse).round();
    if (samples * coarse - u_max).abs() > 1e-9 * coarse.max(1.0) {
        return Err(KurError::OffGrid { time: u_max });
    }
    let mut x = rho_s2.matrix() * ctx.h_eff.adjoint();
    let values = dual_samples(ctx, &mut x, samples as usize, dt, stride, probe);
    Ok(values
        .into_iter()
        .enumerate()
        .map(|(k, v)| (k as f64 * coarse, v))
        .collect())
}

/// Evolves `x` in place, returning Tr[probe x] at every `stride` steps
/// (including the start), `samples + 1` values in total.
pub(crate) fn dual_samples(
    ctx: &LiouvillianContext,
    x: &mut DMatrix<Complex64>,
    samples: usize,
    dt: f64,
    stride: usize,
    probe: &DMatrix<Complex64>,
) -> Vec<Complex64> {
    let mut ws = StepWorkspace::new(ctx.space.dim());
    let mut out = Vec::with_capacity(samples + 1);
    out.push(trace_of_product(probe, x));
    for _ in 0..samples {
        for _ in 0..stride {
            ctx.step(x, dt, &mut ws);
        }
        out.push(trace_of_product(probe, x));
    }
    out
}
