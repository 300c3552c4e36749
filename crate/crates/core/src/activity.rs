//! Dynamical activity: the classical jump count A, the exact quantum
//! activity J0 with its upper bound Jub, and the mean-field expressions Bmb
//! and its upper bound BmbUb.
//!
//! All integrals use the trapezoidal rule on grid nodes. A double integral
//! over the triangle 0 <= s2 <= s1 <= tau is evaluated as an inner trapezoid
//! over s2 in [0, s1] followed by a cumulative trapezoid over s1, so every
//! node of the grid yields a value of the bound at that tau.

use std::io::Write;

use nalgebra::{DMatrix, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dicke::{
    spin_coherent_state, trace_of_product, DensityMatrix, QuantumState, StateVector,
};
use crate::error::{KurError, Result};
use crate::io::CsvWriter;
use crate::lindblad::{dual_samples, evolve_density, LiouvillianContext};
use crate::mean_field::{
    fundamental_propagator, integrate_mean_field, inverse_3x3, Magnetization, MeanFieldTrajectory,
    ModelParams,
};

/// Largest N accepted by the exact density-matrix routines.
pub const EXACT_N_LIMIT: usize = 200;

/// Relative tolerance for negative variances caused by round-off.
pub const RADICAND_TOL: f64 = 1e-10;

/// Cumulative trapezoid of uniformly spaced samples; output[0] = 0.
pub fn cumulative_trapezoid(values: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for (k, v) in values.iter().enumerate() {
        if k > 0 {
            acc += 0.5 * h * (values[k - 1] + v);
        }
        out.push(acc);
    }
    out
}

/// Classical activity (kN/2) * integral of (1 - m_z^2), at every grid node.
pub fn classical_activity_mf(traj: &MeanFieldTrajectory, p: &ModelParams) -> Vec<f64> {
    let prefactor = 0.5 * p.kappa * p.n_spins as f64;
    let integrand: Vec<f64> = traj
        .magnetizations()
        .iter()
        .map(|m| prefactor * (1.0 - m.z * m.z))
        .collect();
    cumulative_trapezoid(&integrand, traj.step())
}

/// Mean-field quantum dynamical activity at every grid node.
///
/// The coherent part is 2 N w times the triangle integral of
/// U_x.(s1, s2) w(s2), where w collects the magnetization-dependent weights.
/// Writing U(s1, s2) = M(s1) M(s2)^{-1} turns the inner integral into a
/// prefix sum of M(s2)^{-1} w(s2).
pub fn b_mb(traj: &MeanFieldTrajectory, p: &ModelParams) -> Result<Vec<f64>> {
    let fund = traj.fundamental().ok_or_else(|| {
        KurError::InvalidParameter("b_mb needs the fundamental propagator".into())
    })?;
    let classical = classical_activity_mf(traj, p);
    let h = traj.step();

    let mut projected = Vec::with_capacity(traj.len());
    for (j, m) in traj.magnetizations().iter().enumerate() {
        let inv = inverse_3x3(&fund[j]).ok_or_else(|| {
            KurError::InvalidParameter(format!("fundamental matrix singular at node {j}"))
        })?;
        projected.push(inv * coherent_weights(m.x, m.y, m.z, p));
    }

    // inner[i] = trapezoid over s2 in [0, t_i] of U_x.(t_i, s2) w(s2), i.e.
    // h (v_0/2 + v_1 + ... + v_i/2) = h sum_{j<i} v_j + h v_i/2 - h v_0/2.
    let mut inner = Vec::with_capacity(traj.len());
    let mut prefix = Vector3::zeros();
    for i in 0..traj.len() {
        let trap = if i == 0 {
            Vector3::zeros()
        } else {
            prefix * h + projected[i] * (0.5 * h) - projected[0] * (0.5 * h)
        };
        prefix += projected[i];
        let row = fund[i].row(0);
        inner.push(row[0] * trap[0] + row[1] * trap[1] + row[2] * trap[2]);
    }
    let outer = cumulative_trapezoid(&inner, h);
    let coherent = 2.0 * p.n_spins as f64 * p.omega;
    Ok(classical
        .iter()
        .zip(&outer)
        .map(|(a, q)| a + coherent * q)
        .collect())
}

/// w(s2) with U_x.(s1, s2) . w = w [sum_a U_xa (d_xa - m_x m_a)]
///                              + k m_z (m_y U_xx - m_x U_xy).
fn coherent_weights(mx: f64, my: f64, mz: f64, p: &ModelParams) -> Vector3<f64> {
    let (w, k) = (p.omega, p.kappa);
    Vector3::new(
        w * (1.0 - mx * mx) + k * mz * my,
        -w * mx * my - k * mz * mx,
        -w * mx * mz,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundForm {
    /// 2N * int_0^tau ds1 F_S(s1) int_0^s1 ds2 F_eff(s2)
    Nested,
    /// 2N * (int_0^tau F_S) (int_0^tau F_eff)
    Product,
}

/// F_S = w sqrt(1 - m_x^2).
pub fn f_s(mx: f64, omega: f64) -> f64 {
    omega * (1.0 - mx * mx).max(0.0).sqrt()
}

/// F_eff = w sqrt(1 - m_x^2) + k |m_z| sqrt(1 - m_z^2).
pub fn f_eff(mx: f64, mz: f64, omega: f64, kappa: f64) -> f64 {
    f_s(mx, omega) + kappa * mz.abs() * (1.0 - mz * mz).max(0.0).sqrt()
}

/// Mean-field upper bound at every grid node.
pub fn b_mb_ub(traj: &MeanFieldTrajectory, p: &ModelParams, form: BoundForm) -> Vec<f64> {
    let classical = classical_activity_mf(traj, p);
    let h = traj.step();
    let fs: Vec<f64> = traj
        .magnetizations()
        .iter()
        .map(|m| f_s(m.x, p.omega))
        .collect();
    let fe: Vec<f64> = traj
        .magnetizations()
        .iter()
        .map(|m| f_eff(m.x, m.z, p.omega, p.kappa))
        .collect();
    let int_fe = cumulative_trapezoid(&fe, h);
    let quantum: Vec<f64> = match form {
        BoundForm::Nested => {
            let inner: Vec<f64> = fs.iter().zip(&int_fe).map(|(a, b)| a * b).collect();
            cumulative_trapezoid(&inner, h)
        }
        BoundForm::Product => {
            let int_fs = cumulative_trapezoid(&fs, h);
            int_fs.iter().zip(&int_fe).map(|(a, b)| a * b).collect()
        }
    };
    let scale = 2.0 * p.n_spins as f64;
    classical
        .iter()
        .zip(&quantum)
        .map(|(a, q)| a + scale * q)
        .collect()
}

/// Grid for the exact routines: RK4 step `dt`, with density snapshots and
/// integral nodes every `stride` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactGrid {
    pub dt: f64,
    pub stride: usize,
}

impl ExactGrid {
    pub fn spacing(&self) -> f64 {
        self.dt * self.stride as f64
    }

    /// Number of intervals of the node grid over [0, tau].
    pub fn intervals(&self, tau: f64) -> Result<usize> {
        if !(self.dt > 0.0) || self.stride == 0 {
            return Err(KurError::InvalidParameter(
                "exact grid needs dt > 0 and stride >= 1".into(),
            ));
        }
        let h = self.spacing();
        let n = (tau / h).round();
        if (n * h - tau).abs() > 1e-9 * h.max(1.0) {
            return Err(KurError::InvalidParameter(format!(
                "tau = {tau} is not a multiple of the node spacing {h}"
            )));
        }
        Ok(n as usize)
    }
}

/// Exact activities on the node grid of an [`ExactGrid`].
#[derive(Debug, Clone)]
pub struct ExactActivity {
    pub times: Vec<f64>,
    /// Integral of the exact jump rate.
    pub a: Vec<f64>,
    pub j0: Vec<f64>,
    pub jub: Vec<f64>,
    /// J0 evaluated as A + 8 int int Re f - 4 (int <H>)^2. Same quantity as
    /// `j0`, differing only by discretization error.
    pub j0_direct: Vec<f64>,
    pub mean_h: Vec<f64>,
    pub sigma_h: Vec<f64>,
    pub sigma_heff: Vec<f64>,
}

fn check_exact_size(ctx: &LiouvillianContext) -> Result<()> {
    let n = ctx.space().n_spins();
    if n > EXACT_N_LIMIT {
        return Err(KurError::TooLarge {
            n,
            limit: EXACT_N_LIMIT,
        });
    }
    Ok(())
}

fn sigma(second: f64, first_abs_sqr: f64, what: &'static str, time: f64) -> Result<f64> {
    let radicand = second - first_abs_sqr;
    if radicand < -RADICAND_TOL * second.abs().max(1.0) {
        return Err(KurError::NegativeVariance {
            what,
            time,
            radicand,
        });
    }
    Ok(radicand.max(0.0).sqrt())
}

/// Triangle integral of `integrand(j, k)` (s2 = t_j <= s1 = t_k), cumulative in s1.
fn triangle_integral(n_nodes: usize, h: f64, integrand: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    let inner: Vec<f64> = (0..n_nodes)
        .map(|k| {
            if k == 0 {
                return 0.0;
            }
            let mut acc = 0.5 * (integrand(0, k) + integrand(k, k));
            for j in 1..k {
                acc += integrand(j, k);
            }
            acc * h
        })
        .collect();
    cumulative_trapezoid(&inner, h)
}

/// Computes A, J0 and Jub from the master equation. J0 requires one forward
/// evolution of rho(s2) H_eff^dag per node s2; those run in parallel.
pub fn exact_activity(
    ctx: &LiouvillianContext,
    psi0: &StateVector,
    tau: f64,
    grid: ExactGrid,
    with_j0: bool,
) -> Result<ExactActivity> {
    check_exact_size(ctx)?;
    let intervals = grid.intervals(tau)?;
    let h = grid.spacing();
    let nodes: Vec<f64> = (0..=intervals).map(|k| k as f64 * h).collect();
    let rho0 = psi0.to_density();
    let log = evolve_density(ctx, &rho0, tau, grid.dt, &nodes, true)?;
    let snaps = log.snapshots.as_ref().expect("snapshots requested");

    let hmat = ctx.hamiltonian();
    let heff = ctx.effective_hamiltonian();
    let heff_dag = heff.adjoint();
    let h_sq = hmat * hmat;
    let heff_sq = &heff_dag * heff;

    let mut mean_h = Vec::with_capacity(nodes.len());
    let mut sigma_h = Vec::with_capacity(nodes.len());
    let mut sigma_heff = Vec::with_capacity(nodes.len());
    for (rho, &t) in snaps.iter().zip(&nodes) {
        let eh = rho.expect_matrix(hmat).re;
        mean_h.push(eh);
        sigma_h.push(sigma(rho.expect_matrix(&h_sq).re, eh * eh, "H", t)?);
        let eheff = rho.expect_matrix(heff);
        sigma_heff.push(sigma(
            rho.expect_matrix(&heff_sq).re,
            eheff.norm_sqr(),
            "H_eff",
            t,
        )?);
    }

    let a = log.activity.clone();
    let ub_quantum = triangle_integral(nodes.len(), h, |j, k| sigma_heff[j] * sigma_h[k]);
    let jub: Vec<f64> = a
        .iter()
        .zip(&ub_quantum)
        .map(|(a, q)| a + 8.0 * q)
        .collect();

    let (j0, j0_direct) = if with_j0 {
        let corr = correlation_table(ctx, snaps, &heff_dag, grid, intervals);
        let cov = triangle_integral(nodes.len(), h, |j, k| {
            corr[j][k - j].re - mean_h[j] * mean_h[k]
        });
        let raw = triangle_integral(nodes.len(), h, |j, k| corr[j][k - j].re);
        let int_h = cumulative_trapezoid(&mean_h, h);
        let j0: Vec<f64> = a.iter().zip(&cov).map(|(a, q)| a + 8.0 * q).collect();
        let direct: Vec<f64> = (0..nodes.len())
            .map(|k| a[k] + 8.0 * raw[k] - 4.0 * int_h[k] * int_h[k])
            .collect();
        (j0, direct)
    } else {
        (Vec::new(), Vec::new())
    };

    Ok(ExactActivity {
        times: nodes,
        a,
        j0,
        jub,
        j0_direct,
        mean_h,
        sigma_h,
        sigma_heff,
    })
}

/// corr[j][k - j] = Tr[H e^{L (t_k - t_j)} (rho(t_j) H_eff^dag)].
fn correlation_table(
    ctx: &LiouvillianContext,
    snaps: &[DensityMatrix],
    heff_dag: &DMatrix<Complex64>,
    grid: ExactGrid,
    intervals: usize,
) -> Vec<Vec<Complex64>> {
    let hmat = ctx.hamiltonian();
    (0..=intervals)
        .into_par_iter()
        .map(|j| {
            let mut x = snaps[j].matrix() * heff_dag;
            dual_samples(ctx, &mut x, intervals - j, grid.dt, grid.stride, hmat)
        })
        .collect()
}

/// Exact J0 on the node grid, as (tau, J0) pairs.
pub fn exact_j0(
    ctx: &LiouvillianContext,
    psi0: &StateVector,
    tau: f64,
    grid: ExactGrid,
) -> Result<Vec<(f64, f64)>> {
    let ex = exact_activity(ctx, psi0, tau, grid, true)?;
    Ok(ex.times.into_iter().zip(ex.j0).collect())
}

/// Exact upper bound Jub on the node grid, as (tau, Jub) pairs.
pub fn exact_jub(
    ctx: &LiouvillianContext,
    psi0: &StateVector,
    tau: f64,
    grid: ExactGrid,
) -> Result<Vec<(f64, f64)>> {
    let ex = exact_activity(ctx, psi0, tau, grid, false)?;
    Ok(ex.times.into_iter().zip(ex.jub).collect())
}

/// Tr[H e^{L u}(rho H_eff^dag)] is real-linear in its inputs; exposed for
/// tests of the inner correlation.
pub fn inner_correlation_at_zero(ctx: &LiouvillianContext, rho: &DensityMatrix) -> Complex64 {
    let x = rho.matrix() * ctx.effective_hamiltonian().adjoint();
    trace_of_product(ctx.hamiltonian(), &x)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundsMetadata {
    pub n_spins: usize,
    pub omega: f64,
    pub kappa: f64,
    pub theta_bloch: f64,
    pub phi: f64,
    pub tau: f64,
    pub mean_field_dt: f64,
    pub exact_grid: Option<ExactGrid>,
    pub grid_size: usize,
    /// Nodes where the fundamental matrix determinant fell below the warning
    /// threshold.
    pub ill_conditioned_nodes: usize,
}

/// Activities on a shared tau grid. Absent quantities are `None`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundsReport {
    pub metadata: BoundsMetadata,
    pub tau: Vec<f64>,
    /// Mean-field classical activity.
    pub a: Vec<f64>,
    pub j0: Option<Vec<f64>>,
    pub jub: Option<Vec<f64>>,
    pub bmb: Option<Vec<f64>>,
    pub bmb_ub_nested: Option<Vec<f64>>,
    pub bmb_ub_product: Option<Vec<f64>>,
    /// Exact classical activity, when the master equation was solved.
    pub a_exact: Option<Vec<f64>>,
}

impl BoundsReport {
    pub const COLUMNS: [&'static str; 8] = [
        "tau",
        "A",
        "J0",
        "Jub",
        "Bmb",
        "BmbUb_nested",
        "BmbUb_product",
        "A_exact",
    ];

    pub fn write_csv<W: Write>(&self, out: W) -> Result<W> {
        let mut w = CsvWriter::new(out, &Self::COLUMNS)?;
        let pick = |v: &Option<Vec<f64>>, k: usize| v.as_ref().map(|v| v[k]);
        for k in 0..self.tau.len() {
            w.row(&[
                Some(self.tau[k]),
                Some(self.a[k]),
                pick(&self.j0, k),
                pick(&self.jub, k),
                pick(&self.bmb, k),
                pick(&self.bmb_ub_nested, k),
                pick(&self.bmb_ub_product, k),
                pick(&self.a_exact, k),
            ])?;
        }
        w.finish()
    }

    pub fn write_metadata_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, &self.metadata)?;
        Ok(())
    }

    /// Checks Bmb <= BmbUb(nested) <= BmbUb(product) and J0 <= Jub at every
    /// tau > 0. Returns human-readable violations.
    pub fn ordering_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let chains: [(&str, &Option<Vec<f64>>, &str, &Option<Vec<f64>>); 3] = [
            ("Bmb", &self.bmb, "BmbUb_nested", &self.bmb_ub_nested),
            (
                "BmbUb_nested",
                &self.bmb_ub_nested,
                "BmbUb_product",
                &self.bmb_ub_product,
            ),
            ("J0", &self.j0, "Jub", &self.jub),
        ];
        for (lo_name, lo, hi_name, hi) in chains {
            if let (Some(lo), Some(hi)) = (lo, hi) {
                for k in 0..self.tau.len() {
                    if self.tau[k] > 0.0 && lo[k] > hi[k] * (1.0 + 1e-12) + 1e-12 {
                        out.push(format!(
                            "{lo_name} = {} > {hi_name} = {} at tau = {}",
                            lo[k], hi[k], self.tau[k]
                        ));
                    }
                }
            }
        }
        out
    }
}

/// Which quantities to compute for a [`BoundsReport`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Quantities {
    pub j0: bool,
    pub jub: bool,
    pub bmb: bool,
    pub bmb_ub: bool,
}

impl Quantities {
    pub fn all() -> Self {
        Self {
            j0: true,
            jub: true,
            bmb: true,
            bmb_ub: true,
        }
    }

    pub fn needs_exact(&self) -> bool {
        self.j0 || self.jub
    }
}

/// Inputs for [`compute_bounds`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsRequest {
    pub n_spins: usize,
    pub omega: f64,
    pub kappa: f64,
    pub theta_bloch: f64,
    pub phi: f64,
    pub tau: f64,
    /// Spacing of the reported tau grid. Ignored when `exact` is set, in
    /// which case the exact node spacing is used.
    pub spacing: f64,
    /// Upper limit on the mean-field RK4 step.
    pub mean_field_dt: f64,
    pub exact: Option<ExactGrid>,
}

/// Number of intervals of width `spacing` in [0, tau]; tau must be a multiple.
pub fn grid_intervals(tau: f64, spacing: f64) -> Result<usize> {
    if !(spacing > 0.0) {
        return Err(KurError::InvalidParameter(
            "grid spacing must be positive".into(),
        ));
    }
    let n = (tau / spacing).round();
    if (n * spacing - tau).abs() > 1e-9 * spacing.max(1.0) {
        return Err(KurError::InvalidParameter(format!(
            "tau = {tau} is not a multiple of the grid spacing {spacing}"
        )));
    }
    Ok(n as usize)
}

/// Evaluates the requested activities on a shared tau grid.
///
/// The mean-field step is refined so that every grid node is a mean-field
/// node. Exact quantities need `req.exact` and N <= [`EXACT_N_LIMIT`].
pub fn compute_bounds(req: &BoundsRequest, which: Quantities) -> Result<BoundsReport> {
    let params = ModelParams {
        omega: req.omega,
        kappa: req.kappa,
        n_spins: req.n_spins,
        tau: req.tau,
        dt: req.mean_field_dt,
    };
    params.validate()?;
    let exact_grid = if which.needs_exact() {
        if req.n_spins > EXACT_N_LIMIT {
            return Err(KurError::TooLarge {
                n: req.n_spins,
                limit: EXACT_N_LIMIT,
            });
        }
        Some(req.exact.ok_or_else(|| {
            KurError::InvalidParameter("exact quantities need an exact grid".into())
        })?)
    } else {
        None
    };
    let spacing = exact_grid.map_or(req.spacing, |g| g.spacing());
    let intervals = grid_intervals(req.tau, spacing)?;
    let tau: Vec<f64> = (0..=intervals).map(|k| k as f64 * spacing).collect();

    let sub = if intervals == 0 {
        1
    } else {
        (spacing / req.mean_field_dt - 1e-9).ceil().max(1.0) as usize
    };
    let mf_params = ModelParams {
        dt: if intervals == 0 {
            req.mean_field_dt
        } else {
            spacing / sub as f64
        },
        ..params
    };
    let m0 = Magnetization::from_angles(req.theta_bloch, req.phi);
    let traj = fundamental_propagator(&integrate_mean_field(m0, &mf_params)?, &mf_params);
    if traj.len() != intervals * sub + 1 {
        return Err(KurError::InvalidParameter(
            "mean-field grid does not align with the report grid".into(),
        ));
    }
    let sample = |v: Vec<f64>| -> Vec<f64> { (0..=intervals).map(|k| v[k * sub]).collect() };

    let a = sample(classical_activity_mf(&traj, &mf_params));
    let bmb = if which.bmb {
        Some(sample(b_mb(&traj, &mf_params)?))
    } else {
        None
    };
    let (nested, product) = if which.bmb_ub {
        (
            Some(sample(b_mb_ub(&traj, &mf_params, BoundForm::Nested))),
            Some(sample(b_mb_ub(&traj, &mf_params, BoundForm::Product))),
        )
    } else {
        (None, None)
    };

    let (j0, jub, a_exact) = match exact_grid {
        Some(grid) => {
            let ctx = LiouvillianContext::new(params)?;
            let psi0 = spin_coherent_state(ctx.space(), req.theta_bloch, req.phi);
            let ex = exact_activity(&ctx, &psi0, req.tau, grid, which.j0)?;
            (
                which.j0.then_some(ex.j0),
                which.jub.then_some(ex.jub),
                Some(ex.a),
            )
        }
        None => (None, None, None),
    };

    Ok(BoundsReport {
        metadata: BoundsMetadata {
            n_spins: req.n_spins,
            omega: req.omega,
            kappa: req.kappa,
            theta_bloch: req.theta_bloch,
            phi: req.phi,
            tau: req.tau,
            mean_field_dt: mf_params.dt,
            exact_grid,
            grid_size: tau.len(),
            ill_conditioned_nodes: traj.ill_conditioned_nodes().len(),
        },
        tau,
        a,
        j0,
        jub,
        bmb,
        bmb_ub_nested: nested,
        bmb_ub_product: product,
        a_exact,
    })
}

/// Indices of `values` where the sequence decreases by more than `tol`
/// (relative).
pub fn monotonicity_violations(values: &[f64], tol: f64) -> Vec<usize> {
    values
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1] < w[0] - tol * w[0].abs().max(1.0))
        .map(|(k, _)| k + 1)
        .collect()
}
