//! Experiment drivers: the time sweep, the system-size sweep and the exact
//! verification, plus the check of the chain
//!
//! Var[N_J] / (tau r(tau))^2 >= 1 / Bmb >= 1 / BmbUb,
//!
//! where r is the deterministic jump rate of the master equation.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activity::{
    compute_bounds, grid_intervals, BoundsReport, BoundsRequest, ExactGrid, Quantities,
};
use crate::dicke::spin_coherent_state;
use crate::error::{KurError, Result};
use crate::io::CsvWriter;
use crate::lindblad::{evolve_density, LiouvillianContext};
use crate::mean_field::ModelParams;
use crate::stats::{log_log_fit, mean_and_m2, LinearFit};
use crate::trajectories::{max_stable_dt, run_ensemble, trajectory_seed, EnsembleStats};

/// Target per-step jump probability when the trajectory step is chosen
/// automatically.
pub const AUTO_JUMP_PROBABILITY: f64 = 0.02;

/// Statistical slack on the Monte Carlo side of the chain, in standard errors.
pub const SE_SLACK: f64 = 3.0;

fn default_mean_field_dt() -> f64 {
    1e-3
}

fn default_floor() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    #[serde(default)]
    pub theta_bloch: f64,
    #[serde(default)]
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSweepConfig {
    pub n_spins: usize,
    pub kappa: f64,
    pub omegas: Vec<f64>,
    pub tau: f64,
    /// Distance between checkpoints; tau must be a multiple.
    pub checkpoint_spacing: f64,
    pub n_traj: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub initial: InitialState,
    /// Trajectory step. Chosen from the jump-probability target when absent.
    #[serde(default)]
    pub dt: Option<f64>,
    /// Step of the density-matrix evolution giving r(tau).
    #[serde(default)]
    pub density_dt: Option<f64>,
    #[serde(default = "default_mean_field_dt")]
    pub mean_field_dt: f64,
    /// Rows with kappa * tau below this are not checked.
    #[serde(default = "default_floor")]
    pub floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeSweepConfig {
    pub n_list: Vec<usize>,
    pub kappa: f64,
    pub omegas: Vec<f64>,
    pub tau: f64,
    pub n_traj: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub initial: InitialState,
    /// Trajectory step cap. Chosen per N from the jump-probability target
    /// when absent.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub density_dt: Option<f64>,
    #[serde(default = "default_mean_field_dt")]
    pub mean_field_dt: f64,
    /// Also compute the exact J0 at tau for every N up to this value.
    #[serde(default)]
    pub exact_j0_max_n: usize,
    #[serde(default)]
    pub exact: Option<ExactGrid>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationConfig {
    pub n_spins: usize,
    pub kappa: f64,
    pub omegas: Vec<f64>,
    pub tau: f64,
    #[serde(default)]
    pub initial: InitialState,
    pub exact: ExactGrid,
    #[serde(default = "default_mean_field_dt")]
    pub mean_field_dt: f64,
    /// Times at which |Bmb - J0| / J0 is reported.
    #[serde(default)]
    pub deviation_at: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExperimentConfig {
    TimeSweep(TimeSweepConfig),
    SizeSweep(SizeSweepConfig),
    Verification(VerificationConfig),
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::TimeSweep(c) => c.validate(),
            Self::SizeSweep(c) => c.validate(),
            Self::Verification(c) => c.validate(),
        }
    }
}

fn bad<T>(msg: impl Into<String>) -> Result<T> {
    Err(KurError::InvalidParameter(msg.into()))
}

fn check_rates(kappa: f64, omegas: &[f64], tau: f64) -> Result<()> {
    if !(kappa > 0.0) || !kappa.is_finite() {
        return bad("kappa must be positive");
    }
    if omegas.is_empty() {
        return bad("omega list is empty");
    }
    if omegas.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return bad("omega values must be non-negative");
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return bad("tau must be positive");
    }
    Ok(())
}

fn check_positive(name: &str, v: Option<f64>) -> Result<()> {
    match v {
        Some(x) if !(x > 0.0) || !x.is_finite() => bad(format!("{name} must be positive")),
        _ => Ok(()),
    }
}

impl TimeSweepConfig {
    pub fn validate(&self) -> Result<()> {
        check_rates(self.kappa, &self.omegas, self.tau)?;
        if self.n_spins == 0 {
            return bad("N must be at least 1");
        }
        if self.n_traj < 3 {
            return bad("n_traj must be at least 3");
        }
        grid_intervals(self.tau, self.checkpoint_spacing)?;
        check_positive("dt", self.dt)?;
        check_positive("density_dt", self.density_dt)?;
        check_positive("mean_field_dt", Some(self.mean_field_dt))
    }

    pub fn checkpoints(&self) -> Vec<f64> {
        let n = grid_intervals(self.tau, self.checkpoint_spacing).unwrap_or(0);
        (1..=n)
            .map(|k| k as f64 * self.checkpoint_spacing)
            .collect()
    }
}

impl SizeSweepConfig {
    pub fn validate(&self) -> Result<()> {
        check_rates(self.kappa, &self.omegas, self.tau)?;
        if self.n_list.is_empty() || self.n_list.contains(&0) {
            return bad("N list must be nonempty and positive");
        }
        if self.n_traj < 3 {
            return bad("n_traj must be at least 3");
        }
        if self.exact_j0_max_n > 0 && self.exact.is_none() {
            return bad("exact_j0_max_n needs an exact grid");
        }
        check_positive("dt", self.dt)?;
        check_positive("density_dt", self.density_dt)?;
        check_positive("mean_field_dt", Some(self.mean_field_dt))
    }
}

impl VerificationConfig {
    pub fn validate(&self) -> Result<()> {
        check_rates(self.kappa, &self.omegas, self.tau)?;
        if self.n_spins == 0 {
            return bad("N must be at least 1");
        }
        self.exact.intervals(self.tau)?;
        check_positive("mean_field_dt", Some(self.mean_field_dt))
    }
}

/// Largest step not above `cap` that divides `spacing`.
pub fn aligned_step(spacing: f64, cap: f64) -> f64 {
    spacing / (spacing / cap - 1e-9).ceil().max(1.0)
}

/// Master seed of cell `index` of a sweep.
pub fn cell_seed(master_seed: u64, index: u64) -> u64 {
    trajectory_seed(master_seed ^ 0xC3A5_C85C_97CB_3127, index)
}

/// One checkpoint of a Monte Carlo cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KurRow {
    pub tau: f64,
    pub mean: f64,
    pub var: f64,
    /// tau r(tau), with r the deterministic jump rate.
    pub denominator: f64,
    /// Var / denominator^2.
    pub relative_fluctuation: f64,
    /// Standard error of `relative_fluctuation`.
    pub se: f64,
    /// tau times the central difference of the ensemble mean, when both
    /// neighbours exist.
    pub denominator_mc: Option<f64>,
    pub denominator_mc_se: Option<f64>,
    pub relative_fluctuation_mc: Option<f64>,
    pub inv_bmb: f64,
    pub inv_bmb_ub: f64,
    pub inv_bmb_ub_product: f64,
}

impl KurRow {
    pub const COLUMNS: [&'static str; 12] = [
        "tau",
        "mean",
        "var",
        "denominator",
        "relative_fluctuation",
        "se",
        "denominator_mc",
        "denominator_mc_se",
        "relative_fluctuation_mc",
        "inv_Bmb",
        "inv_BmbUb",
        "inv_BmbUb_product",
    ];

    fn fields(&self) -> [Option<f64>; 12] {
        [
            Some(self.tau),
            Some(self.mean),
            Some(self.var),
            Some(self.denominator),
            Some(self.relative_fluctuation),
            Some(self.se),
            self.denominator_mc,
            self.denominator_mc_se,
            self.relative_fluctuation_mc,
            Some(self.inv_bmb),
            Some(self.inv_bmb_ub),
            Some(self.inv_bmb_ub_product),
        ]
    }
}

/// Result of one (N, omega) Monte Carlo cell.
#[derive(Debug, Clone)]
pub struct KurCell {
    pub n_spins: usize,
    pub omega: f64,
    pub kappa: f64,
    pub master_seed: u64,
    pub dt: f64,
    pub density_dt: f64,
    pub rows: Vec<KurRow>,
    pub ensemble: EnsembleStats,
    pub bounds: BoundsReport,
}

impl KurCell {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<W> {
        let mut w = CsvWriter::new(out, &KurRow::COLUMNS)?;
        for r in &self.rows {
            w.row(&r.fields())?;
        }
        w.finish()
    }
}

struct CellSpec {
    n_spins: usize,
    omega: f64,
    kappa: f64,
    tau: f64,
    checkpoints: Vec<f64>,
    spacing: f64,
    n_traj: usize,
    master_seed: u64,
    initial: InitialState,
    dt: Option<f64>,
    density_dt: Option<f64>,
    mean_field_dt: f64,
}

fn run_cell(spec: CellSpec) -> Result<KurCell> {
    let params = ModelParams {
        omega: spec.omega,
        kappa: spec.kappa,
        n_spins: spec.n_spins,
        tau: spec.tau,
        dt: spec.mean_field_dt,
    };
    let ctx = LiouvillianContext::new(params)?;
    let psi0 = spin_coherent_state(ctx.space(), spec.initial.theta_bloch, spec.initial.phi);

    let auto_dt = max_stable_dt(&ctx, AUTO_JUMP_PROBABILITY).min(0.01 / spec.kappa.max(spec.omega));
    let dt = aligned_step(spec.spacing, spec.dt.unwrap_or(auto_dt));
    let ensemble = run_ensemble(
        &psi0,
        &ctx,
        spec.tau,
        dt,
        &spec.checkpoints,
        spec.n_traj,
        spec.master_seed,
        true,
    )?;

    let density_dt = aligned_step(spec.spacing, spec.density_dt.unwrap_or(ctx.suggested_dt()));
    let log = evolve_density(
        &ctx,
        &psi0.to_density(),
        spec.tau,
        density_dt,
        &spec.checkpoints,
        false,
    )?;

    let bounds = compute_bounds(
        &BoundsRequest {
            n_spins: spec.n_spins,
            omega: spec.omega,
            kappa: spec.kappa,
            theta_bloch: spec.initial.theta_bloch,
            phi: spec.initial.phi,
            tau: spec.tau,
            spacing: spec.spacing,
            mean_field_dt: spec.mean_field_dt,
            exact: None,
        },
        Quantities {
            bmb: true,
            bmb_ub: true,
            ..Quantities::default()
        },
    )?;

    let rows = assemble_rows(&spec, &ensemble, &log.jump_rate, &bounds)?;
    Ok(KurCell {
        n_spins: spec.n_spins,
        omega: spec.omega,
        kappa: spec.kappa,
        master_seed: spec.master_seed,
        dt: ensemble.dt,
        density_dt,
        rows,
        ensemble,
        bounds,
    })
}

fn assemble_rows(
    spec: &CellSpec,
    ens: &EnsembleStats,
    rate: &[f64],
    bounds: &BoundsReport,
) -> Result<Vec<KurRow>> {
    let bmb = bounds.bmb.as_ref().expect("bmb requested");
    let nested = bounds.bmb_ub_nested.as_ref().expect("bmb_ub requested");
    let product = bounds.bmb_ub_product.as_ref().expect("bmb_ub requested");
    let records = ens.records.as_ref().expect("records kept");
    let n = records.len() as f64;

    let mut rows = Vec::with_capacity(spec.checkpoints.len());
    for (c, &tau) in spec.checkpoints.iter().enumerate() {
        let node = (tau / spec.spacing).round() as usize;
        if (bounds.tau[node] - tau).abs() > 1e-9 * spec.spacing {
            return Err(KurError::OffGrid { time: tau });
        }
        let denominator = tau * rate[c];
        let fluct = ens.var[c] / (denominator * denominator);

        // Central difference of the mean, with its standard error from the
        // per-trajectory increments.
        let (mut denominator_mc, mut denominator_mc_se, mut fluct_mc) = (None, None, None);
        if c > 0 && c + 1 < spec.checkpoints.len() {
            let span = spec.checkpoints[c + 1] - spec.checkpoints[c - 1];
            let incr: Vec<f64> = records
                .iter()
                .map(|(_, k)| f64::from(k[c + 1]) - f64::from(k[c - 1]))
                .collect();
            let (m, m2) = mean_and_m2(&incr);
            let d = tau * m / span;
            denominator_mc = Some(d);
            denominator_mc_se = Some(tau / span * (m2 / (n - 1.0) / n).sqrt());
            fluct_mc = Some(ens.var[c] / (d * d));
        }

        rows.push(KurRow {
            tau,
            mean: ens.mean[c],
            var: ens.var[c],
            denominator,
            relative_fluctuation: fluct,
            se: ens.se_var[c] / (denominator * denominator),
            denominator_mc,
            denominator_mc_se,
            relative_fluctuation_mc: fluct_mc,
            inv_bmb: 1.0 / bmb[node],
            inv_bmb_ub: 1.0 / nested[node],
            inv_bmb_ub_product: 1.0 / product[node],
        });
    }
    Ok(rows)
}

/// One ensemble per omega, checkpointed every `checkpoint_spacing`.
pub fn run_time_sweep(cfg: &TimeSweepConfig) -> Result<Vec<KurCell>> {
    cfg.validate()?;
    let checkpoints = cfg.checkpoints();
    cfg.omegas
        .par_iter()
        .enumerate()
        .map(|(i, &omega)| {
            run_cell(CellSpec {
                n_spins: cfg.n_spins,
                omega,
                kappa: cfg.kappa,
                tau: cfg.tau,
                checkpoints: checkpoints.clone(),
                spacing: cfg.checkpoint_spacing,
                n_traj: cfg.n_traj,
                master_seed: cell_seed(cfg.master_seed, i as u64),
                initial: cfg.initial,
                dt: cfg.dt,
                density_dt: cfg.density_dt,
                mean_field_dt: cfg.mean_field_dt,
            })
        })
        .collect()
}

/// Size-sweep entry for one (N, omega) at the final time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeRow {
    pub n_spins: usize,
    pub omega: f64,
    pub master_seed: u64,
    pub dt: f64,
    pub kur: KurRow,
    pub j0: Option<f64>,
}

/// Log-log slopes against N for one omega.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeSlopes {
    pub omega: f64,
    pub fluctuation: Slope,
    pub inv_bmb: Slope,
    pub inv_bmb_ub: Slope,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slope {
    pub slope: f64,
    pub slope_se: f64,
}

impl From<LinearFit> for Slope {
    fn from(f: LinearFit) -> Self {
        Self {
            slope: f.slope,
            slope_se: f.slope_se,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SizeSweep {
    pub tau: f64,
    pub rows: Vec<SizeRow>,
    pub slopes: Vec<SizeSlopes>,
}

impl SizeSweep {
    pub const COLUMNS: [&'static str; 10] = [
        "N",
        "omega",
        "tau",
        "mean",
        "var",
        "relative_fluctuation",
        "se",
        "inv_Bmb",
        "inv_BmbUb",
        "J0",
    ];

    pub fn write_csv<W: Write>(&self, out: W) -> Result<W> {
        let mut w = CsvWriter::new(out, &Self::COLUMNS)?;
        for r in &self.rows {
            w.row(&[
                Some(r.n_spins as f64),
                Some(r.omega),
                Some(r.kur.tau),
                Some(r.kur.mean),
                Some(r.kur.var),
                Some(r.kur.relative_fluctuation),
                Some(r.kur.se),
                Some(r.kur.inv_bmb),
                Some(r.kur.inv_bmb_ub),
                r.j0,
            ])?;
        }
        w.finish()
    }

    pub fn write_slopes_csv<W: Write>(&self, out: W) -> Result<W> {
        let mut w = CsvWriter::new(out, &["omega", "quantity", "slope", "slope_se"])?;
        for s in &self.slopes {
            for (name, v) in [
                ("relative_fluctuation", s.fluctuation),
                ("inv_Bmb", s.inv_bmb),
                ("inv_BmbUb", s.inv_bmb_ub),
            ] {
                w.raw(&[
                    crate::io::fmt_f64(s.omega),
                    name.to_string(),
                    crate::io::fmt_f64(v.slope),
                    crate::io::fmt_f64(v.slope_se),
                ])?;
            }
        }
        w.finish()
    }

    pub fn kur_rows(&self) -> Vec<KurRow> {
        self.rows.iter().map(|r| r.kur).collect()
    }
}

/// One ensemble per (N, omega) with a single checkpoint at tau.
pub fn run_size_sweep(cfg: &SizeSweepConfig) -> Result<SizeSweep> {
    cfg.validate()?;
    let cells: Vec<(usize, f64)> = cfg
        .omegas
        .iter()
        .flat_map(|&w| cfg.n_list.iter().map(move |&n| (n, w)))
        .collect();
    // Two neighbours around tau give the finite-difference denominator too.
    let h = (0.01 * cfg.tau).min(0.1);
    let rows: Vec<SizeRow> = cells
        .par_iter()
        .enumerate()
        .map(|(i, &(n, omega))| -> Result<SizeRow> {
            let seed = cell_seed(cfg.master_seed, i as u64);
            let cell = run_cell(CellSpec {
                n_spins: n,
                omega,
                kappa: cfg.kappa,
                tau: cfg.tau,
                checkpoints: vec![cfg.tau - h, cfg.tau],
                spacing: h,
                n_traj: cfg.n_traj,
                master_seed: seed,
                initial: cfg.initial,
                dt: cfg.dt,
                density_dt: cfg.density_dt,
                mean_field_dt: cfg.mean_field_dt,
            })?;
            let j0 = if n <= cfg.exact_j0_max_n {
                let grid = cfg.exact.expect("validated");
                let report = compute_bounds(
                    &BoundsRequest {
                        n_spins: n,
                        omega,
                        kappa: cfg.kappa,
                        theta_bloch: cfg.initial.theta_bloch,
                        phi: cfg.initial.phi,
                        tau: cfg.tau,
                        spacing: grid.spacing(),
                        mean_field_dt: cfg.mean_field_dt,
                        exact: Some(grid),
                    },
                    Quantities {
                        j0: true,
                        ..Quantities::default()
                    },
                )?;
                report.j0.and_then(|v| v.last().copied())
            } else {
                None
            };
            Ok(SizeRow {
                n_spins: n,
                omega,
                master_seed: seed,
                dt: cell.dt,
                kur: *cell.rows.last().expect("one checkpoint at tau"),
                j0,
            })
        })
        .collect::<Result<_>>()?;

    let slopes = cfg
        .omegas
        .iter()
        .map(|&w| {
            let sel: Vec<&SizeRow> = rows.iter().filter(|r| r.omega == w).collect();
            let n: Vec<f64> = sel.iter().map(|r| r.n_spins as f64).collect();
            let fit = |f: &dyn Fn(&SizeRow) -> f64| -> Slope {
                let y: Vec<f64> = sel.iter().map(|r| f(r)).collect();
                if n.len() < 2 {
                    Slope {
                        slope: f64::NAN,
                        slope_se: f64::NAN,
                    }
                } else {
                    log_log_fit(&n, &y).into()
                }
            };
            SizeSlopes {
                omega: w,
                fluctuation: fit(&|r| r.kur.relative_fluctuation),
                inv_bmb: fit(&|r| r.kur.inv_bmb),
                inv_bmb_ub: fit(&|r| r.kur.inv_bmb_ub),
            }
        })
        .collect();
    Ok(SizeSweep {
        tau: cfg.tau,
        rows,
        slopes,
    })
}

/// Exact and mean-field activities for one omega of a verification run.
#[derive(Debug, Clone)]
pub struct VerificationCell {
    pub omega: f64,
    pub report: BoundsReport,
    /// (tau, |Bmb - J0| / J0) at the configured times.
    pub deviation: Vec<(f64, f64)>,
}

/// |Bmb - J0| / J0 at grid time `tau`.
pub fn relative_deviation(report: &BoundsReport, tau: f64) -> Result<f64> {
    let (Some(j0), Some(bmb)) = (&report.j0, &report.bmb) else {
        return bad("report lacks J0 or Bmb");
    };
    let k = report
        .tau
        .iter()
        .position(|t| (t - tau).abs() <= 1e-9 * tau.abs().max(1.0))
        .ok_or(KurError::OffGrid { time: tau })?;
    Ok((bmb[k] - j0[k]).abs() / j0[k])
}

pub fn run_verification(cfg: &VerificationConfig) -> Result<Vec<VerificationCell>> {
    cfg.validate()?;
    cfg.omegas
        .iter()
        .map(|&omega| {
            let report = compute_bounds(
                &BoundsRequest {
                    n_spins: cfg.n_spins,
                    omega,
                    kappa: cfg.kappa,
                    theta_bloch: cfg.initial.theta_bloch,
                    phi: cfg.initial.phi,
                    tau: cfg.tau,
                    spacing: cfg.exact.spacing(),
                    mean_field_dt: cfg.mean_field_dt,
                    exact: Some(cfg.exact),
                },
                Quantities::all(),
            )?;
            let deviation = cfg
                .deviation_at
                .iter()
                .map(|&t| relative_deviation(&report, t).map(|d| (t, d)))
                .collect::<Result<_>>()?;
            Ok(VerificationCell {
                omega,
                report,
                deviation,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// fluctuation + slack * SE < 1 / Bmb
    Kur,
    /// 1 / Bmb < 1 / BmbUb
    Bound,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub tau: f64,
    pub kind: ViolationKind,
    /// Relative margin; negative for a violation.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub rows_checked: usize,
    pub rows_skipped: usize,
    pub violations: Vec<Violation>,
    /// Smallest (fluctuation + slack SE) / (1 / Bmb) - 1 and where it occurs.
    pub worst_kur: Option<(f64, f64)>,
    /// Smallest Bub / Bmb - 1 and where it occurs.
    pub worst_bound: Option<(f64, f64)>,
}

impl ChainReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the chain at every row with kappa * tau >= `floor`.
pub fn check_inequality_chain(rows: &[KurRow], kappa: f64, floor: f64) -> ChainReport {
    let mut report = ChainReport {
        rows_checked: 0,
        rows_skipped: 0,
        violations: Vec::new(),
        worst_kur: None,
        worst_bound: None,
    };
    let lower = |slot: &mut Option<(f64, f64)>, tau: f64, m: f64| {
        if slot.map_or(true, |(_, w)| m < w) {
            *slot = Some((tau, m));
        }
    };
    for r in rows {
        if kappa * r.tau < floor {
            report.rows_skipped += 1;
            continue;
        }
        report.rows_checked += 1;
        let kur = (r.relative_fluctuation + SE_SLACK * r.se) / r.inv_bmb - 1.0;
        let bound = r.inv_bmb / r.inv_bmb_ub - 1.0;
        lower(&mut report.worst_kur, r.tau, kur);
        lower(&mut report.worst_bound, r.tau, bound);
        // NaN margins count as violations.
        if !(kur >= 0.0) {
            report.violations.push(Violation {
                tau: r.tau,
                kind: ViolationKind::Kur,
                margin: kur,
            });
        }
        if !(bound >= -1e-12) {
            report.violations.push(Violation {
                tau: r.tau,
                kind: ViolationKind::Bound,
                margin: bound,
            });
        }
    }
    report
}
