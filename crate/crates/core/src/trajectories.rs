//! Quantum-jump unraveling of the collective decay master equation.
//!
//! Each step of length dt draws one uniform number u. With
//! p1 = (2k dt / N) <S+ S->, u < p1 applies S- (a detected jump); otherwise
//! the state follows the no-jump evolution exp(-i H_eff dt), expanded to
//! fourth order. Both branches renormalize.

use std::io::Write;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dicke::StateVector;
use crate::error::{KurError, Result};
use crate::io::{fmt_f64, CsvWriter};
use crate::lindblad::{checkpoint_steps, LiouvillianContext};
use crate::ode::step_count;
use crate::stats::{jackknife_variance, mean_and_m2};

/// Upper limit on the per-step jump probability.
pub const MAX_JUMP_PROBABILITY: f64 = 0.05;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Seed of trajectory `index`: the `index`-th output of a SplitMix64 stream
/// started at `master_seed`. Independent of scheduling.
pub fn trajectory_seed(master_seed: u64, index: u64) -> u64 {
    let mut z = master_seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Largest dt keeping p1 below `target` for any state of the Dicke sector.
pub fn max_stable_dt(ctx: &LiouvillianContext, target: f64) -> f64 {
    let max_emission = ctx.sp_sm_diagonal().iter().copied().fold(0.0, f64::max);
    target / (ctx.gamma() * max_emission)
}

/// Scratch buffers for the pure-state stepper.
struct Stepper<'a> {
    ctx: &'a LiouvillianContext,
    psi: DVector<Complex64>,
    term: DVector<Complex64>,
    scratch: DVector<Complex64>,
}

impl<'a> Stepper<'a> {
    fn new(ctx: &'a LiouvillianContext, psi: &DVector<Complex64>) -> Self {
        let n = psi.len();
        Self {
            ctx,
            psi: psi.clone(),
            term: DVector::from_element(n, ZERO),
            scratch: DVector::from_element(n, ZERO),
        }
    }

    /// <S+ S-> for the current (normalized) state.
    fn emission(&self) -> f64 {
        self.ctx
            .sp_sm_diagonal()
            .iter()
            .zip(self.psi.iter())
            .map(|(d, z)| d * z.norm_sqr())
            .sum()
    }

    fn no_jump(&mut self, dt: f64) {
        self.term.copy_from(&self.psi);
        for order in 1..=4 {
            apply_heff(self.ctx, &self.term, &mut self.scratch, dt / order as f64);
            std::mem::swap(&mut self.term, &mut self.scratch);
            self.psi += &self.term;
        }
        let norm = self.psi.norm();
        self.psi.unscale_mut(norm);
    }

    fn jump(&mut self) {
        let l = self.ctx.lowering_coefficients();
        let n = self.psi.len();
        for a in (1..n).rev() {
            self.psi[a] = self.psi[a - 1] * l[a - 1];
        }
        self.psi[0] = ZERO;
        let norm = self.psi.norm();
        self.psi.unscale_mut(norm);
    }

    /// Advances one step; returns whether a jump occurred.
    fn step(&mut self, dt: f64, draw: f64, time: f64) -> Result<bool> {
        let p1 = self.ctx.gamma() * dt * self.emission();
        if p1 >= MAX_JUMP_PROBABILITY {
            return Err(KurError::StepTooCoarse { p1, time });
        }
        if draw < p1 {
            self.jump();
            Ok(true)
        } else {
            self.no_jump(dt);
            Ok(false)
        }
    }

    /// (<Sx>, <Sy>, <Sz>) from the tridiagonal structure.
    fn spin_expectations(&self) -> [f64; 3] {
        let l = self.ctx.lowering_coefficients();
        let space = self.ctx.space();
        // <S-> = sum_k l[k] conj(psi[k+1]) psi[k]
        let mut s_minus = ZERO;
        for (k, &c) in l.iter().enumerate() {
            s_minus += self.psi[k + 1].conj() * self.psi[k] * c;
        }
        let sz: f64 = self
            .psi
            .iter()
            .enumerate()
            .map(|(k, z)| space.m(k) * z.norm_sqr())
            .sum();
        // Sx = (S+ + S-)/2, Sy = (S+ - S-)/2i, with <S+> = conj(<S->).
        [s_minus.re, -s_minus.im, sz]
    }
}

/// out = -i H_eff x * factor, using the tridiagonal structure of H_eff.
fn apply_heff(
    ctx: &LiouvillianContext,
    x: &DVector<Complex64>,
    out: &mut DVector<Complex64>,
    factor: f64,
) {
    let n = x.len();
    let l = ctx.lowering_coefficients();
    let d = ctx.sp_sm_diagonal();
    let p = ctx.params();

    let half_w = 0.5 * p.omega;
    let decay = p.kappa / p.n_spins as f64;
    for a in 0..n {
        let mut sx = ZERO;
        if a > 0 {
            sx += x[a - 1] * l[a - 1];
        }
        if a + 1 < n {
            sx += x[a + 1] * l[a];
        }
        // -i (w Sx - i decay d) x = -i w Sx x - decay d x
        let v = Complex64::new(sx.im * half_w, -sx.re * half_w) - x[a] * (decay * d[a]);
        out[a] = v * factor;
    }
}

/// Single Monte Carlo step with an externally supplied uniform draw.
pub fn jump_step(
    state: &StateVector,
    ctx: &LiouvillianContext,
    dt: f64,
    random_draw: f64,
) -> Result<(StateVector, bool)> {
    ctx.space().check_dim(state.space().dim())?;
    let mut stepper = Stepper::new(ctx, state.amplitudes());
    let jumped = stepper.step(dt, random_draw, 0.0)?;
    Ok((StateVector::normalized(ctx.space(), stepper.psi)?, jumped))
}

/// Per-step jump probability for `state`.
pub fn jump_probability(state: &StateVector, ctx: &LiouvillianContext, dt: f64) -> f64 {
    Stepper::new(ctx, state.amplitudes()).emission() * ctx.gamma() * dt
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub seed: u64,
    /// End time of each step in which a jump was detected.
    pub jump_times: Vec<f64>,
    /// Jumps detected in [0, t_c] for every checkpoint t_c.
    pub counts: Vec<u32>,
    /// Conditional (<Sx>, <Sy>, <Sz>) at every checkpoint.
    pub spin: Vec<[f64; 3]>,
}

/// Runs one trajectory over [0, tau] on a grid of `ceil(tau/dt)` steps.
pub fn run_trajectory(
    psi0: &StateVector,
    ctx: &LiouvillianContext,
    tau: f64,
    dt: f64,
    checkpoints: &[f64],
    seed: u64,
) -> Result<TrajectoryRecord> {
    ctx.space().check_dim(psi0.space().dim())?;
    if !(dt > 0.0) || !(tau >= 0.0) {
        return Err(KurError::InvalidParameter(
            "need dt > 0 and tau >= 0".into(),
        ));
    }
    let steps = step_count(tau, dt);
    let h = if steps == 0 { dt } else { tau / steps as f64 };
    let marks = checkpoint_steps(checkpoints, h, steps)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stepper = Stepper::new(ctx, psi0.amplitudes());
    let mut record = TrajectoryRecord {
        seed,
        jump_times: Vec::new(),
        counts: Vec::with_capacity(marks.len()),
        spin: Vec::with_capacity(marks.len()),
    };
    let mut next = 0;
    for k in 0..=steps {
        while next < marks.len() && marks[next] == k {
            record.counts.push(record.jump_times.len() as u32);
            record.spin.push(stepper.spin_expectations());
            next += 1;
        }
        if k == steps {
            break;
        }
        let draw: f64 = rng.random();
        if stepper.step(h, draw, k as f64 * h)? {
            record.jump_times.push((k + 1) as f64 * h);
        }
    }
    Ok(record)
}

/// Ensemble statistics of N_J at every checkpoint.
///
/// Standard errors: sqrt(Var / n) for the mean; delete-one jackknife for the
/// variance.
#[derive(Debug, Clone)]
pub struct EnsembleStats {
    pub n_traj: usize,
    pub master_seed: u64,
    pub dt: f64,
    pub checkpoints: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub se_mean: Vec<f64>,
    pub se_var: Vec<f64>,
    /// Trajectory-averaged (<Sx>, <Sy>, <Sz>) and its standard error.
    pub spin_mean: Vec<[f64; 3]>,
    pub spin_se: Vec<[f64; 3]>,
    /// Per-trajectory (seed, counts) when requested.
    pub records: Option<Vec<(u64, Vec<u32>)>>,
}

#[allow(clippy::too_many_arguments)]
pub fn run_ensemble(
    psi0: &StateVector,
    ctx: &LiouvillianContext,
    tau: f64,
    dt: f64,
    checkpoints: &[f64],
    n_traj: usize,
    master_seed: u64,
    keep_records: bool,
) -> Result<EnsembleStats> {
    if n_traj < 2 {
        return Err(KurError::InvalidParameter(
            "an ensemble needs at least 2 trajectories".into(),
        ));
    }
    let records: Vec<TrajectoryRecord> = (0..n_traj as u64)
        .into_par_iter()
        .map(|i| {
            run_trajectory(
                psi0,
                ctx,
                tau,
                dt,
                checkpoints,
                trajectory_seed(master_seed, i),
            )
        })
        .collect::<Result<_>>()?;

    let steps = step_count(tau, dt);
    let h = if steps == 0 { dt } else { tau / steps as f64 };
    let n_check = checkpoints.len();
    let mut stats = EnsembleStats {
        n_traj,
        master_seed,
        dt: h,
        checkpoints: checkpoints.to_vec(),
        mean: Vec::with_capacity(n_check),
        var: Vec::with_capacity(n_check),
        se_mean: Vec::with_capacity(n_check),
        se_var: Vec::with_capacity(n_check),
        spin_mean: Vec::with_capacity(n_check),
        spin_se: Vec::with_capacity(n_check),
        records: None,
    };
    let n = n_traj as f64;
    let mut column = vec![0.0; n_traj];
    for c in 0..n_check {
        for (slot, r) in column.iter_mut().zip(&records) {
            *slot = r.counts[c] as f64;
        }
        let (mean, m2) = mean_and_m2(&column);
        let var = m2 / (n - 1.0);
        stats.mean.push(mean);
        stats.var.push(var);
        stats.se_mean.push((var / n).sqrt());
        stats.se_var.push(jackknife_variance(&column));

        let mut spin_mean = [0.0; 3];
        let mut spin_se = [0.0; 3];
        for alpha in 0..3 {
            for (slot, r) in column.iter_mut().zip(&records) {
                *slot = r.spin[c][alpha];
            }
            let (m, m2) = mean_and_m2(&column);
            spin_mean[alpha] = m;
            spin_se[alpha] = (m2 / (n - 1.0) / n).sqrt();
        }
        stats.spin_mean.push(spin_mean);
        stats.spin_se.push(spin_se);
    }
    if keep_records {
        stats.records = Some(records.into_iter().map(|r| (r.seed, r.counts)).collect());
    }
    Ok(stats)
}

impl EnsembleStats {
    /// Summary CSV: t, mean, var, se_mean, se_var.
    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<W> {
        let mut w = CsvWriter::new(out, &["t", "mean", "var", "se_mean", "se_var"])?;
        for k in 0..self.checkpoints.len() {
            w.values(&[
                self.checkpoints[k],
                self.mean[k],
                self.var[k],
                self.se_mean[k],
                self.se_var[k],
            ])?;
        }
        w.finish()
    }

    /// One row per trajectory: seed, then the count at each checkpoint
    /// (columns n_0, n_1, ... in checkpoint order).
    pub fn write_raw_csv<W: Write>(&self, out: W) -> Result<W> {
        let records = self.records.as_ref().ok_or_else(|| {
            KurError::InvalidParameter("ensemble was run without keeping records".into())
        })?;
        let names: Vec<String> = (0..self.checkpoints.len())
            .map(|k| format!("n_{k}"))
            .collect();
        let mut header = vec!["seed"];
        header.extend(names.iter().map(String::as_str));
        let mut w = CsvWriter::new(out, &header)?;
        for (seed, counts) in records {
            let mut fields = vec![seed.to_string()];
            fields.extend(counts.iter().map(u32::to_string));
            w.raw(&fields)?;
        }
        w.finish()
    }

    /// Checkpoint index of time `t`, if present.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.checkpoints
            .iter()
            .position(|&c| (c - t).abs() <= 1e-9 * t.abs().max(1.0))
    }

    pub fn describe(&self, k: usize) -> String {
        format!(
            "t = {}: mean {} +/- {}, var {} +/- {}",
            fmt_f64(self.checkpoints[k]),
            self.mean[k],
            self.se_mean[k],
            self.var[k],
            self.se_var[k]
        )
    }
}
