//! Mean-field magnetization dynamics and the linearized 3x3 propagator.

use std::io::Write;

use nalgebra::{Matrix3, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{KurError, Result};
use crate::io::CsvWriter;
use crate::ode::{rk4_step, step_count};

/// Accepted deviation of |m|^2 from 1 for user-supplied magnetizations.
pub const MAGNETIZATION_INPUT_TOL: f64 = 1e-6;

/// |det M| below this marks an ill-conditioned fundamental matrix.
pub const DET_WARNING: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Magnetization {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Magnetization {
    /// Validates |m| = 1 within [`MAGNETIZATION_INPUT_TOL`] and renormalizes.
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let m = Self { x, y, z };
        let norm_sqr = m.norm_sqr();
        if !norm_sqr.is_finite() || (norm_sqr - 1.0).abs() > MAGNETIZATION_INPUT_TOL {
            return Err(KurError::NotNormalized {
                norm: norm_sqr.sqrt(),
                tol: MAGNETIZATION_INPUT_TOL,
            });
        }
        let norm = norm_sqr.sqrt();
        Ok(Self {
            x: x / norm,
            y: y / norm,
            z: z / norm,
        })
    }

    pub(crate) fn new_unchecked(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    /// Unit vector with polar angle `theta_bloch` and azimuth `phi`.
    pub fn from_angles(theta_bloch: f64, phi: f64) -> Self {
        let (st, ct) = theta_bloch.sin_cos();
        let (sp, cp) = phi.sin_cos();
        Self::new_unchecked(st * cp, st * sp, ct)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.x * self.x + self.y * self.y + self.z * self.z
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn component(&self, alpha: usize) -> f64 {
        [self.x, self.y, self.z][alpha]
    }

    pub fn distance(&self, other: &Self) -> f64 {
        (self.as_vector() - other.as_vector()).norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Rabi frequency, in the same units as `kappa`.
    pub omega: f64,
    pub kappa: f64,
    pub n_spins: usize,
    pub tau: f64,
    pub dt: f64,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(KurError::InvalidParameter(msg.to_string()));
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return bad("kappa must be positive");
        }
        if !self.omega.is_finite() {
            return bad("omega must be finite");
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad("dt must be positive");
        }
        if !(self.tau >= 0.0) || !self.tau.is_finite() {
            return bad("tau must be non-negative");
        }
        if self.n_spins == 0 {
            return bad("N must be at least 1");
        }
        Ok(())
    }
}

/// Right-hand side of the mean-field equations.
pub fn mf_rhs(m: &Magnetization, p: &ModelParams) -> [f64; 3] {
    let (w, k) = (p.omega, p.kappa);
    [
        k * m.x * m.z,
        -w * m.z + k * m.y * m.z,
        w * m.y - k * (1.0 - m.z * m.z),
    ]
}

fn rhs_vec(m: &Vector3<f64>, omega: f64, kappa: f64) -> Vector3<f64> {
    Vector3::new(
        kappa * m[0] * m[2],
        -omega * m[2] + kappa * m[1] * m[2],
        omega * m[1] - kappa * (1.0 - m[2] * m[2]),
    )
}

/// Linearized generator of the adjoint spin dynamics at magnetization m.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorK(pub Matrix3<f64>);

impl GeneratorK {
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }
}

pub fn generator_k(m: &Magnetization, p: &ModelParams) -> GeneratorK {
    GeneratorK(k_matrix(m.x, m.y, m.z, p.omega, p.kappa))
}

fn k_matrix(mx: f64, my: f64, mz: f64, omega: f64, kappa: f64) -> Matrix3<f64> {
    Matrix3::new(
        kappa * mz,
        0.0,
        kappa * mx,
        0.0,
        kappa * mz,
        kappa * my - omega,
        -2.0 * kappa * mx,
        -2.0 * kappa * my + omega,
        0.0,
    )
}

#[derive(Debug, Clone)]
pub struct MeanFieldTrajectory {
    times: Vec<f64>,
    m: Vec<Magnetization>,
    fundamental: Option<Vec<Matrix3<f64>>>,
    step: f64,
}

/// Integrates the mean-field equations with RK4 on a uniform grid of
/// `ceil(tau / dt)` steps spanning [0, tau].
pub fn integrate_mean_field(m0: Magnetization, p: &ModelParams) -> Result<MeanFieldTrajectory> {
    p.validate()?;
    let (steps, h) = grid_for(p)?;
    let mut times = Vec::with_capacity(steps + 1);
    let mut m = Vec::with_capacity(steps + 1);
    let mut y = m0.as_vector();
    times.push(0.0);
    m.push(m0);
    for k in 0..steps {
        let t = k as f64 * h;
        y = rk4_step(t, &y, h, |_, y| rhs_vec(y, p.omega, p.kappa));
        times.push((k + 1) as f64 * h);
        m.push(Magnetization::new_unchecked(y[0], y[1], y[2]));
    }
    Ok(MeanFieldTrajectory {
        times,
        m,
        fundamental: None,
        step: h,
    })
}

fn grid_for(p: &ModelParams) -> Result<(usize, f64)> {
    if p.tau > 0.0 && p.dt > p.tau {
        return Err(KurError::InvalidParameter(format!(
            "dt = {} exceeds tau = {}",
            p.dt, p.tau
        )));
    }
    let steps = step_count(p.tau, p.dt);
    let h = if steps == 0 {
        p.dt
    } else {
        p.tau / steps as f64
    };
    Ok((steps, h))
}

/// Fills in M(t) = U(t, 0), solving dM/dt = K(t) M, M(0) = I.
///
/// The magnetization is re-integrated jointly with M so that K is evaluated
/// at the RK4 stage points; the magnetization part reproduces `traj`
/// bit-for-bit.
pub fn fundamental_propagator(traj: &MeanFieldTrajectory, p: &ModelParams) -> MeanFieldTrajectory {
    let (omega, kappa) = (p.omega, p.kappa);
    let h = traj.step;
    let m0 = traj.m[0];
    let mut y = SVector::<f64, 12>::zeros();
    y[0] = m0.x;
    y[1] = m0.y;
    y[2] = m0.z;
    write_matrix(&mut y, &Matrix3::identity());

    let rhs = |_t: f64, y: &SVector<f64, 12>| {
        let m = Vector3::new(y[0], y[1], y[2]);
        let dm = rhs_vec(&m, omega, kappa);
        let dmat = k_matrix(m[0], m[1], m[2], omega, kappa) * read_matrix(y);
        let mut out = SVector::<f64, 12>::zeros();
        out[0] = dm[0];
        out[1] = dm[1];
        out[2] = dm[2];
        write_matrix(&mut out, &dmat);
        out
    };

    let mut fundamental = Vec::with_capacity(traj.len());
    let mut m = Vec::with_capacity(traj.len());
    fundamental.push(Matrix3::identity());
    m.push(m0);
    for k in 1..traj.len() {
        y = rk4_step((k - 1) as f64 * h, &y, h, rhs);
        m.push(Magnetization::new_unchecked(y[0], y[1], y[2]));
        fundamental.push(read_matrix(&y));
    }
    MeanFieldTrajectory {
        times: traj.times.clone(),
        m,
        fundamental: Some(fundamental),
        step: h,
    }
}

fn write_matrix(y: &mut SVector<f64, 12>, mat: &Matrix3<f64>) {
    for r in 0..3 {
        for c in 0..3 {
            y[3 + 3 * r + c] = mat[(r, c)];
        }
    }
}

fn read_matrix(y: &SVector<f64, 12>) -> Matrix3<f64> {
    Matrix3::from_fn(|r, c| y[3 + 3 * r + c])
}

/// Closed-form adjugate inverse; `None` for an exactly singular matrix.
pub fn inverse_3x3(a: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| {
        a[(r0, c0)] * a[(r1, c1)] - a[(r0, c1)] * a[(r1, c0)]
    };
    let c00 = cof(1, 2, 1, 2);
    let c01 = -cof(1, 2, 0, 2);
    let c02 = cof(1, 2, 0, 1);
    let det = a[(0, 0)] * c00 + a[(0, 1)] * c01 + a[(0, 2)] * c02;
    if det == 0.0 {
        return None;
    }
    let adj = Matrix3::new(
        c00,
        -cof(0, 2, 1, 2),
        cof(0, 1, 1, 2),
        c01,
        cof(0, 2, 0, 2),
        -cof(0, 1, 0, 2),
        c02,
        -cof(0, 2, 0, 1),
        cof(0, 1, 0, 1),
    );
    Some(adj / det)
}

impl MeanFieldTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn magnetizations(&self) -> &[Magnetization] {
        &self.m
    }

    pub fn last(&self) -> Magnetization {
        *self.m.last().expect("trajectory has at least one node")
    }

    pub fn has_fundamental(&self) -> bool {
        self.fundamental.is_some()
    }

    pub fn fundamental(&self) -> Option<&[Matrix3<f64>]> {
        self.fundamental.as_deref()
    }

    /// Largest |(|m|^2 - 1)| over the grid.
    pub fn max_norm_defect(&self) -> f64 {
        self.m
            .iter()
            .map(|m| (m.norm_sqr() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Index of grid node `time`; off-grid times are rejected.
    pub fn index_of(&self, time: f64) -> Result<usize> {
        let k = (time / self.step).round();
        let tol = 1e-9 * self.step.max(1.0);
        if k < 0.0 || k as usize >= self.len() || (self.times[k as usize] - time).abs() > tol {
            return Err(KurError::OffGrid { time });
        }
        Ok(k as usize)
    }

    /// U(t_i, t_j) = M(t_i) M(t_j)^{-1} for node indices i >= j.
    pub fn propagator_nodes(&self, i: usize, j: usize) -> Result<Matrix3<f64>> {
        let fund = self.fundamental.as_ref().ok_or_else(|| {
            KurError::InvalidParameter("fundamental propagator has not been computed".into())
        })?;
        if j > i || i >= fund.len() {
            return Err(KurError::InvalidParameter(format!(
                "propagator needs 0 <= s2 <= s1 <= tau (got nodes {i}, {j})"
            )));
        }
        let inv = inverse_3x3(&fund[j]).ok_or_else(|| {
            KurError::InvalidParameter(format!("fundamental matrix singular at node {j}"))
        })?;
        Ok(fund[i] * inv)
    }

    /// U(s1, s2) for grid times 0 <= s2 <= s1 <= tau.
    pub fn propagator(&self, s1: f64, s2: f64) -> Result<Matrix3<f64>> {
        let i = self.index_of(s1)?;
        let j = self.index_of(s2)?;
        self.propagator_nodes(i, j)
    }

    /// Nodes whose fundamental matrix has |det| below [`DET_WARNING`].
    pub fn ill_conditioned_nodes(&self) -> Vec<usize> {
        self.fundamental
            .iter()
            .flatten()
            .enumerate()
            .filter(|(_, m)| m.determinant().abs() < DET_WARNING)
            .map(|(k, _)| k)
            .collect()
    }

    /// First node after `min_separation` (time) that returns within `delta`
    /// of an earlier state at least `min_separation` before it. Returns the
    /// pair (earlier time, later time).
    pub fn find_recurrence(
        &self,
        delta: f64,
        min_separation: f64,
        after: f64,
    ) -> Option<(f64, f64)> {
        let gap = (min_separation / self.step).ceil() as usize;
        let start = self
            .times
            .iter()
            .position(|&t| t >= after)
            .unwrap_or(self.len());
        for later in start..self.len() {
            for earlier in start..later.saturating_sub(gap) {
                if self.m[later].distance(&self.m[earlier]) < delta {
                    return Some((self.times[earlier], self.times[later]));
                }
            }
        }
        None
    }

    /// CSV with columns t, mx, my, mz and optionally the nine entries of M(t).
    pub fn write_csv<W: Write>(&self, out: W, with_fundamental: bool) -> Result<W> {
        let mut header = vec!["t", "mx", "my", "mz"];
        const M_COLS: [&str; 9] = [
            "M00", "M01", "M02", "M10", "M11", "M12", "M20", "M21", "M22",
        ];
        let fund = if with_fundamental {
            self.fundamental.as_ref()
        } else {
            None
        };
        if fund.is_some() {
            header.extend_from_slice(&M_COLS);
        }
        let mut w = CsvWriter::new(out, &header)?;
        for (k, (t, m)) in self.times.iter().zip(&self.m).enumerate() {
            let mut row = vec![*t, m.x, m.y, m.z];
            if let Some(f) = fund {
                let mat = &f[k];
                for r in 0..3 {
                    for c in 0..3 {
                        row.push(mat[(r, c)]);
                    }
                }
            }
            w.values(&row)?;
        }
        w.finish()
    }
}

/// The stationary-phase fixed point (0, w/k, -sqrt(1 - (w/k)^2)), if w <= k.
pub fn stationary_fixed_point(p: &ModelParams) -> Option<Magnetization> {
    let r = p.omega / p.kappa;
    (r.abs() <= 1.0).then(|| Magnetization::new_unchecked(0.0, r, -(1.0 - r * r).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(omega: f64, tau: f64, dt: f64) -> ModelParams {
        ModelParams {
            omega,
            kappa: 1.0,
            n_spins: 10,
            tau,
            dt,
        }
    }

    #[test]
    fn rhs_examples() {
        let p = params(0.7, 1.0, 0.01);
        let d = mf_rhs(&Magnetization::new_unchecked(0.0, 1.0, 0.0), &p);
        assert_eq!(d, [0.0, 0.0, 0.7 - 1.0]);
        let d = mf_rhs(&Magnetization::new_unchecked(0.0, 0.0, 1.0), &p);
        assert_eq!(d, [0.0, -0.7, 0.0]);
        let fp = stationary_fixed_point(&p).unwrap();
        for v in mf_rhs(&fp, &p) {
            assert!(v.abs() < 1e-15);
        }
    }

    #[test]
    fn generator_examples() {
        let p = ModelParams {
            omega: 0.3,
            kappa: 1.7,
            ..params(0.0, 1.0, 0.1)
        };
        let k = generator_k(&Magnetization::new_unchecked(0.0, 1.0, 0.0), &p);
        let expected = Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, 1.7 - 0.3, 0.0, 0.3 - 3.4, 0.0);
        assert_relative_eq!(k.0, expected, epsilon = 1e-15);
        let k = generator_k(&Magnetization::new_unchecked(0.0, 0.0, 1.0), &p);
        let expected = Matrix3::new(1.7, 0.0, 0.0, 0.0, 1.7, -0.3, 0.0, 0.3, 0.0);
        assert_relative_eq!(k.0, expected, epsilon = 1e-15);
        let m = Magnetization::from_angles(1.1, 2.3);
        assert_relative_eq!(
            generator_k(&m, &p).0.trace(),
            2.0 * 1.7 * m.z,
            epsilon = 1e-12
        );
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(Magnetization::new(0.0, 0.0, 2.0).is_err());
        assert!(Magnetization::new(0.0, 0.6, 0.8).is_ok());
        let m0 = Magnetization::new(0.0, 0.0, 1.0).unwrap();
        assert!(integrate_mean_field(m0, &params(1.0, 0.1, 0.5)).is_err());
        let bad_kappa = ModelParams {
            kappa: 0.0,
            ..params(1.0, 1.0, 0.1)
        };
        assert!(integrate_mean_field(m0, &bad_kappa).is_err());
    }

    #[test]
    fn zero_duration_is_single_node() {
        let m0 = Magnetization::new(0.0, 0.0, 1.0).unwrap();
        let traj = integrate_mean_field(m0, &params(0.5, 0.0, 1e-3)).unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.last(), m0);
    }

    #[test]
    fn joint_integration_reproduces_magnetization() {
        let m0 = Magnetization::from_angles(0.4, 1.0);
        let p = params(1.3, 2.0, 1e-2);
        let traj = integrate_mean_field(m0, &p).unwrap();
        let full = fundamental_propagator(&traj, &p);
        assert_eq!(traj.magnetizations(), full.magnetizations());
        assert_eq!(full.fundamental().unwrap()[0], Matrix3::identity());
    }

    #[test]
    fn adjugate_inverse() {
        let a = Matrix3::new(2.0, -1.0, 0.5, 0.3, 4.0, 1.0, -2.0, 0.1, 3.0);
        let inv = inverse_3x3(&a).unwrap();
        assert_relative_eq!(a * inv, Matrix3::identity(), epsilon = 1e-14);
        assert!(inverse_3x3(&Matrix3::zeros()).is_none());
    }

    #[test]
    fn off_grid_times_rejected() {
        let m0 = Magnetization::from_angles(0.0, 0.0);
        let p = params(1.0, 1.0, 0.1);
        let traj = fundamental_propagator(&integrate_mean_field(m0, &p).unwrap(), &p);
        assert!(traj.propagator(0.5, 0.2).is_ok());
        assert!(matches!(
            traj.propagator(0.55, 0.2),
            Err(KurError::OffGrid { .. })
        ));
        assert!(traj.propagator(0.2, 0.5).is_err());
        assert!(traj.propagator(1.1, 0.0).is_err());
    }

    #[test]
    fn csv_layout() {
        let m0 = Magnetization::from_angles(0.0, 0.0);
        let p = params(1.0, 0.2, 0.1);
        let traj = fundamental_propagator(&integrate_mean_field(m0, &p).unwrap(), &p);
        let text = String::from_utf8(traj.write_csv(Vec::new(), true).unwrap()).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("t,mx,my,mz,M00"));
        assert_eq!(lines[1].split(',').count(), 13);
    }
}
