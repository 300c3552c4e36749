//! Collective spin algebra in the maximum-total-spin (Dicke) sector.
//!
//! Basis vectors are |j, m> with m = j, j-1, ..., -j, so index 0 is the north
//! pole and collective decay moves weight toward the last index.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{KurError, Result};
use crate::mean_field::Magnetization;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Tolerance on the squared norm of a [`StateVector`].
pub const STATE_NORM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DickeSpace {
    n_spins: usize,
}

impl DickeSpace {
    pub fn new(n_spins: usize) -> Result<Self> {
        if n_spins == 0 {
            return Err(KurError::InvalidParameter(
                "number of spins must be at least 1".into(),
            ));
        }
        Ok(Self { n_spins })
    }

    pub fn n_spins(&self) -> usize {
        self.n_spins
    }

    /// Total spin j = N/2.
    pub fn j(&self) -> f64 {
        self.n_spins as f64 / 2.0
    }

    pub fn dim(&self) -> usize {
        self.n_spins + 1
    }

    /// Magnetic quantum number of basis index `k`.
    pub fn m(&self, k: usize) -> f64 {
        self.j() - k as f64
    }

    /// Matrix elements <k+1| S- |k> for k = 0..dim-1. S+ is the transpose.
    pub fn lowering_coefficients(&self) -> Vec<f64> {
        let j = self.j();
        (0..self.n_spins)
            .map(|k| {
                let m = self.m(k);
                (j * (j + 1.0) - m * (m - 1.0)).max(0.0).sqrt()
            })
            .collect()
    }

    /// Diagonal of S+ S-, i.e. j(j+1) - m^2 + m.
    pub fn sp_sm_diagonal(&self) -> Vec<f64> {
        let j = self.j();
        (0..self.dim())
            .map(|k| {
                let m = self.m(k);
                j * (j + 1.0) - m * m + m
            })
            .collect()
    }

    pub(crate) fn check_dim(&self, actual: usize) -> Result<()> {
        if actual != self.dim() {
            return Err(KurError::DimensionMismatch {
                expected: self.dim(),
                actual,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorLabel {
    Sx,
    Sy,
    Sz,
    Sp,
    Sm,
    Custom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectiveOperator {
    space: DickeSpace,
    matrix: DMatrix<Complex64>,
    label: OperatorLabel,
}

impl CollectiveOperator {
    pub fn new(space: DickeSpace, matrix: DMatrix<Complex64>) -> Result<Self> {
        space.check_dim(matrix.nrows())?;
        space.check_dim(matrix.ncols())?;
        Ok(Self {
            space,
            matrix,
            label: OperatorLabel::Custom,
        })
    }

    pub fn space(&self) -> DickeSpace {
        self.space
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn label(&self) -> OperatorLabel {
        self.label
    }

    fn custom(&self, matrix: DMatrix<Complex64>) -> Self {
        Self {
            space: self.space,
            matrix,
            label: OperatorLabel::Custom,
        }
    }

    pub fn adjoint(&self) -> Self {
        self.custom(self.matrix.adjoint())
    }

    pub fn product(&self, other: &Self) -> Result<Self> {
        self.space.check_dim(other.space.dim())?;
        Ok(self.custom(&self.matrix * &other.matrix))
    }

    /// [A, B] = AB - BA.
    pub fn commutator(&self, other: &Self) -> Result<Self> {
        self.space.check_dim(other.space.dim())?;
        Ok(self.custom(&self.matrix * &other.matrix - &other.matrix * &self.matrix))
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        self.custom(&self.matrix * factor)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        max_abs(&(&self.matrix - self.matrix.adjoint())) <= tol
    }
}

/// The five collective operators of one Dicke space.
#[derive(Debug, Clone)]
pub struct SpinOperators {
    pub sx: CollectiveOperator,
    pub sy: CollectiveOperator,
    pub sz: CollectiveOperator,
    pub sp: CollectiveOperator,
    pub sm: CollectiveOperator,
}

impl SpinOperators {
    pub fn space(&self) -> DickeSpace {
        self.sz.space
    }

    /// S+ S-, the collective emission operator.
    pub fn sp_sm(&self) -> CollectiveOperator {
        self.sp
            .product(&self.sm)
            .expect("operators of one space share a dimension")
    }

    pub fn components(&self) -> [&CollectiveOperator; 3] {
        [&self.sx, &self.sy, &self.sz]
    }
}

pub fn build_operators(space: DickeSpace) -> SpinOperators {
    let dim = space.dim();
    let lower = space.lowering_coefficients();

    let mut sm = DMatrix::from_element(dim, dim, ZERO);
    for (k, &c) in lower.iter().enumerate() {
        sm[(k + 1, k)] = Complex64::new(c, 0.0);
    }
    let sp = sm.transpose();
    let sz = DMatrix::from_fn(dim, dim, |a, b| {
        if a == b {
            Complex64::new(space.m(a), 0.0)
        } else {
            ZERO
        }
    });
    let sx = (&sp + &sm) * Complex64::new(0.5, 0.0);
    // (S+ - S-) / 2i
    let sy = (&sp - &sm) * Complex64::new(0.0, -0.5);

    let make = |matrix, label| CollectiveOperator {
        space,
        matrix,
        label,
    };
    SpinOperators {
        sx: make(sx, OperatorLabel::Sx),
        sy: make(sy, OperatorLabel::Sy),
        sz: make(sz, OperatorLabel::Sz),
        sp: make(sp, OperatorLabel::Sp),
        sm: make(sm, OperatorLabel::Sm),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    space: DickeSpace,
    amplitudes: DVector<Complex64>,
}

impl StateVector {
    pub fn new(space: DickeSpace, amplitudes: DVector<Complex64>) -> Result<Self> {
        space.check_dim(amplitudes.len())?;
        let norm_sqr = amplitudes.norm_squared();
        if (norm_sqr - 1.0).abs() > STATE_NORM_TOL {
            return Err(KurError::InvalidParameter(format!(
                "state vector has squared norm {norm_sqr}, expected 1"
            )));
        }
        Ok(Self { space, amplitudes })
    }

    /// Normalizes `amplitudes`; fails on the zero vector.
    pub fn normalized(space: DickeSpace, mut amplitudes: DVector<Complex64>) -> Result<Self> {
        space.check_dim(amplitudes.len())?;
        let norm = amplitudes.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(KurError::InvalidParameter(
                "cannot normalize a zero or non-finite vector".into(),
            ));
        }
        amplitudes.unscale_mut(norm);
        Ok(Self { space, amplitudes })
    }

    /// Basis state |j, j - k>.
    pub fn basis(space: DickeSpace, k: usize) -> Result<Self> {
        if k >= space.dim() {
            return Err(KurError::InvalidParameter(format!(
                "basis index {k} out of range for dimension {}",
                space.dim()
            )));
        }
        let mut amplitudes = DVector::from_element(space.dim(), ZERO);
        amplitudes[k] = ONE;
        Ok(Self { space, amplitudes })
    }

    pub fn space(&self) -> DickeSpace {
        self.space
    }

    pub fn amplitudes(&self) -> &DVector<Complex64> {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> DVector<Complex64> {
        self.amplitudes
    }

    pub fn to_density(&self) -> DensityMatrix {
        DensityMatrix {
            space: self.space,
            matrix: &self.amplitudes * self.amplitudes.adjoint(),
        }
    }
}

/// Tolerances for [`DensityMatrix`] validation.
pub const DENSITY_HERMITIAN_TOL: f64 = 1e-10;
pub const DENSITY_TRACE_TOL: f64 = 1e-8;
pub const DENSITY_POSITIVITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    space: DickeSpace,
    matrix: DMatrix<Complex64>,
}

impl DensityMatrix {
    /// Validates hermiticity, unit trace and positivity.
    pub fn new(space: DickeSpace, matrix: DMatrix<Complex64>) -> Result<Self> {
        space.check_dim(matrix.nrows())?;
        space.check_dim(matrix.ncols())?;
        let rho = Self { space, matrix };
        let herm = rho.hermiticity_defect();
        if herm > DENSITY_HERMITIAN_TOL {
            return Err(KurError::InvalidParameter(format!(
                "density matrix is not Hermitian (defect {herm:e})"
            )));
        }
        let trace = rho.trace();
        if (trace - 1.0).abs() > DENSITY_TRACE_TOL {
            return Err(KurError::InvalidParameter(format!(
                "density matrix has trace {trace}"
            )));
        }
        let min_eig = rho.min_eigenvalue();
        if min_eig < -DENSITY_POSITIVITY_TOL {
            return Err(KurError::Positivity {
                time: 0.0,
                min_eigenvalue: min_eig,
            });
        }
        Ok(rho)
    }

    /// Wraps an evolved matrix without the eigenvalue check; callers validate
    /// at checkpoints.
    pub(crate) fn from_evolved(space: DickeSpace, matrix: DMatrix<Complex64>) -> Self {
        Self { space, matrix }
    }

    pub fn space(&self) -> DickeSpace {
        self.space
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.matrix
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn hermiticity_defect(&self) -> f64 {
        max_abs(&(&self.matrix - self.matrix.adjoint()))
    }

    pub fn min_eigenvalue(&self) -> f64 {
        // Symmetrize first; the eigen solver assumes an exactly Hermitian input.
        let herm = (&self.matrix + self.matrix.adjoint()) * Complex64::new(0.5, 0.0);
        herm.symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Anything an operator expectation value can be taken in.
pub trait QuantumState {
    fn space(&self) -> DickeSpace;

    /// <O> for a matrix of the right dimension.
    fn expect_matrix(&self, op: &DMatrix<Complex64>) -> Complex64;
}

impl QuantumState for StateVector {
    fn space(&self) -> DickeSpace {
        self.space
    }

    fn expect_matrix(&self, op: &DMatrix<Complex64>) -> Complex64 {
        self.amplitudes.dotc(&(op * &self.amplitudes))
    }
}

impl QuantumState for DensityMatrix {
    fn space(&self) -> DickeSpace {
        self.space
    }

    fn expect_matrix(&self, op: &DMatrix<Complex64>) -> Complex64 {
        trace_of_product(op, &self.matrix)
    }
}

/// Tr[A B] without forming the product.
pub fn trace_of_product(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> Complex64 {
    let n = a.nrows();
    let mut acc = ZERO;
    for col in 0..n {
        for row in 0..n {
            acc += a[(row, col)] * b[(col, row)];
        }
    }
    acc
}

pub fn expectation<S: QuantumState + ?Sized>(
    op: &CollectiveOperator,
    state: &S,
) -> Result<Complex64> {
    state.space().check_dim(op.space.dim())?;
    Ok(state.expect_matrix(&op.matrix))
}

/// <AB> - <A><B>, operator order preserved.
pub fn covariance<S: QuantumState + ?Sized>(
    a: &CollectiveOperator,
    b: &CollectiveOperator,
    state: &S,
) -> Result<Complex64> {
    let ab = a.product(b)?;
    Ok(expectation(&ab, state)? - expectation(a, state)? * expectation(b, state)?)
}

/// m_alpha = <S_alpha> / (N/2).
pub fn magnetization<S: QuantumState + ?Sized>(
    ops: &SpinOperators,
    state: &S,
) -> Result<Magnetization> {
    let half_n = state.space().j();
    let [x, y, z] = ops
        .components()
        .map(|op| expectation(op, state).map(|v| v.re / half_n));
    Ok(Magnetization::new_unchecked(x?, y?, z?))
}

/// |theta, phi> = exp[theta (e^{i phi} S- - e^{-i phi} S+) / 2] |j, j>, built from
/// closed-form binomial amplitudes
/// sqrt(C(N, k)) cos(theta/2)^(N-k) sin(theta/2)^k e^{i k phi}.
pub fn spin_coherent_state(space: DickeSpace, theta_bloch: f64, phi: f64) -> StateVector {
    let n = space.n_spins();
    let (s, c) = (theta_bloch / 2.0).sin_cos();
    let ln_c = c.abs().ln();
    let ln_s = s.abs().ln();

    // ln C(n, k), accumulated incrementally.
    let mut ln_binom = 0.0;
    let amplitudes = DVector::from_iterator(
        space.dim(),
        (0..=n).map(|k| {
            if k > 0 {
                ln_binom += ((n - k + 1) as f64).ln() - (k as f64).ln();
            }
            let up = n - k;
            let magnitude = if (up > 0 && c == 0.0) || (k > 0 && s == 0.0) {
                0.0
            } else {
                let mut ln_mag = 0.5 * ln_binom;
                if up > 0 {
                    ln_mag += up as f64 * ln_c;
                }
                if k > 0 {
                    ln_mag += k as f64 * ln_s;
                }
                ln_mag.exp()
            };
            // Signs of cos and sin for theta outside [0, pi].
            let sign = if (c < 0.0 && up % 2 == 1) ^ (s < 0.0 && k % 2 == 1) {
                -1.0
            } else {
                1.0
            };
            Complex64::from_polar(sign * magnitude, k as f64 * phi)
        }),
    );
    StateVector::normalized(space, amplitudes).expect("coherent-state amplitudes are nonzero")
}

pub(crate) fn max_abs(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}
