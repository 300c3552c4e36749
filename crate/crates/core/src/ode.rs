//! Classical fixed-step fourth-order Runge-Kutta.

use nalgebra::{DMatrix, SVector};
use num_complex::Complex64;

/// State types the integrator can combine linearly.
pub trait OdeState: Clone {
    /// self += a * x
    fn axpy(&mut self, a: f64, x: &Self);
}

impl<const D: usize> OdeState for SVector<f64, D> {
    fn axpy(&mut self, a: f64, x: &Self) {
        *self += x * a;
    }
}

impl OdeState for DMatrix<Complex64> {
    fn axpy(&mut self, a: f64, x: &Self) {
        let a = Complex64::new(a, 0.0);
        self.zip_apply(x, |s, v| *s += a * v);
    }
}

/// One RK4 step of dy/dt = f(t, y).
pub fn rk4_step<S, F>(t: f64, y: &S, h: f64, mut f: F) -> S
where
    S: OdeState,
    F: FnMut(f64, &S) -> S,
{
    let k1 = f(t, y);
    let mut y2 = y.clone();
    y2.axpy(0.5 * h, &k1);
    let k2 = f(t + 0.5 * h, &y2);
    let mut y3 = y.clone();
    y3.axpy(0.5 * h, &k2);
    let k3 = f(t + 0.5 * h, &y3);
    let mut y4 = y.clone();
    y4.axpy(h, &k3);
    let k4 = f(t + h, &y4);

    let mut out = y.clone();
    out.axpy(h / 6.0, &k1);
    out.axpy(h / 3.0, &k2);
    out.axpy(h / 3.0, &k3);
    out.axpy(h / 6.0, &k4);
    out
}

/// Number of uniform steps covering `span` with step at most `dt`.
pub fn step_count(span: f64, dt: f64) -> usize {
    if span <= 0.0 {
        return 0;
    }
    // Absorb round-off so that e.g. 10.0 / 0.001 is exactly 10_000 steps.
    (span / dt - 1e-9).ceil().max(1.0) as usize
}
