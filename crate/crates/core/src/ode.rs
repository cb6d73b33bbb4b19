//! Fixed-step classical Runge-Kutta drivers for matrix-valued ODEs.
//!
//! All schedules in this crate are produced by the 4th-order scheme on the
//! problem grid. `times` may be increasing or decreasing; a decreasing
//! sequence integrates backward (negative step).

use nalgebra::DMatrix;

use crate::linalg::{all_finite, symmetrize};

/// Insert `factor - 1` equispaced points into every interval of `times`.
/// Integrating on the refined sequence and downsampling by `factor` cuts the
/// truncation error by `factor^4` where a schedule feeds an ill-conditioned
/// inverse.
pub(crate) fn refine_times(times: &[f64], factor: usize) -> Vec<f64> {
    if factor <= 1 || times.len() < 2 {
        return times.to_vec();
    }
    let mut out = Vec::with_capacity((times.len() - 1) * factor + 1);
    for k in 0..times.len() - 1 {
        let (a, b) = (times[k], times[k + 1]);
        for j in 0..factor {
            out.push(a + (b - a) * j as f64 / factor as f64);
        }
    }
    out.push(*times.last().expect("nonempty times"));
    out
}

pub(crate) struct Rk4Options {
    /// Project onto the symmetric part after every step.
    pub symmetrize: bool,
    /// Declare escape when the iterate's Frobenius norm exceeds this.
    pub escape_norm: Option<f64>,
}

pub(crate) enum Rk4Outcome {
    Complete(Vec<DMatrix<f64>>),
    /// Blow-up: `schedule` holds nodes `0..=last_valid`.
    Escaped {
        schedule: Vec<DMatrix<f64>>,
        last_valid: usize,
    },
}

pub(crate) fn rk4_matrix<F>(
    times: &[f64],
    x0: DMatrix<f64>,
    mut rhs: F,
    opts: Rk4Options,
) -> Rk4Outcome
where
    F: FnMut(f64, &DMatrix<f64>) -> DMatrix<f64>,
{
    let mut sched = Vec::with_capacity(times.len());
    sched.push(x0);
    for k in 0..times.len().saturating_sub(1) {
        let t = times[k];
        let h = times[k + 1] - t;
        let x = sched[k].clone();
        let k1 = rhs(t, &x);
        let k2 = rhs(t + 0.5 * h, &(&x + (h * 0.5) * &k1));
        let k3 = rhs(t + 0.5 * h, &(&x + (h * 0.5) * &k2));
        let k4 = rhs(t + h, &(&x + h * &k3));
        let mut next = &x + (h / 6.0) * (&k1 + 2.0 * &k2 + 2.0 * &k3 + &k4);
        if opts.symmetrize {
            symmetrize(&mut next);
        }
        let escaped = !all_finite(&next)
            || opts
                .escape_norm
                .map(|cap| next.norm() > cap)
                .unwrap_or(false);
        if escaped {
            return Rk4Outcome::Escaped {
                schedule: sched,
                last_valid: k,
            };
        }
        sched.push(next);
    }
    Rk4Outcome::Complete(sched)
}

/// RK4 for a coupled pair `(x, y)` of matrix states.
///
/// Used where the second equation's coefficients depend on the first state at
/// stage times (e.g. a transition matrix driven by a Riccati schedule), which
/// keeps the full 4th-order accuracy without interpolating the driver.
pub(crate) fn rk4_matrix_pair<F>(
    times: &[f64],
    x0: DMatrix<f64>,
    y0: DMatrix<f64>,
    mut rhs: F,
    symmetrize_x: bool,
    symmetrize_y: bool,
) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)
where
    F: FnMut(f64, &DMatrix<f64>, &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>),
{
    let mut xs = Vec::with_capacity(times.len());
    let mut ys = Vec::with_capacity(times.len());
    xs.push(x0);
    ys.push(y0);
    for k in 0..times.len().saturating_sub(1) {
        let t = times[k];
        let h = times[k + 1] - t;
        let x = xs[k].clone();
        let y = ys[k].clone();
        let (kx1, ky1) = rhs(t, &x, &y);
        let (kx2, ky2) = rhs(
            t + 0.5 * h,
            &(&x + (h * 0.5) * &kx1),
            &(&y + (h * 0.5) * &ky1),
        );
        let (kx3, ky3) = rhs(
            t + 0.5 * h,
            &(&x + (h * 0.5) * &kx2),
            &(&y + (h * 0.5) * &ky2),
        );
        let (kx4, ky4) = rhs(t + h, &(&x + h * &kx3), &(&y + h * &ky3));
        let mut xn = &x + (h / 6.0) * (&kx1 + 2.0 * &kx2 + 2.0 * &kx3 + &kx4);
        let mut yn = &y + (h / 6.0) * (&ky1 + 2.0 * &ky2 + 2.0 * &ky3 + &ky4);
        if symmetrize_x {
            symmetrize(&mut xn);
        }
        if symmetrize_y {
            symmetrize(&mut yn);
        }
        xs.push(xn);
        ys.push(yn);
    }
    (xs, ys)
}
