//! Linear time-varying system model: grid, providers, state-transition
//! matrices and reachability/controllability gramians.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::ode::{rk4_matrix, Rk4Options, Rk4Outcome};

/// Uniform discretization of `[0, T]` carrying `steps + 1` nodes.
#[derive(Debug, Clone)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !horizon.is_finite() || horizon <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if steps < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least 2 intervals, got {steps}"
            )));
        }
        let nodes = (0..=steps)
            .map(|k| k as f64 * horizon / steps as f64)
            .collect();
        Ok(Self {
            horizon,
            steps,
            nodes,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
}

/// Build the uniform grid over `[0, T]`.
pub fn build_time_grid(horizon: f64, steps: usize) -> Result<TimeGrid> {
    TimeGrid::new(horizon, steps)
}

/// One row of a piecewise-constant system table; applies from `start` (left
/// closed) until the next row's start.
#[derive(Debug, Clone)]
pub struct PiecewiseRow {
    pub start: f64,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

#[derive(Debug, Clone)]
enum SystemKind {
    Constant { a: DMatrix<f64>, b: DMatrix<f64> },
    Inertial,
    Rlc { r: f64, l: f64, c: f64 },
    Piecewise(Vec<PiecewiseRow>),
}

/// Linear time-varying system `dx = A(t) x dt + B(t)(u dt + dw)`.
#[derive(Debug, Clone)]
pub struct LtvSystem {
    n: usize,
    m: usize,
    kind: SystemKind,
}

impl LtvSystem {
    /// Constant-coefficient system with the given `A` (n x n) and `B` (n x m).
    pub fn constant(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::InvalidArgument(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(Error::InvalidArgument(format!(
                "B must be {}xm with m >= 1, got {}x{}",
                a.nrows(),
                b.nrows(),
                b.ncols()
            )));
        }
        Ok(Self {
            n: a.nrows(),
            m: b.ncols(),
            kind: SystemKind::Constant { a, b },
        })
    }

    /// Particle under white-noise acceleration: state `(position, velocity)`.
    pub fn inertial() -> Self {
        Self {
            n: 2,
            m: 1,
            kind: SystemKind::Inertial,
        }
    }

    /// Series RLC circuit driven through the resistor branch; state
    /// `(i_L, v_C)`.
    pub fn rlc(r: f64, l: f64, c: f64) -> Result<Self> {
        if r <= 0.0 || l <= 0.0 || c <= 0.0 {
            return Err(Error::InvalidArgument(
                "circuit parameters must be positive".into(),
            ));
        }
        Ok(Self {
            n: 2,
            m: 1,
            kind: SystemKind::Rlc { r, l, c },
        })
    }

    /// Piecewise-constant system defined by a table of rows; lookup is by
    /// left-closed interval.
    pub fn piecewise(rows: Vec<PiecewiseRow>) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::InvalidArgument("table must have at least one row".into()))?;
        if first.start != 0.0 {
            return Err(Error::InvalidArgument(format!(
                "first table row must start at t = 0, got {}",
                first.start
            )));
        }
        let n = first.a.nrows();
        let m = first.b.ncols();
        let mut prev = f64::NEG_INFINITY;
        for row in &rows {
            if row.start <= prev {
                return Err(Error::InvalidArgument(
                    "table rows must have strictly increasing start times".into(),
                ));
            }
            prev = row.start;
            if row.a.nrows() != n || !row.a.is_square() || row.b.nrows() != n || row.b.ncols() != m
            {
                return Err(Error::InvalidArgument(
                    "all table rows must share the same (n, m) dimensions".into(),
                ));
            }
        }
        Ok(Self {
            n,
            m,
            kind: SystemKind::Piecewise(rows),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    /// Evaluate `(A(t), B(t))`. Total in `t`; range checking against a horizon
    /// is the caller's concern (see [`eval_system`]).
    pub fn eval(&self, t: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        match &self.kind {
            SystemKind::Constant { a, b } => (a.clone(), b.clone()),
            SystemKind::Inertial => (
                DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
                DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            ),
            SystemKind::Rlc { r, l, c } => (
                DMatrix::from_row_slice(2, 2, &[0.0, 1.0 / l, -1.0 / c, -1.0 / (r * c)]),
                DMatrix::from_row_slice(2, 1, &[0.0, 1.0 / (r * c)]),
            ),
            SystemKind::Piecewise(rows) => {
                let idx = rows.iter().rposition(|row| row.start <= t).unwrap_or(0);
                (rows[idx].a.clone(), rows[idx].b.clone())
            }
        }
    }
}

/// Evaluate the system at `t`, rejecting queries outside `[0, T]`.
pub fn eval_system(
    sys: &LtvSystem,
    grid: &TimeGrid,
    t: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let slack = 1e-9 * grid.horizon().max(1.0);
    if t < -slack || t > grid.horizon() + slack {
        return Err(Error::OutOfRange {
            t,
            horizon: grid.horizon(),
        });
    }
    Ok(sys.eval(t))
}

/// State-transition matrices on the grid: `phi[k] = Phi(t_k, 0)` and
/// `phi_inv[k] = Phi(0, t_k)`.
#[derive(Debug, Clone)]
pub struct TransitionData {
    pub phi: Vec<DMatrix<f64>>,
    pub phi_inv: Vec<DMatrix<f64>>,
}

/// Integrate `dPhi/dt = A(t) Phi`, `Phi(0) = I`, and obtain `Phi(0, t_k)` by
/// LU solves against `Phi(t_k, 0)` so the pair multiplies to the identity at
/// solver precision.
pub fn compute_transition(sys: &LtvSystem, grid: &TimeGrid) -> Result<TransitionData> {
    let n = sys.state_dim();
    let outcome = rk4_matrix(
        grid.nodes(),
        DMatrix::identity(n, n),
        |t, phi| {
            let (a, _) = sys.eval(t);
            a * phi
        },
        Rk4Options {
            symmetrize: false,
            escape_norm: None,
        },
    );
    let phi = match outcome {
        Rk4Outcome::Complete(s) => s,
        Rk4Outcome::Escaped { last_valid, .. } => {
            return Err(Error::NumericalFailure(format!(
                "transition integration diverged after node {last_valid}"
            )))
        }
    };
    let phi_inv = phi
        .iter()
        .map(linalg::lu_inverse)
        .collect::<Result<Vec<_>>>()?;
    Ok(TransitionData { phi, phi_inv })
}

/// Gramians on the grid: `m_gram[k] = M(t_k, 0)` (reachability from 0) and
/// `n_gram[k] = N(T, t_k)` (controllability to `T`).
#[derive(Debug, Clone)]
pub struct GramianData {
    pub m_gram: Vec<DMatrix<f64>>,
    pub n_gram: Vec<DMatrix<f64>>,
}

/// `M(t, 0)` solves the differential Lyapunov equation
/// `dM/dt = A M + M A' + B B'` from `M(0) = 0`. `N(T, t_k)` is recovered from
/// the stored transition data through
/// `N(T, t_k) = Phi(t_k,0) [W(T) - W(t_k)] Phi(t_k,0)'` with
/// `W(t) = Phi(0,t) M(t,0) Phi(0,t)'`; the reduction is cross-checked against
/// direct quadrature in the test suite.
pub fn compute_gramians(
    sys: &LtvSystem,
    grid: &TimeGrid,
    transition: &TransitionData,
) -> Result<GramianData> {
    let n = sys.state_dim();
    if transition.phi.len() != grid.nodes().len() {
        return Err(Error::InvalidArgument(
            "transition data does not match the grid".into(),
        ));
    }
    let outcome = rk4_matrix(
        grid.nodes(),
        DMatrix::zeros(n, n),
        |t, m| {
            let (a, b) = sys.eval(t);
            &a * m + m * a.transpose() + &b * b.transpose()
        },
        Rk4Options {
            symmetrize: true,
            escape_norm: None,
        },
    );
    let m_gram = match outcome {
        Rk4Outcome::Complete(s) => s,
        Rk4Outcome::Escaped { last_valid, .. } => {
            return Err(Error::NumericalFailure(format!(
                "gramian integration diverged after node {last_valid}"
            )))
        }
    };

    let w: Vec<DMatrix<f64>> = m_gram
        .iter()
        .zip(&transition.phi_inv)
        .map(|(m, phi_inv)| linalg::sym_part(&(phi_inv * m * phi_inv.transpose())))
        .collect();
    let w_total = w.last().expect("grid has nodes").clone();
    let n_gram = transition
        .phi
        .iter()
        .zip(&w)
        .map(|(phi, wk)| linalg::sym_part(&(phi * (&w_total - wk) * phi.transpose())))
        .collect();
    Ok(GramianData { m_gram, n_gram })
}

/// Result of the gramian nonsingularity test.
#[derive(Debug, Clone)]
pub struct ControllabilityReport {
    pub controllable: bool,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub rel_tol: f64,
}

/// Default relative eigenvalue threshold for [`check_controllability`].
pub const CONTROLLABILITY_REL_TOL: f64 = 1e-10;

/// The pair is controllable when `lambda_min(M(T,0)) > rel_tol * max(1, lambda_max)`.
pub fn check_controllability(m_tt: &DMatrix<f64>, rel_tol: f64) -> Result<ControllabilityReport> {
    linalg::check_symmetric(m_tt, 1e-9)?;
    let (lambda_min, lambda_max) = linalg::lambda_extremes(m_tt);
    Ok(ControllabilityReport {
        controllable: lambda_min > rel_tol * lambda_max.max(1.0),
        lambda_min,
        lambda_max,
        rel_tol,
    })
}

/// Transition matrices, gramians and the controllability verdict on a grid.
#[derive(Debug, Clone)]
pub struct SystemSchedules {
    pub phi: Vec<DMatrix<f64>>,
    pub phi_inv: Vec<DMatrix<f64>>,
    pub m_gram: Vec<DMatrix<f64>>,
    pub n_gram: Vec<DMatrix<f64>>,
    pub controllability: ControllabilityReport,
}

impl SystemSchedules {
    pub fn compute(sys: &LtvSystem, grid: &TimeGrid) -> Result<Self> {
        Self::compute_with_tol(sys, grid, CONTROLLABILITY_REL_TOL)
    }

    pub fn compute_with_tol(sys: &LtvSystem, grid: &TimeGrid, rel_tol: f64) -> Result<Self> {
        let transition = compute_transition(sys, grid)?;
        let gramians = compute_gramians(sys, grid, &transition)?;
        let controllability =
            check_controllability(gramians.m_gram.last().expect("grid has nodes"), rel_tol)?;
        Ok(Self {
            phi: transition.phi,
            phi_inv: transition.phi_inv,
            m_gram: gramians.m_gram,
            n_gram: gramians.n_gram,
            controllability,
        })
    }

    /// `Phi(T, 0)`.
    pub fn phi_t0(&self) -> &DMatrix<f64> {
        self.phi.last().expect("nonempty schedule")
    }

    /// `Phi(0, T)`.
    pub fn phi_0t(&self) -> &DMatrix<f64> {
        self.phi_inv.last().expect("nonempty schedule")
    }

    /// `M(T, 0)`.
    pub fn m_total(&self) -> &DMatrix<f64> {
        self.m_gram.last().expect("nonempty schedule")
    }

    /// `N(T, 0)`.
    pub fn n_total(&self) -> &DMatrix<f64> {
        self.n_gram.first().expect("nonempty schedule")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mat2(rows: [[f64; 2]; 2]) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[rows[0][0], rows[0][1], rows[1][0], rows[1][1]])
    }

    #[test]
    fn grid_quarters() {
        let g = build_time_grid(1.0, 4).unwrap();
        assert_eq!(g.nodes(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn grid_thousand() {
        let g = build_time_grid(1.0, 1000).unwrap();
        assert_eq!(g.nodes().len(), 1001);
        assert_relative_eq!(g.dt(), 0.001, max_relative = 1e-15);
        assert_relative_eq!(g.nodes()[1000], 1.0, max_relative = 1e-15);
    }

    #[test]
    fn grid_rejects_degenerate() {
        assert!(build_time_grid(0.0, 10).is_err());
        assert!(build_time_grid(1.0, 1).is_err());
        assert!(build_time_grid(-2.0, 10).is_err());
    }

    #[test]
    fn eval_inertial() {
        let sys = LtvSystem::inertial();
        let grid = build_time_grid(1.0, 10).unwrap();
        let (a, b) = eval_system(&sys, &grid, 0.37).unwrap();
        assert_eq!(a, mat2([[0.0, 1.0], [0.0, 0.0]]));
        assert_eq!(b, DMatrix::from_row_slice(2, 1, &[0.0, 1.0]));
    }

    #[test]
    fn eval_rlc_unit_parameters() {
        let sys = LtvSystem::rlc(1.0, 1.0, 1.0).unwrap();
        let (a, b) = sys.eval(0.5);
        assert_eq!(a, mat2([[0.0, 1.0], [-1.0, -1.0]]));
        assert_eq!(b, DMatrix::from_row_slice(2, 1, &[0.0, 1.0]));
    }

    #[test]
    fn eval_constant_kind() {
        let sys = LtvSystem::constant(DMatrix::zeros(3, 3), DMatrix::identity(3, 3)).unwrap();
        let (a, b) = sys.eval(0.3);
        assert_eq!(a, DMatrix::zeros(3, 3));
        assert_eq!(b, DMatrix::identity(3, 3));
    }

    #[test]
    fn eval_rejects_out_of_range() {
        let sys = LtvSystem::inertial();
        let grid = build_time_grid(1.0, 10).unwrap();
        assert!(matches!(
            eval_system(&sys, &grid, 1.5),
            Err(Error::OutOfRange { .. })
        ));
        assert!(matches!(
            eval_system(&sys, &grid, -0.1),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn piecewise_left_closed_lookup() {
        let rows = vec![
            PiecewiseRow {
                start: 0.0,
                a: DMatrix::zeros(1, 1),
                b: DMatrix::from_element(1, 1, 1.0),
            },
            PiecewiseRow {
                start: 0.5,
                a: DMatrix::from_element(1, 1, 2.0),
                b: DMatrix::from_element(1, 1, 1.0),
            },
        ];
        let sys = LtvSystem::piecewise(rows).unwrap();
        assert_eq!(sys.eval(0.49).0[(0, 0)], 0.0);
        assert_eq!(sys.eval(0.5).0[(0, 0)], 2.0);
        assert_eq!(sys.eval(0.9).0[(0, 0)], 2.0);
    }

    #[test]
    fn piecewise_rejects_bad_tables() {
        assert!(LtvSystem::piecewise(vec![]).is_err());
        let rows = vec![PiecewiseRow {
            start: 0.1,
            a: DMatrix::zeros(1, 1),
            b: DMatrix::zeros(1, 1),
        }];
        assert!(LtvSystem::piecewise(rows).is_err());
    }

    #[test]
    fn transition_zero_drift_is_identity() {
        let sys = LtvSystem::constant(DMatrix::zeros(2, 2), DMatrix::identity(2, 2)).unwrap();
        let grid = build_time_grid(1.0, 50).unwrap();
        let tr = compute_transition(&sys, &grid).unwrap();
        for phi in &tr.phi {
            assert!((phi - DMatrix::<f64>::identity(2, 2)).norm() < 1e-13);
        }
    }

    #[test]
    fn transition_inertial_closed_form() {
        let sys = LtvSystem::inertial();
        let grid = build_time_grid(1.0, 100).unwrap();
        let tr = compute_transition(&sys, &grid).unwrap();
        for (k, t) in grid.nodes().iter().enumerate() {
            let expected = mat2([[1.0, *t], [0.0, 1.0]]);
            assert!((&tr.phi[k] - &expected).norm() < 1e-12, "node {k}");
        }
    }

    #[test]
    fn transition_inverse_pairs_to_identity() {
        let sys = LtvSystem::rlc(1.0, 1.0, 1.0).unwrap();
        let grid = build_time_grid(1.0, 100).unwrap();
        let tr = compute_transition(&sys, &grid).unwrap();
        for k in 0..grid.nodes().len() {
            let prod = &tr.phi[k] * &tr.phi_inv[k];
            assert!((prod - DMatrix::<f64>::identity(2, 2)).norm() < 1e-12);
        }
    }

    #[test]
    fn gramians_zero_drift_identity_noise() {
        let sys = LtvSystem::constant(DMatrix::zeros(2, 2), DMatrix::identity(2, 2)).unwrap();
        let grid = build_time_grid(1.0, 100).unwrap();
        let tr = compute_transition(&sys, &grid).unwrap();
        let gr = compute_gramians(&sys, &grid, &tr).unwrap();
        let eye = DMatrix::<f64>::identity(2, 2);
        assert!((gr.m_gram.last().unwrap() - &eye).norm() < 1e-12);
        assert!((gr.n_gram.first().unwrap() - &eye).norm() < 1e-12);
    }

    #[test]
    fn gramians_inertial_closed_forms() {
        let sys = LtvSystem::inertial();
        let grid = build_time_grid(1.0, 200).unwrap();
        let tr = compute_transition(&sys, &grid).unwrap();
        let gr = compute_gramians(&sys, &grid, &tr).unwrap();
        for (k, t) in grid.nodes().iter().enumerate() {
            let expected = mat2([[t.powi(3) / 3.0, t.powi(2) / 2.0], [t.powi(2) / 2.0, *t]]);
            assert!((&gr.m_gram[k] - &expected).norm() < 1e-10, "node {k}");
        }
        let n_expected = mat2([[1.0 / 3.0, -0.5], [-0.5, 1.0]]);
        assert!((gr.n_gram.first().unwrap() - &n_expected).norm() < 1e-10);
    }

    #[test]
    fn controllability_verdicts() {
        let report = check_controllability(&DMatrix::identity(2, 2), 1e-10).unwrap();
        assert!(report.controllable);

        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let report = check_controllability(&singular, 1e-10).unwrap();
        assert!(!report.controllable);

        let inertial_m = mat2([[1.0 / 3.0, 0.5], [0.5, 1.0]]);
        let report = check_controllability(&inertial_m, 1e-10).unwrap();
        assert!(report.controllable);
        assert!(report.lambda_min > 0.0);

        let tilted = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.0, 1.0]);
        assert!(check_controllability(&tilted, 1e-10).is_err());
    }
}
