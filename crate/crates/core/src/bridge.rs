//! Boundary-coupled Lyapunov/Riccati solver for the minimum-energy
//! distribution-steering problem.
//!
//! The optimal feedback is `u(t) = -B(t)' Pi(t) x(t)` where `Pi = Q^{-1}` and
//! the pair `(Q, P)` solves two linear differential Lyapunov equations whose
//! boundary values are nonlinearly coupled through the marginal covariances.
//! The coupled boundary values admit a closed form; of its two solution
//! branches only the minus branch stays nonsingular on the horizon.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::ode::{rk4_matrix, rk4_matrix_pair, Rk4Options, Rk4Outcome};
use crate::system::{LtvSystem, SystemSchedules, TimeGrid};

/// Solution branch of the coupled boundary problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// Nonsingular on the whole horizon; generates the optimal control.
    Minus,
    /// Becomes singular inside the horizon; kept for diagnostics.
    Plus,
}

impl Branch {
    pub fn label(&self) -> &'static str {
        match self {
            Branch::Minus => "minus",
            Branch::Plus => "plus",
        }
    }
}

/// Sign of the quadratic noise term in a differential Lyapunov equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffusionSign {
    /// `dX/dt = A X + X A' + B B'` (covariance-type equation).
    Positive,
    /// `dX/dt = A X + X A' - B B'` (gramian-to-go equation).
    Negative,
}

/// Zero-mean Gaussian marginal, stored as its SPD covariance.
#[derive(Debug, Clone)]
pub struct GaussianMarginal {
    sigma: DMatrix<f64>,
}

impl GaussianMarginal {
    pub fn new(sigma: DMatrix<f64>) -> Result<Self> {
        linalg::check_symmetric(&sigma, 1e-12)?;
        let sigma = linalg::sym_part(&sigma);
        let (lambda_min, _) = linalg::lambda_extremes(&sigma);
        if lambda_min <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "covariance not positive definite: lambda_min = {lambda_min:.6e}"
            )));
        }
        Ok(Self { sigma })
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }
}

/// Marginal covariances conjugated into the coordinates where the prior has
/// no drift and unit controllability gramian.
#[derive(Debug, Clone)]
pub struct NormalizedMarginals {
    pub s0: DMatrix<f64>,
    pub s_t: DMatrix<f64>,
}

/// `S0 = N^{-1/2} Sigma0 N^{-1/2}` and
/// `ST = N^{-1/2} Phi(0,T) SigmaT Phi(0,T)' N^{-1/2}` with `N = N(T,0)`.
pub fn normalized_marginals(
    sigma0: &GaussianMarginal,
    sigma_t: &GaussianMarginal,
    n_tt: &DMatrix<f64>,
    phi_0t: &DMatrix<f64>,
) -> Result<NormalizedMarginals> {
    let n_inv_half = linalg::inv_sqrtm_spd(n_tt).map_err(|_| {
        Error::NotControllable(format!(
            "controllability gramian N(T,0) not positive definite (lambda_min = {:.6e})",
            linalg::lambda_min(n_tt)
        ))
    })?;
    let s0 = linalg::sym_part(&(&n_inv_half * sigma0.sigma() * &n_inv_half));
    let pulled = phi_0t * sigma_t.sigma() * phi_0t.transpose();
    let s_t = linalg::sym_part(&(&n_inv_half * pulled * &n_inv_half));
    Ok(NormalizedMarginals { s0, s_t })
}

/// Symmetric positive-semidefinite matrix square root.
pub use crate::linalg::sqrtm_spd;

/// Relative eigenvalue threshold below which the closed-form inner matrix is
/// treated as singular (zero-gain direction).
pub const DEGENERATE_REL_TOL: f64 = 1e-10;

/// Boundary values of the coupled problem for one branch.
#[derive(Debug, Clone)]
pub struct BoundaryPair {
    pub branch: Branch,
    /// `Pi(0) = Q(0)^{-1}`, computed in inverted closed form; finite even
    /// when `Q(0)` is not.
    pub pi0: DMatrix<f64>,
    /// `Q(0)`; `None` when the inner matrix is singular (degenerate
    /// zero-gain directions).
    pub q0: Option<DMatrix<f64>>,
    pub p0: DMatrix<f64>,
    pub degenerate: bool,
    /// Relative Frobenius gap between the two equivalent closed forms.
    pub alternate_form_rel_gap: f64,
}

/// Closed-form boundary pair
/// `Q(0) = N^{1/2} S0^{1/2} (S0 + I/2 +- (S0^{1/2} ST S0^{1/2} + I/4)^{1/2})^{-1} S0^{1/2} N^{1/2}`,
/// `P(0) = (Sigma0^{-1} - Q(0)^{-1})^{-1}`.
///
/// Eigenvalues of the inner matrix with magnitude below
/// `DEGENERATE_REL_TOL * max(1, |lambda|_max)` are clamped to exactly zero;
/// those directions need no control and `Pi(0)` vanishes on them. The result
/// is cross-checked against the algebraically equivalent form of
/// [`boundary_alternate_pi0`].
pub fn closed_form_boundary(
    norm: &NormalizedMarginals,
    schedules: &SystemSchedules,
    sigma0: &GaussianMarginal,
    sigma_t: &GaussianMarginal,
    branch: Branch,
) -> Result<BoundaryPair> {
    if !schedules.controllability.controllable {
        return Err(Error::NotControllable(format!(
            "reachability gramian margin {:.6e} below threshold",
            schedules.controllability.lambda_min
        )));
    }
    let n_tt = schedules.n_total();
    let n_half = linalg::sqrtm_spd(n_tt)?;
    let n_inv_half = linalg::inv_sqrtm_spd(n_tt)?;
    let s0_half = linalg::sqrtm_spd(&norm.s0)?;
    let s0_inv_half = linalg::inv_sqrtm_spd(&norm.s0)?;

    let dim = norm.s0.nrows();
    let core = linalg::sym_part(&(&s0_half * &norm.s_t * &s0_half));
    let root = linalg::sqrtm_spd(&(core + 0.25 * DMatrix::<f64>::identity(dim, dim)))?;
    let half_eye = 0.5 * DMatrix::<f64>::identity(dim, dim);
    let inner = match branch {
        Branch::Minus => &norm.s0 + half_eye - root,
        Branch::Plus => &norm.s0 + half_eye + root,
    };

    let (vals, vecs) = linalg::sym_eigen(&inner);
    let scale = vals.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let threshold = DEGENERATE_REL_TOL * scale.max(1.0);
    let clamped = vals.map(|v| if v.abs() < threshold { 0.0 } else { v });
    let degenerate = clamped.iter().any(|v| *v == 0.0);

    let inner_clamped = &vecs * DMatrix::from_diagonal(&clamped) * vecs.transpose();
    let outer_inv = &n_inv_half * &s0_inv_half;
    let pi0 = linalg::sym_part(&(&outer_inv * inner_clamped * outer_inv.transpose()));

    let q0 = if degenerate {
        None
    } else {
        let inner_inv =
            &vecs * DMatrix::from_diagonal(&clamped.map(|v| 1.0 / v)) * vecs.transpose();
        let outer = &n_half * &s0_half;
        Some(linalg::sym_part(&(&outer * inner_inv * outer.transpose())))
    };

    let sigma0_inv = linalg::sym_inverse(sigma0.sigma())?;
    let p0 = linalg::sym_inverse(&(&sigma0_inv - &pi0))?;

    let alt_pi0 = boundary_alternate_pi0(
        sigma0,
        sigma_t,
        schedules.phi_t0(),
        schedules.m_total(),
        branch,
    )?;
    let alternate_form_rel_gap = (&pi0 - alt_pi0).norm() / pi0.norm().max(1.0);

    Ok(BoundaryPair {
        branch,
        pi0,
        q0,
        p0,
        degenerate,
        alternate_form_rel_gap,
    })
}

/// Equivalent closed form for `Pi(0) = Q(0)^{-1}` expressed through
/// `Phi(T,0)` and `M(T,0)` instead of the normalized marginals:
/// `Pi(0) = Sigma0^{-1/2} (I/2 + C +- (I/4 + D)^{1/2}) Sigma0^{-1/2}` with
/// `C = Sigma0^{1/2} Phi' M^{-1} Phi Sigma0^{1/2}` and
/// `D = Sigma0^{1/2} Phi' M^{-1} SigmaT M^{-1} Phi Sigma0^{1/2}`.
pub fn boundary_alternate_pi0(
    sigma0: &GaussianMarginal,
    sigma_t: &GaussianMarginal,
    phi_t0: &DMatrix<f64>,
    m_tt: &DMatrix<f64>,
    branch: Branch,
) -> Result<DMatrix<f64>> {
    let s0_half = linalg::sqrtm_spd(sigma0.sigma())?;
    let s0_inv_half = linalg::inv_sqrtm_spd(sigma0.sigma())?;
    let m_inv = linalg::sym_inverse(m_tt)?;
    let c = linalg::sym_part(&(&s0_half * phi_t0.transpose() * &m_inv * phi_t0 * &s0_half));
    let d = linalg::sym_part(
        &(&s0_half * phi_t0.transpose() * &m_inv * sigma_t.sigma() * &m_inv * phi_t0 * &s0_half),
    );
    let eye = DMatrix::<f64>::identity(c.nrows(), c.ncols());
    let root = linalg::sqrtm_spd(&(0.25 * &eye + d))?;
    let inner = match branch {
        Branch::Minus => 0.5 * &eye + c - root,
        Branch::Plus => 0.5 * &eye + c + root,
    };
    Ok(linalg::sym_part(&(&s0_inv_half * inner * &s0_inv_half)))
}

/// Outcome of the boundary fixed-point iteration.
#[derive(Debug, Clone)]
pub struct IterationOutcome {
    pub q0: DMatrix<f64>,
    pub p0: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Default iteration budget for [`boundary_via_iteration`].
pub const ITERATION_MAX: usize = 500;
/// Default Frobenius-change tolerance for [`boundary_via_iteration`].
pub const ITERATION_TOL: f64 = 1e-12;

/// Fixed-point map on `P(0)`:
/// `P(T) = Phi P(0) Phi' + M`, `Q(T) = (SigmaT^{-1} - P(T)^{-1})^{-1}`,
/// `Q(0) = Phi^{-1} (Q(T) + M) Phi^{-T}`, `P(0) = (Sigma0^{-1} - Q(0)^{-1})^{-1}`.
///
/// Converges to the minus-branch boundary pair from generic starts; a
/// singular intermediate inverse aborts with the iterate index.
pub fn boundary_via_iteration(
    sigma0: &GaussianMarginal,
    sigma_t: &GaussianMarginal,
    phi_t0: &DMatrix<f64>,
    m_tt: &DMatrix<f64>,
    init_p0: &DMatrix<f64>,
    max_iter: usize,
    tol: f64,
) -> Result<IterationOutcome> {
    linalg::check_symmetric(init_p0, 1e-10)?;
    if linalg::lambda_min(init_p0) <= 0.0 {
        return Err(Error::InvalidArgument(
            "iteration start P(0) must be positive definite".into(),
        ));
    }
    let phi_0t = linalg::lu_inverse(phi_t0)?;
    let sigma0_inv = linalg::sym_inverse(sigma0.sigma())?;
    let sigma_t_inv = linalg::sym_inverse(sigma_t.sigma())?;

    let mut p0 = linalg::sym_part(init_p0);
    let mut q0 = DMatrix::zeros(p0.nrows(), p0.ncols());
    for iteration in 1..=max_iter {
        let breakdown = |reason: &str| Error::IterationBreakdown {
            iteration,
            reason: reason.into(),
        };
        let p_t = linalg::sym_part(&(phi_t0 * &p0 * phi_t0.transpose() + m_tt));
        let p_t_inv = linalg::sym_inverse(&p_t).map_err(|_| breakdown("P(T) not invertible"))?;
        let q_t = linalg::sym_inverse(&(&sigma_t_inv - p_t_inv))
            .map_err(|_| breakdown("SigmaT^{-1} - P(T)^{-1} not invertible"))?;
        q0 = linalg::sym_part(&(&phi_0t * (q_t + m_tt) * phi_0t.transpose()));
        let q0_inv = linalg::sym_inverse(&q0).map_err(|_| breakdown("Q(0) not invertible"))?;
        let p0_next = linalg::sym_inverse(&(&sigma0_inv - q0_inv))
            .map_err(|_| breakdown("Sigma0^{-1} - Q(0)^{-1} not invertible"))?;
        let delta = (&p0_next - &p0).norm();
        p0 = p0_next;
        if delta < tol {
            return Ok(IterationOutcome {
                q0,
                p0,
                iterations: iteration,
                converged: true,
            });
        }
    }
    Ok(IterationOutcome {
        q0,
        p0,
        iterations: max_iter,
        converged: false,
    })
}

/// Frobenius-norm ceiling beyond which a Riccati schedule is declared escaped.
pub const ESCAPE_NORM: f64 = 1e12;

fn riccati_rhs(sys: &LtvSystem, t: f64, pi: &DMatrix<f64>) -> DMatrix<f64> {
    let (a, b) = sys.eval(t);
    let bbt = &b * b.transpose();
    -a.transpose() * pi - pi * a + pi * bbt * pi
}

/// Integrate `dPi/dt = -A' Pi - Pi A + Pi B B' Pi` on the grid.
///
/// The minus-branch seed stays bounded; a plus-branch seed blows up inside
/// the horizon, reported as [`Error::EscapeDetected`] with the last valid node.
pub fn integrate_pi(
    sys: &LtvSystem,
    grid: &TimeGrid,
    pi0: &DMatrix<f64>,
) -> Result<Vec<DMatrix<f64>>> {
    linalg::check_symmetric(pi0, 1e-10)?;
    let outcome = rk4_matrix(
        grid.nodes(),
        linalg::sym_part(pi0),
        |t, pi| riccati_rhs(sys, t, pi),
        Rk4Options {
            symmetrize: true,
            escape_norm: Some(ESCAPE_NORM),
        },
    );
    match outcome {
        Rk4Outcome::Complete(s) => Ok(s),
        Rk4Outcome::Escaped { last_valid, .. } => Err(Error::EscapeDetected {
            node: last_valid,
            time: grid.nodes()[last_valid],
        }),
    }
}

/// Integrate `dX/dt = A X + X A' +- B B'` on the grid from `x0`.
pub fn integrate_lyapunov(
    sys: &LtvSystem,
    grid: &TimeGrid,
    x0: &DMatrix<f64>,
    sign: DiffusionSign,
) -> Vec<DMatrix<f64>> {
    let s = match sign {
        DiffusionSign::Positive => 1.0,
        DiffusionSign::Negative => -1.0,
    };
    match rk4_matrix(
        grid.nodes(),
        linalg::sym_part(x0),
        |t, x| {
            let (a, b) = sys.eval(t);
            &a * x + x * a.transpose() + s * (&b * b.transpose())
        },
        Rk4Options {
            symmetrize: true,
            escape_norm: None,
        },
    ) {
        Rk4Outcome::Complete(sched) => sched,
        Rk4Outcome::Escaped { schedule, .. } => schedule,
    }
}

/// Propagate the controlled covariance
/// `dSigma/dt = A_Q Sigma + Sigma A_Q' + B B'` with
/// `A_Q(t) = A(t) - B(t) B(t)' Pi(t)`.
///
/// The Riccati state is co-integrated so stage evaluations of `A_Q` keep the
/// scheme's full order; positive definiteness is checked at every node.
pub fn compute_sigma_schedule(
    sys: &LtvSystem,
    grid: &TimeGrid,
    sigma0: &GaussianMarginal,
    pi_sched: &[DMatrix<f64>],
) -> Result<Vec<DMatrix<f64>>> {
    if pi_sched.len() != grid.nodes().len() {
        return Err(Error::InvalidArgument(
            "Riccati schedule does not match the grid".into(),
        ));
    }
    let (_, sigma_sched) = rk4_matrix_pair(
        grid.nodes(),
        pi_sched[0].clone(),
        sigma0.sigma().clone(),
        |t, pi, sigma| {
            let (a, b) = sys.eval(t);
            let bbt = &b * b.transpose();
            let a_q = &a - &bbt * pi;
            let dpi = -a.transpose() * pi - pi * a + pi * &bbt * pi;
            let dsigma = &a_q * sigma + sigma * a_q.transpose() + bbt;
            (dpi, dsigma)
        },
        true,
        true,
    );
    for (k, sigma) in sigma_sched.iter().enumerate() {
        if !linalg::all_finite(sigma) {
            return Err(Error::NumericalFailure(format!(
                "covariance schedule non-finite at node {k}"
            )));
        }
        let (lo, hi) = linalg::lambda_extremes(sigma);
        if lo <= -1e-10 * hi.abs().max(1.0) {
            return Err(Error::NumericalFailure(format!(
                "covariance lost positive definiteness at node {k} (lambda_min = {lo:.6e})"
            )));
        }
    }
    Ok(sigma_sched)
}

/// Feedback gain schedule `K(t_k) = B(t_k)' Pi(t_k)`; the applied control is
/// `u(t) = -K(t) x(t)`.
pub fn gain_schedule(
    sys: &LtvSystem,
    grid: &TimeGrid,
    pi_sched: &[DMatrix<f64>],
) -> Vec<DMatrix<f64>> {
    grid.nodes()
        .iter()
        .zip(pi_sched)
        .map(|(t, pi)| {
            let (_, b) = sys.eval(*t);
            b.transpose() * pi
        })
        .collect()
}

/// Which schedule a singularity was found in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleTag {
    Q,
    P,
}

impl ScheduleTag {
    pub fn label(&self) -> &'static str {
        match self {
            ScheduleTag::Q => "Q",
            ScheduleTag::P => "P",
        }
    }
}

/// A bracketed zero crossing of the smallest eigenvalue of a schedule.
#[derive(Debug, Clone)]
pub struct SingularCrossing {
    /// Crossing time, linearly interpolated inside the bracketing interval.
    pub time: f64,
    pub matrix: ScheduleTag,
    pub lambda_before: f64,
    pub lambda_after: f64,
}

/// Locate sign changes of `lambda_min` along a symmetric-matrix schedule.
pub fn detect_branch_singularity(
    grid: &TimeGrid,
    sched: &[DMatrix<f64>],
    tag: ScheduleTag,
) -> Vec<SingularCrossing> {
    let lambdas: Vec<f64> = sched.iter().map(linalg::lambda_min).collect();
    let mut crossings = Vec::new();
    for k in 0..lambdas.len().saturating_sub(1) {
        let (a, b) = (lambdas[k], lambdas[k + 1]);
        if a == 0.0 || a * b < 0.0 {
            let t0 = grid.nodes()[k];
            let t1 = grid.nodes()[k + 1];
            let frac = if a == b { 0.0 } else { a / (a - b) };
            crossings.push(SingularCrossing {
                time: t0 + frac * (t1 - t0),
                matrix: tag,
                lambda_before: a,
                lambda_after: b,
            });
        }
    }
    crossings
}

/// Riccati blow-up report for the inadmissible branch.
#[derive(Debug, Clone)]
pub struct EscapeReport {
    pub node: usize,
    pub time: f64,
}

/// Complete per-branch solution of the steering problem on a grid.
#[derive(Debug, Clone)]
pub struct BridgeSolution {
    pub branch: Branch,
    pub times: Vec<f64>,
    /// True when the target equals the uncontrolled terminal covariance in
    /// one or more eigendirections, making zero gain optimal there.
    pub degenerate: bool,
    pub pi0: DMatrix<f64>,
    pub q0: Option<DMatrix<f64>>,
    pub p0: DMatrix<f64>,
    /// Riccati schedule; absent on the plus branch (finite escape).
    pub pi_sched: Option<Vec<DMatrix<f64>>>,
    /// Lyapunov schedule of `Q`; absent when `Q(0)` is infinite.
    pub q_sched: Option<Vec<DMatrix<f64>>>,
    pub p_sched: Vec<DMatrix<f64>>,
    /// Controlled covariance; minus branch only.
    pub sigma_sched: Option<Vec<DMatrix<f64>>>,
    /// Feedback gains `K(t_k)`; minus branch only.
    pub gain_sched: Option<Vec<DMatrix<f64>>>,
    pub residual_0: f64,
    pub residual_t: f64,
    pub singular_times: Vec<SingularCrossing>,
    pub escape: Option<EscapeReport>,
    pub alternate_form_rel_gap: f64,
}

impl BridgeSolution {
    /// Gains for the simulator; errors on a plus-branch solution.
    pub fn gains(&self) -> Result<&[DMatrix<f64>]> {
        self.gain_sched
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("solution carries no gain schedule".into()))
    }

    pub fn max_gain_norm(&self) -> Option<f64> {
        self.gain_sched
            .as_ref()
            .map(|g| g.iter().map(|k| k.norm()).fold(0.0, f64::max))
    }

    /// Expected control energy `int trace(K Sigma K') dt` by the trapezoid
    /// rule on the solution grid.
    pub fn expected_energy(&self) -> Option<f64> {
        let gains = self.gain_sched.as_ref()?;
        let sigmas = self.sigma_sched.as_ref()?;
        let integrand: Vec<f64> = gains
            .iter()
            .zip(sigmas)
            .map(|(k, s)| (k * s * k.transpose()).trace())
            .collect();
        let mut total = 0.0;
        for k in 0..self.times.len() - 1 {
            total += 0.5 * (self.times[k + 1] - self.times[k]) * (integrand[k] + integrand[k + 1]);
        }
        Some(total)
    }
}

/// Solve the steering problem on the minus branch (the admissible one).
pub fn solve_bridge(
    sys: &LtvSystem,
    grid: &TimeGrid,
    schedules: &SystemSchedules,
    sigma0: &GaussianMarginal,
    sigma_t: &GaussianMarginal,
) -> Result<BridgeSolution> {
    analyze_branch(sys, grid, schedules, sigma0, sigma_t, Branch::Minus)
}

/// Solve or diagnose one branch of the coupled boundary problem.
pub fn analyze_branch(
    sys: &LtvSystem,
    grid: &TimeGrid,
    schedules: &SystemSchedules,
    sigma0: &GaussianMarginal,
    sigma_t: &GaussianMarginal,
    branch: Branch,
) -> Result<BridgeSolution> {
    let n = sys.state_dim();
    if sigma0.dim() != n || sigma_t.dim() != n {
        return Err(Error::InvalidArgument(format!(
            "marginal dimension does not match state dimension {n}"
        )));
    }
    let norm = normalized_marginals(sigma0, sigma_t, schedules.n_total(), schedules.phi_0t())?;
    let boundary = closed_form_boundary(&norm, schedules, sigma0, sigma_t, branch)?;

    let p_sched = integrate_lyapunov(sys, grid, &boundary.p0, DiffusionSign::Positive);
    let q_sched = boundary
        .q0
        .as_ref()
        .map(|q0| integrate_lyapunov(sys, grid, q0, DiffusionSign::Negative));

    let mut singular_times = Vec::new();
    if let Some(qs) = &q_sched {
        singular_times.extend(detect_branch_singularity(grid, qs, ScheduleTag::Q));
    }
    singular_times.extend(detect_branch_singularity(grid, &p_sched, ScheduleTag::P));

    let (pi_sched, sigma_sched, gain_sched, escape) = match branch {
        Branch::Minus => {
            let pi = integrate_pi(sys, grid, &boundary.pi0)?;
            let sigma = compute_sigma_schedule(sys, grid, sigma0, &pi)?;
            let gains = gain_schedule(sys, grid, &pi);
            (Some(pi), Some(sigma), Some(gains), None)
        }
        Branch::Plus => {
            let escape = match integrate_pi(sys, grid, &boundary.pi0) {
                Ok(_) => None,
                Err(Error::EscapeDetected { node, time }) => Some(EscapeReport { node, time }),
                Err(other) => return Err(other),
            };
            (None, None, None, escape)
        }
    };

    let (residual_0, residual_t) = boundary_residuals(
        &boundary.pi0,
        &p_sched,
        pi_sched.as_deref(),
        q_sched.as_deref(),
        sigma0,
        sigma_t,
    );

    Ok(BridgeSolution {
        branch,
        times: grid.nodes().to_vec(),
        degenerate: boundary.degenerate,
        pi0: boundary.pi0,
        q0: boundary.q0,
        p0: boundary.p0,
        pi_sched,
        q_sched,
        p_sched,
        sigma_sched,
        gain_sched,
        residual_0,
        residual_t,
        singular_times,
        escape,
        alternate_form_rel_gap: boundary.alternate_form_rel_gap,
    })
}

/// Frobenius residuals of `Sigma0^{-1} = P(0)^{-1} + Pi(0)` and
/// `SigmaT^{-1} = P(T)^{-1} + Pi(T)`, with `Pi(T)` taken from the Riccati
/// schedule when present and from `Q(T)^{-1}` otherwise.
fn boundary_residuals(
    pi0: &DMatrix<f64>,
    p_sched: &[DMatrix<f64>],
    pi_sched: Option<&[DMatrix<f64>]>,
    q_sched: Option<&[DMatrix<f64>]>,
    sigma0: &GaussianMarginal,
    sigma_t: &GaussianMarginal,
) -> (f64, f64) {
    let residual_0 = match (
        linalg::sym_inverse(sigma0.sigma()),
        linalg::sym_inverse(&p_sched[0]),
    ) {
        (Ok(s0_inv), Ok(p0_inv)) => (s0_inv - p0_inv - pi0).norm(),
        _ => f64::NAN,
    };
    let pi_t = match (pi_sched, q_sched) {
        (Some(pi), _) => Some(pi.last().expect("nonempty schedule").clone()),
        (None, Some(qs)) => linalg::sym_inverse(qs.last().expect("nonempty schedule")).ok(),
        (None, None) => None,
    };
    let residual_t = match (
        linalg::sym_inverse(sigma_t.sigma()),
        linalg::sym_inverse(p_sched.last().expect("nonempty schedule")),
        pi_t,
    ) {
        (Ok(st_inv), Ok(pt_inv), Some(pi_t)) => (st_inv - pt_inv - pi_t).norm(),
        _ => f64::NAN,
    };
    (residual_0, residual_t)
}

/// Residual report of the boundary identities and covariance positivity.
#[derive(Debug, Clone)]
pub struct VerifyBridgeReport {
    pub residual_0: f64,
    pub residual_t: f64,
    /// `||Sigma(T) - SigmaT||_F`; `None` when no covariance schedule exists.
    pub sigma_terminal_residual: Option<f64>,
    pub max_asymmetry: f64,
    /// Minimum over nodes of `lambda_min(Sigma(t_k))`.
    pub sigma_lambda_min: Option<f64>,
    pub singular_count: usize,
    pub tol: f64,
    pub passed: bool,
}

/// Check both boundary identities, terminal attainment, schedule symmetry and
/// covariance positivity; passes only for a nonsingular (minus-branch)
/// solution within `tol`.
pub fn verify_bridge(
    solution: &BridgeSolution,
    sigma0: &GaussianMarginal,
    sigma_t: &GaussianMarginal,
    tol: f64,
) -> VerifyBridgeReport {
    let (residual_0, residual_t) = boundary_residuals(
        &solution.pi0,
        &solution.p_sched,
        solution.pi_sched.as_deref(),
        solution.q_sched.as_deref(),
        sigma0,
        sigma_t,
    );
    let sigma_terminal_residual = solution
        .sigma_sched
        .as_ref()
        .map(|s| (s.last().expect("nonempty schedule") - sigma_t.sigma()).norm());
    let sigma_lambda_min = solution.sigma_sched.as_ref().map(|s| {
        s.iter()
            .map(linalg::lambda_min)
            .fold(f64::INFINITY, f64::min)
    });

    let mut max_asymmetry: f64 = 0.0;
    let mut track = |sched: &[DMatrix<f64>]| {
        for x in sched {
            max_asymmetry = max_asymmetry.max(linalg::asymmetry(x));
        }
    };
    track(&solution.p_sched);
    if let Some(qs) = &solution.q_sched {
        track(qs);
    }
    if let Some(pis) = &solution.pi_sched {
        track(pis);
    }
    if let Some(ss) = &solution.sigma_sched {
        track(ss);
    }

    let passed = residual_0 <= tol
        && residual_t <= tol
        && sigma_terminal_residual.map(|r| r <= tol).unwrap_or(false)
        && max_asymmetry <= tol
        && sigma_lambda_min.map(|l| l > 0.0).unwrap_or(false)
        && solution.singular_times.is_empty();

    VerifyBridgeReport {
        residual_0,
        residual_t,
        sigma_terminal_residual,
        max_asymmetry,
        sigma_lambda_min,
        singular_count: solution.singular_times.len(),
        tol,
        passed,
    }
}
