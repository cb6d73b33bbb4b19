//! Relative-entropy optimality checks for the controlled process.
//!
//! The controlled law is the closest one, in relative entropy over path
//! space, to the uncontrolled prior among laws with the prescribed endpoint
//! marginals. That splits into a finite-dimensional statement about the
//! two-point joint covariances plus the assertion that the prior and the
//! closed loop share the same pinned processes; both are verified here
//! numerically.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bridge::{BridgeSolution, GaussianMarginal};
use crate::error::{Error, Result};
use crate::linalg;
use crate::ode::{refine_times, rk4_matrix, rk4_matrix_pair, Rk4Options, Rk4Outcome};
use crate::system::{LtvSystem, SystemSchedules, TimeGrid};

/// Relative entropy `D(N(0, sigma) || N(0, s))` in nats:
/// `(log det S - log det Sigma + trace(S^{-1} Sigma) - n) / 2`.
pub fn gaussian_kl(sigma: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<f64> {
    if sigma.nrows() != s.nrows() || sigma.ncols() != s.ncols() {
        return Err(Error::InvalidArgument(
            "covariances must have matching dimensions".into(),
        ));
    }
    let logdet_s = linalg::logdet_spd(s)?;
    let logdet_sigma = linalg::logdet_spd(sigma)?;
    let s_inv = linalg::sym_inverse(s)?;
    let trace = (s_inv * sigma).trace();
    Ok(0.5 * (logdet_s - logdet_sigma + trace - sigma.nrows() as f64))
}

/// Two-point joint covariance `[[Sigma_a, Y'], [Y, Sigma_b]]`.
#[derive(Debug, Clone)]
pub struct JointCovariance {
    matrix: DMatrix<f64>,
    n: usize,
}

impl JointCovariance {
    pub fn from_blocks(
        sigma_a: &DMatrix<f64>,
        y: &DMatrix<f64>,
        sigma_b: &DMatrix<f64>,
    ) -> Result<Self> {
        let n = sigma_a.nrows();
        if !sigma_a.is_square()
            || !sigma_b.is_square()
            || sigma_b.nrows() != n
            || y.nrows() != n
            || y.ncols() != n
        {
            return Err(Error::InvalidArgument(
                "joint covariance blocks must all be n x n".into(),
            ));
        }
        let mut matrix = DMatrix::zeros(2 * n, 2 * n);
        matrix.view_mut((0, 0), (n, n)).copy_from(sigma_a);
        matrix.view_mut((0, n), (n, n)).copy_from(&y.transpose());
        matrix.view_mut((n, 0), (n, n)).copy_from(y);
        matrix.view_mut((n, n), (n, n)).copy_from(sigma_b);
        linalg::symmetrize(&mut matrix);
        Ok(Self { matrix, n })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn block_dim(&self) -> usize {
        self.n
    }

    pub fn lambda_min(&self) -> f64 {
        linalg::lambda_min(&self.matrix)
    }
}

/// Joint covariance of `(x(0), x(T))` under the prior:
/// `[[Sigma0, Sigma0 Phi'], [Phi Sigma0, Phi Sigma0 Phi' + M]]`.
pub fn prior_joint(
    sigma0: &GaussianMarginal,
    phi_t0: &DMatrix<f64>,
    m_tt: &DMatrix<f64>,
) -> Result<JointCovariance> {
    let y = phi_t0 * sigma0.sigma();
    let s_t = linalg::sym_part(&(phi_t0 * sigma0.sigma() * phi_t0.transpose() + m_tt));
    let joint = JointCovariance::from_blocks(sigma0.sigma(), &y, &s_t)?;
    let lo = joint.lambda_min();
    let scale = linalg::lambda_extremes(joint.matrix()).1.abs().max(1.0);
    if lo < -1e-8 * scale {
        return Err(Error::NumericalFailure(format!(
            "prior joint covariance not PSD (lambda_min = {lo:.6e})"
        )));
    }
    Ok(joint)
}

/// Joint covariance of `(x(0), x(T))` under the closed loop, whose cross
/// block is `Y = Phi_cl(T,0) Sigma0`.
pub fn bridge_joint(
    sigma0: &GaussianMarginal,
    sigma_t: &GaussianMarginal,
    phi_cl_t0: &DMatrix<f64>,
) -> Result<JointCovariance> {
    let y = phi_cl_t0 * sigma0.sigma();
    JointCovariance::from_blocks(sigma0.sigma(), &y, sigma_t.sigma())
}

/// Joint covariance with a caller-chosen cross block.
pub fn joint_from_cross(
    sigma0: &GaussianMarginal,
    sigma_t: &GaussianMarginal,
    y: &DMatrix<f64>,
) -> Result<JointCovariance> {
    JointCovariance::from_blocks(sigma0.sigma(), y, sigma_t.sigma())
}

/// Transition matrices of the closed-loop drift `A(t) - B(t) B(t)' Pi(t)`.
#[derive(Debug, Clone)]
pub struct ClosedLoopTransition {
    pub phi: Vec<DMatrix<f64>>,
    pub phi_inv: Vec<DMatrix<f64>>,
}

impl ClosedLoopTransition {
    /// `Phi_cl(T, 0)`.
    pub fn total(&self) -> &DMatrix<f64> {
        self.phi.last().expect("nonempty schedule")
    }
}

/// Integrate `dPhi/dt = (A - B B' Pi) Phi` from the identity, co-integrating
/// the Riccati state so stage evaluations need no interpolation.
pub fn closed_loop_transition(
    sys: &LtvSystem,
    grid: &TimeGrid,
    pi_sched: &[DMatrix<f64>],
) -> Result<ClosedLoopTransition> {
    if pi_sched.len() != grid.nodes().len() {
        return Err(Error::InvalidArgument(
            "Riccati schedule does not match the grid".into(),
        ));
    }
    let n = sys.state_dim();
    let (_, phi) = rk4_matrix_pair(
        grid.nodes(),
        pi_sched[0].clone(),
        DMatrix::identity(n, n),
        |t, pi, phi| {
            let (a, b) = sys.eval(t);
            let bbt = &b * b.transpose();
            let dpi = -a.transpose() * pi - pi * &a + pi * &bbt * pi;
            let dphi = (&a - &bbt * pi) * phi;
            (dpi, dphi)
        },
        true,
        false,
    );
    let phi_inv = phi
        .iter()
        .map(linalg::lu_inverse)
        .collect::<Result<Vec<_>>>()?;
    Ok(ClosedLoopTransition { phi, phi_inv })
}

/// First-order-condition residual and objective at a candidate cross block.
#[derive(Debug, Clone)]
pub struct FocReport {
    /// `||Phi' M^{-1} - Sigma0^{-1} Y' (SigmaT - Y Sigma0^{-1} Y')^{-1}||_F`.
    pub residual: f64,
    /// `f(Y) = log det(SigmaT - Y Sigma0^{-1} Y') + 2 trace(Phi' M^{-1} Y)`.
    pub objective: f64,
}

/// Evaluate the stationarity condition of the joint-entropy objective at `Y`.
pub fn foc_residual(
    y: &DMatrix<f64>,
    sigma0: &GaussianMarginal,
    sigma_t: &GaussianMarginal,
    phi_t0: &DMatrix<f64>,
    m_tt: &DMatrix<f64>,
) -> Result<FocReport> {
    let sigma0_inv = linalg::sym_inverse(sigma0.sigma())?;
    let schur = linalg::sym_part(&(sigma_t.sigma() - y * &sigma0_inv * y.transpose()));
    let lo = linalg::lambda_min(&schur);
    if lo <= 0.0 {
        return Err(Error::InfeasibleCoupling(format!(
            "conditional covariance SigmaT - Y Sigma0^{{-1}} Y' not positive definite \
             (lambda_min = {lo:.6e})"
        )));
    }
    let schur_inv = linalg::sym_inverse(&schur)?;
    let m_inv = linalg::sym_inverse(m_tt)?;
    let gradient_half = phi_t0.transpose() * &m_inv - &sigma0_inv * y.transpose() * &schur_inv;
    let objective = linalg::logdet_spd(&schur)? + 2.0 * (phi_t0.transpose() * m_inv * y).trace();
    Ok(FocReport {
        residual: gradient_half.norm(),
        objective,
    })
}

/// Residuals of the shared-pinned-process identities.
#[derive(Debug, Clone)]
pub struct ReciprocalReport {
    /// Max over the interior window of
    /// `||F1 - F2||_F + ||F2 - F3||_F` where
    /// `F1 = Sigma_t Phi_cl(0,t)' - Phi_cl(t,0) Sigma0`,
    /// `F2 = S_t Phi(0,t)' - Phi(t,0) Sigma0`,
    /// `F3 = Q(t) (Phi_cl(0,t)' - Phi(0,t)')`.
    pub f_identity: f64,
    /// Max drift-field gap `||(A - BB'R1^{-1}) - (A_cl - BB'R2^{-1})||_F`.
    pub drift: f64,
    /// Max offset gap `||R1^{-1} Phi(t,T) - R2^{-1} Phi_cl(t,T)||_F`.
    pub offset: f64,
    /// Number of trailing grid nodes excluded (R vanishes at the horizon).
    pub excluded_tail: usize,
}

/// Fraction of the horizon excluded from the tail of the reciprocal-identity
/// maxima. Both pinned gramians vanish at the horizon; for rank-deficient
/// noise their smallest eigenvalue decays like `(T - t)^3`, so within a few
/// percent of the endpoint its floating-point representation error
/// (`eps * ||R||`, i.e. `eps * (T - t)`) dominates the eigenvalue itself and
/// `R^{-1}` carries no information. Outside this window the identities are
/// checkable to 1e-5 and better.
pub const RECIPROCAL_TAIL_FRACTION: f64 = 0.05;

/// Verify that the prior and the closed loop share their pinned processes.
///
/// `R1` and `R2` are integrated backward from zero at the horizon under the
/// prior and closed-loop drifts respectively; the trailing
/// [`RECIPROCAL_TAIL_FRACTION`] of the grid is excluded from the maxima
/// because both gramians vanish at the horizon and their inverses become
/// meaningless there (see the constant's documentation).
pub fn reciprocal_identity_residuals(
    sys: &LtvSystem,
    grid: &TimeGrid,
    schedules: &SystemSchedules,
    solution: &BridgeSolution,
    clt: &ClosedLoopTransition,
    sigma0: &GaussianMarginal,
) -> Result<ReciprocalReport> {
    let pi_sched = solution
        .pi_sched
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("solution carries no Riccati schedule".into()))?;
    let sigma_sched = solution
        .sigma_sched
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("solution carries no covariance schedule".into()))?;

    let n = sys.state_dim();
    let nodes = grid.nodes();
    let mut reversed = nodes.to_vec();
    reversed.reverse();
    // Both gramians vanish at the horizon and are inverted below, so their
    // truncation error is amplified by 1/lambda_min(R)^2; substepping pushes
    // it to the floating-point floor.
    let substeps = 8;
    let refined = refine_times(&reversed, substeps);

    // Pinned gramian of the prior: dR1/dt = A R1 + R1 A' - BB', R1(T) = 0.
    let r1: Vec<DMatrix<f64>> = match rk4_matrix(
        &refined,
        DMatrix::zeros(n, n),
        |t, r| {
            let (a, b) = sys.eval(t);
            &a * r + r * a.transpose() - &b * b.transpose()
        },
        Rk4Options {
            symmetrize: true,
            escape_norm: None,
        },
    ) {
        Rk4Outcome::Complete(s) => {
            let mut s: Vec<DMatrix<f64>> = s.into_iter().step_by(substeps).collect();
            s.reverse();
            s
        }
        Rk4Outcome::Escaped { last_valid, .. } => {
            return Err(Error::NumericalFailure(format!(
                "prior pinned gramian diverged after reversed node {last_valid}"
            )))
        }
    };

    // Closed-loop pinned gramian, co-integrated with the Riccati state so the
    // closed-loop drift is exact at stage times.
    let (_, r2_fine) = rk4_matrix_pair(
        &refined,
        pi_sched.last().expect("nonempty schedule").clone(),
        DMatrix::zeros(n, n),
        |t, pi, r| {
            let (a, b) = sys.eval(t);
            let bbt = &b * b.transpose();
            let a_cl = &a - &bbt * pi;
            let dpi = -a.transpose() * pi - pi * a + pi * &bbt * pi;
            let dr = &a_cl * r + r * a_cl.transpose() - bbt;
            (dpi, dr)
        },
        true,
        true,
    );
    let mut r2: Vec<DMatrix<f64>> = r2_fine.into_iter().step_by(substeps).collect();
    r2.reverse();

    let phi_0t_total = schedules.phi_inv.last().expect("nonempty schedule");
    let phi_cl_0t_total = clt.phi_inv.last().expect("nonempty schedule");

    let tail = ((nodes.len() as f64 * RECIPROCAL_TAIL_FRACTION).ceil() as usize).max(2);
    let window_end = nodes.len().saturating_sub(tail);
    let mut f_identity: f64 = 0.0;
    let mut drift: f64 = 0.0;
    let mut offset: f64 = 0.0;
    for k in 0..window_end {
        let t = nodes[k];
        let (a, b) = sys.eval(t);
        let bbt = &b * b.transpose();

        let s_t = linalg::sym_part(
            &(&schedules.phi[k] * sigma0.sigma() * schedules.phi[k].transpose()
                + &schedules.m_gram[k]),
        );
        let f1 = &sigma_sched[k] * clt.phi_inv[k].transpose() - &clt.phi[k] * sigma0.sigma();
        let f2 = &s_t * schedules.phi_inv[k].transpose() - &schedules.phi[k] * sigma0.sigma();
        let f3 = match &solution.q_sched {
            Some(qs) => &qs[k] * (clt.phi_inv[k].transpose() - schedules.phi_inv[k].transpose()),
            // Degenerate zero-gain case: Q is infinite while the transition
            // gap vanishes; the product's limit is F2 itself.
            None => f2.clone(),
        };
        f_identity = f_identity.max((&f1 - &f2).norm() + (&f2 - &f3).norm());

        let r1_inv = linalg::sym_inverse(&r1[k])?;
        let r2_inv = linalg::sym_inverse(&r2[k])?;
        let a_cl = &a - &bbt * &pi_sched[k];
        let prior_field = &a - &bbt * &r1_inv;
        let loop_field = &a_cl - &bbt * &r2_inv;
        drift = drift.max((prior_field - loop_field).norm());

        let phi_t_horizon = &schedules.phi[k] * phi_0t_total;
        let phi_cl_t_horizon = &clt.phi[k] * phi_cl_0t_total;
        offset = offset.max((&r1_inv * phi_t_horizon - &r2_inv * phi_cl_t_horizon).norm());
    }

    Ok(ReciprocalReport {
        f_identity,
        drift,
        offset,
        excluded_tail: tail,
    })
}

/// Result of perturbing the optimal coupling.
#[derive(Debug, Clone)]
pub struct OptimalityReport {
    /// KL divergence of the closed-loop joint from the prior joint.
    pub optimal_kl: f64,
    pub trials: usize,
    /// Minimum over trials of `D(perturbed) - D(optimal)`.
    pub min_excess: f64,
    pub passed: bool,
}

/// Feasibility margin required of perturbed couplings.
pub const PERTURBATION_MARGIN: f64 = 1e-6;
/// Slack allowed on the optimality comparison.
pub const OPTIMALITY_SLACK: f64 = 1e-10;

/// Check that random feasible perturbations of the cross block never beat the
/// closed-loop coupling in relative entropy to the prior joint.
pub fn joint_optimality_check(
    phi_cl_t0: &DMatrix<f64>,
    sigma0: &GaussianMarginal,
    sigma_t: &GaussianMarginal,
    phi_t0: &DMatrix<f64>,
    m_tt: &DMatrix<f64>,
    trials: usize,
    seed: u64,
) -> Result<OptimalityReport> {
    let n = sigma0.dim();
    let s_joint = prior_joint(sigma0, phi_t0, m_tt)?;
    let optimal = bridge_joint(sigma0, sigma_t, phi_cl_t0)?;
    let optimal_kl = gaussian_kl(optimal.matrix(), s_joint.matrix())?;

    let y_star = phi_cl_t0 * sigma0.sigma();
    let sigma0_inv = linalg::sym_inverse(sigma0.sigma())?;
    let feasible = |y: &DMatrix<f64>| -> bool {
        let schur = linalg::sym_part(&(sigma_t.sigma() - y * &sigma0_inv * y.transpose()));
        linalg::lambda_min(&schur) >= PERTURBATION_MARGIN
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_excess = f64::INFINITY;
    let mut run = 0;
    let mut attempts = 0;
    while run < trials {
        attempts += 1;
        if attempts > 50 * trials.max(1) {
            return Err(Error::NumericalFailure(
                "could not generate enough feasible perturbations".into(),
            ));
        }
        let delta = DMatrix::from_fn(n, n, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
        let mut eps = 0.05 * y_star.norm().max(1.0) / delta.norm();
        let mut candidate = None;
        for _ in 0..60 {
            let y = &y_star + eps * &delta;
            if feasible(&y) {
                candidate = Some(y);
                break;
            }
            eps *= 0.5;
        }
        let Some(y) = candidate else { continue };
        let perturbed = joint_from_cross(sigma0, sigma_t, &y)?;
        let kl = gaussian_kl(perturbed.matrix(), s_joint.matrix())?;
        min_excess = min_excess.min(kl - optimal_kl);
        run += 1;
    }

    Ok(OptimalityReport {
        optimal_kl,
        trials: run,
        min_excess,
        passed: min_excess >= -OPTIMALITY_SLACK,
    })
}
