//! Euler-Maruyama Monte Carlo simulation of the prior, the optimally
//! controlled process and the pinned (endpoint-conditioned) process.
//!
//! Every path owns an independent counter-based RNG stream derived from
//! `(seed, path_index)`, so ensembles are bit-reproducible regardless of how
//! many worker threads run the fan-out.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::bridge::{BridgeSolution, GaussianMarginal};
use crate::error::{Error, Result};
use crate::linalg;
use crate::ode::{rk4_matrix, Rk4Options, Rk4Outcome};
use crate::system::{compute_transition, LtvSystem, TimeGrid};

/// Monte Carlo run parameters.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub paths: usize,
    pub seed: u64,
    pub sim_steps: usize,
    pub record_stride: usize,
}

impl SimConfig {
    pub fn new(paths: usize, seed: u64, sim_steps: usize, record_stride: usize) -> Result<Self> {
        if sim_steps < 2 {
            return Err(Error::InvalidArgument(format!(
                "sim_steps must be at least 2, got {sim_steps}"
            )));
        }
        if record_stride == 0 || !sim_steps.is_multiple_of(record_stride) {
            return Err(Error::InvalidArgument(format!(
                "record_stride {record_stride} must divide sim_steps {sim_steps}"
            )));
        }
        Ok(Self {
            paths,
            seed,
            sim_steps,
            record_stride,
        })
    }

    /// Number of recorded nodes per path (including both endpoints).
    pub fn records(&self) -> usize {
        self.sim_steps / self.record_stride + 1
    }
}

/// Integration scheme metadata carried by ensembles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    EulerMaruyama,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scheme::EulerMaruyama => write!(f, "euler-maruyama"),
        }
    }
}

/// Recorded sample paths; states (and optionally controls) are stored as one
/// `dim x records` matrix per path, ordered by path index.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub times: Vec<f64>,
    pub states: Vec<DMatrix<f64>>,
    pub controls: Option<Vec<DMatrix<f64>>>,
    pub seed: u64,
    pub paths: usize,
    pub scheme: Scheme,
    state_dim: usize,
    control_dim: usize,
}

impl PathEnsemble {
    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    /// Index of the recorded node at time `t`.
    pub fn record_index(&self, t: f64) -> Result<usize> {
        let horizon = self.times.last().copied().unwrap_or(0.0);
        let tol = 1e-9 * horizon.max(1.0);
        self.times
            .iter()
            .position(|rt| (rt - t).abs() <= tol)
            .ok_or_else(|| Error::InvalidArgument(format!("time {t} is not a recorded node")))
    }
}

enum InitialLaw {
    /// Draw from `N(0, L L')` using the stored Cholesky factor.
    Gaussian(DMatrix<f64>),
    Fixed(DVector<f64>),
}

struct EmPlan {
    dt: f64,
    sim_steps: usize,
    stride: usize,
    /// Recorded times (thinned sim grid).
    record_times: Vec<f64>,
    /// Closed-loop (or prior) drift matrix per sim node.
    drift: Vec<DMatrix<f64>>,
    /// Noise input matrix per sim node.
    noise: Vec<DMatrix<f64>>,
    /// Additive forcing per sim node (pinned process).
    affine: Option<Vec<DVector<f64>>>,
    /// Gain per sim node, only for recording `u = -K x` along the path.
    record_gain: Option<Vec<DMatrix<f64>>>,
    /// Overwrite the final state (pinned process endpoint).
    pin_terminal: Option<DVector<f64>>,
    init: InitialLaw,
}

fn simulate_one_path(
    plan: &EmPlan,
    seed: u64,
    path_index: usize,
) -> (DMatrix<f64>, Option<DMatrix<f64>>) {
    let n = plan.drift[0].nrows();
    let m_noise = plan.noise[0].ncols();
    let records = plan.record_times.len();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_index as u64);
    let draw = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let mut x = match &plan.init {
        InitialLaw::Gaussian(chol) => {
            let z = DVector::from_fn(n, |_, _| draw(&mut rng));
            chol * z
        }
        InitialLaw::Fixed(x0) => x0.clone(),
    };

    let mut states = DMatrix::zeros(n, records);
    let mut controls = plan
        .record_gain
        .as_ref()
        .map(|g| DMatrix::zeros(g[0].nrows(), records));
    let record = |r: usize,
                  k: usize,
                  x: &DVector<f64>,
                  states: &mut DMatrix<f64>,
                  controls: &mut Option<DMatrix<f64>>| {
        states.column_mut(r).copy_from(x);
        if let (Some(ctrl), Some(gains)) = (controls.as_mut(), plan.record_gain.as_ref()) {
            let mut u = DVector::zeros(gains[k].nrows());
            u.gemv(-1.0, &gains[k], x, 0.0);
            ctrl.column_mut(r).copy_from(&u);
        }
    };
    record(0, 0, &x, &mut states, &mut controls);

    let sqrt_dt = plan.dt.sqrt();
    let mut drift_buf = DVector::zeros(n);
    let mut dw = DVector::zeros(m_noise);
    for k in 0..plan.sim_steps {
        for j in 0..m_noise {
            dw[j] = sqrt_dt * draw(&mut rng);
        }
        drift_buf.gemv(1.0, &plan.drift[k], &x, 0.0);
        if let Some(affine) = &plan.affine {
            drift_buf += &affine[k];
        }
        x.axpy(plan.dt, &drift_buf, 1.0);
        x.gemv(1.0, &plan.noise[k], &dw, 1.0);

        if k + 1 == plan.sim_steps {
            if let Some(target) = &plan.pin_terminal {
                // The conditioned law at the endpoint is the point mass at
                // the pinned target.
                x.copy_from(target);
            }
        }
        if (k + 1) % plan.stride == 0 {
            record((k + 1) / plan.stride, k + 1, &x, &mut states, &mut controls);
        }
    }
    (states, controls)
}

fn run_ensemble(plan: EmPlan, cfg: &SimConfig) -> PathEnsemble {
    let state_dim = plan.drift[0].nrows();
    let control_dim = plan.record_gain.as_ref().map(|g| g[0].nrows()).unwrap_or(0);
    let results: Vec<(DMatrix<f64>, Option<DMatrix<f64>>)> = (0..cfg.paths)
        .into_par_iter()
        .map(|p| simulate_one_path(&plan, cfg.seed, p))
        .collect();

    let mut states = Vec::with_capacity(cfg.paths);
    let mut controls = plan
        .record_gain
        .as_ref()
        .map(|_| Vec::with_capacity(cfg.paths));
    for (s, c) in results {
        states.push(s);
        if let (Some(all), Some(c)) = (controls.as_mut(), c) {
            all.push(c);
        }
    }
    PathEnsemble {
        times: plan.record_times,
        states,
        controls,
        seed: cfg.seed,
        paths: cfg.paths,
        scheme: Scheme::EulerMaruyama,
        state_dim,
        control_dim,
    }
}

fn sim_times(grid: &TimeGrid, cfg: &SimConfig) -> Vec<f64> {
    (0..=cfg.sim_steps)
        .map(|k| k as f64 * grid.horizon() / cfg.sim_steps as f64)
        .collect()
}

fn record_times(times: &[f64], stride: usize) -> Vec<f64> {
    times.iter().copied().step_by(stride).collect()
}

/// Linear interpolation of a uniformly gridded matrix schedule at time `t`.
fn interpolate_schedule(times: &[f64], mats: &[DMatrix<f64>], t: f64) -> DMatrix<f64> {
    debug_assert!(times.len() >= 2 && times.len() == mats.len());
    let h = times[1] - times[0];
    let j = (((t / h).floor()) as usize).min(times.len() - 2);
    let theta = ((t - times[j]) / h).clamp(0.0, 1.0);
    (1.0 - theta) * &mats[j] + theta * &mats[j + 1]
}

/// Sample the uncontrolled diffusion `dx = A x dt + B dw`, `x(0) ~ N(0, Sigma0)`.
pub fn simulate_prior(
    sys: &LtvSystem,
    grid: &TimeGrid,
    sigma0: &GaussianMarginal,
    cfg: &SimConfig,
) -> Result<PathEnsemble> {
    if sigma0.dim() != sys.state_dim() {
        return Err(Error::InvalidArgument(
            "initial covariance does not match the state dimension".into(),
        ));
    }
    let times = sim_times(grid, cfg);
    let mut drift = Vec::with_capacity(times.len());
    let mut noise = Vec::with_capacity(times.len());
    for t in &times {
        let (a, b) = sys.eval(*t);
        drift.push(a);
        noise.push(b);
    }
    let chol = linalg::cholesky_lower(sigma0.sigma())?;
    let plan = EmPlan {
        dt: grid.horizon() / cfg.sim_steps as f64,
        sim_steps: cfg.sim_steps,
        stride: cfg.record_stride,
        record_times: record_times(&times, cfg.record_stride),
        drift,
        noise,
        affine: None,
        record_gain: None,
        pin_terminal: None,
        init: InitialLaw::Gaussian(chol),
    };
    Ok(run_ensemble(plan, cfg))
}

/// Sample the closed loop `dx = (A - B K) x dt + B dw` with the solved gain,
/// recording `u = -K x` alongside the states. Gains are interpolated linearly
/// between solver nodes when the simulation grid is finer.
pub fn simulate_bridge(
    sys: &LtvSystem,
    grid: &TimeGrid,
    solution: &BridgeSolution,
    sigma0: &GaussianMarginal,
    cfg: &SimConfig,
) -> Result<PathEnsemble> {
    if sigma0.dim() != sys.state_dim() {
        return Err(Error::InvalidArgument(
            "initial covariance does not match the state dimension".into(),
        ));
    }
    let gains = solution.gains()?;
    let times = sim_times(grid, cfg);
    let mut drift = Vec::with_capacity(times.len());
    let mut noise = Vec::with_capacity(times.len());
    let mut gain = Vec::with_capacity(times.len());
    for t in &times {
        let (a, b) = sys.eval(*t);
        let k = interpolate_schedule(&solution.times, gains, *t);
        drift.push(&a - &b * &k);
        noise.push(b);
        gain.push(k);
    }
    let chol = linalg::cholesky_lower(sigma0.sigma())?;
    let plan = EmPlan {
        dt: grid.horizon() / cfg.sim_steps as f64,
        sim_steps: cfg.sim_steps,
        stride: cfg.record_stride,
        record_times: record_times(&times, cfg.record_stride),
        drift,
        noise,
        affine: None,
        record_gain: Some(gain),
        pin_terminal: None,
        init: InitialLaw::Gaussian(chol),
    };
    Ok(run_ensemble(plan, cfg))
}

/// Sample the prior conditioned on `x(0) = x0` and `x(T) = x_target`.
///
/// The drift is `(A - BB'R^{-1}) x + BB'R^{-1} Phi(t,T) x_target` with
/// `dR/dt = A R + R A' - B B'`, `R(T) = 0`, integrated backward on the
/// simulation grid. `R` vanishes at `T`, so the final step applies the exact
/// conditioned endpoint instead of evaluating the singular drift.
pub fn simulate_pinned(
    sys: &LtvSystem,
    grid: &TimeGrid,
    x0: &DVector<f64>,
    x_target: &DVector<f64>,
    cfg: &SimConfig,
) -> Result<PathEnsemble> {
    let n = sys.state_dim();
    if x0.len() != n || x_target.len() != n {
        return Err(Error::InvalidArgument(
            "pinned endpoints must match the state dimension".into(),
        ));
    }
    let sim_grid = TimeGrid::new(grid.horizon(), cfg.sim_steps)?;
    let times = sim_grid.nodes().to_vec();
    let transition = compute_transition(sys, &sim_grid)?;
    let phi_0t_total = transition.phi_inv.last().expect("nonempty grid").clone();

    let mut reversed = times.clone();
    reversed.reverse();
    let r_backward = match rk4_matrix(
        &reversed,
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
        Rk4Outcome::Complete(mut sched) => {
            sched.reverse();
            sched
        }
        Rk4Outcome::Escaped { last_valid, .. } => {
            return Err(Error::NumericalFailure(format!(
                "pinned gramian integration diverged after node {last_valid}"
            )))
        }
    };

    let mut drift = Vec::with_capacity(times.len());
    let mut noise = Vec::with_capacity(times.len());
    let mut affine = Vec::with_capacity(times.len());
    for (k, t) in times.iter().enumerate() {
        let (a, b) = sys.eval(*t);
        if k + 1 == times.len() {
            // Unused: the final step is replaced by the conditioned endpoint.
            affine.push(DVector::zeros(n));
            drift.push(a);
            noise.push(b);
            continue;
        }
        let r_inv = linalg::sym_inverse(&r_backward[k]).map_err(|_| {
            Error::NumericalFailure(format!(
                "pinned process gramian singular at interior node {k} (t = {t})"
            ))
        })?;
        let bbt = &b * b.transpose();
        let feedback = &bbt * &r_inv;
        let phi_t_to_horizon = &transition.phi[k] * &phi_0t_total;
        affine.push(&feedback * (phi_t_to_horizon * x_target));
        drift.push(&a - feedback);
        noise.push(b);
    }

    let plan = EmPlan {
        dt: grid.horizon() / cfg.sim_steps as f64,
        sim_steps: cfg.sim_steps,
        stride: cfg.record_stride,
        record_times: record_times(&times, cfg.record_stride),
        drift,
        noise,
        affine: Some(affine),
        record_gain: None,
        pin_terminal: Some(x_target.clone()),
        init: InitialLaw::Fixed(x0.clone()),
    };
    Ok(run_ensemble(plan, cfg))
}

/// Zero-mean empirical covariance `sum_i x_i x_i' / paths` at a recorded time.
pub fn empirical_covariance(ens: &PathEnsemble, t: f64) -> Result<DMatrix<f64>> {
    let rec = ens.record_index(t)?;
    if ens.paths < 2 {
        return Err(Error::InvalidArgument(
            "empirical covariance needs at least 2 paths".into(),
        ));
    }
    let n = ens.state_dim();
    let mut acc = DMatrix::zeros(n, n);
    for path in &ens.states {
        let col = path.column(rec);
        acc.ger(1.0, &col, &col, 1.0);
    }
    acc /= ens.paths as f64;
    Ok(acc)
}

/// Path-averaged trapezoid integral of `||u(t)||^2` over the recorded nodes.
pub fn empirical_energy(ens: &PathEnsemble) -> Result<f64> {
    let controls = ens
        .controls
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("ensemble carries no controls".into()))?;
    if controls.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for path in controls {
        let mut integral = 0.0;
        for k in 0..ens.times.len() - 1 {
            let h = ens.times[k + 1] - ens.times[k];
            let a = path.column(k).norm_squared();
            let b = path.column(k + 1).norm_squared();
            integral += 0.5 * h * (a + b);
        }
        total += integral;
    }
    Ok(total / controls.len() as f64)
}
