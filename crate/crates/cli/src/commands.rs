//! Command implementations: solve, simulate, verify, scenario.

use std::path::{Path, PathBuf};

use serde::Serialize;

use covbridge_core::bridge::{
    analyze_branch, boundary_via_iteration, compute_sigma_schedule, gain_schedule, solve_bridge,
    verify_bridge, Branch, BridgeSolution, ITERATION_MAX, ITERATION_TOL,
};
use covbridge_core::entropy::{
    closed_loop_transition, foc_residual, joint_optimality_check, reciprocal_identity_residuals,
};
use covbridge_core::linalg;
use covbridge_core::sim::{empirical_covariance, empirical_energy, simulate_bridge};
use covbridge_core::system::{SystemSchedules, TimeGrid};
use nalgebra::DMatrix;

use crate::config::Problem;
use crate::output;
use crate::scenario;
use crate::CliError;

/// Pass thresholds of the verification suite.
pub mod thresholds {
    /// Boundary identities, terminal attainment and covariance symmetry.
    pub const BOUNDARY: f64 = 1e-6;
    /// Agreement between the fixed-point iteration and the closed form.
    pub const ITERATION_AGREEMENT: f64 = 1e-8;
    /// Agreement between the two equivalent closed forms.
    pub const ALTERNATE_FORM: f64 = 1e-10;
    /// `Pi Q = I` cross-validation.
    pub const RICCATI_CONSISTENCY: f64 = 1e-7;
    /// `(Sigma^{-1} - Pi) P = I` cross-validation.
    pub const SPLIT_CONSISTENCY: f64 = 1e-6;
    /// First-order condition of the joint-entropy objective.
    pub const FOC: f64 = 1e-6;
    /// Pinned-process identity residuals.
    pub const RECIPROCAL: f64 = 1e-5;
    /// Slack on the joint-optimality perturbation test.
    pub const OPTIMALITY_SLACK: f64 = 1e-10;
    /// Gain ceiling in the degenerate zero-gain case.
    pub const ZERO_GAIN: f64 = 1e-7;
    /// Trials for the joint-optimality perturbation test.
    pub const OPTIMALITY_TRIALS: usize = 100;
}

/// Resolve the output directory: CLI flag, then config, then the
/// `COVBRIDGE_OUT` environment variable, then `./out`.
pub fn resolve_out_dir(flag: Option<&Path>, problem: &Problem) -> PathBuf {
    if let Some(dir) = flag {
        return dir.to_path_buf();
    }
    if let Some(dir) = &problem.output.dir {
        return dir.clone();
    }
    if let Ok(dir) = std::env::var("COVBRIDGE_OUT") {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    PathBuf::from("out")
}

/// How the boundary iteration fared, for the report.
pub enum IterationSummary {
    Done {
        iterations: usize,
        converged: bool,
        gap_to_closed_form: f64,
    },
    Skipped {
        reason: String,
    },
}

pub struct SolveOutcome {
    pub grid: TimeGrid,
    pub schedules: SystemSchedules,
    pub minus: BridgeSolution,
    pub plus: BridgeSolution,
    pub iteration: IterationSummary,
}

fn map_core(e: covbridge_core::Error) -> CliError {
    use covbridge_core::Error as E;
    match e {
        E::NotControllable(m) => CliError::NotControllable(m),
        E::InvalidArgument(m) => CliError::Config(m),
        E::OutOfRange { t, horizon } => {
            CliError::Config(format!("time {t} outside horizon [0, {horizon}]"))
        }
        other => CliError::Numerical(other.to_string()),
    }
}

/// Solve both branches and run the boundary iteration cross-check.
pub fn run_solve(problem: &Problem) -> Result<SolveOutcome, CliError> {
    let grid = TimeGrid::new(problem.horizon, problem.steps).map_err(map_core)?;
    let schedules = SystemSchedules::compute(&problem.system, &grid).map_err(map_core)?;
    if !schedules.controllability.controllable {
        return Err(CliError::NotControllable(format!(
            "reachability gramian eigenvalue margin {:.6e} is below threshold {:.6e}",
            schedules.controllability.lambda_min,
            schedules.controllability.rel_tol * schedules.controllability.lambda_max.max(1.0)
        )));
    }
    let minus = solve_bridge(
        &problem.system,
        &grid,
        &schedules,
        &problem.sigma0,
        &problem.sigma_t,
    )
    .map_err(map_core)?;
    let plus = analyze_branch(
        &problem.system,
        &grid,
        &schedules,
        &problem.sigma0,
        &problem.sigma_t,
        Branch::Plus,
    )
    .map_err(map_core)?;

    let iteration = if minus.degenerate {
        IterationSummary::Skipped {
            reason: "degenerate zero-gain problem: Q(0) is unbounded".into(),
        }
    } else {
        match boundary_via_iteration(
            &problem.sigma0,
            &problem.sigma_t,
            schedules.phi_t0(),
            schedules.m_total(),
            problem.sigma0.sigma(),
            ITERATION_MAX,
            ITERATION_TOL,
        ) {
            Ok(out) => {
                let gap = minus
                    .q0
                    .as_ref()
                    .map(|q0| (&out.q0 - q0).norm())
                    .unwrap_or(f64::NAN);
                IterationSummary::Done {
                    iterations: out.iterations,
                    converged: out.converged,
                    gap_to_closed_form: gap,
                }
            }
            Err(covbridge_core::Error::IterationBreakdown { iteration, reason }) => {
                IterationSummary::Skipped {
                    reason: format!("breakdown at iterate {iteration}: {reason}"),
                }
            }
            Err(e) => return Err(map_core(e)),
        }
    };

    Ok(SolveOutcome {
        grid,
        schedules,
        minus,
        plus,
        iteration,
    })
}

#[derive(Serialize)]
struct ControllabilityJson {
    controllable: bool,
    lambda_min: f64,
    lambda_max: f64,
    rel_tol: f64,
}

#[derive(Serialize)]
struct CrossingJson {
    time: f64,
    matrix: &'static str,
    lambda_before: f64,
    lambda_after: f64,
}

#[derive(Serialize)]
struct EscapeJson {
    node: usize,
    time: f64,
}

#[derive(Serialize)]
struct IterationJson {
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    converged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gap_to_closed_form: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
}

#[derive(Serialize)]
struct PlusBranchJson {
    singular_times: Vec<CrossingJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    escape: Option<EscapeJson>,
}

#[derive(Serialize)]
struct SolveReportJson {
    branch: &'static str,
    degenerate_zero_gain: bool,
    controllability: ControllabilityJson,
    boundary_residual_0: f64,
    boundary_residual_t: f64,
    sigma_terminal_residual: f64,
    alternate_form_rel_gap: f64,
    max_gain_norm: f64,
    iteration: IterationJson,
    plus_branch: PlusBranchJson,
}

fn crossing_rows(solution: &BridgeSolution) -> Vec<CrossingJson> {
    solution
        .singular_times
        .iter()
        .map(|c| CrossingJson {
            time: c.time,
            matrix: c.matrix.label(),
            lambda_before: c.lambda_before,
            lambda_after: c.lambda_after,
        })
        .collect()
}

fn iteration_json(summary: &IterationSummary) -> IterationJson {
    match summary {
        IterationSummary::Done {
            iterations,
            converged,
            gap_to_closed_form,
        } => IterationJson {
            status: "done",
            iterations: Some(*iterations),
            converged: Some(*converged),
            gap_to_closed_form: Some(*gap_to_closed_form),
            reason: None,
        },
        IterationSummary::Skipped { reason } => IterationJson {
            status: "skipped",
            iterations: None,
            converged: None,
            gap_to_closed_form: None,
            reason: Some(reason.clone()),
        },
    }
}

/// Solve and emit `gain.csv`, `covariance.csv`, `schedules.json`,
/// `report.json`.
pub fn cmd_solve(problem: &Problem, out_dir: &Path) -> Result<SolveOutcome, CliError> {
    let outcome = run_solve(problem)?;
    std::fs::create_dir_all(out_dir)?;

    if problem.output.csv {
        let gains = outcome.minus.gains().map_err(map_core)?;
        output::write_gain_csv(&out_dir.join("gain.csv"), &outcome.minus.times, gains)?;
        output::write_covariance_csv(
            &out_dir.join("covariance.csv"),
            &outcome.minus.times,
            outcome.minus.sigma_sched.as_ref().expect("minus branch"),
        )?;
    }
    if problem.output.json {
        output::write_schedules_json(&out_dir.join("schedules.json"), &outcome.minus)?;
        let sigma_terminal_residual = outcome
            .minus
            .sigma_sched
            .as_ref()
            .map(|s| (s.last().unwrap() - problem.sigma_t.sigma()).norm())
            .unwrap_or(f64::NAN);
        let report = SolveReportJson {
            branch: outcome.minus.branch.label(),
            degenerate_zero_gain: outcome.minus.degenerate,
            controllability: ControllabilityJson {
                controllable: outcome.schedules.controllability.controllable,
                lambda_min: outcome.schedules.controllability.lambda_min,
                lambda_max: outcome.schedules.controllability.lambda_max,
                rel_tol: outcome.schedules.controllability.rel_tol,
            },
            boundary_residual_0: outcome.minus.residual_0,
            boundary_residual_t: outcome.minus.residual_t,
            sigma_terminal_residual,
            alternate_form_rel_gap: outcome.minus.alternate_form_rel_gap,
            max_gain_norm: outcome.minus.max_gain_norm().unwrap_or(f64::NAN),
            iteration: iteration_json(&outcome.iteration),
            plus_branch: PlusBranchJson {
                singular_times: crossing_rows(&outcome.plus),
                escape: outcome.plus.escape.as_ref().map(|e| EscapeJson {
                    node: e.node,
                    time: e.time,
                }),
            },
        };
        output::write_json(&out_dir.join("report.json"), &report)?;
    }
    Ok(outcome)
}

#[derive(Serialize)]
struct EmpiricalJson {
    paths: usize,
    seed: u64,
    sim_steps: usize,
    scheme: String,
    terminal_time: f64,
    terminal_covariance: Vec<Vec<f64>>,
    target_covariance: Vec<Vec<f64>>,
    terminal_error_frobenius: f64,
    empirical_energy: f64,
    schedule_energy: f64,
}

/// Solve, simulate the closed loop and emit `paths.csv`, `tube.csv`,
/// `empirical.json` (plus the solve artifacts).
pub fn cmd_simulate(problem: &Problem, out_dir: &Path) -> Result<(), CliError> {
    let sim = problem
        .simulate
        .as_ref()
        .ok_or_else(|| CliError::Config("config has no simulate block".into()))?;
    let outcome = cmd_solve(problem, out_dir)?;

    let ens = simulate_bridge(
        &problem.system,
        &outcome.grid,
        &outcome.minus,
        &problem.sigma0,
        &sim.cfg,
    )
    .map_err(map_core)?;

    if problem.output.csv {
        output::write_paths_csv(&out_dir.join("paths.csv"), &ens, sim.display_paths)?;
        output::write_tube_csv(
            &out_dir.join("tube.csv"),
            &outcome.minus.times,
            outcome.minus.sigma_sched.as_ref().expect("minus branch"),
            problem.output.tube_level,
            201,
        )?;
    }
    if problem.output.json {
        let terminal = empirical_covariance(&ens, problem.horizon).map_err(map_core)?;
        let energy = empirical_energy(&ens).map_err(map_core)?;
        let report = EmpiricalJson {
            paths: ens.paths,
            seed: ens.seed,
            sim_steps: sim.cfg.sim_steps,
            scheme: ens.scheme.to_string(),
            terminal_time: problem.horizon,
            terminal_covariance: output::matrix_rows(&terminal),
            target_covariance: output::matrix_rows(problem.sigma_t.sigma()),
            terminal_error_frobenius: (&terminal - problem.sigma_t.sigma()).norm(),
            empirical_energy: energy,
            schedule_energy: outcome.minus.expected_energy().unwrap_or(f64::NAN),
        };
        output::write_json(&out_dir.join("empirical.json"), &report)?;
    }
    Ok(())
}

/// Test hooks for the verification command.
#[derive(Debug, Clone)]
pub struct VerifyHooks {
    /// Scale applied to the Riccati schedule before the covariance and gain
    /// are rebuilt; anything other than 1.0 must break boundary attainment.
    pub gain_scale: f64,
}

impl Default for VerifyHooks {
    fn default() -> Self {
        Self { gain_scale: 1.0 }
    }
}

#[derive(Serialize, Debug, Clone)]
pub struct CheckJson {
    pub name: &'static str,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Serialize)]
struct VerifyReportJson {
    passed: bool,
    degenerate_zero_gain: bool,
    q0: Option<Vec<Vec<f64>>>,
    checks: Vec<CheckJson>,
}

pub struct VerifySummary {
    pub passed: bool,
    pub checks: Vec<CheckJson>,
}

impl VerifySummary {
    pub fn check(&self, name: &str) -> Option<&CheckJson> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn check(name: &'static str, value: f64, threshold: f64) -> CheckJson {
    CheckJson {
        name,
        passed: value.is_finite() && value <= threshold,
        value,
        threshold,
        note: None,
    }
}

fn check_at_least(name: &'static str, value: f64, floor: f64) -> CheckJson {
    CheckJson {
        name,
        passed: value.is_finite() && value >= floor,
        value,
        threshold: floor,
        note: None,
    }
}

fn skipped(name: &'static str, reason: String) -> CheckJson {
    CheckJson {
        name,
        passed: true,
        value: f64::NAN,
        threshold: f64::NAN,
        note: Some(format!("skipped: {reason}")),
    }
}

/// Run the full invariant suite and write `report.json`; exit code 1 is the
/// caller's duty when the summary fails.
pub fn cmd_verify(
    problem: &Problem,
    out_dir: &Path,
    hooks: &VerifyHooks,
) -> Result<VerifySummary, CliError> {
    let outcome = run_solve(problem)?;
    let grid = &outcome.grid;
    let schedules = &outcome.schedules;
    let mut minus = outcome.minus;

    if hooks.gain_scale != 1.0 {
        let pi = minus
            .pi_sched
            .as_ref()
            .expect("minus branch")
            .iter()
            .map(|m| m * hooks.gain_scale)
            .collect::<Vec<_>>();
        let sigma = compute_sigma_schedule(&problem.system, grid, &problem.sigma0, &pi)
            .map_err(map_core)?;
        let gains = gain_schedule(&problem.system, grid, &pi);
        minus.pi_sched = Some(pi);
        minus.sigma_sched = Some(sigma);
        minus.gain_sched = Some(gains);
    }

    let mut checks: Vec<CheckJson> = Vec::new();

    let ctrl = &schedules.controllability;
    checks.push(check_at_least(
        "controllability-margin",
        ctrl.lambda_min,
        ctrl.rel_tol * ctrl.lambda_max.max(1.0),
    ));

    let bridge_report = verify_bridge(
        &minus,
        &problem.sigma0,
        &problem.sigma_t,
        thresholds::BOUNDARY,
    );
    checks.push(check(
        "boundary-residual-0",
        bridge_report.residual_0,
        thresholds::BOUNDARY,
    ));
    checks.push(check(
        "boundary-residual-T",
        bridge_report.residual_t,
        thresholds::BOUNDARY,
    ));
    checks.push(check(
        "sigma-terminal-residual",
        bridge_report.sigma_terminal_residual.unwrap_or(f64::NAN),
        thresholds::BOUNDARY,
    ));
    checks.push(check_at_least(
        "sigma-positive-definite",
        bridge_report.sigma_lambda_min.unwrap_or(f64::NAN),
        f64::MIN_POSITIVE,
    ));
    checks.push(check(
        "schedule-symmetry",
        bridge_report.max_asymmetry,
        thresholds::BOUNDARY,
    ));
    checks.push(check(
        "minus-branch-nonsingular",
        minus.singular_times.len() as f64,
        0.0,
    ));
    checks.push(check_at_least(
        "plus-branch-singular",
        outcome.plus.singular_times.len() as f64,
        1.0,
    ));

    checks.push(match &outcome.iteration {
        IterationSummary::Done {
            gap_to_closed_form, ..
        } => check(
            "iteration-agreement",
            *gap_to_closed_form,
            thresholds::ITERATION_AGREEMENT,
        ),
        IterationSummary::Skipped { reason } => skipped("iteration-agreement", reason.clone()),
    });
    checks.push(check(
        "alternate-form-agreement",
        minus.alternate_form_rel_gap,
        thresholds::ALTERNATE_FORM,
    ));

    // Cross-representation consistency: Pi Q = I and (Sigma^{-1} - Pi) P = I.
    let pi_sched = minus.pi_sched.as_ref().expect("minus branch");
    let sigma_sched = minus.sigma_sched.as_ref().expect("minus branch");
    let n = problem.system.state_dim();
    let eye = DMatrix::<f64>::identity(n, n);
    match &minus.q_sched {
        Some(qs) => {
            let max_gap = pi_sched
                .iter()
                .zip(qs)
                .map(|(pi, q)| (pi * q - &eye).norm())
                .fold(0.0, f64::max);
            checks.push(check(
                "riccati-lyapunov-consistency",
                max_gap,
                thresholds::RICCATI_CONSISTENCY,
            ));
        }
        None => checks.push(skipped(
            "riccati-lyapunov-consistency",
            "degenerate zero-gain problem: no finite Q schedule".into(),
        )),
    }
    let mut split_gap = 0.0_f64;
    for k in 0..pi_sched.len() {
        let sigma_inv = linalg::sym_inverse(&sigma_sched[k]).map_err(map_core)?;
        split_gap = split_gap.max(((sigma_inv - &pi_sched[k]) * &minus.p_sched[k] - &eye).norm());
    }
    checks.push(check(
        "inverse-covariance-split",
        split_gap,
        thresholds::SPLIT_CONSISTENCY,
    ));

    // Entropy-side identities.
    let clt = closed_loop_transition(&problem.system, grid, pi_sched).map_err(map_core)?;
    let y_star = clt.total() * problem.sigma0.sigma();
    match foc_residual(
        &y_star,
        &problem.sigma0,
        &problem.sigma_t,
        schedules.phi_t0(),
        schedules.m_total(),
    ) {
        Ok(foc) => checks.push(check("foc-residual", foc.residual, thresholds::FOC)),
        Err(covbridge_core::Error::InfeasibleCoupling(msg)) => checks.push(CheckJson {
            name: "foc-residual",
            passed: false,
            value: f64::NAN,
            threshold: thresholds::FOC,
            note: Some(format!("infeasible coupling: {msg}")),
        }),
        Err(e) => return Err(map_core(e)),
    }

    let reciprocal = reciprocal_identity_residuals(
        &problem.system,
        grid,
        schedules,
        &minus,
        &clt,
        &problem.sigma0,
    )
    .map_err(map_core)?;
    checks.push(check(
        "f-identity-residual",
        reciprocal.f_identity,
        thresholds::RECIPROCAL,
    ));
    checks.push(check(
        "pinned-drift-residual",
        reciprocal.drift,
        thresholds::RECIPROCAL,
    ));
    checks.push(check(
        "pinned-offset-residual",
        reciprocal.offset,
        thresholds::RECIPROCAL,
    ));

    let optimality = joint_optimality_check(
        clt.total(),
        &problem.sigma0,
        &problem.sigma_t,
        schedules.phi_t0(),
        schedules.m_total(),
        thresholds::OPTIMALITY_TRIALS,
        0xC0FFEE,
    )
    .map_err(map_core)?;
    checks.push(check_at_least(
        "joint-optimality",
        optimality.min_excess,
        -thresholds::OPTIMALITY_SLACK,
    ));

    if minus.degenerate {
        checks.push(check(
            "degenerate-zero-gain",
            minus.max_gain_norm().unwrap_or(f64::NAN),
            thresholds::ZERO_GAIN,
        ));
    }

    let passed = checks.iter().all(|c| c.passed);
    std::fs::create_dir_all(out_dir)?;
    let report = VerifyReportJson {
        passed,
        degenerate_zero_gain: minus.degenerate,
        q0: minus.q0.as_ref().map(output::matrix_rows),
        checks: checks.clone(),
    };
    output::write_json(&out_dir.join("report.json"), &report)?;

    Ok(VerifySummary { passed, checks })
}

pub enum ScenarioAction {
    Listed,
    Written(PathBuf),
}

/// `scenario list` prints the catalog; `scenario <name>` writes a template
/// config `<name>.json` into `out_dir`.
pub fn cmd_scenario(name: &str, out_dir: &Path) -> Result<ScenarioAction, CliError> {
    if name == "list" {
        for n in scenario::SCENARIO_NAMES {
            println!("{n:24} {}", scenario::describe(n).unwrap_or(""));
        }
        return Ok(ScenarioAction::Listed);
    }
    let template =
        scenario::template(name).ok_or_else(|| CliError::UnknownScenario(name.to_string()))?;
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join(format!("{name}.json"));
    output::write_json(&path, &template)?;
    println!("wrote {}", path.display());
    Ok(ScenarioAction::Written(path))
}
