//! Built-in scenario catalog and ready-to-run template configs.

use covbridge_core::system::LtvSystem;
use nalgebra::DMatrix;

use crate::config::{
    HorizonConfig, MarginalsConfig, OutputConfig, ProblemConfig, SimulateConfig, SystemConfig,
    DEFAULT_DISPLAY_PATHS, DEFAULT_PATHS, DEFAULT_SEED, DEFAULT_SIM_STEPS, DEFAULT_STEPS,
    DEFAULT_TUBE_LEVEL,
};

pub const SCENARIO_NAMES: [&str; 5] = [
    "inertial",
    "inertial-pos-squeeze",
    "inertial-vel-squeeze",
    "rlc",
    "brownian-scalar",
];

/// One-line description shown by `scenario list`.
pub fn describe(name: &str) -> Option<&'static str> {
    match name {
        "inertial" => Some("particle under white-noise acceleration, I -> I/4 over [0,1]"),
        "inertial-pos-squeeze" => {
            Some("inertial particle, terminal spread squeezed in position: I -> diag(0.05, 1)")
        }
        "inertial-vel-squeeze" => {
            Some("inertial particle, terminal spread squeezed in velocity: I -> diag(1, 0.05)")
        }
        "rlc" => Some("RLC circuit with thermal noise, I/2 -> I/16 over [0,1] (R=L=C=1)"),
        "brownian-scalar" => Some("scalar Brownian motion held at unit variance over [0,1]"),
        _ => None,
    }
}

/// System matrices backing a scenario name.
pub fn system_for(name: &str) -> Option<LtvSystem> {
    match name {
        "inertial" | "inertial-pos-squeeze" | "inertial-vel-squeeze" => Some(LtvSystem::inertial()),
        "rlc" => Some(LtvSystem::rlc(1.0, 1.0, 1.0).expect("unit parameters are valid")),
        "brownian-scalar" => {
            Some(LtvSystem::constant(DMatrix::zeros(1, 1), DMatrix::identity(1, 1)).unwrap())
        }
        _ => None,
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn marginals_for(name: &str) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let eye2 = DMatrix::<f64>::identity(2, 2);
    match name {
        "inertial" => Some((eye2.clone(), &eye2 * 0.25)),
        "inertial-pos-squeeze" => Some((
            eye2.clone(),
            DMatrix::from_row_slice(2, 2, &[0.05, 0.0, 0.0, 1.0]),
        )),
        "inertial-vel-squeeze" => Some((
            eye2.clone(),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.05]),
        )),
        // The uncontrolled circuit idles at covariance I/2; the controller
        // cools it to I/16.
        "rlc" => Some((&eye2 * 0.5, &eye2 * (1.0 / 16.0))),
        "brownian-scalar" => Some((DMatrix::identity(1, 1), DMatrix::identity(1, 1))),
        _ => None,
    }
}

/// Ready-to-run template config for a built-in scenario.
pub fn template(name: &str) -> Option<ProblemConfig> {
    let (sigma0, sigma_t) = marginals_for(name)?;
    Some(ProblemConfig {
        system: SystemConfig {
            kind: "scenario".into(),
            a: None,
            b: None,
            scenario: Some(name.to_string()),
            table: None,
        },
        horizon: HorizonConfig {
            t: 1.0,
            steps: DEFAULT_STEPS,
        },
        marginals: MarginalsConfig {
            sigma0: rows(&sigma0),
            sigma_t: rows(&sigma_t),
        },
        simulate: Some(SimulateConfig {
            paths: DEFAULT_PATHS,
            seed: DEFAULT_SEED,
            sim_steps: DEFAULT_SIM_STEPS,
            record_stride: Some(20),
            display_paths: DEFAULT_DISPLAY_PATHS,
        }),
        output: Some(OutputConfig {
            dir: None,
            formats: Some(vec!["csv".into(), "json".into()]),
            tube_level: DEFAULT_TUBE_LEVEL,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_name_has_template_and_description() {
        for name in SCENARIO_NAMES {
            assert!(template(name).is_some(), "{name}");
            assert!(describe(name).is_some(), "{name}");
            assert!(system_for(name).is_some(), "{name}");
        }
        assert!(template("no-such").is_none());
    }

    #[test]
    fn squeeze_targets_match_catalog() {
        let pos = template("inertial-pos-squeeze").unwrap();
        assert_eq!(pos.marginals.sigma_t[0][0], 0.05);
        assert_eq!(pos.marginals.sigma_t[1][1], 1.0);
        let vel = template("inertial-vel-squeeze").unwrap();
        assert_eq!(vel.marginals.sigma_t[0][0], 1.0);
        assert_eq!(vel.marginals.sigma_t[1][1], 0.05);
        let rlc = template("rlc").unwrap();
        assert_eq!(rlc.marginals.sigma0[0][0], 0.5);
        assert_eq!(rlc.marginals.sigma_t[0][0], 1.0 / 16.0);
    }
}
