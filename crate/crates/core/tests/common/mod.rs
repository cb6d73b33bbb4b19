//! Shared fixtures for the integration suites: the built-in steering
//! scenarios and a few independent numerical oracles.

#![allow(dead_code)]

use covbridge_core::bridge::GaussianMarginal;
use covbridge_core::system::LtvSystem;
use nalgebra::DMatrix;
use rand::Rng;

pub struct Scenario {
    pub name: &'static str,
    pub system: LtvSystem,
    pub horizon: f64,
    pub sigma0: GaussianMarginal,
    pub sigma_t: GaussianMarginal,
}

pub fn diag2(a: f64, b: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[a, 0.0, 0.0, b])
}

pub fn marginal(m: DMatrix<f64>) -> GaussianMarginal {
    GaussianMarginal::new(m).unwrap()
}

pub fn builtin_scenarios() -> Vec<Scenario> {
    let eye2 = DMatrix::<f64>::identity(2, 2);
    vec![
        Scenario {
            name: "inertial",
            system: LtvSystem::inertial(),
            horizon: 1.0,
            sigma0: marginal(eye2.clone()),
            sigma_t: marginal(&eye2 * 0.25),
        },
        Scenario {
            name: "inertial-pos-squeeze",
            system: LtvSystem::inertial(),
            horizon: 1.0,
            sigma0: marginal(eye2.clone()),
            sigma_t: marginal(diag2(0.05, 1.0)),
        },
        Scenario {
            name: "inertial-vel-squeeze",
            system: LtvSystem::inertial(),
            horizon: 1.0,
            sigma0: marginal(eye2.clone()),
            sigma_t: marginal(diag2(1.0, 0.05)),
        },
        Scenario {
            name: "rlc",
            system: LtvSystem::rlc(1.0, 1.0, 1.0).unwrap(),
            horizon: 1.0,
            sigma0: marginal(&eye2 * 0.5),
            sigma_t: marginal(&eye2 * (1.0 / 16.0)),
        },
        Scenario {
            name: "brownian-scalar",
            system: LtvSystem::constant(DMatrix::zeros(1, 1), DMatrix::identity(1, 1)).unwrap(),
            horizon: 1.0,
            sigma0: marginal(DMatrix::identity(1, 1)),
            sigma_t: marginal(DMatrix::identity(1, 1)),
        },
    ]
}

/// Random SPD matrix with eigenvalues in `[lo, hi]`, built from a random
/// rotation so off-diagonal structure is exercised.
pub fn random_spd_2x2<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> DMatrix<f64> {
    let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let (s, c) = theta.sin_cos();
    let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
    let l1: f64 = rng.random_range(lo..hi);
    let l2: f64 = rng.random_range(lo..hi);
    let d = DMatrix::from_row_slice(2, 2, &[l1, 0.0, 0.0, l2]);
    let m = &rot * d * rot.transpose();
    // exact symmetry for the marginal constructor
    0.5 * (&m + m.transpose())
}

/// Matrix exponential by scaling-and-squaring over a plain Taylor core.
/// Deliberately independent of the crate's integrators.
pub fn expm_oracle(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let scalings = a.norm().log2().ceil().max(0.0) as i32 + 2;
    let scaled = a / 2f64.powi(scalings);
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..40 {
        term = &term * &scaled / k as f64;
        sum += &term;
        if term.norm() < 1e-18 {
            break;
        }
    }
    for _ in 0..scalings {
        sum = &sum * &sum;
    }
    sum
}
