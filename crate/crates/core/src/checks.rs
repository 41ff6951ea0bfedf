//! The invariant suite behind `dqm check`: every identity the library
//! promises, evaluated on a concrete state with its measured deviation and
//! tolerance.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::evolution::{classical_dt_bound, continuity_residual, evolve_classical, evolve_linear, Trajectory};
use crate::functionals::{
    action_density, classical_kinetic, deformed_kinetic_expectation, kinetic_decomposition, modified_hj_residual,
    quantum_potential_mean, weizsacker, xi_of_lambda,
};
use crate::grid::integrate_product;
use crate::mask;
use crate::operators::{
    apply_deformed_momentum, apply_kinetic, apply_momentum, axis_expectations, classical_momentum_field,
    factorization_residual, witten_deformed_gradient, DeformedMomentumSpec,
};
use crate::random::{random_grid_1d, random_grid_2d, random_state};
use crate::scenario::{build_scenario, ScenarioConfig};
use crate::wavefield::{expectation, from_polar, to_polar, WaveField};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckResult {
    pub fn new(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        CheckResult {
            name: name.into(),
            measured,
            tolerance,
            passed: measured.is_finite() && measured <= tolerance,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub passed: bool,
    pub total: usize,
    pub failed: usize,
    pub checks: Vec<CheckResult>,
}

impl CheckReport {
    pub fn from_checks(checks: Vec<CheckResult>) -> Self {
        let failed = checks.iter().filter(|c| !c.passed).count();
        CheckReport {
            passed: failed == 0,
            total: checks.len(),
            failed,
            checks,
        }
    }
}

pub const LAMBDA_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// `max_a |⟨P_a⟩ - ⟨P_cl,a⟩|`.
pub fn momentum_expectation_gap(w: &WaveField) -> Result<f64> {
    let p = axis_expectations(&apply_momentum(w.psi(), w.hbar()), w)?;
    let pcl = classical_momentum_field(w)?;
    let rho = w.density();
    Ok(p.iter()
        .zip(&pcl)
        .map(|(p, f)| (p.re - integrate_product(f.as_slice(), rho.as_slice(), w.grid())).abs())
        .fold(0.0, f64::max))
}

/// Largest relative deviation of `-iħ ρ^{λ/2} ∇(ρ^{-λ/2} ψ)` from `P_λ ψ`
/// over unmasked points, relative to `max |P_λ ψ|`.
pub fn witten_deviation(w: &WaveField, lambda: f64) -> Result<f64> {
    let spec = DeformedMomentumSpec::new(w, lambda, false)?;
    let direct = apply_deformed_momentum(&spec, w.psi(), w.hbar())?;
    let witten = witten_deformed_gradient(w.psi(), &w.density(), lambda)?;
    let node_mask = spec.node_mask();
    let scale = -Complex64::i() * w.hbar();
    let mut worst: f64 = 0.0;
    for (d, wg) in direct.iter().zip(&witten) {
        let top = d.max_abs();
        for (i, (a, b)) in d.as_slice().iter().zip(wg.as_slice()).enumerate() {
            if !node_mask[i] {
                worst = worst.max((a - scale * b).norm() / top);
            }
        }
    }
    Ok(worst)
}

/// `(max_λ |⟨K_λ⟩ - T_cl - (1-λ)² W|, |⟨K_0⟩ - ⟨K⟩|, |⟨K_1⟩ - ⟨K⟩ + ⟨Q⟩|, max_λ |Im ⟨K_λ⟩|)`.
pub fn lambda_interpolation_gaps(w: &WaveField) -> Result<(f64, f64, f64, f64)> {
    let t_cl = classical_kinetic(w)?;
    let wz = weizsacker(&w.density(), w.grid().masses(), w.hbar())?;
    let mut model: f64 = 0.0;
    let mut imag: f64 = 0.0;
    let mut ends = [0.0; 2];
    for &l in &LAMBDA_GRID {
        let k = deformed_kinetic_expectation(w, l)?;
        model = model.max((k.re - t_cl - (1.0 - l).powi(2) * wz).abs());
        imag = imag.max(k.im.abs());
        if l == 0.0 {
            ends[0] = k.re;
        } else if l == 1.0 {
            ends[1] = k.re;
        }
    }
    let k = expectation(&apply_kinetic(w.psi(), w.hbar()), w)?.re;
    let q = quantum_potential_mean(w)?;
    Ok((model, (ends[0] - k).abs(), (ends[1] - (k - q)).abs(), imag))
}

/// Off-mask relative error of `from_polar(to_polar(ψ))` against `ψ` after
/// removing the best global phase.
pub fn polar_round_trip_error(w: &WaveField) -> Result<f64> {
    let p = to_polar(w)?;
    let back = from_polar(&p, w.params())?;
    let (a, b) = (w.psi().as_slice(), back.psi().as_slice());
    let overlap: Complex64 = a.iter().zip(b).map(|(x, y)| y.conj() * x).sum();
    let phase = if overlap.norm() > 0.0 {
        overlap / overlap.norm()
    } else {
        Complex64::new(1.0, 0.0)
    };
    let (mut num, mut den) = (0.0, 0.0);
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        den += x.norm_sqr();
        if !p.node_mask()[i] {
            num += (x - phase * y).norm_sqr();
        }
    }
    Ok((num / den).sqrt())
}

/// Static identities on one state, names prefixed with `label`.
pub fn state_checks(w: &WaveField, label: &str) -> Result<Vec<CheckResult>> {
    let name = |n: &str| format!("{label}/{n}");
    let mut out = vec![
        CheckResult::new(name("norm"), (w.norm_sqr() - 1.0).abs(), 1e-10),
        CheckResult::new(name("polar_round_trip"), polar_round_trip_error(w)?, 1e-8),
        CheckResult::new(name("momentum_expectation"), momentum_expectation_gap(w)?, 1e-10),
        CheckResult::new(name("factorization"), factorization_residual(w)?, 1e-7),
    ];
    let wz = weizsacker(&w.density(), w.grid().masses(), w.hbar())?;
    out.push(CheckResult::new(
        name("q_mean_equals_weizsacker"),
        (quantum_potential_mean(w)? - wz).abs(),
        1e-8,
    ));
    let d = kinetic_decomposition(w)?;
    out.push(CheckResult::new(
        name("kinetic_decomposition"),
        (d.k_mean - d.kprime_mean - d.weizsacker_term).abs(),
        1e-8,
    ));
    let (model, k0, k1, imag) = lambda_interpolation_gaps(w)?;
    out.push(CheckResult::new(name("lambda_interpolation"), model, 1e-9));
    out.push(CheckResult::new(name("lambda_endpoint_linear"), k0, 1e-8));
    out.push(CheckResult::new(name("lambda_endpoint_classical"), k1, 1e-8));
    out.push(CheckResult::new(name("deformed_kinetic_real"), imag, 1e-9));
    let witten = [0.0, 0.5, 1.0]
        .iter()
        .map(|&l| witten_deviation(w, l))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    out.push(CheckResult::new(name("witten_consistency"), witten, 1e-8));
    Ok(out)
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Identities along short trajectories started from `w`.
pub fn dynamics_checks(w: &WaveField, dt: f64, label: &str) -> Result<Vec<CheckResult>> {
    let name = |n: &str| format!("{label}/{n}");
    let steps = 20;
    let mut out = Vec::new();
    let lin = evolve_linear(w, dt, steps, 1)?;
    let first = &lin.observables()[0];
    let last = lin.observables().last().expect("trajectory has stamps");
    out.push(CheckResult::new(
        name("linear_norm_drift"),
        (last.norm - first.norm).abs(),
        1e-10,
    ));
    out.push(CheckResult::new(
        name("linear_energy_drift"),
        relative(last.energy, first.energy),
        1e-6,
    ));
    out.push(CheckResult::new(
        name("linear_continuity"),
        continuity_residual(&lin, steps / 2)?,
        1e-4,
    ));
    let two_path = [0.0, 0.5, 1.0]
        .iter()
        .map(|&l| action_density(&lin, l).map(|a| relative(a.total, a.complex_total)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    out.push(CheckResult::new(name("action_two_path"), two_path, 1e-8));
    out.push(CheckResult::new(
        name("action_fisher_ratio"),
        fisher_ratio_spread(&lin)?,
        1e-9,
    ));
    let xi = xi_of_lambda(0.0, w.hbar(), w.grid().masses()[0]);
    out.push(CheckResult::new(
        name("hj_residual_linear"),
        modified_hj_residual(&lin, steps / 2, xi)?,
        1e-3,
    ));

    let node_mask = mask::node_mask(&w.density());
    if mask::support_fraction(w.grid(), &node_mask) <= crate::evolution::CLASSICAL_MASK_LIMIT {
        let dt_cl = dt.min(classical_dt_bound(w.grid(), w.hbar()));
        let cl = evolve_classical(w, dt_cl, steps, 1)?;
        let (a, b) = (
            &cl.observables()[0],
            cl.observables().last().expect("trajectory has stamps"),
        );
        out.push(CheckResult::new(
            name("classical_norm_drift"),
            (b.norm - a.norm).abs(),
            1e-9,
        ));
        out.push(CheckResult::new(
            name("classical_continuity"),
            continuity_residual(&cl, steps / 2)?,
            1e-4,
        ));
        out.push(CheckResult::new(
            name("hj_residual_classical"),
            modified_hj_residual(&cl, steps / 2, 0.0)?,
            1e-3,
        ));
    }
    Ok(out)
}

/// Spread of `fisher_part / ξ` across `λ ∈ {0, ¼, ½, ¾}`, relative to its mean.
pub fn fisher_ratio_spread(traj: &Trajectory) -> Result<f64> {
    let ratios = LAMBDA_GRID[..4]
        .iter()
        .map(|&l| action_density(traj, l).map(|a| a.fisher_part / a.xi))
        .collect::<Result<Vec<_>>>()?;
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    if mean == 0.0 {
        return Ok(0.0);
    }
    Ok(ratios.iter().map(|r| (r / mean - 1.0).abs()).fold(0.0, f64::max))
}

/// Whole suite for a configuration: the scenario state (static and dynamic
/// identities) plus `cfg.check.random_states` seeded random states, split
/// between the 1D and the 2D random lattices.
pub fn run_suite(cfg: &ScenarioConfig) -> Result<CheckReport> {
    let w = build_scenario(cfg)?;
    let mut checks = state_checks(&w, "scenario")?;
    checks.extend(dynamics_checks(&w, cfg.integrator.dt, "scenario")?);
    for j in 0..cfg.check.random_states {
        let seed = cfg.integrator.seed.wrapping_add(j as u64);
        let grid = if j % 2 == 0 { random_grid_1d() } else { random_grid_2d() };
        let r = random_state(grid, seed)?;
        checks.extend(state_checks(&r, &format!("random_{}d_seed_{seed}", r.grid().rank()))?);
    }
    Ok(CheckReport::from_checks(checks))
}
