//! Fisher information, the Weizsäcker term, the deformed action and the
//! modified Hamilton-Jacobi equation.
//!
//! `fisher_information` is an instantaneous (per time slice) quantity; the
//! time integral appears only inside [`action_density`]. On a grid with
//! several axes the Weizsäcker weight of axis `a` is `ħ²/(8 m_a)`, the choice
//! for which `⟨Q⟩ = W` holds exactly. The coefficient `ξ` used here is not
//! the `λ` of the constrained-variation literature, where it appears divided
//! by the mass.

use std::sync::Arc;

use ndarray::ArrayD;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{DqmError, Result};
use crate::evolution::Trajectory;
use crate::grid::{Grid, RealField};
use crate::mask;
use crate::operators::{self, OPERATOR_MASK_LIMIT};
use crate::spectral;
use crate::wavefield::{expectation, WaveField};

fn check_mask(grid: &Grid, node_mask: &[bool]) -> Result<()> {
    let fraction = mask::support_fraction(grid, node_mask);
    if fraction > OPERATOR_MASK_LIMIT {
        return Err(DqmError::ExcessiveMask {
            fraction,
            limit: OPERATOR_MASK_LIMIT,
        });
    }
    Ok(())
}

fn real_from(grid: &Arc<Grid>, v: Vec<f64>) -> RealField {
    RealField::from_parts(
        grid.clone(),
        ArrayD::from_shape_vec(grid.shape(), v).expect("grid shape"),
    )
}

/// `∫ (∂_a ρ)² / ρ` per axis over unmasked points.
fn fisher_per_axis(rho: &RealField, node_mask: &[bool]) -> Vec<f64> {
    let dv = rho.grid().cell_volume();
    spectral::gradient_real(rho)
        .iter()
        .map(|d| {
            d.as_slice()
                .iter()
                .zip(rho.as_slice())
                .zip(node_mask)
                .filter(|(_, &m)| !m)
                .map(|((d, r), _)| d * d / r)
                .sum::<f64>()
                * dv
        })
        .collect()
}

/// `I_F = ∫ |∇ρ|² / ρ` over unmasked points.
pub fn fisher_information(rho: &RealField) -> Result<f64> {
    if let Some(index) = rho.as_slice().iter().position(|&r| r < 0.0) {
        return Err(DqmError::NegativeDensity { index });
    }
    let node_mask = mask::node_mask(rho);
    check_mask(rho.grid(), &node_mask)?;
    Ok(fisher_per_axis(rho, &node_mask).iter().sum())
}

/// `W = Σ_a (ħ²/8m_a) ∫ (∂_a ρ)² / ρ`.
pub fn weizsacker(rho: &RealField, masses: &[f64], hbar: f64) -> Result<f64> {
    if masses.len() != rho.grid().rank() {
        return Err(DqmError::InvalidParameter(format!(
            "{} masses for a rank-{} grid",
            masses.len(),
            rho.grid().rank()
        )));
    }
    if let Some(index) = rho.as_slice().iter().position(|&r| r < 0.0) {
        return Err(DqmError::NegativeDensity { index });
    }
    let node_mask = mask::node_mask(rho);
    check_mask(rho.grid(), &node_mask)?;
    Ok(fisher_per_axis(rho, &node_mask)
        .iter()
        .zip(masses)
        .map(|(f, m)| hbar * hbar / (8.0 * m) * f)
        .sum())
}

/// `ξ(λ) = ħ² (1 - λ)² / (8 m)`.
pub fn xi_of_lambda(lambda: f64, hbar: f64, mass: f64) -> f64 {
    hbar * hbar * (1.0 - lambda).powi(2) / (8.0 * mass)
}

/// Time-integrated pieces of the deformed action over the interior stamps
/// of a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionBreakdown {
    pub lambda: f64,
    /// Polar-form action `time_derivative_part - kinetic_part - potential_part - fisher_part`.
    pub total: f64,
    /// `∫∫ ρ Σ_a (∂_a S)² / 2m_a`.
    pub kinetic_part: f64,
    /// `∫∫ V ρ`.
    pub potential_part: f64,
    /// `∫∫ (iħ/2)(ψ* ψ_t - ψ ψ*_t) = -∫∫ ρ ∂S/∂t`.
    pub time_derivative_part: f64,
    /// `Σ_a ξ_a ∫∫ (∂_a ρ)² / ρ`.
    pub fisher_part: f64,
    /// `ξ(λ)` for the mass of the first axis.
    pub xi: f64,
    /// The same action evaluated from the wavefunction directly,
    /// `∫∫ [(iħ/2)(ψ* ψ_t - c.c.) - Σ_a |P_λ,a ψ|² / 2m_a - V|ψ|²]`.
    pub complex_total: f64,
}

struct StampTerms {
    time: f64,
    kinetic: f64,
    fisher: f64,
    potential: f64,
    complex: f64,
}

fn stamp_terms(traj: &Trajectory, k: usize, lambda: f64) -> Result<StampTerms> {
    let h = traj.times()[k + 1] - traj.times()[k - 1];
    let snaps = traj.snapshots();
    let w = &snaps[k];
    let grid = w.grid();
    let hbar = w.hbar();
    let dv = grid.cell_volume();
    let psi = w.psi().as_slice();
    let rho_field = w.density();
    let rho = rho_field.as_slice();
    let node_mask = mask::node_mask(&rho_field);
    check_mask(grid, &node_mask)?;
    let psi_t: Vec<Complex64> = snaps[k + 1]
        .psi()
        .as_slice()
        .iter()
        .zip(snaps[k - 1].psi().as_slice())
        .map(|(a, b)| (a - b) / h)
        .collect();
    let grad = spectral::gradient(w.psi());
    let drho = spectral::gradient_real(&rho_field);
    let v = w.params().potential().as_slice();
    let masses = grid.masses();
    let xi_a: Vec<f64> = masses.iter().map(|&m| xi_of_lambda(lambda, hbar, m)).collect();

    let mut t = StampTerms {
        time: 0.0,
        kinetic: 0.0,
        fisher: 0.0,
        potential: 0.0,
        complex: 0.0,
    };
    for i in 0..psi.len() {
        if node_mask[i] {
            continue;
        }
        let (p, r) = (psi[i], rho[i]);
        let s_t = hbar * (p.conj() * psi_t[i]).im / r;
        t.time -= r * s_t;
        t.potential += v[i] * r;
        let mut complex_kin = 0.0;
        for a in 0..grid.rank() {
            let d = grad[a].as_slice()[i];
            let s_a = hbar * (p.conj() * d).im / r;
            t.kinetic += r * s_a * s_a / (2.0 * masses[a]);
            let dr = drho[a].as_slice()[i];
            t.fisher += xi_a[a] * dr * dr / r;
            let u = 2.0 * (p.conj() * d).re / r;
            let pl = -Complex64::i() * hbar * d + Complex64::i() * (0.5 * lambda * hbar * u) * p;
            complex_kin += pl.norm_sqr() / (2.0 * masses[a]);
        }
        t.complex += -hbar * (p.conj() * psi_t[i]).im - complex_kin - v[i] * r;
    }
    t.time *= dv;
    t.kinetic *= dv;
    t.fisher *= dv;
    t.potential *= dv;
    t.complex *= dv;
    Ok(t)
}

/// Trapezoid weights over the interior stamps `1..n-1`.
fn interior_weights(n: usize, h: f64) -> Vec<(usize, f64)> {
    let interior: Vec<usize> = (1..n - 1).collect();
    if interior.len() == 1 {
        return vec![(1, h)];
    }
    let last = interior.len() - 1;
    interior
        .iter()
        .enumerate()
        .map(|(j, &k)| (k, if j == 0 || j == last { 0.5 * h } else { h }))
        .collect()
}

/// Deformed action over the interior stamps of `traj` (central time
/// differences, trapezoid in time), in both the polar and the complex form.
pub fn action_density(traj: &Trajectory, lambda: f64) -> Result<ActionBreakdown> {
    if traj.len() < 3 {
        return Err(DqmError::TooFewStamps {
            got: traj.len(),
            need: 3,
        });
    }
    if !lambda.is_finite() {
        return Err(DqmError::InvalidParameter(format!(
            "lambda must be finite, got {lambda}"
        )));
    }
    let h = traj.stamp_interval();
    let mut out = ActionBreakdown {
        lambda,
        total: 0.0,
        kinetic_part: 0.0,
        potential_part: 0.0,
        time_derivative_part: 0.0,
        fisher_part: 0.0,
        xi: xi_of_lambda(lambda, traj.snapshots()[0].hbar(), traj.grid().masses()[0]),
        complex_total: 0.0,
    };
    for (k, wk) in interior_weights(traj.len(), h) {
        let t = stamp_terms(traj, k, lambda)?;
        out.time_derivative_part += wk * t.time;
        out.kinetic_part += wk * t.kinetic;
        out.potential_part += wk * t.potential;
        out.fisher_part += wk * t.fisher;
        out.complex_total += wk * t.complex;
    }
    out.total = out.time_derivative_part - out.kinetic_part - out.potential_part - out.fisher_part;
    Ok(out)
}

/// Relative off-mask residual of
/// `∂S/∂t + Σ_a (∂_a S)²/2m_a + V - 4 Σ_a ξ_a ∂²_a√ρ/√ρ` at an interior stamp,
/// `ξ_a = ξ m_0 / m_a`. The L² norm is weighted by `ρ` and divided by the same
/// norm of the sum of the absolute values of the terms.
pub fn modified_hj_residual(traj: &Trajectory, k: usize, xi: f64) -> Result<f64> {
    if !xi.is_finite() {
        return Err(DqmError::InvalidParameter(format!("xi must be finite, got {xi}")));
    }
    if k == 0 || k + 1 >= traj.len() {
        return Err(DqmError::BoundaryStamp {
            index: k,
            len: traj.len(),
        });
    }
    let h = traj.times()[k + 1] - traj.times()[k - 1];
    let snaps = traj.snapshots();
    let w = &snaps[k];
    let grid = w.grid();
    let hbar = w.hbar();
    let psi = w.psi().as_slice();
    let rho_field = w.density();
    let rho = rho_field.as_slice();
    let node_mask = mask::node_mask(&rho_field);
    check_mask(grid, &node_mask)?;
    let grad = spectral::gradient(w.psi());
    let amp = real_from(grid, rho.iter().map(|r| r.sqrt()).collect());
    let masses = grid.masses();
    let m0 = masses[0];
    let quantum_weights: Vec<f64> = masses.iter().map(|m| -4.0 * xi * m0 / m).collect();
    let lap = spectral::weighted_laplacian_real(&amp, &quantum_weights);
    let v = w.params().potential().as_slice();
    let (next, prev) = (snaps[k + 1].psi().as_slice(), snaps[k - 1].psi().as_slice());
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..psi.len() {
        if node_mask[i] {
            continue;
        }
        let s_t = hbar * (next[i] * prev[i].conj()).arg() / h;
        let kin: f64 = (0..grid.rank())
            .map(|a| {
                let s_a = hbar * (psi[i].conj() * grad[a].as_slice()[i]).im / rho[i];
                s_a * s_a / (2.0 * masses[a])
            })
            .sum();
        let quantum = lap.as_slice()[i] / amp.as_slice()[i];
        let lhs = s_t + kin + v[i] + quantum;
        let scale = s_t.abs() + kin.abs() + v[i].abs() + quantum.abs();
        num += rho[i] * lhs * lhs;
        den += rho[i] * scale * scale;
    }
    if den == 0.0 {
        return Ok(num.sqrt());
    }
    Ok((num / den).sqrt())
}

/// `⟨K⟩`, `⟨K′⟩` with `K′ = K - Σ_a (ħ²/8m_a)(∂_a ρ/ρ)²`, and `W`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KineticDecomposition {
    pub k_mean: f64,
    pub kprime_mean: f64,
    pub weizsacker_term: f64,
}

pub fn kinetic_decomposition(w: &WaveField) -> Result<KineticDecomposition> {
    let grid = w.grid();
    let hbar = w.hbar();
    let rho = w.density();
    let node_mask = mask::node_mask(&rho);
    check_mask(grid, &node_mask)?;
    let kpsi = operators::apply_kinetic(w.psi(), hbar);
    let k_mean = expectation(&kpsi, w)?.re;
    let dv = grid.cell_volume();
    let grad = spectral::gradient(w.psi());
    let mut correction = 0.0;
    for (a, &m) in grid.masses().iter().enumerate() {
        let c = hbar * hbar / (8.0 * m);
        correction += c * w
            .psi()
            .as_slice()
            .iter()
            .zip(grad[a].as_slice())
            .zip(&node_mask)
            .filter(|(_, &mk)| !mk)
            .map(|((p, d), _)| {
                let r = p.norm_sqr();
                let u = 2.0 * (p.conj() * d).re / r;
                r * u * u
            })
            .sum::<f64>();
    }
    let weizsacker_term = weizsacker(&rho, grid.masses(), hbar)?;
    Ok(KineticDecomposition {
        k_mean,
        kprime_mean: k_mean - correction * dv,
        weizsacker_term,
    })
}

/// `⟨ψ, K_λ ψ⟩` with `K_λ` applied by composition; the imaginary part is a
/// consistency check and should vanish.
pub fn deformed_kinetic_expectation(w: &WaveField, lambda: f64) -> Result<Complex64> {
    let k = operators::apply_deformed_kinetic(w, lambda)?;
    expectation(&k, w)
}

/// `T_cl = ∫ ρ Σ_a (∂_a S)² / 2m_a` over unmasked points.
pub fn classical_kinetic(w: &WaveField) -> Result<f64> {
    let p = operators::classical_momentum_field(w)?;
    let rho = w.density();
    let masses = w.grid().masses();
    let dv = w.grid().cell_volume();
    Ok(p.iter()
        .zip(masses)
        .map(|(pa, m)| {
            pa.as_slice()
                .iter()
                .zip(rho.as_slice())
                .map(|(p, r)| r * p * p / (2.0 * m))
                .sum::<f64>()
        })
        .sum::<f64>()
        * dv)
}

/// `⟨Q⟩ = ∫ ρ Q` with `Q` from the polar decomposition of `w`.
pub fn quantum_potential_mean(w: &WaveField) -> Result<f64> {
    let p = crate::wavefield::to_polar(w)?;
    let q = operators::quantum_potential(&p, w.grid(), w.hbar())?;
    let dv = w.grid().cell_volume();
    Ok(q.as_slice()
        .iter()
        .zip(p.rho().as_slice())
        .map(|(q, r)| q * r)
        .sum::<f64>()
        * dv)
}

/// Least-squares fit of `⟨K_λ⟩` samples to `c0 + c1 (1-λ) + c2 (1-λ)²`.
/// Returns the coefficients and the largest absolute residual.
pub fn quadratic_fit(lambdas: &[f64], values: &[f64]) -> Result<([f64; 3], f64)> {
    if lambdas.len() != values.len() || lambdas.len() < 3 {
        return Err(DqmError::InvalidParameter(
            "need at least three (λ, value) pairs".into(),
        ));
    }
    // normal equations for the 3x3 system, solved by Cramer's rule
    let mut a = [[0.0; 3]; 3];
    let mut b = [0.0; 3];
    for (&l, &y) in lambdas.iter().zip(values) {
        let s = 1.0 - l;
        let basis = [1.0, s, s * s];
        for i in 0..3 {
            b[i] += basis[i] * y;
            for j in 0..3 {
                a[i][j] += basis[i] * basis[j];
            }
        }
    }
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&a);
    if d.abs() < 1e-300 {
        return Err(DqmError::InvalidParameter(
            "λ samples do not determine a quadratic".into(),
        ));
    }
    let mut c = [0.0; 3];
    for (col, ci) in c.iter_mut().enumerate() {
        let mut m = a;
        for row in 0..3 {
            m[row][col] = b[row];
        }
        *ci = det(&m) / d;
    }
    let worst = lambdas
        .iter()
        .zip(values)
        .map(|(&l, &y)| {
            let s = 1.0 - l;
            (c[0] + c[1] * s + c[2] * s * s - y).abs()
        })
        .fold(0.0, f64::max);
    Ok((c, worst))
}
