//! Quantum potential, classical and deformed momentum/kinetic operators, the
//! factorization identity and the Witten-deformed gradient on scalars.
//!
//! `P_λ = -iħ∇ + iλ(ħ/2)∇ρ/ρ` and `P_λ† = -iħ∇ - iλ(ħ/2)∇ρ/ρ`, where `ρ` is
//! always the density of the system state, fixed when the operator is built,
//! whatever function the operator is then applied to. `λ = 0` is the ordinary
//! momentum and `λ = 1` the classical momentum `P_cl` with `P_cl ψ = ∇S ψ`.
//!
//! Public outputs are zeroed on the node mask. Inside composite operators
//! (`K_λ`, the factorization residual) the intermediate fields are kept
//! unzeroed and quotients by `ρ` use the floor `ρ + δ²`, `δ² = 1e-24 · max ρ`,
//! so that no artificial jump reaches a spectral derivative.

use std::sync::Arc;

use ndarray::ArrayD;
use num_complex::Complex64;

use crate::error::{DqmError, Result};
use crate::grid::{integrate_complex, ComplexField, Grid, HasGrid, RealField};
use crate::mask::{self, REGULARIZATION};
use crate::spectral;
use crate::wavefield::{PolarField, WaveField, PHASE_MASK_LIMIT};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Largest support-box mask fraction the operators accept.
pub const OPERATOR_MASK_LIMIT: f64 = PHASE_MASK_LIMIT;

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

fn zero_masked(mut f: ComplexField, node_mask: &[bool]) -> ComplexField {
    for (v, &m) in f.as_slice_mut().iter_mut().zip(node_mask) {
        if m {
            *v = Complex64::default();
        }
    }
    f
}

fn complex_from(grid: &Arc<Grid>, v: Vec<Complex64>) -> ComplexField {
    ComplexField::from_parts(
        grid.clone(),
        ArrayD::from_shape_vec(grid.shape(), v).expect("grid shape"),
    )
}

fn real_from(grid: &Arc<Grid>, v: Vec<f64>) -> RealField {
    RealField::from_parts(
        grid.clone(),
        ArrayD::from_shape_vec(grid.shape(), v).expect("grid shape"),
    )
}

/// Regularised score `u_a = ∂_a ρ / ρ = 2 Re(ψ* ∂_a ψ) / (ρ + δ²)` per axis.
pub(crate) fn score(psi: &ComplexField, grad: &[ComplexField]) -> Vec<Vec<f64>> {
    let rho: Vec<f64> = psi.as_slice().iter().map(|z| z.norm_sqr()).collect();
    let delta2 = REGULARIZATION * rho.iter().copied().fold(0.0, f64::max);
    grad.iter()
        .map(|g| {
            psi.as_slice()
                .iter()
                .zip(g.as_slice())
                .zip(&rho)
                .map(|((p, d), r)| 2.0 * (p.conj() * d).re / (r + delta2))
                .collect()
        })
        .collect()
}

/// `-iħ ∂_a f` per axis.
pub fn apply_momentum(f: &ComplexField, hbar: f64) -> Vec<ComplexField> {
    spectral::gradient(f).into_iter().map(|g| g.scale(-I * hbar)).collect()
}

/// `K f = -Σ_a (ħ²/2m_a) ∂²_a f`.
pub fn apply_kinetic(f: &ComplexField, hbar: f64) -> ComplexField {
    let w: Vec<f64> = f.grid().masses().iter().map(|m| -hbar * hbar / (2.0 * m)).collect();
    spectral::weighted_laplacian(f, &w)
}

/// `Q = -Σ_a (ħ²/2m_a) ∂²_a√ρ / √ρ`; zero on the node mask.
pub fn quantum_potential(p: &PolarField, grid: &Grid, hbar: f64) -> Result<RealField> {
    if !grid.same_lattice(p.grid()) {
        return Err(DqmError::GridMismatch);
    }
    check_mask(grid, p.node_mask())?;
    let sqrt_rho = RealField::from_parts(p.grid().clone(), p.rho().values().mapv(f64::sqrt));
    let w: Vec<f64> = grid.masses().iter().map(|m| -hbar * hbar / (2.0 * m)).collect();
    let lap = spectral::weighted_laplacian_real(&sqrt_rho, &w);
    let q = lap
        .as_slice()
        .iter()
        .zip(sqrt_rho.as_slice())
        .zip(p.node_mask())
        .map(|((l, s), &m)| if m { 0.0 } else { l / s })
        .collect();
    Ok(real_from(p.grid(), q))
}

/// Local momentum `ħ Im(∂_a ψ / ψ) = ∂_a S` per axis; zero on the node mask.
pub fn classical_momentum_field(w: &WaveField) -> Result<Vec<RealField>> {
    let psi = w.psi();
    let rho = w.density();
    let node_mask = mask::node_mask(&rho);
    check_mask(w.grid(), &node_mask)?;
    let hbar = w.hbar();
    Ok(spectral::gradient(psi)
        .iter()
        .map(|g| {
            let v = psi
                .as_slice()
                .iter()
                .zip(g.as_slice())
                .zip(rho.as_slice())
                .zip(&node_mask)
                .map(|(((p, d), r), &m)| if m { 0.0 } else { hbar * (p.conj() * d).im / r })
                .collect();
            real_from(w.grid(), v)
        })
        .collect())
}

/// `P_λ` (or `P_λ†`) bound to the density of one system state.
#[derive(Clone, Debug)]
pub struct DeformedMomentumSpec {
    lambda: f64,
    rho: RealField,
    dagger: bool,
    score: Vec<Vec<f64>>,
    node_mask: Vec<bool>,
}

impl DeformedMomentumSpec {
    /// Bind `ρ = |ψ|²` of the system state `w`.
    pub fn new(w: &WaveField, lambda: f64, dagger: bool) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(DqmError::InvalidParameter(format!(
                "lambda must be finite, got {lambda}"
            )));
        }
        let rho = w.density();
        let node_mask = mask::node_mask(&rho);
        check_mask(w.grid(), &node_mask)?;
        let score = score(w.psi(), &spectral::gradient(w.psi()));
        Ok(Self {
            lambda,
            rho,
            dagger,
            score,
            node_mask,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn rho(&self) -> &RealField {
        &self.rho
    }
    pub fn dagger(&self) -> bool {
        self.dagger
    }
    pub fn node_mask(&self) -> &[bool] {
        &self.node_mask
    }
    /// Same density and `λ`, opposite adjoint flag.
    pub fn adjoint(&self) -> Self {
        Self {
            dagger: !self.dagger,
            ..self.clone()
        }
    }

    /// `-iħ∂_a f ± iλ(ħ/2) u_a f` without masking.
    fn apply_axis_raw(&self, f: &ComplexField, axis: usize, hbar: f64) -> ComplexField {
        let sign = if self.dagger { -1.0 } else { 1.0 };
        let c = I * (sign * self.lambda * 0.5 * hbar);
        let d = spectral::partial(f, axis);
        let v = d
            .as_slice()
            .iter()
            .zip(f.as_slice())
            .zip(&self.score[axis])
            .map(|((d, f), u)| -I * hbar * d + c * u * f)
            .collect();
        complex_from(f.grid(), v)
    }
}

/// `P_λ f` (or `P_λ† f`) per axis, zeroed on the node mask of the bound density.
pub fn apply_deformed_momentum(
    spec: &DeformedMomentumSpec,
    operand: &ComplexField,
    hbar: f64,
) -> Result<Vec<ComplexField>> {
    operand.ensure_same_grid(&spec.rho)?;
    Ok((0..operand.grid().rank())
        .map(|a| zero_masked(spec.apply_axis_raw(operand, a, hbar), &spec.node_mask))
        .collect())
}

/// `K_λ ψ = Σ_a (1/2m_a) (P_λ†)_a (P_λ)_a ψ` for the system state itself.
pub fn apply_deformed_kinetic(w: &WaveField, lambda: f64) -> Result<ComplexField> {
    let plain = DeformedMomentumSpec::new(w, lambda, false)?;
    let dag = plain.adjoint();
    let hbar = w.hbar();
    let grid = w.grid();
    let mut out = ArrayD::from_elem(grid.shape(), Complex64::default());
    for (a, &m) in grid.masses().iter().enumerate() {
        let chi = plain.apply_axis_raw(w.psi(), a, hbar);
        let k = dag.apply_axis_raw(&chi, a, hbar);
        let s = 0.5 / m;
        out.zip_mut_with(k.values(), |o, v| *o += s * v);
    }
    Ok(zero_masked(
        ComplexField::from_parts(grid.clone(), out),
        &plain.node_mask,
    ))
}

/// Relative off-mask L² norm of `(K - Q)ψ - Σ_a (1/2m_a)(P - iα_a)(P + iα_a)ψ`
/// with `α_a = ħ ∂_a√ρ / √ρ`.
pub fn factorization_residual(w: &WaveField) -> Result<f64> {
    let hbar = w.hbar();
    let grid = w.grid();
    let psi = w.psi();
    let polar_rho = w.density();
    let node_mask = mask::node_mask(&polar_rho);
    check_mask(grid, &node_mask)?;

    // left side: spectral kinetic minus the public quantum potential
    let p = PolarField::new(polar_rho.clone(), RealField::zeros(grid.clone()))?;
    let q = quantum_potential(&p, grid, hbar)?;
    let kpsi = apply_kinetic(psi, hbar);
    let lhs: Vec<Complex64> = kpsi
        .as_slice()
        .iter()
        .zip(psi.as_slice())
        .zip(q.as_slice())
        .map(|((k, p), q)| k - q * p)
        .collect();

    // right side: the factorized product with α built from √ρ = |ψ|
    let amp = RealField::from_parts(grid.clone(), psi.values().mapv(|z| z.norm()));
    let grad_amp = spectral::gradient_real(&amp);
    let delta2 = REGULARIZATION * polar_rho.max();
    let mut rhs = vec![Complex64::default(); grid.len()];
    for (a, &m) in grid.masses().iter().enumerate() {
        let alpha: Vec<f64> = grad_amp[a]
            .as_slice()
            .iter()
            .zip(amp.as_slice())
            .zip(polar_rho.as_slice())
            .map(|((g, s), r)| hbar * g * s / (r + delta2))
            .collect();
        let inner = {
            let d = spectral::partial(psi, a);
            let v = d
                .as_slice()
                .iter()
                .zip(psi.as_slice())
                .zip(&alpha)
                .map(|((d, p), al)| -I * hbar * d + I * al * p)
                .collect();
            complex_from(grid, v)
        };
        let d = spectral::partial(&inner, a);
        for (((r, d), c), al) in rhs.iter_mut().zip(d.as_slice()).zip(inner.as_slice()).zip(&alpha) {
            *r += (-I * hbar * d - I * al * c) / (2.0 * m);
        }
    }

    let (mut num, mut den) = (0.0, 0.0);
    for (((l, r), p), &mk) in lhs.iter().zip(&rhs).zip(psi.as_slice()).zip(&node_mask) {
        if !mk {
            num += (l - r).norm_sqr();
        }
        den += p.norm_sqr();
    }
    Ok((num / den).sqrt())
}

/// `ρ^{λ/2} ∇(ρ^{-λ/2} f)`, the scalar action of `d_λ = e^{-λf} d e^{λf}`
/// with `f = -½ ln ρ`; zero on the node mask of `rho`.
///
/// The intermediate `ρ^{-λ/2} f` is differentiated spectrally, so it must be
/// periodic on the grid. At `λ = 1` it is the bare phase factor `e^{iS/ħ}`
/// of `f = ψ`, which is periodic only when the phase winds an integral
/// number of times across the box.
pub fn witten_deformed_gradient(operand: &ComplexField, rho: &RealField, lambda: f64) -> Result<Vec<ComplexField>> {
    operand.ensure_same_grid(rho)?;
    if let Some(index) = rho.as_slice().iter().position(|&r| r < 0.0) {
        return Err(DqmError::NegativeDensity { index });
    }
    let node_mask = mask::node_mask(rho);
    check_mask(rho.grid(), &node_mask)?;
    let grid = operand.grid();
    let weighted: Vec<Complex64> = operand
        .as_slice()
        .iter()
        .zip(rho.as_slice())
        .map(|(f, &r)| {
            if r > 0.0 {
                f * r.powf(-0.5 * lambda)
            } else {
                Complex64::default()
            }
        })
        .collect();
    let weighted = complex_from(grid, weighted);
    Ok(spectral::gradient(&weighted)
        .into_iter()
        .map(|g| {
            let v = g
                .as_slice()
                .iter()
                .zip(rho.as_slice())
                .zip(&node_mask)
                .map(|((g, &r), &m)| {
                    if m {
                        Complex64::default()
                    } else {
                        g * r.powf(0.5 * lambda)
                    }
                })
                .collect();
            complex_from(grid, v)
        })
        .collect())
}

/// `⟨ψ, A_a ψ⟩` for each per-axis field `A_a ψ`.
pub fn axis_expectations(fields: &[ComplexField], w: &WaveField) -> Result<Vec<Complex64>> {
    fields
        .iter()
        .map(|f| {
            f.ensure_same_grid(w)?;
            let prod: Vec<Complex64> = w
                .psi()
                .as_slice()
                .iter()
                .zip(f.as_slice())
                .map(|(p, o)| p.conj() * o)
                .collect();
            Ok(integrate_complex(&complex_from(w.grid(), prod)))
        })
        .collect()
}

impl HasGrid for DeformedMomentumSpec {
    fn grid(&self) -> &Arc<Grid> {
        self.rho.grid()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{integrate, make_grid};
    use crate::wavefield::{normalize, to_polar, PhysicalParams};
    use std::f64::consts::PI;

    fn grid1(l: f64, n: usize) -> Arc<Grid> {
        Arc::new(make_grid(&[l], &[n], &[1.0]).unwrap())
    }

    fn state(g: &Arc<Grid>, f: impl Fn(&[f64]) -> Complex64) -> WaveField {
        let psi = ComplexField::from_fn(g.clone(), f).unwrap();
        normalize(&WaveField::new(psi, PhysicalParams::free(g.clone())).unwrap()).unwrap()
    }

    fn packet(g: &Arc<Grid>, x0: f64, s: f64, p0: f64) -> WaveField {
        state(g, |x| {
            Complex64::from_polar((-(x[0] - x0).powi(2) / (4.0 * s * s)).exp(), p0 * x[0])
        })
    }

    fn max_off_mask(a: &ComplexField, b: &ComplexField, node_mask: &[bool]) -> f64 {
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .zip(node_mask)
            .filter(|(_, &m)| !m)
            .map(|((x, y), _)| (x - y).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn quantum_potential_examples() {
        let g = grid1(40.0, 512);
        let uniform = PolarField::new(
            RealField::from_fn(g.clone(), |_| 1.0 / 40.0).unwrap(),
            RealField::zeros(g.clone()),
        )
        .unwrap();
        let q = quantum_potential(&uniform, &g, 1.0).unwrap();
        assert!(q.as_slice().iter().all(|v| v.abs() < 1e-12));

        let p = to_polar(&packet(&g, 0.0, 1.0, 0.0)).unwrap();
        let q = quantum_potential(&p, &g, 1.0).unwrap();
        let xs = g.axis_coords(0);
        assert!((q.as_slice()[256] - 0.25).abs() < 1e-10);
        for ((q, x), &m) in q.as_slice().iter().zip(&xs).zip(p.node_mask()) {
            if !m {
                assert!((q - 0.25 * (1.0 - x * x / 2.0)).abs() < 1e-6, "x={x} q={q}");
            } else {
                assert_eq!(*q, 0.0);
            }
        }
    }

    #[test]
    fn harmonic_ground_state_is_stationary() {
        let g = grid1(20.0, 128);
        let omega = 1.0;
        let w = state(&g, |x| Complex64::new((-omega * x[0] * x[0] / 2.0).exp(), 0.0));
        let p = to_polar(&w).unwrap();
        let q = quantum_potential(&p, &g, 1.0).unwrap();
        let xs = g.axis_coords(0);
        let dev = q
            .as_slice()
            .iter()
            .zip(&xs)
            .zip(p.node_mask())
            .filter(|(_, &m)| !m)
            .map(|((q, x), _)| (q + 0.5 * omega * omega * x * x - 0.5 * omega).abs())
            .fold(0.0, f64::max);
        assert!(dev < 1e-8, "{dev}");
    }

    #[test]
    fn classical_momentum_examples() {
        let l = 8.0 * PI;
        let g = grid1(l, 64);
        let pw = state(&g, |x| Complex64::from_polar(1.0, 2.0 * x[0]));
        let p = classical_momentum_field(&pw).unwrap();
        assert!(p[0].as_slice().iter().all(|v| (v - 2.0).abs() < 1e-12));

        let g = grid1(40.0, 512);
        let real = packet(&g, 0.3, 1.0, 0.0);
        let p = classical_momentum_field(&real).unwrap();
        let worst = p[0].as_slice().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(worst < 1e-8, "{worst}");

        let w = packet(&g, 0.0, 1.0, 2.0);
        let mask = mask::node_mask(&w.density());
        let p = classical_momentum_field(&w).unwrap();
        for (v, &m) in p[0].as_slice().iter().zip(&mask) {
            if !m {
                assert!((v - 2.0).abs() < 1e-8, "{v}");
            }
        }
    }

    #[test]
    fn deformed_momentum_examples() {
        let g = grid1(40.0, 512);
        let w = packet(&g, 0.5, 1.0, 2.0);
        let spec0 = DeformedMomentumSpec::new(&w, 0.0, false).unwrap();
        let p0 = apply_deformed_momentum(&spec0, w.psi(), 1.0).unwrap();
        let reference = apply_momentum(w.psi(), 1.0);
        assert!(max_off_mask(&p0[0], &reference[0], spec0.node_mask()) == 0.0);

        let spec1 = DeformedMomentumSpec::new(&w, 1.0, false).unwrap();
        let p1 = apply_deformed_momentum(&spec1, w.psi(), 1.0).unwrap();
        let target = w.psi().scale(Complex64::new(2.0, 0.0));
        let err = max_off_mask(&p1[0], &target, spec1.node_mask());
        assert!(err < 1e-8 * w.psi().max_abs(), "{err}");

        let l = 8.0 * PI;
        let gp = grid1(l, 64);
        let pw = state(&gp, |x| Complex64::from_polar(1.0, 2.0 * x[0]));
        let spec = DeformedMomentumSpec::new(&pw, 1.0, false).unwrap();
        let p = apply_deformed_momentum(&spec, pw.psi(), 1.0).unwrap();
        let err = max_off_mask(&p[0], &pw.psi().scale(Complex64::new(2.0, 0.0)), spec.node_mask());
        assert!(err < 1e-12);
    }

    #[test]
    fn deformed_kinetic_examples() {
        let g = grid1(40.0, 512);
        let w = packet(&g, -0.4, 1.2, 1.0);
        let k0 = apply_deformed_kinetic(&w, 0.0).unwrap();
        let k = apply_kinetic(w.psi(), 1.0);
        let mask = mask::node_mask(&w.density());
        assert!(max_off_mask(&k0, &k, &mask) < 1e-10);

        let l = 8.0 * PI;
        let gp = grid1(l, 64);
        let pw = state(&gp, |x| Complex64::from_polar(1.0, 2.0 * x[0]));
        let k1 = apply_deformed_kinetic(&pw, 1.0).unwrap();
        let target = pw.psi().scale(Complex64::new(2.0, 0.0));
        assert!(max_off_mask(&k1, &target, &[false; 64]) < 1e-12);

        let gs = grid1(20.0, 256);
        let ground = state(&gs, |x| Complex64::new((-x[0] * x[0] / 2.0).exp(), 0.0));
        let k1 = apply_deformed_kinetic(&ground, 1.0).unwrap();
        assert!(k1.max_abs() < 1e-7 * ground.psi().max_abs(), "{}", k1.max_abs());
    }

    #[test]
    fn factorization_examples() {
        let l = 8.0 * PI;
        let gp = grid1(l, 64);
        let pw = state(&gp, |x| Complex64::from_polar(1.0, 2.0 * x[0]));
        assert!(factorization_residual(&pw).unwrap() < 1e-12);

        let g = grid1(40.0, 512);
        let r = factorization_residual(&packet(&g, 0.0, 1.0, 2.0)).unwrap();
        assert!(r < 1e-8, "{r}");
    }

    #[test]
    fn witten_examples() {
        // box commensurate with p0 = 2 so that ρ^{-1/2}ψ is periodic
        let g = grid1(12.0 * PI, 512);
        let w = packet(&g, 0.0, 1.0, 2.0);
        let uniform = RealField::from_fn(g.clone(), |_| 0.025).unwrap();
        let d = witten_deformed_gradient(w.psi(), &uniform, 0.7).unwrap();
        let plain = spectral::gradient(w.psi());
        assert!(max_off_mask(&d[0], &plain[0], &vec![false; 512]) < 1e-12);

        for lambda in [0.0, 0.5, 1.0] {
            let spec = DeformedMomentumSpec::new(&w, lambda, false).unwrap();
            let p = apply_deformed_momentum(&spec, w.psi(), 1.0).unwrap();
            let d = witten_deformed_gradient(w.psi(), &w.density(), lambda).unwrap();
            let scale = p[0].max_abs();
            let err = max_off_mask(&d[0].scale(-I), &p[0], spec.node_mask());
            assert!(err < 1e-8 * scale, "lambda={lambda} err={err}");
        }

        // λ = 1 on the system state reproduces the classical momentum
        let d = witten_deformed_gradient(w.psi(), &w.density(), 1.0).unwrap();
        let pcl = classical_momentum_field(&w).unwrap();
        let mask = mask::node_mask(&w.density());
        for ((d, p), (pc, &m)) in d[0]
            .as_slice()
            .iter()
            .zip(w.psi().as_slice())
            .zip(pcl[0].as_slice().iter().zip(&mask))
        {
            if !m {
                assert!((-I * d - pc * p).norm() < 1e-8 * w.psi().max_abs());
            }
        }
    }

    #[test]
    fn expectation_identities_on_packet() {
        let g = grid1(40.0, 512);
        let w = packet(&g, 0.2, 0.9, -1.3);
        let p = axis_expectations(&apply_momentum(w.psi(), 1.0), &w).unwrap()[0];
        let pcl = classical_momentum_field(&w).unwrap();
        let pcl_mean = integrate(
            &RealField::from_vec(
                g.clone(),
                w.density()
                    .as_slice()
                    .iter()
                    .zip(pcl[0].as_slice())
                    .map(|(r, p)| r * p)
                    .collect(),
            )
            .unwrap(),
        );
        assert!((p.re - pcl_mean).abs() < 1e-10);
        assert!((p.re + 1.3).abs() < 1e-10);
        for lambda in [0.25, 0.5, 1.0] {
            let spec = DeformedMomentumSpec::new(&w, lambda, false).unwrap();
            let pl = axis_expectations(&apply_deformed_momentum(&spec, w.psi(), 1.0).unwrap(), &w).unwrap()[0];
            assert!((pl - p).norm() < 1e-10);
        }
    }

    #[test]
    fn mask_limit_is_enforced() {
        let g = grid1(40.0, 256);
        let w = state(&g, |x| {
            Complex64::new(
                (-(x[0] + 8.0).powi(2) * 20.0).exp() + (-(x[0] - 8.0).powi(2) * 20.0).exp(),
                0.0,
            )
        });
        assert!(matches!(
            DeformedMomentumSpec::new(&w, 1.0, false),
            Err(DqmError::ExcessiveMask { .. })
        ));
        assert!(classical_momentum_field(&w).is_err());
    }
}
