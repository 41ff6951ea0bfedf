//! Wavefunctions, the polar (density/phase) decomposition and expectation
//! values.

use std::collections::VecDeque;
use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use ndarray::ArrayD;
use num_complex::Complex64;

use crate::error::{DqmError, Result};
use crate::grid::{integrate, integrate_complex, ComplexField, Grid, HasGrid, RealField};
use crate::mask;

/// Largest support-box mask fraction for which a phase is still defined.
pub const PHASE_MASK_LIMIT: f64 = 0.5;

#[derive(Clone, Debug)]
pub struct PhysicalParams {
    hbar: f64,
    potential: RealField,
    lambda: f64,
}

impl PhysicalParams {
    pub fn new(hbar: f64, potential: RealField, lambda: f64) -> Result<Self> {
        if !(hbar.is_finite() && hbar > 0.0) {
            return Err(DqmError::InvalidParameter(format!("hbar must be positive, got {hbar}")));
        }
        if !lambda.is_finite() {
            return Err(DqmError::InvalidParameter(format!(
                "lambda must be finite, got {lambda}"
            )));
        }
        Ok(Self {
            hbar,
            potential,
            lambda,
        })
    }

    /// `ħ = 1`, `V = 0`, `λ = 0` on `grid`.
    pub fn free(grid: Arc<Grid>) -> Self {
        Self {
            hbar: 1.0,
            potential: RealField::zeros(grid),
            lambda: 0.0,
        }
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }
    pub fn potential(&self) -> &RealField {
        &self.potential
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.hbar, self.potential.clone(), lambda)
    }
    pub fn with_hbar(&self, hbar: f64) -> Result<Self> {
        Self::new(hbar, self.potential.clone(), self.lambda)
    }
    /// Sweeps may leave the canonical `[0, 1]` range; reports flag it.
    pub fn lambda_outside_unit_interval(&self) -> bool {
        !(0.0..=1.0).contains(&self.lambda)
    }
}

#[derive(Clone, Debug)]
pub struct WaveField {
    psi: ComplexField,
    params: PhysicalParams,
}

impl WaveField {
    pub fn new(psi: ComplexField, params: PhysicalParams) -> Result<Self> {
        psi.ensure_same_grid(params.potential())?;
        let n = norm_sqr(&psi);
        if !n.is_finite() {
            return Err(DqmError::NonFinite { index: 0 });
        }
        if n <= 0.0 {
            return Err(DqmError::ZeroNorm);
        }
        Ok(Self { psi, params })
    }

    pub fn psi(&self) -> &ComplexField {
        &self.psi
    }
    pub fn params(&self) -> &PhysicalParams {
        &self.params
    }
    pub fn grid(&self) -> &Arc<Grid> {
        self.psi.grid()
    }
    pub fn hbar(&self) -> f64 {
        self.params.hbar
    }
    pub fn density(&self) -> RealField {
        self.psi.norm_sqr()
    }
    pub fn norm_sqr(&self) -> f64 {
        norm_sqr(&self.psi)
    }
    pub fn with_params(&self, params: PhysicalParams) -> Result<Self> {
        Self::new(self.psi.clone(), params)
    }
    pub fn with_psi(&self, psi: ComplexField) -> Result<Self> {
        Self::new(psi, self.params.clone())
    }
    pub(crate) fn from_parts(psi: ComplexField, params: PhysicalParams) -> Self {
        Self { psi, params }
    }
}

impl HasGrid for WaveField {
    fn grid(&self) -> &Arc<Grid> {
        self.psi.grid()
    }
}

fn norm_sqr(psi: &ComplexField) -> f64 {
    integrate(&psi.norm_sqr())
}

/// Density `ρ = |ψ|²`, phase `S` (action units) and node mask.
#[derive(Clone, Debug)]
pub struct PolarField {
    rho: RealField,
    phase: RealField,
    node_mask: Vec<bool>,
}

impl PolarField {
    /// Assemble from explicit density and phase; the node mask is derived
    /// from the density.
    pub fn new(rho: RealField, phase: RealField) -> Result<Self> {
        rho.ensure_same_grid(&phase)?;
        if let Some(index) = rho.as_slice().iter().position(|&r| r < 0.0) {
            return Err(DqmError::NegativeDensity { index });
        }
        let node_mask = mask::node_mask(&rho);
        Ok(Self { rho, phase, node_mask })
    }

    pub fn rho(&self) -> &RealField {
        &self.rho
    }
    pub fn phase(&self) -> &RealField {
        &self.phase
    }
    pub fn node_mask(&self) -> &[bool] {
        &self.node_mask
    }
    pub fn grid(&self) -> &Arc<Grid> {
        self.rho.grid()
    }
    /// Masked fraction of the whole lattice.
    pub fn mask_fraction(&self) -> f64 {
        mask::raw_fraction(&self.node_mask)
    }
    /// Masked fraction of the support box; the quantity the limits apply to.
    pub fn support_mask_fraction(&self) -> f64 {
        mask::support_fraction(self.grid(), &self.node_mask)
    }
}

/// Rescale so that `∫|ψ|² = 1`.
pub fn normalize(w: &WaveField) -> Result<WaveField> {
    let n = w.norm_sqr();
    if n.is_nan() || n <= 0.0 {
        return Err(DqmError::ZeroNorm);
    }
    let s = 1.0 / n.sqrt();
    Ok(WaveField::from_parts(
        w.psi.scale(Complex64::new(s, 0.0)),
        w.params.clone(),
    ))
}

/// Polar decomposition `ψ = √ρ e^{iS/ħ}` with a continuous (unwrapped) phase
/// off the node mask. Masked points carry `S = 0`.
pub fn to_polar(w: &WaveField) -> Result<PolarField> {
    let rho = w.density();
    let node_mask = mask::node_mask(&rho);
    let fraction = mask::support_fraction(w.grid(), &node_mask);
    if fraction > PHASE_MASK_LIMIT {
        return Err(DqmError::PhaseUndefined { fraction });
    }
    let arg: Vec<f64> = w.psi.as_slice().iter().map(|z| z.arg()).collect();
    let unwrapped = unwrap_phase(w.grid(), &arg, rho.as_slice(), &node_mask);
    let hbar = w.hbar();
    let phase = ArrayD::from_shape_vec(w.grid().shape(), unwrapped.iter().map(|s| hbar * s).collect())
        .expect("shape matches grid");
    Ok(PolarField {
        rho,
        phase: RealField::from_parts(w.grid().clone(), phase),
        node_mask,
    })
}

/// `ψ = √ρ exp(iS/ħ)`; masked points use `S = 0`.
pub fn from_polar(p: &PolarField, params: &PhysicalParams) -> Result<WaveField> {
    if let Some(index) = p.rho.as_slice().iter().position(|&r| r < 0.0) {
        return Err(DqmError::NegativeDensity { index });
    }
    let hbar = params.hbar();
    let psi: Vec<Complex64> = p
        .rho
        .as_slice()
        .iter()
        .zip(p.phase.as_slice())
        .zip(&p.node_mask)
        .map(|((&r, &s), &m)| {
            let s = if m { 0.0 } else { s };
            Complex64::from_polar(r.sqrt(), s / hbar)
        })
        .collect();
    WaveField::new(ComplexField::from_vec(p.grid().clone(), psi)?, params.clone())
}

/// `∫ ψ* · (Aψ)` where `observable` already holds `Aψ` sampled on the grid.
pub fn expectation(observable: &ComplexField, w: &WaveField) -> Result<Complex64> {
    observable.ensure_same_grid(w)?;
    let prod: Vec<Complex64> = w
        .psi
        .as_slice()
        .iter()
        .zip(observable.as_slice())
        .map(|(p, o)| p.conj() * o)
        .collect();
    Ok(integrate_complex(&ComplexField::from_parts(
        w.grid().clone(),
        ArrayD::from_shape_vec(w.grid().shape(), prod).expect("shape matches grid"),
    )))
}

fn wrap_angle(d: f64) -> f64 {
    let w = (d + PI).rem_euclid(TAU) - PI;
    // map the boundary case -π to +π so that wrap is odd-symmetric
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Path-following unwrap: starting from the densest point, walk the unmasked
/// lattice breadth-first (axis 0 neighbours first, then axis 1, …, never
/// across the periodic seam) and remove 2π jumps relative to the neighbour
/// each point was reached from. Disconnected unmasked regions are seeded
/// from their own densest point.
fn unwrap_phase(grid: &Grid, arg: &[f64], rho: &[f64], node_mask: &[bool]) -> Vec<f64> {
    let n = arg.len();
    let rank = grid.rank();
    let pts = grid.points();
    let mut strides = vec![1usize; rank];
    for a in (0..rank.saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * pts[a + 1];
    }
    let mut out = vec![0.0; n];
    let mut visited = node_mask.to_vec();
    let mut order: Vec<usize> = (0..n).filter(|&i| !node_mask[i]).collect();
    // densest first, ties broken by index for determinism
    order.sort_by(|&a, &b| rho[b].total_cmp(&rho[a]).then(a.cmp(&b)));
    let mut queue = VecDeque::new();
    let mut idx = vec![0; rank];
    for &seed in &order {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        out[seed] = arg[seed];
        queue.push_back(seed);
        while let Some(cur) = queue.pop_front() {
            grid.unravel(cur, &mut idx);
            for a in 0..rank {
                for step in [1isize, -1] {
                    let j = idx[a] as isize + step;
                    if j < 0 || j >= pts[a] as isize {
                        continue;
                    }
                    let nb = (cur as isize + step * strides[a] as isize) as usize;
                    if visited[nb] {
                        continue;
                    }
                    visited[nb] = true;
                    out[nb] = out[cur] + wrap_angle(arg[nb] - arg[cur]);
                    queue.push_back(nb);
                }
            }
        }
    }
    out
}

/// Continue a phase into its node mask by linear extrapolation, visiting
/// masked points breadth-first from the unmasked region (no periodic wrap).
/// A phase that is linear in the coordinates is reproduced exactly.
pub(crate) fn extend_phase(grid: &Grid, phase: &[f64], node_mask: &[bool]) -> Vec<f64> {
    let n = phase.len();
    let rank = grid.rank();
    let pts = grid.points();
    let mut strides = vec![1usize; rank];
    for a in (0..rank.saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * pts[a + 1];
    }
    let mut out = phase.to_vec();
    let mut known: Vec<bool> = node_mask.iter().map(|m| !m).collect();
    if !known.iter().any(|&k| k) {
        return vec![0.0; n];
    }
    let mut queue: VecDeque<usize> = (0..n).filter(|&i| known[i]).collect();
    let mut idx = vec![0; rank];
    while let Some(cur) = queue.pop_front() {
        grid.unravel(cur, &mut idx);
        for a in 0..rank {
            for step in [1isize, -1] {
                let j = idx[a] as isize + step;
                if j < 0 || j >= pts[a] as isize {
                    continue;
                }
                let s = step * strides[a] as isize;
                let nb = (cur as isize + s) as usize;
                if known[nb] {
                    continue;
                }
                // slope from the point behind `cur` along the same direction
                let back = idx[a] as isize - step;
                let slope = if back >= 0 && back < pts[a] as isize && known[(cur as isize - s) as usize] {
                    out[cur] - out[(cur as isize - s) as usize]
                } else {
                    0.0
                };
                out[nb] = out[cur] + slope;
                known[nb] = true;
                queue.push_back(nb);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    fn grid1(l: f64, n: usize) -> Arc<Grid> {
        Arc::new(make_grid(&[l], &[n], &[1.0]).unwrap())
    }

    fn gaussian(g: Arc<Grid>, x0: f64, s: f64, p0: f64) -> WaveField {
        let psi = ComplexField::from_fn(g.clone(), |x| {
            Complex64::from_polar((-(x[0] - x0).powi(2) / (4.0 * s * s)).exp(), p0 * x[0])
        })
        .unwrap();
        normalize(&WaveField::new(psi, PhysicalParams::free(g)).unwrap()).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let g = grid1(20.0, 128);
        let w = gaussian(g.clone(), 0.0, 1.0, 0.0);
        assert!((w.norm_sqr() - 1.0).abs() < 1e-12);
        let doubled = w.with_psi(w.psi().scale(Complex64::new(2.0, 0.0))).unwrap();
        let back = normalize(&doubled).unwrap();
        for (a, b) in back.psi().as_slice().iter().zip(w.psi().as_slice()) {
            assert!((a - b).norm() < 1e-14);
        }
        let again = normalize(&w).unwrap();
        for (a, b) in again.psi().as_slice().iter().zip(w.psi().as_slice()) {
            assert!((a - b).norm() < 1e-14);
        }
        let zero = ComplexField::zeros(g.clone());
        assert!(matches!(
            WaveField::new(zero, PhysicalParams::free(g)),
            Err(DqmError::ZeroNorm)
        ));
    }

    #[test]
    fn plane_wave_polar() {
        let l = 8.0 * PI;
        let g = grid1(l, 64);
        let p0 = 2.0;
        let psi = ComplexField::from_fn(g.clone(), |x| Complex64::from_polar(1.0, p0 * x[0])).unwrap();
        let w = normalize(&WaveField::new(psi, PhysicalParams::free(g.clone())).unwrap()).unwrap();
        let p = to_polar(&w).unwrap();
        assert!(p.rho().as_slice().iter().all(|&r| (r - 1.0 / l).abs() < 1e-14));
        let xs = g.axis_coords(0);
        let offset = p.phase().as_slice()[0] - p0 * xs[0];
        for (s, x) in p.phase().as_slice().iter().zip(&xs) {
            assert!((s - p0 * x - offset).abs() < 1e-10);
        }
    }

    #[test]
    fn real_gaussian_has_constant_phase() {
        let g = grid1(20.0, 128);
        let p = to_polar(&gaussian(g, 0.5, 1.0, 0.0)).unwrap();
        assert!(p.phase().as_slice().iter().all(|&s| s.abs() < 1e-14));
        assert!((integrate(p.rho()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn packet_phase_is_linear_off_mask() {
        let g = grid1(40.0, 512);
        let p0 = 2.0;
        let w = gaussian(g.clone(), 1.0, 1.0, p0);
        let p = to_polar(&w).unwrap();
        let xs = g.axis_coords(0);
        let pairs: Vec<(f64, f64)> = p
            .phase()
            .as_slice()
            .iter()
            .zip(&xs)
            .zip(p.node_mask())
            .filter(|(_, &m)| !m)
            .map(|((s, x), _)| (*s, *x))
            .collect();
        let c = pairs[0].0 - p0 * pairs[0].1;
        for (s, x) in pairs {
            assert!((s - p0 * x - c).abs() < 1e-9);
        }
    }

    #[test]
    fn round_trip_reproduces_psi() {
        let g = grid1(40.0, 512);
        let w = gaussian(g, -0.7, 1.3, 1.5);
        let p = to_polar(&w).unwrap();
        let back = from_polar(&p, w.params()).unwrap();
        let scale = w.psi().max_abs();
        for ((a, b), m) in back.psi().as_slice().iter().zip(w.psi().as_slice()).zip(p.node_mask()) {
            if !m {
                assert!((a - b).norm() < 1e-8 * scale);
            }
        }
    }

    #[test]
    fn phase_extension_is_exact_for_linear_phase() {
        let g = Arc::new(make_grid(&[10.0, 10.0], &[16, 16], &[1.0, 1.0]).unwrap());
        let n = g.len();
        let phase: Vec<f64> = (0..n)
            .map(|i| {
                let x = g.coords_of(i);
                1.5 * x[0] - 0.5 * x[1] + 0.2
            })
            .collect();
        let node_mask: Vec<bool> = (0..n)
            .map(|i| {
                let x = g.coords_of(i);
                x[0].abs() > 2.0 || x[1].abs() > 3.0
            })
            .collect();
        let masked: Vec<f64> = phase
            .iter()
            .zip(&node_mask)
            .map(|(s, &m)| if m { 0.0 } else { *s })
            .collect();
        let ext = extend_phase(&g, &masked, &node_mask);
        for (a, b) in ext.iter().zip(&phase) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn negative_density_rejected() {
        let g = grid1(1.0, 8);
        let mut rho = vec![0.1; 8];
        rho[2] = -1e-3;
        let rho = RealField::from_vec(g.clone(), rho).unwrap();
        assert!(matches!(
            PolarField::new(rho, RealField::zeros(g)),
            Err(DqmError::NegativeDensity { index: 2 })
        ));
    }

    #[test]
    fn mostly_nodal_state_has_no_phase() {
        // two narrow spikes far apart: the support box between them is nodal
        let g = grid1(40.0, 256);
        let psi = ComplexField::from_fn(g.clone(), |x| {
            let a = (-(x[0] + 8.0).powi(2) * 20.0).exp() + (-(x[0] - 8.0).powi(2) * 20.0).exp();
            Complex64::new(a, 0.0)
        })
        .unwrap();
        let w = normalize(&WaveField::new(psi, PhysicalParams::free(g)).unwrap()).unwrap();
        assert!(matches!(to_polar(&w), Err(DqmError::PhaseUndefined { .. })));
    }

    #[test]
    fn expectation_examples() {
        let g = grid1(40.0, 512);
        let x0 = 1.75;
        let w = gaussian(g.clone(), x0, 1.0, 0.0);
        let one = expectation(w.psi(), &w).unwrap();
        assert!((one - 1.0).norm() < 1e-12);
        let xs = g.coordinate_field(0);
        let xpsi: Vec<Complex64> = w
            .psi()
            .as_slice()
            .iter()
            .zip(xs.as_slice())
            .map(|(p, x)| p * x)
            .collect();
        let xpsi = ComplexField::from_vec(g.clone(), xpsi).unwrap();
        assert!((expectation(&xpsi, &w).unwrap().re - x0).abs() < 1e-8);

        let other = Arc::new(make_grid(&[40.0], &[256], &[1.0]).unwrap());
        assert!(matches!(
            expectation(&ComplexField::zeros(other), &w),
            Err(DqmError::GridMismatch)
        ));
    }

    #[test]
    fn hbar_must_be_positive() {
        let g = grid1(1.0, 8);
        assert!(PhysicalParams::new(0.0, RealField::zeros(g.clone()), 0.0).is_err());
        assert!(PhysicalParams::new(1.0, RealField::zeros(g.clone()), f64::NAN).is_err());
        let p = PhysicalParams::new(1.0, RealField::zeros(g), 1.5).unwrap();
        assert!(p.lambda_outside_unit_interval());
    }
}
