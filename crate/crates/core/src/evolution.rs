//! Time propagation.
//!
//! * [`evolve_linear`]: Strang split-step for `iħ ψ_t = (K + V) ψ`.
//! * [`evolve_classical`]: RK4 method of lines for the nonlinear equation
//!   `iħ ψ_t = (K + V - Q[|ψ|²]) ψ`, whose density follows the classical
//!   Hamilton-Jacobi flow.
//! * [`hj_characteristics`]: a particle ensemble moving along the classical
//!   characteristics, used as an independent oracle for the nonlinear mode.

use std::f64::consts::TAU;
use std::sync::Arc;

use ndarray::ArrayD;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DqmError, Result};
use crate::grid::{ComplexField, Grid, HasGrid, RealField};
use crate::mask::{self, REGULARIZATION};
use crate::par;
use crate::spectral::{self, SpectralInterpolant};
use crate::wavefield::{extend_phase, PhysicalParams, PolarField, WaveField};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Largest support-box mask fraction tolerated by the nonlinear integrator.
pub const CLASSICAL_MASK_LIMIT: f64 = 0.1;
/// Stability bound `dt ≤ STABILITY · min_a(m_a Δx_a²) / ħ` for RK4.
pub const STABILITY: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Linear,
    Classical,
}

/// Per-stamp diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    pub norm: f64,
    /// `⟨K + V⟩` in linear mode, `⟨K - Q + V⟩` in classical mode.
    pub energy: f64,
    pub x_mean: Vec<f64>,
    pub p_mean: Vec<f64>,
    pub pcl_mean: Vec<f64>,
    pub width: Vec<f64>,
    pub q_mean: f64,
    pub fisher: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    mode: Mode,
    dt: f64,
    stride: usize,
    times: Vec<f64>,
    snapshots: Vec<WaveField>,
    observables: Vec<Observables>,
}

impl Trajectory {
    /// Wrap externally produced snapshots taken every `stride` steps of `dt`
    /// starting at `t0`; observables are computed here.
    pub fn from_snapshots(mode: Mode, dt: f64, stride: usize, t0: f64, snapshots: Vec<WaveField>) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) || stride == 0 {
            return Err(DqmError::InvalidParameter(
                "dt must be positive and stride at least 1".into(),
            ));
        }
        if let Some(first) = snapshots.first() {
            for s in &snapshots[1..] {
                s.psi().ensure_same_grid(first.psi())?;
            }
        }
        let h = dt * stride as f64;
        let times = (0..snapshots.len()).map(|k| t0 + k as f64 * h).collect();
        let observables = snapshots.iter().map(|w| observe(w, mode)).collect();
        Ok(Self {
            mode,
            dt,
            stride,
            times,
            snapshots,
            observables,
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn stride(&self) -> usize {
        self.stride
    }
    /// Spacing between recorded stamps.
    pub fn stamp_interval(&self) -> f64 {
        self.dt * self.stride as f64
    }
    pub fn times(&self) -> &[f64] {
        &self.times
    }
    pub fn snapshots(&self) -> &[WaveField] {
        &self.snapshots
    }
    pub fn observables(&self) -> &[Observables] {
        &self.observables
    }
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }
    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }
    pub fn last(&self) -> &WaveField {
        self.snapshots
            .last()
            .expect("trajectories hold at least the initial state")
    }
    pub fn grid(&self) -> &Arc<Grid> {
        self.snapshots[0].grid()
    }

    pub(crate) fn interior(&self, k: usize) -> Result<()> {
        if k == 0 || k + 1 >= self.len() {
            return Err(DqmError::BoundaryStamp {
                index: k,
                len: self.len(),
            });
        }
        Ok(())
    }

    fn push(&mut self, t: f64, w: WaveField) {
        self.observables.push(observe(&w, self.mode));
        self.times.push(t);
        self.snapshots.push(w);
    }
}

fn field_from(grid: &Arc<Grid>, v: Vec<Complex64>) -> ComplexField {
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

/// Diagnostics of one state. Kinetic and quantum-potential means use the
/// division-free forms `Σ ħ²/2m ∫|∂ψ|²` and `-Σ ħ²/2m ∫|ψ| ∂²|ψ|`.
pub fn observe(w: &WaveField, mode: Mode) -> Observables {
    let grid = w.grid();
    let hbar = w.hbar();
    let dv = grid.cell_volume();
    let psi = w.psi().as_slice();
    let rho: Vec<f64> = psi.iter().map(|z| z.norm_sqr()).collect();
    let norm = rho.iter().sum::<f64>() * dv;
    let node_mask = mask::node_mask(&real_from(grid, rho.clone()));

    let grad = spectral::gradient(w.psi());
    let amp = real_from(grid, psi.iter().map(|z| z.norm()).collect());
    let mut kinetic = 0.0;
    let mut q_mean = 0.0;
    let mut p_mean = Vec::with_capacity(grid.rank());
    let mut pcl_mean = Vec::with_capacity(grid.rank());
    let mut fisher = 0.0;
    for (a, &m) in grid.masses().iter().enumerate() {
        let g = grad[a].as_slice();
        let c = hbar * hbar / (2.0 * m);
        kinetic += c * g.iter().map(|d| d.norm_sqr()).sum::<f64>() * dv;
        let d2 = spectral::second_partial(&amp.to_complex(), a);
        q_mean -= c
            * amp
                .as_slice()
                .iter()
                .zip(d2.as_slice())
                .map(|(s, d)| s * d.re)
                .sum::<f64>()
            * dv;
        let current: Vec<f64> = psi.iter().zip(g).map(|(p, d)| (p.conj() * d).im).collect();
        p_mean.push(hbar * current.iter().sum::<f64>() * dv);
        // ρ ∂S over unmasked points only, as the local-momentum field is defined
        let off: f64 = current
            .iter()
            .zip(&node_mask)
            .filter(|(_, &mk)| !mk)
            .map(|(j, _)| j)
            .sum();
        pcl_mean.push(hbar * off * dv);
    }
    let drho = spectral::gradient_real(&real_from(grid, rho.clone()));
    for d in &drho {
        fisher += d
            .as_slice()
            .iter()
            .zip(&rho)
            .zip(&node_mask)
            .filter(|(_, &mk)| !mk)
            .map(|((d, r), _)| d * d / r)
            .sum::<f64>()
            * dv;
    }
    let potential: f64 = w
        .params()
        .potential()
        .as_slice()
        .iter()
        .zip(&rho)
        .map(|(v, r)| v * r)
        .sum::<f64>()
        * dv;
    let energy = match mode {
        Mode::Linear => kinetic + potential,
        Mode::Classical => kinetic - q_mean + potential,
    };

    let mut x_mean = Vec::with_capacity(grid.rank());
    let mut width = Vec::with_capacity(grid.rank());
    for a in 0..grid.rank() {
        let x = grid.coordinate_field(a);
        let (m1, m2) = x
            .as_slice()
            .iter()
            .zip(&rho)
            .fold((0.0, 0.0), |(s1, s2), (x, r)| (s1 + x * r, s2 + x * x * r));
        let mean = m1 * dv / norm;
        let var = m2 * dv / norm - mean * mean;
        x_mean.push(mean);
        width.push(var.max(0.0).sqrt());
    }
    Observables {
        norm,
        energy,
        x_mean,
        p_mean,
        pcl_mean,
        width,
        q_mean,
        fisher,
    }
}

fn validate_steps(dt: f64, stride: usize) -> Result<()> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(DqmError::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    if stride == 0 {
        return Err(DqmError::InvalidParameter("stride must be at least 1".into()));
    }
    Ok(())
}

fn first_non_finite(v: &[Complex64]) -> Option<usize> {
    v.iter().position(|z| !(z.re.is_finite() && z.im.is_finite()))
}

/// Second-order split-step propagation (half potential, kinetic in Fourier
/// space, half potential), recording every `stride` steps.
pub fn evolve_linear(w0: &WaveField, dt: f64, steps: usize, stride: usize) -> Result<Trajectory> {
    validate_steps(dt, stride)?;
    let grid = w0.grid().clone();
    let hbar = w0.hbar();
    let half_v: Vec<Complex64> = w0
        .params()
        .potential()
        .as_slice()
        .iter()
        .map(|v| Complex64::from_polar(1.0, -0.5 * v * dt / hbar))
        .collect();
    let kinetic: Vec<Vec<Complex64>> = (0..grid.rank())
        .map(|a| {
            let m = grid.masses()[a];
            spectral::axis_wavenumbers(&grid, a)
                .iter()
                .map(|k| Complex64::from_polar(1.0, -hbar * k * k * dt / (2.0 * m)))
                .collect()
        })
        .collect();

    let mut traj = Trajectory::from_snapshots(Mode::Linear, dt, stride, 0.0, vec![w0.clone()])?;
    let mut psi = w0.psi().clone();
    for step in 1..=steps {
        par::for_each_mut(psi.as_slice_mut(), |i, z| *z *= half_v[i]);
        for (a, f) in kinetic.iter().enumerate() {
            spectral::multiply_axis(&mut psi, a, f);
        }
        par::for_each_mut(psi.as_slice_mut(), |i, z| *z *= half_v[i]);
        if let Some(i) = first_non_finite(psi.as_slice()) {
            return Err(DqmError::NumericalAbort {
                step,
                reason: format!("non-finite amplitude at index {i}"),
            });
        }
        if step % stride == 0 {
            traj.push(
                step as f64 * dt,
                WaveField::from_parts(psi.clone(), w0.params().clone()),
            );
        }
    }
    Ok(traj)
}

/// Largest time step accepted by [`evolve_classical`] on `grid`.
pub fn classical_dt_bound(grid: &Grid, hbar: f64) -> f64 {
    let m_dx2 = grid
        .masses()
        .iter()
        .zip(grid.spacing())
        .map(|(m, dx)| m * dx * dx)
        .fold(f64::INFINITY, f64::min);
    STABILITY * m_dx2 / hbar
}

/// `-(i/ħ)(K + V - Q)ψ` with `Q ψ = -Σ ħ²/2m ∂²|ψ| · |ψ| ψ / (ρ + δ²)`.
fn classical_rhs(psi: &ComplexField, v: &[f64], hbar: f64) -> Vec<Complex64> {
    let grid = psi.grid();
    let weights: Vec<f64> = grid.masses().iter().map(|m| -hbar * hbar / (2.0 * m)).collect();
    let kpsi = spectral::weighted_laplacian(psi, &weights);
    let amp: Vec<f64> = psi.as_slice().iter().map(|z| z.norm()).collect();
    let rho_max = amp.iter().fold(0.0_f64, |m, a| m.max(a * a));
    let delta2 = REGULARIZATION * rho_max;
    let lap_amp = spectral::weighted_laplacian_real(&real_from(grid, amp.clone()), &weights);
    let p = psi.as_slice();
    let (k, l) = (kpsi.as_slice(), lap_amp.as_slice());
    par::map_range(p.len(), |i| {
        let q = l[i] * amp[i] / (amp[i] * amp[i] + delta2);
        -I / hbar * (k[i] + (v[i] - q) * p[i])
    })
}

/// Two-thirds rule: keep `|k| ≤ (2/3) k_Nyquist` on every axis.
///
/// The nonlinear equation has no dispersion left for amplitude modes, so the
/// imperfect cancellation of `K` and `Q` for products aliased past Nyquist
/// grows exponentially at a rate independent of `dt`. Truncating after every
/// step removes that band; resolved states carry no weight there.
fn dealias_filters(grid: &Grid) -> Vec<Vec<Complex64>> {
    (0..grid.rank())
        .map(|a| {
            let k = spectral::axis_wavenumbers(grid, a);
            let k_max = std::f64::consts::PI / grid.spacing()[a];
            k.iter()
                .map(|k| {
                    if k.abs() <= 2.0 / 3.0 * k_max {
                        Complex64::new(1.0, 0.0)
                    } else {
                        Complex64::default()
                    }
                })
                .collect()
        })
        .collect()
}

/// RK4 method of lines for the nonlinear classical equation, recomputing
/// the quantum potential from `|ψ|²` at every stage and applying the
/// two-thirds dealiasing filter after every step.
pub fn evolve_classical(w0: &WaveField, dt: f64, steps: usize, stride: usize) -> Result<Trajectory> {
    validate_steps(dt, stride)?;
    let grid = w0.grid().clone();
    let hbar = w0.hbar();
    let bound = classical_dt_bound(&grid, hbar);
    if dt > bound {
        return Err(DqmError::InvalidParameter(format!(
            "dt = {dt} exceeds the stability bound {bound:.6e}"
        )));
    }
    let initial = mask::support_fraction(&grid, &mask::node_mask(&w0.density()));
    if initial > CLASSICAL_MASK_LIMIT {
        return Err(DqmError::ExcessiveMask {
            fraction: initial,
            limit: CLASSICAL_MASK_LIMIT,
        });
    }
    let v = w0.params().potential().as_slice().to_vec();
    let filters = dealias_filters(&grid);
    let mut traj = Trajectory::from_snapshots(Mode::Classical, dt, stride, 0.0, vec![w0.clone()])?;
    let mut psi = w0.psi().clone();
    let n = psi.len();
    let stage = |base: &[Complex64], k: &[Complex64], h: f64| -> ComplexField {
        field_from(&grid, (0..n).map(|i| base[i] + h * k[i]).collect())
    };
    for step in 1..=steps {
        let y = psi.as_slice();
        let k1 = classical_rhs(&psi, &v, hbar);
        let k2 = classical_rhs(&stage(y, &k1, 0.5 * dt), &v, hbar);
        let k3 = classical_rhs(&stage(y, &k2, 0.5 * dt), &v, hbar);
        let k4 = classical_rhs(&stage(y, &k3, dt), &v, hbar);
        let next: Vec<Complex64> = par::map_range(n, |i| y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
        if let Some(i) = first_non_finite(&next) {
            return Err(DqmError::NumericalAbort {
                step,
                reason: format!("non-finite amplitude at index {i}"),
            });
        }
        psi = field_from(&grid, next);
        for (a, f) in filters.iter().enumerate() {
            spectral::multiply_axis(&mut psi, a, f);
        }
        let rho = psi.norm_sqr();
        let fraction = mask::support_fraction(&grid, &mask::node_mask(&rho));
        if fraction > CLASSICAL_MASK_LIMIT {
            return Err(DqmError::NumericalAbort {
                step,
                reason: format!(
                    "node mask covers {:.1}% of the support (limit {:.0}%)",
                    100.0 * fraction,
                    100.0 * CLASSICAL_MASK_LIMIT
                ),
            });
        }
        if step % stride == 0 {
            traj.push(
                step as f64 * dt,
                WaveField::from_parts(psi.clone(), w0.params().clone()),
            );
        }
    }
    Ok(traj)
}

/// Relative continuity defect `‖∂ρ/∂t + Σ_a ∂_a j_a‖ / ‖ρ‖` at an interior
/// stamp, with `j_a = (ħ/m_a) Im(ψ* ∂_a ψ)` and a central time difference.
pub fn continuity_residual(traj: &Trajectory, k: usize) -> Result<f64> {
    traj.interior(k)?;
    let h = traj.times[k + 1] - traj.times[k - 1];
    let (prev, cur, next) = (&traj.snapshots[k - 1], &traj.snapshots[k], &traj.snapshots[k + 1]);
    let grid = cur.grid();
    let hbar = cur.hbar();
    let psi = cur.psi();
    let grad = spectral::gradient(psi);
    let currents: Vec<ComplexField> = grad
        .iter()
        .zip(grid.masses())
        .map(|(g, m)| {
            let v = psi
                .as_slice()
                .iter()
                .zip(g.as_slice())
                .map(|(p, d)| Complex64::new(hbar / m * (p.conj() * d).im, 0.0))
                .collect();
            field_from(grid, v)
        })
        .collect();
    let div = spectral::divergence(&currents);
    let (mut num, mut den) = (0.0, 0.0);
    for (((a, b), c), d) in next
        .psi()
        .as_slice()
        .iter()
        .zip(prev.psi().as_slice())
        .zip(psi.as_slice())
        .zip(div.as_slice())
    {
        let rho_t = (a.norm_sqr() - b.norm_sqr()) / h;
        num += (rho_t + d.re).powi(2);
        den += c.norm_sqr().powi(2);
    }
    Ok((num / den).sqrt())
}

/// Classical particle ensemble; positions and momenta are `M × D` row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleState {
    pub time: f64,
    pub rank: usize,
    pub positions: Vec<f64>,
    pub momenta: Vec<f64>,
    pub weights: Vec<f64>,
}

impl EnsembleState {
    pub fn len(&self) -> usize {
        self.weights.len()
    }
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.rank..(i + 1) * self.rank]
    }
    pub fn momentum(&self, i: usize) -> &[f64] {
        &self.momenta[i * self.rank..(i + 1) * self.rank]
    }
    /// Weighted mean position per axis (no periodic unwrapping).
    pub fn mean_position(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rank];
        for (i, w) in self.weights.iter().enumerate() {
            for (o, x) in out.iter_mut().zip(self.position(i)) {
                *o += w * x;
            }
        }
        out
    }
}

/// Parameters of a characteristics run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub particles: usize,
    pub dt: f64,
    pub steps: usize,
    /// Record every `stride` steps; the initial and final states are always kept.
    pub stride: usize,
    pub seed: u64,
    /// Action unit used to rebuild `√ρ e^{iS/ħ}` for the momentum interpolation.
    pub hbar: f64,
}

/// Tensor-product cubic Lagrange interpolation of a lattice field; exact for
/// polynomials of degree ≤ 3 per axis away from the periodic seam.
struct LocalCubic<'a> {
    grid: &'a Grid,
    values: &'a [f64],
}

impl LocalCubic<'_> {
    fn basis(t: f64) -> ([f64; 4], [f64; 4]) {
        let l = [
            -t * (t - 1.0) * (t - 2.0) / 6.0,
            (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
            -(t + 1.0) * t * (t - 2.0) / 2.0,
            (t + 1.0) * t * (t - 1.0) / 6.0,
        ];
        let d = [
            -(3.0 * t * t - 6.0 * t + 2.0) / 6.0,
            (3.0 * t * t - 4.0 * t - 1.0) / 2.0,
            -(3.0 * t * t - 2.0 * t - 2.0) / 2.0,
            (3.0 * t * t - 1.0) / 6.0,
        ];
        (l, d)
    }

    /// Value and gradient at `x`.
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let g = self.grid;
        let rank = g.rank();
        let mut base = [0usize; 3];
        let mut lw = [[0.0; 4]; 3];
        let mut dw = [[0.0; 4]; 3];
        for a in 0..rank {
            let s = (x[a] + 0.5 * g.extents()[a]) / g.spacing()[a];
            let j = s.floor();
            let (l, d) = Self::basis(s - j);
            lw[a] = l;
            dw[a] = d.map(|v| v / g.spacing()[a]);
            let n = g.points()[a] as i64;
            base[a] = ((j as i64 - 1).rem_euclid(n)) as usize;
        }
        grad[..rank].fill(0.0);
        let mut value = 0.0;
        let combos = 4usize.pow(rank as u32);
        for c in 0..combos {
            let mut flat = 0usize;
            let mut off = [0usize; 3];
            let mut r = c;
            for a in (0..rank).rev() {
                off[a] = r % 4;
                r /= 4;
            }
            for a in 0..rank {
                let idx = (base[a] + off[a]) % g.points()[a];
                flat = flat * g.points()[a] + idx;
            }
            let v = self.values[flat];
            let w: f64 = (0..rank).map(|a| lw[a][off[a]]).product();
            value += w * v;
            for (b, gb) in grad.iter_mut().enumerate().take(rank) {
                let wd: f64 = (0..rank)
                    .map(|a| if a == b { dw[a][off[a]] } else { lw[a][off[a]] })
                    .product();
                *gb += wd * v;
            }
        }
        value
    }
}

/// Sample `M` particles from `ρ` (conditional inverse CDF over lattice cells,
/// uniform within each cell), give each the momentum `∇S` at its position by
/// spectral interpolation of `√ρ e^{iS/ħ}` (with `S` continued linearly into
/// the node mask), and advance with velocity Verlet under `-∇V`.
pub fn hj_characteristics(
    p0: &PolarField,
    grid: &Grid,
    v: &RealField,
    spec: &EnsembleSpec,
) -> Result<Vec<EnsembleState>> {
    if !grid.same_lattice(p0.grid()) || !grid.same_lattice(v.grid()) {
        return Err(DqmError::GridMismatch);
    }
    if spec.particles == 0 {
        return Err(DqmError::InvalidParameter(
            "ensemble needs at least one particle".into(),
        ));
    }
    validate_steps(spec.dt, spec.stride)?;
    let params = PhysicalParams::new(spec.hbar, RealField::zeros(p0.grid().clone()), 0.0)?;
    // continue S into the mask so the reference wavefunction has no phase jump
    let extended = extend_phase(grid, p0.phase().as_slice(), p0.node_mask());
    let psi: Vec<Complex64> = p0
        .rho()
        .as_slice()
        .iter()
        .zip(&extended)
        .map(|(r, s)| Complex64::from_polar(r.sqrt(), s / spec.hbar))
        .collect();
    let w = WaveField::new(field_from(p0.grid(), psi), params)?;
    let mut state = sample_ensemble(&w, spec.particles, spec.seed);
    let rank = grid.rank();
    let masses = grid.masses().to_vec();
    let cubic = LocalCubic {
        grid,
        values: v.as_slice(),
    };
    let force = |x: &[f64], f: &mut [f64]| {
        let mut g = [0.0; 3];
        cubic.eval(x, &mut g);
        for a in 0..rank {
            f[a] = -g[a];
        }
    };

    let mut out = vec![state.clone()];
    let mut forces = vec![0.0; state.positions.len()];
    compute_forces(&state.positions, rank, &force, &mut forces);
    let dt = spec.dt;
    for step in 1..=spec.steps {
        let positions = &mut state.positions;
        let momenta = &mut state.momenta;
        par::for_each_mut(momenta, |i, p| *p += 0.5 * dt * forces[i]);
        {
            let momenta = &*momenta;
            par::for_each_mut(positions, |i, x| {
                let a = i % rank;
                *x = grid.wrap(a, *x + dt * momenta[i] / masses[a]);
            });
        }
        compute_forces(positions, rank, &force, &mut forces);
        par::for_each_mut(momenta, |i, p| *p += 0.5 * dt * forces[i]);
        state.time = step as f64 * dt;
        if step % spec.stride == 0 || step == spec.steps {
            out.push(state.clone());
        }
    }
    Ok(out)
}

fn compute_forces<F>(positions: &[f64], rank: usize, force: &F, out: &mut [f64])
where
    F: Fn(&[f64], &mut [f64]) + Sync + Send,
{
    let n = positions.len() / rank;
    let per: Vec<[f64; 3]> = par::map_range(n, |i| {
        let mut f = [0.0; 3];
        force(&positions[i * rank..(i + 1) * rank], &mut f);
        f
    });
    for (i, f) in per.iter().enumerate() {
        out[i * rank..(i + 1) * rank].copy_from_slice(&f[..rank]);
    }
}

/// Per-particle energy `Σ p_a²/2m_a + V(x)` with `V` interpolated as in the
/// force evaluation.
pub fn ensemble_energies(state: &EnsembleState, grid: &Grid, v: &RealField) -> Vec<f64> {
    let cubic = LocalCubic {
        grid,
        values: v.as_slice(),
    };
    let masses = grid.masses();
    par::map_range(state.len(), |i| {
        let mut g = [0.0; 3];
        let pot = cubic.eval(state.position(i), &mut g);
        let kin: f64 = state
            .momentum(i)
            .iter()
            .zip(masses)
            .map(|(p, m)| p * p / (2.0 * m))
            .sum();
        kin + pot
    })
}

fn sample_ensemble(w: &WaveField, m: usize, seed: u64) -> EnsembleState {
    let grid = w.grid();
    let rank = grid.rank();
    let pts = grid.points();
    let rho: Vec<f64> = w.psi().as_slice().iter().map(|z| z.norm_sqr()).collect();
    // marginals[d][prefix * N_d + j] = Σ over trailing axes of ρ
    let mut marginals: Vec<Vec<f64>> = vec![Vec::new(); rank];
    marginals[rank - 1] = rho;
    for d in (0..rank - 1).rev() {
        let inner = pts[d + 1];
        marginals[d] = marginals[d + 1].chunks(inner).map(|c| c.iter().sum()).collect();
    }
    let cumulative: Vec<Vec<f64>> = marginals
        .iter()
        .zip(pts)
        .map(|(mg, &n)| {
            mg.chunks(n)
                .flat_map(|c| {
                    let mut acc = 0.0;
                    c.iter()
                        .map(move |v| {
                            acc += v;
                            acc
                        })
                        .collect::<Vec<_>>()
                })
                .collect()
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<f64> = (0..m * 2 * rank).map(|_| rng.random::<f64>()).collect();
    let interp = SpectralInterpolant::new(w.psi());
    let hbar = w.hbar();
    let per: Vec<(Vec<f64>, Vec<f64>)> = par::map_range(m, |i| {
        let u = &draws[i * 2 * rank..(i + 1) * 2 * rank];
        let mut prefix = 0usize;
        let mut x = vec![0.0; rank];
        for d in 0..rank {
            let n = pts[d];
            let block = &cumulative[d][prefix * n..(prefix + 1) * n];
            let total = block[n - 1];
            let target = u[2 * d] * total;
            let j = block.partition_point(|&c| c <= target).min(n - 1);
            x[d] = -0.5 * grid.extents()[d] + (j as f64 + u[2 * d + 1] - 0.5) * grid.spacing()[d];
            prefix = prefix * n + j;
        }
        let (psi, grad) = interp.eval(&x);
        let p = grad
            .iter()
            .map(|g| if psi.norm_sqr() > 0.0 { hbar * (g / psi).im } else { 0.0 })
            .collect();
        (x, p)
    });
    let mut positions = Vec::with_capacity(m * rank);
    let mut momenta = Vec::with_capacity(m * rank);
    for (x, p) in per {
        positions.extend(x.iter().enumerate().map(|(a, &xa)| grid.wrap(a, xa)));
        momenta.extend(p);
    }
    EnsembleState {
        time: 0.0,
        rank,
        positions,
        momenta,
        weights: vec![1.0 / m as f64; m],
    }
}

/// Gaussian kernel density estimate on the lattice with bandwidth
/// `h_a = 2Δx_a`, periodic minimum-image distances, truncated at `6h`.
pub fn kde_density(state: &EnsembleState, grid: &Arc<Grid>) -> Result<RealField> {
    if state.rank != grid.rank() {
        return Err(DqmError::InvalidParameter(format!(
            "ensemble rank {} does not match grid rank {}",
            state.rank,
            grid.rank()
        )));
    }
    let rank = grid.rank();
    let h: Vec<f64> = grid.spacing().iter().map(|dx| 2.0 * dx).collect();
    let reach: Vec<i64> = grid
        .spacing()
        .iter()
        .zip(&h)
        .map(|(dx, h)| (6.0 * h / dx).ceil() as i64)
        .collect();
    let norm: f64 = h.iter().map(|h| 1.0 / ((TAU).sqrt() * h)).product();
    let len = grid.len();
    let partials = par::chunked_fold(
        state.len(),
        || vec![0.0; len],
        |acc, range| {
            let mut taps: Vec<Vec<(usize, f64)>> = vec![Vec::new(); rank];
            for i in range {
                let x = state.position(i);
                for a in 0..rank {
                    taps[a].clear();
                    let n = grid.points()[a] as i64;
                    let dx = grid.spacing()[a];
                    let s = (x[a] + 0.5 * grid.extents()[a]) / dx;
                    let c = s.round() as i64;
                    for j in c - reach[a]..=c + reach[a] {
                        let idx = j.rem_euclid(n) as usize;
                        let xj = -0.5 * grid.extents()[a] + idx as f64 * dx;
                        let d = grid.min_image(a, x[a] - xj);
                        if d.abs() <= 6.0 * h[a] {
                            taps[a].push((idx, (-0.5 * (d / h[a]).powi(2)).exp()));
                        }
                    }
                }
                let w = state.weights[i] * norm;
                scatter(acc, grid.points(), &taps, 0, 0, w);
            }
        },
    );
    let mut total = vec![0.0; len];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    RealField::from_vec(grid.clone(), total)
}

fn scatter(acc: &mut [f64], pts: &[usize], taps: &[Vec<(usize, f64)>], axis: usize, flat: usize, w: f64) {
    for &(idx, k) in &taps[axis] {
        let f = flat * pts[axis] + idx;
        if axis + 1 == taps.len() {
            acc[f] += w * k;
        } else {
            scatter(acc, pts, taps, axis + 1, f, w * k);
        }
    }
}

/// `∫ |a - b|`.
pub fn l1_distance(a: &RealField, b: &RealField) -> Result<f64> {
    a.ensure_same_grid(b)?;
    Ok(a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        * a.grid().cell_volume())
}

impl HasGrid for Trajectory {
    fn grid(&self) -> &Arc<Grid> {
        self.snapshots[0].grid()
    }
}
