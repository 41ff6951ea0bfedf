//! Seeded random node-free states `ψ = exp(g + i h)` with `g`, `h` short
//! trigonometric series, plus an optional integer phase winding per axis.
//! `ρ = e^{2g}` never vanishes and the spectrum of `ψ` decays faster than
//! any exponential, so these states are band-limited to round-off on modest
//! grids.

use std::f64::consts::TAU;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::grid::{make_grid, ComplexField, Grid};
use crate::wavefield::{normalize, PhysicalParams, WaveField};

/// Highest Fourier mode per axis in `g` and `h`.
pub const MAX_MODE: usize = 3;

struct Series {
    // per axis, per mode n = 1..=MAX_MODE: (cos, sin) coefficients
    coeffs: Vec<Vec<(f64, f64)>>,
}

impl Series {
    fn draw(rng: &mut ChaCha8Rng, rank: usize, amplitude: f64) -> Self {
        let coeffs = (0..rank)
            .map(|_| {
                (1..=MAX_MODE)
                    .map(|n| {
                        let s = amplitude / n as f64;
                        (rng.random_range(-s..s), rng.random_range(-s..s))
                    })
                    .collect()
            })
            .collect();
        Series { coeffs }
    }

    fn eval(&self, grid: &Grid, x: &[f64]) -> f64 {
        let mut v = 0.0;
        for (a, modes) in self.coeffs.iter().enumerate() {
            let k0 = TAU / grid.extents()[a];
            for (j, (c, s)) in modes.iter().enumerate() {
                let kx = (j + 1) as f64 * k0 * x[a];
                v += c * kx.cos() + s * kx.sin();
            }
        }
        v
    }
}

/// A normalized random node-free state on `grid`, free of any potential.
/// The same seed gives the same state on the same grid.
pub fn random_state(grid: Arc<Grid>, seed: u64) -> Result<WaveField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rank = grid.rank();
    let g = Series::draw(&mut rng, rank, 0.4);
    let h = Series::draw(&mut rng, rank, 1.0);
    let winding: Vec<f64> = (0..rank)
        .map(|a| rng.random_range(-2i32..=2) as f64 * TAU / grid.extents()[a])
        .collect();
    let psi = ComplexField::from_fn(grid.clone(), |x| {
        let phase = h.eval(&grid, x) + winding.iter().zip(x).map(|(k, x)| k * x).sum::<f64>();
        Complex64::from_polar(g.eval(&grid, x).exp(), phase)
    })?;
    normalize(&WaveField::new(psi, PhysicalParams::free(grid))?)
}

/// The 1D lattice used for random-state checks: `[-5, 5)`, 128 points.
pub fn random_grid_1d() -> Arc<Grid> {
    Arc::new(make_grid(&[10.0], &[128], &[1.0]).expect("valid grid"))
}

/// The 2D lattice used for random-state checks: `[-5, 5)²`, 128 × 128 points,
/// masses 1 and 2.
pub fn random_grid_2d() -> Arc<Grid> {
    Arc::new(make_grid(&[10.0, 10.0], &[128, 128], &[1.0, 2.0]).expect("valid grid"))
}
