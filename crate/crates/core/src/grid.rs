//! Uniform periodic lattices over configuration space and the sample
//! containers that live on them.
//!
//! Axis `a` covers `[-L_a/2, L_a/2)` with `N_a` samples at
//! `x_a[j] = -L_a/2 + j * dx_a`. Every axis carries the mass of the particle
//! coordinate it represents, so a rank-2 grid can be two 1-D particles with
//! different masses. Samples are stored row-major (last axis fastest).

use std::fmt;
use std::sync::{Arc, OnceLock};

use ndarray::{ArrayD, IxDyn};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{DqmError, Result};
use crate::spectral::Plans;

pub const MAX_RANK: usize = 3;
pub const MIN_POINTS: usize = 8;

#[derive(Clone, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct Grid {
    extents: Vec<f64>,
    points: Vec<usize>,
    masses: Vec<f64>,
    spacing: Vec<f64>,
    plans: Arc<OnceLock<Plans>>,
}

/// Serialized form of a [`Grid`]; spacings are always re-derived.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GridSpec {
    pub extents: Vec<f64>,
    pub points: Vec<usize>,
    pub masses: Vec<f64>,
}

impl TryFrom<GridSpec> for Grid {
    type Error = DqmError;
    fn try_from(s: GridSpec) -> Result<Self> {
        make_grid(&s.extents, &s.points, &s.masses)
    }
}

impl From<Grid> for GridSpec {
    fn from(g: Grid) -> Self {
        GridSpec {
            extents: g.extents,
            points: g.points,
            masses: g.masses,
        }
    }
}

/// Build a grid, validating every axis.
pub fn make_grid(extents: &[f64], points: &[usize], masses: &[f64]) -> Result<Grid> {
    let rank = extents.len();
    if rank == 0 || rank > MAX_RANK {
        return Err(DqmError::InvalidGrid(format!(
            "rank must be 1..={MAX_RANK}, got {rank}"
        )));
    }
    if points.len() != rank || masses.len() != rank {
        return Err(DqmError::InvalidGrid(format!(
            "extents, points and masses must have equal length ({rank}, {}, {})",
            points.len(),
            masses.len()
        )));
    }
    for a in 0..rank {
        let (l, n, m) = (extents[a], points[a], masses[a]);
        if !(l.is_finite() && l > 0.0) {
            return Err(DqmError::InvalidGrid(format!("axis {a}: extent {l} must be positive")));
        }
        if n < MIN_POINTS {
            return Err(DqmError::InvalidGrid(format!(
                "axis {a}: {n} points, need at least {MIN_POINTS}"
            )));
        }
        if n % 2 != 0 {
            return Err(DqmError::InvalidGrid(format!("axis {a}: point count {n} is odd")));
        }
        if !(m.is_finite() && m > 0.0) {
            return Err(DqmError::InvalidGrid(format!("axis {a}: mass {m} must be positive")));
        }
    }
    let spacing = extents.iter().zip(points).map(|(&l, &n)| l / n as f64).collect();
    Ok(Grid {
        extents: extents.to_vec(),
        points: points.to_vec(),
        masses: masses.to_vec(),
        spacing,
        plans: Arc::new(OnceLock::new()),
    })
}

impl Grid {
    pub fn rank(&self) -> usize {
        self.extents.len()
    }
    pub fn extents(&self) -> &[f64] {
        &self.extents
    }
    pub fn points(&self) -> &[usize] {
        &self.points
    }
    pub fn masses(&self) -> &[f64] {
        &self.masses
    }
    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }
    pub fn len(&self) -> usize {
        self.points.iter().product()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn shape(&self) -> IxDyn {
        IxDyn(&self.points)
    }
    /// Quadrature weight `prod dx_a`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }
    pub fn spec(&self) -> GridSpec {
        self.clone().into()
    }

    /// Lattice coordinates of axis `a`.
    pub fn axis_coords(&self, a: usize) -> Vec<f64> {
        let (l, dx) = (self.extents[a], self.spacing[a]);
        (0..self.points[a]).map(|j| -0.5 * l + j as f64 * dx).collect()
    }

    /// Row-major multi-index of a flat index.
    pub fn unravel(&self, mut flat: usize, out: &mut [usize]) {
        for a in (0..self.rank()).rev() {
            out[a] = flat % self.points[a];
            flat /= self.points[a];
        }
    }

    /// Coordinates of every lattice point, flattened row-major.
    pub fn coords_of(&self, flat: usize) -> Vec<f64> {
        let mut idx = vec![0; self.rank()];
        self.unravel(flat, &mut idx);
        idx.iter()
            .enumerate()
            .map(|(a, &j)| -0.5 * self.extents[a] + j as f64 * self.spacing[a])
            .collect()
    }

    /// Coordinate of axis `a` at every lattice point.
    pub fn coordinate_field(self: &Arc<Self>, a: usize) -> RealField {
        let x = self.axis_coords(a);
        let values = ArrayD::from_shape_fn(self.shape(), |ix| x[ix[a]]);
        RealField {
            grid: Arc::clone(self),
            values,
        }
    }

    /// Wrap a coordinate into the periodic cell `[-L_a/2, L_a/2)`.
    pub fn wrap(&self, a: usize, x: f64) -> f64 {
        let l = self.extents[a];
        let shifted = (x + 0.5 * l).rem_euclid(l);
        shifted - 0.5 * l
    }

    /// Minimum-image separation along axis `a`.
    pub fn min_image(&self, a: usize, dx: f64) -> f64 {
        let l = self.extents[a];
        dx - l * (dx / l).round()
    }

    pub(crate) fn plans(&self) -> &Plans {
        self.plans.get_or_init(|| Plans::new(self))
    }

    pub fn same_lattice(&self, other: &Grid) -> bool {
        self.extents == other.extents && self.points == other.points && self.masses == other.masses
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.same_lattice(other)
    }
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("extents", &self.extents)
            .field("points", &self.points)
            .field("masses", &self.masses)
            .field("spacing", &self.spacing)
            .finish()
    }
}

macro_rules! field_type {
    ($name:ident, $elem:ty, $finite:expr) => {
        #[derive(Clone, Debug)]
        pub struct $name {
            grid: Arc<Grid>,
            values: ArrayD<$elem>,
        }

        impl $name {
            /// Wrap samples, checking the shape and that every sample is finite.
            pub fn new(grid: Arc<Grid>, values: ArrayD<$elem>) -> Result<Self> {
                if values.shape() != grid.points() {
                    return Err(DqmError::ShapeMismatch {
                        expected: grid.len(),
                        got: values.len(),
                    });
                }
                let finite: fn(&$elem) -> bool = $finite;
                if let Some(index) = values.iter().position(|v| !finite(v)) {
                    return Err(DqmError::NonFinite { index });
                }
                Ok(Self { grid, values })
            }

            pub fn from_vec(grid: Arc<Grid>, values: Vec<$elem>) -> Result<Self> {
                let got = values.len();
                let arr = ArrayD::from_shape_vec(grid.shape(), values).map_err(|_| DqmError::ShapeMismatch {
                    expected: grid.len(),
                    got,
                })?;
                Self::new(grid, arr)
            }

            /// Construction for values produced internally from finite inputs.
            pub(crate) fn from_parts(grid: Arc<Grid>, values: ArrayD<$elem>) -> Self {
                debug_assert_eq!(values.shape(), grid.points());
                Self { grid, values }
            }

            pub fn zeros(grid: Arc<Grid>) -> Self {
                let values = ArrayD::from_elem(grid.shape(), <$elem>::default());
                Self { grid, values }
            }

            /// Sample `f` at every lattice point.
            pub fn from_fn(grid: Arc<Grid>, f: impl Fn(&[f64]) -> $elem) -> Result<Self> {
                let coords: Vec<Vec<f64>> = (0..grid.rank()).map(|a| grid.axis_coords(a)).collect();
                let mut x = vec![0.0; grid.rank()];
                let values = ArrayD::from_shape_fn(grid.shape(), |ix| {
                    for (a, xa) in x.iter_mut().enumerate() {
                        *xa = coords[a][ix[a]];
                    }
                    f(&x)
                });
                Self::new(grid, values)
            }

            pub fn grid(&self) -> &Arc<Grid> {
                &self.grid
            }
            pub fn values(&self) -> &ArrayD<$elem> {
                &self.values
            }
            pub fn values_mut(&mut self) -> &mut ArrayD<$elem> {
                &mut self.values
            }
            pub fn into_values(self) -> ArrayD<$elem> {
                self.values
            }
            /// Row-major sample slice.
            pub fn as_slice(&self) -> &[$elem] {
                self.values.as_slice().expect("fields are stored contiguously")
            }
            pub fn as_slice_mut(&mut self) -> &mut [$elem] {
                self.values
                    .as_slice_mut()
                    .expect("fields are stored contiguously")
            }
            pub fn len(&self) -> usize {
                self.values.len()
            }
            pub fn is_empty(&self) -> bool {
                self.values.is_empty()
            }
            pub fn map<U>(&self, f: impl Fn($elem) -> U) -> ArrayD<U> {
                self.values.mapv(f)
            }
            pub fn ensure_same_grid<T: HasGrid>(&self, other: &T) -> Result<()> {
                if Arc::ptr_eq(&self.grid, other.grid()) || *self.grid == **other.grid() {
                    Ok(())
                } else {
                    Err(DqmError::GridMismatch)
                }
            }
        }

        impl HasGrid for $name {
            fn grid(&self) -> &Arc<Grid> {
                &self.grid
            }
        }
    };
}

pub trait HasGrid {
    fn grid(&self) -> &Arc<Grid>;
}

field_type!(RealField, f64, |v: &f64| v.is_finite());
field_type!(ComplexField, Complex64, |v: &Complex64| v.re.is_finite()
    && v.im.is_finite());

impl RealField {
    pub fn to_complex(&self) -> ComplexField {
        ComplexField::from_parts(self.grid.clone(), self.values.mapv(|v| Complex64::new(v, 0.0)))
    }
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

impl ComplexField {
    pub fn re(&self) -> RealField {
        RealField::from_parts(self.grid.clone(), self.values.mapv(|v| v.re))
    }
    pub fn im(&self) -> RealField {
        RealField::from_parts(self.grid.clone(), self.values.mapv(|v| v.im))
    }
    pub fn norm_sqr(&self) -> RealField {
        RealField::from_parts(self.grid.clone(), self.values.mapv(|v| v.norm_sqr()))
    }
    pub fn scale(&self, s: Complex64) -> ComplexField {
        ComplexField::from_parts(self.grid.clone(), self.values.mapv(|v| v * s))
    }
    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Rectangle-rule quadrature `sum f * prod dx`, exact for band-limited
/// periodic integrands.
pub fn integrate(f: &RealField) -> f64 {
    f.as_slice().iter().sum::<f64>() * f.grid().cell_volume()
}

pub fn integrate_complex(f: &ComplexField) -> Complex64 {
    f.as_slice().iter().sum::<Complex64>() * f.grid().cell_volume()
}

/// `integrate(f * g)` without materialising the product.
pub fn integrate_product(f: &[f64], g: &[f64], grid: &Grid) -> f64 {
    f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() * grid.cell_volume()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_spacing() {
        let g = make_grid(&[20.0], &[256], &[1.0]).unwrap();
        assert_eq!(g.spacing()[0], 0.078125);
        assert_eq!(g.spacing()[0] * 256.0, 20.0);
        assert_eq!(g.axis_coords(0)[0], -10.0);
    }

    #[test]
    fn two_particle_grid() {
        let g = make_grid(&[20.0, 20.0], &[64, 64], &[1.0, 2.0]).unwrap();
        assert_eq!(g.rank(), 2);
        assert_eq!(g.masses(), &[1.0, 2.0]);
        assert_eq!(g.len(), 4096);
        assert_eq!(g.spacing(), &[0.3125, 0.3125]);
    }

    #[test]
    fn rejects_bad_axes() {
        assert!(matches!(
            make_grid(&[10.0], &[7], &[1.0]),
            Err(DqmError::InvalidGrid(_))
        ));
        assert!(make_grid(&[10.0], &[6], &[1.0]).is_err());
        assert!(make_grid(&[-1.0], &[8], &[1.0]).is_err());
        assert!(make_grid(&[1.0], &[8], &[0.0]).is_err());
        assert!(make_grid(&[1.0; 4], &[8; 4], &[1.0; 4]).is_err());
        assert!(make_grid(&[1.0, 1.0], &[8], &[1.0]).is_err());
    }

    #[test]
    fn field_rejects_nan_and_bad_shape() {
        let g = Arc::new(make_grid(&[1.0], &[8], &[1.0]).unwrap());
        let mut v = vec![0.0; 8];
        v[3] = f64::NAN;
        assert!(matches!(
            RealField::from_vec(g.clone(), v),
            Err(DqmError::NonFinite { index: 3 })
        ));
        assert!(RealField::from_vec(g, vec![0.0; 9]).is_err());
    }

    #[test]
    fn integrate_examples() {
        let g = Arc::new(make_grid(&[20.0], &[256], &[1.0]).unwrap());
        let one = RealField::from_fn(g.clone(), |_| 1.0).unwrap();
        assert!((integrate(&one) - 20.0).abs() < 1e-12);

        let s = RealField::from_fn(g.clone(), |x| (2.0 * std::f64::consts::PI * x[0] / 20.0).sin()).unwrap();
        assert!(integrate(&s).abs() < 1e-12);

        let sd = 1.3_f64;
        let norm = 1.0 / (sd * (2.0 * std::f64::consts::PI).sqrt());
        let gauss = RealField::from_fn(g, |x| norm * (-x[0] * x[0] / (2.0 * sd * sd)).exp()).unwrap();
        assert!((integrate(&gauss) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grid_serde_round_trip_rederives_spacing() {
        let g = make_grid(&[20.0, 10.0], &[64, 32], &[1.0, 2.0]).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        let back: Grid = serde_json::from_str(&s).unwrap();
        assert_eq!(g, back);
        assert_eq!(back.spacing(), g.spacing());
        let bad = r#"{"extents":[1.0],"points":[7],"masses":[1.0]}"#;
        assert!(serde_json::from_str::<Grid>(bad).is_err());
    }

    #[test]
    fn wrap_and_min_image() {
        let g = make_grid(&[10.0], &[8], &[1.0]).unwrap();
        assert!((g.wrap(0, 6.0) - (-4.0)).abs() < 1e-12);
        assert!((g.wrap(0, -5.0) - (-5.0)).abs() < 1e-12);
        assert!((g.min_image(0, 9.0) - (-1.0)).abs() < 1e-12);
    }
}
