//! Fourier differentiation on the periodic lattice.
//!
//! Wavenumbers follow the symmetric convention
//! `k = 2π/L · [0, 1, …, N/2-1, -N/2, …, -1]`. First derivatives zero the
//! Nyquist bin (odd-derivative convention); second derivatives keep it as
//! `-(π N / L)^2`. Transforms run lane by lane along one axis at a time, so
//! every axis can be handled with a 1-D plan.

use std::f64::consts::TAU;
use std::sync::Arc;

use ndarray::ArrayD;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::{ComplexField, Grid, RealField};
use crate::par;

const I: Complex64 = Complex64::new(0.0, 1.0);

pub(crate) struct Plans {
    axes: Vec<AxisPlan>,
}

struct AxisPlan {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    k: Vec<f64>,
    k_odd: Vec<f64>,
}

impl Plans {
    pub(crate) fn new(grid: &Grid) -> Self {
        let mut planner = FftPlanner::new();
        let axes = (0..grid.rank())
            .map(|a| {
                let n = grid.points()[a];
                let k = wavenumbers(n, grid.extents()[a]);
                let mut k_odd = k.clone();
                k_odd[n / 2] = 0.0;
                AxisPlan {
                    forward: planner.plan_fft_forward(n),
                    inverse: planner.plan_fft_inverse(n),
                    k,
                    k_odd,
                }
            })
            .collect();
        Plans { axes }
    }
}

fn wavenumbers(n: usize, extent: f64) -> Vec<f64> {
    let dk = TAU / extent;
    (0..n)
        .map(|j| {
            let m = if j < n / 2 { j as f64 } else { j as f64 - n as f64 };
            m * dk
        })
        .collect()
}

/// Angular wavenumbers of axis `a` in FFT bin order (Nyquist bin negative).
pub fn axis_wavenumbers(grid: &Grid, a: usize) -> &[f64] {
    &grid.plans().axes[a].k
}

/// Forward transform along `axis`, pointwise `op(bin, coeff)`, inverse
/// transform. The `1/N` normalisation is applied on the way back.
fn filter_axis<F>(values: &mut ArrayD<Complex64>, grid: &Grid, axis: usize, op: F)
where
    F: Fn(usize, &mut Complex64) + Sync + Send,
{
    let plan = &grid.plans().axes[axis];
    let n = grid.points()[axis];
    let scale = 1.0 / n as f64;
    par::for_each_lane_mut(values, axis, |mut lane| {
        let mut buf: Vec<Complex64> = lane.iter().copied().collect();
        let mut scratch = vec![
            Complex64::default();
            plan.forward
                .get_inplace_scratch_len()
                .max(plan.inverse.get_inplace_scratch_len())
        ];
        plan.forward.process_with_scratch(&mut buf, &mut scratch);
        for (j, c) in buf.iter_mut().enumerate() {
            op(j, c);
        }
        plan.inverse.process_with_scratch(&mut buf, &mut scratch);
        for (dst, src) in lane.iter_mut().zip(&buf) {
            *dst = src * scale;
        }
    });
}

fn transform_axis(values: &mut ArrayD<Complex64>, grid: &Grid, axis: usize, forward: bool) {
    let plan = &grid.plans().axes[axis];
    let fft = if forward { &plan.forward } else { &plan.inverse };
    par::for_each_lane_mut(values, axis, |mut lane| {
        let mut buf: Vec<Complex64> = lane.iter().copied().collect();
        let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (dst, src) in lane.iter_mut().zip(&buf) {
            *dst = *src;
        }
    });
}

/// Multiply the spectrum of `f` along `axis` by `factor[bin]` in place.
pub fn multiply_axis(f: &mut ComplexField, axis: usize, factor: &[Complex64]) {
    let grid = f.grid().clone();
    assert_eq!(factor.len(), grid.points()[axis], "one factor per FFT bin");
    filter_axis(f.values_mut(), &grid, axis, |j, c| *c *= factor[j]);
}

/// `∂f/∂x_axis`.
pub fn partial(f: &ComplexField, axis: usize) -> ComplexField {
    let grid = f.grid().clone();
    let mut values = f.values().clone();
    let k = &grid.plans().axes[axis].k_odd;
    filter_axis(&mut values, &grid, axis, |j, c| *c *= I * k[j]);
    ComplexField::from_parts(grid, values)
}

/// `∂²f/∂x_axis²`.
pub fn second_partial(f: &ComplexField, axis: usize) -> ComplexField {
    let grid = f.grid().clone();
    let mut values = f.values().clone();
    let k = &grid.plans().axes[axis].k;
    filter_axis(&mut values, &grid, axis, |j, c| *c *= -k[j] * k[j]);
    ComplexField::from_parts(grid, values)
}

/// Per-axis partial derivatives.
pub fn gradient(f: &ComplexField) -> Vec<ComplexField> {
    (0..f.grid().rank()).map(|a| partial(f, a)).collect()
}

/// `Σ_a ∂²f/∂x_a²`.
pub fn laplacian(f: &ComplexField) -> ComplexField {
    let ones = vec![1.0; f.grid().rank()];
    weighted_laplacian(f, &ones)
}

/// `Σ_a w_a ∂²f/∂x_a²`, e.g. the kinetic operator with `w_a = -ħ²/2m_a`.
pub fn weighted_laplacian(f: &ComplexField, weights: &[f64]) -> ComplexField {
    let grid = f.grid().clone();
    let mut out = ArrayD::from_elem(grid.shape(), Complex64::default());
    for (a, &w) in weights.iter().enumerate() {
        let d2 = second_partial(f, a);
        out.zip_mut_with(d2.values(), |o, v| *o += w * v);
    }
    ComplexField::from_parts(grid, out)
}

/// `Σ_a ∂F_a/∂x_a` for a per-axis vector field.
pub fn divergence(components: &[ComplexField]) -> ComplexField {
    let grid = components[0].grid().clone();
    let mut out = ArrayD::from_elem(grid.shape(), Complex64::default());
    for (a, c) in components.iter().enumerate() {
        let d = partial(c, a);
        out.zip_mut_with(d.values(), |o, v| *o += v);
    }
    ComplexField::from_parts(grid, out)
}

pub fn partial_real(f: &RealField, axis: usize) -> RealField {
    partial(&f.to_complex(), axis).re()
}

pub fn gradient_real(f: &RealField) -> Vec<RealField> {
    let c = f.to_complex();
    (0..f.grid().rank()).map(|a| partial(&c, a).re()).collect()
}

pub fn laplacian_real(f: &RealField) -> RealField {
    laplacian(&f.to_complex()).re()
}

pub fn weighted_laplacian_real(f: &RealField, weights: &[f64]) -> RealField {
    weighted_laplacian(&f.to_complex(), weights).re()
}

/// Normalised N-dimensional Fourier coefficients (`FFT(f) / N_total`).
pub fn fourier_coefficients(f: &ComplexField) -> ArrayD<Complex64> {
    let grid = f.grid();
    let mut values = f.values().clone();
    for a in 0..grid.rank() {
        transform_axis(&mut values, grid, a, true);
    }
    let scale = 1.0 / grid.len() as f64;
    values.mapv_inplace(|c| c * scale);
    values
}

/// Trigonometric interpolant of a field and its gradient at off-lattice points.
pub struct SpectralInterpolant {
    grid: Arc<Grid>,
    value: Vec<Complex64>,
}

impl SpectralInterpolant {
    pub fn new(f: &ComplexField) -> Self {
        let grid = f.grid().clone();
        let value = fourier_coefficients(f).iter().copied().collect();
        SpectralInterpolant { grid, value }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Value and gradient at `x` (any real coordinates; periodic).
    pub fn eval(&self, x: &[f64]) -> (Complex64, Vec<Complex64>) {
        let g = &self.grid;
        let rank = g.rank();
        let mut value_w: Vec<Vec<Complex64>> = Vec::with_capacity(rank);
        let mut deriv_w: Vec<Vec<Complex64>> = Vec::with_capacity(rank);
        for (a, &xa) in x.iter().enumerate().take(rank) {
            let n = g.points()[a];
            let xi = xa + 0.5 * g.extents()[a];
            let k = &g.plans().axes[a].k;
            let mut vw = Vec::with_capacity(n);
            for (j, &kj) in k.iter().enumerate() {
                if j == n / 2 {
                    vw.push(Complex64::new((kj * xi).cos(), 0.0));
                } else {
                    vw.push(Complex64::from_polar(1.0, kj * xi));
                }
            }
            // derivative weights: Nyquist bin carries no first derivative
            let dw = (0..n)
                .map(|j| {
                    if j == n / 2 {
                        Complex64::default()
                    } else {
                        I * k[j] * vw[j]
                    }
                })
                .collect();
            value_w.push(vw);
            deriv_w.push(dw);
        }
        let dims = g.points();
        let vrefs: Vec<&[Complex64]> = value_w.iter().map(|v| v.as_slice()).collect();
        let value = contract(&self.value, dims, &vrefs);
        let grad = (0..rank)
            .map(|a| {
                let mut w = vrefs.clone();
                w[a] = &deriv_w[a];
                contract(&self.value, dims, &w)
            })
            .collect();
        (value, grad)
    }
}

fn contract(c: &[Complex64], dims: &[usize], weights: &[&[Complex64]]) -> Complex64 {
    if dims.len() == 1 {
        return c.iter().zip(weights[0]).map(|(a, b)| a * b).sum();
    }
    let stride: usize = dims[1..].iter().product();
    weights[0]
        .iter()
        .enumerate()
        .map(|(j, w)| w * contract(&c[j * stride..(j + 1) * stride], &dims[1..], &weights[1..]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use std::f64::consts::PI;

    fn grid1(l: f64, n: usize) -> Arc<Grid> {
        Arc::new(make_grid(&[l], &[n], &[1.0]).unwrap())
    }

    fn max_err(a: &ComplexField, f: impl Fn(&[f64]) -> Complex64) -> f64 {
        let g = a.grid();
        a.as_slice()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - f(&g.coords_of(i))).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn sine_derivatives() {
        let l = 20.0;
        let g = grid1(l, 64);
        let w = 2.0 * PI / l;
        let f = ComplexField::from_fn(g, |x| Complex64::new((w * x[0]).sin(), 0.0)).unwrap();
        let d = partial(&f, 0);
        assert!(max_err(&d, |x| Complex64::new(w * (w * x[0]).cos(), 0.0)) < 1e-10);
        let l2 = laplacian(&f);
        assert!(max_err(&l2, |x| Complex64::new(-w * w * (w * x[0]).sin(), 0.0)) < 1e-10);
    }

    #[test]
    fn constant_has_zero_derivatives() {
        let g = grid1(20.0, 32);
        let f = ComplexField::from_fn(g, |_| Complex64::new(3.0, -1.0)).unwrap();
        assert!(partial(&f, 0).max_abs() < 1e-13);
        assert!(laplacian(&f).max_abs() < 1e-13);
    }

    #[test]
    fn gaussian_derivatives() {
        let g = grid1(20.0, 256);
        let f = ComplexField::from_fn(g, |x| Complex64::new((-x[0] * x[0]).exp(), 0.0)).unwrap();
        let d = partial(&f, 0);
        assert!(max_err(&d, |x| Complex64::new(-2.0 * x[0] * (-x[0] * x[0]).exp(), 0.0)) < 1e-8);
        let l2 = laplacian(&f);
        let err = max_err(&l2, |x| {
            Complex64::new((4.0 * x[0] * x[0] - 2.0) * (-x[0] * x[0]).exp(), 0.0)
        });
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn mixed_axes_on_rank_two() {
        let g = Arc::new(make_grid(&[2.0 * PI, 4.0 * PI], &[16, 32], &[1.0, 1.0]).unwrap());
        let f = ComplexField::from_fn(g, |x| Complex64::new((x[0]).sin() * (0.5 * x[1]).cos(), 0.0)).unwrap();
        let dy = partial(&f, 1);
        assert!(max_err(&dy, |x| Complex64::new(-0.5 * x[0].sin() * (0.5 * x[1]).sin(), 0.0)) < 1e-12);
        let lap = laplacian(&f);
        assert!(max_err(&lap, |x| Complex64::new(-1.25 * x[0].sin() * (0.5 * x[1]).cos(), 0.0)) < 1e-12);
    }

    #[test]
    fn nyquist_first_derivative_is_zeroed() {
        let g = grid1(8.0, 8);
        let f = ComplexField::from_fn(g, |x| Complex64::new((PI * x[0]).cos(), 0.0)).unwrap();
        assert!(partial(&f, 0).max_abs() < 1e-13);
        // second derivative keeps the Nyquist mode
        let l2 = laplacian(&f);
        assert!(max_err(&l2, |x| Complex64::new(-PI * PI * (PI * x[0]).cos(), 0.0)) < 1e-12);
    }

    #[test]
    fn interpolant_reproduces_off_lattice_values() {
        let l = 10.0;
        let g = grid1(l, 64);
        let w = 2.0 * PI / l;
        let f = ComplexField::from_fn(g, |x| {
            Complex64::from_polar(1.0 + 0.3 * (w * x[0]).cos(), 3.0 * w * x[0])
        })
        .unwrap();
        let interp = SpectralInterpolant::new(&f);
        for &x in &[-4.93, 0.1234, 3.3] {
            let (v, d) = interp.eval(&[x]);
            let amp = 1.0 + 0.3 * (w * x).cos();
            let exact = Complex64::from_polar(amp, 3.0 * w * x);
            let damp = -0.3 * w * (w * x).sin();
            let dexact = Complex64::from_polar(1.0, 3.0 * w * x) * (damp + I * 3.0 * w * amp);
            assert!((v - exact).norm() < 1e-12);
            assert!((d[0] - dexact).norm() < 1e-11);
        }
    }
}
