//! Run configuration and initial-state presets.
//!
//! A configuration is one JSON document. Every field has a default, and
//! [`ScenarioConfig::resolved`] materializes them so the archived copy in an
//! output directory reproduces the run by itself.

use std::f64::consts::{FRAC_PI_4, PI, TAU};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{DqmError, Result};
use crate::evolution::{classical_dt_bound, Mode};
use crate::grid::{make_grid, ComplexField, Grid, RealField};
use crate::io;
use crate::wavefield::{normalize, PhysicalParams, WaveField};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    PlaneWave,
    GaussianPacket,
    HarmonicGround,
    HarmonicCoherent,
    TwoParticleProduct,
    TwoParticleEntangled,
    FromFile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub extents: Vec<f64>,
    pub points: Vec<usize>,
}

/// The default box is `[-6π, 6π)` so that the default momentum `p0 = 2`
/// winds an integral number of times across it.
impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            extents: vec![12.0 * PI],
            points: vec![512],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsConfig {
    pub hbar: f64,
    pub masses: Vec<f64>,
    pub lambda: f64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        PhysicsConfig {
            hbar: 1.0,
            masses: vec![1.0],
            lambda: 0.0,
        }
    }
}

/// Scenario parameters. `omega` sets `V = Σ_a ½ m_a ω² x_a²` for every
/// scenario (zero means free motion); `theta` is the mixing angle of the
/// entangled state; `file` names a binary field dump for `from_file`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioParams {
    pub x0: Vec<f64>,
    pub p0: Vec<f64>,
    pub sigma: Vec<f64>,
    pub omega: f64,
    pub theta: f64,
    pub file: Option<PathBuf>,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            x0: vec![0.0],
            p0: vec![2.0],
            sigma: vec![1.0],
            omega: 0.0,
            theta: FRAC_PI_4,
            file: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub mode: Mode,
    pub dt: f64,
    pub steps: usize,
    pub stride: usize,
    pub seed: u64,
    /// Characteristics-ensemble size; 0 disables the ensemble.
    pub ensemble: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            mode: Mode::Linear,
            dt: 1e-3,
            steps: 1000,
            stride: 10,
            seed: 0,
            ensemble: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub lambdas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            lambdas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    /// Seeded random node-free states added to the invariant suite.
    pub random_states: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig { random_states: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("dqm-out"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub grid: GridConfig,
    pub physics: PhysicsConfig,
    pub params: ScenarioParams,
    pub integrator: IntegratorConfig,
    pub sweep: SweepConfig,
    pub check: CheckConfig,
    pub output: OutputConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            scenario: Scenario::GaussianPacket,
            grid: GridConfig::default(),
            physics: PhysicsConfig::default(),
            params: ScenarioParams::default(),
            integrator: IntegratorConfig::default(),
            sweep: SweepConfig::default(),
            check: CheckConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

fn param(msg: impl Into<String>) -> DqmError {
    DqmError::InvalidParameter(msg.into())
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Reads a config; a relative `params.file` is taken relative to the
    /// config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(f) = &cfg.params.file {
            if f.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.params.file = Some(base.join(f));
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// A copy with per-axis defaults broadcast to the grid rank, so every
    /// vector field has one entry per axis. For `from_file` the grid is read
    /// from the dump header.
    pub fn resolved(&self) -> Result<Self> {
        let mut c = self.clone();
        if c.scenario == Scenario::FromFile {
            let path = c
                .params
                .file
                .as_ref()
                .ok_or_else(|| param("from_file needs params.file"))?;
            let masses = broadcast("physics.masses", &c.physics.masses, file_rank(path)?)?;
            let psi = io::load_field_binary(path, &masses)?;
            c.grid.extents = psi.grid().extents().to_vec();
            c.grid.points = psi.grid().points().to_vec();
        }
        if matches!(
            c.scenario,
            Scenario::TwoParticleProduct | Scenario::TwoParticleEntangled
        ) && c.grid.extents.len() != 2
        {
            return Err(param(format!("{:?} needs a rank-2 grid", c.scenario)));
        }
        let rank = c.grid.extents.len();
        if rank == 0 || rank > 3 {
            return Err(DqmError::InvalidGrid(format!("rank must be 1..=3, got {rank}")));
        }
        c.grid.points = broadcast("grid.points", &c.grid.points, rank)?;
        c.physics.masses = broadcast("physics.masses", &c.physics.masses, rank)?;
        c.params.x0 = broadcast("params.x0", &c.params.x0, rank)?;
        c.params.p0 = broadcast("params.p0", &c.params.p0, rank)?;
        c.params.sigma = broadcast("params.sigma", &c.params.sigma, rank)?;
        Ok(c)
    }

    pub fn grid(&self) -> Result<Arc<Grid>> {
        Ok(Arc::new(make_grid(
            &self.grid.extents,
            &self.grid.points,
            &self.physics.masses,
        )?))
    }

    /// `V = Σ_a ½ m_a ω² x_a²`.
    pub fn potential(&self, grid: &Arc<Grid>) -> Result<RealField> {
        let w2 = self.params.omega * self.params.omega;
        let masses = grid.masses().to_vec();
        RealField::from_fn(grid.clone(), |x| {
            x.iter().zip(&masses).map(|(x, m)| 0.5 * m * w2 * x * x).sum()
        })
    }

    /// Checks everything that does not need the state itself.
    pub fn validate(&self) -> Result<()> {
        let c = self;
        if !(c.physics.hbar.is_finite() && c.physics.hbar > 0.0) {
            return Err(param(format!("physics.hbar must be positive, got {}", c.physics.hbar)));
        }
        if !c.physics.lambda.is_finite() {
            return Err(param("physics.lambda must be finite"));
        }
        if !(c.params.omega.is_finite() && c.params.omega >= 0.0) {
            return Err(param(format!(
                "params.omega must be non-negative, got {}",
                c.params.omega
            )));
        }
        let integ = &c.integrator;
        if !(integ.dt.is_finite() && integ.dt > 0.0) {
            return Err(param(format!("integrator.dt must be positive, got {}", integ.dt)));
        }
        if integ.stride == 0 {
            return Err(param("integrator.stride must be at least 1"));
        }
        if c.sweep.lambdas.iter().any(|l| !l.is_finite()) {
            return Err(param("sweep.lambdas must be finite"));
        }
        let grid = c.grid()?;
        if integ.mode == Mode::Classical {
            let bound = classical_dt_bound(&grid, c.physics.hbar);
            if integ.dt > bound {
                return Err(param(format!(
                    "integrator.dt = {} exceeds the classical stability bound {bound:e}",
                    integ.dt
                )));
            }
        }
        if matches!(c.scenario, Scenario::HarmonicGround | Scenario::HarmonicCoherent) && c.params.omega <= 0.0 {
            return Err(param(format!("{:?} needs params.omega > 0", c.scenario)));
        }
        if c.scenario != Scenario::FromFile {
            for a in 0..grid.rank() {
                let dx = grid.spacing()[a];
                let p_max = 0.5 * PI * c.physics.hbar / dx;
                if c.params.p0[a].abs() >= p_max {
                    return Err(DqmError::Resolution(format!(
                        "axis {a}: |p0| = {} must stay below 0.5·πħ/Δx = {p_max}",
                        c.params.p0[a].abs()
                    )));
                }
            }
        }
        let sigmas = match c.scenario {
            Scenario::GaussianPacket | Scenario::TwoParticleProduct | Scenario::TwoParticleEntangled => {
                c.params.sigma.clone()
            }
            Scenario::HarmonicGround | Scenario::HarmonicCoherent => self.harmonic_sigmas(),
            Scenario::PlaneWave | Scenario::FromFile => Vec::new(),
        };
        for (a, s) in sigmas.iter().enumerate() {
            let dx = grid.spacing()[a];
            if s.is_nan() || *s < 4.0 * dx {
                return Err(DqmError::Resolution(format!(
                    "axis {a}: sigma = {s} must be at least 4Δx = {}",
                    4.0 * dx
                )));
            }
        }
        if c.scenario == Scenario::PlaneWave {
            for a in 0..grid.rank() {
                let turns = c.params.p0[a] * grid.extents()[a] / (TAU * c.physics.hbar);
                if (turns - turns.round()).abs() > 1e-9 {
                    return Err(param(format!(
                        "axis {a}: plane wave needs p0·L/(2πħ) integral, got {turns}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Ground-state widths `√(ħ / 2 m_a ω)`.
    fn harmonic_sigmas(&self) -> Vec<f64> {
        self.physics
            .masses
            .iter()
            .map(|m| (self.physics.hbar / (2.0 * m * self.params.omega)).sqrt())
            .collect()
    }
}

fn broadcast<T: Clone>(name: &str, v: &[T], rank: usize) -> Result<Vec<T>> {
    match v.len() {
        n if n == rank => Ok(v.to_vec()),
        1 => Ok(vec![v[0].clone(); rank]),
        n => Err(param(format!("{name} has {n} entries for a rank-{rank} grid"))),
    }
}

fn file_rank(path: &Path) -> Result<usize> {
    use std::io::Read;
    let mut b = [0u8; 8];
    std::fs::File::open(path)?
        .read_exact(&mut b)
        .map_err(|e| DqmError::Format(format!("{}: {e}", path.display())))?;
    Ok(u64::from_le_bytes(b) as usize)
}

fn gaussian(x: f64, x0: f64, p0: f64, s: f64, hbar: f64) -> Complex64 {
    Complex64::from_polar((-(x - x0).powi(2) / (4.0 * s * s)).exp(), p0 * x / hbar)
}

/// Builds the normalized initial state of a config (resolved internally).
pub fn build_scenario(cfg: &ScenarioConfig) -> Result<WaveField> {
    let c = cfg.resolved()?;
    c.validate()?;
    let grid = c.grid()?;
    let hbar = c.physics.hbar;
    let params = PhysicalParams::new(hbar, c.potential(&grid)?, c.physics.lambda)?;
    let p = &c.params;
    let psi = match c.scenario {
        Scenario::PlaneWave => ComplexField::from_fn(grid.clone(), |x| {
            Complex64::from_polar(1.0, x.iter().zip(&p.p0).map(|(x, k)| k * x).sum::<f64>() / hbar)
        })?,
        Scenario::GaussianPacket | Scenario::TwoParticleProduct => ComplexField::from_fn(grid.clone(), |x| {
            (0..x.len())
                .map(|a| gaussian(x[a], p.x0[a], p.p0[a], p.sigma[a], hbar))
                .product()
        })?,
        Scenario::HarmonicGround => {
            let s = c.harmonic_sigmas();
            ComplexField::from_fn(grid.clone(), |x| {
                (0..x.len()).map(|a| gaussian(x[a], 0.0, 0.0, s[a], hbar)).product()
            })?
        }
        Scenario::HarmonicCoherent => {
            let s = c.harmonic_sigmas();
            ComplexField::from_fn(grid.clone(), |x| {
                (0..x.len())
                    .map(|a| gaussian(x[a], p.x0[a], p.p0[a], s[a], hbar))
                    .product()
            })?
        }
        Scenario::TwoParticleEntangled => {
            // one-particle orbitals A = (x0[0], p0[0], σ[0]) and B = (x0[1], p0[1], σ[1])
            let orb = |x: f64, j: usize| gaussian(x, p.x0[j], p.p0[j], p.sigma[j], hbar);
            let (c0, s0) = (p.theta.cos(), p.theta.sin());
            ComplexField::from_fn(grid.clone(), |x| {
                c0 * orb(x[0], 0) * orb(x[1], 1) + s0 * orb(x[0], 1) * orb(x[1], 0)
            })?
        }
        Scenario::FromFile => {
            let path = p.file.as_ref().ok_or_else(|| param("from_file needs params.file"))?;
            let loaded = io::load_field_binary(path, &c.physics.masses)?;
            ComplexField::from_vec(grid.clone(), loaded.as_slice().to_vec())?
        }
    };
    normalize(&WaveField::new(psi, params)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{apply_momentum, axis_expectations, classical_momentum_field, quantum_potential};
    use crate::wavefield::to_polar;

    #[test]
    fn defaults_round_trip_through_json() {
        let c = ScenarioConfig::default().resolved().unwrap();
        let text = c.to_json().unwrap();
        assert_eq!(ScenarioConfig::from_json(&text).unwrap(), c);
        let partial = ScenarioConfig::from_json(r#"{"scenario": "plane_wave", "params": {"p0": [1.0]}}"#).unwrap();
        assert_eq!(partial.grid, GridConfig::default());
        assert!(ScenarioConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn plane_wave_momenta() {
        let mut c = ScenarioConfig {
            scenario: Scenario::PlaneWave,
            ..Default::default()
        };
        c.grid.extents = vec![8.0 * PI];
        c.grid.points = vec![128];
        let w = build_scenario(&c).unwrap();
        let p = axis_expectations(&apply_momentum(w.psi(), 1.0), &w).unwrap();
        assert!((p[0].re - 2.0).abs() < 1e-10);
        let pcl = classical_momentum_field(&w).unwrap();
        let pcl_mean = crate::grid::integrate_product(pcl[0].as_slice(), w.density().as_slice(), w.grid());
        assert!((pcl_mean - 2.0).abs() < 1e-10);
        c.grid.extents = vec![40.0];
        assert!(matches!(build_scenario(&c), Err(DqmError::InvalidParameter(_))));
    }

    #[test]
    fn gaussian_packet_moments() {
        let w = build_scenario(&ScenarioConfig::default()).unwrap();
        let x = w.grid().coordinate_field(0);
        let xm = crate::grid::integrate_product(x.as_slice(), w.density().as_slice(), w.grid());
        assert!(xm.abs() < 1e-8);
        let p = axis_expectations(&apply_momentum(w.psi(), 1.0), &w).unwrap();
        assert!((p[0].re - 2.0).abs() < 1e-8);
    }

    #[test]
    fn resolution_bounds() {
        let mut c = ScenarioConfig::default();
        c.params.sigma = vec![0.2];
        assert!(matches!(build_scenario(&c), Err(DqmError::Resolution(m)) if m.contains("4Δx")));
        let mut c = ScenarioConfig::default();
        c.params.p0 = vec![25.0];
        assert!(matches!(build_scenario(&c), Err(DqmError::Resolution(m)) if m.contains("πħ/Δx")));
        let mut c = ScenarioConfig::default();
        c.integrator.mode = Mode::Classical;
        c.integrator.dt = 0.1;
        assert!(matches!(build_scenario(&c), Err(DqmError::InvalidParameter(m)) if m.contains("stability")));
        let c = ScenarioConfig {
            scenario: Scenario::HarmonicGround,
            ..Default::default()
        };
        assert!(build_scenario(&c).is_err());
    }

    #[test]
    fn harmonic_ground_width() {
        let mut c = ScenarioConfig {
            scenario: Scenario::HarmonicGround,
            ..Default::default()
        };
        c.params.omega = 2.0;
        let w = build_scenario(&c).unwrap();
        let x = w.grid().coordinate_field(0);
        let x2: Vec<f64> = x.as_slice().iter().map(|x| x * x).collect();
        let var = crate::grid::integrate_product(&x2, w.density().as_slice(), w.grid());
        assert!((var - 0.25).abs() < 1e-10);
    }

    #[test]
    fn two_particle_product_separates_q() {
        let mut c = ScenarioConfig {
            scenario: Scenario::TwoParticleProduct,
            ..Default::default()
        };
        c.grid = GridConfig {
            extents: vec![32.0, 32.0],
            points: vec![256, 256],
        };
        c.physics.masses = vec![1.0, 2.0];
        c.params.x0 = vec![-1.0, 1.5];
        c.params.p0 = vec![0.5, -1.0];
        c.params.sigma = vec![1.0, 1.3];
        let w = build_scenario(&c).unwrap();
        let q = quantum_potential(&to_polar(&w).unwrap(), w.grid(), 1.0).unwrap();
        // Q of a Gaussian of width s in one coordinate: ħ²/(2m)(1/(2s²) - (x-x0)²/(4s⁴))
        let q1 =
            |x: f64, m: f64, x0: f64, s: f64| (1.0 / (2.0 * s * s) - (x - x0).powi(2) / (4.0 * s.powi(4))) / (2.0 * m);
        let polar = to_polar(&w).unwrap();
        let mut worst: f64 = 0.0;
        for (i, v) in q.as_slice().iter().enumerate() {
            if polar.node_mask()[i] {
                continue;
            }
            let x = w.grid().coords_of(i);
            let expect = q1(x[0], 1.0, -1.0, 1.0) + q1(x[1], 2.0, 1.5, 1.3);
            if polar.rho().as_slice()[i] > 1e-8 * polar.rho().max() {
                worst = worst.max((v - expect).abs());
            }
        }
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn entangled_state_is_symmetric_at_quarter_pi() {
        let mut c = ScenarioConfig {
            scenario: Scenario::TwoParticleEntangled,
            ..Default::default()
        };
        c.grid = GridConfig {
            extents: vec![20.0, 20.0],
            points: vec![128, 128],
        };
        c.params.x0 = vec![-1.5, 1.5];
        c.params.p0 = vec![0.0, 0.0];
        c.params.sigma = vec![1.0, 1.0];
        let w = build_scenario(&c).unwrap();
        assert!((w.norm_sqr() - 1.0).abs() < 1e-12);
        let n = 128;
        let v = w.psi().as_slice();
        for i in 1..n {
            for j in 1..n {
                assert!((v[i * n + j] - v[j * n + i]).norm() < 1e-14);
            }
        }
        c.grid.extents = vec![20.0];
        c.grid.points = vec![64];
        assert!(build_scenario(&c).is_err());
    }

    #[test]
    fn from_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let src = build_scenario(&ScenarioConfig::default()).unwrap();
        let path = dir.path().join("state.bin");
        io::save_field_binary(src.psi(), &path).unwrap();
        let cfg_path = dir.path().join("cfg.json");
        std::fs::write(
            &cfg_path,
            r#"{"scenario": "from_file", "grid": {"extents": [1.0], "points": [8]}, "params": {"file": "state.bin"}}"#,
        )
        .unwrap();
        let c = ScenarioConfig::load(&cfg_path).unwrap();
        let r = c.resolved().unwrap();
        assert_eq!(r.grid.points, vec![512]);
        let w = build_scenario(&c).unwrap();
        for (a, b) in w.psi().as_slice().iter().zip(src.psi().as_slice()) {
            assert!((a - b).norm() < 1e-15);
        }
    }
}
