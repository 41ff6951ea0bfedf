//! Experiment runner behind the `dqm` binary.
//!
//! Every run writes into its own output directory:
//!
//! ```text
//! config.json   fully resolved configuration, re-runnable as is
//! report.json   command summary
//! series.csv    per-stamp observables (evolve)
//! snaps/        snap_<step>.bin field dumps (evolve)
//! sweep.csv     λ sweep (sweep-lambda)
//! polar.csv     polar decomposition (analyze)
//! ```
//!
//! A run that ends in an error removes whatever it wrote.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::checks::run_suite;
use crate::error::{DqmError, Result};
use crate::evolution::{
    continuity_residual, ensemble_energies, evolve_classical, evolve_linear, hj_characteristics, kde_density,
    l1_distance, EnsembleSpec, Mode, Trajectory,
};
use crate::functionals::{action_density, deformed_kinetic_expectation, xi_of_lambda};
use crate::grid::integrate_product;
use crate::io::{save_field_binary, write_polar_csv};
use crate::operators::{classical_momentum_field, factorization_residual, quantum_potential};
use crate::scenario::{build_scenario, ScenarioConfig};
use crate::wavefield::{to_polar, WaveField};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Analyze,
    Evolve,
    SweepLambda,
    Check,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Analyze => "analyze",
            Command::Evolve => "evolve",
            Command::SweepLambda => "sweep-lambda",
            Command::Check => "check",
        }
    }
}

pub const EXIT_PASS: i32 = 0;
pub const EXIT_INVARIANT: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Exit status for an error raised by a run.
pub fn exit_code(err: &DqmError) -> i32 {
    match err {
        DqmError::NumericalAbort { .. } | DqmError::ExcessiveMask { .. } | DqmError::PhaseUndefined { .. } => {
            EXIT_NUMERICAL
        }
        _ => EXIT_CONFIG,
    }
}

/// Machine-readable error document.
pub fn error_json(err: &DqmError) -> Value {
    json!({
        "status": "error",
        "kind": err.kind(),
        "exit_code": exit_code(err),
        "message": err.to_string(),
    })
}

/// Result of a completed run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub command: Command,
    pub dir: PathBuf,
    /// False only when `check` found a failing invariant.
    pub passed: bool,
    pub report: Value,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            EXIT_PASS
        } else {
            EXIT_INVARIANT
        }
    }
}

/// Owns the output directory until the run commits; dropping it uncommitted
/// removes everything the run wrote.
struct OutputDir {
    path: PathBuf,
    created: bool,
    committed: bool,
}

impl OutputDir {
    fn claim(path: &Path) -> Result<Self> {
        let created = !path.exists();
        if created {
            fs::create_dir_all(path)?;
        } else if !path.is_dir() {
            return Err(DqmError::InvalidParameter(format!(
                "{} is not a directory",
                path.display()
            )));
        } else if fs::read_dir(path)?.next().is_some() {
            return Err(DqmError::InvalidParameter(format!(
                "output directory {} is not empty",
                path.display()
            )));
        }
        Ok(OutputDir {
            path: path.to_path_buf(),
            created,
            committed: false,
        })
    }

    fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    fn write(&self, name: &str, text: &str) -> Result<()> {
        let mut f = fs::File::create(self.file(name))?;
        f.write_all(text.as_bytes())?;
        Ok(())
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        if self.created {
            let _ = fs::remove_dir_all(&self.path);
        } else if let Ok(entries) = fs::read_dir(&self.path) {
            for e in entries.flatten() {
                let p = e.path();
                let _ = if p.is_dir() {
                    fs::remove_dir_all(&p)
                } else {
                    fs::remove_file(&p)
                };
            }
        }
    }
}

/// Runs `command` for `cfg` into `cfg.output.dir`.
pub fn run(cfg: &ScenarioConfig, command: Command) -> Result<RunOutcome> {
    let cfg = cfg.resolved()?;
    cfg.validate()?;
    let mut out = OutputDir::claim(&cfg.output.dir)?;
    out.write("config.json", &cfg.to_json()?)?;
    let (passed, mut report) = match command {
        Command::Analyze => analyze(&cfg, &out)?,
        Command::Evolve => evolve(&cfg, &out)?,
        Command::SweepLambda => sweep(&cfg, &out)?,
        Command::Check => check(&cfg)?,
    };
    report["command"] = json!(command.name());
    report["status"] = json!(if passed { "pass" } else { "fail" });
    out.write("report.json", &serde_json::to_string_pretty(&report)?)?;
    out.committed = true;
    Ok(RunOutcome {
        command,
        dir: out.path.clone(),
        passed,
        report,
    })
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

fn analyze(cfg: &ScenarioConfig, out: &OutputDir) -> Result<(bool, Value)> {
    let w = build_scenario(cfg)?;
    let lambda = cfg.physics.lambda;
    let polar = to_polar(&w)?;
    let q = quantum_potential(&polar, w.grid(), w.hbar())?;
    let (mut q_min, mut q_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for (v, &m) in q.as_slice().iter().zip(polar.node_mask()) {
        if !m {
            q_min = q_min.min(*v);
            q_max = q_max.max(*v);
        }
    }
    let rho = w.density();
    let pcl: Vec<f64> = classical_momentum_field(&w)?
        .iter()
        .map(|f| integrate_product(f.as_slice(), rho.as_slice(), w.grid()))
        .collect();
    let kinetic = deformed_kinetic_expectation(&w, lambda)?;
    write_polar_csv(&polar, fs::File::create(out.file("polar.csv"))?)?;
    Ok((
        true,
        json!({
            "lambda": lambda,
            "kinetic_expectation": kinetic.re,
            "classical_momentum_mean": pcl,
            "factorization_residual": factorization_residual(&w)?,
            "q_min": q_min,
            "q_max": q_max,
            "mask_fraction": polar.support_mask_fraction(),
            "raw_mask_fraction": polar.mask_fraction(),
        }),
    ))
}

fn propagate(cfg: &ScenarioConfig, w: &WaveField) -> Result<Trajectory> {
    let i = &cfg.integrator;
    match i.mode {
        Mode::Linear => evolve_linear(w, i.dt, i.steps, i.stride),
        Mode::Classical => evolve_classical(w, i.dt, i.steps, i.stride),
    }
}

/// Time-series CSV with one row per stamp; the continuity residual is `nan`
/// at the first and last stamps.
pub fn series_csv(traj: &Trajectory) -> Result<String> {
    let rank = traj.grid().rank();
    let mut header = vec!["t".to_string(), "norm".into(), "energy".into()];
    for name in ["x_mean", "p_mean", "pcl_mean", "width"] {
        header.extend((0..rank).map(|a| format!("{name}_{a}")));
    }
    header.extend(["q_mean", "fisher", "continuity_residual"].map(String::from));
    let mut text = header.join(",");
    text.push('\n');
    for (k, (t, o)) in traj.times().iter().zip(traj.observables()).enumerate() {
        let mut row = vec![num(*t), num(o.norm), num(o.energy)];
        for v in [&o.x_mean, &o.p_mean, &o.pcl_mean, &o.width] {
            row.extend(v.iter().map(|x| num(*x)));
        }
        row.push(num(o.q_mean));
        row.push(num(o.fisher));
        let c = if k == 0 || k + 1 == traj.len() {
            f64::NAN
        } else {
            continuity_residual(traj, k)?
        };
        row.push(num(c));
        text.push_str(&row.join(","));
        text.push('\n');
    }
    Ok(text)
}

fn evolve(cfg: &ScenarioConfig, out: &OutputDir) -> Result<(bool, Value)> {
    let w = build_scenario(cfg)?;
    let traj = propagate(cfg, &w)?;
    out.write("series.csv", &series_csv(&traj)?)?;
    fs::create_dir(out.file("snaps"))?;
    for (k, s) in traj.snapshots().iter().enumerate() {
        let step = k * traj.stride();
        save_field_binary(s.psi(), &out.file(&format!("snaps/snap_{step}.bin")))?;
    }
    let i = &cfg.integrator;
    let mut report = json!({
        "mode": i.mode,
        "dt": i.dt,
        "steps": i.steps,
        "stride": i.stride,
        "stamps": traj.len(),
        "final_time": traj.times().last(),
        "initial": traj.observables().first(),
        "final": traj.observables().last(),
    });
    if i.mode == Mode::Classical && i.ensemble > 0 {
        report["ensemble"] = ensemble_report(cfg, &w, &traj)?;
    }
    Ok((true, report))
}

/// Characteristics-ensemble oracle for a classical run: L¹ distance between
/// the ensemble KDE and `|ψ|²` at the last stamp, plus energy drift.
fn ensemble_report(cfg: &ScenarioConfig, w: &WaveField, traj: &Trajectory) -> Result<Value> {
    let i = &cfg.integrator;
    let spec = EnsembleSpec {
        particles: i.ensemble,
        dt: i.dt,
        steps: i.steps,
        stride: i.stride,
        seed: i.seed,
        hbar: w.hbar(),
    };
    let polar = to_polar(w)?;
    let v = w.params().potential();
    let states = hj_characteristics(&polar, w.grid(), v, &spec)?;
    let t_last = *traj.times().last().expect("trajectory has stamps");
    let state = states
        .iter()
        .min_by(|a, b| (a.time - t_last).abs().total_cmp(&(b.time - t_last).abs()))
        .expect("ensemble has states");
    let kde = kde_density(state, w.grid())?;
    let l1 = l1_distance(&kde, &traj.last().density())?;
    let e0 = ensemble_energies(&states[0], w.grid(), v);
    let e1 = ensemble_energies(state, w.grid(), v);
    let drift = e0.iter().zip(&e1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(json!({
        "particles": i.ensemble,
        "time": state.time,
        "l1_distance": l1,
        "mean_position": state.mean_position(),
        "max_energy_drift": drift,
    }))
}

/// Sweep CSV columns `lambda, xi, kinetic_expectation, fisher_part, action_total`.
fn sweep(cfg: &ScenarioConfig, out: &OutputDir) -> Result<(bool, Value)> {
    let w = build_scenario(cfg)?;
    let traj = propagate(cfg, &w)?;
    let mut text = String::from("lambda,xi,kinetic_expectation,fisher_part,action_total\n");
    let mut rows = Vec::new();
    for &l in &cfg.sweep.lambdas {
        let xi = xi_of_lambda(l, w.hbar(), w.grid().masses()[0]);
        let k = deformed_kinetic_expectation(&w, l)?.re;
        let a = action_density(&traj, l)?;
        text.push_str(&[num(l), num(xi), num(k), num(a.fisher_part), num(a.total)].join(","));
        text.push('\n');
        rows.push(a);
    }
    out.write("sweep.csv", &text)?;
    Ok((
        true,
        json!({ "mode": cfg.integrator.mode, "stamps": traj.len(), "rows": rows }),
    ))
}

fn check(cfg: &ScenarioConfig) -> Result<(bool, Value)> {
    let report = run_suite(cfg)?;
    Ok((report.passed, serde_json::to_value(&report)?))
}
