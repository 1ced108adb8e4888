//! Scenario configuration and the batch pipeline.
//!
//! A scenario names a grid, physical parameters, a potential, an initial
//! state, an ensemble and a schedule. The pipeline evolves the wavefunction
//! by Crank-Nicolson, decomposes it each step to obtain the drift, steps the
//! particle ensemble with that drift, and writes fields, histograms,
//! comparisons, residuals and diagnostics at the snapshot times. Everything
//! downstream of the config seed is deterministic; repeated runs produce
//! byte-identical files.

use crate::ensemble::{estimate_density, kinetic_energy_estimate, ParticleEnsemble};
use crate::field::{ComplexField, ScalarField};
use crate::grid::Grid;
use crate::io::{self, CheckpointHeader, IoError};
use crate::madelung::{
    circle_loop, continuity_residual, decompose, decompose_following, detect_nodal_regions,
    hj_residual, winding_number, MadelungError, MadelungFields,
};
use crate::schrodinger::{
    analytic_gaussian_packet, ground_state_imaginary_time, step_crank_nicolson, PhysicalParams,
    Potential, SolveError,
};
use crate::stats::{compare_densities, ComparisonReport, StatsError};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("config field `{field}`: {message}")]
    ConfigInvalid { field: String, message: String },
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("solver: {0}")]
    Solve(#[from] SolveError),
    #[error("decomposition: {0}")]
    Madelung(#[from] MadelungError),
    #[error("ensemble: {0}")]
    Ensemble(#[from] crate::ensemble::EnsembleError),
    #[error("statistics: {0}")]
    Stats(#[from] StatsError),
}

impl ScenarioError {
    fn config(field: &str, message: impl Into<String>) -> Self {
        ScenarioError::ConfigInvalid {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Process exit code class: 2 config, 3 i/o, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::ConfigInvalid { .. } => 2,
            ScenarioError::Io(_) => 3,
            _ => 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    /// Per-axis `[lo, hi]`.
    pub extents: Vec<[f64; 2]>,
    pub n: Vec<usize>,
    pub dt: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PhysicalConfig {
    pub m: f64,
    /// Exactly one of `d`, `hbar` must be present; the other is derived
    /// through `hbar = 2*m*D`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hbar: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    Free,
    Harmonic {
        k: f64,
    },
    Barrier {
        height: f64,
        center: f64,
        width: f64,
    },
    /// Scalar NDJSON file sampled on the scenario grid.
    Tabulated {
        file: String,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    /// Free Gaussian packet (per-axis center, momentum, width).
    Gaussian {
        x0: Vec<f64>,
        p0: Vec<f64>,
        sigma0: Vec<f64>,
    },
    /// Imaginary-time ground state of the scenario potential.
    GroundState,
    /// 2D unit-winding vortex `(x + i y) * exp(-r^2 / (4 sigma0^2))`.
    Vortex { x0: Vec<f64>, sigma0: f64 },
    /// Wavefunction checkpoint file.
    File { path: String },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub n: usize,
    pub seed: u64,
    /// Triangular-kernel bandwidth for the density estimate (0 = raw bins).
    #[serde(default)]
    pub bandwidth: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub t_end: f64,
    /// Snapshot times; each must be a multiple of `dt` within 1e-9.
    pub snapshots: Vec<f64>,
}

fn default_formats() -> Vec<String> {
    vec!["csv".into(), "ndjson".into()]
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
    /// Write every k-th particle to the trajectory log (0 = off).
    #[serde(default)]
    pub trajectories_every: usize,
    /// Checkpoint the wavefunction every N steps (0 = snapshots only).
    #[serde(default)]
    pub checkpoint_every: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub grid: GridConfig,
    pub physical: PhysicalConfig,
    pub potential: PotentialSpec,
    pub initial: InitialSpec,
    pub ensemble: EnsembleConfig,
    pub schedule: ScheduleConfig,
    pub output: OutputConfig,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let cfg: ScenarioConfig = serde_json::from_str(text)
            .map_err(|e| ScenarioError::config("<root>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path).map_err(IoError::Io)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let g = &self.grid;
        if g.dim != 1 && g.dim != 2 {
            return Err(ScenarioError::config("grid.dim", "must be 1 or 2"));
        }
        if g.extents.len() != g.dim || g.n.len() != g.dim {
            return Err(ScenarioError::config(
                "grid",
                format!("need {} extents and point counts", g.dim),
            ));
        }
        self.build_grid()?;

        match (self.physical.d, self.physical.hbar) {
            (Some(_), Some(_)) => {
                return Err(ScenarioError::config(
                    "physical",
                    "give exactly one of `d` and `hbar`, not both",
                ))
            }
            (None, None) => {
                return Err(ScenarioError::config(
                    "physical",
                    "give one of `d` or `hbar`",
                ))
            }
            (Some(d), None) if !(d > 0.0) => {
                return Err(ScenarioError::config("physical.d", "must be positive"))
            }
            (None, Some(h)) if !(h > 0.0) => {
                return Err(ScenarioError::config("physical.hbar", "must be positive"))
            }
            _ => {}
        }
        if !(self.physical.m > 0.0) {
            return Err(ScenarioError::config("physical.m", "must be positive"));
        }

        match &self.initial {
            InitialSpec::Gaussian { x0, p0, sigma0 } => {
                if x0.len() != g.dim || p0.len() != g.dim || sigma0.len() != g.dim {
                    return Err(ScenarioError::config(
                        "initial",
                        "x0, p0, sigma0 must have one entry per axis",
                    ));
                }
                if sigma0.iter().any(|&s| !(s > 0.0)) {
                    return Err(ScenarioError::config("initial.sigma0", "must be positive"));
                }
            }
            InitialSpec::Vortex { x0, sigma0 } => {
                if g.dim != 2 {
                    return Err(ScenarioError::config("initial", "vortex states are 2D"));
                }
                if x0.len() != 2 {
                    return Err(ScenarioError::config("initial.x0", "need two coordinates"));
                }
                if !(sigma0 > &0.0) {
                    return Err(ScenarioError::config("initial.sigma0", "must be positive"));
                }
            }
            InitialSpec::GroundState | InitialSpec::File { .. } => {}
        }

        if self.ensemble.n == 0 {
            return Err(ScenarioError::config(
                "ensemble.n",
                "need at least one particle",
            ));
        }
        if self.ensemble.bandwidth < 0.0 {
            return Err(ScenarioError::config(
                "ensemble.bandwidth",
                "must be nonnegative",
            ));
        }

        let dt = self.grid.dt;
        if !(self.schedule.t_end > 0.0) {
            return Err(ScenarioError::config("schedule.t_end", "must be positive"));
        }
        let on_step_grid = |t: f64| {
            let k = (t / dt).round();
            (t - k * dt).abs() <= 1e-9 * dt.max(t.abs())
        };
        if !on_step_grid(self.schedule.t_end) {
            return Err(ScenarioError::config(
                "schedule.t_end",
                "must be a multiple of grid.dt",
            ));
        }
        for &t in &self.schedule.snapshots {
            if !on_step_grid(t) {
                return Err(ScenarioError::config(
                    "schedule.snapshots",
                    format!("{t} is not a multiple of grid.dt"),
                ));
            }
            if t < 0.0 || t > self.schedule.t_end + 1e-12 {
                return Err(ScenarioError::config(
                    "schedule.snapshots",
                    format!("{t} outside [0, t_end]"),
                ));
            }
        }
        Ok(())
    }

    pub fn build_grid(&self) -> Result<Grid, ScenarioError> {
        let g = &self.grid;
        let grid = match g.dim {
            1 => Grid::new_1d(g.extents[0][0], g.extents[0][1], g.n[0], g.dt),
            2 => Grid::new_2d(
                (g.extents[0][0], g.extents[0][1]),
                (g.extents[1][0], g.extents[1][1]),
                (g.n[0], g.n[1]),
                g.dt,
            ),
            d => {
                return Err(ScenarioError::config(
                    "grid.dim",
                    format!("unsupported dim {d}"),
                ))
            }
        };
        grid.map_err(|e| ScenarioError::config("grid", e.to_string()))
    }

    pub fn build_params(&self) -> PhysicalParams {
        match (self.physical.d, self.physical.hbar) {
            (Some(d), None) => PhysicalParams::from_diffusion(self.physical.m, d),
            (None, Some(h)) => PhysicalParams::from_hbar(self.physical.m, h),
            _ => unreachable!("validated"),
        }
    }

    pub fn build_potential(&self, grid: &Grid) -> Result<Potential, ScenarioError> {
        Ok(match &self.potential {
            PotentialSpec::Free => Potential::Free,
            PotentialSpec::Harmonic { k } => Potential::Harmonic { k: *k },
            PotentialSpec::Barrier {
                height,
                center,
                width,
            } => Potential::Barrier {
                height: *height,
                center: *center,
                width: *width,
            },
            PotentialSpec::Tabulated { file } => {
                let f = io::read_scalar_ndjson(Path::new(file))?;
                if f.grid().len() != grid.len() {
                    return Err(ScenarioError::config(
                        "potential.file",
                        "tabulated potential does not match the scenario grid",
                    ));
                }
                let f = ScalarField::from_values(grid, f.values().to_vec())
                    .map_err(|e| ScenarioError::config("potential.file", e.to_string()))?;
                Potential::Tabulated(f)
            }
        })
    }

    pub fn build_initial_state(
        &self,
        grid: &Grid,
        params: &PhysicalParams,
        potential: &Potential,
    ) -> Result<ComplexField, ScenarioError> {
        let psi = match &self.initial {
            InitialSpec::Gaussian { x0, p0, sigma0 } => {
                analytic_gaussian_packet(x0, p0, sigma0, 0.0, params, grid)
            }
            InitialSpec::GroundState => {
                ground_state_imaginary_time(potential, params, grid, 1e-12)?.0
            }
            InitialSpec::Vortex { x0, sigma0 } => {
                let (cx, cy) = (x0[0], x0[1]);
                let s2 = 4.0 * sigma0 * sigma0;
                let mut psi = ComplexField::from_fn(grid, |p| {
                    let (dx, dy) = (p[0] - cx, p[1] - cy);
                    Complex64::new(dx, dy) * (-(dx * dx + dy * dy) / s2).exp()
                });
                psi.normalize()
                    .map_err(|e| ScenarioError::config("initial", e.to_string()))?;
                psi
            }
            InitialSpec::File { path } => {
                let (header, psi) = io::read_checkpoint(Path::new(path))?;
                if &header.grid != grid {
                    return Err(ScenarioError::config(
                        "initial.path",
                        "checkpoint grid does not match the scenario grid",
                    ));
                }
                psi
            }
        };
        Ok(psi)
    }

    fn potential_descriptor(&self) -> serde_json::Value {
        serde_json::to_value(&self.potential).expect("spec serializes")
    }
}

/// What ran and what was written.
#[derive(Debug, Clone, Serialize)]
pub struct SnapshotSummary {
    pub t: f64,
    pub step: usize,
    pub comparison: Option<ComparisonReport>,
    pub continuity_max: Option<f64>,
    pub hj_max: Option<f64>,
    pub t_mean: f64,
    pub nodal_regions: usize,
    pub nodal_flagged: usize,
    pub winding: Option<i64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioOutcome {
    pub name: String,
    pub steps: usize,
    pub particles: usize,
    pub escaped_fraction: f64,
    pub snapshots: Vec<SnapshotSummary>,
    pub warnings: Vec<String>,
    pub output_dir: String,
}

/// Which half of the pipeline to run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PipelineMode {
    /// Wave evolution, fields and residuals only; no particles.
    SolveOnly,
    /// Full drift-diffusion ensemble alongside the wave.
    Full,
}

struct SnapshotSink {
    dir: PathBuf,
    formats_csv: bool,
    formats_ndjson: bool,
    residuals: Vec<serde_json::Value>,
    findings: Vec<serde_json::Value>,
}

/// Companion script that plots whatever CSV artifacts a run produced;
/// emitted next to the data so the batch output is self-contained.
const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Plot the CSV artifacts in this directory (requires matplotlib)."""
import csv
import glob
import os
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return {k: [float(r[k]) for r in rows] for k in rows[0]} if rows else {}


def main():
    here = os.path.dirname(os.path.abspath(__file__))
    for pattern, ycols in (("hist_*.csv", ["value"]), ("fields_*.csv", ["rho", "s", "qpot"])):
        for path in sorted(glob.glob(os.path.join(here, pattern))):
            data = read_csv(path)
            if "x" not in data or "y" in data:
                continue  # 2D fields need a heatmap of your choosing
            fig, ax = plt.subplots()
            for col in ycols:
                if col in data:
                    ax.plot(data["x"], data[col], label=col)
            ax.set_xlabel("x")
            ax.legend()
            out = path.rsplit(".", 1)[0] + ".png"
            fig.savefig(out, dpi=120)
            plt.close(fig)
            print(out)


if __name__ == "__main__":
    sys.exit(main())
"#;

impl SnapshotSink {
    fn write_line_file(&self, name: &str, lines: &[serde_json::Value]) -> Result<(), IoError> {
        let mut w = std::io::BufWriter::new(fs::File::create(self.dir.join(name))?);
        for l in lines {
            writeln!(w, "{l}")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Run the configured scenario. All outputs land under
/// `output.dir/<name>/`; the returned outcome is also written there as
/// `summary.json`.
pub fn run_scenario(
    config: &ScenarioConfig,
    mode: PipelineMode,
) -> Result<ScenarioOutcome, ScenarioError> {
    config.validate()?;
    let grid = config.build_grid()?;
    let params = config.build_params();
    let potential = config.build_potential(&grid)?;
    let dt = grid.dt();
    let steps = (config.schedule.t_end / dt).round() as usize;

    let mut psi = config.build_initial_state(&grid, &params, &potential)?;
    psi.normalize()
        .map_err(|e| ScenarioError::config("initial", e.to_string()))?;

    let out_dir = PathBuf::from(&config.output.dir).join(&config.name);
    fs::create_dir_all(&out_dir).map_err(IoError::Io)?;
    let mut sink = SnapshotSink {
        dir: out_dir.clone(),
        formats_csv: config.output.formats.iter().any(|f| f == "csv"),
        formats_ndjson: config.output.formats.iter().any(|f| f == "ndjson"),
        residuals: Vec::new(),
        findings: Vec::new(),
    };

    // Ensemble (full mode only).
    let mut ensemble = match mode {
        PipelineMode::Full => {
            let rho0 = psi.density();
            Some(ParticleEnsemble::sample_initial(
                &rho0,
                config.ensemble.n,
                config.ensemble.seed,
            )?)
        }
        PipelineMode::SolveOnly => None,
    };

    // Decomposition window: the residuals at a snapshot need the fields one
    // step before and one step after, so f(-dt) comes from a backward step.
    let mut f_cur = decompose(&psi, &params, 0.0)?;
    let psi_minus = step_crank_nicolson(&psi, &potential, &params, -dt)?;
    let mut f_prev = decompose_following(&psi_minus, &params, -dt, &f_cur)?;

    let mut warnings: Vec<String> = Vec::new();
    let mut border_warned = false;
    let mut snapshots: Vec<SnapshotSummary> = Vec::new();
    // Snapshot whose residual record waits for the next decomposition.
    let mut pending: Option<(usize, MadelungFields, MadelungFields)> = None;

    let is_snapshot = |step: usize| -> bool {
        let t = step as f64 * dt;
        config
            .schedule
            .snapshots
            .iter()
            .any(|&s| (s - t).abs() <= 1e-9 * dt.max(1.0))
    };

    let mut traj_log: Option<std::io::BufWriter<fs::File>> =
        if config.output.trajectories_every > 0 && matches!(mode, PipelineMode::Full) {
            Some(std::io::BufWriter::new(
                fs::File::create(out_dir.join("trajectories.ndjson")).map_err(IoError::Io)?,
            ))
        } else {
            None
        };

    for step in 0..=steps {
        let t = step as f64 * dt;

        // Boundary-mass advisory: the vanishing-boundary treatment needs
        // |psi|^2 below 1e-10 at the border.
        if !border_warned {
            let border_max = (0..grid.len())
                .filter(|&i| grid.is_boundary(i))
                .map(|i| psi.values()[i].norm_sqr())
                .fold(0.0, f64::max);
            if border_max > 1e-10 {
                warnings.push(format!(
                    "|psi|^2 reaches {border_max:.3e} at the grid border at t = {t}; \
                     enlarge the grid"
                ));
                border_warned = true;
            }
        }

        if is_snapshot(step) {
            let summary = write_snapshot(
                config,
                &mut sink,
                &grid,
                &params,
                &psi,
                &f_cur,
                ensemble.as_ref(),
                step,
                t,
            )?;
            snapshots.push(summary);
            pending = Some((snapshots.len() - 1, f_prev.clone(), f_cur.clone()));
        }

        if config.output.checkpoint_every > 0
            && step % config.output.checkpoint_every == 0
            && sink.formats_ndjson
        {
            let header = CheckpointHeader {
                grid: grid.clone(),
                params,
                t,
                potential: config.potential_descriptor(),
            };
            io::write_checkpoint(
                &out_dir.join(format!("checkpoint_{step:06}.ndjson")),
                &header,
                &psi,
            )?;
        }

        if let Some(w) = traj_log.as_mut() {
            if let Some(e) = &ensemble {
                io::append_trajectories(
                    w,
                    t,
                    e.positions(),
                    e.dim(),
                    config.output.trajectories_every,
                )?;
            }
        }

        if step == steps {
            // Resolve a final-time snapshot with one extra wave step.
            if let Some((idx, f_before, f_center)) = pending.take() {
                let psi_next = step_crank_nicolson(&psi, &potential, &params, dt)?;
                let f_next = decompose_following(&psi_next, &params, t + dt, &f_center)?;
                let (cont, hj) =
                    residual_maxima(&f_before, &f_center, &f_next, &potential, &params, dt)?;
                sink.residuals.push(residual_record(f_center.t, cont, hj));
                snapshots[idx].continuity_max = Some(cont);
                snapshots[idx].hj_max = Some(hj);
            }
            break;
        }

        // Advance: particles ride the drift of the current decomposition,
        // then the wave moves underneath them.
        if let Some(e) = ensemble.as_mut() {
            e.step(&f_cur.v, params.diffusion(), dt)?;
        }
        psi = step_crank_nicolson(&psi, &potential, &params, dt)?;
        let f_next = decompose_following(&psi, &params, t + dt, &f_cur)?;

        if let Some((idx, f_before, f_center)) = pending.take() {
            let (cont, hj) =
                residual_maxima(&f_before, &f_center, &f_next, &potential, &params, dt)?;
            sink.residuals.push(residual_record(f_center.t, cont, hj));
            snapshots[idx].continuity_max = Some(cont);
            snapshots[idx].hj_max = Some(hj);
        }

        f_prev = f_cur;
        f_cur = f_next;
    }
    let _ = f_prev;

    if let Some(w) = traj_log.as_mut() {
        w.flush().map_err(IoError::Io)?;
    }
    if !sink.residuals.is_empty() {
        let lines = sink.residuals.clone();
        sink.write_line_file("residuals.ndjson", &lines)?;
    }
    if !sink.findings.is_empty() {
        let lines = sink.findings.clone();
        sink.write_line_file("findings.ndjson", &lines)?;
    }

    if sink.formats_csv {
        fs::write(out_dir.join("plot.py"), PLOT_SCRIPT).map_err(IoError::Io)?;
    }

    let outcome = ScenarioOutcome {
        name: config.name.clone(),
        steps,
        particles: ensemble.as_ref().map(|e| e.len()).unwrap_or(0),
        escaped_fraction: ensemble
            .as_ref()
            .map(|e| e.escaped_fraction())
            .unwrap_or(0.0),
        snapshots,
        warnings,
        output_dir: out_dir.display().to_string(),
    };
    fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&outcome).expect("serializes"),
    )
    .map_err(IoError::Io)?;
    Ok(outcome)
}

fn residual_record(t: f64, cont: f64, hj: f64) -> serde_json::Value {
    serde_json::json!({"t": t, "continuity_max": cont, "hj_max": hj})
}

fn residual_maxima(
    f_before: &MadelungFields,
    f_center: &MadelungFields,
    f_next: &MadelungFields,
    potential: &Potential,
    params: &PhysicalParams,
    dt: f64,
) -> Result<(f64, f64), ScenarioError> {
    let cont = continuity_residual(f_before, f_next, params)?;
    let cont_max = f_center.masked_max_abs(&cont);
    let hj = hj_residual(f_center, &f_before.s, &f_next.s, potential, params, dt)?;
    let hj_max = f_center.masked_max_abs(&hj);
    Ok((cont_max, hj_max))
}

#[allow(clippy::too_many_arguments)]
fn write_snapshot(
    config: &ScenarioConfig,
    sink: &mut SnapshotSink,
    grid: &Grid,
    params: &PhysicalParams,
    psi: &ComplexField,
    fields: &MadelungFields,
    ensemble: Option<&ParticleEnsemble>,
    step: usize,
    t: f64,
) -> Result<SnapshotSummary, ScenarioError> {
    if sink.formats_csv {
        io::write_madelung_csv(&sink.dir.join(format!("fields_{step:06}.csv")), fields)?;
    }
    if sink.formats_ndjson {
        let header = CheckpointHeader {
            grid: grid.clone(),
            params: *params,
            t,
            potential: config.potential_descriptor(),
        };
        io::write_checkpoint(
            &sink.dir.join(format!("psi_{step:06}.ndjson")),
            &header,
            psi,
        )?;
    }

    let mut comparison = None;
    if let Some(e) = ensemble {
        let (hist, _) = estimate_density(e, grid, config.ensemble.bandwidth)?;
        if sink.formats_csv {
            io::write_scalar_csv(&sink.dir.join(format!("hist_{step:06}.csv")), &hist)?;
        }
        let report = compare_densities(&hist, &psi.density())?;
        fs::write(
            sink.dir.join(format!("comparison_{step:06}.json")),
            serde_json::to_string_pretty(&report).expect("serializes"),
        )
        .map_err(IoError::Io)?;
        comparison = Some(report);
    }

    let kinetic = kinetic_energy_estimate(fields, params);

    // Diagnostics: nodes with flow, and the phase winding around a centered
    // loop on 2D grids.
    let eps_nodal = 1e-6;
    let nodal = detect_nodal_regions(fields, eps_nodal);
    for region in &nodal.regions {
        sink.findings.push(serde_json::json!({
            "kind": "nodal_region",
            "t": t,
            "points": region.points.len(),
            "rho_max": region.rho_max,
            "speed_min": region.speed_min,
            "speed_max": region.speed_max,
            "flagged": region.flagged,
        }));
    }
    let winding = if grid.dim() == 2 {
        let center = [
            0.5 * (grid.lo(0) + grid.hi(0)),
            0.5 * (grid.lo(1) + grid.hi(1)),
        ];
        let radius = 0.25 * (grid.hi(0) - grid.lo(0)).min(grid.hi(1) - grid.lo(1));
        winding_number(psi, &circle_loop(grid, center, radius)).ok()
    } else {
        None
    };
    if let Some(w) = winding {
        if w != 0 {
            sink.findings.push(serde_json::json!({
                "kind": "winding",
                "t": t,
                "winding": w,
            }));
        }
    }

    Ok(SnapshotSummary {
        t,
        step,
        comparison,
        continuity_max: None,
        hj_max: None,
        t_mean: kinetic.t_mean,
        nodal_regions: nodal.count,
        nodal_flagged: nodal.flagged_count(),
        winding,
    })
}

/// Diagnostics for a stored wavefunction: unwrap status, winding around a
/// centered loop (2D), and nodal regions.
pub fn diagnose_checkpoint(path: &Path) -> Result<Vec<serde_json::Value>, ScenarioError> {
    let (header, psi) = io::read_checkpoint(path)?;
    let params = header.params;
    let grid = header.grid;
    let mut findings = Vec::new();

    match decompose(&psi, &params, header.t) {
        Ok(fields) => {
            let nodal = detect_nodal_regions(&fields, 1e-6);
            for region in &nodal.regions {
                findings.push(serde_json::json!({
                    "kind": "nodal_region",
                    "t": header.t,
                    "points": region.points.len(),
                    "rho_max": region.rho_max,
                    "speed_min": region.speed_min,
                    "speed_max": region.speed_max,
                    "flagged": region.flagged,
                }));
            }
        }
        Err(MadelungError::MultivaluedPhase {
            winding,
            loop_points,
        }) => {
            findings.push(serde_json::json!({
                "kind": "multivalued_phase",
                "t": header.t,
                "winding": winding,
                "loop_len": loop_points.len(),
            }));
        }
        Err(e) => return Err(e.into()),
    }

    if grid.dim() == 2 {
        let center = [
            0.5 * (grid.lo(0) + grid.hi(0)),
            0.5 * (grid.lo(1) + grid.hi(1)),
        ];
        let radius = 0.25 * (grid.hi(0) - grid.lo(0)).min(grid.hi(1) - grid.lo(1));
        if let Ok(w) = winding_number(&psi, &circle_loop(&grid, center, radius)) {
            findings.push(serde_json::json!({
                "kind": "winding",
                "t": header.t,
                "radius": radius,
                "winding": w,
            }));
        }
    }
    Ok(findings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn quick_config(dir: &Path) -> ScenarioConfig {
        ScenarioConfig {
            name: "quick".into(),
            grid: GridConfig {
                dim: 1,
                extents: vec![[-12.0, 12.0]],
                n: vec![256],
                dt: 1e-3,
            },
            physical: PhysicalConfig {
                m: 1.0,
                d: Some(0.5),
                hbar: None,
            },
            potential: PotentialSpec::Free,
            initial: InitialSpec::Gaussian {
                x0: vec![0.0],
                p0: vec![0.0],
                sigma0: vec![1.0],
            },
            ensemble: EnsembleConfig {
                n: 5000,
                seed: 42,
                bandwidth: 0.0,
            },
            schedule: ScheduleConfig {
                t_end: 0.05,
                snapshots: vec![0.0, 0.05],
            },
            output: OutputConfig {
                dir: dir.display().to_string(),
                formats: default_formats(),
                trajectories_every: 0,
                checkpoint_every: 0,
            },
        }
    }

    #[test]
    fn config_json_round_trip_is_identity() {
        let dir = tempdir().unwrap();
        let cfg = quick_config(dir.path());
        let text = cfg.to_json();
        let back = ScenarioConfig::from_json(&text).unwrap();
        assert_eq!(cfg, back);
        let again = ScenarioConfig::from_json(&back.to_json()).unwrap();
        assert_eq!(back, again);
    }

    #[test]
    fn both_d_and_hbar_is_invalid() {
        let dir = tempdir().unwrap();
        let mut cfg = quick_config(dir.path());
        cfg.physical.hbar = Some(1.0);
        let err = cfg.validate().unwrap_err();
        assert!(
            matches!(err, ScenarioError::ConfigInvalid { ref field, .. } if field == "physical")
        );
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn snapshot_off_the_step_grid_is_invalid() {
        let dir = tempdir().unwrap();
        let mut cfg = quick_config(dir.path());
        cfg.schedule.snapshots = vec![0.0255];
        assert!(matches!(
            cfg.validate().unwrap_err(),
            ScenarioError::ConfigInvalid { ref field, .. } if field == "schedule.snapshots"
        ));
    }

    #[test]
    fn pipeline_produces_expected_outputs_and_small_kl() {
        let dir = tempdir().unwrap();
        let cfg = quick_config(dir.path());
        let outcome = run_scenario(&cfg, PipelineMode::Full).unwrap();
        assert_eq!(outcome.steps, 50);
        assert_eq!(outcome.snapshots.len(), 2);
        assert!(outcome.warnings.is_empty(), "{:?}", outcome.warnings);
        assert!(outcome.escaped_fraction < 1e-4);

        // Both snapshots carry comparisons and resolved residuals.
        for snap in &outcome.snapshots {
            let report = snap.comparison.as_ref().unwrap();
            assert!(report.kl < 0.05, "kl = {} at t = {}", report.kl, snap.t);
            assert!(snap.continuity_max.unwrap() < 1e-2);
            assert!(snap.hj_max.unwrap() < 1e-2);
        }

        let out = dir.path().join("quick");
        for name in [
            "fields_000000.csv",
            "fields_000050.csv",
            "hist_000000.csv",
            "hist_000050.csv",
            "psi_000000.ndjson",
            "comparison_000050.json",
            "residuals.ndjson",
            "summary.json",
        ] {
            assert!(out.join(name).exists(), "missing {name}");
        }
    }

    #[test]
    fn repeated_runs_are_byte_identical() {
        let dir = tempdir().unwrap();
        let mut cfg = quick_config(dir.path());
        cfg.ensemble.n = 2000;
        cfg.schedule.t_end = 0.02;
        cfg.schedule.snapshots = vec![0.02];

        run_scenario(&cfg, PipelineMode::Full).unwrap();
        let out = dir.path().join("quick");
        let mut first: Vec<(String, Vec<u8>)> = fs::read_dir(&out)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (
                    e.file_name().into_string().unwrap(),
                    fs::read(e.path()).unwrap(),
                )
            })
            .collect();
        first.sort_by(|a, b| a.0.cmp(&b.0));
        assert!(!first.is_empty());

        run_scenario(&cfg, PipelineMode::Full).unwrap();
        for (name, bytes) in first {
            let again = fs::read(out.join(&name)).unwrap();
            assert_eq!(bytes, again, "{name} differs between identical runs");
        }
    }

    #[test]
    fn solve_only_skips_particles() {
        let dir = tempdir().unwrap();
        let mut cfg = quick_config(dir.path());
        cfg.schedule.t_end = 0.01;
        cfg.schedule.snapshots = vec![0.01];
        let outcome = run_scenario(&cfg, PipelineMode::SolveOnly).unwrap();
        assert_eq!(outcome.particles, 0);
        assert!(outcome.snapshots[0].comparison.is_none());
        assert!(!dir.path().join("quick").join("hist_000010.csv").exists());
    }

    #[test]
    fn trajectories_are_logged_when_requested() {
        let dir = tempdir().unwrap();
        let mut cfg = quick_config(dir.path());
        cfg.ensemble.n = 500;
        cfg.schedule.t_end = 0.01;
        cfg.schedule.snapshots = vec![];
        cfg.output.trajectories_every = 100;
        run_scenario(&cfg, PipelineMode::Full).unwrap();
        let log = fs::read_to_string(dir.path().join("quick/trajectories.ndjson")).unwrap();
        // 5 particles logged per step, 11 time points (0..=10 steps).
        assert_eq!(log.lines().count(), 55);
        let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
        assert_eq!(first["t"], 0.0);
        assert!(first["x"].is_f64());
    }

    #[test]
    fn border_mass_triggers_a_warning() {
        let dir = tempdir().unwrap();
        let mut cfg = quick_config(dir.path());
        // A packet this wide on a grid this narrow leaks mass to the border.
        cfg.grid.extents = vec![[-3.0, 3.0]];
        cfg.grid.n = vec![64];
        cfg.schedule.t_end = 0.005;
        cfg.schedule.snapshots = vec![];
        cfg.ensemble.n = 200;
        let outcome = run_scenario(&cfg, PipelineMode::Full).unwrap();
        assert!(
            outcome.warnings.iter().any(|w| w.contains("border")),
            "expected a border warning, got {:?}",
            outcome.warnings
        );
    }

    #[test]
    fn plot_script_is_emitted_with_csv() {
        let dir = tempdir().unwrap();
        let mut cfg = quick_config(dir.path());
        cfg.schedule.t_end = 0.005;
        cfg.schedule.snapshots = vec![0.005];
        cfg.ensemble.n = 200;
        run_scenario(&cfg, PipelineMode::Full).unwrap();
        let script = fs::read_to_string(dir.path().join("quick/plot.py")).unwrap();
        assert!(script.contains("matplotlib"));
    }

    #[test]
    fn two_dimensional_pipeline_runs_end_to_end() {
        let dir = tempdir().unwrap();
        let cfg = ScenarioConfig {
            name: "packet2d".into(),
            grid: GridConfig {
                dim: 2,
                extents: vec![[-8.0, 8.0], [-8.0, 8.0]],
                n: vec![64, 64],
                dt: 1e-3,
            },
            physical: PhysicalConfig {
                m: 1.0,
                d: Some(0.5),
                hbar: None,
            },
            potential: PotentialSpec::Free,
            initial: InitialSpec::Gaussian {
                x0: vec![0.0, 0.0],
                p0: vec![0.5, 0.0],
                sigma0: vec![1.0, 1.0],
            },
            ensemble: EnsembleConfig {
                n: 20000,
                seed: 11,
                bandwidth: 0.0,
            },
            schedule: ScheduleConfig {
                t_end: 0.05,
                snapshots: vec![0.05],
            },
            output: OutputConfig {
                dir: dir.path().display().to_string(),
                formats: default_formats(),
                trajectories_every: 0,
                checkpoint_every: 0,
            },
        };
        let outcome = run_scenario(&cfg, PipelineMode::Full).unwrap();
        let report = outcome.snapshots[0].comparison.as_ref().unwrap();
        assert!(report.w1.is_none(), "W1 is 1D-only");
        assert!(report.kl < 0.2, "2D kl = {}", report.kl);
        assert!((report.mean_delta[0]).abs() < 0.05);
        assert!((report.mean_delta[1]).abs() < 0.05);
        assert!(outcome.escaped_fraction < 1e-4);
    }

    #[test]
    fn diagnose_flags_the_vortex() {
        let dir = tempdir().unwrap();
        let cfg = ScenarioConfig {
            name: "vortex".into(),
            grid: GridConfig {
                dim: 2,
                extents: vec![[-6.0, 6.0], [-6.0, 6.0]],
                n: vec![96, 96],
                dt: 1e-3,
            },
            physical: PhysicalConfig {
                m: 1.0,
                d: None,
                hbar: Some(1.0),
            },
            potential: PotentialSpec::Free,
            initial: InitialSpec::Vortex {
                x0: vec![0.0, 0.0],
                sigma0: 1.0,
            },
            ensemble: EnsembleConfig {
                n: 100,
                seed: 1,
                bandwidth: 0.0,
            },
            schedule: ScheduleConfig {
                t_end: 1e-3,
                snapshots: vec![],
            },
            output: OutputConfig {
                dir: dir.path().display().to_string(),
                formats: default_formats(),
                trajectories_every: 0,
                checkpoint_every: 1000,
            },
        };
        // Write a checkpoint at t = 0 via the solve pipeline, then diagnose it.
        run_scenario(&cfg, PipelineMode::SolveOnly).unwrap_err();
        // The vortex phase is multivalued, so the pipeline itself reports the
        // finding as an error; diagnose the initial state directly instead.
        let grid = cfg.build_grid().unwrap();
        let params = cfg.build_params();
        let potential = cfg.build_potential(&grid).unwrap();
        let psi = cfg.build_initial_state(&grid, &params, &potential).unwrap();
        let path = dir.path().join("vortex.ndjson");
        io::write_checkpoint(
            &path,
            &CheckpointHeader {
                grid,
                params,
                t: 0.0,
                potential: serde_json::json!({"kind": "free"}),
            },
            &psi,
        )
        .unwrap();
        let findings = diagnose_checkpoint(&path).unwrap();
        let mv = findings
            .iter()
            .find(|f| f["kind"] == "multivalued_phase")
            .unwrap();
        assert_eq!(mv["winding"].as_i64().unwrap().abs(), 1);
        let w = findings.iter().find(|f| f["kind"] == "winding").unwrap();
        assert_eq!(w["winding"].as_i64().unwrap(), 1);
    }
}
