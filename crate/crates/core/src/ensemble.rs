//! Stochastic particle ensembles.
//!
//! Each particle moves per step by the drift plus a white-noise displacement:
//! `y = x + v(x)*dt + dx`, where each axis of `dx` is an independent Gaussian
//! of variance `2*D*dt`. With the drift taken from the decomposed
//! wavefunction the ensemble histogram follows `|psi|^2`.
//!
//! Randomness is split per particle: particle `i` owns the generator seeded
//! by a SplitMix64-derived stream of the master seed, and every draw that
//! concerns particle `i` (initial placement and all step noise) comes from
//! that stream. Results are therefore bit-reproducible and independent of
//! the order in which particles are processed.

use crate::calculus::gradient;
use crate::field::{ScalarField, VectorField};
use crate::grid::Grid;
use crate::madelung::MadelungFields;
use crate::schrodinger::PhysicalParams;
use crate::stats::fit_linear;
use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnsembleError {
    #[error("density integrates to {0}, expected 1")]
    NotNormalized(f64),
    #[error("need at least {need} particles, got {got}")]
    TooFewParticles { need: usize, got: usize },
    #[error("drift field dimension {drift} does not match ensemble dimension {ensemble}")]
    DimensionMismatch { drift: usize, ensemble: usize },
}

/// SplitMix64 output for one stream label of a master seed.
fn derive_seed(master: u64, label: u64) -> u64 {
    let mut z = master
        .wrapping_add(label.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Generator for one particle's private stream.
pub fn particle_stream(master: u64, particle: u64) -> SmallRng {
    SmallRng::seed_from_u64(derive_seed(master, particle))
}

/// N particle positions at a common time with their private RNG streams.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    dim: usize,
    /// Flat positions, `[i*dim + axis]`.
    positions: Vec<f64>,
    t: f64,
    seed: u64,
    streams: Vec<SmallRng>,
    escaped_total: u64,
}

impl ParticleEnsemble {
    /// Draw `n` i.i.d. samples from a normalized grid density by inverse CDF
    /// over the flattened cells (in 2D the x-major traversal makes this the
    /// marginal-then-conditional scheme) with uniform jitter inside each cell.
    pub fn sample_initial(rho: &ScalarField, n: usize, seed: u64) -> Result<Self, EnsembleError> {
        if n == 0 {
            return Err(EnsembleError::TooFewParticles { need: 1, got: 0 });
        }
        let total = rho.integral();
        if (total - 1.0).abs() > 1e-6 {
            return Err(EnsembleError::NotNormalized(total));
        }
        let grid = rho.grid();
        let dim = grid.dim();

        // Cumulative cell masses for the inverse-CDF lookup.
        let dv = grid.cell_volume();
        let mut cum = Vec::with_capacity(grid.len());
        let mut acc = 0.0;
        for &v in rho.values() {
            acc += v.max(0.0) * dv;
            cum.push(acc);
        }
        let norm = acc;

        let mut positions = vec![0.0; n * dim];
        let mut streams = Vec::with_capacity(n);
        for i in 0..n {
            let mut rng = particle_stream(seed, i as u64);
            let u = rng.random::<f64>() * norm;
            let flat = cum.partition_point(|&c| c < u).min(grid.len() - 1);
            let (ix, iy) = grid.unflatten(flat);
            let cell = [ix, iy];
            for axis in 0..dim {
                let jitter: f64 = rng.random::<f64>() - 0.5;
                let x = grid.coord_axis(cell[axis], axis) + jitter * grid.spacing(axis);
                positions[i * dim + axis] = x.clamp(grid.lo(axis), grid.hi(axis));
            }
            streams.push(rng);
        }
        Ok(ParticleEnsemble {
            dim,
            positions,
            t: 0.0,
            seed,
            streams,
            escaped_total: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.streams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.streams.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    /// Particles clamped back to the grid since creation.
    pub fn escaped_total(&self) -> u64 {
        self.escaped_total
    }

    pub fn escaped_fraction(&self) -> f64 {
        self.escaped_total as f64 / self.len() as f64
    }

    /// One drift-diffusion step: `x += v(x)*dt + N(0, 2*D*dt)` per axis.
    /// The drift is interpolated multilinearly to each particle position;
    /// particles leaving the grid are clamped to the boundary and counted.
    /// Returns the number of escapes this step.
    pub fn step(&mut self, drift: &VectorField, d: f64, dt: f64) -> Result<usize, EnsembleError> {
        assert!(dt > 0.0, "time step must be positive");
        assert!(d >= 0.0, "diffusion constant must be nonnegative");
        if drift.dim() != self.dim {
            return Err(EnsembleError::DimensionMismatch {
                drift: drift.dim(),
                ensemble: self.dim,
            });
        }
        let grid = drift.grid();
        let sigma = (2.0 * d * dt).sqrt();
        let mut escaped = 0usize;
        for i in 0..self.streams.len() {
            let base = i * self.dim;
            let pos = &self.positions[base..base + self.dim];
            let v = interpolate(drift, pos);
            let rng = &mut self.streams[i];
            let mut clamped = false;
            for axis in 0..self.dim {
                let z: f64 = rng.sample(StandardNormal);
                let mut x = self.positions[base + axis] + v[axis] * dt + sigma * z;
                if x < grid.lo(axis) {
                    x = grid.lo(axis);
                    clamped = true;
                } else if x > grid.hi(axis) {
                    x = grid.hi(axis);
                    clamped = true;
                }
                self.positions[base + axis] = x;
            }
            if clamped {
                escaped += 1;
            }
        }
        self.escaped_total += escaped as u64;
        self.t += dt;
        Ok(escaped)
    }

    /// Sample mean per axis.
    pub fn mean(&self) -> Vec<f64> {
        let n = self.len() as f64;
        let mut m = vec![0.0; self.dim];
        for i in 0..self.len() {
            for axis in 0..self.dim {
                m[axis] += self.positions[i * self.dim + axis];
            }
        }
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Sample variance per axis (denominator `n`).
    pub fn variance(&self) -> Vec<f64> {
        let n = self.len() as f64;
        let mean = self.mean();
        let mut var = vec![0.0; self.dim];
        for i in 0..self.len() {
            for axis in 0..self.dim {
                let d = self.positions[i * self.dim + axis] - mean[axis];
                var[axis] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= n);
        var
    }
}

/// Multilinear interpolation of a vector field at a position (clamped into
/// the grid).
pub fn interpolate(field: &VectorField, pos: &[f64]) -> [f64; 2] {
    let grid = field.grid();
    let dim = grid.dim();
    let mut i0 = [0usize; 2];
    let mut w = [0.0f64; 2];
    for axis in 0..dim {
        let u = ((pos[axis] - grid.lo(axis)) / grid.spacing(axis))
            .clamp(0.0, (grid.n(axis) - 1) as f64);
        let base = (u.floor() as usize).min(grid.n(axis) - 2);
        i0[axis] = base;
        w[axis] = u - base as f64;
    }
    let mut out = [0.0f64; 2];
    match dim {
        1 => {
            for (axis, comp) in (0..dim).map(|a| (a, field.component(a))) {
                out[axis] = comp[i0[0]] * (1.0 - w[0]) + comp[i0[0] + 1] * w[0];
            }
        }
        2 => {
            let (wx, wy) = (w[0], w[1]);
            for axis in 0..dim {
                let comp = field.component(axis);
                let f00 = comp[grid.flatten(i0[0], i0[1])];
                let f10 = comp[grid.flatten(i0[0] + 1, i0[1])];
                let f01 = comp[grid.flatten(i0[0], i0[1] + 1)];
                let f11 = comp[grid.flatten(i0[0] + 1, i0[1] + 1)];
                out[axis] = f00 * (1.0 - wx) * (1.0 - wy)
                    + f10 * wx * (1.0 - wy)
                    + f01 * (1.0 - wx) * wy
                    + f11 * wx * wy;
            }
        }
        _ => unreachable!(),
    }
    out
}

/// Normalized cell histogram of the particle positions, optionally smoothed
/// by a triangular kernel of the given bandwidth (length units). Particles
/// outside the grid extents are excluded; the returned count reports them.
pub fn estimate_density(
    ensemble: &ParticleEnsemble,
    grid: &Grid,
    bandwidth: f64,
) -> Result<(ScalarField, usize), EnsembleError> {
    if ensemble.len() < 100 {
        return Err(EnsembleError::TooFewParticles {
            need: 100,
            got: ensemble.len(),
        });
    }
    let mut counts = vec![0.0f64; grid.len()];
    let mut excluded = 0usize;
    for i in 0..ensemble.len() {
        let pos = ensemble.position(i);
        if !grid.contains(pos) {
            excluded += 1;
            continue;
        }
        counts[grid.nearest_index(pos)] += 1.0;
    }
    let included = ensemble.len() - excluded;
    if included == 0 {
        return Err(EnsembleError::TooFewParticles { need: 1, got: 0 });
    }
    let dv = grid.cell_volume();
    let mut density = ScalarField::from_values(grid, counts).expect("length matches");
    for v in density.values_mut() {
        *v /= included as f64 * dv;
    }
    if bandwidth > 0.0 {
        density = smooth_triangular(&density, bandwidth);
        density.normalize().expect("smoothed histogram has mass");
    }
    Ok((density, excluded))
}

/// Separable triangular-kernel smoothing with the given bandwidth.
fn smooth_triangular(f: &ScalarField, bandwidth: f64) -> ScalarField {
    let grid = f.grid().clone();
    let mut values = f.values().to_vec();
    for axis in 0..grid.dim() {
        let h = grid.spacing(axis);
        let reach = (bandwidth / h).floor() as i64;
        if reach < 1 {
            continue;
        }
        let mut weights = Vec::with_capacity((2 * reach + 1) as usize);
        for k in -reach..=reach {
            weights.push(1.0 - (k as f64 * h / bandwidth).abs());
        }
        let wsum: f64 = weights.iter().sum();
        let n_axis = grid.n(axis);
        let mut out = values.clone();
        for flat in 0..grid.len() {
            let (ix, iy) = grid.unflatten(flat);
            let i = if axis == 0 { ix } else { iy };
            let mut acc = 0.0;
            for (kk, &wk) in weights.iter().enumerate() {
                let k = kk as i64 - reach;
                let j = i as i64 + k;
                if j < 0 || j >= n_axis as i64 {
                    continue;
                }
                let src = if axis == 0 {
                    grid.flatten(j as usize, iy)
                } else {
                    grid.flatten(ix, j as usize)
                };
                acc += wk * values[src];
            }
            out[flat] = acc / wsum;
        }
        values = out;
    }
    ScalarField::from_values(&grid, values).expect("length preserved")
}

/// Pointwise kinetic-energy estimator
/// `T = m/2 (v^2 - 2 D v.grad(rho)/rho)`, excluding the additive constant
/// (reported as the convention field, fixed at zero).
#[derive(Debug, Clone)]
pub struct KineticEnergyReport {
    pub t_field: ScalarField,
    /// `integral rho * T dV`.
    pub t_mean: f64,
    /// Additive offset convention; the unknown constant is excluded.
    pub t0_convention: f64,
}

pub fn kinetic_energy_estimate(fields: &MadelungFields, p: &PhysicalParams) -> KineticEnergyReport {
    let grid = fields.grid().clone();
    let grad_rho = gradient(&fields.rho);
    let mut t_field = ScalarField::zeros(&grid);
    for i in 0..grid.len() {
        if !fields.valid[i] {
            continue;
        }
        let mut v2 = 0.0;
        let mut v_dot_grad = 0.0;
        for axis in 0..grid.dim() {
            let v = fields.v.component(axis)[i];
            v2 += v * v;
            v_dot_grad += v * grad_rho.component(axis)[i];
        }
        let rho = fields.rho.values()[i];
        t_field.values_mut()[i] = 0.5 * p.mass() * (v2 - 2.0 * p.diffusion() * v_dot_grad / rho);
    }
    let dv = grid.cell_volume();
    let t_mean: f64 = t_field
        .values()
        .iter()
        .zip(fields.rho.values())
        .map(|(t, r)| t * r)
        .sum::<f64>()
        * dv;
    KineticEnergyReport {
        t_field,
        t_mean,
        t0_convention: 0.0,
    }
}

/// Result of the center-of-mass diffusion experiment.
#[derive(Debug, Clone, Serialize)]
pub struct ComDiffusionResult {
    /// Fitted diffusion constant of the center of mass.
    #[serde(rename = "D_com_fit")]
    pub d_com_fit: f64,
    pub stderr: f64,
    pub n: usize,
    pub ensembles: usize,
    pub seed: u64,
    /// Slope/2 of an ordinary least-squares line through the
    /// across-systems COM variance curve (consistency diagnostic; much
    /// noisier than the primary estimator).
    #[serde(skip)]
    pub var_curve_d: f64,
    #[serde(skip)]
    pub var_curve_stderr: f64,
}

/// Track the center of mass of `ensembles` independent free `n`-particle
/// systems over `steps` steps of size `dt` and estimate its diffusion
/// constant, expected to be `D/n`.
///
/// The COM variance grows as `Var(t) = 2*D_com*t`; the returned fit is the
/// minimum-variance estimate of that slope, obtained by pooling the
/// per-step COM increments (relative error `sqrt(2/(ensembles*steps))`).
/// An ordinary least-squares fit of the variance curve itself is returned
/// alongside as a diagnostic.
pub fn com_diffusion_experiment(
    n_particles: usize,
    d: f64,
    steps: usize,
    dt: f64,
    ensembles: usize,
    seed: u64,
) -> ComDiffusionResult {
    assert!(n_particles >= 1 && steps >= 2 && ensembles >= 2);
    let mut sq_sum = 0.0;
    let mut sq_sq_sum = 0.0;
    // Across-systems second moment of the COM at each time step (the COM
    // starts at zero and has zero mean by symmetry).
    let mut var_curve = vec![0.0f64; steps + 1];

    for sys in 0..ensembles {
        let sys_seed = derive_seed(seed, 0x434f4d00 + sys as u64);
        let mut rngs: Vec<SmallRng> = (0..n_particles)
            .map(|i| particle_stream(sys_seed, i as u64))
            .collect();
        let sigma = (2.0 * d * dt).sqrt();
        let mut com = 0.0f64;
        for k in 1..=steps {
            let mut incr_sum = 0.0;
            for rng in &mut rngs {
                let z: f64 = rng.sample(StandardNormal);
                incr_sum += sigma * z;
            }
            let d_com = incr_sum / n_particles as f64;
            com += d_com;
            let sq = d_com * d_com;
            sq_sum += sq;
            sq_sq_sum += sq * sq;
            var_curve[k] += com * com;
        }
    }
    let m = ensembles as f64;
    for v in &mut var_curve {
        *v /= m;
    }

    let count = (ensembles * steps) as f64;
    let mean_sq = sq_sum / count;
    let d_com_fit = mean_sq / (2.0 * dt);
    let sq_var = (sq_sq_sum / count - mean_sq * mean_sq).max(0.0);
    let stderr = (sq_var / count).sqrt() / (2.0 * dt);

    let ts: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
    let fit = fit_linear(&ts, &var_curve).expect("enough points by construction");

    ComDiffusionResult {
        d_com_fit,
        stderr,
        n: n_particles,
        ensembles,
        seed,
        var_curve_d: fit.slope / 2.0,
        var_curve_stderr: fit.stderr_slope / 2.0,
    }
}
