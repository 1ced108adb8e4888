//! The deterministic limit: classical Hamilton-Jacobi flow along
//! characteristics.
//!
//! With the diffusion constant at zero the model reduces to analytical
//! mechanics: trajectories obey `dx/dt = p/m`, `dp/dt = -dU/dx`, and the
//! action accumulated along them, `dS/dt = p^2/2m - U`, solves the classical
//! Hamilton-Jacobi equation `(grad S)^2/2m + U + dS/dt = 0`. Characteristics
//! are integrated with classic fourth-order Runge-Kutta; caustics (trajectory
//! crossings) are detected and reported, not resolved.
//!
//! This module is one-dimensional: every deterministic-limit check the
//! artifact runs lives on a line.

use crate::field::ScalarField;
use crate::field::VectorField;
use crate::grid::Grid;
use crate::madelung::{hj_residual, MadelungFields};
use crate::schrodinger::{PhysicalParams, Potential};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassicalError {
    #[error("energy drift {drift:e} exceeds 1e-6; reduce the step size")]
    StepSizeTooLarge { drift: f64 },
    #[error("potential has no usable force (discontinuous barrier walls)")]
    UnsupportedPotential,
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("trajectories have crossed (caustic); the action is no longer single-valued here")]
    CausticCrossed,
    #[error("grid extends beyond the trajectory fan")]
    FanTooNarrow,
    #[error("invalid input: {0}")]
    BadInput(String),
}

/// One characteristic: position, momentum and accumulated action per time.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub action: Vec<f64>,
}

/// A family of classical trajectories over a common time grid.
#[derive(Debug, Clone)]
pub struct CharacteristicBundle {
    pub times: Vec<f64>,
    pub trajectories: Vec<Trajectory>,
    pub potential: Potential,
    pub mass: f64,
    /// Largest relative energy drift over any trajectory.
    pub max_energy_drift: f64,
}

/// `(index of the lower trajectory of the crossing pair, time)`.
pub type CausticEvent = (usize, f64);

fn force(potential: &Potential, x: f64) -> Result<f64, ClassicalError> {
    match potential {
        Potential::Free => Ok(0.0),
        Potential::Harmonic { k } => Ok(-k * x),
        Potential::Barrier { .. } => Err(ClassicalError::UnsupportedPotential),
        Potential::Tabulated(f) => {
            // Central-difference force interpolated to x.
            let grad = crate::calculus::gradient(f);
            Ok(-crate::ensemble::interpolate(&grad, &[x])[0])
        }
    }
}

/// Integrate Newton's equations for every initial `(x, p)` with RK4 at fixed
/// step `dt` up to `t_end`, accumulating the Lagrangian action alongside.
/// Fails with [`ClassicalError::StepSizeTooLarge`] if any trajectory's
/// relative energy drift exceeds 1e-6.
pub fn integrate_characteristics(
    potential: &Potential,
    initial: &[(f64, f64)],
    mass: f64,
    t_end: f64,
    dt: f64,
) -> Result<CharacteristicBundle, ClassicalError> {
    if !(dt > 0.0) || !(t_end > 0.0) || !t_end.is_finite() {
        return Err(ClassicalError::BadInput(format!("t_end {t_end}, dt {dt}")));
    }
    if initial
        .iter()
        .any(|(x, p)| !x.is_finite() || !p.is_finite())
    {
        return Err(ClassicalError::BadInput(
            "non-finite initial condition".into(),
        ));
    }
    // Pre-resolve the tabulated force once.
    let f = |x: f64| force(potential, x);
    f(0.0)?;

    let steps = (t_end / dt).round().max(1.0) as usize;
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();

    let mut trajectories = Vec::with_capacity(initial.len());
    let mut max_drift = 0.0f64;
    for &(x0, p0) in initial {
        let mut x = x0;
        let mut p = p0;
        let mut s = 0.0;
        let e0 = p0 * p0 / (2.0 * mass) + potential.value(&[x0]);
        let e_scale = if e0.abs() > 1e-12 { e0.abs() } else { 1.0 };

        let mut traj = Trajectory {
            x: Vec::with_capacity(steps + 1),
            p: Vec::with_capacity(steps + 1),
            action: Vec::with_capacity(steps + 1),
        };
        traj.x.push(x);
        traj.p.push(p);
        traj.action.push(s);

        for _ in 0..steps {
            // RK4 on (x, p, S) with dS/dt = p^2/2m - U.
            let lagr = |x: f64, p: f64| -> Result<f64, ClassicalError> {
                Ok(p * p / (2.0 * mass) - potential.value(&[x]))
            };
            let k1x = p / mass;
            let k1p = f(x)?;
            let k1s = lagr(x, p)?;
            let k2x = (p + 0.5 * dt * k1p) / mass;
            let k2p = f(x + 0.5 * dt * k1x)?;
            let k2s = lagr(x + 0.5 * dt * k1x, p + 0.5 * dt * k1p)?;
            let k3x = (p + 0.5 * dt * k2p) / mass;
            let k3p = f(x + 0.5 * dt * k2x)?;
            let k3s = lagr(x + 0.5 * dt * k2x, p + 0.5 * dt * k2p)?;
            let k4x = (p + dt * k3p) / mass;
            let k4p = f(x + dt * k3x)?;
            let k4s = lagr(x + dt * k3x, p + dt * k3p)?;

            x += dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
            p += dt / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
            s += dt / 6.0 * (k1s + 2.0 * k2s + 2.0 * k3s + k4s);

            traj.x.push(x);
            traj.p.push(p);
            traj.action.push(s);

            let e = p * p / (2.0 * mass) + potential.value(&[x]);
            let drift = (e - e0).abs() / e_scale;
            max_drift = max_drift.max(drift);
        }
        trajectories.push(traj);
    }

    if max_drift > 1e-6 {
        return Err(ClassicalError::StepSizeTooLarge { drift: max_drift });
    }
    Ok(CharacteristicBundle {
        times,
        trajectories,
        potential: potential.clone(),
        mass,
        max_energy_drift: max_drift,
    })
}

/// Caustic onsets: the first time each adjacent trajectory pair (ordered by
/// initial position) inverts its spatial order.
pub fn detect_caustics(bundle: &CharacteristicBundle) -> Vec<CausticEvent> {
    let mut events = Vec::new();
    let m = bundle.trajectories.len();
    for j in 0..m.saturating_sub(1) {
        let a = &bundle.trajectories[j];
        let b = &bundle.trajectories[j + 1];
        let initial_gap = b.x[0] - a.x[0];
        if initial_gap == 0.0 {
            continue;
        }
        for (k, t) in bundle.times.iter().enumerate() {
            if (b.x[k] - a.x[k]) * initial_gap < 0.0 {
                events.push((j, *t));
                break;
            }
        }
    }
    events
}

/// Interpolate the action carried by the fan onto a grid at one stored time
/// index. The fan must still be single-valued (no crossing before this time)
/// and must cover the grid. Because the momentum is the spatial derivative
/// of the action along the fan, interpolation is cubic Hermite with `p` as
/// the slope data, keeping the grid samples smooth enough for second-order
/// differencing.
pub fn action_field_from_characteristics(
    bundle: &CharacteristicBundle,
    step: usize,
    grid: &Grid,
) -> Result<ScalarField, ClassicalError> {
    if grid.dim() != 1 {
        return Err(ClassicalError::BadInput(
            "action interpolation is 1D".into(),
        ));
    }
    let m = bundle.trajectories.len();
    if m < 2 {
        return Err(ClassicalError::BadInput(
            "need at least two trajectories".into(),
        ));
    }
    let xs: Vec<f64> = bundle.trajectories.iter().map(|t| t.x[step]).collect();
    let ss: Vec<f64> = bundle.trajectories.iter().map(|t| t.action[step]).collect();
    let ps: Vec<f64> = bundle.trajectories.iter().map(|t| t.p[step]).collect();
    if xs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ClassicalError::CausticCrossed);
    }
    if grid.lo(0) < xs[0] || grid.hi(0) > xs[m - 1] {
        return Err(ClassicalError::FanTooNarrow);
    }
    let mut values = vec![0.0; grid.len()];
    for (i, v) in values.iter_mut().enumerate() {
        let x = grid.position(i)[0];
        let j = xs.partition_point(|&xj| xj < x).clamp(1, m - 1);
        let (x0, x1) = (xs[j - 1], xs[j]);
        let gap = x1 - x0;
        let w = (x - x0) / gap;
        // dS/dx = p along the fan.
        let (s0, s1) = (ss[j - 1], ss[j]);
        let (d0, d1) = (ps[j - 1], ps[j]);
        let h00 = (1.0 + 2.0 * w) * (1.0 - w) * (1.0 - w);
        let h10 = w * (1.0 - w) * (1.0 - w);
        let h01 = w * w * (3.0 - 2.0 * w);
        let h11 = w * w * (w - 1.0);
        *v = h00 * s0 + h10 * gap * d0 + h01 * s1 + h11 * gap * d1;
    }
    ScalarField::from_values(grid, values).map_err(|_| ClassicalError::GridMismatch)
}

/// Residual of the classical Hamilton-Jacobi equation
/// `(grad S)^2/2m + U + dS/dt` for two action fields `dt_pair` apart, with
/// the gradient on the midpoint average. Identical, term by term, to the
/// quantum residual with the diffusion term absent.
pub fn classical_hj_residual(
    s_before: &ScalarField,
    s_after: &ScalarField,
    dt_pair: f64,
    potential: &Potential,
    mass: f64,
) -> Result<ScalarField, ClassicalError> {
    if s_before.grid() != s_after.grid() {
        return Err(ClassicalError::GridMismatch);
    }
    let grid = s_before.grid().clone();
    let s_mid = s_before
        .zip_with(s_after, |a, b| 0.5 * (a + b))
        .expect("same grid");
    // Delegate to the quantum residual with D = 0: the qpot field is zero and
    // every surviving term is evaluated by the same code path.
    let fields = MadelungFields::from_parts(
        ScalarField::from_fn(&grid, |_| 1.0),
        s_mid,
        VectorField::zeros(&grid),
        VectorField::zeros(&grid),
        ScalarField::zeros(&grid),
        0.0,
        vec![true; grid.len()],
    );
    let p = PhysicalParams::from_diffusion(mass, 0.0);
    hj_residual(&fields, s_before, s_after, potential, &p, dt_pair / 2.0)
        .map_err(|_| ClassicalError::GridMismatch)
}
