//! Hydrodynamic decomposition of the wavefunction and its field-equation
//! residuals.
//!
//! `psi = sqrt(rho) * exp(i*S/hbar)` splits into the density `rho`, the
//! single-valued action `S`, the mean velocity
//! `v = D*grad(rho)/rho + grad(S)/m`, the current `j = rho*grad(S)/m`
//! (evaluated directly from `psi` so real states carry exactly zero current),
//! and the quantum potential `qpot = -2*m*D^2 * lap(sqrt(rho))/sqrt(rho)`.
//! Residual operators check the continuity equation
//! `drho/dt + div(rho*grad(S))/m = 0` and the Hamilton-Jacobi equation
//! `(grad S)^2/2m + U + dS/dt + qpot = 0` on the decomposed fields, and the
//! winding/nodal diagnostics classify solutions the derivation excludes:
//! multivalued `S` and nodes crossed by current.

use crate::calculus::{divergence, gradient, laplacian};
use crate::field::{ComplexField, ScalarField, VectorField};
use crate::grid::Grid;
use crate::phase::{unwrap_phase, wrap_angle, PhaseError};
use crate::schrodinger::{PhysicalParams, Potential};
use serde::Serialize;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MadelungError {
    /// The phase winds around a node; no single-valued `S` exists. A physical
    /// finding, not a numerical failure.
    #[error("phase is multivalued: winding {winding}")]
    MultivaluedPhase {
        winding: i64,
        loop_points: Vec<usize>,
    },
    #[error("all amplitudes below the node threshold")]
    AllBelowThreshold,
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("`before` must precede `after` in time")]
    TimeOrder,
    #[error("loop passes through a node (|psi| at or below threshold at point {0})")]
    LoopThroughNode(usize),
}

impl From<PhaseError> for MadelungError {
    fn from(e: PhaseError) -> Self {
        match e {
            PhaseError::MultivaluedPhase {
                winding,
                loop_points,
            } => MadelungError::MultivaluedPhase {
                winding,
                loop_points,
            },
            PhaseError::AllBelowThreshold => MadelungError::AllBelowThreshold,
        }
    }
}

/// The hydrodynamic variables of one wavefunction at one time.
///
/// `valid` marks points where `rho` exceeds the node threshold and the
/// difference stencils touch only unwrapped phase values; `v` and `qpot`
/// are zero outside it. `j` is defined everywhere (no division involved).
#[derive(Debug, Clone)]
pub struct MadelungFields {
    pub rho: ScalarField,
    pub s: ScalarField,
    pub v: VectorField,
    pub j: VectorField,
    pub qpot: ScalarField,
    pub t: f64,
    pub valid: Vec<bool>,
}

impl MadelungFields {
    /// Assemble fields directly; callers are responsible for consistency.
    /// Used by the classical-limit checks and for hand-built states in tests.
    pub fn from_parts(
        rho: ScalarField,
        s: ScalarField,
        v: VectorField,
        j: VectorField,
        qpot: ScalarField,
        t: f64,
        valid: Vec<bool>,
    ) -> Self {
        MadelungFields {
            rho,
            s,
            v,
            j,
            qpot,
            t,
            valid,
        }
    }

    pub fn grid(&self) -> &Grid {
        self.rho.grid()
    }

    /// Largest magnitude of a residual-like field over the valid region.
    pub fn masked_max_abs(&self, f: &ScalarField) -> f64 {
        f.values()
            .iter()
            .zip(&self.valid)
            .filter(|(_, &ok)| ok)
            .map(|(v, _)| v.abs())
            .fold(0.0, f64::max)
    }
}

/// Decompose `psi` at time `t` with the principal phase anchor
/// (`S` at the density maximum equals `hbar * arg psi` there).
pub fn decompose(
    psi: &ComplexField,
    p: &PhysicalParams,
    t: f64,
) -> Result<MadelungFields, MadelungError> {
    decompose_inner(psi, p, t, None)
}

/// Decompose `psi` keeping the `2*pi*hbar` branch of `S` continuous with a
/// previous decomposition (minimal jump at the current anchor point).
pub fn decompose_following(
    psi: &ComplexField,
    p: &PhysicalParams,
    t: f64,
    prev: &MadelungFields,
) -> Result<MadelungFields, MadelungError> {
    decompose_inner(psi, p, t, Some(prev))
}

fn decompose_inner(
    psi: &ComplexField,
    p: &PhysicalParams,
    t: f64,
    prev: Option<&MadelungFields>,
) -> Result<MadelungFields, MadelungError> {
    assert!(p.hbar() > 0.0, "decomposition needs hbar > 0");
    let grid = psi.grid().clone();
    let unwrapped = unwrap_phase(psi, p.hbar())?;
    let mut s = unwrapped.s;

    // Carry the gauge: shift by the 2*pi*hbar multiple that keeps S at the
    // anchor closest to its previous value.
    if let Some(prev) = prev {
        if prev.grid() != &grid {
            return Err(MadelungError::GridMismatch);
        }
        let anchor = unwrapped.seed;
        let period = 2.0 * PI * p.hbar();
        let k = ((prev.s.values()[anchor] - s.values()[anchor]) / period).round();
        if k != 0.0 {
            let shift = k * period;
            for v in s.values_mut() {
                *v += shift;
            }
        }
    }

    let rho = psi.density();
    let amp = psi.modulus();

    // A point is valid when the whole difference stencil at that point sees
    // unwrapped phase values: the outermost one-sided stencils reach two
    // points in, interior stencils one.
    let n = grid.len();
    let reach = &unwrapped.reachable;
    let mut valid = vec![false; n];
    for i in 0..n {
        if !reach[i] {
            continue;
        }
        let mut ok = true;
        for nb in grid.neighbors(i) {
            if !reach[nb] {
                ok = false;
                break;
            }
            if grid.is_boundary(i) {
                for nb2 in grid.neighbors(nb) {
                    if !reach[nb2] {
                        ok = false;
                        break;
                    }
                }
            }
        }
        valid[i] = ok;
    }

    let grad_rho = gradient(&rho);
    let grad_s = gradient(&s);
    let mut v = VectorField::zeros(&grid);
    for axis in 0..grid.dim() {
        let vr = grad_rho.component(axis);
        let vs = grad_s.component(axis);
        let out = v.component_mut(axis);
        for i in 0..n {
            if valid[i] {
                out[i] = p.diffusion() * vr[i] / rho.values()[i] + vs[i] / p.mass();
            }
        }
    }

    // j = (hbar/m) Im(conj(psi) grad psi) = rho * grad(S)/m, but free of the
    // unwrapping: exactly zero for real psi, finite across nodes.
    let grad_re = gradient(&psi.real());
    let grad_im = gradient(&psi.imag());
    let mut j = VectorField::zeros(&grid);
    for axis in 0..grid.dim() {
        let gre = grad_re.component(axis);
        let gim = grad_im.component(axis);
        let out = j.component_mut(axis);
        for (i, val) in psi.values().iter().enumerate() {
            out[i] = p.hbar() / p.mass() * (val.re * gim[i] - val.im * gre[i]);
        }
    }

    // qpot on sqrt(rho) = |psi| to halve the dynamic range near nodes.
    let lap_amp = laplacian(&amp);
    let mut qpot = ScalarField::zeros(&grid);
    let coeff = -2.0 * p.mass() * p.diffusion() * p.diffusion();
    for i in 0..n {
        if valid[i] {
            qpot.values_mut()[i] = coeff * lap_amp.values()[i] / amp.values()[i];
        }
    }

    Ok(MadelungFields {
        rho,
        s,
        v,
        j,
        qpot,
        t,
        valid,
    })
}

/// Residual of the continuity equation between two decompositions:
/// `(rho_after - rho_before)/dt + div(rho_mid * grad(S_mid))/m` with midpoint
/// averages. Zero (to discretization error) when the density is transported
/// by the phase gradient.
pub fn continuity_residual(
    before: &MadelungFields,
    after: &MadelungFields,
    p: &PhysicalParams,
) -> Result<ScalarField, MadelungError> {
    if before.grid() != after.grid() {
        return Err(MadelungError::GridMismatch);
    }
    if !(after.t > before.t) {
        return Err(MadelungError::TimeOrder);
    }
    let dt = after.t - before.t;
    let rho_mid = before
        .rho
        .zip_with(&after.rho, |a, b| 0.5 * (a + b))
        .expect("same grid");
    let s_mid = before
        .s
        .zip_with(&after.s, |a, b| 0.5 * (a + b))
        .expect("same grid");
    let grad_s = gradient(&s_mid);
    let grid = before.grid();
    let mut flux = VectorField::zeros(grid);
    for axis in 0..grid.dim() {
        let gs = grad_s.component(axis);
        let out = flux.component_mut(axis);
        for i in 0..grid.len() {
            out[i] = rho_mid.values()[i] * gs[i] / p.mass();
        }
    }
    let div_flux = divergence(&flux);
    let mut r = ScalarField::zeros(grid);
    for i in 0..grid.len() {
        r.values_mut()[i] =
            (after.rho.values()[i] - before.rho.values()[i]) / dt + div_flux.values()[i];
    }
    Ok(r)
}

/// Residual of the Hamilton-Jacobi equation at `fields.t`:
/// `(grad S)^2/(2m) + U + dS/dt + qpot`, with `dS/dt` the symmetric
/// difference of the surrounding decompositions (`before_s` at `t - dt`,
/// `after_s` at `t + dt`). Points outside the valid region are zeroed.
pub fn hj_residual(
    fields: &MadelungFields,
    before_s: &ScalarField,
    after_s: &ScalarField,
    potential: &Potential,
    p: &PhysicalParams,
    dt: f64,
) -> Result<ScalarField, MadelungError> {
    let grid = fields.grid();
    if before_s.grid() != grid || after_s.grid() != grid {
        return Err(MadelungError::GridMismatch);
    }
    let grad_s = gradient(&fields.s);
    let u = potential
        .sample(grid)
        .map_err(|_| MadelungError::GridMismatch)?;
    let mut r = ScalarField::zeros(grid);
    for i in 0..grid.len() {
        if !fields.valid[i] {
            continue;
        }
        let mut gs2 = 0.0;
        for axis in 0..grid.dim() {
            let g = grad_s.component(axis)[i];
            gs2 += g * g;
        }
        let s_dot = (after_s.values()[i] - before_s.values()[i]) / (2.0 * dt);
        r.values_mut()[i] =
            gs2 / (2.0 * p.mass()) + u.values()[i] + s_dot + fields.qpot.values()[i];
    }
    Ok(r)
}

/// Winding number of the phase around an ordered closed loop of grid points
/// (the edge from the last point back to the first is included). The sum of
/// wrapped phase increments around a closed loop is an exact multiple of
/// `2*pi` up to round-off.
pub fn winding_number(psi: &ComplexField, loop_points: &[usize]) -> Result<i64, MadelungError> {
    let eps = crate::phase::DEFAULT_NODE_EPS_REL * psi.max_modulus();
    let vals = psi.values();
    for &pt in loop_points {
        if vals[pt].norm() <= eps {
            return Err(MadelungError::LoopThroughNode(pt));
        }
    }
    let mut total = 0.0;
    for k in 0..loop_points.len() {
        let a = vals[loop_points[k]].arg();
        let b = vals[loop_points[(k + 1) % loop_points.len()]].arg();
        total += wrap_angle(b - a);
    }
    let w = total / (2.0 * PI);
    debug_assert!(
        (w - w.round()).abs() < 1e-6,
        "winding sum {total} is not a 2*pi multiple"
    );
    Ok(w.round() as i64)
}

/// Grid-point loop approximating a counterclockwise circle (2D grids).
pub fn circle_loop(grid: &Grid, center: [f64; 2], radius: f64) -> Vec<usize> {
    let h = grid.max_spacing();
    let samples = ((2.0 * PI * radius / h).ceil() as usize * 2).max(64);
    let mut pts = Vec::with_capacity(samples);
    for k in 0..samples {
        let phi = 2.0 * PI * k as f64 / samples as f64;
        let pos = [
            center[0] + radius * phi.cos(),
            center[1] + radius * phi.sin(),
        ];
        let idx = grid.nearest_index(&pos);
        if pts.last() != Some(&idx) {
            pts.push(idx);
        }
    }
    while pts.len() > 1 && pts.first() == pts.last() {
        pts.pop();
    }
    pts
}

/// One connected component of the low-density set.
#[derive(Debug, Clone, Serialize)]
pub struct NodalRegion {
    /// Flat indices of the points in the region.
    pub points: Vec<usize>,
    /// Largest density inside the region.
    pub rho_max: f64,
    /// Smallest current-speed `|j|/max(rho, eps)` inside the region.
    pub speed_min: f64,
    /// Largest current-speed inside the region.
    pub speed_max: f64,
    /// True when every point carries current-speed above the threshold:
    /// a node with flow, which the derivation rejects as unphysical.
    pub flagged: bool,
}

/// Interior low-density regions and their current-speed classification.
#[derive(Debug, Clone, Serialize)]
pub struct NodalReport {
    pub regions: Vec<NodalRegion>,
    pub count: usize,
    /// Density threshold that defined the regions.
    pub eps: f64,
    /// Current-speed threshold used for flagging.
    pub speed_threshold: f64,
}

impl NodalReport {
    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn flagged_count(&self) -> usize {
        self.regions.iter().filter(|r| r.flagged).count()
    }
}

/// Find connected components of `{rho < eps}` that do not touch the grid
/// boundary (vanishing-boundary tails are not nodes) and flag those whose
/// current-speed exceeds `10 * max_spacing / dt`, the default threshold
/// separating genuine flow from round-off at the grid scale.
pub fn detect_nodal_regions(fields: &MadelungFields, eps: f64) -> NodalReport {
    let grid = fields.grid();
    let threshold = 10.0 * grid.max_spacing() / grid.dt();
    detect_nodal_regions_with(fields, eps, threshold)
}

/// As [`detect_nodal_regions`] with an explicit speed threshold.
pub fn detect_nodal_regions_with(
    fields: &MadelungFields,
    eps: f64,
    speed_threshold: f64,
) -> NodalReport {
    let grid = fields.grid();
    let n = grid.len();
    let candidate: Vec<bool> = fields.rho.values().iter().map(|&r| r < eps).collect();
    let mut seen = vec![false; n];
    let mut regions = Vec::new();

    for start in 0..n {
        if !candidate[start] || seen[start] {
            continue;
        }
        let mut points = Vec::new();
        let mut touches_boundary = false;
        let mut queue = std::collections::VecDeque::from([start]);
        seen[start] = true;
        while let Some(cur) = queue.pop_front() {
            if grid.is_boundary(cur) {
                touches_boundary = true;
            }
            points.push(cur);
            for nb in grid.neighbors(cur) {
                if candidate[nb] && !seen[nb] {
                    seen[nb] = true;
                    queue.push_back(nb);
                }
            }
        }
        if touches_boundary {
            continue;
        }
        let mut rho_max = 0.0f64;
        let mut speed_min = f64::INFINITY;
        let mut speed_max = 0.0f64;
        for &pt in &points {
            let rho = fields.rho.values()[pt];
            rho_max = rho_max.max(rho);
            let speed = fields.j.magnitude_at(pt) / rho.max(eps);
            speed_min = speed_min.min(speed);
            speed_max = speed_max.max(speed);
        }
        points.sort_unstable();
        let flagged = speed_min > speed_threshold;
        regions.push(NodalRegion {
            points,
            rho_max,
            speed_min,
            speed_max,
            flagged,
        });
    }

    let count = regions.len();
    NodalReport {
        regions,
        count,
        eps,
        speed_threshold,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schrodinger::{
        analytic_gaussian_packet, ground_state_imaginary_time, step_crank_nicolson,
    };
    use num_complex::Complex64;

    fn params() -> PhysicalParams {
        PhysicalParams::from_hbar(1.0, 1.0)
    }

    /// Normalized 1D Gaussian density as a real wavefunction.
    fn real_gaussian(grid: &Grid, sigma: f64) -> ComplexField {
        let mut psi = ComplexField::from_fn(grid, |x| {
            Complex64::new((-x[0] * x[0] / (4.0 * sigma * sigma)).exp(), 0.0)
        });
        psi.normalize().unwrap();
        psi
    }

    #[test]
    fn real_state_velocity_is_osmotic_and_current_vanishes() {
        let p = params();
        let g = Grid::new_1d(-6.0, 6.0, 512, 1e-3).unwrap();
        let sigma = 1.0;
        let psi = real_gaussian(&g, sigma);
        let f = decompose(&psi, &p, 0.0).unwrap();
        // rho has variance sigma^2, so v = D grad(rho)/rho = -D x / sigma^2.
        for i in 0..g.len() {
            let x = g.position(i)[0];
            if f.valid[i] && x.abs() <= 4.0 {
                let expect = -p.diffusion() * x / (sigma * sigma);
                assert!(
                    (f.v.component(0)[i] - expect).abs() < 5e-3,
                    "v({x}) = {} vs {expect}",
                    f.v.component(0)[i]
                );
            }
            assert_eq!(f.j.component(0)[i], 0.0, "current of a real state");
        }
    }

    #[test]
    fn boosted_state_current_is_density_times_velocity() {
        let p = params();
        let g = Grid::new_1d(-10.0, 10.0, 4096, 1e-3).unwrap();
        let p0 = 0.5;
        let sigma = 1.5;
        let mut psi = ComplexField::from_fn(&g, |x| {
            Complex64::new((-x[0] * x[0] / (4.0 * sigma * sigma)).exp(), 0.0)
                * Complex64::new(0.0, p0 * x[0] / p.hbar()).exp()
        });
        psi.normalize().unwrap();
        let f = decompose(&psi, &p, 0.0).unwrap();
        for i in 0..g.len() {
            let expect = f.rho.values()[i] * p0 / p.mass();
            assert!(
                (f.j.component(0)[i] - expect).abs() < 1e-6,
                "j = {} vs rho p0/m = {expect}",
                f.j.component(0)[i]
            );
        }
    }

    #[test]
    fn global_phase_shifts_s_only() {
        let p = params();
        let g = Grid::new_1d(-6.0, 6.0, 256, 1e-3).unwrap();
        let psi = analytic_gaussian_packet(&[0.3], &[0.4], &[1.0], 0.0, &p, &g);
        let theta0 = 0.9;
        let rot = Complex64::new(0.0, theta0).exp();
        let psi_rot =
            ComplexField::from_values(&g, psi.values().iter().map(|v| v * rot).collect()).unwrap();
        let a = decompose(&psi, &p, 0.0).unwrap();
        let b = decompose(&psi_rot, &p, 0.0).unwrap();
        for i in 0..g.len() {
            assert!((a.rho.values()[i] - b.rho.values()[i]).abs() < 1e-14);
            assert!((a.v.component(0)[i] - b.v.component(0)[i]).abs() < 1e-10);
            assert!((a.j.component(0)[i] - b.j.component(0)[i]).abs() < 1e-12);
            if a.valid[i] {
                let ds = b.s.values()[i] - a.s.values()[i];
                assert!((ds - p.hbar() * theta0).abs() < 1e-10, "S shift {ds}");
            }
        }
    }

    #[test]
    fn current_identity_j_equals_rho_grad_s_over_m() {
        let p = params();
        let g = Grid::new_1d(-10.0, 10.0, 2048, 1e-3).unwrap();
        let psi = analytic_gaussian_packet(&[0.0], &[0.7], &[1.0], 0.4, &p, &g);
        let f = decompose(&psi, &p, 0.4).unwrap();
        let grad_s = gradient(&f.s);
        let grad_rho = gradient(&f.rho);
        for i in 0..g.len() {
            if !f.valid[i] || g.position(i)[0].abs() > 5.0 {
                continue;
            }
            let rho = f.rho.values()[i];
            // Construction identity: rho*v - D*grad(rho) = rho*grad(S)/m.
            let lhs = rho * f.v.component(0)[i] - p.diffusion() * grad_rho.component(0)[i];
            let s_form = rho * grad_s.component(0)[i] / p.mass();
            assert!(
                (lhs - s_form).abs() < 1e-12,
                "identity violated: {lhs} vs {s_form}"
            );
            // Discretization identity: the psi-route current agrees.
            assert!(
                (f.j.component(0)[i] - s_form).abs() < 1e-5,
                "j route {} vs S route {s_form}",
                f.j.component(0)[i]
            );
        }
    }

    #[test]
    fn quantum_potential_two_routes_agree() {
        let p = params();
        let g = Grid::new_1d(-8.0, 8.0, 1024, 1e-3).unwrap();
        let psi = real_gaussian(&g, 1.0);
        let f = decompose(&psi, &p, 0.0).unwrap();
        let grad_rho = gradient(&f.rho);
        let lap_rho = laplacian(&f.rho);
        for i in 0..g.len() {
            if !f.valid[i] || g.position(i)[0].abs() > 3.0 {
                continue;
            }
            let rho = f.rho.values()[i];
            let gr = grad_rho.component(0)[i];
            let expanded = 0.5
                * p.mass()
                * p.diffusion()
                * p.diffusion()
                * ((gr / rho) * (gr / rho) - 2.0 * lap_rho.values()[i] / rho);
            assert!(
                (f.qpot.values()[i] - expanded).abs() < 1e-3,
                "qpot {} vs expanded {expanded}",
                f.qpot.values()[i]
            );
        }
    }

    #[test]
    fn reconstruction_recovers_psi() {
        let p = params();
        let g = Grid::new_1d(-8.0, 8.0, 512, 1e-3).unwrap();
        let psi = analytic_gaussian_packet(&[0.5], &[0.6], &[1.1], 0.3, &p, &g);
        let f = decompose(&psi, &p, 0.3).unwrap();
        for i in 0..g.len() {
            if !f.valid[i] {
                continue;
            }
            let rebuilt =
                Complex64::from_polar(f.rho.values()[i].sqrt(), f.s.values()[i] / p.hbar());
            assert!(
                (rebuilt - psi.values()[i]).norm() < 1e-10,
                "reconstruction error at {i}"
            );
        }
    }

    #[test]
    fn identification_ties_qpot_coefficient_to_hbar() {
        for (m, d) in [(1.0, 0.5), (2.0, 0.25), (0.5, 1.25)] {
            let p = PhysicalParams::from_diffusion(m, d);
            let lhs = 2.0 * p.mass() * p.diffusion() * p.diffusion();
            let rhs = p.hbar() * p.hbar() / (2.0 * p.mass());
            assert!((lhs - rhs).abs() <= 1e-15 * lhs.max(1.0));
        }
    }

    #[test]
    fn continuity_residual_of_uniform_static_state_is_zero() {
        let p = params();
        let g = Grid::new_1d(0.0, 1.0, 64, 1e-3).unwrap();
        let rho = ScalarField::from_fn(&g, |_| 1.0);
        let s = ScalarField::zeros(&g);
        let make = |t: f64| {
            MadelungFields::from_parts(
                rho.clone(),
                s.clone(),
                VectorField::zeros(&g),
                VectorField::zeros(&g),
                ScalarField::zeros(&g),
                t,
                vec![true; g.len()],
            )
        };
        let r = continuity_residual(&make(0.0), &make(1e-3), &p).unwrap();
        assert!(r.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn continuity_residual_small_for_stationary_state() {
        let p = params();
        let g = Grid::new_1d(-6.0, 6.0, 256, 1e-3).unwrap();
        let potential = Potential::Harmonic { k: 1.0 };
        let (psi0, _) = ground_state_imaginary_time(&potential, &p, &g, 1e-12).unwrap();
        let psi1 = step_crank_nicolson(&psi0, &potential, &p, 1e-3).unwrap();
        let f0 = decompose(&psi0, &p, 0.0).unwrap();
        let f1 = decompose_following(&psi1, &p, 1e-3, &f0).unwrap();
        let r = continuity_residual(&f0, &f1, &p).unwrap();
        assert!(
            f1.masked_max_abs(&r) < 1e-6,
            "residual {}",
            f1.masked_max_abs(&r)
        );
    }

    #[test]
    fn residuals_reject_mismatched_grids() {
        let p = params();
        let ga = Grid::new_1d(-6.0, 6.0, 64, 1e-3).unwrap();
        let gb = Grid::new_1d(-5.0, 5.0, 64, 1e-3).unwrap();
        let fa = decompose(&real_gaussian(&ga, 1.0), &p, 0.0).unwrap();
        let mut fb = decompose(&real_gaussian(&gb, 1.0), &p, 1e-3).unwrap();
        fb.t = 1e-3;
        assert_eq!(
            continuity_residual(&fa, &fb, &p).unwrap_err(),
            MadelungError::GridMismatch
        );
        let s_other = ScalarField::zeros(&gb);
        assert_eq!(
            hj_residual(&fa, &s_other, &s_other, &Potential::Free, &p, 1e-3).unwrap_err(),
            MadelungError::GridMismatch
        );
    }

    #[test]
    fn continuity_rejects_misordered_times() {
        let p = params();
        let g = Grid::new_1d(-6.0, 6.0, 64, 1e-3).unwrap();
        let psi = real_gaussian(&g, 1.0);
        let f = decompose(&psi, &p, 0.5).unwrap();
        assert_eq!(
            continuity_residual(&f, &f, &p).unwrap_err(),
            MadelungError::TimeOrder
        );
    }

    #[test]
    fn hj_residual_small_for_stationary_state() {
        let p = params();
        let g = Grid::new_1d(-6.0, 6.0, 256, 1e-3).unwrap();
        let potential = Potential::Harmonic { k: 1.0 };
        let (psi0, e0) = ground_state_imaginary_time(&potential, &p, &g, 1e-12).unwrap();
        let dt = 1e-3;
        let psi1 = step_crank_nicolson(&psi0, &potential, &p, dt).unwrap();
        let psi2 = step_crank_nicolson(&psi1, &potential, &p, dt).unwrap();
        let f0 = decompose(&psi0, &p, 0.0).unwrap();
        let f1 = decompose_following(&psi1, &p, dt, &f0).unwrap();
        let f2 = decompose_following(&psi2, &p, 2.0 * dt, &f1).unwrap();
        let r = hj_residual(&f1, &f0.s, &f2.s, &potential, &p, dt).unwrap();
        let max = f1.masked_max_abs(&r);
        assert!(max < 1e-5, "HJ residual {max}");
        // dS/dt should be -E0 for the rotating stationary phase.
        let anchor = g.nearest_index(&[0.0]);
        let s_dot = (f2.s.values()[anchor] - f0.s.values()[anchor]) / (2.0 * dt);
        assert!((s_dot + e0).abs() < 1e-6, "dS/dt = {s_dot}, -E0 = {}", -e0);
    }

    #[test]
    fn hj_residual_small_for_free_packet_at_rest() {
        let p = params();
        // The residual peaks at the valid-region fringe (|psi| ~ 1e-6 max,
        // x ~ 7.4) and scales as h^2; this resolution puts it near 4e-5.
        let g = Grid::new_1d(-10.0, 10.0, 8192, 1e-3).unwrap();
        let dt = 1e-3;
        let mk = |t: f64| analytic_gaussian_packet(&[0.0], &[0.0], &[1.0], t, &p, &g);
        let f0 = decompose(&mk(-dt), &p, -dt).unwrap();
        let f1 = decompose_following(&mk(0.0), &p, 0.0, &f0).unwrap();
        let f2 = decompose_following(&mk(dt), &p, dt, &f1).unwrap();
        let r = hj_residual(&f1, &f0.s, &f2.s, &Potential::Free, &p, dt).unwrap();
        let max = f1.masked_max_abs(&r);
        assert!(max < 1e-4, "HJ residual {max}");
    }

    #[test]
    fn gauge_follows_the_rotating_phase_beyond_the_principal_branch() {
        let p = params();
        let g = Grid::new_1d(-6.0, 6.0, 128, 1e-3).unwrap();
        let potential = Potential::Harmonic { k: 1.0 };
        let (psi0, e0) = ground_state_imaginary_time(&potential, &p, &g, 1e-10).unwrap();
        // S(t) = S(0) - E0 t runs through several 2*pi*hbar branches.
        let mut prev = decompose(&psi0, &p, 0.0).unwrap();
        let anchor = g.nearest_index(&[0.0]);
        let steps = 200;
        let dt = 0.1;
        for k in 1..=steps {
            let t = dt * k as f64;
            let rot = Complex64::new(0.0, -e0 * t / p.hbar()).exp();
            let psi_t =
                ComplexField::from_values(&g, psi0.values().iter().map(|v| v * rot).collect())
                    .unwrap();
            let cur = decompose_following(&psi_t, &p, t, &prev).unwrap();
            let expect = prev.s.values()[anchor] - e0 * dt;
            assert!(
                (cur.s.values()[anchor] - expect).abs() < 1e-6,
                "S drifted off the continuous branch at t = {t}"
            );
            prev = cur;
        }
    }

    #[test]
    fn winding_zero_for_packet_loops() {
        let p = params();
        let g = Grid::new_2d((-5.0, 5.0), (-5.0, 5.0), (96, 96), 1e-3).unwrap();
        let psi = analytic_gaussian_packet(&[0.0, 0.0], &[0.4, -0.2], &[1.0, 1.0], 0.0, &p, &g);
        let lp = circle_loop(&g, [0.0, 0.0], 1.5);
        assert_eq!(winding_number(&psi, &lp).unwrap(), 0);
    }

    #[test]
    fn winding_counts_the_vortex_charge() {
        let g = Grid::new_2d((-4.0, 4.0), (-4.0, 4.0), (128, 128), 1e-3).unwrap();
        let vortex = ComplexField::from_fn(&g, |p| {
            Complex64::new(p[0], p[1]) * (-(p[0] * p[0] + p[1] * p[1])).exp()
        });
        let conj =
            ComplexField::from_values(&g, vortex.values().iter().map(|v| v.conj()).collect())
                .unwrap();
        let lp = circle_loop(&g, [0.0, 0.0], 1.0);
        assert_eq!(winding_number(&vortex, &lp).unwrap(), 1);
        assert_eq!(winding_number(&conj, &lp).unwrap(), -1);
    }

    #[test]
    fn winding_refuses_loops_through_nodes() {
        let g = Grid::new_2d((-4.0, 4.0), (-4.0, 4.0), (129, 129), 1e-3).unwrap();
        let vortex = ComplexField::from_fn(&g, |p| {
            Complex64::new(p[0], p[1]) * (-(p[0] * p[0] + p[1] * p[1])).exp()
        });
        // A "loop" that sits on the central node.
        let center = g.nearest_index(&[0.0, 0.0]);
        let lp = vec![center, center + 1, center + 2];
        assert!(matches!(
            winding_number(&vortex, &lp),
            Err(MadelungError::LoopThroughNode(_))
        ));
    }

    #[test]
    fn nodeless_ground_state_reports_nothing() {
        let p = params();
        let g = Grid::new_1d(-8.0, 8.0, 512, 1e-3).unwrap();
        let (psi0, _) =
            ground_state_imaginary_time(&Potential::Harmonic { k: 1.0 }, &p, &g, 1e-10).unwrap();
        let f = decompose(&psi0, &p, 0.0).unwrap();
        let report = detect_nodal_regions(&f, 1e-6);
        assert!(report.is_empty(), "found {} regions", report.count);
    }

    #[test]
    fn real_excited_state_node_found_but_not_flagged() {
        let p = params();
        // Fine grid so the eps-tube around the node contains grid points.
        let g = Grid::new_1d(-8.0, 8.0, 1601, 1e-3).unwrap();
        let mut psi1 = ComplexField::from_fn(&g, |x| {
            Complex64::new(x[0] * (-x[0] * x[0] / 2.0).exp(), 0.0)
        });
        psi1.normalize().unwrap();
        let f = decompose(&psi1, &p, 0.0).unwrap();
        let report = detect_nodal_regions(&f, 1e-4);
        assert_eq!(
            report.count, 1,
            "the x = 0 node should be the only interior region"
        );
        let region = &report.regions[0];
        assert!(!region.flagged, "zero-current node must not be flagged");
        assert!(region.speed_max == 0.0, "real state carries no current");
        let x_node = g.position(region.points[0])[0];
        assert!(x_node.abs() < 0.05, "node located at {x_node}");
    }

    #[test]
    fn moving_node_of_a_superposition_is_flagged() {
        let p = params();
        // Equal superposition of the lowest two oscillator states, caught a
        // fraction of a step after the instant exp(-i*dE*t) = -1 where the
        // density zero crosses x = 1/sqrt(2) with nonzero current.
        let g = Grid::new_1d(-8.0, 8.0, 16385, 1e-3).unwrap();
        // 3142 steps of dt = 1e-3: the nearest step time to pi, 4.07e-4 past it.
        let t = 3142.0 * 1e-3;
        let norm0 = std::f64::consts::PI.powf(-0.25);
        let psi = ComplexField::from_fn(&g, |x| {
            let psi0 = norm0 * (-x[0] * x[0] / 2.0).exp();
            let psi1 = norm0 * std::f64::consts::SQRT_2 * x[0] * (-x[0] * x[0] / 2.0).exp();
            let ph0 = Complex64::new(0.0, -0.5 * t).exp();
            let ph1 = Complex64::new(0.0, -1.5 * t).exp();
            (psi0 * ph0 + psi1 * ph1) / std::f64::consts::SQRT_2
        });
        let f = decompose(&psi, &p, t).unwrap();
        let report = detect_nodal_regions(&f, 1e-6);
        assert!(
            report.flagged_count() >= 1,
            "moving node not flagged: {report:?}"
        );
        let flagged = report.regions.iter().find(|r| r.flagged).unwrap();
        let x = g.position(flagged.points[0])[0];
        assert!((x - 0.5f64.sqrt()).abs() < 0.05, "node at {x}");
    }
}
