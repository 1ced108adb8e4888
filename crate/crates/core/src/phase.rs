//! Single-valued phase extraction from a complex field.
//!
//! The action field `S = hbar * arg(psi)` is only defined up to `2*pi*hbar`
//! per point; a single-valued representative is built by breadth-first flood
//! fill from the global maximum of `|psi|`, accumulating per-edge phase
//! differences wrapped to `(-pi, pi]`. Points with `|psi|` at or below the
//! node threshold are never traversed and are flagged unreachable. If any
//! closed loop of reachable points carries a net phase winding, no
//! single-valued `S` exists and the winding is reported instead.

use crate::field::{ComplexField, ScalarField};
use std::collections::VecDeque;
use std::f64::consts::PI;
use thiserror::Error;

/// Default node threshold relative to `max|psi|`: well above round-off,
/// well below physical amplitudes.
pub const DEFAULT_NODE_EPS_REL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhaseError {
    /// The phase is path-dependent: unwrapping around `loop_points` changes
    /// `S` by `2*pi*hbar*winding` with nonzero integer winding.
    #[error("phase is multivalued: winding {winding} around a loop of {} points", loop_points.len())]
    MultivaluedPhase {
        winding: i64,
        loop_points: Vec<usize>,
    },
    /// No point exceeds the node threshold, so there is no seed to unwrap from.
    #[error("all amplitudes at or below the node threshold")]
    AllBelowThreshold,
}

/// Result of a successful unwrap.
#[derive(Debug, Clone, PartialEq)]
pub struct UnwrappedPhase {
    /// `S` in action units; zero at points that were not reached.
    pub s: ScalarField,
    /// Per-point reachability from the seed through above-threshold points.
    pub reachable: Vec<bool>,
    /// Flat index of the seed (global maximum of `|psi|`).
    pub seed: usize,
    /// Absolute amplitude threshold used.
    pub eps: f64,
}

impl UnwrappedPhase {
    pub fn reached_count(&self) -> usize {
        self.reachable.iter().filter(|&&r| r).count()
    }
}

/// Wrap an angle difference to `(-pi, pi]`.
#[inline]
pub fn wrap_angle(d: f64) -> f64 {
    PI - (PI - d).rem_euclid(2.0 * PI)
}

/// Unwrap with the default node threshold `1e-6 * max|psi|`.
pub fn unwrap_phase(psi: &ComplexField, hbar: f64) -> Result<UnwrappedPhase, PhaseError> {
    unwrap_phase_with(psi, hbar, DEFAULT_NODE_EPS_REL)
}

/// Unwrap with a caller-chosen relative node threshold.
pub fn unwrap_phase_with(
    psi: &ComplexField,
    hbar: f64,
    eps_rel: f64,
) -> Result<UnwrappedPhase, PhaseError> {
    let grid = psi.grid();
    let vals = psi.values();
    let n = grid.len();

    let max_amp = psi.max_modulus();
    let eps = eps_rel * max_amp;
    if !(max_amp > 0.0) {
        return Err(PhaseError::AllBelowThreshold);
    }
    let above: Vec<bool> = vals
        .iter()
        .map(|v| v.norm() > eps && v.norm().is_finite())
        .collect();

    // Seed at the global amplitude maximum (first index on ties).
    let seed = (0..n)
        .filter(|&i| above[i])
        .max_by(|&a, &b| {
            vals[a]
                .norm()
                .partial_cmp(&vals[b].norm())
                .unwrap()
                .then(b.cmp(&a))
        })
        .ok_or(PhaseError::AllBelowThreshold)?;

    let arg: Vec<f64> = vals.iter().map(|v| v.arg()).collect();
    let mut theta = vec![0.0f64; n];
    let mut reached = vec![false; n];
    let mut parent = vec![usize::MAX; n];

    theta[seed] = arg[seed];
    reached[seed] = true;
    let mut queue = VecDeque::from([seed]);
    while let Some(cur) = queue.pop_front() {
        for nb in grid.neighbors(cur) {
            if !reached[nb] && above[nb] {
                theta[nb] = theta[cur] + wrap_angle(arg[nb] - arg[cur]);
                parent[nb] = cur;
                reached[nb] = true;
                queue.push_back(nb);
            }
        }
    }

    // Loop-consistency check over every edge of the reachable subgraph. A
    // non-tree edge whose accumulated difference disagrees with its wrapped
    // phase difference closes a loop with nonzero winding.
    for a in 0..n {
        if !reached[a] {
            continue;
        }
        for b in grid.neighbors(a) {
            if b < a || !reached[b] {
                continue;
            }
            let defect = (theta[b] - theta[a]) - wrap_angle(arg[b] - arg[a]);
            let winding = (defect / (2.0 * PI)).round() as i64;
            if winding != 0 {
                let (loop_points, winding) = orient_loop(grid, &parent, a, b, winding);
                return Err(PhaseError::MultivaluedPhase {
                    winding,
                    loop_points,
                });
            }
        }
    }

    let s_values: Vec<f64> = (0..n)
        .map(|i| if reached[i] { hbar * theta[i] } else { 0.0 })
        .collect();
    let s = ScalarField::from_values(grid, s_values).expect("length matches grid");
    Ok(UnwrappedPhase {
        s,
        reachable: reached,
        seed,
        eps,
    })
}

/// Build the cycle `a -> tree path -> b -> a` through the lowest common
/// ancestor and orient it counterclockwise (2D); the winding sign follows
/// the orientation flip.
fn orient_loop(
    grid: &crate::grid::Grid,
    parent: &[usize],
    a: usize,
    b: usize,
    winding: i64,
) -> (Vec<usize>, i64) {
    let ancestors = |mut p: usize| -> Vec<usize> {
        let mut path = vec![p];
        while parent[p] != usize::MAX {
            p = parent[p];
            path.push(p);
        }
        path
    };
    let pa = ancestors(a);
    let pb = ancestors(b);
    let in_pa: std::collections::HashSet<usize> = pa.iter().cloned().collect();
    let lca = *pb
        .iter()
        .find(|p| in_pa.contains(p))
        .expect("tree paths share the root");

    // defect was measured for theta[b] - theta[a] minus the direct edge
    // (b -> a closes it), i.e. along a -> lca -> b -> a.
    let mut cycle: Vec<usize> = pa.iter().take_while(|&&p| p != lca).cloned().collect();
    cycle.push(lca);
    let tail: Vec<usize> = pb.iter().take_while(|&&p| p != lca).cloned().collect();
    cycle.extend(tail.iter().rev());

    if grid.dim() == 2 && signed_area(grid, &cycle) < 0.0 {
        cycle.reverse();
        return (cycle, -winding);
    }
    (cycle, winding)
}

/// Shoelace area of the polygon through the cycle's grid positions.
fn signed_area(grid: &crate::grid::Grid, cycle: &[usize]) -> f64 {
    let mut area = 0.0;
    for k in 0..cycle.len() {
        let p = grid.position(cycle[k]);
        let q = grid.position(cycle[(k + 1) % cycle.len()]);
        area += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * area
}
