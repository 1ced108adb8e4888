//! Distribution-comparison metrics and least-squares fits.
//!
//! All density arguments are grid fields normalized to unit integral. KL is
//! directed: call it as `kl_divergence(empirical, reference)`. Empty bins in
//! the reference are floored at `KL_FLOOR` and counted rather than rejected,
//! since empirical histograms always have holes.

use crate::field::ScalarField;
use serde::Serialize;
use thiserror::Error;

/// Floor applied to the reference density inside the KL logarithm.
pub const KL_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("metric only defined for 1D fields")]
    DimensionUnsupported,
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("abscissae are degenerate (no spread in t)")]
    DegenerateAbscissae,
}

/// KL divergence `sum p ln(p/q) dV` with `q` floored at [`KL_FLOOR`].
/// Returns the divergence and the number of floored cells.
pub fn kl_divergence_counted(p: &ScalarField, q: &ScalarField) -> Result<(f64, usize), StatsError> {
    if p.grid() != q.grid() {
        return Err(StatsError::GridMismatch);
    }
    let dv = p.grid().cell_volume();
    let mut kl = 0.0;
    let mut floored = 0;
    // Cells with p at or below the floor carry negligible mass and are
    // skipped, so identical inputs give exactly zero.
    for (&pi, &qi) in p.values().iter().zip(q.values()) {
        if pi <= KL_FLOOR {
            continue;
        }
        let q_eff = if qi < KL_FLOOR {
            floored += 1;
            KL_FLOOR
        } else {
            qi
        };
        kl += pi * (pi / q_eff).ln();
    }
    Ok((kl * dv, floored))
}

/// KL divergence of `p` from `q` (argument order: empirical, reference).
pub fn kl_divergence(p: &ScalarField, q: &ScalarField) -> Result<f64, StatsError> {
    kl_divergence_counted(p, q).map(|(kl, _)| kl)
}

/// 1D Wasserstein-1 distance: the integral of `|CDF_p - CDF_q|` by trapezoid.
pub fn wasserstein1_1d(p: &ScalarField, q: &ScalarField) -> Result<f64, StatsError> {
    if p.grid() != q.grid() {
        return Err(StatsError::GridMismatch);
    }
    if p.grid().dim() != 1 {
        return Err(StatsError::DimensionUnsupported);
    }
    let h = p.grid().spacing(0);
    let mut cdf_gap_prev = 0.0;
    let mut acc_p = 0.0;
    let mut acc_q = 0.0;
    let mut w1 = 0.0;
    for (&pi, &qi) in p.values().iter().zip(q.values()) {
        acc_p += pi * h;
        acc_q += qi * h;
        let gap = (acc_p - acc_q).abs();
        w1 += 0.5 * (gap + cdf_gap_prev) * h;
        cdf_gap_prev = gap;
    }
    Ok(w1)
}

/// L2 distance `sqrt(sum (p-q)^2 dV)`.
pub fn l2_distance(p: &ScalarField, q: &ScalarField) -> Result<f64, StatsError> {
    if p.grid() != q.grid() {
        return Err(StatsError::GridMismatch);
    }
    let dv = p.grid().cell_volume();
    let sum: f64 = p
        .values()
        .iter()
        .zip(q.values())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok((sum * dv).sqrt())
}

/// Per-axis mean and variance of a density field.
pub fn density_moments(p: &ScalarField) -> (Vec<f64>, Vec<f64>) {
    let grid = p.grid();
    let dv = grid.cell_volume();
    let dim = grid.dim();
    let mut mean = vec![0.0; dim];
    for i in 0..grid.len() {
        let pos = grid.position(i);
        for axis in 0..dim {
            mean[axis] += pos[axis] * p.values()[i] * dv;
        }
    }
    let mut var = vec![0.0; dim];
    for i in 0..grid.len() {
        let pos = grid.position(i);
        for axis in 0..dim {
            let d = pos[axis] - mean[axis];
            var[axis] += d * d * p.values()[i] * dv;
        }
    }
    (mean, var)
}

/// Bundle of metrics comparing an empirical density against a reference.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    /// `KL(empirical || reference)`; not symmetric.
    pub kl: f64,
    /// 1D Wasserstein-1 distance; absent on 2D grids.
    pub w1: Option<f64>,
    pub l2: f64,
    /// Per-axis `mean(empirical) - mean(reference)`.
    pub mean_delta: Vec<f64>,
    /// Per-axis `var(empirical) - var(reference)`.
    pub variance_delta: Vec<f64>,
    /// Cells carrying empirical mass (the effective support size).
    pub n_effective: usize,
    /// Reference cells floored inside the KL logarithm.
    pub floored_cells: usize,
}

/// Compare two normalized densities on the same grid.
pub fn compare_densities(
    empirical: &ScalarField,
    reference: &ScalarField,
) -> Result<ComparisonReport, StatsError> {
    let (kl, floored_cells) = kl_divergence_counted(empirical, reference)?;
    let w1 = match wasserstein1_1d(empirical, reference) {
        Ok(v) => Some(v),
        Err(StatsError::DimensionUnsupported) => None,
        Err(e) => return Err(e),
    };
    let l2 = l2_distance(empirical, reference)?;
    let (me, ve) = density_moments(empirical);
    let (mr, vr) = density_moments(reference);
    Ok(ComparisonReport {
        kl,
        w1,
        l2,
        mean_delta: me.iter().zip(&mr).map(|(a, b)| a - b).collect(),
        variance_delta: ve.iter().zip(&vr).map(|(a, b)| a - b).collect(),
        n_effective: empirical.values().iter().filter(|&&v| v > 0.0).count(),
        floored_cells,
    })
}

/// Ordinary least-squares line fit.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr_slope: f64,
}

/// Fit `y = slope*t + intercept` by ordinary least squares with the standard
/// error of the slope from the residual variance.
pub fn fit_linear(ts: &[f64], ys: &[f64]) -> Result<LinearFit, StatsError> {
    let n = ts.len();
    if n < 3 || ys.len() != n {
        return Err(StatsError::TooFewPoints {
            need: 3,
            got: n.min(ys.len()),
        });
    }
    let t_mean = ts.iter().sum::<f64>() / n as f64;
    let y_mean = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = ts.iter().map(|t| (t - t_mean) * (t - t_mean)).sum();
    if sxx <= 0.0 {
        return Err(StatsError::DegenerateAbscissae);
    }
    let sxy: f64 = ts
        .iter()
        .zip(ys)
        .map(|(t, y)| (t - t_mean) * (y - y_mean))
        .sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * t_mean;
    let ssr: f64 = ts
        .iter()
        .zip(ys)
        .map(|(t, y)| {
            let r = y - (slope * t + intercept);
            r * r
        })
        .sum();
    let stderr_slope = (ssr / (n as f64 - 2.0) / sxx).sqrt();
    Ok(LinearFit {
        slope,
        intercept,
        stderr_slope,
    })
}
