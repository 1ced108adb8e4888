//! Reference evolution of the wavefunction, `i*hbar*dpsi/dt = H psi` with
//! `H = -(hbar^2/2m) Laplacian + U`, plus analytic reference states.
//!
//! Time stepping is Crank-Nicolson, `(1 + i*H*dt/2hbar) psi' =
//! (1 - i*H*dt/2hbar) psi`, with vanishing (Dirichlet) boundaries. The update
//! is a Cayley transform of a Hermitian matrix, so it is unconditionally
//! stable, norm-preserving and time-reversal symmetric. In 2D the step is
//! factorized into per-axis Cayley transforms (Strang ordered x-y-x), which
//! keeps every solve tridiagonal and each factor exactly unitary.

use crate::field::{ComplexField, ScalarField};
use crate::grid::Grid;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    /// The tridiagonal system lost its pivots; cannot occur for finite real
    /// potentials and signals corrupted input (NaN/Inf in `psi` or `U`).
    #[error("tridiagonal solve failed: non-finite or vanishing pivot")]
    LinearSolveFailure,
    /// Imaginary-time relaxation did not settle within the iteration budget.
    #[error("ground-state relaxation did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("potential is tabulated on a different grid")]
    PotentialGridMismatch,
}

/// External potential `U(x)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Potential {
    Free,
    /// `U = k/2 * |x|^2` (isotropic in 2D).
    Harmonic {
        k: f64,
    },
    /// Finite rectangular barrier: `U = height` where `|x - center| <= width/2`
    /// (a slab along the first axis in 2D), zero elsewhere. Finite height
    /// keeps the accessible region simply connected.
    Barrier {
        height: f64,
        center: f64,
        width: f64,
    },
    /// Arbitrary values sampled on the evolution grid.
    Tabulated(ScalarField),
}

impl Potential {
    pub fn value(&self, pos: &[f64]) -> f64 {
        match self {
            Potential::Free => 0.0,
            Potential::Harmonic { k } => 0.5 * k * pos.iter().map(|x| x * x).sum::<f64>(),
            Potential::Barrier {
                height,
                center,
                width,
            } => {
                if (pos[0] - center).abs() <= 0.5 * width {
                    *height
                } else {
                    0.0
                }
            }
            Potential::Tabulated(f) => {
                let flat = f.grid().nearest_index(pos);
                f.values()[flat]
            }
        }
    }

    /// Sample the potential on a grid.
    pub fn sample(&self, grid: &Grid) -> Result<ScalarField, SolveError> {
        if let Potential::Tabulated(f) = self {
            if f.grid() != grid {
                return Err(SolveError::PotentialGridMismatch);
            }
            return Ok(f.clone());
        }
        Ok(ScalarField::from_fn(grid, |p| self.value(p)))
    }
}

/// Mass, diffusion constant and the identification `hbar = 2*m*D`.
///
/// One of `D`, `hbar` is given and the other derived, so the pair can never
/// drift apart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    m: f64,
    d: f64,
    hbar: f64,
}

impl PhysicalParams {
    /// Construct from mass and diffusion constant; `hbar = 2*m*D`.
    /// `d = 0` is the classical limit; wave evolution then refuses to run.
    pub fn from_diffusion(m: f64, d: f64) -> Self {
        assert!(
            m > 0.0 && d >= 0.0,
            "mass must be positive, diffusion nonnegative"
        );
        PhysicalParams {
            m,
            d,
            hbar: 2.0 * m * d,
        }
    }

    /// Construct from mass and Planck constant; `D = hbar/(2*m)`.
    pub fn from_hbar(m: f64, hbar: f64) -> Self {
        assert!(
            m > 0.0 && hbar >= 0.0,
            "mass must be positive, hbar nonnegative"
        );
        PhysicalParams {
            m,
            d: hbar / (2.0 * m),
            hbar,
        }
    }

    pub fn mass(&self) -> f64 {
        self.m
    }

    pub fn diffusion(&self) -> f64 {
        self.d
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    /// Advisory explicit-stability scale `m*h^2/hbar` for the finest axis.
    pub fn stability_dt(&self, grid: &Grid) -> f64 {
        let h = (0..grid.dim())
            .map(|a| grid.spacing(a))
            .fold(f64::INFINITY, f64::min);
        self.m * h * h / self.hbar
    }
}

/// Solve a tridiagonal system with constant off-diagonal `off` and
/// per-row diagonal `diag` (Thomas algorithm).
fn thomas_solve(
    diag: &[Complex64],
    off: Complex64,
    rhs: &[Complex64],
    out: &mut [Complex64],
    scratch: &mut Vec<Complex64>,
) -> Result<(), SolveError> {
    let n = diag.len();
    scratch.clear();
    scratch.resize(2 * n, Complex64::new(0.0, 0.0));
    let (c, d) = scratch.split_at_mut(n);

    let mut denom = diag[0];
    if !denom.is_finite() || denom.norm_sqr() == 0.0 {
        return Err(SolveError::LinearSolveFailure);
    }
    c[0] = off / denom;
    d[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - off * c[i - 1];
        if !denom.is_finite() || denom.norm_sqr() == 0.0 {
            return Err(SolveError::LinearSolveFailure);
        }
        c[i] = off / denom;
        d[i] = (rhs[i] - off * d[i - 1]) / denom;
    }
    out[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        out[i] = d[i] - c[i] * out[i + 1];
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(SolveError::LinearSolveFailure);
    }
    Ok(())
}

/// One Cayley factor along a 1D line: solves
/// `(1 + i*tau/(2hbar) H) out = (1 - i*tau/(2hbar) H) line`
/// for `H = -(hbar^2/2m) d2/dx2 + u` with Dirichlet ends.
struct CayleyLine {
    a_diag: Vec<Complex64>,
    b_diag: Vec<Complex64>,
    a_off: Complex64,
    b_off: Complex64,
    rhs: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl CayleyLine {
    fn new(u_line: &[f64], h: f64, p: &PhysicalParams, tau: f64) -> Self {
        let n = u_line.len();
        let kin = p.hbar * p.hbar / (2.0 * p.m * h * h);
        let alpha = Complex64::new(0.0, tau / (2.0 * p.hbar));
        // H row: diag = 2*kin + u, off = -kin.
        let a_off = alpha * (-kin);
        let b_off = -a_off;
        let mut a_diag = Vec::with_capacity(n);
        let mut b_diag = Vec::with_capacity(n);
        for &u in u_line {
            let hd = Complex64::new(2.0 * kin + u, 0.0);
            a_diag.push(Complex64::new(1.0, 0.0) + alpha * hd);
            b_diag.push(Complex64::new(1.0, 0.0) - alpha * hd);
        }
        CayleyLine {
            a_diag,
            b_diag,
            a_off,
            b_off,
            rhs: vec![Complex64::new(0.0, 0.0); n],
            scratch: Vec::new(),
        }
    }

    fn apply(&mut self, line: &mut [Complex64]) -> Result<(), SolveError> {
        let n = line.len();
        for i in 0..n {
            let left = if i > 0 {
                line[i - 1]
            } else {
                Complex64::new(0.0, 0.0)
            };
            let right = if i + 1 < n {
                line[i + 1]
            } else {
                Complex64::new(0.0, 0.0)
            };
            self.rhs[i] = self.b_diag[i] * line[i] + self.b_off * (left + right);
        }
        thomas_solve(&self.a_diag, self.a_off, &self.rhs, line, &mut self.scratch)
    }
}

/// Advance `psi` by one Crank-Nicolson step of size `dt` (which may be
/// negative, stepping backwards, or zero, the identity).
pub fn step_crank_nicolson(
    psi: &ComplexField,
    potential: &Potential,
    p: &PhysicalParams,
    dt: f64,
) -> Result<ComplexField, SolveError> {
    if dt == 0.0 {
        return Ok(psi.clone());
    }
    assert!(p.hbar() > 0.0, "wave evolution needs hbar > 0");
    let grid = psi.grid().clone();
    let u = potential.sample(&grid)?;
    let mut values = psi.values().to_vec();

    match grid.dim() {
        1 => {
            let mut line = CayleyLine::new(u.values(), grid.spacing(0), p, dt);
            line.apply(&mut values)?;
        }
        2 => {
            // Strang-ordered per-axis Cayley factors with the potential split
            // evenly; each factor is exactly unitary, the composition is
            // second-order accurate.
            let (nx, ny) = (grid.n(0), grid.n(1));
            let half_u: Vec<f64> = u.values().iter().map(|v| 0.5 * v).collect();
            let mut col = vec![Complex64::new(0.0, 0.0); nx];
            let mut ucol = vec![0.0; nx];

            for iy in 0..ny {
                for ix in 0..nx {
                    col[ix] = values[ix * ny + iy];
                    ucol[ix] = half_u[ix * ny + iy];
                }
                let mut line = CayleyLine::new(&ucol, grid.spacing(0), p, 0.5 * dt);
                line.apply(&mut col)?;
                for ix in 0..nx {
                    values[ix * ny + iy] = col[ix];
                }
            }
            for ix in 0..nx {
                let urow = &half_u[ix * ny..(ix + 1) * ny];
                let mut line = CayleyLine::new(urow, grid.spacing(1), p, dt);
                line.apply(&mut values[ix * ny..(ix + 1) * ny])?;
            }
            for iy in 0..ny {
                for ix in 0..nx {
                    col[ix] = values[ix * ny + iy];
                    ucol[ix] = half_u[ix * ny + iy];
                }
                let mut line = CayleyLine::new(&ucol, grid.spacing(0), p, 0.5 * dt);
                line.apply(&mut col)?;
                for ix in 0..nx {
                    values[ix * ny + iy] = col[ix];
                }
            }
        }
        _ => unreachable!("grids are 1D or 2D"),
    }
    ComplexField::from_values(&grid, values).map_err(|_| SolveError::LinearSolveFailure)
}

/// Expectation value of the discrete Hamiltonian (Dirichlet Laplacian).
pub fn energy_expectation(psi: &ComplexField, potential: &Potential, p: &PhysicalParams) -> f64 {
    let grid = psi.grid();
    let u = potential.sample(grid).expect("potential grid must match");
    let vals = psi.values();
    let mut acc = 0.0;
    for flat in 0..grid.len() {
        let (ix, iy) = grid.unflatten(flat);
        let mut kinetic = Complex64::new(0.0, 0.0);
        for axis in 0..grid.dim() {
            let h2 = grid.spacing(axis) * grid.spacing(axis);
            let (i, n) = if axis == 0 {
                (ix, grid.n(0))
            } else {
                (iy, grid.n(1))
            };
            let prev = if i > 0 {
                vals[if axis == 0 {
                    grid.flatten(ix - 1, iy)
                } else {
                    grid.flatten(ix, iy - 1)
                }]
            } else {
                Complex64::new(0.0, 0.0)
            };
            let next = if i + 1 < n {
                vals[if axis == 0 {
                    grid.flatten(ix + 1, iy)
                } else {
                    grid.flatten(ix, iy + 1)
                }]
            } else {
                Complex64::new(0.0, 0.0)
            };
            kinetic += (prev - 2.0 * vals[flat] + next) / h2;
        }
        let h_psi = -(p.hbar() * p.hbar() / (2.0 * p.m)) * kinetic + u.values()[flat] * vals[flat];
        acc += (vals[flat].conj() * h_psi).re;
    }
    acc * grid.cell_volume()
}

/// Relax to the ground state by explicit imaginary-time iteration with
/// renormalization, until the Rayleigh energy changes by less than `tol`.
/// Returns the normalized real nonnegative state and its energy.
pub fn ground_state_imaginary_time(
    potential: &Potential,
    p: &PhysicalParams,
    grid: &Grid,
    tol: f64,
) -> Result<(ComplexField, f64), SolveError> {
    const MAX_ITERS: usize = 2_000_000;
    assert!(p.hbar() > 0.0, "ground-state relaxation needs hbar > 0");
    let u = potential.sample(grid)?;
    // tau = 0.1 * m h^2 / hbar stays inside the explicit diffusion stability bound.
    let tau = 0.1 * p.stability_dt(grid);
    let n = grid.len();

    // Positive seed with a mild profile so no node can survive the relaxation.
    let mut phi: Vec<f64> = (0..n)
        .map(|i| {
            let pos = grid.position(i);
            let r2: f64 = pos[..grid.dim()].iter().map(|x| x * x).sum();
            (-0.05 * r2).exp()
        })
        .collect();
    normalize_real(&mut phi, grid);

    let mut energy = real_rayleigh(&phi, &u, p, grid);
    let mut next = vec![0.0; n];
    // Once the energy change drops below tol the excited-state contamination
    // is still ~sqrt(tol); run the converged iteration count again so the
    // returned state is stationary pointwise, not just in energy.
    let mut polish_until: Option<usize> = None;
    for iter in 0..MAX_ITERS {
        // phi <- phi - (tau/hbar) * H phi
        apply_h_real(&phi, &u, p, grid, &mut next);
        for i in 0..n {
            next[i] = phi[i] - (tau / p.hbar()) * next[i];
        }
        std::mem::swap(&mut phi, &mut next);
        normalize_real(&mut phi, grid);

        if let Some(end) = polish_until {
            if iter < end {
                continue;
            }
            let e = real_rayleigh(&phi, &u, p, grid);
            let values = phi.iter().map(|&v| Complex64::new(v.abs(), 0.0)).collect();
            let mut psi = ComplexField::from_values(grid, values)
                .map_err(|_| SolveError::LinearSolveFailure)?;
            psi.normalize()
                .map_err(|_| SolveError::LinearSolveFailure)?;
            return Ok((psi, e));
        }
        if iter % 32 == 31 {
            let e = real_rayleigh(&phi, &u, p, grid);
            if !e.is_finite() {
                return Err(SolveError::LinearSolveFailure);
            }
            if (e - energy).abs() < tol {
                polish_until = Some((2 * iter).min(MAX_ITERS - 1));
            }
            energy = e;
        }
    }
    Err(SolveError::NoConvergence(MAX_ITERS))
}

/// Discrete Dirichlet `H phi` for a real field.
fn apply_h_real(phi: &[f64], u: &ScalarField, p: &PhysicalParams, grid: &Grid, out: &mut [f64]) {
    let kin = p.hbar() * p.hbar() / (2.0 * p.m);
    for flat in 0..grid.len() {
        let (ix, iy) = grid.unflatten(flat);
        let mut lap = 0.0;
        for axis in 0..grid.dim() {
            let h2 = grid.spacing(axis) * grid.spacing(axis);
            let (i, n) = if axis == 0 {
                (ix, grid.n(0))
            } else {
                (iy, grid.n(1))
            };
            let prev = if i > 0 {
                phi[if axis == 0 {
                    grid.flatten(ix - 1, iy)
                } else {
                    grid.flatten(ix, iy - 1)
                }]
            } else {
                0.0
            };
            let next = if i + 1 < n {
                phi[if axis == 0 {
                    grid.flatten(ix + 1, iy)
                } else {
                    grid.flatten(ix, iy + 1)
                }]
            } else {
                0.0
            };
            lap += (prev - 2.0 * phi[flat] + next) / h2;
        }
        out[flat] = -kin * lap + u.values()[flat] * phi[flat];
    }
}

fn normalize_real(phi: &mut [f64], grid: &Grid) {
    let total: f64 = phi.iter().map(|v| v * v).sum::<f64>() * grid.cell_volume();
    let s = 1.0 / total.sqrt();
    for v in phi.iter_mut() {
        *v *= s;
    }
}

fn real_rayleigh(phi: &[f64], u: &ScalarField, p: &PhysicalParams, grid: &Grid) -> f64 {
    let mut hphi = vec![0.0; phi.len()];
    apply_h_real(phi, u, p, grid, &mut hphi);
    phi.iter().zip(&hphi).map(|(a, b)| a * b).sum::<f64>() * grid.cell_volume()
}

/// Closed-form free Gaussian packet at time `t` (any sign), sampled on the
/// grid and normalized. Per-axis center `x0`, momentum `p0` and initial
/// width `sigma0`; the width obeys
/// `sigma(t)^2 = sigma0^2 * (1 + (hbar*t / (2 m sigma0^2))^2)`.
pub fn analytic_gaussian_packet(
    x0: &[f64],
    p0: &[f64],
    sigma0: &[f64],
    t: f64,
    p: &PhysicalParams,
    grid: &Grid,
) -> ComplexField {
    let dim = grid.dim();
    assert!(
        x0.len() == dim && p0.len() == dim && sigma0.len() == dim,
        "packet parameters must be per-axis"
    );
    for &s in sigma0 {
        assert!(s > 0.0, "sigma0 must be positive");
    }
    let mut psi = ComplexField::from_fn(grid, |pos| {
        let mut amp = Complex64::new(1.0, 0.0);
        for axis in 0..dim {
            let s0sq = sigma0[axis] * sigma0[axis];
            // alpha = 1 + i hbar t / (2 m sigma0^2)
            let alpha = Complex64::new(1.0, p.hbar() * t / (2.0 * p.m * s0sq));
            let center = x0[axis] + p0[axis] * t / p.m;
            let dx = pos[axis] - center;
            let norm =
                Complex64::new(2.0 * std::f64::consts::PI * s0sq, 0.0).powf(0.25) * alpha.sqrt();
            let phase = Complex64::new(
                0.0,
                p0[axis] * (pos[axis] - x0[axis]) / p.hbar()
                    - p0[axis] * p0[axis] * t / (2.0 * p.m * p.hbar()),
            );
            let exponent = Complex64::new(-dx * dx / (4.0 * s0sq), 0.0) / alpha + phase;
            amp *= exponent.exp() / norm;
        }
        amp
    });
    // Grid truncation leaves the Riemann norm a hair off one.
    psi.normalize().expect("packet has positive norm");
    psi
}

/// Width predicted for the free packet at time `t`.
pub fn packet_variance(sigma0: f64, t: f64, p: &PhysicalParams) -> f64 {
    let s0sq = sigma0 * sigma0;
    let r = p.hbar() * t / (2.0 * p.m * s0sq);
    s0sq * (1.0 + r * r)
}
