//! Uniform rectangular grids in one or two space dimensions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum number of points per axis; the one-sided boundary stencils need
/// four points and anything below eight is too coarse to be meaningful.
pub const MIN_POINTS_PER_AXIS: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("axis {axis}: upper extent {hi} must exceed lower extent {lo}")]
    BadExtent { axis: usize, lo: f64, hi: f64 },
    #[error("axis {axis}: {n} points given, need at least {MIN_POINTS_PER_AXIS}")]
    TooFewPoints { axis: usize, n: usize },
    #[error("time step must be positive and finite, got {0}")]
    BadTimeStep(f64),
    #[error("grid dimension must be 1 or 2, got {0}")]
    BadDimension(usize),
}

/// Serialized form: spacing is derived, so only extents and counts travel.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct GridSpec {
    dim: usize,
    extents: Vec<[f64; 2]>,
    n: Vec<usize>,
    dt: f64,
}

/// Uniform grid over `[lo, hi]` per axis with `n` points per axis
/// (spacing `(hi - lo)/(n - 1)`) and a fixed time step.
///
/// Points are addressed by a flat index; in 2D the layout is x-major:
/// `flat = ix * ny + iy`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct Grid {
    dim: usize,
    lo: [f64; 2],
    hi: [f64; 2],
    n: [usize; 2],
    spacing: [f64; 2],
    dt: f64,
}

impl Grid {
    pub fn new_1d(lo: f64, hi: f64, n: usize, dt: f64) -> Result<Self, GridError> {
        Self::new(1, [lo, 0.0], [hi, 1.0], [n, 1], dt)
    }

    pub fn new_2d(
        x: (f64, f64),
        y: (f64, f64),
        n: (usize, usize),
        dt: f64,
    ) -> Result<Self, GridError> {
        Self::new(2, [x.0, y.0], [x.1, y.1], [n.0, n.1], dt)
    }

    fn new(
        dim: usize,
        lo: [f64; 2],
        hi: [f64; 2],
        n: [usize; 2],
        dt: f64,
    ) -> Result<Self, GridError> {
        if dim != 1 && dim != 2 {
            return Err(GridError::BadDimension(dim));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(GridError::BadTimeStep(dt));
        }
        for axis in 0..dim {
            if !(hi[axis] > lo[axis]) || !lo[axis].is_finite() || !hi[axis].is_finite() {
                return Err(GridError::BadExtent {
                    axis,
                    lo: lo[axis],
                    hi: hi[axis],
                });
            }
            if n[axis] < MIN_POINTS_PER_AXIS {
                return Err(GridError::TooFewPoints { axis, n: n[axis] });
            }
        }
        let mut spacing = [1.0, 1.0];
        for axis in 0..dim {
            spacing[axis] = (hi[axis] - lo[axis]) / (n[axis] - 1) as f64;
        }
        // Inactive axis degenerates to a single unit cell.
        let n = if dim == 1 { [n[0], 1] } else { n };
        Ok(Grid {
            dim,
            lo,
            hi,
            n,
            spacing,
            dt,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Total number of grid points.
    pub fn len(&self) -> usize {
        self.n[0] * self.n[1]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Points along `axis`.
    pub fn n(&self, axis: usize) -> usize {
        self.n[axis]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.spacing[axis]
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing[..self.dim].iter().cloned().fold(0.0, f64::max)
    }

    pub fn lo(&self, axis: usize) -> f64 {
        self.lo[axis]
    }

    pub fn hi(&self, axis: usize) -> f64 {
        self.hi[axis]
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Returns a copy with a different time step (grid geometry unchanged).
    pub fn with_dt(&self, dt: f64) -> Result<Self, GridError> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(GridError::BadTimeStep(dt));
        }
        let mut g = self.clone();
        g.dt = dt;
        Ok(g)
    }

    /// Volume of one grid cell (`h` in 1D, `hx*hy` in 2D).
    pub fn cell_volume(&self) -> f64 {
        self.spacing[..self.dim].iter().product()
    }

    /// Coordinate of point `i` along `axis`.
    pub fn coord_axis(&self, i: usize, axis: usize) -> f64 {
        self.lo[axis] + self.spacing[axis] * i as f64
    }

    /// Position of a flat index; the second component is 0 for 1D grids.
    pub fn position(&self, flat: usize) -> [f64; 2] {
        let (ix, iy) = self.unflatten(flat);
        if self.dim == 1 {
            [self.coord_axis(ix, 0), 0.0]
        } else {
            [self.coord_axis(ix, 0), self.coord_axis(iy, 1)]
        }
    }

    pub fn flatten(&self, ix: usize, iy: usize) -> usize {
        ix * self.n[1] + iy
    }

    pub fn unflatten(&self, flat: usize) -> (usize, usize) {
        (flat / self.n[1], flat % self.n[1])
    }

    /// True when the point lies on the outermost layer of the grid.
    pub fn is_boundary(&self, flat: usize) -> bool {
        let (ix, iy) = self.unflatten(flat);
        if ix == 0 || ix == self.n[0] - 1 {
            return true;
        }
        self.dim == 2 && (iy == 0 || iy == self.n[1] - 1)
    }

    /// Axis-neighbors of a point (2 in 1D, up to 4 in 2D), in a fixed
    /// deterministic order: -x, +x, -y, +y.
    pub fn neighbors(&self, flat: usize) -> impl Iterator<Item = usize> {
        let (ix, iy) = self.unflatten(flat);
        let mut out = [usize::MAX; 4];
        let mut k = 0;
        if ix > 0 {
            out[k] = self.flatten(ix - 1, iy);
            k += 1;
        }
        if ix + 1 < self.n[0] {
            out[k] = self.flatten(ix + 1, iy);
            k += 1;
        }
        if self.dim == 2 {
            if iy > 0 {
                out[k] = self.flatten(ix, iy - 1);
                k += 1;
            }
            if iy + 1 < self.n[1] {
                out[k] = self.flatten(ix, iy + 1);
                k += 1;
            }
        }
        out.into_iter().take(k)
    }

    /// Nearest grid point to a position, clamped into the grid.
    pub fn nearest_index(&self, pos: &[f64]) -> usize {
        let mut idx = [0usize; 2];
        for axis in 0..self.dim {
            let f = (pos[axis] - self.lo[axis]) / self.spacing[axis];
            let i = f.round().clamp(0.0, (self.n[axis] - 1) as f64) as usize;
            idx[axis] = i;
        }
        self.flatten(idx[0], idx[1])
    }

    /// True when the position lies inside the closed extents on every axis.
    pub fn contains(&self, pos: &[f64]) -> bool {
        (0..self.dim).all(|a| pos[a] >= self.lo[a] && pos[a] <= self.hi[a])
    }
}

impl TryFrom<GridSpec> for Grid {
    type Error = GridError;

    fn try_from(s: GridSpec) -> Result<Self, GridError> {
        let get = |v: &[f64; 2]| (v[0], v[1]);
        match s.dim {
            1 if s.extents.len() == 1 && s.n.len() == 1 => {
                Grid::new_1d(s.extents[0][0], s.extents[0][1], s.n[0], s.dt)
            }
            2 if s.extents.len() == 2 && s.n.len() == 2 => Grid::new_2d(
                get(&s.extents[0]),
                get(&s.extents[1]),
                (s.n[0], s.n[1]),
                s.dt,
            ),
            d => Err(GridError::BadDimension(d)),
        }
    }
}

impl From<Grid> for GridSpec {
    fn from(g: Grid) -> GridSpec {
        GridSpec {
            dim: g.dim,
            extents: (0..g.dim).map(|a| [g.lo[a], g.hi[a]]).collect(),
            n: g.n[..g.dim].to_vec(),
            dt: g.dt,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_is_derived_from_extents() {
        let g = Grid::new_1d(0.0, 1.0, 11, 0.1).unwrap();
        assert!((g.spacing(0) - 0.1).abs() < 1e-15);
        assert_eq!(g.len(), 11);
    }

    #[test]
    fn rejects_degenerate_specs() {
        assert!(Grid::new_1d(1.0, 0.0, 16, 0.1).is_err());
        assert!(Grid::new_1d(0.0, 1.0, 4, 0.1).is_err());
        assert!(Grid::new_1d(0.0, 1.0, 16, 0.0).is_err());
        assert!(Grid::new_1d(0.0, 1.0, 16, -1.0).is_err());
    }

    #[test]
    fn flat_layout_is_x_major() {
        let g = Grid::new_2d((0.0, 1.0), (0.0, 2.0), (8, 9), 0.1).unwrap();
        assert_eq!(g.flatten(2, 3), 2 * 9 + 3);
        assert_eq!(g.unflatten(2 * 9 + 3), (2, 3));
        let p = g.position(g.flatten(2, 3));
        assert!((p[0] - 2.0 / 7.0).abs() < 1e-15);
        assert!((p[1] - 2.0 * 3.0 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn boundary_and_neighbors() {
        let g = Grid::new_1d(0.0, 1.0, 8, 0.1).unwrap();
        assert!(g.is_boundary(0));
        assert!(g.is_boundary(7));
        assert!(!g.is_boundary(3));
        let nb: Vec<_> = g.neighbors(3).collect();
        assert_eq!(nb, vec![2, 4]);

        let g2 = Grid::new_2d((0.0, 1.0), (0.0, 1.0), (8, 8), 0.1).unwrap();
        let nb: Vec<_> = g2.neighbors(g2.flatten(1, 1)).collect();
        assert_eq!(nb.len(), 4);
        assert!(g2.is_boundary(g2.flatten(0, 3)));
        assert!(g2.is_boundary(g2.flatten(3, 7)));
        assert!(!g2.is_boundary(g2.flatten(3, 3)));
    }

    #[test]
    fn serde_round_trip() {
        let g = Grid::new_2d((-1.0, 1.0), (0.0, 4.0), (16, 32), 0.01).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        let back: Grid = serde_json::from_str(&s).unwrap();
        assert_eq!(g, back);
    }
}
