//! Real, vector and complex fields defined on a [`Grid`].

use crate::grid::Grid;
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("{given} values given for a grid of {expected} points")]
    LengthMismatch { given: usize, expected: usize },
    #[error("field integrates to {0}, expected 1")]
    NotNormalized(f64),
}

/// Real scalar field: one `f64` per grid point, flat x-major layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Grid) -> Self {
        ScalarField {
            grid: grid.clone(),
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<Self, FieldError> {
        if values.len() != grid.len() {
            return Err(FieldError::LengthMismatch {
                given: values.len(),
                expected: grid.len(),
            });
        }
        Ok(ScalarField {
            grid: grid.clone(),
            values,
        })
    }

    /// Evaluate `f(x)` (1D) or `f([x, y])` (2D) at every grid point.
    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|i| {
                let p = grid.position(i);
                f(&p[..grid.dim()])
            })
            .collect();
        ScalarField {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Riemann sum of the field over the grid.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self, FieldError> {
        if self.grid != other.grid {
            return Err(FieldError::GridMismatch);
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(ScalarField {
            grid: self.grid.clone(),
            values,
        })
    }

    /// Rescale so the field integrates to exactly one.
    pub fn normalize(&mut self) -> Result<(), FieldError> {
        let total = self.integral();
        if !(total > 0.0) || !total.is_finite() {
            return Err(FieldError::NotNormalized(total));
        }
        for v in &mut self.values {
            *v /= total;
        }
        Ok(())
    }
}

/// Vector field stored as one scalar array per component.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid,
    components: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn zeros(grid: &Grid) -> Self {
        VectorField {
            grid: grid.clone(),
            components: vec![vec![0.0; grid.len()]; grid.dim()],
        }
    }

    pub fn from_components(grid: &Grid, components: Vec<Vec<f64>>) -> Result<Self, FieldError> {
        if components.len() != grid.dim() {
            return Err(FieldError::LengthMismatch {
                given: components.len(),
                expected: grid.dim(),
            });
        }
        for c in &components {
            if c.len() != grid.len() {
                return Err(FieldError::LengthMismatch {
                    given: c.len(),
                    expected: grid.len(),
                });
            }
        }
        Ok(VectorField {
            grid: grid.clone(),
            components,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn component(&self, axis: usize) -> &[f64] {
        &self.components[axis]
    }

    pub fn component_mut(&mut self, axis: usize) -> &mut [f64] {
        &mut self.components[axis]
    }

    /// Vector value at a flat index (second component 0 in 1D).
    pub fn at(&self, flat: usize) -> [f64; 2] {
        let mut v = [0.0; 2];
        for (axis, c) in self.components.iter().enumerate() {
            v[axis] = c[flat];
        }
        v
    }

    /// Euclidean norm at a flat index.
    pub fn magnitude_at(&self, flat: usize) -> f64 {
        self.components
            .iter()
            .map(|c| c[flat] * c[flat])
            .sum::<f64>()
            .sqrt()
    }
}

/// Complex field; carries the wavefunction.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    grid: Grid,
    values: Vec<Complex64>,
}

impl ComplexField {
    pub fn zeros(grid: &Grid) -> Self {
        ComplexField {
            grid: grid.clone(),
            values: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn from_values(grid: &Grid, values: Vec<Complex64>) -> Result<Self, FieldError> {
        if values.len() != grid.len() {
            return Err(FieldError::LengthMismatch {
                given: values.len(),
                expected: grid.len(),
            });
        }
        Ok(ComplexField {
            grid: grid.clone(),
            values,
        })
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> Complex64) -> Self {
        let values = (0..grid.len())
            .map(|i| {
                let p = grid.position(i);
                f(&p[..grid.dim()])
            })
            .collect();
        ComplexField {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    /// `sum |psi|^2 * cell_volume`.
    pub fn norm_sqr_total(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.cell_volume()
    }

    /// Rescale to unit total probability.
    pub fn normalize(&mut self) -> Result<(), FieldError> {
        let total = self.norm_sqr_total();
        if !(total > 0.0) || !total.is_finite() {
            return Err(FieldError::NotNormalized(total));
        }
        let s = 1.0 / total.sqrt();
        for v in &mut self.values {
            *v *= s;
        }
        Ok(())
    }

    /// `|psi|^2` as a scalar field.
    pub fn density(&self) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v.norm_sqr()).collect(),
        }
    }

    /// `|psi|` as a scalar field.
    pub fn modulus(&self) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v.norm()).collect(),
        }
    }

    pub fn real(&self) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v.re).collect(),
        }
    }

    pub fn imag(&self) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v.im).collect(),
        }
    }

    pub fn max_modulus(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_from_fn_and_integral() {
        let g = Grid::new_1d(0.0, 1.0, 101, 0.1).unwrap();
        let f = ScalarField::from_fn(&g, |x| x[0]);
        // Riemann sum of x over [0,1] with endpoint cells double-counted a touch.
        assert!((f.integral() - 0.5 * 101.0 / 100.0).abs() < 1e-12);
    }

    #[test]
    fn length_checked() {
        let g = Grid::new_1d(0.0, 1.0, 16, 0.1).unwrap();
        assert!(ScalarField::from_values(&g, vec![0.0; 15]).is_err());
    }

    #[test]
    fn normalization_of_complex_field() {
        let g = Grid::new_1d(-8.0, 8.0, 256, 0.01).unwrap();
        let mut psi =
            ComplexField::from_fn(&g, |x| Complex64::new((-x[0] * x[0] / 2.0).exp(), 0.0));
        psi.normalize().unwrap();
        assert!((psi.norm_sqr_total() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_field_cannot_be_normalized() {
        let g = Grid::new_1d(0.0, 1.0, 16, 0.1).unwrap();
        let mut psi = ComplexField::zeros(&g);
        assert!(matches!(psi.normalize(), Err(FieldError::NotNormalized(_))));
    }

    #[test]
    fn grid_mismatch_detected() {
        let a = Grid::new_1d(0.0, 1.0, 16, 0.1).unwrap();
        let b = Grid::new_1d(0.0, 2.0, 16, 0.1).unwrap();
        let fa = ScalarField::zeros(&a);
        let fb = ScalarField::zeros(&b);
        assert_eq!(
            fa.zip_with(&fb, |x, y| x + y),
            Err(FieldError::GridMismatch)
        );
    }
}
