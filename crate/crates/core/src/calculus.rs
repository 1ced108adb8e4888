//! Second-order finite-difference calculus on grid fields.
//!
//! Interior points use central stencils; the outermost layer uses one-sided
//! second-order stencils, so no ghost data is invented. Both operators are
//! exact on polynomials up to the stencil order (linear for the gradient,
//! cubic for the one-sided Laplacian rows) and converge at O(h^2) on smooth
//! fields.

use crate::field::{ScalarField, VectorField};

/// First derivative of a line of values at index `i`, spacing `h`.
#[inline]
fn d1(line: &[f64], i: usize, h: f64) -> f64 {
    let n = line.len();
    if i == 0 {
        (-3.0 * line[0] + 4.0 * line[1] - line[2]) / (2.0 * h)
    } else if i == n - 1 {
        (3.0 * line[n - 1] - 4.0 * line[n - 2] + line[n - 3]) / (2.0 * h)
    } else {
        (line[i + 1] - line[i - 1]) / (2.0 * h)
    }
}

/// Second derivative of a line of values at index `i`, spacing `h`.
#[inline]
fn d2(line: &[f64], i: usize, h: f64) -> f64 {
    let n = line.len();
    let h2 = h * h;
    if i == 0 {
        (2.0 * line[0] - 5.0 * line[1] + 4.0 * line[2] - line[3]) / h2
    } else if i == n - 1 {
        (2.0 * line[n - 1] - 5.0 * line[n - 2] + 4.0 * line[n - 3] - line[n - 4]) / h2
    } else {
        (line[i + 1] - 2.0 * line[i] + line[i - 1]) / h2
    }
}

/// Apply a per-line derivative along `axis`, writing into `out`.
fn apply_along_axis(
    f: &ScalarField,
    axis: usize,
    out: &mut [f64],
    op: impl Fn(&[f64], usize, f64) -> f64,
) {
    let g = f.grid();
    let h = g.spacing(axis);
    let vals = f.values();
    match (g.dim(), axis) {
        (1, 0) => {
            for i in 0..g.n(0) {
                out[i] = op(vals, i, h);
            }
        }
        (2, 0) => {
            // Lines along x for fixed iy are strided; gather into a scratch row.
            let (nx, ny) = (g.n(0), g.n(1));
            let mut line = vec![0.0; nx];
            for iy in 0..ny {
                for ix in 0..nx {
                    line[ix] = vals[g.flatten(ix, iy)];
                }
                for ix in 0..nx {
                    out[g.flatten(ix, iy)] = op(&line, ix, h);
                }
            }
        }
        (2, 1) => {
            let (nx, ny) = (g.n(0), g.n(1));
            for ix in 0..nx {
                let row = &vals[g.flatten(ix, 0)..g.flatten(ix, 0) + ny];
                for iy in 0..ny {
                    out[g.flatten(ix, iy)] = op(row, iy, h);
                }
            }
        }
        _ => unreachable!("axis out of range for grid dimension"),
    }
}

/// Gradient of a scalar field, one component per axis.
pub fn gradient(f: &ScalarField) -> VectorField {
    let g = f.grid();
    let mut components = Vec::with_capacity(g.dim());
    for axis in 0..g.dim() {
        let mut out = vec![0.0; g.len()];
        apply_along_axis(f, axis, &mut out, d1);
        components.push(out);
    }
    VectorField::from_components(g, components).expect("components match grid by construction")
}

/// Laplacian of a scalar field (sum of per-axis second derivatives).
pub fn laplacian(f: &ScalarField) -> ScalarField {
    let g = f.grid();
    let mut total = vec![0.0; g.len()];
    let mut scratch = vec![0.0; g.len()];
    for axis in 0..g.dim() {
        apply_along_axis(f, axis, &mut scratch, d2);
        for (t, s) in total.iter_mut().zip(&scratch) {
            *t += *s;
        }
    }
    ScalarField::from_values(g, total).expect("length matches grid")
}

/// Divergence of a vector field.
pub fn divergence(v: &VectorField) -> ScalarField {
    let g = v.grid();
    let mut total = vec![0.0; g.len()];
    let mut scratch = vec![0.0; g.len()];
    for axis in 0..g.dim() {
        let comp = ScalarField::from_values(g, v.component(axis).to_vec()).expect("length matches");
        apply_along_axis(&comp, axis, &mut scratch, d1);
        for (t, s) in total.iter_mut().zip(&scratch) {
            *t += *s;
        }
    }
    ScalarField::from_values(g, total).expect("length matches grid")
}
