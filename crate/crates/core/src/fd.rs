//! Fourth-order central differences for fields given only pointwise
//! (backgrounds and frames built by pointwise linear algebra).

use nalgebra::{DMatrix, DVector};

pub const DEFAULT_STEP: f64 = 1e-3;

/// `out[(r, i)] = d f_r / d x_i`, exact for polynomials of degree <= 4.
pub fn jacobian(f: impl Fn(&[f64]) -> DVector<f64>, x: &[f64], h: f64) -> DMatrix<f64> {
    let f0 = f(x);
    let mut out = DMatrix::zeros(f0.len(), x.len());
    let mut y = x.to_vec();
    for i in 0..x.len() {
        let mut at = |s: f64| {
            y[i] = x[i] + s * h;
            let v = f(&y);
            y[i] = x[i];
            v
        };
        let (p1, m1, p2, m2) = (at(1.0), at(-1.0), at(2.0), at(-2.0));
        let col = ((p1 - m1) * 8.0 - (p2 - m2)) / (12.0 * h);
        out.set_column(i, &col);
    }
    out
}

/// Partial derivatives of a matrix-valued field: `result[i] = d m / d x_i`.
pub fn matrix_partials(f: impl Fn(&[f64]) -> DMatrix<f64>, x: &[f64], h: f64) -> Vec<DMatrix<f64>> {
    let shape = f(x).shape();
    let jac = jacobian(|y| DVector::from_column_slice(f(y).as_slice()), x, h);
    (0..x.len())
        .map(|i| DMatrix::from_column_slice(shape.0, shape.1, jac.column(i).as_slice()))
        .collect()
}
