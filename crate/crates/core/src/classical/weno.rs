//! Fifth-order WENO reconstruction of interface values from cell averages
//! (Jiang & Shu smoothness indicators and nonlinear weights).

use crate::error::{Error, Result};
use crate::pde::Boundary;

use super::stencil::pad_with_ghosts;

/// Regularizer in the nonlinear weights.
pub const WENO_EPS: f64 = 1e-6;

const LINEAR_WEIGHTS: [f64; 3] = [0.1, 0.6, 0.3];

pub(crate) const GHOSTS: usize = 3;

/// Reconstructs the value at the right face of the middle cell of
/// `[v0, v1, v2, v3, v4]` (upwind side on the left).
///
/// Candidates are written as `v2 + correction` so a constant input is
/// reproduced bit for bit.
#[inline]
pub(crate) fn weno5_face(v: [f64; 5]) -> f64 {
    let [a, b, c, d, e] = v;
    let q0 = (2.0 * (a - c) - 7.0 * (b - c)) / 6.0;
    let q1 = (-(b - c) + 2.0 * (d - c)) / 6.0;
    let q2 = (5.0 * (d - c) - (e - c)) / 6.0;

    let s0 = 13.0 / 12.0 * (a - 2.0 * b + c).powi(2) + 0.25 * (a - 4.0 * b + 3.0 * c).powi(2);
    let s1 = 13.0 / 12.0 * (b - 2.0 * c + d).powi(2) + 0.25 * (b - d).powi(2);
    let s2 = 13.0 / 12.0 * (c - 2.0 * d + e).powi(2) + 0.25 * (3.0 * c - 4.0 * d + e).powi(2);

    let a0 = LINEAR_WEIGHTS[0] / (WENO_EPS + s0).powi(2);
    let a1 = LINEAR_WEIGHTS[1] / (WENO_EPS + s1).powi(2);
    let a2 = LINEAR_WEIGHTS[2] / (WENO_EPS + s2).powi(2);
    c + (a0 * q0 + a1 * q1 + a2 * q2) / (a0 + a1 + a2)
}

/// Left and right states at interface `k` of a ghost-padded array, where
/// interface `k` separates padded cells `k + GHOSTS - 1` and `k + GHOSTS`.
#[inline]
pub(crate) fn interface_states(padded: &[f64], k: usize) -> (f64, f64) {
    let p = k + GHOSTS - 1;
    let left = weno5_face([padded[p - 2], padded[p - 1], padded[p], padded[p + 1], padded[p + 2]]);
    let right = weno5_face([padded[p + 3], padded[p + 2], padded[p + 1], padded[p], padded[p - 1]]);
    (left, right)
}

/// Reconstructs `(u_left, u_right)` at the `n_x + 1` interfaces `x = k dx`,
/// `k = 0..=n_x`. `u_left[k]` comes from the cell on the left of the
/// interface, `u_right[k]` from the cell on the right. For periodic
/// boundaries the first and last interfaces coincide.
pub fn weno5_reconstruct(cell_avgs: &[f64], boundary: Boundary, dx: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = cell_avgs.len();
    if n < 6 {
        return Err(Error::GridTooSmall(format!("WENO5 needs at least 6 cells, got {n}")));
    }
    let padded = pad_with_ghosts(cell_avgs, GHOSTS, boundary, dx)?;
    Ok((0..=n).map(|k| interface_states(&padded, k)).unzip())
}
