//! Finite-difference stencils built from Taylor moment conditions.
//!
//! Coefficients are solved exactly over the rationals and only then rounded
//! to `f64`, so the moment conditions can be checked without tolerance.

use num_rational::Ratio;

use crate::error::{Error, Result};
use crate::pde::Boundary;

pub type Rational = Ratio<i128>;

/// What the stencil inputs represent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampling {
    /// `u(x + s dx)`.
    Point,
    /// Mean of `u` over `[x + (s - 1/2) dx, x + (s + 1/2) dx]`.
    CellAverage,
}

impl Sampling {
    /// The input this sampling produces from `x^k / k!` at offset `s`, with `dx = 1`.
    fn moment(self, s: &Rational, k: usize) -> Rational {
        match self {
            Sampling::Point => rational_pow(s, k) / Rational::from_integer(factorial(k)),
            Sampling::CellAverage => {
                let h = Rational::new(1, 2);
                (rational_pow(&(s + h), k + 1) - rational_pow(&(s - h), k + 1))
                    / Rational::from_integer(factorial(k + 1))
            }
        }
    }
}

/// Weights `a_i` such that `d^n u / dx^n ~ sum_i a_i u_i / dx^n`, where `u_i`
/// is sampled at offset `s_i` as described by `sampling`.
#[derive(Clone, Debug, PartialEq)]
pub struct StencilCoeffs {
    /// Sample positions `s_i` in units of `dx`. Integers for collocated
    /// stencils, half-integers for stencils evaluated at cell interfaces.
    pub offsets: Vec<Rational>,
    pub exact: Vec<Rational>,
    pub coeffs: Vec<f64>,
    pub derivative_order: usize,
    pub accuracy: usize,
    pub sampling: Sampling,
}

fn check_order(order: usize, accuracy: usize) -> Result<()> {
    if !(1..=3).contains(&order) {
        return Err(Error::InvalidParameter(format!("derivative order must be 1, 2 or 3, got {order}")));
    }
    if accuracy < 2 || accuracy % 2 != 0 {
        return Err(Error::InvalidParameter(format!("accuracy must be even and >= 2, got {accuracy}")));
    }
    Ok(())
}

fn factorial(k: usize) -> i128 {
    (1..=k as i128).product()
}

fn to_f64(r: &Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

impl StencilCoeffs {
    /// Symmetric stencil on integer offsets `-r..=r`.
    pub fn central(order: usize, accuracy: usize) -> Result<Self> {
        check_order(order, accuracy)?;
        // Odd point count: odd derivatives gain nothing from symmetry, even ones gain one order.
        let mut points = order + accuracy - 1;
        if order % 2 == 1 {
            points += 1;
        }
        if points % 2 == 0 {
            points += 1;
        }
        let r = (points / 2) as i128;
        let offsets = (-r..=r).map(Rational::from_integer).collect();
        Self::from_offsets(offsets, order, accuracy)
    }

    /// Symmetric stencil on half-integer offsets, evaluating at a cell interface
    /// from the surrounding cell values.
    pub fn staggered(order: usize, accuracy: usize) -> Result<Self> {
        check_order(order, accuracy)?;
        // Even point count: here odd derivatives gain one order from symmetry.
        let mut points = order + accuracy;
        if order % 2 == 1 {
            points -= 1;
        }
        if points % 2 == 1 {
            points += 1;
        }
        let half = (points / 2) as i128;
        let offsets = (-half..half).map(|k| Rational::new(2 * k + 1, 2)).collect();
        Self::from_offsets(offsets, order, accuracy)
    }

    /// Like [`StencilCoeffs::staggered`], but reading cell averages, which is
    /// what a finite-volume state holds.
    pub fn staggered_from_averages(order: usize, accuracy: usize) -> Result<Self> {
        let point = Self::staggered(order, accuracy)?;
        Self::solve(point.offsets, order, accuracy, Sampling::CellAverage)
    }

    /// Solves `sum_i a_i s_i^k / k! = [k == order]` for `k < offsets.len()`.
    pub fn from_offsets(offsets: Vec<Rational>, order: usize, accuracy: usize) -> Result<Self> {
        Self::solve(offsets, order, accuracy, Sampling::Point)
    }

    fn solve(offsets: Vec<Rational>, order: usize, accuracy: usize, sampling: Sampling) -> Result<Self> {
        let n = offsets.len();
        if n <= order {
            return Err(Error::InvalidParameter(format!(
                "{n} points cannot resolve a derivative of order {order}"
            )));
        }
        let mut m: Vec<Vec<Rational>> = (0..n)
            .map(|k| {
                let mut row: Vec<Rational> = offsets
                    .iter()
                    .map(|s| sampling.moment(s, k))
                    .collect();
                row.push(Rational::from_integer(i128::from(k == order)));
                row
            })
            .collect();

        for col in 0..n {
            let pivot = (col..n)
                .find(|&r| m[r][col] != Rational::from_integer(0))
                .ok_or_else(|| Error::InvalidParameter("singular stencil system".into()))?;
            m.swap(col, pivot);
            let p = m[col][col];
            for v in m[col].iter_mut() {
                *v /= p;
            }
            for r in 0..n {
                if r != col && m[r][col] != Rational::from_integer(0) {
                    let f = m[r][col];
                    for c in col..=n {
                        let sub = f * m[col][c];
                        m[r][c] -= sub;
                    }
                }
            }
        }
        let exact: Vec<Rational> = m.iter().map(|row| row[n]).collect();
        let coeffs = exact.iter().map(to_f64).collect();
        let stencil = Self { offsets, exact, coeffs, derivative_order: order, accuracy, sampling };
        if let Some(k) = stencil.violated_moment() {
            return Err(Error::InvalidParameter(format!(
                "stencil for order {order} fails moment condition k = {k} at accuracy {accuracy}"
            )));
        }
        Ok(stencil)
    }

    /// Returns the first `k < accuracy + order` whose moment condition fails.
    pub fn violated_moment(&self) -> Option<usize> {
        (0..self.accuracy + self.derivative_order).find(|&k| {
            let sum = self
                .offsets
                .iter()
                .zip(&self.exact)
                .fold(Rational::from_integer(0), |acc, (s, a)| acc + *a * self.sampling.moment(s, k));
            sum != Rational::from_integer(i128::from(k == self.derivative_order))
        })
    }

    /// Integer offsets, or `None` for a staggered stencil.
    pub fn integer_offsets(&self) -> Option<Vec<isize>> {
        self.offsets
            .iter()
            .map(|s| s.is_integer().then(|| *s.numer() as isize))
            .collect()
    }

    /// Largest `|offset|`, rounded up.
    pub fn half_width(&self) -> usize {
        self.offsets
            .iter()
            .map(|s| if *s < Rational::from_integer(0) { -s } else { *s })
            .map(|s| s.ceil().to_integer() as usize).max().unwrap_or(0)
    }
}

fn rational_pow(base: &Rational, k: usize) -> Rational {
    (0..k).fold(Rational::from_integer(1), |acc, _| acc * base)
}

/// Pads `u` with `ghosts` cells per side.
///
/// Periodic wraps around. Dirichlet mirrors oddly about the wall value so the
/// interface average equals it. Neumann mirrors evenly and adds the prescribed
/// gradient, so linear profiles with matching slope extend exactly.
pub fn pad_with_ghosts(u: &[f64], ghosts: usize, boundary: Boundary, dx: f64) -> Result<Vec<f64>> {
    let n = u.len();
    if n < ghosts || n == 0 {
        return Err(Error::GridTooSmall(format!("{n} cells cannot supply {ghosts} ghost cells")));
    }
    let mut out = Vec::with_capacity(n + 2 * ghosts);
    for g in (0..ghosts).rev() {
        // ghost cell at index -1-g mirrors interior cell g
        out.push(match boundary {
            Boundary::Periodic => u[n - 1 - g],
            Boundary::Dirichlet(v) => 2.0 * v - u[g],
            Boundary::Neumann(s) => u[g] - (2 * g + 1) as f64 * dx * s,
        });
    }
    out.extend_from_slice(u);
    for g in 0..ghosts {
        // ghost cell at index n+g mirrors interior cell n-1-g
        out.push(match boundary {
            Boundary::Periodic => u[g],
            Boundary::Dirichlet(v) => 2.0 * v - u[n - 1 - g],
            Boundary::Neumann(s) => u[n - 1 - g] + (2 * g + 1) as f64 * dx * s,
        });
    }
    Ok(out)
}

/// Central finite-difference approximation of `d^order u / dx^order` at every cell.
pub fn fdm_derivative(u: &[f64], order: usize, accuracy: usize, dx: f64, boundary: Boundary) -> Result<Vec<f64>> {
    let stencil = StencilCoeffs::central(order, accuracy)?;
    let n = u.len();
    if n <= order + accuracy {
        return Err(Error::GridTooSmall(format!(
            "n_x = {n} too small for an order-{order} stencil of accuracy {accuracy}"
        )));
    }
    let offsets = stencil.integer_offsets().expect("central stencils are collocated");
    let r = stencil.half_width();
    let padded = pad_with_ghosts(u, r, boundary, dx)?;
    let scale = dx.powi(order as i32);
    Ok((0..n)
        .map(|i| {
            offsets
                .iter()
                .zip(&stencil.coeffs)
                .map(|(&o, &a)| a * padded[(i + r).wrapping_add_signed(o)])
                .sum::<f64>()
                / scale
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn r(n: i128, d: i128) -> Rational {
        Rational::new(n, d)
    }

    #[test]
    fn textbook_central_coefficients() {
        let s = StencilCoeffs::central(1, 2).unwrap();
        assert_eq!(s.exact, vec![r(-1, 2), r(0, 1), r(1, 2)]);
        let s = StencilCoeffs::central(2, 2).unwrap();
        assert_eq!(s.exact, vec![r(1, 1), r(-2, 1), r(1, 1)]);
        let s = StencilCoeffs::central(1, 4).unwrap();
        assert_eq!(s.exact, vec![r(1, 12), r(-2, 3), r(0, 1), r(2, 3), r(-1, 12)]);
        let s = StencilCoeffs::central(3, 2).unwrap();
        assert_eq!(s.exact, vec![r(-1, 2), r(1, 1), r(0, 1), r(-1, 1), r(1, 2)]);
    }

    #[test]
    fn textbook_staggered_coefficients() {
        let s = StencilCoeffs::staggered(1, 4).unwrap();
        assert_eq!(s.exact, vec![r(1, 24), r(-9, 8), r(9, 8), r(-1, 24)]);
        let s = StencilCoeffs::staggered(2, 4).unwrap();
        assert_eq!(s.exact, vec![r(-5, 48), r(13, 16), r(-17, 24), r(-17, 24), r(13, 16), r(-5, 48)]);
    }

    #[test]
    fn averaged_interface_coefficients() {
        let s = StencilCoeffs::staggered_from_averages(1, 4).unwrap();
        assert_eq!(s.exact, vec![r(1, 12), r(-15, 12), r(15, 12), r(-1, 12)]);
        let s = StencilCoeffs::staggered_from_averages(2, 4).unwrap();
        assert_eq!(s.violated_moment(), None);
        assert_eq!(s.exact.iter().fold(r(0, 1), |a, c| a + c), r(0, 1));
        assert!(s.exact.iter().zip(s.exact.iter().rev()).all(|(a, b)| a == b));
    }

    #[test]
    fn moment_conditions_hold_exactly() {
        for order in 1..=3 {
            for accuracy in [2, 4, 6] {
                for s in [StencilCoeffs::central(order, accuracy).unwrap(), StencilCoeffs::staggered(order, accuracy).unwrap()] {
                    assert_eq!(s.violated_moment(), None, "order {order} accuracy {accuracy}");
                }
            }
        }
    }

    #[test]
    fn rejects_bad_orders() {
        assert!(StencilCoeffs::central(0, 2).is_err());
        assert!(StencilCoeffs::central(4, 2).is_err());
        assert!(StencilCoeffs::central(1, 3).is_err());
        assert!(StencilCoeffs::central(1, 0).is_err());
    }

    #[test]
    fn derivative_of_constant_is_zero() {
        let u = vec![3.7; 20];
        for order in 1..=3 {
            for b in [Boundary::Periodic, Boundary::Dirichlet(3.7), Boundary::Neumann(0.0)] {
                let d = fdm_derivative(&u, order, 2, 0.1, b).unwrap();
                assert!(d.iter().all(|v| v.abs() < 1e-12), "order {order} {b:?}: {d:?}");
            }
        }
    }

    #[test]
    fn linear_profile_interior_slope() {
        let dx = 0.25;
        let u: Vec<f64> = (0..16).map(|i| (i as f64 + 0.5) * dx).collect();
        let d = fdm_derivative(&u, 1, 2, dx, Boundary::Dirichlet(0.0)).unwrap();
        for v in &d[1..15] {
            assert!((v - 1.0).abs() < 1e-10);
        }
        // the matching Neumann ghost extension is exact everywhere
        let d = fdm_derivative(&u, 1, 4, dx, Boundary::Neumann(1.0)).unwrap();
        assert!(d.iter().all(|v| (v - 1.0).abs() < 1e-10));
    }

    #[test]
    fn dirichlet_ghosts_average_to_wall_value() {
        let u = [1.0, 2.0, 3.0, 4.0];
        let p = pad_with_ghosts(&u, 2, Boundary::Dirichlet(0.5), 1.0).unwrap();
        assert_eq!(p, vec![-1.0, 0.0, 1.0, 2.0, 3.0, 4.0, -3.0, -2.0]);
        assert_eq!((p[1] + p[2]) / 2.0, 0.5);
        let p = pad_with_ghosts(&u, 1, Boundary::Periodic, 1.0).unwrap();
        assert_eq!(p, vec![4.0, 1.0, 2.0, 3.0, 4.0, 1.0]);
    }

    #[test]
    fn too_small_grid() {
        let u = vec![0.0; 4];
        assert!(matches!(fdm_derivative(&u, 2, 2, 0.1, Boundary::Periodic), Err(Error::GridTooSmall(_))));
    }

    fn sine_second_derivative_error(n: usize, accuracy: usize) -> f64 {
        let l = 2.0;
        let dx = l / n as f64;
        let k = 2.0 * PI / l;
        let u: Vec<f64> = (0..n).map(|i| (k * (i as f64 + 0.5) * dx).sin()).collect();
        let d = fdm_derivative(&u, 2, accuracy, dx, Boundary::Periodic).unwrap();
        (0..n)
            .map(|i| (d[i] + k * k * (k * (i as f64 + 0.5) * dx).sin()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn second_derivative_converges_at_design_order() {
        for accuracy in [2, 4, 6] {
            let e1 = sine_second_derivative_error(32, accuracy);
            let e2 = sine_second_derivative_error(64, accuracy);
            let rate = (e1 / e2).log2();
            assert!((rate - accuracy as f64).abs() < 0.15, "accuracy {accuracy}: rate {rate}");
        }
    }
}
