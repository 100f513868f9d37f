//! Method-of-lines reference solver.
//!
//! Space: finite volumes on cell averages. The convective flux `alpha u^2` is
//! evaluated from WENO5 interface states with local Lax-Friedrichs splitting;
//! the linear `-beta u_x + gamma u_xx` part of the flux uses fourth-order
//! staggered central stencils at the interfaces. Time: SSP-RK3 under a CFL
//! limit that lands exactly on every save time.

pub mod stencil;
pub mod weno;

use std::sync::OnceLock;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pde::{
    evaluate_forcing, initial_condition, make_preset_with, ForcingTerm, Grid, PdeParams, Preset, PresetConfig,
    Trajectory,
};

pub use stencil::{fdm_derivative, pad_with_ghosts, StencilCoeffs};
pub use weno::{weno5_reconstruct, WENO_EPS};

/// Stability constant of the dispersive limit `dt <= dx^3 / (|gamma| C3)`:
/// the largest eigenvalue of the discrete third derivative is `4.61 / dx^3`,
/// SSP-RK3 is stable on the imaginary axis up to `sqrt(3)`.
pub const DISPERSIVE_CFL_CONSTANT: f64 = 2.7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    pub cfl_number: f64,
    /// Spatial oversampling of the integration grid relative to the saved grid.
    pub fine_factor: usize,
    pub max_steps: usize,
    /// Step size used when no term limits it.
    pub dt_max: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self { cfl_number: 0.4, fine_factor: 4, max_steps: 5_000_000, dt_max: 0.05 }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl_number > 0.0 && self.cfl_number <= 1.0) {
            return Err(Error::InvalidParameter(format!("cfl number must lie in (0, 1], got {}", self.cfl_number)));
        }
        if self.fine_factor == 0 {
            return Err(Error::InvalidParameter("fine factor must be >= 1".into()));
        }
        if !(self.dt_max.is_finite() && self.dt_max > 0.0) {
            return Err(Error::InvalidParameter(format!("dt_max must be positive, got {}", self.dt_max)));
        }
        Ok(())
    }
}

struct LinearStencils {
    first: StencilCoeffs,
    second: StencilCoeffs,
}

fn linear_stencils() -> &'static LinearStencils {
    static STENCILS: OnceLock<LinearStencils> = OnceLock::new();
    STENCILS.get_or_init(|| LinearStencils {
        first: StencilCoeffs::staggered_from_averages(1, 4).expect("valid stencil"),
        second: StencilCoeffs::staggered_from_averages(2, 4).expect("valid stencil"),
    })
}

/// Numerical flux at each of the `n + 1` interfaces.
fn interface_fluxes(u: &[f64], params: &PdeParams, dx: f64) -> Result<Vec<f64>> {
    let n = u.len();
    if n < 6 {
        return Err(Error::GridTooSmall(format!("the finite-volume solver needs at least 6 cells, got {n}")));
    }
    let g = weno::GHOSTS;
    let padded = pad_with_ghosts(u, g, params.boundary(), dx)?;
    let (alpha, beta, gamma) = (params.alpha(), params.beta(), params.gamma());
    let st = linear_stencils();
    let first: [f64; 4] = st.first.coeffs.clone().try_into().expect("4-point stencil");
    let second: [f64; 6] = st.second.coeffs.clone().try_into().expect("6-point stencil");

    let mut fluxes = Vec::with_capacity(n + 1);
    for k in 0..=n {
        // cells k-3..k+2 of the original grid, i.e. padded k..k+6
        let w = &padded[k..k + 6];
        let mut f = 0.0;
        if alpha != 0.0 {
            let (ul, ur) = weno::interface_states(&padded, k);
            let speed = w.iter().chain([&ul, &ur]).fold(0.0f64, |m, v| m.max((2.0 * alpha * v).abs()));
            f += 0.5 * alpha * (ul * ul + ur * ur) - 0.5 * speed * (ur - ul);
        }
        if beta != 0.0 {
            let ux = (first[0] * w[1] + first[1] * w[2] + first[2] * w[3] + first[3] * w[4]) / dx;
            f -= beta * ux;
        }
        if gamma != 0.0 {
            let uxx = second.iter().zip(w).map(|(a, v)| a * v).sum::<f64>() / (dx * dx);
            f += gamma * uxx;
        }
        fluxes.push(f);
    }
    if params.boundary().is_periodic() {
        fluxes[n] = fluxes[0];
    }
    Ok(fluxes)
}

/// `du_i/dt = -(F_{i+1/2} - F_{i-1/2}) / dx + delta(t, x_i)`.
pub fn semidiscrete_rhs(u: &[f64], t: f64, params: &PdeParams, forcing: &ForcingTerm, dx: f64) -> Result<Vec<f64>> {
    let fluxes = interface_fluxes(u, params, dx)?;
    let l = params.domain_length();
    Ok(fluxes
        .windows(2)
        .enumerate()
        .map(|(i, f)| {
            let source = if forcing.components.is_empty() {
                0.0
            } else {
                evaluate_forcing(forcing, t, (i as f64 + 0.5) * dx, l)
            };
            -(f[1] - f[0]) / dx + source
        })
        .collect())
}

/// Largest stable step: `cfl * min(dx / max|2 alpha u|, dx^2 / (2 beta), dx^3 / (|gamma| C3))`,
/// skipping terms with a zero coefficient, or `dt_max` when all are zero.
pub fn cfl_dt(u: &[f64], params: &PdeParams, dx: f64, cfl: f64, dt_max: f64) -> f64 {
    let mut dt = f64::INFINITY;
    let speed = u.iter().fold(0.0f64, |m, v| m.max((2.0 * params.alpha() * v).abs()));
    if speed > 0.0 {
        dt = dt.min(dx / speed);
    }
    if params.beta() > 0.0 {
        dt = dt.min(dx * dx / (2.0 * params.beta()));
    }
    if params.gamma() != 0.0 {
        dt = dt.min(dx.powi(3) / (params.gamma().abs() * DISPERSIVE_CFL_CONSTANT));
    }
    if dt.is_finite() {
        cfl * dt
    } else {
        dt_max
    }
}

/// One step of the three-stage, third-order strong-stability-preserving
/// Runge-Kutta scheme of Shu and Osher, written in increment form so that a
/// vanishing right-hand side returns the input bit for bit.
pub fn ssprk3_step<F>(u: &[f64], t: f64, dt: f64, mut rhs: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], f64) -> Result<Vec<f64>>,
{
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("time step must be positive, got {dt}")));
    }
    let l0 = rhs(u, t)?;
    let u1: Vec<f64> = u.iter().zip(&l0).map(|(a, l)| a + dt * l).collect();
    let l1 = rhs(&u1, t + dt)?;
    let u2: Vec<f64> = u
        .iter()
        .zip(&u1)
        .zip(&l1)
        .map(|((a, b), l)| a + 0.25 * ((b - a) + dt * l))
        .collect();
    let l2 = rhs(&u2, t + 0.5 * dt)?;
    let out: Vec<f64> = u
        .iter()
        .zip(&u2)
        .zip(&l2)
        .map(|((a, b), l)| a + (2.0 / 3.0) * ((b - a) + dt * l))
        .collect();
    if let Some(i) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::SolutionBlowup(format!("non-finite value in cell {i} at t = {}", t + dt)));
    }
    Ok(out)
}

/// Conservative coarsening: each output cell is the mean of `factor` input cells.
pub fn block_average(u: &[f64], factor: usize) -> Vec<f64> {
    if factor == 1 {
        return u.to_vec();
    }
    u.chunks_exact(factor).map(|c| c.iter().sum::<f64>() / factor as f64).collect()
}

/// Solves the preset convention `u(0, x) = delta(0, x)`.
pub fn solve_trajectory(params: &PdeParams, forcing: &ForcingTerm, grid: &Grid, config: &SolveConfig) -> Result<Trajectory> {
    solve_with_initial(params, forcing, forcing, grid, config)
}

/// Integrates from the sinusoidal initial state `initial` under source `forcing`.
///
/// The solve runs on `grid.n_x * fine_factor` cells and each snapshot is block
/// averaged to `grid.n_x`. Row 0 holds `initial` sampled on the saved grid.
pub fn solve_with_initial(
    params: &PdeParams,
    forcing: &ForcingTerm,
    initial: &ForcingTerm,
    grid: &Grid,
    config: &SolveConfig,
) -> Result<Trajectory> {
    config.validate()?;
    if (grid.domain_length - params.domain_length()).abs() > 1e-12 * params.domain_length() {
        return Err(Error::InvalidParameter(format!(
            "grid length {} differs from the PDE domain length {}",
            grid.domain_length,
            params.domain_length()
        )));
    }
    let fine = grid.refined(config.fine_factor);
    let dx = fine.dx();
    let mut u = initial_condition(initial, &fine);

    let mut rows = Vec::with_capacity(grid.n_t * grid.n_x);
    rows.extend(initial_condition(initial, grid));

    let mut t = 0.0;
    let mut steps = 0usize;
    let rhs = |v: &[f64], tt: f64| semidiscrete_rhs(v, tt, params, forcing, dx);
    for k in 1..grid.n_t {
        let target = grid.t_point(k);
        while t < target {
            if steps >= config.max_steps {
                return Err(Error::StepLimitExceeded { max_steps: config.max_steps, t, t_end: grid.t_end });
            }
            let mut dt = cfl_dt(&u, params, dx, config.cfl_number, config.dt_max);
            let landing = t + dt >= target;
            if landing {
                dt = target - t;
            }
            u = ssprk3_step(&u, t, dt, rhs)?;
            t = if landing { target } else { t + dt };
            steps += 1;
        }
        rows.extend(block_average(&u, config.fine_factor));
    }
    Trajectory::new(grid.clone(), *params, forcing.clone(), initial.clone(), rows)
}

/// A generated dataset together with what produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySet {
    /// Preset name, or a free-form label for hand-built problems.
    pub label: String,
    pub preset: Option<Preset>,
    pub preset_config: Option<PresetConfig>,
    pub seed: u64,
    pub grid: Grid,
    pub solve_config: SolveConfig,
    pub trajectories: Vec<Trajectory>,
}

/// Per-trajectory seeds derived from the master seed.
pub fn trajectory_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.next_u64()).collect()
}

pub fn generate_dataset(
    preset: Preset,
    n_trajectories: usize,
    grid: &Grid,
    seed: u64,
    config: &SolveConfig,
) -> Result<TrajectorySet> {
    let preset_config = PresetConfig { domain_length: grid.domain_length, t_end: grid.t_end, ..PresetConfig::default() };
    generate_dataset_with(preset, &preset_config, n_trajectories, grid, seed, config)
}

/// Trajectories are solved in parallel; the result is ordered by index and
/// independent of scheduling. The error reported is the one with the lowest index.
pub fn generate_dataset_with(
    preset: Preset,
    preset_config: &PresetConfig,
    n_trajectories: usize,
    grid: &Grid,
    seed: u64,
    config: &SolveConfig,
) -> Result<TrajectorySet> {
    if n_trajectories == 0 {
        return Err(Error::InvalidParameter("need at least one trajectory".into()));
    }
    let preset_config = PresetConfig { domain_length: grid.domain_length, ..preset_config.clone() };
    let seeds = trajectory_seeds(seed, n_trajectories);
    let results: Vec<Result<Trajectory>> = seeds
        .par_iter()
        .enumerate()
        .map(|(index, &s)| {
            let (params, forcing) = make_preset_with(preset, s, &preset_config)?;
            solve_trajectory(&params, &forcing, grid, config)
                .map_err(|e| Error::Trajectory { index, source: Box::new(e) })
        })
        .collect();
    let trajectories = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(TrajectorySet {
        label: preset.name().to_string(),
        preset: Some(preset),
        preset_config: Some(preset_config),
        seed,
        grid: grid.clone(),
        solve_config: config.clone(),
        trajectories,
    })
}
