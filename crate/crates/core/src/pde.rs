//! The benchmark PDE family, forcing terms, grids and trajectories.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Boundary {
    Periodic,
    /// Fixed value at both walls.
    Dirichlet(f64),
    /// Fixed gradient `u_x` at both walls.
    Neumann(f64),
}

impl Boundary {
    pub fn is_periodic(&self) -> bool {
        matches!(self, Boundary::Periodic)
    }

    /// One-hot encoding `[periodic, dirichlet, neumann]`, used as model input.
    pub fn one_hot(&self) -> [f64; 3] {
        match self {
            Boundary::Periodic => [1.0, 0.0, 0.0],
            Boundary::Dirichlet(_) => [0.0, 1.0, 0.0],
            Boundary::Neumann(_) => [0.0, 0.0, 1.0],
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    alpha: f64,
    beta: f64,
    gamma: f64,
    domain_length: f64,
    boundary: Boundary,
}

/// Coefficients `(alpha, beta, gamma)` of the flux `alpha u^2 - beta u_x + gamma u_xx`
/// together with the spatial period and boundary treatment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct PdeParams {
    alpha: f64,
    beta: f64,
    gamma: f64,
    domain_length: f64,
    boundary: Boundary,
}

impl PdeParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64, domain_length: f64, boundary: Boundary) -> Result<Self> {
        if !(alpha.is_finite() && beta.is_finite() && gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "coefficients must be finite, got ({alpha}, {beta}, {gamma})"
            )));
        }
        if beta < 0.0 {
            return Err(Error::InvalidParameter(format!("beta must be >= 0, got {beta}")));
        }
        if !(domain_length.is_finite() && domain_length > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "domain length must be positive, got {domain_length}"
            )));
        }
        match boundary {
            Boundary::Dirichlet(v) | Boundary::Neumann(v) if !v.is_finite() => {
                return Err(Error::InvalidParameter(format!("boundary value must be finite, got {v}")));
            }
            _ => {}
        }
        Ok(Self { alpha, beta, gamma, domain_length, boundary })
    }

    pub fn periodic(alpha: f64, beta: f64, gamma: f64, domain_length: f64) -> Result<Self> {
        Self::new(alpha, beta, gamma, domain_length, Boundary::Periodic)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn domain_length(&self) -> f64 {
        self.domain_length
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn theta(&self) -> [f64; 3] {
        [self.alpha, self.beta, self.gamma]
    }
}

impl TryFrom<RawParams> for PdeParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        PdeParams::new(raw.alpha, raw.beta, raw.gamma, raw.domain_length, raw.boundary)
    }
}

impl From<PdeParams> for RawParams {
    fn from(p: PdeParams) -> Self {
        RawParams {
            alpha: p.alpha,
            beta: p.beta,
            gamma: p.gamma,
            domain_length: p.domain_length,
            boundary: p.boundary,
        }
    }
}

/// `J = alpha u^2 - beta u_x + gamma u_xx`.
pub fn flux(u: f64, du_dx: f64, d2u_dx2: f64, params: &PdeParams) -> f64 {
    params.alpha * u * u - params.beta * du_dx + params.gamma * d2u_dx2
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForcingComponent {
    pub amplitude: f64,
    /// Temporal angular frequency.
    pub omega: f64,
    /// Spatial mode index.
    pub wavenumber: i32,
    pub phase: f64,
}

impl ForcingComponent {
    pub fn eval(&self, t: f64, x: f64, domain_length: f64) -> f64 {
        let arg = self.omega * t + 2.0 * PI * f64::from(self.wavenumber) * x / domain_length + self.phase;
        self.amplitude * arg.sin()
    }
}

/// Sum of travelling sinusoids. Also used to describe initial conditions,
/// since the benchmark sets `u(0, x) = delta(0, x)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ForcingTerm {
    pub components: Vec<ForcingComponent>,
}

impl ForcingTerm {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn single(amplitude: f64, omega: f64, wavenumber: i32, phase: f64) -> Self {
        Self { components: vec![ForcingComponent { amplitude, omega, wavenumber, phase }] }
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(|c| c.amplitude == 0.0)
    }

    /// Largest possible `|delta|`.
    pub fn bound(&self) -> f64 {
        self.components.iter().map(|c| c.amplitude.abs()).sum()
    }
}

pub fn evaluate_forcing(forcing: &ForcingTerm, t: f64, x: f64, domain_length: f64) -> f64 {
    forcing.components.iter().fold(0.0, |acc, c| acc + c.eval(t, x, domain_length))
}

/// Regular cell-centred grid plus the save times of a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub n_x: usize,
    pub n_t: usize,
    pub domain_length: f64,
    pub t_end: f64,
}

impl Grid {
    pub fn new(n_x: usize, n_t: usize, domain_length: f64, t_end: f64) -> Result<Self> {
        if n_x == 0 {
            return Err(Error::GridTooSmall("n_x must be positive".into()));
        }
        if n_t < 2 {
            return Err(Error::GridTooSmall(format!("n_t must be at least 2, got {n_t}")));
        }
        if !(domain_length.is_finite() && domain_length > 0.0) {
            return Err(Error::InvalidParameter(format!("domain length must be positive, got {domain_length}")));
        }
        if !(t_end.is_finite() && t_end > 0.0) {
            return Err(Error::InvalidParameter(format!("t_end must be positive, got {t_end}")));
        }
        Ok(Self { n_x, n_t, domain_length, t_end })
    }

    pub fn dx(&self) -> f64 {
        self.domain_length / self.n_x as f64
    }

    /// Interval between consecutive save times.
    pub fn dt(&self) -> f64 {
        self.t_end / (self.n_t - 1) as f64
    }

    pub fn x_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dx()
    }

    pub fn x_centers(&self) -> Vec<f64> {
        (0..self.n_x).map(|i| self.x_center(i)).collect()
    }

    pub fn t_point(&self, k: usize) -> f64 {
        if k + 1 == self.n_t {
            self.t_end
        } else {
            self.t_end * k as f64 / (self.n_t - 1) as f64
        }
    }

    pub fn t_points(&self) -> Vec<f64> {
        (0..self.n_t).map(|k| self.t_point(k)).collect()
    }

    /// Same save times and domain with `factor` times as many cells.
    pub fn refined(&self, factor: usize) -> Self {
        Self { n_x: self.n_x * factor, ..self.clone() }
    }

    /// Same save times, different spatial resolution.
    pub fn with_n_x(&self, n_x: usize) -> Self {
        Self { n_x, ..self.clone() }
    }
}

/// Point samples of `delta(0, x)` at every cell centre.
pub fn initial_condition(forcing: &ForcingTerm, grid: &Grid) -> Vec<f64> {
    (0..grid.n_x)
        .map(|i| evaluate_forcing(forcing, 0.0, grid.x_center(i), grid.domain_length))
        .collect()
}

/// One solved trajectory, `u` stored row-major as `[n_t][n_x]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub grid: Grid,
    pub params: PdeParams,
    /// Source term active for `t > 0`.
    pub forcing: ForcingTerm,
    /// Sinusoids sampled to produce `u[0]`; equal to `forcing` for the presets.
    pub initial: ForcingTerm,
    #[serde(skip)]
    pub u: Vec<f64>,
}

impl Trajectory {
    pub fn new(grid: Grid, params: PdeParams, forcing: ForcingTerm, initial: ForcingTerm, u: Vec<f64>) -> Result<Self> {
        if u.len() != grid.n_t * grid.n_x {
            return Err(Error::ShapeMismatch(format!(
                "trajectory data has {} values, grid needs {}x{}",
                u.len(),
                grid.n_t,
                grid.n_x
            )));
        }
        if let Some(pos) = u.iter().position(|v| !v.is_finite()) {
            return Err(Error::SolutionBlowup(format!(
                "non-finite value at step {} cell {}",
                pos / grid.n_x,
                pos % grid.n_x
            )));
        }
        Ok(Self { grid, params, forcing, initial, u })
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let n = self.grid.n_x;
        &self.u[k * n..(k + 1) * n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.u.chunks_exact(self.grid.n_x)
    }

    pub fn mass(&self, k: usize) -> f64 {
        self.row(k).iter().sum::<f64>() * self.grid.dx()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Burgers without diffusion.
    E1,
    /// Burgers with per-trajectory diffusion.
    E2,
    /// Mixed Burgers / heat / KdV.
    E3,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::E1, Preset::E2, Preset::E3];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::E1 => "e1",
            Preset::E2 => "e2",
            Preset::E3 => "e3",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "e1" => Ok(Preset::E1),
            "e2" => Ok(Preset::E2),
            "e3" => Ok(Preset::E3),
            other => Err(Error::InvalidParameter(format!("unknown preset '{other}' (expected e1, e2 or e3)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForcingConfig {
    pub n_components: usize,
    pub amplitude: (f64, f64),
    pub omega: (f64, f64),
    pub wavenumbers: Vec<i32>,
}

impl Default for ForcingConfig {
    fn default() -> Self {
        Self { n_components: 5, amplitude: (-0.5, 0.5), omega: (-0.4, 0.4), wavenumbers: vec![1, 2, 3] }
    }
}

/// Coefficient values and sampling ranges behind the presets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PresetConfig {
    /// Fixed advection coefficient of E1 and E2.
    pub alpha: f64,
    /// Diffusion range of E2.
    pub e2_beta: (f64, f64),
    pub e3_alpha: (f64, f64),
    pub e3_beta: (f64, f64),
    pub e3_gamma: (f64, f64),
    pub domain_length: f64,
    pub t_end: f64,
    pub forcing: ForcingConfig,
}

impl Default for PresetConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            e2_beta: (0.0, 0.2),
            e3_alpha: (0.0, 1.0),
            e3_beta: (0.0, 0.2),
            e3_gamma: (0.0, 1.0),
            domain_length: 16.0,
            t_end: 4.0,
            forcing: ForcingConfig::default(),
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Uniform on the open interval; used where a bound of zero must be excluded.
fn uniform_open(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    loop {
        let v = uniform(rng, range);
        if v != range.0 || range.1 <= range.0 {
            return v;
        }
    }
}

pub fn sample_forcing(rng: &mut ChaCha8Rng, config: &ForcingConfig) -> ForcingTerm {
    let components = (0..config.n_components)
        .map(|_| {
            let amplitude = uniform(rng, config.amplitude);
            let omega = uniform(rng, config.omega);
            let wavenumber = if config.wavenumbers.is_empty() {
                1
            } else {
                config.wavenumbers[rng.gen_range(0..config.wavenumbers.len())]
            };
            let phase = rng.gen_range(0.0..2.0 * PI);
            ForcingComponent { amplitude, omega, wavenumber, phase }
        })
        .collect();
    ForcingTerm { components }
}

pub fn make_preset(preset: Preset, seed: u64) -> (PdeParams, ForcingTerm) {
    make_preset_with(preset, seed, &PresetConfig::default()).expect("default preset config is valid")
}

pub fn make_preset_with(preset: Preset, seed: u64, config: &PresetConfig) -> Result<(PdeParams, ForcingTerm)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (alpha, beta, gamma) = match preset {
        Preset::E1 => (config.alpha, 0.0, 0.0),
        Preset::E2 => (config.alpha, uniform_open(&mut rng, config.e2_beta), 0.0),
        Preset::E3 => {
            let a = uniform(&mut rng, config.e3_alpha);
            let b = uniform(&mut rng, config.e3_beta);
            let g = uniform(&mut rng, config.e3_gamma);
            (a, b, g)
        }
    };
    let params = PdeParams::periodic(alpha, beta, gamma, config.domain_length)?;
    let forcing = sample_forcing(&mut rng, &config.forcing);
    Ok((params, forcing))
}

/// Pure diffusion with a unit `sin(2 pi x / L)` initial state and no source.
/// Returns the parameters and the initial-condition sinusoid.
pub fn heat_problem(beta: f64, domain_length: f64) -> Result<(PdeParams, ForcingTerm)> {
    let params = PdeParams::periodic(0.0, beta, 0.0, domain_length)?;
    Ok((params, ForcingTerm::single(1.0, 0.0, 1, 0.0)))
}
