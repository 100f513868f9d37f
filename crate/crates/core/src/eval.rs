//! Accumulated error, survival time and runtime, and the experiment sweep
//! over presets, resolutions, solvers and seeds.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::classical::{generate_dataset_with, solve_with_initial, SolveConfig, TrajectorySet};
use crate::error::{Error, Result};
use crate::model::MpPdeModel;
use crate::pde::{Grid, Preset, PresetConfig, Trajectory};
use crate::tensor::Tensor;

fn check_shapes(pred: &[f64], truth: &[f64], n_x: usize) -> Result<usize> {
    if n_x == 0 || pred.len() != truth.len() || pred.len() % n_x != 0 {
        return Err(Error::ShapeMismatch(format!(
            "prediction of {} values vs truth of {} on {n_x} cells",
            pred.len(),
            truth.len()
        )));
    }
    Ok(pred.len() / n_x)
}

/// Spatial mean squared error of every row.
pub fn step_errors(pred: &[f64], truth: &[f64], n_x: usize) -> Result<Vec<f64>> {
    check_shapes(pred, truth, n_x)?;
    Ok(pred
        .chunks(n_x)
        .zip(truth.chunks(n_x))
        .map(|(p, t)| p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n_x as f64)
        .collect())
}

/// Sum over time of the spatial mean squared error. Arrays are `[n_t][n_x]`, flattened.
pub fn accumulated_error(pred: &[f64], truth: &[f64], n_x: usize) -> Result<f64> {
    Ok(step_errors(pred, truth, n_x)?.iter().sum())
}

/// Time of the first step whose spatial MSE exceeds `threshold`, or the
/// last time point if none does.
pub fn survival_time(pred: &[f64], truth: &[f64], n_x: usize, t_points: &[f64], threshold: f64) -> Result<f64> {
    let errs = step_errors(pred, truth, n_x)?;
    if errs.len() != t_points.len() || t_points.is_empty() {
        return Err(Error::ShapeMismatch(format!("{} rows but {} time points", errs.len(), t_points.len())));
    }
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(Error::InvalidParameter(format!("threshold must be positive, got {threshold}")));
    }
    Ok(errs
        .iter()
        .position(|&e| e > threshold)
        .map_or(t_points[t_points.len() - 1], |k| t_points[k]))
}

/// Something that produces a trajectory comparable with a truth trajectory.
#[derive(Clone, Debug)]
pub enum Solver {
    /// The classical scheme run directly on the evaluation grid.
    Weno5 { fine_factor: usize },
    /// The reference data itself.
    Truth,
    /// A trained network; `None` when its checkpoint could not be found.
    MpPde { label: String, model: Option<Box<MpPdeModel>> },
}

impl Solver {
    pub fn id(&self) -> &str {
        match self {
            Solver::Weno5 { .. } => "weno5",
            Solver::Truth => "truth",
            Solver::MpPde { label, .. } => label,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub threshold: f64,
    /// Timed repeats per solve; the median is reported.
    pub repeats: usize,
    /// Settings for classical solves other than `fine_factor`.
    pub solve_config: SolveConfig,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { threshold: 0.01, repeats: 3, solve_config: SolveConfig::default() }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Neural trajectory on the truth grid: the first `K` rows are copied from
/// `truth`, the rest come from an autoregressive rollout started there.
pub fn neural_trajectory(model: &MpPdeModel, truth: &Trajectory) -> Result<Vec<f64>> {
    let k = model.config().bundle_size;
    let (n, n_t) = (truth.grid.n_x, truth.grid.n_t);
    model.config().check_horizon(n_t)?;
    let window = Tensor::new(vec![k, n], truth.u[..k * n].to_vec())?;
    let steps = (n_t - k).div_ceil(k);
    let rolled = model.rollout(&window, k - 1, &truth.grid, &truth.params, steps)?;
    let mut out = truth.u[..k * n].to_vec();
    out.extend_from_slice(&rolled.data()[..(n_t - k) * n]);
    Ok(out)
}

fn run_solver(solver: &Solver, truth: &Trajectory, opts: &EvalOptions) -> Result<Vec<f64>> {
    match solver {
        Solver::Truth => Ok(truth.u.clone()),
        Solver::Weno5 { fine_factor } => {
            let config = SolveConfig { fine_factor: *fine_factor, ..opts.solve_config.clone() };
            Ok(solve_with_initial(&truth.params, &truth.forcing, &truth.initial, &truth.grid, &config)?.u)
        }
        Solver::MpPde { label, model } => {
            let model = model.as_ref().ok_or_else(|| Error::MissingCheckpoint(label.clone()))?;
            neural_trajectory(model, truth)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMetrics {
    pub index: usize,
    pub accumulated_error: f64,
    pub survival_time: f64,
    pub runtime_ms: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Stats {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self::default();
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

/// Metrics of one experiment cell `(preset, resolution, solver, seed)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub preset: String,
    pub n_t: usize,
    pub n_x: usize,
    pub solver: String,
    pub seed: u64,
    pub threshold: f64,
    pub trajectories: Vec<TrajectoryMetrics>,
    pub accumulated_error: Stats,
    pub survival_time: Stats,
    pub runtime_ms: Stats,
}

/// One CSV line; column order is the serialization order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub preset: String,
    pub n_t: usize,
    pub n_x: usize,
    pub solver: String,
    pub seed: u64,
    pub acc_error: f64,
    pub survival_time: f64,
    pub runtime_ms: f64,
}

pub const CSV_COLUMNS: [&str; 8] =
    ["preset", "n_t", "n_x", "solver", "seed", "acc_error", "survival_time", "runtime_ms"];

impl EvalReport {
    /// Cell means as a CSV row.
    pub fn row(&self) -> EvalRow {
        EvalRow {
            preset: self.preset.clone(),
            n_t: self.n_t,
            n_x: self.n_x,
            solver: self.solver.clone(),
            seed: self.seed,
            acc_error: self.accumulated_error.mean,
            survival_time: self.survival_time.mean,
            runtime_ms: self.runtime_ms.mean,
        }
    }

    /// Copy with every timing field zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.trajectories.iter_mut().for_each(|t| t.runtime_ms = 0.0);
        r.runtime_ms = Stats::default();
        r
    }
}

/// Runs `solver` against every trajectory of `set`.
pub fn evaluate_set(set: &TrajectorySet, solver: &Solver, opts: &EvalOptions) -> Result<EvalReport> {
    let repeats = opts.repeats.max(1);
    let mut metrics = Vec::with_capacity(set.trajectories.len());
    for (index, truth) in set.trajectories.iter().enumerate() {
        let annotate = |e: Error| Error::Trajectory { index, source: Box::new(e) };
        let mut times = Vec::with_capacity(repeats);
        let mut pred = Vec::new();
        for _ in 0..repeats {
            let start = Instant::now();
            pred = run_solver(solver, truth, opts).map_err(annotate)?;
            times.push(start.elapsed().as_secs_f64() * 1e3);
        }
        let n_x = truth.grid.n_x;
        metrics.push(TrajectoryMetrics {
            index,
            accumulated_error: accumulated_error(&pred, &truth.u, n_x)?,
            survival_time: survival_time(&pred, &truth.u, n_x, &truth.grid.t_points(), opts.threshold)?,
            runtime_ms: median(times),
        });
    }
    Ok(EvalReport {
        preset: set.label.clone(),
        n_t: set.grid.n_t,
        n_x: set.grid.n_x,
        solver: solver.id().to_string(),
        seed: set.seed,
        threshold: opts.threshold,
        accumulated_error: Stats::of(metrics.iter().map(|m| m.accumulated_error)),
        survival_time: Stats::of(metrics.iter().map(|m| m.survival_time)),
        runtime_ms: Stats::of(metrics.iter().map(|m| m.runtime_ms)),
        trajectories: metrics,
    })
}

#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub preset: Preset,
    pub preset_config: PresetConfig,
    /// `(n_t, n_x)` pairs.
    pub resolutions: Vec<(usize, usize)>,
    pub solvers: Vec<Solver>,
    pub seeds: Vec<u64>,
    pub n_trajectories: usize,
    /// Settings of the reference solve; its `fine_factor` sets the truth oversampling.
    pub truth_config: SolveConfig,
    pub options: EvalOptions,
}

/// One report per cell, ordered by resolution, then solver, then seed.
/// Truth for each `(resolution, seed)` is generated once, block averaged to the
/// evaluation grid, and shared by all solvers.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<EvalReport>> {
    for s in &spec.solvers {
        if let Solver::MpPde { label, model: None } = s {
            return Err(Error::MissingCheckpoint(label.clone()));
        }
    }
    let mut reports = Vec::new();
    for &(n_t, n_x) in &spec.resolutions {
        let grid = Grid::new(n_x, n_t, spec.preset_config.domain_length, spec.preset_config.t_end)?;
        let truths = spec
            .seeds
            .iter()
            .map(|&seed| {
                generate_dataset_with(spec.preset, &spec.preset_config, spec.n_trajectories, &grid, seed, &spec.truth_config)
            })
            .collect::<Result<Vec<_>>>()?;
        for solver in &spec.solvers {
            for truth in &truths {
                reports.push(evaluate_set(truth, solver, &spec.options)?);
            }
        }
    }
    Ok(reports)
}

/// Seed-aggregated statistics of one `(preset, resolution, solver)` group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub preset: String,
    pub n_t: usize,
    pub n_x: usize,
    pub solver: String,
    pub seeds: Vec<u64>,
    pub acc_error: Stats,
    pub survival_time: Stats,
    pub runtime_ms: Stats,
}

/// Groups reports by everything but the seed, keeping first-appearance order.
pub fn aggregate_over_seeds(reports: &[EvalReport]) -> Vec<Aggregate> {
    let mut groups: Vec<(String, usize, usize, String, Vec<&EvalReport>)> = Vec::new();
    for r in reports {
        match groups.iter_mut().find(|g| g.0 == r.preset && g.1 == r.n_t && g.2 == r.n_x && g.3 == r.solver) {
            Some(g) => g.4.push(r),
            None => groups.push((r.preset.clone(), r.n_t, r.n_x, r.solver.clone(), vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|(preset, n_t, n_x, solver, rs)| Aggregate {
            preset,
            n_t,
            n_x,
            solver,
            seeds: rs.iter().map(|r| r.seed).collect(),
            acc_error: Stats::of(rs.iter().map(|r| r.accumulated_error.mean)),
            survival_time: Stats::of(rs.iter().map(|r| r.survival_time.mean)),
            runtime_ms: Stats::of(rs.iter().map(|r| r.runtime_ms.mean)),
        })
        .collect()
}
