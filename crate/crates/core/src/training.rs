//! One-step and pushforward losses and the Adam training loop.
//!
//! A sample is anchored at step `k`, the last row of its input window
//! `u^{k-K+1..=k}`. Its one-step target is `u^{k+1..=k+K}`; the pushforward
//! target is the bundle after that, `u^{k+K+1..=k+2K}`, reached from the
//! model's own (detached) prediction of the first bundle.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classical::TrajectorySet;
use crate::error::{Error, Result};
use crate::model::{Bound, MpPdeModel};
use crate::pde::Trajectory;
use crate::tensor::{adam_step, clip_grad_norm, AdamState, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub unroll_for_pushforward: bool,
    pub max_grad_norm: f64,
    /// Start indices drawn per trajectory and epoch.
    pub samples_per_trajectory: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 0,
            unroll_for_pushforward: true,
            max_grad_norm: 1.0,
            samples_per_trajectory: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.samples_per_trajectory == 0 {
            return Err(Error::InvalidParameter("batch_size and samples_per_trajectory must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidParameter(format!("learning rate must be >= 0, got {}", self.learning_rate)));
        }
        if self.max_grad_norm.is_nan() || self.max_grad_norm <= 0.0 {
            return Err(Error::InvalidParameter(format!("max_grad_norm must be > 0, got {}", self.max_grad_norm)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub trajectory: usize,
    /// Index of the last input row.
    pub k: usize,
    /// `[K, n_x]`.
    pub window: Tensor,
    pub target: Tensor,
    /// The bundle after `target`, present when the trajectory is long enough.
    pub next_target: Option<Tensor>,
}

fn rows(traj: &Trajectory, first: usize, count: usize) -> Tensor {
    let n = traj.grid.n_x;
    Tensor::new(vec![count, n], traj.u[first * n..(first + count) * n].to_vec()).expect("rows inside trajectory")
}

/// Range of valid anchors `k` for bundle size `bundle`, needing `bundles`
/// target bundles after the window. `None` when the trajectory is too short.
pub fn anchor_range(n_t: usize, bundle: usize, bundles: usize) -> Option<std::ops::RangeInclusive<usize>> {
    let lo = bundle - 1;
    let hi = n_t.checked_sub(1 + bundles * bundle)?;
    (lo <= hi).then_some(lo..=hi)
}

impl TrainSample {
    pub fn new(traj: &Trajectory, trajectory: usize, k: usize, bundle: usize) -> Result<Self> {
        let n_t = traj.grid.n_t;
        if k + 1 < bundle || k + bundle >= n_t {
            return Err(Error::IndexOutOfBounds { index: k, len: n_t });
        }
        let next_target = (k + 2 * bundle < n_t).then(|| rows(traj, k + bundle + 1, bundle));
        Ok(Self {
            trajectory,
            k,
            window: rows(traj, k + 1 - bundle, bundle),
            target: rows(traj, k + 1, bundle),
            next_target,
        })
    }
}

/// Draws `per_trajectory` uniform anchors for every trajectory, then shuffles.
pub fn draw_samples(
    set: &TrajectorySet,
    bundle: usize,
    with_pushforward: bool,
    per_trajectory: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TrainSample>> {
    let bundles = if with_pushforward { 2 } else { 1 };
    let mut out = Vec::with_capacity(set.trajectories.len() * per_trajectory);
    for (i, traj) in set.trajectories.iter().enumerate() {
        let range = anchor_range(traj.grid.n_t, bundle, bundles)
            .ok_or(Error::InsufficientHorizon { n_t: traj.grid.n_t, needed: (bundles + 1) * bundle })?;
        for _ in 0..per_trajectory {
            out.push(TrainSample::new(traj, i, rng.gen_range(range.clone()), bundle)?);
        }
    }
    out.shuffle(rng);
    Ok(out)
}

fn check_batch(batch: &[TrainSample]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    Ok(())
}

fn mean_of<'t>(terms: Vec<Var<'t>>) -> Result<Var<'t>> {
    let n = terms.len() as f64;
    let stacked = Var::concat(&terms.iter().map(|t| t.reshape(&[1])).collect::<Result<Vec<_>>>()?, 0)?;
    Ok(stacked.sum().scale(1.0 / n))
}

/// Batch mean of `MSE(A(window), target)`.
pub fn one_step_loss<'t>(
    model: &MpPdeModel,
    p: &Bound<'t>,
    set: &TrajectorySet,
    batch: &[TrainSample],
) -> Result<Var<'t>> {
    check_batch(batch)?;
    let tape = p.vars[0].tape();
    let mut terms = Vec::with_capacity(batch.len());
    for s in batch {
        let traj = &set.trajectories[s.trajectory];
        let w = tape.constant(s.window.clone());
        let pred = model.forward(p, w, traj.grid.t_point(s.k), &traj.grid, &traj.params)?;
        terms.push(pred.mse(tape.constant(s.target.clone()))?);
    }
    mean_of(terms)
}

/// Batch mean of `MSE(A(stop_grad(A(window))), next_target)`.
pub fn pushforward_loss<'t>(
    model: &MpPdeModel,
    p: &Bound<'t>,
    set: &TrajectorySet,
    batch: &[TrainSample],
) -> Result<Var<'t>> {
    check_batch(batch)?;
    let tape = p.vars[0].tape();
    let k = model.config().bundle_size;
    let mut terms = Vec::with_capacity(batch.len());
    for s in batch {
        let traj = &set.trajectories[s.trajectory];
        let next = s.next_target.clone().ok_or(Error::InsufficientHorizon {
            n_t: traj.grid.n_t,
            needed: s.k + 2 * k + 1,
        })?;
        let noisy = model.predict(&s.window, traj.grid.t_point(s.k), &traj.grid, &traj.params)?;
        let w = tape.constant(noisy);
        let pred = model.forward(p, w, traj.grid.t_point(s.k + k), &traj.grid, &traj.params)?;
        terms.push(pred.mse(tape.constant(next))?);
    }
    mean_of(terms)
}

/// The loss terms of one batch.
pub struct BatchLoss<'t> {
    pub one_step: Var<'t>,
    pub pushforward: Option<Var<'t>>,
    pub total: Var<'t>,
}

/// `one_step + pushforward`, or `one_step` alone when `with_pushforward` is off.
pub fn total_loss<'t>(
    model: &MpPdeModel,
    p: &Bound<'t>,
    set: &TrajectorySet,
    batch: &[TrainSample],
    with_pushforward: bool,
) -> Result<BatchLoss<'t>> {
    let one_step = one_step_loss(model, p, set, batch)?;
    if !with_pushforward {
        return Ok(BatchLoss { one_step, pushforward: None, total: one_step });
    }
    let pf = pushforward_loss(model, p, set, batch)?;
    Ok(BatchLoss { one_step, pushforward: Some(pf), total: one_step.add(pf)? })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub one_step: f64,
    /// Zero when pushforward training is disabled.
    pub pushforward: f64,
    pub total: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

/// Trains in place. Deterministic given the model, dataset and config
/// (apart from `wall_ms`).
pub fn train(model: &mut MpPdeModel, set: &TrajectorySet, config: &TrainConfig) -> Result<TrainLog> {
    config.validate()?;
    let k = model.config().bundle_size;
    for traj in &set.trajectories {
        model.config().check_horizon(traj.grid.n_t)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(model.params(), config.learning_rate);
    let mut log = TrainLog::default();
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let samples = draw_samples(set, k, config.unroll_for_pushforward, config.samples_per_trajectory, &mut rng)?;
        let mut sums = [0.0; 3];
        let mut batches = 0usize;
        for (b, batch) in samples.chunks(config.batch_size).enumerate() {
            let tape = Tape::new();
            let p = model.bind(&tape);
            let loss = total_loss(model, &p, set, batch, config.unroll_for_pushforward)?;
            let total = loss.total.value().item().expect("scalar loss");
            if !total.is_finite() {
                return Err(Error::SolutionBlowup(format!("non-finite loss at epoch {epoch}, batch {b}")));
            }
            sums[0] += loss.one_step.value().item().expect("scalar loss");
            sums[1] += loss.pushforward.map_or(0.0, |v| v.value().item().expect("scalar loss"));
            sums[2] += total;
            batches += 1;

            let grads = tape.backward(loss.total)?;
            let mut g: Vec<Tensor> = p.vars.iter().map(|v| grads.get_or_zero(*v)).collect();
            clip_grad_norm(&mut g, config.max_grad_norm);
            adam_step(model.params_mut(), &g, &mut adam)?;
        }
        let n = batches.max(1) as f64;
        log.epochs.push(EpochLog {
            epoch,
            one_step: sums[0] / n,
            pushforward: sums[1] / n,
            total: sums[2] / n,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(log)
}
