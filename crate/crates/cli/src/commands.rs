use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use mppde_core::classical::{generate_dataset_with, solve_with_initial, trajectory_seeds, TrajectorySet};
use mppde_core::eval::{evaluate_set, run_experiment, EvalOptions, EvalReport, ExperimentSpec, Solver};
use mppde_core::model::MpPdeModel;
use mppde_core::pde::{heat_problem, make_preset_with, ForcingTerm, Grid, PdeParams, Preset};
use mppde_core::training::{train, TrainLog};

use crate::checkpoint::{self, Provenance};
use crate::config::{overlay, Config};
use crate::dataset;
use crate::error::{CliError, Result};
use crate::report::{self, ReportFile};

#[derive(Debug, Parser)]
#[command(name = "mppde", version, about = "Classical and message-passing solvers for 1D conservation laws")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "MPPDE_THREADS")]
    pub threads: Option<usize>,

    /// TOML file overriding the built-in defaults; flags override the file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a preset dataset with the classical solver.
    GenData(GenDataArgs),
    /// Solve a single problem with the classical solver.
    Solve(SolveArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Evaluate solvers against truth data.
    Eval(EvalArgs),
    /// Evaluate several solvers and print a side-by-side table.
    Compare(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub n_t: Option<usize>,
    #[arg(long)]
    pub n_x: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SolverFlags {
    #[arg(long)]
    pub cfl: Option<f64>,
    #[arg(long)]
    pub fine_factor: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub dt_max: Option<f64>,
}

impl SolverFlags {
    fn apply(&self, c: &mut Config) {
        overlay(&mut c.solver.cfl_number, self.cfl);
        overlay(&mut c.solver.fine_factor, self.fine_factor);
        overlay(&mut c.solver.max_steps, self.max_steps);
        overlay(&mut c.solver.dt_max, self.dt_max);
    }
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub n_traj: Option<usize>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub solver: SolverFlags,
    /// Output stem; `.json` and `.bin` are written next to each other.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SolvePreset {
    E1,
    E2,
    E3,
    /// Pure diffusion of a single sine mode.
    Heat,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long, value_enum, default_value = "e1")]
    pub preset: SolvePreset,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Diffusion coefficient; 0.1 for the heat problem unless given.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Drop the source term and, with it, the initial state it induces.
    #[arg(long)]
    pub zero_forcing: bool,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub solver: SolverFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset stem or metadata file.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Epoch log (JSON lines); defaults to the checkpoint path with `.log.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub pushforward: Option<bool>,
    #[arg(long)]
    pub max_grad_norm: Option<f64>,
    #[arg(long)]
    pub samples_per_trajectory: Option<usize>,
    /// Temporal bundle size `K`.
    #[arg(long)]
    pub bundle_size: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub radius: Option<usize>,
    #[arg(long)]
    pub decoder_channels: Option<usize>,
    #[arg(long)]
    pub decoder_kernel: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ClassicalSolver {
    Weno5,
    Truth,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Trained model; may be repeated.
    #[arg(long)]
    pub checkpoint: Vec<PathBuf>,
    /// Non-neural solver; may be repeated.
    #[arg(long, value_enum)]
    pub solver: Vec<ClassicalSolver>,
    /// Existing dataset to use as truth instead of generating one.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub n_t: Option<usize>,
    /// Spatial resolutions to sweep.
    #[arg(long, value_delimiter = ',')]
    pub n_x: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub n_traj: Option<usize>,
    /// Spatial MSE that ends survival.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub weno_fine_factor: Option<usize>,
    /// Oversampling of generated truth.
    #[arg(long)]
    pub truth_fine_factor: Option<usize>,
    /// CSV report.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON report; defaults to the CSV path with `.json`.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot size thread pool: {e}")))?;
    }
    let config = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::GenData(a) => gen_data(config, &a),
        Command::Solve(a) => solve(config, &a),
        Command::Train(a) => train_cmd(config, &a),
        Command::Eval(a) => eval(config, &a, false),
        Command::Compare(a) => eval(config, &a, true),
    }
}

fn grid_for(c: &Config, n_t: usize, n_x: usize) -> Result<Grid> {
    Ok(Grid::new(n_x, n_t, c.preset.domain_length, c.preset.t_end)?)
}

fn report_saved(meta: &dataset::DatasetMeta, path: &Path) {
    let (json, _) = dataset::paths(path);
    println!("wrote {} ({} trajectories, {} bytes)", json.display(), meta.trajectories.len(), meta.payload.bytes);
}

fn gen_data(mut c: Config, a: &GenDataArgs) -> Result<()> {
    overlay(&mut c.data.preset, a.preset);
    overlay(&mut c.data.n_traj, a.n_traj);
    overlay(&mut c.data.n_t, a.grid.n_t);
    overlay(&mut c.data.n_x, a.grid.n_x);
    overlay(&mut c.data.seed, a.grid.seed);
    a.solver.apply(&mut c);
    let grid = grid_for(&c, c.data.n_t, c.data.n_x)?;
    let set = generate_dataset_with(c.data.preset, &c.preset, c.data.n_traj, &grid, c.data.seed, &c.solver)?;
    let meta = dataset::save(&set, &a.out, c.to_json())?;
    report_saved(&meta, &a.out);
    Ok(())
}

fn solve(mut c: Config, a: &SolveArgs) -> Result<()> {
    overlay(&mut c.data.n_t, a.grid.n_t);
    overlay(&mut c.data.n_x, a.grid.n_x);
    overlay(&mut c.data.seed, a.grid.seed);
    a.solver.apply(&mut c);
    let l = c.preset.domain_length;
    let (label, preset, base, mut forcing, mut initial) = match a.preset {
        SolvePreset::Heat => {
            let (p, init) = heat_problem(a.beta.unwrap_or(0.1), l)?;
            ("heat".to_string(), None, p, ForcingTerm::zero(), init)
        }
        SolvePreset::E1 | SolvePreset::E2 | SolvePreset::E3 => {
            let preset = match a.preset {
                SolvePreset::E1 => Preset::E1,
                SolvePreset::E2 => Preset::E2,
                _ => Preset::E3,
            };
            c.data.preset = preset;
            let seed = trajectory_seeds(c.data.seed, 1)[0];
            let (p, f) = make_preset_with(preset, seed, &c.preset)?;
            (preset.name().to_string(), Some(preset), p, f.clone(), f)
        }
    };
    let params = PdeParams::new(
        a.alpha.unwrap_or(base.alpha()),
        a.beta.unwrap_or(base.beta()),
        a.gamma.unwrap_or(base.gamma()),
        l,
        base.boundary(),
    )?;
    if a.zero_forcing {
        forcing = ForcingTerm::zero();
        initial = ForcingTerm::zero();
    }
    let overridden = params != base || a.zero_forcing;
    let grid = grid_for(&c, c.data.n_t, c.data.n_x)?;
    let traj = solve_with_initial(&params, &forcing, &initial, &grid, &c.solver)
        .map_err(|e| mppde_core::Error::Trajectory { index: 0, source: Box::new(e) })?;
    let set = TrajectorySet {
        label: if overridden { format!("{label}-custom") } else { label },
        preset: preset.filter(|_| !overridden),
        preset_config: preset.map(|_| c.preset.clone()),
        seed: c.data.seed,
        grid,
        solve_config: c.solver.clone(),
        trajectories: vec![traj],
    };
    let meta = dataset::save(&set, &a.out, c.to_json())?;
    report_saved(&meta, &a.out);
    Ok(())
}

fn default_log_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("log.jsonl")
}

fn train_cmd(mut c: Config, a: &TrainArgs) -> Result<()> {
    let t = &mut c.train;
    overlay(&mut t.epochs, a.epochs);
    overlay(&mut t.batch_size, a.batch_size);
    overlay(&mut t.learning_rate, a.lr);
    overlay(&mut t.seed, a.seed);
    overlay(&mut t.unroll_for_pushforward, a.pushforward);
    overlay(&mut t.max_grad_norm, a.max_grad_norm);
    overlay(&mut t.samples_per_trajectory, a.samples_per_trajectory);
    let m = &mut c.model;
    overlay(&mut m.bundle_size, a.bundle_size);
    overlay(&mut m.num_layers, a.layers);
    overlay(&mut m.hidden_dim, a.hidden);
    overlay(&mut m.neighborhood_radius, a.radius);
    overlay(&mut m.decoder_channels, a.decoder_channels);
    overlay(&mut m.decoder_kernel, a.decoder_kernel);

    let (set, meta) = dataset::load(&a.data)?;
    let k = c.model.bundle_size;
    let bundles = if c.train.unroll_for_pushforward { 2 } else { 1 };
    let needed = (bundles + 1) * k;
    if set.grid.n_t < needed {
        return Err(CliError::Usage(format!(
            "bundle size K={k} is incompatible with dataset n_t={}: training needs n_t >= {needed}",
            set.grid.n_t
        )));
    }
    let mut model = MpPdeModel::new(c.model.clone(), c.train.seed)?;
    let log = train(&mut model, &set, &c.train)?;
    let provenance = Provenance {
        dataset_sha256: meta.payload.sha256.clone(),
        seed: c.train.seed,
        epochs: c.train.epochs,
        config: c.to_json(),
    };
    checkpoint::save(&model, provenance, &a.out)?;
    let log_path = a.log.clone().unwrap_or_else(|| default_log_path(&a.out));
    fs::write(&log_path, log_lines(&log)).map_err(|e| CliError::io(&log_path, e))?;
    match log.epochs.last() {
        Some(e) => println!("trained {} epochs, final loss {:.6e}, wrote {}", log.epochs.len(), e.total, a.out.display()),
        None => println!("trained 0 epochs, wrote {}", a.out.display()),
    }
    Ok(())
}

pub fn log_lines(log: &TrainLog) -> String {
    log.epochs.iter().map(|e| serde_json::to_string(e).expect("log serializes") + "\n").collect()
}

fn solvers(a: &EvalArgs, c: &Config) -> Result<Vec<Solver>> {
    let mut out: Vec<Solver> = a
        .solver
        .iter()
        .map(|s| match s {
            ClassicalSolver::Weno5 => Solver::Weno5 { fine_factor: c.eval.weno_fine_factor },
            ClassicalSolver::Truth => Solver::Truth,
        })
        .collect();
    for path in &a.checkpoint {
        let label = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        let model = checkpoint::load(path)?.map(|(m, _)| Box::new(m));
        if model.is_none() {
            return Err(mppde_core::Error::MissingCheckpoint(path.display().to_string()).into());
        }
        out.push(Solver::MpPde { label, model });
    }
    if out.is_empty() {
        return Err(CliError::Usage("no solver given: use --solver and/or --checkpoint".into()));
    }
    Ok(out)
}

fn eval(mut c: Config, a: &EvalArgs, compare: bool) -> Result<()> {
    overlay(&mut c.eval.threshold, a.threshold);
    overlay(&mut c.eval.repeats, a.repeats);
    overlay(&mut c.eval.weno_fine_factor, a.weno_fine_factor);
    overlay(&mut c.solver.fine_factor, a.truth_fine_factor);
    let generation_flags = a.preset.is_some()
        || a.n_t.is_some()
        || a.n_x.is_some()
        || a.seeds.is_some()
        || a.n_traj.is_some()
        || a.truth_fine_factor.is_some();
    if a.truth.is_some() && generation_flags {
        return Err(CliError::Usage(
            "--truth cannot be combined with --preset, --n-t, --n-x, --seeds, --n-traj or --truth-fine-factor".into(),
        ));
    }
    overlay(&mut c.data.preset, a.preset);
    overlay(&mut c.eval.n_t, a.n_t);
    overlay(&mut c.eval.n_x, a.n_x.clone());
    overlay(&mut c.eval.seeds, a.seeds.clone());
    overlay(&mut c.eval.n_traj, a.n_traj);
    if !(c.eval.threshold > 0.0) {
        return Err(CliError::Usage(format!("threshold must be positive, got {}", c.eval.threshold)));
    }
    let solvers = solvers(a, &c)?;
    if compare && solvers.len() < 2 {
        return Err(CliError::Usage("compare needs at least two solvers".into()));
    }
    let options = EvalOptions { threshold: c.eval.threshold, repeats: c.eval.repeats, solve_config: c.solver.clone() };
    let reports: Vec<EvalReport> = match &a.truth {
        Some(path) => {
            let (set, _) = dataset::load(path)?;
            solvers.iter().map(|s| evaluate_set(&set, s, &options)).collect::<mppde_core::Result<_>>()?
        }
        None => {
            if c.eval.n_x.is_empty() || c.eval.seeds.is_empty() {
                return Err(CliError::Usage("need at least one n_x and one seed".into()));
            }
            let spec = ExperimentSpec {
                preset: c.data.preset,
                preset_config: c.preset.clone(),
                resolutions: c.eval.n_x.iter().map(|&n| (c.eval.n_t, n)).collect(),
                solvers,
                seeds: c.eval.seeds.clone(),
                n_trajectories: c.eval.n_traj,
                truth_config: c.solver.clone(),
                options,
            };
            run_experiment(&spec)?
        }
    };
    let file = ReportFile::new(reports, c.to_json());
    let json = a.json.clone().unwrap_or_else(|| a.out.with_extension("json"));
    report::write(&file, &a.out, &json)?;
    if compare {
        print!("{}", comparison_table(&file));
    }
    println!("wrote {} ({} rows) and {}", a.out.display(), file.reports.len(), json.display());
    Ok(())
}

/// Seed-aggregated metrics, one line per `(resolution, solver)`.
pub fn comparison_table(file: &ReportFile) -> String {
    let mut s = format!(
        "{:<8}{:>6}{:>6}  {:<16}{:>14}{:>14}{:>12}\n",
        "preset", "n_t", "n_x", "solver", "acc_error", "survival", "runtime_ms"
    );
    for g in &file.aggregates {
        s += &format!(
            "{:<8}{:>6}{:>6}  {:<16}{:>14.4e}{:>14.3}{:>12.2}\n",
            g.preset, g.n_t, g.n_x, g.solver, g.acc_error.mean, g.survival_time.mean, g.runtime_ms.mean
        );
    }
    s
}
