#![allow(dead_code)]

use mppde_core::classical::{semidiscrete_rhs, ssprk3_step};
use mppde_core::pde::{ForcingTerm, PdeParams};
use mppde_core::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn rel_err(a: f64, f: f64) -> f64 {
    (a - f).abs() / a.abs().max(f.abs()).max(1e-4)
}

/// Largest relative error between the tape gradient and central differences
/// of `sum(f(inputs) * r)`, with a fixed random `r`.
pub fn max_grad_error<F>(inputs: &[Tensor], seed: u64, f: F) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let out_shape = {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        f(&tape, &vars).shape()
    };
    let weights = random_tensor(&mut rng(seed ^ 0x5eed), &out_shape);
    let loss_of = |xs: &[Tensor]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let w = tape.constant(weights.clone());
        f(&tape, &vars).mul(w).unwrap().sum().value().item().unwrap()
    };

    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let w = tape.constant(weights.clone());
    let loss = f(&tape, &vars).mul(w).unwrap().sum();
    let grads = tape.backward(loss).unwrap();

    let mut worst = 0.0f64;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zero(*v);
        for j in 0..inputs[i].numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic.data()[j], fd));
        }
    }
    worst
}

/// Exact inviscid Burgers `u_t + (alpha u^2)_x = 0` from `u0 = a sin(2 pi x / l)`
/// before the shock: `u = u0(x - 2 alpha u t)`, solved by Newton iteration.
pub fn burgers_exact(x: f64, t: f64, alpha: f64, a: f64, l: f64) -> f64 {
    let k = std::f64::consts::TAU / l;
    let mut u = a * (k * x).sin();
    for _ in 0..100 {
        let xi = x - 2.0 * alpha * u * t;
        let g = u - a * (k * xi).sin();
        let dg = 1.0 + a * k * (k * xi).cos() * 2.0 * alpha * t;
        let step = g / dg;
        u -= step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    u
}

/// Cell averages of `f` by 6-point Gauss-Legendre quadrature per cell.
pub fn cell_averages(n: usize, l: f64, f: impl Fn(f64) -> f64) -> Vec<f64> {
    const NODES: [f64; 6] = [
        -0.932_469_514_203_152,
        -0.661_209_386_466_264_5,
        -0.238_619_186_083_196_9,
        0.238_619_186_083_196_9,
        0.661_209_386_466_264_5,
        0.932_469_514_203_152,
    ];
    const WEIGHTS: [f64; 6] = [
        0.171_324_492_379_170_3,
        0.360_761_573_048_138_6,
        0.467_913_934_572_691_1,
        0.467_913_934_572_691_1,
        0.360_761_573_048_138_6,
        0.171_324_492_379_170_3,
    ];
    let dx = l / n as f64;
    (0..n)
        .map(|i| {
            let c = (i as f64 + 0.5) * dx;
            NODES.iter().zip(WEIGHTS).map(|(z, w)| w * f(c + 0.5 * dx * z)).sum::<f64>() / 2.0
        })
        .collect()
}

/// L1 cell-average error of a fixed-step solve of the Burgers problem above, with `dt = c dx^(5/3)`.
pub fn burgers_l1_error(n: usize, t_end: f64) -> f64 {
    let (alpha, a) = (0.5, 1.0);
    let l = 16.0;
    let params = PdeParams::periodic(alpha, 0.0, 0.0, l).unwrap();
    let dx = l / n as f64;
    let steps = (t_end / (0.5 * dx.powf(5.0 / 3.0))).ceil() as usize;
    let dt = t_end / steps as f64;
    let mut u = cell_averages(n, l, |x| burgers_exact(x, 0.0, alpha, a, l));
    let zero = ForcingTerm::zero();
    for s in 0..steps {
        u = ssprk3_step(&u, s as f64 * dt, dt, |v, t| semidiscrete_rhs(v, t, &params, &zero, dx)).unwrap();
    }
    let exact = cell_averages(n, l, |x| burgers_exact(x, t_end, alpha, a, l));
    u.iter().zip(&exact).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64
}
