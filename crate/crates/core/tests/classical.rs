mod common;

use common::burgers_l1_error;
use mppde_core::classical::{solve_trajectory, solve_with_initial, ssprk3_step, SolveConfig};
use mppde_core::eval::accumulated_error;
use mppde_core::pde::{initial_condition, make_preset, ForcingTerm, Grid, PdeParams, Preset};
use proptest::prelude::*;

const L: f64 = 16.0;

#[test]
fn weno_burgers_converges_at_fourth_order_or_better() {
    // shock forms at t = L / (2 pi) ~ 2.55
    let errs: Vec<f64> = [64, 128, 256].iter().map(|&n| burgers_l1_error(n, 1.0)).collect();
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order >= 4.0, "errors {errs:?}, order {order}");
    }
}

#[test]
fn rk3_is_third_order_in_time() {
    let err = |dt: f64| {
        let steps = (1.0 / dt).round() as usize;
        let mut u = vec![1.0];
        for s in 0..steps {
            u = ssprk3_step(&u, s as f64 * dt, dt, |v, _| Ok(v.iter().map(|x| -x).collect())).unwrap();
        }
        (u[0] - (-1.0f64).exp()).abs()
    };
    let e: Vec<f64> = [0.1, 0.05, 0.025, 0.0125].iter().map(|&dt| err(dt)).collect();
    for w in e.windows(2) {
        assert!((w[0] / w[1]).log2() >= 2.7, "{e:?}");
    }
}

#[test]
fn unforced_periodic_solve_conserves_mass() {
    let (params, forcing) = make_preset(Preset::E1, 3);
    let grid = Grid::new(64, 50, L, 4.0).unwrap();
    let traj = solve_with_initial(&params, &ForcingTerm::zero(), &forcing, &grid, &SolveConfig::default()).unwrap();
    // row 0 is a point sample; compare against the fine initial state's mass
    let fine = grid.refined(4);
    let m0: f64 = initial_condition(&forcing, &fine).iter().sum::<f64>() * fine.dx();
    for k in 1..grid.n_t {
        assert!((traj.mass(k) - m0).abs() < 1e-8, "step {k}: {} vs {m0}", traj.mass(k));
    }
}

#[test]
fn shocks_stay_finite_and_bounded() {
    let grid = Grid::new(100, 100, L, 4.0).unwrap();
    let cfg = SolveConfig::default();
    for seed in 0..4 {
        let (params, forcing) = make_preset(Preset::E1, seed);
        let traj = solve_trajectory(&params, &forcing, &grid, &cfg).unwrap();
        let u0 = initial_condition(&forcing, &grid.refined(cfg.fine_factor)).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (k, row) in traj.rows().enumerate() {
            assert!(row.iter().all(|v| v.is_finite()));
            let bound = u0 + forcing.bound() * grid.t_point(k) + 1e-6;
            let max = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(max <= bound, "seed {seed} step {k}: {max} > {bound}");
        }
    }
}

#[test]
fn coarse_error_shrinks_with_fine_factor() {
    let (params, forcing) = make_preset(Preset::E1, 11);
    let grid = Grid::new(100, 60, L, 4.0).unwrap();
    let truth = solve_trajectory(&params, &forcing, &grid, &SolveConfig { fine_factor: 4, ..SolveConfig::default() }).unwrap();
    let errs: Vec<f64> = [1, 2]
        .iter()
        .map(|&ff| {
            let t = solve_trajectory(&params, &forcing, &grid, &SolveConfig { fine_factor: ff, ..SolveConfig::default() }).unwrap();
            accumulated_error(&t.u, &truth.u, grid.n_x).unwrap()
        })
        .collect();
    assert!(errs[0] > errs[1] && errs[1] > 0.0, "{errs:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn random_unforced_solves_conserve_mass(seed in 0u64..1000, beta in 0.0f64..0.2, gamma in 0.0f64..0.5) {
        let (p, f) = make_preset(Preset::E3, seed);
        let params = PdeParams::periodic(p.alpha(), beta, gamma, L).unwrap();
        let grid = Grid::new(24, 6, L, 0.5).unwrap();
        let cfg = SolveConfig { fine_factor: 1, ..SolveConfig::default() };
        let traj = solve_with_initial(&params, &ForcingTerm::zero(), &f, &grid, &cfg).unwrap();
        for k in 1..grid.n_t {
            prop_assert!((traj.mass(k) - traj.mass(0)).abs() < 1e-8);
        }
    }
}
