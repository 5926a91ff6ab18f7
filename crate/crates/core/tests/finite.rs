use cbf::finite::beamform::compute_sinr;
use cbf::finite::dual::{finite_dual_solve, finite_power_alloc, FiniteDualOptions, FiniteProblem};
use cbf::finite::experiments::{run_avg_rate_region, RegionMode};
use cbf::finite::{draw_channels, power_control_only, PowerControl};
use cbf::power::nested_solve;
use cbf::SystemConfig;
use proptest::prelude::*;

fn two_cell(gamma: [f64; 2]) -> SystemConfig {
    SystemConfig {
        cells: 2,
        beta: vec![0.5, 0.75],
        eps: vec![vec![2.1, 0.6], vec![0.8, 1.6]],
        gamma: gamma.to_vec(),
        sigma2: 1.0,
        p_budget: 10.0,
    }
}

#[test]
fn finite_multipliers_approach_large_system() {
    let cfg = two_cell([1.5, 1.2]);
    let ls = nested_solve(&cfg).unwrap();
    let lambda = &ls.top().dual.lambda;
    let mut mean = [0.0; 2];
    let draws = 4;
    for d in 0..draws {
        let ch = draw_channels(&cfg, 64, &[32, 48], 17, d).unwrap();
        let prob = FiniteProblem::new(ch, cfg.gamma.clone(), 1.0);
        let sol = finite_dual_solve(&prob, &FiniteDualOptions::default()).unwrap();
        for k in 0..2 {
            mean[k] +=
                sol.lambda[k].iter().sum::<f64>() / sol.lambda[k].len() as f64 / draws as f64;
        }
    }
    for k in 0..2 {
        assert!(
            (mean[k] / lambda[k] - 1.0).abs() < 0.1,
            "cell {k}: {} vs {}",
            mean[k],
            lambda[k]
        );
    }
}

#[test]
fn large_system_beamformers_track_boundary_at_large_nt() {
    let cfg = two_cell([1.0, 1.0]);
    let rows = run_avg_rate_region(&cfg, 128, &[64, 96], 4, 3, RegionMode::Ls, 3).unwrap();
    for r in &rows {
        for k in 0..2 {
            let target = r.alpha[k] * r.ls_rate;
            assert!(
                (r.mean_rates[k] - target).abs() <= 0.05 * r.ls_rate,
                "{r:?}"
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sinr_is_invariant_to_joint_scaling(seed in 0u64..1000, scale in 0.1f64..10.0) {
        let cfg = two_cell([1.5, 1.2]);
        let ch = draw_channels(&cfg, 4, &[2, 3], seed, 0).unwrap();
        let prob = FiniteProblem::new(ch.clone(), cfg.gamma.clone(), 1.0);
        let sol = finite_dual_solve(&prob, &FiniteDualOptions::default()).unwrap();
        let w = finite_power_alloc(&prob, &sol).unwrap().beamformers();
        let mut scaled = w.clone();
        for cell in &mut scaled.w {
            for v in cell {
                for x in v.iter_mut() {
                    *x *= scale.sqrt();
                }
            }
        }
        let a = compute_sinr(&ch, &w, 1.0);
        let b = compute_sinr(&ch, &scaled, scale);
        for k in 0..2 {
            for u in 0..ch.users[k] {
                prop_assert!((a[k][u] - b[k][u]).abs() <= 1e-10 * a[k][u]);
            }
        }
    }

    #[test]
    fn power_control_budget_is_monotone(seed in 0u64..1000, budget in 0.01f64..100.0) {
        let cfg = two_cell([1.5, 1.2]);
        let ch = draw_channels(&cfg, 4, &[2, 3], seed, 1).unwrap();
        let prob = FiniteProblem::new(ch.clone(), cfg.gamma.clone(), 1.0);
        let sol = finite_dual_solve(&prob, &FiniteDualOptions::default()).unwrap();
        let dirs = finite_power_alloc(&prob, &sol).unwrap().directions;
        let small = power_control_only(&ch, &dirs, &cfg.gamma, 1.0, budget).unwrap();
        let large = power_control_only(&ch, &dirs, &cfg.gamma, 1.0, 2.0 * budget).unwrap();
        if small.is_feasible() {
            prop_assert!(large.is_feasible());
        }
        if let PowerControl::Feasible { bs_power, .. } = &large {
            prop_assert!(bs_power.iter().all(|&p| p <= 2.0 * budget));
        }
    }
}
