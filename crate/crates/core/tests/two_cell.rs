use cbf::power::nested_solve;
use cbf::two_cell::{feasibility_two_cell, solve_two_cell, TwoCellCase};
use cbf::SystemConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_bounded(rng: &mut ChaCha8Rng) -> SystemConfig {
    loop {
        let cfg = SystemConfig {
            cells: 2,
            beta: vec![rng.gen_range(0.05..0.9), rng.gen_range(0.05..0.9)],
            eps: vec![
                vec![rng.gen_range(0.5..2.0), rng.gen_range(0.05..1.0)],
                vec![rng.gen_range(0.05..1.0), rng.gen_range(0.5..2.0)],
            ],
            gamma: vec![rng.gen_range(0.5..8.0), rng.gen_range(0.5..8.0)],
            sigma2: 1.0,
            p_budget: 10.0,
        };
        if cfg.cell_margin().iter().all(|&c| c > 0.05)
            && feasibility_two_cell(&cfg)
                .map(|f| f.is_bounded())
                .unwrap_or(false)
        {
            return cfg;
        }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

#[test]
fn closed_form_matches_general_solver() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut cases = std::collections::HashMap::new();
    for _ in 0..200 {
        let cfg = random_bounded(&mut rng);
        let closed = solve_two_cell(&cfg).unwrap();
        *cases.entry(format!("{:?}", closed.case)).or_insert(0) += 1;
        let general = nested_solve(&cfg).unwrap();
        let top = general.top();
        let scale = closed.lambda[0].max(closed.lambda[1]);
        for k in 0..2 {
            let (a, b) = (closed.lambda[k], top.dual.lambda[k]);
            assert!(
                (a - b).abs() <= 1e-6 * scale,
                "{cfg:?}\n{closed:?}\n{top:?}"
            );
            let p = general.bs_power(k).unwrap();
            assert!(
                rel(p, closed.power[k]) <= 1e-6,
                "power {k}: {p} vs {closed:?}\n{cfg:?}"
            );
        }
        let zf = matches!(closed.case, TwoCellCase::ZfCell1 | TwoCellCase::ZfCell2);
        assert_eq!(zf, general.levels.len() == 2);
    }
    eprintln!("{cases:?}");
}
