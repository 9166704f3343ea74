use ftl_wave::dde::{solve_backward, SolveOptions};
use ftl_wave::rates;
use ftl_wave::sim::{simulate, LeaderRule, Platoon, SimOptions};
use ftl_wave::{ModelParams, RightTail};

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn orders(levels: &[Vec<f64>]) -> Vec<f64> {
    let d: Vec<f64> = levels.windows(2).map(|w| max_diff(&w[0], &w[1])).collect();
    d.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

#[test]
fn platoon_integrator_is_fourth_order() {
    let p = ModelParams::linear(0.5, 1.0).unwrap();
    let z: Vec<f64> = (0..30)
        .map(|i| 1.2 * i as f64 + 0.3 * (0.7 * i as f64).sin())
        .collect();
    for leader in [LeaderRule::ConstantDensity(0.6), LeaderRule::Frozen] {
        let platoon = Platoon::new(z.clone(), p.clone(), leader).unwrap();
        let levels: Vec<Vec<f64>> = (0..3)
            .map(|k| {
                simulate(&platoon, SimOptions::new(0.05 / 2f64.powi(k), 5.0))
                    .unwrap()
                    .positions
                    .pop()
                    .unwrap()
            })
            .collect();
        for o in orders(&levels) {
            assert!((3.5..=4.5).contains(&o), "{o}");
        }
    }
}

#[test]
fn profile_solver_is_fourth_order() {
    let p = ModelParams::linear(1.0, 1.0).unwrap();
    let tail = RightTail::new(0.9, 0.5, rates::lambda_plus(&p, 0.9).unwrap(), 0.0);
    let xs: Vec<f64> = (0..=40).map(|i| -5.0 + 0.125 * i as f64).collect();
    let levels: Vec<Vec<f64>> = (0..4)
        .map(|k| {
            let opts = SolveOptions {
                h: 1.0 / (64.0 * 2f64.powi(k)),
                x_min: -6.0,
                plateau_tol: 0.0,
            };
            let (c, _) = solve_backward(&p, tail, opts).unwrap();
            xs.iter().map(|&x| c.evaluate(x)).collect()
        })
        .collect();
    for o in orders(&levels) {
        assert!((3.5..=4.5).contains(&o), "{o}");
    }
}
