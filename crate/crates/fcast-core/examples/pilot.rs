//! Scratch probe: test-segment R^2 ceiling, transformed-feature oracle, tiny nets.

use fcast_core::dataset::{monthly_standardize, split_by_ratio};
use fcast_core::linear::fit_ols;
use fcast_core::nn::{fit_mlp, MlpConfig, Objective};
use fcast_core::pipeline::prepare_window;
use fcast_core::simgen::{oracle_design, simulate_dgp, targets, DgpConfig};
use ndarray::s;

fn main() -> anyhow::Result<()> {
    let dgp = DgpConfig { model: 2, t_days: 3600, p_c: 50, p_x: 2, seed: 2000, ..Default::default() };
    let (panel, truth) = simulate_dgp(&dgp)?;
    let std_panel = monthly_standardize(&panel)?;
    let plan = split_by_ratio(&panel, (7, 2, 1))?;
    let w = &plan.windows[0];

    let y = targets(&panel);
    let ybar = y.slice(s![0..w.val.end]).mean().unwrap();
    let y_te = y.slice(s![w.test.clone()]).to_owned();
    let den: f64 = y_te.iter().map(|v| (v - ybar) * (v - ybar)).sum();

    // Ceiling: forecast with the true conditional mean f on test rows.
    let f = ndarray::Array1::from(truth.f.clone());
    let f_te = f.slice(s![w.test.clone()]);
    let num: f64 = y_te.iter().zip(f_te.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    println!("true-f ceiling r2 on test: {:.4}", 1.0 - num / den);

    // Oracle OLS on transformed features (natural y, train rows only).
    let od = oracle_design(&panel, 2);
    let x_tr = od.slice(s![w.train.clone(), ..]).to_owned();
    let y_tr = y.slice(s![w.train.clone()]).to_owned();
    let fit = fit_ols(&x_tr, &y_tr)?;
    let pr = fit.predict(&od.slice(s![w.test.clone(), ..]).to_owned());
    let num: f64 = y_te.iter().zip(pr.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    println!("transformed-oracle OLS r2: {:.4}", 1.0 - num / den);

    // Tiny single-hidden-layer nets on the full monthly-standardized panel.
    let data = prepare_window(&std_panel, w);
    for widths in [vec![5usize], vec![10], vec![10, 5]] {
        for &lr in &[0.01, 0.001] {
            for &drop in &[0.0, 0.2] {
                let cfg = MlpConfig {
                    widths: widths.clone(),
                    l1: 1e-4,
                    lr,
                    max_epochs: 300,
                    patience: 40,
                    n_seeds: 4,
                    seed: 7,
                    dropout: drop,
                    objective: Objective::SquaredError,
                    ..Default::default()
                };
                let fit = fit_mlp(&data.x_train, &data.yp_train, &data.x_val, &data.yp_val, &cfg)?;
                let te = fit.predict(&data.x_test)?.mapv(|v| v / 100.0);
                let num: f64 = y_te.iter().zip(te.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                let be: Vec<usize> = fit.members.iter().map(|m| m.best_epoch).collect();
                println!(
                    "tiny net w={widths:?} lr={lr} drop={drop}: r2={:+.4} best={be:?}",
                    1.0 - num / den
                );
            }
        }
    }
    Ok(())
}
