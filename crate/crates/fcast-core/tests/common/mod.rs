//! Shared checks for the oracle-equivalence, invariant, and acceptance
//! suites. Every check returns `Ok(detail)` on success and `Err(reason)` on
//! failure so the acceptance gate can print one line per criterion while the
//! focused suites simply unwrap.

#![allow(dead_code)]

use std::collections::BTreeMap;

use chrono::NaiveDate;
use ndarray::{s, Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use fcast_core::breaks;
use fcast_core::combine::{self, EnsembleWeights};
use fcast_core::econ;
use fcast_core::evaluate::{self, Benchmark, ForecastSet};
use fcast_core::interpret;
use fcast_core::linear::{self, DimRed};
use fcast_core::nn;
use fcast_core::tree;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

fn randn_mat(r: &mut ChaCha8Rng, n: usize, p: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, p), |_| randn(r))
}

fn randn_vec(r: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| randn(r))
}

fn err<T>(msg: String) -> Result<T, String> {
    Err(msg)
}

// ---------------------------------------------------------------------------
// Oracle equivalences
// ---------------------------------------------------------------------------

/// On an orthonormal design (columns centered, (1/n)·xᵀx = I) the lasso
/// coordinate-descent solution must equal the closed-form soft threshold of
/// the per-column covariances, and the intercept must equal the target mean.
pub fn check_lasso_soft_threshold() -> Result<String, String> {
    let mut r = rng(7);
    let n = 48;
    let p = 6;
    let raw = randn_mat(&mut r, n, p);

    // Center, then modified Gram–Schmidt, then rescale so (1/n)‖x_j‖² = 1.
    let mut q: Vec<Array1<f64>> = Vec::with_capacity(p);
    for j in 0..p {
        let col = raw.column(j);
        let m = col.mean().unwrap();
        let mut v = col.to_owned() - m;
        for prev in &q {
            let proj = v.dot(prev);
            v = v - proj * prev;
        }
        let norm = v.dot(&v).sqrt();
        q.push(v / norm);
    }
    let mut x = Array2::<f64>::zeros((n, p));
    let scale = (n as f64).sqrt();
    for (j, col) in q.iter().enumerate() {
        for i in 0..n {
            x[[i, j]] = col[i] * scale;
        }
    }

    let mut y = randn_vec(&mut r, n) * 2.0;
    for i in 0..n {
        y[i] += 0.5 * x[[i, 0]] - 0.3 * x[[i, 3]];
    }
    let ym = y.mean().unwrap();
    let yc = &y - ym;

    let mut worst = 0.0f64;
    for &lambda in &[0.02, 0.06] {
        let fit = linear::fit_penalized(&x, &y, lambda, 1.0, None).map_err(|e| e.to_string())?;
        for j in 0..p {
            let z = x.column(j).dot(&yc) / n as f64;
            let expect = z.signum() * (z.abs() - lambda).max(0.0);
            worst = worst.max((fit.coef[j] - expect).abs());
        }
        worst = worst.max((fit.intercept - ym).abs());
    }
    if worst > 1e-8 {
        return err(format!("soft-threshold mismatch {worst:.3e} > 1e-8"));
    }
    Ok(format!("max |coordinate-descent − soft-threshold| = {worst:.2e}"))
}

/// Principal-component regression keeping every component must reproduce
/// ordinary least squares exactly on a full-rank design.
pub fn check_pcr_full_rank_equals_ols() -> Result<String, String> {
    let mut r = rng(11);
    let n = 60;
    let p = 8;
    let x = randn_mat(&mut r, n, p);
    let beta = randn_vec(&mut r, p);
    let y = x.dot(&beta) + 0.1 * &randn_vec(&mut r, n);

    let ols = linear::fit_ols(&x, &y).map_err(|e| e.to_string())?;
    let pcr = linear::fit_dimred(&x, &y, p, DimRed::Pcr).map_err(|e| e.to_string())?;

    let fresh = randn_mat(&mut r, 20, p);
    let po = ols.predict(&fresh);
    let pp = pcr.predict(&fresh);
    let worst = po
        .iter()
        .zip(pp.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    if worst > 1e-8 {
        return err(format!("full-rank PCR vs OLS prediction gap {worst:.3e} > 1e-8"));
    }
    Ok(format!("max |PCR(K=p) − OLS| on fresh rows = {worst:.2e}"))
}

/// RBF within-segment cost, matching the kernel change-point objective:
/// cost[a,b) = len − (1/len)·ΣΣ exp(−γ(y_i−y_j)²).
fn rbf_cost_table(y: &[f64], gamma: f64) -> Vec<Vec<f64>> {
    let n = y.len();
    let mut cost = vec![vec![0.0; n + 1]; n + 1];
    for a in 0..n {
        for b in (a + 1)..=n {
            let len = (b - a) as f64;
            let mut s = 0.0;
            for i in a..b {
                for j in a..b {
                    s += (-gamma * (y[i] - y[j]) * (y[i] - y[j])).exp();
                }
            }
            cost[a][b] = len - s / len;
        }
    }
    cost
}

fn segmentation_objective(
    n: usize,
    bps: &[usize],
    cost: &[Vec<f64>],
    beta: f64,
    min_seg: usize,
) -> Result<f64, String> {
    let mut bounds = vec![0usize];
    bounds.extend_from_slice(bps);
    bounds.push(n);
    let mut obj = 0.0;
    for w in bounds.windows(2) {
        if w[1] <= w[0] || w[1] - w[0] < min_seg {
            return err(format!("segment [{}, {}) violates min length {min_seg}", w[0], w[1]));
        }
        obj += cost[w[0]][w[1]];
    }
    Ok(obj + beta * bps.len() as f64)
}

/// Unpruned optimal-partitioning dynamic program: the exact minimum of
/// Σ segment costs + β·(#breaks) over every feasible segmentation.
fn exhaustive_best(n: usize, cost: &[Vec<f64>], beta: f64, min_seg: usize) -> f64 {
    let inf = f64::INFINITY;
    let mut f = vec![inf; n + 1];
    f[0] = -beta;
    for t in 1..=n {
        for tau in 0..t {
            if t - tau < min_seg || !f[tau].is_finite() {
                continue;
            }
            let cand = f[tau] + beta + cost[tau][t];
            if cand < f[t] {
                f[t] = cand;
            }
        }
    }
    f[n]
}

/// The pruned kernel change-point search must attain exactly the optimum
/// found by exhaustive dynamic programming on every short series.
pub fn check_pelt_matches_exhaustive() -> Result<String, String> {
    let mut r = rng(23);
    let mut worst = 0.0f64;
    for case in 0..200 {
        let n = 4 + (case % 9); // 4..=12
        let min_seg = 1 + (case % 2);
        let shift: f64 = if case % 3 == 0 { 0.0 } else { 2.0 * r.gen::<f64>() - 1.0 };
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let mean = if i >= n / 2 { 2.0 * shift } else { 0.0 };
                mean + 0.7 * randn(&mut r)
            })
            .collect();
        let gamma = breaks::median_heuristic_gamma(&y);
        let beta = if case % 2 == 0 {
            breaks::default_pelt_beta(n)
        } else {
            0.2 + 2.0 * r.gen::<f64>()
        };

        let bps = breaks::pelt_rbf(&y, gamma, beta, min_seg).map_err(|e| e.to_string())?;
        let cost = rbf_cost_table(&y, gamma);
        let got = segmentation_objective(n, &bps, &cost, beta, min_seg)
            .map_err(|e| format!("case {case}: {e}"))?;
        let best = exhaustive_best(n, &cost, beta, min_seg);
        let gap = (got - best).abs();
        if gap > 1e-9 {
            return err(format!(
                "case {case} (n={n}, min_seg={min_seg}): pruned objective {got:.12} vs exhaustive {best:.12}"
            ));
        }
        worst = worst.max(gap);
    }
    Ok(format!("200 series ≤ 12 points: max objective gap = {worst:.2e}"))
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut items: Vec<usize> = (0..k).collect();
    fn heap(items: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
        if k == 1 {
            out.push(items.clone());
            return;
        }
        for i in 0..k {
            heap(items, k - 1, out);
            if k % 2 == 0 {
                items.swap(i, k - 1);
            } else {
                items.swap(0, k - 1);
            }
        }
    }
    heap(&mut items, k, &mut out);
    out
}

/// Exact group Shapley from the coalition table must equal the brute-force
/// average of marginal contributions over all group orderings.
pub fn check_group_shapley_bruteforce() -> Result<String, String> {
    let mut r = rng(31);
    let names: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
    let k = names.len();
    let mut values: BTreeMap<u32, f64> = BTreeMap::new();
    for mask in 0..(1u32 << k) {
        values.insert(mask, r.gen::<f64>());
    }

    let gs = interpret::shapley_group(&names, &values).map_err(|e| e.to_string())?;

    let perms = permutations(k);
    let mut brute = vec![0.0f64; k];
    for perm in &perms {
        let mut mask = 0u32;
        for &g in perm {
            let before = values[&mask];
            mask |= 1 << g;
            brute[g] += values[&mask] - before;
        }
    }
    for b in brute.iter_mut() {
        *b /= perms.len() as f64;
    }

    let mut worst = 0.0f64;
    for g in 0..k {
        worst = worst.max((gs.phi[g] - brute[g]).abs());
    }
    let eff = (gs.phi.iter().sum::<f64>() - (values[&15] - values[&0])).abs();
    if worst > 1e-9 || eff > 1e-9 {
        return err(format!("group Shapley gap {worst:.3e}, efficiency gap {eff:.3e}"));
    }
    Ok(format!("4-group table: max |exact − permutation brute force| = {worst:.2e}"))
}

/// Discounted-MSPE weights must match the direct summation
/// φ_m = Σ_s θ^(T−1−s) e²_{m,s}, w_m ∝ 1/φ_m.
pub fn check_dmspe_direct() -> Result<String, String> {
    let mut r = rng(37);
    let m = 3;
    let t = 12;
    let e2 = Array2::from_shape_fn((m, t), |_| 2.0 * r.gen::<f64>() + 1e-3);

    let mut worst = 0.0f64;
    for &theta in &[0.9, 1.0] {
        let w = combine::dmspe_weights(&e2, theta).map_err(|e| e.to_string())?;
        let mut phi = vec![0.0f64; m];
        for (j, acc) in phi.iter_mut().enumerate() {
            for s in 0..t {
                *acc += theta.powi((t - 1 - s) as i32) * e2[[j, s]];
            }
        }
        let inv_sum: f64 = phi.iter().map(|p| 1.0 / p).sum();
        for j in 0..m {
            let direct = (1.0 / phi[j]) / inv_sum;
            worst = worst.max((w.weights[j] - direct).abs());
        }
    }
    if worst > 1e-12 {
        return err(format!("discounted-MSPE weight gap {worst:.3e} > 1e-12"));
    }
    Ok(format!("θ ∈ {{0.9, 1.0}}: max |weights − direct summation| = {worst:.2e}"))
}

/// With two models and no penalty, the simplex-constrained MSE-optimal
/// weight on model 1 has the closed form
/// clamp(⟨y−p₂, p₁−p₂⟩ / ‖p₁−p₂‖², 0, 1).
pub fn check_two_model_closed_form() -> Result<String, String> {
    let mut r = rng(41);
    let t = 300;
    let y = randn_vec(&mut r, t);
    let p1 = &y + &(0.8 * &randn_vec(&mut r, t));
    let p2 = 0.5 * &y + 0.7 * &randn_vec(&mut r, t);

    let d = &p1 - &p2;
    let raw = (&y - &p2).dot(&d) / d.dot(&d);
    if !(0.05..=0.95).contains(&raw) {
        return err(format!("test construction broken: interior optimum expected, got {raw:.4}"));
    }

    let mut preds = Array2::<f64>::zeros((2, t));
    preds.row_mut(0).assign(&p1);
    preds.row_mut(1).assign(&p2);
    let w = combine::optimize_weights(&preds, &y, Some(0.0), 5, true).map_err(|e| e.to_string())?;
    let gap = (w.weights[0] - raw).abs();
    if gap > 1e-8 {
        return err(format!("two-model weight {:.10} vs closed form {raw:.10} (gap {gap:.3e})", w.weights[0]));
    }
    Ok(format!("|solver − closed form| = {gap:.2e} at interior optimum {raw:.4}"))
}

// ---------------------------------------------------------------------------
// Invariants
// ---------------------------------------------------------------------------

fn assert_simplex(w: &EnsembleWeights, label: &str) -> Result<(), String> {
    if !w.check_simplex() {
        return err(format!("{label}: weights do not sum to 1: {:?}", w.weights));
    }
    if w.weights.iter().any(|&x| x < -1e-12) {
        return err(format!("{label}: negative weight in {:?}", w.weights));
    }
    Ok(())
}

/// Every combination scheme must return weights on the probability simplex.
pub fn check_simplex_feasibility() -> Result<String, String> {
    let mut r = rng(43);
    let mut checked = 0;
    for case in 0..10 {
        let m = 2 + case % 4;
        let t = 40;
        let y = randn_vec(&mut r, t);
        let mut preds = Array2::<f64>::zeros((m, t));
        for j in 0..m {
            let row = &y * (0.5 + r.gen::<f64>()) + randn_vec(&mut r, t);
            preds.row_mut(j).assign(&row);
        }
        let e2 = Array2::from_shape_fn((m, t), |(j, s)| {
            let d = y[s] - preds[[j, s]];
            d * d
        });

        assert_simplex(&combine::equal_weights(m).map_err(|e| e.to_string())?, "equal")?;
        assert_simplex(&combine::dmspe_weights(&e2, 0.9).map_err(|e| e.to_string())?, "dmspe")?;
        assert_simplex(
            &combine::optimize_weights(&preds, &y, Some(0.0), 4, true).map_err(|e| e.to_string())?,
            "opt λ=0",
        )?;
        assert_simplex(
            &combine::optimize_weights(&preds, &y, Some(0.5), 4, true).map_err(|e| e.to_string())?,
            "opt λ=0.5",
        )?;
        assert_simplex(
            &combine::optimize_weights(&preds, &y, None, 4, true).map_err(|e| e.to_string())?,
            "opt λ by CV",
        )?;
        checked += 5;
    }
    Ok(format!("{checked} weight vectors across 10 random problems lie on the simplex"))
}

/// Small synthetic forecast panel with genuine up and down days.
pub fn synth_fs(seed: u64, n_months: usize, month_len: usize) -> ForecastSet {
    let mut r = rng(seed);
    let n = n_months * month_len;
    let mut prices = Vec::with_capacity(n + 1);
    prices.push(100.0);
    let mut returns = Vec::with_capacity(n);
    for _ in 0..n {
        let ret = 0.03 * randn(&mut r);
        returns.push(ret);
        let last = *prices.last().unwrap();
        prices.push(last * ret.exp());
    }
    let start = NaiveDate::from_ymd_opt(2004, 1, 1).unwrap();
    let mut rbar = Vec::with_capacity(n);
    let mut acc = 0.0;
    for (i, &ret) in returns.iter().enumerate() {
        acc += ret;
        rbar.push(acc / (i + 1) as f64);
    }
    let r_prev: Vec<f64> = (0..n)
        .map(|i| if i == 0 { 0.01 } else { returns[i - 1] })
        .collect();
    ForecastSet {
        dates: (0..n).map(|i| start + chrono::Days::new(i as u64)).collect(),
        month_id: (0..n).map(|i| (i / month_len) as u32).collect(),
        r_next: Array1::from_vec(returns.clone()),
        r_prev: Array1::from_vec(r_prev.clone()),
        p_prev: Array1::from_vec(prices[..n].to_vec()),
        p_next: Array1::from_vec(prices[1..=n].to_vec()),
        rbar: Array1::from_vec(rbar),
        ar1: Array1::from_vec(r_prev.iter().map(|v| 0.5 * v).collect()),
        preds: BTreeMap::new(),
    }
}

/// A model that reproduces realized returns must score R² = 1 against every
/// benchmark; a model identical to a benchmark must score R² = 0 against it.
pub fn check_r2_identities() -> Result<String, String> {
    let mut fs = synth_fs(47, 4, 30);
    fs.preds.insert("perfect".into(), fs.r_next.clone());
    fs.preds.insert("meanlike".into(), fs.rbar.clone());
    fs.preds.insert("ar1like".into(), fs.ar1.clone());
    fs.preds.insert("zerolike".into(), Array1::zeros(fs.len()));
    fs.validate().map_err(|e| e.to_string())?;

    let mut worst = 0.0f64;
    for bench in [Benchmark::LagPrice, Benchmark::Ar1, Benchmark::Mean, Benchmark::Zero] {
        let r2 = evaluate::r2_oos(&fs, "perfect", bench, None).map_err(|e| e.to_string())?;
        worst = worst.max((r2 - 1.0).abs());
    }
    for (model, bench) in [
        ("meanlike", Benchmark::Mean),
        ("ar1like", Benchmark::Ar1),
        ("zerolike", Benchmark::Zero),
        ("zerolike", Benchmark::LagPrice),
    ] {
        let r2 = evaluate::r2_oos(&fs, model, bench, None).map_err(|e| e.to_string())?;
        worst = worst.max(r2.abs());
    }
    if worst > 1e-12 {
        return err(format!("R² identity violated by {worst:.3e} > 1e-12"));
    }
    Ok(format!("R²(perfect)=1 and R²(benchmark)=0 within {worst:.2e}"))
}

/// Swapping the two models in the equal-accuracy test must flip the sign of
/// the statistic and leave the two-sided p-value unchanged.
pub fn check_dm_antisymmetry() -> Result<String, String> {
    let mut fs = synth_fs(53, 10, 30);
    let mut r = rng(54);
    let noise_a = randn_vec(&mut r, fs.len());
    let noise_b = randn_vec(&mut r, fs.len());
    fs.preds.insert("a".into(), &fs.r_next + &(0.02 * &noise_a));
    fs.preds.insert("b".into(), &fs.r_next + &(0.03 * &noise_b));

    let mut worst = 0.0f64;
    for monthly in [false, true] {
        let ab = evaluate::dm_test(&fs, "a", "b", monthly, Some(2)).map_err(|e| e.to_string())?;
        let ba = evaluate::dm_test(&fs, "b", "a", monthly, Some(2)).map_err(|e| e.to_string())?;
        worst = worst.max((ab.stat + ba.stat).abs());
        worst = worst.max((ab.p_two_sided - ba.p_two_sided).abs());
        if ab.n_units != ba.n_units {
            return err("unit counts differ between orderings".into());
        }
    }
    if worst > 1e-12 {
        return err(format!("antisymmetry violated by {worst:.3e} > 1e-12"));
    }
    Ok(format!("daily and monthly statistics flip sign exactly (gap {worst:.2e})"))
}

/// Within every day panel the trend-class and performance-class frequencies
/// must each sum to one.
pub fn check_trend_partition() -> Result<String, String> {
    let mut fs = synth_fs(59, 4, 30);
    let mut r = rng(60);
    let pred = &fs.r_next * 0.4 + &(0.02 * &randn_vec(&mut r, fs.len()));
    fs.preds.insert("m".into(), pred);
    let bench = fs.ar1.clone();
    let td = evaluate::trend_decompose(&fs, "m", &bench).map_err(|e| e.to_string())?;

    if td.freq.len() < 3 {
        return err(format!("expected 3 day panels, got {}", td.freq.len()));
    }
    let mut worst = 0.0f64;
    for (panel, (trend_freq, perf_freq)) in &td.freq {
        let ts: f64 = trend_freq.values().sum();
        let ps: f64 = perf_freq.values().sum();
        worst = worst.max((ts - 1.0).abs()).max((ps - 1.0).abs());
        if trend_freq.values().any(|&v| v < 0.0) || perf_freq.values().any(|&v| v < 0.0) {
            return err(format!("negative frequency in panel {panel}"));
        }
    }
    Ok(format!("{} panels partition to 1 within {worst:.2e}", td.freq.len()))
}

fn mask_index(mask: &[bool]) -> usize {
    mask.iter().enumerate().fold(0usize, |acc, (j, &b)| acc | ((b as usize) << j))
}

/// Efficiency, additivity, and the null-player property of the exact
/// Shapley enumeration.
pub fn check_shapley_axioms() -> Result<String, String> {
    let p = 5;
    let full = 1usize << p;
    let mut r = rng(61);
    let u: Vec<f64> = (0..full).map(|_| r.gen::<f64>()).collect();
    let w: Vec<f64> = (0..full).map(|_| r.gen::<f64>()).collect();

    let mut vu = |mask: &[bool]| Ok(u[mask_index(mask)]);
    let su = interpret::shapley_exact(p, &mut vu).map_err(|e| e.to_string())?;
    let mut vw = |mask: &[bool]| Ok(w[mask_index(mask)]);
    let sw = interpret::shapley_exact(p, &mut vw).map_err(|e| e.to_string())?;
    let mut vuw = |mask: &[bool]| {
        let i = mask_index(mask);
        Ok(u[i] + w[i])
    };
    let suw = interpret::shapley_exact(p, &mut vuw).map_err(|e| e.to_string())?;

    let eff = (su.phi.iter().sum::<f64>() - (u[full - 1] - u[0])).abs();
    if eff > 1e-10 {
        return err(format!("efficiency gap {eff:.3e} > 1e-10"));
    }
    let mut add = 0.0f64;
    for j in 0..p {
        add = add.max((suw.phi[j] - su.phi[j] - sw.phi[j]).abs());
    }
    if add > 1e-10 {
        return err(format!("additivity gap {add:.3e} > 1e-10"));
    }

    // Null player: the value ignores feature 3 entirely.
    let mut vnull = |mask: &[bool]| {
        let mut m = mask.to_vec();
        m[3] = false;
        Ok(u[mask_index(&m)])
    };
    let sn = interpret::shapley_exact(p, &mut vnull).map_err(|e| e.to_string())?;
    if sn.phi[3].abs() > 1e-12 {
        return err(format!("null player got φ = {:.3e}", sn.phi[3]));
    }
    Ok(format!(
        "efficiency {eff:.1e}, additivity {add:.1e}, null player |φ| = {:.1e}",
        sn.phi[3].abs()
    ))
}

/// The robust loss and its derivative must be continuous at the threshold
/// and quadratic inside it.
pub fn check_huber_continuity() -> Result<String, String> {
    let mut worst = 0.0f64;
    for &xi in &[0.5, 1.0, 2.3] {
        for sign in [-1.0, 1.0] {
            let eps = 1e-9;
            let lo = tree::huber_loss(sign * (xi - eps), xi);
            let hi = tree::huber_loss(sign * (xi + eps), xi);
            worst = worst.max((hi - lo).abs());
            let at = tree::huber_loss(sign * xi, xi);
            worst = worst.max((at - 0.5 * xi * xi).abs());
            let (g_in, _) = tree::huber_grad_hess(sign * (xi - eps), xi);
            let (g_out, _) = tree::huber_grad_hess(sign * (xi + eps), xi);
            worst = worst.max((g_in - g_out).abs());
        }
    }
    if worst > 1e-8 {
        return err(format!("discontinuity {worst:.3e} > 1e-8 at the threshold"));
    }
    Ok(format!("loss and gradient continuous at ±ξ within {worst:.2e}"))
}

/// Fitted conditional variances must be strictly positive, and the certainty
/// equivalent of the mean-variance portfolio must fall as risk aversion
/// rises when the forecasts carry signal.
pub fn check_garch_positivity_cer_monotone() -> Result<String, String> {
    let eps = econ::simulate_gjr(0.05, 0.05, 0.85, 0.10, 800, 9);
    let fit = econ::fit_gjr_garch(&eps).map_err(|e| e.to_string())?;
    if fit.h.iter().any(|&h| !(h > 0.0)) {
        return err("non-positive conditional variance".into());
    }
    let fc = fit.forecast_next(&eps);
    if !(fc > 0.0) {
        return err(format!("non-positive one-step variance forecast {fc}"));
    }

    let mut r = rng(67);
    let n = 500;
    let realized: Vec<f64> = (0..n).map(|_| 0.03 * randn(&mut r)).collect();
    let forecasts: Vec<f64> = realized.iter().map(|&x| 0.3 * x + 0.002 * randn(&mut r)).collect();
    let variances = vec![9.0e-4; n];
    let risk_free = vec![0.0; n];
    let mut cers = Vec::new();
    for &g in &[1.0, 2.0, 5.0, 10.0] {
        let rep = econ::mv_portfolio(&forecasts, &realized, &variances, &risk_free, g, None)
            .map_err(|e| e.to_string())?;
        if !rep.cer.is_finite() {
            return err(format!("CER not finite at γ={g}"));
        }
        cers.push(rep.cer);
    }
    for k in 1..cers.len() {
        if !(cers[k] < cers[k - 1]) {
            return err(format!("CER not strictly decreasing in risk aversion: {cers:?}"));
        }
    }
    Ok(format!(
        "h > 0 over {} days; CER falls {:.4} → {:.4} as γ rises 1 → 10",
        fit.h.len(),
        cers[0],
        cers[3]
    ))
}

/// Analytic network gradients must match central finite differences on a
/// micro-network, coordinate by coordinate, for both training objectives.
pub fn check_mlp_gradient() -> Result<String, String> {
    let mut r = rng(71);
    let x = randn_mat(&mut r, 8, 3);
    let y = randn_vec(&mut r, 8);
    let mut seed_rng = rng(5);
    let member = nn::MlpMember::init(&[3, 4, 1], true, &mut seed_rng);
    let l1 = 1e-3;

    let mut worst = 0.0f64;
    let mut n_coords = 0usize;
    for objective in [nn::Objective::SquaredError, nn::Objective::AbsoluteError] {
        let (_, grad) = nn::loss_and_grad(&member, &x, &y, l1, objective);
        let ana = grad.flatten();
        let theta = member.params.flatten();
        n_coords = theta.len();
        for i in 0..theta.len() {
            let h = 1e-5 * theta[i].abs().max(1.0);
            let mut plus = member.clone();
            let mut flat = theta.clone();
            flat[i] += h;
            plus.params.set_from_flat(&flat);
            let (fp, _) = nn::loss_and_grad(&plus, &x, &y, l1, objective);
            let mut minus = member.clone();
            flat[i] = theta[i] - h;
            minus.params.set_from_flat(&flat);
            let (fm, _) = nn::loss_and_grad(&minus, &x, &y, l1, objective);
            let num = (fp - fm) / (2.0 * h);
            let rel = (num - ana[i]).abs() / ana[i].abs().max(num.abs()).max(1.0);
            if rel > worst {
                worst = rel;
            }
        }
    }
    if worst > 1e-4 {
        return err(format!("gradient mismatch {worst:.3e} > 1e-4 across {n_coords} coordinates"));
    }
    Ok(format!(
        "{n_coords} coordinates × both objectives on a [3,4,1] batch-norm network: worst gap {worst:.2e}"
    ))
}
