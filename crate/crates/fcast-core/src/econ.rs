//! Economic-value layer: GJR-GARCH conditional variance by Gaussian QMLE,
//! realized-variance proxies from intraday prices, variance-forecast losses
//! (MSE/QLIKE), and mean-variance portfolio weights, utility, and the
//! certainty-equivalent return.

use anyhow::{bail, Result};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Nelder–Mead simplex minimizer (derivative-free), used by the QMLE.
// ---------------------------------------------------------------------------

fn nelder_mead(
    f: &dyn Fn(&[f64]) -> f64,
    x0: &[f64],
    step: &[f64],
    max_iter: usize,
    tol: f64,
) -> (Vec<f64>, f64, bool) {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step[i];
        simplex.push(v);
    }
    let mut fx: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let (a_refl, a_exp, a_con, a_shr) = (1.0, 2.0, 0.5, 0.5);
    let mut converged = false;
    for _ in 0..max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&i, &j| fx[i].partial_cmp(&fx[j]).unwrap());
        let reordered: Vec<Vec<f64>> = order.iter().map(|&i| simplex[i].clone()).collect();
        let refx: Vec<f64> = order.iter().map(|&i| fx[i]).collect();
        simplex = reordered;
        fx = refx;
        if (fx[n] - fx[0]).abs() <= tol * (1.0 + fx[0].abs()) {
            converged = true;
            break;
        }
        let centroid: Vec<f64> =
            (0..n).map(|d| simplex[..n].iter().map(|v| v[d]).sum::<f64>() / n as f64).collect();
        let at = |coef: f64| -> Vec<f64> {
            (0..n).map(|d| centroid[d] + coef * (centroid[d] - simplex[n][d])).collect()
        };
        let xr = at(a_refl);
        let fr = f(&xr);
        if fr < fx[0] {
            let xe = at(a_exp);
            let fe = f(&xe);
            if fe < fr {
                simplex[n] = xe;
                fx[n] = fe;
            } else {
                simplex[n] = xr;
                fx[n] = fr;
            }
        } else if fr < fx[n - 1] {
            simplex[n] = xr;
            fx[n] = fr;
        } else {
            let (xc, fc) = if fr < fx[n] {
                let x = at(a_con);
                let v = f(&x);
                (x, v)
            } else {
                let x = at(-a_con);
                let v = f(&x);
                (x, v)
            };
            if fc < fx[n].min(fr) {
                simplex[n] = xc;
                fx[n] = fc;
            } else {
                for i in 1..=n {
                    for d in 0..n {
                        simplex[i][d] = simplex[0][d] + a_shr * (simplex[i][d] - simplex[0][d]);
                    }
                    fx[i] = f(&simplex[i]);
                }
            }
        }
    }
    let mut best = 0;
    for i in 1..=n {
        if fx[i] < fx[best] {
            best = i;
        }
    }
    (simplex[best].clone(), fx[best], converged)
}

// ---------------------------------------------------------------------------
// GJR-GARCH
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GarchFit {
    pub omega: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Leverage loadings (one per ARCH lag).
    pub gamma_lev: Vec<f64>,
    pub loglik: f64,
    /// Conditional variance of each residual, same length as the input.
    pub h: Vec<f64>,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl GarchFit {
    /// One-step-ahead variance forecast from the end of the sample.
    pub fn forecast_next(&self, eps: &[f64]) -> f64 {
        let p = self.alpha.len();
        let q = self.beta.len();
        let t = eps.len();
        let mut h = self.omega;
        for i in 0..p {
            let e = eps[t - 1 - i];
            h += (self.alpha[i] + if e < 0.0 { self.gamma_lev[i] } else { 0.0 }) * e * e;
        }
        for j in 0..q {
            h += self.beta[j] * self.h[t - 1 - j];
        }
        h
    }
}

/// Conditional-variance recursion: h_t = ω + Σ_i (α_i + γ_i·1{ε<0})ε²_{t−i}
/// + Σ_j β_j h_{t−j}, seeded with h = h0 (and ε² = h0) before the sample.
fn variance_path(
    omega: f64,
    alpha: &[f64],
    beta: &[f64],
    gamma: &[f64],
    eps: &[f64],
    h0: f64,
) -> Vec<f64> {
    let t = eps.len();
    let p = alpha.len();
    let q = beta.len();
    let mut h = vec![0.0; t];
    for k in 0..t {
        let mut v = omega;
        for i in 0..p {
            let (e2, neg) = if k >= i + 1 {
                (eps[k - 1 - i] * eps[k - 1 - i], eps[k - 1 - i] < 0.0)
            } else {
                (h0, false) // pre-sample shocks at their unconditional size
            };
            v += (alpha[i] + if neg { gamma[i] } else { 0.0 }) * e2;
        }
        for j in 0..q {
            v += beta[j] * if k >= j + 1 { h[k - 1 - j] } else { h0 };
        }
        h[k] = v;
    }
    h
}

/// Negative Gaussian log-likelihood (up to the 2π constant kept in full).
fn neg_loglik(omega: f64, alpha: &[f64], beta: &[f64], gamma: &[f64], eps: &[f64], h0: f64) -> f64 {
    let h = variance_path(omega, alpha, beta, gamma, eps, h0);
    let mut nll = 0.0;
    for (e, &ht) in eps.iter().zip(&h) {
        if ht <= 0.0 {
            return f64::INFINITY;
        }
        nll += 0.5 * ((2.0 * std::f64::consts::PI).ln() + ht.ln() + e * e / ht);
    }
    nll
}

fn unpack(x: &[f64], p: usize, q: usize) -> (f64, &[f64], &[f64], &[f64]) {
    (x[0], &x[1..1 + p], &x[1 + p..1 + p + q], &x[1 + p + q..1 + 2 * p + q])
}

/// Stationarity/positivity penalty: ω > 0, α, β, γ ≥ 0, Σα + Σβ + Σγ/2 < 1.
fn constraint_penalty(x: &[f64], p: usize, q: usize) -> f64 {
    let (omega, alpha, beta, gamma) = unpack(x, p, q);
    let mut pen = 0.0;
    if omega <= 0.0 {
        pen += 1.0 - omega;
    }
    for v in alpha.iter().chain(beta).chain(gamma) {
        if *v < 0.0 {
            pen += -v;
        }
    }
    let persist: f64 =
        alpha.iter().sum::<f64>() + beta.iter().sum::<f64>() + gamma.iter().sum::<f64>() / 2.0;
    if persist >= 0.999999 {
        pen += persist - 0.999999;
    }
    pen
}

/// Gaussian QMLE for GJR-GARCH(p, q) via penalized Nelder–Mead, best of
/// five jittered restarts; h₀ = sample variance.
pub fn fit_gjr_garch_pq(eps: &[f64], p: usize, q: usize) -> Result<GarchFit> {
    let t = eps.len();
    if t < 100 {
        bail!("need ≥ 100 residuals, got {t}");
    }
    if eps.iter().any(|e| !e.is_finite()) {
        bail!("non-finite residual");
    }
    if p == 0 || q == 0 || p > 2 || q > 2 {
        bail!("lag orders must be in 1..=2");
    }
    let h0 = crate::linalg::variance(eps);
    let level = crate::linalg::mean(eps).abs();
    if h0 <= 1e-12 * (1.0 + level * level) {
        bail!("degenerate variance: residuals are constant");
    }
    let dim = 1 + 2 * p + q;
    let objective = |x: &[f64]| -> f64 {
        let pen = constraint_penalty(x, p, q);
        if pen > 0.0 {
            return 1e10 * (1.0 + pen);
        }
        let (omega, alpha, beta, gamma) = unpack(x, p, q);
        neg_loglik(omega, alpha, beta, gamma, eps, h0)
    };
    // Start near a persistent, mildly asymmetric spec with the variance
    // target pinning ω.
    let mut x0 = vec![0.0; dim];
    let (a0, b0, g0) = (0.05 / p as f64, 0.85 / q as f64, 0.05 / p as f64);
    x0[0] = h0 * (1.0 - 0.05 - 0.85 - 0.05 / 2.0);
    for i in 0..p {
        x0[1 + i] = a0;
    }
    for j in 0..q {
        x0[1 + p + j] = b0;
    }
    for i in 0..p {
        x0[1 + p + q + i] = g0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x6a52);
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for restart in 0..5 {
        let start: Vec<f64> = if restart == 0 {
            x0.clone()
        } else {
            x0.iter().map(|v| v * (0.4 + 1.2 * rng.gen::<f64>())).collect()
        };
        let step: Vec<f64> = start.iter().map(|v| 0.25 * v.abs().max(1e-4)).collect();
        let (x, fv, conv) = nelder_mead(&objective, &start, &step, 2000, 1e-10);
        let better = match &best {
            None => true,
            Some((_, bf, bc)) => fv < *bf || (!bc && conv && fv < bf + 1e-6),
        };
        if better {
            best = Some((x, fv, conv));
        }
    }
    let (x, fv, converged) = best.unwrap();
    if !converged {
        bail!("QMLE failed to converge over 5 restarts; best log-likelihood {:.6}", -fv);
    }
    let (omega, alpha, beta, gamma) = unpack(&x, p, q);
    let h = variance_path(omega, alpha, beta, gamma, eps, h0);
    if h.iter().any(|&v| v <= 0.0) {
        bail!("conditional variance went non-positive despite constraints");
    }
    Ok(GarchFit {
        omega,
        alpha: alpha.to_vec(),
        beta: beta.to_vec(),
        gamma_lev: gamma.to_vec(),
        loglik: -fv,
        h,
        converged,
        warnings: vec![],
    })
}

/// GJR-GARCH(1,1), the default specification.
pub fn fit_gjr_garch(eps: &[f64]) -> Result<GarchFit> {
    fit_gjr_garch_pq(eps, 1, 1)
}

/// BIC-selected lag order over the (p, q) ∈ {1, 2}² grid.
pub fn select_gjr_bic(eps: &[f64]) -> Result<(usize, usize, GarchFit)> {
    let t = eps.len() as f64;
    let mut best: Option<(f64, usize, usize, GarchFit)> = None;
    for p in 1..=2usize {
        for q in 1..=2usize {
            if let Ok(fit) = fit_gjr_garch_pq(eps, p, q) {
                let k = (1 + 2 * p + q) as f64;
                let bic = k * t.ln() - 2.0 * fit.loglik;
                if best.as_ref().map_or(true, |(b, ..)| bic < *b) {
                    best = Some((bic, p, q, fit));
                }
            }
        }
    }
    match best {
        Some((_, p, q, fit)) => Ok((p, q, fit)),
        None => bail!("no lag order converged"),
    }
}

/// Simulates a GJR-GARCH(1,1) shock series (Gaussian innovations) after a
/// 200-step burn-in.
pub fn simulate_gjr(omega: f64, alpha: f64, beta: f64, gamma: f64, t: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let burn = 200;
    let mut h = omega / (1.0 - alpha - beta - gamma / 2.0);
    let mut out = Vec::with_capacity(t);
    for k in 0..(t + burn) {
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        let e = h.sqrt() * z;
        if k >= burn {
            out.push(e);
        }
        h = omega + (alpha + if e < 0.0 { gamma } else { 0.0 }) * e * e + beta * h;
    }
    out
}

// ---------------------------------------------------------------------------
// Realized variance
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RvMode {
    /// Sum of squared intraday returns across the 48 interval prices.
    Intra,
    /// Intra plus the squared overnight return from the prior close.
    Whole,
}

#[derive(Debug, Clone)]
pub struct RvSeries {
    /// Realized variance per retained day.
    pub rv: Vec<f64>,
    /// Day indices of the input that were retained, aligned with `rv`.
    pub day_index: Vec<usize>,
    pub skipped: Vec<usize>,
    pub warnings: Vec<String>,
}

pub const INTRADAY_INTERVALS: usize = 48;

/// Realized variance from per-day interval price vectors (48 prices each).
/// Days with a wrong interval count or non-positive prices are skipped and
/// logged. `prior_close` seeds the first day's overnight return in whole
/// mode.
pub fn realized_variance(days: &[Vec<f64>], mode: RvMode, prior_close: Option<f64>) -> RvSeries {
    let mut rv = vec![];
    let mut day_index = vec![];
    let mut skipped = vec![];
    let mut warnings = vec![];
    let mut prev_close: Option<f64> = prior_close;
    for (d, prices) in days.iter().enumerate() {
        if prices.len() != INTRADAY_INTERVALS || prices.iter().any(|&p| !(p > 0.0)) {
            skipped.push(d);
            warnings.push(format!("day {d}: bad interval data; skipped"));
            continue;
        }
        let mut v: f64 = prices
            .windows(2)
            .map(|w| {
                let r = (w[1] / w[0]).ln();
                r * r
            })
            .sum();
        match mode {
            RvMode::Intra => {}
            RvMode::Whole => match prev_close {
                Some(pc) => {
                    let overnight = (prices[0] / pc).ln();
                    v += overnight * overnight;
                }
                None => {
                    skipped.push(d);
                    warnings.push(format!("day {d}: no prior close for whole-day mode; skipped"));
                    prev_close = Some(*prices.last().unwrap());
                    continue;
                }
            },
        }
        prev_close = Some(*prices.last().unwrap());
        rv.push(v);
        day_index.push(d);
    }
    RvSeries { rv, day_index, skipped, warnings }
}

// ---------------------------------------------------------------------------
// Variance-forecast losses
// ---------------------------------------------------------------------------

/// (MSE, QLIKE) of a variance forecast against a realized-variance series.
pub fn variance_losses(h: &[f64], hhat: &[f64]) -> Result<(f64, f64)> {
    if h.len() != hhat.len() || h.is_empty() {
        bail!("series length mismatch");
    }
    if h.iter().any(|&v| !(v > 0.0)) || hhat.iter().any(|&v| !(v > 0.0)) {
        bail!("variance series must be strictly positive");
    }
    let n = h.len() as f64;
    let mut mse = 0.0;
    let mut qlike = 0.0;
    for (&a, &b) in h.iter().zip(hhat) {
        mse += (a - b) * (a - b);
        let ratio = a / b;
        qlike += ratio - ratio.ln() - 1.0;
    }
    Ok((mse / n, qlike / n))
}

// ---------------------------------------------------------------------------
// Mean-variance portfolio
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct PortfolioReport {
    pub gamma_ra: f64,
    /// Risky weight per day: r̂ / (γ_ra · ĥ), optionally clipped.
    pub weights: Vec<f64>,
    pub port_returns: Vec<f64>,
    pub avg_weight: f64,
    pub sd_weight: f64,
    /// Mean over days of w·r + (1−w)·r^f − ½γ_ra w² ĥ (forecast-variance
    /// utility; one of the two reported aggregations).
    pub utility_daily_mean: f64,
    /// μ̂_p − ½γ_ra σ̂²_p of the realized portfolio series; equals the CER.
    pub utility_series: f64,
    pub cer: f64,
    pub clipped_days: usize,
    pub warnings: Vec<String>,
}

/// Mean-variance allocation: w*_t = r̂_t / (γ_ra ĥ_t) applied to the
/// realized return r_t with the remainder at the risk-free rate. Population
/// moments are used for μ̂_p and σ̂²_p.
pub fn mv_portfolio(
    forecasts: &[f64],
    realized: &[f64],
    variances: &[f64],
    risk_free: &[f64],
    gamma_ra: f64,
    clip: Option<f64>,
) -> Result<PortfolioReport> {
    let n = forecasts.len();
    if n == 0 || realized.len() != n || variances.len() != n || risk_free.len() != n {
        bail!("series length mismatch");
    }
    if !(gamma_ra > 0.0) {
        bail!("risk aversion must be positive");
    }
    if variances.iter().any(|&h| !(h > 0.0)) {
        bail!("variance forecasts must be strictly positive");
    }
    let mut weights = Vec::with_capacity(n);
    let mut clipped_days = 0;
    for i in 0..n {
        let mut w = forecasts[i] / (gamma_ra * variances[i]);
        if let Some(c) = clip {
            if w.abs() > c {
                w = w.signum() * c;
                clipped_days += 1;
            }
        }
        weights.push(w);
    }
    let port_returns: Vec<f64> =
        (0..n).map(|i| weights[i] * realized[i] + (1.0 - weights[i]) * risk_free[i]).collect();
    let mu_p = crate::linalg::mean(&port_returns);
    let var_p =
        port_returns.iter().map(|r| (r - mu_p) * (r - mu_p)).sum::<f64>() / n as f64;
    let cer = mu_p - 0.5 * gamma_ra * var_p;
    let utility_daily_mean = (0..n)
        .map(|i| {
            weights[i] * realized[i] + (1.0 - weights[i]) * risk_free[i]
                - 0.5 * gamma_ra * weights[i] * weights[i] * variances[i]
        })
        .sum::<f64>()
        / n as f64;
    let avg_weight = crate::linalg::mean(&weights);
    let sd_weight =
        (weights.iter().map(|w| (w - avg_weight) * (w - avg_weight)).sum::<f64>() / n as f64)
            .sqrt();
    let mut warnings = vec![];
    if clipped_days > 0 {
        warnings.push(format!("weight clip active on {clipped_days} days"));
    }
    Ok(PortfolioReport {
        gamma_ra,
        weights,
        port_returns,
        avg_weight,
        sd_weight,
        utility_daily_mean,
        utility_series: cer,
        cer,
        clipped_days,
        warnings,
    })
}
