//! Changepoint detection on metric/importance series: PELT with an RBF
//! kernel segment cost (exact pruned dynamic programming) and the Pettitt
//! rank-based single-changepoint test.

use anyhow::{bail, Result};

/// Pettitt test output: K = max_k |U_k|, the split index attaining it (the
/// last index of the pre-change segment), and the closed-form p-value.
#[derive(Debug, Clone, Copy)]
pub struct PettittResult {
    pub k_stat: f64,
    pub index: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone)]
pub struct BreakReport {
    pub series_id: String,
    /// Start indices of new segments, strictly increasing, interior.
    pub pelt_breakpoints: Vec<usize>,
    pub beta: f64,
    pub gamma: f64,
    pub pettitt: PettittResult,
}

/// Median-heuristic RBF bandwidth: 1 / median of pairwise squared
/// distances; falls back to 1 when the series is constant.
pub fn median_heuristic_gamma(y: &[f64]) -> f64 {
    let n = y.len();
    let mut d2: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            d2.push((y[i] - y[j]) * (y[i] - y[j]));
        }
    }
    if d2.is_empty() {
        return 1.0;
    }
    d2.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let med = crate::stats::quantile_sorted(&d2, 0.5);
    if med > 0.0 {
        1.0 / med
    } else {
        1.0
    }
}

/// Default PELT penalty.
pub fn default_pelt_beta(n: usize) -> f64 {
    3.0 * (n as f64).ln()
}

/// Kernel-cost table: cost of segment [a, b) is
///   (b−a) − (1/(b−a)) ΣΣ exp(−γ (y_i − y_j)²)
/// — the within-segment scatter in the RBF feature space. Exposes O(1)
/// segment queries via a 2-D prefix sum over the Gram matrix.
struct KernelCost {
    /// prefix[i][j] = Σ_{a<i, b<j} K_ab
    prefix: Vec<Vec<f64>>,
}

impl KernelCost {
    fn new(y: &[f64], gamma: f64) -> Self {
        let n = y.len();
        let mut prefix = vec![vec![0.0; n + 1]; n + 1];
        for i in 0..n {
            let mut row_acc = 0.0;
            for j in 0..n {
                let d = y[i] - y[j];
                row_acc += (-gamma * d * d).exp();
                prefix[i + 1][j + 1] = prefix[i][j + 1] + row_acc;
            }
        }
        Self { prefix }
    }

    /// Cost of the half-open segment [a, b).
    fn cost(&self, a: usize, b: usize) -> f64 {
        let len = (b - a) as f64;
        let gram =
            self.prefix[b][b] - self.prefix[a][b] - self.prefix[b][a] + self.prefix[a][a];
        len - gram / len
    }
}

/// Exact penalized segmentation via PELT: minimizes Σ_seg cost + β·(#segments−1)
/// over all segmentations with segments of length ≥ `min_seg`. Returns the
/// start indices of each segment after the first. Pruning is exact because
/// the kernel cost is subadditive under splitting.
pub fn pelt_rbf(series: &[f64], gamma: f64, beta: f64, min_seg: usize) -> Result<Vec<usize>> {
    let n = series.len();
    if min_seg == 0 {
        bail!("min_seg must be ≥ 1");
    }
    if n < 2 * min_seg {
        bail!("series of length {n} cannot hold two segments of length {min_seg}");
    }
    if !(gamma > 0.0) || !(beta > 0.0) {
        bail!("gamma and beta must be positive");
    }
    let cost = KernelCost::new(series, gamma);
    // f[t] = optimal penalized cost of y[0..t); last[t] = previous boundary.
    let mut f = vec![f64::INFINITY; n + 1];
    let mut last = vec![0usize; n + 1];
    f[0] = -beta;
    // A boundary τ becomes a candidate once its own prefix is feasible
    // (τ = 0 or τ ≥ min_seg) and the segment (τ, t] has reached min_seg —
    // i.e. at step t = τ + min_seg.
    let mut candidates: Vec<usize> = vec![0];
    for t in min_seg..=n {
        if t >= 2 * min_seg {
            candidates.push(t - min_seg);
        }
        let mut best = f64::INFINITY;
        let mut arg = 0;
        for &tau in &candidates {
            let v = f[tau] + cost.cost(tau, t) + beta;
            if v < best {
                best = v;
                arg = tau;
            }
        }
        f[t] = best;
        last[t] = arg;
        // Prune: once f[τ] + cost(τ..t) > f[t], subadditivity keeps τ from
        // ever winning again.
        candidates.retain(|&tau| f[tau] + cost.cost(tau, t) <= f[t]);
    }
    let mut bps = vec![];
    let mut t = n;
    while t > 0 {
        let tau = last[t];
        if tau == 0 {
            break;
        }
        bps.push(tau);
        t = tau;
    }
    bps.reverse();
    Ok(bps)
}

/// Three-valued sign (f64::signum maps ±0 to ±1, which breaks ties).
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Pettitt single-changepoint test: U_k = Σ_{i≤k} Σ_{j>k} sign(y_i − y_j),
/// K = max_k |U_k|, p = min(1, 2·exp(−6K²/(T³+T²))).
pub fn pettitt(series: &[f64]) -> Result<PettittResult> {
    let n = series.len();
    if n < 4 {
        bail!("Pettitt test needs ≥ 4 observations, got {n}");
    }
    // Incremental update: U_{k} = U_{k−1} + Σ_j sign(y_k − y_j) over j ≠ k.
    let mut best = 0.0f64;
    let mut best_idx = 0usize;
    let mut u = 0.0f64;
    for k in 0..(n - 1) {
        let mut delta = 0.0;
        for j in 0..n {
            if j == k {
                continue;
            }
            delta += sign(series[k] - series[j]);
        }
        u += delta;
        if u.abs() > best {
            best = u.abs();
            best_idx = k;
        }
    }
    let t = n as f64;
    let p_raw = 2.0 * (-6.0 * best * best / (t * t * t + t * t)).exp();
    Ok(PettittResult { k_stat: best, index: best_idx, p_value: p_raw.min(1.0) })
}

/// Full per-series report with default bandwidth/penalty when not given.
pub fn analyze_series(
    series_id: &str,
    series: &[f64],
    gamma: Option<f64>,
    beta: Option<f64>,
    min_seg: usize,
) -> Result<BreakReport> {
    let gamma = gamma.unwrap_or_else(|| median_heuristic_gamma(series));
    let beta = beta.unwrap_or_else(|| default_pelt_beta(series.len()));
    let pelt_breakpoints = pelt_rbf(series, gamma, beta, min_seg)?;
    let pettitt = pettitt(series)?;
    Ok(BreakReport { series_id: series_id.to_string(), pelt_breakpoints, beta, gamma, pettitt })
}
