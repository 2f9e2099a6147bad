//! Attribution: per-feature importance from the in-sample R² drop when a
//! column is zeroed, exact Shapley values over feature groups, sampled
//! Shapley values over individual features, and marginal-association sweeps.

use anyhow::{bail, Result};
use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// Any fitted model, viewed as a prediction function over design matrices.
pub type PredictFn<'a> = &'a dyn Fn(&Array2<f64>) -> Array1<f64>;

/// In-sample R²: 1 − SSE/SST with SST taken about the sample mean.
pub fn insample_r2(y: &Array1<f64>, yhat: &Array1<f64>) -> Result<f64> {
    if y.len() != yhat.len() || y.is_empty() {
        bail!("response/prediction length mismatch");
    }
    let ybar = y.mean().unwrap();
    let sst: f64 = y.iter().map(|&v| (v - ybar) * (v - ybar)).sum();
    if sst <= 0.0 {
        bail!("constant response has no variance to explain");
    }
    let sse: f64 = y.iter().zip(yhat.iter()).map(|(&a, &b)| (a - b) * (a - b)).sum();
    Ok(1.0 - sse / sst)
}

/// R² drop per feature when that column is zeroed (model unchanged, no
/// refit): returns (full-design R², per-feature reductions).
pub fn r2_reduction(
    predict: PredictFn,
    x: &Array2<f64>,
    y: &Array1<f64>,
    features: &[usize],
) -> Result<(f64, Array1<f64>)> {
    let p = x.ncols();
    if let Some(&j) = features.iter().find(|&&j| j >= p) {
        bail!("feature {j} absent from a {p}-column design");
    }
    let full = insample_r2(y, &predict(x))?;
    let mut out = Array1::zeros(features.len());
    for (slot, &j) in features.iter().enumerate() {
        // A column that is already all zeros cannot change the fit.
        if x.column(j).iter().all(|&v| v == 0.0) {
            continue;
        }
        let mut xz = x.clone();
        xz.column_mut(j).fill(0.0);
        out[slot] = full - insample_r2(y, &predict(&xz))?;
    }
    Ok((full, out))
}

/// Per-(feature) importance aggregated over training windows.
#[derive(Debug, Clone)]
pub struct FiReport {
    pub feature_names: Vec<String>,
    /// Mean over windows of the raw R² reductions (may be negative).
    pub raw: Array1<f64>,
    /// Negatives clipped to zero, then scaled to sum to 1.
    pub normalized: Array1<f64>,
    /// window × feature raw reductions.
    pub per_window: Array2<f64>,
    pub warnings: Vec<String>,
}

/// Aggregates per-window raw reductions into the normalized report.
pub fn aggregate_fi(feature_names: &[String], per_window: &Array2<f64>) -> Result<FiReport> {
    let (w, p) = per_window.dim();
    if w == 0 || p == 0 || p != feature_names.len() {
        bail!("importance panel shape mismatch");
    }
    let raw = per_window.mean_axis(ndarray::Axis(0)).unwrap();
    let clipped = raw.mapv(|v| v.max(0.0));
    let total: f64 = clipped.sum();
    let mut warnings = vec![];
    let normalized = if total > 0.0 {
        clipped / total
    } else {
        warnings.push("all importance values non-positive; normalized vector left at zero".into());
        Array1::zeros(p)
    };
    Ok(FiReport {
        feature_names: feature_names.to_vec(),
        raw,
        normalized,
        per_window: per_window.clone(),
        warnings,
    })
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn coalition_name(mask: u32, names: &[String]) -> String {
    let members: Vec<&str> = (0..names.len())
        .filter(|&g| mask >> g & 1 == 1)
        .map(|g| names[g].as_str())
        .collect();
    if members.is_empty() { "{}".to_string() } else { format!("{{{}}}", members.join(", ")) }
}

#[derive(Debug, Clone)]
pub struct GroupShapley {
    pub names: Vec<String>,
    pub phi: Vec<f64>,
    /// Marginal value of the group alone: v({g}) − v(∅).
    pub self_effect: Vec<f64>,
    /// φ(g) − self effect.
    pub interaction: Vec<f64>,
    pub v_empty: f64,
    pub v_full: f64,
}

/// Exact Shapley attribution over groups from a complete coalition-value
/// table keyed by bitmask (bit g set ⇔ group g in the coalition).
pub fn shapley_group(names: &[String], values: &BTreeMap<u32, f64>) -> Result<GroupShapley> {
    let n = names.len();
    if n == 0 || n > 12 {
        bail!("exact mode handles 1..=12 groups, got {n}");
    }
    let full: u32 = (1u32 << n) - 1;
    let get = |mask: u32| -> Result<f64> {
        values
            .get(&mask)
            .copied()
            .ok_or_else(|| anyhow::anyhow!("missing coalition value for {}", coalition_name(mask, names)))
    };
    let n_fact = factorial(n);
    let mut phi = vec![0.0; n];
    for g in 0..n {
        let bit = 1u32 << g;
        for mask in 0..=full {
            if mask & bit != 0 {
                continue;
            }
            let s = mask.count_ones() as usize;
            let w = factorial(s) * factorial(n - s - 1) / n_fact;
            phi[g] += w * (get(mask | bit)? - get(mask)?);
        }
    }
    let v_empty = get(0)?;
    let v_full = get(full)?;
    let self_effect: Vec<f64> =
        (0..n).map(|g| get(1u32 << g).map(|v| v - v_empty)).collect::<Result<_>>()?;
    let interaction: Vec<f64> = phi.iter().zip(&self_effect).map(|(p, s)| p - s).collect();
    Ok(GroupShapley { names: names.to_vec(), phi, self_effect, interaction, v_empty, v_full })
}

/// All coalition bitmasks over n groups (2^n of them, empty included).
pub fn enumerate_coalitions(n: usize) -> Vec<u32> {
    (0..(1u32 << n)).collect()
}

#[derive(Debug, Clone)]
pub struct SampledShapley {
    pub phi: Vec<f64>,
    /// Monte Carlo standard error per feature (0 in exact mode).
    pub se: Vec<f64>,
    pub n_samples: usize,
    pub skipped: usize,
    pub exact: bool,
    pub warnings: Vec<String>,
}

/// Exact per-feature Shapley values by full subset enumeration (P ≤ 12).
/// The value function sees a boolean inclusion mask.
pub fn shapley_exact(
    p: usize,
    value: &mut dyn FnMut(&[bool]) -> Result<f64>,
) -> Result<SampledShapley> {
    if p == 0 || p > 12 {
        bail!("exact enumeration handles 1..=12 features, got {p}");
    }
    let full = 1usize << p;
    let mut v = vec![0.0; full];
    let mut mask = vec![false; p];
    for m in 0..full {
        for (j, slot) in mask.iter_mut().enumerate() {
            *slot = m >> j & 1 == 1;
        }
        v[m] = value(&mask)?;
    }
    let p_fact = factorial(p);
    let mut phi = vec![0.0; p];
    for j in 0..p {
        let bit = 1usize << j;
        for m in 0..full {
            if m & bit != 0 {
                continue;
            }
            let s = m.count_ones() as usize;
            let w = factorial(s) * factorial(p - s - 1) / p_fact;
            phi[j] += w * (v[m | bit] - v[m]);
        }
    }
    Ok(SampledShapley {
        phi,
        se: vec![0.0; p],
        n_samples: full,
        skipped: 0,
        exact: true,
        warnings: vec![],
    })
}

/// Permutation-sampling Shapley estimator: each draw walks a random feature
/// ordering and records marginal value contributions. Draws where the value
/// function fails are skipped and logged.
pub fn shapley_sampled(
    p: usize,
    value: &mut dyn FnMut(&[bool]) -> Result<f64>,
    n_samples: usize,
    seed: u64,
) -> Result<SampledShapley> {
    if p == 0 {
        bail!("no features");
    }
    if n_samples < 100 {
        bail!("need ≥ 100 permutation samples, got {n_samples}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sums = vec![0.0; p];
    let mut sq_sums = vec![0.0; p];
    let mut used = 0usize;
    let mut skipped = 0usize;
    let mut warnings = vec![];
    let mut perm: Vec<usize> = (0..p).collect();
    for draw in 0..n_samples {
        perm.shuffle(&mut rng);
        let mut mask = vec![false; p];
        let run = (|| -> Result<Vec<f64>> {
            let mut contrib = vec![0.0; p];
            let mut prev = value(&mask)?;
            for &j in &perm {
                mask[j] = true;
                let cur = value(&mask)?;
                contrib[j] = cur - prev;
                prev = cur;
            }
            Ok(contrib)
        })();
        match run {
            Ok(contrib) => {
                used += 1;
                for j in 0..p {
                    sums[j] += contrib[j];
                    sq_sums[j] += contrib[j] * contrib[j];
                }
            }
            Err(e) => {
                skipped += 1;
                if warnings.len() < 8 {
                    warnings.push(format!("draw {draw} skipped: {e}"));
                }
            }
        }
    }
    if used == 0 {
        bail!("value function failed on every permutation draw");
    }
    let n = used as f64;
    let phi: Vec<f64> = sums.iter().map(|s| s / n).collect();
    let se: Vec<f64> = (0..p)
        .map(|j| {
            if used < 2 {
                f64::INFINITY
            } else {
                let var = (sq_sums[j] - sums[j] * sums[j] / n) / (n - 1.0);
                (var.max(0.0) / n).sqrt()
            }
        })
        .collect();
    Ok(SampledShapley { phi, se, n_samples: used, skipped, exact: false, warnings })
}

/// Exact when P ≤ 12, sampled otherwise.
pub fn shapley_feature(
    p: usize,
    value: &mut dyn FnMut(&[bool]) -> Result<f64>,
    n_samples: usize,
    seed: u64,
) -> Result<SampledShapley> {
    if p <= 12 {
        shapley_exact(p, value)
    } else {
        shapley_sampled(p, value, n_samples, seed)
    }
}

/// Sweep feature j over `grid_n` equispaced points inside (−1, 1) with all
/// other features pinned at 0 (the post-standardization median); returns
/// (grid, prediction) pairs.
pub fn marginal_association(
    predict: PredictFn,
    n_features: usize,
    j: usize,
    grid_n: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if j >= n_features {
        bail!("feature {j} absent from a {n_features}-column design");
    }
    if grid_n < 2 {
        bail!("need ≥ 2 grid points");
    }
    let grid: Vec<f64> =
        (0..grid_n).map(|k| -1.0 + 2.0 * (k as f64 + 1.0) / (grid_n as f64 + 1.0)).collect();
    let mut x = Array2::zeros((grid_n, n_features));
    for (i, &g) in grid.iter().enumerate() {
        x[[i, j]] = g;
    }
    let pred = predict(&x);
    Ok((grid, pred.to_vec()))
}
