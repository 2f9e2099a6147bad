//! Out-of-sample scoring: R² against four benchmarks, relative RMSE,
//! Diebold–Mariano and Clark–West tests with Newey–West variance,
//! cumulative squared errors, trend/performance classification, per-state
//! predictability, and the complexity panel regression.

use anyhow::{bail, Result};
use chrono::NaiveDate;
use ndarray::{Array1, Array2};
use std::collections::BTreeMap;

use crate::dataset::{PricePanel, WindowPlan};
use crate::stats;

/// Aligned out-of-sample record: realized prices/returns, per-model return
/// forecasts, the refreshed AR(1) benchmark, and the expanding historical
/// mean. All return series share the same (natural, not percent) units.
#[derive(Debug, Clone)]
pub struct ForecastSet {
    pub dates: Vec<NaiveDate>,
    pub month_id: Vec<u32>,
    /// Realized return being forecast (r_{t+1}).
    pub r_next: Array1<f64>,
    /// Previous realized return (r_t), for trend classification.
    pub r_prev: Array1<f64>,
    /// Price at forecast time (p_t).
    pub p_prev: Array1<f64>,
    /// Realized next price (p_{t+1}).
    pub p_next: Array1<f64>,
    /// Expanding in-sample mean return, refreshed per window.
    pub rbar: Array1<f64>,
    /// AR(1)-in-price benchmark return forecast, refreshed per window.
    pub ar1: Array1<f64>,
    pub preds: BTreeMap<String, Array1<f64>>,
}

impl ForecastSet {
    pub fn len(&self) -> usize {
        self.r_next.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            bail!("empty forecast set");
        }
        if self.dates.len() != n
            || self.month_id.len() != n
            || self.r_prev.len() != n
            || self.p_prev.len() != n
            || self.p_next.len() != n
            || self.rbar.len() != n
            || self.ar1.len() != n
        {
            bail!("forecast-set series lengths disagree");
        }
        for (name, s) in &self.preds {
            if s.len() != n {
                bail!("model {name} has {} forecasts for {n} days", s.len());
            }
        }
        Ok(())
    }

    pub fn model(&self, name: &str) -> Result<&Array1<f64>> {
        self.preds.get(name).ok_or_else(|| anyhow::anyhow!("unknown model {name}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Benchmark {
    /// Random-walk price: p̂_{t+1} = p_t (price space).
    LagPrice,
    /// AR(1)-in-price forecast mapped to price space.
    Ar1,
    /// Expanding historical mean return (return space).
    Mean,
    /// Zero return (return space).
    Zero,
}

/// Sum of squared errors of model and benchmark over the (optionally
/// masked) days: R² = 1 − model/benchmark.
pub fn r2_oos_parts(
    fs: &ForecastSet,
    model: &str,
    benchmark: Benchmark,
    mask: Option<&[bool]>,
) -> Result<(f64, f64)> {
    let pred = fs.model(model)?;
    if let Some(m) = mask {
        if m.len() != fs.len() {
            bail!("mask length {} for {} days", m.len(), fs.len());
        }
        if !m.iter().any(|&b| b) {
            bail!("empty day subset");
        }
    }
    let use_day = |i: usize| mask.map_or(true, |m| m[i]);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..fs.len() {
        if !use_day(i) {
            continue;
        }
        match benchmark {
            Benchmark::LagPrice => {
                let phat = fs.p_prev[i] * pred[i].exp();
                num += (fs.p_next[i] - phat) * (fs.p_next[i] - phat);
                den += (fs.p_next[i] - fs.p_prev[i]) * (fs.p_next[i] - fs.p_prev[i]);
            }
            Benchmark::Ar1 => {
                let phat = fs.p_prev[i] * pred[i].exp();
                let pb = fs.p_prev[i] * fs.ar1[i].exp();
                num += (fs.p_next[i] - phat) * (fs.p_next[i] - phat);
                den += (fs.p_next[i] - pb) * (fs.p_next[i] - pb);
            }
            Benchmark::Mean => {
                let e = fs.r_next[i] - pred[i];
                let eb = fs.r_next[i] - fs.rbar[i];
                num += e * e;
                den += eb * eb;
            }
            Benchmark::Zero => {
                let e = fs.r_next[i] - pred[i];
                num += e * e;
                den += fs.r_next[i] * fs.r_next[i];
            }
        }
    }
    if den <= 0.0 {
        bail!("degenerate benchmark");
    }
    Ok((num, den))
}

pub fn r2_oos(
    fs: &ForecastSet,
    model: &str,
    benchmark: Benchmark,
    mask: Option<&[bool]>,
) -> Result<f64> {
    let (num, den) = r2_oos_parts(fs, model, benchmark, mask)?;
    Ok(1.0 - num / den)
}

/// Per-window AR(1)-in-price benchmark: regress train-window returns on the
/// same-day price (with intercept) and carry the coefficients through that
/// window's test rows. Validation rows are excluded from the regression.
#[derive(Debug, Clone)]
pub struct Ar1Benchmark {
    /// Forecast per panel target row; NaN outside the plan's test rows.
    pub forecasts: Vec<f64>,
    /// (intercept, slope) per window; slope is NaN for mean fallbacks.
    pub coefs: Vec<(f64, f64)>,
    pub warnings: Vec<String>,
}

pub fn ar1_benchmark(panel: &PricePanel, plan: &WindowPlan) -> Result<Ar1Benchmark> {
    if plan.windows.is_empty() {
        bail!("empty window plan");
    }
    let mut forecasts = vec![f64::NAN; panel.n_target_rows()];
    let mut coefs = vec![];
    let mut warnings = vec![];
    for (k, w) in plan.windows.iter().enumerate() {
        let xs: Vec<f64> = w.train.clone().map(|i| panel.prices[i]).collect();
        let ys: Vec<f64> = w.train.clone().map(|i| panel.returns[i]).collect();
        let xbar = crate::linalg::mean(&xs);
        let ybar = crate::linalg::mean(&ys);
        let sxx: f64 = xs.iter().map(|&x| (x - xbar) * (x - xbar)).sum();
        if sxx <= 1e-12 * (1.0 + xbar * xbar) {
            warnings.push(format!(
                "window {k}: degenerate price variance; benchmark fell back to the train mean"
            ));
            coefs.push((ybar, f64::NAN));
            for i in w.test.clone() {
                forecasts[i] = ybar;
            }
            continue;
        }
        let sxy: f64 = xs.iter().zip(&ys).map(|(&x, &y)| (x - xbar) * (y - ybar)).sum();
        let beta = sxy / sxx;
        let alpha = ybar - beta * xbar;
        coefs.push((alpha, beta));
        for i in w.test.clone() {
            forecasts[i] = alpha + beta * panel.prices[i];
        }
    }
    Ok(Ar1Benchmark { forecasts, coefs, warnings })
}

/// Contiguous per-month index ranges of the forecast set.
fn month_groups(month_id: &[u32]) -> Vec<std::ops::Range<usize>> {
    let mut out = vec![];
    let mut start = 0;
    for i in 1..=month_id.len() {
        if i == month_id.len() || month_id[i] != month_id[start] {
            out.push(start..i);
            start = i;
        }
    }
    out
}

/// Mean over out-of-sample months of the per-month RMSE ratio of `model`
/// to `reference`; also returns the monthly ratio series.
pub fn rrmse(fs: &ForecastSet, model: &str, reference: &str) -> Result<(f64, Vec<f64>)> {
    let pm = fs.model(model)?;
    let pr = fs.model(reference)?;
    let mut ratios = vec![];
    for g in month_groups(&fs.month_id) {
        let mut sm = 0.0;
        let mut sr = 0.0;
        for i in g.clone() {
            sm += (fs.r_next[i] - pm[i]) * (fs.r_next[i] - pm[i]);
            sr += (fs.r_next[i] - pr[i]) * (fs.r_next[i] - pr[i]);
        }
        let n = g.len() as f64;
        let (rm, rr) = ((sm / n).sqrt(), (sr / n).sqrt());
        if rr <= 0.0 {
            bail!("reference model has zero RMSE in an out-of-sample month");
        }
        ratios.push(rm / rr);
    }
    let avg = crate::linalg::mean(&ratios);
    Ok((avg, ratios))
}

#[derive(Debug, Clone, Copy)]
pub struct TestResult {
    pub stat: f64,
    pub p_two_sided: f64,
    pub p_one_sided: f64,
    pub n_units: usize,
    pub nw_lags: usize,
}

/// t-statistic on the mean of a loss-differential series with Newey–West
/// long-run variance; `nw_lags: None` applies ⌊4(n/100)^{2/9}⌋.
pub fn dm_from_diff(d: &[f64], nw_lags: Option<usize>) -> Result<TestResult> {
    let n = d.len();
    if n < 8 {
        bail!("need ≥ 8 comparison units, got {n}");
    }
    let lags = nw_lags.unwrap_or_else(|| stats::default_nw_lags(n));
    let var = stats::newey_west_var_of_mean(d, lags);
    if var <= 0.0 || crate::linalg::variance(d) <= 1e-300 {
        bail!("identical forecasts");
    }
    let stat = crate::linalg::mean(d) / var.sqrt();
    Ok(TestResult {
        stat,
        p_two_sided: stats::p_two_sided(stat),
        p_one_sided: stats::p_one_sided_pos(stat),
        n_units: n,
        nw_lags: lags,
    })
}

fn aggregate_monthly(fs: &ForecastSet, d: &[f64]) -> Vec<f64> {
    month_groups(&fs.month_id)
        .into_iter()
        .map(|g| {
            let s: f64 = d[g.clone()].iter().sum();
            s / g.len() as f64
        })
        .collect()
}

/// Diebold–Mariano test on squared-error differentials (a minus b; positive
/// statistic favors b). `monthly` averages differentials within each
/// out-of-sample month first.
pub fn dm_test(
    fs: &ForecastSet,
    model_a: &str,
    model_b: &str,
    monthly: bool,
    nw_lags: Option<usize>,
) -> Result<TestResult> {
    let pa = fs.model(model_a)?;
    let pb = fs.model(model_b)?;
    let d: Vec<f64> = (0..fs.len())
        .map(|i| {
            let ea = fs.r_next[i] - pa[i];
            let eb = fs.r_next[i] - pb[i];
            ea * ea - eb * eb
        })
        .collect();
    let units = if monthly { aggregate_monthly(fs, &d) } else { d };
    dm_from_diff(&units, nw_lags)
}

/// Clark–West test of the small (nested) model against the large one:
/// adjusted differential e_s² − e_l² + (r̂_s − r̂_l)², one-sided upper tail.
pub fn cw_test(
    fs: &ForecastSet,
    nested_small: &str,
    nesting_large: &str,
    monthly: bool,
    nw_lags: Option<usize>,
) -> Result<TestResult> {
    let ps = fs.model(nested_small)?;
    let pl = fs.model(nesting_large)?;
    let d: Vec<f64> = (0..fs.len())
        .map(|i| {
            let es = fs.r_next[i] - ps[i];
            let el = fs.r_next[i] - pl[i];
            es * es - el * el + (ps[i] - pl[i]) * (ps[i] - pl[i])
        })
        .collect();
    let units = if monthly { aggregate_monthly(fs, &d) } else { d };
    dm_from_diff(&units, nw_lags)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TrendClass {
    FalseTrend,
    RightWeakTrend,
    RightStrongTrend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PerfClass {
    DownwardLoss,
    DownwardGain,
    UpwardGain,
    UpwardLoss,
}

/// Per-day trend/performance classes plus class frequencies on the down-day
/// panel (r_{t+1} < r_t), the up-day panel, and all days.
#[derive(Debug, Clone)]
pub struct TrendDecomposition {
    pub trend: Vec<TrendClass>,
    pub perf: Vec<PerfClass>,
    /// panel → (trend-class frequencies, perf-class frequencies), each
    /// normalized to sum to 1 within the panel.
    pub freq: BTreeMap<String, (BTreeMap<String, f64>, BTreeMap<String, f64>)>,
}

pub fn classify_trend(r_prev: f64, r_next: f64, pred: f64) -> TrendClass {
    if r_next >= r_prev {
        if pred < r_prev {
            TrendClass::FalseTrend
        } else if pred < r_next {
            TrendClass::RightWeakTrend
        } else {
            TrendClass::RightStrongTrend
        }
    } else if pred > r_prev {
        TrendClass::FalseTrend
    } else if pred > r_next {
        TrendClass::RightWeakTrend
    } else {
        TrendClass::RightStrongTrend
    }
}

/// Benchmark-interval performance class. The interval is r ± |b − r|; a
/// forecast at exactly the realized value counts as a gain (downward side).
pub fn classify_perf(r_next: f64, pred: f64, bench: f64) -> PerfClass {
    let half = (bench - r_next).abs();
    let (lo, hi) = (r_next - half, r_next + half);
    if pred < lo {
        PerfClass::DownwardLoss
    } else if pred <= r_next {
        PerfClass::DownwardGain
    } else if pred <= hi {
        PerfClass::UpwardGain
    } else {
        PerfClass::UpwardLoss
    }
}

pub fn trend_decompose(
    fs: &ForecastSet,
    model: &str,
    benchmark_forecast: &Array1<f64>,
) -> Result<TrendDecomposition> {
    let pred = fs.model(model)?;
    if benchmark_forecast.len() != fs.len() {
        bail!("benchmark forecast length mismatch");
    }
    let n = fs.len();
    let trend: Vec<TrendClass> =
        (0..n).map(|i| classify_trend(fs.r_prev[i], fs.r_next[i], pred[i])).collect();
    let perf: Vec<PerfClass> =
        (0..n).map(|i| classify_perf(fs.r_next[i], pred[i], benchmark_forecast[i])).collect();
    let mut freq = BTreeMap::new();
    for (panel, filt) in [
        ("all", None::<bool>),
        ("down", Some(true)),
        ("up", Some(false)),
    ] {
        let idx: Vec<usize> = (0..n)
            .filter(|&i| match filt {
                None => true,
                Some(true) => fs.r_next[i] < fs.r_prev[i],
                Some(false) => fs.r_next[i] >= fs.r_prev[i],
            })
            .collect();
        if idx.is_empty() {
            continue;
        }
        let mut tf: BTreeMap<String, f64> = BTreeMap::new();
        let mut pf: BTreeMap<String, f64> = BTreeMap::new();
        for &i in &idx {
            *tf.entry(format!("{:?}", trend[i])).or_insert(0.0) += 1.0;
            *pf.entry(format!("{:?}", perf[i])).or_insert(0.0) += 1.0;
        }
        let m = idx.len() as f64;
        tf.values_mut().for_each(|v| *v /= m);
        pf.values_mut().for_each(|v| *v /= m);
        freq.insert(panel.to_string(), (tf, pf));
    }
    Ok(TrendDecomposition { trend, perf, freq })
}

/// Best model per state: argmax of the per-state R² across models; ties go
/// to the earlier model.
pub fn state_predictability(
    model_names: &[String],
    r2_by_state: &Array2<f64>,
) -> Result<Vec<(String, f64)>> {
    let (m, s) = r2_by_state.dim();
    if m == 0 || m != model_names.len() {
        bail!("need ≥1 model with matching names");
    }
    if s == 0 {
        bail!("empty state set");
    }
    Ok((0..s)
        .map(|j| {
            let mut best = 0;
            for i in 1..m {
                if r2_by_state[[i, j]] > r2_by_state[[best, j]] {
                    best = i;
                }
            }
            (model_names[best].clone(), r2_by_state[[best, j]])
        })
        .collect())
}

/// Running cumulative squared forecast error.
pub fn cumsfe(fs: &ForecastSet, model: &str) -> Result<Array1<f64>> {
    let pred = fs.model(model)?;
    let mut acc = 0.0;
    Ok(Array1::from_shape_fn(fs.len(), |i| {
        let e = fs.r_next[i] - pred[i];
        acc += e * e;
        acc
    }))
}

#[derive(Debug, Clone, Copy)]
pub struct PanelFit {
    pub alpha1: f64,
    pub se_clustered: f64,
    pub t_stat: f64,
    pub n_models: usize,
    pub n_months: usize,
}

/// Two-way fixed-effects regression of the R² panel on the complexity
/// panel (both model×month, balanced): within transformation for the
/// slope, standard errors clustered by model.
pub fn complexity_panel(r2: &Array2<f64>, complexity: &Array2<f64>) -> Result<PanelFit> {
    let (m, t) = r2.dim();
    if complexity.dim() != (m, t) {
        bail!("panel shapes disagree");
    }
    if m < 2 || t < 2 {
        bail!("need ≥2 models and ≥2 months");
    }
    let demean = |a: &Array2<f64>| -> Array2<f64> {
        let row_means = a.mean_axis(ndarray::Axis(1)).unwrap();
        let col_means = a.mean_axis(ndarray::Axis(0)).unwrap();
        let grand = a.mean().unwrap();
        Array2::from_shape_fn((m, t), |(i, j)| a[[i, j]] - row_means[i] - col_means[j] + grand)
    };
    let y = demean(r2);
    let x = demean(complexity);
    let sxx: f64 = x.iter().map(|&v| v * v).sum();
    if sxx <= 1e-300 {
        bail!("complexity panel has no within variation");
    }
    let sxy: f64 = x.iter().zip(y.iter()).map(|(&a, &b)| a * b).sum();
    let alpha1 = sxy / sxx;
    // Cluster scores by model with a G/(G−1) correction.
    let mut meat = 0.0;
    for i in 0..m {
        let mut s = 0.0;
        for j in 0..t {
            s += x[[i, j]] * (y[[i, j]] - alpha1 * x[[i, j]]);
        }
        meat += s * s;
    }
    let var = meat / (sxx * sxx) * (m as f64 / (m as f64 - 1.0));
    let se = var.sqrt();
    Ok(PanelFit {
        alpha1,
        se_clustered: se,
        t_stat: if se > 0.0 { alpha1 / se } else { f64::NAN },
        n_models: m,
        n_months: t,
    })
}
