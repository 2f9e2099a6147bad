//! Data model: dated price panels, transforms, window scheduling, and
//! state/regime classification.

use anyhow::{bail, Context, Result};
use chrono::{Datelike, NaiveDate};
use ndarray::Array2;
use std::path::Path;

/// A dated daily panel: prices, log returns, and a named feature matrix.
///
/// Row `t` carries the information set available at day `t` (price `p_t`,
/// features `X_t`) and the supervised target `returns[t] = ln(p_{t+1}/p_t)`,
/// so the final row has no target and `returns.len() == prices.len() − 1`.
#[derive(Debug, Clone)]
pub struct PricePanel {
    pub dates: Vec<NaiveDate>,
    pub prices: Vec<f64>,
    /// returns[t] = ln(prices[t+1]/prices[t]); the target for feature row t.
    pub returns: Vec<f64>,
    /// Calendar month index per row (or fixed-length block index for
    /// simulated panels).
    pub month_id: Vec<u32>,
    pub features: Array2<f64>,
    pub feature_names: Vec<String>,
    /// Non-fatal data events (degenerate months, imputation) for the manifest.
    pub warnings: Vec<String>,
}

impl PricePanel {
    pub fn n_rows(&self) -> usize {
        self.prices.len()
    }

    /// Rows usable for supervised work: every row except the last.
    pub fn n_target_rows(&self) -> usize {
        self.returns.len()
    }

    pub fn from_parts(
        dates: Vec<NaiveDate>,
        prices: Vec<f64>,
        month_id: Vec<u32>,
        features: Array2<f64>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        if prices.len() < 2 {
            bail!("panel needs at least 2 rows, got {}", prices.len());
        }
        if dates.len() != prices.len()
            || month_id.len() != prices.len()
            || features.nrows() != prices.len()
            || features.ncols() != feature_names.len()
        {
            bail!("panel part lengths disagree");
        }
        for w in dates.windows(2) {
            if w[1] <= w[0] {
                bail!("dates must be strictly increasing ({} then {})", w[0], w[1]);
            }
        }
        for (i, &p) in prices.iter().enumerate() {
            if !(p > 0.0) || !p.is_finite() {
                bail!("non-positive price {} at row {}", p, i);
            }
        }
        let returns: Vec<f64> = prices.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
        if returns.iter().any(|r| !r.is_finite()) {
            bail!("non-finite return after log transform");
        }
        Ok(Self { dates, prices, returns, month_id, features, feature_names, warnings: vec![] })
    }

    /// Sorted distinct month ids in chronological order.
    pub fn months(&self) -> Vec<u32> {
        let mut m = self.month_id.clone();
        m.dedup();
        m
    }

    /// Row range (half-open) of one month id; months are contiguous blocks.
    pub fn month_rows(&self, month: u32) -> std::ops::Range<usize> {
        let start = self.month_id.iter().position(|&m| m == month).expect("month exists");
        let end = start + self.month_id[start..].iter().take_while(|&&m| m == month).count();
        start..end
    }
}

/// Reads a CSV with columns `date` (ISO-8601), `price`, and any number of
/// feature columns. Missing feature cells (empty or NaN) are linearly
/// interpolated within the column, with forward/backward fill at the ends.
pub fn load_csv(path: &Path) -> Result<PricePanel> {
    let mut rdr = csv::Reader::from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let date_col = headers.iter().position(|h| h == "date").context("missing `date` column")?;
    let price_col =
        headers.iter().position(|h| h == "price").context("missing `price` column")?;
    let feat_cols: Vec<usize> = (0..headers.len())
        .filter(|&i| i != date_col && i != price_col && headers.get(i) != Some("return"))
        .collect();
    let feature_names: Vec<String> =
        feat_cols.iter().map(|&i| headers.get(i).unwrap().to_string()).collect();

    let mut rows: Vec<(NaiveDate, f64, Vec<f64>)> = vec![];
    for (ridx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let date = NaiveDate::parse_from_str(rec.get(date_col).unwrap_or(""), "%Y-%m-%d")
            .with_context(|| format!("bad date at data row {}", ridx))?;
        let price: f64 = rec
            .get(price_col)
            .unwrap_or("")
            .parse()
            .with_context(|| format!("bad price at data row {}", ridx))?;
        if !(price > 0.0) {
            bail!("non-positive price {} at data row {} ({})", price, ridx, date);
        }
        let feats: Vec<f64> = feat_cols
            .iter()
            .map(|&c| {
                let cell = rec.get(c).unwrap_or("").trim();
                if cell.is_empty() { f64::NAN } else { cell.parse().unwrap_or(f64::NAN) }
            })
            .collect();
        rows.push((date, price, feats));
    }
    if rows.len() < 2 {
        bail!("need at least 2 data rows, got {}", rows.len());
    }
    rows.sort_by_key(|r| r.0);
    for w in rows.windows(2) {
        if w[0].0 == w[1].0 {
            bail!("duplicate date {}", w[0].0);
        }
    }

    let t = rows.len();
    let p = feature_names.len();
    let mut features = Array2::<f64>::zeros((t, p));
    for (i, r) in rows.iter().enumerate() {
        for (j, &v) in r.2.iter().enumerate() {
            features[[i, j]] = v;
        }
    }
    let mut warnings = vec![];
    impute_columns(&mut features, &feature_names, &mut warnings)?;

    let dates: Vec<NaiveDate> = rows.iter().map(|r| r.0).collect();
    let prices: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let month_id: Vec<u32> =
        dates.iter().map(|d| d.year() as u32 * 12 + d.month0()).collect();
    let mut panel = PricePanel::from_parts(dates, prices, month_id, features, feature_names)?;
    panel.warnings = warnings;
    Ok(panel)
}

/// Writes the panel back out in the load_csv schema plus a `return` column
/// (empty on the final row). Float formatting is shortest-round-trip, so a
/// write-then-read cycle reproduces the panel bit-identically.
pub fn save_csv(panel: &PricePanel, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut head = vec!["date".to_string(), "price".to_string(), "return".to_string()];
    head.extend(panel.feature_names.iter().cloned());
    w.write_record(&head)?;
    for t in 0..panel.n_rows() {
        let mut rec = vec![
            panel.dates[t].format("%Y-%m-%d").to_string(),
            format!("{}", panel.prices[t]),
            if t < panel.returns.len() { format!("{}", panel.returns[t]) } else { String::new() },
        ];
        for j in 0..panel.feature_names.len() {
            rec.push(format!("{}", panel.features[[t, j]]));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn impute_columns(
    features: &mut Array2<f64>,
    names: &[String],
    warnings: &mut Vec<String>,
) -> Result<()> {
    let (t, p) = (features.nrows(), features.ncols());
    for j in 0..p {
        let missing: Vec<usize> = (0..t).filter(|&i| !features[[i, j]].is_finite()).collect();
        if missing.is_empty() {
            continue;
        }
        if missing.len() == t {
            bail!("feature `{}` has no observed values", names[j]);
        }
        warnings.push(format!("feature `{}`: imputed {} missing cells", names[j], missing.len()));
        let obs: Vec<usize> = (0..t).filter(|&i| features[[i, j]].is_finite()).collect();
        for &i in &missing {
            let prev = obs.iter().rev().find(|&&o| o < i);
            let next = obs.iter().find(|&&o| o > i);
            features[[i, j]] = match (prev, next) {
                (Some(&a), Some(&b)) => {
                    let w = (i - a) as f64 / (b - a) as f64;
                    features[[a, j]] * (1.0 - w) + features[[b, j]] * w
                }
                (Some(&a), None) => features[[a, j]],
                (None, Some(&b)) => features[[b, j]],
                (None, None) => unreachable!(),
            };
        }
    }
    Ok(())
}

/// Within every month, rescales each feature column to sample mean 0 and
/// unbiased (n−1) standard deviation 1. Price/return columns are untouched.
/// A zero-variance month-column becomes all zeros, with a warning recorded.
pub fn monthly_standardize(panel: &PricePanel) -> Result<PricePanel> {
    let mut out = panel.clone();
    for month in panel.months() {
        let rows = panel.month_rows(month);
        if rows.len() < 2 {
            bail!("month {} has {} row(s); need ≥ 2 to standardize", month, rows.len());
        }
        for j in 0..panel.feature_names.len() {
            let vals: Vec<f64> = rows.clone().map(|i| panel.features[[i, j]]).collect();
            let m = crate::linalg::mean(&vals);
            let sd = crate::linalg::variance(&vals).sqrt();
            if sd <= 0.0 {
                for i in rows.clone() {
                    out.features[[i, j]] = 0.0;
                }
                out.warnings.push(format!(
                    "feature `{}` constant in month {}; column zeroed",
                    panel.feature_names[j], month
                ));
            } else {
                for i in rows.clone() {
                    out.features[[i, j]] = (panel.features[[i, j]] - m) / sd;
                }
            }
        }
    }
    Ok(out)
}

/// One train/validation/test split, as half-open row ranges into the panel.
/// Only rows with targets are included (the panel's final row is excluded).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub train: std::ops::Range<usize>,
    pub val: std::ops::Range<usize>,
    pub test: std::ops::Range<usize>,
}

/// The ordered expanding-window schedule: training grows by one month per
/// window, validation length stays fixed, test is the following single month.
#[derive(Debug, Clone)]
pub struct WindowPlan {
    pub windows: Vec<Window>,
    pub val_len_months: usize,
    pub test_len_months: usize,
}

/// Builds the expanding plan: window k trains on months [0, train0+k),
/// validates on the next `val_months`, tests on the single month after that.
pub fn build_window_plan(
    panel: &PricePanel,
    train0_months: usize,
    val_months: usize,
) -> Result<WindowPlan> {
    let months = panel.months();
    let need = train0_months + val_months + 1;
    if months.len() < need {
        bail!(
            "insufficient history: need {} months (train0 {} + val {} + 1 test), have {}",
            need, train0_months, val_months, months.len()
        );
    }
    if train0_months == 0 || val_months == 0 {
        bail!("train0_months and val_months must be positive");
    }
    let max_row = panel.n_target_rows(); // rows [0, max_row) have targets
    let bounds: Vec<std::ops::Range<usize>> = months.iter().map(|&m| panel.month_rows(m)).collect();
    let clip = |r: &std::ops::Range<usize>| r.start.min(max_row)..r.end.min(max_row);
    let mut windows = vec![];
    for k in 0..(months.len() - need + 1) {
        let tr_end = train0_months + k;
        let train = clip(&(bounds[0].start..bounds[tr_end - 1].end));
        let val = clip(&(bounds[tr_end].start..bounds[tr_end + val_months - 1].end));
        let test = clip(&(bounds[tr_end + val_months].start..bounds[tr_end + val_months].end));
        if train.is_empty() || val.is_empty() || test.is_empty() {
            continue;
        }
        windows.push(Window { train, val, test });
    }
    Ok(WindowPlan { windows, val_len_months: val_months, test_len_months: 1 })
}

/// Single chronological split by row proportions (the simulation-study
/// protocol); e.g. (7, 2, 1) gives 70/20/10.
pub fn split_by_ratio(panel: &PricePanel, parts: (usize, usize, usize)) -> Result<WindowPlan> {
    let (a, b, c) = parts;
    let total = a + b + c;
    if total == 0 || a == 0 || b == 0 || c == 0 {
        bail!("all split parts must be positive");
    }
    let t = panel.n_target_rows();
    let t1 = t * a / total;
    let t2 = t * (a + b) / total;
    if t1 == 0 || t2 == t1 || t2 == t {
        bail!("panel too short for a {}:{}:{} split", a, b, c);
    }
    Ok(WindowPlan {
        windows: vec![Window { train: 0..t1, val: t1..t2, test: t2..t }],
        val_len_months: 0,
        test_len_months: 0,
    })
}

/// Per-unit market-state labels from a splitting variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum State {
    Low,
    Normal,
    High,
}

#[derive(Debug, Clone)]
pub struct StateLabels {
    pub labels: Vec<State>,
    pub source_variable: String,
}

/// Tercile classification by rank over the full sample; ties broken by
/// earlier position (stable sort), so the label multiset depends only on
/// sample size.
pub fn classify_states(variable: &[f64], source: &str) -> Result<StateLabels> {
    let n = variable.len();
    if n < 3 {
        bail!("need ≥ 3 observations to form terciles, got {}", n);
    }
    let first = variable[0];
    if variable.iter().all(|&v| v == first) {
        bail!("degenerate splitting variable (all values equal)");
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| variable[i].partial_cmp(&variable[j]).unwrap().then(i.cmp(&j)));
    let (lo, hi) = (n / 3, 2 * n / 3);
    let mut labels = vec![State::Normal; n];
    for (rank, &i) in idx.iter().enumerate() {
        labels[i] = if rank < lo {
            State::Low
        } else if rank < hi {
            State::Normal
        } else {
            State::High
        };
    }
    Ok(StateLabels { labels, source_variable: source.to_string() })
}
