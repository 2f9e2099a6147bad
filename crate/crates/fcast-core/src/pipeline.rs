//! End-to-end orchestration: a TOML run configuration, the per-window
//! fit/tune engine over the model zoo, forecast combination, report
//! emission, and the entry points behind each CLI subcommand.
//!
//! Determinism contract: every stochastic fit draws its seed from
//! (run seed, window, model slot) alone, work items are collected in a
//! fixed order, and all aggregation happens sequentially after the parallel
//! section — so outputs are byte-identical for any worker count.

use crate::combine::{self, CombineMethod, EnsembleWeights};
use crate::dataset::{self, PricePanel, State, Window, WindowPlan};
use crate::evaluate::{self, Benchmark, ForecastSet};
use crate::interpret;
use crate::linear::{self, DimRed};
use crate::nn::{self, MlpConfig};
use crate::report::{self, format_f64, HparamRecord, RunManifest, Table};
use crate::simgen::{self, DgpConfig};
use crate::tree::{self, GbmParams, Loss, RfParams};
use anyhow::{anyhow, bail, Context, Result};
use ndarray::{s, Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const KNOWN_MODELS: [&str; 16] = [
    "ols", "lasso", "ridge", "enet", "pcr", "pls", "glm", "rf", "gbt", "gbt_leaf", "gbt_huber",
    "nn1", "nn2", "nn3", "nn4", "nn5",
];

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads for the fit stage; results are identical for any value.
    pub jobs: usize,
    pub out_dir: String,
    pub data: DataConfig,
    pub windows: WindowConfig,
    /// Model zoo members to fit, in report order.
    pub models: Vec<String>,
    pub grids: GridConfig,
    pub ensembles: EnsembleConfig,
    pub evaluation: EvalConfig,
    pub portfolio: PortfolioConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            jobs: 1,
            out_dir: "out".into(),
            data: DataConfig::default(),
            windows: WindowConfig::default(),
            models: vec!["ols".into(), "lasso".into(), "ridge".into()],
            grids: GridConfig::default(),
            ensembles: EnsembleConfig::default(),
            evaluation: EvalConfig::default(),
            portfolio: PortfolioConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// "simulate" draws a synthetic panel; "csv" loads `csv_path`.
    pub source: String,
    pub csv_path: String,
    /// Synthetic mean specification: 1 = sparse linear, 2 = sparse nonlinear.
    pub model: u8,
    pub t_days: usize,
    pub p_c: usize,
    pub p_x: usize,
    /// Student-t degrees of freedom for the noise; 0 keeps it normal.
    pub eps_dof: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { source: "simulate".into(), csv_path: String::new(), model: 1, t_days: 3600, p_c: 50, p_x: 2, eps_dof: 0.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    /// "expanding" walks month-by-month; "ratio" is a single chronological
    /// train/validation/test split.
    pub mode: String,
    pub ratio: [usize; 3],
    pub train0_months: usize,
    pub val_months: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { mode: "expanding".into(), ratio: [7, 2, 1], train0_months: 60, val_months: 12 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_count: usize,
    /// Elastic-net L1 share.
    pub enet_rho: f64,
    /// Component cap for the dimension-reduction families.
    pub dimred_k_max: usize,
    /// Interior spline knots per feature; the basis adds one linear term.
    pub glm_knots: usize,
    pub tree_max_depth: usize,
    /// Candidate tree counts; forests and boosters are fit once at the
    /// largest count and smaller counts are scored as prefixes.
    pub n_trees: Vec<usize>,
    /// 0 derives ⌈P/3⌉ at fit time.
    pub rf_max_features: usize,
    pub min_leaf: usize,
    pub boost_lr: Vec<f64>,
    /// L2 shrinkage on boosted leaf values.
    pub boost_lambda: f64,
    /// Residual quantiles defining the robust-loss threshold grid.
    pub huber_q: Vec<f64>,
    pub nn_widths: Vec<usize>,
    pub nn_l1: Vec<f64>,
    pub nn_lr: Vec<f64>,
    pub nn_seeds: usize,
    pub nn_patience: usize,
    pub nn_max_epochs: usize,
    pub nn_dropout: f64,
    /// Training objective for the networks: "mae" (absolute error, robust to
    /// the heavy daily noise) or "mse" (squared error).
    pub nn_loss: String,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            lambda_min: 1e-4,
            lambda_max: 1e-1,
            lambda_count: 50,
            enet_rho: 0.5,
            dimred_k_max: 30,
            glm_knots: 3,
            tree_max_depth: 6,
            n_trees: vec![100, 200, 300, 400],
            rf_max_features: 0,
            min_leaf: 5,
            boost_lr: vec![0.001, 0.01, 0.1],
            boost_lambda: 0.0,
            huber_q: vec![0.9, 0.95, 0.99],
            nn_widths: vec![64, 32, 16, 8, 4],
            nn_l1: vec![1e-5, 1e-3],
            nn_lr: vec![0.01],
            nn_seeds: 10,
            nn_patience: 5,
            nn_max_epochs: 100,
            nn_dropout: 0.0,
            nn_loss: "mae".into(),
        }
    }
}

impl GridConfig {
    /// Penalty grid, largest first so a tied validation score keeps the
    /// stronger (simpler) penalty.
    pub fn lambdas_desc(&self) -> Vec<f64> {
        let n = self.lambda_count;
        if n == 1 {
            return vec![self.lambda_max];
        }
        (0..n)
            .map(|i| self.lambda_min + (self.lambda_max - self.lambda_min) * i as f64 / (n - 1) as f64)
            .rev()
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    /// Subset of {"avg", "dmspe", "op", "wp"}.
    pub methods: Vec<String>,
    pub dmspe_theta: f64,
    /// Fixed correlation penalty; 0 or missing selects it by cross-validation.
    pub wp_lambda: f64,
    pub cv_folds: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { methods: vec!["avg".into(), "dmspe".into(), "op".into(), "wp".into()], dmspe_theta: 0.9, wp_lambda: 0.0, cv_folds: 5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Aggregate forecast-accuracy tests to monthly units before testing.
    pub monthly_tests: bool,
    /// Fixed autocovariance lag count; 0 uses the sample-size rule.
    pub nw_lags: usize,
    /// Variable defining market-state terciles: "price" or "none".
    pub state_source: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { monthly_tests: true, nw_lags: 0, state_source: "price".into() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PortfolioConfig {
    pub gamma_ra: Vec<f64>,
    pub risk_free: f64,
    /// Cap on |weight|; 0 disables clipping.
    pub weight_clip: f64,
}

impl Default for PortfolioConfig {
    fn default() -> Self {
        Self { gamma_ra: vec![2.0, 5.0, 10.0], risk_free: 0.0, weight_clip: 0.0 }
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    let cfg: RunConfig =
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
    validate_config(&cfg)?;
    Ok(cfg)
}

pub fn apply_overrides(cfg: &mut RunConfig, seed: Option<u64>, jobs: Option<usize>, out: Option<String>) {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(j) = jobs {
        cfg.jobs = j;
    }
    if let Some(o) = out {
        cfg.out_dir = o;
    }
}

pub fn validate_config(cfg: &RunConfig) -> Result<()> {
    if cfg.jobs == 0 {
        bail!("jobs must be ≥ 1");
    }
    match cfg.data.source.as_str() {
        "simulate" => {
            if !(cfg.data.model == 1 || cfg.data.model == 2) {
                bail!("data.model must be 1 or 2");
            }
        }
        "csv" => {
            if cfg.data.csv_path.is_empty() {
                bail!("data.source = \"csv\" requires data.csv_path");
            }
        }
        other => bail!("unknown data.source {other:?} (expected \"simulate\" or \"csv\")"),
    }
    match cfg.windows.mode.as_str() {
        "expanding" => {
            if cfg.windows.train0_months == 0 || cfg.windows.val_months == 0 {
                bail!("expanding windows need positive train0_months and val_months");
            }
        }
        "ratio" => {
            if cfg.windows.ratio.iter().any(|&r| r == 0) {
                bail!("all ratio parts must be positive");
            }
        }
        other => bail!("unknown windows.mode {other:?} (expected \"expanding\" or \"ratio\")"),
    }
    if cfg.models.is_empty() {
        bail!("models list is empty");
    }
    let mut seen = BTreeSet::new();
    for m in &cfg.models {
        if !KNOWN_MODELS.contains(&m.as_str()) {
            bail!("unknown model {m:?}; known: {}", KNOWN_MODELS.join(", "));
        }
        if !seen.insert(m.clone()) {
            bail!("model {m:?} listed twice");
        }
    }
    let g = &cfg.grids;
    if g.lambda_count == 0 || g.lambda_min <= 0.0 || g.lambda_max < g.lambda_min {
        bail!("penalty grid needs lambda_count ≥ 1 and 0 < lambda_min ≤ lambda_max");
    }
    if !(0.0..=1.0).contains(&g.enet_rho) {
        bail!("enet_rho must be in [0, 1]");
    }
    if g.dimred_k_max == 0 || g.glm_knots < 2 || g.tree_max_depth == 0 || g.min_leaf == 0 {
        bail!("dimred_k_max, tree_max_depth, min_leaf must be ≥ 1 and glm_knots ≥ 2");
    }
    if g.n_trees.is_empty() || g.n_trees.iter().any(|&b| b == 0) {
        bail!("n_trees grid must be non-empty and positive");
    }
    if g.n_trees.windows(2).any(|w| w[0] >= w[1]) {
        bail!("n_trees grid must be strictly increasing");
    }
    if g.boost_lr.is_empty() || g.boost_lr.iter().any(|&e| e <= 0.0 || e > 1.0) {
        bail!("boost_lr entries must lie in (0, 1]");
    }
    if g.huber_q.is_empty() || g.huber_q.iter().any(|&q| !(0.0..1.0).contains(&q)) {
        bail!("huber_q entries must lie in [0, 1)");
    }
    if g.nn_widths.is_empty() || g.nn_widths.len() > 5 || g.nn_widths.windows(2).any(|w| w[0] <= w[1]) {
        bail!("nn_widths must be 1–5 strictly decreasing layer widths");
    }
    if g.nn_l1.is_empty() || g.nn_lr.is_empty() || g.nn_lr.iter().any(|&e| e <= 0.0) {
        bail!("nn_l1 and nn_lr grids must be non-empty with positive rates");
    }
    if g.nn_seeds == 0 || g.nn_max_epochs == 0 {
        bail!("nn_seeds and nn_max_epochs must be ≥ 1");
    }
    if !(0.0..1.0).contains(&g.nn_dropout) {
        bail!("nn_dropout must lie in [0, 1)");
    }
    if !["mae", "mse"].contains(&g.nn_loss.as_str()) {
        bail!("nn_loss must be \"mae\" or \"mse\", got {:?}", g.nn_loss);
    }
    for m in &cfg.ensembles.methods {
        if !["avg", "dmspe", "op", "wp"].contains(&m.as_str()) {
            bail!("unknown ensemble method {m:?}");
        }
    }
    if !(0.0..=1.0).contains(&cfg.ensembles.dmspe_theta) || cfg.ensembles.dmspe_theta == 0.0 {
        bail!("dmspe_theta must lie in (0, 1]");
    }
    if cfg.ensembles.cv_folds < 2 {
        bail!("cv_folds must be ≥ 2");
    }
    if cfg.ensembles.wp_lambda < 0.0 {
        bail!("wp_lambda must be ≥ 0");
    }
    match cfg.evaluation.state_source.as_str() {
        "price" | "none" => {}
        other => bail!("unknown evaluation.state_source {other:?} (expected \"price\" or \"none\")"),
    }
    if cfg.portfolio.gamma_ra.is_empty() || cfg.portfolio.gamma_ra.iter().any(|&x| x <= 0.0) {
        bail!("portfolio.gamma_ra must be non-empty and positive");
    }
    if cfg.portfolio.weight_clip < 0.0 {
        bail!("portfolio.weight_clip must be ≥ 0");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Seeding
// ---------------------------------------------------------------------------

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one (window, model-slot) work item; independent of scheduling.
pub fn derive_seed(global: u64, window: u64, slot: u64) -> u64 {
    let mut z = splitmix64(global ^ 0xD6E8_FEB8_6659_FD93);
    z = splitmix64(z ^ window.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    splitmix64(z ^ slot.wrapping_add(1).wrapping_mul(0xC2B2_AE3D_27D4_EB4F))
}

// ---------------------------------------------------------------------------
// Window preparation
// ---------------------------------------------------------------------------

/// One window's design/target slices: features standardized on training
/// moments, targets in percent log-return units.
pub struct WindowData {
    pub x_train: Array2<f64>,
    pub yp_train: Array1<f64>,
    pub x_val: Array2<f64>,
    pub yp_val: Array1<f64>,
    pub x_test: Array2<f64>,
    pub yp_test: Array1<f64>,
}

fn standardize_with(x: &Array2<f64>, mean: &[f64], sd: &[f64]) -> Array2<f64> {
    let mut out = x.clone();
    for j in 0..out.ncols() {
        let mut col = out.column_mut(j);
        col.mapv_inplace(|v| (v - mean[j]) / sd[j]);
    }
    out
}

pub fn prepare_window(panel: &PricePanel, w: &Window) -> WindowData {
    let xt = panel.features.slice(s![w.train.start..w.train.end, ..]).to_owned();
    let xv = panel.features.slice(s![w.val.start..w.val.end, ..]).to_owned();
    let xe = panel.features.slice(s![w.test.start..w.test.end, ..]).to_owned();
    let p = xt.ncols();
    let n = xt.nrows() as f64;
    let mut mean = vec![0.0; p];
    let mut sd = vec![1.0; p];
    for j in 0..p {
        let col = xt.column(j);
        let m = col.sum() / n;
        let var = if n > 1.0 { col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        mean[j] = m;
        sd[j] = if var.sqrt() > 0.0 { var.sqrt() } else { 1.0 };
    }
    let yp = |r: &Range<usize>| {
        Array1::from_iter(panel.returns[r.start..r.end].iter().map(|v| v * 100.0))
    };
    WindowData {
        x_train: standardize_with(&xt, &mean, &sd),
        yp_train: yp(&w.train),
        x_val: standardize_with(&xv, &mean, &sd),
        yp_val: yp(&w.val),
        x_test: standardize_with(&xe, &mean, &sd),
        yp_test: yp(&w.test),
    }
}

// ---------------------------------------------------------------------------
// Model dispatch
// ---------------------------------------------------------------------------

pub enum FittedPredictor {
    Linear(linear::LinearFit),
    Trees(tree::TreeEnsemble),
    /// (net, tree-count prefix) — forests/boosters score prefixes.
    TreesPrefix(tree::TreeEnsemble, usize),
    Net(nn::MlpFit),
}

impl FittedPredictor {
    /// Prediction in percent log-return units on a standardized design.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        Ok(match self {
            FittedPredictor::Linear(f) => f.predict(x),
            FittedPredictor::Trees(f) => f.predict(x),
            FittedPredictor::TreesPrefix(f, b) => f.predict_prefix(x, *b),
            FittedPredictor::Net(f) => f.predict(x)?,
        })
    }
}

pub struct FittedModel {
    pub window: usize,
    pub name: String,
    /// Human-readable tuned hyperparameters.
    pub chosen: String,
    /// Validation MSE in percent² units (the selection criterion).
    pub val_mse: f64,
    /// Family-specific parsimony measure: nonzero coefficients, distinct
    /// split features, or parameter count.
    pub complexity: f64,
    /// Natural-unit predictions.
    pub val_pred: Array1<f64>,
    pub test_pred: Array1<f64>,
    pub fit: FittedPredictor,
    pub warnings: Vec<String>,
}

fn mse(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let d = a - b;
    d.dot(&d) / a.len() as f64
}

struct Candidate {
    chosen: String,
    val_mse: f64,
    complexity: f64,
    fit: FittedPredictor,
    val_pred_pct: Array1<f64>,
}

/// Keeps the first strict minimum, so grid order encodes the tie-break
/// toward the simpler setting.
struct Selector {
    best: Option<Candidate>,
    warnings: Vec<String>,
}

impl Selector {
    fn new() -> Self {
        Self { best: None, warnings: vec![] }
    }

    fn offer(&mut self, data: &WindowData, chosen: String, complexity: f64, fit: FittedPredictor) {
        match fit.predict(&data.x_val) {
            Ok(vp) => {
                let m = mse(&vp, &data.yp_val);
                if self.best.as_ref().map_or(true, |b| m < b.val_mse) {
                    self.best = Some(Candidate { chosen, val_mse: m, complexity, fit, val_pred_pct: vp });
                }
            }
            Err(e) => self.warnings.push(format!("candidate {chosen} failed: {e}")),
        }
    }

    fn offer_scored(
        &mut self,
        chosen: String,
        val_mse: f64,
        complexity: f64,
        fit: FittedPredictor,
        val_pred_pct: Array1<f64>,
    ) {
        if self.best.as_ref().map_or(true, |b| val_mse < b.val_mse) {
            self.best = Some(Candidate { chosen, val_mse, complexity, fit, val_pred_pct });
        }
    }

    fn finish(self, window: usize, name: &str, data: &WindowData) -> Result<FittedModel> {
        let best = self
            .best
            .ok_or_else(|| anyhow!("every {name} candidate failed: {}", self.warnings.join("; ")))?;
        let test_pct = best.fit.predict(&data.x_test)?;
        Ok(FittedModel {
            window,
            name: name.to_string(),
            chosen: best.chosen,
            val_mse: best.val_mse,
            complexity: best.complexity,
            val_pred: best.val_pred_pct.mapv(|v| v / 100.0),
            test_pred: test_pct.mapv(|v| v / 100.0),
            fit: best.fit,
            warnings: self.warnings,
        })
    }
}

/// Fits one zoo member on one prepared window, tuning on validation MSE.
pub fn fit_one(name: &str, window: usize, data: &WindowData, grids: &GridConfig, seed: u64) -> Result<FittedModel> {
    let mut sel = Selector::new();
    let xt = &data.x_train;
    let yt = &data.yp_train;
    match name {
        "ols" => {
            let f = linear::fit_ols(xt, yt)?;
            sel.offer(data, "-".into(), f.complexity() as f64, FittedPredictor::Linear(f));
        }
        "lasso" | "ridge" | "enet" => {
            let rho = match name {
                "lasso" => 1.0,
                "ridge" => 0.0,
                _ => grids.enet_rho,
            };
            let raw = grids.lambdas_desc();
            // The ridge penalty is scaled per observation so one nominal grid
            // covers both L1 and L2 families at comparable strengths.
            let eff: Vec<f64> = if name == "ridge" {
                raw.iter().map(|l| l / xt.nrows() as f64).collect()
            } else {
                raw.clone()
            };
            let fits = linear::fit_penalized_path(xt, yt, &eff, rho)?;
            for (lam, f) in raw.iter().zip(fits) {
                let c = f.complexity() as f64;
                sel.offer(data, format!("lambda={}", format_f64(*lam)), c, FittedPredictor::Linear(f));
            }
        }
        "pcr" | "pls" => {
            let mode = if name == "pcr" { DimRed::Pcr } else { DimRed::Pls };
            let k_max = grids.dimred_k_max.min(xt.ncols()).min(xt.nrows().saturating_sub(1));
            for k in 1..=k_max.max(1) {
                match linear::fit_dimred(xt, yt, k, mode) {
                    Ok(f) => {
                        sel.offer(data, format!("k={k}"), k as f64, FittedPredictor::Linear(f));
                    }
                    Err(e) => sel.warnings.push(format!("k={k} failed: {e}")),
                }
            }
        }
        "glm" => {
            let k_basis = grids.glm_knots + 1;
            for lam in grids.lambdas_desc() {
                match linear::fit_glm_groupspline(xt, yt, k_basis, lam, 0.0) {
                    Ok(f) => {
                        let c = f.complexity() as f64;
                        sel.offer(
                            data,
                            format!("knots={},lambda={}", grids.glm_knots, format_f64(lam)),
                            c,
                            FittedPredictor::Linear(f),
                        );
                    }
                    Err(e) => sel.warnings.push(format!("lambda={lam} failed: {e}")),
                }
            }
        }
        "rf" => {
            let b_max = *grids.n_trees.last().unwrap();
            let mf = if grids.rf_max_features == 0 {
                (xt.ncols() + 2) / 3
            } else {
                grids.rf_max_features.min(xt.ncols())
            };
            for depth in 1..=grids.tree_max_depth {
                let params = RfParams {
                    n_trees: b_max,
                    max_depth: depth,
                    max_features: mf,
                    min_leaf: grids.min_leaf,
                    bootstrap: true,
                    seed: derive_seed(seed, 0xF0, depth as u64),
                };
                let ens = tree::fit_random_forest(xt, yt, &params)?;
                for &b in &grids.n_trees {
                    let vp = ens.predict_prefix(&data.x_val, b);
                    let m = mse(&vp, &data.yp_val);
                    // Complexity counts features used by the scored prefix.
                    let mut sub = ens.clone();
                    sub.trees.truncate(b);
                    let c = sub.distinct_features() as f64;
                    sel.offer_scored(
                        format!("depth={depth},trees={b}"),
                        m,
                        c,
                        FittedPredictor::TreesPrefix(sub, b),
                        vp,
                    );
                }
            }
        }
        "gbt" | "gbt_leaf" | "gbt_huber" => {
            let leaf_wise = name == "gbt_leaf";
            let b_max = *grids.n_trees.last().unwrap();
            let qs: Vec<Option<f64>> = if name == "gbt_huber" {
                grids.huber_q.iter().copied().map(Some).collect()
            } else {
                vec![None]
            };
            for depth in 1..=grids.tree_max_depth {
                for &eta in &grids.boost_lr {
                    for &q in &qs {
                        let loss = match q {
                            Some(q) => Loss::Huber(tree::huber_xi(yt, q)),
                            None => Loss::Mse,
                        };
                        let params = GbmParams {
                            n_trees: b_max,
                            eta,
                            max_depth: if leaf_wise { 64 } else { depth },
                            max_leaves: 1usize << depth,
                            leaf_wise,
                            min_leaf: grids.min_leaf,
                            lambda: grids.boost_lambda,
                            loss,
                        };
                        let ens = tree::fit_gbm(xt, yt, &params, Some((&data.x_val, &data.yp_val)))?;
                        let curve = ens.val_curve.clone().unwrap_or_default();
                        for &b in &grids.n_trees {
                            if b > curve.len() {
                                continue;
                            }
                            let m = curve[b - 1];
                            let mut sub = ens.clone();
                            sub.trees.truncate(b);
                            let c = sub.distinct_features() as f64;
                            let vp = sub.predict_prefix(&data.x_val, b);
                            let size = if leaf_wise {
                                format!("leaves={}", 1usize << depth)
                            } else {
                                format!("depth={depth}")
                            };
                            let qtag = q.map(|q| format!(",q={q}")).unwrap_or_default();
                            sel.offer_scored(
                                format!("{size},lr={}{qtag},trees={b}", format_f64(eta)),
                                m,
                                c,
                                FittedPredictor::TreesPrefix(sub, b),
                                vp,
                            );
                        }
                    }
                }
            }
        }
        _ if name.starts_with("nn") => {
            let depth: usize = name[2..].parse().map_err(|_| anyhow!("unknown model {name}"))?;
            if depth == 0 || depth > grids.nn_widths.len() {
                bail!("{name} needs {depth} configured layer widths");
            }
            let widths = grids.nn_widths[..depth].to_vec();
            // Stronger penalty first: on ties the smaller net wins.
            let mut l1s = grids.nn_l1.clone();
            l1s.sort_by(|a, b| b.partial_cmp(a).unwrap());
            for &l1 in &l1s {
                for &lr in &grids.nn_lr {
                    let cfg = MlpConfig {
                        widths: widths.clone(),
                        l1,
                        lr,
                        max_epochs: grids.nn_max_epochs,
                        patience: grids.nn_patience,
                        batch: 0,
                        n_seeds: grids.nn_seeds,
                        seed,
                        batch_norm: true,
                        dropout: grids.nn_dropout,
                        objective: if grids.nn_loss == "mae" {
                            nn::Objective::AbsoluteError
                        } else {
                            nn::Objective::SquaredError
                        },
                    };
                    match nn::fit_mlp(xt, yt, &data.x_val, &data.yp_val, &cfg) {
                        Ok(f) => {
                            let c = f.n_params() as f64;
                            sel.offer(
                                data,
                                format!("l1={},lr={}", format_f64(l1), format_f64(lr)),
                                c,
                                FittedPredictor::Net(f),
                            );
                        }
                        Err(e) => sel.warnings.push(format!("l1={l1},lr={lr} failed: {e}")),
                    }
                }
            }
        }
        other => bail!("unknown model {other:?}"),
    }
    sel.finish(window, name, data)
}

// ---------------------------------------------------------------------------
// Fit stage (parallel over window × model)
// ---------------------------------------------------------------------------

/// Fits every configured model on every window. Work items are independent
/// and collected in fixed (window, model) order.
pub fn fit_all(
    panel: &PricePanel,
    plan: &WindowPlan,
    models: &[String],
    grids: &GridConfig,
    seed: u64,
    jobs: usize,
) -> Result<Vec<Vec<FittedModel>>> {
    let pairs: Vec<(usize, usize)> = (0..plan.windows.len())
        .flat_map(|w| (0..models.len()).map(move |m| (w, m)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("cannot build worker pool")?;
    let results: Vec<Result<FittedModel>> = pool.install(|| {
        pairs
            .par_iter()
            .map(|&(w, m)| {
                let data = prepare_window(panel, &plan.windows[w]);
                fit_one(&models[m], w, &data, grids, derive_seed(seed, w as u64, m as u64))
            })
            .collect()
    });
    let mut by_window: Vec<Vec<FittedModel>> = (0..plan.windows.len()).map(|_| vec![]).collect();
    for (idx, res) in results.into_iter().enumerate() {
        let (w, m) = pairs[idx];
        let fitted = res.with_context(|| format!("window {w}, model {}", models[m]))?;
        by_window[w].push(fitted);
    }
    Ok(by_window)
}

// ---------------------------------------------------------------------------
// Ensembles
// ---------------------------------------------------------------------------

pub struct EnsembleOutput {
    pub name: String,
    pub chosen: String,
    pub test_pred: Array1<f64>,
    pub val_mse: f64,
    pub warnings: Vec<String>,
}

fn weights_desc(w: &EnsembleWeights) -> String {
    let ws: Vec<String> = w.weights.iter().map(|v| format_f64(*v)).collect();
    let tag = match &w.method {
        CombineMethod::Wp { lambda } => format!(",lambda={}", format_f64(*lambda)),
        CombineMethod::Dmspe { theta } => format!(",theta={}", format_f64(*theta)),
        _ => String::new(),
    };
    format!("w=[{}]{}", ws.join(" "), tag)
}

/// Combination forecasts for one window: weights from validation errors,
/// applied to the member test predictions (natural units throughout).
pub fn window_ensembles(
    cfg: &EnsembleConfig,
    fitted: &[FittedModel],
    y_val: &Array1<f64>,
) -> Result<Vec<EnsembleOutput>> {
    let m = fitted.len();
    if m < 2 || cfg.methods.is_empty() {
        return Ok(vec![]);
    }
    let t_val = y_val.len();
    let t_test = fitted[0].test_pred.len();
    let mut val = Array2::zeros((m, t_val));
    let mut test = Array2::zeros((m, t_test));
    for (i, f) in fitted.iter().enumerate() {
        val.row_mut(i).assign(&f.val_pred);
        test.row_mut(i).assign(&f.test_pred);
    }
    let mut out = vec![];
    for method in &cfg.methods {
        let mut warnings = vec![];
        let weights = match method.as_str() {
            "avg" => combine::equal_weights(m)?,
            "dmspe" => {
                let mut sq = Array2::zeros((m, t_val));
                for i in 0..m {
                    for t in 0..t_val {
                        let e = val[[i, t]] - y_val[t];
                        sq[[i, t]] = e * e;
                    }
                }
                combine::dmspe_weights(&sq, cfg.dmspe_theta)?
            }
            "op" | "wp" => {
                let lambda = if method == "op" {
                    Some(0.0)
                } else if cfg.wp_lambda > 0.0 {
                    Some(cfg.wp_lambda)
                } else {
                    None
                };
                match combine::optimize_weights(&val, y_val, lambda, cfg.cv_folds, true) {
                    Ok(w) => w,
                    Err(e) => {
                        warnings.push(format!("{method} weight solve failed ({e}); using equal weights"));
                        combine::equal_weights(m)?
                    }
                }
            }
            other => bail!("unknown ensemble method {other:?}"),
        };
        let test_pred = combine::ensemble_predict(&weights, &test)?;
        let val_pred = combine::ensemble_predict(&weights, &val)?;
        let val_mse = mse(&val_pred, y_val);
        warnings.extend(weights.warnings.clone());
        out.push(EnsembleOutput {
            name: format!("ens_{method}"),
            chosen: weights_desc(&weights),
            test_pred,
            val_mse,
            warnings,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Forecast assembly
// ---------------------------------------------------------------------------

pub struct Assembled {
    pub fs: ForecastSet,
    /// (month id, source window) per out-of-sample month, in series order.
    pub month_windows: Vec<(u32, usize)>,
}

pub fn assemble(
    panel: &PricePanel,
    plan: &WindowPlan,
    by_window: &[Vec<FittedModel>],
    ensembles: &[Vec<EnsembleOutput>],
) -> Result<Assembled> {
    if by_window.len() != plan.windows.len() {
        bail!("fit output covers {} of {} windows", by_window.len(), plan.windows.len());
    }
    let ar1 = evaluate::ar1_benchmark(panel, plan)?;
    let mut dates = vec![];
    let mut month_id = vec![];
    let mut r_next = vec![];
    let mut r_prev = vec![];
    let mut p_prev = vec![];
    let mut p_next = vec![];
    let mut rbar = vec![];
    let mut ar1_col = vec![];
    let mut preds: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut month_windows: Vec<(u32, usize)> = vec![];

    for (w, win) in plan.windows.iter().enumerate() {
        let fitted = &by_window[w];
        let mean_r: f64 =
            panel.returns[..win.val.end].iter().sum::<f64>() / win.val.end as f64;
        for (k, t) in win.test.clone().enumerate() {
            if t == 0 {
                bail!("test row 0 has no prior return");
            }
            dates.push(panel.dates[t]);
            month_id.push(panel.month_id[t]);
            r_next.push(panel.returns[t]);
            r_prev.push(panel.returns[t - 1]);
            p_prev.push(panel.prices[t]);
            p_next.push(panel.prices[t + 1]);
            rbar.push(mean_r);
            ar1_col.push(ar1.forecasts[t]);
            for f in fitted {
                preds.entry(f.name.clone()).or_default().push(f.test_pred[k]);
            }
            if let Some(ens) = ensembles.get(w) {
                for e in ens {
                    preds.entry(e.name.clone()).or_default().push(e.test_pred[k]);
                }
            }
            let mid = panel.month_id[t];
            if month_windows.last().map_or(true, |&(m, lw)| m != mid || lw != w) {
                month_windows.push((mid, w));
            }
        }
    }
    let n = dates.len();
    let mut pred_map: BTreeMap<String, Array1<f64>> = preds
        .into_iter()
        .map(|(k, v)| (k, Array1::from_vec(v)))
        .collect();
    for (name, col) in pred_map.iter() {
        if col.len() != n {
            bail!("model {name} produced {} of {n} forecasts", col.len());
        }
    }
    pred_map.insert("_bench_ar1".into(), Array1::from_vec(ar1_col.clone()));
    pred_map.insert("_bench_mean".into(), Array1::from_vec(rbar.clone()));
    let fs = ForecastSet {
        dates,
        month_id,
        r_next: Array1::from_vec(r_next),
        r_prev: Array1::from_vec(r_prev),
        p_prev: Array1::from_vec(p_prev),
        p_next: Array1::from_vec(p_next),
        rbar: Array1::from_vec(rbar),
        ar1: Array1::from_vec(ar1_col),
        preds: pred_map,
    };
    fs.validate()?;
    Ok(Assembled { fs, month_windows })
}

fn model_names(fs: &ForecastSet) -> Vec<String> {
    fs.preds.keys().filter(|k| !k.starts_with('_')).cloned().collect()
}

fn contiguous_month_groups(ids: &[u32]) -> Vec<(u32, Range<usize>)> {
    let mut out: Vec<(u32, Range<usize>)> = vec![];
    for (i, &m) in ids.iter().enumerate() {
        match out.last_mut() {
            Some((id, r)) if *id == m && r.end == i => r.end = i + 1,
            _ => out.push((m, i..i + 1)),
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Predictions I/O (full-precision interchange file)
// ---------------------------------------------------------------------------

const PRED_FIXED_COLS: [&str; 8] =
    ["date", "month", "r_next", "r_prev", "p_prev", "p_next", "rbar", "ar1"];

pub fn write_predictions(path: &Path, fs: &ForecastSet) -> Result<()> {
    let names = model_names(fs);
    let mut cols: Vec<&str> = PRED_FIXED_COLS.to_vec();
    for n in &names {
        cols.push(n);
    }
    let mut t = Table::new(&cols);
    for i in 0..fs.len() {
        let mut row = vec![
            fs.dates[i].format("%Y-%m-%d").to_string(),
            fs.month_id[i].to_string(),
            format!("{}", fs.r_next[i]),
            format!("{}", fs.r_prev[i]),
            format!("{}", fs.p_prev[i]),
            format!("{}", fs.p_next[i]),
            format!("{}", fs.rbar[i]),
            format!("{}", fs.ar1[i]),
        ];
        for n in &names {
            row.push(format!("{}", fs.preds[n][i]));
        }
        t.push(row);
    }
    report::write_csv(path, &t)
}

pub fn load_predictions(path: &Path) -> Result<ForecastSet> {
    let t = report::read_csv_table(path)?;
    if t.columns.len() < PRED_FIXED_COLS.len() + 1 {
        bail!("predictions file needs the 8 fixed columns plus ≥ 1 model column");
    }
    for (i, c) in PRED_FIXED_COLS.iter().enumerate() {
        if t.columns[i] != *c {
            bail!("predictions column {i} is {:?}, expected {c:?}", t.columns[i]);
        }
    }
    let n = t.rows.len();
    if n == 0 {
        bail!("predictions file is empty");
    }
    let fval = |row: &[String], j: usize| -> Result<f64> {
        row[j].parse::<f64>().map_err(|_| anyhow!("bad number {:?} in column {}", row[j], t.columns[j]))
    };
    let mut fs = ForecastSet {
        dates: vec![],
        month_id: vec![],
        r_next: Array1::zeros(n),
        r_prev: Array1::zeros(n),
        p_prev: Array1::zeros(n),
        p_next: Array1::zeros(n),
        rbar: Array1::zeros(n),
        ar1: Array1::zeros(n),
        preds: BTreeMap::new(),
    };
    for (i, row) in t.rows.iter().enumerate() {
        fs.dates.push(
            chrono::NaiveDate::parse_from_str(&row[0], "%Y-%m-%d")
                .map_err(|_| anyhow!("bad date {:?}", row[0]))?,
        );
        fs.month_id.push(row[1].parse().map_err(|_| anyhow!("bad month {:?}", row[1]))?);
        fs.r_next[i] = fval(row, 2)?;
        fs.r_prev[i] = fval(row, 3)?;
        fs.p_prev[i] = fval(row, 4)?;
        fs.p_next[i] = fval(row, 5)?;
        fs.rbar[i] = fval(row, 6)?;
        fs.ar1[i] = fval(row, 7)?;
    }
    for (j, name) in t.columns[8..].iter().enumerate() {
        let mut col = Array1::zeros(n);
        for (i, row) in t.rows.iter().enumerate() {
            col[i] = fval(row, 8 + j)?;
        }
        fs.preds.insert(name.clone(), col);
    }
    fs.preds.insert("_bench_ar1".into(), fs.ar1.clone());
    fs.preds.insert("_bench_mean".into(), fs.rbar.clone());
    fs.validate()?;
    Ok(fs)
}

// ---------------------------------------------------------------------------
// Derived reports
// ---------------------------------------------------------------------------

/// Per-model complexity by out-of-sample month, from the window that
/// produced that month's forecasts.
pub struct ComplexityInfo {
    /// complexity[model][month-group]
    pub by_model: BTreeMap<String, Vec<f64>>,
}

pub fn write_eval_reports(
    out: &Path,
    cfg: &RunConfig,
    fs: &ForecastSet,
    complexity: Option<&ComplexityInfo>,
    manifest: &mut RunManifest,
) -> Result<()> {
    let names = model_names(fs);
    let monthly = cfg.evaluation.monthly_tests;
    let lags = if cfg.evaluation.nw_lags == 0 { None } else { Some(cfg.evaluation.nw_lags) };

    // Out-of-sample R² against each benchmark.
    let mut r2 = Table::new(&["model", "r2_lagprice", "r2_ar1", "r2_mean", "r2_zero"]);
    for m in &names {
        let mut row = vec![m.clone()];
        for b in [Benchmark::LagPrice, Benchmark::Ar1, Benchmark::Mean, Benchmark::Zero] {
            match evaluate::r2_oos(fs, m, b, None) {
                Ok(v) => row.push(format_f64(v)),
                Err(e) => {
                    manifest.warnings.push(format!("r2 {m} vs {b:?} skipped: {e}"));
                    row.push("NaN".into());
                }
            }
        }
        r2.push(row);
    }
    report::write_csv(&out.join("r2.csv"), &r2)?;
    manifest.add_file(out, "r2.csv")?;

    let reference = if names.iter().any(|n| n == "ols") { "ols".to_string() } else { names[0].clone() };
    let mut rr = Table::new(&["model", "reference", "rrmse"]);
    for m in &names {
        match evaluate::rrmse(fs, m, &reference) {
            Ok((v, _)) => rr.push(vec![m.clone(), reference.clone(), format_f64(v)]),
            Err(e) => manifest.warnings.push(format!("rrmse {m} skipped: {e}")),
        }
    }
    report::write_csv(&out.join("rrmse.csv"), &rr)?;
    manifest.add_file(out, "rrmse.csv")?;

    // Forecast-accuracy tests: loss differentials against both benchmarks,
    // and the nested-model comparison against the mean.
    let mut dm = Table::new(&["model", "reference", "test", "scope", "stat", "p_one_sided", "p_two_sided", "n_units", "nw_lags"]);
    for m in &names {
        let cases: [(&str, &str); 3] =
            [("_bench_ar1", "dm"), ("_bench_mean", "dm"), ("_bench_mean", "cw")];
        for (bench, kind) in cases {
            let attempt = |mth: bool| match kind {
                "dm" => evaluate::dm_test(fs, bench, m, mth, lags),
                _ => evaluate::cw_test(fs, bench, m, mth, lags),
            };
            // A short sample can have too few months to test on; fall back
            // to daily units rather than dropping the comparison.
            let (res, scope) = match attempt(monthly) {
                Ok(r) => (Ok(r), if monthly { "monthly" } else { "daily" }),
                Err(_) if monthly => (attempt(false), "daily"),
                Err(e) => (Err(e), "daily"),
            };
            match res {
                Ok(r) => dm.push(vec![
                    m.clone(),
                    bench.trim_start_matches("_bench_").to_string(),
                    kind.to_string(),
                    scope.to_string(),
                    format_f64(r.stat),
                    format_f64(r.p_one_sided),
                    format_f64(r.p_two_sided),
                    r.n_units.to_string(),
                    r.nw_lags.to_string(),
                ]),
                Err(e) => manifest.warnings.push(format!("{kind} {m} vs {bench} skipped: {e}")),
            }
        }
    }
    report::write_csv(&out.join("dm.csv"), &dm)?;
    manifest.add_file(out, "dm.csv")?;

    // Trend/performance decomposition against the price-persistence benchmark.
    let mut tr = Table::new(&["model", "panel", "false_trend", "right_weak", "right_strong", "down_loss", "down_gain", "up_gain", "up_loss"]);
    for m in &names {
        let dec = evaluate::trend_decompose(fs, m, &fs.ar1)?;
        for (panel, (tf, pf)) in &dec.freq {
            let g = |map: &BTreeMap<String, f64>, k: &str| format_f64(map.get(k).copied().unwrap_or(0.0));
            tr.push(vec![
                m.clone(),
                panel.clone(),
                g(tf, "false_trend"),
                g(tf, "right_weak"),
                g(tf, "right_strong"),
                g(pf, "down_loss"),
                g(pf, "down_gain"),
                g(pf, "up_gain"),
                g(pf, "up_loss"),
            ]);
        }
    }
    report::write_csv(&out.join("trend.csv"), &tr)?;
    manifest.add_file(out, "trend.csv")?;

    // Cumulative squared-error paths.
    let mut cs_cols: Vec<&str> = vec!["date"];
    for n in &names {
        cs_cols.push(n);
    }
    let mut cs = Table::new(&cs_cols);
    let paths: Vec<Array1<f64>> =
        names.iter().map(|m| evaluate::cumsfe(fs, m)).collect::<Result<_>>()?;
    for i in 0..fs.len() {
        let mut row = vec![fs.dates[i].format("%Y-%m-%d").to_string()];
        for p in &paths {
            row.push(format_f64(p[i]));
        }
        cs.push(row);
    }
    report::write_csv(&out.join("cumsfe.csv"), &cs)?;
    manifest.add_file(out, "cumsfe.csv")?;

    // State-conditional accuracy (price-level terciles).
    if cfg.evaluation.state_source == "price" {
        let labels = dataset::classify_states(fs.p_prev.as_slice().unwrap(), "price")?;
        let states = [State::Low, State::Normal, State::High];
        let state_names = ["low", "normal", "high"];
        let mut r2s = Array2::zeros((names.len(), states.len()));
        let mut ok = true;
        for (i, m) in names.iter().enumerate() {
            for (j, st) in states.iter().enumerate() {
                let mask: Vec<bool> = labels.labels.iter().map(|l| l == st).collect();
                match evaluate::r2_oos(fs, m, Benchmark::Mean, Some(&mask)) {
                    Ok(v) => r2s[[i, j]] = v,
                    Err(e) => {
                        manifest.warnings.push(format!("state r2 {m}/{} skipped: {e}", state_names[j]));
                        r2s[[i, j]] = f64::NAN;
                        ok = false;
                    }
                }
            }
        }
        let best = if ok { evaluate::state_predictability(&names, &r2s).ok() } else { None };
        let mut st = Table::new(&["model", "state", "r2_mean", "n_days", "is_best"]);
        for (i, m) in names.iter().enumerate() {
            for (j, s) in state_names.iter().enumerate() {
                let n_days = labels.labels.iter().filter(|l| **l == states[j]).count();
                let is_best = best
                    .as_ref()
                    .map_or(false, |b| b[j].0 == *m && (b[j].1 - r2s[[i, j]]).abs() == 0.0);
                st.push(vec![
                    m.clone(),
                    s.to_string(),
                    format_f64(r2s[[i, j]]),
                    n_days.to_string(),
                    if is_best { "1".into() } else { "0".into() },
                ]);
            }
        }
        report::write_csv(&out.join("state_r2.csv"), &st)?;
        manifest.add_file(out, "state_r2.csv")?;
    }

    // Parsimony panel: monthly accuracy regressed on model complexity with
    // month and model effects removed.
    if let Some(cx) = complexity {
        let groups = contiguous_month_groups(&fs.month_id);
        let mut table = Table::new(&["model", "month", "r2_mean", "complexity"]);
        let mut r2m = Array2::zeros((names.len(), groups.len()));
        let mut cxm = Array2::zeros((names.len(), groups.len()));
        for (i, m) in names.iter().enumerate() {
            let series = cx.by_model.get(m);
            for (j, (mid, range)) in groups.iter().enumerate() {
                let mut mask = vec![false; fs.len()];
                for t in range.clone() {
                    mask[t] = true;
                }
                let r2v = evaluate::r2_oos(fs, m, Benchmark::Mean, Some(&mask)).unwrap_or(f64::NAN);
                let cxv = series.and_then(|s| s.get(j)).copied().unwrap_or(f64::NAN);
                r2m[[i, j]] = r2v;
                cxm[[i, j]] = cxv;
                table.push(vec![m.clone(), mid.to_string(), format_f64(r2v), format_f64(cxv)]);
            }
        }
        report::write_csv(&out.join("complexity.csv"), &table)?;
        manifest.add_file(out, "complexity.csv")?;
        // Combinations carry no complexity; regress only over models whose
        // series is fully observed, on months finite for all of them.
        let keep_models: Vec<usize> = (0..names.len())
            .filter(|&i| (0..groups.len()).all(|j| cxm[[i, j]].is_finite()))
            .collect();
        let keep: Vec<usize> = (0..groups.len())
            .filter(|&j| keep_models.iter().all(|&i| r2m[[i, j]].is_finite()))
            .collect();
        if keep_models.len() >= 2 && keep.len() >= 2 {
            let mut r2k = Array2::zeros((keep_models.len(), keep.len()));
            let mut cxk = Array2::zeros((keep_models.len(), keep.len()));
            for (jj, &j) in keep.iter().enumerate() {
                for (ii, &i) in keep_models.iter().enumerate() {
                    r2k[[ii, jj]] = r2m[[i, j]];
                    cxk[[ii, jj]] = cxm[[i, j]];
                }
            }
            match evaluate::complexity_panel(&r2k, &cxk) {
                Ok(fit) => {
                    let mut pf = Table::new(&["alpha1", "se_clustered", "t_stat", "n_models", "n_months"]);
                    pf.push(vec![
                        format_f64(fit.alpha1),
                        format_f64(fit.se_clustered),
                        format_f64(fit.t_stat),
                        fit.n_models.to_string(),
                        fit.n_months.to_string(),
                    ]);
                    report::write_csv(&out.join("complexity_fit.csv"), &pf)?;
                    manifest.add_file(out, "complexity_fit.csv")?;
                }
                Err(e) => manifest.warnings.push(format!("complexity panel skipped: {e}")),
            }
        } else {
            manifest.warnings.push("complexity panel skipped: not enough models or months".into());
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Panel acquisition and shared run scaffolding
// ---------------------------------------------------------------------------

pub fn acquire_panel(cfg: &RunConfig) -> Result<(PricePanel, Option<simgen::TruthRecord>)> {
    match cfg.data.source.as_str() {
        "simulate" => {
            let dgp = DgpConfig {
                model: cfg.data.model,
                t_days: cfg.data.t_days,
                p_c: cfg.data.p_c,
                p_x: cfg.data.p_x,
                seed: cfg.seed,
                eps_dof: if cfg.data.eps_dof > 0.0 { Some(cfg.data.eps_dof) } else { None },
                ..DgpConfig::default()
            };
            let (panel, truth) = simgen::simulate_dgp(&dgp)?;
            Ok((panel, Some(truth)))
        }
        "csv" => Ok((dataset::load_csv(Path::new(&cfg.data.csv_path))?, None)),
        other => bail!("unknown data.source {other:?}"),
    }
}

pub fn make_plan(cfg: &RunConfig, panel: &PricePanel) -> Result<WindowPlan> {
    match cfg.windows.mode.as_str() {
        "ratio" => {
            let [a, b, c] = cfg.windows.ratio;
            dataset::split_by_ratio(panel, (a, b, c))
        }
        "expanding" => {
            dataset::build_window_plan(panel, cfg.windows.train0_months, cfg.windows.val_months)
        }
        other => bail!("unknown windows.mode {other:?}"),
    }
}

fn timed<T>(
    manifest: &mut RunManifest,
    name: &str,
    f: impl FnOnce(&mut RunManifest) -> Result<T>,
) -> Result<T> {
    let t0 = Instant::now();
    let r = f(manifest);
    manifest.stages.push((name.to_string(), t0.elapsed().as_secs_f64()));
    if r.is_err() && manifest.failed_stage.is_none() {
        manifest.failed_stage = Some(name.to_string());
    }
    r
}

fn config_echo(cfg: &RunConfig) -> String {
    toml::to_string_pretty(cfg).unwrap_or_else(|e| format!("<unserializable config: {e}>"))
}

pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub manifest: RunManifest,
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

/// Draws a synthetic panel and saves it with its generator record.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<RunArtifacts> {
    if cfg.data.source != "simulate" {
        bail!("simulate requires data.source = \"simulate\"");
    }
    let out = Path::new(&cfg.out_dir);
    std::fs::create_dir_all(out)?;
    let mut manifest = RunManifest::new(config_echo(cfg), cfg.seed, cfg.jobs);
    let result = timed(&mut manifest, "simulate", |mf| {
        let (panel, truth) = acquire_panel(cfg)?;
        dataset::save_csv(&panel, &out.join("panel.csv"))?;
        mf.add_file(out, "panel.csv")?;
        let truth = truth.expect("simulated panel carries its truth record");
        std::fs::write(out.join("truth.json"), serde_json::to_string_pretty(&truth)?)?;
        mf.add_file(out, "truth.json")?;
        for w in &panel.warnings {
            mf.warnings.push(w.clone());
        }
        Ok(())
    });
    report::write_manifest(out, &manifest)?;
    result.map(|_| RunArtifacts { out_dir: out.to_path_buf(), manifest })
}

/// Full pipeline: data → windows → fits → ensembles → reports.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunArtifacts> {
    let out = Path::new(&cfg.out_dir).to_path_buf();
    std::fs::create_dir_all(&out)?;
    let mut manifest = RunManifest::new(config_echo(cfg), cfg.seed, cfg.jobs);
    let result = run_stages(cfg, &out, &mut manifest);
    report::write_manifest(&out, &manifest)?;
    result.map(|_| RunArtifacts { out_dir: out, manifest })
}

fn run_stages(cfg: &RunConfig, out: &Path, manifest: &mut RunManifest) -> Result<()> {
    let (panel, _truth) = timed(manifest, "data", |mf| {
        let r = acquire_panel(cfg)?;
        for w in &r.0.warnings {
            mf.warnings.push(w.clone());
        }
        Ok(r)
    })?;
    let plan = timed(manifest, "plan", |_| make_plan(cfg, &panel))?;

    let by_window = timed(manifest, "fit", |_| {
        fit_all(&panel, &plan, &cfg.models, &cfg.grids, cfg.seed, cfg.jobs)
    })?;

    let ens = timed(manifest, "ensembles", |mf| {
        let mut all = vec![];
        for (w, win) in plan.windows.iter().enumerate() {
            let y_val = Array1::from_iter(
                panel.returns[win.val.start..win.val.end].iter().copied(),
            );
            let e = window_ensembles(&cfg.ensembles, &by_window[w], &y_val)?;
            for eo in &e {
                for warn in &eo.warnings {
                    mf.warnings.push(format!("window {w} {}: {warn}", eo.name));
                }
            }
            all.push(e);
        }
        if cfg.models.len() < 2 && !cfg.ensembles.methods.is_empty() {
            mf.warnings.push("ensembles skipped: fewer than two models".into());
        }
        Ok(all)
    })?;

    for (w, fitted) in by_window.iter().enumerate() {
        for f in fitted {
            manifest.window_hparams.push(HparamRecord {
                window: w,
                model: f.name.clone(),
                chosen: f.chosen.clone(),
                val_mse: f.val_mse,
                complexity: Some(f.complexity),
            });
            for warn in &f.warnings {
                manifest.warnings.push(format!("window {w} {}: {warn}", f.name));
            }
        }
        for e in &ens[w] {
            manifest.window_hparams.push(HparamRecord {
                window: w,
                model: e.name.clone(),
                chosen: e.chosen.clone(),
                val_mse: e.val_mse,
                complexity: None,
            });
        }
    }

    let assembled = timed(manifest, "assemble", |_| assemble(&panel, &plan, &by_window, &ens))?;

    timed(manifest, "reports", |mf| {
        write_predictions(&out.join("predictions.csv"), &assembled.fs)?;
        mf.add_file(out, "predictions.csv")?;

        let mut hp = Table::new(&["window", "model", "chosen", "val_mse", "complexity"]);
        for r in &mf.window_hparams.clone() {
            hp.push(vec![
                r.window.to_string(),
                r.model.clone(),
                r.chosen.clone(),
                format_f64(r.val_mse),
                r.complexity.map(format_f64).unwrap_or_else(|| "NaN".into()),
            ]);
        }
        report::write_csv(&out.join("window_hparams.csv"), &hp)?;
        mf.add_file(out, "window_hparams.csv")?;

        let cx = complexity_by_month(&assembled, &by_window, &ens);
        write_eval_reports(out, cfg, &assembled.fs, Some(&cx), mf)
    })?;
    Ok(())
}

/// Ensemble complexity is undefined; members carry their own. Month j of a
/// model's series is the complexity chosen by the window that forecast it.
fn complexity_by_month(
    assembled: &Assembled,
    by_window: &[Vec<FittedModel>],
    ens: &[Vec<EnsembleOutput>],
) -> ComplexityInfo {
    let mut by_model: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for &(_m, w) in &assembled.month_windows {
        for f in &by_window[w] {
            by_model.entry(f.name.clone()).or_default().push(f.complexity);
        }
        for e in &ens[w] {
            by_model.entry(e.name.clone()).or_default().push(f64::NAN);
        }
    }
    ComplexityInfo { by_model }
}

/// Rebuilds the derived reports from a saved predictions file.
pub fn cmd_evaluate(cfg: &RunConfig, predictions: Option<&Path>) -> Result<RunArtifacts> {
    let out = Path::new(&cfg.out_dir).to_path_buf();
    std::fs::create_dir_all(&out)?;
    let default_path = out.join("predictions.csv");
    let pred_path = predictions.unwrap_or(&default_path).to_path_buf();
    let mut manifest = RunManifest::new(config_echo(cfg), cfg.seed, cfg.jobs);
    let result = (|| -> Result<()> {
        let fs = timed(&mut manifest, "load", |_| load_predictions(&pred_path))?;
        timed(&mut manifest, "reports", |mf| {
            write_eval_reports(&out, cfg, &fs, None, mf)?;
            mf.warnings.push("complexity reports need a full run; skipped here".into());
            Ok(())
        })
    })();
    report::write_manifest(&out, &manifest)?;
    result.map(|_| RunArtifacts { out_dir: out, manifest })
}

// ---------------------------------------------------------------------------
// Attribution
// ---------------------------------------------------------------------------

fn feature_group(name: &str) -> &'static str {
    if name == "p_t" {
        "price"
    } else if name == "s_t" {
        "season"
    } else if name.starts_with('x') && name.contains('C') {
        "interaction"
    } else if name.starts_with('C') {
        "market"
    } else if name.starts_with('x') {
        "macro"
    } else {
        "other"
    }
}

/// Feature importance by validation-R² reduction, per window and model,
/// plus group attribution (exact Shapley over feature groups, value = the
/// validation R² of the first model re-tuned on each coalition) and the
/// held-at-median marginal response of every feature.
pub fn cmd_importance(cfg: &RunConfig) -> Result<RunArtifacts> {
    let out = Path::new(&cfg.out_dir).to_path_buf();
    std::fs::create_dir_all(&out)?;
    let mut manifest = RunManifest::new(config_echo(cfg), cfg.seed, cfg.jobs);
    let result = importance_stages(cfg, &out, &mut manifest);
    report::write_manifest_as(&out, "manifest_importance.json", &manifest)?;
    result.map(|_| RunArtifacts { out_dir: out, manifest })
}

fn importance_stages(cfg: &RunConfig, out: &Path, manifest: &mut RunManifest) -> Result<()> {
    let (panel, _) = timed(manifest, "data", |_| acquire_panel(cfg))?;
    let plan = timed(manifest, "plan", |_| make_plan(cfg, &panel))?;
    let by_window = timed(manifest, "fit", |_| {
        fit_all(&panel, &plan, &cfg.models, &cfg.grids, cfg.seed, cfg.jobs)
    })?;
    let p = panel.features.ncols();
    let feat_names = panel.feature_names.clone();

    timed(manifest, "importance", |mf| {
        // Per-window R²-reduction importance on validation rows.
        let mut fi = Table::new(&["model", "feature", "raw", "normalized"]);
        let mut fi_w = Table::new(&["model", "window", "feature", "value"]);
        for (mi, mname) in cfg.models.iter().enumerate() {
            let mut per_window = Array2::zeros((plan.windows.len(), p));
            for (w, win) in plan.windows.iter().enumerate() {
                let data = prepare_window(&panel, win);
                let fitted = &by_window[w][mi];
                let predict = |x: &Array2<f64>| fitted.fit.predict(x).expect("fitted model prediction");
                match interpret::r2_reduction(&predict, &data.x_val, &data.yp_val, &(0..p).collect::<Vec<_>>()) {
                    Ok((_full, red)) => per_window.row_mut(w).assign(&red),
                    Err(e) => {
                        mf.warnings.push(format!("importance {mname} window {w} skipped: {e}"));
                    }
                }
            }
            let rep = interpret::aggregate_fi(&feat_names, &per_window)?;
            for warn in &rep.warnings {
                mf.warnings.push(format!("{mname}: {warn}"));
            }
            for j in 0..p {
                fi.push(vec![
                    mname.clone(),
                    feat_names[j].clone(),
                    format_f64(rep.raw[j]),
                    format_f64(rep.normalized[j]),
                ]);
                for w in 0..plan.windows.len() {
                    fi_w.push(vec![
                        mname.clone(),
                        w.to_string(),
                        feat_names[j].clone(),
                        format_f64(rep.per_window[[w, j]]),
                    ]);
                }
            }
        }
        report::write_csv(&out.join("fi.csv"), &fi)?;
        mf.add_file(out, "fi.csv")?;
        report::write_csv(&out.join("fi_windows.csv"), &fi_w)?;
        mf.add_file(out, "fi_windows.csv")?;
        Ok(())
    })?;

    timed(manifest, "group_shapley", |mf| {
        let groups: Vec<String> = {
            let set: BTreeSet<&str> = feat_names.iter().map(|n| feature_group(n)).collect();
            set.into_iter().map(|s| s.to_string()).collect()
        };
        if groups.len() > 12 {
            mf.warnings.push(format!("group attribution skipped: {} groups exceed the exact-enumeration cap", groups.len()));
            return Ok(());
        }
        let win = &plan.windows[0];
        let data = prepare_window(&panel, win);
        let model0 = &cfg.models[0];
        let sse_mean = {
            let ybar = data.yp_train.mean().unwrap();
            data.yp_val.iter().map(|v| (v - ybar) * (v - ybar)).sum::<f64>()
        };
        if sse_mean <= 0.0 {
            mf.warnings.push("group attribution skipped: degenerate validation target".into());
            return Ok(());
        }
        let mut values: BTreeMap<u32, f64> = BTreeMap::new();
        for mask in interpret::enumerate_coalitions(groups.len()) {
            let cols: Vec<usize> = (0..p)
                .filter(|&j| {
                    let g = feature_group(&feat_names[j]);
                    groups.iter().position(|gg| gg == g).map_or(false, |gi| mask & (1 << gi) != 0)
                })
                .collect();
            if cols.is_empty() {
                values.insert(mask, 0.0);
                continue;
            }
            let sub = WindowData {
                x_train: select_cols(&data.x_train, &cols),
                yp_train: data.yp_train.clone(),
                x_val: select_cols(&data.x_val, &cols),
                yp_val: data.yp_val.clone(),
                x_test: select_cols(&data.x_test, &cols),
                yp_test: data.yp_test.clone(),
            };
            let fitted = fit_one(model0, 0, &sub, &cfg.grids, derive_seed(cfg.seed, 0xA11, mask as u64))?;
            values.insert(mask, 1.0 - fitted.val_mse * sub.yp_val.len() as f64 / sse_mean);
        }
        let shap = interpret::shapley_group(&groups, &values)?;
        let mut t = Table::new(&["group", "phi", "self_effect", "interaction"]);
        for (i, g) in shap.names.iter().enumerate() {
            t.push(vec![
                g.clone(),
                format_f64(shap.phi[i]),
                format_f64(shap.self_effect[i]),
                format_f64(shap.interaction[i]),
            ]);
        }
        report::write_csv(&out.join("shapley_groups.csv"), &t)?;
        mf.add_file(out, "shapley_groups.csv")?;
        mf.warnings.push(format!(
            "group attribution: model={model0}, window 0, v_full={}",
            format_f64(shap.v_full)
        ));
        Ok(())
    })?;

    timed(manifest, "marginal", |mf| {
        let win = &plan.windows[0];
        let data = prepare_window(&panel, win);
        let fitted = &by_window[0][0];
        let predict = |x: &Array2<f64>| fitted.fit.predict(x).expect("fitted model prediction");
        let mut t = Table::new(&["feature", "z", "prediction_pct"]);
        for j in 0..p {
            let (grid, pred) = interpret::marginal_association(&predict, data.x_train.ncols(), j, 21)?;
            for (g, v) in grid.iter().zip(pred.iter()) {
                t.push(vec![feat_names[j].clone(), format_f64(*g), format_f64(*v)]);
            }
        }
        report::write_csv(&out.join("marginal.csv"), &t)?;
        mf.add_file(out, "marginal.csv")?;
        Ok(())
    })?;
    Ok(())
}

fn select_cols(x: &Array2<f64>, cols: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((x.nrows(), cols.len()));
    for (k, &j) in cols.iter().enumerate() {
        out.column_mut(k).assign(&x.column(j));
    }
    out
}

// ---------------------------------------------------------------------------
// Changepoints over importance paths
// ---------------------------------------------------------------------------

/// Fits the first configured model per window, tracks each feature's
/// importance across windows, and scans those series for breaks.
pub fn cmd_breaks(cfg: &RunConfig) -> Result<RunArtifacts> {
    let out = Path::new(&cfg.out_dir).to_path_buf();
    std::fs::create_dir_all(&out)?;
    let mut manifest = RunManifest::new(config_echo(cfg), cfg.seed, cfg.jobs);
    let result = breaks_stages(cfg, &out, &mut manifest);
    report::write_manifest_as(&out, "manifest_breaks.json", &manifest)?;
    result.map(|_| RunArtifacts { out_dir: out, manifest })
}

fn breaks_stages(cfg: &RunConfig, out: &Path, manifest: &mut RunManifest) -> Result<()> {
    let (panel, _) = timed(manifest, "data", |_| acquire_panel(cfg))?;
    let plan = timed(manifest, "plan", |_| make_plan(cfg, &panel))?;
    let n_w = plan.windows.len();
    if n_w < 4 {
        bail!("changepoint scan needs ≥ 4 windows, plan has {n_w}; use expanding windows over a longer panel");
    }
    let first_model = vec![cfg.models[0].clone()];
    let by_window = timed(manifest, "fit", |_| {
        fit_all(&panel, &plan, &first_model, &cfg.grids, cfg.seed, cfg.jobs)
    })?;
    let p = panel.features.ncols();

    timed(manifest, "breaks", |mf| {
        let mut per_window = Array2::zeros((n_w, p));
        for (w, win) in plan.windows.iter().enumerate() {
            let data = prepare_window(&panel, win);
            let fitted = &by_window[w][0];
            let predict = |x: &Array2<f64>| fitted.fit.predict(x).expect("fitted model prediction");
            let (_full, red) = interpret::r2_reduction(
                &predict,
                &data.x_val,
                &data.yp_val,
                &(0..p).collect::<Vec<_>>(),
            )?;
            per_window.row_mut(w).assign(&red);
        }
        let mut t = Table::new(&["feature", "n_breaks", "breakpoints", "pettitt_index", "pettitt_k", "pettitt_p"]);
        let mut hist = vec![0usize; n_w];
        for j in 0..p {
            let series: Vec<f64> = (0..n_w).map(|w| per_window[[w, j]]).collect();
            match crate::breaks::analyze_series(&panel.feature_names[j], &series, None, None, 2) {
                Ok(rep) => {
                    for &b in &rep.pelt_breakpoints {
                        hist[b] += 1;
                    }
                    t.push(vec![
                        panel.feature_names[j].clone(),
                        rep.pelt_breakpoints.len().to_string(),
                        rep.pelt_breakpoints.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(";"),
                        rep.pettitt.index.to_string(),
                        format_f64(rep.pettitt.k_stat),
                        format_f64(rep.pettitt.p_value),
                    ]);
                }
                Err(e) => mf.warnings.push(format!("breaks for {} skipped: {e}", panel.feature_names[j])),
            }
        }
        report::write_csv(&out.join("breaks.csv"), &t)?;
        mf.add_file(out, "breaks.csv")?;
        let mut h = Table::new(&["window", "n_breaks"]);
        for (w, &c) in hist.iter().enumerate() {
            h.push(vec![w.to_string(), c.to_string()]);
        }
        report::write_csv(&out.join("breaks_hist.csv"), &h)?;
        mf.add_file(out, "breaks_hist.csv")?;
        Ok(())
    })?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Portfolio utility
// ---------------------------------------------------------------------------

/// Volatility-scaled mean-variance portfolios per model and risk aversion,
/// with conditional variances from an asymmetric GARCH fit to the realized
/// out-of-sample returns.
pub fn cmd_portfolio(cfg: &RunConfig, predictions: Option<&Path>) -> Result<RunArtifacts> {
    let out = Path::new(&cfg.out_dir).to_path_buf();
    std::fs::create_dir_all(&out)?;
    let default_path = out.join("predictions.csv");
    let pred_path = predictions.unwrap_or(&default_path).to_path_buf();
    let mut manifest = RunManifest::new(config_echo(cfg), cfg.seed, cfg.jobs);
    let result = portfolio_stages(cfg, &out, &pred_path, &mut manifest);
    report::write_manifest_as(&out, "manifest_portfolio.json", &manifest)?;
    result.map(|_| RunArtifacts { out_dir: out, manifest })
}

fn portfolio_stages(cfg: &RunConfig, out: &Path, pred_path: &Path, manifest: &mut RunManifest) -> Result<()> {
    let fs = timed(manifest, "load", |_| load_predictions(pred_path))?;
    let garch = timed(manifest, "garch", |mf| {
        let mean = fs.r_next.mean().unwrap();
        let eps: Vec<f64> = fs.r_next.iter().map(|r| (r - mean) * 100.0).collect();
        let fit = crate::econ::fit_gjr_garch(&eps)?;
        for w in &fit.warnings {
            mf.warnings.push(format!("garch: {w}"));
        }
        mf.warnings.push(
            "variance model fit on the full out-of-sample span; variance paths are in-sample one-step forecasts".into(),
        );
        let proxy: Vec<f64> = eps.iter().map(|e| (e * e).max(1e-12)).collect();
        let (mse_v, qlike) = crate::econ::variance_losses(&proxy, &fit.h)?;
        let mut t = Table::new(&["omega", "alpha", "beta", "gamma_lev", "loglik", "converged", "mse_proxy", "qlike_proxy"]);
        t.push(vec![
            format_f64(fit.omega),
            format_f64(fit.alpha[0]),
            format_f64(fit.beta[0]),
            format_f64(fit.gamma_lev[0]),
            format_f64(fit.loglik),
            if fit.converged { "1".into() } else { "0".into() },
            format_f64(mse_v),
            format_f64(qlike),
        ]);
        report::write_csv(&out.join("garch.csv"), &t)?;
        mf.add_file(out, "garch.csv")?;
        Ok(fit)
    })?;

    timed(manifest, "portfolio", |mf| {
        let n = fs.len();
        let variances: Vec<f64> = garch.h.iter().map(|h| h / 1e4).collect();
        let realized: Vec<f64> = fs.r_next.to_vec();
        let rf = vec![cfg.portfolio.risk_free; n];
        let clip = if cfg.portfolio.weight_clip > 0.0 { Some(cfg.portfolio.weight_clip) } else { None };
        let mut t = Table::new(&["model", "gamma_ra", "avg_weight", "sd_weight", "mean_daily_utility", "cer", "clipped_days"]);
        for m in model_names(&fs) {
            let forecasts: Vec<f64> = fs.preds[&m].to_vec();
            for &g in &cfg.portfolio.gamma_ra {
                let rep = crate::econ::mv_portfolio(&forecasts, &realized, &variances, &rf, g, clip)?;
                for w in &rep.warnings {
                    mf.warnings.push(format!("portfolio {m} gamma={g}: {w}"));
                }
                t.push(vec![
                    m.clone(),
                    format_f64(g),
                    format_f64(rep.avg_weight),
                    format_f64(rep.sd_weight),
                    format_f64(rep.utility_daily_mean),
                    format_f64(rep.cer),
                    rep.clipped_days.to_string(),
                ]);
            }
        }
        report::write_csv(&out.join("portfolio.csv"), &t)?;
        mf.add_file(out, "portfolio.csv")?;
        Ok(())
    })?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Digest verification
// ---------------------------------------------------------------------------

/// Re-digests every file in the run manifest; returns the mismatches.
pub fn cmd_report(cfg: &RunConfig) -> Result<Vec<String>> {
    let out = Path::new(&cfg.out_dir);
    let manifest = report::read_manifest(out)?;
    if let Some(stage) = &manifest.failed_stage {
        bail!("run failed during stage {stage:?}; reports are partial");
    }
    report::verify_digests(out, &manifest)
}
