//! Regression trees and tree ensembles: exact-greedy CART, bagged random
//! forests, and gradient boosting with level-wise or leaf-wise growth and
//! MSE or Huber objectives.
//!
//! One builder serves every family: it minimizes the second-order objective
//! with per-leaf values θ = −G/(H+λ). CART is the special case g = −y, h = 1,
//! λ = 0, where θ is the leaf mean and split gain is half the SSE reduction,
//! so split orderings and tie-breaks coincide exactly.

use anyhow::{bail, Result};
use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Flat-arena tree. `feature[k] < 0` marks node k a leaf with value
/// `value[k]`; internal nodes route x ≤ threshold left.
#[derive(Debug, Clone)]
pub struct Tree {
    pub feature: Vec<i32>,
    pub threshold: Vec<f64>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    pub value: Vec<f64>,
    /// SSE-unit gain of each internal node's split (2× the builder gain).
    pub split_gain: Vec<f64>,
}

impl Tree {
    pub fn n_leaves(&self) -> usize {
        self.feature.iter().filter(|&&f| f < 0).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, k: usize) -> usize {
            if t.feature[k] < 0 {
                0
            } else {
                1 + walk(t, t.left[k] as usize).max(walk(t, t.right[k] as usize))
            }
        }
        walk(self, 0)
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut k = 0usize;
        while self.feature[k] >= 0 {
            k = if row[self.feature[k] as usize] <= self.threshold[k] {
                self.left[k] as usize
            } else {
                self.right[k] as usize
            };
        }
        self.value[k]
    }

    pub fn predict(&self, x: &Array2<f64>) -> Array1<f64> {
        let p = x.ncols();
        let xs = x.as_slice().expect("standard-layout design");
        Array1::from_shape_fn(x.nrows(), |i| self.predict_row(&xs[i * p..(i + 1) * p]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Rf,
    BoostLevel,
    BoostLeaf,
}

#[derive(Debug, Clone, Copy)]
pub enum Loss {
    Mse,
    /// Piecewise quadratic/linear with threshold ξ.
    Huber(f64),
}

/// Fitted ensemble. Prediction is `base + scale·Σ tree(x)` with scale = η
/// for boosting and 1/B for forests.
#[derive(Debug, Clone)]
pub struct TreeEnsemble {
    pub trees: Vec<Tree>,
    pub mode: Mode,
    pub base: f64,
    pub eta: f64,
    pub loss: Loss,
    /// Per-round validation MSE when a validation set was supplied; index b
    /// is the error of the (b+1)-tree prefix, so one fit serves every tree
    /// count on the grid.
    pub val_curve: Option<Vec<f64>>,
    pub avg_leaf_count: f64,
    pub warnings: Vec<String>,
}

impl TreeEnsemble {
    pub fn predict(&self, x: &Array2<f64>) -> Array1<f64> {
        self.predict_prefix(x, self.trees.len())
    }

    /// Prediction using only the first `n_trees` rounds (boosting prefixes).
    pub fn predict_prefix(&self, x: &Array2<f64>, n_trees: usize) -> Array1<f64> {
        let scale = match self.mode {
            Mode::Rf => 1.0 / n_trees as f64,
            _ => self.eta,
        };
        let mut out = Array1::from_elem(x.nrows(), self.base);
        for tree in self.trees.iter().take(n_trees) {
            let tp = tree.predict(x);
            out.scaled_add(scale, &tp);
        }
        out
    }

    /// Number of distinct features used by any split (the complexity
    /// regressor for tree families).
    pub fn distinct_features(&self) -> usize {
        let mut seen = std::collections::BTreeSet::new();
        for t in &self.trees {
            for &f in &t.feature {
                if f >= 0 {
                    seen.insert(f);
                }
            }
        }
        seen.len()
    }

    /// Mean-decrease-gain importance: per feature, the summed SSE-unit gain
    /// of every split on it across the ensemble.
    pub fn mdg(&self, n_features: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_features];
        for t in &self.trees {
            for k in 0..t.feature.len() {
                if t.feature[k] >= 0 {
                    out[t.feature[k] as usize] += t.split_gain[k];
                }
            }
        }
        out
    }
}

pub fn huber_loss(res: f64, xi: f64) -> f64 {
    if res.abs() <= xi {
        0.5 * res * res
    } else {
        xi * res.abs() - 0.5 * xi * xi
    }
}

/// (gradient, hessian) of the loss wrt the prediction, at residual res.
pub fn huber_grad_hess(res: f64, xi: f64) -> (f64, f64) {
    if res.abs() <= xi {
        (-res, 1.0)
    } else {
        (-xi * res.signum(), 0.0)
    }
}

/// Huber threshold from a preliminary mean model: max(q-quantile of
/// |y − ȳ|, 1).
pub fn huber_xi(y: &Array1<f64>, q: f64) -> f64 {
    let ybar = y.mean().unwrap();
    let mut abs: Vec<f64> = y.iter().map(|v| (v - ybar).abs()).collect();
    abs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    crate::stats::quantile_sorted(&abs, q).max(1.0)
}

struct Growth {
    max_depth: usize, // level-wise cap (0 = unused)
    max_leaves: usize,
    leaf_wise: bool,
}

struct BuildCfg<'a> {
    growth: Growth,
    min_leaf: f64,
    lambda: f64,
    /// Per-split feature subsampling: Some(k) draws k features per node.
    max_features: Option<usize>,
    rng: Option<&'a mut ChaCha8Rng>,
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: i32,
    threshold: f64,
    left_g: f64,
    left_h: f64,
    left_n: f64,
}

const NO_CAND: Candidate = Candidate {
    gain: 0.0,
    feature: -1,
    threshold: 0.0,
    left_g: 0.0,
    left_h: 0.0,
    left_n: 0.0,
};

fn leaf_value(g: f64, h: f64, lambda: f64) -> f64 {
    let denom = h + lambda;
    if denom <= 1e-9 {
        0.0
    } else {
        -g / denom
    }
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    let denom = h + lambda;
    if denom <= 1e-9 {
        0.0
    } else {
        g * g / denom
    }
}

/// Builds one tree on weighted (g, h) statistics. `sorted` holds, per
/// feature, the sample indices ascending by feature value; `w` is the
/// per-sample multiplicity (bootstrap count, 0 = out of bag).
fn build_tree(
    xs: &[f64],
    p: usize,
    sorted: &[Vec<u32>],
    g: &[f64],
    h: &[f64],
    w: &[f64],
    cfg: &mut BuildCfg,
) -> Tree {
    let n_samples = w.len();
    let mut tree = Tree {
        feature: vec![],
        threshold: vec![],
        left: vec![],
        right: vec![],
        value: vec![],
        split_gain: vec![],
    };
    // Root statistics.
    let (mut rg, mut rh, mut rn) = (0.0, 0.0, 0.0);
    for i in 0..n_samples {
        if w[i] > 0.0 {
            rg += w[i] * g[i];
            rh += w[i] * h[i];
            rn += w[i];
        }
    }
    tree.feature.push(-1);
    tree.threshold.push(0.0);
    tree.left.push(0);
    tree.right.push(0);
    tree.value.push(leaf_value(rg, rh, cfg.lambda));
    tree.split_gain.push(0.0);

    // node_of: current leaf each in-bag sample sits in.
    let mut node_of: Vec<u32> = vec![0; n_samples];
    // Per-leaf bookkeeping, indexed by node id.
    let mut stats: Vec<(f64, f64, f64)> = vec![(rg, rh, rn)];
    let mut depth_of: Vec<usize> = vec![0];
    let mut subset_of: Vec<Option<Vec<usize>>> = vec![draw_subset(cfg, p)];

    // Scan state arrays, reused across features.
    let min_leaf = cfg.min_leaf;
    let lambda = cfg.lambda;
    let n_nodes_cap = 64;
    let mut pg = vec![0.0; n_nodes_cap];
    let mut ph = vec![0.0; n_nodes_cap];
    let mut pn = vec![0.0; n_nodes_cap];
    let mut last = vec![0.0; n_nodes_cap];
    let mut seen = vec![false; n_nodes_cap];
    let mut best: Vec<Candidate> = vec![NO_CAND; n_nodes_cap];

    // Finds the best split for every node in `active` in one pass per
    // feature over the global sort order.
    let scan = |active: &[u32],
                    node_of: &[u32],
                    stats: &[(f64, f64, f64)],
                    subset_of: &[Option<Vec<usize>>],
                    best: &mut [Candidate],
                    pg: &mut [f64],
                    ph: &mut [f64],
                    pn: &mut [f64],
                    last: &mut [f64],
                    seen: &mut [bool]| {
        let mut is_active = vec![false; stats.len()];
        for &nid in active {
            is_active[nid as usize] = true;
            best[nid as usize] = NO_CAND;
        }
        for f in 0..p {
            for &nid in active {
                let nid = nid as usize;
                pg[nid] = 0.0;
                ph[nid] = 0.0;
                pn[nid] = 0.0;
                seen[nid] = false;
            }
            for &iu in &sorted[f] {
                let i = iu as usize;
                if w[i] <= 0.0 {
                    continue;
                }
                let nid = node_of[i] as usize;
                if !is_active[nid] {
                    continue;
                }
                if let Some(sub) = &subset_of[nid] {
                    if !sub.contains(&f) {
                        continue;
                    }
                }
                let v = xs[i * p + f];
                if seen[nid] && v > last[nid] {
                    let (tg, th, tn) = stats[nid];
                    let (lg, lh, ln) = (pg[nid], ph[nid], pn[nid]);
                    let (rg2, rh2, rn2) = (tg - lg, th - lh, tn - ln);
                    if ln >= min_leaf && rn2 >= min_leaf {
                        let gain = 0.5
                            * (score(lg, lh, lambda) + score(rg2, rh2, lambda)
                                - score(tg, th, lambda));
                        // Strictly-better keeps the lowest feature index and
                        // lowest threshold on ties (scan order is ascending
                        // in both).
                        if gain > best[nid].gain {
                            best[nid] = Candidate {
                                gain,
                                feature: f as i32,
                                threshold: 0.5 * (last[nid] + v),
                                left_g: lg,
                                left_h: lh,
                                left_n: ln,
                            };
                        }
                    }
                }
                pg[nid] += w[i] * g[i];
                ph[nid] += w[i] * h[i];
                pn[nid] += w[i];
                last[nid] = v;
                seen[nid] = true;
            }
        }
    };

    let apply_split = |tree: &mut Tree,
                       stats: &mut Vec<(f64, f64, f64)>,
                       depth_of: &mut Vec<usize>,
                       subset_of: &mut Vec<Option<Vec<usize>>>,
                       node_of: &mut [u32],
                       cfg: &mut BuildCfg,
                       nid: usize,
                       cand: Candidate|
     -> (u32, u32) {
        let lid = tree.feature.len() as u32;
        let rid = lid + 1;
        let (tg, th, tn) = stats[nid];
        tree.feature[nid] = cand.feature;
        tree.threshold[nid] = cand.threshold;
        tree.left[nid] = lid;
        tree.right[nid] = rid;
        tree.split_gain[nid] = 2.0 * cand.gain;
        let (lg, lh, ln) = (cand.left_g, cand.left_h, cand.left_n);
        let (rg2, rh2, rn2) = (tg - lg, th - lh, tn - ln);
        for (gg, hh) in [(lg, lh), (rg2, rh2)] {
            tree.feature.push(-1);
            tree.threshold.push(0.0);
            tree.left.push(0);
            tree.right.push(0);
            tree.value.push(leaf_value(gg, hh, cfg.lambda));
            tree.split_gain.push(0.0);
        }
        stats.push((lg, lh, ln));
        stats.push((rg2, rh2, rn2));
        let d = depth_of[nid] + 1;
        depth_of.push(d);
        depth_of.push(d);
        let p_all = p;
        subset_of.push(draw_subset(cfg, p_all));
        subset_of.push(draw_subset(cfg, p_all));
        for i in 0..n_samples {
            if w[i] > 0.0 && node_of[i] as usize == nid {
                node_of[i] = if xs[i * p + cand.feature as usize] <= cand.threshold {
                    lid
                } else {
                    rid
                };
            }
        }
        (lid, rid)
    };

    if cfg.growth.leaf_wise {
        // Expand the highest-gain leaf until the leaf cap.
        let mut n_leaves = 1usize;
        let mut frontier: Vec<u32> = vec![0];
        scan(
            &frontier, &node_of, &stats, &subset_of, &mut best, &mut pg, &mut ph, &mut pn,
            &mut last, &mut seen,
        );
        let mut cand_of: Vec<Candidate> = vec![best[0]];
        let mut leaf_ids: Vec<u32> = vec![0];
        while n_leaves < cfg.growth.max_leaves {
            // Best expandable leaf; ties go to the earliest-created node.
            let mut pick: Option<usize> = None;
            for (slot, &nid) in leaf_ids.iter().enumerate() {
                let c = cand_of[slot];
                if c.feature >= 0 && c.gain > 0.0 {
                    let better = match pick {
                        None => true,
                        Some(ps) => c.gain > cand_of[ps].gain,
                    };
                    if better {
                        pick = Some(slot);
                    }
                }
                let _ = nid;
            }
            let Some(slot) = pick else { break };
            let nid = leaf_ids[slot] as usize;
            let cand = cand_of[slot];
            let (lid, rid) = apply_split(
                &mut tree,
                &mut stats,
                &mut depth_of,
                &mut subset_of,
                &mut node_of,
                cfg,
                nid,
                cand,
            );
            leaf_ids.swap_remove(slot);
            cand_of.swap_remove(slot);
            frontier.clear();
            frontier.push(lid);
            frontier.push(rid);
            // Grow the reusable scan arrays if needed.
            let need = stats.len();
            if pg.len() < need {
                pg.resize(need, 0.0);
                ph.resize(need, 0.0);
                pn.resize(need, 0.0);
                last.resize(need, 0.0);
                seen.resize(need, false);
                best.resize(need, NO_CAND);
            }
            scan(
                &frontier, &node_of, &stats, &subset_of, &mut best, &mut pg, &mut ph, &mut pn,
                &mut last, &mut seen,
            );
            leaf_ids.push(lid);
            cand_of.push(best[lid as usize]);
            leaf_ids.push(rid);
            cand_of.push(best[rid as usize]);
            n_leaves += 1;
        }
    } else {
        // Level-wise: split every frontier node each round until the depth
        // cap.
        let mut frontier: Vec<u32> = vec![0];
        for _ in 0..cfg.growth.max_depth {
            if frontier.is_empty() {
                break;
            }
            let need = stats.len() + 2 * frontier.len();
            if pg.len() < need {
                pg.resize(need, 0.0);
                ph.resize(need, 0.0);
                pn.resize(need, 0.0);
                last.resize(need, 0.0);
                seen.resize(need, false);
                best.resize(need, NO_CAND);
            }
            scan(
                &frontier, &node_of, &stats, &subset_of, &mut best, &mut pg, &mut ph, &mut pn,
                &mut last, &mut seen,
            );
            let mut next = vec![];
            for &nid in &frontier {
                let cand = best[nid as usize];
                if cand.feature >= 0 && cand.gain > 0.0 {
                    let (lid, rid) = apply_split(
                        &mut tree,
                        &mut stats,
                        &mut depth_of,
                        &mut subset_of,
                        &mut node_of,
                        cfg,
                        nid as usize,
                        cand,
                    );
                    next.push(lid);
                    next.push(rid);
                }
            }
            frontier = next;
        }
    }
    tree
}

fn draw_subset(cfg: &mut BuildCfg, p: usize) -> Option<Vec<usize>> {
    let k = cfg.max_features?;
    if k >= p {
        return None;
    }
    let rng = cfg.rng.as_deref_mut().expect("feature subsampling needs an rng");
    // Partial Fisher–Yates for k distinct indices.
    let mut pool: Vec<usize> = (0..p).collect();
    for i in 0..k {
        let j = rng.gen_range(i..p);
        pool.swap(i, j);
    }
    let mut sub = pool[..k].to_vec();
    sub.sort_unstable();
    Some(sub)
}

fn presort(x: &Array2<f64>) -> Vec<Vec<u32>> {
    let (n, p) = (x.nrows(), x.ncols());
    let xs = x.as_slice().expect("standard-layout design");
    (0..p)
        .map(|f| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| {
                xs[a as usize * p + f].partial_cmp(&xs[b as usize * p + f]).unwrap()
            });
            idx
        })
        .collect()
}

fn check_xy(x: &Array2<f64>, y: &Array1<f64>) -> Result<()> {
    if x.nrows() == 0 || x.ncols() == 0 {
        bail!("empty design");
    }
    if x.nrows() != y.len() {
        bail!("design has {} rows but response has {}", x.nrows(), y.len());
    }
    Ok(())
}

/// Single exact-greedy CART regression tree; leaves are member means.
pub fn fit_cart(x: &Array2<f64>, y: &Array1<f64>, max_depth: usize, min_leaf: usize) -> Result<Tree> {
    check_xy(x, y)?;
    if x.nrows() < 2 * min_leaf {
        bail!("need at least {} rows for min_leaf {}", 2 * min_leaf, min_leaf);
    }
    let n = x.nrows();
    let p = x.ncols();
    let xs = x.as_slice().unwrap();
    let sorted = presort(x);
    let g: Vec<f64> = y.iter().map(|v| -v).collect();
    let h = vec![1.0; n];
    let w = vec![1.0; n];
    let mut cfg = BuildCfg {
        growth: Growth { max_depth, max_leaves: usize::MAX, leaf_wise: false },
        min_leaf: min_leaf as f64,
        lambda: 0.0,
        max_features: None,
        rng: None,
    };
    Ok(build_tree(xs, p, &sorted, &g, &h, &w, &mut cfg))
}

#[derive(Debug, Clone)]
pub struct RfParams {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Features drawn per split.
    pub max_features: usize,
    pub min_leaf: usize,
    /// Test hook: false fits every tree on the full sample.
    pub bootstrap: bool,
    pub seed: u64,
}

/// Bagged random forest; each tree gets its own RNG stream so fits are
/// reproducible regardless of scheduling.
pub fn fit_random_forest(x: &Array2<f64>, y: &Array1<f64>, params: &RfParams) -> Result<TreeEnsemble> {
    check_xy(x, y)?;
    if params.n_trees == 0 || params.max_features == 0 {
        bail!("n_trees and max_features must be ≥ 1");
    }
    let n = x.nrows();
    let p = x.ncols();
    let xs = x.as_slice().unwrap();
    let sorted = presort(x);
    let g: Vec<f64> = y.iter().map(|v| -v).collect();
    let h = vec![1.0; n];
    let trees: Vec<Tree> = (0..params.n_trees)
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(b as u64 + 1);
            let mut w = vec![0.0; n];
            if params.bootstrap {
                for _ in 0..n {
                    w[rng.gen_range(0..n)] += 1.0;
                }
            } else {
                w.fill(1.0);
            }
            let mut cfg = BuildCfg {
                growth: Growth {
                    max_depth: params.max_depth,
                    max_leaves: usize::MAX,
                    leaf_wise: false,
                },
                min_leaf: params.min_leaf as f64,
                lambda: 0.0,
                max_features: Some(params.max_features),
                rng: Some(&mut rng),
            };
            build_tree(xs, p, &sorted, &g, &h, &w, &mut cfg)
        })
        .collect();
    let avg_leaf = trees.iter().map(|t| t.n_leaves() as f64).sum::<f64>() / trees.len() as f64;
    Ok(TreeEnsemble {
        trees,
        mode: Mode::Rf,
        base: 0.0,
        eta: 1.0,
        loss: Loss::Mse,
        val_curve: None,
        avg_leaf_count: avg_leaf,
        warnings: vec![],
    })
}

#[derive(Debug, Clone)]
pub struct GbmParams {
    pub n_trees: usize,
    pub eta: f64,
    /// Depth cap for level-wise growth; leaf cap for leaf-wise.
    pub max_depth: usize,
    pub max_leaves: usize,
    pub leaf_wise: bool,
    pub min_leaf: usize,
    /// L2 on leaf values.
    pub lambda: f64,
    pub loss: Loss,
}

/// Gradient boosting from first/second-order loss statistics. Starts from
/// the training mean; each round fits a tree to (g, h) at the current
/// prediction and advances by η·tree. Supplying a validation set fills
/// `val_curve` with the per-prefix validation MSE.
pub fn fit_gbm(
    x: &Array2<f64>,
    y: &Array1<f64>,
    params: &GbmParams,
    val: Option<(&Array2<f64>, &Array1<f64>)>,
) -> Result<TreeEnsemble> {
    check_xy(x, y)?;
    if params.n_trees == 0 || params.eta <= 0.0 || params.eta > 1.0 {
        bail!("need n_trees ≥ 1 and eta in (0,1]");
    }
    let n = x.nrows();
    let p = x.ncols();
    let xs = x.as_slice().unwrap();
    let sorted = presort(x);
    let base = y.mean().unwrap();
    let mut pred: Vec<f64> = vec![base; n];
    let mut val_pred: Option<Vec<f64>> = val.map(|(xv, _)| vec![base; xv.nrows()]);
    let mut val_curve = val.map(|_| Vec::with_capacity(params.n_trees));
    let w = vec![1.0; n];
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut warnings = vec![];

    for _ in 0..params.n_trees {
        let mut max_abs_g = 0.0f64;
        for i in 0..n {
            let res = y[i] - pred[i];
            let (gi, hi) = match params.loss {
                Loss::Mse => (-res, 1.0),
                Loss::Huber(xi) => huber_grad_hess(res, xi),
            };
            g[i] = gi;
            h[i] = hi;
            max_abs_g = max_abs_g.max(gi.abs());
        }
        if max_abs_g < 1e-14 {
            warnings.push(format!(
                "gradients vanished after {} trees; remaining rounds skipped",
                trees.len()
            ));
            break;
        }
        let mut cfg = BuildCfg {
            growth: Growth {
                max_depth: params.max_depth,
                max_leaves: if params.leaf_wise { params.max_leaves } else { usize::MAX },
                leaf_wise: params.leaf_wise,
            },
            min_leaf: params.min_leaf as f64,
            lambda: params.lambda,
            max_features: None,
            rng: None,
        };
        let tree = build_tree(xs, p, &sorted, &g, &h, &w, &mut cfg);
        for i in 0..n {
            pred[i] += params.eta * tree.predict_row(&xs[i * p..(i + 1) * p]);
        }
        if let (Some(vp), Some(curve), Some((xv, yv))) =
            (val_pred.as_mut(), val_curve.as_mut(), val)
        {
            let pv = tree.predict(xv);
            let mut mse = 0.0;
            for i in 0..vp.len() {
                vp[i] += params.eta * pv[i];
                let d = yv[i] - vp[i];
                mse += d * d;
            }
            curve.push(mse / vp.len() as f64);
        }
        trees.push(tree);
    }
    let avg_leaf = if trees.is_empty() {
        1.0
    } else {
        trees.iter().map(|t| t.n_leaves() as f64).sum::<f64>() / trees.len() as f64
    };
    Ok(TreeEnsemble {
        trees,
        mode: if params.leaf_wise { Mode::BoostLeaf } else { Mode::BoostLevel },
        base,
        eta: params.eta,
        loss: params.loss,
        val_curve,
        avg_leaf_count: avg_leaf,
        warnings,
    })
}
