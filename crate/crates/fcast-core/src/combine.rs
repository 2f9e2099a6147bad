//! Forecast combination: equal weights, discounted-MSPE weights,
//! simplex-constrained MSE-optimal weights, and the correlation-penalized
//! weight optimizer with block cross-validated penalty selection.

use anyhow::{bail, Result};
use ndarray::{Array1, Array2};

#[derive(Debug, Clone, PartialEq)]
pub enum CombineMethod {
    Avg,
    /// MSE-optimal weights (penalty 0).
    Op,
    /// Correlation-penalized weights at the given λ.
    Wp { lambda: f64 },
    Dmspe { theta: f64 },
}

#[derive(Debug, Clone)]
pub struct EnsembleWeights {
    pub weights: Vec<f64>,
    pub method: CombineMethod,
    pub window_id: u32,
    pub warnings: Vec<String>,
}

impl EnsembleWeights {
    pub fn check_simplex(&self) -> bool {
        let s: f64 = self.weights.iter().sum();
        (s - 1.0).abs() < 1e-9 && self.weights.iter().all(|w| w.is_finite())
    }
}

pub fn equal_weights(n_models: usize) -> Result<EnsembleWeights> {
    if n_models == 0 {
        bail!("need at least one model");
    }
    Ok(EnsembleWeights {
        weights: vec![1.0 / n_models as f64; n_models],
        method: CombineMethod::Avg,
        window_id: 0,
        warnings: vec![],
    })
}

/// Discounted mean squared prediction error weights: φ_m sums the squared
/// errors with discount θ^(T−t), and w_m ∝ 1/φ_m. A model with zero
/// discounted error takes all the weight (ties split equally).
pub fn dmspe_weights(val_sq_errors: &Array2<f64>, theta: f64) -> Result<EnsembleWeights> {
    let (m, t) = val_sq_errors.dim();
    if m == 0 || t == 0 {
        bail!("need at least one model and one validation day");
    }
    if !(0.0 < theta && theta <= 1.0) {
        bail!("theta must lie in (0,1], got {theta}");
    }
    let mut phi = vec![0.0; m];
    for (j, acc) in phi.iter_mut().enumerate() {
        for tt in 0..t {
            *acc += theta.powi((t - 1 - tt) as i32) * val_sq_errors[[j, tt]];
        }
    }
    let zeros: Vec<usize> = (0..m).filter(|&j| phi[j] == 0.0).collect();
    let weights = if !zeros.is_empty() {
        let w = 1.0 / zeros.len() as f64;
        (0..m).map(|j| if zeros.contains(&j) { w } else { 0.0 }).collect()
    } else {
        let inv: Vec<f64> = phi.iter().map(|&p| 1.0 / p).collect();
        let s: f64 = inv.iter().sum();
        inv.iter().map(|&v| v / s).collect()
    };
    Ok(EnsembleWeights {
        weights,
        method: CombineMethod::Dmspe { theta },
        window_id: 0,
        warnings: vec![],
    })
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut css = 0.0;
    let mut rho = 0;
    let mut tau = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        css += uj;
        let t = (css - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            rho = j + 1;
            tau = t;
        }
    }
    let _ = rho;
    v.iter().map(|&x| (x - tau).max(0.0)).collect()
}

/// Projection onto the affine set Σw = 1 (sign-unconstrained variant).
fn project_affine(v: &[f64]) -> Vec<f64> {
    let shift = (v.iter().sum::<f64>() - 1.0) / v.len() as f64;
    v.iter().map(|&x| x - shift).collect()
}

/// Pearson correlations of the model prediction series; rows that are
/// constant get all their entries zeroed (with a note pushed to
/// `warnings`).
fn prediction_correlations(preds: &Array2<f64>, warnings: &mut Vec<String>) -> Array2<f64> {
    let m = preds.nrows();
    let rows: Vec<Vec<f64>> = (0..m).map(|j| preds.row(j).to_vec()).collect();
    let mut degenerate = vec![false; m];
    for (j, row) in rows.iter().enumerate() {
        if crate::linalg::variance(row).sqrt() <= 1e-12 {
            degenerate[j] = true;
            warnings.push(format!(
                "model {j} produced a constant validation series; its correlations were set to 0"
            ));
        }
    }
    Array2::from_shape_fn((m, m), |(a, b)| {
        if degenerate[a] || degenerate[b] {
            0.0
        } else if a == b {
            1.0
        } else {
            crate::linalg::pearson(&rows[a], &rows[b]).unwrap_or(0.0)
        }
    })
}

struct QuadObjective {
    gram: Array2<f64>, // G + λρ
    lin: Array1<f64>,  // A·r
    ssr: f64,
}

impl QuadObjective {
    fn value(&self, w: &Array1<f64>) -> f64 {
        self.ssr - 2.0 * w.dot(&self.lin) + w.dot(&self.gram.dot(w))
    }

    fn grad(&self, w: &Array1<f64>) -> Array1<f64> {
        2.0 * (self.gram.dot(w) - &self.lin)
    }
}

/// Minimizes Σ_t (r_t − Σ_m w_m p_mt)² + λ wᵀρw over the weight set by
/// projected gradient descent with backtracking from the equal-weight
/// start. `simplex` false relaxes the sign constraint to Σw = 1 only.
fn solve_weights_at(
    preds: &Array2<f64>,
    truth: &Array1<f64>,
    lambda: f64,
    simplex: bool,
) -> (Vec<f64>, Vec<String>) {
    let m = preds.nrows();
    let mut warnings = vec![];
    if m == 1 {
        return (vec![1.0], warnings);
    }
    let rho = prediction_correlations(preds, &mut warnings);
    let gram = preds.dot(&preds.t()) + &rho.mapv(|v| lambda * v);
    let lin = preds.dot(truth);
    let obj = QuadObjective { gram, lin, ssr: truth.dot(truth) };

    let project = |v: &[f64]| if simplex { project_simplex(v) } else { project_affine(v) };
    let mut w = Array1::from_elem(m, 1.0 / m as f64);
    let mut f = obj.value(&w);
    let (mut best_w, mut best_f) = (w.clone(), f);
    let mut step = 1.0;
    let max_steps = 50_000;
    let mut converged = false;
    for _ in 0..max_steps {
        let g = obj.grad(&w);
        // Backtrack until the projected step improves the objective.
        let mut improved = false;
        for _ in 0..60 {
            let cand_v: Vec<f64> =
                w.iter().zip(g.iter()).map(|(&wi, &gi)| wi - step * gi).collect();
            let cand = Array1::from(project(&cand_v));
            let fc = obj.value(&cand);
            if fc < f {
                let delta = (&cand - &w).mapv(f64::abs).iter().cloned().fold(0.0, f64::max);
                w = cand;
                f = fc;
                improved = true;
                if f < best_f {
                    best_f = f;
                    best_w = w.clone();
                }
                if delta < 1e-12 {
                    converged = true;
                }
                break;
            }
            step *= 0.5;
        }
        if !improved || converged {
            converged = true;
            break;
        }
        step *= 2.0; // mild re-expansion for the next iteration
    }
    if !converged {
        warnings.push(format!(
            "weight optimizer hit the {max_steps}-step cap; returning the best iterate"
        ));
    }
    // The objective is quadratic, so the active set identified by projected
    // gradient can be polished to machine precision by the equality-
    // constrained KKT solve on the free coordinates.
    let free: Vec<usize> = if simplex {
        (0..m).filter(|&j| best_w[j] > 1e-9).collect()
    } else {
        (0..m).collect()
    };
    if !free.is_empty() {
        let nf = free.len();
        let mut kkt = Array2::<f64>::zeros((nf + 1, nf + 1));
        let mut rhs = Array1::<f64>::zeros(nf + 1);
        for (a, &ja) in free.iter().enumerate() {
            for (b, &jb) in free.iter().enumerate() {
                kkt[[a, b]] = 2.0 * obj.gram[[ja, jb]];
            }
            kkt[[a, nf]] = 1.0;
            kkt[[nf, a]] = 1.0;
            rhs[a] = 2.0 * obj.lin[ja];
        }
        rhs[nf] = 1.0;
        let sol = crate::linalg::lstsq_min_norm(&kkt, &rhs);
        let mut cand = Array1::zeros(m);
        let mut ok = true;
        for (a, &ja) in free.iter().enumerate() {
            if simplex && sol[a] < -1e-10 {
                ok = false;
                break;
            }
            cand[ja] = if simplex { sol[a].max(0.0) } else { sol[a] };
        }
        if ok {
            let s: f64 = cand.sum();
            if s > 0.5 {
                cand.mapv_inplace(|v| v / s);
                if obj.value(&cand) <= best_f + 1e-12 * (1.0 + best_f.abs()) {
                    best_w = cand;
                }
            }
        }
    }
    (best_w.to_vec(), warnings)
}

const LAMBDA_GRID: [f64; 6] = [0.0, 1e-3, 1e-2, 1e-1, 1.0, 10.0];

/// Correlation-penalized combination weights. `lambda: Some(λ)` solves at
/// that penalty; `None` selects λ from {0, 10⁻³, …, 10} by `folds`-fold
/// cross-validation on contiguous time blocks of the validation window
/// (ties prefer the larger penalty), then refits on the full window.
pub fn optimize_weights(
    preds: &Array2<f64>,
    truth: &Array1<f64>,
    lambda: Option<f64>,
    folds: usize,
    simplex: bool,
) -> Result<EnsembleWeights> {
    let (m, t) = preds.dim();
    if m == 0 {
        bail!("need at least one model");
    }
    if truth.len() != t {
        bail!("predictions cover {t} days but truth has {}", truth.len());
    }
    if let Some(l) = lambda {
        if l < 0.0 {
            bail!("lambda must be non-negative");
        }
        let (weights, warnings) = solve_weights_at(preds, truth, l, simplex);
        return Ok(EnsembleWeights {
            weights,
            method: if l == 0.0 { CombineMethod::Op } else { CombineMethod::Wp { lambda: l } },
            window_id: 0,
            warnings,
        });
    }
    if folds < 2 || t < 2 * folds {
        bail!("cross-validation needs ≥2 folds and ≥2 days per fold");
    }
    // Contiguous block folds.
    let bounds: Vec<(usize, usize)> = (0..folds)
        .map(|k| (k * t / folds, (k + 1) * t / folds))
        .collect();
    let mut best = (f64::INFINITY, 0.0);
    for &lam in &LAMBDA_GRID {
        let mut cv = 0.0;
        for &(lo, hi) in &bounds {
            let train_idx: Vec<usize> = (0..t).filter(|i| *i < lo || *i >= hi).collect();
            let pt = preds.select(ndarray::Axis(1), &train_idx);
            let tt = truth.select(ndarray::Axis(0), &train_idx);
            let (w, _) = solve_weights_at(&pt, &tt, lam, simplex);
            let mut sse = 0.0;
            for i in lo..hi {
                let mut yhat = 0.0;
                for j in 0..m {
                    yhat += w[j] * preds[[j, i]];
                }
                sse += (truth[i] - yhat) * (truth[i] - yhat);
            }
            cv += sse;
        }
        // Ties go to the stronger penalty: grid is ascending, so ≤ keeps
        // the later λ.
        if cv <= best.0 {
            best = (cv, lam);
        }
    }
    let lam = best.1;
    let (weights, warnings) = solve_weights_at(preds, truth, lam, simplex);
    Ok(EnsembleWeights {
        weights,
        method: if lam == 0.0 { CombineMethod::Op } else { CombineMethod::Wp { lambda: lam } },
        window_id: 0,
        warnings,
    })
}

/// Weighted per-day combination of the model prediction matrix.
pub fn ensemble_predict(weights: &EnsembleWeights, preds: &Array2<f64>) -> Result<Array1<f64>> {
    let (m, t) = preds.dim();
    if weights.weights.len() != m {
        bail!("{} weights for {m} models", weights.weights.len());
    }
    let w = Array1::from(weights.weights.clone());
    let mut out = Array1::zeros(t);
    for i in 0..t {
        out[i] = w.dot(&preds.column(i));
    }
    Ok(out)
}
