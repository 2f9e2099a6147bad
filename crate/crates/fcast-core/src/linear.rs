//! Linear-family predictors: OLS, L1/L2-penalized regression via cyclic
//! coordinate descent, principal-component and partial-least-squares
//! regression, and a group-lasso quadratic-spline GLM.

use crate::linalg;
use anyhow::{bail, Result};
use ndarray::{Array1, Array2, Axis};

/// Basis a linear fit predicts in.
#[derive(Debug, Clone)]
pub enum Basis {
    /// Coefficients over the raw feature columns. Dimension-reduction fits
    /// collapse their loadings into this space too.
    Identity,
    /// Per-feature quadratic spline: z, then (z−c)² for each interior knot.
    /// `knots[j]` holds feature j's knot locations; an empty inner vec marks
    /// a dropped (constant) feature.
    Spline { knots: Vec<Vec<f64>> },
}

#[derive(Debug, Clone)]
pub struct LinearFit {
    pub kind: &'static str,
    pub intercept: f64,
    pub coef: Array1<f64>,
    pub basis: Basis,
    pub lambda: f64,
    pub rho: f64,
    /// Component count for dimension-reduction fits, 0 otherwise.
    pub k: usize,
    pub warnings: Vec<String>,
}

impl LinearFit {
    pub fn predict(&self, x: &Array2<f64>) -> Array1<f64> {
        match &self.basis {
            Basis::Identity => x.dot(&self.coef) + self.intercept,
            Basis::Spline { knots } => {
                let mut out = Array1::from_elem(x.nrows(), self.intercept);
                for i in 0..x.nrows() {
                    let mut c = 0;
                    for (j, kn) in knots.iter().enumerate() {
                        if kn.is_empty() {
                            continue;
                        }
                        let z = x[[i, j]];
                        out[i] += self.coef[c] * z;
                        c += 1;
                        for &knot in kn.iter().skip(1) {
                            let d = z - knot;
                            out[i] += self.coef[c] * d * d;
                            c += 1;
                        }
                    }
                }
                out
            }
        }
    }

    /// Model size as used by the complexity regressions: component count for
    /// dimension-reduction fits, otherwise the number of surviving
    /// coefficients.
    pub fn complexity(&self) -> usize {
        if self.k > 0 {
            self.k
        } else {
            self.coef.iter().filter(|c| c.abs() > 1e-12).count()
        }
    }
}

fn center_columns(x: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let means = x.mean_axis(Axis(0)).unwrap();
    let mut xc = x.clone();
    for mut row in xc.rows_mut() {
        row -= &means;
    }
    (xc, means)
}

fn check_design(x: &Array2<f64>, y: &Array1<f64>) -> Result<()> {
    if x.nrows() == 0 || x.ncols() == 0 {
        bail!("empty design");
    }
    if x.nrows() != y.len() {
        bail!("design has {} rows but response has {}", x.nrows(), y.len());
    }
    if x.nrows() < 2 {
        bail!("need at least 2 training rows");
    }
    Ok(())
}

/// Ordinary least squares; rank-deficient designs get the minimum-norm
/// solution.
pub fn fit_ols(x: &Array2<f64>, y: &Array1<f64>) -> Result<LinearFit> {
    check_design(x, y)?;
    let (xc, xm) = center_columns(x);
    let ym = y.mean().unwrap();
    let yc = y - ym;
    let coef = linalg::lstsq_min_norm(&xc, &yc);
    let intercept = ym - xm.dot(&coef);
    Ok(LinearFit {
        kind: "ols",
        intercept,
        coef,
        basis: Basis::Identity,
        lambda: 0.0,
        rho: 0.0,
        k: 0,
        warnings: vec![],
    })
}

fn soft_threshold(z: f64, g: f64) -> f64 {
    if z > g {
        z - g
    } else if z < -g {
        z + g
    } else {
        0.0
    }
}

/// Elastic-net objective (1/2T)‖y − b − Xθ‖² + λ[ρ‖θ‖₁ + (1−ρ)‖θ‖₂²] by
/// cyclic coordinate descent. rho=1 is the lasso, rho=0 ridge. The intercept
/// is unpenalized. `warm` seeds the coefficients for path fits.
pub fn fit_penalized(
    x: &Array2<f64>,
    y: &Array1<f64>,
    lambda: f64,
    rho: f64,
    warm: Option<&Array1<f64>>,
) -> Result<LinearFit> {
    check_design(x, y)?;
    if lambda < 0.0 || !(0.0..=1.0).contains(&rho) {
        bail!("lambda must be ≥ 0 and rho in [0,1]");
    }
    let t = x.nrows() as f64;
    let p = x.ncols();
    let (xc, xm) = center_columns(x);
    let ym = y.mean().unwrap();
    let yc = y - ym;

    // Per-coordinate curvature (1/T)‖x_j‖²; zero-variance columns stay at 0.
    let a: Vec<f64> = (0..p).map(|j| xc.column(j).dot(&xc.column(j)) / t).collect();
    let mut theta = match warm {
        Some(w) if w.len() == p => w.clone(),
        _ => Array1::zeros(p),
    };
    let mut resid = &yc - &xc.dot(&theta);
    let l1 = lambda * rho;
    let denom_extra = 2.0 * lambda * (1.0 - rho);

    let max_sweeps = 10_000;
    let tol = 1e-7;
    let mut converged = false;
    for _ in 0..max_sweeps {
        let mut max_delta = 0.0f64;
        for j in 0..p {
            if a[j] <= 0.0 {
                continue;
            }
            let old = theta[j];
            let rho_j = xc.column(j).dot(&resid) / t + a[j] * old;
            let new = soft_threshold(rho_j, l1) / (a[j] + denom_extra);
            if new != old {
                let col = xc.column(j);
                resid.scaled_add(old - new, &col);
                theta[j] = new;
                max_delta = max_delta.max((new - old).abs());
            }
        }
        if max_delta < tol {
            converged = true;
            break;
        }
    }
    let mut warnings = vec![];
    if !converged {
        warnings.push("coordinate descent hit the sweep cap before tolerance".to_string());
    }
    let intercept = ym - xm.dot(&theta);
    let kind = if rho >= 1.0 {
        "lasso"
    } else if rho <= 0.0 {
        "ridge"
    } else {
        "enet"
    };
    Ok(LinearFit {
        kind,
        intercept,
        coef: theta,
        basis: Basis::Identity,
        lambda,
        rho,
        k: 0,
        warnings,
    })
}

/// Fits a descending-λ path with warm starts, one fit per grid value.
pub fn fit_penalized_path(
    x: &Array2<f64>,
    y: &Array1<f64>,
    lambdas_desc: &[f64],
    rho: f64,
) -> Result<Vec<LinearFit>> {
    let mut fits = Vec::with_capacity(lambdas_desc.len());
    let mut warm: Option<Array1<f64>> = None;
    for &l in lambdas_desc {
        let fit = fit_penalized(x, y, l, rho, warm.as_ref())?;
        warm = Some(fit.coef.clone());
        fits.push(fit);
    }
    Ok(fits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DimRed {
    Pcr,
    Pls,
}

/// Principal-component or partial-least-squares regression with K
/// components. K beyond the design rank is truncated with a warning. The
/// returned coefficients live in raw feature space.
pub fn fit_dimred(x: &Array2<f64>, y: &Array1<f64>, k: usize, mode: DimRed) -> Result<LinearFit> {
    check_design(x, y)?;
    if k == 0 {
        bail!("K must be ≥ 1");
    }
    let (xc, xm) = center_columns(x);
    let ym = y.mean().unwrap();
    let yc = y - ym;
    let p = x.ncols();
    let mut warnings = vec![];

    let (coef, k_used) = match mode {
        DimRed::Pcr => {
            let gram = xc.t().dot(&xc);
            let (evals, evecs) = linalg::eigh(&gram);
            let tol = evals[0].max(0.0) * 1e-10;
            let rank = evals.iter().filter(|&&v| v > tol && v > 0.0).count();
            let k_used = k.min(rank.max(1)).min(p);
            if k_used < k {
                warnings.push(format!("K truncated from {} to design rank {}", k, k_used));
            }
            // Scores are orthogonal, so the OLS on scores is one dot per
            // component.
            let mut beta = Array1::<f64>::zeros(p);
            for c in 0..k_used {
                let v = evecs.column(c);
                let score = xc.dot(&v);
                let ss = score.dot(&score);
                if ss <= 0.0 {
                    continue;
                }
                let th = score.dot(&yc) / ss;
                beta.scaled_add(th, &v);
            }
            (beta, k_used)
        }
        DimRed::Pls => {
            // NIPALS with deflation of both the design and the response.
            let mut xd = xc.clone();
            let mut yd = yc.clone();
            let mut w_mat = Array2::<f64>::zeros((p, k));
            let mut p_mat = Array2::<f64>::zeros((p, k));
            let mut q = Array1::<f64>::zeros(k);
            let mut k_used = 0;
            for c in 0..k.min(x.nrows().saturating_sub(1)).min(p) {
                let mut w = xd.t().dot(&yd);
                let wn = w.dot(&w).sqrt();
                if wn <= 1e-12 {
                    break;
                }
                w /= wn;
                let t_sc = xd.dot(&w);
                let tt = t_sc.dot(&t_sc);
                if tt <= 1e-12 {
                    break;
                }
                let pl = xd.t().dot(&t_sc) / tt;
                let qc = yd.dot(&t_sc) / tt;
                for i in 0..xd.nrows() {
                    for j in 0..p {
                        xd[[i, j]] -= t_sc[i] * pl[j];
                    }
                }
                yd.scaled_add(-qc, &t_sc);
                w_mat.column_mut(c).assign(&w);
                p_mat.column_mut(c).assign(&pl);
                q[c] = qc;
                k_used = c + 1;
            }
            if k_used < k {
                warnings.push(format!("K truncated from {} to design rank {}", k, k_used));
            }
            if k_used == 0 {
                (Array1::zeros(p), 0)
            } else {
                // β = W (PᵀW)⁻¹ q over the components actually extracted.
                let w_k = w_mat.slice(ndarray::s![.., ..k_used]).to_owned();
                let p_k = p_mat.slice(ndarray::s![.., ..k_used]).to_owned();
                let q_k = q.slice(ndarray::s![..k_used]).to_owned();
                let pw = p_k.t().dot(&w_k);
                let sol = linalg::lstsq_min_norm(&pw, &q_k);
                (w_k.dot(&sol), k_used)
            }
        }
    };
    let intercept = ym - xm.dot(&coef);
    Ok(LinearFit {
        kind: if mode == DimRed::Pcr { "pcr" } else { "pls" },
        intercept,
        coef,
        basis: Basis::Identity,
        lambda: 0.0,
        rho: 0.0,
        k: k_used.max(1),
        warnings,
    })
}

/// Expands one feature column into its spline group (z, (z−c₁)², …) given
/// interior knots. The first knot slot is z's own linear term marker; callers
/// use `knots[j]` from the fit's basis.
fn spline_knots(train_col: &[f64], n_interior: usize) -> Vec<f64> {
    let mut sorted = train_col.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (1..=n_interior)
        .map(|i| crate::stats::quantile_sorted(&sorted, i as f64 / (n_interior + 1) as f64))
        .collect()
}

/// Group-lasso quadratic-spline GLM. Each feature expands to
/// p(z) = (z, (z−c₁)², …, (z−c_{K−2})²) with K−2 interior knots at equally
/// spaced training quantiles; the global intercept is unpenalized. Solves
///   (1/2T)‖y − b − Σ_j X_j θ_j‖² + λ Σ_j ‖θ_j‖₂ + l1‖θ‖₁
/// by block proximal gradient (soft-threshold then group shrink). Groups are
/// all spline terms of one feature; constant features are dropped and
/// recorded.
pub fn fit_glm_groupspline(
    x: &Array2<f64>,
    y: &Array1<f64>,
    k_basis: usize,
    lambda: f64,
    l1: f64,
) -> Result<LinearFit> {
    check_design(x, y)?;
    if k_basis < 3 {
        bail!("K must be ≥ 3 basis terms per feature");
    }
    let n_interior = k_basis - 2;
    let t = x.nrows();
    let p = x.ncols();
    let group_size = 1 + n_interior;
    let mut warnings = vec![];

    // Knots and dropped-feature bookkeeping. knots[j] stores [linear-term
    // sentinel is implicit] the interior knot locations; empty = dropped.
    let mut knots: Vec<Vec<f64>> = Vec::with_capacity(p);
    for j in 0..p {
        let col: Vec<f64> = x.column(j).to_vec();
        let sd = crate::linalg::variance(&col).sqrt();
        if sd <= 1e-12 * (1.0 + crate::linalg::mean(&col).abs()) {
            warnings.push(format!("constant feature {} dropped from spline expansion", j));
            knots.push(vec![]);
        } else {
            // Store a leading sentinel so predict() can skip the linear term
            // uniformly: first entry is unused for the linear column.
            let mut kn = vec![f64::NAN];
            kn.extend(spline_knots(&col, n_interior));
            knots.push(kn);
        }
    }
    let active: Vec<usize> = (0..p).filter(|&j| !knots[j].is_empty()).collect();
    let pe = active.len() * group_size;
    if pe == 0 {
        bail!("all features constant; nothing to fit");
    }

    // Build the expanded design, then standardize columns so the group
    // penalty compares like scales; coefficients are mapped back afterwards.
    let mut xe = Array2::<f64>::zeros((t, pe));
    for (g, &j) in active.iter().enumerate() {
        for i in 0..t {
            let z = x[[i, j]];
            xe[[i, g * group_size]] = z;
            for (s, &c) in knots[j].iter().skip(1).enumerate() {
                let d = z - c;
                xe[[i, g * group_size + 1 + s]] = d * d;
            }
        }
    }
    let mut col_mean = vec![0.0f64; pe];
    let mut col_sd = vec![1.0f64; pe];
    for c in 0..pe {
        let col: Vec<f64> = xe.column(c).to_vec();
        col_mean[c] = linalg::mean(&col);
        let sd = linalg::variance(&col).sqrt();
        col_sd[c] = if sd > 0.0 { sd } else { 1.0 };
        for i in 0..t {
            xe[[i, c]] = (xe[[i, c]] - col_mean[c]) / col_sd[c];
        }
    }
    let ym = y.mean().unwrap();
    let yc = y - ym;

    // Step size from the largest Gram eigenvalue via power iteration.
    let lip = {
        let mut u = Array1::from_elem(pe, 1.0 / (pe as f64).sqrt());
        let mut lam = 0.0;
        for _ in 0..100 {
            let v = xe.t().dot(&xe.dot(&u)) / t as f64;
            let n = v.dot(&v).sqrt();
            if n <= 1e-300 {
                break;
            }
            lam = n;
            u = v / n;
        }
        lam.max(1e-12)
    };
    let step = 1.0 / lip;

    let mut theta = Array1::<f64>::zeros(pe);
    let mut converged = false;
    for _ in 0..20_000 {
        let resid = &yc - &xe.dot(&theta);
        let grad = -xe.t().dot(&resid) / t as f64;
        let mut new = &theta - &(step * &grad);
        // Sparse-group prox: elementwise soft-threshold, then group shrink.
        if l1 > 0.0 {
            new.mapv_inplace(|v| soft_threshold(v, step * l1));
        }
        for g in 0..active.len() {
            let sl = ndarray::s![g * group_size..(g + 1) * group_size];
            let norm = new.slice(sl).dot(&new.slice(sl)).sqrt();
            let scale = if norm <= step * lambda { 0.0 } else { 1.0 - step * lambda / norm };
            new.slice_mut(sl).mapv_inplace(|v| v * scale);
        }
        let max_delta = new
            .iter()
            .zip(theta.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        theta = new;
        if max_delta < 1e-8 {
            converged = true;
            break;
        }
    }
    if !converged {
        warnings.push("proximal gradient hit the iteration cap before tolerance".to_string());
    }

    // Map back to the unstandardized expanded basis.
    let mut coef = Array1::<f64>::zeros(pe);
    let mut intercept = ym;
    for c in 0..pe {
        coef[c] = theta[c] / col_sd[c];
        intercept -= theta[c] * col_mean[c] / col_sd[c];
    }
    Ok(LinearFit {
        kind: "glm",
        intercept,
        coef,
        basis: Basis::Spline { knots },
        lambda,
        rho: 0.0,
        k: 0,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_design(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, p), |_| rng.gen::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn ols_exact_line() {
        let x = array![[1.0], [2.0], [3.0], [4.0]];
        let y = array![2.0, 4.0, 6.0, 8.0];
        let fit = fit_ols(&x, &y).unwrap();
        assert!((fit.coef[0] - 2.0).abs() < 1e-12);
        assert!(fit.intercept.abs() < 1e-12);
    }

    #[test]
    fn ols_orthonormal_closed_form() {
        // With XᵀX = I the OLS solution is θ_j = x_jᵀy.
        let n = 8;
        let mut x = Array2::<f64>::zeros((n, 2));
        for i in 0..n {
            let ang = std::f64::consts::TAU * i as f64 / n as f64;
            x[[i, 0]] = ang.cos() * (2.0 / n as f64).sqrt();
            x[[i, 1]] = ang.sin() * (2.0 / n as f64).sqrt();
        }
        let y = Array1::from_shape_fn(n, |i| 1.5 * x[[i, 0]] - 0.7 * x[[i, 1]]);
        let fit = fit_ols(&x, &y).unwrap();
        for j in 0..2 {
            let want = x.column(j).dot(&y);
            assert!((fit.coef[j] - want).abs() < 1e-10);
        }
    }

    #[test]
    fn penalized_lambda_zero_matches_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_design(&mut rng, 60, 5);
        let y = Array1::from_shape_fn(60, |i| {
            x[[i, 0]] * 0.8 - x[[i, 3]] * 0.4 + 0.01 * (i as f64).sin()
        });
        let ols = fit_ols(&x, &y).unwrap();
        let pen = fit_penalized(&x, &y, 0.0, 1.0, None).unwrap();
        for j in 0..5 {
            assert!((ols.coef[j] - pen.coef[j]).abs() < 1e-6);
        }
        assert!((ols.intercept - pen.intercept).abs() < 1e-6);
    }

    #[test]
    fn lasso_soft_threshold_on_scaled_orthonormal_design() {
        // Columns with XᵀX/T = I give θ_j = S(x_jᵀy/T, λ) exactly.
        let n = 12;
        let mut x = Array2::<f64>::zeros((n, 3));
        for i in 0..n {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            x[[i, 0]] = a.cos() * 2.0f64.sqrt();
            x[[i, 1]] = a.sin() * 2.0f64.sqrt();
            x[[i, 2]] = (2.0 * a).cos() * 2.0f64.sqrt();
        }
        let y = Array1::from_shape_fn(n, |i| 0.9 * x[[i, 0]] + 0.05 * x[[i, 1]] - 0.3 * x[[i, 2]]);
        let lambda = 0.1;
        let fit = fit_penalized(&x, &y, lambda, 1.0, None).unwrap();
        for j in 0..3 {
            let want = soft_threshold(x.column(j).dot(&y) / n as f64, lambda);
            assert!(
                (fit.coef[j] - want).abs() < 1e-8,
                "j={} got {} want {}",
                j,
                fit.coef[j],
                want
            );
        }
    }

    #[test]
    fn coordinate_descent_objective_monotone() {
        // Re-run CD sweep-by-sweep via successive single-sweep calls is not
        // exposed; instead check the final objective beats the start and a
        // few perturbations (local optimality proxy), plus monotone penalty
        // response: larger λ never yields a larger penalty-inclusive
        // objective evaluated at its own optimum.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_design(&mut rng, 80, 10);
        let y = Array1::from_shape_fn(80, |i| x[[i, 1]] - 0.5 * x[[i, 7]] + 0.1 * rng_val(i));
        let obj = |fit: &LinearFit, lambda: f64| {
            let r = &y - &fit.predict(&x);
            r.dot(&r) / (2.0 * 80.0) + lambda * fit.coef.iter().map(|c| c.abs()).sum::<f64>()
        };
        let f1 = fit_penalized(&x, &y, 0.01, 1.0, None).unwrap();
        let base = obj(&f1, 0.01);
        for j in 0..10 {
            let mut pert = f1.clone();
            pert.coef[j] += 1e-4;
            pert.intercept = y.mean().unwrap()
                - x.mean_axis(Axis(0)).unwrap().dot(&pert.coef);
            assert!(obj(&pert, 0.01) >= base - 1e-12);
        }
    }

    fn rng_val(i: usize) -> f64 {
        ((i as f64 * 12.9898).sin() * 43758.5453).fract()
    }

    #[test]
    fn ridge_shrinks_toward_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_design(&mut rng, 50, 4);
        let y = Array1::from_shape_fn(50, |i| 2.0 * x[[i, 0]]);
        let small = fit_penalized(&x, &y, 1e-4, 0.0, None).unwrap();
        let big = fit_penalized(&x, &y, 10.0, 0.0, None).unwrap();
        let n_small: f64 = small.coef.dot(&small.coef);
        let n_big: f64 = big.coef.dot(&big.coef);
        assert!(n_big < n_small);
    }

    #[test]
    fn pcr_full_rank_matches_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_design(&mut rng, 40, 6);
        let y = Array1::from_shape_fn(40, |i| x[[i, 2]] - x[[i, 4]] + 0.3);
        let ols = fit_ols(&x, &y).unwrap();
        let pcr = fit_dimred(&x, &y, 6, DimRed::Pcr).unwrap();
        let (po, pp) = (ols.predict(&x), pcr.predict(&x));
        for i in 0..40 {
            assert!((po[i] - pp[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn pcr_scores_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_design(&mut rng, 60, 5);
        let (xc, _) = center_columns(&x);
        let gram = xc.t().dot(&xc);
        let (_, evecs) = linalg::eigh(&gram);
        let scores = xc.dot(&evecs);
        let g = scores.t().dot(&scores);
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    assert!(g[[i, j]].abs() < 1e-8, "off-diagonal {}", g[[i, j]]);
                }
            }
        }
    }

    #[test]
    fn pls_first_weight_proportional_to_cross_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_design(&mut rng, 50, 4);
        let y = Array1::from_shape_fn(50, |i| x[[i, 0]] + 0.2 * x[[i, 3]]);
        let fit = fit_dimred(&x, &y, 1, DimRed::Pls).unwrap();
        // K=1: β ∝ w ∝ Xcᵀyc.
        let (xc, _) = center_columns(&x);
        let yc = &y - y.mean().unwrap();
        let w = xc.t().dot(&yc);
        let ratio = fit.coef[0] / w[0];
        for j in 1..4 {
            assert!((fit.coef[j] / w[j] - ratio).abs() < 1e-8 * ratio.abs().max(1.0));
        }
    }

    #[test]
    fn dimred_truncates_k_beyond_rank() {
        // Two duplicated columns → rank 1 in a 2-column design.
        let x = array![[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0]];
        let y = array![1.0, 2.0, 3.0, 4.0];
        let fit = fit_dimred(&x, &y, 2, DimRed::Pcr).unwrap();
        assert_eq!(fit.k, 1);
        assert!(!fit.warnings.is_empty());
    }

    #[test]
    fn glm_recovers_pure_quadratic_with_knot_at_zero() {
        // y = z² and a symmetric z grid puts the middle knot at 0, so the
        // (z−0)² term alone carries the signal.
        let n = 201;
        let x = Array2::from_shape_fn((n, 1), |(i, _)| -1.0 + 2.0 * i as f64 / (n - 1) as f64);
        let y = Array1::from_shape_fn(n, |i| x[[i, 0]] * x[[i, 0]]);
        let fit = fit_glm_groupspline(&x, &y, 4, 1e-9, 0.0).unwrap();
        let pred = fit.predict(&x);
        for i in 0..n {
            assert!((pred[i] - y[i]).abs() < 1e-4, "i={} pred {} want {}", i, pred[i], y[i]);
        }
    }

    #[test]
    fn glm_huge_lambda_predicts_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_design(&mut rng, 50, 3);
        let y = Array1::from_shape_fn(50, |i| x[[i, 0]] + 5.0 * rng_val(i));
        let fit = fit_glm_groupspline(&x, &y, 4, 1e6, 0.0).unwrap();
        let pred = fit.predict(&x);
        let ym = y.mean().unwrap();
        for i in 0..50 {
            assert!((pred[i] - ym).abs() < 1e-8);
        }
        assert_eq!(fit.complexity(), 0);
    }

    #[test]
    fn glm_groups_all_or_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random_design(&mut rng, 120, 6);
        let y = Array1::from_shape_fn(120, |i| 2.0 * x[[i, 1]] + 0.05 * rng_val(i));
        let fit = fit_glm_groupspline(&x, &y, 4, 0.05, 0.0).unwrap();
        let gs = 3;
        for g in 0..6 {
            let grp: Vec<f64> = (0..gs).map(|s| fit.coef[g * gs + s]).collect();
            let norm: f64 = grp.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-12 {
                for v in &grp {
                    assert!(v.abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn glm_drops_constant_feature() {
        let mut x = Array2::<f64>::zeros((30, 2));
        for i in 0..30 {
            x[[i, 0]] = i as f64 / 10.0;
            x[[i, 1]] = 7.7;
        }
        let y = Array1::from_shape_fn(30, |i| x[[i, 0]]);
        let fit = fit_glm_groupspline(&x, &y, 4, 1e-8, 0.0).unwrap();
        assert!(fit.warnings.iter().any(|w| w.contains("constant feature")));
        if let Basis::Spline { knots } = &fit.basis {
            assert!(knots[1].is_empty());
            assert!(!knots[0].is_empty());
        } else {
            panic!("expected spline basis");
        }
        let pred = fit.predict(&x);
        for i in 0..30 {
            assert!((pred[i] - y[i]).abs() < 1e-4);
        }
    }

    #[test]
    fn warm_start_path_matches_cold_fits() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random_design(&mut rng, 70, 8);
        let y = Array1::from_shape_fn(70, |i| x[[i, 0]] - 0.3 * x[[i, 5]] + 0.05 * rng_val(i));
        let lambdas = [0.05, 0.01, 0.002];
        let path = fit_penalized_path(&x, &y, &lambdas, 1.0).unwrap();
        for (i, &l) in lambdas.iter().enumerate() {
            let cold = fit_penalized(&x, &y, l, 1.0, None).unwrap();
            for j in 0..8 {
                assert!((path[i].coef[j] - cold.coef[j]).abs() < 1e-5);
            }
        }
    }
}
