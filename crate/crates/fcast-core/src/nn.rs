//! Feed-forward neural networks: ReLU MLPs trained with mini-batch Adam,
//! optional batch normalization and dropout, an L1 weight penalty,
//! patience-based early stopping on validation loss, and averaging over an
//! ensemble of differently-seeded members.

use anyhow::{bail, Result};
use ndarray::{Array1, Array2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// Data term of the training loss. Absolute error bounds every sample's
/// gradient, which keeps heavy idiosyncratic noise from drowning out the
/// conditional-mean signal; squared error is the classic choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    SquaredError,
    AbsoluteError,
}

#[derive(Debug, Clone)]
pub struct MlpConfig {
    /// Hidden-layer widths, strictly decreasing, 1–5 layers.
    pub widths: Vec<usize>,
    /// L1 penalty on weights (not biases or batch-norm parameters).
    pub l1: f64,
    pub lr: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Mini-batch size; 0 derives ⌈T/50⌉ from the training size.
    pub batch: usize,
    pub n_seeds: usize,
    pub seed: u64,
    pub batch_norm: bool,
    /// Drop probability after each hidden activation; 0 disables.
    pub dropout: f64,
    /// Data term minimized during training and monitored for early stopping.
    pub objective: Objective,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            widths: vec![64, 32, 16, 8, 4],
            l1: 1e-5,
            lr: 0.01,
            max_epochs: 100,
            patience: 5,
            batch: 0,
            n_seeds: 10,
            seed: 0,
            batch_norm: true,
            dropout: 0.0,
            objective: Objective::SquaredError,
        }
    }
}

/// Trainable parameters. `gamma`/`beta` are empty when batch norm is off.
#[derive(Debug, Clone)]
pub struct MlpParams {
    pub w: Vec<Array2<f64>>,
    pub b: Vec<Array1<f64>>,
    pub gamma: Vec<Array1<f64>>,
    pub beta: Vec<Array1<f64>>,
}

impl MlpParams {
    fn zeros_like(&self) -> MlpParams {
        MlpParams {
            w: self.w.iter().map(|a| Array2::zeros(a.dim())).collect(),
            b: self.b.iter().map(|a| Array1::zeros(a.len())).collect(),
            gamma: self.gamma.iter().map(|a| Array1::zeros(a.len())).collect(),
            beta: self.beta.iter().map(|a| Array1::zeros(a.len())).collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = vec![];
        for a in &self.w {
            out.extend(a.iter());
        }
        for a in &self.b {
            out.extend(a.iter());
        }
        for a in &self.gamma {
            out.extend(a.iter());
        }
        for a in &self.beta {
            out.extend(a.iter());
        }
        out
    }

    pub fn set_from_flat(&mut self, flat: &[f64]) {
        let mut k = 0;
        for a in self.w.iter_mut().map(|a| a.iter_mut()).chain(std::iter::empty()) {
            for v in a {
                *v = flat[k];
                k += 1;
            }
        }
        for a in &mut self.b {
            for v in a.iter_mut() {
                *v = flat[k];
                k += 1;
            }
        }
        for a in &mut self.gamma {
            for v in a.iter_mut() {
                *v = flat[k];
                k += 1;
            }
        }
        for a in &mut self.beta {
            for v in a.iter_mut() {
                *v = flat[k];
                k += 1;
            }
        }
        assert_eq!(k, flat.len());
    }
}

/// One trained network plus the running statistics its inference pass uses.
#[derive(Debug, Clone)]
pub struct MlpMember {
    pub params: MlpParams,
    pub run_mean: Vec<Array1<f64>>,
    pub run_var: Vec<Array1<f64>>,
    pub batch_norm: bool,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stream: u64,
}

impl MlpMember {
    /// He-style initialization; biases zero, batch-norm scale 1 shift 0.
    pub fn init(dims: &[usize], batch_norm: bool, rng: &mut ChaCha8Rng) -> MlpMember {
        let n_layers = dims.len() - 1;
        let mut w = vec![];
        let mut b = vec![];
        for l in 0..n_layers {
            let sd = (2.0 / dims[l] as f64).sqrt();
            w.push(Array2::from_shape_fn((dims[l + 1], dims[l]), |_| {
                sd * rng.sample::<f64, _>(StandardNormal)
            }));
            b.push(Array1::zeros(dims[l + 1]));
        }
        let n_hidden = n_layers - 1;
        let (gamma, beta, run_mean, run_var) = if batch_norm {
            (
                (0..n_hidden).map(|l| Array1::ones(dims[l + 1])).collect(),
                (0..n_hidden).map(|l| Array1::zeros(dims[l + 1])).collect(),
                (0..n_hidden).map(|l| Array1::zeros(dims[l + 1])).collect(),
                (0..n_hidden).map(|l| Array1::ones(dims[l + 1])).collect(),
            )
        } else {
            (vec![], vec![], vec![], vec![])
        };
        MlpMember {
            params: MlpParams { w, b, gamma, beta },
            run_mean,
            run_var,
            batch_norm,
            epochs_run: 0,
            best_epoch: 0,
            stream: 0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.params.w[0].ncols()
    }

    /// Deterministic forward pass using running batch-norm statistics.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        if x.ncols() != self.input_dim() {
            bail!("input has {} features, network expects {}", x.ncols(), self.input_dim());
        }
        let n_layers = self.params.w.len();
        let mut a = x.to_owned();
        for l in 0..n_layers - 1 {
            let mut z = a.dot(&self.params.w[l].t()) + &self.params.b[l];
            if self.batch_norm {
                let sd = self.run_var[l].mapv(|v| (v + BN_EPS).sqrt());
                z = (z - &self.run_mean[l]) / &sd * &self.params.gamma[l] + &self.params.beta[l];
            }
            a = z.mapv(|v| v.max(0.0));
        }
        let out = a.dot(&self.params.w[n_layers - 1].t()) + &self.params.b[n_layers - 1];
        Ok(out.column(0).to_owned())
    }
}

/// Seed-ensemble fit; prediction is the member average.
#[derive(Debug)]
pub struct MlpFit {
    pub members: Vec<MlpMember>,
    pub widths: Vec<usize>,
    pub l1: f64,
    pub lr: f64,
    /// Per surviving member, validation MSE after each epoch.
    pub val_curves: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

impl MlpFit {
    pub fn predict(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        let mut out = Array1::<f64>::zeros(x.nrows());
        for m in &self.members {
            out += &m.predict(x)?;
        }
        Ok(out / self.members.len() as f64)
    }

    /// Total parameter count (the complexity proxy for network models).
    pub fn n_params(&self) -> usize {
        let p = &self.members[0].params;
        p.w.iter().map(|a| a.len()).sum::<usize>()
            + p.b.iter().map(|a| a.len()).sum::<usize>()
            + p.gamma.iter().map(|a| a.len()).sum::<usize>()
            + p.beta.iter().map(|a| a.len()).sum::<usize>()
    }
}

struct Caches {
    acts: Vec<Array2<f64>>,     // input to each layer
    z_pre: Vec<Array2<f64>>,    // linear output per hidden layer
    bn_xhat: Vec<Array2<f64>>,  // normalized pre-activation (bn only)
    bn_mu: Vec<Array1<f64>>,
    bn_sd: Vec<Array1<f64>>,    // √(var+ε)
    relu_in: Vec<Array2<f64>>,  // batch-norm output (or z) fed to ReLU
    drop_mask: Vec<Option<Array2<f64>>>,
    pred: Array1<f64>,
}

/// Training-mode forward: batch statistics for batch norm (running stats
/// updated in place), dropout applied when configured.
fn forward_train(
    member: &mut MlpMember,
    x: &Array2<f64>,
    dropout: f64,
    rng: &mut ChaCha8Rng,
) -> Caches {
    let n_layers = member.params.w.len();
    let m = x.nrows() as f64;
    let mut caches = Caches {
        acts: vec![],
        z_pre: vec![],
        bn_xhat: vec![],
        bn_mu: vec![],
        bn_sd: vec![],
        relu_in: vec![],
        drop_mask: vec![],
        pred: Array1::zeros(0),
    };
    let mut a = x.to_owned();
    for l in 0..n_layers - 1 {
        caches.acts.push(a.clone());
        let z = a.dot(&member.params.w[l].t()) + &member.params.b[l];
        let relu_in = if member.batch_norm {
            let mu = z.mean_axis(Axis(0)).unwrap();
            let var = z.mapv(|v| v * v).mean_axis(Axis(0)).unwrap() - mu.mapv(|v| v * v);
            let var = var.mapv(|v| v.max(0.0));
            let sd = var.mapv(|v| (v + BN_EPS).sqrt());
            let xhat = (&z - &mu) / &sd;
            let out = &xhat * &member.params.gamma[l] + &member.params.beta[l];
            // Running statistics for inference (unbiased variance).
            let unbias = if m > 1.5 { m / (m - 1.0) } else { 1.0 };
            member.run_mean[l] = member.run_mean[l].mapv(|v| v * (1.0 - BN_MOMENTUM))
                + mu.mapv(|v| v * BN_MOMENTUM);
            member.run_var[l] = member.run_var[l].mapv(|v| v * (1.0 - BN_MOMENTUM))
                + var.mapv(|v| v * BN_MOMENTUM * unbias);
            caches.bn_xhat.push(xhat);
            caches.bn_mu.push(mu);
            caches.bn_sd.push(sd);
            out
        } else {
            caches.bn_xhat.push(Array2::zeros((0, 0)));
            caches.bn_mu.push(Array1::zeros(0));
            caches.bn_sd.push(Array1::zeros(0));
            z.clone()
        };
        caches.z_pre.push(z);
        caches.relu_in.push(relu_in.clone());
        let mut act = relu_in.mapv(|v| v.max(0.0));
        if dropout > 0.0 {
            let keep = 1.0 - dropout;
            let mask = Array2::from_shape_fn(act.dim(), |_| {
                if rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            });
            act *= &mask;
            caches.drop_mask.push(Some(mask));
        } else {
            caches.drop_mask.push(None);
        }
        a = act;
    }
    caches.acts.push(a.clone());
    let out = a.dot(&member.params.w[n_layers - 1].t()) + &member.params.b[n_layers - 1];
    caches.pred = out.column(0).to_owned();
    caches
}

/// Data loss + L1 penalty and the gradient wrt every parameter, given a
/// completed training-mode forward pass.
fn backward(
    member: &MlpMember,
    caches: &Caches,
    y: &Array1<f64>,
    l1: f64,
    objective: Objective,
) -> (f64, MlpParams) {
    let n_layers = member.params.w.len();
    let m = y.len() as f64;
    let mut grads = member.params.zeros_like();
    let resid = &caches.pred - y;
    let (data_loss, d_pred) = match objective {
        Objective::SquaredError => {
            (resid.mapv(|v| v * v).mean().unwrap(), resid.mapv(|v| 2.0 * v / m))
        }
        Objective::AbsoluteError => {
            (resid.mapv(f64::abs).mean().unwrap(), resid.mapv(|v| v.signum() / m))
        }
    };
    let l1_loss: f64 = l1 * member.params.w.iter().map(|w| w.mapv(f64::abs).sum()).sum::<f64>();

    // Output layer.
    let d_out = d_pred.clone().insert_axis(Axis(1));
    let last = n_layers - 1;
    grads.w[last] = d_out.t().dot(&caches.acts[last]);
    grads.b[last] = Array1::from_elem(1, d_pred.sum());
    let mut d_a = d_out.dot(&member.params.w[last]);

    for l in (0..n_layers - 1).rev() {
        if let Some(mask) = &caches.drop_mask[l] {
            d_a *= mask;
        }
        // ReLU.
        let mut d_relu_in = d_a;
        d_relu_in.zip_mut_with(&caches.relu_in[l], |g, &z| {
            if z <= 0.0 {
                *g = 0.0;
            }
        });
        let d_z = if member.batch_norm {
            let xhat = &caches.bn_xhat[l];
            let sd = &caches.bn_sd[l];
            let mb = caches.z_pre[l].nrows() as f64;
            grads.gamma[l] = (&d_relu_in * xhat).sum_axis(Axis(0));
            grads.beta[l] = d_relu_in.sum_axis(Axis(0));
            let d_xhat = &d_relu_in * &member.params.gamma[l];
            // Standard batch-norm backward in normalized form:
            // dz = (d_xhat − mean(d_xhat) − x̂·mean(d_xhat·x̂)) / sd
            let mean_dx = d_xhat.mean_axis(Axis(0)).unwrap();
            let mean_dx_xhat = (&d_xhat * xhat).mean_axis(Axis(0)).unwrap();
            let _ = mb;
            ((&d_xhat - &mean_dx) - xhat * &mean_dx_xhat) / sd
        } else {
            d_relu_in
        };
        grads.w[l] = d_z.t().dot(&caches.acts[l]);
        grads.b[l] = d_z.sum_axis(Axis(0));
        d_a = d_z.dot(&member.params.w[l]);
    }
    // L1 subgradient on weights only.
    if l1 > 0.0 {
        for l in 0..n_layers {
            grads.w[l].zip_mut_with(&member.params.w[l], |g, &w| *g += l1 * w.signum());
        }
    }
    (data_loss + l1_loss, grads)
}

struct Adam {
    m: MlpParams,
    v: MlpParams,
    t: f64,
}

impl Adam {
    fn new(template: &MlpParams) -> Adam {
        Adam { m: template.zeros_like(), v: template.zeros_like(), t: 0.0 }
    }

    fn step(&mut self, params: &mut MlpParams, grads: &MlpParams, lr: f64) {
        self.t += 1.0;
        let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
        let c1 = 1.0 - b1.powf(self.t);
        let c2 = 1.0 - b2.powf(self.t);
        let upd = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for l in 0..params.w.len() {
            ndarray::Zip::from(&mut params.w[l])
                .and(&grads.w[l])
                .and(&mut self.m.w[l])
                .and(&mut self.v.w[l])
                .for_each(|p, &g, m, v| upd(p, g, m, v));
            ndarray::Zip::from(&mut params.b[l])
                .and(&grads.b[l])
                .and(&mut self.m.b[l])
                .and(&mut self.v.b[l])
                .for_each(|p, &g, m, v| upd(p, g, m, v));
        }
        for l in 0..params.gamma.len() {
            ndarray::Zip::from(&mut params.gamma[l])
                .and(&grads.gamma[l])
                .and(&mut self.m.gamma[l])
                .and(&mut self.v.gamma[l])
                .for_each(|p, &g, m, v| upd(p, g, m, v));
            ndarray::Zip::from(&mut params.beta[l])
                .and(&grads.beta[l])
                .and(&mut self.m.beta[l])
                .and(&mut self.v.beta[l])
                .for_each(|p, &g, m, v| upd(p, g, m, v));
        }
    }
}

fn mse(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    (a - b).mapv(|v| v * v).mean().unwrap()
}

/// Trains the seed ensemble. Each member runs mini-batch Adam with early
/// stopping on validation MSE, keeping the best-validation snapshot. A
/// member whose loss turns non-finite is restarted once at lr/10, then
/// dropped with a warning; at least one member must survive.
pub fn fit_mlp(
    x_train: &Array2<f64>,
    y_train: &Array1<f64>,
    x_val: &Array2<f64>,
    y_val: &Array1<f64>,
    cfg: &MlpConfig,
) -> Result<MlpFit> {
    if cfg.widths.is_empty() || cfg.widths.len() > 5 {
        bail!("need 1–5 hidden layers, got {}", cfg.widths.len());
    }
    for wnd in cfg.widths.windows(2) {
        if wnd[1] >= wnd[0] {
            bail!("hidden widths must be strictly decreasing: {:?}", cfg.widths);
        }
    }
    if cfg.widths.iter().any(|&w| w == 0) || cfg.n_seeds == 0 || cfg.max_epochs == 0 {
        bail!("widths, n_seeds and max_epochs must be positive");
    }
    if !(0.0..1.0).contains(&cfg.dropout) {
        bail!("dropout must lie in [0,1)");
    }
    let t_train = x_train.nrows();
    if t_train != y_train.len() || x_val.nrows() != y_val.len() {
        bail!("design/response length mismatch");
    }
    if x_val.ncols() != x_train.ncols() {
        bail!("train and validation feature counts differ");
    }
    let batch = if cfg.batch == 0 {
        t_train.div_ceil(50).max(1)
    } else {
        cfg.batch.min(t_train).max(1)
    };
    let mut dims = vec![x_train.ncols()];
    dims.extend(&cfg.widths);
    dims.push(1);

    let mut members = vec![];
    let mut val_curves = vec![];
    let mut warnings = vec![];
    for m_idx in 0..cfg.n_seeds {
        let mut survived = false;
        for attempt in 0..2u64 {
            let stream = 1 + (m_idx as u64) * 2 + attempt;
            let lr = cfg.lr / 10f64.powi(attempt as i32);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(stream);
            let mut member = MlpMember::init(&dims, cfg.batch_norm, &mut rng);
            member.stream = stream;
            let mut adam = Adam::new(&member.params);
            let mut best: Option<(MlpParams, Vec<Array1<f64>>, Vec<Array1<f64>>)> = None;
            let mut best_val = f64::INFINITY;
            let mut best_epoch = 0usize;
            let mut curve = vec![];
            let mut order: Vec<usize> = (0..t_train).collect();
            let mut blew_up = false;
            let mut epochs_run = 0usize;
            for epoch in 1..=cfg.max_epochs {
                order.shuffle(&mut rng);
                for chunk in order.chunks(batch) {
                    let xb = x_train.select(Axis(0), chunk);
                    let yb = Array1::from_iter(chunk.iter().map(|&i| y_train[i]));
                    let caches = forward_train(&mut member, &xb, cfg.dropout, &mut rng);
                    let (loss, grads) = backward(&member, &caches, &yb, cfg.l1, cfg.objective);
                    if !loss.is_finite() {
                        blew_up = true;
                        break;
                    }
                    adam.step(&mut member.params, &grads, lr);
                }
                if blew_up {
                    break;
                }
                let val_pred = member.predict(x_val)?;
                let vm = match cfg.objective {
                    Objective::SquaredError => mse(&val_pred, y_val),
                    Objective::AbsoluteError => (&val_pred - y_val).mapv(f64::abs).mean().unwrap(),
                };
                if !vm.is_finite() {
                    blew_up = true;
                    break;
                }
                curve.push(vm);
                epochs_run = epoch;
                if vm < best_val - 1e-12 {
                    best_val = vm;
                    best_epoch = epoch;
                    best = Some((
                        member.params.clone(),
                        member.run_mean.clone(),
                        member.run_var.clone(),
                    ));
                }
                if epoch - best_epoch >= cfg.patience {
                    break;
                }
            }
            if blew_up || best.is_none() {
                continue;
            }
            let (bp, bm, bv) = best.unwrap();
            member.params = bp;
            member.run_mean = bm;
            member.run_var = bv;
            member.epochs_run = epochs_run;
            member.best_epoch = best_epoch;
            if attempt == 1 {
                warnings.push(format!(
                    "member {m_idx} diverged at lr {}; converged after restart at lr {lr}",
                    cfg.lr
                ));
            }
            members.push(member);
            val_curves.push(curve);
            survived = true;
            break;
        }
        if !survived {
            warnings.push(format!("member {m_idx} diverged twice and was dropped"));
        }
    }
    if members.is_empty() {
        bail!("no ensemble member survived training");
    }
    Ok(MlpFit {
        members,
        widths: cfg.widths.clone(),
        l1: cfg.l1,
        lr: cfg.lr,
        val_curves,
        warnings,
    })
}

/// Loss and gradient on one batch in training mode — the hook the
/// finite-difference gradient test drives.
pub fn loss_and_grad(
    member: &MlpMember,
    x: &Array2<f64>,
    y: &Array1<f64>,
    l1: f64,
    objective: Objective,
) -> (f64, MlpParams) {
    let mut scratch = member.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let caches = forward_train(&mut scratch, x, 0.0, &mut rng);
    backward(member, &caches, y, l1, objective)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn member_from_parts(w: Vec<Array2<f64>>, b: Vec<Array1<f64>>) -> MlpMember {
        MlpMember {
            params: MlpParams { w, b, gamma: vec![], beta: vec![] },
            run_mean: vec![],
            run_var: vec![],
            batch_norm: false,
            epochs_run: 0,
            best_epoch: 0,
            stream: 0,
        }
    }

    #[test]
    fn single_relu_unit_hand_computed() {
        // h = relu(2x − 1), out = 3h + 0.5.
        let member = member_from_parts(
            vec![
                Array2::from_shape_vec((1, 1), vec![2.0]).unwrap(),
                Array2::from_shape_vec((1, 1), vec![3.0]).unwrap(),
            ],
            vec![Array1::from(vec![-1.0]), Array1::from(vec![0.5])],
        );
        let x = Array2::from_shape_vec((2, 1), vec![2.0, 0.0]).unwrap();
        let p = member.predict(&x).unwrap();
        assert!((p[0] - 9.5).abs() < 1e-15);
        assert!((p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_weights_predict_final_bias() {
        let member = member_from_parts(
            vec![Array2::zeros((3, 2)), Array2::zeros((1, 3))],
            vec![Array1::zeros(3), Array1::from(vec![7.25])],
        );
        let x = Array2::from_shape_fn((5, 2), |(i, j)| (i + j) as f64);
        let p = member.predict(&x).unwrap();
        assert!(p.iter().all(|&v| v == 7.25));
    }

    #[test]
    fn width_mismatch_is_error() {
        let member = member_from_parts(
            vec![Array2::zeros((2, 3)), Array2::zeros((1, 2))],
            vec![Array1::zeros(2), Array1::zeros(1)],
        );
        let x = Array2::zeros((4, 2));
        assert!(member.predict(&x).is_err());
    }

    #[test]
    fn relu_network_homogeneous_degree_one_with_zero_biases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dims = [3usize, 5, 2, 1];
        let mut member = MlpMember::init(&dims, false, &mut rng);
        for b in &mut member.params.b {
            b.fill(0.0);
        }
        let x = Array2::from_shape_fn((6, 3), |_| rng.sample::<f64, _>(StandardNormal));
        let p1 = member.predict(&x).unwrap();
        let p3 = member.predict(&x.mapv(|v| 3.0 * v)).unwrap();
        for i in 0..6 {
            assert!((p3[i] - 3.0 * p1[i]).abs() < 1e-10 * (1.0 + p1[i].abs()));
        }
    }

    #[test]
    fn identical_members_average_to_single_member() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let member = MlpMember::init(&[2, 3, 1], false, &mut rng);
        let x = Array2::from_shape_fn((7, 2), |_| rng.gen::<f64>());
        let single = member.predict(&x).unwrap();
        let fit = MlpFit {
            members: vec![member.clone(), member.clone(), member],
            widths: vec![3],
            l1: 0.0,
            lr: 0.01,
            val_curves: vec![],
            warnings: vec![],
        };
        let avg = fit.predict(&x).unwrap();
        for i in 0..7 {
            assert!((avg[i] - single[i]).abs() < 1e-14);
        }
    }

    fn grad_check(batch_norm: bool, l1: f64, objective: Objective) {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let member = MlpMember::init(&[2, 2, 1], batch_norm, &mut rng);
        let x = Array2::from_shape_fn((8, 2), |_| rng.sample::<f64, _>(StandardNormal));
        let y = Array1::from_shape_fn(8, |i| x[[i, 0]] - 0.5 * x[[i, 1]] + 0.1);
        let (_, grads) = loss_and_grad(&member, &x, &y, l1, objective);
        let flat_g = grads.flatten();
        let flat_p = member.params.flatten();
        let eps = 1e-6;
        for k in 0..flat_p.len() {
            let mut mp = member.clone();
            let mut up = flat_p.clone();
            up[k] += eps;
            mp.params.set_from_flat(&up);
            let (lp, _) = loss_and_grad(&mp, &x, &y, l1, objective);
            up[k] -= 2.0 * eps;
            mp.params.set_from_flat(&up);
            let (lm, _) = loss_and_grad(&mp, &x, &y, l1, objective);
            let fd = (lp - lm) / (2.0 * eps);
            assert!(
                (fd - flat_g[k]).abs() < 1e-4 * (1.0 + fd.abs()),
                "param {k}: fd {fd} vs analytic {}",
                flat_g[k]
            );
        }
    }

    #[test]
    fn gradient_matches_central_differences_plain() {
        grad_check(false, 0.0, Objective::SquaredError);
    }

    #[test]
    fn gradient_matches_central_differences_batchnorm_l1() {
        grad_check(true, 1e-3, Objective::SquaredError);
    }

    #[test]
    fn gradient_matches_central_differences_absolute_error() {
        grad_check(true, 1e-3, Objective::AbsoluteError);
    }

    #[test]
    fn learns_univariate_linear_map_close_to_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 400;
        let x = Array2::from_shape_fn((n, 1), |_| rng.sample::<f64, _>(StandardNormal));
        let y = Array1::from_shape_fn(n, |i| 2.0 * x[[i, 0]] + 0.1 * rng.sample::<f64, _>(StandardNormal));
        let (xt, xv) = (x.slice(ndarray::s![..300, ..]).to_owned(), x.slice(ndarray::s![300.., ..]).to_owned());
        let (yt, yv) = (y.slice(ndarray::s![..300]).to_owned(), y.slice(ndarray::s![300..]).to_owned());
        let cfg = MlpConfig {
            widths: vec![8],
            l1: 0.0,
            lr: 0.01,
            max_epochs: 300,
            patience: 30,
            batch: 50,
            n_seeds: 5,
            seed: 1,
            batch_norm: false,
            dropout: 0.0,
        };
        let fit = fit_mlp(&xt, &yt, &xv, &yv, &cfg).unwrap();
        let nn_mse = mse(&fit.predict(&xv).unwrap(), &yv);
        let ols = crate::linear::fit_ols(&xt, &yt).unwrap();
        let ols_mse = mse(&ols.predict(&xv), &yv);
        assert!(
            nn_mse <= 1.05 * ols_mse,
            "nn val mse {nn_mse} vs ols {ols_mse}"
        );
    }

    #[test]
    fn early_stopping_bounds_epochs() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Array2::from_shape_fn((120, 2), |_| rng.gen::<f64>());
        let y = Array1::from_shape_fn(120, |i| x[[i, 0]]);
        let cfg = MlpConfig {
            widths: vec![4],
            l1: 0.0,
            lr: 0.01,
            max_epochs: 500,
            patience: 4,
            batch: 16,
            n_seeds: 2,
            seed: 2,
            batch_norm: true,
            dropout: 0.0,
        };
        let fit = fit_mlp(&x, &y, &x, &y, &cfg).unwrap();
        for m in &fit.members {
            assert!(m.epochs_run <= m.best_epoch + 4);
            assert!(m.best_epoch >= 1);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Array2::from_shape_fn((90, 3), |_| rng.gen::<f64>());
        let y = Array1::from_shape_fn(90, |i| x[[i, 1]] - x[[i, 2]]);
        let cfg = MlpConfig {
            widths: vec![6, 3],
            l1: 1e-5,
            lr: 0.01,
            max_epochs: 15,
            patience: 5,
            batch: 0,
            n_seeds: 2,
            seed: 11,
            batch_norm: true,
            dropout: 0.0,
        };
        let a = fit_mlp(&x, &y, &x, &y, &cfg).unwrap().predict(&x).unwrap();
        let b = fit_mlp(&x, &y, &x, &y, &cfg).unwrap().predict(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn widths_must_strictly_decrease() {
        let x = Array2::zeros((30, 2));
        let y = Array1::zeros(30);
        let cfg = MlpConfig { widths: vec![4, 4], ..Default::default() };
        assert!(fit_mlp(&x, &y, &x, &y, &cfg).is_err());
    }

    #[test]
    fn divergent_members_dropped_then_error() {
        // Astronomical targets overflow the squared loss; restart at lr/10
        // cannot save it, so every member is dropped and the fit errors.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Array2::from_shape_fn((60, 2), |_| rng.gen::<f64>());
        let y = Array1::from_elem(60, 1e200);
        let cfg = MlpConfig {
            widths: vec![4],
            l1: 0.0,
            lr: 0.01,
            max_epochs: 5,
            patience: 3,
            batch: 0,
            n_seeds: 2,
            seed: 3,
            batch_norm: false,
            dropout: 0.0,
        };
        assert!(fit_mlp(&x, &y, &x, &y, &cfg).is_err());
    }
}
