//! Deep alternating network: the MM-ADMM selector unrolled into `L` layers
//! with Adam-style first/second-order momentum replacing the Hessian-based
//! curvature. Learnable parameters are the per-layer step sizes `ᾱ_l` and
//! the momentum weight `β₁`.

use std::path::Path;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fisher::SelectCtx;
use crate::linalg::l1_norm;
use crate::mm_admm::{check_start, penalty_value_grad, AdmmOutcome, AdmmProblem, SelectTrace};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DanParams {
    pub alpha_bar: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eta1: f64,
    pub eta_a: f64,
    pub rho_a: f64,
    pub rho: f64,
    pub gamma: f64,
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub admm_iters: usize,
    pub tol: f64,
}

impl Default for DanParams {
    fn default() -> Self {
        Self::with_layers(10)
    }
}

impl DanParams {
    pub fn with_layers(layers: usize) -> Self {
        Self {
            alpha_bar: vec![0.15; layers],
            beta1: 0.99,
            beta2: 0.999,
            eta1: 0.99,
            eta_a: 0.99,
            rho_a: 100.0,
            rho: 1.0,
            gamma: 1e4,
            alpha_lo: 0.01,
            alpha_hi: 1.0,
            admm_iters: 200,
            tol: 1e-6,
        }
    }

    pub fn layers(&self) -> usize {
        self.alpha_bar.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha_bar.is_empty() {
            return Err(invalid("DAN needs at least one layer"));
        }
        if !(0.0 < self.alpha_lo && self.alpha_lo <= self.alpha_hi) {
            return Err(invalid("need 0 < alpha_lo <= alpha_hi"));
        }
        if self.alpha_bar.iter().any(|a| !(self.alpha_lo..=self.alpha_hi).contains(a)) {
            return Err(invalid("alpha_bar entries must lie in [alpha_lo, alpha_hi]"));
        }
        let unit = [self.beta1, self.beta2, self.eta1, self.eta_a];
        if unit.iter().any(|x| !(0.0 < *x && *x < 1.0)) {
            return Err(invalid("beta1, beta2, eta1 and eta_a must lie in (0, 1)"));
        }
        if self.beta1 >= self.beta2.sqrt() {
            return Err(invalid("beta1 must be below sqrt(beta2)"));
        }
        if !(self.rho_a > 0.0 && self.rho >= 0.0 && self.gamma > 0.0 && self.tol > 0.0) || self.admm_iters == 0 {
            return Err(invalid("rho_a, gamma, tol and admm_iters must be positive"));
        }
        Ok(())
    }

    /// Upper end of the admissible `β₁` range used after each SGD step.
    pub fn beta1_cap(&self) -> f64 {
        0.999f64.min(self.beta2.sqrt() - 1e-3)
    }

    /// Clamp the learnables back into their admissible sets.
    pub fn project(&mut self) {
        for a in &mut self.alpha_bar {
            *a = a.clamp(self.alpha_lo, self.alpha_hi);
        }
        self.beta1 = self.beta1.clamp(1e-6, self.beta1_cap());
    }

    pub fn rho_al(&self, l: usize) -> f64 {
        self.rho_a * self.eta_a.powi(l as i32)
    }

    fn learnables(&self) -> Vec<f64> {
        let mut v = self.alpha_bar.clone();
        v.push(self.beta1);
        v
    }

    fn with_learnables(&self, theta: &[f64]) -> Self {
        let mut p = self.clone();
        let l = p.alpha_bar.len();
        p.alpha_bar.copy_from_slice(&theta[..l]);
        p.beta1 = theta[l];
        p
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerState {
    pub u: DVector<f64>,
    pub m_hat: DVector<f64>,
    pub v_hat: DVector<f64>,
    /// Number of layers applied so far.
    pub layer: usize,
}

impl LayerState {
    pub fn start(u0: &DVector<f64>) -> Self {
        let n = u0.len();
        Self { u: u0.clone(), m_hat: DVector::zeros(n), v_hat: DVector::zeros(n), layer: 0 }
    }
}

/// What one layer saw and produced, for regret diagnostics.
#[derive(Clone, Debug)]
pub struct LayerDiag {
    pub grad: DVector<f64>,
    /// Diagonal of `Φ_l`.
    pub phi: DVector<f64>,
    pub inner: AdmmOutcome,
}

/// One unrolled layer: momentum update, `Φ_l = diag(√|v̂_l|/α_l) + ρ_{a,l} I`,
/// then the inner ADMM with the momentum in place of the gradient.
pub fn dan_layer(state: &LayerState, ctx: &SelectCtx, params: &DanParams) -> Result<(LayerState, LayerDiag)> {
    let l = state.layer + 1;
    if l > params.layers() {
        return Err(invalid(format!("layer {l} exceeds the configured {} layers", params.layers())));
    }
    let grad = ctx.grad(&state.u)?;
    let beta1_l = params.beta1 * params.eta1.powi(l as i32);
    let m_hat = &state.m_hat * beta1_l + &grad * (1.0 - beta1_l);
    let v_hat = &state.v_hat * params.beta2 + grad.component_mul(&grad) * (1.0 - params.beta2);
    let alpha_l = params.alpha_bar[l - 1] / (l as f64).sqrt();
    let rho_al = params.rho_al(l);
    let phi = v_hat.map(|v| v.abs().sqrt() / alpha_l + rho_al);
    let (_, d_gamma) = penalty_value_grad(&state.u.map(|x| x.max(0.0)), params.gamma);
    let prob = AdmmProblem { anchor: state.u.clone(), grad: m_hat.clone(), phi: phi.clone(), d_gamma, rho: params.rho, rho_al };
    let inner = prob.solve(params.admm_iters, params.tol)?;
    let next = LayerState { u: inner.state.u.clone(), m_hat, v_hat, layer: l };
    Ok((next, LayerDiag { grad, phi, inner }))
}

#[derive(Clone, Debug)]
pub struct DanRun {
    pub u_layers: Vec<DVector<f64>>,
    pub trace: SelectTrace,
    pub diags: Vec<LayerDiag>,
}

impl DanRun {
    pub fn output(&self) -> &DVector<f64> {
        self.u_layers.last().expect("at least one layer")
    }
}

pub fn dan_forward(ctx: &SelectCtx, u0: &DVector<f64>, params: &DanParams) -> Result<DanRun> {
    params.validate()?;
    check_start(u0, ctx.n())?;
    let mut state = LayerState::start(u0);
    let mut trace = SelectTrace { initial_cost: ctx.cost(u0)?, ..Default::default() };
    let mut u_layers = Vec::with_capacity(params.layers());
    let mut diags = Vec::with_capacity(params.layers());
    for _ in 0..params.layers() {
        let (next, diag) = dan_layer(&state, ctx, params)?;
        trace.record(ctx, &next.u, params.gamma, params.rho, &diag.inner)?;
        trace.backtracks.push(0);
        u_layers.push(next.u.clone());
        diags.push(diag);
        state = next;
    }
    Ok(DanRun { u_layers, trace, diags })
}

/// Pairs `(l, i)` with `l ≥ 2` where the learning rate `φ_{l,i}⁻¹` grew.
pub fn learning_rate_violations(run: &DanRun) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for l in 1..run.diags.len() {
        let (prev, cur) = (&run.diags[l - 1].phi, &run.diags[l].phi);
        for i in 0..cur.len() {
            if 1.0 / cur[i] > 1.0 / prev[i] {
                out.push((l + 1, i));
            }
        }
    }
    out
}

/// `N_max` ones at the largest entries, ties to the lower index.
pub fn binarize(u: &DVector<f64>, nmax: usize) -> DVector<f64> {
    let mut idx: Vec<usize> = (0..u.len()).collect();
    idx.sort_by(|a, b| u[*b].total_cmp(&u[*a]).then(a.cmp(b)));
    crate::baselines::indicator(u.len(), &idx[..nmax.min(u.len())])
}

pub fn selected_nodes(u: &DVector<f64>) -> Vec<usize> {
    (0..u.len()).filter(|&i| u[i] > 0.5).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretConstants {
    pub d_delta: f64,
    pub d_u1: f64,
    pub d_phi: f64,
    pub d_b1: f64,
    pub d_b2: f64,
    pub d_delta_u2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub r_l: f64,
    pub c1: f64,
    pub c2: f64,
    pub bound: f64,
    pub constants: RegretConstants,
    pub holds: bool,
}

/// Penalised objective `F(u) + ρ P_γ(u)` on the box-clipped vector.
pub fn surrogate_objective(ctx: &SelectCtx, u: &DVector<f64>, rho: f64, gamma: f64) -> Result<f64> {
    let clipped = u.map(|x| x.clamp(0.0, 1.0));
    let (pen, _) = penalty_value_grad(&clipped, gamma);
    Ok(ctx.cost(&clipped)? + rho * pen)
}

/// Lowest-objective candidate; the reference point for the regret.
pub fn best_reference(ctx: &SelectCtx, candidates: &[DVector<f64>], rho: f64, gamma: f64) -> Result<DVector<f64>> {
    let mut best: Option<(f64, &DVector<f64>)> = None;
    for c in candidates {
        let g = surrogate_objective(ctx, c, rho, gamma)?;
        if best.is_none_or(|(b, _)| g < b) {
            best = Some((g, c));
        }
    }
    best.map(|(_, c)| c.clone()).ok_or_else(|| invalid("no reference candidates"))
}

/// Empirical regret of a forward pass against `u_star` and the bound
/// `C1 √L + C2` with its data-dependent constants read off the run.
pub fn regret_bound_check(ctx: &SelectCtx, run: &DanRun, params: &DanParams, u_star: &DVector<f64>) -> Result<RegretReport> {
    if run.u_layers.is_empty() || run.diags.len() != run.u_layers.len() {
        return Err(invalid("forward trace is missing layer records"));
    }
    let n = u_star.len();
    let nmax = u_star.sum().round() as usize;
    let g_star = surrogate_objective(ctx, u_star, params.rho, params.gamma)?;
    let mut r_l = 0.0;
    for u in &run.u_layers {
        r_l += surrogate_objective(ctx, u, params.rho, params.gamma)? - g_star;
    }

    let mut k = RegretConstants {
        d_delta: 2.0 * nmax.min(n - nmax) as f64,
        d_u1: 0.0,
        d_phi: 0.0,
        d_b1: 0.0,
        d_b2: 0.0,
        d_delta_u2: 0.0,
    };
    for (diag, u) in run.diags.iter().zip(&run.u_layers) {
        k.d_u1 = k.d_u1.max(l1_norm(&diag.grad));
        k.d_phi = k.d_phi.max(diag.phi.iter().fold(0.0, |m, p| m.max(1.0 / p)));
        let b = &diag.inner.state.v - &diag.inner.state.z;
        k.d_b1 = k.d_b1.max(l1_norm(&b));
        k.d_b2 = k.d_b2.max(b.norm_squared());
        k.d_delta_u2 = k.d_delta_u2.max((u - u_star).norm_squared());
    }

    let (c1, c2) = bound_constants(params, &k);
    let l = run.u_layers.len() as f64;
    let bound = c1 * l.sqrt() + c2;
    Ok(RegretReport { r_l, c1, c2, bound, constants: k, holds: r_l <= bound })
}

/// `(C1, C2)` of the regret bound.
pub fn bound_constants(p: &DanParams, k: &RegretConstants) -> (f64, f64) {
    let (b1, b2, e1, ea, ra) = (p.beta1, p.beta2, p.eta1, p.eta_a, p.rho_a);
    let (a_lo, a_hi) = (p.alpha_lo, p.alpha_hi);
    let (dd, du1, dphi, db1, db2, ddu2) = (k.d_delta, k.d_u1, k.d_phi, k.d_b1, k.d_b2, k.d_delta_u2);
    let sb2 = b2.sqrt();
    let adam = (1.0 - b2).sqrt() * du1 * dd / (a_lo * (1.0 - sb2) * (1.0 - b1));
    let c1 = adam;

    let terms = [
        2.0 * ra * dd * ea / (1.0 - b1),
        adam,
        a_hi * (3.0 + b1) * du1
            / (2.0 * (1.0 - b1).powi(2) * (1.0 - b1 / sb2) * (1.0 - b2).sqrt() * (1.0 - e1 * e1)),
        ra * dphi * (db1 + db2) / (2.0 * (1.0 - ea) * (1.0 - b1)),
        du1 * dphi / (2.0 * (1.0 - e1) * (1.0 - b1).powi(2)),
        b1 * adam / (2.0 * (1.0 - e1).powi(2)),
        b1 * ra * dd / (2.0 * (1.0 - e1 * ea) * (1.0 - b1)),
        ra * adam / (2.0 * (1.0 - ea).powi(2)),
        ra * ra * dd / (2.0 * (1.0 - ea * ea) * (1.0 - b1)),
        3.0 * ra * ra * dphi * db2 / (2.0 * (1.0 - ea * ea) * (1.0 - b1)),
        3.0 * du1 * du1 * dphi / ((1.0 - e1 * e1) * (1.0 - b1).powi(3)),
        3.0 * ra * ra * db1 * db1 * dphi / ((1.0 - ea * ea) * (1.0 - b1)),
        ddu2 * dphi / (1.0 - b1),
        (du1 / ((1.0 - b1) * (1.0 - e1).powi(2)) + ra * db1 / (1.0 - ea).powi(2)) * adam / 2.0,
        (du1 / ((1.0 - b1) * (1.0 - e1) * (1.0 - ea)) + ra * db1 / (1.0 - ea).powi(2)) * dd * ra / (2.0 * (1.0 - b1)),
    ];
    (c1, terms.iter().sum())
}

#[derive(Clone, Debug)]
pub struct TrainSample {
    pub ctx: SelectCtx,
    pub u0: DVector<f64>,
    pub label: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub n_train: usize,
    pub epochs: usize,
    pub fd_step: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 5e-5, n_train: 500, epochs: 5, fd_step: 1e-3, batch_size: 1, seed: 1 }
    }
}

/// `(1/L) Σ_l ‖u_ES − û^l‖²` over the relaxed layer outputs.
pub fn sample_loss(sample: &TrainSample, params: &DanParams) -> Result<f64> {
    let run = dan_forward(&sample.ctx, &sample.u0, params)?;
    let total: f64 = run.u_layers.iter().map(|u| (&sample.label - u).norm_squared()).sum();
    Ok(total / run.u_layers.len() as f64)
}

pub fn dataset_loss(samples: &[TrainSample], params: &DanParams) -> Result<f64> {
    let losses = samples.par_iter().map(|s| sample_loss(s, params)).collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / samples.len() as f64)
}

/// Central finite-difference gradient of the mean batch loss in the
/// learnables `(ᾱ_1..ᾱ_L, β₁)`.
pub fn fd_gradient(batch: &[&TrainSample], params: &DanParams, h: f64) -> Result<Vec<f64>> {
    let theta = params.learnables();
    let probes: Vec<(usize, f64)> = (0..theta.len()).flat_map(|i| [(i, h), (i, -h)]).collect();
    let values = probes
        .par_iter()
        .map(|(i, d)| {
            let mut t = theta.clone();
            t[*i] += d;
            let p = params.with_learnables(&t);
            let mut acc = 0.0;
            for s in batch {
                acc += sample_loss(s, &p)?;
            }
            Ok(acc / batch.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(values.chunks(2).map(|c| (c[0] - c[1]) / (2.0 * h)).collect())
}

pub fn sgd_step(params: &DanParams, grad: &[f64], lr: f64) -> DanParams {
    let theta: Vec<f64> = params.learnables().iter().zip(grad).map(|(t, g)| t - lr * g).collect();
    let mut next = params.with_learnables(&theta);
    next.project();
    next
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub params: DanParams,
    /// Mean dataset loss before training and after each epoch.
    pub loss_curve: Vec<f64>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> f64 {
        *self.loss_curve.last().expect("loss curve starts with the initial loss")
    }
}

pub fn train_dan(dataset: &[TrainSample], params0: &DanParams, tcfg: &TrainConfig) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(invalid("training set is empty"));
    }
    if !(tcfg.lr > 0.0 && tcfg.fd_step > 0.0) || tcfg.batch_size == 0 {
        return Err(invalid("learning rate, finite-difference step and batch size must be positive"));
    }
    params0.validate()?;
    let mut params = params0.clone();
    params.project();
    let mut curve = vec![dataset_loss(dataset, &params)?];
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..tcfg.epochs {
        let mut rng = crate::seeds::stream_rng(tcfg.seed, "train-shuffle", epoch as u64);
        order.shuffle(&mut rng);
        for chunk in order.chunks(tcfg.batch_size) {
            let batch: Vec<&TrainSample> = chunk.iter().map(|&i| &dataset[i]).collect();
            let g = fd_gradient(&batch, &params, tcfg.fd_step)?;
            params = sgd_step(&params, &g, tcfg.lr);
        }
        curve.push(dataset_loss(dataset, &params)?);
    }
    Ok(TrainOutcome { params, loss_curve: curve })
}

pub const PARAMS_FORMAT_VERSION: u32 = 1;

/// On-disk trained parameters with provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub format_version: u32,
    pub params: DanParams,
    pub seed: u64,
    pub scenario_fingerprint: String,
    pub dataset_fingerprint: String,
    pub train: TrainConfig,
    pub loss_curve: Vec<f64>,
}

impl ParamsFile {
    pub fn load(path: &Path) -> Result<Self> {
        let file: ParamsFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if file.format_version != PARAMS_FORMAT_VERSION {
            return Err(invalid(format!(
                "params file version {} is not supported (expected {PARAMS_FORMAT_VERSION})",
                file.format_version
            )));
        }
        file.params.validate()?;
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{exhaustive_select, DEFAULT_ES_CAP};
    use crate::instances::{random_ctx, uniform_start};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dv(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn binarize_examples() {
        assert_eq!(binarize(&dv(&[0.9, 0.1, 0.8, 0.2]), 2), dv(&[1.0, 0.0, 1.0, 0.0]));
        assert_eq!(binarize(&dv(&[0.0, 1.0, 1.0, 0.0]), 2), dv(&[0.0, 1.0, 1.0, 0.0]));
        assert_eq!(binarize(&DVector::from_element(5, 0.4), 2), dv(&[1.0, 1.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn params_invariants() {
        let p = DanParams::default();
        p.validate().unwrap();
        assert_eq!(p.layers(), 10);
        let bad = DanParams { beta1: 0.9996, ..DanParams::default() };
        assert!(bad.validate().is_err());
        let mut q = DanParams { beta1: 0.99999, alpha_bar: vec![5.0; 10], ..DanParams::default() };
        q.project();
        assert!(q.beta1 <= q.beta1_cap());
        assert!(q.alpha_bar.iter().all(|a| *a == 1.0));
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ctx = random_ctx(&mut rng, 6, 2);
        for m in &mut ctx.m.mbar {
            *m = crate::linalg::Mat4::zeros();
        }
        let u0 = uniform_start(6, 2);
        let (next, _) = dan_layer(&LayerState::start(&u0), &ctx, &DanParams::default()).unwrap();
        assert_relative_eq!(next.u, u0, epsilon = 1e-15);
        assert_eq!(next.m_hat, DVector::zeros(6));
    }

    #[test]
    fn momentum_matches_scalar_reference() {
        // N = 1 with a zero-information node keeps u fixed, so the gradient is
        // the constant −tr(J⁻¹ p M̄); build a node with a known gradient instead.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ctx = random_ctx(&mut rng, 1, 1);
        let params = DanParams::default();
        let u0 = DVector::from_element(1, 1.0);
        let g = ctx.grad(&u0).unwrap()[0];
        let mut s = LayerState::start(&u0);
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for l in 1..=params.layers() {
            let (next, diag) = dan_layer(&s, &ctx, &params).unwrap();
            // With a single node the sum constraint pins u = 1.
            assert_relative_eq!(next.u[0], 1.0, epsilon = 1e-12);
            let b = params.beta1 * params.eta1.powi(l as i32);
            m = b * m + (1.0 - b) * g;
            v = params.beta2 * v + (1.0 - params.beta2) * g * g;
            assert_relative_eq!(next.m_hat[0], m, max_relative = 1e-12);
            assert_relative_eq!(next.v_hat[0], v, max_relative = 1e-12);
            let phi = v.sqrt() * (l as f64).sqrt() / params.alpha_bar[l - 1] + params.rho_a * params.eta_a.powi(l as i32);
            assert_relative_eq!(diag.phi[0], phi, max_relative = 1e-12);
            s = next;
        }
        // Closed-form check of the second moment: (1 − β₂^L) g².
        assert_relative_eq!(v, (1.0 - params.beta2.powi(10)) * g * g, max_relative = 1e-12);
    }

    #[test]
    fn beta1_zero_uses_raw_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ctx = random_ctx(&mut rng, 8, 2);
        let params = DanParams { beta1: 1e-300, ..DanParams::default() };
        let u0 = uniform_start(8, 2);
        let (next, diag) = dan_layer(&LayerState::start(&u0), &ctx, &params).unwrap();
        assert_relative_eq!(next.m_hat, diag.grad, max_relative = 1e-12);
    }

    #[test]
    fn forward_is_deterministic_and_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ctx = random_ctx(&mut rng, 12, 3);
        let u0 = uniform_start(12, 3);
        let a = dan_forward(&ctx, &u0, &DanParams::default()).unwrap();
        let b = dan_forward(&ctx, &u0, &DanParams::default()).unwrap();
        assert_eq!(a.u_layers, b.u_layers);
        assert_eq!(a.u_layers.len(), 10);
        for (u, d) in a.u_layers.iter().zip(&a.diags) {
            assert!((u.sum() - 3.0).abs() < 1e-8);
            assert!(d.inner.state.v.iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }

    #[test]
    fn regret_trivial_and_nonnegative_constants() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ctx = random_ctx(&mut rng, 8, 2);
        let params = DanParams::with_layers(1);
        let run = dan_forward(&ctx, &uniform_start(8, 2), &params).unwrap();
        let rep = regret_bound_check(&ctx, &run, &params, run.output()).unwrap();
        assert_eq!(rep.r_l, 0.0);
        assert!(rep.holds);
        let k = &rep.constants;
        for c in [k.d_delta, k.d_u1, k.d_phi, k.d_b1, k.d_b2, k.d_delta_u2, rep.c1, rep.c2] {
            assert!(c >= 0.0);
        }
        let empty = DanRun { u_layers: vec![], trace: SelectTrace::default(), diags: vec![] };
        assert!(regret_bound_check(&ctx, &empty, &params, run.output()).is_err());
    }

    #[test]
    fn zero_gradient_step_keeps_params() {
        let p = DanParams::default();
        let q = sgd_step(&p, &[0.0; 11], 5e-5);
        assert_eq!(p, q);
    }

    #[test]
    fn training_rejects_empty_set() {
        assert!(train_dan(&[], &DanParams::default(), &TrainConfig::default()).is_err());
    }

    #[test]
    fn fd_gradient_matches_loss_slope() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ctx = random_ctx(&mut rng, 8, 2);
        let (label, _) = exhaustive_select(&ctx, 2, DEFAULT_ES_CAP).unwrap();
        let sample = TrainSample { ctx, u0: uniform_start(8, 2), label };
        let params = DanParams::default();
        let g = fd_gradient(&[&sample], &params, 1e-3).unwrap();
        assert_eq!(g.len(), 11);
        // A small step against the gradient should not increase the loss.
        let stepped = sgd_step(&params, &g, 1e-4 / g.iter().map(|x| x.abs()).fold(1e-12, f64::max));
        assert!(sample_loss(&sample, &stepped).unwrap() <= sample_loss(&sample, &params).unwrap() + 1e-9);
    }

    #[test]
    fn params_file_roundtrip() {
        let dir = std::env::temp_dir().join(format!("pmn-params-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("p.json");
        let file = ParamsFile {
            format_version: PARAMS_FORMAT_VERSION,
            params: DanParams::default(),
            seed: 3,
            scenario_fingerprint: "abc".into(),
            dataset_fingerprint: "def".into(),
            train: TrainConfig::default(),
            loss_curve: vec![1.0, 0.5],
        };
        file.save(&path).unwrap();
        assert_eq!(ParamsFile::load(&path).unwrap(), file);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
