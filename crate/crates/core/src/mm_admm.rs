//! Sensing-node selection by majorization-minimization with an inner ADMM.
//!
//! The ℓ0 budget is relaxed to the smooth penalty `P_γ(u) = Σ(1 − e^{−γu_n})`.
//! Each MM step linearises `P_γ`, bounds the log-det cost by a quadratic with
//! curvature `C_T·I ⪰ H_u`, and minimises the resulting convex surrogate over
//! `{1ᵀu = N_max}` ∩ `{0 ≤ v ≤ 1}` with ADMM on the split `u = v`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fisher::SelectCtx;
use crate::linalg::{inf_norm, max_eigenvalue};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MMConfig {
    pub rho: f64,
    pub gamma: f64,
    pub rho_a: f64,
    pub eta_a: f64,
    pub mm_iters: usize,
    pub admm_iters: usize,
    pub tol: f64,
    /// Added to `C_T` so the curvature stays positive.
    pub eps: f64,
    /// Curvature doublings tried before an outer step is abandoned.
    pub max_backtracks: usize,
}

impl Default for MMConfig {
    fn default() -> Self {
        Self { rho: 1.0, gamma: 1e4, rho_a: 100.0, eta_a: 0.99, mm_iters: 30, admm_iters: 200, tol: 1e-6, eps: 1e-8, max_backtracks: 30 }
    }
}

impl MMConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.rho, self.gamma, self.rho_a, self.eta_a, self.tol, self.eps];
        if positive.iter().any(|v| !(*v > 0.0)) || self.mm_iters == 0 || self.admm_iters == 0 {
            return Err(invalid("MM-ADMM parameters must be positive"));
        }
        if self.eta_a >= 1.0 {
            return Err(invalid("eta_a must be below 1"));
        }
        Ok(())
    }

    /// `ρ_{a,l} = ρ_a η_a^l`, with `l` counted from 1.
    pub fn rho_al(&self, l: usize) -> f64 {
        self.rho_a * self.eta_a.powi(l as i32)
    }
}

/// How the isotropic curvature `C_T` is derived from the Hessian.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurvatureRule {
    /// `tr(H_u)` (MA-I).
    Trace,
    /// `λ_max(H_u)` (MA-II).
    MaxEig,
}

pub fn penalty_value_grad(u: &DVector<f64>, gamma: f64) -> (f64, DVector<f64>) {
    let e = u.map(|x| (-gamma * x).exp());
    let value = e.iter().map(|v| 1.0 - v).sum();
    (value, e * gamma)
}

pub fn choose_t(hu: &DMatrix<f64>, rule: CurvatureRule) -> f64 {
    match rule {
        CurvatureRule::Trace => hu.trace(),
        CurvatureRule::MaxEig => max_eigenvalue(hu),
    }
}

/// Minimiser of `d_mᵀ(u − a) + ½(u − a)ᵀΦ(u − a)` over `1ᵀu = 1ᵀa`:
/// `u = a − Φ⁻¹(d_m − ν1)`, `ν = 1ᵀΦ⁻¹d_m / 1ᵀΦ⁻¹1`.
pub fn admm_u_update(u_anchor: &DVector<f64>, phi_diag: &DVector<f64>, d_m: &DVector<f64>) -> Result<DVector<f64>> {
    if phi_diag.iter().any(|p| !(*p > 0.0)) {
        return Err(invalid("Phi must be positive definite"));
    }
    let inv = phi_diag.map(|p| 1.0 / p);
    let nu = inv.dot(d_m) / inv.sum();
    Ok(u_anchor - inv.component_mul(&d_m.add_scalar(-nu)))
}

/// `clip(u + z − (ρ/ρ_{a,l}) d_γ, 0, 1)`.
pub fn admm_v_update(u_next: &DVector<f64>, z: &DVector<f64>, d_gamma: &DVector<f64>, rho: f64, rho_al: f64) -> DVector<f64> {
    (u_next + z - d_gamma * (rho / rho_al)).map(|x| x.clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdmmState {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    /// Scaled dual variable.
    pub z: DVector<f64>,
}

/// One convex surrogate subproblem around `anchor`.
#[derive(Clone, Debug)]
pub struct AdmmProblem {
    pub anchor: DVector<f64>,
    /// Linear term of the smooth part (gradient or first-order momentum).
    pub grad: DVector<f64>,
    /// Diagonal of `Φ = T + ρ_{a,l} I`.
    pub phi: DVector<f64>,
    pub d_gamma: DVector<f64>,
    pub rho: f64,
    pub rho_al: f64,
}

#[derive(Clone, Debug)]
pub struct AdmmOutcome {
    pub state: AdmmState,
    pub iterations: usize,
    pub converged: bool,
}

impl AdmmProblem {
    /// `d_m = g + ρ_{a,l}(a − v + z)`: the full linear coefficient of the
    /// u-subproblem once the coupling term is expanded around the anchor.
    pub fn d_m(&self, v: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        &self.grad + (&self.anchor - v + z) * self.rho_al
    }

    /// Augmented Lagrangian up to constants in `(u, v, z)`.
    pub fn lagrangian(&self, s: &AdmmState) -> f64 {
        let du = &s.u - &self.anchor;
        let t = self.phi.add_scalar(-self.rho_al);
        let smooth = self.grad.dot(&du) + 0.5 * du.component_mul(&du).dot(&t);
        let penalty = self.rho * self.d_gamma.dot(&(&s.v - &self.anchor));
        let coupling = 0.5 * self.rho_al * (&s.u - &s.v + &s.z).norm_squared();
        smooth + penalty + coupling
    }

    pub fn step(&self, s: &AdmmState) -> Result<AdmmState> {
        let u = admm_u_update(&self.anchor, &self.phi, &self.d_m(&s.v, &s.z))?;
        let v = admm_v_update(&u, &s.z, &self.d_gamma, self.rho, self.rho_al);
        let z = &s.z + &u - &v;
        Ok(AdmmState { u, v, z })
    }

    pub fn initial_state(&self) -> AdmmState {
        let n = self.anchor.len();
        AdmmState { u: self.anchor.clone(), v: self.anchor.map(|x| x.clamp(0.0, 1.0)), z: DVector::zeros(n) }
    }

    /// Iterates until both `‖Δu‖∞` and `‖u − v‖∞` drop below `tol`.
    pub fn solve(&self, max_iters: usize, tol: f64) -> Result<AdmmOutcome> {
        let mut s = self.initial_state();
        for it in 1..=max_iters {
            let next = self.step(&s)?;
            let du = inf_norm(&(&next.u - &s.u));
            let primal = inf_norm(&(&next.u - &next.v));
            s = next;
            if du < tol && primal < tol {
                return Ok(AdmmOutcome { state: s, iterations: it, converged: true });
            }
        }
        Ok(AdmmOutcome { state: s, iterations: max_iters, converged: false })
    }
}

/// Per-iteration record of a selector run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectTrace {
    pub initial_cost: f64,
    /// `−log det J(u^{(l)})` after each outer iteration or layer.
    pub cost_per_iter: Vec<f64>,
    /// Cost plus `ρ P_γ`.
    pub objective_per_iter: Vec<f64>,
    pub u_per_iter: Vec<Vec<f64>>,
    /// `‖u⋆ − v⋆‖∞` of the inner solve.
    pub residual_per_iter: Vec<f64>,
    pub inner_iters: Vec<usize>,
    pub inner_converged: Vec<bool>,
    /// Curvature doublings needed before the step was accepted.
    pub backtracks: Vec<usize>,
}

impl SelectTrace {
    pub fn final_cost(&self) -> f64 {
        self.cost_per_iter.last().copied().unwrap_or(self.initial_cost)
    }

    pub(crate) fn record(&mut self, ctx: &SelectCtx, u: &DVector<f64>, gamma: f64, rho: f64, out: &AdmmOutcome) -> Result<()> {
        let cost = ctx.cost(u)?;
        let (pen, _) = penalty_value_grad(&u.map(|x| x.max(0.0)), gamma);
        self.cost_per_iter.push(cost);
        self.objective_per_iter.push(cost + rho * pen);
        self.u_per_iter.push(u.iter().copied().collect());
        self.residual_per_iter.push(inf_norm(&(&out.state.u - &out.state.v)));
        self.inner_iters.push(out.iterations);
        self.inner_converged.push(out.converged);
        Ok(())
    }
}

/// `(F(u), F(u) + ρ P_γ(u))` with the penalty evaluated on `max(u, 0)`.
fn penalized_cost(ctx: &SelectCtx, u: &DVector<f64>, cfg: &MMConfig) -> Result<(f64, f64)> {
    let f = ctx.cost(u)?;
    let (pen, _) = penalty_value_grad(&u.map(|x| x.max(0.0)), cfg.gamma);
    Ok((f, f + cfg.rho * pen))
}

pub fn check_start(u0: &DVector<f64>, n: usize) -> Result<usize> {
    if u0.len() != n {
        return Err(invalid(format!("start vector has {} entries for {n} nodes", u0.len())));
    }
    if u0.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(invalid("start vector must lie in [0, 1]^N"));
    }
    let s = u0.sum();
    let nmax = s.round();
    if (s - nmax).abs() > 1e-8 || nmax < 1.0 {
        return Err(invalid(format!("start vector must sum to a positive integer budget, sums to {s}")));
    }
    Ok(nmax as usize)
}

/// Outer MM loop. `u0` must be feasible; its sum fixes `N_max`.
pub fn mm_admm_select(
    ctx: &SelectCtx,
    u0: &DVector<f64>,
    rule: CurvatureRule,
    cfg: &MMConfig,
) -> Result<(DVector<f64>, SelectTrace)> {
    cfg.validate()?;
    check_start(u0, ctx.n())?;
    let mut u = u0.clone();
    let mut trace = SelectTrace { initial_cost: ctx.cost(&u)?, ..Default::default() };
    let mut current = penalized_cost(ctx, &u, cfg)?;
    'outer: for l in 1..=cfg.mm_iters {
        let grad = ctx.grad(&u)?;
        let hess = ctx.hess(&u)?;
        let mut c_t = choose_t(&hess, rule).max(0.0) + cfg.eps;
        let rho_al = cfg.rho_al(l);
        let (_, d_gamma) = penalty_value_grad(&u.map(|x| x.max(0.0)), cfg.gamma);
        // `C_T I ⪰ H_u` holds at the anchor only; when the step leaves the
        // region where the quadratic majorises, enlarge the curvature.
        for attempt in 0..=cfg.max_backtracks {
            let prob = AdmmProblem {
                anchor: u.clone(),
                grad: grad.clone(),
                phi: DVector::from_element(ctx.n(), c_t + rho_al),
                d_gamma: d_gamma.clone(),
                rho: cfg.rho,
                rho_al,
            };
            let out = prob.solve(cfg.admm_iters, cfg.tol)?;
            let next = out.state.u.clone();
            let candidate = penalized_cost(ctx, &next, cfg)?;
            if candidate.0 <= current.0 && candidate.1 <= current.1 {
                let du = inf_norm(&(&next - &u));
                trace.record(ctx, &next, cfg.gamma, cfg.rho, &out)?;
                trace.backtracks.push(attempt);
                u = next;
                current = candidate;
                if du < cfg.tol {
                    break 'outer;
                }
                continue 'outer;
            }
            c_t *= 2.0;
        }
        break;
    }
    Ok((u, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{random_ctx, uniform_start};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dv(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn penalty_examples() {
        let (v, g) = penalty_value_grad(&DVector::zeros(3), 1e4);
        assert_eq!(v, 0.0);
        assert_eq!(g, DVector::from_element(3, 1e4));
        let (v, g) = penalty_value_grad(&dv(&[1.0]), 1e4);
        assert_relative_eq!(v, 1.0);
        assert!(g[0] < 1e-100);
        let u = dv(&[0.0, 0.01, 0.5, 1.0, 0.0, 0.3]);
        let (v, _) = penalty_value_grad(&u, 1e4);
        assert!((v - 4.0).abs() < 1e-3);
    }

    #[test]
    fn penalty_linearisation_majorises() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let gamma = 10f64.powf(rng.random_range(0.0..4.0));
            let u = DVector::from_fn(6, |_, _| rng.random_range(0.0..1.0));
            let ul = DVector::from_fn(6, |_, _| rng.random_range(0.0..1.0));
            let (pl, dl) = penalty_value_grad(&ul, gamma);
            let (pu, _) = penalty_value_grad(&u, gamma);
            assert!(pl + dl.dot(&(&u - &ul)) >= pu - 1e-12);
        }
    }

    #[test]
    fn curvature_rules() {
        let h = DMatrix::from_diagonal(&dv(&[1.0, 2.0, 3.0]));
        assert_eq!(choose_t(&h, CurvatureRule::Trace), 6.0);
        assert_relative_eq!(choose_t(&h, CurvatureRule::MaxEig), 3.0, epsilon = 1e-12);
        assert_eq!(choose_t(&DMatrix::zeros(3, 3), CurvatureRule::Trace), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let b = DMatrix::from_fn(5, 3, |_, _| rng.random_range(-1.0..1.0));
            let h = &b * b.transpose();
            for rule in [CurvatureRule::Trace, CurvatureRule::MaxEig] {
                let gap = DMatrix::identity(5, 5) * choose_t(&h, rule) - &h;
                assert!(crate::linalg::min_eigenvalue(&gap) >= -1e-10);
            }
        }
    }

    #[test]
    fn u_update_examples() {
        let a = dv(&[0.5, 0.25, 0.25]);
        let phi = dv(&[1.0, 3.0, 2.0]);
        assert_relative_eq!(admm_u_update(&a, &phi, &DVector::from_element(3, 0.7)).unwrap(), a, epsilon = 1e-15);
        assert_eq!(admm_u_update(&a, &phi, &DVector::zeros(3)).unwrap(), a);

        let anchor = dv(&[1.0, 1.0, 0.0]);
        let u = admm_u_update(&anchor, &dv(&[1.0, 2.0, 4.0]), &dv(&[1.0, 0.0, 0.0])).unwrap();
        // ν = 1 / 1.75 = 4/7; u = a − Φ⁻¹(d − ν1).
        let nu = 4.0 / 7.0;
        assert_relative_eq!(u[0], 1.0 - (1.0 - nu), epsilon = 1e-15);
        assert_relative_eq!(u[1], 1.0 + nu / 2.0, epsilon = 1e-15);
        assert_relative_eq!(u[2], nu / 4.0, epsilon = 1e-15);
        assert_relative_eq!(u.sum(), 2.0, epsilon = 1e-14);
        assert!(admm_u_update(&anchor, &dv(&[1.0, 0.0, 1.0]), &DVector::zeros(3)).is_err());
    }

    #[test]
    fn v_update_examples() {
        let v = admm_v_update(&dv(&[-0.2, 0.5, 1.3]), &DVector::zeros(3), &DVector::zeros(3), 1.0, 100.0);
        assert_eq!(v, dv(&[0.0, 0.5, 1.0]));
        let v = admm_v_update(&dv(&[0.2, 0.4]), &dv(&[0.1, 0.9]), &dv(&[5.0, 5.0]), 0.0, 100.0);
        assert_relative_eq!(v, dv(&[0.3, 1.0]), epsilon = 1e-15);
    }

    fn random_problem(rng: &mut ChaCha8Rng, n: usize) -> AdmmProblem {
        let anchor = uniform_start(n, 2);
        AdmmProblem {
            grad: DVector::from_fn(n, |_, _| -rng.random_range(0.0..5.0)),
            phi: DVector::from_element(n, rng.random_range(1.0..20.0) + 90.0),
            d_gamma: penalty_value_grad(&anchor, 1e4).1,
            anchor,
            rho: 1.0,
            rho_al: 90.0,
        }
    }

    #[test]
    fn inner_fixed_point_without_gradients() {
        let a = uniform_start(5, 2);
        let prob = AdmmProblem {
            anchor: a.clone(),
            grad: DVector::zeros(5),
            phi: DVector::from_element(5, 101.0),
            d_gamma: DVector::zeros(5),
            rho: 1.0,
            rho_al: 100.0,
        };
        let out = prob.solve(200, 1e-6).unwrap();
        assert_eq!(out.iterations, 1);
        assert_eq!(out.state.u, a);
        assert_eq!(out.state.v, a);
        assert_eq!(out.state.z, DVector::zeros(5));
    }

    #[test]
    fn primal_sweep_does_not_increase_lagrangian() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let prob = random_problem(&mut rng, 8);
            let mut s = prob.initial_state();
            for _ in 0..30 {
                let next = prob.step(&s).unwrap();
                let swept = AdmmState { u: next.u.clone(), v: next.v.clone(), z: s.z.clone() };
                assert!(prob.lagrangian(&swept) <= prob.lagrangian(&s) + 1e-9);
                assert!(next.v.iter().all(|x| (0.0..=1.0).contains(x)));
                assert!((next.u.sum() - 2.0).abs() < 1e-8);
                s = next;
            }
        }
    }

    #[test]
    fn inner_reaches_consensus() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let prob = random_problem(&mut rng, 8);
            let out = prob.solve(5000, 1e-6).unwrap();
            assert!(out.converged);
            assert!(inf_norm(&(&out.state.u - &out.state.v)) < 1e-4);
        }
    }

    #[test]
    fn outer_loop_feasible_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ctx = random_ctx(&mut rng, 12, 3);
        for rule in [CurvatureRule::Trace, CurvatureRule::MaxEig] {
            let (u, trace) = mm_admm_select(&ctx, &uniform_start(12, 3), rule, &MMConfig::default()).unwrap();
            assert!((u.sum() - 3.0).abs() < 1e-8);
            assert!(trace.cost_per_iter.len() <= 30);
            assert_eq!(trace.cost_per_iter.len(), trace.u_per_iter.len());
        }
        assert!(mm_admm_select(&ctx, &DVector::zeros(12), CurvatureRule::Trace, &MMConfig::default()).is_err());
    }
}
