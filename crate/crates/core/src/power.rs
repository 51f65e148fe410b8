//! Fixed-point water-filling power allocation across targets.
//!
//! For a water level `μ`, target `q` receives the fixed point of
//! `p ← max(μ − tr(A⁻¹Jp) / tr(A⁻¹Σ̃), P_min)` with `A = Jp + pΣ̃`. The level
//! is found by bisection on the total-power residual.
//!
//! Since `tr(A⁻¹Jp) + p·tr(A⁻¹Σ̃) = 4`, an unfloored fixed point satisfies
//! `h(p) := 4 / tr(A⁻¹Σ̃) = μ`, and `h` is increasing in `p`. The plain
//! iteration can oscillate when the information is concentrated in few
//! directions, so a bracketed solve of `h(p) = μ` backs it up.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{cholesky4, max_eigenvalue, min_eigenvalue, spd_inverse, spd_logdet, Mat4};

const FP_TOL: f64 = 1e-10;
const FP_CAP: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerTarget {
    pub jp: Mat4,
    /// Aggregate selected measurement information `Σ̃ = Σ_n u_n M̄_n`.
    pub st: Mat4,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerProblem {
    pub targets: Vec<PowerTarget>,
    pub pt: f64,
    pub pmin: f64,
}

impl PowerProblem {
    pub fn new(targets: Vec<PowerTarget>, pt: f64, pmin: f64) -> Result<Self> {
        if targets.is_empty() {
            return Err(invalid("power problem needs at least one target"));
        }
        if !(pmin > 0.0 && pt > 0.0) {
            return Err(invalid("power budget and floor must be positive"));
        }
        if targets.len() as f64 * pmin > pt * (1.0 + 1e-12) {
            return Err(invalid(format!("{} targets at floor {pmin} W exceed budget {pt} W", targets.len())));
        }
        for (q, t) in targets.iter().enumerate() {
            cholesky4(&t.jp, "prior information")?;
            let st = DMatrix::from_column_slice(4, 4, t.st.as_slice());
            let top = max_eigenvalue(&st);
            if !(top > 0.0) || min_eigenvalue(&st) < -1e-9 * top {
                return Err(invalid(format!("target {q}: aggregate information must be PSD and nonzero")));
            }
        }
        Ok(Self { targets, pt, pmin })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// `Σ_q log det(Jp_q + p_q Σ̃_q)`.
    pub fn objective(&self, p: &[f64]) -> Result<f64> {
        self.targets
            .iter()
            .zip(p)
            .map(|(t, pq)| spd_logdet(&(t.jp + t.st * *pq), "posterior information"))
            .sum()
    }

    /// `∂/∂p_q` of [`Self::objective`]: `tr((Jp_q + p_q Σ̃_q)⁻¹ Σ̃_q)`.
    pub fn marginal_gain(&self, q: usize, p: f64) -> Result<f64> {
        let t = &self.targets[q];
        let ainv = spd_inverse(&(t.jp + t.st * p), "posterior information")?;
        Ok(ainv.component_mul(&t.st).sum())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerVec {
    pub p: Vec<f64>,
}

impl PowerVec {
    pub fn total(&self) -> f64 {
        self.p.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaterFilling {
    pub mu: f64,
    pub p: PowerVec,
    /// Set when the budget equals `Q·P_min`, so every target sits on the floor.
    pub all_floored: bool,
}

fn ratio(jp: &Mat4, st: &Mat4, p: f64) -> Result<(f64, f64)> {
    let ainv = spd_inverse(&(jp + st * p), "posterior information")?;
    Ok((ainv.component_mul(jp).sum(), ainv.component_mul(st).sum()))
}

/// One fixed-point iterate `max(μ − tr(A⁻¹Jp)/tr(A⁻¹Σ̃), P_min)` at `A = Jp + p_prev Σ̃`.
pub fn fp_power_update(jp: &Mat4, st: &Mat4, mu_wf: f64, p_prev: f64, pmin: f64) -> Result<f64> {
    if p_prev < 0.0 {
        return Err(invalid("previous power must be nonnegative"));
    }
    let (num, den) = ratio(jp, st, p_prev)?;
    if !(den > 0.0) {
        return Err(invalid("aggregate information is zero"));
    }
    Ok((mu_wf - num / den).max(pmin))
}

/// `h(p) = 4 / tr((Jp + pΣ̃)⁻¹Σ̃)`.
fn level_of(jp: &Mat4, st: &Mat4, p: f64) -> Result<f64> {
    let (_, den) = ratio(jp, st, p)?;
    Ok(4.0 / den)
}

/// Converged per-target power at water level `mu`.
pub fn target_power(jp: &Mat4, st: &Mat4, mu: f64, pmin: f64, p_start: f64) -> Result<f64> {
    let mut p = p_start.max(pmin);
    for _ in 0..FP_CAP {
        let next = fp_power_update(jp, st, mu, p, pmin)?;
        let done = (next - p).abs() <= FP_TOL * p.max(1.0);
        p = next;
        if done {
            return Ok(p);
        }
    }
    solve_level(jp, st, mu, pmin)
}

/// Bracketed solve of `h(p) = μ` on `[P_min, ∞)`.
fn solve_level(jp: &Mat4, st: &Mat4, mu: f64, pmin: f64) -> Result<f64> {
    if level_of(jp, st, pmin)? >= mu {
        return Ok(pmin);
    }
    let mut lo = pmin;
    let mut hi = (2.0 * pmin).max(mu);
    let mut expansions = 0;
    while level_of(jp, st, hi)? < mu {
        lo = hi;
        hi *= 2.0;
        expansions += 1;
        if expansions > 200 {
            return Err(Error::Bisection(format!("cannot bracket power for level {mu}")));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if level_of(jp, st, mid)? < mu {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Eigenvalue bounds of `Σ̃⁻¹Jp` via the `Jp`-whitened `L⁻¹Σ̃L⁻ᵀ`
/// (`Jp = LLᵀ`). A singular `Σ̃` gives `λ_max = ∞`.
pub fn rayleigh_bounds(jp: &Mat4, st: &Mat4) -> Result<(f64, f64)> {
    let l = cholesky4(jp, "prior information")?.l();
    let linv = l
        .try_inverse()
        .ok_or(Error::NotPositiveDefinite("prior information"))?;
    let k = linv * st * linv.transpose();
    let k = DMatrix::from_column_slice(4, 4, crate::linalg::symmetrize(&k).as_slice());
    let kmax = max_eigenvalue(&k);
    let kmin = min_eigenvalue(&k);
    if !(kmax > 0.0) {
        return Err(invalid("aggregate information is zero"));
    }
    let lmax = if kmin > 1e-12 * kmax { 1.0 / kmin } else { f64::INFINITY };
    Ok((1.0 / kmax, lmax))
}

/// The fixed-point ratio `tr(A⁻¹Jp)/tr(A⁻¹Σ̃)` at power `p`.
pub fn fixed_point_ratio(jp: &Mat4, st: &Mat4, p: f64) -> Result<f64> {
    let (num, den) = ratio(jp, st, p)?;
    Ok(num / den)
}

/// Per-target powers at level `mu`, each fixed point started from `start`.
fn powers_at(prob: &PowerProblem, mu: f64, start: &[f64]) -> Result<Vec<f64>> {
    prob.targets
        .iter()
        .zip(start)
        .map(|(t, p0)| target_power(&t.jp, &t.st, mu, prob.pmin, *p0))
        .collect()
}

/// Bisection on the water level so that `Σ_q p_q(μ) = P_T`.
pub fn solve_water_level(prob: &PowerProblem) -> Result<WaterFilling> {
    let q = prob.len() as f64;
    if prob.pt <= q * prob.pmin * (1.0 + 1e-12) {
        return Ok(WaterFilling { mu: 0.0, p: PowerVec { p: vec![prob.pmin; prob.len()] }, all_floored: true });
    }
    let mut lmax = 0.0f64;
    for t in &prob.targets {
        let (_, hi) = rayleigh_bounds(&t.jp, &t.st)?;
        if hi.is_finite() {
            lmax = lmax.max(hi);
        }
    }
    let mut lo = 0.0;
    let mut hi = prob.pt + lmax;
    let mut warm = vec![prob.pmin; prob.len()];
    let mut expansions = 0;
    while powers_at(prob, hi, &warm)?.iter().sum::<f64>() < prob.pt {
        lo = hi;
        hi *= 2.0;
        expansions += 1;
        if expansions > 200 {
            return Err(Error::Bisection("water level bracket did not close".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        warm = powers_at(prob, mid, &warm)?;
        let total: f64 = warm.iter().sum();
        if total < prob.pt {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    let p = powers_at(prob, lo, &warm)?;
    // Hand the rounding residual to the unfloored targets so the budget
    // holds exactly.
    let total: f64 = p.iter().sum();
    let free: Vec<usize> = (0..p.len()).filter(|&i| p[i] > prob.pmin).collect();
    let mut p = p;
    if !free.is_empty() {
        let share = (prob.pt - total) / free.len() as f64;
        for i in free {
            p[i] += share;
        }
    }
    Ok(WaterFilling { mu: lo, p: PowerVec { p }, all_floored: false })
}

/// `P_T / Q` per target, floored at `P_min`.
pub fn equal_power(q: usize, pt: f64, pmin: f64) -> PowerVec {
    PowerVec { p: vec![(pt / q as f64).max(pmin); q] }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{random_psd, random_spd};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_target(a: f64, b: f64) -> PowerTarget {
        PowerTarget { jp: Mat4::identity() * a, st: Mat4::identity() * b }
    }

    #[test]
    fn scalar_update_matches_closed_form() {
        let t = scalar_target(3.0, 2.0);
        for mu in [0.5, 2.0, 10.0, 1e6] {
            let p = fp_power_update(&t.jp, &t.st, mu, 0.7, 0.1).unwrap();
            assert_relative_eq!(p, (mu - 1.5f64).max(0.1), max_relative = 1e-14);
        }
    }

    #[test]
    fn single_and_identical_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = PowerTarget { jp: random_spd(&mut rng, 0.1), st: random_psd(&mut rng, 3) };
        let one = solve_water_level(&PowerProblem::new(vec![t.clone()], 1.0, 0.1).unwrap()).unwrap();
        assert_relative_eq!(one.p.p[0], 1.0, max_relative = 1e-9);
        let many = solve_water_level(&PowerProblem::new(vec![t.clone(); 4], 1.0, 0.1).unwrap()).unwrap();
        for p in &many.p.p {
            assert_relative_eq!(*p, 0.25, max_relative = 1e-9);
        }
    }

    #[test]
    fn floored_budget_is_flagged() {
        let t = scalar_target(1.0, 1.0);
        let wf = solve_water_level(&PowerProblem::new(vec![t.clone(), t], 0.2, 0.1).unwrap()).unwrap();
        assert!(wf.all_floored);
        assert_eq!(wf.p.p, vec![0.1, 0.1]);
    }

    #[test]
    fn problem_validation() {
        let t = scalar_target(1.0, 1.0);
        assert!(PowerProblem::new(vec![t.clone(); 3], 0.2, 0.1).is_err());
        let zero = PowerTarget { jp: Mat4::identity(), st: Mat4::zeros() };
        assert!(PowerProblem::new(vec![zero], 1.0, 0.1).is_err());
    }

    #[test]
    fn converged_point_is_fixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let jp = random_spd(&mut rng, 0.05);
            let rank = rng.random_range(1..=4);
            let st = random_psd(&mut rng, rank) * rng.random_range(0.1..50.0);
            let mu = rng.random_range(0.0..5.0);
            let p = target_power(&jp, &st, mu, 0.1, 0.1).unwrap();
            let again = fp_power_update(&jp, &st, mu, p, 0.1).unwrap();
            assert!((again - p).abs() < 1e-10 * p.max(1.0), "p={p} again={again}");
        }
    }

    #[test]
    fn rayleigh_examples() {
        let (lo, hi) = rayleigh_bounds(&(Mat4::identity() * 3.0), &(Mat4::identity() * 2.0)).unwrap();
        assert_relative_eq!(lo, 1.5, max_relative = 1e-12);
        assert_relative_eq!(hi, 1.5, max_relative = 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (_, hi) = rayleigh_bounds(&random_spd(&mut rng, 0.1), &random_psd(&mut rng, 2)).unwrap();
        assert!(hi.is_infinite());
    }

    #[test]
    fn larger_ratio_gets_less_power() {
        let st = Mat4::identity();
        let mut prev = f64::INFINITY;
        for a in [0.5, 1.0, 2.0, 4.0] {
            let p = target_power(&(Mat4::identity() * a), &st, 5.0, 0.01, 0.01).unwrap();
            assert!(p < prev);
            prev = p;
        }
    }

    #[test]
    fn power_nondecreasing_in_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let jp = random_spd(&mut rng, 0.05);
        let st = random_psd(&mut rng, 3) * 10.0;
        let mut prev = 0.0;
        for i in 0..50 {
            let p = target_power(&jp, &st, i as f64 * 0.1, 0.1, 0.1).unwrap();
            assert!(p >= prev - 1e-12);
            prev = p;
        }
    }
}
