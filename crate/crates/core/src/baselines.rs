//! Reference selectors and the projected-gradient power oracle.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fisher::SelectCtx;
use crate::linalg::spd_logdet;
use crate::power::{PowerProblem, PowerVec};
use crate::scenario::{Scenario, TargetState};

pub const DEFAULT_ES_CAP: u128 = 1_000_000;

/// Lexicographic enumeration of the `k`-subsets of `0..n`.
#[derive(Clone, Debug)]
pub struct SubsetIter {
    n: usize,
    k: usize,
    cursor: Option<Vec<usize>>,
}

impl SubsetIter {
    pub fn new(n: usize, k: usize) -> Self {
        let cursor = (k <= n).then(|| (0..k).collect());
        Self { n, k, cursor }
    }
}

impl Iterator for SubsetIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let current = self.cursor.take()?;
        let mut next = current.clone();
        let (n, k) = (self.n, self.k);
        let mut i = k;
        while i > 0 && next[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i > 0 {
            next[i - 1] += 1;
            for j in i..k {
                next[j] = next[j - 1] + 1;
            }
            self.cursor = Some(next);
        }
        Some(current)
    }
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

pub fn indicator(n: usize, subset: &[usize]) -> DVector<f64> {
    let mut u = DVector::zeros(n);
    for &i in subset {
        u[i] = 1.0;
    }
    u
}

fn subset_cost(ctx: &SelectCtx, subset: &[usize]) -> f64 {
    let j = subset.iter().fold(ctx.jp, |acc, &i| acc + ctx.m.mbar[i] * ctx.p);
    spd_logdet(&j, "information").map(|v| -v).unwrap_or(f64::INFINITY)
}

/// The `log det`-minimising `N_max`-subset; ties go to the lexicographically
/// first subset. Returns the indicator vector and its cost.
pub fn exhaustive_select(ctx: &SelectCtx, nmax: usize, cap: u128) -> Result<(DVector<f64>, f64)> {
    let n = ctx.n();
    let count = binomial(n, nmax);
    if count > cap {
        return Err(Error::SearchCapExceeded { n, k: nmax, count, cap });
    }
    if nmax == 0 || nmax > n {
        return Err(crate::error::invalid(format!("need 1 <= N_max <= N, got N_max = {nmax}, N = {n}")));
    }
    // Each chunk fixes the first index; chunks are reduced in order so the
    // result does not depend on scheduling.
    let best = (0..=n - nmax)
        .into_par_iter()
        .map(|first| {
            let mut best: Option<(f64, Vec<usize>)> = None;
            for rest in SubsetIter::new(n - first - 1, nmax - 1) {
                let mut subset = Vec::with_capacity(nmax);
                subset.push(first);
                subset.extend(rest.iter().map(|r| r + first + 1));
                let c = subset_cost(ctx, &subset);
                if best.as_ref().is_none_or(|(bc, _)| c < *bc) {
                    best = Some((c, subset));
                }
            }
            best
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .fold(None::<(f64, Vec<usize>)>, |acc, cand| match acc {
            Some(a) if a.0 <= cand.0 => Some(a),
            _ => Some(cand),
        })
        .expect("at least one subset");
    Ok((indicator(n, &best.1), best.0))
}

/// The `N_max` nodes closest to the predicted position, ties to the lower index.
pub fn nearest_select(sc: &Scenario, s_pred: &TargetState, nmax: usize) -> DVector<f64> {
    let r = s_pred.position();
    let mut order: Vec<(f64, usize)> =
        sc.nodes.iter().enumerate().map(|(i, node)| ((r - node.position).norm(), i)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let picked: Vec<usize> = order.iter().take(nmax).map(|(_, i)| *i).collect();
    indicator(sc.nodes.len(), &picked)
}

/// Euclidean projection onto `{x : x ≥ lo, Σx ≤ total}`.
pub fn project_capped_floor(x: &[f64], lo: f64, total: f64) -> Vec<f64> {
    let clipped: Vec<f64> = x.iter().map(|v| v.max(lo)).collect();
    if clipped.iter().sum::<f64>() <= total {
        return clipped;
    }
    // Onto the face Σx = total: shift by the threshold θ with
    // Σ max(x_i − θ, lo) = total.
    let radius = total - lo * x.len() as f64;
    let y: Vec<f64> = x.iter().map(|v| v - lo).collect();
    let mut sorted = y.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, v) in sorted.iter().enumerate() {
        cum += v;
        let t = (cum - radius) / (i + 1) as f64;
        if *v - t > 0.0 {
            theta = t;
        }
    }
    y.iter().map(|v| (v - theta).max(0.0) + lo).collect()
}

const ORACLE_TOL: f64 = 1e-9;
const ORACLE_CAP: usize = 200_000;

/// Projected-gradient ascent on `Σ_q log det(Jp_q + p_q Σ̃_q)` with
/// Barzilai-Borwein steps. The line search along the projected direction
/// bisects on the sign of the directional derivative, which stays accurate
/// where log-det differences drown in rounding.
pub fn oracle_power(prob: &PowerProblem) -> Result<PowerVec> {
    let q = prob.len();
    let gradient = |p: &[f64]| -> Result<Vec<f64>> { (0..q).map(|i| prob.marginal_gain(i, p[i])).collect() };
    let project = |x: &[f64]| project_capped_floor(x, prob.pmin, prob.pt);
    let step_to = |p: &[f64], g: &[f64], t: f64| project(&p.iter().zip(g).map(|(a, b)| a + t * b).collect::<Vec<_>>());
    let along = |p: &[f64], d: &[f64], lambda: f64| -> Vec<f64> { p.iter().zip(d).map(|(a, b)| a + lambda * b).collect() };
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };

    let mut p = project(&vec![prob.pt / q as f64; q]);
    let mut g = gradient(&p)?;
    let mut t = 1e-2;
    for _ in 0..ORACLE_CAP {
        let pg: f64 = step_to(&p, &g, 1.0).iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        if pg < ORACLE_TOL {
            break;
        }
        let d: Vec<f64> = step_to(&p, &g, t).iter().zip(&p).map(|(a, b)| a - b).collect();
        if dot(&d, &g) <= 0.0 {
            break;
        }
        // The objective is concave along d, so its slope decreases in λ.
        let mut lambda = 1.0;
        let mut g_next = gradient(&along(&p, &d, 1.0))?;
        if dot(&d, &g_next) < 0.0 {
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if dot(&d, &gradient(&along(&p, &d, mid))?) >= 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lambda = lo;
            g_next = gradient(&along(&p, &d, lambda))?;
        }
        let next = along(&p, &d, lambda);
        if next == p {
            break;
        }
        let (mut ss, mut sy) = (0.0, 0.0);
        for i in 0..q {
            let si = next[i] - p[i];
            ss += si * si;
            sy += si * (g_next[i] - g[i]);
        }
        // Concave objective: s·y ≤ 0 along any step. Large steps push the
        // projection argument to magnitudes where its threshold loses digits.
        if sy < 0.0 {
            t = (ss / -sy).clamp(1e-10, 1e3);
        }
        (p, g) = (next, g_next);
    }
    Ok(PowerVec { p })
}

/// `log det` of each target's posterior information; used by audits.
pub fn posterior_logdets(prob: &PowerProblem, p: &[f64]) -> Result<Vec<f64>> {
    prob.targets
        .iter()
        .zip(p)
        .map(|(t, pq)| spd_logdet(&(t.jp + t.st * *pq), "posterior information"))
        .collect()
}

/// Convenience for building a power problem from per-target contexts and
/// binary selections.
pub fn power_problem_from(ctxs: &[SelectCtx], selections: &[DVector<f64>], pt: f64, pmin: f64) -> Result<PowerProblem> {
    let targets = ctxs
        .iter()
        .zip(selections)
        .map(|(c, u)| crate::power::PowerTarget { jp: c.jp, st: c.m.aggregate(u) })
        .collect::<Vec<_>>();
    PowerProblem::new(targets, pt, pmin)
}
