//! Per-frame alternating optimisation of node selection and power, the EKF
//! that consumes the resulting measurements, and Monte-Carlo RMSE.

use nalgebra::{DVector, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{exhaustive_select, nearest_select, oracle_power, power_problem_from, DEFAULT_ES_CAP};
use crate::dan::{binarize, dan_forward, selected_nodes, DanParams};
use crate::error::{invalid, Error, Result};
use crate::fisher::{cost_logdet, meas_info_set, pcrlb, prior_info, MeasInfoSet, SelectCtx};
use crate::instances::uniform_start;
use crate::linalg::{spd_inverse, symmetrize, Mat4, Vec4};
use crate::mm_admm::{mm_admm_select, CurvatureRule, MMConfig};
use crate::power::{equal_power, solve_water_level};
use crate::scenario::{measurement_covariance, measurement_jacobian, true_measurement, MotionModel, Scenario, TargetState};
use crate::seeds::stream_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Selector {
    #[serde(rename = "dan")]
    Dan,
    #[serde(rename = "mm-admm-1")]
    MmAdmm1,
    #[serde(rename = "mm-admm-2")]
    MmAdmm2,
    #[serde(rename = "es")]
    Es,
    #[serde(rename = "nearest")]
    Nearest,
}

impl Selector {
    pub const ALL: [Selector; 5] = [Selector::Dan, Selector::MmAdmm1, Selector::MmAdmm2, Selector::Es, Selector::Nearest];

    pub fn name(self) -> &'static str {
        match self {
            Selector::Dan => "dan",
            Selector::MmAdmm1 => "mm-admm-1",
            Selector::MmAdmm2 => "mm-admm-2",
            Selector::Es => "es",
            Selector::Nearest => "nearest",
        }
    }
}

impl std::str::FromStr for Selector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid(format!("unknown selector `{s}` (expected dan, mm-admm-1, mm-admm-2, es or nearest)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PowerMethod {
    Fpwf,
    Oracle,
    Equal,
}

impl PowerMethod {
    pub fn name(self) -> &'static str {
        match self {
            PowerMethod::Fpwf => "fpwf",
            PowerMethod::Oracle => "oracle",
            PowerMethod::Equal => "equal",
        }
    }
}

impl std::str::FromStr for PowerMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [PowerMethod::Fpwf, PowerMethod::Oracle, PowerMethod::Equal]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid(format!("unknown power method `{s}` (expected fpwf, oracle or equal)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AoConfig {
    pub max_rounds: usize,
    /// Relative change of the total cost below which AO stops.
    pub tol: f64,
    pub selector: Selector,
    pub power: PowerMethod,
    pub mm: MMConfig,
    pub es_cap: u128,
}

impl Default for AoConfig {
    fn default() -> Self {
        Self {
            max_rounds: 3,
            tol: 1e-4,
            selector: Selector::Dan,
            power: PowerMethod::Fpwf,
            mm: MMConfig::default(),
            es_cap: DEFAULT_ES_CAP,
        }
    }
}

impl AoConfig {
    pub fn new(selector: Selector, power: PowerMethod) -> Self {
        Self { selector, power, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_rounds == 0 {
            return Err(invalid("AO needs at least one round"));
        }
        if !(self.tol >= 0.0) {
            return Err(invalid("AO tolerance must be nonnegative"));
        }
        self.mm.validate()
    }
}

/// One target's inputs to a frame's optimisation.
#[derive(Clone, Debug)]
pub struct TargetFrame {
    pub s_pred: TargetState,
    pub jp: Mat4,
    pub m: MeasInfoSet,
}

#[derive(Clone, Debug)]
pub struct AoOutcome {
    pub selections: Vec<DVector<f64>>,
    pub power: Vec<f64>,
    /// Total cost `Σ_q −log det J_q` at the start and after each round.
    pub round_costs: Vec<f64>,
}

impl AoOutcome {
    pub fn rounds(&self) -> usize {
        self.round_costs.len() - 1
    }

    pub fn final_cost(&self) -> f64 {
        *self.round_costs.last().expect("initial cost recorded")
    }
}

fn target_cost(t: &TargetFrame, u: &DVector<f64>, p: f64) -> Result<f64> {
    cost_logdet(&(t.jp + t.m.aggregate(u) * p))
}

fn total_cost(frame: &[TargetFrame], sel: &[DVector<f64>], p: &[f64]) -> Result<f64> {
    frame.iter().zip(sel).zip(p).map(|((t, u), pq)| target_cost(t, u, *pq)).sum()
}

/// Binary selection for one target at fixed power.
pub fn select_nodes(
    t: &TargetFrame,
    p: f64,
    sc: &Scenario,
    cfg: &AoConfig,
    params: Option<&DanParams>,
) -> Result<DVector<f64>> {
    let n = t.m.len();
    let nmax = sc.nmax;
    let ctx = SelectCtx { jp: t.jp, m: t.m.clone(), p };
    let u0 = uniform_start(n, nmax);
    Ok(match cfg.selector {
        Selector::Nearest => nearest_select(sc, &t.s_pred, nmax),
        Selector::Es => exhaustive_select(&ctx, nmax, cfg.es_cap)?.0,
        Selector::MmAdmm1 => binarize(&mm_admm_select(&ctx, &u0, CurvatureRule::Trace, &cfg.mm)?.0, nmax),
        Selector::MmAdmm2 => binarize(&mm_admm_select(&ctx, &u0, CurvatureRule::MaxEig, &cfg.mm)?.0, nmax),
        Selector::Dan => {
            let params = params.ok_or_else(|| invalid("the dan selector needs trained parameters"))?;
            binarize(dan_forward(&ctx, &u0, params)?.output(), nmax)
        }
    })
}

fn allocate(frame: &[TargetFrame], sel: &[DVector<f64>], sc: &Scenario, method: PowerMethod) -> Result<Vec<f64>> {
    if method == PowerMethod::Equal {
        return Ok(equal_power(frame.len(), sc.pt, sc.pmin).p);
    }
    let ctxs: Vec<SelectCtx> = frame.iter().map(|t| SelectCtx { jp: t.jp, m: t.m.clone(), p: 0.0 }).collect();
    let prob = power_problem_from(&ctxs, sel, sc.pt, sc.pmin)?;
    Ok(match method {
        PowerMethod::Fpwf => solve_water_level(&prob)?.p.p,
        PowerMethod::Oracle => oracle_power(&prob)?.p,
        PowerMethod::Equal => unreachable!(),
    })
}

/// Alternates per-target selection and joint power allocation, starting from
/// nearest selection and equal power. A new selection or power vector is
/// only accepted when it does not raise the cost, so the round costs are
/// non-increasing.
pub fn ao_optimize(frame: &[TargetFrame], sc: &Scenario, cfg: &AoConfig, params: Option<&DanParams>) -> Result<AoOutcome> {
    cfg.validate()?;
    if frame.is_empty() {
        return Err(invalid("frame has no targets"));
    }
    sc.validate_power_budget(frame.len())?;
    let mut sel: Vec<DVector<f64>> = frame.iter().map(|t| nearest_select(sc, &t.s_pred, sc.nmax)).collect();
    let mut power = equal_power(frame.len(), sc.pt, sc.pmin).p;
    let mut costs = vec![total_cost(frame, &sel, &power)?];
    for _ in 0..cfg.max_rounds {
        let candidates = frame
            .par_iter()
            .zip(&power)
            .map(|(t, p)| select_nodes(t, *p, sc, cfg, params))
            .collect::<Result<Vec<_>>>()?;
        for (q, cand) in candidates.into_iter().enumerate() {
            if target_cost(&frame[q], &cand, power[q])? <= target_cost(&frame[q], &sel[q], power[q])? {
                sel[q] = cand;
            }
        }
        let before = total_cost(frame, &sel, &power)?;
        let cand = allocate(frame, &sel, sc, cfg.power)?;
        let after = total_cost(frame, &sel, &cand)?;
        let cur = if after <= before {
            power = cand;
            after
        } else {
            before
        };
        let prev = *costs.last().expect("nonempty");
        costs.push(cur);
        if (prev - cur).abs() <= cfg.tol * prev.abs() {
            break;
        }
    }
    Ok(AoOutcome { selections: sel, power, round_costs: costs })
}

/// One node's contribution to an EKF update.
#[derive(Clone, Debug, PartialEq)]
pub struct EkfObservation {
    pub z: Vector3<f64>,
    /// Measurement function at the predicted state.
    pub h_pred: Vector3<f64>,
    pub h: nalgebra::Matrix3x4<f64>,
    pub r: nalgebra::Matrix3<f64>,
}

/// Wrap an angle difference into `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let w = a.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

/// EKF measurement update over all selected nodes, in information form:
/// `P⁺ = (P⁻¹ + Σ HᵀR⁻¹H)⁻¹`, `x⁺ = x + P⁺ Σ HᵀR⁻¹ν`. Equivalent to the
/// stacked Kalman gain but only inverts 4×4 matrices, which stays stable
/// when the measurement noise is far below the prior uncertainty.
pub fn ekf_update(s_pred: &TargetState, p_pred: &Mat4, obs: &[EkfObservation]) -> Result<(TargetState, Mat4)> {
    let mut info = spd_inverse(p_pred, "predicted covariance")?;
    if obs.is_empty() {
        return Ok((*s_pred, *p_pred));
    }
    let mut score = Vec4::zeros();
    for o in obs {
        let r_inv = o
            .r
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("measurement covariance"))?
            .inverse();
        let mut nu = o.z - o.h_pred;
        nu[0] = wrap_angle(nu[0]);
        let ht_rinv = o.h.transpose() * r_inv;
        info += ht_rinv * o.h;
        score += ht_rinv * nu;
    }
    let post = spd_inverse(&symmetrize(&info), "posterior information")?;
    let x = s_pred.x + post * score;
    Ok((TargetState { x, frame: s_pred.frame }, symmetrize(&post)))
}

/// One target at one frame of one trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: u32,
    pub target: usize,
    pub truth: [f64; 4],
    pub pred: [f64; 4],
    pub est: [f64; 4],
    pub pcrlb_diag: [f64; 4],
    /// `−log det J` after the update.
    pub cost: f64,
    pub selected: Vec<usize>,
    pub power: f64,
}

impl FrameRecord {
    pub fn pcrlb_trace(&self) -> f64 {
        self.pcrlb_diag.iter().sum()
    }

    pub fn position_error_sq(&self) -> f64 {
        (self.est[0] - self.truth[0]).powi(2) + (self.est[2] - self.truth[2]).powi(2)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub trial: u64,
    pub frames: u32,
    pub targets: usize,
    /// Frame-major: `rows[(k − 1)·Q + q]`.
    pub rows: Vec<FrameRecord>,
    /// AO round costs per frame.
    pub ao_costs: Vec<Vec<f64>>,
}

impl TrackRecord {
    pub fn row(&self, frame: u32, target: usize) -> &FrameRecord {
        &self.rows[(frame as usize - 1) * self.targets + target]
    }

    /// RMSE of this run alone.
    pub fn rmse(&self) -> f64 {
        monte_carlo_rmse(std::slice::from_ref(self)).expect("record is self-consistent")
    }
}

/// Everything a tracking run needs besides the method.
#[derive(Clone, Debug)]
pub struct TrackSetup {
    pub sc: Scenario,
    pub model: MotionModel,
    pub targets0: Vec<TargetState>,
    pub j0: Mat4,
    pub frames: u32,
}

fn to_arr(v: &Vec4) -> [f64; 4] {
    [v[0], v[1], v[2], v[3]]
}

/// One Monte-Carlo trial. Truth, initial error and measurement noise come
/// from streams that do not depend on the method, so methods compared under
/// one seed see the same trajectories and the same noise draws.
pub fn run_tracking(setup: &TrackSetup, cfg: &AoConfig, params: Option<&DanParams>, seed: u64, trial: u64) -> Result<TrackRecord> {
    let TrackSetup { sc, model, targets0, j0, frames } = setup;
    if targets0.is_empty() {
        return Err(invalid("no targets to track"));
    }
    let q = targets0.len();
    let n = sc.num_nodes();
    let p0 = spd_inverse(j0, "initial information")?;
    let p0_chol = crate::linalg::cholesky4(&p0, "initial covariance")?.l();

    let mut init_rng = stream_rng(seed, "init", trial);
    let mut truth_rng = stream_rng(seed, "truth", trial);
    let mut meas_rng = stream_rng(seed, "meas", trial);

    let mut truth = targets0.clone();
    let mut est: Vec<TargetState> = targets0
        .iter()
        .map(|t| {
            let w = Vec4::from_fn(|_, _| init_rng.sample(StandardNormal));
            TargetState { x: t.x + p0_chol * w, frame: t.frame }
        })
        .collect();
    let mut cov = vec![p0; q];
    let mut info = vec![*j0; q];

    let mut rows = Vec::with_capacity(*frames as usize * q);
    let mut ao_costs = Vec::with_capacity(*frames as usize);
    for k in 1..=*frames {
        for t in &mut truth {
            *t = model.sample_transition(t, &mut truth_rng);
            t.frame = k;
        }
        let mut frame = Vec::with_capacity(q);
        let mut p_pred = Vec::with_capacity(q);
        for i in 0..q {
            let s_pred = TargetState { x: model.g * est[i].x, frame: k };
            p_pred.push(symmetrize(&(model.g * cov[i] * model.g.transpose() + model.qn)));
            let jp = prior_info(model, &info[i])?;
            frame.push(TargetFrame { s_pred, jp, m: meas_info_set(sc, &s_pred)? });
        }
        let ao = ao_optimize(&frame, sc, cfg, params)?;
        for i in 0..q {
            // Noise for every node is drawn so the stream position does not
            // depend on which nodes were selected.
            let noise: Vec<Vector3<f64>> = (0..n).map(|_| Vector3::from_fn(|_, _| meas_rng.sample(StandardNormal))).collect();
            let p = ao.power[i];
            let chosen = selected_nodes(&ao.selections[i]);
            let s_pred = frame[i].s_pred;
            let obs = chosen
                .iter()
                .map(|&node| {
                    let clean = true_measurement(sc, &truth[i], node)?.as_vector();
                    let r_true = measurement_covariance(sc, p, &truth[i], node)?;
                    let z = clean + r_true.map_diagonal(f64::sqrt).component_mul(&noise[node]);
                    Ok(EkfObservation {
                        z,
                        h_pred: true_measurement(sc, &s_pred, node)?.as_vector(),
                        h: measurement_jacobian(sc, &s_pred, node)?,
                        r: measurement_covariance(sc, p, &s_pred, node)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let (post, post_cov) = ekf_update(&s_pred, &p_pred[i], &obs)?;
            est[i] = post;
            cov[i] = post_cov;
            info[i] = symmetrize(&(frame[i].jp + frame[i].m.aggregate(&ao.selections[i]) * p));
            let bound = pcrlb(&info[i])?;
            rows.push(FrameRecord {
                frame: k,
                target: i,
                truth: to_arr(&truth[i].x),
                pred: to_arr(&s_pred.x),
                est: to_arr(&post.x),
                pcrlb_diag: [bound[(0, 0)], bound[(1, 1)], bound[(2, 2)], bound[(3, 3)]],
                cost: cost_logdet(&info[i])?,
                selected: chosen,
                power: p,
            });
        }
        ao_costs.push(ao.round_costs);
    }
    Ok(TrackRecord { trial, frames: *frames, targets: q, rows, ao_costs })
}

/// Trials `0..nmc` in parallel, returned in trial order.
pub fn run_monte_carlo(
    setup: &TrackSetup,
    cfg: &AoConfig,
    params: Option<&DanParams>,
    seed: u64,
    nmc: usize,
) -> Result<Vec<TrackRecord>> {
    (0..nmc as u64).into_par_iter().map(|t| run_tracking(setup, cfg, params, seed, t)).collect()
}

/// `(1/Q)(1/K) Σ_q Σ_k √((1/N_mc) Σ_trials ‖r − r̂‖²)` over positions.
pub fn monte_carlo_rmse(runs: &[TrackRecord]) -> Result<f64> {
    let first = runs.first().ok_or_else(|| invalid("no runs to average"))?;
    let (k, q) = (first.frames, first.targets);
    if runs.iter().any(|r| r.frames != k || r.targets != q || r.rows.len() != k as usize * q) {
        return Err(invalid("runs have inconsistent frame or target counts"));
    }
    let mut total = 0.0;
    for frame in 1..=k {
        for target in 0..q {
            let ms: f64 = runs.iter().map(|r| r.row(frame, target).position_error_sq()).sum::<f64>() / runs.len() as f64;
            total += ms.sqrt();
        }
    }
    Ok(total / (k as f64 * q as f64))
}

/// Per-frame RMSE averaged over targets, for per-frame plots.
pub fn rmse_per_frame(runs: &[TrackRecord]) -> Result<Vec<f64>> {
    let first = runs.first().ok_or_else(|| invalid("no runs to average"))?;
    let (k, q) = (first.frames, first.targets);
    Ok((1..=k)
        .map(|frame| {
            (0..q)
                .map(|target| {
                    let ms: f64 = runs.iter().map(|r| r.row(frame, target).position_error_sq()).sum::<f64>();
                    (ms / runs.len() as f64).sqrt()
                })
                .sum::<f64>()
                / q as f64
        })
        .collect())
}
