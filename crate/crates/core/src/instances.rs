//! Random problem instances: target placements, prior information and
//! power levels over a fixed or randomly drawn node layout. Used for
//! training data and for property tests.

use nalgebra::{DVector, Vector2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{exhaustive_select, indicator, nearest_select};
use crate::dan::TrainSample;
use crate::config::{random_nodes, ScenarioConfig};
use crate::error::Result;
use crate::fisher::{meas_info_set, prior_info, SelectCtx};
use crate::linalg::{Mat4, Vec4};
use crate::scenario::{MotionModel, Scenario, TargetState};

const MIN_CLEARANCE: f64 = 10.0;
const TARGET_SPEED: f64 = 10.0;

/// One target's selection problem: predicted state, prior information and
/// allocated power.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub state: TargetState,
    pub jp: Mat4,
    pub p: f64,
}

impl Instance {
    pub fn ctx(&self, sc: &Scenario) -> Result<SelectCtx> {
        Ok(SelectCtx { jp: self.jp, m: meas_info_set(sc, &self.state)?, p: self.p })
    }
}

/// Uniform position in the square with at least 10 m clearance from every
/// node and the BS; 10 m/s in a uniformly random heading.
pub fn random_target<R: Rng + ?Sized>(rng: &mut R, sc: &Scenario, half_width: f64) -> TargetState {
    loop {
        let r = Vector2::new(rng.random_range(-half_width..half_width), rng.random_range(-half_width..half_width));
        let clear = (r - sc.bs_position).norm() > MIN_CLEARANCE
            && sc.nodes.iter().all(|n| (r - n.position).norm() > MIN_CLEARANCE);
        if clear {
            let heading = rng.random_range(0.0..std::f64::consts::TAU);
            return TargetState::new(r.x, TARGET_SPEED * heading.cos(), r.y, TARGET_SPEED * heading.sin());
        }
    }
}

/// Prior information after 0 to 3 tracked frames, each absorbing the
/// nearest nodes' measurements at a random power.
pub fn random_prior<R: Rng + ?Sized>(
    rng: &mut R,
    sc: &Scenario,
    model: &MotionModel,
    j0: &Mat4,
    s: &TargetState,
) -> Result<Mat4> {
    let frames = rng.random_range(0..=3);
    let mut j = *j0;
    let m = meas_info_set(sc, s)?;
    let near = nearest_select(sc, s, sc.nmax);
    for _ in 0..frames {
        let p = rng.random_range(sc.pmin..=sc.pt);
        j = prior_info(model, &j)? + m.aggregate(&near) * p;
    }
    prior_info(model, &j)
}

pub fn random_instance<R: Rng + ?Sized>(
    rng: &mut R,
    sc: &Scenario,
    model: &MotionModel,
    j0: &Mat4,
    half_width: f64,
) -> Result<Instance> {
    loop {
        let state = random_target(rng, sc, half_width);
        // Reject the measure-zero case of a target on some array axis.
        if meas_info_set(sc, &state).is_err() {
            continue;
        }
        let jp = random_prior(rng, sc, model, j0, &state)?;
        let p = rng.random_range(sc.pmin..=sc.pt);
        return Ok(Instance { state, jp, p });
    }
}

/// Default-parameter scenario over `n` random nodes, plus one random target.
pub fn random_geometry<R: Rng + ?Sized>(rng: &mut R, n: usize, nmax: usize) -> (Scenario, TargetState, Mat4) {
    let cfg = ScenarioConfig::default();
    let mut sc = cfg.scenario().expect("default config is valid");
    sc.nodes = random_nodes(rng, n, cfg.region_half_width);
    sc.nmax = nmax;
    let model = cfg.motion_model().expect("default motion model is valid");
    let j0 = cfg.initial_fisher().expect("default prior is valid").j;
    let inst = random_instance(rng, &sc, &model, &j0, cfg.region_half_width).expect("instance generation");
    (sc, inst.state, inst.jp)
}

/// A random selection context over `n` fresh nodes with budget `nmax`.
pub fn random_ctx<R: Rng + ?Sized>(rng: &mut R, n: usize, nmax: usize) -> SelectCtx {
    let (sc, s, jp) = random_geometry(rng, n, nmax);
    let p = rng.random_range(sc.pmin..=sc.pt);
    SelectCtx { jp, m: meas_info_set(&sc, &s).expect("clear geometry"), p }
}

/// One labelled training instance as stored in the dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelledInstance {
    pub scenario_hash: String,
    pub index: u64,
    pub instance: Instance,
    /// Exhaustive-search selection at the instance's power.
    pub label: Vec<usize>,
}

impl LabelledInstance {
    pub fn sample(&self, sc: &Scenario) -> Result<TrainSample> {
        let ctx = self.instance.ctx(sc)?;
        let n = ctx.n();
        Ok(TrainSample { ctx, u0: uniform_start(n, sc.nmax), label: indicator(n, &self.label) })
    }
}

/// `count` random instances over a fixed scenario, each labelled by
/// exhaustive search. Instance `i` depends only on `(seed, i)`.
#[allow(clippy::too_many_arguments)]
pub fn labelled_instances(
    sc: &Scenario,
    model: &MotionModel,
    j0: &Mat4,
    half_width: f64,
    count: usize,
    seed: u64,
    es_cap: u128,
    scenario_hash: &str,
) -> Result<Vec<LabelledInstance>> {
    (0..count as u64)
        .into_par_iter()
        .map(|index| {
            let mut rng = crate::seeds::stream_rng(seed, "train-instance", index);
            let instance = random_instance(&mut rng, sc, model, j0, half_width)?;
            let (u, _) = exhaustive_select(&instance.ctx(sc)?, sc.nmax, es_cap)?;
            let label = (0..u.len()).filter(|&i| u[i] > 0.5).collect();
            Ok(LabelledInstance { scenario_hash: scenario_hash.to_string(), index, instance, label })
        })
        .collect()
}

/// `A Aᵀ + floor · I` with standard-normal-ish entries.
pub fn random_spd<R: Rng + ?Sized>(rng: &mut R, floor: f64) -> Mat4 {
    let a = Mat4::from_fn(|_, _| rng.random_range(-1.0..1.0));
    a * a.transpose() + Mat4::identity() * floor
}

/// Rank-deficient PSD matrix `B Bᵀ` with `B` of size 4×rank.
pub fn random_psd<R: Rng + ?Sized>(rng: &mut R, rank: usize) -> Mat4 {
    (0..rank).fold(Mat4::zeros(), |acc, _| {
        let b = Vec4::from_fn(|_, _| rng.random_range(-1.0..1.0));
        acc + b * b.transpose()
    })
}

/// The interior feasible point `(N_max / N) · 1`.
pub fn uniform_start(n: usize, nmax: usize) -> DVector<f64> {
    DVector::from_element(n, nmax as f64 / n as f64)
}
