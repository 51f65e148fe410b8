//! JSON scenario configuration. Powers and noise are given in dBm and the
//! reference path gain in dB; everything is converted to SI on load.

use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fisher::FisherState;
use crate::scenario::{
    db_to_linear, dbm_to_watts, DistanceMode, MotionModel, Scenario, SensingNode, TargetState, SPEED_OF_LIGHT,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub position: [f64; 2],
    pub array_axis: [f64; 2],
}

/// Nodes drawn uniformly over a square centred on the origin, with
/// uniformly random array orientations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeLayout {
    pub count: usize,
    pub half_width: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub bs_position: [f64; 2],
    /// Explicit node list; takes precedence over `node_layout`.
    pub nodes: Vec<NodeConfig>,
    pub node_layout: Option<NodeLayout>,
    pub carrier_hz: f64,
    pub gamma0_db: f64,
    pub noise_dbm: f64,
    pub pt_dbm: f64,
    pub pmin_dbm: f64,
    pub nmax: usize,
    /// Standard deviations of the SNR-normalised θ, τ, μ errors.
    pub base_sigma: [f64; 3],
    pub distance_mode: DistanceMode,
    pub dt: f64,
    pub qs: f64,
    pub targets: Vec<TargetConfig>,
    pub init_sigma_r: f64,
    pub init_sigma_v: f64,
    /// Side of the square region targets are drawn from when generating
    /// training instances.
    pub region_half_width: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            bs_position: [0.0, 0.0],
            nodes: Vec::new(),
            node_layout: Some(NodeLayout { count: 32, half_width: 200.0, seed: 1 }),
            carrier_hz: 28e9,
            gamma0_db: -61.4,
            noise_dbm: -90.0,
            pt_dbm: 30.0,
            pmin_dbm: 20.0,
            nmax: 4,
            base_sigma: [2.0, 1.0, 1.0],
            distance_mode: DistanceMode::TargetToNode,
            dt: 0.5,
            qs: 5.0,
            targets: vec![
                TargetConfig { position: [124.0, 124.0], velocity: [-10.0, 0.0] },
                TargetConfig { position: [-134.0, 134.0], velocity: [0.0, -10.0] },
                TargetConfig { position: [-144.0, -144.0], velocity: [10.0, 0.0] },
            ],
            init_sigma_r: 10.0,
            init_sigma_v: 5.0,
            region_half_width: 200.0,
        }
    }
}

pub fn random_nodes<R: Rng + ?Sized>(rng: &mut R, count: usize, half_width: f64) -> Vec<SensingNode> {
    (0..count)
        .map(|_| {
            let pos = Vector2::new(rng.random_range(-half_width..half_width), rng.random_range(-half_width..half_width));
            SensingNode::with_axis_angle(pos, rng.random_range(0.0..std::f64::consts::PI))
        })
        .collect()
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn nodes(&self) -> Result<Vec<SensingNode>> {
        if !self.nodes.is_empty() {
            return self
                .nodes
                .iter()
                .map(|n| SensingNode::new(Vector2::from(n.position), Vector2::from(n.array_axis)))
                .collect();
        }
        let layout = self
            .node_layout
            .as_ref()
            .ok_or_else(|| invalid("config needs either `nodes` or `node_layout`"))?;
        let mut rng = crate::seeds::stream_rng(layout.seed, "node-layout", 0);
        Ok(random_nodes(&mut rng, layout.count, layout.half_width))
    }

    pub fn scenario(&self) -> Result<Scenario> {
        if !(self.carrier_hz > 0.0) {
            return Err(invalid("carrier frequency must be positive"));
        }
        let sc = Scenario {
            bs_position: Vector2::from(self.bs_position),
            nodes: self.nodes()?,
            wavelength: SPEED_OF_LIGHT / self.carrier_hz,
            c: SPEED_OF_LIGHT,
            gamma0: db_to_linear(self.gamma0_db),
            sigma2: dbm_to_watts(self.noise_dbm),
            pt: dbm_to_watts(self.pt_dbm),
            pmin: dbm_to_watts(self.pmin_dbm),
            nmax: self.nmax,
            base_cov: Vector3::from(self.base_sigma).map(|s| s * s),
            distance_mode: self.distance_mode,
        };
        sc.validate()?;
        sc.validate_power_budget(self.targets.len())?;
        Ok(sc)
    }

    pub fn motion_model(&self) -> Result<MotionModel> {
        MotionModel::new(self.dt, self.qs)
    }

    pub fn initial_targets(&self) -> Vec<TargetState> {
        self.targets
            .iter()
            .map(|t| TargetState::new(t.position[0], t.velocity[0], t.position[1], t.velocity[1]))
            .collect()
    }

    pub fn initial_fisher(&self) -> Result<FisherState> {
        FisherState::initial(self.init_sigma_r, self.init_sigma_v)
    }
}
