//! Network geometry, target kinematics and the measurement model.
//!
//! State layout is `[r_x, v_x, r_y, v_y]`. Measurements per (target, node)
//! pair are the angle of arrival at the node's linear array, the bistatic
//! BS→target→node delay, and the bistatic Doppler shift. Local estimation
//! errors are zero-mean Gaussian with a diagonal covariance that scales
//! inversely with the SNR at the node.

use nalgebra::{Matrix2, Matrix3, Matrix3x4, Vector2, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{Mat4, Vec4};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Near-constant-velocity motion model.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionModel {
    pub dt: f64,
    pub qs: f64,
    /// Transition matrix `I_2 ⊗ [[1, dt], [0, 1]]`.
    pub g: Mat4,
    /// Process-noise covariance `qs · I_2 ⊗ [[dt³/3, dt²/2], [dt²/2, dt]]`.
    pub qn: Mat4,
    qn_chol: Mat4,
}

impl MotionModel {
    pub fn new(dt: f64, qs: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid(format!("dt must be positive, got {dt}")));
        }
        if !(qs > 0.0 && qs.is_finite()) {
            return Err(invalid(format!("qs must be positive, got {qs}")));
        }
        let block_g = Matrix2::new(1.0, dt, 0.0, 1.0);
        let block_q = Matrix2::new(dt.powi(3) / 3.0, dt * dt / 2.0, dt * dt / 2.0, dt) * qs;
        let g = Matrix2::identity().kronecker(&block_g);
        let qn = Matrix2::identity().kronecker(&block_q);
        let g = Mat4::from_iterator(g.iter().cloned());
        let qn = Mat4::from_iterator(qn.iter().cloned());
        let qn_chol = crate::linalg::cholesky4(&qn, "process noise")?.l();
        Ok(Self { dt, qs, g, qn, qn_chol })
    }

    pub fn predict(&self, s: &TargetState) -> TargetState {
        TargetState { x: self.g * s.x, frame: s.frame + 1 }
    }

    /// One draw of `G x + z`, `z ~ N(0, Qn)`.
    pub fn sample_transition<R: Rng + ?Sized>(&self, s: &TargetState, rng: &mut R) -> TargetState {
        let w = Vec4::from_fn(|_, _| rng.sample(StandardNormal));
        let mut next = self.predict(s);
        next.x += self.qn_chol * w;
        next
    }
}

pub fn build_motion_model(dt: f64, qs: f64) -> Result<MotionModel> {
    MotionModel::new(dt, qs)
}

pub fn predict_state(model: &MotionModel, s: &TargetState) -> TargetState {
    model.predict(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetState {
    pub x: Vec4,
    pub frame: u32,
}

impl TargetState {
    pub fn new(rx: f64, vx: f64, ry: f64, vy: f64) -> Self {
        Self { x: Vec4::new(rx, vx, ry, vy), frame: 0 }
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x[0], self.x[2])
    }

    pub fn velocity(&self) -> Vector2<f64> {
        Vector2::new(self.x[1], self.x[3])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensingNode {
    pub position: Vector2<f64>,
    /// Unit vector along the node's uniform linear array.
    pub array_axis: Vector2<f64>,
}

impl SensingNode {
    pub fn new(position: Vector2<f64>, array_axis: Vector2<f64>) -> Result<Self> {
        if (array_axis.norm() - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("array axis must be a unit vector, norm = {}", array_axis.norm())));
        }
        Ok(Self { position, array_axis })
    }

    pub fn with_axis_angle(position: Vector2<f64>, angle: f64) -> Self {
        Self { position, array_axis: Vector2::new(angle.cos(), angle.sin()) }
    }
}

/// Which distance enters the SNR path-loss term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMode {
    /// `‖r − r_n‖`.
    #[default]
    TargetToNode,
    /// Half of the bistatic path `(‖r − r_n‖ + ‖r − r_BS‖) / 2`.
    RoundTripHalf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub bs_position: Vector2<f64>,
    pub nodes: Vec<SensingNode>,
    pub wavelength: f64,
    pub c: f64,
    /// Linear path gain at the reference distance.
    pub gamma0: f64,
    /// Noise power, W.
    pub sigma2: f64,
    /// Total transmit power, W.
    pub pt: f64,
    /// Per-target power floor, W.
    pub pmin: f64,
    pub nmax: usize,
    /// Diagonal of the SNR-normalised measurement covariance (θ, τ, μ).
    pub base_cov: Vector3<f64>,
    pub distance_mode: DistanceMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub theta: f64,
    pub tau: f64,
    pub mu: f64,
}

impl Measurement {
    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.theta, self.tau, self.mu)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self { theta: v[0], tau: v[1], mu: v[2] }
    }
}

const MIN_SEPARATION: f64 = 1e-9;

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        if self.nmax == 0 || self.nmax > n {
            return Err(invalid(format!("need N >= N_max >= 1, got N = {n}, N_max = {}", self.nmax)));
        }
        if !self.base_cov.iter().all(|v| *v > 0.0) {
            return Err(invalid("base covariance diagonal must be positive"));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if (node.array_axis.norm() - 1.0).abs() > 1e-12 {
                return Err(invalid(format!("node {i}: array axis is not a unit vector")));
            }
        }
        if !(self.wavelength > 0.0 && self.c > 0.0 && self.gamma0 > 0.0 && self.sigma2 > 0.0) {
            return Err(invalid("wavelength, c, gamma0 and sigma2 must be positive"));
        }
        if !(self.pmin > 0.0 && self.pt > 0.0) {
            return Err(invalid("power budget and floor must be positive"));
        }
        Ok(())
    }

    /// Checks `P_T ≥ Q · P_min` for `q` targets.
    pub fn validate_power_budget(&self, q: usize) -> Result<()> {
        if self.pt + 1e-12 < q as f64 * self.pmin {
            return Err(invalid(format!(
                "total power {} W cannot cover {q} targets at the {} W floor",
                self.pt, self.pmin
            )));
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn node(&self, n: usize) -> Result<&SensingNode> {
        self.nodes.get(n).ok_or_else(|| invalid(format!("node index {n} out of range")))
    }

    /// Distance entering the SNR for target position `r` and node `n`.
    pub fn snr_distance(&self, s: &TargetState, n: usize) -> Result<f64> {
        let node = self.node(n)?;
        let r = s.position();
        let d_node = (r - node.position).norm();
        let d = match self.distance_mode {
            DistanceMode::TargetToNode => d_node,
            DistanceMode::RoundTripHalf => 0.5 * (d_node + (r - self.bs_position).norm()),
        };
        if d < MIN_SEPARATION {
            return Err(Error::SingularGeometry { node: n, reason: "target coincides with node" });
        }
        Ok(d)
    }

    pub fn snr(&self, p: f64, s: &TargetState, n: usize) -> Result<f64> {
        let d = self.snr_distance(s, n)?;
        Ok(p * self.gamma0 / (self.sigma2 * d * d))
    }
}

struct Geometry {
    /// Target minus node.
    w_node: Vector2<f64>,
    d_node: f64,
    w_bs: Vector2<f64>,
    d_bs: f64,
}

fn geometry(sc: &Scenario, s: &TargetState, n: usize) -> Result<(Geometry, SensingNode)> {
    let node = *sc.node(n)?;
    let r = s.position();
    let w_node = r - node.position;
    let w_bs = r - sc.bs_position;
    let d_node = w_node.norm();
    let d_bs = w_bs.norm();
    if d_node < MIN_SEPARATION {
        return Err(Error::SingularGeometry { node: n, reason: "target coincides with node" });
    }
    if d_bs < MIN_SEPARATION {
        return Err(Error::SingularGeometry { node: n, reason: "target coincides with base station" });
    }
    Ok((Geometry { w_node, d_node, w_bs, d_bs }, node))
}

/// Noise-free AOA, delay and Doppler of target `s` seen by node `n`.
pub fn true_measurement(sc: &Scenario, s: &TargetState, n: usize) -> Result<Measurement> {
    let (g, node) = geometry(sc, s, n)?;
    let v = s.velocity();
    let cos_theta = (node.array_axis.dot(&g.w_node) / g.d_node).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    let tau = (g.d_node + g.d_bs) / sc.c;
    let mu = v.dot(&g.w_node) / (sc.wavelength * g.d_node) + v.dot(&g.w_bs) / (sc.wavelength * g.d_bs);
    Ok(Measurement { theta, tau, mu })
}

/// Analytic Jacobian `∂[θ, τ, μ] / ∂[r_x, v_x, r_y, v_y]`.
pub fn measurement_jacobian(sc: &Scenario, s: &TargetState, n: usize) -> Result<Matrix3x4<f64>> {
    let (g, node) = geometry(sc, s, n)?;
    let v = s.velocity();
    let un = g.w_node / g.d_node;
    let ub = g.w_bs / g.d_bs;

    let cos_theta = node.array_axis.dot(&un);
    // |sin θ| for a 2-D unit pair is the magnitude of the cross product.
    let sin_theta = (node.array_axis.x * un.y - node.array_axis.y * un.x).abs();
    if sin_theta < 1e-12 {
        return Err(Error::SingularGeometry { node: n, reason: "target lies on the array axis" });
    }
    let dtheta_dr = -(node.array_axis - un * cos_theta) / (g.d_node * sin_theta);

    let dtau_dr = (un + ub) / sc.c;

    let proj = |u: &Vector2<f64>, d: f64| (v - u * v.dot(u)) / d;
    let dmu_dr = (proj(&un, g.d_node) + proj(&ub, g.d_bs)) / sc.wavelength;
    let dmu_dv = (un + ub) / sc.wavelength;

    #[rustfmt::skip]
    let h = Matrix3x4::new(
        dtheta_dr.x, 0.0,        dtheta_dr.y, 0.0,
        dtau_dr.x,   0.0,        dtau_dr.y,   0.0,
        dmu_dr.x,    dmu_dv.x,   dmu_dr.y,    dmu_dv.y,
    );
    Ok(h)
}

/// Power-independent part `Σ̄ = p · Σ = (σ² d² / γ₀) · Σ̇`.
pub fn power_free_covariance(sc: &Scenario, s: &TargetState, n: usize) -> Result<Matrix3<f64>> {
    let d = sc.snr_distance(s, n)?;
    Ok(Matrix3::from_diagonal(&(sc.base_cov * (sc.sigma2 * d * d / sc.gamma0))))
}

/// `Σ = Σ̇ / SNR` for transmit power `p` (W).
pub fn measurement_covariance(sc: &Scenario, p: f64, s: &TargetState, n: usize) -> Result<Matrix3<f64>> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(invalid(format!("power must be positive, got {p}")));
    }
    Ok(power_free_covariance(sc, s, n)? / p)
}

/// True measurement plus Gaussian local-estimation error at power `p`.
pub fn sample_measurement<R: Rng + ?Sized>(
    sc: &Scenario,
    p: f64,
    s_true: &TargetState,
    n: usize,
    rng: &mut R,
) -> Result<Measurement> {
    let clean = true_measurement(sc, s_true, n)?;
    let cov = measurement_covariance(sc, p, s_true, n)?;
    let noise = Vector3::from_fn(|i, _| cov[(i, i)].sqrt() * rng.sample::<f64, _>(StandardNormal));
    Ok(Measurement::from_vector(&(clean.as_vector() + noise)))
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}
