//! Fisher information, PCRLB and the log-det selection cost with its
//! gradient and Hessian in the selection vector.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{spd_inverse, spd_logdet, symmetrize, Mat4};
use crate::scenario::{measurement_jacobian, power_free_covariance, MotionModel, Scenario, TargetState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FisherState {
    pub j: Mat4,
    pub frame: u32,
}

impl FisherState {
    pub fn new(j: Mat4, frame: u32) -> Result<Self> {
        let asym = (j - j.transpose()).abs().max();
        if asym > 1e-10 * j.abs().max().max(1.0) {
            return Err(invalid(format!("information matrix is not symmetric (max asymmetry {asym:e})")));
        }
        crate::linalg::cholesky4(&j, "information matrix")?;
        Ok(Self { j: symmetrize(&j), frame })
    }

    /// `J⁰ = diag(σ_r², σ_v², σ_r², σ_v²)⁻¹`.
    pub fn initial(sigma_r: f64, sigma_v: f64) -> Result<Self> {
        if !(sigma_r > 0.0 && sigma_v > 0.0) {
            return Err(invalid("initial standard deviations must be positive"));
        }
        let (ir, iv) = (1.0 / (sigma_r * sigma_r), 1.0 / (sigma_v * sigma_v));
        Ok(Self { j: Mat4::from_diagonal(&crate::linalg::Vec4::new(ir, iv, ir, iv)), frame: 0 })
    }
}

/// Per-node power-free measurement information `M̄_n = Hᵀ Σ̄⁻¹ H`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasInfoSet {
    pub mbar: Vec<Mat4>,
}

impl MeasInfoSet {
    pub fn len(&self) -> usize {
        self.mbar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mbar.is_empty()
    }

    /// `Σ̃ = Σ_n u_n M̄_n`.
    pub fn aggregate(&self, u: &DVector<f64>) -> Mat4 {
        self.mbar.iter().zip(u.iter()).fold(Mat4::zeros(), |acc, (m, w)| acc + m * *w)
    }
}

/// `(Qn + G J⁻¹ Gᵀ)⁻¹`.
pub fn prior_info(model: &MotionModel, j_prev: &Mat4) -> Result<Mat4> {
    let c = spd_inverse(j_prev, "previous information matrix")
        .map_err(|_| invalid("previous information matrix is not positive definite"))?;
    let pred_cov = symmetrize(&(model.qn + model.g * c * model.g.transpose()));
    spd_inverse(&pred_cov, "predicted covariance")
}

pub fn meas_info_set(sc: &Scenario, s_pred: &TargetState) -> Result<MeasInfoSet> {
    let mbar = (0..sc.num_nodes())
        .map(|n| {
            let h = measurement_jacobian(sc, s_pred, n)?;
            let cov = power_free_covariance(sc, s_pred, n)?;
            let w = cov.map_diagonal(|x| 1.0 / x);
            let m = h.transpose() * nalgebra::Matrix3::from_diagonal(&w) * h;
            Ok(symmetrize(&m))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MeasInfoSet { mbar })
}

/// `J = Jp + p Σ_n u_n M̄_n`.
pub fn fim(jp: &Mat4, u: &DVector<f64>, p: f64, m: &MeasInfoSet) -> Result<Mat4> {
    if u.len() != m.len() {
        return Err(invalid(format!("selection has {} entries for {} nodes", u.len(), m.len())));
    }
    if !(p > 0.0) {
        return Err(invalid(format!("power must be positive, got {p}")));
    }
    Ok(jp + m.aggregate(u) * p)
}

pub fn pcrlb(j: &Mat4) -> Result<Mat4> {
    spd_inverse(j, "information matrix")
}

/// `−log det J`, i.e. `log det` of the PCRLB.
pub fn cost_logdet(j: &Mat4) -> Result<f64> {
    Ok(-spd_logdet(j, "information matrix")?)
}

fn weighted_products(j: &Mat4, p: f64, m: &MeasInfoSet) -> Result<Vec<Mat4>> {
    let jinv = spd_inverse(j, "information matrix")?;
    Ok(m.mbar.iter().map(|mb| jinv * mb * p).collect())
}

/// `d_n = −tr(J⁻¹ p M̄_n)`.
pub fn grad_u(j: &Mat4, p: f64, m: &MeasInfoSet) -> Result<DVector<f64>> {
    let jinv = spd_inverse(j, "information matrix")?;
    Ok(DVector::from_iterator(
        m.len(),
        m.mbar.iter().map(|mb| -p * jinv.component_mul(mb).sum()),
    ))
}

/// `H_mn = tr(J⁻¹ M_m J⁻¹ M_n)` with `M = p M̄`.
pub fn hess_u(j: &Mat4, p: f64, m: &MeasInfoSet) -> Result<DMatrix<f64>> {
    let a = weighted_products(j, p, m)?;
    let at: Vec<Mat4> = a.iter().map(|x| x.transpose()).collect();
    let n = a.len();
    let mut h = DMatrix::zeros(n, n);
    for r in 0..n {
        for c in r..n {
            let v = a[r].component_mul(&at[c]).sum();
            h[(r, c)] = v;
            h[(c, r)] = v;
        }
    }
    Ok(h)
}

/// One target's selection subproblem at fixed power.
#[derive(Clone, Debug)]
pub struct SelectCtx {
    pub jp: Mat4,
    pub m: MeasInfoSet,
    pub p: f64,
}

impl SelectCtx {
    pub fn n(&self) -> usize {
        self.m.len()
    }

    pub fn fim(&self, u: &DVector<f64>) -> Result<Mat4> {
        fim(&self.jp, u, self.p, &self.m)
    }

    pub fn cost(&self, u: &DVector<f64>) -> Result<f64> {
        cost_logdet(&self.fim(u)?)
    }

    /// Cost of a relaxed vector after clipping it to the unit box.
    pub fn cost_clipped(&self, u: &DVector<f64>) -> Result<f64> {
        self.cost(&u.map(|x| x.clamp(0.0, 1.0)))
    }

    pub fn grad(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        grad_u(&self.fim(u)?, self.p, &self.m)
    }

    pub fn hess(&self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        hess_u(&self.fim(u)?, self.p, &self.m)
    }
}
