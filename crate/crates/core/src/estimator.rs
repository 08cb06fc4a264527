//! LRA-LMMSE channel estimation from 1-bit pilot observations.
//!
//! The filter depends only on the pilots, the comparator network, `R_h` and
//! `σ_n²`, so it is built once and applied to every quantized pilot block.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::bussgang::{pilot_covariance, ArcsineMode, CovarianceSet};
use crate::channel::{channel_from_vec_real, PilotMatrix};
use crate::error::{Error, Result};
use crate::linalg::{symmetrize, SpdFactor};
use crate::model::{QuantizedObservation, SystemConfig};

/// Channel-independent part of the estimator.
#[derive(Debug, Clone)]
pub struct LraLmmseEstimator {
    /// `W = R_h Φ̂_R^T C_zQp^{-1}`, size `2N_rN_t × τ(2N_r+α)`.
    pub w: DMatrix<f64>,
    /// `E[ε_R ε_R^T] = R_h − R_h Φ̂_R^T C_zQp^{-1} Φ̂_R R_h`.
    pub err_corr: DMatrix<f64>,
    /// `tr(E[ε_R ε_R^T])`.
    pub analytic_mse: f64,
    n_antennas: usize,
    n_users: usize,
}

/// Estimate produced from one quantized pilot block.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSolution {
    /// `ĥ_R = W z_Qp`.
    pub h_hat_real: DVector<f64>,
    /// `Ĥ` re-assembled from `ĥ_a + j ĥ_b`, `N_r × N_t`.
    pub h_hat_complex: DMatrix<Complex64>,
}

impl LraLmmseEstimator {
    pub fn new(
        cfg: &SystemConfig,
        pilots: &PilotMatrix,
        b_eff: &DMatrix<f64>,
        r_h: &DMatrix<f64>,
        sigma_n2: f64,
    ) -> Result<Self> {
        let c_zrp = pilot_covariance(pilots, b_eff, r_h, sigma_n2)?;
        let cov = CovarianceSet::new(c_zrp, ArcsineMode::Exact)?;
        // Φ̂ = A_Rp B_eff Φ̃_R
        let mut phi_hat = b_eff * &pilots.phi_tilde_real;
        for (i, mut row) in phi_hat.row_iter_mut().enumerate() {
            row *= cov.a_r[i];
        }
        let factor = SpdFactor::new(&cov.c_zq, "pilot C_zQ")?;
        let phi_r = &phi_hat * r_h;
        let w = factor.solve(&phi_r).transpose();
        let mut err_corr = r_h - &w * &phi_r;
        symmetrize(&mut err_corr);
        let analytic_mse = err_corr.trace();
        Ok(Self {
            w,
            err_corr,
            analytic_mse,
            n_antennas: cfg.n_antennas,
            n_users: cfg.n_users,
        })
    }

    pub fn estimate(&self, z_qp: &QuantizedObservation) -> Result<EstimatorSolution> {
        estimate_channel(z_qp, &self.w, self.n_antennas, self.n_users)
    }
}

/// The LRA-LMMSE filter `W`.
pub fn lra_lmmse_filter(
    cfg: &SystemConfig,
    pilots: &PilotMatrix,
    b_eff: &DMatrix<f64>,
    r_h: &DMatrix<f64>,
    sigma_n2: f64,
) -> Result<DMatrix<f64>> {
    Ok(LraLmmseEstimator::new(cfg, pilots, b_eff, r_h, sigma_n2)?.w)
}

/// Estimation-error correlation `E[ε_R ε_R^T]`.
pub fn error_correlation(
    cfg: &SystemConfig,
    pilots: &PilotMatrix,
    b_eff: &DMatrix<f64>,
    r_h: &DMatrix<f64>,
    sigma_n2: f64,
) -> Result<DMatrix<f64>> {
    Ok(LraLmmseEstimator::new(cfg, pilots, b_eff, r_h, sigma_n2)?.err_corr)
}

/// Sum MSE `tr(E[ε_R ε_R^T])`.
pub fn analytic_mse(err_corr: &DMatrix<f64>) -> f64 {
    err_corr.trace()
}

/// `ĥ_R = W z_Qp` and its complex re-assembly.
pub fn estimate_channel(
    z_qp: &QuantizedObservation,
    w: &DMatrix<f64>,
    n_antennas: usize,
    n_users: usize,
) -> Result<EstimatorSolution> {
    if w.ncols() != z_qp.len() {
        return Err(Error::DimensionMismatch(format!(
            "filter has {} columns, observation length {}",
            w.ncols(),
            z_qp.len()
        )));
    }
    let h_hat_real = w * z_qp.values();
    let h_hat_complex = channel_from_vec_real(&h_hat_real, n_antennas, n_users)?;
    Ok(EstimatorSolution {
        h_hat_real,
        h_hat_complex,
    })
}

/// Closed-form prefactor of the estimate correlation under the Rayleigh,
/// `τ = N_t`, orthogonal-pilot assumptions.
pub fn kappa(cfg: &SystemConfig, alpha: usize) -> f64 {
    let p = cfg.n_users as f64 * cfg.sigma_x2;
    let a = alpha as f64 / (2.0 * cfg.n_antennas as f64);
    0.5 * p / (p + cfg.sigma_n2) * (1.0 - (PI - 2.0) / (2.0 * (1.0 + a) + PI - 2.0))
}

/// Approximate sum MSE `N_r N_t (1 − 2κ)`.
pub fn approx_sum_mse(cfg: &SystemConfig, alpha: usize) -> f64 {
    (cfg.n_antennas * cfg.n_users) as f64 * (1.0 - 2.0 * kappa(cfg, alpha))
}

/// Channel-vector prior `R_h` for large-scale gains `betas` (`½β_m` on every
/// real entry of user `m`).
pub fn channel_prior(n_antennas: usize, betas: &[f64]) -> DMatrix<f64> {
    let n = n_antennas * betas.len();
    DMatrix::from_fn(2 * n, 2 * n, |i, j| {
        if i == j {
            0.5 * betas[(i % n) / n_antennas]
        } else {
            0.0
        }
    })
}
