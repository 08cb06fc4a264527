//! Ergodic sum-rate lower bound of the Bussgang-linearized data model and the
//! closed-form matched-filter rate.

use std::f64::consts::{FRAC_2_PI, PI};

use nalgebra::{DMatrix, DVector};

use crate::bussgang::{data_covariance, ArcsineMode, CovarianceSet};
use crate::channel::ChannelModel;
use crate::detector::DetectorFilter;
use crate::error::{Error, Result};
use crate::harness::{run_point_trials, CsiMode, DetectorMode, Metric, Scenario};
use crate::netdesign::NetworkDesign;
use crate::model::SystemConfig;

/// Per-stream SINR terms, each as it enters the SINR ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct RateDecomposition {
    /// `d_Rk = g_Rk^T A_Rd B`, length `2N_r`.
    pub d_rk: DVector<f64>,
    /// `σ_x² |d ĥ_k|²`.
    pub desired: f64,
    /// `σ_x² |d ĥ_i|²` for every stream, zero at `i = k`.
    pub interference: Vec<f64>,
    /// `σ_x² |d ε_i|²` for every stream.
    pub estimation_error: Vec<f64>,
    /// `σ_n² ‖d‖²`.
    pub awgn: f64,
    /// `2 g^T C_nq g`.
    pub quantization: f64,
    pub sinr: f64,
    /// `½ log₂(1 + SINR)` in bits per real channel use.
    pub rate: f64,
}

/// Rate of real stream `k`.
///
/// `h_hat` and `err` are `2N_r × 2N_t` (columns are streams); `a_rd` is the
/// diagonal of the data Bussgang gain and `c_nq` the quantization-noise
/// covariance, both evaluated on the true channel statistics.
#[allow(clippy::too_many_arguments)]
pub fn stream_rate(
    k: usize,
    h_hat: &DMatrix<f64>,
    err: Option<&DMatrix<f64>>,
    g: &DMatrix<f64>,
    b: &DMatrix<f64>,
    a_rd: &DVector<f64>,
    c_nq: &DMatrix<f64>,
    cfg: &SystemConfig,
) -> Result<RateDecomposition> {
    let n_out = b.nrows();
    if g.nrows() != n_out || a_rd.len() != n_out || c_nq.shape() != (n_out, n_out) {
        return Err(Error::DimensionMismatch(format!(
            "G {:?}, A {}, C_nq {:?}, B {:?}",
            g.shape(),
            a_rd.len(),
            c_nq.shape(),
            b.shape()
        )));
    }
    if k >= g.ncols() || h_hat.ncols() != g.ncols() || h_hat.nrows() != b.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "stream {k}, Ĥ {:?}, G {:?}",
            h_hat.shape(),
            g.shape()
        )));
    }
    let gk = g.column(k);
    let ag = gk.component_mul(a_rd);
    let d_rk = b.tr_mul(&ag);
    let proj = h_hat.tr_mul(&d_rk);
    let sx = cfg.sigma_x2;
    let desired = sx * proj[k] * proj[k];
    let interference: Vec<f64> = (0..proj.len())
        .map(|i| if i == k { 0.0 } else { sx * proj[i] * proj[i] })
        .collect();
    let estimation_error: Vec<f64> = match err {
        Some(e) => e.tr_mul(&d_rk).iter().map(|v| sx * v * v).collect(),
        None => vec![0.0; proj.len()],
    };
    let awgn = cfg.sigma_n2 * d_rk.norm_squared();
    let quantization = 2.0 * gk.dot(&(c_nq * gk)).max(0.0);
    let denom =
        interference.iter().sum::<f64>() + estimation_error.iter().sum::<f64>() + awgn + quantization;
    let sinr = if desired == 0.0 { 0.0 } else { desired / denom };
    Ok(RateDecomposition {
        d_rk,
        desired,
        interference,
        estimation_error,
        awgn,
        quantization,
        sinr,
        rate: 0.5 * (1.0 + sinr).log2(),
    })
}

/// Data-phase statistics on the true channel and `C_nq = C_zQ − A C_zR A^T`.
pub fn data_quantization_noise(
    h_r: &DMatrix<f64>,
    b: &DMatrix<f64>,
    cfg: &SystemConfig,
) -> Result<(CovarianceSet, DMatrix<f64>)> {
    let cov = CovarianceSet::new(data_covariance(h_r, b, cfg), ArcsineMode::Exact)?;
    let c_nq = cov.quantization_noise();
    Ok((cov, c_nq))
}

/// Sum of the `2N_t` stream rates for one channel.
///
/// `h_true` fixes the Bussgang gain and quantization noise; `h_hat` is the
/// receiver's channel, with error `h_true − h_hat`.
pub fn sum_rate_for_channel(
    h_true: &DMatrix<f64>,
    h_hat: &DMatrix<f64>,
    g: &DMatrix<f64>,
    b: &DMatrix<f64>,
    cfg: &SystemConfig,
) -> Result<f64> {
    let (cov, c_nq) = data_quantization_noise(h_true, b, cfg)?;
    let err = h_true - h_hat;
    let err = (err.amax() > 0.0).then_some(err);
    (0..g.ncols())
        .map(|k| Ok(stream_rate(k, h_hat, err.as_ref(), g, b, &cov.a_r, &c_nq, cfg)?.rate))
        .sum()
}

/// Convenience wrapper for a designed filter.
pub fn sum_rate_with_filter(
    h_true: &DMatrix<f64>,
    h_hat: &DMatrix<f64>,
    filter: &DetectorFilter,
    b: &DMatrix<f64>,
    cfg: &SystemConfig,
) -> Result<f64> {
    sum_rate_for_channel(h_true, h_hat, &filter.g, b, cfg)
}

/// Receiver used in a sum-rate run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateReceiver {
    Lmmse,
    MatchedFilter,
}

/// One sum-rate operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct SumRateSetup {
    pub cfg: SystemConfig,
    pub channel: ChannelModel,
    pub network: NetworkDesign,
    /// `false` for perfect CSI, `true` for LRA-LMMSE estimates with
    /// `τ = cfg.pilot_len`.
    pub estimated_csi: bool,
    pub receiver: RateReceiver,
    pub snr_db: f64,
}

/// Monte Carlo mean with a normal-approximation 95% interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub ci95: (f64, f64),
    pub n_trials: usize,
}

/// Averages the sum rate over `n_channels` channel (and estimate)
/// realizations.
pub fn sum_rate_monte_carlo(
    setup: &SumRateSetup,
    n_channels: usize,
    n_noise: usize,
    seed: u64,
) -> Result<RateEstimate> {
    let scenario = Scenario {
        cfg: setup.cfg,
        channel: setup.channel,
        network: setup.network,
        csi: if setup.estimated_csi {
            CsiMode::Estimated(setup.cfg.pilot_len)
        } else {
            CsiMode::Perfect
        },
        detector: match setup.receiver {
            RateReceiver::Lmmse => DetectorMode::Lmmse,
            RateReceiver::MatchedFilter => DetectorMode::MatchedFilter,
        },
        metric: Metric::SumRate,
        snr_grid_db: vec![setup.snr_db],
        n_channels,
        n_noise: n_noise.max(1),
        master_seed: seed,
        paper_n_channels: None,
        paper_n_noise: None,
    };
    scenario.validate()?;
    let trials = run_point_trials(&scenario, 0)?;
    let summary = crate::harness::summarize(&trials, Metric::SumRate);
    let half = 1.96 * summary.stderr;
    Ok(RateEstimate {
        mean: summary.value,
        stderr: summary.stderr,
        ci95: (summary.value - half, summary.value + half),
        n_trials: summary.n_trials,
    })
}

/// Constants of the closed-form matched-filter rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MfRateParams {
    /// Data Bussgang gain `ζ = √((2/π)·2/(N_tσ_x² + σ_n²))`.
    pub zeta: f64,
    /// `δ_B = (1 + α/(2N_r))² + α(N_r − 1)/(4N_r²)`.
    pub delta_b: f64,
    pub kappa: f64,
}

impl MfRateParams {
    pub fn new(cfg: &SystemConfig, alpha: usize, kappa: f64) -> Self {
        let nr = cfg.n_antennas as f64;
        let a = alpha as f64 / (2.0 * nr);
        Self {
            zeta: (FRAC_2_PI * 2.0 / (cfg.n_users as f64 * cfg.sigma_x2 + cfg.sigma_n2)).sqrt(),
            delta_b: (1.0 + a).powi(2) + alpha as f64 * (nr - 1.0) / (4.0 * nr * nr),
            kappa,
        }
    }
}

fn mf_rate(cfg: &SystemConfig, alpha: usize, kappa: f64, perfect: bool) -> f64 {
    let p = MfRateParams::new(cfg, alpha, kappa);
    let nr = cfg.n_antennas as f64;
    let a1 = 1.0 + alpha as f64 / (2.0 * nr);
    let sx = cfg.sigma_x2;
    let k_streams = cfg.real_tx() as f64;
    let z2 = p.zeta * p.zeta;
    let power = cfg.n_users as f64 * sx + cfg.sigma_n2;
    let num = if perfect {
        sx * a1 * a1 * nr
    } else {
        sx * a1 * a1 * 2.0 * nr * p.kappa
    };
    let mut den = 0.5 * sx * p.delta_b * (k_streams - 1.0)
        + cfg.sigma_n2 * p.delta_b
        + 2.0 * (PI - 2.0) / PI / z2 * a1
        + 2.0 / z2 * p.delta_b * (FRAC_2_PI - z2 * power / 2.0);
    if !perfect {
        den += 0.5 * sx * a1 * a1 * (2.0 * p.kappa + 1.0);
    }
    0.5 * (1.0 + num / den).log2()
}

/// Closed-form per-stream rate of the matched filter with estimated CSI.
pub fn analytic_mf_rate(cfg: &SystemConfig, alpha: usize, kappa: f64) -> f64 {
    mf_rate(cfg, alpha, kappa, false)
}

/// Perfect-CSI specialization (`κ = ½`, no estimate-variance term).
pub fn analytic_mf_rate_perfect_csi(cfg: &SystemConfig, alpha: usize) -> f64 {
    mf_rate(cfg, alpha, 0.5, true)
}
