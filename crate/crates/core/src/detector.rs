//! LRA-LMMSE symbol detection, robust variants for CSI mismatch and QPSK
//! slicing.

use std::f64::consts::FRAC_2_PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

use crate::bussgang::{data_covariance, ArcsineMode, CovarianceSet};
use crate::channel::qpsk_map;
use crate::error::{Error, Result};
use crate::linalg::{symmetrize, SpdFactor};
use crate::model::{QuantizedObservation, SystemConfig};

/// Which statistical model the filter was designed for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetectorVariant {
    Perfect,
    RobustLambda { lambda: f64 },
    RobustEstimation,
}

/// Linear receive filter `G` (`x̂_R = G^T z_Q`) with the statistics it was
/// designed from.
#[derive(Debug, Clone)]
pub struct DetectorFilter {
    /// `(2N_r + α) × 2N_t`.
    pub g: DMatrix<f64>,
    pub variant: DetectorVariant,
    /// Covariances assumed by the design.
    pub cov: CovarianceSet,
    /// Cross-covariance `C_zQx` assumed by the design.
    pub c_zqx: DMatrix<f64>,
}

impl DetectorFilter {
    /// `tr(G^T C_zQ G − 2 G^T C_zQx + C_x)` under the design statistics.
    pub fn linear_model_mse(&self, cfg: &SystemConfig) -> f64 {
        quadratic_mse(&self.g, &self.cov.c_zq, &self.c_zqx, cfg).sum()
    }
}

/// Diagonal of `G^T C_zQ G − 2 G^T C_zQx + C_x` with `C_x = (σ_x²/2) I`.
pub fn quadratic_mse(
    g: &DMatrix<f64>,
    c_zq: &DMatrix<f64>,
    c_zqx: &DMatrix<f64>,
    cfg: &SystemConfig,
) -> DVector<f64> {
    let cg = c_zq * g;
    DVector::from_fn(g.ncols(), |k, _| {
        g.column(k).dot(&cg.column(k)) - 2.0 * g.column(k).dot(&c_zqx.column(k))
            + 0.5 * cfg.sigma_x2
    })
}

fn lmmse_core(
    c_zr: DMatrix<f64>,
    known_bh: &DMatrix<f64>,
    cfg: &SystemConfig,
    variant: DetectorVariant,
) -> Result<DetectorFilter> {
    let cov = CovarianceSet::new(c_zr, ArcsineMode::Exact)?;
    let scale = FRAC_2_PI.sqrt() * 0.5 * cfg.sigma_x2;
    let mut c_zqx = known_bh.clone();
    for (i, mut row) in c_zqx.row_iter_mut().enumerate() {
        row *= scale * cov.k_r[i];
    }
    let g = SpdFactor::new(&cov.c_zq, "data C_zQ")?.solve(&c_zqx);
    Ok(DetectorFilter {
        g,
        variant,
        cov,
        c_zqx,
    })
}

fn check_dims(h_r: &DMatrix<f64>, b: &DMatrix<f64>, cfg: &SystemConfig) -> Result<()> {
    if h_r.shape() != (cfg.real_rx(), cfg.real_tx()) || b.ncols() != cfg.real_rx() {
        return Err(Error::DimensionMismatch(format!(
            "H_R {:?}, B {:?} for N_r = {}, N_t = {}",
            h_r.shape(),
            b.shape(),
            cfg.n_antennas,
            cfg.n_users
        )));
    }
    Ok(())
}

/// `G = C_zQ^{-1} C_zQx` with `C_zQx = √(2/π)(σ_x²/2) K_R B H_R`.
pub fn lmmse_detector(
    h_r: &DMatrix<f64>,
    b: &DMatrix<f64>,
    cfg: &SystemConfig,
) -> Result<DetectorFilter> {
    check_dims(h_r, b, cfg)?;
    let c_zr = data_covariance(h_r, b, cfg);
    lmmse_core(c_zr, &(b * h_r), cfg, DetectorVariant::Perfect)
}

/// Detector for `H = √λ H_1 + √(1−λ) H_2` with `H_1` known and `H_2`
/// described by `gamma` (built from the covariance of `vec H_2`).
pub fn robust_lambda_detector(
    h_r1: &DMatrix<f64>,
    lambda: f64,
    gamma: &GammaMatrix,
    b: &DMatrix<f64>,
    cfg: &SystemConfig,
) -> Result<DetectorFilter> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::InvalidInput(format!("lambda = {lambda} not in (0, 1)")));
    }
    check_dims(h_r1, b, cfg)?;
    let mut c_zr = data_covariance(h_r1, b, cfg);
    // data_covariance already holds ½σ_x² BH₁H₁ᵀBᵀ + ½σ_n² BBᵀ; rescale the
    // signal part by λ and add the mismatch term.
    let bh = b * h_r1;
    let signal = (&bh * bh.transpose()) * (0.5 * cfg.sigma_x2);
    c_zr -= &signal * (1.0 - lambda);
    c_zr += (b * &gamma.gamma * b.transpose()) * (1.0 - lambda);
    symmetrize(&mut c_zr);
    lmmse_core(
        c_zr,
        &(bh * lambda.sqrt()),
        cfg,
        DetectorVariant::RobustLambda { lambda },
    )
}

/// Detector using a channel estimate `Ĥ_R` and `gamma` built from the
/// estimation-error correlation.
pub fn robust_estimation_detector(
    h_hat_r: &DMatrix<f64>,
    gamma: &GammaMatrix,
    b: &DMatrix<f64>,
    cfg: &SystemConfig,
) -> Result<DetectorFilter> {
    check_dims(h_hat_r, b, cfg)?;
    let mut c_zr = data_covariance(h_hat_r, b, cfg);
    c_zr += b * &gamma.gamma * b.transpose();
    symmetrize(&mut c_zr);
    lmmse_core(c_zr, &(b * h_hat_r), cfg, DetectorVariant::RobustEstimation)
}

/// Unquantized LMMSE baseline `G = (½σ_x² H H^T + ½σ_n² I)^{-1} ½σ_x² H`
/// acting on `y_R` directly.
pub fn unquantized_lmmse(h_r: &DMatrix<f64>, cfg: &SystemConfig) -> Result<DMatrix<f64>> {
    let n = h_r.nrows();
    let c = h_r * h_r.transpose() * (0.5 * cfg.sigma_x2)
        + DMatrix::identity(n, n) * (0.5 * cfg.sigma_n2);
    Ok(SpdFactor::new(&c, "unquantized covariance")?.solve(&(h_r * (0.5 * cfg.sigma_x2))))
}

/// How `Γ_R` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaMode {
    /// Sum over all `4^{N_t}` QPSK vectors.
    Exact,
    /// Average over uniform QPSK draws from a seeded stream.
    Sampled { n_samples: usize, seed: u64 },
}

/// Largest symbol alphabet enumerated by [`GammaMode::Exact`].
pub const GAMMA_EXACT_LIMIT: usize = 65_536;

/// Default draw count for [`GammaMode::Sampled`].
pub const GAMMA_DEFAULT_SAMPLES: usize = 100_000;

impl GammaMode {
    /// Exact when affordable, otherwise sampled with the default count.
    pub fn auto(n_users: usize, seed: u64) -> Self {
        if exact_terms(n_users).is_some() {
            GammaMode::Exact
        } else {
            GammaMode::Sampled {
                n_samples: GAMMA_DEFAULT_SAMPLES,
                seed,
            }
        }
    }
}

fn exact_terms(n_users: usize) -> Option<usize> {
    let t = 4usize.checked_pow(u32::try_from(n_users).ok()?)?;
    (t <= GAMMA_EXACT_LIMIT).then_some(t)
}

/// `Γ_R = E[X̃_R M X̃_R^T]` over QPSK symbols, `2N_r × 2N_r`.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaMatrix {
    pub gamma: DMatrix<f64>,
    pub mode: GammaMode,
}

/// Nonzeros of row `a` of `X̃_R`, where `X̃ = x^T ⊗ I_{N_r}` acts on
/// `[ℜ vec H; ℑ vec H]`.
fn xtilde_row(a: usize, x: &[Complex64], nr: usize, out: &mut Vec<(usize, f64)>) {
    out.clear();
    let nt = x.len();
    let big = nr * nt;
    let (n, upper) = if a < nr { (a, true) } else { (a - nr, false) };
    for (m, xm) in x.iter().enumerate() {
        let col = m * nr + n;
        if upper {
            out.push((col, xm.re));
            out.push((big + col, -xm.im));
        } else {
            out.push((col, xm.im));
            out.push((big + col, xm.re));
        }
    }
}

fn accumulate(acc: &mut DMatrix<f64>, kernel: &DMatrix<f64>, x: &[Complex64], nr: usize, w: f64) {
    let dim = 2 * nr;
    let rows: Vec<Vec<(usize, f64)>> = (0..dim)
        .map(|a| {
            let mut r = Vec::with_capacity(2 * x.len());
            xtilde_row(a, x, nr, &mut r);
            r
        })
        .collect();
    for a in 0..dim {
        for b in a..dim {
            let mut s = 0.0;
            for &(p, vp) in &rows[a] {
                for &(q, vq) in &rows[b] {
                    s += vp * kernel[(p, q)] * vq;
                }
            }
            acc[(a, b)] += w * s;
            if a != b {
                acc[(b, a)] += w * s;
            }
        }
    }
}

/// Evaluates `Γ_R` for a `2N_rN_t × 2N_rN_t` kernel.
pub fn gamma_matrix(
    kernel: &DMatrix<f64>,
    cfg: &SystemConfig,
    mode: GammaMode,
) -> Result<GammaMatrix> {
    let (nr, nt) = (cfg.n_antennas, cfg.n_users);
    let n = 2 * nr * nt;
    if kernel.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "kernel {:?}, expected {n}x{n}",
            kernel.shape()
        )));
    }
    let mut acc = DMatrix::zeros(2 * nr, 2 * nr);
    match mode {
        GammaMode::Exact => {
            let terms = exact_terms(nt).ok_or_else(|| {
                Error::InvalidRequest(format!(
                    "exact Γ needs 4^{nt} terms (limit {GAMMA_EXACT_LIMIT}); use sampled mode"
                ))
            })?;
            let w = 1.0 / terms as f64;
            let mut x = vec![Complex64::new(0.0, 0.0); nt];
            for idx in 0..terms {
                for (m, xm) in x.iter_mut().enumerate() {
                    let d = (idx >> (2 * m)) & 3;
                    *xm = qpsk_map([(d & 1) as u8, (d >> 1) as u8], cfg.sigma_x2);
                }
                accumulate(&mut acc, kernel, &x, nr, w);
            }
        }
        GammaMode::Sampled { n_samples, seed } => {
            if n_samples == 0 {
                return Err(Error::InvalidRequest("sampled Γ with zero draws".into()));
            }
            let mut rng = crate::rng::aux_rng(seed, 0x67_616d_6d61);
            let w = 1.0 / n_samples as f64;
            let mut x = vec![Complex64::new(0.0, 0.0); nt];
            for _ in 0..n_samples {
                for xm in x.iter_mut() {
                    let d: u8 = rng.random_range(0..4);
                    *xm = qpsk_map([d & 1, d >> 1], cfg.sigma_x2);
                }
                accumulate(&mut acc, kernel, &x, nr, w);
            }
        }
    }
    symmetrize(&mut acc);
    Ok(GammaMatrix { gamma: acc, mode })
}

/// Hard decisions for one received block.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    /// `x̂_R = G^T z_Q`.
    pub x_hat_real: DVector<f64>,
    /// Unit-free QPSK decisions `±1 ± j`.
    pub symbols: DVector<Complex64>,
    /// `[bit0, bit1]` per user, same labeling as the QPSK source.
    pub bits: Vec<[u8; 2]>,
}

/// `x̂_R = G^T z_Q` followed by per-stream sign slicing.
pub fn detect_and_slice(z_q: &QuantizedObservation, g: &DMatrix<f64>) -> Result<Detection> {
    if g.nrows() != z_q.len() || !g.ncols().is_multiple_of(2) {
        return Err(Error::DimensionMismatch(format!(
            "G {:?}, observation length {}",
            g.shape(),
            z_q.len()
        )));
    }
    let x_hat_real = g.tr_mul(z_q.values());
    let nt = g.ncols() / 2;
    let bit = |v: f64| u8::from(v < 0.0);
    let bits: Vec<[u8; 2]> = (0..nt)
        .map(|m| [bit(x_hat_real[m]), bit(x_hat_real[nt + m])])
        .collect();
    let symbols = DVector::from_iterator(
        nt,
        bits.iter().map(|b| {
            let s = |v: u8| if v == 0 { 1.0 } else { -1.0 };
            Complex64::new(s(b[0]), s(b[1]))
        }),
    );
    Ok(Detection {
        x_hat_real,
        symbols,
        bits,
    })
}

/// Number of differing bits between two label sequences.
pub fn bit_errors(a: &[[u8; 2]], b: &[[u8; 2]]) -> u64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| u64::from(x[0] != y[0]) + u64::from(x[1] != y[1]))
        .sum()
}
