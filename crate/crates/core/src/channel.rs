//! Channel and signal generation: Rayleigh and log-distance fading, orthogonal
//! pilots, QPSK symbols and SNR calibration.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{complex_to_real_channel, SystemConfig};

/// One channel draw `H = H_w diag(√β)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h_complex: DMatrix<Complex64>,
    pub h_real: DMatrix<f64>,
    pub betas: Vec<f64>,
}

impl ChannelRealization {
    pub fn from_complex(h: DMatrix<Complex64>, betas: Vec<f64>) -> Result<Self> {
        let h_real = complex_to_real_channel(&h)?;
        Ok(Self {
            h_complex: h,
            h_real,
            betas,
        })
    }

    /// Stacked channel vector `h_R = [ℜ vec(H); ℑ vec(H)]`.
    pub fn vec_real(&self) -> DVector<f64> {
        channel_vec_real(&self.h_complex)
    }
}

/// `[ℜ vec(H); ℑ vec(H)]` with column-major `vec` (index `m·N_r + n`).
pub fn channel_vec_real(h: &DMatrix<Complex64>) -> DVector<f64> {
    let n = h.len();
    DVector::from_fn(2 * n, |i, _| if i < n { h[i].re } else { h[i - n].im })
}

/// Inverse of [`channel_vec_real`].
pub fn channel_from_vec_real(
    v: &DVector<f64>,
    n_antennas: usize,
    n_users: usize,
) -> Result<DMatrix<Complex64>> {
    let n = n_antennas * n_users;
    if v.len() != 2 * n {
        return Err(Error::DimensionMismatch(format!(
            "channel vector length {} != {}",
            v.len(),
            2 * n
        )));
    }
    Ok(DMatrix::from_fn(n_antennas, n_users, |r, c| {
        let k = c * n_antennas + r;
        Complex64::new(v[k], v[n + k])
    }))
}

/// Orthogonal pilot block.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotMatrix {
    /// `τ × N_t` pilot symbols `Φ`.
    pub phi: DMatrix<Complex64>,
    /// Real expansion of `Φ̃ = Φ ⊗ I_{N_r}`.
    pub phi_tilde_real: DMatrix<f64>,
}

/// Large-scale fading model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChannelModel {
    Rayleigh,
    LogDistance(LargeScaleProfile),
}

/// Log-distance path-loss parameters. Users are uniform on a disc around the
/// base station.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LargeScaleProfile {
    pub path_loss_exponent: f64,
    /// Reference distance `d_0` in meters; closer users are clamped to it.
    pub reference_distance: f64,
    /// Disc radius in meters.
    pub cell_radius: f64,
}

impl Default for LargeScaleProfile {
    fn default() -> Self {
        Self {
            path_loss_exponent: 3.0,
            reference_distance: 10.0,
            cell_radius: 500.0,
        }
    }
}

impl LargeScaleProfile {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(self.path_loss_exponent) || !ok(self.reference_distance) || !ok(self.cell_radius) {
            return Err(Error::InvalidInput(format!("{self:?}")));
        }
        Ok(())
    }

    /// `β = (d_0 / max(d, d_0))^{n_PL}`.
    pub fn beta(&self, distance: f64) -> f64 {
        (self.reference_distance / distance.max(self.reference_distance))
            .powf(self.path_loss_exponent)
    }

    /// `E[β]` for a user uniform on the disc.
    pub fn mean_beta(&self) -> f64 {
        let (d0, r, n) = (
            self.reference_distance,
            self.cell_radius,
            self.path_loss_exponent,
        );
        if d0 >= r {
            return 1.0;
        }
        let inner = (d0 / r).powi(2);
        let outer = if (n - 2.0).abs() < 1e-12 {
            2.0 * d0 * d0 / (r * r) * (r / d0).ln()
        } else {
            2.0 * d0.powf(n) / (r * r) * (r.powf(2.0 - n) - d0.powf(2.0 - n)) / (2.0 - n)
        };
        inner + outer
    }
}

impl ChannelModel {
    /// `E[tr(H H^H)]` of the ensemble.
    pub fn mean_trace(&self, cfg: &SystemConfig) -> f64 {
        let per_user = match self {
            ChannelModel::Rayleigh => 1.0,
            ChannelModel::LogDistance(p) => p.mean_beta(),
        };
        (cfg.n_antennas * cfg.n_users) as f64 * per_user
    }

    pub fn draw<R: Rng + ?Sized>(&self, cfg: &SystemConfig, rng: &mut R) -> ChannelRealization {
        match self {
            ChannelModel::Rayleigh => rayleigh_channel(cfg, rng),
            ChannelModel::LogDistance(p) => pathloss_channel(cfg, p, rng),
        }
    }
}

/// Circularly-symmetric `CN(0, var)` sample.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

fn small_scale<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> DMatrix<Complex64> {
    // column-major fill keeps the draw order fixed
    DMatrix::from_fn(cfg.n_antennas, cfg.n_users, |_, _| complex_normal(rng, 1.0))
}

/// i.i.d. `CN(0, 1)` entries, `β_i = 1`.
pub fn rayleigh_channel<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> ChannelRealization {
    let h = small_scale(cfg, rng);
    ChannelRealization::from_complex(h, vec![1.0; cfg.n_users])
        .expect("finite Gaussian draws")
}

/// Distance of a point uniform on a disc of radius `radius`.
pub fn sample_user_distance<R: Rng + ?Sized>(radius: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    radius * u.sqrt()
}

/// Rayleigh small-scale fading scaled by log-distance path loss per user.
pub fn pathloss_channel<R: Rng + ?Sized>(
    cfg: &SystemConfig,
    profile: &LargeScaleProfile,
    rng: &mut R,
) -> ChannelRealization {
    let betas: Vec<f64> = (0..cfg.n_users)
        .map(|_| profile.beta(sample_user_distance(profile.cell_radius, rng)))
        .collect();
    let mut h = small_scale(cfg, rng);
    for (m, beta) in betas.iter().enumerate() {
        let s = beta.sqrt();
        h.column_mut(m).iter_mut().for_each(|z| *z *= s);
    }
    ChannelRealization::from_complex(h, betas).expect("finite Gaussian draws")
}

/// Real expansion of a complex matrix (same block rule as channels).
fn real_expand(m: &DMatrix<Complex64>) -> DMatrix<f64> {
    complex_to_real_channel(m).expect("finite pilot entries")
}

/// First `N_t` columns of the `τ`-point DFT, each entry of modulus `√σ_x²`.
pub fn orthogonal_pilots(cfg: &SystemConfig) -> Result<PilotMatrix> {
    let (tau, nt, nr) = (cfg.pilot_len, cfg.n_users, cfg.n_antennas);
    if tau < nt {
        return Err(Error::InvalidInput(format!("pilot_len {tau} < n_users {nt}")));
    }
    let amp = cfg.sigma_x2.sqrt();
    let phi = DMatrix::from_fn(tau, nt, |t, m| {
        let ang = -2.0 * PI * ((t * m) % tau) as f64 / tau as f64;
        Complex64::from_polar(amp, ang)
    });
    let eye = DMatrix::<Complex64>::identity(nr, nr);
    let phi_tilde = phi.kronecker(&eye);
    Ok(PilotMatrix {
        phi_tilde_real: real_expand(&phi_tilde),
        phi,
    })
}

/// `σ_n² = σ_x² E[tr(HH^H)] / (N_t N_r 10^{SNR/10})`.
pub fn sigma_n2_for_snr(cfg: &SystemConfig, snr_db: f64, channel_ensemble_mean_trace: f64) -> f64 {
    cfg.sigma_x2 * channel_ensemble_mean_trace
        / ((cfg.n_users * cfg.n_antennas) as f64 * 10f64.powf(snr_db / 10.0))
}

/// QPSK symbols with their Gray labels.
#[derive(Debug, Clone, PartialEq)]
pub struct QpskBlock {
    pub symbols: DVector<Complex64>,
    /// `[bit0, bit1]` per user: bit0 is the real sign, bit1 the imaginary sign
    /// (0 ↦ positive).
    pub bits: Vec<[u8; 2]>,
}

/// Maps a Gray label to `(±1 ± j)√(σ_x²/2)`.
pub fn qpsk_map(bits: [u8; 2], sigma_x2: f64) -> Complex64 {
    let a = (sigma_x2 / 2.0).sqrt();
    let s = |b: u8| if b == 0 { a } else { -a };
    Complex64::new(s(bits[0]), s(bits[1]))
}

/// Uniform QPSK symbols for all users.
pub fn qpsk_source<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> QpskBlock {
    let bits: Vec<[u8; 2]> = (0..cfg.n_users)
        .map(|_| {
            let w: u8 = rng.random_range(0..4);
            [w & 1, (w >> 1) & 1]
        })
        .collect();
    let symbols = DVector::from_iterator(
        cfg.n_users,
        bits.iter().map(|b| qpsk_map(*b, cfg.sigma_x2)),
    );
    QpskBlock { symbols, bits }
}

fn real_noise<R: Rng + ?Sized>(len: usize, var: f64, rng: &mut R) -> DVector<f64> {
    let s = var.sqrt();
    DVector::from_fn(len, |_, _| {
        let g: f64 = StandardNormal.sample(rng);
        s * g
    })
}

/// `y_Rp = Φ̃_R h_R + n_Rp`, real noise variance `σ_n²/2`.
pub fn transmit_pilots<R: Rng + ?Sized>(
    h: &ChannelRealization,
    pilots: &PilotMatrix,
    sigma_n2: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let h_vec = h.vec_real();
    if pilots.phi_tilde_real.ncols() != h_vec.len() {
        return Err(Error::DimensionMismatch(format!(
            "pilot matrix has {} columns, channel vector {}",
            pilots.phi_tilde_real.ncols(),
            h_vec.len()
        )));
    }
    let clean = &pilots.phi_tilde_real * h_vec;
    let noise = real_noise(clean.len(), sigma_n2 / 2.0, rng);
    Ok(clean + noise)
}

/// `y_R = H_R x_R + n_R`, real noise variance `σ_n²/2`.
pub fn transmit_data<R: Rng + ?Sized>(
    h_real: &DMatrix<f64>,
    x_real: &DVector<f64>,
    sigma_n2: f64,
    rng: &mut R,
) -> DVector<f64> {
    let clean = h_real * x_real;
    let noise = real_noise(clean.len(), sigma_n2 / 2.0, rng);
    clean + noise
}
