//! Bussgang decomposition for sign quantization of Gaussian inputs: arcsine
//! law, gain matrices and covariance assembly.

use std::f64::consts::{FRAC_2_PI, PI};

use nalgebra::{DMatrix, DVector};

use crate::channel::PilotMatrix;
use crate::error::{Error, Result};
use crate::model::SystemConfig;

/// Second-order statistics of one quantized block.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSet {
    /// Unquantized covariance `C_zR`.
    pub c_zr: DMatrix<f64>,
    /// Diagonal of `K_R = diag(C_zR)^{-1/2}`.
    pub k_r: DVector<f64>,
    /// Quantized covariance `C_zQ`.
    pub c_zq: DMatrix<f64>,
    /// Diagonal of `A_R = √(2/π) K_R`.
    pub a_r: DVector<f64>,
}

/// Which arcsine evaluation to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ArcsineMode {
    #[default]
    Exact,
    /// First-order expansion `(2/π)(K C K + (π/2 − 1) I)`; analysis only.
    FirstOrder,
}

impl CovarianceSet {
    pub fn new(c_zr: DMatrix<f64>, mode: ArcsineMode) -> Result<Self> {
        let k_r = inv_sqrt_diag(&c_zr)?;
        let c_zq = match mode {
            ArcsineMode::Exact => arcsine_from_k(&c_zr, &k_r),
            ArcsineMode::FirstOrder => first_order_from_k(&c_zr, &k_r),
        };
        let a_r = &k_r * FRAC_2_PI.sqrt();
        Ok(Self {
            c_zr,
            k_r,
            c_zq,
            a_r,
        })
    }

    /// `C_nq = C_zQ − A C_zR A^T`.
    pub fn quantization_noise(&self) -> DMatrix<f64> {
        quantization_noise_covariance(&self.c_zq, &self.a_r, &self.c_zr)
    }
}

fn inv_sqrt_diag(c: &DMatrix<f64>) -> Result<DVector<f64>> {
    if !c.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "covariance is {}x{}",
            c.nrows(),
            c.ncols()
        )));
    }
    let d = c.diagonal();
    if let Some(bad) = d.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::Singular(format!("covariance diagonal entry {bad}")));
    }
    Ok(d.map(|v| 1.0 / v.sqrt()))
}

fn arcsine_from_k(c: &DMatrix<f64>, k: &DVector<f64>) -> DMatrix<f64> {
    let n = c.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            FRAC_2_PI * (k[i] * c[(i, j)] * k[j]).clamp(-1.0, 1.0).asin()
        }
    })
}

fn first_order_from_k(c: &DMatrix<f64>, k: &DVector<f64>) -> DMatrix<f64> {
    let n = c.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        let r = k[i] * c[(i, j)] * k[j];
        if i == j {
            FRAC_2_PI * (r + (PI / 2.0 - 1.0))
        } else {
            FRAC_2_PI * r
        }
    })
}

/// `C_zQ = (2/π) asin(K C K)`; unit diagonal.
pub fn arcsine_correlation(c_zr: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = inv_sqrt_diag(c_zr)?;
    Ok(arcsine_from_k(c_zr, &k))
}

/// First-order approximation of [`arcsine_correlation`].
pub fn arcsine_correlation_first_order(c_zr: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = inv_sqrt_diag(c_zr)?;
    Ok(first_order_from_k(c_zr, &k))
}

/// Diagonal of `A = √(2/π) diag(C)^{-1/2}`.
pub fn bussgang_gain(c_zr: &DMatrix<f64>) -> Result<DVector<f64>> {
    Ok(inv_sqrt_diag(c_zr)? * FRAC_2_PI.sqrt())
}

/// `C_zRp = B_eff (Φ̃_R R_h Φ̃_R^T + ½σ_n² I) B_eff^T`.
pub fn pilot_covariance(
    pilots: &PilotMatrix,
    b_eff: &DMatrix<f64>,
    r_h: &DMatrix<f64>,
    sigma_n2: f64,
) -> Result<DMatrix<f64>> {
    let phi = &pilots.phi_tilde_real;
    if r_h.nrows() != phi.ncols() || r_h.ncols() != phi.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "R_h is {}x{}, pilot matrix has {} columns",
            r_h.nrows(),
            r_h.ncols(),
            phi.ncols()
        )));
    }
    if b_eff.ncols() != phi.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "B_eff has {} columns, pilot vector length {}",
            b_eff.ncols(),
            phi.nrows()
        )));
    }
    let mut c_y = phi * r_h * phi.transpose();
    for i in 0..c_y.nrows() {
        c_y[(i, i)] += 0.5 * sigma_n2;
    }
    let mut out = b_eff * c_y * b_eff.transpose();
    crate::linalg::symmetrize(&mut out);
    Ok(out)
}

/// Scalar pilot Bussgang gain `√((2/π)·2/(N_tσ_x² + σ_n²))` for
/// `R_h = ½I`, `τ = N_t` and orthogonal pilots.
pub fn closed_form_pilot_gain(cfg: &SystemConfig) -> f64 {
    (FRAC_2_PI * 2.0 / (cfg.n_users as f64 * cfg.sigma_x2 + cfg.sigma_n2)).sqrt()
}

/// `C_zR = ½σ_x² B H_R H_R^T B^T + ½σ_n² B B^T`.
pub fn data_covariance(h_r: &DMatrix<f64>, b: &DMatrix<f64>, cfg: &SystemConfig) -> DMatrix<f64> {
    let bh = b * h_r;
    let mut c = (&bh * bh.transpose()) * (0.5 * cfg.sigma_x2)
        + (b * b.transpose()) * (0.5 * cfg.sigma_n2);
    crate::linalg::symmetrize(&mut c);
    c
}

/// `C_nq = C_zQ − A C_zR A^T` with diagonal `A`.
pub fn quantization_noise_covariance(
    c_zq: &DMatrix<f64>,
    a_r: &DVector<f64>,
    c_zr: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = c_zq.nrows();
    DMatrix::from_fn(n, n, |i, j| c_zq[(i, j)] - a_r[i] * c_zr[(i, j)] * a_r[j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{orthogonal_pilots, qpsk_source, rayleigh_channel, transmit_data};
    use crate::linalg::min_eigenvalue;
    use crate::model::{
        build_b, build_b_eff, complex_to_real_vector, fully_connected_network, random_network,
    };
    use crate::rng::trial_rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_psd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = trial_rng(seed, 0, 0);
        let a: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn arcsine_identity_and_half() {
        let eye = DMatrix::<f64>::identity(3, 3);
        assert_eq!(arcsine_correlation(&eye).unwrap(), eye);
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let q = arcsine_correlation(&c).unwrap();
        assert!((q[(0, 1)] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn arcsine_rejects_nonpositive_diagonal() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(arcsine_correlation(&c), Err(Error::Singular(_))));
    }

    #[test]
    fn arcsine_clamps_rounding() {
        // Perfectly correlated pair: K C K off-diagonal may exceed 1 by an ulp.
        let v = 0.1f64;
        let c = DMatrix::from_row_slice(2, 2, &[v * v, v * v * (1.0 + 1e-16), v * v, v * v]);
        let q = arcsine_correlation(&c).unwrap();
        assert!(q.iter().all(|x| x.is_finite() && x.abs() <= 1.0));
    }

    #[test]
    fn first_order_has_unit_diagonal() {
        let c = random_psd(4, 3);
        let q = arcsine_correlation_first_order(&c).unwrap();
        for i in 0..4 {
            assert!((q[(i, i)] - 1.0).abs() < 1e-12);
        }
        let cs = CovarianceSet::new(c, ArcsineMode::FirstOrder).unwrap();
        assert_eq!(cs.c_zq, q);
    }

    #[test]
    fn gain_values() {
        let a = bussgang_gain(&DMatrix::identity(2, 2)).unwrap();
        assert!((a[0] - 0.797_884_560_802_865_4).abs() < 1e-15);
        let a4 = bussgang_gain(&(DMatrix::identity(2, 2) * 4.0)).unwrap();
        assert!((a4[1] - FRAC_2_PI.sqrt() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn pilot_covariance_rayleigh_closed_form() {
        let cfg = SystemConfig::new(2, 3, 1.0, 0.3, 2).unwrap();
        let p = orthogonal_pilots(&cfg).unwrap();
        let net = random_network(3, 5, &mut trial_rng(1, 0, 0)).unwrap();
        let beff = build_b_eff(&net, 2);
        let r = DMatrix::identity(12, 12) * 0.5;
        let c = pilot_covariance(&p, &beff, &r, 0.3).unwrap();
        let want = (&beff * beff.transpose()) * (0.5 * (2.0 + 0.3));
        assert!((&c - want).amax() < 1e-12);

        let c0 = pilot_covariance(&p, &build_b_eff(&net_empty(3), 2), &r, 0.3).unwrap();
        assert!((c0 - DMatrix::identity(12, 12) * 1.15).amax() < 1e-12);

        // Arcsine form for this setting: C_zQp = (2/π) asin(B_eff B_eff^T).
        let q = arcsine_correlation(&c).unwrap();
        let bb = &beff * beff.transpose();
        let want = bb.map(|v| FRAC_2_PI * v.clamp(-1.0, 1.0).asin());
        assert!((q - want).amax() < 1e-12);
    }

    fn net_empty(nr: usize) -> crate::model::ComparatorNetwork {
        crate::model::ComparatorNetwork::empty(nr)
    }

    #[test]
    fn pilot_covariance_generic_triple_product() {
        let cfg = SystemConfig::new(1, 2, 1.0, 0.5, 2).unwrap();
        let p = orthogonal_pilots(&cfg).unwrap();
        let beff = build_b_eff(&fully_connected_network(2), 2);
        let r = random_psd(4, 9);
        let c = pilot_covariance(&p, &beff, &r, 0.5).unwrap();
        // naive loops
        let phi = &p.phi_tilde_real;
        let (m, k) = phi.shape();
        let mut inner = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                let mut s = 0.0;
                for a in 0..k {
                    for b in 0..k {
                        s += phi[(i, a)] * r[(a, b)] * phi[(j, b)];
                    }
                }
                inner[(i, j)] = s + if i == j { 0.25 } else { 0.0 };
            }
        }
        let n = beff.nrows();
        let mut naive = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for a in 0..m {
                    for b in 0..m {
                        s += beff[(i, a)] * inner[(a, b)] * beff[(j, b)];
                    }
                }
                naive[(i, j)] = s;
            }
        }
        assert!((c - naive).amax() < 1e-12);
        assert!(pilot_covariance(&p, &beff, &DMatrix::identity(3, 3), 0.5).is_err());
    }

    #[test]
    fn closed_form_gain_value_and_consistency() {
        let cfg = SystemConfig::new(2, 3, 1.0, 1.0, 2).unwrap();
        let g = closed_form_pilot_gain(&cfg);
        assert!((g - (4.0 / (3.0 * PI)).sqrt()).abs() < 1e-15);
        assert!((g - 0.65147).abs() < 1e-5);
        let big = SystemConfig::new(2, 3, 1.0, 1e14, 2).unwrap();
        assert!(closed_form_pilot_gain(&big) < 1e-6);

        let p = orthogonal_pilots(&cfg).unwrap();
        let beff = build_b_eff(&net_empty(3), 2);
        let c = pilot_covariance(&p, &beff, &(DMatrix::identity(12, 12) * 0.5), 1.0).unwrap();
        let a = bussgang_gain(&c).unwrap();
        assert!(a.iter().all(|v| (v - g).abs() < 1e-10));
    }

    #[test]
    fn data_covariance_simple_cases() {
        let cfg = SystemConfig::new(1, 2, 1.0, 0.4, 1).unwrap();
        let b = build_b(&fully_connected_network(2));
        let c = data_covariance(&DMatrix::zeros(4, 2), &b, &cfg);
        assert!((c - (&b * b.transpose()) * 0.2).amax() < 1e-15);

        let h = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let c = data_covariance(&h, &DMatrix::identity(4, 4), &cfg);
        let want = &h * h.transpose() * 0.5 + DMatrix::identity(4, 4) * 0.2;
        assert!((c - want).amax() < 1e-15);
    }

    #[test]
    fn data_covariance_monte_carlo() {
        let cfg = SystemConfig::new(2, 2, 1.0, 0.5, 2).unwrap();
        let mut rng = trial_rng(21, 0, 0);
        let h = rayleigh_channel(&cfg, &mut rng);
        let b = build_b(&fully_connected_network(2));
        let c = data_covariance(&h.h_real, &b, &cfg);
        let n = 100_000;
        let mut acc = DMatrix::<f64>::zeros(10, 10);
        for _ in 0..n {
            let x = complex_to_real_vector(&qpsk_source(&cfg, &mut rng).symbols);
            let z = &b * transmit_data(&h.h_real, &x, cfg.sigma_n2, &mut rng);
            acc += &z * z.transpose();
        }
        acc /= n as f64;
        let scale = c.diagonal().max();
        assert!((acc - &c).amax() < 0.02 * scale);
    }

    #[test]
    fn quantization_noise_identity_and_diagonal() {
        let eye = DMatrix::<f64>::identity(3, 3);
        let cs = CovarianceSet::new(eye.clone(), ArcsineMode::Exact).unwrap();
        assert!((cs.quantization_noise() - eye * (1.0 - FRAC_2_PI)).amax() < 1e-15);
        for seed in 0..100 {
            let c = random_psd(5, seed);
            let cs = CovarianceSet::new(c, ArcsineMode::Exact).unwrap();
            let nq = cs.quantization_noise();
            for i in 0..5 {
                assert!((nq[(i, i)] - (1.0 - FRAC_2_PI)).abs() < 1e-12);
                assert!((cs.c_zq[(i, i)] - 1.0).abs() < 1e-10);
            }
            assert!(min_eigenvalue(&nq) > -1e-9);
        }
    }
}
