//! Receiver power model for 1-bit, multi-bit and comparator-network front
//! ends. Inputs are SI, outputs milliwatts.

use crate::error::{Error, Result};

/// Component powers (mW), ADC figure of merit (J per conversion step) and
/// Nyquist rate (Hz).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerParams {
    pub p_lo: f64,
    pub p_lna: f64,
    pub p_h: f64,
    pub p_m: f64,
    pub p_agc: f64,
    pub fom: f64,
    pub f_nyquist: f64,
}

impl Default for PowerParams {
    fn default() -> Self {
        Self {
            p_lo: 22.5,
            p_lna: 5.4,
            p_h: 3.0,
            p_m: 0.3,
            p_agc: 2.0,
            fom: 15e-15,
            f_nyquist: 2.5e9,
        }
    }
}

impl PowerParams {
    /// RF chain shared by all architectures.
    fn front_end(&self, n_antennas: usize) -> f64 {
        self.p_lo + n_antennas as f64 * (self.p_lna + self.p_h + 2.0 * self.p_m)
    }

    /// One 1-bit conversion at `2 f_Nyquist`, in mW.
    fn one_bit_adc(&self) -> f64 {
        self.fom * 2.0 * self.f_nyquist * 1e3
    }
}

/// `P_LO + N_r(P_LNA + P_H + 2P_M) + 2N_r·FOM·2f_Nyquist`.
pub fn p_one_bit(n_antennas: usize, params: &PowerParams) -> f64 {
    params.front_end(n_antennas) + 2.0 * n_antennas as f64 * params.one_bit_adc()
}

/// `P_LO + N_r(P_LNA + P_H + 2P_M) + 2N_r(P_AGC + FOM·2^q·f_Nyquist)`.
pub fn p_traditional(n_antennas: usize, q_bits: u32, params: &PowerParams) -> Result<f64> {
    if q_bits < 1 {
        return Err(Error::InvalidInput(format!("q = {q_bits} bits")));
    }
    let adc = params.fom * 2f64.powi(q_bits as i32) * params.f_nyquist * 1e3;
    Ok(params.front_end(n_antennas) + 2.0 * n_antennas as f64 * (params.p_agc + adc))
}

/// `P_LO + N_r(P_LNA + P_H + 2P_M) + (2N_r + α)·FOM·2f_Nyquist`.
pub fn p_comparator_network(n_antennas: usize, alpha: usize, params: &PowerParams) -> f64 {
    params.front_end(n_antennas) + (2 * n_antennas + alpha) as f64 * params.one_bit_adc()
}

/// One row of the architecture comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerEntry {
    pub label: String,
    pub milliwatts: f64,
}

/// 1-bit, comparator network with `alpha` comparators and `q = 2..=10` bits.
pub fn power_table(n_antennas: usize, alpha: usize, params: &PowerParams) -> Vec<PowerEntry> {
    let mut rows = vec![
        PowerEntry {
            label: "power_1bit_mw".into(),
            milliwatts: p_one_bit(n_antennas, params),
        },
        PowerEntry {
            label: format!("power_cn{alpha}_mw"),
            milliwatts: p_comparator_network(n_antennas, alpha, params),
        },
    ];
    for q in 2..=10 {
        rows.push(PowerEntry {
            label: format!("power_{q}bit_mw"),
            milliwatts: p_traditional(n_antennas, q, params).expect("q >= 2"),
        });
    }
    rows
}
