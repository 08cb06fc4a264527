//! Scenario files, seeded Monte Carlo sweeps and CSV reports.
//!
//! A scenario is a flat `key = value` text file; `#` starts a comment.
//!
//! | key | value | default |
//! |-----|-------|---------|
//! | `n_users` | `N_t` | required |
//! | `n_antennas` | `N_r` | required |
//! | `sigma_x2` | symbol power | `1` |
//! | `channel` | `rayleigh` or `logdistance` | `rayleigh` |
//! | `path_loss_exponent`, `reference_distance`, `cell_radius` | log-distance profile | `3`, `10`, `500` |
//! | `network` | `none`, `random:A`, `greedy:A`, `seqsinr:A`, `full` | required |
//! | `csi` | `perfect`, `estimated[:TAU]`, `outdated:LAMBDA` | `perfect` |
//! | `detector` | `lmmse`, `robust`, `mf` | `lmmse` |
//! | `metric` | `ber`, `mse`, `mse_analytic`, `sum_rate`, `power` | required |
//! | `snr_db` | `a:b:step` or `x,y,...` | required unless `metric = power` |
//! | `n_channels`, `n_noise` | trial counts | `300`, `50` |
//! | `seed` | master seed | `0` |
//! | `paper_n_channels`, `paper_n_noise` | counts used by `--paper-scale` | unset |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::channel::{
    complex_normal, orthogonal_pilots, qpsk_source, sigma_n2_for_snr, transmit_data,
    transmit_pilots, ChannelModel, ChannelRealization, LargeScaleProfile, PilotMatrix,
};
use crate::detector::{
    detect_and_slice, gamma_matrix, lmmse_detector, robust_estimation_detector,
    robust_lambda_detector, bit_errors, GammaMatrix, GammaMode,
};
use crate::error::{Error, Result};
use crate::estimator::{channel_prior, LraLmmseEstimator};
use crate::linalg::CompensatedSum;
use crate::model::{
    build_b, build_b_eff, complex_to_real_channel, complex_to_real_vector, quantize,
    ComparatorNetwork, SystemConfig,
};
use crate::netdesign::NetworkDesign;
use crate::power::{power_table, PowerParams};
use crate::rates::sum_rate_for_channel;
use crate::rng::{aux_rng, trial_stream, Stream};

/// Desk-scale defaults.
pub const DEFAULT_N_CHANNELS: usize = 300;
pub const DEFAULT_N_NOISE: usize = 50;

/// Largest tolerated fraction of skipped trials per SNR point.
pub const MAX_SKIP_FRACTION: f64 = 0.01;

/// Channel knowledge at the receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CsiMode {
    Perfect,
    /// LRA-LMMSE estimate from `τ` pilot slots.
    Estimated(usize),
    /// `H = √λ H_1 + √(1−λ) H_2` with only `H_1` known.
    OutdatedLambda(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorMode {
    Lmmse,
    Robust,
    /// `G = B Ĥ_R`.
    MatchedFilter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Ber,
    /// Channel-estimation squared error with estimated CSI, symbol squared
    /// error otherwise.
    Mse,
    /// Trace of the estimator error correlation.
    MseAnalytic,
    SumRate,
    Power,
}

impl Metric {
    pub fn label(&self) -> &'static str {
        match self {
            Metric::Ber => "ber",
            Metric::Mse => "mse",
            Metric::MseAnalytic => "mse_analytic",
            Metric::SumRate => "sum_rate",
            Metric::Power => "power",
        }
    }
}

/// One experiment: a system, a channel ensemble, a receiver and an SNR grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// `sigma_n2` is overwritten per SNR point; `pilot_len` follows the CSI
    /// mode.
    pub cfg: SystemConfig,
    pub channel: ChannelModel,
    pub network: NetworkDesign,
    pub csi: CsiMode,
    pub detector: DetectorMode,
    pub metric: Metric,
    pub snr_grid_db: Vec<f64>,
    pub n_channels: usize,
    pub n_noise: usize,
    pub master_seed: u64,
    pub paper_n_channels: Option<usize>,
    pub paper_n_noise: Option<usize>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.cfg.validate()?;
        let nr = self.cfg.n_antennas;
        self.network.validate(nr)?;
        if self.n_channels == 0 || self.n_noise == 0 {
            return Err(Error::InvalidInput("trial counts must be positive".into()));
        }
        if self.metric != Metric::Power {
            if self.snr_grid_db.is_empty() {
                return Err(Error::InvalidInput("empty SNR grid".into()));
            }
            if self.snr_grid_db.iter().any(|s| !s.is_finite()) {
                return Err(Error::InvalidInput("non-finite SNR".into()));
            }
            if self.snr_grid_db.len() > u32::MAX as usize || self.n_channels > u32::MAX as usize {
                return Err(Error::InvalidInput("grid or trial count too large".into()));
            }
        }
        if let ChannelModel::LogDistance(p) = &self.channel {
            p.validate()?;
        }
        match self.csi {
            CsiMode::Estimated(tau) => {
                if tau != self.cfg.pilot_len {
                    return Err(Error::InvalidInput(format!(
                        "pilot_len {} differs from csi τ = {tau}",
                        self.cfg.pilot_len
                    )));
                }
                if self.network.needs_csi() {
                    return Err(Error::InvalidRequest(
                        "greedy and seq-SINR designs need the channel before estimation; \
                         use none, random or full with estimated CSI"
                            .into(),
                    ));
                }
            }
            CsiMode::OutdatedLambda(l) => {
                if !(l > 0.0 && l < 1.0) {
                    return Err(Error::InvalidInput(format!("lambda = {l} not in (0, 1)")));
                }
            }
            CsiMode::Perfect => {}
        }
        let bad = |m: &str| Err(Error::InvalidRequest(m.into()));
        match (self.metric, self.csi, self.detector) {
            (Metric::Power, ..) => Ok(()),
            (_, CsiMode::Perfect, DetectorMode::Robust) => {
                bad("robust detector needs estimated or outdated CSI")
            }
            (Metric::MseAnalytic, CsiMode::Perfect | CsiMode::OutdatedLambda(_), _) => {
                bad("mse_analytic needs estimated CSI")
            }
            (Metric::SumRate, CsiMode::OutdatedLambda(_), _) => {
                bad("sum_rate supports perfect or estimated CSI")
            }
            (Metric::Mse, CsiMode::Perfect | CsiMode::OutdatedLambda(_), DetectorMode::MatchedFilter) => {
                bad("symbol MSE is not defined for the unnormalized matched filter")
            }
            _ => Ok(()),
        }
    }

    /// Copy using `paper_n_channels` / `paper_n_noise` where they are set.
    pub fn at_paper_scale(&self) -> Scenario {
        let mut s = self.clone();
        s.n_channels = self.paper_n_channels.unwrap_or(self.n_channels);
        s.n_noise = self.paper_n_noise.unwrap_or(self.n_noise);
        s
    }

    /// Canonical text form; parsing it yields an equal scenario.
    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let c = &self.cfg;
        let _ = writeln!(o, "n_users = {}", c.n_users);
        let _ = writeln!(o, "n_antennas = {}", c.n_antennas);
        let _ = writeln!(o, "sigma_x2 = {}", c.sigma_x2);
        match &self.channel {
            ChannelModel::Rayleigh => o.push_str("channel = rayleigh\n"),
            ChannelModel::LogDistance(p) => {
                o.push_str("channel = logdistance\n");
                let _ = writeln!(o, "path_loss_exponent = {}", p.path_loss_exponent);
                let _ = writeln!(o, "reference_distance = {}", p.reference_distance);
                let _ = writeln!(o, "cell_radius = {}", p.cell_radius);
            }
        }
        let net = match self.network {
            NetworkDesign::None => "none".to_string(),
            NetworkDesign::Random(a) => format!("random:{a}"),
            NetworkDesign::Greedy(a) => format!("greedy:{a}"),
            NetworkDesign::SeqSinr(a) => format!("seqsinr:{a}"),
            NetworkDesign::Full => "full".to_string(),
        };
        let _ = writeln!(o, "network = {net}");
        let csi = match self.csi {
            CsiMode::Perfect => "perfect".to_string(),
            CsiMode::Estimated(t) => format!("estimated:{t}"),
            CsiMode::OutdatedLambda(l) => format!("outdated:{l}"),
        };
        let _ = writeln!(o, "csi = {csi}");
        let det = match self.detector {
            DetectorMode::Lmmse => "lmmse",
            DetectorMode::Robust => "robust",
            DetectorMode::MatchedFilter => "mf",
        };
        let _ = writeln!(o, "detector = {det}");
        let _ = writeln!(o, "metric = {}", self.metric.label());
        if !self.snr_grid_db.is_empty() {
            let grid: Vec<String> = self.snr_grid_db.iter().map(|s| s.to_string()).collect();
            let _ = writeln!(o, "snr_db = {}", grid.join(","));
        }
        let _ = writeln!(o, "n_channels = {}", self.n_channels);
        let _ = writeln!(o, "n_noise = {}", self.n_noise);
        let _ = writeln!(o, "seed = {}", self.master_seed);
        if let Some(n) = self.paper_n_channels {
            let _ = writeln!(o, "paper_n_channels = {n}");
        }
        if let Some(n) = self.paper_n_noise {
            let _ = writeln!(o, "paper_n_noise = {n}");
        }
        o
    }

    /// First 16 hex digits of the SHA-256 of [`Scenario::to_text`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().take(8).fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

const KEYS: &[&str] = &[
    "n_users",
    "n_antennas",
    "sigma_x2",
    "channel",
    "path_loss_exponent",
    "reference_distance",
    "cell_radius",
    "network",
    "csi",
    "detector",
    "metric",
    "snr_db",
    "n_channels",
    "n_noise",
    "seed",
    "paper_n_channels",
    "paper_n_noise",
];

/// Parses `a:b:step` (inclusive) or a comma-separated list.
pub fn parse_snr_grid(s: &str) -> std::result::Result<Vec<f64>, String> {
    let num = |t: &str| {
        t.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("bad number `{}`", t.trim()))
    };
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("range `{s}` is not a:b:step"));
        }
        let (a, b, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if step <= 0.0 || b < a {
            return Err(format!("range `{s}` needs a <= b and step > 0"));
        }
        let n = ((b - a) / step + 1e-9).floor() as usize + 1;
        // round to 1e-9 so 0.1-steps print cleanly
        Ok((0..n)
            .map(|i| ((a + i as f64 * step) * 1e9).round() / 1e9)
            .collect())
    } else {
        s.split(',').map(num).collect()
    }
}

/// Parses scenario text; errors carry the 1-based line number.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let mut kv: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let perr = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| perr(format!("expected `key = value`, got `{line}`")))?;
        let (k, v) = (k.trim(), v.trim());
        let key = KEYS
            .iter()
            .find(|&&known| known == k)
            .ok_or_else(|| perr(format!("unknown key `{k}`")))?;
        if v.is_empty() {
            return Err(perr(format!("empty value for `{k}`")));
        }
        if kv.insert(key, (line_no, v)).is_some() {
            return Err(perr(format!("duplicate key `{k}`")));
        }
    }

    fn get<'a>(kv: &BTreeMap<&str, (usize, &'a str)>, k: &str) -> Result<(usize, &'a str)> {
        kv.get(k).copied().ok_or_else(|| Error::MissingKey(k.to_string()))
    }
    fn parse_as<T: std::str::FromStr>(line: usize, k: &str, v: &str) -> Result<T> {
        v.parse().map_err(|_| Error::Parse {
            line,
            message: format!("bad value `{v}` for `{k}`"),
        })
    }
    fn opt<T: std::str::FromStr>(kv: &BTreeMap<&str, (usize, &str)>, k: &str) -> Result<Option<T>> {
        kv.get(k).map(|&(l, v)| parse_as(l, k, v)).transpose()
    }

    let (l, v) = get(&kv, "n_users")?;
    let n_users: usize = parse_as(l, "n_users", v)?;
    let (l, v) = get(&kv, "n_antennas")?;
    let n_antennas: usize = parse_as(l, "n_antennas", v)?;
    let sigma_x2: f64 = opt(&kv, "sigma_x2")?.unwrap_or(1.0);

    let profile_keys = ["path_loss_exponent", "reference_distance", "cell_radius"];
    let channel = match kv.get("channel").copied().unwrap_or((0, "rayleigh")) {
        (_, "rayleigh") => {
            if let Some(k) = profile_keys.iter().find(|k| kv.contains_key(*k)) {
                let line = kv[k].0;
                return Err(Error::Parse {
                    line,
                    message: format!("`{k}` needs channel = logdistance"),
                });
            }
            ChannelModel::Rayleigh
        }
        (_, "logdistance") => {
            let d = LargeScaleProfile::default();
            ChannelModel::LogDistance(LargeScaleProfile {
                path_loss_exponent: opt(&kv, "path_loss_exponent")?.unwrap_or(d.path_loss_exponent),
                reference_distance: opt(&kv, "reference_distance")?.unwrap_or(d.reference_distance),
                cell_radius: opt(&kv, "cell_radius")?.unwrap_or(d.cell_radius),
            })
        }
        (line, other) => {
            return Err(Error::Parse {
                line,
                message: format!("unknown channel `{other}`"),
            })
        }
    };

    let (l, v) = get(&kv, "network")?;
    let network = match v.split_once(':') {
        None if v == "none" => NetworkDesign::None,
        None if v == "full" => NetworkDesign::Full,
        Some((kind, a)) => {
            let a: usize = parse_as(l, "network", a)?;
            match kind {
                "random" => NetworkDesign::Random(a),
                "greedy" => NetworkDesign::Greedy(a),
                "seqsinr" => NetworkDesign::SeqSinr(a),
                _ => {
                    return Err(Error::Parse {
                        line: l,
                        message: format!("unknown network `{v}`"),
                    })
                }
            }
        }
        None => {
            return Err(Error::Parse {
                line: l,
                message: format!("unknown network `{v}`"),
            })
        }
    };

    let csi = match kv.get("csi").copied() {
        None => CsiMode::Perfect,
        Some((l, v)) => match v.split_once(':') {
            None if v == "perfect" => CsiMode::Perfect,
            None if v == "estimated" => CsiMode::Estimated(n_users),
            Some(("estimated", t)) => CsiMode::Estimated(parse_as(l, "csi", t)?),
            Some(("outdated", lam)) => CsiMode::OutdatedLambda(parse_as(l, "csi", lam)?),
            _ => {
                return Err(Error::Parse {
                    line: l,
                    message: format!("unknown csi `{v}`"),
                })
            }
        },
    };

    let detector = match kv.get("detector").copied().unwrap_or((0, "lmmse")) {
        (_, "lmmse") => DetectorMode::Lmmse,
        (_, "robust") => DetectorMode::Robust,
        (_, "mf") => DetectorMode::MatchedFilter,
        (line, other) => {
            return Err(Error::Parse {
                line,
                message: format!("unknown detector `{other}`"),
            })
        }
    };

    let (l, v) = get(&kv, "metric")?;
    let metric = match v {
        "ber" => Metric::Ber,
        "mse" => Metric::Mse,
        "mse_analytic" => Metric::MseAnalytic,
        "sum_rate" => Metric::SumRate,
        "power" => Metric::Power,
        _ => {
            return Err(Error::Parse {
                line: l,
                message: format!("unknown metric `{v}`"),
            })
        }
    };

    let snr_grid_db = match kv.get("snr_db").copied() {
        Some((line, v)) => parse_snr_grid(v).map_err(|message| Error::Parse { line, message })?,
        None if metric == Metric::Power => Vec::new(),
        None => return Err(Error::MissingKey("snr_db".into())),
    };

    let pilot_len = match csi {
        CsiMode::Estimated(t) => t,
        _ => n_users,
    };
    let cfg = SystemConfig::new(n_users, n_antennas, sigma_x2, 1.0, pilot_len)?;
    let scenario = Scenario {
        cfg,
        channel,
        network,
        csi,
        detector,
        metric,
        snr_grid_db,
        n_channels: opt(&kv, "n_channels")?.unwrap_or(DEFAULT_N_CHANNELS),
        n_noise: opt(&kv, "n_noise")?.unwrap_or(DEFAULT_N_NOISE),
        master_seed: opt(&kv, "seed")?.unwrap_or(0),
        paper_n_channels: opt(&kv, "paper_n_channels")?,
        paper_n_noise: opt(&kv, "paper_n_noise")?,
    };
    scenario.validate()?;
    Ok(scenario)
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    parse_scenario(&std::fs::read_to_string(path)?)
}

/// Result of one channel trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialRecord {
    /// Per-trial metric value (BER of the trial for [`Metric::Ber`]).
    pub value: f64,
    pub bit_errors: u64,
    pub bits: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrialOutcome {
    Done(TrialRecord),
    /// A covariance was singular after jitter.
    Skipped,
}

/// Aggregate of one SNR point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointSummary {
    pub value: f64,
    /// Standard error over channel trials.
    pub stderr: f64,
    pub n_trials: usize,
    pub skipped: usize,
}

/// Reduces trial records in trial order.
pub fn summarize(trials: &[TrialOutcome], metric: Metric) -> PointSummary {
    let done: Vec<&TrialRecord> = trials
        .iter()
        .filter_map(|t| match t {
            TrialOutcome::Done(r) => Some(r),
            TrialOutcome::Skipped => None,
        })
        .collect();
    let n = done.len();
    let skipped = trials.len() - n;
    if n == 0 {
        return PointSummary {
            value: f64::NAN,
            stderr: f64::NAN,
            n_trials: 0,
            skipped,
        };
    }
    let mean: f64 = done.iter().map(|r| r.value).collect::<CompensatedSum>().value() / n as f64;
    let value = if metric == Metric::Ber {
        let errors: u64 = done.iter().map(|r| r.bit_errors).sum();
        let bits: u64 = done.iter().map(|r| r.bits).sum();
        errors as f64 / bits as f64
    } else {
        mean
    };
    let stderr = if n > 1 {
        let ss = done
            .iter()
            .map(|r| (r.value - mean).powi(2))
            .collect::<CompensatedSum>()
            .value();
        (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt()
    } else {
        0.0
    };
    PointSummary {
        value,
        stderr,
        n_trials: n,
        skipped,
    }
}

/// Parts shared by all trials of one SNR point.
struct PointContext {
    cfg: SystemConfig,
    pilots: Option<PilotMatrix>,
    fixed_net: Option<Receiver>,
    gamma_mode: GammaMode,
    /// `Γ` of the unknown part `H_2` for Rayleigh fading.
    outdated_gamma: Option<GammaMatrix>,
}

/// Network-dependent state; for estimated CSI also the estimator.
struct Receiver {
    b: DMatrix<f64>,
    b_eff: Option<DMatrix<f64>>,
    estimator: Option<LraLmmseEstimator>,
    /// `Γ` of the estimation error, when the robust detector is used.
    est_gamma: Option<GammaMatrix>,
}

fn build_receiver(
    s: &Scenario,
    ctx_cfg: &SystemConfig,
    pilots: Option<&PilotMatrix>,
    net: &ComparatorNetwork,
    betas: &[f64],
    gamma_mode: GammaMode,
) -> Result<Receiver> {
    let b = build_b(net);
    let (b_eff, estimator, est_gamma) = match (s.csi, pilots) {
        (CsiMode::Estimated(tau), Some(p)) => {
            let b_eff = build_b_eff(net, tau);
            let prior = channel_prior(ctx_cfg.n_antennas, betas);
            let est = LraLmmseEstimator::new(ctx_cfg, p, &b_eff, &prior, ctx_cfg.sigma_n2)?;
            let g = if s.detector == DetectorMode::Robust && s.metric != Metric::Mse {
                Some(gamma_matrix(&est.err_corr, ctx_cfg, gamma_mode)?)
            } else {
                None
            };
            (Some(b_eff), Some(est), g)
        }
        _ => (None, None, None),
    };
    Ok(Receiver {
        b,
        b_eff,
        estimator,
        est_gamma,
    })
}

fn point_context(s: &Scenario, snr_db: f64) -> Result<PointContext> {
    let sigma_n2 = sigma_n2_for_snr(&s.cfg, snr_db, s.channel.mean_trace(&s.cfg));
    let cfg = s.cfg.with_sigma_n2(sigma_n2);
    let pilots = match s.csi {
        CsiMode::Estimated(_) => Some(orthogonal_pilots(&cfg)?),
        _ => None,
    };
    let gamma_mode = GammaMode::auto(cfg.n_users, s.master_seed);
    let rayleigh = s.channel == ChannelModel::Rayleigh;
    let unit = vec![1.0; cfg.n_users];
    let fixed_net = if s.network.is_fixed() && rayleigh {
        let net = s
            .network
            .design(&DMatrix::zeros(cfg.real_rx(), cfg.real_tx()), &cfg, &mut aux_rng(s.master_seed, 0))?;
        Some(build_receiver(s, &cfg, pilots.as_ref(), &net, &unit, gamma_mode)?)
    } else {
        None
    };
    let outdated_gamma = match (s.csi, s.detector) {
        (CsiMode::OutdatedLambda(_), DetectorMode::Robust) if rayleigh => Some(gamma_matrix(
            &channel_prior(cfg.n_antennas, &unit),
            &cfg,
            gamma_mode,
        )?),
        _ => None,
    };
    Ok(PointContext {
        cfg,
        pilots,
        fixed_net,
        gamma_mode,
        outdated_gamma,
    })
}

/// Same large-scale gains, fresh small-scale fading.
fn redraw_small_scale<R: Rng + ?Sized>(
    h: &ChannelRealization,
    rng: &mut R,
) -> Result<ChannelRealization> {
    let (nr, nt) = h.h_complex.shape();
    let mut h2 = DMatrix::from_fn(nr, nt, |_, _| complex_normal(rng, 1.0));
    for (m, beta) in h.betas.iter().enumerate() {
        let s = beta.sqrt();
        h2.column_mut(m).iter_mut().for_each(|z| *z *= s);
    }
    ChannelRealization::from_complex(h2, h.betas.clone())
}

fn pilot_estimate<R: Rng + ?Sized>(
    truth: &ChannelRealization,
    rx: &Receiver,
    ctx: &PointContext,
    rng: &mut R,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (Some(pilots), Some(b_eff), Some(est)) = (&ctx.pilots, &rx.b_eff, &rx.estimator) else {
        unreachable!("estimated CSI without estimator");
    };
    let y = transmit_pilots(truth, pilots, ctx.cfg.sigma_n2, rng)?;
    let sol = est.estimate(&quantize(&(b_eff * y))?)?;
    let h_hat_r = complex_to_real_channel(&sol.h_hat_complex)?;
    Ok((sol.h_hat_real, h_hat_r))
}

fn run_trial(s: &Scenario, ctx: &PointContext, point: u32, trial: u32) -> Result<TrialRecord> {
    let cfg = &ctx.cfg;
    let seed = s.master_seed;
    let mut chan_rng = trial_stream(seed, Stream::Channel, point, trial);
    let mut design_rng = trial_stream(seed, Stream::Design, point, trial);
    let mut pilot_rng = trial_stream(seed, Stream::Pilot, point, trial);
    let mut data_rng = trial_stream(seed, Stream::Data, point, trial);

    let first = s.channel.draw(cfg, &mut chan_rng);
    let (truth, known_h1) = match s.csi {
        CsiMode::OutdatedLambda(l) => {
            let h2 = redraw_small_scale(&first, &mut chan_rng)?;
            let h = first.h_complex.map(|z| z * l.sqrt()) + h2.h_complex.map(|z| z * (1.0 - l).sqrt());
            (
                ChannelRealization::from_complex(h, first.betas.clone())?,
                Some(first.h_real.clone()),
            )
        }
        _ => (first, None),
    };

    // Channel the receiver designs on before any estimation.
    let design_h = known_h1.as_ref().unwrap_or(&truth.h_real);
    let owned;
    let rx = match &ctx.fixed_net {
        Some(rx) => rx,
        None => {
            // With estimated CSI the design is channel-independent (validated).
            let net = s.network.design(design_h, cfg, &mut design_rng)?;
            owned = build_receiver(s, cfg, ctx.pilots.as_ref(), &net, &truth.betas, ctx.gamma_mode)?;
            &owned
        }
    };

    if s.metric == Metric::MseAnalytic {
        let est = rx.estimator.as_ref().expect("validated");
        return Ok(TrialRecord {
            value: est.analytic_mse,
            bit_errors: 0,
            bits: 0,
        });
    }
    if let (Metric::Mse, CsiMode::Estimated(_)) = (s.metric, s.csi) {
        let hv = truth.vec_real();
        let mut se = CompensatedSum::default();
        for _ in 0..s.n_noise {
            let (h_hat, _) = pilot_estimate(&truth, rx, ctx, &mut pilot_rng)?;
            se.add((&hv - h_hat).norm_squared());
        }
        return Ok(TrialRecord {
            value: se.value() / s.n_noise as f64,
            bit_errors: 0,
            bits: 0,
        });
    }

    // Receiver's channel for detection.
    let known = match s.csi {
        CsiMode::Perfect => truth.h_real.clone(),
        CsiMode::OutdatedLambda(_) => known_h1.clone().expect("outdated"),
        CsiMode::Estimated(_) => pilot_estimate(&truth, rx, ctx, &mut pilot_rng)?.1,
    };
    let b = &rx.b;
    let g = match (s.detector, s.csi) {
        (DetectorMode::MatchedFilter, _) => b * &known,
        (DetectorMode::Lmmse, _) | (DetectorMode::Robust, CsiMode::Perfect) => {
            lmmse_detector(&known, b, cfg)?.g
        }
        (DetectorMode::Robust, CsiMode::OutdatedLambda(l)) => {
            let owned_gamma;
            let gamma = match &ctx.outdated_gamma {
                Some(g) => g,
                None => {
                    owned_gamma = gamma_matrix(
                        &channel_prior(cfg.n_antennas, &truth.betas),
                        cfg,
                        ctx.gamma_mode,
                    )?;
                    &owned_gamma
                }
            };
            robust_lambda_detector(&known, l, gamma, b, cfg)?.g
        }
        (DetectorMode::Robust, CsiMode::Estimated(_)) => {
            let gamma = rx.est_gamma.as_ref().expect("robust estimator gamma");
            robust_estimation_detector(&known, gamma, b, cfg)?.g
        }
    };

    match s.metric {
        Metric::SumRate => Ok(TrialRecord {
            value: sum_rate_for_channel(&truth.h_real, &known, &g, b, cfg)?,
            bit_errors: 0,
            bits: 0,
        }),
        Metric::Ber | Metric::Mse => {
            let mut errors = 0u64;
            let mut bits = 0u64;
            let mut se = CompensatedSum::default();
            for _ in 0..s.n_noise {
                let block = qpsk_source(cfg, &mut data_rng);
                let x = complex_to_real_vector(&block.symbols);
                let y = transmit_data(&truth.h_real, &x, cfg.sigma_n2, &mut data_rng);
                let det = detect_and_slice(&quantize(&(b * y))?, &g)?;
                errors += bit_errors(&det.bits, &block.bits);
                bits += 2 * cfg.n_users as u64;
                se.add((&x - &det.x_hat_real).norm_squared());
            }
            let value = if s.metric == Metric::Ber {
                errors as f64 / bits as f64
            } else {
                se.value() / s.n_noise as f64
            };
            Ok(TrialRecord {
                value,
                bit_errors: errors,
                bits,
            })
        }
        Metric::MseAnalytic | Metric::Power => unreachable!("handled above"),
    }
}

/// All channel trials of SNR point `point`, in trial order.
pub fn run_point_trials(s: &Scenario, point: usize) -> Result<Vec<TrialOutcome>> {
    let snr_db = *s
        .snr_grid_db
        .get(point)
        .ok_or_else(|| Error::InvalidInput(format!("no SNR point {point}")))?;
    let ctx = point_context(s, snr_db)?;
    let p = point as u32;
    (0..s.n_channels as u32)
        .into_par_iter()
        .map(|t| match run_trial(s, &ctx, p, t) {
            Ok(r) => Ok(TrialOutcome::Done(r)),
            Err(Error::Singular(_)) => Ok(TrialOutcome::Skipped),
            Err(e) => Err(e),
        })
        .collect()
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// NaN for power rows.
    pub snr_db: f64,
    pub metric: String,
    pub value: f64,
    pub stderr: f64,
    pub n_trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub scenario_hash: String,
    pub rows: Vec<SweepRow>,
}

/// Runs every SNR point of `s`; see [`run_point_trials`].
pub fn run_sweep(s: &Scenario) -> Result<SweepReport> {
    s.validate()?;
    let scenario_hash = s.hash();
    if s.metric == Metric::Power {
        let alpha = s.network.alpha(s.cfg.n_antennas);
        let rows = power_table(s.cfg.n_antennas, alpha, &PowerParams::default())
            .into_iter()
            .map(|e| SweepRow {
                snr_db: f64::NAN,
                metric: e.label,
                value: e.milliwatts,
                stderr: 0.0,
                n_trials: 0,
                seed: s.master_seed,
            })
            .collect();
        return Ok(SweepReport {
            scenario_hash,
            rows,
        });
    }
    let mut rows = Vec::with_capacity(s.snr_grid_db.len());
    for (p, &snr_db) in s.snr_grid_db.iter().enumerate() {
        let trials = run_point_trials(s, p)?;
        let sum = summarize(&trials, s.metric);
        if sum.skipped as f64 > MAX_SKIP_FRACTION * trials.len() as f64 {
            return Err(Error::SkipBudget {
                skipped: sum.skipped,
                total: trials.len(),
                snr_db,
            });
        }
        rows.push(SweepRow {
            snr_db,
            metric: s.metric.label().to_string(),
            value: sum.value,
            stderr: sum.stderr,
            n_trials: sum.n_trials,
            seed: s.master_seed,
        });
    }
    Ok(SweepReport {
        scenario_hash,
        rows,
    })
}

pub const CSV_HEADER: &str = "snr_db,metric,value,stderr,n_trials,seed,scenario_hash";

/// CSV text; numbers use Rust's shortest round-trip formatting.
pub fn to_csv(report: &SweepReport) -> String {
    let mut o = String::from(CSV_HEADER);
    o.push('\n');
    for r in &report.rows {
        let _ = writeln!(
            o,
            "{},{},{},{},{},{},{}",
            r.snr_db, r.metric, r.value, r.stderr, r.n_trials, r.seed, report.scenario_hash
        );
    }
    o
}

pub fn emit_csv(report: &SweepReport, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_csv(report))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "n_users = 2\nn_antennas = 4\nnetwork = none\nmetric = ber\nsnr_db = 0\n";

    fn tiny(metric: &str, extra: &str) -> Scenario {
        parse_scenario(&format!(
            "n_users = 2\nn_antennas = 4\nnetwork = random:3\nmetric = {metric}\n\
             snr_db = 0,10\nn_channels = 12\nn_noise = 5\nseed = 3\n{extra}"
        ))
        .unwrap()
    }

    #[test]
    fn defaults() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(s.cfg.sigma_x2, 1.0);
        assert_eq!(s.channel, ChannelModel::Rayleigh);
        assert_eq!(s.csi, CsiMode::Perfect);
        assert_eq!(s.detector, DetectorMode::Lmmse);
        assert_eq!((s.n_channels, s.n_noise, s.master_seed), (300, 50, 0));
        assert_eq!(s.snr_grid_db, vec![0.0]);
    }

    #[test]
    fn missing_key_is_named() {
        for key in ["n_users", "n_antennas", "network", "metric", "snr_db"] {
            let text: String = MINIMAL
                .lines()
                .filter(|l| !l.starts_with(key))
                .map(|l| format!("{l}\n"))
                .collect();
            assert_eq!(parse_scenario(&text).unwrap_err(), Error::MissingKey(key.into()));
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let cases = [
            ("# c\nn_users = 2\nbogus = 1\n", 3),
            ("n_users = 2\nn_users = 3\n", 2),
            ("n_users = two\n", 1),
            ("\n\nn_users 2\n", 3),
            ("n_users = 2\nn_antennas = 4\nnetwork = ring:3\nmetric = ber\nsnr_db = 0\n", 3),
            ("n_users = 2\nn_antennas = 4\nnetwork = none\nmetric = ber\nsnr_db = 5:1:1\n", 5),
            ("n_users = 2\ncell_radius = 100\nn_antennas = 4\nnetwork = none\nmetric = ber\nsnr_db = 0\n", 2),
        ];
        for (text, line) in cases {
            match parse_scenario(text) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn snr_grid_forms() {
        assert_eq!(parse_snr_grid("-10:30:10").unwrap(), vec![-10.0, 0.0, 10.0, 20.0, 30.0]);
        assert_eq!(parse_snr_grid("0:1:0.1").unwrap().len(), 11);
        assert_eq!(parse_snr_grid("0:1:0.1").unwrap()[3], 0.3);
        assert_eq!(parse_snr_grid("5, -2.5").unwrap(), vec![5.0, -2.5]);
        assert!(parse_snr_grid("0:1").is_err());
        assert!(parse_snr_grid("0:1:0").is_err());
        assert!(parse_snr_grid("x").is_err());
    }

    #[test]
    fn text_round_trip_preserves_hash() {
        let texts = [
            MINIMAL.to_string(),
            "n_users = 3\nn_antennas = 8\nsigma_x2 = 0.5\nchannel = logdistance\n\
             path_loss_exponent = 3.5\nnetwork = greedy:2\ncsi = outdated:0.4\n\
             detector = robust\nmetric = ber\nsnr_db = -10:30:5\nseed = 18446744073709551615\n\
             paper_n_channels = 2000\npaper_n_noise = 2000\n"
                .to_string(),
            "n_users = 4\nn_antennas = 16\nnetwork = random:32\ncsi = estimated:6\nmetric = mse\nsnr_db = 0.1\n"
                .to_string(),
            "n_users = 4\nn_antennas = 16\nnetwork = random:32\nmetric = power\n".to_string(),
        ];
        for t in texts {
            let s = parse_scenario(&t).unwrap();
            let back = parse_scenario(&s.to_text()).unwrap();
            assert_eq!(back, s);
            assert_eq!(back.hash(), s.hash());
            assert_eq!(s.hash().len(), 16);
        }
        let a = parse_scenario(MINIMAL).unwrap();
        let mut b = a.clone();
        b.master_seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn invalid_combinations_rejected() {
        let base = "n_users = 2\nn_antennas = 4\nmetric = ber\nsnr_db = 0\n";
        for extra in [
            "network = greedy:2\ncsi = estimated\n",
            "network = none\ndetector = robust\n",
            "network = random:29\n",
            "network = none\ncsi = outdated:1\n",
            "network = none\ncsi = estimated:1\n",
            "network = none\nn_noise = 0\n",
        ] {
            assert!(parse_scenario(&format!("{base}{extra}")).is_err(), "{extra}");
        }
        let s = "n_users = 2\nn_antennas = 4\nnetwork = none\nmetric = mse_analytic\nsnr_db = 0\n";
        assert!(matches!(parse_scenario(s), Err(Error::InvalidRequest(_))));
    }

    #[test]
    fn paper_scale_swaps_counts() {
        let s = tiny("ber", "paper_n_channels = 2000\n").at_paper_scale();
        assert_eq!((s.n_channels, s.n_noise), (2000, 5));
    }

    #[test]
    fn csv_format_golden() {
        let report = SweepReport {
            scenario_hash: "0123456789abcdef".into(),
            rows: vec![
                SweepRow {
                    snr_db: -2.5,
                    metric: "ber".into(),
                    value: 1e-5,
                    stderr: 0.0,
                    n_trials: 300,
                    seed: 7,
                },
                SweepRow {
                    snr_db: f64::NAN,
                    metric: "power_1bit_mw".into(),
                    value: 168.9,
                    stderr: 0.0,
                    n_trials: 0,
                    seed: 7,
                },
            ],
        };
        assert_eq!(
            to_csv(&report),
            "snr_db,metric,value,stderr,n_trials,seed,scenario_hash\n\
             -2.5,ber,0.00001,0,300,7,0123456789abcdef\n\
             NaN,power_1bit_mw,168.9,0,0,7,0123456789abcdef\n"
        );
    }

    #[test]
    fn sweep_is_deterministic_across_thread_counts() {
        for (metric, extra) in [
            ("ber", ""),
            ("mse", ""),
            ("sum_rate", ""),
            ("mse", "csi = estimated\n"),
            ("ber", "csi = estimated\ndetector = robust\n"),
            ("ber", "csi = outdated:0.6\ndetector = robust\nchannel = logdistance\n"),
        ] {
            let s = tiny(metric, extra);
            let run = |threads| {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .unwrap()
                    .install(|| to_csv(&run_sweep(&s).unwrap()))
            };
            let a = run(1);
            assert_eq!(a, run(3), "{metric} {extra}");
            assert_eq!(a, run(1));
            assert_eq!(a.lines().count(), 3);
        }
    }

    #[test]
    fn ber_counts_are_consistent() {
        let s = tiny("ber", "");
        let trials = run_point_trials(&s, 0).unwrap();
        assert_eq!(trials.len(), 12);
        for t in &trials {
            let TrialOutcome::Done(r) = t else { panic!("skipped") };
            assert_eq!(r.bits, 5 * 4);
            assert!(r.bit_errors <= r.bits);
            assert_eq!(r.value, r.bit_errors as f64 / r.bits as f64);
        }
        let sum = summarize(&trials, Metric::Ber);
        assert!(sum.stderr >= 0.0 && (0.0..=1.0).contains(&sum.value));
    }

    #[test]
    fn summarize_ber_pools_counts() {
        let rec = |e, b| TrialOutcome::Done(TrialRecord {
            value: e as f64 / b as f64,
            bit_errors: e,
            bits: b,
        });
        let s = summarize(&[rec(1, 10), rec(3, 10), TrialOutcome::Skipped], Metric::Ber);
        assert_eq!(s.value, 0.2);
        assert_eq!((s.n_trials, s.skipped), (2, 1));
        // sample sd of {0.1, 0.3} is √0.02, over √2
        assert!((s.stderr - 0.1).abs() < 1e-15);
    }

    #[test]
    fn power_rows() {
        let s = parse_scenario("n_users = 4\nn_antennas = 16\nnetwork = random:32\nmetric = power\n").unwrap();
        let r = run_sweep(&s).unwrap();
        assert_eq!(r.rows.len(), 11);
        assert_eq!(r.rows[1].metric, "power_cn32_mw");
        assert!((r.rows[1].value - 171.3).abs() < 1e-9);
        assert!(r.rows.iter().all(|row| row.snr_db.is_nan()));
    }
}
