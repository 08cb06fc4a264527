//! Comparator-network design: per-stream MSE, virtual SINR, greedy MSE search
//! and sequential SINR search.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_2_PI};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::detector::lmmse_detector;
use crate::error::{Error, Result};
use crate::linalg::SpdFactor;
use crate::model::{
    build_b, build_b_prime, full_alpha, fully_connected_network, random_network,
    ComparatorNetwork, SystemConfig,
};

/// Per-stream MSE of the current network and the SINR table of all
/// candidate comparators.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamMetrics {
    pub mse_per_stream: DVector<f64>,
    /// `α_f × 2N_t`, rows in lexicographic pair order.
    pub sinr_table: DMatrix<f64>,
}

pub fn stream_metrics(
    h_r: &DMatrix<f64>,
    net: &ComparatorNetwork,
    cfg: &SystemConfig,
) -> Result<StreamMetrics> {
    let full = fully_connected_network(net.n_antennas());
    Ok(StreamMetrics {
        mse_per_stream: per_stream_mse(h_r, &build_b(net), cfg)?,
        sinr_table: virtual_sinr(h_r, &build_b_prime(&full), cfg),
    })
}

/// `SINR_{l,k} = ½σ_x²|[B′H_R]_{lk}|² / (½σ_x² Σ_{j≠k}|[B′H_R]_{lj}|² + σ_n²)`.
pub fn virtual_sinr(h_r: &DMatrix<f64>, b_prime: &DMatrix<f64>, cfg: &SystemConfig) -> DMatrix<f64> {
    let bh = b_prime * h_r;
    let half = 0.5 * cfg.sigma_x2;
    DMatrix::from_fn(bh.nrows(), bh.ncols(), |l, k| {
        let row_power: f64 = bh.row(l).iter().map(|v| v * v).sum();
        let own = bh[(l, k)] * bh[(l, k)];
        half * own / (half * (row_power - own).max(0.0) + cfg.sigma_n2)
    })
}

/// Diagonal of `G^T C_zQ G − 2G^T C_zQx + C_x` at the LRA-LMMSE filter, i.e.
/// `σ_x²/2 − diag(C_zQx^T C_zQ^{-1} C_zQx)`.
pub fn per_stream_mse(h_r: &DMatrix<f64>, b: &DMatrix<f64>, cfg: &SystemConfig) -> Result<DVector<f64>> {
    let d = lmmse_detector(h_r, b, cfg)?;
    Ok(DVector::from_fn(d.g.ncols(), |k, _| {
        0.5 * cfg.sigma_x2 - d.c_zqx.column(k).dot(&d.g.column(k))
    }))
}

/// Total linear-model MSE `E‖x_R − G^T z_Q‖²` of a network.
pub fn total_mse(h_r: &DMatrix<f64>, net: &ComparatorNetwork, cfg: &SystemConfig) -> Result<f64> {
    Ok(per_stream_mse(h_r, &build_b(net), cfg)?.sum())
}

/// Outcome of a greedy search together with its acceptance history.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyTrace {
    pub network: ComparatorNetwork,
    /// MSE of the lexicographic initialization.
    pub initial_mse: f64,
    /// `l_min` after every accepted swap.
    pub accepted: Vec<f64>,
}

impl GreedyTrace {
    pub fn final_mse(&self) -> f64 {
        self.accepted.last().copied().unwrap_or(self.initial_mse)
    }
}

fn check_alpha(net_size: usize, alpha_p: usize) -> Result<()> {
    if alpha_p > net_size {
        return Err(Error::InvalidRequest(format!(
            "alpha_p = {alpha_p} exceeds alpha_f = {net_size}"
        )));
    }
    Ok(())
}

/// Greedy MSE search.
///
/// Starts from the first `alpha_p` lexicographic pairs. For every slot, each
/// candidate pair not in the network replaces the slot's pair if that lowers
/// the linear-model MSE below the incumbent; ties (within a relative `1e-12`)
/// keep the incumbent.
pub fn greedy_mse_search(
    h_r: &DMatrix<f64>,
    alpha_p: usize,
    cfg: &SystemConfig,
) -> Result<ComparatorNetwork> {
    Ok(greedy_mse_search_traced(h_r, alpha_p, cfg)?.network)
}

/// Statistics of the rows a search can pick, evaluated once per channel.
struct RowStats {
    nr2: usize,
    pairs: Vec<(usize, usize)>,
    /// `C_y = ½σ_x² H H^T + ½σ_n² I`.
    c_y: DMatrix<f64>,
    /// `C_y b_l` for every candidate pair, one column each.
    c_y_b: DMatrix<f64>,
    /// `diag(C_zR)^{-1/2}`: identity rows first, then candidate pairs.
    k: Vec<f64>,
    /// `C_zQx` rows for the same ordering.
    q: DMatrix<f64>,
}

/// Relative margin below which two MSE values count as a tie. Pairs related
/// by the rotation `y ↦ j·y` give identical MSE, so exact ties are common.
const TIE_REL: f64 = 1e-12;

fn improves(l: f64, l_min: f64) -> bool {
    l < l_min - TIE_REL * l_min.abs()
}

/// Row identifier: `< nr2` is an identity row, otherwise `nr2 + pair index`.
type RowId = usize;

impl RowStats {
    fn new(h_r: &DMatrix<f64>, cfg: &SystemConfig) -> Self {
        let nr2 = cfg.real_rx();
        let pairs = fully_connected_network(cfg.n_antennas).pairs().to_vec();
        let mut c_y = h_r * h_r.transpose() * (0.5 * cfg.sigma_x2);
        for i in 0..nr2 {
            c_y[(i, i)] += 0.5 * cfg.sigma_n2;
        }
        let f = h_r * (0.5 * cfg.sigma_x2);
        let c_y_b = DMatrix::from_fn(nr2, pairs.len(), |r, l| {
            let (i, j) = pairs[l];
            (c_y[(r, i)] - c_y[(r, j)]) * FRAC_1_SQRT_2
        });
        let scale = FRAC_2_PI.sqrt();
        let mut k = Vec::with_capacity(nr2 + pairs.len());
        let mut q = DMatrix::zeros(nr2 + pairs.len(), f.ncols());
        for m in 0..nr2 {
            let km = 1.0 / c_y[(m, m)].sqrt();
            k.push(km);
            q.row_mut(m).copy_from(&(f.row(m) * (scale * km)));
        }
        for (l, &(i, j)) in pairs.iter().enumerate() {
            let var = (c_y[(i, i)] + c_y[(j, j)] - 2.0 * c_y[(i, j)]) * 0.5;
            let kl = 1.0 / var.sqrt();
            k.push(kl);
            let diff = (f.row(i) - f.row(j)) * (FRAC_1_SQRT_2 * scale * kl);
            q.row_mut(nr2 + l).copy_from(&diff);
        }
        Self {
            nr2,
            pairs,
            c_y,
            c_y_b,
            k,
            q,
        }
    }

    /// `u^T C_y v` for two rows.
    fn inner(&self, u: RowId, v: RowId) -> f64 {
        let n = self.nr2;
        match (u < n, v < n) {
            (true, true) => self.c_y[(u, v)],
            (true, false) => self.c_y_b[(u, v - n)],
            (false, true) => self.c_y_b[(v, u - n)],
            (false, false) => {
                let (i, j) = self.pairs[v - n];
                (self.c_y_b[(i, u - n)] - self.c_y_b[(j, u - n)]) * FRAC_1_SQRT_2
            }
        }
    }

    /// `[C_zQ]_{uv}` by the arcsine law.
    fn c_zq(&self, u: RowId, v: RowId) -> f64 {
        if u == v {
            return 1.0;
        }
        let rho = self.k[u] * self.k[v] * self.inner(u, v);
        FRAC_2_PI * rho.clamp(-1.0, 1.0).asin()
    }
}

/// Greedy MSE search that also reports the MSE history.
///
/// For a fixed slot the remaining rows are frozen, so each candidate's MSE
/// follows from one Schur complement against the frozen covariance.
pub fn greedy_mse_search_traced(
    h_r: &DMatrix<f64>,
    alpha_p: usize,
    cfg: &SystemConfig,
) -> Result<GreedyTrace> {
    let alpha_f = full_alpha(cfg.n_antennas);
    check_alpha(alpha_f, alpha_p)?;
    let st = RowStats::new(h_r, cfg);
    let nr2 = st.nr2;
    let c_x_trace = 0.5 * cfg.sigma_x2 * cfg.real_tx() as f64;

    let mut current: Vec<usize> = (0..alpha_p).collect();
    let mut in_net = vec![false; alpha_f];
    current.iter().for_each(|&l| in_net[l] = true);

    let net_of = |cur: &[usize]| {
        ComparatorNetwork::new(cfg.n_antennas, cur.iter().map(|&l| st.pairs[l]).collect())
    };
    let initial_mse = total_mse(h_r, &net_of(&current)?, cfg)?;
    let mut l_min = initial_mse;
    let mut accepted = Vec::new();

    for slot in 0..alpha_p {
        let frozen: Vec<RowId> = (0..nr2)
            .chain(
                current
                    .iter()
                    .enumerate()
                    .filter(|(s, _)| *s != slot)
                    .map(|(_, &l)| nr2 + l),
            )
            .collect();
        let n = frozen.len();
        let m = DMatrix::from_fn(n, n, |a, b| st.c_zq(frozen[a], frozen[b]));
        let p = DMatrix::from_fn(n, st.q.ncols(), |a, k| st.q[(frozen[a], k)]);
        let factor = SpdFactor::new(&m, "frozen C_zQ")?;
        let y = factor.solve(&p);
        let frozen_mse = c_x_trace - p.dot(&y);

        for cand in 0..alpha_f {
            if in_net[cand] {
                continue;
            }
            let id = nr2 + cand;
            let v = DVector::from_fn(n, |a, _| st.c_zq(frozen[a], id));
            let w = factor.half_solve_vec(&v);
            let s = 1.0 - w.norm_squared();
            let u = st.q.row(id).transpose() - y.tr_mul(&v);
            let l = if s > 1e-12 {
                frozen_mse - u.norm_squared() / s
            } else {
                frozen_mse
            };
            if improves(l, l_min) {
                in_net[current[slot]] = false;
                in_net[cand] = true;
                current[slot] = cand;
                l_min = l;
                accepted.push(l);
            }
        }
    }
    Ok(GreedyTrace {
        network: net_of(&current)?,
        initial_mse,
        accepted,
    })
}

/// Greedy search evaluating every candidate MSE from scratch. Slow; kept as
/// the reference for [`greedy_mse_search`].
pub fn greedy_mse_search_reference(
    h_r: &DMatrix<f64>,
    alpha_p: usize,
    cfg: &SystemConfig,
) -> Result<GreedyTrace> {
    let full = fully_connected_network(cfg.n_antennas);
    let all = full.pairs();
    check_alpha(all.len(), alpha_p)?;
    let mut current: Vec<(usize, usize)> = all[..alpha_p].to_vec();
    let eval = |pairs: &[(usize, usize)]| {
        total_mse(
            h_r,
            &ComparatorNetwork::new(cfg.n_antennas, pairs.to_vec())?,
            cfg,
        )
    };
    let initial_mse = eval(&current)?;
    let mut l_min = initial_mse;
    let mut accepted = Vec::new();
    for slot in 0..alpha_p {
        for &cand in all {
            if current.contains(&cand) {
                continue;
            }
            let mut trial = current.clone();
            trial[slot] = cand;
            let l = eval(&trial)?;
            if improves(l, l_min) {
                current = trial;
                l_min = l;
                accepted.push(l);
            }
        }
    }
    Ok(GreedyTrace {
        network: ComparatorNetwork::new(cfg.n_antennas, current)?,
        initial_mse,
        accepted,
    })
}

/// One iteration of the sequential SINR search.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqStep {
    pub mse_per_stream: DVector<f64>,
    pub k_max: usize,
    /// Index into the lexicographic pair list.
    pub l_max: usize,
}

/// Sequential SINR search: repeatedly serve the worst stream with the unused
/// comparator of highest virtual SINR for it.
pub fn sequential_sinr_search(
    h_r: &DMatrix<f64>,
    alpha_p: usize,
    cfg: &SystemConfig,
) -> Result<ComparatorNetwork> {
    Ok(sequential_sinr_search_traced(h_r, alpha_p, cfg)?.0)
}

fn argmax_first(it: impl Iterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in it {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

pub fn sequential_sinr_search_traced(
    h_r: &DMatrix<f64>,
    alpha_p: usize,
    cfg: &SystemConfig,
) -> Result<(ComparatorNetwork, Vec<SeqStep>)> {
    let full = fully_connected_network(cfg.n_antennas);
    check_alpha(full.alpha(), alpha_p)?;
    let table = virtual_sinr(h_r, &build_b_prime(&full), cfg);
    let mut available = vec![true; full.alpha()];
    let mut chosen: Vec<(usize, usize)> = Vec::with_capacity(alpha_p);
    let mut steps = Vec::with_capacity(alpha_p);
    for _ in 0..alpha_p {
        let net = ComparatorNetwork::new(cfg.n_antennas, chosen.clone())?;
        let mse = per_stream_mse(h_r, &build_b(&net), cfg)?;
        let k_max = argmax_first(mse.iter().copied().enumerate()).expect("at least one stream");
        let l_max = argmax_first(
            (0..full.alpha())
                .filter(|&l| available[l])
                .map(|l| (l, table[(l, k_max)])),
        )
        .expect("alpha_p <= alpha_f leaves a candidate");
        available[l_max] = false;
        chosen.push(full.pairs()[l_max]);
        steps.push(SeqStep {
            mse_per_stream: mse,
            k_max,
            l_max,
        });
    }
    Ok((ComparatorNetwork::new(cfg.n_antennas, chosen)?, steps))
}

/// How the comparator network of a trial is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NetworkDesign {
    None,
    Random(usize),
    Greedy(usize),
    SeqSinr(usize),
    Full,
}

impl NetworkDesign {
    /// Number of comparators the design produces.
    pub fn alpha(&self, n_antennas: usize) -> usize {
        match *self {
            NetworkDesign::None => 0,
            NetworkDesign::Random(a) | NetworkDesign::Greedy(a) | NetworkDesign::SeqSinr(a) => a,
            NetworkDesign::Full => full_alpha(n_antennas),
        }
    }

    /// Whether the design depends on channel knowledge.
    pub fn needs_csi(&self) -> bool {
        matches!(self, NetworkDesign::Greedy(_) | NetworkDesign::SeqSinr(_))
    }

    /// Whether the design is the same for every trial.
    pub fn is_fixed(&self) -> bool {
        matches!(self, NetworkDesign::None | NetworkDesign::Full)
    }

    pub fn validate(&self, n_antennas: usize) -> Result<()> {
        check_alpha(full_alpha(n_antennas), self.alpha(n_antennas))
    }

    /// Builds the network for one trial; `h_r` is the channel known to the
    /// receiver.
    pub fn design<R: Rng + ?Sized>(
        &self,
        h_r: &DMatrix<f64>,
        cfg: &SystemConfig,
        rng: &mut R,
    ) -> Result<ComparatorNetwork> {
        match *self {
            NetworkDesign::None => Ok(ComparatorNetwork::empty(cfg.n_antennas)),
            NetworkDesign::Full => Ok(fully_connected_network(cfg.n_antennas)),
            NetworkDesign::Random(a) => random_network(cfg.n_antennas, a, rng),
            NetworkDesign::Greedy(a) => greedy_mse_search(h_r, a, cfg),
            NetworkDesign::SeqSinr(a) => sequential_sinr_search(h_r, a, cfg),
        }
    }
}
