//! Real-valued system representation, the 1-bit quantizer and comparator
//! network matrices.
//!
//! Real dimensions are indexed `0..2N_r`: the first `N_r` entries are real
//! parts, the last `N_r` imaginary parts. A comparator pair `(i, j)` forms
//! `(y_i - y_j)/√2` before sign quantization.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

/// Dimensions and powers of one uplink configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemConfig {
    /// Number of single-antenna users `N_t`.
    pub n_users: usize,
    /// Number of receive antennas `N_r`.
    pub n_antennas: usize,
    /// Per-user symbol power `σ_x²`.
    pub sigma_x2: f64,
    /// Complex noise variance `σ_n²`.
    pub sigma_n2: f64,
    /// Pilot length `τ`.
    pub pilot_len: usize,
}

impl SystemConfig {
    pub fn new(
        n_users: usize,
        n_antennas: usize,
        sigma_x2: f64,
        sigma_n2: f64,
        pilot_len: usize,
    ) -> Result<Self> {
        let cfg = Self {
            n_users,
            n_antennas,
            sigma_x2,
            sigma_n2,
            pilot_len,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.n_antennas == 0 || self.pilot_len == 0 {
            return Err(Error::InvalidInput("dimensions must be at least 1".into()));
        }
        if !(self.sigma_x2 > 0.0 && self.sigma_x2.is_finite()) {
            return Err(Error::InvalidInput(format!("sigma_x2 = {}", self.sigma_x2)));
        }
        if !(self.sigma_n2 > 0.0 && self.sigma_n2.is_finite()) {
            return Err(Error::InvalidInput(format!("sigma_n2 = {}", self.sigma_n2)));
        }
        if self.pilot_len < self.n_users {
            return Err(Error::InvalidInput(format!(
                "pilot_len {} < n_users {}",
                self.pilot_len, self.n_users
            )));
        }
        Ok(())
    }

    /// Same configuration with a different noise variance.
    pub fn with_sigma_n2(&self, sigma_n2: f64) -> Self {
        Self { sigma_n2, ..*self }
    }

    /// Number of real receive dimensions `2N_r`.
    pub fn real_rx(&self) -> usize {
        2 * self.n_antennas
    }

    /// Number of real streams `2N_t`.
    pub fn real_tx(&self) -> usize {
        2 * self.n_users
    }
}

/// Size of the fully connected network, `C(2N_r, 2) = N_r(2N_r − 1)`.
pub fn full_alpha(n_antennas: usize) -> usize {
    n_antennas * (2 * n_antennas).saturating_sub(1)
}

/// Position of pair `(i, j)`, `i < j`, in the lexicographic enumeration of all
/// pairs over `dim` real dimensions.
pub fn pair_index(dim: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < dim);
    i * (2 * dim - i - 1) / 2 + (j - i - 1)
}

/// Ordered set of comparator input pairs.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ComparatorNetwork {
    n_antennas: usize,
    pairs: Vec<(usize, usize)>,
}

impl ComparatorNetwork {
    pub fn new(n_antennas: usize, pairs: Vec<(usize, usize)>) -> Result<Self> {
        if n_antennas == 0 {
            return Err(Error::InvalidInput("n_antennas must be at least 1".into()));
        }
        let dim = 2 * n_antennas;
        let mut seen = std::collections::HashSet::with_capacity(pairs.len());
        for &(i, j) in &pairs {
            if !(i < j && j < dim) {
                return Err(Error::InvalidInput(format!(
                    "pair ({i}, {j}) invalid for {dim} real dimensions"
                )));
            }
            if !seen.insert((i, j)) {
                return Err(Error::InvalidInput(format!("duplicate pair ({i}, {j})")));
            }
        }
        Ok(Self { n_antennas, pairs })
    }

    /// No comparators (`B = I`).
    pub fn empty(n_antennas: usize) -> Self {
        Self {
            n_antennas,
            pairs: Vec::new(),
        }
    }

    pub fn n_antennas(&self) -> usize {
        self.n_antennas
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Number of comparators `α`.
    pub fn alpha(&self) -> usize {
        self.pairs.len()
    }

    pub fn contains(&self, pair: (usize, usize)) -> bool {
        self.pairs.contains(&pair)
    }
}

/// All pairs `(i, j)`, `i < j < 2N_r`, in lexicographic order.
pub fn fully_connected_network(n_antennas: usize) -> ComparatorNetwork {
    let dim = 2 * n_antennas;
    let mut pairs = Vec::with_capacity(full_alpha(n_antennas));
    for i in 0..dim {
        for j in (i + 1)..dim {
            pairs.push((i, j));
        }
    }
    ComparatorNetwork { n_antennas, pairs }
}

/// `alpha_p` distinct pairs drawn uniformly without replacement.
pub fn random_network<R: Rng + ?Sized>(
    n_antennas: usize,
    alpha_p: usize,
    rng: &mut R,
) -> Result<ComparatorNetwork> {
    let full = fully_connected_network(n_antennas);
    let alpha_f = full.alpha();
    if alpha_p > alpha_f {
        return Err(Error::InvalidRequest(format!(
            "alpha_p = {alpha_p} exceeds alpha_f = {alpha_f}"
        )));
    }
    let picks = index::sample(rng, alpha_f, alpha_p);
    let pairs = picks.iter().map(|l| full.pairs[l]).collect();
    Ok(ComparatorNetwork { n_antennas, pairs })
}

/// The `α × 2N_r` comparator matrix `B′`.
pub fn build_b_prime(net: &ComparatorNetwork) -> DMatrix<f64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut b = DMatrix::zeros(net.alpha(), 2 * net.n_antennas);
    for (r, &(i, j)) in net.pairs.iter().enumerate() {
        b[(r, i)] = s;
        b[(r, j)] = -s;
    }
    b
}

/// `B = [I_{2N_r}; B′]`.
pub fn build_b(net: &ComparatorNetwork) -> DMatrix<f64> {
    let dim = 2 * net.n_antennas;
    let mut b = DMatrix::zeros(dim + net.alpha(), dim);
    b.view_mut((0, 0), (dim, dim)).fill_with_identity();
    b.view_mut((dim, 0), (net.alpha(), dim))
        .copy_from(&build_b_prime(net));
    b
}

/// Comparator matrix for the stacked pilot observation of length `2τN_r`.
///
/// The pilot vector is `[ℜ vec(Y_p); ℑ vec(Y_p)]` with `vec` column-major, so
/// entry `t·N_r + n` of each half belongs to antenna `n` in slot `t`. The top
/// block is `I_{2τN_r}`; comparator row `t·α + r` applies pair `r` to the
/// entries of slot `t`. This is `B′` applied slot by slot, i.e. the Kronecker
/// blocks `I_τ ⊗ B′_R` and `I_τ ⊗ B′_I`; for `τ = 1` it equals [`build_b`].
pub fn build_b_eff(net: &ComparatorNetwork, tau: usize) -> DMatrix<f64> {
    let nr = net.n_antennas;
    let alpha = net.alpha();
    let cols = 2 * tau * nr;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut b = DMatrix::zeros(cols + tau * alpha, cols);
    b.view_mut((0, 0), (cols, cols)).fill_with_identity();
    // real dimension d of slot t -> column in the stacked pilot vector
    let col = |t: usize, d: usize| {
        if d < nr {
            t * nr + d
        } else {
            tau * nr + t * nr + (d - nr)
        }
    };
    for t in 0..tau {
        for (r, &(i, j)) in net.pairs.iter().enumerate() {
            let row = cols + t * alpha + r;
            b[(row, col(t, i))] = s;
            b[(row, col(t, j))] = -s;
        }
    }
    b
}

/// Block expansion `[[ℜH, −ℑH], [ℑH, ℜH]]`.
pub fn complex_to_real_channel(h: &DMatrix<Complex64>) -> Result<DMatrix<f64>> {
    if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::InvalidInput("non-finite channel entry".into()));
    }
    let (r, c) = h.shape();
    let mut out = DMatrix::zeros(2 * r, 2 * c);
    for j in 0..c {
        for i in 0..r {
            let z = h[(i, j)];
            out[(i, j)] = z.re;
            out[(i, c + j)] = -z.im;
            out[(r + i, j)] = z.im;
            out[(r + i, c + j)] = z.re;
        }
    }
    Ok(out)
}

/// Inverse of [`complex_to_real_channel`], reading the left block column.
pub fn real_to_complex_channel(h_r: &DMatrix<f64>) -> Result<DMatrix<Complex64>> {
    let (r2, c2) = h_r.shape();
    if r2 % 2 != 0 || c2 % 2 != 0 {
        return Err(Error::DimensionMismatch(format!(
            "{r2}x{c2} is not a real expansion"
        )));
    }
    let (r, c) = (r2 / 2, c2 / 2);
    Ok(DMatrix::from_fn(r, c, |i, j| {
        Complex64::new(h_r[(i, j)], h_r[(r + i, j)])
    }))
}

/// `[ℜv; ℑv]`.
pub fn complex_to_real_vector(v: &DVector<Complex64>) -> DVector<f64> {
    let n = v.len();
    DVector::from_fn(2 * n, |i, _| if i < n { v[i].re } else { v[i - n].im })
}

/// Inverse of [`complex_to_real_vector`].
pub fn real_to_complex_vector(v: &DVector<f64>) -> Result<DVector<Complex64>> {
    if !v.len().is_multiple_of(2) {
        return Err(Error::DimensionMismatch(format!("odd length {}", v.len())));
    }
    let n = v.len() / 2;
    Ok(DVector::from_fn(n, |i, _| Complex64::new(v[i], v[n + i])))
}

/// Vector of ±1 entries produced by the 1-bit quantizer.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedObservation(DVector<f64>);

impl QuantizedObservation {
    /// Wraps a vector whose entries are already exactly ±1.
    pub fn from_signs(v: DVector<f64>) -> Result<Self> {
        if v.iter().all(|&x| x == 1.0 || x == -1.0) {
            Ok(Self(v))
        } else {
            Err(Error::InvalidInput("entries must be exactly +1 or -1".into()))
        }
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Element-wise sign with `sign(0) = +1`.
pub fn quantize(v: &DVector<f64>) -> Result<QuantizedObservation> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("non-finite quantizer input".into()));
    }
    Ok(QuantizedObservation(
        v.map(|x| if x >= 0.0 { 1.0 } else { -1.0 }),
    ))
}
