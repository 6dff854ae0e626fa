//! Feature augmentation by matrix sketching: `X̃ = P·X + E`.
//!
//! Four sketching operators are provided (truncated SVD, norm-weighted row
//! selection, Gaussian random projection, very sparse random projection)
//! plus Gaussian noise injection (`P = I`, `E ~ N(0, ε)`) and the identity.
//! The quality of a sketch is its relative covariance error
//! `‖XᵀX − X̃ᵀX̃‖₂ / Tr(XᵀX)`; [`monte_carlo_failure_rate`] estimates how
//! often that error exceeds a target so the probabilistic guarantees of the
//! randomized operators can be checked empirically.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{spectral_norm, svd, trace_gram, CsrMatrix, DenseMatrix};
use crate::rng::SeededRng;

/// Below this density sparse projections are generated as index lists.
const SPARSE_DENSITY_CUTOFF: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SketchMethod {
    SvdSketch,
    RowSelection,
    GaussianRp,
    SparseRp,
    NoiseInjection,
    Identity,
}

impl SketchMethod {
    pub const ALL: [SketchMethod; 6] = [
        SketchMethod::SvdSketch,
        SketchMethod::RowSelection,
        SketchMethod::GaussianRp,
        SketchMethod::SparseRp,
        SketchMethod::NoiseInjection,
        SketchMethod::Identity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SketchMethod::SvdSketch => "svd_sketch",
            SketchMethod::RowSelection => "row_selection",
            SketchMethod::GaussianRp => "gaussian_rp",
            SketchMethod::SparseRp => "sparse_rp",
            SketchMethod::NoiseInjection => "noise_injection",
            SketchMethod::Identity => "identity",
        }
    }

    /// Methods whose output keeps one row per input row (`k = n`).
    pub fn preserves_rows(self) -> bool {
        matches!(self, SketchMethod::NoiseInjection | SketchMethod::Identity)
    }
}

impl std::str::FromStr for SketchMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let norm = s.replace('-', "_").to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .or(match norm.as_str() {
                "svd" => Some(SketchMethod::SvdSketch),
                "rs" | "row_select" => Some(SketchMethod::RowSelection),
                "rp" | "gaussian" => Some(SketchMethod::GaussianRp),
                "srp" | "sparse" => Some(SketchMethod::SparseRp),
                "noise" => Some(SketchMethod::NoiseInjection),
                "none" => Some(SketchMethod::Identity),
                _ => None,
            })
            .ok_or_else(|| format!("unknown sketch method `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SketchConfig {
    pub method: SketchMethod,
    /// Sketch rows. Ignored by methods that preserve rows.
    pub k: usize,
    /// Sparse projection parameter; density is `1/s`.
    pub s: f64,
    /// Noise variance for noise injection.
    pub eps: f64,
    /// Rescale selected rows by `1/√(k·p_i)` so the Gram estimate is unbiased.
    pub rescale_rows: bool,
    /// Also add `E ~ N(0, eps)` after a non-identity projection.
    pub noise_with_projection: bool,
}

impl Default for SketchConfig {
    fn default() -> Self {
        Self {
            method: SketchMethod::GaussianRp,
            k: 1,
            s: 1.0,
            eps: 0.0,
            rescale_rows: true,
            noise_with_projection: false,
        }
    }
}

impl SketchConfig {
    pub fn new(method: SketchMethod, k: usize) -> Self {
        Self {
            method,
            k,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return invalid("sketch k must be at least 1");
        }
        if !(self.s >= 1.0) || !self.s.is_finite() {
            return invalid(format!("sparsity s must be >= 1, got {}", self.s));
        }
        if !(self.eps >= 0.0) || !self.eps.is_finite() {
            return invalid(format!("noise eps must be >= 0, got {}", self.eps));
        }
        Ok(())
    }

    /// Output row count for an input with `n` rows.
    pub fn output_rows(&self, n: usize) -> usize {
        if self.method.preserves_rows() {
            n
        } else {
            self.k
        }
    }
}

#[derive(Debug, Clone)]
pub struct SketchOutcome {
    pub x_tilde: DenseMatrix,
    pub cov_error: f64,
    pub p_used: Option<DenseMatrix>,
}

/// A drawn sketching matrix `P` (k×n), kept in whichever representation is
/// cheapest to apply. Scale factors such as `1/√k` are folded in.
#[derive(Debug, Clone)]
pub enum SketchOperator {
    Identity { n: usize },
    Dense(DenseMatrix),
    Sparse(CsrMatrix),
    /// One `(source row, scale)` pair per output row.
    Selection { n: usize, picks: Vec<(usize, f64)> },
}

impl SketchOperator {
    /// Draws `P` for `cfg` against data `x` (needed by the data-dependent
    /// SVD and row-selection operators). Noise is not part of `P`.
    pub fn draw(cfg: &SketchConfig, x: &DenseMatrix, rng: &mut SeededRng) -> Result<Self> {
        cfg.validate()?;
        let n = x.rows();
        let k = cfg.k;
        match cfg.method {
            SketchMethod::Identity | SketchMethod::NoiseInjection => Ok(Self::Identity { n }),
            SketchMethod::SvdSketch => svd_operator(x, k),
            SketchMethod::RowSelection => selection_operator(x, k, cfg.rescale_rows, rng),
            SketchMethod::GaussianRp => Ok(Self::gaussian(k, n, rng)),
            SketchMethod::SparseRp => Ok(Self::sparse_sign(k, n, cfg.s, rng)),
        }
    }

    /// `(1/√k)·G` with `G` i.i.d. standard normal.
    pub fn gaussian(k: usize, n: usize, rng: &mut SeededRng) -> Self {
        let scale = 1.0 / (k as f64).sqrt();
        Self::Dense(DenseMatrix::from_fn(k, n, |_, _| scale * rng.normal()))
    }

    /// `(1/√k)·R` with `R` entries `±√s` w.p. `1/(2s)` each, else 0.
    pub fn sparse_sign(k: usize, n: usize, s: f64, rng: &mut SeededRng) -> Self {
        let density = 1.0 / s;
        let mag = s.sqrt() / (k as f64).sqrt();
        if density >= SPARSE_DENSITY_CUTOFF {
            let half = density / 2.0;
            return Self::Dense(DenseMatrix::from_fn(k, n, |_, _| {
                let u = rng.uniform();
                if u < half {
                    mag
                } else if u < density {
                    -mag
                } else {
                    0.0
                }
            }));
        }
        // Geometric skipping: the gap between nonzeros in row-major order is
        // Geometric(density), so only the nonzeros cost a draw.
        let total = k * n;
        let log_q = (1.0 - density).ln();
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); k];
        let mut pos: usize = 0;
        loop {
            let u = 1.0 - rng.uniform(); // (0, 1]
            let gap = (u.ln() / log_q).floor();
            if gap >= (total - pos) as f64 {
                break;
            }
            pos += gap as usize;
            let v = if rng.bernoulli(0.5) { mag } else { -mag };
            rows[pos / n].push((pos % n, v));
            pos += 1;
            if pos >= total {
                break;
            }
        }
        Self::Sparse(CsrMatrix::from_rows(n, rows))
    }

    pub fn k(&self) -> usize {
        match self {
            Self::Identity { n } => *n,
            Self::Dense(p) => p.rows(),
            Self::Sparse(p) => p.rows(),
            Self::Selection { picks, .. } => picks.len(),
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Self::Identity { n } | Self::Selection { n, .. } => *n,
            Self::Dense(p) => p.cols(),
            Self::Sparse(p) => p.cols(),
        }
    }

    /// Number of stored nonzero entries of `P`.
    pub fn nnz(&self) -> usize {
        match self {
            Self::Identity { n } => *n,
            Self::Dense(p) => p.data().iter().filter(|v| **v != 0.0).count(),
            Self::Sparse(p) => p.nnz(),
            Self::Selection { picks, .. } => picks.len(),
        }
    }

    /// `P · x`.
    pub fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.rows() != self.n() {
            return invalid(format!(
                "sketch expects {} rows, got {}",
                self.n(),
                x.rows()
            ));
        }
        Ok(match self {
            Self::Identity { .. } => x.clone(),
            Self::Dense(p) => p.matmul(x),
            Self::Sparse(p) => p.mul_dense(x),
            Self::Selection { picks, .. } => {
                let mut out = DenseMatrix::zeros(picks.len(), x.cols());
                for (r, &(i, scale)) in picks.iter().enumerate() {
                    for (o, v) in out.row_mut(r).iter_mut().zip(x.row(i)) {
                        *o = scale * v;
                    }
                }
                out
            }
        })
    }

    /// `Pᵀ · g`, the pullback of a gradient on the sketch.
    pub fn apply_transpose(&self, g: &DenseMatrix) -> Result<DenseMatrix> {
        if g.rows() != self.k() {
            return invalid(format!(
                "sketch transpose expects {} rows, got {}",
                self.k(),
                g.rows()
            ));
        }
        Ok(match self {
            Self::Identity { .. } => g.clone(),
            Self::Dense(p) => p.t_matmul(g),
            Self::Sparse(p) => p.t_mul_dense(g),
            Self::Selection { n, picks } => {
                let mut out = DenseMatrix::zeros(*n, g.cols());
                for (r, &(i, scale)) in picks.iter().enumerate() {
                    crate::linalg::axpy(scale, g.row(r), out.row_mut(i));
                }
                out
            }
        })
    }

    pub fn to_dense(&self) -> DenseMatrix {
        match self {
            Self::Identity { n } => DenseMatrix::identity(*n),
            Self::Dense(p) => p.clone(),
            Self::Sparse(p) => p.to_dense(),
            Self::Selection { n, picks } => {
                let mut p = DenseMatrix::zeros(picks.len(), *n);
                for (r, &(i, scale)) in picks.iter().enumerate() {
                    p.set(r, i, scale);
                }
                p
            }
        }
    }
}

fn svd_operator(x: &DenseMatrix, k: usize) -> Result<SketchOperator> {
    let (n, d) = x.shape();
    if k == 0 || k > n.min(d) {
        return invalid(format!("svd sketch needs 1 <= k <= min(n, d) = {}, got {k}", n.min(d)));
    }
    let r = svd(x)?;
    Ok(SketchOperator::Dense(r.u.leading_cols(k).transpose()))
}

/// Squared-row-norm sampling distribution `p_i = ‖X_i‖² / ‖X‖_F²`.
pub fn row_selection_probabilities(x: &DenseMatrix) -> Result<Vec<f64>> {
    let total = trace_gram(x);
    if !(total > 0.0) {
        return invalid("row selection needs at least one nonzero row");
    }
    Ok((0..x.rows()).map(|i| x.row_norm_sq(i) / total).collect())
}

fn selection_operator(
    x: &DenseMatrix,
    k: usize,
    rescale: bool,
    rng: &mut SeededRng,
) -> Result<SketchOperator> {
    let probs = row_selection_probabilities(x)?;
    let mut cdf = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for p in &probs {
        acc += p;
        cdf.push(acc);
    }
    let last = probs.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    let picks = (0..k)
        .map(|_| {
            let u = rng.uniform() * acc;
            let mut i = cdf.partition_point(|&c| c <= u).min(last);
            // never land on a zero-probability row
            while probs[i] == 0.0 {
                i += 1;
            }
            let scale = if rescale {
                1.0 / (k as f64 * probs[i]).sqrt()
            } else {
                1.0
            };
            (i, scale)
        })
        .collect();
    Ok(SketchOperator::Selection { n: x.rows(), picks })
}

/// `‖XᵀX − X̃ᵀX̃‖₂ / Tr(XᵀX)`: the ε a sketch achieves.
pub fn covariance_error(x: &DenseMatrix, x_tilde: &DenseMatrix) -> Result<f64> {
    if x.cols() != x_tilde.cols() {
        return invalid(format!(
            "column mismatch: {} vs {}",
            x.cols(),
            x_tilde.cols()
        ));
    }
    let tr = trace_gram(x);
    if !(tr > 0.0) {
        return invalid("covariance error undefined for a zero matrix");
    }
    let diff = x.gram().sub(&x_tilde.gram());
    Ok(spectral_norm(&diff)? / tr)
}

/// Absolute covariance error `‖XᵀX − X̃ᵀX̃‖₂`.
pub fn covariance_gap(x: &DenseMatrix, x_tilde: &DenseMatrix) -> Result<f64> {
    if x.cols() != x_tilde.cols() {
        return invalid("column mismatch");
    }
    spectral_norm(&x.gram().sub(&x_tilde.gram()))
}

fn relative_error_or_zero(x: &DenseMatrix, x_tilde: &DenseMatrix) -> Result<f64> {
    if trace_gram(x) == 0.0 {
        // A zero input has no relative scale; report an exact sketch only
        // when the output is zero as well.
        return Ok(if trace_gram(x_tilde) == 0.0 { 0.0 } else { f64::INFINITY });
    }
    covariance_error(x, x_tilde)
}

/// Applies the sketch described by `cfg`. With `audit` the dense `P` is
/// returned alongside the result.
pub fn sketch(x: &DenseMatrix, cfg: &SketchConfig, rng: &mut SeededRng, audit: bool) -> Result<SketchOutcome> {
    cfg.validate()?;
    let op = SketchOperator::draw(cfg, x, rng)?;
    let mut x_tilde = op.apply(x)?;
    let add_noise = cfg.method == SketchMethod::NoiseInjection
        || (cfg.noise_with_projection && cfg.method != SketchMethod::Identity);
    if add_noise {
        add_gaussian_noise(&mut x_tilde, cfg.eps, rng);
    }
    let cov_error = relative_error_or_zero(x, &x_tilde)?;
    Ok(SketchOutcome {
        x_tilde,
        cov_error,
        p_used: audit.then(|| op.to_dense()),
    })
}

/// Adds i.i.d. `N(0, variance)` noise in place.
pub fn add_gaussian_noise(x: &mut DenseMatrix, variance: f64, rng: &mut SeededRng) {
    if variance == 0.0 {
        return;
    }
    let sd = variance.sqrt();
    x.data_mut().iter_mut().for_each(|v| *v += sd * rng.normal());
}

/// `X̃ = U_kᵀ X`, the rank-k truncated SVD sketch.
pub fn sketch_svd(x: &DenseMatrix, k: usize) -> Result<SketchOutcome> {
    let cfg = SketchConfig::new(SketchMethod::SvdSketch, k);
    // deterministic; the rng is never consulted
    sketch(x, &cfg, &mut SeededRng::new(0), false)
}

pub fn sketch_row_select(x: &DenseMatrix, k: usize, rng: &mut SeededRng) -> Result<SketchOutcome> {
    sketch(x, &SketchConfig::new(SketchMethod::RowSelection, k), rng, false)
}

pub fn sketch_gaussian_rp(x: &DenseMatrix, k: usize, rng: &mut SeededRng) -> Result<SketchOutcome> {
    sketch(x, &SketchConfig::new(SketchMethod::GaussianRp, k), rng, false)
}

pub fn sketch_sparse_rp(x: &DenseMatrix, k: usize, s: f64, rng: &mut SeededRng) -> Result<SketchOutcome> {
    let cfg = SketchConfig {
        s,
        ..SketchConfig::new(SketchMethod::SparseRp, k)
    };
    sketch(x, &cfg, rng, false)
}

/// `X̃ = X + E` with `E` i.i.d. `N(0, eps)`.
pub fn noise_injection(x: &DenseMatrix, eps: f64, rng: &mut SeededRng) -> Result<SketchOutcome> {
    let cfg = SketchConfig {
        eps,
        ..SketchConfig::new(SketchMethod::NoiseInjection, x.rows().max(1))
    };
    sketch(x, &cfg, rng, false)
}

/// `σ_{k+1} / σ_max`, with `σ_{k+1} = 0` once `k` reaches the rank.
pub fn svd_sketch_bound(sigma: &[f64], k: usize) -> f64 {
    match (sigma.first(), sigma.get(k)) {
        (Some(&top), Some(&next)) if top > 0.0 => next / top,
        _ => 0.0,
    }
}

/// Failure-probability bound for the Gaussian projection, `e^{−ε²k/8}`.
pub fn gaussian_rp_failure_bound(eps: f64, k: usize) -> f64 {
    (-eps * eps * k as f64 / 8.0).exp()
}

/// Failure-probability bound for row selection, `e^{−(ε√k−1)²/8}`; the
/// bound is vacuous (1) when `ε√k ≤ 1`.
pub fn row_selection_failure_bound(eps: f64, k: usize) -> f64 {
    let mu = eps * (k as f64).sqrt();
    if mu <= 1.0 {
        1.0
    } else {
        (-(mu - 1.0).powi(2) / 8.0).exp().min(1.0)
    }
}

/// Theoretical failure bound for `method`, when one exists.
pub fn failure_bound(method: SketchMethod, eps: f64, k: usize) -> Option<f64> {
    match method {
        SketchMethod::GaussianRp => Some(gaussian_rp_failure_bound(eps, k)),
        SketchMethod::RowSelection => Some(row_selection_failure_bound(eps, k)),
        SketchMethod::Identity => Some(0.0),
        _ => None,
    }
}

/// Covariance error of `trials` independent sketches. Trial `t` draws from
/// substream `t` of `seed`, so the result does not depend on `threads`.
pub fn monte_carlo_cov_errors(
    cfg: &SketchConfig,
    x: &DenseMatrix,
    trials: usize,
    seed: u64,
    threads: usize,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let run = |t: usize| -> Result<f64> {
        let mut rng = SeededRng::substream(seed, t as u64);
        Ok(sketch(x, cfg, &mut rng, false)?.cov_error)
    };
    if threads <= 1 {
        (0..trials).map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| crate::Error::InvalidInput(format!("thread pool: {e}")))?;
        pool.install(|| (0..trials).into_par_iter().map(run).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FailureRate {
    pub failures: usize,
    pub trials: usize,
    pub rate: f64,
    pub bound: Option<f64>,
}

impl FailureRate {
    /// Binomial standard deviation of the rate under the bound.
    pub fn binomial_sd(&self) -> Option<f64> {
        self.bound
            .map(|p| (p.min(1.0) * (1.0 - p.min(1.0)) / self.trials as f64).sqrt())
    }
}

/// Fraction of trials whose covariance error exceeds `eps_target`.
pub fn monte_carlo_failure_rate(
    cfg: &SketchConfig,
    x: &DenseMatrix,
    eps_target: f64,
    trials: usize,
    seed: u64,
) -> Result<FailureRate> {
    if trials == 0 {
        return invalid("trials must be at least 1");
    }
    let errors = monte_carlo_cov_errors(cfg, x, trials, seed, 1)?;
    let failures = errors.iter().filter(|&&e| e > eps_target).count();
    Ok(FailureRate {
        failures,
        trials,
        rate: failures as f64 / trials as f64,
        bound: failure_bound(cfg.method, eps_target, cfg.output_rows(x.rows())),
    })
}
