//! Prior sampling, reproducible batch simulation, rejection ABC, pilot
//! truncation and linear regression adjustment of accepted draws.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::mat::{self, Matrix};
use crate::regression::{self, FitOptions};
use crate::rng::{derive_seed, draw_rng};

/// Random stream handed to simulators; one per draw.
pub type DrawRng = ChaCha8Rng;

/// Proposals used to check that a truncation box has usable prior mass.
pub const TRUNCATION_PROBE: usize = 10_000;
/// Minimum acceptable fraction of probe proposals landing in the box.
pub const TRUNCATION_MIN_RATE: f64 = 1e-4;
const MAX_REJECTION_ATTEMPTS: usize = 10_000_000;
const MAD_TO_SD: f64 = 1.4826;

/// One coordinate of an independent prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case", deny_unknown_fields)]
pub enum Marginal {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
    LogNormal { mu: f64, sigma: f64 },
    /// Finite support with (unnormalised) probabilities.
    Categorical { values: Vec<f64>, weights: Vec<f64> },
}

impl Marginal {
    fn validate(&self) -> Result<()> {
        let ok = match self {
            Marginal::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
            Marginal::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && *sd > 0.0,
            Marginal::LogNormal { mu, sigma } => mu.is_finite() && sigma.is_finite() && *sigma > 0.0,
            Marginal::Categorical { values, weights } => {
                !values.is_empty()
                    && values.len() == weights.len()
                    && values.iter().all(|v| v.is_finite())
                    && weights.iter().all(|w| w.is_finite() && *w >= 0.0)
                    && weights.iter().sum::<f64>() > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid prior marginal {self:?}")))
        }
    }

    fn sample(&self, rng: &mut DrawRng) -> f64 {
        match self {
            Marginal::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            Marginal::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
            Marginal::LogNormal { mu, sigma } => (mu + sigma * rng.sample::<f64, _>(StandardNormal)).exp(),
            Marginal::Categorical { values, weights } => {
                let total: f64 = weights.iter().sum();
                let mut u = rng.random::<f64>() * total;
                for (v, w) in values.iter().zip(weights) {
                    if u < *w {
                        return *v;
                    }
                    u -= w;
                }
                *values.last().expect("nonempty support")
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Marginal::Uniform { lo, hi } => 0.5 * (lo + hi),
            Marginal::Normal { mean, .. } => *mean,
            Marginal::LogNormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
            Marginal::Categorical { values, weights } => {
                let total: f64 = weights.iter().sum();
                values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total
            }
        }
    }

    /// Quantile function; categorical marginals return the support bound.
    pub fn quantile(&self, prob: f64) -> f64 {
        let z = || Normal::standard().inverse_cdf(prob);
        match self {
            Marginal::Uniform { lo, hi } => lo + (hi - lo) * prob,
            Marginal::Normal { mean, sd } => mean + sd * z(),
            Marginal::LogNormal { mu, sigma } => (mu + sigma * z()).exp(),
            Marginal::Categorical { values, .. } => {
                let it = values.iter().cloned();
                if prob < 0.5 {
                    it.fold(f64::INFINITY, f64::min)
                } else {
                    it.fold(f64::NEG_INFINITY, f64::max)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorShape {
    Independent(Vec<Marginal>),
    /// Correlated multivariate normal.
    Gaussian { mean: Vec<f64>, cov: Matrix },
}

/// Per-coordinate closed intervals `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationRegion {
    pub bounds: Vec<[f64; 2]>,
}

impl TruncationRegion {
    pub fn contains(&self, theta: &[f64]) -> bool {
        theta
            .iter()
            .zip(&self.bounds)
            .all(|(t, [lo, hi])| *lo <= *t && *t <= *hi)
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    fn validate(&self) -> Result<()> {
        for [lo, hi] in &self.bounds {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid(format!(
                    "truncation interval [{lo}, {hi}] has no volume"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub shape: PriorShape,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<TruncationRegion>,
}

impl PriorSpec {
    pub fn independent(marginals: Vec<Marginal>) -> Self {
        Self {
            shape: PriorShape::Independent(marginals),
            truncation: None,
        }
    }

    pub fn gaussian(mean: Vec<f64>, cov: Matrix) -> Self {
        Self {
            shape: PriorShape::Gaussian { mean, cov },
            truncation: None,
        }
    }

    pub fn truncated(&self, region: TruncationRegion) -> Self {
        Self {
            shape: self.shape.clone(),
            truncation: Some(region),
        }
    }

    pub fn dim(&self) -> usize {
        match &self.shape {
            PriorShape::Independent(m) => m.len(),
            PriorShape::Gaussian { mean, .. } => mean.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.shape {
            PriorShape::Independent(ms) => ms.iter().try_for_each(Marginal::validate)?,
            PriorShape::Gaussian { mean, cov } => {
                if cov.rows() != mean.len() || cov.cols() != mean.len() {
                    return Err(Error::DimensionMismatch {
                        context: "gaussian prior covariance",
                        expected: mean.len(),
                        got: cov.rows(),
                    });
                }
                if mat::Cholesky::factor(cov, 0.0).is_none() {
                    return Err(Error::invalid("gaussian prior covariance is not positive definite"));
                }
            }
        }
        if let Some(t) = &self.truncation {
            if t.dim() != self.dim() {
                return Err(Error::DimensionMismatch {
                    context: "truncation region",
                    expected: self.dim(),
                    got: t.dim(),
                });
            }
            t.validate()?;
        }
        Ok(())
    }

    /// Prior mean of the untruncated prior.
    pub fn mean(&self) -> Vec<f64> {
        match &self.shape {
            PriorShape::Independent(ms) => ms.iter().map(Marginal::mean).collect(),
            PriorShape::Gaussian { mean, .. } => mean.clone(),
        }
    }

    /// Per-coordinate `[q(prob), q(1−prob)]` of the untruncated marginals.
    pub fn quantile_box(&self, prob: f64) -> TruncationRegion {
        let bounds = match &self.shape {
            PriorShape::Independent(ms) => ms.iter().map(|m| [m.quantile(prob), m.quantile(1.0 - prob)]).collect(),
            PriorShape::Gaussian { mean, cov } => {
                let z = Normal::standard().inverse_cdf(1.0 - prob);
                mean.iter()
                    .enumerate()
                    .map(|(i, m)| {
                        let sd = cov[(i, i)].sqrt();
                        [m - z * sd, m + z * sd]
                    })
                    .collect()
            }
        };
        TruncationRegion { bounds }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("prior serialises");
        hex::encode(Sha256::digest(&json))
    }

    pub fn sampler(&self) -> Result<PriorSampler<'_>> {
        self.validate()?;
        let chol = match &self.shape {
            PriorShape::Gaussian { cov, .. } => Some(mat::Cholesky::factor(cov, 0.0).expect("validated")),
            PriorShape::Independent(_) => None,
        };
        Ok(PriorSampler { prior: self, chol })
    }
}

pub struct PriorSampler<'a> {
    prior: &'a PriorSpec,
    chol: Option<mat::Cholesky>,
}

impl PriorSampler<'_> {
    /// One draw from the untruncated prior.
    pub fn sample_untruncated(&self, rng: &mut DrawRng) -> Vec<f64> {
        match &self.prior.shape {
            PriorShape::Independent(ms) => ms.iter().map(|m| m.sample(rng)).collect(),
            PriorShape::Gaussian { mean, cov } => {
                let z: Vec<f64> = (0..mean.len()).map(|_| rng.sample(StandardNormal)).collect();
                let lmat = self.chol.as_ref().expect("gaussian factor").lower();
                debug_assert_eq!(lmat.rows(), cov.rows());
                mean.iter()
                    .enumerate()
                    .map(|(i, m)| m + (0..=i).map(|k| lmat[(i, k)] * z[k]).sum::<f64>())
                    .collect()
            }
        }
    }

    /// One draw from the (possibly truncated) prior, by rejection.
    pub fn sample(&self, rng: &mut DrawRng) -> Result<Vec<f64>> {
        let Some(region) = &self.prior.truncation else {
            return Ok(self.sample_untruncated(rng));
        };
        for _ in 0..MAX_REJECTION_ATTEMPTS {
            let t = self.sample_untruncated(rng);
            if region.contains(&t) {
                return Ok(t);
            }
        }
        Err(Error::TruncationTooSmall {
            rate: 1.0 / MAX_REJECTION_ATTEMPTS as f64,
        })
    }
}

/// The data-generating half of a model: `(θ, stream) ↦ s`.
///
/// Implementations must be deterministic functions of `θ` and the stream
/// contents.
pub trait Simulator: Send + Sync {
    fn name(&self) -> &str;
    fn param_dim(&self) -> usize;
    fn stat_dim(&self) -> usize;
    fn simulate(&self, theta: &[f64], rng: &mut DrawRng) -> Vec<f64>;
}

/// Paired draws `(θ⁽ᵐ⁾, s⁽ᵐ⁾)` from `p(s|θ)p(θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationBatch {
    pub thetas: Matrix,
    pub stats: Matrix,
    pub seed: u64,
    pub model: String,
    pub prior_hash: String,
}

impl SimulationBatch {
    pub fn len(&self) -> usize {
        self.thetas.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.rows() == 0
    }

    pub fn param_dim(&self) -> usize {
        self.thetas.cols()
    }

    pub fn stat_dim(&self) -> usize {
        self.stats.cols()
    }
}

/// Simulates `m` draws; draw `i` uses only the stream `(seed, i)`.
pub fn simulate_batch(prior: &PriorSpec, sim: &dyn Simulator, m: usize, seed: u64) -> Result<SimulationBatch> {
    if m == 0 {
        return Err(Error::NoSamples);
    }
    if prior.dim() != sim.param_dim() {
        return Err(Error::DimensionMismatch {
            context: "prior vs simulator parameter dimension",
            expected: sim.param_dim(),
            got: prior.dim(),
        });
    }
    let sampler = prior.sampler()?;
    if let Some(region) = &prior.truncation {
        let mut probe = draw_rng(derive_seed(seed, "truncation-probe"), 0);
        let inside = (0..TRUNCATION_PROBE)
            .filter(|_| region.contains(&sampler.sample_untruncated(&mut probe)))
            .count();
        let rate = inside as f64 / TRUNCATION_PROBE as f64;
        if rate < TRUNCATION_MIN_RATE {
            return Err(Error::TruncationTooSmall { rate });
        }
    }
    let p = sim.param_dim();
    let d = sim.stat_dim();
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut rng = draw_rng(seed, i as u64);
            let theta = sampler.sample(&mut rng)?;
            let s = sim.simulate(&theta, &mut rng);
            if s.len() != d {
                return Err(Error::DimensionMismatch {
                    context: "simulator output",
                    expected: d,
                    got: s.len(),
                });
            }
            if s.iter().chain(&theta).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("draw {i} of {}", sim.name())));
            }
            Ok((theta, s))
        })
        .collect::<Result<_>>()?;
    let mut thetas = Vec::with_capacity(m * p);
    let mut stats = Vec::with_capacity(m * d);
    for (t, s) in rows {
        thetas.extend(t);
        stats.extend(s);
    }
    Ok(SimulationBatch {
        thetas: Matrix::new(m, p, thetas)?,
        stats: Matrix::new(m, d, stats)?,
        seed,
        model: sim.name().to_string(),
        prior_hash: prior.hash(),
    })
}

/// Scaled Euclidean distance `sqrt(Σ ((sⱼ − s_obs,ⱼ)/scaleⱼ)²)`.
pub fn abc_distance(s: &[f64], s_obs: &[f64], scales: &[f64]) -> Result<f64> {
    if s.len() != s_obs.len() || s.len() != scales.len() {
        return Err(Error::DimensionMismatch {
            context: "abc_distance",
            expected: s_obs.len(),
            got: s.len(),
        });
    }
    if scales.iter().any(|c| !(*c > 0.0)) {
        return Err(Error::invalid("distance scales must be strictly positive"));
    }
    Ok(distance_unchecked(s, s_obs, scales))
}

fn distance_unchecked(s: &[f64], s_obs: &[f64], scales: &[f64]) -> f64 {
    s.iter()
        .zip(s_obs)
        .zip(scales)
        .map(|((a, b), c)| ((a - b) / c).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleReport {
    pub scales: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Per-column robust scale: `1.4826·MAD`, falling back to the standard
/// deviation and then to 1.0 for constant columns.
pub fn compute_scales(batch: &SimulationBatch) -> ScaleReport {
    scales_of(&batch.stats)
}

pub fn scales_of(stats: &Matrix) -> ScaleReport {
    let mut warnings = Vec::new();
    let scales = (0..stats.cols())
        .map(|j| {
            let mut col = stats.col(j);
            if col.is_empty() {
                return 1.0;
            }
            let med = median(&mut col);
            let mut dev: Vec<f64> = col.iter().map(|v| (v - med).abs()).collect();
            let mad = MAD_TO_SD * median(&mut dev);
            if mad > 0.0 {
                return mad;
            }
            let sd = if col.len() > 1 {
                let mean = mat::stable_mean(&col);
                let sq = col.iter().map(|v| (v - mean).powi(2)).collect();
                (mat::stable_sum(sq) / (col.len() - 1) as f64).sqrt()
            } else {
                0.0
            };
            if sd > 0.0 {
                sd
            } else {
                let msg = format!("statistic {} is constant; scale set to 1.0", j + 1);
                log::warn!("{msg}");
                warnings.push(msg);
                1.0
            }
        })
        .collect();
    ScaleReport { scales, warnings }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Acceptance {
    Epsilon(f64),
    Fraction(f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    #[default]
    Uniform,
    /// Weights `1 − (d/ε)²` on accepted draws.
    Epanechnikov,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceInfo {
    /// Realised tolerance: the largest accepted distance.
    pub epsilon: f64,
    /// Source-batch rows that were accepted, ascending.
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
    pub scales: Vec<f64>,
    pub total_draws: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub condition_number: f64,
    pub vifs: Vec<f64>,
    pub residual_mss: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub stage: String,
    #[serde(default)]
    pub projector_id: Option<String>,
    #[serde(default)]
    pub config_hash: Option<String>,
    #[serde(default)]
    pub diagnostics: Option<FitDiagnostics>,
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
}

/// Accepted parameter draws with normalised weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPosterior {
    pub thetas: Matrix,
    pub weights: Vec<f64>,
    pub acceptance: AcceptanceInfo,
    pub provenance: Provenance,
}

impl WeightedPosterior {
    pub fn len(&self) -> usize {
        self.thetas.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.rows() == 0
    }

    pub fn mean(&self) -> Vec<f64> {
        (0..self.thetas.cols())
            .map(|j| self.expectation(|t| t[j]))
            .collect()
    }

    /// Weighted posterior mean of `g(θ)`.
    pub fn expectation(&self, g: impl Fn(&[f64]) -> f64) -> f64 {
        let terms = self
            .thetas
            .iter_rows()
            .zip(&self.weights)
            .map(|(t, w)| w * g(t))
            .collect();
        mat::stable_sum(terms)
    }

    /// Weighted standard deviation of `g(θ)`.
    pub fn sd_of(&self, g: impl Fn(&[f64]) -> f64) -> f64 {
        let mean = self.expectation(&g);
        self.expectation(|t| (g(t) - mean).powi(2)).max(0.0).sqrt()
    }

    /// Kish effective sample size.
    pub fn effective_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    pub fn is_uniform(&self) -> bool {
        let n = self.weights.len();
        let u = 1.0 / n as f64;
        self.weights.iter().all(|w| (w - u).abs() <= 1e-12 * u.max(1e-300) + 1e-15)
    }

    /// Systematic resampling to `n` equally weighted draws, deterministic
    /// given `seed`.
    pub fn resample_systematic(&self, n: usize, seed: u64) -> WeightedPosterior {
        let mut rng = draw_rng(derive_seed(seed, "systematic-resample"), 0);
        let u0: f64 = rng.random::<f64>() / n as f64;
        let mut cum = 0.0;
        let mut j = 0;
        let mut picks = Vec::with_capacity(n);
        for k in 0..n {
            let target = u0 + k as f64 / n as f64;
            while j + 1 < self.weights.len() && cum + self.weights[j] <= target {
                cum += self.weights[j];
                j += 1;
            }
            picks.push(j);
        }
        let mut provenance = self.provenance.clone();
        provenance.stage = format!("{}+resampled", provenance.stage);
        WeightedPosterior {
            thetas: self.thetas.select_rows(&picks),
            weights: vec![1.0 / n as f64; n],
            acceptance: AcceptanceInfo {
                indices: picks.iter().map(|&i| self.acceptance.indices[i]).collect(),
                distances: picks.iter().map(|&i| self.acceptance.distances[i]).collect(),
                ..self.acceptance.clone()
            },
            provenance,
        }
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::NoSamples);
        }
        let total = mat::stable_sum(self.weights.clone());
        if self.weights.len() != self.len() || (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("posterior weights sum to {total}, not 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectionOptions {
    pub accept: Acceptance,
    pub kernel: Kernel,
    /// Distance scales; computed from the statistics when absent.
    pub scales: Option<Vec<f64>>,
    pub seed: u64,
}

impl RejectionOptions {
    pub fn new(accept: Acceptance) -> Self {
        Self {
            accept,
            kernel: Kernel::Uniform,
            scales: None,
            seed: 0,
        }
    }
}

/// Rejection ABC on a batch with MAD-scaled distances.
pub fn rejection_abc(batch: &SimulationBatch, s_obs: &[f64], accept: Acceptance) -> Result<WeightedPosterior> {
    let mut opts = RejectionOptions::new(accept);
    opts.seed = batch.seed;
    rejection_abc_with(&batch.thetas, &batch.stats, s_obs, &opts)
}

/// Rejection ABC on paired parameter/statistic matrices.
///
/// Fraction mode keeps the `⌈fraction·M⌉` closest draws, ties broken by
/// draw index; epsilon mode keeps every draw with distance ≤ ε.
pub fn rejection_abc_with(
    thetas: &Matrix,
    stats: &Matrix,
    s_obs: &[f64],
    opts: &RejectionOptions,
) -> Result<WeightedPosterior> {
    let m = thetas.rows();
    if m == 0 {
        return Err(Error::NoSamples);
    }
    if stats.rows() != m {
        return Err(Error::DimensionMismatch {
            context: "rejection_abc rows",
            expected: m,
            got: stats.rows(),
        });
    }
    if s_obs.len() != stats.cols() {
        return Err(Error::DimensionMismatch {
            context: "observed statistics",
            expected: stats.cols(),
            got: s_obs.len(),
        });
    }
    let scales = match &opts.scales {
        Some(s) => s.clone(),
        None => scales_of(stats).scales,
    };
    abc_distance(s_obs, s_obs, &scales)?;
    let distances: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|i| distance_unchecked(stats.row(i), s_obs, &scales))
        .collect();

    let mut indices: Vec<usize> = match opts.accept {
        Acceptance::Fraction(f) => {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::invalid(format!("acceptance fraction {f} outside (0, 1]")));
            }
            let k = ((f * m as f64 - 1e-9).ceil() as usize).clamp(1, m);
            let mut order: Vec<usize> = (0..m).collect();
            let by = |a: &usize, b: &usize| distances[*a].total_cmp(&distances[*b]).then(a.cmp(b));
            if k < m {
                order.select_nth_unstable_by(k - 1, by);
            }
            order.truncate(k);
            order
        }
        Acceptance::Epsilon(eps) => {
            if !(eps >= 0.0) {
                return Err(Error::invalid(format!("epsilon {eps} must be ≥ 0")));
            }
            let kept: Vec<usize> = (0..m).filter(|&i| distances[i] <= eps).collect();
            if kept.is_empty() {
                let min_distance = distances.iter().cloned().fold(f64::INFINITY, f64::min);
                return Err(Error::NoAcceptance {
                    epsilon: eps,
                    min_distance,
                });
            }
            kept
        }
    };
    indices.sort_unstable();
    let acc_d: Vec<f64> = indices.iter().map(|&i| distances[i]).collect();
    let epsilon = acc_d.iter().cloned().fold(0.0, f64::max);
    let n = indices.len();
    let weights = match opts.kernel {
        Kernel::Uniform => vec![1.0 / n as f64; n],
        Kernel::Epanechnikov => {
            let raw: Vec<f64> = acc_d
                .iter()
                .map(|d| if epsilon > 0.0 { 1.0 - (d / epsilon).powi(2) } else { 1.0 })
                .collect();
            let total = mat::stable_sum(raw.clone());
            if total > 0.0 {
                raw.iter().map(|w| w / total).collect()
            } else {
                vec![1.0 / n as f64; n]
            }
        }
    };
    Ok(WeightedPosterior {
        thetas: thetas.select_rows(&indices),
        weights,
        acceptance: AcceptanceInfo {
            epsilon,
            indices,
            distances: acc_d,
            scales,
            total_draws: m,
        },
        provenance: Provenance {
            seed: opts.seed,
            stage: "rejection".into(),
            ..Default::default()
        },
    })
}

/// Bounding box of the accepted draws, widened by `expand·range` per side.
pub fn truncation_from_pilot(accepted: &WeightedPosterior, expand: f64) -> Result<TruncationRegion> {
    if accepted.is_empty() {
        return Err(Error::NoSamples);
    }
    if !(expand >= 0.0) {
        return Err(Error::invalid("expand must be ≥ 0"));
    }
    let bounds = (0..accepted.thetas.cols())
        .map(|j| {
            let col = accepted.thetas.col(j);
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let range = hi - lo;
            if range > 0.0 {
                [lo - expand * range, hi + expand * range]
            } else {
                let w = 1e-8 * lo.abs().max(1.0);
                [lo - w, hi + w]
            }
        })
        .collect();
    Ok(TruncationRegion { bounds })
}

/// Linear regression adjustment `θᵢ − β̂(sᵢ − s_obs)` with β̂ from a
/// posterior-weighted least-squares fit of θ on s over the accepted draws.
pub fn regression_adjust(
    posterior: &WeightedPosterior,
    stats_of_accepted: &Matrix,
    s_obs: &[f64],
    ridge_lambda: f64,
) -> Result<WeightedPosterior> {
    posterior.check()?;
    let n = posterior.len();
    let d = stats_of_accepted.cols();
    if stats_of_accepted.rows() != n {
        return Err(Error::DimensionMismatch {
            context: "regression_adjust statistics rows",
            expected: n,
            got: stats_of_accepted.rows(),
        });
    }
    if s_obs.len() != d {
        return Err(Error::DimensionMismatch {
            context: "regression_adjust observed statistics",
            expected: d,
            got: s_obs.len(),
        });
    }
    let innovations = Matrix::from_fn(n, d, |i, j| stats_of_accepted[(i, j)] - s_obs[j]);
    let mut out = posterior.clone();
    out.provenance.stage = "regression_adjust".into();
    if innovations.max_abs() == 0.0 {
        out.provenance
            .notes
            .insert("regression_adjust".into(), "zero innovation; draws unchanged".into());
        return Ok(out);
    }
    if n < d + 1 {
        return Err(Error::InsufficientDraws {
            stats: d,
            needed: d + 1,
            got: n,
        });
    }
    let fit = regression::fit_linear_with(
        stats_of_accepted,
        &posterior.thetas,
        &FitOptions {
            ridge_lambda,
            weights: Some(&posterior.weights),
            no_intercept: false,
        },
    )?;
    for i in 0..n {
        let shift = fit.coefficients.matvec(innovations.row(i))?;
        for (t, s) in out.thetas.row_mut(i).iter_mut().zip(shift) {
            *t -= s;
        }
    }
    if !out.thetas.is_finite() {
        return Err(Error::NonFinite("adjusted draws".into()));
    }
    out.provenance.diagnostics = Some(FitDiagnostics {
        condition_number: fit.condition_number,
        vifs: fit.vifs,
        residual_mss: fit.residual_mss,
    });
    Ok(out)
}
