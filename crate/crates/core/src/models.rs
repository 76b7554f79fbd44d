//! Built-in simulators with posterior oracles that do not touch the ABC
//! machinery: closed-form conjugate results for the Gaussian models, an
//! enumeration for the two-point toy, and a grid posterior for the
//! generalized Pareto model.

use std::collections::BTreeMap;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::abc::{DrawRng, Marginal, PriorShape, PriorSpec, Simulator};
use crate::error::{Error, Result};
use crate::mat::{self, Matrix};
use crate::rng::draw_rng;
use crate::semiauto::{TargetFunctional, TargetKind};

/// Shape magnitude below which the GPD quantile switches to its expansion.
pub const GPD_SMALL_XI: f64 = 1e-6;

/// Probability levels of the empirical-quantile statistics of the GPD model.
pub const GPD_STAT_LADDER: [f64; 11] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99];

/// GPD quantile `(σ/ξ)((1−u)^(−ξ) − 1)`.
///
/// For `|ξ| < 1e-6` the expansion `σL(1 + ξL/2)` with `L = −ln(1−u)` is used;
/// it equals the exponential limit `−σ·ln(1−u)` at `ξ = 0` and stays
/// continuous with the main branch at the switch.
pub fn gpd_quantile(u: f64, sigma: f64, xi: f64) -> f64 {
    let l = -(-u).ln_1p();
    if xi.abs() < GPD_SMALL_XI {
        sigma * l * (1.0 + 0.5 * xi * l)
    } else {
        sigma / xi * (xi * l).exp_m1()
    }
}

fn gpd_log_density(x: f64, sigma: f64, xi: f64) -> f64 {
    if x < 0.0 || sigma <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let r = xi * x / sigma;
    if r <= -1.0 {
        return f64::NEG_INFINITY;
    }
    if xi == 0.0 {
        -sigma.ln() - x / sigma
    } else {
        -sigma.ln() - (1.0 + 1.0 / xi) * r.ln_1p()
    }
}

fn default_tau0() -> f64 {
    1.0
}
fn default_sigma() -> f64 {
    1.0
}
fn default_n() -> usize {
    4
}
fn default_xbar() -> f64 {
    1.0
}
fn default_xi() -> f64 {
    0.2
}
fn default_exceedances() -> usize {
    100
}
fn default_tau_grid() -> Vec<f64> {
    vec![0.9, 0.95, 0.99]
}
fn default_data_seed() -> u64 {
    2012
}
fn default_grid() -> usize {
    200
}
fn default_one() -> f64 {
    1.0
}

/// Fixture name plus parameters, as written in configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FixtureSpec {
    GaussianLocation {
        #[serde(default)]
        mu0: f64,
        #[serde(default = "default_tau0")]
        tau0: f64,
        #[serde(default = "default_sigma")]
        sigma: f64,
        #[serde(default = "default_n")]
        n: usize,
        #[serde(default = "default_xbar")]
        xbar_obs: f64,
        #[serde(default)]
        n_noise_stats: usize,
    },
    LinearGaussian {
        h: Matrix,
        noise_sd: f64,
        prior_mean: Vec<f64>,
        prior_cov: Matrix,
        s_obs: Vec<f64>,
    },
    Gpd {
        #[serde(default = "default_sigma")]
        sigma_true: f64,
        #[serde(default = "default_xi")]
        xi_true: f64,
        #[serde(default = "default_exceedances")]
        n_exceedances: usize,
        #[serde(default = "default_tau_grid")]
        tau_grid: Vec<f64>,
        #[serde(default = "default_data_seed")]
        data_seed: u64,
        #[serde(default = "default_grid")]
        grid_size: usize,
    },
    /// θ ∈ {0, 1} with equal prior mass and `s = θ`.
    TwoPoint {
        #[serde(default = "default_one")]
        s_obs: f64,
    },
}

impl FixtureSpec {
    pub fn gaussian_location(mu0: f64, tau0: f64, sigma: f64, n: usize, xbar_obs: f64, n_noise_stats: usize) -> Self {
        FixtureSpec::GaussianLocation {
            mu0,
            tau0,
            sigma,
            n,
            xbar_obs,
            n_noise_stats,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FixtureSpec::GaussianLocation { .. } => "gaussian_location",
            FixtureSpec::LinearGaussian { .. } => "linear_gaussian",
            FixtureSpec::Gpd { .. } => "gpd",
            FixtureSpec::TwoPoint { .. } => "two_point",
        }
    }
}

fn split_top_level(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '[' => depth += 1,
            ']' => depth -= 1,
            ',' if depth == 0 => {
                out.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(&s[start..]);
    out.into_iter().filter(|p| !p.trim().is_empty()).collect()
}

/// Parses `name` or `name:key=value,key=value`; values are JSON literals
/// (`tau_grid=[0.9,0.99]`, `h=[[1,0],[0,1]]`).
impl FromStr for FixtureSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, params) = s.split_once(':').unwrap_or((s, ""));
        let mut obj = serde_json::Map::new();
        for part in split_top_level(params) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("fixture parameter `{part}` is not key=value")))?;
            let value: serde_json::Value = serde_json::from_str(v.trim())
                .map_err(|e| Error::invalid(format!("fixture parameter `{k}`: {e}")))?;
            obj.insert(k.trim().to_string(), value);
        }
        let mut outer = serde_json::Map::new();
        outer.insert(name.trim().to_string(), serde_json::Value::Object(obj));
        serde_json::from_value(serde_json::Value::Object(outer)).map_err(|e| Error::Config {
            path: "model".into(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug)]
enum Model {
    GaussianLocation {
        mu0: f64,
        tau0: f64,
        sigma: f64,
        n: usize,
        n_noise: usize,
    },
    LinearGaussian {
        h: Matrix,
        noise_sd: f64,
        prior_mean: Vec<f64>,
        prior_cov: Matrix,
    },
    Gpd {
        n: usize,
        grid_size: usize,
        grid: OnceLock<GridPosterior>,
    },
    TwoPoint,
}

/// `(E θ, Var θ, E s, Var s, Cov(θ,s))`.
pub type PriorMoments = (Vec<f64>, Matrix, Vec<f64>, Matrix, Matrix);

/// A simulator, its prior, observed data and an ABC-independent oracle.
#[derive(Debug)]
pub struct ModelFixture {
    pub spec: FixtureSpec,
    pub prior: PriorSpec,
    pub observed: Vec<f64>,
    pub s_obs: Vec<f64>,
    pub default_targets: Vec<TargetFunctional>,
    model: Model,
}

fn sample_sd(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

fn gaussian_stats(data: &[f64], noise: impl Iterator<Item = f64>) -> Vec<f64> {
    let mean = data.iter().sum::<f64>() / data.len() as f64;
    let mut s = vec![mean, sample_sd(data)];
    s.extend(noise);
    s
}

fn gpd_stats(data: &mut [f64]) -> Vec<f64> {
    data.sort_unstable_by(f64::total_cmp);
    let mut s: Vec<f64> = GPD_STAT_LADDER.iter().map(|&p| mat::quantile_sorted(data, p)).collect();
    s.push(data.iter().sum::<f64>() / data.len() as f64);
    s.push(sample_sd(data));
    s
}

impl ModelFixture {
    pub fn build(spec: &FixtureSpec) -> Result<Self> {
        match spec.clone() {
            FixtureSpec::GaussianLocation {
                mu0,
                tau0,
                sigma,
                n,
                xbar_obs,
                n_noise_stats,
            } => {
                if !(tau0 > 0.0 && sigma > 0.0 && n >= 1) {
                    return Err(Error::invalid("gaussian_location needs tau0, sigma > 0 and n ≥ 1"));
                }
                // Evenly spaced points standardised to mean 0 and sd 1.
                let z: Vec<f64> = (0..n).map(|k| k as f64 - (n - 1) as f64 / 2.0).collect();
                let zsd = sample_sd(&z);
                let observed: Vec<f64> = z
                    .iter()
                    .map(|v| xbar_obs + if zsd > 0.0 { sigma * v / zsd } else { 0.0 })
                    .collect();
                let s_obs = gaussian_stats(&observed, std::iter::repeat_n(0.0, n_noise_stats));
                Ok(Self {
                    spec: spec.clone(),
                    prior: PriorSpec::independent(vec![Marginal::Normal { mean: mu0, sd: tau0 }]),
                    observed,
                    s_obs,
                    default_targets: vec![TargetFunctional::coordinate(0)],
                    model: Model::GaussianLocation {
                        mu0,
                        tau0,
                        sigma,
                        n,
                        n_noise: n_noise_stats,
                    },
                })
            }
            FixtureSpec::LinearGaussian {
                h,
                noise_sd,
                prior_mean,
                prior_cov,
                s_obs,
            } => {
                let p = prior_mean.len();
                if h.cols() != p || s_obs.len() != h.rows() {
                    return Err(Error::invalid("linear_gaussian: H must be d×p and s_obs length d"));
                }
                if !(noise_sd > 0.0) {
                    return Err(Error::invalid("linear_gaussian: noise_sd must be > 0"));
                }
                let prior = PriorSpec::gaussian(prior_mean.clone(), prior_cov.clone());
                prior.validate()?;
                Ok(Self {
                    spec: spec.clone(),
                    prior,
                    observed: s_obs.clone(),
                    s_obs,
                    default_targets: (0..p).map(TargetFunctional::coordinate).collect(),
                    model: Model::LinearGaussian {
                        h,
                        noise_sd,
                        prior_mean,
                        prior_cov,
                    },
                })
            }
            FixtureSpec::Gpd {
                sigma_true,
                xi_true,
                n_exceedances,
                tau_grid,
                data_seed,
                grid_size,
            } => {
                if !(sigma_true > 0.0 && xi_true > -0.5 && n_exceedances >= 2 && grid_size >= 2) {
                    return Err(Error::invalid(
                        "gpd needs sigma_true > 0, xi_true > -0.5, n_exceedances ≥ 2, grid_size ≥ 2",
                    ));
                }
                if tau_grid.is_empty() || tau_grid.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
                    return Err(Error::invalid("gpd tau_grid values must lie in (0, 1)"));
                }
                let mut rng = draw_rng(data_seed, 0);
                let mut observed: Vec<f64> = (0..n_exceedances)
                    .map(|_| gpd_quantile(rng.random::<f64>(), sigma_true, xi_true))
                    .collect();
                let s_obs = gpd_stats(&mut observed.clone());
                observed.shrink_to_fit();
                Ok(Self {
                    spec: spec.clone(),
                    prior: gpd_prior(),
                    observed,
                    s_obs,
                    default_targets: tau_grid.iter().map(|&t| TargetFunctional::gpd_quantile(t)).collect(),
                    model: Model::Gpd {
                        n: n_exceedances,
                        grid_size,
                        grid: OnceLock::new(),
                    },
                })
            }
            FixtureSpec::TwoPoint { s_obs } => Ok(Self {
                spec: spec.clone(),
                prior: PriorSpec::independent(vec![Marginal::Categorical {
                    values: vec![0.0, 1.0],
                    weights: vec![1.0, 1.0],
                }]),
                observed: vec![s_obs],
                s_obs: vec![s_obs],
                default_targets: vec![TargetFunctional::coordinate(0)],
                model: Model::TwoPoint,
            }),
        }
    }

    pub fn gaussian_location(mu0: f64, tau0: f64, sigma: f64, n: usize, xbar_obs: f64, n_noise_stats: usize) -> Result<Self> {
        Self::build(&FixtureSpec::gaussian_location(mu0, tau0, sigma, n, xbar_obs, n_noise_stats))
    }

    pub fn linear_gaussian(h: Matrix, noise_sd: f64, prior_mean: Vec<f64>, prior_cov: Matrix, s_obs: Vec<f64>) -> Result<Self> {
        Self::build(&FixtureSpec::LinearGaussian {
            h,
            noise_sd,
            prior_mean,
            prior_cov,
            s_obs,
        })
    }

    pub fn gpd(sigma_true: f64, xi_true: f64, n_exceedances: usize, tau_grid: Vec<f64>) -> Result<Self> {
        Self::build(&FixtureSpec::Gpd {
            sigma_true,
            xi_true,
            n_exceedances,
            tau_grid,
            data_seed: default_data_seed(),
            grid_size: default_grid(),
        })
    }

    pub fn two_point(s_obs: f64) -> Result<Self> {
        Self::build(&FixtureSpec::TwoPoint { s_obs })
    }

    /// Exact posterior mean and covariance for the Gaussian models.
    pub fn gaussian_posterior(&self) -> Option<(Vec<f64>, Matrix)> {
        self.gaussian_posterior_at(&self.s_obs)
    }

    /// Gaussian-model posterior for an arbitrary observed statistic vector.
    pub fn gaussian_posterior_at(&self, s: &[f64]) -> Option<(Vec<f64>, Matrix)> {
        match &self.model {
            Model::GaussianLocation {
                mu0, tau0, sigma, n, ..
            } => {
                let prec = 1.0 / (tau0 * tau0) + *n as f64 / (sigma * sigma);
                let mean = (mu0 / (tau0 * tau0) + *n as f64 * s[0] / (sigma * sigma)) / prec;
                Some((vec![mean], Matrix::from_fn(1, 1, |_, _| 1.0 / prec)))
            }
            Model::LinearGaussian {
                h,
                noise_sd,
                prior_mean,
                prior_cov,
            } => {
                // Precision form: (Σ₀⁻¹ + HᵀH/σ²)⁻¹ (Σ₀⁻¹μ₀ + Hᵀs/σ²)
                let p = prior_mean.len();
                let s2 = noise_sd * noise_sd;
                let prior_prec = mat::solve_spd(prior_cov, &Matrix::identity(p)).ok()?;
                let hth = h.transpose().matmul(h).ok()?.scale(1.0 / s2);
                let post_prec = prior_prec.add(&hth).ok()?.symmetrized();
                let mut rhs = prior_prec.matvec(prior_mean).ok()?;
                let hts = h.transpose().matvec(s).ok()?;
                for (r, v) in rhs.iter_mut().zip(hts) {
                    *r += v / s2;
                }
                let cov = mat::solve_spd(&post_prec, &Matrix::identity(p)).ok()?.symmetrized();
                let mean = mat::solve_spd_vec(&post_prec, &rhs).ok()?;
                Some((mean, cov))
            }
            _ => None,
        }
    }

    /// Exact joint moments `(E θ, Var θ, E s, Var s, Cov(θ,s))` under the
    /// linear-Gaussian prior predictive.
    pub fn prior_moments(&self) -> Option<PriorMoments> {
        let Model::LinearGaussian {
            h,
            noise_sd,
            prior_mean,
            prior_cov,
        } = &self.model
        else {
            return None;
        };
        let mean_s = h.matvec(prior_mean).ok()?;
        let cov_ts = prior_cov.matmul(&h.transpose()).ok()?;
        let mut var_s = h.matmul(&cov_ts).ok()?;
        for i in 0..var_s.rows() {
            var_s[(i, i)] += noise_sd * noise_sd;
        }
        Some((prior_mean.clone(), prior_cov.clone(), mean_s, var_s, cov_ts))
    }

    /// Posterior mean of a target functional from the oracle.
    pub fn oracle_mean(&self, target: &TargetFunctional) -> Option<f64> {
        match (&self.model, &target.kind) {
            (Model::TwoPoint, TargetKind::Coordinate(0)) => self.two_point_posterior(),
            (Model::Gpd { .. }, kind) => {
                let grid = self.gpd_grid();
                match kind {
                    TargetKind::Coordinate(i) if *i < 2 => Some(grid.expectation(|t| t[*i])),
                    TargetKind::GpdQuantile { tau } => Some(grid.expectation(|t| gpd_quantile(*tau, t[0], t[1]))),
                    _ => None,
                }
            }
            (_, TargetKind::Coordinate(i)) => self.gaussian_posterior().and_then(|(m, _)| m.get(*i).copied()),
            _ => None,
        }
    }

    /// Posterior standard deviation of a target, when the oracle provides it.
    pub fn oracle_sd(&self, target: &TargetFunctional) -> Option<f64> {
        match (&self.model, &target.kind) {
            (Model::Gpd { .. }, TargetKind::GpdQuantile { tau }) => {
                let grid = self.gpd_grid();
                let m = grid.expectation(|t| gpd_quantile(*tau, t[0], t[1]));
                Some(grid.expectation(|t| (gpd_quantile(*tau, t[0], t[1]) - m).powi(2)).sqrt())
            }
            (Model::Gpd { .. }, TargetKind::Coordinate(i)) if *i < 2 => {
                let grid = self.gpd_grid();
                let m = grid.expectation(|t| t[*i]);
                Some(grid.expectation(|t| (t[*i] - m).powi(2)).sqrt())
            }
            (_, TargetKind::Coordinate(i)) => self.gaussian_posterior().map(|(_, c)| c[(*i, *i)].sqrt()),
            _ => None,
        }
    }

    /// Exact marginal posterior CDF of coordinate `i` (Gaussian models).
    pub fn marginal_cdf(&self, i: usize) -> Option<impl Fn(f64) -> f64> {
        let (mean, cov) = self.gaussian_posterior()?;
        let dist = Normal::new(*mean.get(i)?, cov[(i, i)].sqrt()).ok()?;
        Some(move |x: f64| dist.cdf(x))
    }

    /// Exact posterior quantile of coordinate `i` (Gaussian models).
    pub fn marginal_quantile(&self, i: usize, prob: f64) -> Option<f64> {
        let (mean, cov) = self.gaussian_posterior()?;
        let dist = Normal::new(*mean.get(i)?, cov[(i, i)].sqrt()).ok()?;
        Some(dist.inverse_cdf(prob))
    }

    /// P(θ = 1 | s_obs) for the two-point toy, by enumerating the prior
    /// support: the statistic equals θ, so only the matching atom survives.
    fn two_point_posterior(&self) -> Option<f64> {
        let PriorShape::Independent(ms) = &self.prior.shape else {
            return None;
        };
        let Marginal::Categorical { values, weights } = &ms[0] else {
            return None;
        };
        let (mut num, mut den) = (0.0, 0.0);
        for (v, w) in values.iter().zip(weights) {
            if *v == self.s_obs[0] {
                den += w;
                num += w * v;
            }
        }
        (den > 0.0).then(|| num / den)
    }

    /// Grid posterior over `(σ, ξ)` for the GPD model, built on first use.
    pub fn gpd_grid(&self) -> &GridPosterior {
        let Model::Gpd { grid_size, grid, .. } = &self.model else {
            panic!("gpd_grid called on a non-GPD fixture");
        };
        grid.get_or_init(|| GridPosterior::gpd(&self.observed, *grid_size))
    }

    pub fn exceedances(&self) -> Option<usize> {
        match &self.model {
            Model::Gpd { n, .. } => Some(*n),
            _ => None,
        }
    }
}

/// σ ~ log-normal(0, 1), ξ ~ uniform(−0.4, 0.9).
pub fn gpd_prior() -> PriorSpec {
    PriorSpec::independent(vec![
        Marginal::LogNormal { mu: 0.0, sigma: 1.0 },
        Marginal::Uniform { lo: -0.4, hi: 0.9 },
    ])
}

impl Simulator for ModelFixture {
    fn name(&self) -> &str {
        self.spec.name()
    }

    fn param_dim(&self) -> usize {
        match &self.model {
            Model::GaussianLocation { .. } | Model::TwoPoint => 1,
            Model::LinearGaussian { prior_mean, .. } => prior_mean.len(),
            Model::Gpd { .. } => 2,
        }
    }

    fn stat_dim(&self) -> usize {
        match &self.model {
            Model::GaussianLocation { n_noise, .. } => 2 + n_noise,
            Model::LinearGaussian { h, .. } => h.rows(),
            Model::Gpd { .. } => GPD_STAT_LADDER.len() + 2,
            Model::TwoPoint => 1,
        }
    }

    fn simulate(&self, theta: &[f64], rng: &mut DrawRng) -> Vec<f64> {
        match &self.model {
            Model::GaussianLocation { sigma, n, n_noise, .. } => {
                let data: Vec<f64> = (0..*n)
                    .map(|_| theta[0] + sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let noise: Vec<f64> = (0..*n_noise).map(|_| rng.sample(StandardNormal)).collect();
                gaussian_stats(&data, noise.into_iter())
            }
            Model::LinearGaussian { h, noise_sd, .. } => h
                .iter_rows()
                .map(|row| {
                    let signal: f64 = row.iter().zip(theta).map(|(a, b)| a * b).sum();
                    signal + noise_sd * rng.sample::<f64, _>(StandardNormal)
                })
                .collect(),
            Model::Gpd { n, .. } => {
                let mut data: Vec<f64> = (0..*n)
                    .map(|_| gpd_quantile(rng.random::<f64>(), theta[0], theta[1]))
                    .collect();
                gpd_stats(&mut data)
            }
            Model::TwoPoint => vec![theta[0]],
        }
    }
}

/// Normalised posterior mass on a tensor grid over `(σ, ξ)`.
///
/// The σ axis is uniform in `log σ`, where the log-normal prior is a
/// standard normal density; both axes span the prior's 0.1%–99.9% quantile
/// box. Weights include the trapezoidal rule and sum to one.
#[derive(Debug, Clone)]
pub struct GridPosterior {
    pub sigmas: Vec<f64>,
    pub xis: Vec<f64>,
    /// Row-major over (σ index, ξ index).
    pub weights: Vec<f64>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn trapezoid(i: usize, n: usize) -> f64 {
    if i == 0 || i + 1 == n {
        0.5
    } else {
        1.0
    }
}

impl GridPosterior {
    pub fn gpd(data: &[f64], size: usize) -> Self {
        let prior = gpd_prior();
        let bx = prior.quantile_box(0.001);
        let log_sig = linspace(bx.bounds[0][0].ln(), bx.bounds[0][1].ln(), size);
        let xis = linspace(bx.bounds[1][0], bx.bounds[1][1], size);
        let log_post: Vec<f64> = log_sig
            .par_iter()
            .flat_map_iter(|&ls| {
                let sigma = ls.exp();
                let log_prior = -0.5 * ls * ls;
                xis.iter().map(move |&xi| {
                    log_prior + data.iter().map(|&x| gpd_log_density(x, sigma, xi)).sum::<f64>()
                })
            })
            .collect();
        let peak = log_post.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = log_post
            .iter()
            .enumerate()
            .map(|(k, lp)| {
                let (i, j) = (k / size, k % size);
                trapezoid(i, size) * trapezoid(j, size) * (lp - peak).exp()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        Self {
            sigmas: log_sig.iter().map(|v| v.exp()).collect(),
            xis,
            weights: raw.iter().map(|w| w / total).collect(),
        }
    }

    /// Posterior expectation of `g(σ, ξ)`.
    pub fn expectation(&self, g: impl Fn(&[f64; 2]) -> f64) -> f64 {
        let n = self.xis.len();
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(k, w)| w * g(&[self.sigmas[k / n], self.xis[k % n]]))
            .sum()
    }
}

/// Named-parameter view used by reports.
pub fn describe(spec: &FixtureSpec) -> BTreeMap<String, String> {
    let v = serde_json::to_value(spec).expect("fixture serialises");
    let mut out = BTreeMap::new();
    if let Some((name, params)) = v.as_object().and_then(|o| o.iter().next()) {
        out.insert("name".into(), name.clone());
        if let Some(p) = params.as_object() {
            for (k, v) in p {
                out.insert(k.clone(), v.to_string());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conjugate_oracle_values() {
        let f = ModelFixture::gaussian_location(0.0, 1.0, 1.0, 4, 1.0, 0).unwrap();
        let m = f.oracle_mean(&TargetFunctional::coordinate(0)).unwrap();
        assert!((m - 0.8).abs() < 1e-12, "{m}");
        let f0 = ModelFixture::gaussian_location(0.0, 1.0, 1.0, 4, 0.0, 0).unwrap();
        assert!(f0.oracle_mean(&TargetFunctional::coordinate(0)).unwrap().abs() < 1e-12);
        let flat = ModelFixture::gaussian_location(0.0, 1e6, 1.0, 4, 1.0, 0).unwrap();
        assert!((flat.oracle_mean(&TargetFunctional::coordinate(0)).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn gaussian_observed_statistics() {
        let f = ModelFixture::gaussian_location(0.0, 1.0, 2.0, 5, 1.5, 3).unwrap();
        assert_eq!(f.s_obs.len(), 5);
        assert!((f.s_obs[0] - 1.5).abs() < 1e-14);
        assert!((f.s_obs[1] - 2.0).abs() < 1e-14);
        assert_eq!(&f.s_obs[2..], &[0.0, 0.0, 0.0]);
        assert_eq!(f.stat_dim(), 5);
    }

    #[test]
    fn linear_gaussian_worked_example() {
        // Precision I + HᵀH = [[3,1],[1,2]], Hᵀs = (3,2) ⇒ mean (0.8, 0.6).
        let h = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let f = ModelFixture::linear_gaussian(h, 1.0, vec![0.0, 0.0], Matrix::identity(2), vec![1.0, 2.0]).unwrap();
        let (mean, cov) = f.gaussian_posterior().unwrap();
        assert!((mean[0] - 0.8).abs() < 1e-14 && (mean[1] - 0.6).abs() < 1e-14);
        // inverse of [[3,1],[1,2]] is [[0.4,-0.2],[-0.2,0.6]]
        assert!((cov[(0, 0)] - 0.4).abs() < 1e-14);
        assert!((cov[(0, 1)] + 0.2).abs() < 1e-14);
        assert!((cov[(1, 1)] - 0.6).abs() < 1e-14);
    }

    #[test]
    fn linear_gaussian_limits() {
        let s = vec![0.3, -1.2];
        let exact = ModelFixture::linear_gaussian(Matrix::identity(2), 1e-6, vec![0.0, 0.0], Matrix::identity(2), s.clone())
            .unwrap();
        let (mean, _) = exact.gaussian_posterior().unwrap();
        assert!((mean[0] - 0.3).abs() < 1e-9 && (mean[1] + 1.2).abs() < 1e-9);

        let cov = Matrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let blind = ModelFixture::linear_gaussian(Matrix::zeros(2, 2), 1.0, vec![1.0, -1.0], cov.clone(), s).unwrap();
        let (mean, post_cov) = blind.gaussian_posterior().unwrap();
        assert!((mean[0] - 1.0).abs() < 1e-12 && (mean[1] + 1.0).abs() < 1e-12);
        assert!(post_cov.sub(&cov).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn gpd_quantile_closed_forms() {
        assert!((gpd_quantile(0.99, 1.0, 0.5) - 18.0).abs() < 1e-12);
        assert!((gpd_quantile(0.99, 1.0, 1e-9) - 4.60517).abs() < 1e-5);
        assert!((gpd_quantile(0.99, 1.0, 0.0) + (0.01f64).ln()).abs() < 1e-14);
    }

    #[test]
    fn gpd_branches_agree_at_switch() {
        for u in [0.5f64, 0.9, 0.99] {
            for xi in [GPD_SMALL_XI, -GPD_SMALL_XI] {
                let l = -(1.0 - u).ln();
                let main = (1.0 / xi) * (xi * l).exp_m1();
                let expanded = l * (1.0 + 0.5 * xi * l);
                assert!(((main - expanded) / main).abs() < 1e-6, "u={u} xi={xi}");
                // both sides of the switch through the public function
                let below = gpd_quantile(u, 1.0, xi * (1.0 - 1e-9));
                let above = gpd_quantile(u, 1.0, xi * (1.0 + 1e-9));
                assert!(((below - above) / above).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn gpd_sample_mean_converges() {
        let (sigma, xi) = (1.0, 0.2);
        let n = 100_000;
        let mut rng = draw_rng(77, 0);
        let xs: Vec<f64> = (0..n).map(|_| gpd_quantile(rng.random::<f64>(), sigma, xi)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let target = sigma / (1.0 - xi);
        // Var = σ²/((1−ξ)²(1−2ξ))
        let se = (sigma * sigma / ((1.0 - xi).powi(2) * (1.0 - 2.0 * xi)) / n as f64).sqrt();
        assert!((mean - target).abs() < 3.0 * se, "{mean} vs {target} (se {se})");
    }

    #[test]
    fn fixture_string_parsing() {
        let f: FixtureSpec = "gaussian_location:n=4,xbar_obs=1".parse().unwrap();
        assert_eq!(f, FixtureSpec::gaussian_location(0.0, 1.0, 1.0, 4, 1.0, 0));
        let g: FixtureSpec = "gpd:tau_grid=[0.9,0.99],n_exceedances=50".parse().unwrap();
        match g {
            FixtureSpec::Gpd {
                tau_grid, n_exceedances, ..
            } => {
                assert_eq!(tau_grid, vec![0.9, 0.99]);
                assert_eq!(n_exceedances, 50);
            }
            _ => panic!(),
        }
        assert!("gaussian_location:bogus=1".parse::<FixtureSpec>().is_err());
        assert!("nope".parse::<FixtureSpec>().is_err());
    }

    #[test]
    fn two_point_enumeration() {
        let f = ModelFixture::two_point(1.0).unwrap();
        assert_eq!(f.oracle_mean(&TargetFunctional::coordinate(0)), Some(1.0));
        let f0 = ModelFixture::two_point(0.0).unwrap();
        assert_eq!(f0.oracle_mean(&TargetFunctional::coordinate(0)), Some(0.0));
    }
}
