//! Marginal adjustment: estimate each parameter's marginal posterior with
//! its own one-dimensional constructed summary, then swap those margins
//! into a joint ABC sample by rank matching so the joint sample keeps its
//! rank dependence.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::abc::{AcceptanceInfo, Provenance, WeightedPosterior};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::mat::{self, Matrix};
use crate::models::ModelFixture;
use crate::rng::derive_seed;
use crate::semiauto::{Pipeline, TargetFunctional};

/// Equally weighted draws approximating one marginal posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalEstimate {
    pub coordinate: usize,
    pub samples: Vec<f64>,
    pub provenance: Provenance,
    pub epsilon: f64,
    pub accepted: usize,
}

/// Runs the semi-automatic pipeline with the single target `θᵢ` under the
/// seed derived for coordinate `i`.
pub fn estimate_marginal(i: usize, config: &RunConfig, fixture: &ModelFixture) -> Result<MarginalEstimate> {
    let mut cfg = config.clone();
    cfg.seed = derive_seed(config.seed, &format!("marginal/{i}"));
    cfg.targets = Some(vec![TargetFunctional::coordinate(i)]);
    cfg.out_dir = None;
    let run = Pipeline::new(&cfg, fixture)?.run()?;
    let mut post = run.infer.final_posterior().clone();
    if !post.is_uniform() {
        post = post.resample_systematic(post.len(), cfg.seed);
    }
    let mut provenance = post.provenance.clone();
    provenance
        .notes
        .insert("summary".into(), format!("constructed statistic for coordinate:{i}"));
    Ok(MarginalEstimate {
        coordinate: i,
        samples: post.thetas.col(i),
        provenance,
        epsilon: post.acceptance.epsilon,
        accepted: post.len(),
    })
}

/// [`estimate_marginal`] for several coordinates in parallel.
pub fn estimate_marginals(coords: &[usize], config: &RunConfig, fixture: &ModelFixture) -> Result<Vec<MarginalEstimate>> {
    coords
        .par_iter()
        .map(|&i| estimate_marginal(i, config, fixture))
        .collect()
}

/// Ordinal ranks `0..n`, ties broken by position.
pub fn ordinal_ranks(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut ranks = vec![0; values.len()];
    for (r, &i) in order.iter().enumerate() {
        ranks[i] = r;
    }
    ranks
}

/// `n` evenly spaced type-7 quantiles (probabilities `r/(n−1)`) of a sorted
/// sample. Positions are computed in integer arithmetic so that `n` equal
/// to the sample size returns the sample itself.
pub fn even_quantiles(sorted: &[f64], n: usize) -> Vec<f64> {
    let len = sorted.len();
    if n == 1 {
        return vec![mat::quantile_sorted(sorted, 0.5)];
    }
    (0..n)
        .map(|r| {
            let num = (len - 1) * r;
            let den = n - 1;
            let (k, rem) = (num / den, num % den);
            if rem == 0 {
                sorted[k]
            } else {
                let h = rem as f64 / den as f64;
                sorted[k] + h * (sorted[k + 1] - sorted[k])
            }
        })
        .collect()
}

/// Replaces the margins named by `marginals` in a uniformly weighted joint
/// sample. The value of rank `r` in column `i` becomes the `r`-th of `N`
/// evenly spaced quantiles of marginal `i`; other columns are untouched.
pub fn marginal_remap(joint: &WeightedPosterior, marginals: &[MarginalEstimate]) -> Result<WeightedPosterior> {
    if joint.is_empty() {
        return Err(Error::NoSamples);
    }
    if !joint.is_uniform() {
        return Err(Error::NonUniformWeights);
    }
    let n = joint.len();
    let p = joint.thetas.cols();
    let mut covered = vec![false; p];
    let mut out = joint.clone();
    for m in marginals {
        let i = m.coordinate;
        if i >= p || covered[i] {
            return Err(Error::invalid(format!("marginal coordinate {i} is out of range or repeated")));
        }
        covered[i] = true;
        if m.samples.len() < 2 {
            return Err(Error::invalid(format!(
                "marginal {i} has {} draws; need at least 2",
                m.samples.len()
            )));
        }
        if m.samples.len() < n {
            return Err(Error::invalid(format!(
                "marginal {i} has {} draws, fewer than the joint's {n}",
                m.samples.len()
            )));
        }
        if m.samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("marginal {i} samples")));
        }
        let mut sorted = m.samples.clone();
        sorted.sort_by(f64::total_cmp);
        let q = even_quantiles(&sorted, n);
        let ranks = ordinal_ranks(&joint.thetas.col(i));
        for (row, r) in ranks.into_iter().enumerate() {
            out.thetas.row_mut(row)[i] = q[r];
        }
        out.provenance
            .notes
            .insert(format!("marginal/{i}"), m.provenance.projector_id.clone().unwrap_or_default());
    }
    out.provenance.stage = "marginal_remap".into();
    Ok(out)
}

/// Spearman correlation matrix from ordinal ranks.
pub fn spearman_matrix(thetas: &Matrix) -> Matrix {
    let p = thetas.cols();
    let ranks: Vec<Vec<f64>> = (0..p)
        .map(|j| ordinal_ranks(&thetas.col(j)).into_iter().map(|r| r as f64).collect())
        .collect();
    let rm = Matrix::from_fn(thetas.rows(), p, |i, j| ranks[j][i]);
    let cov = mat::sample_cov(&rm, &rm).unwrap_or_else(|_| Matrix::zeros(p, p));
    Matrix::from_fn(p, p, |a, b| {
        let den = (cov[(a, a)] * cov[(b, b)]).sqrt();
        if den > 0.0 {
            cov[(a, b)] / den
        } else {
            0.0
        }
    })
}

/// Kolmogorov–Smirnov distance between a sample and a continuous CDF.
pub fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Resamples a weighted joint sample if needed, estimates the requested
/// margins and remaps them into it.
pub fn run_marginal_adjust(
    joint: &WeightedPosterior,
    coords: &[usize],
    config: &RunConfig,
    fixture: &ModelFixture,
) -> Result<(Vec<MarginalEstimate>, WeightedPosterior)> {
    let uniform = if joint.is_uniform() {
        joint.clone()
    } else {
        joint.resample_systematic(joint.len(), config.seed)
    };
    let marginals = estimate_marginals(coords, config, fixture)?;
    let remapped = marginal_remap(&uniform, &marginals)?;
    Ok((marginals, remapped))
}

/// Uniformly weighted posterior over the rows of `thetas`; used for joint
/// samples built outside the rejection step.
pub fn uniform_posterior(thetas: Matrix, seed: u64, stage: &str) -> WeightedPosterior {
    let n = thetas.rows();
    WeightedPosterior {
        thetas,
        weights: vec![1.0 / n as f64; n],
        acceptance: AcceptanceInfo {
            epsilon: 0.0,
            indices: (0..n).collect(),
            distances: vec![0.0; n],
            scales: vec![],
            total_draws: n,
        },
        provenance: Provenance {
            seed,
            stage: stage.into(),
            ..Default::default()
        },
    }
}
