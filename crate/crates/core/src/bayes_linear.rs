//! Bayes linear estimation: the affine estimator `a + B·s` minimising the
//! expected squared error `E[(θ − a − Bs)ᵀ(θ − a − Bs)]`, with
//! `B = Cov(θ,s)·Var(s)⁻¹` and `a = E(θ) − B·E(s)`.
//!
//! Expectations are with respect to whatever distribution generated the
//! batch. A batch drawn under a truncated prior therefore yields the Bayes
//! linear fit for that truncated prior with no further adjustment.

use serde::{Deserialize, Serialize};

use crate::abc::SimulationBatch;
use crate::error::{Error, Result};
use crate::mat::{self, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesLinearModel {
    pub a: Vec<f64>,
    /// `p×d` coefficient matrix.
    pub b: Matrix,
    pub mean_theta: Vec<f64>,
    pub mean_s: Vec<f64>,
    pub var_theta: Matrix,
    pub var_s: Matrix,
    pub cov_theta_s: Matrix,
    /// Draws used; `None` when built from exact moments.
    pub n_fit: Option<usize>,
}

/// Fits the Bayes linear estimator from the empirical moments of a batch.
pub fn fit_bayes_linear(batch: &SimulationBatch) -> Result<BayesLinearModel> {
    fit_from_samples(&batch.thetas, &batch.stats)
}

pub fn fit_from_samples(thetas: &Matrix, stats: &Matrix) -> Result<BayesLinearModel> {
    let m = thetas.rows();
    let d = stats.cols();
    if stats.rows() != m {
        return Err(Error::DimensionMismatch {
            context: "bayes linear rows",
            expected: m,
            got: stats.rows(),
        });
    }
    if m < d + 2 {
        return Err(Error::InsufficientDraws {
            stats: d,
            needed: d + 2,
            got: m,
        });
    }
    let var_s = mat::sample_cov(stats, stats)?;
    if var_s.diag().iter().all(|v| *v == 0.0) {
        return Err(Error::ConstantStatistics);
    }
    BayesLinearModel::from_moments(
        mat::sample_mean(thetas)?,
        mat::sample_cov(thetas, thetas)?,
        mat::sample_mean(stats)?,
        var_s,
        mat::sample_cov(thetas, stats)?,
        Some(m),
    )
}

impl BayesLinearModel {
    /// Builds the estimator from given first and second moments.
    pub fn from_moments(
        mean_theta: Vec<f64>,
        var_theta: Matrix,
        mean_s: Vec<f64>,
        var_s: Matrix,
        cov_theta_s: Matrix,
        n_fit: Option<usize>,
    ) -> Result<Self> {
        let p = mean_theta.len();
        let d = mean_s.len();
        let shape_ok = var_theta.rows() == p
            && var_theta.cols() == p
            && var_s.rows() == d
            && var_s.cols() == d
            && cov_theta_s.rows() == p
            && cov_theta_s.cols() == d;
        if !shape_ok {
            return Err(Error::invalid("inconsistent moment dimensions"));
        }
        let bt = mat::solve_spd(&var_s, &cov_theta_s.transpose())?;
        let b = bt.transpose();
        let bs = b.matvec(&mean_s)?;
        let a = mean_theta.iter().zip(&bs).map(|(m, v)| m - v).collect();
        Ok(Self {
            a,
            b,
            mean_theta,
            mean_s,
            var_theta,
            var_s: var_s.symmetrized(),
            cov_theta_s,
            n_fit,
        })
    }

    pub fn param_dim(&self) -> usize {
        self.mean_theta.len()
    }

    pub fn stat_dim(&self) -> usize {
        self.mean_s.len()
    }

    /// `E(θ) + Cov(θ,s)·Var(s)⁻¹·(s − E(s))` from the stored moments.
    pub fn adjusted_expectation(&self, s: &[f64]) -> Result<Vec<f64>> {
        if s.len() != self.stat_dim() {
            return Err(Error::DimensionMismatch {
                context: "adjusted_expectation query",
                expected: self.stat_dim(),
                got: s.len(),
            });
        }
        let innov: Vec<f64> = s.iter().zip(&self.mean_s).map(|(a, b)| a - b).collect();
        let w = mat::solve_spd_vec(&self.var_s, &innov)?;
        let shift = self.cov_theta_s.matvec(&w)?;
        Ok(self.mean_theta.iter().zip(shift).map(|(m, v)| m + v).collect())
    }

    /// `Var(θ) − Cov(θ,s)·Var(s)⁻¹·Cov(s,θ)`, symmetrised.
    pub fn adjusted_variance(&self) -> Result<AdjustedVariance> {
        let x = mat::solve_spd(&self.var_s, &self.cov_theta_s.transpose())?;
        let explained = self.cov_theta_s.matmul(&x)?;
        let matrix = self.var_theta.sub(&explained)?.symmetrized();
        let p = matrix.rows();
        let min_eigenvalue = if p == 0 {
            0.0
        } else {
            let dm = nalgebra::DMatrix::from_row_slice(p, p, matrix.as_slice());
            dm.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
        };
        let warning = (min_eigenvalue < -1e-8).then(|| {
            let msg = format!(
                "adjusted variance has eigenvalue {min_eigenvalue:.3e}; moments are inconsistent"
            );
            log::warn!("{msg}");
            msg
        });
        Ok(AdjustedVariance {
            matrix,
            min_eigenvalue,
            warning,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjustedVariance {
    pub matrix: Matrix,
    pub min_eigenvalue: f64,
    pub warning: Option<String>,
}

/// Monte Carlo value of the criterion: `(1/M)·Σ‖θ⁽ᵐ⁾ − a − B·s⁽ᵐ⁾‖²`.
pub fn criterion_value(a: &[f64], b: &Matrix, batch: &SimulationBatch) -> Result<f64> {
    criterion_on(a, b, &batch.thetas, &batch.stats)
}

pub fn criterion_on(a: &[f64], b: &Matrix, thetas: &Matrix, stats: &Matrix) -> Result<f64> {
    let p = thetas.cols();
    if a.len() != p || b.rows() != p || b.cols() != stats.cols() || thetas.rows() != stats.rows() {
        return Err(Error::invalid("criterion_value dimension mismatch"));
    }
    if thetas.rows() == 0 {
        return Err(Error::NoSamples);
    }
    let terms = thetas
        .iter_rows()
        .zip(stats.iter_rows())
        .map(|(t, s)| {
            let pred = b.matvec(s).expect("checked");
            t.iter()
                .zip(a)
                .zip(pred)
                .map(|((t, a), bs)| (t - a - bs).powi(2))
                .sum::<f64>()
        })
        .collect();
    Ok(mat::stable_sum(terms) / thetas.rows() as f64)
}

/// Per-coordinate parameter transform applied before fitting.
///
/// Fits on transformed coordinates estimate expectations of the transformed
/// parameter; no transform family is claimed to restore homoscedasticity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordTransform {
    #[default]
    Raw,
    Log,
}

impl CoordTransform {
    pub fn apply(self, v: f64) -> Result<f64> {
        match self {
            CoordTransform::Raw => Ok(v),
            CoordTransform::Log if v > 0.0 => Ok(v.ln()),
            CoordTransform::Log => Err(Error::invalid(format!("log transform of nonpositive {v}"))),
        }
    }

    pub fn invert(self, v: f64) -> f64 {
        match self {
            CoordTransform::Raw => v,
            CoordTransform::Log => v.exp(),
        }
    }
}

/// Copy of `batch` with each θ coordinate transformed.
pub fn transform_thetas(batch: &SimulationBatch, transforms: &[CoordTransform]) -> Result<SimulationBatch> {
    if transforms.len() != batch.param_dim() {
        return Err(Error::DimensionMismatch {
            context: "parameter transforms",
            expected: batch.param_dim(),
            got: transforms.len(),
        });
    }
    let mut out = batch.clone();
    for i in 0..out.thetas.rows() {
        for (v, t) in out.thetas.row_mut(i).iter_mut().zip(transforms) {
            *v = t.apply(*v)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Matrix {
        Matrix::from_rows(&[vec![v]]).unwrap()
    }

    #[test]
    fn scalar_moment_examples() {
        // E(θ)=0, Var(s)=2, Cov=1, E(s)=0: adjusted expectation at s=2 is 1,
        // matching the conjugate normal posterior mean with unit prior and
        // unit noise variance.
        let m = BayesLinearModel::from_moments(vec![0.0], scalar(1.0), vec![0.0], scalar(2.0), scalar(1.0), None)
            .unwrap();
        assert!((m.adjusted_expectation(&[2.0]).unwrap()[0] - 1.0).abs() < 1e-15);
        assert_eq!(m.adjusted_expectation(&[0.0]).unwrap(), vec![0.0]);
        let av = m.adjusted_variance().unwrap();
        assert!((av.matrix[(0, 0)] - 0.5).abs() < 1e-15);
        assert!(av.warning.is_none());
    }

    #[test]
    fn uninformative_statistic() {
        let m = BayesLinearModel::from_moments(vec![3.0], scalar(2.0), vec![1.0], scalar(5.0), scalar(0.0), None)
            .unwrap();
        for s in [-10.0, 1.0, 7.5] {
            assert_eq!(m.adjusted_expectation(&[s]).unwrap(), vec![3.0]);
        }
        assert_eq!(m.adjusted_variance().unwrap().matrix[(0, 0)], 2.0);
    }

    #[test]
    fn inconsistent_moments_warn() {
        let m = BayesLinearModel::from_moments(vec![0.0], scalar(0.1), vec![0.0], scalar(1.0), scalar(1.0), None)
            .unwrap();
        let av = m.adjusted_variance().unwrap();
        assert!(av.min_eigenvalue < -0.5);
        assert!(av.warning.is_some());
    }

    #[test]
    fn query_length_checked() {
        let m = BayesLinearModel::from_moments(vec![0.0], scalar(1.0), vec![0.0], scalar(1.0), scalar(0.5), None)
            .unwrap();
        assert!(m.adjusted_expectation(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn transforms() {
        assert_eq!(CoordTransform::Log.apply(1.0).unwrap(), 0.0);
        assert!(CoordTransform::Log.apply(0.0).is_err());
        assert_eq!(CoordTransform::Log.invert(0.0), 1.0);
        assert_eq!(CoordTransform::Raw.apply(-2.0).unwrap(), -2.0);
    }
}
