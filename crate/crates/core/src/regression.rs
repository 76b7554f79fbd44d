//! Basis expansions of summary statistics and least-squares fitting of
//! responses on them, with multicollinearity diagnostics.
//!
//! Fits centre the design and responses (the intercept is never penalised),
//! scale each design column to unit norm and solve by Householder QR. The
//! reported condition number and VIFs refer to the centred, column-scaled
//! design, so they do not depend on the units of individual statistics.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::{self, Matrix};

/// VIF value reported for numerically perfect collinearity.
pub const VIF_SENTINEL: f64 = 1e18;
/// VIFs above this are reported as [`VIF_SENTINEL`].
pub const VIF_CUTOFF: f64 = 1e12;
/// Unpenalised fits refuse designs whose scaled condition number exceeds this.
pub const RANK_CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub enum BasisKind {
    Identity,
    Polynomial { degree: u32 },
    Powers { exponents: Vec<Vec<u32>> },
    /// Named elementwise transform: `log`, `abs` or `square`.
    Custom { name: String },
}

/// Basis expansion `f(s)`; persisted as a flat object such as
/// `{"kind": "polynomial", "degree": 2, "include_intercept": true}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BasisRepr", into = "BasisRepr")]
pub struct BasisSpec {
    pub kind: BasisKind,
    pub include_intercept: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BasisRepr {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    degree: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    exponents: Option<Vec<Vec<u32>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(default = "default_true")]
    include_intercept: bool,
}

impl TryFrom<BasisRepr> for BasisSpec {
    type Error = String;
    fn try_from(r: BasisRepr) -> std::result::Result<Self, String> {
        let kind = match (r.kind.as_str(), r.degree, r.exponents, r.name) {
            ("identity", None, None, None) => BasisKind::Identity,
            ("polynomial", Some(degree), None, None) => BasisKind::Polynomial { degree },
            ("powers", None, Some(exponents), None) => BasisKind::Powers { exponents },
            ("custom", None, None, Some(name)) => BasisKind::Custom { name },
            (k, ..) => {
                return Err(format!(
                    "basis kind `{k}` takes: identity (), polynomial (degree), powers (exponents), custom (name)"
                ))
            }
        };
        Ok(BasisSpec {
            kind,
            include_intercept: r.include_intercept,
        })
    }
}

impl From<BasisSpec> for BasisRepr {
    fn from(b: BasisSpec) -> Self {
        let mut r = BasisRepr {
            kind: String::new(),
            degree: None,
            exponents: None,
            name: None,
            include_intercept: b.include_intercept,
        };
        r.kind = match b.kind {
            BasisKind::Identity => "identity".into(),
            BasisKind::Polynomial { degree } => {
                r.degree = Some(degree);
                "polynomial".into()
            }
            BasisKind::Powers { exponents } => {
                r.exponents = Some(exponents);
                "powers".into()
            }
            BasisKind::Custom { name } => {
                r.name = Some(name);
                "custom".into()
            }
        };
        r
    }
}

fn default_true() -> bool {
    true
}

impl Default for BasisSpec {
    fn default() -> Self {
        Self::identity()
    }
}

impl BasisSpec {
    pub fn identity() -> Self {
        Self {
            kind: BasisKind::Identity,
            include_intercept: true,
        }
    }

    pub fn polynomial(degree: u32) -> Self {
        Self {
            kind: BasisKind::Polynomial { degree },
            include_intercept: true,
        }
    }

    pub fn powers(exponents: Vec<Vec<u32>>) -> Self {
        Self {
            kind: BasisKind::Powers { exponents },
            include_intercept: true,
        }
    }

    pub fn validate(&self, input_dim: usize) -> Result<()> {
        match &self.kind {
            BasisKind::Identity => Ok(()),
            BasisKind::Polynomial { degree } if *degree >= 1 => Ok(()),
            BasisKind::Polynomial { .. } => Err(Error::invalid("polynomial degree must be ≥ 1")),
            BasisKind::Powers { exponents } => {
                if exponents.is_empty() {
                    return Err(Error::invalid("powers basis needs at least one exponent vector"));
                }
                for e in exponents {
                    if e.len() != input_dim {
                        return Err(Error::DimensionMismatch {
                            context: "powers exponent vector",
                            expected: input_dim,
                            got: e.len(),
                        });
                    }
                }
                Ok(())
            }
            BasisKind::Custom { name } => match name.as_str() {
                "log" | "abs" | "square" => Ok(()),
                other => Err(Error::invalid(format!("unknown custom basis `{other}`"))),
            },
        }
    }

    /// Exponent vectors in output order, for monomial bases.
    ///
    /// Polynomial bases are graded: all degree-1 terms, then degree 2, and
    /// so on; within a degree, exponent vectors run in decreasing
    /// lexicographic order (`s1², s1·s2, s2²`).
    pub fn monomials(&self, input_dim: usize) -> Option<Vec<Vec<u32>>> {
        match &self.kind {
            BasisKind::Identity => Some(
                (0..input_dim)
                    .map(|i| (0..input_dim).map(|j| u32::from(i == j)).collect())
                    .collect(),
            ),
            BasisKind::Polynomial { degree } => {
                let mut out = Vec::new();
                for deg in 1..=*degree {
                    let mut cur = vec![0u32; input_dim];
                    graded(input_dim, 0, deg, &mut cur, &mut out);
                }
                Some(out)
            }
            BasisKind::Powers { exponents } => Some(exponents.clone()),
            BasisKind::Custom { .. } => None,
        }
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        self.monomials(input_dim).map_or(input_dim, |m| m.len())
    }

    pub fn labels(&self, input_dim: usize) -> Vec<String> {
        match self.monomials(input_dim) {
            Some(ms) => ms.iter().map(|e| monomial_label(e)).collect(),
            None => {
                let BasisKind::Custom { name } = &self.kind else {
                    unreachable!()
                };
                (0..input_dim).map(|j| format!("{name}(s{})", j + 1)).collect()
            }
        }
    }
}

fn graded(dim: usize, pos: usize, remaining: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if pos + 1 == dim {
        cur[pos] = remaining;
        out.push(cur.clone());
        cur[pos] = 0;
        return;
    }
    if dim == 0 {
        return;
    }
    for e in (0..=remaining).rev() {
        cur[pos] = e;
        graded(dim, pos + 1, remaining - e, cur, out);
    }
    cur[pos] = 0;
}

fn monomial_label(exps: &[u32]) -> String {
    let parts: Vec<String> = exps
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > 0)
        .map(|(j, &e)| {
            if e == 1 {
                format!("s{}", j + 1)
            } else {
                format!("s{}^{}", j + 1, e)
            }
        })
        .collect();
    if parts.is_empty() {
        "1".into()
    } else {
        parts.join("*")
    }
}

/// Expands one statistic vector into basis features `f(s)`.
pub fn expand_basis(s: &[f64], spec: &BasisSpec) -> Result<Vec<f64>> {
    if let BasisKind::Identity = spec.kind {
        return Ok(s.to_vec());
    }
    if let BasisKind::Custom { name } = &spec.kind {
        let f: fn(f64) -> f64 = match name.as_str() {
            "log" => f64::ln,
            "abs" => f64::abs,
            "square" => |v| v * v,
            other => return Err(Error::invalid(format!("unknown custom basis `{other}`"))),
        };
        return s
            .iter()
            .enumerate()
            .map(|(j, &v)| {
                let out = f(v);
                if out.is_finite() {
                    Ok(out)
                } else {
                    Err(Error::BasisOverflow(format!("{name}(s{})", j + 1)))
                }
            })
            .collect();
    }
    let monomials = spec.monomials(s.len()).expect("monomial basis");
    monomials
        .iter()
        .map(|exps| {
            if exps.len() != s.len() {
                return Err(Error::DimensionMismatch {
                    context: "basis input",
                    expected: exps.len(),
                    got: s.len(),
                });
            }
            let v = exps
                .iter()
                .zip(s)
                .fold(1.0, |acc, (&e, &x)| acc * x.powi(e as i32));
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::BasisOverflow(monomial_label(exps)))
            }
        })
        .collect()
}

/// Expands every row of an `M×d` statistic matrix.
pub fn expand_matrix(stats: &Matrix, spec: &BasisSpec) -> Result<Matrix> {
    spec.validate(stats.cols())?;
    let q = spec.output_dim(stats.cols());
    let mut data = Vec::with_capacity(stats.rows() * q);
    for row in stats.iter_rows() {
        data.extend(expand_basis(row, spec)?);
    }
    Matrix::new(stats.rows(), q, data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: Vec<f64>,
    /// `p×q`: one row per response.
    pub coefficients: Matrix,
    /// Weighted mean squared residual per response.
    pub residual_mss: Vec<f64>,
    pub condition_number: f64,
    pub vifs: Vec<f64>,
    pub ridge_lambda: f64,
}

impl LinearFit {
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.coefficients.matvec(x)?;
        for (o, a) in out.iter_mut().zip(&self.intercept) {
            *o += a;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FitOptions<'a> {
    pub ridge_lambda: f64,
    /// Nonnegative observation weights; `None` means equal weights.
    pub weights: Option<&'a [f64]>,
    /// When false the fit passes through the origin (no centring).
    pub no_intercept: bool,
}

/// Least squares of `responses` (`M×p`) on `design` (`M×q`) with an
/// unpenalised intercept and optional ridge penalty on the slopes.
pub fn fit_linear(design: &Matrix, responses: &Matrix, ridge_lambda: f64) -> Result<LinearFit> {
    fit_linear_with(
        design,
        responses,
        &FitOptions {
            ridge_lambda,
            ..Default::default()
        },
    )
}

struct Prepared {
    /// Centred (or raw), weighted, unit-norm design columns.
    cols: Vec<Vec<f64>>,
    norms: Vec<f64>,
    x_center: Vec<f64>,
    row_mult: Option<Vec<f64>>,
}

fn prepare(design: &Matrix, opts: &FitOptions<'_>) -> Result<Prepared> {
    let m = design.rows();
    let row_mult = match opts.weights {
        None => None,
        Some(w) => {
            if w.len() != m {
                return Err(Error::DimensionMismatch {
                    context: "fit weights",
                    expected: m,
                    got: w.len(),
                });
            }
            if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::invalid("weights must be finite and nonnegative"));
            }
            let total = mat::stable_sum(w.to_vec());
            if !(total > 0.0) {
                return Err(Error::invalid("weights sum to zero"));
            }
            Some(w.iter().map(|v| v * m as f64 / total).collect::<Vec<_>>())
        }
    };
    let x_center = center_of(design, row_mult.as_deref(), opts.no_intercept);
    let mut cols = Vec::with_capacity(design.cols());
    let mut norms = Vec::with_capacity(design.cols());
    for j in 0..design.cols() {
        let mut c: Vec<f64> = design.col(j).into_iter().map(|v| v - x_center[j]).collect();
        if let Some(rm) = &row_mult {
            for (v, w) in c.iter_mut().zip(rm) {
                *v *= w.sqrt();
            }
        }
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut c {
                *v /= norm;
            }
        }
        cols.push(c);
        norms.push(norm);
    }
    Ok(Prepared {
        cols,
        norms,
        x_center,
        row_mult,
    })
}

fn center_of(x: &Matrix, row_mult: Option<&[f64]>, skip: bool) -> Vec<f64> {
    if skip {
        return vec![0.0; x.cols()];
    }
    match row_mult {
        None => mat::sample_mean(x).expect("nonempty design"),
        Some(w) => {
            let total = mat::stable_sum(w.to_vec());
            (0..x.cols())
                .map(|j| {
                    let prods = x.col(j).iter().zip(w).map(|(v, w)| v * w).collect();
                    mat::stable_sum(prods) / total
                })
                .collect()
        }
    }
}

/// Householder QR of the column set `a`, applying the same reflections to
/// each column of `b`. Returns upper-triangular `R` (`q×q`) and the leading
/// `q` entries of `Qᵀb` per right-hand side.
fn householder(mut a: Vec<Vec<f64>>, mut b: Vec<Vec<f64>>) -> (Matrix, Vec<Vec<f64>>) {
    let q = a.len();
    let n = a.first().map_or(0, Vec::len);
    let mut r = Matrix::zeros(q, q);
    for k in 0..q.min(n) {
        let norm = a[k][k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            for j in k + 1..q {
                r[(k, j)] = a[j][k];
            }
            continue;
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v = a[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        let reflect = |col: &mut Vec<f64>| {
            let dot: f64 = v.iter().zip(&col[k..]).map(|(x, y)| x * y).sum();
            let t = 2.0 * dot / vnorm2;
            for (c, x) in col[k..].iter_mut().zip(&v) {
                *c -= t * x;
            }
        };
        for col in a.iter_mut().skip(k + 1) {
            reflect(col);
        }
        for col in b.iter_mut() {
            reflect(col);
        }
        r[(k, k)] = alpha;
        for j in k + 1..q {
            r[(k, j)] = a[j][k];
        }
    }
    let top = b.into_iter().map(|mut c| {
        c.truncate(q);
        c.resize(q, 0.0);
        c
    });
    (r, top.collect())
}

fn back_substitute(r: &Matrix, c: &[f64]) -> Vec<f64> {
    let q = r.rows();
    let mut x = c.to_vec();
    for i in (0..q).rev() {
        let mut s = x[i];
        for j in i + 1..q {
            s -= r[(i, j)] * x[j];
        }
        x[i] = if r[(i, i)] != 0.0 { s / r[(i, i)] } else { 0.0 };
    }
    x
}

/// Ratio of extreme singular values of `R` (equal to those of the design).
fn condition_of(r: &Matrix) -> f64 {
    if r.rows() == 0 {
        return 1.0;
    }
    let dm = DMatrix::from_row_slice(r.rows(), r.cols(), r.as_slice());
    let sv = dm.singular_values();
    let hi = sv.iter().cloned().fold(0.0, f64::max);
    let lo = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if lo > 0.0 && hi.is_finite() {
        (hi / lo).max(1.0)
    } else {
        f64::INFINITY
    }
}

/// VIFs from the correlation matrix `RᵀR` of the unit-norm design, each by
/// regressing one column on the rest with [`mat::solve_spd`].
fn vifs_from_r(r: &Matrix, norms: &[f64]) -> Vec<f64> {
    let q = r.cols();
    if q == 1 {
        return vec![if norms[0] > 0.0 { 1.0 } else { VIF_SENTINEL }];
    }
    let corr = r.transpose().matmul(r).expect("square");
    (0..q)
        .map(|j| {
            if norms[j] == 0.0 {
                return VIF_SENTINEL;
            }
            let others: Vec<usize> = (0..q).filter(|&k| k != j).collect();
            let sub = Matrix::from_fn(q - 1, q - 1, |a, b| corr[(others[a], others[b])]);
            let rhs: Vec<f64> = others.iter().map(|&k| corr[(k, j)]).collect();
            let Ok(beta) = mat::solve_spd_vec(&sub, &rhs) else {
                return VIF_SENTINEL;
            };
            let r2: f64 = beta.iter().zip(&rhs).map(|(a, b)| a * b).sum::<f64>() / corr[(j, j)];
            let vif = 1.0 / (1.0 - r2);
            if !(vif > 0.0) || vif > VIF_CUTOFF || !vif.is_finite() {
                VIF_SENTINEL
            } else {
                vif
            }
        })
        .collect()
}

pub fn fit_linear_with(design: &Matrix, responses: &Matrix, opts: &FitOptions<'_>) -> Result<LinearFit> {
    let m = design.rows();
    let q = design.cols();
    let p = responses.cols();
    if responses.rows() != m {
        return Err(Error::DimensionMismatch {
            context: "fit_linear responses rows",
            expected: m,
            got: responses.rows(),
        });
    }
    if q == 0 {
        return Err(Error::invalid("design has no columns"));
    }
    if m < q + 1 {
        return Err(Error::InsufficientDraws {
            stats: q,
            needed: q + 1,
            got: m,
        });
    }
    if !(opts.ridge_lambda >= 0.0) || !opts.ridge_lambda.is_finite() {
        return Err(Error::invalid("ridge_lambda must be finite and ≥ 0"));
    }
    if !design.is_finite() || !responses.is_finite() {
        return Err(Error::NonFinite("regression inputs".into()));
    }

    let prep = prepare(design, opts)?;
    let y_center = center_of(responses, prep.row_mult.as_deref(), opts.no_intercept);
    let ycols: Vec<Vec<f64>> = (0..p)
        .map(|k| {
            let mut c: Vec<f64> = responses.col(k).into_iter().map(|v| v - y_center[k]).collect();
            if let Some(rm) = &prep.row_mult {
                for (v, w) in c.iter_mut().zip(rm) {
                    *v *= w.sqrt();
                }
            }
            c
        })
        .collect();

    let (r, qty) = householder(prep.cols.clone(), ycols);
    let condition = condition_of(&r);

    let gammas: Vec<Vec<f64>> = if opts.ridge_lambda == 0.0 {
        if !(condition <= RANK_CONDITION_LIMIT) {
            return Err(Error::RankDeficient { condition });
        }
        qty.iter().map(|c| back_substitute(&r, c)).collect()
    } else {
        // [R; √λ·D⁻¹] against [Qᵀy; 0] solves the ridge problem in scaled units.
        let sl = opts.ridge_lambda.sqrt();
        let aug_cols: Vec<Vec<f64>> = (0..q)
            .map(|j| {
                let mut c = r.col(j);
                c.extend((0..q).map(|i| {
                    if i == j {
                        sl / if prep.norms[j] > 0.0 { prep.norms[j] } else { 1.0 }
                    } else {
                        0.0
                    }
                }));
                c
            })
            .collect();
        let aug_rhs: Vec<Vec<f64>> = qty
            .iter()
            .map(|c| {
                let mut v = c.clone();
                v.extend(std::iter::repeat_n(0.0, q));
                v
            })
            .collect();
        let (r2, qty2) = householder(aug_cols, aug_rhs);
        qty2.iter().map(|c| back_substitute(&r2, c)).collect()
    };

    let coefficients = Matrix::from_fn(p, q, |k, j| {
        if prep.norms[j] > 0.0 {
            gammas[k][j] / prep.norms[j]
        } else {
            0.0
        }
    });
    let intercept: Vec<f64> = (0..p)
        .map(|k| {
            if opts.no_intercept {
                0.0
            } else {
                let shift: f64 = (0..q).map(|j| coefficients[(k, j)] * prep.x_center[j]).sum();
                y_center[k] - shift
            }
        })
        .collect();

    let residual_mss = (0..p)
        .map(|k| {
            let sq: Vec<f64> = (0..m)
                .map(|i| {
                    let fitted: f64 = intercept[k]
                        + design
                            .row(i)
                            .iter()
                            .zip(coefficients.row(k))
                            .map(|(x, b)| x * b)
                            .sum::<f64>();
                    let res = responses[(i, k)] - fitted;
                    let w = prep.row_mult.as_ref().map_or(1.0, |rm| rm[i]);
                    w * res * res
                })
                .collect();
            mat::stable_sum(sq) / m as f64
        })
        .collect();

    if !coefficients.is_finite() {
        return Err(Error::NonFinite("regression coefficients".into()));
    }

    Ok(LinearFit {
        intercept,
        coefficients,
        residual_mss,
        condition_number: condition,
        vifs: vifs_from_r(&r, &prep.norms),
        ridge_lambda: opts.ridge_lambda,
    })
}

/// Condition number of the centred, column-scaled design and the variance
/// inflation factor of each column.
pub fn condition_diagnostics(design: &Matrix) -> Result<(f64, Vec<f64>)> {
    if design.rows() < 2 {
        return Err(Error::TooFewForCovariance(design.rows()));
    }
    let prep = prepare(design, &FitOptions::default())?;
    let (r, _) = householder(prep.cols, Vec::new());
    Ok((condition_of(&r), vifs_from_r(&r, &prep.norms)))
}
