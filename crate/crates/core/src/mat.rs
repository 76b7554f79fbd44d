//! Small dense linear algebra: row-major matrices, order-stable moment
//! accumulation and symmetric positive-definite solves.
//!
//! Every sum over samples goes through [`stable_sum`], which sorts the
//! summands before a pairwise reduction. The result depends only on the
//! multiset of values, so means and covariances are bitwise identical under
//! any row permutation and any thread schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Jitter multipliers tried in order; the added ridge is `λ·mean(diag(A))·I`.
pub const JITTER_LADDER: [f64; 5] = [0.0, 1e-12, 1e-10, 1e-8, 1e-6];

/// Relative residual accepted by [`solve_spd`].
pub const SPD_RESIDUAL_TOL: f64 = 1e-8;

/// Row-major dense matrix; serialised as a list of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "matrix entries",
                expected: rows * cols,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix entries".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    context: "ragged rows",
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Column matrix from a slice.
    pub fn column(v: &[f64]) -> Self {
        Self {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.data[i * self.cols + j]).collect()
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                context: "matmul inner dimension",
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = out.row_mut(i);
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.cols != v.len() {
            return Err(Error::DimensionMismatch {
                context: "matvec",
                expected: self.cols,
                got: v.len(),
            });
        }
        Ok(self
            .iter_rows()
            .map(|r| r.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                context: "elementwise shape",
                expected: self.rows * self.cols,
                got: other.rows * other.cols,
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    /// `(A + Aᵀ)/2`; only meaningful for square matrices.
    pub fn symmetrized(&self) -> Matrix {
        Matrix::from_fn(self.rows, self.cols, |i, j| 0.5 * (self[(i, j)] + self[(j, i)]))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl TryFrom<Vec<Vec<f64>>> for Matrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Matrix::from_rows(&rows)
    }
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Self {
        m.iter_rows().map(<[f64]>::to_vec).collect()
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

fn pairwise(values: &[f64]) -> f64 {
    if values.len() <= 8 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise(&values[..mid]) + pairwise(&values[mid..])
}

/// Order-independent sum: sort by value, then cascade.
pub fn stable_sum(mut values: Vec<f64>) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    pairwise(&values)
}

pub fn stable_mean(values: &[f64]) -> f64 {
    stable_sum(values.to_vec()) / values.len() as f64
}

/// Type-7 (linear interpolation) quantile of ascending `sorted` data:
/// with `h = (n−1)·prob`, interpolates between order statistics `⌊h⌋` and
/// `⌊h⌋+1` (zero-based).
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    let h = (n - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= n || frac == 0.0 {
        sorted[lo.min(n - 1)]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Column means of an `M×k` sample matrix.
pub fn sample_mean(samples: &Matrix) -> Result<Vec<f64>> {
    if samples.rows == 0 {
        return Err(Error::NoSamples);
    }
    Ok((0..samples.cols)
        .map(|j| stable_sum(samples.col(j)) / samples.rows as f64)
        .collect())
}

/// Unbiased cross-covariance of paired samples, `p×d` for `M×p` and `M×d`.
pub fn sample_cov(x: &Matrix, y: &Matrix) -> Result<Matrix> {
    if x.rows != y.rows {
        return Err(Error::DimensionMismatch {
            context: "sample_cov rows",
            expected: x.rows,
            got: y.rows,
        });
    }
    if x.rows < 2 {
        return Err(Error::TooFewForCovariance(x.rows));
    }
    let xm = sample_mean(x)?;
    let ym = sample_mean(y)?;
    let xc: Vec<Vec<f64>> = (0..x.cols)
        .map(|i| x.col(i).into_iter().map(|v| v - xm[i]).collect())
        .collect();
    let yc: Vec<Vec<f64>> = (0..y.cols)
        .map(|j| y.col(j).into_iter().map(|v| v - ym[j]).collect())
        .collect();
    let denom = (x.rows - 1) as f64;
    Ok(Matrix::from_fn(x.cols, y.cols, |i, j| {
        let prods = xc[i].iter().zip(&yc[j]).map(|(a, b)| a * b).collect();
        stable_sum(prods) / denom
    }))
}

/// Lower Cholesky factor of a (possibly jittered) SPD matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Matrix,
    jitter: f64,
}

impl Cholesky {
    /// Plain factorization; `None` if a pivot is not safely positive.
    pub fn factor(a: &Matrix, jitter: f64) -> Option<Self> {
        let n = a.rows;
        let max_diag = a.diag().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let floor = (n as f64) * f64::EPSILON * max_diag;
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)] + jitter;
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > floor) || !d.is_finite() {
                return None;
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in j + 1..n {
                let mut s = 0.5 * (a[(i, j)] + a[(j, i)]);
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Some(Self { l, jitter })
    }

    pub fn lower(&self) -> &Matrix {
        &self.l
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Cheap condition estimate `(max Lᵢᵢ / min Lᵢᵢ)²`.
    pub fn condition_estimate(&self) -> f64 {
        let d = self.l.diag();
        let hi = d.iter().cloned().fold(0.0, f64::max);
        let lo = d.iter().cloned().fold(f64::INFINITY, f64::min);
        (hi / lo).powi(2)
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.rows;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[(i, k)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.l[(k, i)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        y
    }

    pub fn solve(&self, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(b.rows, b.cols);
        for c in 0..b.cols {
            let x = self.solve_vec(&b.col(c));
            for (r, v) in x.into_iter().enumerate() {
                out[(r, c)] = v;
            }
        }
        out
    }
}

fn jittered(a: &Matrix, jitter: f64) -> Matrix {
    let mut m = a.clone();
    for i in 0..m.rows {
        m[(i, i)] += jitter;
    }
    m
}

/// Solves `A X = B` for symmetric positive-definite `A` by Cholesky,
/// walking [`JITTER_LADDER`] until the factorization succeeds and the
/// residual against the jittered matrix satisfies
/// `max|(A+λI)X − B| ≤ 1e-8·max|B|`. One step of iterative refinement is
/// applied before the residual check.
pub fn solve_spd(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != a.cols {
        return Err(Error::DimensionMismatch {
            context: "solve_spd square",
            expected: a.rows,
            got: a.cols,
        });
    }
    if b.rows != a.rows {
        return Err(Error::DimensionMismatch {
            context: "solve_spd rhs rows",
            expected: a.rows,
            got: b.rows,
        });
    }
    let n = a.rows;
    if n == 0 {
        return Ok(Matrix::zeros(0, b.cols));
    }
    let scale = a.diag().iter().sum::<f64>() / n as f64;
    let b_norm = b.max_abs();
    let mut condition = f64::INFINITY;
    for &lambda in &JITTER_LADDER {
        if lambda > 0.0 && !(scale > 0.0) {
            break;
        }
        let jitter = lambda * scale;
        let Some(chol) = Cholesky::factor(a, jitter) else {
            continue;
        };
        condition = chol.condition_estimate();
        let aj = jittered(a, jitter);
        let mut x = chol.solve(b);
        let r = b.sub(&aj.matmul(&x)?)?;
        x = x.add(&chol.solve(&r))?;
        let resid = aj.matmul(&x)?.sub(b)?.max_abs();
        if resid <= SPD_RESIDUAL_TOL * b_norm && x.is_finite() {
            if jitter > 0.0 {
                log::debug!("solve_spd accepted jitter {jitter:.3e}");
            }
            return Ok(x);
        }
    }
    Err(Error::SingularCovariance { condition })
}

pub fn solve_spd_vec(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    Ok(solve_spd(a, &Matrix::column(b))?.into_vec())
}
