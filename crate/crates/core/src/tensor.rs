//! Dense matrices and the numerically careful kernels the density models
//! are built from: log-sum-exp, Cholesky factorization with ridge
//! escalation, Gaussian log-density and weighted moment estimation.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Relative floor on Cholesky pivots; anything below is treated as a
/// rank deficiency and triggers ridge escalation.
const PIVOT_RTOL: f64 = 1e-12;

/// Row-major dense matrix of finite `f64`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite entry at ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
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

    pub fn from_diag(diag: &[f64]) -> Result<Self> {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        Self::new(m.rows, m.cols, m.data)
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::invalid(format!(
                    "row {i} has length {}, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
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

    pub fn row_iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols))
            .map(|i| self[(i, i)])
            .collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::invalid(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        Ok(out)
    }

    /// Largest absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        self.row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &Matrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    /// `self * alpha`.
    pub fn scaled(&self, alpha: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * alpha).collect(),
        }
    }

    /// Returns `self + ridge * I`.
    pub fn add_ridge(&self, ridge: f64) -> Matrix {
        let mut m = self.clone();
        for i in 0..self.rows.min(self.cols) {
            m[(i, i)] += ridge;
        }
        m
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{}) ", self.rows, self.cols)?;
        f.debug_list().entries(self.row_iter()).finish()
    }
}

/// Cholesky factor `L` of a symmetric positive definite matrix together
/// with its log-determinant and the ridge that had to be added.
#[derive(Clone, Debug, PartialEq)]
pub struct SpdFactor {
    lower: Matrix,
    log_det: f64,
    ridge_used: f64,
}

impl SpdFactor {
    /// Reassembles a factor from stored parts, checking the triangular
    /// structure and the log-determinant.
    pub fn from_parts(lower: Matrix, log_det: f64, ridge_used: f64) -> Result<Self> {
        if !lower.is_square() {
            return Err(Error::invalid("Cholesky factor must be square"));
        }
        let n = lower.rows();
        let mut expected = 0.0;
        for i in 0..n {
            let d = lower[(i, i)];
            if d <= 0.0 {
                return Err(Error::invalid(format!(
                    "Cholesky diagonal entry {i} is not positive"
                )));
            }
            expected += 2.0 * d.ln();
            if (i + 1..n).any(|j| lower[(i, j)] != 0.0) {
                return Err(Error::invalid("Cholesky factor is not lower triangular"));
            }
        }
        if !log_det.is_finite() || (log_det - expected).abs() > 1e-10 * (1.0 + expected.abs()) {
            return Err(Error::invalid(format!(
                "log-determinant {log_det} disagrees with factor ({expected})"
            )));
        }
        Ok(SpdFactor {
            lower,
            log_det,
            ridge_used,
        })
    }

    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn ridge_used(&self) -> f64 {
        self.ridge_used
    }

    /// `L * L^T`, i.e. the regularized matrix that was factorized.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.dim();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let s: f64 = (0..=j)
                    .map(|k| self.lower[(i, k)] * self.lower[(j, k)])
                    .sum();
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        out
    }

    /// Forward substitution: solves `L y = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        debug_assert_eq!(b.len(), n);
        for i in 0..n {
            let row = self.lower.row(i);
            let mut s = b[i];
            for k in 0..i {
                s -= row[k] * b[k];
            }
            b[i] = s / row[i];
        }
    }

    /// Back substitution: solves `L^T y = b` in place.
    pub fn solve_upper_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        debug_assert_eq!(b.len(), n);
        for i in (0..n).rev() {
            let s = (i + 1..n).fold(b[i], |s, k| s - self.lower[(k, i)] * b[k]);
            b[i] = s / self.lower[(i, i)];
        }
    }

    /// Squared Mahalanobis distance `(x-mu)^T A^{-1} (x-mu)` for the
    /// factorized matrix `A`.
    pub fn mahalanobis_sq(&self, x: &[f64], mu: &[f64]) -> Result<f64> {
        let n = self.dim();
        if x.len() != n || mu.len() != n {
            return Err(Error::invalid(format!(
                "dimension mismatch: x has {}, mean has {}, covariance has {n}",
                x.len(),
                mu.len()
            )));
        }
        let mut z: Vec<f64> = x.iter().zip(mu).map(|(a, b)| a - b).collect();
        self.solve_lower_in_place(&mut z);
        Ok(z.iter().map(|v| v * v).sum())
    }

    /// `trace(A^{-1} B)` for the factorized `A` and a symmetric `B`.
    pub fn trace_inv_mul(&self, b: &Matrix) -> f64 {
        let n = self.dim();
        debug_assert_eq!((b.rows(), b.cols()), (n, n));
        // trace(L^-T L^-1 B) = trace(L^-1 B L^-T); with C = L^-1 B the
        // result is sum_i (L^-1 C^T)_{ii}.
        let mut c = Matrix::zeros(n, n);
        let mut col = vec![0.0; n];
        for j in 0..n {
            for i in 0..n {
                col[i] = b[(i, j)];
            }
            self.solve_lower_in_place(&mut col);
            for i in 0..n {
                c[(i, j)] = col[i];
            }
        }
        let mut total = 0.0;
        for i in 0..n {
            col.copy_from_slice(c.row(i));
            self.solve_lower_in_place(&mut col);
            total += col[i];
        }
        total
    }
}

/// `ln(sum(exp(values)))` evaluated around the maximum.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("log_sum_exp of an empty slice"));
    }
    if values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::invalid("log_sum_exp input contains NaN or +inf"));
    }
    Ok(log_sum_exp_unchecked(values))
}

/// Same as [`log_sum_exp`] for callers that already guarantee a non-empty
/// slice without NaN or `+inf`.
pub(crate) fn log_sum_exp_unchecked(values: &[f64]) -> f64 {
    let mut arg = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[arg] {
            arg = i;
        }
    }
    let max = values[arg];
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    // ln(1 + rest) keeps precision when the maximum dominates.
    let rest: f64 = values
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != arg)
        .map(|(_, v)| (v - max).exp())
        .sum();
    max + rest.ln_1p()
}

/// Scale used to size ridges: mean of the diagonal, or 1 when the matrix
/// has no variance at all.
fn ridge_scale(sigma: &Matrix) -> f64 {
    let n = sigma.rows().max(1) as f64;
    let mean = sigma.diag().iter().sum::<f64>() / n;
    if mean > f64::MIN_POSITIVE {
        mean
    } else {
        1.0
    }
}

/// Default regularization for a covariance matrix: `1e-6 * mean(diag)`.
pub fn default_ridge(sigma: &Matrix) -> f64 {
    1e-6 * ridge_scale(sigma)
}

fn try_cholesky(a: &Matrix) -> Option<Matrix> {
    let n = a.rows();
    let max_diag = a.diag().into_iter().fold(0.0, f64::max);
    let floor = PIVOT_RTOL * max_diag;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d.is_nan() || d <= floor || d <= 0.0 {
            return None;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Some(l)
}

/// Factorizes `sigma + ridge * I`.
///
/// When the factorization fails the ridge is escalated tenfold (starting
/// from `1e-6 * mean(diag)` when `ridge` is zero) until it would exceed
/// `1e-2 * mean(diag)`.
pub fn cholesky(sigma: &Matrix, ridge: f64) -> Result<SpdFactor> {
    if !sigma.is_square() {
        return Err(Error::invalid(format!(
            "cholesky needs a square matrix, got {}x{}",
            sigma.rows(),
            sigma.cols()
        )));
    }
    if !ridge.is_finite() || ridge < 0.0 {
        return Err(Error::invalid(format!(
            "ridge must be finite and >= 0, got {ridge}"
        )));
    }
    let n = sigma.rows();
    for i in 0..n {
        for j in 0..i {
            if (sigma[(i, j)] - sigma[(j, i)]).abs() > 1e-8 {
                return Err(Error::invalid(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let scale = ridge_scale(sigma);
    let max_ridge = 1e-2 * scale;
    let mut current = ridge;
    loop {
        if let Some(lower) = try_cholesky(&sigma.add_ridge(current)) {
            let log_det = 2.0 * (0..n).map(|i| lower[(i, i)].ln()).sum::<f64>();
            return Ok(SpdFactor {
                lower,
                log_det,
                ridge_used: current,
            });
        }
        let next = if current == 0.0 {
            1e-6 * scale
        } else {
            current * 10.0
        };
        if next > max_ridge * (1.0 + 1e-9) {
            return Err(Error::NotPositiveDefinite {
                dim: n,
                ridge: current,
            });
        }
        current = next;
    }
}

/// Log-density of `N(mu, L L^T)` at `x`, through a triangular solve.
pub fn gaussian_log_pdf(x: &[f64], mu: &[f64], factor: &SpdFactor) -> Result<f64> {
    let quad = factor.mahalanobis_sq(x, mu)?;
    let d = factor.dim() as f64;
    Ok(-0.5 * d * LN_2PI - 0.5 * factor.log_det() - 0.5 * quad)
}

/// Weighted mean and biased (weight-normalized) covariance of the rows.
pub fn empirical_mean_cov(rows: &Matrix, weights: Option<&[f64]>) -> Result<(Vec<f64>, Matrix)> {
    let n = rows.rows();
    let d = rows.cols();
    if n == 0 {
        return Err(Error::invalid("cannot estimate moments of zero rows"));
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::invalid(format!("{} weights for {n} rows", w.len())));
        }
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("weights must be finite and non-negative"));
        }
    }
    let weight = |i: usize| weights.map_or(1.0, |w| w[i]);
    let total: f64 = (0..n).map(weight).sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::invalid("weights sum to zero"));
    }
    let mut mean = vec![0.0; d];
    for (i, r) in rows.row_iter().enumerate() {
        let w = weight(i);
        for (m, v) in mean.iter_mut().zip(r) {
            *m += w * v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= total);
    let mut cov = Matrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for (i, r) in rows.row_iter().enumerate() {
        let w = weight(i);
        if w == 0.0 {
            continue;
        }
        for ((c, v), m) in centered.iter_mut().zip(r).zip(&mean) {
            *c = v - m;
        }
        for a in 0..d {
            let wa = w * centered[a];
            for b in 0..=a {
                cov[(a, b)] += wa * centered[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..=a {
            let v = cov[(a, b)] / total;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    Ok((mean, cov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn lse_examples() {
        assert_eq!(log_sum_exp(&[0.0]).unwrap(), 0.0);
        let ln2 = 2f64.ln();
        assert!(close(log_sum_exp(&[ln2, ln2]).unwrap(), 4f64.ln(), 1e-15));
        // ln(2 e^1000) = 1000 + ln 2; naive evaluation overflows.
        assert!((1000f64).exp().is_infinite());
        assert!(close(
            log_sum_exp(&[1000.0, 1000.0]).unwrap(),
            1000.0 + ln2,
            1e-12
        ));
        assert_eq!(
            log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]).unwrap(),
            f64::NEG_INFINITY
        );
        assert!(matches!(log_sum_exp(&[]), Err(Error::InvalidArgument(_))));
        assert!(log_sum_exp(&[f64::NAN]).is_err());
        assert!(log_sum_exp(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn lse_dominated_entry() {
        assert_eq!(log_sum_exp(&[0.0, -800.0]).unwrap(), 0.0);
        assert!(log_sum_exp(&[0.0, -700.0]).unwrap() > 0.0);
    }

    #[test]
    fn cholesky_identity() {
        let f = cholesky(&Matrix::identity(3), 0.0).unwrap();
        assert_eq!(f.lower(), &Matrix::identity(3));
        assert_eq!(f.log_det(), 0.0);
        assert_eq!(f.ridge_used(), 0.0);
    }

    #[test]
    fn cholesky_two_by_two() {
        let s = Matrix::from_rows(&[[4.0, 2.0], [2.0, 3.0]]).unwrap();
        let f = cholesky(&s, 0.0).unwrap();
        let expected = Matrix::from_rows(&[[2.0, 0.0], [1.0, 2f64.sqrt()]]).unwrap();
        assert!(f.lower().max_abs_diff(&expected) < 1e-15);
        assert!(close(f.log_det(), 8f64.ln(), 1e-14));
        assert!(f.reconstruct().max_abs_diff(&s) <= 1e-12);
    }

    #[test]
    fn cholesky_pure_ridge() {
        let f = cholesky(&Matrix::zeros(2, 2), 1e-6).unwrap();
        let expected = Matrix::identity(2).add_ridge(1e-3 - 1.0);
        assert!(f.lower().max_abs_diff(&expected) < 1e-18);
        assert_eq!(f.ridge_used(), 1e-6);
    }

    #[test]
    fn cholesky_escalates_on_singular() {
        // rank one
        let s = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        let f = cholesky(&s, 0.0).unwrap();
        assert!(f.ridge_used() > 0.0 && f.ridge_used() <= 1e-2);
        let zero = cholesky(&Matrix::zeros(3, 3), 0.0).unwrap();
        assert!(close(zero.ridge_used(), 1e-6, 1e-20));
    }

    #[test]
    fn cholesky_rejects_indefinite_and_asymmetric() {
        let s = Matrix::from_rows(&[[1.0, 0.0], [0.0, -5.0]]).unwrap();
        assert!(matches!(
            cholesky(&s, 0.0),
            Err(Error::NotPositiveDefinite { .. })
        ));
        let s = Matrix::from_rows(&[[1.0, 0.5], [0.0, 1.0]]).unwrap();
        assert!(matches!(cholesky(&s, 0.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn gaussian_examples() {
        let id = cholesky(&Matrix::identity(2), 0.0).unwrap();
        let v = gaussian_log_pdf(&[0.0, 0.0], &[0.0, 0.0], &id).unwrap();
        assert!(close(v, -(2.0 * PI).ln(), 1e-14));

        let s = Matrix::from_rows(&[[4.0, 2.0], [2.0, 3.0]]).unwrap();
        let f = cholesky(&s, 0.0).unwrap();
        let v = gaussian_log_pdf(&[0.3, -1.0], &[0.3, -1.0], &f).unwrap();
        assert!(close(v, -LN_2PI - 0.5 * f.log_det(), 1e-14));

        let f = cholesky(&Matrix::from_diag(&[4.0, 1.0]).unwrap(), 0.0).unwrap();
        let v = gaussian_log_pdf(&[1.0, 0.0], &[0.0, 0.0], &f).unwrap();
        assert!(close(v, -(2.0 * PI).ln() - 0.5 * 4f64.ln() - 0.125, 1e-14));

        assert!(gaussian_log_pdf(&[0.0], &[0.0, 0.0], &id).is_err());
    }

    /// Trapezoid quadrature of the density over a +-8 sigma box.
    fn integrate_2d(mu: [f64; 2], f: &SpdFactor, sd: [f64; 2]) -> f64 {
        let n = 400;
        let (hx, hy) = (16.0 * sd[0] / n as f64, 16.0 * sd[1] / n as f64);
        let mut total = 0.0;
        for i in 0..=n {
            let x = mu[0] - 8.0 * sd[0] + i as f64 * hx;
            let wx = if i == 0 || i == n { 0.5 } else { 1.0 };
            for j in 0..=n {
                let y = mu[1] - 8.0 * sd[1] + j as f64 * hy;
                let wy = if j == 0 || j == n { 0.5 } else { 1.0 };
                total += wx * wy * gaussian_log_pdf(&[x, y], &mu, f).unwrap().exp();
            }
        }
        total * hx * hy
    }

    #[test]
    fn gaussian_density_normalizes() {
        let s = Matrix::from_diag(&[4.0, 1.0]).unwrap();
        let f = cholesky(&s, 0.0).unwrap();
        assert!(close(integrate_2d([0.0, 0.0], &f, [2.0, 1.0]), 1.0, 1e-3));
        let s = Matrix::from_rows(&[[2.0, 0.5], [0.5, 1.0]]).unwrap();
        let f = cholesky(&s, 0.0).unwrap();
        let sd = [2f64.sqrt(), 1.0];
        assert!(close(integrate_2d([3.0, -1.0], &f, sd), 1.0, 1e-3));
    }

    #[test]
    fn gaussian_density_normalizes_1d() {
        let f = cholesky(&Matrix::from_diag(&[2.5]).unwrap(), 0.0).unwrap();
        let sd = 2.5f64.sqrt();
        let n = 4000;
        let h = 16.0 * sd / n as f64;
        let total: f64 = (0..=n)
            .map(|i| {
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                let x = -8.0 * sd + i as f64 * h;
                w * gaussian_log_pdf(&[x], &[0.0], &f).unwrap().exp()
            })
            .sum();
        assert!(close(total * h, 1.0, 1e-3));
    }

    #[test]
    fn mean_cov_examples() {
        let rows = Matrix::from_rows(&[[0.0, 0.0], [2.0, 0.0]]).unwrap();
        let (m, c) = empirical_mean_cov(&rows, None).unwrap();
        assert_eq!(m, vec![1.0, 0.0]);
        assert_eq!(c, Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap());

        let single = Matrix::from_rows(&[[3.0, -2.0, 7.5]]).unwrap();
        let (m, c) = empirical_mean_cov(&single, None).unwrap();
        assert_eq!(m, vec![3.0, -2.0, 7.5]);
        assert_eq!(c, Matrix::zeros(3, 3));

        assert!(empirical_mean_cov(&rows, Some(&[0.0, 0.0])).is_err());
        assert!(empirical_mean_cov(&rows, Some(&[1.0])).is_err());
        assert!(empirical_mean_cov(&rows, Some(&[-1.0, 2.0])).is_err());
    }

    #[test]
    fn weighted_moments() {
        let rows = Matrix::from_rows(&[[0.0], [1.0], [4.0]]).unwrap();
        let (m, c) = empirical_mean_cov(&rows, Some(&[1.0, 0.0, 1.0])).unwrap();
        assert_eq!(m, vec![2.0]);
        assert_eq!(c[(0, 0)], 4.0);
    }

    #[test]
    fn trace_inv_mul_matches_dense() {
        let a = Matrix::from_rows(&[[4.0, 2.0], [2.0, 3.0]]).unwrap();
        let b = Matrix::from_rows(&[[1.0, 0.5], [0.5, 2.0]]).unwrap();
        let f = cholesky(&a, 0.0).unwrap();
        // inverse of a = 1/8 [[3,-2],[-2,4]]
        let expected = (3.0 * 1.0 - 2.0 * 0.5 - 2.0 * 0.5 + 4.0 * 2.0) / 8.0;
        assert!(close(f.trace_inv_mul(&b), expected, 1e-14));
    }

    #[test]
    fn matrix_constructor_rejects_non_finite() {
        assert!(Matrix::new(1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(Matrix::new(1, 2, vec![0.0]).is_err());
        assert!(Matrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
