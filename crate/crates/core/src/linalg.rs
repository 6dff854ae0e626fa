//! Dense row-major matrices and the handful of decompositions the rest of
//! the crate needs: one-sided Jacobi SVD, power-iteration spectral norm,
//! Frobenius norm and the Gram trace.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::SeededRng;

/// Row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
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
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return invalid(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return invalid("matrix contains non-finite entries");
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return invalid("ragged rows");
        }
        Self::from_vec(rows.len(), cols, rows.concat())
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

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut out = Self::zeros(idx.len(), self.cols);
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(self.row(i));
        }
        out
    }

    /// Columns `0..k`.
    pub fn leading_cols(&self, k: usize) -> Self {
        assert!(k <= self.cols);
        Self::from_fn(self.rows, k, |i, j| self.get(i, j))
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        gemm(self, false, other, false, &mut out, 0.0);
        out
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &Self) -> Self {
        assert_eq!(self.rows, other.rows, "t_matmul shape mismatch");
        let mut out = Self::zeros(self.cols, other.cols);
        gemm(self, true, other, false, &mut out, 0.0);
        out
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.cols, "matmul_t shape mismatch");
        let mut out = Self::zeros(self.rows, other.rows);
        gemm(self, false, other, true, &mut out, 0.0);
        out
    }

    /// `selfᵀ · self`.
    pub fn gram(&self) -> Self {
        self.t_matmul(self)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len());
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    pub fn t_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, x.len());
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                axpy(xi, self.row(i), &mut out);
            }
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.shape(), other.shape());
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.shape(), other.shape());
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn scale_mut(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn hadamard(&self, other: &Self) -> Self {
        assert_eq!(self.shape(), other.shape());
        self.zip_map(other, |a, b| a * b)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn row_norm_sq(&self, i: usize) -> f64 {
        dot(self.row(i), self.row(i))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out = op(a) · op(b) + beta · out` through `matrixmultiply`, using strides
/// to express transposes without copying.
pub(crate) fn gemm(a: &DenseMatrix, ta: bool, b: &DenseMatrix, tb: bool, out: &mut DenseMatrix, beta: f64) {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (k2, n) = if tb { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(k, k2);
    assert_eq!(out.shape(), (m, n));
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.scale_mut(beta);
        return;
    }
    let (rsa, csa) = if ta { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if tb { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    // SAFETY: the strides and extents above describe exactly the storage of
    // `a`, `b` and `out`, whose lengths were checked by construction.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Compressed sparse row matrix, used for the normalized adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(column, value)` lists. Columns must be in range.
    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut r in rows.iter().cloned() {
            r.sort_by_key(|&(c, _)| c);
            for (c, v) in r {
                assert!(c < cols);
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Self {
            rows: rows.len(),
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates `(column, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        self.indices[a..b].iter().copied().zip(self.values[a..b].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                d.set(i, j, v);
            }
        }
        d
    }

    /// `self · m`.
    pub fn mul_dense(&self, m: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, m.rows());
        let mut out = DenseMatrix::zeros(self.rows, m.cols());
        for i in 0..self.rows {
            let (a, b) = (self.indptr[i], self.indptr[i + 1]);
            let dst = out.row_mut(i);
            for p in a..b {
                axpy(self.values[p], m.row(self.indices[p]), dst);
            }
        }
        out
    }

    /// `selfᵀ · m`.
    pub fn t_mul_dense(&self, m: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.rows, m.rows());
        let mut out = DenseMatrix::zeros(self.cols, m.cols());
        for i in 0..self.rows {
            let src = m.row(i);
            for p in self.indptr[i]..self.indptr[i + 1] {
                axpy(self.values[p], src, out.row_mut(self.indices[p]));
            }
        }
        out
    }
}

/// Thin SVD `M = U · diag(sigma) · Vᵀ`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: DenseMatrix,
    pub sigma: Vec<f64>,
    pub v: DenseMatrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> DenseMatrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, s) in self.sigma.iter().enumerate() {
                us.data[i * us.cols + j] *= s;
            }
        }
        us.matmul_t(&self.v)
    }
}

const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_REL_TOL: f64 = 1e-12;

/// Thin SVD by one-sided (Hestenes) Jacobi rotations; `r = min(rows, cols)`.
pub fn svd(m: &DenseMatrix) -> Result<SvdResult> {
    if m.rows == 0 || m.cols == 0 {
        return invalid("svd of an empty matrix");
    }
    if !m.is_finite() {
        return invalid("svd input contains non-finite entries");
    }
    if m.rows >= m.cols {
        let (u, sigma, v) = jacobi_tall(m)?;
        Ok(SvdResult { u, sigma, v })
    } else {
        let (u, sigma, v) = jacobi_tall(&m.transpose())?;
        Ok(SvdResult { u: v, sigma, v: u })
    }
}

/// One-sided Jacobi for `rows >= cols`. Columns of `m` are held as rows of
/// `w` so every rotation touches contiguous memory.
fn jacobi_tall(m: &DenseMatrix) -> Result<(DenseMatrix, Vec<f64>, DenseMatrix)> {
    let (rows, n) = m.shape();
    let mut w = m.transpose();
    let mut vt = DenseMatrix::identity(n);
    let fro = frobenius_norm(m);
    // Columns whose squared norm falls under this floor are numerically null.
    let floor = (1e-12 * fro).powi(2);

    let mut converged = n < 2;
    let mut sweeps = 0;
    while !converged {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::Convergence {
                what: "one-sided Jacobi SVD",
                iterations: sweeps,
            });
        }
        sweeps += 1;
        converged = true;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let (wp, wq) = (w.row(p), w.row(q));
                    (dot(wp, wp), dot(wq, wq), dot(wp, wq))
                };
                if alpha <= floor || beta <= floor {
                    continue;
                }
                if gamma.abs() <= JACOBI_REL_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                converged = false;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut w, p, q, c, s);
                rotate_rows(&mut vt, p, q, c, s);
            }
        }
    }

    let mut order: Vec<(f64, usize)> = (0..n).map(|j| (w.row_norm_sq(j).sqrt(), j)).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut u = DenseMatrix::zeros(rows, n);
    let mut v = DenseMatrix::zeros(n, n);
    let mut sigma = Vec::with_capacity(n);
    let mut null_cols = Vec::new();
    for (dst, &(s, src)) in order.iter().enumerate() {
        if s * s > floor {
            sigma.push(s);
            for i in 0..rows {
                u.set(i, dst, w.get(src, i) / s);
            }
        } else {
            sigma.push(0.0);
            null_cols.push(dst);
        }
        for i in 0..n {
            v.set(i, dst, vt.get(src, i));
        }
    }
    complete_orthonormal(&mut u, &null_cols);
    Ok((u, sigma, v))
}

fn rotate_rows(m: &mut DenseMatrix, p: usize, q: usize, c: f64, s: f64) {
    let cols = m.cols;
    let (head, tail) = m.data.split_at_mut(q * cols);
    let rp = &mut head[p * cols..(p + 1) * cols];
    let rq = &mut tail[..cols];
    for (a, b) in rp.iter_mut().zip(rq.iter_mut()) {
        let (x, y) = (*a, *b);
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

/// Fills the listed (zero) columns of `u` with unit vectors orthogonal to
/// every other column, by Gram-Schmidt on the standard basis.
fn complete_orthonormal(u: &mut DenseMatrix, cols: &[usize]) {
    if cols.is_empty() {
        return;
    }
    let rows = u.rows;
    let mut filled: Vec<usize> = (0..u.cols).filter(|c| !cols.contains(c)).collect();
    let mut candidate = 0;
    for &c in cols {
        while candidate < rows {
            let mut x = vec![0.0; rows];
            x[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for &f in &filled {
                    let proj: f64 = (0..rows).map(|i| u.get(i, f) * x[i]).sum();
                    for (i, xi) in x.iter_mut().enumerate() {
                        *xi -= proj * u.get(i, f);
                    }
                }
            }
            let norm = dot(&x, &x).sqrt();
            if norm > 0.5 {
                for (i, xi) in x.iter().enumerate() {
                    u.set(i, c, xi / norm);
                }
                filled.push(c);
                break;
            }
        }
    }
}

const POWER_MAX_ITERS: usize = 10_000;
const POWER_REL_TOL: f64 = 1e-8;
const POWER_START_SEED: u64 = 0x5EED_0F_5EED;

/// Largest singular value by power iteration on `MᵀM`, falling back to a
/// full SVD if the iteration cap is hit.
pub fn spectral_norm(m: &DenseMatrix) -> Result<f64> {
    if !m.is_finite() {
        return invalid("spectral_norm input contains non-finite entries");
    }
    if m.rows == 0 || m.cols == 0 || m.max_abs() == 0.0 {
        return Ok(0.0);
    }
    let mut rng = SeededRng::new(POWER_START_SEED);
    let mut v: Vec<f64> = (0..m.cols).map(|_| rng.normal()).collect();
    normalize(&mut v);
    let mut prev = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let mv = m.matvec(&v);
        let est = dot(&mv, &mv).sqrt();
        let mut w = m.t_matvec(&mv);
        if normalize(&mut w) == 0.0 {
            break;
        }
        v = w;
        if (est - prev).abs() <= POWER_REL_TOL * est {
            return Ok(est);
        }
        prev = est;
    }
    Ok(svd(m)?.sigma[0])
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

pub fn frobenius_norm(m: &DenseMatrix) -> f64 {
    trace_gram(m).sqrt()
}

/// `Tr(MᵀM)`, the squared Frobenius norm.
pub fn trace_gram(m: &DenseMatrix) -> f64 {
    m.data.iter().map(|v| v * v).sum()
}

/// Matrix of i.i.d. standard normal draws.
pub fn gaussian_draw(rng: &mut SeededRng, rows: usize, cols: usize) -> Result<DenseMatrix> {
    if rows == 0 || cols == 0 {
        return invalid("gaussian_draw needs positive dimensions");
    }
    let data = (0..rows * cols).map(|_| rng.normal()).collect();
    Ok(DenseMatrix { rows, cols, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        gaussian_draw(&mut SeededRng::new(seed), rows, cols).unwrap()
    }

    fn orthonormality_error(q: &DenseMatrix) -> f64 {
        q.gram().max_abs_diff(&DenseMatrix::identity(q.cols()))
    }

    fn check_svd(m: &DenseMatrix) {
        let r = svd(m).unwrap();
        assert_eq!(r.sigma.len(), m.rows().min(m.cols()));
        assert!(r.sigma.windows(2).all(|w| w[0] >= w[1]));
        assert!(r.sigma.iter().all(|&s| s >= 0.0));
        assert!(orthonormality_error(&r.u) < 1e-8);
        assert!(orthonormality_error(&r.v) < 1e-8);
        let err = frobenius_norm(&r.reconstruct().sub(m));
        assert!(err <= 1e-8 * frobenius_norm(m).max(1.0), "reconstruction {err}");
    }

    #[test]
    fn svd_identity() {
        let r = svd(&DenseMatrix::identity(3)).unwrap();
        assert_eq!(r.sigma, vec![1.0, 1.0, 1.0]);
        for i in 0..3 {
            assert!((r.u.get(i, i).abs() - 1.0).abs() < 1e-14);
            assert!((r.v.get(i, i).abs() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn svd_diagonal() {
        let r = svd(&DenseMatrix::from_diag(&[3.0, 2.0])).unwrap();
        assert_eq!(r.sigma, vec![3.0, 2.0]);
        let r = svd(&DenseMatrix::from_diag(&[2.0, 3.0])).unwrap();
        assert_eq!(r.sigma, vec![3.0, 2.0]);
    }

    #[test]
    fn svd_random_reconstructs() {
        check_svd(&random(5, 3, 1));
        check_svd(&random(3, 5, 2));
        check_svd(&random(200, 200, 3));
        check_svd(&random(120, 40, 4));
    }

    #[test]
    fn svd_rank_deficient() {
        // rank 1: outer product
        let m = DenseMatrix::from_fn(6, 4, |i, j| (i as f64 + 1.0) * (j as f64 - 1.5));
        check_svd(&m);
        let r = svd(&m).unwrap();
        assert!(r.sigma[1] < 1e-10 * r.sigma[0]);
        check_svd(&DenseMatrix::zeros(4, 3));
    }

    #[test]
    fn svd_rejects_bad_input() {
        let mut m = DenseMatrix::zeros(2, 2);
        m.set(0, 0, f64::NAN);
        assert!(matches!(svd(&m), Err(Error::InvalidInput(_))));
        assert!(matches!(svd(&DenseMatrix::zeros(0, 3)), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn spectral_norm_cases() {
        assert_eq!(spectral_norm(&DenseMatrix::zeros(3, 4)).unwrap(), 0.0);
        assert!((spectral_norm(&DenseMatrix::identity(5)).unwrap() - 1.0).abs() < 1e-12);
        assert!((spectral_norm(&DenseMatrix::from_diag(&[2.0, 1.0])).unwrap() - 2.0).abs() < 1e-8);
        let m = random(20, 8, 11);
        let oracle = svd(&m).unwrap().sigma[0];
        let est = spectral_norm(&m).unwrap();
        assert!((est - oracle).abs() <= 1e-6 * oracle, "{est} vs {oracle}");
    }

    #[test]
    fn frobenius_and_trace() {
        assert_eq!(frobenius_norm(&DenseMatrix::zeros(2, 2)), 0.0);
        assert_eq!(frobenius_norm(&DenseMatrix::identity(4)), 2.0);
        assert_eq!(trace_gram(&DenseMatrix::identity(3)), 3.0);
        assert_eq!(trace_gram(&DenseMatrix::from_rows(&[vec![3.0, 4.0]]).unwrap()), 25.0);

        let m = random(6, 6, 5);
        let sv: f64 = svd(&m).unwrap().sigma.iter().map(|s| s * s).sum();
        assert!((frobenius_norm(&m) - sv.sqrt()).abs() <= 1e-8 * sv.sqrt());
        let tr: f64 = (0..6).map(|i| m.gram().get(i, i)).sum();
        assert!((frobenius_norm(&m) - tr.sqrt()).abs() <= 1e-10 * tr.sqrt());
        assert!((trace_gram(&m) - frobenius_norm(&m).powi(2)).abs() <= 1e-10 * trace_gram(&m));
    }

    #[test]
    fn gaussian_draw_determinism_and_moments() {
        let a = gaussian_draw(&mut SeededRng::new(9), 2, 2).unwrap();
        let b = gaussian_draw(&mut SeededRng::new(9), 2, 2).unwrap();
        let c = gaussian_draw(&mut SeededRng::new(10), 2, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(gaussian_draw(&mut SeededRng::new(1), 0, 2).is_err());

        let big = gaussian_draw(&mut SeededRng::new(12), 1000, 100).unwrap();
        let n = big.data().len() as f64;
        let mean = big.data().iter().sum::<f64>() / n;
        let var = big.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.02);
        assert!((var - 1.0).abs() < 0.02);
    }

    #[test]
    fn gemm_transposes_match_naive() {
        let a = random(4, 3, 20);
        let b = random(4, 5, 21);
        let naive = DenseMatrix::from_fn(3, 5, |i, j| (0..4).map(|k| a.get(k, i) * b.get(k, j)).sum());
        assert!(a.t_matmul(&b).max_abs_diff(&naive) < 1e-12);
        assert!(a.transpose().matmul(&b).max_abs_diff(&naive) < 1e-12);
        let c = random(5, 3, 22);
        assert!(a.matmul_t(&c).max_abs_diff(&a.matmul(&c.transpose())) < 1e-12);
    }

    #[test]
    fn csr_products() {
        let csr = CsrMatrix::from_rows(3, vec![vec![(0, 1.0), (2, 2.0)], vec![], vec![(1, -1.0)]]);
        let d = csr.to_dense();
        let m = random(3, 4, 30);
        assert!(csr.mul_dense(&m).max_abs_diff(&d.matmul(&m)) < 1e-14);
        assert!(csr.t_mul_dense(&m).max_abs_diff(&d.t_matmul(&m)) < 1e-14);
        assert_eq!(csr.get(0, 2), 2.0);
        assert_eq!(csr.get(1, 1), 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn norm_sandwich(rows in 1usize..12, cols in 1usize..12, seed in any::<u64>()) {
            let m = random(rows, cols, seed);
            let s = spectral_norm(&m).unwrap();
            let f = frobenius_norm(&m);
            let r = (rows.min(cols) as f64).sqrt();
            prop_assert!(s <= f * (1.0 + 1e-9));
            prop_assert!(f <= r * s * (1.0 + 1e-6));
        }

        #[test]
        fn svd_invariants_hold(rows in 1usize..30, cols in 1usize..30, seed in any::<u64>()) {
            check_svd(&random(rows, cols, seed));
        }
    }
}
