//! Dense row-major `f64` matrices and the raw kernels (GEMM, Cholesky,
//! triangular solves) the tape builds on.
//!
//! Everything in the crate is rank-2: scalars are `1×1`, vectors are
//! stored as a single column (`n×1`) or a single row (`1×n`) depending on
//! how they broadcast.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor[{}x{}]", self.rows, self.cols)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::shape(
                "from_vec",
                format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            ));
        }
        Ok(Tensor { rows, cols, data })
    }

    /// Builds a tensor from a slice of equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(Error::shape("from_rows", format!("row {i} has {} entries, expected {c}", row.len())));
            }
            data.extend_from_slice(row);
        }
        Ok(Tensor { rows: r, cols: c, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn column(values: &[f64]) -> Self {
        Tensor {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn row(values: &[f64]) -> Self {
        Tensor {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut t = Tensor::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            t.data[i * n + i] = d;
        }
        t
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Tensor { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Value of a `1×1` tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1, "item() on {}x{}", self.rows, self.cols);
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(self.shape(), other.shape(), "zip_map shape mismatch");
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn diag(&self) -> Vec<f64> {
        let n = self.rows.min(self.cols);
        (0..n).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        self.diag().iter().sum()
    }

    /// Lower triangle including the diagonal; the rest zeroed.
    pub fn tril(&self) -> Tensor {
        let mut out = self.clone();
        for r in 0..self.rows {
            for c in (r + 1)..self.cols {
                out.data[r * self.cols + c] = 0.0;
            }
        }
        out
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Tensor {
        assert!(start <= end && end <= self.cols, "slice_cols out of range");
        let w = end - start;
        let mut data = Vec::with_capacity(self.rows * w);
        for r in 0..self.rows {
            data.extend_from_slice(&self.data[r * self.cols + start..r * self.cols + end]);
        }
        Tensor { rows: self.rows, cols: w, data }
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor {
        assert!(start <= end && end <= self.rows, "slice_rows out of range");
        Tensor {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        gemm(self, false, other, false)
    }

    /// Column means (`1×cols`).
    pub fn mean_rows(&self) -> Tensor {
        let mut out = Tensor::zeros(1, self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c] += self.data[r * self.cols + c];
            }
        }
        out.scale(1.0 / self.rows as f64)
    }
}

/// `op(a) · op(b)` where `op` optionally transposes. Backed by
/// `matrixmultiply`, transposition is expressed through strides.
pub fn gemm(a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Result<Tensor> {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (k2, n) = if tb { (b.cols, b.rows) } else { (b.rows, b.cols) };
    if k != k2 {
        return Err(Error::shape(
            "matmul",
            format!(
                "{}x{}{} times {}x{}{}",
                a.rows,
                a.cols,
                if ta { "ᵀ" } else { "" },
                b.rows,
                b.cols,
                if tb { "ᵀ" } else { "" }
            ),
        ));
    }
    let mut out = Tensor::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return Ok(out);
    }
    let (rsa, csa) = if ta { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if tb { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    // SAFETY: the pointers and strides describe the full extent of the
    // owned buffers; dimensions were checked above.
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
            0.0,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(out)
}

/// Plain Cholesky factorization without jitter; `None` when a pivot is not
/// strictly positive.
pub fn cholesky_raw(a: &Tensor) -> Option<Tensor> {
    let n = a.rows;
    let mut l = Tensor::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            let v = l.data[j * n + k];
            d -= v * v;
        }
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l.data[j * n + j] = djj;
        for i in (j + 1)..n {
            let mut s = a.get(i, j);
            let (ri, rj) = (i * n, j * n);
            for k in 0..j {
                s -= l.data[ri + k] * l.data[rj + k];
            }
            l.data[ri + j] = s / djj;
        }
    }
    Some(l)
}

/// Smallest relative jitter tried when a factorization fails.
pub const JITTER_START: f64 = 1e-6;
/// Largest relative jitter before giving up.
pub const JITTER_MAX: f64 = 1e-2;

/// Cholesky with the escalating-jitter retry policy. Returns the factor and
/// the absolute jitter that was added to the diagonal (0 when none).
pub fn cholesky_jittered(a: &Tensor) -> Result<(Tensor, f64)> {
    if a.rows != a.cols {
        return Err(Error::shape("cholesky", format!("{}x{} is not square", a.rows, a.cols)));
    }
    if let Some(l) = cholesky_raw(a) {
        return Ok((l, 0.0));
    }
    let n = a.rows;
    let mean_diag = (a.trace() / n.max(1) as f64).abs().max(f64::MIN_POSITIVE);
    let mut rel = JITTER_START;
    let mut last = 0.0;
    while rel <= JITTER_MAX * (1.0 + 1e-9) {
        let jitter = rel * mean_diag;
        let mut shifted = a.clone();
        for i in 0..n {
            shifted.data[i * n + i] += jitter;
        }
        if let Some(l) = cholesky_raw(&shifted) {
            log::debug!("cholesky needed jitter {jitter:e} on {n}x{n}");
            return Ok((l, jitter));
        }
        last = jitter;
        rel *= 10.0;
    }
    Err(Error::Decomposition { size: n, jitter: last })
}

/// Solves `L X = B` (or `Lᵀ X = B` when `transpose`) for lower-triangular `L`.
pub fn solve_lower(l: &Tensor, b: &Tensor, transpose: bool) -> Result<Tensor> {
    let n = l.rows;
    if l.cols != n || b.rows != n {
        return Err(Error::shape(
            "triangular_solve",
            format!("L is {}x{}, B is {}x{}", l.rows, l.cols, b.rows, b.cols),
        ));
    }
    let m = b.cols;
    let mut x = b.clone();
    if !transpose {
        for i in 0..n {
            let lii = l.data[i * n + i];
            for k in 0..i {
                let lik = l.data[i * n + k];
                if lik != 0.0 {
                    for c in 0..m {
                        x.data[i * m + c] -= lik * x.data[k * m + c];
                    }
                }
            }
            for c in 0..m {
                x.data[i * m + c] /= lii;
            }
        }
    } else {
        for i in (0..n).rev() {
            let lii = l.data[i * n + i];
            for k in (i + 1)..n {
                let lki = l.data[k * n + i];
                if lki != 0.0 {
                    for c in 0..m {
                        x.data[i * m + c] -= lki * x.data[k * m + c];
                    }
                }
            }
            for c in 0..m {
                x.data[i * m + c] /= lii;
            }
        }
    }
    Ok(x)
}

/// Inverse of a symmetric positive definite matrix via its Cholesky factor.
pub fn spd_inverse(a: &Tensor) -> Result<Tensor> {
    let (l, _) = cholesky_jittered(a)?;
    let linv = solve_lower(&l, &Tensor::identity(a.rows), false)?;
    gemm(&linv, true, &linv, false)
}

/// Log-determinant of an SPD matrix.
pub fn spd_logdet(a: &Tensor) -> Result<f64> {
    let (l, _) = cholesky_jittered(a)?;
    Ok(2.0 * l.diag().iter().map(|d| d.ln()).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(a.matmul(&Tensor::identity(2)).unwrap(), a);
    }

    #[test]
    fn gemm_transposes() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let ata = gemm(&a, true, &a, false).unwrap();
        let expected = a.transpose().matmul(&a).unwrap();
        assert_eq!(ata, expected);
        let aat = gemm(&a, false, &a, true).unwrap();
        assert_eq!(aat.get(0, 1), 32.0);
    }

    #[test]
    fn diagonal_cholesky() {
        let a = Tensor::from_diag(&[4.0, 9.0]);
        let (l, jitter) = cholesky_jittered(&a).unwrap();
        assert_eq!(jitter, 0.0);
        assert_eq!(l, Tensor::from_diag(&[2.0, 3.0]));
    }

    #[test]
    fn singular_matrix_gets_jitter() {
        let a = Tensor::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let (_, jitter) = cholesky_jittered(&a).unwrap();
        assert!(jitter > 0.0 && jitter <= 1e-2);
    }

    #[test]
    fn indefinite_matrix_fails() {
        let a = Tensor::from_diag(&[1.0, -1.0]);
        assert!(matches!(cholesky_jittered(&a), Err(Error::Decomposition { .. })));
    }

    #[test]
    fn triangular_solves() {
        let l = Tensor::from_rows(&[vec![2.0, 0.0], vec![1.0, 3.0]]).unwrap();
        let x = Tensor::column(&[1.0, -2.0]);
        let b = l.matmul(&x).unwrap();
        let back = solve_lower(&l, &b, false).unwrap();
        assert!((back.get(1, 0) + 2.0).abs() < 1e-14);
        let bt = l.transpose().matmul(&x).unwrap();
        let back_t = solve_lower(&l, &bt, true).unwrap();
        assert!((back_t.get(0, 0) - 1.0).abs() < 1e-14);
    }
}
