//! Dense linear-algebra kernels.
//!
//! Everything here works on a small row-major [`Matrix`] and plain `&[f64]`
//! vectors. Sizes in this crate are tiny (latent and feature dimensions of a
//! few dozen at most), so the algorithms favour robustness and testability
//! over asymptotic speed: Cholesky with an explicit pivot floor, cyclic
//! Jacobi for symmetric eigenproblems, and substitution solves.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Relative pivot floor for Cholesky: a pivot must exceed this fraction of
/// the largest diagonal entry.
pub const SPD_PIVOT_FLOOR: f64 = 1e-12;

/// Absolute symmetry tolerance, scaled by `max(1, max |a_ij|)`.
pub const SYMMETRY_TOL: f64 = 1e-9;

const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Builds a matrix from row-major entries, rejecting bad lengths and
    /// non-finite values.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(format!(
                "entry ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
            return Err(Error::dims(format!(
                "row {bad} has {} entries, expected {cols}",
                rows[bad].len()
            )));
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

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::dims(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · v`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.cols != v.len() {
            return Err(Error::dims(format!(
                "cannot apply {}x{} matrix to vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok(self.row_iter().map(|r| dot(r, v)).collect())
    }

    /// `selfᵀ · v`.
    pub fn tmatvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.rows != v.len() {
            return Err(Error::dims(format!(
                "cannot apply transpose of {}x{} matrix to vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &s) in self.row_iter().zip(v) {
            axpy(s, r, &mut out);
        }
        Ok(out)
    }

    /// `selfᵀ · self`.
    pub fn gram(&self) -> Matrix {
        let n = self.cols;
        let mut out = Matrix::zeros(n, n);
        for r in self.row_iter() {
            for i in 0..n {
                if r[i] == 0.0 {
                    continue;
                }
                for j in i..n {
                    out.data[i * n + j] += r[i] * r[j];
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                out.data[i * n + j] = out.data[j * n + i];
            }
        }
        out
    }

    pub fn add(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, |a, b| a - b)
    }

    fn zip_with(&self, rhs: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(Error::dims(format!(
                "shape {}x{} vs {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let data = self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * s).collect() }
    }

    /// Adds `s` to every diagonal entry in place.
    pub fn add_diag(&mut self, s: f64) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += s;
        }
    }

    pub fn trace(&self) -> f64 {
        self.diag().iter().sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.symmetry_violation(tol).is_none()
    }

    fn symmetry_violation(&self, tol: f64) -> Option<(usize, usize, f64)> {
        if !self.is_square() {
            return Some((0, 0, f64::INFINITY));
        }
        let bound = tol * self.max_abs().max(1.0);
        for i in 0..self.rows {
            for j in 0..i {
                let gap = (self[(i, j)] - self[(j, i)]).abs();
                if gap > bound {
                    return Some((i, j, gap));
                }
            }
        }
        None
    }

    fn check_symmetric(&self) -> Result<()> {
        if !self.is_square() {
            return Err(Error::dims(format!(
                "expected a square matrix, got {}x{}",
                self.rows, self.cols
            )));
        }
        match self.symmetry_violation(SYMMETRY_TOL) {
            Some((i, j, gap)) => Err(Error::NotSymmetric { i, j, gap }),
            None => Ok(()),
        }
    }

    /// Select a subset of rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix { rows: idx.len(), cols: self.cols, data }
    }

    /// Applies `f` to every row, producing a new matrix with `out_cols` columns.
    pub fn map_rows(
        &self,
        out_cols: usize,
        mut f: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<Matrix> {
        let mut data = Vec::with_capacity(self.rows * out_cols);
        for r in self.row_iter() {
            let out = f(r)?;
            if out.len() != out_cols {
                return Err(Error::dims(format!(
                    "row map produced {} values, expected {out_cols}",
                    out.len()
                )));
            }
            data.extend(out);
        }
        Ok(Matrix { rows: self.rows, cols: out_cols, data })
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in self.row_iter() {
            writeln!(f, "  {r:?}")?;
        }
        write!(f, "]")
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a·x`.
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn norm1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Cholesky factor `L` (lower-triangular, positive diagonal) with `L·Lᵀ = spd`.
pub fn cholesky(spd: &Matrix) -> Result<Matrix> {
    spd.check_symmetric()?;
    let n = spd.rows();
    let max_diag = spd.diag().into_iter().fold(0.0_f64, f64::max);
    let floor = SPD_PIVOT_FLOOR * max_diag;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut pivot = spd[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if !(pivot > floor) || pivot <= 0.0 {
            return Err(Error::NotPositiveDefinite { index: j, pivot });
        }
        let d = pivot.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = spd[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Symmetric eigen-decomposition by cyclic Jacobi rotations.
///
/// Eigenvalues come back in non-increasing order with the matching
/// eigenvectors as columns of `Q`. Each column is sign-normalised so that its
/// first entry that is not negligible is non-negative.
pub fn sym_eig(sym: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    sym.check_symmetric()?;
    let n = sym.rows();
    // Symmetrise exactly so rotations see a consistent matrix.
    let mut a = Matrix::from_fn(n, n, |i, j| 0.5 * (sym[(i, j)] + sym[(j, i)]));
    let mut v = Matrix::identity(n);
    let scale = a.frobenius();

    let mut converged = n <= 1 || scale == 0.0;
    let mut sweeps = 0;
    while !converged {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::NoConvergence { sweeps });
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum::<f64>()
            .sqrt();
        converged = off <= 1e-15 * scale;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]).then(i.cmp(&j)));
    let values: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let mut q = Matrix::from_fn(n, n, |i, j| v[(i, order[j])]);
    for j in 0..n {
        let col_max = (0..n).fold(0.0_f64, |m, i| m.max(q[(i, j)].abs()));
        let lead = (0..n).map(|i| q[(i, j)]).find(|x| x.abs() > 1e-10 * col_max);
        if lead.is_some_and(|x| x < 0.0) {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    Ok((values, q))
}

/// Solves `L·x = v` by forward substitution.
pub fn lower_tri_inverse_apply(l: &Matrix, v: &[f64]) -> Result<Vec<f64>> {
    let n = l.rows();
    if !l.is_square() || v.len() != n {
        return Err(Error::dims(format!(
            "triangular solve with {}x{} matrix and vector of length {}",
            l.rows(),
            l.cols(),
            v.len()
        )));
    }
    let mut x = vec![0.0; n];
    for i in 0..n {
        let d = l[(i, i)];
        if d == 0.0 {
            return Err(Error::SingularTriangular(i));
        }
        let s = v[i] - dot(&l.row(i)[..i], &x[..i]);
        x[i] = s / d;
    }
    Ok(x)
}

/// Solves `Lᵀ·x = v` by back substitution, for lower-triangular `L`.
pub fn lower_tri_transpose_solve(l: &Matrix, v: &[f64]) -> Result<Vec<f64>> {
    let n = l.rows();
    if !l.is_square() || v.len() != n {
        return Err(Error::dims("transposed triangular solve shape"));
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let d = l[(i, i)];
        if d == 0.0 {
            return Err(Error::SingularTriangular(i));
        }
        let mut s = v[i];
        for k in i + 1..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / d;
    }
    Ok(x)
}

/// Solves `spd · X = rhs` through a Cholesky factorisation.
pub fn solve_spd(spd: &Matrix, rhs: &Matrix) -> Result<Matrix> {
    if spd.rows() != rhs.rows() {
        return Err(Error::dims(format!(
            "system has {} rows but right-hand side has {}",
            spd.rows(),
            rhs.rows()
        )));
    }
    let l = cholesky(spd)?;
    let mut out = Matrix::zeros(rhs.rows(), rhs.cols());
    for j in 0..rhs.cols() {
        let y = lower_tri_inverse_apply(&l, &rhs.col(j))?;
        let x = lower_tri_transpose_solve(&l, &y)?;
        for (i, xi) in x.into_iter().enumerate() {
            out[(i, j)] = xi;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
        a.sub(b).unwrap().frobenius() / b.frobenius().max(1e-300)
    }

    fn random_spd(rng: &mut impl Rng, n: usize) -> Matrix {
        let a = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let mut s = a.gram();
        s.add_diag(0.1);
        s
    }

    #[test]
    fn cholesky_small() {
        let l = cholesky(&m(&[&[4.0, 2.0], &[2.0, 5.0]])).unwrap();
        assert_eq!(l, m(&[&[2.0, 0.0], &[1.0, 2.0]]));
        let back = l.matmul(&l.transpose()).unwrap();
        assert_eq!(back, m(&[&[4.0, 2.0], &[2.0, 5.0]]));
    }

    #[test]
    fn cholesky_identity_and_rank_deficient() {
        assert_eq!(cholesky(&Matrix::identity(4)).unwrap(), Matrix::identity(4));
        assert!(matches!(
            cholesky(&m(&[&[1.0, 1.0], &[1.0, 1.0]])),
            Err(Error::NotPositiveDefinite { index: 1, .. })
        ));
        assert!(matches!(
            cholesky(&m(&[&[1.0, 0.5], &[0.4, 1.0]])),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn eig_diagonal_and_pair() {
        let (l, q) = sym_eig(&Matrix::from_diag(&[4.0, 1.0])).unwrap();
        assert_eq!(l, vec![4.0, 1.0]);
        assert_eq!(q, Matrix::identity(2));

        let (l, q) = sym_eig(&Matrix::from_diag(&[1.0, 4.0])).unwrap();
        assert_eq!(l, vec![4.0, 1.0]);
        assert_eq!(q, m(&[&[0.0, 1.0], &[1.0, 0.0]]));

        let a = m(&[&[2.0, 1.0], &[1.0, 2.0]]);
        let (l, q) = sym_eig(&a).unwrap();
        assert!((l[0] - 3.0).abs() < 1e-12 && (l[1] - 1.0).abs() < 1e-12);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!(rel_err(&q, &m(&[&[h, h], &[h, -h]])) < 1e-12);
        // Qᵀ A Q = Λ
        let lam = q.transpose().matmul(&a).unwrap().matmul(&q).unwrap();
        assert!(rel_err(&lam, &Matrix::from_diag(&[3.0, 1.0])) < 1e-12);

        let (l, _) = sym_eig(&Matrix::identity(3)).unwrap();
        assert_eq!(l, vec![1.0; 3]);
    }

    #[test]
    fn solve_spd_cases() {
        let rhs = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(solve_spd(&Matrix::identity(2), &rhs).unwrap(), rhs);
        let inv = solve_spd(&Matrix::from_diag(&[2.0, 4.0]), &Matrix::identity(2)).unwrap();
        assert!(inv.sub(&Matrix::from_diag(&[0.5, 0.25])).unwrap().max_abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_spd(&mut rng, 4);
        let b = Matrix::from_fn(4, 3, |_, _| rng.gen_range(-2.0..2.0));
        let x = solve_spd(&a, &b).unwrap();
        assert!(rel_err(&a.matmul(&x).unwrap(), &b) < 1e-8);
    }

    #[test]
    fn forward_substitution() {
        assert_eq!(lower_tri_inverse_apply(&Matrix::identity(3), &[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        let l = m(&[&[2.0, 0.0], &[1.0, 2.0]]);
        let x = lower_tri_inverse_apply(&l, &[4.0, 6.0]).unwrap();
        assert_eq!(x, vec![2.0, 2.0]);
        assert_eq!(l.matvec(&x).unwrap(), vec![4.0, 6.0]);
        assert!(matches!(
            lower_tri_inverse_apply(&m(&[&[0.0, 0.0], &[0.0, 1.0]]), &[1.0, 1.0]),
            Err(Error::SingularTriangular(0))
        ));
    }

    #[test]
    fn from_vec_rejects_nan() {
        assert!(Matrix::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Matrix::from_vec(1, 2, vec![1.0]).is_err());
    }

    #[test]
    fn eig_invariants_on_random_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let n = rng.gen_range(1..=8);
            let a = Matrix::from_fn(n, n, |_, _| rng.gen_range(-5.0..5.0));
            let s = a.add(&a.transpose()).unwrap();
            let (lam, q) = sym_eig(&s).unwrap();
            assert!(lam.windows(2).all(|w| w[0] >= w[1]));
            let qtq = q.transpose().matmul(&q).unwrap();
            assert!(qtq.sub(&Matrix::identity(n)).unwrap().max_abs() < 1e-8);
            let rec = q.matmul(&Matrix::from_diag(&lam)).unwrap().matmul(&q.transpose()).unwrap();
            assert!(rec.sub(&s).unwrap().max_abs() < 1e-8 * s.max_abs().max(1.0));
        }
    }

    proptest! {
        #[test]
        fn cholesky_round_trip(seed in any::<u64>(), n in 1usize..=8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_spd(&mut rng, n);
            let l = cholesky(&a).unwrap();
            for i in 0..n {
                prop_assert!(l[(i, i)] > 0.0);
                for j in i + 1..n {
                    prop_assert_eq!(l[(i, j)], 0.0);
                }
            }
            prop_assert!(rel_err(&l.matmul(&l.transpose()).unwrap(), &a) < 1e-9);
        }
    }
}
