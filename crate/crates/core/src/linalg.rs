//! Small dense linear algebra: complex Hermitian solves, orthonormal
//! null-space bases and real systems with partial pivoting.

use std::ops::{Index, IndexMut};

use num_complex::Complex64;

use crate::error::{Result, SolverError};

pub type C64 = Complex64;

/// Dense row-major complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> CMatrix {
        CMatrix {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> CMatrix {
        let mut m = CMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> CMatrix {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        CMatrix { rows, cols, data }
    }

    /// Matrix whose rows are the given vectors.
    pub fn from_rows(rows: &[&[C64]]) -> CMatrix {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        CMatrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<C64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn mul_vec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `A^H x`.
    pub fn adjoint_mul_vec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.rows);
        let mut out = vec![C64::new(0.0, 0.0); self.cols];
        for (i, xi) in x.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a.conj() * xi;
            }
        }
        out
    }

    pub fn mul(&self, other: &CMatrix) -> CMatrix {
        assert_eq!(self.cols, other.rows);
        let mut out = CMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn adjoint(&self) -> CMatrix {
        CMatrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    /// Adds `scale * x^H x` (outer product of the conjugated row vector `x`).
    pub fn add_outer_conj(&mut self, x: &[C64], scale: f64) {
        let n = self.rows;
        assert_eq!(n, self.cols);
        assert_eq!(x.len(), n);
        for i in 0..n {
            let xi = x[i].conj() * scale;
            let row = &mut self.data[i * n..(i + 1) * n];
            for (r, xj) in row.iter_mut().zip(x) {
                *r += xi * xj;
            }
        }
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        let scale = self.data.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        (0..self.rows).all(|i| {
            (i..self.cols)
                .all(|j| (self[(i, j)] - self[(j, i)].conj()).norm() <= tol * scale.max(1.0))
        })
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

/// `sum_i conj(a_i) b_i`.
pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// `sum_i a_i b_i` (the bilinear product used for `h w`).
pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sqr(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

pub fn norm(a: &[C64]) -> f64 {
    norm_sqr(a).sqrt()
}

pub fn conj(a: &[C64]) -> Vec<C64> {
    a.iter().map(|z| z.conj()).collect()
}

/// Lower-triangular Cholesky factor `A = L L^H` of a Hermitian positive
/// definite matrix.
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    l: Vec<C64>,
}

impl Cholesky {
    pub fn factor(a: &CMatrix) -> Result<Cholesky> {
        let n = a.rows();
        if a.cols() != n {
            return Err(SolverError::Singular("matrix is not square".into()));
        }
        let scale = (0..n).fold(0.0f64, |m, i| m.max(a[(i, i)].re.abs()));
        let floor = scale * f64::EPSILON * n as f64;
        let mut l = vec![C64::new(0.0, 0.0); n * n];
        for j in 0..n {
            let mut d = a[(j, j)].re;
            for k in 0..j {
                d -= l[j * n + k].norm_sqr();
            }
            if !(d > floor) {
                return Err(SolverError::Singular(format!(
                    "nonpositive pivot {d:.3e} at column {j}"
                )));
            }
            let d = d.sqrt();
            l[j * n + j] = C64::new(d, 0.0);
            for i in j + 1..n {
                let mut s = a[(i, j)];
                let (ri, rj) = (&l[i * n..i * n + j], &l[j * n..j * n + j]);
                for (x, y) in ri.iter().zip(rj) {
                    s -= x * y.conj();
                }
                l[i * n + j] = s / d;
            }
        }
        Ok(Cholesky { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[i * n + k] * y[k];
            }
            y[i] = s / self.l[i * n + i].re;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.l[k * n + i].conj() * y[k];
            }
            y[i] = s / self.l[i * n + i].re;
        }
        y
    }

    /// `b^H A^{-1} b`, real for Hermitian `A`.
    pub fn quad_form_inv(&self, b: &[C64]) -> f64 {
        let n = self.n;
        let mut y = b.to_vec();
        let mut s = 0.0;
        for i in 0..n {
            let mut t = y[i];
            for k in 0..i {
                t -= self.l[i * n + k] * y[k];
            }
            y[i] = t / self.l[i * n + i].re;
            s += y[i].norm_sqr();
        }
        s
    }
}

/// Solves `A x = b` for Hermitian positive definite `A`.
pub fn hpd_solve(a: &CMatrix, b: &[C64]) -> Result<Vec<C64>> {
    if !a.is_hermitian(1e-12) {
        return Err(SolverError::Singular("matrix is not Hermitian".into()));
    }
    Ok(Cholesky::factor(a)?.solve(b))
}

/// Orthonormal basis (as columns of an `n x (n - r)` matrix) of the null
/// space `{x : H x = 0}` of a full-row-rank `r x n` matrix.
///
/// Modified Gram-Schmidt with one reorthogonalization pass: the conjugated
/// rows of `H` are orthonormalized first, then unit vectors are swept in
/// and kept when a sizeable component survives.
pub fn null_space_basis(h: &CMatrix) -> Result<CMatrix> {
    let (r, n) = (h.rows(), h.cols());
    if r >= n {
        return Err(SolverError::Singular(format!(
            "no null space for a {r}x{n} matrix"
        )));
    }
    let mut q: Vec<Vec<C64>> = Vec::with_capacity(n);
    let orthogonalize = |v: &mut Vec<C64>, q: &[Vec<C64>]| {
        for _ in 0..2 {
            for u in q {
                let c = inner(u, v);
                for (x, y) in v.iter_mut().zip(u) {
                    *x -= c * y;
                }
            }
        }
    };
    for i in 0..r {
        let mut v = conj(h.row(i));
        let before = norm(&v);
        orthogonalize(&mut v, &q);
        let after = norm(&v);
        if !(after > 1e-10 * before) {
            return Err(SolverError::Singular(format!(
                "rows of the constraint matrix are linearly dependent (row {i})"
            )));
        }
        v.iter_mut().for_each(|x| *x /= after);
        q.push(v);
    }
    let mut basis = Vec::with_capacity(n - r);
    for t in 0..n {
        if r + basis.len() == n {
            break;
        }
        let mut v = vec![C64::new(0.0, 0.0); n];
        v[t] = C64::new(1.0, 0.0);
        orthogonalize(&mut v, &q);
        let nv = norm(&v);
        // Each unit vector either survives with a sizeable residual or is
        // (numerically) in the span already; 1/sqrt(n) keeps the kept
        // vectors well conditioned.
        if nv > 0.5 / (n as f64).sqrt() {
            v.iter_mut().for_each(|x| *x /= nv);
            q.push(v.clone());
            basis.push(v);
        }
    }
    if basis.len() != n - r {
        return Err(SolverError::Singular(format!(
            "null-space completion found {} of {} vectors",
            basis.len(),
            n - r
        )));
    }
    Ok(CMatrix::from_fn(n, n - r, |i, j| basis[j][i]))
}

/// Solves a real square system by Gaussian elimination with partial
/// pivoting.
pub fn solve_real(a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut x = b.to_vec();
    if m.len() != n || m.iter().any(|r| r.len() != n) {
        return Err(SolverError::Singular("dimension mismatch".into()));
    }
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        if !(m[piv][col].abs() > 0.0) || !m[piv][col].is_finite() {
            return Err(SolverError::Singular(format!("zero pivot in column {col}")));
        }
        m.swap(col, piv);
        x.swap(col, piv);
        for i in col + 1..n {
            let f = m[i][col] / m[col][col];
            if f != 0.0 {
                for j in col..n {
                    m[i][j] -= f * m[col][j];
                }
                x[i] -= f * x[col];
            }
        }
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in i + 1..n {
            s -= m[i][j] * x[j];
        }
        x[i] = s / m[i][i];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> CMatrix {
        CMatrix::from_fn(rows, cols, |_, _| {
            c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        })
    }

    fn max_abs(v: &[C64]) -> f64 {
        v.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    #[test]
    fn identity_solve() {
        let b = vec![c(1.0, 2.0), c(-3.0, 0.5)];
        assert_eq!(hpd_solve(&CMatrix::identity(2), &b).unwrap(), b);
    }

    #[test]
    fn diagonal_solve() {
        let mut a = CMatrix::zeros(2, 2);
        a[(0, 0)] = c(2.0, 0.0);
        a[(1, 1)] = c(4.0, 0.0);
        let x = hpd_solve(&a, &[c(2.0, 0.0), c(4.0, 0.0)]).unwrap();
        assert!((x[0] - c(1.0, 0.0)).norm() < 1e-15);
        assert!((x[1] - c(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn random_hpd_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = random_matrix(8, 8, &mut rng);
        let mut a = g.adjoint().mul(&g);
        for i in 0..8 {
            a[(i, i)] += c(0.1, 0.0);
        }
        let b: Vec<C64> = (0..8).map(|_| c(rng.gen(), rng.gen())).collect();
        let x = hpd_solve(&a, &b).unwrap();
        let r: Vec<C64> = a.mul_vec(&x).iter().zip(&b).map(|(p, q)| p - q).collect();
        assert!(max_abs(&r) <= 1e-10 * max_abs(&b));
        let chol = Cholesky::factor(&a).unwrap();
        let q = chol.quad_form_inv(&b);
        assert!((q - inner(&b, &x).re).abs() < 1e-10 * q);
    }

    #[test]
    fn indefinite_is_rejected() {
        let mut a = CMatrix::identity(2);
        a[(1, 1)] = c(-1.0, 0.0);
        assert!(matches!(
            hpd_solve(&a, &[c(1.0, 0.0); 2]),
            Err(SolverError::Singular(_))
        ));
        let z = CMatrix::zeros(3, 3);
        assert!(Cholesky::factor(&z).is_err());
    }

    #[test]
    fn null_space_of_unit_row() {
        let h = CMatrix::from_rows(&[&[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]]);
        let b = null_space_basis(&h).unwrap();
        assert_eq!((b.rows(), b.cols()), (3, 2));
        let gram = b.adjoint().mul(&b);
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram[(i, j)] - c(want, 0.0)).norm() < 1e-14);
            }
        }
        assert!(b.row(0).iter().all(|z| z.norm() < 1e-15));
    }

    #[test]
    fn null_space_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (r, n) in [(1, 4), (3, 8), (10, 16), (40, 64)] {
            let h = random_matrix(r, n, &mut rng);
            let b = null_space_basis(&h).unwrap();
            assert_eq!(b.cols(), n - r);
            let hb = h.mul(&b);
            let hn = (0..r).map(|i| norm(h.row(i))).fold(0.0, f64::max);
            for i in 0..r {
                assert!(max_abs(hb.row(i)) <= 1e-10 * hn);
            }
            let gram = b.adjoint().mul(&b);
            for i in 0..n - r {
                for j in 0..n - r {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((gram[(i, j)] - c(want, 0.0)).norm() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn dependent_rows_rejected() {
        let row = [c(1.0, 1.0), c(2.0, 0.0), c(0.0, -1.0)];
        let twice: Vec<C64> = row.iter().map(|z| z * 2.0).collect();
        let h = CMatrix::from_rows(&[&row, &twice]);
        assert!(null_space_basis(&h).is_err());
    }

    #[test]
    fn real_pivoting_solve() {
        let a = vec![
            vec![0.0, 2.0, 1.0],
            vec![1.0, 1.0, 0.0],
            vec![3.0, 0.0, 1.0],
        ];
        let b = vec![5.0, 3.0, 6.0];
        let x = solve_real(&a, &b).unwrap();
        for i in 0..3 {
            let lhs: f64 = (0..3).map(|j| a[i][j] * x[j]).sum();
            assert!((lhs - b[i]).abs() < 1e-13);
        }
        assert!(solve_real(&[vec![1.0, 2.0], vec![2.0, 4.0]], &[1.0, 2.0]).is_err());
    }
}
