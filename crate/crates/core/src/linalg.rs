//! Small dense complex linear algebra: a row-major matrix type, LU with
//! partial pivoting, and norm helpers.

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![C64::new(0.0, 0.0); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_real_diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = C64::new(v, 0.0);
        }
        m
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [C64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    pub fn matmul(&self, other: &CMatrix) -> CMatrix {
        assert_eq!(self.cols, other.rows);
        let mut out = CMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                let orow = other.row(k);
                for (o, b) in out.row_mut(i).iter_mut().zip(orow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn adjoint(&self) -> CMatrix {
        CMatrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn sub(&self, other: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        CMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect() }
    }

    pub fn add_assign_scaled(&mut self, s: C64, other: &CMatrix) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Largest entrywise `|M_{ij} − conj(M_{ji})|`.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in i..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, z| acc.max(z.norm()))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Spectral norm via power iteration on `M* M`; deterministic start vector.
    pub fn norm2(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        let mut v: Vec<C64> = (0..self.cols).map(|i| C64::new(1.0 + 0.37 * (i as f64).sin(), 0.1 * i as f64 % 1.0)).collect();
        let adj = self.adjoint();
        let mut sigma = 0.0;
        for _ in 0..500 {
            let nv = norm(&v);
            if nv == 0.0 {
                return 0.0;
            }
            v.iter_mut().for_each(|z| *z /= nv);
            let w = self.matvec(&v);
            let u = adj.matvec(&w);
            let s = norm(&w);
            let done = (s - sigma).abs() <= 1e-14 * s;
            sigma = s;
            v = u;
            if done {
                break;
            }
        }
        sigma
    }

    /// Write the matrix as `u64 rows, u64 cols` followed by row-major
    /// little-endian complex128 entries.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let io = |e| Error::Io { path: path.to_path_buf(), source: e };
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        f.write_all(&(self.rows as u64).to_le_bytes()).map_err(io)?;
        f.write_all(&(self.cols as u64).to_le_bytes()).map_err(io)?;
        for z in &self.data {
            f.write_all(&z.re.to_le_bytes()).map_err(io)?;
            f.write_all(&z.im.to_le_bytes()).map_err(io)?;
        }
        f.flush().map_err(io)
    }

    pub fn read_binary(path: &Path) -> Result<CMatrix> {
        let io = |e| Error::Io { path: path.to_path_buf(), source: e };
        let mut bytes = Vec::new();
        std::fs::File::open(path).map_err(io)?.read_to_end(&mut bytes).map_err(io)?;
        if bytes.len() < 16 {
            return Err(Error::ShapeMismatch { expected: 16, got: bytes.len() });
        }
        let word = |i: usize| u64::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().expect("8 bytes")) as usize;
        let (rows, cols) = (word(0), word(1));
        let expected = 16 + 16 * rows * cols;
        if bytes.len() != expected {
            return Err(Error::ShapeMismatch { expected, got: bytes.len() });
        }
        let f = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        let data = (0..rows * cols).map(|i| C64::new(f(16 + 16 * i), f(24 + 16 * i))).collect();
        Ok(CMatrix { rows, cols, data })
    }
}

impl std::ops::Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// LU factorization with partial pivoting, `P A = L U`.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<C64>,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(a: &CMatrix) -> Result<Lu> {
        assert!(a.is_square());
        let n = a.rows;
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pv) = (k..n)
                .map(|i| (i, lu[i * n + k].norm()))
                .max_by(|x, y| x.1.total_cmp(&y.1))
                .expect("nonempty pivot column");
            if pv == 0.0 || !pv.is_finite() {
                return Err(Error::Singular(format!("zero pivot in column {k}")));
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let inv = C64::new(1.0, 0.0) / lu[k * n + k];
            let (top, bottom) = lu.split_at_mut((k + 1) * n);
            let pivot_row = &top[k * n..(k + 1) * n];
            for row in bottom.chunks_exact_mut(n) {
                let l = row[k] * inv;
                row[k] = l;
                if l != C64::new(0.0, 0.0) {
                    for j in k + 1..n {
                        row[j] -= l * pivot_row[j];
                    }
                }
            }
        }
        Ok(Lu { n, lu, perm })
    }

    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let n = self.n;
        let mut x: Vec<C64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let s: C64 = (0..i).map(|j| self.lu[i * n + j] * x[j]).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let s: C64 = (i + 1..n).map(|j| self.lu[i * n + j] * x[j]).sum();
            x[i] = (x[i] - s) / self.lu[i * n + i];
        }
        x
    }

    /// `A^{-1}` column by column.
    pub fn inverse(&self) -> CMatrix {
        let n = self.n;
        let mut inv = CMatrix::zeros(n, n);
        let mut e = vec![C64::new(0.0, 0.0); n];
        for j in 0..n {
            e.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
            e[j] = C64::new(1.0, 0.0);
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> CMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CMatrix::from_fn(n, n, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    #[test]
    fn lu_inverse_is_inverse() {
        let a = random(30, 1);
        let inv = Lu::factor(&a).unwrap().inverse();
        let e = a.matmul(&inv).sub(&CMatrix::identity(30));
        assert!(e.max_abs() < 1e-11);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = CMatrix::zeros(3, 3);
        assert!(matches!(Lu::factor(&a), Err(Error::Singular(_))));
    }

    #[test]
    fn norm2_of_diagonal() {
        let m = CMatrix::from_real_diag(&[1.0, -3.0, 2.0]);
        assert!((m.norm2() - 3.0).abs() < 1e-10);
    }

    #[test]
    fn binary_round_trip() {
        let a = random(5, 2);
        let dir = std::env::temp_dir().join(format!("semitrace-bin-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.bin");
        a.write_binary(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 16 + 16 * 25);
        assert_eq!(u64::from_le_bytes(bytes[0..8].try_into().unwrap()), 5);
        assert_eq!(CMatrix::read_binary(&path).unwrap(), a);
        std::fs::remove_dir_all(&dir).ok();
    }
}
