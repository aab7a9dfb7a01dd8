//! Small banded solvers used by the optimizer and the eigensolver.

use crate::error::{Error, Result};

/// Factored symmetric tridiagonal matrix (LDLᵀ without pivoting).
#[derive(Debug, Clone)]
pub struct Tridiag {
    d: Vec<f64>,
    l: Vec<f64>,
}

impl Tridiag {
    /// `diag[i]` and `off[i] = A[i][i+1]`.
    pub fn factor(diag: &[f64], off: &[f64]) -> Result<Self> {
        let n = diag.len();
        let mut d = vec![0.0; n];
        let mut l = vec![0.0; n.saturating_sub(1)];
        d[0] = diag[0];
        for i in 1..n {
            if !(d[i - 1] > 0.0) {
                return Err(Error::Internal("tridiagonal matrix is not positive definite".into()));
            }
            l[i - 1] = off[i - 1] / d[i - 1];
            d[i] = diag[i] - l[i - 1] * off[i - 1];
        }
        if !(d[n - 1] > 0.0) {
            return Err(Error::Internal("tridiagonal matrix is not positive definite".into()));
        }
        Ok(Self { d, l })
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    /// Solves in place for a strided right-hand side `x[off + i * stride]`.
    pub fn solve_strided(&self, x: &mut [f64], off: usize, stride: usize) {
        let n = self.d.len();
        for i in 1..n {
            x[off + i * stride] -= self.l[i - 1] * x[off + (i - 1) * stride];
        }
        for i in 0..n {
            x[off + i * stride] /= self.d[i];
        }
        for i in (0..n - 1).rev() {
            x[off + i * stride] -= self.l[i] * x[off + (i + 1) * stride];
        }
    }
}

/// Symmetric positive definite band matrix, lower storage `a[i][i-j]` for `j ≤ p`.
#[derive(Debug, Clone)]
pub struct BandSpd {
    n: usize,
    p: usize,
    a: Vec<f64>,
}

impl BandSpd {
    pub fn zeros(n: usize, p: usize) -> Self {
        Self { n, p, a: vec![0.0; n * (p + 1)] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.p
    }

    /// Adds `v` to entry `(i, j)` with `|i − j| ≤ p` (and its mirror).
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        debug_assert!(r - c <= self.p);
        self.a[r * (self.p + 1) + (r - c)] += v;
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        if r - c > self.p {
            0.0
        } else {
            self.a[r * (self.p + 1) + (r - c)]
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let p = self.p;
        y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.n {
            let row = &self.a[i * (p + 1)..(i + 1) * (p + 1)];
            y[i] += row[0] * x[i];
            for k in 1..=p.min(i) {
                let j = i - k;
                y[i] += row[k] * x[j];
                y[j] += row[k] * x[i];
            }
        }
    }

    /// `self + s·other` for matrices of equal shape.
    pub fn axpy(&self, s: f64, other: &BandSpd) -> BandSpd {
        assert_eq!((self.n, self.p), (other.n, other.p));
        BandSpd { n: self.n, p: self.p, a: self.a.iter().zip(&other.a).map(|(x, y)| x + s * y).collect() }
    }

    /// Band Cholesky `A = L Lᵀ`; fails if `A` is not positive definite.
    pub fn cholesky(&self) -> Result<BandCholesky> {
        let (n, p) = (self.n, self.p);
        let mut l = self.a.clone();
        let w = p + 1;
        for i in 0..n {
            let j0 = i.saturating_sub(p);
            for j in j0..=i {
                let mut s = l[i * w + (i - j)];
                let k0 = j0.max(j.saturating_sub(p));
                for k in k0..j {
                    s -= l[i * w + (i - k)] * l[j * w + (j - k)];
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::Internal(format!("band matrix not positive definite at row {i}")));
                    }
                    l[i * w] = s.sqrt();
                } else {
                    l[i * w + (i - j)] = s / l[j * w];
                }
            }
        }
        Ok(BandCholesky { n, p, l })
    }
}

#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    p: usize,
    l: Vec<f64>,
}

impl BandCholesky {
    pub fn solve(&self, x: &mut [f64]) {
        let (n, p) = (self.n, self.p);
        let w = p + 1;
        for i in 0..n {
            let mut s = x[i];
            for k in i.saturating_sub(p)..i {
                s -= self.l[i * w + (i - k)] * x[k];
            }
            x[i] = s / self.l[i * w];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..(i + p + 1).min(n) {
                s -= self.l[k * w + (k - i)] * x[k];
            }
            x[i] = s / self.l[i * w];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn tridiag_solves(diag in proptest::collection::vec(2.5f64..5.0, 2..30), seed in proptest::collection::vec(-1.0f64..1.0, 30)) {
            let n = diag.len();
            let off: Vec<f64> = (0..n - 1).map(|i| seed[i]).collect();
            let b: Vec<f64> = (0..n).map(|i| seed[(i * 7) % 30] + 0.1).collect();
            let f = Tridiag::factor(&diag, &off).unwrap();
            let mut x = b.clone();
            f.solve_strided(&mut x, 0, 1);
            for i in 0..n {
                let mut r = diag[i] * x[i];
                if i > 0 { r += off[i - 1] * x[i - 1]; }
                if i + 1 < n { r += off[i] * x[i + 1]; }
                prop_assert!((r - b[i]).abs() <= 1e-10);
            }
        }

        #[test]
        fn band_cholesky_solves(n in 3usize..25, p in 1usize..4, seed in proptest::collection::vec(-1.0f64..1.0, 100)) {
            let mut a = BandSpd::zeros(n, p);
            for i in 0..n {
                a.add(i, i, 2.0 * p as f64 + 1.0);
                for k in 1..=p.min(i) {
                    a.add(i, i - k, seed[(i * 3 + k) % 100]);
                }
            }
            let ch = a.cholesky().unwrap();
            let b: Vec<f64> = (0..n).map(|i| seed[(i * 11) % 100]).collect();
            let mut x = b.clone();
            ch.solve(&mut x);
            let mut y = vec![0.0; n];
            a.matvec(&x, &mut y);
            for i in 0..n {
                prop_assert!((y[i] - b[i]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn indefinite_band_fails() {
        let mut a = BandSpd::zeros(3, 1);
        a.add(0, 0, 1.0);
        a.add(1, 1, -1.0);
        a.add(2, 2, 1.0);
        assert!(a.cholesky().is_err());
    }
}
