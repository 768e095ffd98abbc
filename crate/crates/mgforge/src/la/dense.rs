//! Dense row-major matrices and LU factorization with partial pivoting.
//!
//! The factorization is blocked (panel + triangular solve + rank-kb
//! update) so that telescoped coarse solves stay usable up to the dof cap.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub nrows: usize,
    pub ncols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        DenseMatrix {
            nrows,
            ncols,
            data: vec![0.0; nrows * ncols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            *m.at_mut(i, i) = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(nrows * ncols);
        for r in rows {
            assert_eq!(r.len(), ncols);
            data.extend_from_slice(r);
        }
        DenseMatrix { nrows, ncols, data }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.ncols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.ncols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.ncols..(r + 1) * self.ncols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.ncols..(r + 1) * self.ncols]
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(x)
                    .fold(0.0, |acc, (a, b)| acc + a * b)
            })
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// LU factors with partial pivoting: `P A = L U` stored packed in place.
#[derive(Debug, Clone)]
pub struct DenseFactor {
    n: usize,
    lu: DenseMatrix,
    /// perm[i] = original row index now living at position i.
    perm: Vec<usize>,
}

const PANEL: usize = 64;

/// Factors a square matrix, consuming it. Fails with `SingularMatrix` on a
/// pivot below `n * eps * max|A|`.
pub fn lu_factor(mut a: DenseMatrix) -> Result<DenseFactor> {
    assert_eq!(a.nrows, a.ncols, "LU needs a square matrix");
    let n = a.nrows;
    let tol = (n.max(1) as f64) * f64::EPSILON * a.max_abs();
    let mut perm: Vec<usize> = (0..n).collect();

    let mut k0 = 0;
    while k0 < n {
        let kb = PANEL.min(n - k0);
        // panel factorization with row pivoting over the full height
        for j in k0..k0 + kb {
            let mut piv = j;
            let mut best = a.at(j, j).abs();
            for r in j + 1..n {
                let v = a.at(r, j).abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best <= tol {
                return Err(Error::SingularMatrix { step: j });
            }
            if piv != j {
                // swap full rows so previously computed L entries follow
                for c in 0..n {
                    let t = a.at(j, c);
                    *a.at_mut(j, c) = a.at(piv, c);
                    *a.at_mut(piv, c) = t;
                }
                perm.swap(j, piv);
            }
            let d = a.at(j, j);
            for r in j + 1..n {
                let l = a.at(r, j) / d;
                *a.at_mut(r, j) = l;
                if l != 0.0 {
                    for c in j + 1..k0 + kb {
                        *a.at_mut(r, c) -= l * a.at(j, c);
                    }
                }
            }
        }
        let tail = k0 + kb;
        if tail < n {
            // U12 = L11^{-1} A12 by forward substitution over panel rows
            for r in k0 + 1..tail {
                for t in k0..r {
                    let l = a.at(r, t);
                    if l != 0.0 {
                        let (top, bottom) = a.data.split_at_mut(r * a.ncols);
                        let urow = &top[t * a.ncols + tail..t * a.ncols + n];
                        let rrow = &mut bottom[tail..n];
                        for (x, u) in rrow.iter_mut().zip(urow) {
                            *x -= l * u;
                        }
                    }
                }
            }
            // trailing update A22 -= L21 U12, four rows at a time
            trailing_update(&mut a, k0, kb, tail, n);
        }
        k0 += kb;
    }
    Ok(DenseFactor { n, lu: a, perm })
}

fn trailing_update(a: &mut DenseMatrix, k0: usize, kb: usize, tail: usize, n: usize) {
    let ncols = a.ncols;
    let mut i = tail;
    while i < n {
        let rows = (n - i).min(4);
        for t in 0..kb {
            let l: Vec<f64> = (0..rows).map(|r| a.at(i + r, k0 + t)).collect();
            let (top, bottom) = a.data.split_at_mut(i * ncols);
            let urow = &top[(k0 + t) * ncols + tail..(k0 + t) * ncols + n];
            match rows {
                4 => {
                    let (r0, rest) = bottom.split_at_mut(ncols);
                    let (r1, rest) = rest.split_at_mut(ncols);
                    let (r2, rest) = rest.split_at_mut(ncols);
                    let r0 = &mut r0[tail..n];
                    let r1 = &mut r1[tail..n];
                    let r2 = &mut r2[tail..n];
                    let r3 = &mut rest[tail..n];
                    for j in 0..urow.len() {
                        let u = urow[j];
                        r0[j] -= l[0] * u;
                        r1[j] -= l[1] * u;
                        r2[j] -= l[2] * u;
                        r3[j] -= l[3] * u;
                    }
                }
                _ => {
                    for (r, lv) in l.iter().enumerate() {
                        let row = &mut bottom[r * ncols + tail..r * ncols + n];
                        for (x, u) in row.iter_mut().zip(urow) {
                            *x -= lv * u;
                        }
                    }
                }
            }
        }
        i += rows;
    }
}

impl DenseFactor {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Solves `A x = b` using the cached factors.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        // apply permutation
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        // forward substitution with unit lower triangle
        for i in 1..n {
            let row = self.lu.row(i);
            let mut s = x[i];
            for (j, xv) in x.iter().enumerate().take(i) {
                s -= row[j] * xv;
            }
            x[i] = s;
        }
        // back substitution
        for i in (0..n).rev() {
            let row = self.lu.row(i);
            let mut s = x[i];
            for (j, xv) in x.iter().enumerate().skip(i + 1) {
                s -= row[j] * xv;
            }
            x[i] = s / row[i];
        }
        x
    }

    /// Reconstructs `P A` from the factors (test support).
    pub fn reconstruct_permuted(&self) -> DenseMatrix {
        let n = self.n;
        let mut out = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let kmax = i.min(j);
                let mut s = if i <= j { self.lu.at(i, j) } else { 0.0 };
                for k in 0..=kmax {
                    if k < i && k <= j {
                        s += self.lu.at(i, k) * self.lu.at(k, j);
                    }
                }
                *out.at_mut(i, j) = s;
            }
        }
        out
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }
}
