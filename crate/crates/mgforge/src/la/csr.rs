//! CSR sparse matrix holding a contiguous band of owned rows with global
//! column indices.

use std::io::Write;

/// Compressed sparse row matrix. Each rank stores the rows it owns
/// (`row_start .. row_start + local_rows`); column indices are global,
/// sorted and unique within each row. Stored entries may be zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub nrows_global: usize,
    pub ncols_global: usize,
    pub row_start: usize,
    pub row_offsets: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds the structure from per-row column lists (sorted and deduped
    /// here); values start at zero.
    pub fn from_pattern(
        nrows_global: usize,
        ncols_global: usize,
        row_start: usize,
        mut pattern: Vec<Vec<usize>>,
    ) -> Self {
        let mut row_offsets = Vec::with_capacity(pattern.len() + 1);
        row_offsets.push(0);
        let mut cols = Vec::new();
        for row in pattern.iter_mut() {
            row.sort_unstable();
            row.dedup();
            cols.extend_from_slice(row);
            row_offsets.push(cols.len());
        }
        let vals = vec![0.0; cols.len()];
        CsrMatrix {
            nrows_global,
            ncols_global,
            row_start,
            row_offsets,
            cols,
            vals,
        }
    }

    /// Single-rank matrix from (row, col, value) triplets; duplicate
    /// entries accumulate in the order given.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Self {
        let mut pattern = vec![Vec::new(); nrows];
        for &(r, c, _) in triplets {
            pattern[r].push(c);
        }
        let mut m = Self::from_pattern(nrows, ncols, 0, pattern);
        for &(r, c, v) in triplets {
            m.add_at(r, c, v);
        }
        m
    }

    pub fn local_rows(&self) -> usize {
        self.row_offsets.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, local_row: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.row_offsets[local_row], self.row_offsets[local_row + 1]);
        (&self.cols[s..e], &self.vals[s..e])
    }

    fn entry_index(&self, local_row: usize, global_col: usize) -> usize {
        let (s, e) = (self.row_offsets[local_row], self.row_offsets[local_row + 1]);
        s + self.cols[s..e]
            .binary_search(&global_col)
            .unwrap_or_else(|_| {
                panic!("column {global_col} absent from row {local_row} pattern")
            })
    }

    pub fn add_at(&mut self, local_row: usize, global_col: usize, v: f64) {
        let i = self.entry_index(local_row, global_col);
        self.vals[i] += v;
    }

    pub fn set_at(&mut self, local_row: usize, global_col: usize, v: f64) {
        let i = self.entry_index(local_row, global_col);
        self.vals[i] = v;
    }

    pub fn get(&self, local_row: usize, global_col: usize) -> Option<f64> {
        let (s, e) = (self.row_offsets[local_row], self.row_offsets[local_row + 1]);
        self.cols[s..e]
            .binary_search(&global_col)
            .ok()
            .map(|i| self.vals[s + i])
    }

    /// y = A x over the owned rows, with x given as a full global vector.
    /// Accumulation runs in column order, so the result is independent of
    /// how rows are distributed.
    pub fn spmv_full(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols_global);
        (0..self.local_rows())
            .map(|r| {
                let (cols, vals) = self.row(r);
                cols.iter()
                    .zip(vals)
                    .fold(0.0, |acc, (&c, &v)| acc + v * x[c])
            })
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Matrix-market style dump: `row col value` triplets, 1-based.
    pub fn dump(&self, w: &mut impl Write) -> std::io::Result<()> {
        for r in 0..self.local_rows() {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                writeln!(w, "{} {} {:e}", self.row_start + r + 1, c + 1, v)?;
            }
        }
        Ok(())
    }

    /// Transpose of a fully-owned matrix (used for restriction operators;
    /// entries stay sorted and the value order is deterministic).
    pub fn transpose_full(&self) -> CsrMatrix {
        assert_eq!(self.row_start, 0);
        assert_eq!(self.local_rows(), self.nrows_global);
        let mut pattern = vec![Vec::new(); self.ncols_global];
        for r in 0..self.local_rows() {
            for &c in self.row(r).0 {
                pattern[c].push(r);
            }
        }
        let mut t = CsrMatrix::from_pattern(
            self.ncols_global,
            self.nrows_global,
            0,
            pattern,
        );
        for r in 0..self.local_rows() {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                t.set_at(c, r, v);
            }
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_spmv() {
        let triplets: Vec<(usize, usize, f64)> = (0..4).map(|i| (i, i, 1.0)).collect();
        let a = CsrMatrix::from_triplets(4, 4, &triplets);
        let x = vec![3.0, -1.0, 2.0, 0.5];
        assert_eq!(a.spmv_full(&x), x);
    }

    #[test]
    fn laplacian_row_sums() {
        let n = 5;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        let a = CsrMatrix::from_triplets(n, n, &t);
        assert_eq!(a.spmv_full(&vec![1.0; n]), vec![1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn duplicate_triplets_accumulate() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 0, 2.5), (1, 0, -1.0)]);
        assert_eq!(a.get(0, 0), Some(3.5));
        assert_eq!(a.get(1, 0), Some(-1.0));
        assert_eq!(a.get(1, 1), None);
    }

    #[test]
    fn transpose_roundtrip() {
        let a = CsrMatrix::from_triplets(
            3,
            2,
            &[(0, 0, 1.0), (0, 1, 2.0), (1, 1, 3.0), (2, 0, 4.0)],
        );
        let t = a.transpose_full();
        assert_eq!(t.get(0, 0), Some(1.0));
        assert_eq!(t.get(1, 0), Some(2.0));
        assert_eq!(t.get(1, 1), Some(3.0));
        assert_eq!(t.get(0, 2), Some(4.0));
        assert_eq!(t.transpose_full(), a);
    }

    #[test]
    fn dump_is_one_based() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 1, 2.0), (1, 0, -1.0)]);
        let mut buf = Vec::new();
        a.dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "1 2 2e0");
        assert_eq!(text.lines().nth(1).unwrap(), "2 1 -1e0");
    }
}
