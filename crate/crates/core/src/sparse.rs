//! Compressed-row symmetric matrices and the few dense-vector kernels the
//! solvers need.
//!
//! Both triangles are stored. Values are accumulated element by element in a
//! fixed order, so `a_ij` and `a_ji` are bit-identical by construction.
//! Parallel kernels split work into fixed-size chunks and reduce partial sums
//! sequentially, which keeps results independent of the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseSymmetric {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSymmetric {
    /// Zero matrix with the given (symmetric) sparsity pattern. Each row's
    /// column list is sorted and deduplicated.
    pub fn from_pattern(mut rows: Vec<Vec<usize>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        for r in rows.iter_mut() {
            r.sort_unstable();
            r.dedup();
            col_idx.extend_from_slice(r);
            row_ptr.push(col_idx.len());
        }
        let values = vec![0.0; col_idx.len()];
        Self { n, row_ptr, col_idx, values }
    }

    /// Pattern from element connectivity: every pair of element dofs couples.
    pub fn from_elements<'a, I>(n: usize, elements: I) -> Self
    where
        I: IntoIterator<Item = &'a [usize]>,
    {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for el in elements {
            for &a in el {
                rows[a].extend_from_slice(el);
            }
        }
        Self::from_pattern(rows)
    }

    /// Builds from per-row `(column, value)` lists; columns need not be sorted.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        for mut r in rows {
            r.sort_by_key(|e| e.0);
            for (c, v) in r {
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Self { n, row_ptr, col_idx, values }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col_idx[lo..hi].binary_search(&j).ok().map(|k| lo + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |k| self.values[k])
    }

    /// Adds `v` to entry `(i, j)`; panics if the entry is outside the pattern.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.slot(i, j).unwrap_or_else(|| panic!("entry ({i}, {j}) outside sparsity pattern"));
        self.values[k] += v;
    }

    /// Scatters a dense element matrix. `dofs[a] == None` drops row/column `a`.
    pub fn add_element(&mut self, dofs: &[Option<usize>], local: &[f64]) {
        let m = dofs.len();
        for (a, da) in dofs.iter().enumerate() {
            let Some(i) = *da else { continue };
            for (b, db) in dofs.iter().enumerate() {
                let Some(j) = *db else { continue };
                self.add(i, j, local[a * m + b]);
            }
        }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col_idx[lo..hi].iter().copied().zip(self.values[lo..hi].iter().copied())
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// `y = A x`
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        y.par_chunks_mut(CHUNK).enumerate().for_each(|(c, ys)| {
            let start = c * CHUNK;
            for (k, yi) in ys.iter_mut().enumerate() {
                let i = start + k;
                let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
                let mut s = 0.0;
                for p in lo..hi {
                    s += self.values[p] * x[self.col_idx[p]];
                }
                *yi = s;
            }
        });
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    /// `xᵀ A x` with compensated summation.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let ax = self.matvec(x);
        compensated_dot(x, &ax)
    }

    /// Largest `|a_ij - a_ji|` over stored entries.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                let t = match self.slot(j, i) {
                    Some(k) => self.values[k],
                    None => return f64::INFINITY,
                };
                worst = worst.max((v - t).abs());
            }
        }
        worst
    }

    pub fn sum_entries(&self) -> f64 {
        let mut s = Neumaier::default();
        for &v in &self.values {
            s.add(v);
        }
        s.sum()
    }

    /// Restriction to the rows/columns with `map[i] = Some(new_index)`.
    pub fn restrict(&self, map: &[Option<usize>], new_dim: usize) -> Self {
        assert_eq!(map.len(), self.n);
        let mut inverse = vec![usize::MAX; new_dim];
        for (old, m) in map.iter().enumerate() {
            if let Some(new) = m {
                inverse[*new] = old;
            }
        }
        let mut row_ptr = Vec::with_capacity(new_dim + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for &old in &inverse {
            for (j, v) in self.row(old) {
                if let Some(nj) = map[j] {
                    col_idx.push(nj);
                    values.push(v);
                }
            }
            // Column order is preserved only if the map is monotone; re-sort otherwise.
            let lo = *row_ptr.last().unwrap();
            if !col_idx[lo..].windows(2).all(|w| w[0] < w[1]) {
                let mut pairs: Vec<(usize, f64)> = col_idx[lo..].iter().copied().zip(values[lo..].iter().copied()).collect();
                pairs.sort_by_key(|p| p.0);
                for (k, (c, v)) in pairs.into_iter().enumerate() {
                    col_idx[lo + k] = c;
                    values[lo + k] = v;
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self { n: new_dim, row_ptr, col_idx, values }
    }

    /// Coordinate text dump: one `row col value` triple per line.
    pub fn write_coordinate<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "% symmetric sparse matrix, both triangles stored")?;
        writeln!(w, "{} {} {}", self.n, self.n, self.nnz())?;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                writeln!(w, "{i} {j} {v:.17e}")?;
            }
        }
        Ok(())
    }

    /// Dense copy; test helper for small matrices.
    pub fn to_dense(&self) -> Result<Vec<Vec<f64>>> {
        if self.n > 4000 {
            return Err(Error::Invalid(format!("refusing to densify a {}x{} matrix", self.n, self.n)));
        }
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        Ok(d)
    }
}

/// Neumaier's variant of Kahan summation.
#[derive(Debug, Default, Clone, Copy)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn sum(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = Neumaier::default();
    for (x, y) in a.iter().zip(b) {
        s.add(x * y);
    }
    s.sum()
}

/// Chunked dot product; deterministic for any thread count.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let partial: Vec<f64> =
        a.par_chunks(CHUNK).zip(b.par_chunks(CHUNK)).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>()).collect();
    partial.iter().sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
