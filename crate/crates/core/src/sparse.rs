//! Compressed-sparse-row matrices and their products with dense matrices.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::dense::{axpy, DenseMatrix};
use crate::error::{Error, Result};

/// A CSR matrix with column indices sorted within each row and no duplicates.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are summed.
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|&&(r, c, _)| r >= n_rows || c >= n_cols) {
            return Err(Error::Shape(format!(
                "entry ({r}, {c}) outside a {n_rows}x{n_cols} matrix"
            )));
        }
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut indptr = vec![0usize; n_rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for i in 0..n_rows {
            indptr[i + 1] += indptr[i];
        }
        Ok(Self {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        })
    }

    /// Builds a matrix from per-row `(col, value)` lists.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let n_rows = rows.len();
        let mut indptr = Vec::with_capacity(n_rows + 1);
        indptr.push(0);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(c, _)| c);
            for w in row.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(Error::Shape(format!("duplicate column {} in row {i}", w[0].0)));
                }
            }
            for (c, v) in row {
                if c >= n_cols {
                    return Err(Error::Shape(format!("column {c} in row {i} outside {n_cols} columns")));
                }
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn from_dense(m: &DenseMatrix) -> Self {
        let rows = m
            .row_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(j, v)| (j, *v))
                    .collect()
            })
            .collect();
        Self::from_rows(m.cols(), rows).expect("dense rows are well formed")
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    #[inline]
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).ok().map(|p| vals[p])
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.n_rows, self.n_cols);
        for (i, j, v) in self.iter() {
            out.set(i, j, v);
        }
        out
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.n_cols];
        for (i, j, v) in self.iter() {
            rows[j].push((i, v));
        }
        Self::from_rows(self.n_rows, rows).expect("transpose of a valid matrix")
    }

    /// Largest `|A[i][j] − A[j][i]|` over stored entries; a missing mirror counts as 0.
    pub fn max_asymmetry(&self) -> f64 {
        if self.n_rows != self.n_cols {
            return f64::INFINITY;
        }
        self.iter()
            .map(|(i, j, v)| (v - self.get(j, i).unwrap_or(0.0)).abs())
            .fold(0.0, f64::max)
    }

    /// `self · x` for a dense vector.
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(out.len(), self.n_rows);
        for (i, o) in out.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *o = cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum();
        }
    }

    /// `self · h`.
    pub fn mul_dense(&self, h: &DenseMatrix) -> Result<DenseMatrix> {
        if self.n_cols != h.rows() {
            return Err(Error::Shape(format!(
                "sparse {}x{} times dense {}x{}",
                self.n_rows,
                self.n_cols,
                h.rows(),
                h.cols()
            )));
        }
        let k = h.cols();
        let mut out = DenseMatrix::zeros(self.n_rows, k);
        if k == 0 {
            return Ok(out);
        }
        let kernel = |(i, out_row): (usize, &mut [f64])| {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                axpy(v, h.row(j), out_row);
            }
        };
        if self.nnz() * k >= 1 << 16 {
            out.data_mut().par_chunks_mut(k).enumerate().for_each(kernel);
        } else {
            out.data_mut().chunks_mut(k).enumerate().for_each(kernel);
        }
        Ok(out)
    }

    /// `selfᵀ · g`, computed by scattering rows of `g`.
    pub fn transpose_mul_dense(&self, g: &DenseMatrix) -> Result<DenseMatrix> {
        if self.n_rows != g.rows() {
            return Err(Error::Shape(format!(
                "transposed sparse {}x{} times dense {}x{}",
                self.n_rows,
                self.n_cols,
                g.rows(),
                g.cols()
            )));
        }
        let mut out = DenseMatrix::zeros(self.n_cols, g.cols());
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            let g_row = g.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                axpy(v, g_row, out.row_mut(j));
            }
        }
        Ok(out)
    }

    /// Writes the text dump: header `N nnz`, then one `row col value` line per entry.
    pub fn write_text(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "{} {}", self.n_rows, self.nnz()).map_err(io)?;
        for (i, j, v) in self.iter() {
            writeln!(w, "{i} {j} {v}").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Reads a square matrix written by [`CsrMatrix::write_text`].
    pub fn read_text(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "missing header"))?
            .map_err(|e| Error::io(path, e))?;
        let mut it = header.split_whitespace();
        let parse_usize = |s: Option<&str>, line: usize| -> Result<usize> {
            s.ok_or_else(|| Error::parse(path, line, "missing field"))?
                .parse()
                .map_err(|e| Error::parse(path, line, format!("{e}")))
        };
        let n = parse_usize(it.next(), 1)?;
        let nnz = parse_usize(it.next(), 1)?;
        let mut triplets = Vec::with_capacity(nnz);
        for (ln, line) in lines.enumerate() {
            let line_no = ln + 2;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut f = line.split_whitespace();
            let i = parse_usize(f.next(), line_no)?;
            let j = parse_usize(f.next(), line_no)?;
            let v: f64 = f
                .next()
                .ok_or_else(|| Error::parse(path, line_no, "missing value"))?
                .parse()
                .map_err(|e| Error::parse(path, line_no, format!("{e}")))?;
            if f.next().is_some() {
                return Err(Error::parse(path, line_no, "trailing fields"));
            }
            if i >= n || j >= n {
                return Err(Error::parse(path, line_no, "index out of range"));
            }
            triplets.push((i, j, v));
        }
        if triplets.len() != nnz {
            return Err(Error::Validation(format!(
                "{}: header declares {nnz} entries, found {}",
                path.display(),
                triplets.len()
            )));
        }
        Self::from_triplets(n, n, triplets)
    }
}
