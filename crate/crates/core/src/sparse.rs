//! Compressed-row sparse matrices and the `MGR1` graph file format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::par;

const GRAPH_MAGIC: &[u8; 4] = b"MGR1";

/// Weighted adjacency in compressed-row form.
///
/// Column indices are sorted and unique within each row, and no explicit
/// zeros or non-finite values are stored.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn empty(rows: usize, cols: usize) -> Self {
        SparseMatrix {
            rows,
            cols,
            offsets: vec![0; rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            rows: n,
            cols: n,
            offsets: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds from `(row, col, value)` triplets. Duplicates are summed and
    /// resulting zeros dropped.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); rows];
        for &(r, c, v) in triplets {
            if r >= rows || c >= cols {
                return Err(Error::shape(format!(
                    "entry ({r}, {c}) outside {rows}×{cols} matrix"
                )));
            }
            if !v.is_finite() {
                return Err(Error::Numerics(format!("entry ({r}, {c}) is {v}")));
            }
            per_row[r].push((c, v));
        }
        Ok(Self::from_row_lists(rows, cols, per_row))
    }

    /// Assembles from per-row `(col, value)` lists in row order. Columns are
    /// sorted, duplicates summed, zeros dropped.
    pub(crate) fn from_row_lists(rows: usize, cols: usize, lists: Vec<Vec<(usize, f64)>>) -> Self {
        debug_assert_eq!(lists.len(), rows);
        let mut offsets = Vec::with_capacity(rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        offsets.push(0);
        for mut row in lists {
            row.sort_by_key(|&(c, _)| c);
            let mut k = 0;
            while k < row.len() {
                let c = row[k].0;
                let mut v = 0.0;
                while k < row.len() && row[k].0 == c {
                    v += row[k].1;
                    k += 1;
                }
                if v != 0.0 {
                    indices.push(c);
                    values.push(v);
                }
            }
            offsets.push(indices.len());
        }
        SparseMatrix {
            rows,
            cols,
            offsets,
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

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.offsets[r], self.offsets[r + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (idx, vals) = self.row(r);
        match idx.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// Iterates `(row, col, value)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            let (idx, vals) = self.row(r);
            idx.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.indices {
            counts[c + 1] += 1;
        }
        for i in 0..self.cols {
            counts[i + 1] += counts[i];
        }
        let offsets = counts.clone();
        let mut next = counts;
        let mut indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for (r, c, v) in self.iter() {
            let slot = next[c];
            indices[slot] = r;
            values[slot] = v;
            next[c] += 1;
        }
        SparseMatrix {
            rows: self.cols,
            cols: self.rows,
            offsets,
            indices,
            values,
        }
    }

    /// `self + scale · other`. Overlapping entries are summed.
    pub fn add_scaled(&self, other: &SparseMatrix, scale: f64) -> Result<SparseMatrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::shape(format!(
                "cannot add {}×{} and {}×{} matrices",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let lists = (0..self.rows)
            .map(|r| {
                let (ai, av) = self.row(r);
                let (bi, bv) = other.row(r);
                let mut out: Vec<(usize, f64)> = ai.iter().copied().zip(av.iter().copied()).collect();
                out.extend(bi.iter().zip(bv).map(|(&c, &v)| (c, scale * v)));
                out
            })
            .collect();
        Ok(Self::from_row_lists(self.rows, self.cols, lists))
    }

    /// Elementwise `max(W, Wᵀ)` of a square matrix.
    pub fn symmetrize_max(&self) -> Result<SparseMatrix> {
        if self.rows != self.cols {
            return Err(Error::shape(format!(
                "symmetrization needs a square matrix, got {}×{}",
                self.rows, self.cols
            )));
        }
        let t = self.transpose();
        let lists = (0..self.rows)
            .map(|r| {
                let (ai, av) = self.row(r);
                let (bi, bv) = t.row(r);
                let mut out = Vec::with_capacity(ai.len() + bi.len());
                let (mut x, mut y) = (0, 0);
                while x < ai.len() || y < bi.len() {
                    let ca = ai.get(x).copied().unwrap_or(usize::MAX);
                    let cb = bi.get(y).copied().unwrap_or(usize::MAX);
                    if ca == cb {
                        out.push((ca, av[x].max(bv[y])));
                        x += 1;
                        y += 1;
                    } else if ca < cb {
                        // missing transpose entry counts as 0
                        out.push((ca, av[x].max(0.0)));
                        x += 1;
                    } else {
                        out.push((cb, bv[y].max(0.0)));
                        y += 1;
                    }
                }
                out
            })
            .collect();
        Ok(Self::from_row_lists(self.rows, self.cols, lists))
    }

    /// Copy keeping only entries for which `keep(row, col, value)` holds.
    pub fn filter(&self, keep: impl Fn(usize, usize, f64) -> bool) -> SparseMatrix {
        let lists = (0..self.rows)
            .map(|r| {
                let (idx, vals) = self.row(r);
                idx.iter()
                    .zip(vals)
                    .filter(|&(&c, &v)| keep(r, c, v))
                    .map(|(&c, &v)| (c, v))
                    .collect()
            })
            .collect();
        Self::from_row_lists(self.rows, self.cols, lists)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        let t = self.transpose();
        self.offsets == t.offsets
            && self.indices == t.indices
            && self.values.iter().zip(&t.values).all(|(a, b)| (a - b).abs() <= tol)
    }

    /// Row sums.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).1.iter().sum()).collect()
    }

    /// `self · x` for a dense row-major `x` of shape `cols × d`.
    pub fn matmul_dense(&self, x: &[f64], d: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols * d);
        let mut out = vec![0.0; self.rows * d];
        par::for_each_row(&mut out, d, |r, row| {
            let (idx, vals) = self.row(r);
            for (&c, &w) in idx.iter().zip(vals) {
                for (o, &xv) in row.iter_mut().zip(&x[c * d..(c + 1) * d]) {
                    *o += w * xv;
                }
            }
        });
        out
    }

    /// Dense row-major copy, for tests and small diagnostics.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * self.cols];
        for (r, c, v) in self.iter() {
            out[r * self.cols + c] = v;
        }
        out
    }

    /// Copy with values rounded through `f32`, matching what [`write_graph`]
    /// persists.
    pub fn rounded_to_f32(&self) -> SparseMatrix {
        let mut m = self.clone();
        m.values.iter_mut().for_each(|v| *v = *v as f32 as f64);
        let keep_all = m.values.iter().all(|&v| v != 0.0);
        if keep_all {
            m
        } else {
            m.filter(|_, _, v| v != 0.0)
        }
    }
}

/// Writes `MGR1`: magic, rows/cols/nnz as u64 LE, `rows + 1` u64 row
/// offsets, `nnz` u64 column indices, `nnz` f32 values.
pub fn write_graph(path: &Path, m: &SparseMatrix) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    put(GRAPH_MAGIC)?;
    for v in [m.rows, m.cols, m.nnz()] {
        put(&(v as u64).to_le_bytes())?;
    }
    for &o in &m.offsets {
        put(&(o as u64).to_le_bytes())?;
    }
    for &c in &m.indices {
        put(&(c as u64).to_le_bytes())?;
    }
    for &v in &m.values {
        put(&(v as f32).to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_graph(path: &Path) -> Result<SparseMatrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |msg: &str| Error::format(path, None, msg.to_string());
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != GRAPH_MAGIC {
        return Err(bad("bad magic, expected MGR1"));
    }
    let mut u64_buf = [0u8; 8];
    let mut next_u64 = |r: &mut BufReader<File>| -> Result<usize> {
        r.read_exact(&mut u64_buf).map_err(|_| bad("truncated graph file"))?;
        Ok(u64::from_le_bytes(u64_buf) as usize)
    };
    let rows = next_u64(&mut r)?;
    let cols = next_u64(&mut r)?;
    let nnz = next_u64(&mut r)?;
    let mut offsets = Vec::with_capacity(rows + 1);
    for _ in 0..=rows {
        offsets.push(next_u64(&mut r)?);
    }
    let mut indices = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        indices.push(next_u64(&mut r)?);
    }
    let mut values = Vec::with_capacity(nnz);
    let mut f32_buf = [0u8; 4];
    for _ in 0..nnz {
        r.read_exact(&mut f32_buf).map_err(|_| bad("truncated graph values"))?;
        values.push(f32::from_le_bytes(f32_buf) as f64);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
    if !rest.is_empty() {
        return Err(bad("trailing bytes after graph payload"));
    }
    if offsets.first() != Some(&0) || offsets.last() != Some(&nnz) || offsets.windows(2).any(|w| w[0] > w[1]) {
        return Err(bad("inconsistent row offsets"));
    }
    for row in 0..rows {
        let idx = &indices[offsets[row]..offsets[row + 1]];
        if idx.iter().any(|&c| c >= cols) || idx.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("column indices out of range or unsorted"));
        }
    }
    if values.iter().any(|v| !v.is_finite() || *v == 0.0) {
        return Err(bad("stored values must be finite and non-zero"));
    }
    Ok(SparseMatrix {
        rows,
        cols,
        offsets,
        indices,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SparseMatrix {
        SparseMatrix::from_triplets(3, 3, &[(0, 1, 2.0), (1, 2, 0.5), (2, 0, 1.5), (0, 1, 1.0), (1, 1, 0.0)]).unwrap()
    }

    #[test]
    fn triplets_merge_and_drop_zeros() {
        let m = sample();
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.get(1, 1), 0.0);
    }

    #[test]
    fn transpose_and_symmetrize() {
        let m = sample();
        let t = m.transpose();
        assert_eq!(t.get(1, 0), 3.0);
        assert_eq!(t.get(0, 2), 1.5);
        let s = m.symmetrize_max().unwrap();
        assert!(s.is_symmetric(0.0));
        assert_eq!(s.get(1, 0), 3.0);
        assert_eq!(s.get(2, 1), 0.5);
    }

    #[test]
    fn add_scaled_overlap() {
        let a = SparseMatrix::from_triplets(2, 2, &[(0, 1, 0.9)]).unwrap();
        let b = SparseMatrix::from_triplets(2, 2, &[(0, 1, 0.6), (1, 0, 1.0)]).unwrap();
        let c = a.add_scaled(&b, 0.2).unwrap();
        assert!((c.get(0, 1) - 1.02).abs() < 1e-15);
        assert_eq!(c.get(1, 0), 0.2);
        assert!(a.add_scaled(&SparseMatrix::empty(3, 2), 1.0).is_err());
    }

    #[test]
    fn graph_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.mgr");
        let m = sample();
        write_graph(&path, &m).unwrap();
        let back = read_graph(&path).unwrap();
        assert_eq!(back, m.rounded_to_f32());
        std::fs::write(&path, b"XXXX").unwrap();
        assert!(matches!(read_graph(&path), Err(Error::Format { .. })));
    }
}
