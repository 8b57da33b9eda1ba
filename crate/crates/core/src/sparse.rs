use serde::{Deserialize, Serialize};

/// Compressed sparse row matrix over `f64`, square, columns sorted per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsrMatrix {
    offsets: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(col, value)` lists. Columns are sorted within each row.
    pub fn from_rows(rows: Vec<Vec<(u32, f64)>>) -> Self {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        offsets.push(0);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut cols = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                cols.push(c);
                vals.push(v);
            }
            offsets.push(cols.len());
        }
        Self { offsets, cols, vals }
    }

    /// Builds from unordered triplets; duplicate `(row, col)` entries are not merged.
    pub fn from_triplets(n: usize, triplets: &[(u32, u32, f64)]) -> Self {
        let mut rows = vec![Vec::new(); n];
        for &(r, c, v) in triplets {
            rows[r as usize].push((c, v));
        }
        Self::from_rows(rows)
    }

    pub fn n_rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.offsets[i], self.offsets[i + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub fn row_iter(&self, i: usize) -> impl Iterator<Item = (u32, f64)> + '_ {
        let (c, v) = self.row(i);
        c.iter().copied().zip(v.iter().copied())
    }

    pub fn get(&self, i: usize, j: u32) -> Option<f64> {
        let (c, v) = self.row(i);
        c.binary_search(&j).ok().map(|p| v[p])
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).1.iter().sum()
    }

    /// Iterates `(row, col, value)` in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, u32, f64)> + '_ {
        (0..self.n_rows()).flat_map(move |i| self.row_iter(i).map(move |(c, v)| (i, c, v)))
    }

    pub fn transpose(&self) -> Self {
        let mut rows = vec![Vec::new(); self.n_rows()];
        for (i, j, v) in self.entries() {
            rows[j as usize].push((i as u32, v));
        }
        Self::from_rows(rows)
    }

    /// Restriction to `keep` (sorted ascending, original indices), re-indexed
    /// to positions within `keep`.
    pub fn restrict(&self, keep: &[usize]) -> Self {
        let mut remap = std::collections::HashMap::with_capacity(keep.len());
        for (new, &old) in keep.iter().enumerate() {
            remap.insert(old as u32, new as u32);
        }
        let rows = keep
            .iter()
            .map(|&old| {
                self.row_iter(old)
                    .filter_map(|(c, v)| remap.get(&c).map(|&nc| (nc, v)))
                    .collect()
            })
            .collect();
        Self::from_rows(rows)
    }

    pub fn vals(&self) -> &[f64] {
        &self.vals
    }
}
