use crate::error::{Error, Result};

use super::DenseMatrix;

/// Compressed sparse row adjacency with per-entry weights.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseAdjacency {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseAdjacency {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            row_offsets: vec![0; n + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Validates raw CSR arrays: offsets monotone, columns in range and
    /// strictly increasing within each row.
    pub fn from_csr(
        n: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != n + 1 || row_offsets[0] != 0 {
            return Err(Error::contract("row_offsets must have n+1 entries starting at 0"));
        }
        if *row_offsets.last().unwrap() != col_indices.len() || col_indices.len() != values.len() {
            return Err(Error::contract("row_offsets, col_indices and values disagree in length"));
        }
        for w in row_offsets.windows(2) {
            if w[0] > w[1] {
                return Err(Error::contract("row_offsets must be nondecreasing"));
            }
            let row = &col_indices[w[0]..w[1]];
            if row.iter().any(|&c| c >= n) {
                return Err(Error::contract("column index out of range"));
            }
            if row.windows(2).any(|p| p[0] >= p[1]) {
                return Err(Error::contract("duplicate or unsorted column in row"));
            }
        }
        Ok(Self {
            n,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Builds a symmetric unit-weight adjacency from undirected pairs.
    /// Duplicates (in either orientation) collapse; self-loops are rejected.
    pub fn from_undirected_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut directed = Vec::with_capacity(edges.len() * 2);
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::contract(format!("edge ({u},{v}) out of range for n={n}")));
            }
            if u == v {
                return Err(Error::contract(format!("self-loop at node {u}")));
            }
            directed.push((u, v));
            directed.push((v, u));
        }
        Ok(Self::from_directed_sorted(n, directed, |_, _| 1.0))
    }

    fn from_directed_sorted(
        n: usize,
        mut directed: Vec<(usize, usize)>,
        weight: impl Fn(usize, usize) -> f64,
    ) -> Self {
        directed.sort_unstable();
        directed.dedup();
        let mut row_offsets = vec![0usize; n + 1];
        for &(u, _) in &directed {
            row_offsets[u + 1] += 1;
        }
        for i in 0..n {
            row_offsets[i + 1] += row_offsets[i];
        }
        let col_indices: Vec<usize> = directed.iter().map(|&(_, v)| v).collect();
        let values = directed.iter().map(|&(u, v)| weight(u, v)).collect();
        Self {
            n,
            row_offsets,
            col_indices,
            values,
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of stored (directed) entries.
    #[inline]
    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    #[inline]
    pub fn degree(&self, i: usize) -> usize {
        self.row_offsets[i + 1] - self.row_offsets[i]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.n && v < self.n && self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Undirected edges as `(u, v)` with `u < v`, in row-major order.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.nnz() / 2);
        for u in 0..self.n {
            for &v in self.neighbors(u) {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    pub fn is_structurally_symmetric(&self) -> bool {
        (0..self.n).all(|u| self.neighbors(u).iter().all(|&v| self.has_edge(v, u)))
    }

    pub fn has_self_loops(&self) -> bool {
        (0..self.n).any(|u| self.has_edge(u, u))
    }

    /// `D̃^{-1/2} (A + I) D̃^{-1/2}` with unit edge weights.
    pub fn sym_normalized_with_self_loops(&self) -> Self {
        let mut directed: Vec<(usize, usize)> = Vec::with_capacity(self.nnz() + self.n);
        for u in 0..self.n {
            directed.push((u, u));
            for &v in self.neighbors(u) {
                directed.push((u, v));
            }
        }
        let mut deg = vec![0.0f64; self.n];
        {
            let mut tmp = directed.clone();
            tmp.sort_unstable();
            tmp.dedup();
            for &(u, _) in &tmp {
                deg[u] += 1.0;
            }
        }
        let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
        Self::from_directed_sorted(self.n, directed, |u, v| inv_sqrt[u] * inv_sqrt[v])
    }

    /// `self · x`.
    pub fn spmm(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.rows() != self.n {
            return Err(Error::dim(
                "spmm",
                format!("adjacency n={} times {}x{}", self.n, x.rows(), x.cols()),
            ));
        }
        let d = x.cols();
        let mut out = DenseMatrix::zeros(self.n, d);
        for i in 0..self.n {
            let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
            let orow = out.row_mut(i);
            for e in lo..hi {
                let w = self.values[e];
                let xr = x.row(self.col_indices[e]);
                for (o, &v) in orow.iter_mut().zip(xr) {
                    *o += w * v;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · x`.
    pub fn spmm_transpose(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.rows() != self.n {
            return Err(Error::dim(
                "spmm_transpose",
                format!("adjacency n={} times {}x{}", self.n, x.rows(), x.cols()),
            ));
        }
        let d = x.cols();
        let mut out = DenseMatrix::zeros(self.n, d);
        for i in 0..self.n {
            let xr = x.row(i).to_vec();
            for e in self.row_offsets[i]..self.row_offsets[i + 1] {
                let w = self.values[e];
                let orow = out.row_mut(self.col_indices[e]);
                for (o, &v) in orow.iter_mut().zip(&xr) {
                    *o += w * v;
                }
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for e in self.row_offsets[i]..self.row_offsets[i + 1] {
                out.set(i, self.col_indices[e], self.values[e]);
            }
        }
        out
    }
}
