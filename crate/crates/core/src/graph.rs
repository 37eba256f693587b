//! Mesh graphs and the symmetric-normalized propagation operator.
//!
//! A [`MeshGraph`] stores the deduplicated undirected edge list of a
//! simulation mesh and precomputes `D̃^{-1/2} (A + I) D̃^{-1/2}` in
//! compressed-row form. Column indices are ascending within each row and
//! [`CsrMatrix::spmm`] sums every row in that order, so propagation is
//! bitwise reproducible.

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::binio;
use crate::error::{Error, Result};
use crate::numeric::DenseMatrix;

const MESH_MAGIC: &[u8; 8] = b"HZGNMESH";
const MESH_VERSION: u32 = 1;
const KIND: &str = "mesh";

/// Square sparse matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
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

    /// `(column, value)` pairs of row `i`, ascending by column.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_offsets[i]..self.row_offsets[i + 1];
        self.col_indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    /// Value at `(i, j)`, zero when the entry is structurally absent.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.row_offsets[i]..self.row_offsets[i + 1];
        match self.col_indices[span.clone()].binary_search(&j) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                out.set(i, j, v);
            }
        }
        out
    }

    /// Sparse × dense product. Each output row accumulates its terms in
    /// ascending column order.
    pub fn spmm(&self, features: &DenseMatrix) -> Result<DenseMatrix> {
        if features.rows() != self.n {
            return Err(Error::dims("spmm", format!("{} rows", self.n), features.rows()));
        }
        let d = features.cols();
        let mut out = vec![0.0; self.n * d];
        let x = features.data();
        match d {
            1 => self.spmm_fixed::<1>(x, &mut out),
            2 => self.spmm_fixed::<2>(x, &mut out),
            3 => self.spmm_fixed::<3>(x, &mut out),
            4 => self.spmm_fixed::<4>(x, &mut out),
            8 => self.spmm_fixed::<8>(x, &mut out),
            16 => self.spmm_fixed::<16>(x, &mut out),
            32 => self.spmm_fixed::<32>(x, &mut out),
            64 => self.spmm_fixed::<64>(x, &mut out),
            128 => self.spmm_fixed::<128>(x, &mut out),
            _ => {
                for (i, out_row) in out.chunks_exact_mut(d).enumerate() {
                    for (j, v) in self.row(i) {
                        for (o, &xv) in out_row.iter_mut().zip(&x[j * d..(j + 1) * d]) {
                            *o += v * xv;
                        }
                    }
                }
            }
        }
        Ok(DenseMatrix::from_vec_unchecked(self.n, d, out))
    }

    /// [`Self::spmm`] for a compile-time feature width; same summation order.
    fn spmm_fixed<const D: usize>(&self, x: &[f64], out: &mut [f64]) {
        let (x_rows, _) = x.as_chunks::<D>();
        let (out_rows, _) = out.as_chunks_mut::<D>();
        for (i, out_row) in out_rows.iter_mut().enumerate() {
            let span = self.row_offsets[i]..self.row_offsets[i + 1];
            let mut acc = [0.0; D];
            for (&j, &v) in self.col_indices[span.clone()].iter().zip(&self.values[span]) {
                let xr = &x_rows[j];
                for c in 0..D {
                    acc[c] += v * xr[c];
                }
            }
            *out_row = acc;
        }
    }
}

/// Undirected simulation mesh with its normalized adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshGraph {
    node_count: usize,
    edges: Vec<(u32, u32)>,
    positions: Vec<[f64; 2]>,
    degrees: Vec<usize>,
    norm_adjacency: CsrMatrix,
}

impl MeshGraph {
    /// Builds a mesh graph from a raw edge list.
    ///
    /// Duplicate and reversed edges are merged. Self-loops in the input are
    /// rejected; the self-loop of `A + I` is added internally. `positions`
    /// must hold one coordinate pair (km) per node.
    pub fn build(node_count: usize, edges: &[(usize, usize)], positions: Vec<[f64; 2]>) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::InvalidMesh("node_count must be positive".into()));
        }
        if node_count > u32::MAX as usize {
            return Err(Error::InvalidMesh("node_count exceeds u32 range".into()));
        }
        if positions.len() != node_count {
            return Err(Error::InvalidMesh(format!(
                "expected {node_count} positions, got {}",
                positions.len()
            )));
        }
        if positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMesh("non-finite node position".into()));
        }
        let mut canon = Vec::with_capacity(edges.len());
        for &(i, j) in edges {
            if i >= node_count || j >= node_count {
                return Err(Error::InvalidMesh(format!(
                    "edge ({i}, {j}) references a node outside 0..{node_count}"
                )));
            }
            if i == j {
                return Err(Error::InvalidMesh(format!("self-loop at node {i}")));
            }
            canon.push((i.min(j) as u32, i.max(j) as u32));
        }
        canon.sort_unstable();
        canon.dedup();

        let mut neighbors = vec![Vec::new(); node_count];
        for &(i, j) in &canon {
            neighbors[i as usize].push(j as usize);
            neighbors[j as usize].push(i as usize);
        }
        let degrees: Vec<usize> = neighbors.iter().map(Vec::len).collect();

        let mut row_offsets = Vec::with_capacity(node_count + 1);
        let mut col_indices = Vec::with_capacity(node_count + 2 * canon.len());
        let mut values = Vec::with_capacity(node_count + 2 * canon.len());
        row_offsets.push(0);
        for (i, nbrs) in neighbors.iter_mut().enumerate() {
            nbrs.push(i);
            nbrs.sort_unstable();
            for &j in nbrs.iter() {
                col_indices.push(j);
                values.push(1.0 / (((degrees[i] + 1) * (degrees[j] + 1)) as f64).sqrt());
            }
            row_offsets.push(col_indices.len());
        }

        Ok(Self {
            node_count,
            edges: canon,
            positions,
            degrees,
            norm_adjacency: CsrMatrix {
                n: node_count,
                row_offsets,
                col_indices,
                values,
            },
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Deduplicated edges with `i < j`, sorted.
    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    /// Raw degree (without the self-loop) of every node.
    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn max_degree(&self) -> usize {
        self.degrees.iter().copied().max().unwrap_or(0)
    }

    pub fn norm_adjacency(&self) -> &CsrMatrix {
        &self.norm_adjacency
    }

    /// Neighbors of `i` (excluding `i`), ascending.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.norm_adjacency.row(i).map(|(j, _)| j).filter(move |&j| j != i)
    }

    /// `D̃^{-1/2} (A + I) D̃^{-1/2} · features`.
    pub fn spmm(&self, features: &DenseMatrix) -> Result<DenseMatrix> {
        self.norm_adjacency.spmm(features)
    }

    /// Connected components as a per-node label (labels are the smallest
    /// node index of each component).
    pub fn component_labels(&self) -> Vec<usize> {
        let mut label = vec![usize::MAX; self.node_count];
        for start in 0..self.node_count {
            if label[start] != usize::MAX {
                continue;
            }
            let mut stack = vec![start];
            label[start] = start;
            while let Some(u) = stack.pop() {
                for v in self.neighbors(u) {
                    if label[v] == usize::MAX {
                        label[v] = start;
                        stack.push(v);
                    }
                }
            }
        }
        label
    }

    pub fn is_connected(&self) -> bool {
        self.component_labels().iter().all(|&l| l == 0)
    }

    /// Serializes the mesh container.
    ///
    /// Layout (little-endian): 8-byte magic `HZGNMESH`, `u32` version (1),
    /// `u32` reserved (0), `u64` node_count, `u64` edge_count, edge_count
    /// pairs of `u32` node indices, node_count pairs of `f64` coordinates.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_header(w, MESH_MAGIC, MESH_VERSION)?;
        binio::write_u64(w, self.node_count as u64)?;
        binio::write_u64(w, self.edges.len() as u64)?;
        let mut buf = Vec::with_capacity(self.edges.len() * 8);
        for &(i, j) in &self.edges {
            buf.extend_from_slice(&i.to_le_bytes());
            buf.extend_from_slice(&j.to_le_bytes());
        }
        w.write_all(&buf)?;
        let flat: Vec<f64> = self.positions.iter().flatten().copied().collect();
        binio::write_f64s(w, &flat)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        binio::read_header(r, KIND, MESH_MAGIC, MESH_VERSION)?;
        let n = binio::read_len(r, KIND, u32::MAX as u64)?;
        let m = binio::read_len(r, KIND, 1 << 32)?;
        let mut edges = Vec::with_capacity(m);
        for _ in 0..m {
            let i = binio::read_u32(r, KIND)? as usize;
            let j = binio::read_u32(r, KIND)? as usize;
            edges.push((i, j));
        }
        let flat = binio::read_f64s(r, KIND, 2 * n)?;
        binio::expect_end(r, KIND)?;
        let positions = flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        Self::build(n, &edges, positions)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// SHA-256 of the serialized container.
    pub fn content_hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_bytes()).into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}
