//! Symmetric-normalized user-item adjacency in compressed-row form.
//!
//! Nodes are indexed `[0, n_users)` for users and `[n_users, n_users + n_items)`
//! for items. Each stored edge `(u, i)` carries `1 / sqrt(deg(u) * deg(i))`,
//! with degrees counted over train pairs only.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::corpus::{InteractionTable, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BipartiteGraph {
    pub n_users: usize,
    pub n_items: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl BipartiteGraph {
    pub fn build(table: &InteractionTable) -> Result<Self> {
        let n_users = table.user_count;
        let n_items = table.item_count;
        let n = n_users + n_items;
        let mut neighbors: Vec<Vec<u32>> = vec![Vec::new(); n];
        for (u, i) in table.split_pairs(Split::Train) {
            let item_node = (n_users + i as usize) as u32;
            neighbors[u as usize].push(item_node);
            neighbors[item_node as usize].push(u);
        }
        if neighbors.iter().all(Vec::is_empty) {
            return Err(Error::EmptyCorpus);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        let degree: Vec<f64> = neighbors.iter().map(|l| l.len() as f64).collect();

        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for (row, list) in neighbors.iter().enumerate() {
            for &col in list {
                indices.push(col);
                values.push(1.0 / (degree[row] * degree[col as usize]).sqrt());
            }
            indptr.push(indices.len());
        }
        Ok(BipartiteGraph {
            n_users,
            n_items,
            indptr,
            indices,
            values,
        })
    }

    pub fn node_count(&self) -> usize {
        self.n_users + self.n_items
    }

    pub fn item_node(&self, item: u32) -> usize {
        self.n_users + item as usize
    }

    /// Number of stored directed edges.
    pub fn edge_count(&self) -> usize {
        self.indices.len()
    }

    pub fn degree(&self, node: usize) -> usize {
        self.indptr[node + 1] - self.indptr[node]
    }

    /// `(neighbor, weight)` pairs of a node in stored order.
    pub fn neighbors(&self, node: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.indptr[node]..self.indptr[node + 1];
        self.indices[range.clone()]
            .iter()
            .zip(&self.values[range])
            .map(|(&c, &v)| (c as usize, v))
    }

    pub fn weight(&self, row: usize, col: usize) -> Option<f64> {
        self.neighbors(row).find(|&(c, _)| c == col).map(|(_, v)| v)
    }

    /// Dense copy of the normalized adjacency. Test and diagnostic use only.
    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.node_count();
        let mut a = Array2::zeros((n, n));
        for row in 0..n {
            for (col, v) in self.neighbors(row) {
                a[[row, col]] = v;
            }
        }
        a
    }

    /// Returns `Â X`.
    ///
    /// Rows are computed in parallel, but each row is accumulated sequentially
    /// in stored edge order, so the result does not depend on thread count.
    pub fn propagate(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let n = self.node_count();
        if x.nrows() != n {
            return Err(Error::shape(format!("{n} rows"), format!("{} rows", x.nrows())));
        }
        let mut out = Array2::zeros(x.raw_dim());
        out.axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(row, mut out_row)| {
                for (col, w) in self.neighbors(row) {
                    out_row.scaled_add(w, &x.row(col));
                }
            });
        Ok(out)
    }

    /// Returns `Âᵀ G`. The adjacency is symmetric, so this is `propagate`;
    /// kept as its own entry point for the backward pass.
    pub fn propagate_transpose(&self, g: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.propagate(g)
    }
}
