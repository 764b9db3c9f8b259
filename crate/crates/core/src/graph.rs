//! User–item bipartite interaction graph and its normalized propagation operator.
//!
//! Nodes are laid out users first: user `a` is node `a`, item `i` is node
//! `num_users + i`. The operator `S` only has entries in the user→item and
//! item→user blocks.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How adjacency coefficients are normalized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    /// `D^{-1/2} A D^{-1/2}`: each edge (u, v) gets `1/sqrt(deg(u) deg(v))`.
    #[default]
    Symmetric,
    /// Per-node mean: row of node `v` carries `1/deg(v)` at each neighbor.
    Row,
}

impl std::str::FromStr for NormMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" | "sym" => Ok(NormMode::Symmetric),
            "row" | "mean" => Ok(NormMode::Row),
            other => Err(Error::Config(format!("unknown norm mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for NormMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NormMode::Symmetric => "symmetric",
            NormMode::Row => "row",
        })
    }
}

/// Compressed sparse row matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(column, value)` lists. Columns within a row must be sorted.
    fn from_rows(n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        indptr.push(0);
        for row in &rows {
            for &(c, v) in row {
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            n_rows: rows.len(),
            n_cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Nonzeros of row `r` as `(column, value)`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.indptr[r]..self.indptr[r + 1];
        match self.indices[span.clone()].binary_search(&c) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.n_cols];
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                rows[c].push((r, v));
            }
        }
        CsrMatrix::from_rows(self.n_rows, rows)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut dense = Array2::zeros((self.n_rows, self.n_cols));
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                dense[[r, c]] = v;
            }
        }
        dense
    }

    /// `h + self * h`, rows computed in parallel. Each row's sum runs in a fixed
    /// order, so results do not depend on thread scheduling.
    fn add_product(&self, h: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = h.to_owned();
        out.axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(r, mut row)| {
                for (c, v) in self.row(r) {
                    row.scaled_add(v, &h.row(c));
                }
            });
        out
    }
}

/// Immutable user–item interaction graph.
#[derive(Clone, Debug)]
pub struct BipartiteGraph {
    num_users: usize,
    num_items: usize,
    user_items: Vec<Vec<usize>>,
    item_users: Vec<Vec<usize>>,
    norm: NormMode,
    operator: CsrMatrix,
    operator_t: CsrMatrix,
}

impl BipartiteGraph {
    /// Builds the graph from `(user, item)` pairs. Duplicate pairs collapse to one edge.
    pub fn build(
        interactions: &[(usize, usize)],
        num_users: usize,
        num_items: usize,
        norm: NormMode,
    ) -> Result<Self> {
        if num_users == 0 {
            return Err(Error::EmptyGraph("users"));
        }
        if num_items == 0 {
            return Err(Error::EmptyGraph("items"));
        }
        let mut user_items = vec![Vec::new(); num_users];
        let mut item_users = vec![Vec::new(); num_items];
        for &(user, item) in interactions {
            if user >= num_users || item >= num_items {
                return Err(Error::EdgeOutOfRange {
                    user,
                    item,
                    num_users,
                    num_items,
                });
            }
            user_items[user].push(item);
            item_users[item].push(user);
        }
        for list in user_items.iter_mut().chain(item_users.iter_mut()) {
            list.sort_unstable();
            list.dedup();
        }

        let deg = |node: usize| -> f64 {
            if node < num_users {
                user_items[node].len() as f64
            } else {
                item_users[node - num_users].len() as f64
            }
        };
        let coeff = |from: usize, to: usize| -> f64 {
            match norm {
                NormMode::Symmetric => 1.0 / (deg(from) * deg(to)).sqrt(),
                NormMode::Row => 1.0 / deg(from),
            }
        };
        let mut rows = Vec::with_capacity(num_users + num_items);
        for (a, items) in user_items.iter().enumerate() {
            rows.push(
                items
                    .iter()
                    .map(|&i| (num_users + i, coeff(a, num_users + i)))
                    .collect(),
            );
        }
        for (i, users) in item_users.iter().enumerate() {
            rows.push(users.iter().map(|&a| (a, coeff(num_users + i, a))).collect());
        }
        let operator = CsrMatrix::from_rows(num_users + num_items, rows);
        let operator_t = operator.transpose();

        Ok(BipartiteGraph {
            num_users,
            num_items,
            user_items,
            item_users,
            norm,
            operator,
            operator_t,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn num_edges(&self) -> usize {
        self.user_items.iter().map(Vec::len).sum()
    }

    pub fn norm_mode(&self) -> NormMode {
        self.norm
    }

    /// Sorted items of user `a` (`R_a`).
    pub fn user_items(&self, a: usize) -> &[usize] {
        &self.user_items[a]
    }

    /// Sorted users of item `i` (`S_i`).
    pub fn item_users(&self, i: usize) -> &[usize] {
        &self.item_users[i]
    }

    pub fn has_edge(&self, user: usize, item: usize) -> bool {
        self.user_items[user].binary_search(&item).is_ok()
    }

    /// Node-indexed neighbors (users as `0..M`, items as `M..M+N`).
    pub fn node_neighbors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.operator.row(node).map(|(c, _)| c)
    }

    pub fn node_degree(&self, node: usize) -> usize {
        if node < self.num_users {
            self.user_items[node].len()
        } else {
            self.item_users[node - self.num_users].len()
        }
    }

    /// The normalized operator `S`.
    pub fn operator(&self) -> &CsrMatrix {
        &self.operator
    }

    /// Returns `H + S·H`.
    pub fn propagate(&self, h: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_rows(h.nrows())?;
        Ok(self.operator.add_product(h))
    }

    /// Returns `G + Sᵀ·G`, the adjoint of [`propagate`](Self::propagate).
    pub fn propagate_transpose(&self, g: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_rows(g.nrows())?;
        Ok(self.operator_t.add_product(g))
    }

    fn check_rows(&self, rows: usize) -> Result<()> {
        if rows != self.num_nodes() {
            return Err(Error::dim("propagate rows", self.num_nodes(), rows));
        }
        Ok(())
    }
}
