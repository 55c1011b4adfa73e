//! Undirected graph topology and the GCN propagation operator.

use crate::error::{Error, Result};
use crate::tensor::SparseMatrix;

/// Counters collected while building a graph from a raw edge list.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EdgeStats {
    /// Edge records in the input, including duplicates and self-loops.
    pub input_edges: usize,
    pub self_loops_dropped: usize,
}

/// Immutable undirected simple graph. The adjacency is stored symmetric,
/// with unit weights and no self-loops.
#[derive(Clone, Debug)]
pub struct Graph {
    num_nodes: usize,
    adjacency: SparseMatrix,
    stats: EdgeStats,
}

impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.num_nodes == other.num_nodes && self.adjacency == other.adjacency
    }
}

impl Graph {
    /// Symmetrizes and deduplicates `edges`; self-loops are dropped and
    /// counted. Out-of-range endpoints are rejected with the 1-based position
    /// of the offending edge.
    pub fn build_adjacency(edges: impl IntoIterator<Item = (usize, usize)>, num_nodes: usize) -> Result<Self> {
        let mut stats = EdgeStats::default();
        let mut pairs = Vec::new();
        for (pos, (u, v)) in edges.into_iter().enumerate() {
            stats.input_edges += 1;
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::Integrity(format!(
                    "edge {}: ({u}, {v}) references a node outside 0..{num_nodes}",
                    pos + 1
                )));
            }
            if u == v {
                stats.self_loops_dropped += 1;
                continue;
            }
            pairs.push((u, v));
            pairs.push((v, u));
        }
        pairs.sort_unstable();
        pairs.dedup();
        let mut row_offsets = vec![0usize; num_nodes + 1];
        for &(u, _) in &pairs {
            row_offsets[u + 1] += 1;
        }
        for i in 0..num_nodes {
            row_offsets[i + 1] += row_offsets[i];
        }
        let col_indices: Vec<usize> = pairs.iter().map(|&(_, v)| v).collect();
        let values = vec![1.0; col_indices.len()];
        let adjacency = SparseMatrix::new(num_nodes, num_nodes, row_offsets, col_indices, values)?;
        Ok(Self {
            num_nodes,
            adjacency,
            stats,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    pub fn adjacency(&self) -> &SparseMatrix {
        &self.adjacency
    }

    pub fn stats(&self) -> EdgeStats {
        self.stats
    }

    pub fn degree(&self, i: usize) -> usize {
        let offs = self.adjacency.row_offsets();
        offs[i + 1] - offs[i]
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        self.adjacency.row(i).0
    }

    /// Ascending neighbor indices of every node, self excluded.
    pub fn neighbor_lists(&self) -> Vec<Vec<usize>> {
        (0..self.num_nodes).map(|i| self.neighbors(i).to_vec()).collect()
    }

    /// Undirected edges as `(u, v)` with `u < v`, in ascending order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.num_nodes)
            .flat_map(|u| self.neighbors(u).iter().filter(move |&&v| v > u).map(move |&v| (u, v)))
            .collect()
    }

    /// Average degree `2|E| / n`.
    pub fn average_degree(&self) -> f64 {
        if self.num_nodes == 0 {
            0.0
        } else {
            self.adjacency.nnz() as f64 / self.num_nodes as f64
        }
    }

    /// Sparsity pattern of `A + I` with unit values.
    pub fn self_loop_pattern(&self) -> SparseMatrix {
        let triplets = (0..self.num_nodes).flat_map(|i| {
            std::iter::once((i, i, 1.0)).chain(self.neighbors(i).iter().map(move |&j| (i, j, 1.0)))
        });
        SparseMatrix::from_triplets(self.num_nodes, self.num_nodes, triplets).expect("valid pattern")
    }

    /// `D̃^{-1/2} (A + I) D̃^{-1/2}` where `D̃` is the degree matrix of `A + I`.
    pub fn normalized_adjacency(&self) -> SparseMatrix {
        let pattern = self.self_loop_pattern();
        let deg: Vec<f64> = (0..self.num_nodes).map(|i| (self.degree(i) + 1) as f64).collect();
        let mut values = Vec::with_capacity(pattern.nnz());
        for i in 0..self.num_nodes {
            let (cols, _) = pattern.row(i);
            values.extend(cols.iter().map(|&j| 1.0 / (deg[i] * deg[j]).sqrt()));
        }
        pattern.with_values(values).expect("same pattern")
    }

    /// Mean over nodes of the fraction of neighbors sharing the node's label.
    /// Nodes without a label, or without labelled neighbors, are skipped.
    pub fn node_homophily(&self, labels: &[Option<usize>]) -> Result<f64> {
        self.check_labels(labels)?;
        let mut total = 0.0;
        let mut counted = 0usize;
        for i in 0..self.num_nodes {
            let Some(yi) = labels[i] else { continue };
            let (mut same, mut seen) = (0usize, 0usize);
            for &j in self.neighbors(i) {
                if let Some(yj) = labels[j] {
                    seen += 1;
                    same += usize::from(yj == yi);
                }
            }
            if seen > 0 {
                total += same as f64 / seen as f64;
                counted += 1;
            }
        }
        if counted == 0 {
            return Err(Error::UndefinedMetric(
                "node homophily needs at least one non-isolated labelled node".into(),
            ));
        }
        Ok(total / counted as f64)
    }

    /// Fraction of undirected edges (between labelled nodes) whose endpoints
    /// share a label.
    pub fn edge_homophily(&self, labels: &[Option<usize>]) -> Result<f64> {
        self.check_labels(labels)?;
        let (mut same, mut seen) = (0usize, 0usize);
        for (u, v) in self.edges() {
            if let (Some(a), Some(b)) = (labels[u], labels[v]) {
                seen += 1;
                same += usize::from(a == b);
            }
        }
        if seen == 0 {
            return Err(Error::UndefinedMetric("edge homophily needs a labelled edge".into()));
        }
        Ok(same as f64 / seen as f64)
    }

    fn check_labels(&self, labels: &[Option<usize>]) -> Result<()> {
        if labels.len() != self.num_nodes {
            return Err(Error::Contract(format!(
                "{} labels for {} nodes",
                labels.len(),
                self.num_nodes
            )));
        }
        Ok(())
    }
}
