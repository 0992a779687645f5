//! Undirected communication graphs and their Laplacian spectra.
//!
//! Node ids are 0-based in the API; scenario files use 1-based ids.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::SymmetricEigen;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphTopology {
    nodes: usize,
    /// Normalized as `(min, max)`, sorted.
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl GraphTopology {
    /// A connected graph. Rejects self-loops, duplicate edges, unknown ids and
    /// disconnected edge sets.
    pub fn new(nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let g = Self::possibly_disconnected(nodes, edges)?;
        if !g.is_connected() {
            return Err(Error::Disconnected);
        }
        Ok(g)
    }

    /// Same validation as [`GraphTopology::new`] minus the connectivity check.
    pub fn possibly_disconnected(nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if nodes == 0 {
            return Err(Error::InvalidParameter { name: "N", reason: "graph needs at least one node".into() });
        }
        let mut seen = BTreeSet::new();
        for &(i, j) in edges {
            for node in [i, j] {
                if node >= nodes {
                    return Err(Error::UnknownNode { node, count: nodes });
                }
            }
            if i == j {
                return Err(Error::SelfLoop(i));
            }
            if !seen.insert((i.min(j), i.max(j))) {
                return Err(Error::DuplicateEdge(i, j));
            }
        }
        let edges: Vec<(usize, usize)> = seen.into_iter().collect();
        let mut adjacency = vec![Vec::new(); nodes];
        for &(i, j) in &edges {
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(Self { nodes, edges, adjacency })
    }

    /// Build from 1-based edge pairs, as written in scenario files.
    pub fn from_one_based(nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut zero_based = Vec::with_capacity(edges.len());
        for &(i, j) in edges {
            if i == 0 || j == 0 {
                return Err(Error::UnknownNode { node: 0, count: nodes });
            }
            zero_based.push((i - 1, j - 1));
        }
        Self::new(nodes, &zero_based)
    }

    pub fn path(nodes: usize) -> Self {
        let edges: Vec<_> = (1..nodes).map(|i| (i - 1, i)).collect();
        Self::new(nodes, &edges).expect("path graph is valid")
    }

    pub fn ring(nodes: usize) -> Self {
        let mut edges: Vec<_> = (1..nodes).map(|i| (i - 1, i)).collect();
        if nodes > 2 {
            edges.push((nodes - 1, 0));
        }
        Self::new(nodes, &edges).expect("ring graph is valid")
    }

    pub fn complete(nodes: usize) -> Self {
        let edges: Vec<_> = (0..nodes).flat_map(|i| ((i + 1)..nodes).map(move |j| (i, j))).collect();
        Self::new(nodes, &edges).expect("complete graph is valid")
    }

    /// Seven-node stand-in for the reference experiments. Its algebraic
    /// connectivity is exactly `2 - sqrt(3)`.
    pub fn reference_seven_node() -> Self {
        let one_based = [(1, 2), (1, 5), (2, 5), (3, 4), (3, 6), (4, 6), (4, 7), (5, 7)];
        Self::from_one_based(7, &one_based).expect("reference graph is valid")
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency.iter().map(Vec::len).collect()
    }

    pub fn neighbors(&self, node: usize) -> Result<&[usize]> {
        self.adjacency
            .get(node)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownNode { node, count: self.nodes })
    }

    pub fn is_connected(&self) -> bool {
        let mut visited = vec![false; self.nodes];
        let mut queue = VecDeque::from([0]);
        visited[0] = true;
        let mut reached = 1;
        while let Some(i) = queue.pop_front() {
            for &j in &self.adjacency[i] {
                if !visited[j] {
                    visited[j] = true;
                    reached += 1;
                    queue.push_back(j);
                }
            }
        }
        reached == self.nodes
    }

    /// `D - A_adj`.
    pub fn laplacian(&self) -> Matrix {
        let mut l = Matrix::zeros(self.nodes, self.nodes);
        for &(i, j) in &self.edges {
            l[(i, j)] -= 1.0;
            l[(j, i)] -= 1.0;
            l[(i, i)] += 1.0;
            l[(j, j)] += 1.0;
        }
        l
    }

    /// Laplacian eigenvalues, ascending.
    pub fn laplacian_spectrum(&self) -> Vec<f64> {
        let mut values: Vec<f64> = SymmetricEigen::new(self.laplacian()).eigenvalues.iter().copied().collect();
        values.sort_by(f64::total_cmp);
        values
    }

    /// Second-smallest Laplacian eigenvalue (zero for a single node).
    pub fn algebraic_connectivity(&self) -> f64 {
        let spectrum = self.laplacian_spectrum();
        spectrum.get(1).copied().unwrap_or(0.0).max(0.0)
    }

    /// The same graph with node `i` renamed to `perm[i]`.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Self> {
        let edges: Vec<_> = self.edges.iter().map(|&(i, j)| (perm[i], perm[j])).collect();
        Self::possibly_disconnected(self.nodes, &edges)
    }
}
