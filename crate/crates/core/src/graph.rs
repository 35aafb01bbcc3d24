//! Undirected, unweighted graphs with GCN propagation and negative-edge
//! sampling.

use std::collections::{BTreeSet, HashSet};
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{SparseMatrix, Tensor};

/// Simple undirected graph. Edges are stored once as `(i, j)` with `i < j`,
/// sorted; no self-loops, no duplicates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph from an edge list in any order. Mirrored and repeated
    /// pairs collapse to one edge.
    pub fn new(n: usize, edge_list: &[(usize, usize)]) -> Result<Self> {
        let mut loops = Vec::new();
        let mut set = BTreeSet::new();
        for &(i, j) in edge_list {
            if i >= n || j >= n {
                return Err(Error::Ingest(format!(
                    "edge ({i}, {j}) references a node outside 0..{n}"
                )));
            }
            if i == j {
                loops.push(i);
                continue;
            }
            set.insert((i.min(j), i.max(j)));
        }
        if !loops.is_empty() {
            let listed: Vec<String> = loops.iter().map(|i| format!("({i}, {i})")).collect();
            return Err(Error::Ingest(format!(
                "self-loops are not allowed: {}",
                listed.join(", ")
            )));
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j) in &edges {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(Graph {
            n,
            edges,
            neighbors,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i < self.n && self.neighbors[i].binary_search(&j).is_ok()
    }

    /// Number of unordered node pairs that are not edges.
    pub fn num_non_edges(&self) -> usize {
        self.n * self.n.saturating_sub(1) / 2 - self.edges.len()
    }

    pub fn adjacency(&self) -> Tensor {
        let mut a = Tensor::zeros(self.n, self.n);
        for &(i, j) in &self.edges {
            a.set(i, j, 1.0);
            a.set(j, i, 1.0);
        }
        a
    }

    /// Relabels nodes: node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        let edges: Vec<_> = self
            .edges
            .iter()
            .map(|&(i, j)| (perm[i], perm[j]))
            .collect();
        Graph::new(self.n, &edges)
    }

    /// `D̃^{-1/2} (A + I) D̃^{-1/2}` in sparse form.
    pub fn normalized_adjacency(&self) -> Rc<SparseMatrix> {
        let inv_sqrt: Vec<f64> = self
            .neighbors
            .iter()
            .map(|nb| 1.0 / ((nb.len() + 1) as f64).sqrt())
            .collect();
        let mut triplets = Vec::with_capacity(self.n + 2 * self.edges.len());
        for i in 0..self.n {
            let mut row: Vec<usize> = self.neighbors[i].clone();
            row.push(i);
            row.sort_unstable();
            for j in row {
                let v = if i == j {
                    1.0 / (self.neighbors[i].len() + 1) as f64
                } else {
                    inv_sqrt[i] * inv_sqrt[j]
                };
                triplets.push((i, j, v));
            }
        }
        Rc::new(
            SparseMatrix::from_sorted_triplets(self.n, self.n, &triplets)
                .expect("triplets are generated sorted and in range"),
        )
    }
}

/// Dense reference form of the normalized adjacency with self-loops.
pub fn sym_normalize(g: &Graph) -> Tensor {
    g.normalized_adjacency().to_dense()
}

/// Sampled node pairs that are not edges of the graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NegativeEdgeSet {
    pairs: Vec<(usize, usize)>,
    seed: u64,
}

impl NegativeEdgeSet {
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Uniform sample without replacement of `count` unordered non-edges.
/// Pairs come back as `(i, j)` with `i < j`, in draw order.
pub fn sample_negative_edges(g: &Graph, count: usize, seed: u64) -> Result<NegativeEdgeSet> {
    let pool = g.num_non_edges();
    if count > pool {
        return Err(Error::Sampling(format!(
            "requested {count} negative edges but only {pool} non-edges exist"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = if count * 2 > pool {
        // dense regime: enumerate and partially shuffle
        let mut all = Vec::with_capacity(pool);
        for i in 0..g.n {
            for j in i + 1..g.n {
                if !g.has_edge(i, j) {
                    all.push((i, j));
                }
            }
        }
        for k in 0..count {
            let r = rng.random_range(k..all.len());
            all.swap(k, r);
        }
        all.truncate(count);
        all
    } else {
        let mut seen = HashSet::with_capacity(count);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let i = rng.random_range(0..g.n);
            let j = rng.random_range(0..g.n);
            if i == j {
                continue;
            }
            let pair = (i.min(j), i.max(j));
            if g.has_edge(pair.0, pair.1) || !seen.insert(pair) {
                continue;
            }
            out.push(pair);
        }
        out
    };
    Ok(NegativeEdgeSet { pairs, seed })
}
