//! Mask-topology graphs: the deterministic Harary ring construction and a
//! seeded random-regular alternative. Vertices are 0..n-1; protocol code
//! maps vertex v to client id v + 1.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("degree {k} invalid for {n} vertices")]
    InvalidDegree { n: usize, k: usize },
}

/// Undirected k-regular graph with per-vertex sorted adjacency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    adj: Vec<Vec<usize>>,
}

impl Graph {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn complete(n: usize) -> Graph {
        let adj = (0..n)
            .map(|v| (0..n).filter(|&u| u != v).collect())
            .collect();
        Graph { n, adj }
    }

    /// Harary ring: vertex i adjacent to i +- 1, ..., i +- k/2 (mod n).
    /// Odd k is rounded up to the next even degree; k = n - 1 yields the
    /// complete graph. The result is k-regular and k-connected.
    pub fn harary(n: usize, k: usize) -> Result<Graph, GraphError> {
        if k < 1 || k >= n {
            return Err(GraphError::InvalidDegree { n, k });
        }
        if k == n - 1 {
            return Ok(Graph::complete(n));
        }
        let k = if k % 2 == 1 { k + 1 } else { k };
        if k >= n - 1 {
            return Ok(Graph::complete(n));
        }
        let mut adj: Vec<Vec<usize>> = vec![Vec::with_capacity(k); n];
        for v in 0..n {
            for off in 1..=k / 2 {
                adj[v].push((v + off) % n);
                adj[v].push((v + n - off) % n);
            }
            adj[v].sort_unstable();
        }
        Ok(Graph { n, adj })
    }

    /// Seeded random k-regular graph via the pairing model, retried until a
    /// simple graph comes out. Requires n * k even.
    pub fn random_regular(n: usize, k: usize, rng: &mut ChaCha20Rng) -> Result<Graph, GraphError> {
        if k < 1 || k >= n || (n * k) % 2 == 1 {
            return Err(GraphError::InvalidDegree { n, k });
        }
        'attempt: loop {
            let mut stubs: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat(v).take(k)).collect();
            // Fisher-Yates, then pair consecutive stubs
            for i in (1..stubs.len()).rev() {
                let j = rng.random_range(0..=i);
                stubs.swap(i, j);
            }
            let mut adj: Vec<Vec<usize>> = vec![Vec::with_capacity(k); n];
            for pair in stubs.chunks(2) {
                let (a, b) = (pair[0], pair[1]);
                if a == b || adj[a].contains(&b) {
                    continue 'attempt;
                }
                adj[a].push(b);
                adj[b].push(a);
            }
            for l in adj.iter_mut() {
                l.sort_unstable();
            }
            return Ok(Graph { n, adj });
        }
    }

    /// Connectivity after deleting `removed`, by flood fill. Test oracle for
    /// the k-connectivity property on small graphs.
    pub fn connected_without(&self, removed: &[usize]) -> bool {
        let mut alive = vec![true; self.n];
        for &r in removed {
            alive[r] = false;
        }
        let Some(start) = (0..self.n).find(|&v| alive[v]) else {
            return true;
        };
        let mut seen = vec![false; self.n];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(v) = stack.pop() {
            for &u in &self.adj[v] {
                if alive[u] && !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        (0..self.n).all(|v| !alive[v] || seen[v])
    }
}
