//! Communication network topology and its spectral quantities.
//!
//! The network is a connected undirected weighted graph over agents
//! `1..=n`. Its Laplacian `L = D - A` drives every convergence statement in
//! this crate: the kernel direction `1` carries the network average, and the
//! smallest nonzero eigenvalue (the Fiedler value, `lambda_2`) times the
//! consensus gain sets the exponential convergence rate.
//!
//! Agent labels are 1-based in the public API. Vector-valued quantities
//! throughout the crate place agent `k` at index `k - 1`.

use ndarray::Array2;
use std::collections::BTreeMap;
use thiserror::Error;

/// Off-diagonal Frobenius norm at which the Jacobi eigensolver stops.
const JACOBI_TOLERANCE: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("agent index {agent} out of range 1..={n}")]
    IndexOutOfRange { agent: usize, n: usize },
    #[error("self-loop on agent {agent}")]
    SelfLoop { agent: usize },
    #[error("edge ({i},{j}) has non-positive weight {weight}")]
    NonPositiveWeight { i: usize, j: usize, weight: f64 },
    #[error("edge ({i},{j}) listed twice with conflicting weights {first} and {second}")]
    ConflictingDuplicate {
        i: usize,
        j: usize,
        first: f64,
        second: f64,
    },
    #[error("topology needs at least one agent")]
    NoAgents,
    #[error("ring topology needs at least 3 agents, got {n}")]
    RingTooSmall { n: usize },
}

/// Undirected weighted graph over agents `1..=n`.
///
/// Weights are strictly positive and stored once per undirected edge;
/// self-loops are rejected. Immutable after construction and safe to share
/// across threads.
#[derive(Debug, Clone)]
pub struct Topology {
    n: usize,
    /// Key is the 0-based endpoint pair `(min, max)`.
    weights: BTreeMap<(usize, usize), f64>,
    /// Flat 0-based edge list kept alongside the map for the integration
    /// hot path.
    edge_list: Vec<(usize, usize, f64)>,
}

impl Topology {
    /// Builds a topology from 1-based `(i, j, weight)` edges.
    ///
    /// A duplicate listing of the same undirected edge is accepted only if
    /// the weights agree exactly.
    pub fn new(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self, TopologyError> {
        if n == 0 {
            return Err(TopologyError::NoAgents);
        }
        let mut weights = BTreeMap::new();
        for &(i, j, w) in edges {
            if i < 1 || i > n {
                return Err(TopologyError::IndexOutOfRange { agent: i, n });
            }
            if j < 1 || j > n {
                return Err(TopologyError::IndexOutOfRange { agent: j, n });
            }
            if i == j {
                return Err(TopologyError::SelfLoop { agent: i });
            }
            if !(w > 0.0) || !w.is_finite() {
                return Err(TopologyError::NonPositiveWeight { i, j, weight: w });
            }
            let key = (i.min(j) - 1, i.max(j) - 1);
            if let Some(&prev) = weights.get(&key) {
                if prev != w {
                    return Err(TopologyError::ConflictingDuplicate {
                        i,
                        j,
                        first: prev,
                        second: w,
                    });
                }
            }
            weights.insert(key, w);
        }
        let edge_list = weights.iter().map(|(&(a, b), &w)| (a, b, w)).collect();
        Ok(Self {
            n,
            weights,
            edge_list,
        })
    }

    /// Cycle over `1 -> 2 -> ... -> n -> 1` with unit weights.
    pub fn ring(n: usize) -> Result<Self, TopologyError> {
        if n < 3 {
            return Err(TopologyError::RingTooSmall { n });
        }
        let mut edges: Vec<(usize, usize, f64)> =
            (1..n).map(|k| (k, k + 1, 1.0)).collect();
        edges.push((n, 1, 1.0));
        Self::new(n, &edges)
    }

    pub fn agent_count(&self) -> usize {
        self.n
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.weights.len()
    }

    /// Weight of the undirected edge between 1-based agents, if present.
    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        if i == j || i < 1 || j < 1 || i > self.n || j > self.n {
            return None;
        }
        self.weights.get(&(i.min(j) - 1, i.max(j) - 1)).copied()
    }

    /// Number of neighbors of a 1-based agent.
    pub fn degree(&self, agent: usize) -> usize {
        assert!(
            agent >= 1 && agent <= self.n,
            "agent {agent} out of range 1..={}",
            self.n
        );
        let a = agent - 1;
        self.edge_list
            .iter()
            .filter(|&&(x, y, _)| x == a || y == a)
            .count()
    }

    /// Undirected edges as 1-based `(i, j, weight)` with `i < j`, sorted.
    pub fn undirected_edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.edge_list.iter().map(|&(a, b, w)| (a + 1, b + 1, w))
    }

    /// Both orientations of every edge as 1-based `(from, to)`, sorted.
    pub fn directed_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(2 * self.edge_list.len());
        for &(a, b, _) in &self.edge_list {
            out.push((a + 1, b + 1));
            out.push((b + 1, a + 1));
        }
        out.sort_unstable();
        out
    }

    /// Graph Laplacian `L = D - A`. Symmetric positive semidefinite with
    /// zero row sums.
    pub fn laplacian(&self) -> Array2<f64> {
        let mut l = Array2::zeros((self.n, self.n));
        for &(a, b, w) in &self.edge_list {
            l[[a, a]] += w;
            l[[b, b]] += w;
            l[[a, b]] -= w;
            l[[b, a]] -= w;
        }
        l
    }

    /// Writes `out = L x` without forming the matrix.
    pub(crate) fn apply_laplacian(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(out.len(), self.n);
        out.fill(0.0);
        for &(a, b, w) in &self.edge_list {
            let d = w * (x[a] - x[b]);
            out[a] += d;
            out[b] -= d;
        }
    }

    /// Second-smallest Laplacian eigenvalue (algebraic connectivity).
    ///
    /// Strictly positive exactly when the graph is connected. Returns 0 for
    /// a single-agent graph, which has no second eigenvalue.
    pub fn fiedler_value(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let evals = symmetric_eigenvalues(&self.laplacian());
        evals[1].max(0.0)
    }

    /// Largest Laplacian eigenvalue, used by the integrator stability guard.
    pub fn max_laplacian_eigenvalue(&self) -> f64 {
        let evals = symmetric_eigenvalues(&self.laplacian());
        evals.last().copied().unwrap_or(0.0).max(0.0)
    }

    /// True when a traversal from agent 1 reaches every agent.
    ///
    /// Determined combinatorially rather than by thresholding the Fiedler
    /// value, so connectivity never depends on an eigensolver tolerance.
    pub fn is_connected(&self) -> bool {
        if self.n <= 1 {
            return true;
        }
        let mut adj = vec![Vec::new(); self.n];
        for &(a, b, _) in &self.edge_list {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; self.n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    count += 1;
                    stack.push(u);
                }
            }
        }
        count == self.n
    }
}

/// Eigenvalues of a symmetric matrix, ascending, by cyclic Jacobi rotations.
///
/// Robust and adequate for the small dense matrices this crate works with
/// (the Laplacian and its pinned variant). Sweeps run until the off-diagonal
/// Frobenius norm drops below `1e-12`.
pub(crate) fn symmetric_eigenvalues(a: &Array2<f64>) -> Vec<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "matrix must be square");
    let mut m = a.clone();
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_diagonal_norm(&m) <= JACOBI_TOLERANCE {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for i in 0..n {
                    if i != p && i != q {
                        let aip = m[[i, p]];
                        let aiq = m[[i, q]];
                        m[[i, p]] = c * aip - s * aiq;
                        m[[p, i]] = m[[i, p]];
                        m[[i, q]] = s * aip + c * aiq;
                        m[[q, i]] = m[[i, q]];
                    }
                }
                m[[p, p]] = c * c * app - 2.0 * s * c * apq + s * s * aqq;
                m[[q, q]] = s * s * app + 2.0 * s * c * apq + c * c * aqq;
                m[[p, q]] = 0.0;
                m[[q, p]] = 0.0;
            }
        }
    }
    let mut evals: Vec<f64> = (0..n).map(|i| m[[i, i]]).collect();
    evals.sort_by(|x, y| x.total_cmp(y));
    evals
}

fn off_diagonal_norm(m: &Array2<f64>) -> f64 {
    let n = m.nrows();
    let mut acc = 0.0;
    for p in 0..n {
        for q in (p + 1)..n {
            acc += 2.0 * m[[p, q]] * m[[p, q]];
        }
    }
    acc.sqrt()
}
