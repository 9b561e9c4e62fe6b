//! Agent communication graph and the matrix objects derived from it.
//!
//! All matrices are agent-level (N x N). The block forms acting on stacked
//! `Nd` vectors are Kronecker products with `I_d`, so their spectra are the
//! same and products factor per coordinate.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::{symmetric_eigen, LinalgError, Matrix, SymmetricEigen};

/// Eigenvalues below this fraction of the largest one are treated as zero.
pub const ZERO_EIGEN_RELATIVE: f64 = 1e-9;

const RANDOM_GRAPH_RETRIES: usize = 1000;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("graph is disconnected ({reached} of {n_agents} agents reachable from agent 0)")]
    DisconnectedGraph { reached: usize, n_agents: usize },
    #[error("invalid edge ({0}, {1}): {2}")]
    InvalidEdge(usize, usize, &'static str),
    #[error("need at least 2 agents, got {0}")]
    TooFewAgents(usize),
    #[error("model dimension must be positive")]
    ZeroDimension,
    #[error("random graph generation failed after {0} attempts")]
    GenerationFailed(usize),
    #[error("invalid topology spec: {0}")]
    InvalidSpec(String),
    #[error("eigensolver failure: {0}")]
    EigenFailure(#[from] LinalgError),
    #[error("reading edge list: {0}")]
    Io(#[from] std::io::Error),
}

/// Connected undirected graph over agents `0..n_agents`.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    n_agents: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    dim: usize,
}

impl Topology {
    pub fn new(n_agents: usize, edges: &[(usize, usize)], dim: usize) -> Result<Self, TopologyError> {
        if n_agents < 2 {
            return Err(TopologyError::TooFewAgents(n_agents));
        }
        if dim == 0 {
            return Err(TopologyError::ZeroDimension);
        }
        let mut seen = BTreeSet::new();
        let mut neighbors = vec![Vec::new(); n_agents];
        for &(a, b) in edges {
            if a >= n_agents || b >= n_agents {
                return Err(TopologyError::InvalidEdge(a, b, "endpoint out of range"));
            }
            if a == b {
                return Err(TopologyError::InvalidEdge(a, b, "self-loop"));
            }
            let key = (a.min(b), a.max(b));
            if !seen.insert(key) {
                return Err(TopologyError::InvalidEdge(a, b, "duplicate edge"));
            }
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        let reached = bfs_reach(&neighbors);
        if reached != n_agents {
            return Err(TopologyError::DisconnectedGraph { reached, n_agents });
        }
        Ok(Self {
            n_agents,
            edges: seen.into_iter().collect(),
            neighbors,
            dim,
        })
    }

    pub fn generate(kind: &TopologyKind, n_agents: usize, dim: usize) -> Result<Self, TopologyError> {
        match *kind {
            TopologyKind::Complete => {
                let edges: Vec<_> = (0..n_agents)
                    .flat_map(|i| ((i + 1)..n_agents).map(move |j| (i, j)))
                    .collect();
                Self::new(n_agents, &edges, dim)
            }
            TopologyKind::Ring => {
                if n_agents == 2 {
                    return Self::new(2, &[(0, 1)], dim);
                }
                let edges: Vec<_> = (0..n_agents).map(|i| (i, (i + 1) % n_agents)).collect();
                Self::new(n_agents, &edges, dim)
            }
            TopologyKind::Random { p, seed } => {
                if !(p > 0.0 && p <= 1.0) {
                    return Err(TopologyError::InvalidSpec(format!(
                        "edge probability must be in (0, 1], got {p}"
                    )));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for _ in 0..RANDOM_GRAPH_RETRIES {
                    let mut edges = Vec::new();
                    for i in 0..n_agents {
                        for j in (i + 1)..n_agents {
                            if rng.random::<f64>() < p {
                                edges.push((i, j));
                            }
                        }
                    }
                    match Self::new(n_agents, &edges, dim) {
                        Ok(t) => return Ok(t),
                        Err(TopologyError::DisconnectedGraph { .. }) => continue,
                        Err(e) => return Err(e),
                    }
                }
                Err(TopologyError::GenerationFailed(RANDOM_GRAPH_RETRIES))
            }
        }
    }

    /// Parse an edge list: one `i j` pair per line, 0-based ids. Blank lines
    /// and `#` comments are ignored. The agent count is `max id + 1`.
    pub fn parse_edge_list(text: &str, dim: usize) -> Result<Self, TopologyError> {
        let mut edges = Vec::new();
        let mut max_id = 0;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let ids: Vec<_> = line.split_whitespace().collect();
            let parse = |s: &str| {
                s.parse::<usize>().map_err(|_| {
                    TopologyError::InvalidSpec(format!("line {}: bad agent id {s:?}", lineno + 1))
                })
            };
            if ids.len() != 2 {
                return Err(TopologyError::InvalidSpec(format!(
                    "line {}: expected two ids, got {:?}",
                    lineno + 1,
                    line
                )));
            }
            let (a, b) = (parse(ids[0])?, parse(ids[1])?);
            max_id = max_id.max(a).max(b);
            edges.push((a, b));
        }
        Self::new(max_id + 1, &edges, dim)
    }

    pub fn from_edge_list_file(path: &Path, dim: usize) -> Result<Self, TopologyError> {
        Self::parse_edge_list(&std::fs::read_to_string(path)?, dim)
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Unordered edges as `(min, max)` pairs, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, agent: usize) -> &[usize] {
        &self.neighbors[agent]
    }

    pub fn degree(&self, agent: usize) -> usize {
        self.neighbors[agent].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    pub fn with_dim(&self, dim: usize) -> Result<Self, TopologyError> {
        if dim == 0 {
            return Err(TopologyError::ZeroDimension);
        }
        Ok(Self { dim, ..self.clone() })
    }

    fn adjacency(&self) -> Matrix {
        let mut w = Matrix::zeros(self.n_agents, self.n_agents);
        for &(a, b) in &self.edges {
            w[(a, b)] = 1.0;
            w[(b, a)] = 1.0;
        }
        w
    }

    fn degree_matrix(&self) -> Matrix {
        let d: Vec<f64> = self.degrees().into_iter().map(|k| k as f64).collect();
        Matrix::diagonal(&d)
    }

    pub fn spectral(&self) -> Result<SpectralData, TopologyError> {
        let w = self.adjacency();
        let m_mat = self.degree_matrix();
        let l_plus = m_mat.add(&w);
        let l_minus = m_mat.sub(&w);

        let eig_minus = symmetric_eigen(&l_minus)?;
        let eig_plus = symmetric_eigen(&l_plus)?;
        let (phi_max_lminus, phi_min_lminus) = nonzero_extremes(&eig_minus);
        // Rounding-level eigenvalues are exact zeros, so Null(Q) = span{1}.
        let cutoff = ZERO_EIGEN_RELATIVE * phi_max_lminus;
        let q_mat = eig_minus.reconstruct_with(|l| if l > cutoff { (l / 2.0).sqrt() } else { 0.0 });

        let (phi_max_lplus, phi_min_lplus) = nonzero_extremes(&eig_plus);
        let phi_max_m = self.degrees().into_iter().max().unwrap_or(0) as f64;
        let phi_min_q = (phi_min_lminus / 2.0).sqrt();
        let phi_max_q = (phi_max_lminus / 2.0).sqrt();

        Ok(SpectralData {
            l_plus,
            l_minus,
            m_mat,
            q_mat,
            eigen_lminus: eig_minus,
            eigen_lplus: eig_plus,
            phi_max_lplus,
            phi_min_lplus,
            phi_max_lminus,
            phi_min_lminus,
            phi_max_m,
            phi_min_q,
            phi_max_q,
        })
    }
}

/// Largest and smallest nonzero |eigenvalue| of a symmetric PSD matrix, which
/// are its nonzero singular-value extremes.
fn nonzero_extremes(eig: &SymmetricEigen) -> (f64, f64) {
    let largest = eig.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cutoff = ZERO_EIGEN_RELATIVE * largest;
    let smallest = eig
        .values
        .iter()
        .map(|v| v.abs())
        .filter(|&v| v > cutoff)
        .fold(f64::INFINITY, f64::min);
    (largest, if smallest.is_finite() { smallest } else { 0.0 })
}

fn bfs_reach(neighbors: &[Vec<usize>]) -> usize {
    let mut seen = vec![false; neighbors.len()];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &neighbors[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TopologyKind {
    Complete,
    Ring,
    Random { p: f64, seed: u64 },
}

impl FromStr for TopologyKind {
    type Err = TopologyError;

    /// `complete`, `ring`, or `random:p=0.3,seed=7`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "complete" => return Ok(Self::Complete),
            "ring" => return Ok(Self::Ring),
            _ => {}
        }
        let Some(params) = s.strip_prefix("random:") else {
            return Err(TopologyError::InvalidSpec(s.to_string()));
        };
        let mut p = None;
        let mut seed = 0;
        for kv in params.split(',') {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| TopologyError::InvalidSpec(s.to_string()))?;
            let bad = || TopologyError::InvalidSpec(format!("{s}: bad value for {k}"));
            match k.trim() {
                "p" => p = Some(v.trim().parse::<f64>().map_err(|_| bad())?),
                "seed" => seed = v.trim().parse::<u64>().map_err(|_| bad())?,
                _ => return Err(TopologyError::InvalidSpec(format!("{s}: unknown key {k}"))),
            }
        }
        let p = p.ok_or_else(|| TopologyError::InvalidSpec(format!("{s}: missing p")))?;
        Ok(Self::Random { p, seed })
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Complete => write!(f, "complete"),
            Self::Ring => write!(f, "ring"),
            Self::Random { p, seed } => write!(f, "random:p={p},seed={seed}"),
        }
    }
}

/// Laplacian family of a topology plus nonzero singular-value extremes.
#[derive(Debug, Clone)]
pub struct SpectralData {
    /// Signless Laplacian `D + W`.
    pub l_plus: Matrix,
    /// Signed Laplacian `D - W`.
    pub l_minus: Matrix,
    /// `(L+ + L-) / 2`, the degree matrix.
    pub m_mat: Matrix,
    /// Principal square root of `L- / 2`.
    pub q_mat: Matrix,
    pub eigen_lminus: SymmetricEigen,
    pub eigen_lplus: SymmetricEigen,
    pub phi_max_lplus: f64,
    pub phi_min_lplus: f64,
    pub phi_max_lminus: f64,
    pub phi_min_lminus: f64,
    pub phi_max_m: f64,
    pub phi_min_q: f64,
    pub phi_max_q: f64,
}

impl SpectralData {
    /// Apply an agent-level matrix to a stacked per-agent vector set
    /// (the `kron(A, I_d)` action).
    pub fn apply(mat: &Matrix, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let dim = xs.first().map_or(0, Vec::len);
        (0..mat.rows())
            .map(|i| {
                let mut out = vec![0.0; dim];
                for (j, xj) in xs.iter().enumerate() {
                    let a = mat[(i, j)];
                    if a != 0.0 {
                        crate::linalg::axpy(a, xj, &mut out);
                    }
                }
                out
            })
            .collect()
    }

    /// `<x, G x>` for an agent-level `G` acting blockwise.
    pub fn quadratic_form(mat: &Matrix, xs: &[Vec<f64>]) -> f64 {
        Self::apply(mat, xs)
            .iter()
            .zip(xs)
            .map(|(gx, x)| crate::linalg::dot(gx, x))
            .sum()
    }

    /// Moore-Penrose pseudo-inverse of Q (zero on the consensus direction).
    pub fn q_pseudo_inverse(&self) -> Matrix {
        let cutoff = ZERO_EIGEN_RELATIVE * self.phi_max_lminus;
        self.eigen_lminus.reconstruct_with(|l| {
            if l > cutoff {
                1.0 / (l / 2.0).sqrt()
            } else {
                0.0
            }
        })
    }
}

/// `L+` and `L-` built from the two-block edge-incidence construction: one
/// row block per directed link `(i, j)`, with `A1[q, i] = I` and
/// `A2[q, j] = I`; then `L+ = H+ H+^T / 2` and `L- = H- H-^T / 2` where
/// `H± = A1^T ± A2^T`. Used as an independent check on [`Topology::spectral`].
pub fn laplacian_oracle(topology: &Topology) -> (Matrix, Matrix) {
    let n = topology.n_agents();
    let links: Vec<(usize, usize)> = topology
        .edges()
        .iter()
        .flat_map(|&(a, b)| [(a, b), (b, a)])
        .collect();
    let mut a1 = Matrix::zeros(links.len(), n);
    let mut a2 = Matrix::zeros(links.len(), n);
    for (q, &(i, j)) in links.iter().enumerate() {
        a1[(q, i)] = 1.0;
        a2[(q, j)] = 1.0;
    }
    let h_plus = a1.transpose().add(&a2.transpose());
    let h_minus = a1.transpose().sub(&a2.transpose());
    let l_plus = h_plus.matmul(&h_plus.transpose()).scale(0.5);
    let l_minus = h_minus.matmul(&h_minus.transpose()).scale(0.5);
    (l_plus, l_minus)
}
