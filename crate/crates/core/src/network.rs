//! Sensor-network topologies, random pairwise gossip matrices and the
//! spectral summary of `E[W Wᵀ]` that every convergence bound depends on.
//!
//! Node indices are 0-based. A gossip slot is the product of `v` pairwise
//! averaging matrices `W_ij = I - (e_i - e_j)(e_i - e_j)ᵀ / 2`, each drawn
//! uniformly from the admissible pairs of the topology.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use thiserror::Error;

/// Tolerance used when validating doubly stochastic matrices.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("network needs at least one node")]
    NoNodes,
    #[error("node index {index} out of range for {nodes} nodes")]
    InvalidNode { index: usize, nodes: usize },
    #[error("self pair ({0}, {0}) is not admissible")]
    SelfPair(usize),
    #[error("duplicate pair ({0}, {1})")]
    DuplicatePair(usize, usize),
    #[error("neighbour count k={k} must be even and smaller than the node count {nodes}")]
    InvalidNeighbourCount { k: usize, nodes: usize },
    #[error("topology is disconnected (node {0} unreachable from node 0)")]
    Disconnected(usize),
    #[error("topology has no admissible pairs")]
    NoPairs,
    #[error("matrix is {rows}x{cols}, expected square {nodes}x{nodes}")]
    Dimension { rows: usize, cols: usize, nodes: usize },
    #[error("matrix is not doubly stochastic (max deviation {0:e})")]
    NotDoublyStochastic(f64),
    #[error("matrix has a negative entry {0:e}")]
    NegativeEntry(f64),
    #[error("exchanges per slot must be at least 1")]
    NoExchanges,
}

/// How the admissible pairs of a topology are generated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TopologyKind {
    /// Every pair of nodes may exchange.
    FullRing,
    /// Ring where each node talks to `k/2` neighbours in each direction.
    KNeighborRing(usize),
    /// Caller-supplied unordered pairs.
    ExplicitEdges(Vec<(usize, usize)>),
}

impl TopologyKind {
    pub fn label(&self) -> &'static str {
        match self {
            TopologyKind::FullRing => "full",
            TopologyKind::KNeighborRing(_) => "kring",
            TopologyKind::ExplicitEdges(_) => "explicit",
        }
    }
}

/// Node count plus the admissible communication pairs, stored as `(i, j)`
/// with `i < j`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTopology {
    kind: TopologyKind,
    nodes: usize,
    pairs: Vec<(usize, usize)>,
}

impl NetworkTopology {
    /// Builds a topology and rejects disconnected graphs.
    pub fn build(kind: TopologyKind, nodes: usize) -> Result<Self, NetworkError> {
        Self::build_with(kind, nodes, false)
    }

    /// Builds a topology; `allow_disconnected` lets deliberately disconnected
    /// experiments through.
    pub fn build_with(
        kind: TopologyKind,
        nodes: usize,
        allow_disconnected: bool,
    ) -> Result<Self, NetworkError> {
        if nodes == 0 {
            return Err(NetworkError::NoNodes);
        }
        let raw: Vec<(usize, usize)> = match &kind {
            TopologyKind::FullRing => (0..nodes)
                .flat_map(|i| (i + 1..nodes).map(move |j| (i, j)))
                .collect(),
            TopologyKind::KNeighborRing(k) => {
                let k = *k;
                if k == 0 || k % 2 != 0 || k >= nodes {
                    return Err(NetworkError::InvalidNeighbourCount { k, nodes });
                }
                let mut pairs = Vec::with_capacity(nodes * k / 2);
                for i in 0..nodes {
                    for d in 1..=k / 2 {
                        let j = (i + d) % nodes;
                        let p = (i.min(j), i.max(j));
                        if !pairs.contains(&p) {
                            pairs.push(p);
                        }
                    }
                }
                pairs.sort_unstable();
                pairs
            }
            TopologyKind::ExplicitEdges(edges) => {
                let mut pairs = Vec::with_capacity(edges.len());
                for &(i, j) in edges {
                    for idx in [i, j] {
                        if idx >= nodes {
                            return Err(NetworkError::InvalidNode { index: idx, nodes });
                        }
                    }
                    if i == j {
                        return Err(NetworkError::SelfPair(i));
                    }
                    let p = (i.min(j), i.max(j));
                    if pairs.contains(&p) {
                        return Err(NetworkError::DuplicatePair(p.0, p.1));
                    }
                    pairs.push(p);
                }
                pairs
            }
        };
        let topo = NetworkTopology { kind, nodes, pairs: raw };
        if !allow_disconnected {
            if let Some(node) = topo.first_unreachable() {
                return Err(NetworkError::Disconnected(node));
            }
        }
        Ok(topo)
    }

    pub fn kind(&self) -> &TopologyKind {
        &self.kind
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn is_connected(&self) -> bool {
        self.first_unreachable().is_none()
    }

    fn first_unreachable(&self) -> Option<usize> {
        let mut parent: Vec<usize> = (0..self.nodes).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for &(i, j) in &self.pairs {
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            if ri != rj {
                parent[ri] = rj;
            }
        }
        let root = find(&mut parent, 0);
        (1..self.nodes).find(|&n| find(&mut parent, n) != root)
    }

    /// Draws `v` pairs independently and uniformly from the admissible list.
    pub fn sample_pairs<R: Rng + ?Sized>(
        &self,
        v: usize,
        rng: &mut R,
    ) -> Result<PairSequence, NetworkError> {
        let mut seq = PairSequence { nodes: self.nodes, pairs: Vec::with_capacity(v) };
        self.sample_pairs_into(v, rng, &mut seq)?;
        Ok(seq)
    }

    /// Allocation-free variant of [`sample_pairs`](Self::sample_pairs) for
    /// inner simulation loops.
    pub fn sample_pairs_into<R: Rng + ?Sized>(
        &self,
        v: usize,
        rng: &mut R,
        out: &mut PairSequence,
    ) -> Result<(), NetworkError> {
        if v == 0 {
            return Err(NetworkError::NoExchanges);
        }
        out.nodes = self.nodes;
        out.pairs.clear();
        if self.pairs.is_empty() {
            // a lone node has nobody to talk to and keeps its state
            return if self.nodes == 1 { Ok(()) } else { Err(NetworkError::NoPairs) };
        }
        let len = self.pairs.len();
        for _ in 0..v {
            out.pairs.push(self.pairs[rng.random_range(0..len)]);
        }
        Ok(())
    }

    /// Dense product of `v` uniformly drawn pairwise matrices.
    pub fn sample_gossip_matrix<R: Rng + ?Sized>(
        &self,
        v: usize,
        rng: &mut R,
    ) -> Result<GossipMatrix, NetworkError> {
        Ok(self.sample_pairs(v, rng)?.to_matrix())
    }

    /// `E[W]` for the single-pair protocol, which equals `E[W Wᵀ]` because
    /// every pairwise matrix is symmetric and idempotent.
    pub fn expected_gossip_matrix(&self) -> Result<SpectralSummary, NetworkError> {
        if self.pairs.is_empty() {
            return Err(NetworkError::NoPairs);
        }
        let m = self.nodes;
        let mut expected = DMatrix::<f64>::zeros(m, m);
        for &(i, j) in &self.pairs {
            let w = pairwise_matrix(i, j, m)?;
            expected += w.as_matrix();
        }
        expected /= self.pairs.len() as f64;
        Ok(SpectralSummary::from_expected(expected))
    }
}

/// Eigen-summary of `E[W Wᵀ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSummary {
    /// Second largest eigenvalue.
    pub lambda_upper: f64,
    /// Smallest eigenvalue, clamped at zero.
    pub lambda_lower: f64,
    pub expected: DMatrix<f64>,
}

impl SpectralSummary {
    pub fn from_expected(expected: DMatrix<f64>) -> Self {
        let m = expected.nrows();
        let sym = (&expected + expected.transpose()) * 0.5;
        let mut eig: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        let lambda_upper = if m > 1 { eig[1] } else { 0.0 };
        let lambda_lower = eig[m - 1].max(0.0);
        SpectralSummary {
            lambda_upper: lambda_upper.clamp(0.0, 1.0),
            lambda_lower: lambda_lower.min(lambda_upper.clamp(0.0, 1.0)),
            expected,
        }
    }

    /// Eigenvalue pair to use when each slot runs `v` independent exchanges:
    /// the single-exchange eigenvalues raised to the power `v`.
    pub fn per_slot(&self, v: usize) -> (f64, f64) {
        let v = v as i32;
        (self.lambda_upper.powi(v), self.lambda_lower.powi(v))
    }
}

/// Anything that can act as a gossip matrix on a state vector in place.
pub trait Gossip {
    fn nodes(&self) -> usize;
    fn apply(&self, state: &mut [f64]);
}

/// The pairwise averaging matrix `I - (e_i - e_j)(e_i - e_j)ᵀ / 2`.
pub fn pairwise_matrix(i: usize, j: usize, nodes: usize) -> Result<GossipMatrix, NetworkError> {
    for idx in [i, j] {
        if idx >= nodes {
            return Err(NetworkError::InvalidNode { index: idx, nodes });
        }
    }
    if i == j {
        return Err(NetworkError::SelfPair(i));
    }
    let mut w = DMatrix::<f64>::identity(nodes, nodes);
    w[(i, i)] = 0.5;
    w[(j, j)] = 0.5;
    w[(i, j)] = 0.5;
    w[(j, i)] = 0.5;
    Ok(GossipMatrix(w))
}

/// Dense doubly stochastic matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GossipMatrix(DMatrix<f64>);

impl GossipMatrix {
    /// Validates nonnegativity and unit row/column sums.
    pub fn new(entries: DMatrix<f64>) -> Result<Self, NetworkError> {
        let (rows, cols) = entries.shape();
        if rows != cols || rows == 0 {
            return Err(NetworkError::Dimension { rows, cols, nodes: rows.max(cols) });
        }
        if let Some(&neg) = entries.iter().find(|&&x| x < 0.0) {
            return Err(NetworkError::NegativeEntry(neg));
        }
        let dev = stochastic_deviation(&entries);
        if dev > STOCHASTIC_TOL {
            return Err(NetworkError::NotDoublyStochastic(dev));
        }
        Ok(GossipMatrix(entries))
    }

    pub fn identity(nodes: usize) -> Self {
        GossipMatrix(DMatrix::identity(nodes, nodes))
    }

    /// `11ᵀ / M`: perfect consensus in one slot.
    pub fn full_averaging(nodes: usize) -> Self {
        GossipMatrix(DMatrix::from_element(nodes, nodes, 1.0 / nodes as f64))
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Largest absolute deviation of any row or column sum from 1.
    pub fn stochastic_deviation(&self) -> f64 {
        stochastic_deviation(&self.0)
    }

    pub fn product(&self, rhs: &GossipMatrix) -> GossipMatrix {
        GossipMatrix(&self.0 * &rhs.0)
    }
}

fn stochastic_deviation(m: &DMatrix<f64>) -> f64 {
    let rows = m.row_iter().map(|r| (r.sum() - 1.0).abs());
    let cols = m.column_iter().map(|c| (c.sum() - 1.0).abs());
    rows.chain(cols).fold(0.0, f64::max)
}

impl Gossip for GossipMatrix {
    fn nodes(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&self, state: &mut [f64]) {
        let m = self.0.nrows();
        assert_eq!(state.len(), m, "state length does not match gossip matrix");
        let out: Vec<f64> = (0..m)
            .map(|i| (0..m).map(|k| self.0[(i, k)] * state[k]).sum())
            .collect();
        state.copy_from_slice(&out);
    }
}

/// Sparse representation of `W_{p1} W_{p2} ... W_{pv}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSequence {
    nodes: usize,
    pairs: Vec<(usize, usize)>,
}

impl PairSequence {
    pub fn new(nodes: usize, pairs: Vec<(usize, usize)>) -> Result<Self, NetworkError> {
        for &(i, j) in &pairs {
            for idx in [i, j] {
                if idx >= nodes {
                    return Err(NetworkError::InvalidNode { index: idx, nodes });
                }
            }
            if i == j {
                return Err(NetworkError::SelfPair(i));
            }
        }
        Ok(PairSequence { nodes, pairs })
    }

    /// Empty sequence for `nodes` nodes; applies as the identity.
    pub fn empty(nodes: usize) -> Self {
        PairSequence { nodes, pairs: Vec::new() }
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn to_matrix(&self) -> GossipMatrix {
        let mut w = DMatrix::<f64>::identity(self.nodes, self.nodes);
        for &(i, j) in &self.pairs {
            // right-multiplying by W_ij averages columns i and j
            for r in 0..self.nodes {
                let avg = 0.5 * (w[(r, i)] + w[(r, j)]);
                w[(r, i)] = avg;
                w[(r, j)] = avg;
            }
        }
        GossipMatrix(w)
    }
}

impl Gossip for PairSequence {
    fn nodes(&self) -> usize {
        self.nodes
    }

    fn apply(&self, state: &mut [f64]) {
        assert_eq!(state.len(), self.nodes, "state length does not match pair sequence");
        for &(i, j) in self.pairs.iter().rev() {
            let avg = 0.5 * (state[i] + state[j]);
            state[i] = avg;
            state[j] = avg;
        }
    }
}
