//! Graph representation, Laplacian construction, k-hop extraction,
//! synthetic data generation, dataset ingestion and split generation.

mod generate;
mod io;
mod splits;

pub use generate::{generate_csbm_anomaly_graph, CsbmParams};
pub use io::{load_graph, save_graph};
pub use splits::{make_splits, Role, SplitAssignment};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Undirected attributed graph in CSR form with optional binary node labels
/// (0 normal, 1 anomaly). Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    num_nodes: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    features: Vec<f64>,
    feature_dim: usize,
    labels: Option<Vec<u8>>,
}

impl SparseGraph {
    /// Builds from an undirected edge list. Input edges are symmetrized,
    /// deduplicated and stripped of self-loops.
    pub fn from_edges(
        num_nodes: usize,
        edges: &[(usize, usize)],
        features: Vec<f64>,
        feature_dim: usize,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        if features.len() != num_nodes * feature_dim {
            return Err(Error::InvalidInput(format!(
                "feature matrix has {} entries, expected {}x{}",
                features.len(),
                num_nodes,
                feature_dim
            )));
        }
        if let Some(ref l) = labels {
            if l.len() != num_nodes {
                return Err(Error::InvalidInput(format!(
                    "label count {} != node count {}",
                    l.len(),
                    num_nodes
                )));
            }
            if let Some(bad) = l.iter().find(|&&v| v > 1) {
                return Err(Error::InvalidInput(format!("label {bad} is not binary")));
            }
        }
        let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
        for &(u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::InvalidInput(format!(
                    "edge ({u}, {v}) out of range for {num_nodes} nodes"
                )));
            }
            if u == v {
                continue; // self-loops dropped
            }
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        let mut row_offsets = Vec::with_capacity(num_nodes + 1);
        let mut col_indices = Vec::new();
        row_offsets.push(0);
        for nbrs in adjacency.iter_mut() {
            nbrs.sort_unstable();
            nbrs.dedup();
            col_indices.extend_from_slice(nbrs);
            row_offsets.push(col_indices.len());
        }
        Ok(SparseGraph {
            num_nodes,
            row_offsets,
            col_indices,
            features,
            feature_dim,
            labels,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.col_indices.len() / 2
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Node features as a row-major `N×F` matrix.
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[node]..self.row_offsets[node + 1]]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.row_offsets[node + 1] - self.row_offsets[node]
    }

    /// Undirected edge pairs `(u, v)` with `u < v`, in ascending order.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for u in 0..self.num_nodes {
            for &v in self.neighbors(u) {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// Checks the structural invariants: symmetry, no self-loops, sorted
    /// unique columns, consistent feature/label lengths.
    pub fn validate(&self) -> Result<()> {
        for u in 0..self.num_nodes {
            let nbrs = self.neighbors(u);
            for w in nbrs.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::InvalidInput(format!(
                        "row {u} has unsorted or duplicate columns"
                    )));
                }
            }
            for &v in nbrs {
                if v == u {
                    return Err(Error::InvalidInput(format!("self-loop at node {u}")));
                }
                if !self.neighbors(v).contains(&u) {
                    return Err(Error::InvalidInput(format!(
                        "edge ({u}, {v}) has no mirror ({v}, {u})"
                    )));
                }
            }
        }
        if self.features.len() != self.num_nodes * self.feature_dim {
            return Err(Error::InvalidInput("feature shape mismatch".into()));
        }
        if let Some(ref l) = self.labels {
            if l.len() != self.num_nodes {
                return Err(Error::InvalidInput("label length mismatch".into()));
            }
        }
        Ok(())
    }

    /// Induced subgraph on all nodes within hop distance `k` of `center`.
    /// The center maps to local id 0; remaining nodes keep ascending original
    /// order. Returns the subgraph and the original ids of its nodes.
    pub fn k_hop_subgraph(&self, center: usize, k: usize) -> Result<(SparseGraph, Vec<usize>)> {
        if center >= self.num_nodes {
            return Err(Error::InvalidInput(format!(
                "center {center} out of range for {} nodes",
                self.num_nodes
            )));
        }
        let mut dist = vec![usize::MAX; self.num_nodes];
        dist[center] = 0;
        let mut frontier = vec![center];
        let mut members = vec![center];
        for hop in 0..k {
            let mut next = Vec::new();
            for &u in &frontier {
                for &v in self.neighbors(u) {
                    if dist[v] == usize::MAX {
                        dist[v] = hop + 1;
                        next.push(v);
                        members.push(v);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        let mut rest: Vec<usize> = members.iter().copied().filter(|&v| v != center).collect();
        rest.sort_unstable();
        let mut order = Vec::with_capacity(rest.len() + 1);
        order.push(center);
        order.extend(rest);

        let mut local = vec![usize::MAX; self.num_nodes];
        for (i, &orig) in order.iter().enumerate() {
            local[orig] = i;
        }
        let mut edges = Vec::new();
        for &u in &order {
            for &v in self.neighbors(u) {
                if local[v] != usize::MAX && u < v {
                    edges.push((local[u], local[v]));
                }
            }
        }
        let mut features = Vec::with_capacity(order.len() * self.feature_dim);
        for &orig in &order {
            features
                .extend_from_slice(&self.features[orig * self.feature_dim..(orig + 1) * self.feature_dim]);
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| order.iter().map(|&orig| l[orig]).collect());
        let sub = SparseGraph::from_edges(order.len(), &edges, features, self.feature_dim, labels)?;
        Ok((sub, order))
    }
}

/// Normalized (or rescaled) graph Laplacian in CSR form.
///
/// `rescaled == false`: entries encode `L = I − D^(−1/2) A D^(−1/2)`, spectrum
/// in `[0, 2]`. `rescaled == true`: entries encode `(2/λ_max) L − I`, spectrum
/// in `[−1, 1]`. Degree-0 nodes get an identity row.
#[derive(Debug, Clone)]
pub struct Laplacian {
    pub matrix: CsrMatrix,
    /// Largest-eigenvalue estimate used for rescaling (safety-factored and
    /// clamped to 2).
    pub lambda_max: f64,
    pub rescaled: bool,
}

/// Builds the normalized Laplacian with `lambda_max` from power iteration
/// (×1.01 safety factor, clamped to 2).
pub fn build_laplacian(graph: &SparseGraph) -> Laplacian {
    let n = graph.num_nodes();
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|u| {
            let d = graph.degree(u);
            if d == 0 {
                1.0 // isolated nodes behave as degree 1: identity row
            } else {
                1.0 / (d as f64).sqrt()
            }
        })
        .collect();
    let mut triplets = Vec::with_capacity(graph.col_indices.len() + n);
    for u in 0..n {
        triplets.push((u, u, 1.0));
        for &v in graph.neighbors(u) {
            triplets.push((u, v, -inv_sqrt_deg[u] * inv_sqrt_deg[v]));
        }
    }
    let matrix = CsrMatrix::from_triplets(n, triplets);
    let mut lap = Laplacian {
        matrix,
        lambda_max: 2.0,
        rescaled: false,
    };
    let est = estimate_lambda_max(&lap, 1e-7, 1000);
    lap.lambda_max = (est * 1.01).min(2.0);
    lap
}

/// Power-iteration estimate of the largest eigenvalue of `L`. Returns the raw
/// estimate (no safety factor). Falls back to 2.0 when not converged.
pub fn estimate_lambda_max(lap: &Laplacian, tol: f64, max_iters: usize) -> f64 {
    assert!(tol > 0.0, "tolerance must be positive");
    let n = lap.matrix.n;
    if n == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    let nv = crate::dense::norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut lv = vec![0.0; n];
    let mut prev = 0.0;
    for _ in 0..max_iters {
        lap.matrix.matvec(&v, &mut lv);
        let est = crate::dense::dot(&v, &lv);
        let norm_lv = crate::dense::norm(&lv);
        if norm_lv < 1e-300 {
            return 0.0; // L ≈ 0: no spectrum to find
        }
        for (vi, li) in v.iter_mut().zip(&lv) {
            *vi = li / norm_lv;
        }
        if (est - prev).abs() <= tol * est.abs().max(1e-12) {
            return est;
        }
        prev = est;
    }
    log::warn!("power iteration did not converge in {max_iters} iterations; falling back to 2.0");
    2.0
}

/// Maps entries to `(2/λ_max) L − I`, putting the spectrum in `[−1, 1]`.
pub fn rescale_laplacian(lap: &Laplacian) -> Result<Laplacian> {
    if lap.lambda_max <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "cannot rescale with lambda_max = {}",
            lap.lambda_max
        )));
    }
    if lap.rescaled {
        return Err(Error::InvalidInput("laplacian already rescaled".into()));
    }
    let scale = 2.0 / lap.lambda_max;
    let mut matrix = lap.matrix.clone();
    for i in 0..matrix.n {
        let (lo, hi) = (matrix.row_offsets[i], matrix.row_offsets[i + 1]);
        for k in lo..hi {
            matrix.values[k] *= scale;
            if matrix.col_indices[k] == i {
                matrix.values[k] -= 1.0;
            }
        }
    }
    Ok(Laplacian {
        matrix,
        lambda_max: lap.lambda_max,
        rescaled: true,
    })
}

/// The crate-wide deterministic RNG: same seed bit stream everywhere.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
