//! Contextual stochastic-block-style generator for camouflaged-anomaly
//! benchmarks: anomalies wire to normal nodes at the same rate normal nodes
//! wire to each other, and avoid each other.

use super::SparseGraph;
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsbmParams {
    pub num_nodes: usize,
    /// Fraction of anomalous nodes; the generated count is fixed at
    /// `round(num_nodes * anomaly_rate)`.
    pub anomaly_rate: f64,
    /// Edge probability for normal–normal and anomaly–normal pairs.
    pub p_in: f64,
    /// Edge probability for anomaly–anomaly pairs.
    pub p_out: f64,
    pub feature_dim: usize,
    /// L2 norm of the anomaly-class mean offset.
    pub signal_strength: f64,
    pub seed: u64,
}

/// Deterministic given the seed: label assignment, edge sampling and feature
/// sampling each consume the stream in a fixed order.
pub fn generate_csbm_anomaly_graph(params: &CsbmParams) -> Result<SparseGraph> {
    let n = params.num_nodes;
    if n == 0 {
        return Err(Error::InvalidInput("num_nodes must be positive".into()));
    }
    if !(params.anomaly_rate > 0.0 && params.anomaly_rate < 0.5) {
        return Err(Error::InvalidInput(format!(
            "anomaly_rate {} outside (0, 0.5)",
            params.anomaly_rate
        )));
    }
    for (name, p) in [("p_in", params.p_in), ("p_out", params.p_out)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidInput(format!("{name} {p} outside [0, 1]")));
        }
    }
    if params.p_out > params.p_in {
        return Err(Error::InvalidInput(format!(
            "p_out {} exceeds p_in {}",
            params.p_out, params.p_in
        )));
    }
    if params.feature_dim == 0 {
        return Err(Error::InvalidInput("feature_dim must be positive".into()));
    }
    let num_anomalies = (n as f64 * params.anomaly_rate).round() as usize;
    if num_anomalies == 0 {
        return Err(Error::InvalidInput(
            "anomaly_rate rounds to zero anomalies (no positive class)".into(),
        ));
    }

    let mut rng = super::seeded_rng(params.seed);

    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng);
    let mut labels = vec![0u8; n];
    for &i in ids.iter().take(num_anomalies) {
        labels[i] = 1;
    }

    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if labels[u] == 1 && labels[v] == 1 {
                params.p_out
            } else {
                params.p_in
            };
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }

    let f = params.feature_dim;
    let offset = params.signal_strength / (f as f64).sqrt();
    let mut features = Vec::with_capacity(n * f);
    for &label in &labels {
        let mean = if label == 1 { offset } else { 0.0 };
        for _ in 0..f {
            let noise: f64 = rng.sample(StandardNormal);
            features.push(mean + noise);
        }
    }

    SparseGraph::from_edges(n, &edges, features, f, Some(labels))
}
