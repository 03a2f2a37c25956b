//! Post-hoc frequency analysis: per-node 2-hop subgraph fingerprinting,
//! coefficient generation with a trained checkpoint, conversion of Chebyshev
//! coefficients into frequency-response curves, and class-averaged response
//! comparisons.

use crate::error::{Error, Result};
use crate::fingerprint::{eigen_moments_exact, signal_fingerprint, SpectralFingerprint};
use crate::graph::{build_laplacian, Role, SparseGraph, SplitAssignment};
use crate::model::{
    basis_for_graph, coefficients_for, evaluate_forward, low_pass_profile,
};
use crate::trainer::ModelState;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

/// Evaluation grid: 201 evenly spaced points covering the full normalized
/// spectrum [0, 2].
pub const GRID_POINTS: usize = 201;

pub fn lambda_grid() -> Vec<f64> {
    (0..GRID_POINTS).map(|i| 2.0 * i as f64 / (GRID_POINTS - 1) as f64).collect()
}

/// A filter gain curve g(λ) over the λ grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseCurve {
    pub tag: String,
    pub lambda: Vec<f64>,
    pub gains: Vec<f64>,
}

impl ResponseCurve {
    /// Mean gain over grid points with λ in `[lo, hi]`.
    pub fn band_mean(&self, lo: f64, hi: f64) -> f64 {
        let mut acc = 0.0;
        let mut count = 0usize;
        for (l, g) in self.lambda.iter().zip(&self.gains) {
            if *l >= lo && *l <= hi {
                acc += g;
                count += 1;
            }
        }
        acc / count as f64
    }
}

/// g(λ) = Σ_k θ_k T_k(2λ/λ_max − 1), evaluated by the scalar Chebyshev
/// recursion. Grid points beyond λ_max extrapolate the polynomial.
pub fn response_from_coeffs(theta: &[f64], lambda_max: f64, tag: impl Into<String>) -> ResponseCurve {
    assert!(lambda_max > 0.0, "lambda_max must be positive");
    let lambda = lambda_grid();
    let gains = lambda
        .iter()
        .map(|&l| {
            let x = 2.0 * l / lambda_max - 1.0;
            let mut acc = theta[0];
            if theta.len() > 1 {
                let (mut prev2, mut prev1) = (1.0, x);
                acc += theta[1] * x;
                for &t in &theta[2..] {
                    let next = 2.0 * x * prev1 - prev2;
                    acc += t * next;
                    prev2 = prev1;
                    prev1 = next;
                }
            }
            acc
        })
        .collect();
    ResponseCurve {
        tag: tag.into(),
        lambda,
        gains,
    }
}

/// Everything the per-node analysis produces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeAnalysis {
    pub node: usize,
    pub subgraph_nodes: usize,
    /// λ_max of the 2-hop subgraph used for the curves.
    pub subgraph_lambda_max: f64,
    /// Set when the subgraph had no edges and λ_max fell back to 2.
    pub lambda_max_defaulted: bool,
    pub fingerprint: SpectralFingerprint,
    /// Subgraph-mean attention weight per head.
    pub attention_mean: Vec<f64>,
    pub head_curves: Vec<ResponseCurve>,
    pub weighted_curve: ResponseCurve,
}

/// Extracts the node's 2-hop subgraph, fingerprints it exactly, runs the
/// trained hypernetwork on that fingerprint, and emits one curve per head
/// plus the attention-weighted combination (weights averaged over subgraph
/// nodes from a forward pass on the subgraph).
pub fn analyze_node(state: &ModelState, graph: &SparseGraph, node: usize) -> Result<NodeAnalysis> {
    if state.projection.feature_dim != graph.feature_dim() {
        return Err(Error::Checkpoint(format!(
            "checkpoint projection expects {} features, graph has {}",
            state.projection.feature_dim,
            graph.feature_dim()
        )));
    }
    let (sub, _ids) = graph.k_hop_subgraph(node, 2)?;
    let lap = build_laplacian(&sub);
    let (lambda_max, defaulted) = if sub.num_edges() == 0 {
        (2.0, true)
    } else {
        (lap.lambda_max, false)
    };
    let f_struct = eigen_moments_exact(&lap, state.config.fingerprint.w)?;
    let f_signal = signal_fingerprint(&lap, sub.features(), &state.projection);
    let fingerprint = SpectralFingerprint { f_struct, f_signal };

    let coeffs = coefficients_for(
        &state.student,
        &fingerprint.combined(),
        state.config.fixed_filter,
    );
    let head_curves: Vec<ResponseCurve> = coeffs
        .iter()
        .enumerate()
        .map(|(h, theta)| response_from_coeffs(theta, lambda_max, format!("head_{}", h + 1)))
        .collect();

    let (_, basis) = basis_for_graph(&sub, state.config.order)?;
    let (_, attention) = evaluate_forward(
        &state.student,
        &basis,
        &fingerprint.combined(),
        state.config.fixed_filter,
    );
    let heads = coeffs.len();
    let mut attention_mean = vec![0.0; heads];
    for row in attention.chunks(heads) {
        for (m, a) in attention_mean.iter_mut().zip(row) {
            *m += a;
        }
    }
    attention_mean
        .iter_mut()
        .for_each(|m| *m /= sub.num_nodes() as f64);

    let mut weighted = vec![0.0; GRID_POINTS];
    for (curve, alpha) in head_curves.iter().zip(&attention_mean) {
        for (w, g) in weighted.iter_mut().zip(&curve.gains) {
            *w += alpha * g;
        }
    }
    let weighted_curve = ResponseCurve {
        tag: "weighted".into(),
        lambda: lambda_grid(),
        gains: weighted,
    };

    Ok(NodeAnalysis {
        node,
        subgraph_nodes: sub.num_nodes(),
        subgraph_lambda_max: lambda_max,
        lambda_max_defaulted: defaulted,
        fingerprint,
        attention_mean,
        head_curves,
        weighted_curve,
    })
}

/// Per-class mean and standard deviation of weighted response curves over
/// sampled test nodes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassAverageReport {
    pub lambda: Vec<f64>,
    pub normal_mean: Vec<f64>,
    pub normal_std: Vec<f64>,
    pub anomaly_mean: Vec<f64>,
    pub anomaly_std: Vec<f64>,
    pub normal_nodes: Vec<usize>,
    pub anomaly_nodes: Vec<usize>,
}

/// Samples up to `samples_per_class` nodes per class from the test split,
/// analyzes each, and averages the weighted curves per class. Deterministic
/// given the seed.
pub fn class_average_responses(
    state: &ModelState,
    graph: &SparseGraph,
    splits: &SplitAssignment,
    samples_per_class: usize,
    seed: u64,
) -> Result<ClassAverageReport> {
    if samples_per_class == 0 {
        return Err(Error::InvalidInput("samples_per_class must be positive".into()));
    }
    let labels = graph
        .labels()
        .ok_or_else(|| Error::InvalidInput("class averages require labels".into()))?;
    let mut rng = crate::graph::seeded_rng(seed);
    let sample_class = |class: u8, rng: &mut rand_chacha::ChaCha8Rng| -> Result<Vec<usize>> {
        let mut candidates: Vec<usize> = splits
            .nodes_with(Role::Test)
            .into_iter()
            .filter(|&i| labels[i] == class)
            .collect();
        if candidates.is_empty() {
            return Err(Error::InvalidInput(format!(
                "test split has no nodes of class {class}"
            )));
        }
        candidates.shuffle(rng);
        candidates.truncate(samples_per_class);
        candidates.sort_unstable();
        Ok(candidates)
    };
    let normal_nodes = sample_class(0, &mut rng)?;
    let anomaly_nodes = sample_class(1, &mut rng)?;

    let stats = |nodes: &[usize]| -> Result<(Vec<f64>, Vec<f64>)> {
        let curves: Vec<Vec<f64>> = nodes
            .iter()
            .map(|&n| analyze_node(state, graph, n).map(|a| a.weighted_curve.gains))
            .collect::<Result<_>>()?;
        let count = curves.len() as f64;
        let mut mean = vec![0.0; GRID_POINTS];
        for c in &curves {
            for (m, g) in mean.iter_mut().zip(c) {
                *m += g;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut std = vec![0.0; GRID_POINTS];
        for c in &curves {
            for ((s, g), m) in std.iter_mut().zip(c).zip(&mean) {
                *s += (g - m) * (g - m);
            }
        }
        std.iter_mut().for_each(|s| *s = (*s / count).sqrt());
        Ok((mean, std))
    };
    let (normal_mean, normal_std) = stats(&normal_nodes)?;
    let (anomaly_mean, anomaly_std) = stats(&anomaly_nodes)?;

    Ok(ClassAverageReport {
        lambda: lambda_grid(),
        normal_mean,
        normal_std,
        anomaly_mean,
        anomaly_std,
        normal_nodes,
        anomaly_nodes,
    })
}

/// CSV with header `lambda,head_1,…,head_H,weighted`, 201 rows.
pub fn node_analysis_csv(analysis: &NodeAnalysis) -> String {
    let mut out = String::from("lambda");
    for h in 1..=analysis.head_curves.len() {
        out.push_str(&format!(",head_{h}"));
    }
    out.push_str(",weighted\n");
    for (i, l) in analysis.weighted_curve.lambda.iter().enumerate() {
        out.push_str(&format!("{l}"));
        for curve in &analysis.head_curves {
            out.push_str(&format!(",{}", curve.gains[i]));
        }
        out.push_str(&format!(",{}\n", analysis.weighted_curve.gains[i]));
    }
    out
}

/// CSV with header `lambda,normal_mean,normal_std,anomaly_mean,anomaly_std`.
pub fn class_average_csv(report: &ClassAverageReport) -> String {
    let mut out = String::from("lambda,normal_mean,normal_std,anomaly_mean,anomaly_std\n");
    for i in 0..report.lambda.len() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            report.lambda[i],
            report.normal_mean[i],
            report.normal_std[i],
            report.anomaly_mean[i],
            report.anomaly_std[i]
        ));
    }
    out
}

/// Response of the fixed low-pass profile (the non-adaptive control).
pub fn low_pass_reference(order: usize, lambda_max: f64) -> ResponseCurve {
    response_from_coeffs(&low_pass_profile(order + 1), lambda_max, "low_pass")
}
