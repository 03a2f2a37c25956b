//! 20-dimensional spectral fingerprints: four statistical moments of the
//! extremal Laplacian eigenvalues plus sixteen Rayleigh-quotient smoothness
//! features of randomly projected node features.

use crate::dense;
use crate::error::{Error, Result};
use crate::graph::{build_laplacian, Laplacian, SparseGraph};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub const STRUCT_DIM: usize = 4;
pub const SIGNAL_DIM: usize = 16;
pub const FINGERPRINT_DIM: usize = STRUCT_DIM + SIGNAL_DIM;

/// Node count above which exact eigendecomposition is refused and the
/// stochastic estimator takes over.
pub const DENSE_ORACLE_LIMIT: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FingerprintMode {
    Exact,
    Stochastic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralFingerprint {
    /// [mean, population variance, skewness, excess kurtosis] of the selected
    /// extremal eigenvalues.
    pub f_struct: [f64; STRUCT_DIM],
    /// Per-projected-column Rayleigh quotients scaled into [0, 1].
    pub f_signal: [f64; SIGNAL_DIM],
}

impl SpectralFingerprint {
    pub fn combined(&self) -> [f64; FINGERPRINT_DIM] {
        let mut out = [0.0; FINGERPRINT_DIM];
        out[..STRUCT_DIM].copy_from_slice(&self.f_struct);
        out[STRUCT_DIM..].copy_from_slice(&self.f_signal);
        out
    }
}

/// Frozen random projection used for the signal fingerprint. Entries are
/// i.i.d. Gaussian with variance 1/feature_dim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionMatrix {
    pub feature_dim: usize,
    pub seed: u64,
    /// Row-major `feature_dim × SIGNAL_DIM`.
    pub data: Vec<f64>,
}

pub fn make_projection(feature_dim: usize, seed: u64) -> ProjectionMatrix {
    assert!(feature_dim >= 1, "feature_dim must be positive");
    let mut rng = crate::graph::seeded_rng(seed);
    let scale = 1.0 / (feature_dim as f64).sqrt();
    let data = (0..feature_dim * SIGNAL_DIM)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            z * scale
        })
        .collect();
    ProjectionMatrix {
        feature_dim,
        seed,
        data,
    }
}

/// [mean, population variance, skewness, excess kurtosis] of a multiset.
/// Zero-variance inputs report skew = 0 and excess kurtosis = 0.
pub fn moments(values: &[f64]) -> [f64; 4] {
    assert!(!values.is_empty());
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if m2 < 1e-12 {
        return [mean, m2, 0.0, 0.0];
    }
    let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    [mean, m2, m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0]
}

/// Selects the `w` largest and `w` smallest of a sorted spectrum. When the
/// two windows would overlap (2w > N) every eigenvalue is used once.
fn select_extremal(sorted: &[f64], w: usize) -> Vec<f64> {
    let n = sorted.len();
    if 2 * w > n {
        return sorted.to_vec();
    }
    let mut out = Vec::with_capacity(2 * w);
    out.extend_from_slice(&sorted[..w]);
    out.extend_from_slice(&sorted[n - w..]);
    out
}

/// Exact extremal-eigenvalue moments from a dense eigendecomposition.
pub fn eigen_moments_exact(lap: &Laplacian, w: usize) -> Result<[f64; 4]> {
    assert!(w >= 1, "w must be positive");
    let n = lap.matrix.n;
    if n > DENSE_ORACLE_LIMIT {
        return Err(Error::InvalidInput(format!(
            "dense moments limited to {DENSE_ORACLE_LIMIT} nodes, got {n}"
        )));
    }
    let evs = dense::symmetric_eigenvalues(&lap.matrix.to_dense(), n);
    Ok(moments(&select_extremal(&evs, w)))
}

fn rademacher(rng: &mut rand_chacha::ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect()
}

fn orthogonalize_against(w: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let c = dense::dot(w, b);
            for (wi, bi) in w.iter_mut().zip(b) {
                *wi -= c * bi;
            }
        }
    }
}

/// Lanczos Ritz values from one probe, with full reorthogonalization.
/// A breakdown (β ≈ 0) means an invariant subspace was exhausted; the
/// recursion then restarts in the orthogonal complement so every probe fills
/// its full `min(steps, N)` budget of Ritz values.
fn lanczos_ritz_values(
    lap: &Laplacian,
    rng: &mut rand_chacha::ChaCha8Rng,
    steps: usize,
) -> Vec<f64> {
    let n = lap.matrix.n;
    let budget = steps.min(n);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(budget);
    let mut ritz = Vec::with_capacity(budget);
    let mut start = rademacher(rng, n);

    'blocks: while basis.len() < budget {
        orthogonalize_against(&mut start, &basis);
        let mut norm0 = dense::norm(&start);
        let mut retries = 0;
        while norm0 < 1e-10 {
            retries += 1;
            if retries > 8 {
                break 'blocks; // complement not reachable from random draws
            }
            start = rademacher(rng, n);
            orthogonalize_against(&mut start, &basis);
            norm0 = dense::norm(&start);
        }
        let mut v: Vec<f64> = start.iter().map(|x| x / norm0).collect();
        let mut w = vec![0.0; n];
        let mut alphas = Vec::new();
        let mut betas: Vec<f64> = Vec::new();
        loop {
            lap.matrix.matvec(&v, &mut w);
            let alpha = dense::dot(&v, &w);
            alphas.push(alpha);
            basis.push(v.clone());
            orthogonalize_against(&mut w, &basis);
            let beta = dense::norm(&w);
            if basis.len() == budget || beta < 1e-10 {
                if beta < 1e-10 && basis.len() < budget {
                    log::debug!("lanczos breakdown after {} vectors; restarting", basis.len());
                }
                let m = alphas.len();
                let mut tri = vec![0.0; m * m];
                for i in 0..m {
                    tri[i * m + i] = alphas[i];
                    if i + 1 < m {
                        tri[i * m + i + 1] = betas[i];
                        tri[(i + 1) * m + i] = betas[i];
                    }
                }
                ritz.extend(dense::symmetric_eigenvalues(&tri, m));
                if basis.len() == budget {
                    break 'blocks;
                }
                start = rademacher(rng, n);
                break;
            }
            betas.push(beta);
            v = w.iter().map(|x| x / beta).collect();
        }
    }
    ritz.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ritz
}

/// Stochastic extremal-eigenvalue moments: Rademacher-start Lanczos per
/// probe, extremal Ritz values averaged elementwise across probes, then the
/// same four moments. Deterministic given the seed.
pub fn eigen_moments_stochastic(
    lap: &Laplacian,
    w: usize,
    num_probes: usize,
    lanczos_steps: usize,
    seed: u64,
) -> [f64; 4] {
    assert!(num_probes >= 1, "need at least one probe");
    assert!(
        lanczos_steps >= 2 * w,
        "lanczos_steps {lanczos_steps} < 2w = {}",
        2 * w
    );
    let n = lap.matrix.n;
    if n == 1 {
        // single Ritz value equals the sole eigenvalue
        let only = lap.matrix.to_dense()[0];
        return moments(&[only]);
    }
    let mut rng = crate::graph::seeded_rng(seed);
    let mut per_probe: Vec<Vec<f64>> = Vec::with_capacity(num_probes);
    for _ in 0..num_probes {
        let ritz = lanczos_ritz_values(lap, &mut rng, lanczos_steps);
        per_probe.push(select_extremal(&ritz, w));
    }
    // probes can return fewer Ritz values after a breakdown; reconcile to the
    // shortest selection by re-selecting a symmetric window
    let min_len = per_probe.iter().map(|p| p.len()).min().unwrap();
    if per_probe.iter().any(|p| p.len() != min_len) {
        let lo = min_len / 2 + min_len % 2;
        for sel in per_probe.iter_mut() {
            if sel.len() > min_len {
                let hi = min_len - lo;
                let mut shrunk = sel[..lo].to_vec();
                shrunk.extend_from_slice(&sel[sel.len() - hi..]);
                *sel = shrunk;
            }
        }
    }
    let mut averaged = vec![0.0; min_len];
    for sel in &per_probe {
        for (a, v) in averaged.iter_mut().zip(sel) {
            *a += v;
        }
    }
    for a in averaged.iter_mut() {
        *a /= num_probes as f64;
    }
    moments(&averaged)
}

/// Rayleigh quotient xᵀLx / xᵀx on the unrescaled Laplacian; 0 for
/// near-zero vectors.
pub fn rayleigh_quotient(lap: &Laplacian, x: &[f64]) -> f64 {
    debug_assert!(!lap.rescaled, "rayleigh quotient uses the unrescaled L");
    let denom = dense::dot(x, x);
    if denom < 1e-12 {
        return 0.0;
    }
    let mut lx = vec![0.0; x.len()];
    lap.matrix.matvec(x, &mut lx);
    dense::dot(x, &lx) / denom
}

/// Sixteen Rayleigh quotients of the projected feature columns, each divided
/// by 2 (the universal upper bound for normalized Laplacians).
pub fn signal_fingerprint(
    lap: &Laplacian,
    features: &[f64],
    proj: &ProjectionMatrix,
) -> [f64; SIGNAL_DIM] {
    let n = lap.matrix.n;
    debug_assert_eq!(features.len(), n * proj.feature_dim);
    let projected = dense::matmul(features, &proj.data, n, proj.feature_dim, SIGNAL_DIM);
    let mut out = [0.0; SIGNAL_DIM];
    let mut column = vec![0.0; n];
    for (j, slot) in out.iter_mut().enumerate() {
        for i in 0..n {
            column[i] = projected[i * SIGNAL_DIM + j];
        }
        *slot = rayleigh_quotient(lap, &column) / 2.0;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FingerprintConfig {
    pub mode: FingerprintMode,
    /// Extremal window: the w largest and w smallest eigenvalues.
    pub w: usize,
    pub num_probes: usize,
    pub lanczos_steps: usize,
}

impl Default for FingerprintConfig {
    fn default() -> Self {
        FingerprintConfig {
            mode: FingerprintMode::Exact,
            w: 6,
            num_probes: 64,
            lanczos_steps: 40,
        }
    }
}

/// Assembles the full 20-dimensional fingerprint for a graph. Graphs larger
/// than the dense-oracle limit are forced onto the stochastic path.
pub fn compute_fingerprint(
    graph: &SparseGraph,
    proj: &ProjectionMatrix,
    config: &FingerprintConfig,
    seed: u64,
) -> Result<SpectralFingerprint> {
    if graph.num_nodes() == 0 {
        return Err(Error::InvalidInput("cannot fingerprint an empty graph".into()));
    }
    let lap = build_laplacian(graph);
    compute_fingerprint_with_laplacian(&lap, graph.features(), proj, config, seed)
}

/// Same as [`compute_fingerprint`] for callers that already built `L`.
pub fn compute_fingerprint_with_laplacian(
    lap: &Laplacian,
    features: &[f64],
    proj: &ProjectionMatrix,
    config: &FingerprintConfig,
    seed: u64,
) -> Result<SpectralFingerprint> {
    let n = lap.matrix.n;
    let mode = if n > DENSE_ORACLE_LIMIT {
        if config.mode == FingerprintMode::Exact {
            log::info!("graph has {n} nodes; forcing stochastic moment estimation");
        }
        FingerprintMode::Stochastic
    } else {
        config.mode
    };
    let f_struct = match mode {
        FingerprintMode::Exact => eigen_moments_exact(lap, config.w)?,
        FingerprintMode::Stochastic => eigen_moments_stochastic(
            lap,
            config.w,
            config.num_probes,
            config.lanczos_steps,
            seed,
        ),
    };
    let f_signal = signal_fingerprint(lap, features, proj);
    let fp = SpectralFingerprint { f_struct, f_signal };
    debug_assert!(fp.combined().iter().all(|v| v.is_finite()));
    Ok(fp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_csbm_anomaly_graph, CsbmParams, SparseGraph};

    fn k2(features: Vec<f64>, dim: usize) -> SparseGraph {
        SparseGraph::from_edges(2, &[(0, 1)], features, dim, None).unwrap()
    }

    /// Brute-force moment oracle, written independently of `moments`.
    fn moments_oracle(values: &[f64]) -> [f64; 4] {
        let n = values.len() as f64;
        let mean: f64 = values.iter().copied().sum::<f64>() / n;
        let central = |p: i32| values.iter().map(|v| (v - mean).powi(p)).sum::<f64>() / n;
        let var = central(2);
        if var < 1e-12 {
            return [mean, var, 0.0, 0.0];
        }
        let sd = var.sqrt();
        [mean, var, central(3) / sd.powi(3), central(4) / sd.powi(4) - 3.0]
    }

    #[test]
    fn moments_match_brute_force_oracle() {
        let mut rng = crate::graph::seeded_rng(42);
        for trial in 0..50 {
            let len = 2 + trial % 13;
            let vals: Vec<f64> = (0..len).map(|_| rng.random::<f64>() * 2.0).collect();
            let got = moments(&vals);
            let want = moments_oracle(&vals);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12, "{got:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn k2_exact_moments() {
        let lap = crate::graph::build_laplacian(&k2(vec![0.0, 0.0], 1));
        let got = eigen_moments_exact(&lap, 6).unwrap();
        let want = [1.0, 1.0, 0.0, -2.0];
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9, "{got:?}");
        }
    }

    #[test]
    fn degenerate_spectra_have_zero_higher_moments() {
        // edgeless graph: identity rows, all eigenvalues 1
        let g = SparseGraph::from_edges(5, &[], vec![0.0; 5], 1, None).unwrap();
        let lap = crate::graph::build_laplacian(&g);
        let got = eigen_moments_exact(&lap, 6).unwrap();
        assert_eq!(got, [1.0, 0.0, 0.0, 0.0]);
        // single node
        let g1 = SparseGraph::from_edges(1, &[], vec![0.0], 1, None).unwrap();
        let lap1 = crate::graph::build_laplacian(&g1);
        assert_eq!(eigen_moments_exact(&lap1, 6).unwrap(), [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn stochastic_k2_matches_exact() {
        let lap = crate::graph::build_laplacian(&k2(vec![0.0, 0.0], 1));
        let got = eigen_moments_stochastic(&lap, 6, 8, 12, 3);
        let want = [1.0, 1.0, 0.0, -2.0];
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9, "{got:?}");
        }
    }

    #[test]
    fn stochastic_matches_exact_on_small_graphs() {
        for seed in 0..5u64 {
            let g = generate_csbm_anomaly_graph(&CsbmParams {
                num_nodes: 40 + 5 * seed as usize,
                anomaly_rate: 0.15,
                p_in: 0.15,
                p_out: 0.05,
                feature_dim: 3,
                signal_strength: 1.0,
                seed,
            })
            .unwrap();
            let lap = crate::graph::build_laplacian(&g);
            let exact = eigen_moments_exact(&lap, 6).unwrap();
            let stochastic = eigen_moments_stochastic(&lap, 6, 64, 40, seed + 100);
            for (e, s) in exact.iter().zip(&stochastic) {
                let tol = if e.abs() < 0.1 { 0.02 } else { 0.05 * e.abs() };
                assert!((e - s).abs() <= tol, "exact {exact:?} vs stochastic {stochastic:?}");
            }
        }
    }

    #[test]
    fn stochastic_is_deterministic() {
        let g = generate_csbm_anomaly_graph(&CsbmParams {
            num_nodes: 64,
            anomaly_rate: 0.1,
            p_in: 0.1,
            p_out: 0.02,
            feature_dim: 3,
            signal_strength: 1.0,
            seed: 1,
        })
        .unwrap();
        let lap = crate::graph::build_laplacian(&g);
        let a = eigen_moments_stochastic(&lap, 6, 16, 20, 7);
        let b = eigen_moments_stochastic(&lap, 6, 16, 20, 7);
        assert_eq!(a, b);
    }

    #[test]
    fn projection_is_deterministic_and_shaped() {
        let a = make_projection(10, 4);
        let b = make_projection(10, 4);
        assert_eq!(a, b);
        assert_eq!(a.data.len(), 10 * SIGNAL_DIM);
        assert_ne!(a, make_projection(10, 5));
    }

    #[test]
    fn rayleigh_closed_forms() {
        let lap = crate::graph::build_laplacian(&k2(vec![0.0, 0.0], 1));
        assert_eq!(rayleigh_quotient(&lap, &[1.0, 1.0]), 0.0);
        assert!((rayleigh_quotient(&lap, &[1.0, -1.0]) - 2.0).abs() < 1e-12);
        assert_eq!(rayleigh_quotient(&lap, &[0.0, 0.0]), 0.0);
    }

    #[test]
    fn rayleigh_bound_on_random_vectors() {
        let g = generate_csbm_anomaly_graph(&CsbmParams {
            num_nodes: 100,
            anomaly_rate: 0.1,
            p_in: 0.08,
            p_out: 0.02,
            feature_dim: 2,
            signal_strength: 1.0,
            seed: 12,
        })
        .unwrap();
        let lap = crate::graph::build_laplacian(&g);
        let dense_max = *crate::dense::symmetric_eigenvalues(
            &lap.matrix.to_dense(),
            g.num_nodes(),
        )
        .last()
        .unwrap();
        let mut rng = crate::graph::seeded_rng(99);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..g.num_nodes()).map(|_| rng.random::<f64>() - 0.5).collect();
            let rq = rayleigh_quotient(&lap, &x);
            assert!(rq >= -1e-9);
            assert!(rq <= dense_max + 1e-9);
        }
    }

    #[test]
    fn signal_fingerprint_cases() {
        // all-zero features → all entries 0
        let g = k2(vec![0.0, 0.0], 1);
        let lap = crate::graph::build_laplacian(&g);
        let proj = make_projection(1, 0);
        assert_eq!(signal_fingerprint(&lap, g.features(), &proj), [0.0; SIGNAL_DIM]);
        // identical rows on K2 → constant columns → 0
        let g = k2(vec![3.0, 3.0], 1);
        let fp = signal_fingerprint(&lap, g.features(), &proj);
        for v in fp {
            assert!(v.abs() < 1e-12);
        }
        // oscillating signal with all-ones projection → 2/2 = 1
        let ones = ProjectionMatrix {
            feature_dim: 1,
            seed: 0,
            data: vec![1.0; SIGNAL_DIM],
        };
        let g = k2(vec![1.0, -1.0], 1);
        let fp = signal_fingerprint(&lap, g.features(), &ones);
        for v in fp {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fingerprint_composition_and_determinism() {
        let g = k2(vec![0.0, 0.0], 1);
        let proj = make_projection(1, 0);
        let cfg = FingerprintConfig::default();
        let fp = compute_fingerprint(&g, &proj, &cfg, 0).unwrap();
        let combined = fp.combined();
        assert_eq!(combined.len(), FINGERPRINT_DIM);
        let want = [1.0, 1.0, 0.0, -2.0];
        for (g, w) in combined[..4].iter().zip(&want) {
            assert!((g - w).abs() < 1e-9);
        }
        assert!(combined[4..].iter().all(|&v| v == 0.0));

        let g2 = generate_csbm_anomaly_graph(&CsbmParams {
            num_nodes: 50,
            anomaly_rate: 0.1,
            p_in: 0.1,
            p_out: 0.02,
            feature_dim: 6,
            signal_strength: 1.0,
            seed: 2,
        })
        .unwrap();
        let proj = make_projection(6, 1);
        let stoch = FingerprintConfig {
            mode: FingerprintMode::Stochastic,
            ..FingerprintConfig::default()
        };
        let a = compute_fingerprint(&g2, &proj, &stoch, 5).unwrap();
        let b = compute_fingerprint(&g2, &proj, &stoch, 5).unwrap();
        assert_eq!(a, b);
        // exact and stochastic agree on f_signal exactly, f_struct within 5%
        let exact = compute_fingerprint(&g2, &proj, &FingerprintConfig::default(), 5).unwrap();
        assert_eq!(a.f_signal, exact.f_signal);
        for (s, e) in a.f_struct.iter().zip(&exact.f_struct) {
            let tol = if e.abs() < 0.1 { 0.02 } else { 0.05 * e.abs() };
            assert!((s - e).abs() <= tol);
        }
        // f_signal entries bounded in [0, 1]
        for v in a.f_signal {
            assert!((0.0..=1.0).contains(&v));
        }
    }
}
