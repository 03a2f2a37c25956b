//! The spectral-adaptive multi-head model: a hypernetwork maps the graph
//! fingerprint to per-head Chebyshev coefficients, each head filters node
//! features through the rescaled Laplacian, channel attention fuses the
//! heads, and a linear layer produces class logits. A teacher mirror of the
//! filter parameters evolves by exponential moving average and supplies
//! stable contrastive targets.

use crate::autodiff::{Tape, Var};
use crate::fingerprint::FINGERPRINT_DIM;
use crate::graph::Laplacian;
use crate::sparse::CsrMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::rc::Rc;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

/// Static architecture dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Number of filter heads H.
    pub heads: usize,
    /// Chebyshev order K (each head carries K+1 coefficients).
    pub order: usize,
    /// Hidden width d of head representations.
    pub hidden: usize,
    /// Input feature width F.
    pub feature_dim: usize,
}

impl ModelDims {
    pub fn coeffs_per_head(&self) -> usize {
        self.order + 1
    }

    pub fn coeff_total(&self) -> usize {
        self.heads * self.coeffs_per_head()
    }
}

/// Chebyshev coefficients that start every head as the same gentle low-pass
/// filter g(λ̃) = (1 − λ̃)/2.
pub fn low_pass_profile(coeffs: usize) -> Vec<f64> {
    let mut profile = vec![0.0; coeffs];
    profile[0] = 0.5;
    if coeffs > 1 {
        profile[1] = -0.5;
    }
    profile
}

/// All trainable tensors, in the canonical flatten order used by the
/// optimizer, the EMA mirror and checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub hyper_w1: Vec<f64>,
    pub hyper_b1: Vec<f64>,
    pub hyper_w2: Vec<f64>,
    pub hyper_b2: Vec<f64>,
    /// Per-head filter weights `F×d` and biases `d`.
    pub head_weights: Vec<Vec<f64>>,
    pub head_biases: Vec<Vec<f64>>,
    pub attn_w1: Vec<f64>,
    pub attn_b1: Vec<f64>,
    pub attn_w2: Vec<f64>,
    pub attn_b2: Vec<f64>,
    pub clf_w: Vec<f64>,
    pub clf_b: Vec<f64>,
    /// Per-head linear projections `d×d` feeding the decorrelation loss.
    pub decor_proj: Vec<Vec<f64>>,
}

fn uniform(rng: &mut ChaCha8Rng, len: usize, bound: f64) -> Vec<f64> {
    (0..len).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound).collect()
}

impl ModelParams {
    /// Fresh initialization. The hypernetwork output layer starts tiny with
    /// biases at the low-pass profile so every head begins as a conventional
    /// smoothing filter; regularizers then pull them apart. With
    /// `identical_heads` all per-head tensors (and per-head hypernetwork
    /// output blocks) are copies of head 0.
    pub fn init(dims: ModelDims, rng: &mut ChaCha8Rng, identical_heads: bool) -> Self {
        let d = dims.hidden;
        let f = dims.feature_dim;
        let cp = dims.coeffs_per_head();
        let fan_fp = 1.0 / (FINGERPRINT_DIM as f64).sqrt();
        let hyper_w1 = uniform(rng, FINGERPRINT_DIM * d, fan_fp);
        let hyper_b1 = vec![0.0; d];
        let mut hyper_w2: Vec<f64> = (0..d * dims.coeff_total())
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                z * 0.01
            })
            .collect();
        let mut hyper_b2 = Vec::with_capacity(dims.coeff_total());
        for _ in 0..dims.heads {
            hyper_b2.extend(low_pass_profile(cp));
        }
        let fan_f = 1.0 / (f as f64).sqrt();
        let mut head_weights: Vec<Vec<f64>> =
            (0..dims.heads).map(|_| uniform(rng, f * d, fan_f)).collect();
        let mut head_biases: Vec<Vec<f64>> =
            (0..dims.heads).map(|_| uniform(rng, d, fan_f)).collect();
        let fan_d = 1.0 / (d as f64).sqrt();
        let half = d / 2;
        let fan_half = 1.0 / (half as f64).sqrt();
        let attn_w1 = uniform(rng, d * half, fan_d);
        let attn_b1 = uniform(rng, half, fan_d);
        let attn_w2 = uniform(rng, half, fan_half);
        let attn_b2 = uniform(rng, 1, fan_half);
        let clf_w = uniform(rng, d * 2, fan_d);
        let clf_b = uniform(rng, 2, fan_d);
        let mut decor_proj: Vec<Vec<f64>> =
            (0..dims.heads).map(|_| uniform(rng, d * d, fan_d)).collect();

        if identical_heads {
            for h in 1..dims.heads {
                head_weights[h] = head_weights[0].clone();
                head_biases[h] = head_biases[0].clone();
                decor_proj[h] = decor_proj[0].clone();
            }
            // copy the per-head output block of the hypernetwork
            let total = dims.coeff_total();
            for row in hyper_w2.chunks_mut(total) {
                let head0: Vec<f64> = row[..cp].to_vec();
                for h in 1..dims.heads {
                    row[h * cp..(h + 1) * cp].copy_from_slice(&head0);
                }
            }
        }

        ModelParams {
            dims,
            hyper_w1,
            hyper_b1,
            hyper_w2,
            hyper_b2,
            head_weights,
            head_biases,
            attn_w1,
            attn_b1,
            attn_w2,
            attn_b2,
            clf_w,
            clf_b,
            decor_proj,
        }
    }

    /// Stable (name, shape) listing matching [`Self::tensors`].
    pub fn tensor_desc(&self) -> Vec<(String, [usize; 2])> {
        let ModelDims {
            heads,
            hidden: d,
            feature_dim: f,
            ..
        } = self.dims;
        let cp = self.dims.coeffs_per_head();
        let half = d / 2;
        let mut out = vec![
            ("hyper_w1".into(), [FINGERPRINT_DIM, d]),
            ("hyper_b1".into(), [1, d]),
            ("hyper_w2".into(), [d, heads * cp]),
            ("hyper_b2".into(), [1, heads * cp]),
        ];
        for h in 0..heads {
            out.push((format!("head_{h}_w"), [f, d]));
            out.push((format!("head_{h}_b"), [1, d]));
        }
        out.extend([
            ("attn_w1".to_string(), [d, half]),
            ("attn_b1".to_string(), [1, half]),
            ("attn_w2".to_string(), [half, 1]),
            ("attn_b2".to_string(), [1, 1]),
            ("clf_w".to_string(), [d, 2]),
            ("clf_b".to_string(), [1, 2]),
        ]);
        for h in 0..heads {
            out.push((format!("decor_proj_{h}"), [d, d]));
        }
        out
    }

    pub fn tensors(&self) -> Vec<&Vec<f64>> {
        let mut out = vec![&self.hyper_w1, &self.hyper_b1, &self.hyper_w2, &self.hyper_b2];
        for h in 0..self.dims.heads {
            out.push(&self.head_weights[h]);
            out.push(&self.head_biases[h]);
        }
        out.extend([
            &self.attn_w1,
            &self.attn_b1,
            &self.attn_w2,
            &self.attn_b2,
            &self.clf_w,
            &self.clf_b,
        ]);
        out.extend(self.decor_proj.iter());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = vec![
            &mut self.hyper_w1,
            &mut self.hyper_b1,
            &mut self.hyper_w2,
            &mut self.hyper_b2,
        ];
        for pair in self
            .head_weights
            .iter_mut()
            .zip(self.head_biases.iter_mut())
        {
            out.push(pair.0);
            out.push(pair.1);
        }
        out.extend([
            &mut self.attn_w1,
            &mut self.attn_b1,
            &mut self.attn_w2,
            &mut self.attn_b2,
            &mut self.clf_w,
            &mut self.clf_b,
        ]);
        out.extend(self.decor_proj.iter_mut());
        out
    }
}

/// Exponential-moving-average teacher mirror.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherState {
    pub params: ModelParams,
    pub momentum: f64,
}

impl TeacherState {
    /// Teacher starts as an exact copy of the student.
    pub fn new(student: &ModelParams, momentum: f64) -> Self {
        assert!((0.0..=1.0).contains(&momentum), "momentum outside [0, 1]");
        TeacherState {
            params: student.clone(),
            momentum,
        }
    }

    /// ξ_T ← m ξ_T + (1−m) ξ_S for every tensor. `m == 1` leaves the teacher
    /// bitwise untouched.
    pub fn ema_update(&mut self, student: &ModelParams) {
        let m = self.momentum;
        if m == 1.0 {
            return;
        }
        for (t, s) in self
            .params
            .tensors_mut()
            .into_iter()
            .zip(student.tensors())
        {
            for (tv, sv) in t.iter_mut().zip(s) {
                *tv = m * *tv + (1.0 - m) * sv;
            }
        }
    }
}

/// Cached `T_k(L̃)·X` terms; they depend only on the graph and features, so
/// one basis serves every head, epoch and the teacher.
#[derive(Debug, Clone)]
pub struct ChebBasis {
    pub num_nodes: usize,
    pub feature_dim: usize,
    /// K+1 matrices of shape `N×F`.
    pub terms: Vec<Vec<f64>>,
}

impl ChebBasis {
    /// T₀ = X, T₁ = L̃X, T_k = 2·L̃·T_{k−1} − T_{k−2}.
    pub fn new(rescaled: &Laplacian, features: &[f64], feature_dim: usize, order: usize) -> Self {
        assert!(rescaled.rescaled, "chebyshev basis needs the rescaled laplacian");
        let n = rescaled.matrix.n;
        debug_assert_eq!(features.len(), n * feature_dim);
        let mut terms = Vec::with_capacity(order + 1);
        terms.push(features.to_vec());
        if order >= 1 {
            let mut t1 = vec![0.0; n * feature_dim];
            rescaled.matrix.matmul_dense(features, feature_dim, &mut t1);
            terms.push(t1);
        }
        for k in 2..=order {
            let mut next = vec![0.0; n * feature_dim];
            rescaled
                .matrix
                .matmul_dense(&terms[k - 1], feature_dim, &mut next);
            for (nv, prev2) in next.iter_mut().zip(&terms[k - 2]) {
                *nv = 2.0 * *nv - prev2;
            }
            terms.push(next);
        }
        ChebBasis {
            num_nodes: n,
            feature_dim,
            terms,
        }
    }
}

/// Model parameters placed on a tape, in canonical order. Trainable for the
/// student, constant for the teacher and for evaluation passes.
#[derive(Debug, Clone)]
pub struct TapeParams {
    pub vars: Vec<Var>,
    dims: ModelDims,
}

impl TapeParams {
    pub fn insert(tape: &mut Tape, params: &ModelParams, trainable: bool) -> Self {
        let desc = params.tensor_desc();
        let vars = desc
            .iter()
            .zip(params.tensors())
            .map(|((_, shape), data)| {
                if trainable {
                    tape.leaf(*shape, data.clone())
                } else {
                    tape.constant(*shape, data.clone())
                }
            })
            .collect();
        TapeParams {
            vars,
            dims: params.dims,
        }
    }

    fn hyper(&self) -> (Var, Var, Var, Var) {
        (self.vars[0], self.vars[1], self.vars[2], self.vars[3])
    }

    fn head(&self, h: usize) -> (Var, Var) {
        (self.vars[4 + 2 * h], self.vars[5 + 2 * h])
    }

    fn attn(&self) -> (Var, Var, Var, Var) {
        let base = 4 + 2 * self.dims.heads;
        (
            self.vars[base],
            self.vars[base + 1],
            self.vars[base + 2],
            self.vars[base + 3],
        )
    }

    fn classifier(&self) -> (Var, Var) {
        let base = 8 + 2 * self.dims.heads;
        (self.vars[base], self.vars[base + 1])
    }

    pub fn decor_proj(&self, h: usize) -> Var {
        let base = 10 + 2 * self.dims.heads;
        self.vars[base + h]
    }
}

/// Everything one forward pass produces, kept on tape for the losses.
#[derive(Debug)]
pub struct ForwardOutput {
    /// H per-head representations, each `N×d`.
    pub head_reps: Vec<Var>,
    /// Fused representation `N×d`.
    pub fused: Var,
    /// Class logits `N×2`.
    pub logits: Var,
    /// Per-node head weights `N×H` (rows sum to 1).
    pub attention: Var,
    /// Generated coefficients `H×(K+1)`.
    pub coefficients: Var,
}

/// Two-layer hypernetwork: fingerprint (1×20) → H·(K+1) coefficients,
/// reshaped to one coefficient row per head.
pub fn generate_coefficients(tape: &mut Tape, params: &TapeParams, fingerprint: &[f64]) -> Var {
    assert_eq!(fingerprint.len(), FINGERPRINT_DIM);
    let dims = params.dims;
    let (w1, b1, w2, b2) = params.hyper();
    let input = tape.constant([1, FINGERPRINT_DIM], fingerprint.to_vec());
    let h = tape.matmul(input, w1);
    let h = tape.add_row_broadcast(h, b1);
    let h = tape.leaky_relu(h, DEFAULT_LEAKY_SLOPE);
    let out = tape.matmul(h, w2);
    let out = tape.add_row_broadcast(out, b2);
    tape.reshape(out, [dims.heads, dims.coeffs_per_head()])
}

/// Frozen coefficients for the fixed-filter ablation: every head at the
/// low-pass profile, off the gradient path.
pub fn fixed_coefficients(tape: &mut Tape, dims: ModelDims) -> Var {
    let mut data = Vec::with_capacity(dims.coeff_total());
    for _ in 0..dims.heads {
        data.extend(low_pass_profile(dims.coeffs_per_head()));
    }
    tape.constant([dims.heads, dims.coeffs_per_head()], data)
}

/// S = Σ_k θ_k T_k(L̃)·X for one head's coefficient row.
pub fn combine_basis(tape: &mut Tape, basis: &ChebBasis, coefficients: Var, head: usize) -> Var {
    let [heads, cp] = tape.shape(coefficients);
    assert!(head < heads);
    assert_eq!(cp, basis.terms.len(), "coefficient count vs basis order");
    let flat = tape.reshape(coefficients, [1, heads * cp]);
    let mut acc: Option<Var> = None;
    for (k, term) in basis.terms.iter().enumerate() {
        let theta = tape.slice_cols(flat, head * cp + k, head * cp + k + 1);
        let term_const = tape.constant([basis.num_nodes, basis.feature_dim], term.clone());
        let scaled = tape.mul_scalar_var(term_const, theta);
        acc = Some(match acc {
            None => scaled,
            Some(a) => tape.add(a, scaled),
        });
    }
    acc.unwrap()
}

/// One filter head: LeakyReLU(S·W + B).
pub fn chebyshev_filter(
    tape: &mut Tape,
    basis: &ChebBasis,
    coefficients: Var,
    head: usize,
    params: &TapeParams,
) -> Var {
    let combined = combine_basis(tape, basis, coefficients, head);
    let (w, b) = params.head(head);
    let s = tape.matmul(combined, w);
    let s = tape.add_row_broadcast(s, b);
    tape.leaky_relu(s, DEFAULT_LEAKY_SLOPE)
}

/// Channel attention over the head representations: per node, softmax over
/// shared-scorer logits, then the attention-weighted sum.
pub fn fuse_heads(tape: &mut Tape, params: &TapeParams, head_reps: &[Var]) -> (Var, Var) {
    let (w1, b1, w2, b2) = params.attn();
    let scores: Vec<Var> = head_reps
        .iter()
        .map(|&z| {
            let s = tape.matmul(z, w1);
            let s = tape.add_row_broadcast(s, b1);
            let s = tape.leaky_relu(s, DEFAULT_LEAKY_SLOPE);
            let s = tape.matmul(s, w2);
            tape.add_row_broadcast(s, b2)
        })
        .collect();
    let stacked = tape.concat(&scores, 1);
    let attention = tape.softmax_rows(stacked);
    let mut fused: Option<Var> = None;
    for (h, &z) in head_reps.iter().enumerate() {
        let alpha_col = tape.slice_cols(attention, h, h + 1);
        let weighted = tape.scale_rows(z, alpha_col);
        fused = Some(match fused {
            None => weighted,
            Some(f) => tape.add(f, weighted),
        });
    }
    (fused.unwrap(), attention)
}

/// Full forward pass. With `fixed_filter` the hypernetwork is bypassed and
/// coefficients stay frozen at the low-pass profile.
pub fn forward(
    tape: &mut Tape,
    params: &TapeParams,
    basis: &ChebBasis,
    fingerprint: &[f64],
    fixed_filter: bool,
) -> ForwardOutput {
    let dims = params.dims;
    let coefficients = if fixed_filter {
        fixed_coefficients(tape, dims)
    } else {
        generate_coefficients(tape, params, fingerprint)
    };
    let head_reps: Vec<Var> = (0..dims.heads)
        .map(|h| chebyshev_filter(tape, basis, coefficients, h, params))
        .collect();
    let (fused, attention) = fuse_heads(tape, params, &head_reps);
    let (clf_w, clf_b) = params.classifier();
    let logits = tape.matmul(fused, clf_w);
    let logits = tape.add_row_broadcast(logits, clf_b);
    ForwardOutput {
        head_reps,
        fused,
        logits,
        attention,
        coefficients,
    }
}

/// Values a gradient-free teacher pass produces.
#[derive(Debug, Clone)]
pub struct TeacherOutput {
    pub head_reps: Vec<Vec<f64>>,
    pub fused: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Runs the forward pass with teacher parameters on a throwaway tape; the
/// returned values carry no gradient history.
pub fn teacher_forward(
    teacher: &TeacherState,
    basis: &ChebBasis,
    fingerprint: &[f64],
    fixed_filter: bool,
) -> TeacherOutput {
    let mut tape = Tape::new();
    let tp = TapeParams::insert(&mut tape, &teacher.params, false);
    let out = forward(&mut tape, &tp, basis, fingerprint, fixed_filter);
    TeacherOutput {
        head_reps: out
            .head_reps
            .iter()
            .map(|&v| tape.value(v).to_vec())
            .collect(),
        fused: tape.value(out.fused).to_vec(),
        logits: tape.value(out.logits).to_vec(),
    }
}

/// Coefficient rows the (trained) hypernetwork emits for a fingerprint,
/// read off a throwaway tape. With `fixed_filter` every head reports the
/// frozen low-pass profile.
pub fn coefficients_for(params: &ModelParams, fingerprint: &[f64], fixed_filter: bool) -> Vec<Vec<f64>> {
    let dims = params.dims;
    if fixed_filter {
        return (0..dims.heads)
            .map(|_| low_pass_profile(dims.coeffs_per_head()))
            .collect();
    }
    let mut tape = Tape::new();
    let tp = TapeParams::insert(&mut tape, params, false);
    let coeffs = generate_coefficients(&mut tape, &tp, fingerprint);
    tape.value(coeffs)
        .chunks(dims.coeffs_per_head())
        .map(|row| row.to_vec())
        .collect()
}

/// Evaluation helper: forward pass without gradients, returning logits and
/// attention weights.
pub fn evaluate_forward(
    params: &ModelParams,
    basis: &ChebBasis,
    fingerprint: &[f64],
    fixed_filter: bool,
) -> (Vec<f64>, Vec<f64>) {
    let mut tape = Tape::new();
    let tp = TapeParams::insert(&mut tape, params, false);
    let out = forward(&mut tape, &tp, basis, fingerprint, fixed_filter);
    (
        tape.value(out.logits).to_vec(),
        tape.value(out.attention).to_vec(),
    )
}

/// Per-head representation values from a gradient-free forward pass.
pub fn head_representations(
    params: &ModelParams,
    basis: &ChebBasis,
    fingerprint: &[f64],
    fixed_filter: bool,
) -> Vec<Vec<f64>> {
    let mut tape = Tape::new();
    let tp = TapeParams::insert(&mut tape, params, false);
    let out = forward(&mut tape, &tp, basis, fingerprint, fixed_filter);
    out.head_reps
        .iter()
        .map(|&v| tape.value(v).to_vec())
        .collect()
}

/// Builds the rescaled Laplacian and Chebyshev basis for a graph.
pub fn basis_for_graph(
    graph: &crate::graph::SparseGraph,
    order: usize,
) -> crate::error::Result<(Laplacian, ChebBasis)> {
    let lap = crate::graph::build_laplacian(graph);
    let rescaled = crate::graph::rescale_laplacian(&lap)?;
    let basis = ChebBasis::new(&rescaled, graph.features(), graph.feature_dim(), order);
    Ok((lap, basis))
}

/// Identity CSR matrix (useful for filter tests).
pub fn identity_csr(n: usize) -> Rc<CsrMatrix> {
    Rc::new(CsrMatrix::from_triplets(
        n,
        (0..n).map(|i| (i, i, 1.0)).collect(),
    ))
}
