//! Training objectives: class-weighted cross-entropy, the teacher-student
//! contrastive term that pins each student head to its own teacher head, the
//! cross-correlation diversity term that pushes the concatenated head
//! features toward an identity correlation matrix, and the warm-up-scheduled
//! composite.

use crate::autodiff::{Tape, Var};
use crate::model::TapeParams;
use serde::{Deserialize, Serialize};

pub const STANDARDIZE_EPS: f64 = 1e-5;

/// Scalar components of one training step's objective.
/// `total = class + λc_eff·contrast + λd·diversity` holds to 1e−10.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub class_loss: f64,
    pub contrast_loss: f64,
    pub diversity_loss: f64,
    pub total: f64,
    pub lambda_contrast_effective: f64,
}

/// Inverse train-class-frequency weights normalized to mean 1.
pub fn class_weights(labels: &[u8], train_mask: &[bool]) -> [f64; 2] {
    let mut counts = [0usize; 2];
    for (l, &m) in labels.iter().zip(train_mask) {
        if m {
            counts[*l as usize] += 1;
        }
    }
    if counts[0] == 0 || counts[1] == 0 {
        return [1.0, 1.0];
    }
    let raw = [1.0 / counts[0] as f64, 1.0 / counts[1] as f64];
    let scale = 2.0 / (raw[0] + raw[1]);
    [raw[0] * scale, raw[1] * scale]
}

/// Mean over masked nodes of w_y · (−log softmax(logits)_y).
pub fn weighted_cross_entropy(
    tape: &mut Tape,
    logits: Var,
    labels: &[u8],
    weights: [f64; 2],
    mask: &[bool],
) -> Var {
    let [n, c] = tape.shape(logits);
    assert_eq!(c, 2, "weighted_cross_entropy expects two-class logits");
    assert_eq!(labels.len(), n);
    assert_eq!(mask.len(), n);
    let count = mask.iter().filter(|&&m| m).count();
    assert!(count > 0, "weighted_cross_entropy: empty mask");
    let mut pick = vec![0.0; n * 2];
    for i in 0..n {
        if mask[i] {
            let y = labels[i] as usize;
            pick[i * 2 + y] = weights[y] / count as f64;
        }
    }
    let probs = tape.softmax_rows(logits);
    let logp = tape.log(probs);
    let pick = tape.constant([n, 2], pick);
    let weighted = tape.mul(logp, pick);
    let total = tape.sum(weighted, None);
    tape.scalar_mul(total, -1.0)
}

/// Contrastive alignment of each student head with its own teacher head.
///
/// Per node, the H×H cosine-similarity matrix between student and teacher
/// heads (over τ) is treated as H softmax rows; row h must select column h.
/// The per-node sum over heads is averaged over nodes. With `pooled`, node
/// representations are mean-pooled per head first and a single H×H contrast
/// is evaluated.
pub fn tsc_loss(
    tape: &mut Tape,
    student_heads: &[Var],
    teacher_heads: &[Vec<f64>],
    tau: f64,
    pooled: bool,
) -> Var {
    assert!(tau > 0.0, "temperature must be positive");
    let heads = student_heads.len();
    assert_eq!(heads, teacher_heads.len());
    let [n, d] = tape.shape(student_heads[0]);

    // normalized teacher rows are plain constants
    let teacher_norm: Vec<Var> = teacher_heads
        .iter()
        .map(|raw| {
            let (rows, width) = if pooled { (1, d) } else { (n, d) };
            let pooled_data;
            let src: &[f64] = if pooled {
                pooled_data = mean_rows(raw, n, d);
                &pooled_data
            } else {
                raw
            };
            let mut data = Vec::with_capacity(rows * width);
            for row in src.chunks(width) {
                let norm = crate::dense::norm(row);
                if norm < 1e-12 {
                    data.extend(std::iter::repeat_n(0.0, width));
                } else {
                    data.extend(row.iter().map(|v| v / norm));
                }
            }
            tape.constant([rows, width], data)
        })
        .collect();

    let student_norm: Vec<Var> = student_heads
        .iter()
        .map(|&z| {
            let z = if pooled { tape.mean(z, Some(0)) } else { z };
            tape.l2_normalize_rows(z)
        })
        .collect();

    let mut total: Option<Var> = None;
    for (i, &si) in student_norm.iter().enumerate() {
        let cols: Vec<Var> = teacher_norm
            .iter()
            .map(|&tj| {
                let prod = tape.mul(si, tj);
                tape.sum(prod, Some(1))
            })
            .collect();
        let sims = tape.concat(&cols, 1);
        let scaled = tape.scalar_mul(sims, 1.0 / tau);
        let probs = tape.softmax_rows(scaled);
        let rows = tape.shape(probs)[0];
        let mut onehot = vec![0.0; rows * heads];
        for r in 0..rows {
            onehot[r * heads + i] = 1.0;
        }
        let mask = tape.constant([rows, heads], onehot);
        let picked = tape.mul(probs, mask);
        let picked = tape.sum(picked, Some(1));
        let logp = tape.log(picked);
        let mean = tape.mean(logp, None);
        let term = tape.scalar_mul(mean, -1.0);
        total = Some(match total {
            None => term,
            Some(t) => tape.add(t, term),
        });
    }
    total.expect("tsc_loss requires at least one head")
}

fn mean_rows(data: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for row in data.chunks(d) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= n as f64);
    out
}

/// ‖C − I‖²_F for a given correlation matrix on tape.
pub fn correlation_identity_gap(tape: &mut Tape, c: Var) -> Var {
    let [rows, cols] = tape.shape(c);
    assert_eq!(rows, cols, "correlation matrix must be square");
    let mut eye = vec![0.0; rows * cols];
    for i in 0..rows {
        eye[i * cols + i] = 1.0;
    }
    let eye = tape.constant([rows, cols], eye);
    let diff = tape.sub(c, eye);
    let sq = tape.mul(diff, diff);
    tape.sum(sq, None)
}

/// Diversity loss: project each head (d→d), column-standardize over the node
/// batch, concatenate along features, and penalize the distance of the
/// cross-correlation matrix C = Z_bᵀZ_b/N from the identity.
pub fn btd_loss(tape: &mut Tape, student_heads: &[Var], params: &TapeParams) -> Var {
    let [n, _] = tape.shape(student_heads[0]);
    assert!(n >= 2, "btd_loss needs at least two nodes");
    let standardized: Vec<Var> = student_heads
        .iter()
        .enumerate()
        .map(|(h, &z)| {
            let proj = params.decor_proj(h);
            let p = tape.matmul(z, proj);
            tape.standardize_cols(p, STANDARDIZE_EPS)
        })
        .collect();
    let batch = tape.concat(&standardized, 1);
    let gram = tape.gram(batch);
    let c = tape.scalar_mul(gram, 1.0 / n as f64);
    correlation_identity_gap(tape, c)
}

/// The same correlation probe off-tape: projects, standardizes and
/// concatenates the head representations, then reports the mean |C_ij| over
/// entries whose row and column live in different head blocks.
pub fn between_head_correlation(
    head_reps: &[Vec<f64>],
    n: usize,
    d: usize,
    projections: &[Vec<f64>],
) -> f64 {
    let heads = head_reps.len();
    let total = heads * d;
    let mut batch = vec![0.0; n * total];
    for (h, (rep, proj)) in head_reps.iter().zip(projections).enumerate() {
        let projected = crate::dense::matmul(rep, proj, n, d, d);
        // column standardization
        for j in 0..d {
            let mut mean = 0.0;
            for i in 0..n {
                mean += projected[i * d + j];
            }
            mean /= n as f64;
            let mut var = 0.0;
            for i in 0..n {
                let c = projected[i * d + j] - mean;
                var += c * c;
            }
            var /= n as f64;
            let scale = var.sqrt().max(STANDARDIZE_EPS);
            for i in 0..n {
                batch[i * total + h * d + j] = (projected[i * d + j] - mean) / scale;
            }
        }
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for a in 0..total {
        for b in 0..total {
            if a / d == b / d {
                continue;
            }
            let mut c = 0.0;
            for i in 0..n {
                c += batch[i * total + a] * batch[i * total + b];
            }
            acc += (c / n as f64).abs();
            count += 1;
        }
    }
    acc / count as f64
}

/// Composite objective with the teacher warm-up gate: the contrastive weight
/// is zero for `epoch < warmup_epochs` and `lambda_contrast` afterwards.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    tape: &mut Tape,
    class: Var,
    contrast: Var,
    diversity: Var,
    lambda_contrast: f64,
    lambda_div: f64,
    epoch: usize,
    warmup_epochs: usize,
) -> (Var, LossBreakdown) {
    let lambda_eff = if epoch < warmup_epochs {
        0.0
    } else {
        lambda_contrast
    };
    let c_term = tape.scalar_mul(contrast, lambda_eff);
    let d_term = tape.scalar_mul(diversity, lambda_div);
    let partial = tape.add(c_term, d_term);
    let total = tape.add(class, partial);
    let breakdown = LossBreakdown {
        class_loss: tape.scalar_value(class),
        contrast_loss: tape.scalar_value(contrast),
        diversity_loss: tape.scalar_value(diversity),
        total: tape.scalar_value(total),
        lambda_contrast_effective: lambda_eff,
    };
    (total, breakdown)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::testutil::{assert_grads_close, finite_difference};
    use crate::model::{ModelDims, ModelParams};
    use rand::Rng;

    fn rand_vec(rng: &mut rand_chacha::ChaCha8Rng, len: usize) -> Vec<f64> {
        (0..len).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
    }

    #[test]
    fn cross_entropy_closed_forms() {
        // saturated one-hot logits → loss ≈ 0
        let mut tape = Tape::new();
        let logits = tape.constant([2, 2], vec![1e3, 0.0, 0.0, 1e3]);
        let loss = weighted_cross_entropy(&mut tape, logits, &[0, 1], [1.0, 1.0], &[true, true]);
        assert!(tape.scalar_value(loss) < 1e-3);

        // uniform logits, balanced weights → ln 2
        let mut tape = Tape::new();
        let logits = tape.constant([4, 2], vec![0.0; 8]);
        let loss = weighted_cross_entropy(
            &mut tape,
            logits,
            &[0, 1, 0, 1],
            [1.0, 1.0],
            &[true; 4],
        );
        assert!((tape.scalar_value(loss) - 2.0f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn class_weights_match_hand_formula() {
        // 90/10 → raw [10/18·…] → normalized to mean 1: [0.2, 1.8]
        let mut labels = vec![0u8; 90];
        labels.extend(vec![1u8; 10]);
        let mask = vec![true; 100];
        let w = class_weights(&labels, &mask);
        assert!((w[0] - 0.2).abs() < 1e-12);
        assert!((w[1] - 1.8).abs() < 1e-12);
        assert!(((w[0] + w[1]) / 2.0 - 1.0).abs() < 1e-12);
        // single-class mask falls back to uniform
        let w = class_weights(&labels, &vec![false; 100]);
        assert_eq!(w, [1.0, 1.0]);
    }

    #[test]
    fn weighted_ce_uses_weights() {
        // one node per class with uniform logits; class-1 weight dominates
        let mut labels = vec![0u8; 9];
        labels.push(1);
        let mask = vec![true; 10];
        let w = class_weights(&labels, &mask);
        let mut tape = Tape::new();
        let logits = tape.constant([10, 2], vec![0.0; 20]);
        let loss = weighted_cross_entropy(&mut tape, logits, &labels, w, &mask);
        // every node contributes w_y·ln2/10; Σw_y = 9·w0 + w1
        let want = (9.0 * w[0] + w[1]) / 10.0 * 2.0f64.ln();
        assert!((tape.scalar_value(loss) - want).abs() < 1e-9);
    }

    fn teacher_like(student: &[Vec<f64>]) -> Vec<Vec<f64>> {
        student.to_vec()
    }

    #[test]
    fn tsc_uniform_similarities_give_h_ln_h() {
        // identical student and teacher heads → every cosine is 1 → uniform rows
        let n = 5;
        let d = 4;
        let mut rng = crate::graph::seeded_rng(1);
        let base = rand_vec(&mut rng, n * d);
        let mut tape = Tape::new();
        let heads: Vec<_> = (0..3).map(|_| tape.leaf([n, d], base.clone())).collect();
        let teacher = teacher_like(&vec![base.clone(); 3]);
        let loss = tsc_loss(&mut tape, &heads, &teacher, 0.5, false);
        let want = 3.0 * 3.0f64.ln();
        assert!((tape.scalar_value(loss) - want).abs() < 1e-9, "{}", tape.scalar_value(loss));
    }

    #[test]
    fn tsc_hand_example_two_heads() {
        // sims [[1,0],[0,1]], τ = 0.5 → per node 2·ln(1+e^{−2})
        let n = 3;
        let d = 2;
        // student head 0 rows = e_x, head 1 rows = e_y; teacher identical
        let ex = vec![1.0, 0.0].repeat(n);
        let ey = vec![0.0, 1.0].repeat(n);
        let mut tape = Tape::new();
        let s0 = tape.leaf([n, d], ex.clone());
        let s1 = tape.leaf([n, d], ey.clone());
        let loss = tsc_loss(&mut tape, &[s0, s1], &[ex, ey], 0.5, false);
        let want = 2.0 * (1.0 + (-2.0f64).exp()).ln();
        assert!((tape.scalar_value(loss) - want).abs() < 1e-9);
    }

    #[test]
    fn tsc_saturates_to_zero_with_separated_heads() {
        // diagonal sims 1, off-diagonal −1, τ = 0.1 → ≈ 0
        let n = 2;
        let d = 2;
        let ex = vec![1.0, 0.0].repeat(n);
        let mex = vec![-1.0, 0.0].repeat(n);
        let mut tape = Tape::new();
        let s0 = tape.leaf([n, d], ex.clone());
        let s1 = tape.leaf([n, d], mex.clone());
        let loss = tsc_loss(&mut tape, &[s0, s1], &[ex, mex], 0.1, false);
        assert!(tape.scalar_value(loss) < 1e-8);
    }

    #[test]
    fn tsc_teacher_receives_no_gradient() {
        let n = 4;
        let d = 3;
        let mut rng = crate::graph::seeded_rng(2);
        let mut tape = Tape::new();
        let s0 = tape.leaf([n, d], rand_vec(&mut rng, n * d));
        let s1 = tape.leaf([n, d], rand_vec(&mut rng, n * d));
        let teacher = vec![rand_vec(&mut rng, n * d), rand_vec(&mut rng, n * d)];
        let before = tape.len();
        let loss = tsc_loss(&mut tape, &[s0, s1], &teacher, 0.5, false);
        tape.backward(loss).unwrap();
        assert!(tape.grad(s0).unwrap().iter().any(|&g| g != 0.0));
        // teacher constants recorded after `before` have no gradient slots
        let _ = before;
    }

    #[test]
    fn tsc_finite_difference() {
        let n = 3;
        let d = 4;
        let heads = 3;
        let mut rng = crate::graph::seeded_rng(3);
        let teacher: Vec<Vec<f64>> = (0..heads).map(|_| rand_vec(&mut rng, n * d)).collect();
        for pooled in [false, true] {
            let x0 = rand_vec(&mut rng, heads * n * d);
            let run = |xs: &[f64]| -> (f64, Vec<f64>) {
                let mut tape = Tape::new();
                let vars: Vec<_> = (0..heads)
                    .map(|h| tape.leaf([n, d], xs[h * n * d..(h + 1) * n * d].to_vec()))
                    .collect();
                let loss = tsc_loss(&mut tape, &vars, &teacher, 0.7, pooled);
                tape.backward(loss).unwrap();
                let mut grads = Vec::new();
                for &v in &vars {
                    grads.extend_from_slice(tape.grad(v).unwrap());
                }
                (tape.scalar_value(loss), grads)
            };
            let (_, analytic) = run(&x0);
            let numeric = finite_difference(&mut |xs| run(xs).0, &x0);
            assert_grads_close(&analytic, &numeric, &format!("tsc pooled={pooled}"));
        }
    }

    #[test]
    fn btd_closed_forms() {
        // C = I → 0
        let mut tape = Tape::new();
        let c = tape.leaf([2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let loss = correlation_identity_gap(&mut tape, c);
        assert_eq!(tape.scalar_value(loss), 0.0);
        // C = [[1, .5], [.5, 1]] → 0.5
        let mut tape = Tape::new();
        let c = tape.leaf([2, 2], vec![1.0, 0.5, 0.5, 1.0]);
        let loss = correlation_identity_gap(&mut tape, c);
        assert!((tape.scalar_value(loss) - 0.5).abs() < 1e-9);
    }

    fn test_params(heads: usize, d: usize) -> ModelParams {
        let mut rng = crate::graph::seeded_rng(11);
        ModelParams::init(
            ModelDims {
                heads,
                order: 2,
                hidden: d,
                feature_dim: 3,
            },
            &mut rng,
            false,
        )
    }

    #[test]
    fn btd_duplicated_heads_score_worse_than_independent() {
        let n = 40;
        let d = 6;
        let mut rng = crate::graph::seeded_rng(4);
        let params = test_params(2, d);
        let shared = rand_vec(&mut rng, n * d);

        let mut tape = Tape::new();
        let tp = crate::model::TapeParams::insert(&mut tape, &params, false);
        let a = tape.leaf([n, d], shared.clone());
        let b = tape.leaf([n, d], shared.clone());
        let dup = btd_loss(&mut tape, &[a, b], &tp);
        let dup_val = tape.scalar_value(dup);

        let mut tape = Tape::new();
        let tp = crate::model::TapeParams::insert(&mut tape, &params, false);
        let a = tape.leaf([n, d], shared);
        let b = tape.leaf([n, d], rand_vec(&mut rng, n * d));
        let indep = btd_loss(&mut tape, &[a, b], &tp);
        let indep_val = tape.scalar_value(indep);
        assert!(
            dup_val > indep_val,
            "duplicated {dup_val} vs independent {indep_val}"
        );
    }

    #[test]
    fn btd_invariant_under_node_permutation() {
        let n = 12;
        let d = 5;
        let mut rng = crate::graph::seeded_rng(5);
        let params = test_params(2, d);
        let h0 = rand_vec(&mut rng, n * d);
        let h1 = rand_vec(&mut rng, n * d);
        let value = |a: &[f64], b: &[f64]| {
            let mut tape = Tape::new();
            let tp = crate::model::TapeParams::insert(&mut tape, &params, false);
            let va = tape.leaf([n, d], a.to_vec());
            let vb = tape.leaf([n, d], b.to_vec());
            let loss = btd_loss(&mut tape, &[va, vb], &tp);
            tape.scalar_value(loss)
        };
        let base = value(&h0, &h1);
        // rotate node order
        let rot = |m: &[f64]| {
            let mut out = m[3 * d..].to_vec();
            out.extend_from_slice(&m[..3 * d]);
            out
        };
        let rotated = value(&rot(&h0), &rot(&h1));
        assert!((base - rotated).abs() < 1e-9);
    }

    #[test]
    fn btd_constant_column_contributes_identity_gap() {
        // a projected column with zero variance maps to zeros; its diagonal
        // entry of C is 0 and contributes (0−1)² = 1
        let n = 6;
        let d = 2;
        let mut params = test_params(1, d);
        // identity projection, so head values pass through
        params.decor_proj[0] = vec![1.0, 0.0, 0.0, 1.0];
        let mut tape = Tape::new();
        let tp = crate::model::TapeParams::insert(&mut tape, &params, false);
        // column 0 constant, column 1 alternating
        let mut data = Vec::new();
        for i in 0..n {
            data.push(7.0);
            data.push(if i % 2 == 0 { 1.0 } else { -1.0 });
        }
        let z = tape.leaf([n, d], data);
        let loss = btd_loss(&mut tape, &[z], &tp);
        assert!((tape.scalar_value(loss) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn btd_finite_difference() {
        let n = 7;
        let d = 4;
        let heads = 2;
        let params = test_params(heads, d);
        let mut rng = crate::graph::seeded_rng(6);
        let x0 = rand_vec(&mut rng, heads * n * d);
        let run = |xs: &[f64]| -> (f64, Vec<f64>) {
            let mut tape = Tape::new();
            let tp = crate::model::TapeParams::insert(&mut tape, &params, false);
            let vars: Vec<_> = (0..heads)
                .map(|h| tape.leaf([n, d], xs[h * n * d..(h + 1) * n * d].to_vec()))
                .collect();
            let loss = btd_loss(&mut tape, &vars, &tp);
            tape.backward(loss).unwrap();
            let mut grads = Vec::new();
            for &v in &vars {
                grads.extend_from_slice(tape.grad(v).unwrap());
            }
            (tape.scalar_value(loss), grads)
        };
        let (_, analytic) = run(&x0);
        let numeric = finite_difference(&mut |xs| run(xs).0, &x0);
        assert_grads_close(&analytic, &numeric, "btd");
    }

    #[test]
    fn minimizing_btd_decorrelates_a_toy_linear_system() {
        // two heads Z_h = X·W_h on fixed inputs; descending the diversity
        // loss alone must drive the between-head correlation probe below 0.1
        // within 500 steps
        use crate::autodiff::AdamState;
        let n = 40;
        let d = 4;
        // input width must exceed the concatenated head width (2d), or the
        // standardized columns cannot be mutually orthogonal at all
        let f = 12;
        let mut rng = crate::graph::seeded_rng(21);
        let x_data = rand_vec(&mut rng, n * f);
        let mut params = ModelParams::init(
            ModelDims {
                heads: 2,
                order: 2,
                hidden: d,
                feature_dim: f,
            },
            &mut rng,
            false,
        );
        let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        let mut adam = AdamState::new(0.01, &sizes);
        let mut probe = f64::NAN;
        for _ in 0..500 {
            let mut tape = Tape::new();
            let tp = crate::model::TapeParams::insert(&mut tape, &params, true);
            let x = tape.constant([n, f], x_data.clone());
            let heads: Vec<_> = (0..2)
                .map(|h| {
                    let (w, _) = (tp.vars[4 + 2 * h], ());
                    tape.matmul(x, w)
                })
                .collect();
            let loss = btd_loss(&mut tape, &heads, &tp);
            tape.backward(loss).unwrap();
            let grads: Vec<&[f64]> = tp.vars.iter().map(|&v| tape.grad(v).unwrap()).collect();
            let mut tensors = params.tensors_mut();
            adam.step(&mut tensors, &grads).unwrap();

            let reps: Vec<Vec<f64>> = (0..2)
                .map(|h| crate::dense::matmul(&x_data, &params.head_weights[h], n, f, d))
                .collect();
            probe = between_head_correlation(&reps, n, d, &params.decor_proj);
        }
        assert!(probe < 0.1, "between-head probe after 500 steps: {probe}");
    }

    #[test]
    fn total_loss_warmup_gate_and_identity() {
        for (epoch, expect_lambda) in [(0, 0.0), (4, 0.0), (5, 0.1), (99, 0.1)] {
            let mut tape = Tape::new();
            let class = tape.scalar_const(1.0);
            let contrast = tape.scalar_const(2.0);
            let diversity = tape.scalar_const(3.0);
            let (total, parts) =
                total_loss(&mut tape, class, contrast, diversity, 0.1, 0.05, epoch, 5);
            assert_eq!(parts.lambda_contrast_effective, expect_lambda);
            let want = 1.0 + expect_lambda * 2.0 + 0.05 * 3.0;
            assert!((tape.scalar_value(total) - want).abs() < 1e-10);
            let identity = parts.class_loss
                + parts.lambda_contrast_effective * parts.contrast_loss
                + 0.05 * parts.diversity_loss;
            assert!((parts.total - identity).abs() < 1e-10);
        }
        // epoch 5 with parts (1, 2, 3) → 1.35
        let mut tape = Tape::new();
        let class = tape.scalar_const(1.0);
        let contrast = tape.scalar_const(2.0);
        let diversity = tape.scalar_const(3.0);
        let (total, _) = total_loss(&mut tape, class, contrast, diversity, 0.1, 0.05, 5, 5);
        assert!((tape.scalar_value(total) - 1.35).abs() < 1e-12);
        // zero weights degenerate to the class loss
        let mut tape = Tape::new();
        let class = tape.scalar_const(0.7);
        let contrast = tape.scalar_const(2.0);
        let diversity = tape.scalar_const(3.0);
        let (total, _) = total_loss(&mut tape, class, contrast, diversity, 0.0, 0.0, 10, 5);
        assert!((tape.scalar_value(total) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn weighted_ce_finite_difference() {
        let n = 6;
        let labels = [0u8, 1, 0, 1, 1, 0];
        let mask = [true, true, false, true, true, true];
        let weights = class_weights(&labels, &mask.to_vec());
        let mut rng = crate::graph::seeded_rng(7);
        let x0 = rand_vec(&mut rng, n * 2);
        let run = |xs: &[f64]| -> (f64, Vec<f64>) {
            let mut tape = Tape::new();
            let logits = tape.leaf([n, 2], xs.to_vec());
            let loss = weighted_cross_entropy(&mut tape, logits, &labels, weights, &mask);
            tape.backward(loss).unwrap();
            (tape.scalar_value(loss), tape.grad(logits).unwrap().to_vec())
        };
        let (_, analytic) = run(&x0);
        let numeric = finite_difference(&mut |xs| run(xs).0, &x0);
        assert_grads_close(&analytic, &numeric, "weighted_ce");
    }
}
