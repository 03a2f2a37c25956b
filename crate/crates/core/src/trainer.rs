//! End-to-end training: per-epoch forward/teacher/losses/backward/Adam/EMA
//! with the contrastive warm-up gate, best-validation model selection, the
//! multi-run trimmed-mean protocol and the ablation grid.

use crate::autodiff::{AdamState, Tape};
use crate::error::{Error, Result};
use crate::fingerprint::{
    compute_fingerprint_with_laplacian, make_projection, FingerprintConfig, ProjectionMatrix,
};
use crate::graph::{
    build_laplacian, make_splits, rescale_laplacian, Role, SparseGraph, SplitAssignment,
};
use crate::losses::{
    btd_loss, class_weights, total_loss, tsc_loss, weighted_cross_entropy, LossBreakdown,
};
use crate::metrics::{
    anomaly_scores, auc, best_threshold, f1_macro, predict, EvalResult, RunAggregate, RunResult,
};
use crate::model::{
    evaluate_forward, forward, teacher_forward, ChebBasis, ModelDims, ModelParams, TapeParams,
    TeacherState,
};
use serde::{Deserialize, Serialize};
use std::path::Path;

const PROJECTION_SALT: u64 = 0x70726f6a; // projection stream separate from init
const FINGERPRINT_SALT: u64 = 0x66707270;

/// Full training configuration. Defaults are the reference hyperparameters:
/// 3 heads of order 2, hidden width 64, Adam at 0.01 for 100 epochs, 5
/// warm-up epochs, λ_contrast 0.1, λ_div 0.05, 10 runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub heads: usize,
    pub order: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub lambda_contrast: f64,
    pub lambda_div: f64,
    pub tau: f64,
    pub ema_momentum: f64,
    pub runs: usize,
    pub train_ratio: f64,
    pub seed: u64,
    pub fingerprint: FingerprintConfig,
    /// Ablation: bypass the hypernetwork, freezing every head at the
    /// low-pass profile.
    pub fixed_filter: bool,
    /// Ablation: collapse to a single adaptive head.
    pub single_head: bool,
    pub tsc_on: bool,
    pub btd_on: bool,
    /// Evaluate the contrastive term on node-mean-pooled head vectors
    /// instead of per node.
    pub tsc_pooled: bool,
    /// Pick the F1 threshold by a 51-point validation sweep instead of
    /// argmax.
    pub f1_threshold_sweep: bool,
    /// Start all heads from identical parameters (used by the
    /// decorrelation probes).
    pub identical_head_init: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            heads: 3,
            order: 2,
            hidden: 64,
            learning_rate: 0.01,
            epochs: 100,
            warmup_epochs: 5,
            lambda_contrast: 0.1,
            lambda_div: 0.05,
            tau: 0.5,
            ema_momentum: 0.99,
            runs: 10,
            train_ratio: 0.4,
            seed: 0,
            fingerprint: FingerprintConfig::default(),
            fixed_filter: false,
            single_head: false,
            tsc_on: true,
            btd_on: true,
            tsc_pooled: false,
            f1_threshold_sweep: false,
            identical_head_init: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 {
            return Err(Error::InvalidInput("heads must be at least 1".into()));
        }
        if self.hidden < 2 || !self.hidden.is_multiple_of(2) {
            return Err(Error::InvalidInput(
                "hidden width must be an even number ≥ 2 (attention halves it)".into(),
            ));
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return Err(Error::InvalidInput(format!(
                "train_ratio {} outside (0, 1)",
                self.train_ratio
            )));
        }
        if self.tau <= 0.0 {
            return Err(Error::InvalidInput("tau must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.ema_momentum) {
            return Err(Error::InvalidInput("ema_momentum outside [0, 1]".into()));
        }
        if self.fixed_filter && self.single_head {
            return Err(Error::InvalidInput(
                "fixed_filter and single_head are mutually exclusive ablations".into(),
            ));
        }
        if self.fingerprint.lanczos_steps < 2 * self.fingerprint.w {
            return Err(Error::InvalidInput(format!(
                "lanczos_steps {} must be at least 2w = {}",
                self.fingerprint.lanczos_steps,
                2 * self.fingerprint.w
            )));
        }
        Ok(())
    }

    pub fn effective_heads(&self) -> usize {
        if self.single_head {
            1
        } else {
            self.heads
        }
    }

    fn dims(&self, feature_dim: usize) -> ModelDims {
        ModelDims {
            heads: self.effective_heads(),
            order: self.order,
            hidden: self.hidden,
            feature_dim,
        }
    }
}

/// One epoch's log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    #[serde(flatten)]
    pub losses: LossBreakdown,
    pub validation_auc: f64,
    pub validation_f1: f64,
}

/// Validation and test metrics at one point in training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub validation: EvalResult,
    pub test: EvalResult,
}

/// Everything one run produces besides the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    /// Metrics of the untrained model, before the first optimizer step.
    pub initial: EvalPair,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_validation_auc: f64,
    /// Test metrics at the best-validation epoch (the reported result).
    pub test_at_best: EvalResult,
    /// Test metrics at the final epoch, logged for reference.
    pub test_at_final: EvalResult,
}

/// Serializable checkpoint: student, teacher mirror, optimizer moments, the
/// frozen fingerprint projection and the run seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelState {
    pub version: String,
    pub config: TrainConfig,
    pub seed: u64,
    pub best_epoch: usize,
    pub student: ModelParams,
    pub teacher: ModelParams,
    pub optimizer: AdamState,
    pub projection: ProjectionMatrix,
    /// The whole-graph fingerprint the run trained with.
    pub fingerprint: Vec<f64>,
}

impl ModelState {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let state: ModelState = serde_json::from_str(&text)?;
        if state.student.dims != state.teacher.dims {
            return Err(Error::Checkpoint(
                "student and teacher dimensions disagree".into(),
            ));
        }
        Ok(state)
    }
}

fn evaluate(
    params: &ModelParams,
    basis: &ChebBasis,
    fingerprint: &[f64],
    labels: &[u8],
    splits: &SplitAssignment,
    fixed_filter: bool,
    sweep: bool,
) -> Result<EvalPair> {
    let (logits, _) = evaluate_forward(params, basis, fingerprint, fixed_filter);
    let scores = anomaly_scores(&logits);
    let gather = |role: Role| -> (Vec<f64>, Vec<u8>) {
        let mut s = Vec::new();
        let mut l = Vec::new();
        for (i, r) in splits.roles.iter().enumerate() {
            if *r == role {
                s.push(scores[i]);
                l.push(labels[i]);
            }
        }
        (s, l)
    };
    let (val_scores, val_labels) = gather(Role::Validation);
    let (test_scores, test_labels) = gather(Role::Test);
    let threshold = if sweep {
        best_threshold(&val_scores, &val_labels)
    } else {
        0.5
    };
    let validation = EvalResult {
        auc: auc(&val_scores, &val_labels)?,
        f1_macro: f1_macro(&predict(&val_scores, threshold), &val_labels),
        threshold,
        split: Role::Validation,
    };
    let test = EvalResult {
        auc: auc(&test_scores, &test_labels)?,
        f1_macro: f1_macro(&predict(&test_scores, threshold), &test_labels),
        threshold,
        split: Role::Test,
    };
    Ok(EvalPair { validation, test })
}

/// One run's full output: the per-epoch report, the best-validation
/// checkpoint, and the final-epoch parameters (used by convergence probes).
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub state: ModelState,
    pub final_student: ModelParams,
    pub final_teacher: ModelParams,
}

/// Trains one model on one split. Deterministic given the seed: the
/// fingerprint is computed once (the graph is static), each epoch runs one
/// full-graph step, the teacher EMA advances after every optimizer step
/// (including warm-up), and the reported test result comes from the epoch
/// with the best validation AUC.
pub fn train_once(
    graph: &SparseGraph,
    splits: &SplitAssignment,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    config.validate()?;
    let labels = graph
        .labels()
        .ok_or_else(|| Error::InvalidInput("training requires labels".into()))?;
    let lap = build_laplacian(graph);
    let rescaled = rescale_laplacian(&lap)?;
    let basis = ChebBasis::new(&rescaled, graph.features(), graph.feature_dim(), config.order);
    let projection = make_projection(graph.feature_dim(), seed ^ PROJECTION_SALT);
    let fingerprint = compute_fingerprint_with_laplacian(
        &lap,
        graph.features(),
        &projection,
        &config.fingerprint,
        seed ^ FINGERPRINT_SALT,
    )?
    .combined();

    let mut rng = crate::graph::seeded_rng(seed);
    let dims = config.dims(graph.feature_dim());
    let mut student = ModelParams::init(dims, &mut rng, config.identical_head_init);
    let mut teacher = TeacherState::new(&student, config.ema_momentum);
    let sizes: Vec<usize> = student.tensors().iter().map(|t| t.len()).collect();
    let mut optimizer = AdamState::new(config.learning_rate, &sizes);

    let train_mask = splits.mask(Role::Train);
    let weights = class_weights(labels, &train_mask);

    let initial = evaluate(
        &student,
        &basis,
        &fingerprint,
        labels,
        splits,
        config.fixed_filter,
        config.f1_threshold_sweep,
    )?;

    let mut records = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, EvalResult, ModelParams, ModelParams, AdamState)> = None;
    let mut last_test = initial.test;

    for epoch in 0..config.epochs {
        let teacher_out = if config.tsc_on {
            Some(teacher_forward(
                &teacher,
                &basis,
                &fingerprint,
                config.fixed_filter,
            ))
        } else {
            None
        };

        let mut tape = Tape::new();
        let tp = TapeParams::insert(&mut tape, &student, true);
        let out = forward(&mut tape, &tp, &basis, &fingerprint, config.fixed_filter);
        let class = weighted_cross_entropy(&mut tape, out.logits, labels, weights, &train_mask);
        let contrast = match &teacher_out {
            Some(t) => tsc_loss(
                &mut tape,
                &out.head_reps,
                &t.head_reps,
                config.tau,
                config.tsc_pooled,
            ),
            None => tape.scalar_const(0.0),
        };
        let diversity = if config.btd_on {
            btd_loss(&mut tape, &out.head_reps, &tp)
        } else {
            tape.scalar_const(0.0)
        };
        let (total, breakdown) = total_loss(
            &mut tape,
            class,
            contrast,
            diversity,
            config.lambda_contrast,
            config.lambda_div,
            epoch,
            config.warmup_epochs,
        );
        if !breakdown.total.is_finite() {
            return Err(Error::NonFinite {
                what: format!(
                    "loss (class {}, contrast {}, diversity {})",
                    breakdown.class_loss, breakdown.contrast_loss, breakdown.diversity_loss
                ),
                epoch,
            });
        }
        tape.backward(total)?;
        let grads: Vec<&[f64]> = tp
            .vars
            .iter()
            .map(|&v| tape.grad(v).expect("trainable leaf has gradient"))
            .collect();
        let mut tensors = student.tensors_mut();
        optimizer.step(&mut tensors, &grads)?;
        teacher.ema_update(&student);

        let metrics = evaluate(
            &student,
            &basis,
            &fingerprint,
            labels,
            splits,
            config.fixed_filter,
            config.f1_threshold_sweep,
        )?;
        last_test = metrics.test;
        let improved = best
            .as_ref()
            .map(|(_, b, ..)| metrics.validation.auc > *b)
            .unwrap_or(true);
        if improved {
            best = Some((
                epoch,
                metrics.validation.auc,
                metrics.test,
                student.clone(),
                teacher.params.clone(),
                optimizer.clone(),
            ));
        }
        records.push(EpochRecord {
            epoch,
            losses: breakdown,
            validation_auc: metrics.validation.auc,
            validation_f1: metrics.validation.f1_macro,
        });
    }

    let (best_epoch, best_val, test_at_best, best_student, best_teacher, best_opt) =
        best.expect("at least one epoch");
    let report = TrainReport {
        seed,
        initial,
        epochs: records,
        best_epoch,
        best_validation_auc: best_val,
        test_at_best,
        test_at_final: last_test,
    };
    let state = ModelState {
        version: crate::VERSION.to_string(),
        config: config.clone(),
        seed,
        best_epoch,
        student: best_student,
        teacher: best_teacher,
        optimizer: best_opt,
        projection,
        fingerprint: fingerprint.to_vec(),
    };
    Ok(TrainOutcome {
        report,
        state,
        final_student: student,
        final_teacher: teacher.params,
    })
}

/// Output of the multi-run protocol.
#[derive(Debug)]
pub struct ProtocolOutput {
    pub aggregate: RunAggregate,
    pub reports: Vec<TrainReport>,
    pub states: Vec<ModelState>,
}

fn worker_cap() -> usize {
    if let Ok(v) = std::env::var("SPECTRAL_ADAPT_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            return n.max(1);
        }
        log::warn!("ignoring unparseable SPECTRAL_ADAPT_THREADS={v}");
    }
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

/// Runs `config.runs` independent trainings with seeds `seed..seed+R−1`,
/// fresh stratified splits per run, and aggregates test metrics by trimmed
/// mean. Runs execute in parallel (capped by `SPECTRAL_ADAPT_THREADS`);
/// results are collected in seed order.
pub fn run_protocol(graph: &SparseGraph, config: &TrainConfig) -> Result<ProtocolOutput> {
    config.validate()?;
    if config.runs < 3 {
        return Err(Error::InvalidInput(format!(
            "protocol needs at least 3 runs for the trimmed mean, got {}",
            config.runs
        )));
    }
    type Slot<'a> = (usize, &'a mut Option<Result<TrainOutcome>>);
    let workers = worker_cap().min(config.runs);
    let mut slots: Vec<Option<Result<TrainOutcome>>> = (0..config.runs).map(|_| None).collect();

    std::thread::scope(|scope| {
        let chunks: Vec<Slot> = slots.iter_mut().enumerate().collect();
        let mut queues: Vec<Vec<Slot>> = (0..workers).map(|_| Vec::new()).collect();
        for (i, slot) in chunks {
            queues[i % workers].push((i, slot));
        }
        for queue in queues {
            scope.spawn(move || {
                for (run_idx, slot) in queue {
                    let run_seed = config.seed + run_idx as u64;
                    let result = make_splits(graph, config.train_ratio, run_seed)
                        .and_then(|splits| train_once(graph, &splits, config, run_seed));
                    *slot = Some(result);
                }
            });
        }
    });

    let mut reports = Vec::with_capacity(config.runs);
    let mut states = Vec::with_capacity(config.runs);
    let mut per_run = Vec::with_capacity(config.runs);
    for slot in slots {
        let outcome = slot.expect("worker filled slot")?;
        per_run.push(RunResult {
            seed: outcome.report.seed,
            test: outcome.report.test_at_best,
            best_epoch: outcome.report.best_epoch,
            best_validation_auc: outcome.report.best_validation_auc,
        });
        reports.push(outcome.report);
        states.push(outcome.state);
    }
    Ok(ProtocolOutput {
        aggregate: RunAggregate::from_runs(per_run)?,
        reports,
        states,
    })
}

/// One row of the ablation grid.
#[derive(Debug, Serialize)]
pub struct AblationRow {
    pub name: String,
    pub aggregate: RunAggregate,
}

/// Builds the named ablation variant of a base configuration.
///
/// The first three rows compare bare backbones (regularizers off): frozen
/// low-pass coefficients, one adaptive head, the multi-head filter bank. The
/// remaining rows toggle the two regularizers on the multi-head backbone.
pub fn ablation_variant(base: &TrainConfig, name: &str) -> Option<TrainConfig> {
    let mut cfg = base.clone();
    cfg.fixed_filter = false;
    cfg.single_head = false;
    cfg.tsc_on = false;
    cfg.btd_on = false;
    match name {
        "fixed_filter" => cfg.fixed_filter = true,
        "single_adaptive" => cfg.single_head = true,
        "multi_none" => {}
        "multi_tsc_only" => cfg.tsc_on = true,
        "multi_btd_only" => cfg.btd_on = true,
        "multi_tsc_btd" => {
            cfg.tsc_on = true;
            cfg.btd_on = true;
        }
        _ => return None,
    }
    Some(cfg)
}

pub const ABLATION_VARIANTS: [&str; 6] = [
    "fixed_filter",
    "single_adaptive",
    "multi_none",
    "multi_tsc_only",
    "multi_btd_only",
    "multi_tsc_btd",
];

/// Runs the full protocol for each ablation variant: frozen low-pass
/// coefficients, a single adaptive head, and the multi-head model under all
/// four regularizer toggles.
pub fn ablation_suite(graph: &SparseGraph, base: &TrainConfig) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(ABLATION_VARIANTS.len());
    for name in ABLATION_VARIANTS {
        let cfg = ablation_variant(base, name).expect("known variant");
        log::info!("ablation variant {name}: {} runs", cfg.runs);
        let out = run_protocol(graph, &cfg)?;
        rows.push(AblationRow {
            name: name.to_string(),
            aggregate: out.aggregate,
        });
    }
    Ok(rows)
}

/// Renders the ablation table as fixed-width text.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = format!(
        "{:<16} {:>12} {:>12}\n",
        "variant", "auc_trimmed", "f1_trimmed"
    );
    for row in rows {
        out.push_str(&format!(
            "{:<16} {:>12.4} {:>12.4}\n",
            row.name, row.aggregate.auc_trimmed_mean, row.aggregate.f1_trimmed_mean
        ));
    }
    out
}
