//! Training: supervised cross-entropy on labeled examples plus two losses
//! that need no labels at all — a score-function (REINFORCE) consistency loss
//! rewarding reflections that raise the knowledge-base score of the
//! error-removed output, and a size loss keeping the expected flag fraction
//! near `1 - C`.
//!
//! For each example one forward pass is recorded and all three losses are
//! built on the same tape. The consistency reward is a plain constant by the
//! time it multiplies the log-probability node, so no gradient ever flows
//! through the consistency measurement itself. A slowly moving average of
//! the reward is subtracted as a baseline; a constant shift leaves the
//! estimator unbiased and tames its variance at small batch sizes.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Gradients, Tensor};
use crate::data::{GraphInstance, SudokuRecord};
use crate::eval::{derive_seed, evaluate_graphs, evaluate_sudoku, Selector};
use crate::graph::ConstraintGraph;
use crate::knowledge::{
    Assignment, GraphKb, GraphTask, KnowledgeBase, SudokuBackend, SudokuKb,
};
use crate::model::{DecodeMode, ModelError, ReflModel, Trace};
use crate::reflect::{apply_reflection, ReflectionVector};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("non-finite loss at epoch {epoch}, step {step}: {value}")]
    NonFiniteLoss { epoch: usize, step: usize, value: f64 },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("validation failed: {0}")]
    Validation(String),
}

/// Loss weights and loop hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    /// Size-loss threshold in (0, 1): the expected retained fraction.
    pub c: f64,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    /// Fraction of the training set that keeps its labels.
    pub labeled_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1.0,
            beta: 1.0,
            c: 0.8,
            epochs: 20,
            batch: 16,
            lr: 1e-3,
            seed: 0,
            labeled_fraction: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.c > 0.0 && self.c < 1.0) {
            return Err(format!("c must lie in (0, 1), got {}", self.c));
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err("alpha and beta must be nonnegative".into());
        }
        if !(self.labeled_fraction >= 0.0 && self.labeled_fraction <= 1.0) {
            return Err(format!(
                "labeled_fraction must lie in [0, 1], got {}",
                self.labeled_fraction
            ));
        }
        if self.batch == 0 || self.epochs == 0 {
            return Err("batch and epochs must be positive".into());
        }
        Ok(())
    }
}

/// Exponential moving average of the consistency improvement, used as the
/// reward baseline. Warm-initialized from the first observation so the very
/// first batches are already centered; an uncentered start rewards every
/// sample at once and scrambles both heads before the supervised signal can
/// act.
#[derive(Debug, Clone)]
pub struct RewardBaseline {
    value: f64,
    variance: f64,
    decay: f64,
    initialized: bool,
}

impl Default for RewardBaseline {
    fn default() -> Self {
        RewardBaseline { value: 0.0, variance: 0.0, decay: 0.99, initialized: false }
    }
}

impl RewardBaseline {
    pub fn value(&self) -> f64 {
        self.value
    }

    /// Scale for advantage normalization: the running standard deviation of
    /// the consistency improvement, floored at 1 so near-constant rewards
    /// are not amplified.
    pub fn scale(&self) -> f64 {
        self.variance.sqrt().max(1.0)
    }

    pub fn update(&mut self, delta_con: f64) {
        if self.initialized {
            let dev = delta_con - self.value;
            self.value = self.decay * self.value + (1.0 - self.decay) * delta_con;
            self.variance = self.decay * self.variance + (1.0 - self.decay) * dev * dev;
        } else {
            self.value = delta_con;
            self.variance = 0.0;
            self.initialized = true;
        }
        debug_assert!(self.value.is_finite() && self.variance.is_finite());
    }
}

/// One training example: the input, its optional label, the message-passing
/// substrate, and the knowledge base that scores it.
#[derive(Clone)]
pub struct TrainExample {
    pub x: Assignment,
    pub y_true: Option<Assignment>,
    pub graph: Arc<ConstraintGraph>,
    pub kb: Arc<dyn KnowledgeBase + Send + Sync>,
}

/// Turn Sudoku records into training examples, stripping labels from all but
/// the first `labeled_fraction` of a seed-shuffled order.
pub fn sudoku_examples(
    records: &[SudokuRecord],
    side: usize,
    backend: SudokuBackend,
    labeled_fraction: f64,
    seed: u64,
) -> Vec<TrainExample> {
    let graph = Arc::new(crate::graph::build_sudoku_graph(side).expect("valid side"));
    let kb: Arc<dyn KnowledgeBase + Send + Sync> = Arc::new(SudokuKb::new(side, backend));
    let labeled = labeled_mask(records.len(), labeled_fraction, seed);
    records
        .iter()
        .zip(labeled)
        .map(|(rec, keep)| TrainExample {
            x: rec.puzzle_assignment(),
            y_true: keep.then(|| rec.solution_assignment()),
            graph: Arc::clone(&graph),
            kb: Arc::clone(&kb),
        })
        .collect()
}

pub fn graph_examples(
    instances: &[GraphInstance],
    task: GraphTask,
    labeled_fraction: f64,
    seed: u64,
) -> Vec<TrainExample> {
    let labeled = labeled_mask(instances.len(), labeled_fraction, seed);
    instances
        .iter()
        .zip(labeled)
        .map(|(inst, keep)| TrainExample {
            x: inst.input_assignment(),
            y_true: if keep { inst.label_assignment() } else { None },
            graph: Arc::new(ConstraintGraph::from_graph(&inst.graph)),
            kb: Arc::new(GraphKb::new(inst.graph.clone(), task)),
        })
        .collect()
}

fn labeled_mask(n: usize, fraction: f64, seed: u64) -> Vec<bool> {
    let keep = ((n as f64) * fraction).ceil() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    shuffle(&mut order, derive_seed(seed, 13, 0));
    let mut mask = vec![false; n];
    for &i in order.iter().take(keep) {
        mask[i] = true;
    }
    mask
}

fn shuffle<T>(items: &mut [T], seed: u64) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Signed change in consistency points from blanking the flagged positions:
/// `Con(y-prime) - Con(y-hat)`, bonus included.
pub fn delta_con(
    y_hat: &Assignment,
    r: &ReflectionVector,
    x: &Assignment,
    kb: &dyn KnowledgeBase,
) -> i64 {
    let y_prime = apply_reflection(x, y_hat, r);
    kb.consistency(&y_prime).points - kb.consistency(y_hat).points
}

/// The size-loss arithmetic on plain values: `max(0, C - mean(1 - p))^2`.
pub fn loss_size_value(flag_probs: &[f64], c: f64) -> f64 {
    let n = flag_probs.len() as f64;
    let mean_retained = flag_probs.iter().map(|p| 1.0 - p).sum::<f64>() / n;
    let a = c - mean_retained;
    a.max(0.0).powi(2)
}

/// Per-example loss values and gradient contribution.
pub struct ExampleLosses {
    /// Weighted combination actually differentiated.
    pub total: f64,
    pub labeled: Option<f64>,
    pub consistency: f64,
    pub size: f64,
    pub delta_con: i64,
    pub grads: Gradients,
}

/// Build every loss for one example on a single traced forward pass and
/// differentiate its weighted sum. The consistency sample is drawn from the
/// forward result with `sample_seed`.
///
/// `labeled_weight` multiplies the supervised term; `unlabeled_weight`
/// multiplies `alpha * consistency + beta * size`. Eq-style batch
/// normalizations plug in through these two weights.
#[allow(clippy::too_many_arguments)]
pub fn example_losses(
    model: &ReflModel,
    ex: &TrainExample,
    labeled_weight: f64,
    unlabeled_weight: f64,
    alpha: f64,
    beta: f64,
    c: f64,
    baseline: f64,
    reward_scale: f64,
    sample_seed: u64,
) -> Result<ExampleLosses, TrainError> {
    let (fr, trace) = model.forward_traced(&ex.x, &ex.graph)?;
    let sample = model.decode(&fr, DecodeMode::Sample { seed: sample_seed });
    build_losses(
        model,
        ex,
        trace,
        &sample.0,
        &sample.1,
        labeled_weight,
        unlabeled_weight,
        alpha,
        beta,
        c,
        baseline,
        reward_scale,
    )
}

/// As [`example_losses`], but with the consistency sample fixed by the
/// caller. Holding the sample (and hence the reward) constant makes the loss
/// a smooth function of the parameters, which gradient checks rely on.
#[allow(clippy::too_many_arguments)]
pub fn example_losses_with_sample(
    model: &ReflModel,
    ex: &TrainExample,
    y_sample: &Assignment,
    r_sample: &ReflectionVector,
    labeled_weight: f64,
    unlabeled_weight: f64,
    alpha: f64,
    beta: f64,
    c: f64,
    baseline: f64,
    reward_scale: f64,
) -> Result<ExampleLosses, TrainError> {
    let (_, trace) = model.forward_traced(&ex.x, &ex.graph)?;
    build_losses(
        model, ex, trace, y_sample, r_sample, labeled_weight, unlabeled_weight, alpha, beta, c,
        baseline, reward_scale,
    )
}

#[allow(clippy::too_many_arguments)]
fn build_losses(
    model: &ReflModel,
    ex: &TrainExample,
    mut trace: Trace,
    y_sample: &Assignment,
    r_sample: &ReflectionVector,
    labeled_weight: f64,
    unlabeled_weight: f64,
    alpha: f64,
    beta: f64,
    c: f64,
    baseline: f64,
    reward_scale: f64,
) -> Result<ExampleLosses, TrainError> {
    let n = ex.x.len();

    // Supervised term: mean per-position cross-entropy, clues included. The
    // reflection head is absent from this subgraph, so labels never train it.
    let labeled_node = match &ex.y_true {
        Some(y) => {
            let targets: Vec<usize> = (0..n)
                .map(|i| model.config.class_of_symbol(y.get(i).expect("labels are complete")))
                .collect();
            Some(trace.tape.cross_entropy(trace.cell_logits, &targets)?)
        }
        None => None,
    };

    // Consistency term: score the sampled reflection's improvement and push
    // the sample's log-probability with the centered reward. The advantage
    // is divided by `reward_scale` (the running std of the improvement) and
    // by n: the log-probability sums over n positions while the supervised
    // term averages over them, and without the 1/n the score-function noise
    // drowns the supervised gradient at equal loss weights.
    let d_con = delta_con(y_sample, r_sample, &ex.x, ex.kb.as_ref());
    let reward = (d_con as f64 - baseline) / (reward_scale * n as f64);
    let log_prob = joint_log_prob_node(model, &mut trace, y_sample, r_sample)?;
    let con_node = trace.tape.scale(log_prob, -reward)?;

    // Size term.
    let mean_flag = trace.tape.mean(trace.flag_probs)?;
    let shifted = trace.tape.add_const(mean_flag, c - 1.0)?;
    let clamped = trace.tape.relu(shifted)?;
    let size_node = trace.tape.mul(clamped, clamped)?;

    let con_scaled = trace.tape.scale(con_node, alpha)?;
    let size_scaled = trace.tape.scale(size_node, beta)?;
    let unlabeled_sum = trace.tape.add(con_scaled, size_scaled)?;
    let mut total = trace.tape.scale(unlabeled_sum, unlabeled_weight)?;
    if let Some(lab) = labeled_node {
        let lab_scaled = trace.tape.scale(lab, labeled_weight)?;
        total = trace.tape.add(total, lab_scaled)?;
    }

    let total_value = trace.tape.value(total).data[0];
    let store = trace.tape.backward(total)?;
    let grads = trace.parameter_gradients(&store);
    Ok(ExampleLosses {
        total: total_value,
        labeled: labeled_node.map(|id| trace.tape.value(id).data[0]),
        consistency: trace.tape.value(con_node).data[0],
        size: trace.tape.value(size_node).data[0],
        delta_con: d_con,
        grads,
    })
}

/// `log f(y, r | x)` as a tape node: the categorical part comes from the
/// class log-softmax at the sampled symbols; the Bernoulli part reuses the
/// same machinery by pairing each flag logit with a zero column, since
/// `log_softmax([z, 0]) = [log sigmoid(z), log (1 - sigmoid(z))]`.
fn joint_log_prob_node(
    model: &ReflModel,
    trace: &mut Trace,
    y: &Assignment,
    r: &ReflectionVector,
) -> Result<crate::autodiff::ValueId, TrainError> {
    let n = y.len();
    let y_targets: Vec<usize> = (0..n)
        .map(|i| model.config.class_of_symbol(y.get(i).expect("sampled outputs are complete")))
        .collect();
    let ce_y = trace.tape.cross_entropy(trace.cell_logits, &y_targets)?;
    let lp_y = trace.tape.scale(ce_y, -(n as f64))?;

    let zeros = trace.tape.constant(Tensor::zeros(vec![n, 1]));
    let paired = trace.tape.concat(&[trace.flag_logits, zeros])?;
    let r_targets: Vec<usize> = (0..n).map(|i| usize::from(!r.get(i))).collect();
    let ce_r = trace.tape.cross_entropy(paired, &r_targets)?;
    let lp_r = trace.tape.scale(ce_r, -(n as f64))?;

    Ok(trace.tape.add(lp_y, lp_r)?)
}

/// Aggregate statistics of one optimizer step.
#[derive(Debug, Clone, Default)]
pub struct BatchStats {
    pub total_loss: f64,
    pub labeled_loss_sum: f64,
    pub labeled_count: usize,
    pub consistency_loss_sum: f64,
    pub size_loss_sum: f64,
    pub delta_con_sum: i64,
    /// Per-example consistency improvements in batch order, for the baseline.
    pub delta_cons: Vec<i64>,
    pub examples: usize,
}

/// Compute the batch loss per the semi-supervised objective: the labeled
/// mean plus `alpha/beta`-weighted consistency and size means over the whole
/// batch. Returns the summed gradients ready for one optimizer step.
pub fn total_loss(
    model: &ReflModel,
    batch: &[&TrainExample],
    config: &TrainConfig,
    baseline: f64,
    reward_scale: f64,
    sample_seeds: &[u64],
) -> Result<(BatchStats, Gradients), TrainError> {
    assert_eq!(batch.len(), sample_seeds.len());
    let n_total = batch.len();
    let n_labeled = batch.iter().filter(|e| e.y_true.is_some()).count();
    let labeled_weight = if n_labeled > 0 { 1.0 / n_labeled as f64 } else { 0.0 };
    let unlabeled_weight = 1.0 / n_total as f64;

    let results: Vec<Result<ExampleLosses, TrainError>> = batch
        .par_iter()
        .zip(sample_seeds.par_iter())
        .map(|(ex, &seed)| {
            example_losses(
                model,
                ex,
                labeled_weight,
                unlabeled_weight,
                config.alpha,
                config.beta,
                config.c,
                baseline,
                reward_scale,
                seed,
            )
        })
        .collect();

    let mut grads = Gradients::new();
    let mut stats = BatchStats { examples: n_total, ..BatchStats::default() };
    for result in results {
        let losses = result?;
        stats.total_loss += losses.total;
        if let Some(l) = losses.labeled {
            stats.labeled_loss_sum += l;
            stats.labeled_count += 1;
        }
        stats.consistency_loss_sum += losses.consistency;
        stats.size_loss_sum += losses.size;
        stats.delta_con_sum += losses.delta_con;
        stats.delta_cons.push(losses.delta_con);
        for (name, g) in losses.grads {
            match grads.get_mut(&name) {
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                None => {
                    grads.insert(name, g);
                }
            }
        }
    }
    Ok((stats, grads))
}

/// Per-epoch log line. Deliberately free of wall-clock fields so two runs
/// with the same seed produce byte-identical logs.
#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_labeled_loss: f64,
    pub mean_consistency_loss: f64,
    pub mean_size_loss: f64,
    pub mean_delta_con: f64,
    pub reward_baseline: f64,
    pub val_board_accuracy: f64,
    pub val_raw_accuracy: f64,
    pub val_mean_flagged: f64,
    pub val_recall: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_approx_ratio: Option<f64>,
}

/// Validation data for checkpoint selection and per-epoch reporting.
pub enum ValData {
    Sudoku { backend: SudokuBackend, records: Vec<SudokuRecord> },
    Graphs { task: GraphTask, instances: Vec<GraphInstance> },
}

pub struct TrainOutput {
    /// The checkpoint with the best validation board accuracy (later epochs
    /// win ties, so a saturated metric still returns the most-trained model).
    pub model: ReflModel,
    pub best_epoch: usize,
    pub epochs: Vec<EpochMetrics>,
}

/// The full loop: shuffled batches, Adam steps, one validation pass per
/// epoch. Aborts with diagnostics if any loss turns non-finite.
pub fn train(
    mut model: ReflModel,
    data: &[TrainExample],
    val: &ValData,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutput, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    config.validate().map_err(TrainError::Validation)?;
    let mut baseline = RewardBaseline::default();
    // Prime the baseline on a few samples so even the first optimizer step
    // sees centered rewards.
    for (i, ex) in data.iter().take(8).enumerate() {
        let (fr, _) = model.forward_traced(&ex.x, &ex.graph)?;
        let (y, r) = model.decode(&fr, DecodeMode::Sample { seed: derive_seed(config.seed, 5, i as u64) });
        baseline.update(delta_con(&y, &r, &ex.x, ex.kb.as_ref()) as f64);
    }
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, crate::autodiff::ParameterSet)> = None;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        shuffle(&mut order, derive_seed(config.seed, 29, epoch as u64));

        let mut epoch_stats = BatchStats::default();
        for (step, chunk) in order.chunks(config.batch).enumerate() {
            let batch: Vec<&TrainExample> = chunk.iter().map(|&i| &data[i]).collect();
            let seeds: Vec<u64> = chunk
                .iter()
                .map(|&i| derive_seed(config.seed, 1 + epoch as u64, i as u64))
                .collect();
            let (stats, grads) =
                total_loss(&model, &batch, config, baseline.value(), baseline.scale(), &seeds)?;
            if !stats.total_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    step,
                    value: stats.total_loss,
                });
            }
            model.params.adam_update(&grads, config.lr)?;
            epoch_stats.total_loss += stats.total_loss;
            epoch_stats.labeled_loss_sum += stats.labeled_loss_sum;
            epoch_stats.labeled_count += stats.labeled_count;
            epoch_stats.consistency_loss_sum += stats.consistency_loss_sum;
            epoch_stats.size_loss_sum += stats.size_loss_sum;
            epoch_stats.delta_con_sum += stats.delta_con_sum;
            epoch_stats.examples += stats.examples;
            // The baseline was frozen while the batch ran; advance it now,
            // one example at a time, on the training thread.
            for &d in &stats.delta_cons {
                baseline.update(d as f64);
            }
        }

        let metrics = validate_epoch(&model, val, epoch, &epoch_stats, baseline.value(), config)?;
        on_epoch(&metrics);
        // Board accuracy drives checkpoint selection; for graph tasks the
        // board-level accuracy figure is the approximation ratio.
        let score = metrics.val_approx_ratio.unwrap_or(metrics.val_board_accuracy);
        let replace = best.as_ref().map_or(true, |(s, _, _)| score >= *s);
        if replace {
            best = Some((score, epoch, model.params.clone()));
        }
        epochs.push(metrics);
    }

    let (_, best_epoch, params) = best.expect("at least one epoch ran");
    let best_model = ReflModel { config: model.config.clone(), params };
    Ok(TrainOutput { model: best_model, best_epoch, epochs })
}

fn validate_epoch(
    model: &ReflModel,
    val: &ValData,
    epoch: usize,
    stats: &BatchStats,
    baseline: f64,
    config: &TrainConfig,
) -> Result<EpochMetrics, TrainError> {
    let (metrics, _) = match val {
        ValData::Sudoku { backend, records } => evaluate_sudoku(
            model,
            *backend,
            records,
            Selector::Reflection,
            derive_seed(config.seed, 37, epoch as u64),
        )?,
        ValData::Graphs { task, instances } => evaluate_graphs(
            model,
            *task,
            instances,
            Selector::Reflection,
            derive_seed(config.seed, 37, epoch as u64),
        )?,
    };
    let n = stats.examples.max(1) as f64;
    Ok(EpochMetrics {
        epoch,
        mean_loss: stats.total_loss / (stats.examples as f64 / config.batch as f64).max(1.0),
        mean_labeled_loss: stats.labeled_loss_sum / stats.labeled_count.max(1) as f64,
        mean_consistency_loss: stats.consistency_loss_sum / n,
        mean_size_loss: stats.size_loss_sum / n,
        mean_delta_con: stats.delta_con_sum as f64 / n,
        reward_baseline: baseline,
        val_board_accuracy: metrics.board_accuracy,
        val_raw_accuracy: metrics.raw_accuracy,
        val_mean_flagged: metrics.mean_flagged,
        val_recall: metrics.recall,
        val_approx_ratio: metrics.approx_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_sudoku;
    use crate::graph::Graph;
    use crate::model::ModelConfig;

    fn tiny_sudoku_setup() -> (ReflModel, Vec<TrainExample>) {
        let model = ReflModel::new(ModelConfig::sudoku(4, 10, 2), 3);
        let records = generate_sudoku(4, 6, 6, 17).unwrap();
        let examples = sudoku_examples(&records, 4, SudokuBackend::Sat, 1.0, 5);
        (model, examples)
    }

    #[test]
    fn delta_con_zero_flags_is_zero() {
        let (model, examples) = tiny_sudoku_setup();
        let ex = &examples[0];
        let fr = model.forward(&ex.x, &ex.graph).unwrap();
        let (y_hat, _) = model.decode(&fr, DecodeMode::Argmax);
        let r = ReflectionVector::zeros(16);
        assert_eq!(delta_con(&y_hat, &r, &ex.x, ex.kb.as_ref()), 0);
    }

    #[test]
    fn delta_con_swapped_pair_is_14() {
        // Swap two same-row cells of a solved board: 23 -> 37 when exactly
        // those two are flagged.
        let cells: Vec<Option<u8>> = (0..81)
            .map(|i| {
                let (r, c) = (i / 9, i % 9);
                Some((((3 * r + r / 3 + c) % 9) + 1) as u8)
            })
            .collect();
        let solved = Assignment::new(cells, vec![false; 81]);
        let mut swapped = solved.clone();
        let (a, b) = (swapped.get(0), swapped.get(3));
        swapped.set(0, b);
        swapped.set(3, a);
        let x = Assignment::blank(81);
        let kb = SudokuKb::new(9, SudokuBackend::Sat);
        let mut r = ReflectionVector::zeros(81);
        r.set(0, true);
        r.set(3, true);
        assert_eq!(delta_con(&swapped, &r, &x, &kb), 14);
    }

    #[test]
    fn delta_con_on_consistent_output_never_positive() {
        let (_, examples) = tiny_sudoku_setup();
        let ex = &examples[0];
        // The true solution is fully consistent: flagging cells cannot improve.
        let y = ex.y_true.clone().unwrap();
        let mut r = ReflectionVector::zeros(16);
        r.set(2, true);
        r.set(7, true);
        assert_eq!(delta_con(&y, &r, &ex.x, ex.kb.as_ref()), 0);
    }

    #[test]
    fn loss_size_examples() {
        assert!((loss_size_value(&vec![0.3; 81], 0.8) - 0.01).abs() < 1e-12);
        assert_eq!(loss_size_value(&vec![0.1; 81], 0.8), 0.0);
        assert!((loss_size_value(&vec![1.0; 81], 0.8) - 0.64).abs() < 1e-12);
    }

    #[test]
    fn labeled_loss_sends_no_gradient_to_reflection_head() {
        let (model, examples) = tiny_sudoku_setup();
        let ex = &examples[0];
        // alpha = beta = 0 isolates the supervised term.
        let losses =
            example_losses(&model, ex, 1.0, 1.0, 0.0, 0.0, 0.8, 0.0, 1.0, 42).unwrap();
        assert!(losses.labeled.is_some());
        for name in ["head.w_flag", "head.b_flag"] {
            match losses.grads.get(name) {
                None => {}
                Some(g) => assert!(g.iter().all(|&v| v == 0.0), "{name} got gradient"),
            }
        }
        // The output head does receive gradient.
        let g = losses.grads.get("head.w_out").expect("output head gradient");
        assert!(g.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn uniform_logits_labeled_loss_is_ln_classes() {
        let (model, examples) = tiny_sudoku_setup();
        let ex = &examples[0];
        let mut zeroed = ReflModel::new(model.config.clone(), 0);
        let names: Vec<String> = zeroed.params.names().map(String::from).collect();
        for name in names {
            let n = zeroed.params.get(&name).unwrap().numel();
            zeroed.params.set_values(&name, &vec![0.0; n]);
        }
        let losses = example_losses(&zeroed, ex, 1.0, 0.0, 0.0, 0.0, 0.8, 0.0, 1.0, 1).unwrap();
        let expected = (4.0f64).ln();
        assert!((losses.labeled.unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_reward_means_zero_consistency_gradient() {
        let (model, examples) = tiny_sudoku_setup();
        let ex = &examples[0];
        // Sample whatever comes; force reward to zero via baseline == delta.
        let probe = example_losses(&model, ex, 0.0, 1.0, 1.0, 0.0, 0.999, 0.0, 1.0, 9).unwrap();
        let d = probe.delta_con as f64;
        let at_baseline =
            example_losses(&model, ex, 0.0, 1.0, 1.0, 0.0, 0.999, d, 1.0, 9).unwrap();
        assert!(at_baseline.consistency.abs() < 1e-12);
        // With beta=0 and c extreme the size term is inert, so all gradients
        // collapse to (near) zero.
        for (name, g) in &at_baseline.grads {
            for &v in g {
                assert!(
                    v.abs() < 1e-9,
                    "{name} kept gradient {v} with zero reward"
                );
            }
        }
    }

    #[test]
    fn positive_reward_raises_sample_log_probability() {
        let (model, examples) = tiny_sudoku_setup();
        let ex = &examples[1];
        let seed = 33;
        let losses = example_losses(&model, ex, 0.0, 1.0, 1.0, 0.0, 0.8, -5.0, 1.0, seed).unwrap();
        // Baseline -5 guarantees a strictly positive reward (delta >= 0 on
        // sampled boards here).
        let (fr_before, _) = model.forward_traced(&ex.x, &ex.graph).unwrap();
        let (y, r) = model.decode(&fr_before, DecodeMode::Sample { seed });
        let lp_before = fr_before.joint_log_prob(&model.config, &y, &r);

        let mut stepped = ReflModel::new(model.config.clone(), 3);
        stepped.params = model.params.clone();
        stepped.params.adam_update(&losses.grads, 1e-3).unwrap();
        let fr_after = stepped.forward(&ex.x, &ex.graph).unwrap();
        let lp_after = fr_after.joint_log_prob(&stepped.config, &y, &r);
        assert!(
            lp_after > lp_before,
            "log-prob must increase: {lp_before} -> {lp_after}"
        );
    }

    #[test]
    fn consistency_loss_gradient_matches_finite_differences() {
        // Freeze the sampled pair and compare the tape gradient of
        // -reward * log_prob against central differences through a scalar
        // parameter direction.
        let model = ReflModel::new(ModelConfig::sudoku(4, 6, 1), 13);
        let records = generate_sudoku(4, 6, 1, 3).unwrap();
        let ex = &sudoku_examples(&records, 4, SudokuBackend::Sat, 1.0, 1)[0];
        let (fr, _) = model.forward_traced(&ex.x, &ex.graph).unwrap();
        let (y, r) = model.decode(&fr, DecodeMode::Sample { seed: 77 });
        let reward = delta_con(&y, &r, &ex.x, ex.kb.as_ref()) as f64 - 0.25;

        let loss_at = |m: &ReflModel| -> f64 {
            let fr = m.forward(&ex.x, &ex.graph).unwrap();
            -reward * fr.joint_log_prob(&m.config, &y, &r)
        };
        // Tape gradient via the public builder with the same frozen sample:
        // recompute by hand using joint_log_prob_node.
        let (_, mut trace) = model.forward_traced(&ex.x, &ex.graph).unwrap();
        let lp = joint_log_prob_node(&model, &mut trace, &y, &r).unwrap();
        let loss = trace.tape.scale(lp, -reward).unwrap();
        let store = trace.tape.backward(loss).unwrap();
        let grads = trace.parameter_gradients(&store);

        let mut worst: f64 = 0.0;
        let eps = 1e-5;
        for name in ["embed", "round00.w_msg", "head.w_flag", "head.w_out"] {
            let base = model.params.get(name).unwrap().data.clone();
            let g = grads.get(name).cloned().unwrap_or_else(|| vec![0.0; base.len()]);
            // Probe a handful of coordinates.
            for ci in (0..base.len()).step_by((base.len() / 7).max(1)) {
                let mut probe = ReflModel::new(model.config.clone(), 0);
                probe.params = model.params.clone();
                let mut plus = base.clone();
                plus[ci] += eps;
                probe.params.set_values(name, &plus);
                let f_plus = loss_at(&probe);
                let mut minus = base.clone();
                minus[ci] -= eps;
                probe.params.set_values(name, &minus);
                let f_minus = loss_at(&probe);
                let fd = (f_plus - f_minus) / (2.0 * eps);
                let err = (g[ci] - fd).abs() / fd.abs().max(1e-3);
                worst = worst.max(err);
            }
        }
        assert!(worst < 1e-4, "finite-difference error {worst}");
    }

    #[test]
    fn batch_loss_reduces_to_supervised_when_weights_vanish() {
        let (model, examples) = tiny_sudoku_setup();
        let batch: Vec<&TrainExample> = examples.iter().take(4).collect();
        let config = TrainConfig { alpha: 0.0, beta: 0.0, ..TrainConfig::default() };
        let seeds = vec![1, 2, 3, 4];
        let (stats, _) = total_loss(&model, &batch, &config, 0.0, 1.0, &seeds).unwrap();
        let manual: f64 = batch
            .iter()
            .zip(&seeds)
            .map(|(ex, &s)| {
                example_losses(&model, ex, 0.25, 0.25, 0.0, 0.0, 0.8, 0.0, 1.0, s)
                    .unwrap()
                    .labeled
                    .unwrap()
                    * 0.25
            })
            .sum();
        assert!((stats.total_loss - manual).abs() < 1e-9);
    }

    #[test]
    fn unlabeled_only_batch_is_finite() {
        let (model, examples) = tiny_sudoku_setup();
        let records = generate_sudoku(4, 6, 4, 99).unwrap();
        let unlabeled = sudoku_examples(&records, 4, SudokuBackend::Sat, 0.0, 5);
        let batch: Vec<&TrainExample> = unlabeled.iter().collect();
        let config = TrainConfig::default();
        let seeds: Vec<u64> = (0..batch.len() as u64).collect();
        let (stats, grads) = total_loss(&model, &batch, &config, 0.0, 1.0, &seeds).unwrap();
        assert!(stats.total_loss.is_finite());
        assert_eq!(stats.labeled_count, 0);
        assert!(!grads.is_empty());
        let _ = examples;
    }

    #[test]
    fn batch_loss_is_reproducible() {
        let (model, examples) = tiny_sudoku_setup();
        let batch: Vec<&TrainExample> = examples.iter().collect();
        let config = TrainConfig::default();
        let seeds: Vec<u64> = (0..batch.len() as u64).map(|i| derive_seed(3, 1, i)).collect();
        let (a, ga) = total_loss(&model, &batch, &config, 0.1, 1.0, &seeds).unwrap();
        let (b, gb) = total_loss(&model, &batch, &config, 0.1, 1.0, &seeds).unwrap();
        assert_eq!(a.total_loss, b.total_loss);
        assert_eq!(ga, gb);
    }

    #[test]
    fn labeled_fraction_controls_label_count() {
        let records = generate_sudoku(4, 6, 10, 31).unwrap();
        let half = sudoku_examples(&records, 4, SudokuBackend::Sat, 0.5, 5);
        assert_eq!(half.iter().filter(|e| e.y_true.is_some()).count(), 5);
        let all = sudoku_examples(&records, 4, SudokuBackend::Sat, 1.0, 5);
        assert_eq!(all.iter().filter(|e| e.y_true.is_some()).count(), 10);
    }

    #[test]
    fn short_training_run_is_deterministic_and_improves() {
        let records = generate_sudoku(4, 6, 40, 71).unwrap();
        let val_records = generate_sudoku(4, 6, 12, 72).unwrap();
        let run = || {
            let model = ReflModel::new(ModelConfig::sudoku(4, 10, 2), 3);
            let examples = sudoku_examples(&records, 4, SudokuBackend::Sat, 1.0, 5);
            let val = ValData::Sudoku { backend: SudokuBackend::Sat, records: val_records.clone() };
            let config = TrainConfig { epochs: 2, batch: 8, ..TrainConfig::default() };
            train(model, &examples, &val, &config, |_| {}).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.epochs.len(), 2);
        for (ea, eb) in a.epochs.iter().zip(&b.epochs) {
            assert_eq!(ea.mean_loss, eb.mean_loss, "epoch {}", ea.epoch);
            assert_eq!(ea.val_raw_accuracy, eb.val_raw_accuracy);
        }
        // Pipeline accuracy is already perfect by construction on uniquely
        // solvable boards; the labeled loss should still be dropping.
        assert!(a.epochs[1].mean_labeled_loss < a.epochs[0].mean_labeled_loss);
        assert_eq!(a.epochs[0].val_board_accuracy, 1.0);
    }

    #[test]
    fn graph_examples_train_a_step() {
        let instances = crate::data::generate_graph_dataset(GraphTask::Clique, 8, 0.5, 6, 3).unwrap();
        let examples = graph_examples(&instances, GraphTask::Clique, 1.0, 4);
        let model = ReflModel::new(ModelConfig::graph(GraphTask::Clique, 8, 2), 6);
        let batch: Vec<&TrainExample> = examples.iter().collect();
        let config = TrainConfig::default();
        let seeds: Vec<u64> = (0..batch.len() as u64).collect();
        let (stats, grads) = total_loss(&model, &batch, &config, 0.0, 1.0, &seeds).unwrap();
        assert!(stats.total_loss.is_finite());
        assert!(grads.contains_key("embed"));
        let g = Graph::new(2);
        let _ = g;
    }

    #[test]
    fn rejects_bad_config() {
        let bad = TrainConfig { c: 1.5, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { alpha: -1.0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
    }
}
