//! Source pre-training and the alternating split / fine-tune adaptation loop.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapt::{
    adabn_update, dtc_refine, extract_features, kmeans, overcluster_k, pregenerate_labels, ClusterModel, KMeansOptions,
    PseudoLabelSet,
};
use crate::data::{augment_batch, AugmentSpec, BalancedBatches, LabeledDataset};
use crate::error::{invalid, shape, Result};
use crate::nn::{blur, cross_entropy, ema_update, Adam, Classifier, LossTarget, Matrix, Mode, Optimizer, Sgd};
use crate::split::{labelwise_split, per_sample_loss, SplitAssignment};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
        #[serde(default)]
        momentum: f64,
        #[serde(default)]
        weight_decay: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
        #[serde(default)]
        weight_decay: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_adam_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn adam(lr: f64, weight_decay: f64) -> Self {
        OptimizerConfig::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { lr, .. } | OptimizerConfig::Adam { lr, .. } => lr,
        }
    }

    pub fn with_lr(self, new_lr: f64) -> Self {
        match self {
            OptimizerConfig::Sgd {
                momentum, weight_decay, ..
            } => OptimizerConfig::Sgd {
                lr: new_lr,
                momentum,
                weight_decay,
            },
            OptimizerConfig::Adam {
                beta1,
                beta2,
                eps,
                weight_decay,
                ..
            } => OptimizerConfig::Adam {
                lr: new_lr,
                beta1,
                beta2,
                eps,
                weight_decay,
            },
        }
    }

    pub fn build(&self) -> Result<Optimizer> {
        Ok(match *self {
            OptimizerConfig::Sgd {
                lr,
                momentum,
                weight_decay,
            } => Optimizer::Sgd(Sgd::new(lr, momentum, weight_decay)?),
            OptimizerConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
                weight_decay,
            } => Optimizer::Adam(Adam::new(lr, beta1, beta2, eps, weight_decay)?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Fixed,
    /// Half-cosine decay to zero over all iterations of the run.
    Cosine,
}

impl LrSchedule {
    pub fn lr_at(self, base: f64, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Fixed => base,
            LrSchedule::Cosine => {
                let t = step as f64 / total.max(1) as f64;
                base * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

/// Hyper-parameters for source training and for adaptation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    /// Must be even during adaptation: half cleaner, half noisier.
    pub batch_size: usize,
    pub epochs: usize,
    /// Fraction of each pseudo-label class kept in the cleaner subset.
    pub split_ratio: f64,
    /// EMA momentum of the teacher, applied after every iteration.
    pub ema_lambda: f64,
    pub augment: AugmentSpec,
    /// Momentum of the batch-norm population statistics during AdaBN.
    pub adabn_lambda: f64,
    pub adabn_batch_size: usize,
    /// Feed a second softmax of the probabilities to the training losses.
    pub blur_predictions: bool,
    pub seed: u64,
    pub lr_schedule: LrSchedule,
    /// k-means restarts used by the cluster refinement.
    pub kmeans_restarts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::adam(2e-4, 1e-4),
            batch_size: 128,
            epochs: 30,
            split_ratio: 0.2,
            ema_lambda: 0.99,
            augment: AugmentSpec::default(),
            adabn_lambda: 0.9,
            adabn_batch_size: 128,
            blur_predictions: true,
            seed: 0,
            lr_schedule: LrSchedule::Fixed,
            kmeans_restarts: 4,
        }
    }
}

impl TrainConfig {
    /// Defaults for supervised source training.
    pub fn source_default() -> Self {
        Self {
            optimizer: OptimizerConfig::adam(1e-3, 1e-4),
            batch_size: 64,
            epochs: 20,
            blur_predictions: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be positive"));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio <= 1.0) {
            return Err(invalid(format!("split_ratio {} must lie in (0, 1]", self.split_ratio)));
        }
        if !(0.0..=1.0).contains(&self.ema_lambda) {
            return Err(invalid("ema_lambda must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.adabn_lambda) {
            return Err(invalid("adabn_lambda must lie in [0, 1)"));
        }
        if self.adabn_batch_size == 0 || self.kmeans_restarts == 0 {
            return Err(invalid("adabn_batch_size and kmeans_restarts must be positive"));
        }
        self.augment.validate()?;
        self.optimizer.build().map(|_| ())
    }

    /// Adaptation additionally packs cleaner and noisier samples 1:1.
    pub fn validate_for_adaptation(&self) -> Result<()> {
        self.validate()?;
        if !self.batch_size.is_multiple_of(2) {
            return Err(invalid(format!("batch_size {} must be even", self.batch_size)));
        }
        Ok(())
    }
}

/// Accuracy, per-class recall and confusion counts (`confusion[truth][pred]`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `None` for classes absent from the data.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub confusion: Vec<Vec<usize>>,
}

/// Eval-mode single-view accuracy on fully labeled data.
pub fn evaluate(model: &Classifier, data: &LabeledDataset) -> Result<Evaluation> {
    let truth = data.known_labels()?;
    let predictions = model.predict(data.features())?;
    Ok(evaluate_predictions(&predictions, &truth, data.num_classes()))
}

pub fn evaluate_predictions(predictions: &[usize], truth: &[usize], num_classes: usize) -> Evaluation {
    let k = num_classes.max(predictions.iter().chain(truth).map(|&c| c + 1).max().unwrap_or(0));
    let mut confusion = vec![vec![0usize; k]; k];
    for (&p, &t) in predictions.iter().zip(truth) {
        confusion[t][p] += 1;
    }
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    let per_class_accuracy = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let total: usize = row.iter().sum();
            (total > 0).then(|| row[c] as f64 / total as f64)
        })
        .collect();
    Evaluation {
        accuracy: correct as f64 / truth.len().max(1) as f64,
        per_class_accuracy,
        confusion,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceReport {
    pub epoch_losses: Vec<f64>,
    pub final_train_accuracy: f64,
}

/// Supervised cross-entropy training on the labeled source domain.
pub fn train_source(model: &mut Classifier, source: &LabeledDataset, config: &TrainConfig) -> Result<SourceReport> {
    config.validate()?;
    let labels = source.known_labels()?;
    if source.dim() != model.input_width() {
        return Err(shape(format!(
            "source has {} features, model expects {}",
            source.dim(),
            model.input_width()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optimizer = config.optimizer.build()?;
    let base_lr = config.optimizer.lr();
    let n = source.len();
    let batch = config.batch_size.min(n);
    let per_epoch = n.div_ceil(batch);
    let total = per_epoch * config.epochs;
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0;
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for idx in order.chunks(batch) {
            // a lone sample has no batch statistics to normalize with
            if idx.len() < 2 && n >= 2 {
                continue;
            }
            let x = source.features().select_rows(idx);
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let weights = vec![1.0 / idx.len() as f64; idx.len()];
            optimizer.set_lr(config.lr_schedule.lr_at(base_lr, step, total));
            let out = model.forward(&x, Mode::Train)?;
            loss_sum += training_loss(&out.probs, &y, config.blur_predictions)?;
            let grads = model.backward_with(
                &out.cache,
                LossTarget {
                    labels: &y,
                    weights: &weights,
                    blur: config.blur_predictions,
                },
            )?;
            optimizer.step(model, &grads)?;
            step += 1;
            batches += 1;
        }
        epoch_losses.push(loss_sum / batches.max(1) as f64);
    }
    let final_train_accuracy = evaluate(model, source)?.accuracy;
    Ok(SourceReport {
        epoch_losses,
        final_train_accuracy,
    })
}

fn training_loss(probs: &Matrix, labels: &[usize], blurred: bool) -> Result<f64> {
    if blurred {
        Ok(cross_entropy(&blur(probs), labels)?.0)
    } else {
        Ok(cross_entropy(probs, labels)?.0)
    }
}

/// Teacher labels for an augmented view: Eval-mode argmax, no gradients.
pub fn self_label(teacher: &Classifier, view: &Matrix) -> Result<Vec<usize>> {
    teacher.predict(view)
}

/// Per-epoch record of the adaptation loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Student accuracy on the target ground truth (evaluation only).
    pub target_accuracy: Option<f64>,
    pub teacher_accuracy: Option<f64>,
    /// Accuracy of the refined pre-generated labels.
    pub pseudo_label_accuracy: Option<f64>,
    pub cleaner_size: usize,
    pub noisier_size: usize,
    pub cleaner_precision: Option<f64>,
    pub mean_supervised_loss: f64,
    /// `None` when the noisier subset is empty.
    pub mean_self_loss: Option<f64>,
}

/// Student, EMA teacher and optimizer carried across adaptation epochs.
#[derive(Debug, Clone)]
pub struct AdaptState {
    pub student: Classifier,
    pub teacher: Classifier,
    pub optimizer: Optimizer,
    base_lr: f64,
    step: usize,
    total_steps: usize,
    epoch: usize,
}

impl AdaptState {
    /// The teacher starts as a copy of the student.
    pub fn new(student: Classifier, config: &TrainConfig, num_samples: usize) -> Result<Self> {
        config.validate_for_adaptation()?;
        Ok(Self {
            teacher: student.clone(),
            student,
            optimizer: config.optimizer.build()?,
            base_lr: config.optimizer.lr(),
            step: 0,
            total_steps: num_samples.div_ceil(config.batch_size) * config.epochs,
            epoch: 0,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }
}

/// One epoch of joint training: cleaner samples against their pre-generated
/// labels, noisier samples (view 1) against the teacher's labels on view 2,
/// packed 1:1 into each batch with the two mean losses summed. The teacher
/// follows the student by EMA after every optimizer step.
///
/// With an empty noisier subset the epoch degenerates to plain fine-tuning on
/// the pre-generated labels.
pub fn ssnll_epoch<R: Rng>(
    state: &mut AdaptState,
    target: &LabeledDataset,
    pseudo: &PseudoLabelSet,
    assign: &SplitAssignment,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<EpochMetrics> {
    let n = target.len();
    if pseudo.len() != n || assign.len() != n {
        return Err(shape(format!(
            "{n} target samples, {} pseudo labels, {} split entries",
            pseudo.len(),
            assign.len()
        )));
    }
    if !config.batch_size.is_multiple_of(2) {
        return Err(invalid("batch_size must be even"));
    }
    let iterations = n.div_ceil(config.batch_size);
    let degenerate = assign.noisier.is_empty();
    let half = config.batch_size / 2;
    let cleaner_quota = if degenerate { config.batch_size } else { half };
    let mut sampler = BalancedBatches::new(
        assign.cleaner_by_class.clone(),
        cleaner_quota,
        ChaCha8Rng::from_rng(rng),
    )?;
    let mut noisier = NoisierStream::new(&assign.noisier, rng);
    let features = target.features();

    let mut sup_total = 0.0;
    let mut self_total = 0.0;
    for _ in 0..iterations {
        let clean_idx = sampler.next_batch();
        let clean_x = features.select_rows(&clean_idx);
        let mut labels: Vec<usize> = clean_idx.iter().map(|&i| pseudo.labels[i]).collect();

        let (batch, weights) = if degenerate {
            let w = vec![1.0 / clean_idx.len() as f64; clean_idx.len()];
            (clean_x, w)
        } else {
            let noisy_idx = noisier.take(half, rng);
            let raw = features.select_rows(&noisy_idx);
            let view1 = augment_batch(&raw, &config.augment, rng);
            let view2 = augment_batch(&raw, &config.augment, rng);
            labels.extend(self_label(&state.teacher, &view2)?);
            let mut w = vec![1.0 / clean_idx.len() as f64; clean_idx.len()];
            w.extend(std::iter::repeat_n(1.0 / noisy_idx.len() as f64, noisy_idx.len()));
            (clean_x.vstack(&view1)?, w)
        };

        let lr = config.lr_schedule.lr_at(state.base_lr, state.step, state.total_steps);
        state.optimizer.set_lr(lr);
        let out = state.student.forward(&batch, Mode::Train)?;
        let probs = if config.blur_predictions {
            blur(&out.probs)
        } else {
            out.probs.clone()
        };
        let (_, per_sample) = cross_entropy(&probs, &labels)?;
        let split_at = clean_idx.len();
        sup_total += mean(&per_sample[..split_at]);
        if !degenerate {
            self_total += mean(&per_sample[split_at..]);
        }
        let grads = state.student.backward_with(
            &out.cache,
            LossTarget {
                labels: &labels,
                weights: &weights,
                blur: config.blur_predictions,
            },
        )?;
        state.optimizer.step(&mut state.student, &grads)?;
        ema_update(&mut state.teacher, &state.student, config.ema_lambda)?;
        state.step += 1;
    }
    state.epoch += 1;

    let truth = target.labels();
    let accuracy_of = |model: &Classifier| -> Result<Option<f64>> {
        Ok(PseudoLabelSet {
            labels: model.predict(features)?,
            probs: Matrix::zeros(0, 0),
        }
        .accuracy(truth))
    };
    Ok(EpochMetrics {
        epoch: state.epoch,
        target_accuracy: accuracy_of(&state.student)?,
        teacher_accuracy: accuracy_of(&state.teacher)?,
        pseudo_label_accuracy: pseudo.accuracy(truth),
        cleaner_size: assign.cleaner.len(),
        noisier_size: assign.noisier.len(),
        cleaner_precision: assign.cleaner_precision(&pseudo.labels, truth),
        mean_supervised_loss: sup_total / iterations as f64,
        mean_self_loss: (!degenerate).then(|| self_total / iterations as f64),
    })
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}

/// Uniform sampling without replacement, reshuffling when exhausted.
struct NoisierStream {
    order: Vec<usize>,
    pos: usize,
}

impl NoisierStream {
    fn new<R: Rng>(indices: &[usize], rng: &mut R) -> Self {
        let mut order = indices.to_vec();
        order.shuffle(rng);
        Self { order, pos: 0 }
    }

    fn take<R: Rng>(&mut self, count: usize, rng: &mut R) -> Vec<usize> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Pseudo-label accuracy at each preprocessing stage (ground truth permitting).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageAccuracies {
    pub source_only: Option<f64>,
    pub adabn: Option<f64>,
    pub adabn_dtc: Option<f64>,
}

/// Everything produced by one adaptation run.
#[derive(Debug, Clone)]
pub struct SsnllOutcome {
    pub model: Classifier,
    pub teacher: Classifier,
    /// Student right after the batch-norm statistics update.
    pub post_adabn: Classifier,
    pub raw_pseudo: PseudoLabelSet,
    pub refined_pseudo: PseudoLabelSet,
    pub clusters: ClusterModel,
    pub last_split: SplitAssignment,
    pub last_losses: Vec<f64>,
    pub stages: StageAccuracies,
    pub metrics: Vec<EpochMetrics>,
}

impl SsnllOutcome {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.metrics.last().and_then(|m| m.target_accuracy)
    }

    pub fn best_accuracy(&self) -> Option<f64> {
        self.metrics.iter().filter_map(|m| m.target_accuracy).reduce(f64::max)
    }
}

/// Full adaptation: AdaBN, pseudo labels, cluster refinement (once), then
/// per epoch a fresh label-wise split followed by one training epoch.
///
/// Ground-truth target labels, when present, are only used for metrics.
pub fn run_ssnll(model: &Classifier, target: &LabeledDataset, config: &TrainConfig) -> Result<SsnllOutcome> {
    config.validate_for_adaptation()?;
    if target.dim() != model.input_width() {
        return Err(shape(format!(
            "target has {} features, model expects {}",
            target.dim(),
            model.input_width()
        )));
    }
    let truth = target.labels();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let source_only = pregenerate_labels(model, target)?.accuracy(truth);

    let mut student = model.clone();
    adabn_update(
        &mut student,
        target,
        config.adabn_lambda,
        config.adabn_batch_size,
        &mut rng,
    )?;
    let post_adabn = student.clone();
    let raw_pseudo = pregenerate_labels(&student, target)?;
    let features = extract_features(&student, target)?;
    let k = overcluster_k(target.num_classes(), target.len());
    let clusters = kmeans(
        &features,
        KMeansOptions {
            n_init: config.kmeans_restarts,
            ..KMeansOptions::new(k, rng.random())
        },
    )?;
    let refined_pseudo = dtc_refine(&raw_pseudo, &clusters)?;
    let stages = StageAccuracies {
        source_only,
        adabn: raw_pseudo.accuracy(truth),
        adabn_dtc: refined_pseudo.accuracy(truth),
    };

    let mut state = AdaptState::new(student, config, target.len())?;
    let mut metrics = Vec::with_capacity(config.epochs);
    let mut last = None;
    for _ in 0..config.epochs {
        let losses = per_sample_loss(&state.student, target, &refined_pseudo.labels)?;
        let split = labelwise_split(
            &losses,
            &refined_pseudo.labels,
            target.num_classes(),
            config.split_ratio,
        )?;
        metrics.push(ssnll_epoch(
            &mut state,
            target,
            &refined_pseudo,
            &split,
            config,
            &mut rng,
        )?);
        last = Some((split, losses));
    }
    let (last_split, last_losses) = last.expect("epochs >= 1");
    Ok(SsnllOutcome {
        model: state.student,
        teacher: state.teacher,
        post_adabn,
        raw_pseudo,
        refined_pseudo,
        clusters,
        last_split,
        last_losses,
        stages,
        metrics,
    })
}
