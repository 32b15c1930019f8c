use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::checkpoint::{predict_with, ModelCheckpoint, Provenance};
use super::hyper::HyperParams;
use super::network::{Gradients, Network};
use super::normalize::Normalization;
use super::LearnerError;
use crate::store::{Purpose, Sample, TrajectoryRecord};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const CLIP_NORM: f64 = 1.0;
pub const DEFAULT_FOLDS: usize = 3;
pub const DEFAULT_SENSOR_FLOOR: f64 = 0.15;

/// One trajectory as flat model inputs (`T x 3n`: q, qd, qdd) and torque
/// targets (`T x n`).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub id: String,
    pub purpose: Option<Purpose>,
    pub n_joints: usize,
    pub features: Vec<f64>,
    pub targets: Vec<f64>,
}

impl LabeledSequence {
    pub fn from_samples(id: impl Into<String>, purpose: Option<Purpose>, samples: &[Sample]) -> Self {
        let n = samples.first().map_or(0, |s| s.q.len());
        let mut features = Vec::with_capacity(samples.len() * 3 * n);
        let mut targets = Vec::with_capacity(samples.len() * n);
        for s in samples {
            features.extend_from_slice(&s.q);
            features.extend_from_slice(&s.qd);
            features.extend_from_slice(&s.qdd);
            targets.extend_from_slice(&s.tau);
        }
        Self { id: id.into(), purpose, n_joints: n, features, targets }
    }

    pub fn from_record(record: &TrajectoryRecord) -> Self {
        Self::from_samples(record.record_id.clone(), Some(record.purpose), &record.samples)
    }

    pub fn steps(&self) -> usize {
        if self.n_joints == 0 {
            0
        } else {
            self.targets.len() / self.n_joints
        }
    }
}

/// SHA-256 over sequence ids and values, recorded as training provenance.
pub fn data_hash(data: &[LabeledSequence]) -> String {
    let mut hasher = Sha256::new();
    for s in data {
        hasher.update((s.id.len() as u64).to_le_bytes());
        hasher.update(s.id.as_bytes());
        for v in s.features.iter().chain(&s.targets) {
            hasher.update(v.to_bits().to_le_bytes());
        }
    }
    hex::encode(hasher.finalize())
}

fn check_data(data: &[LabeledSequence], n_joints: usize) -> Result<(), LearnerError> {
    if data.is_empty() {
        return Err(LearnerError::EmptyDataset);
    }
    for s in data {
        if s.n_joints != n_joints {
            return Err(LearnerError::DimensionMismatch { what: "joints", expected: n_joints, found: s.n_joints });
        }
        if s.features.len() != 3 * s.targets.len() || s.steps() == 0 {
            return Err(LearnerError::DimensionMismatch {
                what: "features",
                expected: 3 * s.targets.len(),
                found: s.features.len(),
            });
        }
        if !s.features.iter().chain(&s.targets).all(|v| v.is_finite()) {
            return Err(LearnerError::NonFinite("training data"));
        }
    }
    Ok(())
}

/// Fresh model with weights drawn from `hp.rng_seed`.
pub fn init_model(hp: &HyperParams, n_joints: usize) -> Result<ModelCheckpoint, LearnerError> {
    hp.validate()?;
    if n_joints == 0 {
        return Err(LearnerError::DimensionMismatch { what: "joints", expected: 1, found: 0 });
    }
    let network = Network::init(3 * n_joints, hp.hidden_size, hp.n_recurrent_layers, n_joints, hp.rng_seed);
    ModelCheckpoint::from_parts(
        hp.clone(),
        n_joints,
        network,
        Normalization::identity(3 * n_joints),
        Normalization::identity(n_joints),
        Provenance::default(),
        None,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub held_out: Vec<String>,
    /// Held-out MAE in N m.
    pub mae: f64,
    /// Mean normalized training loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Held-out MAE in N m after each epoch; the last entry equals `mae`.
    pub validation_mae: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The fold model with the lowest held-out error.
    pub checkpoint: ModelCheckpoint,
    /// Mean held-out MAE over folds, N m.
    pub cross_validation_loss: f64,
    pub folds: Vec<FoldResult>,
}

/// Adam over a fixed list of parameter slices.
struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(sizes: &[usize]) -> Self {
        Self {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Learning rate annealed from `base` towards zero along a half cosine.
fn cosine_rate(base: f64, step: usize, total: usize) -> f64 {
    0.5 * base * (1.0 + (std::f64::consts::PI * step as f64 / total.max(1) as f64).cos())
}

/// Normalized training window; `inputs` feeds the lowest trainable layer.
struct Window {
    inputs: Vec<f64>,
    targets: Vec<f64>,
}

fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut fold_of = vec![0; n];
    for (rank, &idx) in order.iter().enumerate() {
        fold_of[idx] = rank % folds;
    }
    fold_of
}

/// Cuts non-overlapping windows at a seeded offset. Sequences shorter than
/// the window are skipped.
fn cut_windows(
    data: &[&LabeledSequence],
    len: usize,
    input_norm: &Normalization,
    output_norm: &Normalization,
    rng: &mut ChaCha8Rng,
) -> Vec<Window> {
    let mut windows = Vec::new();
    for s in data {
        let (steps, n) = (s.steps(), s.n_joints);
        if steps < len {
            log::warn!("sequence {} has {steps} steps, shorter than the {len}-step window; skipped", s.id);
            continue;
        }
        let offset = rng.random_range(0..(steps - len + 1).min(len));
        let mut start = offset;
        while start + len <= steps {
            windows.push(Window {
                inputs: input_norm.normalize(&s.features[start * 3 * n..(start + len) * 3 * n]),
                targets: output_norm.normalize(&s.targets[start * n..(start + len) * n]),
            });
            start += len;
        }
    }
    windows
}

/// Pooled MAE in N m over every step and joint of `data`.
fn held_out_mae(
    net: &Network,
    input_norm: &Normalization,
    output_norm: &Normalization,
    data: &[&LabeledSequence],
    window: usize,
) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for s in data {
        let pred = predict_with(net, input_norm, output_norm, &s.features, s.steps(), window);
        sum += pred.iter().zip(&s.targets).map(|(p, t)| (p - t).abs()).sum::<f64>();
        count += pred.len();
    }
    sum / count.max(1) as f64
}

enum Mode {
    EndToEnd,
    /// Layers below `first_trainable` and their outputs stay fixed.
    FineTune { first_trainable: usize },
}

fn cross_validate(
    base: &ModelCheckpoint,
    data: &[LabeledSequence],
    hp: &HyperParams,
    folds: usize,
    mode: Mode,
    view_id: &str,
) -> Result<TrainOutcome, LearnerError> {
    check_data(data, base.n_joints)?;
    if folds < 2 || folds > data.len() {
        return Err(LearnerError::InvalidFolds { folds, sequences: data.len() });
    }
    let n = base.n_joints;
    let fold_of = fold_assignment(data.len(), folds, hp.rng_seed);
    let first = match mode {
        Mode::EndToEnd => 0,
        Mode::FineTune { first_trainable } => first_trainable,
    };

    let mut results = Vec::with_capacity(folds);
    let mut models = Vec::with_capacity(folds);
    for fold in 0..folds {
        let train_set: Vec<&LabeledSequence> =
            data.iter().zip(&fold_of).filter(|(_, &f)| f != fold).map(|(s, _)| s).collect();
        let held: Vec<&LabeledSequence> =
            data.iter().zip(&fold_of).filter(|(_, &f)| f == fold).map(|(s, _)| s).collect();

        let (input_norm, output_norm) = match mode {
            Mode::EndToEnd => (
                Normalization::fit(3 * n, train_set.iter().map(|s| s.features.as_slice())),
                Normalization::fit(n, train_set.iter().map(|s| s.targets.as_slice())),
            ),
            Mode::FineTune { .. } => (base.input_norm.clone(), base.output_norm.clone()),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(hp.rng_seed);
        rng.set_stream(fold as u64 + 1);
        let mut windows = cut_windows(&train_set, hp.sequence_length, &input_norm, &output_norm, &mut rng);
        if windows.is_empty() {
            return Err(LearnerError::AllSequencesTooShort { window: hp.sequence_length });
        }
        let mut net = base.network.clone();
        if first > 0 {
            for w in windows.iter_mut() {
                w.inputs = net.hidden_until(first, &w.inputs, hp.sequence_length);
            }
        }

        let mut grad = Gradients::zeros_like(&net, first);
        let sizes: Vec<usize> = grad.slices().iter().map(|s| s.len()).collect();
        let mut adam = Adam::new(&sizes);
        let mut order: Vec<usize> = (0..windows.len()).collect();
        let mut epoch_losses = Vec::with_capacity(hp.epochs);
        let mut validation_mae = Vec::with_capacity(hp.epochs);
        let total_steps = hp.epochs * windows.len().div_ceil(hp.batch_size);
        let mut step = 0usize;
        for _ in 0..hp.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for batch in order.chunks(hp.batch_size) {
                grad.reset();
                let weight = 1.0 / batch.len() as f64;
                for &w in batch {
                    let win = &windows[w];
                    epoch_loss += net.loss_and_grad_from(first, &win.inputs, &win.targets, hp.sequence_length, &mut grad, weight)
                        * batch.len() as f64;
                }
                let norm = grad.norm();
                if norm > CLIP_NORM {
                    grad.scale(CLIP_NORM / norm);
                }
                let lr = cosine_rate(hp.learning_rate, step, total_steps);
                adam.step(net.param_slices_mut(first), grad.slices(), lr);
                step += 1;
            }
            epoch_losses.push(epoch_loss / windows.len() as f64);
            validation_mae.push(held_out_mae(&net, &input_norm, &output_norm, &held, hp.sequence_length));
        }

        let mae = *validation_mae.last().expect("at least one epoch");
        log::debug!("fold {fold}/{folds}: held-out MAE {mae:.4} N m");
        results.push(FoldResult {
            held_out: held.iter().map(|s| s.id.clone()).collect(),
            mae,
            epoch_losses,
            validation_mae,
        });
        models.push((net, input_norm, output_norm));
    }

    let cv = results.iter().map(|r| r.mae).sum::<f64>() / folds as f64;
    if !cv.is_finite() {
        return Err(LearnerError::NonFinite("cross-validation loss"));
    }
    let best = (0..folds)
        .min_by(|&a, &b| results[a].mae.total_cmp(&results[b].mae))
        .expect("at least two folds");
    let (network, input_norm, output_norm) = models.swap_remove(best);
    let parent_id = match mode {
        Mode::EndToEnd => None,
        Mode::FineTune { .. } => Some(base.checkpoint_id.clone()),
    };
    let checkpoint = ModelCheckpoint::from_parts(
        hp.clone(),
        n,
        network,
        input_norm,
        output_norm,
        Provenance { view_id: view_id.to_string(), data_hash: data_hash(data), parent_id },
        Some(cv),
    )?;
    Ok(TrainOutcome { checkpoint, cross_validation_loss: cv, folds: results })
}

/// Trains every layer of `ckpt` with `folds`-fold cross-validation over
/// whole sequences.
pub fn train(
    ckpt: &ModelCheckpoint,
    data: &[LabeledSequence],
    hp: &HyperParams,
    folds: usize,
    view_id: &str,
) -> Result<TrainOutcome, LearnerError> {
    hp.validate()?;
    if ckpt.network.layers.len() != hp.n_recurrent_layers || ckpt.hyperparams.hidden_size != hp.hidden_size {
        return Err(LearnerError::IncompatibleParent(
            "checkpoint architecture differs from the hyperparameters".into(),
        ));
    }
    cross_validate(ckpt, data, hp, folds, Mode::EndToEnd, view_id)
}

/// Number of layer groups: the readout plus every recurrent layer.
pub fn layer_groups(ckpt: &ModelCheckpoint) -> usize {
    ckpt.network.layers.len() + 1
}

/// Adapts the last `hp.unfrozen_layers` layer groups of `parent` (readout
/// first, then recurrent layers from the top down), keeping its
/// normalization and leaving every other weight untouched.
pub fn finetune(
    parent: &ModelCheckpoint,
    data: &[LabeledSequence],
    hp: &HyperParams,
    folds: usize,
    view_id: &str,
) -> Result<TrainOutcome, LearnerError> {
    hp.validate()?;
    let k = hp.unfrozen_layers;
    if k == 0 {
        return Err(LearnerError::NothingToAdapt);
    }
    let groups = layer_groups(parent);
    if k > groups {
        return Err(LearnerError::TooManyGroups { requested: k, available: groups });
    }
    if parent.hyperparams.n_recurrent_layers != hp.n_recurrent_layers || parent.hyperparams.hidden_size != hp.hidden_size {
        return Err(LearnerError::IncompatibleParent(format!(
            "parent has {} layers of width {}, hyperparameters ask for {} of width {}",
            parent.hyperparams.n_recurrent_layers,
            parent.hyperparams.hidden_size,
            hp.n_recurrent_layers,
            hp.hidden_size
        )));
    }
    let first_trainable = parent.network.layers.len() + 1 - k;
    cross_validate(parent, data, hp, folds, Mode::FineTune { first_trainable }, view_id)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint_id: Option<String>,
    /// Mean absolute error over all steps and joints, N m.
    pub mae: f64,
    pub per_joint_mae: Vec<f64>,
    /// Mean over joints of `tau_max + max |target|`.
    pub theoretical_max_mae: f64,
    pub sensor_floor: f64,
    /// MAE of predicting each joint's mean evaluation torque.
    pub baseline_mae: f64,
    pub measurements: usize,
}

impl EvalReport {
    pub fn within_bounds(&self) -> bool {
        self.mae >= 0.0 && self.mae <= self.theoretical_max_mae
    }
}

/// Scores an arbitrary predictor on evaluation sequences; the predictor
/// returns `T x n` torques for a sequence.
pub fn evaluate_with<F>(
    data: &[LabeledSequence],
    tau_max: &[f64],
    sensor_floor: f64,
    mut predict: F,
) -> Result<EvalReport, LearnerError>
where
    F: FnMut(&LabeledSequence) -> Vec<f64>,
{
    let Some(first) = data.first() else {
        return Err(LearnerError::EmptyDataset);
    };
    let n = first.n_joints;
    check_data(data, n)?;
    if let Some(s) = data.iter().find(|s| s.purpose.is_some_and(|p| p != Purpose::Evaluation)) {
        return Err(LearnerError::NotEvaluationData(s.id.clone()));
    }
    if tau_max.len() != n {
        return Err(LearnerError::DimensionMismatch { what: "tau_max", expected: n, found: tau_max.len() });
    }
    let mut abs_err = vec![0.0; n];
    let mut target_sum = vec![0.0; n];
    let mut target_max = vec![0.0f64; n];
    let mut steps = 0usize;
    for s in data {
        let pred = predict(s);
        if pred.len() != s.targets.len() {
            return Err(LearnerError::DimensionMismatch {
                what: "predictions",
                expected: s.targets.len(),
                found: pred.len(),
            });
        }
        for (k, (p, t)) in pred.iter().zip(&s.targets).enumerate() {
            abs_err[k % n] += (p - t).abs();
            target_sum[k % n] += t;
            target_max[k % n] = target_max[k % n].max(t.abs());
        }
        steps += s.steps();
    }
    let mean: Vec<f64> = target_sum.iter().map(|v| v / steps as f64).collect();
    let mut deviation = 0.0;
    for s in data {
        for (k, t) in s.targets.iter().enumerate() {
            deviation += (t - mean[k % n]).abs();
        }
    }
    let per_joint_mae: Vec<f64> = abs_err.iter().map(|e| e / steps as f64).collect();
    Ok(EvalReport {
        checkpoint_id: None,
        mae: per_joint_mae.iter().sum::<f64>() / n as f64,
        per_joint_mae,
        theoretical_max_mae: (0..n).map(|j| tau_max[j] + target_max[j]).sum::<f64>() / n as f64,
        sensor_floor,
        baseline_mae: deviation / (steps * n) as f64,
        measurements: steps,
    })
}

/// Evaluates a checkpoint with the recurrent state reset every
/// `sequence_length` steps, as during training.
pub fn evaluate(
    ckpt: &ModelCheckpoint,
    data: &[LabeledSequence],
    tau_max: &[f64],
    sensor_floor: f64,
) -> Result<EvalReport, LearnerError> {
    if let Some(s) = data.iter().find(|s| s.n_joints != ckpt.n_joints) {
        return Err(LearnerError::DimensionMismatch { what: "joints", expected: ckpt.n_joints, found: s.n_joints });
    }
    let window = ckpt.hyperparams.sequence_length;
    let mut report = evaluate_with(data, tau_max, sensor_floor, |s| {
        ckpt.predict_unchecked(&s.features, s.steps(), window)
    })?;
    report.checkpoint_id = Some(ckpt.checkpoint_id.clone());
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_are_balanced_and_cover_everything() {
        let fold_of = fold_assignment(10, 3, 5);
        let mut counts = [0; 3];
        fold_of.iter().for_each(|&f| counts[f] += 1);
        assert_eq!(counts, [4, 3, 3]);
    }

    #[test]
    fn windows_are_disjoint_and_full_length() {
        let seq = LabeledSequence {
            id: "s".into(),
            purpose: None,
            n_joints: 1,
            features: (0..300).map(|v| v as f64).collect(),
            targets: (0..100).map(|v| v as f64).collect(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let norm_in = Normalization::identity(3);
        let norm_out = Normalization::identity(1);
        let windows = cut_windows(&[&seq], 16, &norm_in, &norm_out, &mut rng);
        assert!(windows.len() >= 5);
        let starts: Vec<f64> = windows.iter().map(|w| w.targets[0]).collect();
        for pair in starts.windows(2) {
            assert_eq!(pair[1] - pair[0], 16.0);
        }
        assert!(windows.iter().all(|w| w.targets.len() == 16 && w.inputs.len() == 48));
    }
}
