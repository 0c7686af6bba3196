//! Loss, optimizer, training loop and the two evaluation protocols.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{KeyValues, KvError};
use crate::error::{NnError, PipelineError, TrainError};
use crate::imu::StepSegment;
use crate::model::{InitScheme, Model, ModelConfig, Regressor};
use crate::nn::Mode;
use crate::pipeline::{build_from_partition, split_steps, subject_folds, AugmentSpec, Dataset, SplitMode, SplitSpec, StepPartition};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::trajectory::{
    aggregate_report, assemble_absolute, per_axis_error, reconstruct, ErrorReport, Protocol, StepError, Trajectory,
};

fn check_pair<T: Scalar>(op: &'static str, pred: &Tensor<T>, target: &Tensor<T>) -> Result<(), NnError> {
    if pred.shape() != target.shape() {
        return Err(NnError::shape(op, format!("{:?}", target.shape()), format!("{:?}", pred.shape())));
    }
    Ok(())
}

fn sum_squares<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> f64 {
    pred.data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p.to_f64_lossy() - t.to_f64_lossy();
            d * d
        })
        .sum()
}

/// Root of the mean squared error over all elements.
pub fn rmse<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64, NnError> {
    check_pair("rmse", pred, target)?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    Ok((sum_squares(pred, target) / pred.len() as f64).sqrt())
}

/// RMSE and its gradient with respect to `pred`. At zero residual the
/// gradient is taken as zero.
pub fn rmse_grad<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>), NnError> {
    let r = rmse(pred, target)?;
    if r == 0.0 {
        return Ok((0.0, Tensor::zeros(pred.shape())));
    }
    let scale = T::of(1.0 / (pred.len() as f64 * r));
    let g = pred.data().iter().zip(target.data()).map(|(&p, &t)| (p - t) * scale).collect();
    Ok((r, Tensor::from_vec(pred.shape(), g)?))
}

/// `RMSE_X + w1 RMSE_Y + w2 RMSE_Z`.
pub fn fused_loss<T: Scalar>(preds: &[Tensor<T>], targets: &[Tensor<T>], w1: f64, w2: f64) -> Result<f64, NnError> {
    Ok(fused_loss_grad(preds, targets, w1, w2)?.0)
}

/// [`fused_loss`] with gradients for each prediction.
pub fn fused_loss_grad<T: Scalar>(
    preds: &[Tensor<T>],
    targets: &[Tensor<T>],
    w1: f64,
    w2: f64,
) -> Result<(f64, Vec<Tensor<T>>), NnError> {
    if preds.len() != 3 || targets.len() != 3 {
        return Err(NnError::shape("fused_loss", "3 axes", format!("{} / {}", preds.len(), targets.len())));
    }
    let weights = [1.0, w1, w2];
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(3);
    for ((p, t), w) in preds.iter().zip(targets).zip(weights) {
        let (r, g) = rmse_grad(p, t)?;
        loss += w * r;
        let wt = T::of(w);
        grads.push(g.map(|v| v * wt));
    }
    Ok((loss, grads))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shapes: &[&[usize]]) -> Self {
        AdamState {
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            t: 0,
        }
    }

    pub fn for_model(model: &Model<T>) -> Self {
        let shapes: Vec<&[usize]> = model.params().into_iter().map(|p| p.shape()).collect();
        Self::new(&shapes)
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<(), NnError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(NnError::shape(
            "adam_step",
            format!("{} parameter tensors", state.m.len()),
            format!("{} params / {} grads", params.len(), grads.len()),
        ));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        g.expect_shape("adam_step", p.shape())?;
        m.expect_shape("adam_step", p.shape())?;
    }
    state.t += 1;
    let t = state.t as i32;
    let step = cfg.lr * (1.0 - cfg.beta2.powi(t)).sqrt() / (1.0 - cfg.beta1.powi(t));
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (c1, c2) = (T::of(1.0 - cfg.beta1), T::of(1.0 - cfg.beta2));
    let step = T::of(step);
    // Epsilon is applied to the bias-corrected second moment.
    let eps = T::of(cfg.epsilon * (1.0 - cfg.beta2.powi(t)).sqrt());
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        let it = p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
        for ((pv, &gv), (mv, vv)) in it {
            *mv = b1 * *mv + c1 * gv;
            *vv = b2 * *vv + c2 * gv * gv;
            *pv -= step * *mv / (vv.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub w1: f64,
    pub w2: f64,
    pub seed: u64,
    /// Stop after this many epochs without a validation improvement.
    pub early_stop: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            epochs: 1000,
            batch_size: 100,
            w1: 10.0,
            w2: 10.0,
            seed: 0,
            early_stop: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        let a = &self.adam;
        if !(a.lr.is_finite() && a.lr >= 0.0) {
            return bad(format!("lr = {} must be >= 0", a.lr));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return bad(format!("betas ({}, {}) must lie in [0, 1)", a.beta1, a.beta2));
        }
        if !(a.epsilon > 0.0) {
            return bad(format!("epsilon = {} must be > 0", a.epsilon));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(self.w1 >= 0.0 && self.w2 >= 0.0) {
            return bad(format!("weights ({}, {}) must be >= 0", self.w1, self.w2));
        }
        if self.early_stop == Some(0) {
            return bad("early_stop patience must be positive".into());
        }
        Ok(())
    }

    pub fn to_kv(&self, prefix: &str) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set(&format!("{prefix}lr"), self.adam.lr);
        kv.set(&format!("{prefix}beta1"), self.adam.beta1);
        kv.set(&format!("{prefix}beta2"), self.adam.beta2);
        kv.set(&format!("{prefix}epsilon"), self.adam.epsilon);
        kv.set(&format!("{prefix}epochs"), self.epochs);
        kv.set(&format!("{prefix}batch_size"), self.batch_size);
        kv.set(&format!("{prefix}w1"), self.w1);
        kv.set(&format!("{prefix}w2"), self.w2);
        kv.set(&format!("{prefix}seed"), self.seed);
        kv.set(
            &format!("{prefix}early_stop"),
            self.early_stop.map_or_else(|| "none".to_string(), |p| p.to_string()),
        );
        kv
    }

    pub fn from_kv(kv: &KeyValues, prefix: &str, default_seed: u64) -> Result<Self, KvError> {
        let d = TrainConfig::default();
        let key = format!("{prefix}early_stop");
        let early_stop = match kv.get_str(&key) {
            None | Some("none") => None,
            Some(_) => Some(kv.require::<usize>(&key)?),
        };
        Ok(TrainConfig {
            adam: AdamConfig {
                lr: kv.get_or(&format!("{prefix}lr"), d.adam.lr)?,
                beta1: kv.get_or(&format!("{prefix}beta1"), d.adam.beta1)?,
                beta2: kv.get_or(&format!("{prefix}beta2"), d.adam.beta2)?,
                epsilon: kv.get_or(&format!("{prefix}epsilon"), d.adam.epsilon)?,
            },
            epochs: kv.get_or(&format!("{prefix}epochs"), d.epochs)?,
            batch_size: kv.get_or(&format!("{prefix}batch_size"), d.batch_size)?,
            w1: kv.get_or(&format!("{prefix}w1"), d.w1)?,
            w2: kv.get_or(&format!("{prefix}w2"), d.w2)?,
            seed: kv.get_or(&format!("{prefix}seed"), default_seed)?,
            early_stop,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean train-mode loss over the epoch's mini-batches.
    pub train_loss: f64,
    /// Infer-mode loss on the validation set (NaN without one).
    pub val_loss: f64,
    /// Infer-mode per-axis validation RMSE.
    pub rmse: [f64; 3],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were kept.
    pub best_epoch: Option<usize>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,rmse_x,rmse_y,rmse_z\n");
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch, r.train_loss, r.val_loss, r.rmse[0], r.rmse[1], r.rmse[2]
            ));
        }
        out
    }
}

/// Infer-mode loss summary of a model on a dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSummary {
    pub loss: f64,
    pub rmse: [f64; 3],
}

/// Infer-mode per-axis RMSE over a whole dataset and the fused loss built
/// from them.
pub fn evaluate_loss<T: Scalar>(reg: &Regressor<T>, ds: &Dataset, cfg: &TrainConfig) -> Result<LossSummary, TrainError> {
    if ds.is_empty() {
        return Err(TrainError::EmptyDataset("evaluation"));
    }
    let mut sq = [0.0; 3];
    let mut count = 0usize;
    let all: Vec<usize> = (0..ds.len()).collect();
    for chunk in all.chunks(cfg.batch_size.max(1)) {
        let x = ds.inputs::<T>(chunk);
        let targets = ds.targets::<T>(chunk);
        let preds = reg.predict(&x)?;
        for a in 0..3 {
            sq[a] += sum_squares(&preds[a], &targets[a]);
        }
        count += targets[0].len();
    }
    let rmse = sq.map(|s| (s / count as f64).sqrt());
    Ok(LossSummary {
        loss: rmse[0] + cfg.w1 * rmse[1] + cfg.w2 * rmse[2],
        rmse,
    })
}

fn dropout_rng(seed: u64, model: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15u64.wrapping_mul(model as u64 + 1))
}

fn check_compat<T: Scalar>(reg: &Regressor<T>, ds: &Dataset, name: &'static str) -> Result<(), TrainError> {
    let Some(w) = ds.windows.first() else {
        return Ok(());
    };
    let cfg = reg.config();
    let want_x = [crate::model::SENSOR_ROWS, crate::model::INPUT_LEN];
    if w.x.shape() != want_x || w.y.shape() != [3, cfg.out_len] {
        return Err(TrainError::InvalidConfig(format!(
            "{} windows are {:?} -> {:?}, model expects {:?} -> [3, {}]",
            name,
            w.x.shape(),
            w.y.shape(),
            want_x,
            cfg.out_len
        )));
    }
    Ok(())
}

/// Trains `reg` in place with [`train_observed`] and no observer.
pub fn train<T: Scalar>(reg: &mut Regressor<T>, train_ds: &Dataset, val_ds: &Dataset, cfg: &TrainConfig) -> Result<History, TrainError> {
    train_observed(reg, train_ds, val_ds, cfg, &mut |_| {})
}

/// Mini-batch training with seeded shuffling. The fused network minimizes
/// the fused loss; independent networks each minimize their own axis RMSE
/// with their own optimizer. The weights with the lowest validation loss
/// (per network, for independent models) are restored at the end.
pub fn train_observed<T: Scalar>(
    reg: &mut Regressor<T>,
    train_ds: &Dataset,
    val_ds: &Dataset,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<History, TrainError> {
    cfg.validate()?;
    if train_ds.is_empty() {
        return Err(TrainError::EmptyDataset("training"));
    }
    check_compat(reg, train_ds, "training")?;
    check_compat(reg, val_ds, "validation")?;
    let n_models = reg.models().len();
    let mut states: Vec<AdamState<T>> = reg.models().iter().map(|m| AdamState::for_model(m)).collect();
    let mut rngs: Vec<ChaCha8Rng> = (0..n_models).map(|i| dropout_rng(cfg.seed, i)).collect();
    let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_ds.len()).collect();
    let weights = [1.0, cfg.w1, cfg.w2];

    let mut history = History::default();
    let mut best: Vec<(f64, Option<Model<T>>)> = vec![(f64::INFINITY, None); n_models];
    let mut best_total = f64::INFINITY;
    let mut since_best = 0usize;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let x = train_ds.inputs::<T>(chunk);
            let targets = train_ds.targets::<T>(chunk);
            let loss = match reg {
                Regressor::Fused(m) => {
                    let (outs, cache) = m.forward(&x, Mode::Train, &mut rngs[0])?;
                    let (loss, grads) = fused_loss_grad(&outs, &targets, cfg.w1, cfg.w2)?;
                    if !loss.is_finite() {
                        return Err(TrainError::Diverged { epoch, batch, loss });
                    }
                    let g = m.backward(&cache, &grads)?;
                    adam_step(&mut m.params_mut(), &g, &mut states[0], &cfg.adam)?;
                    loss
                }
                Regressor::Independent(ms) => {
                    let mut loss = 0.0;
                    for (i, m) in ms.iter_mut().enumerate() {
                        let axis = m.axes()[0].index();
                        let (outs, cache) = m.forward(&x, Mode::Train, &mut rngs[i])?;
                        let (r, g) = rmse_grad(&outs[0], &targets[axis])?;
                        if !r.is_finite() {
                            return Err(TrainError::Diverged { epoch, batch, loss: r });
                        }
                        let pg = m.backward(&cache, &[g])?;
                        adam_step(&mut m.params_mut(), &pg, &mut states[i], &cfg.adam)?;
                        loss += weights[axis] * r;
                    }
                    loss
                }
            };
            total += loss * chunk.len() as f64;
        }
        let train_loss = total / train_ds.len() as f64;
        let (val_loss, rmse) = if val_ds.is_empty() {
            (f64::NAN, [f64::NAN; 3])
        } else {
            let s = evaluate_loss(reg, val_ds, cfg)?;
            (s.loss, s.rmse)
        };
        if !val_ds.is_empty() && !val_loss.is_finite() {
            return Err(TrainError::Diverged {
                epoch,
                batch: 0,
                loss: val_loss,
            });
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            rmse,
        };
        observer(&record);
        history.epochs.push(record);

        if val_ds.is_empty() {
            history.best_epoch = Some(epoch);
            continue;
        }
        for (i, m) in reg.models().into_iter().enumerate() {
            let score = match n_models {
                1 => val_loss,
                _ => rmse[m.axes()[0].index()],
            };
            if score < best[i].0 {
                best[i] = (score, Some(m.clone()));
            }
        }
        if val_loss < best_total {
            best_total = val_loss;
            history.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.early_stop.is_some_and(|p| since_best >= p) {
                break;
            }
        }
    }
    for (slot, (_, kept)) in reg.models_mut().into_iter().zip(best) {
        if let Some(m) = kept {
            *slot = m;
        }
    }
    Ok(history)
}

/// A reconstructed test step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepTrajectory {
    pub subject_id: String,
    pub step_index: usize,
    pub predicted: Trajectory,
    /// Reconstruction of the true targets over the same windows.
    pub reference: Trajectory,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: ErrorReport,
    pub per_step: Vec<StepError>,
    pub trajectories: Vec<StepTrajectory>,
}

fn column_major<T: Scalar>(preds: &[Tensor<T>; 3], row: usize) -> Tensor<f64> {
    let n = preds[0].shape()[1];
    let mut data = Vec::with_capacity(3 * n);
    for p in preds {
        data.extend(p.data()[row * n..(row + 1) * n].iter().map(|v| v.to_f64_lossy()));
    }
    Tensor::from_vec(&[3, n], data).expect("three rows")
}

/// Predicts every window of `test`, rebuilds each step's trajectory in
/// window order and scores it against the reconstruction of the true
/// targets.
pub fn evaluate<T: Scalar>(reg: &Regressor<T>, test: &Dataset, protocol: Protocol, batch_size: usize) -> Result<Evaluation, TrainError> {
    if test.is_empty() {
        return Err(TrainError::EmptyDataset("test"));
    }
    check_compat(reg, test, "test")?;
    let all: Vec<usize> = (0..test.len()).collect();
    let mut predicted = Vec::with_capacity(test.len());
    for chunk in all.chunks(batch_size.max(1)) {
        let preds = reg.predict(&test.inputs::<T>(chunk))?;
        predicted.extend((0..chunk.len()).map(|r| column_major(&preds, r)));
    }
    let mut groups: BTreeMap<(String, usize), Vec<usize>> = BTreeMap::new();
    let mut order = Vec::new();
    for (i, w) in test.windows.iter().enumerate() {
        let key = (w.provenance.subject_id.clone(), w.provenance.step_index);
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(i);
    }
    let mut per_step = Vec::with_capacity(order.len());
    let mut trajectories = Vec::with_capacity(order.len());
    for key in order {
        let mut idx = groups.remove(&key).expect("grouped");
        idx.sort_by_key(|&i| test.windows[i].provenance.imu_start);
        let origin = test.windows[idx[0]].provenance.origin;
        let pred_w: Vec<Tensor<f64>> = idx.iter().map(|&i| predicted[i].clone()).collect();
        let true_w: Vec<Tensor<f64>> = idx.iter().map(|&i| test.windows[i].y.clone()).collect();
        let (pred, reference) = if test.differential {
            (reconstruct(&pred_w, origin)?, reconstruct(&true_w, origin)?)
        } else {
            (assemble_absolute(&pred_w, origin)?, assemble_absolute(&true_w, origin)?)
        };
        let errors = per_axis_error(&pred, &reference.points)?;
        per_step.push(StepError {
            subject_id: key.0.clone(),
            step_index: key.1,
            errors,
            windows: idx.len(),
            points: pred.len(),
        });
        trajectories.push(StepTrajectory {
            subject_id: key.0,
            step_index: key.1,
            predicted: pred,
            reference,
        });
    }
    Ok(Evaluation {
        report: aggregate_report(&per_step, protocol)?,
        per_step,
        trajectories,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub test_subjects: Vec<String>,
    pub train_subjects: Vec<String>,
    pub partition: StepPartition,
    pub history: History,
    pub evaluation: Evaluation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossValidation {
    pub folds: Vec<FoldResult>,
    /// Fold with the lowest mean X error.
    pub best_fold: usize,
    /// Mean over folds of each fold's mean per-axis error.
    pub mean_error: [f64; 3],
}

impl fmt::Display for CrossValidation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<(String, ErrorReport)> = self
            .folds
            .iter()
            .map(|r| (format!("fold {} ({})", r.fold, r.test_subjects.join(" ")), r.evaluation.report.clone()))
            .collect();
        f.write_str(&crate::trajectory::report_table(&rows))?;
        writeln!(
            f,
            "best fold: {}; mean over folds: X {:.2} Y {:.2} Z {:.2} cm",
            self.best_fold, self.mean_error[0], self.mean_error[1], self.mean_error[2]
        )
    }
}

fn subjects_of(steps: &[StepSegment], idx: &[usize]) -> Vec<String> {
    let mut s: Vec<String> = idx.iter().map(|&i| steps[i].subject_id.clone()).collect();
    s.sort();
    s.dedup();
    s
}

/// Subject-disjoint k-fold cross-validation. Each fold trains a fresh
/// network (initialized from `init_seed`) and evaluates it on the held-out
/// subjects.
pub fn cross_validate<T: Scalar>(
    steps: &[StepSegment],
    k: usize,
    split_seed: u64,
    aug: &AugmentSpec,
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    init: InitScheme,
    init_seed: u64,
    observer: &mut dyn FnMut(usize, &EpochRecord),
) -> Result<CrossValidation, TrainError> {
    let subjects: Vec<String> = steps.iter().map(|s| s.subject_id.clone()).collect();
    subject_folds(&subjects, k, split_seed)?;
    let mut folds = Vec::with_capacity(k);
    for fold in 0..k {
        let split = SplitSpec {
            mode: SplitMode::kfold(k, fold),
            seed: split_seed,
        };
        let partition = split_steps(steps, &split)?;
        let test_subjects = subjects_of(steps, &partition.test);
        let mut fit: Vec<usize> = partition.train.iter().chain(&partition.val).copied().collect();
        fit.sort_unstable();
        let train_subjects = subjects_of(steps, &fit);
        if let Some(s) = test_subjects.iter().find(|s| train_subjects.contains(s)) {
            return Err(PipelineError::InvalidSpec(format!("subject {} in both train and test of fold {}", s, fold)).into());
        }
        let data = build_from_partition(steps, aug, &partition, split_seed)?;
        let mut reg = Regressor::<T>::build(model_cfg, init, init_seed)?;
        let history = train_observed(&mut reg, &data.train, &data.val, cfg, &mut |r| observer(fold, r))?;
        let evaluation = evaluate(&reg, &data.test, Protocol::IndependentWalker { fold }, cfg.batch_size)?;
        folds.push(FoldResult {
            fold,
            test_subjects,
            train_subjects,
            partition,
            history,
            evaluation,
        });
    }
    let best_fold = folds
        .iter()
        .min_by(|a, b| a.evaluation.report.mean[0].total_cmp(&b.evaluation.report.mean[0]))
        .map_or(0, |r| r.fold);
    let mut mean_error = [0.0; 3];
    for r in &folds {
        for a in 0..3 {
            mean_error[a] += r.evaluation.report.mean[a] / folds.len() as f64;
        }
    }
    Ok(CrossValidation {
        folds,
        best_fold,
        mean_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_of_constant_residual() {
        let t = Tensor::from_fn(&[4, 29], |i| i as f64);
        assert_eq!(rmse(&t, &t).unwrap(), 0.0);
        let p = t.map(|v| v + 0.25);
        assert!((rmse(&p, &t).unwrap() - 0.25).abs() < 1e-15);
        assert!(rmse(&p, &Tensor::zeros(&[4, 28])).is_err());
    }

    #[test]
    fn fused_loss_weights_y_residual() {
        let t: Vec<Tensor<f64>> = (0..3).map(|a| Tensor::from_fn(&[2, 29], |i| (i + a) as f64)).collect();
        let mut p = t.clone();
        assert_eq!(fused_loss(&p, &t, 10.0, 10.0).unwrap(), 0.0);
        p[1] = p[1].map(|v| v - 0.3);
        assert!((fused_loss(&p, &t, 10.0, 10.0).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::from_fn(&[3, 2], |i| i as f64);
        let before = p.clone();
        let mut st = AdamState::<f64>::new(&[&[3, 2]]);
        adam_step(&mut [&mut p], &[Tensor::zeros(&[3, 2])], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut p = Tensor::from_fn(&[5], |i| i as f64);
        let before = p.clone();
        let g = Tensor::from_vec(&[5], vec![3.0, -0.5, 1e-3, -20.0, 0.1]).unwrap();
        let mut st = AdamState::<f64>::new(&[&[5]]);
        adam_step(&mut [&mut p], &[g.clone()], &mut st, &AdamConfig::default()).unwrap();
        for i in 0..5 {
            let d = p.data()[i] - before.data()[i];
            assert!(d.abs() >= 0.0099 && d.abs() <= 0.01, "{d}");
            assert_eq!(d.signum(), -g.data()[i].signum());
        }
    }

    #[test]
    fn config_round_trips_through_kv() {
        let cfg = TrainConfig {
            early_stop: Some(7),
            seed: 11,
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::from_kv(&cfg.to_kv("train."), "train.", 0).unwrap(), cfg);
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
