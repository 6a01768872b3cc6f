//! Optimization and the evaluation protocol: SGD with momentum, a step
//! learning-rate schedule, class balancing by duplication, two-stage training
//! and nested cross-validation (leave-one-trial-out outside, k-fold inside).

mod report;

pub use report::{CvReport, InnerFoldLog, OuterFoldLog, SubjectSummary};

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Lgg, ModelConfig, ModelError};
use crate::montage::MontageGraph;
use crate::seed::derived_rng;
use crate::tensor::{Graph, Tensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("only class {present} present; both classes are required")]
    SingleClass { present: usize },
    #[error("non-finite {what} at epoch {epoch}")]
    Diverged { what: String, epoch: usize },
    #[error("non-finite gradient for `{name}`")]
    NonFiniteGradient { name: String },
    #[error("shape mismatch between parameters and {what}")]
    Shape { what: &'static str },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub momentum: f64,
    /// Epochs between learning-rate decays.
    pub lr_step: usize,
    pub lr_gamma: f64,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub stage2_lr: f64,
    pub inner_folds: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-2,
            momentum: 0.9,
            lr_step: 10,
            lr_gamma: 0.1,
            stage1_epochs: 25,
            stage2_epochs: 5,
            stage2_lr: 1e-3,
            inner_folds: 5,
            batch_size: 8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.base_lr > 0.0 && self.stage2_lr > 0.0 && self.lr_gamma > 0.0) {
            return fail("learning rates and lr_gamma must be positive");
        }
        if self.stage2_lr >= self.base_lr {
            return fail("stage2_lr must be smaller than base_lr");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail("momentum must lie in [0, 1)");
        }
        if self.inner_folds < 2 {
            return fail("inner_folds must be >= 2");
        }
        if self.lr_step == 0 {
            return fail("lr_step must be >= 1");
        }
        if self.batch_size < 2 {
            return fail("batch_size must be >= 2 (training-mode batch norm needs two samples)");
        }
        Ok(())
    }
}

/// `base_lr * lr_gamma^floor(epoch / lr_step)`.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> f64 {
    config.base_lr * config.lr_gamma.powi((epoch / config.lr_step) as i32)
}

/// Classical momentum: `v <- momentum * v + g; p <- p - lr * v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(params: &[(String, Tensor)], momentum: f64) -> Self {
        Self {
            momentum,
            velocity: params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }

    pub fn step(&mut self, params: &mut [(String, Tensor)], grads: &[Tensor], lr: f64) -> Result<(), TrainError> {
        if params.len() != grads.len() || params.len() != self.velocity.len() {
            return Err(TrainError::Shape { what: "gradients" });
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(TrainError::Shape { what: "gradients" });
            }
            if !g.is_finite() {
                return Err(TrainError::NonFiniteGradient { name: name.clone() });
            }
        }
        for (((_, p), g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((pv, gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vv = self.momentum * *vv + gv;
                *pv -= lr * *vv;
            }
        }
        Ok(())
    }
}

/// Appends random duplicates of under-represented classes (drawn with
/// replacement) until every class matches the largest. Originals keep their order.
pub fn balance_classes<R: Rng + ?Sized>(
    indices: &[usize],
    labels: &[usize],
    classes: usize,
    rng: &mut R,
) -> Result<Vec<usize>, TrainError> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for &i in indices {
        let l = labels[i];
        if l >= classes {
            return Err(TrainError::Protocol(format!("label {l} out of range")));
        }
        by_class[l].push(i);
    }
    if let Some(empty) = by_class.iter().position(Vec::is_empty) {
        let present = (0..classes).find(|&c| c != empty && !by_class[c].is_empty());
        return Err(match present {
            Some(present) => TrainError::SingleClass { present },
            None => TrainError::Protocol("no samples to balance".into()),
        });
    }
    let target = by_class.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = indices.to_vec();
    for members in &by_class {
        for _ in members.len()..target {
            out.push(members[rng.random_range(0..members.len())]);
        }
    }
    Ok(out)
}

/// One `(test, training)` split per trial, in trial order.
pub fn leave_one_trial_out(n: usize) -> Result<Vec<(usize, Vec<usize>)>, TrainError> {
    if n < 2 {
        return Err(TrainError::Protocol(format!("leave-one-trial-out needs at least 2 trials, got {n}")));
    }
    Ok((0..n)
        .map(|test| (test, (0..n).filter(|&i| i != test).collect()))
        .collect())
}

/// Shuffled k-fold partition; fold sizes differ by at most one, larger folds first.
pub fn kfold_split<R: Rng + ?Sized>(
    indices: &[usize],
    k: usize,
    rng: &mut R,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>, TrainError> {
    if k == 0 || indices.len() < k {
        return Err(TrainError::Protocol(format!(
            "{}-fold split needs at least {k} samples, got {}",
            k,
            indices.len()
        )));
    }
    let mut order = indices.to_vec();
    order.shuffle(rng);
    let (base, extra) = (order.len() / k, order.len() % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let val = order[start..start + size].to_vec();
        let train = order[..start].iter().chain(&order[start + size..]).copied().collect();
        folds.push((train, val));
        start += size;
    }
    Ok(folds)
}

/// Trials of one subject, as full-montage signals with class labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub signals: Vec<Tensor>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }

    pub fn input_len(&self) -> Option<usize> {
        self.signals.first().map(|s| s.shape()[1])
    }
}

/// Splits `order` into batches of `size`, folding a trailing single sample
/// into the previous batch so every batch has at least two samples.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().unwrap() = &order[start..];
    }
    out
}

/// One pass over `indices` in shuffled mini-batches. Returns the mean batch loss.
pub fn train_epoch<R: Rng>(
    model: &mut Lgg,
    sgd: &mut Sgd,
    data: &Dataset,
    indices: &[usize],
    lr: f64,
    batch_size: usize,
    epoch: usize,
    rng: &mut R,
) -> Result<f64, TrainError> {
    if indices.len() < 2 {
        return Err(TrainError::Protocol("training needs at least 2 samples".into()));
    }
    let mut order = indices.to_vec();
    order.shuffle(rng);
    let mut total = 0.0;
    let parts = batches(&order, batch_size);
    for batch in &parts {
        let refs: Vec<&Tensor> = batch.iter().map(|&i| &data.signals[i]).collect();
        let labels: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
        let input = model.batch_input(&refs)?;
        let mut g = Graph::new();
        let x = g.constant(input).map_err(|e| ModelError::Layer { layer: "input", source: e })?;
        let f = model.forward_train(&mut g, x, rng)?;
        let loss = g
            .softmax_cross_entropy(f.logits, &labels)
            .map_err(|e| ModelError::Layer { layer: "loss", source: e })?;
        let value = g.value(loss).data()[0];
        if !value.is_finite() {
            return Err(TrainError::Diverged { what: "loss".into(), epoch });
        }
        let grads = g
            .backward(loss)
            .map_err(|e| ModelError::Layer { layer: "backward", source: e })?;
        let grads: Vec<Tensor> = f.params.iter().map(|&v| grads.wrt(v)).collect();
        match sgd.step(&mut model.params_mut().trainable, &grads, lr) {
            Err(TrainError::NonFiniteGradient { name }) => {
                return Err(TrainError::Diverged {
                    what: format!("gradient of `{name}`"),
                    epoch,
                })
            }
            other => other?,
        }
        if !model.params().is_finite() {
            return Err(TrainError::Diverged { what: "parameters".into(), epoch });
        }
        total += value;
    }
    Ok(total / parts.len() as f64)
}

/// Eval-mode predicted class per trial.
pub fn predict(model: &Lgg, data: &Dataset, indices: &[usize], batch_size: usize) -> Result<Vec<usize>, TrainError> {
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(batch_size.max(1)) {
        let refs: Vec<&Tensor> = chunk.iter().map(|&i| &data.signals[i]).collect();
        let input = model.batch_input(&refs)?;
        let probs = model.predict_proba(&input)?;
        let classes = probs.shape()[1];
        for row in probs.data().chunks(classes) {
            out.push(argmax(row));
        }
    }
    Ok(out)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Eval-mode accuracy and mean cross-entropy in one pass.
pub fn score(model: &Lgg, data: &Dataset, indices: &[usize], batch_size: usize) -> Result<(f64, f64), TrainError> {
    if indices.is_empty() {
        return Err(TrainError::Protocol("cannot evaluate on an empty trial set".into()));
    }
    let (mut correct, mut loss) = (0usize, 0.0);
    for chunk in indices.chunks(batch_size.max(1)) {
        let refs: Vec<&Tensor> = chunk.iter().map(|&i| &data.signals[i]).collect();
        let probs = model.predict_proba(&model.batch_input(&refs)?)?;
        let classes = probs.shape()[1];
        for (row, &i) in probs.data().chunks(classes).zip(chunk) {
            let label = data.labels[i];
            correct += usize::from(argmax(row) == label);
            loss -= row[label].max(f64::MIN_POSITIVE).ln();
        }
    }
    let n = indices.len() as f64;
    Ok((correct as f64 / n, loss / n))
}

/// Fraction of trials whose predicted class equals the label.
pub fn evaluate(model: &Lgg, data: &Dataset, indices: &[usize], batch_size: usize) -> Result<f64, TrainError> {
    if indices.is_empty() {
        return Err(TrainError::Protocol("cannot evaluate on an empty trial set".into()));
    }
    let preds = predict(model, data, indices, batch_size)?;
    let correct = preds.iter().zip(indices).filter(|(p, &i)| **p == data.labels[i]).count();
    Ok(correct as f64 / indices.len() as f64)
}

/// Eval-mode mean cross-entropy over `indices`, batch by batch.
pub fn mean_loss(model: &Lgg, data: &Dataset, indices: &[usize], batch_size: usize) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for chunk in indices.chunks(batch_size.max(1)) {
        let refs: Vec<&Tensor> = chunk.iter().map(|&i| &data.signals[i]).collect();
        let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
        total += model.eval_loss(&model.batch_input(&refs)?, &labels)? * chunk.len() as f64;
    }
    Ok(total / indices.len() as f64)
}

/// Everything needed to build a fresh model.
#[derive(Debug, Clone, Copy)]
pub struct ModelSpec<'a> {
    pub config: &'a ModelConfig,
    pub montage: &'a MontageGraph,
    pub input_len: usize,
}

impl ModelSpec<'_> {
    pub fn build(&self, seed: u64) -> Result<Lgg, TrainError> {
        Ok(Lgg::new(self.config.clone(), self.montage, self.input_len, seed)?)
    }
}

// Stream tags for seed derivation.
const KFOLD: u64 = 1;
const INIT: u64 = 2;
const BALANCE: u64 = 3;
const SHUFFLE: u64 = 4;
const STAGE2: u64 = 5;

struct EpochBest {
    accuracy: f64,
    loss: f64,
    epoch: usize,
    model: Lgg,
}

/// Indices seen by one inner fold, recorded for leakage auditing.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerTrace {
    /// Balanced fold-training indices, duplicates included.
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Result {
    pub model: Lgg,
    pub best_fold: usize,
    pub folds: Vec<InnerFoldLog>,
    pub trace: Vec<InnerTrace>,
}

/// Inner k-fold training; returns the best fold's best-epoch parameters.
/// `stream` namespaces the derived seeds (the outer fold index in nested CV).
pub fn train_stage1(
    spec: ModelSpec<'_>,
    data: &Dataset,
    train_idx: &[usize],
    config: &TrainConfig,
    stream: u64,
) -> Result<Stage1Result, TrainError> {
    let classes = spec.config.classes;
    let seed = config.seed;
    let folds = kfold_split(train_idx, config.inner_folds, &mut derived_rng(seed, &[stream, KFOLD]))?;
    let mut logs = Vec::with_capacity(folds.len());
    let mut trace = Vec::with_capacity(folds.len());
    let mut best: Option<(f64, usize, Lgg)> = None;
    let mut fold0_init = None;
    for (f, (fold_train, val)) in folds.iter().enumerate() {
        let f64_idx = f as u64;
        let mut model = spec.build(crate::seed::derive_seed(seed, &[stream, f64_idx, INIT]))?;
        if f == 0 {
            fold0_init = Some(model.clone());
        }
        let balanced = match balance_classes(fold_train, &data.labels, classes, &mut derived_rng(seed, &[stream, f64_idx, BALANCE])) {
            Ok(b) => b,
            Err(TrainError::SingleClass { present }) => {
                warn!("stream {stream} fold {f}: training split holds only class {present}; fold skipped");
                trace.push(InnerTrace {
                    train: Vec::new(),
                    validation: val.clone(),
                });
                logs.push(InnerFoldLog {
                    validation_accuracy: None,
                    validation_loss: None,
                    best_epoch: None,
                    diverged_at: None,
                    single_class: true,
                    train_size: 0,
                    validation_size: val.len(),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        trace.push(InnerTrace {
            train: balanced.clone(),
            validation: val.clone(),
        });
        let mut sgd = Sgd::new(&model.params().trainable, config.momentum);
        let mut rng = derived_rng(seed, &[stream, f64_idx, SHUFFLE]);
        let mut fold_best: Option<EpochBest> = None;
        let mut diverged = None;
        for epoch in 0..config.stage1_epochs {
            let lr = lr_schedule(epoch, config);
            match train_epoch(&mut model, &mut sgd, data, &balanced, lr, config.batch_size, epoch, &mut rng) {
                Ok(loss) => debug!("stream {stream} fold {f} epoch {epoch}: loss {loss:.6}"),
                Err(TrainError::Diverged { what, epoch }) => {
                    warn!("stream {stream} fold {f}: non-finite {what} at epoch {epoch}; fold aborted");
                    diverged = Some(epoch);
                    break;
                }
                Err(e) => return Err(e),
            }
            // equal accuracy on a small validation set is common; lower loss breaks the tie
            let (acc, loss) = score(&model, data, val, config.batch_size)?;
            if fold_best
                .as_ref()
                .is_none_or(|b| acc > b.accuracy || (acc == b.accuracy && loss < b.loss))
            {
                fold_best = Some(EpochBest {
                    accuracy: acc,
                    loss,
                    epoch,
                    model: model.clone(),
                });
            }
        }
        logs.push(InnerFoldLog {
            validation_accuracy: fold_best.as_ref().map(|b| b.accuracy),
            validation_loss: fold_best.as_ref().map(|b| b.loss),
            best_epoch: fold_best.as_ref().map(|b| b.epoch),
            diverged_at: diverged,
            single_class: false,
            train_size: balanced.len(),
            validation_size: val.len(),
        });
        if let Some(b) = fold_best {
            if best.as_ref().is_none_or(|(acc, _, _)| b.accuracy > *acc) {
                best = Some((b.accuracy, f, b.model));
            }
        }
    }
    if logs.iter().all(|l| l.single_class) {
        // the outer training set has both classes, so this comes from the split
        return Err(TrainError::Protocol(
            "every inner fold has a single-class training split; use fewer inner folds".into(),
        ));
    }
    let (model, best_fold) = match best {
        Some((_, f, m)) => (m, f),
        None if logs.iter().all(|l| l.diverged_at.is_none()) => (fold0_init.expect("at least one fold"), 0),
        None => return Err(TrainError::Protocol("every inner fold diverged".into())),
    };
    Ok(Stage1Result {
        model,
        best_fold,
        folds: logs,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Result {
    pub model: Lgg,
    /// Set when fine-tuning diverged and the stage-1 candidate was kept.
    pub warning: Option<String>,
    pub loss_before: f64,
    pub loss_after: f64,
    /// Balanced combined training indices, duplicates included.
    pub train: Vec<usize>,
}

/// Fine-tunes `candidate` on all (balanced) training trials at `stage2_lr`.
pub fn train_stage2(
    candidate: &Lgg,
    data: &Dataset,
    train_idx: &[usize],
    config: &TrainConfig,
    stream: u64,
) -> Result<Stage2Result, TrainError> {
    let classes = candidate.config().classes;
    let seed = config.seed;
    let balanced = balance_classes(train_idx, &data.labels, classes, &mut derived_rng(seed, &[stream, STAGE2, BALANCE]))?;
    let loss_before = mean_loss(candidate, data, &balanced, config.batch_size)?;
    let mut model = candidate.clone();
    let mut sgd = Sgd::new(&model.params().trainable, config.momentum);
    let mut rng = derived_rng(seed, &[stream, STAGE2, SHUFFLE]);
    for epoch in 0..config.stage2_epochs {
        match train_epoch(&mut model, &mut sgd, data, &balanced, config.stage2_lr, config.batch_size, epoch, &mut rng) {
            Ok(_) => {}
            Err(TrainError::Diverged { what, epoch }) => {
                let msg = format!("stage 2 diverged (non-finite {what} at epoch {epoch}); stage-1 candidate kept");
                warn!("stream {stream}: {msg}");
                return Ok(Stage2Result {
                    model: candidate.clone(),
                    warning: Some(msg),
                    loss_before,
                    loss_after: loss_before,
                    train: balanced,
                });
            }
            Err(e) => return Err(e),
        }
    }
    let loss_after = mean_loss(&model, data, &balanced, config.batch_size)?;
    Ok(Stage2Result {
        model,
        warning: None,
        loss_before,
        loss_after,
        train: balanced,
    })
}

/// Indices touched while handling one outer fold.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterTrace {
    pub test: usize,
    pub inner: Vec<InnerTrace>,
    pub stage2_train: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub report: CvReport,
    /// Final model of each outer fold, in fold order.
    pub models: Vec<Lgg>,
    pub trace: Vec<OuterTrace>,
}

struct FoldOutput {
    log: OuterFoldLog,
    model: Lgg,
    trace: OuterTrace,
}

fn run_outer_fold(
    spec: ModelSpec<'_>,
    data: &Dataset,
    config: &TrainConfig,
    test: usize,
    train_idx: &[usize],
) -> Result<FoldOutput, TrainError> {
    let stream = test as u64;
    let s1 = train_stage1(spec, data, train_idx, config, stream)?;
    let s2 = train_stage2(&s1.model, data, train_idx, config, stream)?;
    let pred = predict(&s2.model, data, &[test], config.batch_size)?[0];
    let accuracy = if pred == data.labels[test] { 1.0 } else { 0.0 };
    info!(
        "outer fold {test}: best inner fold {} (val {:?}), test accuracy {accuracy}",
        s1.best_fold, s1.folds[s1.best_fold].validation_accuracy
    );
    Ok(FoldOutput {
        log: OuterFoldLog {
            test_index: test,
            label: data.labels[test],
            prediction: pred,
            accuracy,
            best_inner_fold: s1.best_fold,
            best_inner_validation_accuracy: s1.folds[s1.best_fold].validation_accuracy,
            stage2_loss_before: s2.loss_before,
            stage2_loss_after: s2.loss_after,
            stage2_warning: s2.warning,
            inner: s1.folds,
        },
        model: s2.model,
        trace: OuterTrace {
            test,
            inner: s1.trace,
            stage2_train: s2.train,
        },
    })
}

/// Nested cross-validation over one subject's trials. Outer folds run on a
/// pool of `jobs` threads; results do not depend on `jobs`.
pub fn run_nested_cv(
    spec: ModelSpec<'_>,
    data: &Dataset,
    config: &TrainConfig,
    jobs: usize,
) -> Result<CvOutcome, TrainError> {
    config.validate()?;
    spec.config.validate()?;
    if data.len() < config.inner_folds + 1 {
        return Err(TrainError::Protocol(format!(
            "nested cross-validation needs at least {} trials, got {}",
            config.inner_folds + 1,
            data.len()
        )));
    }
    let classes = spec.config.classes;
    let mut counts = vec![0usize; classes];
    for &l in &data.labels {
        *counts
            .get_mut(l)
            .ok_or_else(|| TrainError::Protocol(format!("label {l} out of range")))? += 1;
    }
    if let Some(present) = counts.iter().position(|&c| c == data.len()) {
        return Err(TrainError::SingleClass { present });
    }
    let splits = leave_one_trial_out(data.len())?;
    let run = |(test, train): &(usize, Vec<usize>)| run_outer_fold(spec, data, config, *test, train);
    let outputs: Vec<Result<FoldOutput, TrainError>> = if jobs <= 1 {
        splits.iter().map(run).collect()
    } else {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| TrainError::Config(format!("thread pool: {e}")))?;
        pool.install(|| splits.par_iter().map(run).collect())
    };
    let mut folds = Vec::with_capacity(outputs.len());
    let mut models = Vec::with_capacity(outputs.len());
    let mut trace = Vec::with_capacity(outputs.len());
    for o in outputs {
        let o = o?;
        folds.push(o.log);
        models.push(o.model);
        trace.push(o.trace);
    }
    let report = CvReport::new(folds, spec.config.clone(), config.clone());
    Ok(CvOutcome { report, models, trace })
}
