use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{backward, forward_batch};
use super::{cross_entropy, softmax_row, TcnConfig, TcnError, TcnParameters};
use crate::tensorize::{mirror_normalized, ClassMode, NormParams, WindowSample, FRAME_FEATURES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without validation-loss improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Also train on every window with bid and ask exchanged.
    pub mirror_augment: bool,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, batch_size: 64, epochs: 20, patience: 3, seed: 42, mirror_augment: true }
    }
}

/// A normalised window with its per-timestep training targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub x: Array2<f64>,
    pub targets: Vec<Option<usize>>,
}

impl Prepared {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn final_target(&self) -> Option<usize> {
        self.targets.last().copied().flatten()
    }

    /// The side-mirrored window; spoof classes exchange, neutral is unchanged.
    pub fn mirrored(&self, classes: usize) -> Prepared {
        let swap = |y: usize| match classes {
            2 => 1 - y,
            _ => [0, 2, 1][y],
        };
        Prepared { x: mirror_normalized(&self.x), targets: self.targets.iter().map(|t| t.map(swap)).collect() }
    }
}

/// Normalises samples and maps labels to class targets. Windows whose first
/// frame has a one-sided book are skipped; the count is returned.
pub fn prepare(samples: &[WindowSample], norm: &NormParams, mode: ClassMode) -> (Vec<Prepared>, usize) {
    let mut out = Vec::with_capacity(samples.len());
    let mut skipped = 0;
    for s in samples {
        match norm.normalize(s) {
            Ok(x) => out.push(Prepared { x, targets: s.labels.iter().map(|&l| mode.target(l)).collect() }),
            Err(_) => skipped += 1,
        }
    }
    (out, skipped)
}

/// Inverse class frequency over all unmasked timesteps, `N / (C * N_c)`.
pub fn class_weights(data: &[Prepared], classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; classes];
    for p in data {
        for y in p.targets.iter().flatten() {
            if *y < classes {
                counts[*y] += 1;
            }
        }
    }
    let total: usize = counts.iter().sum();
    counts
        .iter()
        .map(|&c| if c == 0 { 1.0 } else { total as f64 / (classes as f64 * c as f64) })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Percent of windows whose final-timestep prediction matches.
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    /// `confusion[truth][predicted]`
    pub confusion: Vec<Vec<u64>>,
    /// Percent of unmasked timesteps predicted correctly.
    pub timestep_accuracy: f64,
    pub loss: f64,
    /// Weighted loss on final timesteps only.
    #[serde(default)]
    pub final_loss: f64,
    pub windows: usize,
}

/// Macro and per-class F1 in percent; a class with no true positives scores 0.
pub fn macro_f1(confusion: &[Vec<u64>]) -> (f64, Vec<f64>) {
    let c = confusion.len();
    let per: Vec<f64> = (0..c)
        .map(|k| {
            let tp = confusion[k][k] as f64;
            let predicted: u64 = confusion.iter().map(|row| row[k]).sum();
            let actual: u64 = confusion[k].iter().sum();
            if tp == 0.0 {
                0.0
            } else {
                let p = tp / predicted as f64;
                let r = tp / actual as f64;
                100.0 * 2.0 * p * r / (p + r)
            }
        })
        .collect();
    (per.iter().sum::<f64>() / c as f64, per)
}

fn argmax(row: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn stack(data: &[&Prepared], n: usize, features: usize) -> Result<(Array2<f64>, Vec<Option<usize>>), TcnError> {
    let mut x = Array2::zeros((data.len() * n, features));
    let mut targets = Vec::with_capacity(data.len() * n);
    for (b, p) in data.iter().enumerate() {
        if p.x.dim() != (n, features) || p.targets.len() != n {
            return Err(TcnError::ShapeMismatch(format!("window {:?} in a batch of n={n}", p.x.shape())));
        }
        x.slice_mut(s![b * n..(b + 1) * n, ..]).assign(&p.x);
        targets.extend_from_slice(&p.targets);
    }
    Ok((x, targets))
}

#[derive(Default)]
struct Tally {
    confusion: Vec<Vec<u64>>,
    steps_right: u64,
    steps: u64,
    loss_sum: f64,
    rows: usize,
    final_loss_sum: f64,
    weights: Vec<f64>,
}

impl Tally {
    fn new(weights: &[f64]) -> Self {
        let c = weights.len();
        Tally { confusion: vec![vec![0; c]; c], weights: weights.to_vec(), ..Default::default() }
    }

    fn add(&mut self, logits: &Array2<f64>, targets: &[Option<usize>], n: usize, loss: f64) {
        self.loss_sum += loss * logits.nrows() as f64;
        self.rows += logits.nrows();
        for (r, row) in logits.axis_iter(Axis(0)).enumerate() {
            let Some(y) = targets[r] else { continue };
            let pred = argmax(row);
            self.steps += 1;
            self.steps_right += u64::from(pred == y);
            if r % n == n - 1 {
                self.confusion[y][pred] += 1;
                let p = softmax_row(row);
                self.final_loss_sum -= self.weights[y] * p[y].max(f64::MIN_POSITIVE).ln();
            }
        }
    }

    fn finish(self) -> Metrics {
        let windows: u64 = self.confusion.iter().flatten().sum();
        let right: u64 = (0..self.confusion.len()).map(|k| self.confusion[k][k]).sum();
        let (macro_f1, per_class_f1) = macro_f1(&self.confusion);
        Metrics {
            accuracy: if windows == 0 { 0.0 } else { 100.0 * right as f64 / windows as f64 },
            macro_f1,
            per_class_f1,
            confusion: self.confusion,
            timestep_accuracy: if self.steps == 0 { 0.0 } else { 100.0 * self.steps_right as f64 / self.steps as f64 },
            loss: if self.rows == 0 { 0.0 } else { self.loss_sum / self.rows as f64 },
            final_loss: if windows == 0 { 0.0 } else { self.final_loss_sum / windows as f64 },
            windows: windows as usize,
        }
    }
}

const EVAL_BATCH: usize = 256;

/// Window-level accuracy and macro-F1 from final-timestep logits, plus the
/// weighted loss (unit weights when none are given).
pub fn evaluate(params: &TcnParameters, data: &[Prepared], weights: Option<&[f64]>) -> Result<Metrics, TcnError> {
    let first = data.first().ok_or(TcnError::EmptyDataset)?;
    let c = params.config.classes;
    let unit = vec![1.0; c];
    let weights = weights.unwrap_or(&unit);
    let n = first.n();
    let mut tally = Tally::new(weights);
    for chunk in data.chunks(EVAL_BATCH) {
        let refs: Vec<&Prepared> = chunk.iter().collect();
        let (x, targets) = stack(&refs, n, params.config.in_features)?;
        let out = forward_batch(params, &x, n)?;
        let (loss, _) = cross_entropy(&out.logits, &targets, weights, n)?;
        tally.add(&out.logits, &targets, n, loss);
    }
    Ok(tally.finish())
}

pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &TcnParameters, hyper: &TrainHyper) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Adam { lr: hyper.lr, beta1: hyper.beta1, beta2: hyper.beta2, eps: hyper.eps, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step(&mut self, params: &mut TcnParameters, grads: &TcnParameters) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.tensors_mut().into_iter().zip(grads.tensors()).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub train_macro_f1: f64,
    pub val_loss: f64,
    #[serde(default)]
    pub val_final_loss: f64,
    pub val_accuracy: f64,
    pub val_macro_f1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub params: TcnParameters,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub class_weights: Vec<f64>,
    pub validation: Metrics,
}

pub fn train(config: &TcnConfig, hyper: &TrainHyper, train: &[Prepared], val: &[Prepared]) -> Result<TrainOutcome, TcnError> {
    train_with(config, hyper, train, val, |_| {})
}

/// As [`train`], reporting each finished epoch to `on_epoch`.
pub fn train_with(
    config: &TcnConfig,
    hyper: &TrainHyper,
    train: &[Prepared],
    val: &[Prepared],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, TcnError> {
    if train.is_empty() || val.is_empty() {
        return Err(TcnError::EmptyDataset);
    }
    if hyper.batch_size == 0 || hyper.epochs == 0 {
        return Err(TcnError::InvalidConfig("batch_size and epochs must be positive".into()));
    }
    let mut params = TcnParameters::init(config)?;
    let c = config.classes;
    let mirrored: Vec<Prepared>;
    let train = if hyper.mirror_augment {
        if config.in_features != FRAME_FEATURES {
            return Err(TcnError::InvalidConfig("mirror augmentation needs the book frame layout".into()));
        }
        mirrored = train.iter().chain(train.iter().map(|p| p.mirrored(c)).collect::<Vec<_>>().iter()).cloned().collect();
        &mirrored[..]
    } else {
        train
    };
    let weights = class_weights(train, c);
    let n = train[0].n();
    let mut adam = Adam::new(&params, hyper);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, TcnParameters, usize, Metrics)> = None;
    let mut stale = 0;

    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        let mut tally = Tally::new(&weights);
        for chunk in order.chunks(hyper.batch_size) {
            let refs: Vec<&Prepared> = chunk.iter().map(|&i| &train[i]).collect();
            let (x, targets) = stack(&refs, n, config.in_features)?;
            let out = forward_batch(&params, &x, n).map_err(|_| TcnError::DivergedLoss { epoch })?;
            let (loss, dlogits) = cross_entropy(&out.logits, &targets, &weights, n)?;
            if !loss.is_finite() {
                return Err(TcnError::DivergedLoss { epoch });
            }
            tally.add(&out.logits, &targets, n, loss);
            let grads = backward(&params, &out.cache, &dlogits)?;
            adam.step(&mut params, &grads);
        }
        if !params.is_finite() {
            return Err(TcnError::DivergedLoss { epoch });
        }
        let tm = tally.finish();
        let vm = match evaluate(&params, val, Some(&weights)) {
            Err(TcnError::NonFiniteActivation(_)) => return Err(TcnError::DivergedLoss { epoch }),
            other => other?,
        };
        if !vm.loss.is_finite() {
            return Err(TcnError::DivergedLoss { epoch });
        }
        let record = EpochRecord {
            epoch,
            train_loss: tm.loss,
            train_accuracy: tm.accuracy,
            train_macro_f1: tm.macro_f1,
            val_loss: vm.loss,
            val_final_loss: vm.final_loss,
            val_accuracy: vm.accuracy,
            val_macro_f1: vm.macro_f1,
        };
        on_epoch(&record);
        history.push(record);
        if best.as_ref().is_none_or(|b| vm.loss < b.0) {
            best = Some((vm.loss, params.clone(), epoch, vm));
            stale = 0;
        } else {
            stale += 1;
            if stale >= hyper.patience {
                break;
            }
        }
    }
    let (_, params, best_epoch, validation) = best.unwrap();
    Ok(TrainOutcome { params, history, best_epoch, class_weights: weights, validation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn f1_arithmetic() {
        // 50% neutral, 25% each spoof side, everything predicted neutral.
        let conf = vec![vec![50, 0, 0], vec![25, 0, 0], vec![25, 0, 0]];
        let (m, per) = macro_f1(&conf);
        assert!((m - 200.0 / 9.0).abs() < 1e-9);
        assert_eq!(per[1], 0.0);
        let perfect = vec![vec![3, 0], vec![0, 4]];
        assert_eq!(macro_f1(&perfect).0, 100.0);
    }

    #[test]
    fn weights_are_inverse_frequency() {
        let p = |t: Vec<Option<usize>>| Prepared { x: Array2::zeros((t.len(), 1)), targets: t };
        let data = vec![p(vec![Some(0), Some(0), Some(0), Some(1)]), p(vec![Some(0), Some(2), None, Some(0)])];
        let w = class_weights(&data, 3);
        assert!((w[0] - 7.0 / 15.0).abs() < 1e-12);
        assert!((w[1] - 7.0 / 3.0).abs() < 1e-12);
        assert!((w[2] - 7.0 / 3.0).abs() < 1e-12);
    }

    fn toy(count: usize, n: usize, seed: u64) -> Vec<Prepared> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|i| {
                let y = i % 3;
                let mut x = Array2::from_shape_simple_fn((n, 120), || rng.random_range(-0.1..0.1));
                x.column_mut(y * 7).mapv_inplace(|v| v + 1.0);
                Prepared { x, targets: vec![Some(y); n] }
            })
            .collect()
    }

    #[test]
    fn perfect_predictions_score_100() {
        let data = toy(9, 4, 1);
        let params = train(
            &TcnConfig { filters: 8, dilations: vec![1, 2], ..Default::default() },
            &TrainHyper { epochs: 30, batch_size: 9, patience: 30, lr: 1e-2, ..Default::default() },
            &data,
            &data,
        )
        .unwrap();
        let m = evaluate(&params.params, &data, None).unwrap();
        assert_eq!(m.accuracy, 100.0);
        assert_eq!(m.macro_f1, 100.0);
        for (k, row) in m.confusion.iter().enumerate() {
            assert_eq!(row.iter().sum::<u64>(), 3, "class {k} support");
        }
    }

    #[test]
    fn same_seed_same_history() {
        let data = toy(20, 5, 2);
        let cfg = TcnConfig { filters: 8, dilations: vec![1, 2, 4], ..Default::default() };
        let hyper = TrainHyper { epochs: 3, batch_size: 8, ..Default::default() };
        let a = train(&cfg, &hyper, &data, &data).unwrap();
        let b = train(&cfg, &hyper, &data, &data).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn empty_inputs_rejected() {
        let cfg = TcnConfig::default();
        assert!(matches!(train(&cfg, &TrainHyper::default(), &[], &toy(1, 3, 0)), Err(TcnError::EmptyDataset)));
        let p = TcnParameters::init(&cfg).unwrap();
        assert!(matches!(evaluate(&p, &[], None), Err(TcnError::EmptyDataset)));
    }

    #[test]
    fn diverging_run_reports_error() {
        let data = toy(6, 3, 3);
        let hyper = TrainHyper { lr: 1e300, epochs: 5, batch_size: 6, ..Default::default() };
        let r = train(&TcnConfig { filters: 8, dilations: vec![1], ..Default::default() }, &hyper, &data, &data);
        assert!(matches!(r, Err(TcnError::DivergedLoss { .. })), "{r:?}");
    }
}
