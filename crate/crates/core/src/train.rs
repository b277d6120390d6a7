//! SGD with Nesterov momentum, step learning-rate schedules, the epoch loop
//! and evaluation.

use std::fmt;

use crate::data::{augment_batch, normalize_images, AugmentConfig, ChannelStats, Dataset};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{softmax_cross_entropy, ParamKind};
use crate::tensor::{Rng, Tensor4};

/// Piecewise-constant learning-rate schedule.
#[derive(Clone, Debug, PartialEq)]
pub enum Schedule {
    /// ×0.1 at the start of epochs 150 and 225 (0-indexed), 300 epochs.
    Cifar,
    /// ×0.1 every 30 epochs, 100 epochs.
    Imagenet,
    /// Multiply by `factor` from `epoch` on.
    Custom {
        drops: Vec<(usize, f64)>,
        total: usize,
    },
}

impl Schedule {
    pub fn total_epochs(&self) -> usize {
        match self {
            Schedule::Cifar => 300,
            Schedule::Imagenet => 100,
            Schedule::Custom { total, .. } => *total,
        }
    }

    fn drops(&self) -> Vec<(usize, f64)> {
        match self {
            Schedule::Cifar => vec![(150, 0.1), (225, 0.1)],
            Schedule::Imagenet => (1..=3).map(|k| (30 * k, 0.1)).collect(),
            Schedule::Custom { drops, .. } => drops.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
    pub batch_size: usize,
    pub seed: u64,
    /// When false, batch-norm parameters and biases are not decayed.
    pub decay_norm_and_bias: bool,
    pub augment: Option<AugmentConfig>,
    /// Applied to every batch after augmentation.
    pub normalize: Option<ChannelStats>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            schedule: Schedule::Cifar,
            batch_size: 64,
            seed: 0,
            decay_norm_and_bias: true,
            augment: Some(AugmentConfig::default()),
            normalize: None,
        }
    }
}

impl TrainConfig {
    pub fn imagenet() -> Self {
        Self {
            schedule: Schedule::Imagenet,
            batch_size: 256,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.lr0.is_finite() && self.lr0 >= 0.0) {
            return bad(format!("learning rate must be >= 0, got {}", self.lr0));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            ));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        for &(_, f) in &self.schedule.drops() {
            if !(f.is_finite() && f > 0.0) {
                return bad(format!("schedule factors must be positive, got {f}"));
            }
        }
        Ok(())
    }
}

/// Learning rate in force during `epoch`. The rate is `lr0` divided by the
/// product of inverse factors, so ×0.1 steps from 0.1 land exactly on the
/// decimal values.
pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> Result<f64> {
    let total = cfg.schedule.total_epochs();
    if epoch >= total {
        return Err(Error::EpochOutOfRange { epoch, total });
    }
    let divisor: f64 = cfg
        .schedule
        .drops()
        .iter()
        .filter(|(at, _)| *at <= epoch)
        .map(|(_, f)| 1.0 / f)
        .product();
    Ok(cfg.lr0 / divisor)
}

/// Velocity buffers, one per registered parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub velocity: Vec<(String, Tensor4)>,
}

impl OptimizerState {
    pub fn new(model: &Model) -> Result<Self> {
        let velocity = model
            .params()
            .into_iter()
            .map(|(n, p)| Ok((n, Tensor4::zeros(p.value.shape())?)))
            .collect::<Result<_>>()?;
        Ok(Self { velocity })
    }
}

/// One Nesterov update of a single tensor:
/// `g = grad + wd·p; v = μ·v + g; p -= lr·(g + μ·v)`.
pub fn nesterov_update(
    value: &mut [f64],
    grad: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
    wd: f64,
) {
    for ((p, &dp), v) in value.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        let g = dp + wd * *p;
        *v = momentum * *v + g;
        *p -= lr * (g + momentum * *v);
    }
}

/// Applies one optimizer step to every parameter in registry order.
pub fn sgd_nesterov_step(
    model: &mut Model,
    state: &mut OptimizerState,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<()> {
    let params = model.params_mut();
    if params.len() != state.velocity.len() {
        return Err(Error::InvalidArgument(format!(
            "optimizer holds {} buffers for {} parameters",
            state.velocity.len(),
            params.len()
        )));
    }
    for ((name, p), (vname, v)) in params.into_iter().zip(state.velocity.iter_mut()) {
        if &name != vname {
            return Err(Error::InvalidArgument(format!(
                "optimizer buffer `{vname}` paired with `{name}`"
            )));
        }
        v.expect_shape(p.value.shape())?;
        let wd = match p.kind {
            ParamKind::Weight => cfg.weight_decay,
            ParamKind::Bias | ParamKind::Norm if cfg.decay_norm_and_bias => cfg.weight_decay,
            _ => 0.0,
        };
        nesterov_update(
            p.value.data_mut(),
            p.grad.data(),
            v.data_mut(),
            lr,
            cfg.momentum,
            wd,
        );
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    pub accuracy: f64,
}

fn batch_stream(epoch: usize, batch: usize) -> u64 {
    ((epoch as u64 + 1) << 32) | batch as u64
}

fn prepare(x: Tensor4, cfg: &TrainConfig, rng: Option<&mut Rng>) -> Result<Tensor4> {
    let x = match (&cfg.augment, rng) {
        (Some(a), Some(rng)) => augment_batch(&x, a, rng)?,
        _ => x,
    };
    match &cfg.normalize {
        Some(stats) => normalize_images(&x, stats),
        None => Ok(x),
    }
}

fn argmax_correct(logits: &Tensor4, labels: &[usize]) -> usize {
    labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| rank_of(logits.item(i), y) == 0)
        .count()
}

/// Position of `label` when classes are sorted by descending logit, ties
/// going to the lower class index.
fn rank_of(row: &[f64], label: usize) -> usize {
    let target = row[label];
    row.iter()
        .enumerate()
        .filter(|&(j, &v)| v > target || (v == target && j < label))
        .count()
}

/// One pass over `ds` in a seed-determined order. The trailing partial
/// batch is dropped. Returns the mean batch loss and train accuracy.
pub fn train_epoch(
    model: &mut Model,
    ds: &Dataset,
    cfg: &TrainConfig,
    state: &mut OptimizerState,
    epoch: usize,
) -> Result<EpochStats> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if cfg.batch_size > ds.len() {
        return Err(Error::InvalidArgument(format!(
            "batch size {} exceeds the {} training items",
            cfg.batch_size,
            ds.len()
        )));
    }
    if ds.classes != model.spec().num_classes {
        return Err(Error::InvalidArgument(format!(
            "dataset has {} classes, model has {}",
            ds.classes,
            model.spec().num_classes
        )));
    }
    let lr = lr_at(cfg, epoch)?;
    let root = Rng::new(cfg.seed);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    root.fork(batch_stream(epoch, u32::MAX as usize))
        .shuffle(&mut order);

    let (mut loss_sum, mut correct, mut seen) = (0.0, 0, 0);
    let batches = ds.len() / cfg.batch_size;
    for b in 0..batches {
        let idx = &order[b * cfg.batch_size..(b + 1) * cfg.batch_size];
        let (x, labels) = ds.batch(idx)?;
        let mut rng = root.fork(batch_stream(epoch, b));
        let x = prepare(x, cfg, Some(&mut rng))?;
        let logits = model.forward_train(&x)?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, &labels)?;
        model.zero_grad();
        model.backward(&dlogits)?;
        sgd_nesterov_step(model, state, cfg, lr)?;
        loss_sum += loss;
        correct += argmax_correct(&logits, &labels);
        seen += labels.len();
    }
    Ok(EpochStats {
        loss: loss_sum / batches as f64,
        accuracy: correct as f64 / seen as f64,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalResult {
    /// Percentages.
    pub top1_error: f64,
    pub top5_error: f64,
    pub loss: f64,
}

/// Eval-mode pass with normalization only; errors are percentages.
pub fn evaluate(
    model: &Model,
    ds: &Dataset,
    batch_size: usize,
    normalize: Option<&ChannelStats>,
) -> Result<EvalResult> {
    if ds.is_empty() || batch_size == 0 {
        return Err(Error::InvalidArgument(
            "evaluation needs items and a positive batch size".into(),
        ));
    }
    if ds.classes != model.spec().num_classes {
        return Err(Error::InvalidArgument(format!(
            "dataset has {} classes, model has {}",
            ds.classes,
            model.spec().num_classes
        )));
    }
    let (mut top1, mut top5, mut loss_sum) = (0usize, 0usize, 0.0);
    let all: Vec<usize> = (0..ds.len()).collect();
    for idx in all.chunks(batch_size) {
        let (x, labels) = ds.batch(idx)?;
        let x = match normalize {
            Some(s) => normalize_images(&x, s)?,
            None => x,
        };
        let logits = model.forward_eval(&x)?;
        let (loss, _) = softmax_cross_entropy(&logits, &labels)?;
        loss_sum += loss * labels.len() as f64;
        for (i, &y) in labels.iter().enumerate() {
            let r = rank_of(logits.item(i), y);
            top1 += usize::from(r == 0);
            top5 += usize::from(r < 5);
        }
    }
    let n = ds.len() as f64;
    Ok(EvalResult {
        top1_error: 100.0 * (1.0 - top1 as f64 / n),
        top5_error: 100.0 * (1.0 - top5 as f64 / n),
        loss: loss_sum / n,
    })
}

/// One progress record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub train_acc: f64,
    pub eval_err: Option<f64>,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} lr={} loss={:.6} train_acc={:.4}",
            self.epoch, self.lr, self.loss, self.train_acc
        )?;
        if let Some(e) = self.eval_err {
            write!(f, " eval_err={e:.2}")?;
        }
        Ok(())
    }
}

/// Runs `epochs` epochs from epoch 0, evaluating on `eval` after each one
/// when given, and reports every epoch to `on_epoch`.
pub fn train(
    model: &mut Model,
    ds: &Dataset,
    eval: Option<&Dataset>,
    cfg: &TrainConfig,
    epochs: usize,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    let total = cfg.schedule.total_epochs();
    if epochs > total {
        return Err(Error::EpochOutOfRange {
            epoch: epochs,
            total,
        });
    }
    let mut state = OptimizerState::new(model)?;
    let mut logs = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let stats = train_epoch(model, ds, cfg, &mut state, epoch)?;
        let eval_err = match eval {
            Some(e) => Some(evaluate(model, e, cfg.batch_size, cfg.normalize.as_ref())?.top1_error),
            None => None,
        };
        let log = EpochLog {
            epoch,
            lr: lr_at(cfg, epoch)?,
            loss: stats.loss,
            train_acc: stats.accuracy,
            eval_err,
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic;
    use crate::model::ModelSpec;
    use crate::tensor::Rng;
    use proptest::prelude::*;

    #[test]
    fn cifar_schedule_is_exact() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(&cfg, 0).unwrap(), 0.1);
        assert_eq!(lr_at(&cfg, 149).unwrap(), 0.1);
        assert_eq!(lr_at(&cfg, 150).unwrap(), 0.01);
        assert_eq!(lr_at(&cfg, 224).unwrap(), 0.01);
        assert_eq!(lr_at(&cfg, 225).unwrap(), 0.001);
        assert_eq!(lr_at(&cfg, 299).unwrap(), 0.001);
        assert!(matches!(
            lr_at(&cfg, 300),
            Err(Error::EpochOutOfRange { .. })
        ));
    }

    #[test]
    fn imagenet_schedule_is_exact() {
        let cfg = TrainConfig::imagenet();
        assert_eq!(cfg.batch_size, 256);
        for (e, lr) in [
            (0, 0.1),
            (29, 0.1),
            (30, 0.01),
            (59, 0.01),
            (60, 0.001),
            (90, 0.0001),
            (99, 0.0001),
        ] {
            assert_eq!(lr_at(&cfg, e).unwrap(), lr, "epoch {e}");
        }
    }

    #[test]
    fn empty_custom_schedule_is_constant() {
        let cfg = TrainConfig {
            lr0: 0.37,
            schedule: Schedule::Custom {
                drops: vec![],
                total: 5,
            },
            ..TrainConfig::default()
        };
        assert!((0..5).all(|e| lr_at(&cfg, e).unwrap() == 0.37));
    }

    #[test]
    fn nesterov_hand_computed() {
        let (mut p, mut v) = ([1.0], [0.0]);
        nesterov_update(&mut p, &[1.0], &mut v, 0.1, 0.9, 0.0);
        assert_eq!(v[0], 1.0);
        assert!((p[0] - 0.81).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let (mut p, mut v) = ([1.5, -2.0], [0.0, 0.0]);
        nesterov_update(&mut p, &[0.0, 0.0], &mut v, 0.1, 0.9, 0.0);
        assert_eq!(p, [1.5, -2.0]);
    }

    #[test]
    fn weight_decay_matches_quadratic_penalty() {
        // loss = a/2·θ² + wd/2·θ²; gradient of the data term is a·θ
        let (a, wd, lr, mu) = (0.7, 0.05, 0.1, 0.9);
        let (mut p, mut v) = ([2.0], [0.0]);
        let (mut theta, mut vel) = (2.0f64, 0.0f64);
        for _ in 0..50 {
            let g = [a * p[0]];
            nesterov_update(&mut p, &g, &mut v, lr, mu, wd);
            let total = (a + wd) * theta;
            vel = mu * vel + total;
            theta -= lr * (total + mu * vel);
            assert!((p[0] - theta).abs() <= 1e-12 * theta.abs().max(1e-300));
        }
    }

    proptest! {
        #[test]
        fn plain_sgd_limit_is_bitwise(
            p in proptest::collection::vec(-10.0f64..10.0, 1..8),
            g in proptest::collection::vec(-10.0f64..10.0, 8),
            lr in 0.0f64..1.0,
        ) {
            let mut value = p.clone();
            let mut v = vec![0.0; p.len()];
            nesterov_update(&mut value, &g[..p.len()], &mut v, lr, 0.0, 0.0);
            for i in 0..p.len() {
                prop_assert_eq!(value[i].to_bits(), (p[i] - lr * g[i]).to_bits());
            }
        }
    }

    fn fixture(seed: u64) -> (Model, Dataset) {
        let spec = ModelSpec::custom("t", vec![2, 3], vec![1, 1], 4);
        let mut rng = Rng::new(seed);
        let ds = synthetic(16, 4, 6, 0.1, &mut rng).unwrap();
        (Model::build(&spec, &mut rng).unwrap(), ds)
    }

    fn cfg(lr: f64) -> TrainConfig {
        TrainConfig {
            lr0: lr,
            batch_size: 8,
            augment: None,
            schedule: Schedule::Custom {
                drops: vec![],
                total: 100,
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_lr_only_moves_running_stats() {
        let (mut m, ds) = fixture(0);
        let before = m.clone();
        let mut state = OptimizerState::new(&m).unwrap();
        train_epoch(&mut m, &ds, &cfg(0.0), &mut state, 0).unwrap();
        let values = |m: &Model| {
            m.params()
                .into_iter()
                .map(|(_, p)| p.value.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(values(&m), values(&before));
        assert_ne!(m.buffers(), before.buffers());
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let (mut m, ds) = fixture(3);
            let c = TrainConfig {
                augment: Some(AugmentConfig::default()),
                ..cfg(0.05)
            };
            let logs = train(&mut m, &ds, Some(&ds), &c, 3, |_| {}).unwrap();
            (m, logs)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn small_step_lowers_batch_loss() {
        for seed in 0..5 {
            let (mut m, ds) = fixture(seed);
            let (x, y) = ds.batch(&(0..8).collect::<Vec<_>>()).unwrap();
            let loss = |m: &mut Model| {
                let logits = m.clone().forward_train(&x).unwrap();
                softmax_cross_entropy(&logits, &y).unwrap().0
            };
            let before = loss(&mut m);
            let logits = m.forward_train(&x).unwrap();
            let (_, d) = softmax_cross_entropy(&logits, &y).unwrap();
            m.zero_grad();
            m.backward(&d).unwrap();
            let c = TrainConfig {
                weight_decay: 0.0,
                momentum: 0.0,
                ..cfg(1e-4)
            };
            let mut state = OptimizerState::new(&m).unwrap();
            sgd_nesterov_step(&mut m, &mut state, &c, 1e-4).unwrap();
            assert!(loss(&mut m) < before, "seed {seed}");
        }
    }

    #[test]
    fn epoch_errors() {
        let (mut m, ds) = fixture(0);
        let mut state = OptimizerState::new(&m).unwrap();
        let big = TrainConfig {
            batch_size: 17,
            ..cfg(0.1)
        };
        assert!(train_epoch(&mut m, &ds, &big, &mut state, 0).is_err());
        let other = Dataset {
            classes: 5,
            ..ds.clone()
        };
        assert!(train_epoch(&mut m, &other, &cfg(0.1), &mut state, 0).is_err());
        let mut wrong = OptimizerState::new(&m).unwrap();
        wrong.velocity.pop();
        assert!(sgd_nesterov_step(&mut m, &mut wrong, &cfg(0.1), 0.1).is_err());
    }

    #[test]
    fn rank_tie_break_and_top5() {
        let uniform = [0.0; 10];
        assert_eq!(rank_of(&uniform, 0), 0);
        assert_eq!(rank_of(&uniform, 7), 7);
        let row: Vec<f64> = (0..1000)
            .map(|i| {
                if i < 4 {
                    10.0
                } else if i == 500 {
                    5.0
                } else {
                    0.0
                }
            })
            .collect();
        assert_eq!(rank_of(&row, 500), 4);
    }

    #[test]
    fn uniform_logits_are_chance_level() {
        let spec = ModelSpec::custom("u", vec![2], vec![1], 10);
        let mut m = Model::build(&spec, &mut Rng::new(0)).unwrap();
        m.head.linear.weight.value.fill(0.0);
        m.head.linear.bias.value.fill(0.0);
        let ds = synthetic(100, 10, 4, 0.1, &mut Rng::new(1)).unwrap();
        let r = evaluate(&m, &ds, 32, None).unwrap();
        assert!((r.top1_error - 90.0).abs() < 1e-9);
        assert!((r.top5_error - 50.0).abs() < 1e-9);
    }

    #[test]
    fn log_line_format() {
        let log = EpochLog {
            epoch: 3,
            lr: 0.01,
            loss: 0.5,
            train_acc: 0.75,
            eval_err: Some(12.5),
        };
        assert_eq!(
            log.to_string(),
            "epoch=3 lr=0.01 loss=0.500000 train_acc=0.7500 eval_err=12.50"
        );
    }
}
