//! Seeded mini-batch training and evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{backward, forward, sgd_step, Gradients, NetSpec, ParamStore};
use crate::error::{Error, Result};
use crate::grids::{LogDepthMap, SegLabelMap};
use crate::io::RgbImage;
use crate::losses::{
    compose_hpm, compose_with_schedule, HeadOutputs, LossConfig, PaceSchedule, Targets,
};
use crate::metrics::{
    confusion_matrix, seg_metrics, ConfusionMatrix, CorrelationAccumulator, CorrelationReport,
    SegMetrics,
};
use crate::synthdata::Scene;

/// Epochs without sufficient improvement before the learning rate drops.
pub const LR_PATIENCE: usize = 5;
/// Minimum relative decrease of the epoch-mean loss that counts as progress.
pub const LR_REL_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    /// Divide by 10 after [`LR_PATIENCE`] epochs without a relative
    /// improvement of [`LR_REL_TOLERANCE`] in the epoch-mean total loss.
    Plateau,
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_schedule: LrSchedule,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    /// Evaluate on the validation scenes after every epoch.
    pub validate: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 2,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_schedule: LrSchedule::Plateau,
            seed: 0,
            validate: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("train.batch_size", "must be positive"));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::invalid("train.lr", "must be finite and nonnegative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("train.momentum", "must be in [0, 1)"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::invalid(
                "train.weight_decay",
                "must be finite and nonnegative",
            ));
        }
        Ok(())
    }
}

/// Scalar summary of segmentation quality on the validation scenes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValSummary {
    pub mean_iou: f64,
    pub pixel_acc: f64,
    pub mean_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub total: f64,
    pub seg: f64,
    pub depth: f64,
    pub hard: f64,
    /// Mean of each side-output term; empty when side terms are off.
    pub sides: Vec<f64>,
    /// Mean learning pace of the main weight map, when curriculum is on.
    pub eta: Option<f64>,
    /// Mean fraction of pixels admitted by the main curriculum mask.
    pub admitted_fraction: Option<f64>,
    /// Admitted fraction per training scene, in dataset order.
    pub admitted_per_image: Option<Vec<f64>>,
    pub validation: Option<ValSummary>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParamStore,
    pub log: Vec<EpochLog>,
    pub final_lr: f64,
}

/// Argmax labels and predicted log-depth for one image.
pub fn predict(params: &ParamStore, image: &RgbImage) -> Result<(SegLabelMap, LogDepthMap)> {
    let trace = forward(params, image, false)?;
    if !trace.is_finite() {
        return Err(Error::NonFiniteOutput("diverged parameters".into()));
    }
    Ok((trace.main_probs()?.argmax(), trace.log_depth))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: SegMetrics,
    pub confusion: ConfusionMatrix,
    /// Mean absolute log-depth error over all pixels.
    pub log_depth_mae: f64,
    pub correlation: CorrelationReport,
}

pub fn evaluate(
    params: &ParamStore,
    scenes: &[Scene],
    correlation_bins: usize,
) -> Result<EvalReport> {
    if scenes.is_empty() {
        return Err(Error::invalid("dataset", "no scenes to evaluate"));
    }
    let classes = params.spec().classes;
    let mut cm = ConfusionMatrix::zeros(classes);
    let mut corr = CorrelationAccumulator::new();
    let (mut abs_err, mut count) = (0.0, 0usize);
    for scene in scenes {
        let (labels, depth) = predict(params, &scene.rgb)?;
        cm.merge(&confusion_matrix(&labels, &scene.labels, classes)?)?;
        let gt_log = scene.depth.to_log();
        corr.add(&depth, &gt_log, &labels, &scene.labels)?;
        for (p, g) in depth.as_slice().iter().zip(gt_log.as_slice()) {
            abs_err += (p - g).abs();
        }
        count += gt_log.len();
    }
    Ok(EvalReport {
        metrics: seg_metrics(&cm)?,
        confusion: cm,
        log_depth_mae: abs_err / count as f64,
        correlation: corr.finish(correlation_bins)?,
    })
}

fn val_summary(params: &ParamStore, scenes: &[Scene]) -> Result<ValSummary> {
    let classes = params.spec().classes;
    let mut cm = ConfusionMatrix::zeros(classes);
    for scene in scenes {
        let (labels, _) = predict(params, &scene.rgb)?;
        cm.merge(&confusion_matrix(&labels, &scene.labels, classes)?)?;
    }
    let m = seg_metrics(&cm)?;
    Ok(ValSummary {
        mean_iou: m.mean_iou,
        pixel_acc: m.pixel_acc,
        mean_acc: m.mean_acc,
    })
}

#[derive(Default)]
struct EpochSums {
    total: f64,
    seg: f64,
    depth: f64,
    hard: f64,
    sides: Vec<f64>,
    eta: f64,
    admitted: f64,
}

/// Trains from `net.init_seed` with the given objective. Validation metrics
/// are logged each epoch when `val` is nonempty and `cfg.validate` is set.
pub fn train(
    train_scenes: &[Scene],
    val: &[Scene],
    net: &NetSpec,
    loss: &LossConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    loss.validate()?;
    let mut params = ParamStore::init(net)?;
    if cfg.epochs == 0 {
        return Ok(TrainOutcome {
            params,
            log: Vec::new(),
            final_lr: cfg.lr,
        });
    }
    if train_scenes.is_empty() {
        return Err(Error::invalid("dataset", "training split is empty"));
    }
    let targets: Vec<Targets> = train_scenes
        .iter()
        .map(|s| Targets::for_config(s.labels.clone(), &s.depth, loss))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_scenes.len()).collect();
    let mut lr = cfg.lr;
    let mut best = f64::INFINITY;
    let mut stale = 0usize;
    let mut log = Vec::with_capacity(cfg.epochs);
    let n = train_scenes.len() as f64;

    let steps_per_epoch = train_scenes.len().div_ceil(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = EpochSums::default();
        let mut admitted_per_image = vec![0.0; train_scenes.len()];
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads: Option<Gradients> = None;
            for &i in batch {
                let trace = forward(&params, &train_scenes[i].rgb, true)?;
                if !trace.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        step,
                        detail: format!(
                            "scene {}: non-finite network output",
                            train_scenes[i].index
                        ),
                    });
                }
                let main = trace.main_probs()?;
                let sides = trace.side_probs()?;
                let outputs = HeadOutputs {
                    main: &main,
                    sides: &sides,
                    depth: &trace.log_depth,
                };
                let composite = if loss.curriculum {
                    let schedule = PaceSchedule::Epoch {
                        epoch,
                        total_epochs: cfg.epochs,
                    };
                    let (c, masks) = compose_with_schedule(&outputs, &targets[i], loss, schedule)?;
                    if let Some((pace, mask)) = &masks.main {
                        sums.eta += pace.eta;
                        sums.admitted += mask.fraction();
                        admitted_per_image[i] = mask.fraction();
                    }
                    c
                } else {
                    compose_hpm(&outputs, &targets[i], loss)?
                };
                if !composite.total.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        step,
                        detail: format!(
                            "scene {}: seg={} depth={} hard={} sides={:?}",
                            train_scenes[i].index,
                            composite.seg,
                            composite.depth,
                            composite.hard,
                            composite.sides
                        ),
                    });
                }
                sums.total += composite.total;
                sums.seg += composite.seg;
                sums.depth += composite.depth;
                sums.hard += composite.hard;
                if sums.sides.len() < composite.sides.len() {
                    sums.sides.resize(composite.sides.len(), 0.0);
                }
                for (a, b) in sums.sides.iter_mut().zip(&composite.sides) {
                    *a += b;
                }
                let g = backward(&params, &trace, &composite.grads)?;
                match grads.as_mut() {
                    None => grads = Some(g),
                    Some(acc) => acc.add_scaled(&g, 1.0),
                }
            }
            let mut grads = grads.expect("chunks are nonempty");
            grads.scale(1.0 / batch.len() as f64);
            if !grads.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    detail: "non-finite parameter gradient".into(),
                });
            }
            sgd_step(&mut params, &grads, lr, cfg.momentum, cfg.weight_decay)?;
            // Finite gradients can still overflow the parameters at a large lr.
            if !params
                .tensors()
                .iter()
                .all(|t| t.values.iter().all(|v| v.is_finite()))
            {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    detail: "parameters overflowed after the update".into(),
                });
            }
        }

        let mean_total = sums.total / n;
        let curriculum_on = loss.curriculum && loss.needs_main_weights();
        let entry = EpochLog {
            epoch,
            lr,
            total: mean_total,
            seg: sums.seg / n,
            depth: sums.depth / n,
            hard: sums.hard / n,
            sides: sums.sides.iter().map(|s| s / n).collect(),
            eta: curriculum_on.then(|| sums.eta / n),
            admitted_fraction: curriculum_on.then(|| sums.admitted / n),
            admitted_per_image: curriculum_on.then_some(admitted_per_image),
            validation: if cfg.validate && !val.is_empty() {
                Some(val_summary(&params, val).map_err(|e| match e {
                    Error::NonFiniteOutput(detail) => Error::NonFiniteLoss {
                        epoch,
                        step: steps_per_epoch,
                        detail: format!("validation: {detail}"),
                    },
                    e => e,
                })?)
            } else {
                None
            },
        };
        log::info!(
            "epoch {epoch}: loss {:.5} seg {:.5} depth {:.5} lr {lr:e}{}",
            entry.total,
            entry.seg,
            entry.depth,
            entry
                .validation
                .as_ref()
                .map(|v| format!(" val mIoU {:.4}", v.mean_iou))
                .unwrap_or_default()
        );
        log.push(entry);

        if cfg.lr_schedule == LrSchedule::Plateau {
            if mean_total < best * (1.0 - LR_REL_TOLERANCE) {
                best = mean_total;
                stale = 0;
            } else {
                stale += 1;
                if stale >= LR_PATIENCE {
                    lr /= 10.0;
                    stale = 0;
                    log::info!("epoch {epoch}: learning rate dropped to {lr:e}");
                }
            }
        }
    }
    Ok(TrainOutcome {
        params,
        log,
        final_lr: lr,
    })
}
