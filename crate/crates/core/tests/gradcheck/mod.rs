//! Central finite differences against every analytic gradient: each loss on
//! its own, the composite objectives, and the full network backward pass.
//! Each suite returns a report rather than panicking so the acceptance
//! harness can reuse it through `#[path]`.

#![allow(dead_code, clippy::needless_range_loop)]

use crate::common::{central_diff, close, probs, random_depth, random_labels, random_logits};
use hardpix::grids::{Grid, LogDepthMap, LossWeightMap, Mask, SegLabelMap};
use hardpix::hardmine::{CellGrid, FusionOp};
use hardpix::io::RgbImage;
use hardpix::losses::{
    build_masks, build_weight_maps, ce_loss, depth_loss, evaluate_composite, focal_loss, lmp_loss,
    ohem_loss, weighted_ce_loss, Baseline, HeadMasks, HeadOutputs, HeadWeights, LossConfig,
    LossWithGrad, PaceSchedule, Targets, WeightSource, SIDE_OUTPUTS,
};
use hardpix::tinynet::{backward, forward, NetSpec, ParamStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const REL: f64 = 1e-4;
const FLOOR: f64 = 1e-7;
pub const INSTANCES: u64 = 24;

#[derive(Debug, Default)]
pub struct Report {
    pub instances: u64,
    pub checked: usize,
    /// Coordinates that needed the smaller step (a ReLU or clamp kink).
    pub kinks: usize,
    pub failures: Vec<String>,
}

impl Report {
    fn check(&mut self, ok: bool, msg: impl FnOnce() -> String) {
        self.checked += 1;
        if !ok && self.failures.len() < 20 {
            self.failures.push(msg());
        }
    }

    /// No mismatches, and kinks rare enough not to hide one.
    pub fn ok(&self) -> bool {
        self.failures.is_empty() && self.kinks * 200 <= self.checked
    }
}

fn check_seg_loss(
    r: &mut Report,
    name: &str,
    h: usize,
    w: usize,
    c: usize,
    logits: &[f64],
    loss: impl Fn(&hardpix::grids::SegProbMap) -> LossWithGrad,
) {
    let analytic = loss(&probs(h, w, c, logits)).grad;
    for i in 0..logits.len() {
        let fd = central_diff(logits, i, 1e-4, |x| loss(&probs(h, w, c, x)).value());
        r.check(close(analytic[i], fd, REL, FLOOR), || {
            format!(
                "{name}: coordinate {i}: analytic {} vs numeric {fd}",
                analytic[i]
            )
        });
    }
}

/// CE, weighted CE (with and without a mask), focal, OHEM, LMP and the depth loss.
pub fn single_losses(instances: u64) -> Report {
    let mut r = Report::default();
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w, c) = (
            rng.gen_range(2..6),
            rng.gen_range(2..6),
            rng.gen_range(2..5),
        );
        let logits = random_logits(&mut rng, h * w * c);
        let mut gt = random_labels(&mut rng, h, w, c, 0.15);
        if gt.valid_count() == 0 {
            gt = SegLabelMap::new(Grid::filled(h, w, 0), c).unwrap();
        }
        let weights =
            LossWeightMap::from_vec(h, w, (0..h * w).map(|_| rng.gen_range(0.0..2.0)).collect())
                .unwrap();
        let mask =
            Mask::new(Grid::new(h, w, (0..h * w).map(|_| rng.gen_bool(0.7)).collect()).unwrap());
        let gamma = [0.5, 1.0, 2.0, 3.0][seed as usize % 4];
        let keep = rng.gen_range(0.1..1.0);
        let pool = rng.gen_range(0.1..1.0);

        check_seg_loss(&mut r, "ce", h, w, c, &logits, |p| ce_loss(p, &gt).unwrap());
        check_seg_loss(&mut r, "weighted ce", h, w, c, &logits, |p| {
            weighted_ce_loss(p, &gt, &weights, None).unwrap()
        });
        if (0..h * w).any(|i| mask.as_slice()[i] && gt.label(i).is_some()) {
            check_seg_loss(&mut r, "masked weighted ce", h, w, c, &logits, |p| {
                weighted_ce_loss(p, &gt, &weights, Some(&mask)).unwrap()
            });
        }
        check_seg_loss(&mut r, "focal", h, w, c, &logits, |p| {
            focal_loss(p, &gt, gamma).unwrap()
        });
        check_seg_loss(&mut r, "ohem", h, w, c, &logits, |p| {
            ohem_loss(p, &gt, keep).unwrap()
        });
        check_seg_loss(&mut r, "lmp", h, w, c, &logits, |p| {
            lmp_loss(p, &gt, pool).unwrap()
        });

        let gt_depth = random_depth(&mut rng, h, w).to_log();
        let pred: Vec<f64> = (0..h * w).map(|_| rng.gen_range(0.1..5.4)).collect();
        let f = |x: &[f64]| {
            depth_loss(&LogDepthMap::from_vec(h, w, x.to_vec()).unwrap(), &gt_depth).unwrap()
        };
        let analytic = f(&pred).grad;
        for i in 0..pred.len() {
            let fd = central_diff(&pred, i, 1e-4, |x| f(x).value());
            r.check(close(analytic[i], fd, REL, FLOOR), || {
                format!("depth: {} vs {fd}", analytic[i])
            });
        }
        r.instances += 1;
    }
    r
}

/// Flat vector of (main logits, four side logits, log-depth).
struct Heads {
    h: usize,
    w: usize,
    c: usize,
}

impl Heads {
    fn split<'a>(&self, x: &'a [f64]) -> (&'a [f64], Vec<&'a [f64]>, &'a [f64]) {
        let n = self.h * self.w * self.c;
        let sides = (0..SIDE_OUTPUTS)
            .map(|k| &x[n * (k + 1)..n * (k + 2)])
            .collect();
        (&x[..n], sides, &x[n * (SIDE_OUTPUTS + 1)..])
    }

    fn composite(
        &self,
        x: &[f64],
        targets: &Targets,
        cfg: &LossConfig,
        weights: Option<&HeadWeights>,
        schedule: Option<PaceSchedule>,
    ) -> (f64, Vec<f64>, HeadWeights, Option<HeadMasks>) {
        let (main, sides, depth) = self.split(x);
        let main = probs(self.h, self.w, self.c, main);
        let sides: Vec<_> = sides
            .iter()
            .map(|s| probs(self.h, self.w, self.c, s))
            .collect();
        let depth = LogDepthMap::from_vec(self.h, self.w, depth.to_vec()).unwrap();
        let outputs = HeadOutputs {
            main: &main,
            sides: &sides,
            depth: &depth,
        };
        let weights = match weights {
            Some(w) => w.clone(),
            None => build_weight_maps(&outputs, targets, cfg).unwrap(),
        };
        let masks = schedule.map(|s| build_masks(&weights, targets, s).unwrap());
        let loss = evaluate_composite(&outputs, targets, cfg, &weights, masks.as_ref()).unwrap();
        let mut grad = loss.grads.main.clone();
        for k in 0..SIDE_OUTPUTS {
            match loss.grads.sides.get(k) {
                Some(g) => grad.extend_from_slice(g),
                None => grad.extend(std::iter::repeat_n(0.0, self.h * self.w * self.c)),
            }
        }
        grad.extend_from_slice(&loss.grads.depth);
        (loss.total, grad, weights, masks)
    }
}

fn loss_configs() -> Vec<LossConfig> {
    let base = LossConfig {
        cell_grid: CellGrid::new(2, 2),
        bin_size: 40,
        ..LossConfig::default()
    };
    vec![
        base.clone(),
        LossConfig {
            fusion: FusionOp::Product,
            ..base.clone()
        },
        LossConfig {
            fusion: FusionOp::Max,
            alpha: 0.7,
            beta: 0.3,
            ..base.clone()
        },
        LossConfig {
            weight_source: WeightSource::Dpe,
            ..base.clone()
        },
        LossConfig {
            weight_source: WeightSource::Dse,
            ..base.clone()
        },
        LossConfig {
            curriculum: true,
            ..base.clone()
        },
        LossConfig {
            baseline: Baseline::Ohem,
            beta: 0.0,
            ..base.clone()
        },
        LossConfig {
            baseline: Baseline::Focal,
            beta: 0.0,
            ..base.clone()
        },
        LossConfig {
            baseline: Baseline::Lmp,
            beta: 0.0,
            ..base.clone()
        },
        LossConfig {
            cell_grid: CellGrid::new(2, 2),
            ..LossConfig::seg_only()
        },
        LossConfig {
            cell_grid: CellGrid::new(2, 2),
            ..LossConfig::multitask()
        },
    ]
}

/// The composite objectives over eleven loss configurations, with respect to
/// every head output.
pub fn composite_objectives(instances: u64) -> Report {
    let configs = loss_configs();
    let mut r = Report::default();
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let heads = Heads {
            h: rng.gen_range(3..6),
            w: rng.gen_range(3..6),
            c: rng.gen_range(2..4),
        };
        let n = heads.h * heads.w * heads.c;
        let mut x = random_logits(&mut rng, n * (SIDE_OUTPUTS + 1));
        x.extend((0..heads.h * heads.w).map(|_| rng.gen_range(0.2..5.3)));
        let labels = random_labels(&mut rng, heads.h, heads.w, heads.c, 0.0);
        let depth = random_depth(&mut rng, heads.h, heads.w);
        let cfg = &configs[seed as usize % configs.len()];
        let targets = Targets::for_config(labels, &depth, cfg).unwrap();
        let schedule = cfg.curriculum.then_some(PaceSchedule::Epoch {
            epoch: rng.gen_range(0..5),
            total_epochs: 5,
        });

        // Weight maps and masks are constants of the objective.
        let (_, analytic, weights, masks) = heads.composite(&x, &targets, cfg, None, schedule);
        let fixed_masks = masks.clone();
        for i in 0..x.len() {
            let fd = central_diff(&x, i, 1e-4, |xx| {
                let (main, sides, d) = heads.split(xx);
                let main = probs(heads.h, heads.w, heads.c, main);
                let sides: Vec<_> = sides
                    .iter()
                    .map(|s| probs(heads.h, heads.w, heads.c, s))
                    .collect();
                let d = LogDepthMap::from_vec(heads.h, heads.w, d.to_vec()).unwrap();
                let out = HeadOutputs {
                    main: &main,
                    sides: &sides,
                    depth: &d,
                };
                evaluate_composite(&out, &targets, cfg, &weights, fixed_masks.as_ref())
                    .unwrap()
                    .total
            });
            r.check(close(analytic[i], fd, REL, FLOOR), || {
                format!(
                    "config {cfg:?} coordinate {i}: analytic {} vs numeric {fd}",
                    analytic[i]
                )
            });
        }
        r.instances += 1;
    }
    r
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> RgbImage {
    RgbImage::new(
        h,
        w,
        (0..h * w * 3).map(|_| rng.gen_range(0.0..1.0)).collect(),
    )
    .unwrap()
}

/// Composite loss of the network output with weight maps and masks held fixed.
fn net_loss(
    params: &ParamStore,
    image: &RgbImage,
    targets: &Targets,
    cfg: &LossConfig,
    fixed: Option<&(HeadWeights, Option<HeadMasks>)>,
    schedule: Option<PaceSchedule>,
) -> (
    f64,
    hardpix::losses::HeadGrads,
    HeadWeights,
    Option<HeadMasks>,
    hardpix::tinynet::ForwardTrace,
) {
    let trace = forward(params, image, true).unwrap();
    let main = trace.main_probs().unwrap();
    let sides = trace.side_probs().unwrap();
    let outputs = HeadOutputs {
        main: &main,
        sides: &sides,
        depth: &trace.log_depth,
    };
    let (weights, masks) = match fixed {
        Some((w, m)) => (w.clone(), m.clone()),
        None => {
            let w = build_weight_maps(&outputs, targets, cfg).unwrap();
            let m = schedule.map(|s| build_masks(&w, targets, s).unwrap());
            (w, m)
        }
    };
    let loss = evaluate_composite(&outputs, targets, cfg, &weights, masks.as_ref()).unwrap();
    (loss.total, loss.grads, weights, masks, trace)
}

/// Every parameter of small random networks under the composite objectives.
pub fn network(instances: u64) -> Report {
    let configs = loss_configs();
    let mut r = Report::default();
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let (h, w) = [(16, 16), (16, 32), (32, 16)][seed as usize % 3];
        let spec = NetSpec {
            base_width: 2,
            classes: rng.gen_range(2..4),
            init_seed: seed,
            ..NetSpec::default()
        };
        let mut params = ParamStore::init(&spec).unwrap();
        // Random biases move ReLUs off their default operating point.
        for t in 0..params.tensors().len() {
            if params.tensors()[t].name.ends_with(".bias")
                && !params.tensors()[t].name.starts_with("depth_head")
            {
                for v in params.tensor_mut(t) {
                    *v = rng.gen_range(-0.1..0.1);
                }
            }
        }
        let image = random_image(&mut rng, h, w);
        let cfg = &configs[seed as usize % configs.len()];
        let labels = random_labels(&mut rng, h, w, spec.classes, 0.05);
        let targets = Targets::for_config(labels, &random_depth(&mut rng, h, w), cfg).unwrap();
        let schedule = cfg.curriculum.then_some(PaceSchedule::Epoch {
            epoch: 1,
            total_epochs: 3,
        });

        let (_, head_grads, weights, masks, trace) =
            net_loss(&params, &image, &targets, cfg, None, schedule);
        let grads = backward(&params, &trace, &head_grads).unwrap();
        let fixed = (weights, masks);
        for t in 0..params.tensors().len() {
            for j in 0..params.tensors()[t].values.len() {
                let orig = params.tensors()[t].values[j];
                let mut fd_at = |step: f64| {
                    params.tensor_mut(t)[j] = orig + step;
                    let up = net_loss(&params, &image, &targets, cfg, Some(&fixed), None).0;
                    params.tensor_mut(t)[j] = orig - step;
                    let down = net_loss(&params, &image, &targets, cfg, Some(&fixed), None).0;
                    params.tensor_mut(t)[j] = orig;
                    (up - down) / (2.0 * step)
                };
                let analytic = grads.tensors[t][j];
                let fd = fd_at(1e-6);
                let mut ok = close(analytic, fd, REL, FLOOR);
                let mut fine = fd;
                if !ok {
                    // A ReLU or clamp kink inside the stencil; shrink it once.
                    fine = fd_at(1e-8);
                    ok = close(analytic, fine, REL, FLOOR);
                    r.kinks += 1;
                }
                let name = &params.tensors()[t].name;
                r.check(ok, || {
                    format!("seed {seed} {name}[{j}]: analytic {analytic} vs numeric {fd} (fine step {fine})")
                });
            }
        }
        r.instances += 1;
    }
    r
}
