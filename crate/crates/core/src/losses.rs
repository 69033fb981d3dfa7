//! Training losses and their gradients with respect to the pre-softmax logits
//! (segmentation) or the predicted log-depth (depth).
//!
//! Every segmentation loss takes the softmax probabilities and returns the
//! gradient for the logits that produced them, pixel-major like
//! [`SegProbMap`]. Loss-weight maps and curriculum masks are constants: no
//! gradient flows into them.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_shape, Error, Result};
use crate::grids::{DepthMap, Grid, LogDepthMap, LossWeightMap, Mask, SegLabelMap, SegProbMap};
use crate::hardmine::{
    build_dlr_partition, curriculum_pace_over, dpe_map, dse_map, fuse, threshold_mask, CellGrid,
    CurriculumPace, DlrPartition, FusionOp,
};

/// Number of auxiliary side outputs.
pub const SIDE_OUTPUTS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    /// Unreduced per-pixel contributions; `value` is their mean over valid pixels.
    pub per_pixel: Option<Grid<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossWithGrad {
    pub loss: LossValue,
    /// Gradient with respect to the logits (or predicted log-depth).
    pub grad: Vec<f64>,
}

impl LossWithGrad {
    pub fn value(&self) -> f64 {
        self.loss.value
    }
}

#[inline]
fn neg_log(p: f64) -> f64 {
    -p.max(f64::MIN_POSITIVE).ln()
}

fn check_pair(probs: &SegProbMap, gt: &SegLabelMap) -> Result<()> {
    ensure_shape(gt.shape(), probs.shape())?;
    if probs.classes() != gt.classes() {
        return Err(Error::invalid(
            "probs",
            format!(
                "{} classes in probabilities, {} in labels",
                probs.classes(),
                gt.classes()
            ),
        ));
    }
    Ok(())
}

fn valid_count(gt: &SegLabelMap) -> Result<usize> {
    match gt.valid_count() {
        0 => Err(Error::NoValidPixels),
        n => Ok(n),
    }
}

/// Writes `scale * (p - onehot(label))` for one pixel.
#[inline]
fn softmax_ce_grad(p: &[f64], label: usize, scale: f64, out: &mut [f64]) {
    for (j, (o, &pj)) in out.iter_mut().zip(p).enumerate() {
        let y = if j == label { 1.0 } else { 0.0 };
        *o = scale * (pj - y);
    }
}

/// Per-pixel weighted CE. `weight(i)` of zero skips the pixel entirely.
fn weighted_ce_core(
    probs: &SegProbMap,
    gt: &SegLabelMap,
    weight: impl Fn(usize) -> f64,
    normalizer: f64,
) -> LossWithGrad {
    let (h, w) = probs.shape();
    let c = probs.classes();
    let mut per_pixel = vec![0.0; h * w];
    let mut grad = vec![0.0; h * w * c];
    let mut sum = 0.0;
    for i in 0..h * w {
        let Some(label) = gt.label(i) else { continue };
        let wi = weight(i);
        if wi == 0.0 {
            continue;
        }
        let p = probs.pixel(i);
        let l = wi * neg_log(p[label]);
        per_pixel[i] = l;
        sum += l;
        softmax_ce_grad(p, label, wi / normalizer, &mut grad[i * c..(i + 1) * c]);
    }
    LossWithGrad {
        loss: LossValue {
            value: sum / normalizer,
            per_pixel: Some(Grid::new(h, w, per_pixel).expect("shape checked")),
        },
        grad,
    }
}

/// Mean cross-entropy over valid pixels.
pub fn ce_loss(probs: &SegProbMap, gt: &SegLabelMap) -> Result<LossWithGrad> {
    check_pair(probs, gt)?;
    let n = valid_count(gt)?;
    Ok(weighted_ce_core(probs, gt, |_| 1.0, n as f64))
}

/// Mean squared log-depth residual; gradient `2 R_i / n`.
pub fn depth_loss(pred: &LogDepthMap, gt: &LogDepthMap) -> Result<LossWithGrad> {
    ensure_shape(gt.shape(), pred.shape())?;
    let (h, w) = pred.shape();
    let n = (h * w) as f64;
    let mut per_pixel = Vec::with_capacity(h * w);
    let mut grad = Vec::with_capacity(h * w);
    let mut sum = 0.0;
    for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
        let r = p - g;
        per_pixel.push(r * r);
        sum += r * r;
        grad.push(2.0 * r / n);
    }
    Ok(LossWithGrad {
        loss: LossValue {
            value: sum / n,
            per_pixel: Some(Grid::new(h, w, per_pixel)?),
        },
        grad,
    })
}

/// `-(1/n) sum_i mask_i M_i log p_i,y`, normalized by the valid-pixel count
/// (not by the total weight).
pub fn weighted_ce_loss(
    probs: &SegProbMap,
    gt: &SegLabelMap,
    weights: &LossWeightMap,
    mask: Option<&Mask>,
) -> Result<LossWithGrad> {
    check_pair(probs, gt)?;
    ensure_shape(gt.shape(), weights.shape())?;
    if let Some(m) = mask {
        ensure_shape(gt.shape(), m.shape())?;
    }
    let n = valid_count(gt)?;
    let m = weights.as_slice();
    Ok(match mask {
        None => weighted_ce_core(probs, gt, |i| m[i], n as f64),
        Some(mask) => {
            let admit = mask.as_slice();
            weighted_ce_core(probs, gt, |i| if admit[i] { m[i] } else { 0.0 }, n as f64)
        }
    })
}

/// Mean of `-(1 - p_t)^gamma log p_t` over valid pixels.
pub fn focal_loss(probs: &SegProbMap, gt: &SegLabelMap, gamma: f64) -> Result<LossWithGrad> {
    check_pair(probs, gt)?;
    if gamma.is_nan() || gamma < 0.0 {
        return Err(Error::invalid(
            "focal_gamma",
            format!("must be >= 0, got {gamma}"),
        ));
    }
    let n = valid_count(gt)? as f64;
    let (h, w) = probs.shape();
    let c = probs.classes();
    let mut per_pixel = vec![0.0; h * w];
    let mut grad = vec![0.0; h * w * c];
    let mut sum = 0.0;
    for i in 0..h * w {
        let Some(t) = gt.label(i) else { continue };
        let p = probs.pixel(i);
        let pt = p[t].max(f64::MIN_POSITIVE);
        let q = 1.0 - p[t];
        let log_pt = pt.ln();
        let focus = q.powf(gamma);
        let l = -focus * log_pt;
        per_pixel[i] = l;
        sum += l;
        // d/dp_t of -(1-p)^g log p
        let slope = if gamma == 0.0 || q <= 0.0 {
            0.0
        } else {
            gamma * q.powf(gamma - 1.0) * log_pt
        } - focus / pt;
        let dl_dpt = slope * p[t] / n;
        for (j, g) in grad[i * c..(i + 1) * c].iter_mut().enumerate() {
            let delta = if j == t { 1.0 } else { 0.0 };
            *g = dl_dpt * (delta - p[j]);
        }
    }
    Ok(LossWithGrad {
        loss: LossValue {
            value: sum / n,
            per_pixel: Some(Grid::new(h, w, per_pixel)?),
        },
        grad,
    })
}

fn check_fraction(arg: &'static str, f: f64) -> Result<()> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::invalid(arg, format!("must be in (0, 1], got {f}")));
    }
    Ok(())
}

/// Valid pixels ranked by CE, largest first; ties go to the lower pixel index.
fn ranked_by_ce(probs: &SegProbMap, gt: &SegLabelMap) -> (Vec<f64>, Vec<usize>) {
    let n = probs.pixels();
    let mut ce = vec![0.0; n];
    let mut order = Vec::with_capacity(n);
    for (i, v) in ce.iter_mut().enumerate() {
        if let Some(t) = gt.label(i) {
            *v = neg_log(probs.pixel(i)[t]);
            order.push(i);
        }
    }
    order.sort_by(|&a, &b| ce[b].total_cmp(&ce[a]).then(a.cmp(&b)));
    (ce, order)
}

/// Per-pixel weights applied on top of CE, summed in pixel order.
fn selected_ce(
    probs: &SegProbMap,
    gt: &SegLabelMap,
    weights: &[f64],
    n_valid: usize,
) -> LossWithGrad {
    let (h, w) = probs.shape();
    let c = probs.classes();
    let mut per_pixel = vec![0.0; h * w];
    let mut grad = vec![0.0; h * w * c];
    let mut sum = 0.0;
    for i in 0..h * w {
        let wi = weights[i];
        if wi == 0.0 {
            continue;
        }
        let t = gt.label(i).expect("only valid pixels are weighted");
        let p = probs.pixel(i);
        let l = wi * neg_log(p[t]);
        sum += l;
        per_pixel[i] = l * n_valid as f64;
        softmax_ce_grad(p, t, wi, &mut grad[i * c..(i + 1) * c]);
    }
    LossWithGrad {
        loss: LossValue {
            value: sum,
            per_pixel: Some(Grid::new(h, w, per_pixel).expect("shape checked")),
        },
        grad,
    }
}

/// Online hard example mining: mean CE over the `ceil(keep_fraction * n)`
/// highest-loss valid pixels.
pub fn ohem_loss(probs: &SegProbMap, gt: &SegLabelMap, keep_fraction: f64) -> Result<LossWithGrad> {
    check_pair(probs, gt)?;
    check_fraction("ohem_keep_fraction", keep_fraction)?;
    let n = valid_count(gt)?;
    let (_, order) = ranked_by_ce(probs, gt);
    let keep = ((keep_fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut weights = vec![0.0; probs.pixels()];
    for &i in &order[..keep] {
        weights[i] = 1.0 / keep as f64;
    }
    Ok(selected_ce(probs, gt, &weights, n))
}

/// Loss max-pooling, reduced to averaging the top `pool_fraction` quantile of
/// per-pixel CE: the `floor(f n)` largest losses get weight `1/(f n)` and the
/// next one carries the fractional remainder, so weights always sum to one.
pub fn lmp_loss(probs: &SegProbMap, gt: &SegLabelMap, pool_fraction: f64) -> Result<LossWithGrad> {
    check_pair(probs, gt)?;
    check_fraction("lmp_pool_fraction", pool_fraction)?;
    let n = valid_count(gt)?;
    let (_, order) = ranked_by_ce(probs, gt);
    let mass = pool_fraction * n as f64;
    let full = (mass.floor() as usize).min(n);
    let mut weights = vec![0.0; probs.pixels()];
    for &i in &order[..full] {
        weights[i] = 1.0 / mass;
    }
    let rest = mass - full as f64;
    if rest > 0.0 && full < n {
        weights[order[full]] = rest / mass;
    }
    Ok(selected_ce(probs, gt, &weights, n))
}

/// Which hard-pixel measurement feeds the loss-weight map.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightSource {
    /// Fusion of depth prediction error and depth-aware segmentation error.
    #[default]
    Both,
    /// Depth prediction error only.
    Dpe,
    /// Depth-aware segmentation error only.
    Dse,
}

/// Alternative hard-mining term that replaces the weighted loss on the main output.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    #[default]
    None,
    Ohem,
    Focal,
    Lmp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the hard-pixel term on the main output.
    pub alpha: f64,
    /// Weight of each side-output hard-pixel term.
    pub beta: f64,
    pub fusion: FusionOp,
    pub cell_grid: CellGrid,
    /// Depth bin width in sensor units.
    pub bin_size: u32,
    pub curriculum: bool,
    /// Include the log-depth regression term.
    pub depth_loss: bool,
    pub weight_source: WeightSource,
    pub baseline: Baseline,
    pub ohem_keep_fraction: f64,
    pub focal_gamma: f64,
    pub lmp_pool_fraction: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 1.0,
            beta: 0.1,
            fusion: FusionOp::Sum,
            cell_grid: CellGrid::new(8, 8),
            bin_size: 10,
            curriculum: false,
            depth_loss: true,
            weight_source: WeightSource::Both,
            baseline: Baseline::None,
            ohem_keep_fraction: 0.25,
            focal_gamma: 2.0,
            lmp_pool_fraction: 0.25,
        }
    }
}

impl LossConfig {
    /// Plain cross-entropy.
    pub fn seg_only() -> Self {
        LossConfig {
            alpha: 0.0,
            beta: 0.0,
            depth_loss: false,
            ..Default::default()
        }
    }

    /// Cross-entropy plus depth regression.
    pub fn multitask() -> Self {
        LossConfig {
            alpha: 0.0,
            beta: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |arg: &'static str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(
                    arg,
                    format!("must be a finite value >= 0, got {v}"),
                ))
            }
        };
        nonneg("alpha", self.alpha)?;
        nonneg("beta", self.beta)?;
        nonneg("focal_gamma", self.focal_gamma)?;
        check_fraction("ohem_keep_fraction", self.ohem_keep_fraction)?;
        check_fraction("lmp_pool_fraction", self.lmp_pool_fraction)?;
        if self.bin_size == 0 {
            return Err(Error::invalid("bin_size", "must be at least 1"));
        }
        if self.cell_grid.cols == 0 || self.cell_grid.rows == 0 {
            return Err(Error::invalid(
                "cell_grid",
                "needs at least one cell per axis",
            ));
        }
        Ok(())
    }

    pub fn needs_main_weights(&self) -> bool {
        self.alpha > 0.0 && self.baseline == Baseline::None
    }

    pub fn needs_side_weights(&self) -> bool {
        self.beta > 0.0
    }
}

/// Ground truth for one scene, with its depth-region partition precomputed.
#[derive(Clone, Debug)]
pub struct Targets {
    pub labels: SegLabelMap,
    pub log_depth: LogDepthMap,
    pub partition: DlrPartition,
    /// `None` when every pixel is labeled.
    valid: Option<Mask>,
}

impl Targets {
    pub fn new(
        labels: SegLabelMap,
        depth: &DepthMap,
        cells: CellGrid,
        bin_size: u32,
    ) -> Result<Self> {
        ensure_shape(labels.shape(), depth.shape())?;
        let partition = build_dlr_partition(depth, cells, bin_size)?;
        let (h, w) = labels.shape();
        let valid = (labels.valid_count() < h * w).then(|| {
            Mask::new(
                Grid::new(
                    h,
                    w,
                    (0..h * w).map(|i| labels.label(i).is_some()).collect(),
                )
                .expect("shape"),
            )
        });
        Ok(Targets {
            labels,
            log_depth: depth.to_log(),
            partition,
            valid,
        })
    }

    pub fn for_config(labels: SegLabelMap, depth: &DepthMap, cfg: &LossConfig) -> Result<Self> {
        Self::new(labels, depth, cfg.cell_grid, cfg.bin_size)
    }

    pub fn valid_mask(&self) -> Option<&Mask> {
        self.valid.as_ref()
    }
}

/// Network outputs after softmax, at full resolution.
#[derive(Clone, Copy, Debug)]
pub struct HeadOutputs<'a> {
    pub main: &'a SegProbMap,
    pub sides: &'a [SegProbMap],
    pub depth: &'a LogDepthMap,
}

/// Loss-weight maps for the main output and each side output.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadWeights {
    pub dpe: LossWeightMap,
    /// `None` when the main hard term is disabled.
    pub main: Option<LossWeightMap>,
    /// Empty when side terms are disabled.
    pub sides: Vec<LossWeightMap>,
}

/// Curriculum state applied to each weighted term.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadMasks {
    pub main: Option<(CurriculumPace, Mask)>,
    pub sides: Vec<(CurriculumPace, Mask)>,
}

impl HeadMasks {
    /// Fraction of pixels admitted on the main output.
    pub fn main_admitted_fraction(&self) -> Option<f64> {
        self.main.as_ref().map(|(_, m)| m.fraction())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrads {
    /// Pixel-major gradient for the main logits.
    pub main: Vec<f64>,
    /// Per side output; empty when side terms are disabled.
    pub sides: Vec<Vec<f64>>,
    /// Gradient for predicted log-depth; zeros when the depth term is off.
    pub depth: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompositeLoss {
    pub total: f64,
    pub seg: f64,
    pub depth: f64,
    /// Hard-pixel (or baseline) term on the main output, before `alpha`.
    pub hard: f64,
    /// Side-output terms, before `beta`.
    pub sides: Vec<f64>,
    pub grads: HeadGrads,
}

fn check_outputs(outputs: &HeadOutputs<'_>, targets: &Targets, cfg: &LossConfig) -> Result<()> {
    if cfg.needs_side_weights() && outputs.sides.len() != SIDE_OUTPUTS {
        return Err(Error::invalid(
            "side_outputs",
            format!("expected {SIDE_OUTPUTS}, got {}", outputs.sides.len()),
        ));
    }
    ensure_shape(targets.labels.shape(), outputs.main.shape())?;
    ensure_shape(targets.labels.shape(), outputs.depth.shape())?;
    for s in outputs.sides {
        ensure_shape(targets.labels.shape(), s.shape())?;
    }
    Ok(())
}

fn weight_map(
    probs: &SegProbMap,
    dpe: &LossWeightMap,
    targets: &Targets,
    cfg: &LossConfig,
) -> Result<LossWeightMap> {
    match cfg.weight_source {
        WeightSource::Dpe => Ok(dpe.clone()),
        WeightSource::Dse => dse_map(&probs.argmax(), &targets.labels, &targets.partition),
        WeightSource::Both => {
            let z = dse_map(&probs.argmax(), &targets.labels, &targets.partition)?;
            fuse(dpe, &z, cfg.fusion)
        }
    }
}

/// Builds the shared depth-error map and each output's fused weight map from
/// the current predictions.
pub fn build_weight_maps(
    outputs: &HeadOutputs<'_>,
    targets: &Targets,
    cfg: &LossConfig,
) -> Result<HeadWeights> {
    check_outputs(outputs, targets, cfg)?;
    let dpe = dpe_map(outputs.depth, &targets.log_depth)?;
    let main = if cfg.needs_main_weights() {
        Some(weight_map(outputs.main, &dpe, targets, cfg)?)
    } else {
        None
    };
    let sides = if cfg.needs_side_weights() {
        outputs
            .sides
            .iter()
            .map(|s| weight_map(s, &dpe, targets, cfg))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    Ok(HeadWeights { dpe, main, sides })
}

/// How the curriculum threshold is chosen for each weight map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PaceSchedule {
    Epoch {
        epoch: usize,
        total_epochs: usize,
    },
    /// A fixed threshold shared by every map.
    Fixed(f64),
}

pub fn build_masks(
    weights: &HeadWeights,
    targets: &Targets,
    schedule: PaceSchedule,
) -> Result<HeadMasks> {
    let one = |m: &LossWeightMap| -> Result<(CurriculumPace, Mask)> {
        let pace = match schedule {
            PaceSchedule::Epoch {
                epoch,
                total_epochs,
            } => curriculum_pace_over(m, targets.valid_mask(), epoch, total_epochs)?,
            PaceSchedule::Fixed(eta) => CurriculumPace {
                epoch: 0,
                total_epochs: 0,
                u1: f64::NAN,
                u2: f64::NAN,
                eta,
            },
        };
        Ok((pace, threshold_mask(m, pace.eta)))
    };
    Ok(HeadMasks {
        main: weights.main.as_ref().map(one).transpose()?,
        sides: weights.sides.iter().map(one).collect::<Result<_>>()?,
    })
}

fn baseline_term(probs: &SegProbMap, gt: &SegLabelMap, cfg: &LossConfig) -> Result<LossWithGrad> {
    match cfg.baseline {
        Baseline::Ohem => ohem_loss(probs, gt, cfg.ohem_keep_fraction),
        Baseline::Focal => focal_loss(probs, gt, cfg.focal_gamma),
        Baseline::Lmp => lmp_loss(probs, gt, cfg.lmp_pool_fraction),
        Baseline::None => unreachable!("caller checks for a baseline"),
    }
}

fn axpy(acc: &mut [f64], scale: f64, g: &[f64]) {
    for (a, &b) in acc.iter_mut().zip(g) {
        *a += scale * b;
    }
}

/// `L_s + L_d + alpha * L_h + beta * sum_k L_hk` with the given (fixed)
/// weight maps and optional curriculum masks.
pub fn evaluate_composite(
    outputs: &HeadOutputs<'_>,
    targets: &Targets,
    cfg: &LossConfig,
    weights: &HeadWeights,
    masks: Option<&HeadMasks>,
) -> Result<CompositeLoss> {
    check_outputs(outputs, targets, cfg)?;
    let gt = &targets.labels;
    let seg = ce_loss(outputs.main, gt)?;
    let mut total = seg.value();
    let mut main_grad = seg.grad;
    let n_pixels = gt.shape().0 * gt.shape().1;

    let (depth_value, depth_grad) = if cfg.depth_loss {
        let d = depth_loss(outputs.depth, &targets.log_depth)?;
        total += d.value();
        (d.value(), d.grad)
    } else {
        (0.0, vec![0.0; n_pixels])
    };

    let mut hard = 0.0;
    if cfg.alpha > 0.0 {
        let term = if cfg.baseline != Baseline::None {
            baseline_term(outputs.main, gt, cfg)?
        } else {
            let m = weights
                .main
                .as_ref()
                .ok_or_else(|| Error::invalid("weights", "main weight map missing"))?;
            let mask = masks.and_then(|mk| mk.main.as_ref()).map(|(_, mask)| mask);
            weighted_ce_loss(outputs.main, gt, m, mask)?
        };
        hard = term.value();
        total += cfg.alpha * hard;
        axpy(&mut main_grad, cfg.alpha, &term.grad);
    }

    let mut side_values = Vec::new();
    let mut side_grads = Vec::new();
    if cfg.beta > 0.0 {
        if weights.sides.len() != SIDE_OUTPUTS {
            return Err(Error::invalid("weights", "side weight maps missing"));
        }
        let mut side_sum = 0.0;
        for (k, probs) in outputs.sides.iter().enumerate() {
            let mask = masks.and_then(|mk| mk.sides.get(k)).map(|(_, mask)| mask);
            let mut term = weighted_ce_loss(probs, gt, &weights.sides[k], mask)?;
            side_sum += term.value();
            side_values.push(term.value());
            for g in &mut term.grad {
                *g *= cfg.beta;
            }
            side_grads.push(term.grad);
        }
        total += cfg.beta * side_sum;
    }

    Ok(CompositeLoss {
        total,
        seg: seg.loss.value,
        depth: depth_value,
        hard,
        sides: side_values,
        grads: HeadGrads {
            main: main_grad,
            sides: side_grads,
            depth: depth_grad,
        },
    })
}

/// Hard-pixel-mining objective with weight maps rebuilt from `outputs`.
pub fn compose_hpm(
    outputs: &HeadOutputs<'_>,
    targets: &Targets,
    cfg: &LossConfig,
) -> Result<CompositeLoss> {
    let weights = build_weight_maps(outputs, targets, cfg)?;
    evaluate_composite(outputs, targets, cfg, &weights, None)
}

/// Curriculum objective: each weighted term only sees pixels below its own
/// learning pace. The segmentation and depth terms are never masked.
pub fn compose_curriculum(
    outputs: &HeadOutputs<'_>,
    targets: &Targets,
    cfg: &LossConfig,
    epoch: usize,
    total_epochs: usize,
) -> Result<CompositeLoss> {
    compose_with_schedule(
        outputs,
        targets,
        cfg,
        PaceSchedule::Epoch {
            epoch,
            total_epochs,
        },
    )
    .map(|(loss, _)| loss)
}

pub fn compose_with_schedule(
    outputs: &HeadOutputs<'_>,
    targets: &Targets,
    cfg: &LossConfig,
    schedule: PaceSchedule,
) -> Result<(CompositeLoss, HeadMasks)> {
    let weights = build_weight_maps(outputs, targets, cfg)?;
    let masks = build_masks(&weights, targets, schedule)?;
    let loss = evaluate_composite(outputs, targets, cfg, &weights, Some(&masks))?;
    Ok((loss, masks))
}
