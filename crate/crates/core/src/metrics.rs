//! Segmentation metrics and the depth-error / segmentation-error correlation.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_shape, Error, Result};
use crate::grids::{LogDepthMap, SegLabelMap};

/// `C x C` counts, row = ground-truth class, column = predicted class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::invalid(
                "counts",
                format!(
                    "expected {} entries, got {}",
                    classes * classes,
                    counts.len()
                ),
            ));
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Accumulates another image's confusion.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::invalid("confusion", "class counts differ"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

/// Counts valid pixels by (ground truth, prediction). Predictions outside
/// `[0, C)` on valid pixels are an error.
pub fn confusion_matrix(
    pred: &SegLabelMap,
    gt: &SegLabelMap,
    classes: usize,
) -> Result<ConfusionMatrix> {
    ensure_shape(gt.shape(), pred.shape())?;
    let mut cm = ConfusionMatrix::zeros(classes);
    for (i, &p) in pred.as_slice().iter().enumerate() {
        let Some(t) = gt.label(i) else { continue };
        let p = p as usize;
        if t >= classes || p >= classes {
            return Err(Error::invalid(
                "pred",
                format!("pixel {i}: class pair ({t}, {p}) outside {classes} classes"),
            ));
        }
        cm.counts[t * classes + p] += 1;
    }
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegMetrics {
    /// `None` for classes absent from both ground truth and prediction.
    pub iou_per_class: Vec<Option<f64>>,
    /// `None` for classes absent from the ground truth.
    pub acc_per_class: Vec<Option<f64>>,
    pub mean_iou: f64,
    pub pixel_acc: f64,
    pub mean_acc: f64,
    /// Classes left out of `mean_iou`.
    pub excluded_classes: Vec<usize>,
}

pub fn seg_metrics(cm: &ConfusionMatrix) -> Result<SegMetrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::invalid("confusion", "no counted pixels"));
    }
    let c = cm.classes;
    let mut iou = Vec::with_capacity(c);
    let mut acc = Vec::with_capacity(c);
    let mut excluded = Vec::new();
    let mut trace = 0u64;
    for k in 0..c {
        let tp = cm.get(k, k);
        trace += tp;
        let gt_count: u64 = (0..c).map(|j| cm.get(k, j)).sum();
        let pred_count: u64 = (0..c).map(|i| cm.get(i, k)).sum();
        let union = gt_count + pred_count - tp;
        if union == 0 {
            iou.push(None);
            excluded.push(k);
        } else {
            iou.push(Some(tp as f64 / union as f64));
        }
        acc.push((gt_count > 0).then(|| tp as f64 / gt_count as f64));
    }
    let mean = |v: &[Option<f64>]| {
        let present: Vec<f64> = v.iter().flatten().copied().collect();
        if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        }
    };
    Ok(SegMetrics {
        mean_iou: mean(&iou),
        mean_acc: mean(&acc),
        pixel_acc: trace as f64 / total as f64,
        iou_per_class: iou,
        acc_per_class: acc,
        excluded_classes: excluded,
    })
}

/// Per-bin pixel count and misclassification rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBin {
    pub lower: f64,
    pub upper: f64,
    pub count: u64,
    pub errors: u64,
    /// `None` for empty bins.
    pub error_rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub bins: Vec<ErrorBin>,
    pub max_error: f64,
    /// Spearman rank correlation of bin index vs error rate over nonempty
    /// bins; `None` with fewer than two nonempty bins or constant rates.
    pub spearman: Option<f64>,
}

/// Accumulates log-depth errors and misclassification flags over many images,
/// then bins them into equal-width bins over `[0, observed max]`.
#[derive(Clone, Debug, Default)]
pub struct CorrelationAccumulator {
    errors: Vec<f64>,
    wrong: Vec<bool>,
}

impl CorrelationAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        pred_logdepth: &LogDepthMap,
        gt_logdepth: &LogDepthMap,
        pred_labels: &SegLabelMap,
        gt_labels: &SegLabelMap,
    ) -> Result<()> {
        let shape = gt_labels.shape();
        ensure_shape(shape, pred_labels.shape())?;
        ensure_shape(shape, pred_logdepth.shape())?;
        ensure_shape(shape, gt_logdepth.shape())?;
        for i in 0..shape.0 * shape.1 {
            let Some(t) = gt_labels.label(i) else {
                continue;
            };
            self.errors
                .push((pred_logdepth.as_slice()[i] - gt_logdepth.as_slice()[i]).abs());
            self.wrong.push(pred_labels.as_slice()[i] as usize != t);
        }
        Ok(())
    }

    pub fn finish(&self, n_bins: usize) -> Result<CorrelationReport> {
        if n_bins < 2 {
            return Err(Error::invalid(
                "n_bins",
                format!("need at least 2, got {n_bins}"),
            ));
        }
        let max_error = self.errors.iter().copied().fold(0.0, f64::max);
        let width = max_error / n_bins as f64;
        let mut count = vec![0u64; n_bins];
        let mut errors = vec![0u64; n_bins];
        for (&e, &w) in self.errors.iter().zip(&self.wrong) {
            let b = error_bin(e, max_error, n_bins);
            count[b] += 1;
            errors[b] += u64::from(w);
        }
        let bins: Vec<ErrorBin> = (0..n_bins)
            .map(|b| ErrorBin {
                lower: b as f64 * width,
                upper: if b + 1 == n_bins {
                    max_error
                } else {
                    (b + 1) as f64 * width
                },
                count: count[b],
                errors: errors[b],
                error_rate: (count[b] > 0).then(|| errors[b] as f64 / count[b] as f64),
            })
            .collect();
        let (idx, rates): (Vec<f64>, Vec<f64>) = bins
            .iter()
            .enumerate()
            .filter_map(|(b, bin)| bin.error_rate.map(|r| (b as f64, r)))
            .unzip();
        Ok(CorrelationReport {
            spearman: spearman(&idx, &rates),
            bins,
            max_error,
        })
    }
}

/// Equal-width bin of `e` over `[0, max]`; the max itself lands in the last bin.
#[inline]
pub fn error_bin(e: f64, max: f64, n_bins: usize) -> usize {
    if max <= 0.0 {
        return 0;
    }
    ((e / max * n_bins as f64).floor() as usize).min(n_bins - 1)
}

pub fn correlation_analysis(
    pred_logdepth: &LogDepthMap,
    gt_logdepth: &LogDepthMap,
    pred_labels: &SegLabelMap,
    gt_labels: &SegLabelMap,
    n_bins: usize,
) -> Result<CorrelationReport> {
    let mut acc = CorrelationAccumulator::new();
    acc.add(pred_logdepth, gt_logdepth, pred_labels, gt_labels)?;
    acc.finish(n_bins)
}

/// Fractional ranks (ties share the mean rank), 1-based.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson correlation of fractional ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let rx = ranks(x);
    let ry = ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grids::Grid;

    fn lm(h: usize, w: usize, v: Vec<u16>, c: usize) -> SegLabelMap {
        SegLabelMap::new(Grid::new(h, w, v).unwrap(), c).unwrap()
    }

    #[test]
    fn perfect_prediction_is_diagonal() {
        let gt = lm(2, 3, vec![0, 1, 2, 2, 1, 0], 3);
        let cm = confusion_matrix(&gt, &gt, 3).unwrap();
        assert_eq!(cm.counts(), &[2, 0, 0, 0, 2, 0, 0, 0, 2]);
        let m = seg_metrics(&cm).unwrap();
        assert_eq!((m.mean_iou, m.pixel_acc, m.mean_acc), (1.0, 1.0, 1.0));
    }

    #[test]
    fn two_pixel_example() {
        let gt = lm(2, 1, vec![0, 1], 2);
        let pred = lm(2, 1, vec![1, 1], 2);
        let cm = confusion_matrix(&pred, &gt, 2).unwrap();
        assert_eq!(cm.get(0, 1), 1);
        assert_eq!(cm.get(1, 1), 1);
        assert_eq!(cm.total(), 2);
    }

    #[test]
    fn all_wrong_binary() {
        let cm = ConfusionMatrix::from_counts(2, vec![0, 5, 0, 0]).unwrap();
        let m = seg_metrics(&cm).unwrap();
        assert_eq!(m.pixel_acc, 0.0);
        assert_eq!(m.iou_per_class, vec![Some(0.0), Some(0.0)]);
        assert_eq!(m.mean_iou, 0.0);
    }

    #[test]
    fn hand_confusion() {
        let cm = ConfusionMatrix::from_counts(2, vec![3, 1, 1, 3]).unwrap();
        let m = seg_metrics(&cm).unwrap();
        assert_eq!(m.iou_per_class, vec![Some(0.6), Some(0.6)]);
        assert_eq!(m.pixel_acc, 0.75);
    }

    #[test]
    fn absent_classes_are_excluded() {
        let cm = ConfusionMatrix::from_counts(3, vec![2, 0, 0, 0, 2, 0, 0, 0, 0]).unwrap();
        let m = seg_metrics(&cm).unwrap();
        assert_eq!(m.excluded_classes, vec![2]);
        assert_eq!(m.mean_iou, 1.0);
        assert!(seg_metrics(&ConfusionMatrix::zeros(3)).is_err());
    }

    #[test]
    fn ignored_pixels_not_counted() {
        let gt = SegLabelMap::with_ignore(Grid::new(1, 3, vec![0, 2, 1]).unwrap(), 2).unwrap();
        let pred = lm(1, 3, vec![0, 0, 0], 2);
        assert_eq!(confusion_matrix(&pred, &gt, 2).unwrap().total(), 2);
    }

    #[test]
    fn correlation_edge_cases() {
        let gt_d = LogDepthMap::from_vec(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let pred_d = LogDepthMap::from_vec(1, 4, vec![1.5, 2.0, 3.0, 5.0]).unwrap();
        let gt = lm(1, 4, vec![0, 1, 0, 1], 2);
        let r = correlation_analysis(&pred_d, &gt_d, &gt, &gt, 10).unwrap();
        assert!(r.bins.iter().all(|b| b.error_rate.unwrap_or(0.0) == 0.0));
        assert_eq!(r.bins.iter().map(|b| b.count).sum::<u64>(), 4);

        let r =
            correlation_analysis(&gt_d, &gt_d, &lm(1, 4, vec![1, 1, 1, 1], 2), &gt, 10).unwrap();
        assert_eq!(r.bins[0].count, 4);
        assert_eq!(r.bins[0].error_rate, Some(0.5));
        assert_eq!(r.spearman, None);
        assert!(correlation_analysis(&gt_d, &gt_d, &gt, &gt, 1).is_err());
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[0.1, 0.5, 0.9]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[0.9, 0.5, 0.1]), Some(-1.0));
        let r = spearman(&[0.0, 1.0, 2.0, 3.0], &[0.1, 0.1, 0.3, 0.2]).unwrap();
        // ranks y = [1.5, 1.5, 4, 3]
        let expected = 3.5 / (5.0f64 * 4.5).sqrt();
        assert!((r - expected).abs() < 1e-12);
    }
}
