//! Scalar-loop reference implementations of the hard-mining maps and the
//! segmentation metrics, plus randomized suites comparing them with the
//! library. Shared with the acceptance harness through `#[path]`.
//!
//! The references are deliberately naive: bins and cells are found by
//! counting thresholds, region rates by scanning every pixel pair, medians by
//! counting order statistics.

#![allow(dead_code, clippy::needless_range_loop, clippy::manual_div_ceil)]

use hardpix::grids::{DepthMap, Grid, LogDepthMap, LossWeightMap, Mask, SegLabelMap};
use hardpix::hardmine::{
    build_dlr_partition, curriculum_mask, curriculum_pace_over, dpe_map, dse_map, fuse, CellGrid,
    FusionOp,
};
use hardpix::metrics::{confusion_matrix, seg_metrics, ConfusionMatrix};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const FLOAT_TOL: f64 = 1e-12;

#[derive(Debug, Default)]
pub struct Summary {
    pub instances: usize,
    pub comparisons: usize,
    pub max_float_err: f64,
    pub failures: Vec<String>,
}

impl Summary {
    fn float(&mut self, what: &str, inst: usize, got: f64, want: f64) {
        self.comparisons += 1;
        let err = (got - want).abs();
        self.max_float_err = self.max_float_err.max(err);
        if err.is_nan() || err > FLOAT_TOL {
            self.fail(format!("instance {inst}: {what}: got {got}, oracle {want}"));
        }
    }

    fn exact<T: PartialEq + std::fmt::Debug>(&mut self, what: &str, inst: usize, got: T, want: T) {
        self.comparisons += 1;
        if got != want {
            self.fail(format!(
                "instance {inst}: {what}: got {got:?}, oracle {want:?}"
            ));
        }
    }

    fn fail(&mut self, msg: String) {
        if self.failures.len() < 20 {
            self.failures.push(msg);
        }
    }

    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Bin index as the number of bin edges `1 + k*d` at or below `v`.
pub fn oracle_bin(v: f64, d: u32) -> usize {
    let bins = (256 + d as usize - 1) / d as usize;
    let mut t = 0;
    for k in 1..bins {
        if 1.0 + (k as f64) * d as f64 <= v {
            t += 1;
        }
    }
    t
}

/// Cell index along one axis as the number of cell starts at or before `x`.
pub fn oracle_cell_axis(x: usize, extent: usize, cells: usize) -> usize {
    (1..cells)
        .filter(|&k| (k * extent).div_ceil(cells) <= x)
        .count()
}

pub fn oracle_regions(depth: &DepthMap, cells: CellGrid, d: u32) -> Vec<(usize, usize)> {
    let (h, w) = depth.shape();
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let cell = oracle_cell_axis(r, h, cells.rows) * cells.cols
                + oracle_cell_axis(c, w, cells.cols);
            out.push((cell, oracle_bin(*depth.grid().get(r, c), d)));
        }
    }
    out
}

/// Every pixel's region error rate, by scanning the whole image per pixel.
pub fn oracle_dse(pred: &SegLabelMap, gt: &SegLabelMap, regions: &[(usize, usize)]) -> Vec<f64> {
    let n = regions.len();
    let mut out = vec![0.0; n];
    for i in 0..n {
        let mut wrong = 0u32;
        let mut total = 0u32;
        for j in 0..n {
            if regions[j] != regions[i] {
                continue;
            }
            if let Some(t) = gt.label(j) {
                total += 1;
                if pred.as_slice()[j] as usize != t {
                    wrong += 1;
                }
            }
        }
        out[i] = if total == 0 {
            0.0
        } else {
            wrong as f64 / total as f64
        };
    }
    out
}

pub fn oracle_dpe(pred: &LogDepthMap, gt: &LogDepthMap) -> Vec<f64> {
    let (h, w) = gt.shape();
    let mut diff = vec![0.0; h * w];
    let mut max = 0.0f64;
    for r in 0..h {
        for c in 0..w {
            let v = (pred.grid().get(r, c) - gt.grid().get(r, c)).abs();
            diff[r * w + c] = v;
            if v > max {
                max = v;
            }
        }
    }
    if max == 0.0 {
        return diff;
    }
    diff.iter().map(|v| v / max).collect()
}

pub fn oracle_fuse(r: f64, z: f64, op: FusionOp) -> f64 {
    match op {
        FusionOp::Sum => r + z,
        FusionOp::Product => r * z,
        FusionOp::Max => {
            if r >= z {
                r
            } else {
                z
            }
        }
    }
}

/// The `k`-th smallest value (0-based) found by counting.
fn order_statistic(values: &[f64], k: usize) -> f64 {
    for &x in values {
        let below = values.iter().filter(|&&v| v < x).count();
        let at_most = values.iter().filter(|&&v| v <= x).count();
        if below <= k && k < at_most {
            return x;
        }
    }
    unreachable!("every rank has an order statistic")
}

pub fn oracle_median(values: &[f64]) -> f64 {
    let n = values.len();
    if n % 2 == 1 {
        order_statistic(values, n / 2)
    } else {
        (order_statistic(values, n / 2 - 1) + order_statistic(values, n / 2)) / 2.0
    }
}

/// `(u1, u2, eta)` over the pixels flagged in `valid`.
pub fn oracle_pace(weights: &[f64], valid: &[bool], epoch: usize, total: usize) -> (f64, f64, f64) {
    let vals: Vec<f64> = weights
        .iter()
        .zip(valid)
        .filter(|(_, &ok)| ok)
        .map(|(&w, _)| w)
        .collect();
    let u1 = oracle_median(&vals);
    let mut u2 = vals[0];
    for &v in &vals {
        if v > u2 {
            u2 = v;
        }
    }
    let eta = if epoch == total {
        u2
    } else {
        let e = u1 + epoch as f64 * (u2 - u1) / total as f64;
        if e > u2 {
            u2
        } else {
            e
        }
    };
    (u1, u2, eta)
}

fn random_instance(
    rng: &mut ChaCha8Rng,
) -> (
    DepthMap,
    LogDepthMap,
    SegLabelMap,
    SegLabelMap,
    CellGrid,
    u32,
) {
    let h = rng.gen_range(1..=32);
    let w = rng.gen_range(1..=32);
    let classes = rng.gen_range(1..=7usize);
    let d = match rng.gen_range(0..4) {
        0 => rng.gen_range(1..=8),
        1 => 40,
        2 => rng.gen_range(9..=300),
        _ => 256,
    };
    // Integer depths hit bin edges exactly; fractional ones fall between.
    let integer = rng.gen_bool(0.5);
    let depth: Vec<f64> = (0..h * w)
        .map(|_| match rng.gen_range(0..20) {
            0 => 1.0,
            1 => 256.0,
            _ if integer => rng.gen_range(1..=256) as f64,
            _ => rng.gen_range(1.0..=256.0),
        })
        .collect();
    let depth = DepthMap::from_vec(h, w, depth).unwrap();
    let gt_log = depth.to_log();
    let noise = rng.gen_range(0.0..1.5);
    let exact = rng.gen_bool(0.05);
    let pred_log: Vec<f64> = gt_log
        .as_slice()
        .iter()
        .map(|&g| {
            if exact {
                g
            } else {
                (g + rng.gen_range(-noise..=noise)).clamp(0.0, 256f64.ln())
            }
        })
        .collect();
    let pred_log = LogDepthMap::from_vec(h, w, pred_log).unwrap();
    let ignore = rng.gen_range(0.0..0.3);
    let gt: Vec<u16> = (0..h * w)
        .map(|_| {
            if rng.gen_bool(ignore) {
                classes as u16
            } else {
                rng.gen_range(0..classes as u16)
            }
        })
        .collect();
    let flip = rng.gen_range(0.0..1.0);
    let pred: Vec<u16> = gt
        .iter()
        .map(|&g| {
            if g as usize == classes || rng.gen_bool(flip) {
                rng.gen_range(0..classes as u16)
            } else {
                g
            }
        })
        .collect();
    let gt = SegLabelMap::with_ignore(Grid::new(h, w, gt).unwrap(), classes).unwrap();
    let pred = SegLabelMap::new(Grid::new(h, w, pred).unwrap(), classes).unwrap();
    let cells = CellGrid::new(rng.gen_range(1..=w.min(8)), rng.gen_range(1..=h.min(8)));
    (depth, pred_log, pred, gt, cells, d)
}

/// Partition, DPE, DSE, all three fusions and the curriculum pace and mask
/// on `n` random instances up to 32x32.
pub fn hardmine_suite(n: usize, seed: u64) -> Summary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = Summary::default();
    for inst in 0..n {
        let (depth, pred_log, pred, gt, cells, d) = random_instance(&mut rng);
        let (h, w) = depth.shape();
        let part = build_dlr_partition(&depth, cells, d).unwrap();
        let regions = oracle_regions(&depth, cells, d);
        for (i, &(cell, bin)) in regions.iter().enumerate() {
            s.exact("cell/bin", inst, part.cell_and_bin(i), (cell, bin));
        }

        let r = dpe_map(&pred_log, &depth.to_log()).unwrap();
        for (i, want) in oracle_dpe(&pred_log, &depth.to_log())
            .into_iter()
            .enumerate()
        {
            s.float("dpe", inst, r.as_slice()[i], want);
        }
        let z = dse_map(&pred, &gt, &part).unwrap();
        for (i, want) in oracle_dse(&pred, &gt, &regions).into_iter().enumerate() {
            s.float("dse", inst, z.as_slice()[i], want);
        }

        let valid: Vec<bool> = (0..h * w).map(|i| gt.label(i).is_some()).collect();
        let valid_mask = Mask::new(Grid::new(h, w, valid.clone()).unwrap());
        for op in FusionOp::ALL {
            let m = fuse(&r, &z, op).unwrap();
            for i in 0..h * w {
                let want = oracle_fuse(r.as_slice()[i], z.as_slice()[i], op);
                s.float(op.name(), inst, m.as_slice()[i], want);
            }
            if !valid.iter().any(|&v| v) {
                continue;
            }
            let total = rng.gen_range(1..=50);
            for epoch in [0, rng.gen_range(0..=total), total] {
                check_curriculum(&mut s, inst, &m, &valid, &valid_mask, epoch, total);
            }
        }
        s.instances += 1;
    }
    s
}

fn check_curriculum(
    s: &mut Summary,
    inst: usize,
    m: &LossWeightMap,
    valid: &[bool],
    valid_mask: &Mask,
    epoch: usize,
    total: usize,
) {
    let pace = curriculum_pace_over(m, Some(valid_mask), epoch, total).unwrap();
    let (u1, u2, eta) = oracle_pace(m.as_slice(), valid, epoch, total);
    s.float("median", inst, pace.u1, u1);
    s.float("max", inst, pace.u2, u2);
    s.float("eta", inst, pace.eta, eta);
    let mask = curriculum_mask(m, &pace);
    let want: Vec<bool> = m.as_slice().iter().map(|&x| x < eta).collect();
    s.exact("mask", inst, mask.as_slice(), &want[..]);
    s.exact(
        "admitted",
        inst,
        mask.count(),
        want.iter().filter(|&&b| b).count(),
    );
}

/// IoU, per-class accuracy, pixel accuracy and their means from raw counts.
pub struct OracleMetrics {
    pub iou: Vec<Option<f64>>,
    pub acc: Vec<Option<f64>>,
    pub mean_iou: f64,
    pub mean_acc: f64,
    pub pixel_acc: f64,
}

pub fn oracle_metrics(counts: &[Vec<u64>]) -> OracleMetrics {
    let c = counts.len();
    let mut iou = Vec::new();
    let mut acc = Vec::new();
    let mut correct = 0u64;
    let mut all = 0u64;
    for k in 0..c {
        let mut tp = 0;
        let mut fp = 0;
        let mut fneg = 0;
        for i in 0..c {
            for j in 0..c {
                let n = counts[i][j];
                if i == k && j == k {
                    tp += n;
                } else if j == k {
                    fp += n;
                } else if i == k {
                    fneg += n;
                }
            }
        }
        iou.push(if tp + fp + fneg == 0 {
            None
        } else {
            Some(tp as f64 / (tp + fp + fneg) as f64)
        });
        acc.push(if tp + fneg == 0 {
            None
        } else {
            Some(tp as f64 / (tp + fneg) as f64)
        });
        correct += tp;
    }
    for row in counts {
        for &n in row {
            all += n;
        }
    }
    let mean = |v: &[Option<f64>]| {
        let mut sum = 0.0;
        let mut k = 0;
        for x in v.iter().flatten() {
            sum += x;
            k += 1;
        }
        if k == 0 {
            0.0
        } else {
            sum / k as f64
        }
    };
    OracleMetrics {
        mean_iou: mean(&iou),
        mean_acc: mean(&acc),
        pixel_acc: correct as f64 / all as f64,
        iou,
        acc,
    }
}

/// The two-class example `[[3, 1], [1, 3]]`: IoU 0.6 per class, pixel accuracy 0.75.
pub fn hand_example_holds() -> bool {
    let cm = ConfusionMatrix::from_counts(2, vec![3, 1, 1, 3]).unwrap();
    let m = seg_metrics(&cm).unwrap();
    m.iou_per_class == vec![Some(0.6), Some(0.6)] && m.mean_iou == 0.6 && m.pixel_acc == 0.75
}

/// Random label maps, counted by the library and by a nested loop, then
/// scored by both; everything must agree exactly.
pub fn metrics_suite(n: usize, seed: u64) -> Summary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = Summary::default();
    let mut inst = 0;
    while s.instances < n {
        inst += 1;
        let c = rng.gen_range(1..=8usize);
        let h = rng.gen_range(1..=24);
        let w = rng.gen_range(1..=24);
        // Restricting the label range leaves some classes absent.
        let gt_hi = rng.gen_range(1..=c) as u16;
        let pred_hi = rng.gen_range(1..=c) as u16;
        let gt: Vec<u16> = (0..h * w)
            .map(|_| {
                if rng.gen_bool(0.1) {
                    c as u16
                } else {
                    rng.gen_range(0..gt_hi)
                }
            })
            .collect();
        let pred: Vec<u16> = (0..h * w).map(|_| rng.gen_range(0..pred_hi)).collect();
        let mut counts = vec![vec![0u64; c]; c];
        for (&g, &p) in gt.iter().zip(&pred) {
            if (g as usize) < c {
                counts[g as usize][p as usize] += 1;
            }
        }
        if counts.iter().flatten().all(|&n| n == 0) {
            continue;
        }
        let gt = SegLabelMap::with_ignore(Grid::new(h, w, gt).unwrap(), c).unwrap();
        let pred = SegLabelMap::new(Grid::new(h, w, pred).unwrap(), c).unwrap();
        let cm = confusion_matrix(&pred, &gt, c).unwrap();
        let flat: Vec<u64> = counts.iter().flatten().copied().collect();
        s.exact("confusion", inst, cm.counts(), &flat[..]);
        let got = seg_metrics(&cm).unwrap();
        let want = oracle_metrics(&counts);
        s.exact("iou", inst, &got.iou_per_class, &want.iou);
        s.exact("acc", inst, &got.acc_per_class, &want.acc);
        s.exact("mean_iou", inst, got.mean_iou, want.mean_iou);
        s.exact("mean_acc", inst, got.mean_acc, want.mean_acc);
        s.exact("pixel_acc", inst, got.pixel_acc, want.pixel_acc);
        s.instances += 1;
    }
    s
}
