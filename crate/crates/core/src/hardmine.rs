//! Hard-pixel measurements and the loss-weight map built from them.
//!
//! Two per-pixel difficulty measures are computed, both in `[0, 1]`:
//!
//! * the depth prediction error map `R = |log D - log D*|`, divided by its
//!   per-image maximum;
//! * the depth-aware segmentation error map `Z`: the image is cut into a
//!   uniform grid of cells and the ground-truth depth range into bins of width
//!   `d`; every (cell, bin) intersection is a region, and all pixels of a
//!   region receive the region's misclassification rate.
//!
//! The two maps are fused pixel-wise into the weight map `M`. A self-paced
//! schedule then admits pixels with `M_i < eta_e`, where `eta_e` moves
//! linearly from the median of `M` (first epoch) to its maximum (last).

use serde::{Deserialize, Serialize};

use crate::error::{ensure_shape, Error, Result};
use crate::grids::{
    DepthMap, Grid, LogDepthMap, LossWeightMap, Mask, SegLabelMap, DEPTH_MAX, DEPTH_MIN,
};

/// Number of cells along each image axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellGrid {
    /// Cells across the width.
    pub cols: usize,
    /// Cells down the height.
    pub rows: usize,
}

impl CellGrid {
    pub const fn new(cols: usize, rows: usize) -> Self {
        CellGrid { cols, rows }
    }

    pub fn count(&self) -> usize {
        self.cols * self.rows
    }
}

impl Default for CellGrid {
    fn default() -> Self {
        CellGrid::new(8, 8)
    }
}

/// Depth-bin count for bins of `bin_size` units over `[1, 256]`: `ceil(256 / d)`.
pub fn depth_bin_count(bin_size: u32) -> usize {
    (DEPTH_MAX as usize).div_ceil(bin_size as usize)
}

/// Bin of depth `v`: half-open bins `[1 + t*d, 1 + (t+1)*d)`, with 256 folded
/// into the last bin.
#[inline]
pub fn depth_bin(v: f64, bin_size: u32, bins: usize) -> usize {
    let t = ((v - DEPTH_MIN) / bin_size as f64).floor();
    (t.max(0.0) as usize).min(bins - 1)
}

/// Cell-by-depth-bin decomposition of one image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DlrPartition {
    height: usize,
    width: usize,
    cells: CellGrid,
    bin_size: u32,
    bins: usize,
    /// `cell * bins + bin` for every pixel.
    region: Vec<u32>,
}

impl DlrPartition {
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn cells(&self) -> CellGrid {
        self.cells
    }

    pub fn bin_size(&self) -> u32 {
        self.bin_size
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Upper bound on region ids (`cells * bins`).
    pub fn region_capacity(&self) -> usize {
        self.cells.count() * self.bins
    }

    #[inline]
    pub fn region_of(&self, pixel: usize) -> usize {
        self.region[pixel] as usize
    }

    /// `(cell k, bin t)` of a pixel.
    pub fn cell_and_bin(&self, pixel: usize) -> (usize, usize) {
        let id = self.region_of(pixel);
        (id / self.bins, id % self.bins)
    }

    pub fn region_ids(&self) -> &[u32] {
        &self.region
    }

    /// Ids of regions with at least one pixel, ascending.
    pub fn nonempty_regions(&self) -> Vec<usize> {
        let mut seen = vec![false; self.region_capacity()];
        for &id in &self.region {
            seen[id as usize] = true;
        }
        seen.iter()
            .enumerate()
            .filter_map(|(id, &s)| s.then_some(id))
            .collect()
    }
}

pub fn build_dlr_partition(
    gt_depth: &DepthMap,
    cells: CellGrid,
    bin_size: u32,
) -> Result<DlrPartition> {
    let (h, w) = gt_depth.shape();
    if bin_size == 0 {
        return Err(Error::invalid("bin_size", "must be at least 1"));
    }
    if cells.cols == 0 || cells.rows == 0 || cells.cols > w || cells.rows > h {
        return Err(Error::invalid(
            "cell_grid",
            format!(
                "{}x{} cells do not fit a {w}x{h} image",
                cells.cols, cells.rows
            ),
        ));
    }
    let bins = depth_bin_count(bin_size);
    let depth = gt_depth.as_slice();
    let mut region = Vec::with_capacity(h * w);
    for r in 0..h {
        let cell_row = r * cells.rows / h;
        for c in 0..w {
            let cell = cell_row * cells.cols + c * cells.cols / w;
            let bin = depth_bin(depth[r * w + c], bin_size, bins);
            region.push((cell * bins + bin) as u32);
        }
    }
    Ok(DlrPartition {
        height: h,
        width: w,
        cells,
        bin_size,
        bins,
        region,
    })
}

/// Depth prediction error, normalized by its per-image maximum.
///
/// Returns all zeros when prediction and ground truth agree everywhere.
pub fn dpe_map(pred: &LogDepthMap, gt: &LogDepthMap) -> Result<LossWeightMap> {
    ensure_shape(gt.shape(), pred.shape())?;
    let (h, w) = pred.shape();
    let mut residual: Vec<f64> = pred
        .as_slice()
        .iter()
        .zip(gt.as_slice())
        .map(|(p, g)| (p - g).abs())
        .collect();
    let max = residual.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        for r in &mut residual {
            *r /= max;
        }
    }
    LossWeightMap::from_vec(h, w, residual)
}

/// Per-region misclassification rate broadcast to every pixel of the region.
///
/// Ignored pixels count in neither numerator nor denominator but still
/// receive their region's rate; regions with no valid pixel get 0.
pub fn dse_map(
    pred: &SegLabelMap,
    gt: &SegLabelMap,
    partition: &DlrPartition,
) -> Result<LossWeightMap> {
    ensure_shape(gt.shape(), pred.shape())?;
    ensure_shape(partition.shape(), gt.shape())?;
    let (h, w) = gt.shape();
    let mut wrong = vec![0u32; partition.region_capacity()];
    let mut total = vec![0u32; partition.region_capacity()];
    for i in 0..h * w {
        let Some(label) = gt.label(i) else { continue };
        let id = partition.region_of(i);
        total[id] += 1;
        if pred.as_slice()[i] as usize != label {
            wrong[id] += 1;
        }
    }
    let rate: Vec<f64> = wrong
        .iter()
        .zip(&total)
        .map(|(&e, &n)| if n == 0 { 0.0 } else { e as f64 / n as f64 })
        .collect();
    let values = partition
        .region
        .iter()
        .map(|&id| rate[id as usize])
        .collect();
    LossWeightMap::from_vec(h, w, values)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionOp {
    #[default]
    Sum,
    Product,
    Max,
}

impl FusionOp {
    pub const ALL: [FusionOp; 3] = [FusionOp::Sum, FusionOp::Product, FusionOp::Max];

    #[inline]
    pub fn apply(self, r: f64, z: f64) -> f64 {
        match self {
            FusionOp::Sum => r + z,
            FusionOp::Product => r * z,
            FusionOp::Max => r.max(z),
        }
    }

    /// Largest value the fused map can take for inputs in `[0, 1]`.
    pub fn output_max(self) -> f64 {
        match self {
            FusionOp::Sum => 2.0,
            FusionOp::Product | FusionOp::Max => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FusionOp::Sum => "sum",
            FusionOp::Product => "product",
            FusionOp::Max => "max",
        }
    }
}

impl std::str::FromStr for FusionOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(FusionOp::Sum),
            "product" => Ok(FusionOp::Product),
            "max" => Ok(FusionOp::Max),
            other => Err(Error::invalid(
                "fusion",
                format!("unknown fusion op {other:?}"),
            )),
        }
    }
}

pub fn fuse(r: &LossWeightMap, z: &LossWeightMap, op: FusionOp) -> Result<LossWeightMap> {
    let fused = r.grid().zip_map(z.grid(), |&a, &b| op.apply(a, b))?;
    LossWeightMap::new(fused)
}

/// Learning pace of one weight map at one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurriculumPace {
    pub epoch: usize,
    pub total_epochs: usize,
    /// Median of the weights.
    pub u1: f64,
    /// Maximum of the weights.
    pub u2: f64,
    pub eta: f64,
}

impl CurriculumPace {
    /// `u1 + e * (u2 - u1) / E`, pinned to `u2` at `e == E` and never above it.
    pub fn from_stats(u1: f64, u2: f64, epoch: usize, total_epochs: usize) -> Self {
        let eta = if epoch >= total_epochs {
            u2
        } else {
            (u1 + epoch as f64 * (u2 - u1) / total_epochs as f64).min(u2)
        };
        CurriculumPace {
            epoch,
            total_epochs,
            u1,
            u2,
            eta,
        }
    }
}

/// Median with even counts averaging the two central order statistics.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    })
}

pub fn curriculum_pace(
    weights: &LossWeightMap,
    epoch: usize,
    total_epochs: usize,
) -> Result<CurriculumPace> {
    curriculum_pace_over(weights, None, epoch, total_epochs)
}

/// As [`curriculum_pace`], restricting the statistics to pixels where `valid` is set.
pub fn curriculum_pace_over(
    weights: &LossWeightMap,
    valid: Option<&Mask>,
    epoch: usize,
    total_epochs: usize,
) -> Result<CurriculumPace> {
    if total_epochs == 0 {
        return Err(Error::invalid("total_epochs", "must be at least 1"));
    }
    if epoch > total_epochs {
        return Err(Error::invalid(
            "epoch",
            format!("{epoch} exceeds total epochs {total_epochs}"),
        ));
    }
    let values: Vec<f64> = match valid {
        Some(mask) => {
            ensure_shape(weights.shape(), mask.shape())?;
            weights
                .as_slice()
                .iter()
                .zip(mask.as_slice())
                .filter_map(|(&w, &ok)| ok.then_some(w))
                .collect()
        }
        None => weights.as_slice().to_vec(),
    };
    let u1 = median(&values)
        .ok_or_else(|| Error::invalid("weights", "no pixels to take a median over"))?;
    let u2 = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(CurriculumPace::from_stats(u1, u2, epoch, total_epochs))
}

/// `mask_i = weights_i < eta` (strict).
pub fn curriculum_mask(weights: &LossWeightMap, pace: &CurriculumPace) -> Mask {
    threshold_mask(weights, pace.eta)
}

pub fn threshold_mask(weights: &LossWeightMap, eta: f64) -> Mask {
    let (h, w) = weights.shape();
    Mask::new(
        Grid::new(h, w, weights.as_slice().iter().map(|&m| m < eta).collect())
            .expect("weight map shape is valid"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grids::Grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wmap(h: usize, w: usize, v: Vec<f64>) -> LossWeightMap {
        LossWeightMap::from_vec(h, w, v).unwrap()
    }

    fn labels(h: usize, w: usize, v: Vec<u16>, c: usize) -> SegLabelMap {
        SegLabelMap::new(Grid::new(h, w, v).unwrap(), c).unwrap()
    }

    #[test]
    fn dpe_identity_is_zero() {
        let a = LogDepthMap::from_vec(2, 2, vec![0.1, 2.0, 3.0, 4.0]).unwrap();
        let r = dpe_map(&a, &a).unwrap();
        assert!(r.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dpe_divides_by_max() {
        let gt = LogDepthMap::from_vec(1, 3, vec![1.0, 1.0, 1.0]).unwrap();
        let pred = LogDepthMap::from_vec(1, 3, vec![1.0, 1.5, 2.0]).unwrap();
        assert_eq!(dpe_map(&pred, &gt).unwrap().as_slice(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn dpe_shape_mismatch() {
        let a = LogDepthMap::from_vec(1, 2, vec![1.0, 1.0]).unwrap();
        let b = LogDepthMap::from_vec(2, 1, vec![1.0, 1.0]).unwrap();
        assert!(matches!(dpe_map(&a, &b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn bin_count_for_d10_is_26() {
        assert_eq!(depth_bin_count(10), 26);
        assert_eq!(depth_bin_count(1), 256);
        assert_eq!(depth_bin_count(256), 1);
        assert_eq!(depth_bin_count(300), 1);
    }

    #[test]
    fn bins_are_half_open_and_256_is_last() {
        assert_eq!(depth_bin(1.0, 10, 26), 0);
        assert_eq!(depth_bin(10.999, 10, 26), 0);
        assert_eq!(depth_bin(11.0, 10, 26), 1);
        assert_eq!(depth_bin(251.0, 10, 26), 25);
        assert_eq!(depth_bin(256.0, 10, 26), 25);
        // d = 5: 255/5 = 51 but only 52 bins, still in range.
        assert_eq!(depth_bin(256.0, 5, depth_bin_count(5)), 51);
        assert_eq!(depth_bin(256.0, 1, 256), 255);
    }

    #[test]
    fn uniform_depth_single_cell_is_one_region() {
        let d = DepthMap::from_vec(3, 5, vec![42.0; 15]).unwrap();
        let p = build_dlr_partition(&d, CellGrid::new(1, 1), 10).unwrap();
        assert_eq!(p.nonempty_regions().len(), 1);
    }

    #[test]
    fn non_divisible_cells_differ_by_at_most_one() {
        let d = DepthMap::from_vec(7, 10, vec![5.0; 70]).unwrap();
        let p = build_dlr_partition(&d, CellGrid::new(3, 2), 10).unwrap();
        let mut sizes = [0usize; 6];
        for i in 0..70 {
            sizes[p.cell_and_bin(i).0] += 1;
        }
        // Column widths are 4/3/3 (or similar), row heights 4/3.
        let cols: Vec<usize> = (0..3)
            .map(|k| (0..10).filter(|&c| c * 3 / 10 == k).count())
            .collect();
        assert!(cols.iter().max().unwrap() - cols.iter().min().unwrap() <= 1);
        assert_eq!(sizes.iter().sum::<usize>(), 70);
    }

    #[test]
    fn invalid_partition_arguments() {
        let d = DepthMap::from_vec(4, 4, vec![5.0; 16]).unwrap();
        assert!(build_dlr_partition(&d, CellGrid::new(8, 8), 10).is_err());
        assert!(build_dlr_partition(&d, CellGrid::new(0, 1), 10).is_err());
        assert!(build_dlr_partition(&d, CellGrid::new(2, 2), 0).is_err());
    }

    #[test]
    fn dse_three_of_four_wrong() {
        let d = DepthMap::from_vec(2, 2, vec![7.0; 4]).unwrap();
        let p = build_dlr_partition(&d, CellGrid::new(1, 1), 10).unwrap();
        let gt = labels(2, 2, vec![0, 0, 1, 1], 3);
        let pred = labels(2, 2, vec![1, 2, 1, 0], 3);
        assert_eq!(dse_map(&pred, &gt, &p).unwrap().as_slice(), &[0.75; 4]);
        assert!(dse_map(&gt, &gt, &p)
            .unwrap()
            .as_slice()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn dse_excludes_ignored_pixels() {
        let d = DepthMap::from_vec(1, 4, vec![7.0; 4]).unwrap();
        let p = build_dlr_partition(&d, CellGrid::new(2, 1), 10).unwrap();
        let gt = SegLabelMap::with_ignore(Grid::new(1, 4, vec![0, 2, 2, 2]).unwrap(), 2).unwrap();
        let pred = labels(1, 4, vec![1, 1, 0, 0], 2);
        // Left cell: one valid pixel, wrong. Right cell: only ignored pixels.
        assert_eq!(
            dse_map(&pred, &gt, &p).unwrap().as_slice(),
            &[1.0, 1.0, 0.0, 0.0]
        );
    }

    #[test]
    fn fusion_arithmetic() {
        let r = wmap(1, 1, vec![0.3]);
        let z = wmap(1, 1, vec![0.5]);
        assert!((fuse(&r, &z, FusionOp::Sum).unwrap().as_slice()[0] - 0.8).abs() < 1e-15);
        assert!((fuse(&r, &z, FusionOp::Product).unwrap().as_slice()[0] - 0.15).abs() < 1e-15);
        assert_eq!(fuse(&r, &z, FusionOp::Max).unwrap().as_slice()[0], 0.5);
    }

    #[test]
    fn fusion_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = wmap(4, 4, (0..16).map(|_| rng.gen()).collect());
        let zero = LossWeightMap::zeros(4, 4);
        assert_eq!(fuse(&r, &zero, FusionOp::Max).unwrap(), r);
        assert_eq!(fuse(&r, &zero, FusionOp::Sum).unwrap(), r);
        assert_eq!(fuse(&r, &zero, FusionOp::Product).unwrap(), zero);
        assert_eq!(fuse(&r, &r, FusionOp::Max).unwrap(), r);
        let other = LossWeightMap::zeros(2, 8);
        assert!(fuse(&r, &other, FusionOp::Sum).is_err());
    }

    #[test]
    fn pace_endpoints() {
        let w = wmap(1, 5, vec![0.5, 0.1, 0.9, 0.3, 0.7]);
        assert_eq!(curriculum_pace(&w, 0, 7).unwrap().eta, 0.5);
        assert_eq!(curriculum_pace(&w, 7, 7).unwrap().eta, 0.9);
    }

    #[test]
    fn pace_even_count_example() {
        let w = wmap(2, 2, vec![0.1, 0.2, 0.3, 0.4]);
        let p = curriculum_pace(&w, 1, 2).unwrap();
        assert!((p.u1 - 0.25).abs() < 1e-12);
        assert_eq!(p.u2, 0.4);
        assert!((p.eta - 0.325).abs() < 1e-12);
        let mask = curriculum_mask(&w, &p);
        assert_eq!(mask.as_slice(), &[true, true, true, false]);
    }

    #[test]
    fn pace_errors() {
        let w = wmap(1, 1, vec![0.1]);
        assert!(curriculum_pace(&w, 0, 0).is_err());
        assert!(curriculum_pace(&w, 3, 2).is_err());
        let none = Mask::all(1, 1, false);
        assert!(curriculum_pace_over(&w, Some(&none), 0, 1).is_err());
    }

    #[test]
    fn equal_weights_never_admitted() {
        let w = wmap(2, 3, vec![0.4; 6]);
        for e in 0..=4 {
            let p = curriculum_pace(&w, e, 4).unwrap();
            assert_eq!(curriculum_mask(&w, &p).count(), 0);
        }
    }

    #[test]
    fn unique_max_excluded_at_last_epoch() {
        let w = wmap(1, 4, vec![0.2, 0.9, 0.1, 0.5]);
        let p = curriculum_pace(&w, 3, 3).unwrap();
        assert_eq!(
            curriculum_mask(&w, &p).as_slice(),
            &[true, false, true, true]
        );
        assert!(threshold_mask(&w, 1.0 + p.u2).as_slice().iter().all(|&b| b));
    }
}
