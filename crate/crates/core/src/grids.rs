//! Dense per-pixel grids shared by every other module.
//!
//! All grids are row-major with the origin at the top-left and are indexed by
//! `(row, col)`. Per-pixel vectors (class probabilities) are stored
//! pixel-major: the `C` values of pixel `i` live at `i*C..(i+1)*C`.
//!
//! Typed grids are immutable once constructed. The checked constructors run
//! [`Validate::violations`] and refuse invalid data; the `*_unchecked`
//! constructors exist so that data read from disk can be inspected with
//! [`validate`] before it is trusted.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound of sensor depth units.
pub const DEPTH_MIN: f64 = 1.0;
/// Upper bound of sensor depth units.
pub const DEPTH_MAX: f64 = 256.0;

/// Natural log of [`DEPTH_MAX`], the upper bound of log-depth.
pub fn log_depth_max() -> f64 {
    DEPTH_MAX.ln()
}

const SIMPLEX_TOL: f64 = 1e-6;
const LOG_DEPTH_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T> Grid<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidGrid(format!(
                "dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::InvalidGrid(format!(
                "expected {} values for {height}x{width}, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Grid {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(height > 0 && width > 0, "grid dimensions must be positive");
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Grid {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    /// `(height, width)`.
    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.height && col < self.width);
        row * self.width + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> &T {
        &self.data[self.index(row, col)]
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn zip_map<U, V>(
        &self,
        other: &Grid<U>,
        mut f: impl FnMut(&T, &U) -> V,
    ) -> Result<Grid<V>> {
        crate::error::ensure_shape(self.shape(), other.shape())?;
        Ok(Grid {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(a, b))
                .collect(),
        })
    }
}

impl<T: Clone> Grid<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        assert!(height > 0 && width > 0, "grid dimensions must be positive");
        Grid {
            height,
            width,
            data: vec![value; height * width],
        }
    }
}

/// One violated invariant, reported by [`validate`].
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    EmptyDimensions,
    LengthMismatch {
        expected: usize,
        actual: usize,
    },
    LabelOutOfRange {
        index: usize,
        label: u16,
        classes: usize,
    },
    TooFewClasses {
        classes: usize,
    },
    NegativeProbability {
        index: usize,
        value: f64,
    },
    NotSimplex {
        index: usize,
        sum: f64,
    },
    NonFinite {
        index: usize,
        value: f64,
    },
    BelowMin {
        index: usize,
        value: f64,
        min: f64,
    },
    AboveMax {
        index: usize,
        value: f64,
        max: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyDimensions => write!(f, "dimensions must be positive"),
            Violation::LengthMismatch { expected, actual } => {
                write!(f, "expected {expected} values, found {actual}")
            }
            Violation::LabelOutOfRange {
                index,
                label,
                classes,
            } => write!(
                f,
                "label out of range: {label} at pixel {index} (classes = {classes})"
            ),
            Violation::TooFewClasses { classes } => {
                write!(f, "need at least one class, got {classes}")
            }
            Violation::NegativeProbability { index, value } => {
                write!(f, "negative probability {value} at pixel {index}")
            }
            Violation::NotSimplex { index, sum } => {
                write!(f, "probabilities at pixel {index} sum to {sum}, not 1")
            }
            Violation::NonFinite { index, value } => {
                write!(f, "non-finite value {value} at index {index}")
            }
            Violation::BelowMin { index, value, min } => {
                write!(f, "value below {min}: {value} at index {index}")
            }
            Violation::AboveMax { index, value, max } => {
                write!(f, "value above {max}: {value} at index {index}")
            }
        }
    }
}

pub trait Validate {
    /// Every violated invariant. Empty iff the grid is valid.
    fn violations(&self) -> Vec<Violation>;
}

pub fn validate<G: Validate + ?Sized>(grid: &G) -> Vec<Violation> {
    grid.violations()
}

fn check_or_err<G: Validate>(grid: G) -> Result<G> {
    let v = grid.violations();
    if v.is_empty() {
        Ok(grid)
    } else {
        let msgs: Vec<String> = v.iter().take(4).map(|v| v.to_string()).collect();
        let more = if v.len() > 4 {
            format!(" (+{} more)", v.len() - 4)
        } else {
            String::new()
        };
        Err(Error::InvalidGrid(format!("{}{more}", msgs.join("; "))))
    }
}

fn bounded_violations(values: &[f64], min: f64, max: f64) -> Vec<Violation> {
    let mut out = Vec::new();
    for (index, &value) in values.iter().enumerate() {
        if !value.is_finite() {
            out.push(Violation::NonFinite { index, value });
        } else if value < min {
            out.push(Violation::BelowMin { index, value, min });
        } else if value > max {
            out.push(Violation::AboveMax { index, value, max });
        }
    }
    out
}

/// Ground-truth or predicted class labels.
///
/// Maps built with [`SegLabelMap::with_ignore`] treat the value `classes` as
/// the ignore sentinel; such pixels are excluded from every loss and metric.
/// Without it, `classes` is out of range like any larger value.
#[derive(Clone, Debug, PartialEq)]
pub struct SegLabelMap {
    labels: Grid<u16>,
    classes: usize,
    allow_ignore: bool,
}

impl SegLabelMap {
    pub fn new(labels: Grid<u16>, classes: usize) -> Result<Self> {
        check_or_err(SegLabelMap {
            labels,
            classes,
            allow_ignore: false,
        })
    }

    pub fn with_ignore(labels: Grid<u16>, classes: usize) -> Result<Self> {
        check_or_err(SegLabelMap {
            labels,
            classes,
            allow_ignore: true,
        })
    }

    pub fn new_unchecked(labels: Grid<u16>, classes: usize) -> Self {
        SegLabelMap {
            labels,
            classes,
            allow_ignore: false,
        }
    }

    pub fn allows_ignore(&self) -> bool {
        self.allow_ignore
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn ignore_label(&self) -> u16 {
        self.classes as u16
    }

    pub fn shape(&self) -> (usize, usize) {
        self.labels.shape()
    }

    pub fn grid(&self) -> &Grid<u16> {
        &self.labels
    }

    pub fn as_slice(&self) -> &[u16] {
        self.labels.as_slice()
    }

    /// Label of pixel `i`, or `None` for ignored pixels.
    #[inline]
    pub fn label(&self, i: usize) -> Option<usize> {
        let l = self.labels.as_slice()[i] as usize;
        (l < self.classes).then_some(l)
    }

    pub fn valid_count(&self) -> usize {
        self.labels
            .iter()
            .filter(|&&l| (l as usize) < self.classes)
            .count()
    }
}

impl Validate for SegLabelMap {
    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.classes == 0 {
            out.push(Violation::TooFewClasses { classes: 0 });
        }
        let limit = self.classes + usize::from(self.allow_ignore);
        for (index, &label) in self.labels.iter().enumerate() {
            if label as usize >= limit {
                out.push(Violation::LabelOutOfRange {
                    index,
                    label,
                    classes: self.classes,
                });
            }
        }
        out
    }
}

/// Per-pixel class probabilities, `H x W x C`, pixel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SegProbMap {
    height: usize,
    width: usize,
    classes: usize,
    probs: Vec<f64>,
}

impl SegProbMap {
    pub fn new(height: usize, width: usize, classes: usize, probs: Vec<f64>) -> Result<Self> {
        check_or_err(SegProbMap {
            height,
            width,
            classes,
            probs,
        })
    }

    pub fn new_unchecked(height: usize, width: usize, classes: usize, probs: Vec<f64>) -> Self {
        SegProbMap {
            height,
            width,
            classes,
            probs,
        }
    }

    pub fn uniform(height: usize, width: usize, classes: usize) -> Self {
        assert!(classes > 0);
        SegProbMap {
            height,
            width,
            classes,
            probs: vec![1.0 / classes as f64; height * width * classes],
        }
    }

    /// Row-wise softmax of pixel-major logits.
    pub fn from_logits(
        height: usize,
        width: usize,
        classes: usize,
        logits: &[f64],
    ) -> Result<Self> {
        if logits.len() != height * width * classes {
            return Err(Error::InvalidGrid(format!(
                "expected {} logits, got {}",
                height * width * classes,
                logits.len()
            )));
        }
        let mut probs = vec![0.0; logits.len()];
        for (z, p) in logits
            .chunks_exact(classes)
            .zip(probs.chunks_exact_mut(classes))
        {
            softmax_into(z, p);
        }
        check_or_err(SegProbMap {
            height,
            width,
            classes,
            probs,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.probs[i * self.classes..(i + 1) * self.classes]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// Hard labels; ties go to the lowest class index.
    pub fn argmax(&self) -> SegLabelMap {
        let labels: Vec<u16> = self
            .probs
            .chunks_exact(self.classes)
            .map(|p| argmax_lowest(p) as u16)
            .collect();
        SegLabelMap {
            labels: Grid {
                height: self.height,
                width: self.width,
                data: labels,
            },
            classes: self.classes,
            allow_ignore: false,
        }
    }
}

impl Validate for SegProbMap {
    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.height == 0 || self.width == 0 {
            out.push(Violation::EmptyDimensions);
        }
        if self.classes == 0 {
            out.push(Violation::TooFewClasses { classes: 0 });
            return out;
        }
        let expected = self.height * self.width * self.classes;
        if self.probs.len() != expected {
            out.push(Violation::LengthMismatch {
                expected,
                actual: self.probs.len(),
            });
            return out;
        }
        for (index, p) in self.probs.chunks_exact(self.classes).enumerate() {
            let mut sum = 0.0;
            for &v in p {
                if !v.is_finite() {
                    out.push(Violation::NonFinite { index, value: v });
                } else if v < 0.0 {
                    out.push(Violation::NegativeProbability { index, value: v });
                }
                sum += v;
            }
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                out.push(Violation::NotSimplex { index, sum });
            }
        }
        out
    }
}

/// Numerically stable softmax of one pixel's logits.
pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub(crate) fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = j;
        }
    }
    best
}

macro_rules! scalar_grid {
    ($(#[$meta:meta])* $name:ident, $min:expr, $max:expr) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name(Grid<f64>);

        impl $name {
            pub fn new(grid: Grid<f64>) -> Result<Self> {
                check_or_err($name(grid))
            }

            pub fn new_unchecked(grid: Grid<f64>) -> Self {
                $name(grid)
            }

            pub fn from_vec(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
                Self::new(Grid::new(height, width, values)?)
            }

            pub fn grid(&self) -> &Grid<f64> {
                &self.0
            }

            pub fn into_grid(self) -> Grid<f64> {
                self.0
            }

            pub fn shape(&self) -> (usize, usize) {
                self.0.shape()
            }

            pub fn as_slice(&self) -> &[f64] {
                self.0.as_slice()
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }
        }

        impl Validate for $name {
            fn violations(&self) -> Vec<Violation> {
                bounded_violations(self.0.as_slice(), $min, $max)
            }
        }
    };
}

scalar_grid!(
    /// Depth in sensor units, within `[1, 256]`.
    DepthMap,
    DEPTH_MIN,
    DEPTH_MAX
);

scalar_grid!(
    /// Natural log of depth, within `[0, ln 256]`.
    LogDepthMap,
    0.0,
    log_depth_max() + LOG_DEPTH_TOL
);

scalar_grid!(
    /// Nonnegative finite per-pixel weights.
    LossWeightMap,
    0.0,
    f64::INFINITY
);

impl DepthMap {
    pub fn to_log(&self) -> LogDepthMap {
        LogDepthMap(self.0.map(|v| v.ln()))
    }
}

impl LogDepthMap {
    pub fn to_depth(&self) -> DepthMap {
        DepthMap(self.0.map(|v| v.exp().clamp(DEPTH_MIN, DEPTH_MAX)))
    }
}

impl LossWeightMap {
    pub fn zeros(height: usize, width: usize) -> Self {
        LossWeightMap(Grid::filled(height, width, 0.0))
    }

    pub fn ones(height: usize, width: usize) -> Self {
        LossWeightMap(Grid::filled(height, width, 1.0))
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }
}

/// Binary per-pixel selection; `true` admits the pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask(Grid<bool>);

impl Mask {
    pub fn new(grid: Grid<bool>) -> Self {
        Mask(grid)
    }

    pub fn all(height: usize, width: usize, value: bool) -> Self {
        Mask(Grid::filled(height, width, value))
    }

    pub fn grid(&self) -> &Grid<bool> {
        &self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn as_slice(&self) -> &[bool] {
        self.0.as_slice()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.0.len() as f64
    }
}
