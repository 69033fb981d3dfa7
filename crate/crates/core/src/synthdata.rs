//! Procedural RGB-D scenes with labels.
//!
//! A scene is a fronto-parallel stack of rectangles and ellipses in front of a
//! background plateau. Objects are painted far-to-near, so the nearest object
//! owns each pixel. Two kinds of class pairs make segmentation hard:
//!
//! * confusable pairs have nearly identical colors (closer than the pixel
//!   noise) and are placed side by side at similar depth;
//! * depth-gap pairs are placed side by side with at least `min_depth_gap`
//!   units between their depths.
//!
//! Ground-truth depth is noise-free and integer valued. RGB is attenuated with
//! depth, perturbed by Gaussian noise, clamped, and quantized to 8 bits so a
//! scene survives a round trip through its files unchanged.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grids::{DepthMap, Grid, SegLabelMap, DEPTH_MAX};
use crate::io::{
    read_depth_pfm, read_labels_pgm, read_ppm, write_depth_pfm, write_labels_pgm, write_ppm,
    RgbImage,
};

/// Default training split size of the benchmark.
pub const BENCHMARK_TRAIN: usize = 400;
/// Default test split size of the benchmark.
pub const BENCHMARK_TEST: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    /// Including background class 0.
    pub classes: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub seed: u64,
    pub confusable_pairs: Vec<(u16, u16)>,
    pub depth_gap_pairs: Vec<(u16, u16)>,
    /// Standard deviation of per-channel RGB noise.
    pub noise_std: f64,
    /// Euclidean RGB distance between the members of a confusable pair.
    pub confusable_offset: f64,
    /// Euclidean RGB distance between the members of a depth-gap pair.
    pub depth_gap_color_offset: f64,
    /// Standard deviation of the per-object color shift.
    pub object_color_jitter: f64,
    pub min_depth_gap: u32,
    /// Inclusive range of the background depth plateau.
    pub background_depth: (u32, u32),
    /// Inclusive range of object depths.
    pub object_depth: (u32, u32),
    /// Fraction of brightness lost from the nearest to the farthest depth.
    pub depth_attenuation: f64,
    /// Re-sample a scene whose intended classes are not all visible.
    pub ensure_all_classes: bool,
    pub min_visible_pixels: usize,
    pub max_attempts: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            height: 64,
            width: 64,
            classes: 6,
            min_objects: 5,
            max_objects: 8,
            seed: 0,
            confusable_pairs: vec![(1, 2)],
            depth_gap_pairs: vec![(3, 4)],
            noise_std: 0.12,
            confusable_offset: 0.06,
            depth_gap_color_offset: 0.15,
            object_color_jitter: 0.02,
            min_depth_gap: 100,
            background_depth: (220, 256),
            object_depth: (1, 200),
            depth_attenuation: 0.35,
            ensure_all_classes: true,
            min_visible_pixels: 12,
            max_attempts: 25,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::invalid(
                "classes",
                "need background plus at least one class",
            ));
        }
        if self.classes > 254 {
            return Err(Error::invalid(
                "classes",
                "label files hold at most 254 classes",
            ));
        }
        if self.height < 4 || self.width < 4 {
            return Err(Error::invalid("height", "scenes must be at least 4x4"));
        }
        if self.min_objects > self.max_objects {
            return Err(Error::invalid("min_objects", "exceeds max_objects"));
        }
        for &(a, b) in self.confusable_pairs.iter().chain(&self.depth_gap_pairs) {
            if a == 0
                || b == 0
                || a == b
                || a as usize >= self.classes
                || b as usize >= self.classes
            {
                return Err(Error::invalid(
                    "pairs",
                    format!("pair ({a}, {b}) must name two distinct foreground classes"),
                ));
            }
        }
        let (lo, hi) = self.object_depth;
        if lo < 1 || lo > hi || hi as f64 > DEPTH_MAX {
            return Err(Error::invalid("object_depth", "must lie within [1, 256]"));
        }
        let (lo, hi) = self.background_depth;
        if lo < 1 || lo > hi || hi as f64 > DEPTH_MAX {
            return Err(Error::invalid(
                "background_depth",
                "must lie within [1, 256]",
            ));
        }
        if !self.depth_gap_pairs.is_empty()
            && self.object_depth.1 - self.object_depth.0 < self.min_depth_gap
        {
            return Err(Error::invalid(
                "min_depth_gap",
                "wider than the object depth range",
            ));
        }
        if self.noise_std.is_nan() || self.noise_std < 0.0 {
            return Err(Error::invalid("noise_std", "must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.depth_attenuation) {
            return Err(Error::invalid("depth_attenuation", "must be in [0, 1)"));
        }
        Ok(())
    }

    /// Base color per class. Pair partners are offset from their first member.
    pub fn class_colors(&self) -> Vec<[f64; 3]> {
        const PALETTE: [[f64; 3]; 8] = [
            [0.45, 0.45, 0.45],
            [0.80, 0.32, 0.25],
            [0.22, 0.48, 0.82],
            [0.30, 0.75, 0.35],
            [0.88, 0.80, 0.24],
            [0.62, 0.30, 0.72],
            [0.20, 0.78, 0.78],
            [0.90, 0.55, 0.15],
        ];
        let mut colors: Vec<[f64; 3]> = (0..self.classes)
            .map(|k| {
                if k < PALETTE.len() {
                    PALETTE[k]
                } else {
                    // Deterministic spread for larger class counts.
                    let t = k as f64 * 0.618_033_988_75;
                    [
                        0.2 + 0.6 * (t % 1.0),
                        0.2 + 0.6 * ((t * 1.7) % 1.0),
                        0.2 + 0.6 * ((t * 2.3) % 1.0),
                    ]
                }
            })
            .collect();
        let offset = |base: [f64; 3], dist: f64| {
            // Along (1, -1, 1)/sqrt(3), flipped inward if it would leave [0, 1].
            let s = dist / 3f64.sqrt();
            let dir = [1.0, -1.0, 1.0];
            let out = [
                base[0] + s * dir[0],
                base[1] + s * dir[1],
                base[2] + s * dir[2],
            ];
            if out.iter().all(|v| (0.05..=0.95).contains(v)) {
                out
            } else {
                [
                    base[0] - s * dir[0],
                    base[1] - s * dir[1],
                    base[2] - s * dir[2],
                ]
            }
        };
        for &(a, b) in &self.confusable_pairs {
            colors[b as usize] = offset(colors[a as usize], self.confusable_offset);
        }
        for &(a, b) in &self.depth_gap_pairs {
            colors[b as usize] = offset(colors[a as usize], self.depth_gap_color_offset);
        }
        colors
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub index: u64,
    pub rgb: RgbImage,
    pub labels: SegLabelMap,
    pub depth: DepthMap,
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Rect,
    Ellipse,
}

#[derive(Clone, Copy, Debug)]
struct Object {
    class: u16,
    shape: Shape,
    top: i64,
    left: i64,
    h: i64,
    w: i64,
    depth: u32,
    tint: [f64; 3],
    /// Object this one was attached to as a pair partner.
    #[cfg_attr(not(test), allow(dead_code))]
    partner: Option<usize>,
}

impl Object {
    fn covers(&self, r: i64, c: i64) -> bool {
        if r < self.top || r >= self.top + self.h || c < self.left || c >= self.left + self.w {
            return false;
        }
        match self.shape {
            Shape::Rect => true,
            Shape::Ellipse => {
                let cy = self.top as f64 + (self.h as f64 - 1.0) / 2.0;
                let cx = self.left as f64 + (self.w as f64 - 1.0) / 2.0;
                let ry = self.h as f64 / 2.0;
                let rx = self.w as f64 / 2.0;
                let dy = (r as f64 - cy) / ry;
                let dx = (c as f64 - cx) / rx;
                dx * dx + dy * dy <= 1.0
            }
        }
    }
}

fn pair_partner(pairs: &[(u16, u16)], class: u16) -> Option<u16> {
    pairs.iter().find_map(|&(a, b)| {
        if a == class {
            Some(b)
        } else if b == class {
            Some(a)
        } else {
            None
        }
    })
}

fn scene_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

struct Layout {
    objects: Vec<Object>,
    background_depth: u32,
}

fn sample_layout(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Layout {
    let (h, w) = (spec.height as i64, spec.width as i64);
    let background_depth = rng.gen_range(spec.background_depth.0..=spec.background_depth.1);
    let n = rng.gen_range(spec.min_objects..=spec.max_objects);
    let mut classes: Vec<u16> = Vec::with_capacity(n);
    if spec.ensure_all_classes {
        let mut all: Vec<u16> = (1..spec.classes as u16).collect();
        all.shuffle(rng);
        classes.extend(all.into_iter().take(n));
    }
    while classes.len() < n {
        classes.push(rng.gen_range(1..spec.classes as u16));
    }

    let min_side = (h.min(w) / 6).max(2);
    let max_side = (h.min(w) * 2 / 5).max(min_side + 1);
    let (d_lo, d_hi) = spec.object_depth;
    let jitter = Normal::new(0.0, spec.object_color_jitter.max(0.0)).expect("finite std");

    let mut objects: Vec<Object> = Vec::with_capacity(n);
    let mut placed_partner = vec![false; n];
    for i in 0..n {
        let class = classes[i];
        let oh = rng.gen_range(min_side..=max_side);
        let ow = rng.gen_range(min_side..=max_side);
        let shape = if rng.gen_bool(0.5) {
            Shape::Rect
        } else {
            Shape::Ellipse
        };
        let tint = [jitter.sample(rng), jitter.sample(rng), jitter.sample(rng)];

        // Attach to an already placed pair partner when there is one.
        let anchor = (0..i).find(|&j| {
            !placed_partner[j]
                && (pair_partner(&spec.depth_gap_pairs, class) == Some(objects[j].class)
                    || pair_partner(&spec.confusable_pairs, class) == Some(objects[j].class))
        });
        let (top, left, depth) = match anchor {
            Some(j) => {
                placed_partner[j] = true;
                placed_partner[i] = true;
                let a = objects[j];
                let overlap = (min_side / 3).max(1);
                let (top, left) = match rng.gen_range(0..4) {
                    0 => (
                        rng.gen_range(a.top - oh / 2..=a.top + a.h - oh / 2),
                        a.left + a.w - overlap,
                    ),
                    1 => (
                        rng.gen_range(a.top - oh / 2..=a.top + a.h - oh / 2),
                        a.left - ow + overlap,
                    ),
                    2 => (
                        a.top + a.h - overlap,
                        rng.gen_range(a.left - ow / 2..=a.left + a.w - ow / 2),
                    ),
                    _ => (
                        a.top - oh + overlap,
                        rng.gen_range(a.left - ow / 2..=a.left + a.w - ow / 2),
                    ),
                };
                let depth = if pair_partner(&spec.depth_gap_pairs, class) == Some(a.class) {
                    let gap = spec.min_depth_gap;
                    let near_ok = a.depth >= d_lo + gap;
                    let far_ok = a.depth + gap <= d_hi;
                    match (near_ok, far_ok) {
                        (true, true) if rng.gen_bool(0.5) => rng.gen_range(a.depth + gap..=d_hi),
                        (_, true) => rng.gen_range(a.depth + gap..=d_hi),
                        (true, false) => rng.gen_range(d_lo..=a.depth - gap),
                        // Anchor was placed for another pair; take the far end of the range.
                        (false, false) if a.depth - d_lo < d_hi - a.depth => d_hi,
                        (false, false) => d_lo,
                    }
                } else {
                    let lo = a.depth.saturating_sub(4).max(d_lo);
                    let hi = (a.depth + 4).min(d_hi);
                    rng.gen_range(lo..=hi)
                };
                (top, left, depth)
            }
            None => {
                let top = rng.gen_range(-oh / 4..=h - oh + oh / 4);
                let left = rng.gen_range(-ow / 4..=w - ow + ow / 4);
                let depth = if pair_partner(&spec.depth_gap_pairs, class).is_some() {
                    // Leave room for a partner on at least one side.
                    let gap = spec.min_depth_gap;
                    if rng.gen_bool(0.5) {
                        rng.gen_range(d_lo..=d_hi - gap)
                    } else {
                        rng.gen_range(d_lo + gap..=d_hi)
                    }
                } else {
                    rng.gen_range(d_lo..=d_hi)
                };
                (top, left, depth)
            }
        };
        objects.push(Object {
            class,
            shape,
            top,
            left,
            h: oh,
            w: ow,
            depth,
            tint,
            partner: anchor,
        });
    }
    Layout {
        objects,
        background_depth,
    }
}

/// Paints a layout; returns labels, depth, and the per-pixel owning object.
fn rasterize(spec: &SceneSpec, layout: &Layout) -> (Vec<u16>, Vec<f64>, Vec<Option<usize>>) {
    let n = spec.height * spec.width;
    let mut labels = vec![0u16; n];
    let mut depth = vec![layout.background_depth as f64; n];
    let mut owner = vec![None; n];
    let mut order: Vec<usize> = (0..layout.objects.len()).collect();
    // Far to near; equal depths keep placement order.
    order.sort_by(|&a, &b| {
        layout.objects[b]
            .depth
            .cmp(&layout.objects[a].depth)
            .then(a.cmp(&b))
    });
    for &k in &order {
        let o = &layout.objects[k];
        let r0 = o.top.max(0);
        let r1 = (o.top + o.h).min(spec.height as i64);
        let c0 = o.left.max(0);
        let c1 = (o.left + o.w).min(spec.width as i64);
        for r in r0..r1 {
            for c in c0..c1 {
                if o.covers(r, c) {
                    let i = r as usize * spec.width + c as usize;
                    labels[i] = o.class;
                    depth[i] = o.depth as f64;
                    owner[i] = Some(k);
                }
            }
        }
    }
    (labels, depth, owner)
}

fn visible_enough(spec: &SceneSpec, layout: &Layout, labels: &[u16]) -> bool {
    let mut counts = vec![0usize; spec.classes];
    for &l in labels {
        counts[l as usize] += 1;
    }
    layout
        .objects
        .iter()
        .all(|o| counts[o.class as usize] >= spec.min_visible_pixels)
}

/// Deterministic in `(spec.seed, index)`.
pub fn generate_scene(spec: &SceneSpec, index: u64) -> Result<Scene> {
    spec.validate()?;
    let mut rng = scene_rng(spec.seed, index);
    let mut layout = sample_layout(spec, &mut rng);
    let (mut labels, mut depth, mut owner) = rasterize(spec, &layout);
    if spec.ensure_all_classes {
        for _ in 1..spec.max_attempts {
            if visible_enough(spec, &layout, &labels) {
                break;
            }
            layout = sample_layout(spec, &mut rng);
            (labels, depth, owner) = rasterize(spec, &layout);
        }
    }

    let colors = spec.class_colors();
    let noise = Normal::new(0.0, spec.noise_std).expect("validated std");
    let mut rgb = Vec::with_capacity(labels.len() * 3);
    for i in 0..labels.len() {
        let base = colors[labels[i] as usize];
        let tint = owner[i].map_or([0.0; 3], |k| layout.objects[k].tint);
        let shade = 1.0 - spec.depth_attenuation * (depth[i] - 1.0) / (DEPTH_MAX - 1.0);
        for ch in 0..3 {
            let v = (base[ch] + tint[ch]) * shade + noise.sample(&mut rng);
            rgb.push((v.clamp(0.0, 1.0) * 255.0).round() / 255.0);
        }
    }

    let (h, w) = (spec.height, spec.width);
    Ok(Scene {
        index,
        rgb: RgbImage::new(h, w, rgb)?,
        labels: SegLabelMap::new(Grid::new(h, w, labels)?, spec.classes)?,
        depth: DepthMap::new(Grid::new(h, w, depth)?)?,
    })
}

/// In-memory train/test split with disjoint index ranges.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub spec: SceneSpec,
    pub train: Vec<Scene>,
    pub test: Vec<Scene>,
}

pub fn generate_dataset(spec: &SceneSpec, n_train: usize, n_test: usize) -> Result<Dataset> {
    spec.validate()?;
    let train = (0..n_train as u64)
        .map(|i| generate_scene(spec, i))
        .collect::<Result<_>>()?;
    let test = (n_train as u64..(n_train + n_test) as u64)
        .map(|i| generate_scene(spec, i))
        .collect::<Result<_>>()?;
    Ok(Dataset {
        spec: spec.clone(),
        train,
        test,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneFiles {
    pub index: u64,
    pub rgb: PathBuf,
    pub labels: PathBuf,
    pub depth: PathBuf,
}

/// On-disk dataset description; paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub spec: SceneSpec,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub train: Vec<SceneFiles>,
    pub test: Vec<SceneFiles>,
}

pub const MANIFEST_FILE: &str = "dataset.json";

fn write_scene(root: &Path, split: &str, scene: &Scene) -> Result<SceneFiles> {
    let rel = PathBuf::from(split).join(format!("{:06}", scene.index));
    let files = SceneFiles {
        index: scene.index,
        rgb: rel.join("rgb.ppm"),
        labels: rel.join("labels.pgm"),
        depth: rel.join("depth.pfm"),
    };
    write_ppm(&scene.rgb, &root.join(&files.rgb))?;
    write_labels_pgm(&scene.labels, &root.join(&files.labels))?;
    write_depth_pfm(&scene.depth, &root.join(&files.depth))?;
    Ok(files)
}

/// Generates both splits and writes them under `root` with a manifest.
pub fn generate_split(
    spec: &SceneSpec,
    n_train: usize,
    n_test: usize,
    root: &Path,
) -> Result<DatasetManifest> {
    spec.validate()?;
    let mut train = Vec::with_capacity(n_train);
    for i in 0..n_train as u64 {
        train.push(write_scene(root, "train", &generate_scene(spec, i)?)?);
    }
    let mut test = Vec::with_capacity(n_test);
    for i in n_train as u64..(n_train + n_test) as u64 {
        test.push(write_scene(root, "test", &generate_scene(spec, i)?)?);
    }
    let manifest = DatasetManifest {
        format_version: 1,
        spec: spec.clone(),
        seed: spec.seed,
        n_train,
        n_test,
        train,
        test,
    };
    let json = serde_json::to_vec_pretty(&manifest)?;
    crate::io::write_bytes(&root.join(MANIFEST_FILE), &json)?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn load_scene(root: &Path, files: &SceneFiles, classes: usize) -> Result<Scene> {
    Ok(Scene {
        index: files.index,
        rgb: read_ppm(&root.join(&files.rgb))?,
        labels: read_labels_pgm(&root.join(&files.labels), classes)?,
        depth: read_depth_pfm(&root.join(&files.depth))?,
    })
}

/// Loads a dataset written by [`generate_split`]. `path` may be the manifest
/// file or its directory.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let manifest_path = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let manifest = read_manifest(&manifest_path)?;
    let classes = manifest.spec.classes;
    let load = |list: &[SceneFiles]| -> Result<Vec<Scene>> {
        list.iter().map(|f| load_scene(root, f, classes)).collect()
    };
    Ok(Dataset {
        train: load(&manifest.train)?,
        test: load(&manifest.test)?,
        spec: manifest.spec,
    })
}
