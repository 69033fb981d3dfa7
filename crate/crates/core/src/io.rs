//! Grid file formats: binary PGM (`P5`), grayscale PFM (`Pf`), headerless CSV,
//! and binary PPM (`P6`) for RGB images.
//!
//! Multi-byte samples are little-endian in every binary format, including
//! 16-bit PGM. PFM scanlines are stored bottom-to-top as in the reference
//! format; in memory every grid is top-to-bottom.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grids::{DepthMap, Grid, LogDepthMap, SegLabelMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PgmDepth {
    Eight,
    Sixteen,
}

impl PgmDepth {
    pub fn maxval(self) -> u16 {
        match self {
            PgmDepth::Eight => 255,
            PgmDepth::Sixteen => 65535,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridFormat {
    /// Quantized with the grid's own maximum mapped to `maxval`.
    Pgm(PgmDepth),
    Pfm,
    Csv,
}

impl GridFormat {
    pub fn from_extension(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "pgm" => Some(GridFormat::Pgm(PgmDepth::Eight)),
            "pfm" => Some(GridFormat::Pfm),
            "csv" => Some(GridFormat::Csv),
            _ => None,
        }
    }
}

/// Interleaved RGB image with channel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    /// Pixel-major, three values per pixel.
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width * 3 {
            return Err(Error::InvalidGrid(format!(
                "rgb image {height}x{width} needs {} values, got {}",
                height * width * 3,
                data.len()
            )));
        }
        Ok(RgbImage {
            height,
            width,
            data,
        })
    }

    pub fn pixel(&self, i: usize) -> [f64; 3] {
        [self.data[3 * i], self.data[3 * i + 1], self.data[3 * i + 2]]
    }
}

pub fn read_grid(path: &Path, format: GridFormat) -> Result<Grid<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        GridFormat::Pgm(_) => {
            let (grid, _) = decode_pgm(&bytes, path)?;
            Ok(grid.map(|&v| v as f64))
        }
        GridFormat::Pfm => decode_pfm(&bytes, path),
        GridFormat::Csv => decode_csv(&bytes, path),
    }
}

pub fn write_grid(grid: &Grid<f64>, path: &Path, format: GridFormat) -> Result<()> {
    let bytes = match format {
        GridFormat::Pgm(depth) => {
            let v_max = grid.iter().copied().fold(0.0, f64::max);
            encode_pgm_scaled(grid, depth, v_max)?
        }
        GridFormat::Pfm => encode_pfm(grid)?,
        GridFormat::Csv => encode_csv(grid)?,
    };
    write_bytes(path, &bytes)
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Quantizes `v` to `round(v * maxval / v_max)`. A zero `v_max` writes all zeros.
pub fn encode_pgm_scaled(grid: &Grid<f64>, depth: PgmDepth, v_max: f64) -> Result<Vec<u8>> {
    let maxval = depth.maxval();
    let mut levels = Vec::with_capacity(grid.len());
    for (index, &v) in grid.iter().enumerate() {
        if !v.is_finite() || v < 0.0 || v > v_max {
            return Err(Error::OutOfRange {
                format: "PGM",
                index,
                value: v,
            });
        }
        let q = if v_max > 0.0 {
            (v * maxval as f64 / v_max).round()
        } else {
            0.0
        };
        levels.push(q as u16);
    }
    Ok(encode_pgm_levels(
        grid.height(),
        grid.width(),
        depth,
        &levels,
    ))
}

pub fn write_pgm_scaled(grid: &Grid<f64>, path: &Path, depth: PgmDepth, v_max: f64) -> Result<()> {
    write_bytes(path, &encode_pgm_scaled(grid, depth, v_max)?)
}

fn encode_pgm_levels(height: usize, width: usize, depth: PgmDepth, levels: &[u16]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n{}\n", depth.maxval()).into_bytes();
    match depth {
        PgmDepth::Eight => out.extend(levels.iter().map(|&l| l as u8)),
        PgmDepth::Sixteen => {
            for &l in levels {
                out.extend_from_slice(&l.to_le_bytes());
            }
        }
    }
    out
}

/// Decodes a `P5` file into raw integer levels and its maxval.
pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<(Grid<u16>, u16)> {
    let malformed = |reason: String| Error::Malformed {
        format: "PGM",
        path: path.to_path_buf(),
        reason,
    };
    let mut header = HeaderReader::new(bytes);
    let magic = header
        .token()
        .ok_or_else(|| malformed("missing magic".into()))?;
    if magic != "P5" {
        return Err(malformed(format!("expected magic P5, found {magic:?}")));
    }
    let width = header.number().map_err(&malformed)?;
    let height = header.number().map_err(&malformed)?;
    let maxval = header.number().map_err(&malformed)?;
    let depth = match maxval {
        255 => PgmDepth::Eight,
        65535 => PgmDepth::Sixteen,
        other => return Err(malformed(format!("unsupported maxval {other}"))),
    };
    let data = header.rest_after_single_whitespace().map_err(&malformed)?;
    let n = width * height;
    let levels: Vec<u16> = match depth {
        PgmDepth::Eight => {
            if data.len() != n {
                return Err(malformed(format!(
                    "expected {n} samples, found {}",
                    data.len()
                )));
            }
            data.iter().map(|&b| b as u16).collect()
        }
        PgmDepth::Sixteen => {
            if data.len() != 2 * n {
                return Err(malformed(format!(
                    "expected {} bytes of samples, found {}",
                    2 * n,
                    data.len()
                )));
            }
            data.chunks_exact(2)
                .map(|b| u16::from_le_bytes([b[0], b[1]]))
                .collect()
        }
    };
    let grid = Grid::new(height, width, levels).map_err(|e| malformed(e.to_string()))?;
    Ok((grid, maxval as u16))
}

pub fn encode_pfm(grid: &Grid<f64>) -> Result<Vec<u8>> {
    let (h, w) = grid.shape();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(4 * h * w);
    for r in (0..h).rev() {
        for c in 0..w {
            let v = *grid.get(r, c);
            let f = v as f32;
            if v.is_finite() && !f.is_finite() {
                return Err(Error::OutOfRange {
                    format: "PFM",
                    index: grid.index(r, c),
                    value: v,
                });
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<Grid<f64>> {
    let malformed = |reason: String| Error::Malformed {
        format: "PFM",
        path: path.to_path_buf(),
        reason,
    };
    let mut header = HeaderReader::new(bytes);
    let magic = header
        .token()
        .ok_or_else(|| malformed("missing magic".into()))?;
    if magic != "Pf" {
        return Err(malformed(format!("expected magic Pf, found {magic:?}")));
    }
    let width = header.number().map_err(&malformed)?;
    let height = header.number().map_err(&malformed)?;
    let scale: f64 = header
        .token()
        .ok_or_else(|| malformed("missing scale".into()))?
        .parse()
        .map_err(|e| malformed(format!("bad scale: {e}")))?;
    if scale.is_nan() || scale >= 0.0 {
        return Err(malformed(format!(
            "only little-endian (negative scale) is supported, found {scale}"
        )));
    }
    let data = header.rest_after_single_whitespace().map_err(&malformed)?;
    if data.len() != 4 * width * height {
        return Err(malformed(format!(
            "expected {} bytes of samples, found {}",
            4 * width * height,
            data.len()
        )));
    }
    let mut values = vec![0.0; width * height];
    for (i, chunk) in data.chunks_exact(4).enumerate() {
        let file_row = i / width;
        let col = i % width;
        let row = height - 1 - file_row;
        values[row * width + col] =
            f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64;
    }
    Grid::new(height, width, values).map_err(|e| malformed(e.to_string()))
}

/// Shortest round-trip decimal per value, `,` between columns, `\n` after every row.
pub fn encode_csv(grid: &Grid<f64>) -> Result<Vec<u8>> {
    let mut out = String::new();
    for r in 0..grid.height() {
        for c in 0..grid.width() {
            if c > 0 {
                out.push(',');
            }
            let v = *grid.get(r, c);
            if !v.is_finite() {
                return Err(Error::OutOfRange {
                    format: "CSV",
                    index: grid.index(r, c),
                    value: v,
                });
            }
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    Ok(out.into_bytes())
}

pub fn decode_csv(bytes: &[u8], path: &Path) -> Result<Grid<f64>> {
    let malformed = |reason: String| Error::Malformed {
        format: "CSV",
        path: path.to_path_buf(),
        reason,
    };
    let text = std::str::from_utf8(bytes).map_err(|e| malformed(e.to_string()))?;
    let mut values = Vec::new();
    let mut width = None;
    let mut height = 0;
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let before = values.len();
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|e| malformed(format!("line {}: {field:?}: {e}", line_no + 1)))?;
            values.push(v);
        }
        let row_width = values.len() - before;
        match width {
            None => width = Some(row_width),
            Some(w) if w != row_width => {
                return Err(malformed(format!(
                    "line {} has {row_width} columns, expected {w}",
                    line_no + 1
                )))
            }
            _ => {}
        }
        height += 1;
    }
    let width = width.ok_or_else(|| malformed("empty file".into()))?;
    Grid::new(height, width, values).map_err(|e| malformed(e.to_string()))
}

pub fn encode_ppm(image: &RgbImage) -> Result<Vec<u8>> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    for (index, &v) in image.data.iter().enumerate() {
        if !v.is_finite() || !(0.0..=1.0).contains(&v) {
            return Err(Error::OutOfRange {
                format: "PPM",
                index,
                value: v,
            });
        }
        out.push((v * 255.0).round() as u8);
    }
    Ok(out)
}

pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    let malformed = |reason: String| Error::Malformed {
        format: "PPM",
        path: path.to_path_buf(),
        reason,
    };
    let mut header = HeaderReader::new(bytes);
    let magic = header
        .token()
        .ok_or_else(|| malformed("missing magic".into()))?;
    if magic != "P6" {
        return Err(malformed(format!("expected magic P6, found {magic:?}")));
    }
    let width = header.number().map_err(&malformed)?;
    let height = header.number().map_err(&malformed)?;
    let maxval = header.number().map_err(&malformed)?;
    if maxval != 255 {
        return Err(malformed(format!("unsupported maxval {maxval}")));
    }
    let data = header.rest_after_single_whitespace().map_err(&malformed)?;
    if data.len() != 3 * width * height {
        return Err(malformed(format!(
            "expected {} samples, found {}",
            3 * width * height,
            data.len()
        )));
    }
    RgbImage::new(
        height,
        width,
        data.iter().map(|&b| b as f64 / 255.0).collect(),
    )
    .map_err(|e| malformed(e.to_string()))
}

pub fn write_ppm(image: &RgbImage, path: &Path) -> Result<()> {
    write_bytes(path, &encode_ppm(image)?)
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes, path)
}

/// Writes raw labels as an 8-bit PGM (sample value == class index).
pub fn write_labels_pgm(labels: &SegLabelMap, path: &Path) -> Result<()> {
    if labels.classes() > 254 {
        return Err(Error::invalid(
            "labels",
            "8-bit PGM holds at most 254 classes plus ignore",
        ));
    }
    let (h, w) = labels.shape();
    let levels: Vec<u16> = labels.as_slice().to_vec();
    write_bytes(path, &encode_pgm_levels(h, w, PgmDepth::Eight, &levels))
}

pub fn read_labels_pgm(path: &Path, classes: usize) -> Result<SegLabelMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (grid, _) = decode_pgm(&bytes, path)?;
    SegLabelMap::with_ignore(grid, classes)
}

pub fn write_depth_pfm(depth: &DepthMap, path: &Path) -> Result<()> {
    write_bytes(path, &encode_pfm(depth.grid())?)
}

pub fn read_depth_pfm(path: &Path) -> Result<DepthMap> {
    DepthMap::new(read_grid(path, GridFormat::Pfm)?)
}

pub fn read_log_depth_pfm(path: &Path) -> Result<LogDepthMap> {
    LogDepthMap::new(read_grid(path, GridFormat::Pfm)?)
}

/// Netpbm-style header tokenizer: whitespace-separated tokens, `#` comments.
struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        HeaderReader { bytes, pos: 0 }
    }

    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Option<&'a str> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return None;
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).ok()
    }

    fn number(&mut self) -> std::result::Result<usize, String> {
        let tok = self.token().ok_or("truncated header")?;
        tok.parse()
            .map_err(|_| format!("expected a positive integer, found {tok:?}"))
    }

    fn rest_after_single_whitespace(&mut self) -> std::result::Result<&'a [u8], String> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => Ok(&self.bytes[self.pos + 1..]),
            _ => Err("header not terminated by whitespace".into()),
        }
    }
}
