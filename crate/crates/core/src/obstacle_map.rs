//! 2D obstacle-aware map: vertical point counts per floor cell, box smoothing
//! and world/grid transforms.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::PointCloud;

pub const DEFAULT_CELL_SIZE: f64 = 0.1;
/// Points count only when `z_min < z < z_max`; excludes floor and ceiling.
pub const DEFAULT_Z_BAND: (f64, f64) = (0.2, 2.0);
pub const DEFAULT_KERNEL_RADIUS: usize = 1;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("cell size must be positive and finite, got {0}")]
    InvalidCellSize(f64),
    #[error("z band must satisfy z_min < z_max, got ({0}, {1})")]
    InvalidZBand(f64, f64),
    #[error("position ({x}, {y}) lies outside the map; nearest cell is {nearest}")]
    OutOfBounds { x: f64, y: f64, nearest: GridCoord },
    #[error("grid must have at least one cell")]
    EmptyGrid,
    #[error("i/o error writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("image encoding failed: {0}")]
    Image(String),
}

/// Cell index: `i` along x, `j` along y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct GridCoord {
    pub i: usize,
    pub j: usize,
}

impl GridCoord {
    pub const fn new(i: usize, j: usize) -> Self {
        Self { i, j }
    }

    pub fn manhattan(&self, other: &GridCoord) -> usize {
        self.i.abs_diff(other.i) + self.j.abs_diff(other.j)
    }

    pub fn euclidean(&self, other: &GridCoord) -> f64 {
        let di = self.i as f64 - other.i as f64;
        let dj = self.j as f64 - other.j as f64;
        (di * di + dj * dj).sqrt()
    }
}

impl From<[usize; 2]> for GridCoord {
    fn from(v: [usize; 2]) -> Self {
        Self { i: v[0], j: v[1] }
    }
}

impl From<GridCoord> for [usize; 2] {
    fn from(c: GridCoord) -> Self {
        [c.i, c.j]
    }
}

impl std::fmt::Display for GridCoord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.i, self.j)
    }
}

/// Placement of a grid in the world x–y plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridFrame {
    /// World position of the outer corner of cell (0, 0).
    pub origin: [f64; 2],
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
}

impl GridFrame {
    /// Frame covering the x–y bounding box of `cloud`, snapped to the
    /// `cell_size` lattice and padded by one cell on each side.
    pub fn covering(cloud: &PointCloud, cell_size: f64) -> Result<Self, MapError> {
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(MapError::InvalidCellSize(cell_size));
        }
        let Some(bb) = cloud.bounds() else {
            return Ok(Self {
                origin: [0.0, 0.0],
                cell_size,
                width: 1,
                height: 1,
            });
        };
        let ox = (bb.min.x / cell_size).floor() * cell_size - cell_size;
        let oy = (bb.min.y / cell_size).floor() * cell_size - cell_size;
        let width = ((bb.max.x - ox) / cell_size).floor() as usize + 2;
        let height = ((bb.max.y - oy) / cell_size).floor() as usize + 2;
        Ok(Self {
            origin: [ox, oy],
            cell_size,
            width,
            height,
        })
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<GridCoord> {
        let fx = ((x - self.origin[0]) / self.cell_size).floor();
        let fy = ((y - self.origin[1]) / self.cell_size).floor();
        (fx >= 0.0 && fy >= 0.0 && (fx as usize) < self.width && (fy as usize) < self.height)
            .then(|| GridCoord::new(fx as usize, fy as usize))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapKind {
    /// Integer point counts.
    Raw,
    Smoothed { radius: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleMap {
    frame: GridFrame,
    values: Vec<f64>,
    z_band: (f64, f64),
    kind: MapKind,
    empty_input: bool,
}

/// Counts points with `z_min < z < z_max` per x–y cell over a grid that covers the cloud.
pub fn build_map(cloud: &PointCloud, cell_size: f64, z_band: (f64, f64)) -> Result<ObstacleMap, MapError> {
    let frame = GridFrame::covering(cloud, cell_size)?;
    build_map_in_frame(cloud, frame, z_band)
}

/// Like [`build_map`] over an explicit grid; points outside it are ignored.
pub fn build_map_in_frame(
    cloud: &PointCloud,
    frame: GridFrame,
    z_band: (f64, f64),
) -> Result<ObstacleMap, MapError> {
    if !(frame.cell_size > 0.0 && frame.cell_size.is_finite()) {
        return Err(MapError::InvalidCellSize(frame.cell_size));
    }
    if !(z_band.0 < z_band.1) {
        return Err(MapError::InvalidZBand(z_band.0, z_band.1));
    }
    if frame.width == 0 || frame.height == 0 {
        return Err(MapError::EmptyGrid);
    }
    let empty_input = cloud.is_empty();
    if empty_input {
        log::warn!("building obstacle map from an empty cloud");
    }
    let mut values = vec![0.0; frame.width * frame.height];
    for p in &cloud.points {
        if !(p.z > z_band.0 && p.z < z_band.1) {
            continue;
        }
        if let Some(c) = frame.cell_of(p.x, p.y) {
            values[c.j * frame.width + c.i] += 1.0;
        }
    }
    Ok(ObstacleMap {
        frame,
        values,
        z_band,
        kind: MapKind::Raw,
        empty_input,
    })
}

impl ObstacleMap {
    /// Map from explicit row-major values (`values[j * width + i]`).
    pub fn from_values(frame: GridFrame, values: Vec<f64>) -> Result<Self, MapError> {
        if frame.width == 0 || frame.height == 0 || values.len() != frame.width * frame.height {
            return Err(MapError::EmptyGrid);
        }
        if !(frame.cell_size > 0.0 && frame.cell_size.is_finite()) {
            return Err(MapError::InvalidCellSize(frame.cell_size));
        }
        Ok(Self {
            frame,
            values,
            z_band: DEFAULT_Z_BAND,
            kind: MapKind::Raw,
            empty_input: false,
        })
    }

    /// Unit-cell grid at the origin, convenient for planner tests.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MapError> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(MapError::EmptyGrid);
        }
        let frame = GridFrame {
            origin: [0.0, 0.0],
            cell_size: 1.0,
            width,
            height,
        };
        Self::from_values(frame, rows.concat())
    }

    pub fn frame(&self) -> &GridFrame {
        &self.frame
    }

    pub fn width(&self) -> usize {
        self.frame.width
    }

    pub fn height(&self) -> usize {
        self.frame.height
    }

    pub fn cell_size(&self) -> f64 {
        self.frame.cell_size
    }

    pub fn origin(&self) -> [f64; 2] {
        self.frame.origin
    }

    pub fn z_band(&self) -> (f64, f64) {
        self.z_band
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    /// Set when the map was built from an empty cloud.
    pub fn is_empty_input(&self) -> bool {
        self.empty_input
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn contains(&self, c: GridCoord) -> bool {
        c.i < self.frame.width && c.j < self.frame.height
    }

    pub fn index(&self, c: GridCoord) -> usize {
        c.j * self.frame.width + c.i
    }

    pub fn coord(&self, index: usize) -> GridCoord {
        GridCoord::new(index % self.frame.width, index / self.frame.width)
    }

    pub fn value(&self, c: GridCoord) -> f64 {
        self.values[self.index(c)]
    }

    pub fn is_walkable(&self, c: GridCoord) -> bool {
        self.value(c) == 0.0
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// In-bounds 4-neighbours in the fixed order +i, −i, +j, −j.
    pub fn neighbors4(&self, c: GridCoord) -> impl Iterator<Item = GridCoord> + '_ {
        let (w, h) = (self.frame.width, self.frame.height);
        [
            (c.i + 1 < w).then(|| GridCoord::new(c.i + 1, c.j)),
            (c.i > 0).then(|| GridCoord::new(c.i - 1, c.j)),
            (c.j + 1 < h).then(|| GridCoord::new(c.i, c.j + 1)),
            (c.j > 0).then(|| GridCoord::new(c.i, c.j - 1)),
        ]
        .into_iter()
        .flatten()
    }

    /// Floor quantization of a world position.
    pub fn world_to_grid(&self, x: f64, y: f64) -> Result<GridCoord, MapError> {
        self.frame.cell_of(x, y).ok_or_else(|| MapError::OutOfBounds {
            x,
            y,
            nearest: self.clamp_to_grid(x, y),
        })
    }

    /// Nearest in-bounds cell to any world position.
    pub fn clamp_to_grid(&self, x: f64, y: f64) -> GridCoord {
        let clamp = |v: f64, n: usize| -> usize {
            if v.is_nan() || v < 0.0 {
                0
            } else {
                (v as usize).min(n - 1)
            }
        };
        let fx = ((x - self.frame.origin[0]) / self.frame.cell_size).floor();
        let fy = ((y - self.frame.origin[1]) / self.frame.cell_size).floor();
        GridCoord::new(clamp(fx, self.frame.width), clamp(fy, self.frame.height))
    }

    /// World position of the cell center.
    pub fn grid_to_world(&self, c: GridCoord) -> [f64; 2] {
        [
            self.frame.origin[0] + (c.i as f64 + 0.5) * self.frame.cell_size,
            self.frame.origin[1] + (c.j as f64 + 0.5) * self.frame.cell_size,
        ]
    }

    /// Box filter of side `2r + 1` with zero padding, normalized by the full kernel area.
    pub fn smooth(&self, radius: usize) -> ObstacleMap {
        if radius == 0 {
            return self.clone();
        }
        let (w, h) = (self.frame.width, self.frame.height);
        let mut rows = vec![0.0; w * h];
        for j in 0..h {
            for i in 0..w {
                let lo = i.saturating_sub(radius);
                let hi = (i + radius).min(w - 1);
                rows[j * w + i] = self.values[j * w + lo..=j * w + hi].iter().sum();
            }
        }
        let norm = ((2 * radius + 1) * (2 * radius + 1)) as f64;
        let mut out = vec![0.0; w * h];
        for j in 0..h {
            let lo = j.saturating_sub(radius);
            let hi = (j + radius).min(h - 1);
            for i in 0..w {
                let s: f64 = (lo..=hi).map(|jj| rows[jj * w + i]).sum();
                out[j * w + i] = s / norm;
            }
        }
        ObstacleMap {
            frame: self.frame,
            values: out,
            z_band: self.z_band,
            kind: MapKind::Smoothed { radius },
            empty_input: self.empty_input,
        }
    }

    /// Row-major CSV: header, then one line per `j` (ascending y) with `width` values.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.values.len() * 10 + 64);
        let _ = writeln!(
            s,
            "cells={}x{} cell_size={} origin={},{}",
            self.frame.width, self.frame.height, self.frame.cell_size, self.frame.origin[0], self.frame.origin[1]
        );
        for row in self.values.chunks(self.frame.width) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }

    /// Greyscale raster, max-normalized, top image row = highest `j`.
    pub fn to_gray(&self) -> image::GrayImage {
        let (w, h) = (self.frame.width, self.frame.height);
        let max = self.max_value();
        image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
            let v = self.values[(h - 1 - y as usize) * w + x as usize];
            let level = if max > 0.0 { (v / max * 255.0).round() as u8 } else { 0 };
            image::Luma([level])
        })
    }

    pub fn to_png(&self) -> Result<Vec<u8>, MapError> {
        encode_png(&image::DynamicImage::ImageLuma8(self.to_gray()))
    }

    /// Writes `<stem>.csv` and `<stem>.png`.
    pub fn export_heatmap(&self, stem: &Path) -> Result<(PathBuf, PathBuf), MapError> {
        let csv = stem.with_extension("csv");
        let png = stem.with_extension("png");
        write_file(&csv, self.to_csv().as_bytes())?;
        write_file(&png, &self.to_png()?)?;
        Ok((csv, png))
    }
}

pub(crate) fn encode_png(img: &image::DynamicImage) -> Result<Vec<u8>, MapError> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|e| MapError::Image(e.to_string()))?;
    Ok(buf.into_inner())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), MapError> {
    std::fs::write(path, bytes).map_err(|source| MapError::Io {
        path: path.display().to_string(),
        source,
    })
}
