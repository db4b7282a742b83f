//! Guidance maps: count grids of recorded positions, agent-centred crops and
//! image/CSV dumps of any grid.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use image::{ImageBuffer, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::TrajPoint;
use crate::recwin::RecordWindow;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
    #[error("half side must be positive, got {0}")]
    InvalidHalfSide(f64),
    #[error("failed to write {path}: {msg}")]
    Write { path: String, msg: String },
}

pub const DEFAULT_RESOLUTION: f64 = 0.25;
pub const DEFAULT_HALF_SIDE: f64 = 4.0;

/// Axis convention: world x indexes rows, world y indexes columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// World coordinates of the corner of cell (0, 0).
    pub origin: TrajPoint,
    /// Metres per cell.
    pub resolution: f64,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Cell {
    pub row: i64,
    pub col: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Located {
    pub cell: Cell,
    pub in_bounds: bool,
}

impl GridSpec {
    pub fn new(origin: TrajPoint, resolution: f64, height: usize, width: usize) -> Result<Self, MapError> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(MapError::InvalidSpec(format!("resolution {resolution}")));
        }
        if height == 0 || width == 0 {
            return Err(MapError::InvalidSpec(format!("size {height}x{width}")));
        }
        Ok(Self {
            origin,
            resolution,
            height,
            width,
        })
    }

    /// Smallest grid whose origin is `lo - pad` and which covers `hi + pad`.
    pub fn covering(lo: TrajPoint, hi: TrajPoint, resolution: f64, pad: f64) -> Result<Self, MapError> {
        let origin = TrajPoint::new(lo.x - pad, lo.y - pad);
        let h = ((hi.x - lo.x + 2.0 * pad) / resolution).floor() as usize + 1;
        let w = ((hi.y - lo.y + 2.0 * pad) / resolution).floor() as usize + 1;
        Self::new(origin, resolution, h, w)
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.row >= 0 && cell.col >= 0 && (cell.row as usize) < self.height && (cell.col as usize) < self.width
    }

    pub fn index(&self, cell: Cell) -> Option<usize> {
        self.contains(cell)
            .then(|| cell.row as usize * self.width + cell.col as usize)
    }

    pub fn cell_center(&self, row: usize, col: usize) -> TrajPoint {
        TrajPoint::new(
            self.origin.x + (row as f64 + 0.5) * self.resolution,
            self.origin.y + (col as f64 + 0.5) * self.resolution,
        )
    }
}

pub fn world_to_grid(p: TrajPoint, spec: &GridSpec) -> Located {
    let cell = Cell {
        row: ((p.x - spec.origin.x) / spec.resolution).floor() as i64,
        col: ((p.y - spec.origin.y) / spec.resolution).floor() as i64,
    };
    Located {
        cell,
        in_bounds: spec.contains(cell),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceMap {
    pub spec: GridSpec,
    /// Row-major, `height * width`.
    pub counts: Vec<u32>,
    /// Positions that fell outside the grid.
    pub dropped: usize,
}

impl GuidanceMap {
    pub fn empty(spec: GridSpec) -> Self {
        Self {
            spec,
            counts: vec![0; spec.len()],
            dropped: 0,
        }
    }

    pub fn get(&self, cell: Cell) -> u32 {
        self.spec.index(cell).map_or(0, |i| self.counts[i])
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn add_positions(&mut self, positions: &[TrajPoint]) {
        for &p in positions {
            let loc = world_to_grid(p, &self.spec);
            match self.spec.index(loc.cell) {
                Some(i) => self.counts[i] += 1,
                None => self.dropped += 1,
            }
        }
    }
}

pub fn rasterize(window: &RecordWindow, spec: &GridSpec) -> GuidanceMap {
    let mut map = GuidanceMap::empty(*spec);
    map.add_positions(&window.positions);
    map
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalMap {
    pub agent_id: i64,
    pub side: usize,
    /// Row-major `side * side` counts; cells outside the full map are zero.
    pub patch: Vec<u32>,
    /// Cell of the agent's last observed position in the full map.
    pub center_cell: (i64, i64),
}

impl LocalMap {
    pub fn zeros(agent_id: i64, side: usize) -> Self {
        Self {
            agent_id,
            side,
            patch: vec![0; side * side],
            center_cell: (0, 0),
        }
    }

    pub fn total(&self) -> u64 {
        self.patch.iter().map(|&c| c as u64).sum()
    }

    /// Patch scaled by `1 / max(1, patch max)`, the encoder input.
    pub fn normalized(&self) -> Vec<f64> {
        let max = self.patch.iter().copied().max().unwrap_or(0).max(1) as f64;
        self.patch.iter().map(|&c| c as f64 / max).collect()
    }
}

pub fn local_side(half_side: f64, resolution: f64) -> usize {
    (2.0 * half_side / resolution).round() as usize
}

/// Square crop of side `2l` (in cells: `round(2l / res)`) around the agent's
/// last observed cell. The agent's cell lands at index `side / 2`.
pub fn extract_local(
    map: &GuidanceMap,
    agent_id: i64,
    agent_last_pos: TrajPoint,
    half_side: f64,
) -> Result<LocalMap, MapError> {
    if !(half_side > 0.0) {
        return Err(MapError::InvalidHalfSide(half_side));
    }
    let side = local_side(half_side, map.spec.resolution);
    let center = world_to_grid(agent_last_pos, &map.spec).cell;
    let r0 = center.row - (side / 2) as i64;
    let c0 = center.col - (side / 2) as i64;
    let mut patch = vec![0u32; side * side];
    for r in 0..side {
        for c in 0..side {
            patch[r * side + c] = map.get(Cell {
                row: r0 + r as i64,
                col: c0 + c as i64,
            });
        }
    }
    Ok(LocalMap {
        agent_id,
        side,
        patch,
        center_cell: (center.row, center.col),
    })
}

/// Anything that can be drawn as a grid of scalars.
pub trait Raster {
    fn dims(&self) -> (usize, usize);
    fn value(&self, row: usize, col: usize) -> f64;
}

impl Raster for GuidanceMap {
    fn dims(&self) -> (usize, usize) {
        (self.spec.height, self.spec.width)
    }
    fn value(&self, row: usize, col: usize) -> f64 {
        self.counts[row * self.spec.width + col] as f64
    }
}

impl Raster for LocalMap {
    fn dims(&self) -> (usize, usize) {
        (self.side, self.side)
    }
    fn value(&self, row: usize, col: usize) -> f64 {
        self.patch[row * self.side + col] as f64
    }
}

/// Black to red to yellow to white.
pub fn heat_color(t: f64) -> Rgb<u8> {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let ch = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    Rgb([ch(3.0 * t), ch(3.0 * t - 1.0), ch(3.0 * t - 2.0)])
}

/// Scale range used for colouring: `[min(0, lo), max(0, hi)]`. For count
/// grids this is plain max normalization.
fn value_range<R: Raster + ?Sized>(raster: &R) -> (f64, f64) {
    let (h, w) = raster.dims();
    let mut lo = 0.0f64;
    let mut hi = 0.0f64;
    for r in 0..h {
        for c in 0..w {
            let v = raster.value(r, c);
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    (lo, hi)
}

/// Rasterizes to an RGB image with a `scale x scale` pixel block per cell.
/// Rows map to image y, columns to image x.
pub fn to_image<R: Raster + ?Sized>(raster: &R, scale: u32) -> RgbImage {
    let scale = scale.max(1);
    let (h, w) = raster.dims();
    let (lo, hi) = value_range(raster);
    let span = hi - lo;
    ImageBuffer::from_fn(w as u32 * scale, h as u32 * scale, |x, y| {
        let v = raster.value((y / scale) as usize, (x / scale) as usize);
        let t = if span > 0.0 { (v - lo) / span } else { 0.0 };
        heat_color(t)
    })
}

/// Writes an 8-bit RGB PNG with optional `tEXt` entries.
pub fn write_png(img: &RgbImage, path: &Path, text: &[(&str, &str)]) -> Result<(), MapError> {
    let err = |msg: String| MapError::Write {
        path: path.display().to_string(),
        msg,
    };
    let file = fs::File::create(path).map_err(|e| err(e.to_string()))?;
    let mut enc = png::Encoder::new(io::BufWriter::new(file), img.width(), img.height());
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    for (k, v) in text {
        enc.add_text_chunk(k.to_string(), v.to_string()).map_err(|e| err(e.to_string()))?;
    }
    let mut w = enc.write_header().map_err(|e| err(e.to_string()))?;
    w.write_image_data(img.as_raw()).map_err(|e| err(e.to_string()))?;
    w.finish().map_err(|e| err(e.to_string()))
}

/// `tEXt` entries of a PNG file.
pub fn png_text(path: &Path) -> io::Result<Vec<(String, String)>> {
    let file = fs::File::open(path)?;
    let reader = png::Decoder::new(io::BufReader::new(file))
        .read_info()
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
    Ok(reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .map(|c| (c.keyword.clone(), c.text.clone()))
        .collect())
}

pub fn render_map<R: Raster + ?Sized>(raster: &R, path: &Path, scale: u32) -> Result<(), MapError> {
    write_png(&to_image(raster, scale), path, &[])
}

/// Overlay of point sequences on a guidance map. Each sequence is drawn as
/// filled blocks in its colour.
pub fn trajectory_image(map: &GuidanceMap, tracks: &[(&[TrajPoint], [u8; 3])], scale: u32) -> RgbImage {
    let scale = scale.max(1);
    let mut img = to_image(map, scale);
    for (points, color) in tracks {
        for &p in points.iter() {
            let loc = world_to_grid(p, &map.spec);
            if !loc.in_bounds {
                continue;
            }
            let (x0, y0) = (loc.cell.col as u32 * scale, loc.cell.row as u32 * scale);
            for dy in 0..scale {
                for dx in 0..scale {
                    img.put_pixel(x0 + dx, y0 + dy, Rgb(*color));
                }
            }
        }
    }
    img
}

pub fn render_trajectories(
    map: &GuidanceMap,
    tracks: &[(&[TrajPoint], [u8; 3])],
    path: &Path,
    scale: u32,
) -> Result<(), MapError> {
    write_png(&trajectory_image(map, tracks, scale), path, &[])
}

pub fn write_csv<R: Raster + ?Sized, W: Write>(raster: &R, mut w: W) -> io::Result<()> {
    let (h, cols) = raster.dims();
    for r in 0..h {
        let row: Vec<String> = (0..cols).map(|c| raster.value(r, c).to_string()).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn dump_csv<R: Raster + ?Sized>(raster: &R, path: &Path) -> Result<(), MapError> {
    let err = |e: io::Error| MapError::Write {
        path: path.display().to_string(),
        msg: e.to_string(),
    };
    let file = fs::File::create(path).map_err(err)?;
    write_csv(raster, io::BufWriter::new(file)).map_err(err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(h: usize, w: usize) -> GridSpec {
        GridSpec::new(TrajPoint::new(0.0, 0.0), 0.25, h, w).unwrap()
    }

    #[test]
    fn world_to_grid_examples() {
        let s = spec(10, 10);
        let loc = world_to_grid(TrajPoint::new(1.0, 0.5), &s);
        assert_eq!(loc.cell, Cell { row: 4, col: 2 });
        assert!(loc.in_bounds);
        assert_eq!(world_to_grid(TrajPoint::new(0.0, 0.0), &s).cell, Cell { row: 0, col: 0 });
        let out = world_to_grid(TrajPoint::new(-0.1, 0.0), &s);
        assert!(!out.in_bounds);
        assert_eq!(out.cell.row, -1);
        assert!(!world_to_grid(TrajPoint::new(2.5, 0.0), &s).in_bounds);
    }

    #[test]
    fn invalid_specs() {
        assert!(GridSpec::new(TrajPoint::default(), 0.0, 1, 1).is_err());
        assert!(GridSpec::new(TrajPoint::default(), 0.1, 0, 1).is_err());
    }

    #[test]
    fn rasterize_counts() {
        let s = spec(8, 8);
        assert_eq!(rasterize(&RecordWindow::default(), &s).total(), 0);
        let w = RecordWindow {
            frames: vec![1],
            positions: vec![
                TrajPoint::new(0.3, 0.3),
                TrajPoint::new(0.4, 0.26),
                TrajPoint::new(1.0, 1.9),
                TrajPoint::new(9.0, 9.0),
            ],
        };
        let m = rasterize(&w, &s);
        assert_eq!(m.get(Cell { row: 1, col: 1 }), 2);
        assert_eq!(m.total(), 3);
        assert_eq!(m.dropped, 1);
    }

    #[test]
    fn local_patch_size_and_padding() {
        let s = spec(40, 40);
        let mut m = GuidanceMap::empty(s);
        m.counts.iter_mut().for_each(|c| *c = 3);
        let mid = extract_local(&m, 1, TrajPoint::new(5.0, 5.0), 4.0).unwrap();
        assert_eq!(mid.side, 32);
        assert_eq!(mid.patch.len(), 32 * 32);
        assert!(mid.patch.iter().all(|&c| c == 3));
        assert_eq!(mid.center_cell, (20, 20));

        let corner = extract_local(&m, 1, TrajPoint::new(0.1, 0.1), 4.0).unwrap();
        // crop spans cells -16..16 on both axes
        for r in 0..32 {
            for c in 0..32 {
                let expect = if r >= 16 && c >= 16 { 3 } else { 0 };
                assert_eq!(corner.patch[r * 32 + c], expect, "r={r} c={c}");
            }
        }
        assert!(extract_local(&m, 1, TrajPoint::default(), 0.0).is_err());
    }

    #[test]
    fn normalization() {
        let mut l = LocalMap::zeros(0, 2);
        assert_eq!(l.normalized(), vec![0.0; 4]);
        l.patch = vec![0, 2, 4, 1];
        assert_eq!(l.normalized(), vec![0.0, 0.5, 1.0, 0.25]);
    }

    #[test]
    fn covering_contains_bounds() {
        let s = GridSpec::covering(TrajPoint::new(-1.0, 2.0), TrajPoint::new(3.0, 5.0), 0.25, 4.0).unwrap();
        assert!(world_to_grid(TrajPoint::new(-5.0, -2.0), &s).in_bounds);
        assert!(world_to_grid(TrajPoint::new(7.0, 9.0), &s).in_bounds);
    }

    #[test]
    fn images() {
        let s = spec(3, 4);
        let zero = GuidanceMap::empty(s);
        let img = to_image(&zero, 2);
        assert_eq!(img.dimensions(), (8, 6));
        assert!(img.pixels().all(|p| *p == Rgb([0, 0, 0])));

        let mut one = GuidanceMap::empty(s);
        one.counts[1 * 4 + 2] = 5;
        let img = to_image(&one, 2);
        let bright: Vec<(u32, u32)> = img
            .enumerate_pixels()
            .filter(|(_, _, p)| **p != Rgb([0, 0, 0]))
            .map(|(x, y, _)| (x, y))
            .collect();
        assert_eq!(bright, vec![(4, 2), (5, 2), (4, 3), (5, 3)]);
        assert_eq!(*img.get_pixel(4, 2), Rgb([255, 255, 255]));
    }

    #[test]
    fn render_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = GuidanceMap::empty(spec(5, 5));
        m.counts[7] = 2;
        m.counts[3] = 1;
        let a = dir.path().join("a.png");
        let b = dir.path().join("b.png");
        render_map(&m, &a, 4).unwrap();
        render_map(&m, &b, 4).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert!(render_map(&m, &dir.path().join("missing/x.png"), 4).is_err());
    }

    #[test]
    fn csv_dump() {
        let mut m = GuidanceMap::empty(spec(2, 3));
        m.counts[4] = 7;
        let mut buf = Vec::new();
        write_csv(&m, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "0,0,0\n0,7,0\n");
    }

    #[test]
    fn png_text_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        let m = GuidanceMap::empty(spec(3, 4));
        write_png(&to_image(&m, 2), &path, &[("bgm-config", "abc123")]).unwrap();
        assert_eq!(png_text(&path).unwrap(), vec![("bgm-config".to_string(), "abc123".to_string())]);
    }
}
