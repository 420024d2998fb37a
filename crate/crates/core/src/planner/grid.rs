//! Occupancy grids and footprint collision checks.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::geometry::Pose2;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("map metadata {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("map metadata {path}: {message}")]
    Metadata { path: PathBuf, message: String },
    #[error("map image not found: {0}")]
    ImageMissing(PathBuf),
    #[error("map image {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("ascii map line {line}: {message}")]
    Ascii { line: usize, message: String },
    #[error("invalid grid: {0}")]
    Invalid(String),
}

/// A row-major occupancy grid. Row 0 is the bottom of the map (smallest y in
/// the grid frame); `origin` is the world pose of the lower-left corner.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    resolution: f64,
    origin: Pose2,
    cells: Vec<bool>,
    // summed-area table, (width + 1) * (height + 1)
    integral: Vec<u32>,
}

impl OccupancyGrid {
    pub fn new(
        width: usize,
        height: usize,
        resolution: f64,
        origin: Pose2,
        cells: Vec<bool>,
    ) -> Result<Self, MapError> {
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(MapError::Invalid(format!("resolution {resolution}")));
        }
        if width == 0 || height == 0 {
            return Err(MapError::Invalid("empty grid".into()));
        }
        if cells.len() != width * height {
            return Err(MapError::Invalid(format!(
                "{} cells for a {width}x{height} grid",
                cells.len()
            )));
        }
        let mut integral = vec![0u32; (width + 1) * (height + 1)];
        for iy in 0..height {
            let mut row = 0u32;
            for ix in 0..width {
                row += u32::from(cells[iy * width + ix]);
                integral[(iy + 1) * (width + 1) + ix + 1] = integral[iy * (width + 1) + ix + 1] + row;
            }
        }
        Ok(Self {
            width,
            height,
            resolution,
            origin,
            cells,
            integral,
        })
    }

    pub fn empty(width: usize, height: usize, resolution: f64) -> Self {
        Self::new(width, height, resolution, Pose2::origin(), vec![false; width * height])
            .expect("valid empty grid")
    }

    /// Parses a text grid: `#` occupied, `.` free. The first line is the top row.
    pub fn from_ascii(text: &str, resolution: f64, origin: Pose2) -> Result<Self, MapError> {
        let lines: Vec<&str> = text
            .lines()
            .map(str::trim_end)
            .filter(|l| !l.is_empty())
            .collect();
        Self::from_rows(&lines, resolution, origin)
    }

    pub fn from_rows<S: AsRef<str>>(
        rows: &[S],
        resolution: f64,
        origin: Pose2,
    ) -> Result<Self, MapError> {
        let height = rows.len();
        if height == 0 {
            return Err(MapError::Ascii {
                line: 1,
                message: "no rows".into(),
            });
        }
        let width = rows[0].as_ref().chars().count();
        let mut cells = vec![false; width * height];
        for (line, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.chars().count() != width {
                return Err(MapError::Ascii {
                    line: line + 1,
                    message: format!("expected {width} columns"),
                });
            }
            let iy = height - 1 - line;
            for (ix, c) in row.chars().enumerate() {
                cells[iy * width + ix] = match c {
                    '#' => true,
                    '.' => false,
                    other => {
                        return Err(MapError::Ascii {
                            line: line + 1,
                            message: format!("unexpected character {other:?}"),
                        })
                    }
                };
            }
        }
        Self::new(width, height, resolution, origin, cells)
    }

    /// Loads a greyscale image map described by a metadata file with the
    /// usual `image`, `resolution`, `origin`, `occupied_thresh` and `negate`
    /// keys. Image paths are relative to the metadata file.
    pub fn from_metadata_file(path: &Path) -> Result<Self, MapError> {
        let text = std::fs::read_to_string(path).map_err(|source| MapError::Io {
            path: path.to_owned(),
            source,
        })?;
        let meta: MapMetadata = serde_yaml::from_str(&text).map_err(|e| MapError::Metadata {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        let image_path = path.parent().unwrap_or(Path::new(".")).join(&meta.image);
        if !image_path.exists() {
            return Err(MapError::ImageMissing(image_path));
        }
        let img = image::open(&image_path)
            .map_err(|e| MapError::Image {
                path: image_path.clone(),
                message: e.to_string(),
            })?
            .into_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut cells = vec![false; w * h];
        for (px, py, p) in img.enumerate_pixels() {
            let value = f64::from(p.0[0]) / 255.0;
            let occupancy = if meta.negate != 0 { value } else { 1.0 - value };
            let iy = h - 1 - py as usize;
            cells[iy * w + px as usize] = occupancy > meta.occupied_thresh;
        }
        let origin = Pose2::new(meta.origin[0], meta.origin[1], meta.origin[2]);
        Self::new(w, h, meta.resolution, origin, cells)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> Pose2 {
        self.origin
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn is_occupied(&self, ix: usize, iy: usize) -> bool {
        self.cells[iy * self.width + ix]
    }

    pub fn set_occupied(&mut self, ix: usize, iy: usize, occupied: bool) {
        let mut cells = std::mem::take(&mut self.cells);
        cells[iy * self.width + ix] = occupied;
        *self = Self::new(self.width, self.height, self.resolution, self.origin, cells)
            .expect("dimensions unchanged");
    }

    /// Extent of the map in its own frame.
    pub fn size(&self) -> (f64, f64) {
        (
            self.width as f64 * self.resolution,
            self.height as f64 * self.resolution,
        )
    }

    /// World point to grid-frame coordinates in meters.
    pub fn to_local(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.origin.theta.sin_cos();
        let dx = p[0] - self.origin.x;
        let dy = p[1] - self.origin.y;
        [c * dx + s * dy, -s * dx + c * dy]
    }

    pub fn to_world(&self, local: [f64; 2]) -> [f64; 2] {
        self.origin.transform_point(local)
    }

    /// Cell containing a world point, if inside the map.
    pub fn cell_of(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let l = self.to_local(p);
        let ix = (l[0] / self.resolution).floor();
        let iy = (l[1] / self.resolution).floor();
        if ix < 0.0 || iy < 0.0 || ix >= self.width as f64 || iy >= self.height as f64 {
            return None;
        }
        Some((ix as usize, iy as usize))
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> [f64; 2] {
        self.to_world([
            (ix as f64 + 0.5) * self.resolution,
            (iy as f64 + 0.5) * self.resolution,
        ])
    }

    /// World-frame axis-aligned bounds of the map, `[xmin, ymin, xmax, ymax]`.
    pub fn world_bounds(&self) -> [f64; 4] {
        let (w, h) = self.size();
        let corners = [[0.0, 0.0], [w, 0.0], [0.0, h], [w, h]].map(|c| self.to_world(c));
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for c in corners {
            b[0] = b[0].min(c[0]);
            b[1] = b[1].min(c[1]);
            b[2] = b[2].max(c[0]);
            b[3] = b[3].max(c[1]);
        }
        b
    }

    /// Number of occupied cells in the inclusive index box.
    fn occupied_in(&self, ix0: usize, iy0: usize, ix1: usize, iy1: usize) -> u32 {
        let w = self.width + 1;
        let at = |x: usize, y: usize| self.integral[y * w + x];
        at(ix1 + 1, iy1 + 1) + at(ix0, iy0) - at(ix0, iy1 + 1) - at(ix1 + 1, iy0)
    }

    /// Renders the grid back to `#`/`.` rows, top row first.
    pub fn to_ascii_rows(&self) -> Vec<String> {
        (0..self.height)
            .rev()
            .map(|iy| {
                (0..self.width)
                    .map(|ix| if self.is_occupied(ix, iy) { '#' } else { '.' })
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Deserialize)]
struct MapMetadata {
    image: PathBuf,
    resolution: f64,
    origin: [f64; 3],
    #[serde(default = "default_occupied_thresh")]
    occupied_thresh: f64,
    #[serde(default)]
    #[allow(dead_code)]
    free_thresh: Option<f64>,
    #[serde(default)]
    negate: u8,
    #[serde(default)]
    #[allow(dead_code)]
    mode: Option<String>,
}

fn default_occupied_thresh() -> f64 {
    0.65
}

/// Oriented rectangle used for footprint queries, in the grid frame.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Footprint {
    pub center: [f64; 2],
    pub axis: [f64; 2],
    pub half_length: f64,
    pub half_width: f64,
}

impl Footprint {
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let [c, s] = self.axis;
        let (hl, hw) = (self.half_length, self.half_width);
        [(hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw)].map(|(a, b)| {
            [
                self.center[0] + c * a - s * b,
                self.center[1] + s * a + c * b,
            ]
        })
    }

    /// Separating-axis test against the axis-aligned square
    /// `[x0, x0 + size] x [y0, y0 + size]`. Touching boundaries do not count.
    pub fn overlaps_square(&self, x0: f64, y0: f64, size: f64) -> bool {
        let h = 0.5 * size;
        let d = [x0 + h - self.center[0], y0 + h - self.center[1]];
        let [c, s] = self.axis;
        // rectangle axes
        let ext_u = h * (c.abs() + s.abs());
        if (d[0] * c + d[1] * s).abs() >= self.half_length + ext_u {
            return false;
        }
        if (-d[0] * s + d[1] * c).abs() >= self.half_width + ext_u {
            return false;
        }
        // square axes
        let ext_x = self.half_length * c.abs() + self.half_width * s.abs();
        let ext_y = self.half_length * s.abs() + self.half_width * c.abs();
        d[0].abs() < h + ext_x && d[1].abs() < h + ext_y
    }
}

/// True iff the rectangle of half extents `(half_length, half_width)`
/// centered on `pose` leaves the map or overlaps an occupied cell.
pub(crate) fn rectangle_collides(
    grid: &OccupancyGrid,
    pose: &Pose2,
    half_length: f64,
    half_width: f64,
) -> bool {
    if !pose.is_finite() {
        return true;
    }
    let center = grid.to_local([pose.x, pose.y]);
    let heading = pose.theta - grid.origin.theta;
    let fp = Footprint {
        center,
        axis: [heading.cos(), heading.sin()],
        half_length,
        half_width,
    };
    let (w, h) = grid.size();
    let corners = fp.corners();
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in corners {
        if p[0] < 0.0 || p[1] < 0.0 || p[0] > w || p[1] > h {
            return true;
        }
        lo = [lo[0].min(p[0]), lo[1].min(p[1])];
        hi = [hi[0].max(p[0]), hi[1].max(p[1])];
    }
    let res = grid.resolution;
    let last = |v: f64, n: usize| (((v / res).ceil() as usize).max(1) - 1).min(n - 1);
    let ix0 = ((lo[0] / res).floor() as usize).min(grid.width - 1);
    let iy0 = ((lo[1] / res).floor() as usize).min(grid.height - 1);
    let ix1 = last(hi[0], grid.width).max(ix0);
    let iy1 = last(hi[1], grid.height).max(iy0);
    if grid.occupied_in(ix0, iy0, ix1, iy1) == 0 {
        return false;
    }
    for iy in iy0..=iy1 {
        for ix in ix0..=ix1 {
            if grid.is_occupied(ix, iy)
                && fp.overlaps_square(ix as f64 * res, iy as f64 * res, res)
            {
                return true;
            }
        }
    }
    false
}
