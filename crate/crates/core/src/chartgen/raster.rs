use std::f64::consts::TAU;

use sha2::{Digest, Sha256};

use crate::geometry::{Keypoint, Shape, ShapeKind};

pub type Rgb = [u8; 3];

pub const WHITE: Rgb = [255, 255, 255];

/// Row-major RGB image, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl Raster {
    pub fn new(width: u32, height: u32, fill: Rgb) -> Self {
        let data = fill
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Self { width, height, data }
    }

    /// Wraps existing bytes; `None` when the length is not `width * height * 3`.
    pub fn from_bytes(width: u32, height: u32, data: Vec<u8>) -> Option<Self> {
        (data.len() == width as usize * height as usize * 3).then_some(Self { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> Rgb {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Paints a pixel; coordinates outside the canvas are ignored.
    pub fn put(&mut self, x: i64, y: i64, color: Rgb) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&color);
    }

    /// Hex SHA-256 of the pixel bytes.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(&self.data);
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Inclusive integer rectangle fill, clipped to the canvas.
    pub fn fill_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, color: Rgb) {
        for y in y0.max(0)..=y1.min(self.height as i64 - 1) {
            for x in x0.max(0)..=x1.min(self.width as i64 - 1) {
                self.put(x, y, color);
            }
        }
    }

    /// Bresenham segment, each pixel stamped as a `stroke x stroke` square.
    pub fn draw_segment(&mut self, from: (i64, i64), to: (i64, i64), stroke: u32, color: Rgb) {
        let stroke = stroke.max(1) as i64;
        let lo = -(stroke - 1) / 2;
        let hi = stroke / 2;
        for (x, y) in bresenham(from, to) {
            for dy in lo..=hi {
                for dx in lo..=hi {
                    self.put(x + dx, y + dy, color);
                }
            }
        }
    }

    /// Pixel column/row holding a normalized coordinate.
    pub fn to_pixel(&self, p: Keypoint) -> (i64, i64) {
        let px = ((p.x * self.width as f64).floor() as i64).clamp(0, self.width as i64 - 1);
        let py = ((p.y * self.height as f64).floor() as i64).clamp(0, self.height as i64 - 1);
        (px, py)
    }
}

/// Integer points of the Bresenham line from `a` to `b`, both inclusive.
pub fn bresenham(a: (i64, i64), b: (i64, i64)) -> Vec<(i64, i64)> {
    let (mut x, mut y) = a;
    let dx = (b.0 - a.0).abs();
    let dy = -(b.1 - a.1).abs();
    let sx = if a.0 < b.0 { 1 } else { -1 };
    let sy = if a.1 < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx - dy + 1) as usize);
    loop {
        out.push((x, y));
        if (x, y) == b {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}

/// Inclusive pixel span covered by the normalized interval `[lo, hi]` on an
/// axis of `size` pixels. Degenerate spans collapse to one pixel.
pub fn pixel_span(lo: f64, hi: f64, size: u32) -> (i64, i64) {
    let size = size as i64;
    let start = ((lo * size as f64).round() as i64).clamp(0, size - 1);
    let end = ((hi * size as f64).round() as i64 - 1).clamp(0, size - 1).max(start);
    (start, end)
}

/// Counterclockwise (on screen) angle of `p` around `c`, in pixel space.
fn screen_angle(c: (f64, f64), p: (f64, f64)) -> f64 {
    (-(p.1 - c.1)).atan2(p.0 - c.0)
}

/// Counterclockwise sweep in `[0, 2π)` from angle `from` to angle `to`.
pub fn ccw_sweep(from: f64, to: f64) -> f64 {
    (to - from).rem_euclid(TAU)
}

/// Geometry of a pie sector in pixel space.
#[derive(Debug, Clone, Copy)]
pub struct SectorGeometry {
    pub center: (f64, f64),
    pub radius: f64,
    pub start_angle: f64,
    pub sweep: f64,
}

impl SectorGeometry {
    pub fn from_shape(shape: &Shape, width: u32, height: u32) -> Option<Self> {
        let [c, s, e] = shape.keypoints.as_slice() else { return None };
        let to_px = |p: &Keypoint| (p.x * width as f64, p.y * height as f64);
        let (center, start, end) = (to_px(c), to_px(s), to_px(e));
        let radius = (start.0 - center.0).hypot(start.1 - center.1);
        let start_angle = screen_angle(center, start);
        let sweep = ccw_sweep(start_angle, screen_angle(center, end));
        Some(Self {
            center,
            radius,
            start_angle,
            sweep,
        })
    }

    /// Whether the pixel center `(x + 0.5, y + 0.5)` lies in the sector,
    /// with the angular interval half-open at the end edge.
    pub fn contains(&self, x: i64, y: i64, inner_radius: f64) -> bool {
        let p = (x as f64 + 0.5, y as f64 + 0.5);
        let d = (p.0 - self.center.0).hypot(p.1 - self.center.1);
        if d > self.radius || d < inner_radius {
            return false;
        }
        ccw_sweep(self.start_angle, screen_angle(self.center, p)) < self.sweep
    }
}

/// Paints `shape` onto `raster` in place. Pie sectors may leave a hole of
/// `inner_radius` pixels around the center.
pub fn paint_shape(raster: &mut Raster, shape: &Shape, color: Rgb, stroke_px: u32, inner_radius: f64) {
    match shape.kind {
        ShapeKind::Bar => {
            let [a, b] = shape.keypoints.as_slice() else { return };
            let (x0, x1) = pixel_span(a.x, b.x, raster.width);
            let (y0, y1) = pixel_span(a.y, b.y, raster.height);
            raster.fill_rect(x0, y0, x1, y1, color);
        }
        ShapeKind::Line => {
            for pair in shape.keypoints.windows(2) {
                let (from, to) = (raster.to_pixel(pair[0]), raster.to_pixel(pair[1]));
                raster.draw_segment(from, to, stroke_px, color);
            }
        }
        ShapeKind::Pie => {
            let Some(sector) = SectorGeometry::from_shape(shape, raster.width, raster.height) else {
                return;
            };
            let r = sector.radius.ceil() as i64 + 1;
            let (cx, cy) = (sector.center.0.floor() as i64, sector.center.1.floor() as i64);
            for y in cy - r..=cy + r {
                for x in cx - r..=cx + r {
                    if sector.contains(x, y, inner_radius) {
                        raster.put(x, y, color);
                    }
                }
            }
        }
        ShapeKind::NoObject => {}
    }
}

/// Pure form of [`paint_shape`] without a donut hole.
pub fn rasterize_shape(raster: &Raster, shape: &Shape, color: Rgb, stroke_px: u32) -> Raster {
    let mut out = raster.clone();
    paint_shape(&mut out, shape, color, stroke_px, 0.0);
    out
}
