use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Chart geometry and colors. Axis 0 points up; axes advance clockwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadarStyle {
    pub image_size: u32,
    pub ring_levels: Vec<f64>,
    pub polygon_color: [u8; 3],
    pub ring_color: [u8; 3],
    pub background: [u8; 3],
    /// Radius of the 1.0 ring in pixels.
    pub max_radius: f64,
    pub polygon_width: f64,
    pub ring_width: f64,
}

impl Default for RadarStyle {
    fn default() -> Self {
        Self::with_size(512)
    }
}

impl RadarStyle {
    pub fn with_size(image_size: u32) -> Self {
        Self {
            image_size,
            ring_levels: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            polygon_color: [0, 128, 0],
            ring_color: [160, 160, 160],
            background: [255, 255, 255],
            max_radius: 0.42 * f64::from(image_size),
            polygon_width: 3.0,
            ring_width: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let levels = &self.ring_levels;
        if levels.is_empty() || levels.windows(2).any(|w| w[0] >= w[1]) || levels.last() != Some(&1.0) {
            return Err(Error::Config(
                "ring levels must increase strictly and end at 1.0".into(),
            ));
        }
        if levels[0] <= 0.0 {
            return Err(Error::Config("ring levels must be positive".into()));
        }
        let room = f64::from(self.image_size) / 2.0 - self.polygon_width;
        if !(self.max_radius > 0.0 && self.max_radius <= room) {
            return Err(Error::Config(format!(
                "max_radius {} does not fit a {}px image",
                self.max_radius, self.image_size
            )));
        }
        if !(self.polygon_width >= 1.0 && self.ring_width >= 1.0) {
            return Err(Error::Config("stroke widths must be at least 1px".into()));
        }
        Ok(())
    }

    /// Pixel-space center; pixel `(x, y)` is sampled at its integer coordinates.
    pub fn center(&self) -> (f64, f64) {
        let c = (f64::from(self.image_size) - 1.0) / 2.0;
        (c, c)
    }

    /// Unit direction of axis `i` of `k` in image coordinates (y down).
    pub fn axis_direction(i: usize, k: usize) -> (f64, f64) {
        let theta = (-90.0 + 360.0 * i as f64 / k as f64).to_radians();
        (theta.cos(), theta.sin())
    }

    pub fn vertex(&self, i: usize, k: usize, value: f64) -> (f64, f64) {
        let (cx, cy) = self.center();
        let (dx, dy) = Self::axis_direction(i, k);
        let r = value * self.max_radius;
        (cx + r * dx, cy + r * dy)
    }
}

/// Paints every pixel within `width / 2` of segment `a`–`b`. No blending.
fn stroke_segment(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), width: f64, color: [u8; 3]) {
    let half = width / 2.0;
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x0 = (a.0.min(b.0) - half).floor().max(0.0) as i64;
    let x1 = ((a.0.max(b.0) + half).ceil() as i64).min(w - 1);
    let y0 = (a.1.min(b.1) - half).floor().max(0.0) as i64;
    let y1 = ((a.1.max(b.1) + half).ceil() as i64).min(h - 1);
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (px, py) = (x as f64 - a.0, y as f64 - a.1);
            let t = if len2 > 0.0 {
                ((px * vx + py * vy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (ex, ey) = (px - t * vx, py - t * vy);
            if ex * ex + ey * ey <= half * half {
                img.put_pixel(x as u32, y as u32, Rgb(color));
            }
        }
    }
}

fn stroke_polygon(img: &mut RgbImage, points: &[(f64, f64)], width: f64, color: [u8; 3]) {
    for i in 0..points.len() {
        stroke_segment(img, points[i], points[(i + 1) % points.len()], width, color);
    }
}

/// Draws the reference rings and spokes in the ring color, then the
/// knowledge-state polygon on top.
pub fn render_radar(kstate: &[f64], style: &RadarStyle) -> Result<RgbImage> {
    style.validate()?;
    let k = kstate.len();
    if k < 3 {
        return Err(Error::Validation(format!("radar chart needs at least 3 axes, got {k}")));
    }
    if kstate.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Validation("kstate entries must lie in [0, 1]".into()));
    }
    let mut img = RgbImage::from_pixel(style.image_size, style.image_size, Rgb(style.background));
    for &level in &style.ring_levels {
        let ring: Vec<_> = (0..k).map(|i| style.vertex(i, k, level)).collect();
        stroke_polygon(&mut img, &ring, style.ring_width, style.ring_color);
    }
    for i in 0..k {
        stroke_segment(
            &mut img,
            style.center(),
            style.vertex(i, k, 1.0),
            style.ring_width,
            style.ring_color,
        );
    }
    let poly: Vec<_> = (0..k).map(|i| style.vertex(i, k, kstate[i])).collect();
    stroke_polygon(&mut img, &poly, style.polygon_width, style.polygon_color);
    Ok(img)
}
