use image::{GrayImage, Luma, RgbImage};
use imageproc::edges::canny;
use serde::{Deserialize, Serialize};

use super::render::RadarStyle;
use crate::error::{Error, Result};

/// Canny hysteresis thresholds on the 8-bit gradient magnitude.
pub const CANNY_LOW: f32 = 50.0;
pub const CANNY_HIGH: f32 = 150.0;
/// Angular half-width of the cone searched around each axis.
pub const AXIS_TOLERANCE_DEG: f64 = 2.0;
/// Near the center the angular cone is narrower than a pixel; pixels this
/// close to the axis ray are accepted regardless of angle.
pub const AXIS_TOLERANCE_PX: f64 = 1.0;
/// Channel margin for the green-dominance mask.
pub const GREEN_MARGIN: i16 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractionMethod {
    Canny,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub estimates: Vec<f64>,
    /// Edge pixels found in each axis cone; 0 means the estimate was
    /// interpolated from neighbouring axes.
    pub per_axis_confidence: Vec<usize>,
    pub flagged: Vec<bool>,
    pub method: ExtractionMethod,
}

/// 255 where green dominates red and blue by more than the margin.
pub fn green_mask(image: &RgbImage) -> GrayImage {
    GrayImage::from_fn(image.width(), image.height(), |x, y| {
        let [r, g, b] = image.get_pixel(x, y).0.map(i16::from);
        if g > r + GREEN_MARGIN && g > b + GREEN_MARGIN {
            Luma([255])
        } else {
            Luma([0])
        }
    })
}

/// Recovers the knowledge state from a chart drawn in `style`: isolate the
/// polygon by color, run Canny, and take the farthest edge pixel along
/// each axis as that vertex's radius.
pub fn extract_kstate_canny(image: &RgbImage, k: usize, style: &RadarStyle) -> Result<ExtractionResult> {
    style.validate()?;
    if k < 3 {
        return Err(Error::Validation(format!("radar chart needs at least 3 axes, got {k}")));
    }
    let edges = canny(&green_mask(image), CANNY_LOW, CANNY_HIGH);
    let (cx, cy) = style.center();
    let dirs: Vec<(f64, f64)> = (0..k).map(|i| RadarStyle::axis_direction(i, k)).collect();
    let cos_tol = AXIS_TOLERANCE_DEG.to_radians().cos();

    let mut far = vec![f64::NEG_INFINITY; k];
    let mut hits = vec![0usize; k];
    for (x, y, px) in edges.enumerate_pixels() {
        if px.0[0] == 0 {
            continue;
        }
        let (vx, vy) = (f64::from(x) - cx, f64::from(y) - cy);
        let dist = vx.hypot(vy);
        if dist == 0.0 {
            continue;
        }
        for (i, &(dx, dy)) in dirs.iter().enumerate() {
            let along = vx * dx + vy * dy;
            if along <= 0.0 {
                continue;
            }
            let across = (vx * dy - vy * dx).abs();
            if along >= cos_tol * dist || across <= AXIS_TOLERANCE_PX {
                hits[i] += 1;
                far[i] = far[i].max(dist);
            }
        }
    }
    if hits.iter().all(|&h| h == 0) {
        return Err(Error::Extraction("no polygon edges found on any axis".into()));
    }

    // edges sit on the outer boundary of the stroke
    let offset = style.polygon_width / 2.0;
    let mut estimates: Vec<f64> = far
        .iter()
        .zip(&hits)
        .map(|(&d, &h)| {
            if h == 0 {
                f64::NAN
            } else {
                ((d - offset) / style.max_radius).clamp(0.0, 1.0)
            }
        })
        .collect();
    let flagged: Vec<bool> = hits.iter().map(|&h| h == 0).collect();
    interpolate_flagged(&mut estimates, &flagged);
    Ok(ExtractionResult {
        estimates,
        per_axis_confidence: hits,
        flagged,
        method: ExtractionMethod::Canny,
    })
}

/// Fills flagged axes by linear interpolation between the nearest unflagged
/// neighbours, going around the chart. Needs at least one unflagged axis.
fn interpolate_flagged(values: &mut [f64], flagged: &[bool]) {
    let k = values.len();
    for i in 0..k {
        if !flagged[i] {
            continue;
        }
        let prev = (1..k).find(|s| !flagged[(i + k - s) % k]).expect("one axis unflagged");
        let next = (1..k).find(|s| !flagged[(i + s) % k]).expect("one axis unflagged");
        let a = values[(i + k - prev) % k];
        let b = values[(i + next) % k];
        let t = prev as f64 / (prev + next) as f64;
        values[i] = a + t * (b - a);
    }
}

/// Mean absolute error between two equally long vectors.
pub fn mae(estimates: &[f64], truth: &[f64]) -> Result<f64> {
    if estimates.len() != truth.len() {
        return Err(Error::Validation(format!(
            "mae of vectors with lengths {} and {}",
            estimates.len(),
            truth.len()
        )));
    }
    if estimates.is_empty() {
        return Err(Error::Validation("mae of empty vectors".into()));
    }
    Ok(estimates.iter().zip(truth).map(|(e, g)| (e - g).abs()).sum::<f64>() / estimates.len() as f64)
}

/// Mean of per-chart MAEs.
pub fn batch_mae(pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Validation("batch mae over no charts".into()));
    }
    let mut total = 0.0;
    for (e, g) in pairs {
        total += mae(e, g)?;
    }
    Ok(total / pairs.len() as f64)
}
