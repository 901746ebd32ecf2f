//! Knowledge-state radar charts: rendering, recovery of the plotted vector
//! by color isolation and Canny edges, and an optional vision-model reader.
//!
//! Entries close to 0 put the vertex on the center and cannot be recovered
//! reliably; fidelity guarantees start at 0.05.

mod extract;
mod llm;
mod render;

use serde::{Deserialize, Serialize};

pub use extract::{
    batch_mae, extract_kstate_canny, green_mask, mae, ExtractionMethod, ExtractionResult, AXIS_TOLERANCE_DEG,
    AXIS_TOLERANCE_PX, CANNY_HIGH, CANNY_LOW, GREEN_MARGIN,
};
pub use llm::{
    build_request, extract_kstate_llm, parse_estimates, LlmEndpoint, PromptKind, ENV_API_KEY, ENV_MODEL, ENV_URL,
    IN_CONTEXT_EXAMPLE, PROMPT_GENERAL, PROMPT_IN_CONTEXT,
};
pub use render::{render_radar, RadarStyle};

use crate::error::Result;
use crate::numerics::{stream_id, Rng};

/// Smallest entry drawn by [`random_kstates`].
pub const MIN_RECOVERABLE: f64 = 0.05;

/// One row of the round-trip CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisRow {
    pub chart: usize,
    pub axis: usize,
    pub ground_truth: f64,
    pub estimate: f64,
    pub abs_error: f64,
}

/// `n` vectors of length `k` with entries uniform in `[0.05, 1]`.
pub fn random_kstates(n: usize, k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = Rng::new(seed, stream_id("radar"));
    (0..n)
        .map(|_| (0..k).map(|_| rng.uniform_range(MIN_RECOVERABLE, 1.0)).collect())
        .collect()
}

/// Renders and re-extracts each vector. Returns per-axis rows and the mean
/// of the per-chart MAEs.
pub fn roundtrip(kstates: &[Vec<f64>], style: &RadarStyle) -> Result<(Vec<AxisRow>, f64)> {
    use rayon::prelude::*;
    let results: Vec<Result<Vec<f64>>> = kstates
        .par_iter()
        .map(|ks| {
            let img = render_radar(ks, style)?;
            Ok(extract_kstate_canny(&img, ks.len(), style)?.estimates)
        })
        .collect();
    let mut rows = Vec::new();
    let mut pairs = Vec::new();
    for (chart, (ks, est)) in kstates.iter().zip(results).enumerate() {
        let est = est?;
        for (axis, (&g, &e)) in ks.iter().zip(&est).enumerate() {
            rows.push(AxisRow {
                chart,
                axis,
                ground_truth: g,
                estimate: e,
                abs_error: (e - g).abs(),
            });
        }
        pairs.push((est, ks.clone()));
    }
    let summary = batch_mae(&pairs)?;
    Ok((rows, summary))
}
