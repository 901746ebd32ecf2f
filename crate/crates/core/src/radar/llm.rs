use std::io::Cursor;
use std::time::Duration;

use base64::Engine;
use image::{ImageFormat, RgbImage};
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::extract::{ExtractionMethod, ExtractionResult};
use super::render::{render_radar, RadarStyle};
use crate::error::{Error, Result};

pub const PROMPT_GENERAL: &str = include_str!("../../assets/prompt_general.txt");
pub const PROMPT_IN_CONTEXT: &str = include_str!("../../assets/prompt_in_context.txt");

/// The worked example the in-context prompt describes, in axis order.
pub const IN_CONTEXT_EXAMPLE: [f64; 5] = [0.65, 0.40, 0.79, 0.92, 0.83];

pub const ENV_URL: &str = "CDAUDIT_LLM_URL";
pub const ENV_MODEL: &str = "CDAUDIT_LLM_MODEL";
pub const ENV_API_KEY: &str = "CDAUDIT_LLM_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptKind {
    General,
    InContext,
}

/// An OpenAI-compatible chat-completions endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct LlmEndpoint {
    /// Full URL of the chat completions route.
    pub url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl LlmEndpoint {
    pub fn from_env() -> Result<Self> {
        let get = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        let url = get(ENV_URL).ok_or_else(|| Error::Config(format!("{ENV_URL} is not set")))?;
        let model = get(ENV_MODEL).ok_or_else(|| Error::Config(format!("{ENV_MODEL} is not set")))?;
        Ok(Self {
            url,
            model,
            api_key: get(ENV_API_KEY),
            timeout: Duration::from_secs(60),
        })
    }
}

fn png_data_url(image: &RgbImage) -> Result<String> {
    let mut buf = Cursor::new(Vec::new());
    image.write_to(&mut buf, ImageFormat::Png)?;
    let b64 = base64::engine::general_purpose::STANDARD.encode(buf.into_inner());
    Ok(format!("data:image/png;base64,{b64}"))
}

fn image_part(image: &RgbImage) -> Result<Value> {
    Ok(json!({"type": "image_url", "image_url": {"url": png_data_url(image)?}}))
}

/// Chat request body. The in-context variant shows the worked example
/// chart first and the chart under study second.
pub fn build_request(image: &RgbImage, k: usize, kind: PromptKind, model: &str, style: &RadarStyle) -> Result<Value> {
    let reply_format = format!(
        "Reply with exactly {k} numbers between 0 and 1, one per concept in clockwise order starting from the top axis."
    );
    let content = match kind {
        PromptKind::General => vec![
            json!({"type": "text", "text": PROMPT_GENERAL}),
            image_part(image)?,
            json!({"type": "text", "text": reply_format}),
        ],
        PromptKind::InContext => {
            let example = render_radar(&IN_CONTEXT_EXAMPLE, style)?;
            vec![
                json!({"type": "text", "text": PROMPT_IN_CONTEXT}),
                image_part(&example)?,
                image_part(image)?,
                json!({"type": "text", "text": reply_format}),
            ]
        }
    };
    Ok(json!({
        "model": model,
        "temperature": 0,
        "messages": [{"role": "user", "content": content}],
    }))
}

/// Pulls `k` values out of free text. Decimal literals are preferred so
/// that labels such as "c1" or "Concept 2" are not read as values.
pub fn parse_estimates(text: &str, k: usize) -> Result<Vec<f64>> {
    let decimals = Regex::new(r"\d*\.\d+").expect("valid regex");
    let integers = Regex::new(r"\d+(?:\.\d+)?").expect("valid regex");
    let pick = |re: &Regex| -> Vec<f64> { re.find_iter(text).filter_map(|m| m.as_str().parse().ok()).collect() };
    let mut values = pick(&decimals);
    if values.len() < k {
        values = pick(&integers)
            .into_iter()
            .filter(|v| (0.0..=1.0).contains(v))
            .collect();
    }
    if values.len() < k {
        return Err(Error::Extraction(format!(
            "reply contains {} usable numbers, expected {k}",
            values.len()
        )));
    }
    values.truncate(k);
    Ok(values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

/// Asks a vision model to read the chart. Network and parse failures are
/// errors; there is no fallback to edge detection.
pub fn extract_kstate_llm(
    image: &RgbImage,
    k: usize,
    kind: PromptKind,
    endpoint: &LlmEndpoint,
    style: &RadarStyle,
) -> Result<ExtractionResult> {
    if k < 3 {
        return Err(Error::Validation(format!("radar chart needs at least 3 axes, got {k}")));
    }
    let body = build_request(image, k, kind, &endpoint.model, style)?;
    let client = reqwest::blocking::Client::builder()
        .timeout(endpoint.timeout)
        .build()
        .map_err(|e| Error::Transport(e.to_string()))?;
    let mut req = client.post(&endpoint.url).json(&body);
    if let Some(key) = &endpoint.api_key {
        req = req.bearer_auth(key);
    }
    let resp = req.send().map_err(|e| Error::Transport(e.to_string()))?;
    let status = resp.status();
    let text = resp.text().map_err(|e| Error::Transport(e.to_string()))?;
    if !status.is_success() {
        return Err(Error::Transport(format!("endpoint returned {status}: {text}")));
    }
    let reply: Value = serde_json::from_str(&text)?;
    let content = reply["choices"][0]["message"]["content"]
        .as_str()
        .ok_or_else(|| Error::Extraction("reply has no message content".into()))?;
    let estimates = parse_estimates(content, k)?;
    Ok(ExtractionResult {
        estimates,
        per_axis_confidence: vec![1; k],
        flagged: vec![false; k],
        method: ExtractionMethod::Llm,
    })
}
