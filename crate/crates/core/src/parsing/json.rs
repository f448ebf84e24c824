use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

/// Coherent predictions must sum to one within this tolerance.
pub const COHERENCE_TOLERANCE: f64 = 1e-9;

/// A `{...}` span of a completion that parses as a JSON object.
#[derive(Debug, Clone, PartialEq)]
pub struct JsonBlock {
    pub byte_span: Range<usize>,
    /// Top-level fields holding JSON numbers.
    pub fields: BTreeMap<String, f64>,
}

impl JsonBlock {
    pub fn field(&self, name: &str) -> Option<f64> {
        self.fields.get(name).copied()
    }
}

/// Predicted choice proportions as fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParsedPrediction {
    pub o_a: f64,
    pub o_b: f64,
}

/// Result of reading a prediction out of a completion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PredictionOutcome {
    Coherent(ParsedPrediction),
    /// A prediction block exists but violates the bounds or the sum constraint.
    /// Values are fractions (percent / 100).
    Incoherent { o_a: f64, o_b: f64 },
    Missing,
}

impl PredictionOutcome {
    pub fn coherent(&self) -> Option<ParsedPrediction> {
        match self {
            Self::Coherent(p) => Some(*p),
            _ => None,
        }
    }

    pub fn is_coherent(&self) -> bool {
        matches!(self, Self::Coherent(_))
    }

    pub fn b_rate(&self) -> Option<f64> {
        self.coherent().map(|p| p.o_b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatFeatures {
    pub json_count: usize,
    pub prediction_after_reasoning: bool,
}

/// Byte index one past the `}` that closes the `{` at `start`, honoring JSON strings.
fn balanced_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (off, &b) in bytes[start..].iter().enumerate() {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(start + off + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// Every maximal `{...}` span that parses as a JSON object, in order.
///
/// A balanced span that fails to parse is skipped and scanning resumes just
/// inside it, so a valid object nested in prose braces is still found.
pub fn extract_json_blocks(text: &str) -> Vec<JsonBlock> {
    let bytes = text.as_bytes();
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            if let Some(end) = balanced_end(bytes, i) {
                if let Ok(serde_json::Value::Object(map)) =
                    serde_json::from_str::<serde_json::Value>(&text[i..end])
                {
                    let fields = map
                        .into_iter()
                        .filter_map(|(k, v)| v.as_f64().map(|n| (k, n)))
                        .collect();
                    blocks.push(JsonBlock { byte_span: i..end, fields });
                    i = end;
                    continue;
                }
            }
        }
        i += 1;
    }
    blocks
}

/// Read the prediction from the last block carrying numeric `option_A` and `option_B`.
pub fn parse_prediction(text: &str) -> PredictionOutcome {
    let Some((a, b)) = extract_json_blocks(text)
        .iter()
        .rev()
        .find_map(|blk| Some((blk.field("option_A")?, blk.field("option_B")?)))
    else {
        return PredictionOutcome::Missing;
    };
    let (o_a, o_b) = (a / 100.0, b / 100.0);
    let in_unit = |x: f64| (0.0..=1.0).contains(&x);
    if in_unit(o_a) && in_unit(o_b) && (o_a + o_b - 1.0).abs() <= COHERENCE_TOLERANCE {
        PredictionOutcome::Coherent(ParsedPrediction { o_a, o_b })
    } else {
        PredictionOutcome::Incoherent { o_a, o_b }
    }
}

/// Structural features scored by the format reward.
///
/// The positional bonus needs exactly one block with at least one
/// non-whitespace character before it.
pub fn format_features(text: &str) -> FormatFeatures {
    let blocks = extract_json_blocks(text);
    let prediction_after_reasoning = match blocks.as_slice() {
        [only] => !text[..only.byte_span.start].trim().is_empty(),
        _ => false,
    };
    FormatFeatures { json_count: blocks.len(), prediction_after_reasoning }
}

/// Remove the last JSON block, a code fence wrapped tightly around it, and trailing whitespace.
pub fn strip_final_json(text: &str) -> String {
    let Some(last) = extract_json_blocks(text).pop() else {
        return text.to_string();
    };
    let mut prefix = text[..last.byte_span.start].trim_end();
    let mut suffix = &text[last.byte_span.end..];
    let after = suffix.trim_start();
    if after.starts_with("```") {
        let fenced = ["```json", "```JSON", "```"].iter().find_map(|f| prefix.strip_suffix(f));
        if let Some(p) = fenced {
            prefix = p.trim_end();
            suffix = &after[3..];
        }
    }
    let mut out = String::with_capacity(prefix.len() + suffix.len());
    out.push_str(prefix);
    if !suffix.trim().is_empty() {
        out.push_str(suffix);
    }
    out.truncate(out.trim_end().len());
    out
}

/// Strip JSON blocks until none remain.
pub fn strip_all_json(text: &str) -> String {
    let mut current = text.to_string();
    loop {
        let next = strip_final_json(&current);
        if next == current {
            return current;
        }
        current = next;
    }
}
