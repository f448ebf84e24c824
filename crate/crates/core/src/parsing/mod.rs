//! Reading structure out of model completions.

mod centaur;
mod json;
mod thoughts;

pub use centaur::{centaur_mask, project_mask, CentaurText};
pub use json::{
    extract_json_blocks, format_features, parse_prediction, strip_all_json, strip_final_json,
    FormatFeatures, JsonBlock, ParsedPrediction, PredictionOutcome, COHERENCE_TOLERANCE,
};
pub use thoughts::{segment_thoughts, Thought};

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One stored completion, as written to completion JSON Lines files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub problem_id: String,
    pub checkpoint: String,
    pub text: String,
    pub o_a: Option<f64>,
    pub o_b: Option<f64>,
    pub coherent: bool,
    #[serde(default)]
    pub thoughts: Vec<String>,
}

impl CompletionRecord {
    /// Parse the prediction and segment the reasoning (with the final JSON stripped).
    pub fn from_text(problem_id: impl Into<String>, checkpoint: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let (o_a, o_b, coherent) = match parse_prediction(&text) {
            PredictionOutcome::Coherent(p) => (Some(p.o_a), Some(p.o_b), true),
            PredictionOutcome::Incoherent { o_a, o_b } => (Some(o_a), Some(o_b), false),
            PredictionOutcome::Missing => (None, None, false),
        };
        let cot = strip_final_json(&text);
        let thoughts = if cot.trim().is_empty() {
            Vec::new()
        } else {
            segment_thoughts(&cot).into_iter().map(|t| t.body().to_string()).collect()
        };
        Self { problem_id: problem_id.into(), checkpoint: checkpoint.into(), text, o_a, o_b, coherent, thoughts }
    }

    pub fn prediction(&self) -> PredictionOutcome {
        match (self.coherent, self.o_a, self.o_b) {
            (true, Some(o_a), Some(o_b)) => PredictionOutcome::Coherent(ParsedPrediction { o_a, o_b }),
            (false, Some(o_a), Some(o_b)) => PredictionOutcome::Incoherent { o_a, o_b },
            _ => PredictionOutcome::Missing,
        }
    }

    /// The reasoning without the final JSON prediction.
    pub fn cot(&self) -> String {
        strip_final_json(&self.text)
    }
}

pub fn write_completions_jsonl(path: impl AsRef<Path>, records: &[CompletionRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_completions_jsonl(path: impl AsRef<Path>) -> Result<Vec<CompletionRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Parse(format!("completions line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_from_text() {
        let r = CompletionRecord::from_text("q", "step-10", "1. EV\n2. Risk\n{\"option_A\": 29, \"option_B\": 71}");
        assert!(r.coherent);
        assert_eq!(r.o_b, Some(0.71));
        assert_eq!(r.thoughts, ["1. EV", "2. Risk"]);
        assert_eq!(r.cot(), "1. EV\n2. Risk");
        assert_eq!(r.prediction().b_rate(), Some(0.71));

        let missing = CompletionRecord::from_text("q", "0", "{\"option_A\": 29, \"option_B\": 71}");
        assert!(missing.thoughts.is_empty());
        let bad = CompletionRecord::from_text("q", "0", "x {\"option_A\": 60, \"option_B\": 60}");
        assert!(matches!(bad.prediction(), PredictionOutcome::Incoherent { .. }));
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let recs = vec![
            CompletionRecord::from_text("a", "0", "none"),
            CompletionRecord::from_text("b", "0", "r {\"option_A\": 50, \"option_B\": 50}"),
        ];
        write_completions_jsonl(&path, &recs).unwrap();
        assert_eq!(read_completions_jsonl(&path).unwrap(), recs);
    }
}
