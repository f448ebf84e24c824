use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BehavioralTarget, ChoiceProblem, DatasetSplit, Gamble, TargetSource};
use crate::error::{Error, Result};

/// One line of a problems file: the problem plus an optional target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemRecord {
    pub id: String,
    pub option_a: Gamble,
    pub option_b: Gamble,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<TargetSource>,
}

impl ProblemRecord {
    pub fn new(problem: &ChoiceProblem, target: Option<&BehavioralTarget>) -> Self {
        Self {
            id: problem.id.clone(),
            option_a: problem.option_a.clone(),
            option_b: problem.option_b.clone(),
            b_rate: target.map(|t| t.b_rate),
            source: target.map(|t| t.source),
        }
    }

    pub fn problem(&self) -> ChoiceProblem {
        ChoiceProblem::new(self.id.clone(), self.option_a.clone(), self.option_b.clone())
    }

    pub fn target(&self) -> Result<Option<BehavioralTarget>> {
        match self.b_rate {
            None => Ok(None),
            Some(rate) => BehavioralTarget::new(
                self.id.clone(),
                rate,
                self.source.unwrap_or(TargetSource::Human),
            )
            .map(Some),
        }
    }
}

pub fn write_problems_jsonl(path: impl AsRef<Path>, records: &[ProblemRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_problems_jsonl(path: impl AsRef<Path>) -> Result<Vec<ProblemRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ProblemRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("problems line {}: {e}", lineno + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_split(path: impl AsRef<Path>, split: &DatasetSplit) -> Result<()> {
    let text = serde_json::to_string_pretty(split)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_split(path: impl AsRef<Path>) -> Result<DatasetSplit> {
    let split: DatasetSplit = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if !split.train_ids.is_disjoint(&split.test_ids) {
        return Err(Error::Parse("split file has ids on both sides".into()));
    }
    Ok(split)
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn dataset_hash(path: impl AsRef<Path>) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        let p = ChoiceProblem::new(
            "q1",
            Gamble::from_pairs(&[(0.9, 25.0), (0.1, 92.0)]).unwrap(),
            Gamble::certain(27.0),
        );
        let t = BehavioralTarget::new("q1", 0.29, TargetSource::Human).unwrap();
        let recs = vec![ProblemRecord::new(&p, Some(&t)), ProblemRecord::new(&p, None)];
        write_problems_jsonl(&path, &recs).unwrap();
        let back = read_problems_jsonl(&path).unwrap();
        assert_eq!(back, recs);
        assert_eq!(back[0].target().unwrap(), Some(t));
        assert_eq!(back[1].target().unwrap(), None);
        assert_eq!(dataset_hash(&path).unwrap().len(), 64);
    }

    #[test]
    fn line_format() {
        let p = ChoiceProblem::new("x", Gamble::certain(1.0), Gamble::certain(0.0));
        let t = BehavioralTarget::new("x", 1.0, TargetSource::Ev).unwrap();
        let line = serde_json::to_string(&ProblemRecord::new(&p, Some(&t))).unwrap();
        assert_eq!(
            line,
            r#"{"id":"x","option_a":[{"p":1.0,"v":1.0}],"option_b":[{"p":1.0,"v":0.0}],"b_rate":1.0,"source":"ev"}"#
        );
    }

    #[test]
    fn bad_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"id\":\"a\",\"option_a\":[{\"p\":0.3,\"v\":1}],\"option_b\":[]}\n").unwrap();
        let err = read_problems_jsonl(&path).unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }
}
