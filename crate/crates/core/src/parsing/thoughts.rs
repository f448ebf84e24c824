//! Splitting a chain of thought into itemized segments ("thoughts").
//!
//! Recognized line-start markers: Markdown headings (`### Risk`), numbered
//! items (`1.` / `2)`), bold section headers (`**Expected Value**`) and bullets
//! (`-`, `*`, `+`, `•`). Only one level splits: the least indented marker
//! lines, of the same kind as the first such line. Deeper or differently
//! marked lines (sub-bullets under numbered items) stay inside their section.
//! Text before the first split point joins the first thought, so the thoughts
//! always partition the input.

use std::ops::Range;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thought {
    pub index: usize,
    pub text: String,
    pub span: Range<usize>,
}

impl Thought {
    /// Segment contents without surrounding whitespace.
    pub fn body(&self) -> &str {
        self.text.trim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MarkerKind {
    Heading,
    Numbered,
    Bold,
    Bullet,
}

fn marker_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?m)^(?P<indent>[ \t]*)(?:(?P<heading>#{1,6}[ \t]+\S)|(?P<num>\d{1,3}[.)][ \t]+\S)|(?P<bold>\*\*[^*\n]+\*\*)|(?P<bullet>[-*+•][ \t]+\S))",
        )
        .expect("static regex")
    })
}

fn indent_width(s: &str) -> usize {
    s.chars().map(|c| if c == '\t' { 4 } else { 1 }).sum()
}

pub fn segment_thoughts(cot: &str) -> Vec<Thought> {
    let markers: Vec<(usize, usize, MarkerKind)> = marker_regex()
        .captures_iter(cot)
        .map(|c| {
            let start = c.get(0).expect("whole match").start();
            let indent = indent_width(&c["indent"]);
            let kind = if c.name("heading").is_some() {
                MarkerKind::Heading
            } else if c.name("num").is_some() {
                MarkerKind::Numbered
            } else if c.name("bold").is_some() {
                MarkerKind::Bold
            } else {
                MarkerKind::Bullet
            };
            (start, indent, kind)
        })
        .collect();

    let mut cuts: Vec<usize> = Vec::new();
    if let Some(min_indent) = markers.iter().map(|m| m.1).min() {
        let level_kind = markers.iter().find(|m| m.1 == min_indent).map(|m| m.2);
        cuts = markers
            .iter()
            .filter(|m| m.1 == min_indent && Some(m.2) == level_kind)
            .map(|m| m.0)
            .collect();
    }
    // The preamble merges into the first item.
    if cuts.is_empty() {
        cuts.push(0);
    } else {
        cuts[0] = 0;
    }
    cuts.push(cot.len());
    cuts.windows(2)
        .enumerate()
        .map(|(index, w)| Thought { index, text: cot[w[0]..w[1]].to_string(), span: w[0]..w[1] })
        .collect()
}
