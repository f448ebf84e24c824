use std::ops::Range;

use crate::error::{Error, Result};

pub const OPEN: &str = "<<";
pub const CLOSE: &str = ">>";

/// Text with the `<<` `>>` delimiters removed, plus byte spans (into the clean
/// text) of the formerly bracketed content.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CentaurText {
    pub text: String,
    pub spans: Vec<Range<usize>>,
}

pub fn centaur_mask(bracketed: &str) -> Result<CentaurText> {
    let mut text = String::with_capacity(bracketed.len());
    let mut spans = Vec::new();
    let mut open_at: Option<usize> = None;
    let mut rest = bracketed;
    loop {
        let next_open = rest.find(OPEN);
        let next_close = rest.find(CLOSE);
        let (pos, is_open) = match (next_open, next_close) {
            (None, None) => break,
            (Some(o), None) => (o, true),
            (None, Some(c)) => (c, false),
            (Some(o), Some(c)) => {
                if o <= c {
                    (o, true)
                } else {
                    (c, false)
                }
            }
        };
        text.push_str(&rest[..pos]);
        rest = &rest[pos + 2..];
        match (is_open, open_at) {
            (true, None) => open_at = Some(text.len()),
            (true, Some(_)) => return Err(Error::Parse("nested `<<` delimiter".into())),
            (false, Some(start)) => {
                spans.push(start..text.len());
                open_at = None;
            }
            (false, None) => return Err(Error::Parse("`>>` without matching `<<`".into())),
        }
    }
    if open_at.is_some() {
        return Err(Error::Parse("unclosed `<<` delimiter".into()));
    }
    text.push_str(rest);
    Ok(CentaurText { text, spans })
}

/// Mark every token whose byte span overlaps a masked span. Zero-width tokens never overlap.
pub fn project_mask(token_spans: &[Range<usize>], mask_spans: &[Range<usize>]) -> Vec<bool> {
    token_spans
        .iter()
        .map(|t| t.start < t.end && mask_spans.iter().any(|m| t.start < m.end && m.start < t.end))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brackets_around_numbers() {
        let m = centaur_mask(r#"{"option_A": <<29>>, "option_B": <<71>>}"#).unwrap();
        assert_eq!(m.text, r#"{"option_A": 29, "option_B": 71}"#);
        let covered: Vec<&str> = m.spans.iter().map(|s| &m.text[s.clone()]).collect();
        assert_eq!(covered, ["29", "71"]);
    }

    #[test]
    fn identity_without_brackets() {
        let m = centaur_mask("plain text").unwrap();
        assert_eq!(m.text, "plain text");
        assert!(m.spans.is_empty());
    }

    #[test]
    fn lone_bracket_pair() {
        let m = centaur_mask("<<50>>").unwrap();
        assert_eq!(m.text, "50");
        assert_eq!(m.spans, vec![0..2]);
    }

    #[test]
    fn unbalanced_delimiters() {
        assert!(centaur_mask("<<29").is_err());
        assert!(centaur_mask("29>>").is_err());
        assert!(centaur_mask("<<a <<b>> >>").is_err());
    }

    #[test]
    fn projection_by_overlap() {
        let spans = [0..2, 2..3, 3..3, 5..9];
        assert_eq!(project_mask(&spans, &[1..4]), vec![true, true, false, false]);
        assert_eq!(project_mask(&spans, &[]), vec![false; 4]);
    }
}
