//! Token vocabulary and the completion grammar of the toy policy.
//!
//! A completion is zero to `max_thoughts` thought markers (optionally closed by
//! a stop token), then the option-B percentage as 1-3 digit tokens, then a
//! terminator. Leading zeros are not allowed and the value never exceeds 100,
//! so some positions have a single legal token; those are emitted with
//! log-probability 0.

use std::ops::Range;

use serde::{Deserialize, Serialize};

pub type TokenId = usize;

pub const N_DIGITS: usize = 10;
pub const END: TokenId = 10;
pub const STOP_THINKING: TokenId = 11;
pub const FIRST_MARKER: TokenId = 12;

pub const THOUGHT_MARKERS: [&str; 4] = [
    "Compute the expected value of each option.",
    "Compare the expected values of the two options.",
    "Consider how risk averse people are.",
    "Consider psychological biases such as loss aversion.",
];

pub const VOCAB_SIZE: usize = FIRST_MARKER + THOUGHT_MARKERS.len();

/// Number of digit positions that can carry a choice.
pub(crate) const DIGIT_SLOTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyGrammar {
    pub max_thoughts: usize,
}

impl Default for ToyGrammar {
    fn default() -> Self {
        Self { max_thoughts: 3 }
    }
}

/// What the grammar allows at the next position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Step {
    /// A sampled position: weight slot and the legal tokens there.
    Choice { slot: usize, legal: Vec<TokenId> },
    Forced(TokenId),
    Done,
}

impl ToyGrammar {
    pub fn n_slots(&self) -> usize {
        self.max_thoughts + DIGIT_SLOTS
    }

    /// Legal continuation after `prefix`, which must itself be grammatical.
    pub(crate) fn step(&self, prefix: &[TokenId]) -> Step {
        let mut thoughts = 0;
        let mut thinking_open = self.max_thoughts > 0;
        let mut digits: Vec<TokenId> = Vec::with_capacity(3);
        for &t in prefix {
            match t {
                STOP_THINKING => thinking_open = false,
                END => return Step::Done,
                d if d < N_DIGITS => digits.push(d),
                _ => {
                    thoughts += 1;
                    if thoughts == self.max_thoughts {
                        thinking_open = false;
                    }
                }
            }
        }
        if thinking_open {
            let mut legal: Vec<TokenId> = (FIRST_MARKER..VOCAB_SIZE).collect();
            legal.push(STOP_THINKING);
            return Step::Choice { slot: thoughts, legal };
        }
        let digit_slot = |d: usize| self.max_thoughts + d;
        match digits.as_slice() {
            [] => Step::Choice { slot: digit_slot(0), legal: (0..N_DIGITS).collect() },
            [0] => Step::Forced(END),
            [_] => {
                let mut legal: Vec<TokenId> = (0..N_DIGITS).collect();
                legal.push(END);
                Step::Choice { slot: digit_slot(1), legal }
            }
            [1, 0] => Step::Choice { slot: digit_slot(2), legal: vec![0, END] },
            _ => Step::Forced(END),
        }
    }
}

/// Generated tokens together with their text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<TokenId>,
    pub text: String,
}

impl TokenSequence {
    pub fn from_tokens(tokens: Vec<TokenId>) -> Self {
        let (text, _) = detokenize_with_spans(&tokens);
        Self { tokens, text }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Byte span of each token in `text`; stop tokens are zero-width.
    pub fn token_spans(&self) -> Vec<Range<usize>> {
        detokenize_with_spans(&self.tokens).1
    }

    /// The predicted option-B percentage, once the terminator has been emitted.
    pub fn option_b(&self) -> Option<u32> {
        if !self.tokens.contains(&END) {
            return None;
        }
        let digits: String = self
            .tokens
            .iter()
            .filter(|&&t| t < N_DIGITS)
            .map(|&t| char::from(b'0' + t as u8))
            .collect();
        digits.parse().ok()
    }
}

pub fn detokenize(tokens: &[TokenId]) -> String {
    detokenize_with_spans(tokens).0
}

/// Render tokens as completion text. Thoughts become numbered lines; digits
/// followed by the terminator become the JSON prediction with option A as
/// the complement. Without a terminator the digits are rendered bare.
pub fn detokenize_with_spans(tokens: &[TokenId]) -> (String, Vec<Range<usize>>) {
    let mut text = String::new();
    let mut spans = Vec::with_capacity(tokens.len());
    let digits: Vec<TokenId> = tokens.iter().copied().filter(|&t| t < N_DIGITS).collect();
    let terminated = tokens.contains(&END);
    let mut thought_no = 0;
    let mut json_open = false;
    for &t in tokens {
        let start = text.len();
        match t {
            STOP_THINKING => {}
            END => {
                if !json_open {
                    // terminator with no digits: still close an (empty) object
                    text.push_str("{\"option_B\": ");
                }
                text.push('}');
            }
            d if d < N_DIGITS => {
                if terminated && !json_open {
                    let b: u32 = digits
                        .iter()
                        .map(|&d| char::from(b'0' + d as u8))
                        .collect::<String>()
                        .parse()
                        .unwrap_or(0);
                    let a = 100i64 - i64::from(b);
                    text.push_str(&format!("{{\"option_A\": {a}, \"option_B\": "));
                    json_open = true;
                }
                let digit_start = text.len();
                text.push(char::from(b'0' + d as u8));
                spans.push(digit_start..text.len());
                continue;
            }
            m => {
                thought_no += 1;
                let idx = m - FIRST_MARKER;
                let label = THOUGHT_MARKERS.get(idx).copied().unwrap_or("?");
                text.push_str(&format!("{thought_no}. {label}\n"));
            }
        }
        spans.push(start..text.len());
    }
    (text, spans)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parsing::{format_features, parse_prediction};

    #[test]
    fn grammar_positions() {
        let g = ToyGrammar::default();
        assert!(matches!(g.step(&[]), Step::Choice { slot: 0, .. }));
        assert!(matches!(g.step(&[FIRST_MARKER]), Step::Choice { slot: 1, .. }));
        let three = [FIRST_MARKER, FIRST_MARKER + 1, FIRST_MARKER + 2];
        assert!(matches!(g.step(&three), Step::Choice { slot: 3, .. }));
        assert!(matches!(g.step(&[STOP_THINKING]), Step::Choice { slot: 3, .. }));
        assert_eq!(g.step(&[STOP_THINKING, 0]), Step::Forced(END));
        assert!(matches!(g.step(&[STOP_THINKING, 7]), Step::Choice { slot: 4, .. }));
        assert_eq!(g.step(&[STOP_THINKING, 7, 1]), Step::Forced(END));
        assert_eq!(g.step(&[STOP_THINKING, 1, 0]), Step::Choice { slot: 5, legal: vec![0, END] });
        assert_eq!(g.step(&[STOP_THINKING, 1, 0, 0]), Step::Forced(END));
        assert_eq!(g.step(&[STOP_THINKING, 1, END]), Step::Done);
        let none = ToyGrammar { max_thoughts: 0 };
        assert!(matches!(none.step(&[]), Step::Choice { slot: 0, .. }));
    }

    #[test]
    fn detokenized_prediction() {
        let seq = TokenSequence::from_tokens(vec![FIRST_MARKER, STOP_THINKING, 7, 1, END]);
        assert_eq!(seq.text, "1. Compute the expected value of each option.\n{\"option_A\": 29, \"option_B\": 71}");
        assert_eq!(parse_prediction(&seq.text).b_rate(), Some(0.71));
        assert!(format_features(&seq.text).prediction_after_reasoning);
        assert_eq!(seq.option_b(), Some(71));
        let spans = seq.token_spans();
        assert_eq!(&seq.text[spans[2].clone()], "7");
        assert_eq!(&seq.text[spans[3].clone()], "1");
        assert_eq!(&seq.text[spans[4].clone()], "}");
        assert!(spans[1].is_empty());
    }

    #[test]
    fn truncated_sequence_has_no_prediction() {
        let seq = TokenSequence::from_tokens(vec![STOP_THINKING, 4, 2]);
        assert_eq!(seq.option_b(), None);
        assert_eq!(parse_prediction(&seq.text), crate::parsing::PredictionOutcome::Missing);
    }

    #[test]
    fn hundred_and_zero() {
        let hundred = TokenSequence::from_tokens(vec![STOP_THINKING, 1, 0, 0, END]);
        assert_eq!(hundred.text, "{\"option_A\": 0, \"option_B\": 100}");
        let zero = TokenSequence::from_tokens(vec![STOP_THINKING, 0, END]);
        assert_eq!(parse_prediction(&zero.text).b_rate(), Some(0.0));
    }
}
