//! Next-token losses for supervised fine-tuning, with the bracketed-only
//! variant that trains on the behavioral numbers alone.

use serde::{Deserialize, Serialize};

use crate::dataset::{format_centaur_target, target_percent};
use crate::error::{Error, Result};
use crate::parsing::{centaur_mask, project_mask};
use crate::policy::{ProblemFeatures, TokenId, TokenSequence, ToyGrammar, ToyPolicyParams, END, STOP_THINKING};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    #[default]
    AllTokens,
    /// Only tokens overlapping `<< >>`-bracketed spans of the target text.
    BracketedOnly,
}

impl std::str::FromStr for MaskMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all_tokens" => Ok(Self::AllTokens),
            "bracketed_only" => Ok(Self::BracketedOnly),
            other => Err(Error::Parse(format!("unknown mask mode {other:?}"))),
        }
    }
}

/// Mean negative log-likelihood over the masked positions.
pub fn masked_nll(logprobs: &[f64], mask: &[bool]) -> Result<f64> {
    if logprobs.len() != mask.len() {
        return Err(Error::domain(format!(
            "mask has {} entries for {} tokens",
            mask.len(),
            logprobs.len()
        )));
    }
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(Error::domain("mask selects no tokens"));
    }
    Ok(-logprobs.iter().zip(mask).filter(|(_, &m)| m).map(|(lp, _)| lp).sum::<f64>() / n as f64)
}

/// Masked mean NLL of `tokens` under the toy policy and its gradient.
pub fn sft_loss(
    params: &ToyPolicyParams,
    features: &ProblemFeatures,
    tokens: &[TokenId],
    mask: &[bool],
) -> Result<(f64, Vec<f64>)> {
    let lp = params.sequence_logprobs(features, tokens)?;
    let loss = masked_nll(&lp, mask)?;
    let n = mask.iter().filter(|&&m| m).count() as f64;
    let coeff: Vec<f64> = mask.iter().map(|&m| if m { -1.0 / n } else { 0.0 }).collect();
    let mut grad = vec![0.0; params.n_params()];
    params.accumulate_weighted_gradient(features, tokens, &coeff, &mut grad)?;
    Ok((loss, grad))
}

/// The toy completion that states `b_rate` directly: stop thinking (when the
/// grammar allows thoughts), the digits of the rounded percentage, terminator.
pub fn sft_target(grammar: &ToyGrammar, b_rate: f64) -> Result<TokenSequence> {
    let b = target_percent(b_rate)?;
    let mut tokens = Vec::with_capacity(5);
    if grammar.max_thoughts > 0 {
        tokens.push(STOP_THINKING);
    }
    tokens.extend(b.to_string().bytes().map(|c| (c - b'0') as TokenId));
    tokens.push(END);
    Ok(TokenSequence::from_tokens(tokens))
}

/// Loss mask for a toy SFT target. The bracketed mode marks the tokens that
/// overlap the bracketed numbers of the Centaur-style target text.
pub fn sft_mask(target: &TokenSequence, b_rate: f64, mode: MaskMode) -> Result<Vec<bool>> {
    match mode {
        MaskMode::AllTokens => Ok(vec![true; target.len()]),
        MaskMode::BracketedOnly => {
            let marked = centaur_mask(&format_centaur_target(b_rate)?)?;
            if !target.text.ends_with(&marked.text) {
                return Err(Error::domain("bracketed target text does not match the token sequence"));
            }
            let offset = target.text.len() - marked.text.len();
            let spans: Vec<_> = marked.spans.iter().map(|s| s.start + offset..s.end + offset).collect();
            Ok(project_mask(&target.token_spans(), &spans))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_nll_is_log_k() {
        let k = 7.0f64;
        let lp = vec![-(k.ln()); 5];
        assert!((masked_nll(&lp, &[true; 5]).unwrap() - k.ln()).abs() < 1e-15);
    }

    #[test]
    fn only_masked_positions_count() {
        let lp: Vec<f64> = (1..=10).map(|i| -(i as f64) * 0.1).collect();
        let mut mask = vec![false; 10];
        mask[3] = true;
        mask[7] = true;
        assert!((masked_nll(&lp, &mask).unwrap() - (0.4 + 0.8) / 2.0).abs() < 1e-15);
        assert!(masked_nll(&lp, &[false; 10]).is_err());
        assert!(masked_nll(&lp, &[true; 3]).is_err());
    }

    #[test]
    fn bracketed_mask_selects_digits() {
        let g = ToyGrammar::default();
        let t = sft_target(&g, 0.7111).unwrap();
        assert_eq!(t.tokens, vec![STOP_THINKING, 7, 1, END]);
        assert_eq!(sft_mask(&t, 0.7111, MaskMode::BracketedOnly).unwrap(), vec![false, true, true, false]);
        assert_eq!(sft_mask(&t, 0.7111, MaskMode::AllTokens).unwrap(), vec![true; 4]);
        let hundred = sft_target(&ToyGrammar { max_thoughts: 0 }, 1.0).unwrap();
        assert_eq!(hundred.tokens, vec![1, 0, 0, END]);
        assert_eq!(sft_mask(&hundred, 1.0, MaskMode::BracketedOnly).unwrap(), vec![true, true, true, false]);
    }

    #[test]
    fn perfect_policy_has_zero_loss() {
        let g = ToyGrammar::default();
        let mut p = ToyPolicyParams::zeros(g, ProblemFeatures::DIM);
        let t = sft_target(&g, 0.0).unwrap();
        *p.weight_mut(0, 0, STOP_THINKING) = 60.0;
        *p.weight_mut(3, 0, 0) = 60.0;
        let f = ProblemFeatures(vec![1.0; ProblemFeatures::DIM]);
        let (loss, _) = sft_loss(&p, &f, &t.tokens, &[true; 3]).unwrap();
        assert!(loss < 1e-20);
    }
}
