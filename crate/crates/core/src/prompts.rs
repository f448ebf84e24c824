//! Prompt texts sent to language models.

use crate::dataset::{render_problem, ChoiceProblem};

/// Instruction for models that answer with the JSON estimate only (SFT and Centaur-style).
pub const SFT_PROMPT: &str = "You are a knowledgeable and insightful psychological theorist, skilled in analyzing human behavior, cognition, and decision-making. You will be shown two options, A and B. Your task is to estimate the proportion of people who will choose each option. Please only provide your final estimates in JSON format, ensuring that: \"option_A\" represents the percentage of people choosing Option A; \"option_B\" represents the percentage of people choosing Option B; The values must be numbers between 0 and 100 (inclusive); The sum of \"option_A\" and \"option_B\" must equal 100.";

/// Instruction for reasoning models: step-by-step explanation, then the JSON estimate.
pub const RL_PROMPT: &str = "You are a knowledgeable and insightful psychological theorist, skilled in analyzing human behavior, cognition, and decision-making. You will be shown two options, A and B. Your task is to estimate the proportion of people who will choose each option. First, explain your reasoning step by step. Then, provide your final estimates in JSON format, ensuring that: \"option_A\" represents the percentage of people choosing Option A; \"option_B\" represents the percentage of people choosing Option B; The values must be numbers between 0 and 100 (inclusive); The sum of \"option_A\" and \"option_B\" must equal 100.";

pub const JUDGE_SYSTEM_PROMPT: &str = "You are an expert in judgment and decision-making.";

pub const JUDGE_USER_PROMPT: &str = "As an expert in judgment and decision-making, please evaluate the reasoning and prediction of the following question. Provide a single integer score from 0 to 100 based on the quality of the completion.";

pub const TAGGER_PROMPT: &str = "Read the following thought atom and return a JSON list of standard psychological effects or cognitive biases that are present.\nUse only the most relevant terms from established psychological concepts (e.g., \"Expected Value\", \"Loss Aversion\", \"Risk Aversion\", etc.). Return only a JSON list like [\"Effect1\", \"Effect2\", ...]. No explanation or extra text.";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptStyle {
    /// Direct JSON answer.
    Direct,
    /// Reasoning before the JSON answer.
    Reasoning,
}

/// User message for one problem: instruction, blank line, rendered options.
pub fn user_prompt(style: PromptStyle, problem: &ChoiceProblem) -> String {
    let instruction = match style {
        PromptStyle::Direct => SFT_PROMPT,
        PromptStyle::Reasoning => RL_PROMPT,
    };
    format!("{instruction}\n\n{}", render_problem(problem))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Gamble;

    #[test]
    fn prompt_layout() {
        let p = ChoiceProblem::new("x", Gamble::certain(1.0), Gamble::certain(2.0));
        let text = user_prompt(PromptStyle::Reasoning, &p);
        assert!(text.starts_with(RL_PROMPT));
        assert!(text.ends_with("Option B offers a 100.0% chance to win $2.0."));
        assert!(RL_PROMPT.contains("explain your reasoning step by step"));
        assert!(!SFT_PROMPT.contains("step by step"));
    }
}
