//! Instruction-tuning serialization of supervision examples.

use serde::{Deserialize, Serialize};

use crate::tokenizer::Tokenizer;
use crate::types::{MacroAction, SerializedTarget, StrategyKind, SupervisionExample};

/// Prompt shown to the policy for a proof state. Also the `instruction`
/// field of every dataset record.
pub fn format_prompt(state: &str) -> String {
    format!("[GOAL]\n{state}\n[PROOFSTEP]\n")
}

/// Inverse of [`format_prompt`].
pub fn state_from_prompt(prompt: &str) -> Option<&str> {
    prompt.strip_prefix("[GOAL]\n")?.strip_suffix("\n[PROOFSTEP]\n")
}

pub fn serialize_target(target: &MacroAction, tokenizer: &Tokenizer) -> SerializedTarget {
    let text = target.joined();
    let token_count = tokenizer.count(&text);
    SerializedTarget { text, token_count }
}

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub instruction: String,
    pub input: String,
    pub output: String,
    pub theorem_id: String,
    pub boundary_index: usize,
    pub granularity: StrategyKind,
}

pub fn serialize_example(example: &SupervisionExample) -> InstructionRecord {
    InstructionRecord {
        instruction: format_prompt(&example.input_state),
        input: String::new(),
        output: example.target.joined(),
        theorem_id: example.theorem_id.clone(),
        boundary_index: example.boundary_index,
        granularity: example.granularity,
    }
}
