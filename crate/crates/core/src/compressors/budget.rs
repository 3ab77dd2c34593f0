//! Budget controller: split a token target across prompt segments.

use serde::{Deserialize, Serialize};

/// Token lengths of the three prompt segments.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentLengths {
    pub instruction: usize,
    /// Demonstrations / documents.
    pub context: usize,
    pub question: usize,
}

impl SegmentLengths {
    pub fn total(&self) -> usize {
        self.instruction + self.context + self.question
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub instruction_tokens: usize,
    pub question_tokens: usize,
    pub context_tokens: usize,
    /// Always the sum of the three parts.
    pub total_tokens: usize,
    /// The requested total.
    pub target_tokens: usize,
    /// Instruction and question floors alone exceed the target.
    pub overshoot: bool,
}

/// Allocates `target` tokens.
///
/// The instruction and question first receive `ceil(floor * len)` tokens
/// (floors of 1.0 keep them whole). The context gets the remainder, capped
/// at its length; anything left after that tops the instruction and then the
/// question back up towards their full length. If the floors alone exceed
/// the target, the context gets nothing and the budget overshoots.
pub fn allocate_budget(
    target: usize,
    lengths: SegmentLengths,
    instruction_floor: f64,
    question_floor: f64,
) -> Budget {
    let floor_of = |len: usize, floor: f64| -> usize {
        ((floor.clamp(0.0, 1.0) * len as f64).ceil() as usize).min(len)
    };
    let mut instruction = floor_of(lengths.instruction, instruction_floor);
    let mut question = floor_of(lengths.question, question_floor);
    let reserved = instruction + question;

    let (context, overshoot) = if reserved >= target {
        (0, reserved > target)
    } else {
        let residual = target - reserved;
        let context = residual.min(lengths.context);
        let mut surplus = residual - context;
        let extra = surplus.min(lengths.instruction - instruction);
        instruction += extra;
        surplus -= extra;
        question += surplus.min(lengths.question - question);
        (context, false)
    };

    Budget {
        instruction_tokens: instruction,
        question_tokens: question,
        context_tokens: context,
        total_tokens: instruction + question + context,
        target_tokens: target,
        overshoot,
    }
}
