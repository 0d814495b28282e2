use serde::{Deserialize, Serialize};

use crate::synthenv::{format_score, verify, Attribute, Question, Scene, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorCategory {
    Correct,
    Perception,
    Reasoning,
    Other,
}

/// Caption asserts an attribute the scene does not have.
pub fn contradicts_scene(scene: &Scene, caption: &[Token]) -> bool {
    caption.iter().any(|t| match *t {
        Token::Fact { slot, attr } => match scene.slots.get(slot as usize) {
            None => true,
            Some(s) => match attr {
                Attribute::Color(c) => s.color != c,
                Attribute::Shape(h) => s.shape != h,
            },
        },
        _ => false,
    })
}

/// Question-relevant slot attributes: the true color (shape) of every slot
/// when the question targets colors (shapes).
pub fn relevant_facts(scene: &Scene, question: &Question) -> Vec<Token> {
    let mut out = Vec::new();
    for (i, s) in scene.slots.iter().enumerate() {
        if question.references_color() {
            out.push(Token::Fact { slot: i as u8, attr: Attribute::Color(s.color) });
        }
        if question.references_shape() {
            out.push(Token::Fact { slot: i as u8, attr: Attribute::Shape(s.shape) });
        }
    }
    out
}

pub fn omits_relevant(scene: &Scene, question: &Question, caption: &[Token]) -> bool {
    relevant_facts(scene, question).iter().any(|f| !caption.contains(f))
}

/// Exact error taxonomy: correct answers first, then format failures, then
/// wrong answers built on wrong or incomplete evidence, then wrong answers
/// built on faithful evidence.
pub fn categorize_error(
    scene: &Scene,
    question: &Question,
    caption: &[Token],
    answer: &[Token],
    gold: u8,
) -> ErrorCategory {
    if verify(answer, gold) == 1 {
        ErrorCategory::Correct
    } else if format_score(answer) == 0 {
        ErrorCategory::Other
    } else if contradicts_scene(scene, caption) || omits_relevant(scene, question, caption) {
        ErrorCategory::Perception
    } else {
        ErrorCategory::Reasoning
    }
}
