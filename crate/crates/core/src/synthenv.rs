//! Synthetic counting scenes: a scene is a row of slots, each with one color
//! and one shape, and a question asks how many slots carry a given color,
//! shape, or color-shape pair. Everything here is exactly checkable.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::rng::Rng;

pub const K_MAX: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub slots: usize,
    pub colors: usize,
    pub shapes: usize,
    /// Sampling weights for `CountColor`, `CountShape`, `CountColorShape`.
    pub kind_weights: [f64; 3],
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            slots: 4,
            colors: 3,
            shapes: 2,
            kind_weights: [1.0, 1.0, 1.0],
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.slots < 1 || self.slots > K_MAX {
            return config_err(format!("slots must be in 1..={K_MAX}, got {}", self.slots));
        }
        if self.colors < 2 {
            return config_err(format!("need at least 2 colors, got {}", self.colors));
        }
        if self.shapes < 2 {
            return config_err(format!("need at least 2 shapes, got {}", self.shapes));
        }
        if self.colors > u8::MAX as usize || self.shapes > u8::MAX as usize {
            return config_err("attribute sets too large");
        }
        if self.kind_weights.iter().any(|w| !w.is_finite() || *w < 0.0)
            || self.kind_weights.iter().sum::<f64>() <= 0.0
        {
            return config_err("kind_weights must be finite, non-negative and not all zero");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Slot {
    pub color: u8,
    pub shape: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: u64,
    pub slots: Vec<Slot>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QuestionKind {
    CountColor,
    CountShape,
    CountColorShape,
}

impl QuestionKind {
    pub const ALL: [QuestionKind; 3] = [
        QuestionKind::CountColor,
        QuestionKind::CountShape,
        QuestionKind::CountColorShape,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Question {
    pub kind: QuestionKind,
    pub target_color: Option<u8>,
    pub target_shape: Option<u8>,
}

impl Question {
    pub fn count_color(color: u8) -> Self {
        Self { kind: QuestionKind::CountColor, target_color: Some(color), target_shape: None }
    }

    pub fn count_shape(shape: u8) -> Self {
        Self { kind: QuestionKind::CountShape, target_color: None, target_shape: Some(shape) }
    }

    pub fn count_color_shape(color: u8, shape: u8) -> Self {
        Self {
            kind: QuestionKind::CountColorShape,
            target_color: Some(color),
            target_shape: Some(shape),
        }
    }

    /// Whether the question's targets match a slot.
    pub fn matches(&self, slot: Slot) -> bool {
        self.target_color.is_none_or(|c| c == slot.color)
            && self.target_shape.is_none_or(|s| s == slot.shape)
    }

    pub fn references_color(&self) -> bool {
        self.target_color.is_some()
    }

    pub fn references_shape(&self) -> bool {
        self.target_shape.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub scene: Scene,
    pub question: Question,
    pub gold: u8,
}

/// Attribute slot of a fact: which kind and which value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Attribute {
    Color(u8),
    Shape(u8),
}

/// Symbolic token shared by captions and answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Token {
    Fact { slot: u8, attr: Attribute },
    Digit(u8),
    /// End of caption.
    Eoc,
    /// End of answer.
    Eos,
}

impl Token {
    pub fn is_digit(self) -> bool {
        matches!(self, Token::Digit(_))
    }
}

pub fn generate_instance(seed: u64, cfg: &EnvConfig) -> Result<Instance> {
    cfg.validate()?;
    let mut rng = Rng::seed_from_u64(seed);
    let slots = (0..cfg.slots)
        .map(|_| Slot {
            color: rng.gen_range(0..cfg.colors) as u8,
            shape: rng.gen_range(0..cfg.shapes) as u8,
        })
        .collect();
    let scene = Scene { scene_id: seed, slots };

    let kinds = WeightedIndex::new(cfg.kind_weights).expect("weights validated");
    let question = match QuestionKind::ALL[kinds.sample(&mut rng)] {
        QuestionKind::CountColor => Question::count_color(rng.gen_range(0..cfg.colors) as u8),
        QuestionKind::CountShape => Question::count_shape(rng.gen_range(0..cfg.shapes) as u8),
        QuestionKind::CountColorShape => {
            let c = rng.gen_range(0..cfg.colors) as u8;
            let s = rng.gen_range(0..cfg.shapes) as u8;
            Question::count_color_shape(c, s)
        }
    };
    let gold = oracle_answer(&scene, &question);
    Ok(Instance { scene, question, gold })
}

/// Number of slots matching every targeted attribute.
pub fn oracle_answer(scene: &Scene, question: &Question) -> u8 {
    scene.slots.iter().filter(|s| question.matches(**s)).count() as u8
}

/// 1 iff the sequence is exactly one digit followed by end-of-answer.
pub fn format_score(tokens: &[Token]) -> u8 {
    match tokens {
        [Token::Digit(_), Token::Eos] => 1,
        _ => 0,
    }
}

pub fn verify(tokens: &[Token], gold: u8) -> u8 {
    match tokens {
        [Token::Digit(d), Token::Eos] if *d == gold => 1,
        _ => 0,
    }
}

/// One JSON-lines record per instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub scene_id: u64,
    pub slots: Vec<Slot>,
    pub kind: QuestionKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub target_color: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub target_shape: Option<u8>,
    pub gold: u8,
}

impl From<&Instance> for InstanceRecord {
    fn from(inst: &Instance) -> Self {
        Self {
            scene_id: inst.scene.scene_id,
            slots: inst.scene.slots.clone(),
            kind: inst.question.kind,
            target_color: inst.question.target_color,
            target_shape: inst.question.target_shape,
            gold: inst.gold,
        }
    }
}

impl From<InstanceRecord> for Instance {
    fn from(rec: InstanceRecord) -> Self {
        Instance {
            scene: Scene { scene_id: rec.scene_id, slots: rec.slots },
            question: Question {
                kind: rec.kind,
                target_color: rec.target_color,
                target_shape: rec.target_shape,
            },
            gold: rec.gold,
        }
    }
}

impl Instance {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&InstanceRecord::from(self)).expect("instance record serializes")
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        let rec: InstanceRecord = serde_json::from_str(line)?;
        Ok(rec.into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(slots: &[(u8, u8)]) -> Scene {
        Scene {
            scene_id: 0,
            slots: slots.iter().map(|&(color, shape)| Slot { color, shape }).collect(),
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = EnvConfig { slots: 4, colors: 3, shapes: 2, ..Default::default() };
        let a = generate_instance(0, &cfg).unwrap();
        let b = generate_instance(0, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_degenerate_configs() {
        let one_color = EnvConfig { colors: 1, ..Default::default() };
        assert!(generate_instance(0, &one_color).is_err());
        let too_many = EnvConfig { slots: K_MAX + 1, ..Default::default() };
        assert!(generate_instance(0, &too_many).is_err());
        let no_shapes = EnvConfig { shapes: 0, ..Default::default() };
        assert!(generate_instance(0, &no_shapes).is_err());
    }

    #[test]
    fn gold_matches_slotwise_count() {
        let cfg = EnvConfig::default();
        let inst = generate_instance(7, &cfg).unwrap();
        let by_hand = inst
            .scene
            .slots
            .iter()
            .filter(|s| {
                inst.question.target_color.is_none_or(|c| s.color == c)
                    && inst.question.target_shape.is_none_or(|t| s.shape == t)
            })
            .count();
        assert_eq!(inst.gold as usize, by_hand);
    }

    #[test]
    fn oracle_examples() {
        // red = 0, blue = 1; circle = 0, square = 1
        let all_red = scene(&[(0, 0), (0, 1), (0, 0), (0, 1)]);
        assert_eq!(oracle_answer(&all_red, &Question::count_color(0)), 4);
        assert_eq!(oracle_answer(&all_red, &Question::count_color(1)), 0);
        let mixed = scene(&[(0, 0), (1, 0), (0, 1)]);
        assert_eq!(oracle_answer(&mixed, &Question::count_color_shape(0, 0)), 1);
    }

    #[test]
    fn verifier_and_format_rules() {
        use Token::*;
        assert_eq!(verify(&[Digit(3), Eos], 3), 1);
        assert_eq!(verify(&[Digit(2), Eos], 3), 0);
        assert_eq!(verify(&[Digit(3), Digit(3), Eos], 3), 0);
        assert_eq!(format_score(&[Digit(0), Eos]), 1);
        assert_eq!(format_score(&[Eos]), 0);
        let fact = Fact { slot: 0, attr: Attribute::Color(1) };
        assert_eq!(format_score(&[Digit(1), fact, Eos]), 0);
        assert_eq!(format_score(&[Digit(1)]), 0);
    }

    #[test]
    fn json_line_round_trip() {
        let inst = generate_instance(11, &EnvConfig::default()).unwrap();
        let line = inst.to_json_line();
        assert!(line.contains("\"scene_id\":11"));
        assert_eq!(Instance::from_json_line(&line).unwrap(), inst);
    }
}
