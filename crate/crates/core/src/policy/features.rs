//! Handcrafted context features.
//!
//! Layout (all blocks concatenated, sizes for K slots, C colors, S shapes,
//! vocabulary V and maximum position P):
//!
//! | block          | size                    | content                                         |
//! |----------------|-------------------------|-------------------------------------------------|
//! | bias           | 1                       | constant 1                                      |
//! | role           | 2                       | Observer / Solver one-hot                       |
//! | kind           | 3                       | question kind one-hot                           |
//! | target_color   | C                       | target color one-hot                            |
//! | target_shape   | S                       | target shape one-hot                            |
//! | scene          | K(C+S)                  | per-slot attribute one-hots (image only)        |
//! | scene_count    | 2(K+1)                  | one-hot count of the target attribute (image)   |
//! | caption_bag    | V                       | token counts of the caption (Solver only)       |
//! | caption_count  | 3(K+1)                  | one-hot count of slots the caption asserts as   |
//! |                |                         | matching the target, per question kind          |
//! | history        | V                       | token counts of the sequence emitted so far     |
//! | position       | P                       | position one-hot                                |
//!
//! The scene count only covers single-attribute questions; joint
//! color-shape counts are available from caption evidence alone.

use std::ops::Range;

use crate::synthenv::{Attribute, Instance, QuestionKind, Token};

use super::vocab::{Role, TokenId, Vocab};

/// Sorted `(index, value)` pairs with no duplicate indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Features(pub Vec<(usize, f64)>);

impl Features {
    pub fn dot(&self, row: &[f64]) -> f64 {
        self.0.iter().map(|&(j, v)| row[j] * v).sum()
    }

    /// Entries whose index falls in `range`.
    pub fn block(&self, range: &Range<usize>) -> Vec<(usize, f64)> {
        self.0.iter().copied().filter(|(j, _)| range.contains(j)).collect()
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for &(j, v) in &self.0 {
            out[j] = v;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLayout {
    pub bias: Range<usize>,
    pub role: Range<usize>,
    pub kind: Range<usize>,
    pub target_color: Range<usize>,
    pub target_shape: Range<usize>,
    pub scene: Range<usize>,
    pub scene_count: Range<usize>,
    pub caption_bag: Range<usize>,
    pub caption_count: Range<usize>,
    pub history: Range<usize>,
    pub position: Range<usize>,
    pub dim: usize,
    slots: usize,
    colors: usize,
    shapes: usize,
}

impl FeatureLayout {
    pub fn new(slots: usize, colors: usize, shapes: usize, vocab_len: usize, max_position: usize) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let bias = take(1);
        let role = take(2);
        let kind = take(3);
        let target_color = take(colors);
        let target_shape = take(shapes);
        let scene = take(slots * (colors + shapes));
        let scene_count = take(2 * (slots + 1));
        let caption_bag = take(vocab_len);
        let caption_count = take(3 * (slots + 1));
        let history = take(vocab_len);
        let position = take(max_position);
        Self {
            bias,
            role,
            kind,
            target_color,
            target_shape,
            scene,
            scene_count,
            caption_bag,
            caption_count,
            history,
            position,
            dim: at,
            slots,
            colors,
            shapes,
        }
    }

    /// Offset of `(slot, attr)` inside the scene block.
    pub fn scene_index(&self, slot: usize, attr: Attribute) -> usize {
        let per_slot = self.colors + self.shapes;
        self.scene.start
            + slot * per_slot
            + match attr {
                Attribute::Color(c) => c as usize,
                Attribute::Shape(s) => self.colors + s as usize,
            }
    }

    /// Features shared by every step of a sequence: everything except history
    /// and position.
    pub fn sequence_base(
        &self,
        vocab: &Vocab,
        role: Role,
        inst: &Instance,
        image_visible: bool,
        caption: Option<&[TokenId]>,
    ) -> Features {
        let q = &inst.question;
        let mut f: Vec<(usize, f64)> = Vec::with_capacity(32);
        f.push((self.bias.start, 1.0));
        f.push((self.role.start + role.index(), 1.0));
        f.push((self.kind.start + q.kind.index(), 1.0));
        if let Some(c) = q.target_color {
            f.push((self.target_color.start + c as usize, 1.0));
        }
        if let Some(s) = q.target_shape {
            f.push((self.target_shape.start + s as usize, 1.0));
        }

        if image_visible {
            let matching = |pred: &dyn Fn(usize) -> bool| (0..inst.scene.slots.len()).filter(|&i| pred(i)).count();
            for (i, slot) in inst.scene.slots.iter().enumerate() {
                f.push((self.scene_index(i, Attribute::Color(slot.color)), 1.0));
                f.push((self.scene_index(i, Attribute::Shape(slot.shape)), 1.0));
            }
            let slots = &inst.scene.slots;
            match q.kind {
                QuestionKind::CountColor => {
                    let n = matching(&|i| Some(slots[i].color) == q.target_color);
                    f.push((self.scene_count.start + n, 1.0));
                }
                QuestionKind::CountShape => {
                    let n = matching(&|i| Some(slots[i].shape) == q.target_shape);
                    f.push((self.scene_count.start + self.slots + 1 + n, 1.0));
                }
                QuestionKind::CountColorShape => {}
            }
        }

        if let Some(caption) = caption {
            let mut bag = vec![0.0; vocab.len()];
            for &t in caption {
                bag[t] += 1.0;
            }
            for (t, &n) in bag.iter().enumerate() {
                if n != 0.0 {
                    f.push((self.caption_bag.start + t, n));
                }
            }

            // A slot counts when the caption asserts the target attribute(s)
            // for it; repeated or extra facts do not add to the count.
            let mut color_said = vec![false; self.slots];
            let mut shape_said = vec![false; self.slots];
            for &t in caption {
                if let Token::Fact { slot, attr } = vocab.token(t) {
                    match attr {
                        Attribute::Color(c) if Some(c) == q.target_color => color_said[slot as usize] = true,
                        Attribute::Shape(s) if Some(s) == q.target_shape => shape_said[slot as usize] = true,
                        _ => {}
                    }
                }
            }
            let n = (0..self.slots)
                .filter(|&i| match q.kind {
                    QuestionKind::CountColor => color_said[i],
                    QuestionKind::CountShape => shape_said[i],
                    QuestionKind::CountColorShape => color_said[i] && shape_said[i],
                })
                .count();
            f.push((self.caption_count.start + q.kind.index() * (self.slots + 1) + n, 1.0));
        }
        f.sort_by_key(|e| e.0);
        Features(f)
    }

    /// Base features plus the history bag and position one-hot for one step.
    pub fn step(&self, base: &Features, history: &[TokenId], position: usize) -> Features {
        let mut f = base.0.clone();
        let mut hist: Vec<(usize, f64)> = Vec::with_capacity(history.len());
        for &t in history {
            let j = self.history.start + t;
            match hist.iter_mut().find(|e| e.0 == j) {
                Some(e) => e.1 += 1.0,
                None => hist.push((j, 1.0)),
            }
        }
        hist.sort_by_key(|e| e.0);
        f.extend(hist);
        let pos = position.min(self.position.len() - 1);
        f.push((self.position.start + pos, 1.0));
        Features(f)
    }
}
