use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::synthenv::{Attribute, EnvConfig, Token};

pub type TokenId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    Observer,
    Solver,
}

impl Role {
    pub fn index(self) -> usize {
        match self {
            Role::Observer => 0,
            Role::Solver => 1,
        }
    }
}

/// Dense token ids: facts (slot-major, colors then shapes), digits `0..=K`,
/// then end-of-caption and end-of-answer.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<Token>,
    ids: HashMap<Token, TokenId>,
    observer_legal: Vec<TokenId>,
    solver_legal: Vec<TokenId>,
    num_facts: usize,
}

impl Vocab {
    pub fn new(env: &EnvConfig) -> Self {
        let mut tokens = Vec::new();
        for slot in 0..env.slots as u8 {
            for c in 0..env.colors as u8 {
                tokens.push(Token::Fact { slot, attr: Attribute::Color(c) });
            }
            for s in 0..env.shapes as u8 {
                tokens.push(Token::Fact { slot, attr: Attribute::Shape(s) });
            }
        }
        let num_facts = tokens.len();
        tokens.extend((0..=env.slots as u8).map(Token::Digit));
        tokens.push(Token::Eoc);
        tokens.push(Token::Eos);
        let ids = tokens.iter().enumerate().map(|(i, t)| (*t, i)).collect();

        // Observers may emit digits so that answer leakage is reachable;
        // Solvers may emit facts so that format errors are reachable.
        let mut observer_legal = Vec::new();
        let mut solver_legal = Vec::new();
        for (id, tok) in tokens.iter().enumerate() {
            match tok {
                Token::Fact { .. } | Token::Digit(_) => {
                    observer_legal.push(id);
                    solver_legal.push(id);
                }
                Token::Eoc => observer_legal.push(id),
                Token::Eos => solver_legal.push(id),
            }
        }
        Self { tokens, ids, observer_legal, solver_legal, num_facts }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn num_facts(&self) -> usize {
        self.num_facts
    }

    pub fn token(&self, id: TokenId) -> Token {
        self.tokens[id]
    }

    pub fn id(&self, token: Token) -> Option<TokenId> {
        self.ids.get(&token).copied()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<Token> {
        ids.iter().map(|&i| self.tokens[i]).collect()
    }

    pub fn encode(&self, tokens: &[Token]) -> Option<Vec<TokenId>> {
        tokens.iter().map(|t| self.id(*t)).collect()
    }

    pub fn legal(&self, role: Role) -> &[TokenId] {
        match role {
            Role::Observer => &self.observer_legal,
            Role::Solver => &self.solver_legal,
        }
    }

    pub fn terminal(&self, role: Role) -> TokenId {
        match role {
            Role::Observer => self.ids[&Token::Eoc],
            Role::Solver => self.ids[&Token::Eos],
        }
    }

    pub fn digit(&self, d: u8) -> TokenId {
        self.ids[&Token::Digit(d)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_dense_and_disjoint() {
        let v = Vocab::new(&EnvConfig::default());
        assert_eq!(v.len(), 4 * (3 + 2) + 5 + 2);
        for id in 0..v.len() {
            assert_eq!(v.id(v.token(id)), Some(id));
        }
        let facts: Vec<_> = (0..v.len()).filter(|&i| matches!(v.token(i), Token::Fact { .. })).collect();
        let digits: Vec<_> = (0..v.len()).filter(|&i| v.token(i).is_digit()).collect();
        assert!(facts.iter().all(|f| !digits.contains(f)));
        assert_eq!(facts.len(), v.num_facts());
    }

    #[test]
    fn legality_masks() {
        let v = Vocab::new(&EnvConfig::default());
        let eoc = v.id(Token::Eoc).unwrap();
        let eos = v.id(Token::Eos).unwrap();
        assert!(v.legal(Role::Observer).contains(&eoc));
        assert!(!v.legal(Role::Observer).contains(&eos));
        assert!(v.legal(Role::Solver).contains(&eos));
        assert!(!v.legal(Role::Solver).contains(&eoc));
        assert_eq!(v.legal(Role::Solver).len(), v.len() - 1);
    }
}
