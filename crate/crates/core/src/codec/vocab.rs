use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{GramError, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const SEP: TokenId = 3;
pub const PROMPT_QUERY: TokenId = 4;
pub const PROMPT_PRODUCT: TokenId = 5;

/// Reserved token strings, indexed by their fixed ids.
pub const RESERVED_TOKENS: [&str; 6] = ["<pad>", "<bos>", "<eos>", "<sep>", "<query>", "<product>"];

/// Bijective token string <-> id map. Reserved tokens occupy ids 0..6, content
/// tokens follow in sorted string order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, TokenId>", into = "BTreeMap<String, TokenId>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn build<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let content: BTreeSet<String> = tokens
            .into_iter()
            .map(|t| t.as_ref().to_string())
            .filter(|t| !t.is_empty() && !RESERVED_TOKENS.contains(&t.as_str()))
            .collect();
        let tokens: Vec<String> = RESERVED_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(content)
            .collect();
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Self { tokens, ids }
    }

    /// Collects whitespace tokens of texts and comma-separated values of
    /// codes.
    pub fn from_corpus<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        codes: impl IntoIterator<Item = &'a str>,
    ) -> Self {
        let mut all: Vec<&str> = Vec::new();
        for t in texts {
            all.extend(t.split_whitespace());
        }
        for c in codes {
            all.extend(c.split(super::CODE_DELIMITER));
        }
        Self::build(all)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Result<TokenId> {
        self.ids
            .get(token)
            .copied()
            .ok_or_else(|| GramError::UnknownToken(token.to_string()))
    }

    pub fn get(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Result<&str> {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .ok_or(GramError::TokenOutOfRange {
                id,
                size: self.tokens.len(),
            })
    }

    pub fn is_reserved(id: TokenId) -> bool {
        (id as usize) < RESERVED_TOKENS.len()
    }

    /// Content token ids (everything that is not reserved).
    pub fn content_ids(&self) -> impl Iterator<Item = TokenId> {
        RESERVED_TOKENS.len() as TokenId..self.tokens.len() as TokenId
    }

    pub fn encode_text(&self, text: &str) -> Result<Vec<TokenId>> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }

    /// Encodes `text`, silently skipping words the vocabulary has never seen.
    pub fn encode_text_lossy(&self, text: &str) -> Vec<TokenId> {
        text.split_whitespace().filter_map(|w| self.get(w)).collect()
    }
}

impl TryFrom<BTreeMap<String, TokenId>> for Vocabulary {
    type Error = GramError;

    fn try_from(map: BTreeMap<String, TokenId>) -> Result<Self> {
        let mut tokens = vec![String::new(); map.len()];
        for (t, &id) in &map {
            let slot = tokens
                .get_mut(id as usize)
                .ok_or_else(|| GramError::Data(format!("vocabulary id {id} is not dense")))?;
            if !slot.is_empty() {
                return Err(GramError::Data(format!("vocabulary id {id} assigned twice")));
            }
            *slot = t.clone();
        }
        for (i, r) in RESERVED_TOKENS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*r) {
                return Err(GramError::Data(format!("reserved token {r} must have id {i}")));
            }
        }
        let ids = map.into_iter().collect();
        Ok(Self { tokens, ids })
    }
}

impl From<Vocabulary> for BTreeMap<String, TokenId> {
    fn from(v: Vocabulary) -> Self {
        v.ids.into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_token_corpus() {
        let v = Vocabulary::build(["a"]);
        assert_eq!(v.len(), RESERVED_TOKENS.len() + 1);
        assert_eq!(v.id("a").unwrap(), 6);
        assert_eq!(v.id("<eos>").unwrap(), EOS);
        assert!(v.id("b").is_err());
    }

    #[test]
    fn order_independent_and_deterministic() {
        let a = Vocabulary::build(["z", "a", "m", "a"]);
        let b = Vocabulary::build(["m", "z", "a"]);
        assert_eq!(a, b);
        assert_eq!(a.token(6).unwrap(), "a");
        assert_eq!(a.token(8).unwrap(), "z");
    }

    #[test]
    fn json_round_trip() {
        let v = Vocabulary::build(["kettle", "acme"]);
        let s = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&s).unwrap();
        assert_eq!(v, back);
    }

    #[test]
    fn rejects_missing_reserved() {
        let r: std::result::Result<Vocabulary, _> = serde_json::from_str(r#"{"a": 0}"#);
        assert!(r.is_err());
    }
}
