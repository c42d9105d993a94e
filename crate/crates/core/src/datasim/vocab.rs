use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
/// Smallest id available to ordinary tokens.
pub const FIRST_CONTENT_ID: usize = 4;

pub fn is_special(id: usize) -> bool {
    id < FIRST_CONTENT_ID
}

/// Token strings for ids; the first four are the reserved symbols.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in ["<pad>", "<s>", "</s>", "<unk>"] {
            v.push(t.to_string())?;
        }
        for t in tokens {
            v.push(t.into())?;
        }
        Ok(v)
    }

    /// Synthetic vocabulary `t4 … t{size-1}`.
    pub fn synthetic(size: usize) -> Result<Self> {
        if size <= FIRST_CONTENT_ID {
            return Err(Error::Config(format!("vocabulary of size {size} has no content tokens")));
        }
        Self::new((FIRST_CONTENT_ID..size).map(|i| format!("t{i}")))
    }

    fn push(&mut self, token: String) -> Result<()> {
        if self.index.contains_key(&token) {
            return Err(Error::Config(format!("duplicate token {token:?}")));
        }
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.tokens.get(id).map(String::as_str).ok_or(Error::OutOfVocab {
            id,
            vocab: self.tokens.len(),
        })
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        let mut ids: Vec<usize> = text.split_whitespace().map(|t| self.id(t)).collect();
        ids.push(EOS);
        ids
    }

    /// Tokens up to (not including) the first EOS.
    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut out = Vec::new();
        for &id in ids.iter().take_while(|&&i| i != EOS) {
            out.push(self.token(id)?);
        }
        Ok(out.join(" "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocabulary::new(["a", "b"]).unwrap();
        assert_eq!(v.token(PAD).unwrap(), "<pad>");
        assert_eq!(v.id("</s>"), EOS);
        assert_eq!(v.id("a"), FIRST_CONTENT_ID);
        assert_eq!(v.id("zzz"), UNK);
    }

    #[test]
    fn text_round_trip() {
        let v = Vocabulary::synthetic(8).unwrap();
        let ids = v.encode("t5 t7 t4");
        assert_eq!(ids, vec![5, 7, 4, EOS]);
        assert_eq!(v.decode(&ids).unwrap(), "t5 t7 t4");
    }

    #[test]
    fn duplicates_rejected() {
        assert!(Vocabulary::new(["x", "x"]).is_err());
        assert!(matches!(Vocabulary::synthetic(8).unwrap().token(8), Err(Error::OutOfVocab { .. })));
    }
}
