//! Output token inventory of the transducer.
//!
//! Id 0 is the blank symbol and id 1 the channel-change marker; word tokens
//! start at id 2. The marker is an ordinary output token here; only the
//! speaker side treats it specially.

use serde::{Deserialize, Serialize};

use super::AsrError;
use crate::serial::CC;

pub const BLANK_ID: usize = 0;
pub const CC_ID: usize = 1;
pub const BLANK_SYMBOL: &str = "<blank>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    symbols: Vec<String>,
}

impl Vocab {
    /// Builds a vocabulary from word tokens. Rejects duplicates and the two
    /// reserved symbols.
    pub fn from_words<I, S>(words: I) -> Result<Vocab, AsrError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut symbols = vec![BLANK_SYMBOL.to_string(), CC.to_string()];
        for word in words {
            let word = word.into();
            if word == BLANK_SYMBOL || word == CC {
                return Err(AsrError::BadVocabulary(word, "reserved symbol"));
            }
            if symbols.contains(&word) {
                return Err(AsrError::BadVocabulary(word, "duplicate"));
            }
            symbols.push(word);
        }
        Ok(Vocab { symbols })
    }

    /// Convenience inventory "w00".."wNN" for synthetic corpora.
    pub fn numbered(word_count: usize) -> Vocab {
        Vocab::from_words((0..word_count).map(|i| format!("w{i:02}")))
            .expect("numbered words cannot collide")
    }

    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    pub fn word_count(&self) -> usize {
        self.symbols.len() - 2
    }

    pub fn symbol(&self, id: usize) -> &str {
        &self.symbols[id]
    }

    pub fn id_of(&self, symbol: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == symbol)
    }

    pub fn encode(&self, tokens: &[impl AsRef<str>]) -> Result<Vec<usize>, AsrError> {
        tokens
            .iter()
            .map(|t| {
                self.id_of(t.as_ref())
                    .ok_or_else(|| AsrError::UnknownToken(t.as_ref().to_string()))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocab::numbered(3);
        assert_eq!(v.symbol(BLANK_ID), BLANK_SYMBOL);
        assert_eq!(v.symbol(CC_ID), CC);
        assert_eq!(v.size(), 5);
        assert_eq!(v.word_count(), 3);
        assert_eq!(v.id_of("w01"), Some(3));
    }

    #[test]
    fn encode_round_trips_and_flags_unknowns() {
        let v = Vocab::from_words(["alpha", "beta"]).unwrap();
        let ids = v.encode(&["beta", CC, "alpha"]).unwrap();
        assert_eq!(ids, vec![3, CC_ID, 2]);
        assert!(matches!(v.encode(&["gamma"]), Err(AsrError::UnknownToken(_))));
    }

    #[test]
    fn duplicates_and_reserved_words_are_rejected() {
        assert!(Vocab::from_words(["a", "a"]).is_err());
        assert!(Vocab::from_words([CC]).is_err());
        assert!(Vocab::from_words([BLANK_SYMBOL]).is_err());
    }
}
