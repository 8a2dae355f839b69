//! Word ↔ id maps with reserved padding and unknown ids.

use std::collections::{BTreeSet, HashMap};

use super::{DataError, Result};

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
/// Stand-in memory sentence for episodes with no history.
pub const NIL_TOKEN: &str = "$nil";

/// Sorted vocabulary: id 0 is padding, 1 unknown, 2 the empty-memory marker,
/// then every other word in lexicographic order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub const PAD: u32 = 0;
    pub const UNK: u32 = 1;
    pub const NIL: u32 = 2;

    pub fn build<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let reserved = [PAD_TOKEN, UNK_TOKEN, NIL_TOKEN];
        let sorted: BTreeSet<&str> = words.into_iter().filter(|w| !reserved.contains(w)).collect();
        let list = reserved.iter().copied().chain(sorted).map(str::to_string).collect();
        Self::from_words(list).expect("reserved prefix")
    }

    /// Rebuilds a vocabulary from its id-ordered word list.
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        if words.len() < 3 || words[0] != PAD_TOKEN || words[1] != UNK_TOKEN || words[2] != NIL_TOKEN {
            return Err(DataError::Format("vocabulary must start with <pad>, <unk>, $nil".into()));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i as u32).is_some() {
                return Err(DataError::Format(format!("duplicate vocabulary word `{w}`")));
            }
        }
        Ok(Self { words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    pub fn get(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    /// Maps a word to its id. With `oov` unknown words become [`Self::UNK`],
    /// otherwise they are an error.
    pub fn encode(&self, word: &str, oov: bool) -> Result<u32> {
        match (self.get(word), oov) {
            (Some(id), _) => Ok(id),
            (None, true) => Ok(Self::UNK),
            (None, false) => Err(DataError::UnknownWord(word.to_string())),
        }
    }

    pub fn encode_all(&self, words: &[String], oov: bool) -> Result<Vec<u32>> {
        words.iter().map(|w| self.encode(w, oov)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<&str> {
        ids.iter()
            .filter(|&&i| i != Self::PAD)
            .map(|&i| self.word(i).unwrap_or(UNK_TOKEN))
            .collect()
    }
}
