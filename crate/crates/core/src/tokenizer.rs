//! The tokenizer contract and the built-in whitespace/byte-fallback tokenizer.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use sha2::{Digest, Sha256};

/// Anything that maps text to token ids for a fixed vocabulary.
///
/// `fingerprint` must change whenever `encode` could produce a different
/// sequence for the same text; datasets and log-prob caches record it and
/// refuse to mix tokenizers.
pub trait Tokenizer: Sync {
    fn encode(&self, text: &str) -> Vec<u32>;
    fn vocab_size(&self) -> usize;
    fn fingerprint(&self) -> String;
    /// Token placed between instruction and response by the default template.
    fn separator_id(&self) -> u32;
}

/// Splits on whitespace, joins words with a single space token and spells
/// each word as its UTF-8 bytes unless it is in the optional word table.
///
/// Ids `1..=255` are raw bytes, id `0` is the separator (NUL is treated as
/// whitespace, so it never collides), and word-table entries take ids from
/// 256 upward. Without a word table the vocabulary is exactly 256.
#[derive(Debug, Clone, Default)]
pub struct WhitespaceByteTokenizer {
    words: BTreeMap<String, u32>,
    word_list: Vec<String>,
}

pub const SEPARATOR_ID: u32 = 0;
const SPACE_ID: u32 = b' ' as u32;

impl WhitespaceByteTokenizer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds whole-word tokens. Duplicates and words containing whitespace
    /// are skipped.
    pub fn with_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tok = Self::default();
        for w in words {
            let w: String = w.into();
            if w.is_empty() || w.chars().any(is_break) || tok.words.contains_key(&w) {
                continue;
            }
            tok.words.insert(w.clone(), 256 + tok.word_list.len() as u32);
            tok.word_list.push(w);
        }
        tok
    }
}

fn is_break(c: char) -> bool {
    c.is_whitespace() || c == '\0'
}

impl Tokenizer for WhitespaceByteTokenizer {
    fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::with_capacity(text.len());
        for (i, word) in text.split(is_break).filter(|w| !w.is_empty()).enumerate() {
            if i > 0 {
                out.push(SPACE_ID);
            }
            match self.words.get(word) {
                Some(&id) => out.push(id),
                None => out.extend(word.bytes().map(u32::from)),
            }
        }
        out
    }

    fn vocab_size(&self) -> usize {
        256 + self.word_list.len()
    }

    fn fingerprint(&self) -> String {
        if self.word_list.is_empty() {
            return String::from("ws-byte-v1");
        }
        let mut h = Sha256::new();
        for w in &self.word_list {
            h.update(w.as_bytes());
            h.update(b"\n");
        }
        let digest = h.finalize();
        let mut hex = String::with_capacity(16);
        for b in &digest[..8] {
            hex.push_str(&format!("{b:02x}"));
        }
        format!("ws-byte-v1+{}w-{hex}", self.word_list.len())
    }

    fn separator_id(&self) -> u32 {
        SEPARATOR_ID
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn collapses_whitespace_and_spells_bytes() {
        let t = WhitespaceByteTokenizer::new();
        assert_eq!(t.encode("  hi \n\tyo "), vec![104, 105, 32, 121, 111]);
        assert!(t.encode(" \n ").is_empty());
        assert!(t.encode("é").iter().all(|&id| id > 0 && id < 256));
    }

    #[test]
    fn word_table_takes_priority() {
        let t = WhitespaceByteTokenizer::with_words(["hello", "world", "hello"]);
        assert_eq!(t.vocab_size(), 258);
        assert_eq!(t.encode("hello there world"), {
            let mut v = vec![256, 32];
            v.extend(b"there".iter().map(|&b| b as u32));
            v.extend([32, 257]);
            v
        });
        assert_ne!(t.fingerprint(), WhitespaceByteTokenizer::new().fingerprint());
    }

    #[test]
    fn nul_never_becomes_the_separator() {
        let t = WhitespaceByteTokenizer::new();
        assert_eq!(t.encode("a\0b"), vec![97, 32, 98]);
    }
}
