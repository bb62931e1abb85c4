use std::collections::HashMap;

use crate::encoders::TokenSequence;

pub const BOS: usize = 0;
pub const EOS: usize = 1;
pub const PAD: usize = 2;
pub const UNK: usize = 3;

const SPECIALS: [&str; 4] = ["<bos>", "<eos>", "<pad>", "<unk>"];

/// Closed whitespace vocabulary; ids 0–3 are the special tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Specials followed by `words` in sorted, de-duplicated order.
    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut sorted: Vec<&str> = words.into_iter().filter(|w| !w.is_empty()).collect();
        sorted.sort_unstable();
        sorted.dedup();
        let words: Vec<String> = SPECIALS
            .iter()
            .copied()
            .chain(sorted.into_iter().filter(|w| !SPECIALS.contains(w)))
            .map(str::to_string)
            .collect();
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocabulary { words, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: usize) -> &str {
        self.words.get(id).map_or("<unk>", String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn encode(&self, text: &str) -> TokenSequence {
        TokenSequence(text.split_whitespace().map(|w| self.id(w)).collect())
    }

    /// `BOS text EOS`.
    pub fn encode_report(&self, text: &str) -> TokenSequence {
        let mut ids = vec![BOS];
        ids.extend(text.split_whitespace().map(|w| self.id(w)));
        ids.push(EOS);
        TokenSequence(ids)
    }

    /// Space-joined words, skipping BOS/EOS/PAD.
    pub fn decode(&self, tokens: &TokenSequence) -> String {
        tokens
            .ids()
            .iter()
            .filter(|&&id| !matches!(id, BOS | EOS | PAD))
            .map(|&id| self.word(id))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_are_fixed_and_words_sorted() {
        let v = Vocabulary::from_words(["zeta", "alpha", "alpha", "mid"]);
        assert_eq!(v.id("<bos>"), BOS);
        assert_eq!(v.id("<eos>"), EOS);
        assert_eq!(v.id("<pad>"), PAD);
        assert_eq!(v.id("<unk>"), UNK);
        assert_eq!(&v.words()[4..], &["alpha", "mid", "zeta"]);
        assert_eq!(v.id("missing"), UNK);
    }

    #[test]
    fn report_encoding_round_trip() {
        let v = Vocabulary::from_words(["no", "edema", "."]);
        let t = v.encode_report("no edema .");
        assert_eq!(t.ids().first(), Some(&BOS));
        assert_eq!(t.ids().last(), Some(&EOS));
        assert_eq!(v.decode(&t), "no edema .");
    }
}
