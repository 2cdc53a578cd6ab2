//! Subword vocabulary and greedy longest-match-first segmentation.
//!
//! The vocabulary file holds one token per line; the zero-based line index is
//! the token id. Non-initial word pieces carry a continuation marker (`##` by
//! default), so `playing` segments as `play ##ing`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub type TokenId = usize;

pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const CLS_TOKEN: &str = "[CLS]";
pub const SEP_TOKEN: &str = "[SEP]";
pub const MASK_TOKEN: &str = "[MASK]";
pub const DEFAULT_CONTINUATION: &str = "##";

/// Words longer than this (in chars) are not segmented and map to `[UNK]`.
const MAX_WORD_CHARS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialIds {
    pub pad: TokenId,
    pub unk: TokenId,
    pub cls: TokenId,
    pub sep: TokenId,
    pub mask: TokenId,
}

impl SpecialIds {
    pub fn contains(&self, id: TokenId) -> bool {
        id == self.pad || id == self.unk || id == self.cls || id == self.sep || id == self.mask
    }
}

#[derive(Debug, Clone)]
pub struct SubwordVocab {
    tokens: Vec<String>,
    id_of: HashMap<String, TokenId>,
    special: SpecialIds,
    continuation_marker: String,
    lowercase: bool,
}

impl SubwordVocab {
    /// Reads a vocabulary file, one token per line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines())
    }

    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut list = Vec::new();
        let mut id_of = HashMap::new();
        for (id, raw) in tokens.into_iter().enumerate() {
            let token = raw.as_ref().trim_end_matches('\r');
            let line = id + 1;
            if token.is_empty() {
                return Err(Error::EmptyToken { line });
            }
            if let Some(&first) = id_of.get(token) {
                return Err(Error::DuplicateToken {
                    token: token.to_string(),
                    line,
                    first: first + 1,
                });
            }
            id_of.insert(token.to_string(), id);
            list.push(token.to_string());
        }
        if list.is_empty() {
            return Err(Error::EmptyVocab);
        }
        let lookup = |name: &str| {
            id_of
                .get(name)
                .copied()
                .ok_or_else(|| Error::MissingSpecialToken(name.to_string()))
        };
        let special = SpecialIds {
            pad: lookup(PAD_TOKEN)?,
            unk: lookup(UNK_TOKEN)?,
            cls: lookup(CLS_TOKEN)?,
            sep: lookup(SEP_TOKEN)?,
            mask: lookup(MASK_TOKEN)?,
        };
        Ok(SubwordVocab {
            tokens: list,
            id_of,
            special,
            continuation_marker: DEFAULT_CONTINUATION.to_string(),
            lowercase: true,
        })
    }

    /// Toggles lowercase normalization of input words (on by default).
    pub fn with_lowercase(mut self, lowercase: bool) -> Self {
        self.lowercase = lowercase;
        self
    }

    pub fn with_continuation_marker(mut self, marker: impl Into<String>) -> Self {
        self.continuation_marker = marker.into();
        self
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn special(&self) -> SpecialIds {
        self.special
    }

    pub fn mask_id(&self) -> TokenId {
        self.special.mask
    }

    pub fn unk_id(&self) -> TokenId {
        self.special.unk
    }

    pub fn continuation_marker(&self) -> &str {
        &self.continuation_marker
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.id_of.get(token).copied()
    }

    pub fn normalize(&self, word: &str) -> String {
        if self.lowercase {
            word.to_lowercase()
        } else {
            word.to_string()
        }
    }

    fn piece_id(&self, piece: &str) -> Option<TokenId> {
        self.id_of
            .get(piece)
            .copied()
            .filter(|&id| !self.special.contains(id))
    }

    /// Segments a single whitespace-free word, longest vocabulary piece first.
    ///
    /// Returns `[unk]` when some suffix of the word cannot be covered.
    pub fn tokenize_word(&self, surface: &str) -> Vec<TokenId> {
        let word = self.normalize(surface);
        if word.is_empty() {
            return Vec::new();
        }
        let bounds: Vec<usize> = word
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(word.len()))
            .collect();
        if bounds.len() - 1 > MAX_WORD_CHARS {
            return vec![self.special.unk];
        }

        let mut pieces = Vec::new();
        let mut start = 0;
        let mut candidate = String::new();
        while start < bounds.len() - 1 {
            let mut found = None;
            for end in (start + 1..bounds.len()).rev() {
                candidate.clear();
                if start > 0 {
                    candidate.push_str(&self.continuation_marker);
                }
                candidate.push_str(&word[bounds[start]..bounds[end]]);
                if let Some(id) = self.piece_id(&candidate) {
                    found = Some((id, end));
                    break;
                }
            }
            match found {
                Some((id, end)) => {
                    pieces.push(id);
                    start = end;
                }
                None => return vec![self.special.unk],
            }
        }
        pieces
    }

    /// Splits on whitespace and punctuation, then segments each word.
    /// Punctuation characters are kept as words of their own.
    pub fn tokenize_text(&self, text: &str) -> Vec<TokenId> {
        split_words(text)
            .into_iter()
            .flat_map(|w| self.tokenize_word(w))
            .collect()
    }

    /// Joins word pieces back into a surface form, stripping continuation
    /// markers from non-initial pieces.
    pub fn detokenize_word(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        for (i, &id) in ids.iter().enumerate() {
            let token = self.token(id).unwrap_or(UNK_TOKEN);
            if i > 0 {
                out.push_str(token.strip_prefix(self.continuation_marker.as_str()).unwrap_or(token));
            } else {
                out.push_str(token);
            }
        }
        out
    }
}

/// Whitespace and punctuation word split used for definitions.
pub fn split_words(text: &str) -> Vec<&str> {
    let mut words = Vec::new();
    for chunk in text.split_whitespace() {
        let mut start = 0;
        for (i, c) in chunk.char_indices() {
            if c.is_ascii_punctuation() || is_unicode_punct(c) {
                if start < i {
                    words.push(&chunk[start..i]);
                }
                words.push(&chunk[i..i + c.len_utf8()]);
                start = i + c.len_utf8();
            }
        }
        if start < chunk.len() {
            words.push(&chunk[start..]);
        }
    }
    words
}

fn is_unicode_punct(c: char) -> bool {
    matches!(
        c,
        '\u{2000}'..='\u{206F}' | '\u{3000}'..='\u{303F}' | '\u{FF00}'..='\u{FF0F}' | '\u{00A1}'..='\u{00BF}'
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> SubwordVocab {
        SubwordVocab::from_tokens([
            "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "play", "##ing", "##er",
        ])
        .unwrap()
    }

    #[test]
    fn line_order_defines_ids() {
        let v = toy();
        assert_eq!(v.len(), 8);
        assert_eq!(v.mask_id(), 4);
        assert_eq!(v.special().cls, 2);
        assert_eq!(v.id("##er"), Some(7));
    }

    #[test]
    fn missing_mask_is_rejected() {
        let err = SubwordVocab::from_tokens(["[PAD]", "[UNK]", "[CLS]", "[SEP]", "play"]).unwrap_err();
        assert!(err.to_string().contains("special token absent"), "{err}");
    }

    #[test]
    fn duplicate_token_reports_lines() {
        let err = SubwordVocab::from_tokens([
            "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "play", "play",
        ])
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("duplicate token"), "{msg}");
        assert!(msg.contains("line 7"), "{msg}");
    }

    #[test]
    fn empty_file_is_rejected() {
        let empty: [&str; 0] = [];
        assert!(matches!(SubwordVocab::from_tokens(empty), Err(Error::EmptyVocab)));
    }

    #[test]
    fn greedy_segmentation() {
        let v = toy();
        assert_eq!(v.tokenize_word("playing"), vec![5, 6]);
        assert_eq!(v.tokenize_word("player"), vec![5, 7]);
        assert_eq!(v.tokenize_word("xyz"), vec![1]);
        assert_eq!(v.tokenize_word("PLAYING"), vec![5, 6]);
        assert_eq!(v.tokenize_word("playx"), vec![1]);
    }

    #[test]
    fn case_sensitive_mode() {
        let v = toy().with_lowercase(false);
        assert_eq!(v.tokenize_word("Playing"), vec![1]);
    }

    #[test]
    fn special_tokens_are_not_pieces() {
        let v = toy().with_lowercase(false);
        assert_eq!(v.tokenize_word("[MASK]"), vec![1]);
    }

    #[test]
    fn text_tokenization() {
        let v = toy();
        assert_eq!(v.tokenize_text("playing player"), vec![5, 6, 5, 7]);
        assert!(v.tokenize_text("").is_empty());
        assert_eq!(v.tokenize_text("xyz playing"), vec![1, 5, 6]);
        assert_eq!(v.tokenize_text("playing, player."), vec![5, 6, 1, 5, 7, 1]);
    }

    #[test]
    fn punctuation_split() {
        assert_eq!(split_words("a room, where food is cooked."), vec![
            "a", "room", ",", "where", "food", "is", "cooked", "."
        ]);
    }

    #[test]
    fn detokenize_round_trip() {
        let v = toy();
        assert_eq!(v.detokenize_word(&v.tokenize_word("player")), "player");
    }
}
