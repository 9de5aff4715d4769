use std::collections::HashMap;
use std::path::Path;

use super::{BackendError, TokenId, TokenSpan, Tokenization};

/// A fixed token table with greedy longest-match tokenization.
///
/// Matching works on whole characters, so spans always fall on UTF-8
/// boundaries and concatenate back to the input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    max_chars: usize,
}

impl Vocab {
    /// Builds a vocabulary where `tokens[i]` has id `i`.
    pub fn new(tokens: Vec<String>) -> Result<Self, BackendError> {
        let mut index = HashMap::with_capacity(tokens.len());
        let mut max_chars = 0;
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(BackendError::InvalidDistribution(format!(
                    "duplicate vocabulary entry {t:?}"
                )));
            }
            max_chars = max_chars.max(t.chars().count());
        }
        Ok(Self {
            tokens,
            index,
            max_chars,
        })
    }

    /// Word-level vocabulary covering every piece of the given texts.
    ///
    /// Pieces are maximal alphanumeric runs with their leading space, other
    /// whitespace runs, and every single character. Ids follow sorted
    /// piece order, after any `reserved` entries.
    pub fn from_corpus<'a>(
        reserved: &[&str],
        texts: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self, BackendError> {
        let mut pieces = std::collections::BTreeSet::new();
        for text in texts {
            for (start, end) in word_pieces(text) {
                pieces.insert(text[start..end].to_string());
            }
            // single characters keep longest-match tokenization total when
            // a long piece swallows the start of the next one
            pieces.extend(text.chars().map(String::from));
        }
        let mut tokens: Vec<String> = reserved.iter().map(|s| s.to_string()).collect();
        tokens.extend(pieces.into_iter().filter(|p| !reserved.contains(&p.as_str())));
        Self::new(tokens)
    }

    /// Reads a JSON array of token strings.
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let raw = std::fs::read_to_string(path)?;
        let tokens: Vec<String> = serde_json::from_str(&raw).map_err(|e| BackendError::FixtureParse {
            line: e.line(),
            message: e.to_string(),
        })?;
        Self::new(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn text(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokenize(&self, text: &str) -> Result<Tokenization, BackendError> {
        let mut spans = Vec::new();
        let mut pos = 0;
        while pos < text.len() {
            let rest = &text[pos..];
            let mut found = None;
            // longest candidate first
            let ends: Vec<usize> = rest
                .char_indices()
                .skip(1)
                .map(|(i, _)| i)
                .chain(std::iter::once(rest.len()))
                .take(self.max_chars)
                .collect();
            for &end in ends.iter().rev() {
                if let Some(&id) = self.index.get(&rest[..end]) {
                    found = Some((id, end));
                    break;
                }
            }
            let Some((id, len)) = found else {
                return Err(BackendError::Untokenizable {
                    byte: pos,
                    reason: format!("no vocabulary entry matches {:?}", rest.chars().next().unwrap_or_default()),
                });
            };
            spans.push(TokenSpan {
                id,
                text: rest[..len].to_string(),
                byte_start: pos,
                byte_end: pos + len,
            });
            pos += len;
        }
        Ok(Tokenization {
            spans,
            normalized: false,
        })
    }
}

/// Byte ranges of word-level pieces.
pub(crate) fn word_pieces(text: &str) -> Vec<(usize, usize)> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let end_of = |i: usize| chars.get(i).map_or(text.len(), |c| c.0);
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let start = chars[i].0;
        let c = chars[i].1;
        let mut j = i + 1;
        if c == ' ' && chars.get(j).is_some_and(|c| c.1.is_alphanumeric()) {
            while chars.get(j).is_some_and(|c| c.1.is_alphanumeric()) {
                j += 1;
            }
        } else if c.is_alphanumeric() {
            while chars.get(j).is_some_and(|c| c.1.is_alphanumeric()) {
                j += 1;
            }
        } else if c.is_whitespace() {
            while chars
                .get(j)
                .is_some_and(|n| n.1.is_whitespace() && !(n.1 == ' ' && chars.get(j + 1).is_some_and(|m| m.1.is_alphanumeric())))
            {
                j += 1;
            }
        }
        out.push((start, end_of(j)));
        i = j;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whitespace_table() {
        let v = Vocab::new(vec!["a".into(), " ".into(), "b".into()]).unwrap();
        let t = v.tokenize("a b").unwrap();
        let got: Vec<_> = t.spans.iter().map(|s| (s.id, s.byte_start, s.byte_end)).collect();
        assert_eq!(got, vec![(0, 0, 1), (1, 1, 2), (2, 2, 3)]);
        assert!(v.tokenize("").unwrap().spans.is_empty());
    }

    #[test]
    fn longest_match_wins() {
        let v = Vocab::new(vec!["a".into(), "ab".into(), "b".into(), "abc".into()]).unwrap();
        let ids: Vec<_> = v.tokenize("abab").unwrap().spans.iter().map(|s| s.id).collect();
        assert_eq!(ids, vec![1, 1]);
    }

    #[test]
    fn unknown_character_is_reported() {
        let v = Vocab::new(vec!["a".into()]).unwrap();
        match v.tokenize("aé") {
            Err(BackendError::Untokenizable { byte, .. }) => assert_eq!(byte, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn corpus_pieces_attach_leading_space() {
        let text = "Dr. Smith  came,\n\nhome";
        let pieces: Vec<&str> = word_pieces(text).into_iter().map(|(s, e)| &text[s..e]).collect();
        assert_eq!(pieces, vec!["Dr", ".", " Smith", " ", " came", ",", "\n\n", "home"]);
        let v = Vocab::from_corpus(&["<bos>"], [text]).unwrap();
        assert_eq!(v.id("<bos>"), Some(0));
        let t = v.tokenize(text).unwrap();
        assert_eq!(super::super::detokenize(&t.spans), text);
    }
}
