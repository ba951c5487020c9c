use std::collections::HashMap;

pub type TokenId = u32;

/// Out-of-vocabulary words.
pub const UNK: TokenId = 0;
/// End of document; appended to every training sequence.
pub const EOS: TokenId = 1;
/// Context padding before the first token. Never predicted and not part of any vocabulary.
pub const BOS: TokenId = TokenId::MAX;

const UNK_TEXT: &str = "<unk>";
const EOS_TEXT: &str = "</s>";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Default for Vocab {
    fn default() -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        v.insert(UNK_TEXT);
        v.insert(EOS_TEXT);
        v
    }
}

impl Vocab {
    /// Vocabulary of every word in `texts`, ids assigned in first-seen order after the
    /// reserved `<unk>` and `</s>` entries.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Self::default();
        for text in texts {
            for w in split_words(text) {
                v.insert(w);
            }
        }
        v
    }

    pub fn insert(&mut self, word: &str) -> TokenId {
        if let Some(&id) = self.index.get(word) {
            return id;
        }
        let id = self.tokens.len() as TokenId;
        self.tokens.push(word.to_string());
        self.index.insert(word.to_string(), id);
        id
    }

    /// Id for `word`, or [`UNK`].
    pub fn id(&self, word: &str) -> TokenId {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Ordered token ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct TokenSeq(Vec<TokenId>);

impl TokenSeq {
    pub fn new(tokens: Vec<TokenId>) -> Self {
        Self(tokens)
    }

    pub fn as_slice(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn concat(&self, other: &TokenSeq) -> TokenSeq {
        TokenSeq(self.0.iter().chain(&other.0).copied().collect())
    }

    pub fn into_inner(self) -> Vec<TokenId> {
        self.0
    }
}

impl From<Vec<TokenId>> for TokenSeq {
    fn from(v: Vec<TokenId>) -> Self {
        Self(v)
    }
}

/// Words are maximal runs of alphanumeric characters (plus a few intra-word joiners);
/// every other non-space character is its own token.
pub fn split_words(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        let wordy = c.is_alphanumeric() || c == '_' || c == '\'';
        if wordy {
            start.get_or_insert(i);
            continue;
        }
        if let Some(s) = start.take() {
            out.push(&text[s..i]);
        }
        if !c.is_whitespace() {
            out.push(&text[i..i + c.len_utf8()]);
        }
    }
    if let Some(s) = start {
        out.push(&text[s..]);
    }
    out
}

pub fn tokenize(text: &str, vocab: &Vocab) -> TokenSeq {
    TokenSeq(split_words(text).into_iter().map(|w| vocab.id(w)).collect())
}

/// Space-joined token strings; ids outside the vocabulary render as `<unk>`.
pub fn detokenize(seq: &TokenSeq, vocab: &Vocab) -> String {
    seq.0
        .iter()
        .map(|&t| vocab.token(t).unwrap_or(UNK_TEXT))
        .collect::<Vec<_>>()
        .join(" ")
}

/// One document per non-blank line.
pub fn read_corpus(text: &str) -> Vec<&str> {
    text.lines().map(str::trim).filter(|l| !l.is_empty()).collect()
}
