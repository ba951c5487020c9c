use std::collections::HashMap;

use super::vocab::{TokenId, TokenSeq, BOS, EOS};
use super::{check_tokens, LanguageModel, ProbeError};

/// Fixed-order Markov model with add-k smoothing:
/// `p(t | ctx) = (count(ctx, t) + k) / (count(ctx) + k * V)` where `ctx` is the previous
/// `order - 1` tokens, padded on the left with [`BOS`].
#[derive(Debug, Clone, PartialEq)]
pub struct NgramModel {
    order: usize,
    vocab_size: usize,
    smoothing_k: f64,
    counts: HashMap<Vec<TokenId>, HashMap<TokenId, u64>>,
    totals: HashMap<Vec<TokenId>, u64>,
}

/// Counts every `order`-length window of each sequence (with [`EOS`] appended).
pub fn train_ngram(
    corpus: &[TokenSeq],
    vocab_size: usize,
    order: usize,
    smoothing_k: f64,
) -> Result<NgramModel, ProbeError> {
    if corpus.is_empty() || corpus.iter().all(TokenSeq::is_empty) {
        return Err(ProbeError::EmptyCorpus);
    }
    if order == 0 {
        return Err(ProbeError::InvalidOrder);
    }
    if !(smoothing_k > 0.0 && smoothing_k.is_finite()) {
        return Err(ProbeError::InvalidSmoothing(smoothing_k));
    }
    let vocab_size = vocab_size.max(EOS as usize + 1);
    let mut model = NgramModel {
        order,
        vocab_size,
        smoothing_k,
        counts: HashMap::new(),
        totals: HashMap::new(),
    };
    for seq in corpus.iter().filter(|s| !s.is_empty()) {
        check_tokens(seq.as_slice(), vocab_size)?;
        let mut tokens = seq.as_slice().to_vec();
        tokens.push(EOS);
        for i in 0..tokens.len() {
            let ctx = model.context_key(&tokens[..i]);
            *model.counts.entry(ctx.clone()).or_default().entry(tokens[i]).or_default() += 1;
            *model.totals.entry(ctx).or_default() += 1;
        }
    }
    Ok(model)
}

impl NgramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing_k(&self) -> f64 {
        self.smoothing_k
    }

    /// Last `order - 1` tokens of `history`, left-padded with [`BOS`].
    pub fn context_key(&self, history: &[TokenId]) -> Vec<TokenId> {
        let width = self.order - 1;
        let take = history.len().min(width);
        let mut key = vec![BOS; width - take];
        key.extend_from_slice(&history[history.len() - take..]);
        key
    }

    pub fn count(&self, context: &[TokenId], token: TokenId) -> u64 {
        self.counts
            .get(context)
            .and_then(|m| m.get(&token))
            .copied()
            .unwrap_or(0)
    }

    pub fn context_total(&self, context: &[TokenId]) -> u64 {
        self.totals.get(context).copied().unwrap_or(0)
    }

    /// Contexts seen in training.
    pub fn contexts(&self) -> impl Iterator<Item = &[TokenId]> {
        self.totals.keys().map(Vec::as_slice)
    }

    pub fn prob(&self, history: &[TokenId], token: TokenId) -> f64 {
        let key = self.context_key(history);
        let denom = self.context_total(&key) as f64 + self.smoothing_k * self.vocab_size as f64;
        (self.count(&key, token) as f64 + self.smoothing_k) / denom
    }

    pub fn distribution(&self, history: &[TokenId]) -> Vec<f64> {
        let key = self.context_key(history);
        let denom = self.context_total(&key) as f64 + self.smoothing_k * self.vocab_size as f64;
        let mut out = vec![self.smoothing_k / denom; self.vocab_size];
        if let Some(row) = self.counts.get(&key) {
            for (&t, &c) in row {
                out[t as usize] = (c as f64 + self.smoothing_k) / denom;
            }
        }
        out
    }
}

impl LanguageModel for NgramModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_token_logprobs(&self, context: &[TokenId]) -> Result<Vec<f64>, ProbeError> {
        Ok(self.distribution(context).into_iter().map(f64::ln).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::super::{tokenize, Vocab};
    use super::*;

    fn model(text: &str, order: usize, k: f64) -> (Vocab, NgramModel) {
        let vocab = Vocab::build([text]);
        let m = train_ngram(&[tokenize(text, &vocab)], vocab.len(), order, k).unwrap();
        (vocab, m)
    }

    #[test]
    fn bigram_counts() {
        let k = 0.5;
        let (vocab, m) = model("a b a b", 2, k);
        let (a, b) = (vocab.id("a"), vocab.id("b"));
        let v = vocab.len() as f64;
        assert_eq!(m.prob(&[a], b), (2.0 + k) / (2.0 + k * v));
        // b is followed by a once and by </s> once
        assert_eq!(m.prob(&[b], EOS), (1.0 + k) / (2.0 + k * v));
    }

    #[test]
    fn unigram_ignores_context() {
        let (vocab, m) = model("a b a c", 1, 0.1);
        let (a, b) = (vocab.id("a"), vocab.id("b"));
        assert_eq!(m.prob(&[], a), m.prob(&[b, b, b], a));
        assert_eq!(m.context_key(&[a, b]), Vec::<TokenId>::new());
    }

    #[test]
    fn unseen_context_is_uniform() {
        let (vocab, m) = model("a b", 3, 0.01);
        let c = vocab.id("b");
        let dist = m.distribution(&[c, c]);
        let v = vocab.len() as f64;
        assert!(dist.iter().all(|p| (p - 1.0 / v).abs() < 1e-15));
    }

    #[test]
    fn context_padding() {
        let (vocab, m) = model("a b c", 3, 0.01);
        let a = vocab.id("a");
        assert_eq!(m.context_key(&[]), vec![BOS, BOS]);
        assert_eq!(m.context_key(&[a]), vec![BOS, a]);
    }

    #[test]
    fn training_errors() {
        assert_eq!(train_ngram(&[], 5, 2, 0.1), Err(ProbeError::EmptyCorpus));
        assert_eq!(train_ngram(&[TokenSeq::default()], 5, 2, 0.1), Err(ProbeError::EmptyCorpus));
        let s = TokenSeq::new(vec![2, 3]);
        assert_eq!(train_ngram(std::slice::from_ref(&s), 5, 0, 0.1), Err(ProbeError::InvalidOrder));
        assert_eq!(train_ngram(std::slice::from_ref(&s), 5, 2, 0.0), Err(ProbeError::InvalidSmoothing(0.0)));
        assert!(matches!(
            train_ngram(&[TokenSeq::new(vec![7])], 5, 2, 0.1),
            Err(ProbeError::TokenOutOfRange { token: 7, .. })
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn distributions_normalize(
                docs in prop::collection::vec(prop::collection::vec(2u32..8, 1..12), 1..5),
                order in 1usize..4,
                k in 0.001f64..2.0,
                probe in prop::collection::vec(0u32..8, 0..5),
            ) {
                let corpus: Vec<TokenSeq> = docs.into_iter().map(TokenSeq::new).collect();
                let m = train_ngram(&corpus, 8, order, k).unwrap();
                let sum: f64 = m.distribution(&probe).iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-9);
                for ctx in m.contexts() {
                    let key = ctx.to_vec();
                    let denom = m.context_total(&key) as f64 + k * 8.0;
                    let s: f64 = (0..8).map(|t| (m.count(&key, t) as f64 + k) / denom).sum();
                    prop_assert!((s - 1.0).abs() < 1e-9);
                }
                if !probe.is_empty() {
                    let lp = super::super::super::sequence_logprob(&m, &TokenSeq::new(probe.clone())).unwrap();
                    prop_assert!(lp <= 0.0);
                }
            }
        }
    }
}
