//! Prompt-conditioned knowledge probing with an autoregressive language model.
//!
//! Any backend that can produce a next-token log-probability vector for a context
//! implements [`LanguageModel`]; sequence scoring and greedy decoding are written against
//! that trait. [`NgramModel`] is the in-process reference backend and [`StreamBackend`]
//! drives an external model over a line-delimited JSON protocol.

mod backend;
mod ngram;
mod prompt;
mod vocab;

pub use backend::{serve_model, BackendRequest, BackendResponse, ProcessBackend, StreamBackend};
pub use ngram::{train_ngram, NgramModel};
pub use prompt::{build_prompt, PromptTemplate};
pub use vocab::{detokenize, read_corpus, split_words, tokenize, TokenId, TokenSeq, Vocab, BOS, EOS, UNK};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ProbeError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("order must be >= 1")]
    InvalidOrder,
    #[error("smoothing k must be finite and > 0, got {0}")]
    InvalidSmoothing(f64),
    #[error("sequence is empty")]
    EmptySequence,
    #[error("question must not be empty")]
    EmptyQuestion,
    #[error("max_new must be >= 1")]
    ZeroMaxNew,
    #[error("token id {token} outside vocabulary of {vocab_size}")]
    TokenOutOfRange { token: TokenId, vocab_size: usize },
    #[error("backend: {0}")]
    Backend(String),
}

/// Next-token distribution given a left context.
pub trait LanguageModel {
    fn vocab_size(&self) -> usize;

    /// Natural-log probabilities for every token id `0..vocab_size`.
    fn next_token_logprobs(&self, context: &[TokenId]) -> Result<Vec<f64>, ProbeError>;

    /// Token that ends generation, if the model has one.
    fn eos(&self) -> Option<TokenId> {
        Some(EOS)
    }
}

fn check_tokens(tokens: &[TokenId], vocab_size: usize) -> Result<(), ProbeError> {
    match tokens.iter().find(|t| (**t as usize) >= vocab_size) {
        Some(&token) => Err(ProbeError::TokenOutOfRange { token, vocab_size }),
        None => Ok(()),
    }
}

pub fn next_token_logprob<M: LanguageModel + ?Sized>(
    model: &M,
    context: &[TokenId],
    token: TokenId,
) -> Result<f64, ProbeError> {
    check_tokens(&[token], model.vocab_size())?;
    Ok(model.next_token_logprobs(context)?[token as usize])
}

/// `sum_i log p(x_i | x_1..x_{i-1})`.
pub fn sequence_logprob<M: LanguageModel + ?Sized>(model: &M, seq: &TokenSeq) -> Result<f64, ProbeError> {
    if seq.is_empty() {
        return Err(ProbeError::EmptySequence);
    }
    check_tokens(seq.as_slice(), model.vocab_size())?;
    let tokens = seq.as_slice();
    let mut total = 0.0;
    for i in 0..tokens.len() {
        total += model.next_token_logprobs(&tokens[..i])?[tokens[i] as usize];
    }
    Ok(total)
}

/// `log p(continuation | prompt)`.
pub fn continuation_logprob<M: LanguageModel + ?Sized>(
    model: &M,
    prompt: &TokenSeq,
    continuation: &TokenSeq,
) -> Result<f64, ProbeError> {
    let mut context = prompt.as_slice().to_vec();
    let mut total = 0.0;
    for &t in continuation.as_slice() {
        total += next_token_logprob(model, &context, t)?;
        context.push(t);
    }
    Ok(total)
}

fn argmax(logprobs: &[f64]) -> Option<TokenId> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &lp) in logprobs.iter().enumerate() {
        if best.is_none_or(|(_, b)| lp > b) {
            best = Some((i, lp));
        }
    }
    best.map(|(i, _)| i as TokenId)
}

/// Appends the most probable next token (lowest id on ties) up to `max_new` times or until
/// the model's end token. Returns only the new tokens.
pub fn generate_greedy<M: LanguageModel + ?Sized>(
    model: &M,
    prompt: &TokenSeq,
    max_new: usize,
) -> Result<TokenSeq, ProbeError> {
    if max_new == 0 {
        return Err(ProbeError::ZeroMaxNew);
    }
    check_tokens(prompt.as_slice(), model.vocab_size())?;
    let mut context = prompt.as_slice().to_vec();
    let mut out = Vec::new();
    for _ in 0..max_new {
        let lp = model.next_token_logprobs(&context)?;
        let next = argmax(&lp).ok_or_else(|| ProbeError::Backend("empty distribution".into()))?;
        if Some(next) == model.eos() {
            break;
        }
        context.push(next);
        out.push(next);
    }
    Ok(TokenSeq::new(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus_model(lines: &[&str], order: usize, k: f64) -> (Vocab, NgramModel) {
        let vocab = Vocab::build(lines.iter().copied());
        let seqs: Vec<TokenSeq> = lines.iter().map(|l| tokenize(l, &vocab)).collect();
        let model = train_ngram(&seqs, vocab.len(), order, k).unwrap();
        (vocab, model)
    }

    #[test]
    fn logprob_single_token_and_identity() {
        let (vocab, model) = corpus_model(&["a b a b", "b a c"], 2, 0.1);
        let seq = tokenize("a", &vocab);
        let expected = next_token_logprob(&model, &[], vocab.id("a")).unwrap();
        assert_eq!(sequence_logprob(&model, &seq).unwrap(), expected);

        let seq = tokenize("a b c a", &vocab);
        let mut stepwise = 0.0;
        for i in 0..seq.len() {
            stepwise += next_token_logprob(&model, &seq.as_slice()[..i], seq.as_slice()[i]).unwrap();
        }
        assert!((sequence_logprob(&model, &seq).unwrap() - stepwise).abs() < 1e-12);
        assert_eq!(sequence_logprob(&model, &TokenSeq::default()), Err(ProbeError::EmptySequence));
    }

    #[test]
    fn deterministic_corpus_logprob_concentrates_on_first_term() {
        let text = std::iter::repeat_n("a b", 500).collect::<Vec<_>>().join(" ");
        let (vocab, model) = corpus_model(&[text.as_str()], 2, 1e-9);
        let seq = tokenize("a b a b", &vocab);
        let first = next_token_logprob(&model, &[], vocab.id("a")).unwrap();
        let total = sequence_logprob(&model, &seq).unwrap();
        assert!((total - first).abs() < 1e-2, "{total} vs {first}");
    }

    #[test]
    fn greedy_forced_continuation() {
        let (vocab, model) = corpus_model(&["a b c a b d a b"], 2, 0.01);
        let out = generate_greedy(&model, &tokenize("a", &vocab), 1).unwrap();
        assert_eq!(out.as_slice(), &[vocab.id("b")]);
        assert_eq!(generate_greedy(&model, &tokenize("a", &vocab), 0), Err(ProbeError::ZeroMaxNew));
    }

    #[test]
    fn unigram_repeats_most_frequent() {
        let (vocab, model) = corpus_model(&["x y x z x", "x q x"], 1, 0.01);
        let out = generate_greedy(&model, &tokenize("q", &vocab), 5).unwrap();
        assert_eq!(out.as_slice(), &[vocab.id("x"); 5]);
    }

    #[test]
    fn greedy_stops_at_end_token() {
        let (vocab, model) = corpus_model(&["stop now", "stop now", "go on"], 2, 0.01);
        let out = generate_greedy(&model, &tokenize("stop", &vocab), 10).unwrap();
        assert_eq!(out.as_slice(), &[vocab.id("now")]);
    }

    #[test]
    fn out_of_range_tokens_rejected() {
        let (_, model) = corpus_model(&["a b"], 2, 0.1);
        let bad = TokenSeq::new(vec![999]);
        assert!(matches!(
            sequence_logprob(&model, &bad),
            Err(ProbeError::TokenOutOfRange { token: 999, .. })
        ));
        assert!(generate_greedy(&model, &bad, 1).is_err());
    }

    #[test]
    fn continuation_logprob_is_conditional() {
        let (vocab, model) = corpus_model(&["a b c", "a c b"], 2, 0.1);
        let prompt = tokenize("a", &vocab);
        let cont = tokenize("b c", &vocab);
        let joint = sequence_logprob(&model, &tokenize("a b c", &vocab)).unwrap();
        let head = sequence_logprob(&model, &prompt).unwrap();
        assert!((continuation_logprob(&model, &prompt, &cont).unwrap() - (joint - head)).abs() < 1e-12);
    }
}
