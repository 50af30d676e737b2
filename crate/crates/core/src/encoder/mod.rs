//! Contextual embeddings: tokenization, the seeded toy transformer, and the
//! JSON-lines interchange used to ingest embeddings exported from real models.

mod interchange;
mod toy;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{PlexError, Result};
use crate::numerics::{euclidean, Matrix, Vector};

pub use interchange::{
    load_embeddings, read_embeddings, save_embeddings, write_embeddings, EmbeddingReader,
};
pub use toy::{ToyEncoder, ToyEncoderConfig, MASK_TOKEN};

/// A sentence split into tokens, with each word owning one or more tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedSentence {
    pub id: String,
    pub tokens: Vec<String>,
    /// `word_map[w]` lists the token indices that make up word `w`.
    pub word_map: Vec<Vec<usize>>,
    pub label: Option<usize>,
}

impl TokenizedSentence {
    /// One token per word.
    pub fn from_words(id: impl Into<String>, words: Vec<String>) -> Result<Self> {
        let n = words.len();
        TokenizedSentence::new(id, words, (0..n).map(|i| vec![i]).collect())
    }

    pub fn new(
        id: impl Into<String>,
        tokens: Vec<String>,
        word_map: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let id = id.into();
        validate_alignment(&id, tokens.len(), &word_map)?;
        Ok(TokenizedSentence {
            id,
            tokens,
            word_map,
            label: None,
        })
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn word_count(&self) -> usize {
        self.word_map.len()
    }

    /// Surface form of each word, rebuilt from its tokens.
    pub fn words(&self) -> Vec<String> {
        words_from_tokens(&self.tokens, &self.word_map)
    }

    /// Keep only the words whose mask bit is set. Token indices are
    /// renumbered; the result may have zero words.
    pub fn retain_words(&self, keep: &[bool]) -> Result<TokenizedSentence> {
        if keep.len() != self.word_count() {
            return Err(PlexError::shape("keep mask", self.word_count(), keep.len()));
        }
        let mut tokens = Vec::new();
        let mut word_map = Vec::new();
        for (group, _) in self.word_map.iter().zip(keep).filter(|(_, &k)| k) {
            let start = tokens.len();
            tokens.extend(group.iter().map(|&t| self.tokens[t].clone()));
            word_map.push((start..tokens.len()).collect());
        }
        Ok(TokenizedSentence {
            id: self.id.clone(),
            tokens,
            word_map,
            label: self.label,
        })
    }

    /// Replace every token of a masked-out word with `replacement`.
    pub fn substitute_words(&self, keep: &[bool], replacement: &str) -> Result<TokenizedSentence> {
        if keep.len() != self.word_count() {
            return Err(PlexError::shape("keep mask", self.word_count(), keep.len()));
        }
        let mut out = self.clone();
        for (group, _) in self.word_map.iter().zip(keep).filter(|(_, &k)| !k) {
            for &t in group {
                out.tokens[t] = replacement.to_string();
            }
        }
        Ok(out)
    }
}

pub(crate) fn validate_alignment(id: &str, n_tokens: usize, word_map: &[Vec<usize>]) -> Result<()> {
    let invalid = |message: String| PlexError::InvalidRecord {
        id: id.to_string(),
        message,
    };
    let mut seen = vec![false; n_tokens];
    for (w, group) in word_map.iter().enumerate() {
        if group.is_empty() {
            return Err(invalid(format!("word {w} owns no tokens")));
        }
        for &t in group {
            if t >= n_tokens {
                return Err(invalid(format!(
                    "word {w} references token {t} of {n_tokens}"
                )));
            }
            if std::mem::replace(&mut seen[t], true) {
                return Err(invalid(format!("token {t} is owned by more than one word")));
            }
        }
    }
    if let Some(t) = seen.iter().position(|s| !s) {
        return Err(invalid(format!("token {t} is not owned by any word")));
    }
    Ok(())
}

fn words_from_tokens(tokens: &[String], word_map: &[Vec<usize>]) -> Vec<String> {
    word_map
        .iter()
        .map(|group| {
            group
                .iter()
                .map(|&t| {
                    let tok = tokens[t].as_str();
                    tok.strip_prefix("##")
                        .or_else(|| tok.strip_prefix('\u{0120}'))
                        .or_else(|| tok.strip_prefix('\u{2581}'))
                        .unwrap_or(tok)
                })
                .collect::<String>()
        })
        .collect()
}

/// Lowercase, strip punctuation, split on whitespace. One token per word.
pub fn tokenize(text: &str) -> Result<TokenizedSentence> {
    let words: Vec<String> = text
        .split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|w| !w.is_empty())
        .collect();
    if words.is_empty() {
        return Err(PlexError::Empty("sentence text"));
    }
    TokenizedSentence::from_words("", words)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerEmbedding {
    pub cls: Vector,
    pub words: Vec<Vector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMeta {
    pub dim: usize,
    pub model: String,
}

/// Final-layer CLS and per-word vectors for one sentence, optionally with
/// every intermediate layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub id: String,
    pub tokens: Vec<String>,
    pub word_map: Vec<Vec<usize>>,
    pub label: Option<usize>,
    pub cls: Vector,
    pub words: Vec<Vector>,
    pub layers: BTreeMap<usize, LayerEmbedding>,
    /// Class distribution reported by the exporter, when present.
    pub probs: Option<Vec<f64>>,
    pub meta: EmbeddingMeta,
}

impl EmbeddingSet {
    pub fn dim(&self) -> usize {
        self.meta.dim
    }

    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    pub fn word_strings(&self) -> Vec<String> {
        words_from_tokens(&self.tokens, &self.word_map)
    }

    pub fn sentence(&self) -> TokenizedSentence {
        TokenizedSentence {
            id: self.id.clone(),
            tokens: self.tokens.clone(),
            word_map: self.word_map.clone(),
            label: self.label,
        }
    }

    pub fn without_layers(mut self) -> Self {
        self.layers.clear();
        self
    }
}

/// Anything that turns a tokenized sentence into contextual embeddings.
pub trait Encoder: Sync {
    fn dim(&self) -> usize;
    fn encode(&self, sentence: &TokenizedSentence) -> Result<EmbeddingSet>;

    /// Multiply-adds of one forward pass over `tokens` tokens, if known.
    fn mul_adds_per_pass(&self, _tokens: usize) -> Option<u64> {
        None
    }
}

impl<E: Encoder + ?Sized> Encoder for &E {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn encode(&self, sentence: &TokenizedSentence) -> Result<EmbeddingSet> {
        (**self).encode(sentence)
    }
    fn mul_adds_per_pass(&self, tokens: usize) -> Option<u64> {
        (**self).mul_adds_per_pass(tokens)
    }
}

/// Encoder wrapper that counts forward passes.
#[derive(Debug)]
pub struct Counted<E> {
    inner: E,
    passes: AtomicU64,
}

impl<E> Counted<E> {
    pub fn new(inner: E) -> Self {
        Counted {
            inner,
            passes: AtomicU64::new(0),
        }
    }

    pub fn passes(&self) -> u64 {
        self.passes.load(Ordering::SeqCst)
    }

    pub fn reset(&self) -> u64 {
        self.passes.swap(0, Ordering::SeqCst)
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }
}

impl<E: Encoder> Encoder for Counted<E> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn encode(&self, sentence: &TokenizedSentence) -> Result<EmbeddingSet> {
        self.passes.fetch_add(1, Ordering::SeqCst);
        self.inner.encode(sentence)
    }
    fn mul_adds_per_pass(&self, tokens: usize) -> Option<u64> {
        self.inner.mul_adds_per_pass(tokens)
    }
}

/// Euclidean distance from each layer's CLS vector to each of its word
/// vectors. Rows follow ascending layer index.
pub fn layer_distance_matrix(e: &EmbeddingSet) -> Result<Matrix> {
    if e.layers.is_empty() {
        return Err(PlexError::InvalidInput(format!(
            "sentence {} carries no per-layer embeddings",
            e.id
        )));
    }
    let n_words = e.word_count();
    let mut data = Vec::with_capacity(e.layers.len() * n_words);
    for (layer, emb) in &e.layers {
        if emb.words.len() != n_words {
            return Err(PlexError::InvalidRecord {
                id: e.id.clone(),
                message: format!(
                    "layer {layer} has {} words, expected {n_words}",
                    emb.words.len()
                ),
            });
        }
        for w in &emb.words {
            data.push(euclidean(&emb.cls, w)?);
        }
    }
    Matrix::new(e.layers.len(), n_words, data)
}
