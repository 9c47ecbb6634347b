use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::{fnv1a, mix64};

const NULL_TOKEN: &str = "<null>";

/// Token ids plus one `d_model`-wide vector per token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptEmbedding {
    tokens: Vec<u64>,
    d_model: usize,
    vectors: Vec<f32>,
}

impl PromptEmbedding {
    pub fn tokens(&self) -> &[u64] {
        &self.tokens
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.d_model..(i + 1) * self.d_model]
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn byte_len(&self) -> usize {
        self.tokens.len() * std::mem::size_of::<u64>() + self.vectors.len() * 4
    }

    /// Embedding of the unconditional (empty) prompt.
    pub fn null(d_model: usize, seed: u64) -> Self {
        Self::from_tokens(&[NULL_TOKEN], d_model, seed)
    }

    fn from_tokens(words: &[&str], d_model: usize, seed: u64) -> Self {
        let mut tokens = Vec::with_capacity(words.len());
        let mut vectors = Vec::with_capacity(words.len() * d_model);
        for word in words {
            let id = fnv1a(word.as_bytes());
            tokens.push(id);
            let mut rng = ChaCha8Rng::seed_from_u64(mix64(id, seed));
            vectors.extend((0..d_model).map(|_| -> f32 { StandardNormal.sample(&mut rng) }));
        }
        Self {
            tokens,
            d_model,
            vectors,
        }
    }
}

/// Lowercase whitespace tokenization; each token's vector comes from a
/// generator seeded by `(hash(token), seed)`.
pub fn embed_prompt(text: &str, d_model: usize, seed: u64) -> Result<PromptEmbedding> {
    let lowered = text.to_lowercase();
    let words: Vec<&str> = lowered.split_whitespace().collect();
    if words.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    Ok(PromptEmbedding::from_tokens(&words, d_model, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_is_deterministic() {
        let a = embed_prompt("A red Mug", 16, 3).unwrap();
        let b = embed_prompt("a red mug", 16, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, embed_prompt("a red mug", 16, 4).unwrap());
    }

    #[test]
    fn per_token_rows() {
        let dog = embed_prompt("a dog", 8, 0).unwrap();
        let cat = embed_prompt("a cat", 8, 0).unwrap();
        assert_eq!(dog.row(0), cat.row(0));
        assert_ne!(dog.row(1), cat.row(1));
        assert_eq!(embed_prompt("a dog sitting", 8, 0).unwrap().len(), 3);
    }

    #[test]
    fn empty_text_is_rejected() {
        assert!(matches!(embed_prompt("   ", 8, 0), Err(Error::EmptyPrompt)));
    }
}
