//! Caption text and its tokenized form.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::rng::content_hash;

/// An image description: the original string plus lowercased,
/// whitespace-split tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Caption {
    raw: String,
    tokens: Vec<String>,
}

impl Caption {
    pub fn parse(raw: &str) -> Result<Self> {
        let tokens: Vec<String> = raw.split_whitespace().map(|t| t.to_lowercase()).collect();
        if tokens.is_empty() {
            return Err(Error::EmptyInput("caption has no tokens".into()));
        }
        Ok(Self { raw: raw.to_string(), tokens })
    }

    /// Rebuilds a caption from tokens (used by text perturbations). The raw
    /// string is the tokens joined by single spaces.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("caption has no tokens".into()));
        }
        let raw = tokens.join(" ");
        Ok(Self { raw, tokens })
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Distinct tokens in sorted order.
    pub fn bag(&self) -> BTreeSet<&str> {
        self.tokens.iter().map(String::as_str).collect()
    }

    /// Stable 64-bit hash of the bag of words. Order-insensitive by
    /// construction: tokens are deduplicated and sorted before hashing.
    pub fn bag_hash(&self) -> u64 {
        let mut joined = Vec::new();
        for (i, token) in self.bag().iter().enumerate() {
            if i > 0 {
                joined.push(0x1f);
            }
            joined.extend_from_slice(token.as_bytes());
        }
        content_hash(&joined)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenization_lowercases_and_splits() {
        let cap = Caption::parse("A Red  Square\n on gray").unwrap();
        assert_eq!(cap.tokens(), &["a", "red", "square", "on", "gray"]);
        assert_eq!(cap.raw(), "A Red  Square\n on gray");
    }

    #[test]
    fn empty_caption_is_rejected() {
        assert!(Caption::parse("   ").is_err());
    }

    #[test]
    fn bag_hash_ignores_order_and_repeats() {
        let a = Caption::parse("red square red").unwrap();
        let b = Caption::parse("square red").unwrap();
        let c = Caption::parse("square blue").unwrap();
        assert_eq!(a.bag_hash(), b.bag_hash());
        assert_ne!(a.bag_hash(), c.bag_hash());
    }
}
