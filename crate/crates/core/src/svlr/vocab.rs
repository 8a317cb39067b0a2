use std::collections::HashMap;

use crate::error::{Error, Result};

/// Words with frozen base vectors of a common dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    vectors: Vec<Vec<f64>>,
    dim: usize,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(dim: usize) -> Self {
        Vocabulary {
            words: Vec::new(),
            vectors: Vec::new(),
            dim,
            index: HashMap::new(),
        }
    }

    pub fn push(&mut self, word: impl Into<String>, vector: Vec<f64>) -> Result<usize> {
        let word = word.into();
        if word.is_empty() || word.chars().any(char::is_whitespace) {
            return Err(Error::Contract(format!("invalid word `{word}`")));
        }
        if vector.len() != self.dim {
            return Err(Error::shape(
                "vocabulary",
                format!("`{word}` has {} values, expected {}", vector.len(), self.dim),
            ));
        }
        if self.index.contains_key(&word) {
            return Err(Error::Contract(format!("duplicate word `{word}`")));
        }
        let id = self.words.len();
        self.index.insert(word.clone(), id);
        self.words.push(word);
        self.vectors.push(vector);
        Ok(id)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn require(&self, word: &str) -> Result<usize> {
        self.id(word).ok_or_else(|| Error::MissingWord(word.to_string()))
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn vector(&self, id: usize) -> &[f64] {
        &self.vectors[id]
    }

    /// Row-major `len × dim` matrix of all base vectors.
    pub fn matrix(&self) -> Vec<f64> {
        self.vectors.iter().flatten().copied().collect()
    }
}
